//! Point estimators of the population mean μ from plug-in nuisance values.
//!
//! Every function takes the response indicator `t`, outcomes `y` (entries
//! where `t` is false are never read), and whichever of the fitted
//! propensities `pi` and outcome predictions `m` it needs.

use crate::error::{Error, Result};
use crate::models::{fit_outcome, BasisSpec, Dataset, FitMode, FittedOutcome};
use crate::numkernel::{least_squares, DesignMatrix};

/// Relative tolerance for the WLS/SRR collapse μ̂ = mean(m̂).
pub const COLLAPSE_TOL: f64 = 1e-10;

/// A point estimate and the scalars that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub name: String,
    pub estimate: f64,
    pub n: usize,
    /// γ̂ for the bias-corrected family (0 for BC-OLS, WLS, SRR).
    pub gamma: Option<f64>,
    /// ĉ for the constant-h IPW estimators.
    pub constant: Option<f64>,
    /// |μ̂ − mean(m̂)| / max(1, |μ̂|) for WLS and SRR.
    pub collapse_gap: Option<f64>,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    pub fn new(name: impl Into<String>, estimate: f64, n: usize) -> Self {
        Self {
            name: name.into(),
            estimate,
            n,
            gamma: None,
            constant: None,
            collapse_gap: None,
            warnings: Vec::new(),
        }
    }
}

/// Constant-h IPW variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstVariant {
    /// h = −E[y(1 − π)]/E[1 − π].
    Nr,
    /// h = −E[y(1 − π)/π]/E[(1 − π)/π], the variance-minimizing constant.
    Opt,
}

/// Weighting schemes for γ̂.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GammaVariant {
    /// weights t/π̂
    Pop,
    /// weights t(1 − π̂)/π̂
    Nr,
    /// weights t(1 − π̂)/π̂²
    Opt,
}

/// Bias-corrected regression estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BcVariant {
    Ols,
    Pop,
    Nr,
    Opt,
}

impl BcVariant {
    pub const ALL: [BcVariant; 4] = [BcVariant::Ols, BcVariant::Pop, BcVariant::Nr, BcVariant::Opt];

    pub fn name(self) -> &'static str {
        match self {
            BcVariant::Ols => "bc_ols",
            BcVariant::Pop => "bc_pop",
            BcVariant::Nr => "bc_nr",
            BcVariant::Opt => "bc_opt",
        }
    }

    fn gamma_variant(self) -> Option<GammaVariant> {
        match self {
            BcVariant::Ols => None,
            BcVariant::Pop => Some(GammaVariant::Pop),
            BcVariant::Nr => Some(GammaVariant::Nr),
            BcVariant::Opt => Some(GammaVariant::Opt),
        }
    }
}

/// Propensity used inside n⁻¹ Σ [t y/π − (t − π) m̂/π].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PiMode {
    Fitted,
    One,
    /// The π → ∞ limit, n⁻¹ Σ m̂.
    Infinity,
    /// (1 − λ) π̂ + λ p̄ with p̄ the observed response rate.
    Shrunk(f64),
}

/// Index-order average; every estimator averages through here so that
/// algebraically equal estimators agree bit for bit.
fn average(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.fold(0.0, |acc, v| acc + v) / n as f64
}

fn check_len(name: &str, len: usize, n: usize) -> Result<()> {
    if len != n {
        return Err(Error::DimensionMismatch(format!("{name} has length {len}, expected {n}")));
    }
    Ok(())
}

fn check_outcomes(t: &[bool], y: &[f64]) -> Result<usize> {
    let n = t.len();
    if n == 0 {
        return Err(Error::InvalidInput("no observations".into()));
    }
    check_len("y", y.len(), n)?;
    if let Some(i) = (0..n).find(|&i| t[i] && !y[i].is_finite()) {
        return Err(Error::InvalidInput(format!("outcome missing or non-finite at row {i} where t = 1")));
    }
    Ok(n)
}

fn check_pi(pi: &[f64], n: usize) -> Result<()> {
    check_len("propensities", pi.len(), n)?;
    if let Some(i) = pi.iter().position(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::InvalidInput(format!(
            "propensity at row {i} is {} (must lie in (0, 1])",
            pi[i]
        )));
    }
    Ok(())
}

fn check_m(m: &[f64], n: usize) -> Result<()> {
    check_len("predictions", m.len(), n)?;
    if let Some(i) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite prediction at row {i}")));
    }
    Ok(())
}

/// t y/π + (t − π) h/π for one row.
#[inline]
pub(crate) fn aipw_term(t: bool, y: f64, pi: f64, h: f64) -> f64 {
    if t {
        y / pi + (1.0 - pi) / pi * h
    } else {
        -pi / pi * h
    }
}

/// Regression estimator n⁻¹ Σ m̂_i.
pub fn mu_reg(m: &[f64]) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::InvalidInput("no observations".into()));
    }
    check_m(m, m.len())?;
    Ok(average(m.iter().copied(), m.len()))
}

/// Imputation estimator n⁻¹ Σ {t y + (1 − t) m̂}.
pub fn mu_imp(t: &[bool], y: &[f64], m: &[f64]) -> Result<f64> {
    let n = check_outcomes(t, y)?;
    check_m(m, n)?;
    Ok(average((0..n).map(|i| if t[i] { y[i] } else { m[i] }), n))
}

/// Ratio IPW estimator Σ(t y/π̂)/Σ(t/π̂).
pub fn mu_ipw_pop(t: &[bool], y: &[f64], pi: &[f64]) -> Result<f64> {
    let n = check_outcomes(t, y)?;
    check_pi(pi, n)?;
    let (num, den) = (0..n)
        .filter(|&i| t[i])
        .fold((0.0, 0.0), |(a, b), i| (a + y[i] / pi[i], b + 1.0 / pi[i]));
    if den == 0.0 {
        return Err(Error::NoCompleteCases);
    }
    Ok(num / den)
}

/// Horvitz–Thompson IPW estimator n⁻¹ Σ t y/π̂.
pub fn mu_ipw_ht(t: &[bool], y: &[f64], pi: &[f64]) -> Result<f64> {
    let n = check_outcomes(t, y)?;
    check_pi(pi, n)?;
    Ok(average((0..n).map(|i| if t[i] { y[i] / pi[i] } else { 0.0 }), n))
}

/// IPW with a constant augmentation h = −ĉ; returns (μ̂, ĉ).
///
/// ĉ_NR = Σ t(1 − π̂)y/π̂ / Σ t(1 − π̂)/π̂ and ĉ_OPT uses π̂² in both
/// denominators.
pub fn mu_ipw_const(t: &[bool], y: &[f64], pi: &[f64], variant: ConstVariant) -> Result<(f64, f64)> {
    let n = check_outcomes(t, y)?;
    check_pi(pi, n)?;
    if !t.iter().any(|&v| v) {
        return Err(Error::NoCompleteCases);
    }
    let weight = |p: f64| match variant {
        ConstVariant::Nr => (1.0 - p) / p,
        ConstVariant::Opt => (1.0 - p) / (p * p),
    };
    let (num, den) = (0..n)
        .filter(|&i| t[i])
        .fold((0.0, 0.0), |(a, b), i| {
            let w = weight(pi[i]);
            (a + w * y[i], b + w)
        });
    if !(den > 0.0) {
        return Err(Error::DegenerateWeights(
            "constant-h denominator vanishes (all complete-case propensities equal 1)".into(),
        ));
    }
    let c = num / den;
    let mu = average((0..n).map(|i| aipw_term(t[i], y[i], pi[i], -c)), n);
    Ok((mu, c))
}

/// γ̂ = Σ w (y − m̂) / Σ w over complete cases.
pub fn gamma(t: &[bool], y: &[f64], pi: &[f64], m: &[f64], variant: GammaVariant) -> Result<f64> {
    let n = check_outcomes(t, y)?;
    check_pi(pi, n)?;
    check_m(m, n)?;
    let weight = |p: f64| match variant {
        GammaVariant::Pop => 1.0 / p,
        GammaVariant::Nr => (1.0 - p) / p,
        GammaVariant::Opt => (1.0 - p) / (p * p),
    };
    let (num, den) = (0..n)
        .filter(|&i| t[i])
        .fold((0.0, 0.0), |(a, b), i| {
            let w = weight(pi[i]);
            (a + w * (y[i] - m[i]), b + w)
        });
    if !(den > 0.0) {
        return Err(Error::DegenerateWeights(format!(
            "{variant:?} weights sum to {den} over the complete cases"
        )));
    }
    Ok(num / den)
}

/// AIPW estimator n⁻¹ Σ [t y/π̂ + (t − π̂) h̃/π̂].
pub fn mu_aipw(t: &[bool], y: &[f64], pi: &[f64], h: &[f64]) -> Result<f64> {
    let n = check_outcomes(t, y)?;
    check_pi(pi, n)?;
    check_len("h", h.len(), n)?;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite augmentation".into()));
    }
    Ok(average((0..n).map(|i| aipw_term(t[i], y[i], pi[i], h[i])), n))
}

/// Bias-corrected regression estimator n⁻¹ Σ m̂ + γ̂ + n⁻¹ Σ t(y − m̂ − γ̂)/π̂.
///
/// This is the regression-plus-correction form; it equals `mu_aipw` with
/// h̃ = −γ̂ − m̂ algebraically, evaluated along a different path.
pub fn mu_bc(t: &[bool], y: &[f64], pi: &[f64], m: &[f64], variant: BcVariant) -> Result<EstimateReport> {
    let n = check_outcomes(t, y)?;
    check_pi(pi, n)?;
    check_m(m, n)?;
    let g = match variant.gamma_variant() {
        Some(v) => gamma(t, y, pi, m, v)?,
        None => 0.0,
    };
    let regression = average(m.iter().copied(), n);
    let correction = average(
        (0..n).map(|i| if t[i] { (y[i] - m[i] - g) / pi[i] } else { 0.0 }),
        n,
    );
    let mut report = EstimateReport::new(variant.name(), regression + g + correction, n);
    report.gamma = Some(g);
    Ok(report)
}

fn collapse_report(name: &str, d: &Dataset, pi: &[f64], fit: &FittedOutcome) -> Result<EstimateReport> {
    let n = d.n();
    let h: Vec<f64> = fit.fitted.iter().map(|m| -m).collect();
    let mu = mu_aipw(d.t(), d.y(), pi, &h)?;
    let mean_m = average(fit.fitted.iter().copied(), n);
    let gap = (mu - mean_m).abs() / mu.abs().max(1.0);
    let mut report = EstimateReport::new(name, mu, n);
    report.gamma = Some(0.0);
    report.collapse_gap = Some(gap);
    if !(gap <= COLLAPSE_TOL) {
        report.warnings.push(format!(
            "weighted-residual identity violated: |mu - mean(m)| relative gap {gap:e}"
        ));
    }
    Ok(report)
}

/// WLS-augmented estimator: β fit with weights 1/π̂, then AIPW with γ = 0.
pub fn mu_wls(d: &Dataset, spec: &BasisSpec, pi: &[f64]) -> Result<(EstimateReport, FittedOutcome)> {
    let fit = fit_outcome(d, spec, FitMode::Wls, Some(pi))?;
    Ok((collapse_report("wls", d, pi, &fit)?, fit))
}

/// SRR estimator: 1/π̂ appended as a regressor, then AIPW with γ = 0.
pub fn mu_srr(d: &Dataset, spec: &BasisSpec, pi: &[f64]) -> Result<(EstimateReport, FittedOutcome)> {
    let fit = fit_outcome(d, spec, FitMode::Srr, Some(pi))?;
    Ok((collapse_report("srr", d, pi, &fit)?, fit))
}

/// π-covariate regression fit: y on {1, π̂, …, π̂^degree}.
#[derive(Debug, Clone)]
pub struct PiCovFit {
    pub report: EstimateReport,
    pub design: DesignMatrix,
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
}

/// Regresses y on a polynomial in π̂ over complete cases and averages the
/// fitted curve over every row.
pub fn mu_pi_cov(t: &[bool], y: &[f64], pi: &[f64], degree: usize) -> Result<PiCovFit> {
    let n = check_outcomes(t, y)?;
    check_pi(pi, n)?;
    let p = degree + 1;
    let available = t.iter().filter(|&&v| v).count();
    if available < p {
        return Err(Error::TooFewCompleteCases {
            available,
            required: p,
        });
    }
    let mut data = Vec::with_capacity(n * p);
    for &pi_i in pi {
        let mut v = 1.0;
        for _ in 0..p {
            data.push(v);
            v *= pi_i;
        }
    }
    let labels = (0..p).map(|k| format!("pi^{k}")).collect();
    let design = DesignMatrix::new(n, p, data, labels)?;
    let response: Vec<f64> = (0..n).map(|i| if t[i] { y[i] } else { 0.0 }).collect();
    let weights: Vec<f64> = t.iter().map(|&v| f64::from(u8::from(v))).collect();
    let fit = least_squares(&design, &response, Some(&weights))?;
    let fitted = design.mul_vec(&fit.coefficients);
    let report = EstimateReport::new("pi_cov", average(fitted.iter().copied(), n), n);
    Ok(PiCovFit {
        report,
        design,
        coefficients: fit.coefficients,
        fitted,
    })
}

/// Hybrid: m̂ where π̂ < δ, AIPW (h̃ = −m̂) contribution elsewhere.
pub fn mu_hybrid(t: &[bool], y: &[f64], pi: &[f64], m: &[f64], delta: f64) -> Result<EstimateReport> {
    let n = check_outcomes(t, y)?;
    check_pi(pi, n)?;
    check_m(m, n)?;
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidInput(format!("delta must lie in [0, 1], got {delta}")));
    }
    let estimate = average(
        (0..n).map(|i| {
            if pi[i] < delta {
                m[i]
            } else {
                aipw_term(t[i], y[i], pi[i], -m[i])
            }
        }),
        n,
    );
    let mut report = EstimateReport::new("hybrid", estimate, n);
    let below = pi.iter().filter(|&&p| p < delta).count();
    if below > 0 {
        report
            .warnings
            .push(format!("{below} rows with propensity below delta = {delta} use m-hat only"));
    }
    Ok(report)
}

/// The propensities `mode` plugs into the generalized estimator, or `None`
/// for the π → ∞ limit.
pub fn general_pi_values(t: &[bool], pi: Option<&[f64]>, mode: PiMode) -> Result<Option<Vec<f64>>> {
    let n = t.len();
    match mode {
        PiMode::Infinity => Ok(None),
        PiMode::One => Ok(Some(vec![1.0; n])),
        PiMode::Fitted => {
            let pi = pi.ok_or(Error::MissingPropensity)?;
            check_pi(pi, n)?;
            Ok(Some(pi.to_vec()))
        }
        PiMode::Shrunk(lambda) => {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::InvalidLambda(lambda));
            }
            let pi = pi.ok_or(Error::MissingPropensity)?;
            check_pi(pi, n)?;
            let rate = t.iter().filter(|&&v| v).count() as f64 / n as f64;
            Ok(Some(
                pi.iter().map(|p| (1.0 - lambda) * p + lambda * rate).collect(),
            ))
        }
    }
}

/// n⁻¹ Σ [t y/π − (t − π) m̂/π] for the propensity choice `mode`.
pub fn mu_general_pi(t: &[bool], y: &[f64], m: &[f64], pi: Option<&[f64]>, mode: PiMode) -> Result<EstimateReport> {
    let n = check_outcomes(t, y)?;
    check_m(m, n)?;
    let name = match mode {
        PiMode::Fitted => "gpi_fitted",
        PiMode::One => "gpi_one",
        PiMode::Infinity => "gpi_inf",
        PiMode::Shrunk(_) => "gpi_shrunk",
    };
    let estimate = match general_pi_values(t, pi, mode)? {
        None => average(m.iter().copied(), n),
        Some(p) => {
            if p.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::DegenerateWeights("shrunk propensity is zero".into()));
            }
            average((0..n).map(|i| aipw_term(t[i], y[i], p[i], -m[i])), n)
        }
    };
    Ok(EstimateReport::new(name, estimate, n))
}
