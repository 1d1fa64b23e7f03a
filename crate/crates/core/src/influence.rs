//! Estimated influence functions φ̂(z_i) and the diagnostics built on them.
//!
//! Model I (outcome regression correct) influence functions have the form
//! m − μ + t a(x)(y − m); model II (propensity correct) ones have the form
//! t y/π + (t − π) h(x)/π − μ. When β or α is estimated, a(x) and h(x)
//! pick up a projection term; population expectations in that term are
//! replaced by sample averages as documented on each function.

use crate::error::{Error, Result};
use crate::estimators::{self, mu_aipw, mu_bc, BcVariant};
use crate::models::{FitMode, FittedOutcome, FittedPropensity};
use crate::numkernel::{dot, solve_square};

/// φ̂ values with their moments.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceReport {
    pub values: Vec<f64>,
    pub mean: f64,
    /// n⁻¹ Σ φ̂².
    pub sigma2: f64,
    /// σ̂/√n.
    pub se: f64,
}

impl InfluenceReport {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sigma2 = values.iter().map(|v| v * v).sum::<f64>() / n;
        let se = sandwich_se(&values);
        Self {
            values,
            mean,
            sigma2,
            se,
        }
    }

    /// Sample standard deviation of φ̂ around its mean.
    pub fn sd(&self) -> f64 {
        let n = self.values.len() as f64;
        (self.values.iter().map(|v| (v - self.mean).powi(2)).sum::<f64>() / n).sqrt()
    }
}

/// sqrt(Σ φ̂²)/n.
pub fn sandwich_se(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt() / values.len() as f64
}

/// Stand-in for π0(x) inside expectations of the form E[π0(x) g(x)].
#[derive(Debug, Clone, PartialEq)]
pub enum ExpectationProxy {
    /// n⁻¹ Σ t_i g(x_i): needs no propensity model.
    ResponseIndicator,
    /// n⁻¹ Σ π̂_i g(x_i).
    Fitted(Vec<f64>),
}

impl ExpectationProxy {
    fn weight(&self, t: &[bool], i: usize) -> f64 {
        match self {
            ExpectationProxy::ResponseIndicator => f64::from(u8::from(t[i])),
            ExpectationProxy::Fitted(pi) => pi[i],
        }
    }
}

/// A(x_i) and m_β(x_i) rows of an estimated outcome model.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeCorrection {
    pub a_rows: Vec<Vec<f64>>,
    pub gradient_rows: Vec<Vec<f64>>,
}

impl OutcomeCorrection {
    pub fn from_fit(fit: &FittedOutcome) -> Self {
        Self {
            a_rows: fit.a_rows(),
            gradient_rows: fit.gradient_rows(),
        }
    }

    /// Least-squares fit on a linear basis: A = m_β = the basis row.
    pub fn least_squares(rows: Vec<Vec<f64>>) -> Self {
        Self {
            a_rows: rows.clone(),
            gradient_rows: rows,
        }
    }
}

/// B(x_i) and π_α(x_i) rows of an estimated propensity model.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityCorrection {
    pub score_rows: Vec<Vec<f64>>,
    pub gradient_rows: Vec<Vec<f64>>,
}

impl PropensityCorrection {
    pub fn from_fit(fit: &FittedPropensity) -> Self {
        Self {
            score_rows: fit.score_rows(),
            gradient_rows: fit.gradient_rows(),
        }
    }
}

fn check_lengths(n: usize, lens: &[(&str, usize)]) -> Result<()> {
    for (name, len) in lens {
        if *len != n {
            return Err(Error::DimensionMismatch(format!("{name} has length {len}, expected {n}")));
        }
    }
    Ok(())
}

/// ã(x) = ψ1/π(x, α*) + ψ2.
pub fn a_tilde_parametric(psi1: f64, psi2: f64, pi: &[f64]) -> Vec<f64> {
    pi.iter().map(|p| psi1 / p + psi2).collect()
}

/// The model-I weight a(x_i) after accounting for estimated β:
///
/// a = ã − E[(π0 ã − 1) m_βᵀ] E[π0 A m_βᵀ]⁻¹ A(x)
///
/// with E[π0 g] taken through `proxy` and E[g] as the plain sample mean.
pub fn model1_weights(
    t: &[bool],
    a_tilde: &[f64],
    correction: &OutcomeCorrection,
    proxy: &ExpectationProxy,
) -> Result<Vec<f64>> {
    let n = t.len();
    check_lengths(
        n,
        &[
            ("a_tilde", a_tilde.len()),
            ("A rows", correction.a_rows.len()),
            ("gradient rows", correction.gradient_rows.len()),
        ],
    )?;
    if let ExpectationProxy::Fitted(pi) = proxy {
        check_lengths(n, &[("proxy propensities", pi.len())])?;
    }
    let p = correction.gradient_rows.first().map_or(0, Vec::len);
    let mut v = vec![0.0; p];
    let mut mat = vec![0.0; p * p];
    for i in 0..n {
        let w = proxy.weight(t, i);
        let g = &correction.gradient_rows[i];
        let a = &correction.a_rows[i];
        let coef = w * a_tilde[i] - 1.0;
        for k in 0..p {
            v[k] += coef * g[k];
            for l in 0..p {
                mat[k * p + l] += w * a[k] * g[l];
            }
        }
    }
    let nf = n as f64;
    v.iter_mut().for_each(|x| *x /= nf);
    mat.iter_mut().for_each(|x| *x /= nf);
    // u = M⁻ᵀ v so that vᵀ M⁻¹ A = uᵀ A
    let mt = transpose(&mat, p);
    let u = solve_square(&mt, &v).ok_or(Error::SingularCorrection)?;
    Ok((0..n)
        .map(|i| a_tilde[i] - dot(&u, &correction.a_rows[i]))
        .collect())
}

/// The model-II function h(x_i) after accounting for estimated α:
///
/// h = h̃ − E[π_αᵀ (m0 + h̃)/π0] E[B π_αᵀ]⁻¹ B(x) π0(x)
///
/// with E[π_α (m0 + h̃)/π0] ≈ n⁻¹ Σ t π_α (y + h̃)/π̂², E[B π_αᵀ] ≈
/// n⁻¹ Σ B π_αᵀ and π0 → π̂. Weighting y + h̃ as one residual keeps the
/// two large terms from cancelling only in expectation.
pub fn model2_h(
    t: &[bool],
    y: &[f64],
    pi: &[f64],
    h_tilde: &[f64],
    correction: &PropensityCorrection,
) -> Result<Vec<f64>> {
    let n = t.len();
    check_lengths(
        n,
        &[
            ("y", y.len()),
            ("pi", pi.len()),
            ("h_tilde", h_tilde.len()),
            ("B rows", correction.score_rows.len()),
            ("gradient rows", correction.gradient_rows.len()),
        ],
    )?;
    let s = correction.gradient_rows.first().map_or(0, Vec::len);
    let mut w = vec![0.0; s];
    let mut mat = vec![0.0; s * s];
    for i in 0..n {
        let g = &correction.gradient_rows[i];
        let b = &correction.score_rows[i];
        let coef = if t[i] {
            (y[i] + h_tilde[i]) / (pi[i] * pi[i])
        } else {
            0.0
        };
        for k in 0..s {
            w[k] += coef * g[k];
            for l in 0..s {
                mat[k * s + l] += b[k] * g[l];
            }
        }
    }
    let nf = n as f64;
    w.iter_mut().for_each(|x| *x /= nf);
    mat.iter_mut().for_each(|x| *x /= nf);
    let mt = transpose(&mat, s);
    let u = solve_square(&mt, &w).ok_or(Error::SingularCorrection)?;
    Ok((0..n)
        .map(|i| h_tilde[i] - dot(&u, &correction.score_rows[i]) * pi[i])
        .collect())
}

fn transpose(m: &[f64], p: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            out[j * p + i] = m[i * p + j];
        }
    }
    out
}

/// Model-I influence m̂ − μ̂ + t a(x)(y − m̂).
///
/// With `correction` absent β is treated as known and a = ã.
pub fn if_model1(
    t: &[bool],
    y: &[f64],
    m: &[f64],
    mu: f64,
    a_tilde: &[f64],
    correction: Option<&OutcomeCorrection>,
    proxy: &ExpectationProxy,
) -> Result<InfluenceReport> {
    let n = t.len();
    check_lengths(n, &[("y", y.len()), ("m", m.len()), ("a_tilde", a_tilde.len())])?;
    let a = match correction {
        Some(c) => model1_weights(t, a_tilde, c, proxy)?,
        None => a_tilde.to_vec(),
    };
    let values = (0..n)
        .map(|i| {
            let aug = if t[i] { a[i] * (y[i] - m[i]) } else { 0.0 };
            m[i] - mu + aug
        })
        .collect();
    Ok(InfluenceReport::from_values(values))
}

/// Model-II influence t y/π̂ + (t − π̂) h(x)/π̂ − μ̂.
///
/// With `correction` absent α is treated as known and h = h̃.
pub fn if_model2(
    t: &[bool],
    y: &[f64],
    pi: &[f64],
    mu: f64,
    h_tilde: &[f64],
    correction: Option<&PropensityCorrection>,
) -> Result<InfluenceReport> {
    let n = t.len();
    check_lengths(n, &[("y", y.len()), ("pi", pi.len()), ("h_tilde", h_tilde.len())])?;
    let h = match correction {
        Some(c) => model2_h(t, y, pi, h_tilde, c)?,
        None => h_tilde.to_vec(),
    };
    let values = (0..n)
        .map(|i| estimators::aipw_term(t[i], y[i], pi[i], h[i]) - mu)
        .collect();
    Ok(InfluenceReport::from_values(values))
}

/// Model-III influence m̂ − μ̂ + t a (y − m̂) + (t − π̂) h/π̂, no corrections.
pub fn if_model3(
    t: &[bool],
    y: &[f64],
    m: &[f64],
    pi: &[f64],
    mu: f64,
    a: &[f64],
    h: &[f64],
) -> Result<InfluenceReport> {
    let n = t.len();
    check_lengths(
        n,
        &[("y", y.len()), ("m", m.len()), ("pi", pi.len()), ("a", a.len()), ("h", h.len())],
    )?;
    let values = (0..n)
        .map(|i| {
            let ti = f64::from(u8::from(t[i]));
            let aug = if t[i] { a[i] * (y[i] - m[i]) } else { 0.0 };
            m[i] - mu + aug + (ti - pi[i]) / pi[i] * h[i]
        })
        .collect();
    Ok(InfluenceReport::from_values(values))
}

/// Outcome of one identity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The identity does not apply (e.g. weighted residuals of an OLS fit).
    NotApplicable,
}

impl CheckStatus {
    pub fn label(self) -> &'static str {
        match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::NotApplicable => "N/A",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub name: String,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub status: CheckStatus,
    pub note: String,
}

impl IdentityCheck {
    pub fn graded(name: impl Into<String>, discrepancy: f64, tolerance: f64) -> Self {
        let status = if discrepancy <= tolerance {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        Self {
            name: name.into(),
            discrepancy,
            tolerance,
            status,
            note: String::new(),
        }
    }

    pub fn not_applicable(name: impl Into<String>, discrepancy: f64, tolerance: f64, note: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            discrepancy,
            tolerance,
            status: CheckStatus::NotApplicable,
            note: note.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn extend(&mut self, other: IdentityReport) {
        self.checks.extend(other.checks);
    }
}

/// Tolerance for the weighted-residual identity Σ t(y − m̂)/π̂ = 0.
pub const WEIGHTED_RESIDUAL_TOL: f64 = 1e-8;
/// Tolerance for purely algebraic (same-formula) identities.
pub const ALGEBRAIC_TOL: f64 = 1e-12;

/// |Σ t(y − m̂)/π̂| relative to Σ t|y|/π̂.
pub fn weighted_residual_gap(t: &[bool], y: &[f64], pi: &[f64], m: &[f64]) -> f64 {
    let (sum, scale) = (0..t.len())
        .filter(|&i| t[i])
        .fold((0.0, 0.0), |(s, c), i| {
            (s + (y[i] - m[i]) / pi[i], c + y[i].abs() / pi[i])
        });
    sum.abs() / scale.max(f64::MIN_POSITIVE)
}

/// Largest per-row gap between the model-I form with a = 1/π̂ and the
/// model-II form with h = −m̂, scaled by max(1, |y|/π̂, |m̂|/π̂).
pub fn pointwise_dr_gap(t: &[bool], y: &[f64], pi: &[f64], m: &[f64], mu: f64) -> f64 {
    (0..t.len())
        .map(|i| {
            let ti = f64::from(u8::from(t[i]));
            let yi = if t[i] { y[i] } else { 0.0 };
            let form3 = m[i] - mu + ti * (yi - m[i]) / pi[i];
            let form4 = ti * yi / pi[i] - (ti - pi[i]) * m[i] / pi[i] - mu;
            let scale = 1.0_f64.max(yi.abs() / pi[i]).max(m[i].abs() / pi[i]);
            (form3 - form4).abs() / scale
        })
        .fold(0.0, f64::max)
}

/// WLS/SRR collapse check on a fitted (or claimed) m̂ column.
pub fn collapse_check(name: &str, t: &[bool], y: &[f64], pi: &[f64], m: &[f64]) -> Result<IdentityCheck> {
    let h: Vec<f64> = m.iter().map(|v| -v).collect();
    let mu = mu_aipw(t, y, pi, &h)?;
    let mean_m = m.iter().sum::<f64>() / m.len() as f64;
    let gap = (mu - mean_m).abs() / mu.abs().max(1.0);
    Ok(IdentityCheck::graded(name, gap, estimators::COLLAPSE_TOL))
}

/// Runs every algebraic identity that applies to the supplied fits.
///
/// `pi` and `m` are the plug-ins of the bias-corrected family; each fit in
/// `fits` contributes its weighted-residual and collapse checks (WLS and SRR
/// graded, OLS reported as not applicable).
pub fn check_identities(
    t: &[bool],
    y: &[f64],
    pi: &[f64],
    m: &[f64],
    fits: &[&FittedOutcome],
) -> Result<IdentityReport> {
    let mut report = IdentityReport::default();

    for fit in fits {
        let mode = fit.mode.name();
        let fit_pi = fit.propensity.as_deref().unwrap_or(pi);
        let gap = weighted_residual_gap(t, y, fit_pi, &fit.fitted);
        let name = format!("weighted_residual({mode})");
        match fit.mode {
            FitMode::Ols => report.checks.push(IdentityCheck::not_applicable(
                name,
                gap,
                WEIGHTED_RESIDUAL_TOL,
                "not applicable (OLS)",
            )),
            FitMode::Wls | FitMode::Srr => {
                report
                    .checks
                    .push(IdentityCheck::graded(name, gap, WEIGHTED_RESIDUAL_TOL));
                let mut c = collapse_check(&format!("collapse({mode})"), t, y, fit_pi, &fit.fitted)?;
                c.note = "mu-hat equals mean(m-hat)".into();
                report.checks.push(c);
            }
        }
    }

    let h: Vec<f64> = m.iter().map(|v| -v).collect();
    let mu = mu_aipw(t, y, pi, &h)?;
    report.checks.push(IdentityCheck::graded(
        "pointwise_dr_influence",
        pointwise_dr_gap(t, y, pi, m, mu),
        ALGEBRAIC_TOL,
    ));

    for variant in BcVariant::ALL {
        let name = format!("aipw_form({})", variant.name());
        match mu_bc(t, y, pi, m, variant) {
            Ok(bc) => {
                let g = bc.gamma.unwrap_or(0.0);
                let h: Vec<f64> = m.iter().map(|v| -g - v).collect();
                let aipw = mu_aipw(t, y, pi, &h)?;
                let gap = (bc.estimate - aipw).abs() / aipw.abs().max(1.0);
                report.checks.push(IdentityCheck::graded(name, gap, ALGEBRAIC_TOL));
            }
            Err(e) => report.checks.push(IdentityCheck::not_applicable(
                name,
                f64::NAN,
                ALGEBRAIC_TOL,
                e.to_string(),
            )),
        }
    }
    Ok(report)
}

/// Regression of √n(μ̂_r − μ0) on n^{-1/2} Σ φ(z_i; truth) across replicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearityReport {
    pub replicates: usize,
    pub correlation: f64,
    pub slope: f64,
    pub intercept: f64,
    /// max_r |√n(μ̂_r − μ0) − n^{-1/2} Σ φ_r|.
    pub max_remainder: f64,
}

pub const MIN_LINEARITY_REPLICATES: usize = 50;

/// `mean_influence[r]` is n⁻¹ Σ_i φ(z_i; truth) for replicate r.
pub fn linearity_diagnostic(estimates: &[f64], mean_influence: &[f64], n: usize, mu0: f64) -> Result<LinearityReport> {
    let r = estimates.len();
    if mean_influence.len() != r {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates but {} influence means",
            r,
            mean_influence.len()
        )));
    }
    if r < MIN_LINEARITY_REPLICATES {
        return Err(Error::InsufficientReplicates {
            available: r,
            required: MIN_LINEARITY_REPLICATES,
        });
    }
    let root_n = (n as f64).sqrt();
    let ys: Vec<f64> = estimates.iter().map(|e| root_n * (e - mu0)).collect();
    let xs: Vec<f64> = mean_influence.iter().map(|m| root_n * m).collect();
    let rf = r as f64;
    let mx = xs.iter().sum::<f64>() / rf;
    let my = ys.iter().sum::<f64>() / rf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    Ok(LinearityReport {
        replicates: r,
        correlation: sxy / (sxx * syy).sqrt(),
        slope,
        intercept: my - slope * mx,
        max_remainder: xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - x).abs())
            .fold(0.0, f64::max),
    })
}
