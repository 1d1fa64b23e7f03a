//! Estimator registry and the glue that fits nuisance models once per
//! dataset, evaluates each requested estimator and attaches its influence
//! function.

use std::cell::OnceCell;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::{
    self, mu_bc, mu_general_pi, mu_hybrid, mu_ipw_const, mu_ipw_ht, mu_ipw_pop, mu_pi_cov, BcVariant,
    ConstVariant, EstimateReport, PiMode,
};
use crate::influence::{
    if_model1, if_model2, if_model3, ExpectationProxy, InfluenceReport, OutcomeCorrection,
    PropensityCorrection,
};
use crate::models::{fit_outcome, fit_propensity, BasisSpec, Dataset, FitMode, FittedOutcome, FittedPropensity};

/// Every registered estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Reg,
    Imp,
    IpwPop,
    IpwHt,
    IpwNr,
    IpwOpt,
    BcOls,
    BcPop,
    BcNr,
    BcOpt,
    Wls,
    Srr,
    PiCov,
    Hybrid,
    GpiFitted,
    GpiOne,
    GpiInf,
    GpiShrunk,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 18] = [
        EstimatorKind::Reg,
        EstimatorKind::Imp,
        EstimatorKind::IpwPop,
        EstimatorKind::IpwHt,
        EstimatorKind::IpwNr,
        EstimatorKind::IpwOpt,
        EstimatorKind::BcOls,
        EstimatorKind::BcPop,
        EstimatorKind::BcNr,
        EstimatorKind::BcOpt,
        EstimatorKind::Wls,
        EstimatorKind::Srr,
        EstimatorKind::PiCov,
        EstimatorKind::Hybrid,
        EstimatorKind::GpiFitted,
        EstimatorKind::GpiOne,
        EstimatorKind::GpiInf,
        EstimatorKind::GpiShrunk,
    ];

    /// The doubly robust estimators that share one influence function when
    /// both working models are correct.
    pub const DOUBLY_ROBUST: [EstimatorKind; 6] = [
        EstimatorKind::BcOls,
        EstimatorKind::BcPop,
        EstimatorKind::BcNr,
        EstimatorKind::BcOpt,
        EstimatorKind::Wls,
        EstimatorKind::Srr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Reg => "reg",
            EstimatorKind::Imp => "imp",
            EstimatorKind::IpwPop => "ipw_pop",
            EstimatorKind::IpwHt => "ipw_ht",
            EstimatorKind::IpwNr => "ipw_nr",
            EstimatorKind::IpwOpt => "ipw_opt",
            EstimatorKind::BcOls => "bc_ols",
            EstimatorKind::BcPop => "bc_pop",
            EstimatorKind::BcNr => "bc_nr",
            EstimatorKind::BcOpt => "bc_opt",
            EstimatorKind::Wls => "wls",
            EstimatorKind::Srr => "srr",
            EstimatorKind::PiCov => "pi_cov",
            EstimatorKind::Hybrid => "hybrid",
            EstimatorKind::GpiFitted => "gpi_fitted",
            EstimatorKind::GpiOne => "gpi_one",
            EstimatorKind::GpiInf => "gpi_inf",
            EstimatorKind::GpiShrunk => "gpi_shrunk",
        }
    }

    pub fn is_doubly_robust(self) -> bool {
        Self::DOUBLY_ROBUST.contains(&self)
    }

    fn bc_variant(self) -> Option<BcVariant> {
        match self {
            EstimatorKind::BcOls => Some(BcVariant::Ols),
            EstimatorKind::BcPop => Some(BcVariant::Pop),
            EstimatorKind::BcNr => Some(BcVariant::Nr),
            EstimatorKind::BcOpt => Some(BcVariant::Opt),
            _ => None,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown estimator `{s}`")))
    }
}

/// Tuning knobs shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    /// Hybrid threshold δ.
    pub delta: f64,
    /// Shrinkage weight λ for `gpi_shrunk`.
    pub lambda: f64,
    /// Polynomial degree for `pi_cov`.
    pub degree: usize,
    /// Propensities below this are counted in a warning.
    pub small_pi_threshold: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            delta: 0.05,
            lambda: 0.5,
            degree: 3,
            small_pi_threshold: 0.02,
        }
    }
}

/// Which working models to fit.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSpec {
    pub outcome: Option<BasisSpec>,
    /// Fit mode behind m̂ for the regression, imputation and BC estimators.
    pub outcome_mode: FitMode,
    pub propensity: Option<BasisSpec>,
    pub floor: Option<f64>,
    pub options: EstimatorOptions,
}

impl AnalysisSpec {
    pub fn new(outcome: BasisSpec, propensity: BasisSpec) -> Self {
        Self {
            outcome: Some(outcome),
            outcome_mode: FitMode::Ols,
            propensity: Some(propensity),
            floor: None,
            options: EstimatorOptions::default(),
        }
    }
}

/// Externally supplied π̂ and m̂ columns; they take precedence over fits
/// and are treated as known in the influence functions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlugIns {
    pub pi: Option<Vec<f64>>,
    pub m: Option<Vec<f64>>,
}

/// A point estimate with its influence function.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub report: EstimateReport,
    pub influence: InfluenceReport,
}

impl Estimate {
    pub fn se(&self) -> f64 {
        self.influence.se
    }
}

#[derive(Debug, Clone)]
struct PropensityState {
    pi: Vec<f64>,
    correction: Option<PropensityCorrection>,
    fit: Option<FittedPropensity>,
}

#[derive(Debug, Clone)]
struct OutcomeState {
    m: Vec<f64>,
    correction: Option<OutcomeCorrection>,
    fit: Option<FittedOutcome>,
}

/// Lazily fitted nuisance models for one dataset.
pub struct Analysis<'a> {
    data: &'a Dataset,
    spec: &'a AnalysisSpec,
    plugins: &'a PlugIns,
    propensity: OnceCell<Result<PropensityState>>,
    outcome: OnceCell<Result<OutcomeState>>,
    wls: OnceCell<Result<(EstimateReport, FittedOutcome)>>,
    srr: OnceCell<Result<(EstimateReport, FittedOutcome)>>,
}

impl<'a> Analysis<'a> {
    pub fn new(data: &'a Dataset, spec: &'a AnalysisSpec, plugins: &'a PlugIns) -> Self {
        Self {
            data,
            spec,
            plugins,
            propensity: OnceCell::new(),
            outcome: OnceCell::new(),
            wls: OnceCell::new(),
            srr: OnceCell::new(),
        }
    }

    fn propensity(&self) -> Result<&PropensityState> {
        self.propensity
            .get_or_init(|| {
                if let Some(pi) = &self.plugins.pi {
                    return Ok(PropensityState {
                        pi: pi.clone(),
                        correction: None,
                        fit: None,
                    });
                }
                let spec = self.spec.propensity.as_ref().ok_or(Error::MissingPropensity)?;
                let fit = fit_propensity(self.data, spec, self.spec.floor)?;
                Ok(PropensityState {
                    pi: fit.fitted.clone(),
                    correction: Some(PropensityCorrection::from_fit(&fit)),
                    fit: Some(fit),
                })
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn outcome(&self) -> Result<&OutcomeState> {
        self.outcome
            .get_or_init(|| {
                if let Some(m) = &self.plugins.m {
                    return Ok(OutcomeState {
                        m: m.clone(),
                        correction: None,
                        fit: None,
                    });
                }
                let spec = self
                    .spec
                    .outcome
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("no outcome basis or m-hat column".into()))?;
                let pi = match self.spec.outcome_mode {
                    FitMode::Ols => None,
                    _ => Some(self.propensity()?.pi.as_slice()),
                };
                let fit = fit_outcome(self.data, spec, self.spec.outcome_mode, pi)?;
                Ok(OutcomeState {
                    m: fit.fitted.clone(),
                    correction: Some(OutcomeCorrection::from_fit(&fit)),
                    fit: Some(fit),
                })
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn augmented(&self, mode: FitMode) -> Result<&(EstimateReport, FittedOutcome)> {
        let cell = if mode == FitMode::Wls { &self.wls } else { &self.srr };
        cell.get_or_init(|| {
            let spec = self
                .spec
                .outcome
                .as_ref()
                .ok_or_else(|| Error::InvalidInput(format!("{} needs an outcome basis", mode.name())))?;
            let pi = &self.propensity()?.pi;
            if mode == FitMode::Wls {
                estimators::mu_wls(self.data, spec, pi)
            } else {
                estimators::mu_srr(self.data, spec, pi)
            }
        })
        .as_ref()
        .map_err(Clone::clone)
    }

    /// The fitted propensity model, if one was fitted.
    pub fn propensity_fit(&self) -> Result<Option<&FittedPropensity>> {
        Ok(self.propensity()?.fit.as_ref())
    }

    /// π̂ used by the estimators.
    pub fn pi(&self) -> Result<&[f64]> {
        Ok(&self.propensity()?.pi)
    }

    /// m̂ used by the regression, imputation and BC estimators.
    pub fn m(&self) -> Result<&[f64]> {
        Ok(&self.outcome()?.m)
    }

    pub fn outcome_fit(&self) -> Result<Option<&FittedOutcome>> {
        Ok(self.outcome()?.fit.as_ref())
    }

    /// The WLS or SRR fit behind `mu_wls` / `mu_srr`.
    pub fn augmented_fit(&self, mode: FitMode) -> Result<&FittedOutcome> {
        Ok(&self.augmented(mode)?.1)
    }

    fn small_pi_warning(&self, report: &mut EstimateReport) {
        let threshold = self.spec.options.small_pi_threshold;
        if let Ok(state) = self.propensity() {
            let count = state.pi.iter().filter(|&&p| p < threshold).count();
            if count > 0 {
                report
                    .warnings
                    .push(format!("{count} fitted propensities below {threshold}"));
            }
        }
    }

    fn model2(&self, mu: f64, h_tilde: &[f64]) -> Result<InfluenceReport> {
        let state = self.propensity()?;
        if_model2(self.data.t(), self.data.y(), &state.pi, mu, h_tilde, state.correction.as_ref())
    }

    fn model1(&self, mu: f64, a_tilde: &[f64]) -> Result<InfluenceReport> {
        let state = self.outcome()?;
        if_model1(
            self.data.t(),
            self.data.y(),
            &state.m,
            mu,
            a_tilde,
            state.correction.as_ref(),
            &ExpectationProxy::ResponseIndicator,
        )
    }

    /// Evaluates one estimator with its influence function.
    pub fn estimate(&self, kind: EstimatorKind) -> Result<Estimate> {
        let d = self.data;
        let (t, y, n) = (d.t(), d.y(), d.n());
        let opts = &self.spec.options;
        let named = |name: &str, mu: f64| EstimateReport::new(name, mu, n);

        let (mut report, influence, uses_pi, plugged) = match kind {
            EstimatorKind::Reg | EstimatorKind::GpiInf => {
                let m = self.m()?;
                let mu = if kind == EstimatorKind::Reg {
                    estimators::mu_reg(m)?
                } else {
                    mu_general_pi(t, y, m, None, PiMode::Infinity)?.estimate
                };
                (named(kind.name(), mu), self.model1(mu, &vec![0.0; n])?, false, self.plugins.m.is_some())
            }
            EstimatorKind::Imp | EstimatorKind::GpiOne => {
                let m = self.m()?;
                let mu = if kind == EstimatorKind::Imp {
                    estimators::mu_imp(t, y, m)?
                } else {
                    mu_general_pi(t, y, m, None, PiMode::One)?.estimate
                };
                (named(kind.name(), mu), self.model1(mu, &vec![1.0; n])?, false, self.plugins.m.is_some())
            }
            EstimatorKind::IpwPop => {
                let pi = self.pi()?;
                let mu = mu_ipw_pop(t, y, pi)?;
                (named("ipw_pop", mu), self.model2(mu, &vec![-mu; n])?, true, self.plugins.pi.is_some())
            }
            EstimatorKind::IpwHt => {
                let pi = self.pi()?;
                let mu = mu_ipw_ht(t, y, pi)?;
                (named("ipw_ht", mu), self.model2(mu, &vec![0.0; n])?, true, self.plugins.pi.is_some())
            }
            EstimatorKind::IpwNr | EstimatorKind::IpwOpt => {
                let pi = self.pi()?;
                let variant = if kind == EstimatorKind::IpwNr {
                    ConstVariant::Nr
                } else {
                    ConstVariant::Opt
                };
                let (mu, c) = mu_ipw_const(t, y, pi, variant)?;
                let mut r = named(kind.name(), mu);
                r.constant = Some(c);
                (r, self.model2(mu, &vec![-c; n])?, true, self.plugins.pi.is_some())
            }
            EstimatorKind::BcOls | EstimatorKind::BcPop | EstimatorKind::BcNr | EstimatorKind::BcOpt => {
                let variant = kind.bc_variant().expect("bc kind");
                let (pi, m) = (self.pi()?, self.m()?);
                let r = mu_bc(t, y, pi, m, variant)?;
                let g = r.gamma.unwrap_or(0.0);
                let h: Vec<f64> = m.iter().map(|v| -g - v).collect();
                let infl = self.model2(r.estimate, &h)?;
                (r, infl, true, self.plugins.pi.is_some())
            }
            EstimatorKind::Wls | EstimatorKind::Srr => {
                let mode = if kind == EstimatorKind::Wls { FitMode::Wls } else { FitMode::Srr };
                let (r, fit) = self.augmented(mode)?;
                let h: Vec<f64> = fit.fitted.iter().map(|v| -v).collect();
                let infl = self.model2(r.estimate, &h)?;
                (r.clone(), infl, true, self.plugins.pi.is_some())
            }
            EstimatorKind::PiCov => {
                let pi = self.pi()?;
                let fit = mu_pi_cov(t, y, pi, opts.degree)?;
                let rows = (0..n).map(|i| fit.design.row(i).to_vec()).collect();
                let infl = if_model1(
                    t,
                    y,
                    &fit.fitted,
                    fit.report.estimate,
                    &vec![0.0; n],
                    Some(&OutcomeCorrection::least_squares(rows)),
                    &ExpectationProxy::ResponseIndicator,
                )?;
                (fit.report, infl, true, self.plugins.pi.is_some())
            }
            EstimatorKind::Hybrid => {
                let (pi, m) = (self.pi()?, self.m()?);
                let r = mu_hybrid(t, y, pi, m, opts.delta)?;
                let a: Vec<f64> = pi
                    .iter()
                    .map(|&p| if p < opts.delta { 0.0 } else { 1.0 / p })
                    .collect();
                let infl = if_model3(t, y, m, pi, r.estimate, &a, &vec![0.0; n])?;
                (r, infl, true, true)
            }
            EstimatorKind::GpiFitted => {
                let (pi, m) = (self.pi()?, self.m()?);
                let r = mu_general_pi(t, y, m, Some(pi), PiMode::Fitted)?;
                let h: Vec<f64> = m.iter().map(|v| -v).collect();
                let infl = self.model2(r.estimate, &h)?;
                (r, infl, true, self.plugins.pi.is_some())
            }
            EstimatorKind::GpiShrunk => {
                let (pi, m) = (self.pi()?, self.m()?);
                let mode = PiMode::Shrunk(opts.lambda);
                let r = mu_general_pi(t, y, m, Some(pi), mode)?;
                let shrunk = estimators::general_pi_values(t, Some(pi), mode)?.expect("finite mode");
                let a: Vec<f64> = shrunk.iter().map(|p| 1.0 / p).collect();
                let infl = if_model3(t, y, m, &shrunk, r.estimate, &a, &vec![0.0; n])?;
                (r, infl, true, true)
            }
        };
        if uses_pi {
            self.small_pi_warning(&mut report);
        }
        if plugged && (self.plugins.pi.is_some() || self.plugins.m.is_some()) {
            report
                .warnings
                .push("supplied nuisance values treated as known in the standard error".into());
        }
        Ok(Estimate { report, influence })
    }

    /// Evaluates several estimators; one failure never stops the others.
    pub fn estimate_all(&self, kinds: &[EstimatorKind]) -> Vec<(EstimatorKind, Result<Estimate>)> {
        kinds.iter().map(|&k| (k, self.estimate(k))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d4() -> Dataset {
        Dataset::new(
            vec![true, true, true, false],
            vec![Some(2.0), Some(4.0), Some(6.0), None],
            vec![("x1".into(), vec![0.0, 1.0, 2.0, 3.0])],
        )
        .unwrap()
    }

    #[test]
    fn names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("nope".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn plug_in_estimates_on_d4() {
        let spec = AnalysisSpec {
            outcome: None,
            outcome_mode: FitMode::Ols,
            propensity: None,
            floor: None,
            options: EstimatorOptions::default(),
        };
        let plugins = PlugIns {
            pi: Some(vec![0.5, 0.8, 0.4, 0.25]),
            m: Some(vec![3.0, 3.0, 5.0, 7.0]),
        };
        let d = d4();
        let a = Analysis::new(&d, &spec, &plugins);
        assert_eq!(a.estimate(EstimatorKind::Reg).unwrap().report.estimate, 4.5);
        assert_eq!(a.estimate(EstimatorKind::Imp).unwrap().report.estimate, 4.75);
        let pop = a.estimate(EstimatorKind::IpwPop).unwrap();
        assert!((pop.report.estimate - 96.0 / 23.0).abs() < 1e-14);
        assert!(pop.influence.mean.abs() < 1e-14);
        let bc = a.estimate(EstimatorKind::BcOls).unwrap();
        assert!((bc.report.estimate - 4.9375).abs() < 1e-14);
        // WLS needs an outcome basis
        assert!(a.estimate(EstimatorKind::Wls).is_err());
    }
}
