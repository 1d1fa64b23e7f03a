//! Influence functions evaluated at the true parameters, with the
//! population expectations in the nuisance corrections replaced by averages
//! over a large fixed set of draws.

use crate::analysis::EstimatorKind;
use crate::error::{Error, Result};
use crate::models::{Dataset, FitMode};
use crate::numkernel::solve_square;

use super::dgp::{oracle_draws, DgpSpec};
use super::Quadrant;

/// Draws behind the population constants.
pub const TRUTH_DRAWS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
enum Form {
    /// m0 − μ0 + t a(u)(y − m0) with a = ã − gᵀ(1, u).
    Outcome { a_tilde: f64, g: Vec<f64> },
    /// t y/π0 + (t − π0) h(u)/π0 − μ0 with h = h̃ − vᵀ(1, u) π0.
    Propensity { h_tilde: f64, v: Vec<f64> },
    /// m0 − μ0 + t (y − m0)/π0.
    DoublyRobust,
}

/// Per-estimator influence at the truth, where one is available for the
/// quadrant.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthInfluence {
    mu0: f64,
    forms: Vec<Option<Form>>,
}

struct Moments {
    p: usize,
    draws: usize,
    /// E[π(1 − π) c cᵀ]
    fisher: Vec<f64>,
    /// E[π b bᵀ]
    gram: Vec<f64>,
    /// E[(1 − π) c m0]
    resid_m: Vec<f64>,
    /// E[(1 − π) c]
    resid_1: Vec<f64>,
    /// E[π b]
    pi_b: Vec<f64>,
    /// E[b]
    b: Vec<f64>,
    nr_num: f64,
    nr_den: f64,
    opt_num: f64,
    opt_den: f64,
}

impl Moments {
    fn collect(spec: &DgpSpec, draws: usize) -> Self {
        let p = spec.latent_dim + 1;
        let mut m = Moments {
            p,
            draws,
            fisher: vec![0.0; p * p],
            gram: vec![0.0; p * p],
            resid_m: vec![0.0; p],
            resid_1: vec![0.0; p],
            pi_b: vec![0.0; p],
            b: vec![0.0; p],
            nr_num: 0.0,
            nr_den: 0.0,
            opt_num: 0.0,
            opt_den: 0.0,
        };
        let mut c = vec![1.0; p];
        for u in oracle_draws(spec, draws) {
            c[1..].copy_from_slice(&u);
            let pi = spec.propensity(&u);
            let m0 = spec.outcome_mean(&u);
            for j in 0..p {
                for k in 0..p {
                    let cc = c[j] * c[k];
                    m.fisher[j * p + k] += pi * (1.0 - pi) * cc;
                    m.gram[j * p + k] += pi * cc;
                }
                m.resid_m[j] += (1.0 - pi) * c[j] * m0;
                m.resid_1[j] += (1.0 - pi) * c[j];
                m.pi_b[j] += pi * c[j];
                m.b[j] += c[j];
            }
            m.nr_num += (1.0 - pi) * m0;
            m.nr_den += 1.0 - pi;
            m.opt_num += (1.0 - pi) * m0 / pi;
            m.opt_den += (1.0 - pi) / pi;
        }
        let scale = 1.0 / draws as f64;
        for v in m
            .fisher
            .iter_mut()
            .chain(m.gram.iter_mut())
            .chain(m.resid_m.iter_mut())
            .chain(m.resid_1.iter_mut())
            .chain(m.pi_b.iter_mut())
            .chain(m.b.iter_mut())
        {
            *v *= scale;
        }
        m
    }

    fn propensity_form(&self, h_tilde: f64) -> Result<Form> {
        let w: Vec<f64> = (0..self.p).map(|j| self.resid_m[j] + h_tilde * self.resid_1[j]).collect();
        let v = solve_square(&self.fisher, &w).ok_or(Error::SingularCorrection)?;
        Ok(Form::Propensity { h_tilde, v })
    }

    fn outcome_form(&self, a_tilde: f64) -> Result<Form> {
        let e: Vec<f64> = (0..self.p).map(|j| a_tilde * self.pi_b[j] - self.b[j]).collect();
        let g = solve_square(&self.gram, &e).ok_or(Error::SingularCorrection)?;
        Ok(Form::Outcome { a_tilde, g })
    }
}

impl TruthInfluence {
    /// Builds the forms available for `kinds`: IPW estimators when the
    /// propensity basis is correct, regression and imputation when the
    /// outcome basis is correct and fitted by OLS, and the doubly robust
    /// family when both are.
    pub fn new(
        spec: &DgpSpec,
        mu0: f64,
        quadrant: Quadrant,
        outcome_mode: FitMode,
        kinds: &[EstimatorKind],
        draws: usize,
    ) -> Result<Self> {
        spec.validate()?;
        if draws == 0 {
            return Err(Error::InvalidInput("need at least one draw".into()));
        }
        let pi_ok = quadrant.propensity_correct();
        let m_ok = quadrant.outcome_correct() && spec.outcome_terms.is_empty();
        let moments = Moments::collect(spec, draws);
        let mut forms = Vec::with_capacity(kinds.len());
        for &kind in kinds {
            use EstimatorKind::*;
            let form = match kind {
                IpwPop if pi_ok => Some(moments.propensity_form(-mu0)?),
                IpwHt if pi_ok => Some(moments.propensity_form(0.0)?),
                IpwNr if pi_ok => Some(moments.propensity_form(-moments.nr_num / moments.nr_den)?),
                IpwOpt if pi_ok => Some(moments.propensity_form(-moments.opt_num / moments.opt_den)?),
                Reg | GpiInf if m_ok && outcome_mode == FitMode::Ols => Some(moments.outcome_form(0.0)?),
                Imp | GpiOne if m_ok && outcome_mode == FitMode::Ols => Some(moments.outcome_form(1.0)?),
                BcOls | BcPop | BcNr | BcOpt | Wls | Srr | GpiFitted if pi_ok && m_ok => {
                    Some(Form::DoublyRobust)
                }
                _ => None,
            };
            forms.push(form);
        }
        debug_assert_eq!(moments.draws, draws);
        Ok(Self { mu0, forms })
    }

    pub fn available(&self) -> Vec<bool> {
        self.forms.iter().map(Option::is_some).collect()
    }

    /// Mean influence over the rows of a generated dataset, one entry per
    /// estimator passed to `new`.
    pub fn mean_influence(&self, spec: &DgpSpec, d: &Dataset) -> Result<Vec<Option<f64>>> {
        let latent: Vec<&[f64]> = spec
            .latent_names()
            .iter()
            .map(|name| d.column(name))
            .collect::<Result<_>>()?;
        let n = d.n();
        let mut sums = vec![0.0; self.forms.len()];
        let mut u = vec![0.0; latent.len()];
        let mut c = vec![1.0; latent.len() + 1];
        for i in 0..n {
            for (slot, col) in u.iter_mut().zip(&latent) {
                *slot = col[i];
            }
            c[1..].copy_from_slice(&u);
            let pi = spec.propensity(&u);
            let m0 = spec.outcome_mean(&u);
            let (t, y) = (d.t()[i], d.y()[i]);
            let lin = |coef: &[f64]| coef.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
            for (sum, form) in sums.iter_mut().zip(&self.forms) {
                let phi = match form {
                    None => continue,
                    Some(Form::Outcome { a_tilde, g }) => {
                        let a = a_tilde - lin(g);
                        m0 - self.mu0 + if t { a * (y - m0) } else { 0.0 }
                    }
                    Some(Form::Propensity { h_tilde, v }) => {
                        let h = h_tilde - lin(v) * pi;
                        let ti = if t { 1.0 } else { 0.0 };
                        let obs = if t { y / pi } else { 0.0 };
                        obs + (ti - pi) * h / pi - self.mu0
                    }
                    Some(Form::DoublyRobust) => m0 - self.mu0 + if t { (y - m0) / pi } else { 0.0 },
                };
                *sum += phi;
            }
        }
        Ok(self
            .forms
            .iter()
            .zip(sums)
            .map(|(f, s)| f.as_ref().map(|_| s / n as f64))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn availability_follows_quadrant() {
        let spec = DgpSpec::default();
        let kinds = [EstimatorKind::IpwPop, EstimatorKind::Reg, EstimatorKind::BcOls, EstimatorKind::Hybrid];
        let avail = |q| {
            TruthInfluence::new(&spec, 20.0, q, FitMode::Ols, &kinds, 1000)
                .unwrap()
                .available()
        };
        assert_eq!(avail(Quadrant::CC), [true, true, true, false]);
        assert_eq!(avail(Quadrant::CI), [true, false, false, false]);
        assert_eq!(avail(Quadrant::IC), [false, true, false, false]);
        assert_eq!(avail(Quadrant::II), [false, false, false, false]);
    }

    #[test]
    fn constant_propensity_turns_ipw_into_dr() {
        // π0 = 1/2: v = 2 E[c cᵀ]⁻¹ (0, β) ≈ (0, 2β), so h ≈ −m0.
        let mut spec = DgpSpec::default();
        spec.alpha = vec![0.0; 4];
        let tr = TruthInfluence::new(&spec, 20.0, Quadrant::CC, FitMode::Ols, &[EstimatorKind::IpwPop], 200_000)
            .unwrap();
        let Some(Form::Propensity { v, .. }) = &tr.forms[0] else {
            panic!("expected a propensity form")
        };
        assert!(v[0].abs() < 0.02, "{v:?}");
        for (vj, bj) in v[1..].iter().zip(&spec.beta) {
            assert!((vj - 2.0 * bj).abs() < 0.02, "{v:?}");
        }
    }
}
