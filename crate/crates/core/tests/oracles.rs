//! Exact rational re-derivations of estimator values on small datasets,
//! compared against the floating-point implementation.

use drmean::analysis::{Analysis, AnalysisSpec, EstimatorKind, EstimatorOptions, PlugIns};
use drmean::estimators::{
    gamma, mu_bc, mu_general_pi, mu_hybrid, mu_ipw_const, mu_pi_cov, BcVariant, ConstVariant, GammaVariant,
    PiMode,
};
use drmean::influence::if_model2;
use drmean::models::{fit_outcome, BasisSpec, Dataset, FitMode};
use num_rational::Ratio;

type Q = Ratio<i128>;

fn q(n: i128, d: i128) -> Q {
    Q::new(n, d)
}

fn f(x: Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

fn close(a: f64, exact: Q) -> bool {
    let b = f(exact);
    (a - b).abs() <= 1e-13 * b.abs().max(1.0)
}

struct Exact {
    t: Vec<bool>,
    y: Vec<Q>,
    pi: Vec<Q>,
    m: Vec<Q>,
}

impl Exact {
    fn d4() -> Self {
        Self {
            t: vec![true, true, true, false],
            y: vec![q(2, 1), q(4, 1), q(6, 1), q(0, 1)],
            pi: vec![q(1, 2), q(4, 5), q(2, 5), q(1, 4)],
            m: vec![q(3, 1), q(3, 1), q(5, 1), q(7, 1)],
        }
    }

    fn n(&self) -> Q {
        Q::from_integer(self.t.len() as i128)
    }

    fn tq(&self, i: usize) -> Q {
        Q::from_integer(i128::from(self.t[i]))
    }

    fn y64(&self) -> Vec<f64> {
        (0..self.t.len())
            .map(|i| if self.t[i] { f(self.y[i]) } else { f64::NAN })
            .collect()
    }

    fn pi64(&self) -> Vec<f64> {
        self.pi.iter().map(|&v| f(v)).collect()
    }

    fn m64(&self) -> Vec<f64> {
        self.m.iter().map(|&v| f(v)).collect()
    }

    /// n⁻¹ Σ [t y/π − (t − π) h/π]
    fn aipw(&self, pi: &[Q], h: &[Q]) -> Q {
        let s: Q = (0..self.t.len())
            .map(|i| (self.tq(i) * self.y[i] + (self.tq(i) - pi[i]) * h[i]) / pi[i])
            .sum();
        s / self.n()
    }

    /// Σ t w (v) / Σ t w over complete cases.
    fn weighted_mean(&self, w: impl Fn(Q) -> Q, v: impl Fn(usize) -> Q) -> Q {
        let idx = (0..self.t.len()).filter(|&i| self.t[i]);
        let num: Q = idx.clone().map(|i| w(self.pi[i]) * v(i)).sum();
        let den: Q = idx.map(|i| w(self.pi[i])).sum();
        num / den
    }
}

fn one() -> Q {
    Q::from_integer(1)
}

#[test]
fn constant_h_ipw() {
    let e = Exact::d4();
    let c_nr = e.weighted_mean(|p| (one() - p) / p, |i| e.y[i]);
    assert_eq!(c_nr, q(48, 11));
    let mu_nr = e.aipw(&e.pi, &vec![-c_nr; 4]);
    assert_eq!(mu_nr, q(45, 11));
    let (mu, c) = mu_ipw_const(&e.t, &e.y64(), &e.pi64(), ConstVariant::Nr).unwrap();
    assert!(close(mu, mu_nr) && close(c, c_nr));

    let c_opt = e.weighted_mean(|p| (one() - p) / (p * p), |i| e.y[i]);
    let mu_opt = e.aipw(&e.pi, &vec![-c_opt; 4]);
    let (mu, c) = mu_ipw_const(&e.t, &e.y64(), &e.pi64(), ConstVariant::Opt).unwrap();
    assert!(close(mu, mu_opt) && close(c, c_opt), "{mu} {c} {mu_opt} {c_opt}");
}

#[test]
fn bias_corrected_family() {
    let e = Exact::d4();
    let resid = |i: usize| e.y[i] - e.m[i];
    let gammas = [
        (BcVariant::Ols, Q::from_integer(0)),
        (BcVariant::Pop, e.weighted_mean(|p| one() / p, resid)),
        (BcVariant::Nr, e.weighted_mean(|p| (one() - p) / p, resid)),
        (BcVariant::Opt, e.weighted_mean(|p| (one() - p) / (p * p), resid)),
    ];
    assert_eq!(gammas[1].1, q(7, 23));
    assert_eq!(gammas[2].1, q(3, 11));
    for (variant, g) in gammas {
        let h: Vec<Q> = e.m.iter().map(|&m| -g - m).collect();
        let exact = e.aipw(&e.pi, &h);
        let got = mu_bc(&e.t, &e.y64(), &e.pi64(), &e.m64(), variant).unwrap();
        assert!(close(got.estimate, exact), "{variant:?}: {} vs {}", got.estimate, f(exact));
        assert!(close(got.gamma.unwrap(), g));
    }
    assert!(close(
        gamma(&e.t, &e.y64(), &e.pi64(), &e.m64(), GammaVariant::Opt).unwrap(),
        gammas[3].1
    ));
}

#[test]
fn hybrid_thresholds() {
    let e = Exact::d4();
    for (delta, expect_rows) in [(0.3, 1usize), (0.45, 2), (0.6, 3), (0.9, 4)] {
        let dq = Q::new((delta * 100.0) as i128, 100);
        let s: Q = (0..4)
            .map(|i| {
                if e.pi[i] < dq {
                    e.m[i]
                } else {
                    (e.tq(i) * e.y[i] - (e.tq(i) - e.pi[i]) * e.m[i]) / e.pi[i]
                }
            })
            .sum();
        let exact = s / e.n();
        let got = mu_hybrid(&e.t, &e.y64(), &e.pi64(), &e.m64(), delta).unwrap();
        assert!(close(got.estimate, exact), "delta {delta}");
        assert_eq!(e.pi.iter().filter(|&&p| p < dq).count(), expect_rows);
    }
}

#[test]
fn pi_covariate_degree_one() {
    let e = Exact::d4();
    // y on (1, π) over complete cases, exact 2x2 normal equations
    let cc: Vec<usize> = (0..4).filter(|&i| e.t[i]).collect();
    let k = Q::from_integer(cc.len() as i128);
    let sx: Q = cc.iter().map(|&i| e.pi[i]).sum();
    let sxx: Q = cc.iter().map(|&i| e.pi[i] * e.pi[i]).sum();
    let sy: Q = cc.iter().map(|&i| e.y[i]).sum();
    let sxy: Q = cc.iter().map(|&i| e.pi[i] * e.y[i]).sum();
    let det = k * sxx - sx * sx;
    let b0 = (sxx * sy - sx * sxy) / det;
    let b1 = (k * sxy - sx * sy) / det;
    let exact = e.pi.iter().map(|&p| b0 + b1 * p).sum::<Q>() / e.n();
    let got = mu_pi_cov(&e.t, &e.y64(), &e.pi64(), 1).unwrap();
    assert!(close(got.report.estimate, exact), "{} vs {}", got.report.estimate, f(exact));
    assert!(close(got.coefficients[0], b0) && close(got.coefficients[1], b1));
}

#[test]
fn shrunk_propensities() {
    let e = Exact::d4();
    let rate = q(3, 4);
    for (lambda, lq) in [(1.0, q(1, 1)), (0.5, q(1, 2)), (0.25, q(1, 4))] {
        let shrunk: Vec<Q> = e.pi.iter().map(|&p| (one() - lq) * p + lq * rate).collect();
        let h: Vec<Q> = e.m.iter().map(|&m| -m).collect();
        let exact = e.aipw(&shrunk, &h);
        let got = mu_general_pi(&e.t, &e.y64(), &e.m64(), Some(&e.pi64()), PiMode::Shrunk(lambda)).unwrap();
        assert!(close(got.estimate, exact), "lambda {lambda}");
    }
    // λ = 1: every row weighted by the response rate
    let h: Vec<Q> = e.m.iter().map(|&m| -m).collect();
    assert_eq!(e.aipw(&vec![rate; 4], &h), q(29, 6));
}

#[test]
fn horvitz_thompson_influence() {
    let e = Exact::d4();
    let mu = (0..4).map(|i| e.tq(i) * e.y[i] / e.pi[i]).sum::<Q>() / e.n();
    assert_eq!(mu, q(6, 1));
    let got = if_model2(&e.t, &e.y64(), &e.pi64(), f(mu), &[0.0; 4], None).unwrap();
    let exact = [q(-2, 1), q(-1, 1), q(9, 1), q(-6, 1)];
    for (g, x) in got.values.iter().zip(exact) {
        assert!(close(*g, x));
    }
    // SE = sqrt(Σφ²)/n
    assert!(close(got.se * got.se, q(4 + 1 + 81 + 36, 16)));
}

/// Weighted least squares on (1, x) solved exactly.
fn exact_line(x: &[Q], y: &[Q], w: &[Q]) -> (Q, Q) {
    let sw: Q = w.iter().sum();
    let swx: Q = w.iter().zip(x).map(|(a, b)| *a * *b).sum();
    let swxx: Q = w.iter().zip(x).map(|(a, b)| *a * *b * *b).sum();
    let swy: Q = w.iter().zip(y).map(|(a, b)| *a * *b).sum();
    let swxy: Q = (0..x.len()).map(|i| w[i] * x[i] * y[i]).sum();
    let det = sw * swxx - swx * swx;
    ((swxx * swy - swx * swxy) / det, (sw * swxy - swx * swy) / det)
}

#[test]
fn fitted_outcome_models() {
    let d = Dataset::new(
        vec![true, true, true, false],
        vec![Some(2.0), Some(4.0), Some(7.0), None],
        vec![("x1".into(), vec![0.0, 1.0, 2.0, 3.0])],
    )
    .unwrap();
    let pi = [0.5, 0.8, 0.4, 0.25];
    let piq = [q(1, 2), q(4, 5), q(2, 5), q(1, 4)];
    let xs = [q(0, 1), q(1, 1), q(2, 1)];
    let ys = [q(2, 1), q(4, 1), q(7, 1)];
    let basis = BasisSpec::new(["x1"]);
    let mean_line = |(b0, b1): (Q, Q)| (0..4).map(|i| b0 + b1 * Q::from_integer(i)).sum::<Q>() / q(4, 1);

    let ols = exact_line(&xs, &ys, &[one(); 3]);
    assert_eq!(ols, (q(11, 6), q(5, 2)));
    let fit = fit_outcome(&d, &basis, FitMode::Ols, None).unwrap();
    assert!(close(fit.coefficients[0], ols.0) && close(fit.coefficients[1], ols.1));

    let wls = exact_line(&xs, &ys, &[one() / piq[0], one() / piq[1], one() / piq[2]]);
    let fit = fit_outcome(&d, &basis, FitMode::Wls, Some(&pi)).unwrap();
    assert!(close(fit.coefficients[0], wls.0) && close(fit.coefficients[1], wls.1));

    let spec = AnalysisSpec {
        outcome: Some(basis),
        outcome_mode: FitMode::Ols,
        propensity: None,
        floor: None,
        options: EstimatorOptions::default(),
    };
    let plugins = PlugIns {
        pi: Some(pi.to_vec()),
        m: None,
    };
    let a = Analysis::new(&d, &spec, &plugins);
    assert!(close(a.estimate(EstimatorKind::Reg).unwrap().report.estimate, q(67, 12)));
    assert!(close(a.estimate(EstimatorKind::Wls).unwrap().report.estimate, mean_line(wls)));
}
