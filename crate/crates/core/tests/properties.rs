use drmean::analysis::{Analysis, AnalysisSpec, EstimatorKind, PlugIns};
use drmean::estimators::mu_ipw_pop;
use drmean::influence::sandwich_se;
use drmean::models::{fit_outcome, fit_propensity, BasisSpec, Dataset, FitMode};
use drmean::numkernel::{expit, least_squares, DesignMatrix};
use drmean::simulation::{generate, generate_with_streams, summarize, DgpSpec, Quadrant, StreamSeeds};
use proptest::prelude::*;

fn design(rows: &[Vec<f64>]) -> DesignMatrix {
    DesignMatrix::from_rows(rows).unwrap()
}

/// Random data with one response-related covariate; every row pattern
/// keeps both response classes present.
fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (30usize..80)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(-2.0f64..2.0, n),
                proptest::collection::vec(-2.0f64..2.0, n),
                proptest::collection::vec(0.0f64..1.0, n),
                proptest::collection::vec(-1.0f64..1.0, n),
            )
        })
        .prop_filter_map("needs both classes", |(x1, x2, unif, noise)| {
            let n = x1.len();
            let t: Vec<bool> = (0..n).map(|i| unif[i] < expit(0.3 + 0.8 * x1[i])).collect();
            let responders = t.iter().filter(|&&v| v).count();
            if responders < 8 || n - responders < 3 {
                return None;
            }
            let y = (0..n)
                .map(|i| t[i].then(|| 5.0 + x1[i] - 0.5 * x2[i] * x2[i] + noise[i]))
                .collect();
            Dataset::new(t, y, vec![("x1".into(), x1), ("x2".into(), x2)]).ok()
        })
}

fn shift(d: &Dataset, c: f64) -> Dataset {
    let y = (0..d.n()).map(|i| d.observed(i).map(|v| v + c)).collect();
    let cols = d
        .column_names()
        .map(|name| (name.to_string(), d.column(name).unwrap().to_vec()))
        .collect();
    Dataset::new(d.t().to_vec(), y, cols).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn least_squares_residuals_are_orthogonal(
        rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 10..40),
        y_seed in proptest::collection::vec(-10.0f64..10.0, 40),
        w_seed in proptest::collection::vec(0.1f64..3.0, 40),
    ) {
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r[0] = 1.0; r }).collect();
        let n = rows.len();
        let x = design(&rows);
        let (y, w) = (&y_seed[..n], &w_seed[..n]);
        if let Ok(fit) = least_squares(&x, y, Some(w)) {
            for k in 0..3 {
                let mut s = 0.0;
                let mut scale = 0.0;
                for i in 0..n {
                    let r = y[i] - rows[i].iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum::<f64>();
                    s += w[i] * rows[i][k] * r;
                    scale += (w[i] * rows[i][k] * y[i]).abs();
                }
                prop_assert!(s.abs() <= 1e-8 * scale.max(1.0), "column {} gap {}", k, s);
            }
        }
    }

    #[test]
    fn weighted_fits_zero_the_weighted_residual_sum(d in dataset_strategy()) {
        let pf = fit_propensity(&d, &BasisSpec::new(["x1"]), None);
        prop_assume!(pf.is_ok());
        let pi = pf.unwrap().fitted;
        for mode in [FitMode::Wls, FitMode::Srr] {
            if let Ok(fit) = fit_outcome(&d, &BasisSpec::new(["x1", "x2"]), mode, Some(&pi)) {
                let (mut s, mut scale) = (0.0, 0.0);
                for i in 0..d.n() {
                    if d.t()[i] {
                        s += (d.y()[i] - fit.fitted[i]) / pi[i];
                        scale += d.y()[i].abs() / pi[i];
                    }
                }
                prop_assert!(s.abs() <= 1e-8 * scale, "{:?} gap {}", mode, s);
            }
        }
    }

    #[test]
    fn location_shift_moves_every_estimate(d in dataset_strategy(), c in -50.0f64..50.0) {
        let spec = AnalysisSpec::new(BasisSpec::new(["x1", "x2"]), BasisSpec::new(["x1"]));
        let plugins = PlugIns::default();
        let shifted = shift(&d, c);
        let a = Analysis::new(&d, &spec, &plugins);
        let b = Analysis::new(&shifted, &spec, &plugins);
        for kind in EstimatorKind::ALL.into_iter().filter(|&k| k != EstimatorKind::IpwHt) {
            let (Ok(u), Ok(v)) = (a.estimate(kind), b.estimate(kind)) else { continue };
            let gap = (v.report.estimate - u.report.estimate - c).abs();
            prop_assert!(gap <= 1e-8 * (1.0 + c.abs() + u.report.estimate.abs()), "{}: gap {}", kind, gap);
            let se_gap = (v.se() - u.se()).abs();
            prop_assert!(se_gap <= 1e-6 * (1.0 + u.se()), "{}: se gap {}", kind, se_gap);
        }
    }

    #[test]
    fn fitted_estimators_have_mean_zero_influence(d in dataset_strategy()) {
        let spec = AnalysisSpec::new(BasisSpec::new(["x1", "x2"]), BasisSpec::new(["x1"]));
        let plugins = PlugIns::default();
        let a = Analysis::new(&d, &spec, &plugins);
        for kind in [EstimatorKind::Reg, EstimatorKind::Imp, EstimatorKind::IpwPop, EstimatorKind::Wls] {
            if let Ok(e) = a.estimate(kind) {
                let scale = e.influence.values.iter().map(|v| v.abs()).fold(1.0, f64::max);
                prop_assert!(e.influence.mean.abs() <= 1e-9 * scale, "{}: {}", kind, e.influence.mean);
            }
        }
    }

    #[test]
    fn ipw_pop_ignores_propensity_scale(
        d in dataset_strategy(),
        c in 0.05f64..1.0,
    ) {
        let pi: Vec<f64> = (0..d.n()).map(|i| 0.2 + 0.6 * expit(d.column("x1").unwrap()[i])).collect();
        let scaled: Vec<f64> = pi.iter().map(|p| c * p).collect();
        let a = mu_ipw_pop(d.t(), d.y(), &pi).unwrap();
        let b = mu_ipw_pop(d.t(), d.y(), &scaled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn sandwich_se_is_permutation_invariant(
        values in proptest::collection::vec(-100.0f64..100.0, 2..200),
        rot in 0usize..200,
    ) {
        let mut perm = values.clone();
        perm.reverse();
        let k = rot % perm.len();
        perm.rotate_left(k);
        let (a, b) = (sandwich_se(&values), sandwich_se(&perm));
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
    }

    #[test]
    fn rmse_decomposes(est in proptest::collection::vec(-5.0f64..5.0, 1..300), mu0 in -3.0f64..3.0) {
        let ses = vec![1.0; est.len()];
        let row = summarize("e", &est, &ses, 0, mu0, 0.95).unwrap();
        let r = est.len() as f64;
        let rhs = row.bias * row.bias + row.sd * row.sd * (r - 1.0) / r;
        prop_assert!((row.rmse * row.rmse - rhs).abs() <= 1e-10 * (1.0 + rhs));
        prop_assert!((0.0..=1.0).contains(&row.coverage));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generation_is_deterministic_and_streams_are_separate(seed in any::<u64>(), other in any::<u64>()) {
        let spec = DgpSpec::default();
        let a = generate(&spec, 120, seed).unwrap();
        let b = generate(&spec, 120, seed).unwrap();
        prop_assert_eq!(a.t(), b.t());
        prop_assert!(a.y().iter().zip(b.y()).all(|(u, v)| u.to_bits() == v.to_bits()));
        let c = generate_with_streams(&spec, 120, StreamSeeds { noise: other, ..StreamSeeds::single(seed) }).unwrap();
        prop_assert_eq!(a.t(), c.t());
        prop_assert_eq!(a.column("x2").unwrap(), c.column("x2").unwrap());
    }

    #[test]
    fn quadrants_use_the_documented_columns(q in prop::sample::select(Quadrant::ALL.to_vec())) {
        let spec = DgpSpec::default();
        let (outcome, propensity) = q.bases(&spec);
        let prefix = |correct: bool| if correct { "z" } else { "x" };
        prop_assert!(outcome.columns.iter().all(|c| c.starts_with(prefix(q.outcome_correct()))));
        prop_assert!(propensity.columns.iter().all(|c| c.starts_with(prefix(q.propensity_correct()))));
    }
}

#[test]
fn expit_is_antisymmetric() {
    for k in 0..10_000 {
        let u = -40.0 + 80.0 * k as f64 / 9_999.0;
        let gap = (expit(-u) - (1.0 - expit(u))).abs();
        assert!(gap <= 2.0 * f64::EPSILON, "u = {u}: {gap}");
    }
}
