//! Working models: the linear outcome regression m(x, β) = b(x)ᵀβ and the
//! logistic propensity π(x, α) = expit(c(x)ᵀα).

use crate::error::{Error, Result};
use crate::numkernel::{self, expit, least_squares, DesignMatrix, NewtonOptions, SolveReport};

/// Label of the synthetic 1/π̂ regressor appended for SRR fits.
pub const INV_PROPENSITY: &str = "inv-propensity";

/// Observed data (t, x, t·y).
///
/// `y` holds NaN wherever `t` is false; estimators never read those slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    t: Vec<bool>,
    y: Vec<f64>,
    columns: Vec<(String, Vec<f64>)>,
}

impl Dataset {
    pub fn new(t: Vec<bool>, y: Vec<Option<f64>>, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = t.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need n >= 2 observations, got {n}")));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "outcome has length {}, indicator has {n}",
                y.len()
            )));
        }
        let mut yv = Vec::with_capacity(n);
        for (i, (&ti, yi)) in t.iter().zip(&y).enumerate() {
            match (ti, yi) {
                (true, Some(v)) if v.is_finite() => yv.push(*v),
                (true, Some(_)) => {
                    return Err(Error::InvalidInput(format!("non-finite outcome at row {i}")))
                }
                (true, None) => {
                    return Err(Error::InvalidInput(format!("outcome missing at row {i} where t = 1")))
                }
                (false, Some(_)) => {
                    return Err(Error::InvalidInput(format!("outcome present at row {i} where t = 0")))
                }
                (false, None) => yv.push(f64::NAN),
            }
        }
        let mut ds = Self {
            t,
            y: yv,
            columns: Vec::with_capacity(columns.len()),
        };
        for (name, values) in columns {
            ds.push_column(name, values)?;
        }
        Ok(ds)
    }

    fn push_column(&mut self, name: String, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "column `{name}` has length {}, expected {}",
                values.len(),
                self.n()
            )));
        }
        if self.columns.iter().any(|(c, _)| *c == name) {
            return Err(Error::InvalidInput(format!("duplicate column `{name}`")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value in `{name}` at row {i}")));
        }
        self.columns.push((name, values));
        Ok(())
    }

    pub fn with_column(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.push_column(name.into(), values)?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn t(&self) -> &[bool] {
        &self.t
    }

    /// Outcomes; NaN where unobserved.
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn observed(&self, i: usize) -> Option<f64> {
        self.t[i].then(|| self.y[i])
    }

    pub fn complete_cases(&self) -> usize {
        self.t.iter().filter(|&&v| v).count()
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|(c, _)| c == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(c, _)| c.as_str())
    }
}

/// Named-column basis, linear in its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BasisSpec {
    pub intercept: bool,
    pub columns: Vec<String>,
    /// Append 1/π̂ as the last regressor (SRR).
    #[serde(default)]
    pub inv_propensity: bool,
}

impl BasisSpec {
    /// Intercept plus the named columns.
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            intercept: true,
            columns: columns.into_iter().map(Into::into).collect(),
            inv_propensity: false,
        }
    }

    pub fn intercept_only() -> Self {
        Self::new(Vec::<String>::new())
    }

    pub fn with_inv_propensity(mut self) -> Self {
        self.inv_propensity = true;
        self
    }

    pub fn len(&self) -> usize {
        usize::from(self.intercept) + self.columns.len() + usize::from(self.inv_propensity)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.len());
        if self.intercept {
            labels.push("(intercept)".to_string());
        }
        labels.extend(self.columns.iter().cloned());
        if self.inv_propensity {
            labels.push(INV_PROPENSITY.to_string());
        }
        labels
    }
}

fn check_propensities(pi: &[f64], n: usize) -> Result<()> {
    if pi.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "propensities have length {}, data have {n} rows",
            pi.len()
        )));
    }
    if let Some(i) = pi.iter().position(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::InvalidInput(format!(
            "propensity at row {i} is {} (must lie in (0, 1])",
            pi[i]
        )));
    }
    Ok(())
}

/// Materializes b(x) (or c(x)): intercept, named columns, then 1/π̂.
pub fn build_design(d: &Dataset, spec: &BasisSpec, pi: Option<&[f64]>) -> Result<DesignMatrix> {
    let n = d.n();
    for (k, c) in spec.columns.iter().enumerate() {
        if spec.columns[..k].contains(c) {
            return Err(Error::InvalidInput(format!("duplicate basis column `{c}`")));
        }
    }
    let cols: Vec<&[f64]> = spec
        .columns
        .iter()
        .map(|c| d.column(c))
        .collect::<Result<_>>()?;
    let inv = if spec.inv_propensity {
        let pi = pi.ok_or(Error::MissingPropensity)?;
        check_propensities(pi, n)?;
        Some(pi)
    } else {
        None
    };
    let p = spec.len();
    let mut data = Vec::with_capacity(n * p);
    for i in 0..n {
        if spec.intercept {
            data.push(1.0);
        }
        data.extend(cols.iter().map(|c| c[i]));
        if let Some(pi) = inv {
            data.push(1.0 / pi[i]);
        }
    }
    DesignMatrix::new(n, p, data, spec.labels())
}

/// How β is estimated; fixes A(x, β) in Σ t A(x)(y − m) = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// A(x) = b(x).
    Ols,
    /// A(x) = b(x)/π̂.
    Wls,
    /// A(x) = (b(x), 1/π̂), with 1/π̂ also a regressor.
    Srr,
}

impl FitMode {
    pub fn name(self) -> &'static str {
        match self {
            FitMode::Ols => "ols",
            FitMode::Wls => "wls",
            FitMode::Srr => "srr",
        }
    }
}

/// A fitted outcome regression.
#[derive(Debug, Clone)]
pub struct FittedOutcome {
    /// Basis actually fitted (carries the 1/π̂ column for SRR).
    pub spec: BasisSpec,
    pub coefficients: Vec<f64>,
    pub mode: FitMode,
    /// Design on the training data.
    pub design: DesignMatrix,
    /// Propensities the fit used, if any.
    pub propensity: Option<Vec<f64>>,
    /// m̂_i for every training row, observed or not.
    pub fitted: Vec<f64>,
    pub report: SolveReport,
}

impl FittedOutcome {
    /// A(x_i) for every training row.
    pub fn a_rows(&self) -> Vec<Vec<f64>> {
        (0..self.design.nrows())
            .map(|i| {
                let row = self.design.row(i);
                match (self.mode, &self.propensity) {
                    (FitMode::Wls, Some(pi)) => row.iter().map(|v| v / pi[i]).collect(),
                    _ => row.to_vec(),
                }
            })
            .collect()
    }

    /// m_β(x_i) = b(x_i) for every training row (linear bases).
    pub fn gradient_rows(&self) -> Vec<Vec<f64>> {
        (0..self.design.nrows())
            .map(|i| self.design.row(i).to_vec())
            .collect()
    }

    /// Σ_i t_i A(x_i)(y_i − m̂_i), the estimating-equation residual.
    pub fn estimating_equation(&self, d: &Dataset) -> Vec<f64> {
        let mut out = vec![0.0; self.coefficients.len()];
        for (i, a) in self.a_rows().iter().enumerate() {
            if d.t()[i] {
                let r = d.y()[i] - self.fitted[i];
                out.iter_mut().zip(a).for_each(|(o, ak)| *o += ak * r);
            }
        }
        out
    }
}

/// Fits the outcome regression on the complete cases.
pub fn fit_outcome(
    d: &Dataset,
    spec: &BasisSpec,
    mode: FitMode,
    pi: Option<&[f64]>,
) -> Result<FittedOutcome> {
    let spec = match mode {
        FitMode::Srr => spec.clone().with_inv_propensity(),
        _ => spec.clone(),
    };
    if matches!(mode, FitMode::Wls | FitMode::Srr) && pi.is_none() {
        return Err(Error::MissingPropensity);
    }
    if let Some(pi) = pi {
        check_propensities(pi, d.n())?;
    }
    let design = build_design(d, &spec, pi)?;
    let p = design.ncols();
    let available = d.complete_cases();
    if available < p {
        return Err(Error::TooFewCompleteCases {
            available,
            required: p,
        });
    }
    let weights: Vec<f64> = (0..d.n())
        .map(|i| match (d.t()[i], mode, pi) {
            (false, _, _) => 0.0,
            (true, FitMode::Wls, Some(pi)) => 1.0 / pi[i],
            (true, _, _) => 1.0,
        })
        .collect();
    let response: Vec<f64> = (0..d.n()).map(|i| d.observed(i).unwrap_or(0.0)).collect();
    let report = least_squares(&design, &response, Some(&weights)).map_err(|e| match (e, mode) {
        (Error::RankDeficient { context }, FitMode::Srr) => Error::rank(format!(
            "SRR design with appended 1/π̂ column is unstable for small or near-constant propensities: {context}"
        )),
        (e, _) => e,
    })?;
    let fitted = design.mul_vec(&report.coefficients);
    Ok(FittedOutcome {
        spec,
        coefficients: report.coefficients.clone(),
        mode,
        design,
        propensity: pi.map(<[f64]>::to_vec),
        fitted,
        report,
    })
}

/// m̂_i = b(x_i)ᵀβ̂ on `d`; SRR fits need the propensities of `d`'s rows.
pub fn predict_outcome(f: &FittedOutcome, d: &Dataset, pi: Option<&[f64]>) -> Result<Vec<f64>> {
    let design = build_design(d, &f.spec, pi)?;
    Ok(design.mul_vec(&f.coefficients))
}

/// A fitted logistic propensity model.
#[derive(Debug, Clone)]
pub struct FittedPropensity {
    pub spec: BasisSpec,
    pub coefficients: Vec<f64>,
    pub floor: Option<f64>,
    pub design: DesignMatrix,
    /// expit(c(x_i)ᵀα̂) before flooring.
    pub raw: Vec<f64>,
    /// Reported π̂_i (floored when a floor is set).
    pub fitted: Vec<f64>,
    pub report: SolveReport,
}

impl FittedPropensity {
    /// B(x_i) = c(x_i), the ML score weights.
    pub fn score_rows(&self) -> Vec<Vec<f64>> {
        (0..self.design.nrows())
            .map(|i| self.design.row(i).to_vec())
            .collect()
    }

    /// π_α(x_i) = π̂_i(1 − π̂_i)c(x_i), on the unfloored fit.
    pub fn gradient_rows(&self) -> Vec<Vec<f64>> {
        (0..self.design.nrows())
            .map(|i| {
                let w = self.raw[i] * (1.0 - self.raw[i]);
                self.design.row(i).iter().map(|c| w * c).collect()
            })
            .collect()
    }

    /// Σ_i (t_i − π̂_i) c(x_i) on the unfloored fit.
    pub fn score(&self, d: &Dataset) -> Vec<f64> {
        let mut out = vec![0.0; self.coefficients.len()];
        for i in 0..d.n() {
            let r = f64::from(u8::from(d.t()[i])) - self.raw[i];
            out.iter_mut()
                .zip(self.design.row(i))
                .for_each(|(o, c)| *o += r * c);
        }
        out
    }

    /// Number of reported propensities strictly below `threshold`.
    pub fn count_below(&self, threshold: f64) -> usize {
        self.fitted.iter().filter(|&&p| p < threshold).count()
    }
}

/// Floors probabilities at ε, leaving larger ones untouched.
pub fn apply_floor(pi: &[f64], floor: f64) -> Vec<f64> {
    pi.iter().map(|&p| p.max(floor)).collect()
}

/// Binary-regression maximum likelihood for π(x, α); any floor is applied
/// after the fit, never inside the likelihood.
pub fn fit_propensity(d: &Dataset, spec: &BasisSpec, floor: Option<f64>) -> Result<FittedPropensity> {
    if spec.inv_propensity {
        return Err(Error::InvalidInput(
            "a propensity basis cannot contain the inverse-propensity regressor".into(),
        ));
    }
    if let Some(eps) = floor {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::InvalidInput(format!("propensity floor must lie in (0, 0.5), got {eps}")));
        }
    }
    let design = build_design(d, spec, None)?;
    let report = numkernel::logistic_newton(&design, d.t(), NewtonOptions::default())?;
    let raw: Vec<f64> = design
        .mul_vec(&report.coefficients)
        .into_iter()
        .map(expit)
        .collect();
    let fitted = match floor {
        Some(eps) => apply_floor(&raw, eps),
        None => raw.clone(),
    };
    Ok(FittedPropensity {
        spec: spec.clone(),
        coefficients: report.coefficients.clone(),
        floor,
        design,
        raw,
        fitted,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset::new(
            vec![true, false],
            vec![Some(1.0), None],
            vec![("x1".into(), vec![2.0, 5.0])],
        )
        .unwrap()
    }

    #[test]
    fn design_with_intercept() {
        let x = build_design(&small(), &BasisSpec::new(["x1"]), None).unwrap();
        assert_eq!(x.row(0), &[1.0, 2.0]);
        assert_eq!(x.row(1), &[1.0, 5.0]);
    }

    #[test]
    fn design_with_inverse_propensity() {
        let mut spec = BasisSpec::new(["x1"]).with_inv_propensity();
        spec.intercept = false;
        let x = build_design(&small(), &spec, Some(&[0.5, 0.25])).unwrap();
        assert_eq!(x.column(1), vec![2.0, 4.0]);
        assert_eq!(x.labels()[1], INV_PROPENSITY);
        assert_eq!(build_design(&small(), &spec, None).unwrap_err(), Error::MissingPropensity);
    }

    #[test]
    fn design_missing_column() {
        assert_eq!(
            build_design(&small(), &BasisSpec::new(["q"]), None).unwrap_err(),
            Error::MissingColumn("q".into())
        );
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![true, false], vec![Some(1.0), Some(2.0)], vec![]).is_err());
        assert!(Dataset::new(vec![true, true], vec![Some(1.0), None], vec![]).is_err());
        assert!(Dataset::new(vec![true], vec![Some(1.0)], vec![]).is_err());
        assert!(small().with_column("x1", vec![0.0, 0.0]).is_err());
        assert!(small().with_column("x2", vec![0.0, f64::NAN]).is_err());
    }

    fn d4() -> Dataset {
        Dataset::new(
            vec![true, true, true, false],
            vec![Some(2.0), Some(4.0), Some(6.0), None],
            vec![("x1".into(), vec![0.0, 1.0, 2.0, 3.0])],
        )
        .unwrap()
    }

    const D4_PI: [f64; 4] = [0.5, 0.8, 0.4, 0.25];

    #[test]
    fn exact_linear_outcome_interpolates() {
        let f = fit_outcome(&d4(), &BasisSpec::new(["x1"]), FitMode::Ols, None).unwrap();
        for i in 0..3 {
            assert!((f.fitted[i] - d4().y()[i]).abs() < 1e-13);
        }
        assert!((f.fitted[3] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn wls_intercept_only_is_inverse_weighted_mean() {
        let f = fit_outcome(&d4(), &BasisSpec::intercept_only(), FitMode::Wls, Some(&D4_PI)).unwrap();
        assert!((f.coefficients[0] - 96.0 / 23.0).abs() < 1e-14);
    }

    #[test]
    fn srr_with_constant_propensity_is_rank_deficient() {
        let r = fit_outcome(&d4(), &BasisSpec::intercept_only(), FitMode::Srr, Some(&[0.6; 4]));
        assert!(matches!(r, Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn outcome_errors() {
        let spec = BasisSpec::new(["x1"]);
        assert_eq!(
            fit_outcome(&d4(), &spec, FitMode::Wls, None).unwrap_err(),
            Error::MissingPropensity
        );
        let two = Dataset::new(
            vec![true, false, false],
            vec![Some(1.0), None, None],
            vec![("x1".into(), vec![0.0, 1.0, 2.0])],
        )
        .unwrap();
        assert_eq!(
            fit_outcome(&two, &spec, FitMode::Ols, None).unwrap_err(),
            Error::TooFewCompleteCases {
                available: 1,
                required: 2
            }
        );
    }

    #[test]
    fn predict_examples() {
        let f = fit_outcome(&d4(), &BasisSpec::new(["x1"]), FitMode::Ols, None).unwrap();
        let f = FittedOutcome {
            coefficients: vec![1.0, 1.0],
            ..f
        };
        let pred = predict_outcome(&f, &small(), None).unwrap();
        assert_eq!(pred[0], 3.0);

        let srr = fit_outcome(&d4(), &BasisSpec::new(["x1"]), FitMode::Srr, Some(&D4_PI)).unwrap();
        let srr = FittedOutcome {
            coefficients: vec![0.0, 0.0, 1.0],
            ..srr
        };
        let pred = predict_outcome(&srr, &d4(), Some(&D4_PI)).unwrap();
        assert_eq!(pred[3], 4.0);
        let zero = FittedOutcome {
            coefficients: vec![0.0; 3],
            ..srr
        };
        assert!(predict_outcome(&zero, &d4(), Some(&D4_PI))
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn propensity_intercept_only_and_one_class() {
        let g = fit_propensity(&d4(), &BasisSpec::intercept_only(), None).unwrap();
        assert!(g.fitted.iter().all(|p| (p - 0.75).abs() < 1e-12));
        let all = Dataset::new(vec![true, true], vec![Some(1.0), Some(2.0)], vec![]).unwrap();
        assert_eq!(
            fit_propensity(&all, &BasisSpec::intercept_only(), None).unwrap_err(),
            Error::OneClassOnly
        );
    }

    #[test]
    fn floor_applies_after_fit() {
        // t mostly 0 at low x so the smallest fitted propensity is tiny
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 4.0).collect();
        let t: Vec<bool> = (0..40).map(|i| i % 3 == 0 && i > 12 || i == 5 || i > 30).collect();
        let y = t.iter().map(|&ti| ti.then_some(1.0)).collect();
        let d = Dataset::new(t, y, vec![("x".into(), x)]).unwrap();
        let raw = fit_propensity(&d, &BasisSpec::new(["x"]), None).unwrap();
        let floored = fit_propensity(&d, &BasisSpec::new(["x"]), Some(0.1)).unwrap();
        assert_eq!(raw.coefficients, floored.coefficients);
        let i = (0..40)
            .min_by(|&a, &b| raw.raw[a].total_cmp(&raw.raw[b]))
            .unwrap();
        assert!(raw.fitted[i] < 0.1);
        assert_eq!(floored.fitted[i], 0.1);
        assert!(floored.fitted.iter().all(|&p| p >= 0.1));
        assert!(fit_propensity(&d, &BasisSpec::new(["x"]), Some(0.7)).is_err());
    }
}
