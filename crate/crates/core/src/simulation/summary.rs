use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Monte Carlo performance of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub estimator: String,
    pub successes: usize,
    pub failures: usize,
    pub mean: f64,
    pub bias: f64,
    pub pct_bias: f64,
    /// Sample SD with the R − 1 divisor; 0 for a single replicate.
    pub sd: f64,
    pub rmse: f64,
    /// Median absolute error.
    pub mae: f64,
    pub coverage: f64,
    pub mean_se: f64,
    /// Monte Carlo SE of the bias, SD/√R.
    pub mcse: f64,
}

impl SummaryRow {
    pub fn variance(&self) -> f64 {
        self.sd * self.sd
    }

    /// |bias| in Monte Carlo standard errors.
    pub fn bias_z(&self) -> f64 {
        (self.bias / self.mcse).abs()
    }

    /// Placeholder row for an estimator that failed on every replicate.
    pub fn all_failed(estimator: impl Into<String>, failures: usize) -> Self {
        Self {
            estimator: estimator.into(),
            successes: 0,
            failures,
            mean: f64::NAN,
            bias: f64::NAN,
            pct_bias: f64::NAN,
            sd: f64::NAN,
            rmse: f64::NAN,
            mae: f64::NAN,
            coverage: f64::NAN,
            mean_se: f64::NAN,
            mcse: f64::NAN,
        }
    }
}

/// Normal quantile for a two-sided interval at `level`.
pub fn critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("CI level must lie in (0, 1), got {level}")));
    }
    Ok(Normal::standard().inverse_cdf(0.5 + level / 2.0))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Summarizes successful replicates. `ses[r]` is the standard error that
/// accompanies `estimates[r]`.
pub fn summarize(
    estimator: &str,
    estimates: &[f64],
    ses: &[f64],
    failures: usize,
    mu0: f64,
    level: f64,
) -> Result<SummaryRow> {
    if estimates.is_empty() {
        return Err(Error::AllFailed);
    }
    if ses.len() != estimates.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates but {} standard errors",
            estimates.len(),
            ses.len()
        )));
    }
    let z = critical_value(level)?;
    let r = estimates.len();
    let avg = mean(estimates);
    let bias = avg - mu0;
    let sd = if r > 1 {
        (estimates.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (r - 1) as f64).sqrt()
    } else {
        0.0
    };
    let errors: Vec<f64> = estimates.iter().map(|v| v - mu0).collect();
    let rmse = mean(&errors.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt();
    let mae = median(errors.iter().map(|e| e.abs()).collect());
    let covered = errors.iter().zip(ses).filter(|(e, se)| e.abs() <= z * **se).count();
    Ok(SummaryRow {
        estimator: estimator.to_string(),
        successes: r,
        failures,
        mean: avg,
        bias,
        pct_bias: 100.0 * bias / mu0,
        sd,
        rmse,
        mae,
        coverage: covered as f64 / r as f64,
        mean_se: mean(ses),
        mcse: sd / (r as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_estimates_cover() {
        let row = summarize("e", &[3.0; 5], &[0.1; 5], 0, 3.0, 0.95).unwrap();
        assert_eq!((row.bias, row.sd, row.coverage, row.rmse), (0.0, 0.0, 1.0, 0.0));
    }

    #[test]
    fn alternating_plus_minus_one() {
        let r = 10;
        let est: Vec<f64> = (0..r).map(|i| if i % 2 == 0 { 6.0 } else { 4.0 }).collect();
        let row = summarize("e", &est, &vec![1.0; r], 0, 5.0, 0.95).unwrap();
        assert_eq!(row.bias, 0.0);
        assert!((row.sd - (r as f64 / (r as f64 - 1.0)).sqrt()).abs() < 1e-15);
        assert_eq!(row.mae, 1.0);
        assert!((row.rmse - 1.0).abs() < 1e-15);
        assert!((row.mcse - row.sd / (r as f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_replicate_moments() {
        let row = summarize("e", &[2.5], &[0.3], 2, 2.0, 0.9).unwrap();
        assert_eq!((row.mean, row.bias, row.sd, row.mae, row.failures), (2.5, 0.5, 0.0, 0.5, 2));
        assert!((row.pct_bias - 25.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(summarize("e", &[], &[], 3, 0.0, 0.95).unwrap_err(), Error::AllFailed);
        assert!(summarize("e", &[1.0], &[1.0], 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn critical_values() {
        assert!((critical_value(0.95).unwrap() - 1.959963984540054).abs() < 1e-9);
        assert!((critical_value(0.9).unwrap() - 1.6448536269514722).abs() < 1e-9);
    }
}
