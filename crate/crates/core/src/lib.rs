//! Mean estimation with outcomes missing at random: regression, inverse
//! propensity weighting and doubly robust estimators, influence-function
//! standard errors and a Monte Carlo harness.
//!
//! ```
//! use drmean::{Analysis, AnalysisSpec, BasisSpec, Dataset, EstimatorKind, PlugIns};
//!
//! let x: Vec<f64> = (0..40).map(|i| (i % 10) as f64 / 10.0).collect();
//! let t: Vec<bool> = (0..40).map(|i| i % 3 != 0 || i % 2 == 0).collect();
//! let y = x.iter().zip(&t).map(|(v, &r)| r.then(|| 1.0 + 2.0 * v)).collect();
//! let data = Dataset::new(t, y, vec![("x1".into(), x)])?;
//!
//! let spec = AnalysisSpec::new(BasisSpec::new(["x1"]), BasisSpec::new(["x1"]));
//! let plugins = PlugIns::default();
//! let analysis = Analysis::new(&data, &spec, &plugins);
//! let est = analysis.estimate(EstimatorKind::BcOls)?;
//! assert!((est.report.estimate - 1.9).abs() < 1e-12);
//! assert!(est.se() >= 0.0);
//! # Ok::<(), drmean::Error>(())
//! ```

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod influence;
pub mod models;
pub mod numkernel;
pub mod simulation;

pub use analysis::{Analysis, AnalysisSpec, Estimate, EstimatorKind, EstimatorOptions, PlugIns};
pub use error::{Error, Result};
pub use models::{BasisSpec, Dataset, FitMode};
