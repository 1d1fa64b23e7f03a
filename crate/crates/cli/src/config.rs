use std::path::{Path, PathBuf};

use drmean::analysis::{EstimatorKind, EstimatorOptions};
use drmean::models::{BasisSpec, FitMode};
use drmean::simulation::{DgpSpec, Quadrant};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataSection>,
    pub outcome: Option<OutcomeSection>,
    pub propensity: Option<PropensitySection>,
    #[serde(default)]
    pub estimators: EstimatorSection,
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    #[serde(default = "default_indicator")]
    pub indicator: String,
    #[serde(default = "default_outcome")]
    pub outcome: String,
    /// Column holding supplied fitted propensities.
    pub propensity: Option<String>,
    /// Column holding supplied outcome predictions.
    pub prediction: Option<String>,
}

fn default_indicator() -> String {
    "t".into()
}

fn default_outcome() -> String {
    "y".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSection {
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default = "default_mode")]
    pub mode: FitMode,
}

fn default_mode() -> FitMode {
    FitMode::Ols
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropensitySection {
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default = "default_true")]
    pub intercept: bool,
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    /// Estimator names; all registered estimators when absent.
    pub names: Option<Vec<String>>,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::degree")]
    pub degree: usize,
    #[serde(default = "defaults::small_pi")]
    pub small_pi_threshold: f64,
    /// Confidence level of the intervals in `estimate` output.
    #[serde(default = "defaults::level")]
    pub level: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            names: None,
            delta: defaults::delta(),
            lambda: defaults::lambda(),
            degree: defaults::degree(),
            small_pi_threshold: defaults::small_pi(),
            level: defaults::level(),
        }
    }
}

mod defaults {
    use drmean::analysis::EstimatorOptions;

    pub fn delta() -> f64 {
        EstimatorOptions::default().delta
    }
    pub fn lambda() -> f64 {
        EstimatorOptions::default().lambda
    }
    pub fn degree() -> usize {
        EstimatorOptions::default().degree
    }
    pub fn small_pi() -> f64 {
        EstimatorOptions::default().small_pi_threshold
    }
    pub fn level() -> f64 {
        0.95
    }
}

impl EstimatorSection {
    pub fn kinds(&self) -> Result<Vec<EstimatorKind>, CliError> {
        match &self.names {
            None => Ok(EstimatorKind::ALL.to_vec()),
            Some(names) if names.is_empty() => Err(CliError::Config("[estimators] names is empty".into())),
            Some(names) => names
                .iter()
                .map(|n| n.parse().map_err(|_| CliError::Config(format!("unknown estimator `{n}`"))))
                .collect(),
        }
    }

    pub fn options(&self) -> Result<EstimatorOptions, CliError> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(CliError::Config(format!("delta must lie in [0, 1], got {}", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CliError::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(EstimatorOptions {
            delta: self.delta,
            lambda: self.lambda,
            degree: self.degree,
            small_pi_threshold: self.small_pi_threshold,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// Named DGP preset, used when no `dgp` table is given.
    pub preset: Option<String>,
    pub dgp: Option<DgpSpec>,
    pub quadrant: Quadrant,
    pub n: usize,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::level")]
    pub level: f64,
    /// Record mean influence at the truth for the linearity diagnostic.
    #[serde(default)]
    pub truth_influence: bool,
}

impl SimulateSection {
    pub fn dgp(&self) -> Result<DgpSpec, CliError> {
        let spec = match (&self.dgp, &self.preset) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("give either [simulate] preset or [simulate.dgp], not both".into()))
            }
            (Some(d), None) => d.clone(),
            (None, p) => DgpSpec::preset(p.as_deref().unwrap_or("default")).map_err(|e| CliError::Config(e.to_string()))?,
        };
        spec.validate().map_err(|e| CliError::Config(format!("[simulate.dgp]: {e}")))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Markdown,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

impl OutcomeSection {
    pub fn basis(&self) -> BasisSpec {
        BasisSpec {
            intercept: self.intercept,
            columns: self.columns.clone(),
            inv_propensity: false,
        }
    }
}

impl PropensitySection {
    pub fn basis(&self) -> BasisSpec {
        BasisSpec {
            intercept: self.intercept,
            columns: self.columns.clone(),
            inv_propensity: false,
        }
    }
}

/// A parsed config with the raw bytes kept for hashing.
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: Vec<u8>,
    pub dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&raw).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, raw, dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }
}
