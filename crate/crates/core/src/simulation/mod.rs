//! Monte Carlo harness: data generation, analyst bases per quadrant,
//! replicate evaluation and summaries.

mod dgp;
mod summary;
mod truth;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dgp::{
    generate, generate_with_streams, propensity_probe, true_mean, true_mean_with_draws, DgpSpec, MeanProvenance,
    OutcomeTerm, PropensityProbe, StreamSeeds, Transform, TrueMean, ORACLE_SEED, PROBE_DRAWS, TRUE_MEAN_DRAWS,
};
pub use summary::{critical_value, summarize, SummaryRow};
pub use truth::{TruthInfluence, TRUTH_DRAWS};

use crate::analysis::{Analysis, AnalysisSpec, EstimatorKind, EstimatorOptions, PlugIns};
use crate::error::{Error, Result};
use crate::influence::{linearity_diagnostic, LinearityReport};
use crate::models::{BasisSpec, FitMode};

/// Which analyst bases are correct, written (propensity, outcome).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    CC,
    CI,
    IC,
    II,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::CC, Quadrant::CI, Quadrant::IC, Quadrant::II];

    pub fn propensity_correct(self) -> bool {
        matches!(self, Quadrant::CC | Quadrant::CI)
    }

    pub fn outcome_correct(self) -> bool {
        matches!(self, Quadrant::CC | Quadrant::IC)
    }

    /// (outcome basis, propensity basis): latents `z*` when correct,
    /// transforms `x*` otherwise, always with an intercept.
    pub fn bases(self, spec: &DgpSpec) -> (BasisSpec, BasisSpec) {
        let pick = |correct: bool| {
            BasisSpec::new(if correct {
                spec.latent_names()
            } else {
                spec.observed_names()
            })
        };
        (pick(self.outcome_correct()), pick(self.propensity_correct()))
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Quadrant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|q| q.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown quadrant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub quadrant: Quadrant,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub level: f64,
    pub options: EstimatorOptions,
    pub outcome_mode: FitMode,
    pub floor: Option<f64>,
    /// Also record each replicate's mean influence at the truth.
    pub truth_influence: bool,
}

impl ScenarioConfig {
    pub fn new(quadrant: Quadrant, n: usize, replicates: usize, seed: u64, estimators: Vec<EstimatorKind>) -> Self {
        Self {
            quadrant,
            n,
            replicates,
            seed,
            estimators,
            level: 0.95,
            options: EstimatorOptions::default(),
            outcome_mode: FitMode::Ols,
            floor: None,
            truth_influence: false,
        }
    }

    fn validate(&self, spec: &DgpSpec) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidInput("replicates must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidInput("no estimators requested".into()));
        }
        critical_value(self.level)?;
        let (outcome, propensity) = self.quadrant.bases(spec);
        let extra = usize::from(self.estimators.contains(&EstimatorKind::Srr));
        let widest = (outcome.len() + extra)
            .max(propensity.len())
            .max(self.options.degree + 1);
        if self.n < 10 * widest {
            return Err(Error::InvalidInput(format!(
                "n = {} is below 10 x the largest basis size {widest}",
                self.n
            )));
        }
        Ok(())
    }
}

/// One replicate's results, in the order of `ScenarioConfig::estimators`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub seed: u64,
    /// (estimate, sandwich SE) or the error raised.
    pub results: Vec<Result<(f64, f64)>>,
    pub truth_means: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCSummary {
    pub mu0: f64,
    pub level: f64,
    pub replicates: usize,
    pub rows: Vec<SummaryRow>,
}

impl MCSummary {
    pub fn row(&self, kind: EstimatorKind) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.estimator == kind.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub true_mean: TrueMean,
    pub summary: MCSummary,
    pub replicates: Vec<ReplicateOutcome>,
}

impl ScenarioRun {
    /// Regresses √n(μ̂_r − μ0) on √n·(mean influence at truth)_r over the
    /// replicates where both exist.
    pub fn linearity(&self, kind: EstimatorKind) -> Result<LinearityReport> {
        let idx = self
            .config
            .estimators
            .iter()
            .position(|&k| k == kind)
            .ok_or_else(|| Error::InvalidInput(format!("{kind} was not run")))?;
        let (est, infl): (Vec<f64>, Vec<f64>) = self
            .replicates
            .iter()
            .filter_map(|r| match (&r.results[idx], r.truth_means.get(idx).copied().flatten()) {
                (Ok((mu, _)), Some(phi)) => Some((*mu, phi)),
                _ => None,
            })
            .unzip();
        linearity_diagnostic(&est, &infl, self.config.n, self.true_mean.value)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate r under a master seed.
pub fn replicate_seed(master: u64, r: usize) -> u64 {
    splitmix64(master ^ splitmix64(r as u64))
}

/// Runs every replicate (in parallel on the current rayon pool) and
/// summarizes in replicate order. Estimator errors are counted, never fatal.
pub fn run_scenario(cfg: &ScenarioConfig, spec: &DgpSpec) -> Result<ScenarioRun> {
    spec.validate()?;
    cfg.validate(spec)?;
    let mu0 = true_mean(spec)?;
    let truth = if cfg.truth_influence {
        Some(TruthInfluence::new(
            spec,
            mu0.value,
            cfg.quadrant,
            cfg.outcome_mode,
            &cfg.estimators,
            TRUTH_DRAWS,
        )?)
    } else {
        None
    };
    let (outcome, propensity) = cfg.quadrant.bases(spec);
    let analysis_spec = AnalysisSpec {
        outcome: Some(outcome),
        outcome_mode: cfg.outcome_mode,
        propensity: Some(propensity),
        floor: cfg.floor,
        options: cfg.options,
    };
    let plugins = PlugIns::default();

    let replicates: Vec<ReplicateOutcome> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(cfg.seed, r);
            let k = cfg.estimators.len();
            let data = match generate(spec, cfg.n, seed) {
                Ok(d) => d,
                Err(e) => {
                    return ReplicateOutcome {
                        seed,
                        results: vec![Err(e); k],
                        truth_means: vec![None; k],
                    }
                }
            };
            let analysis = Analysis::new(&data, &analysis_spec, &plugins);
            let results = cfg
                .estimators
                .iter()
                .map(|&kind| analysis.estimate(kind).map(|e| (e.report.estimate, e.se())))
                .collect();
            let truth_means = match &truth {
                Some(tr) => tr.mean_influence(spec, &data).unwrap_or_else(|_| vec![None; k]),
                None => vec![None; k],
            };
            ReplicateOutcome {
                seed,
                results,
                truth_means,
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(cfg.estimators.len());
    for (j, kind) in cfg.estimators.iter().enumerate() {
        let mut est = Vec::with_capacity(cfg.replicates);
        let mut ses = Vec::with_capacity(cfg.replicates);
        let mut failures = 0;
        for rep in &replicates {
            match &rep.results[j] {
                Ok((mu, se)) => {
                    est.push(*mu);
                    ses.push(*se);
                }
                Err(_) => failures += 1,
            }
        }
        rows.push(match summarize(kind.name(), &est, &ses, failures, mu0.value, cfg.level) {
            Ok(row) => row,
            Err(Error::AllFailed) => SummaryRow::all_failed(kind.name(), failures),
            Err(e) => return Err(e),
        });
    }
    Ok(ScenarioRun {
        config: cfg.clone(),
        true_mean: mu0,
        summary: MCSummary {
            mu0: mu0.value,
            level: cfg.level,
            replicates: cfg.replicates,
            rows,
        },
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrant_bases() {
        let spec = DgpSpec::default();
        let (o, p) = Quadrant::CI.bases(&spec);
        assert_eq!(p.columns, ["z1", "z2", "z3", "z4"]);
        assert_eq!(o.columns, ["x1", "x2", "x3", "x4"]);
        assert!(o.intercept && p.intercept);
        assert_eq!("ic".parse::<Quadrant>().unwrap(), Quadrant::IC);
    }

    #[test]
    fn replicate_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|r| replicate_seed(42, r)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(replicate_seed(1, 0), replicate_seed(2, 0));
    }

    #[test]
    fn single_replicate_summary_is_that_replicate() {
        let spec = DgpSpec::default();
        let cfg = ScenarioConfig::new(Quadrant::CC, 200, 1, 9, vec![EstimatorKind::BcOls, EstimatorKind::Reg]);
        let run = run_scenario(&cfg, &spec).unwrap();
        let (mu, se) = run.replicates[0].results[0].clone().unwrap();
        let row = &run.summary.rows[0];
        assert_eq!(row.mean, mu);
        assert_eq!(row.mean_se, se);
        assert_eq!(row.sd, 0.0);
        assert_eq!(row.bias, mu - 20.0);
    }

    #[test]
    fn config_validation() {
        let spec = DgpSpec::default();
        let mut cfg = ScenarioConfig::new(Quadrant::CC, 40, 1, 0, vec![EstimatorKind::Reg]);
        assert!(run_scenario(&cfg, &spec).is_err());
        cfg.n = 200;
        cfg.replicates = 0;
        assert!(run_scenario(&cfg, &spec).is_err());
    }

    #[test]
    fn failures_are_counted() {
        // A floor outside (0, 0.5) breaks every propensity fit, but the
        // regression estimator is unaffected.
        let spec = DgpSpec::default();
        let mut cfg = ScenarioConfig::new(Quadrant::CC, 100, 3, 5, vec![EstimatorKind::Reg, EstimatorKind::IpwPop]);
        cfg.floor = Some(0.7);
        let run = run_scenario(&cfg, &spec).unwrap();
        assert_eq!(run.summary.rows[0].failures, 0);
        assert_eq!(run.summary.rows[1].failures, 3);
        assert!(run.summary.rows[1].mean.is_nan());
    }
}
