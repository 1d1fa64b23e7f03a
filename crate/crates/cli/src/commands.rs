use std::collections::BTreeSet;

use drmean::analysis::{Analysis, AnalysisSpec, EstimatorKind, PlugIns};
use drmean::influence::{check_identities, collapse_check, CheckStatus, IdentityCheck, IdentityReport};
use drmean::models::{fit_outcome, fit_propensity, BasisSpec, Dataset, FitMode, FittedOutcome};
use drmean::simulation::{
    critical_value, generate, propensity_probe, replicate_seed, run_scenario, DgpSpec, ScenarioConfig, PROBE_DRAWS,
};
use drmean::Error;
use sha2::{Digest, Sha256};

use crate::config::{LoadedConfig, RunConfig, SimulateSection};
use crate::data::{self, LoadedData};
use crate::table::{num, opt_num, Table};
use crate::CliError;

/// A finished command: the table to write and the exit code to return.
pub struct Report {
    pub table: Table,
    pub code: i32,
}

fn covariates(cfg: &RunConfig) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    if let Some(o) = &cfg.outcome {
        set.extend(o.columns.iter().cloned());
    }
    if let Some(p) = &cfg.propensity {
        set.extend(p.columns.iter().cloned());
    }
    set
}

fn load_data(loaded: &LoadedConfig) -> Result<LoadedData, CliError> {
    let section = loaded
        .config
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [data] section".into()))?;
    data::load(&loaded.resolve(&section.path), section, &covariates(&loaded.config))
}

fn analysis_spec(cfg: &RunConfig) -> Result<AnalysisSpec, CliError> {
    Ok(AnalysisSpec {
        outcome: cfg.outcome.as_ref().map(|o| o.basis()),
        outcome_mode: cfg.outcome.as_ref().map_or(FitMode::Ols, |o| o.mode),
        propensity: cfg.propensity.as_ref().map(|p| p.basis()),
        floor: cfg.propensity.as_ref().and_then(|p| p.floor),
        options: cfg.estimators.options()?,
    })
}

pub fn estimate(loaded: &LoadedConfig) -> Result<Report, CliError> {
    let cfg = &loaded.config;
    let kinds = cfg.estimators.kinds()?;
    let spec = analysis_spec(cfg)?;
    let z = critical_value(cfg.estimators.level).map_err(|e| CliError::Config(e.to_string()))?;
    let data = load_data(loaded)?;
    let plugins = PlugIns {
        pi: data.pi,
        m: data.m,
    };
    let analysis = Analysis::new(&data.dataset, &spec, &plugins);

    let mut table = Table::new(&[
        "estimator",
        "estimate",
        "se",
        "ci_lower",
        "ci_upper",
        "gamma",
        "constant",
        "status",
        "message",
    ]);
    let mut successes = 0;
    for (kind, result) in analysis.estimate_all(&kinds) {
        match result {
            Ok(e) => {
                successes += 1;
                let (mu, se) = (e.report.estimate, e.se());
                table.push(vec![
                    kind.name().into(),
                    num(mu),
                    num(se),
                    num(mu - z * se),
                    num(mu + z * se),
                    opt_num(e.report.gamma),
                    opt_num(e.report.constant),
                    "ok".into(),
                    e.report.warnings.join("; "),
                ]);
            }
            Err(err) => table.push(vec![
                kind.name().into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                "error".into(),
                err.to_string(),
            ]),
        }
    }
    table.comments.push(format!(
        "n = {}, complete cases = {}, level = {}",
        data.dataset.n(),
        data.dataset.complete_cases(),
        cfg.estimators.level
    ));
    Ok(Report {
        table,
        code: if successes == 0 { 4 } else { 0 },
    })
}

fn simulate_section(cfg: &RunConfig) -> Result<&SimulateSection, CliError> {
    cfg.simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [simulate] section".into()))
}

fn scenario_config(cfg: &RunConfig, sim: &SimulateSection, seed: u64) -> Result<ScenarioConfig, CliError> {
    let mut sc = ScenarioConfig::new(sim.quadrant, sim.n, sim.replicates, seed, cfg.estimators.kinds()?);
    sc.level = sim.level;
    sc.options = cfg.estimators.options()?;
    sc.outcome_mode = cfg.outcome.as_ref().map_or(FitMode::Ols, |o| o.mode);
    sc.floor = cfg.propensity.as_ref().and_then(|p| p.floor);
    sc.truth_influence = sim.truth_influence;
    Ok(sc)
}

fn scenario_error(e: Error) -> CliError {
    match e {
        Error::InvalidInput(_) | Error::DimensionMismatch(_) => CliError::Config(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

pub fn simulate(loaded: &LoadedConfig, seed_override: Option<u64>) -> Result<Report, CliError> {
    let cfg = &loaded.config;
    let sim = simulate_section(cfg)?;
    let spec = sim.dgp()?;
    let seed = seed_override.unwrap_or(sim.seed);
    let sc = scenario_config(cfg, sim, seed)?;
    let run = run_scenario(&sc, &spec).map_err(scenario_error)?;
    let probe = propensity_probe(&spec, PROBE_DRAWS, sc.options.small_pi_threshold).map_err(scenario_error)?;

    let mut table = Table::new(&[
        "estimator",
        "successes",
        "failures",
        "mean",
        "bias",
        "pct_bias",
        "sd",
        "rmse",
        "mae",
        "coverage",
        "mean_se",
        "mcse",
    ]);
    table.comments = vec![
        "drmean simulate".into(),
        format!("config_sha256 = {}", hex::encode(Sha256::digest(&loaded.raw))),
        format!("seed = {seed}"),
        format!("mu0 = {} ({})", num(run.true_mean.value), run.true_mean.describe()),
        format!(
            "quadrant = {}, n = {}, replicates = {}, level = {}",
            sc.quadrant, sc.n, sc.replicates, sc.level
        ),
        format!(
            "true propensity over {} draws: min = {}, max = {}, fraction below {} = {}",
            probe.draws,
            num(probe.min),
            num(probe.max),
            probe.threshold,
            num(probe.below_fraction)
        ),
    ];
    if sc.truth_influence {
        for &kind in &sc.estimators {
            if let Ok(lin) = run.linearity(kind) {
                table.comments.push(format!(
                    "linearity {kind}: correlation = {}, slope = {}, replicates = {}",
                    num(lin.correlation),
                    num(lin.slope),
                    lin.replicates
                ));
            }
        }
    }
    for row in &run.summary.rows {
        table.push(vec![
            row.estimator.clone(),
            row.successes.to_string(),
            row.failures.to_string(),
            num(row.mean),
            num(row.bias),
            num(row.pct_bias),
            num(row.sd),
            num(row.rmse),
            num(row.mae),
            num(row.coverage),
            num(row.mean_se),
            num(row.mcse),
        ]);
    }
    Ok(Report { table, code: 0 })
}

/// Outcome fits in every mode that the identities cover; failures become
/// not-applicable rows.
fn identity_fits(
    d: &Dataset,
    basis: &BasisSpec,
    pi: &[f64],
    report: &mut IdentityReport,
) -> Vec<FittedOutcome> {
    let mut fits = Vec::new();
    for mode in [FitMode::Ols, FitMode::Wls, FitMode::Srr] {
        match fit_outcome(d, basis, mode, Some(pi)) {
            Ok(f) => fits.push(f),
            Err(e) => report.checks.push(IdentityCheck::not_applicable(
                format!("weighted_residual({})", mode.name()),
                f64::NAN,
                f64::NAN,
                format!("fit failed: {e}"),
            )),
        }
    }
    fits
}

fn identities(
    d: &Dataset,
    basis: Option<&BasisSpec>,
    pi: &[f64],
    m: &[f64],
) -> Result<IdentityReport, CliError> {
    let mut pre = IdentityReport::default();
    let fits = match basis {
        Some(b) => identity_fits(d, b, pi, &mut pre),
        None => Vec::new(),
    };
    let refs: Vec<&FittedOutcome> = fits.iter().collect();
    let mut report = check_identities(d.t(), d.y(), pi, m, &refs).map_err(|e| CliError::Data(e.to_string()))?;
    report.checks.splice(0..0, pre.checks);
    Ok(report)
}

fn identity_table(report: &IdentityReport) -> Table {
    let mut table = Table::new(&["check", "discrepancy", "tolerance", "status", "note"]);
    for c in &report.checks {
        table.push(vec![
            c.name.clone(),
            num(c.discrepancy),
            num(c.tolerance),
            c.status.label().into(),
            c.note.clone(),
        ]);
    }
    table
}

fn check_data(loaded: &LoadedConfig) -> Result<IdentityReport, CliError> {
    let cfg = &loaded.config;
    let spec = analysis_spec(cfg)?;
    let data = load_data(loaded)?;
    let d = &data.dataset;
    let pi = match (&data.pi, &spec.propensity) {
        (Some(pi), _) => pi.clone(),
        (None, Some(b)) => fit_propensity(d, b, spec.floor)
            .map_err(|e| CliError::Data(format!("propensity fit: {e}")))?
            .fitted,
        (None, None) => {
            return Err(CliError::Config(
                "check needs a [propensity] section or a supplied propensity column".into(),
            ))
        }
    };
    let m = match (&data.m, &spec.outcome) {
        (Some(m), _) => m.clone(),
        (None, Some(b)) => fit_outcome(d, b, spec.outcome_mode, Some(&pi))
            .map_err(|e| CliError::Data(format!("outcome fit: {e}")))?
            .fitted,
        (None, None) => {
            return Err(CliError::Config(
                "check needs an [outcome] section or a supplied prediction column".into(),
            ))
        }
    };
    let mut report = identities(d, spec.outcome.as_ref(), &pi, &m)?;
    if let Some(supplied) = &data.m {
        if matches!(spec.outcome_mode, FitMode::Wls | FitMode::Srr) {
            let mut c = collapse_check(
                &format!("collapse(supplied {})", spec.outcome_mode.name()),
                d.t(),
                d.y(),
                &pi,
                supplied,
            )
            .map_err(|e| CliError::Data(e.to_string()))?;
            c.note = "supplied predictions should satisfy mu-hat = mean(m-hat)".into();
            report.checks.push(c);
        }
    }
    Ok(report)
}

fn check_simulated(loaded: &LoadedConfig, seed_override: Option<u64>) -> Result<IdentityReport, CliError> {
    let cfg = &loaded.config;
    let sim = simulate_section(cfg)?;
    let spec: DgpSpec = sim.dgp()?;
    let seed = seed_override.unwrap_or(sim.seed);
    let sc = scenario_config(cfg, sim, seed)?;
    let d = generate(&spec, sim.n, replicate_seed(seed, 0)).map_err(scenario_error)?;
    let (outcome, propensity) = sim.quadrant.bases(&spec);
    let pi = fit_propensity(&d, &propensity, sc.floor)
        .map_err(|e| CliError::Data(format!("propensity fit: {e}")))?
        .fitted;
    let m = fit_outcome(&d, &outcome, sc.outcome_mode, Some(&pi))
        .map_err(|e| CliError::Data(format!("outcome fit: {e}")))?
        .fitted;
    let mut report = identities(&d, Some(&outcome), &pi, &m)?;

    if sim.replicates >= drmean::influence::MIN_LINEARITY_REPLICATES {
        let mut lin_cfg = sc.clone();
        lin_cfg.truth_influence = true;
        let run = run_scenario(&lin_cfg, &spec).map_err(scenario_error)?;
        for &kind in &lin_cfg.estimators {
            if let Ok(lin) = run.linearity(kind) {
                report.checks.push(IdentityCheck {
                    name: format!("linearity({kind})"),
                    discrepancy: 1.0 - lin.correlation,
                    tolerance: f64::NAN,
                    status: CheckStatus::NotApplicable,
                    note: format!(
                        "diagnostic only: correlation {:.6}, slope {:.6}, {} replicates",
                        lin.correlation, lin.slope, lin.replicates
                    ),
                });
            }
        }
    }
    Ok(report)
}

pub fn check(loaded: &LoadedConfig, seed_override: Option<u64>) -> Result<Report, CliError> {
    let report = if loaded.config.data.is_some() {
        check_data(loaded)?
    } else if loaded.config.simulate.is_some() {
        check_simulated(loaded, seed_override)?
    } else {
        return Err(CliError::Config("check needs a [data] or [simulate] section".into()));
    };
    let table = identity_table(&report);
    Ok(Report {
        table,
        code: if report.passed() { 0 } else { 1 },
    })
}

/// Estimators known to the registry, for `--help` text.
pub fn registry() -> String {
    EstimatorKind::ALL.map(|k| k.name()).join(", ")
}
