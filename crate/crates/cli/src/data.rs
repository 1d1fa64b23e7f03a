use std::collections::BTreeSet;
use std::path::Path;

use drmean::models::Dataset;

use crate::config::DataSection;
use crate::CliError;

/// A loaded data file plus any supplied nuisance columns.
pub struct LoadedData {
    pub dataset: Dataset,
    pub pi: Option<Vec<f64>>,
    pub m: Option<Vec<f64>>,
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f == "NA"
}

/// Reads `path` as comma-separated values with a header row. Only the
/// indicator, outcome, supplied nuisance and `covariates` columns are
/// parsed; row numbers in messages count data rows from 1.
pub fn load(path: &Path, section: &DataSection, covariates: &BTreeSet<String>) -> Result<LoadedData, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .clone();
    let index = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("{}: no column named `{name}`", path.display())))
    };
    let t_col = index(&section.indicator)?;
    let y_col = index(&section.outcome)?;
    let pi_col = section.propensity.as_deref().map(index).transpose()?;
    let m_col = section.prediction.as_deref().map(index).transpose()?;
    let cov_cols: Vec<(String, usize)> = covariates
        .iter()
        .map(|c| index(c).map(|i| (c.clone(), i)))
        .collect::<Result<_, _>>()?;

    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut pi = Vec::new();
    let mut m = Vec::new();
    let mut covs: Vec<Vec<f64>> = vec![Vec::new(); cov_cols.len()];
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let number = |i: usize, what: &str| -> Result<f64, CliError> {
            let raw = field(i);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Data(format!("row {row}: {what} `{raw}` is not a finite number")))
        };
        let ti = match field(t_col) {
            "1" => true,
            "0" => false,
            other => {
                return Err(CliError::Data(format!(
                    "row {row}: indicator `{}` must be 0 or 1, got `{other}`",
                    section.indicator
                )))
            }
        };
        let yi = if ti {
            if is_missing(field(y_col)) {
                return Err(CliError::Data(format!("row {row}: outcome missing where indicator is 1")));
            }
            Some(number(y_col, "outcome")?)
        } else {
            if !is_missing(field(y_col)) {
                return Err(CliError::Data(format!(
                    "row {row}: outcome `{}` present where indicator is 0",
                    field(y_col)
                )));
            }
            None
        };
        t.push(ti);
        y.push(yi);
        if let Some(c) = pi_col {
            pi.push(number(c, "propensity")?);
        }
        if let Some(c) = m_col {
            m.push(number(c, "prediction")?);
        }
        for ((name, c), out) in cov_cols.iter().zip(covs.iter_mut()) {
            out.push(number(*c, name)?);
        }
    }
    let columns = cov_cols.into_iter().map(|(name, _)| name).zip(covs).collect();
    let dataset = Dataset::new(t, y, columns).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(LoadedData {
        dataset,
        pi: pi_col.map(|_| pi),
        m: m_col.map(|_| m),
    })
}
