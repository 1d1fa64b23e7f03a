use std::io::Write;

use crate::config::Format;
use crate::CliError;

/// 17 significant digits, enough for an exact round trip.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            comments: Vec::new(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, out: &mut dyn Write, format: Format) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Io(e.to_string());
        match format {
            Format::Csv => {
                for c in &self.comments {
                    writeln!(out, "# {c}").map_err(io)?;
                }
                let mut w = csv::Writer::from_writer(out);
                w.write_record(&self.header).map_err(|e| CliError::Io(e.to_string()))?;
                for r in &self.rows {
                    w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
                }
                w.flush().map_err(io)?;
            }
            Format::Markdown => {
                for c in &self.comments {
                    writeln!(out, "<!-- {c} -->").map_err(io)?;
                }
                let line = |cells: &[String]| {
                    let escaped: Vec<String> = cells.iter().map(|c| c.replace('|', "\\|")).collect();
                    format!("| {} |", escaped.join(" | "))
                };
                writeln!(out, "{}", line(&self.header)).map_err(io)?;
                writeln!(out, "|{}", "---|".repeat(self.header.len())).map_err(io)?;
                for r in &self.rows {
                    writeln!(out, "{}", line(r)).map_err(io)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, 96.0 / 23.0, -1e-300, 6.02214076e23, f64::MIN_POSITIVE, 20.0] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(num(f64::NAN), "NaN");
    }

    #[test]
    fn markdown_layout() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x|y".into()]);
        let mut buf = Vec::new();
        t.write(&mut buf, Format::Markdown).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "| a | b |\n|---|---|\n| 1 | x\\|y |\n");
    }
}
