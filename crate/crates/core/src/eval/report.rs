use std::path::Path;

use super::{EvalError, Result};
use crate::format::{parse_sig6, sig6};

pub const REPORT_HEADER: &str =
    "configuration,oracle_loss,oracle_accuracy,measured_e,sweep_projections";

/// One evaluated configuration. `measured_e` is NaN for runs without a
/// classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub configuration: String,
    pub oracle_loss: f64,
    pub oracle_accuracy: f64,
    pub measured_e: f64,
    pub sweep_projections: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl ReportRow {
    fn check(&self) -> Result<()> {
        if self.configuration.contains([',', '\n', '"']) {
            return Err(EvalError::Invalid(format!(
                "configuration name {:?} must not contain commas, quotes or newlines",
                self.configuration
            )));
        }
        let finite = [self.oracle_loss, self.oracle_accuracy]
            .iter()
            .chain(&self.sweep_projections)
            .all(|v| v.is_finite());
        if !finite {
            return Err(EvalError::Invalid(format!(
                "non-finite metric in report row `{}`",
                self.configuration
            )));
        }
        Ok(())
    }

    fn to_csv(&self) -> String {
        let sweep: Vec<String> = self.sweep_projections.iter().map(|&v| sig6(v)).collect();
        format!(
            "{},{},{},{},{}",
            self.configuration,
            sig6(self.oracle_loss),
            sig6(self.oracle_accuracy),
            sig6(self.measured_e),
            sweep.join(";")
        )
    }

    fn from_csv(line: &str, row: usize) -> Result<Self> {
        let bad = |what: &str| EvalError::Invalid(format!("report row {row}: {what}"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(&format!("expected 5 fields, got {}", f.len())));
        }
        let num = |s: &str| parse_sig6(s).ok_or_else(|| bad(&format!("bad number `{s}`")));
        let sweep_projections = if f[4].is_empty() {
            Vec::new()
        } else {
            f[4].split(';').map(num).collect::<Result<_>>()?
        };
        Ok(Self {
            configuration: f[0].to_string(),
            oracle_loss: num(f[1])?,
            oracle_accuracy: num(f[2])?,
            measured_e: num(f[3])?,
            sweep_projections,
        })
    }
}

impl EvalReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            r.check()?;
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(REPORT_HEADER) => {}
            other => {
                return Err(EvalError::Invalid(format!(
                    "report header mismatch: {other:?}"
                )))
            }
        }
        let rows = lines
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| ReportRow::from_csv(l, i + 2))
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Writes `report` to `path`.
pub fn emit_report(report: &EvalReport, path: &Path) -> Result<()> {
    report.write(path)
}
