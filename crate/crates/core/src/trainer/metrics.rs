use std::io::{self, BufRead, Write};

use crate::format::{parse_sig6, sig6};

pub const METRICS_HEADER: &str =
    "iteration,loss_d_real,loss_d_fake,loss_g_adv,loss_g_cls,gamma,lc_real,measured_e";

/// One logged training record. Classifier-dependent fields are NaN in the
/// cGAN baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub loss_d_real: f64,
    pub loss_d_fake: f64,
    pub loss_g_adv: f64,
    pub loss_g_cls: f64,
    pub gamma: f64,
    pub lc_real: f64,
    pub measured_e: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let mut s = self.iteration.to_string();
        for v in [
            self.loss_d_real,
            self.loss_d_fake,
            self.loss_g_adv,
            self.loss_g_cls,
            self.gamma,
            self.lc_real,
            self.measured_e,
        ] {
            s.push(',');
            s.push_str(&sig6(v));
        }
        s
    }

    pub fn from_csv(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 8 {
            return None;
        }
        let v = |i: usize| parse_sig6(f[i]);
        Some(Self {
            iteration: f[0].parse().ok()?,
            loss_d_real: v(1)?,
            loss_d_fake: v(2)?,
            loss_g_adv: v(3)?,
            loss_g_cls: v(4)?,
            gamma: v(5)?,
            lc_real: v(6)?,
            measured_e: v(7)?,
        })
    }
}

/// In-memory metrics collector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{METRICS_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{}", r.to_csv())?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> io::Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim_end() != METRICS_HEADER {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        "unexpected metrics header",
                    ));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            rows.push(MetricsRow::from_csv(&line).ok_or_else(|| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("bad metrics row {}", i + 1),
                )
            })?);
        }
        Ok(Self { rows })
    }
}
