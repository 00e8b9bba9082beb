use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::{Hyperparams, Stat, TrialReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    /// One row per trial plus `mean` and `std` rows; write-only.
    Csv,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidParameter(format!(
                "unknown report format {other:?}"
            ))),
        }
    }
}

fn params_cell(p: &Option<Hyperparams>) -> String {
    match p {
        None => String::new(),
        Some(Hyperparams::Snaps(s)) => format!("lambda={};mu={}", s.lambda, s.mu),
        Some(Hyperparams::Raps(r)) => format!("k_reg={};lambda_reg={}", r.k_reg, r.lambda_reg),
    }
}

pub fn encode_report_csv(report: &TrialReport) -> String {
    let mut out =
        String::from("trial,model_split,conformal_split,n_calib,coverage,size,sh,sscv,params\n");
    for t in &report.trials {
        let m = &t.metrics;
        let sscv = m.sscv.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{},{}",
            t.trial,
            t.model_split,
            t.conformal_split,
            t.n_calib,
            m.coverage,
            m.size,
            m.sh,
            sscv,
            params_cell(&t.params)
        );
    }
    let a = &report.aggregate;
    let row = |name: &str, f: fn(&Stat) -> f64| {
        format!(
            "{name},,,,{:.6},{:.6},{:.6},{:.6},\n",
            f(&a.coverage),
            f(&a.size),
            f(&a.sh),
            f(&a.sscv)
        )
    };
    out.push_str(&row("mean", |s| s.mean));
    out.push_str(&row("std", |s| s.std));
    out
}

pub fn write_report(
    report: &TrialReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Json => serde_json::to_string_pretty(report)?,
        ReportFormat::Csv => encode_report_csv(report),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a JSON report.
pub fn read_report(path: impl AsRef<Path>) -> Result<TrialReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
