//! Experiment reports: per-grid-point rows plus a summary, persisted as
//! `curve.csv`, `summary.json`, and `config.resolved`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{median, percentile};

/// Fixed CSV header. Absent quantities are left empty; the two per-symbol
/// columns (`/n`) are appended after the core schema.
pub const CSV_HEADER: &str =
    "t,j_hat,j_se,j_ref,mmse_hat,mi_hat,mi_ref,mi_rel_err,kde_mi,mi_hat_per_n,mi_ref_per_n";

/// One grid point of an experiment report.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ReportRow {
    pub t: f64,
    pub j_hat: Option<f64>,
    pub j_se: Option<f64>,
    pub j_ref: Option<f64>,
    pub mmse_hat: Option<f64>,
    pub mi_hat: Option<f64>,
    pub mi_ref: Option<f64>,
    pub mi_rel_err: Option<f64>,
    pub kde_mi: Option<f64>,
}

impl ReportRow {
    fn csv_line(&self, n: usize) -> String {
        let mut line = String::new();
        write!(line, "{}", self.t).expect("write");
        for v in [
            self.j_hat,
            self.j_se,
            self.j_ref,
            self.mmse_hat,
            self.mi_hat,
            self.mi_ref,
            self.mi_rel_err,
            self.kde_mi,
            self.mi_hat.map(|v| v / n as f64),
            self.mi_ref.map(|v| v / n as f64),
        ] {
            line.push(',');
            if let Some(v) = v {
                write!(line, "{v}").expect("write");
            }
        }
        line
    }
}

/// Error percentiles and run provenance; everything here is recomputable
/// from the rows except the wall-clock and digests.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config_digest: String,
    pub seed: u64,
    pub command: String,
    pub oracle: Option<String>,
    /// Absolute tolerance of the quadrature behind `mi_ref` (set when the
    /// reference itself is numerical, i.e. the binary-antipodal oracle).
    pub mi_ref_abs_tol: Option<f64>,
    pub integration_rule: Option<String>,
    pub tail: Option<f64>,
    pub trace_cov: Option<f64>,
    pub fisher_median_rel_err: Option<f64>,
    pub fisher_p90_rel_err: Option<f64>,
    pub mi_median_rel_err: Option<f64>,
    pub mi_p90_rel_err: Option<f64>,
    pub clamped_integrand_points: usize,
    pub kde_low_confidence: Option<bool>,
    pub kde_seconds: Option<f64>,
    pub runtime_seconds: f64,
}

/// Full result of one harness command.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    /// Channel dimension, for the per-symbol CSV columns.
    pub dim: usize,
    /// Rows sorted by `t` ascending.
    pub rows: Vec<ReportRow>,
    pub summary: Summary,
    /// Canonical TOML of the fully-defaulted config (written verbatim).
    pub resolved_config: String,
    /// Per-step `(t, loss)` training trace, written when verbose.
    pub loss_trace: Option<Vec<(f64, f64)>>,
}

impl ExperimentReport {
    /// Median and 90th percentile of the per-row relative errors produced by
    /// `select`; `None` when no row carries both quantities.
    pub fn error_percentiles(
        rows: &[ReportRow],
        select: impl Fn(&ReportRow) -> Option<f64>,
    ) -> (Option<f64>, Option<f64>) {
        let errs: Vec<f64> = rows.iter().filter_map(&select).collect();
        if errs.is_empty() {
            (None, None)
        } else {
            (Some(median(&errs)), Some(percentile(&errs, 90.0)))
        }
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.csv_line(self.dim));
            out.push('\n');
        }
        out
    }
}

/// Write `curve.csv`, `summary.json`, `config.resolved`, and (when present)
/// `loss_trace.csv` into `dir`, creating it if needed.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let write = |name: &str, contents: &str| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(path.display().to_string(), e))
    };
    write("curve.csv", &report.csv())?;
    let summary = serde_json::to_string_pretty(&report.summary)
        .map_err(|e| Error::numeric(format!("summary serialization failed: {e}")))?;
    write("summary.json", &(summary + "\n"))?;
    write("config.resolved", &report.resolved_config)?;
    if let Some(trace) = &report.loss_trace {
        let mut csv = String::from("step,t,loss\n");
        for (step, (t, loss)) in trace.iter().enumerate() {
            writeln!(csv, "{step},{t},{loss}").expect("write");
        }
        write("loss_trace.csv", &csv)?;
    }
    Ok(())
}
