//! CSV and JSON output.
//!
//! Records CSV columns:
//! `realization,mode,K,R_min,d_x_over_lambda,status,tx_power_dbm,min_sinr_margin,iterations,wall_ms`.
//! Power and margin are empty unless the run converged; `wall_ms` is empty
//! unless timing was enabled.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ScenarioConfig;
use super::run::{summarize, Experiment, OracleRow, RunRecord, Summary, SweepRow};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 10] = [
    "realization",
    "mode",
    "K",
    "R_min",
    "d_x_over_lambda",
    "status",
    "tx_power_dbm",
    "min_sinr_margin",
    "iterations",
    "wall_ms",
];

fn opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_default()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

pub fn write_records_csv<W: Write>(records: &[RunRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.realization.to_string(),
            r.mode.to_string(),
            r.k.to_string(),
            r.r_min.to_string(),
            r.d_x_over_lambda.to_string(),
            r.status.as_str().to_string(),
            opt(r.tx_power_dbm, |v| format!("{v:.9}")),
            opt(r.min_sinr_margin, |v| format!("{v:.3e}")),
            r.iterations.to_string(),
            opt(r.wall_ms, |v| format!("{v:.3}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn records_csv_string(records: &[RunRecord]) -> String {
    let mut buf = Vec::new();
    write_records_csv(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

pub fn write_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records_csv(records, BufWriter::new(file)).map_err(|e| csv_error(path, e))
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let result = (|| -> csv::Result<()> {
        w.write_record([
            "axis", "value", "mode", "K", "N", "dof", "runs", "converged", "infeasible", "mean_tx_power_dbm",
        ])?;
        for r in rows {
            w.write_record([
                r.axis.to_string(),
                r.value.to_string(),
                r.mode.to_string(),
                r.k.to_string(),
                r.n_elements.to_string(),
                r.dof.to_string(),
                r.runs.to_string(),
                r.converged.to_string(),
                r.infeasible.to_string(),
                opt(r.mean_power_dbm, |v| format!("{v:.6}")),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    result.map_err(|e| csv_error(path, e))
}

pub fn write_oracle_csv(rows: &[OracleRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let result = (|| -> csv::Result<()> {
        w.write_record(["realization", "closed_form_watts", "solved_watts", "relative_error"])?;
        for r in rows {
            w.write_record([
                r.realization.to_string(),
                format!("{:e}", r.closed_form_watts),
                opt(r.solved_watts, |v| format!("{v:e}")),
                opt(r.relative_error, |v| format!("{v:e}")),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    result.map_err(|e| csv_error(path, e))
}

/// Content hash of the config in the style of a git blob id, over SHA-256:
/// `sha256("blob <len>\0<canonical json>")`.
pub fn config_hash(config: &ScenarioConfig) -> String {
    let body = serde_json::to_string(config).expect("config serializes");
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", body.len()).as_bytes());
    h.update(body.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub records: Vec<RunRecord>,
    pub summary: Summary,
}

impl Report {
    pub fn from_experiment(exp: &Experiment) -> Self {
        Self {
            config_hash: config_hash(&exp.config),
            config: exp.config.clone(),
            records: exp.records.clone(),
            summary: exp.summary.clone(),
        }
    }

    /// Recomputes the summary from the stored records.
    pub fn recompute_summary(&self) -> Summary {
        summarize(&self.records, self.config.aggregate)
    }
}

pub fn write_json(exp: &Experiment, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &Report::from_experiment(exp)).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_json(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: Report = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if config_hash(&report.config) != report.config_hash {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "config hash does not match config".into(),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_records_give_header_only() {
        assert_eq!(records_csv_string(&[]), format!("{}\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
        b.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn unwritable_path_reports_path() {
        let err = write_csv(&[], Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
    }
}
