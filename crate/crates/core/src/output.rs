//! Run outputs: the sampled time series, CSV writers, and the run report.

use serde::Serialize;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::ph::{AuditRecord, TscVerdict};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("unknown channel `{requested}`; available: {available}")]
    UnknownChannel {
        requested: String,
        available: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Named channels sampled at accepted integration steps.
#[derive(Clone, Debug, Default)]
pub struct TimeSeries {
    pub time: Vec<f64>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(names: Vec<String>) -> Self {
        let columns = names.iter().map(|_| Vec::new()).collect();
        Self {
            time: Vec::new(),
            names,
            columns,
        }
    }

    pub fn push_row(&mut self, t: f64, row: &[f64]) {
        assert_eq!(row.len(), self.columns.len());
        self.time.push(t);
        for (col, v) in self.columns.iter_mut().zip(row) {
            col.push(*v);
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn channel_or_err(&self, name: &str) -> Result<&[f64], OutputError> {
        self.channel(name).ok_or_else(|| OutputError::UnknownChannel {
            requested: name.to_string(),
            available: self.names.join(", "),
        })
    }

    /// Indices of a channel selection, erroring with the available list on an
    /// unknown name.
    pub fn select(&self, selected: &[String]) -> Result<Vec<usize>, OutputError> {
        selected
            .iter()
            .map(|name| {
                self.names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| OutputError::UnknownChannel {
                        requested: name.clone(),
                        available: self.names.join(", "),
                    })
            })
            .collect()
    }
}

/// 17 significant digits: enough to reproduce an f64 bit-exactly.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_timeseries_csv(
    path: impl AsRef<Path>,
    series: &TimeSeries,
    selected: Option<&[String]>,
) -> Result<(), OutputError> {
    let idx: Vec<usize> = match selected {
        Some(sel) => series.select(sel)?,
        None => (0..series.names.len()).collect(),
    };
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "t")?;
    for &i in &idx {
        write!(w, ",{}", series.names[i])?;
    }
    writeln!(w)?;
    for k in 0..series.len() {
        write!(w, "{}", fmt(series.time[k]))?;
        for &i in &idx {
            write!(w, ",{}", fmt(series.columns[i][k]))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_audit_csv(path: impl AsRef<Path>, records: &[AuditRecord]) -> Result<(), OutputError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "t,device,H,Hdot_grad,Hdot_ports,residual,p_source,p_interconn,p_diss,rho_limiter"
    )?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt(r.t),
            r.device,
            fmt(r.h),
            fmt(r.h_dot_gradient),
            fmt(r.h_dot_ports),
            fmt(r.balance_residual),
            fmt(r.p_source),
            fmt(r.p_interconnection),
            fmt(r.p_dissipation),
            fmt(r.rho),
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct CollapseReport {
    pub t: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct DeviceVerdictReport {
    pub device: String,
    pub verdicts: TscVerdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditSummary {
    pub max_balance_residual: f64,
    pub max_j_skew: f64,
    pub min_r_eigenvalue: f64,
    pub min_dissipation: f64,
    pub min_storage: f64,
}

/// Verdict-level summary of one run; everything here is recomputable from
/// the time-series and audit files.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub scenario: String,
    pub classification: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collapse: Option<CollapseReport>,
    pub devices: Vec<DeviceVerdictReport>,
    /// Final sample of each recorded channel.
    pub settled_values: Vec<(String, f64)>,
    pub audit: AuditSummary,
}

pub fn write_report_json(path: impl AsRef<Path>, report: &Report) -> Result<(), OutputError> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Write the standard output files for a run into `dir`, returning the paths.
pub fn emit_outputs(
    dir: impl AsRef<Path>,
    series: &TimeSeries,
    audit: &[AuditRecord],
    report: &Report,
    selected: Option<&[String]>,
) -> Result<Vec<PathBuf>, OutputError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let ts = dir.join("timeseries.csv");
    let au = dir.join("audit.csv");
    let rp = dir.join("report.json");
    write_timeseries_csv(&ts, series, selected)?;
    write_audit_csv(&au, audit)?;
    write_report_json(&rp, report)?;
    Ok(vec![ts, au, rp])
}
