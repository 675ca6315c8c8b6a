//! CSV and JSON artifacts of a run.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use thiserror::Error;

use crate::equilibrium::IterationRecord;
use crate::model::{DensityField, PricePath, ValueField};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("cannot serialize {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ReportError + '_ {
    move |source| ReportError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Shortest round-trip text of `x`, with an exponent outside `[1e-4, 1e15)`.
pub fn format_f64(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// Writes equally long columns under `headers`.
pub fn write_columns(path: &Path, headers: &[&str], columns: &[&[f64]]) -> Result<(), ReportError> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(headers).map_err(&err)?;
    let rows = columns.first().map_or(0, |c| c.len());
    for r in 0..rows {
        w.write_record(columns.iter().map(|c| format_f64(c[r]))).map_err(&err)?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `t, price` plus an optional balance residual column.
pub fn write_price(path: &Path, price: &PricePath, residual: Option<&[f64]>) -> Result<(), ReportError> {
    let t = price.grid().nodes();
    match residual {
        Some(r) => write_columns(path, &["t", "price", "residual"], &[&t, price.values(), r]),
        None => write_columns(path, &["t", "price"], &[&t, price.values()]),
    }
}

/// `t, x, u, u_x`.
pub fn write_value_field(path: &Path, u: &ValueField) -> Result<(), ReportError> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["t", "x", "u", "u_x"]).map_err(&err)?;
    let xs = u.space().nodes();
    for (k, t) in u.time().nodes().into_iter().enumerate() {
        let ux = u.gradient(k);
        for (i, x) in xs.iter().enumerate() {
            w.write_record([format_f64(t), format_f64(*x), format_f64(u.slice(k)[i]), format_f64(ux[i])])
                .map_err(&err)?;
        }
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `t, x, m`.
pub fn write_density_field(path: &Path, m: &DensityField) -> Result<(), ReportError> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["t", "x", "m"]).map_err(&err)?;
    let xs = m.space().nodes();
    for (k, t) in m.time().nodes().into_iter().enumerate() {
        for (i, x) in xs.iter().enumerate() {
            w.write_record([format_f64(t), format_f64(*x), format_f64(m.slice(k)[i])])
                .map_err(&err)?;
        }
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `iteration, price_change, balance_residual, damping`.
pub fn write_convergence(path: &Path, history: &[IterationRecord]) -> Result<(), ReportError> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["iteration", "price_change", "balance_residual", "damping"])
        .map_err(&err)?;
    for r in history {
        w.write_record([
            r.iteration.to_string(),
            format_f64(r.price_change),
            format_f64(r.balance_residual),
            format_f64(r.damping),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| ReportError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Seconds since the Unix epoch.
pub fn unix_time() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    pub price: f64,
    pub balance: f64,
}

/// Echo of a run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: Option<PathBuf>, output_dir: PathBuf, seed: u64, tolerances: Tolerances) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            output_dir,
            seed,
            tolerances,
            threads: rayon::current_num_threads(),
            started_unix: unix_time(),
            finished_unix: None,
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn write(&mut self) -> Result<(), ReportError> {
        self.finished_unix = Some(unix_time());
        let path = self.output_dir.join("manifest.json");
        write_json(&path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeGrid;

    #[test]
    fn price_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("price.csv");
        let price = PricePath::from_fn(TimeGrid::new(1.0, 4).unwrap(), |t| 0.1 + t / 3.0).unwrap();
        write_price(&path, &price, None).unwrap();
        let (t, v) = crate::csvio::read_two_columns(&path).unwrap();
        assert_eq!(t, price.grid().nodes());
        assert_eq!(v, price.values());
    }

    #[test]
    fn formatting_round_trips() {
        for x in [0.0, -0.0, 1.0, 0.05, 1e-4, 3.25e-17, -7.5e20, 1.0 / 3.0, f64::MIN_POSITIVE] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(format_f64(1.3877787807814457e-17), "1.3877787807814457e-17");
        assert_eq!(format_f64(0.25), "0.25");
    }
}
