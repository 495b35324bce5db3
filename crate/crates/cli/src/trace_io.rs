//! Trace file format: one CSV row per trace column,
//! `kind,iteration,v0,...,v{N-1}`, with kinds `sent`, `residual_input`,
//! `received` and a trailing `final_weights` row.

use ndarray::{Array1, Array2};
use splitglm_core::stderr::IterationTrace;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trace file: {0}")]
    Malformed(String),
}

pub fn write_trace(path: &Path, trace: &IterationTrace) -> Result<(), TraceIoError> {
    let mut f = std::fs::File::create(path).map_err(|source| TraceIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let emit = |f: &mut std::fs::File, kind: &str, it: usize, col: &[f64]| -> std::io::Result<()> {
        write!(f, "{kind},{it}")?;
        for v in col {
            write!(f, ",{v}")?;
        }
        writeln!(f)
    };
    let n = trace.rows();
    let mut buf = vec![0.0; n];
    for r in 0..trace.iterations() {
        for (kind, m) in [
            ("sent", &trace.sent_predictions),
            ("residual_input", &trace.received_residual_inputs),
            ("received", &trace.received_predictions),
        ] {
            for i in 0..n {
                buf[i] = m[[i, r]];
            }
            emit(&mut f, kind, r + 1, &buf).map_err(|source| TraceIoError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
    }
    for i in 0..n {
        buf[i] = trace.weights_final[i];
    }
    emit(&mut f, "final_weights", 0, &buf).map_err(|source| TraceIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Read back the received-prediction matrix from an exported trace.
pub fn read_received_predictions(path: &Path) -> Result<Array2<f64>, TraceIoError> {
    let file = std::fs::File::open(path).map_err(|source| TraceIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut cols: Vec<Array1<f64>> = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|source| TraceIoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if !line.starts_with("received,") {
            continue;
        }
        let mut parts = line.split(',');
        parts.next();
        parts.next();
        let values: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values =
            values.map_err(|e| TraceIoError::Malformed(format!("bad value: {e}")))?;
        cols.push(Array1::from_vec(values));
    }
    if cols.is_empty() {
        return Err(TraceIoError::Malformed("no received rows".into()));
    }
    let n = cols[0].len();
    if cols.iter().any(|c| c.len() != n) {
        return Err(TraceIoError::Malformed("ragged received rows".into()));
    }
    let mut m = Array2::zeros((n, cols.len()));
    for (j, c) in cols.iter().enumerate() {
        m.column_mut(j).assign(c);
    }
    Ok(m)
}

/// Read a coefficient file as written by the fit commands:
/// `column,coefficient,standard_error` rows after `#` comments.
pub fn read_coefficients(path: &Path) -> Result<(Vec<String>, Array1<f64>), TraceIoError> {
    let file = std::fs::File::open(path).map_err(|source| TraceIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut names = Vec::new();
    let mut values = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|source| TraceIoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.starts_with('#') || line.starts_with("column,") || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() < 2 {
            return Err(TraceIoError::Malformed(format!("bad row: {line}")));
        }
        names.push(parts[0].to_string());
        values.push(
            parts[1]
                .parse::<f64>()
                .map_err(|e| TraceIoError::Malformed(format!("bad coefficient: {e}")))?,
        );
    }
    if names.is_empty() {
        return Err(TraceIoError::Malformed("no coefficient rows".into()));
    }
    Ok((names, Array1::from_vec(values)))
}
