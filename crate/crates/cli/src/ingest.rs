//! CSV ingestion: parse, validate, one-hot encode categoricals, center and
//! optionally standardize, producing a design block and target vector.

use ndarray::{Array1, Array2};
use splitglm_core::design::{center_block, center_target, DesignBlock, TargetVector};
use splitglm_core::family::Family;
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing value at row {row}, column {column:?}")]
    MissingValue { row: usize, column: String },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("no data rows in the file")]
    EmptyData,
    #[error("target column {column:?} must be numeric for the {family} family (row {row})")]
    NonNumericTarget { column: String, family: &'static str, row: usize },
    #[error(transparent)]
    Design(#[from] splitglm_core::design::DesignError),
    #[error(transparent)]
    Family(#[from] splitglm_core::family::FamilyError),
}

/// A parsed CSV held column-major as raw strings.
#[derive(Debug)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<String>>,
    pub nrows: usize,
}

pub fn read_table(path: &Path) -> Result<RawTable, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut columns: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    let mut nrows = 0;
    for record in reader.records() {
        let record = record?;
        for (j, field) in record.iter().enumerate() {
            if j < columns.len() {
                columns[j].push(field.to_string());
            }
        }
        nrows += 1;
    }
    if nrows == 0 {
        return Err(IngestError::EmptyData);
    }
    Ok(RawTable { headers, columns, nrows })
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field == "NA" || field == "na" || field == "NaN" || field == "nan"
}

/// Expanded feature matrix before centering: numeric columns pass through,
/// categorical columns become indicator columns with the lexically first
/// level dropped.
#[derive(Debug)]
pub struct ExpandedFeatures {
    pub matrix: Array2<f64>,
    pub names: Vec<String>,
}

pub fn expand_features(
    table: &RawTable,
    feature_columns: &[String],
) -> Result<ExpandedFeatures, IngestError> {
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    for name in feature_columns {
        let idx = table
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::UnknownColumn(name.clone()))?;
        let raw = &table.columns[idx];
        for (row, field) in raw.iter().enumerate() {
            if is_missing(field) {
                return Err(IngestError::MissingValue { row, column: name.clone() });
            }
        }
        let parsed: Option<Vec<f64>> = raw
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(values) => cols.push((name.clone(), values)),
            None => {
                // categorical: indicator per level, lexically first dropped
                let levels: BTreeSet<&String> = raw.iter().collect();
                let mut iter = levels.into_iter();
                let _reference = iter.next();
                for level in iter {
                    let indicator: Vec<f64> = raw
                        .iter()
                        .map(|f| if f == level { 1.0 } else { 0.0 })
                        .collect();
                    cols.push((format!("{name}={level}"), indicator));
                }
            }
        }
    }
    let ncols = cols.len();
    let mut matrix = Array2::zeros((table.nrows, ncols));
    let mut names = Vec::with_capacity(ncols);
    for (j, (name, values)) in cols.into_iter().enumerate() {
        for (i, v) in values.into_iter().enumerate() {
            matrix[[i, j]] = v;
        }
        names.push(name);
    }
    Ok(ExpandedFeatures { matrix, names })
}

#[derive(Debug)]
pub struct Ingested {
    pub block: DesignBlock<f64>,
    pub target: TargetVector<f64>,
    /// Mean removed from a gaussian target (zero otherwise).
    pub target_mean: f64,
}

/// Full ingestion: features expanded, centered (standardized when asked),
/// target parsed and validated for the family; gaussian targets are
/// centered.
pub fn ingest_csv(
    path: &Path,
    target_column: &str,
    feature_columns: Option<&[String]>,
    family: Family,
    standardize: bool,
) -> Result<Ingested, IngestError> {
    let table = read_table(path)?;
    let target_idx = table
        .headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| IngestError::UnknownColumn(target_column.to_string()))?;
    let default_features: Vec<String> = table
        .headers
        .iter()
        .filter(|h| h.as_str() != target_column)
        .cloned()
        .collect();
    let features = match feature_columns {
        Some(cols) => cols.to_vec(),
        None => default_features,
    };
    let expanded = expand_features(&table, &features)?;
    let block = center_block(expanded.matrix, expanded.names, standardize)?;

    let raw_target = &table.columns[target_idx];
    let mut target_vals = Array1::zeros(table.nrows);
    for (row, field) in raw_target.iter().enumerate() {
        if is_missing(field) {
            return Err(IngestError::MissingValue { row, column: target_column.to_string() });
        }
        target_vals[row] = field.parse::<f64>().map_err(|_| IngestError::NonNumericTarget {
            column: target_column.to_string(),
            family: family.name(),
            row,
        })?;
    }
    let mut target_mean = 0.0;
    if family == Family::Gaussian {
        let (centered, mean) = center_target(&target_vals);
        target_vals = centered;
        target_mean = mean;
    }
    let target = TargetVector::new(target_vals, family)?;
    Ok(Ingested { block, target, target_mean })
}
