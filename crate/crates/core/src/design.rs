//! Centered feature blocks and validated target vectors.

use crate::family::Family;
use crate::scalar::Scalar;
use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("column {name:?} has zero variance and cannot be standardized")]
    ConstantColumn { name: String },
    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("need at least 2 rows and 1 column, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },
    #[error("duplicate column name {name:?}")]
    DuplicateName { name: String },
    #[error("blocks disagree on row count: {0} vs {1}")]
    RowMismatch(usize, usize),
    #[error("centering violated in column {name:?}: mean {mean}")]
    NotCentered { name: String, mean: f64 },
}

/// One party's feature matrix plus the metadata describing how it was
/// prepared. Columns are centered (optionally standardized); an explicit
/// intercept column, when present, is exempt from the centering invariant.
#[derive(Debug, Clone)]
pub struct DesignBlock<F> {
    values: Array2<F>,
    column_names: Vec<String>,
    centered: bool,
    column_means: Array1<F>,
    column_scales: Option<Array1<F>>,
    intercept_column: Option<usize>,
}

impl<F: Scalar> DesignBlock<F> {
    /// Wrap an already-prepared matrix, checking the block invariants.
    pub fn new(
        values: Array2<F>,
        column_names: Vec<String>,
        centered: bool,
        column_means: Array1<F>,
        column_scales: Option<Array1<F>>,
    ) -> Result<Self, DesignError> {
        let block = Self {
            values,
            column_names,
            centered,
            column_means,
            column_scales,
            intercept_column: None,
        };
        block.validate()?;
        Ok(block)
    }

    fn validate(&self) -> Result<(), DesignError> {
        let (n, p) = self.values.dim();
        if n < 2 || p < 1 {
            return Err(DesignError::TooSmall { rows: n, cols: p });
        }
        assert_eq!(self.column_names.len(), p, "one name per column");
        assert_eq!(self.column_means.len(), p, "one recorded mean per column");
        for (j, name) in self.column_names.iter().enumerate() {
            if self.column_names[..j].contains(name) {
                return Err(DesignError::DuplicateName { name: name.clone() });
            }
        }
        for ((row, col), v) in self.values.indexed_iter() {
            if !v.is_finite() {
                return Err(DesignError::NonFinite { row, col });
            }
        }
        if self.centered {
            let nf = F::from_f64_lossy(n as f64);
            for j in 0..p {
                if Some(j) == self.intercept_column {
                    continue;
                }
                let col = self.values.column(j);
                let mean = col.sum() / nf;
                let var = col.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>()
                    / F::from_f64_lossy((n - 1) as f64);
                let tol = F::from_f64_lossy(1e-10) * var.sqrt().max(F::epsilon());
                if mean.abs() > tol {
                    return Err(DesignError::NotCentered {
                        name: self.column_names[j].clone(),
                        mean: mean.to_f64().unwrap_or(f64::NAN),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn values(&self) -> &Array2<F> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, F> {
        self.values.view()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn column_means(&self) -> &Array1<F> {
        &self.column_means
    }

    pub fn column_scales(&self) -> Option<&Array1<F>> {
        self.column_scales.as_ref()
    }

    pub fn intercept_column(&self) -> Option<usize> {
        self.intercept_column
    }

    /// Block restricted to the given columns, keeping their metadata.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self, DesignError> {
        assert!(!indices.is_empty(), "need at least one column");
        let n = self.nrows();
        let mut values = Array2::zeros((n, indices.len()));
        let mut names = Vec::with_capacity(indices.len());
        let mut means = Array1::zeros(indices.len());
        let mut scales = self.column_scales.as_ref().map(|_| Array1::ones(indices.len()));
        let mut intercept = None;
        for (out, &j) in indices.iter().enumerate() {
            values.column_mut(out).assign(&self.values.column(j));
            names.push(self.column_names[j].clone());
            means[out] = self.column_means[j];
            if let (Some(dst), Some(src)) = (scales.as_mut(), self.column_scales.as_ref()) {
                dst[out] = src[j];
            }
            if Some(j) == self.intercept_column {
                intercept = Some(out);
            }
        }
        let block = Self {
            values,
            column_names: names,
            centered: self.centered,
            column_means: means,
            column_scales: scales,
            intercept_column: intercept,
        };
        block.validate()?;
        Ok(block)
    }

    /// Append an all-ones intercept column (used by the protocol initiator
    /// for non-gaussian families).
    pub fn with_intercept(mut self) -> Result<Self, DesignError> {
        if self.intercept_column.is_some() {
            return Ok(self);
        }
        let n = self.nrows();
        let ones = Array2::ones((n, 1));
        self.values = concatenate(Axis(1), &[self.values.view(), ones.view()])
            .expect("row counts agree");
        let mut name = "(intercept)".to_string();
        while self.column_names.contains(&name) {
            name.push('_');
        }
        self.column_names.push(name);
        let mut means = self.column_means.to_vec();
        means.push(F::zero());
        self.column_means = Array1::from_vec(means);
        if let Some(sc) = self.column_scales.take() {
            let mut v = sc.to_vec();
            v.push(F::one());
            self.column_scales = Some(Array1::from_vec(v));
        }
        self.intercept_column = Some(self.values.ncols() - 1);
        self.validate()?;
        Ok(self)
    }
}

/// Center (and optionally standardize) a raw matrix into a [`DesignBlock`].
///
/// Standardization divides by the sample standard deviation and rejects
/// constant columns; plain centering accepts them (they become zero columns
/// and will surface later as a singular Gram matrix if actually used).
pub fn center_block<F: Scalar>(
    raw: Array2<F>,
    column_names: Vec<String>,
    standardize: bool,
) -> Result<DesignBlock<F>, DesignError> {
    let (n, p) = raw.dim();
    if n < 2 || p < 1 {
        return Err(DesignError::TooSmall { rows: n, cols: p });
    }
    assert_eq!(column_names.len(), p, "one name per column");
    for ((row, col), v) in raw.indexed_iter() {
        if !v.is_finite() {
            return Err(DesignError::NonFinite { row, col });
        }
    }
    let mut values = raw;
    let nf = F::from_f64_lossy(n as f64);
    let mut means = Array1::zeros(p);
    let mut scales = Array1::ones(p);
    for j in 0..p {
        let mean = values.column(j).sum() / nf;
        means[j] = mean;
        values.column_mut(j).mapv_inplace(|x| x - mean);
        if standardize {
            let ss: F = values.column(j).iter().map(|&x| x * x).sum();
            let sd = (ss / F::from_f64_lossy((n - 1) as f64)).sqrt();
            if sd <= F::epsilon() * mean.abs().max(F::one()) {
                return Err(DesignError::ConstantColumn {
                    name: column_names[j].clone(),
                });
            }
            scales[j] = sd;
            values.column_mut(j).mapv_inplace(|x| x / sd);
        }
    }
    DesignBlock::new(
        values,
        column_names,
        true,
        means,
        standardize.then_some(scales),
    )
}

/// Center a target vector, returning the centered values and the mean.
pub fn center_target<F: Scalar>(y: &Array1<F>) -> (Array1<F>, F) {
    let mean = y.sum() / F::from_f64_lossy(y.len() as f64);
    (y.mapv(|v| v - mean), mean)
}

/// Horizontally concatenate blocks into one design matrix.
pub fn concat_blocks<F: Scalar>(blocks: &[&DesignBlock<F>]) -> Result<Array2<F>, DesignError> {
    assert!(!blocks.is_empty(), "need at least one block");
    let n = blocks[0].nrows();
    for b in blocks {
        if b.nrows() != n {
            return Err(DesignError::RowMismatch(n, b.nrows()));
        }
    }
    let views: Vec<ArrayView2<F>> = blocks.iter().map(|b| b.view()).collect();
    Ok(concatenate(Axis(1), &views).expect("row counts agree"))
}

/// Target vector tagged with the family it was validated against.
#[derive(Debug, Clone)]
pub struct TargetVector<F> {
    values: Array1<F>,
    family: Family,
}

impl<F: Scalar> TargetVector<F> {
    pub fn new(values: Array1<F>, family: Family) -> Result<Self, crate::family::FamilyError> {
        family.validate_target(&values.view())?;
        Ok(Self { values, family })
    }

    pub fn values(&self) -> &Array1<F> {
        &self.values
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
