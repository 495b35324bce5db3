//! Weighted least squares and the full-data reference estimator the rest of
//! the workspace verifies itself against.

use crate::design::{concat_blocks, DesignBlock, DesignError, TargetVector};
use crate::family::{update_working_set, Family, FamilyError};
use crate::linalg::{weighted_dot, LinalgError, QrFactor};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

/// Absolute floor on the weighted sum of squares of a regressor column.
pub const DEGENERATE_SSQ: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("degenerate column: weighted sum of squares below {DEGENERATE_SSQ}")]
    DegenerateColumn,
    #[error("singular weighted Gram matrix (column {column} is collinear)")]
    SingularGram { column: usize },
    #[error("vector lengths disagree: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("family mismatch: target validated for {target:?}, fit requested {requested:?}")]
    FamilyMismatch { target: Family, requested: Family },
    #[error("combined column count {p} must be below the row count {n}")]
    TooManyColumns { p: usize, n: usize },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Family(#[from] FamilyError),
}

impl From<LinalgError> for FitError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::RankDeficient { col } => FitError::SingularGram { column: col },
            LinalgError::Underdetermined { rows, cols } => {
                FitError::TooManyColumns { p: cols, n: rows }
            }
            LinalgError::ShapeMismatch(_) => FitError::LengthMismatch(0, 0),
        }
    }
}

/// Single-feature weighted regression coefficient
/// `<x, r>_w / <x, x>_w`; with unit weights and centered data this is the
/// covariance over the variance.
pub fn marginal_coefficient<F: Scalar>(
    x: &ArrayView1<F>,
    r: &ArrayView1<F>,
    w: &ArrayView1<F>,
) -> Result<F, FitError> {
    if x.len() != r.len() {
        return Err(FitError::LengthMismatch(x.len(), r.len()));
    }
    if x.len() != w.len() {
        return Err(FitError::LengthMismatch(x.len(), w.len()));
    }
    let sxx = weighted_dot(x, x, w);
    if sxx < F::from_f64_lossy(DEGENERATE_SSQ) {
        return Err(FitError::DegenerateColumn);
    }
    Ok(weighted_dot(x, r, w) / sxx)
}

/// Coefficients minimizing the weighted residual sum of squares of `r`
/// against the block, computed through a QR factorization of the
/// square-root-weighted design rather than an explicit Gram inversion.
pub fn weighted_ls_solve<F: Scalar>(
    block: &DesignBlock<F>,
    r: &ArrayView1<F>,
    w: &ArrayView1<F>,
) -> Result<Array1<F>, FitError> {
    let n = block.nrows();
    if r.len() != n {
        return Err(FitError::LengthMismatch(r.len(), n));
    }
    if w.len() != n {
        return Err(FitError::LengthMismatch(w.len(), n));
    }
    let (xw, rw) = apply_sqrt_weights(block.values(), r, w);
    let qr = QrFactor::new(xw)?;
    Ok(qr.solve(&rw)?)
}

/// Scale rows of the design and response by the square root of the weights.
fn apply_sqrt_weights<F: Scalar>(
    x: &Array2<F>,
    r: &ArrayView1<F>,
    w: &ArrayView1<F>,
) -> (Array2<F>, Array1<F>) {
    let (n, p) = x.dim();
    let mut xw = x.clone();
    let mut rw = r.to_owned();
    for i in 0..n {
        let s = w[i].sqrt();
        rw[i] *= s;
        for j in 0..p {
            xw[[i, j]] *= s;
        }
    }
    (xw, rw)
}

/// Maximum-likelihood fit on the horizontally concatenated blocks.
#[derive(Debug, Clone)]
pub struct FullFit<F> {
    pub coefficients: Array1<F>,
    pub standard_errors: Array1<F>,
    /// Residual variance estimate; populated for the gaussian family only.
    pub sigma2: Option<F>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fit the GLM on the combined blocks: closed form for gaussian, IRLS with
/// canonical links otherwise. A fit that exhausts `max_iter` is still
/// returned, flagged `converged = false`.
pub fn fit_full_glm<F: Scalar>(
    blocks: &[&DesignBlock<F>],
    y: &TargetVector<F>,
    family: Family,
    tol: F,
    max_iter: usize,
) -> Result<FullFit<F>, FitError> {
    if y.family() != family {
        return Err(FitError::FamilyMismatch { target: y.family(), requested: family });
    }
    let x = concat_blocks(blocks)?;
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(FitError::LengthMismatch(y.len(), n));
    }
    if p >= n {
        return Err(FitError::TooManyColumns { p, n });
    }
    match family {
        Family::Gaussian => fit_gaussian(&x, y.values()),
        Family::Binomial | Family::Poisson => fit_irls(&x, y.values(), family, tol, max_iter),
    }
}

fn fit_gaussian<F: Scalar>(x: &Array2<F>, y: &Array1<F>) -> Result<FullFit<F>, FitError> {
    let (n, p) = x.dim();
    let qr = QrFactor::new(x.clone())?;
    let beta = qr.solve(y)?;
    let fitted = x.dot(&beta);
    let resid = y - &fitted;
    let rss: F = resid.iter().map(|&e| e * e).sum();
    let df = F::from_f64_lossy((n - p) as f64);
    let sigma2 = rss / df;
    let diag = qr.normal_matrix_inverse_diagonal()?;
    let se = diag.mapv(|d| (d * sigma2).sqrt());
    Ok(FullFit {
        coefficients: beta,
        standard_errors: se,
        sigma2: Some(sigma2),
        iterations: 1,
        converged: true,
    })
}

/// Starting linear predictor for IRLS, matching the usual GLM conventions.
pub fn irls_initial_eta<F: Scalar>(family: Family, y: &ArrayView1<F>) -> Array1<F> {
    let half = F::from_f64_lossy(0.5);
    match family {
        Family::Gaussian => y.to_owned(),
        Family::Binomial => y.mapv(|v| {
            let mu = (v + half) / F::from_f64_lossy(2.0);
            (mu / (F::one() - mu)).ln()
        }),
        Family::Poisson => y.mapv(|v| (v + F::from_f64_lossy(0.1)).ln()),
    }
}

fn fit_irls<F: Scalar>(
    x: &Array2<F>,
    y: &Array1<F>,
    family: Family,
    tol: F,
    max_iter: usize,
) -> Result<FullFit<F>, FitError> {
    let p = x.ncols();
    let mut eta = irls_initial_eta(family, &y.view());
    let mut beta = Array1::zeros(p);
    let mut converged = false;
    let mut iterations = 0;
    let mut ws = update_working_set(family, &y.view(), &eta.view())?;
    while iterations < max_iter {
        iterations += 1;
        let (xw, zw) = apply_sqrt_weights(x, &ws.working_response.view(), &ws.weights.view());
        let qr = QrFactor::new(xw)?;
        let beta_new = qr.solve(&zw)?;
        let delta = beta_new
            .iter()
            .zip(beta.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), F::max);
        beta = beta_new;
        eta = x.dot(&beta);
        ws = update_working_set(family, &y.view(), &eta.view())?;
        if delta < tol {
            converged = true;
            break;
        }
    }
    // dispersion fixed at 1 for binomial and poisson
    let (xw, _) = apply_sqrt_weights(x, &ws.working_response.view(), &ws.weights.view());
    let qr = QrFactor::new(xw)?;
    let diag = qr.normal_matrix_inverse_diagonal()?;
    let se = diag.mapv(F::sqrt);
    Ok(FullFit {
        coefficients: beta,
        standard_errors: se,
        sigma2: None,
        iterations,
        converged,
    })
}
