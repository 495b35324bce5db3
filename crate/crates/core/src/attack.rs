//! Semi-honest reconstruction toolkit: what do shared predictions, combined
//! with (partially) disclosed coefficients, reveal about the sender's data?

use crate::design::DesignBlock;
use crate::linalg::thin_svd;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Relative truncation used in the coefficient pseudoinverse.
pub const COEF_SV_RTOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("no coefficient columns disclosed; reconstruction is underidentified")]
    NoCoefficients,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("iteration index {index} out of range (trace has {total})")]
    IterationOutOfRange { index: usize, total: usize },
    #[error("rank bound violated: disclosed columns {r} exceed features {p}")]
    RankBound { r: usize, p: usize },
}

/// Everything the adversary holds after a session: the full prediction
/// matrix it received, plus whichever coefficient columns the victim
/// disclosed (the protocol itself discloses at most the final one).
#[derive(Debug, Clone)]
pub struct AdversaryView {
    /// `N x R` received predictions, one column per iteration.
    pub received_predictions: Array2<f64>,
    /// `P x R_known` disclosed coefficient columns, if any.
    pub known_coefficients: Option<Array2<f64>>,
    /// Which iteration each disclosed column belongs to.
    pub known_iterations: Vec<usize>,
}

impl AdversaryView {
    /// View with only the final coefficient vector disclosed.
    pub fn with_final_coefficients(
        received_predictions: Array2<f64>,
        final_coefficients: Array1<f64>,
    ) -> Self {
        let r = received_predictions.ncols();
        let p = final_coefficients.len();
        let mut b = Array2::zeros((p, 1));
        b.column_mut(0).assign(&final_coefficients);
        Self {
            received_predictions,
            known_coefficients: Some(b),
            known_iterations: vec![r - 1],
        }
    }
}

/// Minimum-norm reconstruction of the victim's block from the disclosed
/// coefficient columns and their matching predictions.
pub fn reconstruct(view: &AdversaryView) -> Result<Array2<f64>, AttackError> {
    let b = view
        .known_coefficients
        .as_ref()
        .filter(|b| b.ncols() > 0)
        .ok_or(AttackError::NoCoefficients)?;
    let r_known = b.ncols();
    if view.known_iterations.len() != r_known {
        return Err(AttackError::ShapeMismatch(format!(
            "{} iteration indices for {} coefficient columns",
            view.known_iterations.len(),
            r_known
        )));
    }
    let total = view.received_predictions.ncols();
    let n = view.received_predictions.nrows();
    let mut y_sel = Array2::zeros((n, r_known));
    for (c, &idx) in view.known_iterations.iter().enumerate() {
        if idx >= total {
            return Err(AttackError::IterationOutOfRange { index: idx, total });
        }
        y_sel
            .column_mut(c)
            .assign(&view.received_predictions.column(idx));
    }
    let b_pinv = thin_svd(&b.view()).pseudoinverse(COEF_SV_RTOL);
    Ok(y_sel.dot(&b_pinv))
}

/// Expected per-entry mean squared error of a rank-`r` reconstruction of a
/// `p`-feature block with uncorrelated unit-covariance features of variance
/// `sigma2_a`: `sigma2_a * (1 - r/p)`.
pub fn expected_mse(sigma2_a: f64, r: usize, p: usize) -> Result<f64, AttackError> {
    if p == 0 {
        return Err(AttackError::RankBound { r, p });
    }
    if r > p {
        return Err(AttackError::RankBound { r, p });
    }
    Ok(sigma2_a * (1.0 - r as f64 / p as f64))
}

/// Per-entry mean squared error between the true block and a reconstruction.
pub fn reconstruction_mse(
    true_block: &DesignBlock<f64>,
    x_hat: &Array2<f64>,
) -> Result<f64, AttackError> {
    let x = true_block.values();
    if x.dim() != x_hat.dim() {
        return Err(AttackError::ShapeMismatch(format!(
            "true block is {:?}, reconstruction is {:?}",
            x.dim(),
            x_hat.dim()
        )));
    }
    let (n, p) = x.dim();
    let sse: f64 = x
        .iter()
        .zip(x_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sse / (n * p) as f64)
}

/// Fraction of the block's variance the reconstruction captures:
/// `1 - mse / (per-entry mean square of the centered block)`, clamped to
/// `[0, 1]`.
pub fn revealed_fraction(
    true_block: &DesignBlock<f64>,
    x_hat: &Array2<f64>,
) -> Result<f64, AttackError> {
    let mse = reconstruction_mse(true_block, x_hat)?;
    let x = true_block.values();
    let (n, p) = x.dim();
    let total: f64 = x.iter().map(|a| a * a).sum::<f64>() / (n * p) as f64;
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 - mse / total).clamp(0.0, 1.0))
}

/// Summary row for one reconstruction experiment.
#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub x_hat: Array2<f64>,
    pub mse: f64,
    pub revealed_variance_fraction: f64,
    pub expected_mse: f64,
}

/// Run the reconstruction and package the comparison against the truth.
pub fn reconstruction_report(
    view: &AdversaryView,
    true_block: &DesignBlock<f64>,
    sigma2_a: f64,
) -> Result<ReconstructionReport, AttackError> {
    let x_hat = reconstruct(view)?;
    let mse = reconstruction_mse(true_block, &x_hat)?;
    let revealed = revealed_fraction(true_block, &x_hat)?;
    let r_known = view.known_coefficients.as_ref().map_or(0, |b| b.ncols());
    let expected = expected_mse(sigma2_a, r_known.min(true_block.ncols()), true_block.ncols())?;
    Ok(ReconstructionReport {
        x_hat,
        mse,
        revealed_variance_fraction: revealed,
        expected_mse: expected,
    })
}

/// Trace-level mitigations a party can apply before sending predictions.
#[derive(Debug, Clone, Copy)]
pub enum Mitigation {
    /// Add elementwise zero-mean gaussian noise to outgoing predictions.
    Noise { sd: f64 },
    /// Cap the number of iterations, shrinking estimates toward the
    /// marginal ones; consumed by the session configuration.
    IterationCap { cap: usize },
}

#[derive(Debug, Clone)]
pub enum MitigationEffect {
    Noised(Array1<f64>),
    CapIterations(usize),
}

pub fn apply_mitigation<R: Rng>(
    predictions: &Array1<f64>,
    mitigation: Mitigation,
    rng: &mut R,
) -> MitigationEffect {
    match mitigation {
        Mitigation::Noise { sd } => {
            if sd == 0.0 {
                return MitigationEffect::Noised(predictions.clone());
            }
            let noised = predictions.mapv(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v + sd * z
            });
            MitigationEffect::Noised(noised)
        }
        Mitigation::IterationCap { cap } => MitigationEffect::CapIterations(cap.max(1)),
    }
}
