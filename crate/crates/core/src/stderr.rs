//! Standard-error recovery from the iteration trace alone.
//!
//! During a session each party records the residual inputs it handed the
//! partner and the prediction vectors it got back. Those pairs pin down the
//! partner's projection on the subspace the protocol actually explored, and
//! that subspace always contains this party's own columns and the target.
//! An orthonormal basis of the estimated projection's range therefore acts
//! as a stand-in for the partner's data: augmenting the own block with that
//! basis reproduces the own-block portion of the full-data asymptotic
//! covariance matrix.

use crate::design::{DesignBlock, TargetVector};
use crate::family::{update_working_set, Family, FamilyError};
use crate::linalg::{thin_svd, PivotedQr, QrFactor};
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

/// Relative truncation threshold for singular values in the dense
/// hat-matrix pseudoinverse and range extraction.
pub const HAT_SV_RTOL: f64 = 1e-10;

/// Truncation for the trace-level substitute basis. The directions the
/// iteration explores decay geometrically in amplitude while their weight in
/// the augmented covariance decays in the same hierarchy, so the basis keeps
/// everything distinguishable from floating-point noise: dropping a weakly
/// expressed direction costs far more accuracy than keeping its slightly
/// noisy estimate.
pub const TRACE_SV_RTOL: f64 = 1e-13;

/// A trace whose strongest prediction column is this small relative to the
/// residual-input scale carries no partner signal at all.
pub const INERT_PARTNER_RTOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum StderrError {
    #[error("trace cannot pin down the partner's projection: {0}")]
    RankDeficientTrace(String),
    #[error("partner rank is ambiguous: {0}")]
    RankAmbiguous(String),
    #[error("degrees of freedom exhausted: n = {n}, own + partner rank = {p_total}")]
    DfExhausted { n: usize, p_total: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error("augmented design is singular (column {column})")]
    SingularAugmented { column: usize },
}

/// Columnwise record of one party's view of a session, in iteration order.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    /// Predictions this party sent, one column per iteration.
    pub sent_predictions: Array2<f64>,
    /// Inputs this party handed the partner's projection: the working
    /// residual the partner regressed on its block in each iteration.
    pub received_residual_inputs: Array2<f64>,
    /// Predictions received back from the partner.
    pub received_predictions: Array2<f64>,
    /// IRLS weights at the final combined linear predictor.
    pub weights_final: Array1<f64>,
}

impl IterationTrace {
    pub fn rows(&self) -> usize {
        self.sent_predictions.nrows()
    }

    pub fn iterations(&self) -> usize {
        self.sent_predictions.ncols()
    }

    pub fn validate(&self) -> Result<(), StderrError> {
        let shape = self.sent_predictions.dim();
        if self.received_residual_inputs.dim() != shape
            || self.received_predictions.dim() != shape
        {
            return Err(StderrError::ShapeMismatch(
                "trace matrices must share one N x R shape".into(),
            ));
        }
        if self.weights_final.len() != shape.0 {
            return Err(StderrError::ShapeMismatch(
                "final weights must have one entry per row".into(),
            ));
        }
        if self.weights_final.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(StderrError::ShapeMismatch(
                "final weights must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Orthonormal stand-in for the partner's data block.
#[derive(Debug, Clone)]
pub struct SubstituteBlock {
    /// `N x estimated_partner_rank`, orthonormal columns.
    pub basis: Array2<f64>,
    pub estimated_partner_rank: usize,
    /// Retained singular spectrum of the estimated partner projection.
    pub spectrum: Array1<f64>,
}

/// Minimum-norm estimate of the partner's projection: the dense `N x N`
/// matrix `received_predictions * pinv(received_residual_inputs)`, with
/// singular values below `1e-10 * s_max` truncated in the pseudoinverse.
///
/// This materializes `N^2` entries; the trace-level recovery path below
/// gets the same answer without ever forming it.
pub fn estimate_hat(trace: &IterationTrace) -> Result<Array2<f64>, StderrError> {
    trace.validate()?;
    if trace.iterations() < 2 {
        return Err(StderrError::RankDeficientTrace(format!(
            "need at least 2 iterations, got {}",
            trace.iterations()
        )));
    }
    let e_pinv = thin_svd(&trace.received_residual_inputs.view())
        .pseudoinverse(HAT_SV_RTOL);
    Ok(trace.received_predictions.dot(&e_pinv))
}

/// Extract the substitute block from a dense projection estimate: find the
/// numerical range, one orthonormal direction per retained singular value.
pub fn extract_substitute(h: &ArrayView2<f64>) -> Result<SubstituteBlock, StderrError> {
    let (n, m) = h.dim();
    if n != m {
        return Err(StderrError::ShapeMismatch(format!(
            "projection estimate must be square, got {n}x{m}"
        )));
    }
    let pqr = PivotedQr::new(h.to_owned(), HAT_SV_RTOL);
    if pqr.rank() == 0 {
        return Ok(SubstituteBlock {
            basis: Array2::zeros((n, 0)),
            estimated_partner_rank: 0,
            spectrum: Array1::zeros(0),
        });
    }
    let q = pqr.range_basis();
    let rows = pqr.captured_rows();
    let small = thin_svd(&rows.view());
    let left = q.dot(&small.u);
    substitute_from_singular_pairs(&left, &small.s, HAT_SV_RTOL, None)
}

/// Common rank decision: keep singular values above `cut_rtol * s_max`,
/// verify the spectrum is sane, and assemble the orthonormal basis.
fn substitute_from_singular_pairs(
    left: &Array2<f64>,
    s: &Array1<f64>,
    cut_rtol: f64,
    saturation_bound: Option<usize>,
) -> Result<SubstituteBlock, StderrError> {
    let smax = s.first().cloned().unwrap_or(0.0);
    if !smax.is_finite() {
        return Err(StderrError::RankAmbiguous("non-finite spectrum".into()));
    }
    let cut = smax * cut_rtol;
    let rank = s.iter().filter(|&&v| v > cut).count();
    if let Some(bound) = saturation_bound {
        if rank >= bound {
            return Err(StderrError::RankAmbiguous(format!(
                "all {rank} trace directions look informative; the trace is \
                 too short to separate the partner's rank from its span"
            )));
        }
    }
    let basis = left.slice(s![.., ..rank]).to_owned();
    let spectrum = s.slice(s![..rank]).to_owned();
    Ok(SubstituteBlock { basis, estimated_partner_rank: rank, spectrum })
}

/// Substitute block straight from the trace, never materializing the dense
/// `N x N` estimate. The range of `Yhat * pinv(E)` equals the range of
/// `Yhat` itself (every received prediction lies in the partner's column
/// space), so the basis comes from the prediction matrix's left singular
/// vectors; this also avoids amplifying rounding noise through `pinv(E)`.
pub fn substitute_from_trace(trace: &IterationTrace) -> Result<SubstituteBlock, StderrError> {
    trace.validate()?;
    if trace.iterations() < 2 {
        return Err(StderrError::RankDeficientTrace(format!(
            "need at least 2 iterations, got {}",
            trace.iterations()
        )));
    }
    let output_svd = thin_svd(&trace.received_predictions.view());
    let input_scale = trace
        .received_residual_inputs
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let out_max = output_svd.s.first().cloned().unwrap_or(0.0);
    if out_max <= INERT_PARTNER_RTOL * input_scale {
        // partner never moved the predictions: nothing to substitute
        return Ok(SubstituteBlock {
            basis: Array2::zeros((trace.rows(), 0)),
            estimated_partner_rank: 0,
            spectrum: Array1::zeros(0),
        });
    }
    let bound = trace.iterations().min(trace.rows());
    substitute_from_singular_pairs(&output_svd.u, &output_svd.s, TRACE_SV_RTOL, Some(bound))
}

/// Recovered standard errors for the own coefficients plus the pieces the
/// caller may want to report.
#[derive(Debug, Clone)]
pub struct SeRecovery {
    pub standard_errors: Array1<f64>,
    /// Residual variance; gaussian family only.
    pub sigma2: Option<f64>,
    pub substitute: SubstituteBlock,
}

/// Standard errors from the augmented design `Z = [own, substitute]`.
///
/// Gaussian: `sigma2 = <resid, resid> / (N - P_own - partner_rank)` with the
/// full combined residual, and the errors are the square roots of the first
/// `P_own` diagonal entries of `sigma2 * (Z^T Z)^{-1}`. Other families use
/// `(Z^T W Z)^{-1}` at the final weights with dispersion 1.
pub fn augmented_covariance(
    own: &DesignBlock<f64>,
    sub: &SubstituteBlock,
    y: &TargetVector<f64>,
    final_eta: &Array1<f64>,
    family: Family,
) -> Result<(Array1<f64>, Option<f64>), StderrError> {
    let n = own.nrows();
    let p_own = own.ncols();
    let k = sub.estimated_partner_rank;
    if y.len() != n || final_eta.len() != n {
        return Err(StderrError::ShapeMismatch(
            "target, design and linear predictor must share N".into(),
        ));
    }
    if p_own + k >= n {
        return Err(StderrError::DfExhausted { n, p_total: p_own + k });
    }
    let z = if k == 0 {
        own.values().clone()
    } else {
        concatenate(Axis(1), &[own.view(), sub.basis.view()])
            .expect("row counts agree")
    };
    match family {
        Family::Gaussian => {
            let qr = QrFactor::new(z).map_err(map_linalg)?;
            let diag = qr.normal_matrix_inverse_diagonal().map_err(map_linalg)?;
            let resid = y.values() - final_eta;
            let rss: f64 = resid.iter().map(|e| e * e).sum();
            let sigma2 = rss / (n - p_own - k) as f64;
            let se = Array1::from_shape_fn(p_own, |j| (diag[j] * sigma2).sqrt());
            Ok((se, Some(sigma2)))
        }
        Family::Binomial | Family::Poisson => {
            let ws = update_working_set(family, &y.values().view(), &final_eta.view())?;
            let mut zw = z;
            for i in 0..n {
                let sw = ws.weights[i].sqrt();
                for v in zw.row_mut(i) {
                    *v *= sw;
                }
            }
            let qr = QrFactor::new(zw).map_err(map_linalg)?;
            let diag = qr.normal_matrix_inverse_diagonal().map_err(map_linalg)?;
            let se = Array1::from_shape_fn(p_own, |j| diag[j].sqrt());
            Ok((se, None))
        }
    }
}

fn map_linalg(e: crate::linalg::LinalgError) -> StderrError {
    match e {
        crate::linalg::LinalgError::RankDeficient { col } => {
            StderrError::SingularAugmented { column: col }
        }
        other => StderrError::ShapeMismatch(other.to_string()),
    }
}

/// Full recovery pipeline used after a session: build the substitute from
/// the trace and form the augmented covariance.
pub fn recover_standard_errors(
    own: &DesignBlock<f64>,
    trace: &IterationTrace,
    y: &TargetVector<f64>,
    final_eta: &Array1<f64>,
    family: Family,
) -> Result<SeRecovery, StderrError> {
    let substitute = substitute_from_trace(trace)?;
    let (standard_errors, sigma2) =
        augmented_covariance(own, &substitute, y, final_eta, family)?;
    Ok(SeRecovery { standard_errors, sigma2, substitute })
}

#[cfg(test)]
mod tests {
    use super::*;

    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit_trace(n: usize, e: Array2<f64>, yh: Array2<f64>) -> IterationTrace {
        IterationTrace {
            sent_predictions: Array2::zeros((n, e.ncols())),
            received_residual_inputs: e,
            received_predictions: yh,
            weights_final: Array1::ones(n),
        }
    }

    /// Apply the true hat matrix of a single feature to a vector.
    fn project_onto(x: &Array1<f64>, v: &Array1<f64>) -> Array1<f64> {
        let c = x.dot(v) / x.dot(x);
        x.mapv(|e| e * c)
    }

    #[test]
    fn single_feature_partner_hat_recovered() {
        // Noiseless target: the residual inputs then span the partner's
        // feature direction and the projection is identified exactly.
        let mut rng = StdRng::seed_from_u64(41);
        let n = 40;
        let xb: Array1<f64> = Array1::from_shape_fn(n, |_| rng.random::<f64>() * 2.0 - 1.0);
        // two informative residual inputs: both are y - yhat_a with
        // yhat_a in the own span, y containing only xb signal
        let own: Array1<f64> = Array1::from_shape_fn(n, |_| rng.random::<f64>() * 2.0 - 1.0);
        let y = xb.mapv(|v| 1.5 * v);
        let e1 = &y - &own;
        let e2 = &y - &own.mapv(|v| 0.25 * v);
        let mut e = Array2::zeros((n, 2));
        e.column_mut(0).assign(&e1);
        e.column_mut(1).assign(&e2);
        let mut yh = Array2::zeros((n, 2));
        yh.column_mut(0).assign(&project_onto(&xb, &e1));
        yh.column_mut(1).assign(&project_onto(&xb, &e2));
        let trace = unit_trace(n, e, yh);
        let h = estimate_hat(&trace).unwrap();
        // oracle: the true projection x x^T / <x, x>
        let sxx = xb.dot(&xb);
        for i in 0..n {
            for j in 0..n {
                let truth = xb[i] * xb[j] / sxx;
                assert_abs_diff_eq!(h[[i, j]], truth, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn hat_estimate_idempotent_when_inputs_span_partner_space() {
        let mut rng = StdRng::seed_from_u64(42);
        let n = 30;
        let p_b = 3;
        let xb = Array2::from_shape_fn((n, p_b), |_| rng.random::<f64>() * 2.0 - 1.0);
        let qr = QrFactor::new(xb.clone()).unwrap();
        let q = qr.thin_q();
        // inputs: partner columns plus perturbations, R = p_b, independent
        let mut e = Array2::zeros((n, p_b));
        let mut yh = Array2::zeros((n, p_b));
        for r in 0..p_b {
            let input: Array1<f64> = Array1::from_shape_fn(n, |i| {
                xb[[i, r]] + 1e-4 * (rng.random::<f64>() - 0.5)
            });
            let out = q.dot(&q.t().dot(&input));
            e.column_mut(r).assign(&input);
            yh.column_mut(r).assign(&out);
        }
        let trace = unit_trace(n, e, yh);
        let h = estimate_hat(&trace).unwrap();
        let hh = h.dot(&h);
        for (a, b) in hh.iter().zip(h.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn one_iteration_trace_is_rank_deficient() {
        let n = 10;
        let e = Array2::ones((n, 1));
        let yh = Array2::ones((n, 1));
        let trace = unit_trace(n, e, yh);
        assert!(matches!(
            estimate_hat(&trace),
            Err(StderrError::RankDeficientTrace(_))
        ));
    }

    #[test]
    fn substitute_from_identity_projection() {
        let h = Array2::eye(3);
        let sub = extract_substitute(&h.view()).unwrap();
        assert_eq!(sub.estimated_partner_rank, 3);
        let vtv = sub.basis.t().dot(&sub.basis);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(vtv[[i, j]], expect, epsilon = 1e-8);
            }
        }
        // V V^T must reproduce the identity
        let vvt = sub.basis.dot(&sub.basis.t());
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(vvt[[i, j]], expect, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn substitute_from_rank_one_projection() {
        let x = array![3.0, 0.0, 4.0];
        let sxx = x.dot(&x);
        let h = Array2::from_shape_fn((3, 3), |(i, j)| x[i] * x[j] / sxx);
        let sub = extract_substitute(&h.view()).unwrap();
        assert_eq!(sub.estimated_partner_rank, 1);
        let v = sub.basis.column(0);
        let unit = x.mapv(|e| e / sxx.sqrt());
        // sign ambiguity is fine
        let aligned = v.dot(&unit).abs();
        assert_abs_diff_eq!(aligned, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn augmented_covariance_orthogonal_partner_reduces_to_block_gram() {
        let mut rng = StdRng::seed_from_u64(43);
        let n = 50;
        let raw = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() * 2.0 - 1.0);
        let own = crate::design::center_block(
            raw,
            vec!["a".into(), "b".into()],
            false,
        )
        .unwrap();
        // orthogonal substitute basis: project random vectors off the own
        // column span, then orthonormalize among themselves
        let own_q = QrFactor::new(own.values().clone()).unwrap().thin_q();
        let mut v = Array2::zeros((n, 2));
        for c in 0..2 {
            let mut col: Array1<f64> =
                Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
            let proj = own_q.dot(&own_q.t().dot(&col));
            col = &col - &proj;
            for j in 0..c {
                let prev = v.column(j).to_owned();
                let coef = prev.dot(&col);
                col = &col - &prev.mapv(|e| e * coef);
            }
            let norm = col.dot(&col).sqrt();
            v.column_mut(c).assign(&col.mapv(|e| e / norm));
        }
        let sub = SubstituteBlock {
            basis: v,
            estimated_partner_rank: 2,
            spectrum: array![1.0, 1.0],
        };
        let yv: Array1<f64> = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
        let (yc, _) = crate::design::center_target(&yv);
        let y = TargetVector::new(yc.clone(), Family::Gaussian).unwrap();
        let eta = Array1::zeros(n);
        let (se, sigma2) =
            augmented_covariance(&own, &sub, &y, &eta, Family::Gaussian).unwrap();
        // block-diagonal Gram: own-coefficient part equals the single-block
        // Gram inverse scaled by the augmented-df sigma2
        let qr = QrFactor::new(own.values().clone()).unwrap();
        let diag = qr.normal_matrix_inverse_diagonal().unwrap();
        let s2 = sigma2.unwrap();
        let rss: f64 = yc.iter().map(|e| e * e).sum();
        assert_abs_diff_eq!(s2, rss / (n - 4) as f64, epsilon = 1e-12);
        for j in 0..2 {
            assert_abs_diff_eq!(se[j], (diag[j] * s2).sqrt(), epsilon = 1e-10);
        }
    }

    #[test]
    fn df_exhausted_detected() {
        let raw = array![[1.0, 2.0], [2.0, 1.0], [3.0, 4.0]];
        let own =
            crate::design::center_block(raw, vec!["a".into(), "b".into()], false).unwrap();
        let sub = SubstituteBlock {
            basis: Array2::zeros((3, 1)),
            estimated_partner_rank: 1,
            spectrum: array![1.0],
        };
        let y = TargetVector::new(array![0.1, -0.1, 0.0], Family::Gaussian).unwrap();
        let eta = Array1::zeros(3);
        assert!(matches!(
            augmented_covariance(&own, &sub, &y, &eta, Family::Gaussian),
            Err(StderrError::DfExhausted { .. })
        ));
    }
}
