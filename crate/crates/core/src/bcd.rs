//! Cyclic and block coordinate descent run in a single process.
//!
//! `block_update` and `refresh_working_set` are the exact arithmetic the
//! two-party protocol executes on each side of the wire; running
//! [`block_descent`] locally therefore reproduces a protocol session bit for
//! bit when given the same inputs.

use crate::design::{DesignBlock, TargetVector};
use crate::family::{update_working_set, Family, FamilyError, WorkingSet};
use crate::fit::{marginal_coefficient, weighted_ls_solve, FitError};
use crate::scalar::Scalar;
use ndarray::{Array1, ArrayView1};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DescentError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("block {block}: {source}")]
    Block {
        block: usize,
        #[source]
        source: FitError,
    },
    #[error("{operation} supports only the gaussian family")]
    GaussianOnly { operation: &'static str },
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error("blocks disagree on row count with the target ({0} vs {1})")]
    RowMismatch(usize, usize),
    #[error("need at least {needed} blocks, got {got}")]
    NotEnoughBlocks { needed: usize, got: usize },
}

/// Convergence and schedule parameters for a descent run.
#[derive(Debug, Clone)]
pub struct DescentConfig<F> {
    /// Convergence threshold on the max absolute coefficient change per sweep.
    pub tolerance: F,
    pub max_sweeps: usize,
    /// Sweeps are never declared converged before this floor; standard-error
    /// recovery needs the trace to carry enough columns.
    pub min_sweeps: usize,
    pub family: Family,
}

impl<F: Scalar> DescentConfig<F> {
    pub fn new(family: Family) -> Self {
        Self {
            tolerance: F::from_f64_lossy(1e-8),
            max_sweeps: 10_000,
            min_sweeps: 1,
            family,
        }
    }

    pub fn validate(&self) -> Result<(), DescentError> {
        if self.tolerance <= F::zero() || self.tolerance.is_nan() {
            return Err(DescentError::InvalidConfig("tolerance must be positive".into()));
        }
        if self.min_sweeps > self.max_sweeps {
            return Err(DescentError::InvalidConfig(format!(
                "min_sweeps {} exceeds max_sweeps {}",
                self.min_sweeps, self.max_sweeps
            )));
        }
        Ok(())
    }
}

/// Per-sweep record of the coefficient path.
#[derive(Debug, Clone)]
pub struct DescentTracePoint<F> {
    pub sweep_index: usize,
    pub coefficients_snapshot: Array1<F>,
    /// Max absolute coefficient change versus the previous sweep.
    pub max_delta: F,
}

/// Result of a descent run; a run that hits `max_sweeps` is returned with
/// `converged = false` rather than discarded.
#[derive(Debug, Clone)]
pub struct DescentOutcome<F> {
    /// Coefficients per block, in block order.
    pub block_coefficients: Vec<Array1<F>>,
    pub trace: Vec<DescentTracePoint<F>>,
    pub converged: bool,
    pub sweeps_used: usize,
}

impl<F: Scalar> DescentOutcome<F> {
    /// Concatenated coefficient vector in block order.
    pub fn concatenated(&self) -> Array1<F> {
        let total: usize = self.block_coefficients.iter().map(|b| b.len()).sum();
        let mut out = Array1::zeros(total);
        let mut at = 0;
        for b in &self.block_coefficients {
            out.slice_mut(ndarray::s![at..at + b.len()]).assign(b);
            at += b.len();
        }
        out
    }
}

/// Outcome of one block update.
#[derive(Debug, Clone)]
pub struct BlockUpdate<F> {
    pub coefficients: Array1<F>,
    pub prediction: Array1<F>,
    pub max_delta: F,
}

/// Refresh mean, weights and working response at the current combined
/// linear predictor. Shared verbatim by the local engine and the protocol.
pub fn refresh_working_set<F: Scalar>(
    family: Family,
    y: &ArrayView1<F>,
    eta: &ArrayView1<F>,
) -> Result<WorkingSet<F>, FamilyError> {
    update_working_set(family, y, eta)
}

/// Regress a working residual on one block and report the coefficient move.
/// Shared verbatim by the local engine and the protocol.
pub fn block_update<F: Scalar>(
    block: &DesignBlock<F>,
    working_residual: &ArrayView1<F>,
    weights: &ArrayView1<F>,
    previous: &ArrayView1<F>,
) -> Result<BlockUpdate<F>, FitError> {
    let coefficients = weighted_ls_solve(block, working_residual, weights)?;
    let prediction = block.values().dot(&coefficients);
    let max_delta = coefficients
        .iter()
        .zip(previous.iter())
        .map(|(&a, &b)| (a - b).abs())
        .fold(F::zero(), F::max);
    Ok(BlockUpdate { coefficients, prediction, max_delta })
}

/// Cyclic (single-coordinate) descent for the linear model, initialized at
/// the marginal coefficients.
pub fn cyclic_descent<F: Scalar>(
    block: &DesignBlock<F>,
    y: &TargetVector<F>,
    cfg: &DescentConfig<F>,
) -> Result<DescentOutcome<F>, DescentError> {
    cfg.validate()?;
    if cfg.family != Family::Gaussian {
        return Err(DescentError::GaussianOnly { operation: "cyclic_descent" });
    }
    if y.len() != block.nrows() {
        return Err(DescentError::RowMismatch(block.nrows(), y.len()));
    }
    let x = block.values();
    let (n, p) = x.dim();
    let yv = y.values();
    let unit = Array1::ones(n);

    let mut beta = Array1::zeros(p);
    for j in 0..p {
        beta[j] = marginal_coefficient(&x.column(j), &yv.view(), &unit.view())
            .map_err(|source| DescentError::Block { block: 0, source })?;
    }
    let mut ssq = Array1::zeros(p);
    for j in 0..p {
        let s: F = x.column(j).iter().map(|&v| v * v).sum();
        ssq[j] = s;
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps_used = 0;
    for sweep in 1..=cfg.max_sweeps {
        sweeps_used = sweep;
        let mut yhat = x.dot(&beta);
        let mut max_delta = F::zero();
        for j in 0..p {
            // residual with respect to all coordinates except j
            let mut num = F::zero();
            for i in 0..n {
                let eps_mj = yv[i] - (yhat[i] - x[[i, j]] * beta[j]);
                num += x[[i, j]] * eps_mj;
            }
            let new_bj = num / ssq[j];
            let delta = (new_bj - beta[j]).abs();
            if delta > max_delta {
                max_delta = delta;
            }
            let diff = new_bj - beta[j];
            for i in 0..n {
                yhat[i] += x[[i, j]] * diff;
            }
            beta[j] = new_bj;
        }
        trace.push(DescentTracePoint {
            sweep_index: sweep,
            coefficients_snapshot: beta.clone(),
            max_delta,
        });
        if max_delta < cfg.tolerance && sweep >= cfg.min_sweeps {
            converged = true;
            break;
        }
    }
    Ok(DescentOutcome {
        block_coefficients: vec![beta],
        trace,
        converged,
        sweeps_used,
    })
}

/// Block coordinate descent, initialized at zero, blocks updated in strict
/// round-robin order. Weights and the working response are refreshed from
/// the latest combined linear predictor once per block update. A single
/// block degenerates to one weighted solve per sweep.
pub fn block_descent<F: Scalar>(
    blocks: &[&DesignBlock<F>],
    y: &TargetVector<F>,
    cfg: &DescentConfig<F>,
) -> Result<DescentOutcome<F>, DescentError> {
    cfg.validate()?;
    if blocks.is_empty() {
        return Err(DescentError::NotEnoughBlocks { needed: 1, got: 0 });
    }
    let n = y.len();
    for b in blocks {
        if b.nrows() != n {
            return Err(DescentError::RowMismatch(b.nrows(), n));
        }
    }
    let nblocks = blocks.len();
    let mut betas: Vec<Array1<F>> =
        blocks.iter().map(|b| Array1::zeros(b.ncols())).collect();
    let mut yhats: Vec<Array1<F>> = vec![Array1::zeros(n); nblocks];

    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps_used = 0;
    for sweep in 1..=cfg.max_sweeps {
        sweeps_used = sweep;
        let mut max_delta = F::zero();
        for k in 0..nblocks {
            let mut eta = yhats[0].clone();
            for j in 1..nblocks {
                eta += &yhats[j];
            }
            let ws = refresh_working_set(cfg.family, &y.values().view(), &eta.view())?;
            let mut residual = ws.working_response;
            for (j, yh) in yhats.iter().enumerate() {
                if j != k {
                    residual -= yh;
                }
            }
            let upd = block_update(
                blocks[k],
                &residual.view(),
                &ws.weights.view(),
                &betas[k].view(),
            )
            .map_err(|source| DescentError::Block { block: k, source })?;
            if upd.max_delta > max_delta {
                max_delta = upd.max_delta;
            }
            betas[k] = upd.coefficients;
            yhats[k] = upd.prediction;
        }
        let snapshot = {
            let total: usize = betas.iter().map(|b| b.len()).sum();
            let mut s = Array1::zeros(total);
            let mut at = 0;
            for b in &betas {
                s.slice_mut(ndarray::s![at..at + b.len()]).assign(b);
                at += b.len();
            }
            s
        };
        trace.push(DescentTracePoint { sweep_index: sweep, coefficients_snapshot: snapshot, max_delta });
        if max_delta < cfg.tolerance && sweep >= cfg.min_sweeps {
            converged = true;
            break;
        }
    }
    Ok(DescentOutcome { block_coefficients: betas, trace, converged, sweeps_used })
}

/// Write a descent trace as CSV: `sweep_index,max_delta,b0,b1,...`.
pub fn trace_to_csv<F: Scalar>(trace: &[DescentTracePoint<F>]) -> String {
    let mut out = String::new();
    if let Some(first) = trace.first() {
        out.push_str("sweep_index,max_delta");
        for j in 0..first.coefficients_snapshot.len() {
            out.push_str(&format!(",b{j}"));
        }
        out.push('\n');
    }
    for pt in trace {
        out.push_str(&format!("{},{}", pt.sweep_index, pt.max_delta));
        for v in pt.coefficients_snapshot.iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::center_block;
    use crate::fit::fit_full_glm;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn names(tag: &str, p: usize) -> Vec<String> {
        (0..p).map(|j| format!("{tag}{j}")).collect()
    }

    fn gaussian_cfg() -> DescentConfig<f64> {
        DescentConfig::new(Family::Gaussian)
    }

    /// Gram-Schmidt orthogonalization of the columns of a matrix.
    fn orthogonalize(mut x: Array2<f64>) -> Array2<f64> {
        let (n, p) = x.dim();
        for j in 0..p {
            for k in 0..j {
                let proj: f64 =
                    (0..n).map(|i| x[[i, j]] * x[[i, k]]).sum::<f64>();
                let nk: f64 = (0..n).map(|i| x[[i, k]] * x[[i, k]]).sum();
                for i in 0..n {
                    let adj = proj / nk * x[[i, k]];
                    x[[i, j]] -= adj;
                }
            }
        }
        x
    }

    fn centered_random(n: usize, p: usize, rng: &mut StdRng) -> Array2<f64> {
        let mut x = Array2::from_shape_fn((n, p), |_| rng.random::<f64>() * 2.0 - 1.0);
        for j in 0..p {
            let m = x.column(j).sum() / n as f64;
            x.column_mut(j).mapv_inplace(|v| v - m);
        }
        x
    }

    #[test]
    fn cyclic_converges_in_one_sweep_on_orthogonal_columns() {
        let mut rng = StdRng::seed_from_u64(21);
        let x = orthogonalize(centered_random(60, 4, &mut rng));
        let block = DesignBlock::new(x.clone(), names("x", 4), true, Array1::zeros(4), None)
            .unwrap();
        let beta_true = array![1.0, -0.5, 2.0, 0.25];
        let y = TargetVector::new(x.dot(&beta_true), Family::Gaussian).unwrap();
        let out = cyclic_descent(&block, &y, &gaussian_cfg()).unwrap();
        assert!(out.converged);
        // marginal estimates equal conditional ones; first sweep already exact
        let first = &out.trace[0].coefficients_snapshot;
        for j in 0..4 {
            assert_abs_diff_eq!(first[j], beta_true[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn cyclic_single_feature_returns_marginal() {
        let mut rng = StdRng::seed_from_u64(22);
        let block = center_block(centered_random(40, 1, &mut rng), names("x", 1), false).unwrap();
        let yv: Array1<f64> = Array1::from_shape_fn(40, |_| rng.random::<f64>() - 0.5);
        let (yc, _) = crate::design::center_target(&yv);
        let y = TargetVector::new(yc.clone(), Family::Gaussian).unwrap();
        let out = cyclic_descent(&block, &y, &gaussian_cfg()).unwrap();
        let unit = Array1::ones(40);
        let marg = marginal_coefficient(&block.values().column(0), &yc.view(), &unit.view())
            .unwrap();
        assert_abs_diff_eq!(out.block_coefficients[0][0], marg, epsilon = 1e-14);
        assert!(out.converged);
    }

    #[test]
    fn cyclic_matches_full_fit_on_covarying_features() {
        // 9 covarying features from a shared-factor construction
        let mut rng = StdRng::seed_from_u64(23);
        let n = 400;
        let p = 9;
        let mut x = Array2::<f64>::zeros((n, p));
        for i in 0..n {
            let shared: f64 = rng.random::<f64>() * 2.0 - 1.0;
            for j in 0..p {
                x[[i, j]] = 0.7 * shared + 0.7 * (rng.random::<f64>() * 2.0 - 1.0);
            }
        }
        for j in 0..p {
            let m = x.column(j).sum() / n as f64;
            x.column_mut(j).mapv_inplace(|v| v - m);
        }
        let block = DesignBlock::new(x.clone(), names("x", p), true, Array1::zeros(p), None)
            .unwrap();
        let beta_true: Array1<f64> = Array1::from_shape_fn(p, |_| rng.random::<f64>() * 2.0 - 1.0);
        let noise: Array1<f64> = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
        let (yc, _) = crate::design::center_target(&(x.dot(&beta_true) + noise));
        let y = TargetVector::new(yc, Family::Gaussian).unwrap();

        let out = cyclic_descent(&block, &y, &gaussian_cfg()).unwrap();
        assert!(out.converged);
        let full = fit_full_glm(&[&block], &y, Family::Gaussian, 1e-8, 100).unwrap();
        for j in 0..p {
            assert_abs_diff_eq!(
                out.block_coefficients[0][j],
                full.coefficients[j],
                epsilon = 1e-7
            );
        }
        // converges in the tens-to-hundreds of sweeps, not in a couple and
        // not in many thousands
        assert!(out.sweeps_used >= 5, "sweeps {}", out.sweeps_used);
        assert!(out.sweeps_used <= 2000, "sweeps {}", out.sweeps_used);
    }

    #[test]
    fn block_descent_one_sweep_on_orthogonal_blocks() {
        let mut rng = StdRng::seed_from_u64(24);
        let x = orthogonalize(centered_random(80, 6, &mut rng));
        let xa = x.slice(ndarray::s![.., ..3]).to_owned();
        let xb = x.slice(ndarray::s![.., 3..]).to_owned();
        let a = DesignBlock::new(xa, names("a", 3), true, Array1::zeros(3), None).unwrap();
        let b = DesignBlock::new(xb, names("b", 3), true, Array1::zeros(3), None).unwrap();
        let beta = array![0.5, -1.0, 0.7, 1.2, -0.3, 0.9];
        let y = TargetVector::new(x.dot(&beta), Family::Gaussian).unwrap();
        let out = block_descent(&[&a, &b], &y, &gaussian_cfg()).unwrap();
        assert!(out.converged);
        // coefficients after sweep 1 are already the fixed point
        let after_first = &out.trace[0].coefficients_snapshot;
        let final_c = out.concatenated();
        for j in 0..6 {
            assert_abs_diff_eq!(after_first[j], final_c[j], epsilon = 1e-12);
        }
        assert!(out.trace.len() <= 2, "orthogonal blocks converge immediately");
    }

    #[test]
    fn block_descent_single_block_equals_full_fit_in_one_sweep() {
        let mut rng = StdRng::seed_from_u64(25);
        let block = center_block(centered_random(60, 3, &mut rng), names("x", 3), false).unwrap();
        let beta = array![0.4, -1.2, 0.8];
        let noise: Array1<f64> = Array1::from_shape_fn(60, |_| rng.random::<f64>() - 0.5);
        let (yc, _) = crate::design::center_target(&(block.values().dot(&beta) + noise));
        let y = TargetVector::new(yc, Family::Gaussian).unwrap();
        let out = block_descent(&[&block], &y, &gaussian_cfg()).unwrap();
        assert!(out.converged);
        let full = fit_full_glm(&[&block], &y, Family::Gaussian, 1e-8, 100).unwrap();
        let first = &out.trace[0].coefficients_snapshot;
        for j in 0..3 {
            assert_abs_diff_eq!(first[j], full.coefficients[j], epsilon = 1e-10);
        }
        assert!(matches!(
            block_descent(&[], &y, &gaussian_cfg()),
            Err(DescentError::NotEnoughBlocks { .. })
        ));
    }

    #[test]
    fn block_descent_matches_oracle_gaussian_and_binomial() {
        let mut rng = StdRng::seed_from_u64(26);
        for rep in 0..20 {
            let n = 300;
            let p = 4 + (rep % 6);
            let nblocks = 2 + (rep % 3);
            let mut x = Array2::<f64>::zeros((n, p));
            for i in 0..n {
                let shared: f64 = rng.random::<f64>() * 2.0 - 1.0;
                for j in 0..p {
                    x[[i, j]] = 0.5 * shared + 0.9 * (rng.random::<f64>() * 2.0 - 1.0);
                }
            }
            for j in 0..p {
                let m = x.column(j).sum() / n as f64;
                x.column_mut(j).mapv_inplace(|v| v - m);
            }
            let beta_true: Array1<f64> =
                Array1::from_shape_fn(p, |_| rng.random::<f64>() - 0.5);
            let family = if rep % 2 == 0 { Family::Gaussian } else { Family::Binomial };
            let eta = x.dot(&beta_true);
            let yv = match family {
                Family::Gaussian => {
                    let noise: Array1<f64> =
                        Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
                    let (yc, _) = crate::design::center_target(&(&eta + &noise));
                    yc
                }
                _ => Array1::from_shape_fn(n, |i| {
                    let pr = 1.0 / (1.0 + (-eta[i]).exp());
                    if rng.random::<f64>() < pr {
                        1.0
                    } else {
                        0.0
                    }
                }),
            };
            let y = TargetVector::new(yv, family).unwrap();

            // split columns into contiguous blocks
            let mut blocks = Vec::new();
            let base = p / nblocks;
            let mut start = 0;
            for k in 0..nblocks {
                let extra = if k < p % nblocks { 1 } else { 0 };
                let end = start + base + extra;
                let xv = x.slice(ndarray::s![.., start..end]).to_owned();
                blocks.push(
                    DesignBlock::new(
                        xv,
                        names(&format!("b{k}_"), end - start),
                        true,
                        Array1::zeros(end - start),
                        None,
                    )
                    .unwrap(),
                );
                start = end;
            }
            let refs: Vec<&DesignBlock<f64>> = blocks.iter().collect();
            let cfg = DescentConfig { tolerance: 1e-10, ..DescentConfig::new(family) };
            let out = block_descent(&refs, &y, &cfg).unwrap();
            assert!(out.converged, "rep {rep} did not converge");
            let full = fit_full_glm(&refs, &y, family, 1e-12, 200).unwrap();
            let got = out.concatenated();
            for j in 0..p {
                assert!(
                    (got[j] - full.coefficients[j]).abs() < 1e-6,
                    "rep {rep} coeff {j}: {} vs {}",
                    got[j],
                    full.coefficients[j]
                );
            }
        }
    }

    #[test]
    fn gaussian_loss_is_monotone_over_sweeps() {
        let mut rng = StdRng::seed_from_u64(27);
        let n = 200;
        let x = centered_random(n, 6, &mut rng);
        let beta_true: Array1<f64> = Array1::from_shape_fn(6, |_| rng.random::<f64>() - 0.5);
        let noise: Array1<f64> = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
        let (yc, _) = crate::design::center_target(&(x.dot(&beta_true) + noise));
        let y = TargetVector::new(yc.clone(), Family::Gaussian).unwrap();
        let xa = x.slice(ndarray::s![.., ..3]).to_owned();
        let xb = x.slice(ndarray::s![.., 3..]).to_owned();
        let a = DesignBlock::new(xa.clone(), names("a", 3), true, Array1::zeros(3), None).unwrap();
        let b = DesignBlock::new(xb.clone(), names("b", 3), true, Array1::zeros(3), None).unwrap();
        let out = block_descent(&[&a, &b], &y, &gaussian_cfg()).unwrap();
        let mut prev = f64::INFINITY;
        for pt in &out.trace {
            let ba = pt.coefficients_snapshot.slice(ndarray::s![..3]).to_owned();
            let bb = pt.coefficients_snapshot.slice(ndarray::s![3..]).to_owned();
            let fitted = xa.dot(&ba) + xb.dot(&bb);
            let rss: f64 = (&yc - &fitted).iter().map(|e| e * e).sum();
            assert!(rss <= prev + 1e-9, "rss increased: {prev} -> {rss}");
            prev = rss;
        }
    }

    #[test]
    fn block_order_permutation_changes_trace_not_fixed_point() {
        let mut rng = StdRng::seed_from_u64(28);
        let n = 150;
        let x = centered_random(n, 6, &mut rng);
        let beta_true: Array1<f64> = Array1::from_shape_fn(6, |_| rng.random::<f64>() - 0.5);
        let noise: Array1<f64> = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
        let (yc, _) = crate::design::center_target(&(x.dot(&beta_true) + noise));
        let y = TargetVector::new(yc, Family::Gaussian).unwrap();
        let a = DesignBlock::new(
            x.slice(ndarray::s![.., ..3]).to_owned(),
            names("a", 3),
            true,
            Array1::zeros(3),
            None,
        )
        .unwrap();
        let b = DesignBlock::new(
            x.slice(ndarray::s![.., 3..]).to_owned(),
            names("b", 3),
            true,
            Array1::zeros(3),
            None,
        )
        .unwrap();
        let ab = block_descent(&[&a, &b], &y, &gaussian_cfg()).unwrap();
        let ba = block_descent(&[&b, &a], &y, &gaussian_cfg()).unwrap();
        let cab = ab.concatenated();
        let cba = ba.concatenated();
        // compare a-block coefficients across orderings
        for j in 0..3 {
            assert_abs_diff_eq!(cab[j], cba[3 + j], epsilon = 1e-8);
            assert_abs_diff_eq!(cab[3 + j], cba[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let trace = vec![DescentTracePoint {
            sweep_index: 1,
            coefficients_snapshot: array![0.5, -1.0],
            max_delta: 0.25,
        }];
        let csv = trace_to_csv(&trace);
        assert!(csv.starts_with("sweep_index,max_delta,b0,b1\n"));
        assert!(csv.contains("1,0.25,0.5,-1"));
    }
}
