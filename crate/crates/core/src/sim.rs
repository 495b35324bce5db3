//! Data generators for benchmarks and replication studies: equicorrelated
//! normal features, gaussian targets with a controlled signal fraction, and
//! binomial/poisson targets from a scaled linear predictor.

use crate::design::{center_target, DesignBlock};
use crate::family::Family;
use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Unit-variance features with constant pairwise covariance `rho`
/// (shared-factor construction, exact at the population level).
pub fn equicorrelated_features<R: Rng>(
    n: usize,
    p: usize,
    rho: f64,
    rng: &mut R,
) -> Array2<f64> {
    assert!((0.0..1.0).contains(&rho), "rho in [0, 1)");
    let shared_w = rho.sqrt();
    let own_w = (1.0 - rho).sqrt();
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        let shared: f64 = StandardNormal.sample(rng);
        for j in 0..p {
            let own: f64 = StandardNormal.sample(rng);
            x[[i, j]] = shared_w * shared + own_w * own;
        }
    }
    x
}

/// Uncorrelated normal features with a common per-feature variance.
pub fn independent_features<R: Rng>(
    n: usize,
    p: usize,
    variance: f64,
    rng: &mut R,
) -> Array2<f64> {
    let sd = variance.sqrt();
    Array2::from_shape_fn((n, p), |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * sd
    })
}

/// Draw coefficients uniformly on [-1, 1].
pub fn random_coefficients<R: Rng>(p: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(p, |_| rng.random::<f64>() * 2.0 - 1.0)
}

/// Gaussian target with the population signal fraction (R^2) fixed by
/// scaling the noise against the population variance of `X beta` under the
/// equicorrelated feature model.
pub fn gaussian_target<R: Rng>(
    x: &Array2<f64>,
    beta: &Array1<f64>,
    rho: f64,
    r_squared: f64,
    rng: &mut R,
) -> Array1<f64> {
    assert!(r_squared > 0.0 && r_squared < 1.0);
    // var(X beta) under cov = (1 - rho) I + rho 11^T
    let sum_b: f64 = beta.sum();
    let sum_b2: f64 = beta.iter().map(|b| b * b).sum();
    let signal = (1.0 - rho) * sum_b2 + rho * sum_b * sum_b;
    let noise_var = signal * (1.0 - r_squared) / r_squared;
    let sd = noise_var.sqrt();
    let eta = x.dot(beta);
    Array1::from_shape_fn(x.nrows(), |i| {
        let z: f64 = StandardNormal.sample(rng);
        eta[i] + sd * z
    })
}

/// Bernoulli target from a logistic model; `eta_sd_target` rescales the
/// linear predictor to a fixed standard deviation to keep instances away
/// from quasi-separation at high dimension.
pub fn binomial_target<R: Rng>(
    x: &Array2<f64>,
    beta: &mut Array1<f64>,
    rho: f64,
    eta_sd_target: f64,
    rng: &mut R,
) -> Array1<f64> {
    let sum_b: f64 = beta.sum();
    let sum_b2: f64 = beta.iter().map(|b| b * b).sum();
    let eta_var = (1.0 - rho) * sum_b2 + rho * sum_b * sum_b;
    if eta_var > 0.0 {
        let scale = eta_sd_target / eta_var.sqrt();
        beta.mapv_inplace(|b| b * scale);
    }
    let eta = x.dot(&*beta);
    Array1::from_shape_fn(x.nrows(), |i| {
        let p = 1.0 / (1.0 + (-eta[i]).exp());
        if rng.random::<f64>() < p {
            1.0
        } else {
            0.0
        }
    })
}

/// A complete simulated instance, already split into per-party blocks.
pub struct SimulatedInstance {
    pub blocks: Vec<DesignBlock<f64>>,
    pub target: Array1<f64>,
    pub family: Family,
    pub generating_beta: Array1<f64>,
}

/// Split columns `0..p` into contiguous chunks of the given sizes.
pub fn split_columns(x: &Array2<f64>, sizes: &[usize]) -> Vec<Array2<f64>> {
    let total: usize = sizes.iter().sum();
    assert_eq!(total, x.ncols(), "split sizes must cover all columns");
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &sz in sizes {
        out.push(x.slice(s![.., start..start + sz]).to_owned());
        start += sz;
    }
    out
}

/// Generate one benchmark instance following the simulation design used
/// throughout the workspace: equicorrelated features, even split across
/// parties, gaussian targets at R^2 = 0.5 or binomial targets at eta sd 1.
pub fn benchmark_instance<R: Rng>(
    family: Family,
    n: usize,
    p: usize,
    rho: f64,
    parties: usize,
    rng: &mut R,
) -> SimulatedInstance {
    let x = equicorrelated_features(n, p, rho, rng);
    let mut beta = random_coefficients(p, rng);
    let (target, x) = match family {
        Family::Gaussian => {
            let raw = gaussian_target(&x, &beta, rho, 0.5, rng);
            let (centered, _) = center_target(&raw);
            (centered, x)
        }
        Family::Binomial => {
            let t = binomial_target(&x, &mut beta, rho, 1.0, rng);
            (t, x)
        }
        Family::Poisson => {
            let sum_b: f64 = beta.sum();
            let sum_b2: f64 = beta.iter().map(|b| b * b).sum();
            let eta_var = (1.0 - rho) * sum_b2 + rho * sum_b * sum_b;
            if eta_var > 0.0 {
                let scale = 0.6 / eta_var.sqrt();
                beta.mapv_inplace(|b| b * scale);
            }
            let eta = x.dot(&beta);
            let t = Array1::from_shape_fn(n, |i| {
                poisson_draw(eta[i].exp().min(1e6), rng)
            });
            (t, x)
        }
    };
    // even split: first blocks take the remainder columns
    let base = p / parties;
    let sizes: Vec<usize> = (0..parties)
        .map(|k| base + usize::from(k < p % parties))
        .collect();
    let pieces = split_columns(&x, &sizes);
    let mut blocks = Vec::with_capacity(parties);
    let mut start = 0;
    for piece in pieces {
        let pcols = piece.ncols();
        let nm: Vec<String> = (start..start + pcols).map(|j| format!("x{j}")).collect();
        // center each party's block locally
        blocks.push(
            crate::design::center_block(piece, nm, false).expect("simulated block is valid"),
        );
        start += pcols;
    }
    // non-gaussian families carry an explicit intercept on the first block
    if family != Family::Gaussian {
        let first = blocks.remove(0);
        blocks.insert(0, first.with_intercept().expect("intercept append"));
    }
    SimulatedInstance { blocks, target, family, generating_beta: beta }
}

fn poisson_draw<R: Rng>(lambda: f64, rng: &mut R) -> f64 {
    // Knuth's method is fine for the small lambdas used in tests
    if lambda <= 0.0 {
        return 0.0;
    }
    if lambda < 30.0 {
        let l = (-lambda).exp();
        let mut k = 0u64;
        let mut prod: f64 = 1.0;
        loop {
            prod *= rng.random::<f64>();
            if prod <= l {
                return k as f64;
            }
            k += 1;
        }
    }
    // normal approximation for large lambda
    let z: f64 = StandardNormal.sample(rng);
    (lambda + lambda.sqrt() * z).round().max(0.0)
}
