//! Session runners shared by the CLI subcommands and the acceptance suite:
//! two-party loopback execution, benchmark-grid replications, and
//! reconstruction studies.

use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use splitglm_core::attack::{
    expected_mse, reconstruct, reconstruction_mse, revealed_fraction, AdversaryView,
};
use splitglm_core::design::{DesignBlock, TargetVector};
use splitglm_core::family::Family;
use splitglm_core::fit::{fit_full_glm, FullFit};
use splitglm_core::sim;
use splitglm_core::stderr::IterationTrace;
use splitglm_protocol::{
    loopback_pair, run_party, FitResult, PartyRole, ProtocolError, SessionConfig,
};
use std::time::{Duration, Instant};

/// Outcome of one two-party loopback session.
pub struct LoopbackRun {
    pub initiator: (FitResult, IterationTrace),
    pub responder: (FitResult, IterationTrace),
    pub initiator_frames: Vec<Vec<u8>>,
    pub responder_frames: Vec<Vec<u8>>,
    pub wall: Duration,
}

impl LoopbackRun {
    /// Concatenated coefficients, initiator block first.
    pub fn concatenated_coefficients(&self) -> Array1<f64> {
        let a = &self.initiator.0.local_coefficients;
        let b = &self.responder.0.local_coefficients;
        let mut out = Array1::zeros(a.len() + b.len());
        out.slice_mut(ndarray::s![..a.len()]).assign(a);
        out.slice_mut(ndarray::s![a.len()..]).assign(b);
        out
    }

    /// Concatenated recovered standard errors when both sides have them.
    pub fn concatenated_standard_errors(&self) -> Option<Array1<f64>> {
        let a = self.initiator.0.local_standard_errors.as_ref()?;
        let b = self.responder.0.local_standard_errors.as_ref()?;
        let mut out = Array1::zeros(a.standard_errors.len() + b.standard_errors.len());
        out.slice_mut(ndarray::s![..a.standard_errors.len()])
            .assign(&a.standard_errors);
        out.slice_mut(ndarray::s![a.standard_errors.len()..])
            .assign(&b.standard_errors);
        Some(out)
    }
}

/// Run both parties of a session over the loopback transport, the
/// responder on a second thread.
pub fn run_loopback(
    block_a: &DesignBlock<f64>,
    block_b: &DesignBlock<f64>,
    y: &TargetVector<f64>,
    cfg_i: &SessionConfig,
    cfg_r: &SessionConfig,
) -> Result<LoopbackRun, ProtocolError> {
    let start = Instant::now();
    let pair = loopback_pair(&cfg_i.psk, &cfg_r.psk, &cfg_i.session_id);
    let mut chan_i = pair.initiator;
    let mut chan_r = pair.responder;
    let (initiator, responder) = std::thread::scope(|scope| {
        let handle = scope.spawn(|| {
            run_party(block_b, y, cfg_r, PartyRole::Responder, &mut chan_r)
        });
        let initiator = run_party(block_a, y, cfg_i, PartyRole::Initiator, &mut chan_i);
        let responder = handle.join().expect("responder thread");
        (initiator, responder)
    });
    let initiator_frames = pair.initiator_sent.lock().unwrap().clone();
    let responder_frames = pair.responder_sent.lock().unwrap().clone();
    Ok(LoopbackRun {
        initiator: initiator?,
        responder: responder?,
        initiator_frames,
        responder_frames,
        wall: start.elapsed(),
    })
}

/// Deterministic per-replication session config pair.
pub fn session_configs(
    family: Family,
    p_a: usize,
    p_b: usize,
    tolerance: f64,
    seed: u64,
) -> (SessionConfig, SessionConfig) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut psk = [0u8; 32];
    rng.fill(&mut psk);
    let mut sid = [0u8; 16];
    rng.fill(&mut sid);
    let mut cfg_i = SessionConfig::new(family, p_a, psk, sid);
    let mut cfg_r = SessionConfig::new(family, p_b, psk, sid);
    cfg_i.tolerance = tolerance;
    cfg_r.tolerance = tolerance;
    (cfg_i, cfg_r)
}

/// One row of the benchmark grid: a replication under one condition,
/// compared against the full-data oracle.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub family: Family,
    pub n: usize,
    pub p: usize,
    pub covariance: f64,
    pub replication: usize,
    pub iterations: usize,
    pub converged: bool,
    pub max_abs_coef_diff: f64,
    pub mean_rel_coef_bias: f64,
    pub max_rel_se_bias: Option<f64>,
    pub protocol_seconds: f64,
    pub oracle_seconds: f64,
}

impl BenchRow {
    pub fn csv_header() -> &'static str {
        "family,n,p,covariance,replication,iterations,converged,\
         max_abs_coef_diff,mean_rel_coef_bias,max_rel_se_bias,\
         protocol_seconds,oracle_seconds"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:e},{:e},{},{:.6},{:.6}",
            self.family.name(),
            self.n,
            self.p,
            self.covariance,
            self.replication,
            self.iterations,
            self.converged,
            self.max_abs_coef_diff,
            self.mean_rel_coef_bias,
            self.max_rel_se_bias.map_or(String::new(), |v| format!("{v:e}")),
            self.protocol_seconds,
            self.oracle_seconds,
        )
    }
}

/// Run one benchmark replication: simulate, run the protocol over
/// loopback, fit the oracle, compare.
pub fn benchmark_replication(
    family: Family,
    n: usize,
    p: usize,
    covariance: f64,
    replication: usize,
    base_seed: u64,
    tolerance: f64,
) -> Result<BenchRow, ProtocolError> {
    let seed = base_seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add((replication as u64) << 24)
        .wrapping_add(p as u64)
        .wrapping_add((covariance * 1000.0) as u64)
        .wrapping_add(family.tag() as u64);
    let mut rng = StdRng::seed_from_u64(seed);
    let inst = sim::benchmark_instance(family, n, p, covariance, 2, &mut rng);
    let block_a = &inst.blocks[0];
    let block_b = &inst.blocks[1];
    let y = TargetVector::new(inst.target.clone(), family).expect("simulated target is valid");
    let (cfg_i, cfg_r) =
        session_configs(family, block_a.ncols(), block_b.ncols(), tolerance, seed ^ 0x5bd1e995);
    let run = run_loopback(block_a, block_b, &y, &cfg_i, &cfg_r)?;

    let oracle_start = Instant::now();
    let full = fit_full_glm(&[block_a, block_b], &y, family, tolerance, 500)
        .map_err(ProtocolError::Fit)?;
    let oracle_seconds = oracle_start.elapsed().as_secs_f64();

    let got = run.concatenated_coefficients();
    let (max_abs, mean_rel) = coefficient_diffs(&got, &full.coefficients);
    let max_rel_se = run
        .concatenated_standard_errors()
        .map(|se| max_rel_diff(&se, &full.standard_errors));

    Ok(BenchRow {
        family,
        n,
        p,
        covariance,
        replication,
        iterations: run.initiator.0.iterations_used,
        converged: run.initiator.0.converged,
        max_abs_coef_diff: max_abs,
        mean_rel_coef_bias: mean_rel,
        max_rel_se_bias: max_rel_se,
        protocol_seconds: run.wall.as_secs_f64(),
        oracle_seconds,
    })
}

fn coefficient_diffs(got: &Array1<f64>, want: &Array1<f64>) -> (f64, f64) {
    let mut max_abs: f64 = 0.0;
    let mut rel_sum = 0.0;
    let mut rel_count = 0usize;
    for (g, w) in got.iter().zip(want.iter()) {
        max_abs = max_abs.max((g - w).abs());
        if w.abs() > 1e-6 {
            rel_sum += (g - w) / w;
            rel_count += 1;
        }
    }
    (max_abs, if rel_count > 0 { rel_sum / rel_count as f64 } else { 0.0 })
}

pub fn max_rel_diff(got: &Array1<f64>, want: &Array1<f64>) -> f64 {
    got.iter()
        .zip(want.iter())
        .map(|(g, w)| ((g - w) / w).abs())
        .fold(0.0f64, f64::max)
}

/// Full oracle fit for a simulated instance, for callers that need it
/// alongside the protocol run.
pub fn oracle_fit(
    blocks: &[&DesignBlock<f64>],
    y: &TargetVector<f64>,
    family: Family,
    tolerance: f64,
) -> Result<FullFit<f64>, ProtocolError> {
    fit_full_glm(blocks, y, family, tolerance, 500).map_err(ProtocolError::Fit)
}

/// One reconstruction replication on synthetic uncorrelated features:
/// draw the block, disclose `r_known` coefficient sets with their
/// predictions, reconstruct, and measure.
#[derive(Debug, Clone)]
pub struct AttackRow {
    pub p: usize,
    pub r_known: usize,
    pub replication: usize,
    pub mse: f64,
    pub expected_mse: f64,
    pub revealed_fraction: f64,
}

impl AttackRow {
    pub fn csv_header() -> &'static str {
        "p,r_known,replication,mse,expected_mse,revealed_fraction"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{:.6}",
            self.p, self.r_known, self.replication, self.mse, self.expected_mse,
            self.revealed_fraction
        )
    }
}

pub fn attack_replication(
    p: usize,
    r_known: usize,
    n: usize,
    sigma2: f64,
    correlated: bool,
    replication: usize,
    base_seed: u64,
) -> AttackRow {
    let seed = base_seed
        .wrapping_mul(0x2545f4914f6cdd1d)
        .wrapping_add((replication as u64) << 16)
        .wrapping_add((p as u64) << 8)
        .wrapping_add(r_known as u64);
    let mut rng = StdRng::seed_from_u64(seed);
    let x = if correlated {
        let mut x = sim::equicorrelated_features(n, p, 0.5, &mut rng);
        x.mapv_inplace(|v| v * sigma2.sqrt());
        x
    } else {
        sim::independent_features(n, p, sigma2, &mut rng)
    };
    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let block = splitglm_core::design::center_block(x, names, false)
        .expect("simulated block is valid");
    // r_known disclosed coefficient sets with their matching predictions
    let b = Array2::from_shape_fn((p, r_known), |_| rng.random::<f64>() * 2.0 - 1.0);
    let preds = block.values().dot(&b);
    let view = AdversaryView {
        received_predictions: preds,
        known_coefficients: Some(b),
        known_iterations: (0..r_known).collect(),
    };
    let x_hat = reconstruct(&view).expect("r_known >= 1");
    let mse = reconstruction_mse(&block, &x_hat).expect("shapes agree");
    let revealed = revealed_fraction(&block, &x_hat).expect("shapes agree");
    AttackRow {
        p,
        r_known,
        replication,
        mse,
        expected_mse: expected_mse(sigma2, r_known.min(p), p).expect("r <= p"),
        revealed_fraction: revealed,
    }
}

/// Run an actual protocol session on uncorrelated features and measure what
/// the final disclosed coefficient vector reveals about the initiator's
/// block: the single-disclosure study.
pub fn single_disclosure_replication(
    p_a: usize,
    n: usize,
    replication: usize,
    base_seed: u64,
) -> Result<f64, ProtocolError> {
    let seed = base_seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(replication as u64);
    let mut rng = StdRng::seed_from_u64(seed);
    let xa = sim::independent_features(n, p_a, 1.0, &mut rng);
    let xb = sim::independent_features(n, 2, 1.0, &mut rng);
    let names = |t: &str, p: usize| (0..p).map(|j| format!("{t}{j}")).collect::<Vec<_>>();
    let block_a = splitglm_core::design::center_block(xa, names("a", p_a), false)
        .expect("simulated block");
    let block_b = splitglm_core::design::center_block(xb, names("b", 2), false)
        .expect("simulated block");
    let beta_a = sim::random_coefficients(p_a, &mut rng);
    let beta_b = sim::random_coefficients(2, &mut rng);
    let noise: Array1<f64> = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
    let eta = block_a.values().dot(&beta_a) + block_b.values().dot(&beta_b) + noise;
    let (yc, _) = splitglm_core::design::center_target(&eta);
    let y = TargetVector::new(yc, Family::Gaussian).expect("gaussian target");
    let (cfg_i, cfg_r) = session_configs(Family::Gaussian, p_a, 2, 1e-9, seed ^ 0xabcdef);
    let run = run_loopback(&block_a, &block_b, &y, &cfg_i, &cfg_r)?;
    // the adversary (responder) saw every initiator prediction and, at the
    // end, the disclosed final coefficient vector
    let trace_b = &run.responder.1;
    let view = AdversaryView::with_final_coefficients(
        trace_b.received_predictions.clone(),
        run.initiator.0.local_coefficients.clone(),
    );
    let x_hat = reconstruct(&view).expect("one disclosed column");
    Ok(revealed_fraction(&block_a, &x_hat).expect("shapes agree"))
}
