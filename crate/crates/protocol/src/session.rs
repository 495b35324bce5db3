//! Per-party session state machine.
//!
//! One session runs the alternating block-update loop: the initiator updates
//! its coefficients against the latest partner prediction and sends its own
//! prediction; the responder does the same in reply. Each prediction message
//! carries the sender's max coefficient change, so both parties evaluate the
//! same convergence condition on the same numbers and agree without extra
//! coordination. The arithmetic per update is shared with the local
//! `block_descent` engine, so a loopback session reproduces the local run
//! bit for bit.

use crate::transport::{FrameCarrier, PartyRole, SecureChannel, TransportError};
use crate::wire::{HelloPayload, ProtocolMessage, PROTOCOL_VERSION};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use splitglm_core::bcd::{block_update, refresh_working_set};
use splitglm_core::design::{DesignBlock, TargetVector};
use splitglm_core::family::{Family, FamilyError};
use splitglm_core::fit::FitError;
use splitglm_core::stderr::{recover_standard_errors, IterationTrace, StderrError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("target digests differ: the parties do not hold identically ordered targets")]
    DigestMismatch,
    #[error("protocol version mismatch: ours {ours}, theirs {theirs}")]
    VersionMismatch { ours: u16, theirs: u16 },
    #[error("session parameter mismatch: {0}")]
    ConfigMismatch(String),
    #[error("peer aborted: {0}")]
    PeerAbort(String),
    #[error("unexpected message: expected {expected}, got {got} (iteration {iteration})")]
    UnexpectedMessage {
        expected: &'static str,
        got: &'static str,
        iteration: u32,
    },
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Family(#[from] FamilyError),
}

/// Everything a party needs to run one session.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub family: Family,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// This party's requested convergence floor; the session uses the max
    /// of both parties' requests. Defaults to `P_local + 5` so the trace
    /// carries enough columns for standard-error recovery. Note the
    /// exchanged floor discloses an upper bound on this party's block size.
    pub min_iterations: usize,
    pub psk: [u8; 32],
    /// Standard deviation of zero-mean gaussian noise added to every
    /// outgoing prediction; 0 disables the mitigation.
    pub noise_sd: f64,
    /// Random session token; the initiator's value keys the channel.
    pub session_id: [u8; 16],
    /// Seed for the mitigation noise stream; `None` draws from OS entropy.
    pub noise_seed: Option<u64>,
}

impl SessionConfig {
    /// Config with the defaults used throughout: tolerance `1e-8`, at most
    /// `10_000` iterations, floor `p_local + 5`.
    pub fn new(family: Family, p_local: usize, psk: [u8; 32], session_id: [u8; 16]) -> Self {
        Self {
            family,
            tolerance: 1e-8,
            max_iterations: 10_000,
            min_iterations: p_local + 5,
            psk,
            noise_sd: 0.0,
            session_id,
            noise_seed: None,
        }
    }

    fn validate(&self) -> Result<(), ProtocolError> {
        if !self.tolerance.is_finite() || self.tolerance <= 0.0 {
            return Err(ProtocolError::InvalidConfig("tolerance must be positive".into()));
        }
        if self.min_iterations > self.max_iterations {
            return Err(ProtocolError::InvalidConfig(format!(
                "min_iterations {} exceeds max_iterations {}",
                self.min_iterations, self.max_iterations
            )));
        }
        if self.noise_sd < 0.0 || !self.noise_sd.is_finite() {
            return Err(ProtocolError::InvalidConfig("noise_sd must be non-negative".into()));
        }
        Ok(())
    }
}

/// Parameters both parties agreed on during the handshake.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreedSession {
    pub n: usize,
    pub family: Family,
    pub tolerance: f64,
    /// Max of both parties' requested floors.
    pub min_iterations: usize,
    pub version: u16,
}

/// Canonical digest of the target vector: SHA-256 over the values as
/// IEEE-754 binary64 little-endian bytes, in row order.
pub fn target_digest(y: &TargetVector<f64>) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for v in y.values().iter() {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().into()
}

/// Standard-error recovery outcome carried on the fit result; recovery can
/// legitimately fail (noisy or too-short traces), in which case the failure
/// reason is reported instead.
#[derive(Debug, Clone)]
pub struct SeSummary {
    pub standard_errors: Array1<f64>,
    pub sigma2: Option<f64>,
    pub estimated_partner_rank: usize,
}

/// What a party holds when the session ends.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub local_coefficients: Array1<f64>,
    /// Recovered standard errors for the local coefficients, when the trace
    /// supported recovery.
    pub local_standard_errors: Option<SeSummary>,
    /// Why recovery was not possible, when it was not.
    pub se_recovery_error: Option<String>,
    pub iterations_used: usize,
    pub converged: bool,
    pub final_partner_prediction: Array1<f64>,
    /// This party's own final prediction vector (its share of the combined
    /// linear predictor).
    pub final_own_prediction: Array1<f64>,
}

/// Run the handshake: agree on N, family, tolerance, the iteration floor
/// and the protocol version, and confirm both parties hold the identical,
/// identically ordered target.
pub fn handshake<C: FrameCarrier>(
    cfg: &SessionConfig,
    role: PartyRole,
    channel: &mut SecureChannel<C>,
    n: usize,
    digest: [u8; 32],
) -> Result<AgreedSession, ProtocolError> {
    cfg.validate()?;
    let mine = HelloPayload {
        version: PROTOCOL_VERSION,
        family_tag: cfg.family.tag(),
        n: n as u64,
        tolerance: cfg.tolerance,
        min_iterations: cfg.min_iterations as u32,
        target_digest: digest,
    };
    let theirs = match role {
        PartyRole::Initiator => {
            channel.send(&ProtocolMessage::Hello(mine.clone()))?;
            match channel.receive()? {
                ProtocolMessage::HelloAck(h) => h,
                ProtocolMessage::Abort { reason, .. } => {
                    return Err(ProtocolError::PeerAbort(reason))
                }
                other => {
                    return Err(unexpected(channel, "HELLO_ACK", &other));
                }
            }
        }
        PartyRole::Responder => {
            let hello = match channel.receive()? {
                ProtocolMessage::Hello(h) => h,
                ProtocolMessage::Abort { reason, .. } => {
                    return Err(ProtocolError::PeerAbort(reason))
                }
                other => {
                    return Err(unexpected(channel, "HELLO", &other));
                }
            };
            check_hello(channel, &mine, &hello)?;
            channel.send(&ProtocolMessage::HelloAck(HelloPayload {
                min_iterations: cfg.min_iterations as u32,
                ..mine.clone()
            }))?;
            hello
        }
    };
    if role == PartyRole::Initiator {
        check_hello(channel, &mine, &theirs)?;
    }
    Ok(AgreedSession {
        n,
        family: cfg.family,
        tolerance: cfg.tolerance,
        min_iterations: cfg.min_iterations.max(theirs.min_iterations as usize),
        version: PROTOCOL_VERSION,
    })
}

fn check_hello<C: FrameCarrier>(
    channel: &mut SecureChannel<C>,
    mine: &HelloPayload,
    theirs: &HelloPayload,
) -> Result<(), ProtocolError> {
    if theirs.version != mine.version {
        abort(channel, "protocol version mismatch");
        return Err(ProtocolError::VersionMismatch {
            ours: mine.version,
            theirs: theirs.version,
        });
    }
    if theirs.family_tag != mine.family_tag {
        abort(channel, "family mismatch");
        return Err(ProtocolError::ConfigMismatch(format!(
            "family tag {} vs {}",
            mine.family_tag, theirs.family_tag
        )));
    }
    if theirs.n != mine.n {
        abort(channel, "row count mismatch");
        return Err(ProtocolError::ConfigMismatch(format!(
            "row count {} vs {}",
            mine.n, theirs.n
        )));
    }
    if theirs.tolerance.to_bits() != mine.tolerance.to_bits() {
        abort(channel, "tolerance mismatch");
        return Err(ProtocolError::ConfigMismatch(format!(
            "tolerance {} vs {}",
            mine.tolerance, theirs.tolerance
        )));
    }
    if theirs.target_digest != mine.target_digest {
        abort(channel, "target digest mismatch");
        return Err(ProtocolError::DigestMismatch);
    }
    Ok(())
}

fn abort<C: FrameCarrier>(channel: &mut SecureChannel<C>, reason: &str) {
    // best-effort: the session is failing anyway
    let _ = channel.send(&ProtocolMessage::Abort {
        iteration: 0,
        reason: reason.to_string(),
    });
}

fn unexpected<C: FrameCarrier>(
    channel: &mut SecureChannel<C>,
    expected: &'static str,
    got: &ProtocolMessage,
) -> ProtocolError {
    abort(channel, &format!("expected {expected}"));
    ProtocolError::UnexpectedMessage {
        expected,
        got: got.kind_name(),
        iteration: got.iteration(),
    }
}

struct NoiseSource {
    rng: ChaCha12Rng,
    sd: f64,
}

impl NoiseSource {
    fn new(cfg: &SessionConfig, role: PartyRole) -> Option<Self> {
        if cfg.noise_sd == 0.0 {
            return None;
        }
        let rng = match cfg.noise_seed {
            Some(seed) => {
                // separate deterministic streams per role
                ChaCha12Rng::seed_from_u64(seed ^ if role == PartyRole::Initiator { 0 } else { 1 })
            }
            None => ChaCha12Rng::from_os_rng(),
        };
        Some(Self { rng, sd: cfg.noise_sd })
    }

    fn perturb(&mut self, v: &Array1<f64>) -> Array1<f64> {
        v.mapv(|x| {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            x + self.sd * z
        })
    }
}

/// Run one party of a session to completion over an established channel.
///
/// On convergence (both parties' deltas below tolerance at an iteration at
/// or past the agreed floor) each party holds exactly its own coefficient
/// block plus the recovered standard errors; a session that reaches either
/// party's iteration cap is returned with `converged = false`.
pub fn run_party<C: FrameCarrier>(
    block: &DesignBlock<f64>,
    y: &TargetVector<f64>,
    cfg: &SessionConfig,
    role: PartyRole,
    channel: &mut SecureChannel<C>,
) -> Result<(FitResult, IterationTrace), ProtocolError> {
    let n = block.nrows();
    if y.len() != n {
        return Err(ProtocolError::InvalidConfig(format!(
            "target has {} rows, block has {n}",
            y.len()
        )));
    }
    if y.family() != cfg.family {
        return Err(ProtocolError::InvalidConfig(format!(
            "target validated for {:?}, session configured for {:?}",
            y.family(),
            cfg.family
        )));
    }
    let digest = target_digest(y);
    let agreed = handshake(cfg, role, channel, n, digest)?;
    let mut noise = NoiseSource::new(cfg, role);

    let mut beta = Array1::<f64>::zeros(block.ncols());
    let mut own_yhat = Array1::<f64>::zeros(n);
    let mut partner_yhat = Array1::<f64>::zeros(n);
    let mut sent_cols: Vec<Array1<f64>> = Vec::new();
    let mut input_cols: Vec<Array1<f64>> = Vec::new();
    let mut received_cols: Vec<Array1<f64>> = Vec::new();
    let mut converged = false;
    let mut iterations_used = 0usize;
    let yv = y.values();

    match role {
        PartyRole::Initiator => {
            for r in 1..=cfg.max_iterations {
                iterations_used = r;
                // update against the latest partner prediction
                let eta = &own_yhat + &partner_yhat;
                let ws = refresh_working_set(cfg.family, &yv.view(), &eta.view())?;
                let residual = &ws.working_response - &partner_yhat;
                let upd =
                    block_update(block, &residual.view(), &ws.weights.view(), &beta.view())?;
                beta = upd.coefficients;
                let my_delta = upd.max_delta;
                own_yhat = match &mut noise {
                    Some(src) => src.perturb(&upd.prediction),
                    None => upd.prediction,
                };
                sent_cols.push(own_yhat.clone());
                channel.send(&ProtocolMessage::Prediction {
                    iteration: r as u32,
                    values: own_yhat.to_vec(),
                    max_delta: my_delta,
                })?;

                // partner's reply for the same iteration
                let (partner_pred, partner_delta) =
                    expect_prediction(channel, r as u32, n)?;
                // reconstruct the input the partner's projection consumed:
                // its working response at (our fresh prediction + its stale
                // one), minus our fresh prediction
                let partner_eta = &own_yhat + &partner_yhat;
                let pws = refresh_working_set(cfg.family, &yv.view(), &partner_eta.view())?;
                input_cols.push(&pws.working_response - &own_yhat);
                received_cols.push(partner_pred.clone());
                partner_yhat = partner_pred;

                let both_small = my_delta < cfg.tolerance && partner_delta < cfg.tolerance;
                if both_small && r >= agreed.min_iterations {
                    // responder announces first; confirm and close
                    match channel.receive()? {
                        ProtocolMessage::ConvergedFlag { iteration } if iteration == r as u32 => {}
                        ProtocolMessage::Abort { reason, .. } => {
                            return Err(ProtocolError::PeerAbort(reason))
                        }
                        other => return Err(unexpected(channel, "CONVERGED_FLAG", &other)),
                    }
                    channel.send(&ProtocolMessage::Done {
                        iteration: r as u32,
                        converged: true,
                    })?;
                    expect_done(channel)?;
                    converged = true;
                    break;
                }
                if r == cfg.max_iterations {
                    channel.send(&ProtocolMessage::Done {
                        iteration: r as u32,
                        converged: false,
                    })?;
                    expect_done(channel)?;
                    break;
                }
            }
        }
        PartyRole::Responder => {
            loop {
                let r = iterations_used as u32 + 1;
                let (partner_pred, partner_delta) = match channel.receive()? {
                    ProtocolMessage::Prediction { iteration, values, max_delta } => {
                        if iteration != r {
                            return Err(ProtocolError::UnexpectedMessage {
                                expected: "PREDICTION with the next iteration index",
                                got: "PREDICTION",
                                iteration,
                            });
                        }
                        if values.len() != n {
                            abort(channel, "prediction length mismatch");
                            return Err(ProtocolError::ConfigMismatch(format!(
                                "prediction carries {} values, agreed N is {n}",
                                values.len()
                            )));
                        }
                        (Array1::from_vec(values), max_delta)
                    }
                    ProtocolMessage::Done { converged: c, .. } => {
                        // peer stopped at its iteration cap
                        channel.send(&ProtocolMessage::Done {
                            iteration: iterations_used as u32,
                            converged: c,
                        })?;
                        converged = c;
                        break;
                    }
                    ProtocolMessage::Abort { reason, .. } => {
                        return Err(ProtocolError::PeerAbort(reason))
                    }
                    other => return Err(unexpected(channel, "PREDICTION", &other)),
                };
                iterations_used = r as usize;
                // input the partner consumed this iteration: its working
                // response at the pre-update state minus our last prediction
                let partner_eta = &partner_yhat + &own_yhat;
                let pws = refresh_working_set(cfg.family, &yv.view(), &partner_eta.view())?;
                input_cols.push(&pws.working_response - &own_yhat);
                received_cols.push(partner_pred.clone());
                partner_yhat = partner_pred;

                // our own update
                let eta = &own_yhat + &partner_yhat;
                let ws = refresh_working_set(cfg.family, &yv.view(), &eta.view())?;
                let residual = &ws.working_response - &partner_yhat;
                let upd =
                    block_update(block, &residual.view(), &ws.weights.view(), &beta.view())?;
                beta = upd.coefficients;
                let my_delta = upd.max_delta;
                own_yhat = match &mut noise {
                    Some(src) => src.perturb(&upd.prediction),
                    None => upd.prediction,
                };
                sent_cols.push(own_yhat.clone());
                channel.send(&ProtocolMessage::Prediction {
                    iteration: r,
                    values: own_yhat.to_vec(),
                    max_delta: my_delta,
                })?;

                let both_small = partner_delta < cfg.tolerance && my_delta < cfg.tolerance;
                if both_small && iterations_used >= agreed.min_iterations {
                    channel.send(&ProtocolMessage::ConvergedFlag { iteration: r })?;
                    match channel.receive()? {
                        ProtocolMessage::Done { converged: c, .. } => {
                            channel.send(&ProtocolMessage::Done {
                                iteration: r,
                                converged: c,
                            })?;
                            converged = c;
                            break;
                        }
                        ProtocolMessage::Abort { reason, .. } => {
                            return Err(ProtocolError::PeerAbort(reason))
                        }
                        other => return Err(unexpected(channel, "DONE", &other)),
                    }
                }
                if iterations_used == cfg.max_iterations {
                    channel.send(&ProtocolMessage::Done {
                        iteration: r,
                        converged: false,
                    })?;
                    expect_done(channel)?;
                    break;
                }
            }
        }
    }

    // assemble the trace
    let r_total = sent_cols.len().min(input_cols.len());
    let mut sent = Array2::zeros((n, r_total));
    let mut inputs = Array2::zeros((n, r_total));
    let mut received = Array2::zeros((n, r_total));
    for c in 0..r_total {
        sent.column_mut(c).assign(&sent_cols[c]);
        inputs.column_mut(c).assign(&input_cols[c]);
        received.column_mut(c).assign(&received_cols[c]);
    }
    let final_eta = &own_yhat + &partner_yhat;
    let final_ws = refresh_working_set(cfg.family, &yv.view(), &final_eta.view())?;
    let trace = IterationTrace {
        sent_predictions: sent,
        received_residual_inputs: inputs,
        received_predictions: received,
        weights_final: final_ws.weights,
    };

    let (se_summary, se_error) =
        match recover_standard_errors(block, &trace, y, &final_eta, cfg.family) {
            Ok(rec) => (
                Some(SeSummary {
                    standard_errors: rec.standard_errors,
                    sigma2: rec.sigma2,
                    estimated_partner_rank: rec.substitute.estimated_partner_rank,
                }),
                None,
            ),
            Err(e @ StderrError::DfExhausted { .. }) => (None, Some(e.to_string())),
            Err(e) => (None, Some(e.to_string())),
        };

    Ok((
        FitResult {
            local_coefficients: beta,
            local_standard_errors: se_summary,
            se_recovery_error: se_error,
            iterations_used,
            converged,
            final_partner_prediction: partner_yhat,
            final_own_prediction: own_yhat,
        },
        trace,
    ))
}

fn expect_prediction<C: FrameCarrier>(
    channel: &mut SecureChannel<C>,
    iteration: u32,
    n: usize,
) -> Result<(Array1<f64>, f64), ProtocolError> {
    match channel.receive()? {
        ProtocolMessage::Prediction { iteration: it, values, max_delta } if it == iteration => {
            if values.len() != n {
                abort(channel, "prediction length mismatch");
                return Err(ProtocolError::ConfigMismatch(format!(
                    "prediction carries {} values, agreed N is {n}",
                    values.len()
                )));
            }
            Ok((Array1::from_vec(values), max_delta))
        }
        ProtocolMessage::Abort { reason, .. } => Err(ProtocolError::PeerAbort(reason)),
        other => Err(unexpected(channel, "PREDICTION", &other)),
    }
}

fn expect_done<C: FrameCarrier>(channel: &mut SecureChannel<C>) -> Result<bool, ProtocolError> {
    match channel.receive()? {
        ProtocolMessage::Done { converged, .. } => Ok(converged),
        ProtocolMessage::Abort { reason, .. } => Err(ProtocolError::PeerAbort(reason)),
        other => Err(unexpected(channel, "DONE", &other)),
    }
}

/// Joint prediction from summed shares: `mean(X_local beta_local + partner)`.
pub fn predict_joint(
    local: &FitResult,
    block: &DesignBlock<f64>,
    new_partner_prediction: &Array1<f64>,
    family: Family,
) -> Result<Array1<f64>, ProtocolError> {
    if block.nrows() != new_partner_prediction.len() {
        return Err(ProtocolError::InvalidConfig(format!(
            "block has {} rows, partner share has {}",
            block.nrows(),
            new_partner_prediction.len()
        )));
    }
    if block.ncols() != local.local_coefficients.len() {
        return Err(ProtocolError::InvalidConfig(format!(
            "block has {} columns, fit has {} coefficients",
            block.ncols(),
            local.local_coefficients.len()
        )));
    }
    let eta = block.values().dot(&local.local_coefficients) + new_partner_prediction;
    Ok(eta.mapv(|e| family.mean(e)))
}
