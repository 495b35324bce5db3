//! Subcommand implementations.

use crate::error::{CliError, EXIT_NOT_CONVERGED};
use crate::ingest::{ingest_csv, Ingested};
use crate::report::{text_table, write_coefficients_csv};
use crate::runner::{
    attack_replication, benchmark_replication, run_loopback, session_configs,
    single_disclosure_replication, AttackRow, BenchRow,
};
use crate::trace_io::{read_coefficients, read_received_predictions, write_trace};
use clap::Args;
use ndarray::Array1;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use splitglm_core::attack::{reconstruct, AdversaryView};
use splitglm_core::design::DesignBlock;
use splitglm_core::family::Family;
use splitglm_core::stderr::IterationTrace;
use splitglm_protocol::{
    accept_tcp, connect_tcp, run_party, FitResult, PartyRole, SessionConfig,
};
use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;

/// Default row cap for standard-error recovery; beyond it recovery is
/// skipped unless raised, since the trace pipeline holds 3 N x R matrices.
pub const DEFAULT_MAX_SE_ROWS: usize = 20_000;

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the target column.
    #[arg(long)]
    pub target: String,
    /// Comma-separated feature columns (default: every non-target column).
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// gaussian | binomial | poisson.
    #[arg(long, default_value = "gaussian")]
    pub family: String,
    /// Standardize continuous features to unit sample standard deviation.
    #[arg(long, default_value_t = false)]
    pub standardize: bool,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    /// Convergence threshold on the max absolute coefficient change.
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iterations: usize,
    /// Convergence floor; defaults to this party's column count + 5 so the
    /// trace supports standard-error recovery.
    #[arg(long)]
    pub min_iterations: Option<usize>,
    /// Zero-mean gaussian noise added to outgoing predictions (0 = off).
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    /// Seed for deterministic session ids and simulation data.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip standard-error recovery above this many rows.
    #[arg(long, default_value_t = DEFAULT_MAX_SE_ROWS)]
    pub max_se_rows: usize,
}

#[derive(Args, Debug, Clone)]
pub struct PskArgs {
    /// Environment variable holding the hex-encoded 32-byte pre-shared key.
    #[arg(long, default_value = "SPLITGLM_PSK")]
    pub psk_env: String,
    /// File holding the hex-encoded 32-byte pre-shared key (overrides the
    /// environment variable).
    #[arg(long)]
    pub psk_file: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Original feature columns assigned to party A (the initiator).
    #[arg(long, value_delimiter = ',')]
    pub party_a: Option<Vec<String>>,
    /// Original feature columns assigned to party B.
    #[arg(long, value_delimiter = ',')]
    pub party_b: Option<Vec<String>>,
    /// Split the expanded feature columns into two contiguous halves.
    #[arg(long, default_value_t = false)]
    pub split_even: bool,
    /// Report destination (CSV). A readable table always goes to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write each party's iteration trace next to this prefix.
    #[arg(long)]
    pub trace_export: Option<PathBuf>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let family = parse_family(&args.data.family)?;
    let ingested = ingest_csv(
        &args.data.data,
        &args.data.target,
        args.data.features.as_deref(),
        family,
        args.data.standardize,
    )?;
    let (block_a, block_b) = split_blocks(&ingested, args)?;
    let block_a = maybe_intercept(block_a, family, true)?;
    let y = &ingested.target;

    let seed = args.fit.seed.unwrap_or_else(rand::random);
    let (mut cfg_i, mut cfg_r) =
        session_configs(family, block_a.ncols(), block_b.ncols(), args.fit.tolerance, seed);
    apply_fit_args(&mut cfg_i, &args.fit, block_a.ncols());
    apply_fit_args(&mut cfg_r, &args.fit, block_b.ncols());

    let run = run_loopback(&block_a, &block_b, y, &cfg_i, &cfg_r)?;
    let oracle = crate::runner::oracle_fit(&[&block_a, &block_b], y, family, args.fit.tolerance)?;

    // report
    let names: Vec<String> = block_a
        .column_names()
        .iter()
        .chain(block_b.column_names())
        .cloned()
        .collect();
    let parties: Vec<&str> = std::iter::repeat_n("A", block_a.ncols())
        .chain(std::iter::repeat_n("B", block_b.ncols()))
        .collect();
    let got = run.concatenated_coefficients();
    let ses = run.concatenated_standard_errors();
    let mut rows = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let se_txt = ses
            .as_ref()
            .map(|s| format!("{:.6e}", s[j]))
            .unwrap_or_else(|| "n/a".into());
        let se_bias = ses
            .as_ref()
            .map(|s| format!("{:+.3e}", s[j] / oracle.standard_errors[j] - 1.0))
            .unwrap_or_else(|| "n/a".into());
        rows.push(vec![
            parties[j].to_string(),
            name.clone(),
            format!("{:.6e}", got[j]),
            se_txt,
            format!("{:.6e}", oracle.coefficients[j]),
            format!("{:+.3e}", got[j] - oracle.coefficients[j]),
            se_bias,
        ]);
    }
    println!(
        "{}",
        text_table(
            &["party", "column", "coefficient", "std_error", "oracle_coef", "coef_diff", "se_rel_bias"],
            &rows
        )
    );
    println!(
        "iterations: {}   converged: {}   wall: {:.3}s",
        run.initiator.0.iterations_used,
        run.initiator.0.converged,
        run.wall.as_secs_f64()
    );
    if let Some(err) = &run.initiator.0.se_recovery_error {
        println!("standard-error recovery (party A): {err}");
    }
    if let Some(err) = &run.responder.0.se_recovery_error {
        println!("standard-error recovery (party B): {err}");
    }

    if let Some(path) = &args.output {
        let mut f = std::fs::File::create(path)?;
        writeln!(
            f,
            "party,column,coefficient,standard_error,oracle_coefficient,oracle_standard_error"
        )?;
        for (j, name) in names.iter().enumerate() {
            let se_txt = ses.as_ref().map(|s| s[j].to_string()).unwrap_or_default();
            writeln!(
                f,
                "{},{},{},{},{},{}",
                parties[j], name, got[j], se_txt, oracle.coefficients[j],
                oracle.standard_errors[j]
            )?;
        }
    }
    if let Some(prefix) = &args.trace_export {
        write_trace(&suffixed(prefix, "initiator"), &run.initiator.1)?;
        write_trace(&suffixed(prefix, "responder"), &run.responder.1)?;
    }
    Ok(if run.initiator.0.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn suffixed(prefix: &std::path::Path, tag: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(format!(".{tag}.csv"));
    prefix.with_file_name(name)
}

fn split_blocks(
    ingested: &Ingested,
    args: &SimulateArgs,
) -> Result<(DesignBlock<f64>, DesignBlock<f64>), CliError> {
    let names = ingested.block.column_names();
    let p = names.len();
    let (idx_a, idx_b): (Vec<usize>, Vec<usize>) = match (&args.party_a, &args.party_b) {
        (Some(a_cols), Some(b_cols)) => {
            let original = |expanded: &str| -> String {
                expanded.split('=').next().unwrap_or(expanded).to_string()
            };
            let mut idx_a = Vec::new();
            let mut idx_b = Vec::new();
            for (j, name) in names.iter().enumerate() {
                let orig = original(name);
                let in_a = a_cols.contains(&orig);
                let in_b = b_cols.contains(&orig);
                match (in_a, in_b) {
                    (true, false) => idx_a.push(j),
                    (false, true) => idx_b.push(j),
                    (true, true) => {
                        return Err(CliError::Usage(format!(
                            "column {orig:?} assigned to both parties"
                        )))
                    }
                    (false, false) => {
                        return Err(CliError::Usage(format!(
                            "column {orig:?} assigned to neither party"
                        )))
                    }
                }
            }
            (idx_a, idx_b)
        }
        (None, None) if args.split_even => {
            let half = p.div_ceil(2);
            ((0..half).collect(), (half..p).collect())
        }
        _ => {
            return Err(CliError::Usage(
                "provide both --party-a and --party-b, or --split-even".into(),
            ))
        }
    };
    if idx_a.is_empty() || idx_b.is_empty() {
        return Err(CliError::Usage("each party needs at least one feature".into()));
    }
    let a = ingested.block.select_columns(&idx_a).map_err(|e| CliError::Usage(e.to_string()))?;
    let b = ingested.block.select_columns(&idx_b).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((a, b))
}

fn maybe_intercept(
    block: DesignBlock<f64>,
    family: Family,
    is_initiator: bool,
) -> Result<DesignBlock<f64>, CliError> {
    if family != Family::Gaussian && is_initiator {
        block.with_intercept().map_err(|e| CliError::Usage(e.to_string()))
    } else {
        Ok(block)
    }
}

fn apply_fit_args(cfg: &mut SessionConfig, fit: &FitArgs, p_local: usize) {
    cfg.tolerance = fit.tolerance;
    cfg.max_iterations = fit.max_iterations;
    cfg.min_iterations = fit.min_iterations.unwrap_or(p_local + 5);
    cfg.noise_sd = fit.noise_sd;
    cfg.noise_seed = fit.seed;
}

pub fn parse_family(name: &str) -> Result<Family, CliError> {
    Family::parse(name)
        .ok_or_else(|| CliError::Usage(format!("unknown family {name:?}")))
}

#[derive(Args, Debug, Clone)]
pub struct BenchmarkArgs {
    /// Comma-separated families to benchmark.
    #[arg(long, value_delimiter = ',', default_value = "gaussian,binomial")]
    pub families: Vec<String>,
    /// Comma-separated feature counts.
    #[arg(long = "p-values", value_delimiter = ',', default_value = "10,50,100")]
    pub p_values: Vec<usize>,
    /// Comma-separated pairwise feature covariances.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5")]
    pub covariances: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub replications: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Long-format results CSV, one row per replication x condition.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<i32, CliError> {
    let families: Result<Vec<Family>, CliError> =
        args.families.iter().map(|f| parse_family(f)).collect();
    let families = families?;
    let mut rows: Vec<BenchRow> = Vec::new();
    for &family in &families {
        for &p in &args.p_values {
            for &cov in &args.covariances {
                for rep in 0..args.replications {
                    let row = benchmark_replication(
                        family,
                        args.n,
                        p,
                        cov,
                        rep,
                        args.seed,
                        args.tolerance,
                    )?;
                    rows.push(row);
                }
            }
        }
    }
    if let Some(path) = &args.output {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{}", BenchRow::csv_header())?;
        for row in &rows {
            writeln!(f, "{}", row.to_csv())?;
        }
    }
    // condition means
    let mut table = Vec::new();
    for &family in &families {
        for &p in &args.p_values {
            for &cov in &args.covariances {
                let cond: Vec<&BenchRow> = rows
                    .iter()
                    .filter(|r| r.family == family && r.p == p && r.covariance == cov)
                    .collect();
                if cond.is_empty() {
                    continue;
                }
                let m = cond.len() as f64;
                let mean_iter = cond.iter().map(|r| r.iterations as f64).sum::<f64>() / m;
                let mean_bias = cond.iter().map(|r| r.mean_rel_coef_bias).sum::<f64>() / m;
                let worst_abs = cond
                    .iter()
                    .map(|r| r.max_abs_coef_diff)
                    .fold(0.0f64, f64::max);
                let with_se: Vec<f64> =
                    cond.iter().filter_map(|r| r.max_rel_se_bias).collect();
                let worst_se = with_se.iter().fold(0.0f64, |a, &b| a.max(b));
                table.push(vec![
                    family.name().to_string(),
                    p.to_string(),
                    format!("{cov}"),
                    format!("{mean_iter:.1}"),
                    format!("{mean_bias:+.2e}"),
                    format!("{worst_abs:.2e}"),
                    format!("{worst_se:.2e}"),
                ]);
            }
        }
    }
    println!(
        "{}",
        text_table(
            &["family", "p", "cov", "mean_iters", "mean_rel_bias", "worst_abs_diff", "worst_se_bias"],
            &table
        )
    );
    Ok(0)
}

#[derive(Args, Debug, Clone)]
pub struct AttackArgs {
    /// Features held by the victim block in the synthetic study.
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    /// Comma-separated disclosed-rank values.
    #[arg(long = "r-known", value_delimiter = ',', default_value = "1,5,10,20")]
    pub r_known: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub replications: usize,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Per-feature variance of the synthetic victim block.
    #[arg(long, default_value_t = 2.0)]
    pub sigma2: f64,
    /// Use correlated features (the expected-MSE law then becomes a bound).
    #[arg(long, default_value_t = false)]
    pub correlated: bool,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Results CSV, one row per replication.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Reconstruct from an exported trace instead of running the study.
    #[arg(long)]
    pub trace_file: Option<PathBuf>,
    /// Coefficient file (as written by serve/connect/simulate) for the
    /// trace-based reconstruction.
    #[arg(long)]
    pub coefficients_file: Option<PathBuf>,
}

pub fn cmd_attack(args: &AttackArgs) -> Result<i32, CliError> {
    if let Some(trace_path) = &args.trace_file {
        let coef_path = args.coefficients_file.as_ref().ok_or_else(|| {
            CliError::Usage("--trace-file needs --coefficients-file".into())
        })?;
        let received = read_received_predictions(trace_path)?;
        let (_names, coefs) = read_coefficients(coef_path)?;
        let view = AdversaryView::with_final_coefficients(received, coefs);
        let x_hat = reconstruct(&view)?;
        println!(
            "reconstructed a {} x {} block from the final disclosed coefficients",
            x_hat.nrows(),
            x_hat.ncols()
        );
        if let Some(path) = &args.output {
            let mut f = std::fs::File::create(path)?;
            for i in 0..x_hat.nrows() {
                let row: Vec<String> =
                    (0..x_hat.ncols()).map(|j| x_hat[[i, j]].to_string()).collect();
                writeln!(f, "{}", row.join(","))?;
            }
        }
        return Ok(0);
    }

    let mut rows: Vec<AttackRow> = Vec::new();
    for &r in &args.r_known {
        if r > args.p {
            return Err(CliError::Usage(format!(
                "r-known {r} exceeds the feature count {}",
                args.p
            )));
        }
        for rep in 0..args.replications {
            rows.push(attack_replication(
                args.p,
                r,
                args.n,
                args.sigma2,
                args.correlated,
                rep,
                args.seed,
            ));
        }
    }
    if let Some(path) = &args.output {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{}", AttackRow::csv_header())?;
        for row in &rows {
            writeln!(f, "{}", row.to_csv())?;
        }
    }
    let mut table = Vec::new();
    for &r in &args.r_known {
        let cond: Vec<&AttackRow> = rows.iter().filter(|x| x.r_known == r).collect();
        let m = cond.len() as f64;
        let mean_mse = cond.iter().map(|x| x.mse).sum::<f64>() / m;
        let mean_rev = cond.iter().map(|x| x.revealed_fraction).sum::<f64>() / m;
        let expect = cond.first().map(|x| x.expected_mse).unwrap_or(0.0);
        table.push(vec![
            r.to_string(),
            format!("{mean_mse:.4}"),
            format!("{expect:.4}"),
            format!("{mean_rev:.4}"),
        ]);
    }
    println!(
        "{}",
        text_table(&["r_known", "mean_mse", "expected_mse", "mean_revealed"], &table)
    );
    Ok(0)
}

/// Monte-Carlo of the single-coefficient disclosure (what the final shared
/// coefficient vector reveals), exposed for studies and the acceptance
/// suite.
pub fn single_disclosure_study(
    p_a: usize,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<f64, CliError> {
    let mut sum = 0.0;
    for rep in 0..replications {
        sum += single_disclosure_replication(p_a, n, rep, seed)?;
    }
    Ok(sum / replications as f64)
}

#[derive(Args, Debug, Clone)]
pub struct ServeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub psk: PskArgs,
    /// Address to listen on, e.g. 0.0.0.0:9876.
    #[arg(long)]
    pub listen: String,
    /// Coefficient output CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub trace_export: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ConnectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub psk: PskArgs,
    /// Peer address to connect to, e.g. 10.0.0.5:9876.
    #[arg(long)]
    pub peer: String,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub trace_export: Option<PathBuf>,
}

pub fn load_psk(args: &PskArgs) -> Result<[u8; 32], CliError> {
    let hex_text = match &args.psk_file {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read psk file: {e}")))?,
        None => std::env::var(&args.psk_env).map_err(|_| {
            CliError::Usage(format!(
                "set {} to the hex-encoded 32-byte pre-shared key or pass --psk-file",
                args.psk_env
            ))
        })?,
    };
    let bytes = hex::decode(hex_text.trim())
        .map_err(|e| CliError::Usage(format!("psk is not valid hex: {e}")))?;
    let arr: [u8; 32] = bytes
        .try_into()
        .map_err(|_| CliError::Usage("psk must be exactly 32 bytes of hex".into()))?;
    Ok(arr)
}

pub fn cmd_serve(args: &ServeArgs) -> Result<i32, CliError> {
    let family = parse_family(&args.data.family)?;
    let ingested = ingest_csv(
        &args.data.data,
        &args.data.target,
        args.data.features.as_deref(),
        family,
        args.data.standardize,
    )?;
    // the responder never owns the intercept
    let block = ingested.block.clone();
    let psk = load_psk(&args.psk)?;
    let listener = TcpListener::bind(&args.listen)
        .map_err(|e| CliError::ConnectFailure(format!("cannot bind {}: {e}", args.listen)))?;
    let bound = listener
        .local_addr()
        .map_err(|e| CliError::ConnectFailure(e.to_string()))?;
    eprintln!("listening on {bound}");
    let (mut channel, session_id) =
        accept_tcp(&listener, &psk).map_err(CliError::from)?;
    let mut cfg = SessionConfig::new(family, block.ncols(), psk, session_id);
    apply_fit_args(&mut cfg, &args.fit, block.ncols());
    let (fit, trace) = run_party(&block, &ingested.target, &cfg, PartyRole::Responder, &mut channel)?;
    finish_party(args.output.as_deref(), args.trace_export.as_deref(), &block, &fit, &trace)
}

pub fn cmd_connect(args: &ConnectArgs) -> Result<i32, CliError> {
    let family = parse_family(&args.data.family)?;
    let ingested = ingest_csv(
        &args.data.data,
        &args.data.target,
        args.data.features.as_deref(),
        family,
        args.data.standardize,
    )?;
    let block = maybe_intercept(ingested.block.clone(), family, true)?;
    let psk = load_psk(&args.psk)?;
    let session_id = match args.fit.seed {
        Some(seed) => {
            let mut rng = StdRng::seed_from_u64(seed);
            let mut sid = [0u8; 16];
            rng.fill(&mut sid);
            sid
        }
        None => {
            let mut sid = [0u8; 16];
            rand::rng().fill(&mut sid);
            sid
        }
    };
    let mut channel = connect_tcp(&args.peer, &psk, session_id).map_err(CliError::from)?;
    let mut cfg = SessionConfig::new(family, block.ncols(), psk, session_id);
    apply_fit_args(&mut cfg, &args.fit, block.ncols());
    let (fit, trace) =
        run_party(&block, &ingested.target, &cfg, PartyRole::Initiator, &mut channel)?;
    finish_party(args.output.as_deref(), args.trace_export.as_deref(), &block, &fit, &trace)
}

fn finish_party(
    output: Option<&std::path::Path>,
    trace_export: Option<&std::path::Path>,
    block: &DesignBlock<f64>,
    fit: &FitResult,
    trace: &IterationTrace,
) -> Result<i32, CliError> {
    let se: Option<Array1<f64>> = fit
        .local_standard_errors
        .as_ref()
        .map(|s| s.standard_errors.clone());
    let mut rows = Vec::new();
    for (j, name) in block.column_names().iter().enumerate() {
        rows.push(vec![
            name.clone(),
            format!("{:.6e}", fit.local_coefficients[j]),
            se.as_ref()
                .map(|s| format!("{:.6e}", s[j]))
                .unwrap_or_else(|| "n/a".into()),
        ]);
    }
    println!("{}", text_table(&["column", "coefficient", "std_error"], &rows));
    println!(
        "iterations: {}   converged: {}",
        fit.iterations_used, fit.converged
    );
    if let Some(err) = &fit.se_recovery_error {
        println!("standard-error recovery: {err}");
    }
    if let Some(path) = output {
        let mut summary = vec![
            ("iterations".to_string(), fit.iterations_used.to_string()),
            ("converged".to_string(), fit.converged.to_string()),
        ];
        if let Some(s) = &fit.local_standard_errors {
            summary.push((
                "estimated_partner_rank".to_string(),
                s.estimated_partner_rank.to_string(),
            ));
            if let Some(s2) = s.sigma2 {
                summary.push(("sigma2".to_string(), s2.to_string()));
            }
        }
        write_coefficients_csv(
            path,
            &summary,
            block.column_names(),
            &fit.local_coefficients,
            se.as_ref(),
        )?;
    }
    if let Some(path) = trace_export {
        write_trace(path, trace)?;
    }
    Ok(if fit.converged { 0 } else { EXIT_NOT_CONVERGED })
}
