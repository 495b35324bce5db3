//! End-to-end tests of the command-line binary, including two real
//! processes talking over localhost TCP.

use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_splitglm")
}

fn temp_path(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!("splitglm_cli_{}_{tag}", std::process::id()))
}

/// Small joint dataset: y depends on features held by both parties.
fn write_dataset(rows: usize, permute: bool) -> (PathBuf, PathBuf, PathBuf) {
    let mut joint = String::from("y,a1,a2,b1,b2\n");
    let mut lines = Vec::new();
    let mut state = 0x12345678u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) as f64) / (u32::MAX as f64) * 2.0 - 1.0
    };
    for _ in 0..rows {
        let a1 = next();
        let a2 = next();
        let b1 = 0.5 * a1 + 0.8 * next();
        let b2 = next();
        let y = 1.5 * a1 - 0.7 * a2 + 0.9 * b1 + 0.3 * b2 + 0.2 * next();
        lines.push(format!("{y},{a1},{a2},{b1},{b2}"));
    }
    for l in &lines {
        joint.push_str(l);
        joint.push('\n');
    }
    let joint_path = temp_path(&format!("joint_{rows}_{permute}.csv"));
    std::fs::write(&joint_path, &joint).unwrap();

    // party A holds a1, a2; party B holds b1, b2; both hold y
    let mut a_csv = String::from("y,a1,a2\n");
    let mut b_csv = String::from("y,b1,b2\n");
    let mut b_lines = Vec::new();
    for l in &lines {
        let parts: Vec<&str> = l.split(',').collect();
        a_csv.push_str(&format!("{},{},{}\n", parts[0], parts[1], parts[2]));
        b_lines.push(format!("{},{},{}", parts[0], parts[3], parts[4]));
    }
    if permute {
        b_lines.swap(0, 1);
    }
    for l in &b_lines {
        b_csv.push_str(l);
        b_csv.push('\n');
    }
    let a_path = temp_path(&format!("a_{rows}_{permute}.csv"));
    let b_path = temp_path(&format!("b_{rows}_{permute}.csv"));
    std::fs::write(&a_path, a_csv).unwrap();
    std::fs::write(&b_path, b_csv).unwrap();
    (joint_path, a_path, b_path)
}

const PSK_HEX: &str = "00112233445566778899aabbccddeeff00112233445566778899aabbccddeeff";

fn spawn_serve(data: &std::path::Path, out: &std::path::Path, psk_hex: &str) -> (Child, u16) {
    let mut child = Command::new(binary())
        .args([
            "serve",
            "--listen",
            "127.0.0.1:0",
            "--data",
            data.to_str().unwrap(),
            "--target",
            "y",
            "--family",
            "gaussian",
            "--output",
            out.to_str().unwrap(),
        ])
        .env("SPLITGLM_PSK", psk_hex)
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let stderr = child.stderr.take().unwrap();
    let mut reader = BufReader::new(stderr);
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let port: u16 = line
        .trim()
        .rsplit(':')
        .next()
        .and_then(|p| p.parse().ok())
        .unwrap_or_else(|| panic!("no port in {line:?}"));
    // keep draining stderr in the background so the child never blocks
    std::thread::spawn(move || {
        let mut rest = String::new();
        let _ = std::io::Read::read_to_string(&mut reader, &mut rest);
    });
    (child, port)
}

fn run_connect(data: &std::path::Path, out: &std::path::Path, port: u16, psk_hex: &str) -> std::process::Output {
    Command::new(binary())
        .args([
            "connect",
            "--peer",
            &format!("127.0.0.1:{port}"),
            "--data",
            data.to_str().unwrap(),
            "--target",
            "y",
            "--family",
            "gaussian",
            "--output",
            out.to_str().unwrap(),
            "--seed",
            "11",
        ])
        .env("SPLITGLM_PSK", psk_hex)
        .output()
        .unwrap()
}

fn read_coef_map(path: &PathBuf) -> Vec<(String, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("column,") && !l.is_empty())
        .map(|l| {
            let parts: Vec<&str> = l.split(',').collect();
            (parts[0].to_string(), parts[1].parse().unwrap())
        })
        .collect()
}

#[test]
fn two_processes_match_the_joined_oracle() {
    let (joint, a, b) = write_dataset(200, false);
    let out_a = temp_path("out_a.csv");
    let out_b = temp_path("out_b.csv");
    let (mut serve, port) = spawn_serve(&b, &out_b, PSK_HEX);
    let connect_out = run_connect(&a, &out_a, port, PSK_HEX);
    assert!(
        connect_out.status.success(),
        "connect failed: {}",
        String::from_utf8_lossy(&connect_out.stderr)
    );
    let serve_status = serve.wait().unwrap();
    assert!(serve_status.success());

    // oracle: simulate on the joined file with the same split
    let oracle_out = temp_path("oracle.csv");
    let sim = Command::new(binary())
        .args([
            "simulate",
            "--data",
            joint.to_str().unwrap(),
            "--target",
            "y",
            "--family",
            "gaussian",
            "--party-a",
            "a1,a2",
            "--party-b",
            "b1,b2",
            "--seed",
            "3",
            "--output",
            oracle_out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let oracle_text = std::fs::read_to_string(&oracle_out).unwrap();
    let mut oracle: Vec<(String, f64)> = Vec::new();
    for l in oracle_text.lines().skip(1) {
        let parts: Vec<&str> = l.split(',').collect();
        oracle.push((parts[1].to_string(), parts[4].parse().unwrap()));
    }
    let got_a = read_coef_map(&out_a);
    let got_b = read_coef_map(&out_b);
    for (name, value) in got_a.iter().chain(got_b.iter()) {
        let want = oracle
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("column {name} missing from oracle"))
            .1;
        assert!(
            (value - want).abs() < 1e-6,
            "{name}: {value} vs oracle {want}"
        );
    }
    for p in [joint, a, b, out_a, out_b, oracle_out] {
        std::fs::remove_file(p).ok();
    }
}

#[test]
fn mismatched_target_order_maps_to_digest_exit_code() {
    let (_joint, a, b) = write_dataset(80, true);
    let out_a = temp_path("perm_a.csv");
    let out_b = temp_path("perm_b.csv");
    let (mut serve, port) = spawn_serve(&b, &out_b, PSK_HEX);
    let connect_out = run_connect(&a, &out_a, port, PSK_HEX);
    let serve_status = serve.wait().unwrap();
    // the responder detects the digest mismatch (exit 4); the initiator is
    // told the peer aborted (exit 10)
    assert_eq!(serve_status.code(), Some(4));
    assert_eq!(connect_out.status.code(), Some(10));
    for p in [a, b] {
        std::fs::remove_file(p).ok();
    }
}

#[test]
fn wrong_psk_maps_to_auth_exit_code() {
    let (_joint, a, b) = write_dataset(80, false);
    let out_a = temp_path("psk_a.csv");
    let out_b = temp_path("psk_b.csv");
    let (mut serve, port) = spawn_serve(&b, &out_b, PSK_HEX);
    let other = "ff112233445566778899aabbccddeeff00112233445566778899aabbccddeeff";
    let connect_out = run_connect(&a, &out_a, port, other);
    let serve_status = serve.wait().unwrap();
    // responder cannot authenticate the first frame
    assert_eq!(serve_status.code(), Some(6));
    // initiator sees the channel die: transport failure
    assert_eq!(connect_out.status.code(), Some(8));
    for p in [a, b] {
        std::fs::remove_file(p).ok();
    }
}

#[test]
fn simulate_is_deterministic_under_a_seed() {
    let (joint, _a, _b) = write_dataset(120, false);
    let run = |tag: &str| {
        let out = temp_path(&format!("det_{tag}.csv"));
        let st = Command::new(binary())
            .args([
                "simulate",
                "--data",
                joint.to_str().unwrap(),
                "--target",
                "y",
                "--family",
                "gaussian",
                "--split-even",
                "--seed",
                "99",
                "--output",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        let text = std::fs::read_to_string(&out).unwrap();
        std::fs::remove_file(out).ok();
        text
    };
    let first = run("one");
    let second = run("two");
    assert_eq!(first, second, "seeded simulate must be byte-identical");
    std::fs::remove_file(joint).ok();
}

#[test]
fn attack_study_runs_and_validates_rank_bound() {
    let out = temp_path("attack.csv");
    let st = Command::new(binary())
        .args([
            "attack",
            "--p",
            "8",
            "--r-known",
            "1,8",
            "--replications",
            "40",
            "--n",
            "60",
            "--sigma2",
            "1.0",
            "--seed",
            "5",
            "--output",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(st.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("p,r_known,replication,mse,expected_mse,revealed_fraction"));
    assert_eq!(text.lines().count(), 1 + 2 * 40);
    std::fs::remove_file(out).ok();

    // r-known beyond p is a usage error
    let bad = Command::new(binary())
        .args(["attack", "--p", "4", "--r-known", "9", "--replications", "2"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn benchmark_writes_long_format_rows() {
    let out = temp_path("bench.csv");
    let st = Command::new(binary())
        .args([
            "benchmark",
            "--families",
            "gaussian",
            "--p-values",
            "6",
            "--covariances",
            "0.1",
            "--replications",
            "2",
            "--n",
            "150",
            "--seed",
            "2",
            "--output",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 2);
    assert!(text.lines().nth(1).unwrap().starts_with("gaussian,150,6,0.1,0,"));
    std::fs::remove_file(out).ok();
}

#[test]
fn simulate_with_trace_export_feeds_the_attack_reader() {
    let (joint, _a, _b) = write_dataset(100, false);
    let prefix = temp_path("traced");
    let out = temp_path("traced_out.csv");
    let st = Command::new(binary())
        .args([
            "simulate",
            "--data",
            joint.to_str().unwrap(),
            "--target",
            "y",
            "--family",
            "gaussian",
            "--split-even",
            "--seed",
            "7",
            "--output",
            out.to_str().unwrap(),
            "--trace-export",
            prefix.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let responder_trace = temp_path("traced.responder.csv");
    assert!(responder_trace.exists());
    // the responder's received predictions reconstruct with the initiator's
    // disclosed coefficients; here we only check the reader round-trips
    let received =
        splitglm_cli::trace_io::read_received_predictions(&responder_trace).unwrap();
    assert_eq!(received.nrows(), 100);
    assert!(received.ncols() >= 2);
    for p in [
        joint,
        out,
        responder_trace,
        temp_path("traced.initiator.csv"),
    ] {
        std::fs::remove_file(p).ok();
    }
}
