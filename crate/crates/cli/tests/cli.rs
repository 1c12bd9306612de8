//! End-to-end tests of the `wf` binary: determinism, exit-code contract,
//! format round-trips, and agreement between pipeline output and direct
//! library calls.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wf"))
}

fn tmpdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("wf-cli-test-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn simulate(dir: &Path, seed: u64, n: u32, channel: &[&str]) -> PathBuf {
    let data = dir.join(format!("data-{seed}.csv"));
    let mut cmd = wf();
    cmd.args([
        "simulate",
        "--delta",
        "4",
        "--delta-prime",
        "6",
        "--n",
        &n.to_string(),
        "--dt",
        "0.5",
        "--seed",
        &seed.to_string(),
        "--out",
        data.to_str().unwrap(),
    ])
    .args(channel);
    run_ok(&mut cmd);
    data
}

#[test]
fn simulate_is_deterministic_and_writes_sidecar() {
    let dir = tmpdir("determinism");
    let a = simulate(&dir, 7, 50, &["--channel", "bernoulli"]);
    let first = fs::read_to_string(&a).unwrap();
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("data-7.csv.json")).unwrap()).unwrap();
    assert_eq!(sidecar["delta"], 4.0);
    assert_eq!(sidecar["channel"], "bernoulli");
    assert_eq!(sidecar["seed"], 7);

    let b = simulate(&dir, 7, 50, &["--channel", "bernoulli"]);
    assert_eq!(first, fs::read_to_string(&b).unwrap(), "same seed, same bytes");

    assert_eq!(first.lines().count(), 51); // header + 50 rows
    assert!(first.starts_with("t,x,y\n"));
}

#[test]
fn missing_required_flag_exits_2() {
    let out = wf()
        .args(["simulate", "--delta", "4", "--out", "/tmp/never.csv"])
        .output()
        .unwrap();
    // --delta-prime missing: resolution failure is a data error (3); a clap
    // parse failure (unknown flag) is usage (2)
    assert_eq!(out.status.code(), Some(3));
    let out = wf().args(["simulate", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_dataset_exits_3() {
    let dir = tmpdir("bad-data");
    let data = dir.join("bad.csv");
    fs::write(&data, "t,y\n0.0,1\n0.0,0\n").unwrap(); // non-increasing times
    let out = wf()
        .args([
            "filter",
            "--data",
            data.to_str().unwrap(),
            "--out",
            dir.join("o.csv").to_str().unwrap(),
            "--delta",
            "4",
            "--delta-prime",
            "6",
            "--channel",
            "bernoulli",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn numerical_failure_exits_4() {
    let dir = tmpdir("numerical");
    let data = simulate(&dir, 3, 40, &["--channel", "bernoulli"]);
    // depth cap of 2 cannot hold 40 Bernoulli updates
    let out = wf()
        .args([
            "filter",
            "--data",
            data.to_str().unwrap(),
            "--out",
            dir.join("o.csv").to_str().unwrap(),
            "--max-depth",
            "2",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn filter_uses_sidecar_and_matches_loglik() {
    let dir = tmpdir("sidecar");
    let data = simulate(&dir, 11, 40, &["--channel", "binomial", "--channel-n", "5"]);
    let steps = dir.join("steps.csv");
    // no model flags at all: everything resolves from the sidecar
    let out = run_ok(wf().args([
        "filter",
        "--data",
        data.to_str().unwrap(),
        "--out",
        steps.to_str().unwrap(),
    ]));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let ll_filter: f64 = stdout
        .trim()
        .strip_prefix("log_likelihood: ")
        .unwrap()
        .parse()
        .unwrap();

    let out = run_ok(wf().args(["loglik", "--data", data.to_str().unwrap()]));
    let ll: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!((ll - ll_filter).abs() < 1e-12);

    // the reported loglik equals the sum of the per-step log predictives
    let body = fs::read_to_string(&steps).unwrap();
    let mut sum = 0.0f64;
    for line in body.lines().skip(1) {
        let p: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        sum += p.ln();
    }
    assert!((sum - ll).abs() < 1e-12, "{sum} vs {ll}");
}

#[test]
fn pruning_stability_on_the_loglik() {
    let dir = tmpdir("pruning");
    let data = simulate(&dir, 21, 100, &["--channel", "bernoulli"]);
    let ll = |prune: &str| -> f64 {
        let out = run_ok(wf().args([
            "loglik",
            "--data",
            data.to_str().unwrap(),
            "--prune",
            prune,
            "--max-depth",
            "128", // unpruned Bernoulli depth grows by one per observation
        ]));
        String::from_utf8(out.stdout).unwrap().trim().parse().unwrap()
    };
    assert!((ll("0") - ll("1e-12")).abs() <= 1e-8);
}

#[test]
fn trace_json_round_trips_and_smoothing_agrees_at_the_end() {
    let dir = tmpdir("trace");
    let data = simulate(&dir, 5, 12, &["--channel", "bernoulli"]);
    let steps = dir.join("steps.csv");
    let trace = dir.join("trace.json");
    run_ok(wf().args([
        "filter",
        "--data",
        data.to_str().unwrap(),
        "--out",
        steps.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]));
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    let steps_json = parsed["steps"].as_array().unwrap();
    assert_eq!(steps_json.len(), 12);
    // mixture JSON shape: delta / delta_prime / components[{i,j,w}]
    let mix = &steps_json[0]["updated"];
    assert_eq!(mix["delta"], 4.0);
    assert!(mix["components"][0]["w"].is_f64());
    // round-trip through the library type is exact
    let mix_typed: wf_filtering::Mixture = serde_json::from_value(mix.clone()).unwrap();
    assert_eq!(serde_json::to_value(&mix_typed).unwrap(), *mix);

    let smooth = dir.join("smooth.csv");
    run_ok(wf().args([
        "smooth",
        "--data",
        data.to_str().unwrap(),
        "--out",
        smooth.to_str().unwrap(),
    ]));
    let body = fs::read_to_string(&smooth).unwrap();
    let last = body.lines().last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    let filter_mean: f64 = fields[3].parse().unwrap();
    let smooth_mean: f64 = fields[5].parse().unwrap();
    assert!(
        (filter_mean - smooth_mean).abs() < 1e-10,
        "final smoothed marginal must equal the filter"
    );
}

#[test]
fn two_observation_hand_example_through_the_pipeline() {
    // delta = delta' = 2, gap ln(2)/4 so e^{-a_1 gap} = 1/2; the second
    // predictive probability is 5/12
    let dir = tmpdir("hand");
    let data = dir.join("hand.csv");
    let gap = 2.0f64.ln() / 4.0;
    fs::write(&data, format!("t,y\n0.0,1\n{gap},0\n")).unwrap();
    let steps = dir.join("steps.csv");
    run_ok(wf().args([
        "filter",
        "--data",
        data.to_str().unwrap(),
        "--out",
        steps.to_str().unwrap(),
        "--delta",
        "2",
        "--delta-prime",
        "2",
        "--channel",
        "bernoulli",
        "--prune",
        "0",
    ]));
    let body = fs::read_to_string(&steps).unwrap();
    let rows: Vec<&str> = body.lines().skip(1).collect();
    let p1: f64 = rows[0].split(',').nth(3).unwrap().parse().unwrap();
    let p2: f64 = rows[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!((p1 - 0.5).abs() < 1e-12);
    assert!((p2 - 5.0 / 12.0).abs() < 1e-12);
}

#[test]
fn grid_oracle_columns_track_the_exact_filter() {
    let dir = tmpdir("oracle");
    let data = simulate(&dir, 13, 30, &["--channel", "bernoulli"]);
    let steps = dir.join("steps.csv");
    run_ok(wf().args([
        "filter",
        "--data",
        data.to_str().unwrap(),
        "--out",
        steps.to_str().unwrap(),
        "--oracle",
        "grid",
    ]));
    let body = fs::read_to_string(&steps).unwrap();
    assert!(body.lines().next().unwrap().ends_with("oracle_mean,oracle_variance"));
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let mean: f64 = f[5].parse().unwrap();
        let oracle_mean: f64 = f[7].parse().unwrap();
        assert!((mean - oracle_mean).abs() < 1e-4, "{line}");
    }
}

#[test]
fn config_file_mirrors_flags() {
    let dir = tmpdir("config");
    let config = dir.join("config.json");
    fs::write(
        &config,
        r#"{"delta": 4.0, "delta_prime": 6.0, "channel": "bernoulli", "n": 20, "dt": 0.5, "seed": 9}"#,
    )
    .unwrap();
    let via_config = dir.join("via-config.csv");
    run_ok(wf().args([
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        via_config.to_str().unwrap(),
    ]));
    let via_flags = simulate(&dir, 9, 20, &["--channel", "bernoulli"]);
    assert_eq!(
        fs::read_to_string(&via_config).unwrap(),
        fs::read_to_string(&via_flags).unwrap()
    );
}

#[test]
fn estimate_reports_convergence() {
    let dir = tmpdir("estimate");
    let data = simulate(&dir, 17, 60, &["--channel", "binomial", "--channel-n", "8"]);
    let out = run_ok(wf().args([
        "estimate",
        "--data",
        data.to_str().unwrap(),
        "--start",
        "4,4",
        "--tol",
        "1e-4",
        "--prune",
        "1e-9",
    ]));
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert!(report["delta"].as_f64().unwrap() >= 2.0);
    assert!(report["delta_prime"].as_f64().unwrap() >= 2.0);
    assert!(report["log_likelihood"].as_f64().unwrap().is_finite());
    assert!(report["evaluations"].as_u64().unwrap() > 0);
}
