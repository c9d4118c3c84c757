use std::path::{Path, PathBuf};
use std::process::Command;

use distmeta::diagnostics::reference_states;
use distmeta::trace::RunOptions;
use distmeta_cli::experiment::{load_config, Experiment};
use distmeta_cli::Overrides;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_distmeta"));
    cmd.env_remove(distmeta_cli::OUT_ENV);
    cmd
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Baseline config with `[run]` and other keys replaced.
fn variant(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = std::fs::read_to_string(configs().join("baseline.cfg")).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "baseline.cfg has no `{from}`");
        text = text.replace(from, to);
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|c| c == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn baseline_run_converges_with_both_errors_decaying() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("baseline.cfg");
    let (code, _, err) = run(&["--out", tmp.path().to_str().unwrap(), "run", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    for f in ["trace.csv", "instance.txt", "solution.txt", "summary.txt", "error_coordinates.csv"] {
        assert!(tmp.path().join(f).exists(), "missing {f}");
    }
    let errors = std::fs::read_to_string(tmp.path().join("error_coordinates.csv")).unwrap();
    for name in ["opt_err", "tracker_err"] {
        let col = column(&errors, name);
        assert!(col.last().unwrap() <= &(1e-6 * col[0]), "{name} did not decay");
    }
    let trace = std::fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,opt_err,track_err,constr_res,lambda_neg\n"));
    let summary = std::fs::read_to_string(tmp.path().join("summary.txt")).unwrap();
    assert!(summary.contains("status = converged"), "{summary}");
}

#[test]
fn unit_gain_exits_with_divergence_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "unit.cfg", &[("delta = 0.1", "delta = 1")]);
    let out = tmp.path().join("out");
    let (code, _, _) = run(&["--out", out.to_str().unwrap(), "run", cfg.to_str().unwrap()]);
    assert_eq!(code, 2);
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("status = diverged"));
}

#[test]
fn zero_horizon_writes_single_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "zero.cfg", &[("horizon = 100000", "horizon = 0")]);
    let out = tmp.path().join("out");
    let (code, _, err) = run(&["--out", out.to_str().unwrap(), "run", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
}

#[test]
fn replay_is_byte_identical_and_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "short.cfg", &[("horizon = 100000", "horizon = 3000"), ("record_every = 100", "record_every = 7")]);
    let mut traces = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("out{k}"));
        let (code, _, err) = run(&["--out", out.to_str().unwrap(), "run", cfg.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        traces.push(std::fs::read(out.join("trace.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);

    // The same trace through direct library calls.
    let config = load_config(&cfg, &Overrides::default()).unwrap();
    let exp = Experiment::build(config).unwrap();
    let alg = exp.algorithm(0.1).unwrap();
    let opts = RunOptions {
        record_every: 7,
        reference: Some(reference_states(&exp.block.setup).unwrap()),
        record_states: false,
    };
    let trace = alg.run(&alg.initial_state(), 3000, &opts).unwrap();
    assert_eq!(trace.to_csv(false).into_bytes(), traces[0]);
}

#[test]
fn saved_instance_replays_without_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let short = [("horizon = 100000", "horizon = 500")];
    let cfg = variant(tmp.path(), "gen.cfg", &short);
    let out = tmp.path().join("gen");
    assert_eq!(run(&["--out", out.to_str().unwrap(), "run", cfg.to_str().unwrap()]).0, 0);
    let replay = variant(
        tmp.path(),
        "replay.cfg",
        &[short[0], ("seed = 1\n", "seed = 99\ninstance = gen/instance.txt\n"), ("edge_prob = 0.3", "edge_prob = 0.3\nseed = 1")],
    );
    let out2 = tmp.path().join("replay");
    let (code, _, err) = run(&["--out", out2.to_str().unwrap(), "run", replay.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    for f in ["trace.csv", "instance.txt", "solution.txt"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(out2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_and_environment_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "seeded.cfg", &[("horizon = 100000", "horizon = 10")]);
    let status = bin()
        .env(distmeta_cli::OUT_ENV, tmp.path().join("root"))
        .args(["--seed", "5", "run", cfg.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let seeded = std::fs::read_to_string(tmp.path().join("root/seeded/instance.txt")).unwrap();
    let out = tmp.path().join("plain");
    assert_eq!(run(&["--out", out.to_str().unwrap(), "run", cfg.to_str().unwrap()]).0, 0);
    assert_ne!(seeded, std::fs::read_to_string(out.join("instance.txt")).unwrap());
}

#[test]
fn sweep_orders_gains_and_includes_centralized() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("gain_sweep.cfg");
    let (code, _, err) = run(&["--out", tmp.path().to_str().unwrap(), "sweep", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let table = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0][0], "centralized");
    assert_eq!(rows[0][2], "1");
    let dist: Vec<(f64, bool, f64)> = rows[1..]
        .iter()
        .map(|r| (r[1].parse().unwrap(), r[2] == "1", r[4].parse().unwrap()))
        .collect();
    assert_eq!(dist.len(), 4);
    assert!(!dist[0].1, "largest gain should not converge");
    let smallest = dist.last().unwrap();
    assert!(smallest.1);
    let min_rate = dist.iter().filter(|d| d.1).map(|d| d.2.abs()).fold(f64::INFINITY, f64::min);
    assert_eq!(smallest.2.abs(), min_rate);
    assert!(tmp.path().join("trace_centralized.csv").exists());
    for d in ["1", "0.5", "0.1", "0.05"] {
        assert!(tmp.path().join(format!("trace_delta_{d}.csv")).exists());
    }
    let errors = std::fs::read_to_string(tmp.path().join("sweep_errors.csv")).unwrap();
    assert!(errors.starts_with("t,centralized,delta_1,delta_0.5,delta_0.1,delta_0.05\n"));
}

#[test]
fn singleton_sweep_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "one.cfg", &[("delta = 0.1", "deltas = 0.1")]);
    let (code, _, err) = run(&["--out", tmp.path().to_str().unwrap(), "sweep", cfg.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("deltas"), "{err}");
}

#[test]
fn validate_reports_named_checks() {
    let (code, stdout, _) = run(&["validate", configs().join("baseline.cfg").to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(!stdout.contains("[FAIL]"), "{stdout}");
    assert!(stdout.contains("[ok]   graph connectivity"));

    let tmp = tempfile::tempdir().unwrap();
    let empty = variant(tmp.path(), "empty.cfg", &[("edge_prob = 0.3", "edge_prob = 0\nretries = 5")]);
    let (code, stdout, err) = run(&["validate", empty.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(stdout.contains("[FAIL] graph connectivity"), "{stdout}");
    assert!(err.contains("graph connectivity"));

    let pi = variant(
        tmp.path(),
        "pi.cfg",
        &[("edge_prob = 0.3", "edge_prob = 0.9"), ("kind = perturbed", "kind = pi_dac\nk_p = 10")],
    );
    let (code, stdout, _) = run(&["validate", pi.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(stdout.contains("[FAIL] tracker spectral gate"), "{stdout}");
}

#[test]
fn bad_inputs_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["run", "/nonexistent/config.cfg"]).0, 1);
    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "[problem]\nsetup = constraint_coupled\nagents = ten\n").unwrap();
    let (code, _, err) = run(&["run", bad.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("line 3"), "{err}");
    let no_delta = variant(tmp.path(), "nodelta.cfg", &[("delta = 0.1", "")]);
    assert_eq!(run(&["--out", tmp.path().to_str().unwrap(), "run", no_delta.to_str().unwrap()]).0, 1);
}
