use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use frontlab::checkpoint::ResumeCheckpoint;
use frontlab::records::read_results;
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_frontlab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn kpp() -> Value {
    json!({"kind": "fisher_kpp", "gamma": 1.0, "k_tilde": 1.0})
}

fn simulate_config(out: &Path, stop_at: Option<f64>) -> Value {
    json!({
        "experiment": "simulate",
        "nonlinearity": kpp(),
        "params": {"frame": "rescaled", "epsilon": 0.0625, "dx": 0.1, "dt": 0.004, "t_max": 20.0, "window": 100.0},
        "replicas": 2,
        "seed": 11,
        "output_dir": out,
        "options": {"stop_at": stop_at, "snapshot_times": [5.0]}
    })
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_output_dir_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &simulate_config(&dir.path().join("absent"), None));
    let out = run(&["simulate", "--config", path_str(&cfg)]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn invalid_configs_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = simulate_config(dir.path(), None);
    bad["params"]["dt"] = json!(0.5);
    let cfg = write_config(dir.path(), "bad.json", &bad);
    assert_eq!(code(&run(&["simulate", "--config", path_str(&cfg)])), 2);

    let good = write_config(dir.path(), "good.json", &simulate_config(dir.path(), None));
    assert_eq!(code(&run(&["speed", "--config", path_str(&good)])), 2);
    assert_eq!(code(&run(&["simulate", "--config", path_str(&good), "--replicas", "0"])), 2);
    assert_eq!(code(&run(&["--threads", "0", "simulate", "--config", path_str(&good)])), 2);
}

#[test]
fn simulate_writes_logs_manifest_and_stamped_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &simulate_config(dir.path(), None));
    let out = run(&["simulate", "--config", path_str(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifest.json", "results.jsonl", "log_0000.csv", "log_0001.csv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let records = read_results(dir.path()).unwrap();
    assert!(records.iter().all(|r| r.config_hash == manifest["config_hash"] && r.seed == 11 && r.frame == "rescaled"));
    assert_eq!(records.iter().filter(|r| r.estimator == "profile").count(), 2);
    assert_eq!(records.iter().filter(|r| r.estimator == "final_r").count(), 2);

    let csv = dir.path().join("profiles.csv");
    let out = run(&["plot-data", "--results", path_str(dir.path()), "--plot", "profile-snapshots", "--out", path_str(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("x,y,stderr,series\n") && text.lines().count() > 10);

    let out = run(&["plot-data", "--results", path_str(dir.path()), "--plot", "mass-vs-t", "--out", path_str(&csv)]);
    assert_eq!(code(&out), 4);
    let out = run(&[
        "plot-data", "--results", path_str(dir.path()), "--plot", "profile-snapshots", "--out", path_str(&csv),
        "--series", "no such series",
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn resumed_runs_match_uninterrupted_runs() {
    let whole = tempfile::tempdir().unwrap();
    let paused = tempfile::tempdir().unwrap();
    let cfg = write_config(whole.path(), "c.json", &simulate_config(whole.path(), None));
    assert_eq!(code(&run(&["simulate", "--config", path_str(&cfg)])), 0);
    let cfg = write_config(paused.path(), "c.json", &simulate_config(paused.path(), Some(10.0)));
    assert_eq!(code(&run(&["simulate", "--config", path_str(&cfg)])), 0);
    let paused_records = read_results(paused.path()).unwrap();
    assert!(paused_records.iter().all(|r| r.estimator == "paused_at" && (r.value - 10.0).abs() < 1e-9));

    for k in 0..2 {
        let cp = paused.path().join(format!("checkpoint_{k:04}.json"));
        assert_eq!(code(&run(&["resume", "--checkpoint", path_str(&cp)])), 0);
        let log = format!("log_{k:04}.csv");
        let first = fs::read(paused.path().join(&log)).unwrap();
        assert_eq!(first, fs::read(whole.path().join(&log)).unwrap(), "replica {k} log differs");

        let resumed = read_results(&paused.path().join(format!("resume_{k:04}.jsonl"))).unwrap();
        let full = read_results(whole.path()).unwrap();
        for r in &resumed {
            let twin = full
                .iter()
                .find(|f| f.estimator == r.estimator && f.extra.get("replica") == r.extra.get("replica"))
                .unwrap();
            assert_eq!(r.value.to_bits(), twin.value.to_bits(), "{}", r.estimator);
        }

        // a second resume from the same checkpoint rewrites identical files
        let before = fs::read(paused.path().join(format!("resume_{k:04}.jsonl"))).unwrap();
        assert_eq!(code(&run(&["resume", "--checkpoint", path_str(&cp)])), 0);
        assert_eq!(fs::read(paused.path().join(&log)).unwrap(), first);
        assert_eq!(fs::read(paused.path().join(format!("resume_{k:04}.jsonl"))).unwrap(), before);
    }
}

#[test]
fn foreign_or_corrupt_checkpoints_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &simulate_config(dir.path(), Some(2.0)));
    assert_eq!(code(&run(&["simulate", "--config", path_str(&cfg)])), 0);
    let cp = dir.path().join("checkpoint_0000.json");
    let mut value: Value = serde_json::from_str(&fs::read_to_string(&cp).unwrap()).unwrap();
    value["code_version"] = json!("frontlab 0.0.0");
    let foreign = dir.path().join("foreign.json");
    fs::write(&foreign, value.to_string()).unwrap();
    let out = run(&["resume", "--checkpoint", path_str(&foreign)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("frontlab 0.0.0"));

    let corrupt = dir.path().join("corrupt.json");
    fs::write(&corrupt, &fs::read_to_string(&cp).unwrap()[..200]).unwrap();
    assert_eq!(code(&run(&["resume", "--checkpoint", path_str(&corrupt)])), 2);
    assert_eq!(code(&run(&["resume", "--checkpoint", path_str(&dir.path().join("none.json"))])), 2);
}

#[test]
fn window_overflow_exits_with_3_and_resumes_in_a_wider_window() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "simulate",
        "nonlinearity": kpp(),
        "params": {"frame": "original", "sigma": 0.0, "dx": 0.1, "dt": 0.004, "t_max": 5.0, "window": 12.0},
        "replicas": 1,
        "seed": 3,
        "output_dir": dir.path(),
    });
    let path = write_config(dir.path(), "c.json", &cfg);
    let out = run(&["simulate", "--config", path_str(&path)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let cp = dir.path().join("failure_0000.json");
    assert!(String::from_utf8_lossy(&out.stderr).contains("failure_0000.json"));
    let saved = ResumeCheckpoint::load(&cp).unwrap();
    assert!(saved.run.state.t() < 5.0);

    assert_eq!(code(&run(&["resume", "--checkpoint", path_str(&cp)])), 3);
    let out = run(&["resume", "--checkpoint", path_str(&cp), "--window", "400"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let finals = read_results(&dir.path().join("resume_0000.jsonl")).unwrap();
    let t = finals[0].extra_f64("t").unwrap();
    assert!((t - 5.0).abs() < 1e-9);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut bytes = Vec::new();
    for (dir, threads) in dirs.iter().zip(["1", "3"]) {
        let cfg = json!({
            "experiment": "girsanov_check",
            "nonlinearity": kpp(),
            "params": {"frame": "rescaled", "epsilon": 0.1, "dx": 0.1, "dt": 0.004, "t_max": 1.0, "window": 60.0},
            "replicas": 40,
            "seed": 8,
            "output_dir": dir.path(),
            "options": {"times": [0.5, 1.0], "threshold": 0.5}
        });
        let path = write_config(dir.path(), "c.json", &cfg);
        let out = run(&["--threads", threads, "girsanov", "--config", path_str(&path)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        bytes.push(fs::read(dir.path().join("results.jsonl")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn seed_override_changes_results_but_not_output_dir_hash() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = write_config(a.path(), "c.json", &simulate_config(a.path(), None));
    assert_eq!(code(&run(&["simulate", "--config", path_str(&cfg), "--replicas", "1"])), 0);
    assert_eq!(
        code(&run(&["simulate", "--config", path_str(&cfg), "--replicas", "1", "--output-dir", path_str(b.path())])),
        0
    );
    assert_eq!(fs::read(a.path().join("results.jsonl")).unwrap(), fs::read(b.path().join("results.jsonl")).unwrap());
    assert_eq!(code(&run(&["simulate", "--config", path_str(&cfg), "--replicas", "1", "--seed", "12"])), 0);
    let reseeded = read_results(a.path()).unwrap();
    let original = read_results(b.path()).unwrap();
    assert_ne!(reseeded[0].config_hash, original[0].config_hash);
    assert_eq!(reseeded[0].seed, 12);
}
