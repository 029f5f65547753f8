use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn patrol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patrol")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_kind(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is a JSON error");
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn simulate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let map = repo("maps/a.txt");
    let mut outputs = Vec::new();
    for run in ["one", "two"] {
        let out = dir.path().join(run);
        let o = patrol(&[
            "simulate", "--strategy", "cr", "--map", s(&map), "--episodes", "3", "--seed", "7",
            "--horizon", "3000", "--out", s(&out), "--events", "--csv",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(out);
    }
    for f in ["metrics.json", "episodes.jsonl", "events.jsonl", "steps.csv"] {
        let a = fs::read(outputs[0].join(f)).unwrap();
        let b = fs::read(outputs[1].join(f)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
    }
    let csv = fs::read_to_string(outputs[0].join("steps.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("episode,step,mean_idleness,max_idleness"));
    assert_eq!(csv.lines().count(), 1 + 3 * 3000);
}

#[test]
fn different_seeds_differ() {
    let map = repo("maps/a.txt");
    let run = |seed: &str| patrol(&["simulate", "--strategy", "sebs", "--map", s(&map), "--episodes", "2", "--horizon", "2000", "--seed", seed]).stdout;
    assert_ne!(run("1"), run("2"));
    assert_eq!(run("1"), run("1"));
}

#[test]
fn config_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"env": {{"map": {:?}, "agents": 3}}, "strategy": {{"kind": "part"}}, "eval": {{"episodes": 2, "horizon": 1500}}}}"#,
            repo("maps/b.txt")
        ),
    )
    .unwrap();
    let o = patrol(&["simulate", "--config", s(&cfg), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["strategy"], "part");
    assert_eq!(v["agents"], 3);
    assert_eq!(v["horizon"], 1500);
    assert_eq!(v["seed"], 3);
}

#[test]
fn compare_has_a_row_per_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let o = patrol(&[
        "compare", "--strategies", "cr,sebs", "--agents", "2", "--map", s(&repo("maps/a.txt")),
        "--episodes", "2", "--horizon", "1000", "--out", s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("compare.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["strategy"], "cr");
    assert_eq!(rows[1]["strategy"], "sebs");
    for r in rows {
        assert_eq!(r["agents"], 2);
        assert!(r["aggregate"]["collisions"]["mean"].is_number());
        assert!(r["aggregate"]["collisions"]["std"].is_number());
    }
    let md = fs::read_to_string(dir.path().join("compare.md")).unwrap();
    assert!(md.contains("| cr | 2 |") && md.contains("| sebs | 2 |"));
}

#[test]
fn disconnected_map_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("split.txt");
    fs::write(&map, "C.#.\n..#.\n").unwrap();
    let o = patrol(&["map", "validate", s(&map)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_kind(&o), "DisconnectedGraph");
}

#[test]
fn shipped_maps_validate() {
    for m in fs::read_dir(repo("maps")).unwrap() {
        let path = m.unwrap().path();
        let o = patrol(&["map", "validate", s(&path)]);
        assert!(o.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["vertex_graph_connected"], true, "{}", path.display());
    }
}

#[test]
fn generated_map_round_trips_through_validate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gen.txt");
    let o = patrol(&["map", "generate", "--height", "9", "--width", "7", "--stations", "2", "--seed", "4", "--out", s(&path)]);
    assert!(o.status.success());
    let again = patrol(&["map", "generate", "--height", "9", "--width", "7", "--stations", "2", "--seed", "4"]);
    assert_eq!(fs::read(&path).unwrap(), again.stdout);
    let v = patrol(&["map", "validate", s(&path)]);
    assert!(v.status.success());
    let v: serde_json::Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!((v["height"].as_u64(), v["width"].as_u64(), v["stations"].as_u64()), (Some(9), Some(7), Some(2)));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(patrol(&["simulate", "--bogus"]).status.code(), Some(2));
    assert_eq!(patrol(&["simulate", "--strategy", "greedy"]).status.code(), Some(2));
    assert_eq!(patrol(&[]).status.code(), Some(2));
    let o = patrol(&["simulate", "--strategy", "rl", "--map", s(&repo("maps/a.txt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_kind(&o), "UsageError");
    let o = patrol(&["simulate", "--csv", "--map", s(&repo("maps/a.txt"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_json() {
    let o = patrol(&["simulate", "--map", "/nonexistent/map.txt"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_kind(&o), "IoError");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"eval": {"episodez": 3}}"#).unwrap();
    let o = patrol(&["simulate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_kind(&o), "ConfigError");

    let ck = dir.path().join("garbage.ptck");
    fs::write(&ck, b"not a checkpoint").unwrap();
    let o = patrol(&["evaluate", "--checkpoint", s(&ck), "--map", s(&repo("maps/train6.txt"))]);
    assert_eq!(o.status.code(), Some(1));

    let o = patrol(&["simulate", "--map", s(&repo("maps/a.txt")), "--horizon", "10", "--burnin", "10", "--episodes", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_kind(&o), "InvalidHorizon");
}

/// Three training episodes, then evaluation of the saved checkpoint; both
/// are repeated to check determinism.
#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    fs::write(
        &cfg,
        format!(
            r#"{{
  "env": {{"map": {:?}}},
  "train": {{
    "episodes": 3, "horizon": 60, "parallel_episodes": 2, "batches": 4, "checkpoint_every": 2,
    "curriculum": [{{"from_episode": 0, "agents": [1, 2]}}],
    "arch": {{"conv_channels": [2], "hidden": [8], "recurrent": 4, "separate_trunks": false}}
  }},
  "eval": {{"episodes": 2, "horizon": 200}}
}}"#,
            repo("maps/example6.txt")
        ),
    )
    .unwrap();
    let mut runs = Vec::new();
    for r in ["a", "b"] {
        let out = dir.path().join(r);
        let o = patrol(&["train", "--config", s(&cfg), "--seed", "5", "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["config.json", "metrics.jsonl", "checkpoints/ep000002.ptck", "checkpoints/final.ptck"] {
            assert!(out.join(f).exists(), "missing {f}");
        }
        let lines = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 3);
        runs.push(out);
    }
    for f in ["metrics.jsonl", "checkpoints/final.ptck"] {
        assert!(fs::read(runs[0].join(f)).unwrap() == fs::read(runs[1].join(f)).unwrap(), "{f} differs");
    }
    let mut evals = Vec::new();
    for r in ["ea", "eb"] {
        let out = dir.path().join(r);
        let ck = runs[0].join("checkpoints/final.ptck");
        let o = patrol(&["evaluate", "--config", s(&cfg), "--checkpoint", s(&ck), "--agents", "2", "--seed", "9", "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        evals.push(fs::read(out.join("metrics.json")).unwrap());
    }
    assert_eq!(evals[0], evals[1]);
    let v: serde_json::Value = serde_json::from_slice(&evals[0]).unwrap();
    assert_eq!(v["strategy"], "rl");

    // A checkpoint trained on a 6x6 map does not fit a 10x10 one.
    let ck = runs[0].join("checkpoints/final.ptck");
    let o = patrol(&["evaluate", "--checkpoint", s(&ck), "--map", s(&repo("maps/a.txt")), "--episodes", "2", "--horizon", "10"]);
    assert_eq!(o.status.code(), Some(1));
}
