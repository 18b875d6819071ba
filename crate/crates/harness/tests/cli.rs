use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
output_dir = "out"
seeds = [3]
compression = 6

[data.synthetic]
trials_per_class = 16

[nodes]
count = 2

[train]
max_epochs = 2
patience = 1

[selection]
epochs = 2
"#;

fn bwnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bwnet"))
        .current_dir(dir)
        .args(["--config", "run.toml"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bwnet(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_workflow_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.toml"), CONFIG).unwrap();
    ok(dir, &["synth-data"]);
    ok(dir, &["emulate-nodes"]);
    assert!(ok(dir, &["select-nodes"]).contains("selected nodes"));
    ok(dir, &["train"]);
    ok(dir, &["sweep"]);
    let sim = ok(dir, &["simulate", "--threshold", "0.8"]);
    assert!(sim.contains("seed 3"), "{sim}");
    ok(dir, &["report"]);

    let out = dir.join("out");
    for f in ["cap.bnds", "layout.json", "candidates.bnds", "candidates.json", "selection.json", "summary.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let seed = out.join("seed3");
    for f in [
        "stage1.bnw",
        "stage2.bnw",
        "stage3.bnw",
        "stage4.bnw",
        "model.bnw",
        "stages.json",
        "sweep.csv",
        "pareto.csv",
        "branches.json",
        "simulation.json",
        "messages.csv",
    ] {
        assert!(seed.join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_to_string(seed.join("sweep.csv")).unwrap().lines().count(), 102);
    let sim: serde_json::Value = serde_json::from_str(&fs::read_to_string(seed.join("simulation.json")).unwrap()).unwrap();
    let a = sim["bandwidth_from_log"].as_f64().unwrap();
    let b = sim["bandwidth_formula"].as_f64().unwrap();
    assert!((a - b).abs() < 1e-8, "{sim}");
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.toml"), CONFIG).unwrap();

    let bad = bwnet(dir, &["--set", "compression=0", "train"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("[config]"));

    let unknown = bwnet(dir, &["--set", "train.no_such_key=1", "train"]);
    assert_eq!(unknown.status.code(), Some(3));

    let missing = bwnet(dir, &["--set", "nodes.indices=[0, 1]", "simulate"]);
    assert_eq!(missing.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("model.bnw"));

    let usage = bwnet(dir, &["no-such-command"]);
    assert_eq!(usage.status.code(), Some(2));
}
