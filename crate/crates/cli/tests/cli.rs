use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfgrow"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    // Commands without `--out` default to `./out`; keep that out of the source tree.
    bin()
        .args(args)
        .current_dir(std::env::temp_dir())
        .env_remove("MFGROW_CIFAR10_DIR")
        .output()
        .expect("spawn mfgrow")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gamma_plain_mlp_has_one_group_per_hidden_layer() {
    let o = run(&["gamma", "--mlp", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(
        out.lines().filter(|l| l.starts_with("Γ_")).count(),
        4,
        "{out}"
    );
}

#[test]
fn gamma_example3_file() {
    let o = run(&["gamma", s(&fixture("example3.json")), "--roles"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "Γ_1: {γ1} width=4 role=hidden\nΓ_2: {γ2, γ3} width=4 role=hidden\nΓ_3: {γ4} width=1 role=data\n"
    );
}

#[test]
fn gamma_builtin_example3_matches_the_file() {
    let a = run(&["gamma", "--example3", "4"]);
    let b = run(&["gamma", s(&fixture("example3.json"))]);
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn gamma_skip_block_and_attention() {
    let o = run(&["gamma", "--skip-block", "6"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(&["gamma", "--attention", "4,3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("{γ2, γ3, γ4}"), "{}", stdout(&o));
}

#[test]
fn malformed_json_exits_2_with_location() {
    let o = run(&["gamma", s(&fixture("malformed.json"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("malformed.json") && err.contains("line"),
        "{err}"
    );
}

#[test]
fn unknown_weight_exits_2() {
    let o = run(&["gamma", s(&fixture("unknown_weight.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("w9"), "{}", stderr(&o));
}

#[test]
fn conflicting_arch_sources_exit_2() {
    let o = run(&["gamma", "--mlp", "3", "--example3", "4"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["gamma"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn init_transfer_diagnose_sample_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.ckpt");
    let big = dir.path().join("big.ckpt");
    let o = run(&[
        "init",
        "--mlp",
        "3",
        "--widths",
        "6",
        "--seed",
        "3",
        "--out",
        s(&small),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(small.exists());

    let o = run(&[
        "transfer",
        "--from",
        s(&small),
        "--widths",
        "18",
        "--strategy",
        "duplicate",
        "--out",
        s(&big),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("width=18"), "{}", stdout(&o));

    let diag = dir.path().join("diag");
    let o = run(&[
        "diagnose",
        "--ckpt",
        s(&big),
        "--report",
        "corr",
        "--out",
        s(&diag),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(diag.join("correlation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "{csv}");
    assert!(csv.contains("first,M.column"));

    let o = run(&[
        "diagnose",
        "--ckpt",
        s(&big),
        "--report",
        "heatmap",
        "--out",
        s(&diag),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let grid = std::fs::read_to_string(diag.join("heatmap_w1.txt")).unwrap();
    assert_eq!(grid.lines().filter(|l| !l.trim().is_empty()).count(), 18);

    let o = run(&[
        "diagnose",
        "--ckpt",
        s(&small),
        "--ckpt",
        s(&big),
        "--report",
        "hist",
        "--out",
        s(&diag),
    ]);
    // Snapshots of different widths cannot share a trajectory.
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = run(&[
        "sample",
        "--ckpt",
        s(&small),
        "--group",
        "1",
        "--target",
        "12",
        "--out",
        s(&diag),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let idx: Vec<usize> = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(idx.len(), 12);
    assert!(idx.iter().all(|&i| i < 6));

    let o = run(&[
        "sample",
        "--ckpt",
        s(&small),
        "--group",
        "9",
        "--target",
        "12",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn init_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = ["a", "b", "c"]
        .iter()
        .map(|n| dir.path().join(format!("{n}.ckpt")))
        .collect();
    for (p, seed) in paths.iter().zip(["1", "1", "2"]) {
        let o = run(&["init", "--example3", "5", "--seed", seed, "--out", s(p)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let read = |p: &PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(&paths[0]), read(&paths[1]));
    assert_ne!(read(&paths[0]), read(&paths[2]));
}

#[test]
fn transfer_rejects_a_non_checkpoint() {
    let o = run(&[
        "transfer",
        "--from",
        s(&fixture("example3.json")),
        "--widths",
        "8",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_writes_logs_and_checkpoints_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "train",
        "--config",
        s(&fixture("train_sine.json")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for seed in [0, 1] {
        let csv =
            std::fs::read_to_string(dir.path().join(format!("train_seed{seed}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 1 + 5, "{csv}");
        assert!(dir.path().join(format!("model_seed{seed}.ckpt")).exists());
    }
}

#[test]
fn train_with_mid_run_growth_tags_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "train",
        "--config",
        s(&fixture("train_grow.json")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let meta = std::fs::read_to_string(dir.path().join("train_seed0.meta.json")).unwrap();
    let meta: serde_json::Value = serde_json::from_str(&meta).unwrap();
    assert_eq!(meta["r1"], "0.5");
    assert_eq!(meta["targets"], "24 24 3 8");
    let csv = std::fs::read_to_string(dir.path().join("train_seed0.csv")).unwrap();
    let steps: Vec<usize> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(steps.windows(2).all(|w| w[0] <= w[1]), "{steps:?}");
}

#[test]
fn train_without_config_is_an_input_error() {
    let o = run(&["train"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_key_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let text = std::fs::read_to_string(fixture("train_sine.json"))
        .unwrap()
        .replace("\"epochs\"", "\"epoch\"");
    std::fs::write(&path, text).unwrap();
    let o = run(&["train", "--config", s(&path)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn cifar_experiment_without_data_exits_3_with_instructions() {
    for name in ["table1", "fig1", "fig2-grow", "fig2-prune"] {
        let o = run(&["reproduce", name]);
        assert_eq!(o.status.code(), Some(3), "{name}: {}", stderr(&o));
        assert!(
            stderr(&o).contains("cifar-10-binary.tar.gz"),
            "{}",
            stderr(&o)
        );
    }
}

#[test]
fn reproduce_function_preservation_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["reproduce", "function-preservation", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let csv =
        std::fs::read_to_string(dir.path().join("function_preservation_summary.csv")).unwrap();
    assert!(csv.starts_with("experiment,check,measured,requirement,pass"));
    assert!(!csv.contains(",false"));
}

#[test]
fn reproduce_reports_failure_with_exit_1() {
    // At N=1 a single seed cannot show the width scaling of the update.
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "reproduce",
        "update-scaling",
        "--n",
        "1",
        "--seeds",
        "1",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn reproduce_synthetic_fig1_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "reproduce",
        "fig1",
        "--synthetic",
        "--n",
        "16",
        "--epochs",
        "2",
        "--seeds",
        "1",
        "--train-limit",
        "300",
        "--out",
        s(dir.path()),
    ]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    for p in ["SP", "muP", "MFP"] {
        for stage in ["init", "trained"] {
            assert!(
                dir.path().join(format!("fig1_{p}_{stage}.txt")).exists(),
                "{p} {stage}"
            );
        }
    }
    assert!(dir.path().join("fig1_synthetic_summary.csv").exists());
    assert!(stdout(&o).contains("fig1_synthetic"), "{}", stdout(&o));
}
