use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn decaf(args: &[&str], output_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_decaf"));
    cmd.args(args).env_remove("DECAF_OUTPUT_ROOT");
    if let Some(root) = output_root {
        cmd.env("DECAF_OUTPUT_ROOT", root);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Flags for a small, fast run on the shipped sweep SEM.
fn quick(sem: &Path) -> Vec<String> {
    [
        "--sem",
        sem.to_str().unwrap(),
        "--rows",
        "500",
        "--protected",
        "A",
        "--target",
        "Y",
        "--epochs",
        "3",
        "--discriminator-steps",
        "2",
        "--downstream-epochs",
        "10",
        "--quality-rows",
        "60",
    ]
    .map(String::from)
    .to_vec()
}

fn with<'a>(head: &[&'a str], rest: &'a [String]) -> Vec<&'a str> {
    head.iter().copied().chain(rest.iter().map(String::as_str)).collect()
}

#[test]
fn edges_prints_adult_ftu_removal() {
    let dag = data("adult/dag.json");
    let o = decaf(
        &["edges", "--dag", dag.to_str().unwrap(), "--definition", "ftu", "--protected", "sex", "--target", "income"],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let removed: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(removed, serde_json::json!([{"from": "sex", "to": "income", "rationale": "ftu_direct_edge"}]));
}

#[test]
fn fit_generate_evaluate_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let flags = quick(&data("sem/sweep-sem.json"));
    let o = decaf(&with(&["fit", "--name", "rt"], &flags), Some(root.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let fit_dir = root.path().join("rt/fit-0");
    for f in ["model.decaf", "train-log.jsonl", "dag.json", "train.csv", "eval.csv"] {
        assert!(fit_dir.join(f).is_file(), "missing {f}");
    }
    assert!(stdout(&o).contains("held-out rows 100"));

    let synth = root.path().join("synth.csv");
    let o = decaf(
        &[
            "generate",
            "--model",
            fit_dir.join("model.decaf").to_str().unwrap(),
            "--rows",
            "300",
            "--variant",
            "ftu",
            "--protected",
            "A",
            "--target",
            "Y",
            "--seed",
            "4",
            "--out",
            synth.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("removed A -> Y"));
    let text = std::fs::read_to_string(&synth).unwrap();
    assert_eq!(text.lines().count(), 301);
    assert_eq!(text.lines().next().unwrap(), "A,X1,X2,X3,Y");

    let metrics = root.path().join("metrics.json");
    let o = decaf(
        &[
            "evaluate",
            "--synthetic",
            synth.to_str().unwrap(),
            "--eval",
            fit_dir.join("eval.csv").to_str().unwrap(),
            "--protected",
            "A",
            "--target",
            "Y",
            "--downstream-epochs",
            "10",
            "--quality-rows",
            "60",
            "--out",
            metrics.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    for key in ["precision", "recall", "auroc", "ftu", "ftu_max", "dp"] {
        let v = m[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
}

#[test]
fn run_writes_under_env_output_root() {
    let root = tempfile::tempdir().unwrap();
    let flags = quick(&data("sem/sweep-sem.json"));
    let o = decaf(&with(&["run", "--name", "envroot", "--variants", "nd,ftu"], &flags), Some(root.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = root.path().join("envroot");
    for f in ["config.json", "report.json", "tidy-metrics.csv", "repeat-0/synthetic-ftu.csv"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    assert!(stdout(&o).contains("ftu"));

    // an explicit flag wins over the environment
    let other = tempfile::tempdir().unwrap();
    let mut args = with(&["run", "--name", "flag", "--variants", "nd"], &flags);
    args.extend(["--output-dir", other.path().to_str().unwrap()]);
    let o = decaf(&args, Some(root.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(other.path().join("flag/report.json").is_file());
    assert!(!root.path().join("flag").exists());
}

#[test]
fn config_file_flags_override_fields() {
    let root = tempfile::tempdir().unwrap();
    let config = data("sem/sweep.json");
    let o = decaf(
        &[
            "sweep",
            "--config",
            config.to_str().unwrap(),
            "--rows",
            "500",
            "--betas",
            "0.5",
            "--repeats",
            "1",
            "--variants",
            "nd",
            "--epochs",
            "2",
            "--discriminator-steps",
            "1",
            "--downstream-epochs",
            "5",
            "--quality-rows",
            "50",
        ],
        Some(root.path()),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.path().join("bias-sweep/beta-0.5/config.json")).unwrap())
            .unwrap();
    assert_eq!(saved["data"]["sem_file"]["rows"], 500);
    assert_eq!(saved["train"]["epochs"], 2);
    assert_eq!(saved["variants"], serde_json::json!(["nd"]));
    assert!(root.path().join("bias-sweep/tidy-metrics.csv").is_file());
}

#[test]
fn ablation_with_skipped_cells_exits_nonzero() {
    let root = tempfile::tempdir().unwrap();
    let mut flags = quick(&data("sem/sweep-sem.json"));
    // the graph has five edges, so removing six cannot be done
    flags.extend(["--modes", "remove", "--max-edges", "6", "--ablation-seeds", "1", "--variants", "nd"].map(String::from));
    let o = decaf(&with(&["ablate", "--name", "abl"], &flags), Some(root.path()));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).contains("skipped"));
    assert!(stderr(&o).contains("1 of 6 ablation cells did not complete"));
}

#[test]
fn missing_source_and_bad_names_fail() {
    let o = decaf(&["run", "--protected", "A", "--target", "Y"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("data source"));

    let root = tempfile::tempdir().unwrap();
    let flags: Vec<String> = quick(&data("sem/sweep-sem.json")).into_iter().map(|f| if f == "Y" { "Q".into() } else { f }).collect();
    let o = decaf(&with(&["run"], &flags), Some(root.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains('Q'), "{}", stderr(&o));
}
