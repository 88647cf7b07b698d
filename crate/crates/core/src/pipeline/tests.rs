use super::*;
use crate::graph::{NodeKind, NodeSpec};
use crate::sem::Mechanism;

fn sem() -> SemSpec {
    let w = |pairs: &[(&str, f64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let dag = CausalDag::new(
        vec![
            NodeSpec::new("A", NodeKind::Binary),
            NodeSpec::new("C", NodeKind::Continuous),
            NodeSpec::new("M", NodeKind::Continuous),
            NodeSpec::new("Y", NodeKind::Binary),
        ],
        vec![("A", "M"), ("C", "M"), ("A", "Y"), ("M", "Y"), ("C", "Y")],
    )
    .unwrap();
    SemSpec::new(
        dag,
        [
            ("A".into(), Mechanism::Logistic { weights: w(&[]), intercept: 0.0 }),
            ("C".into(), Mechanism::Linear { weights: w(&[]), intercept: 0.0, sigma: 1.0 }),
            ("M".into(), Mechanism::Linear { weights: w(&[("A", 1.0), ("C", 0.5)]), intercept: 0.0, sigma: 1.0 }),
            ("Y".into(), Mechanism::Logistic { weights: w(&[("A", 1.5), ("M", 1.0), ("C", 1.0)]), intercept: -1.0 }),
        ]
        .into(),
    )
    .unwrap()
}

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(DataSource::Sem { sem: Box::new(sem()), rows: 600 }, "A", "Y");
    c.train.epochs = 15;
    c.train.batch_size = 128;
    c.train.discriminator_steps = 3;
    c.downstream.max_epochs = 20;
    c.quality.max_rows = 100;
    c
}

#[test]
fn variant_names_round_trip() {
    for s in ["nd", "ftu", "dp", "cf", "no_proxy", "pr"] {
        let v: Variant = s.parse().unwrap();
        assert_eq!(v.to_string(), s);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Variant>(&json).unwrap(), v);
    }
    assert!("fair".parse::<Variant>().is_err());
}

#[test]
fn config_json_defaults_and_unknown_fields() {
    let json = r#"{"data": {"csv": {"path": "x.csv"}}, "dag": "g.json", "protected": "A", "target": "Y"}"#;
    let c: ExperimentConfig = serde_json::from_str(json).unwrap();
    assert_eq!(c.variants, default_variants());
    assert_eq!(c.repeats, 1);
    assert_eq!(c.train, TrainConfig::default());
    let bad = r#"{"data": {"csv": {"path": "x.csv"}}, "protected": "A", "target": "Y", "epochs": 3}"#;
    assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
}

#[test]
fn fingerprint_ignores_output_dir_only() {
    let a = small_config();
    let mut b = a.clone();
    b.output_dir = Some("/elsewhere".into());
    assert_eq!(a.fingerprint(), b.fingerprint());
    b.seed = 1;
    assert_ne!(a.fingerprint(), b.fingerprint());
}

#[test]
fn validation_rejects_bad_settings() {
    let mut c = small_config();
    c.drop_columns = vec!["A".into()];
    assert!(matches!(run_experiment(&c), Err(PipelineError::Config(_))));
    let mut c = small_config();
    c.variants = vec![Variant::Fair(FairnessDefinition::Cf)];
    assert!(matches!(run_experiment(&c), Err(PipelineError::Config(_))));
    let mut c = small_config();
    c.protected = "Q".into();
    assert!(matches!(run_experiment(&c), Err(PipelineError::Config(_))));
    let mut c = small_config();
    c.holdout = Some(599);
    assert!(run_experiment(&c).is_err());
}

#[test]
fn experiment_is_deterministic_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c.repeats = 2;
    c.bias = Some(0.3);
    c.output_dir = Some(dir.path().to_path_buf());
    let a = run_experiment(&c).unwrap();
    c.output_dir = None;
    let b = run_experiment(&c).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.reports.len(), 3);
    assert_eq!(a.repeats[1].seed, 1);
    let ftu = &a.repeats[0].variants[1];
    assert_eq!(ftu.variant, Variant::Fair(FairnessDefinition::Ftu));
    assert_eq!(ftu.removed.edge_set(), [("A".to_string(), "Y".to_string())].into());

    let root = dir.path().join("experiment");
    for f in ["config.json", "report.json", "tidy-metrics.csv", "repeat-0/model.decaf", "repeat-1/synthetic-dp.csv"] {
        assert!(root.join(f).is_file(), "{f} missing");
    }
    let model = crate::generator::GeneratorModel::load(root.join("repeat-0/model.decaf")).unwrap();
    assert_eq!(model.digest().unwrap(), a.repeats[0].model_sha256);
    let tidy = std::fs::read_to_string(root.join("tidy-metrics.csv")).unwrap();
    assert_eq!(tidy.lines().count(), 1 + 2 * 3 * 6);
    let stored: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(root.join("config.json")).unwrap()).unwrap();
    assert_eq!(stored.fingerprint(), a.fingerprint);
}

#[test]
fn protected_removal_drops_the_column() {
    let report = run_baseline_pr(&small_config()).unwrap();
    assert_eq!(report.reports.len(), 1);
    assert_eq!(report.reports[0].variant, "pr");
    let m = report.repeats[0].variants[0].metrics;
    assert_eq!(m.ftu, 0.0);
    assert!(report.repeats[0].pr_model_sha256.is_some());
}

#[test]
fn sweep_runs_one_cell_per_beta() {
    let mut c = small_config();
    c.variants = vec![Variant::Nd];
    c.betas = vec![0.0, 0.5];
    let s = sweep_bias(&c).unwrap();
    assert_eq!(s.cells.len(), 2);
    assert!(s.cell(0.5).is_some());
    assert_eq!(s.tidy_rows().len(), 2 * 6);
    c.betas.clear();
    assert!(sweep_bias(&c).is_err());
}

#[test]
fn hidden_confounder_drops_a_covariate() {
    let mut c = small_config();
    c.variants = vec![Variant::Nd, Variant::Fair(FairnessDefinition::Ftu)];
    c.betas = vec![0.2];
    c.drop_columns = vec!["C".into()];
    let s = run_hidden_confounder(&c).unwrap();
    assert_eq!(s.cells[0].dag_edges, 3);
}

#[test]
fn ablation_records_infeasible_cells() {
    let mut c = small_config();
    c.variants = vec![Variant::Nd];
    c.ablation = AblationConfig {
        modes: vec![PerturbMode::Remove],
        max_edges: 6,
        seeds: 1,
    };
    let r = run_ablation(&c).unwrap();
    assert_eq!(r.cells.len(), 6);
    assert!(matches!(r.cells[0].outcome, CellOutcome::Completed { .. }));
    assert!(matches!(r.cells[5].outcome, CellOutcome::Skipped { .. }));
    assert!(!r.all_completed());
    assert_eq!(r.cells[0].edges.len(), 4);
}
