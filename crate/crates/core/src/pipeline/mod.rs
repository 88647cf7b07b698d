//! Experiment orchestration: ingestion, repeated fit/generate/evaluate runs,
//! bias sweeps, DAG ablations, the protected-removal baseline and hidden
//! confounders.
//!
//! Every repeat `r` uses seed `config.seed + r` for data sampling, the
//! holdout split, bias injection, training, generation and the downstream
//! classifier, so a config fully determines its report.

pub mod adult;
mod output;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::{
    auroc, dp_metric, ftu_gaps, precision_recall, train_downstream, DownstreamConfig, EvalError, EvalReport,
    RunMetrics,
};
use crate::generator::{GeneratorError, Surrogate, SurrogatePolicy};
use crate::graph::{
    edges_to_remove, perturb_dag, CausalDag, EdgeRemovalSet, FairnessDefinition, FairnessSpec, GraphError,
    PerturbMode,
};
use crate::sem::{inject_direct_bias, SemError, SemSpec};
use crate::table::{Table, TableError};
use crate::training::{fit, TrainConfig, TrainError};

pub use output::{write_tidy_csv, TidyRow};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sem(#[from] SemError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    fn context(self, context: impl Into<String>) -> Self {
        PipelineError::Run {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn config_error<T>(msg: impl Into<String>) -> Result<T> {
    Err(PipelineError::Config(msg.into()))
}

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Numeric CSV with a header; columns must match the DAG nodes.
    Csv { path: PathBuf },
    /// The raw UCI census file, converted by [`adult::read_adult`].
    Adult { path: PathBuf },
    /// A SEM stored as JSON, sampled afresh for every repeat.
    SemFile { path: PathBuf, rows: usize },
    /// An inline SEM, sampled afresh for every repeat.
    Sem { sem: Box<SemSpec>, rows: usize },
}

/// A synthetic-data variant: no debiasing, a fairness definition's removal
/// set, or the protected-removal baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    Nd,
    Fair(FairnessDefinition),
    ProtectedRemoval,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Nd => f.write_str("nd"),
            Variant::Fair(d) => write!(f, "{d}"),
            Variant::ProtectedRemoval => f.write_str("pr"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "nd" => Ok(Variant::Nd),
            "pr" => Ok(Variant::ProtectedRemoval),
            other => other.parse().map(Variant::Fair),
        }
    }
}

impl TryFrom<String> for Variant {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub modes: Vec<PerturbMode>,
    /// Perturb 1..=max_edges edges.
    pub max_edges: usize,
    /// Perturbation seeds 0..seeds per (mode, count).
    pub seeds: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            modes: vec![PerturbMode::Remove, PerturbMode::Add, PerturbMode::Reverse],
            max_edges: 3,
            seeds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    /// Neighbour rank of the k-NN precision/recall estimator.
    pub k: usize,
    /// Rows of each table used for precision/recall.
    pub max_rows: usize,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self { k: 5, max_rows: 2000 }
    }
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Nd, Variant::Fair(FairnessDefinition::Ftu), Variant::Fair(FairnessDefinition::Dp)]
}

fn default_policy() -> SurrogatePolicy {
    SurrogatePolicy::uniform(Surrogate::MarginalSample)
}

fn default_name() -> String {
    "experiment".into()
}

fn default_repeats() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub data: DataSource,
    /// Graph file; SEM sources default to the SEM's own graph.
    #[serde(default)]
    pub dag: Option<PathBuf>,
    pub protected: String,
    pub target: String,
    /// Protected value of the group whose positives bias injection flips.
    #[serde(default)]
    pub disadvantaged: f64,
    #[serde(default)]
    pub explanatory: Option<BTreeSet<String>>,
    #[serde(default)]
    pub proxies: Option<BTreeSet<String>>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_policy")]
    pub surrogate: SurrogatePolicy,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub downstream: DownstreamConfig,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    /// Held-out rows of original data; default 2000 for tables of at least
    /// 10 000 rows, otherwise 20%.
    #[serde(default)]
    pub holdout: Option<usize>,
    /// Direct-bias probability injected into the training split.
    #[serde(default)]
    pub bias: Option<f64>,
    #[serde(default)]
    pub betas: Vec<f64>,
    #[serde(default)]
    pub ablation: AblationConfig,
    /// Columns removed from data and graph before anything else.
    #[serde(default)]
    pub drop_columns: Vec<String>,
    #[serde(default)]
    pub quality: QualityConfig,
    /// Synthetic rows per variant; default is the training split size.
    #[serde(default)]
    pub synthetic_rows: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(data: DataSource, protected: &str, target: &str) -> Self {
        Self {
            name: default_name(),
            data,
            dag: None,
            protected: protected.into(),
            target: target.into(),
            disadvantaged: 0.0,
            explanatory: None,
            proxies: None,
            variants: default_variants(),
            surrogate: default_policy(),
            train: TrainConfig::default(),
            downstream: DownstreamConfig::default(),
            repeats: 1,
            seed: 0,
            holdout: None,
            bias: None,
            betas: Vec::new(),
            ablation: AblationConfig::default(),
            drop_columns: Vec::new(),
            quality: QualityConfig::default(),
            synthetic_rows: None,
            output_dir: None,
        }
    }

    /// Reads a JSON config; relative paths inside it are taken relative to
    /// the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut config.data {
            DataSource::Csv { path } | DataSource::Adult { path } | DataSource::SemFile { path, .. } => rebase(path),
            DataSource::Sem { .. } => {}
        }
        if let Some(dag) = &mut config.dag {
            rebase(dag);
        }
        Ok(config)
    }

    /// SHA-256 over the config as JSON, with the output directory left out.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return config_error("repeats must be >= 1");
        }
        if self.variants.is_empty() {
            return config_error("no variants requested");
        }
        for b in self.betas.iter().chain(&self.bias) {
            if !(0.0..=1.0).contains(b) {
                return config_error(format!("bias probability {b} outside [0, 1]"));
            }
        }
        if self.quality.k == 0 || self.quality.max_rows <= self.quality.k {
            return config_error("quality.max_rows must exceed quality.k >= 1");
        }
        let referenced = self.referenced();
        if let Some(c) = self.drop_columns.iter().find(|c| referenced.contains(c.as_str())) {
            return config_error(format!("dropped column `{c}` is referenced by the fairness settings"));
        }
        if let DataSource::Sem { rows: 0, .. } | DataSource::SemFile { rows: 0, .. } = self.data {
            return config_error("SEM sources need rows >= 1");
        }
        self.train.validate()?;
        Ok(())
    }

    fn referenced(&self) -> BTreeSet<&str> {
        let mut out: BTreeSet<&str> = [self.protected.as_str(), self.target.as_str()].into();
        out.extend(self.explanatory.iter().flatten().map(String::as_str));
        out.extend(self.proxies.iter().flatten().map(String::as_str));
        out
    }

    /// The fairness spec behind a debiasing variant.
    pub fn spec_for(&self, definition: FairnessDefinition) -> Result<FairnessSpec> {
        let mut spec = FairnessSpec::new(definition, &self.protected, &self.target);
        if definition.needs_explanatory() {
            match &self.explanatory {
                Some(r) => spec.explanatory = Some(r.clone()),
                None => return config_error(format!("variant {definition} needs `explanatory`")),
            }
        }
        if definition.needs_proxies() {
            match &self.proxies {
                Some(p) => spec.proxies = Some(p.clone()),
                None => return config_error(format!("variant {definition} needs `proxies`")),
            }
        }
        Ok(spec)
    }
}

/// Reads a numeric CSV typed by `schema`.
pub fn ingest(path: impl AsRef<Path>, schema: &[crate::graph::NodeSpec]) -> Result<Table> {
    let path = path.as_ref();
    Table::load_csv(path, schema).map_err(|e| PipelineError::from(e).context(format!("reading {}", path.display())))
}

/// Data and graph after loading, before any per-repeat randomness.
struct Prepared {
    dag: CausalDag,
    /// Fixed table for file sources; `None` for SEM sources.
    table: Option<Table>,
    sem: Option<SemSpec>,
    rows: usize,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let (sem, rows) = match &config.data {
        DataSource::Sem { sem, rows } => (Some((**sem).clone()), *rows),
        DataSource::SemFile { path, rows } => (
            Some(SemSpec::load(path).map_err(|e| PipelineError::from(e).context(format!("reading {}", path.display())))?),
            *rows,
        ),
        _ => (None, 0),
    };
    let dag = match (&config.dag, &sem) {
        (Some(path), _) => {
            CausalDag::load(path).map_err(|e| PipelineError::from(e).context(format!("reading {}", path.display())))?
        }
        (None, Some(sem)) => sem.dag().clone(),
        (None, None) => return config_error("a `dag` file is required for file data sources"),
    };
    let table = match &config.data {
        DataSource::Csv { path } => Some(ingest(path, dag.nodes())?),
        DataSource::Adult { path } => Some(
            adult::load_adult(path)
                .map_err(|e| PipelineError::from(e).context(format!("reading {}", path.display())))?
                .aligned_to(&dag)?,
        ),
        _ => None,
    };
    let mut sem = sem;
    if let Some(s) = &sem {
        if config.dag.is_some() {
            let names: BTreeSet<&str> = s.dag().nodes().iter().map(|n| n.name.as_str()).collect();
            let graph: BTreeSet<&str> = dag.nodes().iter().map(|n| n.name.as_str()).collect();
            if names != graph {
                return config_error("graph nodes differ from the SEM's variables");
            }
        }
    }

    let dropped = &config.drop_columns;
    let dag = if dropped.is_empty() { dag } else { dag.without_nodes(dropped)? };
    let table = match table {
        Some(t) if !dropped.is_empty() => Some(t.drop_columns(dropped)?),
        t => t,
    };
    if !dropped.is_empty() {
        sem = sem.map(|s| s.without_nodes(dropped)).transpose()?;
    }
    for name in config.referenced() {
        if !dag.contains(name) {
            return config_error(format!("column `{name}` is not in the graph"));
        }
    }
    for v in &config.variants {
        if let Variant::Fair(d) = v {
            config.spec_for(*d)?.validate(&dag)?;
        }
    }
    let rows = table.as_ref().map_or(rows, Table::nrows);
    Ok(Prepared { dag, table, sem, rows })
}

fn holdout_size(config: &ExperimentConfig, rows: usize) -> Result<usize> {
    let h = config
        .holdout
        .unwrap_or(if rows >= 10_000 { 2000 } else { (rows as f64 * 0.2).round() as usize });
    if h < 2 || h + 2 > rows {
        return config_error(format!("holdout of {h} rows does not fit {rows} rows"));
    }
    Ok(h)
}

/// Downstream and quality metrics of one synthetic table, measured on
/// held-out original data.
pub fn evaluate_synthetic(
    synthetic: &Table,
    eval: &Table,
    protected: &str,
    target: &str,
    downstream: &DownstreamConfig,
    quality: &QualityConfig,
    seed: u64,
) -> Result<RunMetrics> {
    let clf = train_downstream(synthetic, target, downstream, seed)?;
    let gaps = ftu_gaps(&clf, eval, protected)?;
    let first = |t: &Table| -> Table {
        let rows: Vec<usize> = (0..t.nrows().min(quality.max_rows)).collect();
        t.select_rows(&rows)
    };
    let real_q = first(&eval.select_columns(&synthetic.names().collect::<Vec<_>>())?);
    let (precision, recall) = precision_recall(&real_q, &first(synthetic), quality.k)?;
    Ok(RunMetrics {
        seed,
        precision,
        recall,
        auroc: auroc(&clf, eval, target)?,
        ftu: gaps.mean().unwrap_or(0.0),
        ftu_max: gaps.iter().copied().fold(0.0, f64::max),
        dp: dp_metric(&clf, eval, protected, 0.5)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub variant: Variant,
    pub removed: EdgeRemovalSet,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub repeat: usize,
    pub seed: u64,
    pub train_rows: usize,
    pub eval_rows: usize,
    /// Digest of the model shared by all debiasing variants of this repeat.
    pub model_sha256: String,
    /// Digest of the separately trained protected-removal model, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pr_model_sha256: Option<String>,
    pub variants: Vec<VariantRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub fingerprint: String,
    pub bias: Option<f64>,
    pub dag_edges: usize,
    pub reports: Vec<EvalReport>,
    pub repeats: Vec<RepeatRecord>,
}

impl ExperimentReport {
    pub fn report(&self, variant: Variant) -> Option<&EvalReport> {
        let name = variant.to_string();
        self.reports.iter().find(|r| r.variant == name)
    }

    pub fn tidy_rows(&self, cell: &str) -> Vec<TidyRow> {
        let mut rows = Vec::new();
        for rep in &self.repeats {
            for v in &rep.variants {
                let m = &v.metrics;
                for (metric, value) in [
                    ("precision", m.precision),
                    ("recall", m.recall),
                    ("auroc", m.auroc),
                    ("ftu", m.ftu),
                    ("ftu_max", m.ftu_max),
                    ("dp", m.dp),
                ] {
                    rows.push(TidyRow {
                        cell: cell.to_string(),
                        beta: self.bias,
                        repeat: rep.repeat,
                        seed: rep.seed,
                        variant: v.variant.to_string(),
                        metric: metric.to_string(),
                        value,
                    });
                }
            }
        }
        rows
    }
}

/// Held-out evaluation rows and (possibly biased) training rows of the
/// repeat seeded by `seed`.
fn split_repeat(config: &ExperimentConfig, prepared: &Prepared, seed: u64) -> Result<(Table, Table)> {
    let full = match (&prepared.table, &prepared.sem) {
        (Some(t), _) => t.clone(),
        (None, Some(sem)) => sem.sample(prepared.rows, seed)?,
        (None, None) => unreachable!("prepare yields a table or a SEM"),
    };
    let full = full.aligned_to(&prepared.dag)?;
    let h = holdout_size(config, full.nrows())?;
    let mut order: Vec<usize> = (0..full.nrows()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(seed);
    split_rng.set_stream(2);
    order.shuffle(&mut split_rng);
    let eval = full.select_rows(&order[..h]);
    let mut train = full.select_rows(&order[h..]);
    if let Some(beta) = config.bias {
        train = inject_direct_bias(&train, &config.protected, &config.target, config.disadvantaged, beta, seed)?;
    }
    Ok((train, eval))
}

/// Graph and data split of one repeat, as `run_experiment` sees them.
#[derive(Debug, Clone)]
pub struct RepeatData {
    pub seed: u64,
    pub dag: CausalDag,
    pub train: Table,
    pub eval: Table,
}

/// Loads `config`'s data and returns the split of repeat `repeat`.
pub fn repeat_data(config: &ExperimentConfig, repeat: usize) -> Result<RepeatData> {
    let prepared = prepare(config)?;
    let seed = config.seed.wrapping_add(repeat as u64);
    let (train, eval) = split_repeat(config, &prepared, seed)?;
    Ok(RepeatData { seed, dag: prepared.dag, train, eval })
}

fn run_repeat(
    config: &ExperimentConfig,
    prepared: &Prepared,
    dag: &CausalDag,
    repeat: usize,
    dir: Option<&Path>,
) -> Result<RepeatRecord> {
    let seed = config.seed.wrapping_add(repeat as u64);
    let (train, eval) = split_repeat(config, prepared, seed)?;

    let train_cfg = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let n_syn = config.synthetic_rows.unwrap_or(train.nrows());
    let gen_seed = seed.wrapping_add(1_000_003);
    let mut variants = Vec::new();
    let mut model_sha256 = String::new();
    let mut pr_model_sha256 = None;

    let debiasing: Vec<Variant> = config
        .variants
        .iter()
        .copied()
        .filter(|v| *v != Variant::ProtectedRemoval)
        .collect();
    if !debiasing.is_empty() {
        let (model, log) = fit(&train, dag, &train_cfg)?;
        model_sha256 = model.digest()?;
        if let Some(dir) = dir {
            model.save(dir.join("model.decaf"))?;
            log.save_jsonl(dir.join("train-log.jsonl"))?;
        }
        for variant in debiasing {
            let removed = match variant {
                Variant::Fair(d) => edges_to_remove(dag, &config.spec_for(d)?)?,
                _ => EdgeRemovalSet::new(),
            };
            let synth = model.generate(n_syn, &removed, &config.surrogate, gen_seed)?;
            let metrics = evaluate_synthetic(
                &synth,
                &eval,
                &config.protected,
                &config.target,
                &config.downstream,
                &config.quality,
                seed,
            )
            .map_err(|e| e.context(format!("variant {variant}")))?;
            if let Some(dir) = dir {
                synth.save_csv(dir.join(format!("synthetic-{variant}.csv")))?;
            }
            variants.push(VariantRun {
                variant,
                removed,
                metrics,
            });
        }
    }

    if config.variants.contains(&Variant::ProtectedRemoval) {
        let dropped = [config.protected.clone()];
        let pr_dag = dag.without_nodes(&dropped)?;
        let pr_train = train.drop_columns(&dropped)?;
        let (model, log) = fit(&pr_train, &pr_dag, &train_cfg)?;
        pr_model_sha256 = Some(model.digest()?);
        let synth = model.generate(n_syn, &EdgeRemovalSet::new(), &config.surrogate, gen_seed)?;
        let metrics = evaluate_synthetic(
            &synth,
            &eval,
            &config.protected,
            &config.target,
            &config.downstream,
            &config.quality,
            seed,
        )
        .map_err(|e| e.context("variant pr"))?;
        if let Some(dir) = dir {
            model.save(dir.join("model-pr.decaf"))?;
            log.save_jsonl(dir.join("train-log-pr.jsonl"))?;
            synth.save_csv(dir.join("synthetic-pr.csv"))?;
        }
        variants.push(VariantRun {
            variant: Variant::ProtectedRemoval,
            removed: EdgeRemovalSet::new(),
            metrics,
        });
    }

    Ok(RepeatRecord {
        repeat,
        seed,
        train_rows: train.nrows(),
        eval_rows: eval.nrows(),
        model_sha256,
        pr_model_sha256,
        variants,
    })
}

fn run_prepared(
    config: &ExperimentConfig,
    prepared: &Prepared,
    dag: &CausalDag,
    dir: Option<&Path>,
) -> Result<ExperimentReport> {
    let repeats = (0..config.repeats)
        .into_par_iter()
        .map(|r| {
            let sub = dir.map(|d| d.join(format!("repeat-{r}")));
            if let Some(sub) = &sub {
                std::fs::create_dir_all(sub)?;
            }
            run_repeat(config, prepared, dag, r, sub.as_deref()).map_err(|e| e.context(format!("repeat {r}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let fingerprint = config.fingerprint();
    let mut reports = Vec::new();
    for variant in &config.variants {
        let runs: Vec<RunMetrics> = repeats
            .iter()
            .flat_map(|r| r.variants.iter().filter(|v| v.variant == *variant).map(|v| v.metrics))
            .collect();
        reports.push(EvalReport::aggregate(&variant.to_string(), &fingerprint, runs));
    }
    let report = ExperimentReport {
        name: config.name.clone(),
        fingerprint,
        bias: config.bias,
        dag_edges: dag.edge_count(),
        reports,
        repeats,
    };
    if let Some(dir) = dir {
        output::write_json(dir.join("config.json"), config)?;
        output::write_json(dir.join("report.json"), &report)?;
        write_tidy_csv(dir.join("tidy-metrics.csv"), &report.tidy_rows(&config.name))?;
    }
    Ok(report)
}

fn output_dir(config: &ExperimentConfig) -> Result<Option<PathBuf>> {
    match &config.output_dir {
        Some(d) => {
            let dir = d.join(&config.name);
            std::fs::create_dir_all(&dir)?;
            Ok(Some(dir))
        }
        None => Ok(None),
    }
}

/// Runs every repeat of `config` and aggregates one report per variant.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let prepared = prepare(config)?;
    let dir = output_dir(config)?;
    run_prepared(config, &prepared, &prepared.dag, dir.as_deref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub fingerprint: String,
    pub cells: Vec<ExperimentReport>,
}

impl SweepReport {
    pub fn cell(&self, beta: f64) -> Option<&ExperimentReport> {
        self.cells.iter().find(|c| c.bias == Some(beta))
    }

    pub fn tidy_rows(&self) -> Vec<TidyRow> {
        self.cells
            .iter()
            .flat_map(|c| c.tidy_rows(&format!("beta-{}", c.bias.unwrap_or(0.0))))
            .collect()
    }
}

fn sweep_prepared(config: &ExperimentConfig, prepared: &Prepared, dir: Option<&Path>) -> Result<SweepReport> {
    if config.betas.is_empty() {
        return config_error("a sweep needs a non-empty `betas` list");
    }
    let mut cells = Vec::with_capacity(config.betas.len());
    for &beta in &config.betas {
        let cell = ExperimentConfig {
            bias: Some(beta),
            name: format!("beta-{beta}"),
            ..config.clone()
        };
        let sub = dir.map(|d| d.join(&cell.name));
        if let Some(sub) = &sub {
            std::fs::create_dir_all(sub)?;
        }
        cells.push(
            run_prepared(&cell, prepared, &prepared.dag, sub.as_deref())
                .map_err(|e| e.context(format!("sweep cell beta = {beta}")))?,
        );
    }
    let report = SweepReport {
        name: config.name.clone(),
        fingerprint: config.fingerprint(),
        cells,
    };
    if let Some(dir) = dir {
        output::write_json(dir.join("config.json"), config)?;
        output::write_json(dir.join("report.json"), &report)?;
        write_tidy_csv(dir.join("tidy-metrics.csv"), &report.tidy_rows())?;
    }
    Ok(report)
}

/// Runs the experiment once per bias probability in `config.betas`.
pub fn sweep_bias(config: &ExperimentConfig) -> Result<SweepReport> {
    let prepared = prepare(config)?;
    let dir = output_dir(config)?;
    sweep_prepared(config, &prepared, dir.as_deref())
}

/// Drops `config.drop_columns` from data and graph, then sweeps.
pub fn run_hidden_confounder(config: &ExperimentConfig) -> Result<SweepReport> {
    sweep_bias(config)
}

/// Protected-removal baseline: the protected column is dropped before
/// fitting and downstream training.
pub fn run_baseline_pr(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let pr = ExperimentConfig {
        variants: vec![Variant::ProtectedRemoval],
        ..config.clone()
    };
    let report = run_experiment(&pr)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Completed { report: ExperimentReport },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub mode: PerturbMode,
    pub count: usize,
    pub perturbation_seed: u64,
    pub edges: Vec<(String, String)>,
    #[serde(flatten)]
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub name: String,
    pub fingerprint: String,
    pub baseline: ExperimentReport,
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn all_completed(&self) -> bool {
        self.cells.iter().all(|c| matches!(c.outcome, CellOutcome::Completed { .. }))
    }

    pub fn tidy_rows(&self) -> Vec<TidyRow> {
        let mut rows = self.baseline.tidy_rows("baseline");
        for c in &self.cells {
            if let CellOutcome::Completed { report } = &c.outcome {
                rows.extend(report.tidy_rows(&format!("{}-{}-seed{}", c.mode, c.count, c.perturbation_seed)));
            }
        }
        rows
    }

    /// One report per (mode, count) for `variant`, pooling the runs of every
    /// completed perturbation seed at that level.
    pub fn by_level(&self, variant: Variant) -> Vec<(PerturbMode, usize, EvalReport)> {
        let mut levels: Vec<(PerturbMode, usize, Vec<RunMetrics>)> = Vec::new();
        for c in &self.cells {
            let CellOutcome::Completed { report } = &c.outcome else { continue };
            let Some(r) = report.report(variant) else { continue };
            match levels.iter_mut().find(|(m, n, _)| *m == c.mode && *n == c.count) {
                Some((_, _, runs)) => runs.extend(r.runs.iter().copied()),
                None => levels.push((c.mode, c.count, r.runs.clone())),
            }
        }
        levels
            .into_iter()
            .map(|(m, n, runs)| (m, n, EvalReport::aggregate(&variant.to_string(), &self.fingerprint, runs)))
            .collect()
    }
}

/// Trains on randomly perturbed graphs (data still come from the original
/// source) and evaluates every variant per cell.
pub fn run_ablation(config: &ExperimentConfig) -> Result<AblationReport> {
    let prepared = prepare(config)?;
    let dir = output_dir(config)?;
    let guard = FairnessSpec::new(FairnessDefinition::Ftu, &config.protected, &config.target);
    let baseline_dir = dir.as_ref().map(|d| d.join("baseline"));
    if let Some(d) = &baseline_dir {
        std::fs::create_dir_all(d)?;
    }
    let baseline = run_prepared(config, &prepared, &prepared.dag, baseline_dir.as_deref())
        .map_err(|e| e.context("unperturbed baseline"))?;

    let mut cells = Vec::new();
    for &mode in &config.ablation.modes {
        for count in 1..=config.ablation.max_edges {
            for pseed in 0..config.ablation.seeds {
                let label = format!("{mode}-{count}-seed{pseed}");
                let perturbed = match perturb_dag(&prepared.dag, mode, count, &guard, pseed) {
                    Ok(g) => g,
                    Err(GraphError::Infeasible(reason)) => {
                        cells.push(AblationCell {
                            mode,
                            count,
                            perturbation_seed: pseed,
                            edges: Vec::new(),
                            outcome: CellOutcome::Skipped { reason },
                        });
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                let sub = dir.as_ref().map(|d| d.join(&label));
                if let Some(sub) = &sub {
                    std::fs::create_dir_all(sub)?;
                    perturbed.save(sub.join("dag.json"))?;
                }
                let cell_cfg = ExperimentConfig {
                    name: label.clone(),
                    ..config.clone()
                };
                let outcome = match run_prepared(&cell_cfg, &prepared, &perturbed, sub.as_deref()) {
                    Ok(report) => CellOutcome::Completed { report },
                    Err(e) => CellOutcome::Skipped {
                        reason: format!("{label}: {e}"),
                    },
                };
                cells.push(AblationCell {
                    mode,
                    count,
                    perturbation_seed: pseed,
                    edges: perturbed.edge_names(),
                    outcome,
                });
            }
        }
    }
    let report = AblationReport {
        name: config.name.clone(),
        fingerprint: config.fingerprint(),
        baseline,
        cells,
    };
    if let Some(dir) = &dir {
        output::write_json(dir.join("config.json"), config)?;
        output::write_json(dir.join("report.json"), &report)?;
        write_tidy_csv(dir.join("tidy-metrics.csv"), &report.tidy_rows())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
