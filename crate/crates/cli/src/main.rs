//! `decaf`: fit causal generators, produce debiased synthetic data and run
//! the experiment grids.
//!
//! Experiment subcommands take an optional JSON config; flags override its
//! fields. Outputs go under `--output-dir`, else the config's `output_dir`,
//! else `$DECAF_OUTPUT_ROOT`, else `./runs`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use decaf::eval::EvalReport;
use decaf::generator::{Surrogate, SurrogatePolicy};
use decaf::graph::{edges_to_remove, CausalDag, EdgeRemovalSet, FairnessDefinition, FairnessSpec, PerturbMode};
use decaf::pipeline::{
    evaluate_synthetic, repeat_data, run_ablation, run_baseline_pr, run_experiment, run_hidden_confounder, sweep_bias,
    AblationReport, CellOutcome, DataSource, ExperimentConfig, ExperimentReport, QualityConfig, SweepReport, Variant,
};
use decaf::table::Table;
use decaf::training::fit;
use decaf::{DownstreamConfig, GeneratorModel};

const OUTPUT_ROOT_ENV: &str = "DECAF_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "decaf", version, about = "Causally-aware fair synthetic tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a generator on the training split of one repeat.
    Fit {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Which repeat's split to fit on.
        #[arg(long, default_value_t = 0)]
        repeat: usize,
    },
    /// Sample synthetic rows from a fitted model, optionally debiased.
    Generate(GenerateArgs),
    /// Score a synthetic table against held-out real data.
    Evaluate(EvaluateArgs),
    /// Run every repeat and variant of one experiment.
    Run(ExperimentArgs),
    /// Bias sweep over `--betas`.
    Sweep(ExperimentArgs),
    /// Graph-perturbation ablation.
    Ablate(ExperimentArgs),
    /// Protected-removal baseline.
    BaselinePr(ExperimentArgs),
    /// Drop `--drop-columns` from data and graph, then sweep.
    Confounder(ExperimentArgs),
    /// Print the edges a fairness definition removes from a graph.
    Edges(EdgesArgs),
}

fn parse_mode(s: &str) -> Result<PerturbMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "remove" => Ok(PerturbMode::Remove),
        "add" => Ok(PerturbMode::Add),
        "reverse" => Ok(PerturbMode::Reverse),
        other => Err(format!("unknown perturbation `{other}`")),
    }
}

#[derive(Args, Default)]
struct ExperimentArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    /// Numeric CSV data, typed by the graph.
    #[arg(long, group = "source")]
    csv: Option<PathBuf>,
    /// Raw UCI Adult file.
    #[arg(long, group = "source")]
    adult: Option<PathBuf>,
    /// SEM JSON to sample data from; needs `--rows`.
    #[arg(long, group = "source", requires = "rows")]
    sem: Option<PathBuf>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    dag: Option<PathBuf>,
    #[arg(long)]
    protected: Option<String>,
    #[arg(long)]
    target: Option<String>,
    /// Protected value that bias injection flips targets for.
    #[arg(long)]
    disadvantaged: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    explanatory: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    proxies: Option<Vec<String>>,
    /// Comma list of nd, pr, ftu, dp, cf, no_direct, no_indirect, no_unresolved, no_proxy.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    /// JSON surrogate policy file.
    #[arg(long, conflicts_with = "fixed_surrogate")]
    surrogate_policy: Option<PathBuf>,
    /// Feed this constant in place of every removed edge.
    #[arg(long)]
    fixed_surrogate: Option<f64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    holdout: Option<usize>,
    #[arg(long)]
    bias: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    drop_columns: Option<Vec<String>>,
    #[arg(long)]
    synthetic_rows: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    discriminator_steps: Option<usize>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    downstream_epochs: Option<usize>,
    /// Neighbours for precision/recall.
    #[arg(long)]
    k: Option<usize>,
    /// Rows per side used for precision/recall.
    #[arg(long)]
    quality_rows: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    modes: Option<Vec<PerturbMode>>,
    #[arg(long)]
    max_edges: Option<usize>,
    /// Perturbation seeds per ablation cell.
    #[arg(long)]
    ablation_seeds: Option<u64>,
    /// Output root; the run writes to `<root>/<name>`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let source = match (&self.csv, &self.adult, &self.sem) {
            (Some(p), _, _) => Some(DataSource::Csv { path: p.clone() }),
            (_, Some(p), _) => Some(DataSource::Adult { path: p.clone() }),
            (_, _, Some(p)) => Some(DataSource::SemFile {
                path: p.clone(),
                rows: self.rows.unwrap_or_default(),
            }),
            _ => None,
        };
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => {
                let (Some(data), Some(protected), Some(target)) = (source.clone(), &self.protected, &self.target)
                else {
                    bail!("without --config, a data source (--csv, --adult or --sem), --protected and --target are required");
                };
                ExperimentConfig::new(data, protected, target)
            }
        };
        if let Some(data) = source {
            c.data = data;
        }
        if let (Some(rows), DataSource::Sem { rows: r, .. } | DataSource::SemFile { rows: r, .. }) = (self.rows, &mut c.data) {
            *r = rows;
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone().into(); })*
            };
        }
        set!(
            name => name, protected => protected, target => target, disadvantaged => disadvantaged,
            variants => variants, repeats => repeats, seed => seed, betas => betas,
            drop_columns => drop_columns, epochs => train.epochs, batch_size => train.batch_size,
            learning_rate => train.learning_rate, discriminator_steps => train.discriminator_steps,
            hidden_layers => train.hidden_layers, downstream_epochs => downstream.max_epochs,
            k => quality.k, quality_rows => quality.max_rows, modes => ablation.modes,
            max_edges => ablation.max_edges, ablation_seeds => ablation.seeds,
        );
        if let Some(v) = self.holdout {
            c.holdout = Some(v);
        }
        if let Some(v) = self.bias {
            c.bias = Some(v);
        }
        if let Some(v) = self.synthetic_rows {
            c.synthetic_rows = Some(v);
        }
        if let Some(p) = &self.dag {
            c.dag = Some(p.clone());
        }
        if let Some(v) = &self.explanatory {
            c.explanatory = Some(v.iter().cloned().collect());
        }
        if let Some(v) = &self.proxies {
            c.proxies = Some(v.iter().cloned().collect());
        }
        if let Some(path) = &self.surrogate_policy {
            c.surrogate = read_policy(path)?;
        }
        if let Some(v) = self.fixed_surrogate {
            c.surrogate = SurrogatePolicy::uniform(Surrogate::FixedValue(v));
        }
        if let Some(dir) = &self.output_dir {
            c.output_dir = Some(dir.clone());
        } else if c.output_dir.is_none() {
            c.output_dir = Some(std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from));
        }
        c.validate()?;
        Ok(c)
    }
}

fn read_policy(path: &Path) -> Result<SurrogatePolicy> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Args)]
struct SpecArgs {
    #[arg(long)]
    protected: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long, value_delimiter = ',')]
    explanatory: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    proxies: Option<Vec<String>>,
}

impl SpecArgs {
    fn spec(&self, definition: FairnessDefinition) -> Result<FairnessSpec> {
        let (Some(a), Some(y)) = (&self.protected, &self.target) else {
            bail!("--protected and --target are required for `{definition}`");
        };
        let mut spec = FairnessSpec::new(definition, a, y);
        if let Some(r) = &self.explanatory {
            spec = spec.with_explanatory(r);
        }
        if let Some(p) = &self.proxies {
            spec = spec.with_proxies(p);
        }
        Ok(spec)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rows: usize,
    /// nd, or a fairness definition; `pr` needs a separately fitted model.
    #[arg(long, default_value = "nd")]
    variant: Variant,
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, conflicts_with = "fixed_surrogate")]
    surrogate_policy: Option<PathBuf>,
    #[arg(long)]
    fixed_surrogate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    synthetic: PathBuf,
    /// Held-out real rows, e.g. the `eval.csv` written by `fit`.
    #[arg(long)]
    eval: PathBuf,
    #[arg(long)]
    protected: String,
    #[arg(long)]
    target: String,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    quality_rows: Option<usize>,
    #[arg(long)]
    downstream_epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the metrics JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EdgesArgs {
    #[arg(long)]
    dag: PathBuf,
    #[arg(long)]
    definition: FairnessDefinition,
    #[command(flatten)]
    spec: SpecArgs,
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Fit { exp, repeat } => fit_command(&exp.config()?, repeat)?,
        Command::Generate(args) => generate_command(&args)?,
        Command::Evaluate(args) => evaluate_command(&args)?,
        Command::Run(exp) => print_experiment(&run_experiment(&exp.config()?)?),
        Command::BaselinePr(exp) => print_experiment(&run_baseline_pr(&exp.config()?)?),
        Command::Sweep(exp) => print_sweep(&sweep_bias(&exp.config()?)?),
        Command::Confounder(exp) => print_sweep(&run_hidden_confounder(&exp.config()?)?),
        Command::Ablate(exp) => return ablate_command(&exp.config()?),
        Command::Edges(args) => {
            let dag = CausalDag::load(&args.dag).with_context(|| format!("reading {}", args.dag.display()))?;
            let removed = edges_to_remove(&dag, &args.spec.spec(args.definition)?)?;
            println!("{}", serde_json::to_string_pretty(&removed)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.clone().unwrap_or_default().join(&config.name)
}

fn fit_command(config: &ExperimentConfig, repeat: usize) -> Result<()> {
    let data = repeat_data(config, repeat)?;
    let train_cfg = decaf::TrainConfig {
        seed: data.seed,
        ..config.train.clone()
    };
    let (model, log) = fit(&data.train, &data.dag, &train_cfg)?;
    let dir = run_dir(config).join(format!("fit-{repeat}"));
    std::fs::create_dir_all(&dir)?;
    model.save(dir.join("model.decaf"))?;
    log.save_jsonl(dir.join("train-log.jsonl"))?;
    data.dag.save(dir.join("dag.json"))?;
    data.train.save_csv(dir.join("train.csv"))?;
    data.eval.save_csv(dir.join("eval.csv"))?;
    println!("model {} sha256 {}", dir.join("model.decaf").display(), model.digest()?);
    println!("train rows {}, held-out rows {}", data.train.nrows(), data.eval.nrows());
    Ok(())
}

fn generate_command(args: &GenerateArgs) -> Result<()> {
    let model = GeneratorModel::load(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let removed = match args.variant {
        Variant::Nd => EdgeRemovalSet::new(),
        Variant::Fair(d) => edges_to_remove(model.dag(), &args.spec.spec(d)?)?,
        Variant::ProtectedRemoval => bail!("`pr` needs a model fitted without the protected column; generate `nd` from it"),
    };
    let policy = match (&args.surrogate_policy, args.fixed_surrogate) {
        (Some(path), _) => read_policy(path)?,
        (None, Some(v)) => SurrogatePolicy::uniform(Surrogate::FixedValue(v)),
        (None, None) => SurrogatePolicy::uniform(Surrogate::MarginalSample),
    };
    let synth = model.generate(args.rows, &removed, &policy, args.seed)?;
    synth.save_csv(&args.out)?;
    for (from, to) in removed.edges() {
        eprintln!("removed {from} -> {to}");
    }
    println!("wrote {} rows to {}", synth.nrows(), args.out.display());
    Ok(())
}

fn evaluate_command(args: &EvaluateArgs) -> Result<()> {
    let load = |p: &Path| Table::load_csv_inferred(p).with_context(|| format!("reading {}", p.display()));
    let (synth, eval) = (load(&args.synthetic)?, load(&args.eval)?);
    let mut downstream = DownstreamConfig::default();
    if let Some(e) = args.downstream_epochs {
        downstream.max_epochs = e;
    }
    let mut quality = QualityConfig::default();
    if let Some(k) = args.k {
        quality.k = k;
    }
    if let Some(r) = args.quality_rows {
        quality.max_rows = r;
    }
    let metrics = evaluate_synthetic(&synth, &eval, &args.protected, &args.target, &downstream, &quality, args.seed)?;
    let json = serde_json::to_string_pretty(&metrics)?;
    if let Some(out) = &args.out {
        std::fs::write(out, format!("{json}\n"))?;
    }
    println!("{json}");
    Ok(())
}

fn print_reports(heading: &str, reports: &[EvalReport]) {
    println!("{heading}");
    println!("  {:<14} {:>15} {:>15} {:>15} {:>15} {:>15}", "variant", "precision", "recall", "auroc", "ftu", "dp");
    for r in reports {
        let cell = |s: &decaf::eval::Summary| format!("{:.3} ± {:.3}", s.mean, s.std);
        println!(
            "  {:<14} {:>15} {:>15} {:>15} {:>15} {:>15}",
            r.variant,
            cell(&r.precision),
            cell(&r.recall),
            cell(&r.auroc),
            cell(&r.ftu),
            cell(&r.dp)
        );
    }
}

fn print_experiment(report: &ExperimentReport) {
    print_reports(&format!("{} ({} repeats)", report.name, report.repeats.len()), &report.reports);
}

fn print_sweep(sweep: &SweepReport) {
    for cell in &sweep.cells {
        print_reports(
            &format!("{} beta = {}", sweep.name, cell.bias.map_or("none".into(), |b| b.to_string())),
            &cell.reports,
        );
    }
}

fn ablate_command(config: &ExperimentConfig) -> Result<ExitCode> {
    let report: AblationReport = run_ablation(config)?;
    print_experiment(&report.baseline);
    let mut skipped = 0;
    for cell in &report.cells {
        let label = format!("{} {} seed {}", cell.mode, cell.count, cell.perturbation_seed);
        match &cell.outcome {
            CellOutcome::Completed { report } => print_reports(&label, &report.reports),
            CellOutcome::Skipped { reason } => {
                skipped += 1;
                println!("{label}: skipped ({reason})");
            }
        }
    }
    for variant in &config.variants {
        for (mode, count, pooled) in report.by_level(*variant) {
            print_reports(&format!("{variant} pooled over seeds: {mode} {count}"), std::slice::from_ref(&pooled));
        }
    }
    if skipped > 0 {
        eprintln!("{skipped} of {} ablation cells did not complete", report.cells.len());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}
