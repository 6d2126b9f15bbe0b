use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zachvit::data::DatasetSplit;
use zachvit::harness::{
    builtin_grid, dataset_id, expand_plan, parse_score_table, plot_csv, rank_report, resolve_test_path, run_cells,
    write_outputs, ExperimentPlan, PlanEntry, ProtocolOverrides, GRID_NAMES, PLAN_SCHEMA_VERSION,
};
use zachvit::selftest::{run_selftest, SelfTestOptions};
use zachvit::tensor::Fault;
use zachvit::train::{run_protocol_with, PROTOCOL_SEEDS};
use zachvit::{Error, ModelConfig};

#[derive(Parser)]
#[command(name = "zachvit", version, about = "Train, sweep and rank compact permutation-invariant vision transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the few-shot protocol for one (config, dataset, seed).
    Train(TrainArgs),
    /// Run every (config, dataset, seed) cell of a plan or built-in grid.
    Sweep(SweepArgs),
    /// Mean ranks, Friedman test and Nemenyi groups for a score table.
    Rank(RankArgs),
    /// Run the built-in invariant suites.
    Selftest(SelftestArgs),
}

#[derive(Args, Clone, Default)]
struct ProtocolFlags {
    /// Training images per class.
    #[arg(long)]
    shots: Option<usize>,
    /// Minibatch size
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Passes over the few-shot sample
    #[arg(long)]
    epochs: Option<usize>,
}

impl ProtocolFlags {
    fn overrides(&self) -> ProtocolOverrides {
        ProtocolOverrides {
            shots_per_class: self.shots,
            batch_size: self.batch,
            learning_rate: self.lr,
            epochs: self.epochs,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training split (.zvds).
    #[arg(long)]
    dataset: PathBuf,
    /// Test split; defaults to the sibling file with "train" replaced by "test".
    #[arg(long)]
    test: Option<PathBuf>,
    /// Model config JSON; defaults to the baseline for the dataset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    seed: u64,
    #[command(flatten)]
    protocol: ProtocolFlags,
    /// Output directory.
    #[arg(long, env = "ZAVIT_OUT", default_value = "results")]
    out: PathBuf,
    /// No per-epoch progress.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment plan JSON.
    #[arg(long, conflicts_with_all = ["grid", "dataset"])]
    plan: Option<PathBuf>,
    /// Built-in grid: hparam-table3, component-table4 or pooling-table5.
    #[arg(long, requires = "dataset")]
    grid: Option<String>,
    /// Training split(s) for --grid.
    #[arg(long, num_args = 1..)]
    dataset: Vec<PathBuf>,
    /// Seeds for --grid.
    #[arg(long, value_delimiter = ',', default_values_t = PROTOCOL_SEEDS)]
    seeds: Vec<u64>,
    #[command(flatten)]
    protocol: ProtocolFlags,
    /// Worker threads (0 = one per core); overrides the plan's value.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides the plan's value.
    #[arg(long, env = "ZAVIT_OUT")]
    out: Option<PathBuf>,
    /// List the cells without running them.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct RankArgs {
    /// Score table CSV (`model,dataset[,metric],score` or a sweep summary).
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Model whose advantage over the baselines is reported.
    #[arg(long, requires = "baselines")]
    subject: Option<String>,
    #[arg(long, value_delimiter = ',')]
    baselines: Vec<String>,
    #[arg(long, env = "ZAVIT_OUT", default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    /// Also validate this dataset container.
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

enum Failure {
    /// Bad input: exit 2.
    Usage(String),
    /// Ran, but something failed: exit 1.
    Failed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } | Error::Dimension { .. } | Error::UndefinedMetric(_) => Failure::Failed(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Rank(a) => rank(a),
        Command::Selftest(a) => selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_split(path: &Path) -> Result<DatasetSplit, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("dataset file {} not found", path.display())));
    }
    Ok(DatasetSplit::load(path)?)
}

fn default_config(split: &DatasetSplit) -> ModelConfig {
    ModelConfig {
        channels: split.channels(),
        ..ModelConfig::baseline(split.class_count())
    }
}

fn test_path_for(train: &Path, explicit: Option<&Path>) -> PathBuf {
    resolve_test_path(train, explicit).unwrap_or_else(|| {
        eprintln!(
            "warning: no test split found next to {}; evaluating on the training file",
            train.display()
        );
        train.to_path_buf()
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let train_split = load_split(&a.dataset)?;
    let test_path = test_path_for(&a.dataset, a.test.as_deref());
    let test_split = load_split(&test_path)?;
    let config = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            ModelConfig::from_json(&text)?
        }
        None => default_config(&train_split),
    };
    let protocol = a.protocol.overrides().protocol(a.seed);
    let dataset = dataset_id(&a.dataset);
    let quiet = a.quiet;
    let record = run_protocol_with(&train_split, &test_split, &config, &protocol, &dataset, |epoch, loss| {
        if !quiet {
            eprintln!("epoch {:>3}/{}  loss {loss:.6}", epoch + 1, protocol.epochs);
        }
    })?;
    let path = a.out.join(record.file_name());
    write_file(&path, &record.to_json())?;
    println!(
        "{} {} seed {}: test {} {:.4}, train {} {:.4}, {} params, {:.1}s -> {}",
        record.config_id,
        record.dataset,
        record.seed,
        record.test.primary_metric,
        record.test.primary,
        record.train.primary_metric,
        record.train.primary,
        record.param_count,
        record.wall_seconds,
        path.display()
    );
    Ok(())
}

fn grid_plan(a: &SweepArgs, grid: &str) -> Result<ExperimentPlan, Failure> {
    let mut entries = Vec::new();
    for path in &a.dataset {
        let split = load_split(path)?;
        for variant in builtin_grid(grid, split.class_count(), split.channels())? {
            entries.push(PlanEntry {
                dataset: path.clone(),
                test_dataset: None,
                config: variant.config,
                seeds: a.seeds.clone(),
                overrides: a.protocol.overrides(),
                label: Some(variant.name),
            });
        }
    }
    Ok(ExperimentPlan {
        schema_version: PLAN_SCHEMA_VERSION,
        entries,
        out_dir: PathBuf::from("results"),
        workers: 0,
    })
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let mut plan = match (&a.plan, &a.grid) {
        (Some(p), _) => ExperimentPlan::load(p)?,
        (None, Some(g)) => grid_plan(&a, g)?,
        (None, None) => {
            return Err(Failure::Usage(format!(
                "give --plan FILE or --grid NAME --dataset FILE...; grids: {}",
                GRID_NAMES.join(", ")
            )))
        }
    };
    if let Some(w) = a.workers {
        plan.workers = w;
    }
    if let Some(o) = &a.out {
        plan.out_dir = o.clone();
    }
    for e in &mut plan.entries {
        if e.test_dataset.is_none() {
            e.test_dataset = Some(test_path_for(&e.dataset, None));
        }
    }
    plan.validate()?;
    let cells = expand_plan(&plan)?;
    if a.dry_run {
        for c in &cells {
            println!(
                "{}  {}  {:<22} {}",
                c.key.config_id,
                c.key.dataset,
                c.label.as_deref().unwrap_or("-"),
                c.key.seed
            );
        }
        println!("{} cells", cells.len());
        return Ok(());
    }
    write_file(&plan.out_dir.join("plan.json"), &plan.to_json())?;
    let outcome = run_cells(&cells, plan.workers, |key, r| match r {
        Ok(rec) => eprintln!("done {key}: {} {:.4}", rec.test.primary_metric, rec.test.primary),
        Err(e) => eprintln!("FAILED {key}: {e}"),
    })?;
    let rows = write_outputs(&plan.out_dir, &outcome)?;
    for r in &rows {
        println!(
            "{} {} {} {:.4} ± {:.4} (n={})",
            r.config_id, r.dataset, r.metric, r.mean, r.std, r.n_seeds
        );
    }
    println!(
        "{} runs, {} failed, summary in {}",
        outcome.records.len(),
        outcome.failures.len(),
        plan.out_dir.join("summary.csv").display()
    );
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Failed(format!("{} of {} cells failed", outcome.failures.len(), cells.len())))
    }
}

fn rank(a: RankArgs) -> Result<(), Failure> {
    if !a.scores.is_file() {
        return Err(Failure::Usage(format!("score table {} not found", a.scores.display())));
    }
    let text = std::fs::read_to_string(&a.scores).map_err(|e| Error::io(&a.scores, e))?;
    let table = parse_score_table(&text)?;
    let baselines: Vec<&str> = a.baselines.iter().map(String::as_str).collect();
    let advantage = a.subject.as_deref().map(|s| (s, baselines.as_slice()));
    let report = rank_report(&table, a.alpha, advantage)?;
    write_file(
        &a.out.join("rank_report.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    write_file(&a.out.join("rank_plot.csv"), &plot_csv(&report))?;

    let mut order: Vec<usize> = (0..report.models.len()).collect();
    order.sort_by(|&x, &y| report.mean_ranks[x].total_cmp(&report.mean_ranks[y]));
    for m in order {
        println!(
            "{:>6.2}  {}  (rank 1 on {} of {})",
            report.mean_ranks[m],
            report.models[m],
            report.first_places[m],
            report.datasets.len()
        );
    }
    if let Some(f) = &report.friedman {
        println!("friedman chi2 = {:.4}, df = {}, p = {:.4e}", f.statistic, f.df, f.p_value);
    }
    println!("critical difference (alpha {}) = {:.4}", report.alpha, report.critical_difference);
    for g in &report.groups {
        println!("group: {}", g.join(", "));
    }
    if let Some(adv) = &report.advantage {
        for (d, v) in &adv.per_dataset {
            println!("advantage of {} on {d}: {v:+.5}", adv.subject);
        }
    }
    Ok(())
}

fn selftest(a: SelftestArgs) -> Result<(), Failure> {
    let fault = match a.inject_fault.as_deref() {
        None => None,
        Some("softmax") => Some(Fault::SoftmaxBackward),
        Some(other) => return Err(Failure::Usage(format!("unknown fault {other:?}"))),
    };
    let report = run_selftest(&SelfTestOptions { file: a.file, fault });
    print!("{}", report.render());
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Failed("self-test failures".into()))
    }
}
