use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use promptscan::harness::experiment::SWEEP_SIZES;
use promptscan::harness::{self, ExperimentConfig};
use promptscan::pipeline::{Outcome, StrategyKind};
use promptscan::Error;

#[derive(Parser)]
#[command(
    name = "promptscan",
    version,
    about = "Parallel prompt-learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (optionally profiling the batch size first).
    Run(Overrides),
    /// Run the experiment once per batch size.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated batch sizes.
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_SIZES)]
        sizes: Vec<usize>,
    },
    /// Profile the delay curve and print the plateau batch size.
    Profile(Overrides),
    /// Validate a JSONL trace file and summarize it.
    Ingest { path: PathBuf },
    /// Summarize a run directory.
    Report { dir: PathBuf },
}

/// Flags override fields of the config file.
#[derive(Args)]
struct Overrides {
    /// JSON config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    duplication: Option<usize>,
    #[arg(long)]
    subgroups: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Synthetic corpus size (replaces any trace path).
    #[arg(long, conflicts_with = "traces")]
    n_tasks: Option<usize>,
    /// Train on offline traces (replaces any synthetic corpus).
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Enable batch-size profiling with default controller settings.
    #[arg(long)]
    controller: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut root = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str::<Value>(&text).map_err(|e| Error::json(path, e))?
            }
            None => json!({}),
        };
        let obj = root
            .as_object_mut()
            .ok_or_else(|| Error::Config("config file must hold a JSON object".into()))?;

        let strategy = obj.entry("strategy").or_insert_with(|| json!({}));
        let strategy = strategy
            .as_object_mut()
            .ok_or_else(|| Error::Config("`strategy` must be an object".into()))?;
        set(strategy, "kind", self.strategy.map(|k| json!(k)));
        set(strategy, "batch_size", self.batch_size.map(Value::from));
        set(strategy, "duplication", self.duplication.map(Value::from));
        set(strategy, "subgroup_count", self.subgroups.map(Value::from));
        strategy
            .entry("kind")
            .or_insert_with(|| json!(StrategyKind::Scan));
        strategy.entry("batch_size").or_insert_with(|| json!(10));

        set(obj, "seed", self.seed.map(Value::from));
        set(obj, "epochs", self.epochs.map(Value::from));
        set(obj, "workers", self.workers.map(Value::from));
        set(obj, "output_dir", self.out.as_ref().map(|p| json!(p)));
        if let Some(n) = self.n_tasks {
            obj.remove("trace_path");
            let corpus = obj
                .entry("corpus")
                .or_insert_with(|| json!(harness::CorpusSpec::default()));
            corpus["n_tasks"] = json!(n);
        }
        if let Some(p) = &self.traces {
            obj.remove("corpus");
            obj.insert("trace_path".into(), json!(p));
        }
        if !obj.contains_key("corpus") && !obj.contains_key("trace_path") {
            obj.insert("corpus".into(), json!(harness::CorpusSpec::default()));
        }
        if self.controller && !obj.contains_key("controller") {
            obj.insert(
                "controller".into(),
                json!(promptscan::controller::ControllerConfig::default()),
            );
        }
        if !obj.contains_key("seed") {
            return Err(Error::Config(
                "a seed is required (config `seed` or --seed)".into(),
            ));
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set(obj: &mut Map<String, Value>, key: &str, value: Option<Value>) {
    if let Some(v) = value {
        obj.insert(key.into(), v);
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut out = std::io::stdout();
    match cli.command {
        Command::Run(o) => {
            let summary = harness::run_experiment(&o.resolve()?, &mut out)?;
            println!("wrote {}", summary.output_dir.display());
        }
        Command::Sweep { overrides, sizes } => {
            let cfg = overrides.resolve()?;
            harness::sweep(&cfg, &sizes, &mut out)?;
            println!("wrote {}", cfg.output_dir.join("metrics.csv").display());
        }
        Command::Profile(o) => {
            let cfg = o.resolve()?;
            harness::profile_to_dir(&cfg, &mut out)?;
            println!("wrote {}", cfg.output_dir.join("fit.json").display());
        }
        Command::Ingest { path } => {
            let samples = harness::ingest_traces(&path)?;
            let ok = samples
                .iter()
                .filter(|s| {
                    s.offline_trajectory
                        .as_ref()
                        .is_some_and(|t| t.outcome == Outcome::Success)
                })
                .count();
            let tagged = samples
                .iter()
                .filter(|s| !s.required_insights.is_empty())
                .count();
            println!(
                "{} samples: {ok} success, {} failure, {tagged} with insight tags",
                samples.len(),
                samples.len() - ok
            );
        }
        Command::Report { dir } => {
            let r = harness::report(&dir)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&r).expect("report serializes")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
