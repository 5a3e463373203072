//! Experiment driver and run-directory persistence.
//!
//! A run directory holds:
//!
//! | file            | format | content                                         |
//! |-----------------|--------|-------------------------------------------------|
//! | `config.json`   | JSON   | the effective [`ExperimentConfig`]              |
//! | `playbook.json` | JSON   | final playbook                                  |
//! | `playbook.md`   | text   | Markdown export of the final playbook           |
//! | `records.jsonl` | JSONL  | one [`RunRecord`] per iteration, in order       |
//! | `metrics.csv`   | CSV    | one row per epoch, columns [`METRICS_HEADER`]   |
//! | `fit.json`      | JSON   | controller fit (only when profiling ran)        |
//! | `profile.csv`   | CSV    | controller trials, columns [`PROFILE_HEADER`]   |
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! file is a pure function of the config.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::backend::LearnerBackend;
use crate::context::Playbook;
use crate::controller::{profile_and_select, ControllerConfig, ControllerError, ProfileReport};
use crate::error::{Error, Result};
use crate::pipeline::{
    run_epoch_with, score_playbook, EpochOptions, Metrics, RunRecord, StrategyConfig, TaskSample,
};

pub const METRICS_HEADER: [&str; 9] = [
    "epoch",
    "bs",
    "strategy",
    "epoch_time",
    "retained_entries",
    "specific_insights",
    "accuracy_proxy",
    "token_size",
    "total_helpful_hits",
];

pub const PROFILE_HEADER: [&str; 3] = ["bs", "delay_s", "epoch_time_s"];

/// Batch sizes of the default sweep.
pub const SWEEP_SIZES: [usize; 6] = [1, 5, 10, 20, 50, 100];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub bs: usize,
    pub strategy: String,
    /// Sum of iteration critical paths over the epoch, in seconds.
    pub epoch_time: f64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

impl EpochMetrics {
    fn row(&self) -> [String; 9] {
        let m = &self.metrics;
        [
            self.epoch.to_string(),
            self.bs.to_string(),
            self.strategy.clone(),
            self.epoch_time.to_string(),
            m.retained_entries.to_string(),
            m.specific_insights.to_string(),
            m.accuracy_proxy.to_string(),
            m.token_size.to_string(),
            m.total_helpful_hits.to_string(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    /// Batch size used for the first epoch.
    pub batch_size: usize,
    pub profile: Option<ProfileReport>,
    pub epochs: Vec<EpochMetrics>,
    pub playbook: Playbook,
    pub records: Vec<RunRecord>,
}

impl RunSummary {
    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().expect("at least one epoch")
    }
}

/// Profile-only result, as written by [`profile_to_dir`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    #[serde(rename = "A")]
    pub a: f64,
    pub alpha: f64,
    pub rms_log_residual: f64,
    pub tau: f64,
    pub plateau_raw: f64,
    pub plateau_bs: usize,
}

impl From<&ProfileReport> for FitReport {
    fn from(r: &ProfileReport) -> Self {
        Self {
            a: r.fit.a,
            alpha: r.fit.alpha,
            rms_log_residual: r.fit.rms_log_residual,
            tau: r.choice.tau,
            plateau_raw: r.choice.raw,
            plateau_bs: r.choice.batch_size,
        }
    }
}

/// Runs a full experiment and persists its outputs under `config.output_dir`.
///
/// Progress lines (including the selected plateau batch size) go to `log`.
pub fn run_experiment(config: &ExperimentConfig, log: &mut dyn Write) -> Result<RunSummary> {
    config.validate()?;
    let corpus = config.load_corpus()?;
    let backend = config.backend.build(config.seed)?;
    run_with_backend(config, &corpus, backend.as_ref(), log)
}

/// [`run_experiment`] with an explicit corpus and backend.
pub fn run_with_backend(
    config: &ExperimentConfig,
    corpus: &[TaskSample],
    backend: &dyn LearnerBackend,
    log: &mut dyn Write,
) -> Result<RunSummary> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("config.json"), &(config.to_json() + "\n"))?;

    let mut strategy = config.strategy.with_seed(config.seed);
    let mut playbook = Playbook::new();

    let profile = match &config.controller {
        Some(ctl) => {
            let report = profile_or_fallback(
                corpus,
                &playbook,
                &strategy,
                backend,
                ctl,
                config.workers,
                log,
            )?;
            if let Some(r) = &report {
                write_fit(out, r)?;
                strategy.batch_size = r.selected();
            } else {
                strategy.batch_size = 1;
            }
            say(
                log,
                &format!("selected batch size: {}", strategy.batch_size),
            );
            report
        }
        None => None,
    };
    strategy.validate(corpus.len())?;

    let coverage = config.backend.coverage_fraction();
    let mut records = Vec::new();
    let mut epochs = Vec::new();
    let mut iteration_offset = 0u64;
    for epoch in 0..config.epochs as u64 {
        let options = EpochOptions {
            workers: config.workers,
            epoch,
            reshuffle: config.reshuffle,
            iteration_offset,
        };
        let result = match (config.reprofile_every, &config.controller) {
            (Some(every), Some(ctl)) => {
                let mut bs = strategy.batch_size;
                let mut failure = None;
                let r =
                    run_epoch_with(corpus, &playbook, &strategy, backend, options, |it, pb| {
                        let local = it - iteration_offset;
                        if local > 0 && local.is_multiple_of(every as u64) && failure.is_none() {
                            match profile_and_select(
                                corpus,
                                pb,
                                &strategy,
                                backend,
                                ctl,
                                config.workers,
                            ) {
                                Ok(rep) => bs = rep.selected(),
                                Err(ControllerError::NoSpeedup { .. }) => bs = 1,
                                Err(e) => failure = Some(e),
                            }
                        }
                        bs
                    })?;
                if let Some(e) = failure {
                    return Err(e.into());
                }
                r
            }
            _ => run_epoch_with(corpus, &playbook, &strategy, backend, options, |_, _| {
                strategy.batch_size
            })?,
        };
        iteration_offset += result.records.len() as u64;
        playbook = result.playbook;
        let score = score_playbook(&playbook, corpus, coverage).ok();
        let epoch_time = result.records.iter().map(|r| r.delays.total_s).sum();
        let metrics = match score {
            Some(s) => s.metrics,
            // tasks without insight tags (e.g. raw traces) cannot be scored
            None => Metrics {
                accuracy_proxy: f64::NAN,
                retained_entries: playbook.len(),
                specific_insights: 0,
                total_helpful_hits: playbook.total_helpful(),
                token_size: playbook.token_size(),
            },
        };
        let em = EpochMetrics {
            epoch,
            bs: strategy.batch_size,
            strategy: strategy.kind.to_string(),
            epoch_time,
            metrics,
        };
        say(
            log,
            &format!(
                "epoch {epoch}: {} iterations, {} entries, {} specific insights, accuracy {:.3}, {:.1} s",
                result.records.len(),
                em.metrics.retained_entries,
                em.metrics.specific_insights,
                em.metrics.accuracy_proxy,
                em.epoch_time
            ),
        );
        epochs.push(em);
        records.extend(result.records);
    }

    write_text(&out.join("playbook.json"), &(playbook.to_json() + "\n"))?;
    write_text(&out.join("playbook.md"), &playbook.to_markdown())?;
    write_records(&out.join("records.jsonl"), &records)?;
    write_metrics(&out.join("metrics.csv"), &epochs)?;

    Ok(RunSummary {
        output_dir: out.clone(),
        batch_size: epochs.first().map(|e| e.bs).unwrap_or(strategy.batch_size),
        profile,
        epochs,
        playbook,
        records,
    })
}

fn profile_or_fallback(
    corpus: &[TaskSample],
    playbook: &Playbook,
    strategy: &StrategyConfig,
    backend: &dyn LearnerBackend,
    ctl: &ControllerConfig,
    workers: usize,
    log: &mut dyn Write,
) -> Result<Option<ProfileReport>> {
    match profile_and_select(corpus, playbook, strategy, backend, ctl, workers) {
        Ok(r) => Ok(Some(r)),
        Err(ControllerError::NoSpeedup { alpha }) => {
            say(
                log,
                &format!(
                    "no speedup from batching (alpha = {alpha:.4}); falling back to batch size 1"
                ),
            );
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

/// Runs the experiment once per batch size in `sizes`, into `bs-<N>`
/// subdirectories, and writes a combined `metrics.csv` (last epoch of each).
pub fn sweep(
    config: &ExperimentConfig,
    sizes: &[usize],
    log: &mut dyn Write,
) -> Result<Vec<RunSummary>> {
    config.validate()?;
    if sizes.is_empty() {
        return Err(Error::Config("sweep needs at least one batch size".into()));
    }
    let corpus = config.load_corpus()?;
    let backend = config.backend.build(config.seed)?;
    let mut runs = Vec::new();
    for &bs in sizes.iter().filter(|&&bs| bs <= corpus.len()) {
        let mut cfg = config.clone();
        cfg.controller = None;
        cfg.reprofile_every = None;
        cfg.strategy.batch_size = bs;
        cfg.output_dir = config.output_dir.join(format!("bs-{bs}"));
        say(log, &format!("== bs {bs} =="));
        runs.push(run_with_backend(&cfg, &corpus, backend.as_ref(), log)?);
    }
    let rows: Vec<EpochMetrics> = runs.iter().map(|r| r.last().clone()).collect();
    write_metrics(&config.output_dir.join("metrics.csv"), &rows)?;
    Ok(runs)
}

/// Profiles the configured strategy and writes `profile.csv` and `fit.json`.
pub fn profile_to_dir(config: &ExperimentConfig, log: &mut dyn Write) -> Result<ProfileReport> {
    config.validate()?;
    let ctl = config.controller.clone().unwrap_or_default();
    let corpus = config.load_corpus()?;
    let backend = config.backend.build(config.seed)?;
    let strategy = config.strategy.with_seed(config.seed);
    let report = profile_and_select(
        &corpus,
        &Playbook::new(),
        &strategy,
        backend.as_ref(),
        &ctl,
        config.workers,
    )?;
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    write_fit(&config.output_dir, &report)?;
    say(
        log,
        &format!(
            "A = {:.6}, alpha = {:.6}, tau = {:.6}, plateau bs = {}",
            report.fit.a,
            report.fit.alpha,
            report.choice.tau,
            report.selected()
        ),
    );
    Ok(report)
}

fn write_fit(dir: &Path, report: &ProfileReport) -> Result<()> {
    let fit = serde_json::to_string_pretty(&FitReport::from(report)).expect("fit serializes");
    write_text(&dir.join("fit.json"), &(fit + "\n"))?;
    let path = dir.join("profile.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(PROFILE_HEADER)?;
    for m in &report.measurements {
        w.write_record([
            m.batch_size.to_string(),
            m.delay_s.to_string(),
            m.epoch_time_s.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record(r.row())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn say(log: &mut dyn Write, line: &str) {
    // progress output is best-effort
    let _ = writeln!(log, "{line}");
}
