//! Epoch and iteration driver.
//!
//! An epoch walks the corpus in consecutive batches. Each iteration runs the
//! map phase (execute + reflect per sample, concurrently), hands the
//! reflections to the configured aggregation strategy, and applies the single
//! resulting delta. Iteration `t + 1` always sees the playbook produced by
//! iteration `t`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{aggregate, AggregateError, AggregationPlan};
use crate::backend::{BackendError, CallContext, LearnerBackend};
use crate::context::{
    apply_delta, ContextDelta, ContextError, DeltaOp, DeltaSummary, Playbook, Section,
};
use crate::exec::parallel_map;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<String>,
    pub outcome: Outcome,
    /// Seconds; simulated or wall clock depending on the backend.
    #[serde(default)]
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSample {
    pub task_id: String,
    #[serde(default)]
    pub payload: String,
    /// Insight tags the simulated learner needs to solve this task.
    #[serde(default)]
    pub required_insights: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offline_trajectory: Option<Trajectory>,
    /// Unrecognised fields from ingested traces, kept verbatim.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, serde_json::Value>,
}

impl TaskSample {
    pub fn new(task_id: impl Into<String>, payload: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            payload: payload.into(),
            required_insights: BTreeSet::new(),
            offline_trajectory: None,
            extras: BTreeMap::new(),
        }
    }

    pub fn with_insights<I, S>(mut self, insights: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.required_insights = insights.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Helpful,
    Harmful,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionItem {
    pub insight_id: String,
    pub text: String,
    pub polarity: Polarity,
    #[serde(default = "default_section")]
    pub section: Section,
    /// Broad reminder rather than a task-specific insight.
    #[serde(default)]
    pub generic: bool,
}

fn default_section() -> Section {
    Section::Others
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub source_task_id: String,
    pub items: Vec<ReflectionItem>,
    pub origin_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// One sample per iteration, one curator call.
    Sequential,
    /// All reflections of a batch in a single curator call.
    NaiveBatch,
    /// Augmented shuffle followed by a two-level scan reduction.
    Scan,
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StrategyKind::Sequential => "sequential",
            StrategyKind::NaiveBatch => "naive_batch",
            StrategyKind::Scan => "scan",
        })
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(StrategyKind::Sequential),
            "naive_batch" | "naive" => Ok(StrategyKind::NaiveBatch),
            "scan" => Ok(StrategyKind::Scan),
            other => Err(format!(
                "unknown strategy `{other}` (expected sequential, naive_batch, scan)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub batch_size: usize,
    #[serde(default = "default_duplication")]
    pub duplication: usize,
    #[serde(default)]
    pub subgroup_count: Option<usize>,
    pub seed: u64,
}

fn default_duplication() -> usize {
    2
}

impl StrategyConfig {
    pub fn sequential(seed: u64) -> Self {
        Self {
            kind: StrategyKind::Sequential,
            batch_size: 1,
            duplication: 1,
            subgroup_count: None,
            seed,
        }
    }

    pub fn naive(batch_size: usize, seed: u64) -> Self {
        Self {
            kind: StrategyKind::NaiveBatch,
            batch_size,
            duplication: 1,
            subgroup_count: None,
            seed,
        }
    }

    pub fn scan(batch_size: usize, seed: u64) -> Self {
        Self {
            kind: StrategyKind::Scan,
            batch_size,
            duplication: 2,
            subgroup_count: None,
            seed,
        }
    }

    pub fn with_duplication(mut self, p: usize) -> Self {
        self.duplication = p;
        self
    }

    pub fn with_subgroups(mut self, k: usize) -> Self {
        self.subgroup_count = Some(k);
        self
    }

    pub fn with_batch_size(mut self, bs: usize) -> Self {
        self.batch_size = bs;
        self
    }

    pub fn validate(&self, n_train: usize) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::InvalidStrategy(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.batch_size > n_train {
            return bad(format!(
                "batch_size {} exceeds training set size {n_train}",
                self.batch_size
            ));
        }
        if self.duplication == 0 {
            return bad("duplication must be at least 1".into());
        }
        if self.subgroup_count == Some(0) {
            return bad("subgroup_count must be at least 1".into());
        }
        if self.kind == StrategyKind::Sequential && self.batch_size != 1 {
            return bad("sequential strategy requires batch_size 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("backend failure at iteration {iteration}, task `{task_id}`: {source}")]
    MapFailure {
        iteration: u64,
        task_id: String,
        #[source]
        source: BackendError,
    },
    #[error("aggregation failed at iteration {iteration}: {source}")]
    Aggregate {
        iteration: u64,
        #[source]
        source: AggregateError,
    },
    #[error("applying update at iteration {iteration}: {source}")]
    Apply {
        iteration: u64,
        #[source]
        source: ContextError,
    },
    #[error("task `{0}` has no insight tags; scoring needs the simulated backend")]
    MissingInsightTags(String),
    #[error("backend produced a reflection with no items for task `{0}`")]
    EmptyReflection(String),
}

impl PipelineError {
    pub fn is_backend_failure(&self) -> bool {
        matches!(
            self,
            PipelineError::MapFailure { .. }
                | PipelineError::Aggregate {
                    source: AggregateError::Backend { .. },
                    ..
                }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationDelays {
    /// Critical path of the map phase: slowest execute + reflect.
    pub map_s: f64,
    /// Critical path of each reduction level.
    pub reduce_s: [f64; 2],
    pub total_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaybookSnapshot {
    pub version: u64,
    pub entries: usize,
    pub token_size: u64,
    pub total_helpful: u64,
    pub total_harmful: u64,
    /// Distinct corpus insights linked from the playbook.
    pub specific_insights: usize,
}

impl PlaybookSnapshot {
    pub fn of(playbook: &Playbook, corpus_insights: &BTreeSet<&str>) -> Self {
        Self {
            version: playbook.version(),
            entries: playbook.len(),
            token_size: playbook.token_size(),
            total_helpful: playbook.total_helpful(),
            total_harmful: playbook.total_harmful(),
            specific_insights: retained_specific(playbook, corpus_insights),
        }
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epoch: u64,
    pub iteration: u64,
    pub strategy: StrategyConfig,
    pub batch_size: usize,
    pub task_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<AggregationPlan>,
    pub curate_calls: usize,
    pub delta_summary: DeltaSummary,
    pub delta: ContextDelta,
    pub delays: IterationDelays,
    pub after: PlaybookSnapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochOptions {
    /// Map-phase and level-0 concurrency.
    pub workers: usize,
    pub epoch: u64,
    /// Reorder the corpus with a seeded shuffle before batching.
    pub reshuffle: bool,
    /// Offset added to iteration indices so several epochs never reuse a key.
    pub iteration_offset: u64,
}

impl Default for EpochOptions {
    fn default() -> Self {
        Self {
            workers: 8,
            epoch: 0,
            reshuffle: false,
            iteration_offset: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochResult {
    pub playbook: Playbook,
    pub records: Vec<RunRecord>,
}

/// Number of iterations for one pass over `n_train` samples.
pub fn iteration_count(n_train: usize, batch_size: usize) -> usize {
    n_train.div_ceil(batch_size)
}

pub(crate) fn corpus_insights(corpus: &[TaskSample]) -> BTreeSet<&str> {
    corpus
        .iter()
        .flat_map(|t| t.required_insights.iter().map(String::as_str))
        .collect()
}

/// Distinct insights from `corpus_insights` that some playbook entry links.
pub fn retained_specific(playbook: &Playbook, corpus_insights: &BTreeSet<&str>) -> usize {
    playbook
        .insight_ids()
        .into_iter()
        .filter(|id| corpus_insights.contains(id))
        .count()
}

/// Map phase: one reflection per sample, ordered by batch position.
///
/// Offline trajectories are reflected on directly without an execute call.
pub fn map_phase<B: LearnerBackend + ?Sized>(
    batch: &[TaskSample],
    playbook: &Playbook,
    backend: &B,
    ctx: CallContext,
    workers: usize,
) -> Result<(Vec<Reflection>, f64), PipelineError> {
    let results = parallel_map(batch.len(), workers, |i| {
        let task = &batch[i];
        let call = ctx.at_origin(i);
        let (trajectory, exec_s) = match &task.offline_trajectory {
            Some(t) => (t.clone(), 0.0),
            None => {
                let timed = backend.execute(task, playbook, &call)?;
                (timed.value, timed.delay_s)
            }
        };
        let timed = backend.reflect(task, &trajectory, playbook, &call)?;
        let mut reflection = timed.value;
        reflection.origin_index = i;
        Ok::<_, BackendError>((reflection, exec_s + timed.delay_s))
    });

    let mut reflections = Vec::with_capacity(batch.len());
    let mut critical = 0.0f64;
    for (task, res) in batch.iter().zip(results) {
        let (reflection, delay) = res.map_err(|source| PipelineError::MapFailure {
            iteration: ctx.iteration,
            task_id: task.task_id.clone(),
            source,
        })?;
        if reflection.items.is_empty() {
            return Err(PipelineError::EmptyReflection(task.task_id.clone()));
        }
        critical = critical.max(delay);
        reflections.push(reflection);
    }
    Ok((reflections, critical))
}

/// Result of a single iteration, before it is folded into a record.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub playbook: Playbook,
    pub delta: ContextDelta,
    pub plan: Option<AggregationPlan>,
    pub curate_calls: usize,
    pub delays: IterationDelays,
}

/// Runs one generate-reflect-update iteration on `batch`.
pub fn run_iteration<B: LearnerBackend + ?Sized>(
    batch: &[TaskSample],
    playbook: &Playbook,
    strategy: &StrategyConfig,
    backend: &B,
    iteration: u64,
    workers: usize,
) -> Result<IterationOutcome, PipelineError> {
    let ctx = CallContext::new(strategy.seed, iteration);
    let (reflections, map_s) = map_phase(batch, playbook, backend, ctx, workers)?;
    let agg = aggregate(&reflections, strategy, playbook, backend, ctx, workers)
        .map_err(|source| PipelineError::Aggregate { iteration, source })?;
    let next = apply_delta(playbook, &agg.delta)
        .map_err(|source| PipelineError::Apply { iteration, source })?;
    let mut reduce_s = [0.0; 2];
    for (slot, d) in reduce_s.iter_mut().zip(&agg.level_delays) {
        *slot = *d;
    }
    Ok(IterationOutcome {
        playbook: next,
        delta: agg.delta,
        plan: agg.plan,
        curate_calls: agg.curate_calls,
        delays: IterationDelays {
            map_s,
            reduce_s,
            total_s: map_s + agg.level_delays.iter().sum::<f64>(),
        },
    })
}

/// One pass over `corpus` in `⌈N/bs⌉` sequential iterations.
pub fn run_epoch<B: LearnerBackend + ?Sized>(
    corpus: &[TaskSample],
    playbook: &Playbook,
    strategy: &StrategyConfig,
    backend: &B,
    options: EpochOptions,
) -> Result<EpochResult, PipelineError> {
    let bs = strategy.batch_size;
    run_epoch_with(corpus, playbook, strategy, backend, options, |_, _| bs)
}

/// Like [`run_epoch`], but asks `next_batch_size(iteration, playbook)` for the
/// size of each batch. Used by the dynamic controller mode.
pub fn run_epoch_with<B, F>(
    corpus: &[TaskSample],
    playbook: &Playbook,
    strategy: &StrategyConfig,
    backend: &B,
    options: EpochOptions,
    mut next_batch_size: F,
) -> Result<EpochResult, PipelineError>
where
    B: LearnerBackend + ?Sized,
    F: FnMut(u64, &Playbook) -> usize,
{
    if corpus.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    strategy.validate(corpus.len())?;

    let ordered: Vec<TaskSample>;
    let corpus = if options.reshuffle {
        let mut v = corpus.to_vec();
        v.shuffle(&mut rng::stream(
            strategy.seed,
            &[rng::role::EPOCH_ORDER, options.epoch],
        ));
        ordered = v;
        &ordered[..]
    } else {
        corpus
    };

    let insights = corpus_insights(corpus);
    let mut current = playbook.clone();
    let mut records = Vec::new();
    let mut start = 0usize;
    let mut local = 0u64;
    while start < corpus.len() {
        let iteration = options.iteration_offset + local;
        let bs = next_batch_size(iteration, &current).clamp(1, corpus.len());
        let end = (start + bs).min(corpus.len());
        let batch = &corpus[start..end];
        let iter_strategy = StrategyConfig {
            batch_size: bs,
            ..*strategy
        };
        let out = run_iteration(
            batch,
            &current,
            &iter_strategy,
            backend,
            iteration,
            options.workers,
        )?;
        records.push(RunRecord {
            epoch: options.epoch,
            iteration,
            strategy: iter_strategy,
            batch_size: batch.len(),
            task_ids: batch.iter().map(|t| t.task_id.clone()).collect(),
            plan: out.plan,
            curate_calls: out.curate_calls,
            delta_summary: out.delta.summary(),
            delta: out.delta,
            delays: out.delays,
            after: PlaybookSnapshot::of(&out.playbook, &insights),
        });
        current = out.playbook;
        start = end;
        local += 1;
    }
    Ok(EpochResult {
        playbook: current,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy_proxy: f64,
    pub retained_entries: usize,
    pub specific_insights: usize,
    pub total_helpful_hits: u64,
    pub token_size: u64,
}

#[derive(Debug, Clone)]
pub struct Score {
    pub metrics: Metrics,
    /// Copy of the playbook with helpful counters bumped for entries that
    /// solved an evaluation task.
    pub scored: Playbook,
}

/// Fraction of `required` insights linked from `known`. Empty requirements are
/// fully covered.
pub fn coverage(known: &BTreeSet<&str>, required: &BTreeSet<String>) -> f64 {
    if required.is_empty() {
        return 1.0;
    }
    let hit = required
        .iter()
        .filter(|r| known.contains(r.as_str()))
        .count();
    hit as f64 / required.len() as f64
}

/// Simulation stand-in for benchmark accuracy.
///
/// A task is solved when the playbook covers at least `coverage_fraction` of
/// its required insights; every covering entry of a solved task gets one
/// helpful mark on the returned copy.
pub fn score_playbook(
    playbook: &Playbook,
    eval_corpus: &[TaskSample],
    coverage_fraction: f64,
) -> Result<Score, PipelineError> {
    if let Some(t) = eval_corpus.iter().find(|t| t.required_insights.is_empty()) {
        return Err(PipelineError::MissingInsightTags(t.task_id.clone()));
    }
    let known = playbook.insight_ids();
    let mut solved = 0usize;
    let mut ops = Vec::new();
    for task in eval_corpus {
        if coverage(&known, &task.required_insights) + 1e-12 < coverage_fraction {
            continue;
        }
        solved += 1;
        for entry in playbook.entries() {
            if entry
                .insight_ids
                .iter()
                .any(|i| task.required_insights.contains(i))
            {
                ops.push(DeltaOp::IncrementHelpful {
                    id: entry.id.clone(),
                });
            }
        }
    }
    let scored = apply_delta(playbook, &ContextDelta::new(ops))
        .expect("score marks reference existing entries");
    let insights = corpus_insights(eval_corpus);
    let accuracy_proxy = if eval_corpus.is_empty() {
        0.0
    } else {
        solved as f64 / eval_corpus.len() as f64
    };
    Ok(Score {
        metrics: Metrics {
            accuracy_proxy,
            retained_entries: playbook.len(),
            specific_insights: retained_specific(playbook, &insights),
            total_helpful_hits: scored.total_helpful(),
            token_size: playbook.token_size(),
        },
        scored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::PlaybookEntry;

    fn playbook_with(insights: &[&str]) -> Playbook {
        let ops = insights
            .iter()
            .enumerate()
            .map(|(i, ins)| DeltaOp::Add {
                entry: PlaybookEntry::new(
                    format!("strat-{:05}", i + 1),
                    Section::Strategies,
                    format!("use {ins}"),
                )
                .with_insight(*ins),
            })
            .collect();
        apply_delta(&Playbook::new(), &ContextDelta::new(ops)).unwrap()
    }

    #[test]
    fn iteration_counts() {
        assert_eq!(iteration_count(90, 40), 3);
        assert_eq!(iteration_count(1, 1), 1);
        assert_eq!(iteration_count(100, 100), 1);
        assert_eq!(iteration_count(101, 100), 2);
    }

    #[test]
    fn strategy_validation() {
        assert!(StrategyConfig::naive(40, 0).validate(90).is_ok());
        assert!(StrategyConfig::naive(91, 0).validate(90).is_err());
        assert!(StrategyConfig::naive(0, 0).validate(90).is_err());
        assert!(StrategyConfig::scan(10, 0)
            .with_duplication(0)
            .validate(90)
            .is_err());
        assert!(StrategyConfig::scan(10, 0)
            .with_subgroups(0)
            .validate(90)
            .is_err());
        assert!(StrategyConfig::sequential(0)
            .with_batch_size(2)
            .validate(90)
            .is_err());
    }

    #[test]
    fn strategy_kind_parse() {
        assert_eq!(
            "naive".parse::<StrategyKind>().unwrap(),
            StrategyKind::NaiveBatch
        );
        assert_eq!("scan".parse::<StrategyKind>().unwrap(), StrategyKind::Scan);
        assert!("combo".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn score_full_coverage() {
        let corpus = vec![
            TaskSample::new("t1", "").with_insights(["a", "b"]),
            TaskSample::new("t2", "").with_insights(["b"]),
        ];
        let pb = playbook_with(&["a", "b"]);
        let s = score_playbook(&pb, &corpus, 1.0).unwrap();
        assert_eq!(s.metrics.accuracy_proxy, 1.0);
        // a: t1; b: t1 and t2
        assert_eq!(s.metrics.total_helpful_hits, 3);
        assert_eq!(s.scored.entry_for_insight("b").unwrap().helpful, 2);
        // scoring never mutates the input
        assert_eq!(pb.total_helpful(), 0);
    }

    #[test]
    fn score_empty_playbook() {
        let corpus = vec![TaskSample::new("t1", "").with_insights(["a"])];
        let s = score_playbook(&Playbook::new(), &corpus, 1.0).unwrap();
        assert_eq!(s.metrics.accuracy_proxy, 0.0);
        assert_eq!(s.metrics.total_helpful_hits, 0);
    }

    #[test]
    fn partial_cover_earns_nothing() {
        let corpus = vec![TaskSample::new("t", "").with_insights(["a", "b"])];
        let pb = playbook_with(&["a"]);
        let s = score_playbook(&pb, &corpus, 1.0).unwrap();
        assert_eq!(s.metrics.accuracy_proxy, 0.0);
        assert_eq!(s.scored.entry_for_insight("a").unwrap().helpful, 0);
        // half coverage is enough at fraction 0.5
        let s = score_playbook(&pb, &corpus, 0.5).unwrap();
        assert_eq!(s.metrics.accuracy_proxy, 1.0);
        assert_eq!(s.scored.entry_for_insight("a").unwrap().helpful, 1);
    }

    #[test]
    fn score_requires_tags() {
        let corpus = vec![TaskSample::new("t", "")];
        assert!(matches!(
            score_playbook(&Playbook::new(), &corpus, 1.0),
            Err(PipelineError::MissingInsightTags(_))
        ));
    }
}
