//! Augmented shuffling and the two-level scan reduction.
//!
//! Naive batching hands every reflection of a batch to one curator call.
//! The scan path instead duplicates each reflection `p` times, shuffles the
//! augmented list, cuts it into `k = ⌊√n⌋` contiguous balanced groups, curates
//! each group independently (level 0) and merges the `k` partial updates in a
//! single call (level 1). Both levels see about `√n` inputs per call.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CallContext, CurateInput, LearnerBackend};
use crate::context::{ContextDelta, Playbook};
use crate::exec::parallel_map;
use crate::pipeline::{Reflection, StrategyConfig, StrategyKind};
use crate::rng;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("invalid subgroup count {k} for {n} leaves")]
    InvalidK { k: usize, n: usize },
    #[error("plan covers {plan} leaves but the shuffled batch has {batch}")]
    PlanMismatch { plan: usize, batch: usize },
    #[error("nothing to aggregate")]
    Empty,
    #[error("curator failed at level {level}, group {group}: {source}")]
    Backend {
        level: u32,
        group: u32,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffledItem {
    /// Index of the source reflection in the batch.
    pub source: usize,
    /// Which copy of the source this is, `0..p`.
    pub duplicate_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffledBatch {
    pub items: Vec<ShuffledItem>,
    pub seed: u64,
}

/// Duplicates each of `source_count` reflections `p` times and applies a
/// seeded Fisher–Yates shuffle.
pub fn augmented_shuffle(source_count: usize, p: usize, seed: u64) -> ShuffledBatch {
    let mut items: Vec<ShuffledItem> = (0..source_count)
        .flat_map(|source| {
            (0..p).map(move |duplicate_index| ShuffledItem {
                source,
                duplicate_index,
            })
        })
        .collect();
    items.shuffle(&mut rng::stream(seed, &[rng::role::SHUFFLE]));
    ShuffledBatch { items, seed }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpan {
    pub start: usize,
    pub len: usize,
}

impl GroupSpan {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanLevel {
    pub level: u32,
    pub calls: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationPlan {
    pub leaf_count: usize,
    pub duplication: usize,
    pub subgroup_count: usize,
    pub groups: Vec<GroupSpan>,
    pub levels: Vec<PlanLevel>,
}

impl AggregationPlan {
    pub fn curate_calls(&self) -> usize {
        self.levels.iter().map(|l| l.calls).sum()
    }

    pub fn max_group_len(&self) -> usize {
        self.groups.iter().map(|g| g.len).max().unwrap_or(0)
    }
}

/// `⌊√n⌋`, exact for every `usize`.
pub fn isqrt(n: usize) -> usize {
    n.isqrt()
}

/// Balanced contiguous partition of `n` leaves into `k` groups (default
/// `⌊√n⌋`). The first `n mod k` groups get one extra leaf.
pub fn build_plan(n: usize, k: Option<usize>) -> Result<AggregationPlan, AggregateError> {
    if n == 0 {
        return Err(AggregateError::Empty);
    }
    let k = k.unwrap_or_else(|| isqrt(n).max(1));
    if k == 0 || k > n {
        return Err(AggregateError::InvalidK { k, n });
    }
    let (base, extra) = (n / k, n % k);
    let mut groups = Vec::with_capacity(k);
    let mut start = 0;
    for g in 0..k {
        let len = base + usize::from(g < extra);
        groups.push(GroupSpan { start, len });
        start += len;
    }
    let mut levels = vec![PlanLevel { level: 0, calls: k }];
    if k > 1 {
        levels.push(PlanLevel { level: 1, calls: 1 });
    }
    Ok(AggregationPlan {
        leaf_count: n,
        duplication: 1,
        subgroup_count: k,
        groups,
        levels,
    })
}

/// Delta and accounting from one aggregation.
#[derive(Debug, Clone)]
pub struct AggregateOutcome {
    pub delta: ContextDelta,
    pub plan: Option<AggregationPlan>,
    /// Critical-path delay of each level that ran.
    pub level_delays: Vec<f64>,
    pub curate_calls: usize,
}

/// Level 0: one curator call per group, run concurrently. Level 1: one merge
/// call over the partial deltas in group order. A one-group plan is a single
/// call whose delta is returned as is.
pub fn scan_reduce<B: LearnerBackend + ?Sized>(
    reflections: &[Reflection],
    batch: &ShuffledBatch,
    plan: &AggregationPlan,
    playbook: &Playbook,
    backend: &B,
    ctx: CallContext,
    workers: usize,
) -> Result<AggregateOutcome, AggregateError> {
    if plan.leaf_count != batch.items.len() {
        return Err(AggregateError::PlanMismatch {
            plan: plan.leaf_count,
            batch: batch.items.len(),
        });
    }

    let partials = parallel_map(plan.groups.len(), workers, |g| {
        // the shuffle decides group membership; inside a group, inputs keep
        // batch order so a one-group plan sees exactly what naive sees
        let mut members: Vec<ShuffledItem> = batch.items[plan.groups[g].range()].to_vec();
        members.sort_unstable_by_key(|it| (it.source, it.duplicate_index));
        let inputs: Vec<CurateInput<'_>> = members
            .iter()
            .map(|it| CurateInput::Reflection(&reflections[it.source]))
            .collect();
        backend
            .curate(&inputs, playbook, &ctx.at_level(0, g as u32))
            .map_err(|source| AggregateError::Backend {
                level: 0,
                group: g as u32,
                source,
            })
    });
    let partials = partials.into_iter().collect::<Result<Vec<_>, _>>()?;
    let level0 = partials.iter().map(|t| t.delay_s).fold(0.0, f64::max);

    if partials.len() == 1 {
        let only = partials.into_iter().next().expect("one partial");
        return Ok(AggregateOutcome {
            delta: only.value,
            plan: Some(plan.clone()),
            level_delays: vec![level0],
            curate_calls: 1,
        });
    }

    let inputs: Vec<CurateInput<'_>> = partials
        .iter()
        .map(|t| CurateInput::Partial(&t.value))
        .collect();
    let merged = backend
        .curate(&inputs, playbook, &ctx.at_level(1, 0))
        .map_err(|source| AggregateError::Backend {
            level: 1,
            group: 0,
            source,
        })?;
    Ok(AggregateOutcome {
        delta: merged.value,
        plan: Some(plan.clone()),
        level_delays: vec![level0, merged.delay_s],
        curate_calls: partials.len() + 1,
    })
}

/// Folds the reflections of one iteration into a single update, following
/// `strategy.kind`.
pub fn aggregate<B: LearnerBackend + ?Sized>(
    reflections: &[Reflection],
    strategy: &StrategyConfig,
    playbook: &Playbook,
    backend: &B,
    ctx: CallContext,
    workers: usize,
) -> Result<AggregateOutcome, AggregateError> {
    if reflections.is_empty() {
        return Err(AggregateError::Empty);
    }
    match strategy.kind {
        StrategyKind::Sequential | StrategyKind::NaiveBatch => {
            let inputs: Vec<CurateInput<'_>> =
                reflections.iter().map(CurateInput::Reflection).collect();
            let out = backend
                .curate(&inputs, playbook, &ctx.at_level(0, 0))
                .map_err(|source| AggregateError::Backend {
                    level: 0,
                    group: 0,
                    source,
                })?;
            Ok(AggregateOutcome {
                delta: out.value,
                plan: None,
                level_delays: vec![out.delay_s],
                curate_calls: 1,
            })
        }
        StrategyKind::Scan => {
            let shuffle_seed =
                rng::derive_seed(strategy.seed, &[rng::role::SHUFFLE, ctx.iteration]);
            let shuffled = augmented_shuffle(reflections.len(), strategy.duplication, shuffle_seed);
            let mut plan = build_plan(shuffled.items.len(), strategy.subgroup_count)?;
            plan.duplication = strategy.duplication;
            scan_reduce(
                reflections,
                &shuffled,
                &plan,
                playbook,
                backend,
                ctx,
                workers,
            )
        }
    }
}
