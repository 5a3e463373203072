//! Deterministic simulated learner.
//!
//! Tasks carry insight tags. A rollout succeeds when the playbook links enough
//! of the task's insights. A reflection reports the task's missing insights
//! (specific) plus one broad reminder drawn from a small shared pool
//! (generic). The curator keeps every pooled insight while the pool fits its
//! capacity; past that it keeps `capacity(m)` of them and favours generic
//! reminders, which is the overload signature: large batches drift towards
//! broad advice and lose the specific entries.
//!
//! All randomness comes from keyed streams, so results are a pure function
//! of inputs and seed regardless of call interleaving.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, CallContext, CurateInput, LearnerBackend, Timed};
use crate::context::{ContextDelta, DeltaOp, Playbook, PlaybookEntry, Section};
use crate::pipeline::{
    coverage, Outcome, Polarity, Reflection, ReflectionItem, TaskSample, Trajectory,
};
use crate::rng::{self, role, stable_hash};

const GENERIC_REMINDERS: [&str; 20] = [
    "Read the question twice and restate what is being asked before computing anything.",
    "Double-check units and convert percentages to decimals before using them in formulas.",
    "Verify intermediate results before moving to the next step.",
    "Round only at the final step and match the requested precision.",
    "Prefer the simplest approach that satisfies every stated constraint.",
    "List the given values explicitly before choosing a method.",
    "Check edge cases such as zero, negative or missing inputs.",
    "Keep the final answer in the exact format the task requests.",
    "When unsure, re-derive the result with an independent method.",
    "Do not assume information that is not present in the context.",
    "Track which tool calls have side effects before repeating them.",
    "Summarize the plan in one sentence before executing it.",
    "Confirm the output type matches the expected schema.",
    "Re-read error messages fully before retrying an action.",
    "Avoid redundant work: reuse results already computed.",
    "Pay attention to time periods and compounding frequency.",
    "Be explicit about sign conventions for inflows and outflows.",
    "Validate that totals add up after every transformation.",
    "Stop and check the question once more before answering.",
    "Prefer exact arithmetic; avoid premature approximation.",
];

const SPECIFIC_SECTIONS: [Section; 4] = [
    Section::Strategies,
    Section::Formulas,
    Section::Mistakes,
    Section::ContextClues,
];

/// Shape of the curator capacity curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CapacityLaw {
    /// `C0·m / (1 + β(m−1))`: total capacity saturates near `C0/β`.
    #[default]
    Saturating,
    /// `C0·m / (1 + β(m−1)m)`: total capacity peaks at small `m` then falls
    /// towards one.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverloadModel {
    /// Distinct insights kept from a single-input curation.
    pub base_capacity: u32,
    /// Crowding coefficient β.
    pub crowding: f64,
    /// Probability γ that an over-capacity slot goes to a generic item.
    pub specificity_bias: f64,
    #[serde(default)]
    pub law: CapacityLaw,
}

impl Default for OverloadModel {
    fn default() -> Self {
        Self {
            base_capacity: 4,
            crowding: 0.12,
            specificity_bias: 0.85,
            law: CapacityLaw::Saturating,
        }
    }
}

impl OverloadModel {
    /// Number of distinct insights a curation over `m` inputs can keep.
    pub fn capacity(&self, m: usize) -> usize {
        let m = m.max(1) as f64;
        let c0 = f64::from(self.base_capacity);
        let crowd = match self.law {
            CapacityLaw::Saturating => self.crowding * (m - 1.0),
            CapacityLaw::Quadratic => self.crowding * (m - 1.0) * m,
        };
        ((c0 * m / (1.0 + crowd)).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub rollout_latency: f64,
    pub reflect_latency: f64,
    /// Fixed part of a curator call.
    pub curate_base: f64,
    /// Per-input part of a curator call.
    pub curate_per_item: f64,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self {
            rollout_latency: 2.0,
            reflect_latency: 0.5,
            curate_base: 1.0,
            curate_per_item: 0.05,
        }
    }
}

impl DelayModel {
    pub fn curate_latency(&self, inputs: usize) -> f64 {
        self.curate_base + self.curate_per_item * inputs as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimBackend {
    #[serde(default)]
    pub overload: OverloadModel,
    #[serde(default)]
    pub delay: DelayModel,
    /// Fraction of a task's insights the playbook must link for success.
    #[serde(default = "default_fraction")]
    pub coverage_fraction: f64,
    /// Number of distinct generic reminders.
    #[serde(default = "default_generic_pool")]
    pub generic_pool: usize,
}

fn default_fraction() -> f64 {
    1.0
}

fn default_generic_pool() -> usize {
    GENERIC_REMINDERS.len()
}

impl Default for SimBackend {
    fn default() -> Self {
        Self {
            overload: OverloadModel::default(),
            delay: DelayModel::default(),
            coverage_fraction: 1.0,
            generic_pool: default_generic_pool(),
        }
    }
}

/// Section a specific insight belongs to.
pub fn insight_section(insight_id: &str) -> Section {
    SPECIFIC_SECTIONS[(stable_hash(insight_id) % SPECIFIC_SECTIONS.len() as u64) as usize]
}

/// Deterministic entry text for a specific insight.
pub fn insight_text(insight_id: &str) -> String {
    let h = stable_hash(insight_id);
    match insight_section(insight_id) {
        Section::Strategies => format!(
            "For tasks tagged {insight_id}, apply procedure P{} first and confirm its precondition before answering.",
            h % 997
        ),
        Section::Formulas => format!(
            "{insight_id}: compute the result with formula F{} and keep {} decimal places.",
            h % 991,
            2 + h % 3
        ),
        Section::Mistakes => format!(
            "Do not confuse case {insight_id} with its look-alike; check field Q{} explicitly.",
            h % 983
        ),
        Section::ContextClues => format!(
            "Keyword cue K{} in the question signals {insight_id}; switch to its dedicated handling.",
            h % 977
        ),
        Section::Others => format!("Remember insight {insight_id}."),
    }
}

impl SimBackend {
    pub fn with_overload(mut self, overload: OverloadModel) -> Self {
        self.overload = overload;
        self
    }

    pub fn with_delay(mut self, delay: DelayModel) -> Self {
        self.delay = delay;
        self
    }

    fn generic_for(&self, task_id: &str) -> (String, String) {
        let pool = self.generic_pool.max(1);
        let idx = (stable_hash(task_id) % pool as u64) as usize;
        let text = GENERIC_REMINDERS[idx % GENERIC_REMINDERS.len()];
        let text = if idx < GENERIC_REMINDERS.len() {
            text.to_string()
        } else {
            format!("{text} (variant {idx})")
        };
        (format!("gen-{idx:03}"), text)
    }

    /// Synthetic rollout; succeeds iff the playbook covers the task.
    pub fn sim_execute(
        &self,
        task: &TaskSample,
        playbook: &Playbook,
    ) -> Result<Trajectory, BackendError> {
        if task.required_insights.is_empty() {
            return Err(BackendError::Unsupported(format!(
                "task `{}` has no insight tags",
                task.task_id
            )));
        }
        let known = playbook.insight_ids();
        let cov = coverage(&known, &task.required_insights);
        let have = task
            .required_insights
            .iter()
            .filter(|i| known.contains(i.as_str()))
            .count();
        let outcome = if cov + 1e-12 >= self.coverage_fraction {
            Outcome::Success
        } else {
            Outcome::Failure
        };
        Ok(Trajectory {
            task_id: task.task_id.clone(),
            steps: vec![
                format!("read task {}", task.task_id),
                format!(
                    "consult playbook v{}: {have}/{} required insights present",
                    playbook.version(),
                    task.required_insights.len()
                ),
                match outcome {
                    Outcome::Success => "submit answer: correct".to_string(),
                    Outcome::Failure => "submit answer: incorrect".to_string(),
                },
            ],
            outcome,
            latency_s: self.delay.rollout_latency,
        })
    }

    pub fn sim_reflect(
        &self,
        task: &TaskSample,
        trajectory: &Trajectory,
        playbook: &Playbook,
        seed: u64,
    ) -> Reflection {
        let known = playbook.insight_ids();
        let mut items: Vec<ReflectionItem> = task
            .required_insights
            .iter()
            .filter(|i| !known.contains(i.as_str()))
            .map(|i| ReflectionItem {
                insight_id: i.clone(),
                text: insight_text(i),
                polarity: Polarity::Helpful,
                section: insight_section(i),
                generic: false,
            })
            .collect();

        let (gid, gtext) = self.generic_for(&task.task_id);
        items.push(ReflectionItem {
            insight_id: gid,
            text: gtext,
            polarity: Polarity::Helpful,
            section: Section::Others,
            generic: true,
        });

        if trajectory.outcome == Outcome::Failure {
            // entries that cover part of the task but did not get it solved
            let covering: Vec<&str> = task
                .required_insights
                .iter()
                .filter(|i| known.contains(i.as_str()))
                .map(String::as_str)
                .collect();
            if !covering.is_empty() {
                let mut r = rng::stream(seed, &[role::REFLECT, stable_hash(&task.task_id)]);
                let pick = covering[r.gen_range(0..covering.len())];
                items.push(ReflectionItem {
                    insight_id: pick.to_string(),
                    text: format!(
                        "Entry for {pick} was not sufficient on task {}.",
                        task.task_id
                    ),
                    polarity: Polarity::Harmful,
                    section: insight_section(pick),
                    generic: false,
                });
            }
        }

        Reflection {
            source_task_id: task.task_id.clone(),
            items,
            origin_index: 0,
        }
    }

    /// Capacity-limited curation.
    pub fn sim_curate(
        &self,
        items: &[CurateInput<'_>],
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> ContextDelta {
        let mut pool: BTreeMap<String, Candidate> = BTreeMap::new();
        let mut harmful: BTreeSet<String> = BTreeSet::new();
        let mut raw_inputs = 0usize;

        for input in items {
            match input {
                CurateInput::Reflection(r) => {
                    raw_inputs += 1;
                    for it in &r.items {
                        match it.polarity {
                            Polarity::Helpful => {
                                pool.entry(it.insight_id.clone())
                                    .or_insert_with(|| Candidate {
                                        text: it.text.clone(),
                                        section: it.section,
                                        generic: it.generic,
                                    });
                            }
                            Polarity::Harmful => {
                                harmful.insert(it.insight_id.clone());
                            }
                        }
                    }
                }
                CurateInput::Partial(delta) => {
                    render_partial(delta, playbook, &mut pool, &mut harmful)
                }
            }
        }

        // Only raw reflections are subject to the overload limit; partial
        // updates at the merge level are already distilled.
        let kept: Vec<String> = if raw_inputs > 0 {
            let cap = self.overload.capacity(items.len());
            if pool.len() <= cap {
                pool.keys().cloned().collect()
            } else {
                self.select(&pool, cap, ctx)
            }
        } else {
            pool.keys().cloned().collect()
        };

        let mut seq = playbook.next_seq();
        let mut adds = Vec::new();
        let mut marks = Vec::new();
        for id in &kept {
            let c = &pool[id];
            match playbook.entry_for_insight(id) {
                Some(e) => marks.push(DeltaOp::IncrementHelpful { id: e.id.clone() }),
                None => {
                    let entry = PlaybookEntry::new(
                        format!("{}-{seq:05}", c.section.id_prefix()),
                        c.section,
                        c.text.clone(),
                    )
                    .with_insight(id.clone())
                    .created_at(ctx.iteration);
                    seq += 1;
                    adds.push(DeltaOp::Add { entry });
                }
            }
        }
        let harmful_ids: BTreeSet<&str> = harmful
            .iter()
            .filter_map(|i| playbook.entry_for_insight(i).map(|e| e.id.as_str()))
            .collect();
        let mut ops = adds;
        ops.extend(marks);
        ops.extend(
            harmful_ids
                .into_iter()
                .map(|id| DeltaOp::IncrementHarmful { id: id.to_string() }),
        );
        ContextDelta::new(ops)
    }

    /// Picks `cap` insight ids. Each slot draws its class first (generic with
    /// probability γ while generic items remain), then an item within the
    /// class. Class draws and item picks use separate streams, so the class
    /// sequence for a call site is the same whatever the pool looks like.
    fn select(
        &self,
        pool: &BTreeMap<String, Candidate>,
        cap: usize,
        ctx: &CallContext,
    ) -> Vec<String> {
        let (mut generic, mut specific): (Vec<&String>, Vec<&String>) =
            pool.keys().partition(|k| pool[*k].generic);
        let key = [ctx.iteration, u64::from(ctx.level), u64::from(ctx.group)];
        let mut class_rng = rng::stream(ctx.seed, &[role::CURATE_CLASS, key[0], key[1], key[2]]);
        let mut pick_rng = rng::stream(ctx.seed, &[role::CURATE_PICK, key[0], key[1], key[2]]);
        let gamma = self.overload.specificity_bias.clamp(0.0, 1.0);

        let mut kept = Vec::with_capacity(cap);
        for _ in 0..cap {
            let wants_generic = class_rng.gen::<f64>() < gamma;
            let from = if (wants_generic && !generic.is_empty()) || specific.is_empty() {
                &mut generic
            } else {
                &mut specific
            };
            if from.is_empty() {
                break;
            }
            let i = pick_rng.gen_range(0..from.len());
            kept.push(from.remove(i).clone());
        }
        kept.sort();
        kept
    }
}

struct Candidate {
    text: String,
    section: Section,
    generic: bool,
}

fn render_partial(
    delta: &ContextDelta,
    playbook: &Playbook,
    pool: &mut BTreeMap<String, Candidate>,
    harmful: &mut BTreeSet<String>,
) {
    for op in &delta.ops {
        match op {
            DeltaOp::Add { entry } => {
                let keys: Vec<String> = if entry.insight_ids.is_empty() {
                    vec![format!("text:{:016x}", stable_hash(&entry.text))]
                } else {
                    entry.insight_ids.iter().cloned().collect()
                };
                for k in keys {
                    pool.entry(k).or_insert_with(|| Candidate {
                        text: entry.text.clone(),
                        section: entry.section,
                        generic: false,
                    });
                }
            }
            DeltaOp::IncrementHelpful { id } => {
                if let Some(e) = playbook.get(id) {
                    for k in &e.insight_ids {
                        pool.entry(k.clone()).or_insert_with(|| Candidate {
                            text: e.text.clone(),
                            section: e.section,
                            generic: false,
                        });
                    }
                }
            }
            DeltaOp::IncrementHarmful { id } => {
                if let Some(e) = playbook.get(id) {
                    harmful.extend(e.insight_ids.iter().cloned());
                }
            }
            DeltaOp::AmendText { .. } | DeltaOp::Remove { .. } => {}
        }
    }
}

impl LearnerBackend for SimBackend {
    fn execute(
        &self,
        task: &TaskSample,
        playbook: &Playbook,
        _ctx: &CallContext,
    ) -> Result<Timed<Trajectory>, BackendError> {
        let t = self.sim_execute(task, playbook)?;
        let d = t.latency_s;
        Ok(Timed::new(t, d))
    }

    fn reflect(
        &self,
        task: &TaskSample,
        trajectory: &Trajectory,
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<Reflection>, BackendError> {
        let mut r = self.sim_reflect(task, trajectory, playbook, ctx.seed);
        r.origin_index = ctx.origin_index;
        Ok(Timed::new(r, self.delay.reflect_latency))
    }

    fn curate(
        &self,
        items: &[CurateInput<'_>],
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<ContextDelta>, BackendError> {
        Ok(Timed::new(
            self.sim_curate(items, playbook, ctx),
            self.delay.curate_latency(items.len()),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::apply_delta;

    fn task(id: &str, insights: &[&str]) -> TaskSample {
        TaskSample::new(id, "").with_insights(insights.iter().copied())
    }

    fn add_insights(pb: &Playbook, ids: &[&str]) -> Playbook {
        let ops = ids
            .iter()
            .enumerate()
            .map(|(n, i)| DeltaOp::Add {
                entry: PlaybookEntry::new(
                    format!("strat-{:05}", pb.next_seq() + n as u64),
                    Section::Strategies,
                    insight_text(i),
                )
                .with_insight(*i),
            })
            .collect();
        apply_delta(pb, &ContextDelta::new(ops)).unwrap()
    }

    fn reflection(sim: &SimBackend, t: &TaskSample, pb: &Playbook) -> Reflection {
        let tr = sim.sim_execute(t, pb).unwrap();
        sim.sim_reflect(t, &tr, pb, 1)
    }

    #[test]
    fn capacity_curves() {
        let m = OverloadModel::default();
        assert_eq!(m.capacity(1), 4);
        // 4·100 / (1 + 0.12·99) = 400 / 12.88 = 31.06
        assert_eq!(m.capacity(100), 31);
        // 4·14 / (1 + 0.12·13) = 56 / 2.56 = 21.875
        assert_eq!(m.capacity(14), 22);
        let q = OverloadModel {
            law: CapacityLaw::Quadratic,
            ..m
        };
        assert_eq!(q.capacity(1), 4);
        // 400 / (1 + 0.12·99·100) = 0.336, floored at one
        assert_eq!(q.capacity(100), 1);
        // per-input capacity never grows with m
        for law in [CapacityLaw::Saturating, CapacityLaw::Quadratic] {
            let o = OverloadModel { law, ..m };
            let per: Vec<f64> = (1..200)
                .map(|k| {
                    (4.0 * k as f64
                        / (1.0
                            + o.crowding
                                * (k as f64 - 1.0)
                                * if law == CapacityLaw::Quadratic {
                                    k as f64
                                } else {
                                    1.0
                                }))
                        / k as f64
                })
                .collect();
            assert!(per.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn execute_empty_and_full() {
        let sim = SimBackend::default();
        let t = task("t", &["a", "b"]);
        assert_eq!(
            sim.sim_execute(&t, &Playbook::new()).unwrap().outcome,
            Outcome::Failure
        );
        let full = add_insights(&Playbook::new(), &["a", "b"]);
        assert_eq!(
            sim.sim_execute(&t, &full).unwrap().outcome,
            Outcome::Success
        );
        assert!(sim.sim_execute(&TaskSample::new("x", ""), &full).is_err());
    }

    #[test]
    fn execute_repeatable() {
        let sim = SimBackend::default();
        let t = task("t", &["a", "b", "c"]);
        let pb = add_insights(&Playbook::new(), &["a"]);
        let first = sim.sim_execute(&t, &pb).unwrap();
        for _ in 0..50 {
            assert_eq!(sim.sim_execute(&t, &pb).unwrap(), first);
        }
    }

    #[test]
    fn reflect_reports_missing_and_generic() {
        let sim = SimBackend::default();
        let t = task("t", &["a", "b"]);
        let pb = add_insights(&Playbook::new(), &["a"]);
        let r = reflection(&sim, &t, &pb);
        let specific: Vec<_> = r
            .items
            .iter()
            .filter(|i| !i.generic && i.polarity == Polarity::Helpful)
            .collect();
        assert_eq!(specific.len(), 1);
        assert_eq!(specific[0].insight_id, "b");
        assert_eq!(r.items.iter().filter(|i| i.generic).count(), 1);
        // failed with `a` present: one harmful mark on `a`
        let harm: Vec<_> = r
            .items
            .iter()
            .filter(|i| i.polarity == Polarity::Harmful)
            .collect();
        assert_eq!(harm.len(), 1);
        assert_eq!(harm[0].insight_id, "a");
    }

    #[test]
    fn reflect_complete_playbook_only_generic() {
        let sim = SimBackend::default();
        let t = task("t", &["a", "b"]);
        let pb = add_insights(&Playbook::new(), &["a", "b"]);
        let r = reflection(&sim, &t, &pb);
        assert_eq!(r.items.len(), 1);
        assert!(r.items[0].generic);
        for _ in 0..20 {
            assert_eq!(reflection(&sim, &t, &pb), r);
        }
    }

    #[test]
    fn curate_under_capacity_keeps_all() {
        let sim = SimBackend::default();
        let t = task("t", &["a", "b"]);
        let r = reflection(&sim, &t, &Playbook::new());
        // two specific + one generic = 3 ≤ C0 = 4
        assert_eq!(r.items.len(), 3);
        let d = sim.sim_curate(
            &[CurateInput::Reflection(&r)],
            &Playbook::new(),
            &CallContext::new(1, 0),
        );
        assert_eq!(d.summary().adds, 3);
    }

    #[test]
    fn curate_reinforces_existing() {
        let sim = SimBackend::default();
        let pb = add_insights(&Playbook::new(), &["a"]);
        let r = Reflection {
            source_task_id: "t".into(),
            origin_index: 0,
            items: vec![ReflectionItem {
                insight_id: "a".into(),
                text: insight_text("a"),
                polarity: Polarity::Helpful,
                section: insight_section("a"),
                generic: false,
            }],
        };
        let d = sim.sim_curate(
            &[CurateInput::Reflection(&r), CurateInput::Reflection(&r)],
            &pb,
            &CallContext::new(1, 0),
        );
        assert_eq!(
            d.ops,
            vec![DeltaOp::IncrementHelpful {
                id: "strat-00001".into()
            }]
        );
    }

    #[test]
    fn overload_collapses_to_generic() {
        let sim = SimBackend::default();
        let tasks: Vec<TaskSample> = (0..100)
            .map(|i| {
                task(
                    &format!("t{i}"),
                    &[
                        &format!("s{}", 3 * i),
                        &format!("s{}", 3 * i + 1),
                        &format!("s{}", 3 * i + 2),
                    ],
                )
            })
            .collect();
        let pb = Playbook::new();
        let refl: Vec<Reflection> = tasks.iter().map(|t| reflection(&sim, t, &pb)).collect();
        let inputs: Vec<CurateInput<'_>> = refl.iter().map(CurateInput::Reflection).collect();
        let d = sim.sim_curate(&inputs, &pb, &CallContext::new(3, 0));
        let out = apply_delta(&pb, &d).unwrap();
        assert_eq!(out.len(), sim.overload.capacity(100));
        let generic = out
            .entries()
            .iter()
            .filter(|e| e.insight_ids.iter().any(|i| i.starts_with("gen-")))
            .count();
        assert!(
            generic * 2 > out.len(),
            "generic {generic} of {}",
            out.len()
        );
        // 300 specific insights were on offer
        assert!(out.len() - generic < 30);
    }

    #[test]
    fn merge_is_lossless_union() {
        let sim = SimBackend::default();
        let pb = Playbook::new();
        let t1 = task("t1", &["a", "b"]);
        let t2 = task("t2", &["b", "c"]);
        let r1 = reflection(&sim, &t1, &pb);
        let r2 = reflection(&sim, &t2, &pb);
        let ctx = CallContext::new(1, 0);
        let p1 = sim.sim_curate(&[CurateInput::Reflection(&r1)], &pb, &ctx.at_level(0, 0));
        let p2 = sim.sim_curate(&[CurateInput::Reflection(&r2)], &pb, &ctx.at_level(0, 1));
        let merged = sim.sim_curate(
            &[CurateInput::Partial(&p1), CurateInput::Partial(&p2)],
            &pb,
            &ctx.at_level(1, 0),
        );
        let out = apply_delta(&pb, &merged).unwrap();
        let ids = out.insight_ids();
        for i in ["a", "b", "c"] {
            assert!(ids.contains(i));
        }
        // one entry per distinct insight, no id collisions
        assert_eq!(out.len(), ids.len());
    }
}
