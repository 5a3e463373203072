#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use promptscan::backend::{
    BackendError, CallContext, CurateInput, LearnerBackend, SimBackend, Timed,
};
use promptscan::context::{ContextDelta, Playbook};
use promptscan::harness::{generate_corpus, CorpusSpec};
use promptscan::pipeline::{Reflection, TaskSample, Trajectory};

pub fn corpus(n: usize, seed: u64) -> Vec<TaskSample> {
    generate_corpus(
        &CorpusSpec {
            n_tasks: n,
            insights_per_task: 3,
            pool_size: 300,
        },
        seed,
    )
    .unwrap()
}

/// Simulated backend that counts calls and logs curate call coordinates.
#[derive(Default)]
pub struct Counting {
    pub inner: SimBackend,
    pub executes: AtomicUsize,
    pub reflects: AtomicUsize,
    pub curates: AtomicUsize,
    /// (iteration, level, group, number of inputs)
    pub curate_log: Mutex<Vec<(u64, u32, u32, usize)>>,
}

impl Counting {
    pub fn curate_calls(&self) -> usize {
        self.curates.load(Ordering::SeqCst)
    }
}

impl LearnerBackend for Counting {
    fn execute(
        &self,
        task: &TaskSample,
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<Trajectory>, BackendError> {
        self.executes.fetch_add(1, Ordering::SeqCst);
        self.inner.execute(task, playbook, ctx)
    }

    fn reflect(
        &self,
        task: &TaskSample,
        trajectory: &Trajectory,
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<Reflection>, BackendError> {
        self.reflects.fetch_add(1, Ordering::SeqCst);
        self.inner.reflect(task, trajectory, playbook, ctx)
    }

    fn curate(
        &self,
        items: &[CurateInput<'_>],
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<ContextDelta>, BackendError> {
        self.curates.fetch_add(1, Ordering::SeqCst);
        self.curate_log
            .lock()
            .unwrap()
            .push((ctx.iteration, ctx.level, ctx.group, items.len()));
        self.inner.curate(items, playbook, ctx)
    }
}
