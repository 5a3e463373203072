use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::TaskSample;
use crate::rng::{self, role};

/// Shape of a synthetic training corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_tasks: usize,
    pub insights_per_task: usize,
    pub pool_size: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_tasks: 100,
            insights_per_task: 3,
            pool_size: 300,
        }
    }
}

pub fn insight_id(i: usize) -> String {
    format!("ins-{i:04}")
}

/// `n_tasks` tasks, each requiring `insights_per_task` distinct insights drawn
/// without replacement from a pool of `pool_size`.
pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<Vec<TaskSample>> {
    if spec.n_tasks == 0 {
        return Err(Error::InvalidSpec("n_tasks must be positive".into()));
    }
    if spec.insights_per_task == 0 {
        return Err(Error::InvalidSpec(
            "insights_per_task must be positive".into(),
        ));
    }
    if spec.pool_size < spec.insights_per_task {
        return Err(Error::InvalidSpec(format!(
            "pool_size {} is smaller than insights_per_task {}",
            spec.pool_size, spec.insights_per_task
        )));
    }
    let mut r = rng::stream(seed, &[role::CORPUS]);
    let width = spec.n_tasks.to_string().len().max(4);
    Ok((0..spec.n_tasks)
        .map(|i| {
            let mut picked =
                index::sample(&mut r, spec.pool_size, spec.insights_per_task).into_vec();
            picked.sort_unstable();
            let ids: Vec<String> = picked.into_iter().map(insight_id).collect();
            let payload = format!("Synthetic task {i}: solvable with {}.", ids.join(", "));
            TaskSample::new(format!("task-{i:0width$}"), payload).with_insights(ids)
        })
        .collect())
}
