use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::corpus::{generate_corpus, CorpusSpec};
use super::traces::ingest_traces;
use crate::backend::{HttpBackend, HttpConfig, LearnerBackend, SimBackend};
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::pipeline::{StrategyConfig, StrategyKind, TaskSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Sim(SimBackend),
    Http(HttpConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Sim(SimBackend::default())
    }
}

impl BackendConfig {
    pub fn build(&self, seed: u64) -> Result<Box<dyn LearnerBackend>> {
        Ok(match self {
            BackendConfig::Sim(sim) => Box::new(*sim),
            BackendConfig::Http(cfg) => {
                Box::new(HttpBackend::from_env(cfg.clone())?.with_jitter_seed(seed))
            }
        })
    }

    pub fn is_simulated(&self) -> bool {
        matches!(self, BackendConfig::Sim(_))
    }

    pub fn coverage_fraction(&self) -> f64 {
        match self {
            BackendConfig::Sim(s) => s.coverage_fraction,
            BackendConfig::Http(_) => 1.0,
        }
    }
}

/// Strategy knobs as they appear in a config file; the run seed is supplied
/// by [`ExperimentConfig::seed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub batch_size: usize,
    #[serde(default = "default_p")]
    pub duplication: usize,
    #[serde(default)]
    pub subgroup_count: Option<usize>,
}

fn default_p() -> usize {
    2
}

impl StrategySpec {
    pub fn with_seed(&self, seed: u64) -> StrategyConfig {
        StrategyConfig {
            kind: self.kind,
            batch_size: self.batch_size,
            duplication: if self.kind == StrategyKind::Scan {
                self.duplication
            } else {
                1
            },
            subgroup_count: self.subgroup_count,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<PathBuf>,
    pub strategy: StrategySpec,
    /// Enables batch-size profiling before the first epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerConfig>,
    /// Re-profile every this many iterations (requires `controller`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reprofile_every: Option<usize>,
    #[serde(default)]
    pub backend: BackendConfig,
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub reshuffle: bool,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_epochs() -> usize {
    1
}
fn default_workers() -> usize {
    8
}
fn default_output() -> PathBuf {
    PathBuf::from("runs/latest")
}

impl ExperimentConfig {
    /// Synthetic-corpus config with simulated backend and defaults elsewhere.
    pub fn synthetic(
        spec: CorpusSpec,
        strategy: StrategySpec,
        seed: u64,
        output_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            corpus: Some(spec),
            trace_path: None,
            strategy,
            controller: None,
            reprofile_every: None,
            backend: BackendConfig::default(),
            seed,
            epochs: 1,
            workers: default_workers(),
            reshuffle: false,
            output_dir: output_dir.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.corpus, &self.trace_path) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "set exactly one of `corpus` and `trace_path`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config("set one of `corpus` or `trace_path`".into()))
            }
            _ => {}
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        if self.reprofile_every == Some(0) {
            return Err(Error::Config("reprofile_every must be positive".into()));
        }
        if self.reprofile_every.is_some() && self.controller.is_none() {
            return Err(Error::Config(
                "reprofile_every needs a controller section".into(),
            ));
        }
        Ok(())
    }

    pub fn load_corpus(&self) -> Result<Vec<TaskSample>> {
        match (&self.corpus, &self.trace_path) {
            (Some(spec), None) => generate_corpus(spec, self.seed),
            (None, Some(path)) => ingest_traces(path),
            _ => Err(Error::Config(
                "set exactly one of `corpus` and `trace_path`".into(),
            )),
        }
    }
}
