//! Configuration, corpora, the experiment driver and run reports.

pub mod config;
pub mod corpus;
pub mod experiment;
pub mod report;
pub mod traces;

pub use config::{BackendConfig, ExperimentConfig, StrategySpec};
pub use corpus::{generate_corpus, CorpusSpec};
pub use experiment::{
    profile_to_dir, run_experiment, run_with_backend, sweep, EpochMetrics, RunSummary,
};
pub use report::{report, RunReport};
pub use traces::{ingest_traces, ingest_traces_with, TraceMapper};
