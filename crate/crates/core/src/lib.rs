//! Parallel prompt learning.
//!
//! An agent's context is a [`Playbook`](context::Playbook) of sectioned
//! entries that is updated by deltas. Each iteration runs a batch of tasks in
//! parallel (execute, then reflect) and folds the reflections into exactly one
//! delta. Folding many reflections in one curator call overloads it, so the
//! scan strategy duplicates and shuffles reflections, curates `⌊√n⌋` subgroups
//! concurrently and merges their partial deltas. The
//! [`controller`] picks a batch size from a fitted delay curve.
//!
//! ```
//! use promptscan::backend::SimBackend;
//! use promptscan::context::Playbook;
//! use promptscan::harness::{generate_corpus, CorpusSpec};
//! use promptscan::pipeline::{run_epoch, EpochOptions, StrategyConfig};
//!
//! let corpus = generate_corpus(&CorpusSpec { n_tasks: 40, insights_per_task: 2, pool_size: 80 }, 7).unwrap();
//! let strategy = StrategyConfig::scan(20, 7);
//! let out = run_epoch(&corpus, &Playbook::new(), &strategy, &SimBackend::default(), EpochOptions::default()).unwrap();
//! assert_eq!(out.records.len(), 2);
//! assert!(!out.playbook.is_empty());
//! ```

pub mod aggregate;
pub mod backend;
pub mod context;
pub mod controller;
pub mod error;
pub mod exec;
pub mod harness;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
