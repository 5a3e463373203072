//! Execution, reflection and curation providers.
//!
//! [`LearnerBackend`] is the seam between the orchestration logic and whatever
//! actually runs rollouts and writes context updates. Two implementations ship
//! with the crate: [`SimBackend`], a deterministic model of context overload,
//! and [`HttpBackend`], which talks to an OpenAI-compatible chat endpoint.

use thiserror::Error;

use crate::context::{ContextDelta, Playbook};
use crate::pipeline::{Reflection, TaskSample, Trajectory};

pub mod http;
pub mod sim;

pub use http::{HttpBackend, HttpConfig};
pub use sim::{CapacityLaw, DelayModel, OverloadModel, SimBackend};

/// Identifies one backend call for stream derivation and error reporting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallContext {
    pub seed: u64,
    pub iteration: u64,
    /// Reduction level for curate calls (0 = leaf groups, 1 = merge).
    pub level: u32,
    /// Group index within the level.
    pub group: u32,
    /// Position of the sample within its batch, for execute/reflect calls.
    pub origin_index: usize,
}

impl CallContext {
    pub fn new(seed: u64, iteration: u64) -> Self {
        Self {
            seed,
            iteration,
            ..Self::default()
        }
    }

    pub fn at_level(mut self, level: u32, group: u32) -> Self {
        self.level = level;
        self.group = group;
        self
    }

    pub fn at_origin(mut self, origin_index: usize) -> Self {
        self.origin_index = origin_index;
        self
    }
}

/// A backend result together with the delay the call took, in seconds.
/// Simulated backends report modelled time; live backends report wall clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Timed<T> {
    pub value: T,
    pub delay_s: f64,
}

impl<T> Timed<T> {
    pub fn new(value: T, delay_s: f64) -> Self {
        Self { value, delay_s }
    }
}

/// One unit of curator input: a raw reflection (leaf level) or a partial
/// update produced by a lower level of the reduction tree.
#[derive(Debug, Clone, Copy)]
pub enum CurateInput<'a> {
    Reflection(&'a Reflection),
    Partial(&'a ContextDelta),
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed reply: {0}")]
    MalformedReply(String),
    #[error("missing credentials: environment variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("unsupported input: {0}")]
    Unsupported(String),
    /// Recorded-exchange replay failed; never retried.
    #[error("fixture: {0}")]
    Fixture(String),
}

pub trait LearnerBackend: Send + Sync {
    fn execute(
        &self,
        task: &TaskSample,
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<Trajectory>, BackendError>;

    fn reflect(
        &self,
        task: &TaskSample,
        trajectory: &Trajectory,
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<Reflection>, BackendError>;

    /// Produces exactly one delta for the given inputs.
    fn curate(
        &self,
        items: &[CurateInput<'_>],
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<ContextDelta>, BackendError>;
}

impl<B: LearnerBackend + ?Sized> LearnerBackend for &B {
    fn execute(
        &self,
        task: &TaskSample,
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<Trajectory>, BackendError> {
        (**self).execute(task, playbook, ctx)
    }

    fn reflect(
        &self,
        task: &TaskSample,
        trajectory: &Trajectory,
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<Reflection>, BackendError> {
        (**self).reflect(task, trajectory, playbook, ctx)
    }

    fn curate(
        &self,
        items: &[CurateInput<'_>],
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<ContextDelta>, BackendError> {
        (**self).curate(items, playbook, ctx)
    }
}

impl<B: LearnerBackend + ?Sized> LearnerBackend for Box<B> {
    fn execute(
        &self,
        task: &TaskSample,
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<Trajectory>, BackendError> {
        (**self).execute(task, playbook, ctx)
    }

    fn reflect(
        &self,
        task: &TaskSample,
        trajectory: &Trajectory,
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<Reflection>, BackendError> {
        (**self).reflect(task, trajectory, playbook, ctx)
    }

    fn curate(
        &self,
        items: &[CurateInput<'_>],
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<ContextDelta>, BackendError> {
        (**self).curate(items, playbook, ctx)
    }
}
