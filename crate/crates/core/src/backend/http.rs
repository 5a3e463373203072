//! Live backend over an OpenAI-compatible chat-completions endpoint.
//!
//! Every call sends one request (`POST {base_url}/chat/completions`) with the
//! playbook and inputs rendered into an engine-authored template and expects a
//! strict JSON object back. Retryable failures (429, 5xx, transport) back off
//! exponentially with jitter. A reply that does not parse gets exactly one
//! repair round-trip before it is surfaced as [`BackendError::MalformedReply`].

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, CallContext, CurateInput, LearnerBackend, Timed};
use crate::context::{ContextDelta, DeltaOp, Playbook, PlaybookEntry, Section};
use crate::pipeline::{Outcome, Polarity, Reflection, ReflectionItem, TaskSample, Trajectory};
use crate::rng::{self, role};

pub const TEMPLATE_VERSION: &str = "promptscan-templates/1";
pub const DEFAULT_API_KEY_ENV: &str = "PROMPTSCAN_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Templates {
    pub version: String,
    pub execute_system: String,
    pub reflect_system: String,
    pub curate_system: String,
    pub repair: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            version: TEMPLATE_VERSION.to_string(),
            execute_system: "You are an agent solving one task. Use the playbook below when it applies. \
Reply with a single JSON object: {\"steps\": [string, ...], \"outcome\": \"success\" | \"failure\"}. \
`steps` lists your actions and observations in order; `outcome` is your own assessment."
                .to_string(),
            reflect_system: "You review one agent trajectory and extract reusable lessons. \
Reply with a single JSON object: {\"items\": [{\"text\": string, \"polarity\": \"helpful\" | \"harmful\", \
\"section\": \"strategies\" | \"formulas\" | \"mistakes\" | \"context_clues\" | \"others\", \"insight_id\": string (optional)}]}. \
Only include lessons that are specific and actionable. Include at least one item."
                .to_string(),
            curate_system: "You maintain a playbook of numbered entries. Fold the inputs into ONE update. \
Reply with a single JSON object: {\"ops\": [op, ...]} where op is one of \
{\"op\": \"add\", \"section\": string, \"text\": string}, \
{\"op\": \"amend_text\", \"id\": string, \"text\": string}, \
{\"op\": \"increment_helpful\", \"id\": string}, {\"op\": \"increment_harmful\", \"id\": string}, \
{\"op\": \"remove\", \"id\": string}. Only reference ids that exist in the playbook. \
Do not rewrite the playbook wholesale."
                .to_string(),
            repair: "Your previous reply could not be used: {error}. Reply again with only the JSON object in the required schema."
                .to_string(),
        }
    }
}

impl Templates {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::Transport(format!("reading templates {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::MalformedReply(format!("templates: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_base")]
    pub backoff_base_s: f64,
    #[serde(default = "default_backoff_cap")]
    pub backoff_cap_s: f64,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub templates_path: Option<PathBuf>,
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_attempts() -> u32 {
    5
}
fn default_backoff_base() -> f64 {
    1.0
}
fn default_backoff_cap() -> f64 {
    60.0
}
fn default_timeout() -> f64 {
    120.0
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            max_attempts: default_attempts(),
            backoff_base_s: default_backoff_base(),
            backoff_cap_s: default_backoff_cap(),
            timeout_s: default_timeout(),
            temperature: 0.0,
            templates_path: None,
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    /// Backoff before retry number `attempt` (1-based): `base·2^(attempt−1)`
    /// capped, scaled by a jitter factor in `[0.5, 1)`.
    pub fn backoff(&self, attempt: u32, jitter: f64) -> Duration {
        let exp = self.backoff_base_s * 2f64.powi(attempt.saturating_sub(1).min(30) as i32);
        let secs = exp.min(self.backoff_cap_s) * (0.5 + 0.5 * jitter.clamp(0.0, 1.0));
        Duration::from_secs_f64(secs.max(0.0))
    }
}

/// Raw HTTP reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpReply {
    pub status: u16,
    pub body: Value,
}

pub trait ChatTransport: Send + Sync {
    fn post(&self, url: &str, api_key: &str, body: &Value) -> Result<HttpReply, BackendError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { client })
    }
}

impl ChatTransport for ReqwestTransport {
    fn post(&self, url: &str, api_key: &str, body: &Value) -> Result<HttpReply, BackendError> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(api_key)
            .json(body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let body = serde_json::from_str(&text).unwrap_or(Value::String(text));
        Ok(HttpReply { status, body })
    }
}

/// Replays paired fixtures `NNNN.request.json` / `NNNN.response.json` from a
/// directory, in order. When a request fixture exists it must match the
/// outgoing body exactly.
pub struct FixtureTransport {
    dir: PathBuf,
    next: AtomicUsize,
}

impl FixtureTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            next: AtomicUsize::new(1),
        }
    }

    pub fn consumed(&self) -> usize {
        self.next.load(Ordering::SeqCst) - 1
    }
}

fn fixture_paths(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{n:04}.request.json")),
        dir.join(format!("{n:04}.response.json")),
    )
}

impl ChatTransport for FixtureTransport {
    fn post(&self, _url: &str, _api_key: &str, body: &Value) -> Result<HttpReply, BackendError> {
        let n = self.next.fetch_add(1, Ordering::SeqCst);
        let (req_path, resp_path) = fixture_paths(&self.dir, n);
        if let Ok(text) = std::fs::read_to_string(&req_path) {
            let expected: Value = serde_json::from_str(&text).map_err(|e| {
                BackendError::Fixture(format!("fixture {}: {e}", req_path.display()))
            })?;
            if &expected != body {
                return Err(BackendError::Fixture(format!(
                    "request does not match fixture {}",
                    req_path.display()
                )));
            }
        }
        let text = std::fs::read_to_string(&resp_path).map_err(|e| {
            BackendError::Fixture(format!("no fixture {}: {e}", resp_path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Fixture(format!("fixture {}: {e}", resp_path.display())))
    }
}

/// Wraps a transport and writes every exchange as a fixture pair.
pub struct RecordingTransport<T> {
    inner: T,
    dir: PathBuf,
    next: AtomicUsize,
}

impl<T: ChatTransport> RecordingTransport<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
            next: AtomicUsize::new(1),
        }
    }
}

impl<T: ChatTransport> ChatTransport for RecordingTransport<T> {
    fn post(&self, url: &str, api_key: &str, body: &Value) -> Result<HttpReply, BackendError> {
        let reply = self.inner.post(url, api_key, body)?;
        let n = self.next.fetch_add(1, Ordering::SeqCst);
        let (req_path, resp_path) = fixture_paths(&self.dir, n);
        write_json(&req_path, body)?;
        write_json(&resp_path, &reply)?;
        Ok(reply)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BackendError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text)
        .map_err(|e| BackendError::Transport(format!("writing {}: {e}", path.display())))
}

type SleepFn = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct HttpBackend {
    config: HttpConfig,
    templates: Templates,
    api_key: String,
    transport: Box<dyn ChatTransport>,
    sleep: SleepFn,
    jitter_seed: u64,
    requests: AtomicU64,
}

impl HttpBackend {
    pub fn new(
        config: HttpConfig,
        api_key: impl Into<String>,
        transport: Box<dyn ChatTransport>,
    ) -> Self {
        Self {
            config,
            templates: Templates::default(),
            api_key: api_key.into(),
            transport,
            sleep: Arc::new(std::thread::sleep),
            jitter_seed: 0,
            requests: AtomicU64::new(0),
        }
    }

    /// Reads the API key from `config.api_key_env` and uses a real HTTP client.
    pub fn from_env(config: HttpConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| BackendError::MissingApiKey(config.api_key_env.clone()))?;
        let transport = ReqwestTransport::new(Duration::from_secs_f64(config.timeout_s))?;
        let templates = match &config.templates_path {
            Some(p) => Templates::load(p)?,
            None => Templates::default(),
        };
        Ok(Self::new(config, key, Box::new(transport)).with_templates(templates))
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = templates;
        self
    }

    /// Replaces the sleep used between retries (tests pass a no-op).
    pub fn with_sleep(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn with_jitter_seed(mut self, seed: u64) -> Self {
        self.jitter_seed = seed;
        self
    }

    /// HTTP requests issued so far, retries included.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    fn request_body(&self, messages: &[Value]) -> Value {
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "response_format": {"type": "json_object"},
        })
    }

    /// One chat completion with retry/backoff; returns the assistant content.
    fn complete(&self, messages: &[Value]) -> Result<String, BackendError> {
        let body = self.request_body(messages);
        let url = self.config.endpoint();
        let attempts = self.config.max_attempts.max(1);
        let call_id = self.requests.load(Ordering::SeqCst);
        let mut jitter = rng::stream(self.jitter_seed, &[role::BACKOFF, call_id]);
        let mut last: Option<BackendError> = None;

        for attempt in 1..=attempts {
            if attempt > 1 {
                (self.sleep)(self.config.backoff(attempt - 1, jitter.gen::<f64>()));
            }
            self.requests.fetch_add(1, Ordering::SeqCst);
            match self.transport.post(&url, &self.api_key, &body) {
                Ok(reply) if reply.status == 200 => return extract_content(&reply.body),
                Ok(reply) if reply.status == 429 => {
                    last = Some(BackendError::RateLimited { attempts: attempt })
                }
                Ok(reply) if reply.status >= 500 => {
                    last = Some(BackendError::Status {
                        status: reply.status,
                        body: reply.body.to_string(),
                    })
                }
                Ok(reply) => {
                    return Err(BackendError::Status {
                        status: reply.status,
                        body: reply.body.to_string(),
                    })
                }
                Err(e @ BackendError::Transport(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Sends the prompt, parses with `parse`, and on failure makes exactly one
    /// repair request carrying the parse error.
    fn ask<T>(
        &self,
        system: &str,
        user: String,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, BackendError> {
        let mut messages = vec![
            json!({"role": "system", "content": system}),
            json!({"role": "user", "content": user}),
        ];
        let first = self.complete(&messages)?;
        let err = match parse(&first) {
            Ok(v) => return Ok(v),
            Err(e) => e,
        };
        messages.push(json!({"role": "assistant", "content": first}));
        messages.push(
            json!({"role": "user", "content": self.templates.repair.replace("{error}", &err)}),
        );
        let second = self.complete(&messages)?;
        parse(&second).map_err(BackendError::MalformedReply)
    }

    pub fn http_chat_execute(
        &self,
        task: &TaskSample,
        playbook: &Playbook,
    ) -> Result<Trajectory, BackendError> {
        let user = format!(
            "{}\n\n# Task {}\n{}",
            playbook.to_markdown(),
            task.task_id,
            task.payload
        );
        self.ask(&self.templates.execute_system, user, |s| {
            parse_trajectory(s, &task.task_id)
        })
    }

    pub fn http_chat_reflect(
        &self,
        task: &TaskSample,
        trajectory: &Trajectory,
        playbook: &Playbook,
        origin_index: usize,
    ) -> Result<Reflection, BackendError> {
        let steps = trajectory
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {s}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        let outcome = match trajectory.outcome {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
        };
        let user = format!(
            "{}\n\n# Task {}\n{}\n\n# Trajectory (outcome: {outcome})\n{steps}",
            playbook.to_markdown(),
            task.task_id,
            task.payload
        );
        self.ask(&self.templates.reflect_system, user, |s| {
            parse_reflection(s, &task.task_id, origin_index)
        })
    }

    pub fn http_chat_curate(
        &self,
        items: &[CurateInput<'_>],
        playbook: &Playbook,
        iteration: u64,
    ) -> Result<ContextDelta, BackendError> {
        let user = format!(
            "{}\n\n# Inputs\n{}",
            playbook.to_markdown(),
            render_inputs(items)
        );
        self.ask(&self.templates.curate_system, user, |s| {
            parse_delta(s, playbook, iteration)
        })
    }
}

fn extract_content(body: &Value) -> Result<String, BackendError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| {
            BackendError::MalformedReply("response has no choices[0].message.content".into())
        })
}

/// Strips an optional Markdown code fence and parses the JSON object.
fn parse_object(s: &str) -> Result<Value, String> {
    let t = s.trim();
    let t = t
        .strip_prefix("```json")
        .or_else(|| t.strip_prefix("```"))
        .map(|rest| rest.trim_end().trim_end_matches("```"))
        .unwrap_or(t)
        .trim();
    let v: Value = serde_json::from_str(t).map_err(|e| format!("invalid JSON: {e}"))?;
    if !v.is_object() {
        return Err("expected a JSON object".into());
    }
    Ok(v)
}

fn parse_trajectory(s: &str, task_id: &str) -> Result<Trajectory, String> {
    #[derive(Deserialize)]
    struct Reply {
        steps: Vec<String>,
        outcome: Outcome,
    }
    let r: Reply = serde_json::from_value(parse_object(s)?).map_err(|e| format!("schema: {e}"))?;
    if r.steps.is_empty() {
        return Err("`steps` must not be empty".into());
    }
    Ok(Trajectory {
        task_id: task_id.to_string(),
        steps: r.steps,
        outcome: r.outcome,
        latency_s: 0.0,
    })
}

fn parse_reflection(s: &str, task_id: &str, origin_index: usize) -> Result<Reflection, String> {
    #[derive(Deserialize)]
    struct Item {
        text: String,
        polarity: Polarity,
        #[serde(default)]
        section: Option<String>,
        #[serde(default)]
        insight_id: Option<String>,
    }
    #[derive(Deserialize)]
    struct Reply {
        items: Vec<Item>,
    }
    let r: Reply = serde_json::from_value(parse_object(s)?).map_err(|e| format!("schema: {e}"))?;
    if r.items.is_empty() {
        return Err("`items` must not be empty".into());
    }
    let items = r
        .items
        .into_iter()
        .enumerate()
        .map(|(i, it)| {
            if it.text.trim().is_empty() {
                return Err(format!("item {i} has empty text"));
            }
            Ok(ReflectionItem {
                insight_id: it.insight_id.unwrap_or_else(|| format!("{task_id}#{i}")),
                text: it.text,
                polarity: it.polarity,
                section: it
                    .section
                    .as_deref()
                    .map_or(Section::Others, Section::parse_lenient),
                generic: false,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Reflection {
        source_task_id: task_id.to_string(),
        items,
        origin_index,
    })
}

#[derive(Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum WireOp {
    Add { section: String, text: String },
    AmendText { id: String, text: String },
    IncrementHelpful { id: String },
    IncrementHarmful { id: String },
    Remove { id: String },
}

/// Parses curator ops and assigns ids to additions. References must name
/// entries of `playbook` so that the delta applies cleanly.
fn parse_delta(s: &str, playbook: &Playbook, iteration: u64) -> Result<ContextDelta, String> {
    #[derive(Deserialize)]
    struct Reply {
        ops: Vec<WireOp>,
    }
    let r: Reply = serde_json::from_value(parse_object(s)?).map_err(|e| format!("schema: {e}"))?;
    let mut seq = playbook.next_seq();
    let known = |id: &str| -> Result<String, String> {
        if playbook.get(id).is_some() {
            Ok(id.to_string())
        } else {
            Err(format!("unknown entry id `{id}`"))
        }
    };
    let mut removed = std::collections::BTreeSet::new();
    let mut ops = Vec::with_capacity(r.ops.len());
    for op in r.ops {
        let op = match op {
            WireOp::Add { section, text } => {
                if text.trim().is_empty() {
                    return Err("add with empty text".into());
                }
                let section = Section::parse_lenient(&section);
                let id = format!("{}-{seq:05}", section.id_prefix());
                seq += 1;
                DeltaOp::Add {
                    entry: PlaybookEntry::new(id, section, text).created_at(iteration),
                }
            }
            WireOp::AmendText { id, text } => {
                if text.trim().is_empty() {
                    return Err(format!("amend of `{id}` with empty text"));
                }
                DeltaOp::AmendText {
                    id: known(&id)?,
                    text,
                }
            }
            WireOp::IncrementHelpful { id } => DeltaOp::IncrementHelpful { id: known(&id)? },
            WireOp::IncrementHarmful { id } => DeltaOp::IncrementHarmful { id: known(&id)? },
            WireOp::Remove { id } => {
                let id = known(&id)?;
                if !removed.insert(id.clone()) {
                    return Err(format!("entry `{id}` removed twice"));
                }
                DeltaOp::Remove { id }
            }
        };
        if let Some(id) = referenced_id(&op) {
            if removed.contains(id) && !matches!(op, DeltaOp::Remove { .. }) {
                return Err(format!("entry `{id}` referenced after removal"));
            }
        }
        ops.push(op);
    }
    Ok(ContextDelta::new(ops))
}

fn referenced_id(op: &DeltaOp) -> Option<&str> {
    match op {
        DeltaOp::Add { .. } => None,
        DeltaOp::AmendText { id, .. }
        | DeltaOp::IncrementHelpful { id }
        | DeltaOp::IncrementHarmful { id }
        | DeltaOp::Remove { id } => Some(id),
    }
}

fn render_inputs(items: &[CurateInput<'_>]) -> String {
    let mut out = String::new();
    for (i, input) in items.iter().enumerate() {
        match input {
            CurateInput::Reflection(r) => {
                out.push_str(&format!(
                    "## Reflection {} (task {})\n",
                    i + 1,
                    r.source_task_id
                ));
                for it in &r.items {
                    let pol = match it.polarity {
                        Polarity::Helpful => "helpful",
                        Polarity::Harmful => "harmful",
                    };
                    out.push_str(&format!(
                        "- [{pol}] ({}) {}\n",
                        it.section.heading(),
                        it.text
                    ));
                }
            }
            CurateInput::Partial(d) => {
                out.push_str(&format!("## Partial update {}\n", i + 1));
                for op in &d.ops {
                    let line = match op {
                        DeltaOp::Add { entry } => {
                            format!("- add ({}) {}", entry.section.heading(), entry.text)
                        }
                        DeltaOp::AmendText { id, text } => format!("- amend [{id}] {text}"),
                        DeltaOp::IncrementHelpful { id } => format!("- helpful [{id}]"),
                        DeltaOp::IncrementHarmful { id } => format!("- harmful [{id}]"),
                        DeltaOp::Remove { id } => format!("- remove [{id}]"),
                    };
                    out.push_str(&line);
                    out.push('\n');
                }
            }
        }
        out.push('\n');
    }
    out
}

impl LearnerBackend for HttpBackend {
    fn execute(
        &self,
        task: &TaskSample,
        playbook: &Playbook,
        _ctx: &CallContext,
    ) -> Result<Timed<Trajectory>, BackendError> {
        let start = Instant::now();
        let mut t = self.http_chat_execute(task, playbook)?;
        let d = start.elapsed().as_secs_f64();
        t.latency_s = d;
        Ok(Timed::new(t, d))
    }

    fn reflect(
        &self,
        task: &TaskSample,
        trajectory: &Trajectory,
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<Reflection>, BackendError> {
        let start = Instant::now();
        let r = self.http_chat_reflect(task, trajectory, playbook, ctx.origin_index)?;
        Ok(Timed::new(r, start.elapsed().as_secs_f64()))
    }

    fn curate(
        &self,
        items: &[CurateInput<'_>],
        playbook: &Playbook,
        ctx: &CallContext,
    ) -> Result<Timed<ContextDelta>, BackendError> {
        let start = Instant::now();
        let d = self.http_chat_curate(items, playbook, ctx.iteration)?;
        Ok(Timed::new(d, start.elapsed().as_secs_f64()))
    }
}
