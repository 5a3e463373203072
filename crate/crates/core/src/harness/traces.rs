//! Offline trace ingestion.
//!
//! One JSON object per line:
//!
//! ```text
//! {"task_id": "t-001", "steps": ["..."], "outcome": "success" | "failure",
//!  "insights": ["..."], "payload": "...", "latency_s": 12.5, ...}
//! ```
//!
//! `insights`, `payload` and `latency_s` are optional. Any other field is kept
//! in [`TaskSample::extras`]. Blank lines are skipped. Other trace layouts can
//! be adapted with a [`TraceMapper`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::pipeline::{Outcome, TaskSample, Trajectory};

/// Converts one external trace record into the native layout.
pub trait TraceMapper {
    fn map(&self, record: Value) -> std::result::Result<Value, String>;
}

/// Identity mapping for traces already in the native layout.
pub struct NativeTraces;

impl TraceMapper for NativeTraces {
    fn map(&self, record: Value) -> std::result::Result<Value, String> {
        Ok(record)
    }
}

impl<F> TraceMapper for F
where
    F: Fn(Value) -> std::result::Result<Value, String>,
{
    fn map(&self, record: Value) -> std::result::Result<Value, String> {
        self(record)
    }
}

const KNOWN: [&str; 6] = [
    "task_id",
    "steps",
    "outcome",
    "insights",
    "payload",
    "latency_s",
];

pub fn ingest_traces(path: &Path) -> Result<Vec<TaskSample>> {
    ingest_traces_with(path, &NativeTraces)
}

pub fn ingest_traces_with(path: &Path, mapper: &dyn TraceMapper) -> Result<Vec<TaskSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_traces(std::io::BufReader::new(file), mapper)
}

pub fn parse_traces(reader: impl BufRead, mapper: &dyn TraceMapper) -> Result<Vec<TaskSample>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let raw: Value = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let mapped = mapper.map(raw).map_err(parse_err)?;
        let sample = sample_from(mapped).map_err(parse_err)?;
        if !seen.insert(sample.task_id.clone()) {
            return Err(Error::DuplicateTaskId {
                task_id: sample.task_id,
                line: line_no,
            });
        }
        out.push(sample);
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

fn sample_from(value: Value) -> std::result::Result<TaskSample, String> {
    let Value::Object(mut obj) = value else {
        return Err("expected a JSON object".into());
    };
    let task_id = take_string(&mut obj, "task_id")?.ok_or("missing `task_id`")?;
    if task_id.is_empty() {
        return Err("`task_id` is empty".into());
    }
    let steps: Vec<String> = match obj.remove("steps") {
        Some(v) => serde_json::from_value(v).map_err(|e| format!("`steps`: {e}"))?,
        None => return Err("missing `steps`".into()),
    };
    if steps.is_empty() {
        return Err("`steps` is empty".into());
    }
    let outcome: Outcome = match obj.remove("outcome") {
        Some(v) => serde_json::from_value(v).map_err(|e| format!("`outcome`: {e}"))?,
        None => return Err("missing `outcome`".into()),
    };
    let insights: BTreeSet<String> = match obj.remove("insights") {
        Some(Value::Null) | None => BTreeSet::new(),
        Some(v) => serde_json::from_value(v).map_err(|e| format!("`insights`: {e}"))?,
    };
    let payload = take_string(&mut obj, "payload")?.unwrap_or_default();
    let latency_s = match obj.remove("latency_s") {
        Some(v) => v
            .as_f64()
            .filter(|l| *l >= 0.0)
            .ok_or("`latency_s` must be a non-negative number")?,
        None => 0.0,
    };
    debug_assert!(KNOWN.iter().all(|k| !obj.contains_key(*k)));
    let extras: BTreeMap<String, Value> = obj.into_iter().collect();

    Ok(TaskSample {
        offline_trajectory: Some(Trajectory {
            task_id: task_id.clone(),
            steps,
            outcome,
            latency_s,
        }),
        task_id,
        payload,
        required_insights: insights,
        extras,
    })
}

fn take_string(
    obj: &mut Map<String, Value>,
    key: &str,
) -> std::result::Result<Option<String>, String> {
    match obj.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(format!("`{key}` must be a string, got {other}")),
    }
}
