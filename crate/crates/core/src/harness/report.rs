//! Post-run summaries built from a run directory.
//!
//! `report` replays `records.jsonl` onto an empty playbook, checks the result
//! against `playbook.json` (when present) and writes:
//!
//! - `report.json` — [`RunReport`]
//! - `quality_delay.csv` — one row per iteration, columns [`QUALITY_DELAY_HEADER`]
//! - `hr_histogram.csv` — entry counts per counter value, columns [`HISTOGRAM_HEADER`]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::{replay, Playbook};
use crate::error::{Error, Result};
use crate::pipeline::RunRecord;

pub const QUALITY_DELAY_HEADER: [&str; 10] = [
    "epoch",
    "iteration",
    "bs",
    "strategy",
    "cumulative_delay_s",
    "entries",
    "specific_insights",
    "token_size",
    "total_helpful",
    "total_harmful",
];

pub const HISTOGRAM_HEADER: [&str; 3] = ["counter", "value", "entries"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub iterations: usize,
    pub epochs: u64,
    pub total_delay_s: f64,
    pub curate_calls: usize,
    pub final_entries: usize,
    pub specific_insights: usize,
    pub token_size: u64,
    pub total_helpful: u64,
    pub total_harmful: u64,
    /// True when `playbook.json` was present and equal to the replay.
    pub replay_verified: bool,
}

pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let path = dir.join("records.jsonl");
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingRunData(format!(
                "{} not found",
                path.display()
            )))
        }
        Err(e) => return Err(Error::io(&path, e)),
    };
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: RunRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(r);
    }
    if records.is_empty() {
        return Err(Error::MissingRunData(format!(
            "{} has no records",
            path.display()
        )));
    }
    Ok(records)
}

/// Rebuilds the final playbook from the run's deltas.
pub fn replay_run(records: &[RunRecord]) -> Result<Playbook> {
    Ok(replay(&Playbook::new(), records.iter().map(|r| &r.delta))?)
}

pub fn report(dir: &Path) -> Result<RunReport> {
    let records = read_records(dir)?;
    let replayed = replay_run(&records)?;

    let stored_path = dir.join("playbook.json");
    let replay_verified = match fs::read_to_string(&stored_path) {
        Ok(text) => {
            let stored = Playbook::from_json(&text).map_err(|e| Error::json(&stored_path, e))?;
            if stored != replayed {
                return Err(Error::ReplayMismatch(stored_path));
            }
            true
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => false,
        Err(e) => return Err(Error::io(&stored_path, e)),
    };

    let last = records.last().expect("non-empty");
    let summary = RunReport {
        iterations: records.len(),
        epochs: last.epoch + 1,
        total_delay_s: records.iter().map(|r| r.delays.total_s).sum(),
        curate_calls: records.iter().map(|r| r.curate_calls).sum(),
        final_entries: replayed.len(),
        specific_insights: last.after.specific_insights,
        token_size: replayed.token_size(),
        total_helpful: replayed.total_helpful(),
        total_harmful: replayed.total_harmful(),
        replay_verified,
    };

    let json = serde_json::to_string_pretty(&summary).expect("report serializes") + "\n";
    let path = dir.join("report.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    write_quality_delay(&dir.join("quality_delay.csv"), &records)?;
    write_histogram(&dir.join("hr_histogram.csv"), &replayed)?;
    Ok(summary)
}

fn write_quality_delay(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(QUALITY_DELAY_HEADER)?;
    let mut elapsed = 0.0;
    for r in records {
        elapsed += r.delays.total_s;
        w.write_record([
            r.epoch.to_string(),
            r.iteration.to_string(),
            r.batch_size.to_string(),
            r.strategy.kind.to_string(),
            elapsed.to_string(),
            r.after.entries.to_string(),
            r.after.specific_insights.to_string(),
            r.after.token_size.to_string(),
            r.after.total_helpful.to_string(),
            r.after.total_harmful.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Histogram of helpful and harmful counters across entries.
pub fn hr_histogram(playbook: &Playbook) -> BTreeMap<(&'static str, u64), usize> {
    let mut h = BTreeMap::new();
    for e in playbook.entries() {
        *h.entry(("helpful", e.helpful)).or_insert(0) += 1;
        *h.entry(("harmful", e.harmful)).or_insert(0) += 1;
    }
    h
}

fn write_histogram(path: &Path, playbook: &Playbook) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HISTOGRAM_HEADER)?;
    for ((counter, value), n) in hr_histogram(playbook) {
        w.write_record([counter.to_string(), value.to_string(), n.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
