//! The learnable context artifact: a sectioned playbook of entries carrying
//! helpful/harmful utility counters, the delta language that mutates it, and
//! token accounting.
//!
//! Playbooks are immutable snapshots. The only way to produce a new version is
//! [`apply_delta`], which validates every referenced id and bumps `version` by
//! exactly one.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Characters per token for the fixed size heuristic.
const CHARS_PER_TOKEN: usize = 4;

/// Token estimate for a piece of text: `ceil(chars / 4)`.
///
/// Counts Unicode scalar values, not bytes, so the estimate does not depend on
/// encoding.
pub fn estimate_tokens(text: &str) -> u64 {
    let chars = text.chars().count();
    chars.div_ceil(CHARS_PER_TOKEN) as u64
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContextError {
    #[error("unknown entry id `{0}`")]
    UnknownEntryId(String),
    #[error("duplicate entry id `{0}`")]
    DuplicateEntryId(String),
    #[error("entry `{0}` has empty text")]
    EmptyText(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Strategies,
    Formulas,
    Mistakes,
    ContextClues,
    Others,
}

impl Section {
    pub const ALL: [Section; 5] = [
        Section::Strategies,
        Section::Formulas,
        Section::Mistakes,
        Section::ContextClues,
        Section::Others,
    ];

    /// Lenient parse used for model replies; anything unrecognised is `Others`.
    pub fn parse_lenient(s: &str) -> Section {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "strategies" | "strategy" | "strategiesandhardrules" => Section::Strategies,
            "formulas" | "formula" | "formulasandcalculations" => Section::Formulas,
            "mistakes" | "commonmistakes" | "commonmistakestoavoid" => Section::Mistakes,
            "contextclues" | "contextcluesandindicators" => Section::ContextClues,
            _ => Section::Others,
        }
    }

    pub fn heading(self) -> &'static str {
        match self {
            Section::Strategies => "Strategies and Hard Rules",
            Section::Formulas => "Formulas and Calculations",
            Section::Mistakes => "Common Mistakes to Avoid",
            Section::ContextClues => "Context Clues and Indicators",
            Section::Others => "Others",
        }
    }

    /// Prefix used when allocating entry ids, e.g. `calc-00001`.
    pub fn id_prefix(self) -> &'static str {
        match self {
            Section::Strategies => "strat",
            Section::Formulas => "calc",
            Section::Mistakes => "err",
            Section::ContextClues => "ctx",
            Section::Others => "misc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaybookEntry {
    pub id: String,
    pub section: Section,
    pub text: String,
    /// Simulation linkage to the insights this entry encodes. Empty for entries
    /// written by a live model.
    #[serde(default)]
    pub insight_ids: BTreeSet<String>,
    pub helpful: u64,
    pub harmful: u64,
    pub created_iter: u64,
}

impl PlaybookEntry {
    pub fn new(id: impl Into<String>, section: Section, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            section,
            text: text.into(),
            insight_ids: BTreeSet::new(),
            helpful: 0,
            harmful: 0,
            created_iter: 0,
        }
    }

    pub fn with_insight(mut self, insight_id: impl Into<String>) -> Self {
        self.insight_ids.insert(insight_id.into());
        self
    }

    pub fn created_at(mut self, iteration: u64) -> Self {
        self.created_iter = iteration;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum DeltaOp {
    Add { entry: PlaybookEntry },
    AmendText { id: String, text: String },
    IncrementHelpful { id: String },
    IncrementHarmful { id: String },
    Remove { id: String },
}

/// One context update. Ops are applied in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextDelta {
    pub ops: Vec<DeltaOp>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub adds: usize,
    pub amends: usize,
    pub helpful_marks: usize,
    pub harmful_marks: usize,
    pub removes: usize,
}

impl ContextDelta {
    pub fn new(ops: Vec<DeltaOp>) -> Self {
        Self { ops }
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn summary(&self) -> DeltaSummary {
        let mut s = DeltaSummary::default();
        for op in &self.ops {
            match op {
                DeltaOp::Add { .. } => s.adds += 1,
                DeltaOp::AmendText { .. } => s.amends += 1,
                DeltaOp::IncrementHelpful { .. } => s.helpful_marks += 1,
                DeltaOp::IncrementHarmful { .. } => s.harmful_marks += 1,
                DeltaOp::Remove { .. } => s.removes += 1,
            }
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Playbook {
    entries: Vec<PlaybookEntry>,
    token_size: u64,
    version: u64,
}

impl Playbook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[PlaybookEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn token_size(&self) -> u64 {
        self.token_size
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn get(&self, id: &str) -> Option<&PlaybookEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// First entry linked to `insight_id`, if any.
    pub fn entry_for_insight(&self, insight_id: &str) -> Option<&PlaybookEntry> {
        self.entries
            .iter()
            .find(|e| e.insight_ids.contains(insight_id))
    }

    pub fn has_insight(&self, insight_id: &str) -> bool {
        self.entry_for_insight(insight_id).is_some()
    }

    /// All insight ids linked from any entry.
    pub fn insight_ids(&self) -> BTreeSet<&str> {
        self.entries
            .iter()
            .flat_map(|e| e.insight_ids.iter().map(String::as_str))
            .collect()
    }

    pub fn total_helpful(&self) -> u64 {
        self.entries.iter().map(|e| e.helpful).sum()
    }

    pub fn total_harmful(&self) -> u64 {
        self.entries.iter().map(|e| e.harmful).sum()
    }

    /// Next free sequence number for id allocation: one past the largest
    /// numeric suffix among current ids.
    pub fn next_seq(&self) -> u64 {
        self.entries
            .iter()
            .filter_map(|e| e.id.rsplit('-').next()?.parse::<u64>().ok())
            .max()
            .map_or(1, |m| m + 1)
    }

    /// Validates a deserialized playbook and recomputes `token_size`.
    pub fn from_entries(entries: Vec<PlaybookEntry>, version: u64) -> Result<Self, ContextError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if e.text.is_empty() {
                return Err(ContextError::EmptyText(e.id.clone()));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(ContextError::DuplicateEntryId(e.id.clone()));
            }
        }
        let mut pb = Self {
            entries,
            token_size: 0,
            version,
        };
        pb.token_size = pb.recount_tokens();
        Ok(pb)
    }

    fn recount_tokens(&self) -> u64 {
        self.entries.iter().map(|e| estimate_tokens(&e.text)).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("playbook serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        let raw: Playbook = serde_json::from_str(s)?;
        Self::from_entries(raw.entries, raw.version)
            .map_err(|e| serde::de::Error::custom(e.to_string()))
    }

    /// Human-readable export grouped by section, one `[id] h=.. r=..` line
    /// per entry.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Playbook\n\n");
        let _ = writeln!(
            out,
            "Total context entries: {} | Tokens: {} | Version: {}\n",
            self.entries.len(),
            self.token_size,
            self.version
        );
        for section in Section::ALL {
            let mut in_section = self
                .entries
                .iter()
                .filter(|e| e.section == section)
                .peekable();
            if in_section.peek().is_none() {
                continue;
            }
            let _ = writeln!(out, "## {}\n", section.heading());
            for e in in_section {
                let text = e.text.replace('\n', " ");
                let _ = writeln!(out, "- [{}] h={} r={} {}", e.id, e.helpful, e.harmful, text);
            }
            out.push('\n');
        }
        out
    }
}

/// Applies `delta` to `playbook`, returning the next version.
///
/// Ops run in order against a working copy, so an `Add` may be referenced by
/// later ops of the same delta. The input is never modified; any error leaves
/// the caller's snapshot intact.
pub fn apply_delta(playbook: &Playbook, delta: &ContextDelta) -> Result<Playbook, ContextError> {
    let mut entries = playbook.entries.clone();
    let mut index: HashMap<String, usize> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.clone(), i))
        .collect();

    fn slot(index: &HashMap<String, usize>, id: &str) -> Result<usize, ContextError> {
        index
            .get(id)
            .copied()
            .ok_or_else(|| ContextError::UnknownEntryId(id.to_string()))
    }

    for op in &delta.ops {
        match op {
            DeltaOp::Add { entry } => {
                if entry.text.is_empty() {
                    return Err(ContextError::EmptyText(entry.id.clone()));
                }
                if index.contains_key(&entry.id) {
                    return Err(ContextError::DuplicateEntryId(entry.id.clone()));
                }
                index.insert(entry.id.clone(), entries.len());
                entries.push(entry.clone());
            }
            DeltaOp::AmendText { id, text } => {
                if text.is_empty() {
                    return Err(ContextError::EmptyText(id.clone()));
                }
                let i = slot(&index, id)?;
                entries[i].text = text.clone();
            }
            DeltaOp::IncrementHelpful { id } => {
                let i = slot(&index, id)?;
                entries[i].helpful += 1;
            }
            DeltaOp::IncrementHarmful { id } => {
                let i = slot(&index, id)?;
                entries[i].harmful += 1;
            }
            DeltaOp::Remove { id } => {
                let i = slot(&index, id)?;
                entries.remove(i);
                index = entries
                    .iter()
                    .enumerate()
                    .map(|(i, e)| (e.id.clone(), i))
                    .collect();
            }
        }
    }

    let mut next = Playbook {
        entries,
        token_size: 0,
        version: playbook.version + 1,
    };
    next.token_size = next.recount_tokens();
    Ok(next)
}

/// Replays a sequence of deltas from `start`.
pub fn replay<'a>(
    start: &Playbook,
    deltas: impl IntoIterator<Item = &'a ContextDelta>,
) -> Result<Playbook, ContextError> {
    deltas
        .into_iter()
        .try_fold(start.clone(), |pb, d| apply_delta(&pb, d))
}
