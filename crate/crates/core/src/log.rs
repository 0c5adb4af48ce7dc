//! The append-only episode log: one JSON object per line, covering world
//! events, prompts, raw responses, decisions, per-round snapshots, and a
//! final state hash. A log is self-describing (the header embeds the full
//! resolved scenario) and replayable: folding its world events over the
//! initial state reproduces the final state byte-for-byte, which
//! [`EpisodeLog::replay`] verifies against the recorded hash.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::PromptKind;
use crate::scenario::ScenarioConfig;
use crate::substrate::{
    EntityKind, GridState, MapError, Orientation, Position, WorldConfig, WorldEvent,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub id: String,
    pub kind: EntityKind,
    pub position: Position,
    pub orientation: Orientation,
}

/// First line of every log: everything needed to reconstruct the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub provider: String,
    pub map_ascii: String,
    pub world: WorldConfig,
    pub roster: Vec<RosterEntry>,
}

/// Live metrics snapshot written at each round end; the metrics module
/// recomputes the same numbers from the raw events.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub apples_available: u32,
    pub rewards: BTreeMap<String, f64>,
    pub focal_primitive_moves: u64,
    pub entity_moves: BTreeMap<String, u64>,
    pub attacks_attempted: BTreeMap<String, u32>,
    pub attacks_hit: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum RecordBody {
    Header(Box<Header>),
    Event(WorldEvent),
    Prompt { agent: String, template: PromptKind, model: String, text: String },
    Response { agent: String, template: PromptKind, text: String },
    Decision {
        agent: String,
        action: String,
        fallback: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    Note {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent: Option<String>,
        text: String,
    },
    Round { completed: u32 },
    Snapshot(MetricsSnapshot),
    MemoryDump { agent: String, records: Vec<MemoryDumpRecord> },
    /// Final record: why the episode ended, the hash of the final state,
    /// and a running hash over the serialized event stream. The state hash
    /// alone would not catch a flipped intermediate event, because moves
    /// carry absolute positions and the fold self-corrects.
    End { terminal: String, state_hash: String, events_hash: String },
}

/// Long-term memory record as dumped into the log. Embeddings are omitted:
/// they are a deterministic function of the text under the hash embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryDumpRecord {
    pub id: u64,
    pub kind: crate::memory::MemoryKind,
    pub text: String,
    pub created_at: NaiveDateTime,
    pub poignancy: f64,
}

/// One log line: game time, primitive-move counter, completed rounds, and
/// the typed payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: String,
    pub step: u64,
    pub round: u32,
    #[serde(flatten)]
    pub body: RecordBody,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("log is empty")]
    Empty,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("log has no header record")]
    MissingHeader,
    #[error("log has no end record (truncated?)")]
    MissingEnd,
    #[error("replayed state hash {computed} does not match recorded {expected}")]
    HashMismatch { expected: String, computed: String },
    #[error("event stream hash {computed} does not match recorded {expected}")]
    EventStreamMismatch { expected: String, computed: String },
    #[error("header map does not load: {0}")]
    Map(#[from] MapError),
    #[error("event replay failed: {0}")]
    Event(String),
}

/// An episode's full record stream, kept in memory while the episode runs
/// and written as JSON lines afterwards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub records: Vec<LogRecord>,
}

impl EpisodeLog {
    pub fn new() -> Self {
        EpisodeLog::default()
    }

    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn header(&self) -> Option<&Header> {
        self.records.iter().find_map(|r| match &r.body {
            RecordBody::Header(h) => Some(h.as_ref()),
            _ => None,
        })
    }

    pub fn end(&self) -> Option<(&str, &str, &LogRecord)> {
        self.records.iter().find_map(|r| match &r.body {
            RecordBody::End { terminal, state_hash, .. } => {
                Some((terminal.as_str(), state_hash.as_str(), r))
            }
            _ => None,
        })
    }

    /// Running SHA-256 over the serialized world events of this log.
    pub fn events_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (_, event) in self.events() {
            hasher.update(serde_json::to_vec(event).expect("events serialize"));
            hasher.update([b'\n']);
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn events(&self) -> impl Iterator<Item = (&LogRecord, &WorldEvent)> {
        self.records.iter().filter_map(|r| match &r.body {
            RecordBody::Event(e) => Some((r, e)),
            _ => None,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("log records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<EpisodeLog, LogError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(line)
                .map_err(|source| LogError::Json { line: i + 1, source })?;
            records.push(record);
        }
        if records.is_empty() {
            return Err(LogError::Empty);
        }
        Ok(EpisodeLog { records })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), LogError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<EpisodeLog, LogError> {
        EpisodeLog::parse(&std::fs::read_to_string(path)?)
    }

    /// Reconstructs the world exactly as the episode started from the
    /// header: map, resolved world rules, clock, and initial placements.
    pub fn initial_state(&self) -> Result<GridState, ReplayError> {
        let header = self.header().ok_or(ReplayError::MissingHeader)?;
        let mut state = GridState::load_map(&header.map_ascii, header.world.clone())?;
        state.clock = header.scenario.clock_start;
        for entry in &header.roster {
            state
                .add_entity(&entry.id, entry.kind, entry.position, entry.orientation)
                .map_err(|e| ReplayError::Event(e.to_string()))?;
        }
        Ok(state)
    }

    /// Folds every world event over the initial state, checks the result
    /// against the recorded final hash, and returns the reconstructed
    /// state. `visit` sees the state *before* each record is applied.
    pub fn replay_with(
        &self,
        mut visit: impl FnMut(&GridState, &LogRecord),
    ) -> Result<GridState, ReplayError> {
        let mut state = self.initial_state()?;
        let header = self.header().expect("initial_state checked the header");
        let mut end: Option<(&str, &str, &LogRecord)> = None;
        for record in &self.records {
            visit(&state, record);
            match &record.body {
                RecordBody::Event(event) => state.apply_event(event),
                RecordBody::Round { completed } => {
                    state.round = *completed;
                    state.clock = header.scenario.clock_start
                        + chrono::Duration::hours(
                            i64::from(*completed)
                                * i64::from(header.scenario.clock_increment_hours),
                        );
                }
                RecordBody::End { state_hash, events_hash, .. } => {
                    end = Some((state_hash, events_hash, record));
                }
                _ => {}
            }
        }
        let (state_expected, events_expected, end_record) = end.ok_or(ReplayError::MissingEnd)?;
        let events_computed = self.events_hash();
        if events_computed != events_expected {
            return Err(ReplayError::EventStreamMismatch {
                expected: events_expected.to_string(),
                computed: events_computed,
            });
        }
        // Skipped scheduled moves leave no event, so the primitive-move
        // counter comes from the end record's envelope.
        state.step = end_record.step;
        let computed = state.state_hash();
        if computed != state_expected {
            return Err(ReplayError::HashMismatch {
                expected: state_expected.to_string(),
                computed,
            });
        }
        Ok(state)
    }

    pub fn replay(&self) -> Result<GridState, ReplayError> {
        self.replay_with(|_, _| {})
    }
}

/// Stamps record bodies with the current game time, step, and round as
/// they are appended. Built fresh wherever the current state is known.
pub struct Recorder<'a> {
    log: &'a mut EpisodeLog,
    t: String,
    step: u64,
    round: u32,
}

impl<'a> Recorder<'a> {
    pub fn new(log: &'a mut EpisodeLog, state: &GridState) -> Self {
        Recorder {
            log,
            t: crate::textifier::format_datetime(state.clock),
            step: state.step,
            round: state.round,
        }
    }

    pub fn push(&mut self, body: RecordBody) {
        self.log.push(LogRecord { t: self.t.clone(), step: self.step, round: self.round, body });
    }
}
