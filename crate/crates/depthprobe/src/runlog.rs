//! Append-only run log: one JSON event per line, dense sequence numbers,
//! fsynced at every depth summary. Replaying a log reconstructs the run
//! state exactly, which is what powers `resume` and offline reporting.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DepthConfig, SpecificityTier, VerifiedFact};
use crate::llm::UsageRecord;
use crate::stats::StopReason;
use crate::util::utc_now_iso8601;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("log encode: {0}")]
    Encode(#[from] serde_json::Error),
    #[error("corrupt log at sequence {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
}

/// Serializable snapshot of the engine's rng stream. The generator is always
/// seeded from `seed`; restoring `word_pos` reproduces all future draws.
/// The position is stored as a decimal string (JSON has no u128).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: u64,
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &u128, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&value.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<u128, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigPayload {
    pub config: DepthConfig,
    pub target_model: String,
    pub evaluator_model: String,
    pub prompt_version: String,
    /// Service-specific context a resume needs to rebuild the run, e.g. the
    /// synthetic accuracy profile of a simulated run.
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub annotations: std::collections::BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchesPayload {
    pub directions: Vec<String>,
    pub requested: u32,
    pub shortfall: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub usage: Vec<UsageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPayload {
    pub depth: u32,
    /// path id -> question quota, in canonical (sorted) order.
    pub assignments: std::collections::BTreeMap<String, u32>,
    pub total: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactPayload {
    pub depth: u32,
    pub path_id: String,
    pub direction: String,
    pub found: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact: Option<VerifiedFact>,
    pub reformulations_used: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub usage: Vec<UsageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionPayload {
    pub depth: u32,
    pub path_id: String,
    pub tier: SpecificityTier,
    pub pass: u32,
    pub text: String,
    pub reference_answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub usage: Vec<UsageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerPayload {
    pub depth: u32,
    pub path_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub usage: Vec<UsageRecord>,
}

/// Probe outcome as recorded in the log. UNSCORED marks infrastructure
/// failures (evaluator or provider), which are excluded from accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LoggedOutcome {
    Correct,
    Incorrect,
    NoFact,
    Unscored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictPayload {
    pub depth: u32,
    pub path_id: String,
    pub outcome: LoggedOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    /// Concepts extracted from a correct answer; the node's future children.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub child_directions: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub usage: Vec<UsageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSummaryPayload {
    pub depth: u32,
    pub asked: u32,
    pub correct: u32,
    pub no_fact: u32,
    pub unscored: u32,
    pub accuracy: f64,
    pub survival: f64,
    /// Rng stream position after this depth; resume restarts from here.
    pub rng_state: RngSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopPayload {
    pub reason: StopReason,
    pub final_depth: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    #[serde(rename = "CONFIG")]
    Config(ConfigPayload),
    #[serde(rename = "BRANCHES")]
    Branches(BranchesPayload),
    #[serde(rename = "ALLOCATION")]
    Allocation(AllocationPayload),
    #[serde(rename = "FACT")]
    Fact(FactPayload),
    #[serde(rename = "QUESTION")]
    Question(QuestionPayload),
    #[serde(rename = "ANSWER")]
    Answer(AnswerPayload),
    #[serde(rename = "VERDICT")]
    Verdict(VerdictPayload),
    #[serde(rename = "DEPTH_SUMMARY")]
    DepthSummary(DepthSummaryPayload),
    #[serde(rename = "STOP")]
    Stop(StopPayload),
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Config(_) => "CONFIG",
            EventBody::Branches(_) => "BRANCHES",
            EventBody::Allocation(_) => "ALLOCATION",
            EventBody::Fact(_) => "FACT",
            EventBody::Question(_) => "QUESTION",
            EventBody::Answer(_) => "ANSWER",
            EventBody::Verdict(_) => "VERDICT",
            EventBody::DepthSummary(_) => "DEPTH_SUMMARY",
            EventBody::Stop(_) => "STOP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEvent {
    pub seq: u64,
    pub ts: String,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Where events go as the run produces them.
pub trait EventSink {
    fn append(&mut self, event: &RunLogEvent) -> Result<(), LogError>;
    /// Durability point; called after depth summaries and stop events.
    fn sync(&mut self) -> Result<(), LogError> {
        Ok(())
    }
}

/// Collects events in memory (sweeps, tests).
#[derive(Default)]
pub struct MemorySink {
    pub events: Vec<RunLogEvent>,
}

impl EventSink for MemorySink {
    fn append(&mut self, event: &RunLogEvent) -> Result<(), LogError> {
        self.events.push(event.clone());
        Ok(())
    }
}

/// Line-delimited JSON file sink, fsynced on demand.
pub struct JsonlSink {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl JsonlSink {
    /// Creates or truncates the log file.
    pub fn create(path: impl Into<PathBuf>) -> Result<JsonlSink, LogError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)?;
        Ok(JsonlSink {
            path,
            writer: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventSink for JsonlSink {
    fn append(&mut self, event: &RunLogEvent) -> Result<(), LogError> {
        serde_json::to_writer(&mut self.writer, event)?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    fn sync(&mut self) -> Result<(), LogError> {
        self.writer.flush()?;
        self.writer.get_ref().sync_data()?;
        Ok(())
    }
}

/// Builds sequenced, timestamped events on top of any sink.
pub struct EventLog<'a> {
    sink: &'a mut dyn EventSink,
    next_seq: u64,
    events: Vec<RunLogEvent>,
}

impl<'a> EventLog<'a> {
    pub fn new(sink: &'a mut dyn EventSink) -> EventLog<'a> {
        EventLog {
            sink,
            next_seq: 0,
            events: Vec::new(),
        }
    }

    /// Seeds the log with already-written events (resume): they are retained
    /// for reporting but not re-appended to the sink.
    pub fn with_prefix(sink: &'a mut dyn EventSink, prefix: Vec<RunLogEvent>) -> EventLog<'a> {
        let next_seq = prefix.last().map(|e| e.seq + 1).unwrap_or(0);
        EventLog {
            sink,
            next_seq,
            events: prefix,
        }
    }

    pub fn append(&mut self, body: EventBody) -> Result<&RunLogEvent, LogError> {
        let event = RunLogEvent {
            seq: self.next_seq,
            ts: utc_now_iso8601(),
            body,
        };
        self.sink.append(&event)?;
        self.next_seq += 1;
        self.events.push(event);
        Ok(self.events.last().unwrap())
    }

    pub fn sync(&mut self) -> Result<(), LogError> {
        self.sink.sync()
    }

    pub fn events(&self) -> &[RunLogEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<RunLogEvent> {
        self.events
    }
}

/// Parses a JSONL log file.
pub fn read_log(path: &Path) -> Result<Vec<RunLogEvent>, LogError> {
    let text = std::fs::read_to_string(path)?;
    parse_log(&text)
}

pub fn parse_log(text: &str) -> Result<Vec<RunLogEvent>, LogError> {
    let mut events = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: RunLogEvent = serde_json::from_str(line).map_err(|e| LogError::CorruptLog {
            seq: idx as u64,
            reason: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

/// Structural validation: nonempty, starts with CONFIG, densely sequenced.
pub fn validate_log(events: &[RunLogEvent]) -> Result<(), LogError> {
    if events.is_empty() {
        return Err(LogError::CorruptLog {
            seq: 0,
            reason: "log is empty".to_string(),
        });
    }
    if !matches!(events[0].body, EventBody::Config(_)) {
        return Err(LogError::CorruptLog {
            seq: events[0].seq,
            reason: "first event is not CONFIG".to_string(),
        });
    }
    for (idx, event) in events.iter().enumerate() {
        if event.seq != idx as u64 {
            return Err(LogError::CorruptLog {
                seq: event.seq,
                reason: format!("expected sequence {idx}"),
            });
        }
    }
    Ok(())
}

/// Serializes events one per line with timestamps normalized out, for
/// byte-level determinism comparisons.
pub fn canonical_lines(events: &[RunLogEvent]) -> String {
    let mut out = String::new();
    for event in events {
        let mut clone = event.clone();
        clone.ts = String::new();
        out.push_str(&serde_json::to_string(&clone).unwrap());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_event() -> EventBody {
        EventBody::Config(ConfigPayload {
            config: DepthConfig::for_topic("Influenza"),
            target_model: "target".to_string(),
            evaluator_model: "eval".to_string(),
            prompt_version: "prompts-v1".to_string(),
            annotations: Default::default(),
        })
    }

    #[test]
    fn append_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut sink = JsonlSink::create(&path).unwrap();
        let mut log = EventLog::new(&mut sink);
        log.append(config_event()).unwrap();
        log.append(EventBody::Branches(BranchesPayload {
            directions: vec!["Influenza causes".to_string()],
            requested: 1,
            shortfall: 0,
            usage: Vec::new(),
        }))
        .unwrap();
        log.sync().unwrap();
        let written = log.into_events();

        let read = read_log(&path).unwrap();
        validate_log(&read).unwrap();
        assert_eq!(read.len(), 2);
        assert_eq!(read[0].seq, 0);
        assert_eq!(read[1].seq, 1);
        assert_eq!(canonical_lines(&read), canonical_lines(&written));
    }

    #[test]
    fn empty_log_is_corrupt() {
        let err = validate_log(&[]).unwrap_err();
        assert!(matches!(err, LogError::CorruptLog { seq: 0, .. }));
    }

    #[test]
    fn non_config_head_is_corrupt() {
        let events = vec![RunLogEvent {
            seq: 0,
            ts: String::new(),
            body: EventBody::Stop(StopPayload {
                reason: StopReason::Threshold,
                final_depth: 1,
            }),
        }];
        assert!(validate_log(&events).is_err());
    }

    #[test]
    fn sparse_sequences_are_corrupt() {
        let events = vec![
            RunLogEvent {
                seq: 0,
                ts: String::new(),
                body: config_event(),
            },
            RunLogEvent {
                seq: 2,
                ts: String::new(),
                body: EventBody::Stop(StopPayload {
                    reason: StopReason::Threshold,
                    final_depth: 1,
                }),
            },
        ];
        let err = validate_log(&events).unwrap_err();
        assert!(matches!(err, LogError::CorruptLog { seq: 2, .. }));
    }

    #[test]
    fn kind_tags_serialize_screaming_snake() {
        let event = RunLogEvent {
            seq: 0,
            ts: "t".to_string(),
            body: EventBody::DepthSummary(DepthSummaryPayload {
                depth: 1,
                asked: 5,
                correct: 4,
                no_fact: 0,
                unscored: 0,
                accuracy: 0.8,
                survival: 0.8,
                rng_state: RngSnapshot {
                    seed: 42,
                    word_pos: 16,
                },
            }),
        };
        let json = serde_json::to_string(&event).unwrap();
        assert!(json.contains("\"kind\":\"DEPTH_SUMMARY\""));
        assert!(json.contains("\"word_pos\":\"16\""));
        let back: RunLogEvent = serde_json::from_str(&json).unwrap();
        assert_eq!(back, event);
    }
}
