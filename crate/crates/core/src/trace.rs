//! Replayable run traces: a versioned header, one record per round, and a
//! terminal verdict, serialized as line-delimited JSON.

use serde::{Deserialize, Serialize};

use crate::harness::{Scenario, Verdict};
use crate::particle::{MessageKind, ParticleState};
use crate::SimError;

pub const TRACE_FORMAT: &str = "linerecovery-trace/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t")]
pub enum TraceLine {
    #[serde(rename = "header")]
    Header { format: String, scenario: Scenario },
    #[serde(rename = "round")]
    Round(RoundRecord),
    #[serde(rename = "verdict")]
    Verdict { verdict: Verdict },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub activated: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<RoundEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflicts: Vec<ConflictRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

impl RoundRecord {
    pub fn new(round: u64, activated: Vec<u32>) -> Self {
        RoundRecord { round, activated, events: Vec::new(), conflicts: Vec::new(), violations: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "e")]
pub enum RoundEvent {
    #[serde(rename = "state")]
    State {
        id: u32,
        from: ParticleState,
        to: ParticleState,
        #[serde(skip_serializing_if = "Option::is_none")]
        cause: Option<MessageKind>,
    },
    #[serde(rename = "move")]
    Move { id: u32, head: (i32, i32), tail: (i32, i32) },
    #[serde(rename = "handover")]
    Handover { puller: u32, moved: u32 },
    #[serde(rename = "dropped")]
    DroppedSend { from: u32, kind: MessageKind, why: String },
    #[serde(rename = "warn")]
    Warning { id: u32, what: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "c")]
pub enum ConflictRecord {
    /// Rule: several expansions aimed at one node; the scheduler picked one.
    #[serde(rename = "expansion")]
    ExpansionRace { node: (i32, i32), winner: u32, loser: u32 },
    /// Rule: several handovers forcing one particle; one succeeded.
    #[serde(rename = "handover")]
    HandoverContention { target: u32, winner: u32, loser: u32 },
    /// Rule: a handover against a particle moving on its own failed.
    #[serde(rename = "refused")]
    HandoverRefused { by: u32, loser: u32 },
    /// Divergent simultaneous writes to one slot, ordered by the scheduler.
    #[serde(rename = "write")]
    WriteOrder { receiver: u32, kind: MessageKind, winner: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub scenario: Scenario,
    pub rounds: Vec<RoundRecord>,
    pub verdict: Verdict,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = TraceLine::Header {
            format: TRACE_FORMAT.to_string(),
            scenario: self.scenario.clone(),
        };
        out.push_str(&serde_json::to_string(&header).expect("serializable"));
        out.push('\n');
        for r in &self.rounds {
            out.push_str(&serde_json::to_string(&TraceLine::Round(r.clone())).expect("serializable"));
            out.push('\n');
        }
        out.push_str(
            &serde_json::to_string(&TraceLine::Verdict { verdict: self.verdict.clone() })
                .expect("serializable"),
        );
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, SimError> {
        let mut scenario = None;
        let mut rounds = Vec::new();
        let mut verdict = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(line)
                .map_err(|e| SimError::TraceFormat(format!("line {}: {}", i + 1, e)))?;
            match parsed {
                TraceLine::Header { format, scenario: s } => {
                    if format != TRACE_FORMAT {
                        return Err(SimError::TraceFormat(format!(
                            "unsupported trace format {format:?}"
                        )));
                    }
                    scenario = Some(s);
                }
                TraceLine::Round(r) => rounds.push(r),
                TraceLine::Verdict { verdict: v } => verdict = Some(v),
            }
        }
        Ok(Trace {
            scenario: scenario.ok_or_else(|| SimError::TraceFormat("missing header".into()))?,
            rounds,
            verdict: verdict.ok_or_else(|| SimError::TraceFormat("missing verdict".into()))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Outcome, Scenario, Verdict};
    use crate::scheduler::SchedulerPolicy;

    fn sample() -> Trace {
        Trace {
            scenario: Scenario {
                n: 6,
                fault_mask: vec![false; 6],
                seed: 7,
                policy: SchedulerPolicy::FullSync,
                max_rounds: 100,
                fairness_window: 6,
            },
            rounds: vec![RoundRecord::new(0, vec![0, 1, 2])],
            verdict: Verdict { outcome: Outcome::Timeout, rounds: 100, detail: None },
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let t = sample();
        let text = t.to_jsonl();
        let back = Trace::from_jsonl(&text).unwrap();
        assert_eq!(t, back);
        // stable re-serialization, byte for byte
        assert_eq!(text, back.to_jsonl());
    }

    #[test]
    fn truncated_trace_rejected() {
        let t = sample();
        let text = t.to_jsonl();
        let cut = &text[..text.len() / 2];
        assert!(Trace::from_jsonl(cut).is_err());
    }
}
