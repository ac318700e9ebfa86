//! Execution trace: an ordered event log whose digest identifies a run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::value::{canonical_json, digest_hex, Schema, Value};

/// Writer name used for the initial-state commit.
pub const INIT_WRITER: &str = "$init";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Dispatch,
    Retry,
    Commit,
    Skip,
    Error,
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Position in the trace, starting at 1.
    pub logical_time: u64,
    pub kind: EventKind,
    pub node: String,
    /// SHA-256 of the canonical payload.
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
}

impl TraceEvent {
    pub fn canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("event serializes"))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecutionTrace {
    events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("event {0} is out of order")]
    OutOfOrder(u64),
    #[error("commit event for `{node}` does not decode: {detail}")]
    BadCommit { node: String, detail: String },
}

impl ExecutionTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<TraceEvent>) -> Result<Self, TraceError> {
        for (i, e) in events.iter().enumerate() {
            if e.logical_time != i as u64 + 1 {
                return Err(TraceError::OutOfOrder(e.logical_time));
            }
        }
        Ok(ExecutionTrace { events })
    }

    pub fn push(&mut self, kind: EventKind, node: &str, payload: Option<serde_json::Value>) -> &TraceEvent {
        let digest = match &payload {
            Some(p) => digest_hex(canonical_json(p).as_bytes()),
            None => digest_hex(b""),
        };
        self.push_with_digest(kind, node, digest, payload)
    }

    pub fn push_with_digest(
        &mut self,
        kind: EventKind,
        node: &str,
        digest: String,
        payload: Option<serde_json::Value>,
    ) -> &TraceEvent {
        let logical_time = self.events.len() as u64 + 1;
        self.events.push(TraceEvent { logical_time, kind, node: node.to_string(), digest, payload });
        self.events.last().expect("just pushed")
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events of one kind, in order.
    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Digest over all events except checkpoint markers, which depend on
    /// where a run was stopped rather than on what it computed.
    pub fn digest(&self) -> String {
        let mut text = String::new();
        for e in self.events.iter().filter(|e| e.kind != EventKind::Checkpoint) {
            let mut e = e.clone();
            e.logical_time = 0;
            text.push_str(&e.canonical_json());
            text.push('\n');
        }
        digest_hex(text.as_bytes())
    }

    /// One canonical JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.canonical_json());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: TraceEvent =
                serde_json::from_str(line).map_err(|err| TraceError::Parse { line: i + 1, detail: err.to_string() })?;
            events.push(e);
        }
        Self::from_events(events)
    }

    /// Final state obtained by folding every commit event, using `schema`
    /// (state keys plus node outputs) to decode values.
    pub fn replay_state(&self, schema: &Schema) -> Result<BTreeMap<String, Value>, TraceError> {
        let mut state = BTreeMap::new();
        for e in self.of_kind(EventKind::Commit) {
            let bad = |detail: String| TraceError::BadCommit { node: e.node.clone(), detail };
            let Some(payload) = &e.payload else { return Err(bad("missing payload".into())) };
            if e.node == INIT_WRITER {
                let obj = payload.get("value").and_then(|v| v.as_object()).ok_or_else(|| bad("not a record".into()))?;
                for (k, v) in obj {
                    let ty = schema.get(k).ok_or_else(|| bad(format!("unknown key `{k}`")))?;
                    state.insert(k.clone(), Value::from_json(v, ty).map_err(|err| bad(err.to_string()))?);
                }
            } else {
                let ty = schema.get(&e.node).ok_or_else(|| bad("no output type".into()))?;
                let v = payload.get("value").ok_or_else(|| bad("missing value".into()))?;
                state.insert(e.node.clone(), Value::from_json(v, ty).map_err(|err| bad(err.to_string()))?);
            }
        }
        Ok(state)
    }
}

/// Payload of a commit event.
pub(crate) fn commit_payload(value: &Value, selected: Option<&str>) -> serde_json::Value {
    let mut p = serde_json::json!({ "value": value.to_json() });
    if let Some(edge) = selected {
        p["selected"] = serde_json::Value::String(edge.to_string());
    }
    p
}
