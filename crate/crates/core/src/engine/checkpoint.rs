//! Checkpoint files: the retired prefix of a run, sealed with a digest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ready::NodeStatus;
use super::trace::TraceEvent;
use crate::memory::StateEntry;
use crate::value::{canonical_json, digest_hex, Schema, Value};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub key: String,
    pub version: u64,
    pub value: serde_json::Value,
    pub writer: String,
    pub logical_time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetiredNode {
    pub node: String,
    pub status: NodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<String>,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    /// Canonical hash of the graph as submitted, before subgraph expansion.
    pub graph_hash: String,
    pub config_digest: String,
    pub initial_state: serde_json::Value,
    pub history: Vec<HistoryEntry>,
    /// Retired nodes in retirement order.
    pub retired: Vec<RetiredNode>,
    /// State logical time at which each layer's predecessors had all retired.
    pub horizons: Vec<Option<u64>>,
    pub commits: u64,
    pub trace: Vec<TraceEvent>,
}

#[derive(Serialize, Deserialize)]
struct Sealed {
    checkpoint: serde_json::Value,
    digest: String,
}

pub(crate) fn encode_history(history: &[StateEntry]) -> Vec<HistoryEntry> {
    history
        .iter()
        .map(|e| HistoryEntry {
            key: e.key.clone(),
            version: e.version,
            value: e.value.to_json(),
            writer: e.writer.clone(),
            logical_time: e.logical_time,
        })
        .collect()
}

/// Decodes history against state keys plus declared node outputs.
pub(crate) fn decode_history(entries: &[HistoryEntry], schema: &Schema) -> Result<Vec<StateEntry>, CheckpointError> {
    entries
        .iter()
        .map(|e| {
            let ty = schema.get(&e.key).ok_or_else(|| CheckpointError::Corrupt(format!("unknown key `{}`", e.key)))?;
            let value = Value::from_json(&e.value, ty).map_err(|err| CheckpointError::Corrupt(err.to_string()))?;
            Ok(StateEntry {
                key: e.key.clone(),
                version: e.version,
                value,
                writer: e.writer.clone(),
                logical_time: e.logical_time,
            })
        })
        .collect()
}

impl Checkpoint {
    pub fn to_json_string(&self) -> String {
        let body = serde_json::to_value(self).expect("checkpoint serializes");
        let digest = digest_hex(canonical_json(&body).as_bytes());
        let sealed = Sealed { checkpoint: body, digest };
        serde_json::to_string_pretty(&sealed).expect("sealed checkpoint serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, CheckpointError> {
        let sealed: Sealed = serde_json::from_str(text).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let actual = digest_hex(canonical_json(&sealed.checkpoint).as_bytes());
        if actual != sealed.digest {
            return Err(CheckpointError::Corrupt("digest mismatch".into()));
        }
        let cp: Checkpoint =
            serde_json::from_value(sealed.checkpoint).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        if cp.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Incompatible(format!("format {} is not supported", cp.format)));
        }
        Ok(cp)
    }

    /// Writes through a temporary file and a rename.
    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json_string()).map_err(|e| CheckpointError::Io(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| CheckpointError::Io(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Statuses of retired nodes.
    pub fn statuses(&self) -> BTreeMap<String, NodeStatus> {
        self.retired.iter().map(|r| (r.node.clone(), r.status)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            graph_hash: "g".into(),
            config_digest: "c".into(),
            initial_state: serde_json::json!({}),
            history: vec![HistoryEntry {
                key: "a".into(),
                version: 1,
                value: serde_json::json!({"x": 1}),
                writer: "a".into(),
                logical_time: 1,
            }],
            retired: vec![RetiredNode { node: "a".into(), status: NodeStatus::Completed, selected: None, attempts: 1 }],
            horizons: vec![Some(0), Some(1)],
            commits: 1,
            trace: vec![],
        }
    }

    #[test]
    fn round_trip() {
        let cp = sample();
        assert_eq!(Checkpoint::from_json_str(&cp.to_json_string()).unwrap(), cp);
    }

    #[test]
    fn tampering_is_detected() {
        let text = sample().to_json_string().replace("\"x\": 1", "\"x\": 2");
        assert!(matches!(Checkpoint::from_json_str(&text), Err(CheckpointError::Corrupt(_))));
        assert!(matches!(Checkpoint::from_json_str("{"), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.json");
        sample().write(&path).unwrap();
        assert_eq!(Checkpoint::read(&path).unwrap(), sample());
        assert!(matches!(Checkpoint::read(&dir.path().join("none")), Err(CheckpointError::Io(_))));
    }
}
