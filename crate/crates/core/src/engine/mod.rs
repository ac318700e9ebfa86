//! Deterministic execution of validated workflow graphs.
//!
//! Nodes run on a bounded worker pool, but their effects (state commits and
//! trace events) are retired strictly in `(layer, id)` order. Nodes that read
//! workflow state see a snapshot taken once every lower layer has retired, so
//! the trace and the final state do not depend on worker count or timing.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod ready;
pub mod recovery;
mod scheduler;
pub mod trace;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{ExecutionConfig, DEFAULT_WATCHDOG_MS};
pub use metrics::{peak_memory_kb, throughput_opm, BatchMetrics, NodeMetrics, RunMetrics};
pub use ready::{aggregate_join, compute_ready, edge_state, readiness, route_branch, EdgeState, NodeStatus, Progress, Readiness, RouteError};
pub use recovery::{apply_recovery, PolicyError, Recoverable, RecoveryAction, RecoveryPolicy};
pub use scheduler::{default_connectors, execute, resume, Runtime};
pub use trace::{EventKind, ExecutionTrace, TraceError, TraceEvent, INIT_WRITER};

use crate::graph::{InlineError, ValidationReport};
use crate::memory::StateEntry;
use crate::nodes::ModelError;
use crate::value::Value;

/// Who a failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    /// Routing, data flow, state or scheduling. Should never happen in a
    /// validated graph except through guard evaluation at run time.
    Framework,
    /// The model produced something unusable.
    Model,
    /// A tool, connector or provider transport failed.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    ToolTimeout,
    ToolFailed,
    ToolInput,
    ToolOutput,
    ToolUnregistered,
    ModelOutput,
    IterationLimit,
    Provider,
    StateRead,
    NoBranchTaken,
    GuardEval,
    AggregateUnsatisfiable,
    EdgeTransform,
    StateCommit,
    Stall,
    Cancelled,
}

impl FailureKind {
    pub fn class(self) -> FailureClass {
        use FailureKind::*;
        match self {
            ModelOutput | IterationLimit => FailureClass::Model,
            ToolTimeout | ToolFailed | ToolOutput | Provider | Stall | Cancelled => FailureClass::External,
            ToolInput | ToolUnregistered | StateRead | NoBranchTaken | GuardEval | AggregateUnsatisfiable
            | EdgeTransform | StateCommit => FailureClass::Framework,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("node `{node}` failed ({kind:?}): {message}")]
pub struct NodeFailure {
    pub node: String,
    pub kind: FailureKind,
    pub message: String,
}

impl NodeFailure {
    pub fn new(node: &str, kind: FailureKind, message: impl Into<String>) -> Self {
        NodeFailure { node: node.to_string(), kind, message: message.into() }
    }

    pub fn class(&self) -> FailureClass {
        self.kind.class()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    Failed { failure: NodeFailure },
    /// No worker reported progress within the watchdog interval.
    Stalled { nodes: Vec<String>, waited_ms: u64 },
    /// Stopped on request after a number of node commits.
    Interrupted { commits: u64 },
}

impl RunOutcome {
    pub fn failure_class(&self) -> Option<FailureClass> {
        match self {
            RunOutcome::Completed | RunOutcome::Interrupted { .. } => None,
            RunOutcome::Failed { failure } => Some(failure.class()),
            RunOutcome::Stalled { .. } => Some(FailureKind::Stall.class()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRun {
    pub status: NodeStatus,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub outcome: RunOutcome,
    pub final_state: BTreeMap<String, Value>,
    pub history: Vec<StateEntry>,
    pub trace: ExecutionTrace,
    pub node_runs: BTreeMap<String, NodeRun>,
    pub metrics: RunMetrics,
    /// Tools actually executed on behalf of agents, as (node, tool).
    pub agent_tool_calls: Vec<(String, String)>,
    pub model_errors: Vec<(String, ModelError)>,
}

impl ExecutionResult {
    pub fn is_completed(&self) -> bool {
        self.outcome == RunOutcome::Completed
    }

    pub fn failure(&self) -> Option<&NodeFailure> {
        match &self.outcome {
            RunOutcome::Failed { failure } => Some(failure),
            _ => None,
        }
    }

    /// Ids of nodes with the given status.
    pub fn nodes_with(&self, status: NodeStatus) -> Vec<&str> {
        self.node_runs.iter().filter(|(_, r)| r.status == status).map(|(id, _)| id.as_str()).collect()
    }

    pub fn final_state_json(&self) -> serde_json::Value {
        Value::Record(self.final_state.clone()).to_json()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("workflow is not executable:\n{0}")]
    Validation(ValidationReport),
    #[error(transparent)]
    Subgraph(#[from] InlineError),
    #[error("invalid initial state: {0}")]
    InitialState(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
