//! Readiness, branch routing and aggregate joins. Everything here is a pure
//! function of retired node statuses, so the scheduler and tests share it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{AggregatePolicy, GraphIndex, NodeKind, WorkflowGraph};
use crate::memory::StateSnapshot;
use crate::predicate::{evaluate, EvalError, TypedExpr};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Pending,
    Ready,
    Running,
    Completed,
    Failed,
    Skipped,
    /// Dispatched or finished but discarded because the run stopped first.
    Cancelled,
}

impl NodeStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, NodeStatus::Completed | NodeStatus::Failed | NodeStatus::Skipped | NodeStatus::Cancelled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeState {
    Unresolved,
    Live,
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readiness {
    Wait,
    Ready,
    Skip,
    /// A require_all aggregate lost some but not all of its inputs.
    Unsatisfiable,
}

/// Retired statuses plus the edge each completed branch selected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Progress {
    pub status: BTreeMap<String, NodeStatus>,
    pub selected: BTreeMap<String, String>,
}

impl Progress {
    pub fn status(&self, node: &str) -> NodeStatus {
        self.status.get(node).copied().unwrap_or(NodeStatus::Pending)
    }
}

pub fn edge_state(graph: &WorkflowGraph, progress: &Progress, edge: &str) -> EdgeState {
    let e = graph.edge(edge).expect("edge exists");
    match progress.status(&e.src) {
        NodeStatus::Completed => match progress.selected.get(&e.src) {
            Some(sel) if sel != edge => EdgeState::Dead,
            _ => EdgeState::Live,
        },
        NodeStatus::Skipped | NodeStatus::Failed | NodeStatus::Cancelled => EdgeState::Dead,
        _ => EdgeState::Unresolved,
    }
}

/// Decision for one node. Every node waits until all in-edges are resolved;
/// then a dead in-edge skips it, except that an aggregate skips only when all
/// in-edges are dead.
pub fn readiness(graph: &WorkflowGraph, index: &GraphIndex, progress: &Progress, node: &str) -> Readiness {
    let states: Vec<EdgeState> = index.ins(node).iter().map(|e| edge_state(graph, progress, e)).collect();
    if states.contains(&EdgeState::Unresolved) {
        return Readiness::Wait;
    }
    let dead = states.iter().filter(|s| **s == EdgeState::Dead).count();
    if dead == 0 {
        return Readiness::Ready;
    }
    let kind = &graph.node(node).expect("node exists").kind;
    match kind {
        NodeKind::Aggregate(_) if dead == states.len() => Readiness::Skip,
        NodeKind::Aggregate(a) if a.policy == AggregatePolicy::RequireAll => Readiness::Unsatisfiable,
        NodeKind::Aggregate(_) => Readiness::Ready,
        _ => Readiness::Skip,
    }
}

/// Pending nodes whose fate is decided, in (layer, id) order.
pub fn compute_ready(
    graph: &WorkflowGraph,
    order: &[(String, usize)],
    progress: &Progress,
) -> Vec<(String, Readiness)> {
    let index = graph.index();
    order
        .iter()
        .filter(|(id, _)| progress.status(id) == NodeStatus::Pending)
        .map(|(id, _)| (id.clone(), readiness(graph, &index, progress, id)))
        .filter(|(_, r)| *r != Readiness::Wait)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouteError {
    #[error("no guard of branch `{0}` matched and there is no default")]
    NoBranchTaken(String),
    #[error("guard on edge `{edge}` of branch `{node}`: {error}")]
    Eval { node: String, edge: String, error: EvalError },
}

/// First guard that holds, in declaration order. `None` guards always hold.
pub fn route_branch(
    node: &str,
    guards: &[(String, Option<TypedExpr>)],
    snap: &StateSnapshot,
) -> Result<String, RouteError> {
    for (edge, guard) in guards {
        let Some(expr) = guard else { return Ok(edge.clone()) };
        match evaluate(expr, snap) {
            Ok(Value::Bool(true)) => return Ok(edge.clone()),
            Ok(_) => {}
            Err(error) => return Err(RouteError::Eval { node: node.to_string(), edge: edge.clone(), error }),
        }
    }
    Err(RouteError::NoBranchTaken(node.to_string()))
}

/// Output of an aggregate. `live` holds the payloads of its live in-edges in
/// priority order (source rank, then edge id).
pub fn aggregate_join(policy: AggregatePolicy, live: &[(String, Value)]) -> Value {
    match policy {
        AggregatePolicy::RequireAll => {
            Value::Record(live.iter().map(|(edge, v)| (edge.clone(), v.clone())).collect())
        }
        AggregatePolicy::FirstAvailable => {
            let (edge, v) = live.first().expect("a ready first_available aggregate has a live input");
            Value::record([("source", Value::String(edge.clone())), ("value", v.clone())])
        }
    }
}
