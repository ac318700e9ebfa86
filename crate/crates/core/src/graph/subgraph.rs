//! Reusable subgraphs: encapsulating a node set into one composite node and
//! expanding composites back in place.
//!
//! Cut edges keep their ids. The composite records, per cut edge, which inner
//! node it attaches to, so inlining restores the original graph exactly.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::validate::schema_table;
use super::{NodeKind, NodeSpec, WorkflowGraph};
use crate::value::Schema;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Port {
    /// Inner node the cut edge attaches to.
    pub node: String,
    /// Record schema carried by the cut edge.
    pub schema: Schema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgraphDef {
    pub name: String,
    pub inner: WorkflowGraph,
    /// Inbound cut edges by edge id.
    pub inputs: BTreeMap<String, Port>,
    /// Outbound cut edges by edge id.
    pub outputs: BTreeMap<String, Port>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncapsulateError {
    #[error("empty node set")]
    EmptySubset,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node set is not connected")]
    SubsetNotConnected,
    #[error("node set is not convex: a path leaves it at `{exit}` and re-enters at `{reentry}`")]
    NonConvexSubset { exit: String, reentry: String },
    #[error("subgraph name `{0}` collides with an existing node id")]
    NameCollision(String),
    #[error("cannot determine the schema of cut edge `{0}`")]
    BoundarySchema(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InlineError {
    #[error("`{0}` is not a composite node")]
    NotComposite(String),
    #[error("edge `{edge}` attaches to composite `{node}` but is not one of its ports")]
    UnboundEdge { node: String, edge: String },
    #[error("inner id `{0}` of composite collides with the host graph")]
    IdCollision(String),
    #[error("port of edge `{edge}` names unknown inner node `{node}`")]
    BadPort { edge: String, node: String },
}

/// Replaces `node_ids` with one composite node named `name`.
pub fn encapsulate(
    graph: &WorkflowGraph,
    node_ids: &BTreeSet<String>,
    name: &str,
) -> Result<(WorkflowGraph, SubgraphDef), EncapsulateError> {
    if node_ids.is_empty() {
        return Err(EncapsulateError::EmptySubset);
    }
    if let Some(missing) = node_ids.iter().find(|n| graph.node(n).is_none()) {
        return Err(EncapsulateError::UnknownNode(missing.clone()));
    }
    if graph.node(name).is_some() {
        return Err(EncapsulateError::NameCollision(name.to_string()));
    }
    check_connected(graph, node_ids)?;
    check_convex(graph, node_ids)?;

    let flat = inline_all(graph).map_err(|_| EncapsulateError::BoundarySchema(name.to_string()))?;
    let table = schema_table(&flat);

    let mut inner = WorkflowGraph::new(name, graph.version.clone()).with_state_schema(graph.state_schema.clone());
    let mut host = graph.clone();
    for id in node_ids {
        let spec = host.remove_node(id).expect("membership checked");
        inner.add_node(spec).expect("ids unique in host");
    }
    let mut inputs = BTreeMap::new();
    let mut outputs = BTreeMap::new();
    let mut cut = Vec::new();
    for e in graph.edges() {
        let (s_in, d_in) = (node_ids.contains(&e.src), node_ids.contains(&e.dst));
        let port_schema = || table.edges.get(&e.id).cloned().ok_or_else(|| EncapsulateError::BoundarySchema(e.id.clone()));
        match (s_in, d_in) {
            (true, true) => inner.add_edge(e.clone()).expect("endpoints are inner nodes"),
            (false, true) => {
                inputs.insert(e.id.clone(), Port { node: e.dst.clone(), schema: port_schema()? });
                let mut moved = e.clone();
                moved.dst = name.to_string();
                cut.push(moved);
            }
            (true, false) => {
                outputs.insert(e.id.clone(), Port { node: e.src.clone(), schema: port_schema()? });
                let mut moved = e.clone();
                moved.src = name.to_string();
                cut.push(moved);
            }
            (false, false) => {}
        }
    }
    let def = SubgraphDef { name: name.to_string(), inner, inputs, outputs };
    host.add_node(NodeSpec::new(name, NodeKind::Composite(Box::new(def.clone()))))
        .expect("name collision checked");
    for e in cut {
        host.add_edge(e).expect("cut edges keep unique ids");
    }
    Ok((host, def))
}

fn check_connected(graph: &WorkflowGraph, subset: &BTreeSet<String>) -> Result<(), EncapsulateError> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in graph.edges() {
        if subset.contains(&e.src) && subset.contains(&e.dst) {
            adj.entry(&e.src).or_default().push(&e.dst);
            adj.entry(&e.dst).or_default().push(&e.src);
        }
    }
    let start = subset.iter().next().expect("non-empty").as_str();
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(n) = queue.pop_front() {
        for &m in adj.get(n).map_or(&[][..], Vec::as_slice) {
            if seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    if seen.len() == subset.len() {
        Ok(())
    } else {
        Err(EncapsulateError::SubsetNotConnected)
    }
}

fn check_convex(graph: &WorkflowGraph, subset: &BTreeSet<String>) -> Result<(), EncapsulateError> {
    let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in graph.edges() {
        succ.entry(&e.src).or_default().push(&e.dst);
    }
    // walk outside the subset from every exit; touching the subset again is a violation
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut queue: VecDeque<(&str, &str)> = VecDeque::new();
    for s in subset {
        for &d in succ.get(s.as_str()).map_or(&[][..], Vec::as_slice) {
            if !subset.contains(d) && seen.insert(d) {
                queue.push_back((d, d));
            }
        }
    }
    while let Some((n, exit)) = queue.pop_front() {
        for &m in succ.get(n).map_or(&[][..], Vec::as_slice) {
            if subset.contains(m) {
                return Err(EncapsulateError::NonConvexSubset { exit: exit.to_string(), reentry: m.to_string() });
            }
            if seen.insert(m) {
                queue.push_back((m, exit));
            }
        }
    }
    Ok(())
}

/// Expands the composite node `id` in place.
pub fn inline(graph: &WorkflowGraph, id: &str) -> Result<WorkflowGraph, InlineError> {
    let Some(NodeKind::Composite(def)) = graph.node(id).map(|n| &n.kind) else {
        return Err(InlineError::NotComposite(id.to_string()));
    };
    let mut host = graph.clone();
    let cut: Vec<_> = graph.edges().filter(|e| e.src == id || e.dst == id).cloned().collect();
    host.remove_node(id);
    for n in def.inner.nodes() {
        host.add_node(n.clone()).map_err(|_| InlineError::IdCollision(n.id.clone()))?;
    }
    for e in def.inner.edges() {
        host.add_edge(e.clone()).map_err(|_| InlineError::IdCollision(e.id.clone()))?;
    }
    for mut e in cut {
        if e.dst == id {
            let port = def
                .inputs
                .get(&e.id)
                .ok_or_else(|| InlineError::UnboundEdge { node: id.to_string(), edge: e.id.clone() })?;
            e.dst = port.node.clone();
        }
        if e.src == id {
            let port = def
                .outputs
                .get(&e.id)
                .ok_or_else(|| InlineError::UnboundEdge { node: id.to_string(), edge: e.id.clone() })?;
            e.src = port.node.clone();
        }
        let (edge, node) = (e.id.clone(), if def.inner.node(&e.src).is_none() { e.dst.clone() } else { e.src.clone() });
        host.add_edge(e).map_err(|err| match err {
            super::GraphError::DuplicateEdgeId(x) => InlineError::IdCollision(x),
            _ => InlineError::BadPort { edge, node },
        })?;
    }
    Ok(host)
}

/// Expands every composite node, including nested ones.
pub fn inline_all(graph: &WorkflowGraph) -> Result<WorkflowGraph, InlineError> {
    let mut g = graph.clone();
    loop {
        let next = g.nodes().find(|n| matches!(n.kind, NodeKind::Composite(_))).map(|n| n.id.clone());
        match next {
            Some(id) => g = inline(&g, &id)?,
            None => return Ok(g),
        }
    }
}
