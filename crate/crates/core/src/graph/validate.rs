//! Construction-time validation. Findings are data: a graph is executable iff
//! no finding has error severity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::subgraph::inline_all;
use super::topo::{find_cycle, topological_order};
use super::transform::{produced_schema, EdgeError};
use super::{AggregatePolicy, NodeKind, WorkflowGraph};
use crate::predicate::compile;
use crate::value::{FieldType, Schema};

/// Source of registered tool signatures.
pub trait ToolCatalog {
    /// `(input, output)` schemas of tool `id`.
    fn tool_signature(&self, id: &str) -> Option<(Schema, Schema)>;
}

impl ToolCatalog for BTreeMap<String, (Schema, Schema)> {
    fn tool_signature(&self, id: &str) -> Option<(Schema, Schema)> {
        self.get(id).cloned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    EmptyWorkflow,
    InvalidId { id: String },
    SubgraphError { detail: String },
    DanglingEdge { edge: String, node: String },
    SelfLoop { edge: String },
    CycleDetected { nodes: Vec<String> },
    StateKeyCollision { node: String },
    InvalidPolicy { node: String, detail: String },
    UnresolvedToolRef { node: String, tool: String },
    ToolSignatureMismatch { node: String, tool: String },
    UnknownTransform { edge: String, transform: String },
    SchemaMismatch { edge: String, expected: String, actual: String },
    DuplicateTargetField { node: String, field: String, edges: Vec<String> },
    MissingInput { node: String, field: String },
    StateInputMismatch { node: String, field: String, expected: String, actual: String },
    IllFormedPredicate { node: String, edge: String, detail: String },
    InvalidGuards { node: String, detail: String },
    AggregateMismatch { node: String, detail: String },
    UnreachableNode { node: String },
}

impl Finding {
    pub fn severity(&self) -> Severity {
        match self {
            Finding::UnreachableNode { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::EmptyWorkflow => write!(f, "workflow has no nodes"),
            Finding::InvalidId { id } => write!(f, "invalid id `{id}`"),
            Finding::SubgraphError { detail } => write!(f, "subgraph expansion failed: {detail}"),
            Finding::DanglingEdge { edge, node } => write!(f, "edge `{edge}` references unknown node `{node}`"),
            Finding::SelfLoop { edge } => write!(f, "edge `{edge}` is a self-loop"),
            Finding::CycleDetected { nodes } => write!(f, "cycle detected: {}", nodes.join(" -> ")),
            Finding::StateKeyCollision { node } => write!(f, "node id `{node}` is also an initial state key"),
            Finding::InvalidPolicy { node, detail } => write!(f, "node `{node}`: {detail}"),
            Finding::UnresolvedToolRef { node, tool } => write!(f, "node `{node}` references unregistered tool `{tool}`"),
            Finding::ToolSignatureMismatch { node, tool } => {
                write!(f, "node `{node}` declares schemas that differ from registered tool `{tool}`")
            }
            Finding::UnknownTransform { edge, transform } => {
                write!(f, "edge `{edge}` uses unknown transform `{transform}`")
            }
            Finding::SchemaMismatch { edge, expected, actual } => {
                write!(f, "edge `{edge}`: expected {expected}, found {actual}")
            }
            Finding::DuplicateTargetField { node, field, edges } => {
                write!(f, "node `{node}`: input `{field}` fed by several edges {edges:?}")
            }
            Finding::MissingInput { node, field } => {
                write!(f, "node `{node}`: input `{field}` is fed by no edge and is not an initial state key")
            }
            Finding::StateInputMismatch { node, field, expected, actual } => {
                write!(f, "node `{node}`: input `{field}` expects {expected} but initial state declares {actual}")
            }
            Finding::IllFormedPredicate { node, edge, detail } => {
                write!(f, "node `{node}`, guard for `{edge}`: {detail}")
            }
            Finding::InvalidGuards { node, detail } => write!(f, "node `{node}`: {detail}"),
            Finding::AggregateMismatch { node, detail } => write!(f, "aggregate `{node}`: {detail}"),
            Finding::UnreachableNode { node } => write!(f, "node `{node}` can never run"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    /// True iff there are no error-severity findings.
    pub fn is_executable(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity() == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity() == Severity::Warning)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, finding) in self.findings.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            let sev = match finding.severity() {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            write!(f, "{sev}: {finding}")?;
        }
        Ok(())
    }
}

/// Statically known record schemas of node outputs and edge payloads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchemaTable {
    pub outputs: BTreeMap<String, Schema>,
    pub edges: BTreeMap<String, Schema>,
}

/// Output schema of an aggregate given its in-edge payload schemas.
pub(crate) fn aggregate_output(policy: AggregatePolicy, inputs: &[(&str, &Schema)]) -> Result<Schema, String> {
    if inputs.is_empty() {
        return Err("aggregate has no in-edges".into());
    }
    match policy {
        AggregatePolicy::RequireAll => {
            let mut out = Schema::empty();
            for (edge, s) in inputs {
                out.insert(*edge, FieldType::Record((*s).clone())).map_err(|e| e.to_string())?;
            }
            Ok(out)
        }
        AggregatePolicy::FirstAvailable => {
            let first = inputs[0].1;
            if let Some((edge, s)) = inputs.iter().find(|(_, s)| *s != first) {
                return Err(format!(
                    "first_available inputs must share one schema; `{}` carries {first}, `{edge}` carries {s}",
                    inputs[0].0
                ));
            }
            Ok(Schema::of([("source", FieldType::String), ("value", FieldType::Record(first.clone()))]))
        }
    }
}

/// Computes output and edge schemas of a flat acyclic graph, skipping
/// anything that cannot be determined.
pub fn schema_table(graph: &WorkflowGraph) -> SchemaTable {
    build_table(graph, &mut Vec::new())
}

fn build_table(graph: &WorkflowGraph, findings: &mut Vec<Finding>) -> SchemaTable {
    let mut table = SchemaTable::default();
    let Ok(order) = topological_order(graph) else { return table };
    let index = graph.index();
    for (id, _) in &order {
        let node = graph.node(id).expect("ordered nodes exist");
        let out = match &node.kind {
            NodeKind::Agent(a) => Some(a.output_schema.clone()),
            NodeKind::Tool(t) => Some(t.output_schema.clone()),
            NodeKind::Branch(b) => Some(b.schema.clone()),
            NodeKind::FanOut(f) => Some(f.schema.clone()),
            NodeKind::Composite(_) => None,
            NodeKind::Aggregate(agg) => {
                let ins: Option<Vec<(&str, &Schema)>> =
                    index.ins(id).iter().map(|e| table.edges.get(e).map(|s| (e.as_str(), s))).collect();
                match ins {
                    None => None,
                    Some(ins) => match aggregate_output(agg.policy, &ins) {
                        Ok(s) => Some(s),
                        Err(detail) => {
                            findings.push(Finding::AggregateMismatch { node: id.clone(), detail });
                            None
                        }
                    },
                }
            }
        };
        let Some(out) = out else { continue };
        for eid in index.outs(id) {
            let edge = graph.edge(eid).expect("indexed edge");
            match produced_schema(edge, &out) {
                Ok(s) => {
                    table.edges.insert(eid.clone(), s);
                }
                Err(EdgeError::UnknownTransform(t)) => {
                    findings.push(Finding::UnknownTransform { edge: eid.clone(), transform: t })
                }
                Err(EdgeError::MissingSourceField { field, .. }) => findings.push(Finding::SchemaMismatch {
                    edge: eid.clone(),
                    expected: format!("source field `{field}`"),
                    actual: format!("source output {out}"),
                }),
                Err(EdgeError::DuplicateTarget { target, fields, .. }) => {
                    findings.push(Finding::DuplicateTargetField { node: edge.dst.clone(), field: target, edges: fields })
                }
                Err(EdgeError::NotARecord { .. }) => unreachable!("schema-level check"),
            }
        }
        table.outputs.insert(id.clone(), out);
    }
    table
}

/// Payload schema of edge `id`, if known.
pub fn edge_schema<'t>(table: &'t SchemaTable, id: &str) -> Option<&'t Schema> {
    table.edges.get(id)
}

/// Initial state keys plus one record-typed key per node output.
pub fn static_state_schema(graph: &WorkflowGraph, table: &SchemaTable) -> Schema {
    let mut s = graph.state_schema.clone();
    for (id, out) in &table.outputs {
        let _ = s.insert(id.clone(), FieldType::Record(out.clone()));
    }
    s
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.contains('.') && !id.chars().any(char::is_whitespace)
}

/// Validates a graph against a tool catalog. Composite nodes are expanded
/// first, so findings always name nodes of the flat graph.
pub fn validate(graph: &WorkflowGraph, tools: &dyn ToolCatalog) -> ValidationReport {
    let mut findings = Vec::new();
    if graph.is_empty() {
        findings.push(Finding::EmptyWorkflow);
        return ValidationReport { findings };
    }
    let graph = match inline_all(graph) {
        Ok(g) => g,
        Err(e) => {
            findings.push(Finding::SubgraphError { detail: e.to_string() });
            return ValidationReport { findings };
        }
    };

    for n in graph.nodes() {
        if !valid_id(&n.id) {
            findings.push(Finding::InvalidId { id: n.id.clone() });
        }
        if graph.state_schema.contains(&n.id) {
            findings.push(Finding::StateKeyCollision { node: n.id.clone() });
        }
    }
    let mut structural = false;
    for e in graph.edges() {
        if e.id.is_empty() {
            findings.push(Finding::InvalidId { id: e.id.clone() });
        }
        for end in [&e.src, &e.dst] {
            if graph.node(end).is_none() {
                findings.push(Finding::DanglingEdge { edge: e.id.clone(), node: end.clone() });
                structural = true;
            }
        }
        if e.src == e.dst {
            findings.push(Finding::SelfLoop { edge: e.id.clone() });
            structural = true;
        }
    }
    if structural {
        return ValidationReport { findings };
    }
    if let Some(cycle) = find_cycle(&graph) {
        findings.push(Finding::CycleDetected { nodes: cycle.nodes });
        return ValidationReport { findings };
    }

    check_policies(&graph, tools, &mut findings);
    let table = build_table(&graph, &mut findings);
    check_inputs(&graph, &table, &mut findings);
    let state = static_state_schema(&graph, &table);
    check_guards(&graph, &state, &mut findings);
    check_reachability(&graph, &mut findings);
    ValidationReport { findings }
}

fn check_policies(graph: &WorkflowGraph, tools: &dyn ToolCatalog, out: &mut Vec<Finding>) {
    for n in graph.nodes() {
        let bad = |detail: String| Finding::InvalidPolicy { node: n.id.clone(), detail };
        match &n.kind {
            NodeKind::Agent(a) => {
                if a.max_iterations < 1 {
                    out.push(bad("max_iterations must be at least 1".into()));
                }
                if !a.sampling.temperature.is_finite() || a.sampling.temperature < 0.0 {
                    out.push(bad(format!("invalid temperature {}", a.sampling.temperature)));
                }
                if a.sampling.max_tokens == 0 {
                    out.push(bad("max_tokens must be positive".into()));
                }
                for t in &a.tool_refs {
                    if tools.tool_signature(t).is_none() {
                        out.push(Finding::UnresolvedToolRef { node: n.id.clone(), tool: t.clone() });
                    }
                }
            }
            NodeKind::Tool(t) => {
                if t.timeout_ms == 0 {
                    out.push(bad("timeout_ms must be positive".into()));
                }
                if let Err(e) = t.retry.validate() {
                    out.push(bad(e.to_string()));
                }
                match tools.tool_signature(&t.fn_ref) {
                    None => out.push(Finding::UnresolvedToolRef { node: n.id.clone(), tool: t.fn_ref.clone() }),
                    Some((i, o)) if i != t.input_schema || o != t.output_schema => {
                        out.push(Finding::ToolSignatureMismatch { node: n.id.clone(), tool: t.fn_ref.clone() })
                    }
                    Some(_) => {}
                }
            }
            _ => {}
        }
    }
}

fn check_inputs(graph: &WorkflowGraph, table: &SchemaTable, out: &mut Vec<Finding>) {
    let index = graph.index();
    for n in graph.nodes() {
        let Some(input) = n.kind.input_schema() else { continue };
        let mut fed: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for eid in index.ins(&n.id) {
            let Some(produced) = table.edges.get(eid) else { continue };
            for (field, ty) in produced.iter() {
                fed.entry(field).or_default().push(eid.clone());
                match input.get(field) {
                    None => out.push(Finding::SchemaMismatch {
                        edge: eid.clone(),
                        expected: format!("a field of {input}"),
                        actual: format!("`{field}`: {ty}"),
                    }),
                    Some(want) if want != ty => out.push(Finding::SchemaMismatch {
                        edge: eid.clone(),
                        expected: format!("`{field}`: {want}"),
                        actual: format!("`{field}`: {ty}"),
                    }),
                    Some(_) => {}
                }
            }
        }
        for (field, edges) in &fed {
            if edges.len() > 1 {
                out.push(Finding::DuplicateTargetField {
                    node: n.id.clone(),
                    field: field.to_string(),
                    edges: edges.clone(),
                });
            }
        }
        // inputs no edge feeds are bound to the initial state key of the same name
        for (field, want) in input.iter() {
            if fed.contains_key(field.as_str()) {
                continue;
            }
            match graph.state_schema.get(field) {
                None => {
                    // an edge whose schema is unknown already produced a finding
                    let unknown_edge = index.ins(&n.id).iter().any(|e| !table.edges.contains_key(e));
                    if !unknown_edge {
                        out.push(Finding::MissingInput { node: n.id.clone(), field: field.clone() });
                    }
                }
                Some(have) if have != want => out.push(Finding::StateInputMismatch {
                    node: n.id.clone(),
                    field: field.clone(),
                    expected: want.to_string(),
                    actual: have.to_string(),
                }),
                Some(_) => {}
            }
        }
    }
}

fn check_guards(graph: &WorkflowGraph, state: &Schema, out: &mut Vec<Finding>) {
    let index = graph.index();
    for n in graph.nodes() {
        let NodeKind::Branch(b) = &n.kind else { continue };
        let outs: BTreeSet<&String> = index.outs(&n.id).iter().collect();
        let mut seen = BTreeSet::new();
        let defaults = b.guards.iter().filter(|g| g.when.is_none()).count();
        if defaults > 1 {
            out.push(Finding::InvalidGuards { node: n.id.clone(), detail: "more than one default guard".into() });
        } else if defaults == 1 && b.guards.last().is_some_and(|g| g.when.is_some()) {
            out.push(Finding::InvalidGuards { node: n.id.clone(), detail: "the default guard must be last".into() });
        }
        for g in &b.guards {
            if !outs.contains(&g.edge) {
                out.push(Finding::InvalidGuards {
                    node: n.id.clone(),
                    detail: format!("guard targets `{}`, which is not an out-edge", g.edge),
                });
            }
            if !seen.insert(&g.edge) {
                out.push(Finding::InvalidGuards {
                    node: n.id.clone(),
                    detail: format!("several guards target `{}`", g.edge),
                });
            }
            if let Some(src) = &g.when {
                match compile(src, state) {
                    Ok(t) if t.result_type == FieldType::Bool => {}
                    Ok(t) => out.push(Finding::IllFormedPredicate {
                        node: n.id.clone(),
                        edge: g.edge.clone(),
                        detail: format!("guard has type {}, expected bool", t.result_type),
                    }),
                    Err(e) => out.push(Finding::IllFormedPredicate {
                        node: n.id.clone(),
                        edge: g.edge.clone(),
                        detail: e.to_string(),
                    }),
                }
            }
        }
    }
}

/// Out-edges of a branch without a guard are never taken; nodes that need
/// them can never run.
fn check_reachability(graph: &WorkflowGraph, out: &mut Vec<Finding>) {
    let Ok(order) = topological_order(graph) else { return };
    let index = graph.index();
    let mut dead_edges: BTreeSet<&str> = BTreeSet::new();
    let mut dead_nodes: BTreeSet<&str> = BTreeSet::new();
    for (id, _) in &order {
        let node = graph.node(id).expect("ordered node");
        let ins = index.ins(id);
        let dead = match &node.kind {
            NodeKind::Aggregate(a) if a.policy == AggregatePolicy::FirstAvailable => {
                !ins.is_empty() && ins.iter().all(|e| dead_edges.contains(e.as_str()))
            }
            _ => ins.iter().any(|e| dead_edges.contains(e.as_str())),
        };
        if dead {
            dead_nodes.insert(id);
            out.push(Finding::UnreachableNode { node: id.clone() });
        }
        let guarded: BTreeSet<&str> = match &node.kind {
            NodeKind::Branch(b) => b.guards.iter().map(|g| g.edge.as_str()).collect(),
            _ => BTreeSet::new(),
        };
        for e in index.outs(id) {
            if dead || (matches!(node.kind, NodeKind::Branch(_)) && !guarded.contains(e.as_str())) {
                dead_edges.insert(e);
            }
        }
    }
}
