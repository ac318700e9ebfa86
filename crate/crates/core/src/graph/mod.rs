//! Typed workflow DAG: node and edge specifications, construction and
//! content hashing. Validation, ordering, subgraphs and edge transforms live
//! in the submodules.

mod subgraph;
mod topo;
mod transform;
mod validate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::recovery::RecoveryPolicy;
use crate::value::{canonical_json, digest_hex, Schema};

pub use subgraph::{encapsulate, inline, inline_all, EncapsulateError, InlineError, Port, SubgraphDef};
pub use topo::{find_cycle, topological_order, CycleError, GraphIndex};
pub use transform::{apply_edge, apply_transform, produced_schema, transform_schema, EdgeError, TRANSFORMS};
pub use validate::{
    edge_schema, schema_table, static_state_schema, validate, Finding, SchemaTable, Severity, ToolCatalog,
    ValidationReport,
};

pub const DEFAULT_MAX_ITERATIONS: u32 = 3;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MAX_TOKENS: u32 = 2000;
pub const DEFAULT_TOOL_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling { temperature: DEFAULT_TEMPERATURE, max_tokens: DEFAULT_MAX_TOKENS }
    }
}

fn default_max_iterations() -> u32 {
    DEFAULT_MAX_ITERATIONS
}

fn default_tool_timeout() -> u64 {
    DEFAULT_TOOL_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub system_prompt: String,
    pub input_schema: Schema,
    pub output_schema: Schema,
    #[serde(default)]
    pub tool_refs: BTreeSet<String>,
    #[serde(default)]
    pub declared_state_reads: BTreeSet<String>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u32,
    #[serde(default)]
    pub sampling: Sampling,
}

impl AgentSpec {
    pub fn new(system_prompt: impl Into<String>, input_schema: Schema, output_schema: Schema) -> Self {
        AgentSpec {
            system_prompt: system_prompt.into(),
            input_schema,
            output_schema,
            tool_refs: BTreeSet::new(),
            declared_state_reads: BTreeSet::new(),
            max_iterations: DEFAULT_MAX_ITERATIONS,
            sampling: Sampling::default(),
        }
    }

    pub fn with_tools<I: IntoIterator<Item = S>, S: Into<String>>(mut self, tools: I) -> Self {
        self.tool_refs = tools.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_state_reads<I: IntoIterator<Item = S>, S: Into<String>>(mut self, keys: I) -> Self {
        self.declared_state_reads = keys.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_max_iterations(mut self, n: u32) -> Self {
        self.max_iterations = n;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSpec {
    pub fn_ref: String,
    pub input_schema: Schema,
    pub output_schema: Schema,
    #[serde(default = "default_tool_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RecoveryPolicy,
}

impl ToolSpec {
    pub fn new(fn_ref: impl Into<String>, input_schema: Schema, output_schema: Schema) -> Self {
        ToolSpec {
            fn_ref: fn_ref.into(),
            input_schema,
            output_schema,
            timeout_ms: DEFAULT_TOOL_TIMEOUT_MS,
            retry: RecoveryPolicy::FailFast,
        }
    }

    pub fn with_timeout_ms(mut self, ms: u64) -> Self {
        self.timeout_ms = ms;
        self
    }

    pub fn with_retry(mut self, retry: RecoveryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

/// One branch guard. `when: None` is the default guard and must come last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guard {
    pub edge: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<String>,
}

impl Guard {
    pub fn when(edge: impl Into<String>, predicate: impl Into<String>) -> Self {
        Guard { edge: edge.into(), when: Some(predicate.into()) }
    }

    pub fn default_to(edge: impl Into<String>) -> Self {
        Guard { edge: edge.into(), when: None }
    }
}

/// Passes its input record through unchanged on the selected out-edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub schema: Schema,
    pub guards: Vec<Guard>,
}

/// Passes its input record through unchanged on every out-edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanOutSpec {
    pub schema: Schema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatePolicy {
    RequireAll,
    FirstAvailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateSpec {
    pub policy: AggregatePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    Agent(AgentSpec),
    Tool(ToolSpec),
    Branch(BranchSpec),
    FanOut(FanOutSpec),
    Aggregate(AggregateSpec),
    /// An encapsulated subgraph; expanded in place before validation and execution.
    Composite(Box<SubgraphDef>),
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Agent(_) => "agent",
            NodeKind::Tool(_) => "tool",
            NodeKind::Branch(_) => "branch",
            NodeKind::FanOut(_) => "fan_out",
            NodeKind::Aggregate(_) => "aggregate",
            NodeKind::Composite(_) => "composite",
        }
    }

    pub fn is_control(&self) -> bool {
        matches!(self, NodeKind::Branch(_) | NodeKind::FanOut(_) | NodeKind::Aggregate(_))
    }

    /// Declared input record schema; aggregates and composites have none.
    pub fn input_schema(&self) -> Option<&Schema> {
        match self {
            NodeKind::Agent(a) => Some(&a.input_schema),
            NodeKind::Tool(t) => Some(&t.input_schema),
            NodeKind::Branch(b) => Some(&b.schema),
            NodeKind::FanOut(f) => Some(&f.schema),
            NodeKind::Aggregate(_) | NodeKind::Composite(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
}

impl NodeSpec {
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        NodeSpec { id: id.into(), kind }
    }

    pub fn agent(id: impl Into<String>, spec: AgentSpec) -> Self {
        NodeSpec::new(id, NodeKind::Agent(spec))
    }

    pub fn tool(id: impl Into<String>, spec: ToolSpec) -> Self {
        NodeSpec::new(id, NodeKind::Tool(spec))
    }

    pub fn branch(id: impl Into<String>, schema: Schema, guards: Vec<Guard>) -> Self {
        NodeSpec::new(id, NodeKind::Branch(BranchSpec { schema, guards }))
    }

    pub fn fan_out(id: impl Into<String>, schema: Schema) -> Self {
        NodeSpec::new(id, NodeKind::FanOut(FanOutSpec { schema }))
    }

    pub fn aggregate(id: impl Into<String>, policy: AggregatePolicy) -> Self {
        NodeSpec::new(id, NodeKind::Aggregate(AggregateSpec { policy }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeBody {
    pub src: String,
    pub dst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<String>,
    /// Source output field to destination input field. Empty means the edge
    /// only orders execution and carries no data.
    #[serde(default)]
    pub field_map: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSpec {
    pub id: String,
    pub src: String,
    pub dst: String,
    pub transform: Option<String>,
    pub field_map: BTreeMap<String, String>,
}

impl EdgeSpec {
    pub fn new(id: impl Into<String>, src: impl Into<String>, dst: impl Into<String>) -> Self {
        EdgeSpec { id: id.into(), src: src.into(), dst: dst.into(), transform: None, field_map: BTreeMap::new() }
    }

    pub fn map(mut self, src_field: impl Into<String>, dst_field: impl Into<String>) -> Self {
        self.field_map.insert(src_field.into(), dst_field.into());
        self
    }

    pub fn with_transform(mut self, name: impl Into<String>) -> Self {
        self.transform = Some(name.into());
        self
    }

    fn body(&self) -> EdgeBody {
        EdgeBody {
            src: self.src.clone(),
            dst: self.dst.clone(),
            transform: self.transform.clone(),
            field_map: self.field_map.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("duplicate node id `{0}`")]
    DuplicateNodeId(String),
    #[error("duplicate edge id `{0}`")]
    DuplicateEdgeId(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("malformed graph document: {0}")]
    Malformed(String),
}

/// A workflow DAG. Node outputs are committed to workflow state under the
/// node id; `state_schema` types the keys supplied before the run starts.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowGraph {
    pub name: String,
    pub version: String,
    pub state_schema: Schema,
    nodes: BTreeMap<String, NodeSpec>,
    edges: BTreeMap<String, EdgeSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRepr {
    name: String,
    version: String,
    #[serde(default)]
    state_schema: Schema,
    #[serde(default)]
    nodes: BTreeMap<String, NodeKind>,
    #[serde(default)]
    edges: BTreeMap<String, EdgeBody>,
}

impl Serialize for WorkflowGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GraphRepr {
            name: self.name.clone(),
            version: self.version.clone(),
            state_schema: self.state_schema.clone(),
            nodes: self.nodes.iter().map(|(k, n)| (k.clone(), n.kind.clone())).collect(),
            edges: self.edges.iter().map(|(k, e)| (k.clone(), e.body())).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for WorkflowGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = GraphRepr::deserialize(d)?;
        let nodes = repr.nodes.into_iter().map(|(id, kind)| (id.clone(), NodeSpec { id, kind })).collect();
        let edges = repr
            .edges
            .into_iter()
            .map(|(id, b)| {
                let e = EdgeSpec { id: id.clone(), src: b.src, dst: b.dst, transform: b.transform, field_map: b.field_map };
                (id, e)
            })
            .collect();
        Ok(WorkflowGraph { name: repr.name, version: repr.version, state_schema: repr.state_schema, nodes, edges })
    }
}

impl WorkflowGraph {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Self {
        WorkflowGraph {
            name: name.into(),
            version: version.into(),
            state_schema: Schema::empty(),
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
        }
    }

    pub fn with_state_schema(mut self, schema: Schema) -> Self {
        self.state_schema = schema;
        self
    }

    pub fn add_node(&mut self, spec: NodeSpec) -> Result<(), GraphError> {
        if self.nodes.contains_key(&spec.id) {
            return Err(GraphError::DuplicateNodeId(spec.id));
        }
        self.nodes.insert(spec.id.clone(), spec);
        Ok(())
    }

    /// Adds an edge with a generated id (`src->dst`, suffixed if taken).
    pub fn connect(
        &mut self,
        src: &str,
        dst: &str,
        transform: Option<&str>,
        field_map: BTreeMap<String, String>,
    ) -> Result<String, GraphError> {
        let base = format!("{src}->{dst}");
        let mut id = base.clone();
        let mut n = 2;
        while self.edges.contains_key(&id) {
            id = format!("{base}#{n}");
            n += 1;
        }
        let edge = EdgeSpec { id: id.clone(), src: src.into(), dst: dst.into(), transform: transform.map(Into::into), field_map };
        self.add_edge(edge)?;
        Ok(id)
    }

    pub fn add_edge(&mut self, edge: EdgeSpec) -> Result<(), GraphError> {
        for end in [&edge.src, &edge.dst] {
            if !self.nodes.contains_key(end) {
                return Err(GraphError::UnknownNode(end.clone()));
            }
        }
        if edge.src == edge.dst {
            return Err(GraphError::SelfLoop(edge.src));
        }
        if self.edges.contains_key(&edge.id) {
            return Err(GraphError::DuplicateEdgeId(edge.id));
        }
        self.edges.insert(edge.id.clone(), edge);
        Ok(())
    }

    pub fn remove_node(&mut self, id: &str) -> Option<NodeSpec> {
        let spec = self.nodes.remove(id)?;
        self.edges.retain(|_, e| e.src != id && e.dst != id);
        Some(spec)
    }

    pub fn remove_edge(&mut self, id: &str) -> Option<EdgeSpec> {
        self.edges.remove(id)
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.get(id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut NodeSpec> {
        self.nodes.get_mut(id)
    }

    pub fn edge(&self, id: &str) -> Option<&EdgeSpec> {
        self.edges.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &EdgeSpec> {
        self.edges.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes without in-edges, in id order.
    pub fn entry_nodes(&self) -> Vec<&str> {
        let has_in: BTreeSet<&str> = self.edges.values().map(|e| e.dst.as_str()).collect();
        self.nodes.keys().map(String::as_str).filter(|id| !has_in.contains(id)).collect()
    }

    pub fn in_edges(&self, id: &str) -> Vec<&EdgeSpec> {
        self.edges.values().filter(|e| e.dst == id).collect()
    }

    pub fn out_edges(&self, id: &str) -> Vec<&EdgeSpec> {
        self.edges.values().filter(|e| e.src == id).collect()
    }

    pub fn index(&self) -> GraphIndex {
        GraphIndex::new(self)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("graph serialization is infallible")
    }

    pub fn from_json(json: &serde_json::Value) -> Result<Self, GraphError> {
        serde_json::from_value(json.clone()).map_err(|e| GraphError::Malformed(e.to_string()))
    }

    pub fn canonical_json(&self) -> String {
        canonical_json(&self.to_json())
    }

    /// SHA-256 of the canonical encoding; independent of insertion order.
    pub fn canonical_hash(&self) -> String {
        digest_hex(self.canonical_json().as_bytes())
    }
}
