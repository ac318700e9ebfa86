//! Fluent construction of workflow graphs.
//!
//! ```
//! use detflow::builder::WorkflowBuilder;
//! use detflow::graph::ToolSpec;
//! use detflow::value::{FieldType, Schema};
//!
//! let s = Schema::of([("x", FieldType::Int)]);
//! let g = WorkflowBuilder::new("demo", "1")
//!     .state("x", FieldType::Int)
//!     .tool("a", ToolSpec::new("noop", s.clone(), s.clone()))
//!     .tool("b", ToolSpec::new("noop", s.clone(), s))
//!     .map("a", "b", [("x", "x")])
//!     .build()
//!     .unwrap();
//! assert_eq!(g.edge_count(), 1);
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::{
    validate, AgentSpec, AggregatePolicy, EdgeSpec, GraphError, Guard, NodeSpec, ToolCatalog, ToolSpec,
    ValidationReport, WorkflowGraph,
};
use crate::value::{FieldType, Schema, SchemaError};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("workflow has no nodes")]
    Empty,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("workflow is not executable:\n{0}")]
    Invalid(ValidationReport),
}

/// Collects nodes and edges; the first error is reported by [`build`](Self::build).
#[derive(Debug)]
pub struct WorkflowBuilder {
    graph: WorkflowGraph,
    state: Schema,
    error: Option<BuildError>,
}

impl WorkflowBuilder {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Self {
        WorkflowBuilder { graph: WorkflowGraph::new(name, version), state: Schema::empty(), error: None }
    }

    fn record<E: Into<BuildError>>(&mut self, r: Result<(), E>) {
        if let Err(e) = r {
            self.error.get_or_insert(e.into());
        }
    }

    pub fn state(mut self, key: impl Into<String>, ty: FieldType) -> Self {
        let r = self.state.insert(key, ty);
        self.record(r);
        self
    }

    pub fn state_schema(mut self, schema: &Schema) -> Self {
        for (k, t) in schema.iter() {
            let r = self.state.insert(k.clone(), t.clone());
            self.record(r);
        }
        self
    }

    pub fn node(mut self, spec: NodeSpec) -> Self {
        let r = self.graph.add_node(spec);
        self.record(r);
        self
    }

    pub fn agent(self, id: impl Into<String>, spec: AgentSpec) -> Self {
        self.node(NodeSpec::agent(id, spec))
    }

    pub fn tool(self, id: impl Into<String>, spec: ToolSpec) -> Self {
        self.node(NodeSpec::tool(id, spec))
    }

    pub fn branch(self, id: impl Into<String>, schema: Schema, guards: Vec<Guard>) -> Self {
        self.node(NodeSpec::branch(id, schema, guards))
    }

    pub fn fan_out(self, id: impl Into<String>, schema: Schema) -> Self {
        self.node(NodeSpec::fan_out(id, schema))
    }

    pub fn aggregate(self, id: impl Into<String>, policy: AggregatePolicy) -> Self {
        self.node(NodeSpec::aggregate(id, policy))
    }

    /// Ordering-only edge `src->dst`.
    pub fn edge(self, src: &str, dst: &str) -> Self {
        self.map(src, dst, std::iter::empty::<(&str, &str)>())
    }

    /// Edge `src->dst` carrying the given (source field, target field) pairs.
    pub fn map<I, A, B>(mut self, src: &str, dst: &str, fields: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let map: BTreeMap<String, String> = fields.into_iter().map(|(a, b)| (a.into(), b.into())).collect();
        let r = self.graph.connect(src, dst, None, map).map(|_| ());
        self.record(r);
        self
    }

    /// Edge carrying every listed field under the same name.
    pub fn pass<'f>(self, src: &str, dst: &str, fields: impl IntoIterator<Item = &'f str>) -> Self {
        self.map(src, dst, fields.into_iter().map(|f| (f, f)))
    }

    pub fn edge_spec(mut self, edge: EdgeSpec) -> Self {
        let r = self.graph.add_edge(edge);
        self.record(r);
        self
    }

    pub fn build(self) -> Result<WorkflowGraph, BuildError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if self.graph.is_empty() {
            return Err(BuildError::Empty);
        }
        Ok(self.graph.with_state_schema(self.state))
    }

    /// Builds and rejects graphs with validation errors.
    pub fn build_validated(self, tools: &dyn ToolCatalog) -> Result<WorkflowGraph, BuildError> {
        let g = self.build()?;
        let report = validate(&g, tools);
        if report.is_executable() {
            Ok(g)
        } else {
            Err(BuildError::Invalid(report))
        }
    }
}
