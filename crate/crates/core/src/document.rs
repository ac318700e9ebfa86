//! Workflow files: the graph plus tool bindings and provider settings, as one
//! JSON object with sorted keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value as J;
use thiserror::Error;

use crate::graph::{validate, ValidationReport, WorkflowGraph};
use crate::nodes::{builtin, FuzzProvider, HttpProvider, MockProvider, MockScript, Provider, RegisteredTool, ToolRegistry};

pub const FORMAT: &str = "detflow-workflow/1";

const DOC_KEYS: [&str; 3] = ["format", "tools", "provider"];

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("{path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error("parse failure{}: {detail}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, detail: String },
    #[error("workflow is not executable:\n{0}")]
    ValidationFailed(ValidationReport),
    #[error("tool binding `{tool}`: {detail}")]
    Binding { tool: String, detail: String },
    #[error("provider: {0}")]
    Provider(String),
}

fn parse_err(detail: impl ToString) -> DocumentError {
    DocumentError::Parse { line: None, detail: detail.to_string() }
}

/// Where a tool id gets its implementation: a built-in or a callable the host
/// registers under `foreign`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolBinding {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foreign: Option<String>,
    #[serde(default, skip_serializing_if = "J::is_null")]
    pub params: J,
}

impl ToolBinding {
    pub fn builtin(name: impl Into<String>, params: J) -> Self {
        ToolBinding { builtin: Some(name.into()), foreign: None, params }
    }

    pub fn foreign(name: impl Into<String>) -> Self {
        ToolBinding { builtin: None, foreign: Some(name.into()), params: J::Null }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockSource {
    /// Path to a script file, relative to the workflow file.
    File(PathBuf),
    Inline(MockScript),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Mock {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script: Option<MockSource>,
    },
    Fuzz {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Http {
        base_url: String,
        model: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_ms: Option<u64>,
    },
}

impl ProviderConfig {
    /// Instantiates the provider. `base_dir` resolves script paths; `seed`
    /// is used by the fuzz provider when the file sets none.
    pub fn build(&self, base_dir: &Path, seed: u64) -> Result<Arc<dyn Provider>, DocumentError> {
        let p: Arc<dyn Provider> = match self {
            ProviderConfig::Mock { script: None } => Arc::new(MockProvider::auto()),
            ProviderConfig::Mock { script: Some(MockSource::Inline(s)) } => {
                Arc::new(MockProvider::from_script(s).map_err(|e| DocumentError::Provider(e.to_string()))?)
            }
            ProviderConfig::Mock { script: Some(MockSource::File(rel)) } => {
                let path = base_dir.join(rel);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| DocumentError::Io { path: path.clone(), detail: e.to_string() })?;
                Arc::new(MockProvider::from_json_str(&text).map_err(|e| DocumentError::Provider(e.to_string()))?)
            }
            ProviderConfig::Fuzz { seed: s } => Arc::new(FuzzProvider::new(s.unwrap_or(seed))),
            ProviderConfig::Http { base_url, model, timeout_ms } => {
                let mut h = HttpProvider::new(base_url.clone(), model.clone());
                if let Some(ms) = timeout_ms {
                    h = h.with_timeout(Duration::from_millis(*ms));
                }
                Arc::new(h)
            }
        };
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowDocument {
    pub graph: WorkflowGraph,
    pub tools: BTreeMap<String, ToolBinding>,
    pub provider: Option<ProviderConfig>,
}

impl WorkflowDocument {
    pub fn new(graph: WorkflowGraph) -> Self {
        WorkflowDocument { graph, tools: BTreeMap::new(), provider: None }
    }

    pub fn bind(mut self, tool: impl Into<String>, binding: ToolBinding) -> Self {
        self.tools.insert(tool.into(), binding);
        self
    }

    pub fn with_provider(mut self, provider: ProviderConfig) -> Self {
        self.provider = Some(provider);
        self
    }

    /// The document hash is the graph's canonical hash; bindings and provider
    /// settings do not change what the graph means.
    pub fn hash(&self) -> String {
        self.graph.canonical_hash()
    }

    pub fn to_json(&self) -> J {
        let mut obj = match self.graph.to_json() {
            J::Object(m) => m,
            _ => unreachable!("graphs serialize to objects"),
        };
        obj.insert("format".into(), J::String(FORMAT.into()));
        obj.insert("tools".into(), serde_json::to_value(&self.tools).expect("bindings serialize"));
        if let Some(p) = &self.provider {
            obj.insert("provider".into(), serde_json::to_value(p).expect("provider serializes"));
        }
        J::Object(obj)
    }

    /// Pretty-printed with sorted keys.
    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("json");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self, DocumentError> {
        let json: J = serde_json::from_str(text)
            .map_err(|e| DocumentError::Parse { line: Some(e.line()), detail: e.to_string() })?;
        Self::from_json(json)
    }

    pub fn from_json(json: J) -> Result<Self, DocumentError> {
        let J::Object(mut obj) = json else { return Err(parse_err("a workflow document must be an object")) };
        match obj.get("format") {
            Some(J::String(f)) if f == FORMAT => {}
            Some(other) => return Err(parse_err(format!("unsupported format {other}"))),
            None => return Err(parse_err("missing `format`")),
        }
        let tools = match obj.get("tools") {
            None => BTreeMap::new(),
            Some(t) => serde_json::from_value(t.clone()).map_err(|e| parse_err(format!("tools: {e}")))?,
        };
        let provider = match obj.get("provider") {
            None => None,
            Some(p) => Some(serde_json::from_value(p.clone()).map_err(|e| parse_err(format!("provider: {e}")))?),
        };
        for k in DOC_KEYS {
            obj.remove(k);
        }
        let graph = WorkflowGraph::from_json(&J::Object(obj)).map_err(parse_err)?;
        Ok(WorkflowDocument { graph, tools, provider })
    }

    /// Tool registry for the bindings. Foreign bindings are looked up in
    /// `foreign` by callable name.
    pub fn registry_with(&self, foreign: &BTreeMap<String, RegisteredTool>) -> Result<ToolRegistry, DocumentError> {
        let mut reg = ToolRegistry::new();
        for (id, b) in &self.tools {
            let bad = |detail: String| DocumentError::Binding { tool: id.clone(), detail };
            let tool = match (&b.builtin, &b.foreign) {
                (Some(name), None) => builtin(id, name, &b.params).map_err(|e| bad(e.to_string()))?,
                (None, Some(name)) => {
                    let mut t = foreign.get(name).cloned().ok_or_else(|| bad(format!("foreign callable `{name}` is not registered")))?;
                    t.id = id.clone();
                    t
                }
                _ => return Err(bad("set exactly one of `builtin` and `foreign`".into())),
            };
            reg.register(tool).map_err(|e| bad(e.to_string()))?;
        }
        Ok(reg)
    }

    pub fn registry(&self) -> Result<ToolRegistry, DocumentError> {
        self.registry_with(&BTreeMap::new())
    }

    pub fn provider(&self, base_dir: &Path, seed: u64) -> Result<Arc<dyn Provider>, DocumentError> {
        match &self.provider {
            Some(p) => p.build(base_dir, seed),
            None => Ok(Arc::new(MockProvider::auto())),
        }
    }

    pub fn validate(&self, tools: &ToolRegistry) -> ValidationReport {
        validate(&self.graph, tools)
    }
}

fn read(path: &Path) -> Result<String, DocumentError> {
    std::fs::read_to_string(path).map_err(|e| DocumentError::Io { path: path.to_path_buf(), detail: e.to_string() })
}

/// Parses a workflow file without validating it.
pub fn load_document(path: &Path) -> Result<WorkflowDocument, DocumentError> {
    WorkflowDocument::from_text(&read(path)?)
}

/// Parses a workflow file, builds its tool registry and validates the graph.
pub fn load_workflow(path: &Path) -> Result<(WorkflowDocument, ToolRegistry), DocumentError> {
    let doc = load_document(path)?;
    let tools = doc.registry()?;
    let report = doc.validate(&tools);
    if !report.is_executable() {
        return Err(DocumentError::ValidationFailed(report));
    }
    Ok((doc, tools))
}

pub fn save_workflow(doc: &WorkflowDocument, path: &Path) -> Result<(), DocumentError> {
    std::fs::write(path, doc.to_text()).map_err(|e| DocumentError::Io { path: path.to_path_buf(), detail: e.to_string() })
}
