//! Scripted provider and a transcript recorder.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::gen::{random_record, seeded_rng};
use super::provider::{Provider, ProviderError, ProviderRequest, ProviderResponse, ToolCall};

/// What the mock answers when the script has no entry for `(node, iteration)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// A schema-conforming record derived from the node id.
    #[default]
    Auto,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub node: String,
    pub iteration: u32,
    /// A JSON value sent back as final text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r#final: Option<serde_json::Value>,
    /// Raw final text, for malformed outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCall>>,
}

/// Transcript file contents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub fallback: Fallback,
    /// In auto mode, first iterations of agents with tools call every tool once.
    #[serde(default)]
    pub auto_tool_calls: bool,
    /// Simulated model latency per call.
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub responses: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("malformed script: {0}")]
    Malformed(String),
    #[error("entry for `{node}` iteration {iteration} must set exactly one of final, final_text, tool_calls")]
    Ambiguous { node: String, iteration: u32 },
    #[error("duplicate entry for `{node}` iteration {iteration}")]
    Duplicate { node: String, iteration: u32 },
}

#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    responses: BTreeMap<(String, u32), ProviderResponse>,
    fallback: Fallback,
    auto_tool_calls: bool,
    latency: Duration,
}

impl MockProvider {
    /// An empty script answering every request in auto mode.
    pub fn auto() -> Self {
        MockProvider::default()
    }

    pub fn with_auto_tool_calls(mut self, on: bool) -> Self {
        self.auto_tool_calls = on;
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_fallback(mut self, fallback: Fallback) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn respond(mut self, node: &str, iteration: u32, response: ProviderResponse) -> Self {
        self.responses.insert((node.to_string(), iteration), response);
        self
    }

    pub fn from_script(script: &MockScript) -> Result<Self, ScriptError> {
        let mut p = MockProvider {
            responses: BTreeMap::new(),
            fallback: script.fallback,
            auto_tool_calls: script.auto_tool_calls,
            latency: Duration::from_millis(script.latency_ms),
        };
        for e in &script.responses {
            let ambiguous = || ScriptError::Ambiguous { node: e.node.clone(), iteration: e.iteration };
            let resp = match (&e.r#final, &e.final_text, &e.tool_calls) {
                (Some(v), None, None) => ProviderResponse::final_text(serde_json::to_string(v).expect("json")),
                (None, Some(t), None) => ProviderResponse::final_text(t.clone()),
                (None, None, Some(c)) => ProviderResponse::tool_calls(c.clone()),
                _ => return Err(ambiguous()),
            };
            if p.responses.insert((e.node.clone(), e.iteration), resp).is_some() {
                return Err(ScriptError::Duplicate { node: e.node.clone(), iteration: e.iteration });
            }
        }
        Ok(p)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ScriptError> {
        let script: MockScript = serde_json::from_str(text).map_err(|e| ScriptError::Malformed(e.to_string()))?;
        MockProvider::from_script(&script)
    }

    fn auto_response(&self, req: &ProviderRequest) -> ProviderResponse {
        if self.auto_tool_calls && req.iteration == 1 && !req.tool_defs.is_empty() {
            let calls = req
                .tool_defs
                .iter()
                .map(|t| {
                    let mut rng = seeded_rng(&[b"auto-args", req.node_id.as_bytes(), t.name.as_bytes()]);
                    ToolCall { name: t.name.clone(), args: random_record(&t.input_schema, &mut rng).to_json() }
                })
                .collect();
            return ProviderResponse::tool_calls(calls);
        }
        let mut rng = seeded_rng(&[b"auto-final", req.node_id.as_bytes()]);
        ProviderResponse::final_text(random_record(&req.required_output_schema, &mut rng).canonical_string())
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        if let Some(r) = self.responses.get(&(req.node_id.clone(), req.iteration)) {
            return Ok(r.clone());
        }
        match self.fallback {
            Fallback::Auto => Ok(self.auto_response(req)),
            Fallback::Error => Err(ProviderError::NoScript { node: req.node_id.clone(), iteration: req.iteration }),
        }
    }
}

/// One provider exchange.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exchange {
    pub node: String,
    pub attempt: u32,
    pub iteration: u32,
    pub request: String,
    pub response: String,
}

/// Wraps a provider and records every exchange as canonical JSON.
pub struct Recorder<P> {
    inner: P,
    log: Mutex<Vec<Exchange>>,
}

impl<P: Provider> Recorder<P> {
    pub fn new(inner: P) -> Self {
        Recorder { inner, log: Mutex::new(Vec::new()) }
    }

    /// Exchanges ordered by `(node, attempt, iteration)`, so the transcript
    /// does not depend on thread interleaving.
    pub fn transcript(&self) -> Vec<Exchange> {
        let mut log = self.log.lock().expect("recorder lock poisoned").clone();
        log.sort_by(|a, b| (&a.node, a.attempt, a.iteration).cmp(&(&b.node, b.attempt, b.iteration)));
        log
    }
}

impl<P: Provider> Provider for Recorder<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let result = self.inner.complete(req);
        let response = match &result {
            Ok(r) => r.canonical_json(),
            Err(e) => format!("error: {e}"),
        };
        self.log.lock().expect("recorder lock poisoned").push(Exchange {
            node: req.node_id.clone(),
            attempt: req.attempt,
            iteration: req.iteration,
            request: req.canonical_json(),
            response,
        });
        result
    }
}
