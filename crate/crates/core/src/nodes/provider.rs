//! Provider abstraction: one request/response shape for every model backend.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Sampling;
use crate::value::{canonical_json, Schema};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Message { role: role.to_string(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDef {
    pub name: String,
    pub input_schema: Schema,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    /// Routing metadata for scripted and seeded providers; never sent as content.
    pub node_id: String,
    /// 1-based iteration within the agent loop.
    pub iteration: u32,
    /// 0-based node attempt.
    pub attempt: u32,
    pub messages: Vec<Message>,
    pub tool_defs: Vec<ToolDef>,
    pub required_output_schema: Schema,
    pub sampling: Sampling,
}

impl ProviderRequest {
    pub fn canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("request serialization is infallible"))
    }
}

/// A tool call as the model produced it; arguments are untyped until checked
/// against the tool's input schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub args: serde_json::Value,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseBody {
    FinalText(String),
    ToolCalls(Vec<ToolCall>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub body: ResponseBody,
    #[serde(default)]
    pub usage: Usage,
}

impl ProviderResponse {
    pub fn final_text(text: impl Into<String>) -> Self {
        ProviderResponse { body: ResponseBody::FinalText(text.into()), usage: Usage::default() }
    }

    pub fn tool_calls(calls: Vec<ToolCall>) -> Self {
        ProviderResponse { body: ResponseBody::ToolCalls(calls), usage: Usage::default() }
    }

    pub fn canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("response serialization is infallible"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("no scripted response for node `{node}` iteration {iteration}")]
    NoScript { node: String, iteration: u32 },
}

/// A model backend. Implementations must be safe for concurrent use.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}
