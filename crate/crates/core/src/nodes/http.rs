//! Provider speaking the OpenAI-compatible chat-completions wire format.

use std::time::Duration;

use serde_json::{json, Value as J};

use super::provider::{Message, Provider, ProviderError, ProviderRequest, ProviderResponse, ToolCall, Usage};
use crate::value::{FieldType, Schema};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "DETFLOW_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpProvider {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpProvider {
            base_url: base_url.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            timeout: Duration::from_secs(60),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    /// Request body for `req`.
    pub fn body(&self, req: &ProviderRequest) -> J {
        let messages: Vec<J> = req.messages.iter().map(wire_message).collect();
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": req.sampling.temperature,
            "max_tokens": req.sampling.max_tokens,
        });
        if !req.tool_defs.is_empty() {
            let tools: Vec<J> = req
                .tool_defs
                .iter()
                .map(|t| {
                    json!({
                        "type": "function",
                        "function": {
                            "name": t.name,
                            "description": t.description,
                            "parameters": json_schema(&FieldType::Record(t.input_schema.clone())),
                        }
                    })
                })
                .collect();
            body["tools"] = J::Array(tools);
        }
        body
    }
}

// Tool traffic is sent as plain user/assistant text so no call ids are needed.
fn wire_message(m: &Message) -> J {
    match m.role.as_str() {
        "tool" => json!({"role": "user", "content": format!("[tool result] {}", m.content)}),
        role => json!({"role": role, "content": m.content}),
    }
}

/// JSON Schema for a field type.
pub fn json_schema(ty: &FieldType) -> J {
    match ty {
        FieldType::Bool => json!({"type": "boolean"}),
        FieldType::Int => json!({"type": "integer"}),
        FieldType::Float => json!({"type": "number"}),
        FieldType::String => json!({"type": "string"}),
        FieldType::Bytes => json!({"type": "string", "contentEncoding": "base64"}),
        FieldType::List(inner) => json!({"type": "array", "items": json_schema(inner)}),
        FieldType::Record(s) => record_schema(s),
    }
}

fn record_schema(s: &Schema) -> J {
    let props: serde_json::Map<String, J> = s.iter().map(|(k, t)| (k.clone(), json_schema(t))).collect();
    let required: Vec<&String> = s.iter().map(|(k, _)| k).collect();
    json!({"type": "object", "properties": props, "required": required, "additionalProperties": false})
}

/// Maps a chat-completions response body to a provider response.
pub fn parse_completion(body: &J) -> Result<ProviderResponse, ProviderError> {
    let malformed = |what: &str| ProviderError::Malformed(what.to_string());
    let msg = body.pointer("/choices/0/message").ok_or_else(|| malformed("missing choices[0].message"))?;
    let usage = Usage {
        prompt_tokens: body.pointer("/usage/prompt_tokens").and_then(J::as_u64).unwrap_or(0),
        completion_tokens: body.pointer("/usage/completion_tokens").and_then(J::as_u64).unwrap_or(0),
    };
    if let Some(calls) = msg.get("tool_calls").and_then(J::as_array).filter(|c| !c.is_empty()) {
        let mut out = Vec::with_capacity(calls.len());
        for c in calls {
            let name = c
                .pointer("/function/name")
                .and_then(J::as_str)
                .ok_or_else(|| malformed("tool call without function.name"))?;
            let args = match c.pointer("/function/arguments") {
                Some(J::String(s)) => serde_json::from_str(s).unwrap_or(J::String(s.clone())),
                Some(other) => other.clone(),
                None => J::Object(Default::default()),
            };
            out.push(ToolCall { name: name.to_string(), args });
        }
        return Ok(ProviderResponse { body: super::provider::ResponseBody::ToolCalls(out), usage });
    }
    let text = msg.get("content").and_then(J::as_str).ok_or_else(|| malformed("message without content"))?;
    Ok(ProviderResponse { body: super::provider::ResponseBody::FinalText(text.to_string()), usage })
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut call = agent.post(&self.endpoint()).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let response = match call.send_string(&self.body(req).to_string()) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let detail = r.into_string().unwrap_or_default();
                return Err(ProviderError::Transport(format!("HTTP {code}: {detail}")));
            }
            Err(e) => return Err(ProviderError::Transport(e.to_string())),
        };
        let text = response.into_string().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let json: J = serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        parse_completion(&json)
    }
}
