//! Agent node bodies: context assembly, the bounded tool loop, and structured
//! output parsing.
//!
//! The model can only ever name tools. Names outside the node's `tool_refs`
//! are answered with a refusal and recorded as model errors; nothing the model
//! says selects the next node.

use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use super::provider::{Message, Provider, ProviderError, ProviderRequest, ResponseBody, ToolCall, ToolDef, Usage};
use super::tools::{run_tool, ToolEnv, ToolRegistry};
use crate::graph::AgentSpec;
use crate::memory::{ScratchSpace, StateReadError, StateSnapshot};
use crate::value::{canonical_json, FieldType, Schema, Value};

/// Anomalies attributable to the model, never to the framework.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelError {
    UnknownTool { iteration: u32, name: String },
    InvalidToolArgs { iteration: u32, tool: String, detail: String },
    EmptyToolCalls { iteration: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolInvocation {
    pub tool: String,
    pub args: Value,
    pub result: Result<Value, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutcome {
    pub output: Value,
    pub iterations_used: u32,
    pub tool_invocations: Vec<ToolInvocation>,
    pub model_errors: Vec<ModelError>,
    pub usage: Usage,
    /// Wall time inside the provider and tool bodies.
    pub external: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("output schema violation: {0}")]
    OutputSchemaViolation(String),
    #[error("no final answer within {0} iteration(s)")]
    IterationLimitExceeded(u32),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Context(#[from] StateReadError),
    #[error("tool `{0}` is referenced but not registered")]
    UnregisteredTool(String),
    #[error("cancelled")]
    Cancelled,
}

/// A failed agent run with whatever it did before failing.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentFailure {
    pub error: AgentError,
    pub iterations_used: u32,
    pub tool_invocations: Vec<ToolInvocation>,
    pub model_errors: Vec<ModelError>,
    pub external: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("output schema violation: {0}")]
pub struct OutputSchemaViolation(pub String);

/// Parses model text as one JSON record conforming exactly to `schema`.
pub fn parse_structured_output(text: &str, schema: &Schema) -> Result<Value, OutputSchemaViolation> {
    Value::parse_canonical(text.trim(), &FieldType::Record(schema.clone()))
        .map_err(|e| OutputSchemaViolation(e.to_string()))
}

fn schema_text(schema: &Schema) -> String {
    canonical_json(&schema.to_json())
}

/// Builds the first request: system prompt with the required output schema,
/// the serialized inputs, and the declared state keys that are present.
pub fn assemble_context(
    node_id: &str,
    spec: &AgentSpec,
    inputs: &Value,
    snap: &StateSnapshot,
    tools: &ToolRegistry,
) -> Result<ProviderRequest, AgentError> {
    let mut messages = vec![
        Message::new(
            "system",
            format!(
                "{}\n\nRespond with a single JSON object matching this schema:\n{}",
                spec.system_prompt,
                schema_text(&spec.output_schema)
            ),
        ),
        Message::new("user", format!("Inputs:\n{}", inputs.canonical_string())),
    ];
    let mut state = std::collections::BTreeMap::new();
    for key in &spec.declared_state_reads {
        match snap.read(key) {
            Ok(v) => {
                state.insert(key.clone(), v.clone());
            }
            Err(StateReadError::MissingKey(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    if !state.is_empty() {
        messages.push(Message::new("user", format!("State:\n{}", Value::Record(state).canonical_string())));
    }
    let mut tool_defs = Vec::with_capacity(spec.tool_refs.len());
    for t in &spec.tool_refs {
        let reg = tools.get(t).ok_or_else(|| AgentError::UnregisteredTool(t.clone()))?;
        tool_defs.push(ToolDef { name: t.clone(), input_schema: reg.input_schema.clone(), description: reg.description.clone() });
    }
    Ok(ProviderRequest {
        node_id: node_id.to_string(),
        iteration: 1,
        attempt: 0,
        messages,
        tool_defs,
        required_output_schema: spec.output_schema.clone(),
        sampling: spec.sampling,
    })
}

/// Everything an agent attempt needs besides its spec and data.
pub struct AgentEnv<'a> {
    pub node_id: &'a str,
    pub attempt: u32,
    pub provider: &'a dyn Provider,
    pub tools: &'a ToolRegistry,
    /// Base environment for tool calls; the attempt's scratch is filled in.
    pub tool_env: ToolEnv,
}

fn calls_json(calls: &[ToolCall]) -> String {
    let v = serde_json::to_value(calls).expect("tool calls serialize");
    canonical_json(&serde_json::json!({ "tool_calls": v }))
}

/// Runs the bounded agent loop for one attempt.
pub fn run_agent(spec: &AgentSpec, inputs: &Value, snap: &StateSnapshot, env: &AgentEnv<'_>) -> Result<AgentOutcome, AgentFailure> {
    let scratch = ScratchSpace::open(env.node_id, env.attempt);
    let result = agent_loop(spec, inputs, snap, env, &scratch);
    let _ = scratch.close();
    result
}

fn agent_loop(
    spec: &AgentSpec,
    inputs: &Value,
    snap: &StateSnapshot,
    env: &AgentEnv<'_>,
    scratch: &ScratchSpace,
) -> Result<AgentOutcome, AgentFailure> {
    let mut invocations = Vec::new();
    let mut model_errors = Vec::new();
    let mut usage = Usage::default();
    let mut external = Duration::ZERO;
    let mut iteration = 0;
    macro_rules! fail {
        ($e:expr) => {
            return Err(AgentFailure {
                error: $e,
                iterations_used: iteration,
                tool_invocations: invocations,
                model_errors,
                external,
            })
        };
    }
    let mut req = match assemble_context(env.node_id, spec, inputs, snap, env.tools) {
        Ok(r) => r,
        Err(e) => fail!(e),
    };
    req.attempt = env.attempt;
    let mut tool_env = env.tool_env.clone();
    tool_env.node_id = env.node_id.to_string();
    tool_env.scratch = Some(scratch.clone());

    while iteration < spec.max_iterations {
        iteration += 1;
        if env.tool_env.cancel.is_cancelled() {
            fail!(AgentError::Cancelled);
        }
        req.iteration = iteration;
        let t = Instant::now();
        let resp = env.provider.complete(&req);
        external += t.elapsed();
        let resp = match resp {
            Ok(r) => r,
            Err(e) => fail!(e.into()),
        };
        usage.prompt_tokens += resp.usage.prompt_tokens;
        usage.completion_tokens += resp.usage.completion_tokens;
        let calls = match resp.body {
            ResponseBody::FinalText(text) => match parse_structured_output(&text, &spec.output_schema) {
                Ok(output) => {
                    return Ok(AgentOutcome {
                        output,
                        iterations_used: iteration,
                        tool_invocations: invocations,
                        model_errors,
                        usage,
                        external,
                    })
                }
                Err(e) => fail!(AgentError::OutputSchemaViolation(e.0)),
            },
            ResponseBody::ToolCalls(calls) => calls,
        };
        if calls.is_empty() {
            model_errors.push(ModelError::EmptyToolCalls { iteration });
            req.messages.push(Message::new("user", "Empty tool call list. Call a listed tool or answer."));
            continue;
        }
        req.messages.push(Message::new("assistant", calls_json(&calls)));
        for call in calls {
            let reply = if !spec.tool_refs.contains(&call.name) {
                model_errors.push(ModelError::UnknownTool { iteration, name: call.name.clone() });
                let allowed: Vec<&String> = spec.tool_refs.iter().collect();
                serde_json::json!({"tool": call.name, "error": "unknown tool; nothing was executed", "available": allowed})
            } else {
                let Some(reg) = env.tools.get(&call.name) else {
                    fail!(AgentError::UnregisteredTool(call.name));
                };
                match Value::from_json(&call.args, &FieldType::Record(reg.input_schema.clone())) {
                    Err(e) => {
                        model_errors.push(ModelError::InvalidToolArgs {
                            iteration,
                            tool: call.name.clone(),
                            detail: e.to_string(),
                        });
                        serde_json::json!({"tool": call.name, "error": format!("invalid arguments: {e}")})
                    }
                    Ok(args) => {
                        let run = run_tool(&reg.spec(), env.tools, &args, &tool_env);
                        external += run.external;
                        let result = run.result.map_err(|e| e.to_string());
                        let reply = match &result {
                            Ok(v) => serde_json::json!({"tool": call.name, "result": v.to_json()}),
                            Err(e) => serde_json::json!({"tool": call.name, "error": e}),
                        };
                        invocations.push(ToolInvocation { tool: call.name.clone(), args, result });
                        reply
                    }
                }
            };
            req.messages.push(Message::new("tool", canonical_json(&reply)));
        }
    }
    fail!(AgentError::IterationLimitExceeded(spec.max_iterations))
}
