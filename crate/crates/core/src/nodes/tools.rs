//! Tool registry, built-in tools, and tool execution with timeout and retry.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::engine::recovery::{apply_recovery, Recoverable, RecoveryAction};
use crate::graph::{ToolCatalog, ToolSpec, DEFAULT_TOOL_TIMEOUT_MS};
use crate::memory::{file_request_schema, file_response_schema, ConnectorHub, ScratchSpace};
use crate::value::{FieldType, Schema, Value};

/// Cooperative cancellation shared between the scheduler and node bodies.
#[derive(Debug, Clone, Default)]
pub struct CancelFlag(Arc<AtomicBool>);

impl CancelFlag {
    pub fn new() -> Self {
        CancelFlag::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }

    /// Sleeps up to `d`; returns false if cancelled first.
    pub fn sleep(&self, d: Duration) -> bool {
        let end = Instant::now() + d;
        loop {
            if self.is_cancelled() {
                return false;
            }
            let now = Instant::now();
            if now >= end {
                return true;
            }
            std::thread::sleep((end - now).min(Duration::from_millis(5)));
        }
    }
}

/// What a tool body can reach: its attempt's scratch space and the connector hub.
#[derive(Debug, Clone)]
pub struct ToolContext {
    pub scratch: ScratchSpace,
    pub connectors: Arc<ConnectorHub>,
    pub cancel: CancelFlag,
}

pub trait ToolFn: Send + Sync {
    fn call(&self, args: &Value, ctx: &ToolContext) -> Result<Value, String>;
}

impl<F> ToolFn for F
where
    F: Fn(&Value, &ToolContext) -> Result<Value, String> + Send + Sync,
{
    fn call(&self, args: &Value, ctx: &ToolContext) -> Result<Value, String> {
        self(args, ctx)
    }
}

#[derive(Clone)]
pub struct RegisteredTool {
    pub id: String,
    pub input_schema: Schema,
    pub output_schema: Schema,
    pub description: String,
    /// Timeout used when an agent calls this tool.
    pub default_timeout_ms: u64,
    pub func: Arc<dyn ToolFn>,
}

impl std::fmt::Debug for RegisteredTool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegisteredTool").field("id", &self.id).finish_non_exhaustive()
    }
}

impl RegisteredTool {
    pub fn new(
        id: impl Into<String>,
        input_schema: Schema,
        output_schema: Schema,
        func: impl ToolFn + 'static,
    ) -> Self {
        let id = id.into();
        RegisteredTool {
            description: format!("tool {id}"),
            id,
            input_schema,
            output_schema,
            default_timeout_ms: DEFAULT_TOOL_TIMEOUT_MS,
            func: Arc::new(func),
        }
    }

    pub fn with_description(mut self, d: impl Into<String>) -> Self {
        self.description = d.into();
        self
    }

    /// The node spec that runs this tool with its registered schemas.
    pub fn spec(&self) -> ToolSpec {
        ToolSpec::new(self.id.clone(), self.input_schema.clone(), self.output_schema.clone())
            .with_timeout_ms(self.default_timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("tool `{0}` is already registered")]
    DuplicateTool(String),
    #[error("unknown builtin `{0}`")]
    UnknownBuiltin(String),
    #[error("builtin `{name}`: {detail}")]
    BadParams { name: String, detail: String },
}

#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, RegisteredTool>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        ToolRegistry::default()
    }

    pub fn register(&mut self, tool: RegisteredTool) -> Result<(), RegistryError> {
        if self.tools.contains_key(&tool.id) {
            return Err(RegistryError::DuplicateTool(tool.id));
        }
        self.tools.insert(tool.id.clone(), tool);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&RegisteredTool> {
        self.tools.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.tools.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.tools.keys()
    }
}

impl ToolCatalog for ToolRegistry {
    fn tool_signature(&self, id: &str) -> Option<(Schema, Schema)> {
        self.tools.get(id).map(|t| (t.input_schema.clone(), t.output_schema.clone()))
    }
}

/// Names accepted by [`builtin`].
pub const BUILTINS: &[&str] =
    &["add", "concat", "fail_n_times", "file_read", "http_fetch", "noop", "sleep", "upper"];

fn param_schema(name: &str, params: &serde_json::Value) -> Result<Schema, RegistryError> {
    match params.get("schema") {
        None => Ok(Schema::empty()),
        Some(s) => Schema::from_json(s).map_err(|e| RegistryError::BadParams { name: name.into(), detail: e.to_string() }),
    }
}

fn param_u64(name: &str, params: &serde_json::Value, key: &str) -> Result<u64, RegistryError> {
    params.get(key).and_then(serde_json::Value::as_u64).ok_or_else(|| RegistryError::BadParams {
        name: name.into(),
        detail: format!("missing non-negative integer parameter `{key}`"),
    })
}

fn param_str<'p>(params: &'p serde_json::Value, key: &str, default: &'p str) -> &'p str {
    params.get(key).and_then(serde_json::Value::as_str).unwrap_or(default)
}

fn str_field<'v>(args: &'v Value, f: &str) -> &'v str {
    args.get(f).and_then(Value::as_str).unwrap_or_default()
}

/// Instantiates built-in `name` under tool id `id`.
///
/// `noop`, `sleep` and `fail_n_times` echo their input and take an optional
/// `schema` parameter (default: the empty record).
pub fn builtin(id: &str, name: &str, params: &serde_json::Value) -> Result<RegisteredTool, RegistryError> {
    let tool = match name {
        "noop" => {
            let s = param_schema(name, params)?;
            RegisteredTool::new(id, s.clone(), s, |args: &Value, _: &ToolContext| Ok(args.clone()))
        }
        "add" => {
            let i = Schema::of([("a", FieldType::Int), ("b", FieldType::Int)]);
            RegisteredTool::new(id, i, Schema::of([("sum", FieldType::Int)]), |args: &Value, _: &ToolContext| {
                let (a, b) = (args.get("a").and_then(Value::as_int), args.get("b").and_then(Value::as_int));
                let sum = a.zip(b).and_then(|(a, b)| a.checked_add(b)).ok_or("integer overflow")?;
                Ok(Value::record([("sum", Value::Int(sum))]))
            })
        }
        "concat" => {
            let i = Schema::of([("a", FieldType::String), ("b", FieldType::String)]);
            RegisteredTool::new(id, i, Schema::of([("text", FieldType::String)]), |args: &Value, _: &ToolContext| {
                Ok(Value::record([("text", format!("{}{}", str_field(args, "a"), str_field(args, "b")).into())]))
            })
        }
        "upper" => {
            let s = Schema::of([("text", FieldType::String)]);
            RegisteredTool::new(id, s.clone(), s, |args: &Value, _: &ToolContext| {
                Ok(Value::record([("text", str_field(args, "text").to_uppercase().into())]))
            })
        }
        "sleep" => {
            let ms = param_u64(name, params, "ms")?;
            let s = param_schema(name, params)?;
            RegisteredTool::new(id, s.clone(), s, move |args: &Value, ctx: &ToolContext| {
                if ctx.cancel.sleep(Duration::from_millis(ms)) {
                    Ok(args.clone())
                } else {
                    Err("cancelled".into())
                }
            })
        }
        "fail_n_times" => {
            let n = param_u64(name, params, "n")?;
            let s = param_schema(name, params)?;
            let calls = AtomicU32::new(0);
            RegisteredTool::new(id, s.clone(), s, move |args: &Value, _: &ToolContext| {
                let k = u64::from(calls.fetch_add(1, Ordering::SeqCst));
                if k < n {
                    Err(format!("scripted failure {} of {n}", k + 1))
                } else {
                    Ok(args.clone())
                }
            })
        }
        "file_read" => {
            let conn = param_str(params, "connector", "file").to_string();
            RegisteredTool::new(id, file_request_schema(), file_response_schema(), move |args: &Value, ctx: &ToolContext| {
                ctx.connectors.call(&conn, args).map_err(|e| e.to_string())
            })
        }
        "http_fetch" => {
            let conn = param_str(params, "connector", "http").to_string();
            let i = Schema::of([("url", FieldType::String)]);
            let o = Schema::of([("status", FieldType::Int), ("body", FieldType::String)]);
            RegisteredTool::new(id, i, o, move |args: &Value, ctx: &ToolContext| {
                let req = Value::record([
                    ("method", "GET".into()),
                    ("url", str_field(args, "url").into()),
                    ("headers", Value::List(vec![])),
                    ("body", "".into()),
                ]);
                ctx.connectors.call(&conn, &req).map_err(|e| e.to_string())
            })
        }
        other => return Err(RegistryError::UnknownBuiltin(other.to_string())),
    };
    Ok(tool.with_description(format!("builtin {name}")))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("tool `{0}` is not registered")]
    Unregistered(String),
    #[error("tool `{tool}` input: {detail}")]
    InputSchemaViolation { tool: String, detail: String },
    #[error("tool `{tool}` timed out after {timeout_ms} ms (attempt {attempts})")]
    Timeout { tool: String, timeout_ms: u64, attempts: u32 },
    #[error("tool `{tool}` failed after {attempts} attempt(s): {detail}")]
    Failed { tool: String, attempts: u32, detail: String },
    #[error("tool `{tool}` output: {detail}")]
    OutputSchemaViolation { tool: String, detail: String },
    #[error("tool `{0}` cancelled")]
    Cancelled(String),
}

impl Recoverable for ToolError {
    fn is_retryable(&self) -> bool {
        matches!(self, ToolError::Timeout { .. } | ToolError::Failed { .. })
    }
}

/// One retry decision taken inside [`run_tool`].
#[derive(Debug, Clone, PartialEq)]
pub struct RetryNote {
    pub attempt: u32,
    pub delay: Duration,
    pub error: String,
}

/// Outcome of [`run_tool`] with timing split into tool time and backoff.
#[derive(Debug, Clone)]
pub struct ToolRun {
    pub result: Result<Value, ToolError>,
    pub attempts: u32,
    pub external: Duration,
    pub backoff: Duration,
    pub retries: Vec<RetryNote>,
}

/// Execution environment for [`run_tool`].
#[derive(Debug, Clone)]
pub struct ToolEnv {
    pub node_id: String,
    pub connectors: Arc<ConnectorHub>,
    pub cancel: CancelFlag,
    /// Scratch to share across attempts; each attempt gets a fresh one if unset.
    pub scratch: Option<ScratchSpace>,
}

impl ToolEnv {
    pub fn new(node_id: impl Into<String>) -> Self {
        ToolEnv {
            node_id: node_id.into(),
            connectors: Arc::new(ConnectorHub::new()),
            cancel: CancelFlag::new(),
            scratch: None,
        }
    }
}

fn attempt_once(tool: &RegisteredTool, spec: &ToolSpec, args: &Value, ctx: ToolContext) -> Result<Value, ToolError> {
    let (tx, rx) = mpsc::channel();
    let func = Arc::clone(&tool.func);
    let args = args.clone();
    std::thread::Builder::new()
        .name(format!("tool-{}", tool.id))
        .spawn(move || {
            let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| func.call(&args, &ctx)));
            let _ = tx.send(r.unwrap_or_else(|_| Err("tool panicked".to_string())));
        })
        .map_err(|e| ToolError::Failed { tool: tool.id.clone(), attempts: 1, detail: e.to_string() })?;
    match rx.recv_timeout(Duration::from_millis(spec.timeout_ms)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(detail)) => Err(ToolError::Failed { tool: tool.id.clone(), attempts: 1, detail }),
        // a timed-out body keeps running detached; its result is dropped
        Err(_) => Err(ToolError::Timeout { tool: tool.id.clone(), timeout_ms: spec.timeout_ms, attempts: 1 }),
    }
}

/// Runs a tool with the spec's timeout and retry policy, validating input and
/// output against the spec's schemas.
pub fn run_tool(spec: &ToolSpec, registry: &ToolRegistry, args: &Value, env: &ToolEnv) -> ToolRun {
    let mut run = ToolRun {
        result: Err(ToolError::Unregistered(spec.fn_ref.clone())),
        attempts: 0,
        external: Duration::ZERO,
        backoff: Duration::ZERO,
        retries: Vec::new(),
    };
    let Some(tool) = registry.get(&spec.fn_ref) else { return run };
    if let Err(e) = spec.input_schema.check(args) {
        run.result = Err(ToolError::InputSchemaViolation { tool: tool.id.clone(), detail: e.to_string() });
        return run;
    }
    let mut attempt = 0;
    loop {
        if env.cancel.is_cancelled() {
            run.result = Err(ToolError::Cancelled(tool.id.clone()));
            return run;
        }
        let scratch = env.scratch.clone().unwrap_or_else(|| ScratchSpace::open(&env.node_id, attempt));
        let ctx = ToolContext { scratch: scratch.clone(), connectors: Arc::clone(&env.connectors), cancel: env.cancel.clone() };
        let started = Instant::now();
        let outcome = attempt_once(tool, spec, args, ctx);
        run.external += started.elapsed();
        run.attempts = attempt + 1;
        if env.scratch.is_none() {
            let _ = scratch.close();
        }
        let err = match outcome {
            Ok(v) => {
                run.result = spec
                    .output_schema
                    .check(&v)
                    .map(|_| v)
                    .map_err(|e| ToolError::OutputSchemaViolation { tool: tool.id.clone(), detail: e.to_string() });
                return run;
            }
            Err(e) => e,
        };
        match apply_recovery(&err, &spec.retry, attempt) {
            RecoveryAction::RetryAfter(delay) => {
                run.retries.push(RetryNote { attempt, delay, error: err.to_string() });
                let t = Instant::now();
                let completed = env.cancel.sleep(delay);
                run.backoff += t.elapsed();
                if !completed {
                    run.result = Err(ToolError::Cancelled(tool.id.clone()));
                    return run;
                }
                attempt += 1;
            }
            RecoveryAction::Fail => {
                run.result = Err(match err {
                    ToolError::Timeout { tool, timeout_ms, .. } => ToolError::Timeout { tool, timeout_ms, attempts: attempt + 1 },
                    ToolError::Failed { tool, detail, .. } => ToolError::Failed { tool, attempts: attempt + 1, detail },
                    other => other,
                });
                return run;
            }
        }
    }
}
