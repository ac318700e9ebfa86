//! C ABI over the detflow engine.
//!
//! Values, schemas, node kinds and configs cross the boundary as UTF-8 JSON.
//! Handles are opaque pointers owned by the caller and released with their
//! `*_free` function. Strings returned as `char *` are owned by the caller and
//! released with `df_string_free`.

mod error;

use std::collections::BTreeMap;
use std::ffi::{c_char, c_void, CStr, CString};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde_json::Value as J;

use detflow::builder::{BuildError, WorkflowBuilder};
use detflow::document::{load_document, save_workflow, DocumentError, ProviderConfig, ToolBinding, WorkflowDocument};
use detflow::engine::{execute, resume, EngineError, ExecutionConfig, ExecutionResult, RunOutcome, Runtime};
use detflow::graph::{EdgeSpec, NodeKind, NodeSpec};
use detflow::nodes::{builtin, RegisteredTool, RegistryError, ToolContext, ToolRegistry};
use detflow::value::{FieldType, Schema, Value};

pub use error::{df_last_error, DfStatus};
use error::{guard, Error, Res};

/// Registered tools, native builtins and host callables alike.
pub struct DfRegistry {
    tools: BTreeMap<String, RegisteredTool>,
    bindings: BTreeMap<String, ToolBinding>,
}

/// A workflow under construction.
pub struct DfBuilder {
    inner: Option<WorkflowBuilder>,
}

/// A built or loaded workflow with its tool bindings.
pub struct DfWorkflow {
    doc: WorkflowDocument,
    base_dir: PathBuf,
}

/// The outcome of one run.
pub struct DfResult {
    res: ExecutionResult,
}

/// Where a host tool leaves its answer.
pub struct DfReply {
    answer: Option<Result<String, String>>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfRunStatus {
    Completed = 0,
    Failed = 1,
    Stalled = 2,
    Interrupted = 3,
}

/// Host tool entry point. Receives the arguments as a JSON object and must
/// answer through `df_reply_ok` or `df_reply_error` before returning.
pub type DfToolFn = Option<unsafe extern "C" fn(user_data: *mut c_void, args_json: *const c_char, reply: *mut DfReply) -> i32>;

/// Releases `user_data` once the tool is dropped.
pub type DfFreeFn = Option<unsafe extern "C" fn(user_data: *mut c_void)>;

unsafe fn text<'a>(p: *const c_char, what: &str) -> Res<&'a str> {
    if p.is_null() {
        return Err(Error::new(DfStatus::NullArgument, format!("{what} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Error::new(DfStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn opt_text<'a>(p: *const c_char, what: &str) -> Res<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

fn json(src: &str, what: &str) -> Res<J> {
    serde_json::from_str(src).map_err(|e| Error::new(DfStatus::Parse, format!("{what}: {e}")))
}

unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Res<&'a mut T> {
    p.as_mut().ok_or_else(|| Error::new(DfStatus::NullArgument, format!("{what} is NULL")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Res<()> {
    if out.is_null() {
        return Err(Error::new(DfStatus::NullArgument, "output pointer is NULL"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', "\\0")).expect("nul bytes replaced").into_raw()
}

fn schema(src: &str, what: &str) -> Res<Schema> {
    Schema::from_json(&json(src, what)?).map_err(|e| Error::new(DfStatus::Schema, format!("{what}: {e}")))
}

fn registry_error(e: RegistryError) -> Error {
    let status = match e {
        RegistryError::DuplicateTool(_) => DfStatus::DuplicateTool,
        RegistryError::UnknownBuiltin(_) => DfStatus::UnknownBuiltin,
        RegistryError::BadParams { .. } => DfStatus::Parse,
    };
    Error::new(status, e.to_string())
}

fn document_error(e: DocumentError) -> Error {
    let status = match &e {
        DocumentError::Io { .. } => DfStatus::Io,
        DocumentError::Parse { .. } => DfStatus::Parse,
        DocumentError::ValidationFailed(_) => DfStatus::ValidationFailed,
        DocumentError::Binding { .. } => DfStatus::Binding,
        DocumentError::Provider(_) => DfStatus::Engine,
    };
    Error::new(status, e.to_string())
}

fn engine_error(e: EngineError) -> Error {
    let status = match &e {
        EngineError::Validation(_) | EngineError::Subgraph(_) => DfStatus::ValidationFailed,
        EngineError::InitialState(_) => DfStatus::SchemaViolation,
        EngineError::Checkpoint(_) => DfStatus::Checkpoint,
        EngineError::Config(_) => DfStatus::Engine,
    };
    Error::new(status, e.to_string())
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn df_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn df_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Decodes `value_json` as a value of `type_json` and encodes it again.
/// Host bindings use this to check that values survive the boundary.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn df_value_roundtrip(type_json: *const c_char, value_json: *const c_char, out: *mut *mut c_char) -> DfStatus {
    guard(|| {
        let ty = FieldType::from_json(&json(text(type_json, "type_json")?, "type_json")?)
            .map_err(|e| Error::new(DfStatus::Schema, e.to_string()))?;
        let v = Value::from_json(&json(text(value_json, "value_json")?, "value_json")?, &ty)
            .map_err(|e| Error::new(DfStatus::SchemaViolation, e.to_string()))?;
        if out.is_null() {
            return Err(Error::new(DfStatus::NullArgument, "output pointer is NULL"));
        }
        *out = c_string(v.to_json().to_string());
        Ok(())
    })
}

// ---- tools ----

#[no_mangle]
pub extern "C" fn df_registry_new() -> *mut DfRegistry {
    Box::into_raw(Box::new(DfRegistry { tools: BTreeMap::new(), bindings: BTreeMap::new() }))
}

/// # Safety
/// `reg` must come from `df_registry_new` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn df_registry_free(reg: *mut DfRegistry) {
    if !reg.is_null() {
        drop(Box::from_raw(reg));
    }
}

impl DfRegistry {
    fn add(&mut self, tool: RegisteredTool, binding: ToolBinding) -> Res<()> {
        if self.tools.contains_key(&tool.id) {
            return Err(registry_error(RegistryError::DuplicateTool(tool.id)));
        }
        self.bindings.insert(tool.id.clone(), binding);
        self.tools.insert(tool.id.clone(), tool);
        Ok(())
    }

    fn all(&self) -> Res<ToolRegistry> {
        let mut reg = ToolRegistry::new();
        for t in self.tools.values() {
            reg.register(t.clone()).map_err(registry_error)?;
        }
        Ok(reg)
    }

    /// Tools for `doc`: its own bindings first, resolving foreign names
    /// against this registry, then every other tool registered here.
    fn for_document(&self, doc: &WorkflowDocument) -> Res<ToolRegistry> {
        let mut reg = doc.registry_with(&self.tools).map_err(document_error)?;
        for (id, t) in &self.tools {
            if !reg.contains(id) {
                reg.register(t.clone()).map_err(registry_error)?;
            }
        }
        Ok(reg)
    }
}

/// Registers builtin `name` as tool `id`. `params_json` may be NULL.
///
/// # Safety
/// `reg` must be a live registry; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn df_registry_add_builtin(
    reg: *mut DfRegistry,
    id: *const c_char,
    name: *const c_char,
    params_json: *const c_char,
) -> DfStatus {
    guard(|| {
        let reg = handle(reg, "registry")?;
        let (id, name) = (text(id, "id")?, text(name, "name")?);
        let params = match opt_text(params_json, "params_json")? {
            Some(s) => json(s, "params_json")?,
            None => J::Null,
        };
        let tool = builtin(id, name, &params).map_err(registry_error)?;
        reg.add(tool, ToolBinding::builtin(name, params))
    })
}

struct UserData {
    ptr: *mut c_void,
    free: DfFreeFn,
}

// The host promises `user_data` may be used from any thread; non-reentrant
// tools are additionally serialized below.
unsafe impl Send for UserData {}
unsafe impl Sync for UserData {}

impl Drop for UserData {
    fn drop(&mut self) {
        if let Some(f) = self.free {
            unsafe { f(self.ptr) }
        }
    }
}

struct HostTool {
    call: unsafe extern "C" fn(*mut c_void, *const c_char, *mut DfReply) -> i32,
    data: UserData,
    serial: Option<Mutex<()>>,
    output: FieldType,
}

impl HostTool {
    fn invoke(&self, args: &Value) -> Result<Value, String> {
        let _turn = self.serial.as_ref().map(|m| m.lock().unwrap_or_else(|p| p.into_inner()));
        let args = CString::new(args.to_json().to_string()).map_err(|e| e.to_string())?;
        let mut reply = DfReply { answer: None };
        let code = unsafe { (self.call)(self.data.ptr, args.as_ptr(), &mut reply) };
        match (reply.answer, code) {
            (Some(Ok(out)), 0) => {
                let j: J = serde_json::from_str(&out).map_err(|e| format!("host tool returned invalid JSON: {e}"))?;
                Value::from_json(&j, &self.output).map_err(|e| e.to_string())
            }
            (Some(Err(msg)), _) => Err(msg),
            (_, code) => Err(format!("host tool returned status {code} without a result")),
        }
    }
}

/// Registers a host callable as tool `name`. Unless `reentrant` is set, calls
/// to this tool are serialized. `free_user_data`, if given, runs once when
/// the last copy of the tool is dropped; that can be on an engine thread
/// shortly after `df_registry_free` returns.
///
/// # Safety
/// `reg` must be a live registry; strings must be NUL-terminated; `callback`
/// must be safe to call from any thread with `user_data`.
#[no_mangle]
pub unsafe extern "C" fn df_registry_register_tool(
    reg: *mut DfRegistry,
    name: *const c_char,
    input_schema_json: *const c_char,
    output_schema_json: *const c_char,
    callback: DfToolFn,
    user_data: *mut c_void,
    free_user_data: DfFreeFn,
    reentrant: bool,
) -> DfStatus {
    // Take ownership of user_data first so it is released on every error path.
    let data = UserData { ptr: user_data, free: free_user_data };
    guard(move || {
        let reg = handle(reg, "registry")?;
        let name = text(name, "name")?;
        let input = schema(text(input_schema_json, "input_schema_json")?, "input schema")?;
        let output = schema(text(output_schema_json, "output_schema_json")?, "output schema")?;
        let call = callback.ok_or_else(|| Error::new(DfStatus::NullArgument, "callback is NULL"))?;
        if reg.tools.contains_key(name) {
            return Err(registry_error(RegistryError::DuplicateTool(name.to_string())));
        }
        let host = Arc::new(HostTool {
            call,
            data,
            serial: (!reentrant).then(|| Mutex::new(())),
            output: FieldType::Record(output.clone()),
        });
        let tool = RegisteredTool::new(name, input, output, move |args: &Value, _: &ToolContext| host.invoke(args));
        reg.add(tool, ToolBinding::foreign(name))
    })
}

/// Sets a host tool's result to `json`.
///
/// # Safety
/// `reply` must be the pointer passed to the callback; `json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn df_reply_ok(reply: *mut DfReply, json: *const c_char) -> DfStatus {
    guard(|| {
        let reply = handle(reply, "reply")?;
        reply.answer = Some(Ok(text(json, "json")?.to_string()));
        Ok(())
    })
}

/// Marks a host tool call as failed with `message`.
///
/// # Safety
/// `reply` must be the pointer passed to the callback; `message` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn df_reply_error(reply: *mut DfReply, message: *const c_char) -> DfStatus {
    guard(|| {
        let reply = handle(reply, "reply")?;
        reply.answer = Some(Err(text(message, "message")?.to_string()));
        Ok(())
    })
}

// ---- builder ----

/// # Safety
/// Strings must be NUL-terminated. Returns NULL if either is invalid.
#[no_mangle]
pub unsafe extern "C" fn df_builder_new(name: *const c_char, version: *const c_char) -> *mut DfBuilder {
    match (text(name, "name"), text(version, "version")) {
        (Ok(n), Ok(v)) => Box::into_raw(Box::new(DfBuilder { inner: Some(WorkflowBuilder::new(n, v)) })),
        _ => std::ptr::null_mut(),
    }
}

/// # Safety
/// `b` must come from `df_builder_new` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn df_builder_free(b: *mut DfBuilder) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

unsafe fn step(b: *mut DfBuilder, f: impl FnOnce(WorkflowBuilder) -> Res<WorkflowBuilder>) -> DfStatus {
    guard(|| {
        let b = handle(b, "builder")?;
        let inner = b.inner.take().ok_or_else(|| Error::new(DfStatus::Build, "builder was already built"))?;
        b.inner = Some(f(inner)?);
        Ok(())
    })
}

/// Declares state key `key` of type `type_json`.
///
/// # Safety
/// `b` must be a live builder; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn df_builder_state(b: *mut DfBuilder, key: *const c_char, type_json: *const c_char) -> DfStatus {
    step(b, |w| {
        let ty = FieldType::from_json(&json(text(type_json, "type_json")?, "type_json")?)
            .map_err(|e| Error::new(DfStatus::Schema, e.to_string()))?;
        Ok(w.state(text(key, "key")?, ty))
    })
}

/// Adds node `id`. `kind_json` is a node body as in workflow files, e.g.
/// `{"type": "tool", "fn_ref": "add", "input_schema": {...}, "output_schema": {...}}`.
///
/// # Safety
/// `b` must be a live builder; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn df_builder_node(b: *mut DfBuilder, id: *const c_char, kind_json: *const c_char) -> DfStatus {
    step(b, |w| {
        let kind: NodeKind = serde_json::from_value(json(text(kind_json, "kind_json")?, "kind_json")?)
            .map_err(|e| Error::new(DfStatus::Parse, format!("node kind: {e}")))?;
        Ok(w.node(NodeSpec::new(text(id, "id")?, kind)))
    })
}

/// Connects `src` to `dst`. `field_map_json` maps source fields to target
/// fields; NULL makes an ordering-only edge. `transform` may be NULL.
///
/// # Safety
/// `b` must be a live builder; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn df_builder_connect(
    b: *mut DfBuilder,
    src: *const c_char,
    dst: *const c_char,
    field_map_json: *const c_char,
    transform: *const c_char,
) -> DfStatus {
    step(b, |w| {
        let (src, dst) = (text(src, "src")?, text(dst, "dst")?);
        let mut edge = EdgeSpec::new(format!("{src}->{dst}"), src, dst);
        if let Some(m) = opt_text(field_map_json, "field_map_json")? {
            let map: BTreeMap<String, String> = serde_json::from_value(json(m, "field_map_json")?)
                .map_err(|e| Error::new(DfStatus::Parse, format!("field map: {e}")))?;
            for (a, z) in map {
                edge = edge.map(a, z);
            }
        }
        if let Some(t) = opt_text(transform, "transform")? {
            edge = edge.with_transform(t);
        }
        Ok(w.edge_spec(edge))
    })
}

/// Builds and validates against `reg` (NULL means no tools). On
/// `ValidationFailed` the message lists every finding. The builder is spent
/// either way but must still be freed.
///
/// # Safety
/// `b` must be a live builder; `reg` NULL or live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn df_builder_build(b: *mut DfBuilder, reg: *const DfRegistry, out: *mut *mut DfWorkflow) -> DfStatus {
    guard(|| {
        let b = handle(b, "builder")?;
        let inner = b.inner.take().ok_or_else(|| Error::new(DfStatus::Build, "builder was already built"))?;
        let tools = match reg.as_ref() {
            Some(r) => r.all()?,
            None => ToolRegistry::new(),
        };
        let graph = inner.build_validated(&tools).map_err(|e| match e {
            BuildError::Invalid(report) => Error::new(DfStatus::ValidationFailed, report.to_string()),
            other => Error::new(DfStatus::Build, other.to_string()),
        })?;
        let base_dir = std::env::current_dir().unwrap_or_default();
        put(out, DfWorkflow { doc: WorkflowDocument::new(graph), base_dir })
    })
}

// ---- workflows ----

/// Loads and validates a workflow file. Foreign bindings resolve against
/// `reg`, which may be NULL when the file binds only builtins.
///
/// # Safety
/// `path` must be NUL-terminated; `reg` NULL or live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn df_workflow_load(path: *const c_char, reg: *const DfRegistry, out: *mut *mut DfWorkflow) -> DfStatus {
    guard(|| {
        let path = Path::new(text(path, "path")?);
        let doc = load_document(path).map_err(document_error)?;
        let tools = match reg.as_ref() {
            Some(r) => r.for_document(&doc)?,
            None => doc.registry().map_err(document_error)?,
        };
        let report = doc.validate(&tools);
        if !report.is_executable() {
            return Err(Error::new(DfStatus::ValidationFailed, report.to_string()));
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        put(out, DfWorkflow { doc, base_dir })
    })
}

/// Writes the workflow file. Tools used by the graph that are registered in
/// `reg` and not yet bound are bound as builtin or foreign accordingly.
///
/// # Safety
/// `wf` must be live; `reg` NULL or live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn df_workflow_save(wf: *mut DfWorkflow, reg: *const DfRegistry, path: *const c_char) -> DfStatus {
    guard(|| {
        let wf = handle(wf, "workflow")?;
        let path = Path::new(text(path, "path")?);
        if let Some(reg) = reg.as_ref() {
            let mut used = Vec::new();
            for n in wf.doc.graph.nodes() {
                match &n.kind {
                    NodeKind::Tool(t) => used.push(t.fn_ref.clone()),
                    NodeKind::Agent(a) => used.extend(a.tool_refs.iter().cloned()),
                    _ => {}
                }
            }
            for id in used {
                if let (false, Some(b)) = (wf.doc.tools.contains_key(&id), reg.bindings.get(&id)) {
                    wf.doc.tools.insert(id, b.clone());
                }
            }
        }
        save_workflow(&wf.doc, path).map_err(document_error)
    })
}

/// Canonical graph hash as lowercase hex.
///
/// # Safety
/// `wf` must be live. Returns NULL for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn df_workflow_hash(wf: *const DfWorkflow) -> *mut c_char {
    wf.as_ref().map_or(std::ptr::null_mut(), |w| c_string(w.doc.hash()))
}

/// The workflow document as JSON.
///
/// # Safety
/// `wf` must be live. Returns NULL for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn df_workflow_to_json(wf: *const DfWorkflow) -> *mut c_char {
    wf.as_ref().map_or(std::ptr::null_mut(), |w| c_string(w.doc.to_text()))
}

/// # Safety
/// `wf` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn df_workflow_free(wf: *mut DfWorkflow) {
    if !wf.is_null() {
        drop(Box::from_raw(wf));
    }
}

// ---- runs ----

/// Config keys: `workers`, `seed`, `watchdog_ms`, `checkpoint`,
/// `interrupt_after`, `provider` (as in workflow files).
fn run_config(src: Option<&str>) -> Res<(ExecutionConfig, Option<ProviderConfig>)> {
    let mut cfg = ExecutionConfig::default();
    let Some(src) = src else { return Ok((cfg, None)) };
    let J::Object(map) = json(src, "config_json")? else {
        return Err(Error::new(DfStatus::Parse, "config_json must be an object"));
    };
    let bad = |k: &str| Error::new(DfStatus::Parse, format!("config `{k}` has the wrong type"));
    let mut provider = None;
    for (k, v) in &map {
        match k.as_str() {
            "workers" => cfg.worker_limit = v.as_u64().ok_or_else(|| bad(k))? as usize,
            "seed" => cfg.seed = v.as_u64().ok_or_else(|| bad(k))?,
            "watchdog_ms" => cfg.watchdog_ms = v.as_u64().ok_or_else(|| bad(k))?,
            "checkpoint" => cfg.checkpoint_path = Some(PathBuf::from(v.as_str().ok_or_else(|| bad(k))?)),
            "interrupt_after" => cfg.interrupt_after_commits = Some(v.as_u64().ok_or_else(|| bad(k))?),
            "provider" => {
                provider = Some(
                    serde_json::from_value(v.clone()).map_err(|e| Error::new(DfStatus::Parse, format!("provider: {e}")))?,
                )
            }
            other => return Err(Error::new(DfStatus::Parse, format!("unknown config key `{other}`"))),
        }
    }
    Ok((cfg, provider))
}

unsafe fn runtime(wf: &DfWorkflow, reg: *const DfRegistry, cfg: &ExecutionConfig, p: Option<ProviderConfig>) -> Res<Runtime> {
    let tools = match reg.as_ref() {
        Some(r) => r.for_document(&wf.doc)?,
        None => wf.doc.registry().map_err(document_error)?,
    };
    let provider = match p {
        Some(p) => p.build(&wf.base_dir, cfg.seed),
        None => wf.doc.provider(&wf.base_dir, cfg.seed),
    }
    .map_err(document_error)?;
    Ok(Runtime::new(provider, tools))
}

/// Runs the workflow. `initial_state_json` (an object over the state schema)
/// and `config_json` may be NULL. A run that fails inside the workflow still
/// returns `Ok` with a result whose status says so.
///
/// # Safety
/// `wf` live; `reg` NULL or live; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn df_run(
    wf: *const DfWorkflow,
    reg: *const DfRegistry,
    initial_state_json: *const c_char,
    config_json: *const c_char,
    out: *mut *mut DfResult,
) -> DfStatus {
    guard(|| {
        let wf = wf.as_ref().ok_or_else(|| Error::new(DfStatus::NullArgument, "workflow is NULL"))?;
        let (cfg, provider) = run_config(opt_text(config_json, "config_json")?)?;
        let init = match opt_text(initial_state_json, "initial_state_json")? {
            None => BTreeMap::new(),
            Some(s) => match Value::from_json(&json(s, "initial_state_json")?, &FieldType::Record(wf.doc.graph.state_schema.clone())) {
                Ok(Value::Record(m)) => m,
                Ok(_) => unreachable!("record type decodes to a record"),
                Err(e) => return Err(Error::new(DfStatus::SchemaViolation, format!("invalid initial state: {e}"))),
            },
        };
        let rt = runtime(wf, reg, &cfg, provider)?;
        let res = execute(&wf.doc.graph, init, &cfg, &rt).map_err(engine_error)?;
        put(out, DfResult { res })
    })
}

/// Continues from a checkpoint written by an earlier run of the same workflow.
///
/// # Safety
/// As for `df_run`; `checkpoint_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn df_resume(
    wf: *const DfWorkflow,
    reg: *const DfRegistry,
    checkpoint_path: *const c_char,
    config_json: *const c_char,
    out: *mut *mut DfResult,
) -> DfStatus {
    guard(|| {
        let wf = wf.as_ref().ok_or_else(|| Error::new(DfStatus::NullArgument, "workflow is NULL"))?;
        let cp = PathBuf::from(text(checkpoint_path, "checkpoint_path")?);
        let (cfg, provider) = run_config(opt_text(config_json, "config_json")?)?;
        let rt = runtime(wf, reg, &cfg, provider)?;
        let res = resume(&wf.doc.graph, &cp, &cfg, &rt).map_err(engine_error)?;
        put(out, DfResult { res })
    })
}

/// # Safety
/// `r` must be a live result.
#[no_mangle]
pub unsafe extern "C" fn df_result_status(r: *const DfResult) -> DfRunStatus {
    match r.as_ref().map(|r| &r.res.outcome) {
        Some(RunOutcome::Completed) => DfRunStatus::Completed,
        Some(RunOutcome::Interrupted { .. }) => DfRunStatus::Interrupted,
        Some(RunOutcome::Stalled { .. }) => DfRunStatus::Stalled,
        Some(RunOutcome::Failed { .. }) | None => DfRunStatus::Failed,
    }
}

/// Final state as canonical JSON.
///
/// # Safety
/// `r` must be a live result.
#[no_mangle]
pub unsafe extern "C" fn df_result_final_state(r: *const DfResult) -> *mut c_char {
    r.as_ref().map_or(std::ptr::null_mut(), |r| c_string(Value::Record(r.res.final_state.clone()).canonical_string()))
}

/// # Safety
/// `r` must be a live result.
#[no_mangle]
pub unsafe extern "C" fn df_result_trace_digest(r: *const DfResult) -> *mut c_char {
    r.as_ref().map_or(std::ptr::null_mut(), |r| c_string(r.res.trace.digest()))
}

/// Trace as line-delimited JSON.
///
/// # Safety
/// `r` must be a live result.
#[no_mangle]
pub unsafe extern "C" fn df_result_trace(r: *const DfResult) -> *mut c_char {
    r.as_ref().map_or(std::ptr::null_mut(), |r| c_string(r.res.trace.to_jsonl()))
}

/// # Safety
/// `r` must be a live result.
#[no_mangle]
pub unsafe extern "C" fn df_result_metrics(r: *const DfResult) -> *mut c_char {
    r.as_ref().map_or(std::ptr::null_mut(), |r| {
        c_string(serde_json::to_string(&r.res.metrics).expect("metrics serialize"))
    })
}

/// Failure description, or NULL when the run did not fail.
///
/// # Safety
/// `r` must be a live result.
#[no_mangle]
pub unsafe extern "C" fn df_result_error(r: *const DfResult) -> *mut c_char {
    let Some(r) = r.as_ref() else { return std::ptr::null_mut() };
    match &r.res.outcome {
        RunOutcome::Failed { failure } => c_string(format!("{failure} [{:?}]", failure.class())),
        RunOutcome::Stalled { nodes, waited_ms } => c_string(format!("stalled after {waited_ms} ms waiting on {}", nodes.join(", "))),
        _ => std::ptr::null_mut(),
    }
}

/// # Safety
/// `r` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn df_result_free(r: *mut DfResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
