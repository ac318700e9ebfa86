use std::ffi::{c_char, c_void, CStr, CString};
use std::ptr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use detflow::builder::WorkflowBuilder;
use detflow::document::{save_workflow, ToolBinding, WorkflowDocument};
use detflow::engine::{execute, ExecutionConfig, Runtime};
use detflow::graph::ToolSpec;
use detflow::nodes::{MockProvider, RegisteredTool, ToolContext, ToolRegistry};
use detflow::value::{FieldType, Schema, Value};
use detflow_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    df_string_free(p);
    s
}

fn last_error() -> String {
    let p = df_last_error();
    if p.is_null() {
        String::new()
    } else {
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }
}

fn ab() -> String {
    json!({"a": "int", "b": "int"}).to_string()
}

fn sum() -> String {
    json!({"sum": "int"}).to_string()
}

unsafe extern "C" fn add(_: *mut c_void, args: *const c_char, reply: *mut DfReply) -> i32 {
    let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(args).to_str().unwrap()).unwrap();
    let out = json!({"sum": v["a"].as_i64().unwrap() + v["b"].as_i64().unwrap()}).to_string();
    df_reply_ok(reply, c(&out).as_ptr());
    0
}

unsafe extern "C" fn boom(_: *mut c_void, _: *const c_char, reply: *mut DfReply) -> i32 {
    df_reply_error(reply, c("boom").as_ptr());
    1
}

/// Registry holding the host `add` tool.
unsafe fn add_registry() -> *mut DfRegistry {
    let reg = df_registry_new();
    let st = df_registry_register_tool(reg, c("add").as_ptr(), c(&ab()).as_ptr(), c(&sum()).as_ptr(), Some(add), ptr::null_mut(), None, false);
    assert_eq!(st, DfStatus::Ok, "{}", last_error());
    reg
}

unsafe fn single_tool_workflow(reg: *const DfRegistry, tool: &str) -> *mut DfWorkflow {
    let b = df_builder_new(c("one").as_ptr(), c("1").as_ptr());
    assert_eq!(df_builder_state(b, c("a").as_ptr(), c("\"int\"").as_ptr()), DfStatus::Ok);
    assert_eq!(df_builder_state(b, c("b").as_ptr(), c("\"int\"").as_ptr()), DfStatus::Ok);
    let kind = json!({"type": "tool", "fn_ref": tool, "input_schema": {"a": "int", "b": "int"}, "output_schema": {"sum": "int"}});
    assert_eq!(df_builder_node(b, c("t").as_ptr(), c(&kind.to_string()).as_ptr()), DfStatus::Ok, "{}", last_error());
    let mut wf = ptr::null_mut();
    assert_eq!(df_builder_build(b, reg, &mut wf), DfStatus::Ok, "{}", last_error());
    df_builder_free(b);
    wf
}

#[test]
fn host_tool_result_flows_through_a_run() {
    unsafe {
        let reg = add_registry();
        let wf = single_tool_workflow(reg, "add");
        let mut r = ptr::null_mut();
        let st = df_run(wf, reg, c(r#"{"a": 2, "b": 3}"#).as_ptr(), ptr::null(), &mut r);
        assert_eq!(st, DfStatus::Ok, "{}", last_error());
        assert_eq!(df_result_status(r), DfRunStatus::Completed);
        let state: serde_json::Value = serde_json::from_str(&take(df_result_final_state(r))).unwrap();
        assert_eq!(state["t"]["sum"], 5);
        assert!(df_result_error(r).is_null());
        assert_eq!(take(df_result_trace_digest(r)).len(), 64);
        assert!(take(df_result_metrics(r)).starts_with('{'));
        df_result_free(r);
        df_workflow_free(wf);
        df_registry_free(reg);
    }
}

#[test]
fn duplicate_names_are_rejected() {
    unsafe {
        let reg = add_registry();
        let st = df_registry_register_tool(reg, c("add").as_ptr(), c(&ab()).as_ptr(), c(&sum()).as_ptr(), Some(add), ptr::null_mut(), None, false);
        assert_eq!(st, DfStatus::DuplicateTool);
        assert!(last_error().contains("add"));
        assert_eq!(df_registry_add_builtin(reg, c("add").as_ptr(), c("upper").as_ptr(), ptr::null()), DfStatus::DuplicateTool);
        assert_eq!(df_registry_add_builtin(reg, c("x").as_ptr(), c("no_such").as_ptr(), ptr::null()), DfStatus::UnknownBuiltin);
        let st = df_registry_register_tool(reg, c("y").as_ptr(), c("{\"a\": \"nope\"}").as_ptr(), c(&sum()).as_ptr(), Some(add), ptr::null_mut(), None, false);
        assert_eq!(st, DfStatus::Schema);
        df_registry_free(reg);
    }
}

fn random_type(rng: &mut ChaCha8Rng, depth: u32) -> FieldType {
    match rng.gen_range(0..if depth == 0 { 4 } else { 7 }) {
        0 => FieldType::Int,
        1 => FieldType::Float,
        2 => FieldType::String,
        3 => FieldType::Bool,
        4 => FieldType::list(random_type(rng, depth - 1)),
        5 => FieldType::Bytes,
        _ => FieldType::Record(
            Schema::from_fields((0..rng.gen_range(0..4)).map(|i| (format!("f{i}"), random_type(rng, depth - 1)))).unwrap(),
        ),
    }
}

fn random_value(rng: &mut ChaCha8Rng, ty: &FieldType) -> serde_json::Value {
    match ty {
        FieldType::Int => json!(rng.gen::<i64>()),
        FieldType::Float => json!(rng.gen_range(-1e12..1e12) * if rng.gen_bool(0.5) { 1e-9 } else { 1.0 }),
        FieldType::String => {
            let n = rng.gen_range(0..12);
            json!((0..n).map(|_| ['a', 'é', '"', '\\', '\n', '字', '🙂', ' '][rng.gen_range(0..8)]).collect::<String>())
        }
        FieldType::Bool => json!(rng.gen_bool(0.5)),
        FieldType::List(t) => serde_json::Value::Array((0..rng.gen_range(0..4)).map(|_| random_value(rng, t)).collect()),
        FieldType::Bytes => Value::Bytes((0..rng.gen_range(0..9)).map(|_| rng.gen()).collect()).to_json(),
        FieldType::Record(s) => serde_json::Value::Object(s.iter().map(|(k, t)| (k.clone(), random_value(rng, t))).collect()),
    }
}

#[test]
fn values_cross_the_boundary_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let ty = random_type(&mut rng, 3);
        let v = random_value(&mut rng, &ty);
        let mut out = ptr::null_mut();
        let st = unsafe { df_value_roundtrip(c(&ty.to_json().to_string()).as_ptr(), c(&v.to_string()).as_ptr(), &mut out) };
        assert_eq!(st, DfStatus::Ok, "{}", last_error());
        let back: serde_json::Value = serde_json::from_str(&unsafe { take(out) }).unwrap();
        assert_eq!(back, v);
        // and the engine's own decoding agrees
        let native = Value::from_json(&v, &ty).unwrap();
        assert_eq!(Value::from_json(&back, &ty).unwrap(), native);
    }
    let mut out = ptr::null_mut();
    let st = unsafe { df_value_roundtrip(c("\"int\"").as_ptr(), c("\"seven\"").as_ptr(), &mut out) };
    assert_eq!(st, DfStatus::SchemaViolation);
}

fn native_chain() -> WorkflowDocument {
    let text = Schema::of([("text", FieldType::String)]);
    let g = WorkflowBuilder::new("chain", "1")
        .state("text", FieldType::String)
        .tool("s1", ToolSpec::new("up", text.clone(), text.clone()))
        .tool("s2", ToolSpec::new("up", text.clone(), text.clone()))
        .tool("s3", ToolSpec::new("up", text.clone(), text))
        .pass("s1", "s2", ["text"])
        .pass("s2", "s3", ["text"])
        .build()
        .unwrap();
    WorkflowDocument::new(g).bind("up", ToolBinding::builtin("upper", serde_json::Value::Null))
}

unsafe fn ffi_chain(reg: *const DfRegistry) -> *mut DfWorkflow {
    let b = df_builder_new(c("chain").as_ptr(), c("1").as_ptr());
    df_builder_state(b, c("text").as_ptr(), c("\"string\"").as_ptr());
    let kind = json!({"type": "tool", "fn_ref": "up", "input_schema": {"text": "string"}, "output_schema": {"text": "string"}}).to_string();
    for id in ["s1", "s2", "s3"] {
        assert_eq!(df_builder_node(b, c(id).as_ptr(), c(&kind).as_ptr()), DfStatus::Ok, "{}", last_error());
    }
    let map = c(r#"{"text": "text"}"#);
    df_builder_connect(b, c("s1").as_ptr(), c("s2").as_ptr(), map.as_ptr(), ptr::null());
    df_builder_connect(b, c("s2").as_ptr(), c("s3").as_ptr(), map.as_ptr(), ptr::null());
    let mut wf = ptr::null_mut();
    assert_eq!(df_builder_build(b, reg, &mut wf), DfStatus::Ok, "{}", last_error());
    df_builder_free(b);
    wf
}

#[test]
fn builder_and_file_agree_on_hash_and_digest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.json");
    let doc = native_chain();
    save_workflow(&doc, &path).unwrap();
    unsafe {
        let reg = df_registry_new();
        assert_eq!(df_registry_add_builtin(reg, c("up").as_ptr(), c("upper").as_ptr(), ptr::null()), DfStatus::Ok);
        let built = ffi_chain(reg);
        let mut loaded = ptr::null_mut();
        assert_eq!(df_workflow_load(c(path.to_str().unwrap()).as_ptr(), ptr::null(), &mut loaded), DfStatus::Ok, "{}", last_error());
        let h = take(df_workflow_hash(built));
        assert_eq!(h, take(df_workflow_hash(loaded)));
        assert_eq!(h, doc.hash());

        // Saving the built workflow fills in the binding, so the file loads without the registry.
        let saved = dir.path().join("saved.json");
        assert_eq!(df_workflow_save(built, reg, c(saved.to_str().unwrap()).as_ptr()), DfStatus::Ok, "{}", last_error());
        assert_eq!(std::fs::read(&saved).unwrap(), std::fs::read(&path).unwrap());

        // Same digest as running the file directly on the engine.
        let (state, cfg) = (c(r#"{"text": "go"}"#), c(r#"{"workers": 2}"#));
        let mut digests = Vec::new();
        for (wf, r) in [(built, reg as *const DfRegistry), (loaded, ptr::null())] {
            let mut res = ptr::null_mut();
            assert_eq!(df_run(wf, r, state.as_ptr(), cfg.as_ptr(), &mut res), DfStatus::Ok, "{}", last_error());
            digests.push(take(df_result_trace_digest(res)));
            df_result_free(res);
        }
        let (doc, tools) = detflow::document::load_workflow(&path).unwrap();
        let rt = Runtime::new(doc.provider(dir.path(), 0).unwrap(), tools);
        let init = [("text".to_string(), Value::from("go"))].into();
        let direct = execute(&doc.graph, init, &ExecutionConfig::default(), &rt).unwrap();
        assert_eq!(digests[0], digests[1]);
        assert_eq!(digests[0], direct.trace.digest());

        df_workflow_free(built);
        df_workflow_free(loaded);
        df_registry_free(reg);
    }
}

#[test]
fn build_errors_carry_findings() {
    unsafe {
        let reg = df_registry_new();
        df_registry_add_builtin(reg, c("up").as_ptr(), c("upper").as_ptr(), ptr::null());
        let b = df_builder_new(c("loop").as_ptr(), c("1").as_ptr());
        let kind = json!({"type": "tool", "fn_ref": "up", "input_schema": {"text": "string"}, "output_schema": {"text": "string"}}).to_string();
        for id in ["p", "q"] {
            df_builder_node(b, c(id).as_ptr(), c(&kind).as_ptr());
        }
        let map = c(r#"{"text": "text"}"#);
        df_builder_connect(b, c("p").as_ptr(), c("q").as_ptr(), map.as_ptr(), ptr::null());
        df_builder_connect(b, c("q").as_ptr(), c("p").as_ptr(), map.as_ptr(), ptr::null());
        let mut wf = ptr::null_mut();
        assert_eq!(df_builder_build(b, reg, &mut wf), DfStatus::ValidationFailed);
        let msg = last_error();
        assert!(msg.contains("cycle") && msg.contains('p') && msg.contains('q'), "{msg}");
        assert!(wf.is_null());
        // spent builder
        assert_eq!(df_builder_build(b, reg, &mut wf), DfStatus::Build);
        df_builder_free(b);

        let empty = df_builder_new(c("e").as_ptr(), c("1").as_ptr());
        assert_eq!(df_builder_build(empty, reg, &mut wf), DfStatus::Build);
        assert!(last_error().contains("no nodes"));
        df_builder_free(empty);

        let b = df_builder_new(c("x").as_ptr(), c("1").as_ptr());
        assert_eq!(df_builder_node(b, c("n").as_ptr(), c(r#"{"type": "teleport"}"#).as_ptr()), DfStatus::Parse);
        df_builder_free(b);
        df_registry_free(reg);
    }
}

#[test]
fn bad_initial_state_is_a_schema_violation() {
    unsafe {
        let reg = add_registry();
        let wf = single_tool_workflow(reg, "add");
        let mut r = ptr::null_mut();
        assert_eq!(df_run(wf, reg, c(r#"{"a": "two", "b": 3}"#).as_ptr(), ptr::null(), &mut r), DfStatus::SchemaViolation);
        assert!(r.is_null());
        assert_eq!(df_run(wf, reg, ptr::null(), c(r#"{"wrokers": 2}"#).as_ptr(), &mut r), DfStatus::Parse);
        assert_eq!(df_run(ptr::null(), reg, ptr::null(), ptr::null(), &mut r), DfStatus::NullArgument);
        df_workflow_free(wf);
        df_registry_free(reg);
    }
}

#[test]
fn failing_host_tool_looks_like_a_failing_native_tool() {
    let host_digest = unsafe {
        let reg = df_registry_new();
        let st = df_registry_register_tool(reg, c("add").as_ptr(), c(&ab()).as_ptr(), c(&sum()).as_ptr(), Some(boom), ptr::null_mut(), None, false);
        assert_eq!(st, DfStatus::Ok);
        let wf = single_tool_workflow(reg, "add");
        let mut r = ptr::null_mut();
        assert_eq!(df_run(wf, reg, c(r#"{"a": 1, "b": 1}"#).as_ptr(), ptr::null(), &mut r), DfStatus::Ok);
        assert_eq!(df_result_status(r), DfRunStatus::Failed);
        assert!(take(df_result_error(r)).contains("boom"));
        let d = take(df_result_trace_digest(r));
        df_result_free(r);
        df_workflow_free(wf);
        df_registry_free(reg);
        d
    };
    let ab = Schema::of([("a", FieldType::Int), ("b", FieldType::Int)]);
    let out = Schema::of([("sum", FieldType::Int)]);
    let mut tools = ToolRegistry::new();
    tools.register(RegisteredTool::new("add", ab.clone(), out.clone(), |_: &Value, _: &ToolContext| Err("boom".into()))).unwrap();
    let g = WorkflowBuilder::new("one", "1")
        .state("a", FieldType::Int)
        .state("b", FieldType::Int)
        .tool("t", ToolSpec::new("add", ab, out))
        .build()
        .unwrap();
    let rt = Runtime::new(Arc::new(MockProvider::auto()), tools);
    let init = [("a".to_string(), Value::Int(1)), ("b".to_string(), Value::Int(1))].into();
    let native = execute(&g, init, &ExecutionConfig::default(), &rt).unwrap();
    assert_eq!(host_digest, native.trace.digest());
}

struct Gauge {
    now: AtomicUsize,
    peak: AtomicUsize,
    freed: AtomicUsize,
}

unsafe extern "C" fn slow_echo(data: *mut c_void, args: *const c_char, reply: *mut DfReply) -> i32 {
    let g = &*(data as *const Gauge);
    let n = g.now.fetch_add(1, Ordering::SeqCst) + 1;
    g.peak.fetch_max(n, Ordering::SeqCst);
    std::thread::sleep(Duration::from_millis(30));
    g.now.fetch_sub(1, Ordering::SeqCst);
    df_reply_ok(reply, args);
    0
}

/// The registry owns one reference to the gauge through `user_data`.
unsafe extern "C" fn count_free(data: *mut c_void) {
    let g = Arc::from_raw(data as *const Gauge);
    g.freed.fetch_add(1, Ordering::SeqCst);
}

/// Peak concurrency of a host tool called from a six-wide fan-out.
fn peak_calls(reentrant: bool) -> (usize, usize) {
    let gauge = Arc::new(Gauge { now: AtomicUsize::new(0), peak: AtomicUsize::new(0), freed: AtomicUsize::new(0) });
    unsafe {
        let reg = df_registry_new();
        let x = json!({"x": "int"}).to_string();
        let data = Arc::into_raw(gauge.clone()) as *mut c_void;
        let st = df_registry_register_tool(reg, c("echo").as_ptr(), c(&x).as_ptr(), c(&x).as_ptr(), Some(slow_echo), data, Some(count_free), reentrant);
        assert_eq!(st, DfStatus::Ok);
        let b = df_builder_new(c("wide").as_ptr(), c("1").as_ptr());
        df_builder_state(b, c("x").as_ptr(), c("\"int\"").as_ptr());
        df_builder_node(b, c("split").as_ptr(), c(&json!({"type": "fan_out", "schema": {"x": "int"}}).to_string()).as_ptr());
        let tool = json!({"type": "tool", "fn_ref": "echo", "input_schema": {"x": "int"}, "output_schema": {"x": "int"}}).to_string();
        let map = c(r#"{"x": "x"}"#);
        for i in 0..6 {
            let id = format!("e{i}");
            df_builder_node(b, c(&id).as_ptr(), c(&tool).as_ptr());
            df_builder_connect(b, c("split").as_ptr(), c(&id).as_ptr(), map.as_ptr(), ptr::null());
        }
        let mut wf = ptr::null_mut();
        assert_eq!(df_builder_build(b, reg, &mut wf), DfStatus::Ok, "{}", last_error());
        df_builder_free(b);
        let mut r = ptr::null_mut();
        assert_eq!(df_run(wf, reg, c(r#"{"x": 4}"#).as_ptr(), c(r#"{"workers": 6}"#).as_ptr(), &mut r), DfStatus::Ok);
        assert_eq!(df_result_status(r), DfRunStatus::Completed);
        df_result_free(r);
        df_workflow_free(wf);
        df_registry_free(reg);
    }
    // A worker thread may still hold the last copy for a moment after the run.
    for _ in 0..100 {
        if gauge.freed.load(Ordering::SeqCst) > 0 {
            break;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    (gauge.peak.load(Ordering::SeqCst), gauge.freed.load(Ordering::SeqCst))
}

#[test]
fn host_tools_are_serialized_unless_reentrant() {
    assert_eq!(peak_calls(false), (1, 1));
    let (peak, freed) = peak_calls(true);
    assert!(peak > 1, "reentrant tool never overlapped");
    assert_eq!(freed, 1);
}

#[test]
fn interrupted_run_resumes_through_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let cp = dir.path().join("cp.json");
    unsafe {
        let reg = df_registry_new();
        df_registry_add_builtin(reg, c("up").as_ptr(), c("upper").as_ptr(), ptr::null());
        let wf = ffi_chain(reg);
        let state = c(r#"{"text": "go"}"#);
        let mut full = ptr::null_mut();
        assert_eq!(df_run(wf, reg, state.as_ptr(), ptr::null(), &mut full), DfStatus::Ok);
        let cfg = c(&json!({"checkpoint": cp.to_str().unwrap(), "interrupt_after": 2}).to_string());
        let mut cut = ptr::null_mut();
        assert_eq!(df_run(wf, reg, state.as_ptr(), cfg.as_ptr(), &mut cut), DfStatus::Ok);
        assert_eq!(df_result_status(cut), DfRunStatus::Interrupted);
        let mut done = ptr::null_mut();
        assert_eq!(df_resume(wf, reg, c(cp.to_str().unwrap()).as_ptr(), ptr::null(), &mut done), DfStatus::Ok, "{}", last_error());
        assert_eq!(df_result_status(done), DfRunStatus::Completed);
        assert_eq!(take(df_result_final_state(done)), take(df_result_final_state(full)));
        assert_eq!(take(df_result_trace_digest(done)), take(df_result_trace_digest(full)));
        assert_eq!(df_resume(wf, reg, c("/nonexistent/cp.json").as_ptr(), ptr::null(), &mut done), DfStatus::Checkpoint);
        for r in [full, cut, done] {
            df_result_free(r);
        }
        df_workflow_free(wf);
        df_registry_free(reg);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/detflow.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap()
        + &std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/error.rs")).unwrap();
    let mut n = 0;
    for line in src.lines().filter(|l| l.contains("extern \"C\" fn df_")) {
        let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
        n += 1;
    }
    assert!(n >= 25, "only {n} exports");
    assert!(unsafe { CStr::from_ptr(df_version()) }.to_str().unwrap().starts_with("0."));
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"detflow.h\"\nint main(void) { DfRegistry *r = df_registry_new(); df_registry_free(r); return DF_STATUS_OK; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    match std::process::Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include]).arg(&src).output() {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(_) => eprintln!("no C compiler; skipping"),
    }
}
