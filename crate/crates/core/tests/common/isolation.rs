//! Sentinel workflows for scratch and connector isolation.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use super::graphs::{x, x_state};
use detflow::builder::WorkflowBuilder;
use detflow::engine::{execute, ExecutionConfig, RecoveryPolicy, Runtime};
use detflow::graph::{AgentSpec, AggregatePolicy, ToolSpec};
use detflow::nodes::{builtin, MockProvider, Recorder, RegisteredTool, ToolContext, ToolRegistry};
use detflow::value::{FieldType, Schema, Value};

pub const SENTINEL: &str = "SENTINEL-7f3a9c";

/// Returns `x = -1` if anything is already in its scratch, otherwise stashes
/// the sentinel and echoes its input.
pub fn stash(id: &str) -> RegisteredTool {
    RegisteredTool::new(id, x(), x(), |args: &Value, ctx: &ToolContext| {
        if !ctx.scratch.is_empty().map_err(|e| e.to_string())? {
            return Ok(Value::record([("x", Value::Int(-1))]));
        }
        ctx.scratch.put("tmp", Value::from(SENTINEL)).map_err(|e| e.to_string())?;
        Ok(args.clone())
    })
}

/// Like `stash`, but its first call fails after writing scratch.
pub fn stash_then_fail(id: &str) -> RegisteredTool {
    let calls = AtomicU32::new(0);
    RegisteredTool::new(id, x(), x(), move |args: &Value, ctx: &ToolContext| {
        if !ctx.scratch.is_empty().map_err(|e| e.to_string())? {
            return Ok(Value::record([("x", Value::Int(-1))]));
        }
        ctx.scratch.put("tmp", Value::from(SENTINEL)).map_err(|e| e.to_string())?;
        if calls.fetch_add(1, Ordering::SeqCst) == 0 {
            return Err("first attempt fails".into());
        }
        Ok(args.clone())
    })
}

/// A `width`-wide fan-out of two-step stash chains plus one retried stash.
/// Every stash must see an empty scratch, so every output keeps `x = 5`.
pub fn scratch_runs(width: usize, runs: usize) -> Result<(), String> {
    let retry = ToolSpec::new("stash_retry", x(), x()).with_retry(RecoveryPolicy::retry(3, 1, 2.0, 5));
    let mut b = WorkflowBuilder::new("scratch", "1")
        .state("x", FieldType::Int)
        .fan_out("split", x())
        .aggregate("join", AggregatePolicy::RequireAll)
        .tool("again", retry)
        .pass("split", "again", ["x"]);
    for i in 0..width {
        let id = format!("s{i:02}");
        let next = format!("t{i:02}");
        b = b
            .tool(&id, ToolSpec::new("stash", x(), x()))
            .tool(&next, ToolSpec::new("stash", x(), x()))
            .pass("split", &id, ["x"])
            .pass(&id, &next, ["x"])
            .pass(&next, "join", ["x"]);
    }
    let g = b.build().map_err(|e| e.to_string())?;
    for run in 0..runs {
        let mut reg = ToolRegistry::new();
        reg.register(stash("stash")).unwrap();
        reg.register(stash_then_fail("stash_retry")).unwrap();
        let rt = Runtime::new(Arc::new(MockProvider::auto()), reg);
        let res = execute(&g, x_state(5), &ExecutionConfig::default().with_workers(8), &rt).map_err(|e| e.to_string())?;
        if !res.is_completed() {
            return Err(format!("run {run}: {:?}", res.outcome));
        }
        for (k, v) in &res.final_state {
            if (k.starts_with('s') || k.starts_with('t') || k == "again") && v.get("x") != Some(&Value::Int(5)) {
                return Err(format!("run {run}: {k} saw another attempt's scratch"));
            }
        }
        if res.node_runs["again"].attempts != 2 {
            return Err(format!("run {run}: retried node made {} attempts", res.node_runs["again"].attempts));
        }
    }
    Ok(())
}

/// `fetch` reads a file holding the sentinel; `think` is an agent that
/// declares `declared` as its state reads and gets `content` piped in when
/// `piped` is set. Returns every provider request joined by newlines.
pub fn connector_run(piped: bool, declared: &[&str]) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let file = dir.path().join("payload.txt");
    std::fs::write(&file, format!("external {SENTINEL} payload")).map_err(|e| e.to_string())?;

    let mut reg = ToolRegistry::new();
    reg.register(builtin("file_read", "file_read", &serde_json::Value::Null).unwrap()).unwrap();
    let content = Schema::of([("content", FieldType::String)]);
    let note = Schema::of([("note", FieldType::String)]);
    let think_in = if piped { content.clone() } else { note.clone() };
    let mut b = WorkflowBuilder::new("conn", "1")
        .state("path", FieldType::String)
        .state("note", FieldType::String)
        .state("secret", FieldType::String)
        .tool("fetch", ToolSpec::new("file_read", Schema::of([("path", FieldType::String)]), content))
        .agent("think", AgentSpec::new("Think.", think_in, note).with_state_reads(declared.iter().copied()));
    b = if piped { b.pass("fetch", "think", ["content"]) } else { b.edge("fetch", "think") };
    let g = b.build().map_err(|e| e.to_string())?;

    let rec = Arc::new(Recorder::new(MockProvider::auto()));
    let rt = Runtime::new(rec.clone(), reg);
    let init = BTreeMap::from([
        ("path".to_string(), Value::from(file.to_str().unwrap())),
        ("note".to_string(), Value::from("hello")),
        ("secret".to_string(), Value::from(SENTINEL)),
    ]);
    let res = execute(&g, init, &ExecutionConfig::default(), &rt).map_err(|e| e.to_string())?;
    if !res.is_completed() {
        return Err(format!("{:?}", res.outcome));
    }
    if !res.final_state["fetch"].canonical_string().contains(SENTINEL) {
        return Err("connector payload never reached workflow state".into());
    }
    Ok(rec.transcript().into_iter().map(|e| e.request).collect::<Vec<_>>().join("\n"))
}
