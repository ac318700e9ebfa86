//! Checks shared by the integration tests (at small sizes) and the acceptance
//! harness (at full size). Each returns a one-line summary or the reason it
//! failed.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;

use super::graphs::{self, mixed20, mixed20_state, mock_rt, random_graph, registry, x, x_state};
use super::oracle::{self, Ty};
use detflow::bench::{run_bench, BenchScenario, Scenario};
use detflow::builder::WorkflowBuilder;
use detflow::engine::{
    execute, resume, throughput_opm, EventKind, ExecutionConfig, FailureClass, NodeStatus, RecoveryPolicy, RunOutcome,
    Runtime,
};
use detflow::graph::{validate, AgentSpec, Finding, ToolSpec};
use detflow::nodes::{builtin, FuzzProvider, MockProvider, RegisteredTool, ToolContext, ToolRegistry};
use detflow::value::{FieldType, Schema, Value};

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn determinism(runs: usize, workers: &[usize]) -> Outcome {
    let g = mixed20();
    let rt = mock_rt();
    let mut digests = BTreeSet::new();
    for &w in workers {
        let cfg = ExecutionConfig::default().with_workers(w);
        for _ in 0..runs {
            let res = execute(&g, mixed20_state(), &cfg, &rt).map_err(|e| e.to_string())?;
            ensure!(res.is_completed(), "run failed: {:?}", res.outcome);
            digests.insert(res.trace.digest());
        }
    }
    ensure!(digests.len() == 1, "{} distinct digests", digests.len());
    Ok(format!("{} runs x workers {:?}: 1 digest", runs, workers))
}

/// Agent allowed only `lookup`; the registry also holds `shell`, which the
/// fuzzer names among its invented tools and which must never run.
pub fn hallucination(runs: u64) -> Outcome {
    let shell_runs = Arc::new(AtomicU32::new(0));
    let counter = shell_runs.clone();
    let mut reg = ToolRegistry::new();
    reg.register(builtin("lookup", "upper", &serde_json::Value::Null).unwrap()).unwrap();
    let text = Schema::of([("text", FieldType::String)]);
    reg.register(RegisteredTool::new("shell", text.clone(), text.clone(), move |a: &Value, _: &ToolContext| {
        counter.fetch_add(1, Ordering::SeqCst);
        Ok(a.clone())
    }))
    .unwrap();
    let out = Schema::of([("answer", FieldType::String), ("score", FieldType::Int)]);
    let g = WorkflowBuilder::new("fuzzed", "1")
        .state("text", FieldType::String)
        .agent("solver", AgentSpec::new("Solve.", text, out).with_tools(["lookup"]))
        .build()
        .unwrap();
    let reg = Arc::new(reg);
    let init = BTreeMap::from([("text".to_string(), Value::from("q"))]);
    let (mut model_errors, mut framework, mut lookups) = (0u64, 0u64, 0u64);
    for seed in 0..runs {
        let rt = Runtime { provider: Arc::new(FuzzProvider::new(seed)), tools: reg.clone(), ..mock_rt() };
        let res = execute(&g, init.clone(), &ExecutionConfig::default(), &rt).map_err(|e| e.to_string())?;
        model_errors += res.model_errors.len() as u64;
        if res.outcome.failure_class() == Some(FailureClass::Framework) {
            framework += 1;
        }
        for (node, tool) in &res.agent_tool_calls {
            ensure!(node == "solver" && tool == "lookup", "seed {seed}: executed {tool} for {node}");
            lookups += 1;
        }
        for e in res.trace.events() {
            ensure!(e.node == "solver" || e.node == "$init", "seed {seed}: event for unknown node {}", e.node);
        }
    }
    let shell = shell_runs.load(Ordering::SeqCst);
    ensure!(framework == 0, "{framework} framework routing errors");
    ensure!(shell == 0, "unregistered-for-agent tool ran {shell} times");
    ensure!(model_errors > 0, "fuzzer produced no model errors");
    Ok(format!("{runs} runs: 0 framework errors, 0 forbidden executions, {model_errors} model errors, {lookups} allowed calls"))
}

pub fn termination(graphs: u64) -> Outcome {
    let mut rng = super::rng(0x7e57);
    let reg = registry();
    let rt = mock_rt();
    let cfg = ExecutionConfig::default().with_watchdog_ms(10_000);
    let (mut cyclic, mut ran) = (0, 0);
    for i in 0..graphs {
        let rg = random_graph(&mut rng, 12, true);
        let report = validate(&rg.graph, &reg);
        if rg.cyclic {
            cyclic += 1;
            ensure!(!report.is_executable(), "graph {i}: cyclic graph accepted");
            ensure!(report.errors().any(|f| matches!(f, Finding::CycleDetected { .. })), "graph {i}: no CycleDetected");
            continue;
        }
        ensure!(report.is_executable(), "graph {i}: acyclic graph rejected: {report}");
        let res = execute(&rg.graph, x_state(rng.gen_range(-4..=4)), &cfg, &rt).map_err(|e| e.to_string())?;
        ensure!(!matches!(res.outcome, RunOutcome::Stalled { .. }), "graph {i}: stalled");
        ensure!(res.node_runs.len() == rg.graph.node_count(), "graph {i}: missing node statuses");
        ensure!(res.node_runs.values().all(|r| r.status.is_terminal()), "graph {i}: non-terminal status");
        ran += 1;
    }
    Ok(format!("{graphs} graphs: {cyclic} cyclic rejected, {ran} acyclic ran to terminal statuses"))
}

pub fn throughput() -> Outcome {
    let r = run_bench(&BenchScenario::new(Scenario::Chain, 20).with_repetitions(5), &ExecutionConfig::default())
        .map_err(|e| e.to_string())?;
    let exact = 60_000.0 / r.batch.mean_processing_ms;
    ensure!(r.batch.throughput_opm.to_bits() == exact.to_bits(), "{} != {}", r.batch.throughput_opm, exact);
    let six = format!("{:.0}", throughput_opm(6.0));
    ensure!(six == "10000", "6.0 ms gave {six}");
    let t = throughput_opm(16.9);
    ensure!((t.round() - 3550.0).abs() <= 1.0, "16.9 ms gave {t}");
    ensure!(throughput_opm(60_000.0) == 1.0, "60000 ms gave {}", throughput_opm(60_000.0));
    Ok(format!("report exact; 6.0 ms -> {six}, 16.9 ms -> {:.0}", t))
}

fn timed(workers: usize) -> Result<Duration, String> {
    let g = graphs::sleep_fanout(8);
    let rt = mock_rt();
    let t = Instant::now();
    let res = execute(&g, x_state(1), &ExecutionConfig::default().with_workers(workers), &rt).map_err(|e| e.to_string())?;
    let d = t.elapsed();
    ensure!(res.is_completed(), "{:?}", res.outcome);
    Ok(d)
}

pub fn parallel_dispatch() -> Outcome {
    let wide = timed(8)?;
    let narrow = timed(1)?;
    ensure!(wide < Duration::from_millis(250), "8 workers took {wide:?}");
    ensure!(narrow > Duration::from_millis(800), "1 worker took {narrow:?}");
    Ok(format!("8 workers {:.0} ms, 1 worker {:.0} ms", wide.as_secs_f64() * 1e3, narrow.as_secs_f64() * 1e3))
}

pub fn overhead(chain_len: usize) -> Outcome {
    let rt = mock_rt();
    let res = execute(&graphs::chain(chain_len, "noop"), x_state(0), &ExecutionConfig::default(), &rt)
        .map_err(|e| e.to_string())?;
    ensure!(res.is_completed(), "{:?}", res.outcome);
    let mean = res.metrics.mean_node_framework_ms();
    ensure!(mean <= 5.0, "mean framework {mean} ms per node");
    let res = execute(&graphs::chain(5, "nap"), x_state(0), &ExecutionConfig::default(), &rt).map_err(|e| e.to_string())?;
    ensure!(res.is_completed(), "{:?}", res.outcome);
    let worst = res.metrics.nodes.values().map(|n| n.framework_ms).fold(0.0, f64::max);
    let slept = res.metrics.nodes.values().map(|n| n.external_ms).fold(f64::INFINITY, f64::min);
    ensure!(worst < 10.0, "sleep node framework {worst} ms");
    ensure!(slept >= 99.0, "sleep time not attributed externally ({slept} ms)");
    Ok(format!("{chain_len}-node chain {mean:.4} ms/node; sleep nodes at most {worst:.3} ms framework"))
}

pub fn checkpoint_sweep() -> Outcome {
    let g = graphs::ten_node();
    let rt = mock_rt();
    let cfg = ExecutionConfig::default();
    let full = execute(&g, x_state(3), &cfg, &rt).map_err(|e| e.to_string())?;
    ensure!(full.is_completed(), "{:?}", full.outcome);
    let want = Value::Record(full.final_state.clone()).canonical_string();
    let commits = full.trace.of_kind(EventKind::Commit).count() as u64 - 1;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for k in 0..=commits {
        let path = dir.path().join(format!("cp{k}.json"));
        let cut = cfg.clone().with_checkpoint(&path).with_interrupt_after(k);
        let first = execute(&g, x_state(3), &cut, &rt).map_err(|e| e.to_string())?;
        let done = match first.outcome {
            RunOutcome::Interrupted { .. } => resume(&g, &path, &cfg, &rt).map_err(|e| format!("k={k}: {e}"))?,
            RunOutcome::Completed => first,
            other => return Err(format!("k={k}: {other:?}")),
        };
        ensure!(done.is_completed(), "k={k}: {:?}", done.outcome);
        let got = Value::Record(done.final_state.clone()).canonical_string();
        ensure!(got == want, "k={k}: final state differs");
        ensure!(done.trace.digest() == full.trace.digest(), "k={k}: trace differs");
    }
    Ok(format!("{} interrupt points on a 10-node workflow, all identical", commits + 1))
}

/// Failing tool that records when each attempt starts.
pub fn backoff() -> Outcome {
    let (base, factor, cap, fails) = (20, 2.0, 100, 5u32);
    let stamps = Arc::new(Mutex::new(Vec::<Instant>::new()));
    let seen = stamps.clone();
    let mut reg = ToolRegistry::new();
    reg.register(RegisteredTool::new("flaky", x(), x(), move |a: &Value, _: &ToolContext| {
        let mut s = seen.lock().unwrap();
        s.push(Instant::now());
        if s.len() as u32 <= fails {
            Err("not yet".into())
        } else {
            Ok(a.clone())
        }
    }))
    .unwrap();
    let policy = RecoveryPolicy::retry(fails + 1, base, factor, cap);
    let g = WorkflowBuilder::new("backoff", "1")
        .state("x", FieldType::Int)
        .tool("t", ToolSpec::new("flaky", x(), x()).with_retry(policy.clone()))
        .build()
        .unwrap();
    let rt = Runtime::new(Arc::new(MockProvider::auto()), reg);
    let res = execute(&g, x_state(1), &ExecutionConfig::default(), &rt).map_err(|e| e.to_string())?;
    ensure!(res.is_completed(), "{:?}", res.outcome);
    let s = stamps.lock().unwrap();
    ensure!(s.len() as u32 == fails + 1, "{} attempts", s.len());
    let retries: Vec<_> = res.trace.of_kind(EventKind::Retry).collect();
    ensure!(retries.len() as u32 == fails, "{} retry events", retries.len());
    let mut worst: f64 = 0.0;
    for i in 0..fails {
        let want = (base as f64 * factor.powi(i as i32)).min(cap as f64);
        let gap = (s[i as usize + 1] - s[i as usize]).as_secs_f64() * 1e3;
        worst = worst.max((gap - want).abs());
        ensure!((gap - want).abs() <= 20.0, "retry {i}: waited {gap:.1} ms, expected {want} ms");
        let nominal = retries[i as usize].payload.as_ref().and_then(|p| p["delay_us"].as_u64());
        ensure!(nominal == Some((want * 1000.0) as u64), "retry {i}: trace says {nominal:?}");
        ensure!(policy.delay_ms(i) == want, "policy delay {i}");
    }
    Ok(format!("{fails} delays within {worst:.2} ms of min(base*factor^i, cap)"))
}

pub fn predicate_oracle(exprs: usize, asts: usize) -> Outcome {
    let mut rng = super::rng(0x0dd);
    for _ in 0..exprs {
        let ty = [Ty::Bool, Ty::Int, Ty::Float, Ty::Str][rng.gen_range(0..4)];
        let e = oracle::gen(ty, 6, &mut rng);
        let snap = oracle::snapshot(&mut rng);
        if let Some(msg) = oracle::disagreement(&e, &snap) {
            return Err(msg);
        }
    }
    for _ in 0..asts {
        let e = oracle::random_ast(6, &mut rng);
        let text = e.to_string();
        match detflow::predicate::parse_str(&text) {
            Ok(back) if back == e => {}
            other => return Err(format!("`{text}` parsed as {other:?}")),
        }
    }
    Ok(format!("{exprs} expressions agree, {asts} ASTs round-trip"))
}

pub fn skipped_and_completed(res: &detflow::engine::ExecutionResult) -> (usize, usize) {
    (res.nodes_with(NodeStatus::Skipped).len(), res.nodes_with(NodeStatus::Completed).len())
}

pub fn memory_sentinels(width: usize, runs: usize) -> Outcome {
    use super::isolation::{connector_run, scratch_runs, SENTINEL};
    scratch_runs(width, runs)?;
    scope_reads(runs * 50)?;
    ensure!(!connector_run(false, &["note"])?.contains(SENTINEL), "unpiped connector payload reached the provider");
    ensure!(connector_run(true, &["note"])?.contains(SENTINEL), "piped connector payload missing from the request");
    let t = connector_run(false, &["note", "path"])?;
    ensure!(t.contains("hello") && !t.contains(SENTINEL), "undeclared state reached the provider");
    ensure!(connector_run(false, &["secret"])?.contains(SENTINEL), "declared state missing from the request");
    Ok(format!("{runs} runs of a {width}-wide fan-out leak no scratch; connector and state sentinels stay out unless declared"))
}

/// Random declared scopes over an eight-key state; every read outside the
/// scope must be a ScopeViolation naming the key.
fn scope_reads(trials: usize) -> Result<(), String> {
    use detflow::memory::{Scope, StateReadError, StateStore};
    let mut rng = super::rng(0x5c0e);
    let keys: Vec<String> = ('a'..='h').map(|c| c.to_string()).collect();
    let schema = Schema::from_fields(keys.iter().map(|k| (k.clone(), FieldType::Int))).map_err(|e| e.to_string())?;
    let store = StateStore::new(schema, Schema::empty());
    store.commit(keys.iter().map(|k| (k.clone(), Value::Int(1))).collect(), "$init").map_err(|e| e.to_string())?;
    for _ in 0..trials {
        let declared: BTreeSet<String> = keys.iter().filter(|_| rng.gen_bool(0.4)).cloned().collect();
        let snap = store.snapshot(Scope::keys(declared.iter().cloned()));
        for k in &keys {
            match snap.read(k) {
                Ok(_) => ensure!(declared.contains(k), "undeclared read of {k} succeeded"),
                Err(StateReadError::ScopeViolation(v)) => ensure!(!declared.contains(k) && &v == k, "bad violation for {k}"),
                Err(e) => return Err(e.to_string()),
            }
        }
    }
    Ok(())
}
