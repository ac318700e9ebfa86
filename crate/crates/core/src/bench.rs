//! Benchmark scenarios and the batch report.
//!
//! Scenarios use no-op tools and instant mock agents so that what is measured
//! is the engine itself: dispatch, validation, routing, commits and tracing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use crate::builder::WorkflowBuilder;
use crate::document::{ProviderConfig, ToolBinding, WorkflowDocument};
use crate::engine::{execute, BatchMetrics, EngineError, ExecutionConfig, Runtime};
use crate::graph::{AgentSpec, AggregatePolicy, ToolSpec};
use crate::nodes::{FuzzProvider, HttpProvider, MockProvider, Provider};
use crate::value::{FieldType, Schema, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// N sequential no-op tools.
    Chain,
    /// Planner agent, N parallel worker agents, join, synthesis agent.
    Fanout,
    /// N parallel agents that each call a tool before answering.
    Agentic,
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "chain" => Ok(Scenario::Chain),
            "fanout" => Ok(Scenario::Fanout),
            "agentic" => Ok(Scenario::Agentic),
            _ => Err(format!("unknown scenario `{s}` (chain, fanout, agentic)")),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Chain => "chain",
            Scenario::Fanout => "fanout",
            Scenario::Agentic => "agentic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderChoice {
    Mock,
    Fuzz { seed: u64 },
    Http { base_url: String, model: String },
}

impl ProviderChoice {
    pub fn build(&self) -> Arc<dyn Provider> {
        match self {
            ProviderChoice::Mock => Arc::new(MockProvider::auto().with_auto_tool_calls(true)),
            ProviderChoice::Fuzz { seed } => Arc::new(FuzzProvider::new(*seed)),
            ProviderChoice::Http { base_url, model } => Arc::new(HttpProvider::new(base_url.clone(), model.clone())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProviderChoice::Mock => "mock",
            ProviderChoice::Fuzz { .. } => "fuzz",
            ProviderChoice::Http { .. } => "http",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BenchScenario {
    pub name: Scenario,
    pub size: usize,
    pub provider: ProviderChoice,
    pub repetitions: u32,
}

impl BenchScenario {
    pub fn new(name: Scenario, size: usize) -> Self {
        BenchScenario { name, size, provider: ProviderChoice::Mock, repetitions: 10 }
    }

    pub fn with_provider(mut self, p: ProviderChoice) -> Self {
        self.provider = p;
        self
    }

    pub fn with_repetitions(mut self, n: u32) -> Self {
        self.repetitions = n;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.repetitions == 0 {
            return Err("repetitions must be at least 1".into());
        }
        if self.size == 0 {
            return Err("size must be at least 1".into());
        }
        Ok(())
    }
}

/// A scenario graph with its tool bindings and the state it starts from.
#[derive(Debug, Clone)]
pub struct Workload {
    pub document: WorkflowDocument,
    pub initial_state: BTreeMap<String, Value>,
}

fn text() -> Schema {
    Schema::of([("text", FieldType::String)])
}

fn chain(n: usize) -> Workload {
    let x = Schema::of([("x", FieldType::Int)]);
    let mut b = WorkflowBuilder::new("bench-chain", "1").state("x", FieldType::Int);
    for i in 0..n {
        b = b.tool(format!("t{i:04}"), ToolSpec::new("noop", x.clone(), x.clone()));
        if i > 0 {
            b = b.pass(&format!("t{:04}", i - 1), &format!("t{i:04}"), ["x"]);
        }
    }
    let g = b.build().expect("chain builds");
    Workload {
        document: WorkflowDocument::new(g).bind("noop", ToolBinding::builtin("noop", json!({ "schema": x.to_json() }))),
        initial_state: BTreeMap::from([("x".into(), Value::Int(0))]),
    }
}

fn fanout(n: usize) -> Workload {
    let task = Schema::of([("task", FieldType::String)]);
    let plan = Schema::of([("plan", FieldType::String)]);
    let result = Schema::of([("result", FieldType::String)]);
    let mut synth_in = Schema::empty();
    let mut b = WorkflowBuilder::new("bench-fanout", "1")
        .state("task", FieldType::String)
        .agent("planner", AgentSpec::new("Decompose the task into subtasks.", task, plan.clone()))
        .fan_out("split", plan.clone())
        .pass("planner", "split", ["plan"])
        .aggregate("join", AggregatePolicy::RequireAll);
    let mut pairs = Vec::new();
    for i in 0..n {
        let id = format!("w{i:03}");
        let edge = format!("{id}->join");
        synth_in.insert(id.clone(), FieldType::Record(result.clone())).expect("unique ids");
        pairs.push((edge, id.clone()));
        b = b
            .agent(&id, AgentSpec::new("Solve one subtask.", plan.clone(), result.clone()))
            .pass("split", &id, ["plan"])
            .pass(&id, "join", ["result"]);
    }
    let g = b
        .agent("synthesis", AgentSpec::new("Combine the subtask results.", synth_in, Schema::of([("answer", FieldType::String)])))
        .map("join", "synthesis", pairs)
        .build()
        .expect("fanout builds");
    Workload {
        document: WorkflowDocument::new(g).with_provider(ProviderConfig::Mock { script: None }),
        initial_state: BTreeMap::from([("task".into(), Value::from("summarise the quarter"))]),
    }
}

fn agentic(n: usize) -> Workload {
    let mut b = WorkflowBuilder::new("bench-agentic", "1")
        .state("text", FieldType::String)
        .fan_out("split", text())
        .aggregate("join", AggregatePolicy::RequireAll);
    for i in 0..n {
        let id = format!("a{i:03}");
        let spec = AgentSpec::new("Use the lookup tool, then answer.", text(), text())
            .with_tools(["lookup"])
            .with_max_iterations(3);
        b = b.agent(&id, spec).pass("split", &id, ["text"]).pass(&id, "join", ["text"]);
    }
    let g = b.build().expect("agentic builds");
    Workload {
        document: WorkflowDocument::new(g).bind("lookup", ToolBinding::builtin("upper", serde_json::Value::Null)),
        initial_state: BTreeMap::from([("text".into(), Value::from("query"))]),
    }
}

pub fn workload(scenario: Scenario, size: usize) -> Workload {
    match scenario {
        Scenario::Chain => chain(size),
        Scenario::Fanout => fanout(size),
        Scenario::Agentic => agentic(size),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub scenario: BenchScenario,
    pub workers: usize,
    pub nodes: usize,
    pub batch: BatchMetrics,
    /// Mean over runs of the per-node framework time.
    pub mean_node_framework_ms: f64,
    pub mean_wall_ms: f64,
    pub distinct_trace_digests: usize,
}

impl BenchReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// Human-readable summary followed by the JSON form.
    pub fn to_text(&self) -> String {
        let b = &self.batch;
        let mut s = format!(
            "scenario        {} (N={}, {} nodes)\nprovider        {}\nworkers         {}\nruns            {} ({} completed, {} failed)\n\
             processing      {:.3} ms/run (mean)\nframework/node  {:.4} ms\nwall            {:.3} ms/run (mean)\n\
             throughput      {:.0} ops/min\nfailures        framework {}, model {}, external {}\n\
             hallucination   {:.4} of runs, {:.4} of failures\nmodel errors    {}\ntrace digests   {}\n",
            self.scenario.name,
            self.scenario.size,
            self.nodes,
            self.scenario.provider.name(),
            self.workers,
            b.runs,
            b.completed,
            b.failed,
            b.mean_processing_ms,
            self.mean_node_framework_ms,
            self.mean_wall_ms,
            b.throughput_opm,
            b.framework_failures,
            b.model_failures,
            b.external_failures,
            b.hallucination_rate,
            b.framework_share_of_failures,
            b.model_errors,
            self.distinct_trace_digests,
        );
        if let Some(kb) = b.peak_memory_kb {
            s.push_str(&format!("peak memory     {kb} kB\n"));
        }
        s.push_str("\n[json]\n");
        s.push_str(&serde_json::to_string_pretty(&self.to_json()).expect("json"));
        s.push('\n');
        s
    }
}

pub fn run_bench(scenario: &BenchScenario, cfg: &ExecutionConfig) -> Result<BenchReport, EngineError> {
    scenario.validate().map_err(EngineError::Config)?;
    let w = workload(scenario.name, scenario.size);
    let tools = w.document.registry().map_err(|e| EngineError::Config(e.to_string()))?;
    let rt = Runtime::new(scenario.provider.build(), tools);
    let mut runs = Vec::new();
    let mut digests = BTreeSet::new();
    let (mut node_ms, mut wall_ms) = (0.0, 0.0);
    for _ in 0..scenario.repetitions {
        let res = execute(&w.document.graph, w.initial_state.clone(), cfg, &rt)?;
        digests.insert(res.trace.digest());
        node_ms += res.metrics.mean_node_framework_ms();
        wall_ms += res.metrics.wall_ms;
        runs.push(res.metrics);
    }
    let reps = f64::from(scenario.repetitions);
    Ok(BenchReport {
        scenario: scenario.clone(),
        workers: cfg.worker_limit,
        nodes: w.document.graph.node_count(),
        batch: BatchMetrics::from_runs(&runs),
        mean_node_framework_ms: node_ms / reps,
        mean_wall_ms: wall_ms / reps,
        distinct_trace_digests: digests.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::throughput_opm;

    #[test]
    fn scenarios_validate_and_complete() {
        for s in [Scenario::Chain, Scenario::Fanout, Scenario::Agentic] {
            let w = workload(s, 4);
            let tools = w.document.registry().unwrap();
            let report = w.document.validate(&tools);
            assert!(report.is_executable(), "{s}: {report}");
            let r = run_bench(&BenchScenario::new(s, 4).with_repetitions(3), &ExecutionConfig::default()).unwrap();
            assert_eq!(r.batch.completed, 3, "{s}: {:?}", r.batch);
            assert_eq!(r.distinct_trace_digests, 1);
            assert_eq!(r.batch.throughput_opm, throughput_opm(r.batch.mean_processing_ms));
        }
    }

    #[test]
    fn agentic_agents_call_their_tool() {
        let w = workload(Scenario::Agentic, 2);
        let rt = Runtime::new(ProviderChoice::Mock.build(), w.document.registry().unwrap());
        let res = execute(&w.document.graph, w.initial_state, &ExecutionConfig::default(), &rt).unwrap();
        assert!(res.is_completed());
        assert_eq!(res.agent_tool_calls.len(), 2);
    }

    #[test]
    fn zero_repetitions_rejected() {
        let s = BenchScenario::new(Scenario::Chain, 2).with_repetitions(0);
        assert!(run_bench(&s, &ExecutionConfig::default()).is_err());
    }
}
