use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use serde_json::json;

use super::checkpoint::{decode_history, encode_history, Checkpoint, RetiredNode, CHECKPOINT_FORMAT};
use super::metrics::{peak_memory_kb, NodeMetrics, RunMetrics};
use super::ready::{aggregate_join, edge_state, readiness, route_branch, EdgeState, NodeStatus, Progress, Readiness, RouteError};
use super::recovery::{apply_recovery, Recoverable, RecoveryAction};
use super::trace::{commit_payload, EventKind, ExecutionTrace, INIT_WRITER};
use super::{
    EngineError, ExecutionConfig, ExecutionResult, FailureKind, NodeFailure, NodeRun, RunOutcome,
};
use crate::graph::{
    apply_edge, inline_all, schema_table, static_state_schema, topological_order, validate, AgentSpec, GraphIndex,
    NodeKind, ToolSpec, WorkflowGraph,
};
use crate::memory::{ConnectorHub, ConnectorSpec, FileBackend, HttpBackend, Scope, StateSnapshot, StateStore};
use crate::nodes::{
    run_agent, run_tool, AgentEnv, AgentError, CancelFlag, ModelError, Provider, RetryNote, ToolEnv, ToolError,
    ToolRegistry,
};
use crate::predicate::{compile, TypedExpr};
use crate::value::{FieldType, Schema, Value};

/// Provider, tools and connectors shared by every node of a run.
#[derive(Clone)]
pub struct Runtime {
    pub provider: Arc<dyn Provider>,
    pub tools: Arc<ToolRegistry>,
    pub connectors: Arc<ConnectorHub>,
}

impl Runtime {
    pub fn new(provider: Arc<dyn Provider>, tools: ToolRegistry) -> Self {
        Runtime { provider, tools: Arc::new(tools), connectors: Arc::new(default_connectors()) }
    }

    pub fn with_connectors(mut self, hub: Arc<ConnectorHub>) -> Self {
        self.connectors = hub;
        self
    }
}

/// Hub with the `file` and `http` connectors used by the built-in tools.
pub fn default_connectors() -> ConnectorHub {
    let hub = ConnectorHub::new();
    hub.register(ConnectorSpec::new("file", "file"), Arc::new(FileBackend::default()))
        .expect("fresh hub");
    hub.register(ConnectorSpec::new("http", "http"), Arc::new(HttpBackend::default()))
        .expect("fresh hub");
    hub
}

impl Recoverable for AgentError {
    fn is_retryable(&self) -> bool {
        matches!(
            self,
            AgentError::OutputSchemaViolation(_) | AgentError::IterationLimitExceeded(_) | AgentError::Provider(_)
        )
    }
}

// ---------------------------------------------------------------------------
// planning

type Guards = Vec<(String, Option<TypedExpr>)>;

struct Plan {
    graph: WorkflowGraph,
    graph_hash: String,
    order: Vec<String>,
    rank: HashMap<String, usize>,
    layer: Vec<usize>,
    layer_start: Vec<usize>,
    index: GraphIndex,
    /// In-edges by rank, sorted by (source rank, edge id).
    ins: Vec<Vec<String>>,
    succ: Vec<BTreeSet<usize>>,
    guards: HashMap<usize, Guards>,
    reads_state: Vec<bool>,
    state_schema: Schema,
    declared: Schema,
}

fn plan(graph: &WorkflowGraph, cfg: &ExecutionConfig, rt: &Runtime) -> Result<Plan, EngineError> {
    cfg.validate().map_err(EngineError::Config)?;
    let report = validate(graph, rt.tools.as_ref());
    if !report.is_executable() {
        return Err(EngineError::Validation(report));
    }
    let flat = inline_all(graph)?;
    let topo = topological_order(&flat).expect("validated graphs are acyclic");
    let table = schema_table(&flat);
    let static_state = static_state_schema(&flat, &table);
    let index = flat.index();

    let order: Vec<String> = topo.iter().map(|(id, _)| id.clone()).collect();
    let layer: Vec<usize> = topo.iter().map(|(_, l)| *l).collect();
    let rank: HashMap<String, usize> = order.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
    let layers = layer.last().map_or(0, |l| l + 1);
    let mut layer_start = vec![0; layers];
    for (r, l) in layer.iter().enumerate().rev() {
        layer_start[*l] = r;
    }

    let mut ins = Vec::with_capacity(order.len());
    let mut succ = Vec::with_capacity(order.len());
    let mut guards = HashMap::new();
    let mut reads_state = Vec::with_capacity(order.len());
    let mut declared = Schema::empty();
    for (r, id) in order.iter().enumerate() {
        let mut e: Vec<String> = index.ins(id).to_vec();
        e.sort_by_key(|eid| (rank[&flat.edge(eid).expect("indexed").src], eid.clone()));
        ins.push(e);
        succ.push(index.outs(id).iter().map(|eid| rank[&flat.edge(eid).expect("indexed").dst]).collect());
        let node = flat.node(id).expect("ordered node");
        let reads = match &node.kind {
            NodeKind::Branch(b) => {
                let compiled: Guards = b
                    .guards
                    .iter()
                    .map(|g| {
                        let expr = g.when.as_ref().map(|src| compile(src, &static_state).expect("validated guard"));
                        (g.edge.clone(), expr)
                    })
                    .collect();
                let any = compiled.iter().any(|(_, e)| e.is_some());
                guards.insert(r, compiled);
                any
            }
            NodeKind::Agent(a) => !a.declared_state_reads.is_empty(),
            _ => false,
        };
        reads_state.push(reads);
        if let Some(out) = table.outputs.get(id) {
            declared.insert(id.clone(), FieldType::Record(out.clone())).expect("ids are unique");
        }
    }

    Ok(Plan {
        graph_hash: graph.canonical_hash(),
        state_schema: flat.state_schema.clone(),
        graph: flat,
        order,
        rank,
        layer,
        layer_start,
        index,
        ins,
        succ,
        guards,
        reads_state,
        declared,
    })
}

fn check_initial(plan: &Plan, initial: &BTreeMap<String, Value>) -> Result<(), EngineError> {
    for (k, ty) in plan.state_schema.iter() {
        let v = initial.get(k).ok_or_else(|| EngineError::InitialState(format!("missing key `{k}`")))?;
        v.conforms_to(ty).map_err(|e| EngineError::InitialState(format!("`{k}`: {e}")))?;
    }
    if let Some(k) = initial.keys().find(|k| !plan.state_schema.contains(k)) {
        return Err(EngineError::InitialState(format!("unknown key `{k}`")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// workers

enum Job {
    Tool { rank: usize, node: String, spec: ToolSpec, args: Value },
    Agent { rank: usize, node: String, spec: AgentSpec, inputs: Value, snap: StateSnapshot },
}

struct WorkerCtx {
    provider: Arc<dyn Provider>,
    tools: Arc<ToolRegistry>,
    connectors: Arc<ConnectorHub>,
    cancel: CancelFlag,
    recovery: super::RecoveryPolicy,
    jitter: bool,
}

#[derive(Default)]
struct Work {
    attempts: u32,
    retries: Vec<RetryNote>,
    busy: Duration,
    external: Duration,
    backoff: Duration,
    tool_calls: Vec<String>,
    model_errors: Vec<ModelError>,
}

enum Msg {
    Done(usize, Result<Value, NodeFailure>, Work),
    Progress,
}

fn tool_failure(node: &str, e: &ToolError) -> NodeFailure {
    let kind = match e {
        ToolError::Unregistered(_) => FailureKind::ToolUnregistered,
        ToolError::InputSchemaViolation { .. } => FailureKind::ToolInput,
        ToolError::Timeout { .. } => FailureKind::ToolTimeout,
        ToolError::Failed { .. } => FailureKind::ToolFailed,
        ToolError::OutputSchemaViolation { .. } => FailureKind::ToolOutput,
        ToolError::Cancelled(_) => FailureKind::Cancelled,
    };
    NodeFailure::new(node, kind, e.to_string())
}

fn agent_failure(node: &str, e: &AgentError) -> NodeFailure {
    let kind = match e {
        AgentError::OutputSchemaViolation(_) => FailureKind::ModelOutput,
        AgentError::IterationLimitExceeded(_) => FailureKind::IterationLimit,
        AgentError::Provider(_) => FailureKind::Provider,
        AgentError::Context(_) => FailureKind::StateRead,
        AgentError::UnregisteredTool(_) => FailureKind::ToolUnregistered,
        AgentError::Cancelled => FailureKind::Cancelled,
    };
    NodeFailure::new(node, kind, e.to_string())
}

fn run_job(job: Job, ctx: &WorkerCtx, progress: &Sender<Msg>) -> (usize, Result<Value, NodeFailure>, Work) {
    let started = Instant::now();
    let mut work = Work::default();
    let (rank, result) = match job {
        Job::Tool { rank, node, spec, args } => {
            let env = ToolEnv {
                node_id: node.clone(),
                connectors: Arc::clone(&ctx.connectors),
                cancel: ctx.cancel.clone(),
                scratch: None,
            };
            let run = run_tool(&spec, &ctx.tools, &args, &env);
            work.attempts = run.attempts;
            work.retries = run.retries;
            work.external = run.external;
            work.backoff = run.backoff;
            (rank, run.result.map_err(|e| tool_failure(&node, &e)))
        }
        Job::Agent { rank, node, spec, inputs, snap } => {
            let mut attempt = 0;
            let result = loop {
                work.attempts = attempt + 1;
                let env = AgentEnv {
                    node_id: &node,
                    attempt,
                    provider: ctx.provider.as_ref(),
                    tools: &ctx.tools,
                    tool_env: ToolEnv {
                        node_id: node.clone(),
                        connectors: Arc::clone(&ctx.connectors),
                        cancel: ctx.cancel.clone(),
                        scratch: None,
                    },
                };
                match run_agent(&spec, &inputs, &snap, &env) {
                    Ok(out) => {
                        work.external += out.external;
                        work.tool_calls.extend(out.tool_invocations.iter().map(|i| i.tool.clone()));
                        work.model_errors.extend(out.model_errors);
                        break Ok(out.output);
                    }
                    Err(f) => {
                        work.external += f.external;
                        work.tool_calls.extend(f.tool_invocations.iter().map(|i| i.tool.clone()));
                        work.model_errors.extend(f.model_errors);
                        match apply_recovery(&f.error, &ctx.recovery, attempt) {
                            RecoveryAction::RetryAfter(delay) if !ctx.cancel.is_cancelled() => {
                                work.retries.push(RetryNote { attempt, delay, error: f.error.to_string() });
                                let _ = progress.send(Msg::Progress);
                                let actual = if ctx.jitter {
                                    delay.mul_f64(1.0 + rand::random::<f64>() * 0.1)
                                } else {
                                    delay
                                };
                                let slept = Instant::now();
                                let finished = ctx.cancel.sleep(actual);
                                work.backoff += slept.elapsed();
                                if !finished {
                                    break Err(agent_failure(&node, &AgentError::Cancelled));
                                }
                                attempt += 1;
                            }
                            _ => break Err(agent_failure(&node, &f.error)),
                        }
                    }
                }
            };
            (rank, result)
        }
    };
    work.busy = started.elapsed();
    (rank, result, work)
}

fn spawn_workers(n: usize, jobs: Receiver<Job>, msgs: Sender<Msg>, ctx: Arc<WorkerCtx>) {
    for i in 0..n {
        let jobs = jobs.clone();
        let msgs = msgs.clone();
        let ctx = Arc::clone(&ctx);
        // detached: a stalled body must not block the caller
        std::thread::Builder::new()
            .name(format!("detflow-worker-{i}"))
            .spawn(move || {
                while let Ok(job) = jobs.recv() {
                    if ctx.cancel.is_cancelled() {
                        continue;
                    }
                    let (rank, result, work) = run_job(job, &ctx, &msgs);
                    if msgs.send(Msg::Done(rank, result, work)).is_err() {
                        break;
                    }
                }
            })
            .expect("spawn worker thread");
    }
}

// ---------------------------------------------------------------------------
// the run

enum Fate {
    Completed { output: Value, selected: Option<String> },
    Failed(NodeFailure),
    Skipped,
}

struct Finished {
    fate: Fate,
    /// Digest of the assembled input; `None` if the node was never dispatched.
    input_digest: Option<String>,
    work: Work,
    prep: Duration,
}

enum Step {
    Idle,
    Progressed,
    Stop(RunOutcome),
}

struct Run<'a> {
    plan: &'a Plan,
    cfg: &'a ExecutionConfig,
    store: StateStore,
    initial: BTreeMap<String, Value>,
    progress: Progress,
    phase: Vec<NodeStatus>,
    outputs: BTreeMap<String, Value>,
    retired: usize,
    horizons: Vec<Option<u64>>,
    next_horizon: usize,
    buffer: BTreeMap<usize, Finished>,
    ready: BTreeSet<usize>,
    candidates: BTreeSet<usize>,
    /// Dispatched jobs with their preparation time and input digest.
    in_flight: BTreeMap<usize, (Duration, String)>,
    trace: ExecutionTrace,
    /// Trace length at the last clean retirement boundary.
    boundary: usize,
    retired_log: Vec<RetiredNode>,
    node_runs: BTreeMap<String, NodeRun>,
    metrics: RunMetrics,
    commits: u64,
    agent_tool_calls: Vec<(String, String)>,
    model_errors: Vec<(String, ModelError)>,
}

impl<'a> Run<'a> {
    fn fresh(plan: &'a Plan, cfg: &'a ExecutionConfig, initial: BTreeMap<String, Value>) -> Self {
        let n = plan.order.len();
        Run {
            plan,
            cfg,
            store: StateStore::new(plan.state_schema.clone(), plan.declared.clone()),
            initial,
            progress: Progress::default(),
            phase: vec![NodeStatus::Pending; n],
            outputs: BTreeMap::new(),
            retired: 0,
            horizons: vec![None; plan.layer_start.len()],
            next_horizon: 0,
            buffer: BTreeMap::new(),
            ready: BTreeSet::new(),
            candidates: (0..n).collect(),
            in_flight: BTreeMap::new(),
            trace: ExecutionTrace::new(),
            boundary: 0,
            retired_log: Vec::new(),
            node_runs: plan
                .order
                .iter()
                .map(|id| (id.clone(), NodeRun { status: NodeStatus::Pending, attempts: 0, selected: None }))
                .collect(),
            metrics: RunMetrics::default(),
            commits: 0,
            agent_tool_calls: Vec::new(),
            model_errors: Vec::new(),
        }
    }

    fn advance_horizons(&mut self) {
        while self.next_horizon < self.horizons.len() && self.retired >= self.plan.layer_start[self.next_horizon] {
            self.horizons[self.next_horizon] = Some(self.store.logical_time());
            self.next_horizon += 1;
        }
    }

    fn id(&self, rank: usize) -> &'a str {
        &self.plan.order[rank]
    }

    fn decide(&mut self) -> bool {
        let mut changed = false;
        let candidates = std::mem::take(&mut self.candidates);
        for r in candidates {
            if self.phase[r] != NodeStatus::Pending {
                continue;
            }
            let id = self.id(r);
            match readiness(&self.plan.graph, &self.plan.index, &self.progress, id) {
                Readiness::Wait => {}
                Readiness::Ready => {
                    self.phase[r] = NodeStatus::Ready;
                    self.ready.insert(r);
                    changed = true;
                }
                Readiness::Skip => {
                    self.phase[r] = NodeStatus::Skipped;
                    self.buffer.insert(r, Finished { fate: Fate::Skipped, input_digest: None, work: Work::default(), prep: Duration::ZERO });
                    changed = true;
                }
                Readiness::Unsatisfiable => {
                    let f = NodeFailure::new(id, FailureKind::AggregateUnsatisfiable, "some but not all inputs were skipped");
                    self.phase[r] = NodeStatus::Failed;
                    self.buffer.insert(r, Finished { fate: Fate::Failed(f), input_digest: None, work: Work::default(), prep: Duration::ZERO });
                    changed = true;
                }
            }
        }
        changed
    }

    fn payload(&self, edge_id: &str) -> Result<Value, NodeFailure> {
        let edge = self.plan.graph.edge(edge_id).expect("planned edge");
        let src = self.outputs.get(&edge.src).expect("live edge source has an output");
        apply_edge(edge, src)
            .map(Value::Record)
            .map_err(|e| NodeFailure::new(&edge.dst, FailureKind::EdgeTransform, e.to_string()))
    }

    /// Input record of a non-aggregate node: edge payloads plus state-bound fields.
    fn assemble(&self, r: usize, schema: &Schema) -> Result<Value, NodeFailure> {
        let id = self.id(r);
        let mut rec = BTreeMap::new();
        for e in &self.plan.ins[r] {
            if let Value::Record(fields) = self.payload(e)? {
                rec.extend(fields);
            }
        }
        for (field, _) in schema.iter() {
            if !rec.contains_key(field) {
                let v = self.initial.get(field).ok_or_else(|| {
                    NodeFailure::new(id, FailureKind::EdgeTransform, format!("no value for input `{field}`"))
                })?;
                rec.insert(field.clone(), v.clone());
            }
        }
        let input = Value::Record(rec);
        schema
            .check(&input)
            .map_err(|e| NodeFailure::new(id, FailureKind::EdgeTransform, format!("assembled input: {e}")))?;
        Ok(input)
    }

    fn snapshot(&self, r: usize, scope: Scope) -> StateSnapshot {
        let t = self.horizons[self.plan.layer[r]].expect("barrier checked before dispatch");
        self.store.snapshot_at(scope, t)
    }

    /// Builds the job for a worker node, or runs a control node in place.
    fn prepare(&self, r: usize, kind: &NodeKind) -> Result<Prepared, NodeFailure> {
        let id = self.id(r);
        match kind {
            NodeKind::Aggregate(agg) => {
                let mut live = Vec::new();
                for e in &self.plan.ins[r] {
                    if edge_state(&self.plan.graph, &self.progress, e) == EdgeState::Live {
                        live.push((e.clone(), self.payload(e)?));
                    }
                }
                let input_digest = Value::Record(live.iter().cloned().collect()).digest();
                let output = aggregate_join(agg.policy, &live);
                Ok(Prepared::Inline { input_digest, fate: Fate::Completed { output, selected: None } })
            }
            NodeKind::FanOut(f) => {
                let input = self.assemble(r, &f.schema)?;
                Ok(Prepared::Inline { input_digest: input.digest(), fate: Fate::Completed { output: input, selected: None } })
            }
            NodeKind::Branch(b) => {
                let input = self.assemble(r, &b.schema)?;
                let input_digest = input.digest();
                let guards = &self.plan.guards[&r];
                let snap = if self.plan.reads_state[r] {
                    self.snapshot(r, Scope::All)
                } else {
                    StateSnapshot::from_values(BTreeMap::new(), Scope::All)
                };
                let fate = match route_branch(id, guards, &snap) {
                    Ok(edge) => Fate::Completed { output: input, selected: Some(edge) },
                    Err(e @ RouteError::NoBranchTaken(_)) => {
                        Fate::Failed(NodeFailure::new(id, FailureKind::NoBranchTaken, e.to_string()))
                    }
                    Err(e @ RouteError::Eval { .. }) => {
                        Fate::Failed(NodeFailure::new(id, FailureKind::GuardEval, e.to_string()))
                    }
                };
                Ok(Prepared::Inline { input_digest, fate })
            }
            NodeKind::Tool(t) => {
                let args = self.assemble(r, &t.input_schema)?;
                let d = args.digest();
                Ok(Prepared::Job(Job::Tool { rank: r, node: id.to_string(), spec: t.clone(), args }, d))
            }
            NodeKind::Agent(a) => {
                let inputs = self.assemble(r, &a.input_schema)?;
                let d = inputs.digest();
                let snap = if self.plan.reads_state[r] {
                    self.snapshot(r, Scope::keys(a.declared_state_reads.iter().cloned()))
                } else {
                    StateSnapshot::from_values(BTreeMap::new(), Scope::keys(Vec::<String>::new()))
                };
                Ok(Prepared::Job(Job::Agent { rank: r, node: id.to_string(), spec: a.clone(), inputs, snap }, d))
            }
            NodeKind::Composite(_) => unreachable!("composites are inlined before planning"),
        }
    }

    fn dispatch(&mut self, jobs: &Sender<Job>) -> bool {
        let mut changed = false;
        let ready: Vec<usize> = self.ready.iter().copied().collect();
        for r in ready {
            if self.plan.reads_state[r] && self.horizons[self.plan.layer[r]].is_none() {
                continue;
            }
            let node = self.plan.graph.node(self.id(r)).expect("planned node");
            if !node.kind.is_control() && self.in_flight.len() >= self.cfg.worker_limit {
                continue;
            }
            let started = Instant::now();
            let prepared = self.prepare(r, &node.kind);
            self.ready.remove(&r);
            changed = true;
            match prepared {
                Err(f) => {
                    self.phase[r] = NodeStatus::Failed;
                    self.buffer.insert(
                        r,
                        Finished { fate: Fate::Failed(f), input_digest: None, work: Work::default(), prep: started.elapsed() },
                    );
                }
                Ok(Prepared::Inline { input_digest, fate }) => {
                    self.phase[r] = NodeStatus::Running;
                    let work = Work { attempts: 1, ..Work::default() };
                    self.buffer.insert(r, Finished { fate, input_digest: Some(input_digest), work, prep: started.elapsed() });
                }
                Ok(Prepared::Job(job, input_digest)) => {
                    self.phase[r] = NodeStatus::Running;
                    self.in_flight.insert(r, (started.elapsed(), input_digest));
                    jobs.send(job).expect("workers hold the job receiver");
                }
            }
        }
        changed
    }

    fn on_done(&mut self, r: usize, result: Result<Value, NodeFailure>, work: Work) {
        let (prep, input_digest) = self.in_flight.remove(&r).expect("done job was in flight");
        let fate = match result {
            Ok(output) => Fate::Completed { output, selected: None },
            Err(f) => Fate::Failed(f),
        };
        self.buffer.insert(r, Finished { fate, input_digest: Some(input_digest), work, prep });
    }

    fn record_work(&mut self, id: &str, f: &Finished, retire: Duration) {
        let w = &f.work;
        let worker_overhead = w.busy.saturating_sub(w.external + w.backoff);
        let m = NodeMetrics {
            framework_ms: (f.prep + worker_overhead + retire).as_secs_f64() * 1000.0,
            external_ms: w.external.as_secs_f64() * 1000.0,
            backoff_ms: w.backoff.as_secs_f64() * 1000.0,
            attempts: w.attempts,
            model_errors: w.model_errors.len() as u32,
            tool_invocations: w.tool_calls.len() as u32,
        };
        self.metrics.external_ms += m.external_ms;
        self.metrics.model_errors += m.model_errors;
        self.metrics.tool_invocations += m.tool_invocations;
        self.metrics.nodes.insert(id.to_string(), m);
        self.agent_tool_calls.extend(w.tool_calls.iter().map(|t| (id.to_string(), t.clone())));
        self.model_errors.extend(w.model_errors.iter().map(|e| (id.to_string(), e.clone())));
    }

    fn trace_attempts(&mut self, id: &str, f: &Finished) {
        if let Some(d) = &f.input_digest {
            self.trace.push_with_digest(EventKind::Dispatch, id, d.clone(), None);
        }
        for note in &f.work.retries {
            let payload = json!({
                "attempt": note.attempt,
                "delay_us": note.delay.as_micros() as u64,
                "error": note.error,
            });
            self.trace.push(EventKind::Retry, id, Some(payload));
        }
    }

    /// Retires buffered results in rank order.
    fn retire(&mut self) -> Step {
        let mut step = Step::Idle;
        while let Some(f) = self.buffer.remove(&self.retired) {
            let started = Instant::now();
            let r = self.retired;
            let id = self.id(r);
            self.trace_attempts(id, &f);
            let status = match &f.fate {
                Fate::Skipped => {
                    self.trace.push(EventKind::Skip, id, None);
                    NodeStatus::Skipped
                }
                Fate::Failed(failure) => {
                    let failure = failure.clone();
                    self.finish_node(id, NodeStatus::Failed, &f, None, started.elapsed());
                    return Step::Stop(RunOutcome::Failed { failure });
                }
                Fate::Completed { output, selected } => {
                    let updates = BTreeMap::from([(id.to_string(), output.clone())]);
                    if let Err(e) = self.store.commit(updates, id) {
                        let failure = NodeFailure::new(id, FailureKind::StateCommit, e.to_string());
                        self.finish_node(id, NodeStatus::Failed, &f, None, started.elapsed());
                        return Step::Stop(RunOutcome::Failed { failure });
                    }
                    self.trace.push(EventKind::Commit, id, Some(commit_payload(output, selected.as_deref())));
                    self.outputs.insert(id.to_string(), output.clone());
                    if let Some(sel) = selected {
                        self.progress.selected.insert(id.to_string(), sel.clone());
                    }
                    self.commits += 1;
                    NodeStatus::Completed
                }
            };
            let selected = self.progress.selected.get(id).cloned();
            self.progress.status.insert(id.to_string(), status);
            self.retired += 1;
            self.boundary = self.trace.len();
            self.retired_log.push(RetiredNode { node: id.to_string(), status, selected: selected.clone(), attempts: f.work.attempts });
            self.advance_horizons();
            self.candidates.extend(self.plan.succ[r].iter().copied());
            self.finish_node(id, status, &f, selected, started.elapsed());
            step = Step::Progressed;
            if status == NodeStatus::Completed && self.cfg.interrupt_after_commits == Some(self.commits) {
                return Step::Stop(RunOutcome::Interrupted { commits: self.commits });
            }
        }
        step
    }

    fn finish_node(&mut self, id: &str, status: NodeStatus, f: &Finished, selected: Option<String>, retire: Duration) {
        self.phase[self.plan.rank[id]] = status;
        self.node_runs.insert(id.to_string(), NodeRun { status, attempts: f.work.attempts, selected });
        if status != NodeStatus::Skipped {
            self.record_work(id, f, retire);
        }
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut trace = self.trace.events()[..self.boundary].to_vec();
        let logical_time = trace.len() as u64 + 1;
        let payload = json!({ "commits": self.commits });
        let mut t = ExecutionTrace::new();
        let mut ev = t.push(EventKind::Checkpoint, "", Some(payload)).clone();
        ev.logical_time = logical_time;
        trace.push(ev);
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            graph_hash: self.plan.graph_hash.clone(),
            config_digest: self.cfg.digest(),
            initial_state: Value::Record(self.initial.clone()).to_json(),
            history: encode_history(&self.store.history()),
            retired: self.retired_log.clone(),
            horizons: self.horizons.clone(),
            commits: self.commits,
            trace,
        }
    }

    fn drive(&mut self, rt: &Runtime) -> RunOutcome {
        let (job_tx, job_rx) = crossbeam_channel::unbounded::<Job>();
        let (msg_tx, msg_rx) = crossbeam_channel::unbounded::<Msg>();
        let cancel = CancelFlag::new();
        let ctx = Arc::new(WorkerCtx {
            provider: Arc::clone(&rt.provider),
            tools: Arc::clone(&rt.tools),
            connectors: Arc::clone(&rt.connectors),
            cancel: cancel.clone(),
            recovery: self.cfg.recovery.clone(),
            jitter: self.cfg.jitter,
        });
        let workers = self.cfg.worker_limit.min(self.plan.order.len().max(1));
        spawn_workers(workers, job_rx, msg_tx, ctx);
        let watchdog = Duration::from_millis(self.cfg.watchdog_ms);
        let mut last_event = Instant::now();

        let outcome = loop {
            let mut stop = None;
            loop {
                let mut changed = self.decide();
                changed |= self.dispatch(&job_tx);
                match self.retire() {
                    Step::Stop(o) => {
                        stop = Some(o);
                        break;
                    }
                    Step::Progressed => changed = true,
                    Step::Idle => {}
                }
                if !changed {
                    break;
                }
            }
            if let Some(o) = stop {
                break o;
            }
            if self.retired == self.plan.order.len() {
                break RunOutcome::Completed;
            }
            assert!(
                !self.in_flight.is_empty(),
                "scheduler invariant: unretired nodes but nothing in flight (retired {} of {})",
                self.retired,
                self.plan.order.len()
            );
            match msg_rx.recv_timeout(watchdog.saturating_sub(last_event.elapsed())) {
                Ok(Msg::Progress) => last_event = Instant::now(),
                Ok(Msg::Done(r, result, work)) => {
                    last_event = Instant::now();
                    self.on_done(r, result, work);
                }
                Err(RecvTimeoutError::Timeout) => {
                    let nodes: Vec<String> = self.in_flight.keys().map(|r| self.plan.order[*r].clone()).collect();
                    let waited_ms = last_event.elapsed().as_millis() as u64;
                    let payload = json!({ "kind": "stall", "waited_ms": waited_ms, "in_flight": nodes });
                    self.trace.push(EventKind::Error, &nodes[0], Some(payload));
                    break RunOutcome::Stalled { nodes, waited_ms };
                }
                Err(RecvTimeoutError::Disconnected) => unreachable!("workers hold the result sender"),
            }
        };
        cancel.cancel();
        drop(job_tx);
        outcome
    }

    fn conclude(mut self, outcome: RunOutcome, started: Instant) -> Result<ExecutionResult, EngineError> {
        if let RunOutcome::Failed { failure } = &outcome {
            let payload = json!({
                "class": failure.class(),
                "kind": failure.kind,
                "error": failure.message,
            });
            self.trace.push(EventKind::Error, &failure.node, Some(payload));
        }
        for id in &self.plan.order[self.retired..] {
            let run = self.node_runs.get_mut(id).expect("planned node");
            if run.status != NodeStatus::Failed {
                run.status = NodeStatus::Cancelled;
            }
        }
        if let Some(path) = &self.cfg.checkpoint_path {
            let cp = self.checkpoint();
            cp.write(Path::new(path))?;
            self.trace.push(EventKind::Checkpoint, "", Some(json!({ "commits": self.commits })));
        }
        self.metrics.wall_ms = started.elapsed().as_secs_f64() * 1000.0;
        self.metrics.processing_ms =
            self.metrics.setup_ms + self.metrics.nodes.values().map(|n| n.framework_ms).sum::<f64>();
        self.metrics.failure = outcome.failure_class();
        if self.cfg.collect_metrics {
            self.metrics.peak_memory_kb = peak_memory_kb();
        }
        Ok(ExecutionResult {
            outcome,
            final_state: self.store.current_values(),
            history: self.store.history(),
            trace: self.trace,
            node_runs: self.node_runs,
            metrics: self.metrics,
            agent_tool_calls: self.agent_tool_calls,
            model_errors: self.model_errors,
        })
    }
}

// Lives only between preparation and dispatch, so the size gap is harmless.
#[allow(clippy::large_enum_variant)]
enum Prepared {
    Inline { input_digest: String, fate: Fate },
    Job(Job, String),
}

/// Runs `graph` from `initial_state` to completion, failure, stall or
/// interruption. Only problems found before the first node runs are errors;
/// everything else is reported in [`ExecutionResult::outcome`].
pub fn execute(
    graph: &WorkflowGraph,
    initial_state: BTreeMap<String, Value>,
    cfg: &ExecutionConfig,
    rt: &Runtime,
) -> Result<ExecutionResult, EngineError> {
    let started = Instant::now();
    let plan = plan(graph, cfg, rt)?;
    check_initial(&plan, &initial_state)?;
    let mut run = Run::fresh(&plan, cfg, initial_state);
    if !run.initial.is_empty() {
        run.store.commit(run.initial.clone(), INIT_WRITER).map_err(|e| EngineError::InitialState(e.to_string()))?;
    }
    let init = commit_payload(&Value::Record(run.initial.clone()), None);
    run.trace.push(EventKind::Commit, INIT_WRITER, Some(init));
    run.boundary = run.trace.len();
    run.advance_horizons();
    run.metrics.setup_ms = started.elapsed().as_secs_f64() * 1000.0;
    let outcome = if cfg.interrupt_after_commits == Some(0) {
        RunOutcome::Interrupted { commits: 0 }
    } else {
        run.drive(rt)
    };
    run.conclude(outcome, started)
}

/// Continues a run from a checkpoint written by [`execute`] or [`resume`].
pub fn resume(
    graph: &WorkflowGraph,
    checkpoint: &Path,
    cfg: &ExecutionConfig,
    rt: &Runtime,
) -> Result<ExecutionResult, EngineError> {
    use super::CheckpointError::Incompatible;
    let started = Instant::now();
    let cp = Checkpoint::read(checkpoint)?;
    let plan = plan(graph, cfg, rt)?;
    if cp.graph_hash != plan.graph_hash {
        return Err(Incompatible("checkpoint was written for a different graph".into()).into());
    }
    if cp.config_digest != cfg.digest() {
        return Err(Incompatible("checkpoint was written under a different seed or recovery policy".into()).into());
    }
    if cp.horizons.len() != plan.layer_start.len() || cp.retired.len() > plan.order.len() {
        return Err(Incompatible("checkpoint does not match the graph layout".into()).into());
    }
    for (r, node) in cp.retired.iter().enumerate() {
        if node.node != plan.order[r] {
            return Err(Incompatible(format!("retired node `{}` out of order", node.node)).into());
        }
    }
    let initial = match Value::from_json(&cp.initial_state, &FieldType::Record(plan.state_schema.clone())) {
        Ok(Value::Record(r)) => r,
        _ => return Err(super::CheckpointError::Corrupt("initial state does not match the state schema".into()).into()),
    };
    let mut replay_schema = plan.state_schema.clone();
    for (k, t) in plan.declared.iter() {
        let _ = replay_schema.insert(k.clone(), t.clone());
    }
    let history = decode_history(&cp.history, &replay_schema)?;
    let store = StateStore::replay(plan.state_schema.clone(), plan.declared.clone(), history)
        .map_err(|e| super::CheckpointError::Corrupt(e.to_string()))?;
    let trace = ExecutionTrace::from_events(cp.trace.clone())
        .map_err(|e| super::CheckpointError::Corrupt(e.to_string()))?;

    let mut run = Run::fresh(&plan, cfg, initial);
    run.store = store;
    let current = run.store.current_values();
    for (r, node) in cp.retired.iter().enumerate() {
        run.phase[r] = node.status;
        run.progress.status.insert(node.node.clone(), node.status);
        if let Some(sel) = &node.selected {
            run.progress.selected.insert(node.node.clone(), sel.clone());
        }
        if node.status == NodeStatus::Completed {
            let out = current
                .get(&node.node)
                .ok_or_else(|| super::CheckpointError::Corrupt(format!("no output for `{}`", node.node)))?;
            run.outputs.insert(node.node.clone(), out.clone());
        }
        run.node_runs.insert(
            node.node.clone(),
            NodeRun { status: node.status, attempts: node.attempts, selected: node.selected.clone() },
        );
    }
    run.retired = cp.retired.len();
    run.retired_log = cp.retired.clone();
    run.horizons = cp.horizons.clone();
    run.next_horizon = run.horizons.iter().take_while(|h| h.is_some()).count();
    run.commits = cp.commits;
    run.trace = trace;
    run.boundary = run.trace.len();
    run.candidates = (run.retired..plan.order.len()).collect();
    run.advance_horizons();
    run.metrics.setup_ms = started.elapsed().as_secs_f64() * 1000.0;
    let outcome = run.drive(rt);
    run.conclude(outcome, started)
}
