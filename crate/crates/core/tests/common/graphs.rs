//! Workflow fixtures: random DAGs (optionally with back edges) and the fixed
//! mixed workflows used by the engine and acceptance suites.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use serde_json::json;

use detflow::builder::WorkflowBuilder;
use detflow::document::{ToolBinding, WorkflowDocument};
use detflow::engine::Runtime;
use detflow::graph::{AgentSpec, AggregatePolicy, EdgeSpec, Guard, NodeKind, NodeSpec, ToolSpec, WorkflowGraph};
use detflow::nodes::{builtin, MockProvider, ToolRegistry};
use detflow::value::{FieldType, Schema, Value};

pub fn x() -> Schema {
    Schema::of([("x", FieldType::Int)])
}

pub fn text() -> Schema {
    Schema::of([("text", FieldType::String)])
}

pub fn x_state(v: i64) -> BTreeMap<String, Value> {
    BTreeMap::from([("x".to_string(), Value::Int(v))])
}

/// `noop` over `{x}`, `upper` over `{text}`, `nap` sleeping 100 ms over `{x}`.
pub fn registry() -> ToolRegistry {
    let mut r = ToolRegistry::new();
    for (id, name, params) in bindings() {
        r.register(builtin(id, name, &params).unwrap()).unwrap();
    }
    r
}

fn bindings() -> Vec<(&'static str, &'static str, serde_json::Value)> {
    let s = json!({ "schema": x().to_json() });
    vec![
        ("noop", "noop", s.clone()),
        ("upper", "upper", serde_json::Value::Null),
        ("nap", "sleep", json!({ "ms": 100, "schema": x().to_json() })),
    ]
}

/// Attaches the standard tool bindings to a graph.
pub fn document(g: WorkflowGraph) -> WorkflowDocument {
    bindings().into_iter().fold(WorkflowDocument::new(g), |d, (id, name, params)| d.bind(id, ToolBinding::builtin(name, params)))
}

pub fn mock_rt() -> Runtime {
    Runtime::new(Arc::new(MockProvider::auto().with_auto_tool_calls(true)), registry())
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Tool,
    Agent,
    Branch,
    FanOut,
    Aggregate(AggregatePolicy),
}

pub struct RandomGraph {
    pub graph: WorkflowGraph,
    /// Whether the edges contain a cycle, by an independent search.
    pub cyclic: bool,
}

/// Depth-first cycle search over the edge list.
pub fn has_cycle(g: &WorkflowGraph) -> bool {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in g.edges() {
        adj.entry(e.src.as_str()).or_default().push(e.dst.as_str());
    }
    // 0 unvisited, 1 on stack, 2 done
    let mut color: BTreeMap<&str, u8> = g.nodes().map(|n| (n.id.as_str(), 0)).collect();
    fn visit<'a>(n: &'a str, adj: &BTreeMap<&'a str, Vec<&'a str>>, color: &mut BTreeMap<&'a str, u8>) -> bool {
        color.insert(n, 1);
        for &m in adj.get(n).map(Vec::as_slice).unwrap_or(&[]) {
            let c = color[m];
            if c == 1 || (c == 0 && visit(m, adj, color)) {
                return true;
            }
        }
        color.insert(n, 2);
        false
    }
    let ids: Vec<&str> = g.nodes().map(|n| n.id.as_str()).collect();
    ids.into_iter().any(|n| color[n] == 0 && visit(n, &adj, &mut color))
}

/// Random workflow over `{x: int}`. With `back_edges`, about half the graphs
/// also get ordering edges pointing backwards.
pub fn random_graph<R: Rng>(rng: &mut R, max_nodes: usize, back_edges: bool) -> RandomGraph {
    let n = rng.gen_range(2..=max_nodes);
    let id = |i: usize| format!("n{i:02}");
    let mut kinds: Vec<Kind> = (0..n)
        .map(|_| match rng.gen_range(0..20) {
            0..=9 => Kind::Tool,
            10..=12 => Kind::Agent,
            13..=15 => Kind::Branch,
            16 | 17 => Kind::FanOut,
            18 => Kind::Aggregate(AggregatePolicy::FirstAvailable),
            _ => Kind::Aggregate(AggregatePolicy::RequireAll),
        })
        .collect();
    // (src, dst, carries x)
    let mut edges: Vec<(usize, usize, bool)> = Vec::new();
    for j in 0..n {
        let feeders: Vec<usize> = (0..j).filter(|&i| !matches!(kinds[i], Kind::Aggregate(_))).collect();
        if let Kind::Aggregate(_) = kinds[j] {
            if feeders.is_empty() {
                kinds[j] = Kind::Tool;
            } else {
                let mut picked = BTreeSet::new();
                for _ in 0..rng.gen_range(1..=feeders.len().min(3)) {
                    picked.insert(feeders[rng.gen_range(0..feeders.len())]);
                }
                edges.extend(picked.into_iter().map(|i| (i, j, true)));
                continue;
            }
        }
        let mut used = BTreeSet::new();
        if !feeders.is_empty() && rng.gen_bool(0.8) {
            let i = feeders[rng.gen_range(0..feeders.len())];
            used.insert(i);
            edges.push((i, j, true));
        }
        if j > 0 && rng.gen_bool(0.25) {
            let i = rng.gen_range(0..j);
            if used.insert(i) {
                edges.push((i, j, false));
            }
        }
    }
    if back_edges && rng.gen_bool(0.5) {
        for _ in 0..rng.gen_range(1..=2) {
            let a = rng.gen_range(1..n);
            let b = rng.gen_range(0..a);
            // aggregates need a data edge; a bare ordering edge is a schema error
            if matches!(kinds[b], Kind::Aggregate(_)) {
                continue;
            }
            if !edges.iter().any(|&(s, d, _)| s == a && d == b) {
                edges.push((a, b, false));
            }
        }
    }
    // Control nodes with nothing downstream become plain tools.
    for (i, k) in kinds.iter_mut().enumerate() {
        if matches!(k, Kind::Branch | Kind::FanOut) && !edges.iter().any(|&(s, _, _)| s == i) {
            *k = Kind::Tool;
        }
    }

    let mut g = WorkflowGraph::new("random", "1").with_state_schema(x());
    for (i, k) in kinds.iter().enumerate() {
        let kind = match k {
            Kind::Tool => NodeKind::Tool(ToolSpec::new("noop", x(), x())),
            Kind::Agent => NodeKind::Agent(AgentSpec::new("step", x(), x())),
            Kind::FanOut => NodeSpec::fan_out("_", x()).kind,
            Kind::Aggregate(p) => NodeSpec::aggregate("_", *p).kind,
            Kind::Branch => {
                let outs: Vec<String> = edges.iter().filter(|e| e.0 == i).map(|e| format!("{}->{}", id(i), id(e.1))).collect();
                let mut guards: Vec<Guard> =
                    outs.iter().map(|e| Guard::when(e.clone(), format!("x > {}", rng.gen_range(-3..=3)))).collect();
                if rng.gen_bool(0.7) {
                    let last = guards.pop().unwrap();
                    guards.push(Guard::default_to(last.edge));
                }
                NodeSpec::branch("_", x(), guards).kind
            }
        };
        g.add_node(NodeSpec::new(id(i), kind)).unwrap();
    }
    for (s, d, data) in edges {
        let mut e = EdgeSpec::new(format!("{}->{}", id(s), id(d)), id(s), id(d));
        if data {
            e = e.map("x", "x");
        }
        g.add_edge(e).unwrap();
    }
    let cyclic = has_cycle(&g);
    RandomGraph { graph: g, cyclic }
}

/// Twenty nodes: planner agent, a branch on its output, a fan-out of eight
/// agents joined and summarised, a two-tool fallback path merged with
/// first-available, a final agent, and three independent tools.
pub fn mixed20() -> WorkflowGraph {
    let scored = Schema::of([("text", FieldType::String), ("score", FieldType::Int)]);
    let mut b = WorkflowBuilder::new("mixed", "1")
        .state("x", FieldType::Int)
        .state("text", FieldType::String)
        .agent("plan", AgentSpec::new("Plan the work.", text(), scored))
        .branch("route", text(), vec![Guard::when("route->deep", "plan.score >= 0"), Guard::default_to("route->shallow")])
        .pass("plan", "route", ["text"])
        .fan_out("deep", text())
        .pass("route", "deep", ["text"])
        .aggregate("join", AggregatePolicy::RequireAll)
        .tool("shallow", ToolSpec::new("upper", text(), text()))
        .tool("shallow2", ToolSpec::new("upper", text(), text()))
        .pass("route", "shallow", ["text"])
        .pass("shallow", "shallow2", ["text"]);
    let mut summary_in = Schema::empty();
    let mut pairs = Vec::new();
    for i in 0..8 {
        let w = format!("d{i}");
        summary_in.insert(w.clone(), FieldType::Record(text())).unwrap();
        pairs.push((format!("{w}->join"), w.clone()));
        b = b.agent(&w, AgentSpec::new("Work on a part.", text(), text())).pass("deep", &w, ["text"]).pass(&w, "join", ["text"]);
    }
    b = b
        .agent("summary", AgentSpec::new("Summarise.", summary_in, text()))
        .map("join", "summary", pairs)
        .aggregate("merge", AggregatePolicy::FirstAvailable)
        .pass("summary", "merge", ["text"])
        .pass("shallow2", "merge", ["text"])
        .agent("final", AgentSpec::new("Answer.", Schema::of([("value", FieldType::Record(text()))]), text()))
        .pass("merge", "final", ["value"]);
    for i in 0..3 {
        b = b.tool(format!("c{i}"), ToolSpec::new("noop", x(), x()));
    }
    let g = b.build().unwrap();
    assert_eq!(g.node_count(), 20);
    g
}

pub fn mixed20_state() -> BTreeMap<String, Value> {
    BTreeMap::from([("x".to_string(), Value::Int(7)), ("text".to_string(), Value::from("draft"))])
}

/// Ten nodes mixing tools, agents, a branch, a fan-out and a join.
pub fn ten_node() -> WorkflowGraph {
    let g = WorkflowBuilder::new("ten", "1")
        .state("x", FieldType::Int)
        .tool("a", ToolSpec::new("noop", x(), x()))
        .agent("b", AgentSpec::new("Refine x.", x(), x()))
        .pass("a", "b", ["x"])
        .branch("r", x(), vec![Guard::when("r->hi", "b.x > 0"), Guard::default_to("r->lo")])
        .pass("b", "r", ["x"])
        .tool("hi", ToolSpec::new("noop", x(), x()))
        .tool("lo", ToolSpec::new("noop", x(), x()))
        .pass("r", "hi", ["x"])
        .pass("r", "lo", ["x"])
        .agent("z", AgentSpec::new("Finish.", x(), x()))
        .pass("hi", "z", ["x"])
        .fan_out("f", x())
        .pass("a", "f", ["x"])
        .tool("w1", ToolSpec::new("noop", x(), x()))
        .agent("w2", AgentSpec::new("Side work.", x(), x()))
        .pass("f", "w1", ["x"])
        .pass("f", "w2", ["x"])
        .aggregate("j", AggregatePolicy::RequireAll)
        .pass("w1", "j", ["x"])
        .pass("w2", "j", ["x"])
        .build()
        .unwrap();
    assert_eq!(g.node_count(), 10);
    g
}

/// `width` parallel 100 ms sleep tools between a fan-out and a join.
pub fn sleep_fanout(width: usize) -> WorkflowGraph {
    let mut b = WorkflowBuilder::new("naps", "1")
        .state("x", FieldType::Int)
        .fan_out("split", x())
        .aggregate("join", AggregatePolicy::RequireAll);
    for i in 0..width {
        let id = format!("s{i}");
        b = b.tool(&id, ToolSpec::new("nap", x(), x())).pass("split", &id, ["x"]).pass(&id, "join", ["x"]);
    }
    b.build().unwrap()
}

/// `n` sequential tools calling `tool`.
pub fn chain(n: usize, tool: &str) -> WorkflowGraph {
    let mut b = WorkflowBuilder::new("chain", "1").state("x", FieldType::Int);
    for i in 0..n {
        b = b.tool(format!("t{i:04}"), ToolSpec::new(tool, x(), x()));
        if i > 0 {
            b = b.pass(&format!("t{:04}", i - 1), &format!("t{i:04}"), ["x"]);
        }
    }
    b.build().unwrap()
}
