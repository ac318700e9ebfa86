//! Graphviz export. One line per node and per edge; branch edges carry the
//! guard that selects them.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::graph::{NodeKind, WorkflowGraph};

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

fn shape(kind: &NodeKind) -> &'static str {
    match kind {
        NodeKind::Agent(_) => "box",
        NodeKind::Tool(_) => "component",
        NodeKind::Branch(_) => "diamond",
        NodeKind::FanOut(_) => "triangle",
        NodeKind::Aggregate(_) => "invtriangle",
        NodeKind::Composite(_) => "box3d",
    }
}

pub fn to_dot(graph: &WorkflowGraph) -> String {
    // Guard text per branch out-edge.
    let mut guards: BTreeMap<&str, String> = BTreeMap::new();
    for n in graph.nodes() {
        if let NodeKind::Branch(b) = &n.kind {
            for g in &b.guards {
                guards.insert(&g.edge, g.when.clone().unwrap_or_else(|| "default".into()));
            }
        }
    }

    let mut out = String::new();
    writeln!(out, "digraph {} {{", quote(&graph.name)).unwrap();
    writeln!(out, "  rankdir=LR;").unwrap();
    for n in graph.nodes() {
        let label = format!("{}\n{}", n.id, n.kind.name());
        writeln!(out, "  {} [label={}, shape={}];", quote(&n.id), quote(&label), shape(&n.kind)).unwrap();
    }
    for e in graph.edges() {
        let label = match guards.get(e.id.as_str()) {
            Some(g) => g.clone(),
            None => e.field_map.iter().map(|(a, b)| if a == b { a.clone() } else { format!("{a}:{b}") }).collect::<Vec<_>>().join(", "),
        };
        write!(out, "  {} -> {}", quote(&e.src), quote(&e.dst)).unwrap();
        if label.is_empty() {
            writeln!(out, ";").unwrap();
        } else {
            writeln!(out, " [label={}];", quote(&label)).unwrap();
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::WorkflowBuilder;
    use crate::graph::{Guard, ToolSpec};
    use crate::value::{FieldType, Schema};

    #[test]
    fn chain_has_one_line_per_element() {
        let s = Schema::of([("x", FieldType::Int)]);
        let g = WorkflowBuilder::new("c", "1")
            .tool("a", ToolSpec::new("noop", s.clone(), s.clone()))
            .tool("b", ToolSpec::new("noop", s.clone(), s.clone()))
            .tool("c", ToolSpec::new("noop", s.clone(), s))
            .pass("a", "b", ["x"])
            .pass("b", "c", ["x"])
            .build()
            .unwrap();
        let d = to_dot(&g);
        assert_eq!(d.lines().filter(|l| l.contains("[label=") && !l.contains("->")).count(), 3);
        assert_eq!(d.lines().filter(|l| l.contains("->")).count(), 2);
    }

    #[test]
    fn guards_label_branch_edges() {
        let s = Schema::of([("x", FieldType::Int)]);
        let g = WorkflowBuilder::new("b", "1")
            .branch("r", s.clone(), vec![Guard::when("r->hi", "x > \"1\""), Guard::default_to("r->lo")])
            .tool("hi", ToolSpec::new("noop", s.clone(), s.clone()))
            .tool("lo", ToolSpec::new("noop", s.clone(), s))
            .pass("r", "hi", ["x"])
            .pass("r", "lo", ["x"])
            .build()
            .unwrap();
        let d = to_dot(&g);
        assert!(d.contains(r#""r" -> "hi" [label="x > \"1\""];"#), "{d}");
        assert!(d.contains(r#""r" -> "lo" [label="default"];"#), "{d}");
    }
}
