use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use super::WorkflowGraph;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cycle detected through {nodes:?}")]
pub struct CycleError {
    /// Nodes along one cycle, starting from its smallest id.
    pub nodes: Vec<String>,
}

/// Adjacency lists by node id, edges listed in edge-id order.
#[derive(Debug, Clone, Default)]
pub struct GraphIndex {
    pub in_edges: BTreeMap<String, Vec<String>>,
    pub out_edges: BTreeMap<String, Vec<String>>,
}

impl GraphIndex {
    pub fn new(graph: &WorkflowGraph) -> Self {
        let mut idx = GraphIndex::default();
        for n in graph.nodes() {
            idx.in_edges.insert(n.id.clone(), Vec::new());
            idx.out_edges.insert(n.id.clone(), Vec::new());
        }
        for e in graph.edges() {
            idx.out_edges.entry(e.src.clone()).or_default().push(e.id.clone());
            idx.in_edges.entry(e.dst.clone()).or_default().push(e.id.clone());
        }
        idx
    }

    pub fn ins(&self, node: &str) -> &[String] {
        self.in_edges.get(node).map_or(&[], Vec::as_slice)
    }

    pub fn outs(&self, node: &str) -> &[String] {
        self.out_edges.get(node).map_or(&[], Vec::as_slice)
    }
}

/// Nodes with their layer (longest distance from an entry node), sorted by
/// `(layer, id)`.
pub fn topological_order(graph: &WorkflowGraph) -> Result<Vec<(String, usize)>, CycleError> {
    let mut indegree: BTreeMap<&str, usize> = graph.nodes().map(|n| (n.id.as_str(), 0)).collect();
    let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in graph.edges() {
        if let Some(d) = indegree.get_mut(e.dst.as_str()) {
            *d += 1;
        }
        succ.entry(e.src.as_str()).or_default().push(e.dst.as_str());
    }
    let mut layer: BTreeMap<&str, usize> = BTreeMap::new();
    let mut queue: VecDeque<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    for n in &queue {
        layer.insert(n, 0);
    }
    let mut seen = 0;
    while let Some(n) = queue.pop_front() {
        seen += 1;
        let l = layer[n];
        for &m in succ.get(n).map_or(&[][..], Vec::as_slice) {
            let Some(d) = indegree.get_mut(m) else { continue };
            let lm = layer.entry(m).or_insert(0);
            *lm = (*lm).max(l + 1);
            *d -= 1;
            if *d == 0 {
                queue.push_back(m);
            }
        }
    }
    if seen < indegree.len() {
        return Err(find_cycle(graph).expect("Kahn's algorithm stalled, so a cycle exists"));
    }
    let mut out: Vec<(String, usize)> = layer.into_iter().map(|(n, l)| (n.to_string(), l)).collect();
    out.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
    Ok(out)
}

/// Returns one directed cycle if the graph has any.
pub fn find_cycle(graph: &WorkflowGraph) -> Option<CycleError> {
    let mut succ: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for e in graph.edges() {
        succ.entry(e.src.as_str()).or_default().insert(e.dst.as_str());
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color: BTreeMap<&str, u8> = graph.nodes().map(|n| (n.id.as_str(), 0)).collect();
    let starts: Vec<&str> = color.keys().copied().collect();
    for start in starts {
        if color[start] != 0 {
            continue;
        }
        let mut stack: Vec<(&str, Vec<&str>)> = vec![(start, succ.get(start).map_or(vec![], |s| s.iter().copied().collect()))];
        color.insert(start, 1);
        while let Some((node, pending)) = stack.last_mut() {
            let node = *node;
            match pending.pop() {
                None => {
                    color.insert(node, 2);
                    stack.pop();
                }
                Some(next) => match color.get(next).copied() {
                    Some(0) => {
                        color.insert(next, 1);
                        let mut nexts: Vec<&str> = succ.get(next).map_or(vec![], |s| s.iter().copied().collect());
                        nexts.reverse();
                        stack.push((next, nexts));
                    }
                    Some(1) => {
                        let pos = stack.iter().position(|(n, _)| *n == next).expect("on-stack node");
                        let mut nodes: Vec<String> = stack[pos..].iter().map(|(n, _)| n.to_string()).collect();
                        let min = nodes.iter().enumerate().min_by(|a, b| a.1.cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
                        nodes.rotate_left(min);
                        return Some(CycleError { nodes });
                    }
                    _ => {}
                },
            }
        }
    }
    None
}
