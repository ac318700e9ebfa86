//! Per-run and per-batch measurements.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FailureClass;

/// Operations per minute for a mean per-operation time in milliseconds.
pub fn throughput_opm(mean_ms: f64) -> f64 {
    60_000.0 / mean_ms
}

/// Peak resident set size of this process in kB, where the OS reports it.
pub fn peak_memory_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmHWM:"))
        .and_then(|l| l.split_whitespace().nth(1))
        .and_then(|n| n.parse().ok())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    /// Engine time attributable to this node: input assembly, snapshot,
    /// dispatch bookkeeping, validation and commit.
    pub framework_ms: f64,
    /// Time inside provider calls and tool bodies.
    pub external_ms: f64,
    pub backoff_ms: f64,
    pub attempts: u32,
    pub model_errors: u32,
    pub tool_invocations: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Validation, planning and initial commit.
    pub setup_ms: f64,
    /// `setup_ms` plus every node's `framework_ms`.
    pub processing_ms: f64,
    pub wall_ms: f64,
    pub external_ms: f64,
    pub nodes: BTreeMap<String, NodeMetrics>,
    pub model_errors: u32,
    pub tool_invocations: u32,
    pub failure: Option<FailureClass>,
    pub peak_memory_kb: Option<u64>,
}

impl RunMetrics {
    pub fn mean_node_framework_ms(&self) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        self.nodes.values().map(|n| n.framework_ms).sum::<f64>() / self.nodes.len() as f64
    }
}

/// Aggregate over a batch of runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub runs: u32,
    pub completed: u32,
    pub failed: u32,
    pub framework_failures: u32,
    pub model_failures: u32,
    pub external_failures: u32,
    pub mean_processing_ms: f64,
    pub throughput_opm: f64,
    /// Framework-attributed failures per run.
    pub hallucination_rate: f64,
    /// Share of failed runs whose failure is attributed to the framework.
    pub framework_share_of_failures: f64,
    pub model_errors: u64,
    pub peak_memory_kb: Option<u64>,
}

impl BatchMetrics {
    pub fn from_runs<'a, I: IntoIterator<Item = &'a RunMetrics>>(runs: I) -> Self {
        let mut b = BatchMetrics::default();
        let mut total_ms = 0.0;
        for r in runs {
            b.runs += 1;
            total_ms += r.processing_ms;
            b.model_errors += u64::from(r.model_errors);
            match r.failure {
                None => b.completed += 1,
                Some(class) => {
                    b.failed += 1;
                    match class {
                        FailureClass::Framework => b.framework_failures += 1,
                        FailureClass::Model => b.model_failures += 1,
                        FailureClass::External => b.external_failures += 1,
                    }
                }
            }
            b.peak_memory_kb = match (b.peak_memory_kb, r.peak_memory_kb) {
                (Some(a), Some(c)) => Some(a.max(c)),
                (a, c) => a.or(c),
            };
        }
        if b.runs > 0 {
            b.mean_processing_ms = total_ms / f64::from(b.runs);
            b.throughput_opm = if b.mean_processing_ms > 0.0 { throughput_opm(b.mean_processing_ms) } else { 0.0 };
            b.hallucination_rate = f64::from(b.framework_failures) / f64::from(b.runs);
        }
        if b.failed > 0 {
            b.framework_share_of_failures = f64::from(b.framework_failures) / f64::from(b.failed);
        }
        b
    }
}
