use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::recovery::RecoveryPolicy;
use crate::value::{canonical_json, digest_hex};

pub const DEFAULT_WATCHDOG_MS: u64 = 120_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionConfig {
    pub worker_limit: usize,
    /// Retry policy for agent nodes. Tool nodes use their own spec's policy.
    pub recovery: RecoveryPolicy,
    pub watchdog_ms: u64,
    /// Where to write a checkpoint when the run stops, for any reason.
    pub checkpoint_path: Option<PathBuf>,
    pub seed: u64,
    pub collect_metrics: bool,
    /// Randomizes agent retry delays by up to +10%. Not part of trace digests.
    pub jitter: bool,
    /// Stops the run after this many node commits, writing a checkpoint.
    pub interrupt_after_commits: Option<u64>,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig {
            worker_limit: 4,
            recovery: RecoveryPolicy::FailFast,
            watchdog_ms: DEFAULT_WATCHDOG_MS,
            checkpoint_path: None,
            seed: 0,
            collect_metrics: true,
            jitter: false,
            interrupt_after_commits: None,
        }
    }
}

impl ExecutionConfig {
    pub fn with_workers(mut self, n: usize) -> Self {
        self.worker_limit = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_recovery(mut self, policy: RecoveryPolicy) -> Self {
        self.recovery = policy;
        self
    }

    pub fn with_watchdog_ms(mut self, ms: u64) -> Self {
        self.watchdog_ms = ms;
        self
    }

    pub fn with_checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    pub fn with_interrupt_after(mut self, commits: u64) -> Self {
        self.interrupt_after_commits = Some(commits);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.worker_limit == 0 {
            return Err("worker_limit must be at least 1".into());
        }
        if self.watchdog_ms == 0 {
            return Err("watchdog_ms must be positive".into());
        }
        self.recovery.validate().map_err(|e| e.to_string())
    }

    /// Digest of the settings that change what a run computes. Worker count,
    /// watchdog and file paths are excluded.
    pub fn digest(&self) -> String {
        let json = serde_json::json!({
            "seed": self.seed,
            "recovery": serde_json::to_value(&self.recovery).expect("policy serializes"),
        });
        digest_hex(canonical_json(&json).as_bytes())
    }
}
