//! Recovery policies: fail-fast or bounded retry with exponential backoff.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecoveryPolicy {
    #[default]
    FailFast,
    Retry {
        max_attempts: u32,
        base_delay_ms: u64,
        factor: f64,
        cap_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("max_attempts must be at least 1")]
    ZeroAttempts,
    #[error("backoff factor must be finite and greater than 1, got {0}")]
    BadFactor(String),
}

/// What to do after a failed attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecoveryAction {
    RetryAfter(Duration),
    Fail,
}

/// Failures that know whether another attempt could help.
pub trait Recoverable {
    fn is_retryable(&self) -> bool;
}

impl RecoveryPolicy {
    pub fn retry(max_attempts: u32, base_delay_ms: u64, factor: f64, cap_ms: u64) -> Self {
        RecoveryPolicy::Retry { max_attempts, base_delay_ms, factor, cap_ms }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        match self {
            RecoveryPolicy::FailFast => Ok(()),
            RecoveryPolicy::Retry { max_attempts, factor, .. } => {
                if *max_attempts == 0 {
                    return Err(PolicyError::ZeroAttempts);
                }
                if !factor.is_finite() || *factor <= 1.0 {
                    return Err(PolicyError::BadFactor(factor.to_string()));
                }
                Ok(())
            }
        }
    }

    pub fn max_attempts(&self) -> u32 {
        match self {
            RecoveryPolicy::FailFast => 1,
            RecoveryPolicy::Retry { max_attempts, .. } => *max_attempts,
        }
    }

    /// Backoff before the retry that follows failed attempt `attempt` (0-based):
    /// `min(base * factor^attempt, cap)` milliseconds.
    pub fn delay_ms(&self, attempt: u32) -> f64 {
        match self {
            RecoveryPolicy::FailFast => 0.0,
            RecoveryPolicy::Retry { base_delay_ms, factor, cap_ms, .. } => {
                let raw = *base_delay_ms as f64 * factor.powi(attempt as i32);
                raw.min(*cap_ms as f64)
            }
        }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        Duration::from_secs_f64(self.delay_ms(attempt) / 1000.0)
    }
}

/// Decides between retrying and failing after attempt `attempt` (0-based) failed.
pub fn apply_recovery<E: Recoverable + ?Sized>(
    failure: &E,
    policy: &RecoveryPolicy,
    attempt: u32,
) -> RecoveryAction {
    if !failure.is_retryable() {
        return RecoveryAction::Fail;
    }
    match policy {
        RecoveryPolicy::FailFast => RecoveryAction::Fail,
        RecoveryPolicy::Retry { max_attempts, .. } => {
            if attempt + 1 < *max_attempts {
                RecoveryAction::RetryAfter(policy.delay(attempt))
            } else {
                RecoveryAction::Fail
            }
        }
    }
}
