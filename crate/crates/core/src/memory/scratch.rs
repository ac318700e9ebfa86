//! Tier 1: per-attempt scratch space.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("scratch space of `{node}` attempt {attempt} is closed")]
pub struct ScratchClosed {
    pub node: String,
    pub attempt: u32,
}

/// Temporary storage owned by exactly one node attempt.
///
/// Clones share the same storage so a node body can hand the handle to helper
/// threads; once [`ScratchSpace::close`] runs, every clone fails.
#[derive(Debug, Clone)]
pub struct ScratchSpace {
    node: Arc<str>,
    attempt: u32,
    entries: Arc<Mutex<Option<HashMap<String, Value>>>>,
}

impl ScratchSpace {
    pub fn open(node: &str, attempt: u32) -> Self {
        ScratchSpace {
            node: Arc::from(node),
            attempt,
            entries: Arc::new(Mutex::new(Some(HashMap::new()))),
        }
    }

    pub fn owner(&self) -> (&str, u32) {
        (&self.node, self.attempt)
    }

    fn closed(&self) -> ScratchClosed {
        ScratchClosed { node: self.node.to_string(), attempt: self.attempt }
    }

    pub fn put(&self, key: impl Into<String>, value: Value) -> Result<(), ScratchClosed> {
        let mut guard = self.entries.lock().expect("scratch lock poisoned");
        match guard.as_mut() {
            Some(map) => {
                map.insert(key.into(), value);
                Ok(())
            }
            None => Err(self.closed()),
        }
    }

    pub fn get(&self, key: &str) -> Result<Option<Value>, ScratchClosed> {
        let guard = self.entries.lock().expect("scratch lock poisoned");
        match guard.as_ref() {
            Some(map) => Ok(map.get(key).cloned()),
            None => Err(self.closed()),
        }
    }

    pub fn len(&self) -> Result<usize, ScratchClosed> {
        let guard = self.entries.lock().expect("scratch lock poisoned");
        guard.as_ref().map(HashMap::len).ok_or_else(|| self.closed())
    }

    pub fn is_empty(&self) -> Result<bool, ScratchClosed> {
        self.len().map(|n| n == 0)
    }

    /// Discards all entries. A second close is an error.
    pub fn close(&self) -> Result<(), ScratchClosed> {
        let mut guard = self.entries.lock().expect("scratch lock poisoned");
        match guard.take() {
            Some(_) => Ok(()),
            None => Err(self.closed()),
        }
    }

    pub fn is_closed(&self) -> bool {
        self.entries.lock().expect("scratch lock poisoned").is_none()
    }
}
