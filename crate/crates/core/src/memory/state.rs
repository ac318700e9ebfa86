//! Tier 2: versioned, provenance-tracked workflow state.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{FieldType, Schema, Value};

/// One committed write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateEntry {
    pub key: String,
    /// Per-key version, gapless from 1.
    pub version: u64,
    pub value: Value,
    pub writer: String,
    /// Global commit counter shared by every key written in the same commit.
    pub logical_time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("schema violation on `{key}`: {detail}")]
    SchemaViolation { key: String, detail: String },
    #[error("key `{0}` is neither a known state key nor a declared node output")]
    UnknownKey(String),
    #[error("corrupt state history: {0}")]
    CorruptHistory(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateReadError {
    #[error("read of undeclared state key `{0}`")]
    ScopeViolation(String),
    #[error("state key `{0}` has never been written")]
    MissingKey(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    All,
    Keys(BTreeSet<String>),
}

impl Scope {
    pub fn keys<I, S>(keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Scope::Keys(keys.into_iter().map(Into::into).collect())
    }

    pub fn allows(&self, key: &str) -> bool {
        match self {
            Scope::All => true,
            Scope::Keys(k) => k.contains(key),
        }
    }
}

/// Immutable view of the store at one logical time, restricted to a scope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSnapshot {
    values: BTreeMap<String, Value>,
    scope: Scope,
    logical_time: u64,
}

impl StateSnapshot {
    /// A free-standing snapshot, mostly for evaluating predicates in isolation.
    pub fn from_values(values: BTreeMap<String, Value>, scope: Scope) -> Self {
        let values = values.into_iter().filter(|(k, _)| scope.allows(k)).collect();
        StateSnapshot { values, scope, logical_time: 0 }
    }

    pub fn read(&self, key: &str) -> Result<&Value, StateReadError> {
        if !self.scope.allows(key) {
            return Err(StateReadError::ScopeViolation(key.to_string()));
        }
        self.values.get(key).ok_or_else(|| StateReadError::MissingKey(key.to_string()))
    }

    pub fn logical_time(&self) -> u64 {
        self.logical_time
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    /// Values visible through this snapshot.
    pub fn values(&self) -> &BTreeMap<String, Value> {
        &self.values
    }

    pub fn to_record(&self) -> Value {
        Value::Record(self.values.clone())
    }
}

#[derive(Debug, Default)]
struct Inner {
    schema: Schema,
    declared: Schema,
    current: BTreeMap<String, StateEntry>,
    history: Vec<StateEntry>,
    by_key: BTreeMap<String, Vec<usize>>,
    clock: u64,
}

/// The canonical workflow state: a typed key-value store with atomic commits.
///
/// All mutation goes through [`StateStore::commit`], which applies one commit
/// at a time under a write lock.
#[derive(Debug, Default)]
pub struct StateStore {
    inner: RwLock<Inner>,
}

impl StateStore {
    /// `schema` holds the keys known up front; `declared_outputs` lists keys
    /// that may be added to the schema by their first commit.
    pub fn new(schema: Schema, declared_outputs: Schema) -> Self {
        StateStore {
            inner: RwLock::new(Inner { schema, declared: declared_outputs, ..Inner::default() }),
        }
    }

    /// Rebuilds a store by replaying `history` from scratch.
    pub fn replay(schema: Schema, declared_outputs: Schema, history: Vec<StateEntry>) -> Result<Self, StateError> {
        let store = StateStore::new(schema, declared_outputs);
        {
            let mut inner = store.inner.write().expect("state lock poisoned");
            let mut idx = 0;
            while idx < history.len() {
                let t = history[idx].logical_time;
                if t <= inner.clock {
                    return Err(StateError::CorruptHistory(format!("logical time {t} is not increasing")));
                }
                let mut updates = BTreeMap::new();
                let mut writer = history[idx].writer.clone();
                while idx < history.len() && history[idx].logical_time == t {
                    let e = &history[idx];
                    writer = e.writer.clone();
                    let expected = inner.current.get(&e.key).map_or(1, |c| c.version + 1);
                    if e.version != expected {
                        return Err(StateError::CorruptHistory(format!(
                            "`{}` version {} where {} was expected",
                            e.key, e.version, expected
                        )));
                    }
                    updates.insert(e.key.clone(), e.value.clone());
                    idx += 1;
                }
                inner.clock = t - 1;
                apply(&mut inner, updates, &writer)?;
            }
        }
        Ok(store)
    }

    pub fn schema(&self) -> Schema {
        self.read_inner().schema.clone()
    }

    pub fn declared_outputs(&self) -> Schema {
        self.read_inner().declared.clone()
    }

    pub fn logical_time(&self) -> u64 {
        self.read_inner().clock
    }

    fn read_inner(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().expect("state lock poisoned")
    }

    /// Atomically commits every update or none of them.
    pub fn commit(&self, updates: BTreeMap<String, Value>, writer: &str) -> Result<u64, StateError> {
        let mut inner = self.inner.write().expect("state lock poisoned");
        apply(&mut inner, updates, writer)
    }

    pub fn snapshot(&self, scope: Scope) -> StateSnapshot {
        let inner = self.read_inner();
        let values = inner
            .current
            .iter()
            .filter(|(k, _)| scope.allows(k))
            .map(|(k, e)| (k.clone(), e.value.clone()))
            .collect();
        StateSnapshot { values, scope, logical_time: inner.clock }
    }

    /// Snapshot of the store as it was right after the commit at `logical_time`.
    pub fn snapshot_at(&self, scope: Scope, logical_time: u64) -> StateSnapshot {
        let inner = self.read_inner();
        let mut values = BTreeMap::new();
        for (key, positions) in &inner.by_key {
            if !scope.allows(key) {
                continue;
            }
            let n = positions.partition_point(|&i| inner.history[i].logical_time <= logical_time);
            if n > 0 {
                values.insert(key.clone(), inner.history[positions[n - 1]].value.clone());
            }
        }
        StateSnapshot { values, scope, logical_time: logical_time.min(inner.clock) }
    }

    pub fn provenance(&self, key: &str) -> Vec<StateEntry> {
        let inner = self.read_inner();
        inner
            .by_key
            .get(key)
            .map(|ps| ps.iter().map(|&i| inner.history[i].clone()).collect())
            .unwrap_or_default()
    }

    pub fn history(&self) -> Vec<StateEntry> {
        self.read_inner().history.clone()
    }

    pub fn current(&self) -> BTreeMap<String, StateEntry> {
        self.read_inner().current.clone()
    }

    pub fn current_values(&self) -> BTreeMap<String, Value> {
        self.read_inner().current.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect()
    }

    /// Type of a key, including declared-but-unwritten outputs.
    pub fn key_type(&self, key: &str) -> Option<FieldType> {
        let inner = self.read_inner();
        inner.schema.get(key).or_else(|| inner.declared.get(key)).cloned()
    }
}

fn apply(inner: &mut Inner, updates: BTreeMap<String, Value>, writer: &str) -> Result<u64, StateError> {
    // an empty commit changes nothing and does not advance the clock
    if updates.is_empty() {
        return Ok(inner.clock);
    }
    let mut extensions = Vec::new();
    for (key, value) in &updates {
        let ty = match inner.schema.get(key) {
            Some(ty) => ty,
            None => match inner.declared.get(key) {
                Some(ty) => {
                    extensions.push((key.clone(), ty.clone()));
                    ty
                }
                None => return Err(StateError::UnknownKey(key.clone())),
            },
        };
        value
            .conforms_to(ty)
            .map_err(|e| StateError::SchemaViolation { key: key.clone(), detail: e.to_string() })?;
    }
    for (key, ty) in extensions {
        inner.schema.insert(key, ty).expect("extension key is new");
    }
    inner.clock += 1;
    let t = inner.clock;
    for (key, value) in updates {
        let version = inner.current.get(&key).map_or(1, |e| e.version + 1);
        let entry = StateEntry { key: key.clone(), version, value, writer: writer.to_string(), logical_time: t };
        inner.by_key.entry(key.clone()).or_default().push(inner.history.len());
        inner.history.push(entry.clone());
        inner.current.insert(key, entry);
    }
    Ok(t)
}
