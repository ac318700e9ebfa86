//! Tier 3: managed external connectors with pooling, retry and result caching.
//!
//! Connector responses go back to the caller only. Nothing here can reach an
//! agent's context; a node has to pipe a response into its outputs for any
//! downstream node to see it.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::recovery::{apply_recovery, Recoverable, RecoveryAction, RecoveryPolicy};
use crate::value::{FieldType, Schema, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub enabled: bool,
    pub max_entries: usize,
    /// `None` keeps entries for the lifetime of the hub.
    pub ttl_ms: Option<u64>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig { enabled: true, max_entries: 1024, ttl_ms: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectorSpec {
    pub id: String,
    pub kind: String,
    pub pool_size: usize,
    #[serde(default)]
    pub retry: RecoveryPolicy,
    #[serde(default)]
    pub cache: CacheConfig,
    #[serde(default = "default_pool_timeout")]
    pub pool_timeout_ms: u64,
}

fn default_pool_timeout() -> u64 {
    30_000
}

impl ConnectorSpec {
    pub fn new(id: impl Into<String>, kind: impl Into<String>) -> Self {
        ConnectorSpec {
            id: id.into(),
            kind: kind.into(),
            pool_size: 4,
            retry: RecoveryPolicy::FailFast,
            cache: CacheConfig::default(),
            pool_timeout_ms: default_pool_timeout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConnectorError {
    #[error("connector `{0}` is not registered")]
    Unknown(String),
    #[error("connector `{0}` is already registered")]
    Duplicate(String),
    #[error("invalid connector spec `{id}`: {detail}")]
    InvalidSpec { id: String, detail: String },
    #[error("connector `{id}` failed after {attempts} attempt(s): {detail}")]
    Failed { id: String, attempts: u32, detail: String },
    #[error("timed out waiting for a pooled handle on `{0}`")]
    PoolTimeout(String),
}

/// A failed backend call.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct BackendError(pub String);

impl Recoverable for BackendError {
    fn is_retryable(&self) -> bool {
        true
    }
}

/// The system a connector talks to.
pub trait ConnectorBackend: Send + Sync {
    fn call(&self, request: &Value) -> Result<Value, BackendError>;
}

impl<F> ConnectorBackend for F
where
    F: Fn(&Value) -> Result<Value, BackendError> + Send + Sync,
{
    fn call(&self, request: &Value) -> Result<Value, BackendError> {
        self(request)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConnectorStats {
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub peak_leases: usize,
}

struct Pool {
    size: usize,
    leased: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

struct Lease<'a>(&'a Pool);

impl Pool {
    fn lease(&self, timeout: Duration) -> Option<Lease<'_>> {
        let deadline = Instant::now() + timeout;
        let mut leased = self.leased.lock().expect("pool lock poisoned");
        while *leased >= self.size {
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            leased = self.freed.wait_timeout(leased, deadline - now).expect("pool lock poisoned").0;
        }
        *leased += 1;
        self.peak.fetch_max(*leased, Ordering::SeqCst);
        Some(Lease(self))
    }
}

impl Drop for Lease<'_> {
    fn drop(&mut self) {
        let mut leased = self.0.leased.lock().expect("pool lock poisoned");
        *leased -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Default)]
struct Cache {
    entries: HashMap<Vec<u8>, (Value, Instant)>,
    order: VecDeque<Vec<u8>>,
}

struct Connector {
    spec: ConnectorSpec,
    backend: Arc<dyn ConnectorBackend>,
    pool: Pool,
    cache: Mutex<Cache>,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Connector {
    fn cached(&self, key: &[u8]) -> Option<Value> {
        if !self.spec.cache.enabled {
            return None;
        }
        let mut cache = self.cache.lock().expect("cache lock poisoned");
        let (value, stored) = cache.entries.get(key)?.clone();
        if let Some(ttl) = self.spec.cache.ttl_ms {
            if stored.elapsed() > Duration::from_millis(ttl) {
                cache.entries.remove(key);
                cache.order.retain(|k| k != key);
                return None;
            }
        }
        Some(value)
    }

    fn store(&self, key: Vec<u8>, value: Value) {
        if !self.spec.cache.enabled || self.spec.cache.max_entries == 0 {
            return;
        }
        let mut cache = self.cache.lock().expect("cache lock poisoned");
        if cache.entries.insert(key.clone(), (value, Instant::now())).is_none() {
            cache.order.push_back(key);
        }
        while cache.entries.len() > self.spec.cache.max_entries {
            match cache.order.pop_front() {
                Some(oldest) => {
                    cache.entries.remove(&oldest);
                }
                None => break,
            }
        }
    }
}

/// Registry of connectors shared by all nodes of a run.
#[derive(Default)]
pub struct ConnectorHub {
    connectors: RwLock<BTreeMap<String, Arc<Connector>>>,
}

impl std::fmt::Debug for ConnectorHub {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let ids: Vec<String> = self.connectors.read().expect("hub lock poisoned").keys().cloned().collect();
        f.debug_struct("ConnectorHub").field("connectors", &ids).finish()
    }
}

impl ConnectorHub {
    pub fn new() -> Self {
        ConnectorHub::default()
    }

    pub fn register(&self, spec: ConnectorSpec, backend: Arc<dyn ConnectorBackend>) -> Result<(), ConnectorError> {
        if spec.pool_size == 0 {
            return Err(ConnectorError::InvalidSpec { id: spec.id, detail: "pool_size must be at least 1".into() });
        }
        spec.retry
            .validate()
            .map_err(|e| ConnectorError::InvalidSpec { id: spec.id.clone(), detail: e.to_string() })?;
        let mut map = self.connectors.write().expect("hub lock poisoned");
        if map.contains_key(&spec.id) {
            return Err(ConnectorError::Duplicate(spec.id));
        }
        let pool = Pool { size: spec.pool_size, leased: Mutex::new(0), freed: Condvar::new(), peak: AtomicUsize::new(0) };
        map.insert(
            spec.id.clone(),
            Arc::new(Connector {
                spec,
                backend,
                pool,
                cache: Mutex::new(Cache::default()),
                backend_calls: AtomicU64::new(0),
                cache_hits: AtomicU64::new(0),
            }),
        );
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.connectors.read().expect("hub lock poisoned").contains_key(id)
    }

    pub fn call(&self, id: &str, request: &Value) -> Result<Value, ConnectorError> {
        let conn = self
            .connectors
            .read()
            .expect("hub lock poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ConnectorError::Unknown(id.to_string()))?;
        let key = request.canonical_bytes();
        if let Some(hit) = conn.cached(&key) {
            conn.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        let mut attempt = 0;
        loop {
            let result = {
                let _lease = conn
                    .pool
                    .lease(Duration::from_millis(conn.spec.pool_timeout_ms))
                    .ok_or_else(|| ConnectorError::PoolTimeout(id.to_string()))?;
                conn.backend_calls.fetch_add(1, Ordering::SeqCst);
                conn.backend.call(request)
            };
            match result {
                Ok(response) => {
                    conn.store(key, response.clone());
                    return Ok(response);
                }
                Err(err) => match apply_recovery(&err, &conn.spec.retry, attempt) {
                    RecoveryAction::RetryAfter(delay) => {
                        std::thread::sleep(delay);
                        attempt += 1;
                    }
                    RecoveryAction::Fail => {
                        return Err(ConnectorError::Failed { id: id.to_string(), attempts: attempt + 1, detail: err.0 })
                    }
                },
            }
        }
    }

    pub fn stats(&self, id: &str) -> Option<ConnectorStats> {
        let map = self.connectors.read().expect("hub lock poisoned");
        map.get(id).map(|c| ConnectorStats {
            backend_calls: c.backend_calls.load(Ordering::SeqCst),
            cache_hits: c.cache_hits.load(Ordering::SeqCst),
            peak_leases: c.pool.peak.load(Ordering::SeqCst),
        })
    }

    /// Drops every cached response; called between runs.
    pub fn clear_caches(&self) {
        for c in self.connectors.read().expect("hub lock poisoned").values() {
            let mut cache = c.cache.lock().expect("cache lock poisoned");
            cache.entries.clear();
            cache.order.clear();
        }
    }
}

/// Request schema of the built-in `file` connector.
pub fn file_request_schema() -> Schema {
    Schema::of([("path", FieldType::String)])
}

pub fn file_response_schema() -> Schema {
    Schema::of([("content", FieldType::String)])
}

/// Reads UTF-8 files, optionally confined to a root directory.
#[derive(Debug, Clone, Default)]
pub struct FileBackend {
    pub root: Option<PathBuf>,
}

impl ConnectorBackend for FileBackend {
    fn call(&self, request: &Value) -> Result<Value, BackendError> {
        file_request_schema().check(request).map_err(|e| BackendError(e.to_string()))?;
        let rel = request.get("path").and_then(Value::as_str).expect("checked above");
        let path = match &self.root {
            Some(root) => {
                if std::path::Path::new(rel).components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                    return Err(BackendError(format!("path `{rel}` escapes the connector root")));
                }
                root.join(rel.trim_start_matches('/'))
            }
            None => PathBuf::from(rel),
        };
        let content =
            std::fs::read_to_string(&path).map_err(|e| BackendError(format!("{}: {e}", path.display())))?;
        Ok(Value::record([("content", Value::String(content))]))
    }
}

pub fn http_request_schema() -> Schema {
    Schema::of([
        ("method", FieldType::String),
        ("url", FieldType::String),
        ("headers", FieldType::list(FieldType::String)),
        ("body", FieldType::String),
    ])
}

pub fn http_response_schema() -> Schema {
    Schema::of([("status", FieldType::Int), ("body", FieldType::String)])
}

/// Plain HTTP/1.1 GET/POST. Headers are `Name: value` strings.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    pub timeout: Duration,
}

impl Default for HttpBackend {
    fn default() -> Self {
        HttpBackend { timeout: Duration::from_secs(30) }
    }
}

impl ConnectorBackend for HttpBackend {
    fn call(&self, request: &Value) -> Result<Value, BackendError> {
        http_request_schema().check(request).map_err(|e| BackendError(e.to_string()))?;
        let method = request.get("method").and_then(Value::as_str).expect("checked").to_ascii_uppercase();
        let url = request.get("url").and_then(Value::as_str).expect("checked");
        let body = request.get("body").and_then(Value::as_str).expect("checked");
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut req = match method.as_str() {
            "GET" => agent.get(url),
            "POST" => agent.post(url),
            other => return Err(BackendError(format!("unsupported method `{other}`"))),
        };
        if let Some(Value::List(headers)) = request.get("headers") {
            for h in headers {
                let h = h.as_str().unwrap_or_default();
                let (name, value) =
                    h.split_once(':').ok_or_else(|| BackendError(format!("malformed header `{h}`")))?;
                req = req.set(name.trim(), value.trim());
            }
        }
        let resp = if method == "POST" { req.send_string(body) } else { req.call() };
        let resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => return Err(BackendError(e.to_string())),
        };
        let status = resp.status() as i64;
        let text = resp.into_string().map_err(|e| BackendError(e.to_string()))?;
        Ok(Value::record([("status", Value::Int(status)), ("body", Value::String(text))]))
    }
}
