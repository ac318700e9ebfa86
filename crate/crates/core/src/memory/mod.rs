//! Three isolated memory tiers: per-attempt scratch, structured workflow
//! state, and external connectors.

pub mod connector;
pub mod scratch;
pub mod state;

pub use connector::{
    BackendError, CacheConfig, ConnectorBackend, ConnectorError, ConnectorHub, ConnectorSpec, ConnectorStats,
    FileBackend, HttpBackend,
};
pub use connector::{
    file_request_schema, file_response_schema, http_request_schema, http_response_schema,
};
pub use scratch::{ScratchClosed, ScratchSpace};
pub use state::{Scope, StateEntry, StateError, StateReadError, StateSnapshot, StateStore};
