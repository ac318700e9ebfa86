//! Node bodies: agents driven through a provider, and registered tools.

pub mod agent;
pub mod fuzz;
pub mod gen;
pub mod http;
pub mod mock;
pub mod provider;
pub mod tools;

pub use agent::{
    assemble_context, parse_structured_output, run_agent, AgentEnv, AgentError, AgentFailure, AgentOutcome,
    ModelError, OutputSchemaViolation, ToolInvocation,
};
pub use fuzz::FuzzProvider;
pub use http::HttpProvider;
pub use mock::{Fallback, MockProvider, MockScript, Recorder};
pub use provider::{
    Message, Provider, ProviderError, ProviderRequest, ProviderResponse, ResponseBody, ToolCall, ToolDef, Usage,
};
pub use tools::{
    builtin, run_tool, CancelFlag, RegisteredTool, RegistryError, RetryNote, ToolContext, ToolEnv, ToolError, ToolFn,
    ToolRegistry, ToolRun, BUILTINS,
};
