//! Weft, a workflow mediator for the Model Context Protocol.
//!
//! Weft sits between agents and tool servers. Upward it is an MCP server
//! exposing six workflow-management tools (`create_workflow`, `run_workflow`,
//! `list_workflows`, `get_workflow`, `validate_workflow`, `delete_workflow`);
//! downward it is an MCP client that connects to configured tool servers,
//! discovers their tools, and routes blueprint steps to them. A multi-step
//! orchestration is designed once as a declarative JSON blueprint and
//! re-executed with a single `run_workflow` call, with no agent involvement
//! during execution.
//!
//! # Architecture
//!
//! ```text
//! agent ──(MCP: stdio / HTTP)──▶ server::Mediator
//!                                   │  store::WorkflowStore   (blueprint CRUD)
//!                                   │  validate::*            (two-tier checks)
//!                                   ▼
//!                                engine::Engine
//!                                   │  resolver::*            ({{...}} templates)
//!                                   ▼
//!                                pool::ClientPool ──(MCP)──▶ downstream servers
//! ```
//!
//! The [`mock`] module ships deterministic downstream servers (a cluster-like
//! resource inventory and a property graph with idempotent MERGE) so the whole
//! stack can be exercised without real infrastructure, and [`cost`] implements
//! the token amortization model used by the `weft cost` subcommand.

pub mod blueprint;
pub mod cost;
pub mod engine;
pub mod mock;
pub mod pool;
pub mod resolver;
pub mod rpc;
pub mod server;
pub mod store;
pub mod transport;
pub mod validate;

pub use blueprint::{parse_blueprint, ErrorStrategy, ParamSpec, Step, WorkflowBlueprint};
pub use engine::{Engine, EngineOptions, RunResult, StepResult};
pub use pool::{ClientPool, PoolConfig, ServerConfig, ToolCatalog};
pub use resolver::ResolverContext;
pub use server::Mediator;
pub use store::{StoreError, WorkflowStore};
pub use validate::{validate_structure, validate_tools, ValidationReport};
