//! Downstream connection pool: connects to configured MCP servers, discovers
//! their tools, and routes `call_tool` invocations.
//!
//! Servers come from a JSON config file:
//!
//! ```json
//! { "servers": [
//!   { "name": "k8s",   "transport": "stdio", "command": "weft-mock",
//!     "args": ["--kind", "resource"], "env": {} },
//!   { "name": "graph", "transport": "streamable-http", "url": "http://..." }
//! ] }
//! ```
//!
//! Discovery is eager: initialization performs the MCP handshake and a
//! `tools/list` against every server, and fails fast if any is unreachable.
//! Tools are addressed bare (`run_query`) when exactly one server provides
//! them, or qualified (`graph:run_query`) otherwise; ambiguous bare names
//! fail loudly rather than routing to an arbitrary server.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::rpc::{McpService, ToolDescriptor, ToolResult, PROTOCOL_VERSION};
use crate::transport::{Endpoint, HttpEndpoint, InProcessEndpoint, MessageLog, StdioEndpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    Stdio,
    Sse,
    StreamableHttp,
}

fn default_connect_timeout_ms() -> u64 {
    10_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub name: String,
    pub transport: TransportKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(
        rename = "connectTimeoutMs",
        default = "default_connect_timeout_ms"
    )]
    pub connect_timeout_ms: u64,
}

/// Root of the mediator config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub servers: Vec<ServerConfig>,
}

impl PoolConfig {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Error)]
#[error("failed to connect to server '{server}': {cause}")]
pub struct ConnectError {
    pub server: String,
    pub cause: String,
}

#[derive(Debug, Clone, Error)]
pub enum RouteError {
    #[error("tool-not-found: no tool named '{0}' in any connected server")]
    NotFound(String),
    #[error("ambiguous-tool: '{}' is provided by multiple servers; qualify as one of {}", .0, .1.join(", "))]
    Ambiguous(String, Vec<String>),
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub server: String,
    pub tool: String,
    pub descriptor: ToolDescriptor,
}

/// The routing table: qualified `server:tool` names plus a bare-name index.
#[derive(Debug, Clone, Default)]
pub struct ToolCatalog {
    entries: BTreeMap<String, CatalogEntry>,
    index: BTreeMap<String, Vec<String>>,
}

impl ToolCatalog {
    pub fn insert(&mut self, server: &str, descriptor: ToolDescriptor) {
        let qualified = format!("{server}:{}", descriptor.name);
        self.index
            .entry(descriptor.name.clone())
            .or_default()
            .push(qualified.clone());
        self.entries.insert(
            qualified,
            CatalogEntry {
                server: server.to_owned(),
                tool: descriptor.name.clone(),
                descriptor,
            },
        );
    }

    pub fn route(&self, tool_name: &str) -> Result<&CatalogEntry, RouteError> {
        if tool_name.contains(':') {
            return self
                .entries
                .get(tool_name)
                .ok_or_else(|| RouteError::NotFound(tool_name.to_owned()));
        }
        match self.index.get(tool_name).map(Vec::as_slice) {
            None | Some([]) => Err(RouteError::NotFound(tool_name.to_owned())),
            Some([only]) => Ok(&self.entries[only]),
            Some(many) => Err(RouteError::Ambiguous(
                tool_name.to_owned(),
                many.to_vec(),
            )),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.values()
    }
}

/// The protocol-level result of one downstream tool call, as data: transport
/// and tool failures become `ok=false` outcomes, never exceptions.
#[derive(Debug, Clone, Serialize)]
pub struct ToolCallOutcome {
    pub ok: bool,
    /// Text content parsed as JSON when possible, raw text otherwise.
    pub content: Value,
    #[serde(rename = "isError")]
    pub is_error: bool,
    /// Unmodified protocol result, for audit.
    pub raw: Value,
}

impl ToolCallOutcome {
    fn failed(message: String) -> Self {
        Self {
            ok: false,
            content: Value::String(message),
            is_error: false,
            raw: Value::Null,
        }
    }

    /// The outcome's content rendered as an error/log message.
    pub fn message(&self) -> String {
        match &self.content {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

struct PoolServer {
    endpoint: Arc<dyn Endpoint>,
}

/// Shared, internally synchronized client pool. Calls in flight keep using
/// the catalog snapshot they started with while refreshes swap in a new one.
pub struct ClientPool {
    servers: BTreeMap<String, PoolServer>,
    catalog: RwLock<Arc<ToolCatalog>>,
    downstream_calls: AtomicU64,
}

async fn handshake(
    endpoint: &dyn Endpoint,
    timeout_ms: u64,
) -> Result<Vec<ToolDescriptor>, String> {
    let exchange = async {
        endpoint
            .request(
                "initialize",
                json!({
                    "protocolVersion": PROTOCOL_VERSION,
                    "capabilities": {},
                    "clientInfo": {"name": "weft", "version": env!("CARGO_PKG_VERSION")},
                }),
            )
            .await
            .map_err(|e| format!("initialize failed: {e}"))?;
        endpoint
            .notify("notifications/initialized", json!({}))
            .await
            .map_err(|e| format!("initialized notification failed: {e}"))?;
        list_tools(endpoint).await
    };
    match tokio::time::timeout(Duration::from_millis(timeout_ms), exchange).await {
        Err(_) => Err(format!("handshake timed out after {timeout_ms} ms")),
        Ok(result) => result,
    }
}

async fn list_tools(endpoint: &dyn Endpoint) -> Result<Vec<ToolDescriptor>, String> {
    let result = endpoint
        .request("tools/list", json!({}))
        .await
        .map_err(|e| format!("tools/list failed: {e}"))?;
    let tools = result
        .get("tools")
        .cloned()
        .ok_or("tools/list result has no \"tools\" array")?;
    serde_json::from_value(tools).map_err(|e| format!("malformed tool descriptor: {e}"))
}

impl ClientPool {
    /// Connect to every configured server, handshake, and discover tools.
    pub async fn initialize(configs: &[ServerConfig]) -> Result<Self, ConnectError> {
        let mut seen = BTreeMap::new();
        for config in configs {
            if seen.insert(config.name.clone(), ()).is_some() {
                return Err(ConnectError {
                    server: config.name.clone(),
                    cause: "duplicate server name in config".into(),
                });
            }
        }
        let mut named: Vec<(String, Arc<dyn Endpoint>, u64)> = Vec::new();
        for config in configs {
            let endpoint = connect_endpoint(config).map_err(|cause| ConnectError {
                server: config.name.clone(),
                cause,
            })?;
            named.push((config.name.clone(), endpoint, config.connect_timeout_ms));
        }
        Self::from_endpoints(named).await
    }

    /// Build a pool over pre-built endpoints (tests use in-process mocks).
    pub async fn from_endpoints(
        named: Vec<(String, Arc<dyn Endpoint>, u64)>,
    ) -> Result<Self, ConnectError> {
        let mut servers = BTreeMap::new();
        let mut catalog = ToolCatalog::default();
        for (name, endpoint, timeout_ms) in named {
            let tools = handshake(endpoint.as_ref(), timeout_ms)
                .await
                .map_err(|cause| ConnectError {
                    server: name.clone(),
                    cause,
                })?;
            for descriptor in tools {
                catalog.insert(&name, descriptor);
            }
            servers.insert(name, PoolServer { endpoint });
        }
        Ok(Self {
            servers,
            catalog: RwLock::new(Arc::new(catalog)),
            downstream_calls: AtomicU64::new(0),
        })
    }

    pub fn catalog(&self) -> Arc<ToolCatalog> {
        Arc::clone(&self.catalog.read().unwrap())
    }

    /// Number of tools/call requests sent downstream since creation.
    pub fn downstream_call_count(&self) -> u64 {
        self.downstream_calls.load(Ordering::Relaxed)
    }

    /// Route and invoke one tool. Never panics or errors out of band: every
    /// failure mode is an `ok=false` outcome.
    pub async fn call_tool(&self, tool_name: &str, params: Value) -> ToolCallOutcome {
        let catalog = self.catalog();
        let entry = match catalog.route(tool_name) {
            Ok(entry) => entry,
            Err(err) => return ToolCallOutcome::failed(err.to_string()),
        };
        let server = &self.servers[&entry.server];
        self.downstream_calls.fetch_add(1, Ordering::Relaxed);
        let result = server
            .endpoint
            .request(
                "tools/call",
                json!({"name": entry.tool, "arguments": params}),
            )
            .await;
        match result {
            Err(err) => ToolCallOutcome::failed(format!(
                "transport error calling '{tool_name}': {err}"
            )),
            Ok(raw) => match serde_json::from_value::<ToolResult>(raw.clone()) {
                Err(err) => {
                    ToolCallOutcome::failed(format!("malformed tool result: {err}"))
                }
                Ok(tool_result) => {
                    let text = tool_result.text_content();
                    let content =
                        serde_json::from_str(&text).unwrap_or(Value::String(text));
                    ToolCallOutcome {
                        ok: !tool_result.is_error,
                        content,
                        is_error: tool_result.is_error,
                        raw,
                    }
                }
            },
        }
    }

    /// Re-discover tools on every server. A server that fails to answer
    /// keeps its previous entries.
    pub async fn refresh_catalog(&self) -> Arc<ToolCatalog> {
        let previous = self.catalog();
        let mut next = ToolCatalog::default();
        for (name, server) in &self.servers {
            match list_tools(server.endpoint.as_ref()).await {
                Ok(tools) => {
                    for descriptor in tools {
                        next.insert(name, descriptor);
                    }
                }
                Err(cause) => {
                    log::warn!("catalog refresh failed for '{name}', keeping stale entries: {cause}");
                    for entry in previous.entries().filter(|e| &e.server == name) {
                        next.insert(name, entry.descriptor.clone());
                    }
                }
            }
        }
        let next = Arc::new(next);
        *self.catalog.write().unwrap() = Arc::clone(&next);
        next
    }
}

fn connect_endpoint(config: &ServerConfig) -> Result<Arc<dyn Endpoint>, String> {
    match config.transport {
        TransportKind::Stdio => {
            let command = config
                .command
                .as_deref()
                .ok_or("stdio transport requires \"command\"")?;
            let endpoint = StdioEndpoint::spawn(
                command,
                &config.args,
                config.env.iter().map(|(k, v)| (k.clone(), v.clone())),
            )
            .map_err(|e| format!("spawn failed: {e}"))?;
            Ok(Arc::new(endpoint))
        }
        TransportKind::StreamableHttp => {
            let url = config
                .url
                .as_deref()
                .ok_or("streamable-http transport requires \"url\"")?;
            Ok(Arc::new(HttpEndpoint::new(url, config.connect_timeout_ms).map_err(
                |e| format!("http client construction failed: {e}"),
            )?))
        }
        TransportKind::Sse => Err(
            "sse transport is not supported by this build; use stdio or streamable-http".into(),
        ),
    }
}

/// Convenience for tests: a pool over in-process services, returning the
/// per-server message logs alongside.
pub async fn pool_over_services(
    services: Vec<(&str, Arc<dyn McpService>)>,
) -> Result<(ClientPool, BTreeMap<String, Arc<MessageLog>>), ConnectError> {
    let mut named: Vec<(String, Arc<dyn Endpoint>, u64)> = Vec::new();
    let mut logs = BTreeMap::new();
    for (name, service) in services {
        let endpoint = InProcessEndpoint::new(service);
        logs.insert(name.to_owned(), endpoint.log());
        named.push((name.to_owned(), Arc::new(endpoint), 5_000));
    }
    let pool = ClientPool::from_endpoints(named).await?;
    Ok((pool, logs))
}
