//! JSON-RPC 2.0 message types and MCP serving loops.
//!
//! Both sides of the mediator speak MCP over JSON-RPC 2.0: the methods that
//! matter here are `initialize`, `notifications/initialized`, `tools/list`
//! and `tools/call`. Over stdio, messages are newline-delimited JSON; over
//! streamable HTTP, each POST body carries one message and the response body
//! carries the corresponding JSON-RPC response.
//!
//! Anything that answers MCP requests (the mediator itself as well as the
//! mock downstream servers) implements [`McpService`] and is served by
//! [`serve_stdio`] or mounted into an HTTP router via [`http_router`].

use std::sync::Arc;

use async_trait::async_trait;
use axum::routing::post;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};

/// Protocol revision announced during the `initialize` handshake.
pub const PROTOCOL_VERSION: &str = "2025-06-18";

pub const JSONRPC_VERSION: &str = "2.0";

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;

/// JSON-RPC request ids may be numbers or strings; we generate numbers but
/// must accept both from peers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RequestId {
    Number(i64),
    Text(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonRpcRequest {
    pub jsonrpc: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<RequestId>,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<Value>,
}

impl JsonRpcRequest {
    pub fn new(id: i64, method: &str, params: Value) -> Self {
        Self {
            jsonrpc: JSONRPC_VERSION.into(),
            id: Some(RequestId::Number(id)),
            method: method.into(),
            params: Some(params),
        }
    }

    /// A request without an id: the peer must not answer it.
    pub fn notification(method: &str, params: Value) -> Self {
        Self {
            jsonrpc: JSONRPC_VERSION.into(),
            id: None,
            method: method.into(),
            params: Some(params),
        }
    }

    pub fn is_notification(&self) -> bool {
        self.id.is_none()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonRpcError {
    pub code: i64,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
}

impl JsonRpcError {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            data: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonRpcResponse {
    pub jsonrpc: String,
    pub id: Option<RequestId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<JsonRpcError>,
}

impl JsonRpcResponse {
    pub fn success(id: Option<RequestId>, result: Value) -> Self {
        Self {
            jsonrpc: JSONRPC_VERSION.into(),
            id,
            result: Some(result),
            error: None,
        }
    }

    pub fn failure(id: Option<RequestId>, error: JsonRpcError) -> Self {
        Self {
            jsonrpc: JSONRPC_VERSION.into(),
            id,
            result: None,
            error: Some(error),
        }
    }
}

/// One entry of a `tools/list` result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(rename = "inputSchema")]
    pub input_schema: Value,
}

/// MCP tool results carry a list of content blocks; we only ever emit text
/// blocks but tolerate unknown block types from peers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ContentBlock {
    Text { text: String },
}

fn is_false(v: &bool) -> bool {
    !*v
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolResult {
    pub content: Vec<ContentBlock>,
    #[serde(rename = "isError", default, skip_serializing_if = "is_false")]
    pub is_error: bool,
}

impl ToolResult {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            content: vec![ContentBlock::Text { text: text.into() }],
            is_error: false,
        }
    }

    /// A successful result carrying `value` as one compact-JSON text block.
    pub fn json(value: &Value) -> Self {
        Self::text(value.to_string())
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self {
            content: vec![ContentBlock::Text {
                text: message.into(),
            }],
            is_error: true,
        }
    }

    /// Concatenation of all text blocks.
    pub fn text_content(&self) -> String {
        let mut out = String::new();
        for block in &self.content {
            let ContentBlock::Text { text } = block;
            out.push_str(text);
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServerIdentity {
    pub name: String,
    pub version: String,
}

/// Anything that can answer MCP requests.
#[async_trait]
pub trait McpService: Send + Sync {
    fn identity(&self) -> ServerIdentity;

    async fn list_tools(&self) -> Vec<ToolDescriptor>;

    /// Invoke a tool. `Err` becomes a protocol-level JSON-RPC error (unknown
    /// tool, malformed arguments); tool-level failures are `Ok` results with
    /// `is_error` set.
    async fn call_tool(&self, name: &str, arguments: Value) -> Result<ToolResult, JsonRpcError>;
}

/// Answer one parsed JSON-RPC message. Returns `None` for notifications.
pub async fn dispatch(service: &dyn McpService, req: JsonRpcRequest) -> Option<JsonRpcResponse> {
    if req.is_notification() {
        return None;
    }
    let id = req.id.clone();
    let response = match req.method.as_str() {
        "initialize" => {
            let identity = service.identity();
            JsonRpcResponse::success(
                id,
                json!({
                    "protocolVersion": PROTOCOL_VERSION,
                    "capabilities": { "tools": {} },
                    "serverInfo": { "name": identity.name, "version": identity.version },
                }),
            )
        }
        "ping" => JsonRpcResponse::success(id, json!({})),
        "tools/list" => {
            let tools = service.list_tools().await;
            JsonRpcResponse::success(id, json!({ "tools": tools }))
        }
        "tools/call" => {
            let params = req.params.unwrap_or(Value::Null);
            let name = params.get("name").and_then(Value::as_str);
            match name {
                None => JsonRpcResponse::failure(
                    id,
                    JsonRpcError::new(INVALID_PARAMS, "tools/call requires a tool name"),
                ),
                Some(name) => {
                    let arguments = params
                        .get("arguments")
                        .cloned()
                        .unwrap_or_else(|| json!({}));
                    match service.call_tool(name, arguments).await {
                        Ok(result) => JsonRpcResponse::success(
                            id,
                            serde_json::to_value(result).expect("tool result serializes"),
                        ),
                        Err(err) => JsonRpcResponse::failure(id, err),
                    }
                }
            }
        }
        other => JsonRpcResponse::failure(
            id,
            JsonRpcError::new(METHOD_NOT_FOUND, format!("unknown method '{other}'")),
        ),
    };
    Some(response)
}

/// Serve `service` over stdin/stdout with newline-delimited JSON, until EOF.
///
/// Requests are handled concurrently; a single writer task keeps response
/// lines from interleaving. Nothing but protocol messages may be written to
/// stdout, so diagnostics belong on stderr.
pub async fn serve_stdio(service: Arc<dyn McpService>) -> std::io::Result<()> {
    let stdin = BufReader::new(tokio::io::stdin());
    let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel::<String>();

    let writer = tokio::spawn(async move {
        let mut stdout = tokio::io::stdout();
        while let Some(line) = rx.recv().await {
            if stdout.write_all(line.as_bytes()).await.is_err() {
                break;
            }
            if stdout.write_all(b"\n").await.is_err() {
                break;
            }
            let _ = stdout.flush().await;
        }
    });

    let mut lines = stdin.lines();
    while let Some(line) = lines.next_line().await? {
        if line.trim().is_empty() {
            continue;
        }
        let service = Arc::clone(&service);
        let tx = tx.clone();
        tokio::spawn(async move {
            let response = match serde_json::from_str::<JsonRpcRequest>(&line) {
                Ok(req) => dispatch(service.as_ref(), req).await,
                Err(err) => Some(JsonRpcResponse::failure(
                    None,
                    JsonRpcError::new(PARSE_ERROR, format!("invalid JSON-RPC message: {err}")),
                )),
            };
            if let Some(response) = response {
                let encoded = serde_json::to_string(&response).expect("response serializes");
                let _ = tx.send(encoded);
            }
        });
    }
    drop(tx);
    let _ = writer.await;
    Ok(())
}

/// Router exposing `service` at `POST /mcp` (streamable-HTTP, stateless).
///
/// Notifications are acknowledged with `202 Accepted` and an empty body.
pub fn http_router(service: Arc<dyn McpService>) -> axum::Router {
    async fn handle(
        axum::extract::State(service): axum::extract::State<Arc<dyn McpService>>,
        body: String,
    ) -> axum::response::Response {
        use axum::response::IntoResponse;
        let response = match serde_json::from_str::<JsonRpcRequest>(&body) {
            Ok(req) => dispatch(service.as_ref(), req).await,
            Err(err) => Some(JsonRpcResponse::failure(
                None,
                JsonRpcError::new(PARSE_ERROR, format!("invalid JSON-RPC message: {err}")),
            )),
        };
        match response {
            Some(response) => axum::Json(response).into_response(),
            None => axum::http::StatusCode::ACCEPTED.into_response(),
        }
    }

    axum::Router::new()
        .route("/mcp", post(handle))
        .with_state(service)
}
