//! Client-side MCP endpoints: stdio child processes, streamable HTTP, and
//! in-process services for tests.
//!
//! An [`Endpoint`] moves JSON-RPC messages and correlates responses by id;
//! it knows nothing about MCP semantics (the handshake lives in the pool).
//! Stdio endpoints pipeline: any number of requests may be in flight, a
//! reader task completes them as response lines arrive.

use std::collections::HashMap;
use std::process::Stdio;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex as StdMutex};

use async_trait::async_trait;
use serde_json::Value;
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::process::{Child, ChildStdin, Command};
use tokio::sync::{oneshot, Mutex};

use crate::rpc::{self, JsonRpcError, JsonRpcRequest, JsonRpcResponse, McpService, RequestId};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("http failure: {0}")]
    Http(#[from] reqwest::Error),
    #[error("peer returned error {}: {}", .0.code, .0.message)]
    Rpc(JsonRpcError),
    #[error("connection closed before a response arrived")]
    Closed,
    #[error("protocol violation: {0}")]
    Protocol(String),
}

#[async_trait]
pub trait Endpoint: Send + Sync {
    /// Send a request and wait for its result.
    async fn request(&self, method: &str, params: Value) -> Result<Value, TransportError>;

    /// Send a notification (no response expected).
    async fn notify(&self, method: &str, params: Value) -> Result<(), TransportError>;
}

fn unwrap_response(response: JsonRpcResponse) -> Result<Value, TransportError> {
    match response.error {
        Some(err) => Err(TransportError::Rpc(err)),
        None => Ok(response.result.unwrap_or(Value::Null)),
    }
}

type PendingMap = Arc<StdMutex<HashMap<i64, oneshot::Sender<JsonRpcResponse>>>>;

/// A child process speaking newline-delimited JSON-RPC on its stdio.
pub struct StdioEndpoint {
    _child: Child,
    stdin: Mutex<ChildStdin>,
    pending: PendingMap,
    next_id: AtomicI64,
}

impl StdioEndpoint {
    pub fn spawn(
        command: &str,
        args: &[String],
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, TransportError> {
        let mut child = Command::new(command)
            .args(args)
            .envs(env)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .kill_on_drop(true)
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let pending: PendingMap = Arc::default();

        let reader_pending = Arc::clone(&pending);
        tokio::spawn(async move {
            let mut lines = BufReader::new(stdout).lines();
            while let Ok(Some(line)) = lines.next_line().await {
                let Ok(response) = serde_json::from_str::<JsonRpcResponse>(&line) else {
                    log::warn!("discarding unparseable response line: {line}");
                    continue;
                };
                if let Some(RequestId::Number(id)) = response.id {
                    let sender = reader_pending.lock().unwrap().remove(&id);
                    if let Some(sender) = sender {
                        let _ = sender.send(response);
                    }
                }
            }
            // EOF: wake every waiter with a closed-channel error.
            reader_pending.lock().unwrap().clear();
        });

        Ok(Self {
            _child: child,
            stdin: Mutex::new(stdin),
            pending,
            next_id: AtomicI64::new(1),
        })
    }

    async fn write_line(&self, message: &JsonRpcRequest) -> Result<(), TransportError> {
        let mut encoded = serde_json::to_string(message).expect("request serializes");
        encoded.push('\n');
        let mut stdin = self.stdin.lock().await;
        stdin.write_all(encoded.as_bytes()).await?;
        stdin.flush().await?;
        Ok(())
    }
}

#[async_trait]
impl Endpoint for StdioEndpoint {
    async fn request(&self, method: &str, params: Value) -> Result<Value, TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = oneshot::channel();
        self.pending.lock().unwrap().insert(id, tx);
        let sent = self.write_line(&JsonRpcRequest::new(id, method, params)).await;
        if let Err(err) = sent {
            self.pending.lock().unwrap().remove(&id);
            return Err(err);
        }
        let response = rx.await.map_err(|_| TransportError::Closed)?;
        unwrap_response(response)
    }

    async fn notify(&self, method: &str, params: Value) -> Result<(), TransportError> {
        self.write_line(&JsonRpcRequest::notification(method, params))
            .await
    }
}

/// Streamable-HTTP endpoint: one POST per message against a single URL.
pub struct HttpEndpoint {
    client: reqwest::Client,
    url: String,
    next_id: AtomicI64,
}

impl HttpEndpoint {
    pub fn new(url: &str, connect_timeout_ms: u64) -> Result<Self, TransportError> {
        let client = reqwest::Client::builder()
            .connect_timeout(std::time::Duration::from_millis(connect_timeout_ms))
            .build()?;
        Ok(Self {
            client,
            url: url.to_owned(),
            next_id: AtomicI64::new(1),
        })
    }
}

#[async_trait]
impl Endpoint for HttpEndpoint {
    async fn request(&self, method: &str, params: Value) -> Result<Value, TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let response = self
            .client
            .post(&self.url)
            .json(&JsonRpcRequest::new(id, method, params))
            .send()
            .await?
            .error_for_status()?;
        let decoded: JsonRpcResponse = response.json().await?;
        unwrap_response(decoded)
    }

    async fn notify(&self, method: &str, params: Value) -> Result<(), TransportError> {
        self.client
            .post(&self.url)
            .json(&JsonRpcRequest::notification(method, params))
            .send()
            .await?
            .error_for_status()?;
        Ok(())
    }
}

/// Every JSON-RPC message an in-process endpoint has sent, for tests that
/// count or diff protocol traffic.
#[derive(Default)]
pub struct MessageLog {
    messages: StdMutex<Vec<JsonRpcRequest>>,
}

impl MessageLog {
    pub fn record(&self, message: &JsonRpcRequest) {
        self.messages.lock().unwrap().push(message.clone());
    }

    pub fn count(&self, method: &str) -> usize {
        self.messages
            .lock()
            .unwrap()
            .iter()
            .filter(|m| m.method == method)
            .count()
    }

    pub fn messages(&self) -> Vec<JsonRpcRequest> {
        self.messages.lock().unwrap().clone()
    }
}

/// Endpoint that dispatches straight into an [`McpService`] in this process.
/// Fast path for tests; the wire format still round-trips through the same
/// dispatch logic real transports use.
pub struct InProcessEndpoint {
    service: Arc<dyn McpService>,
    log: Arc<MessageLog>,
    next_id: AtomicI64,
}

impl InProcessEndpoint {
    pub fn new(service: Arc<dyn McpService>) -> Self {
        Self {
            service,
            log: Arc::default(),
            next_id: AtomicI64::new(1),
        }
    }

    pub fn log(&self) -> Arc<MessageLog> {
        Arc::clone(&self.log)
    }
}

#[async_trait]
impl Endpoint for InProcessEndpoint {
    async fn request(&self, method: &str, params: Value) -> Result<Value, TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let request = JsonRpcRequest::new(id, method, params);
        self.log.record(&request);
        let response = rpc::dispatch(self.service.as_ref(), request)
            .await
            .ok_or_else(|| TransportError::Protocol("request treated as notification".into()))?;
        unwrap_response(response)
    }

    async fn notify(&self, method: &str, params: Value) -> Result<(), TransportError> {
        let request = JsonRpcRequest::notification(method, params);
        self.log.record(&request);
        rpc::dispatch(self.service.as_ref(), request).await;
        Ok(())
    }
}
