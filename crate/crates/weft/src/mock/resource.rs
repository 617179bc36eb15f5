//! Cluster-inventory mock MCP server backed by [`Fixture`].
//!
//! Besides the read-only listing tools it carries two test-only tools:
//! `fail_n_times` (scripted failures for retry tests) and `sleep_ms`
//! (injected latency for the parallel ablation).

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::fixture::{Fixture, FixtureShape};
use crate::rpc::{JsonRpcError, McpService, ServerIdentity, ToolDescriptor, ToolResult};

pub struct ResourceServer {
    fixture: Fixture,
    fail_counters: Mutex<HashMap<String, u64>>,
}

impl ResourceServer {
    pub fn new(shape: FixtureShape) -> Self {
        Self {
            fixture: Fixture::new(shape),
            fail_counters: Mutex::new(HashMap::new()),
        }
    }

    pub fn fixture(&self) -> &Fixture {
        &self.fixture
    }

    fn object_schema(props: Value, required: &[&str]) -> Value {
        json!({"type": "object", "properties": props, "required": required})
    }
}

#[async_trait]
impl McpService for ResourceServer {
    fn identity(&self) -> ServerIdentity {
        ServerIdentity {
            name: "weft-mock-resource".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    async fn list_tools(&self) -> Vec<ToolDescriptor> {
        vec![
            ToolDescriptor {
                name: "list_namespaces".into(),
                description: "Names of all namespaces in the cluster".into(),
                input_schema: Self::object_schema(json!({}), &[]),
            },
            ToolDescriptor {
                name: "list_nodes".into(),
                description: "Worker node records".into(),
                input_schema: Self::object_schema(json!({}), &[]),
            },
            ToolDescriptor {
                name: "list_resources".into(),
                description: "Resources of one kind; omit namespace for cluster-scoped kinds"
                    .into(),
                input_schema: Self::object_schema(
                    json!({
                        "kind": {"type": "string"},
                        "namespace": {"type": "string"}
                    }),
                    &["kind"],
                ),
            },
            ToolDescriptor {
                name: "echo".into(),
                description: "Returns its arguments unchanged".into(),
                input_schema: Self::object_schema(json!({}), &[]),
            },
            ToolDescriptor {
                name: "fail_n_times".into(),
                description: "Fails its first n invocations per key, then succeeds".into(),
                input_schema: Self::object_schema(
                    json!({
                        "n": {"type": "integer"},
                        "key": {"type": "string"}
                    }),
                    &["n"],
                ),
            },
            ToolDescriptor {
                name: "sleep_ms".into(),
                description: "Sleeps n milliseconds, then returns".into(),
                input_schema: Self::object_schema(json!({"n": {"type": "integer"}}), &["n"]),
            },
        ]
    }

    async fn call_tool(&self, name: &str, arguments: Value) -> Result<ToolResult, JsonRpcError> {
        match name {
            "list_namespaces" => Ok(ToolResult::json(&json!(self.fixture.namespaces()))),
            "list_nodes" => Ok(ToolResult::json(&json!(self.fixture.nodes()))),
            "list_resources" => {
                let Some(kind) = arguments.get("kind").and_then(Value::as_str) else {
                    return Ok(ToolResult::error("list_resources requires a \"kind\" string"));
                };
                let namespace = arguments
                    .get("namespace")
                    .and_then(Value::as_str)
                    .unwrap_or("");
                match self.fixture.resources(kind, namespace) {
                    Some(records) => Ok(ToolResult::json(&json!(records))),
                    None => Ok(ToolResult::error(format!(
                        "unknown kind or namespace: {kind}/{}",
                        if namespace.is_empty() { "<cluster>" } else { namespace }
                    ))),
                }
            }
            "echo" => Ok(ToolResult::json(&arguments)),
            "fail_n_times" => {
                let Some(n) = arguments.get("n").and_then(Value::as_u64) else {
                    return Ok(ToolResult::error("fail_n_times requires an integer \"n\""));
                };
                let key = arguments
                    .get("key")
                    .and_then(Value::as_str)
                    .unwrap_or("default")
                    .to_owned();
                let mut counters = self.fail_counters.lock().unwrap();
                let seen = counters.entry(key).or_insert(0);
                *seen += 1;
                if *seen <= n {
                    Ok(ToolResult::error(format!("induced failure {seen} of {n}")))
                } else {
                    Ok(ToolResult::json(&json!({"ok": true, "calls": *seen})))
                }
            }
            "sleep_ms" => {
                let Some(n) = arguments.get("n").and_then(Value::as_u64) else {
                    return Ok(ToolResult::error("sleep_ms requires an integer \"n\""));
                };
                tokio::time::sleep(Duration::from_millis(n)).await;
                Ok(ToolResult::json(&json!({"sleptMs": n})))
            }
            other => Err(JsonRpcError::new(
                crate::rpc::INVALID_PARAMS,
                format!("unknown tool '{other}'"),
            )),
        }
    }
}
