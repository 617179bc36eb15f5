//! The upward-facing MCP server. Agents see exactly six workflow tools;
//! everything downstream stays behind the engine and pool.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use serde_json::{json, Map, Value};

use crate::blueprint::blueprint_from_value;
use crate::engine::{Engine, EngineOptions};
use crate::pool::ClientPool;
use crate::rpc::{JsonRpcError, McpService, ServerIdentity, ToolDescriptor, ToolResult, INVALID_PARAMS};
use crate::store::{StoreError, WorkflowStore};
use crate::validate::{validate_structure, validate_tools, Issue, ValidationReport};

pub struct Mediator {
    store: Arc<WorkflowStore>,
    pool: Arc<ClientPool>,
    engine: Engine,
    inbound_calls: AtomicU64,
}

impl Mediator {
    pub fn new(store: Arc<WorkflowStore>, pool: Arc<ClientPool>) -> Self {
        Self::with_options(store, pool, EngineOptions::default())
    }

    pub fn with_options(
        store: Arc<WorkflowStore>,
        pool: Arc<ClientPool>,
        options: EngineOptions,
    ) -> Self {
        Self {
            store,
            engine: Engine::with_options(pool.clone(), options),
            pool,
            inbound_calls: AtomicU64::new(0),
        }
    }

    /// How many tools/call requests this server has handled.
    pub fn inbound_tool_calls(&self) -> u64 {
        self.inbound_calls.load(Ordering::Relaxed)
    }

    pub fn store(&self) -> &Arc<WorkflowStore> {
        &self.store
    }

    async fn create(&self, args: &Value) -> Result<ToolResult, JsonRpcError> {
        let bp_value = required_object(args, "blueprint")?;
        let bp = match blueprint_from_value(bp_value) {
            Ok(bp) => bp,
            Err(e) => return Ok(blocked(vec![parse_issue(e.to_string())])),
        };
        let report = validate_structure(&bp);
        if !report.is_clean() {
            return Ok(blocked(report.errors));
        }
        let warnings = validate_tools(&bp, &self.pool.catalog()).warnings;
        if let Err(e) = self.store.save(&bp) {
            return Ok(ToolResult::error(e.to_string()));
        }
        Ok(ToolResult::json(&json!({
            "ok": true,
            "id": bp.id,
            "warnings": warnings,
        })))
    }

    async fn run(&self, args: &Value) -> Result<ToolResult, JsonRpcError> {
        let id = required_str(args, "id")?;
        let params = optional_params(args)?;
        let bp = match self.store.load(&id) {
            Ok(bp) => bp,
            Err(e @ (StoreError::NotFound(_) | StoreError::Corrupt { .. })) => {
                return Ok(ToolResult::error(e.to_string()))
            }
            Err(e) => return Ok(ToolResult::error(e.to_string())),
        };
        let result = match self.engine.execute(&bp, &params).await {
            Ok(result) => result,
            Err(e) => return Ok(ToolResult::error(e.to_string())),
        };
        if let Err(e) = self.store.record_run(&result) {
            log::warn!("run {} completed but was not recorded: {e}", result.run_id);
        }
        Ok(ToolResult::json(
            &serde_json::to_value(&result).expect("run result serializes"),
        ))
    }

    async fn validate(&self, args: &Value) -> Result<ToolResult, JsonRpcError> {
        let bp_value = required_object(args, "blueprint")?;
        let report = match blueprint_from_value(bp_value) {
            Ok(bp) => {
                let mut report = validate_structure(&bp);
                report.extend(validate_tools(&bp, &self.pool.catalog()));
                report
            }
            Err(e) => ValidationReport {
                errors: vec![parse_issue(e.to_string())],
                warnings: vec![],
            },
        };
        Ok(ToolResult::json(
            &serde_json::to_value(&report).expect("report serializes"),
        ))
    }

    async fn list(&self) -> Result<ToolResult, JsonRpcError> {
        match self.store.list() {
            Ok(workflows) => Ok(ToolResult::json(&json!({ "workflows": workflows }))),
            Err(e) => Ok(ToolResult::error(e.to_string())),
        }
    }

    async fn get(&self, args: &Value) -> Result<ToolResult, JsonRpcError> {
        let id = required_str(args, "id")?;
        match self.store.load(&id) {
            Ok(bp) => Ok(ToolResult::json(&bp.to_value())),
            Err(e) => Ok(ToolResult::error(e.to_string())),
        }
    }

    async fn delete(&self, args: &Value) -> Result<ToolResult, JsonRpcError> {
        let id = required_str(args, "id")?;
        match self.store.delete(&id) {
            Ok(()) => Ok(ToolResult::json(&json!({ "ok": true, "id": id }))),
            Err(e) => Ok(ToolResult::error(e.to_string())),
        }
    }
}

fn parse_issue(message: String) -> Issue {
    Issue {
        path: "$".into(),
        code: "invalid-blueprint".into(),
        message,
    }
}

/// A blocked create: the structural errors, flagged at the protocol level.
fn blocked(errors: Vec<Issue>) -> ToolResult {
    let mut result = ToolResult::json(&json!({ "errors": errors }));
    result.is_error = true;
    result
}

fn required_str(args: &Value, key: &str) -> Result<String, JsonRpcError> {
    match args.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        _ => Err(JsonRpcError::new(
            INVALID_PARAMS,
            format!("'{key}' must be a string"),
        )),
    }
}

fn required_object(args: &Value, key: &str) -> Result<Value, JsonRpcError> {
    match args.get(key) {
        Some(v @ Value::Object(_)) => Ok(v.clone()),
        _ => Err(JsonRpcError::new(
            INVALID_PARAMS,
            format!("'{key}' must be an object"),
        )),
    }
}

fn optional_params(args: &Value) -> Result<Map<String, Value>, JsonRpcError> {
    match args.get("params") {
        None | Some(Value::Null) => Ok(Map::new()),
        Some(Value::Object(map)) => Ok(map.clone()),
        Some(_) => Err(JsonRpcError::new(
            INVALID_PARAMS,
            "'params' must be an object",
        )),
    }
}

fn tool(name: &str, description: &str, schema: Value) -> ToolDescriptor {
    ToolDescriptor {
        name: name.into(),
        description: description.into(),
        input_schema: schema,
    }
}

fn id_schema() -> Value {
    json!({
        "type": "object",
        "properties": { "id": { "type": "string" } },
        "required": ["id"]
    })
}

fn blueprint_schema() -> Value {
    json!({
        "type": "object",
        "properties": { "blueprint": { "type": "object" } },
        "required": ["blueprint"]
    })
}

#[async_trait]
impl McpService for Mediator {
    fn identity(&self) -> ServerIdentity {
        ServerIdentity {
            name: "weft-mediator".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    async fn list_tools(&self) -> Vec<ToolDescriptor> {
        vec![
            tool(
                "create_workflow",
                "Validate a workflow blueprint and save it for later runs. \
                 Structural errors block the save; unknown tools are warnings.",
                blueprint_schema(),
            ),
            tool(
                "run_workflow",
                "Execute a saved workflow by id with optional params, without \
                 any further agent involvement. Returns the full run result.",
                json!({
                    "type": "object",
                    "properties": {
                        "id": { "type": "string" },
                        "params": { "type": "object" }
                    },
                    "required": ["id"]
                }),
            ),
            tool(
                "list_workflows",
                "List saved workflows with id, description, version and step count.",
                json!({ "type": "object", "properties": {} }),
            ),
            tool(
                "get_workflow",
                "Fetch a saved workflow blueprint by id.",
                id_schema(),
            ),
            tool(
                "validate_workflow",
                "Run both validation tiers on a blueprint without saving it.",
                blueprint_schema(),
            ),
            tool(
                "delete_workflow",
                "Delete a saved workflow by id.",
                id_schema(),
            ),
        ]
    }

    async fn call_tool(&self, name: &str, arguments: Value) -> Result<ToolResult, JsonRpcError> {
        self.inbound_calls.fetch_add(1, Ordering::Relaxed);
        match name {
            "create_workflow" => self.create(&arguments).await,
            "run_workflow" => self.run(&arguments).await,
            "list_workflows" => self.list().await,
            "get_workflow" => self.get(&arguments).await,
            "validate_workflow" => self.validate(&arguments).await,
            "delete_workflow" => self.delete(&arguments).await,
            other => Err(JsonRpcError::new(
                INVALID_PARAMS,
                format!("unknown tool '{other}'"),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::{FixtureShape, GraphServer, ResourceServer};
    use crate::pool::pool_over_services;

    async fn mediator() -> (tempfile::TempDir, Arc<GraphServer>, Mediator) {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(WorkflowStore::open(dir.path()).unwrap());
        let graph = Arc::new(GraphServer::new());
        let resource = Arc::new(ResourceServer::new(FixtureShape::small(0)));
        let (pool, _logs) = pool_over_services(vec![
            ("resources", resource as Arc<dyn McpService>),
            ("graph", graph.clone() as Arc<dyn McpService>),
        ])
        .await
        .unwrap();
        (dir, graph, Mediator::new(store, Arc::new(pool)))
    }

    fn echo_blueprint() -> Value {
        json!({
            "id": "echo-demo",
            "description": "round-trip a message",
            "version": "1.0.0",
            "params": { "message": { "type": "string", "default": "hi" } },
            "steps": [
                { "id": "say", "type": "call", "tool": "echo",
                  "params": { "message": "{{params.message}}" } }
            ]
        })
    }

    fn value_of(result: &ToolResult) -> Value {
        serde_json::from_str(&result.text_content()).unwrap()
    }

    #[tokio::test]
    async fn tool_surface_is_exactly_the_six_workflow_tools() {
        let (_dir, _graph, mediator) = mediator().await;
        let names: Vec<String> = mediator
            .list_tools()
            .await
            .into_iter()
            .map(|t| t.name)
            .collect();
        assert_eq!(
            names,
            [
                "create_workflow",
                "run_workflow",
                "list_workflows",
                "get_workflow",
                "validate_workflow",
                "delete_workflow"
            ]
        );
        assert!(!names.iter().any(|n| n == "run_query" || n == "echo"));
    }

    #[tokio::test]
    async fn create_then_get_round_trips() {
        let (_dir, _graph, mediator) = mediator().await;
        let created = mediator
            .call_tool("create_workflow", json!({ "blueprint": echo_blueprint() }))
            .await
            .unwrap();
        assert!(!created.is_error);
        let body = value_of(&created);
        assert_eq!(body["ok"], json!(true));
        assert_eq!(body["warnings"], json!([]));

        let got = mediator
            .call_tool("get_workflow", json!({ "id": "echo-demo" }))
            .await
            .unwrap();
        assert_eq!(value_of(&got), echo_blueprint());
    }

    #[tokio::test]
    async fn unknown_tool_in_blueprint_warns_but_saves() {
        let (_dir, _graph, mediator) = mediator().await;
        let mut bp = echo_blueprint();
        bp["steps"][0]["tool"] = json!("no_such_tool");
        let created = mediator
            .call_tool("create_workflow", json!({ "blueprint": bp }))
            .await
            .unwrap();
        assert!(!created.is_error);
        let body = value_of(&created);
        assert_eq!(body["ok"], json!(true));
        assert_eq!(body["warnings"].as_array().unwrap().len(), 1);
        assert_eq!(body["warnings"][0]["code"], json!("tool-not-found"));
        assert_eq!(mediator.store().list().unwrap().len(), 1);
    }

    #[tokio::test]
    async fn structural_errors_block_and_nothing_is_saved() {
        let (_dir, _graph, mediator) = mediator().await;
        let mut bp = echo_blueprint();
        let step = bp["steps"][0].clone();
        bp["steps"].as_array_mut().unwrap().push(step);
        let created = mediator
            .call_tool("create_workflow", json!({ "blueprint": bp }))
            .await
            .unwrap();
        assert!(created.is_error);
        let body = value_of(&created);
        assert!(!body["errors"].as_array().unwrap().is_empty());
        assert!(mediator.store().list().unwrap().is_empty());
    }

    #[tokio::test]
    async fn run_returns_the_full_result_and_records_it() {
        let (_dir, _graph, mediator) = mediator().await;
        mediator
            .call_tool("create_workflow", json!({ "blueprint": echo_blueprint() }))
            .await
            .unwrap();
        let run = mediator
            .call_tool(
                "run_workflow",
                json!({ "id": "echo-demo", "params": { "message": "ping" } }),
            )
            .await
            .unwrap();
        assert!(!run.is_error);
        let body = value_of(&run);
        assert_eq!(body["status"], json!("success"));
        assert_eq!(body["workflowId"], json!("echo-demo"));
        assert_eq!(body["stepResults"][0]["output"]["message"], json!("ping"));

        let runs_dir = mediator.store().root().join("runs");
        let recorded: Vec<_> = std::fs::read_dir(runs_dir).unwrap().collect();
        assert_eq!(recorded.len(), 1);
        assert_eq!(mediator.inbound_tool_calls(), 2);
    }

    #[tokio::test]
    async fn run_unknown_id_is_an_in_band_error() {
        let (_dir, _graph, mediator) = mediator().await;
        let run = mediator
            .call_tool("run_workflow", json!({ "id": "ghost" }))
            .await
            .unwrap();
        assert!(run.is_error);
        assert!(run.text_content().contains("ghost"));
    }

    #[tokio::test]
    async fn run_with_bad_param_type_is_an_in_band_error() {
        let (_dir, _graph, mediator) = mediator().await;
        mediator
            .call_tool("create_workflow", json!({ "blueprint": echo_blueprint() }))
            .await
            .unwrap();
        let run = mediator
            .call_tool(
                "run_workflow",
                json!({ "id": "echo-demo", "params": { "message": 7 } }),
            )
            .await
            .unwrap();
        assert!(run.is_error);
        assert!(run.text_content().contains("message"));
    }

    #[tokio::test]
    async fn graph_param_override_reaches_the_downstream_server() {
        let (_dir, graph, mediator) = mediator().await;
        let bp = json!({
            "id": "merge-one",
            "params": { "graph": { "type": "string", "default": "cmdb-prod" } },
            "steps": [
                { "id": "merge", "type": "call", "tool": "run_query",
                  "params": {
                      "graph": "{{params.graph}}",
                      "query": "MERGE (c:Cluster {uid: \"cluster-1\"})"
                  } }
            ]
        });
        mediator
            .call_tool("create_workflow", json!({ "blueprint": bp }))
            .await
            .unwrap();
        let run = mediator
            .call_tool(
                "run_workflow",
                json!({ "id": "merge-one", "params": { "graph": "cmdb-staging" } }),
            )
            .await
            .unwrap();
        assert!(!run.is_error);
        assert!(graph.graphs_seen().contains(&"cmdb-staging".to_owned()));
    }

    #[tokio::test]
    async fn validate_reports_both_tiers_without_saving() {
        let (_dir, _graph, mediator) = mediator().await;
        let mut bp = echo_blueprint();
        bp["steps"][0]["tool"] = json!("no_such_tool");
        let report = mediator
            .call_tool("validate_workflow", json!({ "blueprint": bp }))
            .await
            .unwrap();
        assert!(!report.is_error);
        let body = value_of(&report);
        assert_eq!(body["errors"], json!([]));
        assert_eq!(body["warnings"].as_array().unwrap().len(), 1);
        assert!(mediator.store().list().unwrap().is_empty());
    }

    #[tokio::test]
    async fn list_delete_get_lifecycle() {
        let (_dir, _graph, mediator) = mediator().await;
        mediator
            .call_tool("create_workflow", json!({ "blueprint": echo_blueprint() }))
            .await
            .unwrap();
        let listed = value_of(
            &mediator
                .call_tool("list_workflows", json!({}))
                .await
                .unwrap(),
        );
        assert_eq!(listed["workflows"][0]["id"], json!("echo-demo"));
        assert_eq!(listed["workflows"][0]["stepCount"], json!(1));

        let deleted = mediator
            .call_tool("delete_workflow", json!({ "id": "echo-demo" }))
            .await
            .unwrap();
        assert!(!deleted.is_error);

        let got = mediator
            .call_tool("get_workflow", json!({ "id": "echo-demo" }))
            .await
            .unwrap();
        assert!(got.is_error);

        let deleted_again = mediator
            .call_tool("delete_workflow", json!({ "id": "echo-demo" }))
            .await
            .unwrap();
        assert!(deleted_again.is_error);
    }

    #[tokio::test]
    async fn unparseable_blueprint_validates_to_a_parse_error() {
        let (_dir, _graph, mediator) = mediator().await;
        let report = value_of(
            &mediator
                .call_tool(
                    "validate_workflow",
                    json!({ "blueprint": { "steps": [] } }),
                )
                .await
                .unwrap(),
        );
        assert_eq!(report["errors"].as_array().unwrap().len(), 1);
        assert_eq!(report["errors"][0]["code"], json!("invalid-blueprint"));
    }

    #[tokio::test]
    async fn malformed_arguments_are_protocol_errors() {
        let (_dir, _graph, mediator) = mediator().await;
        assert!(mediator
            .call_tool("run_workflow", json!({}))
            .await
            .is_err());
        assert!(mediator
            .call_tool("create_workflow", json!({ "blueprint": 4 }))
            .await
            .is_err());
        assert!(mediator
            .call_tool("no_such_workflow_tool", json!({}))
            .await
            .is_err());
    }
}
