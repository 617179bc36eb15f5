//! Blueprint execution: sequential top-level steps, per-primitive executors,
//! context accumulation, and error strategies.
//!
//! Step failures are data, never exceptions. Each step produces a
//! [`StepResult`]; the run aggregates them into a [`RunResult`] whose status
//! is `success` (no errors), `partial` (errors under `continue`), or
//! `failure` (aborted). Retry wraps individual tool calls only: a failing
//! call is re-attempted up to `maxRetries` times with a fixed
//! `retryDelayMs` pause, then the run proceeds as `continue` would unless
//! `retryThenAbort` is set.

use std::sync::Arc;
use std::time::Instant;

use futures::future::{join_all, BoxFuture, FutureExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::blueprint::{
    CallStep, CollectStep, ErrorStrategy, FailureMode, LoopStep, ParallelStep, PipeStep, Step,
    WorkflowBlueprint,
};
use crate::pool::ClientPool;
use crate::resolver::{resolve_value, ResolverContext};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParamError {
    #[error("unknown param '{0}'")]
    Unknown(String),
    #[error("param '{name}' expects a {expected}")]
    TypeMismatch { name: String, expected: &'static str },
    #[error("missing required param '{0}'")]
    MissingRequired(String),
}

/// Overlay `given` onto the blueprint's declared params.
///
/// Given values override defaults; a declared param with neither is an error
/// unless marked `required: false`. Unknown keys and type mismatches are
/// rejected outright.
pub fn merge_params(
    bp: &WorkflowBlueprint,
    given: &Map<String, Value>,
) -> Result<Map<String, Value>, ParamError> {
    for key in given.keys() {
        if !bp.params.contains_key(key) {
            return Err(ParamError::Unknown(key.clone()));
        }
    }
    let mut merged = Map::new();
    for (name, spec) in &bp.params {
        let value = given.get(name).cloned().or_else(|| spec.default.clone());
        match value {
            Some(v) => {
                if !spec.param_type.matches(&v) {
                    return Err(ParamError::TypeMismatch {
                        name: name.clone(),
                        expected: spec.param_type.name(),
                    });
                }
                merged.insert(name.clone(), v);
            }
            None => {
                if spec.is_required() {
                    return Err(ParamError::MissingRequired(name.clone()));
                }
            }
        }
    }
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    Ok,
    Error,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepError {
    pub message: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    #[serde(rename = "stepId")]
    pub step_id: String,
    pub status: StepStatus,
    pub output: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StepError>,
    #[serde(rename = "durationMs")]
    pub duration_ms: u64,
    pub attempts: u32,
    /// Set by the store when a recorded output was cut down to the size cap.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl StepResult {
    fn ok(id: &str, output: Value, attempts: u32, started: Instant) -> Self {
        Self {
            step_id: id.to_owned(),
            status: StepStatus::Ok,
            output,
            error: None,
            duration_ms: started.elapsed().as_millis() as u64,
            attempts,
            truncated: false,
        }
    }

    fn failed(id: &str, message: String, attempts: u32, started: Instant) -> Self {
        Self {
            step_id: id.to_owned(),
            status: StepStatus::Error,
            output: Value::Null,
            error: Some(StepError { message, attempts }),
            duration_ms: started.elapsed().as_millis() as u64,
            attempts,
            truncated: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Success,
    Failure,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    #[serde(rename = "runId")]
    pub run_id: String,
    #[serde(rename = "workflowId")]
    pub workflow_id: String,
    pub status: RunStatus,
    #[serde(rename = "stepResults")]
    pub step_results: Vec<StepResult>,
    #[serde(
        rename = "collectedErrors",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub collected_errors: Option<Vec<Value>>,
    #[serde(rename = "startedAt")]
    pub started_at: String,
    #[serde(rename = "finishedAt")]
    pub finished_at: String,
}

#[derive(Debug, Clone)]
pub struct EngineOptions {
    /// Upper bound on simultaneous downstream tool calls per engine.
    pub max_concurrency: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { max_concurrency: 8 }
    }
}

/// Does a step failure halt the whole run?
fn halts_on_error(strategy: &ErrorStrategy) -> bool {
    match strategy.on_step_failure {
        FailureMode::Abort => true,
        FailureMode::Continue => false,
        FailureMode::Retry => strategy.retry_then_abort,
    }
}

fn sink_record(step_id: &str, message: &str, attempts: u32) -> Value {
    json!({"stepId": step_id, "message": message, "attempts": attempts})
}

pub struct Engine {
    pool: Arc<ClientPool>,
    limiter: Arc<Semaphore>,
    options: EngineOptions,
}

impl Engine {
    pub fn new(pool: Arc<ClientPool>) -> Self {
        Self::with_options(pool, EngineOptions::default())
    }

    pub fn with_options(pool: Arc<ClientPool>, options: EngineOptions) -> Self {
        Self {
            limiter: Arc::new(Semaphore::new(options.max_concurrency.max(1))),
            pool,
            options,
        }
    }

    pub fn options(&self) -> &EngineOptions {
        &self.options
    }

    /// Run a blueprint to completion. Step failures land in the result;
    /// only bad params error out of band.
    pub async fn execute(
        &self,
        bp: &WorkflowBlueprint,
        given: &Map<String, Value>,
    ) -> Result<RunResult, ParamError> {
        let params = merge_params(bp, given)?;
        let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        let mut ctx = ResolverContext::with_params(params);
        let mut sink = Vec::new();
        let mut step_results: Vec<StepResult> = Vec::new();
        let strategy = &bp.error_strategy;
        let mut aborted = false;

        for step in &bp.steps {
            let result = self.exec_step(step, &mut ctx, &mut sink, strategy).await;
            let failed = result.status == StepStatus::Error;
            if result.status == StepStatus::Ok {
                ctx.steps
                    .insert(result.step_id.clone(), result.output.clone());
            }
            step_results.push(result);
            if failed && halts_on_error(strategy) {
                aborted = true;
                break;
            }
        }

        let any_error = step_results
            .iter()
            .any(|r| r.status == StepStatus::Error);
        let status = if aborted {
            RunStatus::Failure
        } else if any_error {
            RunStatus::Partial
        } else {
            RunStatus::Success
        };
        Ok(RunResult {
            run_id: uuid::Uuid::new_v4().to_string(),
            workflow_id: bp.id.clone(),
            status,
            step_results,
            collected_errors: strategy.collect_errors.then_some(sink),
            started_at,
            finished_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        })
    }

    fn exec_step<'a>(
        &'a self,
        step: &'a Step,
        ctx: &'a mut ResolverContext,
        sink: &'a mut Vec<Value>,
        strategy: &'a ErrorStrategy,
    ) -> BoxFuture<'a, StepResult> {
        async move {
            match step {
                Step::Call(s) => self.exec_call(s, ctx, sink, strategy).await,
                Step::Loop(s) => self.exec_loop(s, ctx, sink, strategy).await,
                Step::Parallel(s) => self.exec_parallel(s, ctx, sink, strategy).await,
                Step::Pipe(s) => self.exec_pipe(s, ctx, sink, strategy).await,
                Step::Collect(s) => self.exec_collect(s, ctx, sink, strategy).await,
            }
        }
        .boxed()
    }

    async fn exec_call(
        &self,
        s: &CallStep,
        ctx: &ResolverContext,
        sink: &mut Vec<Value>,
        strategy: &ErrorStrategy,
    ) -> StepResult {
        let started = Instant::now();
        let resolved = match resolve_value(&s.params, ctx) {
            Ok(v) => v,
            Err(e) => {
                let message = format!("template resolution failed: {e}");
                sink.push(sink_record(&s.id, &message, 1));
                return StepResult::failed(&s.id, message, 1, started);
            }
        };
        let max_attempts = match strategy.on_step_failure {
            FailureMode::Retry => strategy.max_retries.saturating_add(1).max(1),
            _ => 1,
        };
        let mut attempts = 0;
        let mut last_error = String::new();
        while attempts < max_attempts {
            attempts += 1;
            let outcome = {
                let _permit = self.limiter.acquire().await.expect("limiter never closes");
                self.pool.call_tool(&s.tool, resolved.clone()).await
            };
            if outcome.ok {
                return StepResult::ok(&s.id, outcome.content, attempts, started);
            }
            last_error = outcome.message();
            // routing failures are deterministic; retrying them is pointless
            if last_error.starts_with("tool-not-found") || last_error.starts_with("ambiguous-tool")
            {
                break;
            }
            if attempts < max_attempts {
                tokio::time::sleep(std::time::Duration::from_millis(strategy.retry_delay_ms))
                    .await;
            }
        }
        sink.push(sink_record(&s.id, &last_error, attempts));
        StepResult::failed(&s.id, last_error, attempts, started)
    }

    async fn exec_loop(
        &self,
        s: &LoopStep,
        ctx: &mut ResolverContext,
        sink: &mut Vec<Value>,
        strategy: &ErrorStrategy,
    ) -> StepResult {
        let started = Instant::now();
        let over = match resolve_value(&Value::String(s.over.clone()), ctx) {
            Ok(v) => v,
            Err(e) => {
                let message = format!("over: template resolution failed: {e}");
                sink.push(sink_record(&s.id, &message, 1));
                return StepResult::failed(&s.id, message, 1, started);
            }
        };
        let Value::Array(items) = over else {
            let message = format!(
                "type-mismatch: over must resolve to an array, got {}",
                kind_of(&over)
            );
            sink.push(sink_record(&s.id, &message, 1));
            return StepResult::failed(&s.id, message, 1, started);
        };
        let Some(body) = s.body.as_deref() else {
            let message = "loop has no do step".to_owned();
            sink.push(sink_record(&s.id, &message, 1));
            return StepResult::failed(&s.id, message, 1, started);
        };

        let total = items.len();
        let mut outputs = Vec::with_capacity(total);
        let mut failures = 0usize;
        for item in items {
            let mut iter_ctx = ctx.clone();
            iter_ctx.bindings.insert(s.bind.clone(), item);
            let result = self.exec_step(body, &mut iter_ctx, sink, strategy).await;
            match result.status {
                StepStatus::Ok => outputs.push(result.output),
                _ => {
                    failures += 1;
                    let message = result
                        .error
                        .map(|e| e.message)
                        .unwrap_or_else(|| "step failed".to_owned());
                    outputs.push(json!({"error": message}));
                    if halts_on_error(strategy) {
                        break;
                    }
                }
            }
        }
        if failures > 0 {
            let mut result = StepResult::failed(
                &s.id,
                format!("{failures} of {total} iterations failed"),
                1,
                started,
            );
            result.output = Value::Array(outputs);
            result
        } else {
            StepResult::ok(&s.id, Value::Array(outputs), 1, started)
        }
    }

    async fn exec_parallel(
        &self,
        s: &ParallelStep,
        ctx: &mut ResolverContext,
        sink: &mut Vec<Value>,
        strategy: &ErrorStrategy,
    ) -> StepResult {
        let started = Instant::now();
        let futures: Vec<_> = s
            .branches
            .iter()
            .map(|branch| {
                let mut branch_ctx = ctx.clone();
                async move {
                    let mut branch_sink = Vec::new();
                    let result = self
                        .exec_step(branch, &mut branch_ctx, &mut branch_sink, strategy)
                        .await;
                    (result, branch_sink)
                }
            })
            .collect();
        // all-settled: every branch runs to completion before any verdict
        let settled = join_all(futures).await;

        let total = settled.len();
        let mut outputs = Vec::with_capacity(total);
        let mut failures = 0usize;
        for (result, branch_sink) in settled {
            sink.extend(branch_sink);
            match result.status {
                StepStatus::Ok => {
                    ctx.steps
                        .insert(result.step_id.clone(), result.output.clone());
                    outputs.push(result.output);
                }
                _ => {
                    failures += 1;
                    let message = result
                        .error
                        .map(|e| e.message)
                        .unwrap_or_else(|| "branch failed".to_owned());
                    outputs.push(json!({"stepId": result.step_id, "error": message}));
                }
            }
        }
        if failures > 0 {
            let mut result = StepResult::failed(
                &s.id,
                format!("{failures} of {total} branches failed"),
                1,
                started,
            );
            result.output = Value::Array(outputs);
            result
        } else {
            StepResult::ok(&s.id, Value::Array(outputs), 1, started)
        }
    }

    async fn exec_pipe(
        &self,
        s: &PipeStep,
        ctx: &mut ResolverContext,
        sink: &mut Vec<Value>,
        strategy: &ErrorStrategy,
    ) -> StepResult {
        let started = Instant::now();
        let saved_prev = ctx.bindings.get("prev").cloned();
        let mut last_output = Value::Null;
        let mut failure = None;
        for inner in &s.steps {
            let result = self.exec_step(inner, ctx, sink, strategy).await;
            match result.status {
                StepStatus::Ok => {
                    ctx.steps
                        .insert(result.step_id.clone(), result.output.clone());
                    ctx.bindings
                        .insert("prev".to_owned(), result.output.clone());
                    last_output = result.output;
                }
                _ => {
                    // the pipe is a chain: a broken link ends it
                    let message = result
                        .error
                        .map(|e| e.message)
                        .unwrap_or_else(|| "step failed".to_owned());
                    failure = Some(format!("inner step '{}' failed: {message}", result.step_id));
                    break;
                }
            }
        }
        match saved_prev {
            Some(v) => {
                ctx.bindings.insert("prev".to_owned(), v);
            }
            None => {
                ctx.bindings.remove("prev");
            }
        }
        match failure {
            Some(message) => StepResult::failed(&s.id, message, 1, started),
            None => StepResult::ok(&s.id, last_output, 1, started),
        }
    }

    async fn exec_collect(
        &self,
        s: &CollectStep,
        ctx: &mut ResolverContext,
        _sink: &mut Vec<Value>,
        strategy: &ErrorStrategy,
    ) -> StepResult {
        let started = Instant::now();
        // inner failures stay inside the batch: local sink, never the run's
        let mut local_sink = Vec::new();
        let mut ok_outputs = Vec::new();
        let mut errors = Vec::new();
        for inner in &s.steps {
            let result = self
                .exec_step(inner, ctx, &mut local_sink, strategy)
                .await;
            match result.status {
                StepStatus::Ok => {
                    ctx.steps
                        .insert(result.step_id.clone(), result.output.clone());
                    ok_outputs.push(result.output);
                }
                _ => {
                    let message = result
                        .error
                        .as_ref()
                        .map(|e| e.message.clone())
                        .unwrap_or_else(|| "step failed".to_owned());
                    errors.push(json!({
                        "stepId": result.step_id,
                        "message": message,
                        "attempts": result.attempts,
                    }));
                }
            }
        }
        let mut batch = Map::new();
        batch.insert(s.into.clone(), Value::Array(ok_outputs));
        batch.insert("errors".to_owned(), Value::Array(errors));
        StepResult::ok(&s.id, Value::Object(batch), 1, started)
    }
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blueprint::{parse_blueprint, ParamSpec, ParamType};
    use crate::mock::{FixtureShape, GraphServer, ResourceServer};
    use crate::pool::pool_over_services;
    use crate::rpc::McpService;
    use std::collections::BTreeMap;

    async fn engine() -> (Engine, std::collections::BTreeMap<String, Arc<crate::transport::MessageLog>>)
    {
        let (pool, logs) = pool_over_services(vec![
            (
                "k8s",
                Arc::new(ResourceServer::new(FixtureShape::small(0))) as Arc<dyn McpService>,
            ),
            ("graph", Arc::new(GraphServer::new()) as Arc<dyn McpService>),
        ])
        .await
        .unwrap();
        (Engine::new(Arc::new(pool)), logs)
    }

    fn bp(json_text: &str) -> crate::blueprint::WorkflowBlueprint {
        parse_blueprint(json_text).unwrap()
    }

    fn no_params() -> Map<String, Value> {
        Map::new()
    }

    #[tokio::test]
    async fn empty_blueprint_succeeds() {
        let (engine, _) = engine().await;
        let bp = bp(r#"{"id": "empty", "steps": []}"#);
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(run.status, RunStatus::Success);
        assert!(run.step_results.is_empty());
        assert!(run.collected_errors.is_none());
    }

    #[tokio::test]
    async fn call_resolves_params_against_declared_params() {
        let (engine, _) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "params": {"graph": {"type": "string", "default": "g1"}},
              "steps": [{"type": "call", "id": "a", "tool": "echo", "params": {"msg": "{{params.graph}}"}}]
            }"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(run.status, RunStatus::Success);
        assert_eq!(run.step_results[0].output, json!({"msg": "g1"}));
        assert_eq!(run.step_results[0].attempts, 1);
    }

    #[tokio::test]
    async fn abort_stops_at_first_error() {
        let (engine, _) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "steps": [
                {"type": "call", "id": "a", "tool": "no_such_tool", "params": {}},
                {"type": "call", "id": "b", "tool": "echo", "params": {}}
              ]
            }"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(run.status, RunStatus::Failure);
        assert_eq!(run.step_results.len(), 1);
        let error = run.step_results[0].error.as_ref().unwrap();
        assert!(error.message.starts_with("tool-not-found"), "{}", error.message);
    }

    #[tokio::test]
    async fn continue_records_errors_and_proceeds() {
        let (engine, _) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "errorStrategy": {"onStepFailure": "continue", "collectErrors": true},
              "steps": [
                {"type": "call", "id": "a", "tool": "no_such_tool", "params": {}},
                {"type": "call", "id": "b", "tool": "echo", "params": {"v": 1}}
              ]
            }"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(run.status, RunStatus::Partial);
        assert_eq!(run.step_results.len(), 2);
        assert_eq!(run.step_results[1].status, StepStatus::Ok);
        let collected = run.collected_errors.unwrap();
        assert_eq!(collected.len(), 1);
        assert_eq!(collected[0]["stepId"], "a");
    }

    #[tokio::test]
    async fn retry_reaches_success_on_third_attempt() {
        let (engine, _) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "errorStrategy": {"onStepFailure": "retry", "maxRetries": 2, "retryDelayMs": 5},
              "steps": [{"type": "call", "id": "a", "tool": "fail_n_times", "params": {"n": 2, "key": "retry-test"}}]
            }"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(run.status, RunStatus::Success);
        let result = &run.step_results[0];
        assert_eq!(result.status, StepStatus::Ok);
        assert!(result.error.is_none());
        assert_eq!(result.attempts, 3);
    }

    #[tokio::test]
    async fn retry_exhaustion_degrades_to_continue() {
        let (engine, _) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "errorStrategy": {"onStepFailure": "retry", "maxRetries": 1, "retryDelayMs": 5},
              "steps": [
                {"type": "call", "id": "a", "tool": "fail_n_times", "params": {"n": 9, "key": "exhaust"}},
                {"type": "call", "id": "b", "tool": "echo", "params": {}}
              ]
            }"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(run.status, RunStatus::Partial);
        assert_eq!(run.step_results.len(), 2);
        assert_eq!(run.step_results[0].attempts, 2);
        assert_eq!(run.step_results[1].status, StepStatus::Ok);
    }

    #[tokio::test]
    async fn retry_then_abort_halts_after_exhaustion() {
        let (engine, _) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "errorStrategy": {"onStepFailure": "retry", "maxRetries": 1, "retryDelayMs": 5, "retryThenAbort": true},
              "steps": [
                {"type": "call", "id": "a", "tool": "fail_n_times", "params": {"n": 9, "key": "exhaust2"}},
                {"type": "call", "id": "b", "tool": "echo", "params": {}}
              ]
            }"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(run.status, RunStatus::Failure);
        assert_eq!(run.step_results.len(), 1);
    }

    #[tokio::test]
    async fn loop_expands_in_order() {
        let (engine, logs) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "params": {"items": {"type": "array", "default": ["a", "b", "c"]}},
              "steps": [{
                "type": "loop", "id": "l", "over": "{{params.items}}", "as": "item",
                "do": {"type": "call", "id": "l_one", "tool": "echo", "params": {"v": "{{item}}"}}
              }]
            }"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(run.status, RunStatus::Success);
        assert_eq!(
            run.step_results[0].output,
            json!([{"v": "a"}, {"v": "b"}, {"v": "c"}])
        );
        // initialize handshake aside, each iteration is one downstream call
        assert_eq!(logs["k8s"].count("tools/call"), 3);
    }

    #[tokio::test]
    async fn empty_loop_makes_no_calls() {
        let (engine, logs) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "params": {"items": {"type": "array", "default": []}},
              "steps": [{
                "type": "loop", "id": "l", "over": "{{params.items}}", "as": "item",
                "do": {"type": "call", "id": "l_one", "tool": "echo", "params": {}}
              }]
            }"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(run.step_results[0].output, json!([]));
        assert_eq!(logs["k8s"].count("tools/call"), 0);
    }

    #[tokio::test]
    async fn loop_over_non_array_is_type_mismatch() {
        let (engine, _) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "params": {"s": {"type": "string", "default": "oops"}},
              "steps": [{
                "type": "loop", "id": "l", "over": "{{params.s}}", "as": "item",
                "do": {"type": "call", "id": "l_one", "tool": "echo", "params": {}}
              }]
            }"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(run.status, RunStatus::Failure);
        let error = run.step_results[0].error.as_ref().unwrap();
        assert!(error.message.starts_with("type-mismatch"), "{}", error.message);
    }

    #[tokio::test]
    async fn parallel_settles_all_branches_and_publishes_outputs() {
        let (engine, _) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "errorStrategy": {"onStepFailure": "continue"},
              "steps": [
                {"type": "parallel", "id": "p", "branches": [
                  {"type": "call", "id": "good", "tool": "echo", "params": {"v": 1}},
                  {"type": "call", "id": "bad", "tool": "no_such_tool", "params": {}}
                ]},
                {"type": "call", "id": "after", "tool": "echo", "params": {"from": "{{steps.good.v}}"}}
              ]
            }"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(run.status, RunStatus::Partial);
        let p = &run.step_results[0];
        assert_eq!(p.status, StepStatus::Error);
        assert_eq!(p.output[0], json!({"v": 1}));
        assert_eq!(p.output[1]["stepId"], "bad");
        // the ok branch's output was published for later steps
        assert_eq!(run.step_results[1].output, json!({"from": 1}));
    }

    #[tokio::test]
    async fn parallel_branches_cannot_see_each_other() {
        let (engine, _) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "errorStrategy": {"onStepFailure": "continue"},
              "steps": [{
                "type": "parallel", "id": "p", "branches": [
                  {"type": "call", "id": "one", "tool": "echo", "params": {"v": 1}},
                  {"type": "call", "id": "two", "tool": "echo", "params": {"peek": "{{steps.one}}"}}
                ]
              }]
            }"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        let p = &run.step_results[0];
        // branch two failed to resolve steps.one: sibling isolation
        assert_eq!(p.output[1]["stepId"], "two");
        assert!(p.output[1]["error"]
            .as_str()
            .unwrap()
            .contains("template resolution failed"));
    }

    #[tokio::test]
    async fn pipe_chains_prev_and_stops_on_failure() {
        let (engine, logs) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "errorStrategy": {"onStepFailure": "continue"},
              "steps": [{
                "type": "pipe", "id": "p", "steps": [
                  {"type": "call", "id": "a", "tool": "echo", "params": {"count": 5}},
                  {"type": "call", "id": "b", "tool": "echo", "params": {"v": "{{prev.count}}"}},
                  {"type": "call", "id": "c", "tool": "no_such_tool", "params": {}},
                  {"type": "call", "id": "d", "tool": "echo", "params": {}}
                ]
              }]
            }"#,
        );
        let before = logs["k8s"].count("tools/call");
        assert_eq!(before, 0);
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(run.status, RunStatus::Partial);
        let p = &run.step_results[0];
        assert_eq!(p.status, StepStatus::Error);
        assert!(p.error.as_ref().unwrap().message.contains("'c'"));
        // a and b ran; d never did
        assert_eq!(logs["k8s"].count("tools/call"), 2);
    }

    #[tokio::test]
    async fn single_step_pipe_equals_that_step() {
        let (engine, _) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "steps": [{
                "type": "pipe", "id": "p", "steps": [
                  {"type": "call", "id": "a", "tool": "echo", "params": {"v": 7}}
                ]
              }]
            }"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(run.step_results[0].output, json!({"v": 7}));
    }

    #[tokio::test]
    async fn collect_batches_outputs_and_errors_without_aborting() {
        let (engine, _) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "errorStrategy": {"onStepFailure": "abort", "collectErrors": true},
              "steps": [{
                "type": "collect", "id": "c", "into": "logs", "steps": [
                  {"type": "call", "id": "a", "tool": "echo", "params": {"v": 1}},
                  {"type": "call", "id": "bad", "tool": "no_such_tool", "params": {}},
                  {"type": "call", "id": "b", "tool": "echo", "params": {"v": 2}}
                ]
              }]
            }"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        // inner failure is contained: the run is a success and the sink is empty
        assert_eq!(run.status, RunStatus::Success);
        assert_eq!(run.collected_errors.unwrap().len(), 0);
        let output = &run.step_results[0].output;
        assert_eq!(output["logs"], json!([{"v": 1}, {"v": 2}]));
        assert_eq!(output["errors"].as_array().unwrap().len(), 1);
        assert_eq!(output["errors"][0]["stepId"], "bad");
    }

    #[tokio::test]
    async fn empty_collect_yields_empty_batch() {
        let (engine, _) = engine().await;
        let bp = bp(
            r#"{"id": "w", "steps": [{"type": "collect", "id": "c", "into": "logs", "steps": []}]}"#,
        );
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(
            run.step_results[0].output,
            json!({"logs": [], "errors": []})
        );
    }

    #[test]
    fn merge_params_overrides_defaults_and_rejects_junk() {
        let mut params = BTreeMap::new();
        params.insert(
            "graph".to_owned(),
            ParamSpec {
                param_type: ParamType::String,
                default: Some(json!("cmdb-prod")),
                required: None,
            },
        );
        let bp = WorkflowBlueprint {
            id: "w".into(),
            description: None,
            version: None,
            params,
            error_strategy: ErrorStrategy::default(),
            steps: vec![],
        };

        let given: Map<String, Value> =
            serde_json::from_value(json!({"graph": "cmdb-staging"})).unwrap();
        let merged = merge_params(&bp, &given).unwrap();
        assert_eq!(merged["graph"], "cmdb-staging");

        let merged = merge_params(&bp, &Map::new()).unwrap();
        assert_eq!(merged["graph"], "cmdb-prod");

        let given: Map<String, Value> = serde_json::from_value(json!({"bogus": 1})).unwrap();
        assert_eq!(
            merge_params(&bp, &given),
            Err(ParamError::Unknown("bogus".into()))
        );

        let given: Map<String, Value> = serde_json::from_value(json!({"graph": 7})).unwrap();
        assert!(matches!(
            merge_params(&bp, &given),
            Err(ParamError::TypeMismatch { .. })
        ));
    }

    #[test]
    fn merge_params_requires_defaultless_params() {
        let mut params = BTreeMap::new();
        params.insert(
            "target".to_owned(),
            ParamSpec {
                param_type: ParamType::String,
                default: None,
                required: None,
            },
        );
        let bp = WorkflowBlueprint {
            id: "w".into(),
            description: None,
            version: None,
            params,
            error_strategy: ErrorStrategy::default(),
            steps: vec![],
        };
        assert_eq!(
            merge_params(&bp, &Map::new()),
            Err(ParamError::MissingRequired("target".into()))
        );
    }

    #[tokio::test]
    async fn runs_are_deterministic_modulo_identity() {
        let (engine, _) = engine().await;
        let bp = bp(
            r#"{
              "id": "w",
              "steps": [
                {"type": "call", "id": "ns", "tool": "list_namespaces", "params": {}},
                {"type": "loop", "id": "l", "over": "{{steps.ns}}", "as": "n",
                 "do": {"type": "call", "id": "l_one", "tool": "echo", "params": {"ns": "{{n}}"}}}
              ]
            }"#,
        );
        let run1 = engine.execute(&bp, &no_params()).await.unwrap();
        let run2 = engine.execute(&bp, &no_params()).await.unwrap();
        let strip = |run: &RunResult| {
            run.step_results
                .iter()
                .map(|r| (r.step_id.clone(), r.status, r.output.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&run1), strip(&run2));
        assert_ne!(run1.run_id, run2.run_id);
    }

    #[tokio::test]
    async fn desk_sync_builds_the_expected_graph() {
        let shape = crate::mock::SyncShape::desk(0);
        let resource = Arc::new(ResourceServer::new(shape.fixture.clone()));
        let graph = Arc::new(GraphServer::new());
        let (pool, logs) = pool_over_services(vec![
            ("k8s", resource.clone() as Arc<dyn McpService>),
            ("graph", graph.clone() as Arc<dyn McpService>),
        ])
        .await
        .unwrap();
        let engine = Engine::new(Arc::new(pool));
        let bp = crate::mock::make_sync_blueprint(&shape);
        let run = engine.execute(&bp, &no_params()).await.unwrap();
        for result in &run.step_results {
            assert_eq!(
                result.status,
                StepStatus::Ok,
                "step {} failed: {:?}",
                result.step_id,
                result.error
            );
        }
        assert_eq!(run.status, RunStatus::Success);
        assert_eq!(run.step_results.len(), 30);

        // oracle: walk the fixture directly
        let fixture = resource.fixture();
        let namespaces = fixture.namespaces();
        let per_kind: usize = ["Deployment", "ReplicaSet", "Pod", "Service"]
            .iter()
            .map(|k| fixture.total(k))
            .sum();
        let expected_nodes = 1 + 2 + 2 + 4 + 1 + namespaces.len() + per_kind;
        let expected_rels = 2                       // HAS_NODE
            + namespaces.len()                      // HAS_NAMESPACE
            + fixture.total("Deployment")           // CONTAINS_DEPLOYMENT
            + fixture.total("ReplicaSet")           // MANAGES_REPLICASET
            + fixture.total("Pod")                  // MANAGES_POD
            + fixture.total("Pod")                  // SCHEDULED_ON
            + fixture.total("Service")              // EXPOSES_VIA_SERVICE
            + fixture.total("Service");             // CONTAINS_SERVICE
        let snapshot = graph.snapshot();
        assert_eq!(snapshot.node_count(), expected_nodes);
        assert_eq!(snapshot.rel_count(), expected_rels);

        // the audit step saw the same totals
        let audit = &run.step_results.last().unwrap().output;
        assert_eq!(audit["nodes"], json!(expected_nodes));
        assert_eq!(audit["relationships"], json!(expected_rels));

        // idempotency: a second run changes nothing
        let calls_before = logs["graph"].count("tools/call");
        let rerun = engine.execute(&bp, &no_params()).await.unwrap();
        assert_eq!(rerun.status, RunStatus::Success);
        let snapshot2 = graph.snapshot();
        assert_eq!(snapshot2.node_count(), expected_nodes);
        assert_eq!(snapshot2.rel_count(), expected_rels);
        assert!(logs["graph"].count("tools/call") > calls_before);
    }

    #[tokio::test]
    async fn abort_results_are_a_prefix_of_continue_results() {
        let steps = r#"[
            {"type": "call", "id": "a", "tool": "echo", "params": {"v": 1}},
            {"type": "call", "id": "bad", "tool": "no_such_tool", "params": {}},
            {"type": "call", "id": "b", "tool": "echo", "params": {"v": 2}}
        ]"#;
        let (engine, _) = engine().await;
        let abort_bp = bp(&format!(
            r#"{{"id": "w", "errorStrategy": {{"onStepFailure": "abort"}}, "steps": {steps}}}"#
        ));
        let continue_bp = bp(&format!(
            r#"{{"id": "w", "errorStrategy": {{"onStepFailure": "continue"}}, "steps": {steps}}}"#
        ));
        let aborted = engine.execute(&abort_bp, &no_params()).await.unwrap();
        let continued = engine.execute(&continue_bp, &no_params()).await.unwrap();
        assert_eq!(aborted.status, RunStatus::Failure);
        assert_eq!(continued.status, RunStatus::Partial);
        assert_eq!(aborted.step_results.len(), 2);
        assert_eq!(continued.step_results.len(), 3);
        let ids = |run: &RunResult| {
            run.step_results
                .iter()
                .map(|r| (r.step_id.clone(), r.status))
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(&aborted)[..], ids(&continued)[..2]);
    }
}
