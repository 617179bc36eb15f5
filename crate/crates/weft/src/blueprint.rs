//! Blueprint data model: the declarative workflow artifact and its canonical
//! JSON form.
//!
//! A blueprint is a parameterized list of steps drawn from exactly five
//! primitives: `call`, `loop`, `parallel`, `pipe`, `collect`. Parsing is
//! strict about the DSL surface (unknown top-level keys, unknown step fields
//! and unknown step types are rejected) but treats everything inside a call's
//! `params` as opaque tool arguments, preserved verbatim.
//!
//! Structural rules that concern relationships between steps (duplicate ids,
//! dangling references, empty loops) are checked separately in
//! [`crate::validate`]; parsing only enforces shape.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("invalid blueprint JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowBlueprint {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, ParamSpec>,
    #[serde(
        rename = "errorStrategy",
        default,
        skip_serializing_if = "ErrorStrategy::is_default"
    )]
    pub error_strategy: ErrorStrategy,
    pub steps: Vec<Step>,
}

impl WorkflowBlueprint {
    /// Canonical form: 2-space indent, fixed key order, sorted params.
    pub fn canonical_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("blueprint serializes");
        text.push('\n');
        text
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("blueprint serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Number,
    Boolean,
    Array,
    Object,
}

impl ParamType {
    pub fn name(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
            ParamType::Array => "array",
            ParamType::Object => "object",
        }
    }

    pub fn matches(self, value: &Value) -> bool {
        match self {
            ParamType::String => value.is_string(),
            ParamType::Number => value.is_number(),
            ParamType::Boolean => value.is_boolean(),
            ParamType::Array => value.is_array(),
            ParamType::Object => value.is_object(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub param_type: ParamType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required: Option<bool>,
}

impl ParamSpec {
    /// Unless stated explicitly, a param is required exactly when it has no
    /// default.
    pub fn is_required(&self) -> bool {
        self.required.unwrap_or(self.default.is_none())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureMode {
    #[default]
    Abort,
    Continue,
    Retry,
}

fn is_false(v: &bool) -> bool {
    !*v
}

fn default_max_retries() -> u32 {
    3
}

fn default_retry_delay_ms() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorStrategy {
    #[serde(rename = "onStepFailure", default)]
    pub on_step_failure: FailureMode,
    #[serde(rename = "maxRetries", default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(rename = "retryDelayMs", default = "default_retry_delay_ms")]
    pub retry_delay_ms: u64,
    #[serde(rename = "collectErrors", default, skip_serializing_if = "is_false")]
    pub collect_errors: bool,
    /// When true, exhausted retries abort the run instead of degrading to
    /// continue-style recording.
    #[serde(rename = "retryThenAbort", default, skip_serializing_if = "is_false")]
    pub retry_then_abort: bool,
}

impl Default for ErrorStrategy {
    fn default() -> Self {
        Self {
            on_step_failure: FailureMode::Abort,
            max_retries: default_max_retries(),
            retry_delay_ms: default_retry_delay_ms(),
            collect_errors: false,
            retry_then_abort: false,
        }
    }
}

impl ErrorStrategy {
    pub fn is_default(&self) -> bool {
        *self == Self::default()
    }
}

fn empty_object() -> Value {
    Value::Object(serde_json::Map::new())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallStep {
    pub id: String,
    pub tool: String,
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopStep {
    pub id: String,
    pub over: String,
    #[serde(rename = "as")]
    pub bind: String,
    #[serde(rename = "do", skip_serializing_if = "Option::is_none")]
    pub body: Option<Box<Step>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParallelStep {
    pub id: String,
    pub branches: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipeStep {
    pub id: String,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectStep {
    pub id: String,
    pub steps: Vec<Step>,
    pub into: String,
}

/// The five step primitives. Closed by design: anything a workflow needs
/// beyond these belongs in the agent, not the DSL.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Step {
    Call(CallStep),
    Loop(LoopStep),
    Parallel(ParallelStep),
    Pipe(PipeStep),
    Collect(CollectStep),
}

impl Step {
    pub fn id(&self) -> &str {
        match self {
            Step::Call(s) => &s.id,
            Step::Loop(s) => &s.id,
            Step::Parallel(s) => &s.id,
            Step::Pipe(s) => &s.id,
            Step::Collect(s) => &s.id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Step::Call(_) => "call",
            Step::Loop(_) => "loop",
            Step::Parallel(_) => "parallel",
            Step::Pipe(_) => "pipe",
            Step::Collect(_) => "collect",
        }
    }

    /// Immediate sub-steps, in document order.
    pub fn children(&self) -> Vec<&Step> {
        match self {
            Step::Call(_) => Vec::new(),
            Step::Loop(s) => s.body.iter().map(Box::as_ref).collect(),
            Step::Parallel(s) => s.branches.iter().collect(),
            Step::Pipe(s) => s.steps.iter().collect(),
            Step::Collect(s) => s.steps.iter().collect(),
        }
    }
}

impl<'de> Deserialize<'de> for Step {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let value = Value::deserialize(deserializer)?;
        step_from_value(&value).map_err(serde::de::Error::custom)
    }
}

fn get_string(
    obj: &serde_json::Map<String, Value>,
    key: &str,
    step: &str,
) -> Result<Option<String>, String> {
    match obj.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(other) => Err(format!(
            "step '{step}': \"{key}\" must be a string, got {}",
            json_type_name(other)
        )),
    }
}

fn get_steps(
    obj: &serde_json::Map<String, Value>,
    key: &str,
    step: &str,
) -> Result<Vec<Step>, String> {
    match obj.get(key) {
        None => Ok(Vec::new()),
        Some(Value::Array(items)) => items.iter().map(step_from_value).collect(),
        Some(other) => Err(format!(
            "step '{step}': \"{key}\" must be an array of steps, got {}",
            json_type_name(other)
        )),
    }
}

fn json_type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn step_from_value(value: &Value) -> Result<Step, String> {
    let obj = value
        .as_object()
        .ok_or_else(|| format!("step must be a JSON object, got {}", json_type_name(value)))?;
    let kind = match obj.get("type") {
        Some(Value::String(s)) => s.as_str(),
        Some(other) => {
            return Err(format!(
                "step \"type\" must be a string, got {}",
                json_type_name(other)
            ))
        }
        None => return Err("step is missing its \"type\" tag".into()),
    };
    // Missing or empty ids parse as "" and are rejected by validation, so
    // that a whole file of sloppy steps reports every problem at once.
    let id = get_string(obj, "id", "<unnamed>")?.unwrap_or_default();

    let allowed: &[&str] = match kind {
        "call" => &["type", "id", "tool", "params"],
        "loop" => &["type", "id", "over", "as", "do"],
        "parallel" => &["type", "id", "branches"],
        "pipe" => &["type", "id", "steps"],
        "collect" => &["type", "id", "steps", "into"],
        other => return Err(format!("unknown step type '{other}' in step '{id}'")),
    };
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(format!("unknown key \"{key}\" in {kind} step '{id}'"));
        }
    }

    let step = match kind {
        "call" => {
            let tool = get_string(obj, "tool", &id)?
                .ok_or_else(|| format!("call step '{id}' is missing \"tool\""))?;
            let params = obj.get("params").cloned().unwrap_or_else(empty_object);
            Step::Call(CallStep { id, tool, params })
        }
        "loop" => {
            let over = get_string(obj, "over", &id)?.unwrap_or_default();
            let bind = get_string(obj, "as", &id)?.unwrap_or_default();
            let body = match obj.get("do") {
                None => None,
                Some(v) => Some(Box::new(step_from_value(v).map_err(|e| {
                    format!("in \"do\" of loop step '{id}': {e}")
                })?)),
            };
            Step::Loop(LoopStep {
                id,
                over,
                bind,
                body,
            })
        }
        "parallel" => {
            let branches = get_steps(obj, "branches", &id)?;
            Step::Parallel(ParallelStep { id, branches })
        }
        "pipe" => {
            let steps = get_steps(obj, "steps", &id)?;
            Step::Pipe(PipeStep { id, steps })
        }
        "collect" => {
            let steps = get_steps(obj, "steps", &id)?;
            let into = get_string(obj, "into", &id)?.unwrap_or_else(|| "results".into());
            Step::Collect(CollectStep { id, steps, into })
        }
        _ => unreachable!(),
    };
    Ok(step)
}

pub(crate) fn filesystem_safe(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

fn check_shape(bp: WorkflowBlueprint) -> Result<WorkflowBlueprint, ParseError> {
    if !filesystem_safe(&bp.id) {
        return Err(ParseError::Schema(format!(
            "blueprint id '{}' is not a non-empty [A-Za-z0-9._-]+ identifier",
            bp.id
        )));
    }
    for (name, spec) in &bp.params {
        if let Some(default) = &spec.default {
            if !spec.param_type.matches(default) {
                return Err(ParseError::Schema(format!(
                    "param '{name}': default {default} does not conform to type {}",
                    spec.param_type.name()
                )));
            }
        }
    }
    Ok(bp)
}

/// Parse blueprint JSON text. Rejects unknown top-level keys, unknown step
/// types and malformed fields; leaves inter-step rules to validation.
pub fn parse_blueprint(text: &str) -> Result<WorkflowBlueprint, ParseError> {
    let bp: WorkflowBlueprint = serde_json::from_str(text)?;
    check_shape(bp)
}

/// Same as [`parse_blueprint`] for an already-parsed JSON value (the shape
/// the MCP tools receive).
pub fn blueprint_from_value(value: Value) -> Result<WorkflowBlueprint, ParseError> {
    let bp: WorkflowBlueprint = serde_json::from_value(value)?;
    check_shape(bp)
}
