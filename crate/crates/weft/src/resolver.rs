//! Template resolution for `{{...}}` expressions in step parameters.
//!
//! Expressions are evaluated against a context document shaped as
//! `{params: {...}, steps: {...}, <binding>: ...}`. Two strategies apply in
//! order: full JMESPath evaluation, then a plain dot-path walk whenever the
//! expression engine cannot handle the input (for example numeric segments
//! like `steps.s1.0.name`, or step ids containing hyphens).
//!
//! A string that consists of exactly one template group resolves to the
//! referenced value with its original type; templates embedded in larger
//! strings render as text (compact JSON for non-strings). Missing paths are
//! hard errors, never empty strings: a silently blank substitution inside a
//! downstream query is far worse than a failed step.
//!
//! Substitution is multi-pass (a resolved string may itself contain
//! templates) with a fixed pass budget as the cycle guard.

use serde_json::{Map, Value};
use thiserror::Error;

/// Maximum substitution passes over one string value.
pub const PASS_LIMIT: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResolveError {
    #[error("path '{0}' not found in context")]
    MissingPath(String),
    #[error("invalid expression '{expr}': {reason}")]
    BadExpression { expr: String, reason: String },
    #[error("template still unresolved after {PASS_LIMIT} passes (possible cycle)")]
    PassLimit,
}

/// Execution state templates resolve against.
///
/// `steps` only grows during a run and entries are never overwritten;
/// `bindings` holds loop variables and the pipe `prev` value. Bindings become
/// roots of the context document next to `params` and `steps` (and can never
/// collide with them; validation rejects shadowing binding names).
#[derive(Debug, Clone, Default)]
pub struct ResolverContext {
    pub params: Map<String, Value>,
    pub steps: Map<String, Value>,
    pub bindings: Map<String, Value>,
}

impl ResolverContext {
    pub fn with_params(params: Map<String, Value>) -> Self {
        Self {
            params,
            ..Self::default()
        }
    }

    /// The JSON document expression roots resolve against.
    pub fn document(&self) -> Value {
        let mut doc = Map::new();
        for (name, value) in &self.bindings {
            doc.insert(name.clone(), value.clone());
        }
        doc.insert("params".into(), Value::Object(self.params.clone()));
        doc.insert("steps".into(), Value::Object(self.steps.clone()));
        Value::Object(doc)
    }
}

/// Resolve every template in `v`, recursing through arrays and object
/// values. Non-template values pass through unchanged.
pub fn resolve_value(v: &Value, ctx: &ResolverContext) -> Result<Value, ResolveError> {
    let doc = ctx.document();
    resolve_value_in(v, &doc)
}

/// Evaluate one expression (the text between `{{` and `}}`).
pub fn resolve_path(expr: &str, ctx: &ResolverContext) -> Result<Value, ResolveError> {
    let doc = ctx.document();
    resolve_expr(expr, &doc)
}

fn resolve_value_in(v: &Value, doc: &Value) -> Result<Value, ResolveError> {
    match v {
        Value::String(s) => resolve_string(s, doc),
        Value::Array(items) => {
            let resolved: Result<Vec<Value>, ResolveError> =
                items.iter().map(|item| resolve_value_in(item, doc)).collect();
            Ok(Value::Array(resolved?))
        }
        Value::Object(map) => {
            let mut out = Map::new();
            for (key, value) in map {
                out.insert(key.clone(), resolve_value_in(value, doc)?);
            }
            Ok(Value::Object(out))
        }
        other => Ok(other.clone()),
    }
}

fn resolve_string(s: &str, doc: &Value) -> Result<Value, ResolveError> {
    let mut current = Value::String(s.to_owned());
    for _ in 0..PASS_LIMIT {
        let Value::String(text) = &current else {
            // A whole-value substitution produced a non-string: that is the
            // raw result, never re-scanned.
            return Ok(current);
        };
        let spans = scan_templates(text);
        if spans.is_empty() {
            return Ok(current);
        }
        if spans.len() == 1 && spans[0].start == 0 && spans[0].end == text.len() {
            current = resolve_expr(&spans[0].inner, doc)?;
            continue;
        }
        let mut out = String::new();
        let mut cursor = 0;
        for span in &spans {
            out.push_str(&text[cursor..span.start]);
            out.push_str(&render_inline(&resolve_expr(&span.inner, doc)?));
            cursor = span.end;
        }
        out.push_str(&text[cursor..]);
        current = Value::String(out);
    }
    match &current {
        Value::String(text) if !scan_templates(text).is_empty() => Err(ResolveError::PassLimit),
        _ => Ok(current),
    }
}

/// Text form used when a template sits inside a larger string.
fn render_inline(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn resolve_expr(expr: &str, doc: &Value) -> Result<Value, ResolveError> {
    let expr = expr.trim();
    if expr.is_empty() {
        return Err(ResolveError::BadExpression {
            expr: expr.into(),
            reason: "empty expression".into(),
        });
    }
    let compiled = match jmespath::compile(expr) {
        Ok(compiled) => compiled,
        Err(_) => return walk_dot_path(expr, doc),
    };
    let data = match jmespath::Variable::from_serializable(doc) {
        Ok(data) => data,
        Err(_) => return walk_dot_path(expr, doc),
    };
    match compiled.search(data) {
        Err(_) => walk_dot_path(expr, doc),
        Ok(result) => {
            if result.is_null() {
                // JMESPath cannot distinguish "the value is null" from "the
                // path is absent"; the dot-path walk can, so it arbitrates.
                walk_dot_path(expr, doc)
            } else {
                serde_json::to_value(result.as_ref()).map_err(|e| ResolveError::BadExpression {
                    expr: expr.into(),
                    reason: e.to_string(),
                })
            }
        }
    }
}

fn walk_dot_path(expr: &str, doc: &Value) -> Result<Value, ResolveError> {
    let mut current = doc;
    for segment in expr.split('.') {
        if segment.is_empty() {
            return Err(ResolveError::BadExpression {
                expr: expr.into(),
                reason: "empty path segment".into(),
            });
        }
        current = match current {
            Value::Object(map) => map
                .get(segment)
                .ok_or_else(|| ResolveError::MissingPath(expr.to_owned()))?,
            Value::Array(items) => segment
                .parse::<usize>()
                .ok()
                .and_then(|idx| items.get(idx))
                .ok_or_else(|| ResolveError::MissingPath(expr.to_owned()))?,
            _ => return Err(ResolveError::MissingPath(expr.to_owned())),
        };
    }
    Ok(current.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSpan {
    /// Byte offset of the opening `{{`.
    pub start: usize,
    /// Byte offset one past the closing `}}`.
    pub end: usize,
    /// The expression text between the delimiters.
    pub inner: String,
}

/// Find every complete `{{...}}` group in `text`.
///
/// The closing delimiter is matched with brace balancing (JMESPath
/// multiselect hashes contain `{`/`}`) and quoted sections are skipped, so
/// `{{items[?k=='}'].{n: name}}}` scans correctly. An unterminated `{{` is
/// literal text, not a template.
pub fn scan_templates(text: &str) -> Vec<TemplateSpan> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i + 1 < bytes.len() {
        if bytes[i] == b'{' && bytes[i + 1] == b'{' {
            if let Some(span) = scan_one(text, i) {
                i = span.end;
                spans.push(span);
                continue;
            }
        }
        i += 1;
    }
    spans
}

fn scan_one(text: &str, start: usize) -> Option<TemplateSpan> {
    let bytes = text.as_bytes();
    let mut i = start + 2;
    let mut depth = 0u32;
    while i < bytes.len() {
        match bytes[i] {
            quote @ (b'\'' | b'"' | b'`') => {
                i += 1;
                while i < bytes.len() && bytes[i] != quote {
                    i += 1;
                }
                if i >= bytes.len() {
                    return None;
                }
            }
            b'{' => depth += 1,
            b'}' => {
                if depth > 0 {
                    depth -= 1;
                } else if bytes.get(i + 1) == Some(&b'}') {
                    return Some(TemplateSpan {
                        start,
                        end: i + 2,
                        inner: text[start + 2..i].to_owned(),
                    });
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

/// Collect the inner expression of every template anywhere in `v`.
pub fn collect_expressions(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::String(s) => out.extend(scan_templates(s).into_iter().map(|span| span.inner)),
        Value::Array(items) => items.iter().for_each(|item| collect_expressions(item, out)),
        Value::Object(map) => map.values().for_each(|value| collect_expressions(value, out)),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ctx(params: Value, steps: Value, bindings: Value) -> ResolverContext {
        let as_map = |v: Value| match v {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        ResolverContext {
            params: as_map(params),
            steps: as_map(steps),
            bindings: as_map(bindings),
        }
    }

    #[test]
    fn whole_value_param_lookup() {
        let c = ctx(json!({"graph": "cmdb-prod"}), json!({}), json!({}));
        let out = resolve_value(&json!("{{params.graph}}"), &c).unwrap();
        assert_eq!(out, json!("cmdb-prod"));
    }

    #[test]
    fn whole_value_preserves_raw_types() {
        let c = ctx(
            json!({}),
            json!({"listNs": {"items": [1, 2, 3]}, "n": 7, "b": true, "z": null, "o": {"k": "v"}}),
            json!({}),
        );
        assert_eq!(
            resolve_value(&json!("{{steps.listNs.items}}"), &c).unwrap(),
            json!([1, 2, 3])
        );
        assert_eq!(resolve_value(&json!("{{steps.n}}"), &c).unwrap(), json!(7));
        assert_eq!(
            resolve_value(&json!("{{steps.b}}"), &c).unwrap(),
            json!(true)
        );
        assert_eq!(
            resolve_value(&json!("{{steps.z}}"), &c).unwrap(),
            Value::Null
        );
        assert_eq!(
            resolve_value(&json!("{{steps.o}}"), &c).unwrap(),
            json!({"k": "v"})
        );
    }

    #[test]
    fn embedded_concatenation() {
        let c = ctx(json!({}), json!({}), json!({"item": {"name": "platform-core"}}));
        let out = resolve_value(&json!("ns-{{item.name}}"), &c).unwrap();
        assert_eq!(out, json!("ns-platform-core"));
    }

    #[test]
    fn embedded_non_strings_render_as_compact_json() {
        let c = ctx(
            json!({}),
            json!({"s": {"n": 5, "list": [1, {"a": "b"}], "flag": false, "nil": null}}),
            json!({}),
        );
        let v = json!("n={{steps.s.n}} list={{steps.s.list}} f={{steps.s.flag}} z={{steps.s.nil}}");
        assert_eq!(
            resolve_value(&v, &c).unwrap(),
            json!("n=5 list=[1,{\"a\":\"b\"}] f=false z=null")
        );
    }

    #[test]
    fn jmespath_filter_projection() {
        let c = ctx(
            json!({}),
            json!({"listNs": {"items": [
                {"name": "a", "active": true},
                {"name": "b", "active": false}
            ]}}),
            json!({}),
        );
        let out = resolve_value(&json!("{{steps.listNs.items[?active].name}}"), &c).unwrap();
        assert_eq!(out, json!(["a"]));
    }

    #[test]
    fn numeric_segments_fall_back_to_dot_path() {
        let c = ctx(json!({}), json!({"s1": [{"name": "x"}]}), json!({}));
        assert_eq!(resolve_path("steps.s1.0.name", &c).unwrap(), json!("x"));
    }

    #[test]
    fn hyphenated_step_ids_fall_back_to_dot_path() {
        let c = ctx(json!({}), json!({"fetch-pods": {"count": 3}}), json!({}));
        assert_eq!(resolve_path("steps.fetch-pods.count", &c).unwrap(), json!(3));
    }

    #[test]
    fn missing_paths_are_hard_errors() {
        let c = ctx(json!({"cluster": "atlas-prod"}), json!({"s1": {"a": 1}}), json!({}));
        assert_eq!(resolve_path("params.cluster", &c).unwrap(), json!("atlas-prod"));
        for expr in ["steps.s1.missing", "steps.nope", "params.graph", "item.name"] {
            let err = resolve_path(expr, &c).unwrap_err();
            assert!(matches!(err, ResolveError::MissingPath(_)), "{expr}: {err}");
        }
    }

    #[test]
    fn literal_null_survives_disambiguation() {
        let c = ctx(json!({}), json!({"s": {"maybe": null}}), json!({}));
        assert_eq!(resolve_path("steps.s.maybe", &c).unwrap(), Value::Null);
    }

    #[test]
    fn arrays_and_objects_resolve_recursively() {
        let c = ctx(json!({"g": "cmdb"}), json!({}), json!({"i": 2}));
        let v = json!({"q": ["{{params.g}}", {"n": "{{i}}"}], "k": 1});
        assert_eq!(
            resolve_value(&v, &c).unwrap(),
            json!({"q": ["cmdb", {"n": 2}], "k": 1})
        );
    }

    #[test]
    fn template_free_input_is_untouched() {
        let c = ctx(json!({}), json!({}), json!({}));
        let v = json!({"a": [1, "plain", {"b": true}], "brace": "{not a template}"});
        assert_eq!(resolve_value(&v, &c).unwrap(), v);
    }

    #[test]
    fn unterminated_group_is_literal() {
        let c = ctx(json!({}), json!({}), json!({}));
        assert_eq!(
            resolve_value(&json!("open {{ and done"), &c).unwrap(),
            json!("open {{ and done")
        );
    }

    #[test]
    fn multiselect_braces_scan_correctly() {
        let c = ctx(
            json!({}),
            json!({"s": [{"name": "a", "v": 1}, {"name": "b", "v": 2}]}),
            json!({}),
        );
        let out = resolve_value(&json!("{{steps.s[].{n: name}}}"), &c).unwrap();
        assert_eq!(out, json!([{"n": "a"}, {"n": "b"}]));
    }

    #[test]
    fn quoted_braces_inside_expressions_scan_correctly() {
        let c = ctx(
            json!({}),
            json!({"s": [{"k": "}", "v": 1}, {"k": "x", "v": 2}]}),
            json!({}),
        );
        let out = resolve_value(&json!("{{steps.s[?k=='}'].v}}"), &c).unwrap();
        assert_eq!(out, json!([1]));
    }

    #[test]
    fn strings_resolving_to_templates_take_extra_passes() {
        let c = ctx(
            json!({"x": "done"}),
            json!({"ref": "{{params.x}}"}),
            json!({}),
        );
        assert_eq!(
            resolve_value(&json!("{{steps.ref}}"), &c).unwrap(),
            json!("done")
        );
    }

    #[test]
    fn self_reference_hits_the_pass_limit() {
        let c = ctx(json!({}), json!({"loop": "{{steps.loop}}"}), json!({}));
        let err = resolve_value(&json!("{{steps.loop}}"), &c).unwrap_err();
        assert_eq!(err, ResolveError::PassLimit);
    }

    #[test]
    fn bindings_shadow_nothing_but_add_roots() {
        let c = ctx(json!({"n": "p"}), json!({}), json!({"prev": {"count": 5}}));
        assert_eq!(resolve_path("prev.count", &c).unwrap(), json!(5));
        assert_eq!(resolve_path("params.n", &c).unwrap(), json!("p"));
    }

    #[test]
    fn deterministic_across_evaluations() {
        let c = ctx(
            json!({"a": [3, 1, 2]}),
            json!({"s": {"m": {"x": 1, "y": [true, null]}}}),
            json!({}),
        );
        let v = json!({"q": "{{params.a}}", "r": "mix {{steps.s.m}}"});
        let first = resolve_value(&v, &c).unwrap();
        for _ in 0..10 {
            assert_eq!(resolve_value(&v, &c).unwrap(), first);
        }
    }
}
