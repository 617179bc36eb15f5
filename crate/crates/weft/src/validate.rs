//! Two-tier blueprint validation.
//!
//! Tier one ([`validate_structure`]) finds blocking errors: malformed step
//! shapes, duplicate ids, references to params or steps that cannot exist at
//! execution time. A blueprint with structural errors is never persisted.
//!
//! Tier two ([`validate_tools`]) checks call steps against the discovered
//! tool catalog and only ever produces warnings: a missing downstream server
//! should not block saving a workflow that will run once the server is up.
//!
//! The reference checker mirrors the engine's visibility rules exactly: pipe
//! and collect sub-steps publish their outputs to everything after them,
//! loop bodies and parallel branches see a frozen copy of the outer context,
//! and branch ids become visible only after the whole parallel step settles.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::blueprint::{Step, WorkflowBlueprint};
use crate::pool::ToolCatalog;
use crate::resolver::{collect_expressions, scan_templates};

/// Steps may nest this deep; anything deeper is a structural error.
pub const MAX_STEP_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub path: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, path: &str, code: &str, message: String) {
        self.errors.push(Issue {
            path: path.into(),
            code: code.into(),
            message,
        });
    }

    fn warning(&mut self, path: &str, code: &str, message: String) {
        self.warnings.push(Issue {
            path: path.into(),
            code: code.into(),
            message,
        });
    }

    /// Merge another report's issues into this one.
    pub fn extend(&mut self, other: ValidationReport) {
        self.errors.extend(other.errors);
        self.warnings.extend(other.warnings);
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Blocking structural checks. Warnings are always empty here.
pub fn validate_structure(bp: &WorkflowBlueprint) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = BTreeSet::new();
    for (i, step) in bp.steps.iter().enumerate() {
        check_shape(step, &format!("steps[{i}]"), 1, &mut seen, &mut report);
    }
    let mut available = BTreeSet::new();
    for (i, step) in bp.steps.iter().enumerate() {
        check_refs(step, &format!("steps[{i}]"), &mut available, bp, &mut report);
        available.insert(step.id().to_owned());
    }
    report
}

fn check_shape(
    step: &Step,
    path: &str,
    depth: usize,
    seen: &mut BTreeSet<String>,
    report: &mut ValidationReport,
) {
    if depth > MAX_STEP_DEPTH {
        report.error(
            path,
            "max-depth-exceeded",
            format!("steps nest deeper than {MAX_STEP_DEPTH} levels"),
        );
        return;
    }

    let id = step.id();
    if id.is_empty() {
        report.error(path, "empty-step-id", format!("{} step has no id", step.kind()));
    } else if !seen.insert(id.to_owned()) {
        report.error(path, "duplicate-step-id", format!("step id '{id}' is already used"));
    }

    match step {
        Step::Call(_) => {}
        Step::Loop(s) => {
            if s.over.is_empty() {
                report.error(path, "loop-missing-over", format!("loop '{id}' has no \"over\" expression"));
            }
            if s.bind.is_empty() {
                report.error(path, "loop-missing-as", format!("loop '{id}' has no \"as\" binding"));
            } else if s.bind == "params" || s.bind == "steps" {
                report.error(
                    path,
                    "binding-shadows-root",
                    format!("loop '{id}' binds \"{}\", shadowing a reserved root", s.bind),
                );
            } else if !is_identifier(&s.bind) {
                report.error(
                    path,
                    "invalid-binding-name",
                    format!("loop '{id}' binding \"{}\" is not an identifier", s.bind),
                );
            }
            if s.body.is_none() {
                report.error(path, "loop-missing-do", format!("loop '{id}' has no \"do\" step"));
            }
        }
        Step::Parallel(s) => {
            if s.branches.is_empty() {
                report.error(path, "parallel-no-branches", format!("parallel '{id}' has no branches"));
            }
        }
        Step::Pipe(s) => {
            if s.steps.is_empty() {
                report.error(path, "pipe-no-steps", format!("pipe '{id}' has no steps"));
            }
        }
        Step::Collect(_) => {}
    }

    match step {
        Step::Loop(s) => {
            if let Some(body) = &s.body {
                check_shape(body, &format!("{path}.do"), depth + 1, seen, report);
            }
        }
        Step::Parallel(s) => {
            for (i, branch) in s.branches.iter().enumerate() {
                check_shape(branch, &format!("{path}.branches[{i}]"), depth + 1, seen, report);
            }
        }
        Step::Pipe(s) => {
            for (i, inner) in s.steps.iter().enumerate() {
                check_shape(inner, &format!("{path}.steps[{i}]"), depth + 1, seen, report);
            }
        }
        Step::Collect(s) => {
            for (i, inner) in s.steps.iter().enumerate() {
                check_shape(inner, &format!("{path}.steps[{i}]"), depth + 1, seen, report);
            }
        }
        Step::Call(_) => {}
    }
}

/// The `params.X` / `steps.Y` root reference at the head of an expression,
/// if any. References rooted at loop bindings are runtime concerns.
fn leading_ref(expr: &str) -> Option<(&'static str, String)> {
    let expr = expr.trim_start();
    for root in ["params", "steps"] {
        let Some(rest) = expr.strip_prefix(root) else {
            continue;
        };
        let Some(rest) = rest.strip_prefix('.') else {
            continue;
        };
        let name: String = if let Some(quoted) = rest.strip_prefix('"') {
            quoted.chars().take_while(|c| *c != '"').collect()
        } else {
            rest.chars()
                .take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-'))
                .collect()
        };
        if !name.is_empty() {
            return Some((root, name));
        }
    }
    None
}

fn check_expressions(
    exprs: &[String],
    path: &str,
    available: &BTreeSet<String>,
    bp: &WorkflowBlueprint,
    report: &mut ValidationReport,
) {
    for expr in exprs {
        match leading_ref(expr) {
            Some(("params", name)) => {
                if !bp.params.contains_key(&name) {
                    report.error(
                        path,
                        "undeclared-param",
                        format!("template references params.{name}, which is not declared"),
                    );
                }
            }
            Some(("steps", name)) if !available.contains(&name) => {
                report.error(
                    path,
                    "step-ref-unavailable",
                    format!("template references steps.{name}, which has no output at this point"),
                );
            }
            _ => {}
        }
    }
}

fn check_refs(
    step: &Step,
    path: &str,
    available: &mut BTreeSet<String>,
    bp: &WorkflowBlueprint,
    report: &mut ValidationReport,
) {
    match step {
        Step::Call(s) => {
            let mut exprs = Vec::new();
            collect_expressions(&s.params, &mut exprs);
            check_expressions(&exprs, path, available, bp, report);
        }
        Step::Loop(s) => {
            let exprs: Vec<String> = scan_templates(&s.over)
                .into_iter()
                .map(|span| span.inner)
                .collect();
            check_expressions(&exprs, path, available, bp, report);
            if let Some(body) = &s.body {
                let mut inner = available.clone();
                check_refs(body, &format!("{path}.do"), &mut inner, bp, report);
            }
        }
        Step::Parallel(s) => {
            for (i, branch) in s.branches.iter().enumerate() {
                let mut inner = available.clone();
                check_refs(branch, &format!("{path}.branches[{i}]"), &mut inner, bp, report);
            }
            for branch in &s.branches {
                available.insert(branch.id().to_owned());
            }
        }
        Step::Pipe(s) => {
            for (i, inner) in s.steps.iter().enumerate() {
                check_refs(inner, &format!("{path}.steps[{i}]"), available, bp, report);
                available.insert(inner.id().to_owned());
            }
        }
        Step::Collect(s) => {
            for (i, inner) in s.steps.iter().enumerate() {
                check_refs(inner, &format!("{path}.steps[{i}]"), available, bp, report);
                available.insert(inner.id().to_owned());
            }
        }
    }
}

/// Non-blocking tool-existence checks against the discovered catalog.
pub fn validate_tools(bp: &WorkflowBlueprint, catalog: &ToolCatalog) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut stack: Vec<(&Step, String)> = bp
        .steps
        .iter()
        .enumerate()
        .rev()
        .map(|(i, s)| (s, format!("steps[{i}]")))
        .collect();
    while let Some((step, path)) = stack.pop() {
        if let Step::Call(call) = step {
            if let Err(err) = catalog.route(&call.tool) {
                report.warning(
                    &path,
                    "tool-not-found",
                    format!("call '{}': {err}", call.id),
                );
            }
        }
        for (i, child) in step.children().into_iter().enumerate() {
            stack.push((child, format!("{path}#{i}")));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blueprint::parse_blueprint;

    fn bp(text: &str) -> WorkflowBlueprint {
        parse_blueprint(text).unwrap()
    }

    fn codes(report: &ValidationReport) -> Vec<&str> {
        report.errors.iter().map(|e| e.code.as_str()).collect()
    }

    #[test]
    fn duplicate_step_ids_are_blocking() {
        let b = bp(r#"{"id":"wf","steps":[
            {"id":"s1","type":"call","tool":"t"},
            {"id":"s1","type":"call","tool":"t"}]}"#);
        assert_eq!(codes(&validate_structure(&b)), ["duplicate-step-id"]);
    }

    #[test]
    fn nested_duplicates_are_found() {
        let b = bp(r#"{"id":"wf","steps":[
            {"id":"a","type":"call","tool":"t"},
            {"id":"p","type":"pipe","steps":[{"id":"a","type":"call","tool":"t"}]}]}"#);
        assert_eq!(codes(&validate_structure(&b)), ["duplicate-step-id"]);
    }

    #[test]
    fn empty_ids_and_loop_shape_errors() {
        let b = bp(r#"{"id":"wf","steps":[{"id":"","type":"loop"}]}"#);
        let report = validate_structure(&b);
        let cs = codes(&report);
        assert!(cs.contains(&"empty-step-id"));
        assert!(cs.contains(&"loop-missing-over"));
        assert!(cs.contains(&"loop-missing-as"));
        assert!(cs.contains(&"loop-missing-do"));
    }

    #[test]
    fn empty_parallel_and_pipe_are_blocking() {
        let b = bp(r#"{"id":"wf","steps":[
            {"id":"p","type":"parallel","branches":[]},
            {"id":"q","type":"pipe","steps":[]}]}"#);
        assert_eq!(codes(&validate_structure(&b)), ["parallel-no-branches", "pipe-no-steps"]);
    }

    #[test]
    fn undeclared_param_reference() {
        let b = bp(r#"{"id":"wf","steps":[
            {"id":"s","type":"call","tool":"t","params":{"g":"{{params.missing}}"}}]}"#);
        assert_eq!(codes(&validate_structure(&b)), ["undeclared-param"]);
    }

    #[test]
    fn declared_params_pass() {
        let b = bp(r#"{"id":"wf","params":{"g":{"type":"string","default":"x"}},
            "steps":[{"id":"s","type":"call","tool":"t","params":{"g":"{{params.g}}"}}]}"#);
        assert!(validate_structure(&b).is_clean());
    }

    #[test]
    fn forward_and_unknown_step_refs_are_blocking() {
        let b = bp(r#"{"id":"wf","steps":[
            {"id":"s1","type":"call","tool":"t","params":{"v":"{{steps.s2.out}}"}},
            {"id":"s2","type":"call","tool":"t","params":{"v":"{{steps.s1}}"}},
            {"id":"s3","type":"call","tool":"t","params":{"v":"{{steps.ghost}}"}}]}"#);
        assert_eq!(
            codes(&validate_structure(&b)),
            ["step-ref-unavailable", "step-ref-unavailable"]
        );
    }

    #[test]
    fn sibling_branches_cannot_see_each_other() {
        let b = bp(r#"{"id":"wf","steps":[
            {"id":"p","type":"parallel","branches":[
                {"id":"b1","type":"call","tool":"t"},
                {"id":"b2","type":"call","tool":"t","params":{"v":"{{steps.b1}}"}}]},
            {"id":"after","type":"call","tool":"t","params":{"v":"{{steps.b2}}"}}]}"#);
        let report = validate_structure(&b);
        assert_eq!(codes(&report), ["step-ref-unavailable"]);
        assert!(report.errors[0].message.contains("steps.b1"));
    }

    #[test]
    fn pipe_inner_outputs_flow_onward() {
        let b = bp(r#"{"id":"wf","steps":[
            {"id":"p","type":"pipe","steps":[
                {"id":"a","type":"call","tool":"t"},
                {"id":"b","type":"call","tool":"t","params":{"v":"{{steps.a}}"}}]},
            {"id":"after","type":"call","tool":"t","params":{"v":"{{steps.b}}"}}]}"#);
        assert!(validate_structure(&b).is_clean());
    }

    #[test]
    fn loop_body_outputs_stay_inside_the_loop() {
        let b = bp(r#"{"id":"wf","steps":[
            {"id":"l","type":"loop","over":"{{steps.x}}","as":"item",
             "do":{"id":"inner","type":"call","tool":"t"}},
            {"id":"after","type":"call","tool":"t","params":{"v":"{{steps.inner}}"}}]}"#);
        let report = validate_structure(&b);
        let cs = codes(&report);
        // steps.x is also unavailable; the loop-body leak is the second error.
        assert_eq!(cs, ["step-ref-unavailable", "step-ref-unavailable"]);
        assert!(report.errors[1].message.contains("steps.inner"));
    }

    #[test]
    fn binding_shadowing_is_blocking() {
        for bind in ["params", "steps"] {
            let b = bp(&format!(
                r#"{{"id":"wf","steps":[{{"id":"l","type":"loop","over":"{{{{params.xs}}}}","as":"{bind}",
                    "do":{{"id":"i","type":"call","tool":"t"}}}}]}}"#
            ));
            let report = validate_structure(&b);
            assert!(codes(&report).contains(&"binding-shadows-root"), "{bind}: {report:?}");
        }
    }

    #[test]
    fn binding_must_be_an_identifier() {
        let b = bp(r#"{"id":"wf","params":{"xs":{"type":"array","default":[]}},
            "steps":[{"id":"l","type":"loop","over":"{{params.xs}}","as":"bad-name",
            "do":{"id":"i","type":"call","tool":"t"}}]}"#);
        assert_eq!(codes(&validate_structure(&b)), ["invalid-binding-name"]);
    }

    #[test]
    fn depth_limit_is_enforced() {
        let mut inner = String::from(r#"{"id":"leaf","type":"call","tool":"t"}"#);
        for i in 0..17 {
            inner = format!(r#"{{"id":"p{i}","type":"pipe","steps":[{inner}]}}"#);
        }
        let b = bp(&format!(r#"{{"id":"wf","steps":[{inner}]}}"#));
        assert!(codes(&validate_structure(&b)).contains(&"max-depth-exceeded"));
    }

    #[test]
    fn validation_is_pure() {
        let b = bp(r#"{"id":"wf","steps":[
            {"id":"s1","type":"call","tool":"t","params":{"v":"{{steps.later}}"}},
            {"id":"s1","type":"call","tool":"t"}]}"#);
        assert_eq!(validate_structure(&b), validate_structure(&b));
    }

    #[test]
    fn quoted_step_refs_are_checked_too() {
        let b = bp(r#"{"id":"wf","steps":[
            {"id":"fetch-all","type":"call","tool":"t"},
            {"id":"use","type":"call","tool":"t","params":{"v":"{{steps.\"fetch-all\"[]}}"}},
            {"id":"bad","type":"call","tool":"t","params":{"v":"{{steps.\"no-such\"[]}}"}}]}"#);
        assert_eq!(codes(&validate_structure(&b)), ["step-ref-unavailable"]);
    }
}
