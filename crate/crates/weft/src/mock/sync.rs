//! Generates the cluster-to-CMDB sync workflows used across the test suite.
//!
//! Three phases: cluster-scoped resources first, then a namespace sweep that
//! fetches and merges every active resource kind, then relationship
//! construction as bulk MERGE joins. At full configuration the blueprint has
//! 67 top-level steps (8 + 39 + 20); the single-namespace variant has 27.
//!
//! Step ids are snake_case so `{{steps.<id>[]}}` flatten projections stay
//! valid JMESPath.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::fixture::FixtureShape;
use crate::blueprint::{
    CallStep, ErrorStrategy, FailureMode, LoopStep, ParamSpec, ParamType, Step, WorkflowBlueprint,
};

/// Which sync workflow to generate.
#[derive(Debug, Clone)]
pub struct SyncShape {
    pub fixture: FixtureShape,
    /// Append a final graph_stats step so the run output carries graph totals.
    pub audit: bool,
    /// Restrict the sweep to one namespace (the Table 8 "simple" variant).
    pub single_namespace: bool,
}

impl SyncShape {
    /// The 67-step full-cluster sync.
    pub fn full(seed: u64) -> Self {
        Self {
            fixture: FixtureShape::full(seed),
            audit: false,
            single_namespace: false,
        }
    }

    /// Desk-scale sync against the small fixture, with a trailing audit step.
    pub fn desk(seed: u64) -> Self {
        Self {
            fixture: FixtureShape::small(seed),
            audit: true,
            single_namespace: false,
        }
    }

    /// The 27-step single-namespace sync.
    pub fn single_namespace(seed: u64) -> Self {
        Self {
            fixture: FixtureShape::full(seed),
            audit: true,
            single_namespace: true,
        }
    }
}

/// `expr` wrapped in template delimiters.
fn tpl(expr: &str) -> String {
    format!("{{{{{expr}}}}}")
}

/// CamelCase kind name to a snake_case id fragment.
fn kind_slug(kind: &str) -> String {
    let mut out = String::new();
    for (i, c) in kind.chars().enumerate() {
        if c.is_uppercase() {
            if i > 0 {
                out.push('_');
            }
            out.extend(c.to_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}

/// Join properties each kind carries beyond name/namespace, and whether the
/// value is quoted in Cypher.
fn extra_props(kind: &str) -> &'static [(&'static str, bool)] {
    match kind {
        "Deployment" => &[
            ("configUid", true),
            ("secretUid", true),
            ("saUid", true),
            ("replicas", false),
        ],
        "ReplicaSet" => &[("ownerUid", true)],
        "Pod" => &[("ownerUid", true), ("nodeUid", true)],
        "Service" => &[("appUid", true)],
        "Ingress" => &[("serviceUid", true)],
        "StatefulSet" => &[("pvcUid", true)],
        "PersistentVolumeClaim" => &[("scUid", true), ("pvUid", true)],
        _ => &[],
    }
}

/// The MERGE+SET query storing one fetched record, bound as `bind`.
fn merge_record_query(kind: &str, bind: &str) -> String {
    let uid = tpl(&format!("{bind}.uid"));
    let name = tpl(&format!("{bind}.name"));
    let ns = tpl(&format!("{bind}.namespace"));
    let mut q = format!(
        "MERGE (x:{kind} {{uid: \"{uid}\"}}) SET x.name = \"{name}\" SET x.namespace = \"{ns}\""
    );
    for (prop, quoted) in extra_props(kind) {
        let value = tpl(&format!("{bind}.{prop}"));
        if *quoted {
            q.push_str(&format!(" SET x.{prop} = \"{value}\""));
        } else {
            q.push_str(&format!(" SET x.{prop} = {value}"));
        }
    }
    q
}

fn call(id: &str, tool: &str, params: Value) -> Step {
    Step::Call(CallStep {
        id: id.into(),
        tool: tool.into(),
        params,
    })
}

fn graph_call(id: &str, query: String) -> Step {
    call(
        id,
        "run_query",
        json!({"query": query, "graph": tpl("params.graph")}),
    )
}

fn loop_step(id: &str, over: String, bind: &str, body: Step) -> Step {
    Step::Loop(LoopStep {
        id: id.into(),
        over,
        bind: bind.into(),
        body: Some(Box::new(body)),
    })
}

/// (id, query, kinds that must be active for the join to have endpoints)
fn relationship_specs() -> Vec<(&'static str, String, Vec<&'static str>)> {
    fn join(from: (&str, &str), to: (&str, &str), cond: &str, rel: &str) -> String {
        format!(
            "MATCH ({}:{}) MATCH ({}:{}) WHERE {} MERGE ({})-[:{}]->({})",
            from.0, from.1, to.0, to.1, cond, from.0, rel, to.0
        )
    }
    let containment = |kind: &str, rel: &str| {
        join(
            ("n", "Namespace"),
            ("x", kind),
            "x.namespace = n.name",
            rel,
        )
    };
    vec![
        (
            "rel_has_node",
            join(("c", "Cluster"), ("n", "Node"), "n.cluster = c.name", "HAS_NODE"),
            vec![],
        ),
        (
            "rel_has_namespace",
            join(
                ("c", "Cluster"),
                ("n", "Namespace"),
                "n.cluster = c.name",
                "HAS_NAMESPACE",
            ),
            vec![],
        ),
        (
            "rel_contains_deployment",
            containment("Deployment", "CONTAINS_DEPLOYMENT"),
            vec!["Deployment"],
        ),
        (
            "rel_manages_replicaset",
            join(
                ("d", "Deployment"),
                ("r", "ReplicaSet"),
                "r.ownerUid = d.uid",
                "MANAGES_REPLICASET",
            ),
            vec!["Deployment", "ReplicaSet"],
        ),
        (
            "rel_manages_pod",
            join(
                ("r", "ReplicaSet"),
                ("p", "Pod"),
                "p.ownerUid = r.uid",
                "MANAGES_POD",
            ),
            vec!["ReplicaSet", "Pod"],
        ),
        (
            "rel_scheduled_on",
            join(("p", "Pod"), ("n", "Node"), "p.nodeUid = n.uid", "SCHEDULED_ON"),
            vec!["Pod"],
        ),
        (
            "rel_exposes_via_service",
            join(
                ("d", "Deployment"),
                ("s", "Service"),
                "s.appUid = d.uid",
                "EXPOSES_VIA_SERVICE",
            ),
            vec!["Deployment", "Service"],
        ),
        (
            "rel_routes_to",
            join(
                ("i", "Ingress"),
                ("s", "Service"),
                "i.serviceUid = s.uid",
                "ROUTES_TO",
            ),
            vec!["Ingress", "Service"],
        ),
        (
            "rel_uses_configmap",
            join(
                ("d", "Deployment"),
                ("m", "ConfigMap"),
                "d.configUid = m.uid",
                "USES_CONFIGMAP",
            ),
            vec!["Deployment", "ConfigMap"],
        ),
        (
            "rel_uses_secret",
            join(
                ("d", "Deployment"),
                ("s", "Secret"),
                "d.secretUid = s.uid",
                "USES_SECRET",
            ),
            vec!["Deployment", "Secret"],
        ),
        (
            "rel_runs_as",
            join(
                ("d", "Deployment"),
                ("a", "ServiceAccount"),
                "d.saUid = a.uid",
                "RUNS_AS",
            ),
            vec!["Deployment", "ServiceAccount"],
        ),
        (
            "rel_claims_volume",
            join(
                ("s", "StatefulSet"),
                ("v", "PersistentVolumeClaim"),
                "s.pvcUid = v.uid",
                "CLAIMS_VOLUME",
            ),
            vec!["StatefulSet", "PersistentVolumeClaim"],
        ),
        (
            "rel_bound_to",
            join(
                ("v", "PersistentVolumeClaim"),
                ("p", "PersistentVolume"),
                "v.pvUid = p.uid",
                "BOUND_TO",
            ),
            vec!["PersistentVolumeClaim"],
        ),
        (
            "rel_uses_storage_class",
            join(
                ("v", "PersistentVolumeClaim"),
                ("s", "StorageClass"),
                "v.scUid = s.uid",
                "USES_STORAGE_CLASS",
            ),
            vec!["PersistentVolumeClaim"],
        ),
        (
            "rel_contains_statefulset",
            containment("StatefulSet", "CONTAINS_STATEFULSET"),
            vec!["StatefulSet"],
        ),
        (
            "rel_contains_daemonset",
            containment("DaemonSet", "CONTAINS_DAEMONSET"),
            vec!["DaemonSet"],
        ),
        (
            "rel_contains_service",
            containment("Service", "CONTAINS_SERVICE"),
            vec!["Service"],
        ),
        (
            "rel_contains_configmap",
            containment("ConfigMap", "CONTAINS_CONFIGMAP"),
            vec!["ConfigMap"],
        ),
        (
            "rel_contains_secret",
            containment("Secret", "CONTAINS_SECRET"),
            vec!["Secret"],
        ),
        (
            "rel_contains_serviceaccount",
            containment("ServiceAccount", "CONTAINS_SERVICEACCOUNT"),
            vec!["ServiceAccount"],
        ),
    ]
}

/// Kinds that get a MATCH-count verification step when active.
const VERIFY_KINDS: [&str; 7] = [
    "Deployment",
    "StatefulSet",
    "DaemonSet",
    "Pod",
    "Service",
    "ConfigMap",
    "Secret",
];

fn cluster_phase() -> Vec<Step> {
    let cluster = tpl("params.cluster");
    let mut steps = vec![
        graph_call(
            "cluster_merge",
            format!("MERGE (c:Cluster {{uid: \"{cluster}\"}}) SET c.name = \"{cluster}\""),
        ),
        call("cluster_list_nodes", "list_nodes", json!({})),
        loop_step(
            "cluster_sync_nodes",
            tpl("steps.cluster_list_nodes"),
            "node",
            graph_call(
                "cluster_sync_nodes_one",
                format!(
                    "MERGE (n:Node {{uid: \"{}\"}}) SET n.name = \"{}\" SET n.cluster = \"{cluster}\"",
                    tpl("node.uid"),
                    tpl("node.name")
                ),
            ),
        ),
    ];
    for sc in ["standard", "fast"] {
        steps.push(graph_call(
            &format!("cluster_merge_sc_{sc}"),
            format!("MERGE (s:StorageClass {{uid: \"{sc}\"}}) SET s.name = \"{sc}\""),
        ));
    }
    steps.push(call(
        "cluster_list_pvs",
        "list_resources",
        json!({"kind": "PersistentVolume"}),
    ));
    steps.push(loop_step(
        "cluster_sync_pvs",
        tpl("steps.cluster_list_pvs"),
        "pv",
        graph_call(
            "cluster_sync_pvs_one",
            format!(
                "MERGE (p:PersistentVolume {{uid: \"{}\"}}) SET p.name = \"{}\" SET p.capacityGi = {}",
                tpl("pv.uid"),
                tpl("pv.name"),
                tpl("pv.capacityGi")
            ),
        ),
    ));
    steps.push(graph_call(
        "cluster_merge_admin_role",
        "MERGE (r:ClusterRole {uid: \"cluster-admin\"}) SET r.name = \"cluster-admin\"".into(),
    ));
    steps
}

fn namespace_sweep(kinds: &[String]) -> Vec<Step> {
    let mut steps = vec![
        call("ns_list", "list_namespaces", json!({})),
        loop_step(
            "ns_sync",
            tpl("steps.ns_list"),
            "ns",
            graph_call(
                "ns_sync_one",
                format!(
                    "MERGE (n:Namespace {{uid: \"{0}\"}}) SET n.name = \"{0}\" SET n.cluster = \"{1}\"",
                    tpl("ns"),
                    tpl("params.cluster")
                ),
            ),
        ),
    ];
    for kind in kinds {
        let slug = kind_slug(kind);
        let fetch_id = format!("ns_fetch_{slug}");
        steps.push(loop_step(
            &fetch_id,
            tpl("steps.ns_list"),
            "ns",
            call(
                &format!("{fetch_id}_one"),
                "list_resources",
                json!({"kind": kind, "namespace": tpl("ns")}),
            ),
        ));
        steps.push(loop_step(
            &format!("ns_sync_{slug}"),
            tpl(&format!("steps.{fetch_id}[]")),
            "r",
            graph_call(&format!("ns_sync_{slug}_one"), merge_record_query(kind, "r")),
        ));
    }
    for kind in VERIFY_KINDS {
        if kinds.iter().any(|k| k == kind) {
            steps.push(graph_call(
                &format!("ns_verify_{}", kind_slug(kind)),
                format!("MATCH (x:{kind}) RETURN count(x)"),
            ));
        }
    }
    steps
}

fn single_namespace_sweep() -> Vec<Step> {
    let kinds = [
        "Deployment",
        "StatefulSet",
        "DaemonSet",
        "Service",
        "ConfigMap",
        "Secret",
        "ServiceAccount",
        "Pod",
    ];
    let ns = tpl("params.namespace");
    let mut steps = vec![graph_call(
        "ns_merge",
        format!(
            "MERGE (n:Namespace {{uid: \"{ns}\"}}) SET n.name = \"{ns}\" SET n.cluster = \"{}\"",
            tpl("params.cluster")
        ),
    )];
    for kind in kinds {
        let slug = kind_slug(kind);
        let fetch_id = format!("ns_fetch_{slug}");
        steps.push(call(
            &fetch_id,
            "list_resources",
            json!({"kind": kind, "namespace": ns}),
        ));
        steps.push(loop_step(
            &format!("ns_sync_{slug}"),
            tpl(&format!("steps.{fetch_id}")),
            "r",
            graph_call(&format!("ns_sync_{slug}_one"), merge_record_query(kind, "r")),
        ));
    }
    steps
}

pub fn make_sync_blueprint(shape: &SyncShape) -> WorkflowBlueprint {
    let mut params = BTreeMap::new();
    params.insert(
        "graph".to_owned(),
        ParamSpec {
            param_type: ParamType::String,
            default: Some(json!("cmdb-prod")),
            required: None,
        },
    );
    params.insert(
        "cluster".to_owned(),
        ParamSpec {
            param_type: ParamType::String,
            default: Some(json!(shape.fixture.cluster.clone())),
            required: None,
        },
    );

    let mut steps = Vec::new();
    let (id, description, version) = if shape.single_namespace {
        params.insert(
            "namespace".to_owned(),
            ParamSpec {
                param_type: ParamType::String,
                default: Some(json!("platform-core")),
                required: None,
            },
        );
        steps.push(cluster_phase().remove(0));
        steps.extend(single_namespace_sweep());
        for (rel_id, query, _) in relationship_specs() {
            if rel_id == "rel_has_namespace" || rel_id.starts_with("rel_contains_") {
                steps.push(graph_call(rel_id, query));
            }
        }
        (
            "namespace-cmdb-sync",
            "Sync one namespace into the CMDB graph",
            "1.0.0",
        )
    } else {
        steps.extend(cluster_phase());
        steps.extend(namespace_sweep(&shape.fixture.kinds));
        let active = &shape.fixture.kinds;
        for (rel_id, query, required) in relationship_specs() {
            if required.iter().all(|k| active.iter().any(|a| a == k)) {
                steps.push(graph_call(rel_id, query));
            }
        }
        (
            "cluster-cmdb-sync",
            "Sync full Kubernetes cluster into CMDB graph",
            "2.0.0",
        )
    };
    if shape.audit {
        steps.push(call("audit_stats", "graph_stats", json!({})));
    }

    WorkflowBlueprint {
        id: id.into(),
        description: Some(description.into()),
        version: Some(version.into()),
        params,
        error_strategy: ErrorStrategy {
            on_step_failure: FailureMode::Continue,
            max_retries: 2,
            retry_delay_ms: 1000,
            collect_errors: false,
            retry_then_abort: false,
        },
        steps,
    }
}
