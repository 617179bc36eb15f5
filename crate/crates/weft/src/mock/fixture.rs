//! Seeded cluster inventory backing the mock resource server.
//!
//! Record counts, names, uids and cross-references are all derived from an
//! FNV-1a hash of (seed, namespace, kind, ...), so any party that knows the
//! shape can recompute the exact inventory independently; tests use that to
//! brute-force expected graph counts without going through the engine.

use serde_json::{json, Value};

/// Kinds that exist per namespace, in sync order. The production workflow
/// syncs all fifteen; reduced shapes take a prefix-agnostic subset.
pub const NAMESPACE_KINDS: [&str; 15] = [
    "Deployment",
    "StatefulSet",
    "DaemonSet",
    "ReplicaSet",
    "Pod",
    "Service",
    "Ingress",
    "ConfigMap",
    "Secret",
    "ServiceAccount",
    "PersistentVolumeClaim",
    "Role",
    "RoleBinding",
    "Job",
    "CronJob",
];

const NAMESPACE_POOL: [&str; 12] = [
    "platform-core",
    "data-services",
    "ml-workloads",
    "ingress-edge",
    "batch-jobs",
    "observability",
    "auth-services",
    "payments",
    "search-index",
    "stream-processing",
    "feature-store",
    "model-serving",
];

/// Cluster-scoped persistent volumes in every shape.
pub const PV_COUNT: usize = 4;

pub const STORAGE_CLASSES: [&str; 2] = ["standard", "fast"];

pub fn fnv(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for part in parts {
        for b in part.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0x1f;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct FixtureShape {
    pub seed: u64,
    pub cluster: String,
    pub namespace_count: usize,
    pub node_count: usize,
    pub kinds: Vec<String>,
}

impl FixtureShape {
    /// Desk-scale shape: 3 namespaces, 4 resource kinds, 2 nodes.
    pub fn small(seed: u64) -> Self {
        Self {
            seed,
            cluster: "atlas-prod".into(),
            namespace_count: 3,
            node_count: 2,
            kinds: ["Deployment", "ReplicaSet", "Pod", "Service"]
                .map(String::from)
                .to_vec(),
        }
    }

    /// The production-like shape: 38 namespaces, 15 kinds, 13 nodes.
    pub fn full(seed: u64) -> Self {
        Self {
            seed,
            cluster: "atlas-prod".into(),
            namespace_count: 38,
            node_count: 13,
            kinds: NAMESPACE_KINDS.map(String::from).to_vec(),
        }
    }
}

/// A materialized inventory. All lookups return the same JSON every time.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub shape: FixtureShape,
}

fn name_stem(kind: &str) -> &'static str {
    match kind {
        "Deployment" => "app",
        "StatefulSet" => "db",
        "DaemonSet" => "agent",
        "ReplicaSet" => "rs",
        "Pod" => "pod",
        "Service" => "svc",
        "Ingress" => "ing",
        "ConfigMap" => "config",
        "Secret" => "secret",
        "ServiceAccount" => "sa",
        "PersistentVolumeClaim" => "data",
        "Role" => "role",
        "RoleBinding" => "rb",
        "Job" => "job",
        "CronJob" => "cron",
        _ => "res",
    }
}

impl Fixture {
    pub fn new(shape: FixtureShape) -> Self {
        Self { shape }
    }

    pub fn namespaces(&self) -> Vec<String> {
        let mut out: Vec<String> = NAMESPACE_POOL
            .iter()
            .take(self.shape.namespace_count)
            .map(|s| s.to_string())
            .collect();
        let mut extra = 1;
        while out.len() < self.shape.namespace_count {
            out.push(format!("app-team-{extra:02}"));
            extra += 1;
        }
        out
    }

    fn uid(&self, ns: &str, kind: &str, name: &str) -> String {
        format!("{:016x}", fnv(&[&self.shape.cluster, ns, kind, name]))
    }

    fn seed_str(&self) -> String {
        self.shape.seed.to_string()
    }

    /// How many records of `kind` live in `ns`: always 1 to 3.
    pub fn count(&self, ns: &str, kind: &str) -> usize {
        (1 + fnv(&[&self.seed_str(), ns, kind, "size"]) % 3) as usize
    }

    fn record_name(&self, ns: &str, kind: &str, i: usize) -> String {
        format!("{ns}-{}-{i}", name_stem(kind))
    }

    /// Uid of the record a join field points at: the i-th reference wraps
    /// around the target kind's population so it always lands on a real
    /// record.
    fn ref_uid(&self, ns: &str, target_kind: &str, i: usize) -> String {
        let idx = i % self.count(ns, target_kind);
        self.uid(ns, target_kind, &self.record_name(ns, target_kind, idx))
    }

    pub fn nodes(&self) -> Vec<Value> {
        (0..self.shape.node_count)
            .map(|i| {
                let name = format!("node-alpha-{:02}", i + 1);
                json!({
                    "name": name,
                    "uid": self.uid("", "Node", &name),
                    "kind": "Node",
                })
            })
            .collect()
    }

    pub fn persistent_volumes(&self) -> Vec<Value> {
        (0..PV_COUNT)
            .map(|i| {
                let name = format!("pv-{i:03}");
                json!({
                    "name": name,
                    "uid": self.uid("", "PersistentVolume", &name),
                    "kind": "PersistentVolume",
                    "capacityGi": 10 * (i + 1),
                })
            })
            .collect()
    }

    /// Namespace-scoped records of one kind, join fields included.
    pub fn resources(&self, kind: &str, ns: &str) -> Option<Vec<Value>> {
        if ns.is_empty() {
            return match kind {
                "PersistentVolume" => Some(self.persistent_volumes()),
                "Node" => Some(self.nodes()),
                _ => None,
            };
        }
        if !self.namespaces().iter().any(|n| n == ns)
            || !self.shape.kinds.iter().any(|k| k == kind)
        {
            return None;
        }
        let nodes = self.nodes();
        let records = (0..self.count(ns, kind))
            .map(|i| {
                let name = self.record_name(ns, kind, i);
                let mut rec = json!({
                    "name": name,
                    "namespace": ns,
                    "kind": kind,
                    "uid": self.uid(ns, kind, &name),
                });
                let fields = rec.as_object_mut().unwrap();
                match kind {
                    "Deployment" => {
                        fields.insert("configUid".into(), self.ref_uid(ns, "ConfigMap", i).into());
                        fields.insert("secretUid".into(), self.ref_uid(ns, "Secret", i).into());
                        fields.insert(
                            "saUid".into(),
                            self.ref_uid(ns, "ServiceAccount", i).into(),
                        );
                        fields.insert(
                            "replicas".into(),
                            (1 + fnv(&[ns, &name, "replicas"]) % 3).into(),
                        );
                    }
                    "ReplicaSet" => {
                        fields.insert("ownerUid".into(), self.ref_uid(ns, "Deployment", i).into());
                    }
                    "Pod" => {
                        fields.insert("ownerUid".into(), self.ref_uid(ns, "ReplicaSet", i).into());
                        let node = &nodes[(fnv(&[ns, &name, "node"]) as usize) % nodes.len()];
                        fields.insert("nodeUid".into(), node["uid"].clone());
                    }
                    "Service" => {
                        fields.insert("appUid".into(), self.ref_uid(ns, "Deployment", i).into());
                    }
                    "Ingress" => {
                        fields.insert("serviceUid".into(), self.ref_uid(ns, "Service", i).into());
                    }
                    "StatefulSet" => {
                        fields.insert(
                            "pvcUid".into(),
                            self.ref_uid(ns, "PersistentVolumeClaim", i).into(),
                        );
                    }
                    "PersistentVolumeClaim" => {
                        fields.insert(
                            "scUid".into(),
                            STORAGE_CLASSES[i % STORAGE_CLASSES.len()].into(),
                        );
                        let pvs = self.persistent_volumes();
                        fields.insert("pvUid".into(), pvs[i % pvs.len()]["uid"].clone());
                    }
                    _ => {}
                }
                rec
            })
            .collect();
        Some(records)
    }

    /// Total records of `kind` across all namespaces.
    pub fn total(&self, kind: &str) -> usize {
        self.namespaces()
            .iter()
            .map(|ns| self.count(ns, kind))
            .sum()
    }
}
