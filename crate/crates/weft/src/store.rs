//! Flat-file persistence: blueprints under `workflows/`, run summaries under
//! `runs/`. No database; the files are plain JSON so a store can live in Git.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::blueprint::{filesystem_safe, parse_blueprint, WorkflowBlueprint};
use crate::engine::RunResult;
use crate::validate::{validate_structure, Issue};

/// Per-step output bytes kept in a recorded run before cutting.
pub const DEFAULT_OUTPUT_CAP: usize = 64 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no workflow with id '{0}'")]
    NotFound(String),
    #[error("blueprint failed validation: {}", summarize(.0))]
    Precondition(Vec<Issue>),
    #[error("stored blueprint '{id}' is unreadable: {message}")]
    Corrupt { id: String, message: String },
    #[error("store I/O: {0}")]
    Io(#[from] std::io::Error),
}

fn summarize(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(|i| format!("{} at {}", i.message, i.path))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowSummary {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(rename = "stepCount")]
    pub step_count: usize,
}

pub struct WorkflowStore {
    root: PathBuf,
    output_cap: usize,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl WorkflowStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(root.join("workflows"))?;
        std::fs::create_dir_all(root.join("runs"))?;
        Ok(Self {
            root,
            output_cap: DEFAULT_OUTPUT_CAP,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_output_cap(mut self, bytes: usize) -> Self {
        self.output_cap = bytes;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn workflows_dir(&self) -> PathBuf {
        self.root.join("workflows")
    }

    fn blueprint_path(&self, id: &str) -> PathBuf {
        self.workflows_dir().join(format!("{id}.json"))
    }

    fn run_path(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(format!("{run_id}.json"))
    }

    fn id_lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().expect("lock table");
        locks.entry(id.to_owned()).or_default().clone()
    }

    /// Persist a blueprint at its canonical path. Structural validation must
    /// be clean; overwriting an existing id is a normal update.
    pub fn save(&self, bp: &WorkflowBlueprint) -> Result<(), StoreError> {
        let report = validate_structure(bp);
        if !report.is_clean() {
            return Err(StoreError::Precondition(report.errors));
        }
        let lock = self.id_lock(&bp.id);
        let _guard = lock.lock().expect("id lock");
        write_atomic(
            &self.workflows_dir(),
            &self.blueprint_path(&bp.id),
            bp.canonical_json().as_bytes(),
        )?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<WorkflowBlueprint, StoreError> {
        if !filesystem_safe(id) {
            return Err(StoreError::NotFound(id.to_owned()));
        }
        let text = match std::fs::read_to_string(self.blueprint_path(id)) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(id.to_owned()))
            }
            Err(e) => return Err(e.into()),
        };
        parse_blueprint(&text).map_err(|e| StoreError::Corrupt {
            id: id.to_owned(),
            message: e.to_string(),
        })
    }

    /// Summaries of every stored blueprint, sorted by id. Files that fail to
    /// parse are skipped rather than poisoning the listing.
    pub fn list(&self) -> Result<Vec<WorkflowSummary>, StoreError> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(self.workflows_dir())? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Ok(text) = std::fs::read_to_string(&path) else {
                continue;
            };
            let Ok(bp) = parse_blueprint(&text) else {
                continue;
            };
            out.push(WorkflowSummary {
                id: bp.id,
                description: bp.description,
                version: bp.version,
                step_count: bp.steps.len(),
            });
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    pub fn delete(&self, id: &str) -> Result<(), StoreError> {
        if !filesystem_safe(id) {
            return Err(StoreError::NotFound(id.to_owned()));
        }
        let lock = self.id_lock(id);
        let _guard = lock.lock().expect("id lock");
        match std::fs::remove_file(self.blueprint_path(id)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(StoreError::NotFound(id.to_owned()))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Persist a run summary under `runs/<runId>.json`, cutting any step
    /// output whose serialized form exceeds the cap so one chatty tool cannot
    /// fill the disk. Returns the file path.
    pub fn record_run(&self, result: &RunResult) -> Result<PathBuf, StoreError> {
        if !filesystem_safe(&result.run_id) {
            return Err(StoreError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("run id '{}' is not filesystem-safe", result.run_id),
            )));
        }
        let mut capped = result.clone();
        for step in &mut capped.step_results {
            cap_output(&mut step.output, &mut step.truncated, self.output_cap);
        }
        let mut text = serde_json::to_string_pretty(&capped).expect("run serializes");
        text.push('\n');
        let path = self.run_path(&capped.run_id);
        write_atomic(&self.root.join("runs"), &path, text.as_bytes())?;
        Ok(path)
    }
}

/// Replace an output with a string prefix of its compact JSON when it blows
/// past the cap. The cut lands on a char boundary.
fn cap_output(output: &mut Value, truncated: &mut bool, cap: usize) {
    let compact = serde_json::to_string(output).expect("value serializes");
    if compact.len() <= cap {
        return;
    }
    let mut cut = cap;
    while !compact.is_char_boundary(cut) {
        cut -= 1;
    }
    *output = Value::String(compact[..cut].to_owned());
    *truncated = true;
}

/// Write via a sibling temp file and rename, so a crash mid-write never
/// leaves a torn file at the canonical path.
fn write_atomic(dir: &Path, path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
