//! Persistent annotation store: an append-only log plus a compacted snapshot.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub const SNAPSHOT: &str = "annotations.json";
pub const LOG: &str = "annotations.log";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("annotation store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file} line {line}: {message}")]
    Corrupt { file: String, line: usize, message: String },
    #[error("store belongs to run {found}, not {expected}")]
    RunMismatch { expected: String, found: String },
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    #[default]
    Pending,
    Validated,
    Edited,
    Rejected,
}

impl std::str::FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(Status::Pending),
            "validated" => Ok(Status::Validated),
            "edited" => Ok(Status::Edited),
            "rejected" => Ok(Status::Rejected),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

/// A reviewer's decision on one cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum Decision {
    Validate,
    Edit { label: String },
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub cluster_id: usize,
    pub status: Status,
    pub final_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    /// Writes to this cluster so far; `0` means never annotated.
    pub version: u64,
}

/// Result of [`AnnotationStore::annotate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Written {
    pub annotation: Annotation,
    /// The caller's expected version was stale; the write still won.
    pub conflict: bool,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    run_id: String,
    annotations: Vec<Annotation>,
}

#[derive(Serialize, Deserialize)]
struct LogEntry {
    run_id: String,
    annotation: Annotation,
}

type Clock = Box<dyn Fn() -> u64 + Send + Sync>;

fn system_clock() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Annotations of one run. Every write is appended to the log and synced
/// before it becomes visible; [`compact`](Self::compact) folds the log into
/// the snapshot.
pub struct AnnotationStore {
    dir: PathBuf,
    run_id: String,
    entries: BTreeMap<usize, Annotation>,
    log: File,
    clock: Clock,
}

impl std::fmt::Debug for AnnotationStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnotationStore").field("dir", &self.dir).field("run_id", &self.run_id).field("entries", &self.entries).finish()
    }
}

fn corrupt(file: &str, line: usize, e: impl std::fmt::Display) -> StoreError {
    StoreError::Corrupt { file: file.to_owned(), line, message: e.to_string() }
}

impl AnnotationStore {
    /// Opens or creates the store in `dir`, replaying the log over the
    /// snapshot and compacting.
    pub fn open(dir: &Path, run_id: &str) -> Result<Self, StoreError> {
        fs::create_dir_all(dir)?;
        let mut entries = BTreeMap::new();
        let snapshot_path = dir.join(SNAPSHOT);
        if snapshot_path.exists() {
            let snapshot: Snapshot = serde_json::from_str(&fs::read_to_string(&snapshot_path)?).map_err(|e| corrupt(SNAPSHOT, e.line(), e))?;
            if snapshot.run_id != run_id {
                return Err(StoreError::RunMismatch { expected: run_id.to_owned(), found: snapshot.run_id });
            }
            entries.extend(snapshot.annotations.into_iter().map(|a| (a.cluster_id, a)));
        }
        let log_path = dir.join(LOG);
        if log_path.exists() {
            for (i, line) in BufReader::new(File::open(&log_path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: LogEntry = match serde_json::from_str(&line) {
                    Ok(e) => e,
                    // a torn final write from a crash
                    Err(e) if e.is_eof() => break,
                    Err(e) => return Err(corrupt(LOG, i + 1, e)),
                };
                if entry.run_id != run_id {
                    return Err(StoreError::RunMismatch { expected: run_id.to_owned(), found: entry.run_id });
                }
                let a = entry.annotation;
                if entries.get(&a.cluster_id).is_none_or(|old: &Annotation| old.version < a.version) {
                    entries.insert(a.cluster_id, a);
                }
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        let mut store = Self { dir: dir.to_path_buf(), run_id: run_id.to_owned(), entries, log, clock: Box::new(system_clock) };
        store.compact()?;
        Ok(store)
    }

    /// Replaces the timestamp source.
    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn get(&self, cluster_id: usize) -> Option<&Annotation> {
        self.entries.get(&cluster_id)
    }

    pub fn all(&self) -> &BTreeMap<usize, Annotation> {
        &self.entries
    }

    pub fn status(&self, cluster_id: usize) -> Status {
        self.get(cluster_id).map_or(Status::Pending, |a| a.status)
    }

    pub fn version(&self, cluster_id: usize) -> u64 {
        self.get(cluster_id).map_or(0, |a| a.version)
    }

    /// Records a decision. An edit to the automatic label itself is stored
    /// as a validation. When `expected_version` is given and stale the write
    /// goes through and `conflict` is set.
    pub fn annotate(
        &mut self,
        cluster_id: usize,
        decision: Decision,
        automatic_label: &str,
        note: Option<String>,
        expected_version: Option<u64>,
    ) -> Result<Written, StoreError> {
        let (status, final_label) = match decision {
            Decision::Validate => (Status::Validated, automatic_label.to_owned()),
            Decision::Reject => (Status::Rejected, automatic_label.to_owned()),
            Decision::Edit { label } => {
                let label = label.trim().to_owned();
                if label.is_empty() || label.contains(['\t', '\n', '\r']) {
                    return Err(StoreError::InvalidLabel(label));
                }
                if label == automatic_label {
                    (Status::Validated, label)
                } else {
                    (Status::Edited, label)
                }
            }
        };
        let current = self.version(cluster_id);
        let annotation = Annotation { cluster_id, status, final_label, note, timestamp: (self.clock)(), version: current + 1 };
        let entry = LogEntry { run_id: self.run_id.clone(), annotation };
        let mut line = serde_json::to_string(&entry).expect("annotations serialize");
        line.push('\n');
        self.log.write_all(line.as_bytes())?;
        self.log.sync_data()?;
        self.entries.insert(cluster_id, entry.annotation.clone());
        Ok(Written { annotation: entry.annotation, conflict: expected_version.is_some_and(|v| v != current) })
    }

    /// Writes the snapshot atomically and empties the log.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let snapshot = Snapshot { run_id: self.run_id.clone(), annotations: self.entries.values().cloned().collect() };
        let text = serde_json::to_string_pretty(&snapshot).expect("annotations serialize") + "\n";
        let tmp = self.dir.join(format!("{SNAPSHOT}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT))?;
        self.log.set_len(0)?;
        self.log.sync_all()?;
        Ok(())
    }
}
