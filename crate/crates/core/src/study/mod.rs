//! Annotation study engine.
//!
//! A study serves documents to workers under randomized conditions, collects
//! timed labels and persists everything as an append-only log of JSON lines.
//! The log is the single source of truth: [`StudyState`] is a fold over it,
//! and a restarted study is rebuilt by replaying the file.

mod engine;
mod log;
mod materials;
mod state;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use engine::{Clock, FileSink, LogSink, ManualClock, MemorySink, Study, SystemClock};
pub use log::{parse_log, render_log, AssignmentExpired, LogHeader, LogRecord, SCHEMA_VERSION};
pub use materials::{
    build_items, prepare, resolve_path, ExplanationSet, MaterialsReport, Prepared,
};
pub use state::{AssignmentStatus, StudyState};

/// Experimental arm an annotation is served under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    NoHighlights,
    Lime,
    Covar,
    Random,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::NoHighlights,
        Condition::Lime,
        Condition::Covar,
        Condition::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::NoHighlights => "no_highlights",
            Condition::Lime => "lime",
            Condition::Covar => "covar",
            Condition::Random => "random",
        }
    }

    /// The explanation method whose highlights this condition shows.
    pub fn method(self) -> Option<crate::explain::Method> {
        use crate::explain::Method;
        match self {
            Condition::NoHighlights => None,
            Condition::Lime => Some(Method::Lime),
            Condition::Covar => Some(Method::Covar),
            Condition::Random => Some(Method::Random),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown condition {s:?}"))
    }
}

/// `[start, end)` in Unicode code points of the document text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

fn default_annotations_per_item() -> u32 {
    9
}

fn default_ttl_ms() -> u64 {
    15 * 60 * 1000
}

fn default_lime_samples() -> usize {
    2500
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Path of the TSV dataset whose documents are annotated.
    pub dataset: String,
    /// Path of the model artifact whose predictions are explained.
    pub model: String,
    pub conditions: Vec<Condition>,
    #[serde(default = "default_annotations_per_item")]
    pub annotations_per_item: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub discard_duplicate_highlight_items: bool,
    /// Pending assignments older than this return to the pool.
    #[serde(default = "default_ttl_ms")]
    pub assignment_ttl_ms: u64,
    #[serde(default = "default_lime_samples")]
    pub lime_samples: usize,
    /// Optional precomputed explanation batch files, keyed by condition.
    /// Conditions not listed here are explained when the study is created.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub explanation_files: BTreeMap<Condition, String>,
    /// Covar importances come from this held-out dataset if given, else from
    /// `dataset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout_dataset: Option<String>,
}

impl StudyConfig {
    pub fn new(
        dataset: impl Into<String>,
        model: impl Into<String>,
        conditions: Vec<Condition>,
    ) -> Self {
        StudyConfig {
            dataset: dataset.into(),
            model: model.into(),
            conditions,
            annotations_per_item: default_annotations_per_item(),
            seed: 0,
            discard_duplicate_highlight_items: false,
            assignment_ttl_ms: default_ttl_ms(),
            lime_samples: default_lime_samples(),
            explanation_files: BTreeMap::new(),
            heldout_dataset: None,
        }
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        if self.annotations_per_item < 1 {
            return Err(StudyError::InvalidConfig(
                "annotations_per_item must be >= 1".into(),
            ));
        }
        if self.conditions.is_empty() {
            return Err(StudyError::InvalidConfig(
                "conditions must be non-empty".into(),
            ));
        }
        let mut seen = self.conditions.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.conditions.len() {
            return Err(StudyError::InvalidConfig(
                "conditions must be distinct".into(),
            ));
        }
        Ok(())
    }
}

/// One document as served by a study, with the highlight spans prepared for
/// each condition it may be shown under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyItem {
    pub doc_id: String,
    pub text: String,
    pub highlights: BTreeMap<Condition, Vec<Span>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub assignment_id: String,
    pub worker_id: String,
    pub doc_id: String,
    pub condition: Condition,
    pub highlights: Vec<Span>,
    pub issued_at_ms: u64,
}

/// One judgment. `label_given` and `true_label` are 1-based class indices;
/// `true_label` is filled in at analysis time and is `null` in study logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub assignment_id: String,
    pub worker_id: String,
    pub doc_id: String,
    pub condition: Condition,
    pub label_given: u32,
    pub elapsed_ms: u64,
    pub server_received_at: u64,
    pub true_label: Option<u32>,
}

/// What a client posts when it finishes a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub assignment_id: String,
    pub worker_id: String,
    pub label_given: u32,
    pub elapsed_ms: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("invalid study config: {0}")]
    InvalidConfig(String),
    #[error("worker id must be non-empty")]
    EmptyWorkerId,
    #[error("study complete")]
    StudyComplete,
    #[error("no eligible items for this worker")]
    NoEligibleItems,
    #[error("unknown assignment {0:?}")]
    UnknownAssignment(String),
    #[error("assignment {0:?} belongs to another worker")]
    WorkerMismatch(String),
    #[error("assignment {0:?} was already answered")]
    DuplicateSubmission(String),
    #[error("assignment {0:?} expired")]
    ExpiredAssignment(String),
    #[error("label {label} outside 1..={n_classes}")]
    InvalidLabel { label: u32, n_classes: usize },
    #[error("elapsed_ms must be > 0")]
    InvalidElapsed,
    #[error("log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("materials: {0}")]
    Materials(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StudyError {
    /// Stable snake_case reason code for rejected requests.
    pub fn reason(&self) -> &'static str {
        match self {
            StudyError::InvalidConfig(_) => "invalid_config",
            StudyError::EmptyWorkerId => "empty_worker_id",
            StudyError::StudyComplete => "study_complete",
            StudyError::NoEligibleItems => "no_eligible_items",
            StudyError::UnknownAssignment(_) => "unknown_assignment",
            StudyError::WorkerMismatch(_) => "worker_mismatch",
            StudyError::DuplicateSubmission(_) => "duplicate_submission",
            StudyError::ExpiredAssignment(_) => "expired_assignment",
            StudyError::InvalidLabel { .. } => "invalid_label",
            StudyError::InvalidElapsed => "invalid_elapsed",
            StudyError::CorruptLog { .. } => "corrupt_log",
            StudyError::Materials(_) => "materials",
            StudyError::Io(_) => "io",
        }
    }
}
