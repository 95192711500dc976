use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::log::{parse_log, AssignmentExpired, LogHeader, LogRecord};
use super::state::{AssignmentStatus, StudyState};
use super::{
    AnnotationRecord, Assignment, Condition, StudyConfig, StudyError, StudyItem, Submission,
};

/// Milliseconds since the Unix epoch (or any fixed origin).
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to. Simulations use it so logs are
/// reproducible byte for byte.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Durable destination for log lines. `append` receives one complete line
/// without the newline and must persist it before returning.
pub trait LogSink: Send {
    fn append(&mut self, line: &str) -> io::Result<()>;
}

#[derive(Debug, Default)]
pub struct MemorySink;

impl LogSink for MemorySink {
    fn append(&mut self, _line: &str) -> io::Result<()> {
        Ok(())
    }
}

/// Appends to a file, one `write_all` per line followed by a flush.
#[derive(Debug)]
pub struct FileSink {
    file: File,
}

impl FileSink {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(path)?;
        Ok(FileSink { file })
    }

    pub fn append_to(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(FileSink { file })
    }
}

impl LogSink for FileSink {
    fn append(&mut self, line: &str) -> io::Result<()> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.file.write_all(&buf)?;
        self.file.flush()
    }
}

struct Inner {
    state: StudyState,
    lines: Vec<String>,
    sink: Box<dyn LogSink>,
}

impl Inner {
    /// Persists, then applies. A record that fails to persist never reaches
    /// the in-memory state.
    fn commit(&mut self, record: LogRecord) -> Result<(), StudyError> {
        let line = record.to_line();
        self.sink.append(&line)?;
        self.state
            .apply(&record)
            .expect("engine only emits records valid for the current state");
        self.lines.push(line);
        Ok(())
    }
}

/// A running study. All mutations go through one mutex (single writer); the
/// log line is written before the caller sees the result.
pub struct Study {
    inner: Mutex<Inner>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Study {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Study").field("id", &self.id()).finish()
    }
}

impl Study {
    /// Starts a new study and writes its header.
    pub fn create(
        study_id: impl Into<String>,
        config: StudyConfig,
        label_names: Vec<String>,
        items: Vec<StudyItem>,
        mut sink: Box<dyn LogSink>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, StudyError> {
        config.validate()?;
        if label_names.len() < 2 {
            return Err(StudyError::InvalidConfig("need at least two labels".into()));
        }
        if items.is_empty() {
            return Err(StudyError::InvalidConfig("study has no items".into()));
        }
        let header = LogHeader {
            study_id: study_id.into(),
            created_at_ms: clock.now_ms(),
            config,
            label_names,
            items,
        };
        let line = LogRecord::Header(header.clone()).to_line();
        sink.append(&line)?;
        Ok(Study {
            inner: Mutex::new(Inner {
                state: StudyState::new(header),
                lines: vec![line],
                sink,
            }),
            clock,
        })
    }

    /// Rebuilds a study from its log text. New records go to `sink`, which
    /// should append after the existing content.
    pub fn replay(
        log: &str,
        sink: Box<dyn LogSink>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, StudyError> {
        let (header, records) = parse_log(log)?;
        let state = StudyState::replay(header.clone(), &records)?;
        let mut lines = vec![LogRecord::Header(header).to_line()];
        lines.extend(records.iter().map(LogRecord::to_line));
        Ok(Study {
            inner: Mutex::new(Inner { state, lines, sink }),
            clock,
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn id(&self) -> String {
        self.lock().state.header.study_id.clone()
    }

    pub fn label_names(&self) -> Vec<String> {
        self.lock().state.header.label_names.clone()
    }

    pub fn config(&self) -> StudyConfig {
        self.lock().state.header.config.clone()
    }

    pub fn item(&self, doc_id: &str) -> Option<StudyItem> {
        let inner = self.lock();
        inner
            .state
            .item_index(doc_id)
            .map(|i| inner.state.header.items[i].clone())
    }

    pub fn snapshot(&self) -> StudyState {
        self.lock().state.clone()
    }

    pub fn annotations(&self) -> Vec<AnnotationRecord> {
        self.lock().state.annotations.clone()
    }

    /// The complete log, one JSON record per line.
    pub fn export(&self) -> String {
        let inner = self.lock();
        let mut out = String::new();
        for l in &inner.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    /// Issues the next task for `worker_id`.
    ///
    /// Expired pending assignments are re-pooled first. Among items the worker
    /// has never been issued and whose completed-plus-pending count is below
    /// the target, the least-filled one (earliest on ties) is chosen. The
    /// condition is drawn uniformly from the item's servable conditions with a
    /// generator keyed on the study seed and the assignment sequence number,
    /// so the draw sequence survives restarts.
    pub fn next_assignment(&self, worker_id: &str) -> Result<Assignment, StudyError> {
        if worker_id.trim().is_empty() {
            return Err(StudyError::EmptyWorkerId);
        }
        let now = self.clock.now_ms();
        let mut inner = self.lock();
        expire_stale(&mut inner, now)?;

        let state = &inner.state;
        if state.is_complete() {
            return Err(StudyError::StudyComplete);
        }
        let config = &state.header.config;
        let target = config.annotations_per_item;
        let seen = state.seen.get(worker_id);
        let mut best: Option<(u32, usize)> = None;
        for (i, item) in state.header.items.iter().enumerate() {
            let load = state.completed_per_item[i] + state.pending_per_item[i];
            if load >= target || seen.is_some_and(|s| s.contains(&i)) {
                continue;
            }
            if !config
                .conditions
                .iter()
                .any(|c| item.highlights.contains_key(c))
            {
                continue;
            }
            if best.is_none_or(|(l, _)| load < l) {
                best = Some((load, i));
            }
        }
        let Some((_, item_idx)) = best else {
            return Err(StudyError::NoEligibleItems);
        };
        let item = &state.header.items[item_idx];
        let servable: Vec<Condition> = config
            .conditions
            .iter()
            .copied()
            .filter(|c| item.highlights.contains_key(c))
            .collect();
        let seq = state.issued;
        let mut rng = condition_stream(config.seed, seq);
        let condition = servable[rng.random_range(0..servable.len())];
        let assignment = Assignment {
            assignment_id: format!("a{seq}"),
            worker_id: worker_id.to_string(),
            doc_id: item.doc_id.clone(),
            condition,
            highlights: item.highlights[&condition].clone(),
            issued_at_ms: now,
        };
        inner.commit(LogRecord::AssignmentIssued(assignment.clone()))?;
        Ok(assignment)
    }

    pub fn submit(&self, submission: &Submission) -> Result<AnnotationRecord, StudyError> {
        let now = self.clock.now_ms();
        let mut inner = self.lock();
        let state = &inner.state;
        let id = &submission.assignment_id;
        let (assignment, status) = state
            .assignments
            .get(id)
            .ok_or_else(|| StudyError::UnknownAssignment(id.clone()))?;
        if assignment.worker_id != submission.worker_id {
            return Err(StudyError::WorkerMismatch(id.clone()));
        }
        match status {
            AssignmentStatus::Completed => return Err(StudyError::DuplicateSubmission(id.clone())),
            AssignmentStatus::Expired => return Err(StudyError::ExpiredAssignment(id.clone())),
            AssignmentStatus::Pending => {}
        }
        let n_classes = state.n_classes();
        if submission.label_given < 1 || submission.label_given as usize > n_classes {
            return Err(StudyError::InvalidLabel {
                label: submission.label_given,
                n_classes,
            });
        }
        if submission.elapsed_ms == 0 {
            return Err(StudyError::InvalidElapsed);
        }
        if is_stale(assignment, state.header.config.assignment_ttl_ms, now) {
            let expired = AssignmentExpired {
                assignment_id: id.clone(),
                expired_at_ms: now,
            };
            inner.commit(LogRecord::AssignmentExpired(expired))?;
            return Err(StudyError::ExpiredAssignment(id.clone()));
        }
        let record = AnnotationRecord {
            assignment_id: id.clone(),
            worker_id: assignment.worker_id.clone(),
            doc_id: assignment.doc_id.clone(),
            condition: assignment.condition,
            label_given: submission.label_given,
            elapsed_ms: submission.elapsed_ms,
            server_received_at: now,
            true_label: None,
        };
        inner.commit(LogRecord::Annotation(record.clone()))?;
        Ok(record)
    }
}

fn is_stale(a: &Assignment, ttl_ms: u64, now: u64) -> bool {
    now >= a.issued_at_ms.saturating_add(ttl_ms)
}

fn expire_stale(inner: &mut Inner, now: u64) -> Result<(), StudyError> {
    let ttl = inner.state.header.config.assignment_ttl_ms;
    let stale: Vec<String> = inner
        .state
        .pending
        .iter()
        .take_while(|(issued, _)| now >= issued.saturating_add(ttl))
        .map(|(_, id)| id.clone())
        .collect();
    for assignment_id in stale {
        inner.commit(LogRecord::AssignmentExpired(AssignmentExpired {
            assignment_id,
            expired_at_ms: now,
        }))?;
    }
    Ok(())
}

fn condition_stream(seed: u64, seq: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(seq);
    rng
}
