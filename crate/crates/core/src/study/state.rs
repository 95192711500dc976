use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::log::{AssignmentExpired, LogHeader, LogRecord};
use super::{AnnotationRecord, Assignment, StudyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentStatus {
    Pending,
    Completed,
    Expired,
}

/// Study state derived from the log. Every field is a pure function of the
/// header and the records applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyState {
    pub header: LogHeader,
    /// Assignments issued so far; also the sequence number of the next one.
    pub issued: u64,
    pub assignments: BTreeMap<String, (Assignment, AssignmentStatus)>,
    pub completed_per_item: Vec<u32>,
    pub pending_per_item: Vec<u32>,
    /// Item indices ever issued to each worker, including expired ones.
    pub seen: BTreeMap<String, BTreeSet<usize>>,
    /// Pending assignments ordered by issue time.
    pub pending: BTreeSet<(u64, String)>,
    pub annotations: Vec<AnnotationRecord>,
    item_index: HashMap<String, usize>,
}

impl StudyState {
    pub fn new(header: LogHeader) -> Self {
        let n = header.items.len();
        let item_index = header
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.doc_id.clone(), i))
            .collect();
        StudyState {
            header,
            issued: 0,
            assignments: BTreeMap::new(),
            completed_per_item: vec![0; n],
            pending_per_item: vec![0; n],
            seen: BTreeMap::new(),
            pending: BTreeSet::new(),
            annotations: Vec::new(),
            item_index,
        }
    }

    /// Folds `records` over a fresh state.
    pub fn replay(header: LogHeader, records: &[LogRecord]) -> Result<Self, StudyError> {
        let mut state = StudyState::new(header);
        for (i, r) in records.iter().enumerate() {
            state.apply(r).map_err(|message| StudyError::CorruptLog {
                line: i + 2,
                message,
            })?;
        }
        Ok(state)
    }

    pub fn item_index(&self, doc_id: &str) -> Option<usize> {
        self.item_index.get(doc_id).copied()
    }

    pub fn is_complete(&self) -> bool {
        let target = self.header.config.annotations_per_item;
        self.completed_per_item.iter().all(|&c| c >= target)
    }

    pub fn has_seen(&self, worker_id: &str, item: usize) -> bool {
        self.seen.get(worker_id).is_some_and(|s| s.contains(&item))
    }

    pub fn n_classes(&self) -> usize {
        self.header.label_names.len()
    }

    pub fn apply(&mut self, record: &LogRecord) -> Result<(), String> {
        match record {
            LogRecord::Header(_) => Err("unexpected header".into()),
            LogRecord::AssignmentIssued(a) => {
                let item = self
                    .item_index(&a.doc_id)
                    .ok_or_else(|| format!("unknown document {:?}", a.doc_id))?;
                if self.assignments.contains_key(&a.assignment_id) {
                    return Err(format!("assignment {:?} issued twice", a.assignment_id));
                }
                if !self
                    .seen
                    .entry(a.worker_id.clone())
                    .or_default()
                    .insert(item)
                {
                    return Err(format!(
                        "worker {:?} already saw {:?}",
                        a.worker_id, a.doc_id
                    ));
                }
                self.pending_per_item[item] += 1;
                self.issued += 1;
                self.pending
                    .insert((a.issued_at_ms, a.assignment_id.clone()));
                self.assignments.insert(
                    a.assignment_id.clone(),
                    (a.clone(), AssignmentStatus::Pending),
                );
                Ok(())
            }
            LogRecord::AssignmentExpired(AssignmentExpired { assignment_id, .. }) => {
                let (a, status) = self
                    .assignments
                    .get_mut(assignment_id)
                    .ok_or_else(|| format!("expiry of unknown assignment {assignment_id:?}"))?;
                if *status != AssignmentStatus::Pending {
                    return Err(format!("expiry of settled assignment {assignment_id:?}"));
                }
                *status = AssignmentStatus::Expired;
                self.pending
                    .remove(&(a.issued_at_ms, a.assignment_id.clone()));
                let item = self.item_index[&a.doc_id];
                self.pending_per_item[item] -= 1;
                Ok(())
            }
            LogRecord::Annotation(r) => {
                let (a, status) = self.assignments.get_mut(&r.assignment_id).ok_or_else(|| {
                    format!("annotation for unknown assignment {:?}", r.assignment_id)
                })?;
                if *status != AssignmentStatus::Pending {
                    return Err(format!(
                        "annotation for settled assignment {:?}",
                        r.assignment_id
                    ));
                }
                if a.worker_id != r.worker_id || a.doc_id != r.doc_id || a.condition != r.condition
                {
                    return Err(format!(
                        "annotation disagrees with assignment {:?}",
                        r.assignment_id
                    ));
                }
                *status = AssignmentStatus::Completed;
                self.pending
                    .remove(&(a.issued_at_ms, a.assignment_id.clone()));
                let item = self.item_index[&a.doc_id];
                self.pending_per_item[item] -= 1;
                self.completed_per_item[item] += 1;
                self.annotations.push(r.clone());
                Ok(())
            }
        }
    }
}
