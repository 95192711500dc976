use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, Assignment, StudyConfig, StudyError, StudyItem};

pub const SCHEMA_VERSION: u32 = 1;

/// First line of every study log: everything needed to rebuild the study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    pub study_id: String,
    pub created_at_ms: u64,
    pub config: StudyConfig,
    pub label_names: Vec<String>,
    pub items: Vec<StudyItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentExpired {
    pub assignment_id: String,
    pub expired_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record_type", rename_all = "snake_case")]
pub enum LogRecord {
    Header(LogHeader),
    AssignmentIssued(Assignment),
    AssignmentExpired(AssignmentExpired),
    Annotation(AnnotationRecord),
}

#[derive(Serialize, Deserialize)]
struct Line {
    schema_version: u32,
    #[serde(flatten)]
    record: LogRecord,
}

impl LogRecord {
    /// One JSON line without the trailing newline.
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct LineRef<'a> {
            schema_version: u32,
            #[serde(flatten)]
            record: &'a LogRecord,
        }
        serde_json::to_string(&LineRef {
            schema_version: SCHEMA_VERSION,
            record: self,
        })
        .expect("log records serialize")
    }

    pub fn from_line(line: &str, line_no: usize) -> Result<Self, StudyError> {
        let parsed: Line = serde_json::from_str(line).map_err(|e| StudyError::CorruptLog {
            line: line_no,
            message: e.to_string(),
        })?;
        if parsed.schema_version != SCHEMA_VERSION {
            return Err(StudyError::CorruptLog {
                line: line_no,
                message: format!("unsupported schema version {}", parsed.schema_version),
            });
        }
        Ok(parsed.record)
    }
}

/// Parses a whole log. The first record must be the header.
pub fn parse_log(text: &str) -> Result<(LogHeader, Vec<LogRecord>), StudyError> {
    let mut records = Vec::new();
    let mut header = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match LogRecord::from_line(line, i + 1)? {
            LogRecord::Header(h) if header.is_none() && records.is_empty() => header = Some(h),
            LogRecord::Header(_) => {
                return Err(StudyError::CorruptLog {
                    line: i + 1,
                    message: "unexpected second header".into(),
                })
            }
            _ if header.is_none() => {
                return Err(StudyError::CorruptLog {
                    line: i + 1,
                    message: "log must start with a header record".into(),
                })
            }
            r => records.push(r),
        }
    }
    let header = header.ok_or(StudyError::CorruptLog {
        line: 1,
        message: "empty log".into(),
    })?;
    Ok((header, records))
}

pub fn render_log(header: &LogHeader, records: &[LogRecord]) -> String {
    let mut out = LogRecord::Header(header.clone()).to_line();
    out.push('\n');
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}
