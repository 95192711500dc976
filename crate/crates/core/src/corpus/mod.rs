//! Dataset ingestion and tf-idf featurization.
//!
//! Documents are read from a UTF-8 TSV file with header `id<TAB>label<TAB>text`.
//! Tabs, newlines, carriage returns and backslashes inside fields are written
//! as `\t`, `\n`, `\r` and `\\`.

mod features;
mod tokenize;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

pub use features::{
    smoothed_idf, FeatureMatrix, FeatureVector, Featurizer, FeaturizerConfig, Vocabulary,
};
pub use tokenize::{
    content_tokens, hex_digest, is_stopword, remove_stopwords, slice_chars, stopwords,
    stopwords_checksum, tokenize, Token, STOPWORDS_TXT,
};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("no tokens survive tokenization and stopword removal")]
    EmptyVocabulary,
    #[error("vocabulary terms are not strictly sorted")]
    UnsortedVocabulary,
    #[error("idf has {idf} entries but vocabulary has {vocab}")]
    IdfLength { idf: usize, vocab: usize },
    #[error("stopword list checksum does not match this build")]
    StopwordMismatch,
    #[error("row {row} has a feature position >= {n_features}")]
    FeatureOutOfRange { row: usize, n_features: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("document {0:?} has empty text")]
    EmptyText(String),
    #[error("document {id:?} has label {label:?} which is not one of the model's labels")]
    UnknownLabel { id: String, label: String },
    #[error("dataset has no documents")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One document. `label` is a 0-based class index; the on-disk and wire
/// formats use the 1-based index or the label name.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub docs: Vec<Document>,
    pub label_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, enforcing unique ids and non-blank texts.
    pub fn new(docs: Vec<Document>, label_names: Vec<String>) -> Result<Self, CorpusError> {
        let mut ids = HashSet::new();
        for d in &docs {
            if !ids.insert(d.id.as_str()) {
                return Err(CorpusError::DuplicateId(d.id.clone()));
            }
            if d.text.trim().is_empty() {
                return Err(CorpusError::EmptyText(d.id.clone()));
            }
        }
        Ok(Dataset { docs, label_names })
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> + Clone {
        self.docs.iter().map(|d| d.text.as_str())
    }

    /// Labels of all documents; `None` if any document is unlabeled.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.docs.iter().map(|d| d.label).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.docs.iter().find(|d| d.id == id)
    }

    /// Parses TSV text. Labels are resolved as follows: if every non-empty
    /// label is an integer ≥ 1 the classes are `1..=max`; otherwise label
    /// strings are assigned indices in first-seen order. Empty labels leave
    /// the document unlabeled.
    pub fn parse_tsv(input: &str) -> Result<Self, CorpusError> {
        let rows = parse_rows(input)?;
        let raw: Vec<&str> = rows
            .iter()
            .map(|r| r.1.as_str())
            .filter(|l| !l.is_empty())
            .collect();
        let numeric: Option<Vec<usize>> = raw
            .iter()
            .map(|l| l.parse::<usize>().ok().filter(|&n| n >= 1))
            .collect();
        let label_names: Vec<String> = match numeric {
            Some(ns) if !ns.is_empty() => {
                let max = ns.into_iter().max().unwrap_or(1);
                (1..=max).map(|n| n.to_string()).collect()
            }
            _ => {
                let mut names: Vec<String> = Vec::new();
                for l in raw {
                    if !names.iter().any(|n| n == l) {
                        names.push(l.to_string());
                    }
                }
                names
            }
        };
        Self::resolve(rows, label_names)
    }

    /// Parses TSV text against a fixed label set (e.g. a trained model's).
    pub fn parse_tsv_with_labels(input: &str, label_names: &[String]) -> Result<Self, CorpusError> {
        Self::resolve(parse_rows(input)?, label_names.to_vec())
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Self::parse_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn read_tsv_with_labels(
        path: impl AsRef<Path>,
        label_names: &[String],
    ) -> Result<Self, CorpusError> {
        Self::parse_tsv_with_labels(&std::fs::read_to_string(path)?, label_names)
    }

    fn resolve(
        rows: Vec<(String, String, String)>,
        label_names: Vec<String>,
    ) -> Result<Self, CorpusError> {
        let mut docs = Vec::with_capacity(rows.len());
        for (id, label, text) in rows {
            let label = if label.is_empty() {
                None
            } else {
                match label_names.iter().position(|n| *n == label) {
                    Some(k) => Some(k),
                    None => return Err(CorpusError::UnknownLabel { id, label }),
                }
            };
            docs.push(Document { id, text, label });
        }
        if docs.is_empty() {
            return Err(CorpusError::EmptyDataset);
        }
        Dataset::new(docs, label_names)
    }

    /// Serializes back to the TSV format, writing label names.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tlabel\ttext\n");
        for d in &self.docs {
            let label = d.label.map(|k| self.label_names[k].as_str()).unwrap_or("");
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                escape_field(&d.id),
                escape_field(label),
                escape_field(&d.text)
            );
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

fn parse_rows(input: &str) -> Result<Vec<(String, String, String)>, CorpusError> {
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == "id\tlabel\ttext" => {}
        _ => {
            return Err(CorpusError::Parse {
                line: 1,
                message: "expected header `id<TAB>label<TAB>text`".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CorpusError::Parse {
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let unescape = |s: &str| {
            unescape_field(s).map_err(|message| CorpusError::Parse {
                line: i + 1,
                message,
            })
        };
        rows.push((
            unescape(fields[0])?,
            unescape(fields[1])?.trim().to_string(),
            unescape(fields[2])?,
        ));
    }
    Ok(rows)
}

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}
