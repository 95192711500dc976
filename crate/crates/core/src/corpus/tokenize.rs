use std::collections::HashSet;
use std::sync::LazyLock;

use sha2::{Digest, Sha256};

/// Embedded English stopword list, one lowercase word per line, sorted.
pub const STOPWORDS_TXT: &str = include_str!("stopwords.txt");

static STOPWORDS: LazyLock<HashSet<&'static str>> =
    LazyLock::new(|| STOPWORDS_TXT.lines().filter(|l| !l.is_empty()).collect());

/// The stopword list in its embedded (sorted) order.
pub fn stopwords() -> impl Iterator<Item = &'static str> {
    STOPWORDS_TXT.lines().filter(|l| !l.is_empty())
}

pub fn is_stopword(term: &str) -> bool {
    STOPWORDS.contains(term)
}

/// Hex SHA-256 of the embedded stopword file. Stored in model artifacts so a
/// model is never applied with a different list than it was trained with.
pub fn stopwords_checksum() -> String {
    hex_digest(STOPWORDS_TXT.as_bytes())
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// A lowercased token with its `[start, end)` span in Unicode code points of
/// the original text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub term: String,
    pub start: usize,
    pub end: usize,
}

/// Splits `text` into maximal runs of alphanumeric characters, lowercased.
///
/// Spans are code-point offsets into `text` (not byte offsets), which is also
/// the unit used for highlight spans on the wire.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let mut pos = 0;
    for c in text.chars() {
        if c.is_alphanumeric() {
            let (_, buf) = current.get_or_insert_with(|| (pos, String::new()));
            buf.push(c);
        } else if let Some((start, run)) = current.take() {
            tokens.push(Token {
                term: run.to_lowercase(),
                start,
                end: pos,
            });
        }
        pos += 1;
    }
    if let Some((start, run)) = current {
        tokens.push(Token {
            term: run.to_lowercase(),
            start,
            end: pos,
        });
    }
    tokens
}

pub fn remove_stopwords(tokens: Vec<Token>) -> Vec<Token> {
    tokens
        .into_iter()
        .filter(|t| !is_stopword(&t.term))
        .collect()
}

/// Tokenize and drop stopwords.
pub fn content_tokens(text: &str) -> Vec<Token> {
    remove_stopwords(tokenize(text))
}

/// Slices `text` by a code-point span.
pub fn slice_chars(text: &str, start: usize, end: usize) -> String {
    text.chars()
        .skip(start)
        .take(end.saturating_sub(start))
        .collect()
}
