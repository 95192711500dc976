use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::tokenize::{content_tokens, hex_digest, stopwords_checksum, Token};
use super::CorpusError;

/// Sorted unigram vocabulary with a term → feature position index.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Collects every post-stopword unigram across `texts`, keeping terms that
    /// occur in at least `min_df` documents. Terms are sorted lexicographically
    /// so the result does not depend on corpus order.
    pub fn build<'a, I>(texts: I, min_df: usize) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            let seen: BTreeSet<String> = content_tokens(text).into_iter().map(|t| t.term).collect();
            for term in seen {
                *df.entry(term).or_default() += 1;
            }
        }
        let terms: Vec<String> = df
            .into_iter()
            .filter(|(_, n)| *n >= min_df.max(1))
            .map(|(t, _)| t)
            .collect();
        Self::from_terms(terms)
    }

    /// Rebuilds a vocabulary from an already-sorted term list (model loading).
    pub fn from_terms(terms: Vec<String>) -> Result<Self, CorpusError> {
        if terms.is_empty() {
            return Err(CorpusError::EmptyVocabulary);
        }
        if !terms.windows(2).all(|w| w[0] < w[1]) {
            return Err(CorpusError::UnsortedVocabulary);
        }
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn position(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, position: usize) -> &str {
        &self.terms[position]
    }

    /// Hex SHA-256 over the newline-joined terms.
    pub fn checksum(&self) -> String {
        hex_digest(self.terms.join("\n").as_bytes())
    }
}

/// Smoothed inverse document frequency `ln((1 + N) / (1 + df)) + 1`.
pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Sparse, non-negative feature vector with entries sorted by position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector {
    entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    /// Builds a vector from arbitrary `(position, value)` pairs; duplicates
    /// are summed and zeros dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in pairs {
            *acc.entry(i).or_default() += v;
        }
        FeatureVector {
            entries: acc.into_iter().filter(|(_, v)| *v != 0.0).collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, position: usize) -> f64 {
        self.entries
            .binary_search_by_key(&position, |(i, _)| *i)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    /// Largest position + 1, or 0 for the zero vector.
    pub fn min_dim(&self) -> usize {
        self.entries.last().map(|(i, _)| i + 1).unwrap_or(0)
    }
}

/// `N` feature vectors over a common dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Vec<FeatureVector>,
    n_features: usize,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<FeatureVector>, n_features: usize) -> Result<Self, CorpusError> {
        if let Some(r) = rows.iter().position(|r| r.min_dim() > n_features) {
            return Err(CorpusError::FeatureOutOfRange { row: r, n_features });
        }
        Ok(FeatureMatrix { rows, n_features })
    }

    pub fn rows(&self) -> &[FeatureVector] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub min_df: usize,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig { min_df: 1 }
    }
}

/// Frozen tf-idf featurizer: vocabulary plus per-term idf weights fitted on a
/// training corpus. Out-of-vocabulary tokens are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurizer {
    vocab: Vocabulary,
    idf: Vec<f64>,
    config: FeaturizerConfig,
    stopwords_checksum: String,
}

impl Featurizer {
    pub fn fit<'a, I>(texts: I, config: FeaturizerConfig) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = &'a str>,
        I::IntoIter: Clone,
    {
        let texts = texts.into_iter();
        let vocab = Vocabulary::build(texts.clone(), config.min_df)?;
        let mut df = vec![0usize; vocab.len()];
        let mut n_docs = 0;
        for text in texts {
            n_docs += 1;
            let seen: BTreeSet<usize> = content_tokens(text)
                .iter()
                .filter_map(|t| vocab.position(&t.term))
                .collect();
            for p in seen {
                df[p] += 1;
            }
        }
        let idf = df.iter().map(|&d| smoothed_idf(n_docs, d)).collect();
        Ok(Featurizer {
            vocab,
            idf,
            config,
            stopwords_checksum: stopwords_checksum(),
        })
    }

    /// Reassembles a featurizer from stored parts, checking the stopword list
    /// is the one compiled into this build.
    pub fn from_parts(
        vocab: Vocabulary,
        idf: Vec<f64>,
        config: FeaturizerConfig,
        stopwords_checksum: &str,
    ) -> Result<Self, CorpusError> {
        if idf.len() != vocab.len() {
            return Err(CorpusError::IdfLength {
                idf: idf.len(),
                vocab: vocab.len(),
            });
        }
        if stopwords_checksum != self::stopwords_checksum() {
            return Err(CorpusError::StopwordMismatch);
        }
        Ok(Featurizer {
            vocab,
            idf,
            config,
            stopwords_checksum: stopwords_checksum.to_string(),
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn config(&self) -> FeaturizerConfig {
        self.config
    }

    pub fn stopwords_checksum(&self) -> &str {
        &self.stopwords_checksum
    }

    pub fn n_features(&self) -> usize {
        self.vocab.len()
    }

    /// Content tokens of `text` that are in the vocabulary, paired with their
    /// feature position.
    pub fn vocab_tokens(&self, text: &str) -> Vec<(Token, usize)> {
        content_tokens(text)
            .into_iter()
            .filter_map(|t| self.vocab.position(&t.term).map(|p| (t, p)))
            .collect()
    }

    pub fn featurize(&self, text: &str) -> FeatureVector {
        self.featurize_positions(self.vocab_tokens(text).into_iter().map(|(_, p)| p))
    }

    /// Tf-idf vector from a bag of feature positions (one entry per token
    /// occurrence): raw counts × idf, then L2-normalized.
    pub fn featurize_positions(&self, positions: impl IntoIterator<Item = usize>) -> FeatureVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for p in positions {
            *counts.entry(p).or_default() += 1.0;
        }
        let mut entries: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(p, c)| (p, c * self.idf[p]))
            .collect();
        let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut entries {
                *v /= norm;
            }
        }
        FeatureVector { entries }
    }

    pub fn featurize_all<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> FeatureMatrix {
        FeatureMatrix {
            rows: texts.into_iter().map(|t| self.featurize(t)).collect(),
            n_features: self.n_features(),
        }
    }
}
