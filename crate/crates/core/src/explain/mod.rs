//! Word-level explanations: COVAR, a LIME-style local surrogate, and a random
//! baseline. Every explanation highlights exactly three token positions.
//!
//! COVAR scores feature `j` for class `k` as `a_k = Xᵀ ŷ_k`, the uncentered
//! product of held-out features with the model's predicted probabilities of
//! class `k`. A document's token at feature `j` then scores `x_j · a_k[j]`.

mod lime;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierError, LinearModel, ProbabilisticClassifier};
use crate::corpus::{content_tokens, FeatureMatrix, Featurizer, Token};

pub use lime::{lime_explain, LimeConfig};

/// Highlights per explanation.
pub const N_HIGHLIGHTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Covar,
    Lime,
    Random,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Covar, Method::Lime, Method::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Covar => "covar",
            Method::Lime => "lime",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExplainError {
    #[error("document {doc_id:?} has {found} candidate token positions, need {N_HIGHLIGHTS}")]
    TooFewTokens { doc_id: String, found: usize },
    #[error("{got} predictions for {rows} rows")]
    DimensionMismatch { rows: usize, got: usize },
    #[error("importances cover {got} classes, model has {want}")]
    ClassCount { got: usize, want: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub start: usize,
    pub end: usize,
    pub token: String,
    pub score: f64,
}

/// Three highlights with non-increasing scores. `explained_class` is 0-based
/// here and 1-based in batch files.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub doc_id: String,
    pub method: Method,
    pub explained_class: usize,
    pub highlights: Vec<Highlight>,
    /// A highlighted term occurs more than once in the document, so
    /// highlighting whole words would not mark exactly three tokens.
    pub had_duplicates: bool,
    /// The surrogate target was constant; all scores are 0.
    pub degenerate: bool,
}

#[derive(Serialize, Deserialize)]
struct ExplanationLine {
    doc_id: String,
    method: Method,
    explained_class: usize,
    highlights: Vec<Highlight>,
    #[serde(default)]
    had_duplicates: bool,
    #[serde(default)]
    degenerate: bool,
}

impl Explanation {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&ExplanationLine {
            doc_id: self.doc_id.clone(),
            method: self.method,
            explained_class: self.explained_class + 1,
            highlights: self.highlights.clone(),
            had_duplicates: self.had_duplicates,
            degenerate: self.degenerate,
        })
        .expect("explanations serialize")
    }

    pub fn from_json_line(line: &str, line_no: usize) -> Result<Self, ExplainError> {
        let parse_err = |message: String| ExplainError::Parse {
            line: line_no,
            message,
        };
        let l: ExplanationLine =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if l.explained_class == 0 {
            return Err(parse_err("explained_class is 1-based".into()));
        }
        Ok(Explanation {
            doc_id: l.doc_id,
            method: l.method,
            explained_class: l.explained_class - 1,
            highlights: l.highlights,
            had_duplicates: l.had_duplicates,
            degenerate: l.degenerate,
        })
    }
}

pub fn write_batch(explanations: &[Explanation]) -> String {
    let mut out = String::new();
    for e in explanations {
        out.push_str(&e.to_json_line());
        out.push('\n');
    }
    out
}

pub fn parse_batch(text: &str) -> Result<Vec<Explanation>, ExplainError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Explanation::from_json_line(l, i + 1))
        .collect()
}

/// Per-document generator: the batch seed keyed by the document's index, so
/// explaining a subset or a reordering does not change any single result.
pub fn doc_rng(seed: u64, doc_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(doc_index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector {
    pub class: usize,
    pub scores: Vec<f64>,
}

/// `Xᵀ ŷ_k`.
pub fn covar_importances(
    x: &FeatureMatrix,
    yhat_k: &[f64],
    class: usize,
) -> Result<ImportanceVector, ExplainError> {
    if yhat_k.len() != x.n_rows() {
        return Err(ExplainError::DimensionMismatch {
            rows: x.n_rows(),
            got: yhat_k.len(),
        });
    }
    let mut scores = vec![0.0; x.n_features()];
    for (row, &y) in x.rows().iter().zip(yhat_k) {
        for &(j, v) in row.entries() {
            scores[j] += v * y;
        }
    }
    Ok(ImportanceVector { class, scores })
}

/// COVAR importances for every class, computed once from held-out data.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarExplainer {
    importances: Vec<ImportanceVector>,
}

impl CovarExplainer {
    pub fn new(importances: Vec<ImportanceVector>) -> Self {
        CovarExplainer { importances }
    }

    pub fn fit<'a>(
        model: &LinearModel,
        heldout: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, ExplainError> {
        let x = model.featurizer().featurize_all(heldout);
        let probs: Vec<Vec<f64>> = x
            .rows()
            .iter()
            .map(|r| model.predict_proba(r).map(|d| d.probs))
            .collect::<Result<_, _>>()?;
        let importances = (0..model.n_classes())
            .map(|k| {
                let yk: Vec<f64> = probs.iter().map(|p| p[k]).collect();
                covar_importances(&x, &yk, k)
            })
            .collect::<Result<_, _>>()?;
        Ok(CovarExplainer { importances })
    }

    pub fn importances(&self) -> &[ImportanceVector] {
        &self.importances
    }

    pub fn explain(
        &self,
        doc_id: &str,
        text: &str,
        model: &LinearModel,
    ) -> Result<Explanation, ExplainError> {
        covar_explain(doc_id, text, model.featurizer(), model, &self.importances)
    }
}

/// One model's explainers for a batch of documents. Document `index` of the
/// batch draws its randomness from `doc_rng(seed, index)`, so a document gets
/// the same explanation whichever batch or process produces it.
#[derive(Debug, Clone)]
pub struct Explainers<'m> {
    model: &'m LinearModel,
    covar: Option<CovarExplainer>,
    lime: LimeConfig,
    seed: u64,
}

impl<'m> Explainers<'m> {
    /// COVAR is fitted on `heldout` only when `methods` contains it.
    pub fn new<'a>(
        model: &'m LinearModel,
        methods: &[Method],
        heldout: impl IntoIterator<Item = &'a str>,
        lime: LimeConfig,
        seed: u64,
    ) -> Result<Self, ExplainError> {
        let covar = if methods.contains(&Method::Covar) {
            Some(CovarExplainer::fit(model, heldout)?)
        } else {
            None
        };
        Ok(Explainers {
            model,
            covar,
            lime,
            seed,
        })
    }

    /// # Panics
    /// If `method` is COVAR and it was not requested in [`Explainers::new`].
    pub fn explain(
        &self,
        method: Method,
        index: usize,
        doc_id: &str,
        text: &str,
    ) -> Result<Explanation, ExplainError> {
        let mut rng = doc_rng(self.seed, index as u64);
        match method {
            Method::Covar => self
                .covar
                .as_ref()
                .expect("COVAR was not requested")
                .explain(doc_id, text, self.model),
            Method::Lime => lime_explain(
                doc_id,
                text,
                self.model.featurizer(),
                self.model,
                &self.lime,
                &mut rng,
            ),
            Method::Random => {
                random_explain(doc_id, text, self.model.predict_label(text), &mut rng)
            }
        }
    }
}

/// Ranks in-vocabulary token positions by `x_j · a_k[j]` for the predicted
/// class `k` and keeps the top three.
pub fn covar_explain(
    doc_id: &str,
    text: &str,
    featurizer: &Featurizer,
    model: &dyn ProbabilisticClassifier,
    importances: &[ImportanceVector],
) -> Result<Explanation, ExplainError> {
    if importances.len() != model.n_classes() {
        return Err(ExplainError::ClassCount {
            got: importances.len(),
            want: model.n_classes(),
        });
    }
    let tokens = featurizer.vocab_tokens(text);
    if tokens.len() < N_HIGHLIGHTS {
        return Err(ExplainError::TooFewTokens {
            doc_id: doc_id.to_string(),
            found: tokens.len(),
        });
    }
    let x = featurizer.featurize_positions(tokens.iter().map(|(_, p)| *p));
    let k = model.predict_proba(&x)?.argmax();
    let a = &importances[k].scores;
    let scored: Vec<(Token, f64)> = tokens
        .iter()
        .map(|(t, p)| (t.clone(), x.get(*p) * a[*p]))
        .collect();
    let highlights = top_highlights(scored);
    let had_duplicates = has_duplicates(&highlights, tokens.iter().map(|(t, _)| t));
    Ok(Explanation {
        doc_id: doc_id.to_string(),
        method: Method::Covar,
        explained_class: k,
        highlights,
        had_duplicates,
        degenerate: false,
    })
}

/// Three distinct content-token positions chosen uniformly, in text order,
/// all scored 0.
pub fn random_explain(
    doc_id: &str,
    text: &str,
    explained_class: usize,
    rng: &mut impl Rng,
) -> Result<Explanation, ExplainError> {
    let tokens = content_tokens(text);
    if tokens.len() < N_HIGHLIGHTS {
        return Err(ExplainError::TooFewTokens {
            doc_id: doc_id.to_string(),
            found: tokens.len(),
        });
    }
    let mut picked = index::sample(rng, tokens.len(), N_HIGHLIGHTS).into_vec();
    picked.sort_unstable();
    let highlights: Vec<Highlight> = picked
        .into_iter()
        .map(|i| to_highlight(&tokens[i], 0.0))
        .collect();
    let had_duplicates = has_duplicates(&highlights, tokens.iter());
    Ok(Explanation {
        doc_id: doc_id.to_string(),
        method: Method::Random,
        explained_class,
        highlights,
        had_duplicates,
        degenerate: false,
    })
}

fn to_highlight(t: &Token, score: f64) -> Highlight {
    Highlight {
        start: t.start,
        end: t.end,
        token: t.term.clone(),
        score,
    }
}

/// Score descending, then earliest span. Input is in text order.
pub(crate) fn top_highlights(mut scored: Vec<(Token, f64)>) -> Vec<Highlight> {
    scored.sort_by(|(ta, sa), (tb, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(Ordering::Equal)
            .then(ta.start.cmp(&tb.start))
    });
    scored
        .iter()
        .take(N_HIGHLIGHTS)
        .map(|(t, s)| to_highlight(t, *s))
        .collect()
}

pub(crate) fn has_duplicates<'a>(
    highlights: &[Highlight],
    tokens: impl IntoIterator<Item = &'a Token>,
) -> bool {
    let tokens: Vec<&Token> = tokens.into_iter().collect();
    highlights
        .iter()
        .any(|h| tokens.iter().filter(|t| t.term == h.token).count() > 1)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::classifier::{ClassDistribution, ClassifierError};
    use crate::corpus::{FeatureVector, FeaturizerConfig};

    /// Class 1 with probability `hi` when `keyword` is present, else `1 - hi`.
    pub struct KeywordModel {
        pub position: usize,
        pub hi: f64,
    }

    impl ProbabilisticClassifier for KeywordModel {
        fn n_classes(&self) -> usize {
            2
        }

        fn predict_proba(&self, x: &FeatureVector) -> Result<ClassDistribution, ClassifierError> {
            let p = if x.get(self.position) > 0.0 {
                self.hi
            } else {
                1.0 - self.hi
            };
            Ok(ClassDistribution {
                probs: vec![1.0 - p, p],
            })
        }
    }

    pub fn featurizer(texts: &[&str]) -> Featurizer {
        Featurizer::fit(texts.iter().copied(), FeaturizerConfig::default()).unwrap()
    }
}
