//! Turning a dataset and its explanations into servable study items.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Condition, Span, StudyConfig, StudyError, StudyItem};
use crate::classifier::LinearModel;
use crate::corpus::Dataset;
use crate::explain::{parse_batch, ExplainError, Explainers, Explanation, LimeConfig, Method};

/// Explanations by method and document id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExplanationSet {
    by_method: BTreeMap<Method, BTreeMap<String, Explanation>>,
}

impl ExplanationSet {
    pub fn insert(&mut self, e: Explanation) {
        self.by_method
            .entry(e.method)
            .or_default()
            .insert(e.doc_id.clone(), e);
    }

    pub fn get(&self, method: Method, doc_id: &str) -> Option<&Explanation> {
        self.by_method.get(&method)?.get(doc_id)
    }

    pub fn has_method(&self, method: Method) -> bool {
        self.by_method.contains_key(&method)
    }

    pub fn extend(&mut self, explanations: impl IntoIterator<Item = Explanation>) {
        for e in explanations {
            self.insert(e);
        }
    }

    /// Explains every document of `dataset` with each method in `methods` that
    /// is not already present. Documents too short to explain are skipped.
    /// COVAR importances come from `heldout`.
    pub fn fill_missing(
        &mut self,
        methods: &[Method],
        dataset: &Dataset,
        heldout: &Dataset,
        model: &LinearModel,
        seed: u64,
        lime_samples: usize,
    ) -> Result<(), ExplainError> {
        let missing: Vec<Method> = methods
            .iter()
            .copied()
            .filter(|&m| !self.has_method(m))
            .collect();
        let lime = LimeConfig {
            n_samples: lime_samples,
            ..LimeConfig::default()
        };
        let explainers = Explainers::new(model, &missing, heldout.texts(), lime, seed)?;
        for method in missing {
            self.by_method.entry(method).or_default();
            for (i, doc) in dataset.docs.iter().enumerate() {
                match explainers.explain(method, i, &doc.id, &doc.text) {
                    Ok(e) => self.insert(e),
                    Err(ExplainError::TooFewTokens { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaterialsReport {
    pub n_documents: usize,
    pub n_items: usize,
    /// Documents without an explanation for some configured highlight
    /// condition (usually fewer than three usable tokens).
    pub excluded: Vec<String>,
    /// Per condition, items that lost it because of duplicate highlighted words.
    pub dropped_for_duplicates: BTreeMap<Condition, usize>,
}

/// Items for a study over `dataset`. Every configured highlight condition must
/// have an explanation for a document to be included. With
/// `discard_duplicate_highlight_items`, an item whose explanation for a
/// condition has the duplicate flag is not served under that condition.
pub fn build_items(
    dataset: &Dataset,
    config: &StudyConfig,
    explanations: &ExplanationSet,
) -> (Vec<StudyItem>, MaterialsReport) {
    let mut report = MaterialsReport {
        n_documents: dataset.docs.len(),
        ..MaterialsReport::default()
    };
    let mut items = Vec::new();
    'docs: for doc in &dataset.docs {
        let mut highlights = BTreeMap::new();
        for &condition in &config.conditions {
            let Some(method) = condition.method() else {
                highlights.insert(condition, Vec::new());
                continue;
            };
            let Some(e) = explanations.get(method, &doc.id) else {
                report.excluded.push(doc.id.clone());
                continue 'docs;
            };
            if config.discard_duplicate_highlight_items && e.had_duplicates {
                *report.dropped_for_duplicates.entry(condition).or_default() += 1;
                continue;
            }
            let mut spans: Vec<Span> = e
                .highlights
                .iter()
                .map(|h| Span {
                    start: h.start,
                    end: h.end,
                })
                .collect();
            spans.sort();
            highlights.insert(condition, spans);
        }
        if highlights.is_empty() {
            report.excluded.push(doc.id.clone());
            continue;
        }
        items.push(StudyItem {
            doc_id: doc.id.clone(),
            text: doc.text.clone(),
            highlights,
        });
    }
    report.n_items = items.len();
    (items, report)
}

/// Everything a study needs, loaded from the paths in its config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: LinearModel,
    pub dataset: Dataset,
    pub items: Vec<StudyItem>,
    pub report: MaterialsReport,
}

impl Prepared {
    /// Model predictions (0-based) per document id.
    pub fn predictions(&self) -> HashMap<String, usize> {
        self.dataset
            .docs
            .iter()
            .map(|d| (d.id.clone(), self.model.predict_label(&d.text)))
            .collect()
    }

    /// True labels (0-based) of labelled documents.
    pub fn truths(&self) -> HashMap<String, usize> {
        self.dataset
            .docs
            .iter()
            .filter_map(|d| d.label.map(|l| (d.id.clone(), l)))
            .collect()
    }
}

/// `path` as given if absolute, else relative to `base`.
pub fn resolve_path(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads model, dataset and explanation files named in `config` (relative
/// paths resolve against `base`), explains whatever is missing, and builds
/// the study items.
pub fn prepare(config: &StudyConfig, base: &Path) -> Result<Prepared, StudyError> {
    config.validate()?;
    let fail =
        |what: &str, e: &dyn std::fmt::Display| StudyError::Materials(format!("{what}: {e}"));
    let model = LinearModel::load(resolve_path(base, &config.model))
        .map_err(|e| fail(&config.model, &e))?;
    let dataset =
        Dataset::read_tsv_with_labels(resolve_path(base, &config.dataset), model.label_names())
            .map_err(|e| fail(&config.dataset, &e))?;
    let heldout = match &config.heldout_dataset {
        Some(p) => Dataset::read_tsv_with_labels(resolve_path(base, p), model.label_names())
            .map_err(|e| fail(p, &e))?,
        None => dataset.clone(),
    };
    let mut set = ExplanationSet::default();
    for (condition, path) in &config.explanation_files {
        let text = std::fs::read_to_string(resolve_path(base, path)).map_err(|e| fail(path, &e))?;
        let batch = parse_batch(&text).map_err(|e| fail(path, &e))?;
        if let Some(bad) = batch.iter().find(|e| Some(e.method) != condition.method()) {
            return Err(StudyError::Materials(format!(
                "{path}: holds {} explanations but is listed for {condition}",
                bad.method
            )));
        }
        set.extend(batch);
    }
    let methods: Vec<Method> = config
        .conditions
        .iter()
        .filter_map(|c| c.method())
        .collect();
    set.fill_missing(
        &methods,
        &dataset,
        &heldout,
        &model,
        config.seed,
        config.lime_samples,
    )
    .map_err(|e| fail("explanations", &e))?;
    let (items, report) = build_items(&dataset, config, &set);
    if items.is_empty() {
        return Err(StudyError::Materials("no document can be served".into()));
    }
    Ok(Prepared {
        model,
        dataset,
        items,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::explain::Highlight;

    fn explanation(doc_id: &str, method: Method, dup: bool) -> Explanation {
        Explanation {
            doc_id: doc_id.into(),
            method,
            explained_class: 0,
            highlights: [(8, 11), (0, 3), (4, 7)]
                .iter()
                .map(|&(start, end)| Highlight {
                    start,
                    end,
                    token: "x".into(),
                    score: 1.0,
                })
                .collect(),
            had_duplicates: dup,
            degenerate: false,
        }
    }

    fn dataset() -> Dataset {
        let docs = ["a", "b", "c"]
            .iter()
            .map(|id| Document {
                id: id.to_string(),
                text: "one two six".into(),
                label: Some(0),
            })
            .collect();
        Dataset::new(docs, vec!["x".into(), "y".into()]).unwrap()
    }

    #[test]
    fn items_follow_explanations_and_duplicate_policy() {
        let mut set = ExplanationSet::default();
        set.insert(explanation("a", Method::Covar, false));
        set.insert(explanation("b", Method::Covar, true));
        let mut config =
            StudyConfig::new("d", "m", vec![Condition::NoHighlights, Condition::Covar]);
        let (items, report) = build_items(&dataset(), &config, &set);
        assert_eq!(items.len(), 2);
        assert_eq!(report.excluded, vec!["c".to_string()]);
        assert_eq!(items[0].highlights[&Condition::NoHighlights], vec![]);
        let starts: Vec<usize> = items[0].highlights[&Condition::Covar]
            .iter()
            .map(|s| s.start)
            .collect();
        assert_eq!(starts, [0, 4, 8]);

        config.discard_duplicate_highlight_items = true;
        let (items, report) = build_items(&dataset(), &config, &set);
        assert_eq!(items.len(), 2);
        assert!(!items[1].highlights.contains_key(&Condition::Covar));
        assert_eq!(report.dropped_for_duplicates[&Condition::Covar], 1);
    }
}
