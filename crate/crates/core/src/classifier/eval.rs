use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Held-out per-class precision/recall/F1 with support-weighted averages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub support: usize,
}

/// One-vs-rest metrics. A class with no predicted (or no true) members gets
/// precision (or recall) 0, and F1 is 0 when both are 0.
pub fn evaluate_predictions(pred: &[usize], truth: &[usize], label_names: &[String]) -> EvalReport {
    assert_eq!(pred.len(), truth.len(), "prediction/label length mismatch");
    let k = label_names.len();
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let precision = ratio(tp[c], tp[c] + fp[c]);
            let recall = ratio(tp[c], tp[c] + fn_[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: label_names[c].clone(),
                precision,
                recall,
                f1,
                support: tp[c] + fn_[c],
            }
        })
        .collect();
    let n = truth.len();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_class
                .iter()
                .map(|m| f(m) * m.support as f64)
                .sum::<f64>()
                / n as f64
        }
    };
    EvalReport {
        weighted_precision: weighted(|m| m.precision),
        weighted_recall: weighted(|m| m.recall),
        weighted_f1: weighted(|m| m.f1),
        accuracy: ratio(tp.iter().sum(), n),
        support: n,
        per_class,
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .per_class
            .iter()
            .map(|m| m.label.chars().count())
            .chain(["avg / total".len()])
            .max()
            .unwrap_or(0);
        writeln!(f, "{:>width$}  precision    recall  f1-score   support", "")?;
        for m in &self.per_class {
            writeln!(
                f,
                "{:>width$}  {:>9.2} {:>9.2} {:>9.2} {:>9}",
                m.label, m.precision, m.recall, m.f1, m.support
            )?;
        }
        write!(
            f,
            "{:>width$}  {:>9.2} {:>9.2} {:>9.2} {:>9}",
            "avg / total",
            self.weighted_precision,
            self.weighted_recall,
            self.weighted_f1,
            self.support
        )
    }
}
