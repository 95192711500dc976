//! Aggregation of an annotation log into per-condition ITR, trust and tests.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;

use super::{
    chi_square_independence, itr_from_mi, kruskal_wallis, mutual_information, trust_coefficient,
    JointCounts, MetricsError, TestResult,
};
use crate::study::{AnnotationRecord, Condition};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalyzeOptions {
    /// Drop annotations slower than this many seconds.
    pub max_time_s: Option<f64>,
    /// Analyze only these conditions.
    pub condition_filter: Option<Vec<Condition>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionStats {
    pub condition: Condition,
    pub n: usize,
    pub mean_time_s: f64,
    pub accuracy: f64,
    pub mi_vs_model: f64,
    pub mi_vs_truth: f64,
    pub itr_vs_model: f64,
    pub itr_vs_truth: f64,
    /// Annotator labels (rows) against model predictions (columns).
    pub joint_vs_model: Vec<Vec<u64>>,
    /// Annotator labels (rows) against true labels (columns).
    pub joint_vs_truth: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustEntry {
    pub condition: Condition,
    /// `None` when the ITR against true labels is 0.
    pub trust: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellStats {
    pub n: usize,
    pub accuracy: f64,
    pub mean_time_s: f64,
}

/// One row of the accuracy/time table: annotations whose document has true
/// class `label`, split by condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub label: String,
    pub cells: BTreeMap<Condition, CellStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionTable {
    pub conditions: Vec<Condition>,
    pub rows: Vec<ClassRow>,
    /// Class-frequency weighted averages (equivalently, pooled over classes).
    pub average: ClassRow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TestOutcome {
    Computed(TestResult),
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatMetric {
    pub key: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n_annotations: usize,
    pub label_names: Vec<String>,
    pub conditions: Vec<ConditionStats>,
    pub trust: Vec<TrustEntry>,
    pub class_table: ConditionTable,
    /// Conditions × {correct, incorrect}.
    pub chi_square_accuracy: TestOutcome,
    /// Response times across conditions.
    pub kruskal_wallis_time: TestOutcome,
    pub flat: Vec<FlatMetric>,
}

impl MetricsReport {
    pub fn condition(&self, c: Condition) -> Option<&ConditionStats> {
        self.conditions.iter().find(|s| s.condition == c)
    }

    pub fn trust_of(&self, c: Condition) -> Option<f64> {
        self.trust.iter().find(|t| t.condition == c)?.trust
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

const INSUFFICIENT: &str = "insufficient conditions";

struct Checked<'a> {
    record: &'a AnnotationRecord,
    given: usize,
    predicted: usize,
    truth: usize,
}

/// Computes the report. `predictions` and `truths` map document ids to
/// 0-based class indices; `label_given` in the records is 1-based.
///
/// The result does not depend on the order of `records`.
pub fn analyze(
    records: &[AnnotationRecord],
    predictions: &HashMap<String, usize>,
    truths: &HashMap<String, usize>,
    label_names: &[String],
    options: &AnalyzeOptions,
) -> Result<MetricsReport, MetricsError> {
    let k = label_names.len();
    let mut by_condition: BTreeMap<Condition, Vec<Checked>> = BTreeMap::new();
    for r in records {
        if let Some(filter) = &options.condition_filter {
            if !filter.contains(&r.condition) {
                continue;
            }
        }
        if let Some(max) = options.max_time_s {
            if r.elapsed_ms as f64 / 1000.0 > max {
                continue;
            }
        }
        if r.label_given < 1 || r.label_given as usize > k {
            return Err(MetricsError::LabelOutOfRange {
                doc_id: r.doc_id.clone(),
                label: r.label_given,
                n_classes: k,
            });
        }
        let predicted = *predictions
            .get(&r.doc_id)
            .ok_or_else(|| MetricsError::MissingPrediction(r.doc_id.clone()))?;
        let truth = *truths
            .get(&r.doc_id)
            .ok_or_else(|| MetricsError::MissingTruth(r.doc_id.clone()))?;
        for label in [predicted, truth] {
            if label >= k {
                return Err(MetricsError::LabelOutOfRange {
                    doc_id: r.doc_id.clone(),
                    label: label as u32 + 1,
                    n_classes: k,
                });
            }
        }
        by_condition.entry(r.condition).or_default().push(Checked {
            record: r,
            given: r.label_given as usize - 1,
            predicted,
            truth,
        });
    }
    if by_condition.is_empty() {
        return Err(MetricsError::EmptyLog);
    }

    let mut conditions = Vec::new();
    let mut trust = Vec::new();
    let mut flat = Vec::new();
    let mut correctness = Vec::new();
    let mut times = Vec::new();
    for (&condition, rows) in &by_condition {
        let vs_model = JointCounts::from_pairs(k, k, rows.iter().map(|c| (c.given, c.predicted)));
        let vs_truth = JointCounts::from_pairs(k, k, rows.iter().map(|c| (c.given, c.truth)));
        let cell = cell_stats(rows.iter());
        let mi_m = mutual_information(&vs_model)?;
        let mi_t = mutual_information(&vs_truth)?;
        let itr_m = itr_from_mi(mi_m, cell.mean_time_s)?;
        let itr_t = itr_from_mi(mi_t, cell.mean_time_s)?;
        let t = trust_coefficient(itr_m, itr_t).ok();
        let correct = rows.iter().filter(|c| c.given == c.truth).count() as u64;
        correctness.push(vec![correct, rows.len() as u64 - correct]);
        let mut ts: Vec<f64> = rows
            .iter()
            .map(|c| c.record.elapsed_ms as f64 / 1000.0)
            .collect();
        ts.sort_by(f64::total_cmp);
        times.push(ts);

        let key = condition.as_str();
        for (name, value) in [
            ("n", rows.len() as f64),
            ("mean_time_s", cell.mean_time_s),
            ("accuracy", cell.accuracy),
            ("mi_vs_model", mi_m),
            ("mi_vs_truth", mi_t),
            ("itr_vs_model", itr_m),
            ("itr_vs_truth", itr_t),
        ] {
            flat.push(FlatMetric {
                key: format!("{key}.{name}"),
                value,
            });
        }
        if let Some(t) = t {
            flat.push(FlatMetric {
                key: format!("{key}.trust"),
                value: t,
            });
        }
        conditions.push(ConditionStats {
            condition,
            n: rows.len(),
            mean_time_s: cell.mean_time_s,
            accuracy: cell.accuracy,
            mi_vs_model: mi_m,
            mi_vs_truth: mi_t,
            itr_vs_model: itr_m,
            itr_vs_truth: itr_t,
            joint_vs_model: vs_model.to_rows(),
            joint_vs_truth: vs_truth.to_rows(),
        });
        trust.push(TrustEntry {
            condition,
            trust: t,
        });
    }

    let (chi_square_accuracy, kruskal_wallis_time) = if by_condition.len() < 2 {
        (skipped(INSUFFICIENT), skipped(INSUFFICIENT))
    } else {
        let table = JointCounts::from_rows(&correctness)?;
        (
            outcome(chi_square_independence(&table)),
            outcome(kruskal_wallis(&times)),
        )
    };
    for (name, o) in [
        ("chi_square_accuracy", &chi_square_accuracy),
        ("kruskal_wallis_time", &kruskal_wallis_time),
    ] {
        if let TestOutcome::Computed(r) = o {
            flat.push(FlatMetric {
                key: format!("{name}.statistic"),
                value: r.statistic,
            });
            flat.push(FlatMetric {
                key: format!("{name}.dof"),
                value: r.dof as f64,
            });
            flat.push(FlatMetric {
                key: format!("{name}.p_value"),
                value: r.p_value,
            });
        }
    }

    Ok(MetricsReport {
        n_annotations: by_condition.values().map(Vec::len).sum(),
        label_names: label_names.to_vec(),
        class_table: class_table(&by_condition, label_names),
        conditions,
        trust,
        chi_square_accuracy,
        kruskal_wallis_time,
        flat,
    })
}

fn skipped(reason: &str) -> TestOutcome {
    TestOutcome::Skipped {
        reason: reason.to_string(),
    }
}

fn outcome(r: Result<TestResult, MetricsError>) -> TestOutcome {
    match r {
        Ok(r) => TestOutcome::Computed(r),
        Err(e) => skipped(&e.to_string()),
    }
}

/// Integer millisecond sums keep the mean independent of record order.
fn cell_stats<'a>(rows: impl Iterator<Item = &'a Checked<'a>>) -> CellStats {
    let (mut n, mut correct, mut ms) = (0usize, 0usize, 0u128);
    for c in rows {
        n += 1;
        correct += usize::from(c.given == c.truth);
        ms += u128::from(c.record.elapsed_ms);
    }
    CellStats {
        n,
        accuracy: correct as f64 / n as f64,
        mean_time_s: ms as f64 / n as f64 / 1000.0,
    }
}

fn class_table(
    by_condition: &BTreeMap<Condition, Vec<Checked>>,
    label_names: &[String],
) -> ConditionTable {
    let mut rows: Vec<ClassRow> = label_names
        .iter()
        .map(|l| ClassRow {
            label: l.clone(),
            cells: BTreeMap::new(),
        })
        .collect();
    let mut average = ClassRow {
        label: "weighted avg".into(),
        cells: BTreeMap::new(),
    };
    for (&condition, checked) in by_condition {
        for (k, row) in rows.iter_mut().enumerate() {
            let mut it = checked.iter().filter(|c| c.truth == k).peekable();
            if it.peek().is_some() {
                row.cells.insert(condition, cell_stats(it));
            }
        }
        average.cells.insert(condition, cell_stats(checked.iter()));
    }
    ConditionTable {
        conditions: by_condition.keys().copied().collect(),
        rows,
        average,
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.class_table;
        let width = self
            .label_names
            .iter()
            .map(String::len)
            .chain([12])
            .max()
            .unwrap_or(12);
        writeln!(f, "Accuracy (%) and time (s) by true class and condition")?;
        write!(f, "{:<width$}", "class")?;
        for c in &t.conditions {
            write!(f, "  {:>22}", c.as_str())?;
        }
        writeln!(f)?;
        write!(f, "{:<width$}", "")?;
        for _ in &t.conditions {
            write!(f, "  {:>10} {:>11}", "acc", "time")?;
        }
        writeln!(f)?;
        for row in t.rows.iter().chain(std::iter::once(&t.average)) {
            write!(f, "{:<width$}", row.label)?;
            for c in &t.conditions {
                match row.cells.get(c) {
                    Some(s) => write!(f, "  {:>10.1} {:>11.2}", 100.0 * s.accuracy, s.mean_time_s)?,
                    None => write!(f, "  {:>10} {:>11}", "-", "-")?,
                }
            }
            writeln!(f)?;
        }
        writeln!(f)?;
        writeln!(f, "Information transfer rate (bit/s)")?;
        writeln!(
            f,
            "{:<14} {:>6} {:>9} {:>9} {:>11} {:>11} {:>12} {:>12} {:>8}",
            "condition",
            "n",
            "time_s",
            "acc",
            "MI_model",
            "MI_truth",
            "ITR_model",
            "ITR_truth",
            "trust"
        )?;
        for (s, tr) in self.conditions.iter().zip(&self.trust) {
            let trust = tr.trust.map_or("undef".to_string(), |v| format!("{v:.3}"));
            writeln!(
                f,
                "{:<14} {:>6} {:>9.3} {:>9.3} {:>11.4} {:>11.4} {:>12.4} {:>12.4} {:>8}",
                s.condition.as_str(),
                s.n,
                s.mean_time_s,
                s.accuracy,
                s.mi_vs_model,
                s.mi_vs_truth,
                s.itr_vs_model,
                s.itr_vs_truth,
                trust
            )?;
        }
        writeln!(f)?;
        for (name, o) in [
            ("chi-square (accuracy)", &self.chi_square_accuracy),
            ("Kruskal-Wallis (time)", &self.kruskal_wallis_time),
        ] {
            match o {
                TestOutcome::Computed(r) => writeln!(
                    f,
                    "{name}: statistic = {:.4}, dof = {}, p = {:.3e}",
                    r.statistic, r.dof, r.p_value
                )?,
                TestOutcome::Skipped { reason } => writeln!(f, "{name}: skipped ({reason})")?,
            }
        }
        Ok(())
    }
}
