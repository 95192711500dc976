//! Information transfer rate, trust coefficient and the significance tests
//! used to compare annotation conditions.
//!
//! Mutual information is the plug-in estimate over an empirical contingency
//! table, in bits:
//!
//! ```text
//! I = Σ_ij p(i,j) · log2( p(i,j) / (p(i) p(j)) ),   0 · log 0 = 0
//! ```
//!
//! The ITR of a label stream is `I / t̄` (bit/s) with `t̄` the mean response
//! time, and the trust coefficient is `ITR_vs_model / ITR_vs_truth`.

mod report;
mod stats;

use serde::{Deserialize, Serialize};

pub use report::{
    analyze, AnalyzeOptions, CellStats, ClassRow, ConditionStats, ConditionTable, FlatMetric,
    MetricsReport, TestOutcome, TrustEntry,
};
pub use stats::{
    chi_square_independence, chi_square_sf, gamma_q, kruskal_wallis, ln_gamma, TestResult,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("contingency table is empty")]
    EmptyCounts,
    #[error("mean response time must be > 0, got {0}")]
    NonpositiveTime(f64),
    #[error("trust coefficient undefined: ITR against true labels is 0")]
    UndefinedTrust,
    #[error("a row or column of the table sums to zero, so an expected cell count is 0")]
    ZeroExpectedCell,
    #[error("table needs at least two rows and two columns")]
    DegenerateTable,
    #[error("need at least two non-empty groups")]
    TooFewGroups,
    #[error("all observations are tied")]
    AllTied,
    #[error("non-finite observation")]
    NonFinite,
    #[error("rows have unequal lengths")]
    Ragged,
    #[error("annotation log is empty")]
    EmptyLog,
    #[error("no model prediction for document {0:?}")]
    MissingPrediction(String),
    #[error("no true label for document {0:?}")]
    MissingTruth(String),
    #[error("document {doc_id:?}: label {label} is outside 1..={n_classes}")]
    LabelOutOfRange {
        doc_id: String,
        label: u32,
        n_classes: usize,
    },
}

/// `R × C` non-negative co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointCounts {
    n_rows: usize,
    n_cols: usize,
    counts: Vec<u64>,
}

impl JointCounts {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        JointCounts {
            n_rows,
            n_cols,
            counts: vec![0; n_rows * n_cols],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, MetricsError> {
        let n_cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(MetricsError::Ragged);
        }
        Ok(JointCounts {
            n_rows: rows.len(),
            n_cols,
            counts: rows.concat(),
        })
    }

    /// Tallies `(row, col)` observations.
    pub fn from_pairs(
        n_rows: usize,
        n_cols: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut t = Self::zeros(n_rows, n_cols);
        for (i, j) in pairs {
            t.increment(i, j);
        }
        t
    }

    pub fn increment(&mut self, row: usize, col: usize) {
        assert!(row < self.n_rows && col < self.n_cols, "cell out of range");
        self.counts[row * self.n_cols + col] += 1;
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.n_cols + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_marginals(&self) -> Vec<u64> {
        self.counts
            .chunks(self.n_cols.max(1))
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_marginals(&self) -> Vec<u64> {
        (0..self.n_cols)
            .map(|j| (0..self.n_rows).map(|i| self.get(i, j)).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n_cols, self.n_rows);
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                t.counts[j * self.n_rows + i] = self.get(i, j);
            }
        }
        t
    }

    /// Rows as nested vectors (for reports).
    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.n_cols.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }
}

/// Plug-in entropy (bits) of a vector of counts.
pub fn entropy_bits(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Plug-in mutual information (bits) between the row and column variables.
pub fn mutual_information(counts: &JointCounts) -> Result<f64, MetricsError> {
    let n = counts.total();
    if n == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    let n = n as f64;
    let rows = counts.row_marginals();
    let cols = counts.col_marginals();
    let mut mi = 0.0;
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            let nij = counts.get(i, j);
            if nij == 0 {
                continue;
            }
            let pij = nij as f64 / n;
            mi += pij * (nij as f64 * n / (r as f64 * c as f64)).log2();
        }
    }
    Ok(mi.max(0.0))
}

/// Information transfer rate in bit/s.
pub fn itr(counts: &JointCounts, mean_time_s: f64) -> Result<f64, MetricsError> {
    itr_from_mi(mutual_information(counts)?, mean_time_s)
}

pub fn itr_from_mi(mi_bits: f64, mean_time_s: f64) -> Result<f64, MetricsError> {
    if !(mean_time_s > 0.0 && mean_time_s.is_finite()) {
        return Err(MetricsError::NonpositiveTime(mean_time_s));
    }
    Ok(mi_bits / mean_time_s)
}

/// `ITR_vs_model / ITR_vs_truth`; values above 1 mean annotators track the
/// model more closely than the ground truth.
pub fn trust_coefficient(itr_vs_model: f64, itr_vs_truth: f64) -> Result<f64, MetricsError> {
    if itr_vs_truth <= 0.0 {
        return Err(MetricsError::UndefinedTrust);
    }
    Ok(itr_vs_model / itr_vs_truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: &[&[u64]]) -> JointCounts {
        JointCounts::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Independent route: I = H(X) + H(Y) − H(X, Y), natural logs converted.
    fn mi_via_entropies(t: &JointCounts) -> f64 {
        let n = t.total() as f64;
        let h = |cs: &[u64]| -> f64 {
            cs.iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * p.ln()
                })
                .sum::<f64>()
                / std::f64::consts::LN_2
        };
        let joint: Vec<u64> = t.to_rows().concat();
        h(&t.row_marginals()) + h(&t.col_marginals()) - h(&joint)
    }

    #[test]
    fn anchor_values() {
        assert_eq!(
            mutual_information(&table(&[&[5, 0], &[0, 5]])).unwrap(),
            1.0
        );
        assert_eq!(
            mutual_information(&table(&[&[2, 2], &[3, 3]])).unwrap(),
            0.0
        );
        let mi = mutual_information(&table(&[&[3, 1], &[1, 3]])).unwrap();
        // 2·(3/8)·log2(3/2) + 2·(1/8)·log2(1/2)
        let oracle = 0.75 * 1.5f64.log2() - 0.25;
        assert!((mi - oracle).abs() < 1e-15);
        assert!((mi - 0.18872).abs() < 1e-5);
    }

    #[test]
    fn empty_table_is_an_error() {
        assert_eq!(
            mutual_information(&JointCounts::zeros(2, 2)),
            Err(MetricsError::EmptyCounts)
        );
    }

    #[test]
    fn itr_and_trust() {
        let t = table(&[&[5, 0], &[0, 5]]);
        assert!((itr(&t, 5.0).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(itr(&table(&[&[2, 2], &[3, 3]]), 7.0).unwrap(), 0.0);
        assert_eq!(itr(&t, 0.0), Err(MetricsError::NonpositiveTime(0.0)));
        assert_eq!(trust_coefficient(0.3, 0.3).unwrap(), 1.0);
        assert_eq!(
            trust_coefficient(0.3, 0.0),
            Err(MetricsError::UndefinedTrust)
        );
    }

    fn arb_table() -> impl Strategy<Value = JointCounts> {
        (1usize..=6, 1usize..=6)
            .prop_flat_map(|(r, c)| {
                prop::collection::vec(0u64..10, r * c).prop_map(move |v| (r, c, v))
            })
            .prop_filter("non-empty", |(_, _, v)| v.iter().sum::<u64>() > 0)
            .prop_map(|(r, c, v)| JointCounts {
                n_rows: r,
                n_cols: c,
                counts: v,
            })
    }

    proptest! {
        #[test]
        fn mi_properties(t in arb_table()) {
            let mi = mutual_information(&t).unwrap();
            prop_assert!(mi >= 0.0);
            prop_assert!((mi - mutual_information(&t.transpose()).unwrap()).abs() < 1e-12);
            prop_assert!((mi - mi_via_entropies(&t)).abs() < 1e-12);
            let hr = entropy_bits(&t.row_marginals());
            let hc = entropy_bits(&t.col_marginals());
            prop_assert!(mi <= hr.min(hc) + 1e-12);
        }

        #[test]
        fn mi_ignores_relabeling(t in arb_table(), rot in 0usize..6) {
            let rows = t.to_rows();
            let k = rot % rows.len();
            let permuted: Vec<Vec<u64>> = rows[k..].iter().chain(&rows[..k]).map(|r| {
                let mut r = r.clone();
                r.reverse();
                r
            }).collect();
            let p = JointCounts::from_rows(&permuted).unwrap();
            prop_assert!((mutual_information(&t).unwrap() - mutual_information(&p).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn itr_halves_when_time_doubles(t in arb_table(), secs in 0.1f64..100.0) {
            prop_assert_eq!(itr(&t, 2.0 * secs).unwrap(), itr(&t, secs).unwrap() / 2.0);
        }
    }
}
