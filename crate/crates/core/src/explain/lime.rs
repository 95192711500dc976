//! Local surrogate explanations by random token masking.
//!
//! The interpretable representation is one binary presence variable per
//! in-vocabulary token position. Sample 0 is the unmasked document; every
//! other sample keeps each position independently with probability 1/2.
//! Samples are weighted by `exp(-d² / σ²)` where `d` is the cosine distance to
//! the all-ones vector, which for a binary mask with `s` of `m` positions kept
//! is `1 - sqrt(s / m)`. Three positions are chosen by greedy forward
//! selection on weighted least squares, then refit with a small ridge penalty
//! (intercept unpenalized) and ranked by absolute coefficient.

use rand::Rng;

use super::{has_duplicates, top_highlights, ExplainError, Explanation, Method, N_HIGHLIGHTS};
use crate::classifier::ProbabilisticClassifier;
use crate::corpus::Featurizer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimeConfig {
    /// Total samples, including the unmasked document.
    pub n_samples: usize,
    pub kernel_width: f64,
    pub ridge: f64,
    /// Redraws allowed for a mask that keeps nothing before it is dropped.
    pub max_resample: usize,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 2500,
            kernel_width: 0.25,
            ridge: 1e-3,
            max_resample: 10,
        }
    }
}

pub fn lime_explain(
    doc_id: &str,
    text: &str,
    featurizer: &Featurizer,
    model: &dyn ProbabilisticClassifier,
    config: &LimeConfig,
    rng: &mut impl Rng,
) -> Result<Explanation, ExplainError> {
    let tokens = featurizer.vocab_tokens(text);
    let m = tokens.len();
    if m < N_HIGHLIGHTS {
        return Err(ExplainError::TooFewTokens {
            doc_id: doc_id.to_string(),
            found: m,
        });
    }
    let positions: Vec<usize> = tokens.iter().map(|(_, p)| *p).collect();
    let k = model
        .predict_proba(&featurizer.featurize_positions(positions.iter().copied()))?
        .argmax();

    // column-major presence matrix, one column per token position
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(config.n_samples); m];
    let mut y = Vec::with_capacity(config.n_samples);
    let mut w = Vec::with_capacity(config.n_samples);
    let mut mask = vec![true; m];
    let sigma2 = config.kernel_width * config.kernel_width;
    for i in 0..config.n_samples.max(1) {
        if i > 0 && !draw_mask(&mut mask, config.max_resample, rng) {
            continue;
        }
        let kept = mask.iter().filter(|&&b| b).count();
        let x = featurizer.featurize_positions(
            positions
                .iter()
                .zip(&mask)
                .filter(|(_, &b)| b)
                .map(|(&p, _)| p),
        );
        y.push(model.predict_proba(&x)?.probs[k]);
        let d = 1.0 - (kept as f64 / m as f64).sqrt();
        w.push((-d * d / sigma2).exp());
        for (c, &b) in cols.iter_mut().zip(&mask) {
            c.push(if b { 1.0 } else { 0.0 });
        }
    }

    let degenerate = y.iter().all(|&v| v == y[0]);
    let (selected, coefs) = if degenerate {
        (
            (0..N_HIGHLIGHTS).collect::<Vec<_>>(),
            vec![0.0; N_HIGHLIGHTS],
        )
    } else {
        let problem = Centered::new(&cols, &y, &w);
        let selected = problem.forward_select(N_HIGHLIGHTS);
        let coefs = problem.ridge(&selected, config.ridge);
        (selected, coefs)
    };

    let scored = selected
        .iter()
        .zip(&coefs)
        .map(|(&j, c)| (tokens[j].0.clone(), c.abs()))
        .collect();
    let highlights = top_highlights(scored);
    let had_duplicates = has_duplicates(&highlights, tokens.iter().map(|(t, _)| t));
    Ok(Explanation {
        doc_id: doc_id.to_string(),
        method: Method::Lime,
        explained_class: k,
        highlights,
        had_duplicates,
        degenerate,
    })
}

/// Fills `mask` with a fresh draw; false if every attempt kept nothing.
fn draw_mask(mask: &mut [bool], max_resample: usize, rng: &mut impl Rng) -> bool {
    for _ in 0..=max_resample {
        for b in mask.iter_mut() {
            *b = rng.random_bool(0.5);
        }
        if mask.iter().any(|&b| b) {
            return true;
        }
    }
    false
}

/// Weighted least-squares data with the intercept absorbed by weighted
/// centering: for centered columns the intercept-free normal equations give
/// the same slopes as the fit with an (unpenalized) intercept.
struct Centered {
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl Centered {
    fn new(cols: &[Vec<f64>], y: &[f64], w: &[f64]) -> Self {
        let sw: f64 = w.iter().sum();
        let center = |v: &[f64]| -> Vec<f64> {
            let mean = v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
            v.iter().map(|a| a - mean).collect()
        };
        Centered {
            cols: cols.iter().map(|c| center(c)).collect(),
            y: center(y),
            w: w.to_vec(),
        }
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.w)
            .map(|((x, y), w)| x * y * w)
            .sum()
    }

    /// Greedy selection; each step adds the column that most reduces the
    /// weighted residual sum of squares. Ties go to the earlier position.
    fn forward_select(&self, n: usize) -> Vec<usize> {
        let m = self.cols.len();
        let diag: Vec<f64> = self.cols.iter().map(|c| self.dot(c, c)).collect();
        let rhs: Vec<f64> = self.cols.iter().map(|c| self.dot(c, &self.y)).collect();
        // cross[s][j] = <col_selected[s], col_j>
        let mut cross: Vec<Vec<f64>> = Vec::new();
        let mut selected: Vec<usize> = Vec::new();
        while selected.len() < n.min(m) {
            let mut best: Option<(f64, usize)> = None;
            for j in 0..m {
                if selected.contains(&j) {
                    continue;
                }
                let mut cand = selected.clone();
                cand.push(j);
                let s = cand.len();
                let mut g = vec![0.0; s * s];
                for (a, &ca) in cand.iter().enumerate() {
                    for (b, &cb) in cand.iter().enumerate() {
                        g[a * s + b] = if a == b {
                            diag[ca]
                        } else if a < selected.len() {
                            cross[a][cb]
                        } else {
                            cross[b][ca]
                        };
                    }
                }
                let b: Vec<f64> = cand.iter().map(|&c| rhs[c]).collect();
                let Some(beta) = solve(g, b.clone()) else {
                    continue;
                };
                let explained: f64 = beta.iter().zip(&b).map(|(x, y)| x * y).sum();
                if best.is_none_or(|(e, _)| explained > e) {
                    best = Some((explained, j));
                }
            }
            let pick = match best {
                Some((_, j)) => j,
                None => (0..m)
                    .find(|j| !selected.contains(j))
                    .expect("m > selected"),
            };
            cross.push(
                self.cols
                    .iter()
                    .map(|c| self.dot(&self.cols[pick], c))
                    .collect(),
            );
            selected.push(pick);
        }
        selected
    }

    fn ridge(&self, selected: &[usize], lambda: f64) -> Vec<f64> {
        let s = selected.len();
        let mut g = vec![0.0; s * s];
        for (a, &ca) in selected.iter().enumerate() {
            for (b, &cb) in selected.iter().enumerate() {
                g[a * s + b] = self.dot(&self.cols[ca], &self.cols[cb]);
            }
            g[a * s + a] += lambda;
        }
        let b = selected
            .iter()
            .map(|&c| self.dot(&self.cols[c], &self.y))
            .collect();
        solve(g, b).unwrap_or_else(|| vec![0.0; s])
    }
}

/// Gaussian elimination with partial pivoting on a row-major `n × n` system.
/// `None` when the matrix is numerically singular.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..n {
        let piv =
            (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() <= 1e-12 * scale {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r * n + c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::super::doc_rng;
    use super::super::testutil::{featurizer, KeywordModel};
    use super::*;

    const DOC: &str = "plot acting excellent music scenes story cast ending dialogue pacing";

    fn keyword_setup() -> (Featurizer, KeywordModel) {
        let f = featurizer(&[DOC]);
        let position = f.vocab().position("excellent").unwrap();
        (f, KeywordModel { position, hi: 0.9 })
    }

    #[test]
    fn solve_small_system() {
        let x = solve(vec![2.0, 1.0, 1.0, 3.0], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        assert!(solve(vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn keyword_is_top_highlight() {
        let (f, model) = keyword_setup();
        let e = lime_explain(
            "d",
            DOC,
            &f,
            &model,
            &LimeConfig::default(),
            &mut doc_rng(3, 0),
        )
        .unwrap();
        assert_eq!(e.highlights[0].token, "excellent");
        assert_eq!(e.explained_class, 1);
        assert!(!e.degenerate);
        assert!(e.highlights[0].score > 10.0 * e.highlights[1].score);
    }

    /// Oracle: enumerate all 2^10 masks with their kernel weights, fit the
    /// full weighted least squares with intercept, and check the keyword's
    /// coefficient dominates.
    #[test]
    fn exhaustive_surrogate_oracle() {
        let (f, _) = keyword_setup();
        let tokens = f.vocab_tokens(DOC);
        let m = tokens.len();
        let kw = tokens
            .iter()
            .position(|(t, _)| t.term == "excellent")
            .unwrap();
        let mut cols = vec![Vec::new(); m];
        let (mut y, mut w) = (Vec::new(), Vec::new());
        for bits in 1u32..(1 << m) {
            let kept = bits.count_ones() as f64;
            let d = 1.0 - (kept / m as f64).sqrt();
            w.push((-d * d / 0.0625).exp());
            y.push(if bits & (1 << kw) != 0 { 0.9 } else { 0.1 });
            for (j, c) in cols.iter_mut().enumerate() {
                c.push(((bits >> j) & 1) as f64);
            }
        }
        let c = Centered::new(&cols, &y, &w);
        let all: Vec<usize> = (0..m).collect();
        let beta = c.ridge(&all, 0.0);
        for (j, b) in beta.iter().enumerate() {
            if j != kw {
                assert!(beta[kw].abs() > 10.0 * b.abs(), "{beta:?}");
            }
        }
        assert_eq!(c.forward_select(1), vec![kw]);
    }

    #[test]
    fn constant_model_is_degenerate() {
        let f = featurizer(&[DOC]);
        let model = KeywordModel {
            position: usize::MAX,
            hi: 0.5,
        };
        let e = lime_explain(
            "d",
            DOC,
            &f,
            &model,
            &LimeConfig::default(),
            &mut doc_rng(1, 0),
        )
        .unwrap();
        assert!(e.degenerate);
        assert!(e.highlights.iter().all(|h| h.score == 0.0));
        assert_eq!(e.highlights.len(), 3);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let (f, model) = keyword_setup();
        let cfg = LimeConfig {
            n_samples: 300,
            ..LimeConfig::default()
        };
        let a = lime_explain("d", DOC, &f, &model, &cfg, &mut doc_rng(42, 7)).unwrap();
        let b = lime_explain("d", DOC, &f, &model, &cfg, &mut doc_rng(42, 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_tokens() {
        let f = featurizer(&[DOC]);
        let model = KeywordModel {
            position: 0,
            hi: 0.9,
        };
        assert!(matches!(
            lime_explain(
                "d",
                "excellent plot unknownword",
                &f,
                &model,
                &LimeConfig::default(),
                &mut doc_rng(0, 0)
            ),
            Err(ExplainError::TooFewTokens { found: 2, .. })
        ));
    }
}
