//! L2-regularized multinomial logistic regression trained by SGD.
//!
//! The model is `p(y = k | x) = softmax(z)_k` with `z_k = w_k · x` and no
//! intercept. `W` is stored as a dense `d × K` row-major matrix.

mod artifact;
mod eval;

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorpusError, Dataset, FeatureMatrix, FeatureVector, Featurizer};

pub use artifact::{ModelArtifact, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use eval::{evaluate_predictions, ClassMetrics, EvalReport};

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("feature vector has position {position} but the model has {n_features} features")]
    DimensionMismatch { position: usize, n_features: usize },
    #[error("training data contains fewer than two distinct classes")]
    SingleClassCorpus,
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("{n_rows} rows but {n_labels} labels")]
    LabelCount { n_rows: usize, n_labels: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("dataset is missing labels")]
    MissingLabels,
    #[error("regularization must be finite and >= 0, got {0}")]
    BadLambda(f64),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A probability distribution over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    pub probs: Vec<f64>,
}

impl ClassDistribution {
    /// Most likely class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = k;
            }
        }
        best
    }
}

/// Numerically stable softmax (max-logit subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Anything that maps a feature vector to class probabilities.
pub trait ProbabilisticClassifier {
    fn n_classes(&self) -> usize;
    fn predict_proba(&self, x: &FeatureVector) -> Result<ClassDistribution, ClassifierError>;
}

/// The `d × K` weight matrix plus the metadata binding it to a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    n_features: usize,
    n_classes: usize,
    w: Vec<f64>,
    label_names: Vec<String>,
    vocab_hash: String,
}

impl ModelWeights {
    pub fn new(
        n_features: usize,
        w: Vec<f64>,
        label_names: Vec<String>,
        vocab_hash: String,
    ) -> Result<Self, ClassifierError> {
        let n_classes = label_names.len();
        if n_classes < 2 {
            return Err(ClassifierError::TooFewClasses(n_classes));
        }
        if w.len() != n_features * n_classes {
            return Err(ClassifierError::Artifact(format!(
                "expected {} weights, found {}",
                n_features * n_classes,
                w.len()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(ClassifierError::Artifact("non-finite weight".into()));
        }
        Ok(ModelWeights {
            n_features,
            n_classes,
            w,
            label_names,
            vocab_hash,
        })
    }

    pub fn zeros(n_features: usize, label_names: Vec<String>, vocab_hash: String) -> Self {
        let n_classes = label_names.len();
        ModelWeights {
            n_features,
            n_classes,
            w: vec![0.0; n_features * n_classes],
            label_names,
            vocab_hash,
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    /// Row-major `d × K` weights.
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn weight(&self, feature: usize, class: usize) -> f64 {
        self.w[feature * self.n_classes + class]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn logits(&self, x: &FeatureVector) -> Result<Vec<f64>, ClassifierError> {
        check_dim(x, self.n_features)?;
        Ok(logits_of(&self.w, self.n_classes, x, 1.0))
    }
}

impl ProbabilisticClassifier for ModelWeights {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, x: &FeatureVector) -> Result<ClassDistribution, ClassifierError> {
        Ok(ClassDistribution {
            probs: softmax(&self.logits(x)?),
        })
    }
}

fn check_dim(x: &FeatureVector, n_features: usize) -> Result<(), ClassifierError> {
    if x.min_dim() > n_features {
        return Err(ClassifierError::DimensionMismatch {
            position: x.min_dim() - 1,
            n_features,
        });
    }
    Ok(())
}

fn logits_of(w: &[f64], n_classes: usize, x: &FeatureVector, scale: f64) -> Vec<f64> {
    let mut z = vec![0.0; n_classes];
    for &(i, v) in x.entries() {
        let row = &w[i * n_classes..(i + 1) * n_classes];
        for (zk, wk) in z.iter_mut().zip(row) {
            *zk += v * wk;
        }
    }
    if scale != 1.0 {
        z.iter_mut().for_each(|zk| *zk *= scale);
    }
    z
}

/// Mean cross-entropy plus `(lambda / 2) ‖W‖²`, and its gradient with respect
/// to the row-major `d × K` weights.
pub fn loss_and_gradient(
    x: &FeatureMatrix,
    y: &[usize],
    n_classes: usize,
    w: &[f64],
    lambda: f64,
) -> (f64, Vec<f64>) {
    let n = x.n_rows().max(1) as f64;
    let mut loss = 0.0;
    let mut grad: Vec<f64> = w.iter().map(|v| lambda * v).collect();
    for (row, &label) in x.rows().iter().zip(y) {
        let z = logits_of(w, n_classes, row, 1.0);
        loss += log_sum_exp(&z) - z[label];
        let p = softmax(&z);
        for &(i, v) in row.entries() {
            for k in 0..n_classes {
                let err = p[k] - if k == label { 1.0 } else { 0.0 };
                grad[i * n_classes + k] += v * err / n;
            }
        }
    }
    let reg = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    (loss / n + reg, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lambda: 1e-4,
            learning_rate: 0.1,
            epochs: 20,
            seed: 0,
        }
    }
}

/// Objective value before training (index 0) and after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub epoch_loss: Vec<f64>,
}

/// Fits `W` by single-sample SGD on mean cross-entropy + `(λ/2)‖W‖²`.
///
/// Step size at update `t` is `η / (1 + t·λ·η)`. Weights start at zero and
/// are kept as `scale · V` so the L2 shrink is O(1) per step. Samples are
/// first put in a canonical order (by label, then feature values) and then
/// shuffled every epoch from `seed`, so the result depends only on the
/// multiset of samples and the seed.
pub fn train_sgd(
    x: &FeatureMatrix,
    y: &[usize],
    label_names: Vec<String>,
    vocab_hash: String,
    config: &SgdConfig,
) -> Result<(ModelWeights, TrainingTrace), ClassifierError> {
    let n_classes = label_names.len();
    if n_classes < 2 {
        return Err(ClassifierError::TooFewClasses(n_classes));
    }
    if y.is_empty() {
        return Err(ClassifierError::SingleClassCorpus);
    }
    if x.n_rows() != y.len() {
        return Err(ClassifierError::LabelCount {
            n_rows: x.n_rows(),
            n_labels: y.len(),
        });
    }
    if let Some(&label) = y.iter().find(|&&l| l >= n_classes) {
        return Err(ClassifierError::LabelOutOfRange { label, n_classes });
    }
    if !(config.lambda.is_finite() && config.lambda >= 0.0) {
        return Err(ClassifierError::BadLambda(config.lambda));
    }
    if !y.iter().any(|&l| l != y[0]) {
        return Err(ClassifierError::SingleClassCorpus);
    }

    let d = x.n_features();
    let rows = x.rows();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| canonical_cmp((&rows[a], y[a]), (&rows[b], y[b])));

    let mut v = vec![0.0; d * n_classes];
    let mut scale = 1.0;
    let mut t: u64 = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = vec![loss_and_gradient(x, y, n_classes, &v, config.lambda).0];

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let row = &rows[i];
            let lr = config.learning_rate / (1.0 + t as f64 * config.lambda * config.learning_rate);
            let p = softmax(&logits_of(&v, n_classes, row, scale));

            let shrink = (1.0 - lr * config.lambda).max(0.0);
            if shrink == 0.0 {
                v.iter_mut().for_each(|w| *w = 0.0);
                scale = 1.0;
            } else {
                scale *= shrink;
            }
            let step = lr / scale;
            for &(f, val) in row.entries() {
                let base = f * n_classes;
                for k in 0..n_classes {
                    let err = p[k] - if k == y[i] { 1.0 } else { 0.0 };
                    v[base + k] -= step * val * err;
                }
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
            t += 1;
        }
        let w: Vec<f64> = v.iter().map(|w| w * scale).collect();
        trace.push(loss_and_gradient(x, y, n_classes, &w, config.lambda).0);
    }

    let w: Vec<f64> = v.into_iter().map(|w| w * scale).collect();
    let weights = ModelWeights::new(d, w, label_names, vocab_hash)?;
    Ok((weights, TrainingTrace { epoch_loss: trace }))
}

fn canonical_cmp(a: (&FeatureVector, usize), b: (&FeatureVector, usize)) -> Ordering {
    a.1.cmp(&b.1).then_with(|| {
        let (ea, eb) = (a.0.entries(), b.0.entries());
        for ((ia, va), (ib, vb)) in ea.iter().zip(eb) {
            let o = ia.cmp(ib).then(va.total_cmp(vb));
            if o != Ordering::Equal {
                return o;
            }
        }
        ea.len().cmp(&eb.len())
    })
}

/// A featurizer and weights trained together: the deployable text classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    featurizer: Featurizer,
    weights: ModelWeights,
}

impl LinearModel {
    pub fn new(featurizer: Featurizer, weights: ModelWeights) -> Result<Self, ClassifierError> {
        if featurizer.n_features() != weights.n_features() {
            return Err(ClassifierError::Artifact(format!(
                "vocabulary has {} terms but weights have {} rows",
                featurizer.n_features(),
                weights.n_features()
            )));
        }
        if featurizer.vocab().checksum() != weights.vocab_hash() {
            return Err(ClassifierError::Artifact(
                "weights were trained against a different vocabulary".into(),
            ));
        }
        Ok(LinearModel {
            featurizer,
            weights,
        })
    }

    /// Fits the featurizer and the classifier on a labelled dataset.
    pub fn train(
        dataset: &Dataset,
        featurizer_config: crate::corpus::FeaturizerConfig,
        sgd: &SgdConfig,
    ) -> Result<(Self, TrainingTrace), ClassifierError> {
        let labels = dataset.labels().ok_or(ClassifierError::MissingLabels)?;
        let featurizer = Featurizer::fit(dataset.texts(), featurizer_config)?;
        let x = featurizer.featurize_all(dataset.texts());
        let (weights, trace) = train_sgd(
            &x,
            &labels,
            dataset.label_names.clone(),
            featurizer.vocab().checksum(),
            sgd,
        )?;
        Ok((LinearModel::new(featurizer, weights)?, trace))
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn label_names(&self) -> &[String] {
        self.weights.label_names()
    }

    pub fn n_classes(&self) -> usize {
        self.weights.n_classes
    }

    pub fn predict_text(&self, text: &str) -> ClassDistribution {
        self.weights
            .predict_proba(&self.featurizer.featurize(text))
            .expect("featurizer and weights share a dimension")
    }

    pub fn predict_label(&self, text: &str) -> usize {
        self.predict_text(text).argmax()
    }

    /// Held-out evaluation; every document must carry a label.
    pub fn evaluate(&self, dataset: &Dataset) -> Result<EvalReport, ClassifierError> {
        let truth = dataset.labels().ok_or(ClassifierError::MissingLabels)?;
        let pred: Vec<usize> = dataset.texts().map(|t| self.predict_label(t)).collect();
        Ok(evaluate_predictions(&pred, &truth, self.label_names()))
    }
}

impl ProbabilisticClassifier for LinearModel {
    fn n_classes(&self) -> usize {
        self.weights.n_classes
    }

    fn predict_proba(&self, x: &FeatureVector) -> Result<ClassDistribution, ClassifierError> {
        self.weights.predict_proba(x)
    }
}
