use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierError, LinearModel, ModelWeights};
use crate::corpus::{Featurizer, FeaturizerConfig, Vocabulary};

pub const MODEL_FORMAT: &str = "itr-linear-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk model: a single JSON document. Weights are the `d × K` matrix in
/// row-major order written as decimal numbers (shortest round-trip form, so
/// save → load is exact).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub format_version: u32,
    pub featurizer: FeaturizerConfig,
    pub stopwords_sha256: String,
    pub vocab_sha256: String,
    pub vocabulary: Vec<String>,
    pub idf: Vec<f64>,
    pub label_names: Vec<String>,
    pub n_features: usize,
    pub n_classes: usize,
    pub weights_layout: String,
    pub weights: Vec<f64>,
}

const LAYOUT: &str = "row-major features x classes";

impl ModelArtifact {
    pub fn from_model(model: &LinearModel) -> Self {
        let f = model.featurizer();
        let w = model.weights();
        ModelArtifact {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_FORMAT_VERSION,
            featurizer: f.config(),
            stopwords_sha256: f.stopwords_checksum().into(),
            vocab_sha256: w.vocab_hash().into(),
            vocabulary: f.vocab().terms().to_vec(),
            idf: f.idf().to_vec(),
            label_names: w.label_names().to_vec(),
            n_features: w.n_features(),
            n_classes: w.label_names().len(),
            weights_layout: LAYOUT.into(),
            weights: w.as_slice().to_vec(),
        }
    }

    pub fn into_model(self) -> Result<LinearModel, ClassifierError> {
        if self.format != MODEL_FORMAT || self.format_version != MODEL_FORMAT_VERSION {
            return Err(ClassifierError::Artifact(format!(
                "unsupported format {} v{}",
                self.format, self.format_version
            )));
        }
        if self.weights_layout != LAYOUT {
            return Err(ClassifierError::Artifact(format!(
                "unsupported weights layout {:?}",
                self.weights_layout
            )));
        }
        if self.n_classes != self.label_names.len() || self.n_features != self.vocabulary.len() {
            return Err(ClassifierError::Artifact(
                "header dimensions disagree with contents".into(),
            ));
        }
        let vocab = Vocabulary::from_terms(self.vocabulary)?;
        if vocab.checksum() != self.vocab_sha256 {
            return Err(ClassifierError::Artifact(
                "vocabulary checksum mismatch".into(),
            ));
        }
        let featurizer =
            Featurizer::from_parts(vocab, self.idf, self.featurizer, &self.stopwords_sha256)?;
        let weights = ModelWeights::new(
            self.n_features,
            self.weights,
            self.label_names,
            self.vocab_sha256,
        )?;
        LinearModel::new(featurizer, weights)
    }
}

impl LinearModel {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&ModelArtifact::from_model(self))
            .expect("model artifact serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, ClassifierError> {
        let artifact: ModelArtifact =
            serde_json::from_str(s).map_err(|e| ClassifierError::Artifact(e.to_string()))?;
        artifact.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
