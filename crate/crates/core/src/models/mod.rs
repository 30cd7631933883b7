//! Token classifiers: the Bi-LSTM tagger, the windowed CNN baseline and
//! the per-token SVM, behind [`TokenClassifier`].

mod cnn;
mod lstm;
pub mod nn;
mod rnn;
mod svm;
mod window;

pub use cnn::{CnnConfig, CnnModel, DEFAULT_FILTER_SIZES};
pub use lstm::{BiLstm, Lstm};
pub use nn::AdamConfig;
pub use rnn::{RnnConfig, RnnModel};
pub use svm::{Kernel, SvmClassifier, SvmConfig, SvmModel};
pub use window::{check_window, extract_windows, windows_for_len, WindowInstance};

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::{FeatureKind, FeatureSet, FeaturizedSentence, StaticEmbeddings, Vocabs, Vocabulary};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("no vocabulary for feature kind {0}")]
    MissingVocabulary(FeatureKind),
    #[error("sentence lacks feature kind {0}")]
    MissingFeature(FeatureKind),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input")]
    EmptyInput,
    #[error("loss diverged ({0})")]
    Diverged(f64),
    #[error("classifier has not been trained")]
    Unfitted,
    #[error("unknown kernel {0:?} (expected linear, poly, rbf or sigmoid)")]
    UnknownKernel(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

pub trait TokenClassifier {
    /// One probability in `[0, 1]` per token.
    fn predict_proba(&self, s: &FeaturizedSentence) -> Result<Vec<f64>, ModelError>;

    fn is_fitted(&self) -> bool;

    fn predict_batch(&self, batch: &[FeaturizedSentence]) -> Result<Vec<Vec<f64>>, ModelError> {
        batch.iter().map(|s| self.predict_proba(s)).collect()
    }
}

/// Models trained by repeated passes over the training split.
pub trait Trainable: TokenClassifier {
    /// One pass over `data` in `order`; returns the mean batch loss.
    fn train_epoch<R: Rng>(&mut self, data: &[FeaturizedSentence], order: &[usize], rng: &mut R) -> Result<f64, ModelError>;
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Labels are 1 where the probability reaches `threshold`.
pub fn threshold_labels(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| (p >= threshold) as u8).collect()
}

pub fn predict_sentence<C: TokenClassifier + ?Sized>(
    c: &C,
    s: &FeaturizedSentence,
    threshold: f64,
) -> Result<Vec<u8>, ModelError> {
    if !c.is_fitted() {
        return Err(ModelError::Unfitted);
    }
    Ok(threshold_labels(&c.predict_proba(s)?, threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelConfig {
    Rnn(RnnConfig),
    Cnn(CnnConfig),
    Svm(SvmConfig),
}

impl ModelConfig {
    pub fn family(&self) -> &'static str {
        match self {
            ModelConfig::Rnn(_) => "rnn",
            ModelConfig::Cnn(_) => "cnn",
            ModelConfig::Svm(_) => "svm",
        }
    }

    /// Feature kinds the model consumes.
    pub fn feature_set(&self) -> FeatureSet {
        match self {
            ModelConfig::Rnn(c) => c.features.clone(),
            ModelConfig::Cnn(c) => c.feature_set(),
            ModelConfig::Svm(_) => FeatureSet::new([FeatureKind::W]).expect("non-empty"),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelConfig::Rnn(c) => c.validate(),
            ModelConfig::Cnn(c) => c.validate(),
            ModelConfig::Svm(c) => c.validate(),
        }
    }

    pub fn build<R: Rng>(
        &self,
        vocabs: &Vocabs,
        pretrained: Option<&StaticEmbeddings>,
        rng: &mut R,
    ) -> Result<Model, ModelError> {
        Ok(match self {
            ModelConfig::Rnn(c) => Model::Rnn(RnnModel::build(c.clone(), vocabs, pretrained, rng)?),
            ModelConfig::Cnn(c) => Model::Cnn(CnnModel::build(c.clone(), vocabs, pretrained, rng)?),
            ModelConfig::Svm(c) => Model::Svm(SvmModel::build(c.clone(), vocabs, pretrained)?),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Model {
    Rnn(RnnModel),
    Cnn(CnnModel),
    Svm(SvmModel),
}

impl Model {
    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Rnn(m) => ModelConfig::Rnn(m.config.clone()),
            Model::Cnn(m) => ModelConfig::Cnn(m.config.clone()),
            Model::Svm(m) => ModelConfig::Svm(m.config.clone()),
        }
    }
}

impl TokenClassifier for Model {
    fn predict_proba(&self, s: &FeaturizedSentence) -> Result<Vec<f64>, ModelError> {
        match self {
            Model::Rnn(m) => m.predict_proba(s),
            Model::Cnn(m) => m.predict_proba(s),
            Model::Svm(m) => m.predict_proba(s),
        }
    }

    fn is_fitted(&self) -> bool {
        match self {
            Model::Rnn(m) => m.is_fitted(),
            Model::Cnn(m) => m.is_fitted(),
            Model::Svm(m) => m.is_fitted(),
        }
    }
}

/// Writes `config.json`, `weights.json` and one `vocab-<K>.txt` per
/// vocabulary into `dir`.
pub fn save_checkpoint(dir: &Path, model: &Model, vocabs: &Vocabs) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    serde_json::to_writer_pretty(BufWriter::new(fs::File::create(dir.join("config.json"))?), &model.config())?;
    serde_json::to_writer(BufWriter::new(fs::File::create(dir.join("weights.json"))?), model)?;
    for (kind, vocab) in vocabs {
        vocab.write_to(BufWriter::new(fs::File::create(dir.join(format!("vocab-{kind}.txt")))?))?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, Vocabs), ModelError> {
    let model: Model = serde_json::from_reader(BufReader::new(fs::File::open(dir.join("weights.json"))?))?;
    let mut vocabs = Vocabs::new();
    for kind in [FeatureKind::W, FeatureKind::P, FeatureKind::T, FeatureKind::D, FeatureKind::E] {
        let path = dir.join(format!("vocab-{kind}.txt"));
        if path.exists() {
            let v = Vocabulary::read_from(kind, BufReader::new(fs::File::open(path)?))?;
            vocabs.insert(kind, v);
        }
    }
    Ok((model, vocabs))
}
