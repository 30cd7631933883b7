use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use super::{AnnotateError, Retrainer, Suggester};
use crate::corpus::{split, Dataset, Partition, Sentence, SplitSpec};
use crate::featurize::Featurizer;
use crate::models::{Model, RnnConfig, ModelConfig, TokenClassifier};
use crate::trainer::{fit_trial, TrialConfig, TrialData, TrialEnv, DEFAULT_VALIDATION_FRACTION};

/// Marks every word that was labeled a trigger anywhere in the pool.
/// Cheap enough for exercising the session machinery.
#[derive(Debug, Default)]
pub struct StubRetrainer {
    pub delay: Duration,
    calls: AtomicUsize,
}

impl StubRetrainer {
    pub fn with_delay(delay: Duration) -> Self {
        StubRetrainer {
            delay,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

struct Lexicon(HashSet<String>);

impl Suggester for Lexicon {
    fn suggest(&self, s: &Sentence) -> Result<Vec<f64>, AnnotateError> {
        Ok(s.tokens.iter().map(|t| self.0.contains(&t.text) as u8 as f64).collect())
    }
}

impl Retrainer for StubRetrainer {
    fn retrain(&self, pool: &Dataset, _seed: u64) -> Result<Arc<dyn Suggester>, AnnotateError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(self.delay);
        let words = pool
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter())
            .filter(|t| t.label.is_trigger())
            .map(|t| t.text.clone())
            .collect();
        Ok(Arc::new(Lexicon(words)))
    }
}

/// A trained model with its featurizer.
#[derive(Debug, Clone)]
pub struct ModelSuggester {
    pub model: Model,
    pub featurizer: Featurizer,
}

impl Suggester for ModelSuggester {
    fn suggest(&self, s: &Sentence) -> Result<Vec<f64>, AnnotateError> {
        let f = self.featurizer.featurize(s).map_err(|e| AnnotateError::Suggest(e.to_string()))?;
        self.model.predict_proba(&f).map_err(|e| AnnotateError::Suggest(e.to_string()))
    }
}

/// Retrains a model through the trainer on a seeded train/validation split
/// of the whole pool.
#[derive(Debug, Clone)]
pub struct TrialRetrainer {
    pub model: ModelConfig,
    pub env: TrialEnv,
    pub patience: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
}

impl TrialRetrainer {
    pub fn rnn(config: RnnConfig, env: TrialEnv) -> Self {
        TrialRetrainer {
            model: ModelConfig::Rnn(config),
            env,
            patience: 100,
            max_epochs: 500,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
        }
    }

    pub fn fit(&self, pool: &Dataset, seed: u64) -> Result<ModelSuggester, AnnotateError> {
        if pool.is_empty() {
            return Err(AnnotateError::Retrain("labeled pool is empty".into()));
        }
        let retrain_err = |e: &dyn std::fmt::Display| AnnotateError::Retrain(e.to_string());
        let pool = Dataset::new(pool.sentences.clone(), Partition::Trainval);
        let (train, validation) = split(&pool, &SplitSpec::new(seed, self.validation_fraction)).map_err(|e| retrain_err(&e))?;
        // Tiny pools leave one side empty; fall back to validating on train.
        let (train, validation) = if train.is_empty() || validation.is_empty() {
            (pool.clone(), pool)
        } else {
            (train, validation)
        };
        let cfg = TrialConfig {
            patience: self.patience,
            max_epochs: self.max_epochs,
            ..TrialConfig::new("annotator", self.model.clone(), seed)
        };
        let data = TrialData {
            train,
            validation,
            test: Dataset::new(Vec::new(), Partition::Test),
        };
        let fitted = fit_trial(&cfg, &data, &self.env).map_err(|e| retrain_err(&e))?;
        log::info!(
            "retrained on {} sentences: best epoch {}, validation F1 {:.3}",
            data.train.len() + data.validation.len(),
            fitted.result.best_epoch,
            fitted.result.best_validation_f1
        );
        Ok(ModelSuggester {
            model: fitted.model,
            featurizer: fitted.featurizer,
        })
    }
}

impl Retrainer for TrialRetrainer {
    fn retrain(&self, pool: &Dataset, seed: u64) -> Result<Arc<dyn Suggester>, AnnotateError> {
        Ok(Arc::new(self.fit(pool, seed)?))
    }
}
