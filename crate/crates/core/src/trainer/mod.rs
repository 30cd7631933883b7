//! Seeded trials with early stopping on validation F1, and multi-trial
//! experiments over variant grids.

mod experiment;

pub use experiment::{
    load_results, resume_experiment, run_experiment, trial_file_name, variant_order, write_trial_result, Arch,
    DataPaths, ExperimentConfig, ExperimentOutcome, Family, Seeds, TrialFailure, Variant, EXPERIMENT_FILE,
};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Dataset, Partition};
use crate::evalstats::{confusion, ConfusionCounts, F1Choice};
use crate::featurize::{FeaturizeError, FeaturizedSentence, Featurizer, ProviderRegistry, StaticEmbeddings};
use crate::models::{save_checkpoint, Model, ModelConfig, ModelError, TokenClassifier, Trainable, DEFAULT_THRESHOLD};

pub const DEFAULT_PATIENCE: usize = 400;
pub const DEFAULT_MAX_EPOCHS: usize = 5000;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;
/// Smallest validation-F1 gain that counts as an improvement.
pub const MIN_DELTA: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("configuration hash {found} does not match the run directory's {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("result record {path}: {message}")]
    Record { path: PathBuf, message: String },
    #[error("trial {variant}/{seed} diverged at epoch {epoch}: {source}")]
    Diverged {
        variant: String,
        seed: u64,
        epoch: usize,
        #[source]
        source: ModelError,
    },
}

impl TrainerError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        TrainerError::Io {
            context: context.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Validation,
    Test,
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalSplit::Train => "train",
            EvalSplit::Validation => "validation",
            EvalSplit::Test => "test",
        })
    }
}

impl FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "validation" | "val" => Ok(EvalSplit::Validation),
            "test" => Ok(EvalSplit::Test),
            other => Err(format!("unknown split {other:?} (expected train, validation or test)")),
        }
    }
}

/// Outcome of one (variant, seed) trial, measured with the best-on-validation
/// checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub variant: String,
    pub seed: u64,
    /// 1-based; 0 for models fitted without epochs.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_validation_f1: f64,
    pub train: ConfusionCounts,
    pub validation: ConfusionCounts,
    pub test: ConfusionCounts,
    /// Omitted in deterministic mode so records are reproducible bit for bit.
    pub wall_clock_seconds: Option<f64>,
}

impl TrialResult {
    pub fn counts(&self, split: EvalSplit) -> &ConfusionCounts {
        match split {
            EvalSplit::Train => &self.train,
            EvalSplit::Validation => &self.validation,
            EvalSplit::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub variant: String,
    pub model: ModelConfig,
    pub seed: u64,
    pub patience: usize,
    pub max_epochs: usize,
    /// F1 variant monitored on the validation split.
    pub monitor: F1Choice,
    pub deterministic: bool,
}

impl TrialConfig {
    pub fn new(variant: impl Into<String>, model: ModelConfig, seed: u64) -> Self {
        TrialConfig {
            variant: variant.into(),
            model,
            seed,
            patience: DEFAULT_PATIENCE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            monitor: F1Choice::Standard,
            deterministic: true,
        }
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.patience == 0 {
            return Err(TrainerError::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainerError::Config("max_epochs must be at least 1".into()));
        }
        self.model.validate()?;
        Ok(())
    }
}

/// Train, validation and test sentences for one trial.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl TrialData {
    pub fn from_split(trainval: &Dataset, test: Dataset, spec: &crate::corpus::SplitSpec) -> Result<Self, TrainerError> {
        let (train, validation) = crate::corpus::split(trainval, spec)?;
        Ok(TrialData {
            train,
            validation,
            test,
        })
    }
}

/// Shared, read-only resources for trials.
#[derive(Debug, Clone, Default)]
pub struct TrialEnv {
    pub providers: ProviderRegistry,
    pub embeddings: Option<Arc<StaticEmbeddings>>,
    /// When set, the best model is written to `<dir>/<variant>-<seed>/`.
    pub checkpoint_root: Option<PathBuf>,
}

/// Patience bookkeeping. Training stops once more than `patience` epochs
/// have passed since the best one.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: Option<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            min_delta: MIN_DELTA,
            best: None,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> Observation {
        let improved = match self.best {
            None => true,
            Some((_, best)) => value > best + self.min_delta,
        };
        if improved {
            self.best = Some((epoch, value));
        }
        let best_epoch = self.best.map_or(epoch, |b| b.0);
        Observation {
            improved,
            stop: epoch - best_epoch > self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopSummary {
    pub best_epoch: usize,
    pub best_value: f64,
    pub epochs_run: usize,
}

/// Per-epoch callbacks driven by [`train_with_early_stopping`].
pub trait EpochRunner {
    type Error;

    /// Trains one epoch and returns the monitored validation value.
    fn run_epoch(&mut self, epoch: usize) -> Result<f64, Self::Error>;

    /// Called whenever the monitored value sets a new best.
    fn on_improve(&mut self, _epoch: usize, _value: f64) -> Result<(), Self::Error> {
        Ok(())
    }
}

/// Runs epochs `1..=max_epochs` until early stopping fires.
pub fn train_with_early_stopping<R: EpochRunner>(
    max_epochs: usize,
    patience: usize,
    runner: &mut R,
) -> Result<StopSummary, R::Error> {
    let mut stopper = EarlyStopping::new(patience);
    let mut epochs_run = 0;
    for epoch in 1..=max_epochs {
        let value = runner.run_epoch(epoch)?;
        epochs_run = epoch;
        let obs = stopper.observe(epoch, value);
        if obs.improved {
            runner.on_improve(epoch, value)?;
        }
        if obs.stop {
            break;
        }
    }
    let (best_epoch, best_value) = stopper.best().unwrap_or((0, 0.0));
    Ok(StopSummary {
        best_epoch,
        best_value,
        epochs_run,
    })
}

/// Confusion counts of `model` over a featurized split.
pub fn evaluate<C: TokenClassifier + ?Sized>(model: &C, data: &[FeaturizedSentence]) -> Result<ConfusionCounts, ModelError> {
    let mut total = ConfusionCounts::default();
    for s in data {
        let p = model.predict_proba(s)?;
        let c = confusion(&p, &s.labels, DEFAULT_THRESHOLD).map_err(|e| ModelError::Shape(e.to_string()))?;
        total.merge(&c);
    }
    Ok(total)
}

/// Independent random streams derived from the trial seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// A trained model together with the featurizer it was trained with.
#[derive(Debug, Clone)]
pub struct FittedTrial {
    pub result: TrialResult,
    pub model: Model,
    pub featurizer: Featurizer,
}

/// Trains one model and reports its best-on-validation performance. SVM
/// variants are fitted once on train and validation together.
pub fn run_trial(cfg: &TrialConfig, data: &TrialData, env: &TrialEnv) -> Result<TrialResult, TrainerError> {
    fit_trial(cfg, data, env).map(|f| f.result)
}

/// [`run_trial`], keeping the best model.
pub fn fit_trial(cfg: &TrialConfig, data: &TrialData, env: &TrialEnv) -> Result<FittedTrial, TrainerError> {
    cfg.validate()?;
    let started = Instant::now();
    let kinds = cfg.model.feature_set();
    let is_svm = matches!(cfg.model, ModelConfig::Svm(_));
    let fit_set = if is_svm {
        let mut all = data.train.sentences.clone();
        all.extend(data.validation.sentences.iter().cloned());
        Dataset::new(all, Partition::Trainval)
    } else {
        data.train.clone()
    };
    let featurizer = Featurizer::fit(&fit_set, kinds, env.providers.clone());
    let train = featurizer.featurize_all(&data.train.sentences)?;
    let validation = featurizer.featurize_all(&data.validation.sentences)?;
    let test = featurizer.featurize_all(&data.test.sentences)?;

    let mut init_rng = stream(cfg.seed, 1);
    let mut model = cfg
        .model
        .build(&featurizer.vocabs, env.embeddings.as_deref(), &mut init_rng)?;

    let (best, summary) = match &mut model {
        Model::Svm(svm) => {
            let mut both = train.clone();
            both.extend(validation.iter().cloned());
            svm.fit(&both)?;
            let f1 = evaluate(&model, &validation)?.metrics().f1(cfg.monitor);
            let summary = StopSummary {
                best_epoch: 0,
                best_value: f1,
                epochs_run: 0,
            };
            (model, summary)
        }
        Model::Rnn(m) => fit_epochs(m, cfg, &train, &validation).map(|(b, s)| (Model::Rnn(b), s))?,
        Model::Cnn(m) => fit_epochs(m, cfg, &train, &validation).map(|(b, s)| (Model::Cnn(b), s))?,
    };

    let result = TrialResult {
        variant: cfg.variant.clone(),
        seed: cfg.seed,
        best_epoch: summary.best_epoch,
        epochs_run: summary.epochs_run,
        best_validation_f1: summary.best_value,
        train: evaluate(&best, &train)?,
        validation: evaluate(&best, &validation)?,
        test: evaluate(&best, &test)?,
        wall_clock_seconds: (!cfg.deterministic).then(|| started.elapsed().as_secs_f64()),
    };
    if let Some(root) = &env.checkpoint_root {
        let dir = root.join(format!("{}-{}", cfg.variant, cfg.seed));
        save_checkpoint(&dir, &best, &featurizer.vocabs)?;
    }
    Ok(FittedTrial {
        result,
        model: best,
        featurizer,
    })
}

struct EpochFit<'a, M> {
    model: &'a mut M,
    best: M,
    cfg: &'a TrialConfig,
    train: &'a [FeaturizedSentence],
    validation: &'a [FeaturizedSentence],
    order: Vec<usize>,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
}

impl<M: Trainable + Clone> EpochRunner for EpochFit<'_, M> {
    type Error = TrainerError;

    fn run_epoch(&mut self, epoch: usize) -> Result<f64, TrainerError> {
        self.order.shuffle(&mut self.shuffle_rng);
        self.model
            .train_epoch(self.train, &self.order, &mut self.dropout_rng)
            .map_err(|source| TrainerError::Diverged {
                variant: self.cfg.variant.clone(),
                seed: self.cfg.seed,
                epoch,
                source,
            })?;
        Ok(evaluate(&*self.model, self.validation)?.metrics().f1(self.cfg.monitor))
    }

    fn on_improve(&mut self, _epoch: usize, _value: f64) -> Result<(), TrainerError> {
        self.best = self.model.clone();
        Ok(())
    }
}

fn fit_epochs<M: Trainable + Clone>(
    model: &mut M,
    cfg: &TrialConfig,
    train: &[FeaturizedSentence],
    validation: &[FeaturizedSentence],
) -> Result<(M, StopSummary), TrainerError> {
    let mut fit = EpochFit {
        best: model.clone(),
        model,
        cfg,
        train,
        validation,
        order: (0..train.len()).collect(),
        shuffle_rng: stream(cfg.seed, 2),
        dropout_rng: stream(cfg.seed, 3),
    };
    let summary = train_with_early_stopping(cfg.max_epochs, cfg.patience, &mut fit)?;
    Ok((fit.best, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scripted {
        trace: Vec<f64>,
        improved_at: Vec<usize>,
    }

    impl EpochRunner for Scripted {
        type Error = ();

        fn run_epoch(&mut self, epoch: usize) -> Result<f64, ()> {
            Ok(self.trace[epoch - 1])
        }

        fn on_improve(&mut self, epoch: usize, _value: f64) -> Result<(), ()> {
            self.improved_at.push(epoch);
            Ok(())
        }
    }

    fn scripted(trace: &[f64]) -> Scripted {
        Scripted {
            trace: trace.to_vec(),
            improved_at: Vec::new(),
        }
    }

    #[test]
    fn scripted_trace_halts_after_patience() {
        let mut run = scripted(&[0.1, 0.3, 0.2, 0.2, 0.2, 0.9]);
        let summary = train_with_early_stopping(100, 2, &mut run).unwrap();
        assert_eq!(summary.epochs_run, 5);
        assert_eq!(summary.best_epoch, 2);
        assert_eq!(run.improved_at, vec![1, 2]);
    }

    #[test]
    fn ties_do_not_reset_patience() {
        let mut es = EarlyStopping::new(1);
        assert!(es.observe(1, 0.5).improved);
        assert!(!es.observe(2, 0.5 + 1e-7).improved);
        assert!(es.observe(3, 0.5).stop);
    }

    #[test]
    fn max_epochs_caps_training() {
        let s = train_with_early_stopping(3, 10, &mut scripted(&[0.1, 0.2, 0.3])).unwrap();
        assert_eq!((s.epochs_run, s.best_epoch), (3, 3));
    }

    #[test]
    fn split_names() {
        assert_eq!("val".parse::<EvalSplit>().unwrap(), EvalSplit::Validation);
        assert_eq!(EvalSplit::Test.to_string(), "test");
        assert!("dev".parse::<EvalSplit>().is_err());
    }
}
