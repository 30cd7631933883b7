use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::{
    run_trial, TrainerError, TrialConfig, TrialData, TrialEnv, TrialResult, DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE,
    DEFAULT_VALIDATION_FRACTION,
};
use crate::corpus::{load_dataset, load_manifest, Dataset, Partition, SplitSpec};
use crate::evalstats::F1Choice;
use crate::featurize::{parse_feature_expr, EncoderSpec, FeatureCache, FeatureSet, ProviderRegistry, StaticEmbeddings, WORD_DIM};
use crate::models::{CnnConfig, Kernel, ModelConfig, RnnConfig, SvmConfig};

/// Run-directory record holding the effective configuration and its hash.
pub const EXPERIMENT_FILE: &str = "experiment.json";

/// Seed list, written either as `"1..10"` (inclusive) or as an array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

impl Default for Seeds {
    fn default() -> Self {
        Seeds((1..=10).collect())
    }
}

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || format!("seed range {s:?} is not of the form A..B");
        if let Some((a, b)) = s.split_once("..") {
            let b = b.strip_prefix('=').unwrap_or(b);
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(format!("empty seed range {s:?}"));
            }
            Ok(Seeds((a..=b).collect()))
        } else {
            s.parse::<u64>().map(|x| Seeds(vec![x])).map_err(|_| bad())
        }
    }
}

impl fmt::Display for Seeds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.0.first(), self.0.last()) {
            (Some(a), Some(b)) if self.0.windows(2).all(|w| w[1] == w[0] + 1) => write!(f, "{a}..{b}"),
            _ => {
                let parts: Vec<String> = self.0.iter().map(u64::to_string).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

impl Serialize for Seeds {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Seeds {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Range(String),
            List(Vec<u64>),
        }
        match Raw::deserialize(d)? {
            Raw::Range(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::List(v) => Ok(Seeds(v)),
        }
    }
}

/// Hidden-unit list, written `[100, 15, 5]`, `"100,15,5"` or `"<100,15,5>"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arch(pub Vec<usize>);

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s.trim().trim_start_matches(['<', '⟨', '[']).trim_end_matches(['>', '⟩', ']']);
        let units = inner
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| format!("malformed architecture {s:?}"))?;
        if units.is_empty() || units.contains(&0) {
            return Err(format!("architecture {s:?} needs positive unit counts"));
        }
        Ok(Arch(units))
    }
}

impl Serialize for Arch {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Arch {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            One(usize),
            List(Vec<usize>),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::One(n) => Ok(Arch(vec![n])),
            Raw::List(v) => Ok(Arch(v)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[default]
    Rnn,
    Cnn,
    Svm,
}

/// One row of the grid: a model family plus the settings that vary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub id: String,
    #[serde(default)]
    pub model: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<Arch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters_per_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

impl Variant {
    pub fn new(id: impl Into<String>, model: Family) -> Self {
        Variant {
            id: id.into(),
            model,
            features: None,
            arch: None,
            window: None,
            kernel: None,
            filter_sizes: None,
            filters_per_size: None,
            batch_size: None,
            learning_rate: None,
            dropout: None,
        }
    }

    fn features(&self) -> Result<Option<FeatureSet>, TrainerError> {
        self.features
            .as_deref()
            .map(parse_feature_expr)
            .transpose()
            .map_err(|e| TrainerError::Config(format!("variant {}: {e}", self.id)))
    }

    pub fn model_config(&self) -> Result<ModelConfig, TrainerError> {
        let err = |m: String| TrainerError::Config(format!("variant {}: {m}", self.id));
        let cfg = match self.model {
            Family::Rnn => {
                let features = self.features()?.unwrap_or_else(FeatureSet::all);
                let mut c = RnnConfig::new(features);
                if let Some(a) = &self.arch {
                    c.hidden_units = a.0.clone();
                }
                if let Some(b) = self.batch_size {
                    c.batch_size = b;
                }
                if let Some(lr) = self.learning_rate {
                    c.optimizer.learning_rate = lr;
                }
                if let Some(p) = self.dropout {
                    c.dropout = p;
                }
                ModelConfig::Rnn(c)
            }
            Family::Cnn => {
                let window = self.window.ok_or_else(|| err("CNN variants need a window".into()))?;
                let mut c = match self.features()? {
                    Some(f) => CnnConfig::from_features(window, &f).map_err(|e| err(e.to_string()))?,
                    None => CnnConfig::new(window),
                };
                c.filter_sizes = self.filter_sizes.clone();
                if let Some(n) = self.filters_per_size {
                    c.filters_per_size = n;
                }
                if let Some(b) = self.batch_size {
                    c.batch_size = b;
                }
                if let Some(lr) = self.learning_rate {
                    c.optimizer.learning_rate = lr;
                }
                if let Some(p) = self.dropout {
                    c.dropout = p;
                }
                ModelConfig::Cnn(c)
            }
            Family::Svm => {
                let kernel: Kernel = self
                    .kernel
                    .as_deref()
                    .ok_or_else(|| err("SVM variants need a kernel".into()))?
                    .parse()
                    .map_err(|e: crate::models::ModelError| err(e.to_string()))?;
                if let Some(f) = self.features()? {
                    if f.to_string() != "{W}" {
                        return Err(err(format!("the SVM only takes {{W}}, got {f}")));
                    }
                }
                ModelConfig::Svm(SvmConfig::new(kernel))
            }
        };
        cfg.validate().map_err(|e| err(e.to_string()))?;
        Ok(cfg)
    }
}

/// Dataset locations, given either as a manifest or as two files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainval: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

fn default_patience() -> usize {
    DEFAULT_PATIENCE
}
fn default_max_epochs() -> usize {
    DEFAULT_MAX_EPOCHS
}
fn default_fraction() -> f64 {
    DEFAULT_VALIDATION_FRACTION
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_fraction")]
    pub validation_fraction: f64,
    /// Split train/validation once (seed 0) instead of once per seed.
    #[serde(default)]
    pub fixed_split: bool,
    #[serde(default)]
    pub monitor: F1Choice,
    #[serde(default = "default_true")]
    pub deterministic: bool,
    pub data: DataPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub encoder: EncoderSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub checkpoints: bool,
    pub variants: Vec<Variant>,
    /// Directory relative paths resolve against; not part of the hash.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, TrainerError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| TrainerError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainerError> {
        let text = fs::read_to_string(path).map_err(|e| TrainerError::io(format!("reading {}", path.display()), e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.variants.is_empty() {
            return Err(TrainerError::Config("at least one variant is required".into()));
        }
        let mut ids = BTreeSet::new();
        for v in &self.variants {
            if !valid_id(&v.id) {
                return Err(TrainerError::Config(format!(
                    "variant id {:?} must be non-empty and use only letters, digits, '_', '.' or '-'",
                    v.id
                )));
            }
            if !ids.insert(v.id.as_str()) {
                return Err(TrainerError::Config(format!("duplicate variant id {:?}", v.id)));
            }
            v.model_config()?;
        }
        if self.seeds.0.is_empty() || self.seeds.0.iter().enumerate().any(|(i, &s)| s != i as u64 + 1) {
            return Err(TrainerError::Config(format!(
                "seeds must be consecutive from 1, got {}",
                self.seeds
            )));
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return Err(TrainerError::Config("patience and max_epochs must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(TrainerError::Config("validation_fraction must lie in (0, 1)".into()));
        }
        let d = &self.data;
        if d.manifest.is_some() == (d.trainval.is_some() || d.test.is_some())
            || (d.manifest.is_none() && (d.trainval.is_none() || d.test.is_none()))
        {
            return Err(TrainerError::Config(
                "data needs either `manifest` or both `trainval` and `test`".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_data(&self) -> Result<(Dataset, Dataset), TrainerError> {
        if let Some(m) = &self.data.manifest {
            return Ok(load_manifest(self.resolve(m))?.load()?);
        }
        let tv = self.data.trainval.as_ref().expect("validated");
        let te = self.data.test.as_ref().expect("validated");
        let trainval = load_dataset(self.resolve(tv), Partition::Trainval)?;
        let test = load_dataset(self.resolve(te), Partition::Test)?;
        crate::corpus::check_disjoint(&trainval, &test)?;
        Ok((trainval, test))
    }

    pub fn trial_count(&self) -> usize {
        self.variants.len() * self.seeds.0.len()
    }

    fn env(&self, out_dir: &Path) -> Result<TrialEnv, TrainerError> {
        let mut providers = ProviderRegistry::with_encoder(self.encoder.build());
        if let Some(dir) = &self.cache_dir {
            providers = providers.cached(FeatureCache::new(self.resolve(dir)));
        }
        let embeddings = match &self.embeddings {
            Some(p) => Some(Arc::new(StaticEmbeddings::load(self.resolve(p), WORD_DIM)?)),
            None => None,
        };
        Ok(TrialEnv {
            providers,
            embeddings,
            checkpoint_root: self.checkpoints.then(|| out_dir.join("checkpoints")),
        })
    }

    pub fn trial_config(&self, variant: &Variant, seed: u64) -> Result<TrialConfig, TrainerError> {
        let mut t = TrialConfig::new(variant.id.clone(), variant.model_config()?, seed);
        t.patience = self.patience;
        t.max_epochs = self.max_epochs;
        t.monitor = self.monitor;
        t.deterministic = self.deterministic;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub variant: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    /// Every completed trial in the directory, in variant then seed order.
    pub results: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
    /// Trials executed by this call.
    pub executed: usize,
}

#[derive(Serialize, Deserialize)]
struct ExperimentRecord {
    hash: String,
    base_dir: PathBuf,
    config: ExperimentConfig,
}

pub fn trial_file_name(variant: &str, seed: u64) -> String {
    format!("trial-{variant}-{seed}.json")
}

fn failure_file_name(variant: &str, seed: u64) -> String {
    format!("trial-{variant}-{seed}.failed.json")
}

/// Writes `value` as JSON through a temporary file and a rename, so
/// readers never observe a partial record.
fn write_json_atomic<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), TrainerError> {
    let ctx = || format!("writing {}", dir.join(name).display());
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| TrainerError::io(ctx(), e))?;
    serde_json::to_writer_pretty(&mut tmp, value).map_err(|e| TrainerError::io(ctx(), e.into()))?;
    tmp.write_all(b"\n").map_err(|e| TrainerError::io(ctx(), e))?;
    tmp.persist(dir.join(name)).map_err(|e| TrainerError::io(ctx(), e.error))?;
    Ok(())
}

pub fn write_trial_result(dir: &Path, result: &TrialResult) -> Result<PathBuf, TrainerError> {
    fs::create_dir_all(dir).map_err(|e| TrainerError::io(format!("creating {}", dir.display()), e))?;
    let name = trial_file_name(&result.variant, result.seed);
    write_json_atomic(dir, &name, result)?;
    Ok(dir.join(name))
}

fn read_result(path: &Path) -> Result<TrialResult, TrainerError> {
    let text = fs::read_to_string(path).map_err(|e| TrainerError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| TrainerError::Record {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Runs every (variant, seed) trial not already recorded in `out_dir`.
/// Trials run in parallel; each result is persisted as soon as it
/// finishes, and a failing trial leaves a `.failed.json` record instead
/// of aborting its siblings.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome, TrainerError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| TrainerError::io(format!("creating {}", out_dir.display()), e))?;
    let record_path = out_dir.join(EXPERIMENT_FILE);
    let hash = cfg.hash();
    if record_path.exists() {
        let stored = read_record(out_dir)?;
        if stored.hash != hash {
            return Err(TrainerError::HashMismatch {
                expected: stored.hash,
                found: hash,
            });
        }
    } else {
        let base_dir = fs::canonicalize(&cfg.base_dir).unwrap_or_else(|_| cfg.base_dir.clone());
        write_json_atomic(
            out_dir,
            EXPERIMENT_FILE,
            &ExperimentRecord {
                hash,
                base_dir,
                config: cfg.clone(),
            },
        )?;
    }

    let (trainval, test) = cfg.load_data()?;
    let env = cfg.env(out_dir)?;

    let mut pending = Vec::new();
    for v in &cfg.variants {
        for &seed in &cfg.seeds.0 {
            if !out_dir.join(trial_file_name(&v.id, seed)).exists() {
                pending.push((v, seed));
            }
        }
    }
    let executed = pending.len();
    log::info!("{}: {executed} of {} trials to run", cfg.name, cfg.trial_count());

    let failures: Vec<TrialFailure> = pending
        .par_iter()
        .filter_map(|&(variant, seed)| {
            let outcome = cfg.trial_config(variant, seed).and_then(|tc| {
                let split_seed = if cfg.fixed_split { 0 } else { seed };
                let data = TrialData::from_split(&trainval, test.clone(), &SplitSpec::new(split_seed, cfg.validation_fraction))?;
                let result = run_trial(&tc, &data, &env)?;
                write_trial_result(out_dir, &result)?;
                Ok(())
            });
            match outcome {
                Ok(()) => {
                    let _ = fs::remove_file(out_dir.join(failure_file_name(&variant.id, seed)));
                    None
                }
                Err(e) => {
                    log::error!("trial {}/{seed} failed: {e}", variant.id);
                    let f = TrialFailure {
                        variant: variant.id.clone(),
                        seed,
                        error: e.to_string(),
                    };
                    if let Err(write_err) = write_json_atomic(out_dir, &failure_file_name(&variant.id, seed), &f) {
                        log::error!("{write_err}");
                    }
                    Some(f)
                }
            }
        })
        .collect();

    Ok(ExperimentOutcome {
        results: collect_results(cfg, out_dir)?,
        failures,
        executed,
    })
}

fn read_record(dir: &Path) -> Result<ExperimentRecord, TrainerError> {
    let path = dir.join(EXPERIMENT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| TrainerError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| TrainerError::Record {
        path,
        message: e.to_string(),
    })
}

fn collect_results(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<TrialResult>, TrainerError> {
    let mut out = Vec::new();
    for v in &cfg.variants {
        for &seed in &cfg.seeds.0 {
            let path = dir.join(trial_file_name(&v.id, seed));
            if path.exists() {
                out.push(read_result(&path)?);
            }
        }
    }
    Ok(out)
}

/// Continues a partial run. Without `cfg`, the configuration stored in the
/// directory is used; with one, its hash must match the stored hash.
pub fn resume_experiment(dir: &Path, cfg: Option<&ExperimentConfig>) -> Result<ExperimentOutcome, TrainerError> {
    let record = read_record(dir)?;
    let cfg = match cfg {
        Some(c) => {
            let found = c.hash();
            if found != record.hash {
                return Err(TrainerError::HashMismatch {
                    expected: record.hash,
                    found,
                });
            }
            c.clone()
        }
        None => {
            let mut c = record.config;
            c.base_dir = record.base_dir;
            c
        }
    };
    run_experiment(&cfg, dir)
}

/// Loads every trial record in a results directory, sorted by variant and seed.
pub fn load_results(dir: &Path) -> Result<Vec<TrialResult>, TrainerError> {
    let entries = fs::read_dir(dir).map_err(|e| TrainerError::io(format!("reading {}", dir.display()), e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| TrainerError::io(format!("reading {}", dir.display()), e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("trial-") && name.ends_with(".json") && !name.ends_with(".failed.json") {
            out.push(read_result(&path)?);
        }
    }
    out.sort_by(|a, b| (&a.variant, a.seed).cmp(&(&b.variant, b.seed)));
    Ok(out)
}

/// Variant ids in configuration order, when the directory holds a run record.
pub fn variant_order(dir: &Path) -> Vec<String> {
    read_record(dir)
        .map(|r| r.config.variants.into_iter().map(|v| v.id).collect())
        .unwrap_or_default()
}
