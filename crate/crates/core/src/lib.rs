//! Ongoing event detection: token-level trigger classification.
//!
//! The crate is organised along the pipeline: [`corpus`] loads and
//! describes labeled sentences, [`featurize`] turns them into per-token
//! features, [`models`] holds the classifiers, [`trainer`] runs seeded
//! trials and experiment grids, and [`evalstats`] turns trial records into
//! metrics, intervals and significance tests.

pub mod annotate;
pub mod corpus;
pub mod evalstats;
pub mod featurize;
pub mod models;
pub mod synth;
pub mod trainer;

pub use corpus::{Dataset, Label, Partition, Sentence, Token};
pub use evalstats::{ConfusionCounts, MetricSet};
pub use featurize::{FeatureKind, FeatureSet};
pub use models::{Model, ModelConfig, TokenClassifier};
pub use trainer::{TrialConfig, TrialResult};
