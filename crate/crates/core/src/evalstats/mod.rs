//! Token-level confusion counts, the metrics derived from them, and the
//! statistics used to compare model variants across seeds.

mod report;
mod stats;

pub use report::{render_report, ComparisonReport, PValue, ReportOptions, ReportRow};
pub use stats::{mean_ci, one_tailed_t_test, TTestKind};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {predictions} predictions vs {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("both samples have zero variance and equal means")]
    Degenerate,
    #[error("confidence level {0} outside (0, 1)")]
    BadLevel(f64),
    #[error("no results to report")]
    Empty,
    #[error("statistics backend: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, prediction: bool, gold: bool) {
        match (prediction, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn metrics(&self) -> MetricSet {
        metrics(self)
    }
}

/// Counts with `probability >= threshold` read as a trigger prediction.
pub fn confusion(probabilities: &[f64], gold: &[u8], threshold: f64) -> Result<ConfusionCounts, StatsError> {
    if probabilities.len() != gold.len() {
        return Err(StatsError::LengthMismatch {
            predictions: probabilities.len(),
            gold: gold.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in probabilities.iter().zip(gold) {
        c.add(p >= threshold, g != 0);
    }
    Ok(c)
}

/// Counts over hard 0/1 predictions.
pub fn confusion_labels(predictions: &[u8], gold: &[u8]) -> Result<ConfusionCounts, StatsError> {
    if predictions.len() != gold.len() {
        return Err(StatsError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in predictions.iter().zip(gold) {
        c.add(p != 0, g != 0);
    }
    Ok(c)
}

/// Which harmonic mean is reported as "F1".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Choice {
    /// Harmonic mean of precision and sensitivity.
    #[default]
    Standard,
    /// Harmonic mean of sensitivity and specificity.
    SensSpec,
}

impl std::str::FromStr for F1Choice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "std" | "standard" => Ok(F1Choice::Standard),
            "sens-spec" | "sensspec" => Ok(F1Choice::SensSpec),
            other => Err(format!("unknown F1 variant {other:?} (expected std or sens-spec)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1_std: f64,
    pub f1_sens_spec: f64,
    /// True when any ratio above hit 0/0 and was set to 0.
    pub undefined: bool,
}

impl MetricSet {
    pub fn f1(&self, choice: F1Choice) -> f64 {
        match choice {
            F1Choice::Standard => self.f1_std,
            F1Choice::SensSpec => self.f1_sens_spec,
        }
    }
}

fn ratio(num: f64, den: f64, undefined: &mut bool) -> f64 {
    if den == 0.0 {
        *undefined = true;
        0.0
    } else {
        num / den
    }
}

fn harmonic(a: f64, b: f64, undefined: &mut bool) -> f64 {
    ratio(2.0 * a * b, a + b, undefined)
}

/// Sensitivity, specificity, precision and both F1 variants; 0/0 is 0.
pub fn metrics(c: &ConfusionCounts) -> MetricSet {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let mut undefined = false;
    let sensitivity = ratio(tp, tp + fn_, &mut undefined);
    let specificity = ratio(tn, tn + fp, &mut undefined);
    let precision = ratio(tp, tp + fp, &mut undefined);
    let f1_std = harmonic(precision, sensitivity, &mut undefined);
    let f1_sens_spec = harmonic(sensitivity, specificity, &mut undefined);
    MetricSet {
        sensitivity,
        specificity,
        precision,
        f1_std,
        f1_sens_spec,
        undefined,
    }
}
