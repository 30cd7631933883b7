//! C-support-vector classification trained with sequential minimal
//! optimization, second-order working-set selection, no shrinking.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, TokenClassifier};
use crate::featurize::{FeatureKind, FeaturizedSentence, StaticEmbeddings, Vocabs, WORD_DIM};

const TAU: f64 = 1e-12;
/// Seed for out-of-vocabulary word vectors, so the SVM has no seed dependence.
const OOV_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    #[serde(alias = "polynomial")]
    Poly,
    Rbf,
    Sigmoid,
}

impl Kernel {
    pub const ALL: [Kernel; 4] = [Kernel::Linear, Kernel::Poly, Kernel::Rbf, Kernel::Sigmoid];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Linear => "linear",
            Kernel::Poly => "poly",
            Kernel::Rbf => "rbf",
            Kernel::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Kernel::Linear),
            "poly" | "polynomial" => Ok(Kernel::Poly),
            "rbf" => Ok(Kernel::Rbf),
            "sigmoid" => Ok(Kernel::Sigmoid),
            other => Err(ModelError::UnknownKernel(other.to_string())),
        }
    }
}

fn default_c() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    1e-3
}
fn default_degree() -> i32 {
    3
}
fn default_cache_mb() -> usize {
    200
}

/// Defaults follow the common library conventions: `C = 1`, `gamma`
/// scaled to the data, degree 3, `coef0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmConfig {
    pub kernel: Kernel,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// `None` means `1 / (n_features * var(X))`.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_degree")]
    pub degree: i32,
    #[serde(default)]
    pub coef0: f64,
    #[serde(default = "default_cache_mb")]
    pub cache_mb: usize,
}

impl SvmConfig {
    pub fn new(kernel: Kernel) -> Self {
        SvmConfig {
            kernel,
            c: default_c(),
            tol: default_tol(),
            gamma: None,
            degree: default_degree(),
            coef0: 0.0,
            cache_mb: default_cache_mb(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.c > 0.0) || !(self.tol > 0.0) {
            return Err(ModelError::Config("C and tol must be positive".into()));
        }
        if matches!(self.gamma, Some(g) if !(g > 0.0)) {
            return Err(ModelError::Config("gamma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct KernelFn {
    kernel: Kernel,
    gamma: f64,
    degree: i32,
    coef0: f64,
}

impl KernelFn {
    fn from_dot(&self, dot: f64, sq_a: f64, sq_b: f64) -> f64 {
        match self.kernel {
            Kernel::Linear => dot,
            Kernel::Poly => (self.gamma * dot + self.coef0).powi(self.degree),
            Kernel::Rbf => (-self.gamma * (sq_a + sq_b - 2.0 * dot).max(0.0)).exp(),
            Kernel::Sigmoid => (self.gamma * dot + self.coef0).tanh(),
        }
    }
}

/// Kernel rows of the training set, computed on demand and kept in a
/// bounded first-in first-out cache.
struct KernelRows<'a> {
    x: &'a Array2<f64>,
    sq: Array1<f64>,
    k: KernelFn,
    rows: Vec<Option<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a Array2<f64>, k: KernelFn, cache_mb: usize) -> Self {
        let n = x.nrows();
        let sq = x.map_axis(Axis(1), |r| r.dot(&r));
        let capacity = ((cache_mb << 20) / (8 * n.max(1))).max(2);
        KernelRows {
            x,
            sq,
            k,
            rows: vec![None; n],
            order: VecDeque::new(),
            capacity,
        }
    }

    fn diag(&self, i: usize) -> f64 {
        self.k.from_dot(self.sq[i], self.sq[i], self.sq[i])
    }

    fn row(&mut self, i: usize) -> &[f64] {
        if self.rows[i].is_none() {
            if self.order.len() >= self.capacity {
                let old = self.order.pop_front().expect("non-empty");
                self.rows[old] = None;
            }
            let dots = self.x.dot(&self.x.row(i));
            let sq_i = self.sq[i];
            let row = dots
                .iter()
                .zip(&self.sq)
                .map(|(&d, &sq_j)| self.k.from_dot(d, sq_i, sq_j))
                .collect();
            self.rows[i] = Some(row);
            self.order.push_back(i);
        }
        self.rows[i].as_deref().expect("just filled")
    }
}

/// Binary SVM over dense vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmClassifier {
    kernel: KernelFn,
    support: Array2<f64>,
    /// `alpha_i * y_i` per support vector.
    coef: Vec<f64>,
    rho: f64,
    /// Set when training saw a single class.
    constant: Option<u8>,
    pub iterations: usize,
}

impl SvmClassifier {
    pub fn fit(config: &SvmConfig, x: &Array2<f64>, labels: &[u8]) -> Result<Self, ModelError> {
        config.validate()?;
        let n = x.nrows();
        if n == 0 {
            return Err(ModelError::EmptyInput);
        }
        if labels.len() != n {
            return Err(ModelError::Shape(format!("{} labels for {n} rows", labels.len())));
        }
        let gamma = config.gamma.unwrap_or_else(|| {
            let var = x.var(0.0);
            if var > 0.0 {
                1.0 / (x.ncols() as f64 * var)
            } else {
                1.0
            }
        });
        let kernel = KernelFn {
            kernel: config.kernel,
            gamma,
            degree: config.degree,
            coef0: config.coef0,
        };
        let positives = labels.iter().filter(|&&y| y == 1).count();
        if positives == 0 || positives == n {
            return Ok(SvmClassifier {
                kernel,
                support: Array2::zeros((0, x.ncols())),
                coef: Vec::new(),
                rho: 0.0,
                constant: Some(labels[0]),
                iterations: 0,
            });
        }

        let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let c = config.c;
        let eps = config.tol;
        let mut rows = KernelRows::new(x, kernel, config.cache_mb);
        let qd: Vec<f64> = (0..n).map(|i| rows.diag(i)).collect();
        let mut alpha = vec![0.0; n];
        let mut grad = vec![-1.0; n];
        let upper = |a: f64| a >= c;
        let lower = |a: f64| a <= 0.0;
        let max_iter = (100 * n).max(10_000_000);
        let mut iter = 0;

        while iter < max_iter {
            let mut gmax = f64::NEG_INFINITY;
            let mut gi = None;
            for t in 0..n {
                if y[t] > 0.0 {
                    if !upper(alpha[t]) && -grad[t] >= gmax {
                        gmax = -grad[t];
                        gi = Some(t);
                    }
                } else if !lower(alpha[t]) && grad[t] >= gmax {
                    gmax = grad[t];
                    gi = Some(t);
                }
            }
            let Some(i) = gi else { break };
            let q_i: Vec<f64> = rows.row(i).iter().enumerate().map(|(j, &k)| y[i] * y[j] * k).collect();
            let mut gmax2 = f64::NEG_INFINITY;
            let mut gj = None;
            let mut obj_min = f64::INFINITY;
            for j in 0..n {
                if y[j] > 0.0 {
                    if !lower(alpha[j]) {
                        let diff = gmax + grad[j];
                        gmax2 = gmax2.max(grad[j]);
                        if diff > 0.0 {
                            let quad = qd[i] + qd[j] - 2.0 * y[i] * q_i[j];
                            let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                            if obj <= obj_min {
                                obj_min = obj;
                                gj = Some(j);
                            }
                        }
                    }
                } else if !upper(alpha[j]) {
                    let diff = gmax - grad[j];
                    gmax2 = gmax2.max(-grad[j]);
                    if diff > 0.0 {
                        let quad = qd[i] + qd[j] + 2.0 * y[i] * q_i[j];
                        let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= obj_min {
                            obj_min = obj;
                            gj = Some(j);
                        }
                    }
                }
            }
            let j = match gj {
                Some(j) if gmax + gmax2 >= eps => j,
                _ => break,
            };
            iter += 1;

            let q_j: Vec<f64> = rows.row(j).iter().enumerate().map(|(k, &v)| y[j] * y[k] * v).collect();
            let (old_i, old_j) = (alpha[i], alpha[j]);
            if y[i] != y[j] {
                let quad = (qd[i] + qd[j] + 2.0 * q_i[j]).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = (qd[i] + qd[j] - 2.0 * q_i[j]).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (d_i, d_j) = (alpha[i] - old_i, alpha[j] - old_j);
            for k in 0..n {
                grad[k] += q_i[k] * d_i + q_j[k] * d_j;
            }
        }
        if iter >= max_iter {
            log::warn!("SVM solver stopped at the iteration cap ({max_iter})");
        }

        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut n_free, mut sum_free) = (0usize, 0.0);
        for k in 0..n {
            let yg = y[k] * grad[k];
            if upper(alpha[k]) {
                if y[k] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if lower(alpha[k]) {
                if y[k] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };

        let sv: Vec<usize> = (0..n).filter(|&k| alpha[k] > 0.0).collect();
        let support = x.select(Axis(0), &sv);
        let coef = sv.iter().map(|&k| alpha[k] * y[k]).collect();
        Ok(SvmClassifier {
            kernel,
            support,
            coef,
            rho,
            constant: None,
            iterations: iter,
        })
    }

    pub fn support_count(&self) -> usize {
        self.coef.len()
    }

    pub fn gamma(&self) -> f64 {
        self.kernel.gamma
    }

    pub fn decision(&self, v: ArrayView1<'_, f64>) -> f64 {
        if let Some(c) = self.constant {
            return if c == 1 { 1.0 } else { -1.0 };
        }
        let sq_v = v.dot(&v);
        let dots = self.support.dot(&v);
        let mut f = -self.rho;
        for (k, (&d, &a)) in dots.iter().zip(&self.coef).enumerate() {
            let sv = self.support.row(k);
            f += a * self.kernel.from_dot(d, sv.dot(&sv), sq_v);
        }
        f
    }

    pub fn predict(&self, v: ArrayView1<'_, f64>) -> u8 {
        (self.decision(v) > 0.0) as u8
    }
}

/// Per-token SVM over frozen word vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvmModel {
    pub config: SvmConfig,
    word_table: Array2<f64>,
    classifier: Option<SvmClassifier>,
}

impl SvmModel {
    pub fn build(config: SvmConfig, vocabs: &Vocabs, pretrained: Option<&StaticEmbeddings>) -> Result<Self, ModelError> {
        config.validate()?;
        let wv = vocabs.get(&FeatureKind::W).ok_or(ModelError::MissingVocabulary(FeatureKind::W))?;
        let mut rng = ChaCha8Rng::seed_from_u64(OOV_SEED);
        let word_table = pretrained.cloned().unwrap_or_default().table_for(wv, WORD_DIM, &mut rng);
        Ok(SvmModel {
            config,
            word_table,
            classifier: None,
        })
    }

    fn word_indices<'a>(&self, s: &'a FeaturizedSentence) -> Result<&'a [usize], ModelError> {
        s.indices
            .get(&FeatureKind::W)
            .map(Vec::as_slice)
            .ok_or(ModelError::MissingFeature(FeatureKind::W))
    }

    fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.word_table.row(i.min(self.word_table.nrows() - 1))
    }

    pub fn fit(&mut self, data: &[FeaturizedSentence]) -> Result<(), ModelError> {
        let mut idx = Vec::new();
        let mut labels = Vec::new();
        for s in data {
            idx.extend_from_slice(self.word_indices(s)?);
            labels.extend_from_slice(&s.labels);
        }
        let idx: Vec<usize> = idx.into_iter().map(|i| i.min(self.word_table.nrows() - 1)).collect();
        let x = self.word_table.select(Axis(0), &idx);
        self.classifier = Some(SvmClassifier::fit(&self.config, &x, &labels)?);
        Ok(())
    }

    pub fn classifier(&self) -> Option<&SvmClassifier> {
        self.classifier.as_ref()
    }
}

impl TokenClassifier for SvmModel {
    fn predict_proba(&self, s: &FeaturizedSentence) -> Result<Vec<f64>, ModelError> {
        let clf = self.classifier.as_ref().ok_or(ModelError::Unfitted)?;
        if s.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        Ok(self
            .word_indices(s)?
            .iter()
            .map(|&i| clf.predict(self.row(i)) as f64)
            .collect())
    }

    fn is_fitted(&self) -> bool {
        self.classifier.is_some()
    }
}
