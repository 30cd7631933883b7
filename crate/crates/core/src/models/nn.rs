//! Small numeric building blocks shared by the neural models.

use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a 0/1 target, computed without
/// forming the probability.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

pub fn uniform<R: Rng>(rng: &mut R, shape: (usize, usize), limit: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-limit..=limit))
}

pub fn glorot_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, (fan_in, fan_out), limit)
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - p)`.
pub fn dropout_mask<R: Rng>(rng: &mut R, shape: (usize, usize), p: f64) -> Array2<f64> {
    if p <= 0.0 {
        return Array2::ones(shape);
    }
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// Rescales rows whose Euclidean norm exceeds `cap`.
pub fn clip_row_norms(table: &mut Array2<f64>, cap: f64) {
    for mut row in table.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > cap {
            row.mapv_inplace(|x| x * cap / n);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Adaptive-moment optimizer state for a fixed list of parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            ..Default::default()
        }
    }

    pub fn update(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr_t = c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut **p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    *p -= lr_t * *m / (v.sqrt() + c.epsilon);
                });
        }
    }
}

/// Adds the gradient of `l1 * |w| + l2 * w^2` to `grad` and returns the penalty.
pub fn l1l2_penalty(w: &Array2<f64>, grad: &mut Array2<f64>, l1: f64, l2: f64) -> f64 {
    if l1 == 0.0 && l2 == 0.0 {
        return 0.0;
    }
    let mut penalty = 0.0;
    Zip::from(grad).and(w).for_each(|g, &w| {
        penalty += l1 * w.abs() + l2 * w * w;
        *g += l1 * w.signum() * (w != 0.0) as u8 as f64 + 2.0 * l2 * w;
    });
    penalty
}
