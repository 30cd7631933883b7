use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{BiLstm, BiLstmCache};
use super::nn::{self, bce_with_logit, dropout_mask, glorot_uniform, sigmoid, Adam, AdamConfig};
use super::{ModelError, TokenClassifier, Trainable};
use crate::featurize::{FeatureKind, FeatureSet, FeaturizedSentence, StaticEmbeddings, Vocabs, TAG_DIM, WORD_DIM};

/// Init range for the tag embedding tables (P, T, D, E).
const TAG_INIT_RANGE: f64 = 0.05;

fn default_hidden() -> Vec<usize> {
    vec![15]
}
fn default_dropout() -> f64 {
    0.1
}
fn default_reg() -> f64 {
    0.001
}
fn default_batch() -> usize {
    32
}

/// Bi-LSTM tagger hyperparameters. `hidden_units` lists the stacked
/// bidirectional layers from the bottom up, e.g. `[100, 15, 5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RnnConfig {
    #[serde(default = "default_hidden")]
    pub hidden_units: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// L1 penalty on the recurrent layers' input kernels.
    #[serde(default = "default_reg")]
    pub l1: f64,
    /// L2 penalty on the recurrent layers' input kernels.
    #[serde(default = "default_reg")]
    pub l2: f64,
    pub features: FeatureSet,
    /// Sentences per optimizer step.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
}

impl RnnConfig {
    pub fn new(features: FeatureSet) -> Self {
        RnnConfig {
            hidden_units: default_hidden(),
            dropout: default_dropout(),
            l1: default_reg(),
            l2: default_reg(),
            features,
            batch_size: default_batch(),
            optimizer: AdamConfig::default(),
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden_units = hidden;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_units.is_empty() || self.hidden_units.contains(&0) {
            return Err(ModelError::Config("hidden_units must be a non-empty list of positive sizes".into()));
        }
        if self.features.contains(FeatureKind::Po) {
            return Err(ModelError::Config("the recurrent model does not take the position feature Po".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Slot {
    kind: FeatureKind,
    offset: usize,
    dim: usize,
}

/// Embedding lookup and frozen vectors, concatenated, then dropout, stacked
/// bidirectional LSTMs and a single sigmoid unit per token.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RnnModel {
    pub config: RnnConfig,
    slots: Vec<Slot>,
    input_dim: usize,
    embeddings: BTreeMap<FeatureKind, Array2<f64>>,
    layers: Vec<BiLstm>,
    dense_w: Array2<f64>,
    dense_b: Array2<f64>,
    steps: u64,
    #[serde(skip)]
    optimizer: Adam,
}

struct Forward {
    mask: Option<Array2<f64>>,
    caches: Vec<BiLstmCache>,
    top: Array2<f64>,
    logits: Vec<f64>,
}

impl RnnModel {
    /// Builds the network. Tag tables start random; the W table starts
    /// from `pretrained` where available.
    pub fn build<R: Rng>(
        config: RnnConfig,
        vocabs: &Vocabs,
        pretrained: Option<&StaticEmbeddings>,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut slots = Vec::new();
        let mut embeddings = BTreeMap::new();
        let mut offset = 0;
        for kind in config.features.iter() {
            let dim = kind.dim().expect("Po rejected above");
            if kind.categorical() {
                let vocab = vocabs.get(&kind).ok_or(ModelError::MissingVocabulary(kind))?;
                let table = if kind == FeatureKind::W {
                    pretrained
                        .cloned()
                        .unwrap_or_default()
                        .table_for(vocab, WORD_DIM, rng)
                } else {
                    nn::uniform(rng, (vocab.len(), TAG_DIM), TAG_INIT_RANGE)
                };
                embeddings.insert(kind, table);
            }
            slots.push(Slot { kind, offset, dim });
            offset += dim;
        }
        let input_dim = offset;
        let mut layers = Vec::new();
        let mut d = input_dim;
        for &h in &config.hidden_units {
            layers.push(BiLstm::new(rng, d, h));
            d = 2 * h;
        }
        let optimizer = Adam::new(config.optimizer);
        Ok(RnnModel {
            dense_w: glorot_uniform(rng, d, 1),
            dense_b: Array2::zeros((1, 1)),
            config,
            slots,
            input_dim,
            embeddings,
            layers,
            steps: 0,
            optimizer,
        })
    }

    /// Width of the concatenated per-token input vector.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_hidden_units(&self) -> Vec<usize> {
        self.layers.iter().map(BiLstm::hidden).collect()
    }

    /// Kinds that own a trainable embedding table.
    pub fn embedding_kinds(&self) -> Vec<FeatureKind> {
        self.embeddings.keys().copied().collect()
    }

    pub fn embedding(&self, kind: FeatureKind) -> Option<&Array2<f64>> {
        self.embeddings.get(&kind)
    }

    fn assemble(&self, s: &FeaturizedSentence) -> Result<Array2<f64>, ModelError> {
        let n = s.len();
        let mut x = Array2::zeros((n, self.input_dim));
        for slot in &self.slots {
            let mut cols = x.slice_mut(s![.., slot.offset..slot.offset + slot.dim]);
            if let Some(table) = self.embeddings.get(&slot.kind) {
                let idx = s.indices.get(&slot.kind).ok_or(ModelError::MissingFeature(slot.kind))?;
                for (t, &i) in idx.iter().enumerate() {
                    let i = i.min(table.nrows() - 1);
                    cols.row_mut(t).assign(&table.row(i));
                }
            } else {
                let m = s.dense.get(&slot.kind).ok_or(ModelError::MissingFeature(slot.kind))?;
                if m.dim() != (n, slot.dim) {
                    return Err(ModelError::Shape(format!(
                        "{} features are {:?}, expected ({n}, {})",
                        slot.kind,
                        m.dim(),
                        slot.dim
                    )));
                }
                cols.assign(m);
            }
        }
        Ok(x)
    }

    fn forward(&self, s: &FeaturizedSentence, mask: Option<Array2<f64>>) -> Result<Forward, ModelError> {
        let x = self.assemble(s)?;
        let mut h = match &mask {
            Some(m) => &x * m,
            None => x,
        };
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(h.view());
            caches.push(cache);
            h = out;
        }
        let logits = (h.dot(&self.dense_w) + &self.dense_b).column(0).to_vec();
        Ok(Forward {
            mask,
            caches,
            top: h,
            logits,
        })
    }

    /// Zeroed gradient buffers in [`Self::params_mut`] order.
    fn zero_grads(&self) -> Vec<Array2<f64>> {
        self.params().iter().map(|p| Array2::zeros(p.raw_dim())).collect()
    }

    /// Trainable tensors: embedding tables (kind order), then per layer the
    /// forward and backward `wx, wh, b`, then the output weights and bias.
    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut out: Vec<&Array2<f64>> = self.embeddings.values().collect();
        for l in &self.layers {
            out.extend([&l.fwd.wx, &l.fwd.wh, &l.fwd.b, &l.bwd.wx, &l.bwd.wh, &l.bwd.b]);
        }
        out.push(&self.dense_w);
        out.push(&self.dense_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = self.embeddings.values_mut().collect();
        for l in &mut self.layers {
            out.extend([
                &mut l.fwd.wx,
                &mut l.fwd.wh,
                &mut l.fwd.b,
                &mut l.bwd.wx,
                &mut l.bwd.wh,
                &mut l.bwd.b,
            ]);
        }
        out.push(&mut self.dense_w);
        out.push(&mut self.dense_b);
        out
    }

    /// Mean token cross-entropy over `batch` plus the regularization
    /// penalty, and its gradient. `masks` supplies one dropout mask per
    /// sentence; `None` disables dropout.
    pub fn loss_and_grads(
        &self,
        batch: &[&FeaturizedSentence],
        masks: Option<Vec<Array2<f64>>>,
    ) -> Result<(f64, f64, Vec<Array2<f64>>), ModelError> {
        let n_tokens: usize = batch.iter().map(|s| s.len()).sum();
        if n_tokens == 0 {
            return Err(ModelError::EmptyInput);
        }
        let scale = 1.0 / n_tokens as f64;
        let mut grads = self.zero_grads();
        let n_emb = self.embeddings.len();
        let n_layer_params = 6 * self.layers.len();
        let dense_w_idx = n_emb + n_layer_params;
        let mut data_loss = 0.0;
        let mut masks = masks.map(|m| m.into_iter());

        for s in batch {
            let mask = masks.as_mut().and_then(|m| m.next());
            let fw = self.forward(s, mask)?;
            let mut dlogits = Array2::zeros((s.len(), 1));
            for (t, (&z, &y)) in fw.logits.iter().zip(&s.labels).enumerate() {
                let y = y as f64;
                data_loss += bce_with_logit(z, y) * scale;
                dlogits[[t, 0]] = (sigmoid(z) - y) * scale;
            }
            grads[dense_w_idx] += &fw.top.t().dot(&dlogits);
            grads[dense_w_idx + 1] += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
            let mut d = dlogits.dot(&self.dense_w.t());
            for (li, layer) in self.layers.iter().enumerate().rev() {
                let need_dx = li > 0 || n_emb > 0;
                let (dx, gf, gb) = layer.backward(&fw.caches[li], d.view(), need_dx);
                let base = n_emb + 6 * li;
                for (k, g) in [gf.wx, gf.wh, gf.b, gb.wx, gb.wh, gb.b].into_iter().enumerate() {
                    grads[base + k] += &g;
                }
                match dx {
                    Some(dx) => d = dx,
                    None => break,
                }
            }
            if n_emb == 0 {
                continue;
            }
            if let Some(m) = &fw.mask {
                d *= m;
            }
            for (ei, kind) in self.embeddings.keys().enumerate() {
                let slot = self.slots.iter().find(|sl| sl.kind == *kind).expect("slot per table");
                let idx = &s.indices[kind];
                let table_rows = grads[ei].nrows();
                for (t, &i) in idx.iter().enumerate() {
                    let i = i.min(table_rows - 1);
                    let src = d.slice(s![t, slot.offset..slot.offset + slot.dim]);
                    let mut dst = grads[ei].row_mut(i);
                    dst += &src;
                }
            }
        }

        let mut penalty = 0.0;
        for li in 0..self.layers.len() {
            let base = n_emb + 6 * li;
            let layer = &self.layers[li];
            penalty += nn::l1l2_penalty(&layer.fwd.wx, &mut grads[base], self.config.l1, self.config.l2);
            penalty += nn::l1l2_penalty(&layer.bwd.wx, &mut grads[base + 3], self.config.l1, self.config.l2);
        }
        Ok((data_loss, penalty, grads))
    }

    fn sample_masks<R: Rng>(&self, batch: &[&FeaturizedSentence], rng: &mut R) -> Option<Vec<Array2<f64>>> {
        (self.config.dropout > 0.0).then(|| {
            batch
                .iter()
                .map(|s| dropout_mask(rng, (s.len(), self.input_dim), self.config.dropout))
                .collect()
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.optimizer.learning_rate = lr;
        self.optimizer.config.learning_rate = lr;
    }

    pub fn optimizer_config(&self) -> AdamConfig {
        self.config.optimizer
    }
}

impl TokenClassifier for RnnModel {
    fn predict_proba(&self, s: &FeaturizedSentence) -> Result<Vec<f64>, ModelError> {
        if s.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        Ok(self.forward(s, None)?.logits.into_iter().map(sigmoid).collect())
    }

    fn is_fitted(&self) -> bool {
        self.steps > 0
    }
}

impl Trainable for RnnModel {
    fn train_epoch<R: Rng>(&mut self, data: &[FeaturizedSentence], order: &[usize], rng: &mut R) -> Result<f64, ModelError> {
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&FeaturizedSentence> = chunk.iter().map(|&i| &data[i]).collect();
            let masks = self.sample_masks(&batch, rng);
            let (loss, penalty, grads) = self.loss_and_grads(&batch, masks)?;
            if !(loss + penalty).is_finite() {
                return Err(ModelError::Diverged(loss + penalty));
            }
            let mut opt = std::mem::take(&mut self.optimizer);
            opt.config = self.config.optimizer;
            opt.update(&mut self.params_mut(), &grads);
            self.optimizer = opt;
            self.steps += 1;
            total += loss;
            batches += 1;
        }
        Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
    }
}
