use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{self, bce_with_logit, clip_row_norms, dropout_mask, glorot_uniform, sigmoid, Adam, AdamConfig};
use super::window::{check_window, windows_for_len, WindowInstance};
use super::{ModelError, TokenClassifier, Trainable};
use crate::featurize::{FeatureKind, FeatureSet, FeaturizedSentence, StaticEmbeddings, Vocabs, PAD_INDEX, WORD_DIM};

pub const DEFAULT_FILTER_SIZES: [usize; 4] = [2, 3, 4, 5];
const EMB_INIT_RANGE: f64 = 0.05;

fn default_filters() -> usize {
    150
}
fn default_dropout() -> f64 {
    0.5
}
fn default_norm_cap() -> f64 {
    3.0
}
fn default_batch() -> usize {
    50
}
fn default_side_dim() -> usize {
    50
}
fn default_true() -> bool {
    true
}

/// Windowed convolutional baseline. Each window column is the word
/// embedding, optionally followed by entity and relative-position embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnConfig {
    pub window: usize,
    #[serde(default = "default_filters")]
    pub filters_per_size: usize,
    /// Convolution widths; when omitted, the default widths that fit the
    /// window (or `[1]` for a one-token window).
    #[serde(default)]
    pub filter_sizes: Option<Vec<usize>>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Max Euclidean norm of every embedding row, enforced after each step.
    #[serde(default = "default_norm_cap")]
    pub norm_cap: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_side_dim")]
    pub entity_dim: usize,
    #[serde(default = "default_side_dim")]
    pub position_dim: usize,
    #[serde(default = "default_true")]
    pub use_entity: bool,
    /// Forced off for one-token windows when left unset.
    #[serde(default)]
    pub use_position: Option<bool>,
    #[serde(default)]
    pub optimizer: AdamConfig,
}

impl CnnConfig {
    pub fn new(window: usize) -> Self {
        CnnConfig {
            window,
            filters_per_size: default_filters(),
            filter_sizes: None,
            dropout: default_dropout(),
            norm_cap: default_norm_cap(),
            batch_size: default_batch(),
            entity_dim: default_side_dim(),
            position_dim: default_side_dim(),
            use_entity: true,
            use_position: None,
            optimizer: AdamConfig::default(),
        }
    }

    /// Configuration matching a feature set such as `{W,E,Po}`.
    pub fn from_features(window: usize, features: &FeatureSet) -> Result<Self, ModelError> {
        if !features.contains(FeatureKind::W) {
            return Err(ModelError::Config("the CNN always takes the word feature W".into()));
        }
        if let Some(k) = features
            .iter()
            .find(|k| !matches!(k, FeatureKind::W | FeatureKind::E | FeatureKind::Po))
        {
            return Err(ModelError::Config(format!("the CNN does not take feature {k}")));
        }
        let mut c = CnnConfig::new(window);
        c.use_entity = features.contains(FeatureKind::E);
        c.use_position = Some(features.contains(FeatureKind::Po));
        Ok(c)
    }

    pub fn uses_position(&self) -> bool {
        self.use_position.unwrap_or(self.window > 1)
    }

    pub fn sizes(&self) -> Vec<usize> {
        match &self.filter_sizes {
            Some(v) => v.clone(),
            None => {
                let fit: Vec<usize> = DEFAULT_FILTER_SIZES.iter().copied().filter(|&k| k <= self.window).collect();
                if fit.is_empty() {
                    vec![1]
                } else {
                    fit
                }
            }
        }
    }

    pub fn feature_set(&self) -> FeatureSet {
        let mut kinds = vec![FeatureKind::W];
        if self.use_entity {
            kinds.push(FeatureKind::E);
        }
        if self.uses_position() {
            kinds.push(FeatureKind::Po);
        }
        FeatureSet::new(kinds).expect("non-empty")
    }

    /// Width of one window column.
    pub fn token_width(&self) -> usize {
        WORD_DIM
            + if self.use_entity { self.entity_dim } else { 0 }
            + if self.uses_position() { self.position_dim } else { 0 }
    }

    pub fn total_filters(&self) -> usize {
        self.filters_per_size * self.sizes().len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check_window(self.window)?;
        if self.window == 1 && self.uses_position() {
            return Err(ModelError::Config("a one-token window has no position feature".into()));
        }
        let sizes = self.sizes();
        if sizes.is_empty() || sizes.contains(&0) || self.filters_per_size == 0 {
            return Err(ModelError::Config("filter sizes and counts must be positive".into()));
        }
        if let Some(&k) = sizes.iter().find(|&&k| k > self.window) {
            return Err(ModelError::Config(format!(
                "filter wider than window ({k} > {})",
                self.window
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) || self.batch_size == 0 || self.norm_cap <= 0.0 {
            return Err(ModelError::Config("invalid dropout, batch size or norm cap".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConvBank {
    width: usize,
    /// `width * token_width x filters`
    kernel: Array2<f64>,
    bias: Array2<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnnModel {
    pub config: CnnConfig,
    word_emb: Array2<f64>,
    ent_emb: Option<Array2<f64>>,
    pos_emb: Option<Array2<f64>>,
    banks: Vec<ConvBank>,
    dense_w: Array2<f64>,
    dense_b: Array2<f64>,
    steps: u64,
    #[serde(skip)]
    optimizer: Adam,
}

/// Vocabulary indices feeding one window.
struct Inst {
    words: Vec<usize>,
    ents: Vec<usize>,
    label: f64,
}

struct BankPass {
    im2col: Array2<f64>,
    act: Array2<f64>,
    argmax: Vec<usize>,
}

impl CnnModel {
    pub fn build<R: Rng>(
        config: CnnConfig,
        vocabs: &Vocabs,
        pretrained: Option<&StaticEmbeddings>,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let wv = vocabs.get(&FeatureKind::W).ok_or(ModelError::MissingVocabulary(FeatureKind::W))?;
        let word_emb = pretrained.cloned().unwrap_or_default().table_for(wv, WORD_DIM, rng);
        let ent_emb = if config.use_entity {
            let ev = vocabs.get(&FeatureKind::E).ok_or(ModelError::MissingVocabulary(FeatureKind::E))?;
            Some(nn::uniform(rng, (ev.len(), config.entity_dim), EMB_INIT_RANGE))
        } else {
            None
        };
        let pos_emb = config
            .uses_position()
            .then(|| nn::uniform(rng, (config.window, config.position_dim), EMB_INIT_RANGE));
        let d = config.token_width();
        let banks = config
            .sizes()
            .into_iter()
            .map(|width| ConvBank {
                width,
                kernel: glorot_uniform(rng, width * d, config.filters_per_size),
                bias: Array2::zeros((1, config.filters_per_size)),
            })
            .collect();
        let total = config.total_filters();
        let mut model = CnnModel {
            dense_w: glorot_uniform(rng, total, 1),
            dense_b: Array2::zeros((1, 1)),
            optimizer: Adam::new(config.optimizer),
            config,
            word_emb,
            ent_emb,
            pos_emb,
            banks,
            steps: 0,
        };
        model.apply_norm_cap();
        Ok(model)
    }

    /// Number of feature maps after max-pooling.
    pub fn feature_maps(&self) -> usize {
        self.dense_w.nrows()
    }

    pub fn token_width(&self) -> usize {
        self.config.token_width()
    }

    /// Embedding tables in `word, entity, position` order.
    pub fn embedding_tables(&self) -> Vec<&Array2<f64>> {
        let mut v = vec![&self.word_emb];
        v.extend(self.ent_emb.iter());
        v.extend(self.pos_emb.iter());
        v
    }

    fn apply_norm_cap(&mut self) {
        let cap = self.config.norm_cap;
        clip_row_norms(&mut self.word_emb, cap);
        if let Some(t) = &mut self.ent_emb {
            clip_row_norms(t, cap);
        }
        if let Some(t) = &mut self.pos_emb {
            clip_row_norms(t, cap);
        }
    }

    pub fn windows(&self, s: &FeaturizedSentence) -> Result<Vec<WindowInstance>, ModelError> {
        windows_for_len(s.len(), self.config.window)
    }

    fn instances(&self, s: &FeaturizedSentence) -> Result<Vec<Inst>, ModelError> {
        let words = s.indices.get(&FeatureKind::W).ok_or(ModelError::MissingFeature(FeatureKind::W))?;
        let ents = if self.config.use_entity {
            Some(s.indices.get(&FeatureKind::E).ok_or(ModelError::MissingFeature(FeatureKind::E))?)
        } else {
            None
        };
        Ok(self
            .windows(s)?
            .into_iter()
            .map(|w| Inst {
                words: w.slots.iter().map(|o| o.map_or(PAD_INDEX, |i| words[i])).collect(),
                ents: match ents {
                    Some(e) => w.slots.iter().map(|o| o.map_or(PAD_INDEX, |i| e[i])).collect(),
                    None => Vec::new(),
                },
                label: s.labels[w.center] as f64,
            })
            .collect())
    }

    /// Window columns, `window x token_width`.
    fn columns(&self, inst: &Inst) -> Array2<f64> {
        let w = self.config.window;
        let mut c = Array2::zeros((w, self.token_width()));
        for j in 0..w {
            let mut row = c.row_mut(j);
            let wi = inst.words[j].min(self.word_emb.nrows() - 1);
            row.slice_mut(s![..WORD_DIM]).assign(&self.word_emb.row(wi));
            let mut off = WORD_DIM;
            if let Some(t) = &self.ent_emb {
                let ei = inst.ents[j].min(t.nrows() - 1);
                row.slice_mut(s![off..off + t.ncols()]).assign(&t.row(ei));
                off += t.ncols();
            }
            if let Some(t) = &self.pos_emb {
                row.slice_mut(s![off..off + t.ncols()]).assign(&t.row(j));
            }
        }
        c
    }

    fn bank_forward(&self, bank: &ConvBank, cols: &[Array2<f64>]) -> BankPass {
        let d = self.token_width();
        let l = self.config.window - bank.width + 1;
        let mut im2col = Array2::zeros((cols.len() * l, bank.width * d));
        for (n, c) in cols.iter().enumerate() {
            let flat = c.as_slice().expect("standard layout");
            for p in 0..l {
                let src = &flat[p * d..(p + bank.width) * d];
                im2col
                    .row_mut(n * l + p)
                    .as_slice_mut()
                    .expect("standard layout")
                    .copy_from_slice(src);
            }
        }
        let act = (im2col.dot(&bank.kernel) + &bank.bias).mapv(f64::tanh);
        let f = bank.kernel.ncols();
        let mut argmax = vec![0; cols.len() * f];
        for n in 0..cols.len() {
            for k in 0..f {
                let mut best = n * l;
                for p in 1..l {
                    if act[[n * l + p, k]] > act[[best, k]] {
                        best = n * l + p;
                    }
                }
                argmax[n * f + k] = best;
            }
        }
        BankPass { im2col, act, argmax }
    }

    fn pooled(&self, passes: &[BankPass], n: usize) -> Array2<f64> {
        let mut pooled = Array2::zeros((n, self.feature_maps()));
        let mut off = 0;
        for pass in passes {
            let f = pass.act.ncols();
            for i in 0..n {
                for k in 0..f {
                    pooled[[i, off + k]] = pass.act[[pass.argmax[i * f + k], k]];
                }
            }
            off += f;
        }
        pooled
    }

    fn logits(&self, insts: &[Inst]) -> Vec<f64> {
        let cols: Vec<_> = insts.iter().map(|i| self.columns(i)).collect();
        let passes: Vec<_> = self.banks.iter().map(|b| self.bank_forward(b, &cols)).collect();
        let pooled = self.pooled(&passes, insts.len());
        (pooled.dot(&self.dense_w) + &self.dense_b).column(0).to_vec()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.word_emb];
        out.extend(self.ent_emb.iter_mut());
        out.extend(self.pos_emb.iter_mut());
        for b in &mut self.banks {
            out.push(&mut b.kernel);
            out.push(&mut b.bias);
        }
        out.push(&mut self.dense_w);
        out.push(&mut self.dense_b);
        out
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.word_emb];
        out.extend(self.ent_emb.iter());
        out.extend(self.pos_emb.iter());
        for b in &self.banks {
            out.push(&b.kernel);
            out.push(&b.bias);
        }
        out.push(&self.dense_w);
        out.push(&self.dense_b);
        out
    }

    /// Mean cross-entropy over the window instances and its gradient.
    fn loss_and_grads(&self, insts: &[Inst], mask: Option<&Array2<f64>>) -> (f64, Vec<Array2<f64>>) {
        let n = insts.len();
        let scale = 1.0 / n as f64;
        let d = self.token_width();
        let cols: Vec<_> = insts.iter().map(|i| self.columns(i)).collect();
        let passes: Vec<_> = self.banks.iter().map(|b| self.bank_forward(b, &cols)).collect();
        let pooled = self.pooled(&passes, n);
        let dropped = match mask {
            Some(m) => &pooled * m,
            None => pooled,
        };
        let logits = dropped.dot(&self.dense_w) + &self.dense_b;

        let mut grads: Vec<Array2<f64>> = self.params().iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        let n_emb = 1 + self.ent_emb.is_some() as usize + self.pos_emb.is_some() as usize;
        let dense_idx = n_emb + 2 * self.banks.len();

        let mut loss = 0.0;
        let mut dlogit = Array2::zeros((n, 1));
        for (i, inst) in insts.iter().enumerate() {
            let z = logits[[i, 0]];
            loss += bce_with_logit(z, inst.label) * scale;
            dlogit[[i, 0]] = (sigmoid(z) - inst.label) * scale;
        }
        grads[dense_idx] = dropped.t().dot(&dlogit);
        grads[dense_idx + 1] = dlogit.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut dpool = dlogit.dot(&self.dense_w.t());
        if let Some(m) = mask {
            dpool *= m;
        }

        let mut dcols: Vec<Array2<f64>> = (0..n).map(|_| Array2::zeros((self.config.window, d))).collect();
        let mut off = 0;
        for (bi, (bank, pass)) in self.banks.iter().zip(&passes).enumerate() {
            let f = bank.kernel.ncols();
            let l = self.config.window - bank.width + 1;
            let mut dpre = Array2::zeros(pass.act.raw_dim());
            for i in 0..n {
                for k in 0..f {
                    let row = pass.argmax[i * f + k];
                    let a = pass.act[[row, k]];
                    dpre[[row, k]] = dpool[[i, off + k]] * (1.0 - a * a);
                }
            }
            grads[n_emb + 2 * bi] = pass.im2col.t().dot(&dpre);
            grads[n_emb + 2 * bi + 1] = dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dim2col = dpre.dot(&bank.kernel.t());
            for (i, dc) in dcols.iter_mut().enumerate() {
                let flat = dc.as_slice_mut().expect("standard layout");
                for p in 0..l {
                    let src = dim2col.row(i * l + p);
                    for (dst, v) in flat[p * d..(p + bank.width) * d].iter_mut().zip(src) {
                        *dst += v;
                    }
                }
            }
            off += f;
        }

        for (inst, dc) in insts.iter().zip(&dcols) {
            for j in 0..self.config.window {
                let row = dc.row(j);
                let wi = inst.words[j].min(self.word_emb.nrows() - 1);
                let mut g = grads[0].row_mut(wi);
                g += &row.slice(s![..WORD_DIM]);
                let mut o = WORD_DIM;
                let mut gi = 1;
                if let Some(t) = &self.ent_emb {
                    let ei = inst.ents[j].min(t.nrows() - 1);
                    let mut g = grads[gi].row_mut(ei);
                    g += &row.slice(s![o..o + t.ncols()]);
                    o += t.ncols();
                    gi += 1;
                }
                if let Some(t) = &self.pos_emb {
                    let mut g = grads[gi].row_mut(j);
                    g += &row.slice(s![o..o + t.ncols()]);
                }
            }
        }
        (loss, grads)
    }
}

impl TokenClassifier for CnnModel {
    fn predict_proba(&self, s: &FeaturizedSentence) -> Result<Vec<f64>, ModelError> {
        if s.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let insts = self.instances(s)?;
        Ok(self.logits(&insts).into_iter().map(sigmoid).collect())
    }

    fn is_fitted(&self) -> bool {
        self.steps > 0
    }
}

impl Trainable for CnnModel {
    fn train_epoch<R: Rng>(&mut self, data: &[FeaturizedSentence], order: &[usize], rng: &mut R) -> Result<f64, ModelError> {
        let mut insts = Vec::new();
        for &i in order {
            insts.extend(self.instances(&data[i])?);
        }
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in insts.chunks(self.config.batch_size) {
            let mask = (self.config.dropout > 0.0)
                .then(|| dropout_mask(rng, (chunk.len(), self.feature_maps()), self.config.dropout));
            let (loss, grads) = self.loss_and_grads(chunk, mask.as_ref());
            if !loss.is_finite() {
                return Err(ModelError::Diverged(loss));
            }
            let mut opt = std::mem::take(&mut self.optimizer);
            opt.config = self.config.optimizer;
            opt.update(&mut self.params_mut(), &grads);
            self.optimizer = opt;
            self.apply_norm_cap();
            self.steps += 1;
            total += loss;
            batches += 1;
        }
        Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{parse_feature_expr, Vocabulary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn vocabs() -> Vocabs {
        let mut v = Vocabs::new();
        v.insert(FeatureKind::W, Vocabulary::from_values(FeatureKind::W, ["a", "b", "c", "d"]));
        v.insert(FeatureKind::E, Vocabulary::from_values(FeatureKind::E, ["O", "B-GPE"]));
        v
    }

    fn sentence(n: usize) -> FeaturizedSentence {
        let mut indices = BTreeMap::new();
        indices.insert(FeatureKind::W, (0..n).map(|i| 2 + i % 4).collect());
        indices.insert(FeatureKind::E, (0..n).map(|i| 2 + i % 2).collect());
        indices.insert(FeatureKind::Po, (0..n).collect());
        FeaturizedSentence {
            id: "s".into(),
            labels: (0..n).map(|i| (i % 4 == 1) as u8).collect(),
            indices,
            dense: BTreeMap::new(),
        }
    }

    #[test]
    fn reference_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = CnnConfig::new(5);
        assert_eq!(cfg.token_width(), 400);
        assert_eq!(cfg.total_filters(), 600);
        assert_eq!(cfg.feature_set(), parse_feature_expr("{W,E,Po}").unwrap());
        let m = CnnModel::build(cfg, &vocabs(), None, &mut rng).unwrap();
        assert_eq!(m.feature_maps(), 600);
        let p = m.predict_proba(&sentence(1)).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn window_one_rules() {
        let mut cfg = CnnConfig::new(1);
        cfg.filter_sizes = Some(vec![2]);
        cfg.use_position = Some(false);
        let err = CnnModel::build(cfg, &vocabs(), None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(err.to_string().contains("filter wider than window"), "{err}");

        let cfg = CnnConfig::new(1);
        assert!(!cfg.uses_position());
        assert_eq!(cfg.sizes(), vec![1]);
        assert_eq!(cfg.token_width(), 350);
        let mut forced = CnnConfig::new(1);
        forced.use_position = Some(true);
        assert!(forced.validate().is_err());
        assert_eq!(CnnConfig::new(3).sizes(), vec![2, 3]);
    }

    #[test]
    fn feature_set_mapping() {
        let c = CnnConfig::from_features(11, &parse_feature_expr("{W,Po}").unwrap()).unwrap();
        assert!(!c.use_entity);
        assert_eq!(c.token_width(), 350);
        assert!(CnnConfig::from_features(11, &parse_feature_expr("{W,B}").unwrap()).is_err());
        assert!(CnnConfig::from_features(11, &parse_feature_expr("{E}").unwrap()).is_err());
    }

    #[test]
    fn norm_cap_holds_after_every_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cfg = CnnConfig::new(3);
        cfg.filters_per_size = 8;
        cfg.batch_size = 4;
        cfg.optimizer.learning_rate = 0.5;
        let mut m = CnnModel::build(cfg, &vocabs(), None, &mut rng).unwrap();
        let data = vec![sentence(6), sentence(9)];
        for _ in 0..5 {
            m.train_epoch(&data, &[0, 1], &mut rng).unwrap();
            for table in m.embedding_tables() {
                for row in table.rows() {
                    assert!(row.dot(&row).sqrt() <= 3.0 + 1e-6);
                }
            }
        }
        assert!(m.is_fitted());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut cfg = CnnConfig::new(3);
        cfg.filters_per_size = 3;
        cfg.entity_dim = 4;
        cfg.position_dim = 4;
        let m = CnnModel::build(cfg, &vocabs(), None, &mut rng).unwrap();
        let insts = m.instances(&sentence(4)).unwrap();
        let (_, grads) = m.loss_and_grads(&insts, None);
        let eps = 1e-6;
        let n_params = m.params().len();
        for _ in 0..12 {
            let pi = rng.random_range(0..n_params);
            let ei = rng.random_range(0..m.params()[pi].len());
            let analytic = grads[pi].as_slice().unwrap()[ei];
            let mut plus = m.clone();
            plus.params_mut()[pi].as_slice_mut().unwrap()[ei] += eps;
            let mut minus = m.clone();
            minus.params_mut()[pi].as_slice_mut().unwrap()[ei] -= eps;
            let numeric = (plus.loss_and_grads(&insts, None).0 - minus.loss_and_grads(&insts, None).0) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs());
            if denom > 1e-9 {
                assert!((analytic - numeric).abs() / denom < 1e-4, "param {pi}[{ei}]: {analytic} vs {numeric}");
            }
        }
    }
}
