//! Per-token feature extraction.
//!
//! Categorical kinds (W, P, T, D, E) become vocabulary indices that feed
//! trainable embedding tables inside the models. Frozen kinds (Sp, B, S)
//! come from a [`ContextualEncoderProvider`], optionally through an on-disk
//! [`FeatureCache`]. `Po` is the token's position and is only meaningful to
//! the windowed CNN.

mod cache;
mod embeddings;
mod encoder;
mod kind;
mod tagger;
mod vocab;

pub use cache::{escape_id, token_fingerprint, FeatureCache};
pub use embeddings::{StaticEmbeddings, OOV_INIT_RANGE};
pub use encoder::{
    align_subwords_mean, sentence_embedding, sentence_embedding_of, ContextualEncoderProvider,
    ContextualVectors, HashedContextEncoder,
};
pub use kind::{
    concat_dim, parse_feature_expr, FeatureKind, FeatureSet, CONTEXT_DIM, SPACY_DIM, TAG_DIM,
    WORD_DIM,
};
pub use tagger::{ingest_sentence, LexiconTagger, TaggerProvider, TokenTags};
pub use vocab::{build_tag_vocab, build_word_vocab, Vocabulary, PAD_INDEX, UNK_INDEX};

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, Sentence};

#[derive(Debug, Error)]
pub enum FeaturizeError {
    #[error("unknown feature kind {0:?}")]
    UnknownKind(String),
    #[error("malformed feature expression {0:?} (expected `all`, `all-{{K,...}}` or `{{K,...}}`)")]
    BadExpr(String),
    #[error("feature expression resolves to an empty set")]
    EmptyFeatureSet,
    #[error("feature kind {0} is not a tag column")]
    NotCategorical(FeatureKind),
    #[error("no provider registered for feature kind {0}")]
    MissingProvider(FeatureKind),
    #[error("no vocabulary for feature kind {0}")]
    MissingVocabulary(FeatureKind),
    #[error("provider returned {got} rows for {expected} tokens")]
    LengthMismatch { expected: usize, got: usize },
    #[error("vector dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("token {0} has no aligned subword vectors")]
    UnalignedToken(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("provider error: {0}")]
    Provider(String),
    #[error("feature cache: {0}")]
    Cache(String),
    #[error("embeddings: {0}")]
    Embeddings(String),
}

/// Encoder construction parameters as they appear in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum EncoderSpec {
    Hashed {
        #[serde(default = "default_radius")]
        radius: usize,
        #[serde(default = "default_spacy_radius")]
        spacy_radius: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_radius() -> usize {
    2
}

fn default_spacy_radius() -> usize {
    1
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::Hashed {
            radius: default_radius(),
            spacy_radius: default_spacy_radius(),
            seed: 0,
        }
    }
}

impl EncoderSpec {
    pub fn build(&self) -> Arc<dyn ContextualEncoderProvider> {
        match *self {
            EncoderSpec::Hashed {
                radius,
                spacy_radius,
                seed,
            } => Arc::new(HashedContextEncoder::new(radius, spacy_radius, seed)),
        }
    }
}

/// Providers available to featurization.
#[derive(Clone, Default)]
pub struct ProviderRegistry {
    pub encoder: Option<Arc<dyn ContextualEncoderProvider>>,
    pub cache: Option<FeatureCache>,
}

impl std::fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderRegistry")
            .field("encoder", &self.encoder.as_ref().map(|e| e.name().to_string()))
            .field("cache", &self.cache)
            .finish()
    }
}

impl ProviderRegistry {
    pub fn with_encoder(encoder: Arc<dyn ContextualEncoderProvider>) -> Self {
        ProviderRegistry {
            encoder: Some(encoder),
            cache: None,
        }
    }

    pub fn cached(mut self, cache: FeatureCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Contextual vectors for a sentence, served from the cache when possible.
    pub fn contextual(&self, s: &Sentence, missing: FeatureKind) -> Result<ContextualVectors, FeaturizeError> {
        let enc = self
            .encoder
            .as_ref()
            .ok_or(FeaturizeError::MissingProvider(missing))?;
        let texts = s.texts();
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(enc.name(), &s.id, &texts)) {
            return Ok(hit);
        }
        let v = enc.encode(&texts)?;
        for rows in [v.token.nrows(), v.spacy.nrows()] {
            if rows != texts.len() {
                return Err(FeaturizeError::LengthMismatch {
                    expected: texts.len(),
                    got: rows,
                });
            }
        }
        if v.token.ncols() != CONTEXT_DIM {
            return Err(FeaturizeError::DimensionMismatch {
                expected: CONTEXT_DIM,
                got: v.token.ncols(),
            });
        }
        if v.spacy.ncols() != SPACY_DIM {
            return Err(FeaturizeError::DimensionMismatch {
                expected: SPACY_DIM,
                got: v.spacy.ncols(),
            });
        }
        if let Some(cache) = &self.cache {
            cache.put(enc.name(), &s.id, &texts, &v)?;
        }
        Ok(v)
    }
}

pub type Vocabs = BTreeMap<FeatureKind, Vocabulary>;

/// Builds vocabularies for every categorical kind in `kinds` from `train`.
pub fn build_vocabs(train: &Dataset, kinds: &FeatureSet) -> Vocabs {
    kinds
        .iter()
        .filter(|k| k.categorical())
        .map(|k| {
            let v = if k == FeatureKind::W {
                build_word_vocab(train)
            } else {
                build_tag_vocab(train, k).expect("tag kind")
            };
            (k, v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureValue {
    /// Row of a trainable embedding table (or the token position for `Po`).
    Index(usize),
    Vector(Vec<f64>),
}

/// Features of one token.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle(pub BTreeMap<FeatureKind, FeatureValue>);

impl FeatureBundle {
    pub fn get(&self, kind: FeatureKind) -> Option<&FeatureValue> {
        self.0.get(&kind)
    }
}

/// Column-oriented features of one sentence, the form models consume.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedSentence {
    pub id: String,
    pub labels: Vec<u8>,
    /// W/P/T/D/E vocabulary indices, and token positions for `Po`.
    pub indices: BTreeMap<FeatureKind, Vec<usize>>,
    /// Sp/B/S rows, one per token.
    pub dense: BTreeMap<FeatureKind, Array2<f64>>,
}

impl FeaturizedSentence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn bundles(&self) -> Vec<FeatureBundle> {
        (0..self.len())
            .map(|i| {
                let mut map = BTreeMap::new();
                for (&k, idx) in &self.indices {
                    map.insert(k, FeatureValue::Index(idx[i]));
                }
                for (&k, m) in &self.dense {
                    map.insert(k, FeatureValue::Vector(m.row(i).to_vec()));
                }
                FeatureBundle(map)
            })
            .collect()
    }
}

/// Featurizes one sentence into column form.
pub fn featurize_columns(
    s: &Sentence,
    kinds: &FeatureSet,
    providers: &ProviderRegistry,
    vocabs: &Vocabs,
) -> Result<FeaturizedSentence, FeaturizeError> {
    if s.is_empty() {
        return Err(FeaturizeError::EmptyInput);
    }
    let mut indices = BTreeMap::new();
    let mut dense = BTreeMap::new();
    let mut contextual = None;
    for kind in kinds.iter() {
        match kind {
            FeatureKind::W | FeatureKind::P | FeatureKind::T | FeatureKind::D | FeatureKind::E => {
                let vocab = vocabs.get(&kind).ok_or(FeaturizeError::MissingVocabulary(kind))?;
                let idx = s
                    .tokens
                    .iter()
                    .map(|t| vocab.lookup(Vocabulary::token_value(kind, t).expect("categorical")))
                    .collect();
                indices.insert(kind, idx);
            }
            FeatureKind::Po => {
                indices.insert(kind, (0..s.len()).collect());
            }
            FeatureKind::Sp | FeatureKind::B | FeatureKind::S => {
                if contextual.is_none() {
                    contextual = Some(providers.contextual(s, kind)?);
                }
                let cv = contextual.as_ref().expect("just computed");
                let m = match kind {
                    FeatureKind::Sp => cv.spacy.clone(),
                    FeatureKind::B => cv.token.clone(),
                    _ => {
                        let sum = sentence_embedding(cv.token.view())?;
                        let mut m = Array2::zeros((s.len(), sum.len()));
                        for mut row in m.rows_mut() {
                            row.assign(&sum);
                        }
                        m
                    }
                };
                dense.insert(kind, m);
            }
        }
    }
    Ok(FeaturizedSentence {
        id: s.id.clone(),
        labels: s.labels(),
        indices,
        dense,
    })
}

/// One [`FeatureBundle`] per token of `s`.
pub fn featurize_sentence(
    s: &Sentence,
    kinds: &FeatureSet,
    providers: &ProviderRegistry,
    vocabs: &Vocabs,
) -> Result<Vec<FeatureBundle>, FeaturizeError> {
    Ok(featurize_columns(s, kinds, providers, vocabs)?.bundles())
}

/// Feature set, providers and train-split vocabularies bundled together.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub kinds: FeatureSet,
    pub providers: ProviderRegistry,
    pub vocabs: Vocabs,
}

impl Featurizer {
    pub fn fit(train: &Dataset, kinds: FeatureSet, providers: ProviderRegistry) -> Self {
        let vocabs = build_vocabs(train, &kinds);
        Featurizer {
            kinds,
            providers,
            vocabs,
        }
    }

    pub fn featurize(&self, s: &Sentence) -> Result<FeaturizedSentence, FeaturizeError> {
        featurize_columns(s, &self.kinds, &self.providers, &self.vocabs)
    }

    /// Featurizes sentences in parallel; output order follows input order.
    pub fn featurize_all(&self, sentences: &[Sentence]) -> Result<Vec<FeaturizedSentence>, FeaturizeError> {
        sentences.par_iter().map(|s| self.featurize(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, Partition, Token};

    fn sentence() -> Sentence {
        Sentence {
            id: "s1".into(),
            tokens: ["Workers", "strike", "today"]
                .iter()
                .map(|t| Token::plain(*t, Label::NonTrigger))
                .collect(),
            source_date: None,
        }
    }

    fn registry() -> ProviderRegistry {
        ProviderRegistry::with_encoder(Arc::new(HashedContextEncoder::default()))
    }

    #[test]
    fn bundle_shapes() {
        let s = sentence();
        let kinds = parse_feature_expr("{B}").unwrap();
        let b = featurize_sentence(&s, &kinds, &registry(), &Vocabs::new()).unwrap();
        assert_eq!(b.len(), 3);
        for bundle in &b {
            assert_eq!(bundle.0.len(), 1);
            match bundle.get(FeatureKind::B).unwrap() {
                FeatureValue::Vector(v) => assert_eq!(v.len(), 768),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn sentence_vector_shared_by_tokens() {
        let s = sentence();
        let kinds = parse_feature_expr("{B,S}").unwrap();
        let f = featurize_columns(&s, &kinds, &registry(), &Vocabs::new()).unwrap();
        let sv = &f.dense[&FeatureKind::S];
        let expected = sentence_embedding(f.dense[&FeatureKind::B].view()).unwrap();
        for row in sv.rows() {
            assert_eq!(row, expected);
        }
    }

    #[test]
    fn categorical_and_missing_providers() {
        let s = sentence();
        let ds = Dataset::new(vec![s.clone()], Partition::Trainval);
        let kinds = parse_feature_expr("{W,P,Po}").unwrap();
        let vocabs = build_vocabs(&ds, &kinds);
        assert_eq!(vocabs.len(), 2);
        let f = featurize_columns(&s, &kinds, &ProviderRegistry::default(), &vocabs).unwrap();
        assert_eq!(f.indices[&FeatureKind::Po], vec![0, 1, 2]);
        assert!(f.indices[&FeatureKind::W].iter().all(|&i| i >= 2));

        let kinds = parse_feature_expr("{B}").unwrap();
        assert!(matches!(
            featurize_columns(&s, &kinds, &ProviderRegistry::default(), &vocabs),
            Err(FeaturizeError::MissingProvider(FeatureKind::B))
        ));
        let kinds = parse_feature_expr("{E}").unwrap();
        assert!(matches!(
            featurize_columns(&s, &kinds, &ProviderRegistry::default(), &vocabs),
            Err(FeaturizeError::MissingVocabulary(FeatureKind::E))
        ));
    }

    struct ShortEncoder;
    impl ContextualEncoderProvider for ShortEncoder {
        fn name(&self) -> &str {
            "short"
        }
        fn encode(&self, _tokens: &[&str]) -> Result<ContextualVectors, FeaturizeError> {
            Ok(ContextualVectors {
                token: Array2::zeros((1, CONTEXT_DIM)),
                spacy: Array2::zeros((1, SPACY_DIM)),
            })
        }
    }

    #[test]
    fn provider_length_mismatch() {
        let reg = ProviderRegistry::with_encoder(Arc::new(ShortEncoder));
        let kinds = parse_feature_expr("{Sp}").unwrap();
        assert!(matches!(
            featurize_columns(&sentence(), &kinds, &reg, &Vocabs::new()),
            Err(FeaturizeError::LengthMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn cache_hit_equals_fresh_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let reg = registry().cached(FeatureCache::new(dir.path()));
        let kinds = parse_feature_expr("{Sp,B,S}").unwrap();
        let a = featurize_columns(&sentence(), &kinds, &reg, &Vocabs::new()).unwrap();
        let b = featurize_columns(&sentence(), &kinds, &reg, &Vocabs::new()).unwrap();
        let fresh = featurize_columns(&sentence(), &kinds, &registry(), &Vocabs::new()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, fresh);
    }
}
