//! Ingest adapter for external taggers: turns raw tokens plus gold labels
//! into corpus sentences with the P/T/D/E columns filled in.

use std::collections::HashMap;

use super::FeaturizeError;
use crate::corpus::{is_valid_entity_tag, Label, Sentence, Token};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenTags {
    pub pos_simple: String,
    pub pos_detailed: String,
    pub dep_rel: String,
    pub entity_tag: String,
}

pub trait TaggerProvider: Send + Sync {
    fn name(&self) -> &str;

    /// One tag row per input token.
    fn tag(&self, tokens: &[&str]) -> Result<Vec<TokenTags>, FeaturizeError>;
}

pub fn ingest_sentence(
    tagger: &dyn TaggerProvider,
    id: impl Into<String>,
    tokens: &[&str],
    labels: &[Label],
    source_date: Option<String>,
) -> Result<Sentence, FeaturizeError> {
    if tokens.len() != labels.len() {
        return Err(FeaturizeError::LengthMismatch {
            expected: tokens.len(),
            got: labels.len(),
        });
    }
    let tags = tagger.tag(tokens)?;
    if tags.len() != tokens.len() {
        return Err(FeaturizeError::LengthMismatch {
            expected: tokens.len(),
            got: tags.len(),
        });
    }
    let tokens = tokens
        .iter()
        .zip(labels)
        .zip(tags)
        .map(|((text, &label), tags)| {
            if !is_valid_entity_tag(&tags.entity_tag) {
                return Err(FeaturizeError::Provider(format!(
                    "{} produced invalid entity tag {:?}",
                    tagger.name(),
                    tags.entity_tag
                )));
            }
            Ok(Token {
                text: text.to_string(),
                label,
                pos_simple: tags.pos_simple,
                pos_detailed: tags.pos_detailed,
                dep_rel: tags.dep_rel,
                entity_tag: tags.entity_tag,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Sentence {
        id: id.into(),
        tokens,
        source_date,
    })
}

/// Dictionary-backed tagger: known words get their listed tags, everything
/// else a fixed fallback row.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    entries: HashMap<String, TokenTags>,
    fallback: TokenTags,
}

impl LexiconTagger {
    pub fn new(fallback: TokenTags) -> Self {
        LexiconTagger {
            entries: HashMap::new(),
            fallback,
        }
    }

    pub fn insert(&mut self, word: impl Into<String>, tags: TokenTags) {
        self.entries.insert(word.into(), tags);
    }
}

impl TaggerProvider for LexiconTagger {
    fn name(&self) -> &str {
        "lexicon"
    }

    fn tag(&self, tokens: &[&str]) -> Result<Vec<TokenTags>, FeaturizeError> {
        Ok(tokens
            .iter()
            .map(|t| self.entries.get(*t).unwrap_or(&self.fallback).clone())
            .collect())
    }
}
