use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeaturizeError};
use crate::corpus::{Dataset, Token};

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;
const RESERVED: [&str; 2] = ["<pad>", "<unk>"];

/// Dense string-to-index map for a categorical feature. Index 0 is padding,
/// index 1 is the unknown entry, observed values follow in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub kind: FeatureKind,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn from_values<'a>(kind: FeatureKind, values: impl IntoIterator<Item = &'a str>) -> Self {
        let distinct: BTreeSet<&str> = values.into_iter().collect();
        let index = distinct
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v.to_string(), i + RESERVED.len()))
            .collect();
        Vocabulary { kind, index }
    }

    /// Total size including the two reserved entries.
    pub fn len(&self) -> usize {
        self.index.len() + RESERVED.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Number of observed values (excluding reserved entries).
    pub fn value_count(&self) -> usize {
        self.index.len()
    }

    /// Unseen values map to [`UNK_INDEX`].
    pub fn lookup(&self, value: &str) -> usize {
        self.index.get(value).copied().unwrap_or(UNK_INDEX)
    }

    pub fn contains(&self, value: &str) -> bool {
        self.index.contains_key(value)
    }

    /// Entries in index order, reserved names first.
    pub fn entries(&self) -> Vec<&str> {
        let mut out = vec![""; self.len()];
        out[..RESERVED.len()].copy_from_slice(&RESERVED);
        for (v, &i) in &self.index {
            out[i] = v;
        }
        out
    }

    /// One entry per line, in index order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in self.entries() {
            writeln!(w, "{e}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(kind: FeatureKind, r: R) -> std::io::Result<Self> {
        let mut index = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i < RESERVED.len() {
                continue;
            }
            index.insert(line, i);
        }
        Ok(Vocabulary { kind, index })
    }

    /// Value of `kind` carried by a token.
    pub fn token_value(kind: FeatureKind, token: &Token) -> Option<&str> {
        match kind {
            FeatureKind::W => Some(&token.text),
            FeatureKind::P => Some(&token.pos_simple),
            FeatureKind::T => Some(&token.pos_detailed),
            FeatureKind::D => Some(&token.dep_rel),
            FeatureKind::E => Some(&token.entity_tag),
            _ => None,
        }
    }
}

/// Vocabulary over one of the tag columns (P, T, D or E).
pub fn build_tag_vocab(dataset: &Dataset, kind: FeatureKind) -> Result<Vocabulary, FeaturizeError> {
    if !kind.is_tag() {
        return Err(FeaturizeError::NotCategorical(kind));
    }
    Ok(build_vocab(dataset, kind))
}

/// Vocabulary over token texts (W).
pub fn build_word_vocab(dataset: &Dataset) -> Vocabulary {
    build_vocab(dataset, FeatureKind::W)
}

fn build_vocab(dataset: &Dataset, kind: FeatureKind) -> Vocabulary {
    Vocabulary::from_values(
        kind,
        dataset
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter())
            .filter_map(|t| Vocabulary::token_value(kind, t)),
    )
}
