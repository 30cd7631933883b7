use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FeaturizeError;

/// Per-token input features.
///
/// `W` static word embedding, `P` simplified POS, `T` detailed POS, `D`
/// dependency relation, `E` entity IOB+type, `Sp` frozen 96-d contextual
/// tensor, `B` contextual token embedding, `S` summed contextual sentence
/// embedding, `Po` relative position inside a CNN window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    W,
    P,
    T,
    D,
    E,
    Sp,
    B,
    S,
    Po,
}

pub const WORD_DIM: usize = 300;
pub const TAG_DIM: usize = 10;
pub const SPACY_DIM: usize = 96;
pub const CONTEXT_DIM: usize = 768;

impl FeatureKind {
    /// The eight kinds denoted by `all`. `Po` is CNN-only and never part of it.
    pub const ALL: [FeatureKind; 8] = [
        FeatureKind::W,
        FeatureKind::P,
        FeatureKind::T,
        FeatureKind::D,
        FeatureKind::E,
        FeatureKind::Sp,
        FeatureKind::B,
        FeatureKind::S,
    ];

    /// Width of this kind's vector; `Po` has no fixed width and returns `None`.
    pub fn dim(self) -> Option<usize> {
        use FeatureKind::*;
        match self {
            W => Some(WORD_DIM),
            P | T | D | E => Some(TAG_DIM),
            Sp => Some(SPACY_DIM),
            B | S => Some(CONTEXT_DIM),
            Po => None,
        }
    }

    /// Kinds whose parameters are learned (W is fine-tuned from pretrained weights).
    pub fn trainable(self) -> bool {
        !self.frozen()
    }

    pub fn frozen(self) -> bool {
        matches!(self, FeatureKind::Sp | FeatureKind::B | FeatureKind::S)
    }

    /// Kinds fed as vocabulary indices into embedding tables.
    pub fn categorical(self) -> bool {
        matches!(
            self,
            FeatureKind::W | FeatureKind::P | FeatureKind::T | FeatureKind::D | FeatureKind::E
        )
    }

    /// Tag-valued kinds (their vocabulary comes from token annotations).
    pub fn is_tag(self) -> bool {
        matches!(self, FeatureKind::P | FeatureKind::T | FeatureKind::D | FeatureKind::E)
    }

    pub fn symbol(self) -> &'static str {
        use FeatureKind::*;
        match self {
            W => "W",
            P => "P",
            T => "T",
            D => "D",
            E => "E",
            Sp => "Sp",
            B => "B",
            S => "S",
            Po => "Po",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for FeatureKind {
    type Err = FeaturizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use FeatureKind::*;
        Ok(match s {
            "W" => W,
            "P" => P,
            "T" => T,
            "D" => D,
            "E" => E,
            "Sp" => Sp,
            "B" => B,
            "S" => S,
            "Po" => Po,
            other => return Err(FeaturizeError::UnknownKind(other.to_string())),
        })
    }
}

/// A resolved, non-empty set of feature kinds. Iteration order is the
/// canonical concatenation order `W,P,T,D,E,Sp,B,S,Po`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FeatureSet(BTreeSet<FeatureKind>);

impl FeatureSet {
    pub fn new(kinds: impl IntoIterator<Item = FeatureKind>) -> Result<Self, FeaturizeError> {
        let set: BTreeSet<_> = kinds.into_iter().collect();
        if set.is_empty() {
            return Err(FeaturizeError::EmptyFeatureSet);
        }
        Ok(FeatureSet(set))
    }

    pub fn all() -> Self {
        FeatureSet(FeatureKind::ALL.into_iter().collect())
    }

    pub fn contains(&self, kind: FeatureKind) -> bool {
        self.0.contains(&kind)
    }

    pub fn iter(&self) -> impl Iterator<Item = FeatureKind> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn kinds(&self) -> &BTreeSet<FeatureKind> {
        &self.0
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.0.iter().map(|k| k.symbol()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

impl FromStr for FeatureSet {
    type Err = FeaturizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_feature_expr(s)
    }
}

impl TryFrom<String> for FeatureSet {
    type Error = FeaturizeError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        parse_feature_expr(&s)
    }
}

impl From<FeatureSet> for String {
    fn from(set: FeatureSet) -> String {
        set.to_string()
    }
}

fn parse_braced(text: &str, whole: &str) -> Result<BTreeSet<FeatureKind>, FeaturizeError> {
    let inner = text
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(|| FeaturizeError::BadExpr(whole.to_string()))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|k| !k.is_empty())
        .map(FeatureKind::from_str)
        .collect()
}

/// Parses `all`, `all-{K,...}` or `{K,...}` into a feature set.
pub fn parse_feature_expr(text: &str) -> Result<FeatureSet, FeaturizeError> {
    let compact: String = text
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| if c == '\u{2212}' { '-' } else { c })
        .collect();
    let set = if compact == "all" {
        FeatureKind::ALL.into_iter().collect()
    } else if let Some(rest) = compact.strip_prefix("all-") {
        let removed = parse_braced(rest, text)?;
        FeatureKind::ALL
            .into_iter()
            .filter(|k| !removed.contains(k))
            .collect()
    } else if compact.starts_with('{') {
        parse_braced(&compact, text)?
    } else {
        return Err(FeaturizeError::BadExpr(text.to_string()));
    };
    FeatureSet::new(set)
}

/// Width of the concatenated per-token vector; `Po` contributes `po_dim`.
pub fn concat_dim(kinds: &FeatureSet, po_dim: usize) -> usize {
    kinds.iter().map(|k| k.dim().unwrap_or(po_dim)).sum()
}
