//! Token-labelled sentence corpora: the data model, the JSON-lines file
//! format, seeded train/validation splitting and descriptive statistics.

mod io;
mod split;
mod stats;

pub use io::{load_dataset, load_manifest, parse_dataset, save_dataset, write_dataset, Manifest};
pub use split::{split, SplitSpec};
pub use stats::{compute_stats, DatasetStats};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("invalid entity tag {tag:?} at line {line}")]
    InvalidEntityTag { tag: String, line: usize },
    #[error("sentence {id:?} appears in both trainval and test partitions")]
    PartitionOverlap { id: String },
    #[error("validation fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),
    #[error("split requires a trainval partition")]
    NotTrainval,
    #[error("manifest error: {0}")]
    Manifest(String),
}

/// Binary trigger label of one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    NonTrigger,
    Trigger,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Label::NonTrigger),
            1 => Some(Label::Trigger),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::NonTrigger => 0,
            Label::Trigger => 1,
        }
    }

    pub fn is_trigger(self) -> bool {
        self == Label::Trigger
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub label: Label,
    /// Simplified part-of-speech tag (feature P).
    pub pos_simple: String,
    /// Detailed part-of-speech tag (feature T).
    pub pos_detailed: String,
    /// Dependency relation (feature D).
    pub dep_rel: String,
    /// `O` or `B-TYPE` / `I-TYPE` (feature E).
    pub entity_tag: String,
}

impl Token {
    /// A token with placeholder tags, mostly useful in tests.
    pub fn plain(text: impl Into<String>, label: Label) -> Self {
        Token {
            text: text.into(),
            label,
            pos_simple: "X".into(),
            pos_detailed: "XX".into(),
            dep_rel: "dep".into(),
            entity_tag: "O".into(),
        }
    }
}

/// `O`, or an IOB prefix followed by a non-empty entity type.
pub fn is_valid_entity_tag(tag: &str) -> bool {
    if tag == "O" {
        return true;
    }
    match tag.split_once('-') {
        Some((prefix, ty)) => matches!(prefix, "B" | "I") && !ty.is_empty(),
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
    /// ISO `YYYY-MM-DD` publication date, when known.
    pub source_date: Option<String>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.tokens.iter().map(|t| t.label.bit()).collect()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Trainval,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub sentences: Vec<Sentence>,
    pub partition: Partition,
}

impl Dataset {
    pub fn new(sentences: Vec<Sentence>, partition: Partition) -> Self {
        Dataset {
            sentences,
            partition,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

/// Checks that no sentence id is shared between a trainval and a test dataset.
pub fn check_disjoint(trainval: &Dataset, test: &Dataset) -> Result<(), CorpusError> {
    let ids: std::collections::HashSet<&str> =
        trainval.sentences.iter().map(|s| s.id.as_str()).collect();
    match test.sentences.iter().find(|s| ids.contains(s.id.as_str())) {
        Some(s) => Err(CorpusError::PartitionOverlap { id: s.id.clone() }),
        None => Ok(()),
    }
}
