use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{is_valid_entity_tag, CorpusError, Dataset, Label, Partition, Sentence, Token};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenRecord {
    t: String,
    y: u8,
    pos: String,
    tag: String,
    dep: String,
    ent: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SentenceRecord {
    id: String,
    date: Option<String>,
    tokens: Vec<TokenRecord>,
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter()
            .enumerate()
            .all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit())
}

fn sentence_from_record(rec: SentenceRecord, line: usize) -> Result<Sentence, CorpusError> {
    let malformed = |message: String| CorpusError::Malformed { line, message };
    if rec.id.is_empty() {
        return Err(malformed("empty sentence id".into()));
    }
    if rec.tokens.is_empty() {
        return Err(malformed(format!("sentence {:?} has no tokens", rec.id)));
    }
    if let Some(d) = &rec.date {
        if !is_iso_date(d) {
            return Err(malformed(format!("date {d:?} is not YYYY-MM-DD")));
        }
    }
    let mut tokens = Vec::with_capacity(rec.tokens.len());
    for (i, t) in rec.tokens.into_iter().enumerate() {
        if t.t.is_empty() {
            return Err(malformed(format!("token {i} has empty text")));
        }
        let label = Label::from_bit(t.y)
            .ok_or_else(|| malformed(format!("token {i} has label {} (expected 0 or 1)", t.y)))?;
        if !is_valid_entity_tag(&t.ent) {
            return Err(CorpusError::InvalidEntityTag { tag: t.ent, line });
        }
        tokens.push(Token {
            text: t.t,
            label,
            pos_simple: t.pos,
            pos_detailed: t.tag,
            dep_rel: t.dep,
            entity_tag: t.ent,
        });
    }
    Ok(Sentence {
        id: rec.id,
        tokens,
        source_date: rec.date,
    })
}

fn record_from_sentence(s: &Sentence) -> SentenceRecord {
    SentenceRecord {
        id: s.id.clone(),
        date: s.source_date.clone(),
        tokens: s
            .tokens
            .iter()
            .map(|t| TokenRecord {
                t: t.text.clone(),
                y: t.label.bit(),
                pos: t.pos_simple.clone(),
                tag: t.pos_detailed.clone(),
                dep: t.dep_rel.clone(),
                ent: t.entity_tag.clone(),
            })
            .collect(),
    }
}

/// Parses JSON-lines records. Blank lines are skipped; line numbers are 1-based.
pub fn parse_dataset<R: BufRead>(reader: R, partition: Partition) -> Result<Dataset, CorpusError> {
    let mut sentences = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: rec.id,
                line: line_no,
            });
        }
        sentences.push(sentence_from_record(rec, line_no)?);
    }
    Ok(Dataset {
        sentences,
        partition,
    })
}

pub fn load_dataset(path: impl AsRef<Path>, partition: Partition) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    parse_dataset(BufReader::new(file), partition)
}

pub fn write_dataset<W: Write>(mut w: W, dataset: &Dataset) -> std::io::Result<()> {
    for s in &dataset.sentences {
        let line = serde_json::to_string(&record_from_sentence(s))?;
        writeln!(w, "{line}")?;
    }
    w.flush()
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_dataset(std::io::BufWriter::new(file), dataset).map_err(|e| io_err(path, e))
}

/// Pair of dataset files named by a partition manifest:
///
/// ```text
/// trainval: data/trainval.jsonl
/// test: data/test.jsonl
/// ```
///
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub trainval: PathBuf,
    pub test: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CorpusError> {
        let mut trainval = None;
        let mut test = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| CorpusError::Manifest(format!("expected `key: path`, got {line:?}")))?;
            let path = base.join(value.trim());
            match key.trim() {
                "trainval" => trainval = Some(path),
                "test" => test = Some(path),
                other => return Err(CorpusError::Manifest(format!("unknown key {other:?}"))),
            }
        }
        Ok(Manifest {
            trainval: trainval.ok_or_else(|| CorpusError::Manifest("missing trainval".into()))?,
            test: test.ok_or_else(|| CorpusError::Manifest("missing test".into()))?,
        })
    }

    /// Loads both partitions and checks they share no sentence id.
    pub fn load(&self) -> Result<(Dataset, Dataset), CorpusError> {
        let trainval = load_dataset(&self.trainval, Partition::Trainval)?;
        let test = load_dataset(&self.test, Partition::Test)?;
        super::check_disjoint(&trainval, &test)?;
        Ok((trainval, test))
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Manifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
}
