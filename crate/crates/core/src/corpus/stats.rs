use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::Dataset;

/// Descriptive counts for one dataset partition.
///
/// A *word* is a token containing at least one alphabetic character, and
/// `entity_count` counts spans (a `B-` tag, or an `I-` tag that does not
/// continue a span of the same type) rather than entity-tagged tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sentence_count: usize,
    pub token_count: usize,
    pub word_count: usize,
    pub entity_count: usize,
    pub event_count: usize,
    pub avg_tokens: f64,
    pub avg_words: f64,
    pub avg_entities: f64,
    pub avg_events: f64,
    pub word_vocab: usize,
    pub pos_simple_vocab: usize,
    pub pos_detailed_vocab: usize,
    pub dep_vocab: usize,
    pub entity_vocab: usize,
}

pub fn is_word(text: &str) -> bool {
    text.chars().any(char::is_alphabetic)
}

fn avg(total: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

pub fn compute_stats(dataset: &Dataset) -> DatasetStats {
    let mut token_count = 0;
    let mut word_count = 0;
    let mut entity_count = 0;
    let mut event_count = 0;
    let mut words = BTreeSet::new();
    let mut pos = BTreeSet::new();
    let mut tag = BTreeSet::new();
    let mut dep = BTreeSet::new();
    let mut ent = BTreeSet::new();

    for s in &dataset.sentences {
        let mut open_type: Option<&str> = None;
        for t in &s.tokens {
            token_count += 1;
            if is_word(&t.text) {
                word_count += 1;
            }
            if t.label.is_trigger() {
                event_count += 1;
            }
            match t.entity_tag.split_once('-') {
                Some(("B", ty)) => {
                    entity_count += 1;
                    open_type = Some(ty);
                }
                Some(("I", ty)) => {
                    if open_type != Some(ty) {
                        entity_count += 1;
                    }
                    open_type = Some(ty);
                }
                _ => open_type = None,
            }
            words.insert(t.text.as_str());
            pos.insert(t.pos_simple.as_str());
            tag.insert(t.pos_detailed.as_str());
            dep.insert(t.dep_rel.as_str());
            ent.insert(t.entity_tag.as_str());
        }
    }

    let n = dataset.len();
    DatasetStats {
        sentence_count: n,
        token_count,
        word_count,
        entity_count,
        event_count,
        avg_tokens: avg(token_count, n),
        avg_words: avg(word_count, n),
        avg_entities: avg(entity_count, n),
        avg_events: avg(event_count, n),
        word_vocab: words.len(),
        pos_simple_vocab: pos.len(),
        pos_detailed_vocab: tag.len(),
        dep_vocab: dep.len(),
        entity_vocab: ent.len(),
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, String); 14] = [
            ("sentences", self.sentence_count.to_string()),
            ("tokens", self.token_count.to_string()),
            ("words", self.word_count.to_string()),
            ("entities", self.entity_count.to_string()),
            ("events", self.event_count.to_string()),
            ("tokens/sentence", format!("{:.3}", self.avg_tokens)),
            ("words/sentence", format!("{:.3}", self.avg_words)),
            ("entities/sentence", format!("{:.3}", self.avg_entities)),
            ("events/sentence", format!("{:.3}", self.avg_events)),
            ("word vocab (W)", self.word_vocab.to_string()),
            ("simple POS vocab (P)", self.pos_simple_vocab.to_string()),
            ("detailed POS vocab (T)", self.pos_detailed_vocab.to_string()),
            ("dependency vocab (D)", self.dep_vocab.to_string()),
            ("entity vocab (E)", self.entity_vocab.to_string()),
        ];
        for (k, v) in rows {
            writeln!(f, "{k:<24}{v:>12}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, Partition, Sentence, Token};

    #[test]
    fn empty_dataset() {
        let st = compute_stats(&Dataset::new(vec![], Partition::Trainval));
        assert_eq!(st.token_count, 0);
        assert_eq!(st.event_count, 0);
        assert_eq!(st.avg_tokens, 0.0);
        assert_eq!(st.avg_events, 0.0);
    }

    #[test]
    fn spans_words_and_events() {
        let mk = |text: &str, y: Label, ent: &str| Token {
            entity_tag: ent.into(),
            ..Token::plain(text, y)
        };
        let s = Sentence {
            id: "a".into(),
            tokens: vec![
                mk("New", Label::NonTrigger, "B-GPE"),
                mk("York", Label::NonTrigger, "I-GPE"),
                mk("strike", Label::Trigger, "O"),
                mk("2019", Label::NonTrigger, "B-DATE"),
                mk(",", Label::NonTrigger, "O"),
                mk("UN", Label::NonTrigger, "I-ORG"),
                mk("UN", Label::NonTrigger, "B-ORG"),
            ],
            source_date: None,
        };
        let st = compute_stats(&Dataset::new(vec![s], Partition::Test));
        assert_eq!(st.token_count, 7);
        assert_eq!(st.word_count, 5);
        assert_eq!(st.event_count, 1);
        assert_eq!(st.entity_count, 4);
        assert_eq!(st.avg_tokens, 7.0);
        assert_eq!(st.entity_vocab, 6);
    }
}
