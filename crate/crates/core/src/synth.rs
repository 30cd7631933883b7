//! Seeded synthetic corpora with planted labeling rules, for tests,
//! benchmarks and smoke runs where the real data is unavailable.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Label, Partition, Sentence, Token};

/// Filler words with simplified POS, detailed POS and dependency relation.
const FILLERS: &[(&str, &str, &str, &str)] = &[
    ("the", "DET", "DT", "det"),
    ("a", "DET", "DT", "det"),
    ("officials", "NOUN", "NNS", "nsubj"),
    ("city", "NOUN", "NN", "compound"),
    ("report", "NOUN", "NN", "dobj"),
    ("market", "NOUN", "NN", "pobj"),
    ("said", "VERB", "VBD", "ROOT"),
    ("noted", "VERB", "VBD", "ROOT"),
    ("that", "SCONJ", "IN", "mark"),
    ("in", "ADP", "IN", "prep"),
    ("of", "ADP", "IN", "prep"),
    ("on", "ADP", "IN", "prep"),
    ("and", "CCONJ", "CC", "cc"),
    ("new", "ADJ", "JJ", "amod"),
    ("local", "ADJ", "JJ", "amod"),
    ("economic", "ADJ", "JJ", "amod"),
    ("week", "NOUN", "NN", "npadvmod"),
    ("people", "NOUN", "NNS", "nsubj"),
    ("government", "NOUN", "NN", "nsubj"),
    ("plan", "NOUN", "NN", "dobj"),
    ("was", "AUX", "VBD", "aux"),
    ("has", "AUX", "VBZ", "aux"),
    ("after", "ADP", "IN", "prep"),
    ("more", "ADJ", "JJR", "amod"),
    (",", "PUNCT", ",", "punct"),
    ("12", "NUM", "CD", "nummod"),
];

/// Place names carrying a `GPE` entity tag.
const PLACES: &[&str] = &["Paris", "Chicago", "Lagos", "Madrid"];

/// Words whose presence elsewhere in the sentence makes the ambiguous word a trigger.
pub const MARKERS: &[&str] = &["currently", "ongoing"];

pub const AMBIGUOUS: &str = "crisis";

fn filler<R: Rng>(rng: &mut R) -> Token {
    let &(t, pos, tag, dep) = FILLERS.choose(rng).expect("non-empty");
    Token {
        text: t.into(),
        label: Label::NonTrigger,
        pos_simple: pos.into(),
        pos_detailed: tag.into(),
        dep_rel: dep.into(),
        entity_tag: "O".into(),
    }
}

fn word(text: &str, label: Label, pos: &str, tag: &str, dep: &str) -> Token {
    Token {
        text: text.into(),
        label,
        pos_simple: pos.into(),
        pos_detailed: tag.into(),
        dep_rel: dep.into(),
        entity_tag: "O".into(),
    }
}

/// Parameters of the marker corpus: every sentence holds the ambiguous
/// word once; it is a trigger exactly when a marker word appears at least
/// `min_distance` tokens away.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerCorpus {
    pub min_len: usize,
    pub max_len: usize,
    pub marker_rate: f64,
    pub min_distance: usize,
}

impl Default for MarkerCorpus {
    fn default() -> Self {
        MarkerCorpus {
            min_len: 10,
            max_len: 16,
            marker_rate: 0.5,
            min_distance: 4,
        }
    }
}

impl MarkerCorpus {
    pub fn sentence<R: Rng>(&self, rng: &mut R, id: String) -> Sentence {
        let len = rng.random_range(self.min_len..=self.max_len).max(self.min_distance + 2);
        let mut tokens: Vec<Token> = (0..len).map(|_| filler(rng)).collect();
        if rng.random_bool(0.3) {
            let i = rng.random_range(0..len);
            tokens[i] = Token {
                entity_tag: "B-GPE".into(),
                ..word(PLACES.choose(rng).expect("non-empty"), Label::NonTrigger, "PROPN", "NNP", "pobj")
            };
        }
        let has_marker = rng.random_bool(self.marker_rate);
        let (crisis_at, marker_at) = loop {
            let c = rng.random_range(0..len);
            let m = rng.random_range(0..len);
            if c.abs_diff(m) >= self.min_distance {
                break (c, m);
            }
        };
        let label = if has_marker { Label::Trigger } else { Label::NonTrigger };
        tokens[crisis_at] = word(AMBIGUOUS, label, "NOUN", "NN", "pobj");
        if has_marker {
            let m = MARKERS.choose(rng).expect("non-empty");
            tokens[marker_at] = word(m, Label::NonTrigger, "ADV", "RB", "advmod");
        }
        Sentence {
            id,
            tokens,
            source_date: Some(format!("2019-0{}-1{}", rng.random_range(1..10), rng.random_range(0..10))),
        }
    }

    pub fn dataset(&self, n: usize, seed: u64, prefix: &str, partition: Partition) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sentences = (0..n).map(|i| self.sentence(&mut rng, format!("{prefix}{i}"))).collect();
        Dataset::new(sentences, partition)
    }
}

/// Sentences of `min_len..=max_len` tokens in which every token from
/// `trigger_words` is a trigger; used for quick training smoke runs.
pub fn keyword_corpus(n: usize, min_len: usize, max_len: usize, seed: u64, prefix: &str, partition: Partition) -> Dataset {
    const TRIGGERS: &[&str] = &["strike", "protest", "outbreak"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences = (0..n)
        .map(|i| {
            let len = rng.random_range(min_len..=max_len);
            let tokens = (0..len)
                .map(|_| {
                    if rng.random_bool(0.15) {
                        word(TRIGGERS.choose(&mut rng).expect("non-empty"), Label::Trigger, "NOUN", "NN", "nsubj")
                    } else {
                        filler(&mut rng)
                    }
                })
                .collect();
            Sentence {
                id: format!("{prefix}{i}"),
                tokens,
                source_date: None,
            }
        })
        .collect();
    Dataset::new(sentences, partition)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_rule_holds() {
        let d = MarkerCorpus::default().dataset(200, 3, "m", Partition::Trainval);
        let mut triggers = 0;
        for s in &d.sentences {
            let crisis: Vec<usize> = (0..s.len()).filter(|&i| s.tokens[i].text == AMBIGUOUS).collect();
            assert_eq!(crisis.len(), 1);
            let marker = s.tokens.iter().position(|t| MARKERS.contains(&t.text.as_str()));
            let c = crisis[0];
            assert_eq!(s.tokens[c].label.is_trigger(), marker.is_some());
            if let Some(m) = marker {
                assert!(m.abs_diff(c) >= 4);
                triggers += 1;
            }
            assert_eq!(s.labels().iter().map(|&b| b as usize).sum::<usize>(), marker.is_some() as usize);
        }
        assert!((60..140).contains(&triggers));
    }

    #[test]
    fn seeded() {
        let a = keyword_corpus(5, 3, 6, 9, "k", Partition::Test);
        let b = keyword_corpus(5, 3, 6, 9, "k", Partition::Test);
        assert_eq!(a, b);
    }
}
