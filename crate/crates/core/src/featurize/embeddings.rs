//! Static word embeddings in the common text format: one token per line
//! followed by its floats, with an optional `<count> <dim>` header line.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use super::vocab::{Vocabulary, PAD_INDEX};
use super::FeaturizeError;

/// Range of the uniform init for words missing from the pretrained table.
pub const OOV_INIT_RANGE: f64 = 0.25;

#[derive(Debug, Clone, Default)]
pub struct StaticEmbeddings {
    pub dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl StaticEmbeddings {
    pub fn from_reader<R: BufRead>(reader: R, dim: usize) -> Result<Self, FeaturizeError> {
        let mut vectors = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| FeaturizeError::Embeddings(e.to_string()))?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let values = values
                .map_err(|e| FeaturizeError::Embeddings(format!("line {}: {e}", i + 1)))?;
            if i == 0 && values.len() == 1 && word.parse::<usize>().is_ok() {
                continue;
            }
            if values.len() != dim {
                return Err(FeaturizeError::Embeddings(format!(
                    "line {}: expected {dim} values for {word:?}, got {}",
                    i + 1,
                    values.len()
                )));
            }
            vectors.insert(word.to_string(), values);
        }
        Ok(StaticEmbeddings { dim, vectors })
    }

    pub fn load(path: impl AsRef<Path>, dim: usize) -> Result<Self, FeaturizeError> {
        let path = path.as_ref();
        let f = File::open(path)
            .map_err(|e| FeaturizeError::Embeddings(format!("{}: {e}", path.display())))?;
        Self::from_reader(BufReader::new(f), dim)
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Embedding table aligned with `vocab`: pretrained rows where known,
    /// U(-0.25, 0.25) otherwise, zeros for padding.
    pub fn table_for<R: Rng>(&self, vocab: &Vocabulary, dim: usize, rng: &mut R) -> Array2<f64> {
        let entries = vocab.entries();
        let mut table = Array2::zeros((entries.len(), dim));
        for (i, word) in entries.iter().enumerate() {
            if i == PAD_INDEX {
                continue;
            }
            let mut row = table.row_mut(i);
            match self.get(word).filter(|v| v.len() == dim) {
                Some(v) => row.iter_mut().zip(v).for_each(|(r, x)| *r = *x),
                None => row
                    .iter_mut()
                    .for_each(|r| *r = rng.random_range(-OOV_INIT_RANGE..OOV_INIT_RANGE)),
            }
        }
        table
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::FeatureKind;
    use rand::SeedableRng;

    #[test]
    fn parse_with_and_without_header() {
        let text = "2 3\nstrike 0.1 0.2 0.3\nends -1 0 1e-2\n";
        let e = StaticEmbeddings::from_reader(text.as_bytes(), 3).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.get("ends").unwrap(), &[-1.0, 0.0, 0.01]);
        let e = StaticEmbeddings::from_reader("a 1 2 3\n".as_bytes(), 3).unwrap();
        assert_eq!(e.len(), 1);
        assert!(StaticEmbeddings::from_reader("a 1 2\n".as_bytes(), 3).is_err());
        assert!(StaticEmbeddings::from_reader("a 1 x 2\n".as_bytes(), 3).is_err());
    }

    #[test]
    fn table_uses_pretrained_and_oov_init() {
        let e = StaticEmbeddings::from_reader("strike 0.5 0.5\n".as_bytes(), 2).unwrap();
        let vocab = Vocabulary::from_values(FeatureKind::W, ["strike", "zzz"]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let t = e.table_for(&vocab, 2, &mut rng);
        assert_eq!(t.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(t.row(vocab.lookup("strike")).to_vec(), vec![0.5, 0.5]);
        assert!(t.row(vocab.lookup("zzz")).iter().all(|x| x.abs() <= 0.25));
    }
}
