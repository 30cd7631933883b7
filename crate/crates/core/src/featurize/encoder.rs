use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::kind::{CONTEXT_DIM, SPACY_DIM};
use super::FeaturizeError;

/// Frozen contextual vectors for one sentence, already aligned to the
/// corpus tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualVectors {
    /// One 768-d row per token (feature B).
    pub token: Array2<f64>,
    /// One 96-d row per token (feature Sp).
    pub spacy: Array2<f64>,
}

/// Source of contextual token embeddings.
///
/// Implementations must be deterministic and return exactly one row per
/// input token. Adapters for real transformer encoders read the final hidden
/// layer and align subword pieces with [`align_subwords_mean`].
pub trait ContextualEncoderProvider: Send + Sync {
    /// Stable identifier; used as the feature-cache namespace, so it must
    /// change whenever the produced vectors would.
    fn name(&self) -> &str;

    fn encode(&self, tokens: &[&str]) -> Result<ContextualVectors, FeaturizeError>;
}

/// Elementwise sum of token vectors: the sentence embedding S.
pub fn sentence_embedding(token_vectors: ArrayView2<'_, f64>) -> Result<Array1<f64>, FeaturizeError> {
    if token_vectors.nrows() == 0 {
        return Err(FeaturizeError::EmptyInput);
    }
    Ok(token_vectors.sum_axis(Axis(0)))
}

/// Same as [`sentence_embedding`] over a list of possibly ragged vectors.
pub fn sentence_embedding_of(vectors: &[Vec<f64>]) -> Result<Vec<f64>, FeaturizeError> {
    let first = vectors.first().ok_or(FeaturizeError::EmptyInput)?;
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(FeaturizeError::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    Ok(acc)
}

/// Averages subword-piece vectors into one vector per corpus token.
/// `owners[i]` is the token index of piece `i`; every token must own at
/// least one piece.
pub fn align_subwords_mean(
    pieces: ArrayView2<'_, f64>,
    owners: &[usize],
    n_tokens: usize,
) -> Result<Array2<f64>, FeaturizeError> {
    if owners.len() != pieces.nrows() {
        return Err(FeaturizeError::LengthMismatch {
            expected: pieces.nrows(),
            got: owners.len(),
        });
    }
    let mut out = Array2::zeros((n_tokens, pieces.ncols()));
    let mut counts = vec![0usize; n_tokens];
    for (row, &tok) in pieces.rows().into_iter().zip(owners) {
        if tok >= n_tokens {
            return Err(FeaturizeError::LengthMismatch {
                expected: n_tokens,
                got: tok + 1,
            });
        }
        let mut dst = out.row_mut(tok);
        dst += &row;
        counts[tok] += 1;
    }
    for (tok, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(FeaturizeError::UnalignedToken(tok));
        }
        out.row_mut(tok).mapv_inplace(|x| x / c as f64);
    }
    Ok(out)
}

/// Per-component standard deviation of one hashed vector, roughly the
/// scale of a transformer's final hidden layer.
pub const COMPONENT_STD: f64 = 0.7;

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // separator so ("ab","c") != ("a","bc")
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct SplitMix64(u64);

impl SplitMix64 {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [-1, 1).
    fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }
}

/// Deterministic reference encoder: each token's vector is the mean over its
/// subword pieces of a hashed piece vector plus hashed vectors of the
/// neighbouring tokens inside a fixed window, weighted by `1 / (1 + |offset|)`.
#[derive(Debug, Clone)]
pub struct HashedContextEncoder {
    name: String,
    /// Neighbours on each side folded into B.
    pub radius: usize,
    /// Neighbours on each side folded into Sp.
    pub spacy_radius: usize,
    pub seed: u64,
    /// Maximum characters per subword piece.
    pub piece_len: usize,
}

impl Default for HashedContextEncoder {
    fn default() -> Self {
        Self::new(2, 1, 0)
    }
}

impl HashedContextEncoder {
    pub fn new(radius: usize, spacy_radius: usize, seed: u64) -> Self {
        let piece_len = 4;
        HashedContextEncoder {
            name: format!("hashed-r{radius}-sr{spacy_radius}-p{piece_len}-a{COMPONENT_STD}-s{seed}"),
            radius,
            spacy_radius,
            seed,
            piece_len,
        }
    }

    fn hashed_into(&self, out: &mut [f64], salt: &str, offset: i64, text: &str, weight: f64) {
        let mut rng = SplitMix64(fnv1a(&[
            &self.seed.to_le_bytes(),
            salt.as_bytes(),
            &offset.to_le_bytes(),
            text.as_bytes(),
        ]));
        let scale = weight * COMPONENT_STD * 3f64.sqrt();
        for o in out.iter_mut() {
            *o += scale * rng.unit();
        }
    }

    fn pieces<'a>(&self, token: &'a str) -> Vec<&'a str> {
        let bounds: Vec<usize> = token
            .char_indices()
            .map(|(i, _)| i)
            .step_by(self.piece_len)
            .chain(std::iter::once(token.len()))
            .collect();
        bounds.windows(2).map(|w| &token[w[0]..w[1]]).collect()
    }

    fn encode_layer(&self, tokens: &[&str], dim: usize, radius: usize, salt: &str) -> Array2<f64> {
        let n = tokens.len();
        let mut piece_rows: Vec<Vec<f64>> = Vec::new();
        let mut owners = Vec::new();
        for (i, tok) in tokens.iter().enumerate() {
            let mut context = vec![0.0; dim];
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n.saturating_sub(1));
            for (j, neighbour) in tokens.iter().enumerate().take(hi + 1).skip(lo) {
                if j == i {
                    continue;
                }
                let off = j as i64 - i as i64;
                self.hashed_into(&mut context, salt, off, neighbour, 1.0 / (1.0 + off.unsigned_abs() as f64));
            }
            for piece in self.pieces(tok) {
                let mut row = context.clone();
                self.hashed_into(&mut row, salt, 0, piece, 1.0);
                piece_rows.push(row);
                owners.push(i);
            }
        }
        let flat: Vec<f64> = piece_rows.concat();
        let pieces = Array2::from_shape_vec((owners.len(), dim), flat).expect("piece matrix shape");
        align_subwords_mean(pieces.view(), &owners, n).expect("every token owns a piece")
    }
}

impl ContextualEncoderProvider for HashedContextEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn encode(&self, tokens: &[&str]) -> Result<ContextualVectors, FeaturizeError> {
        if tokens.is_empty() {
            return Err(FeaturizeError::EmptyInput);
        }
        if let Some(i) = tokens.iter().position(|t| t.is_empty()) {
            return Err(FeaturizeError::UnalignedToken(i));
        }
        Ok(ContextualVectors {
            token: self.encode_layer(tokens, CONTEXT_DIM, self.radius, "B"),
            spacy: self.encode_layer(tokens, SPACY_DIM, self.spacy_radius, "Sp"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sentence_embedding_cases() {
        let v = array![[1.0, -2.0, 3.5]];
        assert_eq!(sentence_embedding(v.view()).unwrap(), array![1.0, -2.0, 3.5]);
        let vv = array![[1.0, -2.0, 3.5], [-1.0, 2.0, -3.5]];
        assert_eq!(sentence_embedding(vv.view()).unwrap(), array![0.0, 0.0, 0.0]);
        assert!(sentence_embedding(Array2::<f64>::zeros((0, 3)).view()).is_err());
        assert!(matches!(
            sentence_embedding_of(&[vec![1.0], vec![1.0, 2.0]]),
            Err(FeaturizeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn alignment_means_pieces() {
        let pieces = array![[1.0, 1.0], [3.0, 5.0], [2.0, 0.0]];
        let out = align_subwords_mean(pieces.view(), &[0, 0, 1], 2).unwrap();
        assert_eq!(out, array![[2.0, 3.0], [2.0, 0.0]]);
        assert!(matches!(
            align_subwords_mean(pieces.view(), &[0, 0, 0], 2),
            Err(FeaturizeError::UnalignedToken(1))
        ));
    }

    #[test]
    fn hashed_encoder_shapes_and_determinism() {
        let enc = HashedContextEncoder::default();
        let toks = ["The", "internationalization", "strike", "continues", "."];
        let a = enc.encode(&toks).unwrap();
        assert_eq!(a.token.dim(), (5, 768));
        assert_eq!(a.spacy.dim(), (5, 96));
        let b = enc.encode(&toks).unwrap();
        assert_eq!(a, b);
        // Context sensitivity: the same word in different surroundings differs.
        let c = enc.encode(&["A", "internationalization", "strike", "continues", "."]).unwrap();
        assert_ne!(a.token.row(1), c.token.row(1));
        assert_eq!(a.token.row(4), c.token.row(4));
    }

    #[test]
    fn piece_segmentation_is_char_based() {
        let enc = HashedContextEncoder::default();
        assert_eq!(enc.pieces("abcdefghi"), vec!["abcd", "efgh", "i"]);
        assert_eq!(enc.pieces("ñandú"), vec!["ñand", "ú"]);
        assert_eq!(enc.pieces("a"), vec!["a"]);
    }
}
