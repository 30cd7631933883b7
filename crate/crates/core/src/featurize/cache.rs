//! On-disk cache of frozen contextual vectors, laid out as
//! `<root>/<provider>/<sentence-id>.bin`.
//!
//! Blob layout (little endian): magic `OEDF`, format version `u32`, token
//! fingerprint `u64`, token count `u32`, B width `u32`, Sp width `u32`, then
//! the B rows and the Sp rows as `f64`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::encoder::ContextualVectors;
use super::FeaturizeError;

const MAGIC: &[u8; 4] = b"OEDF";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4 + 4;

#[derive(Debug, Clone)]
pub struct FeatureCache {
    root: PathBuf,
}

/// Escapes everything outside `[A-Za-z0-9_.-]` (and a leading dot) as `%XX`.
pub fn escape_id(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for (i, b) in id.bytes().enumerate() {
        let safe = b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || (b == b'.' && i > 0);
        if safe {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

/// Fingerprint of the token texts a blob was computed from.
pub fn token_fingerprint(tokens: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tokens {
        for &b in t.as_bytes().iter().chain(std::iter::once(&0u8)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn encode_blob(fingerprint: u64, v: &ContextualVectors) -> Vec<u8> {
    let (n, bd) = v.token.dim();
    let sd = v.spacy.ncols();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * n * (bd + sd));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&fingerprint.to_le_bytes());
    for x in [n, bd, sd] {
        buf.extend_from_slice(&(x as u32).to_le_bytes());
    }
    for x in v.token.iter().chain(v.spacy.iter()) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

fn decode_blob(buf: &[u8]) -> Option<(u64, ContextualVectors)> {
    if buf.len() < HEADER_LEN || &buf[..4] != MAGIC {
        return None;
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
    if u32_at(4) != VERSION as usize {
        return None;
    }
    let fingerprint = u64::from_le_bytes(buf[8..16].try_into().unwrap());
    let (n, bd, sd) = (u32_at(16), u32_at(20), u32_at(24));
    let body = &buf[HEADER_LEN..];
    if body.len() != 8 * n * (bd + sd) {
        return None;
    }
    let floats: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (b, s) = floats.split_at(n * bd);
    Some((
        fingerprint,
        ContextualVectors {
            token: Array2::from_shape_vec((n, bd), b.to_vec()).ok()?,
            spacy: Array2::from_shape_vec((n, sd), s.to_vec()).ok()?,
        },
    ))
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FeatureCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, provider: &str, sentence_id: &str) -> PathBuf {
        self.root
            .join(escape_id(provider))
            .join(format!("{}.bin", escape_id(sentence_id)))
    }

    /// Returns the cached vectors when present and computed from the same tokens.
    pub fn get(&self, provider: &str, sentence_id: &str, tokens: &[&str]) -> Option<ContextualVectors> {
        let buf = fs::read(self.path_for(provider, sentence_id)).ok()?;
        let (fp, v) = decode_blob(&buf)?;
        (fp == token_fingerprint(tokens) && v.token.nrows() == tokens.len()).then_some(v)
    }

    /// Writes through a temporary file and renames it into place, so readers
    /// never observe a partial blob.
    pub fn put(
        &self,
        provider: &str,
        sentence_id: &str,
        tokens: &[&str],
        vectors: &ContextualVectors,
    ) -> Result<(), FeaturizeError> {
        let path = self.path_for(provider, sentence_id);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| FeaturizeError::Cache(e.to_string()))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| FeaturizeError::Cache(e.to_string()))?;
        tmp.write_all(&encode_blob(token_fingerprint(tokens), vectors))
            .map_err(|e| FeaturizeError::Cache(e.to_string()))?;
        tmp.persist(&path)
            .map_err(|e| FeaturizeError::Cache(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{ContextualEncoderProvider, HashedContextEncoder};

    #[test]
    fn escaping() {
        assert_eq!(escape_id("nyt-2019.05_a"), "nyt-2019.05_a");
        assert_eq!(escape_id("a/b c"), "a%2Fb%20c");
        assert_eq!(escape_id(".."), "%2E.");
    }

    #[test]
    fn put_get_and_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path());
        let enc = HashedContextEncoder::default();
        let toks = ["Protests", "continue", "today"];
        let v = enc.encode(&toks).unwrap();
        assert!(cache.get(enc.name(), "s/1", &toks).is_none());
        cache.put(enc.name(), "s/1", &toks, &v).unwrap();
        assert!(cache.path_for(enc.name(), "s/1").starts_with(dir.path().join(enc.name())));
        assert_eq!(cache.get(enc.name(), "s/1", &toks).unwrap(), v);
        // other provider namespace, other tokens
        assert!(cache.get("other", "s/1", &toks).is_none());
        assert!(cache.get(enc.name(), "s/1", &["Protests", "ended", "today"]).is_none());
    }

    #[test]
    fn corrupt_blob_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path());
        let p = cache.path_for("p", "x");
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(&p, b"OEDF garbage").unwrap();
        assert!(cache.get("p", "x", &["a"]).is_none());
    }
}
