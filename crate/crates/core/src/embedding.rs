//! Deterministic feature-hashed text embeddings.
//!
//! Every token is hashed with 64-bit FNV-1a into two buckets with a ±1 sign
//! each; the summed vector is L2-normalised. Summation of ±1 values is exact
//! in `f64`, so the result depends only on the token multiset. The empty
//! input maps to the all-zero vector, which has similarity 0 with anything.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 256;

/// Identity of the token hash; written into CSD metadata and bank headers.
pub const HASH_VERSION: &str = "fnv1a64-signed-2bucket/v1";

/// Fixed-length real vector. Unit norm for non-empty input, zero otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Embedding) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Feature-hashing encoder with a configurable dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoder {
    dim: usize,
}

impl Default for Encoder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl Encoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidInput(format!(
                "embedding dimension must be at least 2, got {dim}"
            )));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Encode an already-normalised token list.
    pub fn encode_text<S: AsRef<str>>(&self, tokens: &[S]) -> Embedding {
        let mut acc = vec![0.0f64; self.dim];
        for token in tokens {
            for (idx, sign) in self.features(token.as_ref()) {
                acc[idx] += sign;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut acc {
                *v /= norm;
            }
        }
        Embedding(acc)
    }

    fn features(&self, token: &str) -> [(usize, f64); 2] {
        let h1 = fnv64(token.as_bytes(), None);
        let h2 = fnv64(token.as_bytes(), Some(0xff));
        let dim = self.dim as u64;
        let i1 = ((h1 >> 1) % dim) as usize;
        let mut i2 = ((h2 >> 1) % dim) as usize;
        // two distinct buckets keep a single token from cancelling to zero
        if i2 == i1 {
            i2 = (i1 + 1) % self.dim;
        }
        [(i1, sign(h1)), (i2, sign(h2))]
    }
}

fn fnv64(bytes: &[u8], salt: Option<u8>) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    if let Some(s) = salt {
        h.write_u8(s);
    }
    h.finish()
}

fn sign(h: u64) -> f64 {
    if h & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Encode with the default dimension.
pub fn encode_text<S: AsRef<str>>(tokens: &[S]) -> Embedding {
    Encoder::default().encode_text(tokens)
}

/// Cosine similarity; 0.0 when either side is all-zero.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "embedding dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Plain dot product. Equals [`cosine`] for unit vectors.
pub fn dot(a: &Embedding, b: &Embedding) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum()
}

/// Stable 64-bit fingerprint of a byte string (same hash family as the encoder).
pub fn fingerprint(bytes: &[u8]) -> u64 {
    fnv64(bytes, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis(dim: usize, i: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Embedding::from_values(v)
    }

    #[test]
    fn empty_input_is_zero_vector() {
        let e = encode_text::<&str>(&[]);
        assert_eq!(e.dim(), DEFAULT_DIM);
        assert!(e.is_zero());
    }

    #[test]
    fn encoding_is_deterministic() {
        let a = encode_text(&["stone"]);
        let b = encode_text(&["stone"]);
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn token_order_does_not_matter() {
        let a = encode_text(&["oak", "planks"]);
        let b = encode_text(&["planks", "oak"]);
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn duplicated_token_changes_vector() {
        let a = encode_text(&["oak", "planks"]);
        let b = encode_text(&["oak", "oak", "planks"]);
        assert!(!a.bit_eq(&b));
    }

    #[test]
    fn single_token_is_unit_norm() {
        for t in ["a", "stone", "crafting", "x1", "furnace"] {
            let e = encode_text(&[t]);
            assert!((e.norm() - 1.0).abs() < 1e-9, "{t}");
        }
    }

    #[test]
    fn cosine_identity_and_orthogonality() {
        let v = encode_text(&["iron", "ingot"]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&basis(8, 0), &basis(8, 1)).unwrap(), 0.0);
    }

    #[test]
    fn cosine_arithmetic_example() {
        let mut a = vec![0.0; 8];
        let mut b = vec![0.0; 8];
        a[0] = 0.6;
        a[1] = 0.8;
        b[0] = 0.8;
        b[1] = 0.6;
        // 0.6*0.8 + 0.8*0.6 over unit norms
        let c = cosine(&Embedding::from_values(a), &Embedding::from_values(b)).unwrap();
        assert!((c - 0.96).abs() < 1e-12);
    }

    #[test]
    fn cosine_against_zero_is_zero() {
        let v = encode_text(&["stone"]);
        assert_eq!(cosine(&v, &Embedding::zeros(DEFAULT_DIM)).unwrap(), 0.0);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let err = cosine(&Embedding::zeros(4), &Embedding::zeros(5)).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn custom_dimension() {
        let enc = Encoder::new(16).unwrap();
        assert_eq!(enc.encode_text(&["x"]).dim(), 16);
        assert!(Encoder::new(1).is_err());
    }

    fn token() -> impl Strategy<Value = String> {
        "[a-z0-9]{1,8}"
    }

    proptest! {
        #[test]
        fn unit_norm_for_nonempty(tokens in prop::collection::vec(token(), 1..20)) {
            let e = encode_text(&tokens);
            // a bag can cancel only if some token pairs collide with opposite signs;
            // with distinct buckets per token that needs two different tokens
            if !e.is_zero() {
                prop_assert!((e.norm() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn symmetric_cosine(a in prop::collection::vec(token(), 0..10),
                            b in prop::collection::vec(token(), 0..10)) {
            let ea = encode_text(&a);
            let eb = encode_text(&b);
            prop_assert_eq!(cosine(&ea, &eb).unwrap().to_bits(), cosine(&eb, &ea).unwrap().to_bits());
        }

        #[test]
        fn dot_fast_path_matches_cosine(a in prop::collection::vec(token(), 1..10),
                                        b in prop::collection::vec(token(), 1..10)) {
            let ea = encode_text(&a);
            let eb = encode_text(&b);
            prop_assume!(!ea.is_zero() && !eb.is_zero());
            prop_assert!((dot(&ea, &eb) - cosine(&ea, &eb).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariant(mut tokens in prop::collection::vec(token(), 0..12), seed in any::<u64>()) {
            let a = encode_text(&tokens);
            let n = tokens.len();
            if n > 1 {
                let k = (seed as usize) % n;
                tokens.rotate_left(k);
                tokens.reverse();
            }
            prop_assert!(a.bit_eq(&encode_text(&tokens)));
        }
    }
}
