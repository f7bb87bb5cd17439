//! Training-free sequence embeddings.
//!
//! [`HashedNgramEmbedder`] hashes every character n-gram of the configured
//! orders into one of `dim` buckets with a ±1 sign, mean-pools the bucket sums
//! over the n-gram count and L2-normalizes the result. Any other embedder can
//! be plugged into routing through the [`Embedder`] trait.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub dim: usize,
    pub ngram_orders: Vec<usize>,
    pub hash_seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            ngram_orders: vec![2, 3, 4],
            hash_seed: 0x7474_6d6d,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 8 {
            return Err(Error::Config(format!(
                "embedding dim must be >= 8, got {}",
                self.dim
            )));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::Config(
                "ngram_orders must be non-empty and every order >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Unit-L2-norm dense vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `values` to unit length. Zero vectors are rejected.
    pub fn normalized(values: &[f64]) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(Self(values.iter().map(|v| (v / norm) as f32).collect()))
    }

    /// Wraps values that are already unit-norm (e.g. read back from a manifest).
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > 1e-5 {
            return Err(Error::Config(format!(
                "embedding is not unit-norm (norm = {norm})"
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }

    /// Squared Euclidean distance.
    pub fn dist_sq(&self, other: &EmbeddingVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum()
    }
}

/// Inner product of two unit vectors, accumulated in f64.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.0.iter()
        .zip(&b.0)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector>;

    /// Stable identifier of the embedding function, recorded in catalogs so a
    /// catalog is never routed with a different embedder than it was built with.
    fn fingerprint(&self) -> String;

    fn embed_all(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct HashedNgramEmbedder {
    config: EmbedderConfig,
}

impl HashedNgramEmbedder {
    pub fn new(config: EmbedderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    /// Bucket index and sign of a single n-gram.
    pub fn bucket_of(&self, ngram: &str) -> (usize, f64) {
        let h = seeded_hash(ngram.as_bytes(), self.config.hash_seed);
        let bucket = (h % self.config.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        (bucket, sign)
    }

    /// Every n-gram of every configured order, in order of appearance.
    pub fn ngrams<'t>(&self, text: &'t str) -> Vec<&'t str> {
        let bounds: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .collect();
        let n_chars = bounds.len() - 1;
        let mut out = Vec::new();
        for &order in &self.config.ngram_orders {
            if order > n_chars {
                continue;
            }
            for start in 0..=n_chars - order {
                out.push(&text[bounds[start]..bounds[start + order]]);
            }
        }
        out
    }
}

impl Embedder for HashedNgramEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::EmptySequence);
        }
        let grams = self.ngrams(text);
        let mut sums = vec![0.0f64; self.config.dim];
        for g in &grams {
            let (bucket, sign) = self.bucket_of(g);
            sums[bucket] += sign;
        }
        if grams.is_empty() {
            return Err(Error::DegenerateEmbedding);
        }
        let count = grams.len() as f64;
        for s in &mut sums {
            *s /= count;
        }
        EmbeddingVector::normalized(&sums)
    }

    fn fingerprint(&self) -> String {
        let orders: Vec<String> = self
            .config
            .ngram_orders
            .iter()
            .map(|o| o.to_string())
            .collect();
        format!(
            "hashed-ngram/v1/dim={}/orders={}/seed={:#x}",
            self.config.dim,
            orders.join(","),
            self.config.hash_seed
        )
    }
}

/// FNV-1a over the bytes, seeded through the offset basis, followed by the
/// splitmix64 finalizer so the top bit is usable as a sign.
pub fn seeded_hash(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    fn embedder() -> HashedNgramEmbedder {
        HashedNgramEmbedder::new(EmbedderConfig::default()).unwrap()
    }

    fn one_hot(dim: usize, i: usize) -> EmbeddingVector {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        EmbeddingVector::normalized(&v).unwrap()
    }

    #[test]
    fn deterministic_bitwise() {
        let e = embedder();
        let a = e.embed("abc").unwrap();
        let b = e.embed("abc").unwrap();
        let bits_a: Vec<u32> = a.as_slice().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u32> = b.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(embedder().embed(""), Err(Error::EmptySequence)));
    }

    #[test]
    fn text_shorter_than_every_order_is_degenerate() {
        assert!(matches!(
            embedder().embed("a"),
            Err(Error::DegenerateEmbedding)
        ));
    }

    #[test]
    fn cancelling_ngrams_are_degenerate() {
        let e = HashedNgramEmbedder::new(EmbedderConfig {
            dim: 8,
            ngram_orders: vec![1],
            hash_seed: 3,
        })
        .unwrap();
        // find two single characters landing in the same bucket with opposite signs
        let chars: Vec<String> = (b'a'..=b'z').map(|c| (c as char).to_string()).collect();
        let mut found = None;
        'outer: for x in &chars {
            for y in &chars {
                let (bx, sx) = e.bucket_of(x);
                let (by, sy) = e.bucket_of(y);
                if bx == by && sx != sy {
                    found = Some(format!("{x}{y}"));
                    break 'outer;
                }
            }
        }
        let text = found.expect("some colliding pair with opposite signs");
        assert!(matches!(e.embed(&text), Err(Error::DegenerateEmbedding)));
    }

    #[test]
    fn disjoint_bucket_sets_are_orthogonal() {
        let e = embedder();
        let buckets = |t: &str| -> HashSet<usize> {
            e.ngrams(t).into_iter().map(|g| e.bucket_of(g).0).collect()
        };
        let candidates = [
            "the quick brown fox",
            "0123456789",
            "[{()}]<>",
            "zzzz yyyy",
            "lorem ipsum dolor",
            "xq jv kw",
        ];
        let mut checked = 0;
        for (i, a) in candidates.iter().enumerate() {
            for b in &candidates[i + 1..] {
                if buckets(a).is_disjoint(&buckets(b)) {
                    let c = cosine(&e.embed(a).unwrap(), &e.embed(b).unwrap());
                    assert_eq!(c, 0.0, "{a:?} vs {b:?}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 0, "no disjoint pair among candidates");
    }

    #[test]
    fn cosine_identities() {
        let e = embedder();
        let v = e.embed("some text here").unwrap();
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-6);
        assert!((cosine(&v, &v.neg()) + 1.0).abs() < 1e-6);
        assert_eq!(cosine(&one_hot(8, 0), &one_hot(8, 3)), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(HashedNgramEmbedder::new(EmbedderConfig {
            dim: 4,
            ..EmbedderConfig::default()
        })
        .is_err());
        assert!(HashedNgramEmbedder::new(EmbedderConfig {
            ngram_orders: vec![],
            ..EmbedderConfig::default()
        })
        .is_err());
    }

    #[test]
    fn multibyte_characters_form_ngrams_by_char() {
        let e = embedder();
        assert_eq!(e.ngrams("héé").len(), 2 + 1);
        assert!(e.embed("héllo wörld").is_ok());
    }

    proptest! {
        #[test]
        fn unit_norm_for_any_text(s in "[a-z0-9 ]{2,64}") {
            let v = embedder().embed(&s);
            if let Ok(v) = v {
                prop_assert!((v.norm() - 1.0).abs() <= 1e-6);
            }
        }

        #[test]
        fn cosine_is_symmetric(a in "[a-z ]{4,32}", b in "[a-z ]{4,32}") {
            let e = embedder();
            let (va, vb) = (e.embed(&a).unwrap(), e.embed(&b).unwrap());
            prop_assert_eq!(cosine(&va, &vb).to_bits(), cosine(&vb, &va).to_bits());
        }
    }
}
