use unicode_normalization::UnicodeNormalization;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use super::{EmbedError, Embedder, Embedding};
use crate::scalar::Real;

pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_SEED: u64 = 42;

/// Lowercased NFC tokens, split on whitespace and `;`.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    normalized.split(|c: char| c.is_whitespace() || c == ';').filter(|t| !t.is_empty()).map(str::to_owned).collect()
}

/// Signed feature hashing of tokens into a fixed number of buckets.
///
/// Bucket is `hash mod dim`; the sign comes from the top bit of the hash so
/// that it stays independent of the bucket for power-of-two dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: DEFAULT_DIM, seed: DEFAULT_SEED }
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "hashing dimension must be positive");
        HashingEmbedder { dim, seed }
    }

    /// Accumulated signed token counts as sparse `(bucket, value)` pairs,
    /// sorted by bucket, before normalization.
    pub fn sparse_features(&self, text: &str) -> Vec<(usize, f64)> {
        let mut acc: Vec<(usize, f64)> = tokenize(text)
            .iter()
            .map(|tok| {
                let h = xxh3_64_with_seed(tok.as_bytes(), self.seed);
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                ((h % self.dim as u64) as usize, sign)
            })
            .collect();
        acc.sort_by_key(|(i, _)| *i);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
        for (i, v) in acc {
            match out.last_mut() {
                Some((j, w)) if *j == i => *w += v,
                _ => out.push((i, v)),
            }
        }
        out.retain(|(_, v)| *v != 0.0);
        out
    }

    /// Unit-normalized sparse features; empty for texts without tokens.
    pub fn normalized_sparse(&self, text: &str) -> Vec<(usize, f64)> {
        let mut f = self.sparse_features(text);
        let norm = f.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            f.iter_mut().for_each(|(_, v)| *v /= norm);
        }
        f
    }
}

impl<T: Real> Embedder<T> for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding<T>, EmbedError> {
        let mut e = Embedding::zeros(self.dim);
        for (i, v) in self.normalized_sparse(text) {
            e.values[i] = T::of(v);
        }
        Ok(e)
    }

    fn fingerprint(&self) -> String {
        format!("hashing:xxh3:dim={}:seed={}", self.dim, self.seed)
    }
}

/// Hashing features mapped through a learned `dim x dim` matrix, then
/// unit-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionEmbedder<T> {
    base: HashingEmbedder,
    /// Row-major weights.
    weights: Vec<T>,
}

impl<T: Real> ProjectionEmbedder<T> {
    pub fn identity(base: HashingEmbedder) -> Self {
        let d = base.dim;
        let mut weights = vec![T::zero(); d * d];
        for i in 0..d {
            weights[i * d + i] = T::one();
        }
        Self::from_weights(base, weights).expect("square by construction")
    }

    pub fn from_weights(base: HashingEmbedder, weights: Vec<T>) -> Result<Self, EmbedError> {
        if weights.len() != base.dim * base.dim {
            return Err(EmbedError::DimMismatch(weights.len(), base.dim * base.dim));
        }
        Ok(ProjectionEmbedder { base, weights })
    }

    pub fn base(&self) -> &HashingEmbedder {
        &self.base
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// `W x` for sparse `x`, without normalization.
    pub fn project(&self, x: &[(usize, f64)]) -> Vec<T> {
        project_sparse(&self.weights, self.base.dim, x)
    }
}

pub(crate) fn project_sparse<T: Real>(weights: &[T], dim: usize, x: &[(usize, f64)]) -> Vec<T> {
    let mut out = vec![T::zero(); dim];
    for (row, o) in out.iter_mut().enumerate() {
        let w = &weights[row * dim..(row + 1) * dim];
        *o = x.iter().map(|&(j, v)| w[j] * T::of(v)).sum();
    }
    out
}

impl<T: Real> Embedder<T> for ProjectionEmbedder<T> {
    fn dim(&self) -> usize {
        self.base.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding<T>, EmbedError> {
        let x = self.base.normalized_sparse(text);
        Ok(Embedding::new(self.project(&x)).normalized())
    }

    fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for w in &self.weights {
            h.update(w.as_f64().to_le_bytes());
        }
        let digest = h.finalize();
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("projection:{}:w={hex}", Embedder::<T>::fingerprint(&self.base))
    }
}
