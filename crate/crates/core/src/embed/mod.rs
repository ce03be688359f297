//! Sentence embeddings and similarity scoring.
//!
//! Backends implement [`Embedder`]. The hashing backend is deterministic and
//! dependency free; the projection backend applies a trained linear map on top
//! of it; the service backend delegates to an HTTP embedding server.

mod cache;
mod hashing;
mod loss;
mod score;
mod service;
mod train;

pub use cache::{CachedEmbedder, EmbeddingCache};
pub use hashing::{tokenize, HashingEmbedder, ProjectionEmbedder};
pub use loss::{cosine_embedding_loss, loss_gradient, Label};
pub use score::{triplet_score, ScoredTriplet};
pub use service::{EmbedRequest, EmbedResponse, ServiceEmbedder};
pub use train::{train_projection, TrainConfig, TrainOutcome, TrainingPair};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero-norm vector has no direction")]
    ZeroNorm,
    #[error("label must be +1 or -1, got {0}")]
    Label(i64),
    #[error("margin {0} outside (-1, 1)")]
    Margin(f64),
    #[error("embedding service error: {0}")]
    Service(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("embedding cache: {0}")]
    Cache(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Fixed-dimension vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding<T> {
    pub values: Vec<T>,
}

impl<T: Real> Embedding<T> {
    pub fn new(values: Vec<T>) -> Self {
        Embedding { values }
    }

    pub fn zeros(dim: usize) -> Self {
        Embedding { values: vec![T::zero(); dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.values.iter().zip(&other.values).map(|(a, b)| *a * *b).sum()
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: T) -> Self {
        Embedding { values: self.values.iter().map(|v| *v * c).collect() }
    }

    /// Unit-length copy; the zero vector stays zero.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > T::zero() {
            self.values.iter_mut().for_each(|v| *v = *v / n);
        }
        self
    }
}

/// Cosine similarity plus whether the zero-norm convention applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity<T> {
    pub value: T,
    pub zero_norm: bool,
}

/// `a·b / (|a| |b|)`, or 0 (flagged) when either vector is zero.
pub fn cosine<T: Real>(a: &Embedding<T>, b: &Embedding<T>) -> Result<Similarity<T>, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na.is_zero() || nb.is_zero() {
        return Ok(Similarity { value: T::zero(), zero_norm: true });
    }
    let c = a.dot(b) / (na * nb);
    // rounding can push |c| a hair past 1
    Ok(Similarity { value: c.max(-T::one()).min(T::one()), zero_norm: false })
}

/// Sentence embedding backend.
pub trait Embedder<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Embedding<T>, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding<T>>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }

    /// Identifies the backend and its parameters; used to version caches.
    fn fingerprint(&self) -> String;
}
