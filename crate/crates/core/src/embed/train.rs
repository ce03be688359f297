use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hashing::project_sparse;
use super::{cosine_embedding_loss, loss_gradient, EmbedError, Embedding, HashingEmbedder, Label, ProjectionEmbedder};
use crate::scalar::Real;

/// A (triplet sentence, path sentence) pair with the triplet's label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub triplet: String,
    pub path: String,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, learning_rate: 1e-2, batch_size: 32, margin: 0.0, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub embedder: ProjectionEmbedder<T>,
    /// Mean loss of each epoch, measured during the epoch's forward passes.
    pub loss_trace: Vec<f64>,
    /// Pairs skipped because one side had no tokens.
    pub skipped: usize,
}

/// Mini-batch gradient descent on the cosine embedding loss through a
/// shared projection matrix, starting from the identity.
///
/// For a pair `(x1, x2)` of hashing features the loss is taken on
/// `(W x1, W x2)`; the gradient with respect to `W` is
/// `g1 x1^T + g2 x2^T`, averaged over the batch.
pub fn train_projection<T: Real>(
    pairs: &[TrainingPair],
    base: HashingEmbedder,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>, EmbedError> {
    if pairs.is_empty() {
        return Err(EmbedError::EmptyTrainingSet);
    }
    let dim = base.dim;
    let margin = T::of(config.margin);
    let lr = T::of(config.learning_rate);
    let features: Vec<_> = pairs
        .iter()
        .map(|p| (base.normalized_sparse(&p.triplet), base.normalized_sparse(&p.path), p.label))
        .filter(|(a, b, _)| !a.is_empty() && !b.is_empty())
        .collect();
    let skipped = pairs.len() - features.len();
    let mut weights = ProjectionEmbedder::<T>::identity(base).weights().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let batch_size = config.batch_size.max(1);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut counted = 0usize;
        for batch in order.chunks(batch_size) {
            let mut grad = vec![T::zero(); dim * dim];
            let mut used = 0usize;
            for &i in batch {
                let (x1, x2, y) = &features[i];
                let u1 = Embedding::new(project_sparse(&weights, dim, x1));
                let u2 = Embedding::new(project_sparse(&weights, dim, x2));
                let Ok((g1, g2)) = loss_gradient(&u1, &u2, *y, margin) else {
                    // projection collapsed this input; no direction to follow
                    continue;
                };
                epoch_loss += cosine_embedding_loss(&u1, &u2, *y, margin)?.as_f64();
                counted += 1;
                used += 1;
                accumulate_outer(&mut grad, dim, &g1.values, x1);
                accumulate_outer(&mut grad, dim, &g2.values, x2);
            }
            if used == 0 {
                continue;
            }
            let step = lr / T::of(used as f64);
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w = *w - step * *g;
            }
        }
        loss_trace.push(if counted > 0 { epoch_loss / counted as f64 } else { 0.0 });
    }

    Ok(TrainOutcome { embedder: ProjectionEmbedder::from_weights(base, weights)?, loss_trace, skipped })
}

/// `grad += g x^T` for sparse `x`.
fn accumulate_outer<T: Real>(grad: &mut [T], dim: usize, g: &[T], x: &[(usize, f64)]) {
    for (row, &gr) in g.iter().enumerate() {
        if gr.is_zero() {
            continue;
        }
        let base = row * dim;
        for &(j, v) in x {
            grad[base + j] = grad[base + j] + gr * T::of(v);
        }
    }
}
