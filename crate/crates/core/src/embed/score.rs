use serde::{Deserialize, Serialize};

use super::{cosine, EmbedError, Embedder};
use crate::graph::{KnowledgeGraph, Triplet};
use crate::paths::ReasoningPath;
use crate::scalar::Real;
use crate::verbalize::Verbalizer;

/// A candidate triplet scored by its best-matching path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriplet<T> {
    pub triplet: Triplet,
    pub paths: Vec<ReasoningPath>,
    pub per_path_scores: Vec<T>,
    /// Max over `per_path_scores`, or the similarity with the empty-path
    /// sentence when there are no paths.
    pub score: T,
    pub best_path_index: Option<usize>,
}

/// Scores `query` as the highest cosine similarity between its sentence and
/// any of its path sentences.
pub fn triplet_score<T: Real, E: Embedder<T> + ?Sized>(
    backend: &E,
    g: &KnowledgeGraph,
    verbalizer: &Verbalizer,
    query: &Triplet,
    paths: Vec<ReasoningPath>,
) -> Result<ScoredTriplet<T>, EmbedError> {
    let mut texts = vec![verbalizer.triplet_sentence(query, g).text];
    if paths.is_empty() {
        texts.push(verbalizer.empty_path_sentence().text);
    } else {
        texts.extend(paths.iter().map(|p| verbalizer.path_sentence(p, g).text));
    }
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let embeddings = backend.embed_batch(&refs)?;
    let (anchor, rest) = embeddings.split_first().expect("triplet embedding");
    let sims = rest.iter().map(|e| cosine(anchor, e).map(|s| s.value)).collect::<Result<Vec<T>, _>>()?;

    if paths.is_empty() {
        return Ok(ScoredTriplet {
            triplet: *query,
            paths,
            per_path_scores: Vec::new(),
            score: sims[0],
            best_path_index: None,
        });
    }
    let mut best = 0;
    for (i, s) in sims.iter().enumerate() {
        if *s > sims[best] {
            best = i;
        }
    }
    Ok(ScoredTriplet { triplet: *query, score: sims[best], best_path_index: Some(best), per_path_scores: sims, paths })
}
