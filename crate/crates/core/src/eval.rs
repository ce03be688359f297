//! Ranked evaluation: negative sampling, per-query ranks, MRR and Hit@1.
//!
//! Each positive triplet is ranked against its own candidate set of
//! negatives (typically 49, for 50 candidates per query).

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::ScoredTriplet;
use crate::graph::{EntityId, KnowledgeGraph, Triplet};
use crate::metrics::csv_field;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("asked for {requested} negatives but only {achievable} valid corruptions exist")]
    NotEnoughNegatives { requested: usize, achievable: usize },
    #[error("negative count must be >= 1")]
    ZeroNegatives,
    #[error("evaluation dataset is empty")]
    EmptyDataset,
    #[error("query {0} has no negatives")]
    NoNegatives(usize),
    #[error("unknown {what} `{value}`")]
    UnknownVariant { what: &'static str, value: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionMode {
    Head,
    Tail,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// Ties count against the positive.
    Pessimistic,
    /// Ties count for the positive.
    Optimistic,
    /// Midpoint of the two; may be half-integral.
    Average,
}

impl std::str::FromStr for CorruptionMode {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "head" => Ok(CorruptionMode::Head),
            "tail" => Ok(CorruptionMode::Tail),
            "both" => Ok(CorruptionMode::Both),
            _ => Err(EvalError::UnknownVariant { what: "corruption mode", value: s.to_owned() }),
        }
    }
}

impl std::str::FromStr for TiePolicy {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pessimistic" => Ok(TiePolicy::Pessimistic),
            "optimistic" => Ok(TiePolicy::Optimistic),
            "average" => Ok(TiePolicy::Average),
            _ => Err(EvalError::UnknownVariant { what: "tie policy", value: s.to_owned() }),
        }
    }
}

impl std::fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TiePolicy::Pessimistic => "pessimistic",
            TiePolicy::Optimistic => "optimistic",
            TiePolicy::Average => "average",
        })
    }
}

impl std::fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorruptionMode::Head => "head",
            CorruptionMode::Tail => "tail",
            CorruptionMode::Both => "both",
        })
    }
}

/// Draws `n` distinct negatives by replacing the head and/or tail of
/// `positive` with entities of `g`, uniformly among corruptions that are
/// not facts of `g`.
pub fn generate_negatives(
    g: &KnowledgeGraph,
    positive: &Triplet,
    n: usize,
    seed: u64,
    mode: CorruptionMode,
) -> Result<Vec<Triplet>, EvalError> {
    if n == 0 {
        return Err(EvalError::ZeroNegatives);
    }
    let entities = (0..g.num_entities() as u32).map(EntityId);
    let mut pool = Vec::new();
    if matches!(mode, CorruptionMode::Tail | CorruptionMode::Both) {
        pool.extend(entities.clone().map(|e| Triplet::new(positive.head, positive.relation, e)));
    }
    if matches!(mode, CorruptionMode::Head | CorruptionMode::Both) {
        pool.extend(entities.map(|e| Triplet::new(e, positive.relation, positive.tail)));
    }
    pool.sort_unstable();
    pool.dedup();
    pool.retain(|t| t != positive && !g.contains(t));
    if pool.len() < n {
        return Err(EvalError::NotEnoughNegatives { requested: n, achievable: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i]).collect())
}

/// Problem found while reading a negatives file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineDiagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NegativeSets {
    pub sets: IndexMap<Triplet, Vec<Triplet>>,
    pub diagnostics: Vec<LineDiagnostic>,
}

impl NegativeSets {
    pub fn negative_count(&self) -> usize {
        self.sets.values().map(Vec::len).sum()
    }
}

/// Reads blocks of `POS<TAB>h<TAB>r<TAB>t` followed by
/// `NEG<TAB>h<TAB>r<TAB>t` lines (the triplet may also be one
/// space-separated column). Lines with unknown keys are skipped and reported.
pub fn load_negatives(path: &Path, g: &KnowledgeGraph) -> Result<NegativeSets, EvalError> {
    read_negatives(BufReader::new(File::open(path)?), g)
}

pub fn read_negatives<R: BufRead>(r: R, g: &KnowledgeGraph) -> Result<NegativeSets, EvalError> {
    let mut out = NegativeSets::default();
    let mut current: Option<Triplet> = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut diag = |message: String| {
            out.diagnostics.push(LineDiagnostic { line: line_no, message });
        };
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let (tag, keys): (&str, Vec<&str>) = match cols.as_slice() {
            [tag, h, r, t] => (tag, vec![h, r, t]),
            [tag, rest] => (tag, rest.split_whitespace().collect()),
            _ => {
                diag(format!("expected 4 columns, found {}", cols.len()));
                continue;
            }
        };
        if keys.len() != 3 {
            diag(format!("expected a head, relation and tail, found {} fields", keys.len()));
            continue;
        }
        let triplet = match g.triplet(keys[0], keys[1], keys[2]) {
            Ok(t) => Some(t),
            Err(e) => {
                diag(e.to_string());
                None
            }
        };
        match tag.to_ascii_uppercase().as_str() {
            "POS" => {
                current = triplet;
                if let Some(t) = triplet {
                    out.sets.entry(t).or_default();
                }
            }
            "NEG" => match (current, triplet) {
                (Some(pos), Some(neg)) => out.sets.get_mut(&pos).expect("inserted").push(neg),
                (None, Some(_)) => diag("negative without a valid preceding positive".into()),
                _ => {}
            },
            other => diag(format!("unknown tag `{other}`")),
        }
    }
    Ok(out)
}

pub fn write_negatives<W: Write>(
    mut w: W,
    g: &KnowledgeGraph,
    sets: &[(Triplet, Vec<Triplet>)],
) -> std::io::Result<()> {
    let line =
        |t: &Triplet| format!("{}\t{}\t{}", g.entity_key(t.head), g.relation_label(t.relation), g.entity_key(t.tail));
    for (pos, negs) in sets {
        writeln!(w, "POS\t{}", line(pos))?;
        for n in negs {
            writeln!(w, "NEG\t{}", line(n))?;
        }
    }
    Ok(())
}

/// Rank of the positive among its candidates (1 is best).
pub fn rank_query<S: PartialOrd>(positive: S, negatives: &[S], tie: TiePolicy) -> f64 {
    let better = negatives.iter().filter(|s| **s > positive).count() as f64;
    let tied = negatives.iter().filter(|s| **s == positive).count() as f64;
    match tie {
        TiePolicy::Pessimistic => 1.0 + better + tied,
        TiePolicy::Optimistic => 1.0 + better,
        TiePolicy::Average => 1.0 + better + tied / 2.0,
    }
}

/// Something that carries a ranking score.
pub trait Scored {
    fn score(&self) -> f64;
}

impl Scored for f64 {
    fn score(&self) -> f64 {
        *self
    }
}

impl Scored for f32 {
    fn score(&self) -> f64 {
        f64::from(*self)
    }
}

impl<T: crate::scalar::Real> Scored for ScoredTriplet<T> {
    fn score(&self) -> f64 {
        self.score.as_f64()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedQuery<S> {
    pub positive: S,
    pub negatives: Vec<S>,
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult<S> {
    pub per_query: Vec<RankedQuery<S>>,
    pub mrr: f64,
    pub hit_at_1: f64,
    pub tie_policy: TiePolicy,
}

/// Scores every candidate with `scorer`, ranks each positive within its
/// candidate set and aggregates MRR and Hit@1.
pub fn evaluate<S, E, F>(
    dataset: &[(Triplet, Vec<Triplet>)],
    mut scorer: F,
    tie: TiePolicy,
) -> Result<RankingResult<S>, E>
where
    S: Scored,
    E: From<EvalError>,
    F: FnMut(&Triplet) -> Result<S, E>,
{
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset.into());
    }
    let mut per_query = Vec::with_capacity(dataset.len());
    for (i, (pos, negs)) in dataset.iter().enumerate() {
        if negs.is_empty() {
            return Err(EvalError::NoNegatives(i).into());
        }
        let positive = scorer(pos)?;
        let negatives = negs.iter().map(&mut scorer).collect::<Result<Vec<S>, E>>()?;
        per_query.push(rank_scored(positive, negatives, tie));
    }
    Ok(aggregate(per_query, tie))
}

pub fn rank_scored<S: Scored>(positive: S, negatives: Vec<S>, tie: TiePolicy) -> RankedQuery<S> {
    let neg: Vec<f64> = negatives.iter().map(Scored::score).collect();
    let rank = rank_query(positive.score(), &neg, tie);
    RankedQuery { positive, negatives, rank }
}

pub fn aggregate<S>(per_query: Vec<RankedQuery<S>>, tie: TiePolicy) -> RankingResult<S> {
    let n = per_query.len() as f64;
    let mrr = per_query.iter().map(|q| 1.0 / q.rank).sum::<f64>() / n;
    let hit_at_1 = per_query.iter().filter(|q| q.rank == 1.0).count() as f64 / n;
    RankingResult { per_query, mrr, hit_at_1, tie_policy: tie }
}

/// Per-query line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub rank: f64,
    pub positive_score: f64,
    pub n_negatives: usize,
}

/// Results file: `{mrr, hit_at_1, n_queries, tie_policy, per_query}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub mrr: f64,
    pub hit_at_1: f64,
    pub n_queries: usize,
    pub tie_policy: TiePolicy,
    pub per_query: Vec<QueryReport>,
}

impl<T: crate::scalar::Real> RankingResult<ScoredTriplet<T>> {
    pub fn to_results_file(&self, g: &KnowledgeGraph) -> ResultsFile {
        ResultsFile {
            mrr: self.mrr,
            hit_at_1: self.hit_at_1,
            n_queries: self.per_query.len(),
            tie_policy: self.tie_policy,
            per_query: self
                .per_query
                .iter()
                .map(|q| {
                    let t = q.positive.triplet;
                    QueryReport {
                        head: g.entity_key(t.head).to_owned(),
                        relation: g.relation_label(t.relation),
                        tail: g.entity_key(t.tail).to_owned(),
                        rank: q.rank,
                        positive_score: q.positive.score.as_f64(),
                        n_negatives: q.negatives.len(),
                    }
                })
                .collect(),
        }
    }
}

impl ResultsFile {
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<(), EvalError> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_ranks_csv<W: Write>(&self, mut w: W) -> Result<(), EvalError> {
        writeln!(w, "head,relation,tail,rank,positive_score,n_negatives")?;
        for q in &self.per_query {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                csv_field(&q.head),
                csv_field(&q.relation),
                csv_field(&q.tail),
                q.rank,
                q.positive_score,
                q.n_negatives
            )?;
        }
        Ok(())
    }
}
