//! Relation-path support, coverage and confidence.
//!
//! All metrics count walks (revisits allowed) and are kept as exact integer
//! ratios; they become floating point only when compared to a filter
//! threshold. Two counting modes exist:
//!
//! * [`Mode::Equation`]: coverage is `supp / walks of the same length from
//!   the head`, confidence is `supp / walks matching the relation path that
//!   end anywhere except the head`.
//! * [`Mode::Algorithm`]: coverage counts every same-length walk that reaches
//!   the tail, whatever its relations; confidence counts every completed
//!   matching walk in the denominator, including walks back to the head.
//!
//! Tail-side metrics are head-side metrics on the reversed graph with head and
//! tail swapped and the relation path read backwards.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EntityId, KnowledgeGraph, Triplet};
use crate::paths::{count_walks_by_length, Exclusion, PathAcceptor, ReasoningPath, RelationPath};

/// Longest relation path the metrics accept by default (search depth L).
pub const DEFAULT_MAX_PATH_LEN: usize = 5;
/// Default threshold of the coverage filter.
pub const COVERAGE_THRESHOLD: f64 = 1e-5;
/// Default threshold of the confidence filter.
pub const CONFIDENCE_THRESHOLD: f64 = 5e-3;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("relation path is empty")]
    EmptyRelationPath,
    #[error("relation path of length {len} exceeds the configured maximum {max}")]
    PathTooLong { len: usize, max: usize },
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("unknown {what} `{value}`; expected one of {expected}")]
    UnknownVariant { what: &'static str, value: String, expected: &'static str },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
    /// Both sides must pass; the score is the smaller of the two.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Equation,
    Algorithm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    None,
    Coverage,
    Confidence,
}

macro_rules! str_enum {
    ($ty:ident, $what:literal, $($name:literal => $var:ident),+) => {
        impl FromStr for $ty {
            type Err = MetricsError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($ty::$var),)+
                    _ => Err(MetricsError::UnknownVariant {
                        what: $what,
                        value: s.to_owned(),
                        expected: concat!($($name, " "),+),
                    }),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$var => $name,)+ })
            }
        }
    };
}

str_enum!(Side, "side", "head" => Head, "tail" => Tail, "both" => Both);
str_enum!(Mode, "mode", "equation" => Equation, "algorithm" => Algorithm);
str_enum!(FilterKind, "filter kind", "none" => None, "coverage" => Coverage, "confidence" => Confidence);

impl FilterKind {
    pub fn default_threshold(self) -> f64 {
        match self {
            FilterKind::None => 0.0,
            FilterKind::Coverage => COVERAGE_THRESHOLD,
            FilterKind::Confidence => CONFIDENCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    /// Nothing to divide by; the ratio is reported as 0.
    ZeroDenominator,
    /// Head or tail is not an entity of the graph.
    UnknownEntity,
    /// Head equals tail, so the equation-mode confidence denominator cannot
    /// contain the numerator; reported as 0.
    SelfLoopQuery,
}

/// Exact ratio of walk counts. `numerator` and `denominator` are the raw
/// counts, not reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metric {
    pub numerator: u128,
    pub denominator: u128,
    pub degenerate: Option<Degenerate>,
}

impl Metric {
    fn of(numerator: u128, denominator: u128) -> Self {
        if denominator == 0 {
            return Self::degenerate(Degenerate::ZeroDenominator);
        }
        Metric { numerator, denominator, degenerate: None }
    }

    fn degenerate(kind: Degenerate) -> Self {
        Metric { numerator: 0, denominator: 0, degenerate: Some(kind) }
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate.is_some()
    }

    pub fn ratio(&self) -> Ratio<u128> {
        if self.denominator == 0 {
            Ratio::from_integer(0)
        } else {
            Ratio::new(self.numerator, self.denominator)
        }
    }

    pub fn to_f64(&self) -> f64 {
        if self.denominator == 0 {
            0.0
        } else {
            self.numerator as f64 / self.denominator as f64
        }
    }

    /// Exact comparison against `num / den` by cross multiplication; a zero
    /// denominator on either side stands for the value 0.
    pub fn equals_fraction(&self, num: u128, den: u128) -> bool {
        match (self.denominator, den) {
            (0, 0) => true,
            (0, _) => num == 0,
            (_, 0) => self.numerator == 0,
            (d, _) => self.numerator * den == num * d,
        }
    }

    fn min(self, other: Metric) -> Metric {
        if self.ratio() <= other.ratio() {
            self
        } else {
            other
        }
    }
}

/// Support count with an optional diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub count: u128,
    pub degenerate: Option<Degenerate>,
}

/// All metrics of one relation path for one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathMetrics {
    pub support: u128,
    pub coverage_head: Metric,
    pub coverage_tail: Metric,
    pub confidence_head: Metric,
    pub confidence_tail: Metric,
}

impl PathMetrics {
    pub fn coverage(&self, side: Side) -> Metric {
        pick(self.coverage_head, self.coverage_tail, side)
    }

    pub fn confidence(&self, side: Side) -> Metric {
        pick(self.confidence_head, self.confidence_tail, side)
    }
}

fn pick(head: Metric, tail: Metric, side: Side) -> Metric {
    match side {
        Side::Head => head,
        Side::Tail => tail,
        Side::Both => head.min(tail),
    }
}

/// Metric computations over one graph, with the reversed graph built lazily
/// the first time a tail-side metric is requested.
#[derive(Debug, Clone)]
pub struct MetricEngine {
    graph: Arc<KnowledgeGraph>,
    reversed: Arc<OnceLock<KnowledgeGraph>>,
    max_len: usize,
}

/// Walk counts grouped by end entity.
type EndCounts = HashMap<EntityId, u128>;

impl MetricEngine {
    pub fn new(graph: Arc<KnowledgeGraph>) -> Self {
        Self::with_max_len(graph, DEFAULT_MAX_PATH_LEN)
    }

    pub fn with_max_len(graph: Arc<KnowledgeGraph>, max_len: usize) -> Self {
        MetricEngine { graph, reversed: Arc::new(OnceLock::new()), max_len }
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn reversed(&self) -> &KnowledgeGraph {
        self.reversed.get_or_init(|| self.graph.reverse_graph())
    }

    fn check(&self, rp: &RelationPath) -> Result<(), MetricsError> {
        if rp.is_empty() {
            return Err(MetricsError::EmptyRelationPath);
        }
        if rp.len() > self.max_len {
            return Err(MetricsError::PathTooLong { len: rp.len(), max: self.max_len });
        }
        Ok(())
    }

    /// Graph, query and relation path as seen from the requested side.
    fn oriented(&self, query: &Triplet, rp: &RelationPath, side: Side) -> (&KnowledgeGraph, Triplet, RelationPath) {
        match side {
            Side::Tail => (self.reversed(), Triplet::new(query.tail, query.relation, query.head), rp.reversed()),
            _ => (&self.graph, *query, rp.clone()),
        }
    }

    pub fn support(&self, query: &Triplet, rp: &RelationPath) -> Result<Support, MetricsError> {
        self.check(rp)?;
        if !self.known(query) {
            return Ok(Support { count: 0, degenerate: Some(Degenerate::UnknownEntity) });
        }
        let ends = follow(&self.graph, query, rp);
        Ok(Support { count: ends.get(&query.tail).copied().unwrap_or(0), degenerate: None })
    }

    pub fn coverage(&self, query: &Triplet, rp: &RelationPath, side: Side, mode: Mode) -> Result<Metric, MetricsError> {
        if side == Side::Both {
            let h = self.coverage(query, rp, Side::Head, mode)?;
            let t = self.coverage(query, rp, Side::Tail, mode)?;
            return Ok(h.min(t));
        }
        self.check(rp)?;
        if !self.known(query) {
            return Ok(Metric::degenerate(Degenerate::UnknownEntity));
        }
        let (g, q, rp) = self.oriented(query, rp, side);
        Ok(head_coverage(g, &q, &rp, mode))
    }

    pub fn confidence(
        &self,
        query: &Triplet,
        rp: &RelationPath,
        side: Side,
        mode: Mode,
    ) -> Result<Metric, MetricsError> {
        if side == Side::Both {
            let h = self.confidence(query, rp, Side::Head, mode)?;
            let t = self.confidence(query, rp, Side::Tail, mode)?;
            return Ok(h.min(t));
        }
        self.check(rp)?;
        if !self.known(query) {
            return Ok(Metric::degenerate(Degenerate::UnknownEntity));
        }
        let (g, q, rp) = self.oriented(query, rp, side);
        Ok(head_confidence(g, &q, &rp, mode))
    }

    /// Support plus coverage and confidence on both sides.
    pub fn path_metrics(&self, query: &Triplet, rp: &RelationPath, mode: Mode) -> Result<PathMetrics, MetricsError> {
        Ok(PathMetrics {
            support: self.support(query, rp)?.count,
            coverage_head: self.coverage(query, rp, Side::Head, mode)?,
            coverage_tail: self.coverage(query, rp, Side::Tail, mode)?,
            confidence_head: self.confidence(query, rp, Side::Head, mode)?,
            confidence_tail: self.confidence(query, rp, Side::Tail, mode)?,
        })
    }

    fn known(&self, query: &Triplet) -> bool {
        self.graph.contains_entity(query.head) && self.graph.contains_entity(query.tail)
    }
}

/// Counts walks from the query head whose relation sequence equals `rp`,
/// grouped by end entity. The query edge and its mirror are never used.
fn follow(g: &KnowledgeGraph, query: &Triplet, rp: &RelationPath) -> EndCounts {
    let excluded = Exclusion::query(*query);
    let mut frontier: EndCounts = HashMap::from([(query.head, 1)]);
    for &rel in &rp.0 {
        let mut next: EndCounts = HashMap::new();
        for (&u, &count) in &frontier {
            for e in g.edges_from(u) {
                if e.relation == rel && !excluded.contains(u, rel, e.target) {
                    *next.entry(e.target).or_default() += count;
                }
            }
        }
        if next.is_empty() {
            return next;
        }
        frontier = next;
    }
    frontier
}

fn head_coverage(g: &KnowledgeGraph, query: &Triplet, rp: &RelationPath, mode: Mode) -> Metric {
    let walks = count_walks_by_length(g, query.head, rp.len(), Some(*query)).expect("head checked by caller");
    let total = walks.total_at(rp.len());
    let numerator = match mode {
        Mode::Equation => follow(g, query, rp).get(&query.tail).copied().unwrap_or(0),
        Mode::Algorithm => walks.get(query.tail, rp.len()),
    };
    Metric::of(numerator, total)
}

fn head_confidence(g: &KnowledgeGraph, query: &Triplet, rp: &RelationPath, mode: Mode) -> Metric {
    let ends = follow(g, query, rp);
    let support = ends.get(&query.tail).copied().unwrap_or(0);
    let denominator: u128 = match mode {
        Mode::Equation => {
            if query.head == query.tail {
                return Metric::degenerate(Degenerate::SelfLoopQuery);
            }
            ends.iter().filter(|(e, _)| **e != query.head).map(|(_, c)| *c).sum()
        }
        Mode::Algorithm => ends.values().sum(),
    };
    Metric::of(support, denominator)
}

/// Path filter configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathFilter {
    pub kind: FilterKind,
    pub mode: Mode,
    pub side: Side,
    pub threshold: f64,
}

pub fn make_filter(kind: FilterKind, mode: Mode, side: Side, threshold: f64) -> Result<PathFilter, MetricsError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::Threshold(threshold));
    }
    Ok(PathFilter { kind, mode, side, threshold })
}

impl PathFilter {
    pub fn none() -> Self {
        PathFilter { kind: FilterKind::None, mode: Mode::Algorithm, side: Side::Head, threshold: 0.0 }
    }

    /// Score of `path` for `query`; 1 for the pass-through filter.
    pub fn score(&self, engine: &MetricEngine, query: &Triplet, path: &ReasoningPath) -> Result<f64, MetricsError> {
        let rp = path.relation_path();
        Ok(match self.kind {
            FilterKind::None => 1.0,
            FilterKind::Coverage => engine.coverage(query, &rp, self.side, self.mode)?.to_f64(),
            FilterKind::Confidence => engine.confidence(query, &rp, self.side, self.mode)?.to_f64(),
        })
    }
}

/// A filter bound to a metric engine, memoizing scores per
/// `(query, relation path)` for the lifetime of one extraction session.
pub struct FilterSession<'e> {
    engine: &'e MetricEngine,
    filter: PathFilter,
    memo: Option<HashMap<(Triplet, RelationPath), f64>>,
    errors: usize,
}

impl<'e> FilterSession<'e> {
    pub fn new(engine: &'e MetricEngine, filter: PathFilter) -> Self {
        FilterSession { engine, filter, memo: Some(HashMap::new()), errors: 0 }
    }

    /// Same as [`FilterSession::new`] but recomputes every score.
    pub fn without_memo(engine: &'e MetricEngine, filter: PathFilter) -> Self {
        FilterSession { memo: None, ..Self::new(engine, filter) }
    }

    pub fn filter(&self) -> &PathFilter {
        &self.filter
    }

    /// Number of paths rejected because their metric could not be computed.
    pub fn errors(&self) -> usize {
        self.errors
    }

    pub fn score(&mut self, query: &Triplet, path: &ReasoningPath) -> Result<f64, MetricsError> {
        if self.filter.kind == FilterKind::None {
            return Ok(1.0);
        }
        let key = (*query, path.relation_path());
        if let Some(v) = self.memo.as_ref().and_then(|m| m.get(&key)) {
            return Ok(*v);
        }
        let v = self.filter.score(self.engine, query, path)?;
        if let Some(m) = self.memo.as_mut() {
            m.insert(key, v);
        }
        Ok(v)
    }
}

impl PathAcceptor for FilterSession<'_> {
    fn accepts(&mut self, query: &Triplet, path: &ReasoningPath) -> bool {
        match self.score(query, path) {
            Ok(s) => s >= self.filter.threshold,
            Err(_) => {
                self.errors += 1;
                false
            }
        }
    }
}

/// One CSV row of metrics output.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub query: Triplet,
    pub relation_path: RelationPath,
    pub metrics: PathMetrics,
}

/// Writes `headKey,relKey,tailKey,relationPath,support,coverage,confidence`
/// rows, reporting the metrics of `side`.
pub fn write_metrics_csv<W: Write>(
    mut w: W,
    g: &KnowledgeGraph,
    rows: &[MetricsRow],
    side: Side,
) -> Result<(), MetricsError> {
    writeln!(w, "headKey,relKey,tailKey,relationPath,support,coverage,confidence")?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            csv_field(g.entity_key(row.query.head)),
            csv_field(&g.relation_label(row.query.relation)),
            csv_field(g.entity_key(row.query.tail)),
            csv_field(&row.relation_path.label(g)),
            row.metrics.support,
            row.metrics.coverage(side).to_f64(),
            row.metrics.confidence(side).to_f64()
        )?;
    }
    Ok(())
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
