//! Reasoning paths between a query head and tail.
//!
//! [`extract_paths`] is a breadth-first search that expands every entity at
//! most once and emits a path each time an edge closes onto the query tail.
//! Because expansion is permanent, it finds a subset of the simple paths,
//! never an invalid one. [`count_walks_by_length`] is the walk-counting
//! dynamic program that the coverage metric is built on.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EntityId, GraphError, KnowledgeGraph, RelationId, Triplet};

/// Largest path length the brute-force enumerator accepts.
pub const ORACLE_MAX_LEN: usize = 6;
/// Largest graph (entity count) the brute-force enumerator accepts.
pub const ORACLE_MAX_ENTITIES: usize = 32;

#[derive(Debug, Error)]
pub enum PathError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid search limits: {0}")]
    Config(&'static str),
    #[error("brute-force enumeration refused: {0}")]
    OracleScale(String),
    #[error("path cache line {line}: {reason}")]
    Cache { line: usize, reason: String },
    #[error("path cache io: {0}")]
    Io(#[from] std::io::Error),
}

/// Alternating entity/relation walk `e0 -r1-> e1 ... -rn-> en`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub entities: Vec<EntityId>,
    pub relations: Vec<RelationId>,
}

impl ReasoningPath {
    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn head(&self) -> EntityId {
        self.entities[0]
    }

    pub fn tail(&self) -> EntityId {
        *self.entities.last().expect("path has at least one entity")
    }

    pub fn steps(&self) -> impl Iterator<Item = Triplet> + '_ {
        self.relations.iter().enumerate().map(|(i, &r)| Triplet::new(self.entities[i], r, self.entities[i + 1]))
    }

    pub fn relation_path(&self) -> RelationPath {
        RelationPath(self.relations.clone())
    }

    /// True when no entity repeats, except that the two endpoints may
    /// coincide (a cycle back to the head when head equals tail).
    pub fn is_simple(&self) -> bool {
        let n = self.entities.len();
        let mut seen = std::collections::HashSet::new();
        for (i, e) in self.entities.iter().enumerate() {
            if i == n - 1 && n > 1 && *e == self.entities[0] {
                continue;
            }
            if !seen.insert(*e) {
                return false;
            }
        }
        true
    }
}

/// Relation-only projection of a reasoning path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationPath(pub Vec<RelationId>);

impl RelationPath {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reversed(&self) -> RelationPath {
        RelationPath(self.0.iter().rev().copied().collect())
    }

    pub fn label(&self, g: &KnowledgeGraph) -> String {
        self.0.iter().map(|&r| g.relation_label(r)).collect::<Vec<_>>().join("|")
    }
}

/// The edges a query may not use: the query fact itself and, when inverse
/// edges exist, its mirror.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exclusion {
    edges: [Triplet; 2],
}

impl Exclusion {
    pub fn query(query: Triplet) -> Self {
        Exclusion { edges: [query, query.mirrored()] }
    }

    pub fn contains(&self, u: EntityId, relation: RelationId, v: EntityId) -> bool {
        let t = Triplet::new(u, relation, v);
        self.edges[0] == t || self.edges[1] == t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchLimits {
    pub max_depth: usize,
    pub max_paths: usize,
}

impl SearchLimits {
    pub fn new(max_depth: usize, max_paths: usize) -> Result<Self, PathError> {
        if max_depth < 1 {
            return Err(PathError::Config("max depth L must be >= 1"));
        }
        if max_paths < 1 {
            return Err(PathError::Config("max paths M must be >= 1"));
        }
        Ok(SearchLimits { max_depth, max_paths })
    }
}

/// Decides whether an extracted path is kept.
pub trait PathAcceptor {
    fn accepts(&mut self, query: &Triplet, path: &ReasoningPath) -> bool;
}

/// Keeps every path.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl PathAcceptor for AcceptAll {
    fn accepts(&mut self, _: &Triplet, _: &ReasoningPath) -> bool {
        true
    }
}

impl<F: FnMut(&Triplet, &ReasoningPath) -> bool> PathAcceptor for F {
    fn accepts(&mut self, query: &Triplet, path: &ReasoningPath) -> bool {
        self(query, path)
    }
}

/// Breadth-first path extraction with synchronous filtering.
///
/// Edges are explored in [`KnowledgeGraph::neighbors_by_relation_frequency`]
/// order. An entity is marked visited when pushed and never expanded again;
/// the tail itself is never pushed, so it can be reached once per parent.
/// The search stops once more than `max_paths` paths are collected, and the
/// result is truncated to `max_paths`.
pub fn extract_paths<F: PathAcceptor + ?Sized>(
    g: &KnowledgeGraph,
    query: &Triplet,
    filter: &mut F,
    limits: SearchLimits,
) -> Result<Vec<ReasoningPath>, PathError> {
    let h = query.head;
    let t = query.tail;
    if !g.contains_entity(h) {
        return Err(GraphError::UnknownEntity(h.0).into());
    }
    let excluded = Exclusion::query(*query);
    let mut out = Vec::new();
    if !g.contains_entity(t) {
        return Ok(out);
    }

    let mut visited = vec![false; g.num_entities()];
    // predecessor entity and the relation used to reach it
    let mut prev: HashMap<EntityId, (EntityId, RelationId)> = HashMap::new();
    let mut queue = VecDeque::new();
    queue.push_back((h, 0usize));
    visited[h.index()] = true;

    'search: while let Some((u, depth)) = queue.pop_front() {
        if depth >= limits.max_depth {
            continue;
        }
        for edge in g.neighbors_by_relation_frequency(u)? {
            let v = edge.target;
            if excluded.contains(u, edge.relation, v) {
                continue;
            }
            if v == t {
                let path = reconstruct(&prev, h, u, edge.relation, t);
                if filter.accepts(query, &path) {
                    out.push(path);
                }
            } else if !visited[v.index()] {
                visited[v.index()] = true;
                prev.insert(v, (u, edge.relation));
                queue.push_back((v, depth + 1));
            }
            if out.len() > limits.max_paths {
                break 'search;
            }
        }
    }
    out.truncate(limits.max_paths);
    Ok(out)
}

fn reconstruct(
    prev: &HashMap<EntityId, (EntityId, RelationId)>,
    h: EntityId,
    last: EntityId,
    closing: RelationId,
    t: EntityId,
) -> ReasoningPath {
    let mut entities = vec![t, last];
    let mut relations = vec![closing];
    let mut cur = last;
    while cur != h {
        let (p, r) = prev[&cur];
        relations.push(r);
        entities.push(p);
        cur = p;
    }
    entities.reverse();
    relations.reverse();
    ReasoningPath { entities, relations }
}

/// Number of walks of each length from a fixed source to every entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkCountTable {
    source: EntityId,
    /// `by_depth[d][e]`
    by_depth: Vec<Vec<u128>>,
}

impl WalkCountTable {
    pub fn source(&self) -> EntityId {
        self.source
    }

    pub fn max_len(&self) -> usize {
        self.by_depth.len() - 1
    }

    pub fn get(&self, e: EntityId, depth: usize) -> u128 {
        self.by_depth.get(depth).and_then(|row| row.get(e.index())).copied().unwrap_or(0)
    }

    /// Walks of length `depth` ending anywhere.
    pub fn total_at(&self, depth: usize) -> u128 {
        self.by_depth.get(depth).map(|r| r.iter().sum()).unwrap_or(0)
    }

    /// Nonzero entries as `(entity, depth, count)`.
    pub fn nonzero(&self) -> impl Iterator<Item = (EntityId, usize, u128)> + '_ {
        self.by_depth.iter().enumerate().flat_map(|(d, row)| {
            row.iter().enumerate().filter(|(_, &c)| c > 0).map(move |(e, &c)| (EntityId(e as u32), d, c))
        })
    }
}

/// Counts walks (revisits allowed) of length `0..=max_len` from `source`,
/// never using `excluded` or its inverse mirror.
pub fn count_walks_by_length(
    g: &KnowledgeGraph,
    source: EntityId,
    max_len: usize,
    excluded: Option<Triplet>,
) -> Result<WalkCountTable, PathError> {
    if !g.contains_entity(source) {
        return Err(GraphError::UnknownEntity(source.0).into());
    }
    let excluded = excluded.map(Exclusion::query);
    let n = g.num_entities();
    let mut by_depth = Vec::with_capacity(max_len + 1);
    let mut seed = vec![0u128; n];
    seed[source.index()] = 1;
    by_depth.push(seed);
    for _ in 0..max_len {
        let cur = by_depth.last().expect("seeded");
        let mut next = vec![0u128; n];
        for (u, &count) in cur.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let u = EntityId(u as u32);
            for e in g.edges_from(u) {
                if excluded.is_some_and(|x| x.contains(u, e.relation, e.target)) {
                    continue;
                }
                next[e.target.index()] += count;
            }
        }
        by_depth.push(next);
    }
    Ok(WalkCountTable { source, by_depth })
}

fn oracle_guard(g: &KnowledgeGraph, len: usize) -> Result<(), PathError> {
    if len > ORACLE_MAX_LEN {
        return Err(PathError::OracleScale(format!("length {len} exceeds {ORACLE_MAX_LEN}")));
    }
    if g.num_entities() > ORACLE_MAX_ENTITIES {
        return Err(PathError::OracleScale(format!("{} entities exceeds {ORACLE_MAX_ENTITIES}", g.num_entities())));
    }
    Ok(())
}

/// Every walk of exactly `len` steps from `h`, by exhaustive depth-first
/// search. Test oracle; refuses large inputs.
pub fn enumerate_walks_bruteforce(
    g: &KnowledgeGraph,
    h: EntityId,
    len: usize,
    excluded: Option<Triplet>,
) -> Result<Vec<ReasoningPath>, PathError> {
    oracle_guard(g, len)?;
    if !g.contains_entity(h) {
        return Err(GraphError::UnknownEntity(h.0).into());
    }
    let mut out = Vec::new();
    if len == 0 {
        return Ok(out);
    }
    let excluded = excluded.map(Exclusion::query);
    let mut entities = vec![h];
    let mut relations = Vec::new();
    dfs(g, len, &excluded, &mut entities, &mut relations, &mut out);
    Ok(out)
}

fn dfs(
    g: &KnowledgeGraph,
    len: usize,
    excluded: &Option<Exclusion>,
    entities: &mut Vec<EntityId>,
    relations: &mut Vec<RelationId>,
    out: &mut Vec<ReasoningPath>,
) {
    if relations.len() == len {
        out.push(ReasoningPath { entities: entities.clone(), relations: relations.clone() });
        return;
    }
    let u = *entities.last().expect("nonempty");
    for e in g.edges_from(u) {
        if excluded.is_some_and(|x| x.contains(u, e.relation, e.target)) {
            continue;
        }
        entities.push(e.target);
        relations.push(e.relation);
        dfs(g, len, excluded, entities, relations, out);
        entities.pop();
        relations.pop();
    }
}

/// Every walk of exactly `len` steps from `h` to `t`.
pub fn enumerate_paths_bruteforce(
    g: &KnowledgeGraph,
    h: EntityId,
    t: EntityId,
    len: usize,
    excluded: Option<Triplet>,
) -> Result<Vec<ReasoningPath>, PathError> {
    Ok(enumerate_walks_bruteforce(g, h, len, excluded)?.into_iter().filter(|p| p.tail() == t).collect())
}

/// Extracted paths for one candidate triplet, as cached between stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSet {
    /// Index of the positive query this candidate belongs to.
    pub group: usize,
    /// +1 for the positive, -1 for a negative candidate.
    pub label: i8,
    pub query: Triplet,
    pub paths: Vec<ReasoningPath>,
}

const QUERY_MARK: &str = "?";

/// Writes path sets as text: a `?<TAB>group<TAB>label<TAB>h<TAB>r<TAB>t`
/// header per candidate followed by one line per path with alternating
/// entity and relation keys.
pub fn write_path_sets<W: Write>(mut w: W, g: &KnowledgeGraph, sets: &[PathSet]) -> Result<(), PathError> {
    for set in sets {
        writeln!(
            w,
            "{QUERY_MARK}\t{}\t{}\t{}\t{}\t{}",
            set.group,
            set.label,
            g.entity_key(set.query.head),
            g.relation_label(set.query.relation),
            g.entity_key(set.query.tail)
        )?;
        for p in &set.paths {
            let mut cols = vec![g.entity_key(p.entities[0]).to_owned()];
            for (i, &r) in p.relations.iter().enumerate() {
                cols.push(g.relation_label(r));
                cols.push(g.entity_key(p.entities[i + 1]).to_owned());
            }
            writeln!(w, "{}", cols.join("\t"))?;
        }
    }
    Ok(())
}

pub fn read_path_sets<R: BufRead>(r: R, g: &KnowledgeGraph) -> Result<Vec<PathSet>, PathError> {
    let mut sets: Vec<PathSet> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| PathError::Cache { line: i + 1, reason };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols[0] == QUERY_MARK {
            if cols.len() != 6 {
                return Err(bad(format!("header has {} columns", cols.len())));
            }
            let group = cols[1].parse().map_err(|e| bad(format!("group: {e}")))?;
            let label = cols[2].parse().map_err(|e| bad(format!("label: {e}")))?;
            let query = g.triplet(cols[3], cols[4], cols[5]).map_err(|e| bad(e.to_string()))?;
            sets.push(PathSet { group, label, query, paths: Vec::new() });
            continue;
        }
        if cols.len() < 3 || cols.len().is_multiple_of(2) {
            return Err(bad(format!("path line has {} columns", cols.len())));
        }
        let set = sets.last_mut().ok_or_else(|| bad("path before any query header".into()))?;
        let mut entities = Vec::new();
        let mut relations = Vec::new();
        for (j, c) in cols.iter().enumerate() {
            if j % 2 == 0 {
                entities.push(g.entity(c).map_err(|e| bad(e.to_string()))?);
            } else {
                relations.push(g.relation(c).map_err(|e| bad(e.to_string()))?);
            }
        }
        set.paths.push(ReasoningPath { entities, relations });
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A r1 B, B r2 C, A r1 D, D r2 C, A r3 C
    pub(crate) fn t1() -> KnowledgeGraph {
        KnowledgeGraph::from_triplets([
            ("A", "r1", "B"),
            ("B", "r2", "C"),
            ("A", "r1", "D"),
            ("D", "r2", "C"),
            ("A", "r3", "C"),
        ])
    }

    fn keys(g: &KnowledgeGraph, p: &ReasoningPath) -> String {
        let mut s = g.entity_key(p.entities[0]).to_owned();
        for (i, r) in p.relations.iter().enumerate() {
            s.push_str(&format!("-{}-{}", g.relation_label(*r), g.entity_key(p.entities[i + 1])));
        }
        s
    }

    #[test]
    fn t1_extraction_skips_query_edge() {
        let g = t1();
        let q = g.triplet("A", "r3", "C").unwrap();
        let paths = extract_paths(&g, &q, &mut AcceptAll, SearchLimits::new(5, 10).unwrap()).unwrap();
        let got: Vec<String> = paths.iter().map(|p| keys(&g, p)).collect();
        assert_eq!(got, vec!["A-r1-B-r2-C", "A-r1-D-r2-C"]);
    }

    #[test]
    fn only_query_edge_gives_nothing() {
        let g = KnowledgeGraph::from_triplets([("A", "r", "A")]).add_inverse_edges().unwrap();
        let q = g.triplet("A", "r", "A").unwrap();
        let paths = extract_paths(&g, &q, &mut AcceptAll, SearchLimits::new(5, 10).unwrap()).unwrap();
        assert!(paths.is_empty());
    }

    #[test]
    fn cap_of_one() {
        let g = t1();
        let q = g.triplet("A", "r3", "C").unwrap();
        let paths = extract_paths(&g, &q, &mut AcceptAll, SearchLimits::new(5, 1).unwrap()).unwrap();
        assert_eq!(paths.len(), 1);
    }

    #[test]
    fn rejects_bad_limits_and_unknown_head() {
        assert!(SearchLimits::new(0, 3).is_err());
        assert!(SearchLimits::new(3, 0).is_err());
        let g = t1();
        let q = Triplet::new(EntityId(77), g.relation("r1").unwrap(), EntityId(0));
        assert!(extract_paths(&g, &q, &mut AcceptAll, SearchLimits::new(2, 2).unwrap()).is_err());
    }

    #[test]
    fn unknown_tail_gives_no_paths() {
        let g = t1();
        let q = Triplet::new(g.entity("A").unwrap(), g.relation("r1").unwrap(), EntityId(99));
        let paths = extract_paths(&g, &q, &mut AcceptAll, SearchLimits::new(3, 3).unwrap()).unwrap();
        assert!(paths.is_empty());
    }

    #[test]
    fn walk_counts_on_t1() {
        let g = t1();
        let a = g.entity("A").unwrap();
        let c = g.entity("C").unwrap();
        let q = g.triplet("A", "r3", "C").unwrap();
        let table = count_walks_by_length(&g, a, 2, Some(q)).unwrap();
        assert_eq!(table.get(c, 2), 2);
        assert_eq!(table.get(c, 1), 0);
        assert_eq!(table.get(a, 0), 1);
    }

    #[test]
    fn zero_length_table_is_seed_only() {
        let g = t1();
        let a = g.entity("A").unwrap();
        let table = count_walks_by_length(&g, a, 0, None).unwrap();
        let entries: Vec<_> = table.nonzero().collect();
        assert_eq!(entries, vec![(a, 0, 1)]);
    }

    #[test]
    fn chain_has_unique_walk() {
        let g = KnowledgeGraph::from_triplets([("A", "r", "B"), ("B", "r", "C"), ("C", "r", "D")]);
        let a = g.entity("A").unwrap();
        let d = g.entity("D").unwrap();
        let table = count_walks_by_length(&g, a, 5, None).unwrap();
        for depth in 0..=5 {
            assert_eq!(table.get(d, depth), u128::from(depth == 3));
        }
    }

    #[test]
    fn bruteforce_on_t1() {
        let g = t1();
        let a = g.entity("A").unwrap();
        let c = g.entity("C").unwrap();
        let q = g.triplet("A", "r3", "C").unwrap();
        let two: Vec<String> =
            enumerate_paths_bruteforce(&g, a, c, 2, Some(q)).unwrap().iter().map(|p| keys(&g, p)).collect();
        assert_eq!(two.len(), 2);
        assert!(two.contains(&"A-r1-B-r2-C".to_owned()));
        assert!(two.contains(&"A-r1-D-r2-C".to_owned()));
        assert!(enumerate_paths_bruteforce(&g, a, c, 1, Some(q)).unwrap().is_empty());
        assert!(enumerate_paths_bruteforce(&g, a, c, 0, None).unwrap().is_empty());
        assert!(matches!(enumerate_paths_bruteforce(&g, a, c, 7, None), Err(PathError::OracleScale(_))));
    }

    #[test]
    fn path_cache_round_trip() {
        let g = t1().add_inverse_edges().unwrap();
        let q = g.triplet("A", "r3", "C").unwrap();
        let paths = extract_paths(&g, &q, &mut AcceptAll, SearchLimits::new(3, 5).unwrap()).unwrap();
        let sets = vec![
            PathSet { group: 0, label: 1, query: q, paths },
            PathSet { group: 0, label: -1, query: g.triplet("B", "r3", "D").unwrap(), paths: vec![] },
        ];
        let mut buf = Vec::new();
        write_path_sets(&mut buf, &g, &sets).unwrap();
        let back = read_path_sets(buf.as_slice(), &g).unwrap();
        assert_eq!(back, sets);
    }
}
