//! Random graphs, brute-force oracles and the property suites shared by the
//! integration tests and the acceptance target.

#![allow(dead_code)]

pub mod suites;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reasonpath::graph::{EntityId, KnowledgeGraph, RelationId, Triplet};

pub const MAX_ENTITIES: usize = 25;
pub const MAX_RELATIONS: usize = 5;
pub const MAX_EDGES: usize = 120;

/// A seeded random graph with inverse edges, plus the forward facts it was
/// built from and an oracle adjacency derived from those facts alone.
pub struct RandomGraph {
    pub seed: u64,
    pub g: KnowledgeGraph,
    pub facts: Vec<Triplet>,
    pub adj: Vec<Vec<(RelationId, EntityId)>>,
}

pub fn random_graph(seed: u64) -> RandomGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=MAX_ENTITIES);
    let n_rel = rng.random_range(1..=MAX_RELATIONS);
    let n_edges = rng.random_range(n..=MAX_EDGES.min(3 * n + 20));
    let mut raw = Vec::with_capacity(n_edges);
    while raw.len() < n_edges {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u == v {
            continue;
        }
        let r = rng.random_range(0..n_rel);
        raw.push((format!("e{u}"), format!("r{r}"), format!("e{v}")));
    }
    let base = KnowledgeGraph::from_triplets(raw.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));
    let g = base.add_inverse_edges().expect("fresh graph has no inverses");
    let mut facts: Vec<Triplet> = raw.iter().map(|(h, r, t)| g.triplet(h, r, t).expect("interned")).collect();
    facts.sort();
    facts.dedup();
    let mut adj = vec![Vec::new(); g.num_entities()];
    for f in &facts {
        adj[f.head.index()].push((f.relation, f.tail));
        adj[f.tail.index()].push((f.relation.inverse(), f.head));
    }
    RandomGraph { seed, g, facts, adj }
}

impl RandomGraph {
    /// Up to `limit` forward facts, spread over the fact list.
    pub fn queries(&self, limit: usize) -> Vec<Triplet> {
        let step = self.facts.len().div_ceil(limit).max(1);
        self.facts.iter().step_by(step).copied().collect()
    }

    /// In-edges of every entity: `(source, relation)` for each `source -r-> v`.
    pub fn in_adj(&self) -> Vec<Vec<(EntityId, RelationId)>> {
        let mut inc = vec![Vec::new(); self.adj.len()];
        for (u, list) in self.adj.iter().enumerate() {
            for &(r, v) in list {
                inc[v.index()].push((EntityId(u as u32), r));
            }
        }
        inc
    }
}

pub fn is_query_edge(q: &Triplet, u: EntityId, r: RelationId, v: EntityId) -> bool {
    (u, r, v) == (q.head, q.relation, q.tail) || (u, r, v) == (q.tail, q.relation.inverse(), q.head)
}

/// Walks of length `1..=max_len` out of `q.head`, avoiding the query edge and
/// its mirror, tallied by `(relation sequence, end entity)`.
pub fn forward_walks(rg: &RandomGraph, q: &Triplet, max_len: usize) -> HashMap<(Vec<RelationId>, EntityId), u128> {
    fn go(
        rg: &RandomGraph,
        q: &Triplet,
        max_len: usize,
        u: EntityId,
        rels: &mut Vec<RelationId>,
        out: &mut HashMap<(Vec<RelationId>, EntityId), u128>,
    ) {
        if !rels.is_empty() {
            *out.entry((rels.clone(), u)).or_default() += 1;
        }
        if rels.len() == max_len {
            return;
        }
        for &(r, v) in &rg.adj[u.index()] {
            if is_query_edge(q, u, r, v) {
                continue;
            }
            rels.push(r);
            go(rg, q, max_len, v, rels, out);
            rels.pop();
        }
    }
    let mut out = HashMap::new();
    go(rg, q, max_len, q.head, &mut Vec::new(), &mut out);
    out
}

/// Walks of length `1..=max_len` into `q.tail`, avoiding the query edge and
/// its mirror, tallied by `(relation sequence in walk order, start entity)`.
pub fn backward_walks(rg: &RandomGraph, q: &Triplet, max_len: usize) -> HashMap<(Vec<RelationId>, EntityId), u128> {
    fn go(
        inc: &[Vec<(EntityId, RelationId)>],
        q: &Triplet,
        max_len: usize,
        v: EntityId,
        rels_rev: &mut Vec<RelationId>,
        out: &mut HashMap<(Vec<RelationId>, EntityId), u128>,
    ) {
        if !rels_rev.is_empty() {
            let rels: Vec<_> = rels_rev.iter().rev().copied().collect();
            *out.entry((rels, v)).or_default() += 1;
        }
        if rels_rev.len() == max_len {
            return;
        }
        for &(u, r) in &inc[v.index()] {
            if is_query_edge(q, u, r, v) {
                continue;
            }
            rels_rev.push(r);
            go(inc, q, max_len, u, rels_rev, out);
            rels_rev.pop();
        }
    }
    let inc = rg.in_adj();
    let mut out = HashMap::new();
    go(&inc, q, max_len, q.tail, &mut Vec::new(), &mut out);
    out
}

/// Walk counts `[depth][entity]` for depths `0..=max_len` out of `u`, by
/// exhaustive depth-first enumeration.
pub fn brute_walk_table(rg: &RandomGraph, u: EntityId, max_len: usize, avoid: Option<&Triplet>) -> Vec<Vec<u128>> {
    fn go(rg: &RandomGraph, avoid: Option<&Triplet>, max_len: usize, depth: usize, u: EntityId, out: &mut [Vec<u128>]) {
        out[depth][u.index()] += 1;
        if depth == max_len {
            return;
        }
        for &(r, v) in &rg.adj[u.index()] {
            if avoid.is_some_and(|q| is_query_edge(q, u, r, v)) {
                continue;
            }
            go(rg, avoid, max_len, depth + 1, v, out);
        }
    }
    let mut out = vec![vec![0; rg.adj.len()]; max_len + 1];
    go(rg, avoid, max_len, 0, u, &mut out);
    out
}

/// Sum of squared distances of each group to its own mean.
pub fn partition_cost(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut groups: HashMap<usize, Vec<&Vec<f64>>> = HashMap::new();
    for (p, &l) in points.iter().zip(labels) {
        groups.entry(l).or_default().push(p);
    }
    groups
        .values()
        .map(|members| {
            let dim = members[0].len();
            let mean: Vec<f64> =
                (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
            members.iter().map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum::<f64>()
        })
        .sum()
}

/// Simple paths (no repeated entity) from `q.head` to `q.tail` of length
/// `1..=max_len` that avoid the query edge, as `(entities, relations)`.
pub fn simple_paths(rg: &RandomGraph, q: &Triplet, max_len: usize) -> Vec<(Vec<EntityId>, Vec<RelationId>)> {
    fn go(
        rg: &RandomGraph,
        q: &Triplet,
        max_len: usize,
        ents: &mut Vec<EntityId>,
        rels: &mut Vec<RelationId>,
        out: &mut Vec<(Vec<EntityId>, Vec<RelationId>)>,
    ) {
        let u = *ents.last().unwrap();
        if u == q.tail && !rels.is_empty() {
            out.push((ents.clone(), rels.clone()));
            return;
        }
        if rels.len() == max_len {
            return;
        }
        for &(r, v) in &rg.adj[u.index()] {
            if is_query_edge(q, u, r, v) || ents.contains(&v) {
                continue;
            }
            ents.push(v);
            rels.push(r);
            go(rg, q, max_len, ents, rels, out);
            ents.pop();
            rels.pop();
        }
    }
    let mut out = Vec::new();
    go(rg, q, max_len, &mut vec![q.head], &mut Vec::new(), &mut out);
    out
}

/// `a/b == c/d` by cross multiplication, a zero denominator meaning 0.
pub fn same_fraction(a: u128, b: u128, c: u128, d: u128) -> bool {
    match (b, d) {
        (0, 0) => true,
        (0, _) => c == 0,
        (_, 0) => a == 0,
        _ => a * d == c * b,
    }
}

/// Outcome of one property suite.
#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: usize,
    pub violations: Vec<String>,
}

impl Outcome {
    pub fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok && self.violations.len() < 20 {
            self.violations.push(what());
        } else if !ok {
            self.violations.push(String::new());
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        if self.passed() {
            format!("{} checks", self.checks)
        } else {
            let shown: Vec<_> = self.violations.iter().filter(|v| !v.is_empty()).take(3).cloned().collect();
            format!("{} of {} checks violated, e.g. {}", self.violations.len(), self.checks, shown.join("; "))
        }
    }

    pub fn assert_passed(&self) {
        assert!(self.passed(), "{}", self.summary());
    }
}
