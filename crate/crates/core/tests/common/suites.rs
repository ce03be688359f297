use std::collections::{HashMap, HashSet};
use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reasonpath::embed::{cosine_embedding_loss, loss_gradient, triplet_score, HashingEmbedder, Label};
use reasonpath::eval::{evaluate, rank_query, EvalError, TiePolicy};
use reasonpath::explain::{build_report, kmeans, minmax_scale, ReportOptions};
use reasonpath::graph::{EntityId, KnowledgeGraph, RelationId, Triplet};
use reasonpath::metrics::{make_filter, FilterKind, FilterSession, MetricEngine, Mode, PathFilter, Side};
use reasonpath::paths::{count_walks_by_length, extract_paths, ReasoningPath, RelationPath, SearchLimits};
use reasonpath::verbalize::Verbalizer;
use reasonpath::Embedding64;

use super::{backward_walks, forward_walks, random_graph, same_fraction, simple_paths, Outcome, RandomGraph};

pub const GRAPH_SEEDS: Range<u64> = 0..120;
pub const METRIC_DEPTH: usize = 4;
pub const WALK_DEPTH: usize = 5;

/// Equation-mode coverage and confidence on both sides against walk
/// enumeration.
pub fn metrics_oracle(seeds: Range<u64>) -> Outcome {
    let mut out = Outcome::default();
    for seed in seeds {
        let rg = random_graph(seed);
        let engine = MetricEngine::with_max_len(Arc::new(rg.g.clone()), METRIC_DEPTH);
        for q in rg.queries(8) {
            check_query_metrics(&rg, &engine, &q, &mut out);
        }
    }
    out
}

fn check_query_metrics(rg: &RandomGraph, engine: &MetricEngine, q: &Triplet, out: &mut Outcome) {
    let fw = forward_walks(rg, q, METRIC_DEPTH);
    let bw = backward_walks(rg, q, METRIC_DEPTH);
    let mut fw_total = [0u128; METRIC_DEPTH + 1];
    let mut bw_total = [0u128; METRIC_DEPTH + 1];
    // per relation sequence: (ending at t, ending anywhere but h)
    let mut fw_by_rp: HashMap<&Vec<RelationId>, (u128, u128)> = HashMap::new();
    for ((rels, end), &c) in &fw {
        fw_total[rels.len()] += c;
        let e = fw_by_rp.entry(rels).or_default();
        if *end == q.tail {
            e.0 += c;
        }
        if *end != q.head {
            e.1 += c;
        }
    }
    // per relation sequence: (starting at h, starting anywhere but t)
    let mut bw_by_rp: HashMap<&Vec<RelationId>, (u128, u128)> = HashMap::new();
    for ((rels, start), &c) in &bw {
        bw_total[rels.len()] += c;
        let e = bw_by_rp.entry(rels).or_default();
        if *start == q.head {
            e.0 += c;
        }
        if *start != q.tail {
            e.1 += c;
        }
    }

    // every relation sequence that reaches the tail, plus a few that do not
    let mut rps: Vec<&Vec<RelationId>> = fw_by_rp.iter().filter(|(_, v)| v.0 > 0).map(|(k, _)| *k).collect();
    let mut misses: Vec<&Vec<RelationId>> = fw_by_rp.iter().filter(|(_, v)| v.0 == 0).map(|(k, _)| *k).collect();
    rps.sort();
    misses.sort();
    rps.extend(misses.into_iter().step_by(7).take(6));

    for rels in rps {
        let rp = RelationPath(rels.clone());
        let len = rels.len();
        let (supp, fw_not_h) = fw_by_rp.get(rels).copied().unwrap_or_default();
        let (supp_b, bw_not_t) = bw_by_rp.get(rels).copied().unwrap_or_default();
        let tag = || format!("seed {} query {:?} rp {:?}", rg.seed, q, rels);
        out.check(supp == supp_b, || format!("{}: forward support {supp} vs backward {supp_b}", tag()));
        match engine.support(q, &rp) {
            Ok(s) => out.check(s.count == supp, || format!("{}: support {} vs {supp}", tag(), s.count)),
            Err(e) => out.check(false, || format!("{}: support error {e}", tag())),
        }
        let expected =
            [("coverage head", Side::Head, supp, fw_total[len]), ("coverage tail", Side::Tail, supp, bw_total[len])];
        for (what, side, num, den) in expected {
            match engine.coverage(q, &rp, side, Mode::Equation) {
                Ok(m) => out.check(same_fraction(m.numerator, m.denominator, num, den), || {
                    format!("{}: {what} {}/{} vs {num}/{den}", tag(), m.numerator, m.denominator)
                }),
                Err(e) => out.check(false, || format!("{}: {what} error {e}", tag())),
            }
        }
        let expected =
            [("confidence head", Side::Head, supp, fw_not_h), ("confidence tail", Side::Tail, supp, bw_not_t)];
        for (what, side, num, den) in expected {
            match engine.confidence(q, &rp, side, Mode::Equation) {
                Ok(m) => out.check(same_fraction(m.numerator, m.denominator, num, den), || {
                    format!("{}: {what} {}/{} vs {num}/{den}", tag(), m.numerator, m.denominator)
                }),
                Err(e) => out.check(false, || format!("{}: {what} error {e}", tag())),
            }
        }
    }
}

/// Dynamic-programming walk counts against exhaustive enumeration, with and
/// without an excluded query edge.
pub fn walk_counts(seeds: Range<u64>) -> Outcome {
    let mut out = Outcome::default();
    for seed in seeds {
        let rg = random_graph(seed);
        let avoid = rg.facts[0];
        for u in 0..rg.g.num_entities() as u32 {
            let u = EntityId(u);
            for excluded in [None, Some(avoid)] {
                let table = match count_walks_by_length(&rg.g, u, WALK_DEPTH, excluded) {
                    Ok(t) => t,
                    Err(e) => {
                        out.check(false, || format!("seed {seed} source {u:?}: {e}"));
                        continue;
                    }
                };
                let brute = super::brute_walk_table(&rg, u, WALK_DEPTH, excluded.as_ref());
                for (d, row) in brute.iter().enumerate() {
                    for (e, &want) in row.iter().enumerate() {
                        let got = table.get(EntityId(e as u32), d);
                        out.check(got == want, || {
                            format!(
                                "seed {seed} source {u:?} excluded {excluded:?} entity {e} depth {d}: {got} vs {want}"
                            )
                        });
                    }
                }
            }
        }
    }
    out
}

fn filters() -> Vec<PathFilter> {
    let mut v = vec![PathFilter::none()];
    for kind in [FilterKind::Coverage, FilterKind::Confidence] {
        for mode in [Mode::Equation, Mode::Algorithm] {
            for side in [Side::Head, Side::Tail, Side::Both] {
                for threshold in [kind.default_threshold(), 0.05, 0.3] {
                    v.push(make_filter(kind, mode, side, threshold).expect("valid threshold"));
                }
            }
        }
    }
    v
}

/// Invariants of every extracted path over random graphs, limits and filters.
pub fn extraction(seeds: Range<u64>) -> Outcome {
    let mut out = Outcome::default();
    let filters = filters();
    for seed in seeds {
        let rg = random_graph(seed);
        let engine = MetricEngine::with_max_len(Arc::new(rg.g.clone()), METRIC_DEPTH);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let edges: HashSet<(EntityId, RelationId, EntityId)> = rg
            .adj
            .iter()
            .enumerate()
            .flat_map(|(u, l)| l.iter().map(move |&(r, v)| (EntityId(u as u32), r, v)))
            .collect();
        for q in rg.queries(8) {
            let l = rng.random_range(1..=METRIC_DEPTH);
            let m = rng.random_range(1..=5);
            let reference: HashSet<_> = simple_paths(&rg, &q, l).into_iter().collect();
            for _ in 0..3 {
                let filter = filters[rng.random_range(0..filters.len())];
                check_extraction(&rg, &engine, &edges, &reference, q, l, m, filter, &mut out);
            }
            check_extraction(&rg, &engine, &edges, &reference, q, l, m, PathFilter::none(), &mut out);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn check_extraction(
    rg: &RandomGraph,
    engine: &MetricEngine,
    edges: &HashSet<(EntityId, RelationId, EntityId)>,
    reference: &HashSet<(Vec<EntityId>, Vec<RelationId>)>,
    q: Triplet,
    l: usize,
    m: usize,
    filter: PathFilter,
    out: &mut Outcome,
) {
    let tag = || format!("seed {} query {:?} L={l} M={m} filter {:?}", rg.seed, q, filter);
    let mut session = FilterSession::new(engine, filter);
    let paths = match extract_paths(&rg.g, &q, &mut session, SearchLimits::new(l, m).expect("limits")) {
        Ok(p) => p,
        Err(e) => {
            out.check(false, || format!("{}: {e}", tag()));
            return;
        }
    };
    out.check(paths.len() <= m, || format!("{}: {} paths", tag(), paths.len()));
    if filter.kind == FilterKind::None {
        out.check(paths.is_empty() == reference.is_empty(), || {
            format!("{}: found {} paths, {} simple paths exist", tag(), paths.len(), reference.len())
        });
    }
    for p in &paths {
        out.check(p.entities.len() == p.relations.len() + 1 && !p.relations.is_empty(), || {
            format!("{}: malformed {p:?}", tag())
        });
        out.check(p.head() == q.head && p.tail() == q.tail, || format!("{}: endpoints {p:?}", tag()));
        out.check(p.len() <= l, || format!("{}: length {} > L", tag(), p.len()));
        for (i, &r) in p.relations.iter().enumerate() {
            let (u, v) = (p.entities[i], p.entities[i + 1]);
            out.check(edges.contains(&(u, r, v)), || format!("{}: missing edge {u:?} {r:?} {v:?}", tag()));
            out.check(!super::is_query_edge(&q, u, r, v), || format!("{}: uses the query edge", tag()));
        }
        match filter.score(engine, &q, p) {
            Ok(s) => out.check(s >= filter.threshold, || format!("{}: score {s} below threshold", tag())),
            Err(e) => out.check(false, || format!("{}: filter error {e}", tag())),
        }
        out.check(reference.contains(&(p.entities.clone(), p.relations.clone())), || {
            format!("{}: {p:?} is not a simple path", tag())
        });
    }
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Trivial loss values plus analytic gradients against central finite
/// differences on `instances` random dim-16 inputs. The relative error of an
/// instance is `max |analytic - numeric| / max |analytic|`.
pub fn loss_gradients(seed: u64, instances: usize) -> (Outcome, f64) {
    let mut out = Outcome::default();
    let e = |v: &[f64]| Embedding64::new(v.to_vec());
    let trivial = [
        (e(&[3.0, 4.0]), e(&[3.0, 4.0]), Label::Positive, 0.0),
        (e(&[1.0, 0.0]), e(&[0.0, 2.0]), Label::Negative, 0.0),
        (e(&[3.0, 4.0]), e(&[-3.0, -4.0]), Label::Positive, 2.0),
    ];
    for (a, b, y, want) in &trivial {
        let got = cosine_embedding_loss(a, b, *y, 0.0).expect("valid inputs");
        out.check(got == *want, || format!("loss {got} instead of {want}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < instances {
        let a = random_vec(&mut rng, 16);
        let b = random_vec(&mut rng, 16);
        let y = if rng.random_bool(0.5) { Label::Positive } else { Label::Negative };
        let margin = rng.random_range(-0.5..0.5);
        let (ea, eb) = (e(&a), e(&b));
        let cos = ea.dot(&eb) / (ea.norm() * eb.norm());
        // the hinge is not differentiable at its kink
        if y == Label::Negative && (cos - margin).abs() < 1e-3 {
            continue;
        }
        done += 1;
        let (ga, gb) = loss_gradient(&ea, &eb, y, margin).expect("valid inputs");
        let loss = |a: &[f64], b: &[f64]| cosine_embedding_loss(&e(a), &e(b), y, margin).expect("valid inputs");
        let mut max_diff: f64 = 0.0;
        let mut max_grad: f64 = 0.0;
        for side in 0..2 {
            for i in 0..16 {
                let (mut plus_a, mut plus_b, mut minus_a, mut minus_b) = (a.clone(), b.clone(), a.clone(), b.clone());
                if side == 0 {
                    plus_a[i] += FD_STEP;
                    minus_a[i] -= FD_STEP;
                } else {
                    plus_b[i] += FD_STEP;
                    minus_b[i] -= FD_STEP;
                }
                let numeric = (loss(&plus_a, &plus_b) - loss(&minus_a, &minus_b)) / (2.0 * FD_STEP);
                let analytic = if side == 0 { ga.values[i] } else { gb.values[i] };
                max_diff = max_diff.max((analytic - numeric).abs());
                max_grad = max_grad.max(analytic.abs());
            }
        }
        let rel = if max_grad == 0.0 { max_diff } else { max_diff / max_grad };
        worst = worst.max(rel);
        out.check(rel < FD_TOLERANCE, || format!("instance {done}: relative error {rel:e}"));
    }
    (out, worst)
}

/// Sort-based rank: position range of the positive's score among all
/// candidates sorted in descending order.
pub fn oracle_rank(pos: f64, negs: &[f64], tie: TiePolicy) -> f64 {
    let mut all: Vec<f64> = negs.to_vec();
    all.push(pos);
    all.sort_by(|a, b| b.total_cmp(a));
    let first = all.iter().position(|&s| s == pos).expect("present") + 1;
    let last = all.iter().rposition(|&s| s == pos).expect("present") + 1;
    match tie {
        TiePolicy::Optimistic => first as f64,
        TiePolicy::Pessimistic => last as f64,
        TiePolicy::Average => (first + last) as f64 / 2.0,
    }
}

pub const RANDOM_MRR_EXPECTED: f64 = 0.090;
pub const RANDOM_MRR_TOLERANCE: f64 = 0.015;

/// Perfect scorer, sorting oracle and random-scorer MRR. Returns the random
/// MRR alongside.
pub fn ranking(seed: u64) -> (Outcome, f64) {
    let mut out = Outcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let ids = |i: u32| Triplet::new(EntityId(i), RelationId::forward(0), EntityId(i + 1));
    let dataset: Vec<(Triplet, Vec<Triplet>)> =
        (0..20).map(|q| (ids(1000 * q), (1..50).map(|j| ids(1000 * q + j)).collect())).collect();
    let perfect = |t: &Triplet| -> Result<f64, EvalError> { Ok(if t.head.0.is_multiple_of(1000) { 1.0 } else { 0.5 }) };
    for tie in [TiePolicy::Pessimistic, TiePolicy::Optimistic, TiePolicy::Average] {
        let r = evaluate(&dataset, perfect, tie).expect("nonempty");
        out.check(r.mrr == 1.0 && r.hit_at_1 == 1.0, || {
            format!("perfect scorer under {tie}: {} {}", r.mrr, r.hit_at_1)
        });
    }

    for trial in 0..1000 {
        let n = rng.random_range(1..60);
        // a coarse grid makes ties common
        let grid = rng.random_range(2..8);
        let draw = |rng: &mut ChaCha8Rng| rng.random_range(0..grid) as f64 / grid as f64;
        let pos = draw(&mut rng);
        let negs: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        for tie in [TiePolicy::Pessimistic, TiePolicy::Optimistic, TiePolicy::Average] {
            let got = rank_query(pos, &negs, tie);
            let want = oracle_rank(pos, &negs, tie);
            out.check(got == want, || format!("trial {trial} {tie}: rank {got} vs {want}"));
        }
    }

    let random: Vec<(Triplet, Vec<Triplet>)> =
        (0..1000).map(|q| (ids(1000 * q), (1..50).map(|j| ids(1000 * q + j)).collect())).collect();
    let mut scores = ChaCha8Rng::seed_from_u64(seed ^ 0xface);
    let r = evaluate(
        &random,
        |_: &Triplet| -> Result<f64, EvalError> { Ok(scores.random::<f64>()) },
        TiePolicy::Pessimistic,
    )
    .expect("nonempty");
    out.check((r.mrr - RANDOM_MRR_EXPECTED).abs() <= RANDOM_MRR_TOLERANCE, || format!("random MRR {}", r.mrr));
    (out, r.mrr)
}

/// K-means trace, determinism and local optimality; the empty-path rule at
/// 20 vs 19 paths; the scaled score of the empty path.
pub fn explanation(seed: u64) -> Outcome {
    let mut out = Outcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for run in 0..300 {
        let n = rng.random_range(1..=40);
        let dim = rng.random_range(1..=6);
        let k = rng.random_range(1..=n.min(6));
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let a = kmeans(&points, k, 42).expect("valid input");
        let b = kmeans(&points, k, 42).expect("valid input");
        out.check(a == b, || format!("run {run}: seed-42 runs differ"));
        let non_increasing = a.sse_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9 * (1.0 + w[0]));
        out.check(non_increasing, || format!("run {run}: SSE trace {:?}", a.sse_trace));
        if n <= 8 {
            check_local_optimum(&points, &a.labels, k, a.sse, run, &mut out);
        }
    }

    // h -r-> m_i -s-> t for 25 middles; the report appends the empty path
    // exactly when fewer than 20 paths are given
    let mut facts = Vec::new();
    let mids: Vec<String> = (0..25).map(|i| format!("mid_{i}")).collect();
    for m in &mids {
        facts.push(("hub", "links", m.as_str()));
        facts.push((m.as_str(), "reaches", "goal"));
    }
    facts.push(("hub", "target", "goal"));
    let g = KnowledgeGraph::from_triplets(facts);
    let backend = HashingEmbedder::new(256, 42);
    let verbalizer = Verbalizer::default();
    let query = g.triplet("hub", "target", "goal").expect("interned");
    let path = |i: usize| ReasoningPath {
        entities: vec![query.head, g.entity(&mids[i]).expect("mid"), query.tail],
        relations: vec![g.relation("links").expect("rel"), g.relation("reaches").expect("rel")],
    };
    for (n_paths, want_empty) in [(20, false), (19, true)] {
        let scored: reasonpath::ScoredTriplet64 =
            triplet_score(&backend, &g, &verbalizer, &query, (0..n_paths).map(path).collect()).expect("scores");
        let report = build_report(&g, &scored, &backend, &verbalizer, ReportOptions::default()).expect("report");
        let empties = report.entries.iter().filter(|e| e.path.is_none()).count();
        out.check(empties == usize::from(want_empty), || format!("{n_paths} paths: {empties} empty entries"));
        out.check(report.entries.len() == n_paths + usize::from(want_empty), || {
            format!("{n_paths} paths: {} entries", report.entries.len())
        });
        if want_empty {
            let empty = report.entries.iter().find(|e| e.path.is_none()).expect("present");
            let lowest = report.entries.iter().all(|e| e.raw_score >= empty.raw_score);
            out.check(lowest && empty.scaled_score == 0.0, || {
                format!("empty path raw {} scaled {}", empty.raw_score, empty.scaled_score)
            });
        }
    }
    let (scaled, degenerate) = minmax_scale(&[0.2f64, 0.6, 1.0]).expect("finite");
    out.check(!degenerate && scaled[0] == 0.0 && scaled[2] == 1.0, || format!("minmax {scaled:?}"));
    out
}

fn check_local_optimum(points: &[Vec<f64>], labels: &[usize], k: usize, sse: f64, run: usize, out: &mut Outcome) {
    let here = super::partition_cost(points, labels);
    out.check((here - sse).abs() <= 1e-9 * (1.0 + sse), || format!("run {run}: reported SSE {sse} vs {here}"));
    for i in 0..points.len() {
        let from = labels[i];
        if labels.iter().filter(|&&l| l == from).count() == 1 {
            continue;
        }
        for to in 0..k {
            if to == from {
                continue;
            }
            let mut moved = labels.to_vec();
            moved[i] = to;
            let after = super::partition_cost(points, &moved);
            out.check(after >= here - 1e-9 * (1.0 + here), || {
                format!("run {run}: moving point {i} to {to} lowers SSE {here} -> {after}")
            });
        }
    }
}
