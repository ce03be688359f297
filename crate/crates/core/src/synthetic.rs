//! Seeded toy knowledge graphs with a rule the paths can recover:
//! `x works_at y` and `y company_city z` imply `x works_city z`. Rule
//! relations share words with the target; distractors do not.
//! `lives_in`, `born_in` and `knows` are distractors.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::KnowledgeGraph;

pub const TARGET_RELATION: &str = "works_city";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    /// People whose target facts stay in the graph.
    pub train_people: usize,
    /// Held-out people for validation and testing.
    pub valid: usize,
    pub test: usize,
    /// Companies and cities per community.
    pub companies: usize,
    pub cities: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// About 200 triplets.
    pub fn standard() -> Self {
        SyntheticSpec { train_people: 24, valid: 4, test: 12, companies: 4, cities: 3, seed: 42 }
    }

    /// 30 entities, as in the bundled fixture.
    pub fn tiny() -> Self {
        SyntheticSpec { train_people: 10, valid: 3, test: 5, companies: 3, cities: 3, seed: 42 }
    }
}

pub type Fact = [String; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSplit {
    pub train: Vec<Fact>,
    /// Target facts of the training graph, used as training queries.
    pub queries: Vec<Fact>,
    pub valid: Vec<Fact>,
    pub test: Vec<Fact>,
}

fn fact(h: &str, r: &str, t: &str) -> Fact {
    [h.to_owned(), r.to_owned(), t.to_owned()]
}

/// One community of people, companies and cities; returns the graph facts
/// and the target facts in person order.
fn community(
    rng: &mut ChaCha8Rng,
    people: std::ops::Range<usize>,
    firms: std::ops::Range<usize>,
    towns: std::ops::Range<usize>,
) -> (Vec<Fact>, Vec<Fact>) {
    let person = |i: usize| format!("p{i:02}");
    let company = |i: usize| format!("firm{i}");
    let city = |i: usize| format!("town{i}");
    let mut facts = Vec::new();
    let mut hq = Vec::new();
    for (k, c) in firms.clone().enumerate() {
        let z = if k < towns.len() { towns.start + k } else { rng.random_range(towns.clone()) };
        hq.push(z);
        facts.push(fact(&company(c), "company_city", &city(z)));
    }
    let mut targets = Vec::new();
    for (k, p) in people.clone().enumerate() {
        let employer = if k < firms.len() { k } else { rng.random_range(0..firms.len()) };
        facts.push(fact(&person(p), "works_at", &company(firms.start + employer)));
        targets.push(fact(&person(p), TARGET_RELATION, &city(hq[employer])));
        facts.push(fact(&person(p), "lives_in", &city(rng.random_range(towns.clone()))));
        facts.push(fact(&person(p), "born_in", &city(rng.random_range(towns.clone()))));
    }
    let mut knows = std::collections::BTreeSet::new();
    while knows.len() < people.len() {
        let a = rng.random_range(people.clone());
        let b = rng.random_range(people.clone());
        if a != b {
            knows.insert((a, b));
        }
    }
    for (a, b) in knows {
        facts.push(fact(&person(a), "knows", &person(b)));
    }
    (facts, targets)
}

/// Two disconnected communities. The first keeps its target facts in the
/// graph; the target facts of the second are all held out, so its
/// neighbourhoods contain only rule and distractor paths.
pub fn generate(spec: SyntheticSpec) -> SyntheticSplit {
    assert!(spec.train_people > 1 && spec.valid + spec.test > 1 && spec.companies > 0 && spec.cities > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_a = spec.train_people;
    let n_b = spec.valid + spec.test;
    let (mut train, targets_a) = community(&mut rng, 0..n_a, 0..spec.companies, 0..spec.cities);
    train.extend(targets_a.iter().cloned());
    let (facts_b, mut targets_b) =
        community(&mut rng, n_a..n_a + n_b, spec.companies..2 * spec.companies, spec.cities..2 * spec.cities);
    train.extend(facts_b);
    let test = targets_b.split_off(spec.valid);
    SyntheticSplit { train, queries: targets_a, valid: targets_b, test }
}

fn write_facts(path: &Path, facts: &[Fact]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for [h, r, t] in facts {
        writeln!(w, "{h}\t{r}\t{t}")?;
    }
    w.flush()
}

impl SyntheticSplit {
    /// Writes `train.txt`, `queries.txt`, `valid.txt` and `test.txt` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_facts(&dir.join("train.txt"), &self.train)?;
        write_facts(&dir.join("queries.txt"), &self.queries)?;
        write_facts(&dir.join("valid.txt"), &self.valid)?;
        write_facts(&dir.join("test.txt"), &self.test)
    }

    pub fn train_graph(&self) -> KnowledgeGraph {
        KnowledgeGraph::from_triplets(self.train.iter().map(|[h, r, t]| (h.as_str(), r.as_str(), t.as_str())))
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_size_and_determinism() {
        let a = generate(SyntheticSpec::standard());
        assert_eq!(a, generate(SyntheticSpec::standard()));
        assert!((190..=220).contains(&a.len()), "{}", a.len());
        assert_eq!(a.test.len(), 12);
        assert!(a.test.iter().all(|f| f[1] == TARGET_RELATION && !a.train.contains(f)));
        assert!(a.queries.iter().all(|f| f[1] == TARGET_RELATION && a.train.contains(f)));
    }

    #[test]
    fn tiny_has_thirty_entities() {
        let g = generate(SyntheticSpec::tiny()).train_graph();
        assert_eq!(g.num_entities(), 30);
    }

    #[test]
    fn bundled_fixture_matches_generator() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/tiny");
        let split = generate(SyntheticSpec::tiny());
        let read = |name: &str| std::fs::read_to_string(dir.join(name)).unwrap();
        let render = |facts: &[Fact]| facts.iter().map(|f| format!("{}\n", f.join("\t"))).collect::<String>();
        assert_eq!(read("train.txt"), render(&split.train));
        assert_eq!(read("queries.txt"), render(&split.queries));
        assert_eq!(read("valid.txt"), render(&split.valid));
        assert_eq!(read("test.txt"), render(&split.test));
    }
}
