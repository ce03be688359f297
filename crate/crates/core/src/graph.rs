//! Knowledge graph storage: interning, relation-labelled adjacency,
//! inverse-edge augmentation and edge reversal.
//!
//! Relation ids carry their direction in the lowest bit, so the inverse of a
//! relation is a structural property of the id and never encoded into the key
//! text. Adjacency lists are kept in the canonical "rare relations first"
//! order used by path extraction.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Suffix used when an inverse relation has to be written out as text.
pub const INVERSE_SUFFIX: &str = "^-1";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}:{line}: expected {expected} tab-separated columns, found {found}")]
    Parse { path: PathBuf, line: usize, expected: usize, found: usize },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("unknown entity key `{0}`")]
    UnknownEntityKey(String),
    #[error("unknown relation key `{0}`")]
    UnknownRelationKey(String),
    #[error("inverse edges are already present")]
    InverseAlreadyPresent,
    #[error("inductive split shares {0} entities with the training graph")]
    EntityOverlap(usize),
    #[error("evaluation graph uses relation `{0}` that is absent from the training graph")]
    UnseenRelation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Relation identifier. The low bit is the direction flag: even ids are
/// forward relations, odd ids are their inverses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(u32);

impl RelationId {
    pub fn forward(base: u32) -> Self {
        RelationId(base << 1)
    }

    pub fn inverse(self) -> Self {
        RelationId(self.0 ^ 1)
    }

    pub fn is_inverse(self) -> bool {
        self.0 & 1 == 1
    }

    /// The forward relation this id derives from (itself when forward).
    pub fn base(self) -> Self {
        RelationId(self.0 & !1)
    }

    /// Position of the forward relation in the relation key table.
    pub fn base_index(self) -> usize {
        (self.0 >> 1) as usize
    }

    /// Raw dense index over both directions.
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn from_index(index: usize) -> Self {
        RelationId(index as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triplet {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triplet { head, relation, tail }
    }

    /// The same fact read in the opposite direction: `(t, r^-1, h)`.
    pub fn mirrored(self) -> Self {
        Triplet::new(self.tail, self.relation.inverse(), self.head)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub relation: RelationId,
    pub target: EntityId,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interner {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, key: &str) -> u32 {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = self.keys.len() as u32;
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), id);
        id
    }

    pub fn get(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn key(&self, id: u32) -> Option<&str> {
        self.keys.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.keys.iter().map(String::as_str)
    }
}

/// Entity and relation tables plus their short text descriptions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    pub entities: Interner,
    pub relations: Interner,
    entity_desc: Vec<Option<String>>,
    relation_desc: Vec<Option<String>>,
}

/// Fallback description: the raw key with underscores turned into spaces.
pub fn readable_key(key: &str) -> String {
    key.replace('_', " ")
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

impl Vocabulary {
    pub fn entity_description(&self, e: EntityId) -> String {
        match self.entity_desc.get(e.index()).and_then(Option::as_deref) {
            Some(d) => d.to_owned(),
            None => readable_key(self.entities.key(e.0).unwrap_or_default()),
        }
    }

    /// Description of the forward relation underlying `r`.
    pub fn relation_description(&self, r: RelationId) -> String {
        let base = r.base_index();
        match self.relation_desc.get(base).and_then(Option::as_deref) {
            Some(d) => d.to_owned(),
            None => readable_key(self.relations.key(base as u32).unwrap_or_default()),
        }
    }
}

/// Immutable relation-labelled multigraph.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    vocab: Arc<Vocabulary>,
    adjacency: Vec<Vec<Edge>>,
    edges: HashSet<Triplet>,
    relation_frequency: Vec<u64>,
    triplet_count: usize,
    has_inverse: bool,
    reversed: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub lines: usize,
    pub duplicates: usize,
}

/// Incremental graph construction; [`GraphBuilder::build`] freezes it.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    vocab: Vocabulary,
    triplets: Vec<Triplet>,
    seen: HashSet<Triplet>,
    report: LoadReport,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts from an existing relation table so relation ids agree with
    /// another graph (inductive evaluation graphs share training relations).
    pub fn with_relations(relations: &Interner) -> Self {
        let mut b = Self::default();
        b.vocab.relations = relations.clone();
        b
    }

    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = EntityId(self.vocab.entities.intern(&nfc(head)));
        let r = RelationId::forward(self.vocab.relations.intern(&nfc(relation)));
        let t = EntityId(self.vocab.entities.intern(&nfc(tail)));
        let triplet = Triplet::new(h, r, t);
        if self.seen.insert(triplet) {
            self.triplets.push(triplet);
            true
        } else {
            self.report.duplicates += 1;
            false
        }
    }

    pub fn read_triplets(&mut self, path: &Path) -> Result<&mut Self, GraphError> {
        for_each_record(path, 3, |cols| {
            self.report.lines += 1;
            self.add(cols[0], cols[1], cols[2]);
        })?;
        Ok(self)
    }

    pub fn read_entity_descriptions(&mut self, path: &Path) -> Result<&mut Self, GraphError> {
        let map = read_descriptions(path)?;
        self.vocab.entity_desc = self.vocab.entities.keys().map(|k| map.get(k).cloned()).collect();
        Ok(self)
    }

    pub fn read_relation_descriptions(&mut self, path: &Path) -> Result<&mut Self, GraphError> {
        let map = read_descriptions(path)?;
        self.vocab.relation_desc = self.vocab.relations.keys().map(|k| map.get(k).cloned()).collect();
        Ok(self)
    }

    pub fn report(&self) -> LoadReport {
        self.report
    }

    pub fn build(self) -> KnowledgeGraph {
        let mut vocab = self.vocab;
        vocab.entity_desc.resize(vocab.entities.len(), None);
        vocab.relation_desc.resize(vocab.relations.len(), None);
        KnowledgeGraph::assemble(Arc::new(vocab), self.triplets, false, false)
    }
}

fn for_each_record(path: &Path, columns: usize, mut f: impl FnMut(&[&str])) -> Result<(), GraphError> {
    let io = |source| GraphError::Io { path: path.to_owned(), source };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != columns {
            return Err(GraphError::Parse { path: path.to_owned(), line: i + 1, expected: columns, found: cols.len() });
        }
        f(&cols);
    }
    Ok(())
}

fn read_descriptions(path: &Path) -> Result<HashMap<String, String>, GraphError> {
    let mut map = HashMap::new();
    for_each_record(path, 2, |cols| {
        map.insert(nfc(cols[0]), nfc(cols[1]));
    })?;
    Ok(map)
}

/// Loads a tab-separated triplet file with optional description files.
pub fn load_graph(
    triplet_file: &Path,
    entity_desc_file: Option<&Path>,
    relation_desc_file: Option<&Path>,
) -> Result<(KnowledgeGraph, LoadReport), GraphError> {
    load_graph_with(GraphBuilder::new(), triplet_file, entity_desc_file, relation_desc_file)
}

pub fn load_graph_with(
    mut builder: GraphBuilder,
    triplet_file: &Path,
    entity_desc_file: Option<&Path>,
    relation_desc_file: Option<&Path>,
) -> Result<(KnowledgeGraph, LoadReport), GraphError> {
    builder.read_triplets(triplet_file)?;
    if let Some(p) = entity_desc_file {
        builder.read_entity_descriptions(p)?;
    }
    if let Some(p) = relation_desc_file {
        builder.read_relation_descriptions(p)?;
    }
    let report = builder.report();
    Ok((builder.build(), report))
}

impl KnowledgeGraph {
    fn assemble(
        vocab: Arc<Vocabulary>,
        edges: impl IntoIterator<Item = Triplet>,
        has_inverse: bool,
        reversed: bool,
    ) -> Self {
        let mut adjacency = vec![Vec::new(); vocab.entities.len()];
        let mut relation_frequency = vec![0u64; vocab.relations.len() * 2];
        let mut edge_set = HashSet::new();
        let mut triplet_count = 0;
        for e in edges {
            if !edge_set.insert(e) {
                continue;
            }
            if !e.relation.is_inverse() {
                triplet_count += 1;
            }
            relation_frequency[e.relation.index()] += 1;
            adjacency[e.head.index()].push(Edge { relation: e.relation, target: e.tail });
        }
        for list in &mut adjacency {
            list.sort_by_key(|e| (relation_frequency[e.relation.index()], e.relation, e.target));
        }
        KnowledgeGraph { vocab, adjacency, edges: edge_set, relation_frequency, triplet_count, has_inverse, reversed }
    }

    /// Builds a graph from string triplets (no descriptions).
    pub fn from_triplets<'a>(triplets: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Self {
        let mut b = GraphBuilder::new();
        for (h, r, t) in triplets {
            b.add(h, r, t);
        }
        b.build()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn shared_vocab(&self) -> Arc<Vocabulary> {
        Arc::clone(&self.vocab)
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.entities.len()
    }

    /// Number of forward relations (the relation key table size).
    pub fn num_relations(&self) -> usize {
        self.vocab.relations.len()
    }

    /// Number of distinct forward facts.
    pub fn triplet_count(&self) -> usize {
        self.triplet_count
    }

    /// Number of directed adjacency entries, inverse edges included.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_inverse(&self) -> bool {
        self.has_inverse
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    pub fn relation_frequency(&self, r: RelationId) -> u64 {
        self.relation_frequency.get(r.index()).copied().unwrap_or(0)
    }

    pub fn relation_frequencies(&self) -> &[u64] {
        &self.relation_frequency
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.edges.contains(t)
    }

    pub fn contains_entity(&self, e: EntityId) -> bool {
        e.index() < self.adjacency.len()
    }

    /// All directed edges in canonical adjacency order.
    pub fn triplets(&self) -> impl Iterator<Item = Triplet> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().map(move |e| Triplet::new(EntityId(u as u32), e.relation, e.target)))
    }

    /// Out-edges of `u` ordered by ascending relation frequency, ties broken
    /// by relation id then target id.
    pub fn neighbors_by_relation_frequency(&self, u: EntityId) -> Result<&[Edge], GraphError> {
        self.adjacency.get(u.index()).map(Vec::as_slice).ok_or(GraphError::UnknownEntity(u.0))
    }

    /// Out-edges of `u`; empty for unknown ids.
    pub fn edges_from(&self, u: EntityId) -> &[Edge] {
        self.adjacency.get(u.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Adds `(v, r^-1, u)` for every forward edge `(u, r, v)`.
    pub fn add_inverse_edges(&self) -> Result<KnowledgeGraph, GraphError> {
        if self.has_inverse {
            return Err(GraphError::InverseAlreadyPresent);
        }
        let edges: Vec<Triplet> = self.triplets().flat_map(|t| [t, t.mirrored()]).collect();
        Ok(Self::assemble(self.shared_vocab(), edges, true, self.reversed))
    }

    /// Every edge `(u, r, v)` becomes `(v, r, u)`; tables are shared.
    pub fn reverse_graph(&self) -> KnowledgeGraph {
        let edges: Vec<Triplet> = self.triplets().map(|t| Triplet::new(t.tail, t.relation, t.head)).collect();
        Self::assemble(self.shared_vocab(), edges, self.has_inverse, !self.reversed)
    }

    pub fn entity(&self, key: &str) -> Result<EntityId, GraphError> {
        self.vocab.entities.get(&nfc(key)).map(EntityId).ok_or_else(|| GraphError::UnknownEntityKey(key.to_owned()))
    }

    /// Resolves a relation label; a trailing [`INVERSE_SUFFIX`] selects the
    /// inverse direction.
    pub fn relation(&self, label: &str) -> Result<RelationId, GraphError> {
        let label = nfc(label);
        let (key, inverse) = match label.strip_suffix(INVERSE_SUFFIX) {
            Some(k) if self.vocab.relations.get(&label).is_none() => (k, true),
            _ => (label.as_str(), false),
        };
        let base = self.vocab.relations.get(key).ok_or_else(|| GraphError::UnknownRelationKey(label.clone()))?;
        let r = RelationId::forward(base);
        Ok(if inverse { r.inverse() } else { r })
    }

    pub fn triplet(&self, head: &str, relation: &str, tail: &str) -> Result<Triplet, GraphError> {
        Ok(Triplet::new(self.entity(head)?, self.relation(relation)?, self.entity(tail)?))
    }

    pub fn entity_key(&self, e: EntityId) -> &str {
        self.vocab.entities.key(e.0).unwrap_or("")
    }

    pub fn relation_label(&self, r: RelationId) -> String {
        let key = self.vocab.relations.key(r.base_index() as u32).unwrap_or("");
        if r.is_inverse() {
            format!("{key}{INVERSE_SUFFIX}")
        } else {
            key.to_owned()
        }
    }

    pub fn display_triplet(&self, t: &Triplet) -> TripletDisplay<'_> {
        TripletDisplay { graph: self, triplet: *t }
    }
}

pub struct TripletDisplay<'a> {
    graph: &'a KnowledgeGraph,
    triplet: Triplet,
}

impl fmt::Display for TripletDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.graph.entity_key(self.triplet.head),
            self.graph.relation_label(self.triplet.relation),
            self.graph.entity_key(self.triplet.tail)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Transductive,
    Inductive,
}

/// Training graph, evaluation graph and query splits.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub mode: SplitMode,
    pub train_graph: Arc<KnowledgeGraph>,
    pub eval_graph: Arc<KnowledgeGraph>,
    pub train_queries: Vec<Triplet>,
    pub valid_queries: Vec<Triplet>,
    pub test_queries: Vec<Triplet>,
}

impl DatasetBundle {
    /// Checks the inductive split conditions: no shared entity keys and no
    /// evaluation relation missing from training.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.mode == SplitMode::Transductive {
            return Ok(());
        }
        check_inductive(&self.train_graph, &self.eval_graph)
    }
}

pub fn check_inductive(train: &KnowledgeGraph, eval: &KnowledgeGraph) -> Result<(), GraphError> {
    let train_keys: HashSet<&str> = train.vocab().entities.keys().collect();
    let overlap = eval.vocab().entities.keys().filter(|k| train_keys.contains(k)).count();
    if overlap > 0 {
        return Err(GraphError::EntityOverlap(overlap));
    }
    let train_rel: HashSet<&str> = train.vocab().relations.keys().collect();
    let used: HashSet<usize> = eval.triplets().map(|t| t.relation.base_index()).collect();
    let mut used: Vec<usize> = used.into_iter().collect();
    used.sort_unstable();
    for idx in used {
        let key = eval.vocab().relations.key(idx as u32).unwrap_or("");
        if !train_rel.contains(key) {
            return Err(GraphError::UnseenRelation(key.to_owned()));
        }
    }
    Ok(())
}

/// Loads a query file against `graph`, skipping lines whose keys are not in
/// the graph. Returns the resolved triplets and the skipped line numbers.
pub fn load_queries(path: &Path, graph: &KnowledgeGraph) -> Result<(Vec<Triplet>, Vec<usize>), GraphError> {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    let mut line = 0;
    for_each_record(path, 3, |cols| {
        line += 1;
        match graph.triplet(cols[0], cols[1], cols[2]) {
            Ok(t) => out.push(t),
            Err(_) => skipped.push(line),
        }
    })?;
    Ok((out, skipped))
}
