//! End-to-end stages: extract → train → evaluate → explain, plus a metrics
//! dump. Each stage writes into `out_dir/<stage>-<fingerprint>/`, where the
//! fingerprint hashes the parameters the stage depends on and the digests of
//! the input files; a finished directory is reused as is.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, EmbedderKind, RunConfig};
use crate::embed::{
    train_projection, triplet_score, CachedEmbedder, EmbedError, Embedder, EmbeddingCache, HashingEmbedder, Label,
    ProjectionEmbedder, ScoredTriplet, ServiceEmbedder, TrainConfig, TrainingPair,
};
use crate::eval::{aggregate, generate_negatives, load_negatives, rank_scored, EvalError, ResultsFile};
use crate::explain::{build_report, ExplainError, ReportOptions};
use crate::graph::{
    load_graph, load_graph_with, load_queries, DatasetBundle, GraphBuilder, GraphError, KnowledgeGraph, SplitMode,
    Triplet,
};
use crate::metrics::{
    make_filter, write_metrics_csv, FilterSession, MetricEngine, MetricsError, MetricsRow, PathFilter,
};
use crate::paths::{extract_paths, read_path_sets, write_path_sets, PathError, PathSet, SearchLimits};
use crate::verbalize::Verbalizer;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("`{0}` is not set in the configuration")]
    MissingInput(&'static str),
    #[error("{what} not found for this configuration; run `{producer}` first")]
    MissingArtifact { what: &'static str, producer: &'static str },
    #[error("no {0} queries to process")]
    NoQueries(&'static str),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl PipelineError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Graph(_) => "graph",
            PipelineError::Path(_) => "paths",
            PipelineError::Metrics(_) => "metrics",
            PipelineError::Embed(_) => "embed",
            PipelineError::Eval(_) => "eval",
            PipelineError::Explain(_) => "explain",
            PipelineError::Io { .. } => "io",
            PipelineError::Json(_) => "json",
            PipelineError::MissingInput(_) => "missing_input",
            PipelineError::MissingArtifact { .. } => "missing_artifact",
            PipelineError::NoQueries(_) => "no_queries",
            PipelineError::Pool(_) => "pool",
        }
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;
type CandidateSets = Vec<(Triplet, Vec<Triplet>)>;
type ScoredGroup = (Option<ScoredTriplet<f64>>, Vec<ScoredTriplet<f64>>);

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_owned(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn digest_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

fn fingerprint(parts: &[String]) -> String {
    sha256_hex(parts.join("\n").as_bytes())[..16].to_owned()
}

/// Outcome of one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub fingerprint: String,
    pub dir: PathBuf,
    pub reused: bool,
    pub artifacts: Vec<String>,
}

const DONE: &str = "done.json";
pub const EXTRACT: &str = "extract";
pub const TRAIN: &str = "train";
pub const EVALUATE: &str = "evaluate";
pub const EXPLAIN: &str = "explain";
pub const METRICS: &str = "metrics";

const SPLITS: [&str; 3] = ["train", "valid", "test"];

/// Graphs and queries for one run.
pub struct LoadedData {
    pub bundle: DatasetBundle,
    /// Training graph with inverse edges, used for search and metrics.
    pub train_search: Arc<KnowledgeGraph>,
    pub eval_search: Arc<KnowledgeGraph>,
    /// Test candidate sets from an external negatives file, if configured.
    pub test_sets: Option<Vec<(Triplet, Vec<Triplet>)>>,
    pub digests: Vec<String>,
}

impl LoadedData {
    fn split(&self, split: &str) -> (&Arc<KnowledgeGraph>, &Arc<KnowledgeGraph>) {
        match split {
            "train" => (&self.bundle.train_graph, &self.train_search),
            _ => (&self.bundle.eval_graph, &self.eval_search),
        }
    }
}

/// Embedding backend selected for scoring.
pub enum Backend {
    Plain(HashingEmbedder),
    Projected(ProjectionEmbedder<f64>),
    Service(ServiceEmbedder),
}

impl Backend {
    pub fn embedder(&self) -> &dyn Embedder<f64> {
        match self {
            Backend::Plain(h) => h,
            Backend::Projected(p) => p,
            Backend::Service(s) => s,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    dim: usize,
    hash_seed: u64,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ExtractSummary {
    splits: BTreeMap<String, SplitSummary>,
}

#[derive(Serialize, Deserialize)]
struct SplitSummary {
    queries: usize,
    candidates: usize,
    paths: usize,
    candidates_without_paths: usize,
    short_negative_sets: usize,
}

#[derive(Serialize, Deserialize)]
struct TrainSummary {
    pairs: usize,
    skipped: usize,
    final_loss: Option<f64>,
    valid_mrr_untrained: Option<f64>,
    valid_mrr_trained: Option<f64>,
    valid_hit_at_1_untrained: Option<f64>,
    valid_hit_at_1_trained: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ReportIndexEntry {
    index: usize,
    head: String,
    relation: String,
    tail: String,
    report: String,
    plot: String,
}

pub type Logger = Box<dyn Fn(&str) + Send + Sync>;

pub struct Pipeline {
    cfg: RunConfig,
    log: Logger,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    /// Validates `cfg` and echoes every effective parameter to `log`.
    pub fn new(cfg: RunConfig, log: Logger) -> Result<Self> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?;
        for line in cfg.echo().lines() {
            log(&format!("config: {line}"));
        }
        Ok(Pipeline { cfg, log, pool })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn note(&self, msg: &str) {
        (self.log)(msg);
    }

    pub fn load_data(&self) -> Result<LoadedData> {
        let cfg = &self.cfg;
        let train_path = cfg.train_graph.as_deref().ok_or(PipelineError::MissingInput("train_graph"))?;
        let ent = cfg.entity_descriptions.as_deref();
        let rel = cfg.relation_descriptions.as_deref();
        let mut digests = vec![format!("train_graph={}", digest_file(train_path)?)];
        let (train, report) = load_graph(train_path, ent, rel)?;
        if report.duplicates > 0 {
            self.note(&format!("{}: dropped {} duplicate triplets", train_path.display(), report.duplicates));
        }
        let train = Arc::new(train);
        let eval = match cfg.mode {
            SplitMode::Transductive => Arc::clone(&train),
            SplitMode::Inductive => {
                let path = cfg.eval_graph.as_deref().ok_or(PipelineError::MissingInput("eval_graph"))?;
                digests.push(format!("eval_graph={}", digest_file(path)?));
                let builder = GraphBuilder::with_relations(&train.vocab().relations);
                Arc::new(load_graph_with(builder, path, ent, rel)?.0)
            }
        };
        for (name, p) in [("entity_descriptions", ent), ("relation_descriptions", rel)] {
            if let Some(p) = p {
                digests.push(format!("{name}={}", digest_file(p)?));
            }
        }

        let queries = |name: &'static str,
                       path: Option<&Path>,
                       g: &KnowledgeGraph,
                       digests: &mut Vec<String>|
         -> Result<Vec<Triplet>> {
            let Some(path) = path else { return Ok(Vec::new()) };
            digests.push(format!("{name}={}", digest_file(path)?));
            let (q, skipped) = load_queries(path, g)?;
            if !skipped.is_empty() {
                self.note(&format!("{}: skipped {} queries with unknown keys", path.display(), skipped.len()));
            }
            Ok(q)
        };
        let train_queries =
            queries("train_queries", Some(cfg.train_queries.as_deref().unwrap_or(train_path)), &train, &mut digests)?;
        let valid_queries = queries("valid_queries", cfg.valid_queries.as_deref(), &eval, &mut digests)?;
        let mut test_queries = queries("test_queries", cfg.test_queries.as_deref(), &eval, &mut digests)?;
        let test_sets = match cfg.test_negatives.as_deref() {
            Some(path) => {
                digests.push(format!("test_negatives={}", digest_file(path)?));
                let sets = load_negatives(path, &eval)?;
                for d in &sets.diagnostics {
                    self.note(&format!("{}:{}: {}", path.display(), d.line, d.message));
                }
                test_queries = sets.sets.keys().copied().collect();
                Some(sets.sets.into_iter().filter(|(_, n)| !n.is_empty()).collect())
            }
            None => None,
        };

        let bundle = DatasetBundle {
            mode: cfg.mode,
            train_graph: Arc::clone(&train),
            eval_graph: Arc::clone(&eval),
            train_queries,
            valid_queries,
            test_queries,
        };
        bundle.validate()?;
        let train_search = Arc::new(train.add_inverse_edges()?);
        let eval_search =
            if Arc::ptr_eq(&train, &eval) { Arc::clone(&train_search) } else { Arc::new(eval.add_inverse_edges()?) };
        Ok(LoadedData { bundle, train_search, eval_search, test_sets, digests })
    }

    fn stage_dir(&self, stage: &str, fp: &str) -> PathBuf {
        self.cfg.out_dir.join(format!("{stage}-{fp}"))
    }

    fn warn_other_fingerprints(&self, stage: &str, fp: &str) {
        let Ok(entries) = fs::read_dir(&self.cfg.out_dir) else { return };
        let prefix = format!("{stage}-");
        let mut others: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.starts_with(&prefix) && n[prefix.len()..] != *fp && n.len() == prefix.len() + 16)
            .collect();
        others.sort();
        for name in others {
            self.note(&format!("warning: {name} was built with a different configuration; not reusing it"));
        }
    }

    fn reuse(&self, stage: &str, fp: &str) -> Result<Option<StageReport>> {
        self.warn_other_fingerprints(stage, fp);
        let done = self.stage_dir(stage, fp).join(DONE);
        if !done.exists() {
            return Ok(None);
        }
        let mut report: StageReport = serde_json::from_reader(open(&done)?)?;
        report.reused = true;
        self.note(&format!("{stage}: reusing cached artifacts in {}", report.dir.display()));
        Ok(Some(report))
    }

    fn require(&self, stage: &'static str, fp: &str, what: &'static str) -> Result<PathBuf> {
        let dir = self.stage_dir(stage, fp);
        if dir.join(DONE).exists() {
            Ok(dir)
        } else {
            Err(PipelineError::MissingArtifact { what, producer: stage })
        }
    }

    fn fresh_dir(&self, stage: &str, fp: &str) -> Result<PathBuf> {
        let dir = self.stage_dir(stage, fp);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    fn finish(&self, stage: &str, fp: &str, dir: PathBuf, artifacts: Vec<String>) -> Result<StageReport> {
        let report = StageReport { stage: stage.to_owned(), fingerprint: fp.to_owned(), dir, reused: false, artifacts };
        let path = report.dir.join(DONE);
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        w.write_all(b"\n").map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))?;
        self.note(&format!("{stage}: wrote {}", report.dir.display()));
        Ok(report)
    }

    pub fn extract_fingerprint(&self, data: &LoadedData) -> String {
        let c = &self.cfg;
        let mut parts = vec![
            EXTRACT.to_owned(),
            format!("mode={:?}", c.mode),
            format!("seed={}", c.seed),
            format!("train_candidates={}", c.train_candidates),
            format!("test_candidates={}", c.test_candidates),
            format!("max_paths={}", c.max_paths),
            format!("search_depth={}", c.search_depth),
            format!("filter={}/{}/{}", c.filter, c.filter_mode, c.filter_side),
            format!("threshold={:e}", c.effective_threshold()),
            format!("corruption={}", c.corruption),
        ];
        parts.extend(data.digests.iter().cloned());
        fingerprint(&parts)
    }

    fn train_fingerprint(&self, extract_fp: &str) -> String {
        let c = &self.cfg;
        fingerprint(&[
            TRAIN.to_owned(),
            extract_fp.to_owned(),
            format!("epochs={}", c.epochs),
            format!("learning_rate={:e}", c.learning_rate),
            format!("batch_size={}", c.batch_size),
            format!("margin={}", c.margin),
            format!("embed_dim={}", c.embed_dim),
            format!("seed={}", c.seed),
        ])
    }

    fn evaluate_fingerprint(&self, extract_fp: &str, backend_fp: &str) -> String {
        fingerprint(&[
            EVALUATE.to_owned(),
            extract_fp.to_owned(),
            backend_fp.to_owned(),
            format!("tie_policy={}", self.cfg.tie_policy),
        ])
    }

    fn filter(&self) -> Result<PathFilter> {
        let c = &self.cfg;
        Ok(make_filter(c.filter, c.filter_mode, c.filter_side, c.effective_threshold())?)
    }

    fn plain(&self) -> HashingEmbedder {
        HashingEmbedder::new(self.cfg.embed_dim, self.cfg.seed)
    }

    /// The service when configured; otherwise the trained projection for this
    /// configuration, falling back to plain hashing features.
    pub fn backend(&self, extract_fp: &str) -> Result<Backend> {
        if self.cfg.embedder == EmbedderKind::Service {
            let url = self.cfg.service_url.as_deref().ok_or(PipelineError::MissingInput("service_url"))?;
            return Ok(Backend::Service(ServiceEmbedder::new(url)));
        }
        let weights = self.stage_dir(TRAIN, &self.train_fingerprint(extract_fp)).join("weights.json");
        if !weights.exists() || !self.stage_dir(TRAIN, &self.train_fingerprint(extract_fp)).join(DONE).exists() {
            self.note("no trained weights for this configuration; using the plain hashing backend");
            return Ok(Backend::Plain(self.plain()));
        }
        let file: WeightsFile = serde_json::from_reader(open(&weights)?)?;
        let base = HashingEmbedder::new(file.dim, file.hash_seed);
        Ok(Backend::Projected(ProjectionEmbedder::from_weights(base, file.weights)?))
    }

    fn candidates(
        &self,
        g: &KnowledgeGraph,
        queries: &[Triplet],
        n: usize,
        salt: u64,
    ) -> Result<(CandidateSets, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ salt);
        let seeds: Vec<u64> = queries.iter().map(|_| rng.random()).collect();
        let mode = self.cfg.corruption;
        let drawn = self.pool.install(|| {
            queries
                .par_iter()
                .zip(seeds)
                .map(|(q, seed)| match generate_negatives(g, q, n, seed, mode) {
                    Ok(v) => Ok((*q, v, false)),
                    Err(EvalError::NotEnoughNegatives { achievable, .. }) if achievable > 0 => {
                        Ok((*q, generate_negatives(g, q, achievable, seed, mode)?, true))
                    }
                    Err(EvalError::NotEnoughNegatives { .. }) => Ok((*q, Vec::new(), true)),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<_>, EvalError>>()
        })?;
        let short = drawn.iter().filter(|d| d.2).count();
        let dropped = drawn.iter().filter(|d| d.1.is_empty()).count();
        if short > 0 {
            self.note(&format!("{short} queries have fewer than {n} valid negatives; using all that exist"));
        }
        if dropped > 0 {
            self.note(&format!("{dropped} queries have no valid negatives and are dropped"));
        }
        Ok((drawn.into_iter().filter(|d| !d.1.is_empty()).map(|d| (d.0, d.1)).collect(), short))
    }

    fn extract_groups(
        &self,
        search: &KnowledgeGraph,
        engine: &MetricEngine,
        limits: SearchLimits,
        groups: &[(Triplet, Vec<Triplet>)],
    ) -> Result<Vec<PathSet>> {
        let filter = self.filter()?;
        let jobs: Vec<(usize, i8, Triplet)> = groups
            .iter()
            .enumerate()
            .flat_map(|(g, (pos, negs))| std::iter::once((g, 1, *pos)).chain(negs.iter().map(move |n| (g, -1, *n))))
            .collect();
        self.pool.install(|| {
            jobs.par_iter()
                .map(|&(group, label, query)| {
                    let mut session = FilterSession::new(engine, filter);
                    let paths = extract_paths(search, &query, &mut session, limits)?;
                    Ok(PathSet { group, label, query, paths })
                })
                .collect()
        })
    }

    /// Draws negatives for every split and extracts filtered paths for all
    /// candidates.
    pub fn cmd_extract(&self) -> Result<StageReport> {
        let data = self.load_data()?;
        let fp = self.extract_fingerprint(&data);
        if let Some(r) = self.reuse(EXTRACT, &fp)? {
            return Ok(r);
        }
        let cfg = &self.cfg;
        let dir = self.fresh_dir(EXTRACT, &fp)?;
        let limits = SearchLimits::new(cfg.search_depth, cfg.max_paths)?;
        let mut artifacts = Vec::new();
        let mut splits = BTreeMap::new();
        for (salt, split) in SPLITS.iter().enumerate() {
            let (base, search) = data.split(split);
            let (queries, n) = match *split {
                "train" => (&data.bundle.train_queries, cfg.train_candidates - 1),
                "valid" => (&data.bundle.valid_queries, cfg.train_candidates - 1),
                _ => (&data.bundle.test_queries, cfg.test_candidates - 1),
            };
            let (groups, short) = match (&data.test_sets, *split) {
                (Some(sets), "test") => (sets.clone(), 0),
                _ => self.candidates(base, queries, n, salt as u64 + 1)?,
            };
            let engine = MetricEngine::with_max_len(Arc::clone(search), cfg.search_depth);
            let sets = self.extract_groups(search, &engine, limits, &groups)?;

            let name = format!("paths-{split}.tsv");
            let path = dir.join(&name);
            let mut w = create(&path)?;
            write_path_sets(&mut w, base, &sets)?;
            w.flush().map_err(io_err(&path))?;
            artifacts.push(name);
            let name = format!("negatives-{split}.tsv");
            let path = dir.join(&name);
            let mut w = create(&path)?;
            crate::eval::write_negatives(&mut w, base, &groups).map_err(io_err(&path))?;
            w.flush().map_err(io_err(&path))?;
            artifacts.push(name);

            self.note(&format!("extract: {split}: {} queries, {} candidates", groups.len(), sets.len()));
            splits.insert(
                split.to_string(),
                SplitSummary {
                    queries: groups.len(),
                    candidates: sets.len(),
                    paths: sets.iter().map(|s| s.paths.len()).sum(),
                    candidates_without_paths: sets.iter().filter(|s| s.paths.is_empty()).count(),
                    short_negative_sets: short,
                },
            );
        }
        let path = dir.join("summary.json");
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &ExtractSummary { splits })?;
        w.write_all(b"\n").map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))?;
        artifacts.push("summary.json".into());
        self.finish(EXTRACT, &fp, dir, artifacts)
    }

    fn read_sets(&self, dir: &Path, split: &str, g: &KnowledgeGraph) -> Result<Vec<PathSet>> {
        let path = dir.join(format!("paths-{split}.tsv"));
        Ok(read_path_sets(open(&path)?, g)?)
    }

    /// Scores every candidate, in input order.
    pub fn score_sets(
        &self,
        backend: &dyn Embedder<f64>,
        g: &KnowledgeGraph,
        sets: &[PathSet],
    ) -> Result<Vec<ScoredTriplet<f64>>> {
        let verbalizer = Verbalizer::default();
        let scored = self.pool.install(|| {
            sets.par_iter()
                .map(|s| triplet_score(backend, g, &verbalizer, &s.query, s.paths.clone()))
                .collect::<Result<Vec<_>, EmbedError>>()
        })?;
        Ok(scored)
    }

    fn rank_sets(
        &self,
        sets: &[PathSet],
        scored: Vec<ScoredTriplet<f64>>,
    ) -> Result<crate::eval::RankingResult<ScoredTriplet<f64>>> {
        let mut groups: BTreeMap<usize, ScoredGroup> = BTreeMap::new();
        for (set, s) in sets.iter().zip(scored) {
            let entry = groups.entry(set.group).or_default();
            if set.label > 0 {
                entry.0 = Some(s);
            } else {
                entry.1.push(s);
            }
        }
        let per_query: Vec<_> = groups
            .into_values()
            .filter_map(|(pos, negs)| Some((pos?, negs)))
            .filter(|(_, negs)| !negs.is_empty())
            .map(|(pos, negs)| rank_scored(pos, negs, self.cfg.tie_policy))
            .collect();
        if per_query.is_empty() {
            return Err(EvalError::EmptyDataset.into());
        }
        Ok(aggregate(per_query, self.cfg.tie_policy))
    }

    fn training_pairs(&self, g: &KnowledgeGraph, sets: &[PathSet]) -> Result<Vec<TrainingPair>> {
        let v = Verbalizer::default();
        let mut pairs = Vec::new();
        for set in sets {
            let label = Label::try_from(set.label)?;
            let triplet = v.triplet_sentence(&set.query, g).text;
            if set.paths.is_empty() {
                pairs.push(TrainingPair { triplet, path: v.empty_path_sentence().text, label });
                continue;
            }
            for p in &set.paths {
                pairs.push(TrainingPair { triplet: triplet.clone(), path: v.path_sentence(p, g).text, label });
            }
        }
        Ok(pairs)
    }

    /// Trains the projection surrogate on the extracted training paths.
    pub fn cmd_train(&self) -> Result<StageReport> {
        let data = self.load_data()?;
        let efp = self.extract_fingerprint(&data);
        let edir = self.require(EXTRACT, &efp, "extracted paths")?;
        let fp = self.train_fingerprint(&efp);
        if let Some(r) = self.reuse(TRAIN, &fp)? {
            return Ok(r);
        }
        let cfg = &self.cfg;
        let train_g = &data.bundle.train_graph;
        let sets = self.read_sets(&edir, "train", train_g)?;
        let pairs = self.training_pairs(train_g, &sets)?;
        if pairs.is_empty() {
            return Err(PipelineError::NoQueries("training"));
        }
        let tc = TrainConfig {
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            margin: cfg.margin,
            seed: cfg.seed,
        };
        let base = self.plain();
        let outcome = train_projection::<f64>(&pairs, base, &tc)?;
        self.note(&format!("train: {} pairs, final loss {:?}", pairs.len(), outcome.loss_trace.last()));

        let dir = self.fresh_dir(TRAIN, &fp)?;
        let path = dir.join("weights.json");
        let mut w = create(&path)?;
        serde_json::to_writer(
            &mut w,
            &WeightsFile { dim: base.dim, hash_seed: base.seed, weights: outcome.embedder.weights().to_vec() },
        )?;
        w.flush().map_err(io_err(&path))?;
        let path = dir.join("loss.csv");
        let mut w = create(&path)?;
        let mut text = String::from("epoch,loss\n");
        for (i, l) in outcome.loss_trace.iter().enumerate() {
            text.push_str(&format!("{},{}\n", i + 1, l));
        }
        w.write_all(text.as_bytes()).map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))?;

        let valid = self.read_sets(&edir, "valid", &data.bundle.eval_graph)?;
        let mut summary = TrainSummary {
            pairs: pairs.len(),
            skipped: outcome.skipped,
            final_loss: outcome.loss_trace.last().copied(),
            valid_mrr_untrained: None,
            valid_mrr_trained: None,
            valid_hit_at_1_untrained: None,
            valid_hit_at_1_trained: None,
        };
        if !valid.is_empty() {
            let g = &data.bundle.eval_graph;
            let before = self.rank_sets(&valid, self.score_sets(&base, g, &valid)?)?;
            let after = self.rank_sets(&valid, self.score_sets(&outcome.embedder, g, &valid)?)?;
            self.note(&format!("train: validation MRR {:.4} -> {:.4}", before.mrr, after.mrr));
            summary.valid_mrr_untrained = Some(before.mrr);
            summary.valid_hit_at_1_untrained = Some(before.hit_at_1);
            summary.valid_mrr_trained = Some(after.mrr);
            summary.valid_hit_at_1_trained = Some(after.hit_at_1);
        }
        let path = dir.join("summary.json");
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &summary)?;
        w.write_all(b"\n").map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))?;
        self.finish(TRAIN, &fp, dir, vec!["weights.json".into(), "loss.csv".into(), "summary.json".into()])
    }

    fn cache_path(&self, backend_fp: &str) -> PathBuf {
        self.cfg.out_dir.join("cache").join(format!("embeddings-{}.jsonl", fingerprint(&[backend_fp.to_owned()])))
    }

    /// Runs `f` with the backend, memoized on disk for the service backend.
    fn with_cached<R>(&self, backend: &Backend, f: impl FnOnce(&dyn Embedder<f64>) -> Result<R>) -> Result<R> {
        let Backend::Service(service) = backend else {
            return f(backend.embedder());
        };
        let fp = Embedder::<f64>::fingerprint(service);
        let path = self.cache_path(&fp);
        let cache = if path.exists() { EmbeddingCache::load(&path, &fp)? } else { None };
        let cached = CachedEmbedder::new(service as &dyn Embedder<f64>, cache);
        let out = f(&cached)?;
        let dir = path.parent().expect("cache dir");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        cached.into_cache().save(&path)?;
        Ok(out)
    }

    /// Ranks every test positive among its candidates.
    pub fn cmd_evaluate(&self) -> Result<StageReport> {
        let data = self.load_data()?;
        let efp = self.extract_fingerprint(&data);
        let edir = self.require(EXTRACT, &efp, "extracted paths")?;
        let backend = self.backend(&efp)?;
        let fp = self.evaluate_fingerprint(&efp, &backend.embedder().fingerprint());
        if let Some(r) = self.reuse(EVALUATE, &fp)? {
            return Ok(r);
        }
        let g = &data.bundle.eval_graph;
        let sets = self.read_sets(&edir, "test", g)?;
        if sets.is_empty() {
            return Err(PipelineError::NoQueries("test"));
        }
        let scored = self.with_cached(&backend, |b| self.score_sets(b, g, &sets))?;
        let result = self.rank_sets(&sets, scored)?;
        let file = result.to_results_file(g);
        self.note(&format!("evaluate: {} queries, MRR {:.4}, Hit@1 {:.4}", file.n_queries, file.mrr, file.hit_at_1));

        let dir = self.fresh_dir(EVALUATE, &fp)?;
        let path = dir.join("results.json");
        let mut w = create(&path)?;
        file.write_json(&mut w)?;
        w.flush().map_err(io_err(&path))?;
        let path = dir.join("ranks.csv");
        let mut w = create(&path)?;
        file.write_ranks_csv(&mut w)?;
        w.flush().map_err(io_err(&path))?;
        self.finish(EVALUATE, &fp, dir, vec!["results.json".into(), "ranks.csv".into()])
    }

    /// Path to the results file of the current configuration, if evaluated.
    pub fn results_path(&self) -> Result<PathBuf> {
        let data = self.load_data()?;
        let efp = self.extract_fingerprint(&data);
        let backend = self.backend(&efp)?;
        let fp = self.evaluate_fingerprint(&efp, &backend.embedder().fingerprint());
        Ok(self.require(EVALUATE, &fp, "evaluation results")?.join("results.json"))
    }

    /// Clustered explanation reports for the evaluated test positives.
    pub fn cmd_explain(&self) -> Result<StageReport> {
        let data = self.load_data()?;
        let efp = self.extract_fingerprint(&data);
        let backend = self.backend(&efp)?;
        let evfp = self.evaluate_fingerprint(&efp, &backend.embedder().fingerprint());
        let evdir = self.require(EVALUATE, &evfp, "evaluation results")?;
        let cfg = &self.cfg;
        let fp = fingerprint(&[
            EXPLAIN.to_owned(),
            evfp.clone(),
            format!("max_paths_explain={}", cfg.max_paths_explain),
            format!("clusters={}", cfg.clusters),
        ]);
        if let Some(r) = self.reuse(EXPLAIN, &fp)? {
            return Ok(r);
        }
        let results: ResultsFile = serde_json::from_reader(open(&evdir.join("results.json"))?)?;
        let g = &data.bundle.eval_graph;
        let queries = results
            .per_query
            .iter()
            .map(|q| g.triplet(&q.head, &q.relation, &q.tail))
            .collect::<Result<Vec<_>, _>>()?;
        let limits = SearchLimits::new(cfg.search_depth, cfg.max_paths_explain)?;
        let filter = self.filter()?;
        let engine = MetricEngine::with_max_len(Arc::clone(&data.eval_search), cfg.search_depth);
        let options =
            ReportOptions { k: cfg.clusters, max_paths_for_empty_rule: cfg.max_paths_explain, seed: cfg.seed };
        let verbalizer = Verbalizer::default();
        let reports = self.with_cached(&backend, |b| {
            self.pool.install(|| {
                queries
                    .par_iter()
                    .map(|q| {
                        let mut session = FilterSession::new(&engine, filter);
                        let paths = extract_paths(&data.eval_search, q, &mut session, limits)?;
                        let scored = triplet_score(b, g, &verbalizer, q, paths)?;
                        Ok(build_report(g, &scored, b, &verbalizer, options)?)
                    })
                    .collect::<Result<Vec<_>>>()
            })
        })?;

        let dir = self.fresh_dir(EXPLAIN, &fp)?;
        let reports_dir = dir.join("reports");
        fs::create_dir_all(&reports_dir).map_err(io_err(&reports_dir))?;
        let mut index = Vec::new();
        for (i, r) in reports.iter().enumerate() {
            let json = format!("reports/{i:04}.json");
            let csv = format!("reports/{i:04}.csv");
            let path = dir.join(&json);
            let mut w = create(&path)?;
            r.write_json(&mut w)?;
            w.flush().map_err(io_err(&path))?;
            let path = dir.join(&csv);
            let mut w = create(&path)?;
            r.write_plot_csv(&mut w)?;
            w.flush().map_err(io_err(&path))?;
            index.push(ReportIndexEntry {
                index: i,
                head: r.query.head.clone(),
                relation: r.query.relation.clone(),
                tail: r.query.tail.clone(),
                report: json,
                plot: csv,
            });
        }
        let path = dir.join("index.json");
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &index)?;
        w.write_all(b"\n").map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))?;
        self.note(&format!("explain: {} reports", reports.len()));
        self.finish(EXPLAIN, &fp, dir, vec!["index.json".into(), "reports/".into()])
    }

    /// Dumps support, coverage and confidence of every extracted relation path.
    pub fn cmd_metrics(&self) -> Result<StageReport> {
        let data = self.load_data()?;
        let efp = self.extract_fingerprint(&data);
        let edir = self.require(EXTRACT, &efp, "extracted paths")?;
        let cfg = &self.cfg;
        let fp = fingerprint(&[METRICS.to_owned(), efp]);
        if let Some(r) = self.reuse(METRICS, &fp)? {
            return Ok(r);
        }
        let dir = self.fresh_dir(METRICS, &fp)?;
        let mut artifacts = Vec::new();
        for split in SPLITS {
            let (base, search) = data.split(split);
            let sets = self.read_sets(&edir, split, base)?;
            let engine = MetricEngine::with_max_len(Arc::clone(search), cfg.search_depth);
            let rows = self.pool.install(|| {
                sets.par_iter()
                    .map(|set| {
                        let mut seen = Vec::new();
                        let mut rows = Vec::new();
                        for p in &set.paths {
                            let rp = p.relation_path();
                            if seen.contains(&rp) {
                                continue;
                            }
                            let metrics = engine.path_metrics(&set.query, &rp, cfg.filter_mode)?;
                            seen.push(rp.clone());
                            rows.push(MetricsRow { query: set.query, relation_path: rp, metrics });
                        }
                        Ok(rows)
                    })
                    .collect::<Result<Vec<Vec<MetricsRow>>, MetricsError>>()
            })?;
            let rows: Vec<MetricsRow> = rows.into_iter().flatten().collect();
            let name = format!("metrics-{split}.csv");
            let path = dir.join(&name);
            let mut w = create(&path)?;
            write_metrics_csv(&mut w, base, &rows, cfg.filter_side)?;
            w.flush().map_err(io_err(&path))?;
            artifacts.push(name);
        }
        self.finish(METRICS, &fp, dir, artifacts)
    }

    /// extract, train, evaluate and explain in order.
    pub fn run_all(&self) -> Result<Vec<StageReport>> {
        Ok(vec![self.cmd_extract()?, self.cmd_train()?, self.cmd_evaluate()?, self.cmd_explain()?])
    }
}
