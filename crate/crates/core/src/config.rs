//! Run configuration: defaults, `key = value` files and overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{CorruptionMode, TiePolicy};
use crate::graph::SplitMode;
use crate::metrics::{FilterKind, Mode, Side};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{key}`; valid keys: {valid}")]
    UnknownKey { key: String, valid: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invariant(&'static str),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    /// Hashing features, with the trained projection when one exists.
    Hashing,
    /// HTTP embedding server at `service_url`.
    Service,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Candidates per positive for training and validation (1 positive + negatives).
    pub train_candidates: usize,
    /// Candidates per positive for testing.
    pub test_candidates: usize,
    /// M: paths kept per triplet for scoring.
    pub max_paths: usize,
    /// Path budget for explanations.
    pub max_paths_explain: usize,
    /// L: maximum path length.
    pub search_depth: usize,
    pub filter: FilterKind,
    pub filter_mode: Mode,
    pub filter_side: Side,
    /// Explicit threshold; when unset the filter kind's default applies.
    pub threshold: Option<f64>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub margin: f64,
    pub embedder: EmbedderKind,
    pub embed_dim: usize,
    pub service_url: Option<String>,
    pub tie_policy: TiePolicy,
    pub corruption: CorruptionMode,
    pub clusters: usize,
    pub mode: SplitMode,
    pub train_graph: Option<PathBuf>,
    /// Graph used for validation and test extraction in inductive mode.
    pub eval_graph: Option<PathBuf>,
    pub entity_descriptions: Option<PathBuf>,
    pub relation_descriptions: Option<PathBuf>,
    pub train_queries: Option<PathBuf>,
    pub valid_queries: Option<PathBuf>,
    pub test_queries: Option<PathBuf>,
    /// Externally provided test negatives; generated when absent.
    pub test_negatives: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Worker threads for per-query work; 0 uses all cores.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            train_candidates: 5,
            test_candidates: 50,
            max_paths: 3,
            max_paths_explain: 20,
            search_depth: 5,
            filter: FilterKind::Confidence,
            filter_mode: Mode::Algorithm,
            filter_side: Side::Head,
            threshold: None,
            epochs: 30,
            learning_rate: 1e-2,
            batch_size: 32,
            margin: 0.0,
            embedder: EmbedderKind::Hashing,
            embed_dim: 256,
            service_url: None,
            tie_policy: TiePolicy::Pessimistic,
            corruption: CorruptionMode::Tail,
            clusters: 4,
            mode: SplitMode::Transductive,
            train_graph: None,
            eval_graph: None,
            entity_descriptions: None,
            relation_descriptions: None,
            train_queries: None,
            valid_queries: None,
            test_queries: None,
            test_negatives: None,
            out_dir: PathBuf::from("runs"),
            workers: 0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "train_candidates",
    "test_candidates",
    "max_paths",
    "max_paths_explain",
    "search_depth",
    "filter",
    "filter_mode",
    "filter_side",
    "threshold",
    "epochs",
    "learning_rate",
    "batch_size",
    "margin",
    "embedder",
    "embed_dim",
    "service_url",
    "tie_policy",
    "corruption",
    "clusters",
    "mode",
    "train_graph",
    "eval_graph",
    "entity_descriptions",
    "relation_descriptions",
    "train_queries",
    "valid_queries",
    "test_queries",
    "test_negatives",
    "out_dir",
    "workers",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::Value {
        key: key.to_owned(),
        value: value.to_owned(),
        reason: e.to_string(),
    })
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show<T: std::fmt::Debug>(v: &Option<T>) -> String {
    match v {
        Some(v) => format!("{v:?}").trim_matches('"').to_owned(),
        None => String::new(),
    }
}

impl RunConfig {
    /// Sets one key. Paths in a file are resolved by the caller.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, value)?,
            "train_candidates" => self.train_candidates = parse(key, value)?,
            "test_candidates" => self.test_candidates = parse(key, value)?,
            "max_paths" => self.max_paths = parse(key, value)?,
            "max_paths_explain" => self.max_paths_explain = parse(key, value)?,
            "search_depth" => self.search_depth = parse(key, value)?,
            "filter" => self.filter = parse(key, value)?,
            "filter_mode" => self.filter_mode = parse(key, value)?,
            "filter_side" => self.filter_side = parse(key, value)?,
            "threshold" => {
                self.threshold = match value {
                    "" | "default" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "epochs" => self.epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "embedder" => {
                self.embedder = match value.to_ascii_lowercase().as_str() {
                    "hashing" => EmbedderKind::Hashing,
                    "service" => EmbedderKind::Service,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected hashing or service".into(),
                        })
                    }
                }
            }
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "service_url" => self.service_url = (!value.is_empty()).then(|| value.to_owned()),
            "tie_policy" => self.tie_policy = parse(key, value)?,
            "corruption" => self.corruption = parse(key, value)?,
            "clusters" => self.clusters = parse(key, value)?,
            "mode" => {
                self.mode = match value.to_ascii_lowercase().as_str() {
                    "transductive" => SplitMode::Transductive,
                    "inductive" => SplitMode::Inductive,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected transductive or inductive".into(),
                        })
                    }
                }
            }
            "train_graph" => self.train_graph = opt_path(value),
            "eval_graph" => self.eval_graph = opt_path(value),
            "entity_descriptions" => self.entity_descriptions = opt_path(value),
            "relation_descriptions" => self.relation_descriptions = opt_path(value),
            "train_queries" => self.train_queries = opt_path(value),
            "valid_queries" => self.valid_queries = opt_path(value),
            "test_queries" => self.test_queries = opt_path(value),
            "test_negatives" => self.test_negatives = opt_path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "workers" => self.workers = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey { key: other.to_owned(), valid: KEYS.join(", ") }),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Defaults, then the file, then `overrides` in order; validated.
    /// Relative paths in the file are taken relative to the file.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text =
                std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
            cfg.apply_text(&text)?;
            if let Some(dir) = path.parent() {
                cfg.resolve_relative(dir);
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_relative(&mut self, dir: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = dir.join(&*path);
                }
            }
        };
        for p in [
            &mut self.train_graph,
            &mut self.eval_graph,
            &mut self.entity_descriptions,
            &mut self.relation_descriptions,
            &mut self.train_queries,
            &mut self.valid_queries,
            &mut self.test_queries,
            &mut self.test_negatives,
        ] {
            fix(p);
        }
        if self.out_dir.is_relative() {
            self.out_dir = dir.join(&self.out_dir);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        use ConfigError::Invariant;
        if self.search_depth < 1 {
            return Err(Invariant("L >= 1 (search_depth)"));
        }
        if self.max_paths < 1 {
            return Err(Invariant("M >= 1 (max_paths)"));
        }
        if self.max_paths_explain < 1 {
            return Err(Invariant("max_paths_explain >= 1"));
        }
        if !(0.0..=1.0).contains(&self.effective_threshold()) {
            return Err(Invariant("threshold in [0, 1]"));
        }
        if self.train_candidates < 2 {
            return Err(Invariant("train_candidates >= 2 (one positive plus negatives)"));
        }
        if self.test_candidates < 2 {
            return Err(Invariant("test_candidates >= 2 (one positive plus negatives)"));
        }
        if !(self.margin > -1.0 && self.margin < 1.0) {
            return Err(Invariant("margin in (-1, 1)"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Invariant("learning_rate >= 0"));
        }
        if self.batch_size < 1 {
            return Err(Invariant("batch_size >= 1"));
        }
        if self.embed_dim < 1 {
            return Err(Invariant("embed_dim >= 1"));
        }
        if self.clusters < 1 {
            return Err(Invariant("clusters >= 1"));
        }
        if self.embedder == EmbedderKind::Service && self.service_url.is_none() {
            return Err(Invariant("service_url is required when embedder = service"));
        }
        Ok(())
    }

    pub fn effective_threshold(&self) -> f64 {
        self.threshold.unwrap_or_else(|| self.filter.default_threshold())
    }

    /// Every effective parameter as `key = value` lines, in `KEYS` order.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "seed" => self.seed.to_string(),
                "train_candidates" => self.train_candidates.to_string(),
                "test_candidates" => self.test_candidates.to_string(),
                "max_paths" => self.max_paths.to_string(),
                "max_paths_explain" => self.max_paths_explain.to_string(),
                "search_depth" => self.search_depth.to_string(),
                "filter" => self.filter.to_string(),
                "filter_mode" => self.filter_mode.to_string(),
                "filter_side" => self.filter_side.to_string(),
                "threshold" => format!("{:e}", self.effective_threshold()),
                "epochs" => self.epochs.to_string(),
                "learning_rate" => format!("{:e}", self.learning_rate),
                "batch_size" => self.batch_size.to_string(),
                "margin" => self.margin.to_string(),
                "embedder" => format!("{:?}", self.embedder).to_ascii_lowercase(),
                "embed_dim" => self.embed_dim.to_string(),
                "service_url" => show(&self.service_url),
                "tie_policy" => self.tie_policy.to_string(),
                "corruption" => self.corruption.to_string(),
                "clusters" => self.clusters.to_string(),
                "mode" => format!("{:?}", self.mode).to_ascii_lowercase(),
                "train_graph" => show(&self.train_graph),
                "eval_graph" => show(&self.eval_graph),
                "entity_descriptions" => show(&self.entity_descriptions),
                "relation_descriptions" => show(&self.relation_descriptions),
                "train_queries" => show(&self.train_queries),
                "valid_queries" => show(&self.valid_queries),
                "test_queries" => show(&self.test_queries),
                "test_negatives" => show(&self.test_negatives),
                "out_dir" => self.out_dir.display().to_string(),
                "workers" => self.workers.to_string(),
                _ => unreachable!("every key is echoed"),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}
