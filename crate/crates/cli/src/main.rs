use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reasonpath::config::RunConfig;
use reasonpath::pipeline::{Pipeline, PipelineError, StageReport};

#[derive(Parser)]
#[command(name = "reasonpath", version, about = "Reasoning-path mining, scoring and explanation over knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw negatives and extract filtered reasoning paths for every split.
    Extract(Overrides),
    /// Train the projection embedder on the extracted training paths.
    Train(Overrides),
    /// Rank test positives among their candidates (MRR, Hit@1).
    Evaluate(Overrides),
    /// Write clustered explanation reports for the evaluated test queries.
    Explain(Overrides),
    /// Dump support, coverage and confidence of the extracted relation paths.
    Metrics(Overrides),
    /// extract, train, evaluate and explain in order.
    Run(Overrides),
    /// Print the effective configuration.
    Config(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Path filter: none, coverage or confidence.
    #[arg(long)]
    filter: Option<String>,
    /// Filter threshold (defaults by filter kind).
    #[arg(long)]
    threshold: Option<String>,
    /// Maximum path length L.
    #[arg(long)]
    search_depth: Option<String>,
    /// Paths kept per triplet M.
    #[arg(long)]
    max_paths: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// transductive or inductive.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    train_graph: Option<String>,
    #[arg(long)]
    eval_graph: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    /// hashing or service.
    #[arg(long)]
    embedder: Option<String>,
    #[arg(long)]
    service_url: Option<String>,
    /// Any other key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn pairs(&self) -> Result<Vec<(String, String)>, String> {
        let mut out = Vec::new();
        let named = [
            ("filter", &self.filter),
            ("threshold", &self.threshold),
            ("search_depth", &self.search_depth),
            ("max_paths", &self.max_paths),
            ("seed", &self.seed),
            ("mode", &self.mode),
            ("train_graph", &self.train_graph),
            ("eval_graph", &self.eval_graph),
            ("out_dir", &self.out_dir),
            ("embedder", &self.embedder),
            ("service_url", &self.service_url),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                out.push((k.to_owned(), v.clone()));
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            out.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        Ok(out)
    }
}

type StageRun = fn(&Pipeline) -> Result<Vec<StageReport>, PipelineError>;

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": message, "kind": kind }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (overrides, run): (&Overrides, StageRun) = match &cli.command {
        Command::Extract(o) => (o, |p| p.cmd_extract().map(|r| vec![r])),
        Command::Train(o) => (o, |p| p.cmd_train().map(|r| vec![r])),
        Command::Evaluate(o) => (o, |p| p.cmd_evaluate().map(|r| vec![r])),
        Command::Explain(o) => (o, |p| p.cmd_explain().map(|r| vec![r])),
        Command::Metrics(o) => (o, |p| p.cmd_metrics().map(|r| vec![r])),
        Command::Run(o) => (o, Pipeline::run_all),
        Command::Config(o) => (o, |_| Ok(Vec::new())),
    };
    let pairs = match overrides.pairs() {
        Ok(p) => p,
        Err(e) => return fail("usage", &e),
    };
    let cfg = match RunConfig::load(overrides.config.as_deref(), &pairs) {
        Ok(c) => c,
        Err(e) => return fail("config", &e.to_string()),
    };
    if let Command::Config(_) = cli.command {
        print!("{}", cfg.echo());
        return ExitCode::SUCCESS;
    }
    let pipeline = match Pipeline::new(cfg, Box::new(|line| eprintln!("{line}"))) {
        Ok(p) => p,
        Err(e) => return fail(e.kind(), &e.to_string()),
    };
    match run(&pipeline) {
        Ok(reports) => {
            for r in reports {
                println!("{}", serde_json::to_string(&r).expect("report serializes"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
