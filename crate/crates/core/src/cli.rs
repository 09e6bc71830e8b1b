//! The `flock` command line.
//!
//! Exit codes: 0 on success, 1 when a workflow fails (including failed
//! verification checks), 2 on usage errors such as unknown flags, missing
//! or malformed configuration files.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crate::config::{RunConfig, RUN_KEYS};
use crate::error::FlockError;
use crate::eval::{evaluate, write_ranks_csv, EvalOptions, FilterIndex, MetricReport};
use crate::kg::{load_triples_with, Dataset, KnowledgeGraph, LoadOptions, Query};
use crate::model::{Flock, Task};
use crate::petals::{self, PetalsInstance, PetalsSource};
use crate::record::{format_record, record_with};
use crate::train::{train, TripleSource, Validator};
use crate::verify::{self, Suite, SuiteReport};
use crate::walk::{adapt_walk_count, cover_probe, GraphView, WalkCountPolicy};

#[derive(Parser, Debug)]
#[command(name = "flock", version, about = "Random-walk knowledge graph completion")]
pub struct Cli {
    /// Worker threads; 1 gives bitwise reproducible runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on a dataset directory or a PETALS benchmark directory.
    #[command(after_help = train_keys_help())]
    Train(TrainArgs),
    /// Filtered ranking evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Score every candidate of one query.
    Predict(PredictArgs),
    /// Write the PETALS benchmark to a directory.
    PetalsGen(PetalsGenArgs),
    /// Accuracy of a checkpoint on a PETALS directory.
    PetalsEval(PetalsEvalArgs),
    /// Edge-cover statistics of free random walks.
    WalkBench(WalkBenchArgs),
    /// Run one verification suite.
    Verify(VerifyArgs),
    /// Finite-difference checks of every operation, layer and the full loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Configuration file with `key = value` lines (default: none, built-in defaults).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable, e.g. --set steps=200.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Dataset directory, overriding `dataset_dir` (default: from config).
    #[arg(long = "dataset_dir")]
    pub dataset_dir: Option<PathBuf>,
    /// Output directory, overriding `out_dir` (default: from config, else runs).
    #[arg(long = "out_dir")]
    pub out_dir: Option<PathBuf>,
    /// Master seed, overriding `seed` (default: from config, else 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optimizer steps, overriding `steps` (default: from config, else 1000).
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Valid,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory with train.txt and the split to rank.
    #[arg(long = "dataset_dir")]
    pub dataset_dir: PathBuf,
    /// Expected task of the checkpoint (default: the checkpoint's own).
    #[arg(long)]
    pub task: Option<String>,
    /// Ensemble passes per query (default: the checkpoint's `ensemble`).
    #[arg(long)]
    pub passes: Option<usize>,
    /// Walks per scenario, or `auto` to adapt to the graph size (default: the checkpoint's `base_walks`).
    #[arg(long)]
    pub walks: Option<String>,
    /// Rank tails only.
    #[arg(long = "tail-only", default_value_t = false)]
    pub tail_only: bool,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Evaluate at most this many triples; 0 for all.
    #[arg(long, default_value_t = 0)]
    pub limit: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for metrics.json and ranks.csv (default: metrics to stdout only).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Triple file or dataset directory (its train.txt) to walk on.
    #[arg(long)]
    pub graph: PathBuf,
    /// Query by name: "h r ?" for tails, "? r t" for heads, "h ? t" for relations.
    #[arg(long)]
    pub query: String,
    /// Ensemble passes (default: the checkpoint's `ensemble`).
    #[arg(long)]
    pub passes: Option<usize>,
    /// Walks per scenario (default: the checkpoint's `base_walks`).
    #[arg(long)]
    pub walks: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of candidates to print.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Print the anonymized records of this many walks of the first pass.
    #[arg(long, default_value_t = 0)]
    pub dump_records: usize,
}

#[derive(Args, Debug)]
pub struct PetalsGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct PetalsEvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub passes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct WalkBenchArgs {
    /// Triple file or dataset directory (its train.txt).
    #[arg(long)]
    pub graph: PathBuf,
    /// Walk lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128")]
    pub length: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Invariance,
    Gradients,
    Scaling,
    PetalsStructure,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum)]
    pub suite: SuiteArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn train_keys_help() -> String {
    let defaults = RunConfig::default().to_text();
    let mut s = String::from("Configuration keys (defaults):\n");
    for (key, desc) in RUN_KEYS {
        let value = defaults
            .lines()
            .find_map(|l| {
                l.split_once(" = ")
                    .filter(|(k, _)| k == key)
                    .map(|(_, v)| v.to_string())
            })
            .unwrap_or_else(|| "none".into());
        let _ = writeln!(s, "  {key:<18} {desc} [default: {value}]");
    }
    s
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Workflow(FlockError),
}

impl From<FlockError> for CliError {
    fn from(e: FlockError) -> Self {
        CliError::Workflow(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Workflow(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(&cli.log_level);
    match run(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Workflow(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp_millis()
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Runs a parsed command; `Ok(false)` reports failed checks.
pub fn run(cli: Cli) -> CliResult<bool> {
    let threads = cli.threads.max(1);
    // A second initialisation (tests calling `run` twice) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    match cli.command {
        Command::Train(a) => cmd_train(a, threads),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::PetalsGen(a) => cmd_petals_gen(a),
        Command::PetalsEval(a) => cmd_petals_eval(a),
        Command::WalkBench(a) => cmd_walk_bench(a),
        Command::Verify(a) => {
            let suite = match a.suite {
                SuiteArg::Invariance => Suite::Invariance,
                SuiteArg::Gradients => Suite::Gradients,
                SuiteArg::Scaling => Suite::Scaling,
                SuiteArg::PetalsStructure => Suite::PetalsStructure,
            };
            print_suite(&verify::run_suite(suite, a.seed)?)
        }
        Command::Gradcheck(a) => print_suite(&verify::gradient_report(a.seed)?),
    }
}

fn print_suite(rep: &SuiteReport) -> CliResult<bool> {
    for l in &rep.lines {
        println!("{l}");
    }
    println!("{}", if rep.passed { "PASSED" } else { "FAILED" });
    Ok(rep.passed)
}

/// Builds the run configuration from an optional file, `--set` overrides
/// and dedicated flags, in that order of precedence (last wins).
pub fn resolve_train_config(a: &TrainArgs, threads: usize) -> CliResult<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            if !p.is_file() {
                return Err(usage(format!("config file {} not found", p.display())));
            }
            RunConfig::from_file(p).map_err(usage)?
        }
        None => RunConfig::default(),
    };
    cfg.train.threads = threads;
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    if let Some(d) = &a.dataset_dir {
        cfg.dataset_dir = Some(d.clone());
    }
    if let Some(d) = &a.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs, threads: usize) -> CliResult<bool> {
    let cfg = resolve_train_config(&a, threads)?;
    let dir = cfg
        .dataset_dir
        .clone()
        .ok_or_else(|| usage("no dataset_dir given (config key or --dataset_dir)"))?;
    if !dir.is_dir() {
        return Err(usage(format!("dataset directory {} not found", dir.display())));
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(FlockError::from)?;
    std::fs::write(cfg.out_dir.join("run.cfg"), cfg.to_text()).map_err(FlockError::from)?;
    info!("training on {} into {}", dir.display(), cfg.out_dir.display());
    if petals::is_benchmark_dir(&dir) {
        train_petals(&cfg, &petals::load_benchmark(&dir)?)
    } else {
        train_dataset(&cfg, &Dataset::load(&dir, LoadOptions::default())?)
    }
}

fn train_petals(cfg: &RunConfig, instances: &[PetalsInstance]) -> CliResult<bool> {
    let mut model = Flock::new(cfg.model.clone(), cfg.train.seed)?;
    let stride = if cfg.val_queries == 0 {
        1
    } else {
        instances.len().div_ceil(cfg.val_queries).max(1)
    };
    let val_set: Vec<PetalsInstance> = instances.iter().step_by(stride).cloned().collect();
    let (passes, seed) = (cfg.val_passes, cfg.train.seed);
    let validator = move |m: &Flock| -> crate::Result<f64> {
        Ok(petals::petals_accuracy(&petals::model_scores(
            m, &val_set, passes, seed,
        )?))
    };
    let t0 = Instant::now();
    let report = train(
        &mut model,
        &PetalsSource { instances },
        &cfg.train,
        Some(&validator as &Validator<'_>),
        Some(&cfg.out_dir),
    )?;
    let scores = petals::model_scores(&model, instances, model.config.ensemble, cfg.train.seed)?;
    let acc = petals::petals_accuracy(&scores);
    let json = serde_json::json!({
        "instances": instances.len(),
        "passes": model.config.ensemble,
        "train_accuracy": acc,
        "best_val_accuracy": report.best_metric,
        "best_step": report.best_step,
        "seconds": t0.elapsed().as_secs_f64(),
    });
    write_json(&cfg.out_dir.join("report.json"), &json)?;
    println!("{json}");
    Ok(true)
}

fn train_dataset(cfg: &RunConfig, ds: &Dataset) -> CliResult<bool> {
    let mut mcfg = cfg.model.clone();
    mcfg.train_entities = ds.graph.num_entities() as f64;
    mcfg.train_triples = ds.graph.num_triples() as f64;
    let mut model = Flock::new(mcfg, cfg.train.seed)?;
    let filter = FilterIndex::new(ds.train.iter().chain(&ds.valid).chain(&ds.test));
    let source = TripleSource::new(
        &ds.graph,
        &ds.train,
        model.config.task,
        cfg.train.negatives,
        cfg.train.filter_negatives,
    );
    let opts = EvalOptions {
        passes: cfg.val_passes,
        seed: cfg.train.seed,
        tail_only: false,
        walks: None,
        limit: cfg.val_queries,
    };
    let validator = |m: &Flock| -> crate::Result<f64> { Ok(evaluate(m, &ds.graph, &ds.valid, &filter, &opts)?.0.mrr) };
    let validate: Option<&Validator<'_>> = if ds.valid.is_empty() {
        warn!("no valid.txt; keeping the final parameters");
        None
    } else {
        Some(&validator)
    };
    let report = train(&mut model, &source, &cfg.train, validate, Some(&cfg.out_dir))?;
    if report.checkpoint.is_none() {
        model.save(&cfg.out_dir.join("best.ckpt"))?;
    }
    if !ds.test.is_empty() {
        let opts = EvalOptions {
            passes: model.config.ensemble,
            ..opts
        };
        let (metrics, ranks) = evaluate(&model, &ds.graph, &ds.test, &filter, &EvalOptions { limit: 0, ..opts })?;
        write_ranks_csv(&cfg.out_dir.join("test_ranks.csv"), &ds.graph, &ranks)?;
        std::fs::write(cfg.out_dir.join("test_metrics.json"), metrics.to_json() + "\n").map_err(FlockError::from)?;
        println!("{}", metrics.to_json());
    }
    Ok(true)
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| FlockError::Contract(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(FlockError::from)?;
    Ok(())
}

fn load_model(path: &Path) -> CliResult<Flock> {
    if !path.is_file() {
        return Err(usage(format!("checkpoint {} not found", path.display())));
    }
    Ok(Flock::load(path)?)
}

/// Walk count for `--walks`: a number, or `auto` to adapt the training
/// count to the size of `graph`.
fn resolve_walks(spec: Option<&str>, model: &Flock, graph: &KnowledgeGraph) -> CliResult<Option<usize>> {
    match spec {
        None => Ok(None),
        Some("auto") => {
            let c = &model.config;
            if c.train_entities <= 0.0 || c.train_triples <= 0.0 {
                return Err(usage(
                    "--walks auto needs a checkpoint that records its training graph size",
                ));
            }
            let policy = WalkCountPolicy::new(c.base_walks, c.train_entities, c.train_triples);
            let n = adapt_walk_count(&policy, graph.num_entities(), graph.num_triples())?;
            info!("adapted walk count: {n}");
            Ok(Some(n))
        }
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("--walks expects a number or auto, got {s:?}"))),
    }
}

fn cmd_eval(a: EvalArgs) -> CliResult<bool> {
    let model = load_model(&a.checkpoint)?;
    if let Some(t) = &a.task {
        let t: Task = t.parse().map_err(usage)?;
        if t != model.config.task {
            return Err(usage(format!(
                "checkpoint was trained for the {} task",
                model.config.task
            )));
        }
    }
    let ds = Dataset::load(&a.dataset_dir, LoadOptions::default())?;
    let filter = FilterIndex::new(ds.train.iter().chain(&ds.valid).chain(&ds.test));
    let triples = match a.split {
        Split::Valid => &ds.valid,
        Split::Test => &ds.test,
    };
    if triples.is_empty() {
        return Err(usage(format!(
            "the {:?} split of {} is empty",
            a.split,
            a.dataset_dir.display()
        )));
    }
    let opts = EvalOptions {
        passes: a.passes.unwrap_or(model.config.ensemble),
        seed: a.seed,
        tail_only: a.tail_only,
        walks: resolve_walks(a.walks.as_deref(), &model, &ds.graph)?,
        limit: a.limit,
    };
    let t0 = Instant::now();
    let (metrics, ranks): (MetricReport, _) = evaluate(&model, &ds.graph, triples, &filter, &opts)?;
    info!("ranked {} queries in {:.1}s", metrics.count, t0.elapsed().as_secs_f64());
    println!("{}", metrics.to_json());
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out).map_err(FlockError::from)?;
        std::fs::write(out.join("metrics.json"), metrics.to_json() + "\n").map_err(FlockError::from)?;
        write_ranks_csv(&out.join("ranks.csv"), &ds.graph, &ranks)?;
    }
    Ok(true)
}

fn load_graph(path: &Path) -> CliResult<KnowledgeGraph> {
    let file = if path.is_dir() {
        path.join("train.txt")
    } else {
        path.to_path_buf()
    };
    if !file.is_file() {
        return Err(usage(format!("graph file {} not found", file.display())));
    }
    Ok(load_triples_with(&file, LoadOptions::default())?)
}

/// Parses `"h r ?"`, `"? r t"` or `"h ? t"` against the names of `g`.
pub fn parse_query(text: &str, g: &KnowledgeGraph) -> CliResult<Query> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    let [h, r, t] = parts[..] else {
        return Err(usage(format!("query {text:?} must have three parts")));
    };
    let ent = |name: &str| {
        g.entity_id(name)
            .ok_or_else(|| usage(format!("unknown entity {name:?}")))
    };
    let rel = |name: &str| {
        g.relation_id(name)
            .ok_or_else(|| usage(format!("unknown relation {name:?}")))
    };
    match (h, r, t) {
        (h, r, "?") if h != "?" && r != "?" => Ok(Query::entity(ent(h)?, rel(r)?)),
        ("?", r, t) if r != "?" && t != "?" => Ok(Query::Entity {
            head: ent(t)?,
            rel: rel(r)?,
            inverse: true,
        }),
        (h, "?", t) if h != "?" && t != "?" => Ok(Query::Relation {
            head: ent(h)?,
            tail: ent(t)?,
        }),
        _ => Err(usage(format!("query {text:?} must have exactly one '?'"))),
    }
}

fn cmd_predict(a: PredictArgs) -> CliResult<bool> {
    let mut model = load_model(&a.checkpoint)?;
    let graph = load_graph(&a.graph)?;
    let q = parse_query(&a.query, &graph)?;
    let wants = if q.is_relation() { Task::Relation } else { Task::Entity };
    if wants != model.config.task {
        return Err(usage(format!(
            "checkpoint was trained for the {} task",
            model.config.task
        )));
    }
    if let Some(n) = a.walks {
        model.config.base_walks = n;
    }
    let view = GraphView::new(&graph);
    if a.dump_records > 0 {
        let batches = model.sample_batches(&view, &q, crate::rng::derive(a.seed, &[crate::rng::tag::ENSEMBLE, 0]))?;
        for (w, sc) in batches[0].walks.iter().zip(&batches[0].scenarios).take(a.dump_records) {
            println!("# {sc:?}: {}", format_record(&record_with(w, &q, model.config.scheme)));
        }
    }
    let scores = model.predict(&view, &q, a.passes.unwrap_or(model.config.ensemble), a.seed)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "rank\tcandidate\tscore");
    for (k, &c) in order.iter().take(a.top).enumerate() {
        let name = if q.is_relation() {
            graph.relation_name(c)
        } else {
            graph.entity_name(c)
        };
        let _ = writeln!(out, "{}\t{name}\t{:.6}", k + 1, scores[c]);
    }
    Ok(true)
}

fn cmd_petals_gen(a: PetalsGenArgs) -> CliResult<bool> {
    let bench = petals::generate_benchmark(a.seed)?;
    petals::save_benchmark(&a.out, &bench)?;
    info!("wrote {} instances to {}", bench.len(), a.out.display());
    Ok(true)
}

fn cmd_petals_eval(a: PetalsEvalArgs) -> CliResult<bool> {
    let model = load_model(&a.checkpoint)?;
    if !petals::is_benchmark_dir(&a.dir) {
        return Err(usage(format!("{} is not a PETALS directory", a.dir.display())));
    }
    let instances = petals::load_benchmark(&a.dir)?;
    let scores = petals::model_scores(&model, &instances, a.passes, a.seed)?;
    let mut per_scheme = serde_json::Map::new();
    for sc in 1..=petals::NUM_SCHEMES {
        let s: Vec<(f64, f64)> = instances
            .iter()
            .zip(&scores)
            .filter(|(i, _)| i.params.scheme == sc)
            .map(|(_, s)| *s)
            .collect();
        if !s.is_empty() {
            per_scheme.insert(sc.to_string(), petals::petals_accuracy(&s).into());
        }
    }
    let json = serde_json::json!({
        "instances": instances.len(),
        "passes": a.passes,
        "accuracy": petals::petals_accuracy(&scores),
        "per_scheme": per_scheme,
    });
    println!("{json}");
    Ok(true)
}

fn cmd_walk_bench(a: WalkBenchArgs) -> CliResult<bool> {
    let graph = load_graph(&a.graph)?;
    if a.length.is_empty() || a.samples == 0 {
        return Err(usage("walk-bench needs at least one length and one sample"));
    }
    let points = cover_probe(&GraphView::new(&graph), &a.length, a.samples, a.seed)?;
    let mut csv = String::from("l,cover_fraction,mean_steps_to_cover\n");
    for p in &points {
        let _ = writeln!(csv, "{},{},{}", p.length, p.cover_fraction, p.mean_steps_to_cover);
    }
    match &a.out {
        Some(p) => std::fs::write(p, csv).map_err(FlockError::from)?,
        None => print!("{csv}"),
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> KnowledgeGraph {
        KnowledgeGraph::with_names(
            vec!["a".into(), "b".into()],
            vec!["likes".into()],
            vec![crate::kg::Triple::new(0, 0, 1)],
        )
        .unwrap()
    }

    #[test]
    fn query_forms() {
        let g = graph();
        assert_eq!(parse_query("a likes ?", &g).unwrap(), Query::entity(0, 0));
        assert_eq!(
            parse_query("? likes b", &g).unwrap(),
            Query::Entity {
                head: 1,
                rel: 0,
                inverse: true
            }
        );
        assert_eq!(parse_query("a ? b", &g).unwrap(), Query::Relation { head: 0, tail: 1 });
        assert!(parse_query("a likes", &g).is_err());
        assert!(parse_query("a ? ?", &g).is_err());
        assert!(parse_query("c likes ?", &g).is_err());
    }

    #[test]
    fn missing_config_is_usage_error() {
        assert_eq!(
            main_with_args(["flock", "train", "--config", "/nonexistent/missing.cfg"]),
            2
        );
        assert_eq!(main_with_args(["flock", "train", "--bogus"]), 2);
        assert_eq!(main_with_args(["flock", "frobnicate"]), 2);
    }

    #[test]
    fn overrides_apply_in_order() {
        let a = TrainArgs {
            config: None,
            overrides: vec!["steps=5".into(), "heads=2".into()],
            dataset_dir: Some("d".into()),
            out_dir: None,
            seed: Some(9),
            steps: Some(7),
        };
        let c = resolve_train_config(&a, 1).unwrap();
        assert_eq!((c.train.steps, c.model.heads, c.train.seed), (7, 2, 9));
        let bad = TrainArgs {
            overrides: vec!["nonsense=1".into()],
            ..a
        };
        assert!(matches!(resolve_train_config(&bad, 1), Err(CliError::Usage(_))));
    }

    #[test]
    fn help_lists_keys_with_defaults() {
        let h = train_keys_help();
        assert!(h.contains("walk_length") && h.contains("[default: 128]"));
        assert!(h.contains("weight_decay") && h.contains("[default: auto]"));
    }
}
