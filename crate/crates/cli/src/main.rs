//! `kep`: ingest → reify → split → train → predict → evaluate, plus
//! synthetic data and benchmarking.
//!
//! Results go to stdout as JSON (or a text table with `--table`). Errors go
//! to stderr as one JSON object per line. Exit codes: 0 ok, 1 usage, 2 data,
//! 3 numeric failure during training.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kep_core::arm::parse_fraction;
use kep_core::eval::EvalReport;
use kep_core::graph::{build_graph, extract_scenes, split_and_mask, Split, SplitRatios};
use kep_core::ingest;
use kep_core::kge::{EpochStats, NegativePool, NormKind};
use kep_core::pipeline::{
    self, fingerprint, ArmSolver, CcSolver, Dataset, KgeSolver, PipelineConfig, RelationNames, SolverKind,
    TrainedSolver,
};
use kep_core::syngen::{self, GeneratorConfig};
use kep_core::{Error, Fraction, KnowledgeGraph, SceneRecord};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "kep", version, about = "Knowledge-based entity prediction on scene graphs")]
struct Cli {
    /// Worker threads for parallel evaluation and generation; 1 gives
    /// single-threaded runs, 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Print a plain text table instead of JSON where one is available.
    #[arg(long, global = true)]
    table: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a triple file, drop duplicates and write it back canonically.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add scene-includesType-type triples for every scene-includes-instance-type-type path.
    Reify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        relations: RelationArgs,
    },
    /// Split scenes into train/valid/test and mask types of valid/test scenes.
    Split {
        /// Raw or reified triple file.
        #[arg(long)]
        graph: PathBuf,
        /// Receives train.jsonl, valid.jsonl and test.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
        /// Types hidden per valid/test scene.
        #[arg(long, default_value_t = 1)]
        k_mask: usize,
        /// Train, valid and test fractions.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        relations: RelationArgs,
    },
    /// Train one solver and write its artifact.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Model archive (transe, hole, convkb, cc) or rule file (arm).
        #[arg(long)]
        out: PathBuf,
        /// Suppress per-epoch progress lines on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Rank missing types for every scene of a scene file.
    Predict {
        /// Triple file the model was trained against.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        /// Keep this many ranked types per scene; 0 keeps all.
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Collective-classification slots.
        #[arg(long, default_value_t = 1)]
        slots: usize,
        #[arg(long, default_value_t = 10)]
        max_iters: usize,
        #[command(flatten)]
        relations: RelationArgs,
    },
    /// Evaluate a saved model, or train and evaluate over `--repeats` seeds.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Evaluate this artifact instead of training.
        #[arg(long, conflicts_with = "repeats")]
        model: Option<PathBuf>,
        /// Seeds `seed .. seed + repeats`; more than one reports mean ± std.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Include wall-clock time in the report.
        #[arg(long)]
        timing: bool,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic scene graph from a planted archetype mixture.
    Syngen {
        /// Triple file to write.
        #[arg(long)]
        out: PathBuf,
        /// Generator settings as key=value lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the effective generator settings here.
        #[arg(long)]
        config_out: Option<PathBuf>,
        #[arg(long)]
        n_scenes: Option<usize>,
        #[arg(long)]
        archetypes: Option<usize>,
        #[arg(long)]
        vocab: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train each solver and report parameter memory and wall-clock.
    Bench {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Embedding dimensions to measure.
        #[arg(long, value_delimiter = ',', default_values_t = [50, 100, 200])]
        dims: Vec<usize>,
    },
}

#[derive(Args, Debug, Clone)]
struct RelationArgs {
    #[arg(long, default_value = syngen::INCLUDES)]
    includes_relation: String,
    #[arg(long, default_value = syngen::TYPE)]
    type_relation: String,
    #[arg(long, default_value = syngen::INCLUDES_TYPE)]
    includes_type_relation: String,
}

impl RelationArgs {
    fn names(&self) -> RelationNames {
        RelationNames {
            includes: self.includes_relation.clone(),
            type_rel: self.type_relation.clone(),
            includes_type: self.includes_type_relation.clone(),
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Raw or reified triple file.
    #[arg(long)]
    graph: PathBuf,
    /// Directory written by `split`.
    #[arg(long)]
    split_dir: PathBuf,
    #[command(flatten)]
    relations: RelationArgs,
}

/// Solver hyperparameters; unset flags keep the library defaults.
#[derive(Args, Debug)]
struct SolverArgs {
    /// transe, hole, convkb, arm or cc; repeatable for `bench`.
    #[arg(long, value_parser = parse_solver)]
    solver: Vec<SolverKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding dimension [default: 100].
    #[arg(long)]
    dim: Option<usize>,
    /// [default: 300]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 256]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 0.01]
    #[arg(long)]
    learning_rate: Option<f32>,
    /// [default: 1.0]
    #[arg(long)]
    margin: Option<f32>,
    /// Negatives per positive triple [default: 1].
    #[arg(long)]
    negatives: Option<usize>,
    /// TransE distance, l1 or l2 [default: l2].
    #[arg(long, value_parser = |s: &str| s.parse::<NormKind>())]
    norm: Option<NormKind>,
    /// ConvKB filter count [default: 64].
    #[arg(long)]
    filters: Option<usize>,
    /// Replacement tails drawn from all entities or the relation range [default: range].
    #[arg(long, value_parser = |s: &str| s.parse::<NegativePool>())]
    negative_pool: Option<NegativePool>,
    /// Also corrupt heads of non-target relations.
    #[arg(long)]
    corrupt_heads: bool,
    /// Train embeddings on every relation, not only includesType.
    #[arg(long)]
    full_graph: bool,
    /// ARM support threshold as p/q or decimal [default: 1/20].
    #[arg(long, value_parser = parse_fraction)]
    min_support: Option<Fraction>,
    /// ARM confidence threshold [default: 1/2].
    #[arg(long, value_parser = parse_fraction)]
    min_confidence: Option<Fraction>,
    /// CC smoothing [default: 1.0].
    #[arg(long)]
    alpha: Option<f64>,
    /// CC slots [default: masked types per scene].
    #[arg(long)]
    slots: Option<usize>,
    /// CC passes [default: 10].
    #[arg(long)]
    max_iters: Option<usize>,
    /// Hits@K cutoffs [default: 1,3,10].
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
}

fn parse_solver(s: &str) -> Result<SolverKind, Error> {
    s.parse()
}

impl SolverArgs {
    fn config(&self, solver: SolverKind) -> PipelineConfig {
        let mut c = PipelineConfig::new(solver);
        c.seed = self.seed;
        let k = &mut c.kge;
        macro_rules! set {
            ($($dst:expr => $src:expr),*) => { $(if let Some(v) = $src { $dst = v; })* };
        }
        set!(k.dim => self.dim, k.epochs => self.epochs, k.batch_size => self.batch_size,
             k.learning_rate => self.learning_rate, k.margin => self.margin,
             k.negatives_per_positive => self.negatives, k.norm => self.norm,
             k.num_filters => self.filters, k.negative_pool => self.negative_pool);
        k.corrupt_heads = self.corrupt_heads;
        k.full_graph = self.full_graph;
        set!(c.min_support => self.min_support, c.min_confidence => self.min_confidence,
             c.alpha => self.alpha, c.max_iters => self.max_iters, c.ks => self.ks.clone());
        c.n_slots = self.slots;
        c
    }

    fn single(&self) -> Result<PipelineConfig, CliError> {
        match self.solver.as_slice() {
            [one] => Ok(self.config(*one)),
            [] => Err(CliError::Usage("--solver is required".into())),
            _ => Err(CliError::Usage("exactly one --solver expected".into())),
        }
    }
}

enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config { .. }) => 1,
            CliError::Core(Error::NonFiniteLoss { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }

    fn record(&self) -> Value {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Core(e @ Error::NonFiniteLoss { .. }) => ("numeric", e.to_string()),
            CliError::Core(e @ Error::Config { .. }) => ("usage", e.to_string()),
            CliError::Core(e) => ("data", e.to_string()),
        };
        json!({ "error": kind, "exit_code": self.code(), "message": message })
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string().lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_string();
            return fail(&CliError::Usage(message.trim_start_matches("error: ").to_string()));
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            return fail(&CliError::Usage(e.to_string()));
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.record());
    ExitCode::from(e.code())
}

/// One JSON line on stdout; a closed pipe is not an error.
fn emit(value: &Value) {
    let line = serde_json::to_string(value).expect("JSON value serializes");
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn provenance(fp: &str, seed: Option<u64>) -> Vec<String> {
    let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    vec![format!("fingerprint={fp} seed={seed}")]
}

fn load_graph(path: &Path) -> CliResult<KnowledgeGraph> {
    Ok(build_graph(ingest::load_triples(path)?))
}

fn split_path(dir: &Path, part: &str) -> PathBuf {
    dir.join(format!("{part}.jsonl"))
}

fn load_dataset(data: &DataArgs) -> CliResult<Dataset> {
    let names = data.relations.names();
    let graph = pipeline::reify(&load_graph(&data.graph)?, &names)?;
    let load = |part| ingest::load_scenes(split_path(&data.split_dir, part), &graph);
    let split = Split { train: load("train")?, valid: load("valid")?, test: load("test")?, flagged: Vec::new() };
    let k_mask = split.valid.iter().chain(&split.test).map(|s| s.masked.len()).max().unwrap_or(1).max(1);
    Ok(Dataset::from_split(graph, &names, split, k_mask))
}

fn is_model_archive(path: &Path) -> CliResult<bool> {
    let bytes = fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(bytes.starts_with(b"kep-model-archive\n"))
}

/// Rebuilds a trained solver from an artifact written by `train`.
fn load_solver(
    path: &Path,
    graph: &KnowledgeGraph,
    names: &RelationNames,
    n_slots: usize,
    max_iters: usize,
) -> CliResult<(SolverKind, TrainedSolver)> {
    if !is_model_archive(path)? {
        let rules = ingest::load_rules(path, graph)?;
        return Ok((SolverKind::Arm, TrainedSolver::Arm(ArmSolver { rules })));
    }
    let kind: SolverKind = ingest::archive_kind(path)?.parse()?;
    if kind == SolverKind::Cc {
        let model = ingest::load_cc_model(path)?;
        return Ok((kind, TrainedSolver::Cc(CcSolver { model, n_slots: n_slots.max(1), max_iters })));
    }
    let relation = graph
        .relation_id(&names.includes_type)
        .ok_or_else(|| Error::UnknownRelationLabel(names.includes_type.clone()))?;
    let model = ingest::load_model::<f32>(path)?;
    let candidates = graph.range_of(relation);
    Ok((kind, TrainedSolver::Kge(KgeSolver { model, relation, candidates })))
}

fn progress(stats: &EpochStats) {
    let line = serde_json::to_string(stats).expect("epoch stats serialize");
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Ingest { input, out } => {
            let raw = ingest::load_triples(input)?;
            let g = build_graph(raw.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));
            let fp = fingerprint(&format!("ingest:{}", g.num_triples()));
            if let Some(out) = out {
                ingest::save_triples(g.labelled_triples(), &provenance(&fp, None), out)?;
            }
            emit(&json!({
                "fingerprint": fp,
                "lines": raw.len(),
                "triples": g.num_triples(),
                "duplicates": raw.len() - g.num_triples(),
                "nodes": g.num_nodes(),
                "relations": g.num_relations(),
            }));
        }
        Command::Reify { input, out, relations } => {
            let names = relations.names();
            let raw = load_graph(input)?;
            let g = pipeline::reify(&raw, &names)?;
            let fp = fingerprint(&format!("reify:{names:?}"));
            ingest::save_triples(g.labelled_triples(), &provenance(&fp, None), out)?;
            emit(&json!({
                "fingerprint": fp,
                "input_triples": raw.num_triples(),
                "triples": g.num_triples(),
                "added": g.num_triples() - raw.num_triples(),
            }));
        }
        Command::Split { graph, out_dir, k_mask, ratios, seed, relations } => {
            let names = relations.names();
            let g = pipeline::reify(&load_graph(graph)?, &names)?;
            let rel = g
                .relation_id(&names.includes_type)
                .ok_or_else(|| Error::UnknownRelationLabel(names.includes_type.clone()))?;
            let ratios = SplitRatios::new(ratios[0], ratios[1], ratios[2])?;
            let split = split_and_mask(&extract_scenes(&g, rel), ratios, *k_mask, *seed)?;
            let fp = fingerprint(&format!("split:{ratios:?}:{k_mask}:{seed}:{names:?}"));
            fs::create_dir_all(out_dir).map_err(|e| Error::Io { path: out_dir.clone(), source: e })?;
            let comments = provenance(&fp, Some(*seed));
            for (part, scenes) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
                ingest::save_scenes(scenes, &g, &comments, split_path(out_dir, part))?;
            }
            let flagged: Vec<&str> = split.flagged.iter().filter_map(|&n| g.node_label(n)).collect();
            emit(&json!({
                "fingerprint": fp,
                "seed": seed,
                "train": split.train.len(),
                "valid": split.valid.len(),
                "test": split.test.len(),
                "flagged": flagged,
            }));
        }
        Command::Train { data, solver, out, quiet } => {
            let config = solver.single()?;
            let ds = load_dataset(data)?;
            let fp = config.fingerprint();
            let mut epochs = Vec::new();
            let trained = pipeline::train_solver(&ds, &config, |s| {
                if !quiet {
                    progress(s);
                }
                epochs.push(s.mean_loss);
            })?;
            let comments = provenance(&fp, Some(config.seed));
            match &trained {
                TrainedSolver::Kge(s) => ingest::save_model(&s.model, Some(&fp), out)?,
                TrainedSolver::Arm(s) => ingest::save_rules(&s.rules, &ds.graph, &comments, out)?,
                TrainedSolver::Cc(s) => ingest::save_cc_model(&s.model, Some(&fp), out)?,
            }
            emit(&json!({
                "solver": config.solver.name(),
                "fingerprint": fp,
                "seed": config.seed,
                "epochs": epochs.len(),
                "final_loss": epochs.last(),
                "parameter_bytes": trained.parameter_bytes(),
            }));
        }
        Command::Predict { graph, model, scenes, top, slots, max_iters, relations } => {
            let names = relations.names();
            let g = pipeline::reify(&load_graph(graph)?, &names)?;
            let (kind, solver) = load_solver(model, &g, &names, *slots, *max_iters)?;
            let scenes: Vec<SceneRecord> = ingest::load_scenes(scenes, &g)?;
            let fp = fingerprint(&format!("predict:{kind}:{slots}:{max_iters}:{names:?}"));
            for scene in &scenes {
                let ranking = solver.as_solver().predict(scene)?;
                let keep = if *top == 0 { ranking.len() } else { *top };
                let ranked: Vec<Value> = ranking
                    .entries
                    .iter()
                    .take(keep)
                    .map(|e| json!({ "type": g.node_label(e.id), "score": e.score }))
                    .collect();
                emit(&json!({
                    "fingerprint": fp,
                    "solver": kind.name(),
                    "scene_id": g.node_label(scene.scene),
                    "ranking": ranked,
                }));
            }
        }
        Command::Evaluate { data, solver, model, repeats, timing, out } => {
            let ds = load_dataset(data)?;
            let text = match model {
                Some(path) => {
                    let mut config = solver.config(SolverKind::HolE);
                    let n_slots = config.n_slots.unwrap_or(ds.k_mask);
                    let (kind, trained) =
                        load_solver(path, &ds.graph, &data.relations.names(), n_slots, config.max_iters)?;
                    config.solver = kind;
                    let report = pipeline::evaluate(&ds, &trained, &config)?;
                    report_text(&report, config.seed, *timing, cli.table)
                }
                None => {
                    let config = solver.single()?;
                    if *repeats == 1 {
                        let report = pipeline::run_experiment(&ds, &config)?;
                        report_text(&report, config.seed, *timing, cli.table)
                    } else {
                        let mut report = pipeline::run_repeats(&ds, &config, *repeats)?;
                        if !timing {
                            report.runs = report.runs.iter().map(EvalReport::without_timing).collect();
                        }
                        if cli.table {
                            report.to_table()
                        } else {
                            serde_json::to_string(&report).expect("report serializes") + "\n"
                        }
                    }
                }
            };
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            if let Some(out) = out {
                fs::write(out, &text).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            }
        }
        Command::Syngen { out, config, config_out, n_scenes, archetypes, vocab, noise, seed } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                    GeneratorConfig::parse(&text)?
                }
                None => GeneratorConfig::default(),
            };
            if archetypes.is_some() || vocab.is_some() {
                // Shape overrides rebuild the default block structure.
                let text = format!(
                    "n_archetypes={}\nvocab_size={}\nnoise={:?}\nn_scenes={}\nseed={}\n",
                    archetypes.unwrap_or(cfg.n_archetypes),
                    vocab.unwrap_or(cfg.vocab_size),
                    cfg.noise,
                    cfg.n_scenes,
                    cfg.seed
                );
                cfg = GeneratorConfig::parse(&text)?;
            }
            if let Some(n) = n_scenes {
                cfg.n_scenes = *n;
            }
            if let Some(e) = noise {
                cfg.noise = *e;
            }
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            cfg.validate()?;
            let fp = fingerprint(&cfg.to_text());
            let data = syngen::generate(&cfg)?;
            let triples = data.triples.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str()));
            ingest::save_triples(triples, &provenance(&fp, Some(cfg.seed)), out)?;
            if let Some(path) = config_out {
                let text = format!("# fingerprint={fp}\n{}", cfg.to_text());
                fs::write(path, text).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            }
            let types = data.scenes.iter().map(|s| s.types.len()).sum::<usize>();
            emit(&json!({
                "fingerprint": fp,
                "seed": cfg.seed,
                "scenes": data.scenes.len(),
                "triples": data.triples.len(),
                "mean_types_per_scene": types as f64 / data.scenes.len().max(1) as f64,
            }));
        }
        Command::Bench { data, solver, dims } => {
            let ds = load_dataset(data)?;
            let kinds: Vec<SolverKind> =
                if solver.solver.is_empty() { SolverKind::ALL.to_vec() } else { solver.solver.clone() };
            let mut rows = Vec::new();
            for kind in kinds {
                let config = solver.config(kind);
                for row in pipeline::bench(&ds, &config, dims)? {
                    let mut v = serde_json::to_value(&row).expect("bench row serializes");
                    v["fingerprint"] = json!(config.fingerprint());
                    v["seed"] = json!(config.seed);
                    rows.push(v);
                }
            }
            if cli.table {
                let mut out = format!(
                    "{:<8} | {:>5} | {:>15} | {:>10} | {:>10}\n",
                    "solver", "dim", "param bytes", "train ms", "ms/epoch"
                );
                for r in &rows {
                    out += &format!(
                        "{:<8} | {:>5} | {:>15} | {:>10} | {:>10}\n",
                        r["solver"].as_str().unwrap_or(""),
                        r["dim"].as_u64().map_or("-".into(), |d| d.to_string()),
                        r["parameter_bytes"].to_string(),
                        r["train_ms"].to_string(),
                        r["ms_per_epoch"].as_f64().map_or("-".into(), |m| format!("{m:.2}")),
                    );
                }
                let _ = std::io::stdout().lock().write_all(out.as_bytes());
            } else {
                for r in &rows {
                    emit(r);
                }
            }
        }
    }
    Ok(())
}

fn report_text(report: &EvalReport, seed: u64, timing: bool, table: bool) -> String {
    let report = if timing { report.clone() } else { report.without_timing() };
    if table {
        return report.to_table();
    }
    let mut v = serde_json::to_value(&report).expect("report serializes");
    v["seed"] = json!(seed);
    if !timing {
        v.as_object_mut().expect("report is an object").remove("wall_clock_ms");
    }
    serde_json::to_string(&v).expect("JSON value serializes") + "\n"
}
