//! End-to-end experiment plumbing: reify and split a scene graph, train one
//! of the five solvers, evaluate it, and repeat over seeds.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::arm::{self, RuleSet};
use crate::cc::{self, CooccurrenceModel};
use crate::eval::{self, EvalReport, RankedPrediction, Solver};
use crate::graph::{self, KnowledgeGraph, NodeId, RelationId, SceneRecord, Split, SplitRatios};
use crate::kge::{self, EmbeddingModel, EpochStats, ModelKind, NegativePool, NormKind, TrainConfig};
use crate::{Error, Fraction, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    TransE,
    HolE,
    ConvKB,
    Arm,
    Cc,
}

impl SolverKind {
    pub const ALL: [SolverKind; 5] =
        [SolverKind::TransE, SolverKind::HolE, SolverKind::ConvKB, SolverKind::Arm, SolverKind::Cc];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::TransE => "transe",
            SolverKind::HolE => "hole",
            SolverKind::ConvKB => "convkb",
            SolverKind::Arm => "arm",
            SolverKind::Cc => "cc",
        }
    }

    pub fn model_kind(self) -> Option<ModelKind> {
        match self {
            SolverKind::TransE => Some(ModelKind::TransE),
            SolverKind::HolE => Some(ModelKind::HolE),
            SolverKind::ConvKB => Some(ModelKind::ConvKB),
            SolverKind::Arm | SolverKind::Cc => None,
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config("solver", format!("unknown solver {s:?}")))
    }
}

/// Embedding hyperparameters; the seed comes from [`PipelineConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct KgeSettings {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub margin: f32,
    pub negatives_per_positive: usize,
    pub norm: NormKind,
    pub num_filters: usize,
    pub negative_pool: NegativePool,
    pub corrupt_heads: bool,
    /// Train on every triple instead of only `includesType`.
    pub full_graph: bool,
}

impl Default for KgeSettings {
    fn default() -> Self {
        KgeSettings {
            dim: 100,
            epochs: 300,
            batch_size: 256,
            learning_rate: 0.01,
            margin: 1.0,
            negatives_per_positive: 1,
            norm: NormKind::L2,
            num_filters: 64,
            negative_pool: NegativePool::RelationRange,
            corrupt_heads: false,
            full_graph: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub solver: SolverKind,
    pub seed: u64,
    pub kge: KgeSettings,
    pub min_support: Fraction,
    pub min_confidence: Fraction,
    pub alpha: f64,
    /// Collective-classification slots; defaults to the masking `k`.
    pub n_slots: Option<usize>,
    pub max_iters: usize,
    pub ks: Vec<usize>,
}

impl PipelineConfig {
    pub fn new(solver: SolverKind) -> Self {
        PipelineConfig {
            solver,
            seed: 0,
            kge: KgeSettings::default(),
            min_support: Fraction::new(1, 20),
            min_confidence: Fraction::new(1, 2),
            alpha: 1.0,
            n_slots: None,
            max_iters: 10,
            ks: eval::DEFAULT_KS.to_vec(),
        }
    }

    /// Short hash of every setting, embedded in all outputs.
    pub fn fingerprint(&self) -> String {
        fingerprint(&format!("{self:?}"))
    }

    pub fn train_config(&self, relation: RelationId) -> Result<TrainConfig<f32>> {
        let kind = self
            .solver
            .model_kind()
            .ok_or_else(|| Error::config("solver", format!("{} is not an embedding solver", self.solver)))?;
        let k = &self.kge;
        Ok(TrainConfig {
            kind,
            dim: k.dim,
            epochs: k.epochs,
            batch_size: k.batch_size,
            learning_rate: k.learning_rate,
            margin: k.margin,
            negatives_per_positive: k.negatives_per_positive,
            seed: self.seed,
            target_relation: (!k.full_graph).then_some(relation),
            norm: k.norm,
            num_filters: k.num_filters,
            corrupt_heads: k.corrupt_heads,
            negative_pool: k.negative_pool,
        })
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn fingerprint(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Relation labels of the scene graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationNames {
    pub includes: String,
    pub type_rel: String,
    pub includes_type: String,
}

impl Default for RelationNames {
    fn default() -> Self {
        RelationNames {
            includes: crate::syngen::INCLUDES.into(),
            type_rel: crate::syngen::TYPE.into(),
            includes_type: crate::syngen::INCLUDES_TYPE.into(),
        }
    }
}

/// Reifies the raw graph when `includes`/`type` are present; a graph that
/// already carries `includesType` is returned as is.
pub fn reify(raw: &KnowledgeGraph, names: &RelationNames) -> Result<KnowledgeGraph> {
    match (raw.relation_id(&names.includes), raw.relation_id(&names.type_rel)) {
        (Some(i), Some(t)) => graph::reify_includes_type(raw, i, t, &names.includes_type),
        _ if raw.relation_id(&names.includes_type).is_some() => Ok(raw.clone()),
        _ => Err(Error::UnknownRelationLabel(names.includes.clone())),
    }
}

/// A reified graph with its scene split.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Every known triple, masked ones included; used for filtering.
    pub graph: KnowledgeGraph,
    pub includes_type: RelationId,
    pub type_rel: Option<RelationId>,
    pub includes: Option<RelationId>,
    pub split: Split,
    pub k_mask: usize,
}

impl Dataset {
    pub fn new(
        raw: &KnowledgeGraph,
        names: &RelationNames,
        ratios: SplitRatios,
        k_mask: usize,
        seed: u64,
    ) -> Result<Self> {
        let graph = reify(raw, names)?;
        let includes_type = graph
            .relation_id(&names.includes_type)
            .ok_or_else(|| Error::UnknownRelationLabel(names.includes_type.clone()))?;
        let scenes = graph::extract_scenes(&graph, includes_type);
        let split = graph::split_and_mask(&scenes, ratios, k_mask, seed)?;
        Ok(Self::from_split(graph, names, split, k_mask))
    }

    pub fn from_split(graph: KnowledgeGraph, names: &RelationNames, split: Split, k_mask: usize) -> Self {
        Dataset {
            includes_type: graph.relation_id(&names.includes_type).unwrap_or(RelationId(u32::MAX)),
            type_rel: graph.relation_id(&names.type_rel),
            includes: graph.relation_id(&names.includes),
            graph,
            split,
            k_mask,
        }
    }

    /// Scenes with at least one masked type.
    pub fn test_queries(&self) -> Vec<SceneRecord> {
        self.split.test.iter().filter(|s| !s.masked.is_empty()).cloned().collect()
    }

    /// The graph a solver may learn from: masked `includesType` triples are
    /// dropped, together with `includes` edges to instances of masked types.
    pub fn training_graph(&self) -> KnowledgeGraph {
        let mut hidden: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
        for s in self.split.valid.iter().chain(&self.split.test) {
            hidden.extend(s.masked.iter().map(|&m| (s.scene, m)));
        }
        self.graph.filtered(|t| {
            if t.relation == self.includes_type {
                return !hidden.contains(&(t.head, t.tail));
            }
            if Some(t.relation) == self.includes {
                if let Some(ty) = self.type_rel {
                    return !self.graph.tails(t.tail, ty).iter().any(|&c| hidden.contains(&(t.head, c)));
                }
            }
            true
        })
    }

    /// Entity types seen as `includesType` tails in the training graph.
    pub fn candidates(&self) -> Vec<NodeId> {
        self.training_graph().range_of(self.includes_type)
    }
}

pub struct KgeSolver {
    pub model: EmbeddingModel<f32>,
    pub relation: RelationId,
    pub candidates: Vec<NodeId>,
}

impl Solver for KgeSolver {
    fn name(&self) -> String {
        self.model.kind().name().to_string()
    }

    fn predict(&self, scene: &SceneRecord) -> Result<RankedPrediction> {
        let cands: Vec<NodeId> = self.candidates.iter().copied().filter(|c| !scene.observed.contains(c)).collect();
        kge::predict_tail(&self.model, scene.scene, self.relation, &cands)
    }
}

pub struct ArmSolver {
    pub rules: RuleSet,
}

impl Solver for ArmSolver {
    fn name(&self) -> String {
        "arm".into()
    }

    fn predict(&self, scene: &SceneRecord) -> Result<RankedPrediction> {
        Ok(arm::predict_arm(&self.rules, &scene.observed))
    }
}

pub struct CcSolver {
    pub model: CooccurrenceModel,
    pub n_slots: usize,
    pub max_iters: usize,
}

impl Solver for CcSolver {
    fn name(&self) -> String {
        "cc".into()
    }

    fn predict(&self, scene: &SceneRecord) -> Result<RankedPrediction> {
        Ok(cc::predict_cc_iterative(&self.model, &scene.observed, self.n_slots, self.max_iters)?.prediction)
    }
}

pub enum TrainedSolver {
    Kge(KgeSolver),
    Arm(ArmSolver),
    Cc(CcSolver),
}

impl TrainedSolver {
    pub fn as_solver(&self) -> &dyn Solver {
        match self {
            TrainedSolver::Kge(s) => s,
            TrainedSolver::Arm(s) => s,
            TrainedSolver::Cc(s) => s,
        }
    }

    /// Bytes held by learned parameters or counts.
    pub fn parameter_bytes(&self) -> usize {
        match self {
            TrainedSolver::Kge(s) => s.model.parameter_bytes(),
            TrainedSolver::Arm(s) => {
                s.rules.rules.iter().map(|r| (r.antecedent.len() + r.consequent.len()) * 4 + 24).sum()
            }
            TrainedSolver::Cc(s) => (s.model.vocab_size() * (s.model.vocab_size() + 2)) * 8,
        }
    }
}

pub fn train_solver(ds: &Dataset, config: &PipelineConfig, on_epoch: impl FnMut(&EpochStats)) -> Result<TrainedSolver> {
    Ok(match config.solver {
        SolverKind::Arm => TrainedSolver::Arm(ArmSolver {
            rules: arm::train_arm(&ds.split.train, config.min_support, config.min_confidence)?,
        }),
        SolverKind::Cc => TrainedSolver::Cc(CcSolver {
            model: cc::train_cc(&ds.split.train, config.alpha)?,
            n_slots: config.n_slots.unwrap_or(ds.k_mask).max(1),
            max_iters: config.max_iters,
        }),
        _ => {
            let g = ds.training_graph();
            let train_cfg = config.train_config(ds.includes_type)?;
            let outcome = kge::train(&g, &train_cfg, on_epoch)?;
            TrainedSolver::Kge(KgeSolver {
                model: outcome.model,
                relation: ds.includes_type,
                candidates: g.range_of(ds.includes_type),
            })
        }
    })
}

/// Trains `config.solver` and evaluates it on the test queries.
pub fn run_experiment(ds: &Dataset, config: &PipelineConfig) -> Result<EvalReport> {
    let start = Instant::now();
    let solver = train_solver(ds, config, |_| {})?;
    let mut report = evaluate(ds, &solver, config)?;
    report.wall_clock_ms = start.elapsed().as_millis();
    Ok(report)
}

pub fn evaluate(ds: &Dataset, solver: &TrainedSolver, config: &PipelineConfig) -> Result<EvalReport> {
    eval::evaluate_solver(
        solver.as_solver(),
        &ds.test_queries(),
        &ds.graph,
        &ds.candidates(),
        &config.ks,
        &config.fingerprint(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub name: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; `None` for a single run.
    pub std: Option<f64>,
}

impl MetricSummary {
    fn new(name: String, values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std =
            (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        MetricSummary { name, values, mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatReport {
    pub solver: String,
    pub config_fingerprint: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<EvalReport>,
    pub summary: Vec<MetricSummary>,
}

impl RepeatReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.summary.iter().find(|m| m.name == name)
    }

    /// One row in the `mean ± std` layout of a results table.
    pub fn to_table(&self) -> String {
        let mut head = format!("{:<8}", "");
        let mut row = format!("{:<8}", self.solver);
        for m in &self.summary {
            let _ = write!(head, " | {:>15}", m.name);
            let _ = write!(row, " | {:>15}", format!("{:.2} ± {:.2}", m.mean, m.std.unwrap_or(0.0)));
        }
        format!("{head}\n{row}\n")
    }
}

/// Runs train + evaluate with seeds `seed .. seed + repeats`; the data
/// split stays fixed.
pub fn run_repeats(ds: &Dataset, config: &PipelineConfig, repeats: usize) -> Result<RepeatReport> {
    if repeats == 0 {
        return Err(Error::config("repeats", "must be at least 1"));
    }
    let seeds: Vec<u64> = (0..repeats as u64).map(|i| config.seed + i).collect();
    let runs = seeds
        .iter()
        .map(|&seed| run_experiment(ds, &PipelineConfig { seed, ..config.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let mut summary = vec![MetricSummary::new("MRR".into(), runs.iter().map(|r| r.mrr).collect())];
    for &k in &config.ks {
        summary.push(MetricSummary::new(format!("H@{k}"), runs.iter().map(|r| r.hits[&k]).collect()));
    }
    summary.push(MetricSummary::new("Accu.".into(), runs.iter().map(|r| r.kep_accuracy).collect()));
    summary.push(MetricSummary::new("Micro F1".into(), runs.iter().map(|r| r.micro_f1).collect()));
    summary.push(MetricSummary::new("Macro F1".into(), runs.iter().map(|r| r.macro_f1).collect()));
    Ok(RepeatReport {
        solver: config.solver.name().into(),
        config_fingerprint: config.fingerprint(),
        seeds,
        runs,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub solver: String,
    pub dim: Option<usize>,
    pub parameter_bytes: usize,
    pub train_ms: u128,
    pub ms_per_epoch: Option<f64>,
}

/// Trains `config.solver` once per dimension in `dims` (ignored by ARM/CC)
/// and records parameter memory and wall-clock.
pub fn bench(ds: &Dataset, config: &PipelineConfig, dims: &[usize]) -> Result<Vec<BenchRow>> {
    let dims: Vec<Option<usize>> = match config.solver.model_kind() {
        Some(_) => dims.iter().map(|&d| Some(d)).collect(),
        None => vec![None],
    };
    dims.into_iter()
        .map(|dim| {
            let mut cfg = config.clone();
            if let Some(d) = dim {
                cfg.kge.dim = d;
            }
            let start = Instant::now();
            let solver = train_solver(ds, &cfg, |_| {})?;
            let train_ms = start.elapsed().as_millis();
            Ok(BenchRow {
                solver: cfg.solver.name().into(),
                dim,
                parameter_bytes: solver.parameter_bytes(),
                train_ms,
                ms_per_epoch: dim.map(|_| train_ms as f64 / cfg.kge.epochs as f64),
            })
        })
        .collect()
}
