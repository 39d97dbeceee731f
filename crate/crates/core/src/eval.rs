//! Ranking metrics (MRR, Hits@K), KEP performance metrics (top-1 accuracy,
//! micro/macro F1) and the per-query evaluation loop shared by all solvers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::graph::{KnowledgeGraph, NodeId, SceneRecord};
use crate::{Error, Result};

pub const DEFAULT_KS: [usize; 3] = [1, 3, 10];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredType {
    pub id: NodeId,
    pub score: f64,
}

/// Candidate entity types, best first.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RankedPrediction {
    pub entries: Vec<ScoredType>,
}

impl RankedPrediction {
    /// Sorts by score descending, ties by ascending id.
    pub fn from_scores(mut scored: Vec<(NodeId, f64)>) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self::from_ordered(scored)
    }

    /// Keeps the given order.
    pub fn from_ordered(ordered: impl IntoIterator<Item = (NodeId, f64)>) -> Self {
        RankedPrediction { entries: ordered.into_iter().map(|(id, score)| ScoredType { id, score }).collect() }
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn top(&self) -> Option<NodeId> {
        self.entries.first().map(|e| e.id)
    }

    pub fn score_of(&self, id: NodeId) -> Option<f64> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.score)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A KEP solver: ranks the entity types missing from a scene given its
/// observed types.
pub trait Solver: Sync {
    fn name(&self) -> String;

    fn predict(&self, scene: &SceneRecord) -> Result<RankedPrediction>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingMetrics {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
}

/// Mean reciprocal rank and the fraction of ranks `<= k` for each `k`.
pub fn ranking_metrics(ranks: &[usize], ks: &[usize]) -> Result<RankingMetrics> {
    if ranks.is_empty() {
        return Err(Error::Invalid("no ranks to aggregate".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Invalid("ranks start at 1".into()));
    }
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let hits = ks.iter().map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n)).collect();
    Ok(RankingMetrics { mrr, hits })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub id: NodeId,
    pub label: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `None` when the class was never predicted.
    pub precision: Option<f64>,
    /// `None` when the class never occurs as ground truth.
    pub recall: Option<f64>,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KepMetrics {
    /// Percentage of queries whose top-1 prediction is the masked type.
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassStats>,
}

/// Top-1 classification metrics over `(predicted, truth)` pairs.
///
/// Each query is one single-label decision, so when every query has a
/// prediction micro F1 equals the accuracy fraction. A class that is
/// predicted but never true (or the reverse) has F1 = 0 and still counts in
/// the macro average; classes absent from both sides are excluded.
pub fn kep_metrics(pairs: &[(Option<NodeId>, NodeId)]) -> Result<KepMetrics> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no predictions to score".into()));
    }
    #[derive(Default)]
    struct Counts {
        tp: usize,
        fp: usize,
        fn_: usize,
    }
    let mut classes: BTreeMap<NodeId, Counts> = BTreeMap::new();
    let mut correct = 0usize;
    for &(pred, truth) in pairs {
        if pred == Some(truth) {
            correct += 1;
            classes.entry(truth).or_default().tp += 1;
        } else {
            classes.entry(truth).or_default().fn_ += 1;
            if let Some(p) = pred {
                classes.entry(p).or_default().fp += 1;
            }
        }
    }
    let (tp, fp, fn_) = classes.values().fold((0, 0, 0), |(a, b, c), k| (a + k.tp, b + k.fp, c + k.fn_));
    let per_class: Vec<ClassStats> = classes
        .into_iter()
        .map(|(id, k)| {
            let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
            let precision = ratio(k.tp, k.tp + k.fp);
            let recall = ratio(k.tp, k.tp + k.fn_);
            let f1 = match (precision, recall) {
                (Some(p), Some(r)) if k.tp > 0 => 2.0 * p * r / (p + r),
                _ => 0.0,
            };
            ClassStats { id, label: String::new(), tp: k.tp, fp: k.fp, fn_: k.fn_, precision, recall, f1 }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    Ok(KepMetrics {
        accuracy: 100.0 * correct as f64 / pairs.len() as f64,
        micro_f1: (2 * tp) as f64 / (2 * tp + fp + fn_) as f64,
        macro_f1,
        per_class,
    })
}

/// Rank of `truth` in `ranking`, skipping ids in `filtered` and ids outside
/// `candidates`; equal scores count against the truth. `None` when the
/// ranking does not contain `truth`.
pub fn filtered_rank(
    ranking: &RankedPrediction,
    truth: NodeId,
    filtered: &BTreeSet<NodeId>,
    candidates: &BTreeSet<NodeId>,
) -> Option<usize> {
    let target = ranking.score_of(truth)?;
    let ahead = ranking
        .entries
        .iter()
        .filter(|e| e.id != truth && !filtered.contains(&e.id) && candidates.contains(&e.id))
        .filter(|e| e.score >= target)
        .count();
    Some(ahead + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub solver: String,
    pub config_fingerprint: String,
    pub n_queries: usize,
    /// Queries whose ranking omitted the true type; they get rank
    /// `|filtered candidates| + 1`.
    pub n_unranked: usize,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub kep_accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassStats>,
    pub wall_clock_ms: u128,
}

impl EvalReport {
    /// The report with wall-clock time zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> EvalReport {
        EvalReport { wall_clock_ms: 0, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "solver {}  ({} queries, {} unranked)", self.solver, self.n_queries, self.n_unranked);
        let _ = write!(out, "MRR {:.4}", self.mrr);
        for (k, v) in &self.hits {
            let _ = write!(out, "  H@{k} {v:.4}");
        }
        let _ = writeln!(
            out,
            "\nAccu. {:.2}%  Micro F1 {:.4}  Macro F1 {:.4}",
            self.kep_accuracy, self.micro_f1, self.macro_f1
        );
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>6} {:>6} {:>9} {:>9} {:>7}",
            "class", "tp", "fp", "fn", "precision", "recall", "f1"
        );
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<24} {:>6} {:>6} {:>6} {:>9} {:>9} {:>7.4}",
                c.label,
                c.tp,
                c.fp,
                c.fn_,
                opt(c.precision),
                opt(c.recall),
                c.f1
            );
        }
        out
    }
}

/// Runs `solver` on every test scene and scores each `(scene, masked type)`
/// query.
///
/// For a query on type `t`, every other type known for the scene (observed
/// or masked) is filtered out of the candidates before ranking `t`, and the
/// top-1 prediction is the best-ranked unfiltered type. Scenes are solved in
/// parallel; aggregation follows input order, so the report (apart from
/// `wall_clock_ms`) depends only on the inputs.
pub fn evaluate_solver(
    solver: &dyn Solver,
    test: &[SceneRecord],
    graph: &KnowledgeGraph,
    candidates: &[NodeId],
    ks: &[usize],
    config_fingerprint: &str,
) -> Result<EvalReport> {
    let start = Instant::now();
    if let Some(s) = test.iter().find(|s| s.masked.is_empty()) {
        return Err(Error::Invalid(format!("test scene {} has no masked type", s.scene)));
    }
    let candidate_set: BTreeSet<NodeId> = candidates.iter().copied().collect();
    let rankings: Vec<RankedPrediction> = test.par_iter().map(|scene| solver.predict(scene)).collect::<Result<_>>()?;

    let mut ranks = Vec::new();
    let mut pairs = Vec::new();
    let mut unranked = 0;
    for (scene, ranking) in test.iter().zip(&rankings) {
        let known = scene.all_types();
        for &truth in &scene.masked {
            let mut filtered = known.clone();
            filtered.remove(&truth);
            let rank = filtered_rank(ranking, truth, &filtered, &candidate_set).unwrap_or_else(|| {
                unranked += 1;
                candidate_set.iter().filter(|c| !filtered.contains(c)).count() + 1
            });
            ranks.push(rank);
            let top = ranking.entries.iter().map(|e| e.id).find(|id| !filtered.contains(id));
            pairs.push((top, truth));
        }
    }
    let ranking = ranking_metrics(&ranks, ks)?;
    let mut kep = kep_metrics(&pairs)?;
    for class in &mut kep.per_class {
        class.label = graph.node_label(class.id).unwrap_or_default().to_string();
    }
    Ok(EvalReport {
        solver: solver.name(),
        config_fingerprint: config_fingerprint.to_string(),
        n_queries: ranks.len(),
        n_unranked: unranked,
        mrr: ranking.mrr,
        hits: ranking.hits,
        kep_accuracy: kep.accuracy,
        micro_f1: kep.micro_f1,
        macro_f1: kep.macro_f1,
        per_class: kep.per_class,
        wall_clock_ms: start.elapsed().as_millis(),
    })
}

/// Scores candidates with seeded uniform noise; reproducible per scene.
#[derive(Debug, Clone)]
pub struct UniformRandomSolver {
    pub candidates: Vec<NodeId>,
    pub seed: u64,
}

impl Solver for UniformRandomSolver {
    fn name(&self) -> String {
        "random".into()
    }

    fn predict(&self, scene: &SceneRecord) -> Result<RankedPrediction> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::from(scene.scene.0));
        Ok(RankedPrediction::from_scores(
            self.candidates.iter().filter(|c| !scene.observed.contains(c)).map(|&c| (c, rng.gen::<f64>())).collect(),
        ))
    }
}

/// Ranks the masked types first. Only meaningful on evaluation data.
#[derive(Debug, Clone, Default)]
pub struct PerfectSolver;

impl Solver for PerfectSolver {
    fn name(&self) -> String {
        "perfect".into()
    }

    fn predict(&self, scene: &SceneRecord) -> Result<RankedPrediction> {
        Ok(RankedPrediction::from_scores(scene.masked.iter().map(|&m| (m, 1.0)).collect()))
    }
}
