//! Planted scene generator and its Bayes-optimal masked-type predictor.
//!
//! Each scene draws an archetype `a ~ π`, includes type `v` with probability
//! `P[a][v]`, then flips every inclusion bit with probability `ε`. Scenes
//! with fewer than two types are redrawn.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::eval::{RankedPrediction, Solver};
use crate::graph::{KnowledgeGraph, NodeId, SceneRecord};
use crate::ingest::LabelledTriple;
use crate::{Error, Result};

pub const INCLUDES: &str = "includes";
pub const TYPE: &str = "type";
pub const INCLUDES_TYPE: &str = "includesType";

const MAX_REDRAWS: usize = 100;

pub fn type_label(v: usize) -> String {
    format!("type_{v:02}")
}

pub fn scene_label(i: usize) -> String {
    format!("scene_{i:05}")
}

/// Parses a label produced by [`type_label`].
pub fn type_index(label: &str) -> Option<usize> {
    label.strip_prefix("type_")?.parse().ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_archetypes: usize,
    pub vocab_size: usize,
    /// `n_archetypes × vocab_size` inclusion probabilities.
    pub inclusion: Vec<Vec<f64>>,
    pub prior: Vec<f64>,
    pub noise: f64,
    pub n_scenes: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_archetypes: 5,
            vocab_size: 12,
            inclusion: block_diagonal(5, 12, 0.8, 0.05),
            prior: vec![0.2; 5],
            noise: 0.1,
            n_scenes: 2000,
            seed: 42,
        }
    }
}

/// Type `v` belongs to block `v * a / vocab`; in-block entries are
/// `inside`, the rest `outside`.
pub fn block_diagonal(archetypes: usize, vocab: usize, inside: f64, outside: f64) -> Vec<Vec<f64>> {
    (0..archetypes)
        .map(|a| (0..vocab).map(|v| if v * archetypes / vocab == a { inside } else { outside }).collect())
        .collect()
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_archetypes == 0 {
            return Err(Error::config("n_archetypes", "must be at least 1"));
        }
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size", "must be at least 2"));
        }
        if self.inclusion.len() != self.n_archetypes || self.inclusion.iter().any(|r| r.len() != self.vocab_size) {
            return Err(Error::config("inclusion", "shape must be n_archetypes × vocab_size"));
        }
        if self.inclusion.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("inclusion", "entries must lie in [0, 1]"));
        }
        if self.prior.len() != self.n_archetypes || self.prior.iter().any(|p| p.is_nan() || *p < 0.0) {
            return Err(Error::config("prior", "must be a non-negative vector of length n_archetypes"));
        }
        if (self.prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("prior", "must sum to 1"));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::config("noise", "must lie in [0, 0.5)"));
        }
        Ok(())
    }

    /// Probability that type `v` ends up in a scene of archetype `a`
    /// after the noise flip.
    pub fn effective_inclusion(&self, a: usize, v: usize) -> f64 {
        let p = self.inclusion[a][v];
        p * (1.0 - self.noise) + (1.0 - p) * self.noise
    }

    /// Reads `key=value` lines over the defaults. Recognised keys:
    /// `n_archetypes`, `vocab_size`, `noise`, `n_scenes`, `seed`, `prior`
    /// (comma list), `inclusion` (rows separated by `;`), `block_in` and
    /// `block_out` (block-diagonal inclusion when `inclusion` is absent).
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = GeneratorConfig::default();
        let (mut block_in, mut block_out) = (0.8, 0.05);
        let (mut inclusion, mut prior) = (None, None);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |m: &str| Error::Parse { line: n + 1, message: m.to_string() };
            let (key, value) = line.split_once('=').ok_or_else(|| parse_err("expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.trim().parse::<f64>().map_err(|_| parse_err(&format!("{key}: bad number {v:?}")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| parse_err(&format!("{key}: bad integer {v:?}")));
            match key {
                "n_archetypes" => cfg.n_archetypes = int(value)? as usize,
                "vocab_size" => cfg.vocab_size = int(value)? as usize,
                "noise" => cfg.noise = num(value)?,
                "n_scenes" => cfg.n_scenes = int(value)? as usize,
                "seed" => cfg.seed = int(value)?,
                "block_in" => block_in = num(value)?,
                "block_out" => block_out = num(value)?,
                "prior" => prior = Some(value.split(',').map(num).collect::<Result<Vec<_>>>()?),
                "inclusion" => {
                    inclusion = Some(
                        value
                            .split(';')
                            .map(|row| row.split(',').map(num).collect::<Result<Vec<_>>>())
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                other => return Err(parse_err(&format!("unknown key {other:?}"))),
            }
        }
        cfg.inclusion =
            inclusion.unwrap_or_else(|| block_diagonal(cfg.n_archetypes, cfg.vocab_size, block_in, block_out));
        cfg.prior = prior.unwrap_or_else(|| vec![1.0 / cfg.n_archetypes.max(1) as f64; cfg.n_archetypes]);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical `key=value` text; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let _ = writeln!(out, "n_archetypes={}", self.n_archetypes);
        let _ = writeln!(out, "vocab_size={}", self.vocab_size);
        let _ = writeln!(out, "noise={:?}", self.noise);
        let _ = writeln!(out, "n_scenes={}", self.n_scenes);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "prior={}", join(&self.prior));
        let rows: Vec<String> = self.inclusion.iter().map(|r| join(r)).collect();
        let _ = writeln!(out, "inclusion={}", rows.join(";"));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub label: String,
    pub archetype: usize,
    pub types: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Raw graph: `scene includes instance`, `instance type type_vv`.
    pub triples: Vec<LabelledTriple>,
    pub scenes: Vec<SyntheticScene>,
}

impl SyntheticData {
    /// Scene records resolved against `g` (normally the reified graph).
    pub fn scene_records(&self, g: &KnowledgeGraph) -> Result<Vec<SceneRecord>> {
        let resolve =
            |label: &str| g.node_id(label).ok_or_else(|| Error::UnknownLabel { line: 0, label: label.to_string() });
        self.scenes
            .iter()
            .map(|s| {
                let observed = s.types.iter().map(|&v| resolve(&type_label(v))).collect::<Result<BTreeSet<_>>>()?;
                Ok(SceneRecord { scene: resolve(&s.label)?, observed, masked: BTreeSet::new() })
            })
            .collect()
    }
}

fn draw_scene(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> (usize, BTreeSet<usize>) {
    let mut archetype = 0;
    for _ in 0..MAX_REDRAWS {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        archetype = cfg.n_archetypes - 1;
        for (a, &p) in cfg.prior.iter().enumerate() {
            acc += p;
            if u < acc {
                archetype = a;
                break;
            }
        }
        let types: BTreeSet<usize> = (0..cfg.vocab_size)
            .filter(|&v| {
                let included = rng.gen::<f64>() < cfg.inclusion[archetype][v];
                let flipped = rng.gen::<f64>() < cfg.noise;
                included != flipped
            })
            .collect();
        if types.len() >= 2 {
            return (archetype, types);
        }
    }
    let mut order: Vec<usize> = (0..cfg.vocab_size).collect();
    order.sort_by(|&x, &y| cfg.inclusion[archetype][y].total_cmp(&cfg.inclusion[archetype][x]).then(x.cmp(&y)));
    (archetype, order.into_iter().take(2).collect())
}

/// Generates `config.n_scenes` scenes. Scene `i` uses its own random stream
/// derived from the seed, so output is independent of evaluation order.
pub fn generate(config: &GeneratorConfig) -> Result<SyntheticData> {
    config.validate()?;
    let per_scene: Vec<(SyntheticScene, Vec<LabelledTriple>)> = (0..config.n_scenes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let (archetype, types) = draw_scene(config, &mut rng);
            let label = scene_label(i);
            let mut triples = Vec::new();
            let mut instance = 0;
            for &v in &types {
                // occasionally two instances of one type
                let copies = if rng.gen::<f64>() < 0.25 { 2 } else { 1 };
                for _ in 0..copies {
                    let inst = format!("{label}/e{instance}");
                    instance += 1;
                    triples.push((label.clone(), INCLUDES.to_string(), inst.clone()));
                    triples.push((inst, TYPE.to_string(), type_label(v)));
                }
            }
            (SyntheticScene { label, archetype, types }, triples)
        })
        .collect();
    let mut data = SyntheticData { triples: Vec::new(), scenes: Vec::with_capacity(per_scene.len()) };
    for (scene, triples) in per_scene {
        data.scenes.push(scene);
        data.triples.extend(triples);
    }
    Ok(data)
}

/// Exact posterior over which type was masked from a scene whose remaining
/// types are `observed`, and its argmax (ties to the lower index).
///
/// For each unobserved `v` it sums over archetypes the probability that the
/// scene contained exactly `observed ∪ {v}`:
/// `π_a · Π_{u ∈ obs} q_au · q_av · Π_{u ∉ obs ∪ {v}} (1 - q_au)` with `q`
/// the noise-adjusted inclusion probability. The uniform choice of masked
/// type and the two-type minimum are the same for every `v` and cancel.
pub fn bayes_optimal_top1(config: &GeneratorConfig, observed: &BTreeSet<usize>) -> Result<(usize, Vec<f64>)> {
    config.validate()?;
    if config.n_archetypes * config.vocab_size > 10_000 {
        return Err(Error::config("n_archetypes", "A·V too large for exact enumeration"));
    }
    if let Some(&v) = observed.iter().find(|&&v| v >= config.vocab_size) {
        return Err(Error::Invalid(format!("type {v} outside vocabulary")));
    }
    let v_size = config.vocab_size;
    let mut log_weights = vec![f64::NEG_INFINITY; v_size];
    for (v, slot) in log_weights.iter_mut().enumerate() {
        if observed.contains(&v) {
            continue;
        }
        let terms: Vec<f64> = (0..config.n_archetypes)
            .map(|a| {
                (0..v_size).fold(config.prior[a].ln(), |acc, u| {
                    let q = config.effective_inclusion(a, u);
                    acc + if u == v || observed.contains(&u) { q.ln() } else { (1.0 - q).ln() }
                })
            })
            .collect();
        *slot = log_sum_exp(&terms);
    }
    let total = log_sum_exp(&log_weights);
    let posterior: Vec<f64> = if total.is_finite() {
        log_weights.iter().map(|&w| (w - total).exp()).collect()
    } else {
        // observation impossible under the model: uniform over unobserved
        let free = (v_size - observed.len()).max(1) as f64;
        (0..v_size).map(|v| if observed.contains(&v) { 0.0 } else { 1.0 / free }).collect()
    };
    let best = (0..v_size)
        .filter(|v| !observed.contains(v))
        .fold(None, |best: Option<usize>, v| match best {
            Some(b) if posterior[b] >= posterior[v] => Some(b),
            _ => Some(v),
        })
        .ok_or_else(|| Error::Invalid("every type is observed".into()))?;
    Ok((best, posterior))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Ranks types by the exact generator posterior; the accuracy ceiling for
/// data produced by [`generate`].
pub struct BayesSolver {
    config: GeneratorConfig,
    /// Graph node of each generator type index.
    nodes: Vec<Option<NodeId>>,
}

impl BayesSolver {
    pub fn new(config: GeneratorConfig, g: &KnowledgeGraph) -> Result<Self> {
        config.validate()?;
        let nodes = (0..config.vocab_size).map(|v| g.node_id(&type_label(v))).collect();
        Ok(BayesSolver { config, nodes })
    }
}

impl Solver for BayesSolver {
    fn name(&self) -> String {
        "bayes".into()
    }

    fn predict(&self, scene: &SceneRecord) -> Result<RankedPrediction> {
        let observed: BTreeSet<usize> = (0..self.config.vocab_size)
            .filter(|&v| self.nodes[v].is_some_and(|n| scene.observed.contains(&n)))
            .collect();
        let (_, posterior) = bayes_optimal_top1(&self.config, &observed)?;
        Ok(RankedPrediction::from_scores(
            (0..self.config.vocab_size)
                .filter(|v| !observed.contains(v))
                .filter_map(|v| self.nodes[v].map(|n| (n, posterior[v])))
                .collect(),
        ))
    }
}
