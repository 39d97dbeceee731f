use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{EmbeddingModel, ModelKind, NormKind};
use crate::graph::{KnowledgeGraph, NodeId, RelationId, Triple};
use crate::{Error, Result, Scalar};

const MAX_REJECTIONS: usize = 100;

/// Where corrupted tails are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativePool {
    /// Every entity in the graph.
    #[default]
    AllEntities,
    /// Only nodes seen as a tail of the positive's relation.
    RelationRange,
}

impl std::str::FromStr for NegativePool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(NegativePool::AllEntities),
            "range" => Ok(NegativePool::RelationRange),
            other => Err(Error::config("negative_pool", format!("expected all|range, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub kind: ModelKind,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: T,
    pub margin: T,
    pub negatives_per_positive: usize,
    pub seed: u64,
    /// Train only on triples of this relation; all triples when `None`.
    pub target_relation: Option<RelationId>,
    pub norm: NormKind,
    pub num_filters: usize,
    /// Also corrupt heads of non-target relations (half of the draws).
    pub corrupt_heads: bool,
    pub negative_pool: NegativePool,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn new(kind: ModelKind) -> Self {
        TrainConfig {
            kind,
            dim: 100,
            epochs: 300,
            batch_size: 256,
            learning_rate: T::from_f64_lossy(0.01),
            margin: T::one(),
            negatives_per_positive: 1,
            seed: 0,
            target_relation: None,
            norm: NormKind::L2,
            num_filters: 64,
            corrupt_heads: false,
            negative_pool: NegativePool::AllEntities,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("dim", self.dim),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("negatives_per_positive", self.negatives_per_positive),
            ("num_filters", self.num_filters),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.learning_rate.is_nan() || self.learning_rate <= T::zero() {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.margin.is_nan() || self.margin <= T::zero() {
            return Err(Error::config("margin", "must be positive"));
        }
        Ok(())
    }
}

/// Progress record emitted once per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub elapsed_ms: u128,
}

/// Dense gradient buffers shaped like an [`EmbeddingModel`], with the
/// touched entity/relation rows tracked so clearing stays sparse.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    dim: usize,
    pub entities: Vec<T>,
    pub relations: Vec<T>,
    pub filters: Vec<T>,
    pub weights: Vec<T>,
    touched_entities: Vec<usize>,
    touched_relations: Vec<usize>,
    entity_mark: Vec<bool>,
    relation_mark: Vec<bool>,
}

impl<T: Scalar> Gradients<T> {
    pub fn for_model(model: &EmbeddingModel<T>) -> Self {
        let n = model.num_entities();
        let m = model.num_relations();
        Gradients {
            dim: model.dim,
            entities: vec![T::zero(); model.entities.len()],
            relations: vec![T::zero(); model.relations.len()],
            filters: vec![T::zero(); model.filters.len()],
            weights: vec![T::zero(); model.weights.len()],
            touched_entities: Vec::new(),
            touched_relations: Vec::new(),
            entity_mark: vec![false; n],
            relation_mark: vec![false; m],
        }
    }

    /// Blocks in the same order as [`EmbeddingModel::parameters`].
    pub fn blocks(&self) -> [&[T]; 4] {
        [&self.entities, &self.relations, &self.filters, &self.weights]
    }

    fn entity(&mut self, id: NodeId) -> &mut [T] {
        let i = id.index();
        if !self.entity_mark[i] {
            self.entity_mark[i] = true;
            self.touched_entities.push(i);
        }
        &mut self.entities[i * self.dim..(i + 1) * self.dim]
    }

    fn relation(&mut self, id: RelationId) -> &mut [T] {
        let i = id.index();
        if !self.relation_mark[i] {
            self.relation_mark[i] = true;
            self.touched_relations.push(i);
        }
        &mut self.relations[i * self.dim..(i + 1) * self.dim]
    }

    fn clear(&mut self) {
        let d = self.dim;
        for &i in &self.touched_entities {
            self.entities[i * d..(i + 1) * d].fill(T::zero());
            self.entity_mark[i] = false;
        }
        for &i in &self.touched_relations {
            self.relations[i * d..(i + 1) * d].fill(T::zero());
            self.relation_mark[i] = false;
        }
        self.touched_entities.clear();
        self.touched_relations.clear();
        self.filters.fill(T::zero());
        self.weights.fill(T::zero());
    }

    /// `model -= lr * grad`, touched rows in first-touch order.
    fn apply(&self, model: &mut EmbeddingModel<T>, lr: T) {
        let d = self.dim;
        for &i in &self.touched_entities {
            let row = &mut model.entities[i * d..(i + 1) * d];
            for (p, g) in row.iter_mut().zip(&self.entities[i * d..(i + 1) * d]) {
                *p = *p - lr * *g;
            }
        }
        for &i in &self.touched_relations {
            let row = &mut model.relations[i * d..(i + 1) * d];
            for (p, g) in row.iter_mut().zip(&self.relations[i * d..(i + 1) * d]) {
                *p = *p - lr * *g;
            }
        }
        for (p, g) in model.filters.iter_mut().zip(&self.filters) {
            *p = *p - lr * *g;
        }
        for (p, g) in model.weights.iter_mut().zip(&self.weights) {
            *p = *p - lr * *g;
        }
    }
}

/// Adds `coef * d score(h, r, t) / d params` into `grads`.
fn add_score_gradient<T: Scalar>(
    model: &EmbeddingModel<T>,
    triple: &Triple,
    coef: T,
    grads: &mut Gradients<T>,
    scratch: &mut Vec<T>,
) {
    let d = model.dim;
    let (h, r, t) = (triple.head, triple.relation, triple.tail);
    let (vh, vr, vt) = (model.entity(h), model.relation(r), model.entity(t));
    match model.kind {
        ModelKind::TransE => {
            // d score / d x for x = h + r - t
            scratch.clear();
            scratch.extend(vh.iter().zip(vr).zip(vt).map(|((&a, &b), &c)| a + b - c));
            match model.norm {
                NormKind::L1 => scratch.iter_mut().for_each(|x| *x = -x.signum() * coef),
                NormKind::L2 => {
                    let norm = scratch.iter().map(|&x| x * x).sum::<T>().sqrt();
                    if norm > T::zero() {
                        scratch.iter_mut().for_each(|x| *x = -*x / norm * coef);
                    } else {
                        scratch.fill(T::zero());
                    }
                }
            }
            add_into(grads.entity(h), scratch, T::one());
            add_into(grads.relation(r), scratch, T::one());
            add_into(grads.entity(t), scratch, -T::one());
        }
        ModelKind::HolE => {
            let corr = super::model::circular_correlation(vh, vt);
            add_into(grads.relation(r), &corr, coef);
            // d/dh_i = Σ_k r_k t_{(i+k) mod d}; d/dt_j = Σ_k r_k h_{(j-k) mod d}
            scratch.clear();
            scratch.extend((0..d).map(|i| (0..d).map(|k| vr[k] * vt[(i + k) % d]).sum::<T>()));
            add_into(grads.entity(h), scratch, coef);
            scratch.clear();
            scratch.extend((0..d).map(|j| (0..d).map(|k| vr[k] * vh[(j + d - k) % d]).sum::<T>()));
            add_into(grads.entity(t), scratch, coef);
        }
        ModelKind::ConvKB => {
            let mut gh = vec![T::zero(); d];
            let mut gr = vec![T::zero(); d];
            let mut gt = vec![T::zero(); d];
            for (f, filt) in model.filters.chunks_exact(3).enumerate() {
                for i in 0..d {
                    let pre = filt[0] * vh[i] + filt[1] * vr[i] + filt[2] * vt[i];
                    if pre > T::zero() {
                        let w = model.weights[f * d + i];
                        grads.weights[f * d + i] = grads.weights[f * d + i] + coef * pre;
                        let g = coef * w;
                        grads.filters[f * 3] = grads.filters[f * 3] + g * vh[i];
                        grads.filters[f * 3 + 1] = grads.filters[f * 3 + 1] + g * vr[i];
                        grads.filters[f * 3 + 2] = grads.filters[f * 3 + 2] + g * vt[i];
                        gh[i] = gh[i] + g * filt[0];
                        gr[i] = gr[i] + g * filt[1];
                        gt[i] = gt[i] + g * filt[2];
                    }
                }
            }
            add_into(grads.entity(h), &gh, T::one());
            add_into(grads.relation(r), &gr, T::one());
            add_into(grads.entity(t), &gt, T::one());
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T], scale: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + scale * s;
    }
}

/// `Σ max(0, margin - score(pos) + score(neg))` over `(pos, neg)` pairs.
pub fn margin_loss<T: Scalar>(model: &EmbeddingModel<T>, pairs: &[(Triple, Triple)], margin: T) -> Result<T> {
    let mut total = T::zero();
    for (pos, neg) in pairs {
        let term = margin - model.score_triple(pos)? + model.score_triple(neg)?;
        if term > T::zero() {
            total = total + term;
        }
    }
    Ok(total)
}

/// Analytic gradient of [`margin_loss`].
pub fn margin_loss_gradient<T: Scalar>(
    model: &EmbeddingModel<T>,
    pairs: &[(Triple, Triple)],
    margin: T,
) -> Result<Gradients<T>> {
    for (pos, neg) in pairs {
        model.check_ids(pos.head, pos.relation, pos.tail)?;
        model.check_ids(neg.head, neg.relation, neg.tail)?;
    }
    let mut grads = Gradients::for_model(model);
    accumulate(model, pairs, margin, &mut grads, &mut Vec::new());
    Ok(grads)
}

fn accumulate<T: Scalar>(
    model: &EmbeddingModel<T>,
    pairs: &[(Triple, Triple)],
    margin: T,
    grads: &mut Gradients<T>,
    scratch: &mut Vec<T>,
) -> T {
    let mut total = T::zero();
    for (pos, neg) in pairs {
        let term = margin - model.score_unchecked(pos.head, pos.relation, pos.tail)
            + model.score_unchecked(neg.head, neg.relation, neg.tail);
        if term > T::zero() {
            total = total + term;
            add_score_gradient(model, pos, -T::one(), grads, scratch);
            add_score_gradient(model, neg, T::one(), grads, scratch);
        }
    }
    total
}

/// Corrupts tails (and optionally heads of non-target relations) by
/// rejection sampling against the graph.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    pool: NegativePool,
    corrupt_heads: bool,
    target: Option<RelationId>,
    ranges: Vec<Vec<NodeId>>,
    num_entities: usize,
}

impl NegativeSampler {
    pub fn new(g: &KnowledgeGraph, pool: NegativePool, corrupt_heads: bool, target: Option<RelationId>) -> Self {
        let ranges = match pool {
            NegativePool::AllEntities => Vec::new(),
            NegativePool::RelationRange => (0..g.num_relations()).map(|r| g.range_of(RelationId(r as u32))).collect(),
        };
        NegativeSampler { pool, corrupt_heads, target, ranges, num_entities: g.num_nodes() }
    }

    fn draw<R: Rng>(&self, relation: RelationId, rng: &mut R) -> NodeId {
        match self.pool {
            NegativePool::RelationRange if !self.ranges[relation.index()].is_empty() => {
                let range = &self.ranges[relation.index()];
                range[rng.gen_range(0..range.len())]
            }
            _ => NodeId(rng.gen_range(0..self.num_entities) as u32),
        }
    }

    pub fn sample<R: Rng>(&self, g: &KnowledgeGraph, positive: &Triple, rng: &mut R) -> Triple {
        let head_side = self.corrupt_heads && Some(positive.relation) != self.target && rng.gen_bool(0.5);
        let mut candidate = *positive;
        for _ in 0..MAX_REJECTIONS {
            let node = self.draw(positive.relation, rng);
            candidate = if head_side { Triple { head: node, ..*positive } } else { Triple { tail: node, ..*positive } };
            if !g.contains(&candidate) {
                break;
            }
        }
        candidate
    }
}

/// Replaces the tail of `positive` with a uniformly drawn entity, rejecting
/// draws that are already in `g` (at most 100 tries; the last draw is kept).
pub fn negative_sample<R: Rng>(g: &KnowledgeGraph, positive: &Triple, rng: &mut R) -> Triple {
    NegativeSampler::new(g, NegativePool::AllEntities, false, None).sample(g, positive, rng)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: EmbeddingModel<T>,
    pub epochs: Vec<EpochStats>,
}

/// Mini-batch SGD on the margin ranking loss.
///
/// Parameters are initialised from `config.seed`; the same seed draws batch
/// order and negatives, so a run is bit-reproducible. `on_epoch` receives one
/// record per epoch.
pub fn train<T: Scalar>(
    g: &KnowledgeGraph,
    config: &TrainConfig<T>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let positives: Vec<Triple> = match config.target_relation {
        Some(r) => g.triples().iter().filter(|t| t.relation == r).copied().collect(),
        None => g.triples().to_vec(),
    };
    if positives.is_empty() {
        return Err(Error::Invalid("no training triples".into()));
    }
    let mut model = EmbeddingModel::<T>::random(
        config.kind,
        g.num_nodes(),
        g.num_relations(),
        config.dim,
        config.num_filters,
        config.seed,
    )
    .with_norm(config.norm);
    // parameters consume the seed directly; sampling gets its own stream
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let sampler = NegativeSampler::new(g, config.negative_pool, config.corrupt_heads, config.target_relation);
    let mut grads = Gradients::for_model(&model);
    let mut scratch = Vec::with_capacity(config.dim);
    let mut order: Vec<usize> = (0..positives.len()).collect();
    let mut pairs = Vec::with_capacity(config.batch_size * config.negatives_per_positive);
    let mut history = Vec::with_capacity(config.epochs);
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            pairs.clear();
            for &i in batch {
                let pos = positives[i];
                for _ in 0..config.negatives_per_positive {
                    pairs.push((pos, sampler.sample(g, &pos, &mut rng)));
                }
            }
            let loss = accumulate(&model, &pairs, config.margin, &mut grads, &mut scratch);
            total += loss.to_f64_lossy();
            grads.apply(&mut model, config.learning_rate);
            grads.clear();
        }
        if model.kind == ModelKind::TransE {
            model.normalize_entities();
        }
        let mean_loss = total / (positives.len() * config.negatives_per_positive) as f64;
        if !mean_loss.is_finite() || !model.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let stats = EpochStats { epoch, mean_loss, elapsed_ms: start.elapsed().as_millis() };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome { model, epochs: history })
}
