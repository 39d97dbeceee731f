//! Collective-classification solver.
//!
//! Scenes are cliques of type labels. A naive co-occurrence classifier scores
//! a label `l` against an evidence set `E` as
//!
//! ```text
//! log((c_l + α) / (N + αL)) + Σ_{o ∈ E} log((c_{l,o} + α) / (c_l + αL))
//! ```
//!
//! where `c_l` counts scenes containing `l`, `c_{l,o}` scenes containing both,
//! `N` the number of scenes and `L` the label vocabulary size. Several
//! unobserved slots are labelled jointly by the iterative classification
//! algorithm: each slot is rescored with the other slots' current labels
//! added to the evidence until no slot changes.

use std::collections::{BTreeMap, BTreeSet};

use crate::eval::RankedPrediction;
use crate::graph::{NodeId, SceneRecord};
use crate::{Error, Result};

/// Co-occurrence statistics over a sorted label vocabulary. The pair matrix
/// is symmetric with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceModel {
    labels: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    label_counts: Vec<u64>,
    pair_counts: Vec<u64>,
    n_scenes: u64,
    alpha: f64,
}

impl CooccurrenceModel {
    /// Assembles a model from raw parts (used by archive loading).
    pub fn from_parts(
        labels: Vec<NodeId>,
        label_counts: Vec<u64>,
        pair_counts: Vec<u64>,
        n_scenes: u64,
        alpha: f64,
    ) -> Result<Self> {
        let l = labels.len();
        if label_counts.len() != l || pair_counts.len() != l * l {
            return Err(Error::ArchiveShape(format!(
                "vocabulary {l} with {} label counts and {} pair counts",
                label_counts.len(),
                pair_counts.len()
            )));
        }
        if !labels.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Invalid("labels must be strictly ascending".into()));
        }
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::config("alpha", "must be positive"));
        }
        for a in 0..l {
            if pair_counts[a * l + a] != 0 || (0..l).any(|b| pair_counts[a * l + b] != pair_counts[b * l + a]) {
                return Err(Error::Invalid("pair counts must be symmetric with zero diagonal".into()));
            }
        }
        let index = labels.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        Ok(CooccurrenceModel { labels, index, label_counts, pair_counts, n_scenes, alpha })
    }

    pub fn labels(&self) -> &[NodeId] {
        &self.labels
    }

    pub fn vocab_size(&self) -> usize {
        self.labels.len()
    }

    pub fn n_scenes(&self) -> u64 {
        self.n_scenes
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn label_counts(&self) -> &[u64] {
        &self.label_counts
    }

    pub fn pair_counts(&self) -> &[u64] {
        &self.pair_counts
    }

    pub fn label_count(&self, label: NodeId) -> u64 {
        self.index.get(&label).map_or(0, |&i| self.label_counts[i])
    }

    pub fn pair_count(&self, a: NodeId, b: NodeId) -> u64 {
        match (self.index.get(&a), self.index.get(&b)) {
            (Some(&i), Some(&j)) => self.pair_counts[i * self.labels.len() + j],
            _ => 0,
        }
    }

    fn smoothed_denominator(&self, i: usize) -> f64 {
        self.label_counts[i] as f64 + self.alpha * self.labels.len() as f64
    }

    fn prior(&self, i: usize) -> f64 {
        ((self.label_counts[i] as f64 + self.alpha) / (self.n_scenes as f64 + self.alpha * self.labels.len() as f64))
            .ln()
    }

    fn conditional(&self, i: usize, o: usize) -> f64 {
        ((self.pair_counts[i * self.labels.len() + o] as f64 + self.alpha) / self.smoothed_denominator(i)).ln()
    }

    /// Vocabulary positions of the evidence labels, ascending; labels the
    /// model never saw carry no counts and are skipped.
    fn evidence_positions(&self, evidence: &BTreeSet<NodeId>) -> Vec<usize> {
        evidence.iter().filter_map(|e| self.index.get(e).copied()).collect()
    }

    fn score_position(&self, i: usize, evidence: &[usize]) -> f64 {
        evidence.iter().fold(self.prior(i), |acc, &o| acc + self.conditional(i, o))
    }

    fn pair_potential(&self, a: usize, b: usize) -> f64 {
        (self.pair_counts[a * self.labels.len() + b] as f64 + self.alpha).ln()
            - self.smoothed_denominator(a).ln()
            - self.smoothed_denominator(b).ln()
    }
}

/// Counts label and pair occurrences over the observed types of `train`.
pub fn train_cc(train: &[SceneRecord], alpha: f64) -> Result<CooccurrenceModel> {
    if train.is_empty() {
        return Err(Error::Invalid("no training scenes".into()));
    }
    let labels: Vec<NodeId> =
        train.iter().flat_map(|s| s.observed.iter().copied()).collect::<BTreeSet<_>>().into_iter().collect();
    let l = labels.len();
    let index: BTreeMap<NodeId, usize> = labels.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut label_counts = vec![0u64; l];
    let mut pair_counts = vec![0u64; l * l];
    for scene in train {
        let members: Vec<usize> = scene.observed.iter().map(|n| index[n]).collect();
        for (k, &a) in members.iter().enumerate() {
            label_counts[a] += 1;
            for &b in &members[k + 1..] {
                pair_counts[a * l + b] += 1;
                pair_counts[b * l + a] += 1;
            }
        }
    }
    CooccurrenceModel::from_parts(labels, label_counts, pair_counts, train.len() as u64, alpha)
}

/// Scores every vocabulary label outside `evidence`; best first, ties by
/// ascending id.
pub fn score_labels(model: &CooccurrenceModel, evidence: &BTreeSet<NodeId>) -> RankedPrediction {
    let positions = model.evidence_positions(evidence);
    RankedPrediction::from_scores(
        model
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| !evidence.contains(l))
            .map(|(i, &l)| (l, model.score_position(i, &positions)))
            .collect(),
    )
}

/// Result of [`predict_cc_iterative`].
#[derive(Debug, Clone, PartialEq)]
pub struct IterativeOutcome {
    pub prediction: RankedPrediction,
    /// Final label per slot.
    pub assignment: Vec<NodeId>,
    /// Full passes over the slots, including the pass that found no change.
    pub iterations: usize,
    /// Joint objective after initialisation and after each pass.
    pub objective_trace: Vec<f64>,
}

/// Joint objective of an assignment: per-slot scores against `observed` plus
/// the symmetric pair potential
/// `log(c_ab + α) - log(c_a + αL) - log(c_b + αL)` over slot pairs.
///
/// Relabelling one slot with the best label given the others changes this
/// by exactly the change in that slot's score, so the iterative updates
/// never decrease it.
pub fn joint_objective(model: &CooccurrenceModel, observed: &BTreeSet<NodeId>, assignment: &[NodeId]) -> f64 {
    let obs = model.evidence_positions(observed);
    let slots: Vec<usize> = assignment.iter().filter_map(|l| model.index.get(l).copied()).collect();
    let mut total = 0.0;
    for (j, &a) in slots.iter().enumerate() {
        total += model.score_position(a, &obs);
        for &b in &slots[j + 1..] {
            total += model.pair_potential(a, b);
        }
    }
    total
}

/// Iterative classification of `n_slots` unobserved labels.
///
/// Slots start as the top `n_slots` labels given `observed`. Each pass
/// revisits the slots in ascending order, rescoring with the other slots'
/// labels as extra evidence; a slot moves only to a strictly better label.
/// Stops after a pass with no change or after `max_iters` passes. The
/// returned ranking takes, per label, the best score it received in the last
/// pass.
pub fn predict_cc_iterative(
    model: &CooccurrenceModel,
    observed: &BTreeSet<NodeId>,
    n_slots: usize,
    max_iters: usize,
) -> Result<IterativeOutcome> {
    if n_slots == 0 || max_iters == 0 {
        return Err(Error::config(if n_slots == 0 { "n_slots" } else { "max_iters" }, "must be at least 1"));
    }
    let initial = score_labels(model, observed);
    let mut assignment: Vec<NodeId> = initial.ids().into_iter().take(n_slots).collect();
    let mut trace = vec![joint_objective(model, observed, &assignment)];
    let mut last: Vec<RankedPrediction> = Vec::new();
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        last.clear();
        let mut changed = false;
        for j in 0..assignment.len() {
            let mut evidence = observed.clone();
            evidence.extend(assignment.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, &l)| l));
            let ranking = score_labels(model, &evidence);
            let current = ranking.score_of(assignment[j]).unwrap_or(f64::NEG_INFINITY);
            if let Some(top) = ranking.entries.first() {
                if top.score > current {
                    assignment[j] = top.id;
                    changed = true;
                }
            }
            last.push(ranking);
        }
        trace.push(joint_objective(model, observed, &assignment));
        if !changed {
            break;
        }
    }

    let prediction = if last.len() <= 1 {
        last.pop().unwrap_or(initial)
    } else {
        let mut merged: BTreeMap<NodeId, f64> = BTreeMap::new();
        for entry in last.iter().flat_map(|r| r.entries.iter()) {
            merged.entry(entry.id).and_modify(|s| *s = s.max(entry.score)).or_insert(entry.score);
        }
        RankedPrediction::from_scores(merged.into_iter().collect())
    };
    Ok(IterativeOutcome { prediction, assignment, iterations, objective_trace: trace })
}
