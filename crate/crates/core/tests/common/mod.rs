//! Independent reference implementations shared by the integration tests.
//! Each is the most literal loop form of its definition and shares no code
//! with the library routine it checks.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use kep_core::kge::{margin_loss, margin_loss_gradient, EmbeddingModel, ModelKind, NormKind};
use kep_core::{KnowledgeGraph, NodeId, RelationId, Triple};
use rand::Rng;

pub fn naive_transe(h: &[f64], r: &[f64], t: &[f64], norm: NormKind) -> f64 {
    let mut acc = 0.0;
    for i in 0..h.len() {
        let x = h[i] + r[i] - t[i];
        acc += match norm {
            NormKind::L1 => x.abs(),
            NormKind::L2 => x * x,
        };
    }
    match norm {
        NormKind::L1 => -acc,
        NormKind::L2 => -acc.sqrt(),
    }
}

pub fn naive_hole(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    let d = h.len();
    let mut score = 0.0;
    for k in 0..d {
        let mut corr = 0.0;
        for i in 0..d {
            corr += h[i] * t[(i + k) % d];
        }
        score += r[k] * corr;
    }
    score
}

/// Builds the 3×d matrix, convolves each 1×3 filter down its columns,
/// applies ReLU, concatenates the maps and dots with the weight vector.
pub fn naive_convkb(h: &[f64], r: &[f64], t: &[f64], filters: &[f64], weights: &[f64]) -> f64 {
    let d = h.len();
    let rows = [h, r, t];
    let mut features = Vec::new();
    for f in 0..filters.len() / 3 {
        for col in 0..d {
            let mut v = 0.0;
            for row in 0..3 {
                v += filters[f * 3 + row] * rows[row][col];
            }
            features.push(if v > 0.0 { v } else { 0.0 });
        }
    }
    features.iter().zip(weights).map(|(a, b)| a * b).sum()
}

pub fn naive_score(model: &EmbeddingModel<f64>, t: &Triple) -> f64 {
    let (h, r, tt) = (model.entity(t.head), model.relation(t.relation), model.entity(t.tail));
    match model.kind() {
        ModelKind::TransE => naive_transe(h, r, tt, model.norm()),
        ModelKind::HolE => naive_hole(h, r, tt),
        ModelKind::ConvKB => {
            let filters: Vec<f64> = (0..model.num_filters()).flat_map(|f| model.filter(f).to_vec()).collect();
            naive_convkb(h, r, tt, &filters, model.weights())
        }
    }
}

pub fn random_triple<R: Rng>(rng: &mut R, n: usize, m: usize) -> Triple {
    Triple::new(
        NodeId(rng.gen_range(0..n) as u32),
        RelationId(rng.gen_range(0..m) as u32),
        NodeId(rng.gen_range(0..n) as u32),
    )
}

/// Largest relative error between analytic and central-difference
/// gradients of the margin loss over every parameter. The denominator is
/// floored at `1e-3`: a parameter whose true gradient is zero still picks up
/// central-difference roundoff of order `eps * loss / step`, so such entries
/// are held to an absolute error of `1e-7` instead.
pub fn gradient_check(model: &EmbeddingModel<f64>, pairs: &[(Triple, Triple)], margin: f64, step: f64) -> f64 {
    let analytic = margin_loss_gradient(model, pairs, margin).unwrap();
    let analytic: Vec<Vec<f64>> = analytic.blocks().iter().map(|b| b.to_vec()).collect();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for block in 0..4 {
        for i in 0..analytic[block].len() {
            let original = probe.parameters()[block][i];
            probe.parameters_mut()[block][i] = original + step;
            let up = margin_loss(&probe, pairs, margin).unwrap();
            probe.parameters_mut()[block][i] = original - step;
            let down = margin_loss(&probe, pairs, margin).unwrap();
            probe.parameters_mut()[block][i] = original;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[block][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Every subset of the item universe, counted by scanning all transactions.
pub fn powerset_frequent(
    transactions: &[BTreeSet<NodeId>],
    items: &[NodeId],
    min_num: u64,
    min_den: u64,
) -> BTreeMap<Vec<NodeId>, u64> {
    let n = transactions.len() as u64;
    let mut out = BTreeMap::new();
    for mask in 1u32..(1 << items.len()) {
        let subset: Vec<NodeId> = (0..items.len()).filter(|&i| mask & (1 << i) != 0).map(|i| items[i]).collect();
        let count = transactions.iter().filter(|t| subset.iter().all(|x| t.contains(x))).count() as u64;
        // count / n >= num / den, cross-multiplied
        if count > 0 && count * min_den >= min_num * n {
            out.insert(subset, count);
        }
    }
    out
}

/// `(antecedent, consequent, joint, antecedent_count)` for every split of
/// every frequent itemset of size ≥ 2 meeting the confidence threshold.
pub fn powerset_rules(
    frequent: &BTreeMap<Vec<NodeId>, u64>,
    conf_num: u64,
    conf_den: u64,
) -> BTreeSet<(Vec<NodeId>, Vec<NodeId>, u64, u64)> {
    let mut out = BTreeSet::new();
    for (set, &joint) in frequent {
        if set.len() < 2 {
            continue;
        }
        for mask in 1u32..(1 << set.len()) - 1 {
            let ante: Vec<NodeId> = (0..set.len()).filter(|&i| mask & (1 << i) != 0).map(|i| set[i]).collect();
            let cons: Vec<NodeId> = (0..set.len()).filter(|&i| mask & (1 << i) == 0).map(|i| set[i]).collect();
            let ante_count = frequent[&ante];
            if joint * conf_den >= conf_num * ante_count {
                out.insert((ante, cons, joint, ante_count));
            }
        }
    }
    out
}

/// Scene graph with `includes` and `type` edges plus an unrelated relation.
pub fn random_scene_graph<R: Rng>(rng: &mut R, target_triples: usize) -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    let n_types = rng.gen_range(2..15);
    let n_instances = (target_triples / 3).max(2);
    let n_scenes = (target_triples / 6).max(1);
    while out.len() < target_triples {
        match rng.gen_range(0..10) {
            0..=4 => out.push((
                format!("s{}", rng.gen_range(0..n_scenes)),
                "includes".to_string(),
                format!("e{}", rng.gen_range(0..n_instances)),
            )),
            5..=8 => out.push((
                format!("e{}", rng.gen_range(0..n_instances)),
                "type".to_string(),
                format!("T{}", rng.gen_range(0..n_types)),
            )),
            _ => out.push((
                format!("e{}", rng.gen_range(0..n_instances)),
                "near".to_string(),
                format!("e{}", rng.gen_range(0..n_instances)),
            )),
        }
    }
    out
}

/// Labelled triples of `g` plus the two-hop join computed by nested loops
/// over every pair of triples.
pub fn nested_loop_reify(g: &KnowledgeGraph, out_label: &str) -> BTreeSet<(String, String, String)> {
    let labelled: Vec<(String, String, String)> =
        g.labelled_triples().map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string())).collect();
    let mut out: BTreeSet<_> = labelled.iter().cloned().collect();
    for (s, r1, e) in &labelled {
        if r1 != "includes" {
            continue;
        }
        for (e2, r2, c) in &labelled {
            if r2 == "type" && e2 == e {
                out.insert((s.clone(), out_label.to_string(), c.clone()));
            }
        }
    }
    out
}

pub fn labelled_set(g: &KnowledgeGraph) -> BTreeSet<(String, String, String)> {
    g.labelled_triples().map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string())).collect()
}

/// Rank of `truth` by literal counting: one plus the number of candidates
/// outside `filtered` scoring at least as high (ties count against).
pub fn counting_rank(scores: &BTreeMap<NodeId, f64>, truth: NodeId, filtered: &BTreeSet<NodeId>) -> usize {
    let s = scores[&truth];
    1 + scores.iter().filter(|(c, &v)| **c != truth && !filtered.contains(c) && v >= s).count()
}
