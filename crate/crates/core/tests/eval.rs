use std::collections::{BTreeMap, BTreeSet};

use kep_core::eval::{evaluate_solver, kep_metrics, ranking_metrics, PerfectSolver, UniformRandomSolver};
use kep_core::graph::build_graph;
use kep_core::{NodeId, SceneRecord};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full confusion matrix, then per-class precision/recall/F1 read off it.
fn confusion_oracle(pairs: &[(Option<NodeId>, NodeId)]) -> (f64, f64, f64) {
    let mut matrix: BTreeMap<(Option<NodeId>, NodeId), usize> = BTreeMap::new();
    for &p in pairs {
        *matrix.entry(p).or_default() += 1;
    }
    let mut classes: BTreeSet<NodeId> = pairs.iter().map(|p| p.1).collect();
    classes.extend(pairs.iter().filter_map(|p| p.0));
    let cell = |pred: Option<NodeId>, truth: NodeId| matrix.get(&(pred, truth)).copied().unwrap_or(0);
    let diagonal: usize = classes.iter().map(|&c| cell(Some(c), c)).sum();
    let mut f1s = Vec::new();
    let (mut all_fp, mut all_fn) = (0, 0);
    for &c in &classes {
        let tp = cell(Some(c), c);
        let predicted_c: usize = classes.iter().map(|&t| cell(Some(c), t)).sum();
        let truly_c: usize = classes.iter().map(|&p| cell(Some(p), c)).sum::<usize>() + cell(None, c);
        let (fp, fn_) = (predicted_c - tp, truly_c - tp);
        all_fp += fp;
        all_fn += fn_;
        f1s.push(if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 });
    }
    let accuracy = 100.0 * diagonal as f64 / pairs.len() as f64;
    let micro = 2.0 * diagonal as f64 / (2 * diagonal + all_fp + all_fn) as f64;
    let macro_ = f1s.iter().sum::<f64>() / f1s.len() as f64;
    (accuracy, micro, macro_)
}

#[test]
fn kep_metrics_match_confusion_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let classes = rng.gen_range(1..8);
        let pairs: Vec<(Option<NodeId>, NodeId)> = (0..rng.gen_range(1..60))
            .map(|_| {
                let truth = NodeId(rng.gen_range(0..classes));
                let pred = if rng.gen_bool(0.1) {
                    None
                } else if rng.gen_bool(0.5) {
                    Some(truth)
                } else {
                    Some(NodeId(rng.gen_range(0..classes + 2)))
                };
                (pred, truth)
            })
            .collect();
        let got = kep_metrics(&pairs).unwrap();
        let (accuracy, micro, macro_) = confusion_oracle(&pairs);
        assert!((got.accuracy - accuracy).abs() < 1e-9);
        assert!((got.micro_f1 - micro).abs() < 1e-12);
        assert!((got.macro_f1 - macro_).abs() < 1e-12);
    }
}

#[test]
fn kep_metrics_small_fixture() {
    let (car, ped) = (NodeId(0), NodeId(1));
    let m = kep_metrics(&[(Some(car), car), (Some(car), ped)]).unwrap();
    assert_eq!(m.accuracy, 50.0);
    assert!((m.micro_f1 - 0.5).abs() < 1e-12);
    assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
}

/// Candidate vocabulary of 20 types and scenes that each mask one of them.
fn query_scenes(rng: &mut ChaCha8Rng, n: usize) -> (Vec<NodeId>, Vec<SceneRecord>) {
    let candidates: Vec<NodeId> = (0..20).map(NodeId).collect();
    let scenes = (0..n)
        .map(|i| {
            let size = rng.gen_range(2..10);
            let mut types: Vec<NodeId> = candidates.choose_multiple(rng, size).copied().collect();
            let masked = types.pop().unwrap();
            let mut s = SceneRecord::new(NodeId(100 + i as u32), types);
            s.masked.insert(masked);
            s
        })
        .collect();
    (candidates, scenes)
}

#[test]
fn uniform_random_baseline_matches_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (candidates, scenes) = query_scenes(&mut rng, 6000);
    let g = build_graph([("x", "r", "y")]);
    let solver = UniformRandomSolver { candidates: candidates.clone(), seed: 5 };
    let report = evaluate_solver(&solver, &scenes, &g, &candidates, &[1], "").unwrap();
    assert_eq!(report.n_queries, 6000);

    // each query ranks its truth uniformly among V unfiltered candidates
    let (mut hits_mean, mut hits_var, mut mrr_mean, mut mrr_var) = (0.0, 0.0, 0.0, 0.0);
    for s in &scenes {
        let v = (candidates.len() - s.observed.len()) as f64;
        let p = 1.0 / v;
        hits_mean += p;
        hits_var += p * (1.0 - p);
        let e1: f64 = (1..=v as usize).map(|r| 1.0 / r as f64).sum::<f64>() / v;
        let e2: f64 = (1..=v as usize).map(|r| 1.0 / (r * r) as f64).sum::<f64>() / v;
        mrr_mean += e1;
        mrr_var += e2 - e1 * e1;
    }
    let n = scenes.len() as f64;
    let (hits_mean, hits_sd) = (hits_mean / n, hits_var.sqrt() / n);
    let (mrr_mean, mrr_sd) = (mrr_mean / n, mrr_var.sqrt() / n);
    let hits = report.hits[&1];
    assert!((hits - hits_mean).abs() <= 3.0 * hits_sd, "hits@1 {hits} vs {hits_mean} ± {hits_sd}");
    assert!((report.mrr - mrr_mean).abs() <= 3.0 * mrr_sd, "mrr {} vs {mrr_mean} ± {mrr_sd}", report.mrr);
}

#[test]
fn perfect_solver_scores_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (candidates, scenes) = query_scenes(&mut rng, 300);
    let g = build_graph([("x", "r", "y")]);
    let report = evaluate_solver(&PerfectSolver, &scenes, &g, &candidates, &[1, 3], "fp").unwrap();
    assert_eq!(report.mrr, 1.0);
    assert_eq!(report.kep_accuracy, 100.0);
    assert_eq!(report.macro_f1, 1.0);
    assert_eq!(report.config_fingerprint, "fp");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ranking_metrics_match_recomputation(ranks in prop::collection::vec(1usize..50, 1..200), k in 1usize..20) {
        let m = ranking_metrics(&ranks, &[k, 1]).unwrap();
        let mut mrr = 0.0;
        let mut within = 0;
        for &r in &ranks {
            mrr += 1.0 / r as f64;
            if r <= k {
                within += 1;
            }
        }
        prop_assert!((m.mrr - mrr / ranks.len() as f64).abs() < 1e-12);
        prop_assert_eq!(m.hits[&k], within as f64 / ranks.len() as f64);
        prop_assert!(m.mrr > 0.0 && m.mrr <= 1.0);
        prop_assert!(m.hits[&1] <= m.hits[&k]);
    }

    #[test]
    fn micro_f1_is_accuracy_when_always_predicting(
        pairs in prop::collection::vec((0u32..6, 0u32..6), 1..80),
    ) {
        let pairs: Vec<_> = pairs.into_iter().map(|(p, t)| (Some(NodeId(p)), NodeId(t))).collect();
        let m = kep_metrics(&pairs).unwrap();
        prop_assert!((m.micro_f1 * 100.0 - m.accuracy).abs() < 1e-9);
        prop_assert!(m.macro_f1 >= 0.0 && m.macro_f1 <= 1.0);
    }
}
