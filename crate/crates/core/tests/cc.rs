use std::collections::BTreeSet;

use kep_core::cc::{joint_objective, predict_cc_iterative, score_labels, train_cc, CooccurrenceModel};
use kep_core::eval::evaluate_solver;
use kep_core::graph::{build_graph, SplitRatios};
use kep_core::pipeline::{reify, CcSolver, Dataset, RelationNames};
use kep_core::syngen::{bayes_optimal_top1, generate, type_index, BayesSolver, GeneratorConfig};
use kep_core::{KnowledgeGraph, NodeId, SceneRecord};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scenes(rng: &mut ChaCha8Rng, n: usize, vocab: u32) -> Vec<SceneRecord> {
    (0..n)
        .map(|i| {
            let size = rng.gen_range(0..6);
            SceneRecord::new(NodeId(1000 + i as u32), (0..size).map(|_| NodeId(rng.gen_range(0..vocab))))
        })
        .collect()
}

/// Smoothed log score from raw counts, written straight from the formula.
fn formula_score(m: &CooccurrenceModel, label: NodeId, evidence: &BTreeSet<NodeId>) -> f64 {
    let l = m.vocab_size() as f64;
    let a = m.alpha();
    let c = m.label_count(label) as f64;
    let mut s = ((c + a) / (m.n_scenes() as f64 + a * l)).ln();
    for &o in evidence.iter().filter(|o| m.labels().contains(o)) {
        s += ((m.pair_count(label, o) as f64 + a) / (c + a * l)).ln();
    }
    s
}

#[test]
fn counts_equal_nested_loop_over_five_hundred_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scenes = random_scenes(&mut rng, 500, 15);
    let model = train_cc(&scenes, 1.0).unwrap();
    assert_eq!(model.n_scenes(), 500);
    for a in 0..15 {
        let a = NodeId(a);
        let single = scenes.iter().filter(|s| s.observed.contains(&a)).count() as u64;
        assert_eq!(model.label_count(a), single);
        for b in 0..15 {
            let b = NodeId(b);
            let both = if a == b {
                0
            } else {
                scenes.iter().filter(|s| s.observed.contains(&a) && s.observed.contains(&b)).count() as u64
            };
            assert_eq!(model.pair_count(a, b), both, "pair ({a}, {b})");
        }
    }
}

#[test]
fn scores_follow_the_smoothed_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scenes = random_scenes(&mut rng, 300, 10);
    for alpha in [0.5, 1.0, 2.0] {
        let model = train_cc(&scenes, alpha).unwrap();
        for _ in 0..50 {
            let evidence: BTreeSet<NodeId> = (0..rng.gen_range(0..4)).map(|_| NodeId(rng.gen_range(0..12))).collect();
            let ranking = score_labels(&model, &evidence);
            assert_eq!(ranking.len(), model.labels().iter().filter(|l| !evidence.contains(l)).count());
            for e in &ranking.entries {
                assert!(e.score.is_finite());
                assert!((e.score - formula_score(&model, e.id, &evidence)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn training_order_does_not_change_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut scenes = random_scenes(&mut rng, 400, 12);
    let reference = train_cc(&scenes, 1.0).unwrap();
    for _ in 0..3 {
        scenes.shuffle(&mut rng);
        let model = train_cc(&scenes, 1.0).unwrap();
        assert_eq!(model, reference);
        let evidence: BTreeSet<NodeId> = [NodeId(1), NodeId(4), NodeId(7)].into();
        let a = score_labels(&model, &evidence);
        let b = score_labels(&reference, &evidence);
        let bits = |r: &kep_core::eval::RankedPrediction| {
            r.entries.iter().map(|e| (e.id, e.score.to_bits())).collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn one_slot_iteration_equals_plain_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scenes = random_scenes(&mut rng, 200, 10);
    let model = train_cc(&scenes, 1.0).unwrap();
    for s in scenes.iter().take(50) {
        let out = predict_cc_iterative(&model, &s.observed, 1, 10).unwrap();
        let plain = score_labels(&model, &s.observed);
        assert_eq!(out.prediction, plain);
        assert_eq!(out.assignment.first().copied(), plain.top());
    }
}

fn synthetic(n_scenes: usize) -> (GeneratorConfig, KnowledgeGraph, Vec<SceneRecord>) {
    let cfg = GeneratorConfig { n_scenes, ..GeneratorConfig::default() };
    let data = generate(&cfg).unwrap();
    let g = reify(&build_graph(data.triples.clone()), &RelationNames::default()).unwrap();
    let scenes = data.scene_records(&g).unwrap();
    (cfg, g, scenes)
}

#[test]
fn joint_objective_never_decreases_with_two_slots() {
    let (_, _, scenes) = synthetic(1500);
    let (train, probe) = scenes.split_at(1000);
    let model = train_cc(train, 1.0).unwrap();
    let mut passes = 0;
    for s in probe.iter().filter(|s| s.observed.len() >= 3) {
        // hide two types, keep the rest as evidence
        let observed: BTreeSet<NodeId> = s.observed.iter().skip(2).copied().collect();
        let out = predict_cc_iterative(&model, &observed, 2, 20).unwrap();
        for w in out.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "objective fell: {:?}", out.objective_trace);
        }
        let last = *out.objective_trace.last().unwrap();
        assert!((joint_objective(&model, &observed, &out.assignment) - last).abs() < 1e-12);
        passes += out.iterations;
    }
    assert!(passes > 0);
}

#[test]
fn top_choice_tracks_generator_posterior() {
    let (cfg, g, scenes) = synthetic(2000);
    let model = train_cc(&scenes, 1.0).unwrap();
    let index = |id: NodeId| type_index(g.node_label(id).unwrap()).unwrap();
    let (mut agree, mut total) = (0, 0);
    for s in &scenes {
        for &drop in &s.observed {
            let evidence: BTreeSet<NodeId> = s.observed.iter().copied().filter(|&t| t != drop).collect();
            let top = score_labels(&model, &evidence).top().unwrap();
            let observed: BTreeSet<usize> = evidence.iter().map(|&t| index(t)).collect();
            let (best, _) = bayes_optimal_top1(&cfg, &observed).unwrap();
            total += 1;
            agree += usize::from(index(top) == best);
        }
    }
    let rate = agree as f64 / total as f64;
    assert!(rate >= 0.6, "agreement {rate:.3} over {total} queries");
}

#[test]
fn accuracy_is_close_to_the_bayes_ceiling() {
    let cfg = GeneratorConfig::default();
    let data = generate(&cfg).unwrap();
    let ds =
        Dataset::new(&build_graph(data.triples), &RelationNames::default(), SplitRatios::default(), 1, 42).unwrap();
    let test = ds.test_queries();
    let candidates = ds.candidates();
    let model = train_cc(&ds.split.train, 1.0).unwrap();
    let cc = evaluate_solver(&CcSolver { model, n_slots: 1, max_iters: 10 }, &test, &ds.graph, &candidates, &[1], "")
        .unwrap();
    let oracle = BayesSolver::new(cfg, &ds.graph).unwrap();
    let bayes = evaluate_solver(&oracle, &test, &ds.graph, &candidates, &[1], "").unwrap();
    assert!(cc.kep_accuracy >= bayes.kep_accuracy - 5.0, "cc {} vs bayes {}", cc.kep_accuracy, bayes.kep_accuracy);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_are_finite_and_evidence_free(
        rows in prop::collection::vec(prop::collection::btree_set(0u32..8, 0..5), 1..40),
        evidence in prop::collection::btree_set(0u32..10, 0..5),
        alpha in 0.01f64..5.0,
    ) {
        let scenes: Vec<SceneRecord> =
            rows.into_iter().enumerate().map(|(i, r)| SceneRecord::new(NodeId(100 + i as u32), r.into_iter().map(NodeId))).collect();
        prop_assume!(scenes.iter().any(|s| !s.observed.is_empty()));
        let model = train_cc(&scenes, alpha).unwrap();
        let evidence: BTreeSet<NodeId> = evidence.into_iter().map(NodeId).collect();
        let ranking = score_labels(&model, &evidence);
        for e in &ranking.entries {
            prop_assert!(e.score.is_finite());
            prop_assert!(!evidence.contains(&e.id));
        }
        for w in ranking.entries.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id));
        }
    }
}
