use std::collections::{BTreeMap, BTreeSet};

use kep_core::ingest::{load_triples, save_triples};
use kep_core::syngen::{bayes_optimal_top1, block_diagonal, generate, GeneratorConfig};
use proptest::prelude::*;

/// P(v in S | archetype a, |S| >= 2) for independent inclusion bits `q`.
fn conditional_inclusion(q: &[f64], v: usize) -> f64 {
    let none = |skip: Option<usize>| (0..q.len()).filter(|&u| Some(u) != skip).map(|u| 1.0 - q[u]).product::<f64>();
    let exactly_one: f64 =
        (0..q.len()).map(|u| q[u] * (0..q.len()).filter(|&w| w != u).map(|w| 1.0 - q[w]).product::<f64>()).sum();
    let at_least_two = 1.0 - none(None) - exactly_one;
    // v present and at least one other type present
    q[v] * (1.0 - none(Some(v))) / at_least_two
}

#[test]
fn type_frequencies_match_conditional_expectation() {
    let cfg = GeneratorConfig { n_scenes: 20_000, seed: 9, ..GeneratorConfig::default() };
    let data = generate(&cfg).unwrap();
    for a in 0..cfg.n_archetypes {
        let members: Vec<_> = data.scenes.iter().filter(|s| s.archetype == a).collect();
        assert!(members.len() > 2_000);
        let q: Vec<f64> = (0..cfg.vocab_size).map(|v| cfg.effective_inclusion(a, v)).collect();
        for v in 0..cfg.vocab_size {
            let freq = members.iter().filter(|s| s.types.contains(&v)).count() as f64 / members.len() as f64;
            let expected = conditional_inclusion(&q, v);
            assert!((freq - expected).abs() <= 0.03, "archetype {a} type {v}: {freq:.4} vs {expected:.4}");
        }
    }
    assert!(data.scenes.iter().all(|s| s.types.len() >= 2));
}

#[test]
fn posterior_matches_empirical_masking() {
    let cfg = GeneratorConfig { n_scenes: 40_000, seed: 10, ..GeneratorConfig::default() };
    let data = generate(&cfg).unwrap();
    // every (scene, masked type) outcome, weighted by the 1/|S| chance of masking it
    let mut outcomes: BTreeMap<BTreeSet<usize>, BTreeMap<usize, f64>> = BTreeMap::new();
    for s in &data.scenes {
        for &v in &s.types {
            let mut obs = s.types.clone();
            obs.remove(&v);
            *outcomes.entry(obs).or_default().entry(v).or_default() += 1.0 / s.types.len() as f64;
        }
    }
    let mut frequent: Vec<_> = outcomes.iter().map(|(o, m)| (m.values().sum::<f64>(), o)).collect();
    frequent.sort_by(|a, b| b.0.total_cmp(&a.0));
    for &(mass, obs) in frequent.iter().take(5) {
        assert!(mass > 300.0);
        let (_, posterior) = bayes_optimal_top1(&cfg, obs).unwrap();
        for v in (0..cfg.vocab_size).filter(|v| !obs.contains(v)) {
            let empirical = outcomes[obs].get(&v).copied().unwrap_or(0.0) / mass;
            let sigma = (posterior[v] * (1.0 - posterior[v]) / mass).sqrt();
            assert!(
                (empirical - posterior[v]).abs() <= 4.0 * sigma + 1e-3,
                "obs {obs:?} type {v}: empirical {empirical:.4} vs posterior {:.4}",
                posterior[v]
            );
        }
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GeneratorConfig { n_scenes: 500, ..GeneratorConfig::default() };
    let mut files = Vec::new();
    for (i, threads) in [1, 4].into_iter().enumerate() {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let data = pool.install(|| generate(&cfg)).unwrap();
        let path = dir.path().join(format!("g{i}.tsv"));
        save_triples(data.triples.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())), &[], &path).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(load_triples(dir.path().join("g0.tsv")).unwrap(), generate(&cfg).unwrap().triples);
    let other = generate(&GeneratorConfig { seed: cfg.seed + 1, ..cfg.clone() }).unwrap();
    assert_ne!(other.scenes, generate(&cfg).unwrap().scenes);
}

#[test]
fn config_text_round_trips() {
    let cfg = GeneratorConfig {
        n_archetypes: 3,
        vocab_size: 7,
        inclusion: block_diagonal(3, 7, 0.7, 0.1),
        prior: vec![0.5, 0.25, 0.25],
        noise: 0.05,
        n_scenes: 123,
        seed: 77,
    };
    assert_eq!(GeneratorConfig::parse(&cfg.to_text()).unwrap(), cfg);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_is_a_distribution_over_unobserved_types(
        obs in prop::collection::btree_set(0usize..12, 0..11),
        noise in 0.0f64..0.45,
        inside in 0.3f64..1.0,
    ) {
        let cfg = GeneratorConfig { noise, inclusion: block_diagonal(5, 12, inside, 0.05), ..GeneratorConfig::default() };
        let (best, posterior) = bayes_optimal_top1(&cfg, &obs).unwrap();
        prop_assert!((posterior.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(!obs.contains(&best));
        for (v, p) in posterior.iter().enumerate() {
            prop_assert!(*p >= 0.0);
            if obs.contains(&v) {
                prop_assert_eq!(*p, 0.0);
            } else {
                prop_assert!(posterior[best] >= *p);
            }
        }
    }
}
