use kep_core::arm::train_arm;
use kep_core::cc::train_cc;
use kep_core::graph::{build_graph, SplitRatios};
use kep_core::ingest::*;
use kep_core::kge::{EmbeddingModel, ModelKind, NormKind};
use kep_core::pipeline::{Dataset, RelationNames};
use kep_core::syngen::{generate, GeneratorConfig};
use kep_core::{Error, Fraction, KnowledgeGraph, NodeId, RelationId, Triple};
use proptest::prelude::*;

fn synthetic(n_scenes: usize) -> Dataset {
    let data = generate(&GeneratorConfig { n_scenes, ..GeneratorConfig::default() }).unwrap();
    Dataset::new(&build_graph(data.triples), &RelationNames::default(), SplitRatios::default(), 1, 3).unwrap()
}

#[test]
fn thousand_scene_file_saves_identically_twice() {
    let ds = synthetic(1000);
    let scenes: Vec<_> = ds.split.train.iter().chain(&ds.split.valid).chain(&ds.split.test).cloned().collect();
    assert_eq!(scenes.len(), 1000);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let comments = vec!["fingerprint=0123456789abcdef seed=3".to_string()];
    save_scenes(&scenes, &ds.graph, &comments, &a).unwrap();
    let loaded = load_scenes(&a, &ds.graph).unwrap();
    assert_eq!(loaded, scenes);
    save_scenes(&loaded, &ds.graph, &comments, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn triples_round_trip_through_text() {
    let ds = synthetic(200);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.tsv");
    save_triples(ds.graph.labelled_triples(), &["seed=none".into()], &path).unwrap();
    let again = build_graph(load_triples(&path).unwrap());
    let labelled =
        |g: &KnowledgeGraph| g.labelled_triples().map(|(h, r, t)| format!("{h} {r} {t}")).collect::<Vec<_>>();
    assert_eq!(labelled(&again), labelled(&ds.graph));
}

#[test]
fn convkb_archive_is_bit_exact() {
    let model = EmbeddingModel::<f32>::random(ModelKind::ConvKB, 9, 3, 6, 8, 21);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.kep");
    save_model(&model, Some("feedfacefeedface"), &path).unwrap();
    let back: EmbeddingModel<f32> = load_model(&path).unwrap();
    assert_eq!(back.num_filters(), 8);
    for (x, y) in model.parameters().iter().zip(back.parameters()) {
        let bits = |s: &[f32]| s.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(x), bits(y));
    }
    assert_eq!(encode_model(&back, Some("feedfacefeedface")), std::fs::read(&path).unwrap());
    assert_eq!(archive_kind(&path).unwrap(), "convkb");
}

#[test]
fn tiny_transe_archive_scores_identically() {
    let model = EmbeddingModel::<f32>::random(ModelKind::TransE, 4, 2, 2, 0, 8).with_norm(NormKind::L1);
    let back: EmbeddingModel<f32> = decode_model(&encode_model(&model, None)).unwrap();
    assert_eq!(back.norm(), NormKind::L1);
    assert_eq!(back.seed(), 8);
    for h in 0..4 {
        for r in 0..2 {
            for t in 0..4 {
                let tr = Triple::new(NodeId(h), RelationId(r), NodeId(t));
                assert_eq!(model.score_triple(&tr).unwrap().to_bits(), back.score_triple(&tr).unwrap().to_bits());
            }
        }
    }
}

#[test]
fn archive_faults_are_reported_distinctly() {
    let model = EmbeddingModel::<f32>::random(ModelKind::HolE, 5, 2, 4, 0, 1);
    let bytes = encode_model(&model, None);

    let truncated = &bytes[..bytes.len() - 3];
    assert!(matches!(decode_model::<f32>(truncated), Err(Error::ArchiveTruncated { .. })));

    let text = String::from_utf8_lossy(&bytes).replace("format_version=1", "format_version=7");
    let versioned: Vec<u8> = {
        let header_len = text.find("end_header\n").unwrap() + "end_header\n".len();
        let mut v = text.as_bytes()[..header_len].to_vec();
        v.extend_from_slice(&bytes[header_len..]);
        v
    };
    assert!(matches!(decode_model::<f32>(&versioned), Err(Error::ArchiveVersion { found: 7, expected: 1 })));

    let mut reshaped = bytes.clone();
    let at = reshaped.windows(5).position(|w| w == b"dim=4").unwrap();
    reshaped[at + 4] = b'3';
    assert!(matches!(decode_model::<f32>(&reshaped), Err(Error::ArchiveShape(_))));

    let mut trailing = bytes.clone();
    trailing.extend_from_slice(&[0, 0, 0, 0]);
    assert!(matches!(decode_model::<f32>(&trailing), Err(Error::ArchiveShape(_))));

    assert!(matches!(decode_model::<f32>(b"not an archive\nend_header\n"), Err(Error::ArchiveHeader(_))));
}

#[test]
fn rules_and_cc_archives_round_trip() {
    let ds = synthetic(400);
    let rules = train_arm(&ds.split.train, Fraction::new(1, 20), Fraction::new(1, 2)).unwrap();
    assert!(!rules.is_empty());
    let text = encode_rules(&rules, &ds.graph, &["fingerprint=x seed=0".into()]).unwrap();
    let back = parse_rules(&text, &ds.graph).unwrap();
    assert_eq!(back, rules);
    assert_eq!(encode_rules(&back, &ds.graph, &["fingerprint=x seed=0".into()]).unwrap(), text);

    let cc = train_cc(&ds.split.train, 0.5).unwrap();
    let bytes = encode_cc_model(&cc, None).unwrap();
    assert_eq!(decode_cc_model(&bytes).unwrap(), cc);
    assert!(decode_model::<f32>(&bytes).is_err());
}

fn fixture_graph() -> KnowledgeGraph {
    build_graph([("s", "includesType", "a"), ("s", "includesType", "b"), ("t", "includesType", "a")])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parsers_never_panic_on_random_bytes(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let g = fixture_graph();
        let _ = parse_triples(&bytes);
        let _ = parse_scenes(&bytes, &g);
        let _ = parse_rules(&bytes, &g);
        let _ = decode_model::<f32>(&bytes);
        let _ = decode_model::<f64>(&bytes);
        let _ = decode_cc_model(&bytes);
    }

    #[test]
    fn parsers_never_panic_on_corrupted_archives(
        kind in 0usize..3,
        edits in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6),
        cut in any::<prop::sample::Index>(),
    ) {
        let kinds = [ModelKind::TransE, ModelKind::HolE, ModelKind::ConvKB];
        let mut bytes = encode_model(&EmbeddingModel::<f32>::random(kinds[kind], 3, 1, 2, 2, 0), None);
        for (at, b) in edits {
            let i = at.index(bytes.len());
            bytes[i] = b;
        }
        let _ = decode_model::<f32>(&bytes);
        let _ = decode_model::<f32>(&bytes[..cut.index(bytes.len())]);
    }

    #[test]
    fn text_parsers_never_panic_on_token_soup(
        tokens in prop::collection::vec(prop::sample::select(vec![
            "s", "a", "b", "\t", "\n", ",", "/", "1", "0", "#", "{", "}", "\"", ":", "[", "]",
            "scene_id", "observed", "masked", "# transactions=", "\r",
        ]), 0..60),
    ) {
        let text = tokens.concat();
        let g = fixture_graph();
        let _ = parse_triples(text.as_bytes());
        let _ = parse_scenes(text.as_bytes(), &g);
        let _ = parse_rules(text.as_bytes(), &g);
    }
}
