use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use domorder::corpus::{self, SyntheticSpec};
use domorder::embed::{self, EmbeddingTable, HashedEmbedder};
use domorder::ordering;
use domorder::runner;
use domorder::Error;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sgd")
}

#[test]
fn sgd_fixture_is_ingested() {
    let raw = corpus::load_sgd(&fixture()).unwrap();
    let domains: Vec<&str> = raw.domains.keys().map(String::as_str).collect();
    assert_eq!(domains, ["Music_1", "Restaurants_1", "Weather_1"]);
    assert_eq!(raw.domains["Restaurants_1"].len(), 9);
    assert_eq!(raw.domains["Weather_1"].len(), 4);
    assert_eq!(raw.skipped_dialogues, 1);

    let exs = corpus::build_examples(&raw.domains["Weather_1"], 3).unwrap();
    assert_eq!(exs[0].intent_label, "GetWeather");
    assert_eq!(
        exs[0].input_text,
        "classify intent: hi there </s> Hello, how can I help? </s> What's the weather like in Paris intent: "
    );
    assert_eq!(exs[0].utterance, "What's the weather like in Paris");
    for e in raw.domains.values().flat_map(|s| corpus::build_examples(s, 3).unwrap()) {
        assert!(e.input_text.starts_with("classify intent: ") && e.input_text.ends_with(" intent: "));
        assert!(e.input_text.contains(&e.utterance));
    }

    let datasets = runner::ingest_sgd(&fixture(), 3, 100, 0).unwrap();
    let kept: Vec<&str> = datasets.keys().map(String::as_str).collect();
    assert_eq!(kept, ["Restaurants_1", "Weather_1"]);
    let r = &datasets["Restaurants_1"];
    assert_eq!((r.train.len(), r.val.len(), r.test.len()), (5, 1, 3));
}

#[test]
fn empty_directory_yields_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let raw = corpus::load_sgd(dir.path()).unwrap();
    assert!(raw.domains.is_empty());
    assert_eq!(raw.warnings.len(), 1);
    assert!(matches!(corpus::load_sgd(&dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn malformed_dialogue_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("dialogues_001.json"), "[{\"dialogue_id\": 3}]").unwrap();
    let err = corpus::load_sgd(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Ingest { .. }));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn corpus_cache_round_trips() {
    let datasets = runner::ingest_sgd(&fixture(), 3, 100, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    corpus::write_cache(dir.path(), &datasets).unwrap();
    assert_eq!(corpus::read_cache(dir.path()).unwrap(), datasets);
}

#[test]
fn embeddings_round_trip_through_interchange_file() {
    let datasets = runner::ingest_sgd(&fixture(), 3, 100, 0).unwrap();
    let table = EmbeddingTable::from_datasets(datasets.values(), &HashedEmbedder::new(256, 1).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.jsonl");
    embed::export_embeddings(&path, &table).unwrap();
    let back = embed::import_embeddings(&path).unwrap();
    assert_eq!(back, table);
    for v in back.entries.values() {
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(embed::cosine(v, v), 1.0);
    }
    let path2 = dir.path().join("emb2.jsonl");
    embed::export_embeddings(&path2, &back).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
}

#[test]
fn imported_file_with_header_and_raw_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.jsonl");
    fs::write(
        &path,
        concat!(
            "{\"header\": {\"model\": \"some-encoder\", \"dim\": 3, \"count\": 4}}\n",
            "{\"id\": \"a/1\", \"domain\": \"a\", \"vector\": [3.0, 4.0, 0.0]}\n",
            "{\"id\": \"a/2\", \"domain\": \"a\", \"vector\": [0.0, 1.0, 0.0]}\n",
            "{\"id\": \"b/1\", \"domain\": \"b\", \"vector\": [0.0, 0.0, 2.0]}\n",
            "{\"id\": \"b/2\", \"domain\": \"b\", \"vector\": [0.0, 0.6, 0.8]}\n",
        ),
    )
    .unwrap();
    let table = embed::import_embeddings(&path).unwrap();
    assert_eq!(table.len(), 4);
    let m = embed::distance_matrix(&table, &["a".into(), "b".into()]).unwrap();
    assert_eq!(m.d[0][0], 0.0);
    assert_eq!(m.d[0][1], m.d[1][0]);
    // Mean of {0, 0.48, 0, 0.6}.
    assert!((m.d[0][1] - (1.0 - 1.08 / 4.0)).abs() < 1e-12);

    let csv = dir.path().join("d.csv");
    m.write_csv(&csv).unwrap();
    assert_eq!(embed::DistanceMatrix::read_csv(&csv).unwrap(), m);
}

#[test]
fn bad_interchange_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "{\"id\": \"a\", \"domain\": \"a\", \"vector\": [1.0, NaN]}\n",
        "{\"id\": \"a\", \"domain\": \"a\", \"vector\": [1.0, 0.0]}\n{\"id\": \"b\", \"domain\": \"a\", \"vector\": [1.0]}\n",
        "not json\n",
    ];
    for (i, text) in cases.iter().enumerate() {
        let path = dir.path().join(format!("{i}.jsonl"));
        fs::write(&path, text).unwrap();
        let err = embed::import_embeddings(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
    }
}

#[test]
fn hashed_embedder_keeps_unrelated_texts_nearly_orthogonal() {
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let emb = HashedEmbedder::new(4096, i).unwrap();
        let a: String = (0..40).map(|k| format!("alpha{i}_{k} ")).collect();
        let b: String = (0..40).map(|k| format!("beta{i}_{k} ")).collect();
        worst = worst.max(embed::cosine(&emb.embed(&a), &emb.embed(&b)).abs());
    }
    assert!(worst < 0.05, "max |cos| = {worst}");
}

fn chain_spec(seed: u64, overlap: f64) -> SyntheticSpec {
    SyntheticSpec {
        n_domains: 5,
        vocab_per_domain: 60,
        overlap_chain: vec![overlap; 4],
        examples_per_domain: 100,
        intents_per_domain: 4,
        seed,
    }
}

#[test]
fn planted_chain_is_the_min_sum_path() {
    for seed in 0..10 {
        let synth = corpus::generate_synthetic(&chain_spec(seed, 0.8)).unwrap();
        let table = EmbeddingTable::from_datasets(synth.datasets.values(), &HashedEmbedder::new(4096, 0).unwrap()).unwrap();
        let ids: Vec<String> = synth.datasets.keys().cloned().collect();
        let m = embed::distance_matrix(&table, &ids).unwrap();
        let subset = corpus::DomainSubset { subset_id: 0, domain_ids: ids };
        let graph = ordering::build_graph(&m, &subset).unwrap();
        let best = ordering::min_sum_path(&graph).unwrap();
        assert_eq!(best.order, ordering::canonical_direction(&synth.planted_chain), "seed {seed}");
    }
}

#[test]
fn disjoint_chain_has_near_zero_similarity() {
    let synth = corpus::generate_synthetic(&chain_spec(1, 0.0)).unwrap();
    let table = EmbeddingTable::from_datasets(synth.datasets.values(), &HashedEmbedder::new(4096, 0).unwrap()).unwrap();
    let ids: Vec<String> = synth.datasets.keys().cloned().collect();
    let m = embed::distance_matrix(&table, &ids).unwrap();
    for i in 0..ids.len() {
        for j in 0..ids.len() {
            if i != j {
                assert!((m.d[i][j] - 1.0).abs() < 0.02, "{}", m.d[i][j]);
            }
        }
    }
    let labels: Vec<BTreeSet<String>> = synth.datasets.values().map(|d| d.labels().into_iter().collect()).collect();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            assert!(labels[i].is_disjoint(&labels[j]));
        }
    }
}

#[test]
fn full_overlap_gives_identical_domains() {
    let synth = corpus::generate_synthetic(&chain_spec(2, 1.0)).unwrap();
    let table = EmbeddingTable::from_datasets(synth.datasets.values(), &HashedEmbedder::new(4096, 0).unwrap()).unwrap();
    let ids: Vec<String> = synth.datasets.keys().cloned().collect();
    let m = embed::distance_matrix(&table, &ids).unwrap();
    let first = synth.datasets.values().next().unwrap().labels();
    for ds in synth.datasets.values() {
        let mut a = ds.labels();
        let mut b = first.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
    let within = {
        let v = table.domain_vectors(&ids[0]).unwrap();
        1.0 - embed::mean_cross_similarity(&v, &v).unwrap()
    };
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            assert!((m.d[i][j] - within).abs() < 0.02, "{} vs {within}", m.d[i][j]);
        }
    }
}
