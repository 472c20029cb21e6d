use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use domorder::learner::{ContinualLearner, LinearSoftmax};
use domorder::embed::HashedEmbedder;
use domorder::ordering::Strategy;
use domorder::runner::{self, ExperimentConfig, RunRecord};
use domorder::stats;

const SMALL: &str = r#"
seed = 11
subset_size = 4
subset_count = 2
model_tag = "test-linear"

[train]
epochs = 3

[features]
dim = 256

[embedding]
kind = "builtin"
dim = 1024

[corpus]
kind = "synthetic"
replicates = 2

[corpus.spec]
n_domains = 5
vocab_per_domain = 30
overlap_chain = [0.8, 0.8, 0.8, 0.8]
examples_per_domain = 40
intents_per_domain = 3
seed = 2
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_domorder"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn experiment_layout_and_invariants() {
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let exp = runner::run_experiment(&cfg, 2).unwrap();
    let runs = &exp.report.runs;
    assert_eq!(runs.len(), 2 * 2 * 3);
    let keys: Vec<(usize, Strategy)> = runs.iter().map(|r| (r.subset_id, r.strategy)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    for r in runs {
        assert_eq!(r.matrix.rows.len(), 4);
        assert!(r.avg_cf >= 0.0);
    }

    // Every run starts from the same untouched learner.
    let fresh = LinearSoftmax::new(HashedEmbedder::new(256, 0).unwrap(), 0).unwrap().checksum();
    assert!(exp.initial_checksums.iter().all(|c| *c == fresh));

    let records: Vec<RunRecord> = runs.iter().map(RunRecord::from).collect();
    for s in &exp.report.summary {
        let acc: Vec<f64> = records.iter().filter(|r| r.strategy == s.strategy).map(|r| r.avg_accuracy).collect();
        let cf: Vec<f64> = records.iter().filter(|r| r.strategy == s.strategy).map(|r| r.avg_cf).collect();
        assert!((s.avg_accuracy_mean - stats::mean(&acc)).abs() < 1e-12);
        assert!((s.avg_accuracy_sd - stats::sample_sd(&acc)).abs() < 1e-12);
        assert!((s.avg_cf_mean - stats::mean(&cf)).abs() < 1e-12);
        assert!((s.avg_cf_sd - stats::sample_sd(&cf)).abs() < 1e-12);
    }
    assert_eq!(exp.report.comparisons.len(), 2);
    let c = &exp.report.comparisons[1];
    assert_eq!((c.one_way.df_between, c.one_way.df_within), (2, 9));
    assert_eq!((c.repeated.df_between, c.repeated.df_within), (2, 6));

    let serial = runner::run_experiment(&cfg, 1).unwrap();
    assert_eq!(serial.report.runs, exp.report.runs);
    assert_eq!(serial.stage_log, exp.stage_log);
}

#[test]
fn single_run_summary_equals_the_run() {
    let text = SMALL.replace("subset_count = 2", "subset_count = 1").replace("replicates = 2", "replicates = 1");
    let mut cfg = ExperimentConfig::from_toml(&text).unwrap();
    cfg.strategies = vec![Strategy::MinSum];
    let exp = runner::run_experiment(&cfg, 1).unwrap();
    assert_eq!(exp.report.runs.len(), 1);
    assert!(exp.report.comparisons.is_empty());
    let (run, s) = (&exp.report.runs[0], &exp.report.summary[0]);
    assert_eq!(s.avg_accuracy_mean, run.avg_accuracy);
    assert_eq!(s.avg_cf_mean, run.avg_cf);
}

#[test]
fn cli_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.toml");
    fs::write(
        &spec,
        "n_domains = 6\nvocab_per_domain = 30\noverlap_chain = [0.8, 0.8, 0.8, 0.8, 0.8]\nexamples_per_domain = 40\nintents_per_domain = 3\nseed = 9\n",
    )
    .unwrap();
    let corpus_dir = d.join("corpus");
    let s = |p: &Path| p.to_str().unwrap().to_string();

    assert!(run(&["synth", "--config", &s(&spec), "--out", &s(&corpus_dir)]).status.success());
    assert!(corpus_dir.join("planted_chain.json").exists());
    assert!(run(&["embed", &s(&corpus_dir), "--dim", "512", "--out", &s(d)]).status.success());
    assert!(run(&["distances", "--embeddings", &s(&d.join("embeddings.jsonl")), "--out", &s(d)]).status.success());
    let csv = fs::read_to_string(d.join("distances.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);

    let out = run(&["order", &s(&d.join("distances.csv")), "--subset-size", "4", "--subset-count", "3", "--out", &s(d)]);
    assert!(out.status.success());
    let paths = fs::read_to_string(d.join("paths.csv")).unwrap();
    assert_eq!(paths.lines().count(), 1 + 3 * 3);
    let out = run(&["order", &s(&d.join("distances.csv")), "--strategy", "max-sum", "--subset-size", "4", "--subset-count", "3", "--out", &s(d)]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(d.join("paths.csv")).unwrap().lines().count(), 4);

    let cache_cfg = format!(
        "seed = 1\nsubset_size = 3\nsubset_count = 2\n[train]\nepochs = 2\n[features]\ndim = 128\n[corpus]\nkind = \"cached\"\npath = {:?}\n",
        s(&corpus_dir)
    );
    let cfg = write_config(d, &cache_cfg);
    let bundle = d.join("bundle");
    let out = run(&["run", "--config", &cfg, "--out", &s(&bundle), "--jobs", "2"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("min-sum path"));
    for f in ["runs.jsonl", "paths.jsonl", "paths.csv", "stage_log.jsonl", "stats.jsonl", "summary.txt", "provenance.json"] {
        assert!(bundle.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_dir(bundle.join("matrix")).unwrap().count(), 6);
    assert!(!fs::read_dir(&bundle).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));

    let stats_before = fs::read(bundle.join("stats.jsonl")).unwrap();
    assert!(run(&["stats", &s(&bundle)]).status.success());
    assert_eq!(fs::read(bundle.join("stats.jsonl")).unwrap(), stats_before);
    let out = run(&["report", &s(&bundle)]);
    assert!(out.status.success());
    assert_eq!(out.stdout, fs::read(bundle.join("summary.txt")).unwrap());
}

#[test]
fn cli_ingests_sgd_directory() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sgd");
    let out_dir = dir.path().join("corpus");
    let out = run(&["ingest", fixture.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out_dir.join("Restaurants_1.jsonl").exists());
    assert!(!out_dir.join("Music_1.jsonl").exists());
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |o: Output| o.status.code().unwrap();

    assert_eq!(code(run(&["run"])), 2);
    assert_eq!(code(run(&["run", "--strategy", "greedy"])), 2);
    let bad = write_config(dir.path(), "subset_size = 1\n[corpus]\nkind = \"sgd\"\npath = \"x\"\n");
    assert_eq!(code(run(&["run", "--config", &bad])), 2);
    assert_eq!(code(run(&["order", "/definitely/not/here.csv"])), 3);
    let missing = write_config(dir.path(), "[corpus]\nkind = \"sgd\"\npath = \"/definitely/not/here\"\n");
    assert_eq!(code(run(&["run", "--config", &missing, "--out", dir.path().join("o").to_str().unwrap()])), 3);
}

#[test]
fn divergence_aborts_and_keeps_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("epochs = 3", "epochs = 3\nlearning_rate = 1e300");
    let cfg = write_config(dir.path(), &text);
    let out_dir = dir.path().join("bundle");
    let out = run(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--jobs", "1"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("s000-"));
    assert!(out_dir.join("partial/error.txt").exists());
    assert!(!out_dir.join("runs.jsonl").exists());
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("replicates = 2", "replicates = 1"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(run(&["run", "--config", &cfg, "--seed", "12", "--out", b.to_str().unwrap()]).status.success());
    let pa = fs::read_to_string(a.join("provenance.json")).unwrap();
    let pb = fs::read_to_string(b.join("provenance.json")).unwrap();
    assert_ne!(pa, pb);
}
