//! End-to-end experiments: subsets, orderings, continual runs, statistics and
//! the report bundle.
//!
//! A bundle directory holds `runs.jsonl`, `paths.jsonl`, `paths.csv`,
//! `stage_log.jsonl`, `matrix/<run_id>.csv`, `stats.jsonl`, `summary.txt`
//! and `provenance.json`. Nothing in it depends on wall-clock time or on the
//! number of worker threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::corpus::{self, DomainDataset, DomainSubset, SplitRatios, SyntheticSpec};
use crate::embed::{self, DistanceMatrix, EmbeddingTable, HashedEmbedder};
use crate::error::{Error, Result};
use crate::learner::{ContinualLearner, LinearSoftmax, TrainConfig};
use crate::metrics::{finalize_run, AccuracyMatrix, RunResult};
use crate::ordering::{self, DomainPath, Strategy};
use crate::seed;
use crate::stats::{self, AnovaResult, GroupSample, TukeyPair};

pub const TUKEY_ALPHA: f64 = 0.05;

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorpusSource {
    /// Directory of SGD dialogue files.
    Sgd { path: PathBuf },
    /// Generated corpora; each replicate draws a fresh corpus.
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default = "one")]
        replicates: usize,
    },
    /// Corpus cache directory written by `ingest` or `synth`.
    Cached { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSource {
    Builtin {
        #[serde(default = "default_embedding_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Interchange file, e.g. from the sentence-encoder exporter.
    Imported { path: PathBuf },
}

impl Default for EmbeddingSource {
    fn default() -> Self {
        EmbeddingSource::Builtin {
            dim: default_embedding_dim(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSettings {
    pub dim: usize,
    pub seed: u64,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        Self { dim: 1024, seed: 0 }
    }
}

/// Training hyperparameters; per-stage seeds are derived per run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            l2: d.l2,
            batch_size: d.batch_size,
        }
    }
}

impl TrainSettings {
    fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            l2: self.l2,
            batch_size: self.batch_size,
            seed,
        }
    }
}

fn one() -> usize {
    1
}
fn default_embedding_dim() -> usize {
    4096
}
fn default_subset_size() -> usize {
    5
}
fn default_subset_count() -> usize {
    22
}
fn default_window() -> usize {
    corpus::DEFAULT_WINDOW
}
fn default_cap() -> usize {
    corpus::DEFAULT_CAP
}
fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}
fn default_model_tag() -> String {
    "reference-linear".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub corpus: CorpusSource,
    #[serde(default)]
    pub embedding: EmbeddingSource,
    #[serde(default)]
    pub features: FeatureSettings,
    #[serde(default = "default_subset_size")]
    pub subset_size: usize,
    /// Subsets per corpus instance.
    #[serde(default = "default_subset_count")]
    pub subset_count: usize,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default = "default_model_tag")]
    pub model_tag: String,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subset_size < 2 {
            return Err(Error::Config("subset_size must be at least 2".into()));
        }
        if self.subset_size > ordering::MAX_NODES {
            return Err(Error::Config(format!(
                "subset_size must be at most {}",
                ordering::MAX_NODES
            )));
        }
        if self.subset_count < 1 {
            return Err(Error::Config("subset_count must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        let unique: BTreeSet<_> = self.strategies.iter().collect();
        if unique.len() != self.strategies.len() {
            return Err(Error::Config("strategies must not repeat".into()));
        }
        if self.window < 1 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if let CorpusSource::Synthetic { spec, replicates } = &self.corpus {
            spec.validate()?;
            if *replicates < 1 {
                return Err(Error::Config("replicates must be at least 1".into()));
            }
        }
        if let EmbeddingSource::Builtin { dim, seed } = self.embedding {
            HashedEmbedder::new(dim, seed)?;
        }
        HashedEmbedder::new(self.features.dim, self.features.seed)?;
        self.train.with_seed(0).validate()
    }

    /// Stable fingerprint of the configuration (its canonical JSON form).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", xxh3_64(json.as_bytes()))
    }
}

// ---------------------------------------------------------------------------
// Corpus instances

/// One independently drawn corpus with its own distance matrix.
#[derive(Debug, Clone)]
pub struct CorpusInstance {
    pub name: String,
    pub datasets: BTreeMap<String, DomainDataset>,
    pub planted_chain: Option<Vec<String>>,
}

pub fn resolve_corpus(config: &ExperimentConfig) -> Result<Vec<CorpusInstance>> {
    match &config.corpus {
        CorpusSource::Sgd { path } => Ok(vec![CorpusInstance {
            name: "sgd".into(),
            datasets: ingest_sgd(path, config.window, config.cap, config.seed)?,
            planted_chain: None,
        }]),
        CorpusSource::Cached { path } => Ok(vec![CorpusInstance {
            name: "cached".into(),
            datasets: corpus::read_cache(path)?,
            planted_chain: None,
        }]),
        CorpusSource::Synthetic { spec, replicates } => (0..*replicates)
            .map(|r| {
                let mut spec = spec.clone();
                if *replicates > 1 {
                    spec.seed = seed::derive(spec.seed, &["replicate", &r.to_string()]);
                }
                let synth = corpus::generate_synthetic(&spec)?;
                Ok(CorpusInstance {
                    name: format!("r{r:03}"),
                    datasets: synth.datasets,
                    planted_chain: Some(synth.planted_chain),
                })
            })
            .collect(),
    }
}

/// Loads SGD dialogues, windows them into examples, and caps and splits
/// every domain.
pub fn ingest_sgd(path: &Path, window: usize, cap: usize, master_seed: u64) -> Result<BTreeMap<String, DomainDataset>> {
    let raw = corpus::load_sgd(path)?;
    let mut by_domain = BTreeMap::new();
    for (domain, seqs) in &raw.domains {
        by_domain.insert(domain.clone(), corpus::build_examples(seqs, window)?);
    }
    corpus::split_domains(by_domain, cap, SplitRatios::default(), seed::derive(master_seed, &["split"]))
}

/// Embedding table for an instance, built in or imported.
pub fn embedding_table(config: &ExperimentConfig, instance: &CorpusInstance) -> Result<EmbeddingTable> {
    match &config.embedding {
        EmbeddingSource::Builtin { dim, seed } => {
            EmbeddingTable::from_datasets(instance.datasets.values(), &HashedEmbedder::new(*dim, *seed)?)
        }
        EmbeddingSource::Imported { path } => embed::import_embeddings(path),
    }
}

pub fn instance_distances(config: &ExperimentConfig, instance: &CorpusInstance) -> Result<DistanceMatrix> {
    let table = embedding_table(config, instance)?;
    let domains: Vec<String> = instance.datasets.keys().cloned().collect();
    embed::distance_matrix(&table, &domains)
}

// ---------------------------------------------------------------------------
// Planning

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub subset_id: usize,
    pub strategy: Strategy,
    pub order: Vec<String>,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct PlannedRun {
    pub run_id: String,
    pub subset_id: usize,
    pub instance: usize,
    pub seed: u64,
    pub path: DomainPath,
}

pub fn run_id(subset_id: usize, strategy: Strategy) -> String {
    format!("s{subset_id:03}-{strategy}")
}

pub fn run_seed(master: u64, subset_id: usize, strategy: Strategy) -> u64 {
    seed::derive(master, &["run", &subset_id.to_string(), strategy.as_str()])
}

/// A subset with one (path, run seed) per strategy.
pub type OrderedSubset = (DomainSubset, Vec<(DomainPath, u64)>);

/// Samples subsets of `matrix`'s domains and orders each with every strategy.
/// Subset ids start at `first_id`.
pub fn plan_orderings(
    matrix: &DistanceMatrix,
    size: usize,
    count: usize,
    strategies: &[Strategy],
    master_seed: u64,
    first_id: usize,
    sample_seed: u64,
) -> Result<Vec<OrderedSubset>> {
    let subsets = corpus::sample_subsets(&matrix.domain_ids, size, count, sample_seed)?;
    subsets
        .into_iter()
        .map(|mut subset| {
            subset.subset_id += first_id;
            let graph = ordering::build_graph(matrix, &subset)?;
            let paths = strategies
                .iter()
                .map(|&s| {
                    let seed = run_seed(master_seed, subset.subset_id, s);
                    Ok((ordering::path_for(&graph, s, seed)?, seed))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((subset, paths))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Execution

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub run_id: String,
    pub stage: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub stage_log: Vec<StageRecord>,
    /// Learner fingerprint before the first stage.
    pub initial_checksum: u64,
}

/// Trains a fresh learner through `path`, evaluating every subset domain
/// after each stage.
pub fn execute_run(
    plan: &PlannedRun,
    datasets: &BTreeMap<String, DomainDataset>,
    features: FeatureSettings,
    train: TrainSettings,
) -> Result<RunOutput> {
    let featurizer = HashedEmbedder::new(features.dim, features.seed)?;
    let mut learner = LinearSoftmax::new(featurizer, plan.seed)?;
    let initial_checksum = learner.checksum();
    let order = &plan.path.order;
    let data: Vec<&DomainDataset> = order
        .iter()
        .map(|d| datasets.get(d).ok_or_else(|| Error::UnknownDomain(d.clone())))
        .collect::<Result<_>>()?;
    let mut matrix = AccuracyMatrix::new(order.clone());
    let mut stage_log = Vec::new();
    for (stage, ds) in data.iter().enumerate() {
        learner.extend_labels(&ds.labels());
        let cfg = train.with_seed(seed::derive(plan.seed, &["stage", &stage.to_string()]));
        let log = learner.train_stage(&ds.train, &ds.val, &cfg)?;
        stage_log.extend(log.epochs.into_iter().map(|e| StageRecord {
            run_id: plan.run_id.clone(),
            stage,
            epoch: e.epoch,
            train_loss: e.train_loss,
            val_accuracy: e.val_accuracy,
        }));
        let row = data
            .iter()
            .map(|d| learner.evaluate(&d.test))
            .collect::<Result<Vec<_>>>()?;
        matrix.record_stage(row)?;
    }
    let result = finalize_run(plan.run_id.clone(), plan.subset_id, plan.path.strategy, matrix)?;
    Ok(RunOutput {
        result,
        stage_log,
        initial_checksum,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub runs: usize,
    pub avg_accuracy_mean: f64,
    pub avg_accuracy_sd: f64,
    pub avg_cf_mean: f64,
    pub avg_cf_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AvgAccuracy,
    AvgCf,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::AvgAccuracy, Metric::AvgCf];

    pub fn of(self, r: &RunRecord) -> f64 {
        match self {
            Metric::AvgAccuracy => r.avg_accuracy,
            Metric::AvgCf => r.avg_cf,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::AvgAccuracy => "avg_accuracy",
            Metric::AvgCf => "avg_cf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: Metric,
    pub one_way: AnovaResult,
    pub repeated: AnovaResult,
    pub tukey: Vec<TukeyPair>,
}

/// One line of `runs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub subset_id: usize,
    pub strategy: Strategy,
    pub avg_accuracy: f64,
    pub avg_cf: f64,
    pub avg_cf_pre_exposure: f64,
}

impl From<&RunResult> for RunRecord {
    fn from(r: &RunResult) -> Self {
        Self {
            run_id: r.run_id.clone(),
            subset_id: r.subset_id,
            strategy: r.strategy,
            avg_accuracy: r.avg_accuracy,
            avg_cf: r.avg_cf,
            avg_cf_pre_exposure: r.avg_cf_pre_exposure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
    pub run_seeds: BTreeMap<String, u64>,
    pub code_version: String,
    pub model_tag: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub runs: Vec<RunResult>,
    pub summary: Vec<StrategySummary>,
    pub comparisons: Vec<Comparison>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: ExperimentReport,
    pub paths: Vec<PathRecord>,
    pub stage_log: Vec<StageRecord>,
    pub initial_checksums: Vec<u64>,
    pub instances: Vec<CorpusInstance>,
}

/// A failed experiment with whatever runs finished before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub completed: Vec<RunOutput>,
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            completed: Vec::new(),
        }
    }
}

/// Per-strategy mean and SD, in [`Strategy::ALL`] order.
pub fn summarize(runs: &[RunRecord]) -> Vec<StrategySummary> {
    Strategy::ALL
        .iter()
        .filter_map(|&s| {
            let acc: Vec<f64> = runs.iter().filter(|r| r.strategy == s).map(|r| r.avg_accuracy).collect();
            if acc.is_empty() {
                return None;
            }
            let cf: Vec<f64> = runs.iter().filter(|r| r.strategy == s).map(|r| r.avg_cf).collect();
            Some(StrategySummary {
                strategy: s,
                runs: acc.len(),
                avg_accuracy_mean: stats::mean(&acc),
                avg_accuracy_sd: stats::sample_sd(&acc),
                avg_cf_mean: stats::mean(&cf),
                avg_cf_sd: stats::sample_sd(&cf),
            })
        })
        .collect()
}

/// One-way ANOVA with Tukey HSD, plus repeated-measures ANOVA treating each
/// subset as a subject.
pub fn compare_strategies(runs: &[RunRecord], metric: Metric) -> Result<Comparison> {
    let strategies: Vec<Strategy> = Strategy::ALL
        .iter()
        .copied()
        .filter(|s| runs.iter().any(|r| r.strategy == *s))
        .collect();
    if strategies.len() < 2 {
        return Err(Error::InvalidInput("comparison needs at least 2 strategies".into()));
    }
    let mut by_subset: BTreeMap<usize, BTreeMap<Strategy, f64>> = BTreeMap::new();
    for r in runs {
        if by_subset.entry(r.subset_id).or_default().insert(r.strategy, metric.of(r)).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate run for subset {} / {}",
                r.subset_id, r.strategy
            )));
        }
    }
    let groups = strategies
        .iter()
        .map(|&s| {
            let values: Vec<f64> = runs.iter().filter(|r| r.strategy == s).map(|r| metric.of(r)).collect();
            GroupSample::new(s.as_str(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    if groups.iter().any(|g| g.values.len() != groups[0].values.len()) {
        return Err(Error::InvalidInput("strategies have unequal run counts".into()));
    }
    let table = by_subset
        .values()
        .map(|cells| {
            strategies
                .iter()
                .map(|s| cells.get(s).copied())
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::InvalidInput("a subset is missing a strategy".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison {
        metric,
        one_way: stats::one_way_anova(&groups)?,
        repeated: stats::rm_anova(&table)?,
        tukey: stats::tukey_hsd(&groups, TUKEY_ALPHA)?,
    })
}

pub fn compare_all(runs: &[RunRecord]) -> Result<Vec<Comparison>> {
    let strategies: BTreeSet<Strategy> = runs.iter().map(|r| r.strategy).collect();
    if strategies.len() < 2 {
        return Ok(Vec::new());
    }
    Metric::ALL.iter().map(|&m| compare_strategies(runs, m)).collect()
}

/// Runs every (subset, strategy) pair on `jobs` threads (0 = all cores).
/// Results are ordered by subset id, then strategy, whatever the scheduling.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> std::result::Result<Experiment, RunFailure> {
    config.validate()?;
    let instances = resolve_corpus(config)?;
    let mut plans = Vec::new();
    let mut paths = Vec::new();
    for (i, instance) in instances.iter().enumerate() {
        let matrix = instance_distances(config, instance)?;
        let planned = plan_orderings(
            &matrix,
            config.subset_size,
            config.subset_count,
            &config.strategies,
            config.seed,
            i * config.subset_count,
            seed::derive(config.seed, &["subsets", &instance.name]),
        )?;
        for (subset, subset_paths) in planned {
            for (path, seed) in subset_paths {
                paths.push(PathRecord {
                    subset_id: subset.subset_id,
                    strategy: path.strategy,
                    order: path.order.clone(),
                    cost: path.cost,
                });
                plans.push(PlannedRun {
                    run_id: run_id(subset.subset_id, path.strategy),
                    subset_id: subset.subset_id,
                    instance: i,
                    seed,
                    path,
                });
            }
        }
    }
    plans.sort_by_key(|p| (p.subset_id, p.path.strategy));
    paths.sort_by_key(|p| (p.subset_id, p.strategy));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<RunOutput>> = pool.install(|| {
        plans
            .par_iter()
            .map(|p| execute_run(p, &instances[p.instance].datasets, config.features, config.train))
            .collect()
    });

    let mut outputs = Vec::with_capacity(outcomes.len());
    let mut first_error = None;
    for (plan, outcome) in plans.iter().zip(outcomes) {
        match outcome {
            Ok(o) => outputs.push(o),
            Err(e) if first_error.is_none() => {
                first_error = Some(Error::Run {
                    run_id: plan.run_id.clone(),
                    source: Box::new(e),
                })
            }
            Err(_) => {}
        }
    }
    if let Some(error) = first_error {
        return Err(RunFailure {
            error,
            completed: outputs,
        });
    }

    let runs: Vec<RunResult> = outputs.iter().map(|o| o.result.clone()).collect();
    let records: Vec<RunRecord> = runs.iter().map(RunRecord::from).collect();
    let comparisons = compare_all(&records)?;
    let provenance = Provenance {
        config_hash: config.hash(),
        master_seed: config.seed,
        run_seeds: plans.iter().map(|p| (p.run_id.clone(), p.seed)).collect(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        model_tag: config.model_tag.clone(),
    };
    Ok(Experiment {
        report: ExperimentReport {
            summary: summarize(&records),
            runs,
            comparisons,
            provenance,
        },
        paths,
        stage_log: outputs.iter().flat_map(|o| o.stage_log.clone()).collect(),
        initial_checksums: outputs.iter().map(|o| o.initial_checksum).collect(),
        instances,
    })
}

// ---------------------------------------------------------------------------
// Report bundle

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StatsRecord {
    Test {
        model_tag: String,
        metric: Metric,
        test: String,
        #[serde(rename = "F")]
        f: f64,
        df1: usize,
        df2: usize,
        p: f64,
    },
    Pair {
        model_tag: String,
        metric: Metric,
        a: String,
        b: String,
        diff: f64,
        ci_low: f64,
        ci_high: f64,
        p_adj: f64,
    },
}

pub fn stats_records(model_tag: &str, comparisons: &[Comparison]) -> Vec<StatsRecord> {
    let mut out = Vec::new();
    for c in comparisons {
        for (test, a) in [("one_way_anova", &c.one_way), ("rm_anova", &c.repeated)] {
            out.push(StatsRecord::Test {
                model_tag: model_tag.into(),
                metric: c.metric,
                test: test.into(),
                f: a.f,
                df1: a.df_between,
                df2: a.df_within,
                p: a.p,
            });
        }
        for t in &c.tukey {
            out.push(StatsRecord::Pair {
                model_tag: model_tag.into(),
                metric: c.metric,
                a: t.a.clone(),
                b: t.b.clone(),
                diff: t.diff,
                ci_low: t.ci_low,
                ci_high: t.ci_high,
                p_adj: t.p_adj,
            });
        }
    }
    out
}

fn strategy_label(s: Strategy) -> &'static str {
    match s {
        Strategy::MinSum => "min-sum path",
        Strategy::MaxSum => "max-sum path",
        Strategy::Random => "random",
    }
}

/// Plain-text table: one row per strategy with mean/SD of each metric, then
/// the ANOVA rows and Tukey comparisons.
pub fn render_summary(model_tag: &str, summary: &[StrategySummary], comparisons: &[Comparison]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Results by ordering strategy (model: {model_tag})");
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<18} {:>22} {:>22}", "", "Average Accuracy", "Average CF");
    let _ = writeln!(s, "{:<18} {:>5} {:>10} {:>10} {:>10} {:>10}", "Ordering Strategy", "n", "Mean", "SD", "Mean", "SD");
    for row in summary {
        let _ = writeln!(
            s,
            "{:<18} {:>5} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            strategy_label(row.strategy),
            row.runs,
            row.avg_accuracy_mean,
            row.avg_accuracy_sd,
            row.avg_cf_mean,
            row.avg_cf_sd
        );
    }
    let find = |m: Metric| comparisons.iter().find(|c| c.metric == m);
    let cell = |a: &AnovaResult| format!("F={:.4}, p={:.4}", a.f, a.p);
    if let (Some(acc), Some(cf)) = (find(Metric::AvgAccuracy), find(Metric::AvgCf)) {
        let _ = writeln!(s);
        for (name, pick) in [
            ("ANOVA (one-way)", (|c: &Comparison| c.one_way.clone()) as fn(&Comparison) -> AnovaResult),
            ("ANOVA (rep. meas.)", |c: &Comparison| c.repeated.clone()),
        ] {
            let (a, c) = (pick(acc), pick(cf));
            let _ = writeln!(
                s,
                "{:<18} {:>27} {:>27}",
                name,
                format!("{} df({},{})", cell(&a), a.df_between, a.df_within),
                format!("{} df({},{})", cell(&c), c.df_between, c.df_within)
            );
        }
        for c in [acc, cf] {
            let _ = writeln!(s);
            let _ = writeln!(s, "Tukey HSD on {} (95% CI for mean(b) - mean(a))", c.metric.as_str());
            for t in &c.tukey {
                let _ = writeln!(
                    s,
                    "  {:<8} vs {:<8} diff={:>8.4}  CI=[{:>8.4}, {:>8.4}]  p_adj={:.4}",
                    t.a, t.b, t.diff, t.ci_low, t.ci_high, t.p_adj
                );
            }
        }
    }
    s
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).expect("record serializes"));
        s.push('\n');
    }
    s
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn paths_csv(paths: &[PathRecord]) -> String {
    let mut s = String::from("subset_id,strategy,order,cost\n");
    for p in paths {
        let _ = writeln!(s, "{},{},{},{}", p.subset_id, p.strategy, p.order.join(">"), p.cost);
    }
    s
}

pub fn write_paths(out: &Path, paths: &[PathRecord]) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_atomic(&out.join("paths.jsonl"), &jsonl(paths))?;
    write_atomic(&out.join("paths.csv"), &paths_csv(paths))
}

/// Writes the full bundle; `runs.jsonl` goes last.
pub fn write_bundle(out: &Path, exp: &Experiment) -> Result<()> {
    let matrix_dir = out.join("matrix");
    fs::create_dir_all(&matrix_dir).map_err(|e| Error::io(&matrix_dir, e))?;
    for run in &exp.report.runs {
        write_atomic(&matrix_dir.join(format!("{}.csv", run.run_id)), &run.matrix.to_csv())?;
    }
    write_paths(out, &exp.paths)?;
    write_atomic(&out.join("stage_log.jsonl"), &jsonl(&exp.stage_log))?;
    let tag = &exp.report.provenance.model_tag;
    write_atomic(&out.join("stats.jsonl"), &jsonl(&stats_records(tag, &exp.report.comparisons)))?;
    write_atomic(
        &out.join("summary.txt"),
        &render_summary(tag, &exp.report.summary, &exp.report.comparisons),
    )?;
    write_atomic(
        &out.join("provenance.json"),
        &serde_json::to_string_pretty(&exp.report.provenance).expect("provenance serializes"),
    )?;
    let records: Vec<RunRecord> = exp.report.runs.iter().map(RunRecord::from).collect();
    write_atomic(&out.join("runs.jsonl"), &jsonl(&records))
}

/// Saves completed runs of a failed experiment under `<out>/partial/`.
pub fn write_partial(out: &Path, failure: &RunFailure) -> Result<()> {
    let dir = out.join("partial");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let records: Vec<RunRecord> = failure.completed.iter().map(|o| RunRecord::from(&o.result)).collect();
    write_atomic(&dir.join("runs.jsonl"), &jsonl(&records))?;
    write_atomic(&dir.join("error.txt"), &format!("{}\n", failure.error))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Ingest {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Recomputes statistics from an existing `runs.jsonl` and writes
/// `stats.jsonl` and `summary.txt` next to it.
pub fn stats_from_bundle(out: &Path, model_tag: &str) -> Result<(Vec<StrategySummary>, Vec<Comparison>)> {
    let runs: Vec<RunRecord> = read_jsonl(&out.join("runs.jsonl"))?;
    let summary = summarize(&runs);
    let comparisons = compare_all(&runs)?;
    write_atomic(&out.join("stats.jsonl"), &jsonl(&stats_records(model_tag, &comparisons)))?;
    write_atomic(&out.join("summary.txt"), &render_summary(model_tag, &summary, &comparisons))?;
    Ok((summary, comparisons))
}
