use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use domorder::corpus::{self, SyntheticSpec};
use domorder::embed::{self, DistanceMatrix, EmbeddingTable, HashedEmbedder};
use domorder::ordering::{self, Strategy};
use domorder::runner::{self, ExperimentConfig, PathRecord};
use domorder::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "domorder", version, about = "Domain-ordering experiments for continual intent classification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Experiment or synthetic-spec TOML file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Restrict to one ordering strategy.
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read SGD dialogues and write a split corpus cache.
    Ingest {
        /// Directory of SGD dialogue JSON files.
        sgd_dir: PathBuf,
        #[arg(long, default_value_t = corpus::DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = corpus::DEFAULT_CAP)]
        cap: usize,
    },
    /// Generate a planted-chain corpus cache from a synthetic spec (`--config`).
    Synth,
    /// Embed the train utterances of a corpus cache with the built-in embedder.
    Embed {
        corpus: PathBuf,
        #[arg(long, default_value_t = 4096)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        embed_seed: u64,
    },
    /// Pairwise domain distances from a corpus cache or an embeddings file.
    Distances {
        /// Corpus cache directory (embedded with the built-in embedder).
        #[arg(long, conflicts_with = "embeddings", required_unless_present = "embeddings")]
        corpus: Option<PathBuf>,
        /// Embeddings interchange file.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = 4096)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        embed_seed: u64,
    },
    /// Order domain subsets drawn from a distance matrix.
    Order {
        distances: PathBuf,
        /// Explicit comma-separated subset; sampled otherwise.
        #[arg(long, value_delimiter = ',')]
        domains: Option<Vec<String>>,
        #[arg(long, default_value_t = 5)]
        subset_size: usize,
        #[arg(long, default_value_t = 22)]
        subset_count: usize,
    },
    /// Run a full experiment from `--config` and write the report bundle.
    Run,
    /// Recompute statistics from a bundle's runs.jsonl.
    Stats {
        bundle: Option<PathBuf>,
        #[arg(long, default_value = "reference-linear")]
        model_tag: String,
    },
    /// Print a bundle's summary table.
    Report { bundle: Option<PathBuf> },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn out_dir(g: &Global, default: &str) -> Result<PathBuf> {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    Ok(dir)
}

fn require_config(g: &Global) -> Result<&Path> {
    g.config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))
}

fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Ingest { sgd_dir, window, cap } => {
            if window == 0 {
                return Err(Error::Config("window must be at least 1".into()));
            }
            let datasets = runner::ingest_sgd(&sgd_dir, window, cap, g.seed.unwrap_or(0))?;
            let out = out_dir(g, "corpus")?;
            corpus::write_cache(&out, &datasets)?;
            for (domain, ds) in &datasets {
                println!("{domain}\t{}\t{}\t{}", ds.train.len(), ds.val.len(), ds.test.len());
            }
        }
        Command::Synth => {
            let path = require_config(g)?;
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let mut spec: SyntheticSpec = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            if let Some(seed) = g.seed {
                spec.seed = seed;
            }
            spec.validate()?;
            let synth = corpus::generate_synthetic(&spec)?;
            let out = out_dir(g, "corpus")?;
            corpus::write_cache(&out, &synth.datasets)?;
            let chain = serde_json::to_string(&synth.planted_chain).expect("chain serializes");
            runner::write_atomic(&out.join("planted_chain.json"), &format!("{chain}\n"))?;
            println!("{}", synth.planted_chain.join(" > "));
        }
        Command::Embed { corpus: dir, dim, embed_seed } => {
            let datasets = corpus::read_cache(&dir)?;
            let table = EmbeddingTable::from_datasets(datasets.values(), &HashedEmbedder::new(dim, embed_seed)?)?;
            let out = out_dir(g, ".")?.join("embeddings.jsonl");
            embed::export_embeddings(&out, &table)?;
            println!("{} vectors -> {}", table.len(), out.display());
        }
        Command::Distances { corpus: dir, embeddings, dim, embed_seed } => {
            let table = match (dir, embeddings) {
                (_, Some(file)) => embed::import_embeddings(&file)?,
                (Some(dir), None) => {
                    let datasets = corpus::read_cache(&dir)?;
                    EmbeddingTable::from_datasets(datasets.values(), &HashedEmbedder::new(dim, embed_seed)?)?
                }
                (None, None) => unreachable!("clap requires one source"),
            };
            let ids: Vec<String> = table.domain_index.keys().cloned().collect();
            let matrix = embed::distance_matrix(&table, &ids)?;
            let out = out_dir(g, ".")?.join("distances.csv");
            matrix.write_csv(&out)?;
            println!("{} domains -> {}", ids.len(), out.display());
        }
        Command::Order { distances, domains, subset_size, subset_count } => {
            let matrix = DistanceMatrix::read_csv(&distances)?;
            let strategies: Vec<Strategy> = match g.strategy {
                Some(s) => vec![s],
                None => Strategy::ALL.to_vec(),
            };
            let master = g.seed.unwrap_or(0);
            let planned = match domains {
                Some(ids) => {
                    let subset = corpus::DomainSubset { subset_id: 0, domain_ids: ids };
                    let graph = ordering::build_graph(&matrix, &subset)?;
                    let paths = strategies
                        .iter()
                        .map(|&s| {
                            let seed = runner::run_seed(master, 0, s);
                            Ok((ordering::path_for(&graph, s, seed)?, seed))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    vec![(subset, paths)]
                }
                None => runner::plan_orderings(
                    &matrix,
                    subset_size,
                    subset_count,
                    &strategies,
                    master,
                    0,
                    domorder::seed::derive(master, &["subsets", "cli"]),
                )?,
            };
            let records: Vec<PathRecord> = planned
                .into_iter()
                .flat_map(|(subset, paths)| {
                    paths.into_iter().map(move |(p, _)| PathRecord {
                        subset_id: subset.subset_id,
                        strategy: p.strategy,
                        order: p.order,
                        cost: p.cost,
                    })
                })
                .collect();
            runner::write_paths(&out_dir(g, ".")?, &records)?;
            print!("{}", runner::paths_csv(&records));
        }
        Command::Run => {
            let mut config = ExperimentConfig::load(require_config(g)?)?;
            if let Some(seed) = g.seed {
                config.seed = seed;
            }
            if let Some(s) = g.strategy {
                config.strategies = vec![s];
            }
            if let Some(out) = &g.out {
                config.out = Some(out.clone());
            }
            let out = config.out.clone().unwrap_or_else(|| PathBuf::from("report"));
            fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            match runner::run_experiment(&config, g.jobs) {
                Ok(exp) => {
                    runner::write_bundle(&out, &exp)?;
                    print!(
                        "{}",
                        runner::render_summary(&config.model_tag, &exp.report.summary, &exp.report.comparisons)
                    );
                }
                Err(failure) => {
                    if let Err(e) = runner::write_partial(&out, &failure) {
                        log::error!("could not save partial results: {e}");
                    }
                    return Err(failure.error);
                }
            }
        }
        Command::Stats { bundle, model_tag } => {
            let dir = bundle.or_else(|| g.out.clone()).unwrap_or_else(|| PathBuf::from("report"));
            let (summary, comparisons) = runner::stats_from_bundle(&dir, &model_tag)?;
            print!("{}", runner::render_summary(&model_tag, &summary, &comparisons));
        }
        Command::Report { bundle } => {
            let dir = bundle.or_else(|| g.out.clone()).unwrap_or_else(|| PathBuf::from("report"));
            let path = dir.join("summary.txt");
            let text = fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
            print!("{text}");
        }
    }
    Ok(())
}
