//! Command line driver for the multi-view probabilistic clustering pipeline.
//!
//! `mvpc pipeline` runs everything from a JSON config; the stage subcommands
//! (`synth`, `train-probfn`, `fuse`, `refine`, `cluster`, `eval`) operate on
//! the serialized artifacts so each step can be rerun or swapped in
//! isolation.
//!
//! Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric divergence.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvpc::cluster::{cluster, objective, ClusterConfig, Partition};
use mvpc::dataset::{apply_missing_protocol, save_dataset, synth_gaussian};
use mvpc::fusion::{fuse, fuse_completed, Aggregation, PairList, ProbGraph};
use mvpc::metrics::{evaluate, NmiNormalization};
use mvpc::pipeline::{
    derive_seed, read_knn_union_csv, run_pipeline, write_knn_union_csv, DatasetSource,
    PipelineConfig,
};
use mvpc::probfn::{build_pair_table, train, TrainedModel};
use mvpc::refine::refine;
use mvpc::similarity::{build_knn, compute_similarity, knn_union, Metric};
use mvpc::{Error, Result};

#[derive(Parser)]
#[command(name = "mvpc", version, about = "Multi-view probabilistic clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PipelineOverrides {
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Aggregation override: formula|mean|max|min|multiply.
    #[arg(long)]
    aggregation: Option<String>,
    /// Similarity metric override: cosine|l1|l2|l3.
    #[arg(long)]
    metric: Option<String>,
    /// View completion override.
    #[arg(long, value_parser = parse_on_off)]
    completion: Option<bool>,
    /// Refinement pass count override.
    #[arg(long)]
    refine_passes: Option<usize>,
    /// Neighbor count override for similarity KNN.
    #[arg(long)]
    knn_k: Option<usize>,
}

fn parse_on_off(s: &str) -> std::result::Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(format!("expected on|off, got {other:?}")),
    }
}

impl PipelineOverrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(agg) = &self.aggregation {
            cfg.fusion.aggregation = agg.clone();
        }
        if let Some(metric) = &self.metric {
            cfg.similarity.metric = metric.clone();
        }
        if let Some(completion) = self.completion {
            cfg.fusion.completion = completion;
        }
        if let Some(passes) = self.refine_passes {
            cfg.refine.passes = passes;
        }
        if let Some(k) = self.knn_k {
            cfg.similarity.knn_k = k;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a JSON config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Artifact directory; omit to run in memory and print metrics only.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: PipelineOverrides,
    },
    /// Generate the configured dataset and write its CSVs and manifest.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train probability functions; writes model.json, pairs.csv,
    /// knn_union.csv and loss.csv.
    TrainProbfn {
        /// Dataset: manifest JSON or a directory of per-view CSVs.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: PipelineOverrides,
    },
    /// Fuse per-view probabilities into a pairwise probability graph.
    Fuse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "formula")]
        aggregation: String,
        #[arg(long, value_parser = parse_on_off, default_value = "off")]
        completion: bool,
        /// Output graph CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine a probability graph over the similarity KNN union.
    Refine {
        #[arg(long)]
        graph: PathBuf,
        /// knn_union.csv from the training stage.
        #[arg(long)]
        knn: PathBuf,
        #[arg(long, default_value_t = 1)]
        passes: usize,
        #[arg(long, default_value_t = 20)]
        knn_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster a probability graph; prints cluster count and objective.
    Cluster {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 20)]
        knn_k: usize,
        #[arg(long, default_value_t = 20)]
        maxiter: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restrict candidates to neighbor labels only.
        #[arg(long)]
        no_singleton_escape: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate predicted labels against ground truth; prints metrics JSON.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "sqrt")]
        nmi: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn read_graph(path: &Path) -> Result<(ProbGraph, String)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ProbGraph::read_csv(&mut BufReader::new(file))
}

fn write_graph(path: &Path, graph: &ProbGraph, aggregation: &str) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    graph
        .write_csv(aggregation, &mut file)
        .map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pipeline {
            config,
            out,
            overrides,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            overrides.apply(&mut cfg);
            let outcome = run_pipeline(&cfg, out.as_deref())?;
            println!(
                "clusters: {}  objective: {:.6}",
                outcome.partition.n_clusters(),
                outcome.manifest.objective
            );
            if let Some(report) = &outcome.metrics {
                println!("{}", report.to_json()?);
            }
            Ok(())
        }
        Command::Synth { config, out, seed } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let ds = match &cfg.dataset {
                DatasetSource::Synth(synth) => synth_gaussian(synth)?,
                _ => {
                    return Err(Error::InvalidInput(
                        "synth needs a config with a synthetic dataset source".into(),
                    ))
                }
            };
            let ds = match &cfg.missing {
                Some(missing) => apply_missing_protocol(
                    &ds,
                    missing.paired_fraction,
                    derive_seed(cfg.seed, "missing"),
                )?,
                None => ds,
            };
            let manifest = save_dataset(&ds, &out)?;
            println!("wrote {}", manifest.display());
            Ok(())
        }
        Command::TrainProbfn {
            data,
            config,
            out,
            overrides,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            overrides.apply(&mut cfg);
            let ds = match data {
                Some(path) => mvpc::pipeline::load_dataset_auto(&path)?,
                None => match &cfg.dataset {
                    DatasetSource::Synth(synth) => {
                        let ds = synth_gaussian(synth)?;
                        match &cfg.missing {
                            Some(missing) => apply_missing_protocol(
                                &ds,
                                missing.paired_fraction,
                                derive_seed(cfg.seed, "missing"),
                            )?,
                            None => ds,
                        }
                    }
                    DatasetSource::Manifest(path) => mvpc::pipeline::load_dataset_auto(path)?,
                    DatasetSource::CsvDir(path) => mvpc::pipeline::load_dataset_auto(path)?,
                },
            };
            let metric: Metric = cfg.similarity.metric.parse()?;
            let mut sims = Vec::new();
            let mut knns = Vec::new();
            for m in 0..ds.n_views() {
                let sim = compute_similarity(&ds, m, metric)?;
                knns.push(build_knn(&sim, cfg.similarity.knn_k)?);
                sims.push(sim);
            }
            let train_cfg = cfg.train.resolve(derive_seed(cfg.seed, "train"))?;
            let table = build_pair_table(&knns, &sims, train_cfg.segments)?;
            let model = train(&table, &train_cfg)?;

            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            fs::write(out.join("model.json"), model.to_json()?)
                .map_err(|e| Error::io(out.join("model.json"), e))?;
            let path = out.join("pairs.csv");
            let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            PairList::from_table(&table)
                .write_csv(&mut file)
                .map_err(|e| Error::io(&path, e))?;
            let path = out.join("knn_union.csv");
            let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_knn_union_csv(&knn_union(&knns), &mut file).map_err(|e| Error::io(&path, e))?;
            let path = out.join("loss.csv");
            let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            model
                .write_loss_csv(&mut file)
                .map_err(|e| Error::io(&path, e))?;
            let last = model.log.last().expect("at least one epoch");
            println!(
                "trained {} views, {} epochs, final loss {:.6e}",
                model.functions.len(),
                model.log.len(),
                last.total
            );
            Ok(())
        }
        Command::Fuse {
            model,
            pairs,
            aggregation,
            completion,
            out,
        } => {
            let text = fs::read_to_string(&model).map_err(|e| Error::io(&model, e))?;
            let model = TrainedModel::from_json(&text)?;
            let file = fs::File::open(&pairs).map_err(|e| Error::io(&pairs, e))?;
            let list = PairList::read_csv(&mut BufReader::new(file))?;
            let agg: Aggregation = aggregation.parse()?;
            let graph = if completion {
                fuse_completed(&list, &model, agg)
            } else {
                fuse(&list, &model.functions, agg)
            }?;
            write_graph(&out, &graph, &aggregation)?;
            println!("fused {} edges", graph.n_edges());
            Ok(())
        }
        Command::Refine {
            graph,
            knn,
            passes,
            knn_k,
            out,
        } => {
            let (g, aggregation) = read_graph(&graph)?;
            let file = fs::File::open(&knn).map_err(|e| Error::io(&knn, e))?;
            let unions = read_knn_union_csv(&mut BufReader::new(file))?;
            let refined = refine(&g, &unions, knn_k, passes)?;
            write_graph(&out, &refined, &aggregation)?;
            println!("refined {} edges over {} passes", refined.n_edges(), passes);
            Ok(())
        }
        Command::Cluster {
            graph,
            knn_k,
            maxiter,
            seed,
            no_singleton_escape,
            out,
        } => {
            let (g, _) = read_graph(&graph)?;
            let cfg = ClusterConfig {
                k: knn_k,
                max_iter: maxiter,
                seed,
                singleton_escape: !no_singleton_escape,
                ..Default::default()
            };
            let partition = cluster(&g, &cfg)?;
            let mut file = fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
            partition
                .write_csv(&mut file)
                .map_err(|e| Error::io(&out, e))?;
            println!(
                "clusters: {}  objective: {:.6}",
                partition.n_clusters(),
                objective(&g, &partition)
            );
            Ok(())
        }
        Command::Eval {
            pred,
            truth,
            nmi,
            out,
        } => {
            let read = |path: &Path| -> Result<Partition> {
                let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
                Partition::read_csv(&mut BufReader::new(file))
            };
            let pred = read(&pred)?;
            let truth = read(&truth)?;
            let norm: NmiNormalization = nmi.parse()?;
            let report = evaluate(pred.labels(), truth.labels(), norm)?;
            let json = report.to_json()?;
            if let Some(path) = out {
                fs::write(&path, &json).map_err(|e| Error::io(&path, e))?;
            }
            println!("{json}");
            Ok(())
        }
    }
}
