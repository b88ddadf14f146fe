//! End-to-end orchestration: dataset -> similarity -> probability-function
//! training -> fusion -> refinement -> clustering -> metrics, with all stage
//! artifacts written to disk and a run manifest recording configuration,
//! seeds and wall times. Every random choice derives from one root seed.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::{cluster, objective, ClusterConfig, Partition};
use crate::dataset::{
    apply_missing_protocol, load_dataset, save_dataset, synth_gaussian, DatasetFormat,
    MultiViewDataset, SynthConfig,
};
use crate::fusion::{fuse, fuse_completed, Aggregation, PairList, ProbGraph};
use crate::metrics::{evaluate, MetricReport, NmiNormalization};
use crate::probfn::{
    build_pair_table, train, train_profile, ConsistencyLoss, PairTable, TrainConfig, TrainedModel,
};
use crate::refine::refine;
use crate::similarity::{build_knn, compute_similarity, knn_union, KnnLists, Metric};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generate the synthetic Gaussian fixture.
    Synth(SynthConfig),
    /// JSON manifest naming view/mask/label CSVs.
    Manifest(PathBuf),
    /// Directory of per-view CSVs, fully observed.
    CsvDir(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingSection {
    /// Fraction of samples keeping all views: ceil(c*N) stay paired and one
    /// view is removed from half of the rest each.
    pub paired_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilaritySection {
    #[serde(default = "default_metric")]
    pub metric: String,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    /// Also dump per-view similarity triples when an output dir is set.
    #[serde(default)]
    pub dump: bool,
}

fn default_metric() -> String {
    "cosine".into()
}
fn default_knn_k() -> usize {
    20
}

impl Default for SimilaritySection {
    fn default() -> Self {
        Self {
            metric: default_metric(),
            knn_k: default_knn_k(),
            dump: false,
        }
    }
}

/// Trainer settings: a named profile plus field-level overrides.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainSection {
    #[serde(default)]
    pub profile: Option<String>,
    #[serde(default)]
    pub segments: Option<usize>,
    #[serde(default, alias = "indi")]
    pub pin_low: Option<usize>,
    #[serde(default, alias = "indj_plus_1")]
    pub pin_high: Option<usize>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub momentum: Option<f64>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub consistency: Option<ConsistencyLoss>,
    #[serde(default)]
    pub constraint_enabled: Option<bool>,
    #[serde(default)]
    pub early_stop_window: Option<usize>,
}

impl TrainSection {
    pub fn resolve(&self, seed: u64) -> Result<TrainConfig> {
        let mut cfg = match &self.profile {
            Some(name) => train_profile(name).ok_or_else(|| {
                Error::InvalidInput(format!("unknown train profile {name:?}"))
            })?,
            None => train_profile("synth").expect("builtin profile"),
        };
        if let Some(v) = self.segments {
            cfg.segments = v;
        }
        if let Some(v) = self.pin_low {
            cfg.pin_low = v;
        }
        if let Some(v) = self.pin_high {
            cfg.pin_high = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.consistency {
            cfg.consistency = v;
        }
        if let Some(v) = self.constraint_enabled {
            cfg.constraint_enabled = v;
        }
        if let Some(v) = self.early_stop_window {
            cfg.early_stop_window = v;
        }
        cfg.seed = seed;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionSection {
    #[serde(default = "default_aggregation")]
    pub aggregation: String,
    #[serde(default)]
    pub completion: bool,
}

fn default_aggregation() -> String {
    "formula".into()
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            aggregation: default_aggregation(),
            completion: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineSection {
    #[serde(default = "default_passes")]
    pub passes: usize,
    /// Co-neighbor propagation k; defaults to the similarity stage's knn_k.
    #[serde(default)]
    pub k: Option<usize>,
}

fn default_passes() -> usize {
    1
}

impl Default for RefineSection {
    fn default() -> Self {
        Self {
            passes: default_passes(),
            k: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSection {
    /// Neighbor-list size; defaults to the similarity stage's knn_k.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "crate::pipeline::default_true")]
    pub singleton_escape: bool,
    #[serde(default = "crate::pipeline::default_true")]
    pub merge_pass: bool,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_max_iter() -> usize {
    20
}

fn default_restarts() -> usize {
    8
}

pub(crate) fn default_true() -> bool {
    true
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self {
            k: None,
            max_iter: default_max_iter(),
            singleton_escape: true,
            merge_pass: true,
            restarts: default_restarts(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsSection {
    #[serde(default)]
    pub nmi: NmiNormalization,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub missing: Option<MissingSection>,
    #[serde(default)]
    pub similarity: SimilaritySection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub refine: RefineSection,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidInput(format!("config serialization: {e}")))
    }
}

/// Derive a stage seed from the root seed (FNV-1a over the stage name).
pub fn derive_seed(root: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in root.to_le_bytes().iter().chain(stage.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn fnv_hex(text: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskStats {
    pub n_samples: usize,
    pub observed_per_view: Vec<usize>,
    /// Samples observed in every view.
    pub fully_observed: usize,
    /// 1 - fully_observed / n_samples.
    pub missing_rate: f64,
}

impl MaskStats {
    pub fn of(ds: &MultiViewDataset) -> Self {
        let n = ds.n_samples();
        let fully = (0..n)
            .filter(|&s| (0..ds.n_views()).all(|m| ds.is_observed(m, s)))
            .count();
        Self {
            n_samples: n,
            observed_per_view: ds.observed_counts(),
            fully_observed: fully,
            missing_rate: 1.0 - fully as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub mask_stats: MaskStats,
    pub n_pairs: usize,
    pub n_edges: usize,
    pub n_clusters: usize,
    pub objective: f64,
    pub stage_seconds: Vec<(String, f64)>,
}

/// Everything the pipeline produced, for library callers.
pub struct PipelineOutcome {
    pub dataset: MultiViewDataset,
    pub table: PairTable,
    pub model: TrainedModel,
    pub fused: ProbGraph,
    pub refined: ProbGraph,
    pub partition: Partition,
    pub metrics: Option<MetricReport>,
    pub manifest: RunManifest,
}

struct StageClock {
    times: Vec<(String, f64)>,
    current: Instant,
}

impl StageClock {
    fn new() -> Self {
        Self {
            times: Vec::new(),
            current: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        self.times
            .push((stage.to_string(), self.current.elapsed().as_secs_f64()));
        self.current = Instant::now();
    }
}

/// Run the whole pipeline; when `out_dir` is set, write every stage artifact
/// beneath it.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: Option<&Path>) -> Result<PipelineOutcome> {
    let mut clock = StageClock::new();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    // Dataset.
    let mut ds = match &cfg.dataset {
        DatasetSource::Synth(synth) => synth_gaussian(synth),
        DatasetSource::Manifest(path) => load_dataset(path, DatasetFormat::JsonManifest),
        DatasetSource::CsvDir(path) => load_dataset(path, DatasetFormat::CsvPerView),
    }
    .map_err(|e| e.in_stage("dataset"))?;
    if let Some(missing) = &cfg.missing {
        ds = apply_missing_protocol(&ds, missing.paired_fraction, derive_seed(cfg.seed, "missing"))
            .map_err(|e| e.in_stage("dataset"))?;
    }
    if let Some(dir) = out_dir {
        save_dataset(&ds, &dir.join("dataset")).map_err(|e| e.in_stage("dataset"))?;
    }
    clock.lap("dataset");

    // Similarity and neighbor lists.
    let metric: Metric = cfg.similarity.metric.parse().map_err(|e: Error| e.in_stage("similarity"))?;
    let mut sims = Vec::with_capacity(ds.n_views());
    let mut knns: Vec<KnnLists> = Vec::with_capacity(ds.n_views());
    for m in 0..ds.n_views() {
        let sim = compute_similarity(&ds, m, metric).map_err(|e| e.in_stage("similarity"))?;
        knns.push(build_knn(&sim, cfg.similarity.knn_k).map_err(|e| e.in_stage("similarity"))?);
        sims.push(sim);
    }
    if cfg.similarity.dump {
        if let Some(dir) = out_dir {
            for sim in &sims {
                let path = dir.join(format!("similarity_view{}.csv", sim.view()));
                let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                crate::similarity::dump_similarity_csv(sim, &mut file)
                    .map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    let unions = knn_union(&knns);
    clock.lap("similarity");

    // Pair table and probability-function training.
    let train_cfg = cfg
        .train
        .resolve(derive_seed(cfg.seed, "train"))
        .map_err(|e| e.in_stage("train"))?;
    let table = build_pair_table(&knns, &sims, train_cfg.segments)
        .map_err(|e| e.in_stage("pair-table"))?;
    clock.lap("pair-table");
    let model = train(&table, &train_cfg).map_err(|e| e.in_stage("train"))?;
    if let Some(dir) = out_dir {
        write_text(&dir.join("model.json"), &model.to_json()?)?;
        let path = dir.join("loss.csv");
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        model
            .write_loss_csv(&mut file)
            .map_err(|e| Error::io(&path, e))?;
        let path = dir.join("pairs.csv");
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        PairList::from_table(&table)
            .write_csv(&mut file)
            .map_err(|e| Error::io(&path, e))?;
        let path = dir.join("knn_union.csv");
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_knn_union_csv(&unions, &mut file).map_err(|e| Error::io(&path, e))?;
    }
    clock.lap("train");

    // Fusion.
    let aggregation: Aggregation = cfg
        .fusion
        .aggregation
        .parse()
        .map_err(|e: Error| e.in_stage("fuse"))?;
    let pair_list = PairList::from_table(&table);
    let fused = if cfg.fusion.completion {
        fuse_completed(&pair_list, &model, aggregation)
    } else {
        fuse(&pair_list, &model.functions, aggregation)
    }
    .map_err(|e| e.in_stage("fuse"))?;
    if let Some(dir) = out_dir {
        write_graph(&dir.join("graph_fused.csv"), &fused, &cfg.fusion.aggregation)?;
    }
    clock.lap("fuse");

    // Refinement.
    let co_k = cfg.refine.k.unwrap_or(cfg.similarity.knn_k);
    let refined =
        refine(&fused, &unions, co_k, cfg.refine.passes).map_err(|e| e.in_stage("refine"))?;
    if let Some(dir) = out_dir {
        write_graph(
            &dir.join("graph_refined.csv"),
            &refined,
            &cfg.fusion.aggregation,
        )?;
    }
    clock.lap("refine");

    // Clustering.
    let cluster_cfg = ClusterConfig {
        k: cfg.cluster.k.unwrap_or(cfg.similarity.knn_k),
        max_iter: cfg.cluster.max_iter,
        seed: derive_seed(cfg.seed, "cluster"),
        singleton_escape: cfg.cluster.singleton_escape,
        merge_pass: cfg.cluster.merge_pass,
        restarts: cfg.cluster.restarts,
    };
    let partition = cluster(&refined, &cluster_cfg).map_err(|e| e.in_stage("cluster"))?;
    if let Some(dir) = out_dir {
        let path = dir.join("labels.csv");
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        partition.write_csv(&mut file).map_err(|e| Error::io(&path, e))?;
    }
    clock.lap("cluster");

    // Metrics.
    let metrics = match ds.labels() {
        Some(truth) => Some(
            evaluate(partition.labels(), truth, cfg.metrics.nmi)
                .map_err(|e| e.in_stage("metrics"))?,
        ),
        None => None,
    };
    if let (Some(dir), Some(report)) = (out_dir, &metrics) {
        write_text(&dir.join("metrics.json"), &report.to_json()?)?;
    }
    clock.lap("metrics");

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_hash: fnv_hex(&cfg.to_json()?),
        mask_stats: MaskStats::of(&ds),
        n_pairs: table.n_pairs(),
        n_edges: refined.n_edges(),
        n_clusters: partition.n_clusters(),
        objective: objective(&refined, &partition),
        stage_seconds: clock.times,
    };
    if let Some(dir) = out_dir {
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::InvalidInput(format!("manifest serialization: {e}")))?;
        write_text(&dir.join("manifest.json"), &text)?;
    }

    Ok(PipelineOutcome {
        dataset: ds,
        table,
        model,
        fused,
        refined,
        partition,
        metrics,
        manifest,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_graph(path: &Path, graph: &ProbGraph, aggregation: &str) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    graph
        .write_csv(aggregation, &mut file)
        .map_err(|e| Error::io(path, e))
}

/// One row per sample: `sample,neighbor,neighbor,...`.
pub fn write_knn_union_csv(unions: &[Vec<usize>], out: &mut dyn Write) -> std::io::Result<()> {
    for (s, list) in unions.iter().enumerate() {
        let mut line = s.to_string();
        for n in list {
            line.push(',');
            line.push_str(&n.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_knn_union_csv(reader: &mut dyn BufRead) -> Result<Vec<Vec<usize>>> {
    let mut rows: Vec<(usize, Vec<usize>)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::InvalidInput(format!("knn csv: {e}")))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut cells = trimmed.split(',');
        let parse = |c: &str| {
            c.trim()
                .parse::<usize>()
                .map_err(|e| Error::InvalidInput(format!("knn csv line {}: {e}", idx + 1)))
        };
        let sample = parse(cells.next().expect("split yields at least one cell"))?;
        let mut neighbors = Vec::new();
        for c in cells {
            if !c.trim().is_empty() {
                neighbors.push(parse(c)?);
            }
        }
        rows.push((sample, neighbors));
    }
    rows.sort_by_key(|&(s, _)| s);
    for (pos, &(s, _)) in rows.iter().enumerate() {
        if pos != s {
            return Err(Error::InvalidInput(format!(
                "knn csv: sample indices not contiguous at {s}"
            )));
        }
    }
    Ok(rows.into_iter().map(|(_, l)| l).collect())
}

/// Load a dataset from either source kind used by the CLI stages.
pub fn load_dataset_auto(path: &Path) -> Result<MultiViewDataset> {
    if path.is_dir() {
        load_dataset(path, DatasetFormat::CsvPerView)
    } else {
        load_dataset(path, DatasetFormat::JsonManifest)
    }
}
