//! Multi-view data model: per-view feature matrices, per-sample observation
//! masks, file ingestion, the paired-fraction missing protocol and a synthetic
//! Gaussian fixture generator.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense real matrix, one column per sample (column-major storage).
///
/// Columns of unobserved samples hold zeros and must only be touched through
/// a mask check; [`MultiViewDataset::column`] debug-asserts that.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    n_samples: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, n_samples: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("feature dimension is zero".into()));
        }
        if data.len() != dim * n_samples {
            return Err(Error::Shape(format!(
                "feature matrix buffer holds {} values, expected {} ({} x {})",
                data.len(),
                dim * n_samples,
                dim,
                n_samples
            )));
        }
        Ok(Self {
            dim,
            n_samples,
            data,
        })
    }

    pub fn zeros(dim: usize, n_samples: usize) -> Self {
        Self {
            dim,
            n_samples,
            data: vec![0.0; dim * n_samples],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn column(&self, sample: usize) -> &[f64] {
        &self.data[sample * self.dim..(sample + 1) * self.dim]
    }

    pub fn column_mut(&mut self, sample: usize) -> &mut [f64] {
        &mut self.data[sample * self.dim..(sample + 1) * self.dim]
    }
}

/// Multi-view dataset: per-view features plus a view-by-sample observation
/// mask and optional ground-truth labels (evaluation only).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    views: Vec<FeatureMatrix>,
    /// `mask[m][s]` is true when sample `s` is observed in view `m`.
    mask: Vec<Vec<bool>>,
    labels: Option<Vec<usize>>,
}

impl MultiViewDataset {
    pub fn new(
        views: Vec<FeatureMatrix>,
        mask: Vec<Vec<bool>>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InvalidInput("dataset needs at least one view".into()));
        }
        let n = views[0].n_samples();
        for (m, v) in views.iter().enumerate() {
            if v.n_samples() != n {
                return Err(Error::Shape(format!(
                    "view {} has {} samples, view 0 has {}",
                    m,
                    v.n_samples(),
                    n
                )));
            }
        }
        if mask.len() != views.len() {
            return Err(Error::Shape(format!(
                "mask has {} rows for {} views",
                mask.len(),
                views.len()
            )));
        }
        for (m, row) in mask.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape(format!(
                    "mask row {} has {} entries for {} samples",
                    m,
                    row.len(),
                    n
                )));
            }
        }
        for s in 0..n {
            if !mask.iter().any(|row| row[s]) {
                return Err(Error::InvalidInput(format!(
                    "sample {} is observed in no view",
                    s
                )));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Shape(format!(
                    "{} labels for {} samples",
                    l.len(),
                    n
                )));
            }
        }
        for (m, v) in views.iter().enumerate() {
            for s in 0..n {
                if mask[m][s] && v.column(s).iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "non-finite feature value in view {} sample {}",
                        m, s
                    )));
                }
            }
        }
        Ok(Self {
            views,
            mask,
            labels,
        })
    }

    /// Fully observed dataset (all-true mask).
    pub fn fully_observed(views: Vec<FeatureMatrix>, labels: Option<Vec<usize>>) -> Result<Self> {
        let n = views.first().map(|v| v.n_samples()).unwrap_or(0);
        let mask = vec![vec![true; n]; views.len()];
        Self::new(views, mask, labels)
    }

    pub fn n_samples(&self) -> usize {
        self.views[0].n_samples()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn view(&self, m: usize) -> &FeatureMatrix {
        &self.views[m]
    }

    pub fn mask(&self) -> &[Vec<bool>] {
        &self.mask
    }

    pub fn is_observed(&self, view: usize, sample: usize) -> bool {
        self.mask[view][sample]
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|row| row.iter().all(|&b| b))
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Feature column of an observed sample. Reading an unobserved column is
    /// a programming error.
    pub fn column(&self, view: usize, sample: usize) -> &[f64] {
        debug_assert!(
            self.mask[view][sample],
            "read of unobserved column: view {view}, sample {sample}"
        );
        self.views[view].column(sample)
    }

    pub fn observed_samples(&self, view: usize) -> impl Iterator<Item = usize> + '_ {
        self.mask[view]
            .iter()
            .enumerate()
            .filter_map(|(s, &obs)| obs.then_some(s))
    }

    /// Observed-sample count per view.
    pub fn observed_counts(&self) -> Vec<usize> {
        self.mask
            .iter()
            .map(|row| row.iter().filter(|&&b| b).count())
            .collect()
    }
}

/// On-disk description of a dataset: per-view CSV paths plus optional mask
/// and label CSVs, all relative to the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub views: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// Directory of `*.csv` view files (sorted by name), all samples observed.
    CsvPerView,
    /// JSON manifest naming view/mask/label CSVs.
    JsonManifest,
}

/// Read a numeric CSV: one row per feature, one column per sample, no header.
fn read_csv_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row = trimmed
            .split(',')
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(path, idx + 1, format!("bad number {cell:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    format!("row has {} columns, first row has {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 0, "empty CSV"));
    }
    Ok(rows)
}

fn write_csv_matrix(path: &Path, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for row in rows {
        writeln!(file, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn feature_matrix_from_rows(rows: Vec<Vec<f64>>) -> Result<FeatureMatrix> {
    let dim = rows.len();
    let n = rows[0].len();
    let mut data = vec![0.0; dim * n];
    for (d, row) in rows.iter().enumerate() {
        for (s, &x) in row.iter().enumerate() {
            data[s * dim + d] = x;
        }
    }
    FeatureMatrix::new(dim, n, data)
}

/// Load a dataset from disk.
///
/// `CsvPerView` treats `path` as a directory and ingests every `*.csv` file
/// in name order as a fully observed view. `JsonManifest` reads a
/// [`Manifest`] and resolves its paths relative to the manifest file.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<MultiViewDataset> {
    match format {
        DatasetFormat::CsvPerView => {
            let mut files: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().map(|e| e == "csv").unwrap_or(false))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "no .csv view files under {}",
                    path.display()
                )));
            }
            let views = files
                .iter()
                .map(|p| read_csv_matrix(p).and_then(feature_matrix_from_rows))
                .collect::<Result<Vec<_>>>()?;
            MultiViewDataset::fully_observed(views, None)
        }
        DatasetFormat::JsonManifest => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let manifest: Manifest = serde_json::from_str(&text)
                .map_err(|e| Error::parse(path, 0, format!("manifest: {e}")))?;
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            let views = manifest
                .views
                .iter()
                .map(|p| read_csv_matrix(&base.join(p)).and_then(feature_matrix_from_rows))
                .collect::<Result<Vec<_>>>()?;
            let n = views.first().map(|v| v.n_samples()).unwrap_or(0);
            let mask = match &manifest.mask {
                Some(p) => {
                    let rows = read_csv_matrix(&base.join(p))?;
                    rows.into_iter()
                        .map(|row| row.into_iter().map(|x| x != 0.0).collect())
                        .collect()
                }
                None => vec![vec![true; n]; views.len()],
            };
            let labels = match &manifest.labels {
                Some(p) => {
                    let rows = read_csv_matrix(&base.join(p))?;
                    let flat: Vec<f64> = rows.into_iter().flatten().collect();
                    Some(
                        flat.into_iter()
                            .map(|x| {
                                if x < 0.0 || x.fract() != 0.0 {
                                    Err(Error::InvalidInput(format!(
                                        "label {x} is not a nonnegative integer"
                                    )))
                                } else {
                                    Ok(x as usize)
                                }
                            })
                            .collect::<Result<Vec<usize>>>()?,
                    )
                }
                None => None,
            };
            MultiViewDataset::new(views, mask, labels)
        }
    }
}

/// Write a dataset as `view_{m}.csv`, `mask.csv`, `labels.csv` and
/// `manifest.json` under `dir`; returns the manifest path.
pub fn save_dataset(ds: &MultiViewDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest {
        views: Vec::new(),
        mask: None,
        labels: None,
    };
    for m in 0..ds.n_views() {
        let name = format!("view_{m}.csv");
        let view = ds.view(m);
        write_csv_matrix(
            &dir.join(&name),
            (0..view.dim()).map(|d| {
                (0..view.n_samples())
                    .map(|s| format!("{}", view.column(s)[d]))
                    .collect()
            }),
        )?;
        manifest.views.push(PathBuf::from(name));
    }
    if !ds.is_fully_observed() {
        write_csv_matrix(
            &dir.join("mask.csv"),
            ds.mask().iter().map(|row| {
                row.iter()
                    .map(|&b| if b { "1".to_string() } else { "0".to_string() })
                    .collect()
            }),
        )?;
        manifest.mask = Some(PathBuf::from("mask.csv"));
    }
    if let Some(labels) = ds.labels() {
        write_csv_matrix(
            &dir.join("labels.csv"),
            std::iter::once(labels.iter().map(|l| l.to_string()).collect()),
        )?;
        manifest.labels = Some(PathBuf::from("labels.csv"));
    }
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidInput(format!("manifest serialization: {e}")))?;
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Two-view missing protocol: keep `ceil(c * N)` randomly chosen samples in
/// both views; of the rest, half lose view 0 and half lose view 1 (an odd
/// remainder sends the extra sample to the lose-view-1 group). Feature
/// columns of removed views are zeroed behind the mask.
pub fn apply_missing_protocol(
    ds: &MultiViewDataset,
    paired_fraction: f64,
    seed: u64,
) -> Result<MultiViewDataset> {
    if ds.n_views() != 2 {
        return Err(Error::InvalidInput(format!(
            "missing protocol is defined for 2 views, dataset has {}",
            ds.n_views()
        )));
    }
    if !ds.is_fully_observed() {
        return Err(Error::InvalidInput(
            "missing protocol expects a fully observed dataset".into(),
        ));
    }
    if !(paired_fraction > 0.0 && paired_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "paired fraction {paired_fraction} outside (0, 1]"
        )));
    }
    let n = ds.n_samples();
    let n_paired = (paired_fraction * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut mask = vec![vec![true; n]; 2];
    let unpaired = &order[n_paired.min(n)..];
    let lose_first = unpaired.len() / 2;
    for (rank, &s) in unpaired.iter().enumerate() {
        if rank < lose_first {
            mask[0][s] = false;
        } else {
            mask[1][s] = false;
        }
    }

    let mut views = ds.views.clone();
    for (m, view) in views.iter_mut().enumerate() {
        for s in 0..n {
            if !mask[m][s] {
                view.column_mut(s).fill(0.0);
            }
        }
    }
    MultiViewDataset::new(views, mask, ds.labels.clone())
}

/// Synthetic multi-view Gaussian fixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_clusters: usize,
    pub per_cluster: usize,
    /// Feature dimension of each view.
    pub dims: Vec<usize>,
    /// Cluster centers are drawn on a sphere of this radius, per view.
    pub separation: f64,
    /// Isotropic Gaussian noise scale around each center.
    pub noise: f64,
    pub seed: u64,
}

/// Generate a labelled multi-view Gaussian mixture: per view, `n_clusters`
/// centers on a sphere of radius `separation`, samples at center plus
/// N(0, noise^2) per coordinate.
pub fn synth_gaussian(cfg: &SynthConfig) -> Result<MultiViewDataset> {
    if cfg.n_clusters == 0 || cfg.per_cluster == 0 || cfg.dims.is_empty() {
        return Err(Error::InvalidInput(
            "synthetic fixture needs positive cluster/sample counts and at least one view".into(),
        ));
    }
    if cfg.dims.contains(&0) {
        return Err(Error::InvalidInput("zero-dimensional view".into()));
    }
    if cfg.separation <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "separation {} must be positive",
            cfg.separation
        )));
    }
    let n = cfg.n_clusters * cfg.per_cluster;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut views = Vec::with_capacity(cfg.dims.len());
    for &dim in &cfg.dims {
        let mut centers = Vec::with_capacity(cfg.n_clusters);
        for _ in 0..cfg.n_clusters {
            // Direction from a standard normal draw, scaled onto the sphere.
            let mut c: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            c.iter_mut().for_each(|x| *x *= cfg.separation / norm);
            centers.push(c);
        }
        let mut matrix = FeatureMatrix::zeros(dim, n);
        for s in 0..n {
            let center = &centers[s / cfg.per_cluster];
            let col = matrix.column_mut(s);
            for d in 0..dim {
                let eps: f64 = rng.sample(StandardNormal);
                col[d] = center[d] + cfg.noise * eps;
            }
        }
        views.push(matrix);
    }
    let labels: Vec<usize> = (0..n).map(|s| s / cfg.per_cluster).collect();
    MultiViewDataset::fully_observed(views, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_view_fixture(n: usize) -> MultiViewDataset {
        let v0 = FeatureMatrix::new(2, n, (0..2 * n).map(|i| i as f64).collect()).unwrap();
        let v1 = FeatureMatrix::new(3, n, (0..3 * n).map(|i| (i as f64).sin()).collect()).unwrap();
        MultiViewDataset::fully_observed(vec![v0, v1], None).unwrap()
    }

    #[test]
    fn construction_rejects_shape_mismatch() {
        let v0 = FeatureMatrix::zeros(2, 2000);
        let v1 = FeatureMatrix::zeros(2, 1999);
        let err = MultiViewDataset::fully_observed(vec![v0, v1], None).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn construction_rejects_sample_with_no_view() {
        let v0 = FeatureMatrix::zeros(2, 3);
        let v1 = FeatureMatrix::zeros(2, 3);
        let mut mask = vec![vec![true; 3]; 2];
        mask[0][1] = false;
        mask[1][1] = false;
        let err = MultiViewDataset::new(vec![v0, v1], mask, None).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn construction_rejects_non_finite_observed_values() {
        let v0 = FeatureMatrix::new(1, 2, vec![1.0, f64::NAN]).unwrap();
        let err = MultiViewDataset::fully_observed(vec![v0], None).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn missing_protocol_splits_remainder_in_half() {
        let ds = two_view_fixture(2000);
        let out = apply_missing_protocol(&ds, 0.5, 7).unwrap();
        let counts = out.observed_counts();
        // 1000 paired, 500 lose view 0, 500 lose view 1.
        assert_eq!(counts, vec![1500, 1500]);
        let paired = (0..2000)
            .filter(|&s| out.is_observed(0, s) && out.is_observed(1, s))
            .count();
        assert_eq!(paired, 1000);
        assert_eq!(out.n_samples(), 2000);
    }

    #[test]
    fn missing_protocol_odd_remainder_drops_extra_from_view_one() {
        // N=5, c=0.6 -> 3 paired, remainder 2... use c=0.55 -> ceil(2.75)=3,
        // remainder 2 splits 1/1; c=0.5 on N=5 -> ceil(2.5)=3 as well.
        // For an odd remainder take N=5, c=0.35: ceil(1.75)=2 paired, 3 left.
        let ds = two_view_fixture(5);
        let out = apply_missing_protocol(&ds, 0.35, 3).unwrap();
        let lost_v0 = (0..5).filter(|&s| !out.is_observed(0, s)).count();
        let lost_v1 = (0..5).filter(|&s| !out.is_observed(1, s)).count();
        assert_eq!((lost_v0, lost_v1), (1, 2));
    }

    #[test]
    fn missing_protocol_full_fraction_is_identity() {
        let ds = two_view_fixture(40);
        let out = apply_missing_protocol(&ds, 1.0, 9).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn missing_protocol_is_deterministic() {
        let ds = two_view_fixture(100);
        let a = apply_missing_protocol(&ds, 0.9, 11).unwrap();
        let b = apply_missing_protocol(&ds, 0.9, 11).unwrap();
        assert_eq!(a.mask(), b.mask());
    }

    #[test]
    fn missing_protocol_rejects_bad_fraction_and_views() {
        let ds = two_view_fixture(10);
        assert!(apply_missing_protocol(&ds, 0.0, 1).is_err());
        assert!(apply_missing_protocol(&ds, 1.2, 1).is_err());
        let one_view =
            MultiViewDataset::fully_observed(vec![FeatureMatrix::zeros(2, 4)], None).unwrap();
        assert!(apply_missing_protocol(&one_view, 0.5, 1).is_err());
    }

    #[test]
    fn synth_contract_and_determinism() {
        let cfg = SynthConfig {
            n_clusters: 4,
            per_cluster: 50,
            dims: vec![8, 8],
            separation: 10.0,
            noise: 0.5,
            seed: 42,
        };
        let a = synth_gaussian(&cfg).unwrap();
        assert_eq!(a.n_samples(), 200);
        assert_eq!(a.n_views(), 2);
        assert_eq!(a.labels().unwrap().iter().max(), Some(&3));
        let b = synth_gaussian(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synth_zero_noise_collapses_clusters() {
        let cfg = SynthConfig {
            n_clusters: 2,
            per_cluster: 3,
            dims: vec![4],
            separation: 5.0,
            noise: 0.0,
            seed: 1,
        };
        let ds = synth_gaussian(&cfg).unwrap();
        for s in 1..3 {
            assert_eq!(ds.column(0, 0), ds.column(0, s));
        }
        assert_ne!(ds.column(0, 0), ds.column(0, 3));
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = std::env::temp_dir().join(format!("mvpc_ds_rt_{}", std::process::id()));
        let cfg = SynthConfig {
            n_clusters: 3,
            per_cluster: 5,
            dims: vec![2, 3],
            separation: 4.0,
            noise: 0.3,
            seed: 5,
        };
        let ds = apply_missing_protocol(&synth_gaussian(&cfg).unwrap(), 0.6, 8).unwrap();
        let manifest = save_dataset(&ds, &dir).unwrap();
        let loaded = load_dataset(&manifest, DatasetFormat::JsonManifest).unwrap();
        assert_eq!(loaded.mask(), ds.mask());
        assert_eq!(loaded.labels(), ds.labels());
        for m in 0..ds.n_views() {
            for s in 0..ds.n_samples() {
                if ds.is_observed(m, s) {
                    for (a, b) in ds.column(m, s).iter().zip(loaded.column(m, s)) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_per_view_directory_load() {
        let dir = std::env::temp_dir().join(format!("mvpc_ds_dir_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("a.csv"), "1.0,2.0\n3.0,4.0\n").unwrap();
        fs::write(dir.join("b.csv"), "5.0,6.0\n").unwrap();
        let ds = load_dataset(&dir, DatasetFormat::CsvPerView).unwrap();
        assert_eq!(ds.n_views(), 2);
        assert_eq!(ds.n_samples(), 2);
        assert_eq!(ds.column(0, 1), &[2.0, 4.0]);
        assert_eq!(ds.column(1, 0), &[5.0]);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn mismatched_view_lengths_fail_to_load() {
        let dir = std::env::temp_dir().join(format!("mvpc_ds_bad_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("a.csv"), "1.0,2.0\n").unwrap();
        fs::write(dir.join("b.csv"), "5.0,6.0,7.0\n").unwrap();
        assert!(load_dataset(&dir, DatasetFormat::CsvPerView).is_err());
        fs::remove_dir_all(&dir).ok();
    }
}
