//! Per-view similarity matrices and KNN lists.
//!
//! Similarities are only defined between samples observed in the view; every
//! accessor goes through the observation flags so masked entries can never
//! leak into downstream stages.

use std::io::Write;

use crate::dataset::MultiViewDataset;
use crate::{Error, Result};

/// Similarity metric. `Lp(p)` is the negative Minkowski distance, affinely
/// rescaled to [0, 1] over the view's valid entries (order-preserving, which
/// is all the downstream binning consumes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Cosine,
    Lp(f64),
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Cosine => write!(f, "cosine"),
            Metric::Lp(p) => write!(f, "l{p}"),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Metric::Cosine),
            "l1" => Ok(Metric::Lp(1.0)),
            "l2" => Ok(Metric::Lp(2.0)),
            "l3" => Ok(Metric::Lp(3.0)),
            other => other
                .strip_prefix('l')
                .and_then(|p| p.parse::<f64>().ok())
                .filter(|p| *p >= 1.0)
                .map(Metric::Lp)
                .ok_or_else(|| Error::InvalidInput(format!("unknown metric {other:?}"))),
        }
    }
}

/// Dense symmetric similarity matrix of one view, with per-sample
/// observation flags.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    view: usize,
    n: usize,
    metric: Metric,
    data: Vec<f64>,
    observed: Vec<bool>,
}

impl SimilarityMatrix {
    /// Build from a dense row-major N x N buffer. Intended for tests and
    /// for callers that bring their own similarities.
    pub fn from_dense(
        view: usize,
        n: usize,
        metric: Metric,
        data: Vec<f64>,
        observed: Vec<bool>,
    ) -> Result<Self> {
        if data.len() != n * n || observed.len() != n {
            return Err(Error::Shape(format!(
                "similarity buffer {} / flags {} for n = {}",
                data.len(),
                observed.len(),
                n
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (data[i * n + j] - data[j * n + i]).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "similarity matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            view,
            n,
            metric,
            data,
            observed,
        })
    }

    pub fn view(&self) -> usize {
        self.view
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.observed[i] && self.observed[j]
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.observed[i]
    }

    /// Similarity of a valid pair, `None` when either sample is unobserved.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.is_valid(i, j).then(|| self.data[i * self.n + j])
    }

    pub fn observed_samples(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed
            .iter()
            .enumerate()
            .filter_map(|(s, &o)| o.then_some(s))
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

fn minkowski(a: &[f64], b: &[f64], p: f64) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p)).sum();
    sum.powf(1.0 / p)
}

/// Compute one view's similarity matrix over its observed samples.
pub fn compute_similarity(
    ds: &MultiViewDataset,
    view: usize,
    metric: Metric,
) -> Result<SimilarityMatrix> {
    if view >= ds.n_views() {
        return Err(Error::InvalidInput(format!(
            "view {view} out of range ({} views)",
            ds.n_views()
        )));
    }
    let n = ds.n_samples();
    let observed: Vec<bool> = (0..n).map(|s| ds.is_observed(view, s)).collect();
    let samples: Vec<usize> = (0..n).filter(|&s| observed[s]).collect();
    let mut data = vec![0.0; n * n];

    match metric {
        Metric::Cosine => {
            for (a, &i) in samples.iter().enumerate() {
                for &j in &samples[a..] {
                    let w = cosine(ds.column(view, i), ds.column(view, j))?;
                    data[i * n + j] = w;
                    data[j * n + i] = w;
                }
            }
        }
        Metric::Lp(p) => {
            if p < 1.0 {
                return Err(Error::InvalidInput(format!("Lp order {p} below 1")));
            }
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (a, &i) in samples.iter().enumerate() {
                for &j in &samples[a..] {
                    let s = -minkowski(ds.column(view, i), ds.column(view, j), p);
                    data[i * n + j] = s;
                    data[j * n + i] = s;
                    lo = lo.min(s);
                    hi = hi.max(s);
                }
            }
            // Affine rescale of the valid entries to [0, 1]; a degenerate
            // range (all distances equal) maps everything to 1.
            let span = hi - lo;
            for (a, &i) in samples.iter().enumerate() {
                for &j in &samples[a..] {
                    let s = data[i * n + j];
                    let r = if span > 0.0 { (s - lo) / span } else { 1.0 };
                    data[i * n + j] = r;
                    data[j * n + i] = r;
                }
            }
        }
    }
    SimilarityMatrix::from_dense(view, n, metric, data, observed)
}

/// Per-sample nearest-neighbor lists of one view, sorted by descending
/// similarity (ties broken by lower sample index). Unobserved samples have
/// empty lists.
#[derive(Debug, Clone)]
pub struct KnnLists {
    view: usize,
    k: usize,
    neighbors: Vec<Vec<usize>>,
}

impl KnnLists {
    pub fn from_neighbors(view: usize, k: usize, neighbors: Vec<Vec<usize>>) -> Self {
        Self { view, k, neighbors }
    }

    pub fn view(&self) -> usize {
        self.view
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, sample: usize) -> &[usize] {
        &self.neighbors[sample]
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }
}

/// Exact top-k neighbor lists over a view's observed samples.
pub fn build_knn(sim: &SimilarityMatrix, k: usize) -> Result<KnnLists> {
    if k == 0 {
        return Err(Error::InvalidInput("knn k must be at least 1".into()));
    }
    let n = sim.n();
    let mut neighbors = vec![Vec::new(); n];
    let observed: Vec<usize> = sim.observed_samples().collect();
    for &i in &observed {
        let mut cands: Vec<(f64, usize)> = observed
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| (sim.get(i, j).expect("observed pair"), j))
            .collect();
        // Descending similarity, ascending index on ties.
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        cands.truncate(k);
        neighbors[i] = cands.into_iter().map(|(_, j)| j).collect();
    }
    Ok(KnnLists::from_neighbors(sim.view(), k, neighbors))
}

/// Per-sample union of the views' neighbor lists, sorted ascending.
pub fn knn_union(knns: &[KnnLists]) -> Vec<Vec<usize>> {
    let n = knns.iter().map(|k| k.n()).max().unwrap_or(0);
    let mut union = vec![Vec::new(); n];
    for lists in knns {
        for s in 0..lists.n() {
            union[s].extend_from_slice(lists.neighbors(s));
        }
    }
    for set in &mut union {
        set.sort_unstable();
        set.dedup();
    }
    union
}

/// Dump the valid upper triangle as `i,j,w` triples.
pub fn dump_similarity_csv(sim: &SimilarityMatrix, out: &mut dyn Write) -> std::io::Result<()> {
    for i in 0..sim.n() {
        for j in (i + 1)..sim.n() {
            if let Some(w) = sim.get(i, j) {
                writeln!(out, "{i},{j},{w}")?;
            }
        }
    }
    Ok(())
}
