//! Probabilistic clustering by seeded local moves.
//!
//! Every sample starts as its own cluster; sweeps in seeded random order
//! move each sample to the neighboring label with the best intra-cluster
//! log-odds gain, until a sweep makes no move or the iteration cap is hit.
//! Absent edges count as probability one half, i.e. zero log-odds. An
//! exhaustive enumeration oracle over all set partitions backs the tests at
//! small sizes.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fusion::ProbGraph;
use crate::{Error, Result, PROB_EPS};

/// Cluster assignment over N samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    pub fn from_labels(labels: Vec<usize>) -> Self {
        Self { labels }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            labels: (0..n).collect(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Member lists keyed by label, labels ascending.
    pub fn clusters(&self) -> Vec<(usize, Vec<usize>)> {
        let mut map: HashMap<usize, Vec<usize>> = HashMap::new();
        for (s, &l) in self.labels.iter().enumerate() {
            map.entry(l).or_default().push(s);
        }
        let mut out: Vec<(usize, Vec<usize>)> = map.into_iter().collect();
        out.sort_by_key(|&(l, _)| l);
        out
    }

    /// Relabel clusters by order of first appearance, so labels are
    /// contiguous 0..C-1 and the cluster of the smallest sample is 0.
    pub fn canonicalize(&mut self) {
        let mut remap: HashMap<usize, usize> = HashMap::new();
        for l in self.labels.iter_mut() {
            let next = remap.len();
            *l = *remap.entry(*l).or_insert(next);
        }
    }

    pub fn canonical(mut self) -> Self {
        self.canonicalize();
        self
    }

    pub fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        for (s, l) in self.labels.iter().enumerate() {
            writeln!(out, "{s},{l}")?;
        }
        Ok(())
    }

    /// Accepts either `sample,label` rows or a single comma-separated row of
    /// labels.
    pub fn read_csv(reader: &mut dyn BufRead) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidInput(format!("label csv: {e}")))?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let row = trimmed
                .split(',')
                .map(|c| {
                    c.trim().parse::<usize>().map_err(|e| {
                        Error::InvalidInput(format!("label csv line {}: {e}", idx + 1))
                    })
                })
                .collect::<Result<Vec<usize>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::InvalidInput("label csv is empty".into()));
        }
        if rows.len() == 1 && rows[0].len() > 2 {
            return Ok(Self::from_labels(rows[0].clone()));
        }
        if rows.iter().all(|r| r.len() == 2) {
            let mut indexed: Vec<(usize, usize)> =
                rows.iter().map(|r| (r[0], r[1])).collect();
            indexed.sort_by_key(|&(s, _)| s);
            for (pos, &(s, _)) in indexed.iter().enumerate() {
                if pos != s {
                    return Err(Error::InvalidInput(format!(
                        "label csv: sample indices not contiguous at {s}"
                    )));
                }
            }
            return Ok(Self::from_labels(indexed.into_iter().map(|(_, l)| l).collect()));
        }
        if rows.len() == 1 {
            // Single row of one or two labels.
            return Ok(Self::from_labels(rows[0].clone()));
        }
        Err(Error::InvalidInput(
            "label csv is neither sample,label rows nor a single label row".into(),
        ))
    }
}

/// Per-edge log-odds `ln P(same) - ln P(different)`, probabilities clamped
/// away from 0 and 1. Positive weight attracts a merge, negative repels.
#[derive(Debug, Clone)]
pub struct EdgeWeights {
    weights: Vec<f64>,
}

impl EdgeWeights {
    pub fn compute(g: &ProbGraph) -> Self {
        let weights = g
            .probs()
            .iter()
            .map(|&p| {
                let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                p.ln() - (1.0 - p).ln()
            })
            .collect();
        Self { weights }
    }

    pub fn get(&self, edge: usize) -> f64 {
        self.weights[edge]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    /// Neighbor-list size used to collect candidate labels.
    pub k: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Allow a sample to leave for a fresh singleton when every neighboring
    /// label is worse than standing alone.
    pub singleton_escape: bool,
    /// After the move sweeps stall, greedily merge cluster pairs whose
    /// connecting log-odds mass is positive, then resume sweeping. Single-
    /// sample moves cannot cross such barriers on their own.
    pub merge_pass: bool,
    /// Independent seeded runs; the best objective wins. The sweep order is
    /// random, so occasional local optima wash out across restarts.
    pub restarts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 20,
            max_iter: 20,
            seed: 0,
            singleton_escape: true,
            merge_pass: true,
            restarts: 8,
        }
    }
}

/// Negative-log-likelihood style objective: sum over stored intra-cluster
/// edges of `ln P(different) - ln P(same)`. Lower is better; all singletons
/// score 0.
pub fn objective(g: &ProbGraph, part: &Partition) -> f64 {
    objective_with(g, &EdgeWeights::compute(g), part)
}

/// Local-move clustering over the probability graph.
pub fn cluster(g: &ProbGraph, cfg: &ClusterConfig) -> Result<Partition> {
    if g.is_empty() {
        return Err(Error::InvalidInput("probability graph has no edges".into()));
    }
    if cfg.k == 0 || cfg.max_iter == 0 || cfg.restarts == 0 {
        return Err(Error::InvalidInput(
            "cluster k, max_iter and restarts must be positive".into(),
        ));
    }
    let weights = EdgeWeights::compute(g);
    let mut best: Option<(f64, Partition)> = None;
    for r in 0..cfg.restarts {
        let seed = cfg.seed.wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(r as u64));
        let part = cluster_once(g, cfg, &weights, seed);
        let obj = objective_with(g, &weights, &part);
        if best.as_ref().map(|(b, _)| obj < *b).unwrap_or(true) {
            best = Some((obj, part));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn objective_with(g: &ProbGraph, weights: &EdgeWeights, part: &Partition) -> f64 {
    let labels = part.labels();
    let mut total = 0.0;
    for (e, &(i, j)) in g.pairs().iter().enumerate() {
        if labels[i] == labels[j] {
            total -= weights.get(e);
        }
    }
    total
}

fn cluster_once(g: &ProbGraph, cfg: &ClusterConfig, weights: &EdgeWeights, seed: u64) -> Partition {
    let n = g.n();

    // Candidate neighbor lists: top-k by probability, ties to lower index.
    let mut nbrs: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut cands: Vec<(f64, usize)> = g
            .neighbors(i)
            .iter()
            .map(|&(nbr, e)| (g.edge_prob(e), nbr))
            .collect();
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        cands.truncate(cfg.k);
        nbrs.push(cands.into_iter().map(|(_, nbr)| nbr).collect());
    }

    let mut labels: Vec<usize> = (0..n).collect();
    let mut next_label = n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut gain: HashMap<usize, f64> = HashMap::new();

    let mut sweep = |labels: &mut Vec<usize>, order: &mut Vec<usize>, rng: &mut ChaCha8Rng| {
        order.shuffle(rng);
        let mut moves = 0usize;
        for &i in order.iter() {
            gain.clear();
            for &(j, e) in g.neighbors(i) {
                *gain.entry(labels[j]).or_insert(0.0) += weights.get(e);
            }
            let current = labels[i];
            let current_gain = gain.get(&current).copied().unwrap_or(0.0);

            let mut best_label = current;
            let mut best_gain = current_gain;
            for &h in &nbrs[i] {
                let label = labels[h];
                let g = gain.get(&label).copied().unwrap_or(0.0);
                // Strictly better wins; on a tie keep the current label,
                // otherwise prefer the lowest label.
                if g > best_gain || (g == best_gain && best_label != current && label < best_label)
                {
                    best_label = label;
                    best_gain = g;
                }
            }
            if cfg.singleton_escape && best_gain < 0.0 {
                best_label = next_label;
            }
            if best_label != current {
                if best_label == next_label {
                    next_label += 1;
                }
                labels[i] = best_label;
                moves += 1;
            }
        }
        moves
    };

    let mut sweeps_left = cfg.max_iter;
    loop {
        while sweeps_left > 0 {
            sweeps_left -= 1;
            if sweep(&mut labels, &mut order, &mut rng) == 0 {
                break;
            }
        }
        if !cfg.merge_pass || merge_clusters(g, weights, &mut labels) == 0 {
            break;
        }
        if sweeps_left == 0 {
            // No sweep budget left: finish the remaining profitable merges.
            while merge_clusters(g, weights, &mut labels) > 0 {}
            break;
        }
    }

    Partition::from_labels(labels).canonical()
}

/// Merge the cluster pair with the largest positive connecting log-odds
/// mass, repeatedly; single-sample sweeps cannot perform these joint moves.
/// Returns the number of merges applied.
fn merge_clusters(g: &ProbGraph, weights: &EdgeWeights, labels: &mut [usize]) -> usize {
    let mut merged = 0usize;
    loop {
        let mut link: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
        for (e, &(i, j)) in g.pairs().iter().enumerate() {
            let (a, b) = (labels[i], labels[j]);
            if a != b {
                let key = (a.min(b), a.max(b));
                *link.entry(key).or_insert(0.0) += weights.get(e);
            }
        }
        let best = link
            .into_iter()
            .filter(|&(_, w)| w > 0.0)
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)));
        match best {
            Some(((a, b), _)) => {
                for l in labels.iter_mut() {
                    if *l == b {
                        *l = a;
                    }
                }
                merged += 1;
            }
            None => return merged,
        }
    }
}

/// Exact minimizer of [`objective`] by enumerating all set partitions
/// (restricted growth strings). Ties prefer more clusters, then the
/// lexicographically smallest canonical labeling; with every probability at
/// exactly one half that yields all singletons.
pub fn oracle_cluster(g: &ProbGraph) -> Result<Partition> {
    let n = g.n();
    if n == 0 || n > 12 {
        return Err(Error::InvalidInput(format!(
            "oracle enumeration supports 1..=12 samples, got {n}"
        )));
    }
    let weights = EdgeWeights::compute(g);
    let pairs = g.pairs();

    let mut rgs = vec![0usize; n];
    let mut best: Option<(f64, usize, Vec<usize>)> = None;

    fn walk(
        pos: usize,
        max_used: usize,
        rgs: &mut Vec<usize>,
        pairs: &[(usize, usize)],
        weights: &EdgeWeights,
        best: &mut Option<(f64, usize, Vec<usize>)>,
    ) {
        let n = rgs.len();
        if pos == n {
            let mut obj = 0.0;
            for (e, &(i, j)) in pairs.iter().enumerate() {
                if rgs[i] == rgs[j] {
                    obj -= weights.get(e);
                }
            }
            let clusters = max_used + 1;
            let better = match best {
                None => true,
                Some((b_obj, b_clusters, b_rgs)) => {
                    obj < *b_obj
                        || (obj == *b_obj
                            && (clusters > *b_clusters
                                || (clusters == *b_clusters && rgs[..] < b_rgs[..])))
                }
            };
            if better {
                *best = Some((obj, clusters, rgs.clone()));
            }
            return;
        }
        for label in 0..=(max_used + 1).min(n - 1) {
            rgs[pos] = label;
            walk(
                pos + 1,
                max_used.max(label),
                rgs,
                pairs,
                weights,
                best,
            );
        }
    }

    walk(1, 0, &mut rgs, pairs, &weights, &mut best);
    let (_, _, labels) = best.expect("at least one partition");
    Ok(Partition::from_labels(labels))
}
