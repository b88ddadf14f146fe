//! Graph-context refinement of fused probabilities.
//!
//! Path propagation raises an edge to the best product path through a common
//! neighbor; co-neighbor propagation rescales an edge by the probability
//! mass its endpoints share. Both operate on a snapshot of the graph, so a
//! pass is order-independent and deterministic.

use crate::fusion::{ProbGraph, Provenance};
use crate::{Error, Result};

/// One path-propagation pass: every edge becomes
/// `max(P(i,j), max over common knn neighbors h of P(i,h) * P(h,j))`,
/// computed against the pre-pass snapshot.
///
/// `knn_union[s]` is the union of the views' similarity-KNN lists of sample
/// `s`, sorted ascending.
pub fn path_propagate(g: &ProbGraph, knn_union: &[Vec<usize>]) -> Result<ProbGraph> {
    if knn_union.len() != g.n() {
        return Err(Error::Shape(format!(
            "{} knn lists for {} samples",
            knn_union.len(),
            g.n()
        )));
    }
    let mut probs = g.probs().to_vec();
    for (e, &(i, j)) in g.pairs().iter().enumerate() {
        let mut best = probs[e];
        for &h in intersect(&knn_union[i], &knn_union[j]).iter() {
            if h == i || h == j {
                continue;
            }
            if let (Some(a), Some(b)) = (g.prob(i, h), g.prob(h, j)) {
                best = best.max(a * b);
            }
        }
        probs[e] = best;
    }
    g.with_probs(probs, Provenance::Refined)
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[x]);
                x += 1;
                y += 1;
            }
        }
    }
    out
}

/// Probability that two samples are same-class given a fuzzy prior of 0.5 on
/// their own edge and probabilities `b`, `c` to a shared neighbor, together
/// with the claim that it dominates the raw product `b * c`. Exists as a
/// tested soundness oracle for path propagation, not as a pipeline stage.
pub fn check_path_bound(b: f64, c: f64) -> Result<(f64, bool)> {
    if !(0.0 < b && b < 1.0 && 0.0 < c && c < 1.0) {
        return Err(Error::InvalidInput(format!(
            "path bound arguments ({b}, {c}) outside (0, 1)"
        )));
    }
    let q = (b * c + 0.5 * (1.0 - b - c)) / (0.5 * b * c + 1.0 - 0.5 * b - 0.5 * c);
    Ok((q, q >= b * c))
}

/// One co-neighbor pass: rebuild per-sample top-k neighbor lists from the
/// current probabilities, then rescale every edge by the shared probability
/// mass:
/// `sum over common h of (P(i,h) + P(j,h)) / (sum P(i,*) + sum P(j,*))`,
/// with empty intersections mapping to 0.
pub fn co_neighbor_propagate(g: &ProbGraph, k: usize) -> Result<ProbGraph> {
    if k == 0 {
        return Err(Error::InvalidInput("co-neighbor k must be at least 1".into()));
    }
    let n = g.n();
    let mut knn: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut denom_part = vec![0.0; n];
    for i in 0..n {
        let mut cands: Vec<(f64, usize)> = g
            .neighbors(i)
            .iter()
            .map(|&(nbr, e)| (g.edge_prob(e), nbr))
            .collect();
        if cands.is_empty() {
            return Err(Error::InvalidInput(format!(
                "sample {i} has no graph neighbors; graph too sparse for co-neighbor propagation"
            )));
        }
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        cands.truncate(k);
        denom_part[i] = cands.iter().map(|&(p, _)| p).sum();
        let mut list: Vec<usize> = cands.into_iter().map(|(_, nbr)| nbr).collect();
        list.sort_unstable();
        knn.push(list);
    }

    let mut probs = vec![0.0; g.n_edges()];
    for (e, &(i, j)) in g.pairs().iter().enumerate() {
        let common = intersect(&knn[i], &knn[j]);
        let mut numerator = 0.0;
        for &h in &common {
            // h is in both knn lists, so both edges exist.
            numerator += g.prob(i, h).unwrap_or(0.0) + g.prob(j, h).unwrap_or(0.0);
        }
        let denominator = denom_part[i] + denom_part[j];
        probs[e] = if numerator > 0.0 && denominator > 0.0 {
            (numerator / denominator).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
    g.with_probs(probs, Provenance::Refined)
}

/// Standard refinement schedule: `passes` rounds of path propagation
/// followed by co-neighbor propagation. Zero passes returns the input
/// unchanged.
pub fn refine(
    g: &ProbGraph,
    knn_union: &[Vec<usize>],
    k: usize,
    passes: usize,
) -> Result<ProbGraph> {
    let mut current = g.clone();
    for _ in 0..passes {
        current = path_propagate(&current, knn_union)?;
        current = co_neighbor_propagate(&current, k)?;
    }
    Ok(current)
}
