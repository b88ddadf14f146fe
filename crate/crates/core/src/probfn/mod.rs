//! Per-view monotone probability functions learned by self-supervised
//! consistency.
//!
//! The training data is the union of the views' KNN edges. Each view sorts
//! the pairs it observes by similarity and splits them into population-
//! balanced segments; the learnable object per view is a nondecreasing step
//! function over those segments with its first value pinned to 0 and its last
//! to 1. [`functional`] evaluates the single-view, cross-view, joint and
//! multi-view estimators over the segment structure and scores their
//! agreement; [`train`] fits all views jointly by projected gradient descent.

mod functional;
mod train;

pub use functional::{
    eval_fcross, eval_fjoint, eval_fmix, eval_fmulti, eval_fsingle, evaluate_functionals,
    loss, loss_and_grad, loss_variant_direct, Functionals, LossParts,
};
pub use train::{isotonic_projection, train, EpochLoss, TrainedModel};

use serde::{Deserialize, Serialize};

use crate::similarity::{KnnLists, SimilarityMatrix};
use crate::{Error, Result};

/// Training pairs with per-view similarities and segment assignments.
#[derive(Debug, Clone)]
pub struct PairTable {
    n_samples: usize,
    n_views: usize,
    n_segments: usize,
    /// Deduplicated sample pairs, `p < q`, sorted.
    pairs: Vec<(usize, usize)>,
    /// `sims[t][m]` is the pair's similarity in view `m`; only meaningful
    /// where `observed[t][m]`.
    sims: Vec<Vec<f64>>,
    observed: Vec<Vec<bool>>,
    /// Segment index of pair `t` in view `m`, defined where observed.
    segs: Vec<Vec<Option<usize>>>,
    /// Pairs of each view's segment: `members[m][i]`.
    members: Vec<Vec<Vec<usize>>>,
    /// Per-segment mean similarity, ascending per view.
    seg_means: Vec<Vec<f64>>,
    /// Segment cut points per view, length `n_segments + 1`.
    seg_bounds: Vec<Vec<f64>>,
}

impl PairTable {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn is_observed(&self, pair: usize, view: usize) -> bool {
        self.observed[pair][view]
    }

    pub fn similarity(&self, pair: usize, view: usize) -> Option<f64> {
        self.observed[pair][view].then(|| self.sims[pair][view])
    }

    pub fn segment(&self, pair: usize, view: usize) -> Option<usize> {
        self.segs[pair][view]
    }

    pub fn segment_members(&self, view: usize, segment: usize) -> &[usize] {
        &self.members[view][segment]
    }

    pub fn seg_means(&self, view: usize) -> &[f64] {
        &self.seg_means[view]
    }

    pub fn seg_bounds(&self, view: usize) -> &[f64] {
        &self.seg_bounds[view]
    }

    /// Observed views of a pair, ascending.
    pub fn observed_views(&self, pair: usize) -> impl Iterator<Item = usize> + '_ {
        self.observed[pair]
            .iter()
            .enumerate()
            .filter_map(|(m, &o)| o.then_some(m))
    }
}

/// Split `count` items into `parts` contiguous chunks whose sizes differ by
/// at most one (larger chunks first); returns chunk start offsets.
fn balanced_offsets(count: usize, parts: usize) -> Vec<usize> {
    let base = count / parts;
    let rem = count % parts;
    let mut offsets = Vec::with_capacity(parts + 1);
    let mut pos = 0;
    offsets.push(0);
    for i in 0..parts {
        pos += base + usize::from(i < rem);
        offsets.push(pos);
    }
    offsets
}

/// Build the training table: the union of KNN edges over all views, with
/// per-view similarity sorted into `segments` population-balanced segments.
pub fn build_pair_table(
    knns: &[KnnLists],
    sims: &[SimilarityMatrix],
    segments: usize,
) -> Result<PairTable> {
    if knns.len() < 2 || knns.len() != sims.len() {
        return Err(Error::InvalidInput(format!(
            "pair table needs matching knn/similarity inputs for at least 2 views, got {}/{}",
            knns.len(),
            sims.len()
        )));
    }
    if segments == 0 {
        return Err(Error::InvalidInput("segment count must be positive".into()));
    }
    let n = sims[0].n();
    if sims.iter().any(|s| s.n() != n) || knns.iter().any(|k| k.n() != n) {
        return Err(Error::Shape("views disagree on sample count".into()));
    }
    let n_views = knns.len();

    let mut pair_set: std::collections::BTreeSet<(usize, usize)> = Default::default();
    for lists in knns {
        for i in 0..n {
            for &j in lists.neighbors(i) {
                if i != j {
                    pair_set.insert((i.min(j), i.max(j)));
                }
            }
        }
    }
    let pairs: Vec<(usize, usize)> = pair_set.into_iter().collect();
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }

    let mut sims_t = vec![vec![0.0; n_views]; pairs.len()];
    let mut observed = vec![vec![false; n_views]; pairs.len()];
    for (t, &(p, q)) in pairs.iter().enumerate() {
        for (m, sim) in sims.iter().enumerate() {
            if let Some(w) = sim.get(p, q) {
                sims_t[t][m] = w;
                observed[t][m] = true;
            }
        }
    }

    let mut segs = vec![vec![None; n_views]; pairs.len()];
    let mut members = Vec::with_capacity(n_views);
    let mut seg_means = Vec::with_capacity(n_views);
    let mut seg_bounds = Vec::with_capacity(n_views);
    for m in 0..n_views {
        let mut order: Vec<usize> = (0..pairs.len()).filter(|&t| observed[t][m]).collect();
        if order.len() < segments {
            return Err(Error::InvalidInput(format!(
                "view {m} observes {} pairs, cannot fill {segments} segments",
                order.len()
            )));
        }
        order.sort_by(|&a, &b| {
            sims_t[a][m]
                .partial_cmp(&sims_t[b][m])
                .unwrap()
                .then(a.cmp(&b))
        });
        let offsets = balanced_offsets(order.len(), segments);
        let mut view_members = Vec::with_capacity(segments);
        let mut means = Vec::with_capacity(segments);
        let mut bounds = Vec::with_capacity(segments + 1);
        bounds.push(sims_t[order[0]][m]);
        for i in 0..segments {
            let chunk = &order[offsets[i]..offsets[i + 1]];
            for &t in chunk {
                segs[t][m] = Some(i);
            }
            let mean = chunk.iter().map(|&t| sims_t[t][m]).sum::<f64>() / chunk.len() as f64;
            means.push(mean);
            if i + 1 < segments {
                let hi = sims_t[*chunk.last().unwrap()][m];
                let lo = sims_t[order[offsets[i + 1]]][m];
                bounds.push(0.5 * (hi + lo));
            }
            view_members.push(chunk.to_vec());
        }
        bounds.push(sims_t[*order.last().unwrap()][m]);
        members.push(view_members);
        seg_means.push(means);
        seg_bounds.push(bounds);
    }

    Ok(PairTable {
        n_samples: n,
        n_views,
        n_segments: segments,
        pairs,
        sims: sims_t,
        observed,
        segs,
        members,
        seg_means,
        seg_bounds,
    })
}

/// One view's monotone step function mapping similarity to a same-class
/// probability: nondecreasing values in [0, 1] with the first segment pinned
/// to 0 and the last to 1. Evaluation outside the covered similarity range
/// clamps to the end segments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiecewiseProbFn {
    pub view: usize,
    pub seg_bounds: Vec<f64>,
    pub seg_means: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseProbFn {
    pub fn new(
        view: usize,
        seg_bounds: Vec<f64>,
        seg_means: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let f = Self {
            view,
            seg_bounds,
            seg_means,
            values,
        };
        f.validate()?;
        Ok(f)
    }

    /// The uniform 0-to-1 line the optimizer starts from.
    pub fn uniform_ramp(view: usize, seg_bounds: Vec<f64>, seg_means: Vec<f64>) -> Result<Self> {
        let n = seg_means.len();
        let values = ramp_values(n);
        Self::new(view, seg_bounds, seg_means, values)
    }

    pub fn n_segments(&self) -> usize {
        self.values.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.values.len();
        if n < 2 {
            return Err(Error::InvalidInput(
                "piecewise function needs at least 2 segments".into(),
            ));
        }
        if self.seg_means.len() != n || self.seg_bounds.len() != n + 1 {
            return Err(Error::Shape(format!(
                "function with {} values has {} means / {} bounds",
                n,
                self.seg_means.len(),
                self.seg_bounds.len()
            )));
        }
        if self.seg_means.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidInput("segment means are not ascending".into()));
        }
        if self.values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidInput("function values outside [0, 1]".into()));
        }
        if self.values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidInput("function values not nondecreasing".into()));
        }
        if self.values[0] != 0.0 || self.values[n - 1] != 1.0 {
            return Err(Error::InvalidInput(
                "function endpoints must be pinned to 0 and 1".into(),
            ));
        }
        Ok(())
    }

    /// Segment containing similarity `x` (clamped to the end segments).
    pub fn segment_of(&self, x: f64) -> usize {
        let n = self.values.len();
        let interior = &self.seg_bounds[1..n];
        interior.partition_point(|&b| b <= x)
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        self.values[self.segment_of(x)]
    }
}

pub(crate) fn ramp_values(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Which consistency objective the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyLoss {
    /// Align single-view and cross-view estimates with the geometric-mix
    /// target (the default objective).
    #[default]
    Mixed,
    /// Align single-view directly with cross-view and multi-view estimates
    /// (kept for the ablation comparison).
    Direct,
}

/// Hyper-parameters of the probability-function trainer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Segment count of every view's step function.
    pub segments: usize,
    /// First `pin_low` segments are pushed to 0 by the constraint loss.
    #[serde(alias = "indi")]
    pub pin_low: usize,
    /// Last `pin_high` segments are pushed to 1 by the constraint loss.
    #[serde(alias = "indj_plus_1")]
    pub pin_high: usize,
    /// Balance factor between consistency and constraint losses.
    pub lambda: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub consistency: ConsistencyLoss,
    /// Disable to train on the consistency loss alone (ablation).
    #[serde(default = "default_true")]
    pub constraint_enabled: bool,
    /// Stop early when the total loss improves by less than
    /// `early_stop_tolerance` over this many epochs; 0 disables.
    #[serde(default = "default_early_stop_window")]
    pub early_stop_window: usize,
    #[serde(default = "default_early_stop_tolerance")]
    pub early_stop_tolerance: f64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-5
}
fn default_epochs() -> usize {
    2000
}
fn default_true() -> bool {
    true
}
fn default_early_stop_window() -> usize {
    50
}
fn default_early_stop_tolerance() -> f64 {
    1e-8
}

impl TrainConfig {
    /// Baseline configuration for a given segment count; pin widths scale
    /// with the segment count up to the preset caps.
    pub fn with_segments(segments: usize) -> Self {
        TrainConfig {
            segments,
            pin_low: (segments / 10).clamp(1, 10),
            pin_high: (segments / 10).clamp(1, 4),
            lambda: 20.0,
            learning_rate: default_lr(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            epochs: default_epochs(),
            seed: 0,
            consistency: ConsistencyLoss::Mixed,
            constraint_enabled: true,
            early_stop_window: default_early_stop_window(),
            early_stop_tolerance: default_early_stop_tolerance(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments < 4 {
            return Err(Error::InvalidInput(format!(
                "segment count {} is too small to pin both ends",
                self.segments
            )));
        }
        if self.pin_low == 0 || self.pin_low > self.segments / 4 {
            return Err(Error::InvalidInput(format!(
                "pin_low {} outside [1, {}]",
                self.pin_low,
                self.segments / 4
            )));
        }
        if self.pin_high == 0 || self.pin_high > self.segments / 4 {
            return Err(Error::InvalidInput(format!(
                "pin_high {} outside [1, {}]",
                self.pin_high,
                self.segments / 4
            )));
        }
        if self.lambda <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "lambda {} must be positive",
                self.lambda
            )));
        }
        if self.learning_rate <= 0.0 || self.epochs == 0 {
            return Err(Error::InvalidInput(
                "learning rate and epoch count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-dataset trainer presets, keyed by profile name.
pub fn train_profile(name: &str) -> Option<TrainConfig> {
    let (segments, pin_low, pin_high, lambda) = match name {
        "handwritten-v4" => (1000, 10, 4, 80.0),
        "handwritten-v2" => (1000, 10, 4, 20.0),
        "100leaves" => (200, 10, 2, 2.0),
        "humbi240" => (1000, 10, 4, 20.0),
        "buaa" => (200, 10, 4, 20.0),
        "bbcsport" => (200, 10, 4, 20.0),
        // Desk-scale synthetic fixture.
        "synth" => (64, 6, 6, 20.0),
        _ => return None,
    };
    Some(TrainConfig {
        segments,
        pin_low,
        pin_high,
        lambda,
        ..TrainConfig::with_segments(segments)
    })
}


#[cfg(test)]
mod tests {
    use super::test_fixtures::four_pair_table;
    use super::*;
    use crate::similarity::{KnnLists, Metric, SimilarityMatrix};

    #[test]
    fn binning_splits_sorted_pairs_evenly() {
        let table = four_pair_table(false, 2);
        assert_eq!(table.n_pairs(), 4);
        // View 0 sorted sims: 0.1, 0.2 | 0.8, 0.9.
        assert_eq!(table.segment_members(0, 0).len(), 2);
        assert_eq!(table.segment_members(0, 1).len(), 2);
        assert!((table.seg_means(0)[0] - 0.15).abs() < 1e-12);
        assert!((table.seg_means(0)[1] - 0.85).abs() < 1e-12);
        // Pairs are ordered (0,1), (0,2), (1,3), (2,3).
        assert_eq!(table.segment(0, 0), Some(0));
        assert_eq!(table.segment(1, 0), Some(0));
        assert_eq!(table.segment(2, 0), Some(1));
        assert_eq!(table.segment(3, 0), Some(1));
        // View 1 (misaligned): (0,2) and (2,3) sit high.
        assert_eq!(table.segment(1, 1), Some(1));
        assert_eq!(table.segment(2, 1), Some(0));
    }

    #[test]
    fn balanced_offsets_differ_by_at_most_one() {
        for count in 1..40 {
            for parts in 1..=count {
                let offsets = balanced_offsets(count, parts);
                let sizes: Vec<usize> = offsets.windows(2).map(|w| w[1] - w[0]).collect();
                assert_eq!(sizes.iter().sum::<usize>(), count);
                let min = sizes.iter().min().unwrap();
                let max = sizes.iter().max().unwrap();
                assert!(max - min <= 1, "count={count} parts={parts}");
            }
        }
    }

    #[test]
    fn unobserved_pairs_are_excluded_from_view_segments() {
        let n = 4;
        let w = vec![
            1.0, 0.1, 0.2, 0.0, //
            0.1, 1.0, 0.0, 0.8, //
            0.2, 0.0, 1.0, 0.9, //
            0.0, 0.8, 0.9, 1.0,
        ];
        let sims = vec![
            SimilarityMatrix::from_dense(0, n, Metric::Cosine, w.clone(), vec![true; n]).unwrap(),
            // Sample 1 unobserved in view 1.
            SimilarityMatrix::from_dense(
                1,
                n,
                Metric::Cosine,
                w,
                vec![true, false, true, true],
            )
            .unwrap(),
        ];
        let neighbors = vec![vec![1, 2], vec![0, 3], vec![0, 3], vec![1, 2]];
        let knns = vec![
            KnnLists::from_neighbors(0, 2, neighbors.clone()),
            KnnLists::from_neighbors(1, 2, neighbors),
        ];
        let table = build_pair_table(&knns, &sims, 2).unwrap();
        // Pairs touching sample 1 have no view-1 segment.
        for (t, &(p, q)) in table.pairs().iter().enumerate() {
            if p == 1 || q == 1 {
                assert_eq!(table.segment(t, 1), None);
                assert!(!table.is_observed(t, 1));
            } else {
                assert!(table.segment(t, 1).is_some());
            }
        }
        let total: usize = (0..2).map(|i| table.segment_members(1, i).len()).sum();
        assert_eq!(total, 2);
    }

    #[test]
    fn too_few_pairs_for_segments_errors() {
        assert!(super::test_fixtures::try_four_pair_table(true, 5).is_err());
    }

    #[test]
    fn piecewise_fn_validates_eq13_constraints() {
        let bounds = vec![0.0, 0.5, 1.0];
        let means = vec![0.2, 0.8];
        assert!(PiecewiseProbFn::new(0, bounds.clone(), means.clone(), vec![0.0, 1.0]).is_ok());
        assert!(PiecewiseProbFn::new(0, bounds.clone(), means.clone(), vec![0.1, 1.0]).is_err());
        assert!(PiecewiseProbFn::new(0, bounds.clone(), means.clone(), vec![0.0, 0.9]).is_err());
        assert!(
            PiecewiseProbFn::new(0, bounds, vec![0.8, 0.2], vec![0.0, 1.0]).is_err(),
            "descending means must be rejected"
        );
    }

    #[test]
    fn evaluation_clamps_to_end_segments() {
        let f = PiecewiseProbFn::new(
            0,
            vec![0.0, 0.3, 0.6, 1.0],
            vec![0.1, 0.45, 0.9],
            vec![0.0, 0.4, 1.0],
        )
        .unwrap();
        assert_eq!(f.evaluate(-5.0), 0.0);
        assert_eq!(f.evaluate(0.1), 0.0);
        assert_eq!(f.evaluate(0.3), 0.4); // boundary goes right
        assert_eq!(f.evaluate(0.5), 0.4);
        assert_eq!(f.evaluate(0.99), 1.0);
        assert_eq!(f.evaluate(7.0), 1.0);
    }

    #[test]
    fn ramp_is_a_valid_function() {
        let table = four_pair_table(true, 2);
        let f = PiecewiseProbFn::uniform_ramp(
            0,
            table.seg_bounds(0).to_vec(),
            table.seg_means(0).to_vec(),
        )
        .unwrap();
        assert_eq!(f.values, vec![0.0, 1.0]);
    }

    #[test]
    fn profile_lookup_matches_preset_settings() {
        let hw = train_profile("handwritten-v4").unwrap();
        assert_eq!(
            (hw.segments, hw.pin_low, hw.pin_high, hw.lambda),
            (1000, 10, 4, 80.0)
        );
        assert_eq!(train_profile("handwritten-v2").unwrap().lambda, 20.0);
        let leaves = train_profile("100leaves").unwrap();
        assert_eq!((leaves.segments, leaves.pin_high, leaves.lambda), (200, 2, 2.0));
        assert!(train_profile("nope").is_none());
        assert!(hw.validate().is_ok());
    }

    #[test]
    fn config_validation_rejects_oversized_pins() {
        let mut cfg = TrainConfig::with_segments(40);
        assert!(cfg.validate().is_ok());
        cfg.pin_low = 11;
        assert!(cfg.validate().is_err());
        cfg.pin_low = 0;
        assert!(cfg.validate().is_err());
    }
}
