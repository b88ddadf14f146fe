//! Segment-level estimators and the training objective.
//!
//! Per view `m` and segment `i`, four quantities describe how likely the
//! segment's pairs are to be same-class:
//!
//! * single: the view's own step-function value,
//! * cross (per other view `b`): the mean of `b`'s step function over the
//!   segment's pairs, looked up at each pair's `b`-segment,
//! * multi: the mean of the odds-product joint over each pair's observed
//!   views,
//! * mix: the geometric mean of multi and the average of single and cross.
//!
//! The consistency loss aligns single and cross with mix; the constraint
//! loss pushes the lowest segments of all three estimators to 0 and the
//! highest to 1. Gradients are computed analytically through the whole
//! composition.

use super::{ConsistencyLoss, PairTable, PiecewiseProbFn, TrainConfig};
use crate::{Error, Result, PROB_EPS};

#[inline]
fn clamp_prob(x: f64) -> f64 {
    x.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[inline]
fn clamp_prob_grad(x: f64) -> f64 {
    if x > PROB_EPS && x < 1.0 - PROB_EPS {
        1.0
    } else {
        0.0
    }
}

/// Guard for the 1/(2*sqrt(u)) factor when the mix value sits at zero.
const MIX_GRAD_GUARD: f64 = 1e-12;

/// Odds-product fusion of per-view probabilities:
/// `prod(f) / (prod(f) + prod(1 - f))` with inputs clamped away from 0 and 1.
///
/// Inputs are sorted before multiplying so the result is bit-identical under
/// any permutation of views.
pub fn eval_fjoint(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mut v: Vec<f64> = values.iter().map(|&x| clamp_prob(x)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut num = 1.0;
    let mut comp = 1.0;
    for &f in &v {
        num *= f;
        comp *= 1.0 - f;
    }
    num / (num + comp)
}

/// Joint probability of one pair plus its partial derivative with respect to
/// each (clamped) input.
fn joint_with_partials(vals: &[f64], partials: &mut [f64]) -> f64 {
    let k = vals.len();
    let mut num = 1.0;
    let mut comp = 1.0;
    for &f in vals {
        num *= f;
        comp *= 1.0 - f;
    }
    let denom = num + comp;
    let joint = num / denom;
    for idx in 0..k {
        let mut pa = 1.0;
        let mut pb = 1.0;
        for (j, &f) in vals.iter().enumerate() {
            if j != idx {
                pa *= f;
                pb *= 1.0 - f;
            }
        }
        partials[idx] = (pa * comp + num * pb) / (denom * denom);
    }
    joint
}

/// Flattened (pair -> observed views/segments) index of a table.
struct PairIndex {
    offsets: Vec<usize>,
    views: Vec<usize>,
    segs: Vec<usize>,
}

fn pair_index(table: &PairTable) -> PairIndex {
    let t_count = table.n_pairs();
    let mut offsets = Vec::with_capacity(t_count + 1);
    let mut views = Vec::new();
    let mut segs = Vec::new();
    offsets.push(0);
    for t in 0..t_count {
        for m in 0..table.n_views() {
            if let Some(seg) = table.segment(t, m) {
                views.push(m);
                segs.push(seg);
            }
        }
        offsets.push(views.len());
    }
    PairIndex {
        offsets,
        views,
        segs,
    }
}

/// All segment-level estimators of every view, evaluated at one parameter
/// setting.
#[derive(Debug, Clone)]
pub struct Functionals {
    /// `single[m][i]`
    pub single: Vec<Vec<f64>>,
    /// `cross[m][b][i]`; `cross[m][m]` is empty.
    pub cross: Vec<Vec<Vec<f64>>>,
    /// `multi[m][i]`
    pub multi: Vec<Vec<f64>>,
    /// `mix[m][i]`
    pub mix: Vec<Vec<f64>>,
}

struct Forward {
    functionals: Functionals,
    /// Co-observed pair count behind `cross[m][b][i]`; 0 marks the
    /// fell-back-to-single segments.
    cross_count: Vec<Vec<Vec<usize>>>,
    /// d(joint)/d(parameter) aligned with `PairIndex::views`, including the
    /// probability-clamp derivative.
    partials: Vec<f64>,
    index: PairIndex,
}

fn forward(table: &PairTable, values: &[Vec<f64>], with_partials: bool) -> Forward {
    let m_count = table.n_views();
    let i_count = table.n_segments();
    let index = pair_index(table);
    let t_count = table.n_pairs();

    let mut joint = vec![0.0; t_count];
    let mut partials = vec![0.0; if with_partials { index.views.len() } else { 0 }];
    let mut scratch = Vec::with_capacity(m_count);
    for t in 0..t_count {
        let lo = index.offsets[t];
        let hi = index.offsets[t + 1];
        scratch.clear();
        for pos in lo..hi {
            scratch.push(clamp_prob(values[index.views[pos]][index.segs[pos]]));
        }
        if with_partials {
            joint[t] = joint_with_partials(&scratch, &mut partials[lo..hi]);
            for pos in lo..hi {
                partials[pos] *= clamp_prob_grad(values[index.views[pos]][index.segs[pos]]);
            }
        } else {
            let mut num = 1.0;
            let mut comp = 1.0;
            for &f in &scratch {
                num *= f;
                comp *= 1.0 - f;
            }
            joint[t] = num / (num + comp);
        }
    }

    let single: Vec<Vec<f64>> = values.to_vec();
    let mut cross = vec![vec![Vec::new(); m_count]; m_count];
    let mut cross_count = vec![vec![Vec::new(); m_count]; m_count];
    let mut multi = vec![vec![0.0; i_count]; m_count];
    for m in 0..m_count {
        for i in 0..i_count {
            let members = table.segment_members(m, i);
            let mut sum = 0.0;
            for &t in members {
                sum += joint[t];
            }
            multi[m][i] = sum / members.len() as f64;
        }
        for b in 0..m_count {
            if b == m {
                continue;
            }
            let mut col = vec![0.0; i_count];
            let mut cnt = vec![0usize; i_count];
            for i in 0..i_count {
                let members = table.segment_members(m, i);
                let mut sum = 0.0;
                let mut n_co = 0usize;
                for &t in members {
                    if let Some(seg_b) = table.segment(t, b) {
                        sum += values[b][seg_b];
                        n_co += 1;
                    }
                }
                if n_co > 0 {
                    col[i] = sum / n_co as f64;
                } else {
                    // No co-observed pairs: fall back to the view's own value.
                    col[i] = values[m][i];
                }
                cnt[i] = n_co;
            }
            cross[m][b] = col;
            cross_count[m][b] = cnt;
        }
    }

    let mut mix = vec![vec![0.0; i_count]; m_count];
    for m in 0..m_count {
        for i in 0..i_count {
            let mut avg = single[m][i].clamp(0.0, 1.0);
            for b in 0..m_count {
                if b != m {
                    avg += cross[m][b][i].clamp(0.0, 1.0);
                }
            }
            avg /= m_count as f64;
            mix[m][i] = (multi[m][i].clamp(0.0, 1.0) * avg).sqrt();
        }
    }

    Forward {
        functionals: Functionals {
            single,
            cross,
            multi,
            mix,
        },
        cross_count,
        partials,
        index,
    }
}

fn check_fns(table: &PairTable, fns: &[PiecewiseProbFn]) -> Result<Vec<Vec<f64>>> {
    if fns.len() != table.n_views() {
        return Err(Error::Shape(format!(
            "{} functions for {} views",
            fns.len(),
            table.n_views()
        )));
    }
    for f in fns {
        if f.n_segments() != table.n_segments() {
            return Err(Error::Shape(format!(
                "function for view {} has {} segments, table has {}",
                f.view,
                f.n_segments(),
                table.n_segments()
            )));
        }
    }
    Ok(fns.iter().map(|f| f.values.clone()).collect())
}

/// Evaluate all functionals at the given functions.
pub fn evaluate_functionals(table: &PairTable, fns: &[PiecewiseProbFn]) -> Result<Functionals> {
    let values = check_fns(table, fns)?;
    Ok(forward(table, &values, false).functionals)
}

/// The view's own per-segment values, verbatim.
pub fn eval_fsingle(f: &PiecewiseProbFn) -> Vec<f64> {
    f.values.clone()
}

/// Cross-view estimate of view `m` through view `b`.
pub fn eval_fcross(
    table: &PairTable,
    fns: &[PiecewiseProbFn],
    m: usize,
    b: usize,
) -> Result<Vec<f64>> {
    if m == b {
        return Err(Error::InvalidInput("cross view must differ from base".into()));
    }
    let values = check_fns(table, fns)?;
    Ok(forward(table, &values, false).functionals.cross[m][b].clone())
}

/// Multi-view estimate of view `m`: per segment, the mean joint probability
/// over each member pair's observed views.
pub fn eval_fmulti(table: &PairTable, fns: &[PiecewiseProbFn], m: usize) -> Result<Vec<f64>> {
    let values = check_fns(table, fns)?;
    Ok(forward(table, &values, false).functionals.multi[m].clone())
}

/// Geometric blend `sqrt(multi * mean(single, cross...))`, element-wise.
pub fn eval_fmix(single: &[f64], crosses: &[&[f64]], multi: &[f64]) -> Vec<f64> {
    let m_count = (crosses.len() + 1) as f64;
    (0..single.len())
        .map(|i| {
            let mut avg = single[i].clamp(0.0, 1.0);
            for c in crosses {
                avg += c[i].clamp(0.0, 1.0);
            }
            avg /= m_count;
            (multi[i].clamp(0.0, 1.0) * avg).sqrt()
        })
        .collect()
}

/// Loss components; `total` is what the optimizer descends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub consistency: f64,
    pub constraint: f64,
}

fn loss_from_forward(table: &PairTable, fwd: &Forward, cfg: &TrainConfig) -> LossParts {
    let m_count = table.n_views();
    let i_count = table.n_segments();
    let f = &fwd.functionals;

    let consistency = match cfg.consistency {
        ConsistencyLoss::Mixed => {
            let mut c1 = 0.0;
            let mut c2 = 0.0;
            for m in 0..m_count {
                for i in 0..i_count {
                    let x = f.mix[m][i];
                    c1 += (f.single[m][i] - x).powi(2);
                    for b in 0..m_count {
                        if b != m {
                            c2 += (f.cross[m][b][i] - x).powi(2);
                        }
                    }
                }
            }
            let norm = (m_count * i_count) as f64;
            (c1 / norm + c2 / norm) / m_count as f64
        }
        ConsistencyLoss::Direct => {
            let mut acc = 0.0;
            for m in 0..m_count {
                for i in 0..i_count {
                    let s = f.single[m][i];
                    acc += (s - f.multi[m][i]).powi(2);
                    for b in 0..m_count {
                        if b != m {
                            acc += (s - f.cross[m][b][i]).powi(2);
                        }
                    }
                }
            }
            acc / (m_count * i_count) as f64
        }
    };

    let mut constraint = 0.0;
    for m in 0..m_count {
        for i in 0..cfg.pin_low.min(i_count) {
            constraint += f.multi[m][i].powi(2) + f.single[m][i].powi(2);
            for b in 0..m_count {
                if b != m {
                    constraint += f.cross[m][b][i].powi(2);
                }
            }
        }
        for i in i_count.saturating_sub(cfg.pin_high)..i_count {
            constraint += (f.multi[m][i] - 1.0).powi(2) + (f.single[m][i] - 1.0).powi(2);
            for b in 0..m_count {
                if b != m {
                    constraint += (f.cross[m][b][i] - 1.0).powi(2);
                }
            }
        }
    }

    let total = cfg.lambda * consistency
        + if cfg.constraint_enabled {
            constraint
        } else {
            0.0
        };
    LossParts {
        total,
        consistency,
        constraint,
    }
}

/// Total/consistency/constraint losses of the given functions.
pub fn loss(table: &PairTable, fns: &[PiecewiseProbFn], cfg: &TrainConfig) -> Result<LossParts> {
    let values = check_fns(table, fns)?;
    Ok(loss_values(table, &values, cfg))
}

pub(crate) fn loss_values(table: &PairTable, values: &[Vec<f64>], cfg: &TrainConfig) -> LossParts {
    let fwd = forward(table, values, false);
    loss_from_forward(table, &fwd, cfg)
}

/// The direct consistency objective (single vs multi and single vs cross),
/// kept for the ablation comparison.
pub fn loss_variant_direct(
    table: &PairTable,
    fns: &[PiecewiseProbFn],
    cfg: &TrainConfig,
) -> Result<f64> {
    let values = check_fns(table, fns)?;
    let fwd = forward(table, &values, false);
    let direct_cfg = TrainConfig {
        consistency: ConsistencyLoss::Direct,
        ..cfg.clone()
    };
    Ok(loss_from_forward(table, &fwd, &direct_cfg).consistency)
}

/// Loss and its analytic gradient with respect to every segment value.
pub fn loss_and_grad(
    table: &PairTable,
    fns: &[PiecewiseProbFn],
    cfg: &TrainConfig,
) -> Result<(LossParts, Vec<Vec<f64>>)> {
    let values = check_fns(table, fns)?;
    Ok(loss_and_grad_values(table, &values, cfg))
}

pub(crate) fn loss_and_grad_values(
    table: &PairTable,
    values: &[Vec<f64>],
    cfg: &TrainConfig,
) -> (LossParts, Vec<Vec<f64>>) {
    let m_count = table.n_views();
    let i_count = table.n_segments();
    let fwd = forward(table, values, true);
    let parts = loss_from_forward(table, &fwd, cfg);
    let f = &fwd.functionals;

    // Adjoints of the segment-level estimators.
    let mut g_single = vec![vec![0.0; i_count]; m_count];
    let mut g_multi = vec![vec![0.0; i_count]; m_count];
    let mut g_cross = vec![vec![vec![0.0; i_count]; m_count]; m_count];

    match cfg.consistency {
        ConsistencyLoss::Mixed => {
            let coef = 2.0 * cfg.lambda / ((m_count * m_count * i_count) as f64);
            for m in 0..m_count {
                for i in 0..i_count {
                    let x = f.mix[m][i];
                    let s = f.single[m][i];
                    let mut g_x = -(s - x);
                    g_single[m][i] += coef * (s - x);
                    for b in 0..m_count {
                        if b != m {
                            let c = f.cross[m][b][i];
                            g_cross[m][b][i] += coef * (c - x);
                            g_x -= c - x;
                        }
                    }
                    let g_x = coef * g_x;
                    // mix = sqrt(multi * avg); avg = (single + sum cross) / M
                    let denom = (2.0 * x).max(MIX_GRAD_GUARD);
                    let mut avg = s.clamp(0.0, 1.0);
                    for b in 0..m_count {
                        if b != m {
                            avg += f.cross[m][b][i].clamp(0.0, 1.0);
                        }
                    }
                    avg /= m_count as f64;
                    g_multi[m][i] += g_x * avg / denom;
                    let g_avg = g_x * f.multi[m][i].clamp(0.0, 1.0) / denom;
                    g_single[m][i] += g_avg / m_count as f64;
                    for b in 0..m_count {
                        if b != m {
                            g_cross[m][b][i] += g_avg / m_count as f64;
                        }
                    }
                }
            }
        }
        ConsistencyLoss::Direct => {
            let coef = 2.0 * cfg.lambda / ((m_count * i_count) as f64);
            for m in 0..m_count {
                for i in 0..i_count {
                    let s = f.single[m][i];
                    let d_multi = s - f.multi[m][i];
                    g_single[m][i] += coef * d_multi;
                    g_multi[m][i] -= coef * d_multi;
                    for b in 0..m_count {
                        if b != m {
                            let d_cross = s - f.cross[m][b][i];
                            g_single[m][i] += coef * d_cross;
                            g_cross[m][b][i] -= coef * d_cross;
                        }
                    }
                }
            }
        }
    }

    if cfg.constraint_enabled {
        for m in 0..m_count {
            for i in 0..cfg.pin_low.min(i_count) {
                g_multi[m][i] += 2.0 * f.multi[m][i];
                g_single[m][i] += 2.0 * f.single[m][i];
                for b in 0..m_count {
                    if b != m {
                        g_cross[m][b][i] += 2.0 * f.cross[m][b][i];
                    }
                }
            }
            for i in i_count.saturating_sub(cfg.pin_high)..i_count {
                g_multi[m][i] += 2.0 * (f.multi[m][i] - 1.0);
                g_single[m][i] += 2.0 * (f.single[m][i] - 1.0);
                for b in 0..m_count {
                    if b != m {
                        g_cross[m][b][i] += 2.0 * (f.cross[m][b][i] - 1.0);
                    }
                }
            }
        }
    }

    // Push the adjoints down to the raw segment values.
    let mut grad = vec![vec![0.0; i_count]; m_count];
    for m in 0..m_count {
        for i in 0..i_count {
            grad[m][i] += g_single[m][i];
        }
    }
    for m in 0..m_count {
        for b in 0..m_count {
            if b == m {
                continue;
            }
            for i in 0..i_count {
                let g = g_cross[m][b][i];
                if g == 0.0 {
                    continue;
                }
                let n_co = fwd.cross_count[m][b][i];
                if n_co == 0 {
                    grad[m][i] += g;
                } else {
                    let share = g / n_co as f64;
                    for &t in table.segment_members(m, i) {
                        if let Some(seg_b) = table.segment(t, b) {
                            grad[b][seg_b] += share;
                        }
                    }
                }
            }
        }
    }
    for m in 0..m_count {
        for i in 0..i_count {
            let g = g_multi[m][i];
            if g == 0.0 {
                continue;
            }
            let members = table.segment_members(m, i);
            let share = g / members.len() as f64;
            for &t in members {
                let lo = fwd.index.offsets[t];
                let hi = fwd.index.offsets[t + 1];
                for pos in lo..hi {
                    grad[fwd.index.views[pos]][fwd.index.segs[pos]] +=
                        share * fwd.partials[pos];
                }
            }
        }
    }

    (parts, grad)
}

#[cfg(test)]
mod tests {
    use super::super::test_fixtures::{four_pair_table, step_fn};
    use super::super::{ConsistencyLoss, TrainConfig};
    use super::*;

    fn relaxed_cfg(segments: usize) -> TrainConfig {
        TrainConfig {
            segments,
            pin_low: 1,
            pin_high: 1,
            lambda: 1.0,
            ..TrainConfig::with_segments(segments.max(8))
        }
    }

    #[test]
    fn fjoint_hand_values() {
        assert!((eval_fjoint(&[0.5, 0.5]) - 0.5).abs() < 1e-15);
        let expected = 0.64 / 0.68;
        assert!((eval_fjoint(&[0.8, 0.8]) - expected).abs() < 1e-12);
        assert!((eval_fjoint(&[0.7]) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn fjoint_is_permutation_exact() {
        let a = eval_fjoint(&[0.9, 0.3, 0.62]);
        let b = eval_fjoint(&[0.62, 0.9, 0.3]);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn fsingle_is_identity() {
        let table = four_pair_table(true, 2);
        let f = step_fn(0, &table, vec![0.0, 1.0]);
        assert_eq!(eval_fsingle(&f), vec![0.0, 1.0]);
    }

    #[test]
    fn fcross_mixes_misaligned_segments() {
        // View-0 segment 0 holds pairs whose view-1 segments are {0, 1};
        // with view 1's function at (0, 1) the cross estimate is 0.5.
        let table = four_pair_table(false, 2);
        let fns = vec![
            step_fn(0, &table, vec![0.0, 1.0]),
            step_fn(1, &table, vec![0.0, 1.0]),
        ];
        let cross = eval_fcross(&table, &fns, 0, 1).unwrap();
        assert!((cross[0] - 0.5).abs() < 1e-12);
        assert!((cross[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fcross_equals_fsingle_when_views_align() {
        let table = four_pair_table(true, 2);
        let fns = vec![
            step_fn(0, &table, vec![0.0, 1.0]),
            step_fn(1, &table, vec![0.0, 1.0]),
        ];
        let cross = eval_fcross(&table, &fns, 0, 1).unwrap();
        assert_eq!(cross, eval_fsingle(&fns[0]));
    }

    #[test]
    fn fcross_falls_back_without_co_observed_pairs() {
        use crate::similarity::{KnnLists, Metric, SimilarityMatrix};
        let n = 4;
        let mut w = vec![0.0; n * n];
        let set = |buf: &mut Vec<f64>, i: usize, j: usize, v: f64| {
            buf[i * n + j] = v;
            buf[j * n + i] = v;
        };
        set(&mut w, 0, 1, 0.1);
        set(&mut w, 0, 2, 0.2);
        set(&mut w, 1, 3, 0.8);
        set(&mut w, 2, 3, 0.9);
        let sims = vec![
            SimilarityMatrix::from_dense(0, n, Metric::Cosine, w.clone(), vec![true; n]).unwrap(),
            // Sample 0 unobserved in view 1: both low-segment pairs vanish.
            SimilarityMatrix::from_dense(
                1,
                n,
                Metric::Cosine,
                w,
                vec![false, true, true, true],
            )
            .unwrap(),
        ];
        let neighbors = vec![vec![1, 2], vec![0, 3], vec![0, 3], vec![1, 2]];
        let knns = vec![
            KnnLists::from_neighbors(0, 2, neighbors.clone()),
            KnnLists::from_neighbors(1, 2, neighbors),
        ];
        let table = super::super::build_pair_table(&knns, &sims, 2).unwrap();
        // A 0.25 first value would not survive the trained-function
        // constructor; mutate after the fact to probe the fallback mean.
        let mut f0 = step_fn(0, &table, vec![0.0, 1.0]);
        f0.values = vec![0.25, 1.0];
        let f1 = step_fn(1, &table, vec![0.0, 1.0]);
        let cross = eval_fcross(&table, &[f0, f1], 0, 1).unwrap();
        assert_eq!(cross[0], 0.25, "empty segment falls back to fsingle");
    }

    #[test]
    fn fmulti_tracks_joint_on_aligned_fixture() {
        let table = four_pair_table(true, 2);
        let fns = vec![
            step_fn(0, &table, vec![0.0, 1.0]),
            step_fn(1, &table, vec![0.0, 1.0]),
        ];
        let multi = eval_fmulti(&table, &fns, 0).unwrap();
        assert!(multi[0] < 1e-9, "low segment joint should be near 0");
        assert!(multi[1] > 1.0 - 1e-9, "high segment joint should be near 1");

        // All functions at 0.5 leave the joint at 0.5.
        let mut h0 = step_fn(0, &table, vec![0.0, 1.0]);
        h0.values = vec![0.5, 0.5];
        let mut h1 = step_fn(1, &table, vec![0.0, 1.0]);
        h1.values = vec![0.5, 0.5];
        let multi = eval_fmulti(&table, &[h0, h1], 0).unwrap();
        for v in multi {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn fmulti_skips_missing_views() {
        use crate::similarity::{KnnLists, Metric, SimilarityMatrix};
        let n = 4;
        let mut w = vec![0.0; n * n];
        let set = |buf: &mut Vec<f64>, i: usize, j: usize, v: f64| {
            buf[i * n + j] = v;
            buf[j * n + i] = v;
        };
        set(&mut w, 0, 1, 0.1);
        set(&mut w, 0, 2, 0.2);
        set(&mut w, 1, 3, 0.8);
        set(&mut w, 2, 3, 0.9);
        let sims = vec![
            SimilarityMatrix::from_dense(0, n, Metric::Cosine, w.clone(), vec![true; n]).unwrap(),
            SimilarityMatrix::from_dense(
                1,
                n,
                Metric::Cosine,
                w,
                vec![false, true, true, true],
            )
            .unwrap(),
        ];
        let neighbors = vec![vec![1, 2], vec![0, 3], vec![0, 3], vec![1, 2]];
        let knns = vec![
            KnnLists::from_neighbors(0, 2, neighbors.clone()),
            KnnLists::from_neighbors(1, 2, neighbors),
        ];
        let table = super::super::build_pair_table(&knns, &sims, 2).unwrap();
        let f0 = step_fn(0, &table, vec![0.0, 1.0]);
        let f1 = step_fn(1, &table, vec![0.0, 1.0]);
        let multi = eval_fmulti(&table, &[f0.clone(), f1], 0).unwrap();
        // Segment 0 pairs miss view 1, so the joint reduces to view 0 alone.
        assert!((multi[0] - clamp_prob(0.0)).abs() < 1e-12);
    }

    #[test]
    fn fmix_fixed_point_and_substitution() {
        for v in [0.0, 0.3, 0.5, 1.0] {
            let out = eval_fmix(&[v], &[&[v]], &[v]);
            assert!((out[0] - v).abs() < 1e-12);
        }
        let out = eval_fmix(&[0.25], &[&[0.25]], &[1.0]);
        assert!((out[0] - 0.5).abs() < 1e-12);
        let out = eval_fmix(&[0.9], &[&[0.1]], &[0.7]);
        assert!(out[0] >= 0.0 && out[0] <= 1.0);
    }

    #[test]
    fn loss_vanishes_at_global_minimum() {
        let table = four_pair_table(true, 2);
        let fns = vec![
            step_fn(0, &table, vec![0.0, 1.0]),
            step_fn(1, &table, vec![0.0, 1.0]),
        ];
        let cfg = relaxed_cfg(2);
        let parts = loss(&table, &fns, &cfg).unwrap();
        assert!(parts.total < 1e-18, "total {}", parts.total);
        assert!(parts.consistency < 1e-18);
        assert!(parts.constraint < 1e-18);
    }

    #[test]
    fn consistency_grows_quadratically() {
        // (0, 0, 1, 1) on the aligned fixture is a consistency fixed point.
        let table = four_pair_table(true, 4);
        let base = vec![0.0, 0.0, 1.0, 1.0];
        let cfg = relaxed_cfg(4);
        let perturbed = |delta: f64| {
            let mut v = base.clone();
            v[1] += delta;
            let fns = vec![
                step_fn(0, &table, v),
                step_fn(1, &table, base.clone()),
            ];
            loss(&table, &fns, &cfg).unwrap().consistency
        };
        let at0 = perturbed(0.0);
        let small = perturbed(0.01) - at0;
        let large = perturbed(0.02) - at0;
        let ratio = large / small;
        assert!((ratio - 4.0).abs() < 0.7, "ratio {ratio}");
    }

    #[test]
    fn constraint_positive_on_uniform_ramp() {
        let table = four_pair_table(true, 4);
        let ramp = super::super::ramp_values(4);
        let fns = vec![
            step_fn(0, &table, ramp.clone()),
            step_fn(1, &table, ramp),
        ];
        let cfg = relaxed_cfg(4);
        let parts = loss(&table, &fns, &cfg).unwrap();
        assert!(parts.constraint > 0.0);
    }

    #[test]
    fn direct_variant_matches_manual_combination() {
        let table = four_pair_table(false, 2);
        let v0 = vec![0.0, 1.0];
        let v1 = vec![0.0, 1.0];
        let fns = vec![step_fn(0, &table, v0), step_fn(1, &table, v1)];
        let cfg = relaxed_cfg(2);
        let got = loss_variant_direct(&table, &fns, &cfg).unwrap();
        let mut expected = 0.0;
        for m in 0..2 {
            let s = eval_fsingle(&fns[m]);
            let mu = eval_fmulti(&table, &fns, m).unwrap();
            let c = eval_fcross(&table, &fns, m, 1 - m).unwrap();
            for i in 0..2 {
                expected += (s[i] - mu[i]).powi(2) + (s[i] - c[i]).powi(2);
            }
        }
        expected /= (2 * 2) as f64;
        assert!((got - expected).abs() < 1e-15);
        // Equal functionals mean zero direct loss.
        let aligned = four_pair_table(true, 2);
        let fns = vec![
            step_fn(0, &aligned, vec![0.0, 1.0]),
            step_fn(1, &aligned, vec![0.0, 1.0]),
        ];
        let zero = loss_variant_direct(&aligned, &fns, &cfg).unwrap();
        assert!(zero < 1e-18);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let table = four_pair_table(false, 4);
        let mut cfg = relaxed_cfg(4);
        cfg.lambda = 3.0;
        for consistency in [ConsistencyLoss::Mixed, ConsistencyLoss::Direct] {
            cfg.consistency = consistency;
            let values = vec![
                vec![0.0, 0.3, 0.7, 1.0],
                vec![0.0, 0.25, 0.65, 1.0],
            ];
            let (_, grad) = loss_and_grad_values(&table, &values, &cfg);
            let h = 1e-6;
            for m in 0..2 {
                for i in 1..3 {
                    let mut plus = values.clone();
                    plus[m][i] += h;
                    let mut minus = values.clone();
                    minus[m][i] -= h;
                    let fd = (loss_values(&table, &plus, &cfg).total
                        - loss_values(&table, &minus, &cfg).total)
                        / (2.0 * h);
                    let g = grad[m][i];
                    let denom = fd.abs().max(g.abs()).max(1e-9);
                    assert!(
                        ((fd - g) / denom).abs() < 1e-4,
                        "{consistency:?} view {m} seg {i}: fd {fd} vs grad {g}"
                    );
                }
            }
        }
    }
}
