//! Clustering evaluation against ground-truth labels: pairwise and BCubed
//! precision/recall/F, normalized mutual information and adjusted Rand
//! index. All four return exactly 1.0 when the two partitions are identical
//! up to relabeling.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Precision/recall/F triple. `degenerate` flags an empty denominator that
/// was reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predicted labels vs {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty label vectors".into()));
    }
    Ok(())
}

/// True when the two labelings induce the same partition.
fn same_partition(pred: &[usize], truth: &[usize]) -> bool {
    let mut fwd: HashMap<usize, usize> = HashMap::new();
    let mut bwd: HashMap<usize, usize> = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        if *fwd.entry(p).or_insert(t) != t || *bwd.entry(t).or_insert(p) != p {
            return false;
        }
    }
    true
}

/// Precision/recall/F over all unordered sample pairs.
pub fn pairwise_prf(pred: &[usize], truth: &[usize]) -> Result<PrfScores> {
    check_lengths(pred, truth)?;
    if same_partition(pred, truth) {
        return Ok(PrfScores {
            precision: 1.0,
            recall: 1.0,
            fscore: 1.0,
            degenerate: false,
        });
    }
    let n = pred.len();
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for i in 0..n {
        for j in (i + 1)..n {
            let same_pred = pred[i] == pred[j];
            let same_truth = truth[i] == truth[j];
            match (same_pred, same_truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
    }
    let mut degenerate = false;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        degenerate = true;
        0.0
    };
    let recall = if tp + fneg > 0 {
        tp as f64 / (tp + fneg) as f64
    } else {
        degenerate = true;
        0.0
    };
    Ok(PrfScores {
        precision,
        recall,
        fscore: harmonic(precision, recall),
        degenerate,
    })
}

/// Per-item BCubed precision/recall/F.
pub fn bcubed_prf(pred: &[usize], truth: &[usize]) -> Result<PrfScores> {
    check_lengths(pred, truth)?;
    if same_partition(pred, truth) {
        return Ok(PrfScores {
            precision: 1.0,
            recall: 1.0,
            fscore: 1.0,
            degenerate: false,
        });
    }
    let n = pred.len();
    let mut cluster_sizes: HashMap<usize, f64> = HashMap::new();
    let mut class_sizes: HashMap<usize, f64> = HashMap::new();
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *cluster_sizes.entry(p).or_insert(0.0) += 1.0;
        *class_sizes.entry(t).or_insert(0.0) += 1.0;
        *joint.entry((p, t)).or_insert(0.0) += 1.0;
    }
    let mut precision = 0.0;
    let mut recall = 0.0;
    for (&p, &t) in pred.iter().zip(truth) {
        let overlap = joint[&(p, t)];
        precision += overlap / cluster_sizes[&p];
        recall += overlap / class_sizes[&t];
    }
    precision /= n as f64;
    recall /= n as f64;
    Ok(PrfScores {
        precision,
        recall,
        fscore: harmonic(precision, recall),
        degenerate: false,
    })
}

/// Normalization of the mutual information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmiNormalization {
    /// `I / sqrt(H(pred) * H(truth))`
    #[default]
    Sqrt,
    /// `I / max(H(pred), H(truth))`
    Max,
    /// `2I / (H(pred) + H(truth))`
    Arithmetic,
}

impl std::str::FromStr for NmiNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sqrt" => Ok(NmiNormalization::Sqrt),
            "max" => Ok(NmiNormalization::Max),
            "arithmetic" | "mean" => Ok(NmiNormalization::Arithmetic),
            other => Err(Error::InvalidInput(format!(
                "unknown nmi normalization {other:?}"
            ))),
        }
    }
}

fn entropy(counts: &BTreeMap<usize, u64>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information (natural logs).
pub fn nmi(pred: &[usize], truth: &[usize], norm: NmiNormalization) -> Result<f64> {
    check_lengths(pred, truth)?;
    let identical = same_partition(pred, truth);
    let n = pred.len() as f64;
    let mut pred_counts: BTreeMap<usize, u64> = BTreeMap::new();
    let mut truth_counts: BTreeMap<usize, u64> = BTreeMap::new();
    let mut joint: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *pred_counts.entry(p).or_insert(0) += 1;
        *truth_counts.entry(t).or_insert(0) += 1;
        *joint.entry((p, t)).or_insert(0) += 1;
    }
    let h_pred = entropy(&pred_counts, n);
    let h_truth = entropy(&truth_counts, n);
    if h_pred <= 0.0 || h_truth <= 0.0 {
        // A constant partition carries no information to normalize by.
        return Ok(if identical { 1.0 } else { 0.0 });
    }
    if identical {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (&(p, t), &c) in &joint {
        let p_joint = c as f64 / n;
        let p_p = pred_counts[&p] as f64 / n;
        let p_t = truth_counts[&t] as f64 / n;
        mi += p_joint * (p_joint / (p_p * p_t)).ln();
    }
    let denom = match norm {
        NmiNormalization::Sqrt => (h_pred * h_truth).sqrt(),
        NmiNormalization::Max => h_pred.max(h_truth),
        NmiNormalization::Arithmetic => 0.5 * (h_pred + h_truth),
    };
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn comb2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index from the contingency table.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if same_partition(pred, truth) {
        return Ok(1.0);
    }
    let n = pred.len() as u64;
    let mut pred_counts: BTreeMap<usize, u64> = BTreeMap::new();
    let mut truth_counts: BTreeMap<usize, u64> = BTreeMap::new();
    let mut joint: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *pred_counts.entry(p).or_insert(0) += 1;
        *truth_counts.entry(t).or_insert(0) += 1;
        *joint.entry((p, t)).or_insert(0) += 1;
    }
    let sum_ij: f64 = joint.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = pred_counts.values().map(|&c| comb2(c)).sum();
    let sum_b: f64 = truth_counts.values().map(|&c| comb2(c)).sum();
    let expected = sum_a * sum_b / comb2(n);
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom.abs() < f64::EPSILON {
        return Ok(0.0);
    }
    Ok((sum_ij - expected) / denom)
}

/// Full metric report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub pairwise: PrfScores,
    pub bcubed: PrfScores,
    pub nmi: f64,
    pub ari: f64,
}

pub fn evaluate(pred: &[usize], truth: &[usize], norm: NmiNormalization) -> Result<MetricReport> {
    Ok(MetricReport {
        pairwise: pairwise_prf(pred, truth)?,
        bcubed: bcubed_prf(pred, truth)?,
        nmi: nmi(pred, truth, norm)?,
        ari: ari(pred, truth)?,
    })
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidInput(format!("metric serialization: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_scores_exactly_one() {
        let truth = [0, 0, 1, 1, 2, 2];
        let pred = [5, 5, 9, 9, 2, 2]; // same partition, different labels
        let report = evaluate(&pred, &truth, NmiNormalization::Sqrt).unwrap();
        assert_eq!(report.pairwise.fscore, 1.0);
        assert_eq!(report.bcubed.fscore, 1.0);
        assert_eq!(report.nmi, 1.0);
        assert_eq!(report.ari, 1.0);
    }

    #[test]
    fn pairwise_hand_fixture() {
        // One big cluster vs two balanced clusters of two.
        let pred = [0, 0, 0, 0];
        let truth = [0, 0, 1, 1];
        let s = pairwise_prf(&pred, &truth).unwrap();
        assert!((s.precision - 2.0 / 6.0).abs() < 1e-12);
        assert!((s.recall - 1.0).abs() < 1e-12);
        assert!((s.fscore - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pairwise_all_singletons_has_zero_recall() {
        let pred = [0, 1, 2, 3];
        let truth = [0, 0, 1, 1];
        let s = pairwise_prf(&pred, &truth).unwrap();
        assert_eq!(s.recall, 0.0);
        assert!(s.degenerate, "no predicted positives");
    }

    #[test]
    fn bcubed_hand_fixture() {
        let pred = [0, 0, 0];
        let truth = [0, 0, 1];
        let s = bcubed_prf(&pred, &truth).unwrap();
        assert!((s.precision - 5.0 / 9.0).abs() < 1e-12);
        assert!((s.recall - 1.0).abs() < 1e-12);
        assert!((s.fscore - 5.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn bcubed_singletons_recall_is_mean_inverse_class_size() {
        let pred = [0, 1, 2, 3];
        let truth = [0, 0, 1, 1];
        let s = bcubed_prf(&pred, &truth).unwrap();
        assert!((s.precision - 1.0).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nmi_matches_contingency_oracle() {
        let pred = [0, 0, 1, 1, 1];
        let truth = [0, 0, 0, 1, 1];
        // Independent computation straight from the definition.
        let n = 5.0f64;
        let p_pred = [2.0 / n, 3.0 / n];
        let p_truth = [3.0 / n, 2.0 / n];
        let cells = [(0usize, 0usize, 2.0f64), (1, 0, 1.0), (1, 1, 2.0)];
        let h = |ps: &[f64]| -ps.iter().map(|p| p * p.ln()).sum::<f64>();
        let mut mi = 0.0;
        for &(i, j, c) in &cells {
            let pij = c / n;
            mi += pij * f64::ln(pij / (p_pred[i] * p_truth[j]));
        }
        let expected = mi / (h(&p_pred) * h(&p_truth)).sqrt();
        let got = nmi(&pred, &truth, NmiNormalization::Sqrt).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - 0.432538).abs() < 1e-5);
    }

    #[test]
    fn nmi_degenerate_entropy_rules() {
        // Constant both ways and identical -> 1.
        assert_eq!(nmi(&[3, 3], &[7, 7], NmiNormalization::Sqrt).unwrap(), 1.0);
        // Constant prediction against a split truth -> 0.
        assert_eq!(
            nmi(&[1, 1, 1, 1], &[0, 0, 1, 1], NmiNormalization::Sqrt).unwrap(),
            0.0
        );
    }

    #[test]
    fn ari_hand_fixture_two_routes() {
        let pred = [0, 0, 0, 1, 1, 1];
        let truth = [0, 0, 1, 1, 2, 2];
        // Pair-counting route: tp=2 fp=4 fn=1 tn=8.
        let (tp, fp, fneg, tn) = (2.0f64, 4.0, 1.0, 8.0);
        let pair_route = 2.0 * (tp * tn - fneg * fp)
            / ((tp + fneg) * (fneg + tn) + (tp + fp) * (fp + tn));
        assert!((pair_route - 8.0 / 33.0).abs() < 1e-12);
        let got = ari(&pred, &truth).unwrap();
        assert!((got - 8.0 / 33.0).abs() < 1e-12);
    }

    #[test]
    fn ari_single_cluster_vs_balanced_truth_is_chance() {
        let pred = [0, 0, 0, 0];
        let truth = [0, 0, 1, 1];
        assert_eq!(ari(&pred, &truth).unwrap(), 0.0);
    }

    #[test]
    fn metrics_reject_length_mismatch() {
        assert!(pairwise_prf(&[0, 1], &[0]).is_err());
        assert!(bcubed_prf(&[0], &[0, 1]).is_err());
        assert!(nmi(&[0, 1], &[0, 1, 2], NmiNormalization::Sqrt).is_err());
        assert!(ari(&[], &[]).is_err());
    }

    #[test]
    fn report_serializes_expected_shape() {
        let report = evaluate(&[0, 0, 1], &[0, 0, 1], NmiNormalization::Sqrt).unwrap();
        let json = report.to_json().unwrap();
        assert!(json.contains("\"pairwise\""));
        assert!(json.contains("\"bcubed\""));
        assert!(json.contains("\"nmi\""));
        assert!(json.contains("\"ari\""));
        assert!(json.contains("\"precision\""));
    }
}
