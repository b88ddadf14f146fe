//! Projected gradient training of the per-view probability functions.
//!
//! Full-batch momentum SGD with weight decay on the interior segment values;
//! endpoints stay pinned at 0 and 1. After every step the parameters are
//! clamped to [0, 1] and made nondecreasing by a pool-adjacent-violators
//! pass, so the step-function constraints hold at every epoch, not just at
//! convergence.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::functional::loss_and_grad_values;
use super::{ramp_values, PairTable, PiecewiseProbFn, TrainConfig};
use crate::{Error, Result};

/// L2 isotonic projection (pool adjacent violators), in place.
pub fn isotonic_projection(values: &mut [f64]) {
    let n = values.len();
    if n < 2 {
        return;
    }
    let mut level: Vec<f64> = Vec::with_capacity(n);
    let mut count: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = values[i];
        let mut c = 1usize;
        while let Some(&last) = level.last() {
            if last > v {
                let lc = count.pop().unwrap();
                let lv = level.pop().unwrap();
                v = (lv * lc as f64 + v * c as f64) / (lc + c) as f64;
                c += lc;
            } else {
                break;
            }
        }
        level.push(v);
        count.push(c);
    }
    let mut pos = 0;
    for (v, c) in level.iter().zip(&count) {
        for _ in 0..*c {
            values[pos] = *v;
            pos += 1;
        }
    }
}

fn project(values: &mut [f64]) {
    let n = values.len();
    for v in values.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    values[0] = 0.0;
    values[n - 1] = 1.0;
    isotonic_projection(values);
}

fn check_projected(values: &[f64]) -> Result<()> {
    let n = values.len();
    let ok = values[0] == 0.0
        && values[n - 1] == 1.0
        && values.iter().all(|v| (0.0..=1.0).contains(v))
        && values.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::Divergence(
            "projection produced an infeasible function".into(),
        ))
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub consistency: f64,
    pub constraint: f64,
}

/// Trained per-view functions plus the cross-view tables used by view
/// completion, the configuration that produced them, and the loss history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub functions: Vec<PiecewiseProbFn>,
    /// `cross[m][b][i]`: view `b`'s estimate seen from view `m`'s segment
    /// `i`; `cross[m][m]` is empty.
    pub cross: Vec<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub log: Vec<EpochLoss>,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidInput(format!("model serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TrainedModel = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("model deserialization: {e}")))?;
        for f in &model.functions {
            f.validate()?;
        }
        Ok(model)
    }

    pub fn write_loss_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "epoch,total,consistency,constraint")?;
        for row in &self.log {
            writeln!(
                out,
                "{},{},{},{}",
                row.epoch, row.total, row.consistency, row.constraint
            )?;
        }
        Ok(())
    }
}

/// Fit every view's step function by projected full-batch gradient descent.
///
/// Deterministic for a given table and config. Fails with a divergence error
/// if the loss stops being finite.
pub fn train(table: &PairTable, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if cfg.segments != table.n_segments() {
        return Err(Error::Shape(format!(
            "config wants {} segments, table was built with {}",
            cfg.segments,
            table.n_segments()
        )));
    }
    let m_count = table.n_views();
    let i_count = table.n_segments();

    let mut values: Vec<Vec<f64>> = (0..m_count).map(|_| ramp_values(i_count)).collect();
    let mut velocity = vec![vec![0.0; i_count]; m_count];
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let (parts, grad) = loss_and_grad_values(table, &values, cfg);
        if !parts.total.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss at epoch {epoch}"
            )));
        }
        log.push(EpochLoss {
            epoch,
            total: parts.total,
            consistency: parts.consistency,
            constraint: parts.constraint,
        });
        if cfg.early_stop_window > 0 && epoch >= cfg.early_stop_window {
            let before: &EpochLoss = &log[epoch - cfg.early_stop_window];
            if before.total - parts.total < cfg.early_stop_tolerance {
                break;
            }
        }
        for m in 0..m_count {
            for i in 1..i_count - 1 {
                let g = grad[m][i] + cfg.weight_decay * values[m][i];
                velocity[m][i] = cfg.momentum * velocity[m][i] + g;
                values[m][i] -= cfg.learning_rate * velocity[m][i];
            }
            project(&mut values[m]);
            check_projected(&values[m])?;
        }
    }

    let functions: Vec<PiecewiseProbFn> = (0..m_count)
        .map(|m| {
            PiecewiseProbFn::new(
                m,
                table.seg_bounds(m).to_vec(),
                table.seg_means(m).to_vec(),
                values[m].clone(),
            )
        })
        .collect::<Result<_>>()?;
    let functionals = super::functional::evaluate_functionals(table, &functions)?;

    Ok(TrainedModel {
        config: cfg.clone(),
        functions,
        cross: functionals.cross,
        log,
    })
}
