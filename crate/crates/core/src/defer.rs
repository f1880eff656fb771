//! Threshold rejector and rejection/deferral loss evaluation.
//!
//! A prediction is accepted when its estimated risk is at most the deferral
//! cost `c`; deferred rows pay `c`, accepted rows pay their realized loss.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::Targets;
use crate::error::{Error, Result};
use crate::models::{Head, Predictor};
use crate::riskcal::{sample_losses, LossFn, LossKind, RiskCalibrator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Accept,
    Defer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejector {
    pub calibrator: RiskCalibrator,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeferReport {
    pub cost: f64,
    pub rwr_loss: f64,
    pub reject_rate: f64,
    /// Mean realized loss over accepted rows; 0 when nothing was accepted.
    pub accepted_mean_loss: f64,
    pub all_deferred: bool,
    /// `mean min(ℓ_i, c)`: the loss of a rejector that knows every realized
    /// loss, a lower bound for any threshold rule.
    pub oracle_rwr_loss: f64,
    pub n: usize,
}

fn check_cost(cost: f64) -> Result<()> {
    if cost > 0.0 && cost.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("deferral cost must be positive, got {cost}")))
    }
}

/// `accept iff estimate ≤ cost` (ties accept).
pub fn decide(estimate: f64, cost: f64) -> Decision {
    if estimate <= cost {
        Decision::Accept
    } else {
        Decision::Defer
    }
}

impl Rejector {
    pub fn new(calibrator: RiskCalibrator, cost: f64) -> Result<Self> {
        check_cost(cost)?;
        Ok(Self { calibrator, cost })
    }

    pub fn decisions(&self, f: &Predictor, x: ArrayView2<'_, f64>) -> Result<Vec<Decision>> {
        Ok(self
            .calibrator
            .estimate(f, x)?
            .into_iter()
            .map(|g| decide(g, self.cost))
            .collect())
    }
}

/// Evaluates the threshold rule on precomputed estimates and realized losses.
pub fn evaluate_from(estimates: &[f64], losses: &[f64], cost: f64) -> Result<DeferReport> {
    check_cost(cost)?;
    if losses.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if estimates.len() != losses.len() {
        return Err(Error::DimensionMismatch {
            expected: losses.len(),
            got: estimates.len(),
        });
    }
    let n = losses.len();
    let (mut total, mut oracle, mut accepted_sum) = (0.0, 0.0, 0.0);
    let mut accepted = 0usize;
    for (&g, &l) in estimates.iter().zip(losses) {
        match decide(g, cost) {
            Decision::Accept => {
                total += l;
                accepted_sum += l;
                accepted += 1;
            }
            Decision::Defer => total += cost,
        }
        oracle += l.min(cost);
    }
    Ok(DeferReport {
        cost,
        rwr_loss: total / n as f64,
        reject_rate: (n - accepted) as f64 / n as f64,
        accepted_mean_loss: if accepted == 0 {
            0.0
        } else {
            accepted_sum / accepted as f64
        },
        all_deferred: accepted == 0,
        oracle_rwr_loss: oracle / n as f64,
        n,
    })
}

pub fn evaluate_rwr(
    rej: &Rejector,
    f: &Predictor,
    loss: &LossFn,
    x: ArrayView2<'_, f64>,
    y: &Targets,
) -> Result<DeferReport> {
    check_cost(rej.cost)?;
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let z = sample_losses(f, loss, x, y)?;
    let g = rej.calibrator.estimate(f, x)?;
    evaluate_from(&g, &z, rej.cost)
}

/// Learning-to-defer evaluation for a classifier under (clamped)
/// cross-entropy; the arithmetic is the same as [`evaluate_rwr`].
pub fn evaluate_l2d_classification(
    rej: &Rejector,
    f: &Predictor,
    loss: &LossFn,
    x: ArrayView2<'_, f64>,
    y: &Targets,
) -> Result<DeferReport> {
    if f.head() != Head::Classification {
        return Err(Error::HeadMismatch("deferral evaluation needs a classifier".into()));
    }
    if loss.kind != LossKind::CrossEntropy {
        return Err(Error::invalid(format!(
            "classification deferral is scored with cross-entropy, got {loss}"
        )));
    }
    evaluate_rwr(rej, f, loss, x, y)
}

/// One report per cost from a single set of estimates and realized losses.
pub fn sweep_from(estimates: &[f64], losses: &[f64], costs: &[f64]) -> Result<Vec<DeferReport>> {
    if costs.is_empty() {
        return Err(Error::invalid("cost sweep needs at least one cost"));
    }
    if costs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("costs must be strictly increasing"));
    }
    costs.iter().map(|&c| evaluate_from(estimates, losses, c)).collect()
}

/// Cost sweep for a calibrator: estimates are computed once and reused.
pub fn sweep_costs(
    calibrator: &RiskCalibrator,
    f: &Predictor,
    loss: &LossFn,
    x: ArrayView2<'_, f64>,
    y: &Targets,
    costs: &[f64],
) -> Result<Vec<DeferReport>> {
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let z = sample_losses(f, loss, x, y)?;
    let g = calibrator.estimate(f, x)?;
    sweep_from(&g, &z, costs)
}
