use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Targets;
use crate::error::{Error, Result};
use crate::models::{Head, Predictor};
use crate::numeric::argmax;

pub const DEFAULT_CLAMP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Squared,
    Absolute,
    ZeroOne,
    CrossEntropy,
    Brier,
}

/// Pointwise loss `ℓ(prediction, target)`.
///
/// Regression losses compare a real prediction with a real target; the
/// classification losses compare a probability vector `q` with a class
/// index. Cross-entropy clamps `q_y` below at `clamp_eps`, which bounds the
/// loss by `-ln(clamp_eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossFn {
    pub kind: LossKind,
    pub clamp_eps: f64,
}

impl LossFn {
    pub const fn new(kind: LossKind) -> Self {
        Self {
            kind,
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }

    pub const fn squared() -> Self {
        Self::new(LossKind::Squared)
    }

    pub const fn absolute() -> Self {
        Self::new(LossKind::Absolute)
    }

    pub const fn zero_one() -> Self {
        Self::new(LossKind::ZeroOne)
    }

    pub const fn cross_entropy() -> Self {
        Self::new(LossKind::CrossEntropy)
    }

    pub const fn brier() -> Self {
        Self::new(LossKind::Brier)
    }

    pub fn is_classification(&self) -> bool {
        matches!(
            self.kind,
            LossKind::ZeroOne | LossKind::CrossEntropy | LossKind::Brier
        )
    }

    /// Upper bound of the loss on valid inputs (infinite for unbounded ones).
    pub fn bound(&self) -> f64 {
        match self.kind {
            LossKind::ZeroOne => 1.0,
            LossKind::Brier => 2.0,
            LossKind::CrossEntropy => -self.clamp_eps.ln(),
            LossKind::Squared | LossKind::Absolute => f64::INFINITY,
        }
    }

    pub fn real(&self, prediction: f64, target: f64) -> f64 {
        match self.kind {
            LossKind::Squared => (prediction - target) * (prediction - target),
            LossKind::Absolute => (prediction - target).abs(),
            _ => panic!("{self} is a classification loss"),
        }
    }

    pub fn class(&self, q: &[f64], y: usize) -> f64 {
        match self.kind {
            LossKind::ZeroOne => f64::from(u8::from(argmax(q) != y)),
            LossKind::CrossEntropy => -q[y].max(self.clamp_eps).ln(),
            LossKind::Brier => q
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let t = if k == y { 1.0 } else { 0.0 };
                    (p - t) * (p - t)
                })
                .sum(),
            _ => panic!("{self} is a regression loss"),
        }
    }

    /// `[ℓ(q, k)]_k` for every class `k`.
    pub fn per_class(&self, q: &[f64]) -> Vec<f64> {
        (0..q.len()).map(|k| self.class(q, k)).collect()
    }

    fn check_head(&self, head: Head) -> Result<()> {
        let ok = match head {
            Head::Regression => !self.is_classification(),
            Head::Classification => self.is_classification(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::HeadMismatch(format!(
                "{self} loss cannot score a {head:?} predictor"
            )))
        }
    }
}

impl fmt::Display for LossFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.kind {
            LossKind::Squared => "squared",
            LossKind::Absolute => "absolute",
            LossKind::ZeroOne => "zero-one",
            LossKind::CrossEntropy => "cross-entropy",
            LossKind::Brier => "brier",
        })
    }
}

impl FromStr for LossFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "squared" | "l2" | "mse" => LossKind::Squared,
            "absolute" | "l1" | "mae" => LossKind::Absolute,
            "zero-one" | "01" => LossKind::ZeroOne,
            "cross-entropy" | "ce" | "nll" => LossKind::CrossEntropy,
            "brier" => LossKind::Brier,
            other => return Err(Error::Config(format!("unknown loss {other:?}"))),
        };
        Ok(Self::new(kind))
    }
}

/// Meta-loss `L(estimate, realized)` used to score risk estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetaLoss {
    L1,
    L2,
}

impl MetaLoss {
    pub fn eval(self, estimate: f64, realized: f64) -> f64 {
        let r = estimate - realized;
        match self {
            MetaLoss::L1 => r.abs(),
            MetaLoss::L2 => r * r,
        }
    }

    pub fn mean(self, estimates: &[f64], realized: &[f64]) -> f64 {
        assert_eq!(estimates.len(), realized.len());
        estimates
            .iter()
            .zip(realized)
            .map(|(&e, &z)| self.eval(e, z))
            .sum::<f64>()
            / estimates.len().max(1) as f64
    }
}

/// Realized losses `z_i = ℓ(f̂(x_i), y_i)`.
pub fn sample_losses(f: &Predictor, loss: &LossFn, x: ArrayView2<'_, f64>, y: &Targets) -> Result<Vec<f64>> {
    loss.check_head(f.head())?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    match y {
        Targets::Real(t) => {
            let pred = f.predict(x)?;
            Ok(pred.iter().zip(t).map(|(&p, &t)| loss.real(p, t)).collect())
        }
        Targets::Class { labels, num_classes } => {
            if f.num_classes() != Some(*num_classes) {
                return Err(Error::invalid(format!(
                    "predictor has {:?} classes, targets have {num_classes}",
                    f.num_classes()
                )));
            }
            let q = f.predict_proba(x)?;
            Ok(class_losses(loss, q.view(), labels))
        }
    }
}

/// Realized classification losses from a probability matrix.
pub fn class_losses(loss: &LossFn, q: ArrayView2<'_, f64>, labels: &[usize]) -> Vec<f64> {
    q.rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &k)| loss.class(&row.to_vec(), k))
        .collect()
}

/// Per-row, per-class loss matrix `[ℓ(q_i, k)]`.
pub fn loss_matrix(loss: &LossFn, q: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(q.raw_dim());
    for (mut o, row) in out.rows_mut().into_iter().zip(q.rows()) {
        let v = row.to_vec();
        for (k, slot) in o.iter_mut().enumerate() {
            *slot = loss.class(&v, k);
        }
    }
    out
}

/// `Σ_k ℓ(q, k) p_k` for one row. Zero-one uses the closed form
/// `1 − p_{argmax q}`.
pub fn expected_class_loss(loss: &LossFn, q: ArrayView1<'_, f64>, p: ArrayView1<'_, f64>) -> f64 {
    let qv = q.to_vec();
    if loss.kind == LossKind::ZeroOne {
        return 1.0 - p[argmax(&qv)];
    }
    (0..qv.len()).map(|k| loss.class(&qv, k) * p[k]).sum()
}
