use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::loss::{expected_class_loss, sample_losses, LossFn};
use super::temperature::{fit_temperature, scaled_probabilities, TemperatureFit};
use crate::data::{Standardizer, Targets};
use crate::error::{Error, Result};
use crate::models::{self, Head, ModelSpec, Predictor, TrainReport};

/// Where a regression-based calibrator reads its inputs from.
#[derive(Debug, Clone, Copy)]
pub enum InputSource<'a> {
    Raw,
    /// Last-hidden-layer features of this perceptron.
    Representation(&'a Predictor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum InputMode {
    Raw,
    Representation {
        source: Box<Predictor>,
        standardizer: Standardizer,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum Strategy {
    /// Regress realized losses on inputs.
    RegressionBased { model: Predictor, input: InputMode },
    /// `Σ_k ℓ(f̂(x), k) p̂(x)_k`, optionally with temperature-scaled `p̂`.
    Plugin {
        model: Predictor,
        temperature: Option<f64>,
    },
}

/// A fitted estimator of the conditional risk `g(x) = E[ℓ(f̂(x), Y) | x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCalibrator {
    pub strategy: Strategy,
    pub loss: LossFn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibReport {
    pub mae: f64,
    pub mse: f64,
    pub n: usize,
}

pub const CALIBRATOR_FORMAT: &str = "riskcal-calibrator";

/// Fails when two row sets overlap (e.g. predictor and calibrator rows).
pub fn check_disjoint(a: &[usize], b: &[usize]) -> Result<()> {
    let set: std::collections::HashSet<_> = a.iter().collect();
    match b.iter().find(|r| set.contains(r)) {
        Some(r) => Err(Error::invalid(format!(
            "row {r} is used both for the predictor and the calibrator"
        ))),
        None => Ok(()),
    }
}

fn representation(source: &Predictor, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    source.extract_representation(x)
}

/// Fits a regression model to the realized losses of `f` on calibration rows.
pub fn fit_regression_calibrator(
    spec: &ModelSpec,
    loss: &LossFn,
    f: &Predictor,
    x_cal: ArrayView2<'_, f64>,
    y_cal: &Targets,
    input: InputSource<'_>,
) -> Result<(RiskCalibrator, TrainReport)> {
    if x_cal.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if spec.head != Head::Regression {
        return Err(Error::HeadMismatch(
            "a regression-based calibrator needs a regression head".into(),
        ));
    }
    let z = sample_losses(f, loss, x_cal, y_cal)?;
    let (inputs, mode) = match input {
        InputSource::Raw => (x_cal.to_owned(), InputMode::Raw),
        InputSource::Representation(source) => {
            let rep = representation(source, x_cal)?;
            let standardizer = Standardizer::fit(rep.view())?;
            (
                standardizer.apply(rep.view())?,
                InputMode::Representation {
                    source: Box::new(source.clone()),
                    standardizer,
                },
            )
        }
    };
    let (model, report) = models::fit(spec, inputs.view(), &Targets::Real(z))?;
    Ok((
        RiskCalibrator {
            strategy: Strategy::RegressionBased { model, input: mode },
            loss: *loss,
        },
        report,
    ))
}

/// Plug-in risk `Σ_k ℓ(q_i, k) p_ik` from the predictor's probabilities `q`
/// and the estimated conditional distribution `p`.
pub fn plugin_risk_from_probs(loss: &LossFn, q: ArrayView2<'_, f64>, p: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if !loss.is_classification() {
        return Err(Error::HeadMismatch(format!(
            "plug-in estimation needs a classification loss, got {loss}"
        )));
    }
    if q.dim() != p.dim() {
        return Err(Error::invalid(format!(
            "probability shapes differ: {:?} vs {:?}",
            q.dim(),
            p.dim()
        )));
    }
    Ok(q.rows()
        .into_iter()
        .zip(p.rows())
        .map(|(qr, pr)| expected_class_loss(loss, qr, pr))
        .collect())
}

pub fn plugin_risk(f: &Predictor, p_hat: &Predictor, loss: &LossFn, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if f.num_classes() != p_hat.num_classes() {
        return Err(Error::invalid(format!(
            "class counts differ: predictor {:?}, probability model {:?}",
            f.num_classes(),
            p_hat.num_classes()
        )));
    }
    let q = f.predict_proba(x)?;
    let p = p_hat.predict_proba(x)?;
    plugin_risk_from_probs(loss, q.view(), p.view())
}

impl RiskCalibrator {
    pub fn plugin(p_hat: Predictor, loss: &LossFn) -> Result<Self> {
        if p_hat.head() != Head::Classification {
            return Err(Error::HeadMismatch(
                "plug-in calibration needs a classification model".into(),
            ));
        }
        if !loss.is_classification() {
            return Err(Error::HeadMismatch(format!("{loss} is not a classification loss")));
        }
        Ok(Self {
            strategy: Strategy::Plugin {
                model: p_hat,
                temperature: None,
            },
            loss: *loss,
        })
    }

    /// Plug-in calibrator whose probabilities are temperature-scaled on the
    /// given calibration rows.
    pub fn plugin_scaled(
        p_hat: Predictor,
        loss: &LossFn,
        x_cal: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<(Self, TemperatureFit)> {
        let fit = fit_temperature(&p_hat, x_cal, labels)?;
        let mut cal = Self::plugin(p_hat, loss)?;
        if let Strategy::Plugin { temperature, .. } = &mut cal.strategy {
            *temperature = Some(fit.temperature);
        }
        Ok((cal, fit))
    }

    /// Short identifier, e.g. `RF`, `rep:MLP`, `plugin:SoftmaxMLP2`,
    /// `plugin-ts:SoftmaxLinear`.
    pub fn label(&self) -> String {
        match &self.strategy {
            Strategy::RegressionBased { model, input } => match input {
                InputMode::Raw => model.family().to_string(),
                InputMode::Representation { .. } => format!("rep:{}", model.family()),
            },
            Strategy::Plugin { model, temperature } => match temperature {
                None => format!("plugin:{}", model.family()),
                Some(_) => format!("plugin-ts:{}", model.family()),
            },
        }
    }

    /// Probabilities used by a plug-in calibrator.
    pub fn probabilities(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match &self.strategy {
            Strategy::Plugin { model, temperature } => match temperature {
                None => model.predict_proba(x),
                Some(t) => Ok(scaled_probabilities(model.predict_logits(x)?.view(), *t)),
            },
            Strategy::RegressionBased { .. } => Err(Error::invalid(
                "a regression-based calibrator has no class probabilities",
            )),
        }
    }

    /// Risk estimates `ĝ(x)` for predictor `f` on rows `x`.
    pub fn estimate(&self, f: &Predictor, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        match &self.strategy {
            Strategy::RegressionBased { model, input } => {
                let raw = match input {
                    InputMode::Raw => model.predict(x)?,
                    InputMode::Representation {
                        source,
                        standardizer,
                    } => {
                        let rep = representation(source, x)?;
                        model.predict(standardizer.apply(rep.view())?.view())?
                    }
                };
                // All supported losses are nonnegative; negative risk is an
                // artifact of the regression fit.
                Ok(raw.into_iter().map(|v| v.max(0.0)).collect())
            }
            Strategy::Plugin { model, .. } => {
                if f.num_classes() != model.num_classes() {
                    return Err(Error::invalid(format!(
                        "class counts differ: predictor {:?}, probability model {:?}",
                        f.num_classes(),
                        model.num_classes()
                    )));
                }
                let q = f.predict_proba(x)?;
                let p = self.probabilities(x)?;
                plugin_risk_from_probs(&self.loss, q.view(), p.view())
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        models::save_json(self, CALIBRATOR_FORMAT, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        models::load_json(CALIBRATOR_FORMAT, path.as_ref())
    }
}

/// Mean absolute and squared error of estimates against realized losses.
pub fn calib_error_from(estimates: &[f64], realized: &[f64]) -> Result<CalibReport> {
    if estimates.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if estimates.len() != realized.len() {
        return Err(Error::DimensionMismatch {
            expected: realized.len(),
            got: estimates.len(),
        });
    }
    let n = estimates.len();
    let (mut abs, mut sq) = (0.0, 0.0);
    for (e, z) in estimates.iter().zip(realized) {
        let r = e - z;
        abs += r.abs();
        sq += r * r;
    }
    Ok(CalibReport {
        mae: abs / n as f64,
        mse: sq / n as f64,
        n,
    })
}

pub fn calib_error(
    g: &RiskCalibrator,
    f: &Predictor,
    loss: &LossFn,
    x: ArrayView2<'_, f64>,
    y: &Targets,
) -> Result<CalibReport> {
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let z = sample_losses(f, loss, x, y)?;
    calib_error_from(&g.estimate(f, x)?, &z)
}
