//! Predictors with a shared fit/predict contract: least squares, a CART
//! regression forest, and ReLU perceptrons with regression or softmax heads.

mod forest;
mod linear;
mod mlp;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use forest::{Forest, Tree};
pub use linear::LinearModel;
pub use mlp::{Dense, GradientCheck, Mlp};

use crate::data::Targets;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    LR,
    RF,
    MLP,
    MLP2,
    SoftmaxLinear,
    SoftmaxMLP,
    SoftmaxMLP2,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::LR,
        Family::RF,
        Family::MLP,
        Family::MLP2,
        Family::SoftmaxLinear,
        Family::SoftmaxMLP,
        Family::SoftmaxMLP2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::LR => "LR",
            Family::RF => "RF",
            Family::MLP => "MLP",
            Family::MLP2 => "MLP2",
            Family::SoftmaxLinear => "SoftmaxLinear",
            Family::SoftmaxMLP => "SoftmaxMLP",
            Family::SoftmaxMLP2 => "SoftmaxMLP2",
        }
    }

    /// Hidden layer widths for the perceptron families.
    pub fn hidden_widths(self) -> Option<&'static [usize]> {
        match self {
            Family::LR | Family::RF => None,
            Family::SoftmaxLinear => Some(&[]),
            Family::MLP | Family::SoftmaxMLP => Some(&[64]),
            Family::MLP2 | Family::SoftmaxMLP2 => Some(&[64, 64]),
        }
    }

    pub fn default_head(self) -> Head {
        match self {
            Family::SoftmaxLinear | Family::SoftmaxMLP | Family::SoftmaxMLP2 => {
                Head::Classification
            }
            _ => Head::Regression,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model family {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_trees: usize,
    pub min_samples_split: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub tolerance: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            min_samples_split: 2,
            learning_rate: 5e-4,
            batch_size: 256,
            max_epochs: 800,
            patience: 10,
            tolerance: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub head: Head,
    pub hyper: Hyperparams,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(family: Family, seed: u64) -> Self {
        Self {
            family,
            head: family.default_head(),
            hyper: Hyperparams::default(),
            seed,
        }
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.family {
            Family::LR | Family::RF => self.head == Head::Regression,
            Family::SoftmaxLinear | Family::SoftmaxMLP | Family::SoftmaxMLP2 => {
                self.head == Head::Classification
            }
            Family::MLP | Family::MLP2 => true,
        };
        if !ok {
            return Err(Error::invalid(format!(
                "{} does not support a {:?} head",
                self.family, self.head
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_loss: f64,
    pub epochs: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Linear(LinearModel),
    Forest(Forest),
    Mlp(Mlp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub spec: ModelSpec,
    pub input_dim: usize,
    /// Number of classes for classification heads, 1 otherwise.
    pub outputs: usize,
    model: Option<Model>,
}

pub const FORMAT_NAME: &str = "riskcal-predictor";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Saved<T> {
    format: String,
    version: u32,
    byte_order: String,
    #[serde(flatten)]
    body: T,
}

/// Writes any model-like value to a versioned JSON file.
pub(crate) fn save_json<T: Serialize>(body: &T, format: &str, path: &Path) -> Result<()> {
    let saved = Saved {
        format: format.to_string(),
        version: FORMAT_VERSION,
        byte_order: crate::codec::BYTE_ORDER.to_string(),
        body,
    };
    let text = serde_json::to_string_pretty(&saved)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn load_json<T: for<'de> Deserialize<'de>>(format: &str, path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let saved: Saved<T> = serde_json::from_str(&text)?;
    if saved.format != format {
        return Err(Error::Serialization(format!(
            "expected a {format} file, found {}",
            saved.format
        )));
    }
    if saved.version != FORMAT_VERSION {
        return Err(Error::Serialization(format!(
            "unsupported {format} version {}",
            saved.version
        )));
    }
    if saved.byte_order != crate::codec::BYTE_ORDER {
        return Err(Error::Serialization(format!(
            "unsupported byte order {}",
            saved.byte_order
        )));
    }
    Ok(saved.body)
}

/// Fits a model described by `spec` on `(x, y)`.
pub fn fit(spec: &ModelSpec, x: ArrayView2<'_, f64>, y: &Targets) -> Result<(Predictor, TrainReport)> {
    spec.validate()?;
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyDataset);
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let outputs = match (spec.head, y) {
        (Head::Regression, Targets::Real(_)) => 1,
        (Head::Classification, Targets::Class { labels, num_classes }) => {
            if let Some(&bad) = labels.iter().find(|&&k| k >= *num_classes) {
                return Err(Error::invalid(format!(
                    "label {bad} out of range for {num_classes} classes"
                )));
            }
            *num_classes
        }
        (head, _) => {
            return Err(Error::HeadMismatch(format!(
                "{head:?} head cannot be trained on these targets"
            )))
        }
    };
    let (model, report) = match spec.family {
        Family::LR => {
            let (m, r) = LinearModel::fit(x, y.real().expect("checked"))?;
            (Model::Linear(m), r)
        }
        Family::RF => {
            let (m, r) = Forest::fit(x, y.real().expect("checked"), &spec.hyper, spec.seed)?;
            (Model::Forest(m), r)
        }
        _ => {
            let (m, r) = Mlp::fit(spec, x, y, outputs)?;
            (Model::Mlp(m), r)
        }
    };
    Ok((
        Predictor {
            spec: spec.clone(),
            input_dim: x.ncols(),
            outputs,
            model: Some(model),
        },
        report,
    ))
}

/// Central-difference check of the perceptron's backpropagation at its
/// initial parameters on the batch `(x, y)` (inputs used as given).
pub fn gradient_check(spec: &ModelSpec, x: ArrayView2<'_, f64>, y: &Targets) -> Result<GradientCheck> {
    spec.validate()?;
    if spec.family.hidden_widths().is_none() {
        return Err(Error::invalid(format!(
            "{} has no gradient-trained parameters",
            spec.family
        )));
    }
    let outputs = match spec.head {
        Head::Regression => 1,
        Head::Classification => y.num_classes().unwrap_or(0),
    };
    let net = Mlp::init(spec, x.ncols(), outputs)?;
    net.gradient_check(x, y, 1e-5)
}

impl Predictor {
    /// A predictor that has not been fitted; every query fails.
    pub fn unfitted(spec: ModelSpec, input_dim: usize) -> Self {
        Self {
            spec,
            input_dim,
            outputs: 1,
            model: None,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.model.is_some()
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn head(&self) -> Head {
        self.spec.head
    }

    pub fn num_classes(&self) -> Option<usize> {
        (self.spec.head == Head::Classification).then_some(self.outputs)
    }

    pub fn model(&self) -> Result<&Model> {
        self.model.as_ref().ok_or(Error::NotFitted)
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<&Model> {
        let model = self.model()?;
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        Ok(model)
    }

    /// Point predictions. Classification heads return the predicted class
    /// index (as a real number).
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        match self.check_input(x)? {
            Model::Linear(m) => Ok(m.predict(x)),
            Model::Forest(m) => Ok(m.predict(x)),
            Model::Mlp(m) => match self.spec.head {
                Head::Regression => Ok(m.forward(x).column(0).to_vec()),
                Head::Classification => Ok(self
                    .predict_classes(x)?
                    .into_iter()
                    .map(|k| k as f64)
                    .collect()),
            },
        }
    }

    pub fn predict_classes(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok(p.rows()
            .into_iter()
            .map(|r| crate::numeric::argmax(r.as_slice().expect("standard layout")))
            .collect())
    }

    /// Raw output-layer scores (n × K) of a classification head.
    pub fn predict_logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let model = self.check_input(x)?;
        match (model, self.spec.head) {
            (Model::Mlp(m), Head::Classification) => Ok(m.forward(x)),
            _ => Err(Error::HeadMismatch(format!(
                "{} with a {:?} head has no class logits",
                self.spec.family, self.spec.head
            ))),
        }
    }

    /// Class probability matrix (n × K): softmax of the logits.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut logits = self.predict_logits(x)?;
        for mut row in logits.rows_mut() {
            crate::numeric::softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        Ok(logits)
    }

    /// Post-activation values of the last hidden layer.
    pub fn extract_representation(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self.check_input(x)? {
            Model::Mlp(m) if m.hidden_layers() > 0 => Ok(m.representation(x)),
            _ => Err(Error::invalid(format!(
                "{} has no hidden layer to extract",
                self.spec.family
            ))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_json(self, FORMAT_NAME, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_json(FORMAT_NAME, path.as_ref())
    }
}

pub(crate) fn mean_squared_error(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len().max(1) as f64
}
