use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, Dataset, Manifest, SyntheticSpec, TaskKind, NUM_FOLDS};
use crate::error::{Error, Result};
use crate::models::{Family, Head};
use crate::riskcal::LossFn;

/// Which benchmark a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Regression with rejection.
    Rwr,
    /// Classification with deferral.
    Classify,
}

impl Task {
    fn head(self) -> Head {
        match self {
            Task::Rwr => Head::Regression,
            Task::Classify => Head::Classification,
        }
    }

    fn kind(self) -> TaskKind {
        match self {
            Task::Rwr => TaskKind::Regression,
            Task::Classify => TaskKind::Classification,
        }
    }

    pub fn default_loss(self) -> LossFn {
        match self {
            Task::Rwr => LossFn::squared(),
            Task::Classify => LossFn::cross_entropy(),
        }
    }
}

/// A calibrator column of the grid, written as `RF` (regression on raw
/// inputs), `rep:RF` (regression on the predictor's last hidden layer),
/// `plugin:SoftmaxMLP` or `plugin-ts:SoftmaxMLP` (temperature-scaled).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CalibratorChoice {
    Regression(Family),
    Representation(Family),
    Plugin(Family),
    PluginScaled(Family),
}

impl CalibratorChoice {
    pub fn family(self) -> Family {
        match self {
            CalibratorChoice::Regression(f)
            | CalibratorChoice::Representation(f)
            | CalibratorChoice::Plugin(f)
            | CalibratorChoice::PluginScaled(f) => f,
        }
    }

    pub fn is_plugin(self) -> bool {
        matches!(self, CalibratorChoice::Plugin(_) | CalibratorChoice::PluginScaled(_))
    }
}

impl fmt::Display for CalibratorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalibratorChoice::Regression(m) => write!(f, "{m}"),
            CalibratorChoice::Representation(m) => write!(f, "rep:{m}"),
            CalibratorChoice::Plugin(m) => write!(f, "plugin:{m}"),
            CalibratorChoice::PluginScaled(m) => write!(f, "plugin-ts:{m}"),
        }
    }
}

impl FromStr for CalibratorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (prefix, name) = s.split_once(':').unwrap_or(("", s));
        let family: Family = name.parse()?;
        let choice = match prefix.to_ascii_lowercase().as_str() {
            "" => CalibratorChoice::Regression(family),
            "rep" => CalibratorChoice::Representation(family),
            "plugin" => CalibratorChoice::Plugin(family),
            "plugin-ts" => CalibratorChoice::PluginScaled(family),
            other => return Err(Error::Config(format!("unknown calibrator prefix {other:?} in {s:?}"))),
        };
        let wanted = if choice.is_plugin() {
            Head::Classification
        } else {
            Head::Regression
        };
        if family.default_head() != wanted && !matches!(family, Family::MLP | Family::MLP2) {
            return Err(Error::Config(format!("{family} cannot serve as calibrator {s:?}")));
        }
        Ok(choice)
    }
}

impl Serialize for CalibratorChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CalibratorChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn family_de<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<Family>, D::Error> {
    Vec::<String>::deserialize(d)?
        .iter()
        .map(|s| s.parse().map_err(serde::de::Error::custom))
        .collect()
}

fn family_ser<S: serde::Serializer>(v: &[Family], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|f| f.as_str()))
}

fn default_folds() -> usize {
    NUM_FOLDS
}

fn default_seed() -> u64 {
    42
}

fn default_manifest() -> PathBuf {
    PathBuf::from("data/manifest.toml")
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// Experiment grid definition, read from TOML.
///
/// ```toml
/// datasets = ["energy", "concrete"]
/// regressors = ["LR", "MLP", "MLP2", "RF"]
/// calibrators = ["LR", "MLP", "MLP2", "RF"]
/// costs = [0.2, 0.5, 1.0, 2.0]
/// seed = 42
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub task: Option<Task>,
    pub datasets: Vec<String>,
    #[serde(deserialize_with = "family_de", serialize_with = "family_ser")]
    pub regressors: Vec<Family>,
    pub calibrators: Vec<CalibratorChoice>,
    pub costs: Vec<f64>,
    /// Number of the ten folds to run (folds `0..folds`).
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Loss of the predictor; defaults to squared (rwr) or cross-entropy
    /// (classify).
    #[serde(default)]
    pub loss: Option<String>,
    #[serde(default = "default_manifest")]
    pub manifest: PathBuf,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; defaults to the number of available cores.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Persist fitted predictors and calibrators under `output_dir/models`.
    #[serde(default)]
    pub save_models: bool,
    /// Datasets generated on the fly instead of read from the manifest.
    #[serde(default)]
    pub synthetic: BTreeMap<String, SyntheticSpec>,
}

impl ExperimentConfig {
    /// Reads a config; relative `manifest` and `output_dir` resolve against
    /// the config file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.manifest.is_relative() {
            cfg.manifest = base.join(&cfg.manifest);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn loss_fn(&self, task: Task) -> Result<LossFn> {
        match &self.loss {
            None => Ok(task.default_loss()),
            Some(s) => s.parse(),
        }
    }

    /// Structural checks that do not touch the file system.
    pub fn validate(&self, task: Task) -> Result<()> {
        if let Some(t) = self.task {
            if t != task {
                return Err(Error::Config(format!("config is for task {t:?}, not {task:?}")));
            }
        }
        let nonempty = |what: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("{what} must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty("datasets", self.datasets.len())?;
        nonempty("regressors", self.regressors.len())?;
        nonempty("calibrators", self.calibrators.len())?;
        nonempty("costs", self.costs.len())?;
        if let Some(c) = self.costs.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::Config(format!("costs must be positive, got {c}")));
        }
        let mut sorted = self.costs.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("costs must be distinct".into()));
        }
        if !(1..=NUM_FOLDS).contains(&self.folds) {
            return Err(Error::Config(format!("folds must be in 1..={NUM_FOLDS}, got {}", self.folds)));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.datasets.iter().find(|n| !seen.insert(*n)) {
            return Err(Error::Config(format!("datasets: {dup:?} listed twice")));
        }
        let head = task.head();
        for r in &self.regressors {
            if !allowed_heads(*r).contains(&head) {
                return Err(Error::Config(format!("{r} cannot be a {task:?} predictor")));
            }
        }
        for c in &self.calibrators {
            if c.is_plugin() && task != Task::Classify {
                return Err(Error::Config(format!("plug-in calibrator {c} needs a classification task")));
            }
        }
        let loss = self.loss_fn(task)?;
        if loss.is_classification() != (task == Task::Classify) {
            return Err(Error::Config(format!("loss {loss} does not fit task {task:?}")));
        }
        for (name, spec) in &self.synthetic {
            let _ = name;
            let kind_ok = match spec.kind {
                crate::data::SyntheticKind::RegressionWithNoise { .. } => task == Task::Rwr,
                _ => task == Task::Classify,
            };
            if !kind_ok {
                return Err(Error::Config(format!("synthetic dataset {name:?} does not fit task {task:?}")));
            }
        }
        Ok(())
    }

    /// Checks that every dataset is either synthetic or listed in the manifest.
    pub fn check_datasets(&self, manifest: &Manifest) -> Result<()> {
        for name in &self.datasets {
            if !self.synthetic.contains_key(name) {
                manifest.entry(name)?;
            }
        }
        Ok(())
    }

    /// Loads (or generates) one dataset and checks it fits the task.
    pub fn load_dataset(&self, manifest: &Manifest, name: &str, task: Task) -> Result<Dataset> {
        let ds = match self.synthetic.get(name) {
            Some(spec) => {
                let mut ds = generate_synthetic(spec)?.dataset;
                ds.name = name.to_string();
                ds
            }
            None => manifest.load(name)?,
        };
        if ds.kind() != task.kind() {
            return Err(Error::Config(format!("dataset {name:?} is not a {:?} dataset", task.kind())));
        }
        Ok(ds)
    }
}

fn allowed_heads(f: Family) -> &'static [Head] {
    match f {
        Family::LR | Family::RF => &[Head::Regression],
        Family::MLP | Family::MLP2 => &[Head::Regression, Head::Classification],
        Family::SoftmaxLinear | Family::SoftmaxMLP | Family::SoftmaxMLP2 => &[Head::Classification],
    }
}
