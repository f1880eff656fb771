//! Datasets, preprocessing, fold plans and synthetic generators.

mod csv_io;
mod manifest;
mod split;
mod standardize;
mod synthetic;

pub use csv_io::{load_csv, write_csv, CsvSchema, HeaderMode, TargetColumn};
pub use manifest::{fetch, DatasetEntry, Manifest};
pub use split::{make_split_plans, SplitPlan, NUM_FOLDS};
pub use standardize::Standardizer;
pub use synthetic::{
    generate_synthetic, GroundTruth, LinearLabeler, SyntheticData, SyntheticKind, SyntheticSpec,
};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supervised targets, either real-valued or class indices in `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Real(Vec<f64>),
    Class { labels: Vec<usize>, num_classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Class { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self {
            Targets::Real(_) => None,
            Targets::Class { num_classes, .. } => Some(*num_classes),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Real(v) => Targets::Real(rows.iter().map(|&i| v[i]).collect()),
            Targets::Class {
                labels,
                num_classes,
            } => Targets::Class {
                labels: rows.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
        }
    }

    /// Real view of the targets (class indices are widened to `f64`).
    pub fn as_real(&self) -> Vec<f64> {
        match self {
            Targets::Real(v) => v.clone(),
            Targets::Class { labels, .. } => labels.iter().map(|&k| k as f64).collect(),
        }
    }

    pub fn real(&self) -> Option<&[f64]> {
        match self {
            Targets::Real(v) => Some(v),
            Targets::Class { .. } => None,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match self {
            Targets::Real(_) => None,
            Targets::Class { labels, .. } => Some(labels),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

/// A feature matrix with aligned targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub features: Array2<f64>,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Array2<f64>, targets: Targets) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: targets.len(),
            });
        }
        if features.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        for (r, row) in features.axis_iter(Axis(0)).enumerate() {
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: r, column: c });
            }
        }
        match &targets {
            Targets::Real(v) => {
                if let Some(r) = v.iter().position(|t| !t.is_finite()) {
                    return Err(Error::NonFinite {
                        row: r,
                        column: features.ncols(),
                    });
                }
            }
            Targets::Class {
                labels,
                num_classes,
            } => {
                if *num_classes < 2 {
                    return Err(Error::invalid("classification needs at least 2 classes"));
                }
                if let Some(bad) = labels.iter().find(|&&k| k >= *num_classes) {
                    return Err(Error::invalid(format!(
                        "class label {bad} outside [0, {num_classes})"
                    )));
                }
            }
        }
        let d = features.ncols();
        Ok(Self {
            name: name.into(),
            feature_names: (0..d).map(|j| format!("x{j}")).collect(),
            target_name: "y".to_string(),
            features,
            targets,
        })
    }

    pub fn with_column_names(mut self, features: Vec<String>, target: String) -> Result<Self> {
        if features.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: features.len(),
            });
        }
        self.feature_names = features;
        self.target_name = target;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn kind(&self) -> TaskKind {
        match self.targets {
            Targets::Real(_) => TaskKind::Regression,
            Targets::Class { .. } => TaskKind::Classification,
        }
    }

    /// Subset of rows, in the order given.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            features: self.features.select(Axis(0), rows),
            targets: self.targets.select(rows),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_misaligned_targets() {
        let err = Dataset::new("t", array![[1.0], [2.0]], Targets::Real(vec![1.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn rejects_non_finite_features() {
        let err = Dataset::new(
            "t",
            array![[1.0], [f64::NAN]],
            Targets::Real(vec![1.0, 2.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, column: 0 }));
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let t = Targets::Class {
            labels: vec![0, 3],
            num_classes: 3,
        };
        assert!(Dataset::new("t", array![[1.0], [2.0]], t).is_err());
    }

    #[test]
    fn select_keeps_alignment() {
        let ds = Dataset::new(
            "t",
            array![[1.0], [2.0], [3.0]],
            Targets::Real(vec![10.0, 20.0, 30.0]),
        )
        .unwrap();
        let sub = ds.select(&[2, 0]);
        assert_eq!(sub.features, array![[3.0], [1.0]]);
        assert_eq!(sub.targets, Targets::Real(vec![30.0, 10.0]));
    }
}
