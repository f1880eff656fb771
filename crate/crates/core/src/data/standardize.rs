use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-wise `(x - mean) / scale` with population standard deviation.
/// Constant columns get scale 1 and map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    #[serde(with = "crate::codec::array1")]
    pub means: Array1<f64>,
    #[serde(with = "crate::codec::array1")]
    pub scales: Array1<f64>,
}

impl Standardizer {
    pub fn fit(features: ArrayView2<'_, f64>) -> Result<Self> {
        let n = features.nrows();
        if n < 2 {
            return Err(Error::invalid(format!(
                "standardizer needs at least 2 rows, got {n}"
            )));
        }
        let nf = n as f64;
        let mut means = features.sum_axis(Axis(0)) / nf;
        let mut scales = Array1::ones(features.ncols());
        for (j, col) in features.axis_iter(Axis(1)).enumerate() {
            if col.iter().all(|&v| v == col[0]) {
                means[j] = col[0];
                continue;
            }
            let mu = means[j];
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / nf;
            scales[j] = var.sqrt();
        }
        Ok(Self { means, scales })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: features.ncols(),
            });
        }
        let mut out = features.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.scales) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}
