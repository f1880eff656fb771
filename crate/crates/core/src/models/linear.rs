use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{mean_squared_error, TrainReport};
use crate::data::Standardizer;
use crate::error::{Error, Result};

/// Ordinary least squares with intercept, solved on standardized inputs via
/// the normal equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub standardizer: Standardizer,
    #[serde(with = "crate::codec::array1")]
    pub weights: Array1<f64>,
    pub intercept: f64,
    /// Ridge term added to the Gram matrix (0 when it was well conditioned).
    pub jitter: f64,
}

/// Smallest acceptable Cholesky pivot relative to the largest Gram diagonal.
const PIVOT_FLOOR: f64 = 1e-12;

impl LinearModel {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[f64]) -> Result<(Self, TrainReport)> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::invalid("linear regression needs at least 2 rows"));
        }
        let standardizer = Standardizer::fit(x)?;
        let z = standardizer.apply(x)?;
        let p = z.ncols() + 1;

        // Design [1, z]; Gram = AᵀA, rhs = Aᵀy.
        let a = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { z[[i, j - 1]] });
        let gram = a.tr_mul(&a);
        let rhs = a.tr_mul(&DVector::from_column_slice(y));

        let mut jitter = 0.0;
        let beta = match well_conditioned_solve(&gram, &rhs) {
            Some(b) => b,
            None => {
                jitter = 1e-8 * gram.trace() / p as f64;
                let mut g = gram.clone();
                for i in 0..p {
                    g[(i, i)] += jitter;
                }
                g.cholesky()
                    .map(|c| c.solve(&rhs))
                    .ok_or_else(|| Error::invalid("normal equations are not solvable"))?
            }
        };
        let model = Self {
            standardizer,
            weights: Array1::from_iter(beta.iter().skip(1).copied()),
            intercept: beta[0],
            jitter,
        };
        let loss = mean_squared_error(&model.predict(x), y);
        Ok((
            model,
            TrainReport {
                final_loss: loss,
                epochs: 0,
                converged: true,
            },
        ))
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        let z = self.standardizer.apply(x).expect("dimension checked by caller");
        (z.dot(&self.weights) + self.intercept).to_vec()
    }

    /// Coefficients and intercept expressed on the original input scale.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let s = &self.standardizer;
        let w: Vec<f64> = self
            .weights
            .iter()
            .zip(&s.scales)
            .map(|(w, sc)| w / sc)
            .collect();
        let b = self.intercept - w.iter().zip(&s.means).map(|(w, m)| w * m).sum::<f64>();
        (w, b)
    }
}

/// Cholesky solve that refuses near-singular systems.
fn well_conditioned_solve(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = gram.clone().cholesky()?;
    let max_diag = gram.diagonal().max();
    let l = chol.l_dirty();
    let min_pivot = (0..gram.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    (min_pivot > PIVOT_FLOOR * max_diag).then(|| chol.solve(rhs))
}
