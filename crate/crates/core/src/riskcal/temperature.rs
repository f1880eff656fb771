//! Single-parameter temperature scaling fit by golden-section search.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::numeric::{log_sum_exp, softmax_in_place};

/// Search bracket for `log10 T`.
pub const LOG10_T_BRACKET: (f64, f64) = (-2.0, 2.0);
/// Width of the final bracket, in `log10 T` units.
pub const SEARCH_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    /// Mean negative log-likelihood at the fitted temperature.
    pub nll: f64,
    /// All calibration labels belong to one class; the optimum then runs to
    /// the edge of the bracket and carries no calibration information.
    pub degenerate: bool,
}

/// Mean NLL of `softmax(logits / t)`.
pub fn temperature_nll(logits: ArrayView2<'_, f64>, labels: &[usize], t: f64) -> f64 {
    let mut buf = vec![0.0; logits.ncols()];
    let mut total = 0.0;
    for (row, &k) in logits.rows().into_iter().zip(labels) {
        for (b, &z) in buf.iter_mut().zip(row) {
            *b = z / t;
        }
        total += log_sum_exp(&buf) - buf[k];
    }
    total / labels.len() as f64
}

pub fn scaled_probabilities(logits: ArrayView2<'_, f64>, t: f64) -> Array2<f64> {
    let mut p = logits.mapv(|z| z / t);
    for mut row in p.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    p
}

pub fn fit_temperature_logits(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<TemperatureFit> {
    if labels.is_empty() {
        return Err(Error::invalid("temperature scaling needs calibration rows"));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.nrows(),
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&k| k >= logits.ncols()) {
        return Err(Error::invalid(format!("label {bad} out of range")));
    }
    let f = |u: f64| temperature_nll(logits, labels, 10f64.powf(u));
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = LOG10_T_BRACKET;
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > SEARCH_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    let u = (a + b) / 2.0;
    let temperature = 10f64.powf(u);
    Ok(TemperatureFit {
        temperature,
        nll: temperature_nll(logits, labels, temperature),
        degenerate: labels.iter().all(|&k| k == labels[0]),
    })
}

/// Fits `T` for a classification predictor on held-out rows.
pub fn fit_temperature(p: &Predictor, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<TemperatureFit> {
    let logits = p.predict_logits(x)?;
    fit_temperature_logits(logits.view(), labels)
}
