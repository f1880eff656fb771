//! Synthetic distributions with known ground truth.
//!
//! Inputs are standard normal in every generator. Coefficients that are not
//! given explicitly are drawn from their own stream, so the same seed always
//! yields the same distribution and the same sample.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::numeric::{argmax, softmax_in_place};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Softmax over per-class scores `w_k . x + q_k . (x * x)`, class 0 as the
    /// zero reference. `coefficients` is `(K-1) x d` row-major; `quadratic`
    /// likewise and optional.
    KnownDensityClassification {
        #[serde(default)]
        coefficients: Option<Vec<f64>>,
        #[serde(default)]
        quadratic: Option<Vec<f64>>,
        #[serde(default = "default_scale")]
        coefficient_scale: f64,
    },
    /// Labels from a linear argmax rule; points closer than `margin` (in score
    /// gap) to a decision boundary are rejected.
    SeparableClassification {
        margin: f64,
        #[serde(default)]
        coefficients: Option<Vec<f64>>,
    },
    /// `y = beta . x + intercept + noise * eps`, `eps ~ N(0, 1)`.
    RegressionWithNoise {
        noise: f64,
        #[serde(default)]
        coefficients: Option<Vec<f64>>,
        #[serde(default)]
        intercept: f64,
    },
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub n: usize,
    pub d: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    pub seed: u64,
}

fn default_classes() -> usize {
    2
}

/// Deterministic labeling rule `h(x) = argmax_k (w_k . x)` with `w_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLabeler {
    /// `K x d`; row 0 is all zeros.
    #[serde(with = "crate::codec::array2")]
    pub weights: Array2<f64>,
}

impl LinearLabeler {
    pub fn scores(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.weights.dot(&x)
    }

    pub fn label(&self, x: ArrayView1<'_, f64>) -> usize {
        argmax(self.scores(x).as_slice().expect("contiguous"))
    }

    /// Gap between the best and second-best score.
    pub fn margin(&self, x: ArrayView1<'_, f64>) -> f64 {
        let s = self.scores(x);
        let best = argmax(s.as_slice().expect("contiguous"));
        s.iter()
            .enumerate()
            .filter(|(k, _)| *k != best)
            .map(|(_, v)| s[best] - v)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    /// True `p(y | x_i)`, one row per sample.
    Probabilities(Array2<f64>),
    Labeler(LinearLabeler),
    /// `E[y | x_i]`.
    RegressionMean(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

fn coefficient_matrix(
    given: &Option<Vec<f64>>,
    rows: usize,
    d: usize,
    scale: f64,
    rng: &mut rng::Stream,
    what: &str,
) -> Result<Array2<f64>> {
    match given {
        Some(v) => {
            if v.len() != rows * d {
                return Err(Error::invalid(format!(
                    "{what}: expected {} coefficients, got {}",
                    rows * d,
                    v.len()
                )));
            }
            Ok(Array2::from_shape_vec((rows, d), v.clone()).expect("shape checked"))
        }
        None => Ok(Array2::from_shape_fn((rows, d), |_| {
            scale * rng.sample::<f64, _>(StandardNormal)
        })),
    }
}

fn with_reference_row(m: Array2<f64>) -> Array2<f64> {
    let (k1, d) = m.dim();
    let mut out = Array2::zeros((k1 + 1, d));
    out.slice_mut(ndarray::s![1.., ..]).assign(&m);
    out
}

fn sample_inputs(n: usize, d: usize, rng: &mut rng::Stream) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))
}

/// Draws a sample from `spec` together with its ground truth.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.n == 0 || spec.d == 0 {
        return Err(Error::invalid("synthetic spec needs n > 0 and d > 0"));
    }
    let mut coef_rng = rng::stream(spec.seed, "synthetic/coefficients");
    let mut rng = rng::stream(spec.seed, "synthetic/rows");
    let name = format!("synthetic-{}", spec.seed);
    let (n, d) = (spec.n, spec.d);

    match &spec.kind {
        SyntheticKind::KnownDensityClassification {
            coefficients,
            quadratic,
            coefficient_scale,
        } => {
            let k = spec.num_classes;
            if k < 2 {
                return Err(Error::invalid("classification needs K >= 2"));
            }
            let lin = with_reference_row(coefficient_matrix(
                coefficients,
                k - 1,
                d,
                *coefficient_scale,
                &mut coef_rng,
                "coefficients",
            )?);
            let quad = match quadratic {
                Some(_) => Some(with_reference_row(coefficient_matrix(
                    quadratic,
                    k - 1,
                    d,
                    *coefficient_scale,
                    &mut coef_rng,
                    "quadratic",
                )?)),
                None => None,
            };
            let x = sample_inputs(n, d, &mut rng);
            let mut probs = x.dot(&lin.t());
            if let Some(q) = &quad {
                probs += &x.mapv(|v| v * v).dot(&q.t());
            }
            let mut labels = Vec::with_capacity(n);
            // Matrix products are not guaranteed to come back row-major.
            let mut probs = probs.as_standard_layout().into_owned();
            for mut row in probs.rows_mut() {
                softmax_in_place(row.as_slice_mut().expect("standard layout"));
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut label = k - 1;
                for (c, &p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        label = c;
                        break;
                    }
                }
                labels.push(label);
            }
            let dataset = Dataset::new(
                name,
                x,
                Targets::Class {
                    labels,
                    num_classes: k,
                },
            )?;
            Ok(SyntheticData {
                dataset,
                truth: GroundTruth::Probabilities(probs),
            })
        }
        SyntheticKind::SeparableClassification {
            margin,
            coefficients,
        } => {
            let k = spec.num_classes;
            if k < 2 {
                return Err(Error::invalid("classification needs K >= 2"));
            }
            if !(*margin >= 0.0) {
                return Err(Error::invalid("margin must be non-negative"));
            }
            let labeler = LinearLabeler {
                weights: with_reference_row(coefficient_matrix(
                    coefficients,
                    k - 1,
                    d,
                    1.0,
                    &mut coef_rng,
                    "coefficients",
                )?),
            };
            let mut x = Array2::zeros((n, d));
            let mut labels = Vec::with_capacity(n);
            let mut filled = 0;
            let mut attempts = 0usize;
            let mut candidate = Array1::zeros(d);
            while filled < n {
                attempts += 1;
                if attempts > 1000 * n + 10_000 {
                    return Err(Error::invalid(format!(
                        "margin {margin} too large: rejection sampling did not converge"
                    )));
                }
                candidate.mapv_inplace(|_| rng.sample(StandardNormal));
                if labeler.margin(candidate.view()) < *margin {
                    continue;
                }
                x.row_mut(filled).assign(&candidate);
                labels.push(labeler.label(candidate.view()));
                filled += 1;
            }
            let dataset = Dataset::new(
                name,
                x,
                Targets::Class {
                    labels,
                    num_classes: k,
                },
            )?;
            Ok(SyntheticData {
                dataset,
                truth: GroundTruth::Labeler(labeler),
            })
        }
        SyntheticKind::RegressionWithNoise {
            noise,
            coefficients,
            intercept,
        } => {
            if !(*noise >= 0.0) {
                return Err(Error::invalid("noise scale must be non-negative"));
            }
            let beta = coefficient_matrix(coefficients, 1, d, 1.0, &mut coef_rng, "coefficients")?
                .row(0)
                .to_owned();
            let x = sample_inputs(n, d, &mut rng);
            let mean: Vec<f64> = x.dot(&beta).iter().map(|m| m + intercept).collect();
            let y = mean
                .iter()
                .map(|m| m + noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let dataset = Dataset::new(name, x, Targets::Real(y))?;
            Ok(SyntheticData {
                dataset,
                truth: GroundTruth::RegressionMean(mean),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known(n: usize, d: usize, k: usize, coefficients: Option<Vec<f64>>, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            kind: SyntheticKind::KnownDensityClassification {
                coefficients,
                quadratic: None,
                coefficient_scale: 1.0,
            },
            n,
            d,
            num_classes: k,
            seed,
        }
    }

    #[test]
    fn zero_coefficient_gives_uniform_probabilities() {
        let data = generate_synthetic(&known(200, 1, 2, Some(vec![0.0]), 1)).unwrap();
        let GroundTruth::Probabilities(p) = data.truth else {
            panic!("wrong truth")
        };
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn probability_rows_are_valid() {
        let mut spec = known(500, 3, 4, None, 2);
        spec.kind = SyntheticKind::KnownDensityClassification {
            coefficients: None,
            quadratic: Some(vec![0.5; 9]),
            coefficient_scale: 2.0,
        };
        let data = generate_synthetic(&spec).unwrap();
        let GroundTruth::Probabilities(p) = data.truth else {
            panic!()
        };
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn class_frequency_matches_mean_probability() {
        // Monte Carlo check: the empirical class-1 rate lies in the 3-sigma
        // binomial band around the mean of the true probabilities.
        let n = 10_000;
        let data = generate_synthetic(&known(n, 2, 2, Some(vec![1.5, -0.5]), 11)).unwrap();
        let GroundTruth::Probabilities(p) = &data.truth else {
            panic!()
        };
        let labels = data.dataset.targets.labels().unwrap();
        let freq = labels.iter().filter(|&&k| k == 1).count() as f64 / n as f64;
        let mean_p = p.column(1).sum() / n as f64;
        let var: f64 = p.column(1).iter().map(|q| q * (1.0 - q)).sum::<f64>() / (n * n) as f64;
        assert!(
            (freq - mean_p).abs() <= 3.0 * var.sqrt(),
            "freq {freq} mean {mean_p} sd {}",
            var.sqrt()
        );
    }

    #[test]
    fn separable_labeler_reproduces_labels() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::SeparableClassification {
                margin: 1.0,
                coefficients: None,
            },
            n: 400,
            d: 3,
            num_classes: 3,
            seed: 5,
        };
        let data = generate_synthetic(&spec).unwrap();
        let GroundTruth::Labeler(h) = &data.truth else {
            panic!()
        };
        let labels = data.dataset.targets.labels().unwrap();
        for (x, &y) in data.dataset.features.rows().into_iter().zip(labels) {
            assert_eq!(h.label(x), y);
            assert!(h.margin(x) >= 1.0);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_synthetic(&known(50, 2, 3, None, 9)).unwrap();
        let b = generate_synthetic(&known(50, 2, 3, None, 9)).unwrap();
        let c = generate_synthetic(&known(50, 2, 3, None, 10)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn regression_truth_is_noise_free_mean() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::RegressionWithNoise {
                noise: 0.0,
                coefficients: Some(vec![2.0]),
                intercept: 1.0,
            },
            n: 20,
            d: 1,
            num_classes: 2,
            seed: 0,
        };
        let data = generate_synthetic(&spec).unwrap();
        let GroundTruth::RegressionMean(m) = &data.truth else {
            panic!()
        };
        let y = data.dataset.targets.real().unwrap();
        for ((x, &yi), &mi) in data.dataset.features.rows().into_iter().zip(y).zip(m) {
            assert_eq!(yi, mi);
            assert!((mi - (2.0 * x[0] + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_synthetic(&known(0, 2, 2, None, 0)).is_err());
        assert!(generate_synthetic(&known(10, 2, 1, None, 0)).is_err());
        assert!(generate_synthetic(&known(10, 2, 2, Some(vec![1.0]), 0)).is_err());
    }
}
