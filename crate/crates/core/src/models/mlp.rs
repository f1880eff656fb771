//! ReLU perceptron trained with minibatch Adam; squared-error output for
//! regression, log-sum-exp cross-entropy for classification.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Head, ModelSpec, TrainReport};
use crate::data::{Standardizer, Targets};
use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// fan_in × fan_out
    #[serde(with = "crate::codec::array2")]
    pub w: Array2<f64>,
    #[serde(with = "crate::codec::array1")]
    pub b: Array1<f64>,
}

impl Dense {
    fn apply(&self, a: ArrayView2<'_, f64>) -> Array2<f64> {
        a.dot(&self.w) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Input standardization learned at fit time; absent on a freshly
    /// initialized network.
    pub standardizer: Option<Standardizer>,
    pub layers: Vec<Dense>,
    pub head: Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Maximum over all parameters.
    pub max_relative_error: f64,
    /// Maximum over parameters whose `±h` window crosses no ReLU boundary.
    pub max_relative_error_smooth: f64,
    /// Parameters (flat indices) whose window crosses a ReLU boundary for
    /// some row; the loss is not differentiable there.
    pub kinked: Vec<usize>,
    /// Flattened per layer as (weights row-major, then bias).
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Training targets in the shape the loss wants.
#[derive(Clone, Copy)]
enum Batch<'a> {
    Real(&'a [f64]),
    Class(&'a [usize]),
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &ModelSpec, input_dim: usize, outputs: usize) -> Result<Self> {
        let hidden = spec
            .family
            .hidden_widths()
            .ok_or_else(|| Error::invalid(format!("{} is not a perceptron", spec.family)))?;
        if outputs == 0 || (spec.head == Head::Classification && outputs < 2) {
            return Err(Error::invalid("classification head needs at least 2 classes"));
        }
        let mut stream = rng::stream(spec.seed, "mlp/init");
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(outputs);
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Dense {
                    w: Array2::from_shape_fn((w[0], w[1]), |_| stream.random_range(-limit..limit)),
                    b: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self {
            standardizer: None,
            layers,
            head: spec.head,
        })
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn output_layer(&self) -> &Dense {
        self.layers.last().expect("at least one layer")
    }

    fn standardize(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        match &self.standardizer {
            Some(s) => s.apply(x).expect("dimension checked by caller"),
            None => x.to_owned(),
        }
    }

    fn hidden_forward(&self, mut a: Array2<f64>) -> Array2<f64> {
        for layer in &self.layers[..self.layers.len() - 1] {
            a = layer.apply(a.view());
            a.mapv_inplace(|v| v.max(0.0));
        }
        a
    }

    /// Output-layer values: regression predictions (n × 1) or class logits.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let rep = self.hidden_forward(self.standardize(x));
        self.output_layer().apply(rep.view())
    }

    /// Last hidden layer's post-activation values.
    pub fn representation(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.hidden_forward(self.standardize(x))
    }

    pub fn fit(spec: &ModelSpec, x: ArrayView2<'_, f64>, y: &Targets, outputs: usize) -> Result<(Self, TrainReport)> {
        let n = x.nrows();
        let standardizer = if n >= 2 {
            Standardizer::fit(x)?
        } else {
            // A single row carries no scale information.
            Standardizer {
                means: x.row(0).to_owned(),
                scales: Array1::ones(x.ncols()),
            }
        };
        let xs = standardizer.apply(x)?;
        let mut net = Self::init(spec, x.ncols(), outputs)?;
        net.standardizer = Some(standardizer);

        let batch = match y {
            Targets::Real(v) => Batch::Real(v),
            Targets::Class { labels, .. } => Batch::Class(labels),
        };

        // Constant regression targets: the exact minimizer is the constant,
        // which gradient descent only approaches. Set it directly.
        if let Batch::Real(v) = batch {
            if v.iter().all(|&t| t == v[0]) {
                let out = net.layers.last_mut().expect("output layer");
                out.w.fill(0.0);
                out.b.fill(v[0]);
                return Ok((
                    net,
                    TrainReport {
                        final_loss: 0.0,
                        epochs: 0,
                        converged: true,
                    },
                ));
            }
        }

        let h = &spec.hyper;
        let bs = h.batch_size.clamp(1, n);
        let mut adam = Adam::new(&net.layers);
        let mut shuffle = rng::stream(spec.seed, "mlp/shuffle");
        let mut order: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        let mut stale = 0;
        let mut report = TrainReport {
            final_loss: f64::NAN,
            epochs: 0,
            converged: false,
        };

        for epoch in 1..=h.max_epochs {
            order.shuffle(&mut shuffle);
            let mut total = 0.0;
            for chunk in order.chunks(bs) {
                let xb = xs.select(Axis(0), chunk);
                let (loss, grads) = match batch {
                    Batch::Real(v) => {
                        let yb: Vec<f64> = chunk.iter().map(|&i| v[i]).collect();
                        net.loss_and_grad(xb.view(), Batch::Real(&yb))
                    }
                    Batch::Class(v) => {
                        let yb: Vec<usize> = chunk.iter().map(|&i| v[i]).collect();
                        net.loss_and_grad(xb.view(), Batch::Class(&yb))
                    }
                };
                total += loss * chunk.len() as f64;
                adam.step(&mut net.layers, &grads, h);
            }
            let epoch_loss = total / n as f64;
            report.final_loss = epoch_loss;
            report.epochs = epoch;
            if !epoch_loss.is_finite() {
                return Err(Error::invalid(format!(
                    "{} training diverged at epoch {epoch}",
                    spec.family
                )));
            }
            if epoch_loss > best - h.tolerance {
                stale += 1;
            } else {
                stale = 0;
            }
            best = best.min(epoch_loss);
            if stale >= h.patience {
                report.converged = true;
                break;
            }
        }
        Ok((net, report))
    }

    /// Mean loss over the batch and its gradient per layer (dW, db).
    fn loss_and_grad(&self, x: ArrayView2<'_, f64>, y: Batch<'_>) -> (f64, Vec<(Array2<f64>, Array1<f64>)>) {
        let n = x.nrows() as f64;
        let mut acts = vec![x.to_owned()];
        for layer in &self.layers[..self.layers.len() - 1] {
            let mut a = layer.apply(acts.last().expect("input").view());
            a.mapv_inplace(|v| v.max(0.0));
            acts.push(a);
        }
        let mut delta = self.output_layer().apply(acts.last().expect("rep").view());
        let loss = match y {
            Batch::Real(t) => {
                let mut sum = 0.0;
                for (o, &t) in delta.column_mut(0).iter_mut().zip(t) {
                    let r = *o - t;
                    sum += r * r;
                    *o = 2.0 * r / n;
                }
                sum / n
            }
            Batch::Class(t) => {
                let mut sum = 0.0;
                for (mut row, &k) in delta.rows_mut().into_iter().zip(t) {
                    let s = row.as_slice_mut().expect("standard layout");
                    let lse = log_sum_exp(s);
                    sum += lse - s[k];
                    for v in s.iter_mut() {
                        *v = (*v - lse).exp() / n;
                    }
                    s[k] -= 1.0 / n;
                }
                sum / n
            }
        };

        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let a = &acts[l];
            let gw = a.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut next = delta.dot(&self.layers[l].w.t());
                Zip::from(&mut next).and(a).for_each(|d, &act| {
                    if act <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = next;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        (loss, grads)
    }

    /// Compares backpropagated gradients of the mean batch loss with central
    /// differences `(L(θ+h) − L(θ−h)) / 2h`, parameter by parameter. Inputs are
    /// used as given (no standardization).
    ///
    /// Subtracting two rounded batch losses loses every digit below
    /// `ulp(L) / h`, which swamps small gradients. Instead the perturbation of
    /// each layer's pre-activations is carried forward exactly (layers are
    /// affine, ReLU is piecewise), and per-sample loss changes use
    /// cancellation-free forms.
    pub fn gradient_check(&self, x: ArrayView2<'_, f64>, y: &Targets, h: f64) -> Result<GradientCheck> {
        let batch = match (self.head, y) {
            (Head::Regression, Targets::Real(v)) => Batch::Real(v),
            (Head::Classification, Targets::Class { labels, .. }) => Batch::Class(labels),
            _ => return Err(Error::HeadMismatch("targets do not match the head".into())),
        };
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        let (_, grads) = self.loss_and_grad(x, batch);
        let mut analytic = Vec::new();
        for (gw, gb) in &grads {
            analytic.extend(gw.iter());
            analytic.extend(gb.iter());
        }

        // Unperturbed pass: inputs to each layer and pre-activations.
        let mut inputs = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(inputs[l].view());
            if l + 1 < self.layers.len() {
                inputs.push(z.mapv(|v| v.max(0.0)));
            }
            pre.push(z);
        }
        let out = pre.last().expect("output layer");
        let probs = (self.head == Head::Classification).then(|| {
            let mut p = out.clone();
            for mut row in p.rows_mut() {
                crate::numeric::softmax_in_place(row.as_slice_mut().expect("standard layout"));
            }
            p
        });

        // Change of the mean loss when layer `l`'s pre-activation column `j`
        // moves by `shift` (one value per row).
        let loss_change = |l: usize, j: usize, shift: &Array1<f64>| -> (f64, bool) {
            let mut dz = Array2::zeros(pre[l].raw_dim());
            dz.column_mut(j).assign(shift);
            let mut crossed = false;
            for m in l + 1..self.layers.len() {
                let da = Zip::from(&pre[m - 1]).and(&dz).map_collect(|&z, &d| {
                    match (z > 0.0, z + d > 0.0) {
                        (true, true) => d,
                        (false, false) => 0.0,
                        _ => {
                            crossed = true;
                            (z + d).max(0.0) - z.max(0.0)
                        }
                    }
                });
                dz = da.dot(&self.layers[m].w);
            }
            let n = x.nrows() as f64;
            let total: f64 = match batch {
                Batch::Real(t) => dz
                    .column(0)
                    .iter()
                    .zip(out.column(0))
                    .zip(t)
                    .map(|((&d, &o), &t)| d * (2.0 * (o - t) + d))
                    .sum(),
                Batch::Class(t) => {
                    let p = probs.as_ref().expect("classification head");
                    dz.rows()
                        .into_iter()
                        .zip(p.rows())
                        .zip(t)
                        .map(|((d, p), &k)| {
                            let s: f64 = d.iter().zip(p).map(|(&d, &p)| p * d.exp_m1()).sum();
                            s.ln_1p() - d[k]
                        })
                        .sum()
                }
            };
            (total / n, crossed)
        };

        let mut numeric = Vec::with_capacity(analytic.len());
        let mut kinked = Vec::new();
        let mut central = |l: usize, j: usize, shift: Array1<f64>| {
            let (up, k1) = loss_change(l, j, &shift);
            let (down, k2) = loss_change(l, j, &shift.mapv(|v| -v));
            if k1 || k2 {
                kinked.push(numeric.len());
            }
            numeric.push((up - down) / (2.0 * h));
        };
        for l in 0..self.layers.len() {
            let (rows, cols) = self.layers[l].w.dim();
            for i in 0..rows {
                for j in 0..cols {
                    central(l, j, inputs[l].column(i).mapv(|v| v * h));
                }
            }
            for j in 0..cols {
                central(l, j, Array1::from_elem(x.nrows(), h));
            }
        }
        let rel = |i: usize| {
            let (a, c): (f64, f64) = (analytic[i], numeric[i]);
            (a - c).abs() / (a.abs() + c.abs() + 1e-12)
        };
        let max_relative_error = (0..analytic.len()).map(rel).fold(0.0, f64::max);
        let max_relative_error_smooth = (0..analytic.len())
            .filter(|i| kinked.binary_search(i).is_err())
            .map(rel)
            .fold(0.0, f64::max);
        Ok(GradientCheck {
            max_relative_error,
            max_relative_error_smooth,
            kinked,
            analytic,
            numeric,
        })
    }
}

struct Moments {
    mw: Array2<f64>,
    vw: Array2<f64>,
    mb: Array1<f64>,
    vb: Array1<f64>,
}

struct Adam {
    t: i32,
    moments: Vec<Moments>,
}

impl Adam {
    fn new(layers: &[Dense]) -> Self {
        Self {
            t: 0,
            moments: layers
                .iter()
                .map(|l| Moments {
                    mw: Array2::zeros(l.w.raw_dim()),
                    vw: Array2::zeros(l.w.raw_dim()),
                    mb: Array1::zeros(l.b.len()),
                    vb: Array1::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    fn step(&mut self, layers: &mut [Dense], grads: &[(Array2<f64>, Array1<f64>)], h: &super::Hyperparams) {
        self.t += 1;
        let (b1, b2, eps) = (h.beta1, h.beta2, h.adam_eps);
        let lr = h.learning_rate * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t));
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * *m / (v.sqrt() + eps);
        };
        for ((layer, mom), (gw, gb)) in layers.iter_mut().zip(&mut self.moments).zip(grads) {
            Zip::from(&mut layer.w)
                .and(&mut mom.mw)
                .and(&mut mom.vw)
                .and(gw)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.b)
                .and(&mut mom.mb)
                .and(&mut mom.vb)
                .and(gb)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit, Family};
    use ndarray::Array2;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn random(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut s = rng::stream(seed, "test");
        Array2::from_shape_fn((n, d), |_| s.random_range(-2.0..2.0))
    }

    #[test]
    fn regression_gradients_match_central_differences() {
        let x = random(8, 3, 1);
        let y = Targets::Real((0..8).map(|i| i as f64 * 0.3 - 1.0).collect());
        for family in [Family::MLP, Family::MLP2] {
            let g = crate::models::gradient_check(&ModelSpec::new(family, 4), x.view(), &y).unwrap();
            assert!(g.max_relative_error < 1e-4, "{family}: {}", g.max_relative_error);
        }
    }

    #[test]
    fn zero_batch_has_zero_output_bias_gradient() {
        let x = Array2::zeros((6, 3));
        let y = Targets::Real(vec![0.0; 6]);
        let g = crate::models::gradient_check(&ModelSpec::new(Family::MLP, 2), x.view(), &y).unwrap();
        // Output bias is the last parameter of the last layer.
        assert_eq!(*g.analytic.last().unwrap(), 0.0);
    }

    #[test]
    fn huge_logits_keep_gradients_finite() {
        let spec = ModelSpec::new(Family::SoftmaxLinear, 0);
        let mut net = Mlp::init(&spec, 2, 3).unwrap();
        // Logit of the true class is 1000× larger than the rest.
        net.layers[0].w = ndarray::array![[1000.0, 0.0, 0.0], [0.0, 1000.0, 0.0]];
        let x = ndarray::array![[1.0, 0.0], [0.0, 1.0]];
        let y = Targets::Class {
            labels: vec![0, 1],
            num_classes: 3,
        };
        let g = net.gradient_check(x.view(), &y, 1e-5).unwrap();
        assert!(g.analytic.iter().chain(&g.numeric).all(|v| v.is_finite()));
        let wrong = Targets::Class {
            labels: vec![2, 2],
            num_classes: 3,
        };
        let g = net.gradient_check(x.view(), &wrong, 1e-5).unwrap();
        assert!(g.analytic.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_weight_softmax_is_uniform() {
        let spec = ModelSpec::new(Family::SoftmaxLinear, 0);
        let x = random(30, 2, 3);
        let labels = Targets::Class {
            labels: (0..30).map(|i| i % 3).collect(),
            num_classes: 3,
        };
        let mut spec0 = spec.clone();
        spec0.hyper.max_epochs = 1;
        let (mut p, _) = fit(&spec0, x.view(), &labels).unwrap();
        if let Some(crate::models::Model::Mlp(m)) = p.model.as_mut() {
            m.layers[0].w.fill(0.0);
            m.layers[0].b.fill(0.0);
        }
        let q = p.predict_proba(x.view()).unwrap();
        assert!(q.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn representation_recomposes_logits() {
        let x = random(40, 4, 5);
        let labels = Targets::Class {
            labels: (0..40).map(|i| (i * 7) % 3).collect(),
            num_classes: 3,
        };
        let mut spec = ModelSpec::new(Family::SoftmaxMLP, 9);
        spec.hyper.max_epochs = 30;
        let (p, _) = fit(&spec, x.view(), &labels).unwrap();
        let rep = p.extract_representation(x.view()).unwrap();
        assert_eq!(rep.ncols(), 64);
        assert!(rep.iter().all(|&v| v >= 0.0));
        let Some(crate::models::Model::Mlp(m)) = &p.model else { panic!() };
        let recomposed = rep.dot(&m.output_layer().w) + &m.output_layer().b;
        let logits = p.predict_logits(x.view()).unwrap();
        let gap = (&recomposed - &logits).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(gap < 1e-9);
        // Probabilities are valid and consistent with predicted labels.
        let q = p.predict_proba(x.view()).unwrap();
        for row in q.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let classes = p.predict_classes(x.view()).unwrap();
        for (row, &k) in q.rows().into_iter().zip(&classes) {
            assert_eq!(crate::numeric::argmax(row.as_slice().unwrap()), k);
        }
        assert!(Predictor_has_no_rep(&x));
    }

    #[allow(non_snake_case)]
    fn Predictor_has_no_rep(x: &Array2<f64>) -> bool {
        let labels = Targets::Class {
            labels: (0..x.nrows()).map(|i| i % 2).collect(),
            num_classes: 2,
        };
        let mut spec = ModelSpec::new(Family::SoftmaxLinear, 0);
        spec.hyper.max_epochs = 2;
        let (p, _) = fit(&spec, x.view(), &labels).unwrap();
        p.extract_representation(x.view()).is_err()
    }

    #[test]
    fn learns_a_simple_regression() {
        let x = random(300, 2, 6);
        let y: Vec<f64> = x.rows().into_iter().map(|r| 3.0 * r[0] - r[1] + 2.0).collect();
        let (p, report) = fit(&ModelSpec::new(Family::MLP, 1), x.view(), &Targets::Real(y.clone())).unwrap();
        assert!(report.epochs <= 800);
        let mse = crate::models::mean_squared_error(&p.predict(x.view()).unwrap(), &y);
        assert!(mse < 0.05, "{mse}");
    }

    #[test]
    fn early_stopping_flags_convergence() {
        // Labels independent of the input: the loss plateaus at the label
        // entropy quickly and training stops before the epoch cap.
        let x = random(64, 1, 7);
        let mut s = rng::stream(7, "labels");
        let labels = Targets::Class {
            labels: (0..64).map(|_| s.random_range(0..2usize)).collect(),
            num_classes: 2,
        };
        let mut spec = ModelSpec::new(Family::SoftmaxLinear, 0);
        spec.hyper.learning_rate = 0.05;
        let (_, report) = fit(&spec, x.view(), &labels).unwrap();
        assert!(report.converged && report.epochs < 800, "{report:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn gradient_check_holds_for_random_batches(seed in any::<u64>(), classify in any::<bool>()) {
            let mut s = rng::stream(seed, "batch");
            let n = s.random_range(2..=16usize);
            let d = s.random_range(1..=4usize);
            let x = random(n, d, seed);
            let (family, y) = if classify {
                (Family::SoftmaxMLP, Targets::Class {
                    labels: (0..n).map(|_| s.random_range(0..3usize)).collect(),
                    num_classes: 3,
                })
            } else {
                (Family::MLP2, Targets::Real((0..n).map(|_| s.random_range(-3.0..3.0)).collect()))
            };
            let g = crate::models::gradient_check(&ModelSpec::new(family, seed), x.view(), &y).unwrap();
            prop_assert!(g.max_relative_error_smooth < 1e-4, "{}", g.max_relative_error_smooth);
            if g.kinked.is_empty() {
                prop_assert!(g.max_relative_error < 1e-4, "{}", g.max_relative_error);
            }
        }
    }
}
