//! Executable checks of the plug-in estimator's theory on synthetic data with
//! known ground truth, each with a negative control that must fail.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, GroundTruth, SyntheticKind, SyntheticSpec, Targets};
use crate::error::{Error, Result};
use crate::models::{fit, Family, ModelSpec};
use crate::numeric::{argmax, softmax_in_place};
use crate::riskcal::{plugin_risk_from_probs, LossFn, MetaLoss, RiskCalibrator};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sidedness {
    /// Passes when `|statistic| ≤ tolerance`.
    TwoSided,
    /// Passes when `statistic ≤ tolerance`.
    OneSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCheckResult {
    pub name: String,
    pub statistic: f64,
    pub tolerance: f64,
    pub sidedness: Sidedness,
    pub passed: bool,
    /// False for negative controls, which must fail.
    pub expected_to_pass: bool,
    pub n: usize,
    pub seed: u64,
}

impl TheoryCheckResult {
    pub fn new(name: impl Into<String>, statistic: f64, tolerance: f64, sidedness: Sidedness, n: usize, seed: u64) -> Self {
        let passed = match sidedness {
            Sidedness::TwoSided => statistic.abs() <= tolerance,
            Sidedness::OneSided => statistic <= tolerance,
        };
        Self {
            name: name.into(),
            statistic,
            tolerance,
            sidedness,
            passed,
            expected_to_pass: true,
            n,
            seed,
        }
    }

    fn control(mut self) -> Self {
        self.expected_to_pass = false;
        self
    }

    /// The check behaved as intended (identities hold, controls fail).
    pub fn ok(&self) -> bool {
        self.passed == self.expected_to_pass
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let note = match (self.expected_to_pass, self.ok()) {
            (false, true) => " (negative control: failure expected)",
            (false, false) => " (negative control UNEXPECTEDLY passed)",
            _ => "",
        };
        format!(
            "{:<40} statistic={:<12.6e} tolerance={:<12.6e} {verdict}{note}",
            self.name, self.statistic, self.tolerance
        )
    }
}

/// Probability model scored by the Brier identity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbabilityModel {
    Truth,
    Uniform,
    /// `p^a / Σ p^a`, i.e. true logits scaled by `a`.
    Tempered(f64),
}

/// How the excess risk `B` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcessRisk {
    /// Squared (Brier) loss: the identity holds.
    Brier,
    /// `‖q − onehot‖₁`: a deliberately wrong loss for the negative control.
    Absolute,
}

fn known_density(n: usize, d: usize, k: usize, seed: u64) -> Result<(Array2<f64>, Vec<usize>, Array2<f64>)> {
    let data = generate_synthetic(&SyntheticSpec {
        kind: SyntheticKind::KnownDensityClassification {
            coefficients: None,
            quadratic: None,
            coefficient_scale: 1.5,
        },
        n,
        d,
        num_classes: k,
        seed,
    })?;
    let GroundTruth::Probabilities(p) = data.truth else {
        unreachable!("known-density generator emits probabilities")
    };
    let labels = data.dataset.targets.labels().expect("classification").to_vec();
    Ok((data.dataset.features, labels, p))
}

fn model_probabilities(truth: ArrayView2<'_, f64>, model: ProbabilityModel) -> Array2<f64> {
    match model {
        ProbabilityModel::Truth => truth.to_owned(),
        ProbabilityModel::Uniform => Array2::from_elem(truth.raw_dim(), 1.0 / truth.ncols() as f64),
        ProbabilityModel::Tempered(a) => {
            let mut q = truth.mapv(|p| a * p.ln());
            for mut row in q.rows_mut() {
                softmax_in_place(row.as_slice_mut().expect("standard layout"));
            }
            q
        }
    }
}

/// `E‖q(X) − p(X)‖² = R(q) − R(p)` for the Brier risk `R`, checked by Monte
/// Carlo on a two-class known-density distribution.
pub fn brier_identity_with(n: usize, seed: u64, model: ProbabilityModel, excess: ExcessRisk) -> Result<TheoryCheckResult> {
    if n < 1000 {
        return Err(Error::invalid(format!("Brier identity check needs n ≥ 1000, got {n}")));
    }
    let (_, labels, p) = known_density(n, 2, 2, seed)?;
    let q = model_probabilities(p.view(), model);
    let risk = |m: &Array2<f64>, lbl: &[usize]| -> f64 {
        m.rows()
            .into_iter()
            .zip(lbl)
            .map(|(row, &y)| {
                row.iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        let r = v - f64::from(u8::from(k == y));
                        match excess {
                            ExcessRisk::Brier => r * r,
                            ExcessRisk::Absolute => r.abs(),
                        }
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / lbl.len() as f64
    };
    let a: f64 = (&q - &p).mapv(|v| v * v).sum() / n as f64;
    let b = risk(&q, &labels) - risk(&p, &labels);
    let name = match excess {
        ExcessRisk::Brier => "brier-identity",
        ExcessRisk::Absolute => "brier-identity[absolute-loss control]",
    };
    let result = TheoryCheckResult::new(name, (a - b).abs(), 4.0 / (n as f64).sqrt(), Sidedness::TwoSided, n, seed);
    Ok(if excess == ExcessRisk::Absolute { result.control() } else { result })
}

/// The Brier identity for a fixed miscalibrated model (true logits halved).
pub fn brier_identity_check(n: usize, seed: u64) -> Result<TheoryCheckResult> {
    brier_identity_with(n, seed, ProbabilityModel::Tempered(0.5), ExcessRisk::Brier)
}

/// Plug-in estimate with the true `p(·|x)` against the analytic conditional
/// risk, for zero-one, cross-entropy and Brier losses. `corrupt` perturbs
/// one probability entry given to the plug-in estimator (negative control).
pub fn realizability_with(n: usize, seed: u64, corrupt: Option<f64>) -> Result<TheoryCheckResult> {
    let k = 3;
    let (x, _, p) = known_density(n, 3, k, seed)?;
    // A fixed predictor unrelated to the truth: softmax of random linear scores.
    let mut stream = rng::stream(seed, "verify/predictor");
    let w = Array2::from_shape_fn((x.ncols(), k), |_| stream.random_range(-1.0..1.0));
    let mut q = x.dot(&w).as_standard_layout().into_owned();
    for mut row in q.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    let mut p_given = p.clone();
    if let Some(delta) = corrupt {
        p_given[[0, 0]] += delta;
    }
    let mut gap = 0.0f64;
    for loss in [LossFn::zero_one(), LossFn::cross_entropy(), LossFn::brier()] {
        let est = plugin_risk_from_probs(&loss, q.view(), p_given.view())?;
        for ((e, qr), pr) in est.iter().zip(q.rows()).zip(p.rows()) {
            let qv = qr.to_vec();
            // Analytic risk: Σ_k p_k ℓ(q, k), spelled out per loss.
            let g: f64 = match loss.kind {
                crate::riskcal::LossKind::ZeroOne => 1.0 - pr[argmax(&qv)],
                crate::riskcal::LossKind::CrossEntropy => {
                    (0..k).map(|c| -pr[c] * qv[c].max(loss.clamp_eps).ln()).sum()
                }
                _ => (0..k)
                    .map(|c| {
                        let sq: f64 = (0..k)
                            .map(|j| (qv[j] - f64::from(u8::from(j == c))).powi(2))
                            .sum();
                        pr[c] * sq
                    })
                    .sum(),
            };
            gap = gap.max((e - g).abs());
        }
    }
    let name = if corrupt.is_some() {
        "realizability-exactness[corrupted control]"
    } else {
        "realizability-exactness"
    };
    let r = TheoryCheckResult::new(name, gap, 1e-9, Sidedness::OneSided, n, seed);
    Ok(if corrupt.is_some() { r.control() } else { r })
}

pub fn realizability_exactness(n: usize, seed: u64) -> Result<TheoryCheckResult> {
    realizability_with(n, seed, None)
}

/// Predictor whose conditional risk is estimated in the separable comparison.
#[derive(Debug, Clone, PartialEq)]
pub enum SeparablePredictor {
    Model(ModelSpec),
    /// The generator's own labeling rule (zero realized loss everywhere).
    PerfectLabeler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparableOutcome {
    /// Held-out meta-risk of the plug-in estimate.
    pub calibration_risk: f64,
    /// Held-out meta-risk of the regression-based estimate.
    pub regression_risk: f64,
    pub predictor_error_rate: f64,
    pub n_test: usize,
}

/// Margin (in score gap) of the separable generator.
pub const SEPARABLE_MARGIN: f64 = 0.5;

/// The predictor is fit on the first third of a separable sample; a softmax
/// MLP (plug-in) and an MLP regressor on zero-one losses (regression-based)
/// are fit on the same second third; both are scored on the last third.
pub fn separable_comparison(n: usize, seed: u64, predictor: &SeparablePredictor, meta: MetaLoss) -> Result<SeparableOutcome> {
    if n < 30 {
        return Err(Error::invalid("separable comparison needs n ≥ 30"));
    }
    let data = generate_synthetic(&SyntheticSpec {
        kind: SyntheticKind::SeparableClassification {
            margin: SEPARABLE_MARGIN,
            coefficients: None,
        },
        n,
        d: 2,
        num_classes: 2,
        seed,
    })?;
    let GroundTruth::Labeler(h) = &data.truth else {
        return Err(Error::invalid("generator is not separable"));
    };
    let x = &data.dataset.features;
    let labels = data.dataset.targets.labels().expect("classification");
    let (a, b) = (n / 3, 2 * n / 3);
    let (x_fit, x_cal, x_test) = (x.slice(s![..a, ..]), x.slice(s![a..b, ..]), x.slice(s![b.., ..]));
    let class_targets = |lo: usize, hi: usize| Targets::Class {
        labels: labels[lo..hi].to_vec(),
        num_classes: 2,
    };

    let predict: Box<dyn Fn(ArrayView2<'_, f64>) -> Result<Vec<usize>>> = match predictor {
        SeparablePredictor::PerfectLabeler => Box::new(|v: ArrayView2<'_, f64>| Ok(v.rows().into_iter().map(|r| h.label(r)).collect())),
        SeparablePredictor::Model(spec) => {
            let (f, _) = fit(spec, x_fit, &class_targets(0, a))?;
            Box::new(move |v: ArrayView2<'_, f64>| f.predict_classes(v))
        }
    };
    let zero_one = |pred: &[usize], truth: &[usize]| -> Vec<f64> {
        pred.iter().zip(truth).map(|(p, t)| f64::from(u8::from(p != t))).collect()
    };

    let pred_cal = predict(x_cal)?;
    let z_cal = zero_one(&pred_cal, &labels[a..b]);
    let pred_test = predict(x_test)?;
    let z_test = zero_one(&pred_test, &labels[b..]);

    let seed_p = rng::derive_seed(seed, &["verify/separable", "probability"]);
    let (p_hat, _) = fit(&ModelSpec::new(Family::SoftmaxMLP, seed_p), x_cal, &class_targets(a, b))?;
    let p = p_hat.predict_proba(x_test)?;
    let plugin: Vec<f64> = pred_test.iter().zip(p.rows()).map(|(&k, row)| 1.0 - row[k]).collect();

    let seed_r = rng::derive_seed(seed, &["verify/separable", "regression"]);
    let (g, _) = fit(&ModelSpec::new(Family::MLP, seed_r), x_cal, &Targets::Real(z_cal))?;
    let regression: Vec<f64> = g.predict(x_test)?.into_iter().map(|v| v.max(0.0)).collect();

    Ok(SeparableOutcome {
        calibration_risk: meta.mean(&plugin, &z_test),
        regression_risk: meta.mean(&regression, &z_test),
        predictor_error_rate: z_test.iter().sum::<f64>() / z_test.len() as f64,
        n_test: z_test.len(),
    })
}

/// Predictor used by the default separable comparison: a softmax-linear
/// model stopped after two epochs, so it disagrees with the true rule on a
/// band of inputs.
pub fn weak_separable_predictor(seed: u64) -> SeparablePredictor {
    let mut spec = ModelSpec::new(Family::SoftmaxLinear, rng::derive_seed(seed, &["verify/separable", "predictor"]));
    spec.hyper.max_epochs = 2;
    SeparablePredictor::Model(spec)
}

/// Runs the comparison on `seeds` and counts seeds where the plug-in risk
/// exceeds the regression-based risk; passes when at most `seeds.len() − 8·seeds.len()/10` do.
pub fn separable_summary(n: usize, seeds: &[u64]) -> Result<(TheoryCheckResult, Vec<SeparableOutcome>)> {
    let outcomes: Vec<SeparableOutcome> = seeds
        .par_iter()
        .map(|&s| separable_comparison(n, s, &weak_separable_predictor(s), MetaLoss::L1))
        .collect::<Result<_>>()?;
    let losses = outcomes.iter().filter(|o| o.calibration_risk > o.regression_risk).count();
    let allowed = seeds.len() - (8 * seeds.len()).div_ceil(10);
    let result = TheoryCheckResult::new(
        "separable-comparison[seeds where plug-in loses]",
        losses as f64,
        allowed as f64,
        Sidedness::OneSided,
        n,
        seeds.first().copied().unwrap_or(0),
    );
    Ok((result, outcomes))
}

/// Desk-scale stand-in for the image-classification deferral experiments:
/// a four-class known-density task with quadratic log-odds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskOutcome {
    /// Plug-in backend with the lowest held-out NLL.
    pub strongest_backend: Family,
    /// L1 calibration error on the test set: (plug-in, regression-based),
    /// for the weak and the strong predictor.
    pub weak: (f64, f64),
    pub strong: (f64, f64),
    pub costs: Vec<f64>,
    /// Per cost: lowest deferral loss over plug-in pairings.
    pub best_plugin_l2d: Vec<f64>,
    /// Per cost: lowest deferral loss over regression-based pairings.
    pub best_regression_l2d: Vec<f64>,
}

impl DeskOutcome {
    pub fn plugin_calibrates_better(&self) -> bool {
        self.weak.0 < self.weak.1 && self.strong.0 < self.strong.1
    }

    pub fn plugin_defers_no_worse(&self) -> bool {
        self.best_plugin_l2d.iter().zip(&self.best_regression_l2d).all(|(p, r)| p <= r)
    }
}

pub const DESK_COSTS: [f64; 4] = [0.2, 0.5, 1.0, 2.0];

/// Predictors (weak softmax-linear stopped after 3 epochs, strong two-layer
/// softmax MLP) train on 1200 rows; calibrators on 1000 further rows; all
/// are scored under cross-entropy on 4000 fresh test rows. Plug-in backends
/// are SoftmaxLinear, SoftmaxMLP and SoftmaxMLP2; the regression-based
/// calibrator is an MLP regressing realized losses on raw inputs.
pub fn desk_classification(seed: u64) -> Result<DeskOutcome> {
    let (k, d) = (4, 6);
    let mut s = rng::stream(seed, "verify/desk");
    let mut coef = |len: usize, scale: f64| -> Vec<f64> {
        (0..len).map(|_| scale * s.sample::<f64, _>(rand_distr::StandardNormal)).collect()
    };
    let linear = coef((k - 1) * d, 1.0);
    let quadratic = coef((k - 1) * d, 0.6);
    let draw = |n: usize, label: &str| {
        generate_synthetic(&SyntheticSpec {
            kind: SyntheticKind::KnownDensityClassification {
                coefficients: Some(linear.clone()),
                quadratic: Some(quadratic.clone()),
                coefficient_scale: 1.0,
            },
            n,
            d,
            num_classes: k,
            seed: rng::derive_seed(seed, &["verify/desk", label]),
        })
        .map(|g| g.dataset)
    };
    let (train, cal, test) = (draw(1200, "train")?, draw(1000, "calibration")?, draw(4000, "test")?);
    let sub_seed = |what: &str| rng::derive_seed(seed, &["verify/desk", what]);
    let loss = LossFn::cross_entropy();

    let mut weak_spec = ModelSpec::new(Family::SoftmaxLinear, sub_seed("weak"));
    weak_spec.hyper.max_epochs = 3;
    let (weak, _) = fit(&weak_spec, train.features.view(), &train.targets)?;
    let (strong, _) = fit(&ModelSpec::new(Family::SoftmaxMLP2, sub_seed("strong")), train.features.view(), &train.targets)?;

    let backends = [Family::SoftmaxLinear, Family::SoftmaxMLP, Family::SoftmaxMLP2];
    let mut plugins = Vec::new();
    let mut strongest = (f64::INFINITY, Family::SoftmaxLinear);
    for fam in backends {
        let (p, _) = fit(&ModelSpec::new(fam, sub_seed(fam.as_str())), cal.features.view(), &cal.targets)?;
        // Held-out NLL on the predictor rows picks the strongest backend.
        let probs = p.predict_proba(train.features.view())?;
        let labels = train.targets.labels().expect("classification");
        let nll = crate::riskcal::class_losses(&loss, probs.view(), labels).iter().sum::<f64>() / labels.len() as f64;
        if nll < strongest.0 {
            strongest = (nll, fam);
        }
        // Temperature-scaled variant, fit on the (disjoint) predictor rows.
        let labels = train.targets.labels().expect("classification");
        let (scaled, _) = RiskCalibrator::plugin_scaled(p.clone(), &loss, train.features.view(), labels)?;
        plugins.push((fam, false, RiskCalibrator::plugin(p, &loss)?));
        plugins.push((fam, true, scaled));
    }

    let mut best_plugin = vec![f64::INFINITY; DESK_COSTS.len()];
    let mut best_regression = vec![f64::INFINITY; DESK_COSTS.len()];
    let mut l1 = Vec::new();
    for (name, f) in [("weak", &weak), ("strong", &strong)] {
        let z = crate::riskcal::sample_losses(f, &loss, test.features.view(), &test.targets)?;
        let mut strongest_l1 = f64::NAN;
        for (fam, scaled, g) in &plugins {
            let est = g.estimate(f, test.features.view())?;
            if *fam == strongest.1 && !scaled {
                strongest_l1 = MetaLoss::L1.mean(&est, &z);
            }
            for (b, r) in best_plugin.iter_mut().zip(crate::defer::sweep_from(&est, &z, &DESK_COSTS)?) {
                *b = b.min(r.rwr_loss);
            }
        }
        let spec = ModelSpec::new(Family::MLP, sub_seed(&format!("regression/{name}")));
        let (g, _) = crate::riskcal::fit_regression_calibrator(
            &spec,
            &loss,
            f,
            cal.features.view(),
            &cal.targets,
            crate::riskcal::InputSource::Raw,
        )?;
        let est = g.estimate(f, test.features.view())?;
        for (b, r) in best_regression.iter_mut().zip(crate::defer::sweep_from(&est, &z, &DESK_COSTS)?) {
            *b = b.min(r.rwr_loss);
        }
        l1.push((strongest_l1, MetaLoss::L1.mean(&est, &z)));
    }
    Ok(DeskOutcome {
        strongest_backend: strongest.1,
        weak: l1[0],
        strong: l1[1],
        costs: DESK_COSTS.to_vec(),
        best_plugin_l2d: best_plugin,
        best_regression_l2d: best_regression,
    })
}

/// Every check and negative control with default sizes.
pub fn run_all(seed: u64) -> Result<Vec<TheoryCheckResult>> {
    let seeds: Vec<u64> = (0..10).map(|i| rng::derive_seed(seed, &["verify/seed", &i.to_string()])).collect();
    Ok(vec![
        brier_identity_check(100_000, seed)?,
        brier_identity_with(100_000, seed, ProbabilityModel::Tempered(0.5), ExcessRisk::Absolute)?,
        realizability_exactness(2_000, seed)?,
        realizability_with(2_000, seed, Some(0.01))?,
        separable_summary(3_000, &seeds)?.0,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_as_model_is_a_zero_case() {
        let r = brier_identity_with(5_000, 1, ProbabilityModel::Truth, ExcessRisk::Brier).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.passed && r.ok());
    }

    #[test]
    fn uniform_model_satisfies_identity_and_control_fails() {
        let r = brier_identity_with(100_000, 2, ProbabilityModel::Uniform, ExcessRisk::Brier).unwrap();
        assert!(r.passed, "{}", r.line());
        let c = brier_identity_with(100_000, 2, ProbabilityModel::Uniform, ExcessRisk::Absolute).unwrap();
        assert!(!c.passed && c.ok(), "{}", c.line());
    }

    #[test]
    fn default_brier_check() {
        let r = brier_identity_check(100_000, 3).unwrap();
        assert!(r.passed, "{}", r.line());
        assert!(brier_identity_check(999, 3).is_err());
    }

    #[test]
    fn realizability_and_its_control() {
        let r = realizability_exactness(2_000, 4).unwrap();
        assert!(r.passed, "{}", r.line());
        let c = realizability_with(2_000, 4, Some(0.01)).unwrap();
        assert!(!c.passed && c.ok());
        assert!(c.statistic >= 0.01 * 1e-3);
    }

    #[test]
    fn perfect_labeler_gives_near_zero_risks() {
        let o = separable_comparison(1_500, 5, &SeparablePredictor::PerfectLabeler, MetaLoss::L1).unwrap();
        assert_eq!(o.predictor_error_rate, 0.0);
        assert_eq!(o.regression_risk, 0.0);
        assert!(o.calibration_risk < 0.05, "{o:?}");
    }

    #[test]
    fn deterministic() {
        let a = separable_comparison(600, 6, &weak_separable_predictor(6), MetaLoss::L2).unwrap();
        let b = separable_comparison(600, 6, &weak_separable_predictor(6), MetaLoss::L2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn desk_reports_every_cost() {
        let o = desk_classification(0).unwrap();
        assert_eq!(o.costs, DESK_COSTS.to_vec());
        assert_eq!(o.best_plugin_l2d.len(), DESK_COSTS.len());
        assert_eq!(o.best_regression_l2d.len(), DESK_COSTS.len());
        // Each row pays either a zero-one loss or the cost.
        for (k, &c) in o.costs.iter().enumerate() {
            assert!(o.best_plugin_l2d[k] <= c.max(1.0));
            assert!(o.best_regression_l2d[k] <= c.max(1.0));
        }
        assert!(o.weak.0 >= 0.0 && o.strong.0 >= 0.0);
    }
}
