//! Acceptance criteria 1–10, one PASS/FAIL line each.
//!
//! Runs as a plain binary (no libtest harness) so the summary is always
//! printed; exits non-zero when any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use riskcal::data::{generate_synthetic, make_split_plans, Manifest, SyntheticKind, SyntheticSpec, Targets};
use riskcal::defer::{evaluate_from, sweep_from};
use riskcal::experiment::{run_grid, CalibratorChoice, ExperimentConfig, ExperimentResult, FoldData, Task};
use riskcal::models::{fit, gradient_check, Family, Head, ModelSpec};
use riskcal::numeric::{argmax, spearman};
use riskcal::riskcal::{fit_temperature, sample_losses, scaled_probabilities};
use riskcal::{rng, verify};

const COSTS: [f64; 4] = [0.2, 0.5, 1.0, 2.0];
const ALL_DATASETS: [&str; 8] = ["energy", "concrete", "wine", "airfoil", "housing", "solar", "forest", "parkinsons"];
const FOUR: [Family; 4] = [Family::LR, Family::MLP, Family::MLP2, Family::RF];

struct Verdict {
    passed: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Verdict {
    Verdict {
        passed: true,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Verdict {
    Verdict {
        passed: false,
        detail: detail.into(),
    }
}

fn manifest_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/manifest.toml")
}

fn manifest() -> Manifest {
    Manifest::from_file(manifest_path()).expect("workspace manifest")
}

/// `Err(reason)` when a dataset cannot be loaded.
fn require(name: &str) -> Result<(), String> {
    manifest().load(name).map(|_| ()).map_err(|e| e.to_string())
}

fn config(out: &Path, datasets: &[&str], regressors: &[Family], calibrators: &[Family], workers: usize) -> ExperimentConfig {
    ExperimentConfig {
        task: Some(Task::Rwr),
        datasets: datasets.iter().map(|s| s.to_string()).collect(),
        regressors: regressors.to_vec(),
        calibrators: calibrators.iter().map(|&f| CalibratorChoice::Regression(f)).collect(),
        costs: COSTS.to_vec(),
        folds: 10,
        seed: 42,
        loss: None,
        manifest: manifest_path(),
        output_dir: out.to_path_buf(),
        workers: Some(workers),
        save_models: false,
        synthetic: Default::default(),
    }
}

fn grid(datasets: &[&str], regressors: &[Family], calibrators: &[Family], workers: usize) -> (Vec<ExperimentResult>, Duration, Vec<String>) {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = config(dir.path(), datasets, regressors, calibrators, workers);
    let start = Instant::now();
    let outcome = run_grid(&cfg, Task::Rwr).expect("grid runs");
    let elapsed = start.elapsed();
    let rows = riskcal::experiment::read_results(&outcome.results_path).expect("results parse");
    let failures = outcome.failures.iter().map(|f| format!("{}: {}", f.dataset, f.error)).collect();
    (rows, elapsed, failures)
}

fn mean_rwr(rows: &[ExperimentResult], d: &str, r: &str, c: &str, cost: f64) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|x| x.dataset == d && x.regressor == r && x.calibrator == c && x.cost == cost)
        .map(|x| x.rwr_loss)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fold_mean(rows: &[ExperimentResult], pick: impl Fn(&ExperimentResult) -> bool, value: impl Fn(&ExperimentResult) -> f64) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| pick(r)).map(value).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn rwr_band(dataset: &str, pair: (Family, Family), reference: [f64; 4], tol: f64, budget: Duration) -> Verdict {
    if let Err(reason) = require(dataset) {
        return fail(format!("cannot evaluate: {reason}"));
    }
    let (rows, elapsed, _) = grid(&[dataset], &[pair.0], &[pair.1], 1);
    let (r, c) = (pair.0.to_string(), pair.1.to_string());
    let got: Vec<f64> = COSTS.iter().map(|&k| mean_rwr(&rows, dataset, &r, &c, k).unwrap_or(f64::NAN)).collect();
    let within = got.iter().zip(reference).all(|(g, p)| (g - p).abs() <= tol);
    let detail = format!(
        "{dataset} {r}+{c} rwr = [{}] vs [{}] ±{tol}; {:.1}s (budget {}s)",
        got.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", "),
        reference.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(", "),
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    if within && elapsed < budget {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn criterion_1() -> Verdict {
    rwr_band("energy", (Family::RF, Family::RF), [0.14, 0.26, 0.30, 0.32], 0.10, Duration::from_secs(120))
}

fn criterion_2() -> Verdict {
    rwr_band("concrete", (Family::MLP, Family::RF), [0.20, 0.50, 1.00, 2.00], 0.05, Duration::from_secs(180))
}

fn criterion_3() -> Verdict {
    rwr_band("wine", (Family::MLP, Family::RF), [0.17, 0.24, 0.25, 0.25], 0.08, Duration::from_secs(120))
}

fn criterion_4() -> Verdict {
    if let Err(reason) = require("energy") {
        return fail(format!("cannot evaluate: {reason}"));
    }
    // Predictor loss does not depend on the calibrator; LR is the cheapest.
    let (rows, _, _) = grid(&["energy"], &FOUR, &[Family::LR], 1);
    let order = [(Family::RF, 0.32), (Family::MLP2, 2.36), (Family::MLP, 7.54), (Family::LR, 8.24)];
    let losses: Vec<f64> = order
        .iter()
        .map(|(f, _)| {
            let name = f.to_string();
            fold_mean(&rows, |r| r.regressor == name && r.cost == COSTS[0], |r| r.predictor_loss).unwrap_or(f64::NAN)
        })
        .collect();
    let ordered = losses.windows(2).all(|w| w[0] < w[1]);
    let factor = losses.iter().zip(order).all(|(&l, (_, p))| l >= p / 2.0 && l <= p * 2.0);
    let detail = format!(
        "energy predictor MSE RF {:.2} < MLP2 {:.2} < MLP {:.2} < LR {:.2} (ordered: {ordered}, within ×2: {factor})",
        losses[0], losses[1], losses[2], losses[3]
    );
    if ordered && factor {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn criterion_5(rows: &[ExperimentResult], available: &[&str]) -> Verdict {
    let mut wins = Vec::new();
    for d in available {
        let mae: Vec<(Family, f64)> = FOUR
            .iter()
            .map(|&c| {
                let name = c.to_string();
                (c, fold_mean(rows, |r| r.dataset == *d && r.calibrator == name && r.cost == COSTS[0], |r| r.calib_mae).unwrap_or(f64::NAN))
            })
            .collect();
        let best = mae.iter().min_by(|a, b| a.1.total_cmp(&b.1)).map(|b| b.0);
        if best == Some(Family::RF) {
            wins.push(*d);
        }
    }
    let missing: Vec<&str> = ALL_DATASETS.iter().copied().filter(|d| !available.contains(d)).collect();
    let detail = format!(
        "RF lowest calibrator MAE on {}/{} evaluated datasets [{}]; need ≥ 5 of 8{}",
        wins.len(),
        available.len(),
        wins.join(", "),
        if missing.is_empty() {
            String::new()
        } else {
            format!("; unavailable: {}", missing.join(", "))
        }
    );
    if wins.len() >= 5 {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn criterion_6() -> Verdict {
    if let Err(reason) = require("energy") {
        return fail(format!("cannot evaluate: {reason}"));
    }
    let (rows, _, _) = grid(&["energy"], &FOUR, &FOUR, 1);
    let mut positive = 0;
    let mut groups = 0;
    for r in FOUR {
        for &cost in &COSTS {
            let (mut mae, mut rwr) = (Vec::new(), Vec::new());
            for c in FOUR {
                let (rn, cn) = (r.to_string(), c.to_string());
                let pick = |x: &ExperimentResult| x.regressor == rn && x.calibrator == cn && x.cost == cost;
                mae.push(fold_mean(&rows, pick, |x| x.calib_mae).unwrap_or(f64::NAN));
                rwr.push(fold_mean(&rows, pick, |x| x.rwr_loss).unwrap_or(f64::NAN));
            }
            groups += 1;
            if spearman(&mae, &rwr) > 0.0 {
                positive += 1;
            }
        }
    }
    let detail = format!("positive MAE/rwr Spearman in {positive}/{groups} (regressor, cost) groups; need ≥ 12");
    if positive >= 12 {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn criterion_7(available: &[&str]) -> Verdict {
    let start = Instant::now();
    let mut problems = Vec::new();
    let mut cells = 0usize;

    // Oracle bound and oracle-sweep monotonicity on real folds.
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = config(dir.path(), available, &[Family::LR, Family::RF], &[Family::LR, Family::RF], 1);
    let m = manifest();
    for d in available {
        let ds = m.load(d).expect("available");
        for plan in make_split_plans(ds.n(), rng::derive_seed(cfg.seed, &["split", d])).expect("plans") {
            let fd = FoldData::new(&cfg, Task::Rwr, &ds, plan).expect("fold");
            for r in [Family::LR, Family::RF] {
                let f = fd.fit_regressor(r).expect("fit");
                let z = sample_losses(&f, &fd.loss, fd.x_test.view(), &fd.y_test).expect("losses");
                let oracle: Vec<f64> = sweep_from(&z, &z, &COSTS).expect("sweep").iter().map(|x| x.rwr_loss).collect();
                if oracle.windows(2).any(|w| w[1] < w[0]) {
                    problems.push(format!("{d}: oracle sweep not monotone"));
                }
                for c in [Family::LR, Family::RF] {
                    let g = fd.fit_calibrator(&f, CalibratorChoice::Regression(c), None).expect("calibrator");
                    let est = g.estimate(&f, fd.x_test.view()).expect("estimate");
                    for &cost in &COSTS {
                        let rep = evaluate_from(&est, &z, cost).expect("evaluate");
                        cells += 1;
                        if rep.rwr_loss < rep.oracle_rwr_loss {
                            problems.push(format!("{d} {r}+{c} c={cost}: below oracle"));
                        }
                    }
                }
            }
        }
    }

    // Plug-in exactness, Brier identity and their negative controls.
    for check in [
        verify::realizability_exactness(2_000, 7),
        verify::realizability_with(2_000, 7, Some(0.01)),
        verify::brier_identity_check(100_000, 7),
        verify::brier_identity_with(100_000, 7, verify::ProbabilityModel::Tempered(0.5), verify::ExcessRisk::Absolute),
    ] {
        let check = check.expect("check runs");
        if !check.ok() {
            problems.push(check.line());
        }
    }

    // Temperature scaling never changes the predicted class.
    let data = generate_synthetic(&SyntheticSpec {
        kind: SyntheticKind::KnownDensityClassification {
            coefficients: None,
            quadratic: None,
            coefficient_scale: 1.5,
        },
        n: 1_500,
        d: 4,
        num_classes: 3,
        seed: 11,
    })
    .expect("synthetic");
    let x = &data.dataset.features;
    let (p, _) = fit(&ModelSpec::new(Family::SoftmaxMLP, 3), x.view(), &data.dataset.targets).expect("fit");
    let labels = data.dataset.targets.labels().expect("labels");
    let t = fit_temperature(&p, x.view(), labels).expect("temperature").temperature;
    let classes = p.predict_classes(x.view()).expect("classes");
    let logits = p.predict_logits(x.view()).expect("logits");
    for temp in [t, 0.01, 0.5, 3.0, 100.0] {
        let scaled = scaled_probabilities(logits.view(), temp);
        if scaled.rows().into_iter().zip(&classes).any(|(row, &k)| argmax(row.as_slice().expect("row")) != k) {
            problems.push(format!("temperature {temp} changed a predicted class"));
        }
    }

    // Gradient checks on every perceptron family and head.
    let mut s = rng::stream(5, "acceptance/grad");
    let gx = Array2::from_shape_fn((16, 3), |_| s.random_range(-1.5..1.5));
    let real = Targets::Real((0..16).map(|_| s.random_range(-2.0..2.0)).collect());
    let class = Targets::Class {
        labels: (0..16).map(|i| i % 3).collect(),
        num_classes: 3,
    };
    let mut worst = 0.0f64;
    for (fam, head, y) in [
        (Family::MLP, Head::Regression, &real),
        (Family::MLP2, Head::Regression, &real),
        (Family::SoftmaxLinear, Head::Classification, &class),
        (Family::SoftmaxMLP, Head::Classification, &class),
        (Family::SoftmaxMLP2, Head::Classification, &class),
    ] {
        let gc = gradient_check(&ModelSpec::new(fam, 9).with_head(head), gx.view(), y).expect("gradient check");
        // Parameters whose finite-difference window crosses a ReLU kink have
        // no derivative there; every other parameter must match.
        let rel = if gc.kinked.is_empty() {
            gc.max_relative_error
        } else {
            gc.max_relative_error_smooth
        };
        worst = worst.max(rel);
        if rel >= 1e-4 {
            problems.push(format!("{fam} gradient relative error {rel:.2e}"));
        }
    }

    // Split plans: disjoint within a fold, test blocks cover every row once.
    let mut s = rng::stream(6, "acceptance/splits");
    for _ in 0..200 {
        let n = s.random_range(20..3_000);
        let seed: u64 = s.random();
        let plans = make_split_plans(n, seed).expect("plans");
        let mut tested = vec![0u8; n];
        for p in &plans {
            let mut seen = vec![0u8; n];
            for &r in p.test_rows.iter().chain(&p.regressor_rows).chain(&p.calibrator_rows) {
                seen[r] += 1;
            }
            if seen.iter().any(|&c| c != 1) {
                problems.push(format!("n={n} seed={seed} fold {}: rows not partitioned", p.fold_index));
            }
            for &r in &p.test_rows {
                tested[r] += 1;
            }
        }
        if tested.iter().any(|&c| c != 1) {
            problems.push(format!("n={n} seed={seed}: test blocks do not cover rows once"));
        }
    }

    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(300) {
        problems.push(format!("runtime {:.0}s over 5 min", elapsed.as_secs_f64()));
    }
    let detail = format!(
        "{cells} evaluated cells ≥ oracle, plug-in exactness, Brier identity (+controls), temperature argmax, gradients (worst {worst:.1e}), 200 split plans; {:.1}s",
        elapsed.as_secs_f64()
    );
    if problems.is_empty() {
        pass(detail)
    } else {
        fail(format!("{detail}; problems: {}", problems.join("; ")))
    }
}

fn criterion_8() -> Verdict {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..10).map(|i| rng::derive_seed(42, &["verify/seed", &i.to_string()])).collect();
    let (check, outcomes) = verify::separable_summary(3_000, &seeds).expect("separable runs");
    let elapsed = start.elapsed();
    let wins = outcomes.iter().filter(|o| o.calibration_risk <= o.regression_risk).count();
    let detail = format!("plug-in L1 risk ≤ regression-based on {wins}/10 seeds; {:.1}s", elapsed.as_secs_f64());
    if check.passed && wins >= 8 && elapsed < Duration::from_secs(120) {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn criterion_9() -> Verdict {
    let outcomes: Vec<verify::DeskOutcome> = (0..10u64)
        .map(|i| verify::desk_classification(rng::derive_seed(42, &["desk", &i.to_string()])).expect("desk runs"))
        .collect();
    let mean = |f: &dyn Fn(&verify::DeskOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / outcomes.len() as f64;
    let (wp, wr) = (mean(&|o| o.weak.0), mean(&|o| o.weak.1));
    let (sp, sr) = (mean(&|o| o.strong.0), mean(&|o| o.strong.1));
    let a = wp < wr && sp < sr;
    let b = outcomes.iter().filter(|o| o.plugin_defers_no_worse()).count();
    let detail = format!(
        "(a) mean L1 calib error plug-in vs regression: weak {wp:.3} vs {wr:.3}, strong {sp:.3} vs {sr:.3}; (b) best plug-in deferral loss ≤ regression-based at every cost on {b}/10 seeds"
    );
    if a && b >= 8 {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn strip_time(rows: &[ExperimentResult]) -> Vec<ExperimentResult> {
    rows.iter()
        .cloned()
        .map(|mut r| {
            r.wall_time_ms = 0;
            r
        })
        .collect()
}

fn main() {
    let m = manifest();
    let available: Vec<&str> = ALL_DATASETS.iter().copied().filter(|d| m.load(d).is_ok()).collect();
    let mut verdicts: Vec<(usize, Verdict)> = Vec::new();
    let mut report = |k: usize, v: Verdict| {
        println!("criterion {k:>2}: {} — {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        verdicts.push((k, v));
    };

    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());

    // One full grid serves criterion 5 and the first run of criterion 10.
    let (first, t1, failures) = grid(&ALL_DATASETS, &FOUR, &FOUR, 1);
    report(5, criterion_5(&first, &available));
    report(6, criterion_6());
    report(7, criterion_7(&available));
    report(8, criterion_8());
    report(9, criterion_9());

    let (second, t2, _) = grid(&ALL_DATASETS, &FOUR, &FOUR, 4);
    let identical = strip_time(&first) == strip_time(&second);
    let detail = format!(
        "{} rows of 5120 ({} datasets available); single-threaded {:.0}s (budget 1800s), 4 workers {:.0}s; runs identical: {identical}{}",
        first.len(),
        available.len(),
        t1.as_secs_f64(),
        t2.as_secs_f64(),
        if failures.is_empty() {
            String::new()
        } else {
            format!("; skipped: {}", failures.join(" | "))
        }
    );
    let v = if first.len() == 5120 && identical && t1 < Duration::from_secs(1800) {
        pass(detail)
    } else {
        fail(detail)
    };
    report(10, v);

    let failed: Vec<String> = verdicts.iter().filter(|(_, v)| !v.passed).map(|(k, _)| k.to_string()).collect();
    println!(
        "acceptance: {}/10 criteria pass{}",
        10 - failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" (failing: {})", failed.join(", "))
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
