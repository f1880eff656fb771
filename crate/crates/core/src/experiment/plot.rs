use std::io::Write;

use serde::Serialize;

use super::config::{CalibratorChoice, ExperimentConfig, Task};
use super::grid::{calibrator_path, predictor_path, FoldData};
use crate::data::{make_split_plans, Manifest, NUM_FOLDS};
use crate::error::{Error, Result};
use crate::models::{Family, Predictor};
use crate::riskcal::RiskCalibrator;
use crate::rng::derive_seed;

/// One test row of the error-profile plot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlotRow {
    pub target: f64,
    pub prediction: f64,
    /// `√max(ĝ(x), 0)`, on the scale of the target.
    pub sqrt_estimated_loss: f64,
}

/// Target, prediction and root estimated loss on one fold's test rows,
/// sorted by target. Uses models saved by the grid when present and
/// otherwise refits them with the grid's seeds.
pub fn export_plot_data(
    cfg: &ExperimentConfig,
    dataset: &str,
    regressor: Family,
    calibrator: CalibratorChoice,
    fold: usize,
) -> Result<Vec<PlotRow>> {
    if fold >= NUM_FOLDS {
        return Err(Error::Config(format!("fold must be below {NUM_FOLDS}, got {fold}")));
    }
    if calibrator.is_plugin() {
        return Err(Error::Config(format!("plot data is for regression calibrators, not {calibrator}")));
    }
    let task = Task::Rwr;
    let manifest = if cfg.synthetic.contains_key(dataset) {
        Manifest::default()
    } else {
        Manifest::from_file(&cfg.manifest)?
    };
    let ds = cfg.load_dataset(&manifest, dataset, task)?;
    let plan = make_split_plans(ds.n(), derive_seed(cfg.seed, &["split", &ds.name]))?.swap_remove(fold);
    let fd = FoldData::new(cfg, task, &ds, plan)?;

    let f_path = predictor_path(cfg, dataset, fold, regressor);
    let f = if f_path.exists() {
        Predictor::load(&f_path)?
    } else {
        fd.fit_regressor(regressor)?
    };
    let g_path = calibrator_path(cfg, dataset, fold, regressor, calibrator);
    let g = if g_path.exists() {
        RiskCalibrator::load(&g_path)?
    } else {
        fd.fit_calibrator(&f, calibrator, None)?
    };

    let pred = f.predict(fd.x_test.view())?;
    let est = g.estimate(&f, fd.x_test.view())?;
    let target = fd.y_test.as_real();
    let mut rows: Vec<PlotRow> = target
        .iter()
        .zip(&pred)
        .zip(&est)
        .map(|((&t, &p), &e)| PlotRow {
            target: t,
            prediction: p,
            sqrt_estimated_loss: e.max(0.0).sqrt(),
        })
        .collect();
    rows.sort_by(|a, b| a.target.total_cmp(&b.target));
    Ok(rows)
}

pub fn write_plot_csv(rows: &[PlotRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["target", "prediction", "sqrt_estimated_loss"])?;
    }
    w.flush().map_err(|e| Error::Serialization(e.to_string()))
}
