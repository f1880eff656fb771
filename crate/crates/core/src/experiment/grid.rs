use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CalibratorChoice, ExperimentConfig, Task};
use crate::data::{make_split_plans, Dataset, Manifest, SplitPlan, Targets};
use crate::defer::sweep_from;
use crate::error::{Error, Result};
use crate::models::{fit, Family, Head, ModelSpec, Predictor};
use crate::riskcal::{
    calib_error_from, fit_regression_calibrator, sample_losses, InputSource, LossFn, RiskCalibrator,
};
use crate::rng::derive_seed;

pub const RESULT_HEADER: [&str; 10] = [
    "dataset",
    "fold",
    "regressor",
    "calibrator",
    "cost",
    "rwr_loss",
    "reject_rate",
    "calib_mae",
    "predictor_loss",
    "wall_time_ms",
];

/// One (dataset, fold, regressor, calibrator, cost) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub dataset: String,
    pub fold: usize,
    pub regressor: String,
    pub calibrator: String,
    pub cost: f64,
    pub rwr_loss: f64,
    pub reject_rate: f64,
    pub calib_mae: f64,
    pub predictor_loss: f64,
    /// Time to fit and apply the calibrator (shared by the pair's cost rows).
    pub wall_time_ms: u64,
}

type CellKey = (String, usize, String, String, u64);

impl ExperimentResult {
    fn key(&self) -> CellKey {
        (
            self.dataset.clone(),
            self.fold,
            self.regressor.clone(),
            self.calibrator.clone(),
            self.cost.to_bits(),
        )
    }
}

/// A unit of the grid that produced no rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub dataset: String,
    pub fold: Option<usize>,
    pub regressor: Option<String>,
    pub calibrator: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub results_path: PathBuf,
    pub rows: usize,
    pub new_rows: usize,
    /// Cells already present from an earlier run.
    pub resumed_rows: usize,
    pub failures: Vec<CellFailure>,
}

pub fn results_path(cfg: &ExperimentConfig, task: Task) -> PathBuf {
    cfg.output_dir.join(match task {
        Task::Rwr => "rwr_results.csv",
        Task::Classify => "classify_results.csv",
    })
}

pub fn failures_path(cfg: &ExperimentConfig, task: Task) -> PathBuf {
    cfg.output_dir.join(match task {
        Task::Rwr => "rwr_failures.csv",
        Task::Classify => "classify_failures.csv",
    })
}

/// Reads a result CSV; an empty or missing-body file yields no rows.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ExperimentResult>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text, false)
}

fn parse_results(text: &str, lenient: bool) -> Result<Vec<ExperimentResult>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RESULT_HEADER {
        return Err(Error::Serialization(format!(
            "unexpected result header {header:?}, expected {RESULT_HEADER:?}"
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<ExperimentResult>() {
        match rec {
            Ok(r) => rows.push(r),
            // A killed run can leave one truncated final line.
            Err(e) if lenient => {
                log::warn!("dropping unreadable result line: {e}");
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(rows)
}

fn write_rows(path: &Path, rows: &[ExperimentResult]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        w.write_record(RESULT_HEADER)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// The rows, loss vectors and seeds of one (dataset, fold).
pub struct FoldData<'a> {
    pub cfg: &'a ExperimentConfig,
    pub task: Task,
    pub loss: LossFn,
    pub dataset: String,
    pub plan: SplitPlan,
    pub x_reg: Array2<f64>,
    pub y_reg: Targets,
    pub x_cal: Array2<f64>,
    pub y_cal: Targets,
    pub x_test: Array2<f64>,
    pub y_test: Targets,
}

impl<'a> FoldData<'a> {
    pub fn new(cfg: &'a ExperimentConfig, task: Task, ds: &Dataset, plan: SplitPlan) -> Result<Self> {
        let pick = |rows: &[usize]| ds.select(rows);
        let (r, c, t) = (pick(&plan.regressor_rows), pick(&plan.calibrator_rows), pick(&plan.test_rows));
        Ok(Self {
            cfg,
            task,
            loss: cfg.loss_fn(task)?,
            dataset: ds.name.clone(),
            plan,
            x_reg: r.features,
            y_reg: r.targets,
            x_cal: c.features,
            y_cal: c.targets,
            x_test: t.features,
            y_test: t.targets,
        })
    }

    fn fold_label(&self) -> String {
        self.plan.fold_index.to_string()
    }

    pub fn fit_regressor(&self, family: Family) -> Result<Predictor> {
        let seed = derive_seed(self.cfg.seed, &["regressor", &self.dataset, &self.fold_label(), family.as_str()]);
        let head = match self.task {
            Task::Rwr => Head::Regression,
            Task::Classify => Head::Classification,
        };
        Ok(fit(&ModelSpec::new(family, seed).with_head(head), self.x_reg.view(), &self.y_reg)?.0)
    }

    /// Probability model for plug-in calibration; it does not depend on the
    /// predictor, so one fit serves every regressor of the fold.
    pub fn fit_probability_model(&self, family: Family) -> Result<Predictor> {
        let seed = derive_seed(self.cfg.seed, &["plugin", &self.dataset, &self.fold_label(), family.as_str()]);
        let spec = ModelSpec::new(family, seed).with_head(Head::Classification);
        Ok(fit(&spec, self.x_cal.view(), &self.y_cal)?.0)
    }

    pub fn fit_calibrator(
        &self,
        f: &Predictor,
        choice: CalibratorChoice,
        probability_model: Option<&Predictor>,
    ) -> Result<RiskCalibrator> {
        let seed = derive_seed(
            self.cfg.seed,
            &["calibrator", &self.dataset, &self.fold_label(), f.family().as_str(), &choice.to_string()],
        );
        let regression = |input| {
            let spec = ModelSpec::new(choice.family(), seed).with_head(Head::Regression);
            fit_regression_calibrator(&spec, &self.loss, f, self.x_cal.view(), &self.y_cal, input).map(|(g, _)| g)
        };
        let owned;
        let p_hat = match (choice.is_plugin(), probability_model) {
            (true, Some(p)) => Some(p),
            (true, None) => {
                owned = self.fit_probability_model(choice.family())?;
                Some(&owned)
            }
            (false, _) => None,
        };
        match choice {
            CalibratorChoice::Regression(_) => regression(InputSource::Raw),
            CalibratorChoice::Representation(_) => regression(InputSource::Representation(f)),
            CalibratorChoice::Plugin(_) => RiskCalibrator::plugin(p_hat.expect("plugin").clone(), &self.loss),
            CalibratorChoice::PluginScaled(_) => {
                // The probability model was fit on calibrator rows, so its
                // temperature is fit on the (disjoint) regressor rows.
                let labels = self
                    .y_reg
                    .labels()
                    .ok_or_else(|| Error::HeadMismatch("temperature scaling needs class labels".into()))?;
                RiskCalibrator::plugin_scaled(p_hat.expect("plugin").clone(), &self.loss, self.x_reg.view(), labels)
                    .map(|(g, _)| g)
            }
        }
    }
}

fn model_path(cfg: &ExperimentConfig, dataset: &str, fold: usize, name: &str) -> PathBuf {
    cfg.output_dir
        .join("models")
        .join(dataset)
        .join(format!("fold{fold}"))
        .join(format!("{}.json", name.replace(':', "_")))
}

/// Where a saved predictor would live.
pub fn predictor_path(cfg: &ExperimentConfig, dataset: &str, fold: usize, regressor: Family) -> PathBuf {
    model_path(cfg, dataset, fold, regressor.as_str())
}

/// Where a saved calibrator would live.
pub fn calibrator_path(cfg: &ExperimentConfig, dataset: &str, fold: usize, regressor: Family, c: CalibratorChoice) -> PathBuf {
    model_path(cfg, dataset, fold, &format!("{}+{c}", regressor.as_str()))
}

fn save_model(path: &Path, save: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save(path)
}

struct Unit<'a> {
    fold: FoldData<'a>,
    /// Cells still missing, per (regressor, calibrator).
    todo: BTreeMap<(usize, usize), Vec<usize>>,
}

fn run_unit(unit: &Unit<'_>, costs_sorted: &[(usize, f64)]) -> (Vec<ExperimentResult>, Vec<CellFailure>) {
    let fd = &unit.fold;
    let cfg = fd.cfg;
    let fold = fd.plan.fold_index;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let fail = |r: Option<Family>, c: Option<CalibratorChoice>, e: Error| {
        log::error!("{} fold {fold} {:?}+{:?}: {e}", fd.dataset, r, c.map(|c| c.to_string()));
        CellFailure {
            dataset: fd.dataset.clone(),
            fold: Some(fold),
            regressor: r.map(|r| r.to_string()),
            calibrator: c.map(|c| c.to_string()),
            error: e.to_string(),
        }
    };
    let mut plugin_models: BTreeMap<Family, std::result::Result<Predictor, String>> = BTreeMap::new();

    for (ri, &r) in cfg.regressors.iter().enumerate() {
        let pairs: Vec<(usize, &Vec<usize>)> =
            unit.todo.range((ri, 0)..(ri + 1, 0)).map(|(&(_, ci), v)| (ci, v)).collect();
        if pairs.is_empty() {
            continue;
        }
        let f = match fd.fit_regressor(r) {
            Ok(f) => f,
            Err(e) => {
                failures.push(fail(Some(r), None, e));
                continue;
            }
        };
        if cfg.save_models {
            if let Err(e) = save_model(&predictor_path(cfg, &fd.dataset, fold, r), |p| f.save(p)) {
                log::warn!("could not save model: {e}");
            }
        }
        let z = match sample_losses(&f, &fd.loss, fd.x_test.view(), &fd.y_test) {
            Ok(z) => z,
            Err(e) => {
                failures.push(fail(Some(r), None, e));
                continue;
            }
        };
        let predictor_loss = z.iter().sum::<f64>() / z.len() as f64;

        for (ci, cost_idx) in pairs {
            let c = cfg.calibrators[ci];
            let start = Instant::now();
            let outcome = (|| -> Result<Vec<ExperimentResult>> {
                let p_hat = if c.is_plugin() {
                    let entry = plugin_models
                        .entry(c.family())
                        .or_insert_with(|| fd.fit_probability_model(c.family()).map_err(|e| e.to_string()));
                    Some(entry.as_ref().map_err(|e| Error::InvalidInput(e.clone()))?)
                } else {
                    None
                };
                let g = fd.fit_calibrator(&f, c, p_hat)?;
                let est = g.estimate(&f, fd.x_test.view())?;
                let mae = calib_error_from(&est, &z)?.mae;
                let wanted: Vec<(usize, f64)> =
                    costs_sorted.iter().copied().filter(|(i, _)| cost_idx.contains(i)).collect();
                let costs: Vec<f64> = wanted.iter().map(|&(_, c)| c).collect();
                let reports = sweep_from(&est, &z, &costs)?;
                if cfg.save_models {
                    let path = calibrator_path(cfg, &fd.dataset, fold, r, c);
                    if let Err(e) = save_model(&path, |p| g.save(p)) {
                        log::warn!("could not save model: {e}");
                    }
                }
                let ms = start.elapsed().as_millis() as u64;
                Ok(reports
                    .into_iter()
                    .map(|rep| ExperimentResult {
                        dataset: fd.dataset.clone(),
                        fold,
                        regressor: r.to_string(),
                        calibrator: c.to_string(),
                        cost: rep.cost,
                        rwr_loss: rep.rwr_loss,
                        reject_rate: rep.reject_rate,
                        calib_mae: mae,
                        predictor_loss,
                        wall_time_ms: ms,
                    })
                    .collect())
            })();
            match outcome {
                Ok(mut r) => rows.append(&mut r),
                Err(e) => failures.push(fail(Some(r), Some(c), e)),
            }
        }
    }
    (rows, failures)
}

fn position<T: PartialEq>(items: &[T], item: &T) -> usize {
    items.iter().position(|i| i == item).unwrap_or(usize::MAX)
}

/// Sorts rows into config order: dataset, fold, regressor, calibrator, cost.
/// Rows outside the config keep their place after the known ones.
fn canonical_sort(cfg: &ExperimentConfig, rows: &mut [ExperimentResult]) {
    let regs: Vec<String> = cfg.regressors.iter().map(ToString::to_string).collect();
    let cals: Vec<String> = cfg.calibrators.iter().map(ToString::to_string).collect();
    rows.sort_by(|a, b| {
        let key = |r: &ExperimentResult| {
            (
                position(&cfg.datasets, &r.dataset),
                r.dataset.clone(),
                r.fold,
                position(&regs, &r.regressor),
                r.regressor.clone(),
                position(&cals, &r.calibrator),
                r.calibrator.clone(),
                cfg.costs.iter().position(|c| c.to_bits() == r.cost.to_bits()).unwrap_or(usize::MAX),
            )
        };
        key(a).cmp(&key(b)).then(a.cost.total_cmp(&b.cost))
    });
}

/// Runs every missing cell of the grid, appending rows to the result CSV as
/// each (dataset, fold) finishes, then rewrites the file in canonical order.
pub fn run_grid(cfg: &ExperimentConfig, task: Task) -> Result<GridOutcome> {
    cfg.validate(task)?;
    let manifest = if cfg.datasets.iter().all(|d| cfg.synthetic.contains_key(d)) {
        Manifest::default()
    } else {
        Manifest::from_file(&cfg.manifest)?
    };
    cfg.check_datasets(&manifest)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let path = results_path(cfg, task);

    // Resume: keep every readable row and rewrite the file cleanly.
    let existing = match std::fs::read_to_string(&path) {
        Ok(text) => parse_results(&text, true)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(&path, e)),
    };
    write_rows(&path, &existing)?;
    let done: HashSet<CellKey> = existing.iter().map(ExperimentResult::key).collect();

    let mut costs_sorted: Vec<(usize, f64)> = cfg.costs.iter().copied().enumerate().collect();
    costs_sorted.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut failures = Vec::new();
    let mut datasets = Vec::new();
    for name in &cfg.datasets {
        match cfg.load_dataset(&manifest, name, task) {
            Ok(ds) => datasets.push(ds),
            Err(e) => {
                log::error!("skipping dataset {name}: {e}");
                failures.push(CellFailure {
                    dataset: name.clone(),
                    fold: None,
                    regressor: None,
                    calibrator: None,
                    error: e.to_string(),
                });
            }
        }
    }

    let mut units = Vec::new();
    for ds in &datasets {
        let plans = match make_split_plans(ds.n(), derive_seed(cfg.seed, &["split", &ds.name])) {
            Ok(p) => p,
            Err(e) => {
                failures.push(CellFailure {
                    dataset: ds.name.clone(),
                    fold: None,
                    regressor: None,
                    calibrator: None,
                    error: e.to_string(),
                });
                continue;
            }
        };
        for plan in plans.into_iter().take(cfg.folds) {
            let fold = plan.fold_index;
            let mut todo: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
            for (ri, r) in cfg.regressors.iter().enumerate() {
                for (ci, c) in cfg.calibrators.iter().enumerate() {
                    for (ki, cost) in cfg.costs.iter().enumerate() {
                        let key = (ds.name.clone(), fold, r.to_string(), c.to_string(), cost.to_bits());
                        if !done.contains(&key) {
                            todo.entry((ri, ci)).or_default().push(ki);
                        }
                    }
                }
            }
            if !todo.is_empty() {
                units.push(Unit {
                    fold: FoldData::new(cfg, task, ds, plan)?,
                    todo,
                });
            }
        }
    }

    let file = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
    let writer = Mutex::new(csv::WriterBuilder::new().has_headers(false).from_writer(file));
    let workers = cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let unit_failures: Vec<Vec<CellFailure>> = pool.install(|| {
        units
            .par_iter()
            .map(|unit| {
                let (rows, fails) = run_unit(unit, &costs_sorted);
                let mut w = writer.lock().expect("result writer poisoned");
                for r in &rows {
                    if let Err(e) = w.serialize(r) {
                        log::error!("could not append result row: {e}");
                    }
                }
                if let Err(e) = w.flush() {
                    log::error!("could not flush results: {e}");
                }
                log::info!(
                    "{} fold {}: {} rows, {} failures",
                    unit.fold.dataset,
                    unit.fold.plan.fold_index,
                    rows.len(),
                    fails.len()
                );
                fails
            })
            .collect()
    });
    drop(writer);
    failures.extend(unit_failures.into_iter().flatten());

    let mut rows = read_results(&path)?;
    let new_rows = rows.len() - existing.len();
    canonical_sort(cfg, &mut rows);
    write_rows(&path, &rows)?;

    let fpath = failures_path(cfg, task);
    if failures.is_empty() {
        let _ = std::fs::remove_file(&fpath);
    } else {
        let mut w = csv::Writer::from_path(&fpath)?;
        for f in &failures {
            w.serialize(f)?;
        }
        w.flush().map_err(|e| Error::io(&fpath, e))?;
    }

    Ok(GridOutcome {
        results_path: path,
        rows: rows.len(),
        new_rows,
        resumed_rows: existing.len(),
        failures,
    })
}
