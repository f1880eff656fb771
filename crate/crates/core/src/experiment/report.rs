use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::grid::{read_results, ExperimentResult};
use crate::error::{Error, Result};

/// Published SelectiveNet and NN+kNNRej rejection losses, keyed by
/// (dataset, cost). Shipped as static reference; never recomputed.
const REFERENCE_CSV: &str = include_str!("../../data/reference_benchmarks.csv");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBenchmark {
    pub cost: f64,
    pub selnet: f64,
    pub nn_knnrej: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct ReferenceRow {
    dataset: String,
    cost: f64,
    selnet: f64,
    nn_knnrej: f64,
}

pub fn reference_benchmarks() -> Vec<(String, ReferenceBenchmark)> {
    csv::Reader::from_reader(REFERENCE_CSV.as_bytes())
        .deserialize::<ReferenceRow>()
        .map(|r| {
            let r = r.expect("reference table is well-formed");
            (
                r.dataset,
                ReferenceBenchmark {
                    cost: r.cost,
                    selnet: r.selnet,
                    nn_knnrej: r.nn_knnrej,
                },
            )
        })
        .collect()
}

pub fn reference_for(dataset: &str, cost: f64) -> Option<ReferenceBenchmark> {
    reference_benchmarks()
        .into_iter()
        .find(|(d, r)| d.eq_ignore_ascii_case(dataset) && r.cost == cost)
        .map(|(_, r)| r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?} (csv or md)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReportOptions {
    /// Decimal places; `None` prints the shortest exact representation.
    pub precision: Option<usize>,
}

/// Fold means of one (dataset, regressor, calibrator, cost) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub dataset: String,
    pub regressor: String,
    pub calibrator: String,
    pub cost: f64,
    pub folds: usize,
    pub rwr_loss: f64,
    pub reject_rate: f64,
    pub calib_mae: f64,
    pub predictor_loss: f64,
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

/// Means over folds, in order of first appearance.
pub fn aggregate(rows: &[ExperimentResult]) -> Vec<Aggregate> {
    let mut out: Vec<Aggregate> = Vec::new();
    for r in rows {
        let slot = out.iter_mut().find(|a| {
            a.dataset == r.dataset && a.regressor == r.regressor && a.calibrator == r.calibrator && a.cost == r.cost
        });
        match slot {
            Some(a) => {
                a.folds += 1;
                a.rwr_loss += r.rwr_loss;
                a.reject_rate += r.reject_rate;
                a.calib_mae += r.calib_mae;
                a.predictor_loss += r.predictor_loss;
            }
            None => out.push(Aggregate {
                dataset: r.dataset.clone(),
                regressor: r.regressor.clone(),
                calibrator: r.calibrator.clone(),
                cost: r.cost,
                folds: 1,
                rwr_loss: r.rwr_loss,
                reject_rate: r.reject_rate,
                calib_mae: r.calib_mae,
                predictor_loss: r.predictor_loss,
            }),
        }
    }
    for a in &mut out {
        let n = a.folds as f64;
        a.rwr_loss /= n;
        a.reject_rate /= n;
        a.calib_mae /= n;
        a.predictor_loss /= n;
    }
    out
}

fn num(v: f64, opts: ReportOptions) -> String {
    match opts.precision {
        Some(p) => format!("{v:.p$}"),
        None => format!("{v}"),
    }
}

/// Marks the lowest rwr loss within each (dataset, regressor, cost) group.
fn best_flags(aggs: &[Aggregate]) -> Vec<bool> {
    aggs.iter()
        .map(|a| {
            aggs.iter()
                .filter(|b| b.dataset == a.dataset && b.regressor == a.regressor && b.cost == a.cost)
                .all(|b| a.rwr_loss <= b.rwr_loss)
        })
        .collect()
}

fn bold(s: String, on: bool) -> String {
    if on {
        format!("**{s}**")
    } else {
        s
    }
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
}

fn render_markdown(aggs: &[Aggregate], opts: ReportOptions) -> String {
    let datasets = first_seen(aggs.iter().map(|a| a.dataset.as_str()));
    let regressors = first_seen(aggs.iter().map(|a| a.regressor.as_str()));
    let calibrators = first_seen(aggs.iter().map(|a| a.calibrator.as_str()));
    let best = best_flags(aggs);
    let mut out = String::new();

    // Predictor loss: cost- and calibrator-independent, so take any cell.
    out.push_str("## Predictor loss\n\n");
    let mut header = vec!["dataset".to_string()];
    header.extend(regressors.iter().cloned());
    let rows: Vec<Vec<String>> = datasets
        .iter()
        .map(|d| {
            let mut row = vec![d.clone()];
            for r in &regressors {
                row.push(
                    aggs.iter()
                        .find(|a| &a.dataset == d && &a.regressor == r)
                        .map_or_else(String::new, |a| num(a.predictor_loss, opts)),
                );
            }
            row
        })
        .collect();
    table(&mut out, &header, &rows);

    out.push_str("\n## Calibrator mean absolute error\n\n");
    let mut header = vec!["dataset".to_string(), "regressor".to_string()];
    header.extend(calibrators.iter().cloned());
    let mut rows = Vec::new();
    for d in &datasets {
        for r in &regressors {
            let cells: Vec<Option<f64>> = calibrators
                .iter()
                .map(|c| {
                    aggs.iter()
                        .find(|a| &a.dataset == d && &a.regressor == r && &a.calibrator == c)
                        .map(|a| a.calib_mae)
                })
                .collect();
            if cells.iter().all(Option::is_none) {
                continue;
            }
            let lo = cells.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            let mut row = vec![d.clone(), r.clone()];
            row.extend(cells.iter().map(|c| c.map_or_else(String::new, |v| bold(num(v, opts), v == lo))));
            rows.push(row);
        }
    }
    table(&mut out, &header, &rows);

    out.push_str("\n## Rejection loss (best calibrator per regressor and cost in bold)\n\n");
    let pairs: Vec<(String, String)> = {
        let mut p: Vec<(String, String)> = Vec::new();
        for a in aggs {
            let key = (a.regressor.clone(), a.calibrator.clone());
            if !p.contains(&key) {
                p.push(key);
            }
        }
        p.sort_by_key(|(r, c)| {
            (
                regressors.iter().position(|x| x == r),
                calibrators.iter().position(|x| x == c),
            )
        });
        p
    };
    let mut header = vec!["dataset".to_string(), "cost".to_string()];
    header.extend(pairs.iter().map(|(r, c)| format!("{r}+{c}")));
    header.push("SelNet (ref)".to_string());
    header.push("NN+kNNRej (ref)".to_string());
    let mut rows = Vec::new();
    for d in &datasets {
        let costs: Vec<f64> = {
            let mut c: Vec<f64> = Vec::new();
            for a in aggs.iter().filter(|a| &a.dataset == d) {
                if !c.contains(&a.cost) {
                    c.push(a.cost);
                }
            }
            c.sort_by(f64::total_cmp);
            c
        };
        for cost in costs {
            let mut row = vec![d.clone(), format!("{cost}")];
            for (r, c) in &pairs {
                let cell = aggs.iter().enumerate().find(|(_, a)| {
                    &a.dataset == d && &a.regressor == r && &a.calibrator == c && a.cost == cost
                });
                row.push(cell.map_or_else(String::new, |(i, a)| bold(num(a.rwr_loss, opts), best[i])));
            }
            let reference = reference_for(d, cost);
            row.push(reference.map_or_else(String::new, |r| format!("{:.2}", r.selnet)));
            row.push(reference.map_or_else(String::new, |r| format!("{:.2}", r.nn_knnrej)));
            rows.push(row);
        }
    }
    table(&mut out, &header, &rows);
    out
}

const CSV_HEADER: [&str; 12] = [
    "dataset",
    "regressor",
    "calibrator",
    "cost",
    "folds",
    "rwr_loss",
    "reject_rate",
    "calib_mae",
    "predictor_loss",
    "best_calibrator",
    "selnet",
    "nn_knnrej",
];

fn render_csv(aggs: &[Aggregate], opts: ReportOptions) -> Result<String> {
    let best = best_flags(aggs);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for (a, b) in aggs.iter().zip(best) {
        let reference = reference_for(&a.dataset, a.cost);
        w.write_record([
            a.dataset.clone(),
            a.regressor.clone(),
            a.calibrator.clone(),
            format!("{}", a.cost),
            a.folds.to_string(),
            num(a.rwr_loss, opts),
            num(a.reject_rate, opts),
            num(a.calib_mae, opts),
            num(a.predictor_loss, opts),
            b.to_string(),
            reference.map_or_else(String::new, |r| format!("{}", r.selnet)),
            reference.map_or_else(String::new, |r| format!("{}", r.nn_knnrej)),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn render_report(rows: &[ExperimentResult], format: ReportFormat, opts: ReportOptions) -> Result<String> {
    let aggs = aggregate(rows);
    match format {
        ReportFormat::Csv => render_csv(&aggs, opts),
        ReportFormat::Markdown => Ok(render_markdown(&aggs, opts)),
    }
}

pub fn report(path: impl AsRef<Path>, format: ReportFormat, opts: ReportOptions) -> Result<String> {
    render_report(&read_results(path)?, format, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(d: &str, fold: usize, r: &str, c: &str, cost: f64, rwr: f64, mae: f64) -> ExperimentResult {
        ExperimentResult {
            dataset: d.into(),
            fold,
            regressor: r.into(),
            calibrator: c.into(),
            cost,
            rwr_loss: rwr,
            reject_rate: 0.5,
            calib_mae: mae,
            predictor_loss: 3.0,
            wall_time_ms: 1,
        }
    }

    #[test]
    fn references_cover_eight_datasets_and_four_costs() {
        let refs = reference_benchmarks();
        assert_eq!(refs.len(), 32);
        let energy = reference_for("Energy", 0.2).unwrap();
        assert_eq!((energy.selnet, energy.nn_knnrej), (0.26, 0.21));
        assert!(reference_for("energy", 0.3).is_none());
    }

    #[test]
    fn empty_input_renders_headers_only() {
        let csv = render_report(&[], ReportFormat::Csv, ReportOptions::default()).unwrap();
        assert_eq!(csv.lines().count(), 1);
        let md = render_report(&[], ReportFormat::Markdown, ReportOptions::default()).unwrap();
        assert!(md.contains("## Predictor loss") && md.contains("| dataset |"));
    }

    #[test]
    fn single_row_is_rendered_verbatim() {
        let r = row("toy", 0, "LR", "RF", 0.5, 0.123456789012345, 0.75);
        let csv = render_report(std::slice::from_ref(&r), ReportFormat::Csv, ReportOptions::default()).unwrap();
        let line = csv.lines().nth(1).unwrap();
        assert!(line.starts_with("toy,LR,RF,0.5,1,0.123456789012345,0.5,0.75,3,true,,"), "{line}");
        let md = render_report(&[r], ReportFormat::Markdown, ReportOptions::default()).unwrap();
        assert!(md.contains("| toy | 0.5 | **0.123456789012345** |"), "{md}");
    }

    #[test]
    fn fold_means_and_best_calibrator() {
        let rows = vec![
            row("energy", 0, "RF", "LR", 0.2, 1.0, 2.0),
            row("energy", 1, "RF", "LR", 0.2, 2.0, 4.0),
            row("energy", 0, "RF", "RF", 0.2, 0.5, 1.0),
            row("energy", 1, "RF", "RF", 0.2, 0.75, 1.0),
        ];
        let aggs = aggregate(&rows);
        assert_eq!(aggs.len(), 2);
        assert_eq!((aggs[0].rwr_loss, aggs[0].calib_mae, aggs[0].folds), (1.5, 3.0, 2));
        assert_eq!(aggs[1].rwr_loss, 0.625);
        assert_eq!(best_flags(&aggs), vec![false, true]);
        let md = render_report(&rows, ReportFormat::Markdown, ReportOptions { precision: Some(2) }).unwrap();
        assert!(md.contains("| energy | 0.2 | 1.50 | **0.62** | 0.26 | 0.21 |"), "{md}");
    }

    #[test]
    fn format_names() {
        assert_eq!("md".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert_eq!("CSV".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("xlsx".parse::<ReportFormat>().is_err());
    }
}
