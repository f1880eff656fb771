//! Config-driven benchmark grid: regressor × calibrator × cost over ten folds
//! of each dataset, with resumable CSV output, reports and plot data.

mod config;
mod grid;
mod plot;
mod report;

pub use config::{CalibratorChoice, ExperimentConfig, Task};
pub use grid::{
    calibrator_path, failures_path, predictor_path, read_results, results_path, run_grid, CellFailure,
    ExperimentResult, FoldData, GridOutcome, RESULT_HEADER,
};
pub use plot::{export_plot_data, write_plot_csv, PlotRow};
pub use report::{
    aggregate, reference_benchmarks, reference_for, render_report, report, Aggregate, ReferenceBenchmark,
    ReportFormat, ReportOptions,
};
