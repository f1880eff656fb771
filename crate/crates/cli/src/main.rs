use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use riskcal::data::{fetch, Manifest};
use riskcal::experiment::{
    export_plot_data, report, run_grid, write_plot_csv, CalibratorChoice, ExperimentConfig, ReportFormat,
    ReportOptions, Task,
};
use riskcal::models::Family;
use riskcal::{verify, Error};

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "riskcal", version, about = "Conditional-risk calibration, rejection and deferral experiments")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset manifest utilities.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Regression-with-rejection grid.
    Rwr {
        #[command(subcommand)]
        command: RunCommand,
    },
    /// Classification deferral grid.
    Classify {
        #[command(subcommand)]
        command: RunCommand,
    },
    /// Run the synthetic theory checks and their negative controls.
    Verify {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Render fold-averaged tables from a result CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "md")]
        format: String,
        /// Decimal places (default: 4 for md, exact for csv).
        #[arg(long)]
        precision: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Export (target, prediction, √estimated loss) for one fold's test rows.
    PlotData {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        regressor: String,
        #[arg(long)]
        calibrator: String,
        #[arg(long)]
        fold: usize,
        /// Experiment config supplying seed, manifest and saved models.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "data/manifest.toml")]
        manifest: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Download datasets that have a URL and no local file.
    Fetch {
        #[arg(long, default_value = "data/manifest.toml")]
        manifest: PathBuf,
        /// Only this dataset.
        name: Option<String>,
    },
    /// Show each dataset's shape and availability.
    Inspect {
        #[arg(long, default_value = "data/manifest.toml")]
        manifest: PathBuf,
        name: Option<String>,
    },
}

#[derive(Subcommand)]
enum RunCommand {
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
}

enum Failure {
    Config(String),
    Partial(String),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn out(path: Option<&PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn run_data(cmd: DataCommand) -> Result<(), Failure> {
    match cmd {
        DataCommand::Fetch { manifest, name } => {
            let m = Manifest::from_file(&manifest)?;
            if let Some(n) = &name {
                m.entry(n)?;
            }
            let fetched = fetch(&m, name.as_deref())?;
            println!("fetched {} dataset(s): {}", fetched.len(), fetched.join(", "));
            let missing: Vec<&String> =
                m.datasets.keys().filter(|k| name.as_ref().is_none_or(|n| n == *k) && m.load(k).is_err()).collect();
            if !missing.is_empty() {
                return Err(Failure::Partial(format!(
                    "still unavailable (no URL or download failed): {}",
                    missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                )));
            }
            Ok(())
        }
        DataCommand::Inspect { manifest, name } => {
            let m = Manifest::from_file(&manifest)?;
            let mut missing = 0;
            println!("{:<12} {:>6} {:>5}  status", "dataset", "rows", "cols");
            for (key, entry) in &m.datasets {
                if name.as_ref().is_some_and(|n| n != key) {
                    continue;
                }
                match m.load(key) {
                    Ok(ds) => println!("{key:<12} {:>6} {:>5}  ok ({})", ds.n(), ds.d(), m.resolve(entry).display()),
                    Err(e) => {
                        missing += 1;
                        let exp = |v: Option<usize>| v.map_or("?".to_string(), |v| v.to_string());
                        println!(
                            "{key:<12} {:>6} {:>5}  unavailable: {e}",
                            exp(entry.expected_rows),
                            exp(entry.expected_cols)
                        );
                    }
                }
            }
            if let Some(n) = &name {
                m.entry(n)?;
            }
            if missing > 0 {
                return Err(Failure::Partial(format!("{missing} dataset(s) unavailable")));
            }
            Ok(())
        }
    }
}

fn run_task(task: Task, args: RunArgs) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    let outcome = run_grid(&cfg, task)?;
    println!(
        "{} rows in {} ({} new, {} resumed)",
        outcome.rows,
        outcome.results_path.display(),
        outcome.new_rows,
        outcome.resumed_rows
    );
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        for f in &outcome.failures {
            eprintln!(
                "failed: {} fold {} {} {}: {}",
                f.dataset,
                f.fold.map_or("-".into(), |k| k.to_string()),
                f.regressor.as_deref().unwrap_or("-"),
                f.calibrator.as_deref().unwrap_or("-"),
                f.error
            );
        }
        Err(Failure::Partial(format!("{} failure(s)", outcome.failures.len())))
    }
}

fn run_verify(seed: u64) -> Result<(), Failure> {
    let results = verify::run_all(seed)?;
    for r in &results {
        println!("{}", r.line());
    }
    let bad = results.iter().filter(|r| !r.ok()).count();
    if bad == 0 {
        Ok(())
    } else {
        Err(Failure::Verify(format!("{bad} check(s) did not behave as expected")))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Data { command } => run_data(command),
        Command::Rwr {
            command: RunCommand::Run(args),
        } => run_task(Task::Rwr, args),
        Command::Classify {
            command: RunCommand::Run(args),
        } => run_task(Task::Classify, args),
        Command::Verify { seed } => run_verify(seed),
        Command::Report {
            input,
            format,
            precision,
            output,
        } => {
            let format: ReportFormat = format.parse()?;
            let precision = precision.or(match format {
                ReportFormat::Markdown => Some(4),
                ReportFormat::Csv => None,
            });
            let text = report(&input, format, ReportOptions { precision })?;
            out(output.as_ref())?
                .write_all(text.as_bytes())
                .map_err(|e| Failure::Config(e.to_string()))
        }
        Command::PlotData {
            dataset,
            regressor,
            calibrator,
            fold,
            config,
            manifest,
            seed,
            output,
        } => {
            let regressor: Family = regressor.parse()?;
            let calibrator: CalibratorChoice = calibrator.parse()?;
            let cfg = match config {
                Some(path) => ExperimentConfig::from_file(path)?,
                None => ExperimentConfig {
                    task: Some(Task::Rwr),
                    datasets: vec![dataset.clone()],
                    regressors: vec![regressor],
                    calibrators: vec![calibrator],
                    costs: vec![1.0],
                    folds: 10,
                    seed,
                    loss: None,
                    manifest,
                    output_dir: PathBuf::from("results"),
                    workers: None,
                    save_models: false,
                    synthetic: Default::default(),
                },
            };
            let rows = export_plot_data(&cfg, &dataset, regressor, calibrator, fold)?;
            write_plot_csv(&rows, out(output.as_ref())?)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Partial(msg)) => {
            eprintln!("partial failure: {msg}");
            ExitCode::from(EXIT_PARTIAL)
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}
