use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn riskcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskcal")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("grid.toml");
    fs::write(
        &path,
        format!(
            r#"
task = "rwr"
datasets = ["line"]
regressors = ["LR"]
calibrators = ["LR", "RF"]
costs = [0.5, 2.0]
folds = 2
output_dir = "out"
save_models = true
{extra}
[synthetic.line]
generator = "regression-with-noise"
noise = 0.5
n = 300
d = 2
seed = 4
"#
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bogus = true\n");
    let o = riskcal(&["rwr", "run", "--config", &cfg]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));

    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&riskcal(&["rwr", "run", "--config", missing.to_str().unwrap()])), 1);

    // A regression grid cannot run as a classification task.
    let cfg = write_config(dir.path(), "");
    assert_eq!(code(&riskcal(&["classify", "run", "--config", &cfg])), 1);
}

#[test]
fn run_report_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = riskcal(&["rwr", "run", "--config", &cfg, "--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    // Relative output_dir resolves against the config file.
    let results = dir.path().join("out/rwr_results.csv");
    let text = fs::read_to_string(&results).unwrap();
    assert!(text.starts_with(
        "dataset,fold,regressor,calibrator,cost,rwr_loss,reject_rate,calib_mae,predictor_loss,wall_time_ms\n"
    ));
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 2);
    assert!(dir.path().join("out/models/line/fold0").is_dir());

    let md = riskcal(&["report", "--input", results.to_str().unwrap()]);
    assert_eq!(code(&md), 0);
    let md = String::from_utf8(md.stdout).unwrap();
    assert!(md.contains("| line |"), "{md}");

    let csv_out = dir.path().join("agg.csv");
    let o = riskcal(&[
        "report",
        "--input",
        results.to_str().unwrap(),
        "--format",
        "csv",
        "--output",
        csv_out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(&csv_out).unwrap().lines().count(), 1 + 2 * 2);

    let o = riskcal(&[
        "plot-data",
        "--config",
        &cfg,
        "--dataset",
        "line",
        "--regressor",
        "LR",
        "--calibrator",
        "RF",
        "--fold",
        "0",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("target,prediction,sqrt_estimated_loss"));
    let targets: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(targets.len(), 30);
    assert!(targets.windows(2).all(|w| w[0] <= w[1]));

    let o = riskcal(&[
        "plot-data", "--config", &cfg, "--dataset", "line", "--regressor", "LR", "--calibrator", "nope", "--fold", "0",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn report_on_header_only_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.csv");
    fs::write(
        &input,
        "dataset,fold,regressor,calibrator,cost,rwr_loss,reject_rate,calib_mae,predictor_loss,wall_time_ms\n",
    )
    .unwrap();
    let o = riskcal(&["report", "--input", input.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1);
    assert_eq!(code(&riskcal(&["report", "--input", input.to_str().unwrap(), "--format", "pdf"])), 1);
}

#[test]
fn inspect_reports_missing_datasets_as_partial() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), "x1,x2,y\n1,2,3\n4,5,6\n7,8,9\n").unwrap();
    let manifest = dir.path().join("manifest.toml");
    fs::write(
        &manifest,
        r#"
[datasets.a]
path = "a.csv"

[datasets.b]
path = "b.csv"
"#,
    )
    .unwrap();
    let m = manifest.to_str().unwrap();
    let o = riskcal(&["data", "inspect", "--manifest", m, "a"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(code(&riskcal(&["data", "inspect", "--manifest", m])), 2);
    assert_eq!(code(&riskcal(&["data", "inspect", "--manifest", m, "zzz"])), 1);
}

#[test]
fn verify_prints_every_check() {
    let o = riskcal(&["verify", "--seed", "42"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{text}");
    assert_eq!(text.lines().count(), 5, "{text}");
}
