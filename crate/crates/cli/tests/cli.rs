use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn steinrule(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steinrule"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

const CONFIG: &str = r#"
name = "cli"
dataset = "synthetic"
model = "mlp"
optimizers = ["adam", "sr-adam", "sr-adam-all"]
noise = [0.0, 0.1]
batch_sizes = [16, 32]
seeds = [0, 1, 2]
epochs = 2

[synthetic]
train_size = 96
test_size = 32
classes = 3
shape = [10]
separation = 1.0
"#;

fn write_config(dir: &Path) -> String {
    let path = dir.join("grid.toml");
    fs::write(&path, CONFIG).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn risk_prints_one_row_per_estimator_and_grid_point() {
    let out = stdout(&steinrule(&[
        "risk", "--p", "10", "--sigma2", "1", "--grid", "0,1,3", "--trials", "2000",
    ]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "estimator,p,sigma2,mu_norm,trials,mse,std_err");
    assert_eq!(lines.len(), 1 + 3 * 3);
    assert!(lines[1].starts_with("UE,10,1,0,2000,"));
    assert!(lines.iter().any(|l| l.starts_with("JS+,10,1,3,")));
}

#[test]
fn risk_rejects_small_dimensions() {
    let o = steinrule(&["risk", "--p", "2", "--sigma2", "1", "--grid", "0", "--trials", "10"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("p >= 3"));
}

#[test]
fn run_aggregate_ttest_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("results");
    let out_s = out.to_string_lossy().into_owned();

    let run = stdout(&steinrule(&["run", "--config", &cfg, "--out", &out_s, "--jobs", "2"]));
    assert!(run.contains("36 cells: 36 trained, 0 already complete"), "{run}");
    let rerun = stdout(&steinrule(&["run", "--config", &cfg, "--out", &out_s]));
    assert!(rerun.contains("36 cells: 0 trained, 36 already complete"), "{rerun}");

    let agg = stdout(&steinrule(&["aggregate", "--in", &out_s]));
    assert!(agg.contains("±"));
    let csv = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert!(csv.starts_with("dataset,model,optimizer,noise,batch_size,n,accuracy_mean"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);

    let by = stdout(&steinrule(&["aggregate", "--in", &out_s, "--by", "optimizer"]));
    assert_eq!(by.lines().count(), 1 + 3);

    let tt = stdout(&steinrule(&["ttest", "--in", &out_s, "--a", "adam", "--b", "sr-adam"]));
    let rows: Vec<&str> = tt.lines().collect();
    assert_eq!(rows.len(), 1 + 4);
    assert!(rows[1].contains(",adam,sr-adam,3,"));

    let rep = stdout(&steinrule(&["report", "--in", &out_s]));
    assert!(rep.contains("report.md"));
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    for section in [
        "## Main results",
        "## Batch-size ablation",
        "## Shrinkage-scope ablation",
        "## Paired t-tests",
        "## Timing",
    ] {
        assert!(md.contains(section), "missing {section}");
    }
    let plots: Vec<_> = fs::read_dir(out.join("plots"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    let svgs = plots.iter().filter(|n| n.to_string_lossy().ends_with(".svg")).count();
    // Per (batch size, noise) panel: one bar chart and two curve charts.
    assert_eq!(svgs, 4 * 3);
}

#[test]
fn unknown_optimizer_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "dataset = \"synthetic\"\noptimizer = \"rmsprop\"\nseed = 0\n").unwrap();
    let o = steinrule(&["run", "--config", &path.to_string_lossy()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("rmsprop"));
}

#[test]
fn empty_results_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = steinrule(&["report", "--in", &dir.path().to_string_lossy()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no complete records"));
}
