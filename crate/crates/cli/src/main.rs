use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use steinrule::harness::aggregate::{write_aggregate_csv, Metric};
use steinrule::harness::{
    aggregate, emit_plots, load_records, load_timings, render_report, resolve_out, run_grid, ttest_rows, GroupField,
    RunConfig,
};
use steinrule::risk::{risk_curve, write_risk_csv, Estimator};
use steinrule::OptimizerKind;

#[derive(Parser)]
#[command(
    name = "steinrule",
    version,
    about = "SR-Adam experiments and Stein-rule risk simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every cell of a config grid, skipping completed records.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's `out`, then runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cells trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Mean ± std of best accuracy and loss per group; writes aggregate.csv.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated group-by fields.
        #[arg(
            long,
            default_value = "dataset,model,optimizer,noise,batch_size",
            value_delimiter = ','
        )]
        by: Vec<GroupField>,
    },
    /// Paired t-test of best accuracy, B − A, paired by seed.
    Ttest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        a: OptimizerKind,
        #[arg(long)]
        b: OptimizerKind,
    },
    /// Writes report.md and plots/ into the results directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Monte Carlo risk of Gaussian location estimators along ‖μ‖; CSV on stdout.
    Risk {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        sigma2: f64,
        /// Comma-separated ‖μ‖ values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated estimators: ue, js, js+, bayes:<tau2>.
        #[arg(long, default_value = "ue,js,js+", value_delimiter = ',')]
        estimators: Vec<Estimator>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn records_of(dir: &Path) -> Result<Vec<steinrule::harness::RunRecord>> {
    if !dir.join("records").is_dir() {
        bail!(
            "no complete records under {}: it has no records/ directory",
            dir.display()
        );
    }
    let records = load_records(dir).with_context(|| format!("reading records in {}", dir.display()))?;
    if records.is_empty() {
        bail!("no complete records under {}", dir.display());
    }
    Ok(records)
}

fn run(config: &Path, out: Option<&Path>, jobs: usize) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let out = resolve_out(&cfg, out);
    let total = cfg.expand().len();
    let done = AtomicUsize::new(0);
    eprintln!("{}: {total} cells -> {}", cfg.name, out.display());
    let summary = run_grid(&cfg, &out, jobs, |rec, timing| {
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        let secs: f64 = timing.epoch_seconds.iter().sum();
        eprintln!(
            "[{n}] {}  best acc {:.2}%  best loss {:.4}  ({secs:.1}s)",
            rec.key,
            100.0 * rec.best_accuracy,
            rec.best_loss
        );
    })?;
    println!(
        "{} cells: {} trained, {} already complete; records in {}",
        summary.total,
        summary.ran,
        summary.skipped,
        out.display()
    );
    Ok(())
}

fn aggregate_cmd(input: &Path, by: &[GroupField]) -> Result<()> {
    let records = records_of(input)?;
    let rows = aggregate(&records, by)?;
    let path = input.join("aggregate.csv");
    let mut buf = Vec::new();
    write_aggregate_csv(&mut buf, &rows)?;
    fs::write(&path, &buf).with_context(|| format!("writing {}", path.display()))?;

    let mut stdout = io::stdout().lock();
    for f in by {
        write!(stdout, "{:<14}", f.name())?;
    }
    writeln!(stdout, "{:>4}  {:>16}  {:>18}", "n", "accuracy %", "loss")?;
    for r in &rows {
        for (_, v) in &r.key {
            write!(stdout, "{v:<14}")?;
        }
        writeln!(
            stdout,
            "{:>4}  {:>16}  {:>18}",
            r.seeds.len(),
            Metric::Accuracy.of(r).display(100.0, 2),
            Metric::Loss.of(r).display(1.0, 4)
        )?;
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn ttest_cmd(input: &Path, a: OptimizerKind, b: OptimizerKind) -> Result<()> {
    let records = records_of(input)?;
    let rows = ttest_rows(&records, a, b)?;
    if rows.is_empty() {
        bail!("no groups with at least two seeds shared by {a} and {b}");
    }
    println!("dataset,model,noise,batch_size,a,b,n,mean_diff,sd_diff,t,p,degenerate");
    for r in &rows {
        let t = &r.result;
        println!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.model,
            r.noise,
            r.batch_size,
            a,
            b,
            t.n,
            t.mean_diff,
            t.sd_diff,
            t.t,
            t.p.map_or_else(String::new, |p| p.to_string()),
            t.degenerate
        );
    }
    Ok(())
}

fn report_cmd(input: &Path) -> Result<()> {
    let records = records_of(input)?;
    let timings = load_timings(input)?;
    let title = input
        .file_name()
        .map(|n| format!("Results: {}", n.to_string_lossy()))
        .unwrap_or_else(|| "Results".to_string());
    let md = render_report(&title, &records, &timings)?;
    let plots = emit_plots(&records, &input.join("plots"))?;
    let path = input.join("report.md");
    fs::write(&path, md).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} and {} plot files", path.display(), plots.len());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out, jobs } => run(&config, out.as_deref(), jobs),
        Command::Aggregate { input, by } => aggregate_cmd(&input, &by),
        Command::Ttest { input, a, b } => ttest_cmd(&input, a, b),
        Command::Report { input } => report_cmd(&input),
        Command::Risk {
            p,
            sigma2,
            grid,
            trials,
            seed,
            estimators,
            out,
        } => {
            let rows = risk_curve(&estimators, p, sigma2, &grid, trials, seed)?;
            match out {
                Some(path) => {
                    let mut buf = Vec::new();
                    write_risk_csv(&mut buf, &rows)?;
                    fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
                }
                None => write_risk_csv(io::stdout().lock(), &rows)?,
            }
            Ok(())
        }
    }
}
