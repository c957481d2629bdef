//! Markdown summary of a results directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, mean_std, GroupField, Metric, Pivot};
use super::stats::{paired_ttest, TTestResult};
use super::train::{RunRecord, Timing};
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;

/// Significance level for flagging t-test rows.
pub const ALPHA: f64 = 0.01;

/// Paired comparison within one (dataset, model, noise, batch size) group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestRow {
    pub dataset: String,
    pub model: String,
    pub noise: f64,
    pub batch_size: usize,
    pub a: OptimizerKind,
    pub b: OptimizerKind,
    pub seeds: Vec<u64>,
    pub result: TTestResult,
}

/// Paired t-tests of best accuracy, `b − a`, paired by seed. Groups with
/// fewer than two shared seeds are skipped.
pub fn ttest_rows(records: &[RunRecord], a: OptimizerKind, b: OptimizerKind) -> Result<Vec<TTestRow>> {
    type Group = (String, String, u64, usize);
    type BySeed = BTreeMap<u64, f64>;
    let mut groups: BTreeMap<Group, (BySeed, BySeed)> = BTreeMap::new();
    for r in records {
        let c = &r.cell;
        let g = groups
            .entry((c.dataset.clone(), c.model.clone(), c.noise.to_bits(), c.batch_size))
            .or_default();
        if c.optimizer == a {
            g.0.insert(c.seed, r.best_accuracy);
        } else if c.optimizer == b {
            g.1.insert(c.seed, r.best_accuracy);
        }
    }
    let mut rows = Vec::new();
    for ((dataset, model, noise, batch_size), (xa, xb)) in groups {
        let seeds: Vec<u64> = xa.keys().filter(|s| xb.contains_key(s)).copied().collect();
        if seeds.len() < 2 {
            continue;
        }
        let va: Vec<f64> = seeds.iter().map(|s| xa[s]).collect();
        let vb: Vec<f64> = seeds.iter().map(|s| xb[s]).collect();
        rows.push(TTestRow {
            dataset,
            model,
            noise: f64::from_bits(noise),
            batch_size,
            a,
            b,
            seeds,
            result: paired_ttest(&va, &vb)?,
        });
    }
    rows.sort_by(|x, y| {
        (&x.dataset, &x.model, x.batch_size)
            .cmp(&(&y.dataset, &y.model, y.batch_size))
            .then(x.noise.total_cmp(&y.noise))
    });
    Ok(rows)
}

fn pivot_markdown(out: &mut String, pivot: &Pivot, metric: Metric, scale: f64, decimals: usize) {
    let best = pivot.best_per_column(metric);
    let _ = write!(out, "| {} |", GroupField::Optimizer.name());
    for c in 0..pivot.cols.len() {
        let _ = write!(out, " {} |", pivot.col_label(c));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(pivot.cols.len()));
    out.push('\n');
    for (ri, row) in pivot.rows.iter().enumerate() {
        let _ = write!(out, "| {} |", pivot.row_field.label(row));
        for (ci, cell) in pivot.cells[ri].iter().enumerate() {
            match cell {
                Some(c) => {
                    let text = metric.of(c).display(scale, decimals);
                    if best[ci] == Some(ri) {
                        let _ = write!(out, " **{text}** |");
                    } else {
                        let _ = write!(out, " {text} |");
                    }
                }
                None => out.push_str(" – |"),
            }
        }
        out.push('\n');
    }
    out.push('\n');
}

fn table(out: &mut String, records: &[RunRecord], cols: &[GroupField]) -> Result<()> {
    let mut by = vec![GroupField::Optimizer];
    by.extend_from_slice(cols);
    let rows = aggregate(records, &by)?;
    let pivot = Pivot::new(&rows, GroupField::Optimizer, cols);
    out.push_str("Best test accuracy (%), mean ± std over seeds:\n\n");
    pivot_markdown(out, &pivot, Metric::Accuracy, 100.0, 2);
    out.push_str("Best test loss, mean ± std over seeds:\n\n");
    pivot_markdown(out, &pivot, Metric::Loss, 1.0, 4);
    Ok(())
}

fn distinct<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Builds the report. Sections without data are omitted.
pub fn render_report(title: &str, records: &[RunRecord], timings: &[Timing]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Empty);
    }
    let mut out = format!("# {title}\n\n");
    let _ = writeln!(out, "{} runs. Best values are bold per column.\n", records.len());

    let models = distinct(records.iter().map(|r| r.cell.model.clone()));
    let mut batch_sizes = distinct(records.iter().map(|r| r.cell.batch_size));
    batch_sizes.sort_unstable();
    let main_batch = batch_sizes[0];

    for model in &models {
        let of_model: Vec<RunRecord> = records.iter().filter(|r| &r.cell.model == model).cloned().collect();
        let _ = writeln!(out, "## Main results: {model}, batch size {main_batch}\n");
        let main: Vec<RunRecord> = of_model
            .iter()
            .filter(|r| r.cell.batch_size == main_batch)
            .cloned()
            .collect();
        if !main.is_empty() {
            table(&mut out, &main, &[GroupField::Dataset, GroupField::Noise])?;
        }

        if batch_sizes.len() > 1 {
            let noise0 = of_model.iter().map(|r| r.cell.noise).fold(f64::INFINITY, f64::min);
            let ablation: Vec<RunRecord> = of_model.iter().filter(|r| r.cell.noise == noise0).cloned().collect();
            let _ = writeln!(out, "## Batch-size ablation: {model}, noise {noise0}\n");
            table(&mut out, &ablation, &[GroupField::Dataset, GroupField::BatchSize])?;
        }

        let has = |k: OptimizerKind| of_model.iter().any(|r| r.cell.optimizer == k);
        if has(OptimizerKind::SrAdamAllWeights) && (has(OptimizerKind::SrAdam) || has(OptimizerKind::Adam)) {
            let scope: Vec<RunRecord> = of_model
                .iter()
                .filter(|r| {
                    r.cell.batch_size == main_batch
                        && matches!(
                            r.cell.optimizer,
                            OptimizerKind::Adam | OptimizerKind::SrAdam | OptimizerKind::SrAdamAllWeights
                        )
                })
                .cloned()
                .collect();
            let _ = writeln!(out, "## Shrinkage-scope ablation: {model}\n");
            table(&mut out, &scope, &[GroupField::Dataset, GroupField::Noise])?;
        }
    }

    let mut tests = Vec::new();
    for b in [OptimizerKind::SrAdam, OptimizerKind::SrAdamAllWeights] {
        tests.extend(ttest_rows(records, OptimizerKind::Adam, b)?);
    }
    if !tests.is_empty() {
        let _ = writeln!(
            out,
            "## Paired t-tests on best accuracy\n\nDifferences are B − A in percentage points, paired by seed; p values below {ALPHA} are bold.\n"
        );
        out.push_str("| dataset | model | noise | batch | A | B | n | mean diff | t | p |\n|---|---|---|---|---|---|---|---|---|---|\n");
        for t in &tests {
            let r = &t.result;
            let p = match r.p {
                Some(p) if r.significant(ALPHA) => format!("**{p:.4}**"),
                Some(p) => format!("{p:.4}"),
                None => "degenerate".to_string(),
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {:+.2} | {:.3} | {} |",
                t.dataset,
                t.model,
                t.noise,
                t.batch_size,
                t.a.label(),
                t.b.label(),
                r.n,
                100.0 * r.mean_diff,
                r.t,
                p
            );
        }
        out.push('\n');
    }

    let stein: Vec<&RunRecord> = records.iter().filter(|r| r.cell.optimizer.is_stein()).collect();
    if !stein.is_empty() {
        out.push_str("## Shrinkage activity\n\n| optimizer | applied / group-steps | min c | max c | mean c |\n|---|---|---|---|---|\n");
        let mut by_opt: BTreeMap<&str, (u64, u64, f64, f64, f64)> = BTreeMap::new();
        for r in &stein {
            let e = by_opt
                .entry(r.cell.optimizer.label())
                .or_insert((0, 0, f64::INFINITY, f64::NEG_INFINITY, 0.0));
            for ep in &r.epochs {
                let s = &ep.shrink;
                e.0 += s.applied;
                e.1 += s.group_steps;
                if let (Some(lo), Some(hi), Some(m)) = (s.c_min, s.c_max, s.c_mean) {
                    e.2 = e.2.min(lo);
                    e.3 = e.3.max(hi);
                    e.4 += m * s.applied as f64;
                }
            }
        }
        for (label, (applied, steps, lo, hi, sum)) in by_opt {
            if applied > 0 {
                let _ = writeln!(
                    out,
                    "| {label} | {applied} / {steps} | {lo:.3} | {hi:.3} | {:.3} |",
                    sum / applied as f64
                );
            } else {
                let _ = writeln!(out, "| {label} | 0 / {steps} | – | – | – |");
            }
        }
        out.push('\n');
    }

    if !timings.is_empty() {
        out.push_str("## Timing\n\nWall-clock seconds per epoch, mean ± std over all epochs and seeds.\n\n| optimizer | epoch seconds |\n|---|---|\n");
        let mut by_opt: BTreeMap<usize, (String, Vec<f64>)> = BTreeMap::new();
        for t in timings {
            let (idx, label) = match t.optimizer.parse::<OptimizerKind>() {
                Ok(k) => (
                    OptimizerKind::ALL.iter().position(|x| *x == k).unwrap(),
                    k.label().to_string(),
                ),
                Err(_) => (usize::MAX, t.optimizer.clone()),
            };
            by_opt
                .entry(idx)
                .or_insert_with(|| (label, Vec::new()))
                .1
                .extend(&t.epoch_seconds);
        }
        for (label, secs) in by_opt.values() {
            if let Ok(ms) = mean_std(secs) {
                let _ = writeln!(out, "| {label} | {} |", ms.display(1.0, 3));
            }
        }
        out.push('\n');
    }
    Ok(out)
}
