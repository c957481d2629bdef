//! Grouping records into mean ± std tables.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::train::RunRecord;
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;

/// Sample mean and standard deviation (`n − 1` denominator; 0 for `n = 1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Running mean keeps the mean of identical values exact.
pub fn mean_std(xs: &[f64]) -> Result<MeanStd> {
    if xs.is_empty() {
        return Err(Error::Empty);
    }
    let mut mean = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        mean += (x - mean) / (i + 1) as f64;
    }
    let n = xs.len();
    let std = if n > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(MeanStd { mean, std, n })
}

impl MeanStd {
    /// `mean ± std` after multiplying both by `scale`.
    pub fn display(&self, scale: f64, decimals: usize) -> String {
        format!("{:.*} ± {:.*}", decimals, self.mean * scale, decimals, self.std * scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupField {
    Dataset,
    Model,
    Optimizer,
    Noise,
    BatchSize,
}

impl GroupField {
    pub const ALL: [GroupField; 5] = [
        GroupField::Dataset,
        GroupField::Model,
        GroupField::Optimizer,
        GroupField::Noise,
        GroupField::BatchSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GroupField::Dataset => "dataset",
            GroupField::Model => "model",
            GroupField::Optimizer => "optimizer",
            GroupField::Noise => "noise",
            GroupField::BatchSize => "batch_size",
        }
    }

    pub fn value(self, r: &RunRecord) -> String {
        match self {
            GroupField::Dataset => r.cell.dataset.clone(),
            GroupField::Model => r.cell.model.clone(),
            GroupField::Optimizer => r.cell.optimizer.id().to_string(),
            GroupField::Noise => r.cell.noise.to_string(),
            GroupField::BatchSize => r.cell.batch_size.to_string(),
        }
    }

    /// Optimizers in canonical order, numbers numerically, text lexically.
    fn sort_key(self, value: &str) -> (f64, String) {
        match self {
            GroupField::Optimizer => (
                OptimizerKind::ALL
                    .iter()
                    .position(|k| k.id() == value)
                    .map_or(f64::MAX, |i| i as f64),
                value.to_string(),
            ),
            GroupField::Noise | GroupField::BatchSize => (value.parse().unwrap_or(f64::MAX), value.to_string()),
            _ => (0.0, value.to_string()),
        }
    }

    /// Human label for a value.
    pub fn label(self, value: &str) -> String {
        match self {
            GroupField::Optimizer => value
                .parse::<OptimizerKind>()
                .map_or_else(|_| value.to_string(), |k| k.label().to_string()),
            GroupField::Noise => format!("σ={value}"),
            GroupField::BatchSize => format!("B={value}"),
            _ => value.to_string(),
        }
    }
}

impl fmt::Display for GroupField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GroupField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GroupField::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown group field `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub key: Vec<(GroupField, String)>,
    pub accuracy: MeanStd,
    pub loss: MeanStd,
    pub seeds: Vec<u64>,
}

impl AggregateRow {
    pub fn get(&self, field: GroupField) -> Option<&str> {
        self.key.iter().find(|(f, _)| *f == field).map(|(_, v)| v.as_str())
    }
}

fn sort_tuple(by: &[GroupField], values: &[String]) -> Vec<(f64, String)> {
    by.iter().zip(values).map(|(f, v)| f.sort_key(v)).collect()
}

/// Mean ± std of best accuracy and best loss per group, rows sorted by the
/// group fields.
pub fn aggregate(records: &[RunRecord], by: &[GroupField]) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        return Err(Error::Empty);
    }
    let mut groups: BTreeMap<Vec<String>, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry(by.iter().map(|f| f.value(r)).collect())
            .or_default()
            .push(r);
    }
    let mut rows = groups
        .into_iter()
        .map(|(values, mut recs)| {
            recs.sort_by_key(|r| r.cell.seed);
            let acc: Vec<f64> = recs.iter().map(|r| r.best_accuracy).collect();
            let loss: Vec<f64> = recs.iter().map(|r| r.best_loss).collect();
            Ok(AggregateRow {
                key: by.iter().copied().zip(values).collect(),
                accuracy: mean_std(&acc)?,
                loss: mean_std(&loss)?,
                seeds: recs.iter().map(|r| r.cell.seed).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        let ka = sort_tuple(by, &a.key.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>());
        let kb = sort_tuple(by, &b.key.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>());
        ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(rows)
}

pub fn write_aggregate_csv<W: Write>(mut w: W, rows: &[AggregateRow]) -> std::io::Result<()> {
    let Some(first) = rows.first() else { return Ok(()) };
    let names: Vec<&str> = first.key.iter().map(|(f, _)| f.name()).collect();
    writeln!(w, "{},n,accuracy_mean,accuracy_std,loss_mean,loss_std", names.join(","))?;
    for r in rows {
        let vals: Vec<&str> = r.key.iter().map(|(_, v)| v.as_str()).collect();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            vals.join(","),
            r.accuracy.n,
            r.accuracy.mean,
            r.accuracy.std,
            r.loss.mean,
            r.loss.std
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Loss,
}

impl Metric {
    pub fn of(self, row: &AggregateRow) -> MeanStd {
        match self {
            Metric::Accuracy => row.accuracy,
            Metric::Loss => row.loss,
        }
    }

    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Metric::Accuracy => a > b,
            Metric::Loss => a < b,
        }
    }
}

/// Rows × columns view of aggregate rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Pivot {
    pub row_field: GroupField,
    pub col_fields: Vec<GroupField>,
    pub rows: Vec<String>,
    pub cols: Vec<Vec<String>>,
    pub cells: Vec<Vec<Option<AggregateRow>>>,
}

impl Pivot {
    /// `rows` must have been aggregated over `row_field` plus `col_fields`.
    pub fn new(rows: &[AggregateRow], row_field: GroupField, col_fields: &[GroupField]) -> Self {
        let mut row_vals: Vec<String> = Vec::new();
        let mut col_vals: Vec<Vec<String>> = Vec::new();
        for r in rows {
            let rv = r.get(row_field).unwrap_or_default().to_string();
            if !row_vals.contains(&rv) {
                row_vals.push(rv);
            }
            let cv: Vec<String> = col_fields
                .iter()
                .map(|f| r.get(*f).unwrap_or_default().to_string())
                .collect();
            if !col_vals.contains(&cv) {
                col_vals.push(cv);
            }
        }
        row_vals.sort_by(|a, b| row_field.sort_key(a).partial_cmp(&row_field.sort_key(b)).unwrap());
        col_vals.sort_by(|a, b| {
            sort_tuple(col_fields, a)
                .partial_cmp(&sort_tuple(col_fields, b))
                .unwrap()
        });
        let mut cells = vec![vec![None; col_vals.len()]; row_vals.len()];
        for r in rows {
            let ri = row_vals
                .iter()
                .position(|v| Some(v.as_str()) == r.get(row_field))
                .unwrap();
            let cv: Vec<String> = col_fields
                .iter()
                .map(|f| r.get(*f).unwrap_or_default().to_string())
                .collect();
            let ci = col_vals.iter().position(|v| *v == cv).unwrap();
            cells[ri][ci] = Some(r.clone());
        }
        Self {
            row_field,
            col_fields: col_fields.to_vec(),
            rows: row_vals,
            cols: col_vals,
            cells,
        }
    }

    /// Row index of the best mean per column (first on ties).
    pub fn best_per_column(&self, metric: Metric) -> Vec<Option<usize>> {
        (0..self.cols.len())
            .map(|c| {
                let mut best: Option<(usize, f64)> = None;
                for (r, row) in self.cells.iter().enumerate() {
                    if let Some(cell) = &row[c] {
                        let v = metric.of(cell).mean;
                        if best.is_none_or(|(_, b)| metric.better(v, b)) {
                            best = Some((r, v));
                        }
                    }
                }
                best.map(|(r, _)| r)
            })
            .collect()
    }

    pub fn col_label(&self, c: usize) -> String {
        self.col_fields
            .iter()
            .zip(&self.cols[c])
            .map(|(f, v)| f.label(v))
            .collect::<Vec<_>>()
            .join(", ")
    }
}
