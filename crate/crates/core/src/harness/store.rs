//! Results directory layout and the grid runner.
//!
//! ```text
//! <out>/manifest.json               config and cell list with pipeline hashes
//! <out>/records/<key>.jsonl         one run: header, one line per epoch, summary
//! <out>/records/<key>.timing.json   wall-clock seconds per epoch
//! ```
//!
//! Files are written to a temporary name and renamed into place, so a
//! record either exists completely or not at all. A record without its
//! summary line is treated as missing and rerun.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Cell, RunConfig};
use super::train::{pipeline_hash, DataHandle, EpochMetrics, RunRecord, Timing, Trainer};
use crate::data::{self, CifarKind};
use crate::error::{Error, Result};

pub const RECORDS_DIR: &str = "records";
pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Run {
        key: String,
        cell: Cell,
        data_source: String,
        pipeline_hash: String,
        param_count: usize,
    },
    Epoch(EpochMetrics),
    Summary {
        best_accuracy: f64,
        best_loss: f64,
    },
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn record_path(out: &Path, key: &str) -> PathBuf {
    out.join(RECORDS_DIR).join(format!("{key}.jsonl"))
}

pub fn timing_path(out: &Path, key: &str) -> PathBuf {
    out.join(RECORDS_DIR).join(format!("{key}.timing.json"))
}

pub fn encode_record(r: &RunRecord) -> String {
    let mut lines = vec![Line::Run {
        key: r.key.clone(),
        cell: r.cell.clone(),
        data_source: r.data_source.clone(),
        pipeline_hash: r.pipeline_hash.clone(),
        param_count: r.param_count,
    }];
    lines.extend(r.epochs.iter().cloned().map(Line::Epoch));
    lines.push(Line::Summary {
        best_accuracy: r.best_accuracy,
        best_loss: r.best_loss,
    });
    let mut s = String::new();
    for l in &lines {
        s.push_str(&serde_json::to_string(l).expect("record serializes"));
        s.push('\n');
    }
    s
}

/// `Ok(None)` for an incomplete record (no summary line).
pub fn read_record(path: &Path) -> Result<Option<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut epochs = Vec::new();
    let mut summary = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed: Line = serde_json::from_str(line).map_err(|e| format_err(path, format!("line {}: {e}", i + 1)))?;
        match parsed {
            Line::Run { .. } if header.is_some() => return Err(format_err(path, "duplicate header")),
            Line::Run {
                key,
                cell,
                data_source,
                pipeline_hash,
                param_count,
            } => header = Some((key, cell, data_source, pipeline_hash, param_count)),
            Line::Epoch(e) => epochs.push(e),
            Line::Summary {
                best_accuracy,
                best_loss,
            } => summary = Some((best_accuracy, best_loss)),
        }
    }
    let Some((key, cell, source, hash, count)) = header else {
        return Err(format_err(path, "missing header line"));
    };
    let Some((acc, loss)) = summary else { return Ok(None) };
    let record = RunRecord::from_epochs(key, cell, source, hash, count, epochs)?;
    if record.best_accuracy != acc || record.best_loss != loss {
        return Err(format_err(path, "summary does not match epoch lines"));
    }
    Ok(Some(record))
}

/// All complete records under `<dir>/records`, sorted by key.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let rec_dir = dir.join(RECORDS_DIR);
    let entries = fs::read_dir(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&rec_dir, e))?.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            if let Some(r) = read_record(&path)? {
                out.push(r);
            }
        }
    }
    out.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(out)
}

/// Timing sidecars, sorted by key. Missing sidecars are skipped.
pub fn load_timings(dir: &Path) -> Result<Vec<Timing>> {
    let rec_dir = dir.join(RECORDS_DIR);
    let entries = fs::read_dir(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&rec_dir, e))?.path();
        if path.to_str().is_some_and(|p| p.ends_with(".timing.json")) {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            out.push(serde_json::from_str::<Timing>(&text).map_err(|e| format_err(&path, e.to_string()))?);
        }
    }
    out.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(out)
}

fn write_record(out: &Path, record: &RunRecord, timing: &Timing) -> Result<()> {
    write_atomic(
        &timing_path(out, &record.key),
        serde_json::to_string_pretty(timing)
            .expect("timing serializes")
            .as_bytes(),
    )?;
    write_atomic(&record_path(out, &record.key), encode_record(record).as_bytes())
}

/// Loads the dataset for `id`, falling back to synthetic data when allowed.
pub fn load_data(cfg: &RunConfig, id: &str) -> Result<DataHandle> {
    let synthetic = || -> Result<DataHandle> {
        let split = data::synth_split(&cfg.synthetic.options()?, cfg.synthetic.test_size)?;
        Ok(DataHandle::new(split, "synthetic"))
    };
    let kind = match id {
        "synthetic" => return synthetic(),
        "cifar10" => CifarKind::Cifar10,
        "cifar100" => CifarKind::Cifar100,
        other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
    };
    let loaded = match &cfg.data_dir {
        Some(dir) => data::load_cifar_scaled(dir, kind, 1),
        None => Err(Error::Config(format!("dataset `{id}` needs `data_dir`"))),
    };
    match loaded {
        Ok(split) => Ok(DataHandle::new(split, id)),
        Err(e) if cfg.synthetic_fallback => {
            eprintln!("warning: {e}; using the synthetic dataset for `{id}`");
            synthetic()
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub key: String,
    pub data_source: String,
    pub pipeline_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub cells: Vec<ManifestEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSummary {
    pub total: usize,
    pub ran: usize,
    pub skipped: usize,
}

/// Runs every cell of `cfg` into `out` on `jobs` worker threads, skipping
/// cells that already have a complete record. `on_done` is called after
/// each newly written record.
pub fn run_grid<F>(cfg: &RunConfig, out: &Path, jobs: usize, on_done: F) -> Result<GridSummary>
where
    F: Fn(&RunRecord, &Timing) + Sync,
{
    let cells = cfg.expand();
    let rec_dir = out.join(RECORDS_DIR);
    fs::create_dir_all(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;

    let mut data = BTreeMap::new();
    for id in &cfg.datasets {
        data.insert(id.clone(), load_data(cfg, id)?);
    }
    let entries = cells
        .iter()
        .map(|c| {
            let d = &data[&c.dataset];
            Ok(ManifestEntry {
                key: c.key(),
                data_source: d.source.clone(),
                pipeline_hash: pipeline_hash(c, d)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        config: cfg.clone(),
        cells: entries,
    };
    write_atomic(
        &out.join(MANIFEST),
        serde_json::to_string_pretty(&manifest)
            .expect("manifest serializes")
            .as_bytes(),
    )?;

    let mut todo = Vec::new();
    for c in &cells {
        let path = record_path(out, &c.key());
        if path.exists() {
            if let Some(existing) = read_record(&path)? {
                if existing.cell != *c {
                    return Err(Error::Config(format!(
                        "{} was produced with different settings; use another output directory",
                        path.display()
                    )));
                }
                continue;
            }
        }
        todo.push(c);
    }
    let skipped = cells.len() - todo.len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let results: Vec<Result<()>> = pool.install(|| {
        todo.par_iter()
            .map(|c| {
                let (record, timing) = Trainer::new((*c).clone(), &data[&c.dataset])?.run()?;
                write_record(out, &record, &timing)?;
                on_done(&record, &timing);
                Ok(())
            })
            .collect()
    });
    results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(GridSummary {
        total: cells.len(),
        ran: todo.len(),
        skipped,
    })
}

/// Output directory: explicit override, then the config's `out`, then
/// `runs/<name>`.
pub fn resolve_out(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name))
}
