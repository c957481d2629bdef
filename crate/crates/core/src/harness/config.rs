//! Run configuration files.
//!
//! A config is a TOML document of flat keys. List-valued keys form the grid;
//! every key also accepts a single value.
//!
//! ```toml
//! name = "smoke"
//! dataset = "synthetic"          # synthetic | cifar10 | cifar100
//! model = "simple-cnn"           # simple-cnn | mlp | logistic
//! optimizers = ["adam", "sr-adam"]
//! noise = [0.0, 0.05]
//! batch_size = 512
//! seeds = [0, 1, 2]
//! epochs = 5
//! out = "runs/smoke"
//!
//! [synthetic]                    # used when dataset = "synthetic"
//! train_size = 5000
//! test_size = 1000
//!
//! [optim.sr-adam]                # per-optimizer overrides of the defaults
//! tau = 10
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, SynthOptions};
use crate::error::{Error, Result};
use crate::nn::Shape;
use crate::optim::{OptimConfig, OptimizerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Synthetic dataset settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub classes: usize,
    /// `[c, h, w]` for images or `[d]` for flat features.
    pub shape: Vec<usize>,
    pub separation: f64,
    pub noise_std: f64,
    /// Seed for class means and samples; independent of run seeds so every
    /// cell trains on the same data.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_size: 5000,
            test_size: 1000,
            classes: 10,
            shape: vec![3, 32, 32],
            separation: 0.1,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn shape(&self) -> Result<Shape> {
        match self.shape[..] {
            [c, h, w] if c * h * w > 0 => Ok(Shape::Image { c, h, w }),
            [d] if d > 0 => Ok(Shape::Flat(d)),
            _ => Err(Error::Config(format!(
                "synthetic.shape must be [c, h, w] or [d], got {:?}",
                self.shape
            ))),
        }
    }

    pub fn options(&self) -> Result<SynthOptions> {
        Ok(SynthOptions {
            n: self.train_size,
            shape: self.shape()?,
            classes: self.classes,
            separation: self.separation,
            noise_std: self.noise_std,
            seed: self.seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_name")]
    name: String,
    #[serde(alias = "datasets")]
    dataset: OneOrMany<String>,
    #[serde(default = "default_model", alias = "models")]
    model: OneOrMany<String>,
    #[serde(alias = "optimizers")]
    optimizer: OneOrMany<String>,
    #[serde(default = "default_noise")]
    noise: OneOrMany<f64>,
    #[serde(default = "default_batch", alias = "batch_sizes")]
    batch_size: OneOrMany<usize>,
    #[serde(alias = "seeds")]
    seed: OneOrMany<u64>,
    #[serde(default = "default_epochs")]
    epochs: usize,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    data_dir: Option<PathBuf>,
    #[serde(default)]
    synthetic_fallback: bool,
    #[serde(default)]
    synthetic: SynthConfig,
    #[serde(default)]
    optim: BTreeMap<String, toml::Table>,
}

fn default_name() -> String {
    "run".into()
}
fn default_model() -> OneOrMany<String> {
    OneOrMany::One("simple-cnn".into())
}
fn default_noise() -> OneOrMany<f64> {
    OneOrMany::One(0.0)
}
fn default_batch() -> OneOrMany<usize> {
    OneOrMany::One(128)
}
fn default_epochs() -> usize {
    20
}

/// A validated run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub datasets: Vec<String>,
    pub models: Vec<String>,
    pub optimizers: Vec<OptimizerKind>,
    pub noise: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub out: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    /// Use the synthetic dataset when a CIFAR directory cannot be loaded.
    pub synthetic_fallback: bool,
    pub synthetic: SynthConfig,
    /// Resolved hyperparameters per optimizer id.
    pub optim: BTreeMap<String, OptimConfig>,
}

pub const DATASETS: [&str; 3] = ["synthetic", "cifar10", "cifar100"];

/// Applies the keys of `overrides` on top of `kind`'s default config.
fn resolve_optim(kind: OptimizerKind, overrides: Option<&toml::Table>) -> Result<OptimConfig> {
    let base = kind.default_config();
    let Some(over) = overrides else { return Ok(base) };
    let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut table, over);
    let cfg: OptimConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("[optim.{}]: {e}", kind.id())))?;
    cfg.validate()
        .map_err(|e| Error::Config(format!("[optim.{}]: {e}", kind.id())))?;
    Ok(cfg)
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let optimizers = raw
            .optimizer
            .to_vec()
            .iter()
            .map(|s| s.parse::<OptimizerKind>())
            .collect::<Result<Vec<_>>>()?;
        for id in raw.optim.keys() {
            let kind: OptimizerKind = id.parse()?;
            if !optimizers.contains(&kind) {
                return Err(Error::Config(format!(
                    "[optim.{id}] given but `{id}` is not in the grid"
                )));
            }
        }
        let optim = optimizers
            .iter()
            .map(|&k| Ok((k.id().to_string(), resolve_optim(k, raw.optim.get(k.id()))?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let cfg = RunConfig {
            name: raw.name,
            datasets: raw.dataset.to_vec(),
            models: raw.model.to_vec(),
            optimizers,
            noise: raw.noise.to_vec(),
            batch_sizes: raw.batch_size.to_vec(),
            seeds: raw.seed.to_vec(),
            epochs: raw.epochs,
            out: raw.out,
            data_dir: raw.data_dir,
            synthetic_fallback: raw.synthetic_fallback,
            synthetic: raw.synthetic,
            optim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn validate(&self) -> Result<()> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("`{name}` must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty("dataset", self.datasets.len())?;
        nonempty("model", self.models.len())?;
        nonempty("optimizer", self.optimizers.len())?;
        nonempty("noise", self.noise.len())?;
        nonempty("batch_size", self.batch_sizes.len())?;
        nonempty("seeds", self.seeds.len())?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        for d in &self.datasets {
            if !DATASETS.contains(&d.as_str()) {
                return Err(Error::Config(format!(
                    "unknown dataset `{d}` ({})",
                    DATASETS.join(", ")
                )));
            }
            if d != "synthetic" && self.data_dir.is_none() && !self.synthetic_fallback {
                return Err(Error::Config(format!("dataset `{d}` needs `data_dir`")));
            }
        }
        for &n in &self.noise {
            data::NoiseSpec::new(n).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.batch_sizes.contains(&0) {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.synthetic.shape()?;
        Ok(())
    }

    /// Cartesian product of the list-valued fields, in the order dataset,
    /// model, optimizer, noise, batch size, seed.
    pub fn expand(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for d in &self.datasets {
            for m in &self.models {
                for &o in &self.optimizers {
                    for &n in &self.noise {
                        for &b in &self.batch_sizes {
                            for &s in &self.seeds {
                                cells.push(Cell {
                                    dataset: d.clone(),
                                    model: m.clone(),
                                    optimizer: o,
                                    optim: self.optim[o.id()].clone(),
                                    noise: n,
                                    batch_size: b,
                                    seed: s,
                                    epochs: self.epochs,
                                });
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

/// One grid point for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub dataset: String,
    pub model: String,
    pub optimizer: OptimizerKind,
    pub optim: OptimConfig,
    pub noise: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub epochs: usize,
}

impl Cell {
    /// File-name-safe identifier.
    pub fn key(&self) -> String {
        format!(
            "{}_{}_{}_noise{}_bs{}_seed{}",
            self.dataset,
            self.model,
            self.optimizer.id(),
            self.noise,
            self.batch_size,
            self.seed
        )
    }
}
