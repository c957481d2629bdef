//! Training one grid cell.
//!
//! Everything random in a cell derives from its seed: initialization, the
//! per-epoch data order, input-noise draws and dropout masks. None of it
//! depends on the optimizer, so cells that differ only in the optimizer see
//! the same pipeline; [`pipeline_hash`] makes that checkable.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::Cell;
use crate::data::{self, NoiseSpec, Split};
use crate::error::{Error, Result};
use crate::nn::{Batch, Evaluation, Mode, ModelSpec, Network};
use crate::optim::{Optimizer, StepTrace};
use crate::tensor::{ParamVector, Rng};

/// A loaded dataset plus what identifies it.
#[derive(Clone, Debug)]
pub struct DataHandle {
    pub split: Split,
    /// `synthetic`, `cifar10`, ...; differs from the cell's dataset id when
    /// the synthetic fallback was used.
    pub source: String,
    /// SHA-256 over inputs and labels of both parts.
    pub fingerprint: String,
}

impl DataHandle {
    pub fn new(split: Split, source: impl Into<String>) -> Self {
        let mut h = Sha256::new();
        for part in [&split.train, &split.test] {
            for x in part.inputs() {
                h.update(x.to_le_bytes());
            }
            for &l in part.labels() {
                h.update((l as u32).to_le_bytes());
            }
        }
        Self {
            split,
            source: source.into(),
            fingerprint: hex::encode(h.finalize()),
        }
    }
}

/// Seeds of the independent random streams of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub init: u64,
    pub shuffle: u64,
    pub noise: u64,
    pub dropout: u64,
}

impl CellSeeds {
    pub fn new(seed: u64) -> Self {
        Self {
            init: Rng::derive_seed(seed, 1),
            shuffle: Rng::derive_seed(seed, 2),
            noise: Rng::derive_seed(seed, 3),
            dropout: Rng::derive_seed(seed, 4),
        }
    }
}

/// Shrinkage statistics over one epoch. `c_*` cover applied steps only and
/// are absent when no step applied shrinkage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkStats {
    pub group_steps: u64,
    pub applied: u64,
    pub c_min: Option<f64>,
    pub c_max: Option<f64>,
    pub c_mean: Option<f64>,
}

#[derive(Clone, Debug, Default)]
struct ShrinkAcc {
    group_steps: u64,
    applied: u64,
    c_sum: f64,
    c_min: f64,
    c_max: f64,
}

impl ShrinkAcc {
    fn push(&mut self, traces: &[StepTrace]) {
        for t in traces {
            self.group_steps += 1;
            if t.report.applied {
                let c = t.report.c_clipped;
                if self.applied == 0 {
                    self.c_min = c;
                    self.c_max = c;
                } else {
                    self.c_min = self.c_min.min(c);
                    self.c_max = self.c_max.max(c);
                }
                self.applied += 1;
                self.c_sum += c;
            }
        }
    }

    fn finish(&self) -> ShrinkStats {
        let some = |x: f64| (self.applied > 0).then_some(x);
        ShrinkStats {
            group_steps: self.group_steps,
            applied: self.applied,
            c_min: some(self.c_min),
            c_max: some(self.c_max),
            c_mean: some(self.c_sum / self.applied.max(1) as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches (noisy inputs, dropout on).
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub shrink: ShrinkStats,
}

/// Deterministic result of one cell. Wall time lives in [`Timing`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub key: String,
    pub cell: Cell,
    pub data_source: String,
    pub pipeline_hash: String,
    pub param_count: usize,
    pub epochs: Vec<EpochMetrics>,
    /// Max test accuracy over epochs.
    pub best_accuracy: f64,
    /// Min test loss over epochs.
    pub best_loss: f64,
}

impl RunRecord {
    pub fn from_epochs(
        key: String,
        cell: Cell,
        data_source: String,
        pipeline_hash: String,
        param_count: usize,
        epochs: Vec<EpochMetrics>,
    ) -> Result<Self> {
        if epochs.is_empty() {
            return Err(Error::Empty);
        }
        let best_accuracy = epochs.iter().map(|e| e.test_accuracy).fold(f64::NEG_INFINITY, f64::max);
        let best_loss = epochs.iter().map(|e| e.test_loss).fold(f64::INFINITY, f64::min);
        Ok(Self {
            key,
            cell,
            data_source,
            pipeline_hash,
            param_count,
            epochs,
            best_accuracy,
            best_loss,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub key: String,
    pub optimizer: String,
    pub epoch_seconds: Vec<f64>,
}

fn model_spec(cell: &Cell, split: &Split) -> Result<ModelSpec> {
    ModelSpec::from_id(&cell.model, split.train.shape(), split.train.classes())
}

fn epoch_order(seeds: &CellSeeds, n: usize, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(Rng::derive_seed(seeds.shuffle, epoch as u64)).shuffle(&mut order);
    order
}

/// SHA-256 of everything that shapes training except the optimizer: data
/// fingerprint, model, initial parameters, batch order, noise and dropout
/// seeds for every step.
pub fn pipeline_hash(cell: &Cell, data: &DataHandle) -> Result<String> {
    let spec = model_spec(cell, &data.split)?;
    let seeds = CellSeeds::new(cell.seed);
    let mut h = Sha256::new();
    h.update(data.fingerprint.as_bytes());
    h.update(serde_json::to_vec(&spec).expect("spec serializes"));
    h.update((cell.batch_size as u64).to_le_bytes());
    h.update((cell.epochs as u64).to_le_bytes());
    h.update(cell.noise.to_le_bytes());
    let net = Network::<f32>::init(spec, seeds.init);
    for p in net.params() {
        for x in p {
            h.update(x.to_le_bytes());
        }
    }
    let n = data.split.train.len();
    let mut step = 0u64;
    for epoch in 1..=cell.epochs {
        for (bi, idx) in epoch_order(&seeds, n, epoch).chunks(cell.batch_size).enumerate() {
            step += 1;
            for &i in idx {
                h.update((i as u32).to_le_bytes());
            }
            h.update(data::noise_rng(seeds.noise, epoch, bi).seed().to_le_bytes());
            h.update(Rng::derive_seed(seeds.dropout, step).to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub loss: f64,
    pub traces: Vec<StepTrace>,
}

/// Stateful training of one cell, exposed step by step so trajectories can
/// be compared in lockstep.
pub struct Trainer<'d> {
    cell: Cell,
    data: &'d DataHandle,
    net: Network<f32>,
    params: Vec<ParamVector>,
    opt: Optimizer,
    seeds: CellSeeds,
    noise: NoiseSpec,
    test: Batch<f32>,
    step: u64,
}

impl<'d> Trainer<'d> {
    pub fn new(cell: Cell, data: &'d DataHandle) -> Result<Self> {
        let spec = model_spec(&cell, &data.split)?;
        let seeds = CellSeeds::new(cell.seed);
        let net = Network::<f32>::init(spec.clone(), seeds.init);
        let params = net.to_param_vectors()?;
        let opt = Optimizer::new(cell.optimizer, cell.optim.clone(), spec.param_groups())?;
        Ok(Self {
            noise: NoiseSpec::new(cell.noise)?,
            test: data.split.test.all()?,
            cell,
            data,
            net,
            params,
            opt,
            seeds,
            step: 0,
        })
    }

    pub fn cell(&self) -> &Cell {
        &self.cell
    }

    pub fn params(&self) -> &[ParamVector] {
        &self.params
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Mini-batches of sample indices for `epoch` (1-based); the last batch
    /// may be short.
    pub fn batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        epoch_order(&self.seeds, self.data.split.train.len(), epoch)
            .chunks(self.cell.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    pub fn step(&mut self, epoch: usize, batch_index: usize, indices: &[usize]) -> Result<StepOutcome> {
        self.step += 1;
        let clean: Batch<f32> = self.data.split.train.batch(indices)?;
        let batch = data::inject_noise(
            &clean,
            self.noise,
            &mut data::noise_rng(self.seeds.noise, epoch, batch_index),
        );
        let mode = Mode::Train {
            dropout_seed: Rng::derive_seed(self.seeds.dropout, self.step),
        };
        let lg = self.net.loss_and_grad(&batch, mode)?;
        let grads = lg
            .grads
            .iter()
            .map(|g| ParamVector::new(g.iter().map(|&x| x as f64).collect()))
            .collect::<Result<Vec<_>>>()?;
        let traces = self.opt.step(&mut self.params, &grads)?;
        self.net.load(&self.params)?;
        Ok(StepOutcome { loss: lg.loss, traces })
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        self.net.evaluate(&self.test)
    }

    pub fn run_epoch(&mut self, epoch: usize) -> Result<EpochMetrics> {
        let mut shrink = ShrinkAcc::default();
        let mut loss_sum = 0.0;
        let batches = self.batches(epoch);
        for (bi, idx) in batches.iter().enumerate() {
            let out = self.step(epoch, bi, idx)?;
            loss_sum += out.loss;
            shrink.push(&out.traces);
        }
        let eval = self.evaluate()?;
        Ok(EpochMetrics {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            test_loss: eval.loss,
            test_accuracy: eval.accuracy,
            shrink: shrink.finish(),
        })
    }

    /// Trains all epochs and returns the record and its timing.
    pub fn run(mut self) -> Result<(RunRecord, Timing)> {
        let key = self.cell.key();
        let mut epochs = Vec::with_capacity(self.cell.epochs);
        let mut seconds = Vec::with_capacity(self.cell.epochs);
        for epoch in 1..=self.cell.epochs {
            let start = Instant::now();
            epochs.push(self.run_epoch(epoch)?);
            seconds.push(start.elapsed().as_secs_f64());
        }
        let record = RunRecord::from_epochs(
            key.clone(),
            self.cell.clone(),
            self.data.source.clone(),
            pipeline_hash(&self.cell, self.data)?,
            self.net.spec().param_count(),
            epochs,
        )?;
        let timing = Timing {
            key,
            optimizer: self.cell.optimizer.id().to_string(),
            epoch_seconds: seconds,
        };
        Ok((record, timing))
    }
}
