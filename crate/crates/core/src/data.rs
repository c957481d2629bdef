//! Datasets: synthetic class-conditional Gaussians, the CIFAR binary format,
//! and additive Gaussian input noise.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Batch, Real, Shape};
use crate::tensor::Rng;

/// Per-channel normalization for CIFAR-10 (RGB), applied after scaling
/// pixels to [0, 1]. Widely used reference values; fixed here so runs are
/// reproducible.
pub const CIFAR10_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];
pub const CIFAR100_MEAN: [f32; 3] = [0.5071, 0.4865, 0.4409];
pub const CIFAR100_STD: [f32; 3] = [0.2673, 0.2564, 0.2762];

pub const CIFAR_PIXELS: usize = 3 * 32 * 32;
pub const CIFAR_SHAPE: Shape = Shape::Image { c: 3, h: 32, w: 32 };

/// In-memory dataset, inputs stored as `f32` sample-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    shape: Shape,
    classes: usize,
    inputs: Vec<f32>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        shape: Shape,
        classes: usize,
        inputs: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        // Reuse batch validation for sizes and label range.
        let b = Batch::new(inputs, shape, labels, classes)?;
        Ok(Self {
            name: name.into(),
            shape,
            classes,
            inputs: b.inputs().to_vec(),
            labels: b.labels().to_vec(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> &[f32] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let s = self.shape.size();
        &self.inputs[i * s..(i + 1) * s]
    }

    /// Gathers the given sample indices into a batch.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Result<Batch<T>> {
        let mut x = Vec::with_capacity(indices.len() * self.shape.size());
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!(
                    "sample index {i} out of range ({})",
                    self.len()
                )));
            }
            x.extend(self.sample(i).iter().map(|&v| T::of(v as f64)));
            y.push(self.labels[i]);
        }
        Batch::new(x, self.shape, y, self.classes)
    }

    /// The whole dataset as one batch.
    pub fn all<T: Real>(&self) -> Result<Batch<T>> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

/// Knobs for [`synth_dataset_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub n: usize,
    pub shape: Shape,
    pub classes: usize,
    /// Scale of the class means.
    pub separation: f64,
    /// Standard deviation of the within-class Gaussian.
    pub noise_std: f64,
    pub seed: u64,
}

/// Side of the piecewise-constant grid from which image class means are
/// upsampled.
const PROTO_GRID: usize = 4;

/// Class means for `seed`. Image means are blocky: a `4×4` grid of standard
/// normals per channel, upsampled to `h × w`. Flat means are standard
/// normal vectors.
fn class_means(shape: Shape, classes: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|k| {
            let mut rng = Rng::new(Rng::derive_seed(seed, k as u64));
            match shape {
                Shape::Flat(d) => (0..d).map(|_| rng.normal()).collect(),
                Shape::Image { c, h, w } => {
                    let grid: Vec<f64> = (0..c * PROTO_GRID * PROTO_GRID).map(|_| rng.normal()).collect();
                    let mut out = Vec::with_capacity(c * h * w);
                    for ch in 0..c {
                        for y in 0..h {
                            for x in 0..w {
                                let gy = y * PROTO_GRID / h;
                                let gx = x * PROTO_GRID / w;
                                out.push(grid[(ch * PROTO_GRID + gy) * PROTO_GRID + gx]);
                            }
                        }
                    }
                    out
                }
            }
        })
        .collect()
}

/// Gaussian class-conditional clusters with balanced labels (counts differ
/// by at most one). Class means depend only on `seed`, so train and test
/// sets drawn with [`synth_split`] share them.
pub fn synth_dataset_with(opts: &SynthOptions) -> Result<Dataset> {
    synth_from_means(opts, &class_means(opts.shape, opts.classes, opts.seed), opts.seed)
}

fn synth_from_means(opts: &SynthOptions, means: &[Vec<f64>], sample_seed: u64) -> Result<Dataset> {
    if opts.classes < 2 || opts.n < opts.classes {
        return Err(Error::invalid(format!(
            "need n >= classes >= 2, got n = {}, classes = {}",
            opts.n, opts.classes
        )));
    }
    if !(opts.noise_std >= 0.0 && opts.separation.is_finite()) {
        return Err(Error::invalid("noise_std must be >= 0 and separation finite"));
    }
    let mut rng = Rng::new(Rng::derive_seed(sample_seed, u64::MAX));
    let mut labels: Vec<usize> = (0..opts.n).map(|i| i % opts.classes).collect();
    rng.shuffle(&mut labels);
    let size = opts.shape.size();
    let mut inputs = Vec::with_capacity(opts.n * size);
    for &l in &labels {
        for &m in &means[l] {
            inputs.push((opts.separation * m + opts.noise_std * rng.normal()) as f32);
        }
    }
    Dataset::new("synthetic", opts.shape, opts.classes, inputs, labels)
}

/// [`synth_dataset_with`] with separation 1 and unit within-class noise.
pub fn synth_dataset(n: usize, shape: Shape, classes: usize, seed: u64) -> Result<Dataset> {
    synth_dataset_with(&SynthOptions {
        n,
        shape,
        classes,
        separation: 1.0,
        noise_std: 1.0,
        seed,
    })
}

/// Train and test sets sharing class means; test samples use an
/// independent stream.
pub fn synth_split(opts: &SynthOptions, n_test: usize) -> Result<Split> {
    let means = class_means(opts.shape, opts.classes, opts.seed);
    let train = synth_from_means(opts, &means, opts.seed)?;
    let test_opts = SynthOptions { n: n_test, ..*opts };
    let test = synth_from_means(&test_opts, &means, Rng::derive_seed(opts.seed, 1))?;
    Ok(Split { train, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CifarKind {
    Cifar10,
    /// Records carry a coarse and a fine label byte; the fine label is used.
    Cifar100,
}

impl CifarKind {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 1,
            CifarKind::Cifar100 => 2,
        }
    }

    pub fn record_size(self) -> usize {
        self.label_bytes() + CIFAR_PIXELS
    }

    pub fn classes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 10,
            CifarKind::Cifar100 => 100,
        }
    }

    fn norm(self) -> ([f32; 3], [f32; 3]) {
        match self {
            CifarKind::Cifar10 => (CIFAR10_MEAN, CIFAR10_STD),
            CifarKind::Cifar100 => (CIFAR100_MEAN, CIFAR100_STD),
        }
    }
}

/// Raw contents of one binary batch file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CifarBatch {
    /// `records × 3072` bytes, CHW per record.
    pub pixels: Vec<u8>,
    pub labels: Vec<usize>,
}

/// Reads a binary batch file that must hold exactly `records` records.
pub fn read_cifar_batch(path: &Path, kind: CifarKind, records: usize) -> Result<CifarBatch> {
    let expected = (records * kind.record_size()) as u64;
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Format {
                path: path.to_path_buf(),
                message: format!("file not found (expected {expected} bytes)"),
            }
        } else {
            Error::io(path, e)
        }
    })?;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let mut pixels = Vec::with_capacity(records * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(records);
    for rec in bytes.chunks_exact(kind.record_size()) {
        let label = rec[kind.label_bytes() - 1] as usize;
        if label >= kind.classes() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("label {label} out of range for {} classes", kind.classes()),
            });
        }
        labels.push(label);
        pixels.extend_from_slice(&rec[kind.label_bytes()..]);
    }
    Ok(CifarBatch { pixels, labels })
}

/// Writes records in the binary format. For CIFAR-100 the coarse label byte
/// is written as 0.
pub fn write_cifar_batch(path: &Path, kind: CifarKind, batch: &CifarBatch) -> Result<()> {
    if batch.pixels.len() != batch.labels.len() * CIFAR_PIXELS {
        return Err(Error::DimensionMismatch {
            expected: batch.labels.len() * CIFAR_PIXELS,
            found: batch.pixels.len(),
        });
    }
    let mut out = Vec::with_capacity(batch.labels.len() * kind.record_size());
    for (label, px) in batch.labels.iter().zip(batch.pixels.chunks_exact(CIFAR_PIXELS)) {
        let byte = u8::try_from(*label)
            .ok()
            .filter(|&b| (b as usize) < kind.classes())
            .ok_or_else(|| Error::invalid(format!("label {label} out of range")))?;
        if kind == CifarKind::Cifar100 {
            out.push(0);
        }
        out.push(byte);
        out.extend_from_slice(px);
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Scales bytes to [0, 1] and normalizes per channel.
pub fn normalize_cifar(kind: CifarKind, pixels: &[u8]) -> Vec<f32> {
    let (mean, std) = kind.norm();
    pixels
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let c = (i % CIFAR_PIXELS) / (32 * 32);
            (b as f32 / 255.0 - mean[c]) / std[c]
        })
        .collect()
}

fn cifar_dataset(name: &str, kind: CifarKind, parts: Vec<CifarBatch>) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in parts {
        pixels.extend(p.pixels);
        labels.extend(p.labels);
    }
    Dataset::new(
        name,
        CIFAR_SHAPE,
        kind.classes(),
        normalize_cifar(kind, &pixels),
        labels,
    )
}

/// File names and record counts `(train files, test file)` for each kind.
fn layout(kind: CifarKind) -> (Vec<(&'static str, usize)>, (&'static str, usize)) {
    match kind {
        CifarKind::Cifar10 => (
            vec![
                ("data_batch_1.bin", 10_000),
                ("data_batch_2.bin", 10_000),
                ("data_batch_3.bin", 10_000),
                ("data_batch_4.bin", 10_000),
                ("data_batch_5.bin", 10_000),
            ],
            ("test_batch.bin", 10_000),
        ),
        CifarKind::Cifar100 => (vec![("train.bin", 50_000)], ("test.bin", 10_000)),
    }
}

/// Accepts either the directory holding the `.bin` files or its parent
/// containing the standard extracted folder.
fn resolve_dir(dir: &Path, kind: CifarKind) -> PathBuf {
    let sub = match kind {
        CifarKind::Cifar10 => "cifar-10-batches-bin",
        CifarKind::Cifar100 => "cifar-100-binary",
    };
    let nested = dir.join(sub);
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Loads the standard train/test split. `scale` divides every file's
/// record count (1 for the real dataset; larger values accept shrunken
/// fixtures).
pub fn load_cifar_scaled(dir: &Path, kind: CifarKind, scale: usize) -> Result<Split> {
    if scale == 0 {
        return Err(Error::invalid("scale must be positive"));
    }
    let dir = resolve_dir(dir, kind);
    let (train_files, (test_file, test_n)) = layout(kind);
    let train = train_files
        .iter()
        .map(|(f, n)| read_cifar_batch(&dir.join(f), kind, n / scale))
        .collect::<Result<Vec<_>>>()?;
    let test = read_cifar_batch(&dir.join(test_file), kind, test_n / scale)?;
    let name = match kind {
        CifarKind::Cifar10 => "cifar10",
        CifarKind::Cifar100 => "cifar100",
    };
    Ok(Split {
        train: cifar_dataset(name, kind, train)?,
        test: cifar_dataset(name, kind, vec![test])?,
    })
}

/// 50,000 training and 10,000 test images.
pub fn load_cifar10(dir: &Path) -> Result<Split> {
    load_cifar_scaled(dir, CifarKind::Cifar10, 1)
}

pub fn load_cifar100(dir: &Path) -> Result<Split> {
    load_cifar_scaled(dir, CifarKind::Cifar100, 1)
}

/// Additive Gaussian noise on normalized inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub std: f64,
}

impl NoiseSpec {
    pub const DEFAULT_GRID: [f64; 3] = [0.0, 0.05, 0.1];

    pub fn new(std: f64) -> Result<Self> {
        if !(std >= 0.0 && std.is_finite()) {
            return Err(Error::invalid(format!("noise std must be finite and >= 0, got {std}")));
        }
        Ok(Self { std })
    }
}

/// `inputs + N(0, std²)` element-wise; labels untouched. `std = 0` returns
/// an identical copy without consuming randomness.
pub fn inject_noise<T: Real>(batch: &Batch<T>, spec: NoiseSpec, rng: &mut Rng) -> Batch<T> {
    let mut out = batch.clone();
    if spec.std > 0.0 {
        for x in out.inputs_mut() {
            *x = T::of(x.as_f64() + spec.std * rng.normal());
        }
    }
    out
}

/// Stream for the noise of batch `batch` in epoch `epoch`.
pub fn noise_rng(seed: u64, epoch: usize, batch: usize) -> Rng {
    Rng::new(Rng::derive_seed(Rng::derive_seed(seed, epoch as u64), batch as u64))
}
