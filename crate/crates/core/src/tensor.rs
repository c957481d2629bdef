//! Flat parameter vectors, parameter-group metadata and the seeded RNG.
//!
//! Every reduction in this module sums left to right over the slice so that
//! replays with the same inputs are bit-identical.

use std::f64::consts::PI;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense, non-empty vector of finite reals: one parameter group's values,
/// gradients or moment estimates.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::filled(dim, 0.0)
    }

    pub fn filled(dim: usize, value: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty);
        }
        Self::new(vec![value; dim])
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub(crate) fn check_dim(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    /// Element-wise combination of two vectors of equal length.
    pub fn zip_map(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<ParamVector> {
        self.check_dim(other)?;
        ParamVector::new(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ParamVector> {
        ParamVector::new(self.0.iter().map(|&a| f(a)).collect())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, a: f64) -> Result<ParamVector> {
        self.map(|x| a * x)
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).fold(0.0, |acc, (&a, &b)| acc + a * b))
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, &x| acc + x) / self.len() as f64
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .fold(0.0_f64, |acc, (&a, &b)| acc.max((a - b).abs())))
    }
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len() <= 8 {
            f.debug_tuple("ParamVector").field(&self.0).finish()
        } else {
            write!(f, "ParamVector(len={}, head={:?})", self.len(), &self.0[..4])
        }
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `a * x + y`, element-wise.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    if !a.is_finite() {
        return Err(Error::invalid(format!("axpy coefficient must be finite, got {a}")));
    }
    x.zip_map(y, |xi, yi| a * xi + yi)
}

/// Sum of squares, accumulated left to right.
pub fn sq_norm(x: &ParamVector) -> f64 {
    x.iter().fold(0.0, |acc, &v| acc + v * v)
}

pub fn norm(x: &ParamVector) -> f64 {
    sq_norm(x).sqrt()
}

/// `dim` i.i.d. draws from N(mean, std²).
pub fn gauss_vec(rng: &mut Rng, dim: usize, mean: f64, std: f64) -> Result<ParamVector> {
    if dim == 0 {
        return Err(Error::Empty);
    }
    if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(Error::invalid(format!(
            "gauss_vec needs finite mean and std >= 0, got ({mean}, {std})"
        )));
    }
    let values = (0..dim).map(|_| mean + std * rng.normal()).collect();
    ParamVector::new(values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    ConvWeight,
    DenseWeight,
    Bias,
    Other,
}

impl GroupKind {
    pub fn is_weight(self) -> bool {
        matches!(self, GroupKind::ConvWeight | GroupKind::DenseWeight)
    }
}

/// Metadata for one block of parameters that the optimizer treats as a unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub id: String,
    pub dim: usize,
    pub kind: GroupKind,
    pub shrinkage_enabled: bool,
}

impl ParamGroup {
    /// Shrinkage defaults to on for convolution weights only.
    pub fn new(id: impl Into<String>, dim: usize, kind: GroupKind) -> Self {
        Self {
            id: id.into(),
            dim,
            kind,
            shrinkage_enabled: kind == GroupKind::ConvWeight,
        }
    }

    pub fn with_shrinkage(mut self, enabled: bool) -> Self {
        self.shrinkage_enabled = enabled;
        self
    }
}

/// Seeded random stream.
///
/// The generator is ChaCha8 (`rand_chacha`) keyed through
/// `SeedableRng::seed_from_u64`. Uniform draws take the top 53 bits of a
/// `u64`. Normal draws use the Box–Muller transform and cache the second
/// variate of each pair. Child streams for workers or sub-tasks come from
/// [`Rng::derive_seed`], a SplitMix64 mix of `(seed, index)`.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn derive_seed(seed: u64, index: u64) -> u64 {
        splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
    }

    /// Independent child stream for `(self.seed, index)`.
    pub fn child(&self, index: u64) -> Rng {
        Rng::new(Self::derive_seed(self.seed, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Fisher–Yates shuffle driven by [`Rng::below`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
