//! Positive-part Stein-rule shrinkage of a stochastic gradient toward the
//! previous first-moment estimate.
//!
//! For a parameter group of dimension `p` with current gradient `g` and
//! previous momentum `m`, the shrunk gradient is
//!
//! ```text
//! ĝ = m + c · (g − m),    c = clip([1 − (p − 2) σ̂² / ‖g − m‖²]⁺)
//! ```
//!
//! where `σ̂²` is the coordinate-averaged variance `mean(v − m²)` taken from
//! the optimizer's raw moment accumulators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShrinkageConfig {
    /// Lower clip for an applied shrinkage factor. Zero gives the plain
    /// positive-part rule.
    pub clip_floor: f64,
    pub clip_ceil: f64,
    /// Decide the factor in coordinates scaled by `1/√(v + eps)`.
    pub whiten: bool,
    pub eps: f64,
    /// Groups smaller than this are never shrunk.
    pub min_dim: usize,
}

impl Default for ShrinkageConfig {
    fn default() -> Self {
        Self {
            clip_floor: 0.1,
            clip_ceil: 1.0,
            whiten: true,
            eps: 1e-8,
            min_dim: 3,
        }
    }
}

impl ShrinkageConfig {
    /// Positive-part rule with no clip and no whitening.
    pub fn unclipped() -> Self {
        Self {
            clip_floor: 0.0,
            clip_ceil: 1.0,
            whiten: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.clip_floor && self.clip_floor < self.clip_ceil && self.clip_ceil <= 1.0) {
            return Err(Error::invalid(format!(
                "clip range must satisfy 0 <= floor < ceil <= 1, got [{}, {}]",
                self.clip_floor, self.clip_ceil
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid(format!(
                "shrinkage eps must be positive, got {}",
                self.eps
            )));
        }
        if self.min_dim < 3 {
            return Err(Error::invalid(format!(
                "min_dim must be at least 3, got {}",
                self.min_dim
            )));
        }
        Ok(())
    }

    fn clip(&self, c_raw: f64) -> f64 {
        c_raw.max(0.0).max(self.clip_floor).min(self.clip_ceil)
    }
}

/// Diagnostics for one shrinkage decision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageReport {
    pub d_n: f64,
    pub sigma2_hat: f64,
    pub c_raw: f64,
    pub c_clipped: f64,
    pub applied: bool,
}

impl ShrinkageReport {
    /// Report for a step on which no shrinkage was attempted.
    pub fn pass_through() -> Self {
        Self {
            d_n: 0.0,
            sigma2_hat: 0.0,
            c_raw: 1.0,
            c_clipped: 1.0,
            applied: false,
        }
    }
}

/// `‖g − m_prev‖²`.
pub fn divergence(g: &ParamVector, m_prev: &ParamVector) -> Result<f64> {
    g.check_dim(m_prev)?;
    Ok(g.iter().zip(m_prev.iter()).fold(0.0, |acc, (&a, &b)| {
        let d = a - b;
        acc + d * d
    }))
}

/// `(1/p) Σ max(0, v_j − m_j²)`.
pub fn sigma2_global(m: &ParamVector, v: &ParamVector) -> Result<f64> {
    m.check_dim(v)?;
    let mut acc = 0.0;
    for (j, (&mj, &vj)) in m.iter().zip(v.iter()).enumerate() {
        if vj < 0.0 {
            return Err(Error::invalid(format!("second moment is negative at {j}: {vj}")));
        }
        acc += (vj - mj * mj).max(0.0);
    }
    Ok(acc / m.len() as f64)
}

/// Shrinkage factor for a group of dimension `p`.
///
/// A divergence below `cfg.eps` means the gradient already agrees with the
/// momentum; the step passes through with `c = 1`.
pub fn shrink_factor(p: usize, sigma2: f64, d_n: f64, cfg: &ShrinkageConfig) -> Result<ShrinkageReport> {
    if p < cfg.min_dim {
        return Err(Error::invalid(format!("shrinkage needs p >= {}, got {p}", cfg.min_dim)));
    }
    if !(sigma2 >= 0.0) || !(d_n >= 0.0) {
        return Err(Error::invalid(format!(
            "sigma2 and d_n must be non-negative, got ({sigma2}, {d_n})"
        )));
    }
    if d_n < cfg.eps {
        return Ok(ShrinkageReport {
            d_n,
            sigma2_hat: sigma2,
            c_raw: 1.0,
            c_clipped: 1.0,
            applied: false,
        });
    }
    let c_raw = 1.0 - (p as f64 - 2.0) * sigma2 / d_n;
    Ok(ShrinkageReport {
        d_n,
        sigma2_hat: sigma2,
        c_raw,
        c_clipped: cfg.clip(c_raw),
        applied: true,
    })
}

/// `m_prev + c · (g − m_prev)`; returns `g` or `m_prev` exactly at the
/// endpoints.
pub fn stein_estimate(g: &ParamVector, m_prev: &ParamVector, c: f64) -> Result<ParamVector> {
    g.check_dim(m_prev)?;
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::invalid(format!("shrinkage factor must lie in [0, 1], got {c}")));
    }
    if c == 1.0 {
        return Ok(g.clone());
    }
    if c == 0.0 {
        return Ok(m_prev.clone());
    }
    m_prev.zip_map(g, |m, gi| m + c * (gi - m))
}

/// Unwhitened shrinkage: factor from `‖g − m‖²` and `sigma2_global(m, v)`.
pub fn plain_shrink(
    g: &ParamVector,
    m_prev: &ParamVector,
    v_prev: &ParamVector,
    cfg: &ShrinkageConfig,
) -> Result<(ParamVector, ShrinkageReport)> {
    g.check_dim(v_prev)?;
    let d_n = divergence(g, m_prev)?;
    let sigma2 = sigma2_global(m_prev, v_prev)?;
    let report = shrink_factor(g.len(), sigma2, d_n, cfg)?;
    Ok((stein_estimate(g, m_prev, report.c_clipped)?, report))
}

/// Shrinkage decided in whitened coordinates `w = (g − m)/√(v + eps)`.
///
/// Both the divergence and the variance estimate are measured after
/// whitening: `D = ‖w‖²` and `σ̂² = mean(max(0, v − m²)/(v + eps))`. The
/// resulting factor is then applied to the unwhitened difference.
pub fn whitened_shrink(
    g: &ParamVector,
    m_prev: &ParamVector,
    v_prev: &ParamVector,
    cfg: &ShrinkageConfig,
) -> Result<(ParamVector, ShrinkageReport)> {
    g.check_dim(m_prev)?;
    g.check_dim(v_prev)?;
    let mut d_n = 0.0;
    let mut var_acc = 0.0;
    for (j, ((&gj, &mj), &vj)) in g.iter().zip(m_prev.iter()).zip(v_prev.iter()).enumerate() {
        if vj < 0.0 {
            return Err(Error::invalid(format!("second moment is negative at {j}: {vj}")));
        }
        let denom = vj + cfg.eps;
        let diff = gj - mj;
        d_n += diff * diff / denom;
        var_acc += (vj - mj * mj).max(0.0) / denom;
    }
    let sigma2 = var_acc / g.len() as f64;
    let report = shrink_factor(g.len(), sigma2, d_n, cfg)?;
    Ok((stein_estimate(g, m_prev, report.c_clipped)?, report))
}

/// Dispatch on `cfg.whiten`.
pub fn shrink(
    g: &ParamVector,
    m_prev: &ParamVector,
    v_prev: &ParamVector,
    cfg: &ShrinkageConfig,
) -> Result<(ParamVector, ShrinkageReport)> {
    if cfg.whiten {
        whitened_shrink(g, m_prev, v_prev, cfg)
    } else {
        plain_shrink(g, m_prev, v_prev, cfg)
    }
}
