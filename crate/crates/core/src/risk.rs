//! Monte Carlo risk experiments.
//!
//! Estimators of a Gaussian mean `μ ∈ ℝᵖ` from one draw `Y ~ N(μ, σ²I)` are
//! compared under squared-error loss. The shrink target is the origin, which
//! is the translated form of shrinking a gradient toward its momentum. `σ²`
//! is supplied as ground truth.
//!
//! Trials are split into fixed-size blocks. Block `b` draws from
//! `Rng::derive_seed(seed, b)` and blocks are merged in index order, so
//! results depend only on the seed, never on thread scheduling. Every
//! estimator evaluated in one call sees the same noise draws.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{OptimConfig, Optimizer, OptimizerKind};
use crate::tensor::{GroupKind, ParamGroup, ParamVector, Rng};

const BLOCK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Estimator {
    /// The observation itself.
    Ue,
    /// James–Stein with the raw coefficient.
    Js,
    /// Positive-part James–Stein, no clipping.
    JsPlus,
    /// Posterior mean under a `N(0, tau2·I)` prior.
    Bayes { tau2: f64 },
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Ue => f.write_str("UE"),
            Estimator::Js => f.write_str("JS"),
            Estimator::JsPlus => f.write_str("JS+"),
            Estimator::Bayes { tau2 } => write!(f, "Bayes(tau2={tau2})"),
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "ue" => Ok(Estimator::Ue),
            "js" => Ok(Estimator::Js),
            "js+" | "jsplus" => Ok(Estimator::JsPlus),
            _ => {
                let tau2 = lower
                    .strip_prefix("bayes:")
                    .and_then(|t| t.parse::<f64>().ok())
                    .filter(|t| *t > 0.0)
                    .ok_or_else(|| Error::invalid(format!("unknown estimator `{s}` (ue, js, js+, bayes:<tau2>)")))?;
                Ok(Estimator::Bayes { tau2 })
            }
        }
    }
}

/// `1 − (p − 2)σ²/‖y‖²`; 1 when `y = 0`.
pub fn js_coefficient(p: usize, sigma2: f64, norm_sq: f64) -> f64 {
    if norm_sq == 0.0 {
        return 1.0;
    }
    1.0 - (p as f64 - 2.0) * sigma2 / norm_sq
}

pub fn js_plus_coefficient(p: usize, sigma2: f64, norm_sq: f64) -> f64 {
    js_coefficient(p, sigma2, norm_sq).max(0.0)
}

impl Estimator {
    /// Scalar multiplier applied to `y`; every estimator here is of that form.
    pub fn coefficient(&self, p: usize, sigma2: f64, norm_sq: f64) -> f64 {
        match *self {
            Estimator::Ue => 1.0,
            Estimator::Js => js_coefficient(p, sigma2, norm_sq),
            Estimator::JsPlus => js_plus_coefficient(p, sigma2, norm_sq),
            Estimator::Bayes { tau2 } => tau2 / (tau2 + sigma2),
        }
    }

    pub fn apply(&self, y: &ParamVector, sigma2: f64) -> Result<ParamVector> {
        let norm_sq = crate::tensor::sq_norm(y);
        let c = self.coefficient(y.len(), sigma2, norm_sq);
        y.scale(c)
    }
}

/// Monte Carlo risk at one parameter point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub estimator: Estimator,
    pub p: usize,
    pub sigma2: f64,
    /// `None` when `μ` is redrawn from a prior on every trial.
    pub mu_norm: Option<f64>,
    pub trials: usize,
    pub mse: f64,
    pub std_err: f64,
}

/// Mean and standard error of the per-trial loss difference `a − b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub mean: f64,
    pub std_err: f64,
    pub trials: usize,
}

#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64,
        }
    }

    fn std_err(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64).sqrt() / (self.n as f64).sqrt()
    }
}

/// Runs `trials` draws and accumulates, per estimator, the squared error and
/// (for `pairs`) per-trial loss differences. `draw_mu` fills `μ` for a trial.
fn simulate<F>(
    estimators: &[Estimator],
    pairs: &[(usize, usize)],
    p: usize,
    sigma2: f64,
    trials: usize,
    seed: u64,
    draw_mu: F,
) -> (Vec<Moments>, Vec<Moments>)
where
    F: Fn(&mut Rng, &mut [f64]) + Sync,
{
    let sigma = sigma2.sqrt();
    let blocks = trials.div_ceil(BLOCK);
    let per_block: Vec<(Vec<Moments>, Vec<Moments>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = Rng::new(Rng::derive_seed(seed, b as u64));
            let n = BLOCK.min(trials - b * BLOCK);
            let mut mu = vec![0.0; p];
            let mut y = vec![0.0; p];
            let mut losses = vec![0.0; estimators.len()];
            let mut acc = vec![Moments::default(); estimators.len()];
            let mut diff = vec![Moments::default(); pairs.len()];
            for _ in 0..n {
                draw_mu(&mut rng, &mut mu);
                for (yj, &mj) in y.iter_mut().zip(&mu) {
                    *yj = mj + sigma * rng.normal();
                }
                let norm_sq = y.iter().fold(0.0, |a, &v| a + v * v);
                for (k, est) in estimators.iter().enumerate() {
                    let c = est.coefficient(p, sigma2, norm_sq);
                    let loss = y.iter().zip(&mu).fold(0.0, |a, (&yj, &mj)| {
                        let e = c * yj - mj;
                        a + e * e
                    });
                    losses[k] = loss;
                    acc[k].push(loss);
                }
                for (d, &(i, j)) in diff.iter_mut().zip(pairs) {
                    d.push(losses[i] - losses[j]);
                }
            }
            (acc, diff)
        })
        .collect();
    per_block.into_iter().fold(
        (
            vec![Moments::default(); estimators.len()],
            vec![Moments::default(); pairs.len()],
        ),
        |(acc, diff), (a, d)| {
            (
                acc.into_iter().zip(a).map(|(x, y)| x.merge(y)).collect(),
                diff.into_iter().zip(d).map(|(x, y)| x.merge(y)).collect(),
            )
        },
    )
}

fn check_setup(p: usize, sigma2: f64, trials: usize) -> Result<()> {
    if p < 3 {
        return Err(Error::invalid(format!("risk experiments need p >= 3, got {p}")));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid(format!("sigma2 must be positive, got {sigma2}")));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    Ok(())
}

/// Risks of several estimators at a fixed `μ`, all evaluated on the same
/// noise draws.
pub fn paired_risks(
    estimators: &[Estimator],
    sigma2: f64,
    mu: &ParamVector,
    trials: usize,
    seed: u64,
) -> Result<Vec<RiskEstimate>> {
    let p = mu.len();
    check_setup(p, sigma2, trials)?;
    let fixed = mu.as_slice();
    let (acc, _) = simulate(estimators, &[], p, sigma2, trials, seed, |_, m| {
        m.copy_from_slice(fixed)
    });
    let mu_norm = crate::tensor::norm(mu);
    Ok(estimators
        .iter()
        .zip(acc)
        .map(|(&estimator, m)| RiskEstimate {
            estimator,
            p,
            sigma2,
            mu_norm: Some(mu_norm),
            trials,
            mse: m.mean,
            std_err: m.std_err(),
        })
        .collect())
}

pub fn estimate_risk(
    estimator: Estimator,
    sigma2: f64,
    mu: &ParamVector,
    trials: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    Ok(paired_risks(&[estimator], sigma2, mu, trials, seed)?.remove(0))
}

/// Per-trial loss of `a` minus loss of `b` on common noise.
pub fn risk_difference(
    a: Estimator,
    b: Estimator,
    sigma2: f64,
    mu: &ParamVector,
    trials: usize,
    seed: u64,
) -> Result<PairedDifference> {
    let p = mu.len();
    check_setup(p, sigma2, trials)?;
    let fixed = mu.as_slice();
    let (_, diff) = simulate(&[a, b], &[(0, 1)], p, sigma2, trials, seed, |_, m| {
        m.copy_from_slice(fixed)
    });
    Ok(PairedDifference {
        mean: diff[0].mean,
        std_err: diff[0].std_err(),
        trials,
    })
}

/// Risk of each estimator along `μ = r·e₁` for `r` in `grid`. Grid point `i`
/// uses seed `Rng::derive_seed(seed, i)` for every estimator.
pub fn risk_curve(
    estimators: &[Estimator],
    p: usize,
    sigma2: f64,
    grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<RiskEstimate>> {
    check_setup(p, sigma2, trials)?;
    let mut out = Vec::with_capacity(grid.len() * estimators.len());
    for (i, &r) in grid.iter().enumerate() {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!("grid values must be finite and >= 0, got {r}")));
        }
        let mut mu = vec![0.0; p];
        mu[0] = r;
        let mu = ParamVector::new(mu)?;
        out.extend(paired_risks(
            estimators,
            sigma2,
            &mu,
            trials,
            Rng::derive_seed(seed, i as u64),
        )?);
    }
    Ok(out)
}

/// `p·τ²σ²/(τ² + σ²)`.
pub fn bayes_risk_closed_form(p: usize, tau2: f64, sigma2: f64) -> f64 {
    let denom = tau2 + sigma2;
    if denom == 0.0 {
        return 0.0;
    }
    p as f64 * tau2 * sigma2 / denom
}

/// `τ²/(τ² + σ²) · y`.
pub fn bayes_estimator(y: &ParamVector, tau2: f64, sigma2: f64) -> Result<ParamVector> {
    if !(tau2 > 0.0 && sigma2 > 0.0) {
        return Err(Error::invalid(format!(
            "tau2 and sigma2 must be positive, got ({tau2}, {sigma2})"
        )));
    }
    y.scale(tau2 / (tau2 + sigma2))
}

/// Bayes risk by simulation: `μ ~ N(0, τ²I)` redrawn every trial.
pub fn bayes_risk_mc(p: usize, tau2: f64, sigma2: f64, trials: usize, seed: u64) -> Result<RiskEstimate> {
    check_setup(p, sigma2, trials)?;
    if !(tau2 > 0.0) {
        return Err(Error::invalid(format!("tau2 must be positive, got {tau2}")));
    }
    let tau = tau2.sqrt();
    let estimator = Estimator::Bayes { tau2 };
    let (acc, _) = simulate(&[estimator], &[], p, sigma2, trials, seed, |rng, m| {
        for mj in m.iter_mut() {
            *mj = tau * rng.normal();
        }
    });
    Ok(RiskEstimate {
        estimator,
        p,
        sigma2,
        mu_norm: None,
        trials,
        mse: acc[0].mean,
        std_err: acc[0].std_err(),
    })
}

pub const RISK_CSV_HEADER: &str = "estimator,p,sigma2,mu_norm,trials,mse,std_err";

pub fn write_risk_csv<W: Write>(mut w: W, rows: &[RiskEstimate]) -> std::io::Result<()> {
    writeln!(w, "{RISK_CSV_HEADER}")?;
    for r in rows {
        let mu = r.mu_norm.map(|m| m.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.estimator, r.p, r.sigma2, mu, r.trials, r.mse, r.std_err
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceSimConfig {
    pub p: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub steps: usize,
    /// Mean of every gradient coordinate.
    pub mean: f64,
    /// Per-coordinate variance of the stream (uniform across coordinates).
    pub true_var: f64,
    /// Record every `log_every` steps and always the final step.
    pub log_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    pub step: usize,
    pub sigma2_hat: f64,
    /// `|σ̂² − σ²|/σ²`, or the absolute error when `σ² = 0`.
    pub rel_err: f64,
}

/// Feeds an i.i.d. `N(mean, true_var)` gradient stream through Adam's raw
/// moment recursions and tracks `σ̂² = mean(max(0, v − m²))`.
pub fn variance_consistency_sim(cfg: &VarianceSimConfig, seed: u64) -> Result<Vec<VariancePoint>> {
    if cfg.p == 0 || cfg.steps == 0 || cfg.log_every == 0 {
        return Err(Error::invalid("p, steps and log_every must be positive"));
    }
    if !(cfg.true_var >= 0.0) {
        return Err(Error::invalid(format!("true_var must be >= 0, got {}", cfg.true_var)));
    }
    let sd = cfg.true_var.sqrt();
    let mut rng = Rng::new(seed);
    let mut m = vec![0.0; cfg.p];
    let mut v = vec![0.0; cfg.p];
    let mut out = Vec::with_capacity(cfg.steps / cfg.log_every + 1);
    for step in 1..=cfg.steps {
        for (mj, vj) in m.iter_mut().zip(v.iter_mut()) {
            let g = cfg.mean + sd * rng.normal();
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * g;
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * g * g;
        }
        if step % cfg.log_every == 0 || step == cfg.steps {
            let sigma2_hat = crate::stein::sigma2_global(&ParamVector::from_slice(&m)?, &ParamVector::from_slice(&v)?)?;
            let err = (sigma2_hat - cfg.true_var).abs();
            out.push(VariancePoint {
                step,
                sigma2_hat,
                rel_err: if cfg.true_var > 0.0 { err / cfg.true_var } else { err },
            });
        }
    }
    Ok(out)
}

/// `J(θ) = ½ (θ − θ*)ᵀ A (θ − θ*)` with `A` symmetric positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    p: usize,
    a: Vec<f64>,
    theta_star: Vec<f64>,
}

impl Quadratic {
    /// `a` is `p × p`, row-major.
    pub fn new(a: Vec<f64>, theta_star: Vec<f64>) -> Result<Self> {
        let p = theta_star.len();
        if p == 0 || a.len() != p * p {
            return Err(Error::DimensionMismatch {
                expected: p * p,
                found: a.len(),
            });
        }
        for i in 0..p {
            for j in 0..i {
                if (a[i * p + j] - a[j * p + i]).abs() > 1e-12 * (1.0 + a[i * p + j].abs()) {
                    return Err(Error::invalid(format!("A is not symmetric at ({i}, {j})")));
                }
            }
        }
        if !cholesky_ok(&a, p) {
            return Err(Error::invalid("A is not positive definite"));
        }
        Ok(Self { p, a, theta_star })
    }

    pub fn diagonal(eigs: &[f64], theta_star: Vec<f64>) -> Result<Self> {
        let p = eigs.len();
        let mut a = vec![0.0; p * p];
        for (i, &e) in eigs.iter().enumerate() {
            a[i * p + i] = e;
        }
        Self::new(a, theta_star)
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.p;
        (0..p)
            .map(|i| (0..p).fold(0.0, |acc, j| acc + self.a[i * p + j] * (theta[j] - self.theta_star[j])))
            .collect()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let g = self.gradient(theta);
        0.5 * g
            .iter()
            .zip(theta.iter().zip(&self.theta_star))
            .fold(0.0, |acc, (gi, (t, s))| acc + gi * (t - s))
    }
}

fn cholesky_ok(a: &[f64], p: usize) -> bool {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let s = (0..j).fold(a[i * p + j], |acc, k| acc - l[i * p + k] * l[j * p + k]);
            if i == j {
                if !(s > 0.0) {
                    return false;
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    Constant(f64),
    /// `α_t = alpha0 · t^(−r)`.
    Power {
        alpha0: f64,
        r: f64,
    },
}

impl StepSchedule {
    pub fn alpha(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant(a) => a,
            StepSchedule::Power { alpha0, r } => alpha0 * (t as f64).powf(-r),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleCheck {
    pub sum_alpha: f64,
    pub sum_alpha_sq: f64,
    /// Upper bound on the infinite `Σ α_t²`, `α₀²(1 + 1/(2r − 1))`.
    pub sum_alpha_sq_bound: f64,
    pub robbins_monro: bool,
}

/// Partial sums over `steps` terms and whether the schedule satisfies
/// `Σ α_t = ∞`, `Σ α_t² < ∞` (true exactly for `r ∈ (0.5, 1]`).
pub fn check_schedule(schedule: &StepSchedule, steps: usize) -> ScheduleCheck {
    let (sum_alpha, sum_alpha_sq) = (1..=steps).fold((0.0, 0.0), |(s, s2), t| {
        let a = schedule.alpha(t);
        (s + a, s2 + a * a)
    });
    let (bound, ok) = match *schedule {
        StepSchedule::Constant(_) => (f64::INFINITY, false),
        StepSchedule::Power { alpha0, r } => {
            let ok = r > 0.5 && r <= 1.0;
            let bound = if r > 0.5 {
                alpha0 * alpha0 * (1.0 + 1.0 / (2.0 * r - 1.0))
            } else {
                f64::INFINITY
            };
            (bound, ok && sum_alpha_sq <= bound)
        }
    };
    ScheduleCheck {
        sum_alpha,
        sum_alpha_sq,
        sum_alpha_sq_bound: bound,
        robbins_monro: ok,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub step: usize,
    pub grad_norm: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub points: Vec<ConvergencePoint>,
}

impl ConvergenceTrace {
    /// Finite-horizon surrogate for `liminf ‖∇J‖`.
    pub fn min_grad_norm(&self) -> f64 {
        self.points.iter().map(|p| p.grad_norm).fold(f64::INFINITY, f64::min)
    }

    pub fn last(&self) -> Option<&ConvergencePoint> {
        self.points.last()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceSim {
    pub objective: Quadratic,
    pub optimizer: OptimizerKind,
    pub config: OptimConfig,
    pub schedule: StepSchedule,
    pub noise_sigma: f64,
    pub steps: usize,
    pub theta0: Vec<f64>,
}

/// Runs the optimizer on noisy gradients `∇J(θ) + N(0, σ²I)` and records the
/// exact `‖∇J(θ_t)‖` after every step.
pub fn convergence_sim(sim: &ConvergenceSim, seed: u64) -> Result<ConvergenceTrace> {
    let p = sim.objective.dim();
    if sim.theta0.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: sim.theta0.len(),
        });
    }
    let group = ParamGroup::new("theta", p, GroupKind::ConvWeight);
    let mut opt = Optimizer::new(sim.optimizer, sim.config.clone(), &[group])?;
    let mut rng = Rng::new(seed);
    let mut params = vec![ParamVector::from_slice(&sim.theta0)?];
    let mut points = Vec::with_capacity(sim.steps);
    for t in 1..=sim.steps {
        let alpha = sim.schedule.alpha(t);
        opt.set_learning_rate(alpha);
        let mut g = sim.objective.gradient(params[0].as_slice());
        for gj in g.iter_mut() {
            *gj += sim.noise_sigma * rng.normal();
        }
        opt.step(&mut params, &[ParamVector::new(g)?])?;
        let exact = sim.objective.gradient(params[0].as_slice());
        points.push(ConvergencePoint {
            step: t,
            grad_norm: exact.iter().fold(0.0, |a, &x| a + x * x).sqrt(),
            alpha,
        });
    }
    Ok(ConvergenceTrace { points })
}
