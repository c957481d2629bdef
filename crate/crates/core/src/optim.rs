//! First-order optimizers over parameter groups: SGD, heavy-ball momentum,
//! Adam and SR-Adam (Adam driven by a Stein-rule shrunk gradient).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stein::{shrink, ShrinkageConfig, ShrinkageReport};
use crate::tensor::{norm, GroupKind, ParamGroup, ParamVector};

/// Which parameter groups SR-Adam shrinks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkScope {
    ConvOnly,
    AllWeights,
    None,
}

impl ShrinkScope {
    pub fn admits(self, kind: GroupKind) -> bool {
        match self {
            ShrinkScope::ConvOnly => kind == GroupKind::ConvWeight,
            ShrinkScope::AllWeights => kind.is_weight(),
            ShrinkScope::None => false,
        }
    }
}

/// Sets `shrinkage_enabled` on every group according to `scope`.
pub fn apply_scope(groups: &[ParamGroup], scope: ShrinkScope) -> Vec<ParamGroup> {
    groups
        .iter()
        .map(|g| g.clone().with_shrinkage(scope.admits(g.kind)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Heavy-ball coefficient for the momentum optimizer.
    pub momentum: f64,
    /// SR-Adam warm-up: shrinkage starts once the step index exceeds `tau`.
    pub tau: u64,
    pub bias_correction: bool,
    pub shrinkage: ShrinkageConfig,
    pub scope: ShrinkScope,
    /// Feed the raw (decayed) gradient into `v` instead of the shrunk one.
    pub v_from_raw_gradient: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            momentum: 0.9,
            tau: 10,
            bias_correction: true,
            shrinkage: ShrinkageConfig::default(),
            scope: ShrinkScope::None,
            v_from_raw_gradient: false,
        }
    }
}

impl OptimConfig {
    pub fn adam() -> Self {
        Self::default()
    }

    /// SR-Adam defaults: no bias correction, conv-only shrinkage.
    pub fn sr_adam() -> Self {
        Self {
            bias_correction: false,
            scope: ShrinkScope::ConvOnly,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must lie in [0, 1), got {x}")))
            }
        };
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        unit("momentum", self.momentum)?;
        if !(self.eps > 0.0) {
            return Err(Error::invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        self.shrinkage.validate()
    }
}

/// Adam's moment accumulators for one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: u64,
}

impl MomentState {
    pub fn new(dim: usize) -> Result<Self> {
        Ok(Self {
            m: ParamVector::zeros(dim)?,
            v: ParamVector::zeros(dim)?,
            t: 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub group: String,
    pub report: ShrinkageReport,
    pub update_norm: f64,
}

pub fn sgd_step(theta: &ParamVector, g: &ParamVector, alpha: f64) -> Result<ParamVector> {
    theta.zip_map(g, |t, gi| t - alpha * gi)
}

/// Heavy-ball step: `buf ← mu·buf + g`, `θ ← θ − α·buf`.
pub fn momentum_step(
    theta: &ParamVector,
    g: &ParamVector,
    buf: &ParamVector,
    alpha: f64,
    mu: f64,
) -> Result<(ParamVector, ParamVector)> {
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::invalid(format!("momentum must lie in [0, 1), got {mu}")));
    }
    theta.check_dim(buf)?;
    let buf = buf.zip_map(g, |b, gi| mu * b + gi)?;
    let theta = theta.zip_map(&buf, |t, b| t - alpha * b)?;
    Ok((theta, buf))
}

fn with_weight_decay(theta: &ParamVector, g: &ParamVector, wd: f64) -> Result<ParamVector> {
    if wd == 0.0 {
        theta.check_dim(g)?;
        Ok(g.clone())
    } else {
        g.zip_map(theta, |gi, t| gi + wd * t)
    }
}

fn check_group(theta: &ParamVector, state: &MomentState, group: &ParamGroup) -> Result<()> {
    if theta.len() != group.dim {
        return Err(Error::DimensionMismatch {
            expected: group.dim,
            found: theta.len(),
        });
    }
    theta.check_dim(&state.m)?;
    theta.check_dim(&state.v)
}

/// Shared Adam tail: update moments with `g_m` (first) and `g_v` (second),
/// then take the parameter step.
fn moment_update(
    theta: &ParamVector,
    g_m: &ParamVector,
    g_v: &ParamVector,
    state: &MomentState,
    cfg: &OptimConfig,
    group: &ParamGroup,
    report: ShrinkageReport,
) -> Result<(ParamVector, MomentState, StepTrace)> {
    let t = state.t + 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let (c1, c2) = if cfg.bias_correction {
        let ti = i32::try_from(t).unwrap_or(i32::MAX);
        (1.0 - b1.powi(ti), 1.0 - b2.powi(ti))
    } else {
        (1.0, 1.0)
    };

    let n = theta.len();
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut next = Vec::with_capacity(n);
    let mut step_sq = 0.0;
    for j in 0..n {
        let mj = b1 * state.m.as_slice()[j] + (1.0 - b1) * g_m.as_slice()[j];
        let gv = g_v.as_slice()[j];
        let vj = b2 * state.v.as_slice()[j] + (1.0 - b2) * gv * gv;
        let (m_hat, v_hat) = if cfg.bias_correction {
            (mj / c1, vj / c2)
        } else {
            (mj, vj)
        };
        let delta = cfg.alpha * m_hat / (v_hat.sqrt() + cfg.eps);
        step_sq += delta * delta;
        m.push(mj);
        v.push(vj);
        next.push(theta.as_slice()[j] - delta);
    }
    let state = MomentState {
        m: ParamVector::new(m)?,
        v: ParamVector::new(v)?,
        t,
    };
    let trace = StepTrace {
        group: group.id.clone(),
        report,
        update_norm: step_sq.sqrt(),
    };
    Ok((ParamVector::new(next)?, state, trace))
}

pub fn adam_step(
    theta: &ParamVector,
    g: &ParamVector,
    state: &MomentState,
    cfg: &OptimConfig,
    group: &ParamGroup,
) -> Result<(ParamVector, MomentState, StepTrace)> {
    check_group(theta, state, group)?;
    let g = with_weight_decay(theta, g, cfg.weight_decay)?;
    moment_update(theta, &g, &g, state, cfg, group, ShrinkageReport::pass_through())
}

/// Whether SR-Adam shrinks `group` on the step that follows `state`.
pub fn shrinks_on_next_step(state: &MomentState, cfg: &OptimConfig, group: &ParamGroup) -> bool {
    state.t + 1 > cfg.tau
        && group.shrinkage_enabled
        && cfg.scope.admits(group.kind)
        && group.dim >= cfg.shrinkage.min_dim
}

pub fn sr_adam_step(
    theta: &ParamVector,
    g: &ParamVector,
    state: &MomentState,
    cfg: &OptimConfig,
    group: &ParamGroup,
) -> Result<(ParamVector, MomentState, StepTrace)> {
    check_group(theta, state, group)?;
    let g = with_weight_decay(theta, g, cfg.weight_decay)?;
    let (g_hat, report) = if shrinks_on_next_step(state, cfg, group) {
        shrink(&g, &state.m, &state.v, &cfg.shrinkage)?
    } else {
        (g.clone(), ShrinkageReport::pass_through())
    };
    let g_v = if cfg.v_from_raw_gradient { &g } else { &g_hat };
    moment_update(theta, &g_hat, g_v, state, cfg, group, report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "sgd")]
    Sgd,
    #[serde(rename = "momentum")]
    Momentum,
    #[serde(rename = "adam")]
    Adam,
    #[serde(rename = "sr-adam")]
    SrAdam,
    #[serde(rename = "sr-adam-all")]
    SrAdamAllWeights,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 5] = [
        OptimizerKind::Sgd,
        OptimizerKind::Momentum,
        OptimizerKind::Adam,
        OptimizerKind::SrAdam,
        OptimizerKind::SrAdamAllWeights,
    ];

    pub fn id(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Adam => "adam",
            OptimizerKind::SrAdam => "sr-adam",
            OptimizerKind::SrAdamAllWeights => "sr-adam-all",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "SGD",
            OptimizerKind::Momentum => "Momentum",
            OptimizerKind::Adam => "Adam",
            OptimizerKind::SrAdam => "SR-Adam",
            OptimizerKind::SrAdamAllWeights => "SR-Adam-All-Weights",
        }
    }

    /// Default hyperparameters. These are repository choices: standard Adam
    /// defaults for the adaptive methods and lr 0.01 for SGD/momentum.
    pub fn default_config(self) -> OptimConfig {
        match self {
            OptimizerKind::Sgd | OptimizerKind::Momentum => OptimConfig {
                alpha: 0.01,
                ..OptimConfig::default()
            },
            OptimizerKind::Adam => OptimConfig::adam(),
            OptimizerKind::SrAdam => OptimConfig::sr_adam(),
            OptimizerKind::SrAdamAllWeights => OptimConfig {
                scope: ShrinkScope::AllWeights,
                ..OptimConfig::sr_adam()
            },
        }
    }

    pub fn is_stein(self) -> bool {
        matches!(self, OptimizerKind::SrAdam | OptimizerKind::SrAdamAllWeights)
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::UnknownOptimizer(s.to_string()))
    }
}

#[derive(Clone, Debug)]
enum GroupState {
    Plain,
    Momentum(ParamVector),
    Moments(MomentState),
}

/// An optimizer instance owning the per-group state of one model.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    cfg: OptimConfig,
    groups: Vec<ParamGroup>,
    states: Vec<GroupState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, cfg: OptimConfig, groups: &[ParamGroup]) -> Result<Self> {
        cfg.validate()?;
        let groups = if kind.is_stein() {
            apply_scope(groups, cfg.scope)
        } else {
            groups.to_vec()
        };
        let states = groups
            .iter()
            .map(|g| {
                Ok(match kind {
                    OptimizerKind::Sgd => GroupState::Plain,
                    OptimizerKind::Momentum => GroupState::Momentum(ParamVector::zeros(g.dim)?),
                    _ => GroupState::Moments(MomentState::new(g.dim)?),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            kind,
            cfg,
            groups,
            states,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn set_learning_rate(&mut self, alpha: f64) {
        self.cfg.alpha = alpha;
    }

    pub fn moment_state(&self, group: usize) -> Option<&MomentState> {
        match self.states.get(group) {
            Some(GroupState::Moments(s)) => Some(s),
            _ => None,
        }
    }

    /// Updates `params` in place and returns one trace per group.
    pub fn step(&mut self, params: &mut [ParamVector], grads: &[ParamVector]) -> Result<Vec<StepTrace>> {
        if params.len() != self.groups.len() || grads.len() != self.groups.len() {
            return Err(Error::DimensionMismatch {
                expected: self.groups.len(),
                found: params.len().min(grads.len()),
            });
        }
        let cfg = &self.cfg;
        let mut traces = Vec::with_capacity(self.groups.len());
        for ((theta, g), (group, state)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.groups.iter().zip(self.states.iter_mut()))
        {
            match state {
                GroupState::Plain => {
                    let g = with_weight_decay(theta, g, cfg.weight_decay)?;
                    let next = sgd_step(theta, &g, cfg.alpha)?;
                    traces.push(plain_trace(group, theta, &next)?);
                    *theta = next;
                }
                GroupState::Momentum(buf) => {
                    let g = with_weight_decay(theta, g, cfg.weight_decay)?;
                    let (next, new_buf) = momentum_step(theta, &g, buf, cfg.alpha, cfg.momentum)?;
                    traces.push(plain_trace(group, theta, &next)?);
                    *theta = next;
                    *buf = new_buf;
                }
                GroupState::Moments(ms) => {
                    let (next, new_state, trace) = if self.kind.is_stein() {
                        sr_adam_step(theta, g, ms, cfg, group)?
                    } else {
                        adam_step(theta, g, ms, cfg, group)?
                    };
                    *theta = next;
                    *ms = new_state;
                    traces.push(trace);
                }
            }
        }
        Ok(traces)
    }
}

fn plain_trace(group: &ParamGroup, before: &ParamVector, after: &ParamVector) -> Result<StepTrace> {
    Ok(StepTrace {
        group: group.id.clone(),
        report: ShrinkageReport::pass_through(),
        update_norm: norm(&after.sub(before)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stein::ShrinkageConfig;
    use crate::tensor::{gauss_vec, sq_norm, Rng};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_slice(v).unwrap()
    }

    fn conv_group(dim: usize) -> ParamGroup {
        ParamGroup::new("conv", dim, GroupKind::ConvWeight)
    }

    /// SimpleCNN parameter groups, in layer order.
    fn simple_cnn_groups() -> Vec<ParamGroup> {
        vec![
            ParamGroup::new("conv2d_1.weight", 864, GroupKind::ConvWeight),
            ParamGroup::new("conv2d_1.bias", 32, GroupKind::Bias),
            ParamGroup::new("conv2d_2.weight", 18_432, GroupKind::ConvWeight),
            ParamGroup::new("conv2d_2.bias", 64, GroupKind::Bias),
            ParamGroup::new("linear_1.weight", 524_288, GroupKind::DenseWeight),
            ParamGroup::new("linear_1.bias", 128, GroupKind::Bias),
            ParamGroup::new("linear_2.weight", 1_280, GroupKind::DenseWeight),
            ParamGroup::new("linear_2.bias", 10, GroupKind::Bias),
        ]
    }

    #[test]
    fn sgd_examples() {
        let theta = pv(&[1.0, -2.0]);
        assert_eq!(sgd_step(&theta, &pv(&[0.0, 0.0]), 0.1).unwrap(), theta);
        assert_eq!(
            sgd_step(&pv(&[1.0, 1.0]), &pv(&[1.0, 1.0]), 0.5).unwrap(),
            pv(&[0.5, 0.5])
        );
        let g = pv(&[0.3, -0.7]);
        let two = sgd_step(&sgd_step(&theta, &g, 0.05).unwrap(), &g, 0.05).unwrap();
        let one = sgd_step(&theta, &g, 0.1).unwrap();
        assert!(two.max_abs_diff(&one).unwrap() < 1e-15);
        assert!(sgd_step(&theta, &pv(&[1.0]), 0.1).is_err());
    }

    #[test]
    fn momentum_degenerate_cases() {
        let theta = pv(&[1.0, 2.0, 3.0]);
        let g = pv(&[0.5, -0.5, 1.0]);
        let zero = ParamVector::zeros(3).unwrap();
        let (t0, _) = momentum_step(&theta, &g, &zero, 0.1, 0.0).unwrap();
        assert_eq!(t0, sgd_step(&theta, &g, 0.1).unwrap());
        let (t1, _) = momentum_step(&theta, &g, &zero, 0.1, 0.9).unwrap();
        assert_eq!(t1, sgd_step(&theta, &g, 0.1).unwrap());
        assert!(momentum_step(&theta, &g, &zero, 0.1, 1.0).is_err());
    }

    #[test]
    fn momentum_buffer_is_geometric_series() {
        let mu: f64 = 0.8;
        let g = pv(&[1.0, -2.0, 0.25]);
        let mut theta = ParamVector::zeros(3).unwrap();
        let mut buf = ParamVector::zeros(3).unwrap();
        for k in 1..=25 {
            (theta, buf) = momentum_step(&theta, &g, &buf, 0.01, mu).unwrap();
            let factor = (1.0 - mu.powi(k)) / (1.0 - mu);
            for (b, gi) in buf.iter().zip(g.iter()) {
                assert_relative_eq!(*b, gi * factor, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn adam_first_step_by_hand() {
        let cfg = OptimConfig {
            bias_correction: false,
            ..OptimConfig::adam()
        };
        let group = conv_group(4);
        let theta = ParamVector::zeros(4).unwrap();
        let g = ParamVector::filled(4, 1.0).unwrap();
        let (next, state, _) = adam_step(&theta, &g, &MomentState::new(4).unwrap(), &cfg, &group).unwrap();
        for j in 0..4 {
            assert_relative_eq!(state.m.as_slice()[j], 0.1, max_relative = 1e-15);
            assert_relative_eq!(state.v.as_slice()[j], 0.001, max_relative = 1e-12);
            let expected = -cfg.alpha * 0.1 / (0.001f64.sqrt() + cfg.eps);
            assert_relative_eq!(next.as_slice()[j], expected, max_relative = 1e-12);
            assert_relative_eq!(next.as_slice()[j], -3.162 * cfg.alpha, max_relative = 1e-3);
        }
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_zero_gradient_never_moves() {
        let cfg = OptimConfig::adam();
        let group = conv_group(3);
        let mut theta = pv(&[0.5, -1.0, 2.0]);
        let start = theta.clone();
        let mut state = MomentState::new(3).unwrap();
        let g = ParamVector::zeros(3).unwrap();
        for _ in 0..50 {
            let (t, s, _) = adam_step(&theta, &g, &state, &cfg, &group).unwrap();
            theta = t;
            state = s;
        }
        assert_eq!(theta, start);
    }

    #[test]
    fn bias_corrected_first_step_is_sign_step() {
        let cfg = OptimConfig::adam();
        let group = conv_group(3);
        let theta = ParamVector::zeros(3).unwrap();
        let g = pv(&[3.0, -0.2, 7.5]);
        let (next, _, _) = adam_step(&theta, &g, &MomentState::new(3).unwrap(), &cfg, &group).unwrap();
        for (t, gi) in next.iter().zip(g.iter()) {
            assert_relative_eq!(*t, -cfg.alpha * gi.signum(), max_relative = 1e-6);
        }
    }

    #[test]
    fn weight_decay_enters_the_gradient() {
        let cfg = OptimConfig {
            weight_decay: 0.5,
            bias_correction: false,
            ..OptimConfig::adam()
        };
        let group = conv_group(3);
        let theta = pv(&[2.0, -2.0, 4.0]);
        let (_, state, _) = adam_step(
            &theta,
            &ParamVector::zeros(3).unwrap(),
            &MomentState::new(3).unwrap(),
            &cfg,
            &group,
        )
        .unwrap();
        // g = 0 + 0.5 θ, m = 0.1 g
        assert_relative_eq!(state.m.as_slice()[2], 0.2, max_relative = 1e-15);
    }

    fn run_pair(
        cfg_adam: &OptimConfig,
        cfg_sr: &OptimConfig,
        group: &ParamGroup,
        grads: &[ParamVector],
    ) -> (Vec<ParamVector>, Vec<ParamVector>) {
        let dim = group.dim;
        let mut ta = ParamVector::filled(dim, 0.3).unwrap();
        let mut tb = ta.clone();
        let mut sa = MomentState::new(dim).unwrap();
        let mut sb = sa.clone();
        let (mut out_a, mut out_b) = (vec![], vec![]);
        for g in grads {
            (ta, sa, _) = adam_step(&ta, g, &sa, cfg_adam, group).unwrap();
            (tb, sb, _) = sr_adam_step(&tb, g, &sb, cfg_sr, group).unwrap();
            out_a.push(ta.clone());
            out_b.push(tb.clone());
        }
        (out_a, out_b)
    }

    fn noisy_grads(dim: usize, steps: usize, seed: u64) -> Vec<ParamVector> {
        let mut rng = Rng::new(seed);
        (0..steps)
            .map(|_| gauss_vec(&mut rng, dim, 0.5, 1.0).unwrap())
            .collect()
    }

    #[test]
    fn warm_up_steps_match_adam_bitwise() {
        let group = conv_group(20);
        let sr = OptimConfig::sr_adam();
        let adam = OptimConfig {
            bias_correction: false,
            ..OptimConfig::adam()
        };
        let grads = noisy_grads(20, sr.tau as usize, 1);
        let (a, b) = run_pair(&adam, &sr, &group, &grads);
        assert_eq!(a, b);
        // The next step shrinks and diverges.
        let grads = noisy_grads(20, sr.tau as usize + 5, 1);
        let (a, b) = run_pair(&adam, &sr, &group, &grads);
        assert_ne!(a.last(), b.last());
    }

    #[test]
    fn disabled_scope_matches_adam_for_all_steps() {
        let group = conv_group(20);
        let sr = OptimConfig {
            scope: ShrinkScope::None,
            ..OptimConfig::sr_adam()
        };
        let adam = OptimConfig {
            bias_correction: false,
            ..OptimConfig::adam()
        };
        let (a, b) = run_pair(&adam, &sr, &group, &noisy_grads(20, 200, 2));
        assert_eq!(a, b);
    }

    #[test]
    fn constant_history_gives_unit_factor() {
        // Constant gradients make the raw-moment variance estimate clamp to
        // zero, so the first shrinking step uses c = 1 and equals Adam.
        let group = conv_group(8);
        let sr = OptimConfig::sr_adam();
        let adam = OptimConfig {
            bias_correction: false,
            ..OptimConfig::adam()
        };
        let g = pv(&[0.5, -0.25, 1.0, 2.0, -1.5, 0.75, 0.1, -0.1]);
        let grads = vec![g; sr.tau as usize + 1];
        let (a, b) = run_pair(&adam, &sr, &group, &grads);
        assert_eq!(a, b);

        let mut theta = ParamVector::filled(8, 0.3).unwrap();
        let mut state = MomentState::new(8).unwrap();
        let mut last = None;
        for g in &grads {
            let (t, s, trace) = sr_adam_step(&theta, g, &state, &sr, &group).unwrap();
            theta = t;
            state = s;
            last = Some(trace);
        }
        let report = last.unwrap().report;
        assert!(report.applied);
        assert_eq!(report.sigma2_hat, 0.0);
        assert_eq!(report.c_clipped, 1.0);
    }

    #[test]
    fn small_groups_never_shrink() {
        let group = conv_group(2);
        let sr = OptimConfig {
            tau: 0,
            ..OptimConfig::sr_adam()
        };
        let state = MomentState::new(2).unwrap();
        assert!(!shrinks_on_next_step(&state, &sr, &group));
        let (_, _, trace) = sr_adam_step(&pv(&[1.0, 1.0]), &pv(&[1.0, 2.0]), &state, &sr, &group).unwrap();
        assert!(!trace.report.applied);
    }

    #[test]
    fn scope_on_table_one_layout() {
        let groups = simple_cnn_groups();
        let enabled = |scope| -> Vec<String> {
            apply_scope(&groups, scope)
                .into_iter()
                .filter(|g| g.shrinkage_enabled)
                .map(|g| g.id)
                .collect()
        };
        assert_eq!(
            enabled(ShrinkScope::ConvOnly),
            vec!["conv2d_1.weight", "conv2d_2.weight"]
        );
        assert!(enabled(ShrinkScope::None).is_empty());
        assert_eq!(
            enabled(ShrinkScope::AllWeights),
            vec![
                "conv2d_1.weight",
                "conv2d_2.weight",
                "linear_1.weight",
                "linear_2.weight"
            ]
        );
    }

    #[test]
    fn optimizer_ids_round_trip() {
        for kind in OptimizerKind::ALL {
            assert_eq!(kind.id().parse::<OptimizerKind>().unwrap(), kind);
        }
        assert!(matches!(
            "adamw".parse::<OptimizerKind>(),
            Err(Error::UnknownOptimizer(_))
        ));
    }

    #[test]
    fn every_optimizer_descends_on_a_quadratic() {
        // J(θ) = ½‖θ‖² with exact gradient θ.
        let groups = vec![ParamGroup::new("w", 16, GroupKind::ConvWeight)];
        let mut rng = Rng::new(4);
        let start = gauss_vec(&mut rng, 16, 2.0, 0.5).unwrap();
        for kind in OptimizerKind::ALL {
            let cfg = OptimConfig {
                alpha: 1e-3,
                tau: 2,
                ..kind.default_config()
            };
            let mut opt = Optimizer::new(kind, cfg, &groups).unwrap();
            let mut params = vec![start.clone()];
            let mut j = sq_norm(&params[0]) / 2.0;
            for step in 0..100 {
                let grads = params.clone();
                opt.step(&mut params, &grads).unwrap();
                let j_next = sq_norm(&params[0]) / 2.0;
                assert!(j_next < j, "{kind} failed to descend at step {step}: {j_next} >= {j}");
                j = j_next;
            }
        }
    }

    #[test]
    fn optimizer_step_counter_and_scope() {
        let groups = simple_cnn_groups()
            .into_iter()
            .map(|mut g| {
                g.dim = g.dim.min(40);
                g
            })
            .collect::<Vec<_>>();
        let cfg = OptimConfig {
            tau: 0,
            ..OptimConfig::sr_adam()
        };
        let mut opt = Optimizer::new(OptimizerKind::SrAdam, cfg, &groups).unwrap();
        let mut rng = Rng::new(9);
        let mut params: Vec<_> = groups.iter().map(|g| ParamVector::zeros(g.dim).unwrap()).collect();
        for step in 1..=5u64 {
            let grads: Vec<_> = groups
                .iter()
                .map(|g| gauss_vec(&mut rng, g.dim, 0.0, 1.0).unwrap())
                .collect();
            let traces = opt.step(&mut params, &grads).unwrap();
            assert_eq!(traces.len(), groups.len());
            for (i, trace) in traces.iter().enumerate() {
                assert_eq!(opt.moment_state(i).unwrap().t, step);
                let expect_shrink = groups[i].kind == GroupKind::ConvWeight;
                assert_eq!(trace.report.applied, expect_shrink, "group {} step {step}", trace.group);
            }
        }
    }

    proptest! {
        #[test]
        fn moments_contract_and_stay_valid(seed in any::<u64>(), dim in 3usize..24,
                                           whiten in any::<bool>(), raw_v in any::<bool>()) {
            let group = conv_group(dim);
            let cfg = OptimConfig {
                tau: 1,
                v_from_raw_gradient: raw_v,
                shrinkage: ShrinkageConfig { whiten, ..Default::default() },
                ..OptimConfig::sr_adam()
            };
            let mut rng = Rng::new(seed);
            let mut theta = gauss_vec(&mut rng, dim, 0.0, 1.0).unwrap();
            let mut state = MomentState::new(dim).unwrap();
            for step in 0..30u64 {
                let g = gauss_vec(&mut rng, dim, 0.3, 2.0).unwrap();
                let prev = state.clone();
                let (g_hat, _) = if shrinks_on_next_step(&prev, &cfg, &group) {
                    shrink(&g, &prev.m, &prev.v, &cfg.shrinkage).unwrap()
                } else {
                    (g.clone(), ShrinkageReport::pass_through())
                };
                let (t, s, trace) = sr_adam_step(&theta, &g, &prev, &cfg, &group).unwrap();
                prop_assert_eq!(s.t, step + 1);
                prop_assert!(s.v.iter().all(|&v| v >= 0.0));
                for j in 0..dim {
                    let bound = prev.m.as_slice()[j].abs().max(g_hat.as_slice()[j].abs());
                    prop_assert!(s.m.as_slice()[j].abs() <= bound * (1.0 + 1e-12));
                    // ĝ − m_prev = c (g − m_prev), c ≥ 0
                    let lhs = g_hat.as_slice()[j] - prev.m.as_slice()[j];
                    let rhs = trace.report.c_clipped * (g.as_slice()[j] - prev.m.as_slice()[j]);
                    prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
                }
                prop_assert!(trace.report.c_clipped >= 0.0);
                theta = t;
                state = s;
            }
        }
    }
}
