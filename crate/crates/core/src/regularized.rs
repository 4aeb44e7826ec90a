//! Entropy-regularised robust Bellman operator `T̃`, its exponential
//! transform `t̃ = exp_b ∘ T̃ ∘ log_b`, and the associated error bounds.
//!
//! `T̃(v)_s = (1/b)·log Σ_a ν_sa·exp(b·(r_sa + λ·min_{p ∈ U_sa} pᵀv))`
//!
//! The transform turns the fixed point of `T̃` into the largest point of
//! `{x ≥ 1 : x ≤ t̃(x)}`, and `t̃` is componentwise concave there.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RmdpError};
use crate::fixed_point::{banach_iterate, FixedPoint, DEFAULT_MAX_ITERATIONS};
use crate::mdp::{Policy, ValueVector};
use crate::numerics::scaled_log_sum_exp;
use crate::robust::{Rectangularity, Rmdp};

/// Largest natural-log exponent evaluated directly.
pub const EXPONENT_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationConfig {
    /// Baseline policy `ν`, strictly positive.
    pub baseline: Policy,
    /// Inverse temperature.
    pub b: f64,
}

impl RegularizationConfig {
    pub fn new(baseline: Policy, b: f64) -> Result<Self> {
        let cfg = RegularizationConfig { baseline, b };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn uniform(n_states: usize, n_actions: usize, b: f64) -> Result<Self> {
        Self::new(Policy::uniform(n_states, n_actions), b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0) || !self.b.is_finite() {
            return Err(RmdpError::Validation(format!("b = {} must be positive", self.b)));
        }
        let n_actions = self.baseline.probs.first().map_or(0, |r| r.len());
        self.baseline.validate(self.baseline.n_states(), n_actions)?;
        if let Some((s, a)) = self.baseline.probs.iter().enumerate().find_map(|(s, row)| {
            row.iter().position(|&p| !(p > 0.0)).map(|a| (s, a))
        }) {
            return Err(RmdpError::Validation(format!(
                "baseline probability at (s={s}, a={a}) must be strictly positive"
            )));
        }
        Ok(())
    }

    fn check_against(&self, rmdp: &Rmdp) -> Result<()> {
        self.validate()?;
        self.baseline.validate(rmdp.n_states(), rmdp.n_actions())
    }
}

fn overflow(exponent: f64) -> RmdpError {
    RmdpError::OverflowRisk { exponent, limit: EXPONENT_LIMIT }
}

/// `x_s = exp(b·v_s)`
pub fn exp_b(v: &[f64], b: f64) -> Result<Vec<f64>> {
    let top = v.iter().map(|&x| b * x).fold(f64::NEG_INFINITY, f64::max);
    if !(top <= EXPONENT_LIMIT) {
        return Err(overflow(top));
    }
    Ok(v.iter().map(|&x| (b * x).exp()).collect())
}

/// `v_s = log(x_s)/b`
pub fn log_b(x: &[f64], b: f64) -> Result<Vec<f64>> {
    if let Some(i) = x.iter().position(|&xi| !(xi > 0.0)) {
        return Err(RmdpError::DomainError(format!("log_b needs x > 0; x[{i}] = {}", x[i])));
    }
    Ok(x.iter().map(|&xi| xi.ln() / b).collect())
}

/// `b ≥ log|A| / (ε(1−λ))` guarantees `‖v* − ṽ*‖∞ ≤ ε`.
pub fn choose_b(epsilon: f64, discount: f64, n_actions: usize) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(RmdpError::InvalidEpsilon(epsilon));
    }
    Ok((n_actions as f64).ln() / (epsilon * (1.0 - discount)))
}

/// A copy with every reward divided by the largest one, and that factor.
/// Values and bounds scale by the same factor.
pub fn rescale_rewards(rmdp: &Rmdp) -> (Rmdp, f64) {
    let scale = rmdp.base.max_reward();
    let mut out = rmdp.clone();
    if scale > 0.0 {
        for row in &mut out.base.rewards {
            for r in row.iter_mut() {
                *r /= scale;
            }
        }
        (out, scale)
    } else {
        (out, 1.0)
    }
}

/// `T̃(v)_s = max_{π_s} Σ_a π_sa q_sa(v) − KL(π_s, ν_s)/b`. For
/// s-rectangular sets the inner minimum is taken jointly,
/// `T̃(v)_s = min_{(p_a) ∈ U_s} (1/b) log Σ_a ν_sa exp(b(r_sa + λ p_aᵀv))`.
pub fn regularized_bellman(rmdp: &Rmdp, cfg: &RegularizationConfig, v: &[f64]) -> Result<ValueVector> {
    cfg.check_against(rmdp)?;
    if let Rectangularity::S { sets } = &rmdp.uncertainty {
        let (b, lambda) = (cfg.b, rmdp.discount());
        return sets
            .iter()
            .enumerate()
            .map(|(s, set)| {
                let offsets: Vec<f64> = (0..rmdp.n_actions())
                    .map(|a| b * rmdp.base.rewards[s][a] + cfg.baseline.probs[s][a].ln())
                    .collect();
                Ok(set.log_min_sum_exp(&offsets, b * lambda, v)?.0 / b)
            })
            .collect();
    }
    let q = rmdp.robust_q(v)?.q;
    q.iter()
        .zip(&cfg.baseline.probs)
        .map(|(qs, nu)| scaled_log_sum_exp(nu, qs, cfg.b))
        .collect()
}

/// Fixed point `ṽ*` of `T̃`, by Banach iteration from zero.
pub fn regularized_fixed_point(rmdp: &Rmdp, cfg: &RegularizationConfig, tol: f64) -> Result<FixedPoint> {
    cfg.check_against(rmdp)?;
    banach_iterate(
        |v| regularized_bellman(rmdp, cfg, v),
        vec![0.0; rmdp.n_states()],
        tol,
        DEFAULT_MAX_ITERATIONS,
    )
}

/// `(min_s (T(v) − T̃(v))_s, min_s (T̃(v) + log|A|/b − T(v))_s)`; both are
/// nonnegative in exact arithmetic.
pub fn sandwich_margins(rmdp: &Rmdp, cfg: &RegularizationConfig, v: &[f64]) -> Result<(f64, f64)> {
    let t = rmdp.robust_bellman(v)?;
    let tt = regularized_bellman(rmdp, cfg, v)?;
    let gap = (rmdp.n_actions() as f64).ln() / cfg.b;
    let lower = t.iter().zip(&tt).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
    let upper = t.iter().zip(&tt).map(|(a, b)| b + gap - a).fold(f64::INFINITY, f64::min);
    Ok((lower, upper))
}

/// Exponents `b·r_sa + λ·min_{p ∈ U_sa} pᵀ log x` of the terms of `t̃`,
/// with the inner minimisers.
pub(crate) fn t_tilde_exponents(
    rmdp: &Rmdp,
    cfg: &RegularizationConfig,
    x: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)> {
    cfg.check_against(rmdp)?;
    if let Some(i) = x.iter().position(|&xi| !(xi >= 1.0)) {
        return Err(RmdpError::DomainError(format!("t̃ needs x ≥ 1; x[{i}] = {}", x[i])));
    }
    let b = cfg.b;
    let lambda = rmdp.discount();
    let log_x: Vec<f64> = x.iter().map(|xi| xi.ln()).collect();
    let guard = b * rmdp.base.max_reward() + lambda * log_x.iter().cloned().fold(0.0, f64::max);
    if guard > EXPONENT_LIMIT {
        return Err(overflow(guard));
    }
    let sets = rmdp.sa_sets()?;
    let mut exps = Vec::with_capacity(sets.len());
    let mut mins = Vec::with_capacity(sets.len());
    for (s, row) in sets.iter().enumerate() {
        let mut es = Vec::with_capacity(row.len());
        let mut ps = Vec::with_capacity(row.len());
        for (a, set) in row.iter().enumerate() {
            let (m, p) = set.inner_min(&log_x)?;
            es.push(b * rmdp.base.rewards[s][a] + lambda * m);
            ps.push(p);
        }
        exps.push(es);
        mins.push(ps);
    }
    Ok((exps, mins))
}

/// `t̃(x)_s = Σ_a ν_sa·exp_b(r_sa)·min_{p ∈ U_sa} Π_{s'} x_{s'}^{λ p_{s'}}`
pub fn t_tilde(rmdp: &Rmdp, cfg: &RegularizationConfig, x: &[f64]) -> Result<Vec<f64>> {
    if rmdp.is_s_rectangular() {
        return t_tilde_srect(rmdp, cfg, x);
    }
    let (exps, _) = t_tilde_exponents(rmdp, cfg, x)?;
    Ok(exps
        .iter()
        .zip(&cfg.baseline.probs)
        .map(|(es, nu)| es.iter().zip(nu).map(|(e, w)| w * e.exp()).sum())
        .collect())
}

/// `t̃` for s-rectangular sets,
/// `t̃(x)_s = min_{(p_a) ∈ U_s} Σ_a ν_sa·exp_b(r_sa)·Π_{s'} x_{s'}^{λ p_{as'}}`.
/// Returns the values and, per state, the joint minimiser.
pub fn t_tilde_srect_with_minimizers(
    rmdp: &Rmdp,
    cfg: &RegularizationConfig,
    x: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
    cfg.check_against(rmdp)?;
    let sets = match &rmdp.uncertainty {
        Rectangularity::S { sets } => sets,
        Rectangularity::Sa { .. } => {
            return Err(RmdpError::Unsupported("requires s-rectangular uncertainty".into()))
        }
    };
    if let Some(i) = x.iter().position(|&xi| !(xi >= 1.0)) {
        return Err(RmdpError::DomainError(format!("t̃ needs x ≥ 1; x[{i}] = {}", x[i])));
    }
    let (b, lambda) = (cfg.b, rmdp.discount());
    let log_x: Vec<f64> = x.iter().map(|xi| xi.ln()).collect();
    let guard = b * rmdp.base.max_reward() + lambda * log_x.iter().cloned().fold(0.0, f64::max);
    if guard > EXPONENT_LIMIT {
        return Err(overflow(guard));
    }
    let mut values = Vec::with_capacity(sets.len());
    let mut minimizers = Vec::with_capacity(sets.len());
    for (s, set) in sets.iter().enumerate() {
        let offsets: Vec<f64> = (0..rmdp.n_actions())
            .map(|a| b * rmdp.base.rewards[s][a] + cfg.baseline.probs[s][a].ln())
            .collect();
        let (value, p) = set.min_sum_exp(&offsets, lambda, &log_x)?;
        values.push(value);
        minimizers.push(p);
    }
    Ok((values, minimizers))
}

pub fn t_tilde_srect(rmdp: &Rmdp, cfg: &RegularizationConfig, x: &[f64]) -> Result<Vec<f64>> {
    Ok(t_tilde_srect_with_minimizers(rmdp, cfg, x)?.0)
}
