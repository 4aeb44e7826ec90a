//! Curvature probes: sample one component of an operator along a segment
//! and classify the samples as convex, concave, affine or neither.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RmdpError};
use crate::mdp::Policy;
use crate::probes;
use crate::regularized::{regularized_bellman, t_tilde, RegularizationConfig};
use crate::robust::Rmdp;

/// Default relative tolerance of the midpoint test.
pub const DEFAULT_CURVATURE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub theta: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature {
    Convex,
    Concave,
    Affine,
    Neither,
}

impl Curvature {
    pub fn as_str(self) -> &'static str {
        match self {
            Curvature::Convex => "convex",
            Curvature::Concave => "concave",
            Curvature::Affine => "affine",
            Curvature::Neither => "neither",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub verdict: Curvature,
    /// Largest `value(mid) − chord(mid)` over consecutive triples.
    pub convex_violation: f64,
    /// Largest `chord(mid) − value(mid)` over consecutive triples.
    pub concave_violation: f64,
}

/// Midpoint test on every consecutive triple of samples (sorted by `θ`).
/// A violation counts when it exceeds `tol·max(1, max |value|)`.
pub fn classify_curvature(samples: &[ProbeSample], tol: f64) -> Result<CurvatureReport> {
    if samples.len() < 3 {
        return Err(RmdpError::TooFewSamples(samples.len()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    let scale = sorted.iter().fold(1.0f64, |m, s| m.max(s.value.abs()));
    let (mut convex_violation, mut concave_violation) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for w in sorted.windows(3) {
        let (l, m, r) = (w[0], w[1], w[2]);
        let span = r.theta - l.theta;
        if !(span > 0.0) {
            continue;
        }
        let chord = l.value + (r.value - l.value) * (m.theta - l.theta) / span;
        convex_violation = convex_violation.max(m.value - chord);
        concave_violation = concave_violation.max(chord - m.value);
    }
    let limit = tol * scale;
    let verdict = match (convex_violation > limit, concave_violation > limit) {
        (false, false) => Curvature::Affine,
        (false, true) => Curvature::Convex,
        (true, false) => Curvature::Concave,
        (true, true) => Curvature::Neither,
    };
    Ok(CurvatureReport { verdict, convex_violation, concave_violation })
}

/// Samples `F(θ v₁ + (1−θ) v₂)_s` at `n` equally spaced `θ ∈ [0, 1]`.
pub fn segment_probe<F>(mut op: F, s: usize, v1: &[f64], v2: &[f64], n: usize) -> Result<Vec<ProbeSample>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if v1.len() != v2.len() {
        return Err(RmdpError::DomainError("segment endpoints differ in length".into()));
    }
    if s >= v1.len() {
        return Err(RmdpError::DomainError(format!("component {s} out of range for {} states", v1.len())));
    }
    if n < 2 {
        return Err(RmdpError::DomainError(format!("a segment probe needs at least 2 samples, got {n}")));
    }
    (0..n)
        .map(|k| {
            let theta = k as f64 / (n - 1) as f64;
            let v: Vec<f64> = v1.iter().zip(v2).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
            Ok(ProbeSample { theta, value: op(&v)?[s] })
        })
        .collect()
}

/// Operators available to the curvature probes, each with its own
/// parameters. Baselines are uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "operator", rename_all = "kebab-case")]
pub enum ProbeOperator {
    /// Robust Bellman operator `T`.
    Robust,
    /// Optimistic Bellman operator with `max` over each set.
    Optimistic,
    /// KL-regularised `T̃`.
    Regularized { b: f64 },
    /// `t̃ = exp_b ∘ T̃ ∘ log_b`, on `x ≥ 1`.
    Transformed { b: f64 },
    /// `t = exp_b ∘ T ∘ log_b`, on `x ≥ 1`.
    Exponentiated { b: f64 },
    /// ℓ2-regularised `T̃`.
    L2 { b: f64 },
    /// `φ_b⁻¹ ∘ T̃_ℓ2 ∘ φ_b`, on `v ≥ 0`.
    L2Inner { b: f64, b_phi: f64 },
    /// `φ_b ∘ T̃_ℓ2 ∘ φ_b⁻¹`, on `x ≥ 0`.
    L2Outer { b: f64, b_phi: f64 },
    /// KL regularisation on the transitions.
    KlTransitions { b: f64 },
    /// The same operator in `x = exp_{−b}(v)`, on `0 < x ≤ 1`.
    KlTransitionsExp { b: f64 },
}

impl ProbeOperator {
    /// Accepted names: `T`, `T-opt`, `T-tilde`, `t-tilde`, `t`, `T-l2`,
    /// `t-prime`, `t-double-prime`, `T-kl`, `T-kl-exp`.
    pub fn from_name(name: &str, b: f64, b_phi: f64) -> Result<Self> {
        Ok(match name {
            "T" => ProbeOperator::Robust,
            "T-opt" => ProbeOperator::Optimistic,
            "T-tilde" => ProbeOperator::Regularized { b },
            "t-tilde" => ProbeOperator::Transformed { b },
            "t" => ProbeOperator::Exponentiated { b },
            "T-l2" => ProbeOperator::L2 { b },
            "t-prime" => ProbeOperator::L2Inner { b, b_phi },
            "t-double-prime" => ProbeOperator::L2Outer { b, b_phi },
            "T-kl" => ProbeOperator::KlTransitions { b },
            "T-kl-exp" => ProbeOperator::KlTransitionsExp { b },
            other => return Err(RmdpError::Validation(format!("unknown probe operator '{other}'"))),
        })
    }

    pub fn names() -> &'static [&'static str] {
        &["T", "T-opt", "T-tilde", "t-tilde", "t", "T-l2", "t-prime", "t-double-prime", "T-kl", "T-kl-exp"]
    }

    /// Whether the operator acts on transformed vectors rather than values.
    pub fn is_transformed(&self) -> bool {
        matches!(
            self,
            ProbeOperator::Transformed { .. }
                | ProbeOperator::Exponentiated { .. }
                | ProbeOperator::L2Inner { .. }
                | ProbeOperator::L2Outer { .. }
                | ProbeOperator::KlTransitionsExp { .. }
        )
    }

    /// Maps value-space endpoints into the operator's domain.
    pub fn transform_point(&self, v: &[f64]) -> Result<Vec<f64>> {
        match *self {
            ProbeOperator::Transformed { b } | ProbeOperator::Exponentiated { b } => {
                crate::regularized::exp_b(v, b)
            }
            ProbeOperator::L2Inner { .. } => Ok(v.to_vec()),
            ProbeOperator::L2Outer { b_phi, .. } => probes::phi_b(v, b_phi),
            ProbeOperator::KlTransitionsExp { b } => Ok(v.iter().map(|x| (-b * x).exp()).collect()),
            _ => Ok(v.to_vec()),
        }
    }

    pub fn apply(&self, rmdp: &Rmdp, x: &[f64]) -> Result<Vec<f64>> {
        let uniform = || Policy::uniform(rmdp.n_states(), rmdp.n_actions());
        let cfg = |b: f64| RegularizationConfig::uniform(rmdp.n_states(), rmdp.n_actions(), b);
        match *self {
            ProbeOperator::Robust => rmdp.robust_bellman(x),
            ProbeOperator::Optimistic => rmdp.optimistic_bellman(x),
            ProbeOperator::Regularized { b } => regularized_bellman(rmdp, &cfg(b)?, x),
            ProbeOperator::Transformed { b } => t_tilde(rmdp, &cfg(b)?, x),
            ProbeOperator::Exponentiated { b } => probes::t_operator(rmdp, b, x),
            ProbeOperator::L2 { b } => probes::l2_regularized_bellman(rmdp, &uniform(), b, x),
            ProbeOperator::L2Inner { b, b_phi } => probes::l2_inner_substitution(rmdp, &uniform(), b, b_phi, x),
            ProbeOperator::L2Outer { b, b_phi } => probes::l2_outer_substitution(rmdp, &uniform(), b, b_phi, x),
            ProbeOperator::KlTransitions { b } => probes::kl_transition_regularized_bellman(rmdp, b, x, 1e-12),
            ProbeOperator::KlTransitionsExp { b } => {
                if let Some(i) = x.iter().position(|&v| !(v > 0.0 && v <= 1.0)) {
                    return Err(RmdpError::DomainError(format!("needs 0 < x ≤ 1; x[{i}] = {}", x[i])));
                }
                let v: Vec<f64> = x.iter().map(|xi| -xi.ln() / b).collect();
                let t = probes::kl_transition_regularized_bellman(rmdp, b, &v, 1e-12)?;
                Ok(t.iter().map(|ti| (-b * ti).exp()).collect())
            }
        }
    }
}

/// Probes `op` along the segment between `v1` and `v2` given in the
/// operator's own domain.
pub fn probe_operator(
    rmdp: &Rmdp,
    op: &ProbeOperator,
    s: usize,
    v1: &[f64],
    v2: &[f64],
    n: usize,
) -> Result<Vec<ProbeSample>> {
    segment_probe(|x| op.apply(rmdp, x), s, v1, v2, n)
}
