//! Robust MDPs with sa- or s-rectangular uncertainty.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RmdpError};
use crate::fixed_point::{banach_iterate, FixedPoint, DEFAULT_MAX_ITERATIONS};
use crate::mdp::{argmax_lowest, Mdp, Policy, ValueVector, TIE_TOL};
use crate::numerics::{dot, inf_dist, solve_lp, LinearProgram, Sense};
use crate::uncertainty::{SRectangularSet, UncertaintySet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rectangularity", rename_all = "snake_case")]
pub enum Rectangularity {
    /// One set per state-action pair, `sets[s][a]`.
    Sa { sets: Vec<Vec<UncertaintySet>> },
    /// One joint set per state.
    S { sets: Vec<SRectangularSet> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rmdp {
    pub base: Mdp,
    pub uncertainty: Rectangularity,
}

/// Per-(s,a) robust action values together with the inner minimisers.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustQ {
    pub q: Vec<Vec<f64>>,
    pub minimizers: Vec<Vec<Vec<f64>>>,
}

impl Rmdp {
    pub fn new(base: Mdp, uncertainty: Rectangularity) -> Result<Self> {
        let rmdp = Rmdp { base, uncertainty };
        rmdp.validate()?;
        Ok(rmdp)
    }

    pub fn sa(base: Mdp, sets: Vec<Vec<UncertaintySet>>) -> Result<Self> {
        Self::new(base, Rectangularity::Sa { sets })
    }

    pub fn s_rect(base: Mdp, sets: Vec<SRectangularSet>) -> Result<Self> {
        Self::new(base, Rectangularity::S { sets })
    }

    /// Every set is the nominal transition row.
    pub fn nominal(base: Mdp) -> Self {
        let sets = base
            .transitions
            .iter()
            .map(|row| {
                row.iter()
                    .map(|p| UncertaintySet::Singleton { nominal: p.clone() })
                    .collect()
            })
            .collect();
        Rmdp { base, uncertainty: Rectangularity::Sa { sets } }
    }

    /// Boxes `lf·p̂ ≤ p ≤ uf·p̂` around every nominal row.
    pub fn with_box_factors(base: Mdp, lower_factor: f64, upper_factor: f64) -> Result<Self> {
        let sets = base
            .transitions
            .iter()
            .map(|row| {
                row.iter()
                    .map(|p| UncertaintySet::box_from_nominal(p, lower_factor, upper_factor))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::sa(base, sets)
    }

    pub fn n_states(&self) -> usize {
        self.base.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.base.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.base.discount
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let (ns, na) = (self.n_states(), self.n_actions());
        match &self.uncertainty {
            Rectangularity::Sa { sets } => {
                if sets.len() != ns || sets.iter().any(|r| r.len() != na) {
                    return Err(RmdpError::Validation(format!(
                        "expected {ns}x{na} uncertainty sets"
                    )));
                }
                for (s, row) in sets.iter().enumerate() {
                    for (a, set) in row.iter().enumerate() {
                        if set.dim() != ns {
                            return Err(RmdpError::Validation(format!(
                                "uncertainty set (s={s}, a={a}) has dimension {}, expected {ns}",
                                set.dim()
                            )));
                        }
                        set.validate().map_err(|e| match e {
                            RmdpError::EmptySet => RmdpError::EmptySet,
                            other => RmdpError::Validation(format!("set (s={s}, a={a}): {other}")),
                        })?;
                    }
                }
            }
            Rectangularity::S { sets } => {
                if sets.len() != ns {
                    return Err(RmdpError::Validation(format!("expected {ns} joint sets")));
                }
                for (s, set) in sets.iter().enumerate() {
                    if set.n_states != ns || set.n_actions != na {
                        return Err(RmdpError::Validation(format!(
                            "joint set for state {s} has shape {}x{}, expected {na}x{ns}",
                            set.n_actions, set.n_states
                        )));
                    }
                    set.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn is_s_rectangular(&self) -> bool {
        matches!(self.uncertainty, Rectangularity::S { .. })
    }

    pub fn sa_sets(&self) -> Result<&Vec<Vec<UncertaintySet>>> {
        match &self.uncertainty {
            Rectangularity::Sa { sets } => Ok(sets),
            Rectangularity::S { .. } => Err(RmdpError::Unsupported(
                "operation requires sa-rectangular uncertainty".into(),
            )),
        }
    }

    /// Every sa-set written as a polytope `{p ∈ Δ : A p ≤ c}`.
    pub fn to_polyhedral(&self) -> Result<Rmdp> {
        let sets = self
            .sa_sets()?
            .iter()
            .map(|row| row.iter().map(|u| u.to_polyhedral()).collect())
            .collect();
        Ok(Rmdp { base: self.base.clone(), uncertainty: Rectangularity::Sa { sets } })
    }

    /// True when every sa-set is given in polyhedral form.
    pub fn is_polyhedral(&self) -> bool {
        match &self.uncertainty {
            Rectangularity::Sa { sets } => sets
                .iter()
                .flatten()
                .all(|u| matches!(u, UncertaintySet::Polyhedral { .. })),
            Rectangularity::S { .. } => false,
        }
    }

    /// `q[s][a] = r_sa + λ·min_{p ∈ U_sa} pᵀv` with the minimisers.
    pub fn robust_q(&self, v: &[f64]) -> Result<RobustQ> {
        let sets = self.sa_sets()?;
        let lambda = self.discount();
        let mut q = Vec::with_capacity(self.n_states());
        let mut minimizers = Vec::with_capacity(self.n_states());
        for (s, row) in sets.iter().enumerate() {
            let mut qs = Vec::with_capacity(row.len());
            let mut ps = Vec::with_capacity(row.len());
            for (a, set) in row.iter().enumerate() {
                let (value, p) = set.inner_min(v)?;
                qs.push(self.base.rewards[s][a] + lambda * value);
                ps.push(p);
            }
            q.push(qs);
            minimizers.push(ps);
        }
        Ok(RobustQ { q, minimizers })
    }

    pub fn robust_bellman(&self, v: &[f64]) -> Result<ValueVector> {
        match &self.uncertainty {
            Rectangularity::Sa { .. } => Ok(self
                .robust_q(v)?
                .q
                .into_iter()
                .map(|q| q.into_iter().fold(f64::NEG_INFINITY, f64::max))
                .collect()),
            Rectangularity::S { .. } => Ok(self.s_rect_robust_bellman(v)?.0),
        }
    }

    /// `Σ_a π_sa·min_p (r_sa + λpᵀv)`; for s-rectangular sets the
    /// minimisation is joint over the actions.
    pub fn robust_bellman_policy(&self, policy: &Policy, v: &[f64]) -> Result<ValueVector> {
        policy.validate(self.n_states(), self.n_actions())?;
        match &self.uncertainty {
            Rectangularity::Sa { .. } => Ok(self
                .robust_q(v)?
                .q
                .iter()
                .zip(&policy.probs)
                .map(|(q, pi)| dot(q, pi))
                .collect()),
            Rectangularity::S { sets } => sets
                .iter()
                .enumerate()
                .map(|(s, set)| {
                    let pi = &policy.probs[s];
                    let (inner, _) = set.inner_min(pi, v)?;
                    Ok(dot(pi, &self.base.rewards[s]) + self.discount() * inner)
                })
                .collect(),
        }
    }

    pub fn optimistic_bellman(&self, v: &[f64]) -> Result<ValueVector> {
        let sets = self.sa_sets()?;
        let lambda = self.discount();
        sets.iter()
            .enumerate()
            .map(|(s, row)| {
                row.iter().enumerate().try_fold(f64::NEG_INFINITY, |best, (a, set)| {
                    let (value, _) = set.inner_max(v)?;
                    Ok(best.max(self.base.rewards[s][a] + lambda * value))
                })
            })
            .collect()
    }

    /// Deterministic robust greedy policy, lowest index on ties. For
    /// s-rectangular sets this is the (possibly randomised) maximiser of
    /// the per-state saddle problem.
    pub fn robust_greedy_policy(&self, v: &[f64]) -> Result<Policy> {
        match &self.uncertainty {
            Rectangularity::Sa { .. } => {
                let actions: Vec<usize> = self.robust_q(v)?.q.iter().map(|q| argmax_lowest(q)).collect();
                Ok(Policy::deterministic(&actions, self.n_actions()))
            }
            Rectangularity::S { .. } => Ok(self.s_rect_robust_bellman(v)?.1),
        }
    }

    pub fn robust_value_iteration(&self, tol: f64) -> Result<FixedPoint> {
        self.robust_value_iteration_from(None, tol, DEFAULT_MAX_ITERATIONS)
    }

    pub fn robust_value_iteration_from(
        &self,
        v0: Option<&[f64]>,
        tol: f64,
        max_iterations: usize,
    ) -> Result<FixedPoint> {
        let start = v0.map_or_else(|| vec![0.0; self.n_states()], |v| v.to_vec());
        banach_iterate(|v| self.robust_bellman(v), start, tol, max_iterations)
    }

    /// Fixed point of the robust evaluation operator of `policy`.
    pub fn robust_policy_evaluation(&self, policy: &Policy, tol: f64) -> Result<FixedPoint> {
        self.robust_policy_evaluation_from(policy, None, tol)
    }

    fn robust_policy_evaluation_from(
        &self,
        policy: &Policy,
        v0: Option<&[f64]>,
        tol: f64,
    ) -> Result<FixedPoint> {
        policy.validate(self.n_states(), self.n_actions())?;
        let start = v0.map_or_else(|| vec![0.0; self.n_states()], |v| v.to_vec());
        banach_iterate(
            |v| self.robust_bellman_policy(policy, v),
            start,
            tol,
            DEFAULT_MAX_ITERATIONS,
        )
    }

    /// Robust policy iteration over deterministic policies. The current
    /// action is kept unless another is strictly better, and the loop ends
    /// once the policy repeats with robust Bellman residual at most `tol`.
    pub fn robust_policy_iteration(&self, tol: f64) -> Result<(Policy, FixedPoint)> {
        self.sa_sets()?;
        let (ns, na) = (self.n_states(), self.n_actions());
        let cap = (na as u64)
            .checked_pow(ns as u32)
            .map_or(10_000, |c| (c as usize).saturating_add(1).min(10_000))
            + 64;
        let mut eval_tol = tol;
        let mut actions = self.robust_greedy_policy(&vec![0.0; ns])?.actions();
        let mut v: Option<Vec<f64>> = None;
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        for _ in 0..cap {
            let policy = Policy::deterministic(&actions, na);
            let fp = self.robust_policy_evaluation_from(&policy, v.as_deref(), eval_tol)?;
            iterations += fp.iterations;
            let q = self.robust_q(&fp.value)?.q;
            let next: Vec<usize> = q
                .iter()
                .zip(&actions)
                .map(|(qs, &a)| {
                    let best = argmax_lowest(qs);
                    if qs[best] > qs[a] + TIE_TOL * qs[best].abs().max(1.0) {
                        best
                    } else {
                        a
                    }
                })
                .collect();
            let tv: Vec<f64> = q.iter().map(|qs| qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
            residual = inf_dist(&tv, &fp.value);
            if next == actions {
                if residual <= tol {
                    let report = FixedPoint { value: fp.value, iterations, residual };
                    return Ok((policy, report));
                }
                eval_tol = (eval_tol * 0.1).max(f64::EPSILON);
            }
            v = Some(fp.value);
            actions = next;
        }
        Err(RmdpError::IterationLimit { limit: cap, residual })
    }

    /// Per-(s,a) minimiser of the inner problem at the robust value of `policy`.
    pub fn worst_case_transitions(&self, policy: &Policy, tol: f64) -> Result<Vec<Vec<Vec<f64>>>> {
        let v = self.robust_policy_evaluation(policy, tol)?.value;
        Ok(self.robust_q(&v)?.minimizers)
    }

    /// Per-state value and maximising randomised policy of
    /// `max_π min_{(p_a) ∈ U_s} Σ_a π_a (r_sa + λ p_aᵀv)`, one LP per state
    /// after dualising the inner minimisation.
    pub fn s_rect_robust_bellman(&self, v: &[f64]) -> Result<(ValueVector, Policy)> {
        let sets = match &self.uncertainty {
            Rectangularity::S { sets } => sets,
            Rectangularity::Sa { .. } => {
                return Err(RmdpError::Unsupported("requires s-rectangular uncertainty".into()))
            }
        };
        let (ns, na) = (self.n_states(), self.n_actions());
        let lambda = self.discount();
        let mut values = Vec::with_capacity(ns);
        let mut probs = Vec::with_capacity(ns);
        for (s, set) in sets.iter().enumerate() {
            let m = set.a.len();
            // Variables: π (na), γ (m), θ (na).
            let n_vars = 2 * na + m;
            let mut cost = vec![0.0; n_vars];
            cost[..na].copy_from_slice(&self.base.rewards[s]);
            for (i, &c) in set.c.iter().enumerate() {
                cost[na + i] = -c;
            }
            for a in 0..na {
                cost[na + m + a] = 1.0;
            }
            let mut lp = LinearProgram::new(Sense::Maximize, cost);
            for a in 0..na {
                lp.set_bounds(na + m + a, f64::NEG_INFINITY, f64::INFINITY);
            }
            let mut simplex = vec![0.0; n_vars];
            simplex[..na].iter_mut().for_each(|x| *x = 1.0);
            lp.add_eq(simplex, 1.0);
            for a in 0..na {
                for sp in 0..ns {
                    let j = a * ns + sp;
                    let mut row = vec![0.0; n_vars];
                    row[a] = -lambda * v[sp];
                    for i in 0..m {
                        row[na + i] = -set.a[i][j];
                    }
                    row[na + m + a] = 1.0;
                    lp.add_ub(row, 0.0);
                }
            }
            let sol = solve_lp(&lp)?;
            if !sol.is_optimal() {
                return Err(RmdpError::EmptySet);
            }
            values.push(sol.value);
            let pi: Vec<f64> = sol.point[..na].iter().map(|x| x.max(0.0)).collect();
            let total: f64 = pi.iter().sum();
            probs.push(pi.into_iter().map(|x| x / total).collect());
        }
        Ok((values, Policy { probs }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn example_mdp() -> Mdp {
        Mdp::new(
            vec![vec![2.0, 11.0, 10.0], vec![1.0, 1.0, 1.0]],
            vec![
                vec![vec![0.1, 0.9], vec![0.25, 0.75], vec![0.4, 0.6]],
                vec![vec![0.5, 0.5]; 3],
            ],
            0.8,
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    fn example() -> Rmdp {
        Rmdp::with_box_factors(example_mdp(), 0.95, 1.05).unwrap()
    }

    #[test]
    fn nominal_sets_reduce_to_mdp() {
        let m = example_mdp();
        let r = Rmdp::nominal(m.clone());
        let v = [10.5, 0.85];
        assert!(inf_dist(&r.robust_bellman(&v).unwrap(), &m.bellman(&v)) < 1e-12);
        assert!(inf_dist(&r.optimistic_bellman(&v).unwrap(), &m.bellman(&v)) < 1e-12);
        let (pi, fp) = r.robust_policy_iteration(1e-10).unwrap();
        let (pi2, v2, _) = m.policy_iteration().unwrap();
        assert_eq!(pi, pi2);
        assert!(inf_dist(&fp.value, &v2) < 1e-8);
    }

    #[test]
    fn robust_bellman_at_zero_is_max_reward() {
        assert_eq!(example().robust_bellman(&[0.0, 0.0]).unwrap(), vec![11.0, 1.0]);
    }

    #[test]
    fn rvi_matches_rpi() {
        let r = example();
        let vi = r.robust_value_iteration(1e-10).unwrap();
        let (pi, fp) = r.robust_policy_iteration(1e-10).unwrap();
        assert!(inf_dist(&vi.value, &fp.value) <= 1e-8);
        let eval = r.robust_policy_evaluation(&pi, 1e-10).unwrap();
        assert!(inf_dist(&eval.value, &vi.value) <= 1e-8);
    }

    #[test]
    fn worst_case_kernel_reproduces_robust_value() {
        let r = example();
        let (pi, fp) = r.robust_policy_iteration(1e-11).unwrap();
        let kernel = r.worst_case_transitions(&pi, 1e-11).unwrap();
        let mut m = r.base.clone();
        m.transitions = kernel;
        let v = m.policy_evaluation(&pi).unwrap();
        assert!(inf_dist(&v, &fp.value) <= 1e-6);
    }

    #[test]
    fn s_rect_product_matches_sa() {
        let r = example();
        let sets = r
            .sa_sets()
            .unwrap()
            .iter()
            .map(|row| SRectangularSet::product(row).unwrap())
            .collect();
        let srect = Rmdp::s_rect(r.base.clone(), sets).unwrap();
        for v in [[10.5, 0.85], [0.5, 4.0], [0.0, 0.0]] {
            let a = r.robust_bellman(&v).unwrap();
            let b = srect.robust_bellman(&v).unwrap();
            assert!(inf_dist(&a, &b) < 1e-9, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn full_simplex_worst_case_is_argmin_unit_vector() {
        let m = example_mdp();
        let r = Rmdp::with_box_factors(m, 0.0, f64::INFINITY).unwrap();
        let pi = Policy::uniform(2, 3);
        let kernel = r.worst_case_transitions(&pi, 1e-10).unwrap();
        let v = r.robust_policy_evaluation(&pi, 1e-10).unwrap().value;
        let target = if v[0] <= v[1] { [1.0, 0.0] } else { [0.0, 1.0] };
        for row in kernel.iter().flatten() {
            assert_eq!(row.as_slice(), &target);
        }
    }
}
