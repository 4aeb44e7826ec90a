//! Nominal discounted MDPs: Bellman operators, value and policy iteration,
//! exact policy evaluation, and the primal/dual linear programs.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RmdpError};
use crate::fixed_point::{banach_iterate, FixedPoint, DEFAULT_MAX_ITERATIONS};
use crate::numerics::{dot, solve_linear_system, LinearProgram, Sense};

/// Tolerance for probability vectors summing to one.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Relative tolerance used to detect ties between action values.
pub const TIE_TOL: f64 = 1e-12;

pub type ValueVector = Vec<f64>;

/// Checks that `p` is a probability vector; `what` names it in the error.
pub fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if let Some(i) = p.iter().position(|&x| !x.is_finite() || x < 0.0) {
        return Err(RmdpError::Validation(format!(
            "{what}: entry {i} is {} (must be finite and nonnegative)",
            p[i]
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(RmdpError::Validation(format!("{what}: sums to {total}, not 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `rewards[s][a]`
    pub rewards: Vec<Vec<f64>>,
    /// `transitions[s][a][s']`
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
    pub initial: Vec<f64>,
}

/// A stationary randomised policy, `probs[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub probs: Vec<Vec<f64>>,
}

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy { probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states] }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| (0..n_actions).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
            .collect();
        Policy { probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    /// The action with the largest probability in each state (lowest index on ties).
    pub fn actions(&self) -> Vec<usize> {
        self.probs
            .iter()
            .map(|row| {
                let mut best = 0;
                for (a, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().all(|row| row.iter().all(|&p| p == 0.0 || p == 1.0))
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.probs.len() != n_states {
            return Err(RmdpError::Validation(format!(
                "policy has {} states, model has {n_states}",
                self.probs.len()
            )));
        }
        for (s, row) in self.probs.iter().enumerate() {
            if row.len() != n_actions {
                return Err(RmdpError::Validation(format!(
                    "policy row {s} has {} actions, model has {n_actions}",
                    row.len()
                )));
            }
            check_simplex(row, &format!("policy at state {s}"))?;
        }
        Ok(())
    }
}

/// Index of the largest entry; entries within `TIE_TOL·scale` of the
/// maximum count as ties and the lowest index wins.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tie = TIE_TOL * max.abs().max(1.0);
    values.iter().position(|&q| q >= max - tie).unwrap_or(0)
}

impl Mdp {
    pub fn new(
        rewards: Vec<Vec<f64>>,
        transitions: Vec<Vec<Vec<f64>>>,
        discount: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let n_states = rewards.len();
        let n_actions = rewards.first().map_or(0, |r| r.len());
        let mdp = Mdp { n_states, n_actions, rewards, transitions, discount, initial };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(RmdpError::Validation("model needs at least one state and one action".into()));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(RmdpError::Validation(format!(
                "discount {} must lie in (0, 1)",
                self.discount
            )));
        }
        if self.rewards.len() != ns || self.transitions.len() != ns || self.initial.len() != ns {
            return Err(RmdpError::Validation("state dimensions disagree".into()));
        }
        for s in 0..ns {
            if self.rewards[s].len() != na || self.transitions[s].len() != na {
                return Err(RmdpError::Validation(format!("state {s}: action dimensions disagree")));
            }
            for a in 0..na {
                let r = self.rewards[s][a];
                if !r.is_finite() || r < 0.0 {
                    return Err(RmdpError::Validation(format!(
                        "reward at (s={s}, a={a}) is {r}; rewards must be finite and nonnegative"
                    )));
                }
                let p = &self.transitions[s][a];
                if p.len() != ns {
                    return Err(RmdpError::Validation(format!(
                        "transition row (s={s}, a={a}) has {} entries, expected {ns}",
                        p.len()
                    )));
                }
                check_simplex(p, &format!("transition row (s={s}, a={a})"))?;
            }
        }
        check_simplex(&self.initial, "initial distribution")
    }

    pub fn max_reward(&self) -> f64 {
        self.rewards.iter().flatten().cloned().fold(0.0, f64::max)
    }

    /// `q[s][a] = r_sa + λ·P_saᵀv`
    pub fn q_values(&self, v: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| self.rewards[s][a] + self.discount * dot(&self.transitions[s][a], v))
                    .collect()
            })
            .collect()
    }

    pub fn bellman(&self, v: &[f64]) -> ValueVector {
        self.q_values(v)
            .into_iter()
            .map(|q| q.into_iter().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    pub fn bellman_policy(&self, policy: &Policy, v: &[f64]) -> ValueVector {
        self.q_values(v)
            .iter()
            .zip(&policy.probs)
            .map(|(q, pi)| dot(q, pi))
            .collect()
    }

    pub fn greedy_policy(&self, v: &[f64]) -> Policy {
        let actions: Vec<usize> = self.q_values(v).iter().map(|q| argmax_lowest(q)).collect();
        Policy::deterministic(&actions, self.n_actions)
    }

    /// Value iteration from `v0` (zero when `None`) to Bellman residual `tol`.
    pub fn value_iteration(&self, v0: Option<&[f64]>, tol: f64) -> Result<FixedPoint> {
        self.value_iteration_capped(v0, tol, DEFAULT_MAX_ITERATIONS)
    }

    pub fn value_iteration_capped(
        &self,
        v0: Option<&[f64]>,
        tol: f64,
        max_iterations: usize,
    ) -> Result<FixedPoint> {
        let start = v0.map_or_else(|| vec![0.0; self.n_states], |v| v.to_vec());
        banach_iterate(|v| Ok(self.bellman(v)), start, tol, max_iterations)
    }

    /// `P_π[s][s'] = Σ_a π_sa P_sas'` and `r_π[s] = Σ_a π_sa r_sa`.
    pub fn policy_kernel(&self, policy: &Policy) -> (Vec<Vec<f64>>, Vec<f64>) {
        let ns = self.n_states;
        let mut p = vec![vec![0.0; ns]; ns];
        let mut r = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..self.n_actions {
                let w = policy.probs[s][a];
                if w == 0.0 {
                    continue;
                }
                r[s] += w * self.rewards[s][a];
                for (t, &pt) in self.transitions[s][a].iter().enumerate() {
                    p[s][t] += w * pt;
                }
            }
        }
        (p, r)
    }

    /// Solves `(I − λP_π) v = r_π`.
    pub fn policy_evaluation(&self, policy: &Policy) -> Result<ValueVector> {
        policy.validate(self.n_states, self.n_actions)?;
        let (p, r) = self.policy_kernel(policy);
        let a: Vec<Vec<f64>> = (0..self.n_states)
            .map(|s| {
                (0..self.n_states)
                    .map(|t| (if s == t { 1.0 } else { 0.0 }) - self.discount * p[s][t])
                    .collect()
            })
            .collect();
        solve_linear_system(&a, &r)
    }

    /// Howard's policy iteration, started from the greedy policy at zero.
    pub fn policy_iteration(&self) -> Result<(Policy, ValueVector, usize)> {
        let cap = (self.n_actions as u64)
            .checked_pow(self.n_states as u32)
            .map_or(usize::MAX, |c| c.saturating_add(1) as usize);
        let mut actions = self.greedy_policy(&vec![0.0; self.n_states]).actions();
        for k in 1..=cap {
            let policy = Policy::deterministic(&actions, self.n_actions);
            let v = self.policy_evaluation(&policy)?;
            let next = self.improve(&actions, &v);
            if next == actions {
                return Ok((policy, v, k));
            }
            actions = next;
        }
        Err(RmdpError::IterationLimit { limit: cap, residual: f64::NAN })
    }

    /// Greedy improvement that keeps the current action unless another is
    /// strictly better.
    fn improve(&self, current: &[usize], v: &[f64]) -> Vec<usize> {
        self.q_values(v)
            .iter()
            .zip(current)
            .map(|(q, &a)| {
                let best = argmax_lowest(q);
                let tie = TIE_TOL * q[best].abs().max(1.0);
                if q[best] > q[a] + tie {
                    best
                } else {
                    a
                }
            })
            .collect()
    }

    /// `R(π) = αᵀ v^π`
    pub fn return_of(&self, policy: &Policy) -> Result<f64> {
        Ok(dot(&self.initial, &self.policy_evaluation(policy)?))
    }

    /// `min αᵀv  s.t.  v_s − λ P_saᵀ v ≥ r_sa` over free `v`.
    pub fn build_primal_lp(&self) -> LinearProgram {
        let ns = self.n_states;
        let mut lp = LinearProgram::new(Sense::Minimize, self.initial.clone());
        for s in 0..ns {
            lp.set_bounds(s, f64::NEG_INFINITY, f64::INFINITY);
        }
        for s in 0..ns {
            for a in 0..self.n_actions {
                let row = (0..ns)
                    .map(|t| (if s == t { 1.0 } else { 0.0 }) - self.discount * self.transitions[s][a][t])
                    .collect();
                lp.add_lb(row, self.rewards[s][a]);
            }
        }
        lp
    }

    /// Occupancy-measure LP over `μ_sa ≥ 0`, indexed `s·|A| + a`:
    /// `max Σ μ_sa r_sa  s.t.  Σ_a μ_sa − λ Σ_{s',a'} P_{s'a's} μ_{s'a'} = α_s`.
    pub fn build_dual_lp(&self) -> LinearProgram {
        let (ns, na) = (self.n_states, self.n_actions);
        let cost = self.rewards.iter().flatten().cloned().collect();
        let mut lp = LinearProgram::new(Sense::Maximize, cost);
        for s in 0..ns {
            let mut row = vec![0.0; ns * na];
            for sp in 0..ns {
                for a in 0..na {
                    let idx = sp * na + a;
                    if sp == s {
                        row[idx] += 1.0;
                    }
                    row[idx] -= self.discount * self.transitions[sp][a][s];
                }
            }
            lp.add_eq(row, self.initial[s]);
        }
        lp
    }

    /// Discounted state-action occupancy `μ[s][a]` of `policy` from the
    /// initial distribution.
    pub fn occupancy_of_policy(&self, policy: &Policy) -> Result<Vec<Vec<f64>>> {
        policy.validate(self.n_states, self.n_actions)?;
        let (p, _) = self.policy_kernel(policy);
        let ns = self.n_states;
        // (I − λP_πᵀ) d = α
        let a: Vec<Vec<f64>> = (0..ns)
            .map(|s| {
                (0..ns)
                    .map(|t| (if s == t { 1.0 } else { 0.0 }) - self.discount * p[t][s])
                    .collect()
            })
            .collect();
        let d = solve_linear_system(&a, &self.initial)?;
        Ok(d
            .iter()
            .zip(&policy.probs)
            .map(|(&ds, pi)| pi.iter().map(|&w| ds.max(0.0) * w).collect())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{inf_dist, solve_lp};

    fn example() -> Mdp {
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

    fn single(r: f64) -> Mdp {
        Mdp::new(vec![vec![r]], vec![vec![vec![1.0]]], 0.8, vec![1.0]).unwrap()
    }

    #[test]
    fn bellman_at_zero_is_max_reward() {
        assert_eq!(example().bellman(&[0.0, 0.0]), vec![11.0, 1.0]);
    }

    #[test]
    fn bellman_matches_enumeration() {
        let m = example();
        let v = [10.5, 0.85];
        let t = m.bellman(&v);
        for s in 0..2 {
            let best = (0..3)
                .map(|a| m.rewards[s][a] + 0.8 * (m.transitions[s][a][0] * v[0] + m.transitions[s][a][1] * v[1]))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((t[s] - best).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_at_zero_breaks_ties_low() {
        assert_eq!(example().greedy_policy(&[0.0, 0.0]).actions(), vec![1, 0]);
    }

    #[test]
    fn uniform_policy_at_zero_is_mean_reward() {
        let m = example();
        let t = m.bellman_policy(&Policy::uniform(2, 3), &[0.0, 0.0]);
        assert!((t[0] - 23.0 / 3.0).abs() < 1e-12 && (t[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_series() {
        let m = single(1.0);
        let vi = m.value_iteration(None, 1e-12).unwrap();
        assert!((vi.value[0] - 5.0).abs() < 1e-10);
        assert!((m.return_of(&Policy::uniform(1, 1)).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn vi_matches_pi_on_example() {
        let m = example();
        let vi = m.value_iteration(None, 1e-10).unwrap();
        let (pi, v, _) = m.policy_iteration().unwrap();
        assert!(inf_dist(&vi.value, &v) <= 1e-8);
        assert!(inf_dist(&m.bellman(&v), &v) <= 1e-9);
        assert!(inf_dist(&m.policy_evaluation(&pi).unwrap(), &v) <= 1e-12);
    }

    #[test]
    fn zero_rewards_give_zero_value() {
        let mut m = example();
        m.rewards = vec![vec![0.0; 3]; 2];
        assert_eq!(m.value_iteration(None, 1e-10).unwrap().value, vec![0.0, 0.0]);
        let (_, v, _) = m.policy_iteration().unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn lp_duality_on_example() {
        let m = example();
        let primal = solve_lp(&m.build_primal_lp()).unwrap();
        let dual = solve_lp(&m.build_dual_lp()).unwrap();
        let vi = m.value_iteration(None, 1e-10).unwrap();
        let target = dot(&m.initial, &vi.value);
        assert!((primal.value - target).abs() <= 1e-8);
        assert!((dual.value - target).abs() <= 1e-8);
        assert!((dual.point.iter().sum::<f64>() - 5.0).abs() <= 1e-8);
        let lp = m.build_primal_lp();
        assert_eq!(lp.num_vars(), 2);
        assert_eq!(lp.ub_matrix.len(), 6);
    }

    #[test]
    fn occupancy_identities() {
        let m = example();
        let pi = Policy { probs: vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]] };
        let mu = m.occupancy_of_policy(&pi).unwrap();
        let total: f64 = mu.iter().flatten().sum();
        assert!((total - 5.0).abs() <= 1e-8);
        let ret: f64 = (0..2).map(|s| dot(&mu[s], &m.rewards[s])).sum();
        assert!((ret - m.return_of(&pi).unwrap()).abs() <= 1e-8);
    }

    #[test]
    fn validation_names_the_offending_pair() {
        let err = Mdp::new(
            vec![vec![1.0, -1.0]],
            vec![vec![vec![1.0], vec![1.0]]],
            0.5,
            vec![1.0],
        )
        .unwrap_err();
        assert!(err.to_string().contains("s=0, a=1"), "{err}");
        let err = Mdp::new(vec![vec![1.0]], vec![vec![vec![0.9]]], 0.5, vec![1.0]).unwrap_err();
        assert!(matches!(err, RmdpError::Validation(_)));
        let err = Mdp::new(vec![vec![1.0]], vec![vec![vec![1.0]]], 1.2, vec![1.0]).unwrap_err();
        assert!(err.to_string().contains("discount"));
    }
}
