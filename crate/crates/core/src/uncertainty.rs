//! Uncertainty sets over next-state distributions and their inner
//! minimisation oracles `min_{p ∈ U} pᵀv`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RmdpError};
use crate::mdp::check_simplex;
use crate::numerics::{dot, enumerate_vertices, solve_lp, LinearProgram, LpStatus, Sense};

/// Limits for brute-force vertex enumeration.
pub const MAX_ENUM_STATES: usize = 10;
pub const MAX_ENUM_ROWS: usize = 12;

/// A set of next-state distributions for one state-action pair. Every
/// variant is implicitly intersected with the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UncertaintySet {
    Singleton { nominal: Vec<f64> },
    /// `{p ∈ Δ : lower ≤ p ≤ upper}`
    BoxSimplex { lower: Vec<f64>, upper: Vec<f64> },
    /// `{p ∈ Δ : A p ≤ c}`
    Polyhedral { a: Vec<Vec<f64>>, c: Vec<f64> },
}

fn simplex_lp(cost: Vec<f64>, sense: Sense) -> LinearProgram {
    let n = cost.len();
    let mut lp = LinearProgram::new(sense, cost);
    lp.add_eq(vec![1.0; n], 1.0);
    lp
}

impl UncertaintySet {
    pub fn singleton(nominal: Vec<f64>) -> Result<Self> {
        check_simplex(&nominal, "singleton distribution")?;
        Ok(UncertaintySet::Singleton { nominal })
    }

    pub fn box_simplex(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let set = UncertaintySet::BoxSimplex { lower, upper };
        set.validate()?;
        Ok(set)
    }

    pub fn polyhedral(a: Vec<Vec<f64>>, c: Vec<f64>) -> Result<Self> {
        let set = UncertaintySet::Polyhedral { a, c };
        set.validate()?;
        Ok(set)
    }

    /// `{p ∈ Δ : lf·p̂ ≤ p ≤ min(uf·p̂, 1)}`; an infinite `uf` lifts the cap to 1.
    pub fn box_from_nominal(nominal: &[f64], lower_factor: f64, upper_factor: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lower_factor) || !(upper_factor >= 1.0) {
            return Err(RmdpError::InvalidFactors { lower: lower_factor, upper: upper_factor });
        }
        check_simplex(nominal, "nominal distribution")?;
        let lower = nominal.iter().map(|p| lower_factor * p).collect();
        let upper = nominal
            .iter()
            .map(|p| if upper_factor.is_infinite() { 1.0 } else { (upper_factor * p).min(1.0) })
            .collect();
        Self::box_simplex(lower, upper)
    }

    pub fn dim(&self) -> usize {
        match self {
            UncertaintySet::Singleton { nominal } => nominal.len(),
            UncertaintySet::BoxSimplex { lower, .. } => lower.len(),
            UncertaintySet::Polyhedral { a, .. } => a.first().map_or(0, |r| r.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            UncertaintySet::Singleton { nominal } => check_simplex(nominal, "singleton distribution"),
            UncertaintySet::BoxSimplex { lower, upper } => {
                if lower.len() != upper.len() || lower.is_empty() {
                    return Err(RmdpError::Validation("box bounds have mismatched lengths".into()));
                }
                for (i, (&l, &u)) in lower.iter().zip(upper).enumerate() {
                    if !(0.0 <= l && l <= u && u <= 1.0) {
                        return Err(RmdpError::Validation(format!(
                            "box bounds at entry {i} violate 0 <= {l} <= {u} <= 1"
                        )));
                    }
                }
                let (sl, su): (f64, f64) = (lower.iter().sum(), upper.iter().sum());
                if sl > 1.0 + 1e-12 || su < 1.0 - 1e-12 {
                    return Err(RmdpError::EmptySet);
                }
                Ok(())
            }
            UncertaintySet::Polyhedral { a, c } => {
                if a.len() != c.len() {
                    return Err(RmdpError::Validation(format!(
                        "polyhedral set has {} rows but {} right-hand sides",
                        a.len(),
                        c.len()
                    )));
                }
                Ok(())
            }
        }
        .and_then(|_| self.check_nonempty())
    }

    fn check_nonempty(&self) -> Result<()> {
        if let UncertaintySet::Polyhedral { a, .. } = self {
            let n = a.first().map(|r| r.len()).unwrap_or(0);
            if n == 0 || a.iter().any(|r| r.len() != n) {
                return Err(RmdpError::Validation("polyhedral rows must share a nonzero width".into()));
            }
            let sol = solve_lp(&self.inner_lp(&vec![0.0; n], Sense::Minimize))?;
            if sol.status == LpStatus::Infeasible {
                return Err(RmdpError::EmptySet);
            }
        }
        Ok(())
    }

    /// The polyhedral description `(A, c)` of the set, without the simplex rows.
    pub fn to_polyhedral(&self) -> UncertaintySet {
        let (a, c) = self.constraint_rows();
        UncertaintySet::Polyhedral { a, c }
    }

    /// Rows `A p ≤ c`: boxes stack `(I; −I)` over `(upper; −lower)` and a
    /// singleton pins every entry from both sides.
    pub fn constraint_rows(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let stacked = |upper: &[f64], lower: &[f64]| {
            let n = upper.len();
            let mut a = Vec::with_capacity(2 * n);
            let mut c = Vec::with_capacity(2 * n);
            for i in 0..n {
                let mut row = vec![0.0; n];
                row[i] = 1.0;
                a.push(row);
                c.push(upper[i]);
            }
            for i in 0..n {
                let mut row = vec![0.0; n];
                row[i] = -1.0;
                a.push(row);
                c.push(-lower[i]);
            }
            (a, c)
        };
        match self {
            UncertaintySet::Singleton { nominal } => stacked(nominal, nominal),
            UncertaintySet::BoxSimplex { lower, upper } => stacked(upper, lower),
            UncertaintySet::Polyhedral { a, c } => (a.clone(), c.clone()),
        }
    }

    fn inner_lp(&self, v: &[f64], sense: Sense) -> LinearProgram {
        let mut lp = simplex_lp(v.to_vec(), sense);
        let (a, c) = self.constraint_rows();
        for (row, rhs) in a.into_iter().zip(c) {
            lp.add_ub(row, rhs);
        }
        lp
    }

    /// `min_{p ∈ U} pᵀv` and a minimiser.
    pub fn inner_min(&self, v: &[f64]) -> Result<(f64, Vec<f64>)> {
        if v.len() != self.dim() {
            return Err(RmdpError::DomainError(format!(
                "value vector has {} entries, set has dimension {}",
                v.len(),
                self.dim()
            )));
        }
        let p = match self {
            UncertaintySet::Singleton { nominal } => nominal.clone(),
            UncertaintySet::BoxSimplex { lower, upper } => box_greedy(lower, upper, v),
            UncertaintySet::Polyhedral { .. } => {
                let sol = solve_lp(&self.inner_lp(v, Sense::Minimize))?;
                match sol.status {
                    LpStatus::Optimal => sol.point,
                    _ => return Err(RmdpError::EmptySet),
                }
            }
        };
        Ok((dot(&p, v), p))
    }

    /// `max_{p ∈ U} pᵀv = −min_{p ∈ U} pᵀ(−v)`.
    pub fn inner_max(&self, v: &[f64]) -> Result<(f64, Vec<f64>)> {
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let (value, p) = self.inner_min(&neg)?;
        Ok((-value, p))
    }

    /// Vertices of the set, by brute-force basis enumeration.
    pub fn vertices(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.dim();
        if let UncertaintySet::Singleton { nominal } = self {
            return Ok(vec![nominal.clone()]);
        }
        if n > MAX_ENUM_STATES {
            return Err(RmdpError::TooLarge(format!("{n} states exceeds {MAX_ENUM_STATES}")));
        }
        let mut ub = Vec::new();
        let mut ub_rhs = Vec::new();
        match self {
            UncertaintySet::BoxSimplex { .. } => {
                let (a, c) = self.constraint_rows();
                ub.extend(a);
                ub_rhs.extend(c);
            }
            UncertaintySet::Polyhedral { a, c } => {
                if a.len() > MAX_ENUM_ROWS {
                    return Err(RmdpError::TooLarge(format!(
                        "{} rows exceeds {MAX_ENUM_ROWS}",
                        a.len()
                    )));
                }
                ub.extend(a.iter().cloned());
                ub_rhs.extend(c.iter().cloned());
                for i in 0..n {
                    let mut row = vec![0.0; n];
                    row[i] = -1.0;
                    ub.push(row);
                    ub_rhs.push(0.0);
                }
            }
            UncertaintySet::Singleton { .. } => unreachable!(),
        }
        enumerate_vertices(&[vec![1.0; n]], &[1.0], &ub, &ub_rhs)
    }
}

/// Fills lower bounds, then pours the remaining mass into states in
/// ascending order of `v` (index order on ties) up to each upper bound.
fn box_greedy(lower: &[f64], upper: &[f64], v: &[f64]) -> Vec<f64> {
    let mut p = lower.to_vec();
    let mut remaining = 1.0 - lower.iter().sum::<f64>();
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let add = remaining.min(upper[i] - lower[i]);
        p[i] += add;
        remaining -= add;
    }
    p
}

/// An s-rectangular set: the joint vector `(p_a)_{a ∈ A}` (index
/// `a·n_states + s'`) ranges over per-action simplices intersected with
/// `A_joint p ≤ c_joint`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SRectangularSet {
    pub n_states: usize,
    pub n_actions: usize,
    pub a: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

impl SRectangularSet {
    pub fn new(n_states: usize, n_actions: usize, a: Vec<Vec<f64>>, c: Vec<f64>) -> Result<Self> {
        let set = SRectangularSet { n_states, n_actions, a, c };
        set.validate()?;
        Ok(set)
    }

    /// The product `U_{s,1} × … × U_{s,|A|}` written as one joint polytope.
    pub fn product(sets: &[UncertaintySet]) -> Result<Self> {
        let n_actions = sets.len();
        let n_states = sets.first().map_or(0, |s| s.dim());
        let width = n_actions * n_states;
        let mut a = Vec::new();
        let mut c = Vec::new();
        for (k, set) in sets.iter().enumerate() {
            if set.dim() != n_states {
                return Err(RmdpError::Validation("product factors differ in dimension".into()));
            }
            let (rows, rhs) = set.constraint_rows();
            for (row, b) in rows.into_iter().zip(rhs) {
                let mut joint = vec![0.0; width];
                joint[k * n_states..(k + 1) * n_states].copy_from_slice(&row);
                a.push(joint);
                c.push(b);
            }
        }
        Self::new(n_states, n_actions, a, c)
    }

    pub fn width(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.width();
        if w == 0 {
            return Err(RmdpError::Validation("s-rectangular set has no coordinates".into()));
        }
        if self.a.len() != self.c.len() || self.a.iter().any(|r| r.len() != w) {
            return Err(RmdpError::Validation(format!(
                "joint constraint rows must have width {w} and match the right-hand side"
            )));
        }
        let sol = solve_lp(&self.joint_lp(vec![0.0; w]))?;
        if sol.status == LpStatus::Infeasible {
            return Err(RmdpError::EmptySet);
        }
        Ok(())
    }

    fn simplex_rows(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let (ns, na) = (self.n_states, self.n_actions);
        let rows = (0..na)
            .map(|a| (0..ns * na).map(|j| if j / ns == a { 1.0 } else { 0.0 }).collect())
            .collect();
        (rows, vec![1.0; na])
    }

    fn joint_lp(&self, cost: Vec<f64>) -> LinearProgram {
        let mut lp = LinearProgram::new(Sense::Minimize, cost);
        let (eq, eq_rhs) = self.simplex_rows();
        for (row, b) in eq.into_iter().zip(eq_rhs) {
            lp.add_eq(row, b);
        }
        for (row, &b) in self.a.iter().zip(&self.c) {
            lp.add_ub(row.clone(), b);
        }
        lp
    }

    /// `min Σ_a w_a p_aᵀv` over the joint set, with the minimiser split per action.
    pub fn inner_min(&self, weights: &[f64], v: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
        if weights.len() != self.n_actions || v.len() != self.n_states {
            return Err(RmdpError::DomainError("weights or values have the wrong length".into()));
        }
        let cost = (0..self.width())
            .map(|j| weights[j / self.n_states] * v[j % self.n_states])
            .collect();
        let sol = solve_lp(&self.joint_lp(cost))?;
        if !sol.is_optimal() {
            return Err(RmdpError::EmptySet);
        }
        let p = self.split(&sol.point);
        let value = (0..self.n_actions).map(|a| weights[a] * dot(&p[a], v)).sum();
        Ok((value, p))
    }

    pub fn split(&self, joint: &[f64]) -> Vec<Vec<f64>> {
        joint.chunks(self.n_states).map(|c| c.to_vec()).collect()
    }

    /// `min Σ_a exp(offset_a + slope·p_aᵀℓ)` over the joint set, with a
    /// minimiser split per action.
    pub fn min_sum_exp(&self, offsets: &[f64], slope: f64, ell: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (log_value, p) = self.log_min_sum_exp(offsets, slope, ell)?;
        Ok((log_value.exp(), p))
    }

    /// `log min Σ_a exp(offset_a + slope·p_aᵀℓ)`, finite even when the
    /// minimum itself overflows.
    ///
    /// The objective is convex and separable in the scalars `p_aᵀℓ`, so
    /// Kelley's method with tangent cuts on each exponential converges
    /// quickly; each round is one LP over `(p, t)`.
    pub fn log_min_sum_exp(&self, offsets: &[f64], slope: f64, ell: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (ns, na) = (self.n_states, self.n_actions);
        if offsets.len() != na || ell.len() != ns {
            return Err(RmdpError::DomainError("offsets or direction have the wrong length".into()));
        }
        let exponent = |p: &[Vec<f64>], a: usize| offsets[a] + slope * dot(&p[a], ell);
        let start = self.split(&solve_lp(&self.joint_lp(vec![0.0; self.width()]))?.point);
        // Shift keeps every evaluated exponential near unit scale.
        let shift = (0..na).map(|a| exponent(&start, a)).fold(f64::NEG_INFINITY, f64::max);

        let w = self.width();
        let mut cost = vec![0.0; w + na];
        cost[w..].iter_mut().for_each(|c| *c = 1.0);
        let mut lp = self.joint_lp(vec![0.0; w]);
        lp.cost = cost;
        lp.lower.extend(std::iter::repeat(0.0).take(na));
        lp.upper.extend(std::iter::repeat(f64::INFINITY).take(na));
        for row in lp.eq_matrix.iter_mut().chain(lp.ub_matrix.iter_mut()) {
            row.extend(std::iter::repeat(0.0).take(na));
        }
        let add_cut = |lp: &mut LinearProgram, a: usize, z: f64| {
            // t_a ≥ e^{z−shift}·(1 + offset_a + slope·p_aᵀℓ − z)
            let g = (z - shift).exp();
            let mut row = vec![0.0; w + na];
            for sp in 0..ns {
                row[a * ns + sp] = g * slope * ell[sp];
            }
            row[w + a] = -1.0;
            lp.add_ub(row, -g * (1.0 + offsets[a] - z));
        };
        for a in 0..na {
            add_cut(&mut lp, a, exponent(&start, a));
        }

        let mut best = (f64::INFINITY, start);
        let mut last_lower = f64::NEG_INFINITY;
        let mut stalled = 0;
        for _ in 0..500 {
            let sol = solve_lp(&lp)?;
            if !sol.is_optimal() {
                return Err(RmdpError::EmptySet);
            }
            let lower: f64 = sol.point[w..].iter().sum();
            let p = self.split(&sol.point[..w]);
            let value: f64 = (0..na).map(|a| (exponent(&p, a) - shift).exp()).sum();
            if value < best.0 {
                best = (value, p.clone());
            }
            if best.0 - lower <= 1e-13 * best.0 {
                return Ok((best.0.ln() + shift, best.1));
            }
            // The LP resolves the model only to its own tolerance.
            stalled = if lower > last_lower + 1e-15 * best.0 { 0 } else { stalled + 1 };
            last_lower = last_lower.max(lower);
            if stalled >= 10 && best.0 - lower <= 1e-8 * best.0 {
                return Ok((best.0.ln() + shift, best.1));
            }
            let mut added = false;
            for a in 0..na {
                let z = exponent(&p, a);
                if (z - shift).exp() > sol.point[w + a] + 1e-15 * best.0 {
                    add_cut(&mut lp, a, z);
                    added = true;
                }
            }
            if !added {
                return Ok((best.0.ln() + shift, best.1));
            }
        }
        Err(RmdpError::NonConvergence { rounds: 500, residual: f64::NAN, gap: best.0 - last_lower })
    }

    /// Joint vertices, each split per action.
    pub fn vertices(&self) -> Result<Vec<Vec<Vec<f64>>>> {
        let w = self.width();
        if w > MAX_ENUM_STATES + 2 || self.a.len() > MAX_ENUM_ROWS + 4 {
            return Err(RmdpError::TooLarge(format!(
                "joint set with {w} coordinates and {} rows",
                self.a.len()
            )));
        }
        let (eq, eq_rhs) = self.simplex_rows();
        let mut ub = self.a.clone();
        let mut ub_rhs = self.c.clone();
        for j in 0..w {
            let mut row = vec![0.0; w];
            row[j] = -1.0;
            ub.push(row);
            ub_rhs.push(0.0);
        }
        Ok(enumerate_vertices(&eq, &eq_rhs, &ub, &ub_rhs)?
            .iter()
            .map(|v| self.split(v))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example_box() -> UncertaintySet {
        UncertaintySet::box_from_nominal(&[0.1, 0.9], 0.95, 1.05).unwrap()
    }

    fn vertex_min(set: &UncertaintySet, v: &[f64]) -> f64 {
        set.vertices()
            .unwrap()
            .iter()
            .map(|p| dot(p, v))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn singleton_is_nominal_expectation() {
        let s = UncertaintySet::singleton(vec![0.25, 0.75]).unwrap();
        assert_eq!(s.inner_min(&[4.0, 8.0]).unwrap().0, 7.0);
    }

    #[test]
    fn degenerate_box_is_nominal() {
        let s = UncertaintySet::box_from_nominal(&[0.25, 0.75], 1.0, 1.0).unwrap();
        assert!((s.inner_min(&[4.0, 8.0]).unwrap().0 - 7.0).abs() < 1e-12);
    }

    #[test]
    fn example_box_greedy_matches_vertices() {
        let s = example_box();
        let v = [10.5, 0.85];
        let (value, p) = s.inner_min(&v).unwrap();
        assert!((value - vertex_min(&s, &v)).abs() < 1e-12);
        assert!((p[0] - 0.095).abs() < 1e-12 && (p[1] - 0.905).abs() < 1e-12);
    }

    #[test]
    fn full_simplex_box_and_invalid_factors() {
        let s = UncertaintySet::box_from_nominal(&[0.1, 0.9], 0.0, f64::INFINITY).unwrap();
        let (value, p) = s.inner_min(&[3.0, -1.0]).unwrap();
        assert_eq!((value, p), (-1.0, vec![0.0, 1.0]));
        assert!(matches!(
            UncertaintySet::box_from_nominal(&[0.5, 0.5], 1.1, 2.0),
            Err(RmdpError::InvalidFactors { .. })
        ));
        assert!(matches!(
            UncertaintySet::box_from_nominal(&[0.5, 0.5], 0.5, 0.9),
            Err(RmdpError::InvalidFactors { .. })
        ));
    }

    #[test]
    fn polyhedral_lift_agrees_with_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let boxed = UncertaintySet::box_from_nominal(&[0.2, 0.3, 0.5], 0.7, 1.4).unwrap();
        let poly = boxed.to_polyhedral();
        let (a, _) = poly.constraint_rows();
        assert_eq!(a.len(), 6);
        for _ in 0..100 {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let g = boxed.inner_min(&v).unwrap().0;
            let l = poly.inner_min(&v).unwrap().0;
            assert!((g - l).abs() <= 1e-9);
        }
    }

    #[test]
    fn simplex_vertices_and_singleton_vertices() {
        let full = UncertaintySet::polyhedral(vec![vec![0.0, 0.0, 0.0]], vec![1.0]).unwrap();
        assert_eq!(full.vertices().unwrap().len(), 3);
        let single = UncertaintySet::singleton(vec![0.5, 0.5]).unwrap();
        assert_eq!(single.vertices().unwrap(), vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn empty_polyhedron_rejected() {
        let err = UncertaintySet::polyhedral(vec![vec![1.0, 1.0]], vec![0.5]).unwrap_err();
        assert_eq!(err, RmdpError::EmptySet);
    }

    #[test]
    fn product_srect_is_separable() {
        let sets = [
            example_box(),
            UncertaintySet::box_from_nominal(&[0.25, 0.75], 0.95, 1.05).unwrap(),
        ];
        let joint = SRectangularSet::product(&sets).unwrap();
        let w = [0.3, 0.7];
        let v = [10.5, 0.85];
        let (value, _) = joint.inner_min(&w, &v).unwrap();
        let separate: f64 = sets
            .iter()
            .zip(w)
            .map(|(s, wa)| wa * s.inner_min(&v).unwrap().0)
            .sum();
        assert!((value - separate).abs() < 1e-12);
    }
}
