//! Dense two-phase simplex.
//!
//! The solver converts a general-form [`LinearProgram`] (equality rows,
//! `≤` rows, and per-variable bounds) into standard form `min cᵀx, Ax = b,
//! x ≥ 0`, runs phase 1 on artificial variables and phase 2 on the original
//! costs. The entering column is the lowest-index improving one. The
//! leaving row comes from a Harris ratio test that prefers large pivots,
//! switching to Bland's lowest-index rule during long degenerate streaks so
//! degenerate problems terminate without cycling. The tableau is rebuilt from the
//! original rows and the current basis every few pivots and before any
//! optimality or infeasibility verdict, so rounding does not accumulate.

use crate::error::{Result, RmdpError};

/// Primal feasibility tolerance.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Entries smaller than this are never used as pivots.
pub const PIVOT_TOL: f64 = 1e-12;
const REDUCED_COST_TOL: f64 = 1e-11;
/// Pivots smaller than this fraction of the column's largest entry are refused.
const RELATIVE_PIVOT_TOL: f64 = 1e-7;
const NOISE_REDUCED_COST: f64 = 1e-7;
const REFACTOR_EVERY: usize = 50;
/// Consecutive degenerate pivots before falling back to Bland's leaving rule.
const DEGENERATE_STREAK: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub cost: Vec<f64>,
    pub eq_matrix: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    /// Rows of `A_ub x ≤ b_ub`.
    pub ub_matrix: Vec<Vec<f64>>,
    pub ub_rhs: Vec<f64>,
    /// Per-variable lower bounds; `f64::NEG_INFINITY` for none.
    pub lower: Vec<f64>,
    /// Per-variable upper bounds; `f64::INFINITY` for none.
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub point: Vec<f64>,
    pub value: f64,
    /// Shadow prices `∂value/∂b_eq`; empty unless optimal.
    pub eq_duals: Vec<f64>,
    /// Shadow prices `∂value/∂b_ub`; empty unless optimal.
    pub ub_duals: Vec<f64>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    fn without_point(status: LpStatus, n: usize) -> Self {
        LpSolution {
            status,
            point: vec![f64::NAN; n],
            value: f64::NAN,
            eq_duals: Vec::new(),
            ub_duals: Vec::new(),
        }
    }
}

impl LinearProgram {
    /// A program over `cost.len()` nonnegative variables with no rows.
    pub fn new(sense: Sense, cost: Vec<f64>) -> Self {
        let n = cost.len();
        LinearProgram {
            sense,
            cost,
            eq_matrix: Vec::new(),
            eq_rhs: Vec::new(),
            ub_matrix: Vec::new(),
            ub_rhs: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.eq_matrix.push(row);
        self.eq_rhs.push(rhs);
        self
    }

    pub fn add_ub(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.ub_matrix.push(row);
        self.ub_rhs.push(rhs);
        self
    }

    /// `row · x ≥ rhs`, stored as `−row · x ≤ −rhs`.
    pub fn add_lb(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.add_ub(row.into_iter().map(|v| -v).collect(), -rhs)
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[var] = lower;
        self.upper[var] = upper;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let bad_dims = self.eq_matrix.len() != self.eq_rhs.len()
            || self.ub_matrix.len() != self.ub_rhs.len()
            || self.eq_matrix.iter().chain(&self.ub_matrix).any(|r| r.len() != n)
            || self.lower.len() != n
            || self.upper.len() != n;
        if bad_dims {
            return Err(RmdpError::DomainError(
                "linear program row dimensions do not match the variable count".into(),
            ));
        }
        if let Some(j) = (0..n).find(|&j| !(self.lower[j] <= self.upper[j])) {
            return Err(RmdpError::DomainError(format!(
                "variable {j} has lower bound {} above upper bound {}",
                self.lower[j], self.upper[j]
            )));
        }
        let finite = |v: &f64| v.is_finite();
        if !self.cost.iter().all(finite)
            || !self.eq_rhs.iter().chain(&self.ub_rhs).all(finite)
            || !self.eq_matrix.iter().chain(&self.ub_matrix).flatten().all(finite)
        {
            return Err(RmdpError::DomainError("linear program data must be finite".into()));
        }
        Ok(())
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for (row, &b) in self.eq_matrix.iter().zip(&self.eq_rhs) {
            worst = worst.max((dot(row, x) - b).abs());
        }
        for (row, &b) in self.ub_matrix.iter().zip(&self.ub_rhs) {
            worst = worst.max(dot(row, x) - b);
        }
        for (j, &xj) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - xj).max(xj - self.upper[j]);
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How an original variable is expressed through standard-form columns:
/// `x = offset + Σ sign·column`.
#[derive(Debug, Clone)]
struct VarMap {
    offset: f64,
    terms: Vec<(usize, f64)>,
}

struct StandardForm {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    var_maps: Vec<VarMap>,
    n_cols: usize,
    /// Index of the standard row for each original eq row, then each ub row.
    eq_rows: Vec<usize>,
    ub_rows: Vec<usize>,
}

fn to_standard_form(lp: &LinearProgram) -> StandardForm {
    let n = lp.num_vars();
    let objective_sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };

    let mut var_maps = Vec::with_capacity(n);
    let mut n_cols = 0;
    // Rows x' ≤ u − l for doubly bounded variables: (column, bound).
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        let map = if l.is_finite() {
            let col = n_cols;
            n_cols += 1;
            if u.is_finite() {
                bound_rows.push((col, u - l));
            }
            VarMap { offset: l, terms: vec![(col, 1.0)] }
        } else if u.is_finite() {
            let col = n_cols;
            n_cols += 1;
            VarMap { offset: u, terms: vec![(col, -1.0)] }
        } else {
            let col = n_cols;
            n_cols += 2;
            VarMap { offset: 0.0, terms: vec![(col, 1.0), (col + 1, -1.0)] }
        };
        var_maps.push(map);
    }
    let n_slacks = lp.ub_matrix.len() + bound_rows.len();
    let total_cols = n_cols + n_slacks;

    let mut cost = vec![0.0; total_cols];
    for (j, map) in var_maps.iter().enumerate() {
        for &(col, sign) in &map.terms {
            cost[col] += objective_sign * lp.cost[j] * sign;
        }
    }

    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let expand = |row: &[f64]| -> (Vec<f64>, f64) {
        let mut out = vec![0.0; total_cols];
        let mut shift = 0.0;
        for (j, map) in var_maps.iter().enumerate() {
            if row[j] == 0.0 {
                continue;
            }
            shift += row[j] * map.offset;
            for &(col, sign) in &map.terms {
                out[col] += row[j] * sign;
            }
        }
        (out, shift)
    };

    let mut eq_rows = Vec::new();
    for (row, &b) in lp.eq_matrix.iter().zip(&lp.eq_rhs) {
        let (r, shift) = expand(row);
        eq_rows.push(rows.len());
        rows.push(r);
        rhs.push(b - shift);
    }
    let mut ub_rows = Vec::new();
    let mut slack = n_cols;
    for (row, &b) in lp.ub_matrix.iter().zip(&lp.ub_rhs) {
        let (mut r, shift) = expand(row);
        r[slack] = 1.0;
        slack += 1;
        ub_rows.push(rows.len());
        rows.push(r);
        rhs.push(b - shift);
    }
    for (col, bound) in bound_rows {
        let mut r = vec![0.0; total_cols];
        r[col] = 1.0;
        r[slack] = 1.0;
        slack += 1;
        rows.push(r);
        rhs.push(bound);
    }

    StandardForm {
        rows,
        rhs,
        cost,
        var_maps,
        n_cols: total_cols,
        eq_rows,
        ub_rows,
    }
}

struct Tableau {
    /// `m` rows of `n_total + 1` entries; the last entry is the right-hand side.
    t: Vec<Vec<f64>>,
    /// The initial tableau, whose last `m` columns before the rhs are the identity.
    initial: Vec<Vec<f64>>,
    costs: Vec<f64>,
    /// Reduced-cost row, same width as `t`; the last entry is minus the objective.
    obj: Vec<f64>,
    basis: Vec<usize>,
    n_total: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[i][self.n_total]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let width = self.n_total + 1;
        let p = self.t[r][c];
        for k in 0..width {
            self.t[r][k] /= p;
        }
        self.t[r][c] = 1.0;
        let pivot_row = self.t[r].clone();
        for i in 0..self.t.len() {
            if i == r {
                continue;
            }
            let f = self.t[i][c];
            if f != 0.0 {
                for k in 0..width {
                    self.t[i][k] -= f * pivot_row[k];
                }
                self.t[i][c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for k in 0..width {
                self.obj[k] -= f * pivot_row[k];
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    fn set_costs(&mut self, costs: &[f64]) {
        self.costs = costs.to_vec();
        self.refresh_objective();
    }

    fn refresh_objective(&mut self) {
        let width = self.n_total + 1;
        let mut obj = vec![0.0; width];
        obj[..self.costs.len()].copy_from_slice(&self.costs);
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = self.costs.get(b).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for k in 0..width {
                    obj[k] -= cb * self.t[i][k];
                }
            }
        }
        self.obj = obj;
    }

    /// Recomputes the tableau as `B⁻¹·initial` for the current basis.
    /// Leaves it untouched if the basis matrix is numerically singular.
    fn refactor(&mut self) {
        let m = self.t.len();
        let Some(inverse) = self.basis_inverse() else { return };
        let width = self.n_total + 1;
        for i in 0..m {
            let mut row = vec![0.0; width];
            for (k, init) in self.initial.iter().enumerate() {
                let f = inverse[i][k];
                if f != 0.0 {
                    for (r, v) in row.iter_mut().zip(init) {
                        *r += f * v;
                    }
                }
            }
            for (j, &b) in self.basis.iter().enumerate() {
                row[b] = if i == j { 1.0 } else { 0.0 };
            }
            self.t[i] = row;
        }
        self.refresh_objective();
    }

    /// Gauss-Jordan inverse of the basis columns of the initial tableau.
    fn basis_inverse(&self) -> Option<Vec<Vec<f64>>> {
        let m = self.t.len();
        let mut a: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut row: Vec<f64> = self.basis.iter().map(|&b| self.initial[i][b]).collect();
                row.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for col in 0..m {
            let piv = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
            if a[piv][col].abs() < PIVOT_TOL {
                return None;
            }
            a.swap(col, piv);
            let p = a[col][col];
            for v in a[col].iter_mut() {
                *v /= p;
            }
            let pivot_row = a[col].clone();
            for (i, row) in a.iter_mut().enumerate() {
                let f = row[col];
                if i != col && f != 0.0 {
                    for (v, q) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * q;
                    }
                }
            }
        }
        Some(a.into_iter().map(|row| row[m..].to_vec()).collect())
    }

    /// Runs Bland-rule pivots over columns `< allowed` until optimal.
    /// Returns `false` on unboundedness.
    fn optimize(&mut self, allowed: usize) -> Result<bool> {
        let m = self.t.len();
        let cap = 200 * (m + self.n_total) + 10_000;
        let mut since_refactor = 0;
        let mut fresh = false;
        let mut degenerate_streak = 0;
        let mut excluded: Vec<usize> = Vec::new();
        for _ in 0..cap {
            if since_refactor >= REFACTOR_EVERY {
                self.refactor();
                since_refactor = 0;
            }
            let Some(enter) = (0..allowed).find(|&j| self.obj[j] < -REDUCED_COST_TOL && !excluded.contains(&j)) else {
                if fresh || since_refactor == 0 {
                    return Ok(true);
                }
                self.refactor();
                since_refactor = 0;
                fresh = true;
                continue;
            };
            fresh = false;
            since_refactor += 1;
            let col_max = (0..m).fold(0.0_f64, |acc, i| acc.max(self.t[i][enter].abs()));
            let tol = PIVOT_TOL.max(RELATIVE_PIVOT_TOL * col_max);
            // Harris ratio test: bound the step with slightly relaxed rows,
            // then take the largest pivot among rows blocking within it.
            let relaxed = (0..m)
                .filter(|&i| self.t[i][enter] > tol)
                .map(|i| (self.rhs(i).max(0.0) + FEASIBILITY_TOL * (1.0 + self.rhs(i).abs())) / self.t[i][enter])
                .fold(f64::INFINITY, f64::min);
            let blocking = (0..m).filter(|&i| {
                let a = self.t[i][enter];
                a > tol && self.rhs(i).max(0.0) / a <= relaxed
            });
            let leave = if degenerate_streak > DEGENERATE_STREAK {
                blocking.min_by_key(|&i| self.basis[i])
            } else {
                blocking.max_by(|&x, &y| self.t[x][enter].total_cmp(&self.t[y][enter]))
            };
            if let Some(r) = leave {
                let step = self.rhs(r).max(0.0) / self.t[r][enter];
                if step * self.obj[enter].abs() <= FEASIBILITY_TOL {
                    degenerate_streak += 1;
                } else {
                    degenerate_streak = 0;
                }
            }
            match leave {
                // A column whose improvement is rounding noise and which has no
                // usable pivot is neither a ray nor worth entering.
                None if self.obj[enter] > -NOISE_REDUCED_COST => {
                    excluded.push(enter);
                }
                None => return Ok(false),
                Some(r) => {
                    self.pivot(r, enter);
                    excluded.clear();
                }
            }
        }
        Err(RmdpError::NumericalBreakdown(format!(
            "simplex made no progress within {cap} pivots"
        )))
    }
}

/// Solves a linear program with the dense two-phase simplex method.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.num_vars();
    let sf = to_standard_form(lp);
    let m = sf.rows.len();
    let n_cols = sf.n_cols;
    let n_total = n_cols + m;

    let mut flip = vec![1.0; m];
    let mut t = Vec::with_capacity(m);
    for i in 0..m {
        if sf.rhs[i] < 0.0 {
            flip[i] = -1.0;
        }
        let mut row = Vec::with_capacity(n_total + 1);
        row.extend(sf.rows[i].iter().map(|v| v * flip[i]));
        row.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
        row.push(sf.rhs[i] * flip[i]);
        t.push(row);
    }
    let mut tab = Tableau {
        initial: t.clone(),
        t,
        costs: Vec::new(),
        obj: Vec::new(),
        basis: (n_cols..n_total).collect(),
        n_total,
    };

    // Phase 1: minimise the sum of artificials.
    let mut phase1_costs = vec![0.0; n_total];
    for c in phase1_costs.iter_mut().skip(n_cols) {
        *c = 1.0;
    }
    tab.set_costs(&phase1_costs);
    if !tab.optimize(n_cols)? {
        return Err(RmdpError::NumericalBreakdown("simplex phase 1 lost its bound".into()));
    }
    let infeasibility = -tab.obj[n_total];
    let rhs_scale = 1.0 + sf.rhs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    if infeasibility > FEASIBILITY_TOL * rhs_scale {
        return Ok(LpSolution::without_point(LpStatus::Infeasible, n));
    }
    // Drive remaining artificials out of the basis where possible.
    for i in 0..m {
        if tab.basis[i] >= n_cols {
            if let Some(c) = (0..n_cols).find(|&c| tab.t[i][c].abs() > 1e-9) {
                tab.pivot(i, c);
            }
        }
    }

    // Phase 2.
    let mut phase2_costs = sf.cost.clone();
    phase2_costs.resize(n_total, 0.0);
    tab.set_costs(&phase2_costs);
    if !tab.optimize(n_cols)? {
        return Ok(LpSolution::without_point(LpStatus::Unbounded, n));
    }

    let mut std_x = vec![0.0; n_total];
    for (i, &b) in tab.basis.iter().enumerate() {
        std_x[b] = tab.rhs(i);
    }
    let point: Vec<f64> = sf
        .var_maps
        .iter()
        .map(|map| map.offset + map.terms.iter().map(|&(c, s)| s * std_x[c]).sum::<f64>())
        .collect();
    let value = dot(&lp.cost, &point);

    // y_i = c_Bᵀ B⁻¹ e_i is minus the reduced cost of artificial i.
    let objective_sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let dual = |row: usize| -> f64 { -tab.obj[n_cols + row] * flip[row] * objective_sign };
    let eq_duals = sf.eq_rows.iter().map(|&r| dual(r)).collect();
    let ub_duals = sf.ub_rows.iter().map(|&r| dual(r)).collect();

    Ok(LpSolution {
        status: LpStatus::Optimal,
        point,
        value,
        eq_duals,
        ub_duals,
    })
}
