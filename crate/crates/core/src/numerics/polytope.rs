use super::linalg::{dot, inf_dist, solve_linear_system};
use crate::error::{Result, RmdpError};

/// Upper limit on the number of candidate bases examined.
pub const MAX_CANDIDATE_BASES: u64 = 2_000_000;

const VERTEX_TOL: f64 = 1e-9;

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Advances `idx` to the next `k`-subset of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Enumerates the vertices of `{x : A_eq x = b_eq, A_ub x ≤ b_ub}` by
/// trying every choice of active inequalities that completes the equality
/// rows to a square system. Duplicates within 1e-9 are merged.
pub fn enumerate_vertices(
    eq: &[Vec<f64>],
    eq_rhs: &[f64],
    ub: &[Vec<f64>],
    ub_rhs: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n = eq
        .first()
        .or(ub.first())
        .map(|r| r.len())
        .ok_or_else(|| RmdpError::DomainError("polytope has no constraint rows".into()))?;
    if eq.len() > n {
        return Err(RmdpError::DomainError(
            "more equality rows than variables".into(),
        ));
    }
    let k = n - eq.len();
    if ub.len() < k {
        return Ok(Vec::new());
    }
    let candidates = binomial(ub.len(), k);
    if candidates > MAX_CANDIDATE_BASES {
        return Err(RmdpError::TooLarge(format!(
            "{candidates} candidate bases for {n} variables and {} inequalities",
            ub.len()
        )));
    }

    let scale = 1.0
        + eq_rhs
            .iter()
            .chain(ub_rhs)
            .fold(0.0_f64, |m, v| m.max(v.abs()));
    let feasible = |x: &[f64]| {
        eq.iter()
            .zip(eq_rhs)
            .all(|(r, &b)| (dot(r, x) - b).abs() <= VERTEX_TOL * scale)
            && ub
                .iter()
                .zip(ub_rhs)
                .all(|(r, &b)| dot(r, x) - b <= VERTEX_TOL * scale)
    };

    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut a: Vec<Vec<f64>> = eq.to_vec();
        let mut b: Vec<f64> = eq_rhs.to_vec();
        for &i in &idx {
            a.push(ub[i].clone());
            b.push(ub_rhs[i]);
        }
        if let Ok(x) = solve_linear_system(&a, &b) {
            if feasible(&x) && !vertices.iter().any(|v| inf_dist(v, &x) <= VERTEX_TOL) {
                vertices.push(x);
            }
        }
        if k == 0 || !next_combination(&mut idx, ub.len()) {
            break;
        }
    }
    Ok(vertices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simplex_rows(n: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
        let eq = vec![vec![1.0; n]];
        let ub = (0..n)
            .map(|i| (0..n).map(|j| if i == j { -1.0 } else { 0.0 }).collect())
            .collect();
        (eq, vec![1.0], ub, vec![0.0; n])
    }

    #[test]
    fn simplex_vertices_are_unit_vectors() {
        let (eq, eb, ub, ubb) = simplex_rows(3);
        let mut verts = enumerate_vertices(&eq, &eb, &ub, &ubb).unwrap();
        verts.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(verts.len(), 3);
        for (i, v) in verts.iter().enumerate() {
            for (j, &x) in v.iter().enumerate() {
                assert!((x - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn square_vertices() {
        let ub = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ];
        let verts = enumerate_vertices(&[], &[], &ub, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(verts.len(), 4);
    }

    #[test]
    fn combinations_cover_all_subsets() {
        let mut idx = vec![0, 1];
        let mut count = 1;
        while next_combination(&mut idx, 5) {
            count += 1;
        }
        assert_eq!(count, binomial(5, 2));
    }

    #[test]
    fn guard_trips_on_huge_enumerations() {
        let n = 30;
        let ub: Vec<Vec<f64>> = (0..60).map(|i| {
            let mut r = vec![0.0; n];
            r[i % n] = if i < n { 1.0 } else { -1.0 };
            r
        }).collect();
        let rhs = vec![1.0; 60];
        assert!(matches!(
            enumerate_vertices(&[], &[], &ub, &rhs),
            Err(RmdpError::TooLarge(_))
        ));
    }
}
