//! Dense phase-1 simplex for small nonnegative feasibility systems.
//!
//! Finds `x >= 0` with `A x = b` by minimizing the sum of artificial
//! variables under Bland's rule (no cycling). Problems here are tiny, a
//! handful of rows and at most a few hundred columns, so a dense tableau is
//! the right tool.

const EPS: f64 = 1e-10;
const MAX_PIVOTS: usize = 20_000;

#[derive(Debug, Clone)]
pub struct Phase1 {
    /// Remaining artificial mass; ~0 means feasible.
    pub objective: f64,
    /// Values of the structural variables at the final vertex.
    pub solution: Vec<f64>,
}

pub fn nonneg_feasible(a: &[Vec<f64>], b: &[f64]) -> Phase1 {
    let m = a.len();
    let n = if m == 0 { 0 } else { a[0].len() };
    if m == 0 {
        return Phase1 {
            objective: 0.0,
            solution: vec![0.0; n],
        };
    }

    // tableau rows: [structural | artificial | rhs], scaled, rhs >= 0
    let mut t = vec![vec![0.0; n + m + 1]; m];
    for i in 0..m {
        let mut scale = b[i].abs();
        for j in 0..n {
            scale = scale.max(a[i][j].abs());
        }
        if scale < EPS {
            scale = 1.0;
        }
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[i][j] / scale;
        }
        t[i][n + i] = 1.0;
        t[i][n + m] = sign * b[i] / scale;
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // cost row for min(sum of artificials), priced out over the basis
    let mut cost = vec![0.0; n + m + 1];
    for j in 0..n + m + 1 {
        let mut c: f64 = 0.0;
        for row in t.iter() {
            c -= row[j];
        }
        cost[j] = c;
    }
    for i in 0..m {
        cost[n + i] += 1.0;
    }

    for _ in 0..MAX_PIVOTS {
        // Bland: first improving column
        let Some(enter) = (0..n + m).find(|&j| cost[j] < -EPS) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            if t[i][enter] > EPS {
                let ratio = t[i][n + m] / t[i][enter];
                if ratio < best - EPS || (ratio < best + EPS && leave.is_some_and(|l| basis[i] < basis[l]))
                {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(leave) = leave else {
            break; // unbounded direction can't happen in phase 1, bail out
        };
        let piv = t[leave][enter];
        for v in t[leave].iter_mut() {
            *v /= piv;
        }
        for i in 0..m {
            if i != leave && t[i][enter].abs() > 0.0 {
                let f = t[i][enter];
                for j in 0..n + m + 1 {
                    t[i][j] -= f * t[leave][j];
                }
            }
        }
        let f = cost[enter];
        if f.abs() > 0.0 {
            for j in 0..n + m + 1 {
                cost[j] -= f * t[leave][j];
            }
        }
        basis[leave] = enter;
    }

    let mut solution = vec![0.0; n];
    let mut objective = 0.0;
    for i in 0..m {
        let v = t[i][n + m];
        if basis[i] < n {
            solution[basis[i]] = v;
        } else {
            objective += v.abs();
        }
    }
    Phase1 {
        objective,
        solution,
    }
}

/// True if `A x = b` has a nonnegative solution within `tol` (L1 sense).
pub fn nonneg_solvable(a: &[Vec<f64>], b: &[f64], tol: f64) -> Option<Vec<f64>> {
    let r = nonneg_feasible(a, b);
    (r.objective <= tol).then_some(r.solution)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_feasible_system() {
        // x1 + x2 = 2, x1 - x2 = 0 -> x = (1, 1)
        let a = vec![vec![1.0, 1.0], vec![1.0, -1.0]];
        let b = vec![2.0, 0.0];
        let x = nonneg_solvable(&a, &b, 1e-9).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_system() {
        // x1 + x2 = -1 has no nonnegative solution
        let a = vec![vec![1.0, 1.0]];
        let b = vec![-1.0];
        assert!(nonneg_solvable(&a, &b, 1e-9).is_none());
    }

    #[test]
    fn degenerate_rows_ok() {
        let a = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let b = vec![0.0, 3.0];
        let x = nonneg_solvable(&a, &b, 1e-9).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn underdetermined_membership() {
        // 1 equation, 3 unknowns
        let a = vec![vec![1.0, 2.0, -1.0]];
        let b = vec![4.0];
        let x = nonneg_solvable(&a, &b, 1e-9).unwrap();
        let lhs: f64 = x[0] + 2.0 * x[1] - x[2];
        assert!((lhs - 4.0).abs() < 1e-8);
        assert!(x.iter().all(|&v| v >= -1e-12));
    }
}
