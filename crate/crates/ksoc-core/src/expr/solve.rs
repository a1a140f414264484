//! Symbolic Gaussian elimination over the expression field.
//!
//! Equations must be affine in the unknowns; coefficients may be arbitrary
//! expressions of the remaining symbols. Pivots are accepted only when the
//! zero probe rejects them, so structurally-nonzero-but-vanishing
//! coefficients never divide. Solutions may be parametric: an assignment is
//! allowed to reference unknowns that end up unsolved.

use super::diff::subst_one;
use super::{differentiate, Expr, ZeroProbe};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Outcome of [`solve_linear`].
#[derive(Debug, Clone)]
pub struct LinearSolveResult {
    /// Solved unknowns; substituting these into the input equations and
    /// canonicalizing yields zero modulo `residuals`.
    pub assignments: BTreeMap<String, Expr>,
    /// Unknowns with no accepted pivot.
    pub unsolved: BTreeSet<String>,
    /// Equations left over once every solvable unknown is eliminated; each
    /// is semantically zero on the solution set.
    pub residuals: Vec<Expr>,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("equation {equation} is not affine in unknown `{unknown}`")]
    NonAffine { equation: usize, unknown: String },
    #[error("inconsistent system: residual constant {residual}")]
    Inconsistent { residual: Expr },
}

/// Solves `equations = 0` for `unknowns` by pivoting elimination.
///
/// Unknowns are processed in the given order; for each, the equation with
/// the simplest nonzero coefficient is chosen (constants first, then
/// monomials, then anything the probe accepts). Passes repeat until no new
/// unknown can be solved, so substitutions that re-introduce an earlier
/// unknown are picked up.
pub fn solve_linear(
    equations: &[Expr],
    unknowns: &[String],
    probe: &ZeroProbe,
) -> Result<LinearSolveResult, SolveError> {
    let mut eqs: Vec<Expr> = equations.iter().map(Expr::canonicalize).collect();

    for (idx, eq) in eqs.iter().enumerate() {
        for (i, xi) in unknowns.iter().enumerate() {
            if !eq.contains_symbol(xi) {
                continue;
            }
            let di = differentiate(eq, xi);
            for xj in &unknowns[i..] {
                let dij = differentiate(&di, xj);
                if !probe.is_zero(&dij) {
                    return Err(SolveError::NonAffine {
                        equation: idx,
                        unknown: xj.clone(),
                    });
                }
            }
        }
    }

    let mut assignments: BTreeMap<String, Expr> = BTreeMap::new();
    loop {
        let mut progressed = false;
        for x in unknowns {
            if assignments.contains_key(x) {
                continue;
            }
            let mut best: Option<(u8, usize, usize, Expr)> = None;
            for (idx, eq) in eqs.iter().enumerate() {
                if !eq.contains_symbol(x) {
                    continue;
                }
                let coeff = differentiate(eq, x);
                if coeff.is_const_zero() || probe.is_zero(&coeff) {
                    continue;
                }
                let score = pivot_score(&coeff);
                let size = coeff.node_count();
                let candidate = (score, size, idx, coeff);
                let better = match &best {
                    None => true,
                    Some((s, n, i, _)) => {
                        (candidate.0, candidate.1, candidate.2) < (*s, *n, *i)
                    }
                };
                if better {
                    best = Some(candidate);
                }
            }
            let Some((_, _, idx, coeff)) = best else {
                continue;
            };
            // Affine in x: eq = coeff * x + rest, rest = eq|_{x -> 0}.
            let rest = subst_one(&eqs[idx], x, &Expr::zero());
            let solved = Expr::mul(vec![Expr::num(-1), rest, invert(&coeff)]);
            for eq in eqs.iter_mut() {
                if eq.contains_symbol(x) {
                    *eq = subst_one(eq, x, &solved);
                }
            }
            for val in assignments.values_mut() {
                if val.contains_symbol(x) {
                    *val = subst_one(val, x, &solved);
                }
            }
            assignments.insert(x.clone(), solved);
            progressed = true;
        }
        if !progressed {
            break;
        }
    }

    let unsolved: BTreeSet<String> = unknowns
        .iter()
        .filter(|x| !assignments.contains_key(*x))
        .cloned()
        .collect();

    let mut residuals = Vec::new();
    for eq in eqs {
        if eq.is_const_zero() {
            continue;
        }
        if let Expr::Num(r) = &eq {
            if !r.is_zero() {
                return Err(SolveError::Inconsistent { residual: eq });
            }
        }
        residuals.push(eq);
    }

    Ok(LinearSolveResult {
        assignments,
        unsolved,
        residuals,
    })
}

fn pivot_score(coeff: &Expr) -> u8 {
    match coeff {
        Expr::Num(_) => 0,
        Expr::Sum(_) => 2,
        _ => 1,
    }
}

/// Reciprocal of a canonical expression. Monomials invert exactly (the
/// coefficient flips, every exponent negates); sums become reciprocal atoms.
fn invert(e: &Expr) -> Expr {
    match e {
        Expr::Num(r) => Expr::Num(r.recip()),
        Expr::Sym(_) | Expr::Sin(_) | Expr::Cos(_) => Expr::Pow(Box::new(e.clone()), -1),
        Expr::Pow(b, exp) => Expr::Pow(b.clone(), -exp),
        Expr::Prod(fs) => {
            let inverted: Vec<Expr> = fs.iter().map(invert).collect();
            Expr::mul(inverted)
        }
        Expr::Sum(_) => Expr::Pow(Box::new(e.clone()), -1),
    }
}

impl LinearSolveResult {
    /// Applies the assignments to an expression.
    pub fn apply(&self, e: &Expr) -> Expr {
        super::substitute(e, &self.assignments)
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn solve(eqs: &[&str], unknowns: &[&str]) -> LinearSolveResult {
        let eqs: Vec<Expr> = eqs.iter().map(|s| parse(s).unwrap()).collect();
        solve_linear(&eqs, &names(unknowns), &ZeroProbe::default()).unwrap()
    }

    #[test]
    fn single_multiplier() {
        let r = solve(&["lam1 + p1_1"], &["lam1"]);
        assert_eq!(r.assignments["lam1"], parse("-p1_1").unwrap());
        assert!(r.unsolved.is_empty());
        assert!(r.residuals.is_empty());
    }

    #[test]
    fn molecule_control_block() {
        let r = solve(
            &[
                "lam7*q2*cos(t2) + lam8*q1*cos(t2) - u1",
                "lam7 - p2_6",
                "lam8 - p2_5",
            ],
            &["lam7", "lam8", "u1"],
        );
        assert_eq!(r.assignments["lam7"], parse("p2_6").unwrap());
        assert_eq!(r.assignments["lam8"], parse("p2_5").unwrap());
        assert_eq!(
            r.assignments["u1"],
            parse("p2_6*q2*cos(t2) + p2_5*q1*cos(t2)").unwrap()
        );
    }

    #[test]
    fn degenerate_equation_leaves_unknown_unsolved() {
        let r = solve(&["x - x"], &["x"]);
        assert!(r.assignments.is_empty());
        assert_eq!(r.unsolved.len(), 1);
        assert!(r.residuals.is_empty());
    }

    #[test]
    fn residual_without_unknowns() {
        // second equation reduces to a pure constraint on p's
        let r = solve(&["lam1 - p1_5", "lam1 + p2_3"], &["lam1"]);
        assert_eq!(r.assignments["lam1"], parse("p1_5").unwrap());
        assert_eq!(r.residuals.len(), 1);
        assert_eq!(r.residuals[0], parse("p1_5 + p2_3").unwrap());
    }

    #[test]
    fn parametric_solution_keeps_free_unknowns() {
        // one equation, two unknowns: a + b - c = 0 solves a = c - b, b free
        let r = solve(&["a + b - c"], &["a", "b"]);
        assert_eq!(r.assignments["a"], parse("c - b").unwrap());
        assert!(r.unsolved.contains("b"));
    }

    #[test]
    fn inconsistent_detected() {
        let eqs: Vec<Expr> = vec![parse("x - 1").unwrap(), parse("x - 2").unwrap()];
        let err = solve_linear(&eqs, &names(&["x"]), &ZeroProbe::default());
        assert!(matches!(err, Err(SolveError::Inconsistent { .. })));
    }

    #[test]
    fn non_affine_rejected() {
        let eqs = vec![parse("x^2 - 1").unwrap()];
        let err = solve_linear(&eqs, &names(&["x"]), &ZeroProbe::default());
        assert!(matches!(err, Err(SolveError::NonAffine { .. })));
    }

    #[test]
    fn solutions_satisfy_inputs() {
        let eqs = vec![
            parse("2*x + y - q1").unwrap(),
            parse("x - y + sin(t1)").unwrap(),
        ];
        let r = solve_linear(&eqs, &names(&["x", "y"]), &ZeroProbe::default()).unwrap();
        for eq in &eqs {
            let back = r.apply(eq);
            assert!(
                ZeroProbe::default().is_zero(&back),
                "substituted equation nonzero: {back}"
            );
        }
    }
}
