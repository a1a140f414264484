//! Explicit control systems on k base directions and their cost extension.
//!
//! A system holds the component table `X^i_A` of a k-vector field along the
//! projection from state-control space, a cost function, and a box of
//! admissible control values. Extension prepends one cost-accumulator
//! coordinate per base direction so that optimality becomes a statement
//! about terminal coordinates.

use crate::expr::{differentiate, Expr, ZeroProbe};
use crate::names;
use serde::Serialize;
use std::collections::BTreeSet;
use thiserror::Error;

/// Explicit k-symplectic control system.
///
/// Component expressions and the cost may reference states `q1..qn` and
/// controls `u1..ul` only; controls and base times are treated as constants
/// by the symbolic operators here (controls are piecewise constant by
/// assumption, and explicit systems are autonomous).
#[derive(Debug, Clone)]
pub struct ControlSystem {
    pub k: usize,
    pub n: usize,
    pub l: usize,
    /// `components[a][i]` is `X^{i+1}_{a+1}`.
    pub components: Vec<Vec<Expr>>,
    pub cost: Expr,
    /// Closed interval per control axis.
    pub control_box: Vec<(f64, f64)>,
}

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("component table must be {k} x {n}, got row {row} of length {len}")]
    ShapeMismatch {
        k: usize,
        n: usize,
        row: usize,
        len: usize,
    },
    #[error("expression references undeclared symbol `{0}`")]
    UndeclaredSymbol(String),
    #[error("control box interval {index} has lo > hi")]
    EmptyInterval { index: usize },
    #[error("cost is not invariant along the flow directions: assumption 1 fails for A in {failing:?}")]
    Assumption1Violated { failing: Vec<usize> },
}

impl ControlSystem {
    pub fn new(
        k: usize,
        n: usize,
        l: usize,
        components: Vec<Vec<Expr>>,
        cost: Expr,
        control_box: Vec<(f64, f64)>,
    ) -> Result<ControlSystem, SystemError> {
        if components.len() != k {
            return Err(SystemError::ShapeMismatch {
                k,
                n,
                row: components.len(),
                len: 0,
            });
        }
        for (row, comps) in components.iter().enumerate() {
            if comps.len() != n {
                return Err(SystemError::ShapeMismatch {
                    k,
                    n,
                    row,
                    len: comps.len(),
                });
            }
        }
        for (index, &(lo, hi)) in control_box.iter().enumerate() {
            if lo > hi {
                return Err(SystemError::EmptyInterval { index });
            }
        }
        let sys = ControlSystem {
            k,
            n,
            l,
            components,
            cost,
            control_box,
        };
        let declared = sys.declared_symbols();
        for e in sys.components.iter().flatten().chain([&sys.cost]) {
            for s in e.free_symbols() {
                if !declared.contains(&s) {
                    return Err(SystemError::UndeclaredSymbol(s));
                }
            }
        }
        Ok(sys)
    }

    fn declared_symbols(&self) -> BTreeSet<String> {
        let mut set = BTreeSet::new();
        for i in 1..=self.n {
            set.insert(names::state(i));
        }
        for a in 1..=self.l {
            set.insert(names::control(a));
        }
        set
    }

    pub fn component(&self, a: usize, i: usize) -> &Expr {
        &self.components[a - 1][i - 1]
    }
}

/// One residual of a symbolic check with its zero-test verdict.
#[derive(Debug, Clone, Serialize)]
pub struct Residual {
    pub label: String,
    pub expr: String,
    pub pass: bool,
}

/// Verdicts for the cost-invariance assumption and the bracket
/// compatibility diagnostic.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub assumption1: Vec<Residual>,
    pub compatibility: Vec<Residual>,
    pub assumption1_pass: bool,
    pub compatibility_pass: bool,
}

/// Lie derivative of the cost along each `X_A`:
/// `L_{X_A} F = sum_i X^i_A dF/dq^i`. All must vanish for the extension to
/// be consistent. Controls are not differentiated.
pub fn check_assumption1(sys: &ControlSystem, probe: &ZeroProbe) -> Vec<Residual> {
    (1..=sys.k)
        .map(|a| {
            let mut terms = Vec::new();
            for i in 1..=sys.n {
                let df = differentiate(&sys.cost, &names::state(i));
                terms.push(Expr::mul(vec![sys.component(a, i).clone(), df]));
            }
            let lie = Expr::add(terms);
            Residual {
                label: format!("L_X{a} F"),
                pass: probe.is_zero(&lie),
                expr: lie.to_string(),
            }
        })
        .collect()
}

/// Coordinate bracket residuals `[X_A, X_B]^i` with controls held fixed.
/// The underlying theory assumes integral sections exist through given
/// data; this surfaces the obstruction as a diagnostic. Vacuous for k = 1.
pub fn check_compatibility(sys: &ControlSystem, probe: &ZeroProbe) -> Vec<Residual> {
    let mut out = Vec::new();
    for a in 1..=sys.k {
        for b in (a + 1)..=sys.k {
            for i in 1..=sys.n {
                let mut terms = Vec::new();
                for j in 1..=sys.n {
                    let d_b = differentiate(sys.component(b, i), &names::state(j));
                    let d_a = differentiate(sys.component(a, i), &names::state(j));
                    terms.push(Expr::mul(vec![sys.component(a, j).clone(), d_b]));
                    terms.push(Expr::mul(vec![
                        Expr::num(-1),
                        sys.component(b, j).clone(),
                        d_a,
                    ]));
                }
                let bracket = Expr::add(terms);
                out.push(Residual {
                    label: format!("[X{a},X{b}]^{i}"),
                    pass: probe.is_zero(&bracket),
                    expr: bracket.to_string(),
                });
            }
        }
    }
    out
}

pub fn assumption_report(sys: &ControlSystem, probe: &ZeroProbe) -> AssumptionReport {
    let assumption1 = check_assumption1(sys, probe);
    let compatibility = check_compatibility(sys, probe);
    AssumptionReport {
        assumption1_pass: assumption1.iter().all(|r| r.pass),
        compatibility_pass: compatibility.iter().all(|r| r.pass),
        assumption1,
        compatibility,
    }
}

/// Control system with the cost accumulators prepended.
///
/// Extended coordinates are ordered `q0_1..q0_k, q1..qn`; the component
/// table has `X^{0_B}_A = F δ^B_A` followed by the original `X^i_A`.
#[derive(Debug, Clone)]
pub struct ExtendedSystem {
    pub base: ControlSystem,
    /// `k` rows of `k + n` canonical components.
    pub xhat: Vec<Vec<Expr>>,
}

impl ExtendedSystem {
    /// Extended coordinate names in table order.
    pub fn coordinate_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.base.k + self.base.n);
        for b in 1..=self.base.k {
            out.push(names::extended_state(b));
        }
        for i in 1..=self.base.n {
            out.push(names::state(i));
        }
        out
    }

    /// Component of the extended field along axis `a` in extended column
    /// `col` (0-based over [`Self::coordinate_names`] order).
    pub fn component(&self, a: usize, col: usize) -> &Expr {
        &self.xhat[a - 1][col]
    }
}

/// Builds the extended system. Requires assumption 1; the compatibility
/// diagnostic is reported separately and not enforced here.
pub fn extend_system(sys: &ControlSystem, probe: &ZeroProbe) -> Result<ExtendedSystem, SystemError> {
    let a1 = check_assumption1(sys, probe);
    let failing: Vec<usize> = a1
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.pass)
        .map(|(idx, _)| idx + 1)
        .collect();
    if !failing.is_empty() {
        return Err(SystemError::Assumption1Violated { failing });
    }
    let mut xhat = Vec::with_capacity(sys.k);
    for a in 1..=sys.k {
        let mut row = Vec::with_capacity(sys.k + sys.n);
        for b in 1..=sys.k {
            row.push(if a == b {
                sys.cost.canonicalize()
            } else {
                Expr::zero()
            });
        }
        for i in 1..=sys.n {
            row.push(sys.component(a, i).canonicalize());
        }
        xhat.push(row);
    }
    Ok(ExtendedSystem {
        base: sys.clone(),
        xhat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn probe() -> ZeroProbe {
        ZeroProbe::default()
    }

    fn quadratic_cost_system() -> ControlSystem {
        ControlSystem::new(
            2,
            2,
            2,
            vec![
                vec![parse("q2").unwrap(), parse("u1").unwrap()],
                vec![parse("u2").unwrap(), parse("q1").unwrap()],
            ],
            parse("1/2*u1^2 + 1/2*u2^2").unwrap(),
            vec![(-1.0, 1.0), (-1.0, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn control_quadratic_cost_passes_assumption1() {
        let sys = quadratic_cost_system();
        assert!(check_assumption1(&sys, &probe()).iter().all(|r| r.pass));
    }

    #[test]
    fn state_dependent_cost_fails_assumption1() {
        let sys = ControlSystem::new(
            1,
            1,
            0,
            vec![vec![Expr::one()]],
            parse("q1").unwrap(),
            vec![],
        )
        .unwrap();
        let rep = check_assumption1(&sys, &probe());
        assert!(!rep[0].pass);
        assert_eq!(rep[0].expr, "1");
        assert!(matches!(
            extend_system(&sys, &probe()),
            Err(SystemError::Assumption1Violated { .. })
        ));
    }

    #[test]
    fn directional_derivative_cancellation_passes() {
        // F = q1 q2 with X = (q1, -q2): L = q2 q1 + q1 (-q2) = 0
        let sys = ControlSystem::new(
            1,
            2,
            0,
            vec![vec![parse("q1").unwrap(), parse("-q2").unwrap()]],
            parse("q1*q2").unwrap(),
            vec![],
        )
        .unwrap();
        assert!(check_assumption1(&sys, &probe())[0].pass);
    }

    #[test]
    fn verdict_invariant_under_state_relabeling() {
        // same system with q1 <-> q2 swapped everywhere
        let sys = ControlSystem::new(
            1,
            2,
            0,
            vec![vec![parse("-q1").unwrap(), parse("q2").unwrap()]],
            parse("q2*q1").unwrap(),
            vec![],
        )
        .unwrap();
        assert!(check_assumption1(&sys, &probe())[0].pass);
    }

    #[test]
    fn compatibility_vacuous_for_k1_and_constant_fields() {
        let sys = ControlSystem::new(
            1,
            1,
            1,
            vec![vec![parse("u1").unwrap()]],
            Expr::zero(),
            vec![(0.0, 1.0)],
        )
        .unwrap();
        assert!(check_compatibility(&sys, &probe()).is_empty());

        let sys = ControlSystem::new(
            2,
            2,
            0,
            vec![
                vec![Expr::num(1), Expr::num(2)],
                vec![Expr::num(3), Expr::num(4)],
            ],
            Expr::zero(),
            vec![],
        )
        .unwrap();
        assert!(check_compatibility(&sys, &probe()).iter().all(|r| r.pass));
    }

    #[test]
    fn noncommuting_fields_fail_compatibility() {
        // X1 = (q2, 0), X2 = (0, q1): bracket expands to (-q1, q2)
        let sys = ControlSystem::new(
            2,
            2,
            0,
            vec![
                vec![parse("q2").unwrap(), Expr::zero()],
                vec![Expr::zero(), parse("q1").unwrap()],
            ],
            Expr::zero(),
            vec![],
        )
        .unwrap();
        let rep = check_compatibility(&sys, &probe());
        assert!(!rep.iter().all(|r| r.pass));
        let r1 = rep.iter().find(|r| r.label == "[X1,X2]^1").unwrap();
        assert_eq!(r1.expr, "-q1");
        let r2 = rep.iter().find(|r| r.label == "[X1,X2]^2").unwrap();
        assert_eq!(r2.expr, "q2");
    }

    #[test]
    fn extension_table_shape_and_values() {
        let sys = quadratic_cost_system();
        let ext = extend_system(&sys, &probe()).unwrap();
        // diagonal cost block, zero off-diagonal
        assert_eq!(ext.component(1, 0), &sys.cost.canonicalize());
        assert!(ext.component(1, 1).is_const_zero());
        assert!(ext.component(2, 0).is_const_zero());
        assert_eq!(ext.component(2, 1), &sys.cost.canonicalize());
        // q-block equals the base table structurally
        for a in 1..=2 {
            for i in 1..=2 {
                assert_eq!(
                    ext.component(a, 2 + i - 1),
                    &sys.component(a, i).canonicalize()
                );
            }
        }
    }

    #[test]
    fn zero_cost_extension_adds_zero_rows() {
        let sys = ControlSystem::new(
            1,
            1,
            1,
            vec![vec![parse("u1").unwrap()]],
            Expr::zero(),
            vec![(-1.0, 1.0)],
        )
        .unwrap();
        let ext = extend_system(&sys, &probe()).unwrap();
        assert!(ext.component(1, 0).is_const_zero());
    }

    #[test]
    fn undeclared_symbol_rejected() {
        let err = ControlSystem::new(
            1,
            1,
            0,
            vec![vec![parse("q7").unwrap()]],
            Expr::zero(),
            vec![],
        );
        assert!(matches!(err, Err(SystemError::UndeclaredSymbol(s)) if s == "q7"));
    }
}
