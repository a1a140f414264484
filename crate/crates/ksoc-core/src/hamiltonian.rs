//! Pontryagin Hamiltonians and the per-axis Hamilton/costate equations.
//!
//! For the extended system there is one Hamiltonian per base direction,
//! `H_A = p^A_{0_A} F + sum_j p^A_j X^j_A`, each affine in its own momenta.
//! Solving the per-axis equation and killing the off-diagonal momentum
//! directions (the time-block and state-block projection conditions) leaves
//! a determined right-hand-side table: costate momenta evolve only along
//! their own axis, cost momenta are constant, and the momentum equation is
//! exactly `-dH_A/dq^i`.

use crate::control::ExtendedSystem;
use crate::expr::{differentiate, Expr};
use crate::names;

/// Right-hand sides of the derived equations, indexed by sweep axis.
///
/// The off-diagonal policy is total: every entry with momentum superscript
/// `C != A` in direction `t^A` is identically zero and stored as such.
#[derive(Debug, Clone)]
pub struct HamiltonRhs {
    /// `extended_state[a][b]`: d q0_{b+1} / d t^{a+1} (= F on the diagonal).
    pub extended_state: Vec<Vec<Expr>>,
    /// `state[a][i]`: d q_{i+1} / d t^{a+1} (= X^i_A).
    pub state: Vec<Vec<Expr>>,
    /// `cost_momentum[a][c][b]`: d p^{c+1}_{0_{b+1}} / d t^{a+1} (always 0).
    pub cost_momentum: Vec<Vec<Vec<Expr>>>,
    /// `momentum[a][c][i]`: d p^{c+1}_{i+1} / d t^{a+1}.
    pub momentum: Vec<Vec<Vec<Expr>>>,
}

#[derive(Debug, Clone)]
pub struct DerivedHamiltonianSystem {
    pub ext: ExtendedSystem,
    /// `hamiltonians[a]` is `H_{a+1}`.
    pub hamiltonians: Vec<Expr>,
    pub rhs: HamiltonRhs,
}

/// `H_A = p^A_{0_A} F + sum_j p^A_j X^j_A` for each axis.
pub fn build_hamiltonians(ext: &ExtendedSystem) -> Vec<Expr> {
    let k = ext.base.k;
    let n = ext.base.n;
    (1..=k)
        .map(|a| {
            let mut terms = vec![Expr::mul(vec![
                Expr::sym(names::cost_momentum(a, a)),
                ext.base.cost.clone(),
            ])];
            for j in 1..=n {
                terms.push(Expr::mul(vec![
                    Expr::sym(names::momentum(a, j)),
                    ext.base.component(a, j).clone(),
                ]));
            }
            Expr::add(terms)
        })
        .collect()
}

/// Derives the full right-hand-side table and cross-checks each momentum
/// equation against the independent symbolic gradient `-dH_A/dq^i`.
pub fn derive_hamilton_equations(ext: &ExtendedSystem) -> DerivedHamiltonianSystem {
    let k = ext.base.k;
    let n = ext.base.n;
    let hamiltonians = build_hamiltonians(ext);

    let mut extended_state = Vec::with_capacity(k);
    let mut state = Vec::with_capacity(k);
    let mut cost_momentum = Vec::with_capacity(k);
    let mut momentum = Vec::with_capacity(k);

    for a in 1..=k {
        extended_state.push(
            (1..=k)
                .map(|b| {
                    if a == b {
                        ext.base.cost.canonicalize()
                    } else {
                        Expr::zero()
                    }
                })
                .collect(),
        );
        state.push(
            (1..=n)
                .map(|i| ext.base.component(a, i).canonicalize())
                .collect(),
        );

        cost_momentum.push(vec![vec![Expr::zero(); k]; k]);

        let mut mom_a = Vec::with_capacity(k);
        for c in 1..=k {
            if c != a {
                mom_a.push(vec![Expr::zero(); n]);
                continue;
            }
            let mut row = Vec::with_capacity(n);
            for i in 1..=n {
                let mut terms = vec![Expr::mul(vec![
                    Expr::num(-1),
                    Expr::sym(names::cost_momentum(a, a)),
                    differentiate(&ext.base.cost, &names::state(i)),
                ])];
                for j in 1..=n {
                    terms.push(Expr::mul(vec![
                        Expr::num(-1),
                        Expr::sym(names::momentum(a, j)),
                        differentiate(ext.base.component(a, j), &names::state(i)),
                    ]));
                }
                let entry = Expr::add(terms);
                let gradient = differentiate(&hamiltonians[a - 1], &names::state(i)).neg();
                debug_assert_eq!(entry, gradient, "momentum equation differs from -dH/dq");
                row.push(entry);
            }
            mom_a.push(row);
        }
        momentum.push(mom_a);
    }

    DerivedHamiltonianSystem {
        ext: ext.clone(),
        hamiltonians,
        rhs: HamiltonRhs {
            extended_state,
            state,
            cost_momentum,
            momentum,
        },
    }
}

/// Summed (Hamilton-De Donder-Weyl) momentum system and the symbolic
/// residuals certifying that the per-axis table satisfies it.
#[derive(Debug, Clone)]
pub struct HdwSum {
    /// `summed[i]`: required value of `sum_A (Y_A)^A_{i+1}`.
    pub summed: Vec<Expr>,
    /// `sum_A rhs(dp^A_i/dt^A) - summed[i]`, canonically zero.
    pub residuals: Vec<Expr>,
}

/// The summed system constrains only the trace of the per-axis momentum
/// equations, so it is weaker: any redistribution between axes with the
/// same sum also satisfies it.
pub fn build_hdw_sum(dhs: &DerivedHamiltonianSystem) -> HdwSum {
    let k = dhs.ext.base.k;
    let n = dhs.ext.base.n;
    let mut summed = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for i in 1..=n {
        let mut target_terms = Vec::new();
        for a in 1..=k {
            target_terms.push(Expr::mul(vec![
                Expr::num(-1),
                Expr::sym(names::cost_momentum(a, a)),
                differentiate(&dhs.ext.base.cost, &names::state(i)),
            ]));
            for j in 1..=n {
                target_terms.push(Expr::mul(vec![
                    Expr::num(-1),
                    Expr::sym(names::momentum(a, j)),
                    differentiate(dhs.ext.base.component(a, j), &names::state(i)),
                ]));
            }
        }
        let target = Expr::add(target_terms);
        let mut achieved = Vec::new();
        for a in 1..=k {
            achieved.push(dhs.rhs.momentum[a - 1][a - 1][i - 1].clone());
        }
        let residual = Expr::add(achieved) - target.clone();
        summed.push(target);
        residuals.push(residual);
    }
    HdwSum { summed, residuals }
}
