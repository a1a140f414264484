//! Bounded random-expression grammar for self-checks.
//!
//! Generates small trees over a fixed symbol pool with rational constants,
//! sums, products, powers and sin/cos. Used by the differentiation and
//! round-trip test suites; values and derivatives stay numerically tame so
//! finite-difference comparisons are meaningful.

use super::{Bindings, Expr};
use rand::Rng;

pub const SYMBOL_POOL: [&str; 4] = ["x1", "x2", "x3", "x4"];

/// Random expression of depth at most `depth`.
pub fn random_expr<R: Rng>(rng: &mut R, depth: usize) -> Expr {
    if depth == 0 {
        return leaf(rng);
    }
    match rng.random_range(0..10) {
        0..=2 => Expr::Sum((0..rng.random_range(2..=3)).map(|_| random_expr(rng, depth - 1)).collect()),
        3..=5 => Expr::Prod((0..rng.random_range(2..=3)).map(|_| random_expr(rng, depth - 1)).collect()),
        6 => Expr::Pow(Box::new(random_expr(rng, depth - 1)), rng.random_range(2..=3)),
        7 => Expr::Sin(Box::new(random_expr(rng, depth - 1))),
        8 => Expr::Cos(Box::new(random_expr(rng, depth - 1))),
        _ => leaf(rng),
    }
}

fn leaf<R: Rng>(rng: &mut R) -> Expr {
    match rng.random_range(0..4) {
        0 => Expr::num(rng.random_range(-3..=3)),
        1 => Expr::ratio(rng.random_range(-3..=3), rng.random_range(1..=4)),
        _ => Expr::sym(SYMBOL_POOL[rng.random_range(0..SYMBOL_POOL.len())]),
    }
}

/// Bindings for the full symbol pool, uniform in [-1.5, 1.5].
pub fn random_bindings<R: Rng>(rng: &mut R) -> Bindings {
    SYMBOL_POOL
        .iter()
        .map(|s| (s.to_string(), rng.random_range(-1.5..1.5)))
        .collect()
}

/// Draws (expression, bindings) pairs until the value and its neighborhood
/// are finite and moderately sized, so derivative and round-trip checks are
/// well-conditioned.
pub fn well_conditioned_case<R: Rng>(rng: &mut R, depth: usize) -> (Expr, Bindings) {
    loop {
        let e = random_expr(rng, depth);
        let b = random_bindings(rng);
        let Ok(v) = e.evaluate(&b) else { continue };
        if v.is_finite() && v.abs() < 1e3 {
            return (e, b);
        }
    }
}
