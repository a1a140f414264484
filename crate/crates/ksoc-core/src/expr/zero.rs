//! Randomized zero testing.
//!
//! Canonical form decides most identities of the fragment outright; the
//! residual cases are probed numerically at random bindings. The error is
//! one-sided: a nonzero expression may in principle be declared zero (the
//! probability vanishes for trigonometric polynomials), but a zero
//! expression is never declared nonzero on a finite evaluation.

use super::{Bindings, Expr};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Probing configuration. The seed makes every verdict reproducible.
#[derive(Debug, Clone, Copy)]
pub struct ZeroProbe {
    pub seed: u64,
    pub tol: f64,
    pub points: usize,
}

impl Default for ZeroProbe {
    fn default() -> Self {
        ZeroProbe {
            seed: 0,
            tol: 1e-9,
            points: 32,
        }
    }
}

impl ZeroProbe {
    pub fn with_seed(seed: u64) -> ZeroProbe {
        ZeroProbe {
            seed,
            ..ZeroProbe::default()
        }
    }

    /// True if the canonical form is the constant 0, or if the value stays
    /// below `tol * (1 + scale)` at `points` independent random bindings
    /// drawn uniformly from [-2, 2] per symbol. The scale is the sum of
    /// absolute term values, so cancellation-heavy expressions are judged
    /// relative to their own magnitude.
    pub fn is_zero(&self, e: &Expr) -> bool {
        let c = e.canonicalize();
        if c.is_const_zero() {
            return true;
        }
        let symbols: Vec<String> = c.free_symbols().into_iter().collect();
        let terms = c.terms();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut accepted = 0;
        let mut attempts = 0;
        let attempt_budget = self.points * 16;
        while accepted < self.points && attempts < attempt_budget {
            attempts += 1;
            let b: Bindings = symbols
                .iter()
                .map(|s| (s.clone(), rng.random_range(-2.0..2.0)))
                .collect();
            let mut value = 0.0;
            let mut scale = 0.0;
            let mut finite = true;
            for t in &terms {
                match t.evaluate(&b) {
                    Ok(v) if v.is_finite() => {
                        value += v;
                        scale += v.abs();
                    }
                    _ => {
                        finite = false;
                        break;
                    }
                }
            }
            if !finite || scale > 1e12 {
                // singular or wildly scaled binding; resample
                continue;
            }
            if value.abs() > self.tol * (1.0 + scale) {
                return false;
            }
            accepted += 1;
        }
        accepted == self.points
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn probe() -> ZeroProbe {
        ZeroProbe::default()
    }

    #[test]
    fn pythagorean_identity() {
        let e = parse("sin(th)^2 + cos(th)^2 - 1").unwrap();
        assert!(probe().is_zero(&e));
    }

    #[test]
    fn commutativity() {
        let e = parse("q1*q2 - q2*q1").unwrap();
        assert!(probe().is_zero(&e));
    }

    #[test]
    fn double_angle_caught_by_probing_only() {
        // sin(2x) - 2 sin x cos x is not canonically zero in this fragment
        let e = parse("sin(2*th) - 2*sin(th)*cos(th)").unwrap();
        assert!(!e.canonicalize().is_const_zero());
        assert!(probe().is_zero(&e));
    }

    #[test]
    fn incomplete_control_formula_is_nonzero() {
        // the solved control minus only its first term leaves the
        // p2_5 q1 cos t2 term, which probing rejects as nonzero
        let solved = parse("p2_6*q2*cos(t2) + p2_5*q1*cos(t2)").unwrap();
        let truncated = parse("p2_6*q2*cos(t2)").unwrap();
        assert!(!probe().is_zero(&(solved.clone() - truncated)));
        // while subtracting the full formula is exactly zero
        assert!(probe().is_zero(&(solved.clone() - solved)));
    }

    #[test]
    fn reciprocal_identities_probe_with_resampling() {
        // (q1+q2)^-1 * (q1+q2) - 1 is zero but not canonically so
        let e = parse("(q1 + q2)^-1 * (q1 + q2) - 1").unwrap();
        assert!(!e.canonicalize().is_const_zero());
        assert!(probe().is_zero(&e));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let e = parse("q1^3 - q2").unwrap();
        let p = ZeroProbe::with_seed(42);
        assert_eq!(p.is_zero(&e), p.is_zero(&e));
        assert!(!p.is_zero(&e));
    }
}
