//! Tolerance defaults, centralized so reports and the CLI agree.

use serde::Serialize;

/// Tolerances used across derivation, integration and verification.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Tolerances {
    /// Randomized zero-test threshold (scaled by expression magnitude).
    pub zero: f64,
    /// Discrete dynamics residual bound in the maximum-principle check.
    pub dyn_residual: f64,
    /// Slack allowed when comparing the running Hamiltonian to the control
    /// grid supremum.
    pub max_slack: f64,
    /// Numeric rank threshold for constraint Jacobians.
    pub rank: f64,
    /// Allowed variation of the Hamiltonian supremum along a base axis.
    /// Dominated by control-grid quantization: with the default 33-point
    /// grid the sup of a unit-curvature Hamiltonian wobbles by about
    /// (grid spacing / 2)^2 / 2 ~ 5e-4.
    pub sup_const: f64,
    /// Minimum costate norm for the nontriviality condition.
    pub nonzero: f64,
    /// Separator acceptance: max pairing with any cone generator.
    pub separation: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            zero: 1e-9,
            dyn_residual: 1e-6,
            max_slack: 1e-6,
            rank: 1e-8,
            sup_const: 1e-3,
            nonzero: 1e-9,
            separation: 1e-8,
        }
    }
}

impl Tolerances {
    /// Applies a `key=value` override as accepted by the CLI.
    pub fn set(&mut self, key: &str, value: f64) -> Result<(), String> {
        match key {
            "tol_zero" | "zero" => self.zero = value,
            "tol_dyn" | "dyn" => self.dyn_residual = value,
            "tol_max" | "max" => self.max_slack = value,
            "tol_rank" | "rank" => self.rank = value,
            "tol_const" | "const" => self.sup_const = value,
            "tol_nonzero" | "nonzero" => self.nonzero = value,
            "tol_sep" | "sep" => self.separation = value,
            other => return Err(format!("unknown tolerance key `{other}`")),
        }
        Ok(())
    }
}
