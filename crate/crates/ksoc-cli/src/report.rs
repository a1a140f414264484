//! Machine-readable run reports.
//!
//! Reports are deterministic: all maps are ordered, floats serialize via
//! the shortest round-trip form, and nothing time- or host-dependent is
//! included, so identical inputs and seed produce byte-identical JSON.
//! Wall-clock timings go to the human-readable rendering only.

use ksoc_core::config::Tolerances;
use ksoc_core::control::AssumptionReport;
use ksoc_core::molecule::GoldenRecord;
use ksoc_core::pmp::PmpReport;
use ksoc_core::skinner_rusk::RankReport;
use serde::Serialize;
use std::collections::BTreeMap;

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Serialize)]
pub struct RunReport<T: Serialize> {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub result: T,
}

impl<T: Serialize> RunReport<T> {
    pub fn new(command: &'static str, seed: u64, tolerances: Tolerances, result: T) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            command,
            seed,
            tolerances,
            result,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Serialize)]
pub struct ExplicitDerivation {
    pub kind: &'static str, // "explicit"
    pub assumptions: AssumptionReport,
    pub hamiltonians: Vec<String>,
    /// Right-hand sides of the extended-state equations per axis.
    pub extended_state_rhs: Vec<Vec<String>>,
    pub state_rhs: Vec<Vec<String>>,
    /// Diagonal momentum equations per axis.
    pub momentum_rhs: Vec<Vec<String>>,
    /// Residuals of the summed-system check (all must be "0").
    pub hdw_residuals: Vec<String>,
}

#[derive(Serialize)]
pub struct ImplicitDerivation {
    pub kind: &'static str, // "implicit"
    pub unified_hamiltonian: String,
    pub solved: BTreeMap<String, String>,
    pub unsolved: Vec<String>,
    pub controls_solved: bool,
    pub components: BTreeMap<String, String>,
    pub free_components: Vec<String>,
    pub constraint_generations: Vec<Vec<String>>,
    pub stabilized: bool,
    pub generations_run: usize,
    pub rank: RankReport,
}

#[derive(Serialize)]
pub struct IntegrateResult {
    pub nodes: usize,
    pub mixed_defect: f64,
    pub functional_total: f64,
    pub accumulator_defect: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint_drift: Option<f64>,
    pub trajectory_csv: String,
    pub trajectory_sidecar: String,
}

#[derive(Serialize)]
pub struct VerifyResult {
    pub report: PmpReport,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct MoleculeResult {
    pub golden: GoldenRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integration: Option<IntegrateResult>,
}
