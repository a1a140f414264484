//! `ksoc`: derive, integrate and verify k-symplectic optimal control
//! problems from JSON problem files.
//!
//! Exit codes: 0 success, 2 usage, 3 validation, 4 derivation failure,
//! 5 verification failure.

mod problem;
mod report;
mod trajectory_io;

use clap::{Args, Parser, Subcommand};
use ksoc_core::config::Tolerances;
use ksoc_core::control::{assumption_report, extend_system};
use ksoc_core::expr::Expr;
use ksoc_core::grid::{ControlField, Grid, GridAxis};
use ksoc_core::hamiltonian::{build_hdw_sum, derive_hamilton_equations};
use ksoc_core::integrate::{
    functional_values, integrate_costate, integrate_hamilton_section, integrate_section,
    IntegrateOptions,
};
use ksoc_core::molecule::{
    builtin_molecule_problem, golden_record, integrate_molecule, MoleculeInitialData,
};
use ksoc_core::pmp::{verify_pmp, PmpOptions};
use ksoc_core::skinner_rusk::{
    build_unified_hamiltonian, constraint_algorithm, determined_field_table, free_velocities,
    initial_unified_state, rank_check,
};
use ksoc_core::ZeroProbe;
use problem::{ProblemFile, ProblemPath};
use report::{
    ExplicitDerivation, ImplicitDerivation, IntegrateResult, MoleculeResult, RunReport,
    VerifyResult,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ksoc",
    version,
    about = "k-symplectic optimal control: symbolic derivation, section integration, maximum-principle verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Seed for every randomized probe (zero tests, rank sampling).
    #[arg(long)]
    seed: Option<u64>,
    /// Emit the full JSON report on stdout instead of the text rendering.
    #[arg(long)]
    json: bool,
    /// Directory for report and trajectory files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tolerance overrides, e.g. --tol tol_dyn=1e-7 (repeatable).
    #[arg(long = "tol", value_name = "KEY=VAL")]
    tol: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Derive Hamiltonians and Hamilton equations (explicit path) or run
    /// the constraint algorithm (implicit path).
    Derive {
        #[arg(long)]
        problem: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Integrate an integral section over the problem's grid.
    Integrate {
        #[arg(long)]
        problem: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check a candidate trajectory against the five maximum-principle
    /// conditions. Exit code 0 iff all pass.
    PmpVerify {
        #[arg(long)]
        problem: PathBuf,
        /// Trajectory CSV (the JSON sidecar is looked up next to it).
        #[arg(long)]
        trajectory: PathBuf,
        /// Sidecar path override.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the built-in bipolar-molecule example and check every derived
    /// quantity against its reference table.
    ExampleMolecule {
        /// Also integrate the determined field: "start:end:steps,start:end:steps".
        #[arg(long, value_name = "GRIDSPEC")]
        integrate: Option<String>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Derivation(String),
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 3,
            CliError::Derivation(_) => 4,
            CliError::Verification(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Derivation(m) | CliError::Verification(m) => m,
        }
    }
}

fn validation(e: impl ToString) -> CliError {
    CliError::Validation(e.to_string())
}

fn derivation(e: impl ToString) -> CliError {
    CliError::Derivation(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Derive { problem, common } => cmd_derive(&problem, &common),
        Command::Integrate { problem, common } => cmd_integrate(&problem, &common),
        Command::PmpVerify {
            problem,
            trajectory,
            sidecar,
            common,
        } => cmd_pmp_verify(&problem, &trajectory, sidecar.as_deref(), &common),
        Command::ExampleMolecule { integrate, common } => {
            cmd_example_molecule(integrate.as_deref(), &common)
        }
    }
}

/// Applies CLI overrides on top of the problem file's settings.
fn effective_settings(
    pf: &ProblemFile,
    common: &CommonArgs,
) -> Result<(u64, Tolerances, ZeroProbe), CliError> {
    let seed = common.seed.unwrap_or(pf.seed);
    let mut tolerances = pf.tolerances;
    for kv in &common.tol {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| validation(format!("--tol expects KEY=VAL, got `{kv}`")))?;
        let value: f64 = value
            .parse()
            .map_err(|e| validation(format!("--tol {key}: {e}")))?;
        tolerances.set(key, value).map_err(validation)?;
    }
    let probe = ZeroProbe {
        seed,
        tol: tolerances.zero,
        ..ZeroProbe::default()
    };
    Ok((seed, tolerances, probe))
}

fn emit<T: serde::Serialize>(
    report: &RunReport<T>,
    text: &str,
    common: &CommonArgs,
) -> Result<(), CliError> {
    let json = report.to_json();
    if common.json {
        print!("{json}");
    } else {
        println!("{text}");
    }
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).map_err(validation)?;
        std::fs::write(dir.join("report.json"), &json).map_err(validation)?;
    }
    Ok(())
}

fn exprs_to_strings(row: &[Expr]) -> Vec<String> {
    row.iter().map(|e| e.to_string()).collect()
}

fn cmd_derive(path: &Path, common: &CommonArgs) -> Result<(), CliError> {
    let pf = problem::load(path).map_err(validation)?;
    let (seed, tolerances, probe) = effective_settings(&pf, common)?;
    match &pf.path {
        ProblemPath::Explicit(sys) => {
            let assumptions = assumption_report(sys, &probe);
            let ext = extend_system(sys, &probe).map_err(derivation)?;
            let dhs = derive_hamilton_equations(&ext);
            let hdw = build_hdw_sum(&dhs);
            let result = ExplicitDerivation {
                kind: "explicit",
                assumptions,
                hamiltonians: exprs_to_strings(&dhs.hamiltonians),
                extended_state_rhs: dhs.rhs.extended_state.iter().map(|r| exprs_to_strings(r)).collect(),
                state_rhs: dhs.rhs.state.iter().map(|r| exprs_to_strings(r)).collect(),
                momentum_rhs: (0..sys.k)
                    .map(|a| exprs_to_strings(&dhs.rhs.momentum[a][a]))
                    .collect(),
                hdw_residuals: exprs_to_strings(&hdw.residuals),
            };
            let mut text = String::from("derived Hamiltonians:\n");
            for (a, h) in result.hamiltonians.iter().enumerate() {
                text.push_str(&format!("  H_{} = {}\n", a + 1, h));
            }
            text.push_str("momentum equations (dp^A_i/dt^A):\n");
            for (a, row) in result.momentum_rhs.iter().enumerate() {
                for (i, e) in row.iter().enumerate() {
                    text.push_str(&format!("  dp{}_{} / dt{} = {}\n", a + 1, i + 1, a + 1, e));
                }
            }
            text.push_str(&format!(
                "assumption 1: {}; compatibility: {}",
                if result.assumptions.assumption1_pass { "pass" } else { "FAIL" },
                if result.assumptions.compatibility_pass { "pass" } else { "FAIL" },
            ));
            let report = RunReport::new("derive", seed, tolerances, result);
            emit(&report, &text, common)
        }
        ProblemPath::Implicit(p) => {
            let ds = constraint_algorithm(p, pf.max_generations, &probe, tolerances.rank)
                .map_err(derivation)?;
            let rank = rank_check(&ds, seed, tolerances.rank);
            let result = ImplicitDerivation {
                kind: "implicit",
                unified_hamiltonian: build_unified_hamiltonian(p).to_string(),
                solved: ds.solved.iter().map(|(k, v)| (k.clone(), v.to_string())).collect(),
                unsolved: ds.unsolved.iter().cloned().collect(),
                controls_solved: ds.controls_solved,
                components: ds
                    .components
                    .iter()
                    .map(|(k, v)| (k.clone(), v.to_string()))
                    .collect(),
                free_components: ds.free_components.iter().cloned().collect(),
                constraint_generations: ds
                    .constraint_generations
                    .iter()
                    .map(|g| g.iter().map(|c| c.to_string()).collect())
                    .collect(),
                stabilized: ds.stabilized,
                generations_run: ds.generations_run,
                rank,
            };
            let mut text = String::from("solved multipliers and controls:\n");
            for (k, v) in &result.solved {
                text.push_str(&format!("  {k} = {v}\n"));
            }
            text.push_str(&format!(
                "stabilized after {} generation(s); {} free component(s)",
                result.generations_run,
                result.free_components.len()
            ));
            let report = RunReport::new("derive", seed, tolerances, result);
            emit(&report, &text, common)
        }
    }
}

fn out_dir(common: &CommonArgs) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_integrate(path: &Path, common: &CommonArgs) -> Result<(), CliError> {
    let pf = problem::load(path).map_err(validation)?;
    let (seed, tolerances, probe) = effective_settings(&pf, common)?;
    let grid = pf
        .grid
        .clone()
        .ok_or_else(|| validation("integrate requires a `grid` section"))?;
    let opts = IntegrateOptions {
        seed,
        ..Default::default()
    };
    let dir = out_dir(common);
    std::fs::create_dir_all(&dir).map_err(validation)?;
    let csv_path = dir.join("trajectory.csv");
    let sidecar_path = dir.join("trajectory.json");

    let (result, text) = match &pf.path {
        ProblemPath::Explicit(sys) => {
            let control = pf
                .control
                .clone()
                .ok_or_else(|| validation("explicit integrate requires a `controls` section"))?;
            if control.dim() != sys.l {
                return Err(validation(format!(
                    "controls provide {} values per cell, system has l = {}",
                    control.dim(),
                    sys.l
                )));
            }
            if !control.within_box(&sys.control_box, 1e-12) {
                return Err(validation(
                    "control values leave the admissible box U".to_string(),
                ));
            }
            if pf.initial.q.len() != sys.n {
                return Err(validation(format!(
                    "initial.q must have {} entries, got {}",
                    sys.n,
                    pf.initial.q.len()
                )));
            }
            let ext = extend_system(sys, &probe).map_err(derivation)?;
            let dhs = derive_hamilton_equations(&ext);
            let traj = integrate_hamilton_section(&dhs, &grid, &control, &pf.initial.q, &opts, &probe)
                .map_err(derivation)?;
            let traj = match &pf.terminal {
                Some(covector) => {
                    let expected = sys.k * (sys.k + sys.n);
                    if covector.len() != expected {
                        return Err(validation(format!(
                            "terminal.covector must have {expected} entries, got {}",
                            covector.len()
                        )));
                    }
                    integrate_costate(&dhs, &traj, covector).map_err(derivation)?
                }
                None => traj,
            };
            let functionals =
                functional_values(&traj, &sys.cost, sys.l).map_err(derivation)?;
            trajectory_io::write_trajectory(&traj, &csv_path, &sidecar_path)
                .map_err(validation)?;
            let result = IntegrateResult {
                nodes: traj.grid.total_nodes(),
                mixed_defect: traj.mixed_defect,
                functional_total: functionals.total,
                accumulator_defect: functionals.accumulator_defect,
                constraint_drift: None,
                trajectory_csv: csv_path.display().to_string(),
                trajectory_sidecar: sidecar_path.display().to_string(),
            };
            let text = format!(
                "integrated {} nodes; mixed defect {:.3e}; functional {:.6}",
                result.nodes, result.mixed_defect, result.functional_total
            );
            (result, text)
        }
        ProblemPath::Implicit(p) => {
            let ds = constraint_algorithm(p, pf.max_generations, &probe, tolerances.rank)
                .map_err(derivation)?;
            let field = determined_field_table(&ds, &pf.free_components);
            let corner: Vec<f64> = grid.axes.iter().map(|ax| ax.start).collect();
            let frees = free_velocities(p, &probe).map_err(derivation)?;
            let mut free_v = pf.initial.free_v.clone();
            free_v.resize(frees.len(), 0.0);
            let initial = initial_unified_state(
                &ds,
                &corner,
                &pf.initial.q,
                &pf.initial.p,
                &free_v,
                &probe,
            )
            .map_err(derivation)?;
            let traj = integrate_section(&field, &grid, &ControlField::Constant(vec![]), &initial, &opts)
                .map_err(derivation)?;
            let functionals =
                functional_values(&traj, &p.lagrangian, 0).map_err(derivation)?;
            // constraint drift instrumentation
            let mut drift: f64 = 0.0;
            for idx in 0..grid.total_nodes() {
                let mi = grid.node_multi_index(idx);
                let t = grid.position(&mi);
                let mut b = ksoc_core::Bindings::new();
                for (c, v) in field.coords.iter().zip(&traj.states[idx]) {
                    b.insert(c.clone(), *v);
                }
                for (a, tv) in t.iter().enumerate() {
                    b.insert(ksoc_core::names::time(a + 1), *tv);
                }
                for psi in &p.constraints {
                    if let Ok(v) = psi.evaluate(&b) {
                        drift = drift.max(v.abs());
                    }
                }
            }
            trajectory_io::write_trajectory(&traj, &csv_path, &sidecar_path)
                .map_err(validation)?;
            let result = IntegrateResult {
                nodes: traj.grid.total_nodes(),
                mixed_defect: traj.mixed_defect,
                functional_total: functionals.total,
                accumulator_defect: functionals.accumulator_defect,
                constraint_drift: Some(drift),
                trajectory_csv: csv_path.display().to_string(),
                trajectory_sidecar: sidecar_path.display().to_string(),
            };
            let text = format!(
                "integrated {} nodes; mixed defect {:.3e}; constraint drift {:.3e}; functional {:.6}",
                result.nodes,
                result.mixed_defect,
                drift,
                result.functional_total
            );
            (result, text)
        }
    };
    let report = RunReport::new("integrate", seed, tolerances, result);
    emit(&report, &text, common)
}

fn cmd_pmp_verify(
    path: &Path,
    trajectory: &Path,
    sidecar: Option<&Path>,
    common: &CommonArgs,
) -> Result<(), CliError> {
    let pf = problem::load(path).map_err(validation)?;
    let (seed, tolerances, probe) = effective_settings(&pf, common)?;
    let ProblemPath::Explicit(sys) = &pf.path else {
        return Err(validation(
            "pmp-verify operates on the explicit path; provide a `system` section",
        ));
    };
    let sidecar_path = match sidecar {
        Some(p) => p.to_path_buf(),
        None => trajectory.with_extension("json"),
    };
    let candidate =
        trajectory_io::read_trajectory(trajectory, &sidecar_path).map_err(validation)?;
    let ext = extend_system(sys, &probe).map_err(derivation)?;
    let dhs = derive_hamilton_equations(&ext);
    let opts = PmpOptions {
        tolerances,
        ..Default::default()
    };
    let pmp_report = verify_pmp(&dhs, &candidate, &opts).map_err(derivation)?;
    let pass = pmp_report.pass;
    let mut text = String::new();
    for c in &pmp_report.conditions {
        text.push_str(&format!(
            "condition {} axis {}: {} (max residual {:.3e}, violations {:.2}%)\n",
            c.condition,
            c.axis,
            if c.pass { "pass" } else { "FAIL" },
            c.max_residual,
            100.0 * c.violation_fraction
        ));
    }
    text.push_str(if pass { "verdict: PASS" } else { "verdict: FAIL" });
    let report = RunReport::new(
        "pmp-verify",
        seed,
        tolerances,
        VerifyResult {
            report: pmp_report,
            pass,
        },
    );
    emit(&report, &text, common)?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Verification(
            "maximum-principle conditions failed".into(),
        ))
    }
}

fn parse_gridspec(spec: &str) -> Result<Grid, CliError> {
    let mut axes = Vec::new();
    for (i, part) in spec.split(',').enumerate() {
        let fields: Vec<&str> = part.split(':').collect();
        if fields.len() != 3 {
            return Err(validation(format!(
                "grid spec axis {i}: expected start:end:steps, got `{part}`"
            )));
        }
        let start: f64 = fields[0]
            .parse()
            .map_err(|e| validation(format!("grid spec axis {i} start: {e}")))?;
        let end: f64 = fields[1]
            .parse()
            .map_err(|e| validation(format!("grid spec axis {i} end: {e}")))?;
        let steps: usize = fields[2]
            .parse()
            .map_err(|e| validation(format!("grid spec axis {i} steps: {e}")))?;
        axes.push(GridAxis { start, end, steps });
    }
    Grid::new(axes).map_err(validation)
}

fn cmd_example_molecule(integrate: Option<&str>, common: &CommonArgs) -> Result<(), CliError> {
    let seed = common.seed.unwrap_or(0);
    let mut tolerances = Tolerances::default();
    for kv in &common.tol {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| validation(format!("--tol expects KEY=VAL, got `{kv}`")))?;
        let value: f64 = value
            .parse()
            .map_err(|e| validation(format!("--tol {key}: {e}")))?;
        tolerances.set(key, value).map_err(validation)?;
    }
    let probe = ZeroProbe {
        seed,
        tol: tolerances.zero,
        ..ZeroProbe::default()
    };
    let problem = builtin_molecule_problem(&probe);
    let ds = constraint_algorithm(&problem, 8, &probe, tolerances.rank).map_err(derivation)?;
    let golden = golden_record(&ds);
    let golden_pass = golden.pass;

    let integration = match integrate {
        None => None,
        Some(spec) => {
            let grid = parse_gridspec(spec)?;
            if grid.k() != 2 {
                return Err(validation("molecule grid spec needs exactly 2 axes"));
            }
            let dir = out_dir(common);
            std::fs::create_dir_all(&dir).map_err(validation)?;
            let csv_path = dir.join("trajectory.csv");
            let sidecar_path = dir.join("trajectory.json");
            let opts = IntegrateOptions {
                seed,
                ..Default::default()
            };
            let run = integrate_molecule(
                &ds,
                &grid,
                &MoleculeInitialData::default(),
                &BTreeMap::new(),
                &opts,
                &probe,
            )
            .map_err(derivation)?;
            trajectory_io::write_trajectory(&run.trajectory, &csv_path, &sidecar_path)
                .map_err(validation)?;
            Some(IntegrateResult {
                nodes: run.trajectory.grid.total_nodes(),
                mixed_defect: run.trajectory.mixed_defect,
                functional_total: run.functionals.total,
                accumulator_defect: run.functionals.accumulator_defect,
                constraint_drift: Some(run.constraint_drift),
                trajectory_csv: csv_path.display().to_string(),
                trajectory_sidecar: sidecar_path.display().to_string(),
            })
        }
    };

    let mut text = String::new();
    for item in &golden.items {
        text.push_str(&format!(
            "{} {}: {}\n",
            if item.pass { "ok " } else { "FAIL" },
            item.name,
            if item.kind == ksoc_core::molecule::GoldenKind::Assignment {
                format!("{} (expected {})", item.derived, item.expected)
            } else {
                format!("reduces to {}", item.derived)
            }
        ));
    }
    text.push_str(&format!(
        "golden record: {} ({} items)",
        if golden_pass { "PASS" } else { "FAIL" },
        golden.items.len()
    ));
    let report = RunReport::new(
        "example-molecule",
        seed,
        tolerances,
        MoleculeResult {
            golden,
            integration,
        },
    );
    emit(&report, &text, common)?;
    if golden_pass {
        Ok(())
    } else {
        Err(CliError::Verification(
            "golden record does not match the reference table".into(),
        ))
    }
}
