//! Needle variations, perturbation cones and maximum-principle verification.
//!
//! An elementary perturbation replaces the control on a shrinking slab
//! `t^A in [r - l s, r]` by a fixed value. Its first-order effect on the
//! section is the perturbation vector
//! `v = [X_A(sigma, u_A) - X_A(sigma, u(t))] l` evaluated at the slab's base
//! point; propagating such vectors along the axis flow and taking the closed
//! convex conic hull gives the tangent perturbation cone. A candidate is
//! rejected when the cost-decrease direction lies in the cone's interior;
//! otherwise a separating covector exists and seeds the costate.
//!
//! The verifier checks the five necessary conditions per axis on a sampled
//! candidate: the Hamilton equations hold discretely, the running
//! Hamiltonian attains (and keeps constant) its supremum over the control
//! box, the covector never vanishes, and the cost momenta are constant with
//! nonpositive diagonal.

mod lp;

use crate::config::Tolerances;
use crate::expr::{differentiate, CompiledExpr, Expr, SymbolTable};
use crate::grid::{ControlField, Grid, Trajectory};
use crate::hamiltonian::DerivedHamiltonianSystem;
use crate::integrate::{
    integrate_hamilton_section, integrate_line, FieldTable, IntegrateError, IntegrateOptions,
};
use crate::names;
use crate::ZeroProbe;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PmpError {
    #[error("perturbation base point lies outside the grid")]
    BasePointOutsideGrid,
    #[error("perturbation window [r - l s, r] leaves the axis interval")]
    WindowOutsideGrid,
    #[error("candidate trajectory carries no costates")]
    MissingCostates,
    #[error("cone has no generators above tolerance")]
    DegenerateCone,
    #[error("separation direction is zero")]
    ZeroDirection,
    #[error("finite-difference oracle needs s values with s2 = s1/2")]
    BadRichardsonPlan,
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

/// Needle data `{r_A, l_A, u_A}` on one axis.
#[derive(Debug, Clone)]
pub struct PerturbationData {
    pub axis: usize,
    /// Perturbation time `r_A`, interior to the axis interval.
    pub time: f64,
    /// Slab width multiplier `l_A >= 0`.
    pub width: f64,
    /// Replacement control value, inside the control box.
    pub control: Vec<f64>,
}

/// First-order section variation at a base point.
#[derive(Debug, Clone)]
pub struct PerturbationVector {
    pub axis: usize,
    /// Full base time (its `axis` component equals the perturbation time).
    pub base: Vec<f64>,
    /// Components in the extended tangent space (k + n values).
    pub components: Vec<f64>,
}

/// Replaces the control by `data.control` on the slab
/// `t^axis in [r - l s, r]`, spanning all other axes. `s = 0` or `l = 0`
/// return the base field unchanged.
pub fn perturb_control(
    control: &ControlField,
    grid: &Grid,
    data: &PerturbationData,
    s: f64,
) -> Result<ControlField, PmpError> {
    if s == 0.0 || data.width == 0.0 {
        return Ok(control.clone());
    }
    let ax = &grid.axes[data.axis];
    let lo = data.time - data.width * s;
    if lo < ax.start - 1e-12 || data.time > ax.end + 1e-12 {
        return Err(PmpError::WindowOutsideGrid);
    }
    Ok(ControlField::Perturbed {
        base: Box::new(control.clone()),
        axis: data.axis,
        lo,
        hi: data.time,
        value: data.control.clone(),
    })
}

/// Extended component vector `X_A(sigma, u)` at explicit state/control
/// values; the cost occupies slot `0_A`, other accumulator slots are zero.
fn extended_field_at(
    dhs: &DerivedHamiltonianSystem,
    axis: usize,
    state: &[f64],
    control: &[f64],
) -> Vec<f64> {
    let k = dhs.ext.base.k;
    let n = dhs.ext.base.n;
    let mut b = crate::Bindings::new();
    for i in 1..=n {
        b.insert(names::state(i), state[k + i - 1]);
    }
    for a in 1..=control.len() {
        b.insert(names::control(a), control[a - 1]);
    }
    let mut out = vec![0.0; k + n];
    out[axis - 1] = dhs.ext.base.cost.evaluate(&b).expect("cost bindings");
    for i in 1..=n {
        out[k + i - 1] = dhs
            .ext
            .base
            .component(axis, i)
            .evaluate(&b)
            .expect("component bindings");
    }
    out
}

/// Evaluates the displayed first-order formula at the base point `at`
/// (which must have `at[axis] = data.time`): field difference between the
/// needle value and the incumbent control, scaled by the width.
pub fn perturbation_vector(
    dhs: &DerivedHamiltonianSystem,
    trajectory: &Trajectory,
    data: &PerturbationData,
    at: &[f64],
) -> Result<PerturbationVector, PmpError> {
    let grid = &trajectory.grid;
    for (a, &t) in at.iter().enumerate() {
        let ax = &grid.axes[a];
        if t < ax.start - 1e-9 || t > ax.end + 1e-9 {
            return Err(PmpError::BasePointOutsideGrid);
        }
    }
    debug_assert!((at[data.axis] - data.time).abs() < 1e-9);
    let state = trajectory.interpolate(at);
    let incumbent = trajectory.control.value_at(grid, at);
    let axis1 = data.axis + 1;
    let f_needle = extended_field_at(dhs, axis1, &state, &data.control);
    let f_incumbent = extended_field_at(dhs, axis1, &state, &incumbent);
    let components = f_needle
        .iter()
        .zip(&f_incumbent)
        .map(|(a, b)| (a - b) * data.width)
        .collect();
    Ok(PerturbationVector {
        axis: data.axis,
        base: at.to_vec(),
        components,
    })
}

/// Re-integration oracle for the perturbation vector: first-order finite
/// difference `(sigma[pi^s](at) - sigma(at)) / s` Richardson-extrapolated
/// over `(s, s/2)`.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_vector_fd(
    dhs: &DerivedHamiltonianSystem,
    grid: &Grid,
    control: &ControlField,
    initial_q: &[f64],
    data: &PerturbationData,
    at: &[f64],
    s: f64,
    opts: &IntegrateOptions,
    probe: &ZeroProbe,
) -> Result<Vec<f64>, PmpError> {
    let base = integrate_hamilton_section(dhs, grid, control, initial_q, opts, probe)?;
    let base_state = base.interpolate(at);
    let quotient = |sv: f64| -> Result<Vec<f64>, PmpError> {
        let pc = perturb_control(control, grid, data, sv)?;
        let traj = integrate_hamilton_section(dhs, grid, &pc, initial_q, opts, probe)?;
        let st = traj.interpolate(at);
        Ok(st
            .iter()
            .zip(&base_state)
            .map(|(a, b)| (a - b) / sv)
            .collect())
    };
    let d1 = quotient(s)?;
    let d2 = quotient(s / 2.0)?;
    // difference quotients carry an O(s) bias; eliminate the linear term
    Ok(d2.iter().zip(&d1).map(|(f, c)| 2.0 * f - c).collect())
}

/// Pushes a perturbation vector along its axis flow to `to_time` by
/// integrating the variational equation `delta' = (dX_A/dsigma) delta`
/// jointly with the state.
pub fn propagate_vector(
    dhs: &DerivedHamiltonianSystem,
    trajectory: &Trajectory,
    v: &PerturbationVector,
    to_time: f64,
) -> Result<PerturbationVector, PmpError> {
    let k = dhs.ext.base.k;
    let n = dhs.ext.base.n;
    let dim = k + n;
    let axis1 = v.axis + 1;

    // joint field over [extended state, variation symbols]
    let mut coords = dhs.ext.coordinate_names();
    let var_names: Vec<String> = (0..dim).map(|c| format!("vv{c}")).collect();
    coords.extend(var_names.iter().cloned());
    let mut row: Vec<Expr> = Vec::with_capacity(2 * dim);
    for col in 0..dim {
        row.push(dhs.ext.component(axis1, col).clone());
    }
    let coord_names = dhs.ext.coordinate_names();
    for comp in 0..dim {
        let mut terms = Vec::new();
        for col in 0..dim {
            let jac = differentiate(dhs.ext.component(axis1, comp), &coord_names[col]);
            if jac.is_const_zero() {
                continue;
            }
            terms.push(Expr::mul(vec![jac, Expr::sym(var_names[col].clone())]));
        }
        row.push(Expr::add(terms));
    }
    let field = FieldTable {
        k,
        coords,
        controls: dhs.ext.base.l,
        components: vec![row],
    };

    let mut state: Vec<f64> = trajectory.interpolate(&v.base);
    state.extend_from_slice(&v.components);
    integrate_line(
        &field,
        &trajectory.grid,
        &trajectory.control,
        v.axis,
        0,
        &v.base,
        v.base[v.axis],
        to_time,
        &mut state,
    )?;
    let mut base = v.base.clone();
    base[v.axis] = to_time;
    Ok(PerturbationVector {
        axis: v.axis,
        base,
        components: state[dim..].to_vec(),
    })
}

/// Finite-generator approximation of the tangent perturbation cone at an
/// anchor time. Generators are stored as rays; the convex conic hull is
/// queried through nonnegative-combination feasibility.
#[derive(Debug, Clone)]
pub struct Cone {
    pub axis: usize,
    pub anchor: Vec<f64>,
    pub generators: Vec<Vec<f64>>,
    pub tol: f64,
}

/// Sampling plan for cone construction: perturbation times below the
/// anchor and a uniform grid over the control box. Widths are fixed to 1;
/// perturbation vectors scale linearly in the width, so rays are unchanged.
#[derive(Debug, Clone, Copy)]
pub struct ConeSamplingPlan {
    pub time_samples: usize,
    pub controls_per_axis: usize,
}

impl Default for ConeSamplingPlan {
    fn default() -> Self {
        ConeSamplingPlan {
            time_samples: 8,
            controls_per_axis: 5,
        }
    }
}

fn control_grid(control_box: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let mut points: Vec<Vec<f64>> = vec![vec![]];
    for &(lo, hi) in control_box {
        let mut next = Vec::new();
        for base in &points {
            for j in 0..per_axis {
                let frac = if per_axis == 1 {
                    0.5
                } else {
                    j as f64 / (per_axis - 1) as f64
                };
                let mut v = base.clone();
                v.push(lo + (hi - lo) * frac);
                next.push(v);
            }
        }
        points = next;
    }
    points
}

/// Builds the cone at `anchor` for one axis by sampling needle data over
/// (time, control value) pairs and propagating each vector to the anchor.
pub fn build_cone(
    dhs: &DerivedHamiltonianSystem,
    trajectory: &Trajectory,
    axis: usize,
    anchor: &[f64],
    plan: &ConeSamplingPlan,
    tol: f64,
) -> Result<Cone, PmpError> {
    let grid = &trajectory.grid;
    let ax = &grid.axes[axis];
    let t_anchor = anchor[axis];
    let controls = control_grid(&dhs.ext.base.control_box, plan.controls_per_axis);
    let mut generators = Vec::new();
    for j in 0..plan.time_samples {
        let r = ax.start + (j as f64 + 0.5) / plan.time_samples as f64 * (t_anchor - ax.start);
        let mut at = anchor.to_vec();
        at[axis] = r;
        for u in &controls {
            let data = PerturbationData {
                axis,
                time: r,
                width: 1.0,
                control: u.clone(),
            };
            let v = perturbation_vector(dhs, trajectory, &data, &at)?;
            let norm: f64 = v.components.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                continue;
            }
            let pushed = propagate_vector(dhs, trajectory, &v, t_anchor)?;
            generators.push(pushed.components);
        }
    }
    Ok(Cone {
        axis,
        anchor: anchor.to_vec(),
        generators,
        tol,
    })
}

impl Cone {
    /// Nonnegative-combination membership of a vector (closed hull query).
    pub fn contains(&self, v: &[f64]) -> bool {
        let dim = v.len();
        let normalized: Vec<Vec<f64>> = self
            .generators
            .iter()
            .filter_map(|g| {
                let n: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                (n > self.tol).then(|| g.iter().map(|x| x / n).collect())
            })
            .collect();
        if normalized.is_empty() {
            return v.iter().all(|x| x.abs() <= self.tol);
        }
        let vnorm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm <= self.tol {
            return true;
        }
        let vv: Vec<f64> = v.iter().map(|x| x / vnorm).collect();
        let a: Vec<Vec<f64>> = (0..dim)
            .map(|r| normalized.iter().map(|g| g[r]).collect())
            .collect();
        lp::nonneg_solvable(&a, &vv, self.tol.max(1e-7)).is_some()
    }
}

/// Outcome of the separation test.
#[derive(Debug, Clone)]
pub enum SeparationOutcome {
    /// The direction lies in the interior of the cone; when available, a
    /// nonnegative combination witnessing membership is attached.
    Interior { combination: Option<Vec<f64>> },
    /// A unit covector with nonnegative pairing against the direction and
    /// nonpositive pairing against every generator.
    Separator { covector: Vec<f64> },
}

/// Decides whether `d` is interior to the cone, or produces a separating
/// covector. Exact dichotomy: `d` fails to be interior exactly when the
/// polar cone meets the closed half-space `{<.,d> >= 0}` away from zero,
/// which is searched coordinate-by-coordinate through small feasibility
/// programs.
pub fn separation_test(cone: &Cone, d: &[f64]) -> Result<SeparationOutcome, PmpError> {
    let dim = d.len();
    let dnorm: f64 = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    if dnorm <= 0.0 {
        return Err(PmpError::ZeroDirection);
    }
    let dd: Vec<f64> = d.iter().map(|x| x / dnorm).collect();
    let gens: Vec<Vec<f64>> = cone
        .generators
        .iter()
        .filter_map(|g| {
            let n: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            (n > cone.tol).then(|| g.iter().map(|x| x / n).collect())
        })
        .collect();
    if gens.is_empty() {
        return Err(PmpError::DegenerateCone);
    }
    let m = gens.len();

    // Feasibility: beta = bp - bm, g_i . beta + s_i = 0, d . beta - s_d = 0,
    // sign * beta_j = 1. Variables: [bp(dim), bm(dim), s(m), s_d].
    let ncols = 2 * dim + m + 1;
    for j in 0..dim {
        for sign in [1.0, -1.0] {
            let mut a = Vec::with_capacity(m + 2);
            let mut b = Vec::with_capacity(m + 2);
            for g in &gens {
                let mut row = vec![0.0; ncols];
                for c in 0..dim {
                    row[c] = g[c];
                    row[dim + c] = -g[c];
                }
                let slack_idx = 2 * dim + a.len();
                row[slack_idx] = 1.0;
                a.push(row);
                b.push(0.0);
            }
            let mut drow = vec![0.0; ncols];
            for c in 0..dim {
                drow[c] = dd[c];
                drow[dim + c] = -dd[c];
            }
            drow[2 * dim + m] = -1.0;
            a.push(drow);
            b.push(0.0);
            let mut nrow = vec![0.0; ncols];
            nrow[j] = sign;
            nrow[dim + j] = -sign;
            a.push(nrow);
            b.push(1.0);

            if let Some(x) = lp::nonneg_solvable(&a, &b, 1e-8) {
                let beta: Vec<f64> = (0..dim).map(|c| x[c] - x[dim + c]).collect();
                let bn: f64 = beta.iter().map(|v| v * v).sum::<f64>().sqrt();
                if bn < 1e-9 {
                    continue;
                }
                let unit: Vec<f64> = beta.iter().map(|v| v / bn).collect();
                // polish against the stored (unnormalized) generators: the
                // vertex may carry simplex roundoff
                let max_pair = cone
                    .generators
                    .iter()
                    .map(|g| g.iter().zip(&unit).map(|(a, b)| a * b).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                let d_pair: f64 = dd.iter().zip(&unit).map(|(a, b)| a * b).sum();
                if max_pair <= cone.tol && d_pair >= -cone.tol {
                    return Ok(SeparationOutcome::Separator { covector: unit });
                }
            }
        }
    }

    // interior: attach a membership certificate when the solver finds one
    let a: Vec<Vec<f64>> = (0..dim)
        .map(|r| gens.iter().map(|g| g[r]).collect())
        .collect();
    let combination = lp::nonneg_solvable(&a, &dd, 1e-7);
    Ok(SeparationOutcome::Interior { combination })
}

// ---------------------------------------------------------------------------
// Maximum-principle verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PmpOptions {
    pub tolerances: Tolerances,
    /// Uniform points per control axis for the supremum search.
    pub control_grid_points: usize,
    /// Fraction of nodes allowed to violate a pointwise condition
    /// (discrete stand-in for "almost everywhere").
    pub violation_budget: f64,
}

impl Default for PmpOptions {
    fn default() -> Self {
        PmpOptions {
            tolerances: Tolerances::default(),
            control_grid_points: 33,
            violation_budget: 0.02,
        }
    }
}

/// Verdict for one theorem condition on one axis.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub condition: u8,
    pub axis: usize,
    pub pass: bool,
    pub max_residual: f64,
    pub violation_fraction: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PmpReport {
    pub conditions: Vec<ConditionReport>,
    pub pass: bool,
}

struct NodeEval<'a> {
    traj: &'a Trajectory,
    table: SymbolTable,
    dim_state: usize,
    dim_mom: usize,
    k: usize,
}

impl<'a> NodeEval<'a> {
    fn new(dhs: &'a DerivedHamiltonianSystem, traj: &'a Trajectory) -> NodeEval<'a> {
        let mut table = SymbolTable::new();
        for c in &traj.coord_names {
            table.intern(c);
        }
        for m in &traj.momenta_names {
            table.intern(m);
        }
        let k = dhs.ext.base.k;
        for a in 1..=k {
            table.intern(&names::time(a));
        }
        for u in 1..=dhs.ext.base.l {
            table.intern(&names::control(u));
        }
        NodeEval {
            traj,
            dim_state: traj.coord_names.len(),
            dim_mom: traj.momenta_names.len(),
            table,
            k,
        }
    }

    fn fill(&self, idx: usize, slots: &mut [f64]) {
        let momenta = self.traj.momenta.as_ref().expect("costates checked");
        slots[..self.dim_state].copy_from_slice(&self.traj.states[idx]);
        slots[self.dim_state..self.dim_state + self.dim_mom].copy_from_slice(&momenta[idx]);
        let mi = self.traj.grid.node_multi_index(idx);
        let t = self.traj.grid.position(&mi);
        for (a, &tv) in t.iter().enumerate() {
            slots[self.dim_state + self.dim_mom + a] = tv;
        }
        let u = self.traj.control.value_at(&self.traj.grid, &t);
        for (j, &uv) in u.iter().enumerate() {
            slots[self.dim_state + self.dim_mom + self.k + j] = uv;
        }
    }

    fn control_slot(&self) -> usize {
        self.dim_state + self.dim_mom + self.k
    }
}

/// Checks the five conditions of the maximum principle on a candidate with
/// costates. Fractions of violating nodes are reported; a condition passes
/// when its violations stay within the options' budget.
pub fn verify_pmp(
    dhs: &DerivedHamiltonianSystem,
    candidate: &Trajectory,
    opts: &PmpOptions,
) -> Result<PmpReport, PmpError> {
    if candidate.momenta.is_none() {
        return Err(PmpError::MissingCostates);
    }
    let tol = &opts.tolerances;
    let k = dhs.ext.base.k;
    let n = dhs.ext.base.n;
    let grid = &candidate.grid;
    let ev = NodeEval::new(dhs, candidate);
    let mut slots = vec![0.0; ev.table.len()];
    let mut slots_b = vec![0.0; ev.table.len()];
    let mut stack = Vec::new();
    let total_nodes = grid.total_nodes();

    let hamiltonians: Vec<CompiledExpr> = dhs
        .hamiltonians
        .iter()
        .map(|h| CompiledExpr::compile(h, &ev.table).expect("hamiltonian symbols"))
        .collect();

    let mut conditions = Vec::new();

    for a in 1..=k {
        let axis = a - 1;
        // --- condition 1: discrete dynamics residuals per cell -------------
        let mut rhs_exprs: Vec<(usize, CompiledExpr)> = Vec::new();
        for b in 1..=k {
            let slot = ev.table.slot(&names::extended_state(b)).unwrap();
            let e = &dhs.rhs.extended_state[axis][b - 1];
            rhs_exprs.push((slot, CompiledExpr::compile(e, &ev.table).unwrap()));
        }
        for i in 1..=n {
            let slot = ev.table.slot(&names::state(i)).unwrap();
            let e = &dhs.rhs.state[axis][i - 1];
            rhs_exprs.push((slot, CompiledExpr::compile(e, &ev.table).unwrap()));
        }
        for b in 1..=k {
            let slot = ev.table.slot(&names::cost_momentum(a, b)).unwrap();
            let e = &dhs.rhs.cost_momentum[axis][axis][b - 1];
            rhs_exprs.push((slot, CompiledExpr::compile(e, &ev.table).unwrap()));
        }
        for i in 1..=n {
            let slot = ev.table.slot(&names::momentum(a, i)).unwrap();
            let e = &dhs.rhs.momentum[axis][axis][i - 1];
            rhs_exprs.push((slot, CompiledExpr::compile(e, &ev.table).unwrap()));
        }

        let h = grid.axes[axis].h();
        let mut violations = 0usize;
        let mut checked = 0usize;
        let mut max_res: f64 = 0.0;
        for idx in 0..total_nodes {
            let mi = grid.node_multi_index(idx);
            if mi[axis] == grid.axes[axis].steps {
                continue;
            }
            let mut next = mi.clone();
            next[axis] += 1;
            let nidx = grid.node_index(&next);
            ev.fill(idx, &mut slots);
            ev.fill(nidx, &mut slots_b);
            // midpoint values; time and control sampled inside the cell
            let mut mid = slots.clone();
            for c in 0..ev.dim_state + ev.dim_mom {
                mid[c] = 0.5 * (slots[c] + slots_b[c]);
            }
            let tmid_slot = ev.dim_state + ev.dim_mom + axis;
            mid[tmid_slot] = 0.5 * (slots[tmid_slot] + slots_b[tmid_slot]);
            let mut t = grid.position(&mi);
            t[axis] = mid[tmid_slot];
            let u = candidate.control.value_at(grid, &t);
            for (j, &uv) in u.iter().enumerate() {
                mid[ev.control_slot() + j] = uv;
            }
            let mut cell_bad = false;
            for (slot, prog) in &rhs_exprs {
                let deriv = (slots_b[*slot] - slots[*slot]) / h;
                let rhs = prog.eval(&mid, &mut stack);
                let res = (deriv - rhs).abs();
                max_res = max_res.max(res);
                if res > tol.dyn_residual * (1.0 + rhs.abs()) {
                    cell_bad = true;
                }
            }
            checked += 1;
            if cell_bad {
                violations += 1;
            }
        }
        let frac = if checked == 0 {
            0.0
        } else {
            violations as f64 / checked as f64
        };
        conditions.push(ConditionReport {
            condition: 1,
            axis: a,
            pass: frac <= opts.violation_budget,
            max_residual: max_res,
            violation_fraction: frac,
            checked,
        });

        // --- condition 2 + 3: supremum attained and constant ---------------
        let grid_controls = control_grid(&dhs.ext.base.control_box, opts.control_grid_points);
        let mut sup_at = vec![0.0; total_nodes];
        let mut h_at = vec![0.0; total_nodes];
        for idx in 0..total_nodes {
            ev.fill(idx, &mut slots);
            h_at[idx] = hamiltonians[axis].eval(&slots, &mut stack);
            let mut best = f64::NEG_INFINITY;
            for u in &grid_controls {
                for (j, &uv) in u.iter().enumerate() {
                    slots[ev.control_slot() + j] = uv;
                }
                best = best.max(hamiltonians[axis].eval(&slots, &mut stack));
            }
            sup_at[idx] = if grid_controls[0].is_empty() {
                h_at[idx]
            } else {
                best
            };
        }
        let mut violations = 0usize;
        let mut max_gap: f64 = 0.0;
        for idx in 0..total_nodes {
            let gap = sup_at[idx] - h_at[idx];
            max_gap = max_gap.max(gap);
            if gap > tol.max_slack {
                violations += 1;
            }
        }
        let frac = violations as f64 / total_nodes as f64;
        conditions.push(ConditionReport {
            condition: 2,
            axis: a,
            pass: frac <= opts.violation_budget,
            max_residual: max_gap,
            violation_fraction: frac,
            checked: total_nodes,
        });

        // sup constancy along each axis line
        let mut lines = 0usize;
        let mut bad_lines = 0usize;
        let mut max_dev: f64 = 0.0;
        let mut starts = vec![vec![0usize; grid.k()]];
        for other in 0..grid.k() {
            if other == axis {
                continue;
            }
            let mut next_starts = Vec::new();
            for s in &starts {
                for i in 0..grid.axes[other].nodes() {
                    let mut mi = s.clone();
                    mi[other] = i;
                    next_starts.push(mi);
                }
            }
            starts = next_starts;
        }
        for start in starts {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..grid.axes[axis].nodes() {
                let mut mi = start.clone();
                mi[axis] = i;
                let v = sup_at[grid.node_index(&mi)];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let dev = hi - lo;
            max_dev = max_dev.max(dev);
            lines += 1;
            if dev > tol.sup_const {
                bad_lines += 1;
            }
        }
        let frac = if lines == 0 {
            0.0
        } else {
            bad_lines as f64 / lines as f64
        };
        conditions.push(ConditionReport {
            condition: 3,
            axis: a,
            pass: frac <= opts.violation_budget,
            max_residual: max_dev,
            violation_fraction: frac,
            checked: lines,
        });

        // --- condition 4: covector never vanishes --------------------------
        let momenta = candidate.momenta.as_ref().unwrap();
        let block = (a - 1) * (k + n);
        let mut violations = 0usize;
        let mut min_norm = f64::INFINITY;
        for node in momenta {
            let norm: f64 = node[block..block + k + n]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            min_norm = min_norm.min(norm);
            if norm < tol.nonzero {
                violations += 1;
            }
        }
        conditions.push(ConditionReport {
            condition: 4,
            axis: a,
            pass: violations == 0,
            max_residual: min_norm,
            violation_fraction: violations as f64 / total_nodes as f64,
            checked: total_nodes,
        });

        // --- condition 5: cost momenta constant, diagonal nonpositive ------
        let mut violations = 0usize;
        let mut max_res: f64 = 0.0;
        let reference: Vec<f64> = momenta[0][block..block + k].to_vec();
        for node in momenta {
            let mut bad = false;
            for b in 0..k {
                let drift = (node[block + b] - reference[b]).abs();
                max_res = max_res.max(drift);
                if drift > tol.dyn_residual {
                    bad = true;
                }
            }
            if node[block + (a - 1)] > tol.zero {
                bad = true;
                max_res = max_res.max(node[block + (a - 1)]);
            }
            if bad {
                violations += 1;
            }
        }
        conditions.push(ConditionReport {
            condition: 5,
            axis: a,
            pass: violations == 0,
            max_residual: max_res,
            violation_fraction: violations as f64 / total_nodes as f64,
            checked: total_nodes,
        });
    }

    let pass = conditions.iter().all(|c| c.pass);
    Ok(PmpReport { conditions, pass })
}

/// Integrates a candidate (state sweep plus backward costates) for the
/// explicit path; a convenience used by the CLI and tests.
pub fn integrate_candidate(
    dhs: &DerivedHamiltonianSystem,
    grid: &Grid,
    control: &ControlField,
    initial_q: &[f64],
    terminal_covector: &[f64],
    opts: &IntegrateOptions,
    probe: &ZeroProbe,
) -> Result<Trajectory, PmpError> {
    let traj = integrate_hamilton_section(dhs, grid, control, initial_q, opts, probe)?;
    Ok(crate::integrate::integrate_costate(dhs, &traj, terminal_covector)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{extend_system, ControlSystem};
    use crate::expr::parse;
    use crate::grid::GridAxis;
    use crate::hamiltonian::derive_hamilton_equations;

    fn probe() -> ZeroProbe {
        ZeroProbe::default()
    }

    fn dhs_for(
        k: usize,
        n: usize,
        l: usize,
        x: Vec<Vec<&str>>,
        f: &str,
        ubox: Vec<(f64, f64)>,
    ) -> DerivedHamiltonianSystem {
        let sys = ControlSystem::new(
            k,
            n,
            l,
            x.into_iter()
                .map(|r| r.into_iter().map(|s| parse(s).unwrap()).collect())
                .collect(),
            parse(f).unwrap(),
            ubox,
        )
        .unwrap();
        let ext = extend_system(&sys, &probe()).unwrap();
        derive_hamilton_equations(&ext)
    }

    fn axis(start: f64, end: f64, steps: usize) -> GridAxis {
        GridAxis { start, end, steps }
    }

    fn simple_traj(dhs: &DerivedHamiltonianSystem, grid: &Grid, u: Vec<f64>) -> Trajectory {
        integrate_hamilton_section(
            dhs,
            grid,
            &ControlField::Constant(u),
            &vec![0.0; dhs.ext.base.n],
            &IntegrateOptions::default(),
            &probe(),
        )
        .unwrap()
    }

    #[test]
    fn perturb_control_identity_cases() {
        let grid = Grid::new(vec![axis(0.0, 1.0, 10)]).unwrap();
        let base = ControlField::Constant(vec![0.0]);
        let data = PerturbationData {
            axis: 0,
            time: 0.5,
            width: 1.0,
            control: vec![1.0],
        };
        // s = 0 and width = 0 leave the field unchanged
        let same = perturb_control(&base, &grid, &data, 0.0).unwrap();
        assert!(matches!(same, ControlField::Constant(_)));
        let zero_width = PerturbationData {
            width: 0.0,
            ..data.clone()
        };
        let same = perturb_control(&base, &grid, &zero_width, 0.3).unwrap();
        assert!(matches!(same, ControlField::Constant(_)));
    }

    #[test]
    fn perturbation_vector_vanishes_for_incumbent_control() {
        let dhs = dhs_for(1, 1, 1, vec![vec!["u1"]], "1/2*u1^2", vec![(-1.0, 1.0)]);
        let grid = Grid::new(vec![axis(0.0, 1.0, 10)]).unwrap();
        let traj = simple_traj(&dhs, &grid, vec![0.25]);
        let data = PerturbationData {
            axis: 0,
            time: 0.45,
            width: 1.0,
            control: vec![0.25],
        };
        let v = perturbation_vector(&dhs, &traj, &data, &[0.45]).unwrap();
        assert!(v.components.iter().all(|c| c.abs() < 1e-13));
    }

    #[test]
    fn perturbation_vector_hand_formula() {
        // k=1, X = u, F = 1/2 u^2, l=1: v = (F(c) - F(c0), c - c0)
        let dhs = dhs_for(1, 1, 1, vec![vec!["u1"]], "1/2*u1^2", vec![(-2.0, 2.0)]);
        let grid = Grid::new(vec![axis(0.0, 1.0, 10)]).unwrap();
        let c0 = 0.3;
        let c = 0.9;
        let traj = simple_traj(&dhs, &grid, vec![c0]);
        let data = PerturbationData {
            axis: 0,
            time: 0.65,
            width: 1.0,
            control: vec![c],
        };
        let v = perturbation_vector(&dhs, &traj, &data, &[0.65]).unwrap();
        assert!((v.components[0] - 0.5 * (c * c - c0 * c0)).abs() < 1e-12);
        assert!((v.components[1] - (c - c0)).abs() < 1e-12);
    }

    #[test]
    fn scaling_in_width_is_exact() {
        let dhs = dhs_for(1, 1, 1, vec![vec!["u1"]], "1/2*u1^2", vec![(-2.0, 2.0)]);
        let grid = Grid::new(vec![axis(0.0, 1.0, 10)]).unwrap();
        let traj = simple_traj(&dhs, &grid, vec![0.1]);
        let mk = |w: f64| PerturbationData {
            axis: 0,
            time: 0.5,
            width: w,
            control: vec![0.8],
        };
        let v1 = perturbation_vector(&dhs, &traj, &mk(1.0), &[0.5]).unwrap();
        let v3 = perturbation_vector(&dhs, &traj, &mk(3.0), &[0.5]).unwrap();
        for (a, b) in v1.components.iter().zip(&v3.components) {
            assert!((3.0 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn formula_matches_reintegration_oracle() {
        let dhs = dhs_for(
            1,
            2,
            1,
            vec![vec!["q2", "u1"]],
            "1/2*u1^2",
            vec![(-2.0, 2.0)],
        );
        let grid = Grid::new(vec![axis(0.0, 1.0, 50)]).unwrap();
        let control = ControlField::Constant(vec![0.2]);
        // probe at a grid node: the state difference ramps inside the slab,
        // so interpolating across it would halve the measured quotient
        let data = PerturbationData {
            axis: 0,
            time: 0.36,
            width: 1.0,
            control: vec![1.1],
        };
        let traj = simple_traj(&dhs, &grid, vec![0.2]);
        let v = perturbation_vector(&dhs, &traj, &data, &[0.36]).unwrap();
        let fd = perturbation_vector_fd(
            &dhs,
            &grid,
            &control,
            &[0.0, 0.0],
            &data,
            &[0.36],
            1e-2,
            &IntegrateOptions::default(),
            &probe(),
        )
        .unwrap();
        for (a, b) in v.components.iter().zip(&fd) {
            assert!(
                (a - b).abs() <= 1e-4 * (1.0 + a.abs()),
                "formula {a} vs fd {b}"
            );
        }
    }

    #[test]
    fn propagation_trivial_for_state_independent_fields() {
        let dhs = dhs_for(1, 1, 1, vec![vec!["u1"]], "0", vec![(-1.0, 1.0)]);
        let grid = Grid::new(vec![axis(0.0, 1.0, 10)]).unwrap();
        let traj = simple_traj(&dhs, &grid, vec![0.4]);
        let v = PerturbationVector {
            axis: 0,
            base: vec![0.3],
            components: vec![0.5, -0.7],
        };
        let out = propagate_vector(&dhs, &traj, &v, 0.9).unwrap();
        assert!((out.components[0] - 0.5).abs() < 1e-12);
        assert!((out.components[1] + 0.7).abs() < 1e-12);
        // zero vector stays zero
        let z = PerturbationVector {
            axis: 0,
            base: vec![0.3],
            components: vec![0.0, 0.0],
        };
        let out = propagate_vector(&dhs, &traj, &z, 0.9).unwrap();
        assert!(out.components.iter().all(|c| c.abs() < 1e-14));
    }

    #[test]
    fn propagation_matches_matrix_exponential() {
        // dq/dt = a q: delta(t) = exp(a (t - t0)) delta(0)
        let dhs = dhs_for(1, 1, 0, vec![vec!["3/2*q1"]], "0", vec![]);
        let grid = Grid::new(vec![axis(0.0, 1.0, 64)]).unwrap();
        let traj = simple_traj(&dhs, &grid, vec![]);
        let v = PerturbationVector {
            axis: 0,
            base: vec![0.2],
            components: vec![0.0, 1.0],
        };
        let out = propagate_vector(&dhs, &traj, &v, 0.8).unwrap();
        let expect = (1.5_f64 * 0.6).exp();
        assert!(
            (out.components[1] - expect).abs() < 1e-8,
            "{} vs {expect}",
            out.components[1]
        );
    }

    #[test]
    fn cone_membership_on_rays() {
        let cone = Cone {
            axis: 0,
            anchor: vec![1.0],
            generators: vec![vec![1.0, 0.0]],
            tol: 1e-8,
        };
        assert!(cone.contains(&[2.0, 0.0]));
        assert!(!cone.contains(&[-1.0, 0.0]));
        let cone2 = Cone {
            generators: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            ..cone
        };
        assert!(cone2.contains(&[-3.0, 0.0]));
    }

    #[test]
    fn separation_on_a_ray() {
        let cone = Cone {
            axis: 0,
            anchor: vec![1.0],
            generators: vec![vec![1.0, 0.0]],
            tol: 1e-8,
        };
        match separation_test(&cone, &[-1.0, 0.0]).unwrap() {
            SeparationOutcome::Separator { covector } => {
                let pair = -covector[0];
                assert!(pair >= -1e-8);
                assert!(covector[0] <= 1e-8);
            }
            other => panic!("expected separator, got {other:?}"),
        }
    }

    #[test]
    fn full_plane_cone_is_interior_everywhere() {
        let cone = Cone {
            axis: 0,
            anchor: vec![1.0],
            generators: vec![
                vec![1.0, 0.0],
                vec![-1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, -1.0],
            ],
            tol: 1e-8,
        };
        for d in [[0.3, -0.9], [-0.5, 0.1], [0.0, 1.0]] {
            match separation_test(&cone, &d).unwrap() {
                SeparationOutcome::Interior { combination } => {
                    assert!(combination.is_some());
                }
                other => panic!("expected interior for {d:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn degenerate_cone_detected() {
        let cone = Cone {
            axis: 0,
            anchor: vec![1.0],
            generators: vec![vec![1e-12, 0.0]],
            tol: 1e-8,
        };
        assert!(matches!(
            separation_test(&cone, &[1.0, 0.0]),
            Err(PmpError::DegenerateCone)
        ));
    }

    #[test]
    fn cone_of_lq_needles_contains_brute_force_variations() {
        // directions reached by one- and two-switch control variations are
        // nonnegative combinations of propagated needle vectors
        let dhs = dhs_for(
            1,
            2,
            1,
            vec![vec!["q2", "u1"]],
            "1/2*u1^2",
            vec![(-1.0, 1.0)],
        );
        let grid = Grid::new(vec![axis(0.0, 1.0, 100)]).unwrap();
        let incumbent = 0.3;
        let traj = simple_traj(&dhs, &grid, vec![incumbent]);
        let plan = ConeSamplingPlan {
            time_samples: 10,
            controls_per_axis: 9,
        };
        let mut cone = build_cone(&dhs, &traj, 0, &[1.0], &plan, 1e-8).unwrap();
        cone.tol = 1e-4; // membership residual budget for the FD oracle below
        assert!(cone.generators.len() > 20);

        // brute force: re-integrate one- and two-switch variations, take the
        // Richardson-extrapolated first-order direction
        let opts = IntegrateOptions::default();
        let direction = |datas: &[PerturbationData], s: f64| -> Vec<f64> {
            let base = integrate_hamilton_section(
                &dhs,
                &grid,
                &ControlField::Constant(vec![incumbent]),
                &[0.0, 0.0],
                &opts,
                &probe(),
            )
            .unwrap();
            let quotient = |sv: f64| -> Vec<f64> {
                let mut control = ControlField::Constant(vec![incumbent]);
                for d in datas {
                    control = perturb_control(&control, &grid, d, sv).unwrap();
                }
                let t = integrate_hamilton_section(
                    &dhs,
                    &grid,
                    &control,
                    &[0.0, 0.0],
                    &opts,
                    &probe(),
                )
                .unwrap();
                t.state_at(&[100])
                    .iter()
                    .zip(base.state_at(&[100]))
                    .map(|(a, b)| (a - b) / sv)
                    .collect()
            };
            let d1 = quotient(s);
            let d2 = quotient(s / 2.0);
            d2.iter().zip(&d1).map(|(f, c)| 2.0 * f - c).collect()
        };
        // needle times on the sampling plan's own lattice
        let r = |j: usize| (j as f64 + 0.5) / 10.0;
        let single = [PerturbationData {
            axis: 0,
            time: r(3),
            width: 1.0,
            control: vec![0.75],
        }];
        let double = [
            PerturbationData {
                axis: 0,
                time: r(2),
                width: 1.0,
                control: vec![-0.5],
            },
            PerturbationData {
                axis: 0,
                time: r(7),
                width: 1.0,
                control: vec![1.0],
            },
        ];
        for datas in [&single[..], &double[..]] {
            let dir = direction(datas, 2e-3);
            assert!(
                cone.contains(&dir),
                "brute-force variation {dir:?} escaped the cone"
            );
        }
    }

    #[test]
    fn separation_rejects_cost_decrease_only_for_extremals() {
        // along an extremal, the pure cost-decrease direction cannot be
        // interior to the perturbation cone (the heart of the principle)
        let dhs = dhs_for(
            1,
            2,
            1,
            vec![vec!["q2", "u1"]],
            "1/2*u1^2",
            vec![(-1.0, 1.0)],
        );
        let grid = Grid::new(vec![axis(0.0, 1.0, 100)]).unwrap();
        // constant control is the energy optimum for its own endpoints
        let traj = simple_traj(&dhs, &grid, vec![0.3]);
        let plan = ConeSamplingPlan {
            time_samples: 12,
            controls_per_axis: 11,
        };
        let cone = build_cone(&dhs, &traj, 0, &[1.0], &plan, 1e-8).unwrap();
        let d = [-1.0, 0.0, 0.0];
        match separation_test(&cone, &d).unwrap() {
            SeparationOutcome::Separator { covector } => {
                // the separating covector is exactly the costate seed shape:
                // nonpositive cost slot, consistent with beta^1_{0_1} <= 0
                assert!(covector[0] <= 1e-9);
            }
            SeparationOutcome::Interior { .. } => {
                panic!("cost-decrease direction interior along an extremal")
            }
        }
    }

    #[test]
    fn verify_pmp_monotone_under_tightening() {
        // shrinking tolerances never turns a failing condition into a pass
        let dhs = dhs_for(
            1,
            2,
            1,
            vec![vec!["q2", "u1"]],
            "1/2*u1^2",
            vec![(-1.0, 1.0)],
        );
        let grid = Grid::new(vec![axis(0.0, 1.0, 200)]).unwrap();
        let traj = simple_traj(&dhs, &grid, vec![0.3]);
        let cand = crate::integrate::integrate_costate(&dhs, &traj, &[-1.0, 1.0, -0.5]).unwrap();
        let loose = verify_pmp(&dhs, &cand, &PmpOptions::default()).unwrap();
        let mut tight_opts = PmpOptions::default();
        tight_opts.tolerances.max_slack /= 100.0;
        tight_opts.tolerances.dyn_residual /= 100.0;
        tight_opts.tolerances.sup_const /= 100.0;
        let tight = verify_pmp(&dhs, &cand, &tight_opts).unwrap();
        for (a, b) in loose.conditions.iter().zip(&tight.conditions) {
            assert!(
                !(!a.pass && b.pass),
                "condition {} flipped FAIL -> PASS under tightening",
                a.condition
            );
        }
    }

    #[test]
    fn candidate_without_costates_rejected() {
        let dhs = dhs_for(1, 1, 1, vec![vec!["u1"]], "1/2*u1^2", vec![(-1.0, 1.0)]);
        let grid = Grid::new(vec![axis(0.0, 1.0, 8)]).unwrap();
        let traj = simple_traj(&dhs, &grid, vec![0.2]);
        assert!(matches!(
            verify_pmp(&dhs, &traj, &PmpOptions::default()),
            Err(PmpError::MissingCostates)
        ));
    }

    #[test]
    fn zero_covector_fails_condition_4() {
        let dhs = dhs_for(1, 1, 1, vec![vec!["u1"]], "1/2*u1^2", vec![(-1.0, 1.0)]);
        let grid = Grid::new(vec![axis(0.0, 1.0, 8)]).unwrap();
        let traj = simple_traj(&dhs, &grid, vec![0.0]);
        let cand = crate::integrate::integrate_costate(&dhs, &traj, &[0.0, 0.0]).unwrap();
        let report = verify_pmp(&dhs, &cand, &PmpOptions::default()).unwrap();
        let c4 = report
            .conditions
            .iter()
            .find(|c| c.condition == 4)
            .unwrap();
        assert!(!c4.pass);
        assert!(!report.pass);
    }
}
