//! RK4 sweep integration of k-vector fields over a coordinate box.
//!
//! An integral section is filled in lexicographically: the first axis is
//! integrated from the corner, then every line of the second axis starts
//! from the filled face, and so on. The same sweep with the axis order
//! reversed is run at a handful of probe nodes to quantify the mixed
//! consistency defect (zero for compatible fields up to scheme error).
//!
//! Steps are cell-aligned, so piecewise-constant controls are constant on
//! each step; a perturbation slab inside a step splits it at the slab faces,
//! which keeps the fourth-order accuracy across the switch.

use crate::control::check_compatibility;
use crate::expr::{CompiledExpr, EvalError, Expr, SymbolTable, ZeroProbe};
use crate::grid::{ControlField, Grid, Trajectory};
use crate::hamiltonian::DerivedHamiltonianSystem;
use crate::names;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Symbolic k-vector field over named coordinates: for every axis, one
/// right-hand-side expression per evolved coordinate. Expressions may also
/// reference the base times `t1..tk` and external controls `u1..ul`.
#[derive(Debug, Clone)]
pub struct FieldTable {
    pub k: usize,
    pub coords: Vec<String>,
    pub controls: usize,
    /// `components[a][c]`: d coords[c] / d t^{a+1}.
    pub components: Vec<Vec<Expr>>,
}

impl FieldTable {
    /// Extended-state field of a derived Hamiltonian system (cost
    /// accumulators first, then states).
    pub fn hamilton_state(dhs: &DerivedHamiltonianSystem) -> FieldTable {
        let k = dhs.ext.base.k;
        let components = (0..k)
            .map(|a| {
                let mut row = dhs.rhs.extended_state[a].clone();
                row.extend(dhs.rhs.state[a].iter().cloned());
                row
            })
            .collect();
        FieldTable {
            k,
            coords: dhs.ext.coordinate_names(),
            controls: dhs.ext.base.l,
            components,
        }
    }

    /// Joint state+costate field for one axis: the extended state together
    /// with the `p^A` block, which evolves only along its own axis.
    pub fn hamilton_costate_line(dhs: &DerivedHamiltonianSystem, axis: usize) -> FieldTable {
        let k = dhs.ext.base.k;
        let n = dhs.ext.base.n;
        let mut coords = dhs.ext.coordinate_names();
        for b in 1..=k {
            coords.push(names::cost_momentum(axis, b));
        }
        for i in 1..=n {
            coords.push(names::momentum(axis, i));
        }
        let mut row = dhs.rhs.extended_state[axis - 1].clone();
        row.extend(dhs.rhs.state[axis - 1].iter().cloned());
        row.extend(dhs.rhs.cost_momentum[axis - 1][axis - 1].iter().cloned());
        row.extend(dhs.rhs.momentum[axis - 1][axis - 1].iter().cloned());
        FieldTable {
            k,
            coords,
            controls: dhs.ext.base.l,
            components: vec![row],
        }
    }
}

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("state became non-finite at node {node:?}")]
    NonFiniteState { node: Vec<usize> },
    #[error("step underflow while splitting at control discontinuities")]
    StepUnderflow,
    #[error("grid has {got} axes, field expects {expected}")]
    AxisMismatch { got: usize, expected: usize },
    #[error("initial state has {got} values, field has {expected} coordinates")]
    InitialMismatch { got: usize, expected: usize },
    #[error("field references symbol outside coordinates/times/controls: {0}")]
    UnknownSymbol(String),
    #[error(
        "bracket compatibility fails for {failing} residual(s); integrate with allow_incompatible to override"
    )]
    Incompatible { failing: usize },
}

impl From<EvalError> for IntegrateError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::UnboundSymbol(s) => IntegrateError::UnknownSymbol(s),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub seed: u64,
    /// Skips the bracket compatibility gate on the Hamilton path.
    pub allow_incompatible: bool,
    /// Probe nodes for the reverse-sweep defect estimate.
    pub defect_probes: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            seed: 0,
            allow_incompatible: false,
            defect_probes: 8,
        }
    }
}

/// Compiled field: slot layout is coordinates, then times, then controls.
struct CompiledField {
    table: SymbolTable,
    dim: usize,
    k: usize,
    programs: Vec<Vec<CompiledExpr>>,
}

impl CompiledField {
    fn new(field: &FieldTable) -> Result<CompiledField, IntegrateError> {
        let mut table = SymbolTable::new();
        for c in &field.coords {
            table.intern(c);
        }
        for a in 1..=field.k {
            table.intern(&names::time(a));
        }
        for u in 1..=field.controls {
            table.intern(&names::control(u));
        }
        let mut programs = Vec::with_capacity(field.k);
        for row in &field.components {
            let mut per_axis = Vec::with_capacity(row.len());
            for e in row {
                per_axis.push(CompiledExpr::compile(e, &table)?);
            }
            programs.push(per_axis);
        }
        Ok(CompiledField {
            dim: field.coords.len(),
            k: field.k,
            table,
            programs,
        })
    }

    /// d(state)/dt^axis into `out`; `slots` must hold coords+times+controls.
    fn eval(&self, axis_row: usize, slots: &[f64], out: &mut [f64], stack: &mut Vec<f64>) {
        for (c, prog) in self.programs[axis_row].iter().enumerate() {
            out[c] = prog.eval(slots, stack);
        }
    }
}

struct LineStepper<'a> {
    field: &'a CompiledField,
    grid: &'a Grid,
    control: &'a ControlField,
    stack: Vec<f64>,
    slots: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a> LineStepper<'a> {
    fn new(field: &'a CompiledField, grid: &'a Grid, control: &'a ControlField) -> Self {
        let dim = field.dim;
        LineStepper {
            field,
            grid,
            control,
            stack: Vec::new(),
            slots: vec![0.0; field.table.len()],
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// One RK4 macro-step along `axis` from `t0` to `t0 + h` (h may be
    /// negative), splitting at control discontinuities. `position` carries
    /// the off-axis coordinates; `axis_row` selects the component row.
    fn step(
        &mut self,
        axis: usize,
        axis_row: usize,
        position: &[f64],
        t0: f64,
        h: f64,
        state: &mut [f64],
    ) -> Result<(), IntegrateError> {
        let mut cuts = vec![t0, t0 + h];
        let mut interior = Vec::new();
        self.control
            .breakpoints(axis, t0.min(t0 + h), t0.max(t0 + h), &mut interior);
        cuts.extend(interior);
        if h >= 0.0 {
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        } else {
            cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());
        }
        cuts.dedup();
        for w in 0..cuts.len() - 1 {
            let a = cuts[w];
            let b = cuts[w + 1];
            let hs = b - a;
            if hs == 0.0 {
                continue;
            }
            if hs.abs() < 1e-300 {
                return Err(IntegrateError::StepUnderflow);
            }
            self.substep(axis, axis_row, position, a, hs, state)?;
        }
        Ok(())
    }

    fn substep(
        &mut self,
        axis: usize,
        axis_row: usize,
        position: &[f64],
        t0: f64,
        h: f64,
        state: &mut [f64],
    ) -> Result<(), IntegrateError> {
        let dim = self.field.dim;
        let k = self.field.k;
        // control is constant on the substep; sample at its midpoint
        let mut point = position.to_vec();
        point[axis] = t0 + 0.5 * h;
        let u = self.control.value_at(self.grid, &point);

        for (a, &tv) in position.iter().enumerate() {
            self.slots[dim + a] = tv;
        }
        for (j, &uv) in u.iter().enumerate() {
            self.slots[dim + k + j] = uv;
        }

        macro_rules! rhs {
            ($t:expr, $y:expr, $out:ident) => {{
                self.slots[dim + axis] = $t;
                self.slots[..dim].copy_from_slice($y);
                let mut out = std::mem::take(&mut self.$out);
                self.field.eval(axis_row, &self.slots, &mut out, &mut self.stack);
                self.$out = out;
            }};
        }

        rhs!(t0, state, k1);
        for c in 0..dim {
            self.tmp[c] = state[c] + 0.5 * h * self.k1[c];
        }
        let tmp = self.tmp.clone();
        rhs!(t0 + 0.5 * h, &tmp, k2);
        for c in 0..dim {
            self.tmp[c] = state[c] + 0.5 * h * self.k2[c];
        }
        let tmp = self.tmp.clone();
        rhs!(t0 + 0.5 * h, &tmp, k3);
        for c in 0..dim {
            self.tmp[c] = state[c] + h * self.k3[c];
        }
        let tmp = self.tmp.clone();
        rhs!(t0 + h, &tmp, k4);
        for c in 0..dim {
            state[c] += h / 6.0 * (self.k1[c] + 2.0 * self.k2[c] + 2.0 * self.k3[c] + self.k4[c]);
        }
        Ok(())
    }
}

/// Sweep the whole box in the given axis order, returning node-major states.
fn sweep(
    compiled: &CompiledField,
    field: &FieldTable,
    grid: &Grid,
    control: &ControlField,
    initial: &[f64],
    axis_order: &[usize],
) -> Result<Vec<Vec<f64>>, IntegrateError> {
    let dim = field.coords.len();
    let mut states: Vec<Vec<f64>> = vec![Vec::new(); grid.total_nodes()];
    let corner = vec![0usize; grid.k()];
    states[grid.node_index(&corner)] = initial.to_vec();

    let mut stepper = LineStepper::new(compiled, grid, control);

    for (stage, &axis) in axis_order.iter().enumerate() {
        // start nodes: filled axes range over all indices, the rest sit at 0
        let filled = &axis_order[..stage];
        let mut starts = vec![corner.clone()];
        for &fa in filled {
            let mut next = Vec::new();
            for s in &starts {
                for i in 0..grid.axes[fa].nodes() {
                    let mut mi = s.clone();
                    mi[fa] = i;
                    next.push(mi);
                }
            }
            starts = next;
        }
        for start in starts {
            let mut state = states[grid.node_index(&start)].clone();
            debug_assert_eq!(state.len(), dim, "line start not filled");
            let mut position = grid.position(&start);
            let h = grid.axes[axis].h();
            for i in 0..grid.axes[axis].steps {
                let t0 = grid.axes[axis].start + i as f64 * h;
                position[axis] = t0;
                stepper.step(axis, axis, &position, t0, h, &mut state)?;
                if !state.iter().all(|v| v.is_finite()) {
                    let mut node = start.clone();
                    node[axis] = i + 1;
                    return Err(IntegrateError::NonFiniteState { node });
                }
                let mut node = start.clone();
                node[axis] = i + 1;
                states[grid.node_index(&node)] = state.clone();
            }
        }
    }
    Ok(states)
}

/// Integrates the field along a single axis between arbitrary endpoints
/// (forward or backward), cutting at cell edges, control discontinuities
/// and a uniform refinement no coarser than the grid step. `position`
/// fixes the off-axis coordinates; `axis_row` selects the component row of
/// the field (0 for single-row line systems).
#[allow(clippy::too_many_arguments)]
pub fn integrate_line(
    field: &FieldTable,
    grid: &Grid,
    control: &ControlField,
    axis: usize,
    axis_row: usize,
    position: &[f64],
    from: f64,
    to: f64,
    state: &mut [f64],
) -> Result<(), IntegrateError> {
    if state.len() != field.coords.len() {
        return Err(IntegrateError::InitialMismatch {
            got: state.len(),
            expected: field.coords.len(),
        });
    }
    let compiled = CompiledField::new(field)?;
    let mut stepper = LineStepper::new(&compiled, grid, control);
    if from == to {
        return Ok(());
    }
    let h = grid.axes[axis].h();
    let span = to - from;
    let pieces = (span.abs() / h).ceil().max(1.0) as usize;
    let mut cuts: Vec<f64> = (0..=pieces)
        .map(|i| from + span * i as f64 / pieces as f64)
        .collect();
    let ax = &grid.axes[axis];
    for i in 0..=ax.steps {
        let edge = ax.start + i as f64 * h;
        if (edge - from.min(to)) > 1e-14 && (from.max(to) - edge) > 1e-14 {
            cuts.push(edge);
        }
    }
    if span > 0.0 {
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    } else {
        cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    }
    cuts.dedup();
    for w in 0..cuts.len() - 1 {
        let a = cuts[w];
        let b = cuts[w + 1];
        if a == b {
            continue;
        }
        stepper.step(axis, axis_row, position, a, b - a, state)?;
        if !state.iter().all(|v| v.is_finite()) {
            return Err(IntegrateError::NonFiniteState {
                node: vec![usize::MAX],
            });
        }
    }
    Ok(())
}

/// Integrates an integral section of the field from corner data, filling
/// every grid node. The reverse-order sweep is compared at random probe
/// nodes and the maximum disagreement reported as `mixed_defect`.
pub fn integrate_section(
    field: &FieldTable,
    grid: &Grid,
    control: &ControlField,
    initial: &[f64],
    opts: &IntegrateOptions,
) -> Result<Trajectory, IntegrateError> {
    if grid.k() != field.k {
        return Err(IntegrateError::AxisMismatch {
            got: grid.k(),
            expected: field.k,
        });
    }
    if initial.len() != field.coords.len() {
        return Err(IntegrateError::InitialMismatch {
            got: initial.len(),
            expected: field.coords.len(),
        });
    }
    let compiled = CompiledField::new(field)?;
    let forward_order: Vec<usize> = (0..field.k).collect();
    let states = sweep(&compiled, field, grid, control, initial, &forward_order)?;

    let mut mixed_defect = 0.0;
    if field.k > 1 && opts.defect_probes > 0 {
        let reverse_order: Vec<usize> = (0..field.k).rev().collect();
        let reverse = sweep(&compiled, field, grid, control, initial, &reverse_order)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..opts.defect_probes {
            let idx = rng.random_range(0..grid.total_nodes());
            for (a, b) in states[idx].iter().zip(&reverse[idx]) {
                mixed_defect = f64::max(mixed_defect, (a - b).abs());
            }
        }
    }

    Ok(Trajectory {
        grid: grid.clone(),
        coord_names: field.coords.clone(),
        states,
        momenta: None,
        momenta_names: Vec::new(),
        control: control.clone(),
        mixed_defect,
        method: "rk4-lex-sweep".into(),
        seed: opts.seed,
    })
}

/// Integrates the extended state of a derived Hamiltonian system from a
/// corner state (`q` values only; the cost accumulators start at zero).
pub fn integrate_hamilton_section(
    dhs: &DerivedHamiltonianSystem,
    grid: &Grid,
    control: &ControlField,
    initial_q: &[f64],
    opts: &IntegrateOptions,
    probe: &ZeroProbe,
) -> Result<Trajectory, IntegrateError> {
    if !opts.allow_incompatible {
        let failing = check_compatibility(&dhs.ext.base, probe)
            .iter()
            .filter(|r| !r.pass)
            .count();
        if failing > 0 {
            return Err(IntegrateError::Incompatible { failing });
        }
    }
    let field = FieldTable::hamilton_state(dhs);
    let mut initial = vec![0.0; dhs.ext.base.k];
    initial.extend_from_slice(initial_q);
    integrate_section(&field, grid, control, &initial, opts)
}

/// Backward costate integration: for each axis, every `t^A`-line is solved
/// from the terminal face toward the start with the state re-integrated
/// alongside the fiber variables. Cost momenta have zero right-hand side
/// and stay at their terminal values; momenta with a foreign superscript do
/// not evolve along the axis at all, which makes the terminal covector
/// constant across the terminal face.
///
/// `terminal` holds `beta^A` blocks for A = 1..k, each `k + n` values
/// (`p^A_{0_1..0_k}`, `p^A_{1..n}`), taken at the far corner.
pub fn integrate_costate(
    dhs: &DerivedHamiltonianSystem,
    trajectory: &Trajectory,
    terminal: &[f64],
) -> Result<Trajectory, IntegrateError> {
    let k = dhs.ext.base.k;
    let n = dhs.ext.base.n;
    let dim_state = k + n;
    assert_eq!(
        terminal.len(),
        k * dim_state,
        "terminal covector must supply k blocks of k+n values"
    );
    let grid = &trajectory.grid;
    let mut momenta = vec![vec![0.0; k * dim_state]; grid.total_nodes()];
    let mut momenta_names = Vec::with_capacity(k * dim_state);
    for a in 1..=k {
        for b in 1..=k {
            momenta_names.push(names::cost_momentum(a, b));
        }
        for i in 1..=n {
            momenta_names.push(names::momentum(a, i));
        }
    }

    for a in 1..=k {
        let field = FieldTable::hamilton_costate_line(dhs, a);
        let compiled = CompiledField::new(&field)?;
        let mut stepper = LineStepper::new(&compiled, grid, &trajectory.control);
        let axis = a - 1;
        let steps = grid.axes[axis].steps;
        let h = grid.axes[axis].h();
        let block = (a - 1) * dim_state;

        // every line along this axis, indexed by the off-axis multi-index
        let mut line_starts = vec![vec![0usize; grid.k()]];
        for other in 0..grid.k() {
            if other == axis {
                continue;
            }
            let mut next = Vec::new();
            for s in &line_starts {
                for i in 0..grid.axes[other].nodes() {
                    let mut mi = s.clone();
                    mi[other] = i;
                    next.push(mi);
                }
            }
            line_starts = next;
        }

        for mut mi in line_starts {
            mi[axis] = steps;
            let mut state: Vec<f64> = trajectory.state_at(&mi).to_vec();
            state.extend_from_slice(&terminal[block..block + dim_state]);
            momenta[grid.node_index(&mi)][block..block + dim_state]
                .copy_from_slice(&terminal[block..block + dim_state]);
            let mut position = grid.position(&mi);
            for i in (0..steps).rev() {
                let t_hi = grid.axes[axis].start + (i + 1) as f64 * h;
                position[axis] = t_hi;
                stepper.step(axis, 0, &position, t_hi, -h, &mut state)?;
                if !state.iter().all(|v| v.is_finite()) {
                    let mut node = mi.clone();
                    node[axis] = i;
                    return Err(IntegrateError::NonFiniteState { node });
                }
                let mut node = mi.clone();
                node[axis] = i;
                momenta[grid.node_index(&node)][block..block + dim_state]
                    .copy_from_slice(&state[dim_state..]);
            }
        }
    }

    let mut out = trajectory.clone();
    out.momenta = Some(momenta);
    out.momenta_names = momenta_names;
    Ok(out)
}

/// Per-axis cumulative cost functionals and the box integral.
#[derive(Debug, Clone)]
pub struct Functionals {
    /// `per_axis[a][node]`: integral of the cost along the node's own
    /// `t^{a+1}`-line from the start face (trapezoid rule).
    pub per_axis: Vec<Vec<f64>>,
    /// k-dimensional trapezoid quadrature of the cost over the box.
    pub total: f64,
    /// Maximum difference between a stored cost accumulator `q0_A` and the
    /// corresponding cumulative quadrature, when the accumulators exist.
    pub accumulator_defect: f64,
}

/// Evaluates the cost at every node (binding coordinates, times and cell
/// controls) and integrates it. The order of integration does not matter
/// for the box integral; the per-axis functionals are genuinely different
/// objects and are reported per node.
pub fn functional_values(
    trajectory: &Trajectory,
    cost: &Expr,
    control_dim: usize,
) -> Result<Functionals, IntegrateError> {
    let grid = &trajectory.grid;
    let k = grid.k();
    let mut table = SymbolTable::new();
    for c in &trajectory.coord_names {
        table.intern(c);
    }
    for a in 1..=k {
        table.intern(&names::time(a));
    }
    for u in 1..=control_dim {
        table.intern(&names::control(u));
    }
    let prog = CompiledExpr::compile(cost, &table)?;
    let dim = trajectory.coord_names.len();
    let mut slots = vec![0.0; table.len()];
    let mut stack = Vec::new();

    let total_nodes = grid.total_nodes();
    let mut cost_at = vec![0.0; total_nodes];
    for idx in 0..total_nodes {
        let mi = grid.node_multi_index(idx);
        let t = grid.position(&mi);
        slots[..dim].copy_from_slice(&trajectory.states[idx]);
        for (a, &tv) in t.iter().enumerate() {
            slots[dim + a] = tv;
        }
        // at a control switch take the incoming cell, matching the sweep
        let u = trajectory.control.value_at(grid, &t);
        for (j, &uv) in u.iter().enumerate() {
            slots[dim + k + j] = uv;
        }
        cost_at[idx] = prog.eval(&slots, &mut stack);
    }

    let mut per_axis = Vec::with_capacity(k);
    for axis in 0..k {
        let h = grid.axes[axis].h();
        let mut acc = vec![0.0; total_nodes];
        for idx in 0..total_nodes {
            let mi = grid.node_multi_index(idx);
            if mi[axis] == 0 {
                continue;
            }
            let mut prev = mi.clone();
            prev[axis] -= 1;
            let pidx = grid.node_index(&prev);
            acc[idx] = acc[pidx] + 0.5 * h * (cost_at[pidx] + cost_at[idx]);
        }
        per_axis.push(acc);
    }

    let mut total = 0.0;
    for idx in 0..total_nodes {
        let mi = grid.node_multi_index(idx);
        let mut w = 1.0;
        for axis in 0..k {
            let edge = mi[axis] == 0 || mi[axis] == grid.axes[axis].steps;
            w *= grid.axes[axis].h() * if edge { 0.5 } else { 1.0 };
        }
        total += w * cost_at[idx];
    }

    let mut accumulator_defect: f64 = 0.0;
    for a in 1..=k {
        let name = names::extended_state(a);
        let Some(pos) = trajectory.coord_names.iter().position(|c| *c == name) else {
            continue;
        };
        for idx in 0..total_nodes {
            let d = (trajectory.states[idx][pos] - per_axis[a - 1][idx]).abs();
            accumulator_defect = accumulator_defect.max(d);
        }
    }

    Ok(Functionals {
        per_axis,
        total,
        accumulator_defect,
    })
}
