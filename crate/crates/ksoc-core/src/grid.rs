//! Coordinate boxes, piecewise-constant control fields and sampled sections.

use serde::Serialize;
use thiserror::Error;

/// One axis of the integration box: interval and step count. The step size
/// is `(end - start) / steps`, so `steps * h` recovers the span exactly.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridAxis {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl GridAxis {
    pub fn h(&self) -> f64 {
        (self.end - self.start) / self.steps as f64
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("axis {0} must have end > start and steps >= 1")]
    BadAxis(usize),
}

/// Product box `I_1 x ... x I_k` with per-axis uniform steps.
#[derive(Debug, Clone, Serialize)]
pub struct Grid {
    pub axes: Vec<GridAxis>,
}

impl Grid {
    pub fn new(axes: Vec<GridAxis>) -> Result<Grid, GridError> {
        for (i, ax) in axes.iter().enumerate() {
            if ax.end <= ax.start || ax.steps == 0 || !ax.start.is_finite() || !ax.end.is_finite()
            {
                return Err(GridError::BadAxis(i));
            }
        }
        Ok(Grid { axes })
    }

    pub fn k(&self) -> usize {
        self.axes.len()
    }

    pub fn total_nodes(&self) -> usize {
        self.axes.iter().map(GridAxis::nodes).product()
    }

    pub fn total_cells(&self) -> usize {
        self.axes.iter().map(|a| a.steps).product()
    }

    /// Flat node index for a multi-index (row-major, axis 0 slowest).
    pub fn node_index(&self, mi: &[usize]) -> usize {
        let mut idx = 0;
        for (a, &i) in mi.iter().enumerate() {
            debug_assert!(i < self.axes[a].nodes());
            idx = idx * self.axes[a].nodes() + i;
        }
        idx
    }

    pub fn node_multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut mi = vec![0; self.k()];
        for a in (0..self.k()).rev() {
            let n = self.axes[a].nodes();
            mi[a] = idx % n;
            idx /= n;
        }
        mi
    }

    pub fn cell_index(&self, mi: &[usize]) -> usize {
        let mut idx = 0;
        for (a, &i) in mi.iter().enumerate() {
            debug_assert!(i < self.axes[a].steps);
            idx = idx * self.axes[a].steps + i;
        }
        idx
    }

    /// Position of a node multi-index.
    pub fn position(&self, mi: &[usize]) -> Vec<f64> {
        mi.iter()
            .enumerate()
            .map(|(a, &i)| self.axes[a].start + i as f64 * self.axes[a].h())
            .collect()
    }

    /// Cell containing a point, with the closed upper face assigned to the
    /// last cell.
    pub fn cell_of(&self, t: &[f64]) -> Vec<usize> {
        t.iter()
            .enumerate()
            .map(|(a, &x)| {
                let ax = &self.axes[a];
                let raw = ((x - ax.start) / ax.h()).floor() as isize;
                raw.clamp(0, ax.steps as isize - 1) as usize
            })
            .collect()
    }
}

/// Piecewise-constant control assignment.
///
/// Values are constant on each grid cell (the locally-constant control
/// assumption); a needle perturbation wraps a base field with one overriding
/// slab along a single axis, which the integrator resolves by splitting
/// steps at the slab faces.
#[derive(Debug, Clone)]
pub enum ControlField {
    Constant(Vec<f64>),
    /// Cell-major values, `grid.total_cells()` rows of `l` values.
    PerCell(Vec<Vec<f64>>),
    Perturbed {
        base: Box<ControlField>,
        axis: usize,
        lo: f64,
        hi: f64,
        value: Vec<f64>,
    },
}

impl ControlField {
    pub fn dim(&self) -> usize {
        match self {
            ControlField::Constant(v) => v.len(),
            ControlField::PerCell(rows) => rows.first().map_or(0, Vec::len),
            ControlField::Perturbed { value, .. } => value.len(),
        }
    }

    pub fn value_at(&self, grid: &Grid, t: &[f64]) -> Vec<f64> {
        match self {
            ControlField::Constant(v) => v.clone(),
            ControlField::PerCell(rows) => {
                let cell = grid.cell_of(t);
                rows[grid.cell_index(&cell)].clone()
            }
            ControlField::Perturbed {
                base,
                axis,
                lo,
                hi,
                value,
            } => {
                if t[*axis] >= *lo && t[*axis] <= *hi {
                    value.clone()
                } else {
                    base.value_at(grid, t)
                }
            }
        }
    }

    /// Discontinuity positions strictly inside the open interval along an
    /// axis. Cell boundaries never appear here because integration steps
    /// are cell-aligned.
    pub fn breakpoints(&self, axis: usize, lo: f64, hi: f64, out: &mut Vec<f64>) {
        match self {
            ControlField::Constant(_) | ControlField::PerCell(_) => {}
            ControlField::Perturbed {
                base,
                axis: pa,
                lo: plo,
                hi: phi,
                ..
            } => {
                base.breakpoints(axis, lo, hi, out);
                if *pa == axis {
                    let (a, b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
                    for x in [*plo, *phi] {
                        if x > a && x < b {
                            out.push(x);
                        }
                    }
                }
            }
        }
    }

    /// Snapshots the field to per-cell values sampled at cell midpoints.
    pub fn materialize(&self, grid: &Grid) -> ControlField {
        let cells = grid.total_cells();
        let mut rows = Vec::with_capacity(cells);
        let counts: Vec<usize> = grid.axes.iter().map(|a| a.steps).collect();
        let mut mi = vec![0usize; grid.k()];
        for _ in 0..cells {
            let mid: Vec<f64> = mi
                .iter()
                .enumerate()
                .map(|(a, &i)| grid.axes[a].start + (i as f64 + 0.5) * grid.axes[a].h())
                .collect();
            rows.push(self.value_at(grid, &mid));
            // advance row-major
            for a in (0..grid.k()).rev() {
                mi[a] += 1;
                if mi[a] < counts[a] {
                    break;
                }
                mi[a] = 0;
            }
        }
        ControlField::PerCell(rows)
    }

    /// True if every stored value lies in the box (within `tol`).
    pub fn within_box(&self, control_box: &[(f64, f64)], tol: f64) -> bool {
        let check = |v: &[f64]| {
            v.iter()
                .zip(control_box)
                .all(|(&x, &(lo, hi))| x >= lo - tol && x <= hi + tol)
        };
        match self {
            ControlField::Constant(v) => check(v),
            ControlField::PerCell(rows) => rows.iter().all(|r| check(r)),
            ControlField::Perturbed { base, value, .. } => {
                check(value) && base.within_box(control_box, tol)
            }
        }
    }
}

/// Grid-sampled integral section: states at every node, optionally the full
/// momenta table, and the control field that produced it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid,
    /// Names of the evolved coordinates, in storage order.
    pub coord_names: Vec<String>,
    /// Node-major state samples.
    pub states: Vec<Vec<f64>>,
    /// Node-major momenta samples (layout in `momenta_names`), if present.
    pub momenta: Option<Vec<Vec<f64>>>,
    pub momenta_names: Vec<String>,
    pub control: ControlField,
    /// Maximum forward/reverse sweep disagreement at the probe nodes.
    pub mixed_defect: f64,
    pub method: String,
    pub seed: u64,
}

impl Trajectory {
    pub fn state_at(&self, mi: &[usize]) -> &[f64] {
        &self.states[self.grid.node_index(mi)]
    }

    /// Multilinear interpolation of the state at an arbitrary point of the
    /// box (clamped to it).
    pub fn interpolate(&self, t: &[f64]) -> Vec<f64> {
        let k = self.grid.k();
        let mut base = vec![0usize; k];
        let mut frac = vec![0.0; k];
        for a in 0..k {
            let ax = &self.grid.axes[a];
            let x = ((t[a] - ax.start) / ax.h()).clamp(0.0, ax.steps as f64);
            let i = (x.floor() as usize).min(ax.steps - 1);
            base[a] = i;
            frac[a] = x - i as f64;
        }
        let dim = self.coord_names.len();
        let mut out = vec![0.0; dim];
        for corner in 0..(1usize << k) {
            let mut w = 1.0;
            let mut mi = base.clone();
            for a in 0..k {
                if corner >> a & 1 == 1 {
                    mi[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w == 0.0 {
                continue;
            }
            let s = self.state_at(&mi);
            for d in 0..dim {
                out[d] += w * s[d];
            }
        }
        out
    }
}
