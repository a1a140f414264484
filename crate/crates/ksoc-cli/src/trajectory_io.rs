//! Columnar trajectory CSV plus a JSON sidecar with grid and control
//! metadata. The CSV holds one row per node: multi-index, base times,
//! states, then momenta when present. The sidecar carries everything needed
//! to reconstruct the `Trajectory` for verification.

use ksoc_core::grid::{ControlField, Grid, GridAxis, Trajectory};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error("sidecar error: {0}")]
    Sidecar(String),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SidecarGrid {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub steps: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SidecarControl {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constant: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub grid: SidecarGrid,
    pub coords: Vec<String>,
    pub momenta: Vec<String>,
    pub control: SidecarControl,
    pub method: String,
    pub seed: u64,
    pub mixed_defect: f64,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> TrajectoryIoError + '_ {
    move |source| TrajectoryIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_trajectory(
    traj: &Trajectory,
    csv_path: &Path,
    sidecar_path: &Path,
) -> Result<(), TrajectoryIoError> {
    let grid = &traj.grid;
    let k = grid.k();
    let control_dim = traj.control.dim();
    let mut out = String::new();
    for a in 1..=k {
        out.push_str(&format!("i{a},"));
    }
    for a in 1..=k {
        out.push_str(&format!("t{a},"));
    }
    out.push_str(&traj.coord_names.join(","));
    if !traj.momenta_names.is_empty() {
        out.push(',');
        out.push_str(&traj.momenta_names.join(","));
    }
    for a in 1..=control_dim {
        out.push_str(&format!(",u{a}"));
    }
    out.push('\n');
    for idx in 0..grid.total_nodes() {
        let mi = grid.node_multi_index(idx);
        let t = grid.position(&mi);
        let mut cols: Vec<String> = mi.iter().map(usize::to_string).collect();
        cols.extend(t.iter().map(|v| format!("{v:?}")));
        cols.extend(traj.states[idx].iter().map(|v| format!("{v:?}")));
        if let Some(momenta) = &traj.momenta {
            cols.extend(momenta[idx].iter().map(|v| format!("{v:?}")));
        }
        // control column shows the incoming cell's value at the node
        cols.extend(
            traj.control
                .value_at(grid, &t)
                .iter()
                .map(|v| format!("{v:?}")),
        );
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    let mut f = std::fs::File::create(csv_path).map_err(io_err(csv_path))?;
    f.write_all(out.as_bytes()).map_err(io_err(csv_path))?;

    let control = match &traj.control {
        ControlField::Constant(v) => SidecarControl {
            constant: Some(v.clone()),
            cells: None,
        },
        other => match other.materialize(grid) {
            ControlField::PerCell(rows) => SidecarControl {
                constant: None,
                cells: Some(rows),
            },
            _ => unreachable!("materialize returns per-cell"),
        },
    };
    let sidecar = Sidecar {
        grid: SidecarGrid {
            start: grid.axes.iter().map(|a| a.start).collect(),
            end: grid.axes.iter().map(|a| a.end).collect(),
            steps: grid.axes.iter().map(|a| a.steps).collect(),
        },
        coords: traj.coord_names.clone(),
        momenta: traj.momenta_names.clone(),
        control,
        method: traj.method.clone(),
        seed: traj.seed,
        mixed_defect: traj.mixed_defect,
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(sidecar_path, json).map_err(io_err(sidecar_path))?;
    Ok(())
}

pub fn read_trajectory(csv_path: &Path, sidecar_path: &Path) -> Result<Trajectory, TrajectoryIoError> {
    let sidecar_text = std::fs::read_to_string(sidecar_path).map_err(io_err(sidecar_path))?;
    let sidecar: Sidecar =
        serde_json::from_str(&sidecar_text).map_err(|e| TrajectoryIoError::Sidecar(e.to_string()))?;
    let k = sidecar.grid.start.len();
    let axes: Vec<GridAxis> = (0..k)
        .map(|a| GridAxis {
            start: sidecar.grid.start[a],
            end: sidecar.grid.end[a],
            steps: sidecar.grid.steps[a],
        })
        .collect();
    let grid = Grid::new(axes).map_err(|e| TrajectoryIoError::Sidecar(e.to_string()))?;
    let control = match (&sidecar.control.constant, &sidecar.control.cells) {
        (Some(v), None) => ControlField::Constant(v.clone()),
        (None, Some(rows)) => ControlField::PerCell(rows.clone()),
        _ => {
            return Err(TrajectoryIoError::Sidecar(
                "control must have exactly one of constant/cells".into(),
            ))
        }
    };

    let text = std::fs::read_to_string(csv_path).map_err(io_err(csv_path))?;
    let fmt_err = |line: usize, message: String| TrajectoryIoError::Format {
        path: csv_path.display().to_string(),
        line,
        message,
    };
    let control_dim = control.dim();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| fmt_err(0, "empty file".into()))?;
    // trailing control columns are informational; the sidecar is the
    // authority for the control field
    let expected_cols = 2 * k + sidecar.coords.len() + sidecar.momenta.len() + control_dim;
    let header_cols: Vec<&str> = header.split(',').collect();
    if header_cols.len() != expected_cols {
        return Err(fmt_err(
            1,
            format!(
                "header has {} columns, expected {expected_cols}",
                header_cols.len()
            ),
        ));
    }

    let total = grid.total_nodes();
    let dim = sidecar.coords.len();
    let mdim = sidecar.momenta.len();
    let mut states = vec![Vec::new(); total];
    let mut momenta = if mdim > 0 {
        Some(vec![Vec::new(); total])
    } else {
        None
    };
    let mut seen = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != expected_cols {
            return Err(fmt_err(
                lineno + 1,
                format!("row has {} columns, expected {expected_cols}", cols.len()),
            ));
        }
        let mut mi = Vec::with_capacity(k);
        for c in &cols[..k] {
            mi.push(
                c.parse::<usize>()
                    .map_err(|e| fmt_err(lineno + 1, format!("bad index `{c}`: {e}")))?,
            );
        }
        let parse_f = |c: &str| -> Result<f64, TrajectoryIoError> {
            c.parse::<f64>()
                .map_err(|e| fmt_err(lineno + 1, format!("bad number `{c}`: {e}")))
        };
        let idx = grid.node_index(&mi);
        let mut state = Vec::with_capacity(dim);
        for c in &cols[2 * k..2 * k + dim] {
            state.push(parse_f(c)?);
        }
        states[idx] = state;
        if let Some(momenta) = momenta.as_mut() {
            let mut row = Vec::with_capacity(mdim);
            for c in &cols[2 * k + dim..2 * k + dim + mdim] {
                row.push(parse_f(c)?);
            }
            momenta[idx] = row;
        }
        seen += 1;
    }
    if seen != total {
        return Err(fmt_err(0, format!("expected {total} node rows, got {seen}")));
    }

    Ok(Trajectory {
        grid,
        coord_names: sidecar.coords,
        states,
        momenta,
        momenta_names: sidecar.momenta,
        control,
        mixed_defect: sidecar.mixed_defect,
        method: sidecar.method,
        seed: sidecar.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn round_trips_states_and_momenta() {
        let grid = Grid::new(vec![
            GridAxis {
                start: 0.0,
                end: 1.0,
                steps: 2,
            },
            GridAxis {
                start: 0.0,
                end: 0.5,
                steps: 2,
            },
        ])
        .unwrap();
        let total = grid.total_nodes();
        let traj = Trajectory {
            grid,
            coord_names: vec!["q0_1".into(), "q1".into()],
            states: (0..total).map(|i| vec![i as f64, 0.5 * i as f64]).collect(),
            momenta: Some((0..total).map(|i| vec![-(i as f64)]).collect()),
            momenta_names: vec!["p1_1".into()],
            control: ControlField::Constant(vec![0.25]),
            mixed_defect: 1e-9,
            method: "rk4-lex-sweep".into(),
            seed: 7,
        };
        let dir = TempDir::new().unwrap();
        let csv = dir.path().join("traj.csv");
        let sidecar = dir.path().join("traj.json");
        write_trajectory(&traj, &csv, &sidecar).unwrap();
        let back = read_trajectory(&csv, &sidecar).unwrap();
        assert_eq!(back.states, traj.states);
        assert_eq!(back.momenta, traj.momenta);
        assert_eq!(back.coord_names, traj.coord_names);
        assert_eq!(back.seed, 7);
    }
}
