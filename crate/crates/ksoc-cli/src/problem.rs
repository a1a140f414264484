//! Problem-file ingestion and validation.
//!
//! A problem file is a JSON document with exactly one of a `system`
//! (explicit path) or `implicit` (unified path) section, plus optional
//! `grid`, `controls`, `initial`, `terminal`, `tolerances` and `seed`.
//! Expression strings use the infix grammar of the expression core; symbol
//! aliases declared under `names` are rewritten to the canonical
//! coordinate names on load.

use ksoc_core::config::Tolerances;
use ksoc_core::control::ControlSystem;
use ksoc_core::expr::{parse as parse_expr, substitute, Expr};
use ksoc_core::grid::{ControlField, Grid, GridAxis};
use ksoc_core::names;
use ksoc_core::skinner_rusk::ImplicitProblem;
use ksoc_core::ZeroProbe;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON at {path}: {message}")]
    Json { path: String, message: String },
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
}

fn field_err(field: impl Into<String>, message: impl ToString) -> ProblemError {
    ProblemError::Field {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NamesSection {
    #[serde(default)]
    pub states: Vec<String>,
    #[serde(default)]
    pub controls: Vec<String>,
    #[serde(default)]
    pub times: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub k: usize,
    pub n: usize,
    pub l: usize,
    #[serde(default)]
    pub names: Option<NamesSection>,
    #[serde(rename = "X")]
    pub components: Vec<Vec<String>>,
    #[serde(rename = "F")]
    pub cost: String,
    #[serde(rename = "U", default)]
    pub control_box: Vec<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImplicitSection {
    pub k: usize,
    pub n: usize,
    pub l: usize,
    #[serde(default)]
    pub names: Option<NamesSection>,
    pub constraints: Vec<String>,
    pub lagrangian: String,
    #[serde(default = "default_true")]
    pub controls_present: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub steps: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsSection {
    #[serde(default)]
    pub constant: Option<Vec<f64>>,
    #[serde(default)]
    pub cells: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub q: Vec<f64>,
    #[serde(default)]
    pub p: Vec<f64>,
    #[serde(default)]
    pub free_v: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSection {
    pub covector: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFileRaw {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerances: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub system: Option<SystemSection>,
    #[serde(default)]
    pub implicit: Option<ImplicitSection>,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub controls: Option<ControlsSection>,
    #[serde(default)]
    pub initial: Option<InitialSection>,
    #[serde(default)]
    pub terminal: Option<TerminalSection>,
    #[serde(default)]
    pub free_components: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub max_generations: Option<usize>,
}

/// Fully validated problem.
pub struct ProblemFile {
    pub seed: u64,
    pub tolerances: Tolerances,
    pub path: ProblemPath,
    pub grid: Option<Grid>,
    pub control: Option<ControlField>,
    pub initial: InitialSection,
    pub terminal: Option<Vec<f64>>,
    pub free_components: BTreeMap<String, f64>,
    pub max_generations: usize,
}

pub enum ProblemPath {
    Explicit(ControlSystem),
    Implicit(ImplicitProblem),
}

pub fn load(path: &Path) -> Result<ProblemFile, ProblemError> {
    let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let raw: ProblemFileRaw =
        serde_path_to_error::deserialize(de).map_err(|e| ProblemError::Json {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    build(raw)
}

fn build(raw: ProblemFileRaw) -> Result<ProblemFile, ProblemError> {
    let seed = raw.seed.unwrap_or(0);
    let mut tolerances = Tolerances::default();
    if let Some(tols) = &raw.tolerances {
        for (k, v) in tols {
            tolerances
                .set(k, *v)
                .map_err(|m| field_err(format!("tolerances.{k}"), m))?;
        }
    }
    let probe = ZeroProbe {
        seed,
        tol: tolerances.zero,
        ..ZeroProbe::default()
    };

    let path = match (raw.system, raw.implicit) {
        (Some(_), Some(_)) => {
            return Err(field_err(
                "system/implicit",
                "exactly one of `system` or `implicit` must be present, found both",
            ))
        }
        (None, None) => {
            return Err(field_err(
                "system/implicit",
                "exactly one of `system` or `implicit` must be present, found neither",
            ))
        }
        (Some(sys), None) => ProblemPath::Explicit(build_system(sys)?),
        (None, Some(imp)) => ProblemPath::Implicit(build_implicit(imp, &probe)?),
    };

    let grid = match &raw.grid {
        None => None,
        Some(g) => {
            let k = match &path {
                ProblemPath::Explicit(s) => s.k,
                ProblemPath::Implicit(p) => p.k,
            };
            if g.start.len() != k || g.end.len() != k || g.steps.len() != k {
                return Err(field_err(
                    "grid",
                    format!("start/end/steps must each have {k} entries"),
                ));
            }
            let axes = (0..k)
                .map(|a| GridAxis {
                    start: g.start[a],
                    end: g.end[a],
                    steps: g.steps[a],
                })
                .collect();
            Some(Grid::new(axes).map_err(|e| field_err("grid", e))?)
        }
    };

    let control = match &raw.controls {
        None => None,
        Some(c) => match (&c.constant, &c.cells) {
            (Some(v), None) => Some(ControlField::Constant(v.clone())),
            (None, Some(rows)) => Some(ControlField::PerCell(rows.clone())),
            _ => {
                return Err(field_err(
                    "controls",
                    "provide exactly one of `constant` or `cells`",
                ))
            }
        },
    };
    if let (Some(ControlField::PerCell(rows)), Some(g)) = (&control, &grid) {
        if rows.len() != g.total_cells() {
            return Err(field_err(
                "controls.cells",
                format!("expected {} cell rows, got {}", g.total_cells(), rows.len()),
            ));
        }
    }

    Ok(ProblemFile {
        seed,
        tolerances,
        path,
        grid,
        control,
        initial: raw.initial.unwrap_or_default(),
        terminal: raw.terminal.map(|t| t.covector),
        free_components: raw.free_components.unwrap_or_default(),
        max_generations: raw.max_generations.unwrap_or(8),
    })
}

/// Rewrites alias symbols to the canonical convention.
fn alias_map(names_sec: &Option<NamesSection>, k: usize, n: usize, l: usize) -> BTreeMap<String, Expr> {
    let mut map = BTreeMap::new();
    if let Some(ns) = names_sec {
        for (i, alias) in ns.states.iter().enumerate().take(n) {
            map.insert(alias.clone(), Expr::sym(names::state(i + 1)));
        }
        for (a, alias) in ns.controls.iter().enumerate().take(l) {
            map.insert(alias.clone(), Expr::sym(names::control(a + 1)));
        }
        for (a, alias) in ns.times.iter().enumerate().take(k) {
            map.insert(alias.clone(), Expr::sym(names::time(a + 1)));
        }
    }
    map
}

fn parse_field(field: &str, src: &str, aliases: &BTreeMap<String, Expr>) -> Result<Expr, ProblemError> {
    let e = parse_expr(src).map_err(|err| field_err(field, err))?;
    Ok(substitute(&e, aliases))
}

fn build_system(sys: SystemSection) -> Result<ControlSystem, ProblemError> {
    if sys.components.len() != sys.k {
        return Err(field_err(
            "system.X",
            format!("expected {} rows, got {}", sys.k, sys.components.len()),
        ));
    }
    let aliases = alias_map(&sys.names, sys.k, sys.n, sys.l);
    let mut table = Vec::with_capacity(sys.k);
    for (a, row) in sys.components.iter().enumerate() {
        if row.len() != sys.n {
            return Err(field_err(
                format!("system.X[{a}]"),
                format!("expected {} entries, got {}", sys.n, row.len()),
            ));
        }
        let mut exprs = Vec::with_capacity(sys.n);
        for (i, src) in row.iter().enumerate() {
            exprs.push(parse_field(&format!("system.X[{a}][{i}]"), src, &aliases)?);
        }
        table.push(exprs);
    }
    let cost = parse_field("system.F", &sys.cost, &aliases)?;
    let control_box: Vec<(f64, f64)> = sys.control_box.iter().map(|b| (b[0], b[1])).collect();
    if control_box.len() != sys.l {
        return Err(field_err(
            "system.U",
            format!("expected {} intervals, got {}", sys.l, control_box.len()),
        ));
    }
    ControlSystem::new(sys.k, sys.n, sys.l, table, cost, control_box)
        .map_err(|e| field_err("system", e))
}

fn build_implicit(imp: ImplicitSection, probe: &ZeroProbe) -> Result<ImplicitProblem, ProblemError> {
    let aliases = alias_map(&imp.names, imp.k, imp.n, imp.l);
    let mut constraints = Vec::with_capacity(imp.constraints.len());
    for (alpha, src) in imp.constraints.iter().enumerate() {
        constraints.push(parse_field(
            &format!("implicit.constraints[{alpha}]"),
            src,
            &aliases,
        )?);
    }
    let lagrangian = parse_field("implicit.lagrangian", &imp.lagrangian, &aliases)?;
    ImplicitProblem::new(
        imp.k,
        imp.n,
        imp.l,
        constraints,
        lagrangian,
        imp.controls_present,
        probe,
    )
    .map_err(|e| field_err("implicit", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(text: &str) -> Result<ProblemFile, ProblemError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: ProblemFileRaw = serde_path_to_error::deserialize(de).map_err(|e| {
            ProblemError::Json {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            }
        })?;
        build(raw)
    }

    #[test]
    fn loads_explicit_system_with_aliases() {
        let p = load_str(
            r#"{
                "system": {
                    "k": 1, "n": 2, "l": 1,
                    "names": {"states": ["x1", "x2"], "controls": ["u"]},
                    "X": [["x2", "u"]],
                    "F": "1/2*u^2",
                    "U": [[-1, 1]]
                },
                "grid": {"start": [0], "end": [1], "steps": [10]}
            }"#,
        )
        .unwrap();
        let ProblemPath::Explicit(sys) = &p.path else {
            panic!("expected explicit path");
        };
        assert_eq!(sys.component(1, 1), &Expr::sym("q2"));
        assert_eq!(sys.component(1, 2), &Expr::sym("u1"));
    }

    #[test]
    fn rejects_both_sections() {
        let err = load_str(
            r#"{
                "system": {"k":1,"n":1,"l":0,"X":[["q1"]],"F":"0","U":[]},
                "implicit": {"k":1,"n":1,"l":0,"constraints":[],"lagrangian":"0","controls_present":false}
            }"#,
        );
        assert!(matches!(err, Err(ProblemError::Field { field, .. }) if field == "system/implicit"));
    }

    #[test]
    fn rejects_empty_file_with_field_message() {
        let err = load_str("{}");
        assert!(matches!(err, Err(ProblemError::Field { .. })));
    }

    #[test]
    fn rejects_bad_expression_with_field() {
        let err = load_str(
            r#"{"system": {"k":1,"n":1,"l":0,"X":[["q1 +"]],"F":"0","U":[]}}"#,
        );
        match err {
            Err(ProblemError::Field { field, .. }) => assert_eq!(field, "system.X[0][0]"),
            Err(other) => panic!("expected field error, got {other:?}"),
            Ok(_) => panic!("expected field error, got success"),
        }
    }

    #[test]
    fn grid_shape_validated() {
        let err = load_str(
            r#"{
                "system": {"k":2,"n":1,"l":0,"X":[["q1"],["q1"]],"F":"0","U":[]},
                "grid": {"start": [0], "end": [1], "steps": [4]}
            }"#,
        );
        assert!(matches!(err, Err(ProblemError::Field { field, .. }) if field == "grid"));
    }
}
