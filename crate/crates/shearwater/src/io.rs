//! Setup ingestion, field snapshots, and the diagnostics log.
//!
//! A setup is a TOML document with `problem` / `constants` / `grid` /
//! `schemes` / `boundary` / `initial` / `io` sections; every equation is a
//! string in the same `Eq(...)` syntax the solver parses. Snapshots are a
//! JSON metadata document beside one raw binary of little-endian f64
//! interior values, row-major, each field at a recorded byte offset — no
//! container library, the layout is documented bit-exactly. Diagnostics rows
//! append to a three-column CSV with 17-significant-digit values.

use crate::diagnostics::DiagnosticRow;
use crate::discretize::{reserved_name_reason, TemporalScheme};
use crate::expr::{parse_equation, Equation, Expr, Head};
use crate::grid::{FieldSet, Grid};
use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SetupError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("symbols without a declaration: {0}")]
    Symbol(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn config(path: &str, message: impl Into<String>) -> SetupError {
    SetupError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Boundary treatment for one direction (applied to both sides).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BoundarySpec {
    Periodic,
    /// Mirror about each boundary face; the named fields flip sign
    /// (components normal to the boundary).
    Symmetry { odd: Vec<String> },
}

/// A validated setup document: everything needed to build and run a problem.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub ndim: usize,
    pub equations: Vec<String>,
    pub substitutions: Vec<String>,
    pub formulas: Vec<String>,
    /// User constants (without `dt`/`niter`, which are extracted below).
    pub constants: IndexMap<String, f64>,
    pub shape: Vec<usize>,
    pub deltas: Vec<f64>,
    pub accuracy: usize,
    pub scheme: TemporalScheme,
    /// One entry per direction.
    pub boundaries: Vec<BoundarySpec>,
    /// Field name -> initial-value expression (may use `idx0`, `delta0`,
    /// constants, and elementary functions).
    pub initial: IndexMap<String, String>,
    pub dt: f64,
    pub niter: usize,
    /// Snapshot cadence in steps; 0 means final state only.
    pub snapshot_every: usize,
    /// Diagnostics cadence in steps; 0 disables the time series.
    pub diagnostics_every: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSetup {
    problem: RawProblem,
    #[serde(default)]
    constants: IndexMap<String, toml::Value>,
    grid: RawGrid,
    schemes: RawSchemes,
    boundary: IndexMap<String, RawBoundary>,
    #[serde(default)]
    initial: IndexMap<String, String>,
    #[serde(default)]
    io: RawIo,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    ndim: usize,
    equations: Vec<String>,
    #[serde(default)]
    substitutions: Vec<String>,
    #[serde(default)]
    formulas: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    shape: Vec<usize>,
    deltas: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchemes {
    spatial_order: usize,
    temporal: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawBoundary {
    Kind(String),
    Table {
        kind: String,
        #[serde(default)]
        odd: Vec<String>,
    },
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawIo {
    #[serde(default)]
    snapshot_every: usize,
    #[serde(default)]
    diagnostics_every: usize,
}

/// Read and validate a setup document.
pub fn read_setup(path: &Path) -> Result<ProblemSpec, SetupError> {
    let text = std::fs::read_to_string(path)?;
    parse_setup(&text)
}

/// Validate a setup document from memory (the bundled cases and tests).
pub fn parse_setup(text: &str) -> Result<ProblemSpec, SetupError> {
    let raw: RawSetup =
        toml::from_str(text).map_err(|e| config("document", e.message().to_string()))?;

    let ndim = raw.problem.ndim;
    if !(1..=3).contains(&ndim) {
        return Err(config("problem.ndim", format!("must be 1..=3, got {ndim}")));
    }
    if raw.grid.shape.len() != ndim {
        return Err(SetupError::Dimension(format!(
            "grid.shape has {} entries for ndim {ndim}",
            raw.grid.shape.len()
        )));
    }
    if raw.grid.deltas.len() != ndim {
        return Err(SetupError::Dimension(format!(
            "grid.deltas has {} entries for ndim {ndim}",
            raw.grid.deltas.len()
        )));
    }
    if raw.grid.shape.iter().any(|&n| n == 0) {
        return Err(config("grid.shape", "every direction needs at least one point"));
    }
    if raw.grid.deltas.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(config("grid.deltas", "spacings must be positive and finite"));
    }
    if raw.problem.equations.is_empty() {
        return Err(config("problem.equations", "at least one equation is required"));
    }

    let accuracy = raw.schemes.spatial_order;
    if accuracy < 2 || accuracy % 2 != 0 {
        return Err(config(
            "schemes.spatial_order",
            format!("central schemes need a positive even order, got {accuracy}"),
        ));
    }
    let scheme = match raw.schemes.temporal.as_str() {
        "euler" | "forward_euler" => TemporalScheme::ForwardEuler,
        "rk3" => TemporalScheme::Rk3LowStorage,
        other => {
            return Err(config(
                "schemes.temporal",
                format!("unknown scheme {other:?} (expected \"euler\" or \"rk3\")"),
            ))
        }
    };

    // Constants: numeric values only; dt and niter are control values that
    // live alongside the physical constants in the document.
    let mut constants = IndexMap::new();
    for (name, value) in &raw.constants {
        let v = match value {
            toml::Value::Integer(i) => *i as f64,
            toml::Value::Float(f) => *f,
            other => {
                return Err(config(
                    &format!("constants.{name}"),
                    format!("expected a number, got {other}"),
                ))
            }
        };
        if !v.is_finite() {
            return Err(config(&format!("constants.{name}"), "must be finite"));
        }
        if name != "dt" && name != "niter" {
            if let Some(reason) = reserved_name_reason(name) {
                return Err(config(&format!("constants.{name}"), reason));
            }
        }
        constants.insert(name.clone(), v);
    }
    let dt = match constants.shift_remove("dt") {
        Some(v) if v > 0.0 => v,
        Some(v) => return Err(config("constants.dt", format!("must be positive, got {v}"))),
        None => return Err(config("constants.dt", "missing (the time step)")),
    };
    let niter = match constants.shift_remove("niter") {
        Some(v) if v >= 0.0 && v.fract() == 0.0 && v <= 1e15 => v as usize,
        Some(v) => {
            return Err(config(
                "constants.niter",
                format!("must be a non-negative integer, got {v}"),
            ))
        }
        None => return Err(config("constants.niter", "missing (the step count)")),
    };

    // Boundaries: one entry per direction, keyed x0..x{ndim-1}.
    let mut boundaries = Vec::with_capacity(ndim);
    for d in 0..ndim {
        let key = format!("x{d}");
        let raw_bc = raw
            .boundary
            .get(&key)
            .ok_or_else(|| config(&format!("boundary.{key}"), "missing direction entry"))?;
        let (kind, odd) = match raw_bc {
            RawBoundary::Kind(k) => (k.as_str(), Vec::new()),
            RawBoundary::Table { kind, odd } => (kind.as_str(), odd.clone()),
        };
        let spec = match kind {
            "periodic" => {
                if !odd.is_empty() {
                    return Err(config(
                        &format!("boundary.{key}"),
                        "odd fields only apply to symmetry boundaries",
                    ));
                }
                BoundarySpec::Periodic
            }
            "symmetry" => BoundarySpec::Symmetry { odd },
            other => {
                return Err(config(
                    &format!("boundary.{key}"),
                    format!("unknown kind {other:?} (expected \"periodic\" or \"symmetry\")"),
                ))
            }
        };
        boundaries.push(spec);
    }
    for key in raw.boundary.keys() {
        let recognised = key
            .strip_prefix('x')
            .and_then(|r| r.parse::<usize>().ok())
            .map(|d| d < ndim)
            .unwrap_or(false);
        if !recognised {
            return Err(config(
                &format!("boundary.{key}"),
                format!("not a direction of a {ndim}-dimensional grid"),
            ));
        }
    }

    let spec = ProblemSpec {
        ndim,
        equations: raw.problem.equations,
        substitutions: raw.problem.substitutions,
        formulas: raw.problem.formulas,
        constants,
        shape: raw.grid.shape,
        deltas: raw.grid.deltas,
        accuracy,
        scheme,
        boundaries,
        initial: raw.initial,
        dt,
        niter,
        snapshot_every: raw.io.snapshot_every,
        diagnostics_every: raw.io.diagnostics_every,
    };
    check_symbols(&spec)?;
    Ok(spec)
}

/// Parse every equation string and verify each symbol has a home: a
/// prognostic, a formula or substitution target, a constant, or a grid
/// symbol (coordinates, time, `idx{d}`, `delta{d}`).
/// An indexed definition (say `u_i`) also houses every expanded component
/// other strings may spell directly (`u0`, `u1`, ...): initial conditions in
/// particular are written per component.
fn house_components(houses: &mut IndexSet<String>, base: &str, indices: &[char], ndim: usize) {
    if indices.is_empty() {
        return;
    }
    let mut letters: Vec<char> = Vec::new();
    for &c in indices {
        if !letters.contains(&c) {
            letters.push(c);
        }
    }
    let combinations = ndim.pow(letters.len() as u32);
    for code in 0..combinations {
        let digit_of = |letter: char| {
            let at = letters.iter().position(|&c| c == letter).expect("collected");
            (code / ndim.pow(at as u32)) % ndim
        };
        let mut name = base.to_string();
        for &c in indices {
            name.push_str(&digit_of(c).to_string());
        }
        houses.insert(name);
    }
}

fn check_symbols(spec: &ProblemSpec) -> Result<(), SetupError> {
    let const_names: HashSet<String> = spec.constants.keys().cloned().collect();
    let parse = |src: &str, path: &str| -> Result<Equation, SetupError> {
        parse_equation(src, &const_names).map_err(|e| config(path, e.to_string()))
    };

    let mut houses: IndexSet<String> = spec.constants.keys().cloned().collect();
    let mut equations = Vec::new();
    for (i, src) in spec.equations.iter().enumerate() {
        let eq = parse(src, &format!("problem.equations[{i}]"))?;
        // A prognostic equation's lhs is Der(target, t).
        match &eq.lhs {
            Expr::Apply(Head::Der, args) if args.len() == 2 => {
                if let (Expr::Term(target), Expr::Term(t)) = (&args[0], &args[1]) {
                    if t.is_time {
                        houses.insert(target.base.clone());
                        house_components(&mut houses, &target.base, &target.indices, spec.ndim);
                        check_name(&target.base, &format!("problem.equations[{i}]"))?;
                    }
                }
            }
            _ => {
                return Err(config(
                    &format!("problem.equations[{i}]"),
                    "equations must advance a field in time: Eq(Der(name, t), ...)",
                ))
            }
        }
        equations.push(eq);
    }
    let mut defined = Vec::new();
    for (list, section) in [
        (&spec.substitutions, "problem.substitutions"),
        (&spec.formulas, "problem.formulas"),
    ] {
        for (i, src) in list.iter().enumerate() {
            let path = format!("{section}[{i}]");
            let eq = parse(src, &path)?;
            match &eq.lhs {
                Expr::Term(t) if !t.is_coordinate && !t.is_time && !t.is_constant => {
                    houses.insert(t.base.clone());
                    house_components(&mut houses, &t.base, &t.indices, spec.ndim);
                    check_name(&t.base, &path)?;
                }
                other => {
                    return Err(config(
                        &path,
                        format!("target must be a plain name, got {other}"),
                    ))
                }
            }
            defined.push(eq);
        }
    }
    for (name, src) in &spec.initial {
        let path = format!("initial.{name}");
        if let Some(reason) = reserved_name_reason(name) {
            return Err(config(&path, reason));
        }
        let eq = parse(&format!("Eq({name}, {src})"), &path)?;
        if contains_operator(&eq.rhs) {
            return Err(config(
                &path,
                "initial values are pointwise; derivatives are not allowed here",
            ));
        }
        defined.push(eq);
    }

    let mut homeless: IndexSet<String> = IndexSet::new();
    for eq in equations.iter().chain(&defined) {
        collect_symbols(&eq.rhs, spec.ndim, &mut |base| {
            if !houses.contains(base) && !is_grid_symbol(base, spec.ndim) {
                homeless.insert(base.to_string());
            }
        });
    }
    if !homeless.is_empty() {
        let list: Vec<&str> = homeless.iter().map(String::as_str).collect();
        return Err(SetupError::Symbol(list.join(", ")));
    }
    Ok(())
}

fn check_name(name: &str, path: &str) -> Result<(), SetupError> {
    match reserved_name_reason(name) {
        Some(reason) => Err(config(path, format!("{name}: {reason}"))),
        None => Ok(()),
    }
}

fn contains_operator(e: &Expr) -> bool {
    match e {
        Expr::Apply(Head::Der | Head::Conservative | Head::Skew, _) => true,
        Expr::Apply(_, args) | Expr::Sum(args) | Expr::Product(args) => {
            args.iter().any(contains_operator)
        }
        Expr::Power(a, b) => contains_operator(a) || contains_operator(b),
        Expr::Derivative(_) => true,
        _ => false,
    }
}

/// `idx{d}` and `delta{d}` with d below ndim are provided by the runtime.
fn is_grid_symbol(base: &str, ndim: usize) -> bool {
    for prefix in ["idx", "delta"] {
        if let Some(rest) = base.strip_prefix(prefix) {
            if let Ok(d) = rest.parse::<usize>() {
                return d < ndim;
            }
        }
    }
    false
}

/// Visit the base name of every non-constant symbol in an expression.
fn collect_symbols(e: &Expr, ndim: usize, visit: &mut impl FnMut(&str)) {
    match e {
        Expr::Term(t) => {
            if !t.is_constant && !t.is_coordinate && !t.is_time {
                visit(&t.base);
            }
        }
        Expr::Field(f) => visit(&f.name),
        Expr::Sum(cs) | Expr::Product(cs) => {
            for c in cs {
                collect_symbols(c, ndim, visit);
            }
        }
        Expr::Power(a, b) => {
            collect_symbols(a, ndim, visit);
            collect_symbols(b, ndim, visit);
        }
        Expr::Apply(h, args) => {
            // Index arguments of the index symbols are letters, not fields.
            if !matches!(h, Head::KroneckerDelta | Head::LeviCivita) {
                for a in args {
                    collect_symbols(a, ndim, visit);
                }
            }
        }
        Expr::Derivative(d) => collect_symbols(&d.operand, ndim, visit),
        Expr::Rational(_) | Expr::Float(_) => {}
    }
}

/// Snapshot metadata, serialised as JSON beside the binary block.
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct SnapshotMeta {
    pub version: u32,
    pub ndim: usize,
    pub shape: Vec<usize>,
    pub deltas: Vec<f64>,
    pub time: f64,
    pub iteration: usize,
    pub fields: Vec<SnapshotField>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct SnapshotField {
    pub name: String,
    /// Byte offset of this field's block in the binary file.
    pub offset_file: u64,
    pub dtype: String,
    pub layout: String,
}

/// Write `stem.json` and `stem.bin`: interior points only, row-major,
/// little-endian f64, fields in the order given.
pub fn write_snapshot(
    fields: &FieldSet,
    names: &[String],
    grid: &Grid,
    time: f64,
    iteration: usize,
    stem: &Path,
) -> Result<(), SetupError> {
    let row_len = grid.row_len();
    let field_bytes = (grid.interior_len() * 8) as u64;
    let mut meta = SnapshotMeta {
        version: 1,
        ndim: grid.ndim,
        shape: grid.shape.clone(),
        deltas: grid.deltas.clone(),
        time,
        iteration,
        fields: Vec::with_capacity(names.len()),
    };
    let mut blob: Vec<u8> = Vec::with_capacity((field_bytes as usize) * names.len());
    for (i, name) in names.iter().enumerate() {
        let data = fields.get(name).map_err(|e| SetupError::Config {
            path: format!("snapshot field {name}"),
            message: e.to_string(),
        })?;
        meta.fields.push(SnapshotField {
            name: name.clone(),
            offset_file: field_bytes * i as u64,
            dtype: "f64le".to_string(),
            layout: "row-major".to_string(),
        });
        for start in grid.interior_row_starts() {
            for v in &data[start..start + row_len] {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let json = serde_json::to_string_pretty(&meta).expect("metadata is plain data");
    std::fs::write(stem.with_extension("json"), json)?;
    std::fs::write(stem.with_extension("bin"), blob)?;
    Ok(())
}

/// Read a snapshot back: metadata plus interior values per field.
pub fn read_snapshot(stem: &Path) -> Result<(SnapshotMeta, IndexMap<String, Vec<f64>>), SetupError> {
    let json = std::fs::read_to_string(stem.with_extension("json"))?;
    let meta: SnapshotMeta = serde_json::from_str(&json).map_err(|e| SetupError::Config {
        path: stem.display().to_string(),
        message: e.to_string(),
    })?;
    let blob = std::fs::read(stem.with_extension("bin"))?;
    let count: usize = meta.shape.iter().product();
    let mut fields = IndexMap::new();
    for f in &meta.fields {
        let start = f.offset_file as usize;
        let end = start + count * 8;
        if end > blob.len() {
            return Err(SetupError::Config {
                path: stem.display().to_string(),
                message: format!("binary too short for field {}", f.name),
            });
        }
        let values: Vec<f64> = blob[start..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        fields.insert(f.name.clone(), values);
    }
    Ok((meta, fields))
}

/// Append one diagnostics row, writing the header on first touch.
pub fn append_diagnostics(row: &DiagnosticRow, path: &Path) -> Result<(), SetupError> {
    let fresh = !path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if fresh {
        writeln!(file, "t,kinetic_energy,enstrophy")?;
    }
    writeln!(
        file,
        "{:.16e},{:.16e},{:.16e}",
        row.time, row.kinetic_energy, row.enstrophy
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const WAVE: &str = r#"
        [problem]
        ndim = 1
        equations = ["Eq(Der(phi, t), -c*Conservative(phi, x0))"]

        [constants]
        c = 0.5
        twopi = 6.283185307179586
        dt = 4.0e-4
        niter = 2500

        [grid]
        shape = [1000]
        deltas = [0.001]

        [schemes]
        spatial_order = 8
        temporal = "rk3"

        [boundary]
        x0 = "periodic"

        [initial]
        phi = "sin(twopi*idx0*delta0)"

        [io]
        snapshot_every = 0
        diagnostics_every = 250
    "#;

    fn wave_text_with(needle: &str, replacement: &str) -> String {
        let text = WAVE.replace(needle, replacement);
        assert_ne!(text, WAVE, "needle {needle:?} not found");
        text
    }

    #[test]
    fn wave_setup_reads_and_validates() {
        let spec = parse_setup(WAVE).unwrap();
        assert_eq!(spec.ndim, 1);
        assert_eq!(spec.shape, vec![1000]);
        assert_eq!(spec.dt, 4.0e-4);
        assert_eq!(spec.niter, 2500);
        assert_eq!(spec.scheme, TemporalScheme::Rk3LowStorage);
        assert_eq!(spec.boundaries, vec![BoundarySpec::Periodic]);
        assert_eq!(spec.constants.len(), 2); // c and twopi
        assert_eq!(spec.snapshot_every, 0);
        assert_eq!(spec.diagnostics_every, 250);
    }

    #[test]
    fn undeclared_symbol_is_reported_by_name() {
        let text = wave_text_with("-c*Conservative(phi, x0)", "-c*Conservative(phi, x0) + w");
        let err = parse_setup(&text).unwrap_err();
        match err {
            SetupError::Symbol(list) => assert_eq!(list, "w"),
            other => panic!("expected symbol error, got {other}"),
        }
    }

    #[test]
    fn wrong_delta_count_is_a_dimension_error() {
        let text = wave_text_with("deltas = [0.001]", "deltas = [0.001, 0.002]");
        let err = parse_setup(&text).unwrap_err();
        assert!(matches!(err, SetupError::Dimension(_)), "{err}");
    }

    #[test]
    fn missing_boundary_direction_is_flagged_with_its_key() {
        let text = wave_text_with("x0 = \"periodic\"", "x1 = \"periodic\"");
        let err = parse_setup(&text).unwrap_err();
        assert!(err.to_string().contains("boundary.x"), "{err}");
    }

    #[test]
    fn reserved_names_are_rejected_where_users_could_collide() {
        for (needle, replacement) in [
            ("Eq(Der(phi, t)", "Eq(Der(wk0, t)"),
            ("phi = \"sin", "rc1 = \"sin"),
            ("twopi = 6.283185307179586", "delta0 = 6.283185307179586"),
        ] {
            let text = wave_text_with(needle, replacement);
            let err = parse_setup(&text).unwrap_err();
            assert!(matches!(err, SetupError::Config { .. }), "{err}");
        }
    }

    #[test]
    fn formula_equations_house_their_symbols() {
        let text = wave_text_with(
            "equations = [\"Eq(Der(phi, t), -c*Conservative(phi, x0))\"]",
            "equations = [\"Eq(Der(phi, t), -c*Conservative(flux, x0))\"]\nformulas = [\"Eq(flux, phi)\"]",
        );
        let spec = parse_setup(&text).unwrap();
        assert_eq!(spec.formulas.len(), 1);
    }

    #[test]
    fn snapshot_round_trip_is_bitwise() {
        let grid = Grid::new(&[3, 4], &[0.25, 0.5], &[1, 2]).unwrap();
        let mut fields = FieldSet::new(grid.clone());
        fields.allocate("a").unwrap();
        fields.allocate("b").unwrap();
        for (i, v) in fields.get_mut("a").unwrap().iter_mut().enumerate() {
            *v = (i as f64).sin() * 1.0e10;
        }
        for (i, v) in fields.get_mut("b").unwrap().iter_mut().enumerate() {
            *v = -((i * i) as f64) / 7.0;
        }
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("state_000007");
        let names = vec!["a".to_string(), "b".to_string()];
        write_snapshot(&fields, &names, &grid, 0.875, 7, &stem).unwrap();
        let (meta, data) = read_snapshot(&stem).unwrap();
        assert_eq!(meta.iteration, 7);
        assert_eq!(meta.shape, vec![3, 4]);
        assert_eq!(meta.fields[1].offset_file, 12 * 8);
        let row_len = grid.row_len();
        for name in ["a", "b"] {
            let padded = fields.get(name).unwrap();
            let mut expect = Vec::new();
            for start in grid.interior_row_starts() {
                expect.extend_from_slice(&padded[start..start + row_len]);
            }
            let got = &data[name];
            assert_eq!(got.len(), expect.len());
            assert!(got
                .iter()
                .zip(&expect)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn diagnostics_rows_append_after_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diagnostics.csv");
        for step in 0..2 {
            append_diagnostics(
                &DiagnosticRow {
                    time: step as f64 * 0.5,
                    kinetic_energy: 0.125,
                    enstrophy: 1.5,
                },
                &path,
            )
            .unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "t,kinetic_energy,enstrophy");
        assert!(lines[1].starts_with("0.0000000000000000e0,1.2500000000000000e-1"));
        assert!(lines[2].starts_with("5.0000000000000000e-1"));
    }
}
