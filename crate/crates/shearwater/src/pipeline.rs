//! From a validated setup to a runnable program.
//!
//! The pipeline is the one place the whole stack is wired together: parse
//! the equation strings, apply substitutions, expand the index notation,
//! lower to a schedule, allocate the grid arrays, compile every kernel to
//! bytecode, resolve boundary passes against array slots, and run the
//! startup kernels. Each stage reports its own error type; everything here
//! is a setup problem, so the driver maps [`BuildError`] to a config exit.

use crate::discretize::{plan, DiscretizeError, Kernel, PlanInput};
use crate::einstein::{expand_system, EinsteinError};
use crate::expr::{parse_equation, substitute, Equation, ExprError, SubstitutionSet};
use crate::grid::{FieldSet, Grid, GridError};
use crate::io::{BoundarySpec, ProblemSpec};
use crate::runtime::{compile_kernel, worker_pool, BoundaryAction, CompileCtx, Program, Side};
use indexmap::IndexMap;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Einstein(#[from] EinsteinError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{0}")]
    Invalid(String),
}

/// Parse, substitute, and index-expand a setup's equations and formulas into
/// their per-component forms — the front half of [`build_program`], exposed
/// for tools that inspect the expansion without building storage.
pub fn expand_setup(spec: &ProblemSpec) -> Result<(Vec<Equation>, Vec<Equation>), BuildError> {
    let const_names: HashSet<String> = spec.constants.keys().cloned().collect();
    let parse_all = |sources: &[String]| -> Result<Vec<Equation>, BuildError> {
        sources
            .iter()
            .map(|src| parse_equation(src, &const_names).map_err(BuildError::from))
            .collect()
    };

    let substitutions = SubstitutionSet::from_equations(&parse_all(&spec.substitutions)?)?;
    let apply = |eqs: Vec<Equation>| -> Result<Vec<Equation>, BuildError> {
        eqs.iter()
            .map(|eq| substitute(eq, &substitutions).map_err(BuildError::from))
            .collect()
    };
    let equations = apply(parse_all(&spec.equations)?)?;
    let formulas = apply(parse_all(&spec.formulas)?)?;
    let equations = expand_system(&equations, spec.ndim)?;
    let formulas = expand_system(&formulas, spec.ndim)?;
    Ok((equations, formulas))
}

/// Build a ready-to-run [`Program`] from a validated setup.
///
/// Initial conditions are compiled as startup kernels in document order, so
/// later entries may read arrays written by earlier ones (the usual pattern
/// initialises primitive arrays first and forms conserved products from
/// them).
pub fn build_program(spec: &ProblemSpec, threads: usize) -> Result<Program, BuildError> {
    let const_names: HashSet<String> = spec.constants.keys().cloned().collect();
    let (equations, formulas) = expand_setup(spec)?;

    // Lower to a schedule and size the grid from its halo requirement.
    let plan = plan(PlanInput {
        equations: &equations,
        formulas: &formulas,
        shape: &spec.shape,
        deltas: &spec.deltas,
        accuracy: spec.accuracy,
        scheme: spec.scheme,
        constants: &spec.constants,
        dt: spec.dt,
    })?;
    let grid = Grid::new(&spec.shape, &spec.deltas, &vec![plan.halo; spec.ndim])?;

    let mut fields = FieldSet::new(grid.clone());
    for name in plan.prognostics.iter().map(String::as_str) {
        fields.allocate(name)?;
    }
    let derived: Vec<String> = plan.derived_arrays().map(str::to_string).collect();
    for name in &derived {
        fields.allocate(name)?;
    }
    let slots: IndexMap<String, usize> = fields
        .names()
        .enumerate()
        .map(|(i, n)| (n.to_string(), i))
        .collect();

    let ctx = CompileCtx {
        grid: &grid,
        slots: &slots,
        constants: &plan.constants,
        stencils: &plan.stencils,
    };
    let compile_all = |kernels: &[Kernel]| -> Result<Vec<_>, BuildError> {
        kernels
            .iter()
            .map(|k| compile_kernel(k, &ctx).map_err(BuildError::from))
            .collect()
    };
    let mut init = compile_all(&plan.init_kernels)?;
    let spatial = compile_all(&plan.spatial_kernels)?;
    let residual = compile_all(&plan.residual_kernels)?;
    let stages = compile_all(&plan.stage_kernels)?;

    // Initial conditions, in document order, after the hoisted invariants.
    let ic_substitutions = {
        let parsed: Result<Vec<Equation>, BuildError> = spec
            .substitutions
            .iter()
            .map(|src| parse_equation(src, &const_names).map_err(BuildError::from))
            .collect();
        SubstitutionSet::from_equations(&parsed?)?
    };
    for (name, src) in &spec.initial {
        if !fields.contains(name) {
            return Err(BuildError::Invalid(format!(
                "initial.{name}: not a field of this problem \
                 (expected one of the prognostics or formula arrays)"
            )));
        }
        let eq = parse_equation(&format!("Eq({name}, {src})"), &const_names)?;
        let eq = substitute(&eq, &ic_substitutions)?;
        let expanded = expand_system(std::slice::from_ref(&eq), spec.ndim)?;
        let kernel = Kernel {
            name: format!("init_{name}"),
            statements: expanded
                .iter()
                .map(|component| {
                    let target = match &component.lhs {
                        crate::expr::Expr::Field(f) => f.name.clone(),
                        other => {
                            return Err(BuildError::Invalid(format!(
                                "initial.{name}: target expands to {other}, not a field"
                            )))
                        }
                    };
                    Ok(crate::discretize::Assign {
                        target,
                        expr: component.rhs.clone(),
                    })
                })
                .collect::<Result<_, _>>()?,
            reads: Default::default(),
            writes: Default::default(),
            read_writes: Default::default(),
            range: crate::discretize::IterationRange::interior(&spec.shape),
            footprints: Default::default(),
        };
        init.push(compile_kernel(&kernel, &ctx)?);
    }

    let prognostic_slots: Vec<usize> = plan
        .prognostics
        .iter()
        .map(|n| slots[n.as_str()])
        .collect();
    let boundary = boundary_actions(spec, &plan.prognostics, &prognostic_slots)?;

    let mut program = Program {
        grid,
        plan,
        fields,
        init,
        spatial,
        residual,
        stages,
        boundary,
        dt: spec.dt,
        prognostic_slots,
        pool: worker_pool(threads),
        threads: threads.max(1),
    };
    program.initialize();
    Ok(program)
}

/// Resolve the per-direction boundary choices against prognostic slots, in
/// ascending direction order (corner halos rely on that order).
fn boundary_actions(
    spec: &ProblemSpec,
    prognostics: &[String],
    slots: &[usize],
) -> Result<Vec<BoundaryAction>, BuildError> {
    let mut actions = Vec::new();
    for (direction, bc) in spec.boundaries.iter().enumerate() {
        match bc {
            BoundarySpec::Periodic => actions.push(BoundaryAction::Periodic {
                direction,
                slots: slots.to_vec(),
            }),
            BoundarySpec::Symmetry { odd } => {
                for name in odd {
                    if !prognostics.contains(name) {
                        return Err(BuildError::Invalid(format!(
                            "boundary.x{direction}: odd field {name} is not a prognostic"
                        )));
                    }
                }
                let signed: Vec<(usize, i8)> = prognostics
                    .iter()
                    .zip(slots)
                    .map(|(name, &slot)| (slot, if odd.contains(name) { -1 } else { 1 }))
                    .collect();
                for side in [Side::Lower, Side::Upper] {
                    actions.push(BoundaryAction::Symmetry {
                        direction,
                        side,
                        slots: signed.clone(),
                    });
                }
            }
        }
    }
    Ok(actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::parse_setup;

    fn wave_spec() -> ProblemSpec {
        parse_setup(
            r#"
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
        "#,
        )
        .unwrap()
    }

    #[test]
    fn wave_program_builds_and_starts_from_its_initial_condition() {
        let spec = wave_spec();
        let program = build_program(&spec, 1).unwrap();
        assert_eq!(program.plan.prognostics, vec!["phi".to_string()]);
        assert_eq!(program.stages.len(), 3);
        let grid = &program.grid;
        let phi = program.fields.get("phi").unwrap();
        for i in [0usize, 137, 999] {
            let x = i as f64 * 0.001;
            let expect = (2.0 * std::f64::consts::PI * x).sin();
            let got = phi[grid.flatten(&[i as i64])];
            assert!(
                (got - expect).abs() < 1e-12,
                "phi({x}) = {got}, expected {expect}"
            );
        }
        // Halos are periodic images after initialize().
        let left = phi[grid.flatten(&[-1])];
        let right_interior = phi[grid.flatten(&[999])];
        assert_eq!(left.to_bits(), right_interior.to_bits());
    }

    #[test]
    fn one_step_of_advection_moves_the_wave_the_right_way() {
        let spec = wave_spec();
        let mut program = build_program(&spec, 1).unwrap();
        program.step();
        program.check_finite(1).unwrap();
        // Advection at c > 0: the profile shifts right, so a point just past
        // a crest keeps rising. phi(x, t) = sin(2 pi (x - c t)).
        let grid = &program.grid;
        let phi = program.fields.get("phi").unwrap();
        let x = 137.0 * 0.001;
        let t = 4.0e-4;
        let expect = (2.0 * std::f64::consts::PI * (x - 0.5 * t)).sin();
        let got = phi[grid.flatten(&[137])];
        assert!(
            (got - expect).abs() < 1e-9,
            "after one step phi = {got}, exact {expect}"
        );
    }

    #[test]
    fn initial_conditions_see_arrays_written_before_them() {
        let spec = parse_setup(
            r#"
            [problem]
            ndim = 1
            equations = ["Eq(Der(q, t), -Conservative(f, x0))"]
            formulas = ["Eq(f, 2*q)"]

            [constants]
            dt = 1.0e-3
            niter = 10

            [grid]
            shape = [16]
            deltas = [0.0625]

            [schemes]
            spatial_order = 2
            temporal = "euler"

            [boundary]
            x0 = "periodic"

            [initial]
            q = "1 + idx0*delta0"
            f = "3*q"
        "#,
        )
        .unwrap();
        let program = build_program(&spec, 1).unwrap();
        let grid = &program.grid;
        let q = program.fields.get("q").unwrap()[grid.flatten(&[5])];
        let f = program.fields.get("f").unwrap()[grid.flatten(&[5])];
        assert_eq!(q, 1.0 + 5.0 * 0.0625);
        assert_eq!(f, 3.0 * q);
    }

    #[test]
    fn unknown_initial_target_is_rejected() {
        let mut spec = wave_spec();
        spec.initial.insert("c".into(), "1".into());
        let err = match build_program(&spec, 1) {
            Err(e) => e,
            Ok(_) => panic!("expected a build error"),
        };
        assert!(err.to_string().contains("initial.c"), "{err}");
    }

    #[test]
    fn symmetry_boundaries_resolve_parities_per_field() {
        let spec = parse_setup(
            r#"
            [problem]
            ndim = 2
            equations = [
                "Eq(Der(r, t), -Conservative(ru_j, x_j))",
                "Eq(Der(ru_i, t), -Conservative(ru_i*ru_j*r**(-1), x_j))",
            ]

            [constants]
            dt = 1.0e-4
            niter = 1

            [grid]
            shape = [8, 8]
            deltas = [0.125, 0.125]

            [schemes]
            spatial_order = 2
            temporal = "euler"

            [boundary]
            x0 = { kind = "symmetry", odd = ["ru0"] }
            x1 = { kind = "symmetry", odd = ["ru1"] }

            [initial]
            r = "1"
        "#,
        )
        .unwrap();
        let program = build_program(&spec, 1).unwrap();
        // Two sides per direction.
        assert_eq!(program.boundary.len(), 4);
        let slot_ru0 = program.fields.slot("ru0").unwrap();
        let slot_ru1 = program.fields.slot("ru1").unwrap();
        match &program.boundary[0] {
            BoundaryAction::Symmetry { direction, slots, .. } => {
                assert_eq!(*direction, 0);
                let parity = |slot: usize| slots.iter().find(|(s, _)| *s == slot).unwrap().1;
                assert_eq!(parity(slot_ru0), -1);
                assert_eq!(parity(slot_ru1), 1);
            }
            other => panic!("expected symmetry first, got {other:?}"),
        }
    }
}
