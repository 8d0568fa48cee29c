//! Volume-integral diagnostics: kinetic energy and enstrophy.
//!
//! Velocities are rebuilt from the current prognostics into dedicated
//! `diag_*` arrays on every sample, so the numbers always reflect the state
//! after the last completed step (formula arrays lag by one stage).
//! Vorticity uses the alternating-symbol contraction ω_i = ε_ijk ∂u_k/∂x_j
//! expanded by the index machinery and differentiated with central stencils
//! of the solver's own accuracy order. Integrals are midpoint sums with the
//! runtime's fixed pairwise reduction tree, normalised by 1/(ρ_ref·Ω).

use crate::discretize::{
    central_coefficients, rename_fields, Assign, DiscretizeError, IterationRange, Kernel,
    LoweredStencil,
};
use crate::einstein::expand_system;
use crate::expr::{parse_equation, Expr, FieldRef};
use crate::grid::Grid;
use crate::runtime::{
    compile_kernel, compile_reduction, execute_kernel, pairwise_sum, reduce_interior, CompileCtx,
    CompiledKernel, CompiledReduction, Program,
};
use indexmap::IndexMap;
use std::collections::HashSet;

/// One line of the diagnostics time series: the density-weighted integrals
/// (they fall back to unweighted when the state has no density).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticRow {
    pub time: f64,
    pub kinetic_energy: f64,
    pub enstrophy: f64,
}

/// Every computed variant of one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiagnosticSample {
    pub kinetic_energy: f64,
    pub enstrophy: f64,
    pub kinetic_energy_unweighted: f64,
    pub enstrophy_unweighted: f64,
}

/// Midpoint-rule volume integral of a padded array's interior, normalised:
/// (1/(ρ_ref·Ω)) Σ v·ΠΔx with Ω = Π(N·Δx). A unit integrand gives 1.
pub fn volume_integral(field: &[f64], grid: &Grid, rho_ref: f64) -> f64 {
    let row_len = grid.row_len();
    let rows: Vec<f64> = grid
        .interior_row_starts()
        .into_iter()
        .map(|s| pairwise_sum(&field[s..s + row_len]))
        .collect();
    normalize(pairwise_sum(&rows), grid, rho_ref)
}

fn normalize(sum: f64, grid: &Grid, rho_ref: f64) -> f64 {
    let cell: f64 = grid.deltas.iter().product();
    let omega: f64 = grid
        .deltas
        .iter()
        .zip(&grid.shape)
        .map(|(dx, &n)| dx * n as f64)
        .product();
    sum * cell / (rho_ref * omega)
}

/// Compiled sampling schedule for one program's state layout.
pub struct Diagnostics {
    /// Rebuilds `diag_u*` from the prognostics (extended range when
    /// vorticity needs a stencil reach).
    velocity: Option<CompiledKernel>,
    /// Writes the vorticity components `diag_w*` over the interior.
    vorticity: Option<CompiledKernel>,
    weighted: bool,
    ke: Option<CompiledReduction>,
    ens: Option<CompiledReduction>,
    ke_unweighted: Option<CompiledReduction>,
    ens_unweighted: Option<CompiledReduction>,
    rho_ref: f64,
}

impl Diagnostics {
    /// Inspect the program's state for velocities (direct `u{d}` prognostics
    /// or `rhou{d}`/`rho` pairs) and compile the sampling kernels. States
    /// without velocities sample as zeros. Allocates the `diag_*` arrays.
    pub fn build(program: &mut Program) -> Result<Diagnostics, DiscretizeError> {
        let ndim = program.grid.ndim;
        let prog: HashSet<&str> = program
            .plan
            .prognostics
            .iter()
            .map(String::as_str)
            .collect();
        let conservative = prog.contains("rho")
            && (0..ndim).all(|d| prog.contains(format!("rhou{d}").as_str()));
        let direct = (0..ndim).all(|d| prog.contains(format!("u{d}").as_str()));
        if !conservative && !direct {
            return Ok(Diagnostics::disabled());
        }
        let weighted = conservative;
        let rho_ref = program
            .plan
            .constants
            .get("rho_ref")
            .copied()
            .unwrap_or(1.0);

        // Velocity expressions against the prognostic arrays.
        let vel_exprs: Vec<Expr> = (0..ndim)
            .map(|d| {
                if direct {
                    Expr::Field(FieldRef::new(&format!("u{d}")))
                } else {
                    Expr::Product(vec![
                        Expr::Field(FieldRef::new(&format!("rhou{d}"))),
                        Expr::Power(
                            Box::new(Expr::Field(FieldRef::new("rho"))),
                            Box::new(Expr::integer(-1)),
                        ),
                    ])
                }
            })
            .collect();

        let m = program.plan.accuracy / 2;
        // Vorticity stencils need the velocities m deep into the halos.
        let curl = ndim >= 2 && program.plan.halo >= m;

        for d in 0..ndim {
            allocate_if_absent(program, &format!("diag_u{d}"));
        }
        let vorticity_components = if !curl {
            0
        } else if ndim == 3 {
            3
        } else {
            1
        };
        for c in 0..vorticity_components {
            allocate_if_absent(program, &format!("diag_w{c}"));
        }

        // Private constant table: solver constants plus the vorticity
        // stencil weights (named apart so they can never collide).
        let mut constants = program.plan.constants.clone();
        let mut stencils: IndexMap<(usize, usize), LoweredStencil> = IndexMap::new();
        if curl {
            for dir in 0..ndim {
                let spec = central_coefficients(1, program.plan.accuracy)?;
                let mut terms = Vec::new();
                for (&k, w) in spec.offsets.iter().zip(&spec.weights) {
                    if w.is_zero() {
                        continue;
                    }
                    let name = format!("diagrc{}", constants.len());
                    constants.insert(name.clone(), w.to_f64() / program.grid.deltas[dir]);
                    terms.push((k, name));
                }
                stencils.insert(
                    (dir, 1),
                    LoweredStencil {
                        direction: dir,
                        degree: 1,
                        terms,
                    },
                );
            }
        }

        let slots: IndexMap<String, usize> = program
            .fields
            .names()
            .enumerate()
            .map(|(i, n)| (n.to_string(), i))
            .collect();
        let ctx = CompileCtx {
            grid: &program.grid,
            slots: &slots,
            constants: &constants,
            stencils: &stencils,
        };

        let vel_range = if curl {
            IterationRange::extended(&program.grid.shape, &vec![m as i64; ndim])
        } else {
            IterationRange::interior(&program.grid.shape)
        };
        let velocity = Kernel {
            name: "diag_velocity".into(),
            statements: (0..ndim)
                .map(|d| Assign {
                    target: format!("diag_u{d}"),
                    expr: vel_exprs[d].clone(),
                })
                .collect(),
            reads: Default::default(),
            writes: Default::default(),
            read_writes: Default::default(),
            range: vel_range,
            footprints: Default::default(),
        };
        let velocity = compile_kernel(&velocity, &ctx)?;

        let vorticity = if curl {
            let statements = vorticity_statements(ndim)?;
            let kernel = Kernel {
                name: "diag_vorticity".into(),
                statements,
                reads: Default::default(),
                writes: Default::default(),
                read_writes: Default::default(),
                range: IterationRange::interior(&program.grid.shape),
                footprints: Default::default(),
            };
            Some(compile_kernel(&kernel, &ctx)?)
        } else {
            None
        };

        let half_speed_sq = |names: &[String]| -> Expr {
            Expr::Product(vec![
                Expr::float(0.5),
                Expr::Sum(
                    names
                        .iter()
                        .map(|n| {
                            Expr::Power(
                                Box::new(Expr::Field(FieldRef::new(n))),
                                Box::new(Expr::integer(2)),
                            )
                        })
                        .collect(),
                ),
            ])
        };
        let weight = |e: Expr| -> Expr {
            Expr::Product(vec![Expr::Field(FieldRef::new("rho")), e])
        };

        let u_names: Vec<String> = (0..ndim).map(|d| format!("diag_u{d}")).collect();
        let w_names: Vec<String> = (0..vorticity_components)
            .map(|c| format!("diag_w{c}"))
            .collect();

        let ke_unweighted = compile_reduction(&half_speed_sq(&u_names), &ctx)?;
        let ens_unweighted = if curl {
            Some(compile_reduction(&half_speed_sq(&w_names), &ctx)?)
        } else {
            None
        };
        let ke = if weighted {
            Some(compile_reduction(&weight(half_speed_sq(&u_names)), &ctx)?)
        } else {
            None
        };
        let ens = if weighted && curl {
            Some(compile_reduction(&weight(half_speed_sq(&w_names)), &ctx)?)
        } else {
            None
        };

        Ok(Diagnostics {
            velocity: Some(velocity),
            vorticity,
            weighted,
            ke,
            ens,
            ke_unweighted: Some(ke_unweighted),
            ens_unweighted,
            rho_ref,
        })
    }

    fn disabled() -> Diagnostics {
        Diagnostics {
            velocity: None,
            vorticity: None,
            weighted: false,
            ke: None,
            ens: None,
            ke_unweighted: None,
            ens_unweighted: None,
            rho_ref: 1.0,
        }
    }

    /// Refresh halos and the `diag_*` arrays, then reduce every variant.
    pub fn sample(&self, program: &mut Program) -> DiagnosticSample {
        let Some(velocity) = &self.velocity else {
            return DiagnosticSample::default();
        };
        program.exchange_halos();
        execute_kernel(velocity, &mut program.fields, &program.grid, &program.pool);
        if let Some(vorticity) = &self.vorticity {
            execute_kernel(vorticity, &mut program.fields, &program.grid, &program.pool);
        }
        let reduce = |red: &Option<CompiledReduction>, rho_ref: f64| -> f64 {
            red.as_ref()
                .map(|r| {
                    normalize(
                        reduce_interior(r, &program.fields, &program.grid, &program.pool),
                        &program.grid,
                        rho_ref,
                    )
                })
                .unwrap_or(0.0)
        };
        let ke_unweighted = reduce(&self.ke_unweighted, 1.0);
        let ens_unweighted = reduce(&self.ens_unweighted, 1.0);
        let kinetic_energy = if self.weighted {
            reduce(&self.ke, self.rho_ref)
        } else {
            ke_unweighted
        };
        let enstrophy = if self.weighted {
            reduce(&self.ens, self.rho_ref)
        } else {
            ens_unweighted
        };
        DiagnosticSample {
            kinetic_energy,
            enstrophy,
            kinetic_energy_unweighted: ke_unweighted,
            enstrophy_unweighted: ens_unweighted,
        }
    }

    /// The primary (density-weighted when available) values as a time-series
    /// row.
    pub fn row(&self, program: &mut Program, time: f64) -> DiagnosticRow {
        let s = self.sample(program);
        DiagnosticRow {
            time,
            kinetic_energy: s.kinetic_energy,
            enstrophy: s.enstrophy,
        }
    }
}

fn allocate_if_absent(program: &mut Program, name: &str) {
    if !program.fields.contains(name) {
        program
            .fields
            .allocate(name)
            .expect("absence checked above");
    }
}

/// Vorticity statements on the `diag_*` arrays. In three dimensions the
/// alternating-symbol contraction is expanded by the index machinery; in two
/// the scalar curl ∂u1/∂x0 − ∂u0/∂x1 is built directly.
fn vorticity_statements(ndim: usize) -> Result<Vec<Assign>, DiscretizeError> {
    if ndim == 2 {
        return Ok(vec![Assign {
            target: "diag_w0".into(),
            expr: Expr::Sum(vec![
                Expr::derivative(Expr::Field(FieldRef::new("diag_u1")), vec![0]),
                Expr::Product(vec![
                    Expr::float(-1.0),
                    Expr::derivative(Expr::Field(FieldRef::new("diag_u0")), vec![1]),
                ]),
            ]),
        }]);
    }
    let consts: HashSet<String> = HashSet::new();
    let eq = parse_equation("Eq(w_i, LeviCivita(i,j,k)*Der(v_k, x_j))", &consts)
        .map_err(|e| DiscretizeError::Value(e.to_string()))?;
    let expanded =
        expand_system(&[eq], 3).map_err(|e| DiscretizeError::Value(e.to_string()))?;
    let map: IndexMap<String, String> = (0..3)
        .flat_map(|c| {
            [
                (format!("v{c}"), format!("diag_u{c}")),
                (format!("w{c}"), format!("diag_w{c}")),
            ]
        })
        .collect();
    expanded
        .iter()
        .map(|eq| {
            let target = match rename_fields(&eq.lhs, &map) {
                Expr::Field(f) => f.name,
                other => {
                    return Err(DiscretizeError::Value(format!(
                        "vorticity target did not expand to an array: {other}"
                    )))
                }
            };
            Ok(Assign {
                target,
                expr: rename_fields(&eq.rhs, &map),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{Plan, TemporalScheme};
    use crate::grid::FieldSet;
    use crate::runtime::{worker_pool, BoundaryAction};

    fn test_program(
        shape: &[usize],
        deltas: &[f64],
        halo: usize,
        accuracy: usize,
        prognostics: &[&str],
    ) -> Program {
        let grid = Grid::new(shape, deltas, &vec![halo; shape.len()]).unwrap();
        let mut fields = FieldSet::new(grid.clone());
        for p in prognostics {
            fields.allocate(p).unwrap();
        }
        let slots: Vec<usize> = (0..prognostics.len()).collect();
        let boundary = (0..shape.len())
            .map(|direction| BoundaryAction::Periodic {
                direction,
                slots: slots.clone(),
            })
            .collect();
        let plan = Plan {
            ndim: grid.ndim,
            shape: grid.shape.clone(),
            deltas: grid.deltas.clone(),
            halo,
            accuracy,
            scheme: TemporalScheme::ForwardEuler,
            prognostics: prognostics.iter().map(|s| s.to_string()).collect(),
            formula_targets: Vec::new(),
            work_arrays: Vec::new(),
            residual_arrays: Vec::new(),
            accumulator_arrays: Vec::new(),
            init_kernels: Vec::new(),
            spatial_kernels: Vec::new(),
            residual_kernels: Vec::new(),
            stage_kernels: Vec::new(),
            constants: IndexMap::new(),
            stencils: IndexMap::new(),
            evaluations: Vec::new(),
        };
        Program {
            grid,
            plan,
            fields,
            init: Vec::new(),
            spatial: Vec::new(),
            residual: Vec::new(),
            stages: Vec::new(),
            boundary,
            dt: 0.0,
            prognostic_slots: slots,
            pool: worker_pool(1),
            threads: 1,
        }
    }

    fn fill(program: &mut Program, name: &str, f: impl Fn(&[f64]) -> f64) {
        let grid = program.grid.clone();
        let data = program.fields.get_mut(name).unwrap();
        let ndim = grid.ndim;
        let mut coords = vec![0i64; ndim];
        loop {
            let x: Vec<f64> = (0..ndim)
                .map(|d| coords[d] as f64 * grid.deltas[d])
                .collect();
            data[grid.flatten(&coords)] = f(&x);
            let mut d = ndim;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                coords[d] += 1;
                if coords[d] < grid.shape[d] as i64 {
                    break;
                }
                coords[d] = 0;
            }
        }
    }

    #[test]
    fn unit_integrand_normalises_to_one() {
        let grid = Grid::new(&[16, 8], &[0.31, 0.17], &[0, 0]).unwrap();
        let field = vec![1.0; grid.padded_len()];
        let v = volume_integral(&field, &grid, 1.0);
        assert!((v - 1.0).abs() < 1e-14, "got {v}");
        assert_eq!(volume_integral(&vec![0.0; grid.padded_len()], &grid, 1.0), 0.0);
    }

    #[test]
    fn squared_sine_integrates_to_one_half() {
        let n = 64usize;
        let dx = 2.0 * std::f64::consts::PI / n as f64;
        let grid = Grid::new(&[n], &[dx], &[0]).unwrap();
        let mut field = vec![0.0; grid.padded_len()];
        for i in 0..n {
            let x = i as f64 * dx;
            field[grid.flatten(&[i as i64])] = x.sin() * x.sin();
        }
        let v = volume_integral(&field, &grid, 1.0);
        assert!((v - 0.5).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn uniform_flow_has_half_rho_u_squared_and_no_enstrophy() {
        let mut p = test_program(
            &[8, 8, 8],
            &[0.5, 0.5, 0.5],
            1,
            2,
            &["rho", "rhou0", "rhou1", "rhou2", "rhoE"],
        );
        fill(&mut p, "rho", |_| 2.0);
        fill(&mut p, "rhou0", |_| 2.0); // u0 = 1
        let diag = Diagnostics::build(&mut p).unwrap();
        let s = diag.sample(&mut p);
        // ½ρ|u|² = ½·2·1 = 1, unweighted ½|u|² = ½.
        assert!((s.kinetic_energy - 1.0).abs() < 1e-13, "{s:?}");
        assert!((s.kinetic_energy_unweighted - 0.5).abs() < 1e-13, "{s:?}");
        assert!(s.enstrophy.abs() < 1e-13, "{s:?}");
    }

    #[test]
    fn rigid_rotation_has_positive_enstrophy() {
        let n = 32usize;
        let dx = 1.0 / n as f64;
        let mut p = test_program(&[n, n], &[dx, dx], 2, 4, &["u0", "u1"]);
        // Windowed rigid rotation: positive vorticity in the window core.
        let window = |x: &[f64]| {
            let s0 = (std::f64::consts::PI * x[0]).sin();
            let s1 = (std::f64::consts::PI * x[1]).sin();
            (s0 * s1).powi(2)
        };
        fill(&mut p, "u0", |x| -(x[1] - 0.5) * window(x));
        fill(&mut p, "u1", |x| (x[0] - 0.5) * window(x));
        let diag = Diagnostics::build(&mut p).unwrap();
        let s = diag.sample(&mut p);
        assert!(s.enstrophy > 0.0, "{s:?}");
        assert_eq!(s.enstrophy, s.enstrophy_unweighted, "no density present");
    }

    #[test]
    fn diagnostics_are_shift_invariant_on_periodic_data() {
        let n = 12usize;
        let dx = 2.0 * std::f64::consts::PI / n as f64;
        let build = |shift: i64| -> DiagnosticSample {
            let mut p = test_program(
                &[n, n, n],
                &[dx, dx, dx],
                2,
                4,
                &["rho", "rhou0", "rhou1", "rhou2"],
            );
            let sh = shift as f64 * dx;
            fill(&mut p, "rho", |x| {
                1.0 + 0.1 * (x[0] + sh).sin() * (x[1] + sh).cos()
            });
            fill(&mut p, "rhou0", |x| (x[1] + sh).sin() * (x[2] + sh).cos());
            fill(&mut p, "rhou1", |x| (x[2] + sh).sin() * (x[0] + sh).cos());
            fill(&mut p, "rhou2", |x| (x[0] + sh).sin() * (x[1] + sh).cos());
            let diag = Diagnostics::build(&mut p).unwrap();
            diag.sample(&mut p)
        };
        let a = build(0);
        let b = build(5);
        assert!(
            (a.kinetic_energy - b.kinetic_energy).abs() < 1e-13 * a.kinetic_energy.abs(),
            "{a:?} vs {b:?}"
        );
        assert!(
            (a.enstrophy - b.enstrophy).abs() < 1e-12 * a.enstrophy.abs(),
            "{a:?} vs {b:?}"
        );
    }

    /// The expanded alternating-symbol contraction matches the hand-written
    /// curl components on random-ish data, bit for bit.
    #[test]
    fn expanded_vorticity_equals_hand_written_curl() {
        let statements = vorticity_statements(3).unwrap();
        assert_eq!(statements.len(), 3);
        // Signed terms in dummy-index enumeration order (outer index
        // ascending): ω0 = +∂u2/∂x1 − ∂u1/∂x2, ω1 = −∂u2/∂x0 + ∂u0/∂x2,
        // ω2 = +∂u1/∂x0 − ∂u0/∂x1.
        let hand: [(&str, [(i64, &str, usize); 2]); 3] = [
            ("diag_w0", [(1, "diag_u2", 1), (-1, "diag_u1", 2)]),
            ("diag_w1", [(-1, "diag_u2", 0), (1, "diag_u0", 2)]),
            ("diag_w2", [(1, "diag_u1", 0), (-1, "diag_u0", 1)]),
        ];
        for (stmt, (target, terms)) in statements.iter().zip(hand) {
            assert_eq!(stmt.target, target);
            let expect = Expr::Sum(
                terms
                    .iter()
                    .map(|&(sign, name, dir)| {
                        let der =
                            Expr::derivative(Expr::Field(FieldRef::new(name)), vec![dir]);
                        if sign < 0 {
                            Expr::Product(vec![Expr::integer(-1), der])
                        } else {
                            der
                        }
                    })
                    .collect(),
            );
            assert_eq!(stmt.expr, expect, "component {target}");
        }
    }
}
