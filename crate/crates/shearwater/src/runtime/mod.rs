//! In-process execution of a discretised plan.
//!
//! A [`Program`] owns the grid, the field storage, the compiled kernels, and
//! a worker pool. [`run`] drives the time loop: each stage fills halos, runs
//! the spatial schedule, evaluates residuals, and applies the stage update;
//! non-finite prognostics abort with [`RunError::NumericalBlowup`]. An
//! observer callback receives sampling and snapshot events so callers decide
//! what (if anything) hits disk.

mod boundary;
mod parallel;
mod vm;

pub use boundary::{apply_actions, apply_periodic, apply_symmetry, BoundaryAction, Side};
pub use parallel::{execute_kernel, pairwise_sum, reduce_interior};
pub use vm::{
    compile_kernel, compile_reduction, CompileCtx, CompiledKernel, CompiledReduction, Func, Op,
    SrcArr, LINE,
};

use crate::discretize::Plan;
use crate::grid::{FieldSet, Grid};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("non-finite value in field {field} at step {step}")]
    NumericalBlowup { step: usize, field: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A plan bound to storage and lowered to bytecode, ready to advance.
pub struct Program {
    pub grid: Grid,
    pub plan: Plan,
    pub fields: FieldSet,
    /// Startup kernels: hoisted grid invariants, then initial conditions.
    pub init: Vec<CompiledKernel>,
    pub spatial: Vec<CompiledKernel>,
    pub residual: Vec<CompiledKernel>,
    /// One kernel per time-scheme stage.
    pub stages: Vec<CompiledKernel>,
    /// Sorted by direction (corner halos depend on pass order).
    pub boundary: Vec<BoundaryAction>,
    pub dt: f64,
    /// Slots of the time-advanced fields, for blowup checks and snapshots.
    pub prognostic_slots: Vec<usize>,
    pub pool: rayon::ThreadPool,
    pub threads: usize,
}

impl Program {
    /// Run the startup kernels and fill halos. Call once before stepping.
    pub fn initialize(&mut self) {
        for k in &self.init {
            execute_kernel(k, &mut self.fields, &self.grid, &self.pool);
        }
        apply_actions(&self.boundary, &mut self.fields, &self.grid);
    }

    /// Refresh prognostic halos from the boundary actions. The time loop does
    /// this at the start of every stage; diagnostics that read neighbouring
    /// points after a step must do it themselves.
    pub fn exchange_halos(&mut self) {
        apply_actions(&self.boundary, &mut self.fields, &self.grid);
    }

    /// Advance the state by one time step.
    pub fn step(&mut self) {
        for stage in 0..self.stages.len() {
            apply_actions(&self.boundary, &mut self.fields, &self.grid);
            for k in &self.spatial {
                execute_kernel(k, &mut self.fields, &self.grid, &self.pool);
            }
            for k in &self.residual {
                execute_kernel(k, &mut self.fields, &self.grid, &self.pool);
            }
            execute_kernel(&self.stages[stage], &mut self.fields, &self.grid, &self.pool);
        }
    }

    /// Error if any prognostic holds a non-finite interior value.
    pub fn check_finite(&self, step: usize) -> Result<(), RunError> {
        let row_len = self.grid.row_len();
        for &slot in &self.prognostic_slots {
            let data = self.fields.by_slot(slot);
            for start in self.grid.interior_row_starts() {
                if !data[start..start + row_len].iter().all(|v| v.is_finite()) {
                    return Err(RunError::NumericalBlowup {
                        step,
                        field: self.fields.name_of(slot).to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Points in the run at which the observer is called.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Event {
    /// Diagnostics cadence: step 0, every `sample_every` steps, and the
    /// final step.
    Sample { step: usize, time: f64 },
    /// State output cadence: every `snapshot_every` steps (never step 0)
    /// and the final step.
    Snapshot { step: usize, time: f64 },
}

/// Cadence knobs for [`run`]. Zero disables a cadence (the final step still
/// fires `Snapshot` when snapshots are enabled at all).
#[derive(Clone, Copy, Debug)]
pub struct RunConfig {
    pub sample_every: usize,
    pub snapshot_every: usize,
    /// Blowup scan period; the final step is always checked.
    pub check_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sample_every: 0,
            snapshot_every: 0,
            check_every: 100,
        }
    }
}

/// Drive `steps` time steps, invoking `observer` on the schedule in `cfg`.
/// The program must already be initialised.
pub fn run(
    program: &mut Program,
    steps: usize,
    cfg: &RunConfig,
    observer: &mut dyn FnMut(&mut Program, Event) -> Result<(), RunError>,
) -> Result<(), RunError> {
    if cfg.sample_every > 0 {
        observer(program, Event::Sample { step: 0, time: 0.0 })?;
    }
    for step in 1..=steps {
        program.step();
        let time = step as f64 * program.dt;
        let last = step == steps;
        if last || (cfg.check_every > 0 && step % cfg.check_every == 0) {
            program.check_finite(step)?;
        }
        if cfg.sample_every > 0 && (last || step % cfg.sample_every == 0) {
            observer(program, Event::Sample { step, time })?;
        }
        if cfg.snapshot_every > 0 && (last || step % cfg.snapshot_every == 0) {
            observer(program, Event::Snapshot { step, time })?;
        }
    }
    Ok(())
}

/// Build a worker pool of the requested size.
pub fn worker_pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("worker pool construction cannot fail with a positive thread count")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{central_coefficients, Assign, IterationRange, Kernel, LoweredStencil};
    use crate::expr::{parse_equation, Expr, FieldRef};
    use indexmap::IndexMap;
    use std::collections::HashSet;

    fn compile_on(
        grid: &Grid,
        slots: &IndexMap<String, usize>,
        constants: &IndexMap<String, f64>,
        stencils: &IndexMap<(usize, usize), LoweredStencil>,
        kernel: &Kernel,
    ) -> CompiledKernel {
        let ctx = CompileCtx {
            grid,
            slots,
            constants,
            stencils,
        };
        compile_kernel(kernel, &ctx).unwrap()
    }

    fn slots_of(fields: &FieldSet) -> IndexMap<String, usize> {
        fields
            .names()
            .enumerate()
            .map(|(i, n)| (n.to_string(), i))
            .collect()
    }

    #[test]
    fn copy_kernel_reproduces_its_input() {
        let grid = Grid::new(&[5, 7], &[0.1, 0.1], &[0, 0]).unwrap();
        let mut fields = FieldSet::new(grid.clone());
        fields.allocate("src").unwrap();
        fields.allocate("dst").unwrap();
        for (i, v) in fields.get_mut("src").unwrap().iter_mut().enumerate() {
            *v = i as f64 * 0.25 - 3.0;
        }
        let kernel = Kernel {
            name: "copy".into(),
            statements: vec![Assign {
                target: "dst".into(),
                expr: Expr::Field(FieldRef::new("src")),
            }],
            reads: Default::default(),
            writes: Default::default(),
            read_writes: Default::default(),
            range: IterationRange::interior(&[5, 7]),
            footprints: Default::default(),
        };
        let slots = slots_of(&fields);
        let constants = IndexMap::new();
        let stencils = IndexMap::new();
        let compiled = compile_on(&grid, &slots, &constants, &stencils, &kernel);
        let pool = worker_pool(1);
        execute_kernel(&compiled, &mut fields, &grid, &pool);
        assert_eq!(fields.get("src").unwrap(), fields.get("dst").unwrap());
    }

    /// Eighth-order first derivative of sin(2πx) on a fine grid stays below
    /// 1e-9 against the analytic derivative.
    #[test]
    fn high_order_derivative_is_accurate() {
        let n = 1000usize;
        let dx = 0.001f64;
        let m = 4; // eighth order half-width
        let grid = Grid::new(&[n], &[dx], &[m]).unwrap();
        let mut fields = FieldSet::new(grid.clone());
        fields.allocate("phi").unwrap();
        fields.allocate("dphi").unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        {
            let phi = fields.get_mut("phi").unwrap();
            for i in -(m as i64)..(n as i64 + m as i64) {
                phi[grid.flatten(&[i])] = (two_pi * i as f64 * dx).sin();
            }
        }
        let weights = central_coefficients(1, 8).unwrap();
        let mut constants = IndexMap::new();
        let mut terms = Vec::new();
        for (&k, w) in weights.offsets.iter().zip(&weights.weights) {
            if w.is_zero() {
                continue;
            }
            let name = format!("rc{}", constants.len());
            constants.insert(name.clone(), w.to_f64() / dx);
            terms.push((k, name));
        }
        let stencils: IndexMap<(usize, usize), LoweredStencil> = [(
            (0usize, 1usize),
            LoweredStencil {
                direction: 0,
                degree: 1,
                terms,
            },
        )]
        .into_iter()
        .collect();
        let kernel = Kernel {
            name: "ddx".into(),
            statements: vec![Assign {
                target: "dphi".into(),
                expr: Expr::derivative(Expr::Field(FieldRef::new("phi")), vec![0]),
            }],
            reads: Default::default(),
            writes: Default::default(),
            read_writes: Default::default(),
            range: IterationRange::interior(&[n]),
            footprints: Default::default(),
        };
        let slots = slots_of(&fields);
        let compiled = compile_on(&grid, &slots, &constants, &stencils, &kernel);
        let pool = worker_pool(1);
        execute_kernel(&compiled, &mut fields, &grid, &pool);
        let dphi = fields.get("dphi").unwrap();
        let mut worst = 0.0f64;
        for i in 0..n as i64 {
            let exact = two_pi * (two_pi * i as f64 * dx).cos();
            let err = (dphi[grid.flatten(&[i])] - exact).abs();
            worst = worst.max(err);
        }
        assert!(worst < 1e-9, "worst error {worst:.3e}");
    }

    /// The same stencil kernel run with 1, 2, 4, and 8 workers produces
    /// bitwise identical output.
    #[test]
    fn worker_count_does_not_change_bits() {
        let n = [34usize, 19];
        let grid = Grid::new(&n, &[0.37, 0.53], &[1, 1]).unwrap();
        let consts: HashSet<String> = HashSet::new();
        let eq = parse_equation("Eq(out, inp*inp + Der(inp, x1))", &consts).unwrap();
        let expanded = crate::einstein::expand_system(&[eq], 2).unwrap();
        let mut constants = IndexMap::new();
        constants.insert("rc0".to_string(), -0.5 / 0.53);
        constants.insert("rc1".to_string(), 0.5 / 0.53);
        let stencils: IndexMap<(usize, usize), LoweredStencil> = [(
            (1usize, 1usize),
            LoweredStencil {
                direction: 1,
                degree: 1,
                terms: vec![(-1, "rc0".into()), (1, "rc1".into())],
            },
        )]
        .into_iter()
        .collect();
        let kernel = Kernel {
            name: "k".into(),
            statements: vec![Assign {
                target: "out".into(),
                expr: expanded[0].rhs.clone(),
            }],
            reads: Default::default(),
            writes: Default::default(),
            read_writes: Default::default(),
            range: IterationRange::interior(&n),
            footprints: Default::default(),
        };
        let mut outputs: Vec<Vec<f64>> = Vec::new();
        for threads in [1usize, 2, 4, 8] {
            let mut fields = FieldSet::new(grid.clone());
            fields.allocate("inp").unwrap();
            fields.allocate("out").unwrap();
            {
                let inp = fields.get_mut("inp").unwrap();
                for (i, v) in inp.iter_mut().enumerate() {
                    *v = ((i * 2654435761) % 1000) as f64 * 1.0e-3 - 0.5;
                }
            }
            let slots = slots_of(&fields);
            let compiled = compile_on(&grid, &slots, &constants, &stencils, &kernel);
            let pool = worker_pool(threads);
            execute_kernel(&compiled, &mut fields, &grid, &pool);
            outputs.push(fields.get("out").unwrap().to_vec());
        }
        for other in &outputs[1..] {
            assert!(
                outputs[0]
                    .iter()
                    .zip(other)
                    .all(|(a, b)| a.to_bits() == b.to_bits()),
                "worker counts disagree"
            );
        }
    }

    /// Reading and writing the same array at offset zero (the two-register
    /// stage update shape) behaves like a per-point loop.
    #[test]
    fn in_place_updates_see_prior_statements() {
        let grid = Grid::new(&[6], &[1.0], &[0]).unwrap();
        let consts: HashSet<String> = HashSet::new();
        let mut fields = FieldSet::new(grid.clone());
        fields.allocate("q").unwrap();
        fields.allocate("acc").unwrap();
        for (i, v) in fields.get_mut("q").unwrap().iter_mut().enumerate() {
            *v = i as f64;
        }
        for v in fields.get_mut("acc").unwrap().iter_mut() {
            *v = 10.0;
        }
        // acc = acc * 2, then q = q + acc — q must see the doubled acc.
        let eq1 = parse_equation("Eq(acc, 2*acc)", &consts).unwrap();
        let eq2 = parse_equation("Eq(q, q + acc)", &consts).unwrap();
        let ex = crate::einstein::expand_system(&[eq1, eq2], 1).unwrap();
        let kernel = Kernel {
            name: "update".into(),
            statements: vec![
                Assign {
                    target: "acc".into(),
                    expr: ex[0].rhs.clone(),
                },
                Assign {
                    target: "q".into(),
                    expr: ex[1].rhs.clone(),
                },
            ],
            reads: Default::default(),
            writes: Default::default(),
            read_writes: Default::default(),
            range: IterationRange::interior(&[6]),
            footprints: Default::default(),
        };
        let slots = slots_of(&fields);
        let constants = IndexMap::new();
        let stencils = IndexMap::new();
        let compiled = compile_on(&grid, &slots, &constants, &stencils, &kernel);
        let pool = worker_pool(2);
        execute_kernel(&compiled, &mut fields, &grid, &pool);
        for i in 0..6usize {
            assert_eq!(fields.get("acc").unwrap()[i], 20.0);
            assert_eq!(fields.get("q").unwrap()[i], i as f64 + 20.0);
        }
    }

    /// Interior reduction: fixed pairwise tree over rows, any worker count.
    #[test]
    fn reductions_are_worker_count_invariant() {
        let grid = Grid::new(&[23, 17], &[1.0, 1.0], &[2, 2]).unwrap();
        let mut fields = FieldSet::new(grid.clone());
        fields.allocate("w").unwrap();
        for (i, v) in fields.get_mut("w").unwrap().iter_mut().enumerate() {
            *v = (i as f64 * 0.7312).sin();
        }
        let consts: HashSet<String> = HashSet::new();
        let eq = parse_equation("Eq(z, w*w)", &consts).unwrap();
        let ex = crate::einstein::expand_system(&[eq], 2).unwrap();
        let slots = slots_of(&fields);
        let constants = IndexMap::new();
        let stencils = IndexMap::new();
        let ctx = CompileCtx {
            grid: &grid,
            slots: &slots,
            constants: &constants,
            stencils: &stencils,
        };
        let red = compile_reduction(&ex[0].rhs, &ctx).unwrap();
        let mut results = Vec::new();
        for threads in [1usize, 3, 8] {
            let pool = worker_pool(threads);
            results.push(reduce_interior(&red, &fields, &grid, &pool));
        }
        assert_eq!(results[0].to_bits(), results[1].to_bits());
        assert_eq!(results[0].to_bits(), results[2].to_bits());
        // Against a plain serial pairwise sum of the interior values.
        let w = fields.get("w").unwrap();
        let mut vals = Vec::new();
        for start in grid.interior_row_starts() {
            let row: Vec<f64> = w[start..start + grid.row_len()]
                .iter()
                .map(|v| v * v)
                .collect();
            vals.push(pairwise_sum(&row));
        }
        assert_eq!(results[0].to_bits(), pairwise_sum(&vals).to_bits());
    }

    #[test]
    fn blowup_is_reported_with_step_and_field() {
        let grid = Grid::new(&[4], &[1.0], &[1]).unwrap();
        let plan = empty_plan(&grid);
        let mut fields = FieldSet::new(grid.clone());
        fields.allocate("q").unwrap();
        fields.get_mut("q").unwrap()[2] = f64::NAN;
        let program = Program {
            grid,
            plan,
            fields,
            init: Vec::new(),
            spatial: Vec::new(),
            residual: Vec::new(),
            stages: Vec::new(),
            boundary: Vec::new(),
            dt: 0.1,
            prognostic_slots: vec![0],
            pool: worker_pool(1),
            threads: 1,
        };
        let err = program.check_finite(7).unwrap_err();
        match err {
            RunError::NumericalBlowup { step, field } => {
                assert_eq!(step, 7);
                assert_eq!(field, "q");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    fn empty_plan(grid: &Grid) -> Plan {
        Plan {
            ndim: grid.ndim,
            shape: grid.shape.clone(),
            deltas: grid.deltas.clone(),
            halo: 1,
            accuracy: 2,
            scheme: crate::discretize::TemporalScheme::ForwardEuler,
            prognostics: vec!["q".into()],
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
        }
    }
}
