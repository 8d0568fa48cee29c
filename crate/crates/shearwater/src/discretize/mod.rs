//! Lowering expanded equations to an executable schedule.
//!
//! The planner turns component equations into a sequence of evaluations
//! (formula arrays, derivative work arrays, hoisted grid invariants), fixes
//! their iteration ranges by propagating stencil footprints backwards from
//! the residuals, pools short-lived work arrays, fuses compatible
//! evaluations into kernels, and lowers the time scheme into per-stage
//! update kernels. The output [`Plan`] is backend-neutral: the in-process
//! runtime compiles it to bytecode and the C emitter prints it, both from
//! the same expression trees so floating-point evaluation order is fixed
//! once, here.

mod plan;
pub mod stencil;
pub mod temporal;

pub use plan::{plan, reserved_name_reason, PlanInput};
#[cfg(test)]
pub(crate) use plan::pow_value;
pub use stencil::{central_coefficients, StencilSpec};
pub use temporal::{Stage, TemporalScheme};

use crate::expr::Expr;
use indexmap::{IndexMap, IndexSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiscretizeError {
    #[error("value error: {0}")]
    Value(String),
    #[error("circular formula dependency involving {0}")]
    Cycle(String),
    #[error("unknown field {0}")]
    UnknownField(String),
    #[error("derivative without an assigned work array: {0}")]
    UnassignedDerivative(String),
    #[error("unsupported construct: {0}")]
    Unsupported(String),
}

/// Half-open per-direction index bounds, in interior-relative coordinates
/// (negative bounds reach into the halo).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IterationRange(pub Vec<(i64, i64)>);

impl IterationRange {
    pub fn interior(shape: &[usize]) -> IterationRange {
        IterationRange(shape.iter().map(|&n| (0, n as i64)).collect())
    }

    /// Interior extended symmetrically by `ext[d]` points into the halos.
    pub fn extended(shape: &[usize], ext: &[i64]) -> IterationRange {
        IterationRange(
            shape
                .iter()
                .zip(ext)
                .map(|(&n, &e)| (-e, n as i64 + e))
                .collect(),
        )
    }

    pub fn ndim(&self) -> usize {
        self.0.len()
    }

    pub fn point_count(&self) -> usize {
        self.0.iter().map(|&(lo, hi)| (hi - lo) as usize).product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalKind {
    /// Pointwise expression over fields and earlier evaluations.
    Formula,
    /// Stencil application to a single source array.
    Derivative,
    /// Depends only on coordinates and constants; computed once at startup.
    Invariant,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub target: String,
    pub expr: Expr,
    pub kind: EvalKind,
    /// Array names this evaluation reads.
    pub deps: IndexSet<String>,
    /// Halo extension of the evaluation range, per direction.
    pub ext: Vec<i64>,
}

/// One pointwise assignment inside a kernel.
#[derive(Clone, Debug)]
pub struct Assign {
    pub target: String,
    pub expr: Expr,
}

/// A unit of grid computation: ordered assignments applied at every point
/// of `range`, with arrays classified by access.
#[derive(Clone, Debug)]
pub struct Kernel {
    pub name: String,
    pub statements: Vec<Assign>,
    pub reads: IndexSet<String>,
    pub writes: IndexSet<String>,
    pub read_writes: IndexSet<String>,
    pub range: IterationRange,
    /// Per array read, a flag per direction: 1 when the kernel applies a
    /// stencil along that direction (reaching half-width points out), 0
    /// when every read of it on that axis is pointwise.
    pub footprints: IndexMap<String, Vec<i64>>,
}

impl Kernel {
    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.writes
            .iter()
            .chain(self.read_writes.iter())
            .map(String::as_str)
    }

    pub fn all_reads(&self) -> impl Iterator<Item = &str> {
        self.reads
            .iter()
            .chain(self.read_writes.iter())
            .map(String::as_str)
    }
}

/// A stencil lowered against one grid direction: per-offset constants that
/// already include the `1/dx^degree` factor.
#[derive(Clone, Debug)]
pub struct LoweredStencil {
    pub direction: usize,
    pub degree: usize,
    /// `(offset, constant name)` pairs in ascending offset order; zero
    /// weights are dropped.
    pub terms: Vec<(i64, String)>,
}

/// The complete lowered schedule for one problem.
#[derive(Clone, Debug)]
pub struct Plan {
    pub ndim: usize,
    pub shape: Vec<usize>,
    pub deltas: Vec<f64>,
    /// Uniform halo depth required by the schedule.
    pub halo: usize,
    pub accuracy: usize,
    pub scheme: TemporalScheme,
    /// Fields advanced in time, in equation order.
    pub prognostics: Vec<String>,
    /// Formula-defined arrays, in evaluation order.
    pub formula_targets: Vec<String>,
    /// Work arrays (`wk*`), pooled temporaries first, then invariants.
    pub work_arrays: Vec<String>,
    /// Residual arrays, one per prognostic (`res_*`).
    pub residual_arrays: Vec<String>,
    /// Accumulator arrays, one per prognostic (`acc_*`).
    pub accumulator_arrays: Vec<String>,
    /// Startup kernels for hoisted invariants.
    pub init_kernels: Vec<Kernel>,
    /// Per-stage spatial kernels, in schedule order.
    pub spatial_kernels: Vec<Kernel>,
    /// One kernel per prognostic equation.
    pub residual_kernels: Vec<Kernel>,
    /// One kernel per time-scheme stage.
    pub stage_kernels: Vec<Kernel>,
    /// Every named constant a backend may reference.
    pub constants: IndexMap<String, f64>,
    /// Lowered stencils keyed by (direction, degree).
    pub stencils: IndexMap<(usize, usize), LoweredStencil>,
    /// The unfused evaluation list (final names), kept for schedule
    /// inspection and the fusion-soundness tests.
    pub evaluations: Vec<Evaluation>,
}

impl Plan {
    pub fn stencil_for(&self, direction: usize, degree: usize) -> Option<&LoweredStencil> {
        self.stencils.get(&(direction, degree))
    }

    /// One kernel per evaluation, bypassing fusion; used to check that
    /// fusion does not change results.
    pub fn unfused_spatial_kernels(&self) -> Vec<Kernel> {
        self.evaluations
            .iter()
            .filter(|e| e.kind != EvalKind::Invariant)
            .enumerate()
            .map(|(i, e)| plan::kernel_from_evals(&format!("spatial_{i}"), &[e], &self.shape))
            .collect()
    }

    /// Every array name the plan allocates beyond the prognostics.
    pub fn derived_arrays(&self) -> impl Iterator<Item = &str> {
        self.formula_targets
            .iter()
            .chain(self.work_arrays.iter())
            .chain(self.residual_arrays.iter())
            .chain(self.accumulator_arrays.iter())
            .map(String::as_str)
    }
}

/// Collect every array name `expr` reads (including stencil sources inside
/// derivative leaves).
pub(crate) fn field_reads(expr: &Expr, out: &mut IndexSet<String>) {
    match expr {
        Expr::Field(f) => {
            out.insert(f.name.clone());
        }
        Expr::Derivative(leaf) => field_reads(&leaf.operand, out),
        Expr::Sum(terms) | Expr::Product(terms) => {
            for t in terms {
                field_reads(t, out);
            }
        }
        Expr::Power(b, e) => {
            field_reads(b, out);
            field_reads(e, out);
        }
        Expr::Apply(_, args) => {
            for a in args {
                field_reads(a, out);
            }
        }
        Expr::Rational(_) | Expr::Float(_) | Expr::Term(_) => {}
    }
}

/// Rewrite field names (including derivative operands) through `map`.
pub(crate) fn rename_fields(expr: &Expr, map: &IndexMap<String, String>) -> Expr {
    match expr {
        Expr::Field(f) => match map.get(&f.name) {
            Some(new) => Expr::Field(crate::expr::FieldRef {
                name: new.clone(),
                offsets: f.offsets.clone(),
            }),
            None => expr.clone(),
        },
        Expr::Derivative(leaf) => {
            let mut new_leaf = (**leaf).clone();
            new_leaf.operand = rename_fields(&leaf.operand, map);
            Expr::Derivative(Box::new(new_leaf))
        }
        Expr::Sum(terms) => Expr::Sum(terms.iter().map(|t| rename_fields(t, map)).collect()),
        Expr::Product(terms) => {
            Expr::Product(terms.iter().map(|t| rename_fields(t, map)).collect())
        }
        Expr::Power(b, e) => Expr::Power(
            Box::new(rename_fields(b, map)),
            Box::new(rename_fields(e, map)),
        ),
        Expr::Apply(h, args) => {
            Expr::Apply(*h, args.iter().map(|a| rename_fields(a, map)).collect())
        }
        Expr::Rational(_) | Expr::Float(_) | Expr::Term(_) => expr.clone(),
    }
}
