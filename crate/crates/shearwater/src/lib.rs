//! Shearwater: a finite-difference framework for systems of PDEs written in
//! tensor (index) notation.
//!
//! Equations go in as strings like
//! `Eq(Der(rho, t), -Skew(rho*u_j, x_j))`; the library expands repeated
//! indices into component equations, lowers derivatives to arbitrary-order
//! central-difference stencils on a structured grid with halo exchange,
//! runs explicit time integration in parallel with bitwise-reproducible
//! results for any worker count, and can emit the generated kernels as
//! portable C99.
//!
//! The usual entry points are [`io::read_setup`] to load a problem
//! description, [`pipeline::build_program`] to lower it, and
//! [`runtime::run`] to integrate it. See the `examples/` directory for one
//! runnable walk-through per capability.

pub mod cases;
pub mod cli;
pub mod codegen;
pub mod diagnostics;
pub mod discretize;
pub mod einstein;
pub mod expr;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod pmath;
pub mod runtime;

pub use expr::{Equation, Expr, Rational};
