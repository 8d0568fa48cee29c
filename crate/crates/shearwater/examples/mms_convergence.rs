//! Measure a discretisation order with a manufactured solution.
//!
//! The bundled advection–diffusion case carries a source chosen so that
//! phi = sin(x0)cos(x1) is a steady solution. Marching from zero to steady
//! state on a sequence of meshes, the error against the profile must shrink
//! at the nominal order of the scheme. This is the quick two-mesh version of
//! the full `converge` subcommand.
//!
//! ```sh
//! cargo run --release --example mms_convergence
//! ```

use shearwater::cases;
use shearwater::pipeline::build_program;
use std::f64::consts::TAU;

/// March one mesh to steady state; returns the rms error against the
/// manufactured profile.
fn error_on_mesh(points: usize, order: usize) -> f64 {
    let mut spec = cases::spec_for("mms2d").expect("bundled case parses");
    let dx = TAU / points as f64;
    spec.shape = vec![points, points];
    spec.deltas = vec![dx, dx];
    spec.accuracy = order;
    spec.dt = 0.025 * dx;

    let mut program = build_program(&spec, 1).expect("bundled case builds");
    let mut previous = f64::INFINITY;
    loop {
        for _ in 0..50 {
            program.step();
        }
        let error = cases::mms2d_error(&program);
        if (error - previous).abs() < 1e-14 {
            return error;
        }
        previous = error;
    }
}

fn main() {
    let order = 4;
    let (coarse, fine) = (16, 32);
    let coarse_error = error_on_mesh(coarse, order);
    let fine_error = error_on_mesh(fine, order);
    let observed = (coarse_error / fine_error).log2();
    println!("order-{order} scheme, {coarse}^2 -> {fine}^2 points:");
    println!("  rms error {coarse_error:.3e} -> {fine_error:.3e}");
    println!("  observed order {observed:.2}");
    assert!(
        (observed - order as f64).abs() < 0.3,
        "refinement should reproduce the nominal order"
    );
}
