//! Run the bundled advection case through the library API.
//!
//! Builds the 1-D wave setup into a program, advances it to t = 1 (half a
//! domain length at c = 0.5), and measures the state against the exact
//! shifted profile. Eighth-order differencing with third-order time stepping
//! keeps the error near roundoff.
//!
//! ```sh
//! cargo run --release --example wave_demo
//! ```

use shearwater::cases;
use shearwater::pipeline::build_program;
use shearwater::runtime::{run, RunConfig};

fn main() {
    let spec = cases::spec_for("wave1d").expect("bundled case parses");
    let mut program = build_program(&spec, 1).expect("bundled case builds");

    let mut observer = |_: &mut _, _| Ok(());
    run(&mut program, spec.niter, &RunConfig::default(), &mut observer)
        .expect("advection at CFL 0.2 is stable");

    let time = spec.niter as f64 * spec.dt;
    let error = cases::wave1d_error(&program, time);
    println!(
        "{} points, order {}, {} steps to t = {time}",
        spec.shape[0], spec.accuracy, spec.niter
    );
    println!("max |phi - exact| = {error:.3e}");
    assert!(error < 1e-8, "the wave demo should stay below 1e-8");
}
