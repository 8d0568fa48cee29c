//! Central-difference weights at every supported accuracy.
//!
//! Prints the exact rational weights for first and second derivatives at
//! orders 2 through 12. The weights come from moment conditions solved in
//! exact arithmetic, so they are the textbook fractions, not floating-point
//! approximations.
//!
//! ```sh
//! cargo run --example stencil_table
//! ```

use shearwater::discretize::central_coefficients;

fn main() {
    for degree in [1, 2] {
        println!(
            "d^{degree}/dx^{degree} (multiply by 1/dx^{degree}; offsets are grid points)",
        );
        for accuracy in (2..=12).step_by(2) {
            let spec = central_coefficients(degree, accuracy)
                .expect("orders 2..=12 are supported");
            let rows: Vec<String> = spec
                .offsets
                .iter()
                .zip(&spec.weights)
                .filter(|(_, w)| !w.is_zero())
                .map(|(o, w)| format!("{o:+}: {w}"))
                .collect();
            println!("  order {accuracy:2}:  {}", rows.join("  "));
        }
        println!();
    }
}
