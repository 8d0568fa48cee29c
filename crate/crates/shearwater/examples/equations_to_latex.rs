//! Index-notation in, component equations out.
//!
//! Parses a two-dimensional momentum system written with contracted indices,
//! expands the repeated indices into explicit sums (and the free index into
//! one equation per component), and prints the result as a compilable LaTeX
//! document.
//!
//! ```sh
//! cargo run --example equations_to_latex > system.tex
//! ```

use shearwater::einstein::expand_system;
use shearwater::expr::{parse_equation, render_latex};
use std::collections::HashSet;

fn main() {
    let constants: HashSet<String> = ["nu"].into_iter().map(str::to_string).collect();
    let system = [
        // Skew splits the convective term into its conservative/advective
        // average; nested Der in the same direction becomes one second
        // derivative.
        "Eq(Der(u_i, t), -Skew(u_i*u_j, x_j) + nu*Der(Der(u_i, x_j), x_j))",
    ];
    let parsed: Vec<_> = system
        .iter()
        .map(|src| parse_equation(src, &constants).expect("example equations are well formed"))
        .collect();
    let expanded = expand_system(&parsed, 2).expect("indices are consistent");

    eprintln!(
        "expanded 1 vector equation into {} component equations",
        expanded.len()
    );
    print!("{}", render_latex(&expanded));
}
