//! Bundled validation cases.
//!
//! Each case is a complete setup document embedded into the library so the
//! solver can be exercised (and regression-tested) without writing any
//! configuration by hand:
//!
//! * `wave1d` — linear advection of a sine wave; the exact solution is the
//!   initial profile shifted by `c*t`, so the final error is measurable to
//!   machine-ish precision.
//! * `mms2d` — advection–diffusion with a manufactured source chosen so that
//!   `sin(x0)*cos(x1)` is a steady solution; used for convergence studies.
//! * `tgv3d` — the compressible Taylor–Green vortex at Re 1600 with
//!   skew-symmetric convective fluxes; the standard transition benchmark.

use crate::io::{parse_setup, ProblemSpec, SetupError};
use crate::runtime::Program;

/// One bundled setup: a command-line name, a one-line summary, and the full
/// document text.
pub struct CaseDef {
    pub name: &'static str,
    pub summary: &'static str,
    pub setup: &'static str,
}

pub const CASES: &[CaseDef] = &[
    CaseDef {
        name: "wave1d",
        summary: "1-D advection of a sine wave; exact solution is the shifted initial profile",
        setup: include_str!("../cases/wave1d.toml"),
    },
    CaseDef {
        name: "mms2d",
        summary: "2-D advection-diffusion with a manufactured steady solution sin(x0)*cos(x1)",
        setup: include_str!("../cases/mms2d.toml"),
    },
    CaseDef {
        name: "tgv3d",
        summary: "3-D compressible Taylor-Green vortex at Re 1600, skew-symmetric fluxes",
        setup: include_str!("../cases/tgv3d.toml"),
    },
];

/// Look a bundled case up by name.
pub fn find(name: &str) -> Option<&'static CaseDef> {
    CASES.iter().find(|c| c.name == name)
}

/// Parse a bundled case into a validated problem description.
pub fn spec_for(name: &str) -> Result<ProblemSpec, SetupError> {
    let case = find(name).ok_or_else(|| SetupError::Config {
        path: name.to_string(),
        message: format!(
            "no bundled case with this name (available: {})",
            CASES
                .iter()
                .map(|c| c.name)
                .collect::<Vec<_>>()
                .join(", ")
        ),
    })?;
    parse_setup(case.setup)
}

/// Max-norm error of the current `phi` against the exact advected sine at
/// time `t`. Only meaningful for programs built from the `wave1d` case (or
/// any setup advecting `sin(twopi*x)` with speed `c`).
pub fn wave1d_error(program: &Program, time: f64) -> f64 {
    let c = program.plan.constants["c"];
    let twopi = program.plan.constants["twopi"];
    let slot = program.fields.slot("phi").expect("wave state has phi");
    let phi = program.fields.by_slot(slot);
    let n = program.grid.shape[0] as i64;
    let mut worst = 0.0f64;
    for i in 0..n {
        let x = program.grid.coordinate(0, i);
        let exact = (twopi * (x - c * time)).sin();
        let err = (phi[program.grid.flatten(&[i])] - exact).abs();
        worst = worst.max(err);
    }
    worst
}

/// The manufactured profile the `mms2d` source keeps steady.
pub fn mms2d_exact(x0: f64, x1: f64) -> f64 {
    x0.sin() * x1.cos()
}

/// RMS error of the current `phi` against the manufactured steady profile.
/// The mean over points (rather than a raw sum) keeps values comparable
/// across resolutions.
pub fn mms2d_error(program: &Program) -> f64 {
    let slot = program.fields.slot("phi").expect("mms state has phi");
    let phi = program.fields.by_slot(slot);
    let (n0, n1) = (program.grid.shape[0] as i64, program.grid.shape[1] as i64);
    let mut sum = 0.0;
    for i in 0..n0 {
        let x0 = program.grid.coordinate(0, i);
        for j in 0..n1 {
            let x1 = program.grid.coordinate(1, j);
            let err = phi[program.grid.flatten(&[i, j])] - mms2d_exact(x0, x1);
            sum += err * err;
        }
    }
    (sum / (n0 * n1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::Diagnostics;
    use crate::pipeline::build_program;
    use crate::runtime::execute_kernel;
    use rand::{Rng, SeedableRng};

    #[test]
    fn bundled_cases_parse_and_validate() {
        assert_eq!(CASES.len(), 3);
        for case in CASES {
            let spec = spec_for(case.name)
                .unwrap_or_else(|e| panic!("case {} failed to parse: {e}", case.name));
            assert!(!case.summary.is_empty());
            assert_eq!(spec.shape.len(), spec.ndim);
        }
        assert!(find("wave1d").is_some());
        assert!(find("nonsense").is_none());
        assert!(matches!(
            spec_for("nonsense"),
            Err(SetupError::Config { .. })
        ));
    }

    #[test]
    fn wave_case_starts_with_zero_error() {
        let spec = spec_for("wave1d").unwrap();
        let program = build_program(&spec, 1).unwrap();
        assert!(wave1d_error(&program, 0.0) < 1e-12);
    }

    /// The manufactured source must balance the flux divergence exactly:
    /// re-derive div(phi*u - k*grad phi) at the steady profile term by term
    /// with analytic derivatives and compare against the source written in
    /// the setup, at random points.
    #[test]
    fn manufactured_source_balances_the_flux_divergence() {
        let (u0, u1, k) = (1.0, -0.5, 0.75);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x4d4d53);
        for _ in 0..200 {
            let x: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let y: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            // phi = sin(x)cos(y); flux F_d = phi*u_d - k*dphi/dx_d.
            let dphi_dx = x.cos() * y.cos();
            let dphi_dy = -x.sin() * y.sin();
            let d2phi_dx2 = -x.sin() * y.cos();
            let d2phi_dy2 = -x.sin() * y.cos();
            let div_f = (u0 * dphi_dx - k * d2phi_dx2) + (u1 * dphi_dy - k * d2phi_dy2);
            // The source as written on the setup's right-hand side.
            let source =
                x.cos() * y.cos() + 0.5 * x.sin() * y.sin() + 1.5 * x.sin() * y.cos();
            assert!(
                (source - div_f).abs() < 1e-12,
                "source mismatch at ({x}, {y}): {source} vs {div_f}"
            );
        }
    }

    /// Loading the steady profile into the discrete operator must leave only
    /// truncation-level residuals (order 4 at dx = pi/8), and they must
    /// shrink with the mesh.
    #[test]
    fn manufactured_profile_is_discretely_steady() {
        let residual_at = |shape: usize| -> f64 {
            let mut spec = spec_for("mms2d").unwrap();
            spec.shape = vec![shape, shape];
            spec.deltas = vec![std::f64::consts::TAU / shape as f64; 2];
            let mut program = build_program(&spec, 1).unwrap();
            let grid = &program.grid;
            let phi = program.fields.get_mut("phi").unwrap();
            for i in 0..shape as i64 {
                let x0 = grid.coordinate(0, i);
                for j in 0..shape as i64 {
                    let x1 = grid.coordinate(1, j);
                    phi[grid.flatten(&[i, j])] = mms2d_exact(x0, x1);
                }
            }
            program.exchange_halos();
            for kernel in program
                .spatial
                .iter()
                .chain(program.residual.iter())
                .collect::<Vec<_>>()
            {
                execute_kernel(kernel, &mut program.fields, &program.grid, &program.pool);
            }
            let res = program.fields.get("res_phi").unwrap();
            let mut worst = 0.0f64;
            for i in 0..shape as i64 {
                for j in 0..shape as i64 {
                    worst = worst.max(res[program.grid.flatten(&[i, j])].abs());
                }
            }
            worst
        };
        let coarse = residual_at(16);
        let fine = residual_at(32);
        assert!(coarse < 1e-2, "coarse residual too large: {coarse}");
        // Fourth-order scheme: halving dx should shrink the residual ~16x.
        let ratio = coarse / fine;
        assert!(
            (8.0..32.0).contains(&ratio),
            "residual ratio {ratio} is not fourth order ({coarse} -> {fine})"
        );
    }

    /// The vortex initial state must carry the reference kinetic energy
    /// (0.125 in the density-weighted normalisation) and the analytic
    /// z-vorticity at the vortex core.
    #[test]
    fn taylor_green_state_starts_at_the_reference_energy() {
        let mut spec = spec_for("tgv3d").unwrap();
        spec.shape = vec![16, 16, 16];
        spec.deltas = vec![std::f64::consts::TAU / 16.0; 3];
        let mut program = build_program(&spec, 1).unwrap();
        let diagnostics = Diagnostics::build(&mut program).unwrap();
        let sample = diagnostics.sample(&mut program);
        assert!(
            (sample.kinetic_energy - 0.125).abs() < 0.125 * 0.01,
            "initial kinetic energy {} is off the 0.125 reference",
            sample.kinetic_energy
        );
        // Exact weighted enstrophy of the initial field is 0.3744...; allow
        // for the fourth-order derivative truncation on a 16^3 mesh.
        assert!(
            (sample.enstrophy - 0.3745).abs() < 0.02,
            "initial enstrophy {} is far from the analytic 0.3745",
            sample.enstrophy
        );
        // sample() leaves the diag_* arrays fresh: check the core vorticity.
        let wz = program.fields.get("diag_w2").unwrap();
        let at = program.grid.flatten(&[4, 4, 0]); // (pi/2, pi/2, 0)
        assert!(
            (wz[at] - 2.0).abs() < 0.05,
            "core z-vorticity {} should be ~2",
            wz[at]
        );
    }

    /// Initial formulas chain in document order: rho is gama*M*M*p of the
    /// just-written pressure, momenta are rho times the velocities.
    #[test]
    fn taylor_green_initialisation_chains_through_pressure() {
        let mut spec = spec_for("tgv3d").unwrap();
        spec.shape = vec![8, 8, 8];
        spec.deltas = vec![std::f64::consts::TAU / 8.0; 3];
        let program = build_program(&spec, 1).unwrap();
        let (gama, m) = (1.4, 0.1);
        let grid = &program.grid;
        let (p, rho) = (
            program.fields.get("p").unwrap(),
            program.fields.get("rho").unwrap(),
        );
        let (u0, ru0) = (
            program.fields.get("u0").unwrap(),
            program.fields.get("rhou0").unwrap(),
        );
        for i in 0..8 {
            for j in 0..8 {
                for k in 0..8 {
                    let at = grid.flatten(&[i, j, k]);
                    assert!((rho[at] - gama * m * m * p[at]).abs() < 1e-14);
                    assert!((ru0[at] - rho[at] * u0[at]).abs() < 1e-14);
                }
            }
        }
    }
}
