//! Command-line front end.
//!
//! Four subcommands: `run` advances a setup to completion and writes
//! snapshots plus a diagnostics time series, `converge` sweeps the
//! manufactured-solution case across meshes and reports observed orders,
//! `emit` writes portable C99 or a LaTeX rendering of the expanded
//! equations, and `cases` lists the bundled setups.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical blowup,
//! 3 input/output error.

use crate::cases;
use crate::codegen::{write_c, CodegenError};
use crate::diagnostics::Diagnostics;
use crate::expr::render_latex;
use crate::io::{append_diagnostics, read_setup, write_snapshot, ProblemSpec, SetupError};
use crate::pipeline::{build_program, expand_setup, BuildError};
use crate::runtime::{run, Event, Program, RunConfig, RunError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Finite-difference solver for systems of conservation laws written in
/// index notation.
#[derive(Parser)]
#[command(name = "shearwater", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Advance a setup to completion, writing snapshots and diagnostics.
    Run(RunArgs),
    /// Mesh-refinement study of the manufactured-solution case.
    Converge(ConvergeArgs),
    /// Write generated sources for a setup instead of running it.
    Emit(EmitArgs),
    /// List the bundled cases.
    Cases(CasesArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Setup file path, or the name of a bundled case.
    setup: String,
    /// Worker threads for the grid loops.
    #[arg(long, default_value_t = default_threads())]
    threads: usize,
    /// Directory for snapshots and diagnostics.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Snapshot cadence in steps (0 = final state only); overrides the
    /// setup's io section.
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Steps between scans for non-finite values.
    #[arg(long, default_value_t = 100)]
    check_every: usize,
}

#[derive(Args)]
struct ConvergeArgs {
    /// Differencing orders to sweep, comma separated.
    #[arg(long, default_value = "2,4,6,8", value_delimiter = ',')]
    orders: Vec<usize>,
    /// Mesh levels: level l has dx = pi/2^(l+1), so 5 levels end at pi/32.
    #[arg(long, default_value_t = 5)]
    levels: usize,
    /// Worker threads for the grid loops.
    #[arg(long, default_value_t = default_threads())]
    threads: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum EmitTarget {
    C,
    Latex,
}

#[derive(Args)]
struct EmitArgs {
    /// Setup file path, or the name of a bundled case.
    setup: String,
    /// What to generate.
    #[arg(long, value_enum, default_value_t = EmitTarget::C)]
    target: EmitTarget,
    /// Directory for the generated sources.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CasesArgs {
    /// Print the full setup document of one case instead of the list.
    #[arg(long)]
    show: Option<String>,
}

fn default_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Anything a subcommand can fail with, folded onto the exit-code contract.
enum Failure {
    Config(String),
    Blowup(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Blowup(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Blowup(m) | Failure::Io(m) => m,
        }
    }
}

impl From<SetupError> for Failure {
    fn from(e: SetupError) -> Failure {
        match e {
            SetupError::Io(io) => Failure::Io(io.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<BuildError> for Failure {
    fn from(e: BuildError) -> Failure {
        Failure::Config(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Failure {
        match e {
            RunError::NumericalBlowup { .. } => Failure::Blowup(e.to_string()),
            RunError::Io(io) => Failure::Io(io.to_string()),
        }
    }
}

impl From<CodegenError> for Failure {
    fn from(e: CodegenError) -> Failure {
        match e {
            CodegenError::Io(io) => Failure::Io(io.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::Io(e.to_string())
    }
}

/// Parse arguments, dispatch, and map every outcome to an exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Converge(args) => cmd_converge(args),
        Command::Emit(args) => cmd_emit(args),
        Command::Cases(args) => cmd_cases(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            failure.code()
        }
    }
}

/// A local file wins; otherwise the name may be a bundled case. Returns the
/// case name when one was used, so `run` can report case-specific errors.
fn resolve_setup(setup: &str) -> Result<(ProblemSpec, Option<&'static str>), Failure> {
    if Path::new(setup).exists() {
        return Ok((read_setup(Path::new(setup))?, None));
    }
    if let Some(case) = cases::find(setup) {
        return Ok((cases::spec_for(case.name)?, Some(case.name)));
    }
    Err(Failure::Config(format!(
        "{setup}: no such file, and no bundled case with this name (try `cases`)"
    )))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let (mut spec, case) = resolve_setup(&args.setup)?;
    if let Some(every) = args.snapshot_every {
        spec.snapshot_every = every;
    }
    let mut program = build_program(&spec, args.threads)?;
    let diagnostics = if spec.diagnostics_every > 0 {
        Some(Diagnostics::build(&mut program).map_err(BuildError::from)?)
    } else {
        None
    };

    std::fs::create_dir_all(&args.out)?;
    let csv = args.out.join("diagnostics.csv");
    if csv.exists() {
        std::fs::remove_file(&csv)?;
    }
    let snapshot_names: Vec<String> = program
        .prognostic_slots
        .iter()
        .map(|&s| program.fields.name_of(s).to_string())
        .collect();

    println!(
        "{}: {} points, {} steps of dt={}, order {}, {} thread{}",
        case.unwrap_or(&args.setup),
        program.grid.interior_len(),
        spec.niter,
        spec.dt,
        spec.accuracy,
        program.threads,
        if program.threads == 1 { "" } else { "s" },
    );

    let cfg = RunConfig {
        sample_every: spec.diagnostics_every,
        snapshot_every: spec.snapshot_every,
        check_every: args.check_every,
    };
    let out = args.out.clone();
    let started = Instant::now();
    let mut observer = |program: &mut Program, event: Event| -> Result<(), RunError> {
        match event {
            Event::Sample { time, .. } => {
                if let Some(diagnostics) = &diagnostics {
                    let row = diagnostics.row(program, time);
                    append_diagnostics(&row, &csv).map_err(io_only)?;
                }
            }
            Event::Snapshot { step, time } => {
                let stem = out.join(format!("state_{step:06}"));
                write_snapshot(
                    &program.fields,
                    &snapshot_names,
                    &program.grid,
                    time,
                    step,
                    &stem,
                )
                .map_err(io_only)?;
            }
        }
        Ok(())
    };
    run(&mut program, spec.niter, &cfg, &mut observer)?;
    let elapsed = started.elapsed().as_secs_f64();

    let final_time = spec.niter as f64 * spec.dt;
    let stem = args.out.join("state_final");
    write_snapshot(
        &program.fields,
        &snapshot_names,
        &program.grid,
        final_time,
        spec.niter,
        &stem,
    )?;

    println!(
        "completed {} steps in {:.3} s ({:.0} steps/s)",
        spec.niter,
        elapsed,
        spec.niter as f64 / elapsed.max(1e-9),
    );
    println!("wrote {}.json / .bin", stem.display());
    match case {
        Some("wave1d") => {
            let err = cases::wave1d_error(&program, final_time);
            println!("max |phi - exact advected profile| = {err:.3e}");
        }
        Some("mms2d") => {
            let err = cases::mms2d_error(&program);
            println!("rms |phi - manufactured profile| = {err:.3e}");
        }
        _ => {}
    }
    Ok(())
}

fn io_only(e: SetupError) -> RunError {
    match e {
        SetupError::Io(io) => RunError::Io(io),
        other => RunError::Io(std::io::Error::other(other.to_string())),
    }
}

/// Mesh levels for the refinement study: level l is dx = pi/2^(l+1) on a
/// square domain of side 2*pi, i.e. 4, 8, 16, ... points per side.
fn level_spacing(level: usize) -> f64 {
    std::f64::consts::PI / 2f64.powi(level as i32 + 1)
}

fn cmd_converge(args: ConvergeArgs) -> Result<(), Failure> {
    if args.levels < 2 {
        return Err(Failure::Config(
            "need at least two mesh levels to measure an order".into(),
        ));
    }
    for &order in &args.orders {
        if order < 2 || order > 12 || order % 2 != 0 {
            return Err(Failure::Config(format!(
                "order {order} is not an even order in 2..=12"
            )));
        }
    }
    println!("manufactured-solution refinement study (rms error vs sin(x0)cos(x1))");
    for &order in &args.orders {
        let mut spacings = Vec::new();
        let mut errors = Vec::new();
        print!("order {order:2}:");
        for level in 0..args.levels {
            let error = converge_level(order, level, args.threads)?;
            spacings.push(level_spacing(level));
            errors.push(error);
            print!("  {error:.3e}");
            use std::io::Write;
            let _ = std::io::stdout().flush();
        }
        match observed_order(&spacings, &errors) {
            Some(slope) => println!("  -> order {slope:.2}"),
            None => println!("  -> at rounding floor"),
        }
    }
    Ok(())
}

/// Advance one mesh level to steady state and return the rms error. The
/// marching stops early once the error stalls (successive samples within
/// 1e-14), which every level reaches well before the nominal end time.
fn converge_level(order: usize, level: usize, threads: usize) -> Result<f64, Failure> {
    let dx = level_spacing(level);
    let points = (std::f64::consts::TAU / dx).round() as usize;
    let mut spec = cases::spec_for("mms2d")?;
    spec.accuracy = order;
    spec.shape = vec![points, points];
    spec.deltas = vec![dx, dx];
    spec.dt = 0.025 * dx;
    let end_time = 100.0;
    spec.niter = (end_time / spec.dt).ceil() as usize;

    let mut program = build_program(&spec, threads)?;
    let mut previous = f64::INFINITY;
    let sample_every = 50;
    let mut steps_done = 0;
    while steps_done < spec.niter {
        let burst = sample_every.min(spec.niter - steps_done);
        for _ in 0..burst {
            program.step();
        }
        steps_done += burst;
        program.check_finite(steps_done)?;
        let error = cases::mms2d_error(&program);
        if (error - previous).abs() < 1e-14 {
            return Ok(error);
        }
        previous = error;
    }
    Ok(previous)
}

/// Least-squares slope of log error against log spacing, ignoring levels
/// that already sit at the rounding floor.
fn observed_order(spacings: &[f64], errors: &[f64]) -> Option<f64> {
    let points: Vec<(f64, f64)> = spacings
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > 1e-13)
        .map(|(&h, &e)| (h.ln(), e.ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (sx, sy): (f64, f64) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (sxx, sxy): (f64, f64) = points
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

fn cmd_emit(args: EmitArgs) -> Result<(), Failure> {
    let (spec, _) = resolve_setup(&args.setup)?;
    std::fs::create_dir_all(&args.out)?;
    match args.target {
        EmitTarget::C => {
            let program = build_program(&spec, 1)?;
            write_c(&program, spec.niter, &args.out)?;
            println!(
                "wrote {} and {}",
                args.out.join("kernels.h").display(),
                args.out.join("driver.c").display(),
            );
            println!("build with: cc -O2 -ffp-contract=off -fno-fast-math driver.c -lm");
        }
        EmitTarget::Latex => {
            let (equations, formulas) = expand_setup(&spec)?;
            let mut all = equations;
            all.extend(formulas);
            let path = args.out.join("equations.tex");
            std::fs::write(&path, render_latex(&all))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_cases(args: CasesArgs) -> Result<(), Failure> {
    if let Some(name) = &args.show {
        let case = cases::find(name).ok_or_else(|| {
            Failure::Config(format!("no bundled case named {name}"))
        })?;
        print!("{}", case.setup);
        return Ok(());
    }
    for case in cases::CASES {
        println!("{:8}  {}", case.name, case.summary);
    }
    Ok(())
}
