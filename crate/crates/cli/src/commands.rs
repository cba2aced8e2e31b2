use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use pnp_core::assembly::State;
use pnp_core::diagnostics::{project_nested, relative_l1_spacetime_error, write_snapshot_csv, write_trace_csv};
use pnp_core::mesh::AdmissibleMesh;
use pnp_core::problem::DiscreteProblem;
use pnp_core::solver::{run_transient, run_transient_with, SolverError, TimeLoopOptions, TimeLoopResult};
use pnp_core::steady::{long_time_gap, solve_steady, SteadyError, SteadySolution};
use serde::Serialize;

use crate::config::{discretize_config, load_config, load_mesh, Config};
use crate::{CliError, Common};

fn solver_error(e: SolverError) -> CliError {
    CliError::Solver(e.to_string())
}

fn steady_error(e: SteadyError) -> CliError {
    match e {
        SteadyError::Config(_) | SteadyError::Incompatible(_) => CliError::Config(e.to_string()),
        SteadyError::NonConvergence { .. } | SteadyError::Solver(_) => CliError::Solver(e.to_string()),
    }
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Writes `path` through `body`, mapping any failure to an I/O error.
fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    body(&mut out).map_err(io)?;
    out.flush().map_err(io)
}

fn setup(args: &Common) -> Result<(Config, DiscreteProblem), CliError> {
    let config = load_config(&args.config)?;
    let source = args.mesh.as_deref().ok_or_else(|| CliError::Config("--mesh is required for this mode".into()))?;
    let mesh = load_mesh(source, &config)?;
    let problem = discretize_config(&config, &mesh, &args.config)?;
    create_out_dir(&args.out)?;
    Ok((config, problem))
}

fn loop_options(config: &Config, stride: usize) -> TimeLoopOptions {
    TimeLoopOptions { newton: config.newton, stride }
}

pub fn cmd_run(args: &Common) -> Result<(), CliError> {
    let (config, problem) = setup(args)?;
    let run = run_transient(&problem, &loop_options(&config, args.stride)).map_err(solver_error)?;
    write_file(&args.out.join("trace.csv"), |w| write_trace_csv(w, &run, problem.n_species()))?;
    for (&n, state) in run.step_indices.iter().zip(&run.states) {
        write_file(&args.out.join(format!("snapshot_{n}.csv")), |w| write_snapshot_csv(w, &problem, state))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SteadySummary<'a> {
    mu: &'a [f64],
    psi_value: f64,
    kkt_residual: f64,
    mass_residual: f64,
    iterations: usize,
}

fn write_steady(out: &Path, problem: &DiscreteProblem, sol: &SteadySolution) -> Result<(), CliError> {
    write_file(&out.join("steady_snapshot.csv"), |w| write_snapshot_csv(w, problem, &sol.state()))?;
    let summary = SteadySummary {
        mu: &sol.mu,
        psi_value: sol.psi_value,
        kkt_residual: sol.kkt_residual,
        mass_residual: sol.mass_residual,
        iterations: sol.iterations,
    };
    write_file(&out.join("steady_summary.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })
}

pub fn cmd_steady(args: &Common) -> Result<(), CliError> {
    let (config, problem) = setup(args)?;
    let sol = solve_steady(&problem, &config.steady).map_err(steady_error)?;
    write_steady(&args.out, &problem, &sol)
}

pub fn cmd_longtime(args: &Common) -> Result<(), CliError> {
    let (config, problem) = setup(args)?;
    let steady = solve_steady(&problem, &config.steady).map_err(steady_error)?;
    write_steady(&args.out, &problem, &steady)?;
    let run = run_transient(&problem, &loop_options(&config, args.stride)).map_err(solver_error)?;
    let gaps = long_time_gap(&problem, &run, &steady).map_err(steady_error)?;
    write_file(&args.out.join("trace.csv"), |w| write_trace_csv(w, &run, problem.n_species()))?;
    write_file(&args.out.join("relative_energy.csv"), |w| {
        writeln!(w, "time,H_rel,U_gap_inf")?;
        for g in &gaps {
            writeln!(w, "{:?},{:?},{:?}", g.time, g.h_rel, g.u_gap_inf)?;
        }
        Ok(())
    })
}

/// Runs the reference keeping every level, but only as averages over
/// `n_target` cells so that fine references stay affordable.
fn projected_reference(problem: &DiscreteProblem, options: &TimeLoopOptions, n_target: usize) -> Result<TimeLoopResult, CliError> {
    let measures: Vec<f64> = problem.mesh().cells().iter().map(|c| c.measure).collect();
    let factor = problem.n_cells() / n_target;
    let ni = problem.n_species();
    let mut states = Vec::new();
    let options = TimeLoopOptions { stride: 0, ..*options };
    let run = run_transient_with(problem, &options, |_, _, s| {
        states.push(State::new(
            ni,
            project_nested(&s.fractions, &measures, ni, factor),
            project_nested(&s.potential, &measures, 1, factor),
        ));
    })
    .map_err(solver_error)?;
    Ok(TimeLoopResult {
        step_indices: (0..run.steps.len()).collect(),
        steps: run.steps,
        states,
        cell_measures: measures.chunks(factor).map(|c| c.iter().sum()).collect(),
    })
}

pub fn cmd_convergence(args: &Common) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    let ladder = config
        .convergence
        .clone()
        .ok_or_else(|| CliError::Config(format!("{}: key `convergence` is required for this mode", args.config.display())))?;
    ladder.validate().map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    create_out_dir(&args.out)?;

    let interval = |n: usize| AdmissibleMesh::interval(config.domain_length, n).map_err(|e| CliError::Mesh(e.to_string()));
    let options = loop_options(&config, 1);
    let finest = *ladder.ladder.last().unwrap();
    // Projecting once onto the finest entry is exact for the coarser ones when they nest in it.
    let target = if ladder.ladder.iter().all(|&n| finest % n == 0) { finest } else { 1 };
    let reference_problem = discretize_config(&config, &interval(ladder.reference)?, &args.config)?;
    let reference = if target > 1 {
        projected_reference(&reference_problem, &options, target)?
    } else {
        run_transient(&reference_problem, &options).map_err(solver_error)?
    };

    let mut errors = Vec::with_capacity(ladder.ladder.len());
    for &n in &ladder.ladder {
        let problem = discretize_config(&config, &interval(n)?, &args.config)?;
        let run = run_transient(&problem, &options).map_err(solver_error)?;
        let e = relative_l1_spacetime_error(&run, &reference).map_err(|e| CliError::Config(format!("{n} cells: {e}")))?;
        errors.push(e);
    }
    write_file(&args.out.join("convergence.csv"), |w| {
        writeln!(w, "n_cells,error,observed_order")?;
        for (j, (&n, &e)) in ladder.ladder.iter().zip(&errors).enumerate() {
            if j == 0 {
                writeln!(w, "{n},{e:?},")?;
            } else {
                let ratio = n as f64 / ladder.ladder[j - 1] as f64;
                let order = (errors[j - 1] / e).ln() / ratio.ln();
                writeln!(w, "{n},{e:?},{order:?}")?;
            }
        }
        Ok(())
    })
}
