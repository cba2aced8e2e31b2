//! `pnp`: runs the transient, steady-state, convergence and long-time
//! experiments from a JSON configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "pnp", version, about = "Finite-volume solver for size-exclusion Poisson-Nernst-Planck systems")]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Subcommand, Debug)]
enum Mode {
    /// March the time grid, writing trace.csv and snapshot_<n>.csv.
    Run(Common),
    /// Solve for the equilibrium, writing steady_snapshot.csv and steady_summary.json.
    Steady(Common),
    /// Run the 1D refinement ladder of the config against its reference, writing convergence.csv.
    Convergence(Common),
    /// Compute the equilibrium, then march towards it, writing relative_energy.csv.
    Longtime(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// `builtin:1d:N`, `builtin:2d:NX:NY` or a Gmsh 2.2 file. Not used by `convergence`.
    #[arg(long)]
    pub mesh: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep every k-th level; 0 keeps only the initial and final ones.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(thiserror::Error, Debug)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Mesh(_) => 3,
            CliError::Solver(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.mode {
        Mode::Run(c) => commands::cmd_run(c),
        Mode::Steady(c) => commands::cmd_steady(c),
        Mode::Convergence(c) => commands::cmd_convergence(c),
        Mode::Longtime(c) => commands::cmd_longtime(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pnp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
