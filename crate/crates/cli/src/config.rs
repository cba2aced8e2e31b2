use std::path::Path;

use pnp_core::mesh::{import_simplicial_mesh, AdmissibleMesh};
use pnp_core::problem::{discretize, DiscreteProblem, ProblemError, ProblemSpec};
use pnp_core::solver::NewtonOptions;
use pnp_core::steady::SteadyOptions;
use serde::Deserialize;

use crate::CliError;

/// Everything numeric lives here; the command line only carries paths,
/// the mode and the snapshot stride.
#[derive(Debug, Clone)]
pub struct Config {
    pub problem: ProblemSpec,
    pub domain_length: f64,
    pub newton: NewtonOptions,
    pub steady: SteadyOptions,
    pub convergence: Option<Ladder>,
}

/// The keys next to the problem description.
#[derive(Debug, Clone, Deserialize)]
struct Driver {
    /// Length of the interval for builtin 1D meshes and the convergence ladder.
    #[serde(default = "unit_length")]
    domain_length: f64,
    #[serde(default)]
    newton: NewtonOptions,
    #[serde(default)]
    steady: SteadyOptions,
    #[serde(default)]
    convergence: Option<Ladder>,
}

fn unit_length() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ladder {
    /// Cell counts of the 1D meshes, coarse to fine.
    pub ladder: Vec<usize>,
    /// Cell count of the reference mesh.
    pub reference: usize,
}

impl Ladder {
    pub fn validate(&self) -> Result<(), String> {
        if self.ladder.is_empty() {
            return Err("convergence.ladder is empty".into());
        }
        if self.ladder.iter().any(|&n| n < 2) {
            return Err("convergence.ladder entries need at least 2 cells".into());
        }
        if self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err("convergence.ladder must be strictly increasing".into());
        }
        let finest = *self.ladder.last().unwrap();
        if self.reference <= finest {
            return Err(format!("convergence.reference ({}) must be strictly finer than the finest ladder entry ({finest})", self.reference));
        }
        if let Some(n) = self.ladder.iter().find(|&&n| !self.reference.is_multiple_of(n)) {
            return Err(format!("convergence.reference ({}) is not nested over the {n}-cell mesh", self.reference));
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let context = |e: String| CliError::Config(format!("{}: {e}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| context(e.to_string()))?;
    // Two passes over the same document keep the key path in error messages,
    // which a flattened struct would lose.
    let problem: ProblemSpec = keyed(&value).map_err(context)?;
    let driver: Driver = keyed(&value).map_err(context)?;
    let config = Config {
        problem,
        domain_length: driver.domain_length,
        newton: driver.newton,
        steady: driver.steady,
        convergence: driver.convergence,
    };
    if !(config.domain_length > 0.0 && config.domain_length.is_finite()) {
        return Err(CliError::Config(format!("{}: key `domain_length` must be positive", path.display())));
    }
    Ok(config)
}

fn keyed<T: serde::de::DeserializeOwned>(value: &serde_json::Value) -> Result<T, String> {
    serde_path_to_error::deserialize(value).map_err(|e| match e.path().to_string().as_str() {
        "." => e.inner().to_string(),
        key => format!("key `{key}`: {}", e.inner()),
    })
}

/// `builtin:1d:N`, `builtin:2d:NX:NY` or the path of a Gmsh 2.2 file.
pub fn load_mesh(source: &str, config: &Config) -> Result<AdmissibleMesh, CliError> {
    let mesh_error = |e: pnp_core::mesh::MeshError| CliError::Mesh(format!("{source}: {e}"));
    if let Some(rest) = source.strip_prefix("builtin:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let count = |s: &str| s.parse::<usize>().map_err(|_| CliError::Mesh(format!("{source}: `{s}` is not a cell count")));
        return match parts.as_slice() {
            ["1d", n] => AdmissibleMesh::interval(config.domain_length, count(n)?).map_err(mesh_error),
            ["2d", nx, ny] => AdmissibleMesh::acute_unit_square(count(nx)?, count(ny)?).map_err(mesh_error),
            _ => Err(CliError::Mesh(format!("{source}: expected builtin:1d:N or builtin:2d:NX:NY"))),
        };
    }
    let text = std::fs::read_to_string(source).map_err(|e| CliError::Io(format!("{source}: {e}")))?;
    import_simplicial_mesh(&text).map_err(mesh_error)
}

pub fn discretize_config(config: &Config, mesh: &AdmissibleMesh, path: &Path) -> Result<DiscreteProblem, CliError> {
    discretize(&config.problem, mesh).map_err(|e| {
        let key = match e {
            ProblemError::Data { .. } | ProblemError::Mass(_) => "key `initial`: ",
            ProblemError::Config(_) => "",
        };
        CliError::Config(format!("{}: {key}{e}", path.display()))
    })
}
