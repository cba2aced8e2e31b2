#![allow(dead_code)]

use pnp_core::mesh::{acute_unit_square_msh, import_simplicial_mesh, AdmissibleMesh};
use pnp_core::problem::{discretize, DiscreteProblem, ProblemSpec};

/// The 1D test: two repelling cations between phi^D(0) = 10 and phi^D(1) = 0.
pub fn line_spec() -> ProblemSpec {
    serde_json::from_str(
        r#"{
            "species": [{"name": "u1", "D": 1, "z": 2}, {"name": "u2", "D": 1, "z": 1}],
            "lambda_sq": 0.01,
            "f": 0,
            "dirichlet": {"phi": {"affine": {"c0": 10, "cx": -10}}},
            "initial": {"u1": {"affine": {"c0": 0.1, "cx": 0.1}}, "u2": 0.4},
            "time": {"tau": 1e-3, "T": 1},
            "kernel": "bernoulli"
        }"#,
    )
    .unwrap()
}

pub fn line_problem(n_cells: usize) -> DiscreteProblem {
    let mesh = AdmissibleMesh::interval(1.0, n_cells).unwrap();
    discretize(&line_spec(), &mesh).unwrap()
}

/// Initial data on the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SquareInit {
    /// Neutral, species in separate quadrants.
    Separated,
    /// Neutral, mostly layered.
    Layered,
    /// Charged and constant.
    Constant,
}

pub fn square_spec(init: SquareInit, lambda_sq: f64, tau: f64, final_time: f64) -> ProblemSpec {
    let initial = match init {
        SquareInit::Separated => r#"{
            "a": {"boxes": [{"value": 0.3, "box": [0, 0.5, 0, 0.5]}]},
            "b": {"boxes": [{"value": 0.3, "box": [0.5, 1, 0, 0.5]}]},
            "c": {"boxes": [{"value": 0.9, "box": [0.5, 1, 0.5, 1]}]}
        }"#,
        SquareInit::Layered => r#"{
            "a": {"boxes": [{"value": 0.03, "box": [0, 0.5, 0, 0.5]}]},
            "b": {"boxes": [{"value": 0.03, "box": [0.5, 1, 0, 0.5]}, {"value": 0.9, "box": [0, 1, 0.5, 1]}]},
            "c": {"boxes": [{"value": 0.09, "box": [0.5, 1, 0.5, 1]}, {"value": 0.9, "box": [0, 1, 0, 0.5]}]}
        }"#,
        SquareInit::Constant => r#"{"a": 0.2, "b": 0.2, "c": 0.3}"#,
    };
    let text = format!(
        r#"{{
            "species": [{{"name": "a", "D": 1, "z": 2}}, {{"name": "b", "D": 2, "z": 1}}, {{"name": "c", "D": 2, "z": -1}}],
            "lambda_sq": {lambda_sq:?},
            "dirichlet": {{"box": [0, 0.5, 1, 1], "phi": 0}},
            "initial": {initial},
            "time": {{"tau": {tau:?}, "T": {final_time:?}}}
        }}"#
    );
    serde_json::from_str(&text).unwrap()
}

/// Coarse acute triangulation of the unit square, read back through the MSH importer.
pub fn square_mesh() -> AdmissibleMesh {
    import_simplicial_mesh(&acute_unit_square_msh(26, 30).unwrap()).unwrap()
}

pub fn square_problem(mesh: &AdmissibleMesh, init: SquareInit, lambda_sq: f64, tau: f64, final_time: f64) -> DiscreteProblem {
    discretize(&square_spec(init, lambda_sq, tau, final_time), mesh).unwrap()
}
