//! Problem description (JSON schema) and its discretization onto a mesh.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::kernels::FluxKernel;
use crate::mesh::{polygon_area_centroid, AdmissibleMesh, CellShape, FaceKind, Point};

/// Smallest admissible time step.
pub const MIN_TIME_STEP: f64 = 1e-12;
/// Slack on the simplex constraint `sum u_i <= 1` for roundoff in the data.
const SIMPLEX_SLACK: f64 = 1e-14;
/// Slack when matching face midpoints against the Dirichlet box.
const REGION_SLACK: f64 = 1e-12;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum ProblemError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error in cell {cell}: {message}")]
    Data { cell: usize, message: String },
    #[error("data error: {0}")]
    Mass(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub name: String,
    #[serde(rename = "D")]
    pub diffusion: f64,
    pub z: i32,
}

/// A box indicator `value * 1_{[xmin,xmax] x [ymin,ymax]}`. In 1D the y range is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxTerm {
    pub value: f64,
    #[serde(rename = "box")]
    pub region: [f64; 4],
}

/// Scalar data that can be averaged exactly over cells.
///
/// JSON forms: a bare number, `{"const": v}`, `{"affine": {"c0":..,"cx":..,"cy":..}}`,
/// `{"boxes": [{"value": v, "box": [xmin, xmax, ymin, ymax]}, ..]}` or `{"cells": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "FieldRepr")]
#[serde(rename_all = "snake_case")]
pub enum ScalarField {
    Const(f64),
    Affine {
        c0: f64,
        #[serde(default)]
        cx: f64,
        #[serde(default)]
        cy: f64,
    },
    Boxes(Vec<BoxTerm>),
    Cells(Vec<f64>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FieldRepr {
    Number(f64),
    Tagged(TaggedField),
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum TaggedField {
    Const(f64),
    Affine {
        c0: f64,
        #[serde(default)]
        cx: f64,
        #[serde(default)]
        cy: f64,
    },
    Boxes(Vec<BoxTerm>),
    Cells(Vec<f64>),
}

impl From<FieldRepr> for ScalarField {
    fn from(repr: FieldRepr) -> Self {
        match repr {
            FieldRepr::Number(v) | FieldRepr::Tagged(TaggedField::Const(v)) => ScalarField::Const(v),
            FieldRepr::Tagged(TaggedField::Affine { c0, cx, cy }) => ScalarField::Affine { c0, cx, cy },
            FieldRepr::Tagged(TaggedField::Boxes(b)) => ScalarField::Boxes(b),
            FieldRepr::Tagged(TaggedField::Cells(c)) => ScalarField::Cells(c),
        }
    }
}

impl Default for ScalarField {
    fn default() -> Self {
        ScalarField::Const(0.0)
    }
}

impl ScalarField {
    /// Pointwise value; `None` for per-cell tables.
    pub fn at(&self, p: Point) -> Option<f64> {
        match self {
            ScalarField::Const(v) => Some(*v),
            ScalarField::Affine { c0, cx, cy } => Some(c0 + cx * p[0] + cy * p[1]),
            ScalarField::Boxes(terms) => Some(
                terms
                    .iter()
                    .filter(|t| {
                        let [x0, x1, y0, y1] = t.region;
                        p[0] > x0 && p[0] < x1 && p[1] > y0 && p[1] < y1
                    })
                    .map(|t| t.value)
                    .sum(),
            ),
            ScalarField::Cells(_) => None,
        }
    }

    /// Exact cell averages over every cell of `mesh`.
    pub fn cell_averages(&self, mesh: &AdmissibleMesh) -> Result<Vec<f64>, ProblemError> {
        if let ScalarField::Cells(values) = self {
            if values.len() != mesh.n_cells() {
                return Err(ProblemError::Config(format!(
                    "per-cell table has {} entries for {} cells",
                    values.len(),
                    mesh.n_cells()
                )));
            }
            return Ok(values.clone());
        }
        Ok(mesh
            .cells()
            .iter()
            .map(|cell| match self {
                ScalarField::Const(v) => *v,
                ScalarField::Affine { .. } => self.at(cell.centroid).unwrap_or(0.0),
                ScalarField::Boxes(terms) => terms
                    .iter()
                    .map(|t| t.value * box_overlap(&cell.shape, t.region) / cell.measure)
                    .sum(),
                ScalarField::Cells(_) => unreachable!(),
            })
            .collect())
    }
}

/// Measure of `shape ∩ box`.
fn box_overlap(shape: &CellShape, region: [f64; 4]) -> f64 {
    let [x0, x1, y0, y1] = region;
    match shape {
        CellShape::Interval { a, b } => (b.min(x1) - a.max(x0)).max(0.0),
        CellShape::Polygon(pts) => {
            let mut poly = pts.clone();
            // Sutherland-Hodgman against the four half-planes
            let planes: [(usize, f64, f64); 4] = [(0, x0, 1.0), (0, x1, -1.0), (1, y0, 1.0), (1, y1, -1.0)];
            for (axis, bound, sign) in planes {
                if poly.is_empty() {
                    return 0.0;
                }
                let inside = |p: &Point| sign * (p[axis] - bound) >= 0.0;
                let mut clipped = Vec::with_capacity(poly.len() + 2);
                for i in 0..poly.len() {
                    let cur = poly[i];
                    let prev = poly[(i + poly.len() - 1) % poly.len()];
                    let (ci, pi) = (inside(&cur), inside(&prev));
                    if ci != pi {
                        let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                        let mut q = [prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])];
                        q[axis] = bound;
                        clipped.push(q);
                    }
                    if ci {
                        clipped.push(cur);
                    }
                }
                poly = clipped;
            }
            if poly.len() < 3 {
                0.0
            } else {
                polygon_area_centroid(&poly).0.abs()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletSpec {
    /// Boundary faces whose midpoint lies in this closed box become Dirichlet,
    /// all others Neumann. When absent the mesh's own tags are kept.
    #[serde(rename = "box", default)]
    pub region: Option<[f64; 4]>,
    pub phi: ScalarField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeSpec {
    Uniform {
        tau: f64,
        #[serde(rename = "T")]
        final_time: f64,
    },
    List { taus: Vec<f64> },
}

impl TimeSpec {
    /// Expands into explicit steps. A uniform grid whose final time is not a
    /// multiple of `tau` gets a shortened last step.
    pub fn steps(&self) -> Result<Vec<f64>, ProblemError> {
        let steps = match *self {
            TimeSpec::Uniform { tau, final_time } => {
                if !(tau >= MIN_TIME_STEP) || !(final_time > 0.0) || !final_time.is_finite() {
                    return Err(ProblemError::Config(format!(
                        "time grid needs tau >= {MIN_TIME_STEP:e} and T > 0, got tau = {tau}, T = {final_time}"
                    )));
                }
                let n = (final_time / tau - 1e-9).ceil().max(1.0) as usize;
                let mut steps = vec![tau; n];
                let covered = n as f64 * tau;
                if (covered - final_time).abs() > 1e-9 * final_time {
                    steps[n - 1] = final_time - (n - 1) as f64 * tau;
                }
                steps
            }
            TimeSpec::List { ref taus } => taus.clone(),
        };
        if steps.is_empty() {
            return Err(ProblemError::Config("time grid is empty".into()));
        }
        if let Some((n, tau)) = steps.iter().enumerate().find(|(_, &t)| !(t >= MIN_TIME_STEP) || !t.is_finite()) {
            return Err(ProblemError::Config(format!("time step {n} is {tau}, below {MIN_TIME_STEP:e}")));
        }
        Ok(steps)
    }
}

/// The continuous problem as read from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub species: Vec<Species>,
    pub lambda_sq: f64,
    #[serde(default)]
    pub f: ScalarField,
    pub dirichlet: DirichletSpec,
    /// Initial fraction per species name.
    pub initial: BTreeMap<String, ScalarField>,
    pub time: TimeSpec,
    #[serde(default)]
    pub kernel: FluxKernel,
}

/// Everything the solvers need, discretized on one mesh. Fractions are stored
/// cell-major: entry `k * I + i` is species `i` (0-based, solvent excluded) in cell `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteProblem {
    mesh: AdmissibleMesh,
    species: Vec<Species>,
    diffusion: Vec<f64>,
    charges: Vec<f64>,
    lambda_sq: f64,
    background: Vec<f64>,
    phi_dirichlet: Vec<f64>,
    initial: Vec<f64>,
    time_steps: Vec<f64>,
    kernel: FluxKernel,
}

impl DiscreteProblem {
    /// Assembles and validates a problem from already discretized data.
    /// `phi_dirichlet` is indexed by face and read only on Dirichlet faces.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: AdmissibleMesh,
        species: Vec<Species>,
        lambda_sq: f64,
        background: Vec<f64>,
        phi_dirichlet: Vec<f64>,
        initial: Vec<f64>,
        time_steps: Vec<f64>,
        kernel: FluxKernel,
    ) -> Result<Self, ProblemError> {
        if species.is_empty() {
            return Err(ProblemError::Config("at least one species is required".into()));
        }
        for s in &species {
            if !(s.diffusion > 0.0) || !s.diffusion.is_finite() {
                return Err(ProblemError::Config(format!("species {:?}: D must be positive, got {}", s.name, s.diffusion)));
            }
        }
        if !(lambda_sq > 0.0) || !lambda_sq.is_finite() {
            return Err(ProblemError::Config(format!("lambda_sq must be positive, got {lambda_sq}")));
        }
        if !mesh.has_dirichlet_face() {
            return Err(ProblemError::Config("the Dirichlet boundary is empty".into()));
        }
        let n = mesh.n_cells();
        let n_species = species.len();
        if background.len() != n || initial.len() != n * n_species || phi_dirichlet.len() != mesh.faces().len() {
            return Err(ProblemError::Config("discretized data does not match the mesh".into()));
        }
        if time_steps.is_empty() || time_steps.iter().any(|t| !(*t >= MIN_TIME_STEP)) {
            return Err(ProblemError::Config(format!("every time step must be at least {MIN_TIME_STEP:e}")));
        }
        for (k, cell) in initial.chunks(n_species).enumerate() {
            for (s, &u) in species.iter().zip(cell) {
                if !(u >= 0.0) {
                    return Err(ProblemError::Data { cell: k, message: format!("initial fraction of {:?} is {u}", s.name) });
                }
            }
            let total: f64 = cell.iter().sum();
            if total > 1.0 + SIMPLEX_SLACK {
                return Err(ProblemError::Data { cell: k, message: format!("initial fractions sum to {total} > 1") });
            }
        }
        let measures: Vec<f64> = mesh.cells().iter().map(|c| c.measure).collect();
        for (i, s) in species.iter().enumerate() {
            let mass: f64 = (0..n).map(|k| measures[k] * initial[k * n_species + i]).sum();
            if !(mass > 0.0) {
                return Err(ProblemError::Mass(format!("species {:?} has zero initial mass", s.name)));
            }
        }
        let solvent: f64 = (0..n)
            .map(|k| measures[k] * (1.0 - initial[k * n_species..(k + 1) * n_species].iter().sum::<f64>()))
            .sum();
        if !(solvent > 0.0) {
            return Err(ProblemError::Mass("the solvent has zero initial mass".into()));
        }
        Ok(Self {
            diffusion: species.iter().map(|s| s.diffusion).collect(),
            charges: species.iter().map(|s| s.z as f64).collect(),
            mesh,
            species,
            lambda_sq,
            background,
            phi_dirichlet,
            initial,
            time_steps,
            kernel,
        })
    }

    pub fn mesh(&self) -> &AdmissibleMesh {
        &self.mesh
    }

    pub fn species(&self) -> &[Species] {
        &self.species
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn n_cells(&self) -> usize {
        self.mesh.n_cells()
    }

    pub fn diffusion(&self) -> &[f64] {
        &self.diffusion
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    pub fn lambda_sq(&self) -> f64 {
        self.lambda_sq
    }

    /// `f_K` per cell.
    pub fn background(&self) -> &[f64] {
        &self.background
    }

    /// `phi^D_sigma` per face (zero on non-Dirichlet faces).
    pub fn phi_dirichlet(&self) -> &[f64] {
        &self.phi_dirichlet
    }

    /// Initial fractions `u_{i,K}^0`, cell-major.
    pub fn initial_fractions(&self) -> &[f64] {
        &self.initial
    }

    pub fn time_steps(&self) -> &[f64] {
        &self.time_steps
    }

    pub fn final_time(&self) -> f64 {
        self.time_steps.iter().sum()
    }

    pub fn kernel(&self) -> FluxKernel {
        self.kernel
    }

    /// Initial mass `sum_K m_K u_{i,K}^0` of species `i`.
    pub fn initial_mass(&self, i: usize) -> f64 {
        let n_species = self.n_species();
        self.mesh
            .cells()
            .iter()
            .enumerate()
            .map(|(k, c)| c.measure * self.initial[k * n_species + i])
            .sum()
    }

    pub fn with_time_steps(&self, time_steps: Vec<f64>) -> Result<Self, ProblemError> {
        let mut p = self.clone();
        if time_steps.is_empty() || time_steps.iter().any(|t| !(*t >= MIN_TIME_STEP)) {
            return Err(ProblemError::Config(format!("every time step must be at least {MIN_TIME_STEP:e}")));
        }
        p.time_steps = time_steps;
        Ok(p)
    }

    /// Same problem with different initial fractions (cell-major).
    pub fn with_initial_fractions(&self, initial: Vec<f64>) -> Result<Self, ProblemError> {
        Self::new(
            self.mesh.clone(),
            self.species.clone(),
            self.lambda_sq,
            self.background.clone(),
            self.phi_dirichlet.clone(),
            initial,
            self.time_steps.clone(),
            self.kernel,
        )
    }
}

/// Discretizes `spec` on `mesh`: exact cell averages of `f` and the initial
/// fractions, midpoint values of `phi^D`, and Dirichlet tags from the box.
pub fn discretize(spec: &ProblemSpec, mesh: &AdmissibleMesh) -> Result<DiscreteProblem, ProblemError> {
    let mesh = match spec.dirichlet.region {
        Some(region) => {
            let one_d = mesh.dimension() == 1;
            mesh.with_dirichlet_where(|p| {
                let [x0, x1, y0, y1] = region;
                let in_x = p[0] >= x0 - REGION_SLACK && p[0] <= x1 + REGION_SLACK;
                let in_y = one_d || (p[1] >= y0 - REGION_SLACK && p[1] <= y1 + REGION_SLACK);
                in_x && in_y
            })
        }
        None => mesh.clone(),
    };
    if !mesh.has_dirichlet_face() {
        return Err(ProblemError::Config("no boundary face matches the Dirichlet region".into()));
    }
    if matches!(spec.dirichlet.phi, ScalarField::Boxes(_) | ScalarField::Cells(_)) {
        return Err(ProblemError::Config("dirichlet.phi must be a constant or an affine function".into()));
    }
    let phi_dirichlet = mesh
        .faces()
        .iter()
        .map(|face| match face.kind {
            FaceKind::Dirichlet { .. } => spec.dirichlet.phi.at(face.midpoint).unwrap_or(0.0),
            _ => 0.0,
        })
        .collect();

    let background = spec.f.cell_averages(&mesh)?;
    let n = mesh.n_cells();
    let n_species = spec.species.len();
    for name in spec.initial.keys() {
        if !spec.species.iter().any(|s| &s.name == name) {
            return Err(ProblemError::Config(format!("initial data given for unknown species {name:?}")));
        }
    }
    let mut initial = vec![0.0; n * n_species];
    for (i, s) in spec.species.iter().enumerate() {
        let field = spec
            .initial
            .get(&s.name)
            .ok_or_else(|| ProblemError::Config(format!("missing initial data for species {:?}", s.name)))?;
        for (k, v) in field.cell_averages(&mesh)?.into_iter().enumerate() {
            initial[k * n_species + i] = v;
        }
    }
    DiscreteProblem::new(
        mesh,
        spec.species.clone(),
        spec.lambda_sq,
        background,
        phi_dirichlet,
        initial,
        spec.time.steps()?,
        spec.kernel,
    )
}
