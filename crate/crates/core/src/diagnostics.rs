//! Free energy, dissipation, electrochemical potentials, space-time errors and CSV output.

use std::io::Write;

use serde::Serialize;

use crate::assembly::{potential_flux_sum, State};
use crate::kernels::{face_flux, FaceData, SideValues};
use crate::mesh::FaceKind;
use crate::problem::DiscreteProblem;
use crate::solver::TimeLoopResult;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("fractions {0:?} lie outside the simplex")]
    OutsideSimplex(Vec<f64>),
    #[error("fraction {value} in cell {cell} is not positive")]
    NonPositive { cell: usize, value: f64 },
    #[error("incompatible runs: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Kernel(#[from] crate::kernels::KernelError),
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// `H(U) = u_0 log u_0 + sum_i u_i log u_i` with `u_0 = 1 - sum_i u_i` and `0 log 0 = 0`.
pub fn mixing_entropy(u: &[f64]) -> Result<f64, DiagnosticsError> {
    let total: f64 = u.iter().sum();
    if u.iter().any(|&x| !(x >= 0.0)) || total > 1.0 + 1e-14 {
        return Err(DiagnosticsError::OutsideSimplex(u.to_vec()));
    }
    Ok(xlogx(1.0 - total) + u.iter().map(|&x| xlogx(x)).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    /// `sum_K m_K H(U_K)`.
    pub mixing: f64,
    /// `lambda^2/2 sum_sigma a_sigma (phi_K - phi_{K sigma})^2`.
    pub potential: f64,
    /// `-lambda^2 sum_{sigma in E^D} a_sigma phi^D_sigma (phi^D_sigma - phi_K)`.
    pub boundary: f64,
    pub total: f64,
    /// `D_T`; only available for strictly positive states.
    pub dissipation: Option<f64>,
    /// `sum_K m_K u_{i,K}` per species.
    pub masses: Vec<f64>,
}

/// The discrete free energy of `state`, with the dissipation when it is defined.
pub fn free_energy(problem: &DiscreteProblem, state: &State) -> EnergyReport {
    let ni = problem.n_species();
    let mesh = problem.mesh();
    let mut mixing = 0.0;
    let mut masses = vec![0.0; ni];
    for (k, cell) in mesh.cells().iter().enumerate() {
        let u = state.cell(k);
        let h = xlogx(state.solvent(k)) + u.iter().map(|&x| xlogx(x)).sum::<f64>();
        mixing += cell.measure * h;
        for (m, &x) in masses.iter_mut().zip(u) {
            *m += cell.measure * x;
        }
    }
    let phi = &state.potential;
    let mut potential = 0.0;
    let mut boundary = 0.0;
    for (f, face) in mesh.faces().iter().enumerate() {
        let a = face.transmissivity();
        match face.kind {
            FaceKind::Interior { k, l } => potential += a * (phi[k] - phi[l]).powi(2),
            FaceKind::Dirichlet { k } => {
                let pd = problem.phi_dirichlet()[f];
                potential += a * (phi[k] - pd).powi(2);
                boundary -= a * pd * (pd - phi[k]);
            }
            FaceKind::Neumann { .. } => {}
        }
    }
    let l2 = problem.lambda_sq();
    let potential = 0.5 * l2 * potential;
    let boundary = l2 * boundary;
    EnergyReport {
        mixing,
        potential,
        boundary,
        total: mixing + potential + boundary,
        dissipation: dissipation(problem, state).ok(),
        masses,
    }
}

/// `mu_{i,K} = log(u_{i,K} / u_{0,K}) + z_i phi_K`, cell-major.
pub fn electrochemical_potentials(problem: &DiscreteProblem, state: &State) -> Result<Vec<f64>, DiagnosticsError> {
    let ni = problem.n_species();
    let mut mu = Vec::with_capacity(state.fractions.len());
    for k in 0..state.n_cells() {
        let u0 = state.solvent(k);
        if !(u0 > 0.0) {
            return Err(DiagnosticsError::NonPositive { cell: k, value: u0 });
        }
        for i in 0..ni {
            let u = state.fractions[k * ni + i];
            if !(u > 0.0) {
                return Err(DiagnosticsError::NonPositive { cell: k, value: u });
            }
            mu.push((u / u0).ln() + problem.charges()[i] * state.potential[k]);
        }
    }
    Ok(mu)
}

/// `D_T = sum_i sum_{sigma interior} F_{i,K sigma} (mu_{i,K} - mu_{i,L})`.
pub fn dissipation(problem: &DiscreteProblem, state: &State) -> Result<f64, DiagnosticsError> {
    Ok(dissipation_terms(problem, state)?.iter().sum())
}

/// The individual summands of [`dissipation`], face-major then species.
pub fn dissipation_terms(problem: &DiscreteProblem, state: &State) -> Result<Vec<f64>, DiagnosticsError> {
    let ni = problem.n_species();
    let mu = electrochemical_potentials(problem, state)?;
    let mut terms = Vec::new();
    for face in problem.mesh().faces() {
        let FaceKind::Interior { k, l } = face.kind else { continue };
        for i in 0..ni {
            let data = FaceData {
                transmissivity: face.transmissivity(),
                diffusion: problem.diffusion()[i],
                charge: problem.charges()[i],
                k: SideValues { species: state.fractions[k * ni + i], solvent: state.solvent(k), potential: state.potential[k] },
                l: SideValues { species: state.fractions[l * ni + i], solvent: state.solvent(l), potential: state.potential[l] },
            };
            terms.push(face_flux(problem.kernel(), &data)? * (mu[k * ni + i] - mu[l * ni + i]));
        }
    }
    Ok(terms)
}

/// Residual of the discrete Poisson equation at `state`, per cell.
pub fn poisson_residual(problem: &DiscreteProblem, state: &State) -> Vec<f64> {
    let lap = potential_flux_sum(problem, &state.potential);
    let load = crate::assembly::charge_load(problem, &state.fractions);
    lap.iter().zip(load).map(|(l, q)| problem.lambda_sq() * l - q).collect()
}

/// Volume-weighted average of `values` (cell-major with `width` entries per
/// cell) over consecutive groups of `factor` cells.
pub fn project_nested(values: &[f64], measures: &[f64], width: usize, factor: usize) -> Vec<f64> {
    let n_fine = measures.len();
    let n_coarse = n_fine / factor;
    let mut out = vec![0.0; n_coarse * width];
    for c in 0..n_coarse {
        let cells = c * factor..(c + 1) * factor;
        let m: f64 = measures[cells.clone()].iter().sum();
        for j in 0..width {
            let s: f64 = cells.clone().map(|f| measures[f] * values[f * width + j]).sum();
            out[c * width + j] = s / m;
        }
    }
    out
}

/// Relative space-time L1 error of the species fractions of `coarse` against
/// `reference` projected onto the coarse cells. Both runs must store every
/// step of the same time grid on nested uniform 1D meshes.
pub fn relative_l1_spacetime_error(coarse: &TimeLoopResult, reference: &TimeLoopResult) -> Result<f64, DiagnosticsError> {
    let nc = coarse.cell_measures.len();
    let nr = reference.cell_measures.len();
    if nc == 0 || !nr.is_multiple_of(nc) {
        return Err(DiagnosticsError::Incompatible(format!("{nr} reference cells do not refine {nc} coarse cells")));
    }
    let factor = nr / nc;
    let total_c: f64 = coarse.cell_measures.iter().sum();
    let total_r: f64 = reference.cell_measures.iter().sum();
    if (total_c - total_r).abs() > 1e-12 * total_c {
        return Err(DiagnosticsError::Incompatible("the runs cover different domains".into()));
    }
    for (c, chunk) in coarse.cell_measures.iter().zip(reference.cell_measures.chunks(factor)) {
        let s: f64 = chunk.iter().sum();
        if (s - c).abs() > 1e-12 * c || chunk.iter().any(|&m| (m - chunk[0]).abs() > 1e-12 * m) {
            return Err(DiagnosticsError::Incompatible("meshes are not nested uniform grids".into()));
        }
    }
    if coarse.step_indices != reference.step_indices {
        return Err(DiagnosticsError::Incompatible("the runs store different time levels".into()));
    }
    if coarse.step_indices.len() != coarse.steps.len() {
        return Err(DiagnosticsError::Incompatible("every time step must be stored".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, &n) in coarse.step_indices.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let tau = coarse.steps[n].tau;
        if (tau - reference.steps[n].tau).abs() > 1e-14 * tau {
            return Err(DiagnosticsError::Incompatible(format!("time step {n} differs")));
        }
        let uc = &coarse.states[idx];
        let ur = &reference.states[idx];
        if uc.n_species != ur.n_species {
            return Err(DiagnosticsError::Incompatible("different species counts".into()));
        }
        let proj = project_nested(&ur.fractions, &reference.cell_measures, ur.n_species, factor);
        let (mut e, mut r) = (0.0, 0.0);
        for (k, &m) in coarse.cell_measures.iter().enumerate() {
            for j in 0..uc.n_species {
                let p = proj[k * uc.n_species + j];
                e += m * (uc.fractions[k * uc.n_species + j] - p).abs();
                r += m * p.abs();
            }
        }
        num += tau * e;
        den += tau * r;
    }
    if !(den > 0.0) {
        return Err(DiagnosticsError::Incompatible("the reference run has no stored steps".into()));
    }
    Ok(num / den)
}

/// Per-step trace: `step,time,H,D,mass_1..mass_I,newton_iters`.
pub fn write_trace_csv(out: &mut impl Write, result: &TimeLoopResult, n_species: usize) -> std::io::Result<()> {
    let masses: Vec<String> = (1..=n_species).map(|i| format!("mass_{i}")).collect();
    writeln!(out, "step,time,H,D,{},newton_iters", masses.join(","))?;
    for rec in &result.steps {
        let d = rec.energy.dissipation.map(|d| format!("{d:?}")).unwrap_or_else(|| "nan".into());
        let masses: Vec<String> = rec.energy.masses.iter().map(|m| format!("{m:?}")).collect();
        writeln!(
            out,
            "{},{:?},{:?},{},{},{}",
            rec.step,
            rec.time,
            rec.energy.total,
            d,
            masses.join(","),
            rec.newton_iterations
        )?;
    }
    Ok(())
}

/// Snapshot: `x(,y),u_0..u_I,phi` per cell center.
pub fn write_snapshot_csv(out: &mut impl Write, problem: &DiscreteProblem, state: &State) -> std::io::Result<()> {
    let two_d = problem.mesh().dimension() == 2;
    let fractions: Vec<String> = (0..=problem.n_species()).map(|i| format!("u_{i}")).collect();
    writeln!(out, "{}{},phi", if two_d { "x,y," } else { "x," }, fractions.join(","))?;
    for (k, cell) in problem.mesh().cells().iter().enumerate() {
        let mut row = format!("{:?}", cell.center[0]);
        if two_d {
            row.push_str(&format!(",{:?}", cell.center[1]));
        }
        row.push_str(&format!(",{:?}", state.solvent(k)));
        for u in state.cell(k) {
            row.push_str(&format!(",{u:?}"));
        }
        row.push_str(&format!(",{:?}", state.potential[k]));
        writeln!(out, "{row}")?;
    }
    Ok(())
}
