//! The discrete steady state as the minimizer of the convex dual functional
//! `Psi(y, xi)`, where `y` is the cell potential and `xi` the constant
//! electrochemical potentials.

use serde::{Deserialize, Serialize};

use crate::assembly::{electric_operator, potential_flux_sum, SparseOperator, State};
use crate::diagnostics::free_energy;
use crate::mesh::FaceKind;
use crate::problem::DiscreteProblem;
use crate::solver::{solve_potential, LinearSolver, SolverError, TimeLoopResult};

/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;
/// Relative slack in the decrease test for round-off in `Psi`.
const ROUNDOFF_SLACK: f64 = 1e-14;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum SteadyError {
    #[error("steady Newton did not converge in {iterations} iterations; gradient history {history:?}")]
    NonConvergence { iterations: usize, history: Vec<f64> },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("incompatible inputs: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Equilibrium fractions `(v_0, v_1, .., v_I)` with
/// `v_i = e^{xi_i - z_i y} / (1 + sum_j e^{xi_j - z_j y})`.
pub fn v_fractions(y: f64, xi: &[f64], charges: &[f64]) -> Vec<f64> {
    let (_, weights) = shifted_weights(y, xi, charges);
    let s: f64 = weights.iter().sum();
    weights.iter().map(|w| w / s).collect()
}

/// `(m, [e^{-m}, e^{e_1 - m}, ..])` with `e_i = xi_i - z_i y` and `m = max(0, e_i)`.
fn shifted_weights(y: f64, xi: &[f64], charges: &[f64]) -> (f64, Vec<f64>) {
    let m = xi.iter().zip(charges).map(|(x, z)| x - z * y).fold(0.0f64, f64::max);
    let mut w = Vec::with_capacity(xi.len() + 1);
    w.push((-m).exp());
    w.extend(xi.iter().zip(charges).map(|(x, z)| (x - z * y - m).exp()));
    (m, w)
}

/// `log(1 + sum_i e^{xi_i - z_i y})`.
pub fn log_partition(y: f64, xi: &[f64], charges: &[f64]) -> f64 {
    let (m, w) = shifted_weights(y, xi, charges);
    m + w.iter().sum::<f64>().ln()
}

/// `r(y, xi) = -sum_i z_i v_i(y, xi)`.
pub fn charge_response(y: f64, xi: &[f64], charges: &[f64]) -> f64 {
    let v = v_fractions(y, xi, charges);
    -charges.iter().zip(&v[1..]).map(|(z, v)| z * v).sum::<f64>()
}

/// `d r / d y = sum_{i>=0} v_i (z_i - zbar)^2` with `zbar = sum v_i z_i`, `z_0 = 0`.
pub fn charge_response_slope(y: f64, xi: &[f64], charges: &[f64]) -> f64 {
    let v = v_fractions(y, xi, charges);
    let zbar: f64 = charges.iter().zip(&v[1..]).map(|(z, v)| z * v).sum();
    v[0] * zbar * zbar + charges.iter().zip(&v[1..]).map(|(z, v)| v * (z - zbar).powi(2)).sum::<f64>()
}

/// Value and gradient of `Psi`; the gradient lists the `y` rows first, then `xi`.
pub fn psi_value_grad(problem: &DiscreteProblem, y: &[f64], xi: &[f64]) -> (f64, Vec<f64>) {
    let n = problem.n_cells();
    let ni = problem.n_species();
    let z = problem.charges();
    let l2 = problem.lambda_sq();
    let mut value = 0.0;
    for (f, face) in problem.mesh().faces().iter().enumerate() {
        let a = face.transmissivity();
        match face.kind {
            FaceKind::Interior { k, l } => value += 0.5 * l2 * a * (y[k] - y[l]).powi(2),
            FaceKind::Dirichlet { k } => value += 0.5 * l2 * a * (y[k] - problem.phi_dirichlet()[f]).powi(2),
            FaceKind::Neumann { .. } => {}
        }
    }
    let lap = potential_flux_sum(problem, y);
    let u0 = problem.initial_fractions();
    let mut grad = vec![0.0; n + ni];
    for (k, cell) in problem.mesh().cells().iter().enumerate() {
        let m = cell.measure;
        let v = v_fractions(y[k], xi, z);
        let fk = problem.background()[k];
        let linear: f64 = xi.iter().zip(&u0[k * ni..(k + 1) * ni]).map(|(x, u)| x * u).sum();
        value += m * log_partition(y[k], xi, z) - m * (fk * y[k] + linear);
        let r = -z.iter().zip(&v[1..]).map(|(z, v)| z * v).sum::<f64>();
        grad[k] = l2 * lap[k] + m * r - m * fk;
        for i in 0..ni {
            grad[n + i] += m * (v[i + 1] - u0[k * ni + i]);
        }
    }
    (value, grad)
}

fn psi_hessian(problem: &DiscreteProblem, y: &[f64], xi: &[f64]) -> SparseOperator {
    let n = problem.n_cells();
    let ni = problem.n_species();
    let z = problem.charges();
    let lap = electric_operator(problem);
    let mut h = SparseOperator::with_capacity(n + ni, lap.values.len() + n * (1 + 2 * ni + ni * ni));
    for ((&r, &c), &v) in lap.rows.iter().zip(&lap.cols).zip(&lap.values) {
        h.push(r, c, v);
    }
    let mut xixi = vec![0.0; ni * ni];
    for (k, cell) in problem.mesh().cells().iter().enumerate() {
        let m = cell.measure;
        let v = v_fractions(y[k], xi, z);
        let zbar: f64 = z.iter().zip(&v[1..]).map(|(z, v)| z * v).sum();
        let slope = v[0] * zbar * zbar + z.iter().zip(&v[1..]).map(|(z, v)| v * (z - zbar).powi(2)).sum::<f64>();
        h.push(k, k, m * slope);
        for j in 0..ni {
            let c = -m * v[j + 1] * (z[j] - zbar);
            h.push(k, n + j, c);
            h.push(n + j, k, c);
            for i in 0..ni {
                let delta = if i == j { 1.0 } else { 0.0 };
                xixi[i * ni + j] += m * v[i + 1] * (delta - v[j + 1]);
            }
        }
    }
    for i in 0..ni {
        for j in 0..ni {
            h.push(n + i, n + j, xixi[i * ni + j]);
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteadyOptions {
    /// Gradient tolerance relative to `1 + |Omega|`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iters: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadySolution {
    pub potential: Vec<f64>,
    pub mu: Vec<f64>,
    /// Reconstructed `u_{i,K} = v_i(phi_K, mu)` for `i = 1..I`, cell-major.
    pub fractions: Vec<f64>,
    pub psi_value: f64,
    /// Sup-norm of the `y` gradient, i.e. of the modified Poisson-Boltzmann residual.
    pub kkt_residual: f64,
    /// Sup-norm of the mass-constraint violation (the `xi` gradient).
    pub mass_residual: f64,
    pub iterations: usize,
}

impl SteadySolution {
    pub fn state(&self) -> State {
        State::new(self.mu.len(), self.fractions.clone(), self.potential.clone())
    }
}

/// Default starting point: the linear Poisson potential of the initial charges
/// and `xi_i = log(mean u_i^0 / mean u_0^0)`.
pub fn initial_guess(problem: &DiscreteProblem) -> Result<(Vec<f64>, Vec<f64>), SteadyError> {
    let y = solve_potential(problem, problem.initial_fractions(), &mut LinearSolver::new())?;
    let ni = problem.n_species();
    let total: f64 = problem.mesh().domain_measure();
    let masses: Vec<f64> = (0..ni).map(|i| problem.initial_mass(i)).collect();
    let solvent = total - masses.iter().sum::<f64>();
    let xi = masses.iter().map(|m| (m / solvent).ln()).collect();
    Ok((y, xi))
}

/// Minimizes `Psi` from the default starting point.
pub fn solve_steady(problem: &DiscreteProblem, options: &SteadyOptions) -> Result<SteadySolution, SteadyError> {
    let (y, xi) = initial_guess(problem)?;
    solve_steady_from(problem, options, y, xi)
}

/// Minimizes `Psi` by Newton's method with Armijo backtracking on `Psi`.
pub fn solve_steady_from(
    problem: &DiscreteProblem,
    options: &SteadyOptions,
    mut y: Vec<f64>,
    mut xi: Vec<f64>,
) -> Result<SteadySolution, SteadyError> {
    let n = problem.n_cells();
    let ni = problem.n_species();
    if !problem.mesh().has_dirichlet_face() {
        return Err(SteadyError::Config("the Dirichlet boundary is empty".into()));
    }
    if let Some(i) = (0..ni).find(|&i| !(problem.initial_mass(i) > 0.0)) {
        return Err(SteadyError::Config(format!("species {} has zero mass", problem.species()[i].name)));
    }
    if y.len() != n || xi.len() != ni {
        return Err(SteadyError::Incompatible("initial guess does not match the problem".into()));
    }
    let tol = options.tol * (1.0 + problem.mesh().domain_measure());
    let mut linear = LinearSolver::new();
    let (mut value, mut grad) = psi_value_grad(problem, &y, &xi);
    let sup = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut history = vec![sup(&grad)];

    let mut iterations = 0;
    while !(sup(&grad) <= tol) {
        if iterations >= options.max_iters {
            return Err(SteadyError::NonConvergence { iterations, history });
        }
        iterations += 1;
        let hess = psi_hessian(problem, &y, &xi);
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let d = linear.solve(&hess, &neg)?;
        let slope: f64 = grad.iter().zip(&d).map(|(g, d)| g * d).sum();
        let mut alpha = 1.0;
        let accepted = loop {
            let yt: Vec<f64> = y.iter().zip(&d[..n]).map(|(a, b)| a + alpha * b).collect();
            let xt: Vec<f64> = xi.iter().zip(&d[n..]).map(|(a, b)| a + alpha * b).collect();
            let (vt, gt) = psi_value_grad(problem, &yt, &xt);
            let slack = ROUNDOFF_SLACK * (1.0 + value.abs());
            if vt.is_finite() && vt <= value + ARMIJO * alpha * slope + slack {
                break Some((yt, xt, vt, gt));
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                break None;
            }
        };
        match accepted {
            Some((yt, xt, vt, gt)) => {
                y = yt;
                xi = xt;
                value = vt;
                grad = gt;
            }
            None => return Err(SteadyError::NonConvergence { iterations, history }),
        }
        history.push(sup(&grad));
    }

    let z = problem.charges();
    let mut fractions = Vec::with_capacity(n * ni);
    for &yk in &y {
        fractions.extend_from_slice(&v_fractions(yk, &xi, z)[1..]);
    }
    Ok(SteadySolution {
        kkt_residual: sup(&grad[..n]),
        mass_residual: sup(&grad[n..]),
        potential: y,
        mu: xi,
        fractions,
        psi_value: value,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRecord {
    pub step: usize,
    pub time: f64,
    /// `H^n - H^infinity`.
    pub h_rel: f64,
    /// `max_{i,K} |u_{i,K}^n - u_{i,K}^infinity|` over all fractions including the solvent.
    pub u_gap_inf: f64,
}

/// Relative energy and sup-norm distance to the steady state along the stored levels of `run`.
pub fn long_time_gap(problem: &DiscreteProblem, run: &TimeLoopResult, steady: &SteadySolution) -> Result<Vec<GapRecord>, SteadyError> {
    let n = problem.n_cells();
    let ni = problem.n_species();
    if steady.potential.len() != n || steady.mu.len() != ni || run.cell_measures.len() != n {
        return Err(SteadyError::Incompatible("run and steady state belong to different problems".into()));
    }
    let limit = steady.state();
    let h_inf = free_energy(problem, &limit).total;
    let mut out = Vec::with_capacity(run.states.len());
    for (&step, state) in run.step_indices.iter().zip(&run.states) {
        if state.n_species != ni || state.n_cells() != n {
            return Err(SteadyError::Incompatible("run and steady state belong to different problems".into()));
        }
        let mut gap: f64 = 0.0;
        for k in 0..n {
            gap = gap.max((state.solvent(k) - limit.solvent(k)).abs());
            for (a, b) in state.cell(k).iter().zip(limit.cell(k)) {
                gap = gap.max((a - b).abs());
            }
        }
        out.push(GapRecord { step, time: run.steps[step].time, h_rel: run.steps[step].energy.total - h_inf, u_gap_inf: gap });
    }
    Ok(out)
}
