//! Sparse direct solves, damped Newton per backward Euler step, and the time loop.

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_poisson, transient_jacobian, transient_residual, AssemblyError, SparseOperator, State};
use crate::diagnostics::{free_energy, EnergyReport};
use crate::kernels::KernelError;
use crate::mesh::FaceKind;
use crate::problem::DiscreteProblem;

/// Iterative refinement sweeps after the LU solve.
const REFINEMENT_STEPS: usize = 3;
/// Accepted relative residual of a linear solve.
const LINEAR_RESIDUAL_TOL: f64 = 1e-12;
/// Local positivity sweeps tried on a converged state before giving up.
const POSITIVITY_SWEEPS: usize = 200;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum SolverError {
    #[error("Newton did not converge in {iterations} iterations at step {step}; residual history {history:?}")]
    NonConvergence { step: usize, iterations: usize, history: Vec<f64> },
    #[error("damped Newton stalled at step {step}: no decrease down to step length {min_step:e}, residual {residual:e}")]
    Stall { step: usize, residual: f64, min_step: f64 },
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("converged state at step {step} is not positive: fraction {value:e} in cell {cell}")]
    Positivity { step: usize, cell: usize, value: f64 },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonOptions {
    /// Tolerance on the scaled residual sup-norm.
    pub tol_inf: f64,
    pub max_iters: usize,
    pub damping: bool,
    pub backtrack: f64,
    pub min_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol_inf: 1e-10, max_iters: 50, damping: true, backtrack: 0.5, min_step: (2f64).powi(-30) }
    }
}

struct Factorization {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    lu: SymbolicLu<usize>,
}

/// Sparse LU solver that keeps the symbolic analysis while the pattern is unchanged.
#[derive(Default)]
pub struct LinearSolver {
    cache: Option<Factorization>,
}

impl LinearSolver {
    pub fn new() -> Self {
        Self::default()
    }

    fn analyse(&mut self, op: &SparseOperator) -> Result<&Factorization, SolverError> {
        let fresh = match &self.cache {
            Some(f) => f.n != op.n || f.rows != op.rows || f.cols != op.cols,
            None => true,
        };
        if fresh {
            let pairs: Vec<Pair<usize, usize>> = op.rows.iter().zip(&op.cols).map(|(&r, &c)| Pair::new(r, c)).collect();
            let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(op.n, op.n, &pairs)
                .map_err(|e| SolverError::Singular(format!("invalid pattern: {e:?}")))?;
            let lu = SymbolicLu::try_new(symbolic.rb()).map_err(|e| SolverError::Singular(format!("symbolic LU failed: {e:?}")))?;
            self.cache = Some(Factorization { n: op.n, rows: op.rows.clone(), cols: op.cols.clone(), symbolic, argsort, lu });
        }
        Ok(self.cache.as_ref().expect("analysis was just stored"))
    }

    /// Solves `op x = rhs` by sparse LU with a few steps of iterative refinement.
    pub fn solve(&mut self, op: &SparseOperator, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        if rhs.len() != op.n {
            return Err(SolverError::Singular(format!("right-hand side of length {} for order {}", rhs.len(), op.n)));
        }
        let fact = self.analyse(op)?;
        let mat = SparseColMat::new_from_argsort(fact.symbolic.clone(), &fact.argsort, &op.values)
            .map_err(|e| SolverError::Singular(format!("{e:?}")))?;
        let lu = Lu::try_new_with_symbolic(fact.lu.clone(), mat.rb()).map_err(|e| SolverError::Singular(format!("LU failed: {e:?}")))?;

        let mut b = Mat::<f64>::from_fn(op.n, 1, |i, _| rhs[i]);
        lu.solve_in_place(b.as_mut());
        let mut x: Vec<f64> = (0..op.n).map(|i| b[(i, 0)]).collect();
        let rhs_norm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = LINEAR_RESIDUAL_TOL * (1.0 + rhs_norm);
        let mut res_norm = f64::INFINITY;
        for sweep in 0..=REFINEMENT_STEPS {
            let ax = op.apply(&x);
            let res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            res_norm = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !res_norm.is_finite() || res_norm <= tol * 1e-3 || sweep == REFINEMENT_STEPS {
                break;
            }
            let mut d = Mat::<f64>::from_fn(op.n, 1, |i, _| res[i]);
            lu.solve_in_place(d.as_mut());
            for (xi, i) in x.iter_mut().zip(0..) {
                *xi += d[(i, 0)];
            }
        }
        if !res_norm.is_finite() || x.iter().any(|v| !v.is_finite()) || res_norm > tol {
            return Err(SolverError::Singular(format!("residual {res_norm:e} exceeds {tol:e}")));
        }
        Ok(x)
    }
}

/// One-shot sparse direct solve.
pub fn linear_solve(op: &SparseOperator, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
    LinearSolver::new().solve(op, rhs)
}

/// Potential solving the Poisson equation for the given fractions.
pub fn solve_potential(problem: &DiscreteProblem, fractions: &[f64], linear: &mut LinearSolver) -> Result<Vec<f64>, SolverError> {
    let (op, rhs) = assemble_poisson(problem, fractions)?;
    linear.solve(&op, &rhs)
}

/// Sup-norm of the residual with species rows divided by `tau`, so that they
/// measure the conservation equation `m_K (u^n - u^{n-1}) / tau + sum F`.
pub fn scaled_residual_norm(problem: &DiscreteProblem, residual: &[f64], tau: f64) -> f64 {
    let split = problem.n_species() * problem.n_cells();
    let species = residual[..split].iter().fold(0.0f64, |m, v| m.max(v.abs())) / tau;
    let poisson = residual[split..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    species.max(poisson)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub state: State,
    /// Residual evaluations at accepted iterates, i.e. Newton updates plus one.
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// Solves one backward Euler step from `state_old` by damped Newton.
pub fn newton_step_solve(
    problem: &DiscreteProblem,
    state_old: &State,
    tau: f64,
    options: &NewtonOptions,
) -> Result<StepSolution, SolverError> {
    newton_step_with(problem, state_old, tau, options, &mut LinearSolver::new(), 1)
}

fn newton_step_with(
    problem: &DiscreteProblem,
    state_old: &State,
    tau: f64,
    options: &NewtonOptions,
    linear: &mut LinearSolver,
    step: usize,
) -> Result<StepSolution, SolverError> {
    let ni = problem.n_species();
    let potential = solve_potential(problem, &state_old.fractions, linear)?;
    let mut x = State::new(ni, state_old.fractions.clone(), potential).to_unknowns();
    let mut r = transient_residual(problem, &State::from_unknowns(ni, &x), state_old, tau)?;
    let mut norm = scaled_residual_norm(problem, &r, tau);
    let mut history = vec![norm];

    while !(norm <= options.tol_inf) {
        if history.len() > options.max_iters {
            return Err(SolverError::NonConvergence { step, iterations: history.len(), history });
        }
        let jac = transient_jacobian(problem, &State::from_unknowns(ni, &x), state_old, tau)?;
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = linear.solve(&jac, &neg)?;
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + alpha * d).collect();
            let evaluated = match transient_residual(problem, &State::from_unknowns(ni, &trial), state_old, tau) {
                Ok(rt) => Some((scaled_residual_norm(problem, &rt, tau), rt)),
                Err(AssemblyError::Kernel(KernelError::Overflow(_))) if options.damping => None,
                Err(e) => return Err(e.into()),
            };
            match evaluated {
                Some((nt, rt)) if !options.damping || nt < norm => {
                    x = trial;
                    r = rt;
                    norm = nt;
                    break;
                }
                _ => {
                    alpha *= options.backtrack;
                    if alpha < options.min_step {
                        return Err(SolverError::Stall { step, residual: norm, min_step: options.min_step });
                    }
                }
            }
        }
        history.push(norm);
    }

    let mut state = State::from_unknowns(ni, &x);
    if state.min_fraction() <= 0.0 {
        restore_positivity(problem, &mut state, state_old, tau)?;
        let r = transient_residual(problem, &state, state_old, tau)?;
        let polished = scaled_residual_norm(problem, &r, tau);
        if !(polished <= options.tol_inf) {
            return Err(SolverError::NonConvergence { step, iterations: history.len(), history });
        }
    }
    check_positive(&state, step)?;
    Ok(StepSolution { state, iterations: history.len(), residual_history: history })
}

fn check_positive(state: &State, step: usize) -> Result<(), SolverError> {
    for k in 0..state.n_cells() {
        let u0 = state.solvent(k);
        for &u in state.cell(k).iter().chain(std::iter::once(&u0)) {
            if !(u > 0.0 && u < 1.0) {
                return Err(SolverError::Positivity { step, cell: k, value: u });
            }
        }
    }
    Ok(())
}

/// Fixes round-off sign errors in fractions that the exact scheme keeps
/// positive but tiny (far from the support of the initial data).
///
/// For frozen neighbours and potential, the species row of cell `K` is linear
/// in `u_{i,K}` when the truncation is inactive, and its root
/// `(m u^old + tau sum aD u_L u_0K B(-y)) / (m + tau sum aD u_0L B(y))` is
/// nonnegative. Gauss-Seidel sweeps of this update over the non-positive
/// cells move them by round-off amounts only.
fn restore_positivity(problem: &DiscreteProblem, state: &mut State, old: &State, tau: f64) -> Result<(), SolverError> {
    let ni = problem.n_species();
    let mesh = problem.mesh();
    let kernel = problem.kernel();
    for _ in 0..POSITIVITY_SWEEPS {
        let mut clean = true;
        for (k, cell) in mesh.cells().iter().enumerate() {
            for i in 0..ni {
                if state.fractions[k * ni + i] > 0.0 {
                    continue;
                }
                clean = false;
                let u0k = state.solvent(k) + state.fractions[k * ni + i].min(0.0);
                let mut num = cell.measure * old.fractions[k * ni + i].max(0.0);
                let mut den = cell.measure;
                for &f in &cell.faces {
                    let face = &mesh.faces()[f];
                    let l = match face.kind {
                        FaceKind::Interior { k: a, l: b } => if a == k { b } else { a },
                        _ => continue,
                    };
                    let scale = tau * face.transmissivity() * problem.diffusion()[i];
                    let y = problem.charges()[i] * (state.potential[l] - state.potential[k]);
                    num += scale * state.fractions[l * ni + i].max(0.0) * u0k.max(0.0) * kernel.value(-y).map_err(AssemblyError::from)?;
                    den += scale * state.solvent(l).max(0.0) * kernel.value(y).map_err(AssemblyError::from)?;
                }
                state.fractions[k * ni + i] = num / den;
            }
        }
        if clean || state.min_fraction() > 0.0 {
            return Ok(());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeLoopOptions {
    pub newton: NewtonOptions,
    /// Keep every `stride`-th state (and the last); 0 keeps only the first and last.
    pub stride: usize,
}

impl Default for TimeLoopOptions {
    fn default() -> Self {
        Self { newton: NewtonOptions::default(), stride: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    /// Step length leading to this level (0 for the initial level).
    pub tau: f64,
    /// 0 for the initial level.
    pub newton_iterations: usize,
    pub energy: EnergyReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeLoopResult {
    /// One record per time level `0..=N`.
    pub steps: Vec<StepRecord>,
    /// Levels whose states are kept, increasing.
    pub step_indices: Vec<usize>,
    pub states: Vec<State>,
    pub cell_measures: Vec<f64>,
}

impl TimeLoopResult {
    pub fn times(&self) -> Vec<f64> {
        self.step_indices.iter().map(|&n| self.steps[n].time).collect()
    }

    pub fn final_state(&self) -> &State {
        self.states.last().expect("a run always keeps its last state")
    }
}

/// The initial state: discretized fractions with the matching potential.
pub fn initial_state(problem: &DiscreteProblem) -> Result<State, SolverError> {
    let fractions = problem.initial_fractions().to_vec();
    let potential = solve_potential(problem, &fractions, &mut LinearSolver::new())?;
    Ok(State::new(problem.n_species(), fractions, potential))
}

/// Marches the whole time grid of `problem`.
pub fn run_transient(problem: &DiscreteProblem, options: &TimeLoopOptions) -> Result<TimeLoopResult, SolverError> {
    run_transient_with(problem, options, |_, _, _| {})
}

/// Like [`run_transient`], calling `observer(step, time, state)` on every
/// accepted level including the initial one.
pub fn run_transient_with(
    problem: &DiscreteProblem,
    options: &TimeLoopOptions,
    mut observer: impl FnMut(usize, f64, &State),
) -> Result<TimeLoopResult, SolverError> {
    let mut linear = LinearSolver::new();
    let mut state = initial_state(problem)?;
    let n_steps = problem.time_steps().len();
    let keep = |n: usize| n == 0 || n == n_steps || (options.stride > 0 && n.is_multiple_of(options.stride));

    let mut result = TimeLoopResult {
        steps: Vec::with_capacity(n_steps + 1),
        step_indices: Vec::new(),
        states: Vec::new(),
        cell_measures: problem.mesh().cells().iter().map(|c| c.measure).collect(),
    };
    let mut time = 0.0;
    result.steps.push(StepRecord { step: 0, time, tau: 0.0, newton_iterations: 0, energy: free_energy(problem, &state) });
    observer(0, time, &state);
    result.step_indices.push(0);
    result.states.push(state.clone());

    for (idx, &tau) in problem.time_steps().iter().enumerate() {
        let n = idx + 1;
        let sol = newton_step_with(problem, &state, tau, &options.newton, &mut linear, n)?;
        state = sol.state;
        time += tau;
        result.steps.push(StepRecord { step: n, time, tau, newton_iterations: sol.iterations, energy: free_energy(problem, &state) });
        observer(n, time, &state);
        if keep(n) {
            result.step_indices.push(n);
            result.states.push(state.clone());
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::tests::line_problem;
    use crate::kernels::FluxKernel;
    use crate::mesh::AdmissibleMesh;
    use crate::problem::Species;
    use approx::assert_relative_eq;

    #[test]
    fn identity_operator_returns_rhs() {
        let mut op = SparseOperator::new(4);
        for i in 0..4 {
            op.push(i, i, 1.0);
        }
        let rhs = vec![1.0, -2.0, 3.5, 0.0];
        assert_eq!(linear_solve(&op, &rhs).unwrap(), rhs);
    }

    #[test]
    fn duplicate_entries_are_summed() {
        let mut op = SparseOperator::new(2);
        op.push(0, 0, 1.0);
        op.push(0, 0, 1.0);
        op.push(1, 1, 4.0);
        op.push(0, 1, 0.0);
        assert_eq!(linear_solve(&op, &[2.0, 2.0]).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn singular_system_is_reported() {
        let mut op = SparseOperator::new(2);
        op.push(0, 0, 1.0);
        op.push(0, 1, 1.0);
        op.push(1, 0, 1.0);
        op.push(1, 1, 1.0);
        assert!(matches!(linear_solve(&op, &[1.0, 0.0]), Err(SolverError::Singular(_))));
    }

    #[test]
    fn two_cell_poisson_solve() {
        let p = line_problem(2, &[1], 1.0, &[0.5], (0.0, 0.0));
        let phi = solve_potential(&p, p.initial_fractions(), &mut LinearSolver::new()).unwrap();
        assert_relative_eq!(phi[0], 0.0625, max_relative = 1e-15);
        assert_relative_eq!(phi[1], 0.0625, max_relative = 1e-15);
    }

    #[test]
    fn discrete_parabola() {
        // -phi'' = 1 with zero Dirichlet data: the scheme is exact at centers up to O(h^2)
        for n in [16usize, 32, 64] {
            let mesh = AdmissibleMesh::interval(1.0, n).unwrap();
            let centers: Vec<f64> = mesh.cells().iter().map(|c| c.center[0]).collect();
            let species = vec![Species { name: "a".into(), diffusion: 1.0, z: 0 }];
            let p = DiscreteProblem::new(mesh, species, 1.0, vec![1.0; n], vec![0.0; n + 1], vec![0.1; n], vec![1.0], FluxKernel::Bernoulli).unwrap();
            let phi = solve_potential(&p, p.initial_fractions(), &mut LinearSolver::new()).unwrap();
            let h = 1.0 / n as f64;
            let err = centers.iter().zip(&phi).map(|(x, v)| (v - x * (1.0 - x) / 2.0).abs()).fold(0.0, f64::max);
            assert!(err <= h * h, "n = {n}: {err}");
        }
    }

    #[test]
    fn equilibrium_converges_immediately() {
        let p = line_problem(8, &[1, -1], 0.5, &[0.2, 0.2], (0.0, 0.0));
        let old = State::new(2, p.initial_fractions().to_vec(), vec![0.0; 8]);
        let sol = newton_step_solve(&p, &old, 0.1, &NewtonOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.state.fractions, old.fractions);
    }

    #[test]
    fn symmetric_two_cell_problem_stays_symmetric() {
        let mesh = AdmissibleMesh::interval(1.0, 2).unwrap();
        let species = vec![
            Species { name: "a".into(), diffusion: 1.0, z: 1 },
            Species { name: "b".into(), diffusion: 2.0, z: -2 },
        ];
        let p = DiscreteProblem::new(mesh, species, 0.2, vec![0.1, 0.1], vec![0.5, 0.0, 0.5], vec![0.3, 0.1, 0.3, 0.1], vec![0.05; 20], FluxKernel::Bernoulli).unwrap();
        let run = run_transient(&p, &TimeLoopOptions::default()).unwrap();
        for s in &run.states {
            assert!((s.fractions[0] - s.fractions[2]).abs() <= 1e-13);
            assert!((s.fractions[1] - s.fractions[3]).abs() <= 1e-13);
            assert!((s.potential[0] - s.potential[1]).abs() <= 1e-13);
        }
    }

    #[test]
    fn short_run_conserves_mass_and_decays_energy() {
        let mesh = AdmissibleMesh::interval(1.0, 32).unwrap();
        let u: Vec<f64> = mesh.cells().iter().flat_map(|c| [0.1 + 0.1 * c.center[0], 0.4]).collect();
        let species = vec![
            Species { name: "a".into(), diffusion: 1.0, z: 2 },
            Species { name: "b".into(), diffusion: 1.0, z: 1 },
        ];
        let mut phid = vec![0.0; 33];
        phid[0] = 10.0;
        let p = DiscreteProblem::new(mesh, species, 1e-2, vec![0.0; 32], phid, u, vec![1e-3; 30], FluxKernel::Bernoulli).unwrap();
        let run = run_transient(&p, &TimeLoopOptions { stride: 0, ..Default::default() }).unwrap();
        assert_eq!(run.step_indices, vec![0, 30]);
        let m0 = run.steps[0].energy.masses.clone();
        for w in run.steps.windows(2) {
            let (prev, cur) = (&w[0], &w[1]);
            for (a, b) in cur.energy.masses.iter().zip(&m0) {
                assert!((a - b).abs() <= 1e-12);
            }
            let d = cur.energy.dissipation.unwrap();
            assert!(d >= -1e-14);
            assert!(cur.energy.total + cur.tau * d <= prev.energy.total + 1e-10);
            assert!((2..=8).contains(&cur.newton_iterations), "{}", cur.newton_iterations);
        }
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let p = line_problem(16, &[2, -1], 0.05, &[0.2, 0.3], (1.0, -1.0));
        let p = p.with_time_steps(vec![0.01; 5]).unwrap();
        let a = run_transient(&p, &TimeLoopOptions::default()).unwrap();
        let b = run_transient(&p, &TimeLoopOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn positivity_polish_handles_empty_regions() {
        // species 1 starts in the left half only; after a short step the far
        // right cells hold tiny positive amounts
        let n = 64;
        let mesh = AdmissibleMesh::interval(1.0, n).unwrap();
        let u: Vec<f64> = mesh.cells().iter().flat_map(|c| [if c.center[0] < 0.25 { 0.6 } else { 0.0 }, 0.2]).collect();
        let species = vec![
            Species { name: "a".into(), diffusion: 1.0, z: 1 },
            Species { name: "b".into(), diffusion: 1.0, z: -1 },
        ];
        let p = DiscreteProblem::new(mesh, species, 0.1, vec![0.0; n], vec![0.0; n + 1], u, vec![1e-4; 3], FluxKernel::Bernoulli).unwrap();
        let run = run_transient(&p, &TimeLoopOptions::default()).unwrap();
        for s in &run.states[1..] {
            assert!(s.min_fraction() > 0.0);
        }
    }
}
