//! Discrete Poisson operator, coupled backward Euler residual and its exact Jacobian.
//!
//! Unknowns are ordered cell-major by species, then all potentials:
//! `u_{i,K}` sits at `K * I + i` and `phi_K` at `I * n_cells + K`.

use crate::kernels::{face_flux_truncated, FaceData, KernelError, SideValues};
use crate::mesh::FaceKind;
use crate::problem::DiscreteProblem;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("singular system: {0}")]
    Singular(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("state does not match the problem: {0}")]
    Shape(String),
}

/// Species fractions (solvent excluded, cell-major) and cell potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub n_species: usize,
    pub fractions: Vec<f64>,
    pub potential: Vec<f64>,
}

impl State {
    pub fn new(n_species: usize, fractions: Vec<f64>, potential: Vec<f64>) -> Self {
        debug_assert_eq!(fractions.len(), n_species * potential.len());
        Self { n_species, fractions, potential }
    }

    pub fn n_cells(&self) -> usize {
        self.potential.len()
    }

    /// Fractions of species `1..=I` in cell `k`.
    pub fn cell(&self, k: usize) -> &[f64] {
        &self.fractions[k * self.n_species..(k + 1) * self.n_species]
    }

    /// `u_{0,K} = 1 - sum_i u_{i,K}`.
    pub fn solvent(&self, k: usize) -> f64 {
        1.0 - self.cell(k).iter().sum::<f64>()
    }

    /// Smallest fraction over all cells and all species including the solvent.
    pub fn min_fraction(&self) -> f64 {
        (0..self.n_cells())
            .map(|k| self.cell(k).iter().copied().fold(self.solvent(k), f64::min))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest fraction over all cells and all species including the solvent.
    pub fn max_fraction(&self) -> f64 {
        (0..self.n_cells())
            .map(|k| self.cell(k).iter().copied().fold(self.solvent(k), f64::max))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_unknowns(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.fractions.len() + self.potential.len());
        x.extend_from_slice(&self.fractions);
        x.extend_from_slice(&self.potential);
        x
    }

    pub fn from_unknowns(n_species: usize, x: &[f64]) -> Self {
        let n_cells = x.len() / (n_species + 1);
        let (u, phi) = x.split_at(n_species * n_cells);
        Self::new(n_species, u.to_vec(), phi.to_vec())
    }
}

/// Square sparse matrix in coordinate form. Repeated entries are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub n: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseOperator {
    pub fn new(n: usize) -> Self {
        Self { n, rows: Vec::new(), cols: Vec::new(), values: Vec::new() }
    }

    pub fn with_capacity(n: usize, nnz: usize) -> Self {
        Self {
            n,
            rows: Vec::with_capacity(nnz),
            cols: Vec::with_capacity(nnz),
            values: Vec::with_capacity(nnz),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        self.rows.push(row);
        self.cols.push(col);
        self.values.push(value);
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for ((&r, &c), &v) in self.rows.iter().zip(&self.cols).zip(&self.values) {
            y[r] += v * x[c];
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for ((&r, &c), &v) in self.rows.iter().zip(&self.cols).zip(&self.values) {
            a[r][c] += v;
        }
        a
    }
}

fn check_shape(problem: &DiscreteProblem, state: &State) -> Result<(), AssemblyError> {
    let n = problem.n_cells();
    if state.n_species != problem.n_species() || state.potential.len() != n || state.fractions.len() != n * problem.n_species() {
        return Err(AssemblyError::Shape(format!(
            "expected {} species on {} cells, got {} species on {} cells",
            problem.n_species(),
            n,
            state.n_species,
            state.potential.len()
        )));
    }
    Ok(())
}

/// `sum_sigma a_sigma (phi_K - phi_{K sigma})` per cell with the mirror values
/// `phi_L` (interior), `phi_K` (Neumann) and `phi^D_sigma` (Dirichlet).
pub fn potential_flux_sum(problem: &DiscreteProblem, phi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; problem.n_cells()];
    for (f, face) in problem.mesh().faces().iter().enumerate() {
        let a = face.transmissivity();
        match face.kind {
            FaceKind::Interior { k, l } => {
                let q = a * (phi[k] - phi[l]);
                out[k] += q;
                out[l] -= q;
            }
            FaceKind::Dirichlet { k } => out[k] += a * (phi[k] - problem.phi_dirichlet()[f]),
            FaceKind::Neumann { .. } => {}
        }
    }
    out
}

/// The symmetric operator `lambda^2 L`, where `(L phi)_K` is
/// [`potential_flux_sum`] with zero Dirichlet data.
pub fn electric_operator(problem: &DiscreteProblem) -> SparseOperator {
    let n = problem.n_cells();
    let l2 = problem.lambda_sq();
    let mut op = SparseOperator::with_capacity(n, 4 * problem.mesh().faces().len());
    for face in problem.mesh().faces() {
        let a = l2 * face.transmissivity();
        match face.kind {
            FaceKind::Interior { k, l } => {
                op.push(k, k, a);
                op.push(k, l, -a);
                op.push(l, l, a);
                op.push(l, k, -a);
            }
            FaceKind::Dirichlet { k } => op.push(k, k, a),
            FaceKind::Neumann { .. } => {}
        }
    }
    op
}

/// `m_K (f_K + sum_i z_i u_{i,K})`.
pub fn charge_load(problem: &DiscreteProblem, fractions: &[f64]) -> Vec<f64> {
    let ni = problem.n_species();
    let z = problem.charges();
    problem
        .mesh()
        .cells()
        .iter()
        .enumerate()
        .map(|(k, cell)| {
            let u = &fractions[k * ni..(k + 1) * ni];
            let charge: f64 = z.iter().zip(u).map(|(z, u)| z * u).sum();
            cell.measure * (problem.background()[k] + charge)
        })
        .collect()
}

/// Poisson system `lambda^2 L phi = m (f + sum z u) + lambda^2 sum_D a phi^D`.
pub fn assemble_poisson(problem: &DiscreteProblem, fractions: &[f64]) -> Result<(SparseOperator, Vec<f64>), AssemblyError> {
    if !problem.mesh().has_dirichlet_face() {
        return Err(AssemblyError::Singular("no Dirichlet face: the Poisson operator has a kernel".into()));
    }
    if fractions.len() != problem.n_cells() * problem.n_species() {
        return Err(AssemblyError::Shape(format!("{} fractions for {} cells", fractions.len(), problem.n_cells())));
    }
    let mut rhs = charge_load(problem, fractions);
    for (f, face) in problem.mesh().faces().iter().enumerate() {
        if let FaceKind::Dirichlet { k } = face.kind {
            rhs[k] += problem.lambda_sq() * face.transmissivity() * problem.phi_dirichlet()[f];
        }
    }
    Ok((electric_operator(problem), rhs))
}

fn face_data(problem: &DiscreteProblem, state: &State, a: f64, i: usize, k: usize, l: usize, u0: &[f64]) -> FaceData {
    let ni = problem.n_species();
    FaceData {
        transmissivity: a,
        diffusion: problem.diffusion()[i],
        charge: problem.charges()[i],
        k: SideValues { species: state.fractions[k * ni + i], solvent: u0[k], potential: state.potential[k] },
        l: SideValues { species: state.fractions[l * ni + i], solvent: u0[l], potential: state.potential[l] },
    }
}

/// Residual of one backward Euler step. Species rows carry
/// `m_K (u^new - u^old) + tau sum_sigma F_{i,K sigma}` with truncated fluxes,
/// potential rows `lambda^2 sum_sigma a (phi_K - phi_{K sigma}) - m_K (f_K + sum z u)`.
pub fn transient_residual(
    problem: &DiscreteProblem,
    state_new: &State,
    state_old: &State,
    tau: f64,
) -> Result<Vec<f64>, AssemblyError> {
    check_shape(problem, state_new)?;
    check_shape(problem, state_old)?;
    let n = problem.n_cells();
    let ni = problem.n_species();
    let mut r = vec![0.0; (ni + 1) * n];
    let u0: Vec<f64> = (0..n).map(|k| state_new.solvent(k)).collect();

    for (k, cell) in problem.mesh().cells().iter().enumerate() {
        for i in 0..ni {
            let idx = k * ni + i;
            r[idx] = cell.measure * (state_new.fractions[idx] - state_old.fractions[idx]);
        }
    }
    for face in problem.mesh().faces() {
        if let FaceKind::Interior { k, l } = face.kind {
            let a = face.transmissivity();
            for i in 0..ni {
                let flux = tau * face_flux_truncated(problem.kernel(), &face_data(problem, state_new, a, i, k, l, &u0))?;
                r[k * ni + i] += flux;
                r[l * ni + i] -= flux;
            }
        }
    }

    let lap = potential_flux_sum(problem, &state_new.potential);
    let load = charge_load(problem, &state_new.fractions);
    for k in 0..n {
        r[ni * n + k] = problem.lambda_sq() * lap[k] - load[k];
    }
    Ok(r)
}

fn pos(x: f64) -> f64 {
    x.max(0.0)
}

/// Subgradient of the positive part, with value 1 at zero.
fn pos_slope(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Exact Jacobian of [`transient_residual`] with respect to the unknown vector.
/// Every structural entry is emitted even when zero, so the pattern depends
/// only on the mesh and the number of species.
pub fn transient_jacobian(
    problem: &DiscreteProblem,
    state_new: &State,
    state_old: &State,
    tau: f64,
) -> Result<SparseOperator, AssemblyError> {
    check_shape(problem, state_new)?;
    check_shape(problem, state_old)?;
    let n = problem.n_cells();
    let ni = problem.n_species();
    let n_interior = problem.mesh().faces().iter().filter(|f| !f.kind.is_boundary()).count();
    let mut jac = SparseOperator::with_capacity(
        (ni + 1) * n,
        n * ni + n_interior * ni * (4 * ni + 4) + 4 * problem.mesh().faces().len() + n * ni,
    );
    let phi_col = |k: usize| ni * n + k;
    let u0: Vec<f64> = (0..n).map(|k| state_new.solvent(k)).collect();
    let kernel = problem.kernel();

    for (k, cell) in problem.mesh().cells().iter().enumerate() {
        for i in 0..ni {
            jac.push(k * ni + i, k * ni + i, cell.measure);
        }
    }

    for face in problem.mesh().faces() {
        let FaceKind::Interior { k, l } = face.kind else { continue };
        let a = face.transmissivity();
        let dphi = state_new.potential[l] - state_new.potential[k];
        for i in 0..ni {
            let scale = tau * a * problem.diffusion()[i];
            let z = problem.charges()[i];
            let y = z * dphi;
            let (b1, b2) = (kernel.value(y)?, kernel.value(-y)?);
            let (db1, db2) = (kernel.derivative(y)?, kernel.derivative(-y)?);
            let (uik, uil) = (state_new.fractions[k * ni + i], state_new.fractions[l * ni + i]);
            let (u0k, u0l) = (u0[k], u0[l]);

            // dF/du_jK = d_ij p'(u_iK) p(u_0L) B1 + p(u_iL) p'(u_0K) B2
            let via_solvent_k = scale * pos(uil) * pos_slope(u0k) * b2;
            let own_k = scale * pos_slope(uik) * pos(u0l) * b1;
            // dF/du_jL = -d_ij p'(u_iL) p(u_0K) B2 - p(u_iK) p'(u_0L) B1
            let via_solvent_l = -scale * pos(uik) * pos_slope(u0l) * b1;
            let own_l = -scale * pos_slope(uil) * pos(u0k) * b2;
            // dF/dphi_L = z (p p B'(y) + p p B'(-y)), dF/dphi_K = -dF/dphi_L
            let d_phi_l = scale * z * (pos(uik) * pos(u0l) * db1 + pos(uil) * pos(u0k) * db2);

            let (row_k, row_l) = (k * ni + i, l * ni + i);
            for j in 0..ni {
                let dk = via_solvent_k + if i == j { own_k } else { 0.0 };
                let dl = via_solvent_l + if i == j { own_l } else { 0.0 };
                jac.push(row_k, k * ni + j, dk);
                jac.push(row_k, l * ni + j, dl);
                jac.push(row_l, k * ni + j, -dk);
                jac.push(row_l, l * ni + j, -dl);
            }
            jac.push(row_k, phi_col(k), -d_phi_l);
            jac.push(row_k, phi_col(l), d_phi_l);
            jac.push(row_l, phi_col(k), d_phi_l);
            jac.push(row_l, phi_col(l), -d_phi_l);
        }
    }

    let op = electric_operator(problem);
    for ((&r, &c), &v) in op.rows.iter().zip(&op.cols).zip(&op.values) {
        jac.push(phi_col(r), phi_col(c), v);
    }
    for (k, cell) in problem.mesh().cells().iter().enumerate() {
        for i in 0..ni {
            jac.push(phi_col(k), k * ni + i, -cell.measure * problem.charges()[i]);
        }
    }
    Ok(jac)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::kernels::FluxKernel;
    use crate::mesh::AdmissibleMesh;
    use crate::problem::Species;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A small 1D problem with the given charges, constant data and the given Dirichlet values.
    pub(crate) fn line_problem(n: usize, charges: &[i32], lambda_sq: f64, u: &[f64], phi_d: (f64, f64)) -> DiscreteProblem {
        let mesh = AdmissibleMesh::interval(1.0, n).unwrap();
        let species: Vec<Species> = charges
            .iter()
            .enumerate()
            .map(|(i, &z)| Species { name: format!("u{}", i + 1), diffusion: 1.0 + 0.5 * i as f64, z })
            .collect();
        let mut phi_dirichlet = vec![0.0; n + 1];
        phi_dirichlet[0] = phi_d.0;
        phi_dirichlet[n] = phi_d.1;
        let initial = (0..n).flat_map(|_| u.iter().copied()).collect();
        DiscreteProblem::new(mesh, species, lambda_sq, vec![0.0; n], phi_dirichlet, initial, vec![0.1], FluxKernel::Bernoulli).unwrap()
    }

    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for cc in c..n {
                    a[r][cc] -= f * a[c][cc];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, ni: usize, phi_scale: f64) -> State {
        let mut fractions = Vec::with_capacity(n * ni);
        for _ in 0..n {
            // positive fractions with a positive solvent share
            let w: Vec<f64> = (0..=ni).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            fractions.extend(w[1..].iter().map(|x| x / s));
        }
        let potential = (0..n).map(|_| rng.gen_range(-phi_scale..phi_scale)).collect();
        State::new(ni, fractions, potential)
    }

    #[test]
    fn two_cell_poisson_system() {
        let p = line_problem(2, &[1], 1.0, &[0.5], (0.0, 0.0));
        let (op, rhs) = assemble_poisson(&p, p.initial_fractions()).unwrap();
        let a = op.to_dense();
        assert_eq!(a, vec![vec![6.0, -2.0], vec![-2.0, 6.0]]);
        assert_eq!(rhs, vec![0.25, 0.25]);
        let phi = solve_dense(a, rhs);
        assert_relative_eq!(phi[0], 0.0625, max_relative = 1e-15);
        assert_relative_eq!(phi[1], 0.0625, max_relative = 1e-15);
    }

    #[test]
    fn neutral_data_gives_constant_potential() {
        let p = line_problem(7, &[0, 0], 0.3, &[0.2, 0.1], (1.5, 1.5));
        let (op, rhs) = assemble_poisson(&p, p.initial_fractions()).unwrap();
        for v in solve_dense(op.to_dense(), rhs) {
            assert_relative_eq!(v, 1.5, max_relative = 1e-13);
        }
    }

    #[test]
    fn strong_boundary_data_gives_bounded_potential() {
        let mesh = AdmissibleMesh::interval(1.0, 32).unwrap();
        let u: Vec<f64> = mesh
            .cells()
            .iter()
            .flat_map(|c| [0.1 + 0.1 * c.center[0], 0.4])
            .collect();
        let species = vec![
            Species { name: "a".into(), diffusion: 1.0, z: 2 },
            Species { name: "b".into(), diffusion: 1.0, z: 1 },
        ];
        let mut phid = vec![0.0; 33];
        phid[0] = 10.0;
        let p = DiscreteProblem::new(mesh, species, 1e-2, vec![0.0; 32], phid, u, vec![1e-3], FluxKernel::Bernoulli).unwrap();
        let (op, rhs) = assemble_poisson(&p, p.initial_fractions()).unwrap();
        let phi = solve_dense(op.to_dense(), rhs);
        assert!(phi.iter().all(|v| v.is_finite() && v.abs() <= 50.0), "{phi:?}");
    }

    #[test]
    fn poisson_block_is_symmetric_with_dirichlet_row_sums() {
        let mesh = AdmissibleMesh::acute_unit_square(4, 4).unwrap().with_dirichlet_where(|p| p[1] > 1.0 - 1e-12);
        let n = mesh.n_cells();
        let nf = mesh.faces().len();
        let species = vec![Species { name: "a".into(), diffusion: 1.0, z: 1 }];
        let p = DiscreteProblem::new(mesh.clone(), species, 0.7, vec![0.0; n], vec![0.0; nf], vec![0.3; n], vec![1.0], FluxKernel::Bernoulli).unwrap();
        let a = electric_operator(&p).to_dense();
        for r in 0..n {
            for c in 0..n {
                assert_eq!(a[r][c], a[c][r]);
            }
            let row_sum: f64 = a[r].iter().sum();
            let expected: f64 = mesh.cells()[r]
                .faces
                .iter()
                .filter(|&&f| matches!(mesh.faces()[f].kind, FaceKind::Dirichlet { .. }))
                .map(|&f| 0.7 * mesh.faces()[f].transmissivity())
                .sum();
            assert!((row_sum - expected).abs() <= 1e-12 * a[r][r]);
        }
        // Cholesky succeeds
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    let d = a[i][i] - s;
                    assert!(d > 0.0, "pivot {i} is {d}");
                    l[i][j] = d.sqrt();
                } else {
                    l[i][j] = (a[i][j] - s) / l[j][j];
                }
            }
        }
    }

    #[test]
    fn constant_neutral_state_has_zero_residual() {
        let p = line_problem(6, &[1, -1], 0.5, &[0.2, 0.2], (0.0, 0.0));
        let s = State::new(2, p.initial_fractions().to_vec(), vec![0.0; 6]);
        let r = transient_residual(&p, &s, &s, 0.1).unwrap();
        assert!(r.iter().all(|&v| v == 0.0), "{r:?}");
    }

    #[test]
    fn single_face_residual_is_conservative() {
        let p = line_problem(2, &[2], 1.0, &[0.3], (0.0, 0.0));
        let s = State::new(1, vec![0.4, 0.1], vec![0.2, -0.5]);
        let r = transient_residual(&p, &s, &s, 0.25).unwrap();
        let face = p.mesh().faces()[1].clone();
        let flux = face_flux_truncated(
            FluxKernel::Bernoulli,
            &FaceData {
                transmissivity: face.transmissivity(),
                diffusion: 1.0,
                charge: 2.0,
                k: SideValues { species: 0.4, solvent: 0.6, potential: 0.2 },
                l: SideValues { species: 0.1, solvent: 0.9, potential: -0.5 },
            },
        )
        .unwrap();
        assert_eq!(r[0], 0.25 * flux);
        assert_eq!(r[1], -(0.25 * flux));
    }

    #[test]
    fn species_rows_sum_to_mass_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = line_problem(12, &[2, 1, -1], 0.1, &[0.1, 0.2, 0.3], (3.0, -1.0));
        let old = random_state(&mut rng, 12, 3, 2.0);
        let new = random_state(&mut rng, 12, 3, 2.0);
        let r = transient_residual(&p, &new, &old, 0.3).unwrap();
        let total_m: f64 = p.mesh().cells().iter().map(|c| c.measure).sum();
        for i in 0..3 {
            let sum: f64 = (0..12).map(|k| r[k * 3 + i]).sum();
            let dm: f64 = p
                .mesh()
                .cells()
                .iter()
                .enumerate()
                .map(|(k, c)| c.measure * (new.fractions[k * 3 + i] - old.fractions[k * 3 + i]))
                .sum();
            assert!((sum - dm).abs() <= 1e-14 * total_m, "{sum} vs {dm}");
        }
    }

    pub(crate) fn jacobian_fd_error(p: &DiscreteProblem, state: &State, tau: f64) -> f64 {
        let jac = transient_jacobian(p, state, state, tau).unwrap().to_dense();
        let x = state.to_unknowns();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let scale = jac.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for c in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let rp = transient_residual(p, &State::from_unknowns(state.n_species, &xp), state, tau).unwrap();
            let rm = transient_residual(p, &State::from_unknowns(state.n_species, &xm), state, tau).unwrap();
            for r in 0..x.len() {
                let fd = (rp[r] - rm[r]) / (2.0 * h);
                let err = (fd - jac[r][c]).abs() / (jac[r][c].abs().max(1e-3 * scale));
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kernel in [FluxKernel::Bernoulli, FluxKernel::Sqra] {
            let mut p = line_problem(5, &[2, 1, -1], 0.05, &[0.2, 0.2, 0.3], (1.0, 0.0));
            if kernel == FluxKernel::Sqra {
                p = crate::problem::DiscreteProblem::new(
                    p.mesh().clone(),
                    p.species().to_vec(),
                    p.lambda_sq(),
                    p.background().to_vec(),
                    p.phi_dirichlet().to_vec(),
                    p.initial_fractions().to_vec(),
                    p.time_steps().to_vec(),
                    kernel,
                )
                .unwrap();
            }
            for _ in 0..3 {
                let s = random_state(&mut rng, 5, 3, 1.5);
                let err = jacobian_fd_error(&p, &s, 0.2);
                assert!(err <= 1e-5, "{kernel:?}: {err}");
            }
        }
    }

    #[test]
    fn uncharged_species_rows_ignore_potential() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = line_problem(4, &[0, 0], 1.0, &[0.2, 0.3], (1.0, -1.0));
        let s = random_state(&mut rng, 4, 2, 3.0);
        let jac = transient_jacobian(&p, &s, &s, 0.5).unwrap().to_dense();
        for r in 0..8 {
            for c in 8..12 {
                assert_eq!(jac[r][c], 0.0);
            }
        }
    }

    #[test]
    fn zero_time_step_leaves_the_mass_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = line_problem(4, &[1, 2], 1.0, &[0.2, 0.3], (1.0, -1.0));
        let s = random_state(&mut rng, 4, 2, 3.0);
        let jac = transient_jacobian(&p, &s, &s, 0.0).unwrap().to_dense();
        for r in 0..8 {
            for c in 0..12 {
                let expected = if r == c { 0.25 } else { 0.0 };
                assert_eq!(jac[r][c], expected, "({r},{c})");
            }
        }
    }

    #[test]
    fn jacobian_pattern_is_state_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = line_problem(6, &[1, -1], 1.0, &[0.2, 0.3], (0.0, 0.0));
        let a = transient_jacobian(&p, &random_state(&mut rng, 6, 2, 1.0), &p_state(&p), 0.1).unwrap();
        let b = transient_jacobian(&p, &p_state(&p), &p_state(&p), 0.1).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.cols, b.cols);
    }

    fn p_state(p: &DiscreteProblem) -> State {
        State::new(p.n_species(), p.initial_fractions().to_vec(), vec![0.0; p.n_cells()])
    }
}
