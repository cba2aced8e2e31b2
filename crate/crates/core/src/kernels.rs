//! Scalar kernels of the two-point flux: the Bernoulli and SQRA fitting
//! functions, the logarithmic (Stolarsky) mean, and the face flux in its
//! direct, truncated, Slotboom and convection/diffusion forms.

use serde::{Deserialize, Serialize};

/// Largest kernel argument accepted before `exp` would overflow.
pub const MAX_KERNEL_ARGUMENT: f64 = 700.0;

/// Below this magnitude the Bernoulli function is evaluated by its Taylor series.
const BERNOULLI_SERIES_THRESHOLD: f64 = 1e-5;
/// Below this magnitude the Bernoulli derivative is evaluated by its Taylor series.
const BERNOULLI_DERIVATIVE_SERIES_THRESHOLD: f64 = 1e-3;
/// Relative gap below which the logarithmic mean uses its symmetric expansion.
const MEAN_EXPANSION_THRESHOLD: f64 = 1e-10;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel argument {0} exceeds the overflow guard |y| <= 700 (unscaled potentials?)")]
    Overflow(f64),
    #[error("{what} must be positive, got {value}")]
    Domain { what: &'static str, value: f64 },
}

/// Choice of the flux-fitting function `B` in the two-point flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluxKernel {
    /// `B(y) = y / (e^y - 1)`, the Scharfetter-Gummel choice.
    #[default]
    Bernoulli,
    /// `B(y) = e^{-y/2}`, the square-root approximation.
    Sqra,
}

impl FluxKernel {
    pub fn value(self, y: f64) -> Result<f64, KernelError> {
        match self {
            FluxKernel::Bernoulli => bernoulli(y),
            FluxKernel::Sqra => sqra(y),
        }
    }

    pub fn derivative(self, y: f64) -> Result<f64, KernelError> {
        match self {
            FluxKernel::Bernoulli => bernoulli_derivative(y),
            FluxKernel::Sqra => Ok(-0.5 * sqra(y)?),
        }
    }
}

fn guard(y: f64) -> Result<(), KernelError> {
    if y.abs() > MAX_KERNEL_ARGUMENT || y.is_nan() {
        Err(KernelError::Overflow(y))
    } else {
        Ok(())
    }
}

/// The Bernoulli function `y / (e^y - 1)` with `B(0) = 1`.
///
/// Small arguments use the series `1 - y/2 + y^2/12 - y^4/720`, larger ones
/// `y / expm1(y)`; the two branches agree to round-off at the seam.
pub fn bernoulli(y: f64) -> Result<f64, KernelError> {
    guard(y)?;
    if y.abs() < BERNOULLI_SERIES_THRESHOLD {
        let y2 = y * y;
        Ok(1.0 - 0.5 * y + y2 / 12.0 - y2 * y2 / 720.0)
    } else {
        Ok(y / y.exp_m1())
    }
}

/// Derivative of the Bernoulli function.
///
/// Uses `B'(y) = B(y) (1 - B(-y)) / y`, which follows from `B(-y) - B(y) = y`
/// and stays accurate for large `|y|` on both sides.
pub fn bernoulli_derivative(y: f64) -> Result<f64, KernelError> {
    guard(y)?;
    if y.abs() < BERNOULLI_DERIVATIVE_SERIES_THRESHOLD {
        let y2 = y * y;
        Ok(-0.5 + y / 6.0 - y * y2 / 180.0 + y * y2 * y2 / 5040.0)
    } else {
        Ok(bernoulli(y)? * (1.0 - bernoulli(-y)?) / y)
    }
}

/// The square-root-approximation kernel `e^{-y/2}`.
pub fn sqra(y: f64) -> Result<f64, KernelError> {
    guard(y)?;
    Ok((-0.5 * y).exp())
}

/// The mean `M(a, b) = (log(1/a) - log(1/b)) / (1/a - 1/b)`, `M(a, a) = a`.
///
/// Equivalently `ab / L(a, b)` with `L` the logarithmic mean; nearly equal
/// arguments use the symmetric expansion `L = s (1 - t^2/3 + ...)` with
/// `s = (a+b)/2`, `t = (b-a)/(a+b)`.
pub fn stolarsky_log_mean(a: f64, b: f64) -> Result<f64, KernelError> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(KernelError::Domain { what: "first mean argument", value: a });
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(KernelError::Domain { what: "second mean argument", value: b });
    }
    let gap = (b - a).abs();
    if gap < MEAN_EXPANSION_THRESHOLD * a.max(b) {
        let s = 0.5 * (a + b);
        let t = (b - a) / (a + b);
        return Ok(a * b * (1.0 + t * t / 3.0) / s);
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    Ok(a * b * ((hi - lo) / lo).ln_1p() / (hi - lo))
}

/// Volume fractions and potential on one side of a face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideValues {
    /// Fraction `u_i` of the transported species.
    pub species: f64,
    /// Solvent fraction `u_0`.
    pub solvent: f64,
    pub potential: f64,
}

/// Everything the two-point flux of one species across one interior face needs.
/// The flux is oriented from the `k` side to the `l` side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceData {
    pub transmissivity: f64,
    pub diffusion: f64,
    pub charge: f64,
    pub k: SideValues,
    pub l: SideValues,
}

impl FaceData {
    /// The same face seen from the other cell.
    pub fn swapped(&self) -> Self {
        Self { k: self.l, l: self.k, ..*self }
    }
}

/// `a D (u_iK u_0L B(z(phi_L - phi_K)) - u_iL u_0K B(z(phi_K - phi_L)))`.
pub fn face_flux(kernel: FluxKernel, face: &FaceData) -> Result<f64, KernelError> {
    flux_from_parts(
        kernel,
        face,
        face.k.species,
        face.k.solvent,
        face.l.species,
        face.l.solvent,
    )
}

/// [`face_flux`] with every volume fraction replaced by its positive part.
pub fn face_flux_truncated(kernel: FluxKernel, face: &FaceData) -> Result<f64, KernelError> {
    flux_from_parts(
        kernel,
        face,
        face.k.species.max(0.0),
        face.k.solvent.max(0.0),
        face.l.species.max(0.0),
        face.l.solvent.max(0.0),
    )
}

fn flux_from_parts(
    kernel: FluxKernel,
    face: &FaceData,
    ui_k: f64,
    u0_k: f64,
    ui_l: f64,
    u0_l: f64,
) -> Result<f64, KernelError> {
    let dphi = face.l.potential - face.k.potential;
    let forward = ui_k * u0_l * kernel.value(face.charge * dphi)?;
    let backward = ui_l * u0_k * kernel.value(-(face.charge * dphi))?;
    Ok(face.transmissivity * face.diffusion * (forward - backward))
}

/// Slotboom form `a D u_0K u_0L M(e^{-z phi_K}, e^{-z phi_L}) (w_K - w_L)` with
/// `w = (u_i / u_0) e^{z phi}`. Coincides with the Bernoulli [`face_flux`].
pub fn face_flux_slotboom(face: &FaceData) -> Result<f64, KernelError> {
    for (what, value) in [
        ("u_i on the K side", face.k.species),
        ("u_0 on the K side", face.k.solvent),
        ("u_i on the L side", face.l.species),
        ("u_0 on the L side", face.l.solvent),
    ] {
        if !(value > 0.0) {
            return Err(KernelError::Domain { what, value });
        }
    }
    let z = face.charge;
    let (zk, zl) = (z * face.k.potential, z * face.l.potential);
    guard(zk)?;
    guard(zl)?;
    let mean = stolarsky_log_mean((-zk).exp(), (-zl).exp())?;
    let w_k = face.k.species / face.k.solvent * zk.exp();
    let w_l = face.l.species / face.l.solvent * zl.exp();
    Ok(face.transmissivity * face.diffusion * face.k.solvent * face.l.solvent * mean * (w_k - w_l))
}

/// Convective and diffusive parts of the Bernoulli flux.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxSplit {
    pub convective: f64,
    pub diffusive: f64,
}

impl FluxSplit {
    pub fn total(&self) -> f64 {
        self.convective + self.diffusive
    }
}

/// Splits the Bernoulli flux into a centred convection term and a
/// symmetric diffusion term, using `B(-y) - B(y) = y`.
pub fn split_flux(face: &FaceData) -> Result<FluxSplit, KernelError> {
    let forward = face.k.species * face.l.solvent;
    let backward = face.l.species * face.k.solvent;
    let dphi = face.k.potential - face.l.potential;
    let y = face.charge * dphi;
    let scale = face.transmissivity * face.diffusion;
    let convective = scale * 0.5 * (forward + backward) * y;
    let diffusive = scale * 0.5 * (forward - backward) * (bernoulli(y)? + bernoulli(-y)?);
    Ok(FluxSplit { convective, diffusive })
}
