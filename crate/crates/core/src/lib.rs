//! Finite-volume solver for a degenerate Poisson-Nernst-Planck system with
//! size exclusion: admissible meshes, Scharfetter-Gummel type fluxes, a
//! backward Euler Newton solver, energy diagnostics and a convex dual
//! formulation of the steady state.

pub mod kernels;
pub mod mesh;
pub mod problem;
pub mod assembly;
pub mod diagnostics;
pub mod solver;
pub mod steady;
