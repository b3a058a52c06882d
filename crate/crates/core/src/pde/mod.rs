//! Finite-difference solver for the obstacle and penalized HJB equations
//! with atomic jump measures.

mod grid;
mod operators;
mod scheme;
mod surface;

pub use grid::{Level, SpaceGrid};
pub use operators::{argmin, diffusion_term, hamiltonian, local_operator, node_hamiltonians, nonlocal_b, nonlocal_c};
pub use scheme::{
    cfl_number, complementarity_residual, monotonicity_probe, solve_obstacle_hjb, solve_penalized_hjb, HjbConfig,
    MonotonicityReport,
};
pub use surface::{compare_surfaces, read_surface_csv, SurfaceDiff, SurfaceMode, ValueSurface};
