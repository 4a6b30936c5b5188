//! Finite-volume solver for the moment systems: WENO2 reconstruction in
//! characteristic variables, global Lax-Friedrichs fluxes, a realizability
//! limiter, Heun time stepping for the flux and a DG-in-time source solve,
//! combined by Strang splitting.

pub mod primitives;
mod solver;

pub use primitives::{
    dg_source_step, is_admissible, lax_friedrichs_flux, limiter_theta, realizability_limit, weno2_slope, DgTime,
    NewtonOptions, WenoParams,
};
pub use solver::{
    characteristic_reconstruct, flux_step, run, source_half_step, stable_dt, strang_step, thermal_boundary_flux,
    Boundary, MomentField, RunOutput, RunSummary, SolverConfig, StepStats,
};
