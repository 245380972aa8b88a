//! Estimate-shaped measurements on flow trajectories. Every sup and inf runs
//! over unmasked points only.

mod ops;
mod series;

pub use ops::{
    c0_convergence_probe, curvature_bound_check, einstein_residual, frozen_scalar_residual, local_lowerbound_check,
    monotonicity_check, monotonicity_series, monotonicity_violation, negative_part_functional, negative_part_of,
    scalar_evolution_residual,
};
pub use series::{linear_fit, loglog_slope, DiagnosticsSeries};
