//! The h-flow engine: DeTurck vector, right-hand side, explicit stepping and
//! trajectory persistence.

mod deturck;
mod persist;
mod stepper;

pub use deturck::{deturck_vector, deturck_vector_with, hflow_rhs, hflow_rhs_with};
pub use persist::{read_trajectory, snapshot_name, write_trajectory, TrajectoryManifest, FLOW_CSV, MANIFEST};
pub use stepper::{
    choose_dt, eigen_ratio_range, freeze_weights, run_flow, run_flow_with, sigma_profile, step, volume_series,
    FlowState, FlowTrajectory, Scheme, StepControls, StepRecord, CLOSENESS_BAND,
};
