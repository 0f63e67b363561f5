//! Solvers for the two-species hard-sphere cross-diffusion system.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod discretization;
pub mod entropy;
pub mod error;
pub mod linalg;
pub mod mobility;
pub mod model;
pub mod stability;
pub mod stationary;
pub mod timestepper;

pub use discretization::{rhs, FluxField, FluxScheme, Grid1D, GridField, Problem, SystemState};
pub use entropy::{EntropyKind, EntropyVariables, ExpansionOrder};
pub use error::{Error, Result, Species};
pub use mobility::MobilityKind;
pub use model::{compute_coefficients, Coefficients, Dimension, ModelParams, Potential};
pub use stability::{assemble_linearization, spectrum, LinearizedOperators, Pencil, Spectrum};
pub use stationary::{
    compare_routes, equilibrate_longtime, equilibrium_point_particle, fit_loglog_slope,
    solve_entropy_stationary, sweep, LongtimeOptions, NewtonOptions, StationaryResult, SweepAxis,
    SweepOptions, SweepRecord,
};
pub use timestepper::{
    entropy_dissipation_report, integrate_mol, run_regularized, step_regularized_euler,
    EntropyReport, MolOptions, RegularizedStepConfig, Trajectory,
};
