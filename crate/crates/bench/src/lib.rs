//! Shared fixtures for the benchmarks.

use hscd_core::stationary::{solve_entropy_stationary, NewtonOptions};
use hscd_core::{Dimension, ModelParams, Problem, SystemState};

/// Symmetric two-dimensional reference configuration on `n_cells` cells.
pub fn reference_problem(n_cells: usize) -> Problem {
    let params = ModelParams::symmetric(Dimension::Two, 0.01, 200.0, 200.0, 2.0, 1.0);
    Problem::new(params, n_cells).expect("reference configuration is valid")
}

/// Stationary state of [`reference_problem`].
pub fn reference_state(problem: &Problem) -> SystemState {
    solve_entropy_stationary(problem, &NewtonOptions::default())
        .expect("reference Newton solve converges")
        .state()
}
