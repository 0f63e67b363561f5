use thiserror::Error;

/// Species label used in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Species {
    Red,
    Blue,
}

impl std::fmt::Display for Species {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Species::Red => f.write_str("r"),
            Species::Blue => f.write_str("b"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("operation requires equal diameters and diffusivities")]
    AsymmetricParameters,

    #[error("field length {found} does not match grid with {expected} nodes")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("density {species} is not positive at node {node} (value {value:e})")]
    NonPositiveDensity {
        species: Species,
        node: usize,
        value: f64,
    },

    #[error("state left the admissible set at node {node} (margin {margin:e})")]
    OutsideAdmissibleSet { node: usize, margin: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("matrix is singular (pivot column {column})")]
    SingularMatrix { column: usize },

    #[error(
        "Newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error(
        "entropy-gradient inversion did not converge (residual {residual:e}); try a smaller step"
    )]
    InversionFailed { residual: f64 },

    #[error("time step underflow at t = {t:e} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("no stationarity by t = {t:e}: |rhs|_inf = {rhs_norm:e}")]
    NotStationary { t: f64, rhs_norm: f64 },

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),
}

pub type Result<T> = std::result::Result<T, Error>;
