//! Run configuration: flat model keys plus one optional table per command.

use std::path::Path;

use hscd_core::stationary::SweepAxis;
use hscd_core::{compute_coefficients, Coefficients, Dimension, ModelParams, Potential, Problem};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub d: u32,
    pub eps_r: f64,
    pub eps_b: f64,
    #[serde(rename = "D_r")]
    pub d_r: f64,
    #[serde(rename = "D_b")]
    pub d_b: f64,
    #[serde(rename = "N_r")]
    pub n_r: f64,
    #[serde(rename = "N_b")]
    pub n_b: f64,
    /// Slope of the linear potential of the red species.
    pub v_r: f64,
    pub v_b: f64,
    #[serde(default = "default_x_lo")]
    pub x_lo: f64,
    #[serde(default = "default_x_hi")]
    pub x_hi: f64,
    pub n_cells: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_ref: Option<f64>,
    #[serde(default)]
    pub equilibrium: EquilibriumSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolve: Option<EvolveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub stability: StabilitySection,
}

fn default_x_lo() -> f64 {
    -0.5
}

fn default_x_hi() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumSection {
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    /// Also run the long-time route and report the discrepancy.
    #[serde(default)]
    pub compare: bool,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

impl Default for EquilibriumSection {
    fn default() -> Self {
        Self {
            newton_tol: default_newton_tol(),
            compare: false,
            t_max: default_t_max(),
        }
    }
}

fn default_newton_tol() -> f64 {
    1e-8
}

fn default_t_max() -> f64 {
    1e4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Uniform,
    PointParticle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveSection {
    pub t_end: f64,
    #[serde(default = "default_initial")]
    pub initial: InitialState,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    /// Write a profile every this many accepted steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    #[serde(default)]
    pub stop_when_stationary: bool,
    /// Step of the regularized scheme.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_initial() -> InitialState {
    InitialState::Uniform
}

fn default_rtol() -> f64 {
    1e-6
}

fn default_atol() -> f64 {
    1e-8
}

fn default_tau() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    #[serde(default = "default_count")]
    pub count: usize,
    /// Use the full linearization instead of the gradient-flow pencil.
    #[serde(default)]
    pub perturbed: bool,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            count: default_count(),
            perturbed: false,
        }
    }
}

fn default_count() -> usize {
    20
}

/// A parsed config together with its validated model.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub raw: String,
    pub problem: Problem,
}

impl Config {
    pub fn params(&self) -> Result<ModelParams, CliError> {
        let dim = Dimension::try_from(self.d).map_err(|e| CliError::Config(e.to_string()))?;
        let params = ModelParams {
            dim,
            eps_r: self.eps_r,
            eps_b: self.eps_b,
            d_r: self.d_r,
            d_b: self.d_b,
            n_r: self.n_r,
            n_b: self.n_b,
            potential_r: Potential::linear(self.v_r),
            potential_b: Potential::linear(self.v_b),
            x_lo: self.x_lo,
            x_hi: self.x_hi,
        };
        params
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(params)
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        let params = self.params()?;
        let coeffs: Coefficients =
            compute_coefficients(&params, self.eps_ref.unwrap_or(params.default_eps_ref()))
                .map_err(|e| CliError::Config(e.to_string()))?;
        Problem::with_coefficients(params, coeffs, self.n_cells)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    fn validate_sections(&self) -> Result<(), CliError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("equilibrium.newton_tol", self.equilibrium.newton_tol)?;
        positive("equilibrium.t_max", self.equilibrium.t_max)?;
        if let Some(e) = &self.evolve {
            positive("evolve.t_end", e.t_end)?;
            positive("evolve.rtol", e.rtol)?;
            positive("evolve.atol", e.atol)?;
            positive("evolve.tau", e.tau)?;
            if e.snapshot_every == Some(0) {
                return Err(CliError::Config(
                    "evolve.snapshot_every must be at least 1".into(),
                ));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() || s.values.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Config(
                    "sweep.values must be a non-empty list of numbers".into(),
                ));
            }
        }
        if self.stability.count == 0 {
            return Err(CliError::Config(
                "stability.count must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

pub fn parse(raw: &str) -> Result<Config, CliError> {
    let config: Config = toml::from_str(raw).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate_sections()?;
    Ok(config)
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = parse(&raw)?;
    let problem = config.problem()?;
    Ok(Loaded {
        config,
        raw,
        problem,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
d = 2
eps_r = 0.01
eps_b = 0.01
D_r = 1.0
D_b = 1.0
N_r = 200.0
N_b = 200.0
v_r = 2.0
v_b = 1.0
n_cells = 200

[sweep]
axis = "theta_r"
values = [0.0, 1e-5]
"#;

    #[test]
    fn parses_flat_keys_and_sections() {
        let c = parse(EXAMPLE).unwrap();
        assert_eq!((c.x_lo, c.x_hi), (-0.5, 0.5));
        assert_eq!(c.sweep.as_ref().unwrap().axis, SweepAxis::ThetaR);
        let p = c.problem().unwrap();
        assert!(p.params.is_symmetric());
        assert_eq!(p.n_nodes(), 201);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = EXAMPLE.replace("eps_b = 0.01", "eps_blue = 0.01");
        assert!(matches!(parse(&bad), Err(CliError::Config(_))));
        let bad = format!("{EXAMPLE}\n[stability]\ncuont = 3\n");
        assert!(matches!(parse(&bad), Err(CliError::Config(_))));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let c = parse(&EXAMPLE.replace("d = 2", "d = 4")).unwrap();
        assert!(matches!(c.problem(), Err(CliError::Config(_))));
        let c = parse(&EXAMPLE.replace("N_r = 200.0", "N_r = -1.0")).unwrap();
        assert!(matches!(c.problem(), Err(CliError::Config(_))));
        assert!(parse(&EXAMPLE.replace("values = [0.0, 1e-5]", "values = []")).is_err());
    }
}
