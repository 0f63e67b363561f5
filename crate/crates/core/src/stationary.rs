//! Stationary states by constrained entropy minimization and by long-time
//! evolution, their comparison, and parameter sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{GridField, Problem, SystemState};
use crate::entropy::{EntropyDensity, EntropyKind};
use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::model::{Coefficients, ModelParams};
use crate::timestepper::{integrate_mol, MolOptions, SolverStats};

/// The `eps = 0` equilibrium `(C_r e^{-V_r}, C_b e^{-V_b})` with trapezoid masses.
pub fn equilibrium_point_particle(problem: &Problem) -> SystemState {
    let grid = &problem.grid;
    let profile = |v: &[f64], mass: f64| -> GridField {
        // shift by the minimum so steep potentials cannot overflow
        let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
        let e: Vec<f64> = v.iter().map(|x| (vmin - x).exp()).collect();
        let c = mass / grid.integrate(&e);
        e.into_iter().map(|x| c * x).collect()
    };
    SystemState::new(
        profile(&problem.v_r, problem.params.n_r),
        profile(&problem.v_b, problem.params.n_b),
        0.0,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Stop once the weighted L2 norm of the full residual is at most this.
    pub tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Densities are clipped from below at this value during line search.
    pub floor: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iterations: 25,
            max_halvings: 40,
            floor: 1e-14,
        }
    }
}

/// Constrained entropy minimizer: `r_inf`, `b_inf` with constant entropy
/// variables `chi_r`, `chi_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryResult {
    pub r_inf: GridField,
    pub b_inf: GridField,
    pub chi_r: f64,
    pub chi_b: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl StationaryResult {
    pub fn state(&self) -> SystemState {
        SystemState::new(self.r_inf.clone(), self.b_inf.clone(), 0.0)
    }
}

/// Nodal rows `grad h(r_i, b_i) - chi` and the two mass rows.
pub struct StationarySystem<'a> {
    problem: &'a Problem,
    density: EntropyDensity,
}

impl<'a> StationarySystem<'a> {
    pub fn new(problem: &'a Problem) -> Result<Self> {
        Ok(Self {
            problem,
            density: EntropyDensity::new(problem, EntropyKind::GeneralEps)?,
        })
    }

    /// Residual `(nodal rows interleaved, mass rows)`.
    pub fn residual(&self, s: &SystemState, chi: [f64; 2]) -> (Vec<f64>, [f64; 2]) {
        let p = self.problem;
        let nodal = (0..s.len())
            .flat_map(|i| {
                let g = self.density.gradient(s.r[i], s.b[i], p.v_r[i], p.v_b[i]);
                [g[0] - chi[0], g[1] - chi[1]]
            })
            .collect();
        let mass = [
            s.mass_r(&p.grid) - p.params.n_r,
            s.mass_b(&p.grid) - p.params.n_b,
        ];
        (nodal, mass)
    }

    /// `sqrt(sum_i w_i |F_i|^2 + |mass|^2)`.
    pub fn norm(&self, nodal: &[f64], mass: [f64; 2]) -> f64 {
        let w = self.problem.weights();
        let s: f64 = w
            .iter()
            .enumerate()
            .map(|(i, wi)| wi * (nodal[2 * i].powi(2) + nodal[2 * i + 1].powi(2)))
            .sum();
        (s + mass[0] * mass[0] + mass[1] * mass[1]).sqrt()
    }

    /// Nodal Hessian blocks; the Jacobian is `diag(H_i)` bordered by `-I`
    /// columns and `w_i I` mass rows.
    pub fn hessians(&self, s: &SystemState) -> Vec<Mat2> {
        (0..s.len())
            .map(|i| self.density.hessian(s.r[i], s.b[i]))
            .collect()
    }

    /// Newton step from the Schur complement of the bordered block system.
    fn step(
        &self,
        s: &SystemState,
        nodal: &[f64],
        mass: [f64; 2],
    ) -> Result<(Vec<[f64; 2]>, [f64; 2])> {
        let w = self.problem.weights();
        let hinv: Vec<Mat2> = self
            .hessians(s)
            .iter()
            .enumerate()
            .map(|(i, h)| h.inverse().ok_or(Error::SingularMatrix { column: 2 * i }))
            .collect::<Result<_>>()?;
        // ds_i = H_i^{-1}(-F_i + dchi); sum w_i ds_i = -mass
        let mut schur = Mat2::ZERO;
        let mut rhs = [-mass[0], -mass[1]];
        for (i, hi) in hinv.iter().enumerate() {
            schur = schur.add(&hi.scale(w[i]));
            let t = hi.mul_vec([nodal[2 * i], nodal[2 * i + 1]]);
            rhs[0] += w[i] * t[0];
            rhs[1] += w[i] * t[1];
        }
        let dchi = schur
            .inverse()
            .ok_or(Error::SingularMatrix {
                column: 2 * s.len(),
            })?
            .mul_vec(rhs);
        let ds = hinv
            .iter()
            .enumerate()
            .map(|(i, hi)| hi.mul_vec([dchi[0] - nodal[2 * i], dchi[1] - nodal[2 * i + 1]]))
            .collect();
        Ok((ds, dchi))
    }
}

/// Damped Newton for the constrained minimizer of the order-`eps^d` entropy,
/// started from the point-particle equilibrium.
pub fn solve_entropy_stationary(
    problem: &Problem,
    opts: &NewtonOptions,
) -> Result<StationaryResult> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("must be positive, got {}", opts.tol),
        });
    }
    let sys = StationarySystem::new(problem)?;
    let mut s = equilibrium_point_particle(problem);
    let w = problem.weights();
    let total: f64 = w.iter().sum();
    let mut chi = [0.0; 2];
    {
        let (nodal, _) = sys.residual(&s, chi);
        for (k, c) in chi.iter_mut().enumerate() {
            *c = (0..s.len()).map(|i| w[i] * nodal[2 * i + k]).sum::<f64>() / total;
        }
    }
    let (mut nodal, mut mass) = sys.residual(&s, chi);
    let mut norm = sys.norm(&nodal, mass);
    let mut iterations = 0;
    while norm > opts.tol {
        if iterations >= opts.max_iterations {
            return Err(Error::NewtonDivergence {
                iterations,
                residual: norm,
            });
        }
        iterations += 1;
        let (ds, dchi) = sys.step(&s, &nodal, mass)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial = SystemState::new(
                (0..s.len())
                    .map(|i| (s.r[i] + lambda * ds[i][0]).max(opts.floor))
                    .collect(),
                (0..s.len())
                    .map(|i| (s.b[i] + lambda * ds[i][1]).max(opts.floor))
                    .collect(),
                0.0,
            );
            let trial_chi = [chi[0] + lambda * dchi[0], chi[1] + lambda * dchi[1]];
            let (tn, tm) = sys.residual(&trial, trial_chi);
            let tnorm = sys.norm(&tn, tm);
            if tnorm.is_finite() && tnorm < norm {
                s = trial;
                chi = trial_chi;
                nodal = tn;
                mass = tm;
                norm = tnorm;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDivergence {
                iterations,
                residual: norm,
            });
        }
    }
    Ok(StationaryResult {
        r_inf: s.r,
        b_inf: s.b,
        chi_r: chi[0],
        chi_b: chi[1],
        residual_norm: norm,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongtimeOptions {
    pub t_max: f64,
    /// Stationary once `|rhs|_inf <= stationary_tol * max(N_r, N_b)`.
    pub stationary_tol: f64,
    pub mol: MolOptions,
}

impl Default for LongtimeOptions {
    fn default() -> Self {
        Self {
            t_max: 1e4,
            stationary_tol: 1e-10,
            mol: MolOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub state: SystemState,
    pub rhs_norm: f64,
    pub stats: SolverStats,
}

/// Evolves from `initial` (point-particle equilibrium by default) until the
/// semidiscrete right-hand side is negligible.
pub fn equilibrate_longtime(
    problem: &Problem,
    initial: Option<&SystemState>,
    opts: &LongtimeOptions,
) -> Result<Equilibrium> {
    let start = initial
        .cloned()
        .unwrap_or_else(|| equilibrium_point_particle(problem));
    let mol = MolOptions {
        stop_when_stationary: true,
        stationary_tol: opts.stationary_tol,
        ..opts.mol.clone()
    };
    let traj = integrate_mol(problem, &start, start.t + opts.t_max, &mol)?;
    if !traj.stationary {
        return Err(Error::NotStationary {
            t: traj.final_state.t,
            rhs_norm: traj.final_rhs_norm,
        });
    }
    Ok(Equilibrium {
        state: traj.final_state,
        rhs_norm: traj.final_rhs_norm,
        stats: traj.stats,
    })
}

/// L2 distances between two stationary states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteErrors {
    pub abs_err_r: f64,
    pub abs_err_b: f64,
    pub rel_err_r: f64,
    pub rel_err_b: f64,
}

impl RouteErrors {
    /// Errors of `exact` relative to the entropy minimizer `reference`.
    pub fn between(problem: &Problem, exact: &SystemState, reference: &SystemState) -> Self {
        let g = &problem.grid;
        let abs_err_r = g.l2_distance(&exact.r, &reference.r);
        let abs_err_b = g.l2_distance(&exact.b, &reference.b);
        Self {
            abs_err_r,
            abs_err_b,
            rel_err_r: abs_err_r / g.l2_norm(&reference.r),
            rel_err_b: abs_err_b / g.l2_norm(&reference.b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `eps^d (D_b a_br - D_r a_r)` at fixed diameters and `D_b`; `D_r` follows.
    ThetaR,
    /// Common diameter `eps_r = eps_b`.
    Epsilon,
}

impl SweepAxis {
    /// Parameters for one axis value.
    pub fn apply(self, base: &ModelParams, value: f64) -> Result<ModelParams> {
        let mut p = base.clone();
        match self {
            SweepAxis::Epsilon => {
                p.eps_r = value;
                p.eps_b = value;
            }
            SweepAxis::ThetaR => {
                let c = Coefficients::new(base)?;
                if !(c.e_r > 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "eps_r",
                        reason: "theta sweeps need nonzero diameters".into(),
                    });
                }
                p.d_r = (base.d_b * c.e_br - value) / c.e_r;
            }
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub n_cells: usize,
    pub newton: NewtonOptions,
    pub longtime: LongtimeOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            n_cells: 200,
            newton: NewtonOptions::default(),
            longtime: LongtimeOptions::default(),
        }
    }
}

/// One sweep point. On solver failure the error fields are NaN and `failure`
/// holds the message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub axis_value: f64,
    pub d_r: f64,
    pub eps: f64,
    pub abs_err_r: f64,
    pub abs_err_b: f64,
    pub rel_err_r: f64,
    pub rel_err_b: f64,
    pub newton_iterations: usize,
    pub newton_residual: f64,
    pub longtime_rhs_norm: f64,
    pub longtime_steps: usize,
    pub started_from_minimizer: bool,
    /// Largest relative mass change of the time route, over both species.
    pub mass_drift: f64,
    pub failure: Option<String>,
}

impl SweepRecord {
    pub fn errors(&self) -> RouteErrors {
        RouteErrors {
            abs_err_r: self.abs_err_r,
            abs_err_b: self.abs_err_b,
            rel_err_r: self.rel_err_r,
            rel_err_b: self.rel_err_b,
        }
    }
}

/// Both stationary routes for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteComparison {
    pub minimizer: StationaryResult,
    pub equilibrium: Equilibrium,
    pub errors: RouteErrors,
    /// The time route starts from the point-particle equilibrium unless that
    /// state leaves the admissible set, in which case it starts from the
    /// minimizer.
    pub started_from_minimizer: bool,
}

/// Whether every node has positive densities and a positive mobility margin.
pub fn is_admissible(problem: &Problem, state: &SystemState) -> bool {
    crate::mobility::is_positive_definite(problem, state).all()
}

pub fn compare_routes(problem: &Problem, opts: &SweepOptions) -> Result<RouteComparison> {
    let minimizer = solve_entropy_stationary(problem, &opts.newton)?;
    let started_from_minimizer = !is_admissible(problem, &equilibrium_point_particle(problem));
    let start = started_from_minimizer.then(|| minimizer.state());
    let equilibrium = equilibrate_longtime(problem, start.as_ref(), &opts.longtime)?;
    let errors = RouteErrors::between(problem, &equilibrium.state, &minimizer.state());
    Ok(RouteComparison {
        minimizer,
        equilibrium,
        errors,
        started_from_minimizer,
    })
}

fn sweep_point(
    base: &ModelParams,
    axis: SweepAxis,
    value: f64,
    opts: &SweepOptions,
) -> SweepRecord {
    let mut rec = SweepRecord {
        axis_value: value,
        d_r: base.d_r,
        eps: base.eps_r,
        abs_err_r: f64::NAN,
        abs_err_b: f64::NAN,
        rel_err_r: f64::NAN,
        rel_err_b: f64::NAN,
        newton_iterations: 0,
        newton_residual: f64::NAN,
        longtime_rhs_norm: f64::NAN,
        longtime_steps: 0,
        started_from_minimizer: false,
        mass_drift: f64::NAN,
        failure: None,
    };
    let outcome = axis.apply(base, value).and_then(|params| {
        rec.d_r = params.d_r;
        rec.eps = params.eps_r;
        let problem = Problem::new(params, opts.n_cells)?;
        compare_routes(&problem, opts).map(|cmp| (problem, cmp))
    });
    match outcome {
        Ok((problem, cmp)) => {
            let s = &cmp.equilibrium.state;
            let p = &problem.params;
            rec.mass_drift = ((s.mass_r(&problem.grid) - p.n_r) / p.n_r)
                .abs()
                .max(((s.mass_b(&problem.grid) - p.n_b) / p.n_b).abs());
            rec.abs_err_r = cmp.errors.abs_err_r;
            rec.abs_err_b = cmp.errors.abs_err_b;
            rec.rel_err_r = cmp.errors.rel_err_r;
            rec.rel_err_b = cmp.errors.rel_err_b;
            rec.newton_iterations = cmp.minimizer.iterations;
            rec.newton_residual = cmp.minimizer.residual_norm;
            rec.longtime_rhs_norm = cmp.equilibrium.rhs_norm;
            rec.longtime_steps = cmp.equilibrium.stats.steps;
            rec.started_from_minimizer = cmp.started_from_minimizer;
        }
        Err(e) => rec.failure = Some(e.to_string()),
    }
    rec
}

/// Runs both routes for every value in parallel; records come back sorted by
/// axis value and failures are recorded rather than propagated.
pub fn sweep(
    base: &ModelParams,
    axis: SweepAxis,
    values: &[f64],
    opts: &SweepOptions,
) -> Vec<SweepRecord> {
    let mut records: Vec<SweepRecord> = values
        .par_iter()
        .map(|&v| sweep_point(base, axis, v, opts))
        .collect();
    records.sort_by(|a, b| a.axis_value.total_cmp(&b.axis_value));
    records
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::ShapeMismatch {
            expected: x.len().max(2),
            found: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::NonFinite {
            context: "log-log fit needs positive finite data",
        });
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
