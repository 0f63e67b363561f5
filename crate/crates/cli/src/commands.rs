//! The four subcommands. Each one computes everything in memory and returns
//! the files to persist plus a JSON summary for the manifest.

use hscd_core::stability::{assemble_linearization, spectrum, Pencil};
use hscd_core::stationary::{
    compare_routes, equilibrate_longtime, equilibrium_point_particle, fit_loglog_slope,
    is_admissible, solve_entropy_stationary, sweep, LongtimeOptions, NewtonOptions, SweepAxis,
    SweepOptions,
};
use hscd_core::timestepper::{integrate_mol, run_regularized, MolOptions, RegularizedStepConfig};
use hscd_core::{GridField, Problem, SystemState};
use serde_json::{json, Value};

use crate::config::{InitialState, Loaded};
use crate::error::CliError;
use crate::output::{num, Bundle};
use crate::plots;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stepper {
    Mol,
    Regularized,
}

pub struct Report {
    pub bundle: Bundle,
    pub summary: Value,
    /// Lines echoed to stdout.
    pub lines: Vec<String>,
}

fn newton_options(loaded: &Loaded) -> NewtonOptions {
    NewtonOptions {
        tol: loaded.config.equilibrium.newton_tol,
        ..Default::default()
    }
}

fn longtime_options(loaded: &Loaded) -> LongtimeOptions {
    LongtimeOptions {
        t_max: loaded.config.equilibrium.t_max,
        ..Default::default()
    }
}

pub fn equilibrium(loaded: &Loaded) -> Result<Report, CliError> {
    let problem = &loaded.problem;
    let mut bundle = Bundle::default();
    let mut lines = Vec::new();
    let (minimizer, summary) = if loaded.config.equilibrium.compare {
        let opts = SweepOptions {
            n_cells: problem.grid.n_cells(),
            newton: newton_options(loaded),
            longtime: longtime_options(loaded),
        };
        let cmp = compare_routes(problem, &opts)?;
        bundle.add_profile("profile_longtime.csv", problem, &cmp.equilibrium.state)?;
        let e = cmp.errors;
        lines.push(format!(
            "route discrepancy: abs r {:.3e} b {:.3e}, rel r {:.3e} b {:.3e}",
            e.abs_err_r, e.abs_err_b, e.rel_err_r, e.rel_err_b
        ));
        let summary = json!({
            "errors": e,
            "longtime_rhs_norm": cmp.equilibrium.rhs_norm,
            "longtime_steps": cmp.equilibrium.stats.steps,
            "started_from_minimizer": cmp.started_from_minimizer,
        });
        (cmp.minimizer, summary)
    } else {
        (
            solve_entropy_stationary(problem, &newton_options(loaded))?,
            json!({}),
        )
    };
    let state = minimizer.state();
    bundle.add_profile("profile_minimizer.csv", problem, &state)?;
    bundle.add("plot_profiles.py", plots::PROFILES);
    let (mr, mb) = (state.mass_r(&problem.grid), state.mass_b(&problem.grid));
    lines.push(format!(
        "Newton converged in {} iterations, residual {:.3e}, masses {mr:.10} {mb:.10}",
        minimizer.iterations, minimizer.residual_norm
    ));
    let mut summary = summary;
    summary["newton"] = json!({
        "iterations": minimizer.iterations,
        "residual_norm": minimizer.residual_norm,
        "chi_r": minimizer.chi_r,
        "chi_b": minimizer.chi_b,
        "mass_r": mr,
        "mass_b": mb,
    });
    Ok(Report {
        bundle,
        summary,
        lines,
    })
}

fn initial_state(problem: &Problem, kind: InitialState) -> SystemState {
    match kind {
        InitialState::PointParticle => equilibrium_point_particle(problem),
        InitialState::Uniform => {
            let len = problem.grid.x_hi() - problem.grid.x_lo();
            SystemState::new(
                GridField::constant(&problem.grid, problem.params.n_r / len),
                GridField::constant(&problem.grid, problem.params.n_b / len),
                0.0,
            )
        }
    }
}

pub fn evolve(loaded: &Loaded, stepper: Stepper) -> Result<Report, CliError> {
    let problem = &loaded.problem;
    let section = loaded
        .config
        .evolve
        .as_ref()
        .ok_or_else(|| CliError::Config("the evolve command needs an [evolve] table".into()))?;
    let s0 = initial_state(problem, section.initial);
    let mut bundle = Bundle::default();
    let header = ["t", "mass_r", "mass_b", "E", "dissipation"];
    let (summary, lines) = match stepper {
        Stepper::Mol => {
            let opts = MolOptions {
                rtol: section.rtol,
                atol: section.atol,
                stop_when_stationary: section.stop_when_stationary,
                snapshot_every: section.snapshot_every,
                ..Default::default()
            };
            let traj = integrate_mol(problem, &s0, section.t_end, &opts)?;
            let rows = traj.records.iter().map(|r| {
                vec![
                    num(r.t),
                    num(r.mass_r),
                    num(r.mass_b),
                    num(r.entropy),
                    num(r.dissipation),
                ]
            });
            bundle.add_csv("trajectory.csv", &header, rows)?;
            if section.snapshot_every.is_some() {
                for (k, s) in traj.snapshots.iter().enumerate() {
                    bundle.add_profile(format!("snapshot_{k:04}.csv"), problem, s)?;
                }
            }
            bundle.add_profile("profile_final.csv", problem, &traj.final_state)?;
            let (dr, db) = traj.mass_drift();
            let summary = json!({
                "stepper": "mol",
                "t_final": traj.final_state.t,
                "stats": traj.stats,
                "stationary": traj.stationary,
                "final_rhs_norm": traj.final_rhs_norm,
                "max_entropy_increase": traj.max_entropy_increase(),
                "mass_drift": [dr, db],
            });
            let lines = vec![format!(
                "reached t = {:.6e} in {} steps ({} rejected), stationary: {}, mass drift {:.1e}/{:.1e}",
                traj.final_state.t,
                traj.stats.steps,
                traj.stats.rejected_error + traj.stats.rejected_newton,
                traj.stationary,
                dr,
                db
            )];
            (summary, lines)
        }
        Stepper::Regularized => {
            let cfg = RegularizedStepConfig::new(section.tau);
            let steps = (section.t_end / section.tau).round().max(1.0) as usize;
            let chain = run_regularized(problem, &s0, &cfg, steps)?;
            let first = vec![
                num(0.0),
                num(s0.mass_r(&problem.grid)),
                num(s0.mass_b(&problem.grid)),
                num(chain.initial_entropy),
                num(f64::NAN),
            ];
            let rows = std::iter::once(first).chain(chain.records.iter().map(|r| {
                vec![
                    num(r.t),
                    num(r.mass_r),
                    num(r.mass_b),
                    num(r.entropy),
                    num(r.dissipation),
                ]
            }));
            bundle.add_csv("trajectory.csv", &header, rows)?;
            let chain_rows = chain.records.iter().map(|r| {
                vec![
                    r.k.to_string(),
                    num(r.t),
                    num(r.entropy),
                    num(r.dissipation),
                    num(r.regularization),
                    num(r.d0),
                    num(r.potential_bound),
                    num(r.step_slack),
                    num(r.cumulative_slack),
                    r.newton_iterations.to_string(),
                ]
            });
            bundle.add_csv(
                "entropy_chain.csv",
                &[
                    "k",
                    "t",
                    "E",
                    "dissipation",
                    "regularization",
                    "d0",
                    "potential_bound",
                    "step_slack",
                    "cumulative_slack",
                    "newton_iterations",
                ],
                chain_rows,
            )?;
            bundle.add_profile("profile_final.csv", problem, &chain.final_state)?;
            let min_step = chain
                .records
                .iter()
                .map(|r| r.step_slack)
                .fold(f64::INFINITY, f64::min);
            let min_cum = chain
                .records
                .iter()
                .map(|r| r.cumulative_slack)
                .fold(f64::INFINITY, f64::min);
            let (dr, db) = chain.mass_drift(s0.mass_r(&problem.grid), s0.mass_b(&problem.grid));
            let summary = json!({
                "stepper": "regularized",
                "tau": section.tau,
                "steps": steps,
                "min_step_slack": min_step,
                "min_cumulative_slack": min_cum,
                "mass_drift": [dr, db],
            });
            let lines = vec![format!(
                "{steps} regularized steps of {:e}, smallest entropy-inequality slack {min_step:.3e}, cumulative {min_cum:.3e}",
                section.tau
            )];
            (summary, lines)
        }
    };
    bundle.add("plot_trajectory.py", plots::TRAJECTORY);
    bundle.add("plot_profiles.py", plots::PROFILES);
    Ok(Report {
        bundle,
        summary,
        lines,
    })
}

pub fn run_sweep(loaded: &Loaded) -> Result<Report, CliError> {
    let section = loaded
        .config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("the sweep command needs a [sweep] table".into()))?;
    let problem = &loaded.problem;
    let opts = SweepOptions {
        n_cells: problem.grid.n_cells(),
        newton: newton_options(loaded),
        longtime: longtime_options(loaded),
    };
    let records = sweep(&problem.params, section.axis, &section.values, &opts);
    let axis_name = match section.axis {
        SweepAxis::ThetaR => "theta_r",
        SweepAxis::Epsilon => "epsilon",
    };
    let mut bundle = Bundle::default();
    let rows = records.iter().map(|r| {
        vec![
            axis_name.to_string(),
            num(r.axis_value),
            num(r.d_r),
            num(r.eps),
            num(r.abs_err_r),
            num(r.abs_err_b),
            num(r.rel_err_r),
            num(r.rel_err_b),
            r.newton_iterations.to_string(),
            num(r.newton_residual),
            num(r.longtime_rhs_norm),
            r.longtime_steps.to_string(),
            r.started_from_minimizer.to_string(),
            num(r.mass_drift),
            r.failure.clone().unwrap_or_default(),
        ]
    });
    bundle.add_csv(
        "sweep.csv",
        &[
            "axis",
            "value",
            "D_r",
            "eps",
            "abs_err_r",
            "abs_err_b",
            "rel_err_r",
            "rel_err_b",
            "newton_iterations",
            "newton_residual",
            "longtime_rhs_norm",
            "longtime_steps",
            "started_from_minimizer",
            "mass_drift",
            "failure",
        ],
        rows,
    )?;
    bundle.add("plot_sweep.py", plots::SWEEP);
    let failures = records.iter().filter(|r| r.failure.is_some()).count();
    let mut lines = vec![format!("{} sweep points, {failures} failed", records.len())];
    let mut summary = json!({ "axis": axis_name, "points": records.len(), "failures": failures });
    if section.axis == SweepAxis::Epsilon {
        let ok: Vec<_> = records.iter().filter(|r| r.failure.is_none()).collect();
        let x: Vec<f64> = ok.iter().map(|r| r.axis_value).collect();
        let fit = |f: fn(&hscd_core::SweepRecord) -> f64| {
            fit_loglog_slope(&x, &ok.iter().map(|r| f(r)).collect::<Vec<_>>()).ok()
        };
        let (sr, sb) = (fit(|r| r.abs_err_r), fit(|r| r.abs_err_b));
        let show = |s: Option<f64>| s.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
        lines.push(format!(
            "log-log slope of abs error: r {}, b {}",
            show(sr),
            show(sb)
        ));
        summary["slope_abs_err_r"] = json!(sr);
        summary["slope_abs_err_b"] = json!(sb);
    }
    Ok(Report {
        bundle,
        summary,
        lines,
    })
}

pub fn stability(loaded: &Loaded) -> Result<Report, CliError> {
    let problem = &loaded.problem;
    let section = &loaded.config.stability;
    // the gradient-flow minimizer is the stationary state in the symmetric
    // case; otherwise evolve to the stationary state of the full system
    let minimizer = solve_entropy_stationary(problem, &newton_options(loaded))?;
    let state = if problem.params.is_symmetric() {
        minimizer.state()
    } else {
        let pp = equilibrium_point_particle(problem);
        let start = (!is_admissible(problem, &pp)).then(|| minimizer.state());
        equilibrate_longtime(problem, start.as_ref(), &longtime_options(loaded))?.state
    };
    let ops = assemble_linearization(problem, &state)?;
    let pencil = if section.perturbed {
        Pencil::Perturbed
    } else {
        Pencil::Unperturbed
    };
    let eig = spectrum(&ops, section.count, pencil)?;
    let mut bundle = Bundle::default();
    let rows = eig
        .eigenvalues
        .iter()
        .zip(&eig.imag)
        .enumerate()
        .map(|(i, (re, im))| vec![i.to_string(), num(*re), num(*im)]);
    bundle.add_csv("spectrum.csv", &["index", "eigenvalue", "imag"], rows)?;
    bundle.add_profile("profile_stationary.csv", problem, &state)?;
    bundle.add("plot_spectrum.py", plots::SPECTRUM);
    let stable = eig.eigenvalues.iter().all(|v| *v < 0.0) && eig.near_zero_count(1e-8) == 2;
    let verdict = if stable { "stable" } else { "unstable" };
    let summary = json!({
        "verdict": verdict,
        "pencil": pencil,
        "leading_eigenvalue": eig.leading(),
        "null_modes": eig.null_modes,
        "max_imag": eig.max_imag(),
        "operator_note": "the perturbed operator uses the analytic Jacobian of the semidiscrete right-hand side",
    });
    Ok(Report {
        bundle,
        summary,
        lines: vec![format!(
            "{verdict} (leading eigenvalue {:.6e})",
            eig.leading()
        )],
    })
}
