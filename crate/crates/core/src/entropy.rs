//! Entropy functionals, entropy variables and the inverse of the entropy gradient.
//!
//! Every functional used here has a nodal density of the form
//!
//! ```text
//! L(r) + L(b) + r V_r + b V_b + q_rr r^2 / 2 + q_rb r b + q_bb b^2 / 2
//!     + tau (1 - g rho)(ln(1 - g rho) - 1)
//! ```
//!
//! with `L(s) = s ln s` for the plain entropies and `L(s) = s (ln s - 1)` for the
//! regularized one. Entropy variables drop the constant `+1` that `s ln s`
//! produces, so for every kind they read `ln r + q_rr r + q_rb b + V_r - tau g ln(1 - g rho)`.

use serde::{Deserialize, Serialize};

use crate::discretization::{GridField, Problem, SystemState};
use crate::error::{Error, Result, Species};
use crate::linalg::Mat2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionOrder {
    /// `E_0`: point particles.
    Leading,
    /// `E_0 + eps^d E_1`.
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyKind {
    Symmetric,
    GeneralEps,
    Expansion(ExpansionOrder),
    Regularized { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LogForm {
    SLogS,
    SLogSMinusS,
}

/// Nodal entropy density for one [`EntropyKind`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyDensity {
    pub q_rr: f64,
    pub q_rb: f64,
    pub q_bb: f64,
    /// Weight of the packing barrier, `tau * gamma_bar`.
    pub s: f64,
    pub gamma_bar: f64,
    form: LogForm,
}

impl EntropyDensity {
    pub fn new(problem: &Problem, kind: EntropyKind) -> Result<Self> {
        let c = &problem.coeffs;
        let general = (c.alpha * c.e_r, c.alpha * c.e_br, c.alpha * c.e_b);
        let (q, s, form) = match kind {
            EntropyKind::Symmetric => {
                require_symmetric(problem)?;
                (general, 0.0, LogForm::SLogS)
            }
            EntropyKind::GeneralEps | EntropyKind::Expansion(ExpansionOrder::First) => {
                (general, 0.0, LogForm::SLogS)
            }
            EntropyKind::Expansion(ExpansionOrder::Leading) => {
                ((0.0, 0.0, 0.0), 0.0, LogForm::SLogS)
            }
            EntropyKind::Regularized { tau } => {
                require_symmetric(problem)?;
                if !(tau >= 0.0 && tau.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "tau",
                        reason: format!("must be non-negative, got {tau}"),
                    });
                }
                (general, tau * c.gamma_bar, LogForm::SLogSMinusS)
            }
        };
        Ok(Self {
            q_rr: q.0,
            q_rb: q.1,
            q_bb: q.2,
            s,
            gamma_bar: c.gamma_bar,
            form,
        })
    }

    /// Symmetric regularized density with explicit `alpha_bar`, `gamma_bar`, `tau`.
    pub fn regularized(alpha_bar: f64, gamma_bar: f64, tau: f64) -> Self {
        Self {
            q_rr: alpha_bar,
            q_rb: alpha_bar,
            q_bb: alpha_bar,
            s: tau * gamma_bar,
            gamma_bar,
            form: LogForm::SLogSMinusS,
        }
    }

    fn has_barrier(&self) -> bool {
        self.s > 0.0 && self.gamma_bar > 0.0
    }

    /// `1 - gamma_bar rho`.
    pub fn margin(&self, r: f64, b: f64) -> f64 {
        1.0 - self.gamma_bar * (r + b)
    }

    fn log_term(&self, x: f64) -> f64 {
        let xlx = if x == 0.0 { 0.0 } else { x * x.ln() };
        match self.form {
            LogForm::SLogS => xlx,
            LogForm::SLogSMinusS => xlx - x,
        }
    }

    /// Density value; `0 ln 0 = 0`.
    pub fn value(&self, r: f64, b: f64, vr: f64, vb: f64) -> f64 {
        let mut e = self.log_term(r)
            + self.log_term(b)
            + r * vr
            + b * vb
            + 0.5 * self.q_rr * r * r
            + self.q_rb * r * b
            + 0.5 * self.q_bb * b * b;
        if self.s > 0.0 {
            let m = self.margin(r, b);
            let barrier = if m == 0.0 { 0.0 } else { m * (m.ln() - 1.0) };
            e += self.s / self.gamma_bar * barrier;
        }
        e
    }

    /// Entropy variables `(u, v)` at one node.
    pub fn gradient(&self, r: f64, b: f64, vr: f64, vb: f64) -> [f64; 2] {
        let barrier = if self.has_barrier() {
            -self.s * self.margin(r, b).ln()
        } else {
            0.0
        };
        [
            r.ln() + self.q_rr * r + self.q_rb * b + vr + barrier,
            b.ln() + self.q_rb * r + self.q_bb * b + vb + barrier,
        ]
    }

    pub fn hessian(&self, r: f64, b: f64) -> Mat2 {
        let k = if self.has_barrier() {
            self.s * self.gamma_bar / self.margin(r, b)
        } else {
            0.0
        };
        Mat2::new(
            1.0 / r + k + self.q_rr,
            k + self.q_rb,
            k + self.q_rb,
            1.0 / b + k + self.q_bb,
        )
    }

    /// Whether `(r, b)` lies where the gradient is defined.
    pub fn in_domain(&self, r: f64, b: f64) -> bool {
        r > 0.0 && b > 0.0 && (!self.has_barrier() || self.margin(r, b) > 0.0)
    }

    /// Solves `gradient(r, b) = (u, v)`.
    ///
    /// A scalar monotone equation for the total density gives the exact answer
    /// when the quadratic part is a multiple of `rho^2` and a starting point
    /// otherwise; damped Newton with the Hessian polishes the result.
    pub fn invert(&self, u: f64, v: f64, vr: f64, vb: f64) -> Result<[f64; 2]> {
        if !(u.is_finite() && v.is_finite()) {
            return Err(Error::NonFinite {
                context: "entropy variables",
            });
        }
        let (x, y) = (u - vr, v - vb);
        // ln K with K = e^x + e^y, computed without overflow
        let m = x.max(y);
        let ln_k = m + ((x - m).exp() + (y - m).exp()).ln();
        let q = (self.q_rr + 2.0 * self.q_rb + self.q_bb) / 4.0;
        let z = self.solve_total_density(ln_k, q)?;
        let bar = if self.has_barrier() {
            self.s * (1.0 - self.gamma_bar * z).ln()
        } else {
            0.0
        };
        let mut s = [(x - q * z + bar).exp(), (y - q * z + bar).exp()];
        let tol = 1e-12 * 1f64.max(u.abs()).max(v.abs());
        let residual = |s: [f64; 2]| {
            let g = self.gradient(s[0], s[1], vr, vb);
            [g[0] - u, g[1] - v]
        };
        let norm = |f: [f64; 2]| f[0].abs().max(f[1].abs());
        let mut f = residual(s);
        for _ in 0..100 {
            if norm(f) <= tol {
                return Ok(s);
            }
            let hinv = self
                .hessian(s[0], s[1])
                .inverse()
                .ok_or(Error::InversionFailed { residual: norm(f) })?;
            let d = hinv.mul_vec(f);
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = [s[0] - step * d[0], s[1] - step * d[1]];
                if self.in_domain(trial[0], trial[1]) {
                    let ft = residual(trial);
                    if norm(ft) < norm(f) || norm(ft) <= tol {
                        s = trial;
                        f = ft;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if norm(f) <= tol {
            Ok(s)
        } else {
            Err(Error::InversionFailed { residual: norm(f) })
        }
    }

    /// Root of `ln z - ln K + q z - s ln(1 - g z) = 0`, increasing in `z`.
    fn solve_total_density(&self, ln_k: f64, q: f64) -> Result<f64> {
        let barrier = self.has_barrier();
        let g = self.gamma_bar;
        let phi = |w: f64| {
            let z = w.exp();
            let mut val = w - ln_k + q * z;
            let mut der = 1.0 + q * z;
            if barrier {
                let m = 1.0 - g * z;
                if m <= 0.0 {
                    return (f64::INFINITY, f64::INFINITY);
                }
                val -= self.s * m.ln();
                der += self.s * g * z / m;
            }
            (val, der)
        };
        // bracket in w = ln z
        let mut hi = if barrier { ln_k.min(-g.ln()) } else { ln_k };
        if phi(hi).0 < 0.0 {
            // only possible when hi was cut at the packing limit
            hi = -g.ln();
        }
        let mut lo = hi - 1.0;
        while phi(lo).0 > 0.0 {
            lo -= 2.0 * (hi - lo);
            if lo < -1e4 {
                return Err(Error::InversionFailed {
                    residual: phi(lo).0,
                });
            }
        }
        let mut w = 0.5 * (lo + hi);
        for _ in 0..300 {
            let (val, der) = phi(w);
            if val == 0.0 {
                return Ok(w.exp());
            }
            if val > 0.0 {
                hi = w;
            } else {
                lo = w;
            }
            let step = val / der;
            if step.abs() <= 1e-16 * (1.0 + w.abs()) {
                break;
            }
            let newton = w - step;
            w = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (hi - lo) <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
                break;
            }
        }
        Ok(w.exp())
    }
}

fn require_symmetric(problem: &Problem) -> Result<()> {
    if problem.params.is_symmetric() {
        Ok(())
    } else {
        Err(Error::AsymmetricParameters)
    }
}

/// Solves `z = sum_exp (1 - gamma_bar z)^exponent` on `(0, 1/gamma_bar)` by
/// bisection; the right-hand side decreases in `z`, so the root is unique.
pub fn packing_fixed_point(sum_exp: f64, gamma_bar: f64, exponent: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0 / gamma_bar);
    let g = |z: f64| z - sum_exp * (1.0 - gamma_bar * z).max(0.0).powf(exponent);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Nodal entropy variables.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyVariables {
    pub u: GridField,
    pub v: GridField,
    pub kind: EntropyKind,
}

fn check_domain(density: &EntropyDensity, state: &SystemState, allow_zero: bool) -> Result<()> {
    for (i, (&r, &b)) in state.r.iter().zip(state.b.iter()).enumerate() {
        for (species, value) in [(Species::Red, r), (Species::Blue, b)] {
            let ok = if allow_zero {
                value >= 0.0
            } else {
                value > 0.0
            };
            if !ok || !value.is_finite() {
                return Err(Error::NonPositiveDensity {
                    species,
                    node: i,
                    value,
                });
            }
        }
        if density.has_barrier() {
            let margin = density.margin(r, b);
            if !(margin > 0.0) {
                return Err(Error::OutsideAdmissibleSet { node: i, margin });
            }
        }
    }
    Ok(())
}

/// Trapezoid quadrature of the entropy density.
pub fn entropy_value(problem: &Problem, state: &SystemState, kind: EntropyKind) -> Result<f64> {
    problem.check_state(state)?;
    let density = EntropyDensity::new(problem, kind)?;
    check_domain(&density, state, true)?;
    Ok(problem
        .weights()
        .iter()
        .enumerate()
        .map(|(i, w)| w * density.value(state.r[i], state.b[i], problem.v_r[i], problem.v_b[i]))
        .sum())
}

pub fn entropy_variables(
    problem: &Problem,
    state: &SystemState,
    kind: EntropyKind,
) -> Result<EntropyVariables> {
    problem.check_state(state)?;
    let density = EntropyDensity::new(problem, kind)?;
    check_domain(&density, state, false)?;
    let (u, v) = (0..state.len())
        .map(|i| {
            let g = density.gradient(state.r[i], state.b[i], problem.v_r[i], problem.v_b[i]);
            (g[0], g[1])
        })
        .unzip::<f64, f64, Vec<f64>, Vec<f64>>();
    Ok(EntropyVariables {
        u: u.into(),
        v: v.into(),
        kind,
    })
}

/// Maps entropy variables back to densities, node by node.
pub fn invert_entropy_gradient(problem: &Problem, vars: &EntropyVariables) -> Result<SystemState> {
    let density = EntropyDensity::new(problem, vars.kind)?;
    let n = problem.n_nodes();
    if vars.u.len() != n || vars.v.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            found: vars.u.len().min(vars.v.len()),
        });
    }
    let mut r = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let s = density.invert(vars.u[i], vars.v[i], problem.v_r[i], problem.v_b[i])?;
        r.push(s[0]);
        b.push(s[1]);
    }
    Ok(SystemState::new(r.into(), b.into(), 0.0))
}

/// Nodal Hessian of the regularized entropy density.
pub fn dual_hessian(problem: &Problem, state: &SystemState, tau: f64) -> Result<Vec<Mat2>> {
    problem.check_state(state)?;
    let density = EntropyDensity::new(problem, EntropyKind::Regularized { tau })?;
    check_domain(&density, state, false)?;
    let g = density.gamma_bar;
    for (i, rho) in state.rho().iter().enumerate() {
        let margin = 1.0 - g * rho;
        if !(margin > 0.0) {
            return Err(Error::OutsideAdmissibleSet { node: i, margin });
        }
    }
    Ok((0..state.len())
        .map(|i| density.hessian(state.r[i], state.b[i]))
        .collect())
}
