//! Physical parameters and the closed-form coefficients of the hard-sphere
//! cross-diffusion system.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Space dimension of the particles. The PDE itself is solved in 1-D; the
/// dimension only enters through the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Dimension {
    Two,
    Three,
}

impl Dimension {
    pub fn get(self) -> u32 {
        match self {
            Dimension::Two => 2,
            Dimension::Three => 3,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.get())
    }

    /// `x^d`.
    pub fn pow(self, x: f64) -> f64 {
        x.powi(self.get() as i32)
    }

    /// Volume of a ball of diameter `eps`.
    pub fn ball_volume(self, eps: f64) -> f64 {
        match self {
            Dimension::Two => PI * eps * eps / 4.0,
            Dimension::Three => PI * eps * eps * eps / 6.0,
        }
    }
}

impl TryFrom<u32> for Dimension {
    type Error = Error;

    fn try_from(d: u32) -> Result<Self> {
        match d {
            2 => Ok(Dimension::Two),
            3 => Ok(Dimension::Three),
            _ => Err(Error::InvalidParameter {
                name: "d",
                reason: format!("dimension must be 2 or 3, got {d}"),
            }),
        }
    }
}

impl From<Dimension> for u32 {
    fn from(d: Dimension) -> u32 {
        d.get()
    }
}

/// External potential before rescaling by the diffusivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    /// `slope * x`
    Linear { slope: f64 },
    /// Piecewise-linear interpolation of samples, constant outside the table.
    Tabulated { x: Vec<f64>, values: Vec<f64> },
}

impl Potential {
    pub fn linear(slope: f64) -> Self {
        Potential::Linear { slope }
    }

    pub fn zero() -> Self {
        Potential::Linear { slope: 0.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Potential::Linear { slope } => slope * x,
            Potential::Tabulated { x: xs, values } => {
                let n = xs.len();
                if x <= xs[0] {
                    return values[0];
                }
                if x >= xs[n - 1] {
                    return values[n - 1];
                }
                let k = xs.partition_point(|&xk| xk <= x).max(1) - 1;
                let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
                values[k] + t * (values[k + 1] - values[k])
            }
        }
    }

    /// Mean slope over `[xa, xb]`. Exact for linear potentials, avoiding the
    /// cancellation of differencing nodal values.
    pub fn mean_slope(&self, xa: f64, xb: f64) -> f64 {
        match self {
            Potential::Linear { slope } => *slope,
            Potential::Tabulated { .. } => (self.eval(xb) - self.eval(xa)) / (xb - xa),
        }
    }

    fn validate(&self, name: &'static str) -> Result<()> {
        match self {
            Potential::Linear { slope } if !slope.is_finite() => Err(Error::InvalidParameter {
                name,
                reason: "slope must be finite".into(),
            }),
            Potential::Tabulated { x, values } => {
                if x.len() < 2 || x.len() != values.len() {
                    return Err(Error::InvalidParameter {
                        name,
                        reason: "table needs at least two samples and matching lengths".into(),
                    });
                }
                if x.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidParameter {
                        name,
                        reason: "table abscissae must be strictly increasing".into(),
                    });
                }
                if values.iter().chain(x).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name,
                        reason: "table entries must be finite".into(),
                    });
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Parameters of the two-species system. Potentials are stored unscaled; the
/// PDE uses `V_i = potential_i / D_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: Dimension,
    pub eps_r: f64,
    pub eps_b: f64,
    pub d_r: f64,
    pub d_b: f64,
    pub n_r: f64,
    pub n_b: f64,
    pub potential_r: Potential,
    pub potential_b: Potential,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl ModelParams {
    /// Same-size, same-diffusivity red and blue particles with linear potentials on
    /// `[-1/2, 1/2]`.
    pub fn symmetric(dim: Dimension, eps: f64, n_r: f64, n_b: f64, v_r: f64, v_b: f64) -> Self {
        Self {
            dim,
            eps_r: eps,
            eps_b: eps,
            d_r: 1.0,
            d_b: 1.0,
            n_r,
            n_b,
            potential_r: Potential::linear(v_r),
            potential_b: Potential::linear(v_b),
            x_lo: -0.5,
            x_hi: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {v}"),
                })
            }
        };
        let nonneg = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be non-negative and finite, got {v}"),
                })
            }
        };
        nonneg("eps_r", self.eps_r)?;
        nonneg("eps_b", self.eps_b)?;
        positive("D_r", self.d_r)?;
        positive("D_b", self.d_b)?;
        positive("N_r", self.n_r)?;
        positive("N_b", self.n_b)?;
        if !(self.x_hi > self.x_lo) || !self.x_lo.is_finite() || !self.x_hi.is_finite() {
            return Err(Error::InvalidParameter {
                name: "x_hi",
                reason: format!("domain [{}, {}] is empty", self.x_lo, self.x_hi),
            });
        }
        self.potential_r.validate("v_r")?;
        self.potential_b.validate("v_b")
    }

    pub fn eps_br(&self) -> f64 {
        0.5 * (self.eps_r + self.eps_b)
    }

    pub fn default_eps_ref(&self) -> f64 {
        self.eps_r.max(self.eps_b)
    }

    /// Equal diameters and diffusivities: the exact gradient-flow case.
    pub fn is_symmetric(&self) -> bool {
        self.eps_r == self.eps_b && self.d_r == self.d_b
    }

    /// Rescaled potential `V_r(x)`.
    pub fn v_r(&self, x: f64) -> f64 {
        self.potential_r.eval(x) / self.d_r
    }

    /// Rescaled potential `V_b(x)`.
    pub fn v_b(&self, x: f64) -> f64 {
        self.potential_b.eval(x) / self.d_b
    }
}

/// Coefficients derived from [`ModelParams`] and a reference diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub dim: Dimension,
    pub eps_ref: f64,
    pub alpha: f64,
    pub beta_r: f64,
    pub beta_b: f64,
    pub gamma_r: f64,
    pub gamma_b: f64,
    /// `eps_ref^d * alpha`
    pub alpha_bar: f64,
    /// `eps_br^d * gamma_r`; equals `eps_ref^d * gamma_r` whenever the
    /// diameters coincide with the reference.
    pub gamma_bar: f64,
    pub theta_r: f64,
    pub theta_b: f64,
    pub a_r: f64,
    pub a_b: f64,
    pub a_br: f64,
    /// `eps_r^d`, `eps_b^d`, `eps_br^d`
    pub e_r: f64,
    pub e_b: f64,
    pub e_br: f64,
    pub d_r: f64,
    pub d_b: f64,
}

impl Coefficients {
    /// Coefficients with the reference diameter `max(eps_r, eps_b)`.
    pub fn new(params: &ModelParams) -> Result<Self> {
        compute_coefficients(params, params.default_eps_ref())
    }

    /// `eps_ref^d theta_r`, the quantity plotted on the theta axis of the sweeps.
    pub fn theta_r_scaled(&self) -> f64 {
        self.d_b * self.e_br - self.d_r * self.e_r
    }

    pub fn theta_b_scaled(&self) -> f64 {
        self.d_r * self.e_br - self.d_b * self.e_b
    }

    /// `eps_ref^d` times a size ratio gives the corresponding `eps_i^d`.
    pub fn eps_ref_pow(&self) -> f64 {
        self.dim.pow(self.eps_ref)
    }
}

pub fn compute_coefficients(params: &ModelParams, eps_ref: f64) -> Result<Coefficients> {
    params.validate()?;
    let any_size = params.eps_r > 0.0 || params.eps_b > 0.0;
    if !(eps_ref >= 0.0 && eps_ref.is_finite()) || (any_size && eps_ref == 0.0) {
        return Err(Error::InvalidParameter {
            name: "eps_ref",
            reason: format!("must be positive when a diameter is nonzero, got {eps_ref}"),
        });
    }
    let d = params.dim;
    let df = d.as_f64();
    let (dr, db) = (params.d_r, params.d_b);
    let two_pi_d = 2.0 * PI / df;
    let alpha = 2.0 * (df - 1.0) * PI / df;
    let beta = |di: f64, dj: f64| two_pi_d * ((df - 1.0) * di + df * dj) / (di + dj);
    let gamma = |di: f64, dj: f64| two_pi_d * di / (di + dj);
    let (e_r, e_b, e_br) = (
        d.pow(params.eps_r),
        d.pow(params.eps_b),
        d.pow(params.eps_br()),
    );
    let ref_pow = d.pow(eps_ref);
    let ratio = |e: f64| if ref_pow > 0.0 { e / ref_pow } else { 0.0 };
    let (a_r, a_b, a_br) = (ratio(e_r), ratio(e_b), ratio(e_br));
    let gamma_r = gamma(dr, db);
    Ok(Coefficients {
        dim: d,
        eps_ref,
        alpha,
        beta_r: beta(dr, db),
        beta_b: beta(db, dr),
        gamma_r,
        gamma_b: gamma(db, dr),
        alpha_bar: ref_pow * alpha,
        gamma_bar: e_br * gamma_r,
        theta_r: db * a_br - dr * a_r,
        theta_b: dr * a_br - db * a_b,
        a_r,
        a_b,
        a_br,
        e_r,
        e_b,
        e_br,
        d_r: dr,
        d_b: db,
    })
}

/// Global volume fraction `N_r v_d(eps_r) + N_b v_d(eps_b)` on a unit-volume domain.
pub fn volume_fraction(params: &ModelParams) -> f64 {
    params.n_r * params.dim.ball_volume(params.eps_r)
        + params.n_b * params.dim.ball_volume(params.eps_b)
}

/// Pointwise volume density `v_d(eps_r) r + v_d(eps_b) b`.
pub fn local_volume_density(params: &ModelParams, r: f64, b: f64) -> f64 {
    params.dim.ball_volume(params.eps_r) * r + params.dim.ball_volume(params.eps_b) * b
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(dim: Dimension, eps_r: f64, eps_b: f64, d_r: f64, d_b: f64) -> ModelParams {
        ModelParams {
            dim,
            eps_r,
            eps_b,
            d_r,
            d_b,
            n_r: 200.0,
            n_b: 200.0,
            potential_r: Potential::linear(2.0),
            potential_b: Potential::linear(1.0),
            x_lo: -0.5,
            x_hi: 0.5,
        }
    }

    #[test]
    fn planar_unit_diffusivity_coefficients() {
        let c = Coefficients::new(&params(Dimension::Two, 0.01, 0.01, 1.0, 1.0)).unwrap();
        assert_relative_eq!(c.alpha, PI, epsilon = 1e-15);
        assert_relative_eq!(c.gamma_r, PI / 2.0, epsilon = 1e-15);
        assert_relative_eq!(c.gamma_b, PI / 2.0, epsilon = 1e-15);
        assert_relative_eq!(c.beta_r, 1.5 * PI, epsilon = 1e-15);
        assert_relative_eq!(c.beta_b, 1.5 * PI, epsilon = 1e-15);
    }

    #[test]
    fn theta_matches_figure_value() {
        let c = compute_coefficients(&params(Dimension::Two, 0.01, 0.01, 0.2, 1.0), 0.01).unwrap();
        assert_relative_eq!(c.a_r, 1.0);
        assert_relative_eq!(c.a_b, 1.0);
        assert_relative_eq!(c.a_br, 1.0);
        assert_relative_eq!(c.theta_r, 0.8, epsilon = 1e-15);
        assert_relative_eq!(c.eps_ref_pow() * c.theta_r, 8e-5, max_relative = 1e-12);
        assert_relative_eq!(c.theta_r_scaled(), 8e-5, max_relative = 1e-12);
    }

    #[test]
    fn spatial_beta_equals_alpha_plus_gamma() {
        let c = Coefficients::new(&params(Dimension::Three, 0.01, 0.01, 1.0, 1.0)).unwrap();
        // evaluate the beta formula independently
        let beta = 2.0 * PI / 3.0 * (2.0 * 1.0 + 3.0 * 1.0) / 2.0;
        assert_relative_eq!(c.gamma_r, PI / 3.0, epsilon = 1e-15);
        assert_relative_eq!(c.beta_r, beta, epsilon = 1e-15);
        assert_relative_eq!(c.beta_r, c.alpha + c.gamma_r, epsilon = 1e-14);
        assert_relative_eq!(c.beta_r, 5.0 * PI / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn beta_is_alpha_plus_partner_gamma_in_general() {
        for &(dr, db) in &[(0.2, 1.0), (2.0, 1.0), (1.0, 7.5)] {
            for dim in [Dimension::Two, Dimension::Three] {
                let c = Coefficients::new(&params(dim, 0.01, 0.02, dr, db)).unwrap();
                assert_relative_eq!(c.beta_r, c.alpha + c.gamma_b, epsilon = 1e-14);
                assert_relative_eq!(c.beta_b, c.alpha + c.gamma_r, epsilon = 1e-14);
                assert_relative_eq!(
                    c.gamma_r + c.gamma_b,
                    2.0 * PI / dim.as_f64(),
                    epsilon = 1e-15
                );
            }
        }
    }

    #[test]
    fn theta_vanishes_only_for_symmetric_parameters() {
        let c = Coefficients::new(&params(Dimension::Two, 0.01, 0.01, 1.0, 1.0)).unwrap();
        assert_eq!(c.theta_r, 0.0);
        assert_eq!(c.theta_b, 0.0);
        for i in 0..20 {
            for j in 0..20 {
                let eps_b = 0.005 + 0.001 * f64::from(i);
                let d_r = 0.25 + 0.1 * f64::from(j);
                let c = Coefficients::new(&params(Dimension::Two, 0.01, eps_b, d_r, 1.0)).unwrap();
                let zero = c.theta_r.abs() < 1e-12 && c.theta_b.abs() < 1e-12;
                let sym = (eps_b - 0.01).abs() < 1e-12 && (d_r - 1.0).abs() < 1e-12;
                assert_eq!(zero, sym, "eps_b={eps_b} D_r={d_r}");
            }
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut p = params(Dimension::Two, 0.01, 0.01, 1.0, 1.0);
        p.d_r = 0.0;
        assert!(matches!(
            Coefficients::new(&p),
            Err(Error::InvalidParameter { name: "D_r", .. })
        ));
        let p = params(Dimension::Two, 0.01, 0.01, 1.0, 1.0);
        assert!(compute_coefficients(&p, 0.0).is_err());
        assert!(Dimension::try_from(4).is_err());
        let p0 = params(Dimension::Two, 0.0, 0.0, 1.0, 1.0);
        let c = compute_coefficients(&p0, 0.0).unwrap();
        assert_eq!(c.gamma_bar, 0.0);
        assert_eq!(c.a_r, 0.0);
    }

    #[test]
    fn volume_fraction_values() {
        let mut p = params(Dimension::Two, 0.01, 0.01, 1.0, 1.0);
        assert_relative_eq!(
            volume_fraction(&p),
            400.0 * PI * 0.005 * 0.005,
            max_relative = 1e-14
        );
        assert_relative_eq!(volume_fraction(&p), 0.0314159, max_relative = 1e-5);
        p.n_r = 0.0;
        p.n_b = 0.0;
        assert_eq!(volume_fraction(&p), 0.0);
    }

    #[test]
    fn total_density_is_twice_volume_density_over_gamma_bar() {
        for dim in [Dimension::Two, Dimension::Three] {
            let p = params(dim, 0.03, 0.03, 1.0, 1.0);
            let c = Coefficients::new(&p).unwrap();
            for &(r, b) in &[(1.0, 2.0), (37.0, 0.5), (0.0, 3.0)] {
                let phi = local_volume_density(&p, r, b);
                assert_relative_eq!(r + b, 2.0 * phi / c.gamma_bar, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn tabulated_potential_interpolates() {
        let v = Potential::Tabulated {
            x: vec![0.0, 1.0, 3.0],
            values: vec![0.0, 2.0, 0.0],
        };
        assert_relative_eq!(v.eval(0.5), 1.0);
        assert_relative_eq!(v.eval(2.0), 1.0);
        assert_relative_eq!(v.eval(-1.0), 0.0);
        assert_relative_eq!(v.mean_slope(0.0, 1.0), 2.0);
    }
}
