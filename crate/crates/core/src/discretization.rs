//! Vertex-centred finite-volume semidiscretization on a uniform 1-D grid.
//!
//! Nodes sit at `x_lo + i h`, `i = 0..=n_cells`, with trapezoid weights. Face
//! `k` of a [`FluxField`] lies between nodes `k - 1` and `k`; faces `0` and
//! `n_nodes` are the walls and carry zero flux, so
//! `sum_i w_i rhs_i` telescopes to zero and mass is conserved exactly.
//!
//! Fluxes are stored without the diffusivity prefactor, i.e. they are the
//! bracketed expressions of the PDE, and `rhs_r = D_r div J_r`.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BandMatrix, Mat2};
use crate::model::{Coefficients, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    x_lo: f64,
    x_hi: f64,
    n_cells: usize,
}

impl Grid1D {
    pub fn new(x_lo: f64, x_hi: f64, n_cells: usize) -> Result<Self> {
        if n_cells < 4 {
            return Err(Error::InvalidParameter {
                name: "n_cells",
                reason: format!("need at least 4 cells, got {n_cells}"),
            });
        }
        if !(x_hi > x_lo) || !x_lo.is_finite() || !x_hi.is_finite() {
            return Err(Error::InvalidParameter {
                name: "x_hi",
                reason: format!("domain [{x_lo}, {x_hi}] is empty"),
            });
        }
        Ok(Self {
            x_lo,
            x_hi,
            n_cells,
        })
    }

    pub fn x_lo(&self) -> f64 {
        self.x_lo
    }

    pub fn x_hi(&self) -> f64 {
        self.x_hi
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn h(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.n_cells as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.n_cells {
            self.x_hi
        } else {
            self.x_lo + i as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.x(i)).collect()
    }

    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n_cells {
            0.5 * self.h()
        } else {
            self.h()
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.weight(i)).collect()
    }

    /// Trapezoid rule.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| self.weight(i) * v)
            .sum()
    }

    /// Grid-weighted L2 norm.
    pub fn l2_norm(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| self.weight(i) * v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.l2_norm(&diff)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.n_nodes() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: self.n_nodes(),
                found: len,
            })
        }
    }
}

/// Nodal values of one density.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridField(Vec<f64>);

impl GridField {
    pub fn from_fn(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Self {
        Self(grid.nodes().into_iter().map(f).collect())
    }

    pub fn constant(grid: &Grid1D, value: f64) -> Self {
        Self(vec![value; grid.n_nodes()])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for GridField {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl FromIterator<f64> for GridField {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl Deref for GridField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GridField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// The PDE unknown `(r, b)` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub r: GridField,
    pub b: GridField,
    pub t: f64,
}

impl SystemState {
    pub fn new(r: GridField, b: GridField, t: f64) -> Self {
        Self { r, b, t }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn rho(&self) -> GridField {
        self.r
            .iter()
            .zip(self.b.iter())
            .map(|(r, b)| r + b)
            .collect()
    }

    pub fn mass_r(&self, grid: &Grid1D) -> f64 {
        grid.integrate(&self.r)
    }

    pub fn mass_b(&self, grid: &Grid1D) -> f64 {
        grid.integrate(&self.b)
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        [self.r[i], self.b[i]]
    }

    /// `[r_0, b_0, r_1, b_1, ...]`
    pub fn to_interleaved(&self) -> Vec<f64> {
        self.r
            .iter()
            .zip(self.b.iter())
            .flat_map(|(&r, &b)| [r, b])
            .collect()
    }

    pub fn from_interleaved(y: &[f64], t: f64) -> Self {
        let r = y.iter().step_by(2).copied().collect();
        let b = y.iter().skip(1).step_by(2).copied().collect();
        Self { r, b, t }
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }

    /// First node where a density is not strictly positive.
    pub fn check_positive(&self) -> Result<()> {
        use crate::error::Species;
        for (i, (&r, &b)) in self.r.iter().zip(self.b.iter()).enumerate() {
            if !(r > 0.0) {
                return Err(Error::NonPositiveDensity {
                    species: Species::Red,
                    node: i,
                    value: r,
                });
            }
            if !(b > 0.0) {
                return Err(Error::NonPositiveDensity {
                    species: Species::Blue,
                    node: i,
                    value: b,
                });
            }
        }
        Ok(())
    }
}

/// Face fluxes including the two wall faces, which are always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    pub j_r: Vec<f64>,
    pub j_b: Vec<f64>,
}

impl FluxField {
    fn zeros(n_faces: usize) -> Self {
        Self {
            j_r: vec![0.0; n_faces],
            j_b: vec![0.0; n_faces],
        }
    }
}

/// How face fluxes are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    /// Centred differences of the primitive variables with arithmetic-mean face
    /// densities.
    Primitive,
    /// Face-averaged mobility times differences of the entropy variables, minus
    /// the defect term. Discretely dissipative in the symmetric case and
    /// stationary exactly where the entropy variables are constant.
    #[default]
    EntropyVariables,
}

/// Everything the spatial operator needs: parameters, coefficients, grid and
/// the potentials sampled on nodes and faces.
#[derive(Debug, Clone)]
pub struct Problem {
    pub params: ModelParams,
    pub coeffs: Coefficients,
    pub grid: Grid1D,
    /// Rescaled nodal potentials.
    pub v_r: Vec<f64>,
    pub v_b: Vec<f64>,
    /// Rescaled potential slopes on interior faces (`n_cells` entries).
    pub dv_r: Vec<f64>,
    pub dv_b: Vec<f64>,
    weights: Vec<f64>,
}

impl Problem {
    pub fn new(params: ModelParams, n_cells: usize) -> Result<Self> {
        let coeffs = Coefficients::new(&params)?;
        Self::with_coefficients(params, coeffs, n_cells)
    }

    pub fn with_coefficients(
        params: ModelParams,
        coeffs: Coefficients,
        n_cells: usize,
    ) -> Result<Self> {
        params.validate()?;
        let grid = Grid1D::new(params.x_lo, params.x_hi, n_cells)?;
        let nodes = grid.nodes();
        let v_r = nodes.iter().map(|&x| params.v_r(x)).collect();
        let v_b = nodes.iter().map(|&x| params.v_b(x)).collect();
        let slopes = |pot: &crate::model::Potential, d: f64| -> Vec<f64> {
            nodes
                .windows(2)
                .map(|w| pot.mean_slope(w[0], w[1]) / d)
                .collect()
        };
        let dv_r = slopes(&params.potential_r, params.d_r);
        let dv_b = slopes(&params.potential_b, params.d_b);
        Ok(Self {
            weights: grid.weights(),
            params,
            coeffs,
            grid,
            v_r,
            v_b,
            dv_r,
            dv_b,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn check_state(&self, state: &SystemState) -> Result<()> {
        self.grid.check_len(state.r.len())?;
        self.grid.check_len(state.b.len())
    }

    fn face_flux(&self, scheme: FluxScheme, k: usize, si: [f64; 2], sj: [f64; 2]) -> [f64; 2] {
        match scheme {
            FluxScheme::Primitive => self.primitive_face(k, si, sj),
            FluxScheme::EntropyVariables => self.entropic_face(k, si, sj),
        }
    }

    fn face_jacobian(
        &self,
        scheme: FluxScheme,
        k: usize,
        si: [f64; 2],
        sj: [f64; 2],
    ) -> FaceJacobian {
        match scheme {
            FluxScheme::Primitive => self.primitive_face_jacobian(k, si, sj),
            FluxScheme::EntropyVariables => self.entropic_face_jacobian(k, si, sj),
        }
    }

    /// Primitive flux on interior face `k` (between nodes `k` and `k + 1`).
    fn primitive_face(&self, k: usize, si: [f64; 2], sj: [f64; 2]) -> [f64; 2] {
        let c = &self.coeffs;
        let h = self.grid.h();
        let (rf, bf) = (0.5 * (si[0] + sj[0]), 0.5 * (si[1] + sj[1]));
        let (gr, gb) = ((sj[0] - si[0]) / h, (sj[1] - si[1]) / h);
        let (dvr, dvb) = (self.dv_r[k], self.dv_b[k]);
        let cross = c.gamma_b * dvb - c.gamma_r * dvr;
        let jr = (1.0 + c.e_r * c.alpha * rf) * gr
            + rf * dvr
            + c.e_br * (c.beta_r * rf * gb - c.gamma_r * bf * gr + cross * rf * bf);
        let jb = (1.0 + c.e_b * c.alpha * bf) * gb
            + bf * dvb
            + c.e_br * (c.beta_b * bf * gr - c.gamma_b * rf * gb - cross * rf * bf);
        [jr, jb]
    }

    fn primitive_face_jacobian(&self, k: usize, si: [f64; 2], sj: [f64; 2]) -> FaceJacobian {
        let c = &self.coeffs;
        let h = self.grid.h();
        let (rf, bf) = (0.5 * (si[0] + sj[0]), 0.5 * (si[1] + sj[1]));
        let (gr, gb) = ((sj[0] - si[0]) / h, (sj[1] - si[1]) / h);
        let (dvr, dvb) = (self.dv_r[k], self.dv_b[k]);
        let cross = c.gamma_b * dvb - c.gamma_r * dvr;
        // partials with respect to (rf, bf, gr, gb)
        let jr = [
            c.e_r * c.alpha * gr + dvr + c.e_br * (c.beta_r * gb + cross * bf),
            c.e_br * (-c.gamma_r * gr + cross * rf),
            1.0 + c.e_r * c.alpha * rf - c.e_br * c.gamma_r * bf,
            c.e_br * c.beta_r * rf,
        ];
        let jb = [
            c.e_br * (-c.gamma_b * gb - cross * bf),
            c.e_b * c.alpha * gb + dvb + c.e_br * (c.beta_b * gr - cross * rf),
            c.e_br * c.beta_b * bf,
            1.0 + c.e_b * c.alpha * bf - c.e_br * c.gamma_b * rf,
        ];
        let chain = |p: [f64; 4]| {
            [
                0.5 * p[0] - p[2] / h,
                0.5 * p[1] - p[3] / h,
                0.5 * p[0] + p[2] / h,
                0.5 * p[1] + p[3] / h,
            ]
        };
        FaceJacobian([chain(jr), chain(jb)])
    }

    /// Entropy-variable flux on interior face `k`, divided by the diffusivities.
    fn entropic_face(&self, k: usize, si: [f64; 2], sj: [f64; 2]) -> [f64; 2] {
        let c = &self.coeffs;
        let h = self.grid.h();
        let m = nodal_mobility(c, si).add(&nodal_mobility(c, sj)).scale(0.5);
        let (dr, db) = (sj[0] - si[0], sj[1] - si[1]);
        let du = [
            (sj[0] / si[0]).ln() + self.dv_r[k] * h + c.alpha * (c.e_r * dr + c.e_br * db),
            (sj[1] / si[1]).ln() + self.dv_b[k] * h + c.alpha * (c.e_b * db + c.e_br * dr),
        ];
        let mdu = m.mul_vec(du);
        let pf = 0.5 * (si[0] * si[1] + sj[0] * sj[1]);
        let (tr, tb) = (c.theta_r_scaled(), c.theta_b_scaled());
        let g = c.alpha * c.e_br * pf * (tr * dr - tb * db);
        [
            (mdu[0] - c.gamma_r * g) / (h * c.d_r),
            (mdu[1] + c.gamma_b * g) / (h * c.d_b),
        ]
    }

    fn entropic_face_jacobian(&self, k: usize, si: [f64; 2], sj: [f64; 2]) -> FaceJacobian {
        let c = &self.coeffs;
        let h = self.grid.h();
        let m = nodal_mobility(c, si).add(&nodal_mobility(c, sj)).scale(0.5);
        let (dr, db) = (sj[0] - si[0], sj[1] - si[1]);
        let du = [
            (sj[0] / si[0]).ln() + self.dv_r[k] * h + c.alpha * (c.e_r * dr + c.e_br * db),
            (sj[1] / si[1]).ln() + self.dv_b[k] * h + c.alpha * (c.e_b * db + c.e_br * dr),
        ];
        let pf = 0.5 * (si[0] * si[1] + sj[0] * sj[1]);
        let (tr, tb) = (c.theta_r_scaled(), c.theta_b_scaled());
        let lin = tr * dr - tb * db;
        let mut out = [[0.0; 4]; 2];
        for (node, s, sign) in [(0usize, si, -1.0), (1usize, sj, 1.0)] {
            let (dm_dr, dm_db) = nodal_mobility_derivatives(c, s);
            let ddu_dr = [
                sign * (1.0 / s[0] + c.alpha * c.e_r),
                sign * c.alpha * c.e_br,
            ];
            let ddu_db = [
                sign * c.alpha * c.e_br,
                sign * (1.0 / s[1] + c.alpha * c.e_b),
            ];
            let dg_dr = c.alpha * c.e_br * (0.5 * s[1] * lin + pf * sign * tr);
            let dg_db = c.alpha * c.e_br * (0.5 * s[0] * lin - pf * sign * tb);
            let a = dm_dr.scale(0.5).mul_vec(du);
            let b = m.mul_vec(ddu_dr);
            let e = dm_db.scale(0.5).mul_vec(du);
            let f = m.mul_vec(ddu_db);
            let col = 2 * node;
            out[0][col] = (a[0] + b[0] - c.gamma_r * dg_dr) / (h * c.d_r);
            out[1][col] = (a[1] + b[1] + c.gamma_b * dg_dr) / (h * c.d_b);
            out[0][col + 1] = (e[0] + f[0] - c.gamma_r * dg_db) / (h * c.d_r);
            out[1][col + 1] = (e[1] + f[1] + c.gamma_b * dg_db) / (h * c.d_b);
        }
        FaceJacobian(out)
    }

    /// Face fluxes of the chosen scheme for a state given as interleaved values.
    fn fluxes_interleaved(&self, scheme: FluxScheme, y: &[f64]) -> FluxField {
        let n = self.n_nodes();
        let mut flux = FluxField::zeros(n + 1);
        for k in 0..n - 1 {
            let si = [y[2 * k], y[2 * k + 1]];
            let sj = [y[2 * k + 2], y[2 * k + 3]];
            let [jr, jb] = self.face_flux(scheme, k, si, sj);
            flux.j_r[k + 1] = jr;
            flux.j_b[k + 1] = jb;
        }
        flux
    }

    /// Time derivative for interleaved unknowns.
    pub fn rhs_interleaved(&self, scheme: FluxScheme, y: &[f64], out: &mut [f64]) {
        let flux = self.fluxes_interleaved(scheme, y);
        let (dr, db) = (self.coeffs.d_r, self.coeffs.d_b);
        for (i, w) in self.weights.iter().enumerate() {
            out[2 * i] = dr * (flux.j_r[i + 1] - flux.j_r[i]) / w;
            out[2 * i + 1] = db * (flux.j_b[i + 1] - flux.j_b[i]) / w;
        }
    }

    /// Banded Jacobian of [`Problem::rhs_interleaved`] (`kl = ku = 3`).
    pub fn rhs_jacobian(&self, scheme: FluxScheme, y: &[f64]) -> BandMatrix {
        let n = self.n_nodes();
        let mut jac = BandMatrix::zeros(2 * n, 3, 3);
        let d = [self.coeffs.d_r, self.coeffs.d_b];
        for k in 0..n - 1 {
            let si = [y[2 * k], y[2 * k + 1]];
            let sj = [y[2 * k + 2], y[2 * k + 3]];
            let fj = self.face_jacobian(scheme, k, si, sj);
            for s in 0..2 {
                for (col, &v) in fj.0[s].iter().enumerate() {
                    let c = 2 * k + col;
                    // face k + 1 is the right face of node k and the left face of node k + 1
                    jac.add(2 * k + s, c, d[s] * v / self.weights[k]);
                    jac.add(2 * (k + 1) + s, c, -d[s] * v / self.weights[k + 1]);
                }
            }
        }
        jac
    }
}

/// Derivatives of the two face fluxes with respect to `(r_i, b_i, r_j, b_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceJacobian(pub [[f64; 4]; 2]);

/// Nodal mobility of the general system, including the diffusivities.
pub(crate) fn nodal_mobility(c: &Coefficients, s: [f64; 2]) -> Mat2 {
    let [r, b] = s;
    let e = c.e_br;
    let rb = r * b;
    Mat2::new(
        c.d_r * r * (1.0 - c.gamma_r * e * b),
        c.d_r * c.gamma_b * e * rb,
        c.d_b * c.gamma_r * e * rb,
        c.d_b * b * (1.0 - c.gamma_b * e * r),
    )
}

pub(crate) fn nodal_mobility_derivatives(c: &Coefficients, s: [f64; 2]) -> (Mat2, Mat2) {
    let [r, b] = s;
    let e = c.e_br;
    let dm_dr = Mat2::new(
        c.d_r * (1.0 - c.gamma_r * e * b),
        c.d_r * c.gamma_b * e * b,
        c.d_b * c.gamma_r * e * b,
        -c.d_b * c.gamma_b * e * b,
    );
    let dm_db = Mat2::new(
        -c.d_r * c.gamma_r * e * r,
        c.d_r * c.gamma_b * e * r,
        c.d_b * c.gamma_r * e * r,
        c.d_b * (1.0 - c.gamma_b * e * r),
    );
    (dm_dr, dm_db)
}

/// Primitive-variable fluxes: centred gradients and arithmetic-mean face
/// densities, walls forced to zero.
pub fn assemble_fluxes(problem: &Problem, state: &SystemState) -> Result<FluxField> {
    problem.check_state(state)?;
    Ok(problem.fluxes_interleaved(FluxScheme::Primitive, &state.to_interleaved()))
}

/// Entropy-variable fluxes (see [`FluxScheme::EntropyVariables`]). Requires
/// positive densities.
pub fn assemble_entropic_fluxes(problem: &Problem, state: &SystemState) -> Result<FluxField> {
    problem.check_state(state)?;
    state.check_positive()?;
    Ok(problem.fluxes_interleaved(FluxScheme::EntropyVariables, &state.to_interleaved()))
}

/// Fluxes of the equal-size, equal-diffusivity system written in terms of the
/// total density `rho = r + b`.
pub fn assemble_symmetric_fluxes(problem: &Problem, state: &SystemState) -> Result<FluxField> {
    if !problem.params.is_symmetric() {
        return Err(Error::AsymmetricParameters);
    }
    problem.check_state(state)?;
    let c = &problem.coeffs;
    let h = problem.grid.h();
    let gb = c.gamma_bar;
    let ab = c.alpha * c.e_br;
    let n = problem.n_nodes();
    let mut flux = FluxField::zeros(n + 1);
    for k in 0..n - 1 {
        let (ri, rj, bi, bj) = (state.r[k], state.r[k + 1], state.b[k], state.b[k + 1]);
        let (rf, bf) = (0.5 * (ri + rj), 0.5 * (bi + bj));
        let rho_f = rf + bf;
        let (gr, gbl) = ((rj - ri) / h, (bj - bi) / h);
        let grho = gr + gbl;
        let (dvr, dvb) = (problem.dv_r[k], problem.dv_b[k]);
        flux.j_r[k + 1] =
            (1.0 - gb * rho_f) * gr + (ab + gb) * rf * grho + rf * dvr + gb * (dvb - dvr) * rf * bf;
        flux.j_b[k + 1] = (1.0 - gb * rho_f) * gbl
            + (ab + gb) * bf * grho
            + bf * dvb
            + gb * (dvr - dvb) * rf * bf;
    }
    Ok(flux)
}

/// Divergence of a flux field times the diffusivities, per node.
pub fn flux_divergence(problem: &Problem, flux: &FluxField) -> (GridField, GridField) {
    let (dr, db) = (problem.coeffs.d_r, problem.coeffs.d_b);
    let w = problem.weights();
    let r = w
        .iter()
        .enumerate()
        .map(|(i, wi)| dr * (flux.j_r[i + 1] - flux.j_r[i]) / wi)
        .collect();
    let b = w
        .iter()
        .enumerate()
        .map(|(i, wi)| db * (flux.j_b[i + 1] - flux.j_b[i]) / wi)
        .collect();
    (r, b)
}

/// Semidiscrete time derivative `(dr/dt, db/dt)`.
pub fn rhs(
    problem: &Problem,
    state: &SystemState,
    scheme: FluxScheme,
) -> Result<(GridField, GridField)> {
    problem.check_state(state)?;
    if scheme == FluxScheme::EntropyVariables {
        state.check_positive()?;
    }
    let y = state.to_interleaved();
    let mut out = vec![0.0; y.len()];
    problem.rhs_interleaved(scheme, &y, &mut out);
    let s = SystemState::from_interleaved(&out, state.t);
    Ok((s.r, s.b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dimension, Potential};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example_params(d_r: f64, eps: f64) -> ModelParams {
        ModelParams {
            dim: Dimension::Two,
            eps_r: eps,
            eps_b: eps,
            d_r,
            d_b: 1.0,
            n_r: 200.0,
            n_b: 200.0,
            potential_r: Potential::linear(2.0),
            potential_b: Potential::linear(1.0),
            x_lo: -0.5,
            x_hi: 0.5,
        }
    }

    fn random_state(grid: &Grid1D, rng: &mut ChaCha8Rng, scale: f64) -> SystemState {
        let r = (0..grid.n_nodes())
            .map(|_| scale * rng.gen_range(0.2..1.0))
            .collect();
        let b = (0..grid.n_nodes())
            .map(|_| scale * rng.gen_range(0.2..1.0))
            .collect();
        SystemState::new(r, b, 0.0)
    }

    #[test]
    fn grid_weights_integrate_linear_functions_exactly() {
        let g = Grid1D::new(-0.5, 0.5, 10).unwrap();
        assert_eq!(g.n_nodes(), 11);
        assert_relative_eq!(g.integrate(&[1.0; 11]), 1.0, epsilon = 1e-15);
        let x = g.nodes();
        assert!(g.integrate(&x).abs() < 1e-16);
        assert!(Grid1D::new(0.0, 1.0, 3).is_err());
        assert!(Grid1D::new(1.0, 0.0, 10).is_err());
    }

    #[test]
    fn interleaving_round_trips() {
        let s = SystemState::new(vec![1.0, 2.0, 3.0].into(), vec![4.0, 5.0, 6.0].into(), 0.5);
        let y = s.to_interleaved();
        assert_eq!(y, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(SystemState::from_interleaved(&y, 0.5), s);
    }

    #[test]
    fn constant_state_without_potential_has_zero_flux() {
        let mut p = example_params(1.0, 0.05);
        p.potential_r = Potential::zero();
        p.potential_b = Potential::zero();
        let prob = Problem::new(p, 20).unwrap();
        let s = SystemState::new(
            GridField::constant(&prob.grid, 3.0),
            GridField::constant(&prob.grid, 1.5),
            0.0,
        );
        for f in [
            assemble_fluxes(&prob, &s).unwrap(),
            assemble_entropic_fluxes(&prob, &s).unwrap(),
            assemble_symmetric_fluxes(&prob, &s).unwrap(),
        ] {
            assert!(f.j_r.iter().chain(&f.j_b).all(|&j| j == 0.0));
        }
    }

    #[test]
    fn point_particle_equilibrium_has_small_flux() {
        let p = example_params(1.0, 0.0);
        let mut prev = f64::NAN;
        for n in [50, 100, 200] {
            let prob = Problem::new(p.clone(), n).unwrap();
            let s = SystemState::new(
                GridField::from_fn(&prob.grid, |x| (-prob.params.v_r(x)).exp()),
                GridField::from_fn(&prob.grid, |x| (-prob.params.v_b(x)).exp()),
                0.0,
            );
            let prim = assemble_fluxes(&prob, &s).unwrap();
            let max = prim.j_r.iter().fold(0.0f64, |m, j| m.max(j.abs()));
            if prev.is_finite() {
                // second order: halving h divides the flux by about four
                assert!((prev / max - 4.0).abs() < 0.1, "ratio {}", prev / max);
            }
            prev = max;
            let ent = assemble_entropic_fluxes(&prob, &s).unwrap();
            assert!(ent.j_r.iter().all(|j| j.abs() < 1e-11));
            assert!(ent.j_b.iter().all(|j| j.abs() < 1e-11));
        }
    }

    #[test]
    fn symmetric_assembly_agrees_with_general() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in [Dimension::Two, Dimension::Three] {
            let mut p = example_params(1.0, 0.05);
            p.dim = dim;
            let prob = Problem::new(p, 32).unwrap();
            for _ in 0..20 {
                let s = random_state(&prob.grid, &mut rng, 50.0);
                let a = assemble_fluxes(&prob, &s).unwrap();
                let b = assemble_symmetric_fluxes(&prob, &s).unwrap();
                let scale = a
                    .j_r
                    .iter()
                    .chain(&a.j_b)
                    .fold(0.0f64, |m, j| m.max(j.abs()));
                for (x, y) in a.j_r.iter().chain(&a.j_b).zip(b.j_r.iter().chain(&b.j_b)) {
                    assert!((x - y).abs() <= 1e-12 * scale, "{x} vs {y}");
                }
            }
        }
        let prob = Problem::new(example_params(0.5, 0.05), 8).unwrap();
        let s = SystemState::new(
            GridField::constant(&prob.grid, 1.0),
            GridField::constant(&prob.grid, 1.0),
            0.0,
        );
        assert_eq!(
            assemble_symmetric_fluxes(&prob, &s),
            Err(Error::AsymmetricParameters)
        );
    }

    #[test]
    fn rho_form_gradient_coefficient_vanishes_at_packing() {
        // one face where both neighbours sit at gamma_bar * rho = 1, equal potentials
        let mut p = example_params(1.0, 0.1);
        p.potential_r = Potential::linear(1.0);
        p.potential_b = Potential::linear(1.0);
        let prob = Problem::new(p, 4).unwrap();
        let rho_max = 1.0 / prob.coeffs.gamma_bar;
        // r varies, b compensates so rho is constant: only (1 - gamma_bar rho) grad r and
        // r V' remain, and the first is zero
        let r: GridField = vec![0.2, 0.3, 0.4, 0.5, 0.6]
            .into_iter()
            .map(|f| f * rho_max)
            .collect();
        let b: GridField = r.iter().map(|ri| rho_max - ri).collect();
        let s = SystemState::new(r.clone(), b, 0.0);
        let f = assemble_symmetric_fluxes(&prob, &s).unwrap();
        for k in 0..4 {
            let rf = 0.5 * (r[k] + r[k + 1]);
            assert_relative_eq!(f.j_r[k + 1], rf * prob.dv_r[k], max_relative = 1e-12);
        }
    }

    #[test]
    fn divergence_conserves_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prob = Problem::new(example_params(0.3, 0.02), 40).unwrap();
        for scheme in [FluxScheme::Primitive, FluxScheme::EntropyVariables] {
            for _ in 0..10 {
                let s = random_state(&prob.grid, &mut rng, 100.0);
                let (dr, db) = rhs(&prob, &s, scheme).unwrap();
                let scale = dr
                    .iter()
                    .chain(db.iter())
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(prob.grid.integrate(&dr).abs() < 1e-13 * scale);
                assert!(prob.grid.integrate(&db).abs() < 1e-13 * scale);
            }
        }
    }

    /// Exact flux of the PDE for the manufactured pair
    /// `r = 2 + sin(2 pi x)`, `b = 2 + cos(2 pi x)`.
    fn manufactured_flux(prob: &Problem, x: f64) -> [f64; 2] {
        use std::f64::consts::PI;
        let c = &prob.coeffs;
        let w = 2.0 * PI;
        let (r, b) = (2.0 + (w * x).sin(), 2.0 + (w * x).cos());
        let (rx, bx) = (w * (w * x).cos(), -w * (w * x).sin());
        let vr = prob.params.potential_r.mean_slope(x, x + 1.0) / c.d_r;
        let vb = prob.params.potential_b.mean_slope(x, x + 1.0) / c.d_b;
        let jr = (1.0 + c.e_r * c.alpha * r) * rx
            + r * vr
            + c.e_br
                * (c.beta_r * r * bx - c.gamma_r * b * rx
                    + (c.gamma_b * vb - c.gamma_r * vr) * r * b);
        let jb = (1.0 + c.e_b * c.alpha * b) * bx
            + b * vb
            + c.e_br
                * (c.beta_b * b * rx - c.gamma_b * r * bx
                    + (c.gamma_r * vr - c.gamma_b * vb) * r * b);
        [jr, jb]
    }

    fn manufactured_problem(n: usize) -> Problem {
        let p = ModelParams {
            dim: Dimension::Two,
            eps_r: 0.15,
            eps_b: 0.25,
            d_r: 0.7,
            d_b: 1.3,
            n_r: 2.0,
            n_b: 2.0,
            potential_r: Potential::linear(1.5),
            potential_b: Potential::linear(-0.8),
            x_lo: 0.0,
            x_hi: 1.0,
        };
        Problem::new(p, n).unwrap()
    }

    fn manufactured_state(prob: &Problem) -> SystemState {
        use std::f64::consts::PI;
        SystemState::new(
            GridField::from_fn(&prob.grid, |x| 2.0 + (2.0 * PI * x).sin()),
            GridField::from_fn(&prob.grid, |x| 2.0 + (2.0 * PI * x).cos()),
            0.0,
        )
    }

    fn flux_error(scheme: FluxScheme, n: usize) -> f64 {
        let prob = manufactured_problem(n);
        let s = manufactured_state(&prob);
        let f = match scheme {
            FluxScheme::Primitive => assemble_fluxes(&prob, &s).unwrap(),
            FluxScheme::EntropyVariables => assemble_entropic_fluxes(&prob, &s).unwrap(),
        };
        let h = prob.grid.h();
        (0..n)
            .map(|k| {
                let exact = manufactured_flux(&prob, prob.grid.x(k) + 0.5 * h);
                (f.j_r[k + 1] - exact[0])
                    .abs()
                    .max((f.j_b[k + 1] - exact[1]).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn face_fluxes_are_second_order() {
        for scheme in [FluxScheme::Primitive, FluxScheme::EntropyVariables] {
            let e1 = flux_error(scheme, 40);
            let e2 = flux_error(scheme, 80);
            let e3 = flux_error(scheme, 160);
            let p1 = (e1 / e2).log2();
            let p2 = (e2 / e3).log2();
            assert!(
                (p1 - 2.0).abs() < 0.2 && (p2 - 2.0).abs() < 0.2,
                "{scheme:?}: {p1} {p2}"
            );
        }
    }

    /// Nodal divergence error on interior nodes, against a five-point derivative
    /// of the exact flux.
    fn divergence_error(scheme: FluxScheme, n: usize) -> f64 {
        let prob = manufactured_problem(n);
        let s = manufactured_state(&prob);
        let (dr, db) = rhs(&prob, &s, scheme).unwrap();
        let d = 1e-3;
        (1..n)
            .map(|i| {
                let x = prob.grid.x(i);
                let f = |x| manufactured_flux(&prob, x);
                let deriv = |k: usize| {
                    (f(x - 2.0 * d)[k] - 8.0 * f(x - d)[k] + 8.0 * f(x + d)[k] - f(x + 2.0 * d)[k])
                        / (12.0 * d)
                };
                let er = (dr[i] - prob.coeffs.d_r * deriv(0)).abs();
                let eb = (db[i] - prob.coeffs.d_b * deriv(1)).abs();
                er.max(eb)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn divergence_is_second_order_in_the_interior() {
        for scheme in [FluxScheme::Primitive, FluxScheme::EntropyVariables] {
            let e1 = divergence_error(scheme, 40);
            let e2 = divergence_error(scheme, 80);
            let p = (e1 / e2).log2();
            assert!((1.8..=2.2).contains(&p), "{scheme:?}: {p}");
        }
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let prob = Problem::new(example_params(0.4, 0.05), 10).unwrap();
        for scheme in [FluxScheme::Primitive, FluxScheme::EntropyVariables] {
            let s = random_state(&prob.grid, &mut rng, 20.0);
            let y = s.to_interleaved();
            let jac = prob.rhs_jacobian(scheme, &y);
            let m = y.len();
            let mut f0 = vec![0.0; m];
            let mut f1 = vec![0.0; m];
            for col in 0..m {
                let d = 1e-6 * y[col];
                let mut yp = y.clone();
                yp[col] += d;
                prob.rhs_interleaved(scheme, &yp, &mut f1);
                yp[col] -= 2.0 * d;
                prob.rhs_interleaved(scheme, &yp, &mut f0);
                for row in 0..m {
                    let fd = (f1[row] - f0[row]) / (2.0 * d);
                    let an = jac.get(row, col);
                    assert!(
                        (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                        "{scheme:?} ({row},{col}): fd {fd} analytic {an}"
                    );
                }
            }
        }
    }
}
