//! Linear stability around stationary states.
//!
//! Perturbations `xi` of the entropy variables satisfy the pencil
//! `lambda A xi = B xi` with `A = blockdiag(w_i H_i^{-1})` (lumped dual
//! Hessian) and `B = -sum_f D_f^T M_f D_f / h` (frozen-mobility diffusion).
//! The perturbed operator of the full system is `W J H^{-1}`, where `J` is the
//! Jacobian of the semidiscrete right-hand side; its deviation from `B`,
//! divided by `eps^{2d}`, is the block `C`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::discretization::{nodal_mobility, FluxScheme, Problem, SystemState};
use crate::entropy::{EntropyDensity, EntropyKind};
use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::mobility::positivity_margin;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedOperators {
    /// Nodal blocks of `A`.
    pub a_blocks: Vec<Mat2>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// `eps_ref^{2d}`; zero for point particles.
    pub eps_2d: f64,
}

impl LinearizedOperators {
    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn a_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.dim(), self.dim());
        for (i, m) in self.a_blocks.iter().enumerate() {
            a[(2 * i, 2 * i)] = m.a11;
            a[(2 * i, 2 * i + 1)] = m.a12;
            a[(2 * i + 1, 2 * i)] = m.a21;
            a[(2 * i + 1, 2 * i + 1)] = m.a22;
        }
        a
    }

    /// `B + eps^{2d} C`.
    pub fn full(&self) -> DMatrix<f64> {
        &self.b + &self.c * self.eps_2d
    }
}

/// Assembles the pencil at an interior state. The nodal Hessians are those of
/// the order-`eps^d` entropy, whose minimizer the state approximates.
pub fn assemble_linearization(
    problem: &Problem,
    state: &SystemState,
) -> Result<LinearizedOperators> {
    problem.check_state(state)?;
    state.check_positive()?;
    let c = &problem.coeffs;
    let n = state.len();
    for i in 0..n {
        let margin = positivity_margin(c, state.r[i], state.b[i]);
        if !(margin > 0.0) {
            return Err(Error::OutsideAdmissibleSet { node: i, margin });
        }
    }
    let density = EntropyDensity::new(problem, EntropyKind::GeneralEps)?;
    let w = problem.weights();
    let h = problem.grid.h();
    let hess: Vec<Mat2> = (0..n)
        .map(|i| density.hessian(state.r[i], state.b[i]))
        .collect();
    let hinv: Vec<Mat2> = hess
        .iter()
        .enumerate()
        .map(|(i, m)| m.inverse().ok_or(Error::SingularMatrix { column: 2 * i }))
        .collect::<Result<_>>()?;
    let a_blocks: Vec<Mat2> = hinv.iter().zip(w).map(|(m, wi)| m.scale(*wi)).collect();

    let dim = 2 * n;
    let mut b = DMatrix::zeros(dim, dim);
    for k in 0..n - 1 {
        let m = nodal_mobility(c, state.node(k))
            .add(&nodal_mobility(c, state.node(k + 1)))
            .scale(0.5)
            .scale(1.0 / h);
        let m = [[m.a11, m.a12], [m.a21, m.a22]];
        for a in 0..2 {
            for bb in 0..2 {
                let v = m[a][bb];
                b[(2 * k + a, 2 * k + bb)] -= v;
                b[(2 * k + a, 2 * k + 2 + bb)] += v;
                b[(2 * k + 2 + a, 2 * k + bb)] += v;
                b[(2 * k + 2 + a, 2 * k + 2 + bb)] -= v;
            }
        }
    }

    // full operator W J H^{-1}, with J banded
    let jac = problem.rhs_jacobian(FluxScheme::EntropyVariables, &state.to_interleaved());
    let mut full = DMatrix::zeros(dim, dim);
    for row in 0..dim {
        for node in (row / 2).saturating_sub(1)..=(row / 2 + 1).min(n - 1) {
            let hi = [
                [hinv[node].a11, hinv[node].a12],
                [hinv[node].a21, hinv[node].a22],
            ];
            for col in 0..2 {
                let v: f64 = (0..2)
                    .map(|k| jac.get(row, 2 * node + k) * hi[k][col])
                    .sum();
                full[(row, 2 * node + col)] = w[row / 2] * v;
            }
        }
    }
    let eps_2d = c.eps_ref_pow() * c.eps_ref_pow();
    let c_block = if eps_2d > 0.0 {
        (&full - &b) / eps_2d
    } else {
        DMatrix::zeros(dim, dim)
    };
    Ok(LinearizedOperators {
        a_blocks,
        b,
        c: c_block,
        eps_2d,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Real parts in decreasing order, null modes removed.
    pub eigenvalues: Vec<f64>,
    /// Imaginary parts matching `eigenvalues`.
    pub imag: Vec<f64>,
    /// The two eigenvalues of smallest modulus, one per conserved mass.
    pub null_modes: [f64; 2],
    pub max_abs: f64,
}

impl Spectrum {
    pub fn leading(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max_imag(&self) -> f64 {
        self.imag.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Number of eigenvalues (null modes included) with `|lambda| <= rel * max|lambda|`.
    pub fn near_zero_count(&self, rel: f64) -> usize {
        let thr = rel * self.max_abs;
        self.null_modes.iter().filter(|v| v.abs() <= thr).count()
            + self.eigenvalues.iter().filter(|v| v.abs() <= thr).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pencil {
    /// `(B, A)`, symmetric with real spectrum.
    Unperturbed,
    /// `(B + eps^{2d} C, A)`.
    Perturbed,
}

/// `A^{-1/2} X A^{-1/2}` with `A` block diagonal.
fn reduce(ops: &LinearizedOperators, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s: Vec<Mat2> = ops
        .a_blocks
        .iter()
        .enumerate()
        .map(|(i, a)| {
            a.sym_inv_sqrt()
                .ok_or(Error::SingularMatrix { column: 2 * i })
        })
        .collect::<Result<_>>()?;
    let mut out = x.clone();
    let apply_rows = |m: &mut DMatrix<f64>| {
        for (i, b) in s.iter().enumerate() {
            for col in 0..m.ncols() {
                let (u, v) = (m[(2 * i, col)], m[(2 * i + 1, col)]);
                m[(2 * i, col)] = b.a11 * u + b.a12 * v;
                m[(2 * i + 1, col)] = b.a21 * u + b.a22 * v;
            }
        }
    };
    apply_rows(&mut out);
    out.transpose_mut();
    apply_rows(&mut out);
    Ok(out)
}

/// The `k` eigenvalues with largest real part, excluding the two null modes.
pub fn spectrum(ops: &LinearizedOperators, k: usize, pencil: Pencil) -> Result<Spectrum> {
    let (mut pairs, max_abs) = match pencil {
        Pencil::Unperturbed => {
            let mut red = reduce(ops, &ops.b)?;
            // symmetrize round-off
            let t = red.transpose();
            red = (red + t) * 0.5;
            let eig = SymmetricEigen::try_new(red, 1e-14, 0)
                .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
            let pairs: Vec<(f64, f64)> = eig.eigenvalues.iter().map(|&v| (v, 0.0)).collect();
            let max_abs = pairs.iter().fold(0.0f64, |m, p| m.max(p.0.abs()));
            (pairs, max_abs)
        }
        Pencil::Perturbed => {
            let red = reduce(ops, &ops.full())?;
            let schur = nalgebra::linalg::Schur::try_new(red, 1e-14, 0)
                .ok_or_else(|| Error::Eigen("Schur decomposition did not converge".into()))?;
            let pairs: Vec<(f64, f64)> = schur
                .complex_eigenvalues()
                .iter()
                .map(|z| (z.re, z.im))
                .collect();
            let max_abs = pairs.iter().fold(0.0f64, |m, p| m.max(p.0.hypot(p.1)));
            (pairs, max_abs)
        }
    };
    if pairs.len() < 3 || pairs.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(Error::Eigen("non-finite or too few eigenvalues".into()));
    }
    pairs.sort_by(|a, b| a.0.hypot(a.1).total_cmp(&b.0.hypot(b.1)));
    let null_modes = [pairs[0].0, pairs[1].0];
    let mut rest = pairs.split_off(2);
    rest.sort_by(|a, b| b.0.total_cmp(&a.0));
    rest.truncate(k);
    Ok(Spectrum {
        eigenvalues: rest.iter().map(|p| p.0).collect(),
        imag: rest.iter().map(|p| p.1).collect(),
        null_modes,
        max_abs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::GridField;
    use crate::entropy::dual_hessian;
    use crate::model::{Dimension, ModelParams};
    use crate::stationary::{
        equilibrate_longtime, solve_entropy_stationary, LongtimeOptions, NewtonOptions,
    };
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_problem(eps: f64, n: usize) -> Problem {
        let mut p = ModelParams::symmetric(Dimension::Two, eps, 1.0, 1.0, 0.0, 0.0);
        p.x_lo = 0.0;
        p.x_hi = 1.0;
        Problem::new(p, n).unwrap()
    }

    fn uniform(p: &Problem, r: f64, b: f64) -> SystemState {
        SystemState::new(
            GridField::constant(&p.grid, r),
            GridField::constant(&p.grid, b),
            0.0,
        )
    }

    #[test]
    fn uniform_point_particles_give_scaled_laplacian() {
        let p = unit_problem(0.0, 10);
        let ops = assemble_linearization(&p, &uniform(&p, 2.0, 3.0)).unwrap();
        let h = p.grid.h();
        for i in 1..p.n_nodes() - 1 {
            assert_relative_eq!(ops.b[(2 * i, 2 * i)], -2.0 * 2.0 / h, max_relative = 1e-14);
            assert_relative_eq!(ops.b[(2 * i, 2 * i + 2)], 2.0 / h, max_relative = 1e-14);
            assert_relative_eq!(
                ops.b[(2 * i + 1, 2 * i + 1)],
                -2.0 * 3.0 / h,
                max_relative = 1e-14
            );
            assert_eq!(ops.b[(2 * i, 2 * i + 1)], 0.0);
        }
        assert!(ops.c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn a_blocks_invert_the_dual_hessian() {
        let p = unit_problem(0.1, 12);
        let s = uniform(&p, 10.0, 20.0);
        let ops = assemble_linearization(&p, &s).unwrap();
        let hess = dual_hessian(&p, &s, 0.0).unwrap();
        for (i, (a, hm)) in ops.a_blocks.iter().zip(&hess).enumerate() {
            let prod = a.mul(hm).scale(1.0 / p.weights()[i]);
            assert!(prod.sub(&Mat2::IDENTITY).max_abs() < 1e-13);
        }
    }

    #[test]
    fn b_is_symmetric_negative_semidefinite_with_constant_null_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = unit_problem(0.1, 30);
        let s = SystemState::new(
            GridField::from_fn(&p.grid, |x| 20.0 + 5.0 * (4.0 * x).sin()),
            GridField::from_fn(&p.grid, |x| 15.0 + 4.0 * (3.0 * x).cos()),
            0.0,
        );
        let ops = assemble_linearization(&p, &s).unwrap();
        assert!((&ops.b - ops.b.transpose()).amax() <= 1e-12 * ops.b.amax());
        for sp in 0..2 {
            let x = DMatrix::from_fn(ops.dim(), 1, |i, _| if i % 2 == sp { 1.0 } else { 0.0 });
            assert!((&ops.b * x).amax() <= 1e-12 * ops.b.amax());
        }
        for _ in 0..100 {
            let x = DMatrix::from_fn(ops.dim(), 1, |_, _| rng.gen_range(-1.0..1.0));
            assert!((x.transpose() * &ops.b * &x)[(0, 0)] <= 1e-12);
        }
    }

    #[test]
    fn pure_diffusion_reproduces_neumann_eigenvalue() {
        let p = unit_problem(0.0, 200);
        let ops = assemble_linearization(&p, &uniform(&p, 1.0, 1.0)).unwrap();
        let eig = spectrum(&ops, 4, Pencil::Unperturbed).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        assert_relative_eq!(eig.leading(), -pi2, max_relative = 0.05);
        // both species carry the same mode
        assert_relative_eq!(eig.eigenvalues[1], -pi2, max_relative = 0.05);
        assert_eq!(eig.near_zero_count(1e-8), 2);
    }

    #[test]
    fn symmetric_equilibrium_is_linearly_stable() {
        let mut params = ModelParams::symmetric(Dimension::Two, 0.01, 200.0, 200.0, 2.0, 1.0);
        params.x_lo = -0.5;
        let p = Problem::new(params, 60).unwrap();
        let stat = solve_entropy_stationary(&p, &NewtonOptions::default()).unwrap();
        let ops = assemble_linearization(&p, &stat.state()).unwrap();
        assert!(
            ops.c.amax() * ops.eps_2d <= 1e-9 * ops.b.amax(),
            "{}",
            ops.c.amax()
        );
        let eig = spectrum(&ops, usize::MAX, Pencil::Unperturbed).unwrap();
        assert!(eig.eigenvalues.iter().all(|v| *v < 0.0));
        assert_eq!(eig.near_zero_count(1e-8), 2);
        let pert = spectrum(&ops, 3, Pencil::Perturbed).unwrap();
        assert!(pert.max_imag() <= 1e-10 * pert.max_abs);
        assert_relative_eq!(pert.leading(), eig.leading(), max_relative = 1e-8);
    }

    #[test]
    fn perturbation_gap_scales_like_eps_to_the_2d() {
        let leading_gap = |eps: f64| {
            let mut params = ModelParams::symmetric(Dimension::Two, eps, 200.0, 200.0, 2.0, 1.0);
            params.d_r = 2.0;
            let p = Problem::new(params, 40).unwrap();
            let eq = equilibrate_longtime(&p, None, &LongtimeOptions::default()).unwrap();
            let ops = assemble_linearization(&p, &eq.state).unwrap();
            let a = spectrum(&ops, 1, Pencil::Unperturbed).unwrap();
            let b = spectrum(&ops, 1, Pencil::Perturbed).unwrap();
            assert!(b.eigenvalues[0] < 0.0);
            (b.leading() - a.leading()).abs()
        };
        let eps = [0.005, 0.01, 0.02];
        let gaps: Vec<f64> = eps.iter().map(|e| leading_gap(*e)).collect();
        let slope = crate::stationary::fit_loglog_slope(&eps, &gaps).unwrap();
        assert!(slope >= 3.0, "{slope} {gaps:?}");
    }

    #[test]
    fn boundary_contact_is_rejected() {
        let p = unit_problem(0.1, 10);
        let g = p.coeffs.gamma_bar;
        let s = uniform(&p, 0.6 / g, 0.4 / g);
        assert!(matches!(
            assemble_linearization(&p, &s),
            Err(Error::OutsideAdmissibleSet { .. })
        ));
    }
}
