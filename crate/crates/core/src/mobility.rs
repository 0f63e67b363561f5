//! Mobility matrices, the admissible set and the defect vector separating the
//! general system from the gradient flow it induces.

use serde::{Deserialize, Serialize};

use crate::discretization::{nodal_mobility, Problem, SystemState};
use crate::entropy::ExpansionOrder;
use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::model::Coefficients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityKind {
    Symmetric,
    GeneralEps,
    Expansion(ExpansionOrder),
}

/// `{r >= 0, b >= 0, r + b <= 1 / gamma_bar}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleSet {
    pub gamma_bar: f64,
}

impl AdmissibleSet {
    pub fn new(coeffs: &Coefficients) -> Self {
        Self {
            gamma_bar: coeffs.gamma_bar,
        }
    }

    pub fn rho(r: f64, b: f64) -> f64 {
        r + b
    }

    pub fn contains(&self, r: f64, b: f64) -> bool {
        r >= 0.0 && b >= 0.0 && self.gamma_bar * (r + b) <= 1.0
    }

    pub fn contains_interior(&self, r: f64, b: f64) -> bool {
        r > 0.0 && b > 0.0 && self.gamma_bar * (r + b) < 1.0
    }
}

/// `M_0 = diag(D_r r, D_b b)`.
pub fn leading_mobility(c: &Coefficients, s: [f64; 2]) -> Mat2 {
    Mat2::diag(c.d_r * s[0], c.d_b * s[1])
}

/// `M_1 = a_br r b [[-D_r g_r, D_r g_b], [D_b g_r, -D_b g_b]]`.
pub fn first_order_mobility(c: &Coefficients, s: [f64; 2]) -> Mat2 {
    let k = c.a_br * s[0] * s[1];
    Mat2::new(
        -k * c.d_r * c.gamma_r,
        k * c.d_r * c.gamma_b,
        k * c.d_b * c.gamma_r,
        -k * c.d_b * c.gamma_b,
    )
}

fn symmetric_mobility(c: &Coefficients, s: [f64; 2]) -> Mat2 {
    let [r, b] = s;
    let g = c.gamma_bar;
    Mat2::new(r * (1.0 - g * b), g * r * b, g * r * b, b * (1.0 - g * r)).scale(c.d_r)
}

/// Nodal mobility matrices.
pub fn mobility(problem: &Problem, state: &SystemState, kind: MobilityKind) -> Result<Vec<Mat2>> {
    problem.check_state(state)?;
    let c = &problem.coeffs;
    if kind == MobilityKind::Symmetric && !problem.params.is_symmetric() {
        return Err(Error::AsymmetricParameters);
    }
    Ok((0..state.len())
        .map(|i| {
            let s = state.node(i);
            match kind {
                MobilityKind::Symmetric => symmetric_mobility(c, s),
                MobilityKind::GeneralEps => nodal_mobility(c, s),
                MobilityKind::Expansion(ExpansionOrder::Leading) => leading_mobility(c, s),
                MobilityKind::Expansion(ExpansionOrder::First) => {
                    leading_mobility(c, s).add(&first_order_mobility(c, s).scale(c.eps_ref_pow()))
                }
            }
        })
        .collect())
}

/// `1 - eps_br^d (gamma_r b + gamma_b r)`, which reduces to `1 - gamma_bar rho`
/// for equal diffusivities. Together with `r, b > 0` it decides definiteness,
/// since `det M = D_r D_b r b` times this margin.
pub fn positivity_margin(c: &Coefficients, r: f64, b: f64) -> f64 {
    1.0 - c.e_br * (c.gamma_r * b + c.gamma_b * r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityReport {
    pub flags: Vec<bool>,
    pub margins: Vec<f64>,
}

impl PositivityReport {
    pub fn all(&self) -> bool {
        self.flags.iter().all(|&f| f)
    }

    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// First node that fails, if any.
    pub fn first_failure(&self) -> Option<usize> {
        self.flags.iter().position(|&f| !f)
    }
}

pub fn is_positive_definite(problem: &Problem, state: &SystemState) -> PositivityReport {
    let c = &problem.coeffs;
    let (flags, margins) = state
        .r
        .iter()
        .zip(state.b.iter())
        .map(|(&r, &b)| {
            let m = positivity_margin(c, r, b);
            (r > 0.0 && b > 0.0 && m > 0.0, m)
        })
        .unzip();
    PositivityReport { flags, margins }
}

/// Values and first derivatives at one point, including the rescaled
/// potential gradients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointJet {
    pub r: f64,
    pub b: f64,
    pub dr: f64,
    pub db: f64,
    pub dv_r: f64,
    pub dv_b: f64,
}

/// Nodal jets from centred differences (one-sided at the walls).
pub fn nodal_jets(problem: &Problem, state: &SystemState) -> Vec<PointJet> {
    let n = state.len();
    let h = problem.grid.h();
    let nodes = problem.grid.nodes();
    let diff = |f: &[f64], i: usize| match i {
        0 => (f[1] - f[0]) / h,
        i if i == n - 1 => (f[n - 1] - f[n - 2]) / h,
        _ => (f[i + 1] - f[i - 1]) / (2.0 * h),
    };
    let slope = |pot: &crate::model::Potential, d: f64, i: usize| {
        let (a, b) = (nodes[i.saturating_sub(1)], nodes[(i + 1).min(n - 1)]);
        pot.mean_slope(a, b) / d
    };
    (0..n)
        .map(|i| PointJet {
            r: state.r[i],
            b: state.b[i],
            dr: diff(&state.r, i),
            db: diff(&state.b, i),
            dv_r: slope(&problem.params.potential_r, problem.params.d_r, i),
            dv_b: slope(&problem.params.potential_b, problem.params.d_b, i),
        })
        .collect()
}

/// Defect vector `G` (without the `eps^{2d}` prefactor).
pub fn g_vector_at(c: &Coefficients, jet: &PointJet) -> [f64; 2] {
    let k = c.alpha * c.a_br * jet.r * jet.b;
    let lin = c.theta_r * jet.dr - c.theta_b * jet.db;
    [k * c.gamma_r * lin, -k * c.gamma_b * lin]
}

pub fn g_vector(c: &Coefficients, jets: &[PointJet]) -> Vec<[f64; 2]> {
    jets.iter().map(|j| g_vector_at(c, j)).collect()
}

/// Flux of the general PDE at a point, diffusivities included.
pub fn pde_flux(c: &Coefficients, j: &PointJet) -> [f64; 2] {
    let cross = c.gamma_b * j.dv_b - c.gamma_r * j.dv_r;
    let fr = (1.0 + c.e_r * c.alpha * j.r) * j.dr
        + j.r * j.dv_r
        + c.e_br * (c.beta_r * j.r * j.db - c.gamma_r * j.b * j.dr + cross * j.r * j.b);
    let fb = (1.0 + c.e_b * c.alpha * j.b) * j.db
        + j.b * j.dv_b
        + c.e_br * (c.beta_b * j.b * j.dr - c.gamma_b * j.r * j.db - cross * j.r * j.b);
    [c.d_r * fr, c.d_b * fb]
}

/// Flux of the asymptotic gradient flow, `M_eps grad(dE_eps) - eps^{2d} G`.
pub fn agf_flux(c: &Coefficients, j: &PointJet) -> [f64; 2] {
    let grad_u = j.dr / j.r + j.dv_r + c.alpha * (c.e_r * j.dr + c.e_br * j.db);
    let grad_v = j.db / j.b + j.dv_b + c.alpha * (c.e_b * j.db + c.e_br * j.dr);
    let m = nodal_mobility(c, [j.r, j.b]).mul_vec([grad_u, grad_v]);
    let g = g_vector_at(c, j);
    let e2 = c.eps_ref_pow() * c.eps_ref_pow();
    [m[0] - e2 * g[0], m[1] - e2 * g[1]]
}

/// Difference between the PDE flux and the asymptotic-gradient-flow flux.
pub fn agf_residual(c: &Coefficients, jets: &[PointJet]) -> Vec<[f64; 2]> {
    jets.iter()
        .map(|j| {
            let a = pde_flux(c, j);
            let b = agf_flux(c, j);
            [a[0] - b[0], a[1] - b[1]]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::GridField;
    use crate::model::{Dimension, ModelParams, Potential};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(eps_r: f64, eps_b: f64, d_r: f64, d_b: f64) -> Problem {
        let p = ModelParams {
            dim: Dimension::Two,
            eps_r,
            eps_b,
            d_r,
            d_b,
            n_r: 1.0,
            n_b: 1.0,
            potential_r: Potential::linear(2.0),
            potential_b: Potential::linear(-1.0),
            x_lo: 0.0,
            x_hi: 1.0,
        };
        Problem::new(p, 8).unwrap()
    }

    fn uniform(p: &Problem, r: f64, b: f64) -> SystemState {
        SystemState::new(
            GridField::constant(&p.grid, r),
            GridField::constant(&p.grid, b),
            0.0,
        )
    }

    /// Symmetric problem with a prescribed `gamma_bar` (d = 2, gamma = pi/2).
    fn with_gamma_bar(gb: f64) -> Problem {
        let eps = (gb / (std::f64::consts::PI / 2.0)).sqrt();
        problem(eps, eps, 1.0, 1.0)
    }

    #[test]
    fn vacuum_gives_zero_mobility() {
        let p = problem(0.03, 0.05, 0.5, 1.0);
        let m = mobility(&p, &uniform(&p, 0.0, 0.0), MobilityKind::GeneralEps).unwrap();
        assert!(m.iter().all(|x| *x == Mat2::ZERO));
    }

    #[test]
    fn symmetric_reference_values() {
        let p = with_gamma_bar(0.5);
        assert_relative_eq!(p.coeffs.gamma_bar, 0.5, max_relative = 1e-14);
        let s = uniform(&p, 0.1, 0.1);
        let m = mobility(&p, &s, MobilityKind::Symmetric).unwrap()[0];
        let expected = Mat2::new(0.095, 0.005, 0.005, 0.095);
        assert!(m.sub(&expected).max_abs() < 1e-15);
        assert_relative_eq!(m.det(), 0.009, max_relative = 1e-13);
        assert_relative_eq!(m.det(), 0.1 * 0.1 * (1.0 - 0.5 * 0.2), max_relative = 1e-13);
    }

    #[test]
    fn symmetric_kind_equals_general_kind_for_symmetric_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = with_gamma_bar(0.3);
        let s = SystemState::new(
            (0..p.n_nodes()).map(|_| rng.gen_range(0.0..1.5)).collect(),
            (0..p.n_nodes()).map(|_| rng.gen_range(0.0..1.5)).collect(),
            0.0,
        );
        let a = mobility(&p, &s, MobilityKind::Symmetric).unwrap();
        let b = mobility(&p, &s, MobilityKind::GeneralEps).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.sub(y).max_abs() <= 1e-15 * x.max_abs().max(1.0));
        }
        let asym = problem(0.01, 0.01, 0.2, 1.0);
        assert_eq!(
            mobility(&asym, &uniform(&asym, 1.0, 1.0), MobilityKind::Symmetric),
            Err(Error::AsymmetricParameters)
        );
    }

    #[test]
    fn determinant_identity_holds_to_machine_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let gb = rng.gen_range(0.05..3.0);
            let p = with_gamma_bar(gb);
            let (r, b) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
            let m = mobility(&p, &uniform(&p, r, b), MobilityKind::Symmetric).unwrap()[0];
            let expected = r * b * (1.0 - p.coeffs.gamma_bar * (r + b));
            let scale = (m.a11 * m.a22)
                .abs()
                .max((m.a12 * m.a21).abs())
                .max(f64::MIN_POSITIVE);
            let err = (m.det() - expected).abs() / scale;
            assert!(err <= 16.0 * f64::EPSILON, "{err:e}");
        }
    }

    #[test]
    fn expansion_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = problem(0.03, 0.05, 0.4, 1.7);
        let s = SystemState::new(
            (0..p.n_nodes()).map(|_| rng.gen_range(0.0..50.0)).collect(),
            (0..p.n_nodes()).map(|_| rng.gen_range(0.0..50.0)).collect(),
            0.0,
        );
        let full = mobility(&p, &s, MobilityKind::GeneralEps).unwrap();
        let exp = mobility(&p, &s, MobilityKind::Expansion(ExpansionOrder::First)).unwrap();
        for (a, b) in full.iter().zip(&exp) {
            assert!(a.sub(b).max_abs() <= 1e-14 * a.max_abs());
        }
        // general mobility is symmetric because D_r gamma_b = D_b gamma_r
        assert!(full
            .iter()
            .all(|m| (m.a12 - m.a21).abs() <= 1e-14 * m.max_abs()));
    }

    #[test]
    fn half_filling_and_packing_boundary() {
        let p = with_gamma_bar(0.8);
        let g = p.coeffs.gamma_bar;
        let rep = is_positive_definite(&p, &uniform(&p, 0.25 / g, 0.25 / g));
        assert!(rep.all());
        assert!(rep.margins.iter().all(|m| (m - 0.5).abs() < 1e-14));
        let mut s = uniform(&p, 0.25 / g, 0.25 / g);
        s.r[3] = 0.75 / g;
        let rep = is_positive_definite(&p, &s);
        assert!(!rep.flags[3]);
        assert_eq!(rep.first_failure(), Some(3));
        assert!(rep.margins[3].abs() < 1e-14);
        let set = AdmissibleSet::new(&p.coeffs);
        assert!(set.contains(0.75 / g * (1.0 - 1e-15), 0.25 / g));
        assert!(!set.contains_interior(0.75 / g, 0.25 / g));
    }

    #[test]
    fn interior_states_have_positive_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let p = problem(
                rng.gen_range(0.01..0.3),
                rng.gen_range(0.01..0.3),
                rng.gen_range(0.1..3.0),
                rng.gen_range(0.1..3.0),
            );
            let c = &p.coeffs;
            let (r, b) = (rng.gen_range(1e-3..5.0), rng.gen_range(1e-3..5.0));
            let m = nodal_mobility(c, [r, b]);
            if positivity_margin(c, r, b) > 0.0 {
                let [lmin, _] = m.sym_eigenvalues();
                assert!(lmin > 0.0, "{m:?}");
            } else {
                assert!(m.det() <= 0.0);
            }
        }
    }

    fn random_jet(rng: &mut ChaCha8Rng) -> PointJet {
        PointJet {
            r: rng.gen_range(0.1..40.0),
            b: rng.gen_range(0.1..40.0),
            dr: rng.gen_range(-50.0..50.0),
            db: rng.gen_range(-50.0..50.0),
            dv_r: rng.gen_range(-5.0..5.0),
            dv_b: rng.gen_range(-5.0..5.0),
        }
    }

    #[test]
    fn defect_vanishes_for_symmetric_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = problem(0.02, 0.02, 0.7, 0.7);
        for _ in 0..100 {
            let g = g_vector_at(&p.coeffs, &random_jet(&mut rng));
            assert_eq!(g, [0.0, 0.0]);
        }
        let asym = problem(0.02, 0.03, 0.7, 1.0);
        let flat = nodal_jets(&asym, &uniform(&asym, 2.0, 3.0));
        assert!(g_vector(&asym.coeffs, &flat)
            .iter()
            .all(|g| g[0] == 0.0 && g[1] == 0.0));
    }

    #[test]
    fn defect_single_node_formula() {
        let p = problem(0.01, 0.01, 0.2, 1.0);
        let c = &p.coeffs;
        let jet = PointJet {
            r: 1.0,
            b: 1.0,
            dr: 1.0,
            ..Default::default()
        };
        let g = g_vector_at(c, &jet);
        assert_relative_eq!(
            g[0],
            c.alpha * c.a_br * c.gamma_r * c.theta_r,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            g[1],
            -c.alpha * c.a_br * c.gamma_b * c.theta_r,
            max_relative = 1e-15
        );
    }

    #[test]
    fn defect_is_linear_in_theta() {
        // the theta_r part at fixed theta_b, through a manual coefficient edit
        let p = problem(0.01, 0.012, 0.3, 1.0);
        let jet = PointJet {
            r: 2.0,
            b: 3.0,
            dr: 1.5,
            db: 0.0,
            ..Default::default()
        };
        let mut c = p.coeffs;
        let g1 = g_vector_at(&c, &jet);
        c.theta_r *= 2.0;
        let g2 = g_vector_at(&c, &jet);
        assert_relative_eq!(g2[0], 2.0 * g1[0], max_relative = 1e-15);
        assert_relative_eq!(g2[1], 2.0 * g1[1], max_relative = 1e-15);
    }

    #[test]
    fn flux_decomposition_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let p = problem(
                rng.gen_range(0.0..0.05),
                rng.gen_range(0.0..0.05),
                rng.gen_range(0.1..3.0),
                rng.gen_range(0.1..3.0),
            );
            let jet = random_jet(&mut rng);
            let a = pde_flux(&p.coeffs, &jet);
            let res = agf_residual(&p.coeffs, &[jet])[0];
            let scale = a[0]
                .abs()
                .max(a[1].abs())
                .max(jet.r.max(jet.b) * jet.dr.abs().max(1.0));
            assert!(
                res[0].abs().max(res[1].abs()) <= 1e-12 * scale,
                "{res:?} vs {a:?}"
            );
        }
    }

    #[test]
    fn point_particle_fluxes_coincide() {
        let p = problem(0.0, 0.0, 0.4, 1.3);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let jet = random_jet(&mut rng);
        let res = agf_residual(&p.coeffs, &[jet])[0];
        let a = pde_flux(&p.coeffs, &jet);
        assert!(res[0].abs() <= 1e-14 * a[0].abs().max(1.0));
        assert!(res[1].abs() <= 1e-14 * a[1].abs().max(1.0));
    }
}
