//! Small dense 2x2 algebra and a banded LU factorization with partial pivoting.
//!
//! Unknowns on the grid are interleaved as `[r_0, b_0, r_1, b_1, ...]`, so a
//! three-point stencil couples entries at most three positions apart and the
//! Jacobians of every implicit solve in this crate fit in a band with
//! `kl = ku = 3`.

use crate::error::{Error, Result};

/// Dense 2x2 matrix, row major.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2 {
        a11: 0.0,
        a12: 0.0,
        a21: 0.0,
        a22: 0.0,
    };
    pub const IDENTITY: Mat2 = Mat2 {
        a11: 1.0,
        a12: 0.0,
        a21: 0.0,
        a22: 1.0,
    };

    pub fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Self { a11, a12, a21, a22 }
    }

    pub fn diag(d1: f64, d2: f64) -> Self {
        Self::new(d1, 0.0, 0.0, d2)
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.a11, self.a21, self.a12, self.a22)
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Self::new(
            self.a22 / det,
            -self.a12 / det,
            -self.a21 / det,
            self.a11 / det,
        ))
    }

    pub fn mul_vec(&self, x: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * x[0] + self.a12 * x[1],
            self.a21 * x[0] + self.a22 * x[1],
        ]
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.a11 * o.a11 + self.a12 * o.a21,
            self.a11 * o.a12 + self.a12 * o.a22,
            self.a21 * o.a11 + self.a22 * o.a21,
            self.a21 * o.a12 + self.a22 * o.a22,
        )
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        Mat2::new(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.a11 + o.a11,
            self.a12 + o.a12,
            self.a21 + o.a21,
            self.a22 + o.a22,
        )
    }

    pub fn sub(&self, o: &Mat2) -> Mat2 {
        self.add(&o.scale(-1.0))
    }

    /// Quadratic form `x^T A y`.
    pub fn bilinear(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        let ay = self.mul_vec(y);
        x[0] * ay[0] + x[1] * ay[1]
    }

    pub fn max_abs(&self) -> f64 {
        self.a11
            .abs()
            .max(self.a12.abs())
            .max(self.a21.abs())
            .max(self.a22.abs())
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn sym_eigenvalues(&self) -> [f64; 2] {
        let off = 0.5 * (self.a12 + self.a21);
        let mean = 0.5 * (self.a11 + self.a22);
        let half_diff = 0.5 * (self.a11 - self.a22);
        let rad = half_diff.hypot(off);
        [mean - rad, mean + rad]
    }

    /// Symmetric inverse square root of a symmetric positive-definite matrix.
    pub fn sym_inv_sqrt(&self) -> Option<Mat2> {
        let off = 0.5 * (self.a12 + self.a21);
        let [l1, l2] = self.sym_eigenvalues();
        if l1 <= 0.0 {
            return None;
        }
        // Eigenvector of l2 from the first row, falling back to axis vectors.
        let (c, s) = if off.abs() <= f64::EPSILON * self.max_abs() {
            if self.a11 >= self.a22 {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            }
        } else {
            let vx = off;
            let vy = l2 - self.a11;
            let n = vx.hypot(vy);
            (vx / n, vy / n)
        };
        let f2 = 1.0 / l2.sqrt();
        let f1 = 1.0 / l1.sqrt();
        // Q diag(f1 for perpendicular, f2 for (c,s)) Q^T
        Some(Mat2::new(
            f2 * c * c + f1 * s * s,
            (f2 - f1) * c * s,
            (f2 - f1) * c * s,
            f2 * s * s + f1 * c * c,
        ))
    }
}

/// Square banded matrix in LAPACK-style column-major band storage with room
/// for the `kl` extra super-diagonals produced by row pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ldab,
            data: vec![0.0; ldab * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, row: usize, col: usize) -> usize {
        (self.kl + self.ku + row - col) + col * self.ldab
    }

    pub fn in_band(&self, row: usize, col: usize) -> bool {
        row < self.n && col < self.n && row + self.ku >= col && col + self.kl >= row
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        if self.in_band(row, col) {
            self.data[self.idx(row, col)]
        } else {
            0.0
        }
    }

    /// Adds `value` at `(row, col)`. Panics when the entry is outside the band.
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        assert!(
            self.in_band(row, col),
            "entry ({row}, {col}) outside band (kl={}, ku={})",
            self.kl,
            self.ku
        );
        let i = self.idx(row, col);
        self.data[i] += value;
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(self.in_band(row, col));
        let i = self.idx(row, col);
        self.data[i] = value;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (row, yr) in y.iter_mut().enumerate() {
            let lo = row.saturating_sub(self.kl);
            let hi = (row + self.ku).min(self.n - 1);
            *yr = (lo..=hi).map(|c| self.get(row, c) * x[c]).sum();
        }
        y
    }

    /// LU factorization with partial pivoting (the `dgbtf2` algorithm).
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let kv = self.kl + self.ku;
        let ldab = self.ldab;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = 0;
            let mut best = self.data[kv + j * ldab].abs();
            for i in 1..=km {
                let v = self.data[kv + i + j * ldab].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            ipiv[j] = j + p;
            if best == 0.0 || best <= f64::EPSILON * 1e-6 * scale {
                return Err(Error::SingularMatrix { column: j });
            }
            ju = ju.max((j + self.ku + p).min(n - 1));
            if p != 0 {
                for c in j..=ju {
                    let a = self.idx(j, c);
                    let b = self.idx(j + p, c);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[kv + j * ldab];
            for i in 1..=km {
                self.data[kv + i + j * ldab] /= pivot;
            }
            for c in (j + 1)..=ju {
                let ujc = self.data[self.idx(j, c)];
                if ujc == 0.0 {
                    continue;
                }
                for i in 1..=km {
                    let l = self.data[kv + i + j * ldab];
                    let k = self.idx(j + i, c);
                    self.data[k] -= l * ujc;
                }
            }
        }
        Ok(BandLu { m: self, ipiv })
    }
}

/// Factored band matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.m.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.m.n;
        let kl = self.m.kl;
        let kv = self.m.kl + self.m.ku;
        let ldab = self.m.ldab;
        let d = &self.m.data;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            let bj = b[j];
            for i in 1..=km {
                b[j + i] -= d[kv + i + j * ldab] * bj;
            }
        }
        for j in (0..n).rev() {
            b[j] /= d[kv + j * ldab];
            let bj = b[j];
            let lo = j.saturating_sub(kv);
            for i in lo..j {
                b[i] -= d[kv + i - j + j * ldab] * bj;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Solves the bordered system
///
/// ```text
/// [ A    B ] [x]   [f]
/// [ C^T  D ] [y] = [g]
/// ```
///
/// where `A` is factored, `B` and `C` have two columns and `D` is 2x2.
pub fn solve_bordered(
    lu: &BandLu,
    b_cols: [&[f64]; 2],
    c_cols: [&[f64]; 2],
    d: Mat2,
    f: &[f64],
    g: [f64; 2],
) -> Result<(Vec<f64>, [f64; 2])> {
    let ainv_f = lu.solve(f);
    let ainv_b0 = lu.solve(b_cols[0]);
    let ainv_b1 = lu.solve(b_cols[1]);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let schur = Mat2::new(
        d.a11 - dot(c_cols[0], &ainv_b0),
        d.a12 - dot(c_cols[0], &ainv_b1),
        d.a21 - dot(c_cols[1], &ainv_b0),
        d.a22 - dot(c_cols[1], &ainv_b1),
    );
    let rhs = [
        g[0] - dot(c_cols[0], &ainv_f),
        g[1] - dot(c_cols[1], &ainv_f),
    ];
    let y = schur
        .inverse()
        .ok_or(Error::SingularMatrix { column: lu.dim() })?
        .mul_vec(rhs);
    let x = ainv_f
        .iter()
        .zip(ainv_b0.iter().zip(&ainv_b1))
        .map(|(fi, (b0, b1))| fi - b0 * y[0] - b1 * y[1])
        .collect();
    Ok((x, y))
}

/// Weighted root-mean-square norm used by the error controllers.
pub fn wrms(v: &[f64], weights: &[f64]) -> f64 {
    let s: f64 = v
        .iter()
        .zip(weights)
        .map(|(x, w)| {
            let q = x / w;
            q * q
        })
        .sum();
    (s / v.len() as f64).sqrt()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
