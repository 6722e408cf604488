//! Exact 3-vector and 3x3-matrix algebra.
//!
//! Everything here is plain `f64` value arithmetic: determinant, adjugate,
//! cofactor, and the symmetric bilinear bracket `<xi, eta>` obtained by
//! polarising the adjugate,
//!
//! ```text
//! <xi, eta>_ij = eps_jab eps_icd xi_ac eta_bd
//! adj(xi + eta) = adj xi + <xi, eta> + adj eta
//! ```
//!
//! The bracket is computed from the alternating-symbol contraction itself, so
//! the difference-of-adjugates identity above is something the tests check
//! rather than something assumed.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, AddAssign, Div, Index, IndexMut, Mul, Neg, Sub, SubAssign};

/// Tolerance used when a caller promises a unit vector.
pub const UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);
    pub const E1: Vec3 = Vec3([1.0, 0.0, 0.0]);
    pub const E2: Vec3 = Vec3([0.0, 1.0, 0.0]);
    pub const E3: Vec3 = Vec3([0.0, 0.0, 1.0]);

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    #[inline]
    pub fn basis(i: usize) -> Self {
        let mut v = [0.0; 3];
        v[i] = 1.0;
        Vec3(v)
    }

    #[inline]
    pub fn dot(self, other: Vec3) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        let a = self.0;
        let b = o.0;
        Vec3([
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ])
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// `v / |v|`, or `None` for the zero vector.
    #[inline]
    pub fn unit(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0).then(|| self / n)
    }

    #[inline]
    pub fn outer(self, other: Vec3) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = self.0[i] * other.0[j];
            }
        }
        Mat3(m)
    }

    pub fn max_abs(self) -> f64 {
        self.0.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    /// Any orthonormal pair completing `self` (assumed unit) to a right-handed frame.
    pub fn orthonormal_complement(self) -> (Vec3, Vec3) {
        let helper = if self.0[0].abs() < 0.9 { Vec3::E1 } else { Vec3::E2 };
        let t1 = (helper - self * helper.dot(self)).unit().expect("non-degenerate helper");
        let t2 = self.cross(t1);
        (t1, t2)
    }
}

impl fmt::Debug for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6e}, {:.6e}, {:.6e})", self.0[0], self.0[1], self.0[2])
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vec3 {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3([self.0[0] / s, self.0[1] / s, self.0[2] / s])
    }
}

/// Row-major 3x3 matrix: `m.0[i][j]` is row `i`, column `j`.
#[derive(Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    #[inline]
    pub const fn new(rows: [[f64; 3]; 3]) -> Self {
        Mat3(rows)
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        Mat3([[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]])
    }

    pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Mat3([
            [c0[0], c1[0], c2[0]],
            [c0[1], c1[1], c2[1]],
            [c0[2], c1[2], c2[2]],
        ])
    }

    #[inline]
    pub fn row(&self, i: usize) -> Vec3 {
        Vec3(self.0[i])
    }

    #[inline]
    pub fn col(&self, j: usize) -> Vec3 {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    #[inline]
    pub fn transpose(&self) -> Mat3 {
        let a = &self.0;
        Mat3([
            [a[0][0], a[1][0], a[2][0]],
            [a[0][1], a[1][1], a[2][1]],
            [a[0][2], a[1][2], a[2][2]],
        ])
    }

    #[inline]
    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    #[inline]
    pub fn det(&self) -> f64 {
        let a = &self.0;
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    /// Cofactor matrix; `cof(A)_ij` is the signed minor of entry `(i, j)`.
    #[inline]
    pub fn cofactor(&self) -> Mat3 {
        let a = &self.0;
        Mat3([
            [
                a[1][1] * a[2][2] - a[1][2] * a[2][1],
                a[1][2] * a[2][0] - a[1][0] * a[2][2],
                a[1][0] * a[2][1] - a[1][1] * a[2][0],
            ],
            [
                a[0][2] * a[2][1] - a[0][1] * a[2][2],
                a[0][0] * a[2][2] - a[0][2] * a[2][0],
                a[0][1] * a[2][0] - a[0][0] * a[2][1],
            ],
            [
                a[0][1] * a[1][2] - a[0][2] * a[1][1],
                a[0][2] * a[1][0] - a[0][0] * a[1][2],
                a[0][0] * a[1][1] - a[0][1] * a[1][0],
            ],
        ])
    }

    /// `adj A = (cof A)^T`, so that `adj(A) A = A adj(A) = det(A) 1`.
    #[inline]
    pub fn adjugate(&self) -> Mat3 {
        self.cofactor().transpose()
    }

    pub fn inverse(&self) -> Option<Mat3> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(self.adjugate() * (1.0 / d))
    }

    /// Frobenius inner product `tr(A^T B)`.
    #[inline]
    pub fn dot(&self, other: &Mat3) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += self.0[i][j] * other.0[i][j];
            }
        }
        s
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3([self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v)])
    }
}

impl fmt::Debug for Mat3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.0.iter().map(|r| Vec3(*r)))
            .finish()
    }
}

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat3 {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    #[inline]
    fn add(self, o: Mat3) -> Mat3 {
        let mut m = self.0;
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += o.0[i][j];
            }
        }
        Mat3(m)
    }
}

impl AddAssign for Mat3 {
    #[inline]
    fn add_assign(&mut self, o: Mat3) {
        *self = *self + o;
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    #[inline]
    fn sub(self, o: Mat3) -> Mat3 {
        let mut m = self.0;
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] -= o.0[i][j];
            }
        }
        Mat3(m)
    }
}

impl Neg for Mat3 {
    type Output = Mat3;
    #[inline]
    fn neg(self) -> Mat3 {
        self * -1.0
    }
}

impl Mul<f64> for Mat3 {
    type Output = Mat3;
    #[inline]
    fn mul(self, s: f64) -> Mat3 {
        let mut m = self.0;
        for row in m.iter_mut() {
            for e in row.iter_mut() {
                *e *= s;
            }
        }
        Mat3(m)
    }
}

impl Mul<Mat3> for f64 {
    type Output = Mat3;
    #[inline]
    fn mul(self, m: Mat3) -> Mat3 {
        m * self
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        self.mul_vec(v)
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    #[inline]
    fn mul(self, o: Mat3) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j] + self.0[i][2] * o.0[2][j];
            }
        }
        Mat3(m)
    }
}

/// Alternating symbol on `{0, 1, 2}`.
#[inline]
pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Nonzero `(a, b, sign)` with `eps_{i a b} = sign`.
#[inline]
fn eps_pairs(i: usize) -> [(usize, usize, f64); 2] {
    let a = (i + 1) % 3;
    let b = (i + 2) % 3;
    [(a, b, 1.0), (b, a, -1.0)]
}

pub fn adjugate(a: &Mat3) -> Mat3 {
    a.adjugate()
}

/// The polarised adjugate `<xi, eta>_ij = eps_jab eps_icd xi_ac eta_bd`.
///
/// Evaluated term by term from the alternating symbols (only the nonzero
/// permutations are visited).
pub fn bracket(xi: &Mat3, eta: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (a, b, s_j) in eps_pairs(j) {
                for (c, d, s_i) in eps_pairs(i) {
                    s += s_j * s_i * xi.0[a][c] * eta.0[b][d];
                }
            }
            *e = s;
        }
    }
    Mat3(out)
}

/// Brute-force version of [`bracket`] over all 81 index tuples; kept for tests.
pub fn bracket_full_sum(xi: &Mat3, eta: &Mat3) -> Mat3 {
    let mut out = Mat3::ZERO;
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        for d in 0..3 {
                            s += levi_civita(j, a, b) * levi_civita(i, c, d) * xi.0[a][c] * eta.0[b][d];
                        }
                    }
                }
            }
            out.0[i][j] = s;
        }
    }
    out
}

/// `eps_icd S_cd`, which is twice the axial vector of the antisymmetric part of `S`.
pub fn epsilon_contract(s: &Mat3) -> Vec3 {
    let mut v = Vec3::ZERO;
    for i in 0..3 {
        for (c, d, sign) in eps_pairs(i) {
            v.0[i] += sign * s.0[c][d];
        }
    }
    v
}

fn renormalize(v: Vec3) -> Vec3 {
    let n = v.norm();
    debug_assert!(
        (n - 1.0).abs() <= 1e-6,
        "expected a unit vector, got |v| = {n}"
    );
    if (n - 1.0).abs() <= UNIT_TOLERANCE || n == 0.0 {
        v
    } else {
        v / n
    }
}

/// `adj F - adj F (v (x) v) - <F, v (x) F^T v>`; vanishes for every `F` and unit `v`.
pub fn unit_split_residual(f: &Mat3, v: Vec3) -> Mat3 {
    let v = renormalize(v);
    let adj = f.adjugate();
    adj - adj * v.outer(v) - bracket(f, &v.outer(f.transpose() * v))
}

/// `adj F tau - <F, v (x) F^T v> tau` for `tau` orthogonal to `v`.
pub fn tangential_residual(f: &Mat3, v: Vec3, tau: Vec3) -> Vec3 {
    let v = renormalize(v);
    let tau = tau - v * tau.dot(v);
    f.adjugate() * tau - bracket(f, &v.outer(f.transpose() * v)) * tau
}

/// `cof F . (v (x) F^T v) - det F`; vanishes for unit `v`.
pub fn cofactor_identity_residual(f: &Mat3, v: Vec3) -> f64 {
    let v = renormalize(v);
    f.cofactor().dot(&v.outer(f.transpose() * v)) - f.det()
}

/// `<F, v (x) F^T v> v`, which is zero for unit `v`.
pub fn bracket_kills_direction(f: &Mat3, v: Vec3) -> Vec3 {
    let v = renormalize(v);
    bracket(f, &v.outer(f.transpose() * v)) * v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Mat3 {
        Mat3::new([[0.3, -1.2, 0.7], [1.1, 0.4, -0.5], [-0.8, 0.9, 1.6]])
    }

    #[test]
    fn adjugate_of_identity_and_diagonal() {
        assert_eq!(adjugate(&Mat3::IDENTITY), Mat3::IDENTITY);
        assert_eq!(adjugate(&Mat3::diag(1.0, 2.0, 3.0)), Mat3::diag(6.0, 3.0, 2.0));
    }

    #[test]
    fn adjugate_of_rank_one_is_zero() {
        let u = Vec3::new(0.3, -2.0, 1.5);
        let v = Vec3::new(1.1, 0.2, -0.7);
        assert!(adjugate(&u.outer(v)).max_abs() < 1e-15);
    }

    #[test]
    fn adjugate_inverts_up_to_det() {
        let a = sample();
        let d = a.det();
        assert!((a.adjugate() * a - Mat3::IDENTITY * d).max_abs() < 1e-13);
        assert!((a * a.adjugate() - Mat3::IDENTITY * d).max_abs() < 1e-13);
    }

    #[test]
    fn bracket_of_identity_with_itself() {
        assert!((bracket(&Mat3::IDENTITY, &Mat3::IDENTITY) - Mat3::IDENTITY * 2.0).max_abs() < 1e-15);
    }

    #[test]
    fn bracket_matches_full_epsilon_sum() {
        let a = sample();
        let b = sample().transpose() * 0.5 + Mat3::IDENTITY;
        assert!((bracket(&a, &b) - bracket_full_sum(&a, &b)).max_abs() < 1e-14);
    }

    #[test]
    fn bracket_with_identity_and_rank_one() {
        let u = Vec3::new(0.3, -2.0, 1.5);
        let v = Vec3::new(1.1, 0.2, -0.7);
        let lhs = bracket(&Mat3::IDENTITY, &u.outer(v));
        let rhs = Mat3::IDENTITY * u.dot(v) - u.outer(v);
        assert!((lhs - rhs).max_abs() < 1e-14);
    }

    #[test]
    fn unit_split_on_diagonal_matrix() {
        // adj diag(2,3,5) = diag(15,10,6); v = e2 gives v (x) F^T v = 3 e2 (x) e2.
        // <F, 3 e2(x)e2> = diag(15, 0, 6) by the epsilon formula, so the residual is zero.
        let f = Mat3::diag(2.0, 3.0, 5.0);
        let b = bracket(&f, &(Vec3::E2.outer(Vec3::E2) * 3.0));
        assert!((b - Mat3::diag(15.0, 0.0, 6.0)).max_abs() < 1e-14);
        assert!(unit_split_residual(&f, Vec3::E2).max_abs() < 1e-14);
        assert!(unit_split_residual(&Mat3::IDENTITY, Vec3::E1).max_abs() < 1e-15);
    }

    #[test]
    fn symmetric_matrices_have_no_axial_part() {
        let a = sample();
        let s = a + a.transpose();
        assert_eq!(epsilon_contract(&s), Vec3::ZERO);
        let w = a - a.transpose();
        assert!(epsilon_contract(&w).norm() > 0.1);
    }

    #[test]
    fn unit_and_frame() {
        assert!(Vec3::ZERO.unit().is_none());
        let v = Vec3::new(0.2, -0.4, 0.1).unit().unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-15);
        let (t1, t2) = v.orthonormal_complement();
        assert!(t1.dot(v).abs() < 1e-15 && t2.dot(v).abs() < 1e-15 && t1.dot(t2).abs() < 1e-15);
        assert!((t1.cross(t2) - v).norm() < 1e-15);
    }
}
