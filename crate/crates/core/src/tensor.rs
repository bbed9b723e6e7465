//! Closed-form 2×2 matrix algebra.
//!
//! Everything downstream (energy densities, element gradients, the
//! determinant constraint) works with [`Mat`] and [`Vec2`]. Only `d = 2` is
//! implemented; the formulas are exact cofactor expressions, no factorizations.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Spatial dimension.
pub const DIM: usize = 2;

/// A point or vector in the plane.
pub type Vec2 = [f64; 2];

/// A 2×2 real matrix stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat(pub [[f64; 2]; 2]);

impl Mat {
    pub const ZERO: Mat = Mat([[0.0, 0.0], [0.0, 0.0]]);
    pub const IDENTITY: Mat = Mat([[1.0, 0.0], [0.0, 1.0]]);

    pub fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Mat([[a11, a12], [a21, a22]])
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Mat([[a, 0.0], [0.0, b]])
    }

    /// Outer product `a ⊗ b`, i.e. the matrix with entries `a_i b_j`.
    pub fn outer(a: Vec2, b: Vec2) -> Self {
        Mat([[a[0] * b[0], a[0] * b[1]], [a[1] * b[0], a[1] * b[1]]])
    }

    /// Counter-clockwise rotation by `angle`.
    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Mat([[c, -s], [s, c]])
    }

    pub fn from_rows(rows: [[f64; 2]; 2]) -> Self {
        Mat(rows)
    }

    pub fn rows(&self) -> [[f64; 2]; 2] {
        self.0
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Classical adjoint: `M · adj(M) = det(M) · I`.
    pub fn adjugate(&self) -> Mat {
        let m = &self.0;
        Mat([[m[1][1], -m[0][1]], [-m[1][0], m[0][0]]])
    }

    /// Cofactor matrix, `∂ det / ∂ M = adj(M)ᵀ`.
    pub fn cofactor(&self) -> Mat {
        self.adjugate().transpose()
    }

    pub fn transpose(&self) -> Mat {
        let m = &self.0;
        Mat([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    /// Inverse, or `None` when the determinant vanishes exactly.
    pub fn inverse(&self) -> Option<Mat> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(self.adjugate().scale(1.0 / d))
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    /// Frobenius inner product `A : B`.
    pub fn ddot(&self, other: &Mat) -> f64 {
        let (a, b) = (&self.0, &other.0);
        a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
    }

    /// Squared Frobenius norm `|M|²`.
    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    /// Frobenius norm `|M|`.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn scale(&self, s: f64) -> Mat {
        let m = &self.0;
        Mat([[s * m[0][0], s * m[0][1]], [s * m[1][0], s * m[1][1]]])
    }

    pub fn apply(&self, v: Vec2) -> Vec2 {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

impl Add for Mat {
    type Output = Mat;
    fn add(self, rhs: Mat) -> Mat {
        let (a, b) = (self.0, rhs.0);
        Mat([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }
}

impl AddAssign for Mat {
    fn add_assign(&mut self, rhs: Mat) {
        *self = *self + rhs;
    }
}

impl Sub for Mat {
    type Output = Mat;
    fn sub(self, rhs: Mat) -> Mat {
        self + (-rhs)
    }
}

impl Neg for Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

impl Mul for Mat {
    type Output = Mat;
    fn mul(self, rhs: Mat) -> Mat {
        let (a, b) = (self.0, rhs.0);
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat(out)
    }
}

impl Mul<f64> for Mat {
    type Output = Mat;
    fn mul(self, rhs: f64) -> Mat {
        self.scale(rhs)
    }
}

/// Free-function form of [`Mat::det`].
pub fn det(m: &Mat) -> f64 {
    m.det()
}

/// Free-function form of [`Mat::adjugate`].
pub fn adjugate(m: &Mat) -> Mat {
    m.adjugate()
}

/// Coefficients of the affine map `t ↦ det(A + t·a⊗b) = c0 + c1·t`.
///
/// In two dimensions the quadratic term of a rank-one update vanishes, so
/// `c1 = bᵀ adj(A) a` exactly.
pub fn rank_one_det_line(a_mat: &Mat, a: Vec2, b: Vec2) -> (f64, f64) {
    let adj_a = a_mat.adjugate().apply(a);
    (a_mat.det(), b[0] * adj_a[0] + b[1] * adj_a[1])
}

pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn vnorm(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

/// `a` rotated by +90°.
pub fn perp(a: Vec2) -> Vec2 {
    [-a[1], a[0]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat_strategy() -> impl Strategy<Value = Mat> {
        prop::array::uniform4(-2.0f64..2.0).prop_map(|e| Mat::new(e[0], e[1], e[2], e[3]))
    }

    fn vec_strategy() -> impl Strategy<Value = Vec2> {
        prop::array::uniform2(-2.0f64..2.0)
    }

    #[test]
    fn det_examples() {
        assert_eq!(Mat::IDENTITY.det(), 1.0);
        assert_eq!(Mat::diag(2.0, 0.5).det(), 1.0);
        let (a, b) = ([0.3, -1.2], [0.7, 0.4]);
        let m = Mat::IDENTITY + Mat::outer(a, b);
        assert!((m.det() - (1.0 + dot(a, b))).abs() < 1e-15);
    }

    #[test]
    fn adjugate_examples() {
        assert_eq!(Mat::IDENTITY.adjugate(), Mat::IDENTITY);
        assert_eq!(Mat::diag(3.0, -5.0).adjugate(), Mat::diag(-5.0, 3.0));
    }

    #[test]
    fn rank_one_line_examples() {
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        assert_eq!(rank_one_det_line(&Mat::IDENTITY, e1, e2), (1.0, 0.0));
        assert_eq!(rank_one_det_line(&Mat::IDENTITY, e1, e1), (1.0, 1.0));
    }

    #[test]
    fn inverse_of_singular_is_none() {
        assert!(Mat::new(1.0, 2.0, 2.0, 4.0).inverse().is_none());
        let m = Mat::new(1.0, 2.0, 3.0, 4.0);
        let prod = m * m.inverse().unwrap();
        assert!((prod - Mat::IDENTITY).max_abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn det_is_multiplicative(a in mat_strategy(), b in mat_strategy()) {
            let lhs = (a * b).det();
            let rhs = a.det() * b.det();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn adjugate_identity(a in mat_strategy()) {
            let lhs = a * a.adjugate();
            let rhs = Mat::IDENTITY.scale(a.det());
            prop_assert!((lhs - rhs).max_abs() <= 1e-12);
        }

        #[test]
        fn adjugate_reverses_products(a in mat_strategy(), b in mat_strategy()) {
            let lhs = (a * b).adjugate();
            let rhs = b.adjugate() * a.adjugate();
            prop_assert!((lhs - rhs).max_abs() <= 1e-12);
        }

        #[test]
        fn det_is_affine_on_rank_one_lines(
            a in mat_strategy(), u in vec_strategy(), v in vec_strategy(), t0 in -3.0f64..3.0
        ) {
            let (c0, c1) = rank_one_det_line(&a, u, v);
            for i in 0..10 {
                let t = t0 + 0.37 * i as f64;
                let brute = (a + Mat::outer(u, v).scale(t)).det();
                prop_assert!((brute - (c0 + c1 * t)).abs() <= 1e-12 * (1.0 + brute.abs()));
            }
            for t in [-1.0, 0.5, 2.0] {
                let brute = (a + Mat::outer(u, v).scale(t)).det();
                prop_assert!((brute - (c0 + c1 * t)).abs() <= 1e-12);
            }
        }
    }
}
