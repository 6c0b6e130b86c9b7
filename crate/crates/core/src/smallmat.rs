//! Fixed-size real linear algebra: 2- and 3-vectors, the 2x2, 3x2, 2x3 and
//! 3x3 matrices that appear in chart Jacobians, and the pseudoinverse and
//! projector kernels built on them.
//!
//! All matrices are stored row-major.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// `A` is declared injective when `sigma_min(A) > INJECTIVITY_RATIO * sigma_max(A)`.
pub const INJECTIVITY_RATIO: f64 = 1e-10;

/// Allowed deviation of `|w|` from one in [`tangential_projector`].
pub const UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2(pub [f64; 2]);

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3(pub [f64; 3]);

macro_rules! vector_impls {
    ($ty:ident, $n:expr) => {
        impl $ty {
            pub const ZERO: $ty = $ty([0.0; $n]);

            pub fn dot(&self, other: &$ty) -> f64 {
                self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
            }

            pub fn norm_squared(&self) -> f64 {
                self.dot(self)
            }

            pub fn norm(&self) -> f64 {
                self.norm_squared().sqrt()
            }

            /// Largest absolute component.
            pub fn max_abs(&self) -> f64 {
                self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn scale(&self, s: f64) -> $ty {
                let mut out = *self;
                out.0.iter_mut().for_each(|v| *v *= s);
                out
            }
        }

        impl Index<usize> for $ty {
            type Output = f64;
            fn index(&self, i: usize) -> &f64 {
                &self.0[i]
            }
        }

        impl IndexMut<usize> for $ty {
            fn index_mut(&mut self, i: usize) -> &mut f64 {
                &mut self.0[i]
            }
        }

        impl Add for $ty {
            type Output = $ty;
            fn add(self, rhs: $ty) -> $ty {
                let mut out = self;
                out.0.iter_mut().zip(rhs.0.iter()).for_each(|(a, b)| *a += b);
                out
            }
        }

        impl AddAssign for $ty {
            fn add_assign(&mut self, rhs: $ty) {
                self.0.iter_mut().zip(rhs.0.iter()).for_each(|(a, b)| *a += b);
            }
        }

        impl Sub for $ty {
            type Output = $ty;
            fn sub(self, rhs: $ty) -> $ty {
                let mut out = self;
                out.0.iter_mut().zip(rhs.0.iter()).for_each(|(a, b)| *a -= b);
                out
            }
        }

        impl Neg for $ty {
            type Output = $ty;
            fn neg(self) -> $ty {
                self.scale(-1.0)
            }
        }

        impl Mul<f64> for $ty {
            type Output = $ty;
            fn mul(self, s: f64) -> $ty {
                self.scale(s)
            }
        }

        impl Mul<$ty> for f64 {
            type Output = $ty;
            fn mul(self, v: $ty) -> $ty {
                v.scale(self)
            }
        }
    };
}

vector_impls!(Vec2, 2);
vector_impls!(Vec3, 3);

impl Vec2 {
    pub const fn new(x1: f64, x2: f64) -> Self {
        Vec2([x1, x2])
    }
}

impl Vec3 {
    pub const fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Vec3([x1, x2, x3])
    }

    pub fn unit(i: usize) -> Self {
        let mut v = Vec3::ZERO;
        v.0[i] = 1.0;
        v
    }

    pub fn cross(&self, other: &Vec3) -> Vec3 {
        cross(*self, *other)
    }
}

/// Standard cross product in R^3.
pub fn cross(u: Vec3, v: Vec3) -> Vec3 {
    Vec3([
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ])
}

macro_rules! matrix_type {
    ($ty:ident, $rows:expr, $cols:expr) => {
        #[derive(Debug, Clone, Copy, PartialEq, Default)]
        pub struct $ty(pub [[f64; $cols]; $rows]);

        impl $ty {
            pub const ROWS: usize = $rows;
            pub const COLS: usize = $cols;
            pub const ZERO: $ty = $ty([[0.0; $cols]; $rows]);

            pub fn max_abs(&self) -> f64 {
                self.0
                    .iter()
                    .flat_map(|r| r.iter())
                    .fold(0.0_f64, |m, v| m.max(v.abs()))
            }

            /// Entrywise maximum of `|self - other|`.
            pub fn max_abs_diff(&self, other: &$ty) -> f64 {
                self.0
                    .iter()
                    .flatten()
                    .zip(other.0.iter().flatten())
                    .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().flatten().all(|v| v.is_finite())
            }

            pub fn scale(&self, s: f64) -> $ty {
                let mut out = *self;
                out.0.iter_mut().flatten().for_each(|v| *v *= s);
                out
            }
        }

        impl Add for $ty {
            type Output = $ty;
            fn add(self, rhs: $ty) -> $ty {
                let mut out = self;
                out.0
                    .iter_mut()
                    .flatten()
                    .zip(rhs.0.iter().flatten())
                    .for_each(|(a, b)| *a += b);
                out
            }
        }

        impl Sub for $ty {
            type Output = $ty;
            fn sub(self, rhs: $ty) -> $ty {
                let mut out = self;
                out.0
                    .iter_mut()
                    .flatten()
                    .zip(rhs.0.iter().flatten())
                    .for_each(|(a, b)| *a -= b);
                out
            }
        }
    };
}

matrix_type!(Mat2x2, 2, 2);
matrix_type!(Mat3x2, 3, 2);
matrix_type!(Mat2x3, 2, 3);
matrix_type!(Mat3x3, 3, 3);

macro_rules! matmul {
    ($lhs:ident * $rhs:ident -> $out:ident, $n:expr, $k:expr, $m:expr) => {
        impl Mul<$rhs> for $lhs {
            type Output = $out;
            fn mul(self, rhs: $rhs) -> $out {
                let mut out = $out::ZERO;
                for i in 0..$n {
                    for j in 0..$m {
                        let mut s = 0.0;
                        for l in 0..$k {
                            s += self.0[i][l] * rhs.0[l][j];
                        }
                        out.0[i][j] = s;
                    }
                }
                out
            }
        }
    };
}

matmul!(Mat2x3 * Mat3x2 -> Mat2x2, 2, 3, 2);
matmul!(Mat3x2 * Mat2x3 -> Mat3x3, 3, 2, 3);
matmul!(Mat2x2 * Mat2x3 -> Mat2x3, 2, 2, 3);
matmul!(Mat3x2 * Mat2x2 -> Mat3x2, 3, 2, 2);
matmul!(Mat2x3 * Mat3x3 -> Mat2x3, 2, 3, 3);
matmul!(Mat3x3 * Mat3x2 -> Mat3x2, 3, 3, 2);
matmul!(Mat3x3 * Mat3x3 -> Mat3x3, 3, 3, 3);
matmul!(Mat2x2 * Mat2x2 -> Mat2x2, 2, 2, 2);

macro_rules! matvec {
    ($mat:ident * $vin:ident -> $vout:ident, $rows:expr, $cols:expr) => {
        impl Mul<$vin> for $mat {
            type Output = $vout;
            fn mul(self, v: $vin) -> $vout {
                let mut out = $vout::ZERO;
                for i in 0..$rows {
                    out.0[i] = (0..$cols).map(|j| self.0[i][j] * v.0[j]).sum();
                }
                out
            }
        }
    };
}

matvec!(Mat2x2 * Vec2 -> Vec2, 2, 2);
matvec!(Mat3x2 * Vec2 -> Vec3, 3, 2);
matvec!(Mat2x3 * Vec3 -> Vec2, 2, 3);
matvec!(Mat3x3 * Vec3 -> Vec3, 3, 3);

impl Mat2x2 {
    pub fn identity() -> Self {
        Mat2x2([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn transpose(&self) -> Mat2x2 {
        let m = self.0;
        Mat2x2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn determinant(&self) -> f64 {
        det2(self)
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    /// Closed-form adjugate inverse. The caller decides whether the matrix is
    /// invertible enough; a zero determinant yields non-finite entries.
    pub fn inverse_adjugate(&self) -> Mat2x2 {
        let m = self.0;
        let d = det2(self);
        Mat2x2([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
    }

    /// Eigenvalues `(lambda_min, lambda_max)` of a symmetric 2x2 matrix.
    pub fn symmetric_eigenvalues(&self) -> (f64, f64) {
        let m = self.0;
        let mean = 0.5 * (m[0][0] + m[1][1]);
        let half_diff = 0.5 * (m[0][0] - m[1][1]);
        let off = 0.5 * (m[0][1] + m[1][0]);
        let radius = half_diff.hypot(off);
        let lmax = mean + radius;
        // det / lmax is more accurate than mean - radius for lmin << lmax
        let lmin = if lmax > 0.0 { det2(self) / lmax } else { mean - radius };
        (lmin, lmax)
    }
}

impl Mat3x2 {
    pub fn from_columns(c1: Vec3, c2: Vec3) -> Self {
        Mat3x2([[c1[0], c2[0]], [c1[1], c2[1]], [c1[2], c2[2]]])
    }

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn transpose(&self) -> Mat2x3 {
        let m = self.0;
        Mat2x3([[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]]])
    }

    /// `A^T A`.
    pub fn gram(&self) -> Mat2x2 {
        self.transpose() * *self
    }
}

impl Mat2x3 {
    pub fn transpose(&self) -> Mat3x2 {
        let m = self.0;
        Mat3x2([[m[0][0], m[1][0]], [m[0][1], m[1][1]], [m[0][2], m[1][2]]])
    }

    pub fn row(&self, i: usize) -> Vec3 {
        Vec3(self.0[i])
    }
}

impl Mat3x3 {
    pub fn identity() -> Self {
        Mat3x3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn from_columns(c: [Vec3; 3]) -> Self {
        let mut m = Mat3x3::ZERO;
        for (j, col) in c.iter().enumerate() {
            for i in 0..3 {
                m.0[i][j] = col[i];
            }
        }
        m
    }

    /// `u v^T`.
    pub fn outer(u: Vec3, v: Vec3) -> Self {
        let mut m = Mat3x3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = u[i] * v[j];
            }
        }
        m
    }

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn transpose(&self) -> Mat3x3 {
        let mut t = Mat3x3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                t.0[i][j] = self.0[j][i];
            }
        }
        t
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn determinant(&self) -> f64 {
        det3(self)
    }
}

/// Determinant of a 2x2 matrix.
pub fn det2(m: &Mat2x2) -> f64 {
    m.0[0][0] * m.0[1][1] - m.0[0][1] * m.0[1][0]
}

/// Determinant of a 3x3 matrix by cofactor expansion along the first row.
pub fn det3(m: &Mat3x3) -> f64 {
    let a = m.0;
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Singular value ratio `sigma_min / sigma_max` of a 3x2 matrix, computed from
/// the eigenvalues of its Gram matrix.
pub fn singular_ratio(a: &Mat3x2) -> f64 {
    let (lmin, lmax) = a.gram().symmetric_eigenvalues();
    if !(lmax > 0.0) {
        return 0.0;
    }
    (lmin.max(0.0) / lmax).sqrt()
}

/// Moore-Penrose inverse `(A^T A)^{-1} A^T` of an injective 3x2 matrix.
pub fn pinv_3x2(a: &Mat3x2) -> Result<Mat2x3> {
    let ratio = singular_ratio(a);
    if !(ratio > INJECTIVITY_RATIO) {
        return Err(Error::RankDeficient { ratio });
    }
    Ok(a.gram().inverse_adjugate() * a.transpose())
}

/// Orthogonal projector `A A^dagger` onto the range of an injective 3x2 matrix.
pub fn range_projector(a: &Mat3x2) -> Result<Mat3x3> {
    Ok(*a * pinv_3x2(a)?)
}

/// Matrix of `v -> (w x v) x w` for a unit vector `w`, assembled column by
/// column from the double cross product of the canonical basis.
pub fn tangential_projector(w: Vec3) -> Result<Mat3x3> {
    let norm = w.norm();
    if !((norm - 1.0).abs() <= UNIT_TOLERANCE) {
        return Err(Error::NotUnit { norm });
    }
    let cols = [0, 1, 2].map(|j| cross(cross(w, Vec3::unit(j)), w));
    Ok(Mat3x3::from_columns(cols))
}

/// `det(I + v v^T)` via the closed form `1 + |v|^2`.
pub fn det_rank1_update(v: &[f64]) -> f64 {
    1.0 + v.iter().map(|x| x * x).sum::<f64>()
}
