//! Dense 2x2 complex matrices. Everything the solvers move around — bare
//! propagators, full propagators, observables — lives in this type, so it is
//! kept small and Copy.

use core::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

pub type C64 = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Matrix2 {
    /// Row-major entries: `e[row][col]`.
    pub e: [[C64; 2]; 2],
}

impl Matrix2 {
    pub const fn new(e00: C64, e01: C64, e10: C64, e11: C64) -> Self {
        Matrix2 {
            e: [[e00, e01], [e10, e11]],
        }
    }

    pub fn zero() -> Self {
        Matrix2::default()
    }

    pub fn identity() -> Self {
        Matrix2::new(C64::new(1.0, 0.0), C64::ZERO, C64::ZERO, C64::new(1.0, 0.0))
    }

    pub fn sigma_x() -> Self {
        Matrix2::new(C64::ZERO, C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::ZERO)
    }

    pub fn sigma_y() -> Self {
        Matrix2::new(
            C64::ZERO,
            C64::new(0.0, -1.0),
            C64::new(0.0, 1.0),
            C64::ZERO,
        )
    }

    pub fn sigma_z() -> Self {
        Matrix2::new(
            C64::new(1.0, 0.0),
            C64::ZERO,
            C64::ZERO,
            C64::new(-1.0, 0.0),
        )
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Matrix2::new(
            self.e[0][0].conj(),
            self.e[1][0].conj(),
            self.e[0][1].conj(),
            self.e[1][1].conj(),
        )
    }

    /// `X + X^dagger`. Hermitian by construction: the diagonal imaginary
    /// parts cancel exactly in floating point.
    pub fn hermitized(&self) -> Self {
        *self + self.adjoint()
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = *self;
        for r in 0..2 {
            for c in 0..2 {
                out.e[r][c] = self.e[r][c] * s;
            }
        }
        out
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn trace(&self) -> C64 {
        self.e[0][0] + self.e[1][1]
    }

    /// Entrywise maximum modulus.
    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for r in 0..2 {
            for c in 0..2 {
                m = m.max(self.e[r][c].norm());
            }
        }
        m
    }

    pub fn fro_norm(&self) -> f64 {
        let mut s = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                s += self.e[r][c].norm_sqr();
            }
        }
        s.sqrt()
    }

    /// Entrywise max modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Matrix2) -> f64 {
        (*self - *other).max_abs()
    }

    /// Deviation from Hermitian symmetry, `max |X - X^dagger|`.
    pub fn hermiticity_defect(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    pub fn is_finite(&self) -> bool {
        self.e
            .iter()
            .flatten()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `<0| X |0>` in the computational basis.
    pub fn expect_ground(&self) -> C64 {
        self.e[0][0]
    }
}

impl Add for Matrix2 {
    type Output = Matrix2;
    fn add(self, rhs: Matrix2) -> Matrix2 {
        let mut out = Matrix2::zero();
        for r in 0..2 {
            for c in 0..2 {
                out.e[r][c] = self.e[r][c] + rhs.e[r][c];
            }
        }
        out
    }
}

impl AddAssign for Matrix2 {
    fn add_assign(&mut self, rhs: Matrix2) {
        for r in 0..2 {
            for c in 0..2 {
                self.e[r][c] += rhs.e[r][c];
            }
        }
    }
}

impl Sub for Matrix2 {
    type Output = Matrix2;
    fn sub(self, rhs: Matrix2) -> Matrix2 {
        let mut out = Matrix2::zero();
        for r in 0..2 {
            for c in 0..2 {
                out.e[r][c] = self.e[r][c] - rhs.e[r][c];
            }
        }
        out
    }
}

impl Neg for Matrix2 {
    type Output = Matrix2;
    fn neg(self) -> Matrix2 {
        self.scale_re(-1.0)
    }
}

impl Mul for Matrix2 {
    type Output = Matrix2;
    fn mul(self, rhs: Matrix2) -> Matrix2 {
        let a = &self.e;
        let b = &rhs.e;
        Matrix2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}
