//! Planar linear algebra and Gaussian distributions.
//!
//! Everything here is closed form: positions live in a local East-North
//! frame and covariances are symmetric 2x2 matrices.

use core::ops::{Add, AddAssign, Mul, Neg, Sub};

use rand_distr::StandardNormal;

use crate::error::CoreError;
use crate::rng::RngStream;

/// Determinant slack accepted by the PSD test, in m^4.
pub const TOL_PSD: f64 = 1e-10;

/// A planar vector in meters (x East, y North).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        libm::hypot(self.x, self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// A general (not necessarily symmetric) 2x2 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2 {
    pub m00: f64,
    pub m01: f64,
    pub m10: f64,
    pub m11: f64,
}

impl Mat2 {
    pub const fn new(m00: f64, m01: f64, m10: f64, m11: f64) -> Self {
        Self { m00, m01, m10, m11 }
    }

    pub fn from_columns(c0: Vec2, c1: Vec2) -> Self {
        Self::new(c0.x, c1.x, c0.y, c1.y)
    }

    pub fn column(&self, j: usize) -> Vec2 {
        match j {
            0 => Vec2::new(self.m00, self.m10),
            _ => Vec2::new(self.m01, self.m11),
        }
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.m00, self.m10, self.m01, self.m11)
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.m00 * v.x + self.m01 * v.y, self.m10 * v.x + self.m11 * v.y)
    }

    /// `self^T v`
    pub fn tr_mul_vec(&self, v: Vec2) -> Vec2 {
        self.transpose().mul_vec(v)
    }

    pub fn rotation(angle: f64) -> Mat2 {
        let (s, c) = libm::sincos(angle);
        Mat2::new(c, -s, s, c)
    }

    pub fn max_abs(&self) -> f64 {
        self.m00
            .abs()
            .max(self.m01.abs())
            .max(self.m10.abs())
            .max(self.m11.abs())
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, r: Mat2) -> Mat2 {
        Mat2::new(
            self.m00 * r.m00 + self.m01 * r.m10,
            self.m00 * r.m01 + self.m01 * r.m11,
            self.m10 * r.m00 + self.m11 * r.m10,
            self.m10 * r.m01 + self.m11 * r.m11,
        )
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, r: Mat2) -> Mat2 {
        Mat2::new(self.m00 - r.m00, self.m01 - r.m01, self.m10 - r.m10, self.m11 - r.m11)
    }
}

/// Symmetric 2x2 matrix `[[a, b], [b, d]]`.
///
/// Construction does not enforce positive semidefiniteness; use
/// [`SpdMat2::checked`] or [`SpdMat2::is_psd`] where it matters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpdMat2 {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

impl SpdMat2 {
    pub const ZERO: SpdMat2 = SpdMat2 { a: 0.0, b: 0.0, d: 0.0 };
    pub const IDENTITY: SpdMat2 = SpdMat2 { a: 1.0, b: 0.0, d: 1.0 };

    pub const fn new(a: f64, b: f64, d: f64) -> Self {
        Self { a, b, d }
    }

    /// `variance * I`
    pub const fn isotropic(variance: f64) -> Self {
        Self::new(variance, 0.0, variance)
    }

    pub fn checked(a: f64, b: f64, d: f64) -> Result<Self, CoreError> {
        let m = Self::new(a, b, d);
        if m.is_psd() {
            Ok(m)
        } else {
            Err(CoreError::NotPsd { a, b, d })
        }
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.b
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.d.is_finite()
    }

    pub fn is_psd(&self) -> bool {
        self.is_finite() && self.a >= 0.0 && self.d >= 0.0 && self.det() >= -TOL_PSD
    }

    pub fn to_mat(&self) -> Mat2 {
        Mat2::new(self.a, self.b, self.b, self.d)
    }

    /// Symmetric part of a general matrix.
    pub fn symmetrize(m: &Mat2) -> SpdMat2 {
        SpdMat2::new(m.m00, 0.5 * (m.m01 + m.m10), m.m11)
    }

    pub fn scale(&self, s: f64) -> SpdMat2 {
        SpdMat2::new(self.a * s, self.b * s, self.d * s)
    }

    pub fn add_diag(&self, eps: f64) -> SpdMat2 {
        SpdMat2::new(self.a + eps, self.b, self.d + eps)
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.a * v.x + self.b * v.y, self.b * v.x + self.d * v.y)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_tr = 0.5 * (self.a + self.d);
        let disc = libm::hypot(0.5 * (self.a - self.d), self.b);
        (half_tr - disc, half_tr + disc)
    }

    /// `S M S` for symmetric `S`; the result is symmetrized.
    pub fn congruence(s: &SpdMat2, m: &SpdMat2) -> SpdMat2 {
        let sm = s.to_mat() * m.to_mat();
        SpdMat2::symmetrize(&(sm * s.to_mat()))
    }

    /// Inverse; `None` when the determinant is not strictly positive.
    pub fn inverse(&self) -> Option<SpdMat2> {
        let det = self.det();
        if det > 0.0 && det.is_finite() {
            Some(SpdMat2::new(self.d / det, -self.b / det, self.a / det))
        } else {
            None
        }
    }

    pub fn max_abs_diff(&self, other: &SpdMat2) -> f64 {
        (self.a - other.a)
            .abs()
            .max((self.b - other.b).abs())
            .max((self.d - other.d).abs())
    }

    /// Lower-triangular factor `L` with `L L^T = self`. Zero-variance axes
    /// produce zero columns rather than failing.
    pub fn cholesky_lower(&self) -> Mat2 {
        let l00 = libm::sqrt(self.a.max(0.0));
        if l00 > 0.0 {
            let l10 = self.b / l00;
            let l11 = libm::sqrt((self.d - l10 * l10).max(0.0));
            Mat2::new(l00, 0.0, l10, l11)
        } else {
            Mat2::new(0.0, 0.0, 0.0, libm::sqrt(self.d.max(0.0)))
        }
    }
}

impl Add for SpdMat2 {
    type Output = SpdMat2;
    fn add(self, r: SpdMat2) -> SpdMat2 {
        SpdMat2::new(self.a + r.a, self.b + r.b, self.d + r.d)
    }
}

/// Principal square root of a PSD matrix.
///
/// Uses the 2x2 identity `sqrt(M) = (M + sqrt(det M) I) / sqrt(tr M + 2 sqrt(det M))`,
/// with the determinant clamped at zero so rank-deficient inputs are exact.
pub fn spd_sqrt(m: &SpdMat2) -> Result<SpdMat2, CoreError> {
    if !m.is_psd() {
        return Err(CoreError::NotPsd { a: m.a, b: m.b, d: m.d });
    }
    let (lo, hi) = m.eigenvalues();
    let (lo, hi) = (lo.max(0.0), hi.max(0.0));
    // det and trace from the clamped spectrum
    let s = libm::sqrt(lo * hi);
    let t = libm::sqrt(lo + hi + 2.0 * s);
    if t == 0.0 {
        return Ok(SpdMat2::ZERO);
    }
    Ok(SpdMat2::new((m.a + s) / t, m.b / t, (m.d + s) / t))
}

/// A planar Gaussian `N(mean, cov)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Gaussian2 {
    pub mean: Vec2,
    pub cov: SpdMat2,
}

impl Gaussian2 {
    pub const fn new(mean: Vec2, cov: SpdMat2) -> Self {
        Self { mean, cov }
    }

    pub const fn point_mass(at: Vec2) -> Self {
        Self::new(at, SpdMat2::ZERO)
    }

    /// Isotropic Gaussian with standard deviation `std` per axis.
    pub fn isotropic(mean: Vec2, std: f64) -> Self {
        Self::new(mean, SpdMat2::isotropic(std * std))
    }

    pub fn is_valid(&self) -> bool {
        self.mean.is_finite() && self.cov.is_psd()
    }

    /// One draw: `mean + L z` with `z` a pair of independent standard normals.
    pub fn sample(&self, rng: &mut RngStream) -> Vec2 {
        let z = Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        self.mean + self.cov.cholesky_lower().mul_vec(z)
    }
}

/// Free-function form of [`Gaussian2::sample`].
pub fn gaussian_sample(g: &Gaussian2, rng: &mut RngStream) -> Vec2 {
    g.sample(rng)
}
