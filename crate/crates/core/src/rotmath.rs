//! Rotation representations and rigid/similarity alignment.
//!
//! [`Rot3`] wraps a proper orthonormal 3×3 matrix. [`Rot6`] is the continuous
//! six-number encoding made of the first two matrix columns (column-major),
//! recovered with Gram–Schmidt. [`AxisAngle`] is the so(3) tangent used for
//! angular velocities.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

const NORM_EPS: f64 = 1e-12;
/// Angles closer than this to π are reported as ambiguous by [`so3_log_signaled`].
pub const NEAR_PI_TOLERANCE: f64 = 1e-6;

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot3(Matrix3<f64>);

impl Default for Rot3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rot3 {
    pub fn identity() -> Self {
        Rot3(Matrix3::identity())
    }

    /// Wraps a matrix that the caller guarantees is orthonormal with det +1.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rot3(m)
    }

    /// Builds from row-major entries, re-orthonormalizing the result.
    pub fn from_row_major(v: &[f64; 9]) -> Self {
        Rot3(Matrix3::from_row_slice(v)).orthonormalized()
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rot3(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn column(&self, i: usize) -> Vec3 {
        self.0.column(i).into_owned()
    }

    pub fn rx(angle: f64) -> Self {
        so3_exp(&AxisAngle::new(angle, 0.0, 0.0))
    }

    pub fn ry(angle: f64) -> Self {
        so3_exp(&AxisAngle::new(0.0, angle, 0.0))
    }

    pub fn rz(angle: f64) -> Self {
        so3_exp(&AxisAngle::new(0.0, 0.0, angle))
    }

    /// Projects the first two columns back onto SO(3) via Gram–Schmidt.
    pub fn orthonormalized(&self) -> Self {
        matrix_from_rot6(&rot6_from_matrix(self)).unwrap_or_else(|_| Self::identity())
    }

    /// Largest deviation from orthonormality and |det − 1|.
    pub fn validity_error(&self) -> f64 {
        let ortho = (self.0.transpose() * self.0 - Matrix3::identity()).abs().max();
        ortho.max((self.0.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.0.iter().all(|x| x.is_finite()) && self.validity_error() <= tol
    }

    pub fn max_abs_diff(&self, other: &Rot3) -> f64 {
        (self.0 - other.0).abs().max()
    }
}

impl Mul for Rot3 {
    type Output = Rot3;
    fn mul(self, rhs: Rot3) -> Rot3 {
        Rot3(self.0 * rhs.0)
    }
}

impl Mul<&Rot3> for &Rot3 {
    type Output = Rot3;
    fn mul(self, rhs: &Rot3) -> Rot3 {
        Rot3(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rot3 {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// First two columns of a rotation matrix, column-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot6(pub [f64; 6]);

impl Rot6 {
    pub const IDENTITY: Rot6 = Rot6([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let mut out = [0.0; 6];
        out.copy_from_slice(&v[..6]);
        Rot6(out)
    }
}

/// Rotation vector (axis × angle, radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vec3);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vec3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

pub fn rot6_from_matrix(r: &Rot3) -> Rot6 {
    let m = r.matrix();
    Rot6([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]])
}

/// Gram–Schmidt recovery of a rotation from its 6D encoding.
pub fn matrix_from_rot6(v: &Rot6) -> Result<Rot3> {
    let a1 = Vec3::new(v.0[0], v.0[1], v.0[2]);
    let a2 = Vec3::new(v.0[3], v.0[4], v.0[5]);
    let n1 = a1.norm();
    if !(n1 >= NORM_EPS) {
        return Err(Error::DegenerateInput("first 6D column has zero length".into()));
    }
    let b1 = a1 / n1;
    let resid = a2 - b1 * b1.dot(&a2);
    let n2 = resid.norm();
    if !(n2 >= NORM_EPS) {
        return Err(Error::DegenerateInput("6D columns are parallel".into()));
    }
    let b2 = resid / n2;
    let b3 = b1.cross(&b2);
    Ok(Rot3(Matrix3::from_columns(&[b1, b2, b3])))
}

fn hat(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee_antisym(m: &Matrix3<f64>) -> Vec3 {
    // vee(M − Mᵀ) / 2
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues exponential map.
pub fn so3_exp(w: &AxisAngle) -> Rot3 {
    let theta = w.0.norm();
    let k = hat(&w.0);
    let k2 = k * k;
    let (a, b) = if theta < 1e-8 {
        (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Rot3(Matrix3::identity() + k * a + k2 * b)
}

/// Result of the logarithm map with the non-fatal near-π signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMap {
    pub tangent: AxisAngle,
    /// Set when the rotation angle is within [`NEAR_PI_TOLERANCE`] of π, where
    /// the axis sign is not determined by the matrix.
    pub near_pi: bool,
}

/// Logarithm map returning an angle in [0, π].
pub fn so3_log(r: &Rot3) -> AxisAngle {
    so3_log_signaled(r).tangent
}

pub fn so3_log_signaled(r: &Rot3) -> LogMap {
    let m = r.matrix();
    let s = vee_antisym(m);
    let sin_t = s.norm();
    let cos_t = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_t.atan2(cos_t);
    let near_pi = PI - theta < NEAR_PI_TOLERANCE;
    if theta < 1e-10 {
        return LogMap { tangent: AxisAngle(s), near_pi };
    }
    if theta < 2.5 {
        return LogMap { tangent: AxisAngle(s * (theta / sin_t)), near_pi };
    }
    // Large angles: recover the axis from the symmetric part,
    // (R + Rᵀ)/2 − cos θ I = (1 − cos θ) a aᵀ, taking the dominant column.
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos_t;
    let mut best = 0;
    for i in 1..3 {
        if sym[(i, i)] > sym[(best, best)] {
            best = i;
        }
    }
    let mut axis = sym.column(best).into_owned();
    let n = axis.norm();
    if n < NORM_EPS {
        return LogMap { tangent: AxisAngle(s * (theta / sin_t.max(NORM_EPS))), near_pi };
    }
    axis /= n;
    if axis.dot(&s) < 0.0 {
        axis = -axis;
    }
    LogMap { tangent: AxisAngle(axis * theta), near_pi }
}

/// Angle of the relative rotation R1ᵀR2, in radians.
pub fn geodesic_angle(r1: &Rot3, r2: &Rot3) -> f64 {
    let rel = r1.transpose() * *r2;
    let m = rel.matrix();
    let sin_t = vee_antisym(m).norm();
    let cos_t = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    sin_t.atan2(cos_t)
}

/// Similarity transform mapping one point set onto another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Rot3,
    pub translation: Vec3,
    pub scale: f64,
}

impl Similarity {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) * self.scale + self.translation
    }
}

/// Least-squares (Kabsch/Umeyama) alignment minimizing Σ|s R p + t − q|².
pub fn similarity_align(p: &[Vec3], q: &[Vec3], with_scale: bool) -> Result<Similarity> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    if p.len() < 3 {
        return Err(Error::DegenerateInput(format!("need at least 3 points, got {}", p.len())));
    }
    let n = p.len() as f64;
    let mp = p.iter().fold(Vec3::zeros(), |a, x| a + x) / n;
    let mq = q.iter().fold(Vec3::zeros(), |a, x| a + x) / n;
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        let dp = pi - mp;
        let dq = qi - mq;
        cov += dq * dp.transpose();
        var_p += dp.norm_squared();
    }
    cov /= n;
    var_p /= n;
    let svd = cov.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::DegenerateInput("SVD failed".into())),
    };
    let mut sv = svd.singular_values;
    // nalgebra does not guarantee ordering; sort descending for the rank test.
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-12 * sorted[0] || var_p <= 0.0 {
        return Err(Error::DegenerateInput("point covariance has rank < 2".into()));
    }
    let d = (u.determinant() * vt.determinant()).signum();
    let mut s = Matrix3::identity();
    if d < 0.0 {
        // Flip the axis of the smallest singular value.
        let mut min_i = 0;
        for i in 1..3 {
            if sv[i] < sv[min_i] {
                min_i = i;
            }
        }
        s[(min_i, min_i)] = -1.0;
        sv[min_i] = -sv[min_i];
    }
    let rot = Rot3(u * s * vt);
    let scale = if with_scale { sv.sum() / var_p } else { 1.0 };
    let translation = mq - rot.rotate(&mp) * scale;
    Ok(Similarity { rotation: rot, translation, scale })
}
