//! Rotations in 3D: the group SO(3) with its exponential and logarithm maps.
//!
//! A [`Rotation`] is stored as a unit quaternion with non-negative scalar part,
//! so `q` and `-q` compare equal. Tangent vectors are axis-angle 3-vectors in
//! radians. Perturbations throughout the crate are applied on the right,
//! `R ← R·exp(δ)`.
//!
//! The relative-rotation residual between global orientations `R_i`, `R_j`
//! and a measurement `R_ij` (with `R_ij ≈ R_i R_jᵀ`) is
//! `log(R_ij · (R_i R_jᵀ)ᵀ)`. It is invariant under the gauge action
//! `(R_i, R_j) → (R_i Q, R_j Q)`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Axis-angle vector in radians.
pub type TangentVector = Vector3<f64>;

const SMALL_ANGLE: f64 = 1e-8;

#[derive(Clone, Copy)]
pub struct Rotation {
    q: UnitQuaternion<f64>,
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation {
            q: UnitQuaternion::identity(),
        }
    }

    /// Builds a rotation from quaternion coefficients, normalizing them.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let raw = Quaternion::new(w, x, y, z);
        if !raw.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite quaternion [{w}, {x}, {y}, {z}]"
            )));
        }
        let n = raw.norm();
        if n < 1e-300 {
            return Err(Error::InvalidArgument("zero quaternion".into()));
        }
        Ok(Self::from_quaternion(raw))
    }

    fn from_quaternion(raw: Quaternion<f64>) -> Self {
        let n = raw.norm();
        // Leave already-normalized input untouched so serialization round-trips bit-exactly.
        let raw = if (n - 1.0).abs() > 4.0 * f64::EPSILON {
            raw / n
        } else {
            raw
        };
        Rotation {
            q: UnitQuaternion::new_unchecked(canonical_sign(raw)),
        }
    }

    /// Quaternion coefficients `[w, x, y, z]` with `w ≥ 0`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.q.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.q
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    /// Converts a rotation matrix, picking the best-conditioned quaternion
    /// component (trace or largest diagonal entry, first wins on ties).
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite rotation matrix".into()));
        }
        let trace = m.trace();
        let candidates = [trace, m[(0, 0)], m[(1, 1)], m[(2, 2)]];
        let mut best = 0;
        for (idx, &c) in candidates.iter().enumerate().skip(1) {
            if c > candidates[best] {
                best = idx;
            }
        }
        let q = match best {
            0 => {
                let s = 2.0 * (1.0 + trace).sqrt();
                Quaternion::new(
                    0.25 * s,
                    (m[(2, 1)] - m[(1, 2)]) / s,
                    (m[(0, 2)] - m[(2, 0)]) / s,
                    (m[(1, 0)] - m[(0, 1)]) / s,
                )
            }
            1 => {
                let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
                Quaternion::new(
                    (m[(2, 1)] - m[(1, 2)]) / s,
                    0.25 * s,
                    (m[(0, 1)] + m[(1, 0)]) / s,
                    (m[(0, 2)] + m[(2, 0)]) / s,
                )
            }
            2 => {
                let s = 2.0 * (1.0 - m[(0, 0)] + m[(1, 1)] - m[(2, 2)]).sqrt();
                Quaternion::new(
                    (m[(0, 2)] - m[(2, 0)]) / s,
                    (m[(0, 1)] + m[(1, 0)]) / s,
                    0.25 * s,
                    (m[(1, 2)] + m[(2, 1)]) / s,
                )
            }
            _ => {
                let s = 2.0 * (1.0 - m[(0, 0)] - m[(1, 1)] + m[(2, 2)]).sqrt();
                Quaternion::new(
                    (m[(1, 0)] - m[(0, 1)]) / s,
                    (m[(0, 2)] + m[(2, 0)]) / s,
                    (m[(1, 2)] + m[(2, 1)]) / s,
                    0.25 * s,
                )
            }
        };
        Self::from_wxyz(q.w, q.i, q.j, q.k)
    }

    /// Exponential map (Rodrigues). Below `1e-8` rad the first-order
    /// quaternion `(1, v/2)` is used.
    pub fn exp(v: &TangentVector) -> Result<Self> {
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite tangent vector {:?}",
                v.as_slice()
            )));
        }
        Ok(Self::exp_unchecked(v))
    }

    pub(crate) fn exp_unchecked(v: &TangentVector) -> Self {
        let theta = v.norm();
        let q = if theta < SMALL_ANGLE {
            Quaternion::new(1.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z)
        } else {
            let half = 0.5 * theta;
            let s = half.sin() / theta;
            Quaternion::new(half.cos(), s * v.x, s * v.y, s * v.z)
        };
        Self::from_quaternion(q)
    }

    /// Logarithm map; the result has norm in `[0, π]`.
    pub fn log(&self) -> TangentVector {
        let [w, x, y, z] = self.wxyz();
        let u = Vector3::new(x, y, z);
        let n = u.norm();
        if n < SMALL_ANGLE {
            u * (2.0 / w)
        } else {
            u * (2.0 * n.atan2(w) / n)
        }
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let [w, x, y, z] = self.wxyz();
        2.0 * (x * x + y * y + z * z).sqrt().atan2(w.abs())
    }

    pub fn inverse(&self) -> Self {
        Self::from_quaternion(self.q.inverse().into_inner())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q * v
    }

    /// Uniformly distributed rotation (Haar measure).
    pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let c: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let q = Quaternion::new(c[0], c[1], c[2], c[3]);
            if q.norm() > 1e-6 {
                return Self::from_quaternion(q / q.norm());
            }
        }
    }

    /// Coefficient-wise comparison of canonical quaternions.
    pub fn approx_eq(&self, other: &Rotation, tol: f64) -> bool {
        self.wxyz()
            .iter()
            .zip(other.wxyz())
            .all(|(a, b)| (a - b).abs() <= tol)
    }
}

fn canonical_sign(q: Quaternion<f64>) -> Quaternion<f64> {
    let c = q.coords;
    // coords are stored as [x, y, z, w]
    let first_nonzero = [c[3], c[0], c[1], c[2]]
        .into_iter()
        .find(|v| *v != 0.0)
        .unwrap_or(1.0);
    if first_nonzero < 0.0 {
        -q
    } else {
        q
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl PartialEq for Rotation {
    fn eq(&self, other: &Self) -> bool {
        self.wxyz() == other.wxyz()
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation::from_quaternion(self.q.into_inner() * rhs.q.into_inner())
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        *self * *rhs
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [w, x, y, z] = self.wxyz();
        write!(f, "Rotation(w: {w:.9}, x: {x:.9}, y: {y:.9}, z: {z:.9})")
    }
}

pub fn exp_so3(v: &TangentVector) -> Result<Rotation> {
    Rotation::exp(v)
}

pub fn log_so3(r: &Rotation) -> TangentVector {
    r.log()
}

/// Geodesic distance `‖log(Ra Rbᵀ)‖` in radians.
pub fn geodesic_angle(ra: &Rotation, rb: &Rotation) -> f64 {
    (ra * &rb.inverse()).angle()
}

/// Residual `log(R_ij · (R_i R_jᵀ)ᵀ)` of a relative measurement against the
/// global orientations.
pub fn relative_residual(ri: &Rotation, rj: &Rotation, rij: &Rotation) -> TangentVector {
    (*rij * *rj * ri.inverse()).log()
}

/// Skew-symmetric matrix `[v]×` with `[v]× w = v × w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the right Jacobian of SO(3): `log(exp(φ)·exp(δ)) ≈ φ + Jr⁻¹(φ) δ`.
///
/// The angle is clamped just below π, where the exact inverse diverges.
pub fn right_jacobian_inv(phi: &TangentVector) -> Matrix3<f64> {
    let theta = phi.norm().min(std::f64::consts::PI - 1e-3);
    let skew = hat(phi);
    let c = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + 0.5 * skew + c * skew * skew
}
