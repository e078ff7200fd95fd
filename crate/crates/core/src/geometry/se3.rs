use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Rotations at or beyond this angle have no unique logarithm.
pub const LOG_ANGLE_LIMIT: f64 = PI - 1e-6;

const SMALL_ANGLE: f64 = 1e-8;
/// Below this angle the third-order coefficients, which cancel badly in
/// closed form, switch to their Taylor series.
const SERIES_ANGLE: f64 = 1e-3;

/// Rigid-body transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Element of the SE(3) Lie algebra.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    /// Translational part.
    pub v: Vector3<f64>,
    /// Rotational part (axis times angle, radians).
    pub omega: Vector3<f64>,
}

impl Twist {
    pub fn new(v: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Self { v, omega }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Components ordered `[v; omega]`.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.v.x,
            self.v.y,
            self.v.z,
            self.omega.x,
            self.omega.y,
            self.omega.z,
        ]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            v: Vector3::new(s[0], s[1], s[2]),
            omega: Vector3::new(s[3], s[4], s[5]),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            v: self.v * k,
            omega: self.omega * k,
        }
    }
}

impl std::ops::Add for Twist {
    type Output = Twist;

    fn add(self, rhs: Twist) -> Twist {
        Twist {
            v: self.v + rhs.v,
            omega: self.omega + rhs.omega,
        }
    }
}

fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

impl Se3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Rotation about the z axis by `angle` radians.
    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(
            Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            Vector3::zeros(),
        )
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn compose(&self, other: &Se3) -> Se3 {
        se3_compose(self, other)
    }

    pub fn inverse(&self) -> Se3 {
        se3_invert(self)
    }

    /// Largest deviation of `R^T R` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let gram = (r.transpose() * r - Matrix3::identity()).abs().max();
        gram.max((r.determinant() - 1.0).abs())
    }

    /// Rotation angle in `[0, pi]`, well conditioned near zero.
    pub fn angle(&self) -> f64 {
        let r = &self.rotation;
        let s = 0.5 * vee(&(r - r.transpose())).norm();
        let c = 0.5 * (r.trace() - 1.0);
        s.atan2(c)
    }

    /// Replace the rotation with the nearest orthonormal matrix (polar factor).
    pub fn reorthonormalize(&self) -> Se3 {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        Se3::new(r, self.translation)
    }

    /// Row-major rotation followed by translation.
    pub fn to_array12(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }

    pub fn from_array12(a: &[f64]) -> Se3 {
        Se3::new(
            Matrix3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]),
            Vector3::new(a[9], a[10], a[11]),
        )
    }

    /// Largest absolute entry-wise difference between two transforms.
    pub fn max_abs_diff(&self, other: &Se3) -> f64 {
        let r = (self.rotation - other.rotation).abs().max();
        let t = (self.translation - other.translation).abs().max();
        r.max(t)
    }
}

impl Default for Se3 {
    fn default() -> Self {
        Self::identity()
    }
}

/// Coefficients `sin(th)/th`, `(1-cos th)/th^2`, `(th-sin th)/th^3`.
fn exp_coefficients(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < SMALL_ANGLE {
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let half = 0.5 * theta;
        let a = theta.sin() / theta;
        let b = 2.0 * (half.sin() / theta).powi(2);
        let c = if theta < SERIES_ANGLE {
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        } else {
            (theta - theta.sin()) / (t2 * theta)
        };
        (a, b, c)
    }
}

/// Exponential map from the Lie algebra to SE(3).
pub fn se3_exp(t: &Twist) -> Se3 {
    let theta = t.omega.norm();
    let w = hat(&t.omega);
    let w2 = w * w;
    let (a, b, c) = exp_coefficients(theta);
    let rotation = Matrix3::identity() + w * a + w2 * b;
    let left_jacobian = Matrix3::identity() + w * b + w2 * c;
    Se3::new(rotation, left_jacobian * t.v)
}

/// Logarithm of an SE(3) element with rotation angle below [`LOG_ANGLE_LIMIT`].
pub fn se3_log(t: &Se3) -> Result<Twist> {
    let r = &t.rotation;
    let axis_sin = 0.5 * vee(&(r - r.transpose()));
    let s = axis_sin.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if !theta.is_finite() || theta >= LOG_ANGLE_LIMIT {
        return Err(Error::LogDomain(theta));
    }
    let t2 = theta * theta;
    // omega = theta / sin(theta) * axis_sin
    let omega = if theta < SMALL_ANGLE {
        axis_sin * (1.0 + t2 / 6.0)
    } else {
        axis_sin * (theta / s)
    };
    let w = hat(&omega);
    // V^-1 = I - W/2 + k W^2 with k = (1 - (th/2) cot(th/2)) / th^2
    let k = if theta < SMALL_ANGLE {
        1.0 / 12.0 + t2 / 720.0
    } else if theta < SERIES_ANGLE {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / t2
    };
    let v_inv = Matrix3::identity() - w * 0.5 + w * w * k;
    Ok(Twist::new(v_inv * t.translation, omega))
}

/// Closed-form inverse `(R^T, -R^T t)`.
pub fn se3_invert(t: &Se3) -> Se3 {
    let rt = t.rotation.transpose();
    Se3::new(rt, -(rt * t.translation))
}

/// `a * b`: apply `b` first, then `a`.
pub fn se3_compose(a: &Se3, b: &Se3) -> Se3 {
    Se3::new(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
    )
}
