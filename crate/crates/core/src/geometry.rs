//! Rotation and rigid-transform algebra on SO(3)/SE(3).
//!
//! Rotations are stored as orthonormal 3x3 matrices and manipulated through
//! the exponential/log maps of so(3). Manifold gradient steps follow the
//! right-perturbation convention: the energy is rewritten as
//! `E(R exp([dw]x))` and the Jacobian is taken at `dw = 0`, so a descent step
//! is `R <- R * exp(-lr * grad)`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::sampling::OrientedPointCloud;

/// Axis-angle vector in so(3): direction is the rotation axis, norm the angle
/// in radians.
pub type AxisAngle = Vector3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// A validated member of SO(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Wraps a matrix after checking orthonormality and `det = +1`.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let gram_defect = (m.transpose() * m - Matrix3::identity()).norm();
        if gram_defect > ORTHONORMAL_TOL {
            return Err(GeometryError::NotOrthonormal { defect: gram_defect });
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::BadDeterminant { det });
        }
        Ok(Self(m))
    }

    /// Wraps a matrix that is orthonormal by construction, re-orthonormalizing
    /// through the quaternion chart to absorb accumulated round-off.
    pub fn renormalize(m: Matrix3<f64>) -> Self {
        let q = UnitQuaternion::from_matrix(&m);
        Self(q.to_rotation_matrix().into_inner())
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self::renormalize(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

/// World-to-canonical rigid transform: `x_c = R x_w + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: RotationMatrix::identity(), translation: Vector3::zeros() }
    }

    pub fn apply_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(x) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let t = -rt.rotate(&self.translation);
        Self { rotation: rt, translation: t }
    }
}

/// Skew-symmetric matrix `[w]x` so that `[w]x v = w x v`.
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Exponential map so(3) -> SO(3) via the Rodrigues formula.
///
/// For angles below 1e-8 the sinc terms switch to their second-order Taylor
/// expansions.
pub fn exp_so3(omega: &AxisAngle) -> RotationMatrix {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(omega);
    let (a, b) = if theta < 1e-8 {
        // sin(t)/t ~ 1 - t^2/6, (1-cos t)/t^2 ~ 1/2 - t^2/24
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    RotationMatrix::renormalize(Matrix3::identity() + a * k + b * (k * k))
}

/// Log map SO(3) -> so(3); output norm is at most pi.
///
/// Near `theta = pi` the rotation axis is recovered from the diagonal of the
/// symmetric part, which stays well conditioned where the sine-based formula
/// degenerates.
pub fn log_so3(r: &RotationMatrix) -> AxisAngle {
    let m = r.matrix();
    let trace = m.trace();
    let cos_theta = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    // atan2 of (sin, cos) keeps full precision near both theta = 0 and pi,
    // where acos of the trace alone loses ~sqrt(eps).
    let off = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let sin_theta = off.norm() / 2.0;
    let theta = sin_theta.atan2(cos_theta);

    if theta < 1e-10 {
        return Vector3::zeros();
    }

    if (std::f64::consts::PI - theta).abs() < 1e-6 {
        // theta ~ pi: R ~ 2 a a^T - I, so a^2_i = (m_ii + 1)/2.
        let xx = ((m[(0, 0)] + 1.0) / 2.0).max(0.0);
        let yy = ((m[(1, 1)] + 1.0) / 2.0).max(0.0);
        let zz = ((m[(2, 2)] + 1.0) / 2.0).max(0.0);
        let mut axis = if xx >= yy && xx >= zz {
            let x = xx.sqrt();
            Vector3::new(x, m[(0, 1)] / (2.0 * x), m[(0, 2)] / (2.0 * x))
        } else if yy >= zz {
            let y = yy.sqrt();
            Vector3::new(m[(0, 1)] / (2.0 * y), y, m[(1, 2)] / (2.0 * y))
        } else {
            let z = zz.sqrt();
            Vector3::new(m[(0, 2)] / (2.0 * z), m[(1, 2)] / (2.0 * z), z)
        };
        axis.normalize_mut();
        // Fix the sign so that exp(theta * axis) reproduces R (sign is free at
        // exactly pi, where both choices are valid).
        let off = Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        );
        if off.dot(&axis) < 0.0 {
            axis = -axis;
        }
        return theta * axis;
    }

    let factor = theta / (2.0 * theta.sin());
    Vector3::new(
        factor * (m[(2, 1)] - m[(1, 2)]),
        factor * (m[(0, 2)] - m[(2, 0)]),
        factor * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Builds a rotation from the continuous 6D parametrization: Gram-Schmidt on
/// two 3-vectors, third column by cross product.
pub fn rotation_from_6d(v: &[f64; 6]) -> Result<RotationMatrix, GeometryError> {
    let v1 = Vector3::new(v[0], v[1], v[2]);
    let v2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = v1.norm();
    if n1 < 1e-12 {
        return Err(GeometryError::DegenerateInput {
            what: "first 3-vector of 6D rotation is numerically zero",
        });
    }
    let a = v1 / n1;
    let w = v2 - a.dot(&v2) * a;
    let nw = w.norm();
    if nw < 1e-12 {
        return Err(GeometryError::DegenerateInput {
            what: "second 3-vector of 6D rotation is parallel to the first",
        });
    }
    let b = w / nw;
    let c = a.cross(&b);
    RotationMatrix::new(Matrix3::from_columns(&[a, b, c]))
}

/// Transforms a world cloud into canonical coordinates: `x_c = R x_w + t`,
/// `n_c = R n_w`.
pub fn apply_pose(pose: &RigidPose, cloud: &OrientedPointCloud) -> OrientedPointCloud {
    let points = cloud.points.iter().map(|x| pose.apply_point(x)).collect();
    let normals = cloud.normals.iter().map(|n| pose.rotation.rotate(n)).collect();
    OrientedPointCloud { points, normals }
}

/// One manifold descent step: `R * exp(-step * grad)`, where `grad` is
/// `dE/d(dw)` evaluated at `dw = 0`.
pub fn rotation_step(r: &RotationMatrix, grad: &Vector3<f64>, step: f64) -> RotationMatrix {
    r.compose(&exp_so3(&(-step * grad)))
}

/// Draws `k` rotations uniformly from SO(3) by normalizing 4D Gaussian
/// quaternions. Deterministic per seed.
pub fn sample_uniform_rotations(k: usize, seed: u64) -> Vec<RotationMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let q = loop {
                let q = Quaternion::new(
                    gaussian(&mut rng),
                    gaussian(&mut rng),
                    gaussian(&mut rng),
                    gaussian(&mut rng),
                );
                if q.norm() > 1e-12 {
                    break q;
                }
            };
            let uq = UnitQuaternion::from_quaternion(q);
            RotationMatrix::renormalize(uq.to_rotation_matrix().into_inner())
        })
        .collect()
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; avoids pulling the full rand_distr surface for one helper.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Geodesic distance between two rotations, in degrees.
pub fn geodesic_angle(ra: &RotationMatrix, rb: &RotationMatrix) -> f64 {
    let trace = (ra.matrix().transpose() * rb.matrix()).trace();
    let cos_theta = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    cos_theta.acos().to_degrees()
}
