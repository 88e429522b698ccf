//! Matrix Lie group primitives for SO(3) and SE₂(3).
//!
//! Tangent vectors of SE₂(3) are ordered `[rotation, velocity, position]`, so the
//! Jacobian of the rotation-extracting homomorphism is `[I₃ 0₃ₓ₆]`. The embedded
//! 5×5 form of an [`ExtendedPose`] is
//!
//! ```text
//! | R  v  p |
//! | 0  1  0 |
//! | 0  0  1 |
//! ```
//!
//! Matrix indices are row-major and zero-based: `R[(1, 0)]` is row 1, column 0.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix5, SMatrix, SVector, Vector3};

use crate::{Error, Result};

pub type Vector9 = SVector<f64, 9>;
pub type Matrix9 = SMatrix<f64, 9, 9>;

/// Tangent vector of SO(3), in radians.
pub type Tangent3 = Vector3<f64>;

/// Below this rotation angle the closed forms switch to their Taylor series.
const SMALL_ANGLE: f64 = 1e-5;
/// Rotation angles this close to π are treated as exactly π by [`so3_log`].
const PI_AMBIGUITY: f64 = 1e-9;
/// Near π the axis is read from the symmetric part instead of the skew part.
const NEAR_PI: f64 = 1e-3;
const ORTHONORMAL_TOL: f64 = 1e-9;

/// A rotation matrix in SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps `m` after checking `mᵀm = I` and `det m = +1` to within 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("rotation matrix"));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if ortho > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidInput(format!(
                "not a rotation: |mᵀm - I| = {ortho:e}, det = {det}"
            )));
        }
        Ok(Rotation(m))
    }

    /// Wraps `m` without checking. Callers must guarantee orthonormality.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Projects an approximately orthonormal matrix back onto SO(3).
    pub fn renormalized(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation(u * d * vt)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn transpose(&self) -> Self {
        self.inverse()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Geodesic distance to `other`, in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        rotation_angle(&(self.0.transpose() * other.0))
    }

    /// Roll, pitch and yaw of the Z-Y-X decomposition `rot_z(yaw)·rot_y(pitch)·rot_x(roll)`.
    pub fn roll_pitch_yaw(&self) -> (f64, f64, f64) {
        let m = &self.0;
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        (roll, pitch, yaw)
    }

    pub fn from_roll_pitch_yaw(roll: f64, pitch: f64, yaw: f64) -> Self {
        rot_z(yaw) * rot_y(pitch) * rot_x(roll)
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Rotation about x by `phi` (roll).
pub fn rot_x(phi: f64) -> Rotation {
    let (s, c) = phi.sin_cos();
    Rotation(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
}

/// Rotation about y by `theta` (pitch).
pub fn rot_y(theta: f64) -> Rotation {
    let (s, c) = theta.sin_cos();
    Rotation(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
}

/// Rotation about z by `psi` (yaw).
pub fn rot_z(psi: f64) -> Rotation {
    let (s, c) = psi.sin_cos();
    Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
}

pub fn hat3(w: &Tangent3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn vee3(m: &Matrix3<f64>) -> Tangent3 {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

fn rotation_angle(m: &Matrix3<f64>) -> f64 {
    let skew = vee3(&(m - m.transpose())) * 0.5;
    let cos = 0.5 * (m.trace() - 1.0);
    skew.norm().atan2(cos)
}

pub fn so3_exp(w: &Tangent3) -> Rotation {
    let theta2 = w.norm_squared();
    let k = hat3(w);
    let (a, b) = if theta2.sqrt() < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Principal logarithm. Fails with [`Error::BranchAmbiguity`] at angle π.
pub fn so3_log(r: &Rotation) -> Result<Tangent3> {
    let m = &r.0;
    let skew = vee3(&(m - m.transpose())) * 0.5;
    let sin = skew.norm();
    let cos = 0.5 * (m.trace() - 1.0);
    let theta = sin.atan2(cos);

    if theta < SMALL_ANGLE {
        return Ok(skew * (1.0 + theta * theta / 6.0));
    }
    if PI - theta < PI_AMBIGUITY {
        return Err(Error::BranchAmbiguity { angle: theta });
    }
    if PI - theta < NEAR_PI {
        // R + Rᵀ = 2cosθ I + 2(1 - cosθ) kkᵀ
        let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
        let scale = 1.0 - cos;
        let i = (0..3)
            .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
            .unwrap();
        let mut axis = sym.column(i) / scale;
        axis /= axis.norm();
        if axis.dot(&skew) < 0.0 {
            axis = -axis;
        }
        return Ok(axis * theta);
    }
    Ok(skew * (theta / sin))
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(w: &Tangent3) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat3(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of [`so3_left_jacobian`], valid for angles below 2π.
pub fn so3_left_jacobian_inv(w: &Tangent3) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat3(w);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

/// Lie algebra element of SE₂(3), ordered `[ξ_R (rad), ξ_v (m/s), ξ_p (m)]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tangent9(pub Vector9);

impl Tangent9 {
    pub fn zeros() -> Self {
        Tangent9(Vector9::zeros())
    }

    pub fn from_parts(rot: &Vector3<f64>, vel: &Vector3<f64>, pos: &Vector3<f64>) -> Self {
        let mut xi = Vector9::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(rot);
        xi.fixed_rows_mut::<3>(3).copy_from(vel);
        xi.fixed_rows_mut::<3>(6).copy_from(pos);
        Tangent9(xi)
    }

    pub fn rot(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into()
    }

    pub fn vel(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into()
    }

    pub fn pos(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(6).into()
    }

    pub fn hat(&self) -> Matrix5<f64> {
        let mut m = Matrix5::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&self.rot()));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.vel());
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.pos());
        m
    }

    pub fn vee(m: &Matrix5<f64>) -> Self {
        let rot = vee3(&m.fixed_view::<3, 3>(0, 0).into());
        let vel: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into();
        let pos: Vector3<f64> = m.fixed_view::<3, 1>(0, 4).into();
        Tangent9::from_parts(&rot, &vel, &pos)
    }
}

/// Element of SE₂(3): orientation, world-frame velocity (m/s) and position (m).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtendedPose {
    pub r: Rotation,
    pub v: Vector3<f64>,
    pub p: Vector3<f64>,
}

impl ExtendedPose {
    pub fn new(r: Rotation, v: Vector3<f64>, p: Vector3<f64>) -> Self {
        ExtendedPose { r, v, p }
    }

    pub fn identity() -> Self {
        ExtendedPose::new(Rotation::identity(), Vector3::zeros(), Vector3::zeros())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.r.inverse();
        ExtendedPose::new(rt, -rt.rotate(&self.v), -rt.rotate(&self.p))
    }

    pub fn compose(&self, other: &ExtendedPose) -> Self {
        ExtendedPose::new(
            self.r * other.r,
            self.v + self.r.rotate(&other.v),
            self.p + self.r.rotate(&other.p),
        )
    }

    pub fn to_matrix(&self) -> Matrix5<f64> {
        let mut m = Matrix5::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.r.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.v);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.p);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.r.matrix().iter().chain(self.v.iter()).chain(self.p.iter()).all(|x| x.is_finite())
    }
}

impl Mul for ExtendedPose {
    type Output = ExtendedPose;
    fn mul(self, rhs: ExtendedPose) -> ExtendedPose {
        self.compose(&rhs)
    }
}

pub fn se23_exp(xi: &Tangent9) -> ExtendedPose {
    let w = xi.rot();
    let jl = so3_left_jacobian(&w);
    ExtendedPose::new(so3_exp(&w), jl * xi.vel(), jl * xi.pos())
}

pub fn se23_log(x: &ExtendedPose) -> Result<Tangent9> {
    let w = so3_log(&x.r)?;
    let jinv = so3_left_jacobian_inv(&w);
    Ok(Tangent9::from_parts(&w, &(jinv * x.v), &(jinv * x.p)))
}

/// Adjoint matrix, satisfying `X·ξ^·X⁻¹ = (Ad_X ξ)^`.
pub fn adjoint(x: &ExtendedPose) -> Matrix9 {
    let r = x.r.matrix();
    let mut ad = Matrix9::zeros();
    for k in 0..3 {
        ad.fixed_view_mut::<3, 3>(3 * k, 3 * k).copy_from(r);
    }
    ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(hat3(&x.v) * r));
    ad.fixed_view_mut::<3, 3>(6, 0).copy_from(&(hat3(&x.p) * r));
    ad
}

/// The group homomorphism SE₂(3) → SO(3) that keeps the rotation block.
pub fn homomorphism_h(x: &ExtendedPose) -> Rotation {
    x.r
}

/// Yaw `atan2(R₁₀, R₀₀)` in (−π, π].
pub fn yaw_of(r: &Rotation) -> Result<f64> {
    let m = r.matrix();
    let (s, c) = (m[(1, 0)], m[(0, 0)]);
    if s.hypot(c) < 1e-12 {
        return Err(Error::GimbalLock);
    }
    let psi = s.atan2(c);
    Ok(if psi <= -PI { psi + 2.0 * PI } else { psi })
}

/// Removes yaw: `rot_z(yaw_of(r))ᵀ · r`, leaving the X-then-Y (roll, pitch) part.
pub fn roll_pitch_projection(r: &Rotation) -> Result<Rotation> {
    let psi = yaw_of(r)?;
    Ok(&rot_z(psi).inverse() * r)
}
