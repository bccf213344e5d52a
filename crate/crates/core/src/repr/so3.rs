//! Rotations and rigid motions.
//!
//! Rotations act actively on column vectors. Euler angles follow the ZYZ
//! intrinsic convention, `R = Rz(alpha) * Ry(beta) * Rz(gamma)`.

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix after checking `R Rᵀ = I` and `det R = 1` to `tol`.
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let deviation = (m * m.transpose() - Matrix3::identity())
            .abs()
            .max()
            .max((m.determinant() - 1.0).abs());
        if deviation > tol || !deviation.is_finite() {
            return Err(Error::NotARotation { deviation });
        }
        Ok(Rotation(m))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_axis(axis: Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        Rotation(*nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix())
    }

    pub fn from_euler_zyz(alpha: f64, beta: f64, gamma: f64) -> Self {
        Rotation::about_z(alpha) * Rotation::about_y(beta) * Rotation::about_z(gamma)
    }

    /// ZYZ Euler angles with `beta` in `[0, pi]`.
    ///
    /// `alpha` comes from the third column; `gamma` from `alpha + gamma`
    /// (upper hemisphere) or `alpha - gamma` (lower), whichever is well
    /// conditioned. At the poles `alpha` is 0 and `gamma` carries the angle.
    pub fn to_euler_zyz(&self) -> (f64, f64, f64) {
        let r = &self.0;
        let beta = r[(0, 2)].hypot(r[(1, 2)]).atan2(r[(2, 2)]);
        let alpha = r[(1, 2)].atan2(r[(0, 2)]);
        let gamma = if r[(2, 2)] >= 0.0 {
            let sum = (r[(1, 0)] - r[(0, 1)]).atan2(r[(0, 0)] + r[(1, 1)]);
            sum - alpha
        } else {
            let diff = (-(r[(1, 0)] + r[(0, 1)])).atan2(r[(1, 1)] - r[(0, 0)]);
            alpha - diff
        };
        (alpha, beta, gamma)
    }

    /// Uniform sample from SO(3) (Shoemake's unit-quaternion method).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        use std::f64::consts::TAU;
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let u3: f64 = rng.random();
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        let q = nalgebra::Quaternion::new(
            a * (TAU * u2).cos(),
            a * (TAU * u2).sin(),
            b * (TAU * u3).cos(),
            b * (TAU * u3).sin(),
        );
        let uq = nalgebra::UnitQuaternion::from_quaternion(q);
        Rotation(*uq.to_rotation_matrix().matrix())
    }

    /// Gram-Schmidt projection of two column vectors onto SO(3).
    ///
    /// Degenerate input (a vanishing first vector, or a second vector
    /// parallel to it) falls back to identity.
    pub fn from_two_vectors(a: Vector3<f64>, b: Vector3<f64>) -> Self {
        const TINY: f64 = 1e-12;
        let na = a.norm();
        if na < TINY || !na.is_finite() {
            return Rotation::identity();
        }
        let c0 = a / na;
        let b_perp = b - c0 * c0.dot(&b);
        let nb = b_perp.norm();
        if nb < TINY || !nb.is_finite() {
            return Rotation::identity();
        }
        let c1 = b_perp / nb;
        let c2 = c0.cross(&c1);
        Rotation(Matrix3::from_columns(&[c0, c1, c2]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Geodesic angle in radians between two rotations.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let c = ((self.0.transpose() * other.0).trace() - 1.0) * 0.5;
        c.clamp(-1.0, 1.0).acos()
    }

    /// `‖R Rᵀ - I‖_F`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0 * self.0.transpose() - Matrix3::identity()).norm()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
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

pub fn rotation_from_euler(alpha: f64, beta: f64, gamma: f64) -> Rotation {
    Rotation::from_euler_zyz(alpha, beta, gamma)
}

/// `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RigidMotion {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl RigidMotion {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        RigidMotion {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        RigidMotion::new(rotation, Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidMotion::new(Rotation::identity(), translation)
    }

    /// `self ∘ other`: rotation `r1 r2`, translation `t1 + r1 t2`.
    pub fn compose(&self, other: &RigidMotion) -> RigidMotion {
        RigidMotion {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation.apply(&other.translation),
        }
    }

    pub fn inverse(&self) -> RigidMotion {
        let rt = self.rotation.inverse();
        RigidMotion {
            rotation: rt,
            translation: -rt.apply(&self.translation),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }
}

/// The 24 proper rotations of the cube: signed permutation matrices with
/// determinant +1, in a fixed enumeration order (identity first).
pub fn octahedral_group() -> Vec<Rotation> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for perm in PERMS {
        for signs in 0..8u32 {
            let mut m = Matrix3::zeros();
            for (row, &col) in perm.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(Rotation(m));
            }
        }
    }
    out
}

/// Applies an integer-valued rotation (from [`octahedral_group`]) to an
/// integer vector, exactly.
pub fn rotate_lattice(r: &Rotation, v: [i32; 3]) -> [i32; 3] {
    let m = r.matrix();
    let mut out = [0i32; 3];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &vj) in v.iter().enumerate() {
            acc += m[(i, j)] * vj as f64;
        }
        *o = acc.round() as i32;
    }
    out
}
