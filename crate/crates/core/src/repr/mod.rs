//! SO(3) representation machinery: rotations, real spherical harmonics,
//! real Wigner-D matrices, real Clebsch-Gordan coefficients and
//! block-diagonal field representations.
//!
//! Everything here is a pure function of its inputs. Clebsch-Gordan tables
//! are memoized behind a mutex and immutable once built.

mod clebsch;
mod field;
mod harmonics;
mod so3;

pub use clebsch::{clebsch_gordan_real, clebsch_gordan_real_with, ClebschGordan};
pub use field::{field_repr, field_repr_with, FieldType};
pub use harmonics::{
    real_spherical_harmonics, real_spherical_harmonics_with, wigner_d_real, wigner_d_real_with, OrderLimits, WignerD,
    DEFAULT_L_MAX,
};
pub use so3::{octahedral_group, rotate_lattice, rotation_from_euler, RigidMotion, Rotation};

pub(crate) use harmonics::sh_unchecked;

/// Converts an order-1 feature (real basis order `y, z, x`) to a Cartesian vector.
pub fn order1_to_cartesian(v: [f64; 3]) -> nalgebra::Vector3<f64> {
    nalgebra::Vector3::new(v[2], v[0], v[1])
}

/// Inverse of [`order1_to_cartesian`].
pub fn cartesian_to_order1(v: &nalgebra::Vector3<f64>) -> [f64; 3] {
    [v.y, v.z, v.x]
}
