//! Real spherical harmonics and real Wigner-D matrices.
//!
//! Real basis convention (shared by harmonics, Wigner-D and Clebsch-Gordan
//! tables): component index `m + l` for `m = -l..=l`, with
//!
//! ```text
//! Y_{l,0}  = N_l^0 P_l^0(z)
//! Y_{l,m}  = √2 N_l^m P_l^m(z) cos(mφ)     m > 0
//! Y_{l,m}  = √2 N_l^|m| P_l^|m|(z) sin(|m|φ) m < 0
//! ```
//!
//! where `P_l^m` carries no Condon-Shortley phase. This equals `U Y^ℂ`
//! with the complex (Condon-Shortley) harmonics and the usual unitary
//! change of basis `U`. For `l = 1` the components are `(y, z, x)` up to
//! the factor `√(3/4π)`.

use ndarray::Array2;
use num_complex::Complex64;

use super::so3::Rotation;
use crate::error::{Error, Result};

/// Configured order limits.
///
/// Feature orders are bounded by `l_max`. Kernel construction couples two
/// feature orders into `J ≤ k + l`, so harmonic tables (spherical
/// harmonics, Wigner-D, Clebsch-Gordan) accept orders up to `2 * l_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrderLimits {
    pub l_max: u32,
}

pub const DEFAULT_L_MAX: u32 = 3;

impl Default for OrderLimits {
    fn default() -> Self {
        OrderLimits { l_max: DEFAULT_L_MAX }
    }
}

impl OrderLimits {
    pub fn harmonic_max(&self) -> u32 {
        2 * self.l_max
    }

    pub fn check_feature(&self, l: u32) -> Result<()> {
        if l > self.l_max {
            return Err(Error::OrderExceedsMax {
                order: l,
                max: self.l_max,
            });
        }
        Ok(())
    }

    pub fn check_harmonic(&self, l: u32) -> Result<()> {
        if l > self.harmonic_max() {
            return Err(Error::OrderExceedsMax {
                order: l,
                max: self.harmonic_max(),
            });
        }
        Ok(())
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

const UNIT_TOL: f64 = 1e-9;

/// Real spherical harmonics of order `l` at unit vector `u`, as a
/// `2l+1` vector.
pub fn real_spherical_harmonics(l: u32, u: [f64; 3]) -> Result<Vec<f64>> {
    real_spherical_harmonics_with(l, u, OrderLimits::default())
}

pub fn real_spherical_harmonics_with(l: u32, u: [f64; 3], limits: OrderLimits) -> Result<Vec<f64>> {
    limits.check_harmonic(l)?;
    let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if (norm - 1.0).abs() > UNIT_TOL || !norm.is_finite() {
        return Err(Error::NonUnitVector { norm });
    }
    Ok(sh_unchecked(l, u))
}

pub(crate) fn sh_unchecked(l: u32, u: [f64; 3]) -> Vec<f64> {
    let [x, y, z] = u;
    let li = l as i64;
    let mut out = vec![0.0; 2 * l as usize + 1];
    // (x + iy)^m, accumulated incrementally.
    let mut pow = Complex64::new(1.0, 0.0);
    let xy = Complex64::new(x, y);
    for m in 0..=l {
        let legendre = legendre_reduced(l, m, z);
        let nlm = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * factorial(l - m) / factorial(l + m)).sqrt();
        if m == 0 {
            out[l as usize] = nlm * legendre;
        } else {
            let scale = std::f64::consts::SQRT_2 * nlm * legendre;
            out[(li + m as i64) as usize] = scale * pow.re;
            out[(li - m as i64) as usize] = scale * pow.im;
        }
        pow *= xy;
    }
    out
}

/// `P_l^m(z) / (1 - z²)^{m/2}` without Condon-Shortley phase: a polynomial
/// in `z`, evaluated by the standard upward recursion in `l`.
fn legendre_reduced(l: u32, m: u32, z: f64) -> f64 {
    // (2m-1)!!
    let mut pmm = 1.0;
    for k in 1..=m {
        pmm *= (2 * k - 1) as f64;
    }
    if l == m {
        return pmm;
    }
    let mut prev = pmm;
    let mut cur = z * (2 * m + 1) as f64 * pmm;
    for ll in (m + 2)..=l {
        let next = ((2 * ll - 1) as f64 * z * cur - (ll + m - 1) as f64 * prev) / (ll - m) as f64;
        prev = cur;
        cur = next;
    }
    cur
}

/// Wigner small-d matrix element `d^l_{m'm}(β)` (Wigner's sum formula).
pub(crate) fn wigner_small_d(l: i64, mp: i64, m: i64, beta: f64) -> f64 {
    let (s, c) = (0.5 * beta).sin_cos();
    let pre = (factorial((l + mp) as u32) * factorial((l - mp) as u32) * factorial((l + m) as u32) * factorial((l - m) as u32)).sqrt();
    let lo = 0.max(m - mp);
    let hi = (l + m).min(l - mp);
    let mut acc = 0.0;
    for k in lo..=hi {
        let denom = factorial((l + m - k) as u32) * factorial(k as u32) * factorial((mp - m + k) as u32) * factorial((l - mp - k) as u32);
        let sign = if (mp - m + k) % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * c.powi((2 * l + m - mp - 2 * k) as i32) * s.powi((mp - m + 2 * k) as i32) / denom;
    }
    pre * acc
}

/// Unitary change of basis from complex (Condon-Shortley) to real
/// harmonics: `Y_real = U Y_complex`. Rows are real components, columns
/// complex `m`, both indexed by `m + l`.
pub(crate) fn complex_to_real(l: u32) -> Array2<Complex64> {
    let n = 2 * l as usize + 1;
    let li = l as i64;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut u = Array2::<Complex64>::zeros((n, n));
    u[[l as usize, l as usize]] = Complex64::new(1.0, 0.0);
    for m in 1..=li {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        let pos = (li + m) as usize;
        let neg = (li - m) as usize;
        // m > 0 row: (Y^{-m} + (-1)^m Y^m) / √2
        u[[pos, neg]] = Complex64::new(h, 0.0);
        u[[pos, pos]] = Complex64::new(sign * h, 0.0);
        // m < 0 row: i (Y^{-m} - (-1)^m Y^{m}) / √2 with -m < 0
        u[[neg, neg]] = Complex64::new(0.0, h);
        u[[neg, pos]] = Complex64::new(0.0, -sign * h);
    }
    u
}

/// Real orthogonal `(2l+1)×(2l+1)` matrix with `Y^l(R u) = D^l(R) Y^l(u)`.
#[derive(Clone, Debug)]
pub struct WignerD {
    pub order: u32,
    pub matrix: Array2<f64>,
}

pub fn wigner_d_real(l: u32, r: &Rotation) -> Result<WignerD> {
    wigner_d_real_with(l, r, OrderLimits::default())
}

/// Closed-form little-d evaluated at the ZYZ angles of `r`, assembled into
/// the complex matrix acting on `Y^ℂ(R u)`, then conjugated into the real
/// basis.
pub fn wigner_d_real_with(l: u32, r: &Rotation, limits: OrderLimits) -> Result<WignerD> {
    limits.check_harmonic(l)?;
    Ok(WignerD {
        order: l,
        matrix: wigner_d_unchecked(l, r),
    })
}

pub(crate) fn wigner_d_unchecked(l: u32, r: &Rotation) -> Array2<f64> {
    let n = 2 * l as usize + 1;
    if l == 0 {
        return Array2::from_elem((1, 1), 1.0);
    }
    let (alpha, beta, gamma) = r.to_euler_zyz();
    let li = l as i64;
    // Y^ℂ_m(R u) = Σ_{m'} conj(D_{m m'}(R)) Y^ℂ_{m'}(u), D = e^{-imα} d e^{-im'γ}.
    let mut dc = Array2::<Complex64>::zeros((n, n));
    for m in -li..=li {
        for mp in -li..=li {
            let d = wigner_small_d(li, m, mp, beta);
            let phase = Complex64::from_polar(1.0, m as f64 * alpha + mp as f64 * gamma);
            dc[[(m + li) as usize, (mp + li) as usize]] = phase * d;
        }
    }
    let u = complex_to_real(l);
    let u_dag = u.t().mapv(|z| z.conj());
    let real = u.dot(&dc).dot(&u_dag);
    real.mapv(|z| z.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::so3::{octahedral_group, rotation_from_euler};
    use rand::SeedableRng;

    fn unit(v: [f64; 3]) -> [f64; 3] {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    }

    #[test]
    fn order_zero_harmonic_is_constant() {
        let y = real_spherical_harmonics(0, unit([0.3, -0.2, 0.9])).unwrap();
        assert!((y[0] - 0.282_094_791_773_878_1).abs() < 1e-15);
    }

    #[test]
    fn order_one_at_pole_hits_middle_slot() {
        let y = real_spherical_harmonics(1, [0.0, 0.0, 1.0]).unwrap();
        let c = (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
        assert!(y[0].abs() < 1e-15 && y[2].abs() < 1e-15);
        assert!((y[1] - c).abs() < 1e-15);
    }

    #[test]
    fn non_unit_input_rejected() {
        assert!(matches!(real_spherical_harmonics(1, [1.0, 1.0, 0.0]), Err(Error::NonUnitVector { .. })));
    }

    #[test]
    fn order_limit_enforced() {
        let r = Rotation::identity();
        assert!(matches!(wigner_d_real(7, &r), Err(Error::OrderExceedsMax { .. })));
        assert!(wigner_d_real(6, &r).is_ok());
    }

    #[test]
    fn order_zero_wigner_is_one() {
        let r = rotation_from_euler(0.4, 1.1, -2.0);
        assert_eq!(wigner_d_real(0, &r).unwrap().matrix[[0, 0]], 1.0);
    }

    #[test]
    fn identity_rotation_gives_identity() {
        for l in 0..=6 {
            let d = wigner_d_real(l, &Rotation::identity()).unwrap().matrix;
            let eye = Array2::<f64>::eye(2 * l as usize + 1);
            assert!((&d - &eye).iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn order_one_is_permuted_rotation_matrix() {
        // (y, z, x) ordering: D¹ = P R Pᵀ.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let perm = [1usize, 2, 0];
        for _ in 0..50 {
            let r = Rotation::random(&mut rng);
            let d = wigner_d_real(1, &r).unwrap().matrix;
            for i in 0..3 {
                for j in 0..3 {
                    assert!((d[[i, j]] - r.matrix()[(perm[i], perm[j])]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn harmonics_steer_on_octahedral_rotations() {
        let u = unit([0.2, -0.7, 0.4]);
        for r in octahedral_group() {
            let ru = r.apply(&nalgebra::Vector3::from(u));
            for l in 0..=4 {
                let d = wigner_d_unchecked(l, &r);
                let lhs = d.dot(&ndarray::Array1::from(sh_unchecked(l, u)));
                let rhs = sh_unchecked(l, [ru.x, ru.y, ru.z]);
                for (a, b) in lhs.iter().zip(&rhs) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
