//! Real Clebsch-Gordan coefficients.
//!
//! `Q_j^{kl}` are the slices of the unique (up to scale) tensor
//! `C[a, b, j]` that is invariant under `D^k ⊗ D^l ⊗ D^J` in the real
//! basis. The tensor is obtained as the null vector of
//! `Σ_R (A_R - I)ᵀ (A_R - I)` with `A_R = D^k(R) ⊗ D^l(R) ⊗ D^J(R)` over
//! two fixed generic rotations, which together generate a dense subgroup
//! of SO(3).
//!
//! Normalization: `Σ C² = 2J + 1`. Sign: the first entry (flat order)
//! with magnitude above `1e-8` is positive.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use ndarray::Array2;

use super::harmonics::{wigner_d_unchecked, OrderLimits};
use super::so3::rotation_from_euler;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ClebschGordan {
    pub k: u32,
    pub l: u32,
    pub j: u32,
    /// `2J+1` matrices, each `(2k+1)×(2l+1)`, indexed by `j + J`.
    pub q: Vec<Array2<f64>>,
}

type CgKey = (u32, u32, u32);

fn cache() -> &'static Mutex<HashMap<CgKey, Arc<ClebschGordan>>> {
    static CACHE: OnceLock<Mutex<HashMap<CgKey, Arc<ClebschGordan>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

pub fn clebsch_gordan_real(k: u32, l: u32, j: u32) -> Result<Arc<ClebschGordan>> {
    clebsch_gordan_real_with(k, l, j, OrderLimits::default())
}

pub fn clebsch_gordan_real_with(k: u32, l: u32, j: u32, limits: OrderLimits) -> Result<Arc<ClebschGordan>> {
    if j < k.abs_diff(l) || j > k + l {
        return Err(Error::SelectionRule { k, l, j });
    }
    limits.check_feature(k)?;
    limits.check_feature(l)?;
    limits.check_harmonic(j)?;
    if let Some(hit) = cache().lock().expect("cg cache poisoned").get(&(k, l, j)) {
        return Ok(hit.clone());
    }
    let cg = Arc::new(compute(k, l, j));
    cache().lock().expect("cg cache poisoned").insert((k, l, j), cg.clone());
    Ok(cg)
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn compute(k: u32, l: u32, j: u32) -> ClebschGordan {
    let (dk, dl, dj) = (2 * k as usize + 1, 2 * l as usize + 1, 2 * j as usize + 1);
    let n = dk * dl * dj;
    let probes = [rotation_from_euler(0.7, 1.1, 2.3), rotation_from_euler(1.9, 0.4, -0.8)];
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for r in &probes {
        let a = to_dmatrix(&wigner_d_unchecked(k, r))
            .kronecker(&to_dmatrix(&wigner_d_unchecked(l, r)))
            .kronecker(&to_dmatrix(&wigner_d_unchecked(j, r)));
        let m = a - DMatrix::<f64>::identity(n, n);
        gram += m.transpose() * &m;
    }
    let eig = nalgebra::SymmetricEigen::new(gram);
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty spectrum");
    let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = (dj as f64).sqrt() / norm;
    let sign = v.iter().find(|x| x.abs() > 1e-8).map_or(1.0, |x| x.signum());
    for x in &mut v {
        *x *= scale * sign;
    }
    let q = (0..dj)
        .map(|jj| Array2::from_shape_fn((dk, dl), |(a, b)| v[(a * dl + b) * dj + jj]))
        .collect();
    ClebschGordan { k, l, j, q }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_coupling() {
        let cg = clebsch_gordan_real(0, 0, 0).unwrap();
        assert_eq!(cg.q.len(), 1);
        assert!((cg.q[0][[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vector_dot_product_coupling() {
        let cg = clebsch_gordan_real(1, 1, 0).unwrap();
        let s = 1.0 / 3f64.sqrt();
        for a in 0..3 {
            for b in 0..3 {
                let expected = if a == b { s } else { 0.0 };
                assert!((cg.q[0][[a, b]] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn selection_rule() {
        assert!(matches!(clebsch_gordan_real(1, 1, 3), Err(Error::SelectionRule { .. })));
    }

    #[test]
    fn normalization() {
        for (k, l, j) in [(1, 2, 2), (2, 2, 4), (0, 3, 3), (3, 3, 6)] {
            let cg = clebsch_gordan_real(k, l, j).unwrap();
            let total: f64 = cg.q.iter().flat_map(|m| m.iter()).map(|x| x * x).sum();
            assert!((total - (2 * j + 1) as f64).abs() < 1e-10);
        }
    }
}
