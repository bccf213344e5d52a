#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssconv::repr::FieldType;
use ssconv::tensor::{Grid, Site, SparseTensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random tensor on `[0, extent)³` with each cell active with probability `occupancy`
/// (at least one active site).
pub fn random_tensor(rng: &mut ChaCha8Rng, field: &FieldType, extent: i32, occupancy: f64) -> SparseTensor {
    let mut sites = Vec::new();
    for z in 0..extent {
        for y in 0..extent {
            for x in 0..extent {
                if rng.random::<f64>() < occupancy {
                    sites.push(Site::new(x, y, z));
                }
            }
        }
    }
    if sites.is_empty() {
        sites.push(Site::new(extent / 2, extent / 2, extent / 2));
    }
    let k = field.dim();
    let feats = Array2::from_shape_fn((sites.len(), k), |_| rng.random_range(-1.0..1.0));
    let grid = Grid {
        voxel_size: 1.0,
        origin: [0.0; 3],
        extent: [extent as u32; 3],
    };
    SparseTensor::from_rows(sites, feats, field.clone(), grid).unwrap()
}

/// Random tensor with exactly `n` distinct sites in `[0, extent)³`.
pub fn random_sites(rng: &mut ChaCha8Rng, field: &FieldType, extent: i32, n: usize) -> SparseTensor {
    let mut set = std::collections::BTreeSet::new();
    while set.len() < n {
        set.insert(Site::new(rng.random_range(0..extent), rng.random_range(0..extent), rng.random_range(0..extent)));
    }
    let sites: Vec<Site> = set.into_iter().collect();
    let feats = Array2::from_shape_fn((sites.len(), field.dim()), |_| rng.random_range(-1.0..1.0));
    let grid = Grid {
        voxel_size: 1.0,
        origin: [0.0; 3],
        extent: [extent as u32; 3],
    };
    SparseTensor::from_rows(sites, feats, field.clone(), grid).unwrap()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Tensors equal as site sets, features within `tol`.
pub fn assert_tensors_close(a: &SparseTensor, b: &SparseTensor, tol: f64) {
    assert_eq!(a.sites(), b.sites(), "site sets differ");
    let err = max_abs_diff(a.features(), b.features());
    assert!(err < tol, "feature error {err:e} exceeds {tol:e}");
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}
