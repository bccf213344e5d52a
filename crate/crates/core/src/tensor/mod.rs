//! Sparse voxel tensors: a hash table of active sites paired row-for-row
//! with a feature matrix.
//!
//! Rows are kept in canonical z-major order (`z`, then `y`, then `x`) so
//! rule books and outputs are reproducible regardless of insertion order.

mod io;
mod voxel;

use std::cmp::Ordering;
use rustc_hash::FxHashMap as HashMap;

use nalgebra::Vector3;
use ndarray::{Array2, Array4, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::repr::{field_repr, FieldType, Rotation};

pub use io::{deserialize, deserialize_with_field, parse_point_cloud, serialize, write_point_cloud, SSTF_MAGIC, SSTF_VERSION};
pub use voxel::{voxelize, voxelize_on, PointCloud};

/// Integer grid coordinate `[x, y, z]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Site(pub [i32; 3]);

impl Site {
    pub fn new(x: i32, y: i32, z: i32) -> Self {
        Site([x, y, z])
    }

    pub fn offset(self, d: [i32; 3]) -> Site {
        Site([self.0[0] + d[0], self.0[1] + d[1], self.0[2] + d[2]])
    }
}

impl Ord for Site {
    fn cmp(&self, other: &Self) -> Ordering {
        let [ax, ay, az] = self.0;
        let [bx, by, bz] = other.0;
        (az, ay, ax).cmp(&(bz, by, bx))
    }
}

impl PartialOrd for Site {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Placement of the integer lattice in world space.
///
/// Site `x` has its cell center at `origin + voxel_size * x`; its cell is
/// the half-open box `[center - voxel_size/2, center + voxel_size/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub voxel_size: f64,
    pub origin: [f64; 3],
    /// Nominal extent used for dense conversion and file headers. Sites are
    /// not clipped to it.
    pub extent: [u32; 3],
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            voxel_size: 1.0,
            origin: [0.0; 3],
            extent: [0; 3],
        }
    }
}

impl Grid {
    pub fn center_of(&self, site: Site) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + self.voxel_size * site.0[0] as f64,
            self.origin[1] + self.voxel_size * site.0[1] as f64,
            self.origin[2] + self.voxel_size * site.0[2] as f64,
        )
    }

    /// Continuous lattice coordinate of a world point (site centers are integers).
    pub fn lattice_coord(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            (p.x - self.origin[0]) / self.voxel_size,
            (p.y - self.origin[1]) / self.voxel_size,
            (p.z - self.origin[2]) / self.voxel_size,
        )
    }

    /// Cell containing `p` (half-open cells).
    pub fn cell_of(&self, p: &Vector3<f64>) -> Site {
        let c = self.lattice_coord(p);
        Site([(c.x + 0.5).floor() as i32, (c.y + 0.5).floor() as i32, (c.z + 0.5).floor() as i32])
    }
}

#[derive(Clone, Debug)]
pub struct SparseTensor {
    sites: Vec<Site>,
    index: HashMap<Site, usize>,
    features: Array2<f64>,
    field_type: FieldType,
    grid: Grid,
}

impl SparseTensor {
    pub fn empty(field_type: FieldType, grid: Grid) -> Self {
        let k = field_type.dim();
        SparseTensor {
            sites: Vec::new(),
            index: HashMap::default(),
            features: Array2::zeros((0, k)),
            field_type,
            grid,
        }
    }

    /// Builds a tensor from unordered rows; rows are permuted into
    /// canonical order. Duplicate sites are an error.
    pub fn from_rows(sites: Vec<Site>, features: Array2<f64>, field_type: FieldType, grid: Grid) -> Result<Self> {
        if features.nrows() != sites.len() || features.ncols() != field_type.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} sites with a {}x{} feature matrix of type {field_type}",
                sites.len(),
                features.nrows(),
                features.ncols()
            )));
        }
        let mut perm: Vec<usize> = (0..sites.len()).collect();
        perm.sort_by_key(|&i| sites[i]);
        let sorted: Vec<Site> = perm.iter().map(|&i| sites[i]).collect();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateSite(w[0].0));
        }
        let features = if perm.iter().enumerate().all(|(i, &p)| i == p) {
            features
        } else {
            features.select(Axis(0), &perm)
        };
        Ok(Self::from_sorted_unchecked(sorted, features, field_type, grid))
    }

    /// Caller guarantees `sites` is strictly increasing in canonical order.
    pub(crate) fn from_sorted_unchecked(sites: Vec<Site>, features: Array2<f64>, field_type: FieldType, grid: Grid) -> Self {
        debug_assert!(sites.windows(2).all(|w| w[0] < w[1]));
        debug_assert_eq!(features.dim(), (sites.len(), field_type.dim()));
        let index = sites.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        SparseTensor {
            sites,
            index,
            features,
            field_type,
            grid,
        }
    }

    /// Same sites and grid, new features.
    pub fn with_features(&self, features: Array2<f64>, field_type: FieldType) -> Result<Self> {
        if features.nrows() != self.sites.len() || features.ncols() != field_type.dim() {
            return Err(Error::ShapeMismatch(format!(
                "expected {}x{}, got {:?}",
                self.sites.len(),
                field_type.dim(),
                features.dim()
            )));
        }
        Ok(SparseTensor {
            sites: self.sites.clone(),
            index: self.index.clone(),
            features,
            field_type,
            grid: self.grid,
        })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn field_type(&self) -> &FieldType {
        &self.field_type
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn voxel_size(&self) -> f64 {
        self.grid.voxel_size
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn row_of(&self, site: Site) -> Option<usize> {
        self.index.get(&site).copied()
    }

    /// Feature at `site`, or `None` for an inactive (ground-state, zero) site.
    pub fn lookup(&self, site: Site) -> Option<ArrayView1<'_, f64>> {
        self.row_of(site).map(|r| self.features.row(r))
    }

    /// Dense `(x, y, z, channel)` array; inactive cells are zero.
    pub fn to_dense(&self, dims: [usize; 3]) -> Result<Array4<f64>> {
        let k = self.field_type.dim();
        let mut out = Array4::zeros((dims[0], dims[1], dims[2], k));
        for (row, site) in self.sites.iter().enumerate() {
            let [x, y, z] = site.0;
            let inside = [x, y, z].iter().zip(dims).all(|(&c, d)| c >= 0 && (c as usize) < d);
            if !inside {
                return Err(Error::OutOfBounds { site: site.0, dims });
            }
            out.slice_mut(ndarray::s![x as usize, y as usize, z as usize, ..])
                .assign(&self.features.row(row));
        }
        Ok(out)
    }

    /// Inverse of [`SparseTensor::to_dense`]: every cell with a non-zero
    /// feature becomes active.
    pub fn from_dense(dense: &Array4<f64>, field_type: FieldType, grid: Grid) -> Result<Self> {
        let (nx, ny, nz, k) = dense.dim();
        if k != field_type.dim() {
            return Err(Error::field_mismatch(field_type, format!("{k} channels")));
        }
        let mut sites = Vec::new();
        let mut rows = Vec::new();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let v = dense.slice(ndarray::s![x, y, z, ..]);
                    if v.iter().any(|&a| a != 0.0) {
                        sites.push(Site::new(x as i32, y as i32, z as i32));
                        rows.extend(v.iter().copied());
                    }
                }
            }
        }
        let n = sites.len();
        let features = Array2::from_shape_vec((n, k), rows).expect("row-major shape");
        Ok(Self::from_sorted_unchecked(sites, features, field_type, grid))
    }

    /// Applies a lattice symmetry: site `x ↦ r (x − c) + c` and feature
    /// `f ↦ ρ(r) f`. `r` must be a signed permutation and `center` must make
    /// the mapped sites integral (integers or half-integers, as appropriate).
    pub fn rotate_on_lattice(&self, r: &Rotation, center: [f64; 3]) -> Result<Self> {
        let m = r.matrix();
        if m.iter().any(|v| (v - v.round()).abs() > 1e-12) {
            return Err(Error::InvalidArgument("rotation does not preserve the lattice".into()));
        }
        let rho = field_repr(&self.field_type, r)?;
        let mut sites = Vec::with_capacity(self.sites.len());
        for s in &self.sites {
            let p = Vector3::new(s.0[0] as f64, s.0[1] as f64, s.0[2] as f64) - Vector3::from(center);
            let q = m.map(f64::round) * p + Vector3::from(center);
            if q.iter().any(|v| (v - v.round()).abs() > 1e-9) {
                return Err(Error::InvalidArgument(format!("center {center:?} maps sites off the lattice")));
            }
            sites.push(Site([q.x.round() as i32, q.y.round() as i32, q.z.round() as i32]));
        }
        let features = self.features.dot(&rho.t());
        Self::from_rows(sites, features, self.field_type.clone(), self.grid)
    }
}

/// Canonical z-major list of kernel offsets `{-(s-1)/2, …, (s-1)/2}³`.
pub fn kernel_offsets(size: usize) -> Vec<[i32; 3]> {
    let r = (size / 2) as i32;
    let mut out = Vec::with_capacity(size * size * size);
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                out.push([dx, dy, dz]);
            }
        }
    }
    out
}

/// Index of an offset in [`kernel_offsets`] order.
pub fn offset_index(size: usize, d: [i32; 3]) -> Option<usize> {
    let r = (size / 2) as i32;
    if d.iter().any(|&c| c < -r || c > r) {
        return None;
    }
    let s = size as i32;
    Some((((d[2] + r) * s + (d[1] + r)) * s + (d[0] + r)) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_tensor(entries: &[([i32; 3], f64)]) -> SparseTensor {
        let sites = entries.iter().map(|e| Site(e.0)).collect();
        let feats = Array2::from_shape_vec((entries.len(), 1), entries.iter().map(|e| e.1).collect()).unwrap();
        SparseTensor::from_rows(sites, feats, FieldType::scalars(1), Grid::default()).unwrap()
    }

    #[test]
    fn rows_are_canonicalized() {
        let t = scalar_tensor(&[([0, 0, 1], 1.0), ([5, 0, 0], 2.0), ([0, 1, 0], 3.0)]);
        assert_eq!(t.sites(), &[Site::new(5, 0, 0), Site::new(0, 1, 0), Site::new(0, 0, 1)]);
        assert_eq!(t.features().column(0).to_vec(), vec![2.0, 3.0, 1.0]);
        assert_eq!(t.row_of(Site::new(0, 0, 1)), Some(2));
    }

    #[test]
    fn duplicates_rejected() {
        let sites = vec![Site::new(1, 1, 1), Site::new(1, 1, 1)];
        let r = SparseTensor::from_rows(sites, Array2::zeros((2, 1)), FieldType::scalars(1), Grid::default());
        assert!(matches!(r, Err(Error::DuplicateSite(_))));
    }

    #[test]
    fn lookup_active_and_inactive() {
        let t = scalar_tensor(&[([1, 2, 3], 4.0)]);
        assert_eq!(t.lookup(Site::new(1, 2, 3)).unwrap().to_vec(), vec![4.0]);
        assert!(t.lookup(Site::new(3, 2, 1)).is_none());
    }

    #[test]
    fn dense_conversion() {
        let empty = SparseTensor::empty(FieldType::scalars(2), Grid::default());
        assert!(empty.to_dense([2, 2, 2]).unwrap().iter().all(|&v| v == 0.0));

        let ft = FieldType::new(vec![1]);
        let t = SparseTensor::from_rows(vec![Site::new(1, 2, 3)], array![[1.0, -2.0, 0.5]], ft.clone(), Grid::default()).unwrap();
        let d = t.to_dense([4, 4, 4]).unwrap();
        assert_eq!(d.slice(ndarray::s![1, 2, 3, ..]).to_vec(), vec![1.0, -2.0, 0.5]);
        assert_eq!(d.iter().filter(|&&v| v != 0.0).count(), 3);
        let back = SparseTensor::from_dense(&d, ft, Grid::default()).unwrap();
        assert_eq!(back.sites(), t.sites());
        assert_eq!(back.features(), t.features());

        assert!(matches!(t.to_dense([2, 2, 2]), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn offsets_enumeration() {
        let offs = kernel_offsets(3);
        assert_eq!(offs.len(), 27);
        assert_eq!(offs[13], [0, 0, 0]);
        for (i, &d) in offs.iter().enumerate() {
            assert_eq!(offset_index(3, d), Some(i));
        }
        assert_eq!(offset_index(3, [2, 0, 0]), None);
    }
}
