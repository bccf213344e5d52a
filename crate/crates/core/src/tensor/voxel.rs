use rustc_hash::FxHashMap as HashMap;

use nalgebra::Vector3;
use ndarray::Array2;

use super::{Grid, Site, SparseTensor};
use crate::error::{Error, Result};
use crate::repr::FieldType;

/// Points in world units with per-point attributes (e.g. RGB).
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// `N × C`, rows aligned with `points`.
    pub attributes: Array2<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, attributes: Array2<f64>) -> Result<Self> {
        if attributes.nrows() != points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} attribute rows",
                points.len(),
                attributes.nrows()
            )));
        }
        Ok(PointCloud { points, attributes })
    }

    pub fn without_attributes(points: Vec<Vector3<f64>>) -> Self {
        let n = points.len();
        PointCloud {
            points,
            attributes: Array2::zeros((n, 0)),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.ncols()
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p);
        Some(sum / self.points.len() as f64)
    }
}

/// Fraction of the grid extent covered by a normalized cloud.
const FILL_FRACTION: f64 = 0.9;

/// Voxelizes a cloud onto a `resolution³` grid.
///
/// With `normalize`, points are centered at their centroid and the
/// bounding cube about the centroid is scaled to 90% of the grid. Without
/// it, point coordinates are grid units and cell `i` covers `[i, i+1)`.
/// Each occupied cell's feature is the mean attribute vector of its
/// points, followed by a constant 1.
pub fn voxelize(pc: &PointCloud, resolution: u32, normalize: bool) -> Result<SparseTensor> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!("resolution must be >= 2, got {resolution}")));
    }
    let extent = [resolution; 3];
    let grid = if normalize {
        let c = pc.centroid().ok_or(Error::EmptyCloud)?;
        let half = pc.points.iter().map(|p| (p - c).amax()).fold(0.0, f64::max);
        let voxel_size = if half > 0.0 {
            2.0 * half / (FILL_FRACTION * resolution as f64)
        } else {
            1.0
        };
        let low = c - Vector3::repeat(0.5 * resolution as f64 * voxel_size);
        let origin = low + Vector3::repeat(0.5 * voxel_size);
        Grid {
            voxel_size,
            origin: origin.into(),
            extent,
        }
    } else {
        Grid {
            voxel_size: 1.0,
            origin: [0.5; 3],
            extent,
        }
    };
    voxelize_on(pc, grid)
}

/// Voxelizes onto an explicit grid placement.
pub fn voxelize_on(pc: &PointCloud, grid: Grid) -> Result<SparseTensor> {
    let c = pc.num_attributes();
    let mut cells: HashMap<Site, (usize, Vec<f64>)> = HashMap::default();
    for (i, p) in pc.points.iter().enumerate() {
        let entry = cells.entry(grid.cell_of(p)).or_insert_with(|| (0, vec![0.0; c]));
        entry.0 += 1;
        for (acc, a) in entry.1.iter_mut().zip(pc.attributes.row(i)) {
            *acc += a;
        }
    }
    let mut sites: Vec<Site> = cells.keys().copied().collect();
    sites.sort();
    let mut features = Array2::zeros((sites.len(), c + 1));
    for (row, site) in sites.iter().enumerate() {
        let (count, sum) = &cells[site];
        for (j, s) in sum.iter().enumerate() {
            features[[row, j]] = s / *count as f64;
        }
        features[[row, c]] = 1.0;
    }
    Ok(SparseTensor::from_sorted_unchecked(sites, features, FieldType::scalars(c + 1), grid))
}
