//! Rigid motions applied directly to sparse feature maps, trilinear
//! sampling of feature maps at world points, and pose composition.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::layers::{Mode, Network, NetworkOutput};
use crate::repr::{field_repr, FieldType, RigidMotion};
use crate::tensor::{Grid, Site, SparseTensor};

/// Rigid pose in world units.
pub type Pose = RigidMotion;

/// `(r1 r2, t1 + r1 t2)`.
pub fn compose_pose(p1: &Pose, p2: &Pose) -> Pose {
    p1.compose(p2)
}

/// How input rows were moved and merged by [`steer_sites`].
#[derive(Clone, Debug)]
pub struct SteerMap {
    /// Output row of each input row.
    pub parent: Vec<usize>,
    /// Number of input rows merged into each output row.
    pub counts: Vec<usize>,
    /// Block-diagonal field representation of the rotation.
    pub rho: Array2<f64>,
}

/// Moves every site center by `g`, re-voxelizes onto `target` by nearest
/// cell, averages rows that land on the same cell and rotates every row by
/// the field representation of `g`'s rotation.
pub fn steer_sites(t: &SparseTensor, g: &RigidMotion, target: &Grid) -> Result<(SparseTensor, SteerMap)> {
    let rho = field_repr(t.field_type(), &g.rotation)?;
    let mut cells: BTreeMap<Site, Vec<usize>> = BTreeMap::new();
    for (row, &site) in t.sites().iter().enumerate() {
        let moved = g.apply(&t.grid().center_of(site));
        cells.entry(target.cell_of(&moved)).or_default().push(row);
    }
    let k = t.field_type().dim();
    let mut sites = Vec::with_capacity(cells.len());
    let mut merged = Array2::zeros((cells.len(), k));
    let mut parent = vec![0; t.num_sites()];
    let mut counts = Vec::with_capacity(cells.len());
    for (out_row, (site, rows)) in cells.into_iter().enumerate() {
        let mut acc = merged.row_mut(out_row);
        for &r in &rows {
            acc += &t.features().row(r);
            parent[r] = out_row;
        }
        acc /= rows.len() as f64;
        sites.push(site);
        counts.push(rows.len());
    }
    let features = merged.dot(&rho.t());
    let out = SparseTensor::from_rows(sites, features, t.field_type().clone(), *target)?;
    Ok((out, SteerMap { parent, counts, rho }))
}

/// Gradient of [`steer_sites`] with respect to its input features.
pub fn steer_sites_backward(grad_out: ArrayView2<'_, f64>, map: &SteerMap) -> Result<Array2<f64>> {
    if grad_out.nrows() != map.counts.len() || grad_out.ncols() != map.rho.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "steering gradient {:?}, expected ({}, {})",
            grad_out.dim(),
            map.counts.len(),
            map.rho.nrows()
        )));
    }
    let unrotated = grad_out.dot(&map.rho);
    let mut grad = Array2::zeros((map.parent.len(), map.rho.ncols()));
    for (row, &p) in map.parent.iter().enumerate() {
        let scale = 1.0 / map.counts[p] as f64;
        grad.row_mut(row).scaled_add(scale, &unrotated.row(p));
    }
    Ok(grad)
}

/// The two enrichment stages applied after steering: each a size-3
/// submanifold convolution followed by normalization and gated activation,
/// all preserving the field type.
pub fn enrichment_network(field: &FieldType, seed: u64) -> Result<Network> {
    let config = format!(
        "conv in={field} out={field} mode=submanifold\nnorm\nact\nconv out={field} mode=submanifold\nnorm\nact"
    );
    Network::from_config(&config, None, seed)
}

/// Result of [`steer_tensor_with`], keeping what the reverse pass needs.
pub struct Steered {
    pub output: SparseTensor,
    pub map: SteerMap,
    /// Present when enrichment ran.
    pub enrichment: Option<NetworkOutput>,
}

/// Steers `t` by `g` onto `target` and, if given, runs the enrichment
/// network on the result.
pub fn steer_tensor_with(
    t: &SparseTensor,
    g: &RigidMotion,
    target: &Grid,
    enrichment: Option<&Network>,
    mode: Mode,
) -> Result<Steered> {
    if let Some(net) = enrichment {
        if net.field_in() != t.field_type() || net.field_out() != t.field_type() {
            return Err(Error::field_mismatch(t.field_type(), net.field_in()));
        }
    }
    let (moved, map) = steer_sites(t, g, target)?;
    match enrichment {
        None => Ok(Steered {
            output: moved,
            map,
            enrichment: None,
        }),
        Some(net) => {
            let out = net.forward(&moved, mode)?;
            Ok(Steered {
                output: out.output.clone(),
                map,
                enrichment: Some(out),
            })
        }
    }
}

/// Steers `t` by `g` on its own grid, with optional enrichment in
/// evaluation mode.
pub fn steer_tensor(t: &SparseTensor, g: &RigidMotion, enrichment: Option<&Network>) -> Result<SparseTensor> {
    Ok(steer_tensor_with(t, g, t.grid(), enrichment, Mode::Eval)?.output)
}

/// Gradients of a steering pass: with respect to the steered input's
/// features and the enrichment parameters (empty without enrichment).
pub fn steer_tensor_backward(
    steered: &Steered,
    enrichment: Option<&Network>,
    grad_out: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, Vec<f64>)> {
    match (&steered.enrichment, enrichment) {
        (None, _) => Ok((steer_sites_backward(grad_out, &steered.map)?, Vec::new())),
        (Some(out), Some(net)) => {
            let g = net.backward(&out.tape, Some(grad_out), &[])?;
            Ok((steer_sites_backward(g.input.view(), &steered.map)?, g.params))
        }
        (Some(_), None) => Err(Error::InvalidArgument("steering pass used enrichment; network required".into())),
    }
}

/// Trilinear sampling weights of world points against a stack of feature
/// maps. Inactive sites contribute zero.
#[derive(Clone, Debug)]
pub struct TensorToPoint {
    /// Per level, per query: `(row, weight)` of the active corners.
    weights: Vec<Vec<Vec<(usize, f64)>>>,
    dims: Vec<usize>,
    rows: Vec<usize>,
}

impl TensorToPoint {
    pub fn new(levels: &[&SparseTensor], queries: &[Vector3<f64>]) -> Result<Self> {
        if queries.iter().any(|q| !q.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidArgument("query points must be finite".into()));
        }
        let weights = levels
            .iter()
            .map(|t| queries.iter().map(|q| corner_weights(t, q)).collect())
            .collect();
        Ok(TensorToPoint {
            weights,
            dims: levels.iter().map(|t| t.field_type().dim()).collect(),
            rows: levels.iter().map(|t| t.num_sites()).collect(),
        })
    }

    pub fn num_queries(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Total feature width of the concatenated levels.
    pub fn width(&self) -> usize {
        self.dims.iter().sum()
    }

    /// `queries × Σ K` sampled features, levels concatenated in order.
    pub fn apply(&self, levels: &[&SparseTensor]) -> Result<Array2<f64>> {
        self.check_levels(levels)?;
        let mut out = Array2::zeros((self.num_queries(), self.width()));
        let mut col = 0;
        for (l, t) in levels.iter().enumerate() {
            let k = self.dims[l];
            for (q, corners) in self.weights[l].iter().enumerate() {
                let mut dst = out.slice_mut(ndarray::s![q, col..col + k]);
                for &(row, w) in corners {
                    dst.scaled_add(w, &t.features().row(row));
                }
            }
            col += k;
        }
        Ok(out)
    }

    /// Per-level feature gradients of [`apply`](Self::apply).
    pub fn backward(&self, grad: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        if grad.dim() != (self.num_queries(), self.width()) {
            return Err(Error::ShapeMismatch(format!(
                "point gradient {:?}, expected ({}, {})",
                grad.dim(),
                self.num_queries(),
                self.width()
            )));
        }
        let mut col = 0;
        let mut out = Vec::with_capacity(self.dims.len());
        for (l, &k) in self.dims.iter().enumerate() {
            let mut g = Array2::zeros((self.rows[l], k));
            for (q, corners) in self.weights[l].iter().enumerate() {
                let src = grad.slice(ndarray::s![q, col..col + k]);
                for &(row, w) in corners {
                    g.row_mut(row).scaled_add(w, &src);
                }
            }
            out.push(g);
            col += k;
        }
        Ok(out)
    }

    fn check_levels(&self, levels: &[&SparseTensor]) -> Result<()> {
        let ok = levels.len() == self.dims.len()
            && levels
                .iter()
                .zip(self.dims.iter().zip(&self.rows))
                .all(|(t, (&k, &n))| t.field_type().dim() == k && t.num_sites() == n);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("feature maps differ from those used to build the sampler".into()))
        }
    }
}

fn corner_weights(t: &SparseTensor, q: &Vector3<f64>) -> Vec<(usize, f64)> {
    let u = t.grid().lattice_coord(q);
    let base = u.map(f64::floor);
    let frac = u - base;
    let b = [base.x as i32, base.y as i32, base.z as i32];
    let mut out = Vec::with_capacity(8);
    for corner in 0..8 {
        let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut w = 1.0;
        for a in 0..3 {
            w *= if d[a] == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if w == 0.0 {
            continue;
        }
        let site = Site::new(b[0] + d[0], b[1] + d[1], b[2] + d[2]);
        if let Some(row) = t.row_of(site) {
            out.push((row, w));
        }
    }
    out
}

/// Samples each feature map at `queries` and concatenates the levels.
pub fn tensor_to_point(levels: &[&SparseTensor], queries: &[Vector3<f64>]) -> Result<Array2<f64>> {
    TensorToPoint::new(levels, queries)?.apply(levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::Rotation;
    use ndarray::array;

    fn line() -> SparseTensor {
        SparseTensor::from_rows(
            vec![Site::new(0, 0, 0), Site::new(1, 0, 0)],
            array![[1.0, 2.0], [3.0, 6.0]],
            FieldType::scalars(2),
            Grid::default(),
        )
        .unwrap()
    }

    #[test]
    fn lattice_point_and_midpoint_samples() {
        let t = line();
        let f = tensor_to_point(&[&t], &[Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.5, 0.0, 0.0)]).unwrap();
        assert_eq!(f.row(0).to_vec(), vec![3.0, 6.0]);
        assert_eq!(f.row(1).to_vec(), vec![2.0, 4.0]);
    }

    #[test]
    fn far_query_is_zero() {
        let t = line();
        let f = tensor_to_point(&[&t, &t], &[Vector3::new(40.0, -3.0, 2.5)]).unwrap();
        assert_eq!(f.dim(), (1, 4));
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn merging_averages_features() {
        let t = line();
        let g = RigidMotion::from_translation(Vector3::new(0.3, 0.0, 0.0));
        let coarse = Grid {
            voxel_size: 4.0,
            ..Grid::default()
        };
        let (s, map) = steer_sites(&t, &g, &coarse).unwrap();
        assert_eq!(s.sites(), &[Site::new(0, 0, 0)]);
        assert_eq!(s.features().row(0).to_vec(), vec![2.0, 4.0]);
        assert_eq!(map.counts, vec![2]);
    }

    #[test]
    fn identity_steering_without_enrichment_is_identity() {
        let t = line();
        let s = steer_tensor(&t, &RigidMotion::identity(), None).unwrap();
        assert_eq!(s.sites(), t.sites());
        assert_eq!(s.features(), t.features());
    }

    #[test]
    fn compose_with_identity() {
        let p = Pose::new(Rotation::about_z(0.3), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(compose_pose(&p, &Pose::identity()), p);
        assert_eq!(compose_pose(&Pose::identity(), &p), p);
    }

    #[test]
    fn enrichment_field_must_match() {
        let net = enrichment_network(&FieldType::scalars(3), 0).unwrap();
        assert!(steer_tensor(&line(), &RigidMotion::identity(), Some(&net)).is_err());
    }
}
