//! Average-pool downsampling of sparse tensors.

use rustc_hash::FxHashMap as HashMap;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::tensor::{Grid, Site, SparseTensor};

/// Input-row to output-row assignment recorded by [`avg_pool`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolMap {
    pub factor: u32,
    /// Output row of each input row.
    pub parent: Vec<usize>,
    /// Active inputs per output row.
    pub counts: Vec<usize>,
}

/// Pools `factor³` blocks: block `b` covers sites `factor·b … factor·b + factor − 1`
/// per axis. An output site is active iff its block holds an active input,
/// and its feature is the mean over the active inputs only.
///
/// The output grid keeps block centers in the same world position: voxel
/// size scales by `factor` and the origin moves by `(factor − 1)/2` input
/// voxels.
pub fn avg_pool(t: &SparseTensor, factor: u32) -> Result<(SparseTensor, PoolMap)> {
    if factor < 2 {
        return Err(Error::InvalidArgument(format!("pool factor must be >= 2, got {factor}")));
    }
    let f = factor as i32;
    let block_of = |s: &Site| Site([s.0[0].div_euclid(f), s.0[1].div_euclid(f), s.0[2].div_euclid(f)]);
    let mut blocks: Vec<Site> = t.sites().iter().map(block_of).collect();
    blocks.sort_unstable();
    blocks.dedup();
    let index: HashMap<Site, usize> = blocks.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let k = t.field_type().dim();
    let mut sums = Array2::zeros((blocks.len(), k));
    let mut counts = vec![0usize; blocks.len()];
    let mut parent = Vec::with_capacity(t.num_sites());
    for (row, s) in t.sites().iter().enumerate() {
        let b = index[&block_of(s)];
        parent.push(b);
        counts[b] += 1;
        let mut dst = sums.row_mut(b);
        dst += &t.features().row(row);
    }
    for (b, &c) in counts.iter().enumerate() {
        sums.row_mut(b).mapv_inplace(|v| v / c as f64);
    }
    let g = t.grid();
    let shift = 0.5 * (factor - 1) as f64 * g.voxel_size;
    let grid = Grid {
        voxel_size: g.voxel_size * factor as f64,
        origin: g.origin.map(|o| o + shift),
        extent: g.extent.map(|e| e.div_ceil(factor)),
    };
    let out = SparseTensor::from_sorted_unchecked(blocks, sums, t.field_type().clone(), grid);
    Ok((out, PoolMap { factor, parent, counts }))
}

pub fn avg_pool_backward(grad_out: ArrayView2<'_, f64>, map: &PoolMap) -> Result<Array2<f64>> {
    if grad_out.nrows() != map.counts.len() {
        return Err(Error::ShapeMismatch(format!(
            "pool gradient has {} rows, expected {}",
            grad_out.nrows(),
            map.counts.len()
        )));
    }
    let mut grad_in = Array2::zeros((map.parent.len(), grad_out.ncols()));
    for (row, &b) in map.parent.iter().enumerate() {
        let scale = 1.0 / map.counts[b] as f64;
        grad_in.row_mut(row).scaled_add(scale, &grad_out.row(b));
    }
    Ok(grad_in)
}
