//! Forward execution strategies, selectable by name.

use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};

use super::{ConvStats, RuleBook};
use crate::error::{Error, Result};
use crate::kernel::KernelMatrices;
use crate::tensor::{kernel_offsets, Site, SparseTensor};

/// Computes output features of a sparse convolution.
///
/// Implementations must produce the same values for the same inputs;
/// they may differ in cost and in floating-point summation order.
pub trait ConvBackend: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(
        &self,
        input: &SparseTensor,
        out_sites: &[Site],
        rules: &RuleBook,
        kernel: &KernelMatrices,
    ) -> Result<(Array2<f64>, ConvStats)>;
}

/// Rule-book execution: per offset, gather the paired input rows, multiply
/// by `κ(s)ᵀ`, scatter-add into the output rows. Offsets are processed in
/// canonical order and pairs in sorted order, so results are bitwise
/// reproducible.
#[derive(Clone, Copy, Debug, Default)]
pub struct SparseBackend;

impl ConvBackend for SparseBackend {
    fn name(&self) -> &'static str {
        "sparse"
    }

    fn forward(
        &self,
        input: &SparseTensor,
        out_sites: &[Site],
        rules: &RuleBook,
        kernel: &KernelMatrices,
    ) -> Result<(Array2<f64>, ConvStats)> {
        let (n_off, k_out, k_in) = kernel.dim();
        let mut out = Array2::zeros((out_sites.len(), k_out));
        let features = input.features();
        for o in 0..n_off {
            let (outs, ins) = rules.pairs(o);
            if outs.is_empty() {
                continue;
            }
            let gathered = features.select(Axis(0), ins);
            let prod = gathered.dot(&kernel.index_axis(Axis(0), o).t());
            for (row, &r_out) in outs.iter().enumerate() {
                let mut dst = out.row_mut(r_out);
                dst += &prod.row(row);
            }
        }
        let pairs = rules.total_pairs();
        Ok((
            out,
            ConvStats {
                pairs,
                macs: pairs * k_out * k_in,
            },
        ))
    }
}

/// Reference path: scatters the input into a dense box covering every
/// possible output site and runs an ordinary dense 3D convolution over the
/// whole box (one GEMM per offset and lattice row), then reads back the
/// active output sites. Cost scales with box volume, not occupancy.
#[derive(Clone, Copy, Debug, Default)]
pub struct DenseBackend;

impl ConvBackend for DenseBackend {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn forward(
        &self,
        input: &SparseTensor,
        out_sites: &[Site],
        rules: &RuleBook,
        kernel: &KernelMatrices,
    ) -> Result<(Array2<f64>, ConvStats)> {
        let (n_off, k_out, k_in) = kernel.dim();
        if input.is_empty() {
            return Ok((Array2::zeros((out_sites.len(), k_out)), ConvStats::default()));
        }
        let r = (rules.size() / 2) as i32;
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for s in input.sites() {
            for a in 0..3 {
                lo[a] = lo[a].min(s.0[a] - r);
                hi[a] = hi[a].max(s.0[a] + r);
            }
        }
        let dims = [0, 1, 2].map(|a| (hi[a] - lo[a] + 1) as usize);
        let [nx, ny, nz] = dims;
        let flat = |s: &Site| -> usize {
            let x = (s.0[0] - lo[0]) as usize;
            let y = (s.0[1] - lo[1]) as usize;
            let z = (s.0[2] - lo[2]) as usize;
            (z * ny + y) * nx + x
        };
        let vol = nx * ny * nz;
        let mut dense_in = Array2::zeros((vol, k_in));
        for (row, s) in input.sites().iter().enumerate() {
            dense_in.row_mut(flat(s)).assign(&input.features().row(row));
        }
        let mut dense_out = Array2::<f64>::zeros((vol, k_out));
        let mut rows_done = 0usize;
        for (o, d) in kernel_offsets(rules.size()).iter().enumerate().take(n_off) {
            let kt = kernel.index_axis(Axis(0), o).reversed_axes();
            let [dx, dy, dz] = *d;
            let x0 = dx.max(0) as usize;
            let x1 = (nx as i32 + dx.min(0)) as usize;
            if x0 >= x1 {
                continue;
            }
            for z in 0..nz as i32 {
                let zs = z - dz;
                if zs < 0 || zs >= nz as i32 {
                    continue;
                }
                for y in 0..ny as i32 {
                    let ys = y - dy;
                    if ys < 0 || ys >= ny as i32 {
                        continue;
                    }
                    let base_out = (z as usize * ny + y as usize) * nx;
                    let base_in = (zs as usize * ny + ys as usize) * nx;
                    let src_lo = (base_in as i32 + x0 as i32 - dx) as usize;
                    let src = dense_in.slice(s![src_lo..src_lo + (x1 - x0), ..]);
                    let mut dst = dense_out.slice_mut(s![base_out + x0..base_out + x1, ..]);
                    general_mat_mul(1.0, &src, &kt, 1.0, &mut dst);
                    rows_done += x1 - x0;
                }
            }
        }
        let mut out = Array2::zeros((out_sites.len(), k_out));
        for (row, s) in out_sites.iter().enumerate() {
            out.row_mut(row).assign(&dense_out.row(flat(s)));
        }
        Ok((
            out,
            ConvStats {
                pairs: rows_done,
                macs: rows_done * k_out * k_in,
            },
        ))
    }
}

/// Named collection of backends.
#[derive(Clone)]
pub struct BackendRegistry {
    entries: Vec<Arc<dyn ConvBackend>>,
}

impl Default for BackendRegistry {
    /// `sparse` and `dense`.
    fn default() -> Self {
        let mut reg = BackendRegistry::empty();
        reg.register(Arc::new(SparseBackend));
        reg.register(Arc::new(DenseBackend));
        reg
    }
}

impl BackendRegistry {
    pub fn empty() -> Self {
        BackendRegistry { entries: Vec::new() }
    }

    /// Adds a backend, replacing any existing one with the same name.
    pub fn register(&mut self, backend: Arc<dyn ConvBackend>) {
        self.entries.retain(|b| b.name() != backend.name());
        self.entries.push(backend);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ConvBackend>> {
        self.entries
            .iter()
            .find(|b| b.name() == name)
            .cloned()
            .ok_or_else(|| Error::Unknown {
                what: "convolution backend",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|b| b.name()).collect()
    }
}
