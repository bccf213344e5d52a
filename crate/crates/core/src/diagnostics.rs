//! Equivariance checks and the sparse-versus-dense benchmark.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv_forward_matrices, ConvBackend, DenseBackend, SparseBackend};
use crate::error::{Error, Result};
use crate::layers::{Mode, Network};
use crate::repr::{octahedral_group, RigidMotion, Rotation};
use crate::steering::steer_sites;
use crate::tensor::{Grid, Site, SparseTensor};

/// Random tensor on `[0, extent)³`: each cell active with probability
/// `occupancy` (at least one site), features uniform in `[-1, 1)`.
pub fn random_input(rng: &mut ChaCha8Rng, field: &crate::repr::FieldType, extent: u32, occupancy: f64) -> SparseTensor {
    let e = extent as i32;
    let mut sites = Vec::new();
    for z in 0..e {
        for y in 0..e {
            for x in 0..e {
                if rng.random::<f64>() < occupancy {
                    sites.push(Site::new(x, y, z));
                }
            }
        }
    }
    if sites.is_empty() {
        sites.push(Site::new(e / 2, e / 2, e / 2));
    }
    let features = Array2::from_shape_fn((sites.len(), field.dim()), |_| rng.random_range(-1.0..1.0));
    let grid = Grid {
        voxel_size: 1.0,
        origin: [0.0; 3],
        extent: [extent; 3],
    };
    SparseTensor::from_rows(sites, features, field.clone(), grid).expect("sites are distinct and sorted")
}

/// Equivariance errors of a network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EquivarianceReport {
    pub inputs: usize,
    pub rotations: usize,
    /// Largest `max|f(gx) - g f(x)| / max(max|g f(x)|, 1e-12)` over the
    /// octahedral rotations and inputs.
    pub octahedral_max: f64,
    /// Per random rotation: mean relative feature error on the sites both
    /// sides share, after re-voxelization. Expected to be nonzero.
    pub continuous: Vec<f64>,
}

impl EquivarianceReport {
    pub fn continuous_mean(&self) -> f64 {
        if self.continuous.is_empty() {
            0.0
        } else {
            self.continuous.iter().sum::<f64>() / self.continuous.len() as f64
        }
    }

    pub fn continuous_max(&self) -> f64 {
        self.continuous.iter().copied().fold(0.0, f64::max)
    }
}

/// The lattice center about which rotating the input maps the pooled
/// output onto itself, and the corresponding output center.
pub fn rotation_centers(pool_factor: u32, extent: u32) -> ([f64; 3], [f64; 3]) {
    let p = pool_factor as f64;
    let base = (p - 1.0) / 2.0;
    let k = (((extent as f64 - 1.0) / 2.0 - base) / p).round();
    let c_in = base + p * k;
    ([c_in; 3], [k; 3])
}

fn relative_max_error(a: &SparseTensor, b: &SparseTensor) -> f64 {
    if a.sites() != b.sites() {
        return f64::INFINITY;
    }
    let scale = b.features().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let diff = a
        .features()
        .iter()
        .zip(b.features().iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

fn continuous_error(net: &Network, input: &SparseTensor, out: &SparseTensor, r: &Rotation, center: [f64; 3]) -> Result<f64> {
    let about = |grid: &Grid, c: [f64; 3]| {
        let pivot = grid.center_of(Site::new(0, 0, 0)) + nalgebra::Vector3::from(c) * grid.voxel_size;
        RigidMotion::new(*r, pivot - r.apply(&pivot))
    };
    let g_in = about(input.grid(), center);
    let rotated_in = steer_sites(input, &g_in, input.grid())?.0;
    let lhs = net.forward(&rotated_in, Mode::Train)?.output;
    let out_center = out.grid().lattice_coord(&input.grid().center_of(Site::new(0, 0, 0)));
    let c_out = [
        center[0] * input.voxel_size() / out.voxel_size() + out_center.x,
        center[1] * input.voxel_size() / out.voxel_size() + out_center.y,
        center[2] * input.voxel_size() / out.voxel_size() + out_center.z,
    ];
    let rhs = steer_sites(out, &about(out.grid(), c_out), out.grid())?.0;
    let (mut num, mut den) = (0.0, 0.0);
    for (row, &site) in rhs.sites().iter().enumerate() {
        if let Some(l) = lhs.lookup(site) {
            let want = rhs.features().row(row);
            num += (&l - &want).mapv(|v| v * v).sum().sqrt();
            den += want.mapv(|v| v * v).sum().sqrt();
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Runs `net` on each input and on its 24 lattice rotations, plus
/// `continuous_samples` random rotations per input.
pub fn check_equivariance(net: &Network, inputs: &[SparseTensor], continuous_samples: usize, seed: u64) -> Result<EquivarianceReport> {
    let group = octahedral_group();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = EquivarianceReport {
        inputs: inputs.len(),
        rotations: group.len(),
        ..Default::default()
    };
    let factor = net.total_pool_factor();
    for input in inputs {
        if input.is_empty() {
            continue;
        }
        let extent = input.grid().extent.iter().copied().max().unwrap_or(1).max(1);
        let (c_in, c_out) = rotation_centers(factor, extent);
        let out = net.forward(input, Mode::Train)?.output;
        for r in &group {
            let lhs = net.forward(&input.rotate_on_lattice(r, c_in)?, Mode::Train)?.output;
            let rhs = out.rotate_on_lattice(r, c_out)?;
            report.octahedral_max = report.octahedral_max.max(relative_max_error(&lhs, &rhs));
        }
        for _ in 0..continuous_samples {
            let r = Rotation::random(&mut rng);
            let mid = [(extent as f64 - 1.0) / 2.0; 3];
            report.continuous.push(continuous_error(net, input, &out, &r, mid)?);
        }
    }
    Ok(report)
}

/// Timing of the sparse path against the dense reference.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub inputs: usize,
    pub active_sites: usize,
    pub sparse_seconds: f64,
    pub dense_seconds: f64,
    /// Σ rule-book pair counts over convolution layers and inputs.
    pub pairs: usize,
    /// Σ multiply-adds reported by the sparse backend.
    pub macs: usize,
    /// Σ pairs · K_out · K_in, computed independently of the backend.
    pub macs_expected: usize,
    /// Σ multiply-adds of the dense reference, which scale with the box
    /// volume.
    pub dense_macs: usize,
    /// Cells of the dense boxes convolved by the reference path.
    pub dense_cells: usize,
    /// Largest deviation between the two paths.
    pub max_deviation: f64,
    pub sparse_peak_bytes: usize,
    pub dense_peak_bytes: usize,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.dense_seconds / self.sparse_seconds.max(1e-12)
    }

    pub fn macs_identity_holds(&self) -> bool {
        self.macs == self.macs_expected
    }
}

/// Times every convolution of `net` on both backends with identical
/// inputs. Each timing is the fastest of `repeats` runs.
pub fn bench(net: &Network, occupancy: f64, extent: u32, batch: usize, repeats: usize, seed: u64) -> Result<BenchReport> {
    if !(occupancy > 0.0 && occupancy <= 1.0) {
        return Err(Error::InvalidArgument(format!("occupancy must be in (0, 1], got {occupancy}")));
    }
    let repeats = repeats.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = BenchReport {
        inputs: batch,
        ..Default::default()
    };
    let time = |f: &mut dyn FnMut() -> Result<()>| -> Result<f64> {
        let mut best = f64::INFINITY;
        for _ in 0..repeats {
            let t = Instant::now();
            f()?;
            best = best.min(t.elapsed().as_secs_f64());
        }
        Ok(best)
    };
    for _ in 0..batch {
        let mut x = random_input(&mut rng, net.field_in(), extent, occupancy);
        report.active_sites += x.num_sites();
        for layer in net.layers() {
            if let Some(conv) = layer.as_conv() {
                let k = conv.matrices();
                let field_out = conv.kernel().field_out();
                let mut sparse_out = None;
                report.sparse_seconds += time(&mut || {
                    sparse_out = Some(conv_forward_matrices(&x, &k, field_out, conv.mode(), &SparseBackend)?);
                    Ok(())
                })?;
                let mut dense_out = None;
                report.dense_seconds += time(&mut || {
                    dense_out = Some(conv_forward_matrices(&x, &k, field_out, conv.mode(), &DenseBackend)?);
                    Ok(())
                })?;
                let (s, d) = (sparse_out.expect("ran"), dense_out.expect("ran"));
                let (_, k_out, k_in) = k.dim();
                report.pairs += s.stats.pairs;
                report.macs += s.stats.macs;
                report.dense_macs += d.stats.macs;
                report.macs_expected += (0..s.rules.num_offsets()).map(|o| s.rules.len_at(o)).sum::<usize>() * k_out * k_in;
                let cells = dense_box_cells(&x, conv.kernel().spec().size);
                report.dense_cells += cells;
                report.max_deviation = report.max_deviation.max(
                    s.output
                        .features()
                        .iter()
                        .zip(d.output.features().iter())
                        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
                );
                let sparse_bytes = 8 * (x.num_sites() * k_in + s.output.num_sites() * k_out) + 16 * s.stats.pairs;
                let dense_bytes = 8 * cells * (k_in + k_out);
                report.sparse_peak_bytes = report.sparse_peak_bytes.max(sparse_bytes);
                report.dense_peak_bytes = report.dense_peak_bytes.max(dense_bytes);
            }
            x = layer.forward(&x, Mode::Eval)?.0;
        }
    }
    Ok(report)
}

/// Cells of the input bounding box grown by the kernel radius.
fn dense_box_cells(x: &SparseTensor, size: usize) -> usize {
    let r = (size / 2) as i32;
    let mut lo = [i32::MAX; 3];
    let mut hi = [i32::MIN; 3];
    for s in x.sites() {
        for a in 0..3 {
            lo[a] = lo[a].min(s.0[a]);
            hi[a] = hi[a].max(s.0[a]);
        }
    }
    (0..3).map(|a| (hi[a] - lo[a] + 1 + 2 * r).max(0) as usize).product()
}

/// The backends this module compares, for reporting.
pub fn compared_backends() -> [&'static str; 2] {
    [SparseBackend.name(), DenseBackend.name()]
}
