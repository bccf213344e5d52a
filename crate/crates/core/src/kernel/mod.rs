//! Rotation-steerable convolution kernels on the integer lattice.
//!
//! A kernel between an order-`l` input irreducible and an order-`k` output
//! irreducible is a learned combination of basis kernels
//!
//! ```text
//! B[J, m](x) = φ_m(|x|) · Σ_j Y^J_j(x / |x|) · Q^{kl}_j,   |k - l| ≤ J ≤ k + l
//! φ_m(r)     = exp(-(r - c_m)² / (2 ε²))
//! ```
//!
//! sampled at the integer offsets of an `s³` cube. Each basis kernel
//! satisfies `B(R x) = D^k(R) B(x) D^l(R)ᵀ` for every rotation, so the
//! sampled kernel is exactly steerable under the 24 rotations that permute
//! the lattice.

mod dump;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{s, Array1, Array2, Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::repr::{clebsch_gordan_real_with, sh_unchecked, FieldType, OrderLimits};
use crate::tensor::kernel_offsets;

pub use dump::{parse_basis_csv, write_basis_csv, BasisBlock};

/// Offsets closer to the origin than this are treated as the origin.
const ORIGIN_TOL: f64 = 1e-12;

/// Sampling parameters shared by every basis kernel of a convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSpec {
    /// Odd side length of the offset cube.
    pub size: usize,
    /// Gaussian radial centers, in voxels.
    pub centers: Vec<f64>,
    /// Gaussian radial width, in voxels.
    pub epsilon: f64,
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec {
            size: 3,
            centers: vec![0.0, 1.0],
            epsilon: 0.6,
        }
    }
}

impl BasisSpec {
    pub fn with_size(size: usize) -> Self {
        BasisSpec {
            size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel size must be odd, got {}", self.size)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("radial width must be positive, got {}", self.epsilon)));
        }
        if self.centers.is_empty() || self.centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("radial centers must be a non-empty list of finite values".into()));
        }
        Ok(())
    }

    pub fn num_radial(&self) -> usize {
        self.centers.len()
    }

    fn radial(&self, m: usize, r: f64) -> f64 {
        let d = r - self.centers[m];
        (-0.5 * d * d / (self.epsilon * self.epsilon)).exp()
    }
}

/// Sampled basis kernels for one `(k, l)` pair.
#[derive(Debug)]
pub struct KernelBasis {
    k: u32,
    l: u32,
    spec: BasisSpec,
    orders: Vec<u32>,
    /// One row per basis function (`J` ascending, then radial index);
    /// columns flatten `(offset, out component, in component)`.
    values: Array2<f64>,
}

impl KernelBasis {
    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn l(&self) -> u32 {
        self.l
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    /// Coupled orders `J`, ascending.
    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    pub fn num_functions(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_offsets(&self) -> usize {
        self.spec.size.pow(3)
    }

    /// Row index of basis function `(J, m)`.
    pub fn function_index(&self, j: u32, m: usize) -> Option<usize> {
        let ji = self.orders.iter().position(|&o| o == j)?;
        (m < self.spec.num_radial()).then(|| ji * self.spec.num_radial() + m)
    }

    /// `(2k+1)×(2l+1)` matrix of basis function `f` at offset index `o`.
    pub fn entry(&self, f: usize, o: usize) -> ArrayView2<'_, f64> {
        let (dk, dl) = (2 * self.k as usize + 1, 2 * self.l as usize + 1);
        let block = dk * dl;
        self.values
            .slice(s![f, o * block..(o + 1) * block])
            .into_shape_with_order((dk, dl))
            .expect("contiguous block")
    }

    /// Flattened samples, one row per basis function.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

type BasisKey = (u32, u32, usize, Vec<u64>, u64);

fn basis_cache() -> &'static Mutex<HashMap<BasisKey, Arc<KernelBasis>>> {
    static CACHE: OnceLock<Mutex<HashMap<BasisKey, Arc<KernelBasis>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

pub fn build_basis(k: u32, l: u32, spec: &BasisSpec) -> Result<Arc<KernelBasis>> {
    build_basis_with(k, l, spec, OrderLimits::default())
}

/// Samples (or fetches from the shared cache) the basis for `(k, l)`.
pub fn build_basis_with(k: u32, l: u32, spec: &BasisSpec, limits: OrderLimits) -> Result<Arc<KernelBasis>> {
    spec.validate()?;
    limits.check_feature(k)?;
    limits.check_feature(l)?;
    let key = (
        k,
        l,
        spec.size,
        spec.centers.iter().map(|c| c.to_bits()).collect(),
        spec.epsilon.to_bits(),
    );
    if let Some(hit) = basis_cache().lock().expect("basis cache poisoned").get(&key) {
        return Ok(hit.clone());
    }
    let basis = Arc::new(sample_basis(k, l, spec, limits)?);
    basis_cache()
        .lock()
        .expect("basis cache poisoned")
        .insert(key, basis.clone());
    Ok(basis)
}

fn sample_basis(k: u32, l: u32, spec: &BasisSpec, limits: OrderLimits) -> Result<KernelBasis> {
    let orders: Vec<u32> = (k.abs_diff(l)..=k + l).collect();
    let offsets = kernel_offsets(spec.size);
    let (dk, dl) = (2 * k as usize + 1, 2 * l as usize + 1);
    let block = dk * dl;
    let m_count = spec.num_radial();
    let mut values = Array2::zeros((orders.len() * m_count, offsets.len() * block));
    for (ji, &j) in orders.iter().enumerate() {
        let cg = clebsch_gordan_real_with(k, l, j, limits)?;
        for (o, d) in offsets.iter().enumerate() {
            let x = [d[0] as f64, d[1] as f64, d[2] as f64];
            let Some(angular) = angular_part(&cg.q, j, x) else {
                continue;
            };
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            for m in 0..m_count {
                let phi = spec.radial(m, r);
                let mut dst = values.slice_mut(s![ji * m_count + m, o * block..(o + 1) * block]);
                for (t, a) in dst.iter_mut().zip(angular.iter()) {
                    *t = phi * a;
                }
            }
        }
    }
    Ok(KernelBasis {
        k,
        l,
        spec: spec.clone(),
        orders,
        values,
    })
}

/// `Σ_j Y^J_j(x̂) Q_j`, or `None` where the basis vanishes (the origin for
/// `J > 0`). At the origin `Y^0` is the constant `1/(2√π)`.
fn angular_part(q: &[Array2<f64>], j: u32, x: [f64; 3]) -> Option<Array2<f64>> {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    let u = if r < ORIGIN_TOL {
        if j > 0 {
            return None;
        }
        [0.0, 0.0, 1.0]
    } else {
        [x[0] / r, x[1] / r, x[2] / r]
    };
    let y = sh_unchecked(j, u);
    let mut acc = Array2::zeros(q[0].raw_dim());
    for (yj, qj) in y.iter().zip(q) {
        acc.scaled_add(*yj, qj);
    }
    Some(acc)
}

/// Number of learnable scalars: `Σ_{i,j} M·(2·min(k_i, l_j) + 1)`.
pub fn param_count(field_in: &FieldType, field_out: &FieldType, num_radial: usize) -> usize {
    field_out
        .orders()
        .iter()
        .map(|&k| {
            field_in
                .orders()
                .iter()
                .map(|&l| num_radial * (2 * k.min(l) as usize + 1))
                .sum::<usize>()
        })
        .sum()
}

#[derive(Clone, Debug)]
struct PairBlock {
    out_irrep: usize,
    out_offset: usize,
    in_offset: usize,
    weight_offset: usize,
    basis: Arc<KernelBasis>,
}

/// Dense per-offset kernel matrices, shape `(offsets, K_out, K_in)` in
/// canonical offset order.
pub type KernelMatrices = Array3<f64>;

/// Learnable steerable kernel between two field types.
///
/// Weights are stored pair by pair (output irreducible outer, input
/// irreducible inner); within a pair, `J` ascending then radial index.
#[derive(Clone, Debug)]
pub struct SteerableKernel {
    field_in: FieldType,
    field_out: FieldType,
    spec: BasisSpec,
    limits: OrderLimits,
    pairs: Vec<PairBlock>,
    weights: Array1<f64>,
}

impl SteerableKernel {
    /// Kernel with all weights zero.
    pub fn new(field_in: FieldType, field_out: FieldType, spec: BasisSpec) -> Result<Self> {
        Self::new_with(field_in, field_out, spec, OrderLimits::default())
    }

    pub fn new_with(field_in: FieldType, field_out: FieldType, spec: BasisSpec, limits: OrderLimits) -> Result<Self> {
        spec.validate()?;
        let mut pairs = Vec::new();
        let mut weight_offset = 0;
        for (i, (k, out_offset)) in field_out.irreps().enumerate() {
            for (l, in_offset) in field_in.irreps() {
                let basis = build_basis_with(k, l, &spec, limits)?;
                let n = basis.num_functions();
                pairs.push(PairBlock {
                    out_irrep: i,
                    out_offset,
                    in_offset,
                    weight_offset,
                    basis,
                });
                weight_offset += n;
            }
        }
        Ok(SteerableKernel {
            field_in,
            field_out,
            spec,
            limits,
            pairs,
            weights: Array1::zeros(weight_offset),
        })
    }

    /// Replaces the weights with i.i.d. `N(0, 1/fan_in)` draws, where the
    /// fan-in of an output irreducible counts basis functions over all input
    /// irreducibles.
    pub fn init_weights(&mut self, seed: u64) {
        let mut fan_in = vec![0usize; self.field_out.len()];
        for p in &self.pairs {
            fan_in[p.out_irrep] += p.basis.num_functions();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &self.pairs {
            let std = (1.0 / fan_in[p.out_irrep].max(1) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for w in self
                .weights
                .slice_mut(s![p.weight_offset..p.weight_offset + p.basis.num_functions()])
                .iter_mut()
            {
                *w = normal.sample(&mut rng);
            }
        }
    }

    pub fn initialized(mut self, seed: u64) -> Self {
        self.init_weights(seed);
        self
    }

    pub fn field_in(&self) -> &FieldType {
        &self.field_in
    }

    pub fn field_out(&self) -> &FieldType {
        &self.field_out
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn size(&self) -> usize {
        self.spec.size
    }

    pub fn num_offsets(&self) -> usize {
        self.spec.size.pow(3)
    }

    pub fn num_params(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Array1<f64> {
        &mut self.weights
    }

    pub fn set_weights(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "kernel has {} weights, got {}",
                self.weights.len(),
                w.len()
            )));
        }
        self.weights.as_slice_mut().expect("contiguous").copy_from_slice(w);
        Ok(())
    }

    /// Weight slice of the pair (output irreducible `i`, input irreducible `j`).
    pub fn pair_weights(&self, i: usize, j: usize) -> &[f64] {
        let p = &self.pairs[i * self.field_in.len() + j];
        &self.weights.as_slice().expect("contiguous")[p.weight_offset..p.weight_offset + p.basis.num_functions()]
    }

    /// Kernel matrix at every offset; linear in the weights.
    pub fn materialize(&self) -> KernelMatrices {
        let n_off = self.num_offsets();
        let mut out = Array3::zeros((n_off, self.field_out.dim(), self.field_in.dim()));
        for p in &self.pairs {
            let nf = p.basis.num_functions();
            let w = self.weights.slice(s![p.weight_offset..p.weight_offset + nf]);
            let flat = w.dot(p.basis.values());
            let (dk, dl) = (2 * p.basis.k as usize + 1, 2 * p.basis.l as usize + 1);
            let blocks = flat
                .into_shape_with_order((n_off, dk, dl))
                .expect("basis layout");
            out.slice_mut(s![.., p.out_offset..p.out_offset + dk, p.in_offset..p.in_offset + dl])
                .assign(&blocks);
        }
        out
    }

    /// Chain rule through [`materialize`]: maps a gradient with respect to
    /// the kernel matrices onto the weights.
    pub fn project_gradient(&self, grad: &KernelMatrices) -> Result<Array1<f64>> {
        let expected = (self.num_offsets(), self.field_out.dim(), self.field_in.dim());
        if grad.dim() != expected {
            return Err(Error::ShapeMismatch(format!(
                "kernel gradient shape {:?}, expected {expected:?}",
                grad.dim()
            )));
        }
        let mut out = Array1::zeros(self.weights.len());
        for p in &self.pairs {
            let (dk, dl) = (2 * p.basis.k as usize + 1, 2 * p.basis.l as usize + 1);
            let g = grad
                .slice(s![.., p.out_offset..p.out_offset + dk, p.in_offset..p.in_offset + dl])
                .to_owned()
                .into_shape_with_order(self.num_offsets() * dk * dl)
                .expect("owned block");
            let nf = p.basis.num_functions();
            out.slice_mut(s![p.weight_offset..p.weight_offset + nf])
                .assign(&p.basis.values().dot(&g));
        }
        Ok(out)
    }

    /// The continuous kernel at an arbitrary point (in voxels).
    pub fn evaluate_at(&self, x: [f64; 3]) -> Result<Array2<f64>> {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let m_count = self.spec.num_radial();
        let mut out = Array2::zeros((self.field_out.dim(), self.field_in.dim()));
        for p in &self.pairs {
            let (k, l) = (p.basis.k, p.basis.l);
            let (dk, dl) = (2 * k as usize + 1, 2 * l as usize + 1);
            let mut block = Array2::<f64>::zeros((dk, dl));
            for (ji, &j) in p.basis.orders.iter().enumerate() {
                let cg = clebsch_gordan_real_with(k, l, j, self.limits)?;
                let Some(angular) = angular_part(&cg.q, j, x) else {
                    continue;
                };
                for m in 0..m_count {
                    let w = self.weights[p.weight_offset + ji * m_count + m];
                    block.scaled_add(w * self.spec.radial(m, r), &angular);
                }
            }
            out.slice_mut(s![p.out_offset..p.out_offset + dk, p.in_offset..p.in_offset + dl])
                .assign(&block);
        }
        Ok(out)
    }
}
