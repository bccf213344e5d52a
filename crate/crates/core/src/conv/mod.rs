//! Sparse convolution over active sites.
//!
//! A convolution first fixes its output active set (general: every site
//! reachable from an input site through the kernel footprint; submanifold:
//! the input set), then builds a [`RuleBook`] of `(output row, input row)`
//! pairs per kernel offset and executes gather / multiply / scatter-add per
//! offset through a [`ConvBackend`].

mod backend;
mod pool;

use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::kernel::{KernelMatrices, SteerableKernel};
use crate::repr::FieldType;
use crate::tensor::{kernel_offsets, Site, SparseTensor};

pub use backend::{BackendRegistry, ConvBackend, DenseBackend, SparseBackend};
pub use pool::{avg_pool, avg_pool_backward, PoolMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum ConvMode {
    /// Output active wherever the kernel footprint touches an active input.
    #[default]
    General,
    /// Output active set equals the input active set.
    Submanifold,
}

impl fmt::Display for ConvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvMode::General => "general",
            ConvMode::Submanifold => "submanifold",
        })
    }
}

impl FromStr for ConvMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(ConvMode::General),
            "submanifold" | "sub" => Ok(ConvMode::Submanifold),
            other => Err(Error::Unknown {
                what: "convolution mode",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub field_in: FieldType,
    pub field_out: FieldType,
    pub size: usize,
    pub mode: ConvMode,
}

/// Sorted output sites of a general convolution.
pub fn output_sites_general(sites: &[Site], size: usize) -> Vec<Site> {
    let offsets = kernel_offsets(size);
    let mut set: HashSet<Site> = HashSet::with_capacity_and_hasher(sites.len() * 4, Default::default());
    for s in sites {
        for d in &offsets {
            set.insert(s.offset(*d));
        }
    }
    let mut out: Vec<Site> = set.into_iter().collect();
    out.sort_unstable();
    out
}

pub fn output_sites_submanifold(sites: &[Site]) -> Vec<Site> {
    sites.to_vec()
}

pub fn output_sites(sites: &[Site], size: usize, mode: ConvMode) -> Vec<Site> {
    match mode {
        ConvMode::General => output_sites_general(sites, size),
        ConvMode::Submanifold => output_sites_submanifold(sites),
    }
}

/// Per-offset `(output row, input row)` pairs.
///
/// A pair is present for offset `s` exactly when `out_site - in_site = s`
/// and both sites are active. Lists are sorted by output row, then input
/// row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleBook {
    size: usize,
    num_in: usize,
    num_out: usize,
    out_rows: Vec<Vec<usize>>,
    in_rows: Vec<Vec<usize>>,
}

impl RuleBook {
    /// Probes the output hash around every input site.
    pub fn build(in_sites: &[Site], out_sites: &[Site], size: usize) -> RuleBook {
        let out_index: HashMap<Site, usize> = out_sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let offsets = kernel_offsets(size);
        let mut pairs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); offsets.len()];
        for (r_in, s) in in_sites.iter().enumerate() {
            for (o, d) in offsets.iter().enumerate() {
                if let Some(&r_out) = out_index.get(&s.offset(*d)) {
                    pairs[o].push((r_out, r_in));
                }
            }
        }
        let mut out_rows = Vec::with_capacity(offsets.len());
        let mut in_rows = Vec::with_capacity(offsets.len());
        for mut list in pairs {
            list.sort_unstable();
            out_rows.push(list.iter().map(|p| p.0).collect());
            in_rows.push(list.iter().map(|p| p.1).collect());
        }
        RuleBook {
            size,
            num_in: in_sites.len(),
            num_out: out_sites.len(),
            out_rows,
            in_rows,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn num_offsets(&self) -> usize {
        self.out_rows.len()
    }

    pub fn num_in(&self) -> usize {
        self.num_in
    }

    pub fn num_out(&self) -> usize {
        self.num_out
    }

    /// `(output rows, input rows)` of offset index `o`.
    pub fn pairs(&self, o: usize) -> (&[usize], &[usize]) {
        (&self.out_rows[o], &self.in_rows[o])
    }

    pub fn len_at(&self, o: usize) -> usize {
        self.out_rows[o].len()
    }

    pub fn total_pairs(&self) -> usize {
        self.out_rows.iter().map(Vec::len).sum()
    }
}

/// Multiply-add accounting for one forward call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConvStats {
    /// Number of `(output, input, offset)` products formed.
    pub pairs: usize,
    /// Scalar multiply-adds: `pairs · K_out · K_in`.
    pub macs: usize,
}

/// Result of a forward convolution; the rule book is reused by backward.
#[derive(Clone, Debug)]
pub struct ConvOutput {
    pub output: SparseTensor,
    pub rules: RuleBook,
    pub stats: ConvStats,
}

fn check_kernel_shape(kernel: &KernelMatrices, rules: &RuleBook, k_in: usize) -> Result<()> {
    let (n_off, _, kin) = kernel.dim();
    if n_off != rules.num_offsets() || kin != k_in {
        return Err(Error::ShapeMismatch(format!(
            "kernel has {n_off} offsets × {kin} inputs, rule book has {} offsets and input width {k_in}",
            rules.num_offsets()
        )));
    }
    Ok(())
}

/// Sparse convolution with a steerable kernel on the given backend.
pub fn conv_forward(
    input: &SparseTensor,
    kernel: &SteerableKernel,
    mode: ConvMode,
    backend: &dyn ConvBackend,
) -> Result<ConvOutput> {
    if input.field_type() != kernel.field_in() {
        return Err(Error::field_mismatch(kernel.field_in(), input.field_type()));
    }
    conv_forward_matrices(input, &kernel.materialize(), kernel.field_out(), mode, backend)
}

/// Like [`conv_forward`] with an already materialized kernel.
pub fn conv_forward_matrices(
    input: &SparseTensor,
    kernel: &KernelMatrices,
    field_out: &FieldType,
    mode: ConvMode,
    backend: &dyn ConvBackend,
) -> Result<ConvOutput> {
    let (n_off, k_out, k_in) = kernel.dim();
    if k_out != field_out.dim() || k_in != input.field_type().dim() {
        return Err(Error::ShapeMismatch(format!(
            "kernel {k_out}×{k_in} does not map {} to {}",
            input.field_type(),
            field_out
        )));
    }
    let size = (n_off as f64).cbrt().round() as usize;
    if size.pow(3) != n_off {
        return Err(Error::ShapeMismatch(format!("{n_off} offsets is not a cube")));
    }
    let out_sites = output_sites(input.sites(), size, mode);
    let rules = RuleBook::build(input.sites(), &out_sites, size);
    check_kernel_shape(kernel, &rules, k_in)?;
    let (features, stats) = backend.forward(input, &out_sites, &rules, kernel)?;
    let output = SparseTensor::from_sorted_unchecked(out_sites, features, field_out.clone(), *input.grid());
    Ok(ConvOutput { output, rules, stats })
}

/// Gradients of a convolution with respect to its input features and the
/// materialized kernel.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Array2<f64>,
    pub kernel: KernelMatrices,
}

/// Reverse-mode pass through the rule book: `grad_in[in] += G[out]·κ(s)`
/// and `grad_κ(s) = Σ G[out]ᵀ x[in]`, in the forward accumulation order.
pub fn conv_backward_matrices(
    grad_out: ArrayView2<'_, f64>,
    input: ArrayView2<'_, f64>,
    kernel: &KernelMatrices,
    rules: &RuleBook,
) -> Result<ConvGrads> {
    let (n_off, k_out, k_in) = kernel.dim();
    if grad_out.dim() != (rules.num_out(), k_out) || input.dim() != (rules.num_in(), k_in) || n_off != rules.num_offsets()
    {
        return Err(Error::ShapeMismatch(format!(
            "backward shapes: grad_out {:?}, input {:?}, kernel {:?}, rule book {}→{}",
            grad_out.dim(),
            input.dim(),
            kernel.dim(),
            rules.num_in(),
            rules.num_out()
        )));
    }
    let mut grad_in = Array2::zeros((rules.num_in(), k_in));
    let mut grad_k = Array3::zeros((n_off, k_out, k_in));
    for o in 0..n_off {
        let (outs, ins) = rules.pairs(o);
        if outs.is_empty() {
            continue;
        }
        let g = grad_out.select(Axis(0), outs);
        let x = input.select(Axis(0), ins);
        grad_k.index_axis_mut(Axis(0), o).assign(&g.t().dot(&x));
        let contrib = g.dot(&kernel.index_axis(Axis(0), o));
        for (row, &r_in) in ins.iter().enumerate() {
            let mut dst = grad_in.row_mut(r_in);
            dst += &contrib.row(row);
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        kernel: grad_k,
    })
}

/// [`conv_backward_matrices`] followed by projection onto the kernel
/// weights. Returns `(grad_input, grad_weights)`.
pub fn conv_backward(
    grad_out: ArrayView2<'_, f64>,
    input: &SparseTensor,
    kernel: &SteerableKernel,
    rules: &RuleBook,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let grads = conv_backward_matrices(grad_out, input.features().view(), &kernel.materialize(), rules)?;
    let gw = kernel.project_gradient(&grads.kernel)?;
    Ok((grads.input, gw))
}
