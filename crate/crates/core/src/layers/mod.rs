//! Equivariant layers and a sequential network with a reverse-mode tape.
//!
//! Every layer maps a sparse tensor to a sparse tensor and can replay its
//! forward pass backwards from an opaque cache. Layers are built from
//! one-line text specs through a [`LayerRegistry`] keyed by keyword:
//!
//! ```text
//! conv in=[0x4] out=[0x8,1x4] size=3 mode=submanifold
//! norm
//! act
//! pool factor=2
//! tap
//! ```

mod act;
mod config;
mod conv;
mod network;
mod norm;
mod pool;

use std::any::Any;
use std::fmt;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::repr::FieldType;
use crate::tensor::SparseTensor;

pub use act::GatedActivation;
pub use config::{parse_config, LayerArgs, LayerBuilder, LayerRegistry, LayerSpec};
pub use conv::ConvLayer;
pub use network::{Network, NetworkGrads, NetworkOutput, Tape};
pub use norm::{EquivariantNorm, NORM_EPSILON, NORM_MOMENTUM};
pub use pool::{PoolLayer, TapLayer};

/// Whether normalization uses batch statistics (and records them) or the
/// running averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Saved forward state, interpreted only by the layer that produced it.
pub type Cache = Box<dyn Any + Send + Sync>;

#[derive(Clone, Debug)]
pub struct LayerGrad {
    /// Gradient with respect to the input feature rows.
    pub input: Array2<f64>,
    /// Gradient with respect to [`Layer::params`], same order.
    pub params: Vec<f64>,
}

pub trait Layer: Send + Sync + fmt::Debug {
    fn kind(&self) -> &'static str;

    /// Config line that rebuilds this layer.
    fn describe(&self) -> String;

    fn field_in(&self) -> &FieldType;

    fn field_out(&self) -> &FieldType;

    fn num_params(&self) -> usize {
        0
    }

    fn params(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        expect_len(self.kind(), p, 0)
    }

    /// Non-learned state (running statistics).
    fn buffers(&self) -> Vec<(&'static str, Vec<f64>)> {
        Vec::new()
    }

    fn set_buffer(&mut self, name: &str, _data: &[f64]) -> Result<()> {
        Err(Error::Unknown {
            what: "layer buffer",
            name: format!("{}.{name}", self.kind()),
        })
    }

    fn forward(&self, input: &SparseTensor, mode: Mode) -> Result<(SparseTensor, Cache)>;

    fn backward(&self, cache: &Cache, grad_out: ArrayView2<'_, f64>) -> Result<LayerGrad>;

    /// Folds the statistics of a training forward pass into running state.
    fn commit(&mut self, _cache: &Cache) {}

    fn box_clone(&self) -> Box<dyn Layer>;

    /// Per-axis downsampling factor.
    fn pool_factor(&self) -> u32 {
        1
    }

    /// The layer as a convolution, if it is one.
    fn as_conv(&self) -> Option<&ConvLayer> {
        None
    }

    fn as_conv_mut(&mut self) -> Option<&mut ConvLayer> {
        None
    }
}

impl Clone for Box<dyn Layer> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

pub(crate) fn expect_len(kind: &str, p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::ShapeMismatch(format!("{kind} layer has {n} parameters, got {}", p.len())));
    }
    Ok(())
}

pub(crate) fn check_input(expected: &FieldType, input: &SparseTensor) -> Result<()> {
    if input.field_type() != expected {
        return Err(Error::field_mismatch(expected, input.field_type()));
    }
    Ok(())
}

pub(crate) fn downcast<'a, T: 'static>(cache: &'a Cache, kind: &str) -> Result<&'a T> {
    cache
        .downcast_ref::<T>()
        .ok_or_else(|| Error::InvalidArgument(format!("cache does not belong to a {kind} layer")))
}

pub(crate) fn check_grad(kind: &str, grad: &ArrayView2<'_, f64>, rows: usize, cols: usize) -> Result<()> {
    if grad.dim() != (rows, cols) {
        return Err(Error::ShapeMismatch(format!(
            "{kind} layer expects a {rows}x{cols} output gradient, got {:?}",
            grad.dim()
        )));
    }
    Ok(())
}
