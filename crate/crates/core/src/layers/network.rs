use ndarray::{Array2, ArrayView2};

use super::{parse_config, Cache, Layer, LayerRegistry, Mode};
use crate::error::{Error, Result};
use crate::repr::FieldType;
use crate::tensor::SparseTensor;

/// Sequential stack of layers.
///
/// The version counter increments whenever parameters change, so a tape
/// recorded before an update cannot be replayed against the new weights.
#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Box<dyn Layer>>,
    field_in: FieldType,
    version: u64,
}

/// Saved state of one forward pass.
pub struct Tape {
    version: u64,
    caches: Vec<Cache>,
    /// Feature shape `(rows, cols)` entering each layer, plus the output.
    shapes: Vec<(usize, usize)>,
    /// Layer indices of tap layers, in order.
    taps: Vec<usize>,
}

impl Tape {
    pub fn num_taps(&self) -> usize {
        self.taps.len()
    }
}

pub struct NetworkOutput {
    pub output: SparseTensor,
    /// Tensors seen by each tap layer, in order.
    pub taps: Vec<SparseTensor>,
    pub tape: Tape,
}

#[derive(Clone, Debug)]
pub struct NetworkGrads {
    pub input: Array2<f64>,
    /// Flattened like [`Network::params`].
    pub params: Vec<f64>,
}

fn layer_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Network {
    /// Checks that consecutive field types chain.
    pub fn new(field_in: FieldType, layers: Vec<Box<dyn Layer>>) -> Result<Self> {
        let mut field = field_in.clone();
        for (index, layer) in layers.iter().enumerate() {
            if layer.field_in() != &field {
                return Err(Error::ChainMismatch {
                    index,
                    kind: layer.kind().to_string(),
                    message: format!("expects {}, receives {}", layer.field_in(), field),
                });
            }
            field = layer.field_out().clone();
        }
        Ok(Network {
            layers,
            field_in,
            version: 0,
        })
    }

    pub fn from_config(text: &str, field_in: Option<&FieldType>, seed: u64) -> Result<Self> {
        Self::from_config_with(text, field_in, seed, &LayerRegistry::default())
    }

    /// Builds every config line through `registry`. The input field comes
    /// from `field_in` or from the first layer's `in=`.
    pub fn from_config_with(text: &str, field_in: Option<&FieldType>, seed: u64, registry: &LayerRegistry) -> Result<Self> {
        let specs = parse_config(text)?;
        let mut layers: Vec<Box<dyn Layer>> = Vec::with_capacity(specs.len());
        let mut field = field_in.cloned();
        let mut first = field_in.cloned();
        for (index, spec) in specs.iter().enumerate() {
            let layer = registry.build(spec, field.as_ref(), layer_seed(seed, index)).map_err(|e| match e {
                Error::FieldMismatch { expected, found } => Error::ChainMismatch {
                    index,
                    kind: spec.keyword.clone(),
                    message: format!("line {}: expects {found}, receives {expected}", spec.args.line()),
                },
                other => other,
            })?;
            first.get_or_insert_with(|| layer.field_in().clone());
            field = Some(layer.field_out().clone());
            layers.push(layer);
        }
        let field_in = first.ok_or_else(|| Error::InvalidArgument("empty network needs an input field type".into()))?;
        Self::new(field_in, layers)
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        self.version += 1;
        &mut self.layers
    }

    pub fn field_in(&self) -> &FieldType {
        &self.field_in
    }

    pub fn field_out(&self) -> &FieldType {
        self.layers.last().map_or(&self.field_in, |l| l.field_out())
    }

    /// Field types of the tap layers, in order.
    pub fn tap_fields(&self) -> Vec<FieldType> {
        self.layers
            .iter()
            .filter(|l| l.kind() == "tap")
            .map(|l| l.field_out().clone())
            .collect()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Config text that rebuilds the architecture.
    pub fn describe(&self) -> String {
        let mut lines: Vec<String> = self.layers.iter().map(|l| l.describe()).collect();
        if let Some(first) = lines.first_mut() {
            if !first.contains(" in=") {
                *first = format!("{first} in={}", self.field_in);
            }
        }
        lines.join("\n")
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "network has {} parameters, got {}",
                self.num_params(),
                p.len()
            )));
        }
        let mut at = 0;
        for layer in &mut self.layers {
            let n = layer.num_params();
            layer.set_params(&p[at..at + n])?;
            at += n;
        }
        self.version += 1;
        Ok(())
    }

    pub fn forward(&self, input: &SparseTensor, mode: Mode) -> Result<NetworkOutput> {
        if input.field_type() != &self.field_in {
            return Err(Error::field_mismatch(&self.field_in, input.field_type()));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut taps = Vec::new();
        let mut tap_index = Vec::new();
        let mut current = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            shapes.push(current.features().dim());
            let (next, cache) = layer.forward(&current, mode)?;
            if layer.kind() == "tap" {
                taps.push(next.clone());
                tap_index.push(i);
            }
            caches.push(cache);
            current = next;
        }
        shapes.push(current.features().dim());
        Ok(NetworkOutput {
            output: current,
            taps,
            tape: Tape {
                version: self.version,
                caches,
                shapes,
                taps: tap_index,
            },
        })
    }

    /// Reverse pass. `grad_out` is the gradient on the final output (`None`
    /// for zero); `tap_grads[i]` is added at the `i`-th tap.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_out: Option<ArrayView2<'_, f64>>,
        tap_grads: &[Option<Array2<f64>>],
    ) -> Result<NetworkGrads> {
        if tape.version != self.version {
            return Err(Error::StaleTape {
                tape: tape.version,
                network: self.version,
            });
        }
        if tap_grads.len() > tape.taps.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tap gradients for {} taps",
                tap_grads.len(),
                tape.taps.len()
            )));
        }
        let out_shape = *tape.shapes.last().expect("output shape");
        let mut grad = match grad_out {
            Some(g) if g.dim() != out_shape => {
                return Err(Error::ShapeMismatch(format!(
                    "output gradient {:?}, expected {out_shape:?}",
                    g.dim()
                )))
            }
            Some(g) => g.to_owned(),
            None => Array2::zeros(out_shape),
        };
        let mut per_layer: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if let Some(t) = tape.taps.iter().position(|&ti| ti == i) {
                if let Some(Some(tg)) = tap_grads.get(t) {
                    if tg.dim() != grad.dim() {
                        return Err(Error::ShapeMismatch(format!(
                            "tap {t} gradient {:?}, expected {:?}",
                            tg.dim(),
                            grad.dim()
                        )));
                    }
                    grad += tg;
                }
            }
            let lg = layer.backward(&tape.caches[i], grad.view())?;
            per_layer[i] = lg.params;
            grad = lg.input;
        }
        Ok(NetworkGrads {
            input: grad,
            params: per_layer.into_iter().flatten().collect(),
        })
    }

    /// Folds training statistics of `tape` into running state. Does not
    /// change learnable parameters.
    pub fn commit(&mut self, tape: &Tape) {
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches) {
            layer.commit(cache);
        }
    }

    /// Adds Gaussian noise of the given scale to every convolution kernel,
    /// destroying steerability. A negative control for equivariance checks.
    pub fn break_equivariance(&mut self, seed: u64, scale: f64) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Some(conv) = layer.as_conv_mut() {
                conv.break_steerability(layer_seed(seed, i), scale);
            }
        }
        self.version += 1;
    }

    /// Cumulative pooling factor per axis from input to output.
    pub fn total_pool_factor(&self) -> u32 {
        self.layers
            .iter()
            .map(|l| l.pool_factor())
            .product()
    }
}
