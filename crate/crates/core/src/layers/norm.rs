use ndarray::{s, Array2, ArrayView2};

use super::{check_grad, check_input, downcast, Cache, Layer, LayerGrad, Mode};
use crate::error::{Error, Result};
use crate::repr::FieldType;
use crate::tensor::SparseTensor;

pub const NORM_EPSILON: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.9;

/// Per-irreducible normalization over active sites.
///
/// Order-0 channels are standardized: `(x - mean) / sqrt(var + ε)`.
/// Higher-order irreducibles are divided by `sqrt(E‖f‖² + ε)`, which keeps
/// their direction. Training mode uses batch statistics over the active
/// sites; evaluation mode uses running averages.
#[derive(Clone, Debug)]
pub struct EquivariantNorm {
    field: FieldType,
    epsilon: f64,
    momentum: f64,
    /// Per irreducible; only meaningful for order 0.
    running_mean: Vec<f64>,
    /// Variance (order 0) or mean squared norm (order > 0).
    running_var: Vec<f64>,
}

struct NormCache {
    output: Array2<f64>,
    /// `sqrt(stat + ε)` per irreducible.
    scale: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    training: bool,
}

impl EquivariantNorm {
    pub fn new(field: FieldType) -> Self {
        let n = field.len();
        EquivariantNorm {
            field,
            epsilon: NORM_EPSILON,
            momentum: NORM_MOMENTUM,
            running_mean: vec![0.0; n],
            running_var: vec![1.0; n],
        }
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[f64] {
        &self.running_var
    }
}

impl Layer for EquivariantNorm {
    fn kind(&self) -> &'static str {
        "norm"
    }

    fn describe(&self) -> String {
        "norm".into()
    }

    fn field_in(&self) -> &FieldType {
        &self.field
    }

    fn field_out(&self) -> &FieldType {
        &self.field
    }

    fn buffers(&self) -> Vec<(&'static str, Vec<f64>)> {
        vec![("running_mean", self.running_mean.clone()), ("running_var", self.running_var.clone())]
    }

    fn set_buffer(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let target = match name {
            "running_mean" => &mut self.running_mean,
            "running_var" => &mut self.running_var,
            _ => {
                return Err(Error::Unknown {
                    what: "norm buffer",
                    name: name.into(),
                })
            }
        };
        if data.len() != target.len() {
            return Err(Error::ShapeMismatch(format!("{name}: expected {} values, got {}", target.len(), data.len())));
        }
        target.copy_from_slice(data);
        Ok(())
    }

    fn forward(&self, input: &SparseTensor, mode: Mode) -> Result<(SparseTensor, Cache)> {
        check_input(&self.field, input)?;
        let x = input.features();
        let n = x.nrows();
        let training = mode == Mode::Train && n > 0;
        let mut out = x.clone();
        let mut scale = Vec::with_capacity(self.field.len());
        let mut batch_mean = vec![0.0; self.field.len()];
        let mut batch_var = vec![0.0; self.field.len()];
        for (i, (l, off)) in self.field.irreps().enumerate() {
            let d = 2 * l as usize + 1;
            let mut block = out.slice_mut(s![.., off..off + d]);
            if l == 0 {
                let (mean, var) = if training {
                    let col = block.column(0);
                    let mean = col.sum() / n as f64;
                    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    (mean, var)
                } else {
                    (self.running_mean[i], self.running_var[i])
                };
                let sd = (var + self.epsilon).sqrt();
                block.mapv_inplace(|v| (v - mean) / sd);
                batch_mean[i] = mean;
                batch_var[i] = var;
                scale.push(sd);
            } else {
                let sq = if training {
                    block.iter().map(|v| v * v).sum::<f64>() / n as f64
                } else {
                    self.running_var[i]
                };
                let sd = (sq + self.epsilon).sqrt();
                block.mapv_inplace(|v| v / sd);
                batch_var[i] = sq;
                scale.push(sd);
            }
        }
        let output = input.with_features(out.clone(), self.field.clone())?;
        let cache = NormCache {
            output: out,
            scale,
            batch_mean,
            batch_var,
            training,
        };
        Ok((output, Box::new(cache)))
    }

    fn backward(&self, cache: &Cache, grad_out: ArrayView2<'_, f64>) -> Result<LayerGrad> {
        let c: &NormCache = downcast(cache, "norm")?;
        check_grad("norm", &grad_out, c.output.nrows(), self.field.dim())?;
        let n = c.output.nrows() as f64;
        let mut grad = grad_out.to_owned();
        for (i, (l, off)) in self.field.irreps().enumerate() {
            let d = 2 * l as usize + 1;
            let sd = c.scale[i];
            let y = c.output.slice(s![.., off..off + d]);
            let mut g = grad.slice_mut(s![.., off..off + d]);
            if !c.training {
                g.mapv_inplace(|v| v / sd);
            } else if l == 0 {
                // dx = (dy - mean(dy) - y mean(dy y)) / sd
                let mean_g = g.sum() / n;
                let mean_gy = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                g.zip_mut_with(&y, |gv, &yv| *gv = (*gv - mean_g - yv * mean_gy) / sd);
            } else {
                // dx_n = g_n / sd - y_n Σ_m <g_m, y_m> / (N sd)
                let dot = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>();
                g.zip_mut_with(&y, |gv, &yv| *gv = *gv / sd - yv * dot / (n * sd));
            }
        }
        Ok(LayerGrad {
            input: grad,
            params: Vec::new(),
        })
    }

    fn commit(&mut self, cache: &Cache) {
        let Ok(c) = downcast::<NormCache>(cache, "norm") else {
            return;
        };
        if !c.training {
            return;
        }
        let m = self.momentum;
        for (i, l) in self.field.orders().iter().enumerate() {
            if *l == 0 {
                self.running_mean[i] = m * self.running_mean[i] + (1.0 - m) * c.batch_mean[i];
            }
            self.running_var[i] = m * self.running_var[i] + (1.0 - m) * c.batch_var[i];
        }
    }

    fn box_clone(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
