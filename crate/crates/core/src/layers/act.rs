use ndarray::{s, Array2, Array3, ArrayView2};

use super::{check_grad, check_input, downcast, expect_len, Cache, Layer, LayerGrad, Mode};
use crate::conv::{conv_backward_matrices, ConvBackend, RuleBook, SparseBackend};
use crate::error::Result;
use crate::kernel::{BasisSpec, KernelMatrices, SteerableKernel};
use crate::repr::FieldType;
use crate::tensor::SparseTensor;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug)]
struct Gate {
    /// Column offset and width of the gated irreducible.
    offset: usize,
    width: usize,
    /// Maps the irreducible to one scalar logit.
    kernel: SteerableKernel,
}

/// Order-0 channels pass through `max(0, x)`; every higher-order
/// irreducible is scaled by `sigmoid(a)`, where the logit `a` is produced
/// by a submanifold convolution of that irreducible into a single scalar.
#[derive(Clone, Debug)]
pub struct GatedActivation {
    field: FieldType,
    gate_size: usize,
    gates: Vec<Gate>,
}

struct ActCache {
    input: Array2<f64>,
    gates: Array2<f64>,
    rules: RuleBook,
    kernel: KernelMatrices,
}

impl GatedActivation {
    /// `gate_size` is the side length of the gate convolutions.
    pub fn new(field: FieldType, gate_size: usize, seed: u64) -> Result<Self> {
        let spec = BasisSpec::with_size(gate_size);
        let mut gates = Vec::new();
        for (i, (l, offset)) in field.irreps().enumerate() {
            if l == 0 {
                continue;
            }
            let kernel = SteerableKernel::new(FieldType::new(vec![l]), FieldType::scalars(1), spec.clone())?
                .initialized(seed.wrapping_add(i as u64));
            gates.push(Gate {
                offset,
                width: 2 * l as usize + 1,
                kernel,
            });
        }
        Ok(GatedActivation {
            field,
            gate_size,
            gates,
        })
    }

    pub fn num_gates(&self) -> usize {
        self.gates.len()
    }

    /// All gate kernels as one `(offsets, gates, K)` stack.
    fn gate_matrices(&self) -> KernelMatrices {
        let n_off = self.gate_size.pow(3);
        let mut k = Array3::zeros((n_off, self.gates.len(), self.field.dim()));
        for (g, gate) in self.gates.iter().enumerate() {
            let m = gate.kernel.materialize();
            k.slice_mut(s![.., g..g + 1, gate.offset..gate.offset + gate.width])
                .assign(&m);
        }
        k
    }
}

impl Layer for GatedActivation {
    fn kind(&self) -> &'static str {
        "act"
    }

    fn describe(&self) -> String {
        format!("act size={}", self.gate_size)
    }

    fn field_in(&self) -> &FieldType {
        &self.field
    }

    fn field_out(&self) -> &FieldType {
        &self.field
    }

    fn num_params(&self) -> usize {
        self.gates.iter().map(|g| g.kernel.num_params()).sum()
    }

    fn params(&self) -> Vec<f64> {
        self.gates.iter().flat_map(|g| g.kernel.weights().to_vec()).collect()
    }

    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        expect_len("act", p, self.num_params())?;
        let mut at = 0;
        for g in &mut self.gates {
            let n = g.kernel.num_params();
            g.kernel.set_weights(&p[at..at + n])?;
            at += n;
        }
        Ok(())
    }

    fn forward(&self, input: &SparseTensor, _mode: Mode) -> Result<(SparseTensor, Cache)> {
        check_input(&self.field, input)?;
        let x = input.features();
        let rules = RuleBook::build(input.sites(), input.sites(), self.gate_size);
        let kernel = self.gate_matrices();
        let (gates, _) = SparseBackend.forward(input, input.sites(), &rules, &kernel)?;
        let mut out = x.clone();
        for (l, off) in self.field.irreps() {
            if l == 0 {
                out.column_mut(off).mapv_inplace(|v| v.max(0.0));
            }
        }
        for (g, gate) in self.gates.iter().enumerate() {
            for (row, &a) in gates.column(g).iter().enumerate() {
                let sg = sigmoid(a);
                out.slice_mut(s![row, gate.offset..gate.offset + gate.width])
                    .mapv_inplace(|v| v * sg);
            }
        }
        let output = input.with_features(out, self.field.clone())?;
        let cache = ActCache {
            input: x.clone(),
            gates,
            rules,
            kernel,
        };
        Ok((output, Box::new(cache)))
    }

    fn backward(&self, cache: &Cache, grad_out: ArrayView2<'_, f64>) -> Result<LayerGrad> {
        let c: &ActCache = downcast(cache, "act")?;
        check_grad("act", &grad_out, c.input.nrows(), self.field.dim())?;
        let mut grad_in = grad_out.to_owned();
        for (l, off) in self.field.irreps() {
            if l == 0 {
                let mut g = grad_in.column_mut(off);
                for (gv, &xv) in g.iter_mut().zip(c.input.column(off)) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
        }
        let mut grad_logits = Array2::zeros(c.gates.dim());
        for (g, gate) in self.gates.iter().enumerate() {
            let cols = s![.., gate.offset..gate.offset + gate.width];
            let f = c.input.slice(cols);
            let go = grad_out.slice(cols);
            for row in 0..c.input.nrows() {
                let sg = sigmoid(c.gates[[row, g]]);
                let dot: f64 = go.row(row).iter().zip(f.row(row)).map(|(a, b)| a * b).sum();
                grad_logits[[row, g]] = sg * (1.0 - sg) * dot;
                grad_in
                    .slice_mut(s![row, gate.offset..gate.offset + gate.width])
                    .mapv_inplace(|v| v * sg);
            }
        }
        let mut params = Vec::with_capacity(self.num_params());
        if !self.gates.is_empty() {
            let conv = conv_backward_matrices(grad_logits.view(), c.input.view(), &c.kernel, &c.rules)?;
            grad_in += &conv.input;
            for (g, gate) in self.gates.iter().enumerate() {
                let block = conv
                    .kernel
                    .slice(s![.., g..g + 1, gate.offset..gate.offset + gate.width])
                    .to_owned();
                params.extend(gate.kernel.project_gradient(&block)?.iter());
            }
        }
        Ok(LayerGrad { input: grad_in, params })
    }

    fn box_clone(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
