use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_grad, check_input, downcast, Cache, Layer, LayerGrad, Mode};
use crate::conv::{conv_backward_matrices, conv_forward_matrices, ConvBackend, ConvMode, RuleBook, SparseBackend};
use crate::error::Result;
use crate::kernel::{BasisSpec, KernelMatrices, SteerableKernel};
use crate::repr::FieldType;
use crate::tensor::SparseTensor;

#[derive(Clone)]
pub struct ConvLayer {
    kernel: SteerableKernel,
    mode: ConvMode,
    backend: Arc<dyn ConvBackend>,
    /// Additive non-steerable noise on the materialized kernel; a negative
    /// control for equivariance checks.
    perturbation: Option<KernelMatrices>,
}

impl fmt::Debug for ConvLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvLayer")
            .field("field_in", self.kernel.field_in())
            .field("field_out", self.kernel.field_out())
            .field("mode", &self.mode)
            .field("backend", &self.backend.name())
            .field("perturbed", &self.perturbation.is_some())
            .finish()
    }
}

struct ConvCache {
    input: Array2<f64>,
    rules: RuleBook,
    kernel: KernelMatrices,
}

impl ConvLayer {
    pub fn new(kernel: SteerableKernel, mode: ConvMode) -> Self {
        ConvLayer {
            kernel,
            mode,
            backend: Arc::new(SparseBackend),
            perturbation: None,
        }
    }

    /// Kernel from scratch with seeded initial weights.
    pub fn build(field_in: FieldType, field_out: FieldType, spec: BasisSpec, mode: ConvMode, seed: u64) -> Result<Self> {
        Ok(Self::new(SteerableKernel::new(field_in, field_out, spec)?.initialized(seed), mode))
    }

    pub fn with_backend(mut self, backend: Arc<dyn ConvBackend>) -> Self {
        self.backend = backend;
        self
    }

    pub fn kernel(&self) -> &SteerableKernel {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut SteerableKernel {
        &mut self.kernel
    }

    pub fn mode(&self) -> ConvMode {
        self.mode
    }

    /// Adds i.i.d. Gaussian noise of the given scale to every kernel entry,
    /// destroying steerability.
    pub fn break_steerability(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, o, i) = (self.kernel.num_offsets(), self.kernel.field_out().dim(), self.kernel.field_in().dim());
        self.perturbation = Some(KernelMatrices::from_shape_fn((n, o, i), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        }));
    }

    pub fn set_backend(&mut self, backend: Arc<dyn ConvBackend>) {
        self.backend = backend;
    }

    pub fn backend(&self) -> &dyn ConvBackend {
        self.backend.as_ref()
    }

    /// Materialized kernel, including any injected perturbation.
    pub fn matrices(&self) -> KernelMatrices {
        let mut k = self.kernel.materialize();
        if let Some(p) = &self.perturbation {
            k += p;
        }
        k
    }
}

impl Layer for ConvLayer {
    fn kind(&self) -> &'static str {
        "conv"
    }

    fn describe(&self) -> String {
        let spec = self.kernel.spec();
        let centers: Vec<String> = spec.centers.iter().map(|c| c.to_string()).collect();
        format!(
            "conv in={} out={} size={} mode={} m={} eps={} backend={}",
            self.kernel.field_in(),
            self.kernel.field_out(),
            spec.size,
            self.mode,
            centers.join(","),
            spec.epsilon,
            self.backend.name()
        )
    }

    fn field_in(&self) -> &FieldType {
        self.kernel.field_in()
    }

    fn field_out(&self) -> &FieldType {
        self.kernel.field_out()
    }

    fn num_params(&self) -> usize {
        self.kernel.num_params()
    }

    fn params(&self) -> Vec<f64> {
        self.kernel.weights().to_vec()
    }

    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        self.kernel.set_weights(p)
    }

    fn forward(&self, input: &SparseTensor, _mode: Mode) -> Result<(SparseTensor, Cache)> {
        check_input(self.kernel.field_in(), input)?;
        let kernel = self.matrices();
        let out = conv_forward_matrices(input, &kernel, self.kernel.field_out(), self.mode, self.backend.as_ref())?;
        let cache = ConvCache {
            input: input.features().clone(),
            rules: out.rules,
            kernel,
        };
        Ok((out.output, Box::new(cache)))
    }

    fn backward(&self, cache: &Cache, grad_out: ArrayView2<'_, f64>) -> Result<LayerGrad> {
        let c: &ConvCache = downcast(cache, "conv")?;
        check_grad("conv", &grad_out, c.rules.num_out(), self.kernel.field_out().dim())?;
        let grads = conv_backward_matrices(grad_out, c.input.view(), &c.kernel, &c.rules)?;
        let params = self.kernel.project_gradient(&grads.kernel)?.to_vec();
        Ok(LayerGrad {
            input: grads.input,
            params,
        })
    }

    fn box_clone(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }

    fn as_conv(&self) -> Option<&ConvLayer> {
        Some(self)
    }

    fn as_conv_mut(&mut self) -> Option<&mut ConvLayer> {
        Some(self)
    }
}
