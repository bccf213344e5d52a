use ndarray::ArrayView2;

use super::{check_grad, check_input, downcast, Cache, Layer, LayerGrad, Mode};
use crate::conv::{avg_pool, avg_pool_backward, PoolMap};
use crate::error::Result;
use crate::repr::FieldType;
use crate::tensor::SparseTensor;

#[derive(Clone, Debug)]
pub struct PoolLayer {
    field: FieldType,
    factor: u32,
}

impl PoolLayer {
    pub fn new(field: FieldType, factor: u32) -> Self {
        PoolLayer { field, factor }
    }

    pub fn factor(&self) -> u32 {
        self.factor
    }
}

impl Layer for PoolLayer {
    fn kind(&self) -> &'static str {
        "pool"
    }

    fn describe(&self) -> String {
        format!("pool factor={}", self.factor)
    }

    fn field_in(&self) -> &FieldType {
        &self.field
    }

    fn field_out(&self) -> &FieldType {
        &self.field
    }

    fn pool_factor(&self) -> u32 {
        self.factor
    }

    fn forward(&self, input: &SparseTensor, _mode: Mode) -> Result<(SparseTensor, Cache)> {
        check_input(&self.field, input)?;
        let (out, map) = avg_pool(input, self.factor)?;
        Ok((out, Box::new(map)))
    }

    fn backward(&self, cache: &Cache, grad_out: ArrayView2<'_, f64>) -> Result<LayerGrad> {
        let map: &PoolMap = downcast(cache, "pool")?;
        check_grad("pool", &grad_out, map.counts.len(), self.field.dim())?;
        Ok(LayerGrad {
            input: avg_pool_backward(grad_out, map)?,
            params: Vec::new(),
        })
    }

    fn box_clone(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Identity layer whose output the network exposes as an intermediate
/// feature map.
#[derive(Clone, Debug)]
pub struct TapLayer {
    field: FieldType,
}

impl TapLayer {
    pub fn new(field: FieldType) -> Self {
        TapLayer { field }
    }
}

impl Layer for TapLayer {
    fn kind(&self) -> &'static str {
        "tap"
    }

    fn describe(&self) -> String {
        "tap".into()
    }

    fn field_in(&self) -> &FieldType {
        &self.field
    }

    fn field_out(&self) -> &FieldType {
        &self.field
    }

    fn forward(&self, input: &SparseTensor, _mode: Mode) -> Result<(SparseTensor, Cache)> {
        check_input(&self.field, input)?;
        Ok((input.clone(), Box::new(input.num_sites())))
    }

    fn backward(&self, cache: &Cache, grad_out: ArrayView2<'_, f64>) -> Result<LayerGrad> {
        let rows: &usize = downcast(cache, "tap")?;
        check_grad("tap", &grad_out, *rows, self.field.dim())?;
        Ok(LayerGrad {
            input: grad_out.to_owned(),
            params: Vec::new(),
        })
    }

    fn box_clone(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
