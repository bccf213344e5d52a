//! Point-wise regressors producing Cartesian 3-vectors.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::repr::FieldType;

/// Maps each point's feature row to `outputs` Cartesian vectors.
///
/// The equivariant part is `out_a = Σ_c A_ac(s) v_c`, where `v_c` are the
/// order-1 channels and the coefficients `A(s)` come from a one-hidden-layer
/// rectifier network on the order-0 channels. An optional plain affine map
/// of the whole row is added on top; it is not rotation equivariant.
#[derive(Clone, Debug)]
pub struct PointHead {
    scalar_cols: Vec<usize>,
    vector_cols: Vec<usize>,
    in_dim: usize,
    outputs: usize,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    plain: Option<(Array2<f64>, Array1<f64>)>,
}

pub struct HeadCache {
    scalars: Array2<f64>,
    /// `(N, vectors, 3)` flattened as `N × 3·vectors`, Cartesian.
    vectors: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
    coeffs: Array2<f64>,
    input: Array2<f64>,
}

impl PointHead {
    /// Coefficient weights start at zero, so an untrained head outputs zero
    /// vectors.
    pub fn new(field: &FieldType, hidden: usize, outputs: usize, plain: bool, seed: u64) -> Result<Self> {
        let mut scalar_cols = Vec::new();
        let mut vector_cols = Vec::new();
        for (l, off) in field.irreps() {
            match l {
                0 => scalar_cols.push(off),
                1 => vector_cols.push(off),
                _ => {}
            }
        }
        if scalar_cols.is_empty() || vector_cols.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "head input {field} needs order-0 and order-1 channels"
            )));
        }
        let ns = scalar_cols.len();
        let nv = vector_cols.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (2.0 / ns as f64).sqrt()).expect("valid scale");
        let w1 = Array2::from_shape_fn((hidden, ns), |_| normal.sample(&mut rng));
        let in_dim = field.dim();
        Ok(PointHead {
            scalar_cols,
            vector_cols,
            in_dim,
            outputs,
            w1,
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((outputs * nv, hidden)),
            b2: Array1::zeros(outputs * nv),
            plain: plain.then(|| (Array2::zeros((3 * outputs, in_dim)), Array1::zeros(3 * outputs))),
        })
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn num_params(&self) -> usize {
        self.w1.len()
            + self.b1.len()
            + self.w2.len()
            + self.b2.len()
            + self.plain.as_ref().map_or(0, |(u, c)| u.len() + c.len())
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).copied().collect();
        if let Some((u, c)) = &self.plain {
            p.extend(u.iter().chain(c));
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!("head has {} parameters, got {}", self.num_params(), p.len())));
        }
        let mut it = p.iter().copied();
        let mut fill = |dst: &mut dyn Iterator<Item = &mut f64>| dst.for_each(|v| *v = it.next().expect("length checked"));
        fill(&mut self.w1.iter_mut());
        fill(&mut self.b1.iter_mut());
        fill(&mut self.w2.iter_mut());
        fill(&mut self.b2.iter_mut());
        if let Some((u, c)) = &mut self.plain {
            fill(&mut u.iter_mut());
            fill(&mut c.iter_mut());
        }
        Ok(())
    }

    /// `N × 3·outputs`, vectors concatenated per row.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, HeadCache)> {
        if x.ncols() != self.in_dim {
            return Err(Error::ShapeMismatch(format!("head expects {} columns, got {}", self.in_dim, x.ncols())));
        }
        let n = x.nrows();
        let nv = self.vector_cols.len();
        let scalars = x.select(Axis(1), &self.scalar_cols);
        let mut vectors = Array2::zeros((n, 3 * nv));
        for (c, &off) in self.vector_cols.iter().enumerate() {
            // order-1 channels are stored as (y, z, x)
            vectors.column_mut(3 * c).assign(&x.column(off + 2));
            vectors.column_mut(3 * c + 1).assign(&x.column(off));
            vectors.column_mut(3 * c + 2).assign(&x.column(off + 1));
        }
        let pre = scalars.dot(&self.w1.t()) + &self.b1;
        let hidden = pre.mapv(|v| v.max(0.0));
        let coeffs = hidden.dot(&self.w2.t()) + &self.b2;
        let mut out = Array2::zeros((n, 3 * self.outputs));
        for row in 0..n {
            for a in 0..self.outputs {
                for c in 0..nv {
                    let w = coeffs[[row, a * nv + c]];
                    for k in 0..3 {
                        out[[row, 3 * a + k]] += w * vectors[[row, 3 * c + k]];
                    }
                }
            }
        }
        if let Some((u, c)) = &self.plain {
            out += &(x.dot(&u.t()) + c);
        }
        let cache = HeadCache {
            scalars,
            vectors,
            pre,
            hidden,
            coeffs,
            input: if self.plain.is_some() { x.to_owned() } else { Array2::zeros((0, 0)) },
        };
        Ok((out, cache))
    }

    /// Returns the input gradient and the parameter gradient.
    pub fn backward(&self, cache: &HeadCache, grad: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        let n = cache.scalars.nrows();
        if grad.dim() != (n, 3 * self.outputs) {
            return Err(Error::ShapeMismatch(format!("head gradient {:?}, expected ({n}, {})", grad.dim(), 3 * self.outputs)));
        }
        let nv = self.vector_cols.len();
        let mut d_coeffs = Array2::zeros((n, self.outputs * nv));
        let mut d_vectors = Array2::<f64>::zeros((n, 3 * nv));
        for row in 0..n {
            for a in 0..self.outputs {
                for c in 0..nv {
                    let mut acc = 0.0;
                    let w = cache.coeffs[[row, a * nv + c]];
                    for k in 0..3 {
                        let g = grad[[row, 3 * a + k]];
                        acc += g * cache.vectors[[row, 3 * c + k]];
                        d_vectors[[row, 3 * c + k]] += w * g;
                    }
                    d_coeffs[[row, a * nv + c]] = acc;
                }
            }
        }
        let d_w2 = d_coeffs.t().dot(&cache.hidden);
        let d_b2 = d_coeffs.sum_axis(Axis(0));
        let mut d_pre = d_coeffs.dot(&self.w2);
        d_pre.zip_mut_with(&cache.pre, |g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        let d_w1 = d_pre.t().dot(&cache.scalars);
        let d_b1 = d_pre.sum_axis(Axis(0));
        let d_scalars = d_pre.dot(&self.w1);

        let mut d_x = Array2::zeros((n, self.in_dim));
        for (j, &col) in self.scalar_cols.iter().enumerate() {
            d_x.column_mut(col).assign(&d_scalars.column(j));
        }
        for (c, &off) in self.vector_cols.iter().enumerate() {
            d_x.column_mut(off + 2).assign(&d_vectors.column(3 * c));
            d_x.column_mut(off).assign(&d_vectors.column(3 * c + 1));
            d_x.column_mut(off + 1).assign(&d_vectors.column(3 * c + 2));
        }
        let mut params: Vec<f64> = d_w1.iter().chain(&d_b1).chain(&d_w2).chain(&d_b2).copied().collect();
        if let Some((u, _)) = &self.plain {
            let d_u = grad.t().dot(&cache.input);
            let d_c = grad.sum_axis(Axis(0));
            params.extend(d_u.iter().chain(&d_c));
            d_x += &grad.dot(u);
        }
        Ok((d_x, params))
    }
}

/// Mean over rows of an `N × 3·k` head output, as `k` vectors.
pub fn mean_vectors(out: &Array2<f64>) -> Vec<nalgebra::Vector3<f64>> {
    let mean = out.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(out.ncols()));
    (0..out.ncols() / 3)
        .map(|a| {
            let v = mean.slice(s![3 * a..3 * a + 3]);
            nalgebra::Vector3::new(v[0], v[1], v[2])
        })
        .collect()
}
