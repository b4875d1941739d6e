//! Feed-forward blocks over a flat parameter slice.
//!
//! All lifts, kernel nets, and the final projection are plain FFNs with
//! GELU hidden activations and identity output. Parameters live in a flat
//! `&[f64]` owned by the model so that optimizer steps, gradient records,
//! and serialization all operate on one contiguous vector. Evaluation is
//! batched: inputs are `n × in_dim` matrices so the inner products become
//! dgemm calls.

use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use super::GnoError;
use crate::black_scholes::{norm_cdf, norm_pdf};

/// Exact GELU, `t·Φ(t)`.
pub fn gelu(t: f64) -> f64 {
    t * norm_cdf(t)
}

/// GELU derivative, `Φ(t) + t·φ(t)`.
pub fn gelu_prime(t: f64) -> f64 {
    norm_cdf(t) + t * norm_pdf(t)
}

/// Offsets of one affine layer inside the net's parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerOffsets {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

/// A feed-forward net described by its layer dimensions; weights are
/// row-major `out × in` slices of an external parameter block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ffn {
    pub dims: Vec<usize>,
    layers: Vec<LayerOffsets>,
    pub param_len: usize,
}

/// Forward-pass intermediates needed for reverse mode: the input to each
/// affine layer and each layer's pre-activation.
#[derive(Debug, Clone)]
pub struct FfnCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl FfnCache {
    pub fn output(&self) -> &Array2<f64> {
        self.pre.last().expect("nonempty net")
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.pre.pop().expect("nonempty net")
    }
}

impl Ffn {
    pub fn new(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "net needs input and output dims");
        assert!(dims.iter().all(|&d| d > 0), "dims must be positive");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut offset = 0;
        for win in dims.windows(2) {
            let (cols, rows) = (win[0], win[1]);
            layers.push(LayerOffsets { w: offset, b: offset + rows * cols, rows, cols });
            offset += rows * cols + rows;
        }
        Ffn { dims: dims.to_vec(), layers, param_len: offset }
    }

    /// Fill this net's block with uniform `[−1/√fan_in, 1/√fan_in]` draws.
    /// Seeded Kaiming-uniform initialization: weights `U[±√(6/fan_in)]`
    /// (variance `2/fan_in`, which preserves signal scale through the
    /// stack), biases zero.
    pub fn init(&self, params: &mut [f64], rng: &mut impl rand::Rng) {
        assert_eq!(params.len(), self.param_len);
        for layer in &self.layers {
            let scale = (6.0 / layer.cols as f64).sqrt();
            for p in &mut params[layer.w..layer.b] {
                *p = rng.gen_range(-scale..scale);
            }
            for p in &mut params[layer.b..layer.b + layer.rows] {
                *p = 0.0;
            }
        }
    }

    fn weight<'a>(&self, params: &'a [f64], l: usize) -> ArrayView2<'a, f64> {
        let layer = self.layers[l];
        ArrayView2::from_shape((layer.rows, layer.cols), &params[layer.w..layer.b]).unwrap()
    }

    /// Batched forward pass over the rows of `x`, retaining the tape.
    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Result<FfnCache, GnoError> {
        if x.ncols() != self.dims[0] {
            return Err(GnoError::ShapeError { got: x.ncols(), want: self.dims[0] });
        }
        assert_eq!(params.len(), self.param_len);
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = self.weight(params, l);
            let b = &params[layer.b..layer.b + layer.rows];
            let mut z = a.dot(&w.t());
            for mut row in z.rows_mut() {
                for (zi, bi) in row.iter_mut().zip(b) {
                    *zi += bi;
                }
            }
            inputs.push(a);
            a = if l + 1 < n_layers { z.mapv(gelu) } else { z.clone() };
            pre.push(z);
        }
        Ok(FfnCache { inputs, pre })
    }

    /// Reverse-mode pass: accumulates parameter gradients into `grad`
    /// (same layout as `params`) and returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &FfnCache,
        grad_out: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Array2<f64> {
        assert_eq!(grad.len(), self.param_len);
        assert_eq!(grad_out.ncols(), *self.dims.last().unwrap());
        let mut dz = grad_out.to_owned();
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            // dW += dzᵀ·a, db += column sums of dz
            let a = &cache.inputs[l];
            let dw = dz.t().dot(a);
            let gw = &mut grad[layer.w..layer.b];
            for (g, d) in gw.iter_mut().zip(dw.iter()) {
                *g += d;
            }
            let gb = &mut grad[layer.b..layer.b + layer.rows];
            for row in dz.rows() {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            let w = self.weight(params, l);
            let mut da = dz.dot(&w);
            if l > 0 {
                da.zip_mut_with(&cache.pre[l - 1], |d, &z| *d *= gelu_prime(z));
            }
            dz = da;
        }
        dz
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// `(out_dim, in_dim)` of affine layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.layers[l].rows, self.layers[l].cols)
    }

    /// Row-major weight slice and bias slice of affine layer `l`.
    pub fn layer_slices<'a>(&self, params: &'a [f64], l: usize) -> (&'a [f64], &'a [f64]) {
        let layer = self.layers[l];
        (
            &params[layer.w..layer.b],
            &params[layer.b..layer.b + layer.rows],
        )
    }

    /// Mutable variant of [`Ffn::layer_slices`].
    pub fn layer_slices_mut<'a>(
        &self,
        params: &'a mut [f64],
        l: usize,
    ) -> (&'a mut [f64], &'a mut [f64]) {
        let layer = self.layers[l];
        let (w, rest) = params[layer.w..].split_at_mut(layer.rows * layer.cols);
        (w, &mut rest[..layer.rows])
    }

    /// Convenience single-vector evaluation.
    pub fn eval(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>, GnoError> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|_| GnoError::ShapeError { got: x.len(), want: self.dims[0] })?;
        Ok(self.forward(params, view)?.into_output().into_raw_vec_and_offset().0)
    }
}

/// Add `src` into `dst` elementwise (gradient accumulation helper).
pub fn accumulate(dst: &mut ArrayViewMut2<f64>, src: &ArrayView2<f64>) {
    dst.zip_mut_with(src, |d, &s| *d += s);
}
