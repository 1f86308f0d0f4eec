//! Fully-connected networks used as the train-time embedding and as the
//! classifier head.
//!
//! Layers compute `y = act(x·W + b)` with `W` stored `in × out`, so a row of
//! the output is accumulated input-by-input in a fixed order. The same row
//! kernel serves single-point and batched evaluation, which keeps a node's
//! embedding bitwise identical whichever path produced it.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice3, Lut};
use crate::linalg::{axpy, dot, Matrix, Vector};
use crate::Point3;

const PAR_ROWS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// Per-channel batch normalization statistics and affine parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl BatchNormParams {
    /// Identity normalization for `n` channels.
    pub fn identity(n: usize) -> Self {
        Self {
            gamma: vec![1.0; n],
            beta: vec![0.0; n],
            mean: vec![0.0; n],
            var: vec![1.0; n],
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.gamma.len();
        if self.beta.len() != n || self.mean.len() != n || self.var.len() != n {
            return Err(Error::DimensionMismatch(
                "batch-norm parameter vectors differ in length".into(),
            ));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("batch-norm eps must be > 0, got {}", self.eps)));
        }
        if let Some(c) = self.var.iter().position(|v| !(v + self.eps > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "batch-norm variance + eps must be positive (channel {c})"
            )));
        }
        Ok(())
    }
}

/// Folds an inference-mode batch norm into the preceding affine map so that
/// `x·W' + b' = γ·((x·W + b) − μ)/√(σ² + ε) + β`.
pub fn fold_batchnorm(weight: &Matrix, bias: &[f64], bn: &BatchNormParams) -> Result<(Matrix, Vector)> {
    bn.check()?;
    let out = weight.cols();
    if bias.len() != out || bn.channels() != out {
        return Err(Error::DimensionMismatch(format!(
            "layer has {out} outputs, bias {} and batch norm {} channels",
            bias.len(),
            bn.channels()
        )));
    }
    let scale: Vec<f64> = (0..out)
        .map(|c| bn.gamma[c] / (bn.var[c] + bn.eps).sqrt())
        .collect();
    let mut w = weight.clone();
    for r in 0..w.rows() {
        for (v, s) in w.row_mut(r).iter_mut().zip(&scale) {
            *v *= s;
        }
    }
    let b = (0..out)
        .map(|c| scale[c] * (bias[c] - bn.mean[c]) + bn.beta[c])
        .collect::<Vec<_>>();
    Ok((w, Vector(b)))
}

/// One affine layer, optionally batch-normalized, followed by an activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `in × out`.
    pub weight: Matrix,
    pub bias: Vector,
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_norm: Option<BatchNormParams>,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vector, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::DimensionMismatch(format!(
                "bias of length {} for layer with {} outputs",
                bias.len(),
                weight.cols()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
            batch_norm: None,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Affine part of the layer for one input row (before normalization).
    #[inline]
    fn affine_row(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (k, &xk) in x.iter().enumerate() {
            if xk != 0.0 {
                axpy(xk, self.weight.row(k), out);
            }
        }
    }

    #[inline]
    fn eval_row(&self, x: &[f64], out: &mut [f64]) {
        self.affine_row(x, out);
        if let Some(bn) = &self.batch_norm {
            for (c, v) in out.iter_mut().enumerate() {
                *v = bn.gamma[c] * (*v - bn.mean[c]) / (bn.var[c] + bn.eps).sqrt() + bn.beta[c];
            }
        }
        activate(self.activation, out);
    }
}

#[inline]
fn activate(act: Activation, v: &mut [f64]) {
    if act == Activation::Relu {
        v.iter_mut().for_each(|x| *x = x.max(0.0));
    }
}

/// Multi-layer perceptron.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("MLP layers"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::DimensionMismatch(format!("layer {i} bias length")));
            }
            if !l.weight.as_slice().iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
            if let Some(bn) = &l.batch_norm {
                bn.check()?;
                if bn.channels() != l.out_dim() {
                    return Err(Error::DimensionMismatch(format!("layer {i} batch norm channels")));
                }
            }
        }
        Ok(Self { layers })
    }

    /// He-uniform weights and zero biases for the layer widths `dims`
    /// (`dims[0]` inputs). Hidden layers use ReLU; the last uses `last`.
    pub fn he_uniform<R: Rng + ?Sized>(dims: &[usize], last: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer widths {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
                let act = if i + 1 == n { last } else { Activation::Relu };
                Layer::new(Matrix::from_vec(fan_in, fan_out, data)?, Vector::zeros(fan_out), act)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Enables batch normalization (identity statistics) on every layer
    /// except the last one.
    pub fn enable_batch_norm(&mut self) {
        let n = self.layers.len();
        for l in &mut self.layers[..n - 1] {
            if l.batch_norm.is_none() {
                l.batch_norm = Some(BatchNormParams::identity(l.out_dim()));
            }
        }
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| l.batch_norm.is_some())
    }

    /// Equivalent network with every batch norm folded into its layer.
    pub fn folded(&self) -> Result<Mlp> {
        let layers = self
            .layers
            .iter()
            .map(|l| match &l.batch_norm {
                Some(bn) => {
                    let (w, b) = fold_batchnorm(&l.weight, &l.bias, bn)?;
                    Layer::new(w, b, l.activation)
                }
                None => Ok(l.clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::new(layers)
    }

    fn width_max(&self) -> usize {
        self.layers.iter().map(Layer::out_dim).max().unwrap_or(0)
    }

    /// Evaluates one input row into `out` (length `out_dim`).
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim());
        let w = self.width_max();
        let mut a = vec![0.0; w];
        let mut b = vec![0.0; w];
        let mut cur: &[f64] = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let n = layer.out_dim();
            if i == last {
                layer.eval_row(cur, out);
                break;
            }
            layer.eval_row(cur, &mut a[..n]);
            std::mem::swap(&mut a, &mut b);
            cur = &b[..n];
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim()];
        self.forward_into(x, &mut out);
        out
    }

    pub fn forward_point(&self, p: Point3) -> Vec<f64> {
        self.forward(&p)
    }

    /// Evaluates every row of `x`; rows are independent and bitwise equal to
    /// [`Self::forward`] on the same input.
    pub fn forward_batch(&self, x: &Matrix) -> Matrix {
        let out_dim = self.out_dim();
        let mut out = Matrix::zeros(x.rows(), out_dim);
        if out_dim == 0 {
            return out;
        }
        let in_dim = x.cols();
        let src = x.as_slice();
        let body = |(i, row): (usize, &mut [f64])| {
            self.forward_into(&src[i * in_dim..(i + 1) * in_dim], row);
        };
        if x.rows() >= PAR_ROWS {
            out.as_mut_slice().par_chunks_mut(out_dim).enumerate().for_each(body);
        } else {
            out.as_mut_slice().chunks_mut(out_dim).enumerate().for_each(body);
        }
        out
    }

    /// Forward pass keeping every layer's input for [`Self::backward`].
    ///
    /// With `train_bn`, batch-normalized layers use the statistics of this
    /// batch instead of the running ones.
    pub fn forward_cached(&self, x: &Matrix, train_bn: bool) -> ForwardCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut bn_cache = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let rows = cur.rows();
            let out_dim = layer.out_dim();
            let mut pre = Matrix::zeros(rows, out_dim);
            let src = &cur;
            let body = |(r, row): (usize, &mut [f64])| layer.affine_row(src.row(r), row);
            if rows >= PAR_ROWS && out_dim > 0 {
                pre.as_mut_slice().par_chunks_mut(out_dim).enumerate().for_each(body);
            } else if out_dim > 0 {
                pre.as_mut_slice().chunks_mut(out_dim).enumerate().for_each(body);
            }
            let mut bc = None;
            if let Some(bn) = &layer.batch_norm {
                if train_bn && rows > 1 {
                    bc = Some(batch_normalize(&mut pre, bn));
                } else {
                    for r in 0..rows {
                        for (c, v) in pre.row_mut(r).iter_mut().enumerate() {
                            *v = bn.gamma[c] * (*v - bn.mean[c]) / (bn.var[c] + bn.eps).sqrt() + bn.beta[c];
                        }
                    }
                }
            }
            activate(layer.activation, pre.as_mut_slice());
            inputs.push(cur);
            bn_cache.push(bc);
            cur = pre;
        }
        ForwardCache {
            inputs,
            bn: bn_cache,
            output: cur,
        }
    }

    /// Back-propagates `upstream` (rows × out_dim) through a cached forward
    /// pass, accumulating parameter gradients into `grads` and returning the
    /// gradient with respect to the inputs. Rows whose upstream is entirely
    /// zero are skipped unless a batch-statistics normalization couples rows.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix, grads: &mut MlpGrads) -> Matrix {
        let mut g = upstream.clone();
        let coupled = cache.bn.iter().any(Option::is_some);
        let active: Vec<bool> = (0..g.rows())
            .map(|r| coupled || g.row(r).iter().any(|v| *v != 0.0))
            .collect();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[li];
            let output = if li + 1 < self.layers.len() {
                &cache.inputs[li + 1]
            } else {
                &cache.output
            };
            let (gw, gb) = &mut grads.layers[li];
            let mut gin = Matrix::zeros(g.rows(), layer.in_dim());
            if layer.activation == Activation::Relu {
                for r in 0..g.rows() {
                    if !active[r] {
                        continue;
                    }
                    for (gv, ov) in g.row_mut(r).iter_mut().zip(output.row(r)) {
                        if *ov <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
            }
            if let Some(bn) = &layer.batch_norm {
                let gbn = &mut grads.bn[li];
                match &cache.bn[li] {
                    Some(bc) => batch_norm_backward(&mut g, bn, bc, gbn),
                    None => {
                        for r in 0..g.rows() {
                            if !active[r] {
                                continue;
                            }
                            for (c, gv) in g.row_mut(r).iter_mut().enumerate() {
                                let s = 1.0 / (bn.var[c] + bn.eps).sqrt();
                                // running statistics: only gamma needs the pre-activation
                                let pre = layer_pre(layer, input.row(r), c);
                                gbn.0[c] += *gv * (pre - bn.mean[c]) * s;
                                gbn.1[c] += *gv;
                                *gv *= bn.gamma[c] * s;
                            }
                        }
                    }
                }
            }
            for r in 0..g.rows() {
                if !active[r] {
                    continue;
                }
                let gr = g.row(r);
                axpy(1.0, gr, gb);
                let xr = input.row(r);
                let gi = gin.row_mut(r);
                for k in 0..layer.in_dim() {
                    let xk = xr[k];
                    if xk != 0.0 {
                        axpy(xk, gr, gw.row_mut(k));
                    }
                    gi[k] = dot(layer.weight.row(k), gr);
                }
            }
            g = gin;
        }
        g
    }

    /// Single-input backward pass: gradients of `upstream · forward(x)` with
    /// respect to all parameters and to `x`.
    pub fn backward_point(&self, x: &[f64], upstream: &[f64]) -> (MlpGrads, Vec<f64>) {
        let input = Matrix::from_vec(1, x.len(), x.to_vec()).expect("finite input");
        let cache = self.forward_cached(&input, false);
        let up = Matrix::from_vec(1, upstream.len(), upstream.to_vec()).expect("finite upstream");
        let mut grads = MlpGrads::zeros_like(self);
        let gin = self.backward(&cache, &up, &mut grads);
        (grads, gin.into_vec())
    }

    /// Gradient of output channel `channel` with respect to the input point,
    /// via one backward pass.
    pub fn channel_gradient(&self, p: Point3, channel: usize) -> [f64; 3] {
        let mut up = vec![0.0; self.out_dim()];
        up[channel] = 1.0;
        let input = Matrix::from_vec(1, 3, p.to_vec()).expect("finite point");
        let cache = self.forward_cached(&input, false);
        let upm = Matrix::from_vec(1, up.len(), up).expect("finite");
        let gin = self.input_gradient(&cache, &upm);
        [gin[(0, 0)], gin[(0, 1)], gin[(0, 2)]]
    }

    /// Like [`Self::backward`] but only propagates to the input.
    pub fn input_gradient(&self, cache: &ForwardCache, upstream: &Matrix) -> Matrix {
        let mut g = upstream.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let output = if li + 1 < self.layers.len() {
                &cache.inputs[li + 1]
            } else {
                &cache.output
            };
            if layer.activation == Activation::Relu {
                for (gv, ov) in g.as_mut_slice().iter_mut().zip(output.as_slice()) {
                    if *ov <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            if let Some(bn) = &layer.batch_norm {
                for r in 0..g.rows() {
                    for (c, gv) in g.row_mut(r).iter_mut().enumerate() {
                        *gv *= bn.gamma[c] / (bn.var[c] + bn.eps).sqrt();
                    }
                }
            }
            let mut gin = Matrix::zeros(g.rows(), layer.in_dim());
            for r in 0..g.rows() {
                let gr = g.row(r);
                let gi = gin.row_mut(r);
                for (k, v) in gi.iter_mut().enumerate() {
                    *v = dot(layer.weight.row(k), gr);
                }
            }
            g = gin;
        }
        g
    }

    /// Every trainable tensor, in a fixed order matching [`MlpGrads::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias.0[..]);
            if let Some(bn) = &mut l.batch_norm {
                out.push(&mut bn.gamma[..]);
                out.push(&mut bn.beta[..]);
            }
        }
        out
    }
}

fn layer_pre(layer: &Layer, x: &[f64], c: usize) -> f64 {
    let mut v = layer.bias[c];
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            v += xk * layer.weight[(k, c)];
        }
    }
    v
}

/// Cached intermediate values of [`Mlp::forward_cached`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    bn: Vec<Option<BnCache>>,
    output: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    /// Batch statistics observed by each batch-normalized layer, if any.
    pub fn batch_stats(&self) -> impl Iterator<Item = Option<(&[f64], &[f64])>> + '_ {
        self.bn
            .iter()
            .map(|b| b.as_ref().map(|c| (&c.mean[..], &c.var[..])))
    }
}

#[derive(Clone, Debug)]
struct BnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

fn batch_normalize(pre: &mut Matrix, bn: &BatchNormParams) -> BnCache {
    let (rows, cols) = (pre.rows(), pre.cols());
    let n = rows as f64;
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        axpy(1.0, pre.row(r), &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; cols];
    for r in 0..rows {
        for (c, v) in pre.row(r).iter().enumerate() {
            var[c] += (v - mean[c]) * (v - mean[c]);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
    let mut xhat = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let h = (pre[(r, c)] - mean[c]) * inv_std[c];
            xhat[(r, c)] = h;
            pre[(r, c)] = bn.gamma[c] * h + bn.beta[c];
        }
    }
    BnCache {
        xhat,
        inv_std,
        mean,
        var,
    }
}

fn batch_norm_backward(g: &mut Matrix, bn: &BatchNormParams, bc: &BnCache, grads: &mut (Vec<f64>, Vec<f64>)) {
    let (rows, cols) = (g.rows(), g.cols());
    let n = rows as f64;
    let mut sum_g = vec![0.0; cols];
    let mut sum_gx = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            sum_g[c] += g[(r, c)];
            sum_gx[c] += g[(r, c)] * bc.xhat[(r, c)];
        }
    }
    for c in 0..cols {
        grads.0[c] += sum_gx[c];
        grads.1[c] += sum_g[c];
    }
    for r in 0..rows {
        for c in 0..cols {
            let dxhat = g[(r, c)] * bn.gamma[c];
            let dsum = bn.gamma[c] * sum_g[c];
            let dsumx = bn.gamma[c] * sum_gx[c];
            g[(r, c)] = bc.inv_std[c] / n * (n * dxhat - dsum - bc.xhat[(r, c)] * dsumx);
        }
    }
}

/// Parameter gradients shaped like an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    /// `(weight, bias)` per layer.
    pub layers: Vec<(Matrix, Vec<f64>)>,
    /// `(gamma, beta)` per layer; empty vectors for layers without batch norm.
    pub bn: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| (Matrix::zeros(l.in_dim(), l.out_dim()), vec![0.0; l.out_dim()]))
                .collect(),
            bn: mlp
                .layers
                .iter()
                .map(|l| match &l.batch_norm {
                    Some(bn) => (vec![0.0; bn.channels()], vec![0.0; bn.channels()]),
                    None => (Vec::new(), Vec::new()),
                })
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for (w, b) in &mut self.layers {
            w.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
            b.iter_mut().for_each(|v| *v = 0.0);
        }
        for (g, b) in &mut self.bn {
            g.iter_mut().for_each(|v| *v = 0.0);
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Tensors in the order of [`Mlp::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for ((w, b), (gg, gb)) in self.layers.iter().zip(&self.bn) {
            out.push(w.as_slice());
            out.push(&b[..]);
            if !gg.is_empty() {
                out.push(&gg[..]);
                out.push(&gb[..]);
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0))
    }
}

/// Evaluates `mlp` at every node of `lattice` into an `f32` table. Batch
/// norms are folded first.
pub fn tabulate(mlp: &Mlp, lattice: &Lattice3) -> Result<Lut> {
    if mlp.in_dim() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "tabulation needs a 3-input network, got {} inputs",
            mlp.in_dim()
        )));
    }
    let folded;
    let net = if mlp.has_batch_norm() {
        folded = mlp.folded()?;
        &folded
    } else {
        mlp
    };
    let nodes = node_matrix(lattice);
    let out = net.forward_batch(&nodes);
    Lut::new(*lattice, net.out_dim(), out.as_slice().iter().map(|&v| v as f32).collect())
}

/// `D³ × 3` matrix of node positions in flat-index order.
pub fn node_matrix(lattice: &Lattice3) -> Matrix {
    let mut data = Vec::with_capacity(lattice.node_count() * 3);
    for n in 0..lattice.node_count() {
        data.extend_from_slice(&lattice.node_position(n));
    }
    Matrix::from_vec(lattice.node_count(), 3, data).expect("finite lattice")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(dims: &[usize], last: Activation, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mlp::he_uniform(dims, last, &mut rng).unwrap();
        // non-zero biases so bias gradients are exercised
        for l in m.layers_mut() {
            for b in l.bias.iter_mut() {
                *b = rng.gen_range(-0.2..0.2);
            }
        }
        m
    }

    /// Straight-line re-implementation used as an oracle.
    fn naive_forward(m: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in m.layers() {
            let mut next = vec![0.0; l.out_dim()];
            for o in 0..l.out_dim() {
                let mut s = l.bias[o];
                for i in 0..l.in_dim() {
                    s += cur[i] * l.weight[(i, o)];
                }
                next[o] = match l.activation {
                    Activation::Relu => s.max(0.0),
                    Activation::None => s,
                };
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn identity_layer_passes_point_through() {
        let mut w = Matrix::zeros(3, 5);
        for i in 0..3 {
            w[(i, i)] = 1.0;
        }
        let m = Mlp::new(vec![Layer::new(w, Vector::zeros(5), Activation::None).unwrap()]).unwrap();
        assert_eq!(m.forward_point([0.5, -2.0, 3.0]), vec![0.5, -2.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_clips_negative_preactivations() {
        let w = Matrix::from_rows(&[[-1.0, -2.0], [-1.0, -1.0], [-3.0, -1.0]]).unwrap();
        let m = Mlp::new(vec![Layer::new(w, Vector(vec![-0.1, -0.1]), Activation::Relu).unwrap()]).unwrap();
        assert_eq!(m.forward_point([1.0, 1.0, 1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn matches_naive_oracle() {
        let m = net(&[3, 16, 8], Activation::None, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let a = m.forward_point(p);
            let b = naive_forward(&m, &p);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-14 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn batch_rows_equal_single_forward() {
        let m = net(&[3, 32, 32, 16], Activation::Relu, 3);
        let lattice = Lattice3::unit(9).unwrap();
        let nodes = node_matrix(&lattice);
        let batch = m.forward_batch(&nodes);
        for n in 0..nodes.rows() {
            let single = m.forward(nodes.row(n));
            assert!(single.iter().zip(batch.row(n)).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = net(&[3, 8, 4], Activation::Relu, 4);
        let (g, gin) = m.backward_point(&[0.2, 0.3, -0.4], &[0.0; 4]);
        assert!(g.is_zero());
        assert!(gin.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let m = net(&[3, 2], Activation::None, 5);
        let x = [0.5, -1.0, 2.0];
        let up = [3.0, -0.5];
        let (g, _) = m.backward_point(&x, &up);
        for i in 0..3 {
            for o in 0..2 {
                assert_eq!(g.layers[0].0[(i, o)], x[i] * up[o]);
            }
        }
        assert_eq!(g.layers[0].1, up.to_vec());
    }

    fn objective(m: &Mlp, x: &[f64], up: &[f64]) -> f64 {
        dot(&m.forward(x), up)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = net(&[3, 12, 10, 5], Activation::Relu, 6);
        let x = [0.31, -0.27, 0.44];
        let up = [0.3, -1.1, 0.7, 0.25, -0.4];
        let (g, gin) = m.backward_point(&x, &up);
        let h = 1e-6;
        let check = |an: f64, fd: f64| {
            assert!((an - fd).abs() <= 1e-5 * an.abs().max(fd.abs()).max(1e-6), "{an} vs {fd}");
        };
        for li in 0..m.layers().len() {
            let (rows, cols) = (m.layers()[li].in_dim(), m.layers()[li].out_dim());
            for i in 0..rows {
                for o in 0..cols {
                    let mut mp = m.clone();
                    mp.layers_mut()[li].weight[(i, o)] += h;
                    let mut mm = m.clone();
                    mm.layers_mut()[li].weight[(i, o)] -= h;
                    let fd = (objective(&mp, &x, &up) - objective(&mm, &x, &up)) / (2.0 * h);
                    check(g.layers[li].0[(i, o)], fd);
                }
            }
            for o in 0..cols {
                let mut mp = m.clone();
                mp.layers_mut()[li].bias[o] += h;
                let mut mm = m.clone();
                mm.layers_mut()[li].bias[o] -= h;
                let fd = (objective(&mp, &x, &up) - objective(&mm, &x, &up)) / (2.0 * h);
                check(g.layers[li].1[o], fd);
            }
        }
        for a in 0..3 {
            let (mut xp, mut xm) = (x, x);
            xp[a] += h;
            xm[a] -= h;
            let fd = (objective(&m, &xp, &up) - objective(&m, &xm, &up)) / (2.0 * h);
            check(gin[a], fd);
        }
    }

    #[test]
    fn channel_gradient_matches_backward() {
        let m = net(&[3, 10, 6], Activation::Relu, 7);
        let p = [0.1, 0.2, -0.3];
        for ch in 0..6 {
            let mut up = vec![0.0; 6];
            up[ch] = 1.0;
            let (_, gin) = m.backward_point(&p, &up);
            let g = m.channel_gradient(p, ch);
            for a in 0..3 {
                assert!((g[a] - gin[a]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fold_identity_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Matrix::from_vec(3, 2, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = vec![0.3, -0.2];
        let mut bn = BatchNormParams::identity(2);
        bn.var = vec![1.0 - bn.eps; 2];
        let (w1, b1) = fold_batchnorm(&w, &b, &bn).unwrap();
        assert_eq!(w1, w);
        assert_eq!(b1.0, b);
        bn.gamma = vec![2.0; 2];
        let (w2, b2) = fold_batchnorm(&w, &b, &bn).unwrap();
        for (x, y) in w2.as_slice().iter().zip(w.as_slice()) {
            assert_eq!(*x, 2.0 * y);
        }
        assert_eq!(b2.0, vec![0.6, -0.4]);
    }

    #[test]
    fn fold_rejects_non_positive_variance() {
        let mut bn = BatchNormParams::identity(1);
        bn.var = vec![-1.0];
        assert!(fold_batchnorm(&Matrix::zeros(1, 1), &[0.0], &bn).is_err());
    }

    #[test]
    fn folded_network_preserves_outputs() {
        let mut m = net(&[3, 16, 16, 8], Activation::Relu, 9);
        m.enable_batch_norm();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for l in m.layers_mut() {
            if let Some(bn) = &mut l.batch_norm {
                for c in 0..bn.channels() {
                    bn.gamma[c] = rng.gen_range(0.5..2.0);
                    bn.beta[c] = rng.gen_range(-0.5..0.5);
                    bn.mean[c] = rng.gen_range(-0.5..0.5);
                    bn.var[c] = rng.gen_range(0.1..3.0);
                }
            }
        }
        let f = m.folded().unwrap();
        assert!(!f.has_batch_norm());
        for _ in 0..100 {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let a = m.forward_point(p);
            let b = f.forward_point(p);
            let scale = a.iter().fold(1.0f64, |s, v| s.max(v.abs()));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn batch_norm_training_gradients() {
        let mut m = net(&[3, 6, 4], Activation::None, 11);
        m.enable_batch_norm();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Matrix::from_vec(5, 3, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let up = Matrix::from_vec(5, 4, (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let obj = |m: &Mlp| -> f64 {
            let c = m.forward_cached(&x, true);
            dot(c.output().as_slice(), up.as_slice())
        };
        let cache = m.forward_cached(&x, true);
        let mut g = MlpGrads::zeros_like(&m);
        m.backward(&cache, &up, &mut g);
        let h = 1e-6;
        for i in 0..3 {
            for o in 0..6 {
                let mut mp = m.clone();
                mp.layers_mut()[0].weight[(i, o)] += h;
                let mut mm = m.clone();
                mm.layers_mut()[0].weight[(i, o)] -= h;
                let fd = (obj(&mp) - obj(&mm)) / (2.0 * h);
                let an = g.layers[0].0[(i, o)];
                assert!((an - fd).abs() <= 1e-5 * an.abs().max(1e-4), "{an} vs {fd}");
            }
        }
        for c in 0..6 {
            let mut mp = m.clone();
            mp.layers_mut()[0].batch_norm.as_mut().unwrap().gamma[c] += h;
            let mut mm = m.clone();
            mm.layers_mut()[0].batch_norm.as_mut().unwrap().gamma[c] -= h;
            let fd = (obj(&mp) - obj(&mm)) / (2.0 * h);
            let an = g.bn[0].0[c];
            assert!((an - fd).abs() <= 1e-5 * an.abs().max(1e-4), "{an} vs {fd}");
        }
    }

    #[test]
    fn tabulate_constant_network() {
        let w = Matrix::zeros(3, 2);
        let m = Mlp::new(vec![Layer::new(w, Vector(vec![0.5, -1.5]), Activation::None).unwrap()]).unwrap();
        let lut = tabulate(&m, &Lattice3::unit(3).unwrap()).unwrap();
        for n in 0..27 {
            assert_eq!(lut.node(n), &[0.5f32, -1.5]);
        }
    }

    #[test]
    fn tabulate_two_node_lattice_holds_cube_corners() {
        let m = net(&[3, 8, 4], Activation::Relu, 13);
        let lattice = Lattice3::unit(2).unwrap();
        let lut = tabulate(&m, &lattice).unwrap();
        assert_eq!(lut.data().len(), 8 * 4);
        for ix in 0..2 {
            for iy in 0..2 {
                for iz in 0..2 {
                    let p = [2.0 * ix as f64 - 1.0, 2.0 * iy as f64 - 1.0, 2.0 * iz as f64 - 1.0];
                    let expect: Vec<f32> = m.forward_point(p).iter().map(|&v| v as f32).collect();
                    assert_eq!(lut.node(lattice.flat_index(ix, iy, iz)), &expect[..]);
                }
            }
        }
    }

    #[test]
    fn tabulate_is_deterministic() {
        let m = net(&[3, 16, 8], Activation::Relu, 14);
        let lattice = Lattice3::unit(12).unwrap();
        let a = tabulate(&m, &lattice).unwrap();
        let b = tabulate(&m, &lattice).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn tabulate_requires_point_input() {
        let m = net(&[4, 3], Activation::None, 15);
        assert!(tabulate(&m, &Lattice3::unit(3).unwrap()).is_err());
    }
}
