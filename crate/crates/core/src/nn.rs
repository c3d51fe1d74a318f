//! Dense multilayer perceptron with explicit forward and backward passes.
//!
//! Layer weights are row-major `(out_dim, in_dim)`. Batched values are
//! [`Matrix`] values with one sample per row. Everything is `f64`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Copy of the rows at `indices`, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stack `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "cannot stack {} and {} columns",
                self.cols, other.cols
            )));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Activation {
    Relu,
    Identity,
}

/// Weights and bias of one dense layer.
///
/// The same type carries gradients, which always mirror the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerParams {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LayerParams {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "layer dims must be positive, got {in_dim}->{out_dim}"
            )));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::ShapeMismatch(format!(
                "{in_dim}->{out_dim} layer given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform Glorot initialisation with zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / (in_dim + out_dim) as f64);
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let weights = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Number of real-valued parameters.
    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &LayerParams) -> bool {
        self.in_dim == other.in_dim && self.out_dim == other.out_dim
    }

    /// Weights then bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    /// Flattened copy, weights then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    /// Inverse of [`LayerParams::to_flat`].
    pub fn from_flat(in_dim: usize, out_dim: usize, flat: &[f64]) -> Result<Self> {
        let nw = in_dim * out_dim;
        if flat.len() != nw + out_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {in_dim}->{out_dim} layer",
                flat.len()
            )));
        }
        Self::new(in_dim, out_dim, flat[..nw].to_vec(), flat[nw..].to_vec())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weights: self.weights.iter().map(|&w| f(w)).collect(),
            bias: self.bias.iter().map(|&b| f(b)).collect(),
        }
    }

    /// Element-wise combination with a flat per-parameter slice of the same length.
    pub fn zip_flat(&self, flat: &[f64], mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        if flat.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a layer with {} parameters",
                flat.len(),
                self.len()
            )));
        }
        let (fw, fb) = flat.split_at(self.weights.len());
        Ok(Self {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weights: self.weights.iter().zip(fw).map(|(&a, &b)| f(a, b)).collect(),
            bias: self.bias.iter().zip(fb).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// `inputs · Wᵀ + b`, no activation.
    pub fn affine(&self, inputs: &Matrix) -> Matrix {
        debug_assert_eq!(inputs.cols(), self.in_dim);
        let mut out = Matrix::zeros(inputs.rows(), self.out_dim);
        for b in 0..inputs.rows() {
            let x = inputs.row(b);
            let y = out.row_mut(b);
            for (o, yo) in y.iter_mut().enumerate() {
                let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.bias[o];
                for (wi, xi) in w.iter().zip(x) {
                    acc += wi * xi;
                }
                *yo = acc;
            }
        }
        out
    }

    /// Backprop through the affine map given the layer input and `d_out`.
    /// Returns the parameter gradient and the gradient w.r.t. the input.
    pub(crate) fn affine_backward(&self, input: &Matrix, d_out: &Matrix) -> (LayerParams, Matrix) {
        let mut grad = LayerParams::zeros(self.in_dim, self.out_dim);
        let mut d_in = Matrix::zeros(input.rows(), self.in_dim);
        for b in 0..input.rows() {
            let x = input.row(b);
            let dy = d_out.row(b);
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let gw = &mut grad.weights[o * self.in_dim..(o + 1) * self.in_dim];
                for (gwi, xi) in gw.iter_mut().zip(x) {
                    *gwi += g * xi;
                }
                let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                for (di, wi) in d_in.row_mut(b).iter_mut().zip(w) {
                    *di += g * wi;
                }
            }
        }
        (grad, d_in)
    }
}

/// Per-layer gradients, shape-congruent with a list of [`LayerParams`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradientSet {
    layers: Vec<LayerParams>,
}

impl GradientSet {
    pub fn new(layers: Vec<LayerParams>) -> Self {
        Self { layers }
    }

    pub fn zeros_like(params: &[LayerParams]) -> Self {
        Self {
            layers: params
                .iter()
                .map(|p| LayerParams::zeros(p.in_dim, p.out_dim))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<LayerParams> {
        self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    pub fn check_congruent(&self, params: &[LayerParams]) -> Result<()> {
        if self.layers.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradient layers for {} parameter layers",
                self.layers.len(),
                params.len()
            )));
        }
        for (i, (g, p)) in self.layers.iter().zip(params).enumerate() {
            if !g.same_shape(p) {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: gradient {}->{} vs parameters {}->{}",
                    g.in_dim, g.out_dim, p.in_dim, p.out_dim
                )));
            }
        }
        Ok(())
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        other.check_congruent(&self.layers)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            for v in l.iter_mut() {
                *v *= c;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(LayerParams::is_finite)
    }
}

/// A gradient rewrite applied inside [`sgd_step`] just before the update.
pub trait GradientTransform {
    fn transform(&self, grads: GradientSet) -> Result<GradientSet>;
}

/// Leaves gradients untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTransform;

impl GradientTransform for IdentityTransform {
    fn transform(&self, grads: GradientSet) -> Result<GradientSet> {
        Ok(grads)
    }
}

impl<F> GradientTransform for F
where
    F: Fn(GradientSet) -> GradientSet,
{
    fn transform(&self, grads: GradientSet) -> Result<GradientSet> {
        Ok(self(grads))
    }
}

/// `θ ← θ − lr · transform(g)`.
pub fn sgd_step<T: GradientTransform + ?Sized>(
    params: &mut [LayerParams],
    grads: GradientSet,
    lr: f64,
    transform: &T,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    grads.check_congruent(params)?;
    let grads = transform.transform(grads)?;
    grads.check_congruent(params)?;
    for (p, g) in params.iter_mut().zip(grads.layers()) {
        for (x, d) in p.iter_mut().zip(g.iter()) {
            *x -= lr * d;
        }
    }
    Ok(())
}

/// Inputs with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != inputs.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} inputs",
                    l.len(),
                    inputs.rows()
                )));
            }
        }
        Ok(Self { inputs, labels })
    }

    pub fn unlabeled(inputs: Matrix) -> Self {
        Self {
            inputs,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    /// Sum over classes, mean over the batch.
    LogitSum,
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|&z| libm::exp(z - m)).sum();
    let lse = m + libm::log(s);
    for (o, &z) in out.iter_mut().zip(row) {
        *o = z - lse;
    }
}

fn check_labels(labels: &[usize], logits: &Matrix) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} rows of logits",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: logits.cols(),
        });
    }
    Ok(())
}

/// Mean softmax cross-entropy.
pub fn loss_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    cross_entropy_with_grad(logits, labels).map(|(l, _)| l)
}

fn cross_entropy_with_grad(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    check_labels(labels, logits)?;
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let g = grad.row_mut(b);
        log_softmax_row(logits.row(b), g);
        total -= g[y];
        for v in g.iter_mut() {
            *v = libm::exp(*v) / n;
        }
        g[y] -= 1.0 / n;
    }
    Ok((total / n, grad))
}

/// Sum over classes, mean over batch. Zero for an empty batch.
pub fn loss_logit_sum(logits: &Matrix) -> f64 {
    if logits.rows() == 0 {
        return 0.0;
    }
    logits.as_slice().iter().sum::<f64>() / logits.rows() as f64
}

/// Loss value and its gradient with respect to the logits.
pub fn loss_and_grad(kind: LossKind, logits: &Matrix, labels: Option<&[usize]>) -> Result<(f64, Matrix)> {
    match kind {
        LossKind::CrossEntropy => {
            let labels = labels.ok_or(Error::MissingLabels)?;
            cross_entropy_with_grad(logits, labels)
        }
        LossKind::LogitSum => {
            if logits.rows() == 0 {
                return Err(Error::EmptyBatch);
            }
            let g = 1.0 / logits.rows() as f64;
            let grad = Matrix::new(logits.rows(), logits.cols(), vec![g; logits.rows() * logits.cols()])?;
            Ok((loss_logit_sum(logits), grad))
        }
    }
}

/// Ordered dense layers, each with its own activation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Network {
    layers: Vec<LayerParams>,
    activations: Vec<Activation>,
}

/// Activations recorded by [`Network::forward_trace`]; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Matrix>,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("trace holds at least the input")
    }
}

impl Network {
    pub fn from_layers(layers: Vec<LayerParams>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        if layers.len() != activations.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} layers but {} activations",
                layers.len(),
                activations.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::DimensionMismatch {
                    layer: i + 1,
                    expected: pair[1].in_dim(),
                    actual: pair[0].out_dim(),
                });
            }
        }
        Ok(Self { layers, activations })
    }

    /// Freshly initialised network over `dims = [in, h1, ..., out]` using `act`
    /// for every layer.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], act: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| LayerParams::init(w[0], w[1], rng))
            .collect::<Vec<_>>();
        let activations = vec![act; layers.len()];
        Self::from_layers(layers, activations)
    }

    /// ReLU hidden layers and an identity output layer. Needs at least one
    /// hidden layer.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 3 {
            return Err(Error::InvalidArgument(
                "an MLP needs at least one hidden layer".into(),
            ));
        }
        let mut net = Self::init(dims, Activation::Relu, rng)?;
        *net.activations.last_mut().expect("non-empty") = Activation::Identity;
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut x = self.check_input(inputs)?;
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            x = apply(layer.affine(&x), *act);
        }
        Ok(x)
    }

    pub fn forward_trace(&self, inputs: &Matrix) -> Result<Trace> {
        let x = self.check_input(inputs)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let y = apply(layer.affine(acts.last().expect("non-empty")), *act);
            acts.push(y);
        }
        Ok(Trace { acts })
    }

    /// Backprop `d_output` (gradient w.r.t. the network output) through a
    /// recorded trace. Returns parameter gradients and the input gradient.
    pub fn backward_from(&self, trace: &Trace, d_output: Matrix) -> Result<(GradientSet, Matrix)> {
        let out = trace.output();
        if d_output.rows() != out.rows() || d_output.cols() != out.cols() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {}x{} for output {}x{}",
                d_output.rows(),
                d_output.cols(),
                out.rows(),
                out.cols()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_output;
        for l in (0..self.layers.len()).rev() {
            if self.activations[l] == Activation::Relu {
                let y = &trace.acts[l + 1];
                for (d, &v) in delta.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let (g, d_in) = self.layers[l].affine_backward(&trace.acts[l], &delta);
            grads.push(g);
            delta = d_in;
        }
        grads.reverse();
        Ok((GradientSet::new(grads), delta))
    }

    fn check_input(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.input_dim(),
                actual: inputs.cols(),
            });
        }
        Ok(inputs.clone())
    }
}

fn apply(mut m: Matrix, act: Activation) -> Matrix {
    if act == Activation::Relu {
        for v in m.as_mut_slice() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    m
}

/// Forward, loss and full backward pass for a standalone network.
pub fn backward(network: &Network, batch: &Batch, kind: LossKind) -> Result<(f64, GradientSet)> {
    if kind == LossKind::CrossEntropy && batch.labels.is_none() {
        return Err(Error::MissingLabels);
    }
    let trace = network.forward_trace(&batch.inputs)?;
    let (loss, d_out) = loss_and_grad(kind, trace.output(), batch.labels.as_deref())?;
    let (grads, _) = network.backward_from(&trace, d_out)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive, Purpose};
    use std::vec;

    fn net(dims: &[usize], seed: u64) -> Network {
        let mut rng = derive(seed, Purpose::ExtractorInit, 0);
        Network::mlp(dims, &mut rng).unwrap()
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let layers = vec![LayerParams::zeros(3, 4), LayerParams::zeros(4, 2)];
        let n = Network::from_layers(layers, vec![Activation::Relu, Activation::Identity]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap();
        assert!(n.forward(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let w = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let l = LayerParams::new(3, 3, w, vec![0.0; 3]).unwrap();
        let n = Network::from_layers(vec![l], vec![Activation::Identity]).unwrap();
        let x = Matrix::from_rows(&[vec![1.5, -2.0, 0.25]]).unwrap();
        assert_eq!(n.forward(&x).unwrap(), x);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let n = net(&[4, 3, 2], 0);
        let x = Matrix::zeros(2, 5);
        assert_eq!(
            n.forward(&x),
            Err(Error::DimensionMismatch {
                layer: 0,
                expected: 4,
                actual: 5
            })
        );
    }

    #[test]
    fn mismatched_layer_chain_names_layer() {
        let layers = vec![LayerParams::zeros(3, 4), LayerParams::zeros(5, 2)];
        let err = Network::from_layers(layers, vec![Activation::Relu, Activation::Identity]).unwrap_err();
        assert_eq!(
            err,
            Error::DimensionMismatch {
                layer: 1,
                expected: 5,
                actual: 4
            }
        );
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_classes() {
        let logits = Matrix::from_rows(&[vec![0.3; 4], vec![-1.0; 4]]).unwrap();
        let l = loss_cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((l - libm::log(4.0)).abs() < 1e-15);
        assert!((l - 1.386_294_4).abs() < 1e-7);
    }

    #[test]
    fn cross_entropy_shrinks_with_margin() {
        let at = |m: f64| loss_cross_entropy(&Matrix::from_rows(&[vec![m, 0.0, 0.0]]).unwrap(), &[0]).unwrap();
        assert!(at(10.0) < at(5.0));
        assert!(at(5.0) > 0.0 && at(10.0) < 1e-4);
    }

    #[test]
    fn cross_entropy_known_value() {
        // -ln(e^3 / (e + e^2 + e^3)) = ln(1 + e^-1 + e^-2), evaluated to 20 digits.
        let expected = 0.407_605_964_444_38_f64;
        let l = loss_cross_entropy(&Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap(), &[2]).unwrap();
        assert!((l - expected).abs() < 1e-15, "{l}");
    }

    #[test]
    fn cross_entropy_errors() {
        assert_eq!(loss_cross_entropy(&Matrix::zeros(0, 3), &[]), Err(Error::EmptyBatch));
        assert_eq!(
            loss_cross_entropy(&Matrix::zeros(1, 3), &[3]),
            Err(Error::LabelOutOfRange {
                label: 3,
                num_classes: 3
            })
        );
    }

    #[test]
    fn logit_sum_values() {
        assert_eq!(loss_logit_sum(&Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap()), -1.0);
        assert_eq!(loss_logit_sum(&Matrix::zeros(3, 4)), 0.0);
        assert_eq!(loss_logit_sum(&Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap()), 3.0);
    }

    #[test]
    fn backward_requires_labels_for_cross_entropy() {
        let n = net(&[2, 3, 2], 1);
        let b = Batch::unlabeled(Matrix::zeros(1, 2));
        assert_eq!(backward(&n, &b, LossKind::CrossEntropy), Err(Error::MissingLabels));
    }

    #[test]
    fn zero_input_bias_only_gradient() {
        // Zero hidden weights, positive hidden bias: zero input kills the
        // first-layer weight gradient and the output bias gradient is
        // softmax(logits) - onehot.
        let l1 = LayerParams::new(2, 2, vec![0.0; 4], vec![0.5, 1.0]).unwrap();
        let l2 = LayerParams::new(2, 3, vec![0.1, 0.2, -0.3, 0.4, 0.0, 0.1], vec![0.2, -0.1, 0.3]).unwrap();
        let n = Network::from_layers(vec![l1, l2], vec![Activation::Relu, Activation::Identity]).unwrap();
        let b = Batch::new(Matrix::zeros(1, 2), Some(vec![1])).unwrap();
        let (_, g) = backward(&n, &b, LossKind::CrossEntropy).unwrap();
        assert!(g.layers()[0].weights().iter().all(|&v| v == 0.0));
        let logits = n.forward(&b.inputs).unwrap();
        let row = logits.row(0);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        for (k, &gb) in g.layers()[1].bias().iter().enumerate() {
            let expect = row[k].exp() / z - if k == 1 { 1.0 } else { 0.0 };
            assert!((gb - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn logit_sum_linear_gradient_is_mean_outer_product() {
        let l = LayerParams::new(3, 2, vec![0.3, -0.2, 0.1, 0.5, 0.4, -0.6], vec![0.0, 0.1]).unwrap();
        let n = Network::from_layers(vec![l], vec![Activation::Identity]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 5.0]]).unwrap();
        let (_, g) = backward(&n, &Batch::unlabeled(x), LossKind::LogitSum).unwrap();
        // d/dW_oi of mean_b sum_o (W x_b)_o = mean_b x_bi for every o.
        let expect = [0.0, 1.0, 4.0];
        for o in 0..2 {
            for (i, e) in expect.iter().enumerate() {
                assert!((g.layers()[0].weights()[o * 3 + i] - e).abs() < 1e-15);
            }
        }
        assert_eq!(g.layers()[0].bias(), &[1.0, 1.0]);
    }

    #[test]
    fn sgd_step_formula_and_masks() {
        let mut p = vec![LayerParams::new(1, 1, vec![1.0], vec![1.0]).unwrap()];
        let g = GradientSet::new(vec![LayerParams::new(1, 1, vec![2.0], vec![2.0]).unwrap()]);
        let halve = |mut g: GradientSet| {
            g.scale(0.5);
            g
        };
        sgd_step(&mut p, g.clone(), 0.1, &halve).unwrap();
        assert!((p[0].weights()[0] - 0.9).abs() < 1e-15);

        let before = p.clone();
        let zero = |mut g: GradientSet| {
            g.scale(0.0);
            g
        };
        sgd_step(&mut p, g.clone(), 0.1, &zero).unwrap();
        assert_eq!(p, before);

        sgd_step(&mut p, GradientSet::zeros_like(&before), 0.1, &IdentityTransform).unwrap();
        assert_eq!(p, before);

        assert!(sgd_step(&mut p, g.clone(), 0.0, &IdentityTransform).is_err());
        let wrong = GradientSet::new(vec![LayerParams::zeros(2, 1)]);
        assert!(matches!(
            sgd_step(&mut p, wrong, 0.1, &IdentityTransform),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn sgd_reduces_convex_loss() {
        let mut rng = derive(3, Purpose::ExtractorInit, 0);
        let mut n = Network::init(&[4, 3], Activation::Identity, &mut rng).unwrap();
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.5, -1.0],
            vec![0.0, 1.0, -0.5, 2.0],
            vec![0.3, 0.3, 0.3, 0.3],
        ])
        .unwrap();
        let b = Batch::new(x, Some(vec![0, 1, 2])).unwrap();
        let (l0, g) = backward(&n, &b, LossKind::CrossEntropy).unwrap();
        sgd_step(n.layers_mut(), g, 1e-3, &IdentityTransform).unwrap();
        let (l1, _) = backward(&n, &b, LossKind::CrossEntropy).unwrap();
        assert!(l1 < l0);
    }

    #[test]
    fn flat_round_trip() {
        let l = LayerParams::init(3, 2, &mut derive(0, Purpose::HeadInit, 0));
        let back = LayerParams::from_flat(3, 2, &l.to_flat()).unwrap();
        assert_eq!(l, back);
    }

    #[test]
    fn glorot_bounds() {
        let l = LayerParams::init(10, 6, &mut derive(9, Purpose::HeadInit, 0));
        let lim = (6.0f64 / 16.0).sqrt();
        assert!(l.weights().iter().all(|w| w.abs() <= lim));
        assert!(l.bias().iter().all(|&b| b == 0.0));
    }
}
