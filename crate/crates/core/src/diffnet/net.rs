use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use super::batch::Batch;
use super::config::{Activation, LayerShape, NetConfig};
use super::loss::{self, Loss};
use crate::error::{Error, Result};
use crate::seed;

/// Weight matrix and bias of one layer. Dense weights are `outputs x inputs`;
/// convolution weights are `filters x (kernel * kernel * channels)` with the
/// patch flattened as `(dy, dx, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Gradients, laid out exactly like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight * scale;
            a.bias += &b.bias * scale;
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.norm_squared() + l.bias.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Flat blocks in checkpoint order: weight then bias per layer.
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }
}

/// Logits (`B x C`) and penultimate features (`B x n`) for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: DMatrix<f64>,
    pub features: DMatrix<f64>,
}

impl Forward {
    pub fn predictions(&self) -> Vec<usize> {
        self.logits
            .row_iter()
            .map(|r| loss::argmax(r.iter().copied()))
            .collect()
    }
}

/// Intermediate values kept for the backward pass. Everything is stored
/// column-per-sample.
struct Trace {
    /// Input to each layer.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<DMatrix<f64>>,
    /// im2col matrix of the convolution layer, if any.
    patches: Option<DMatrix<f64>>,
    logits: DMatrix<f64>,
}

/// Small feed-forward classifier with exact reverse-mode gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffNet {
    config: NetConfig,
    shapes: Vec<LayerShape>,
    layers: Vec<LayerParams>,
}

impl DiffNet {
    /// Initializes every weight and bias uniformly in `±1/sqrt(fan_in)` from the config seed.
    pub fn build(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        let mut rng = seed::rng(config.seed);
        let layers = shapes
            .iter()
            .map(|shape| {
                let (rows, cols) = shape.weight_shape();
                let bound = 1.0 / (shape.fan_in() as f64).sqrt();
                let weight = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound));
                let bias = DVector::from_fn(rows, |_, _| rng.random_range(-bound..=bound));
                LayerParams { weight, bias }
            })
            .collect();
        Ok(Self { config, shapes, layers })
    }

    /// Rebuilds a network from explicit parameters, checking every shape.
    pub fn from_params(config: NetConfig, layers: Vec<LayerParams>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::input(format!(
                "expected {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, (shape, layer)) in shapes.iter().zip(&layers).enumerate() {
            if layer.weight.shape() != shape.weight_shape() || layer.bias.len() != shape.bias_len() {
                return Err(Error::input(format!(
                    "layer {i}: expected weight {:?} and bias {}, got {:?} and {}",
                    shape.weight_shape(),
                    shape.bias_len(),
                    layer.weight.shape(),
                    layer.bias.len()
                )));
            }
        }
        Ok(Self { config, shapes, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn input_len(&self) -> usize {
        self.config.input.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.shapes.last().map(LayerShape::in_len).unwrap_or(0)
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// Flat parameter blocks: weight then bias per layer. Weights are column-major.
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    /// Rounds every parameter to the nearest `f32`, the precision of checkpoints.
    pub fn round_to_f32(&mut self) {
        for block in self.blocks_mut() {
            for v in block.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    fn check_inputs(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_len() {
            return Err(Error::input(format!(
                "input width {} does not match network input {}",
                x.ncols(),
                self.input_len()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::input("empty batch"));
        }
        Ok(())
    }

    fn activate(&self, m: &mut DMatrix<f64>) {
        if self.config.activation == Activation::Relu {
            m.apply(|v| *v = v.max(0.0));
        }
    }

    /// Forward pass over column-per-sample inputs (`D x B`).
    fn trace(&self, xt: DMatrix<f64>) -> Trace {
        let hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(hidden);
        let mut patches = None;
        let mut current = xt;
        for (i, (shape, params)) in self.shapes.iter().zip(&self.layers).enumerate() {
            let mut z = match *shape {
                LayerShape::Dense { .. } => &params.weight * &current,
                LayerShape::Conv { input, kernel, .. } => {
                    let cols = im2col(&current, input.height, input.width, input.channels, kernel);
                    let out = &params.weight * &cols;
                    patches = Some(cols);
                    // filters x (positions * B) has the same storage as (positions * filters) x B
                    let batch = current.ncols();
                    let len = shape.out_len();
                    DMatrix::from_vec(len, batch, out.data.into())
                }
            };
            match *shape {
                LayerShape::Dense { .. } => {
                    for mut col in z.column_iter_mut() {
                        col += &params.bias;
                    }
                }
                LayerShape::Conv { filters, .. } => {
                    for (k, v) in z.as_mut_slice().iter_mut().enumerate() {
                        *v += params.bias[k % filters];
                    }
                }
            }
            inputs.push(current);
            if i == hidden {
                return Trace {
                    inputs,
                    pre,
                    patches,
                    logits: z,
                };
            }
            let mut a = z.clone();
            self.activate(&mut a);
            pre.push(z);
            current = a;
        }
        unreachable!("network always has a classifier layer")
    }

    /// Backpropagates `dlogits` (`C x B`) through a recorded trace.
    fn backprop(&self, trace: &Trace, dlogits: DMatrix<f64>, want_input: bool) -> (Gradients, Option<DMatrix<f64>>) {
        let mut grads: Vec<LayerParams> = Vec::with_capacity(self.layers.len());
        let mut delta = dlogits;
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                // delta is d/d(activation); move to d/d(pre-activation)
                if self.config.activation == Activation::Relu {
                    delta.zip_apply(&trace.pre[i], |d, z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
                }
            }
            let params = &self.layers[i];
            let input = &trace.inputs[i];
            let need_delta_in = i > 0 || want_input;
            match self.shapes[i] {
                LayerShape::Dense { .. } => {
                    let dw = &delta * input.transpose();
                    let db = delta.column_sum();
                    let next = need_delta_in.then(|| params.weight.tr_mul(&delta));
                    grads.push(LayerParams { weight: dw, bias: db });
                    if let Some(next) = next {
                        delta = next;
                    }
                }
                LayerShape::Conv {
                    input: dims,
                    filters,
                    kernel,
                } => {
                    let batch = delta.ncols();
                    let positions = delta.nrows() / filters;
                    let d_out = DMatrix::from_vec(filters, positions * batch, delta.data.as_vec().clone());
                    let cols = trace.patches.as_ref().expect("conv trace keeps patches");
                    let dw = &d_out * cols.transpose();
                    let db = d_out.column_sum();
                    grads.push(LayerParams { weight: dw, bias: db });
                    if need_delta_in {
                        let d_cols = params.weight.tr_mul(&d_out);
                        delta = col2im(&d_cols, dims.height, dims.width, dims.channels, kernel, batch);
                    }
                }
            }
        }
        grads.reverse();
        let input_grad = want_input.then_some(delta);
        (Gradients { layers: grads }, input_grad)
    }

    /// Logits and penultimate features for raw inputs (`B x D`).
    pub fn forward_inputs(&self, x: &DMatrix<f64>) -> Result<Forward> {
        self.check_inputs(x)?;
        let mut trace = self.trace(x.transpose());
        let features = trace.inputs.pop().expect("classifier input").transpose();
        Ok(Forward {
            logits: trace.logits.transpose(),
            features,
        })
    }

    pub fn forward(&self, batch: &Batch) -> Result<Forward> {
        self.forward_inputs(&batch.inputs)
    }

    /// Argmax class per row, lowest index on ties.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        Ok(self.forward_inputs(x)?.predictions())
    }

    /// Per-sample losses plus the gradient of the batch-mean loss with respect to every parameter.
    pub fn loss_and_param_gradient(&self, batch: &Batch, loss: Loss) -> Result<(Vec<f64>, Gradients)> {
        let labels = batch.require_labels()?;
        self.check_inputs(&batch.inputs)?;
        loss::check_labels(labels, batch.len(), self.num_classes())?;
        let trace = self.trace(batch.inputs.transpose());
        let (values, mut dlogits) = loss::per_sample(loss, &trace.logits, labels);
        dlogits /= batch.len() as f64;
        let (grads, _) = self.backprop(&trace, dlogits, false);
        Ok((values, grads))
    }

    pub fn param_gradient(&self, batch: &Batch, loss: Loss) -> Result<Gradients> {
        Ok(self.loss_and_param_gradient(batch, loss)?.1)
    }

    /// Gradient of each sample's own loss with respect to its pixels (`B x D`).
    /// Rows are independent of the rest of the batch.
    pub fn input_gradient(&self, batch: &Batch, loss: Loss) -> Result<DMatrix<f64>> {
        let labels = batch.require_labels()?;
        self.input_gradient_raw(&batch.inputs, labels, loss)
    }

    pub(crate) fn input_gradient_raw(&self, x: &DMatrix<f64>, labels: &[usize], loss: Loss) -> Result<DMatrix<f64>> {
        self.check_inputs(x)?;
        loss::check_labels(labels, x.nrows(), self.num_classes())?;
        let trace = self.trace(x.transpose());
        let (_, dlogits) = loss::per_sample(loss, &trace.logits, labels);
        let (_, dx) = self.backprop(&trace, dlogits, true);
        Ok(dx.expect("input gradient requested").transpose())
    }

    /// Logits (`B x C`) together with the input gradient of `sum_b w_b . z_b`
    /// for per-sample logit weights returned by `weights` from the logits.
    pub(crate) fn logits_and_input_gradient<F>(
        &self,
        x: &DMatrix<f64>,
        weights: F,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)>
    where
        F: FnOnce(&DMatrix<f64>) -> DMatrix<f64>,
    {
        self.check_inputs(x)?;
        let trace = self.trace(x.transpose());
        let dlogits = weights(&trace.logits);
        let (_, dx) = self.backprop(&trace, dlogits, true);
        Ok((
            trace.logits.transpose(),
            dx.expect("input gradient requested").transpose(),
        ))
    }

    /// `θ ← θ − lr·grad`. Leaves the network untouched if any gradient entry is non-finite.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be finite and >= 0, got {lr}"
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::input("gradient layer count does not match network"));
        }
        for (block, (g, p)) in grads.blocks().into_iter().zip(self.blocks()).enumerate() {
            if g.len() != p.len() {
                return Err(Error::input(format!("gradient block {block} has wrong length")));
            }
            if let Some(v) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("non-finite gradient {v} in block {block}")));
            }
        }
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            p.weight.zip_apply(&g.weight, |w, d| *w -= lr * d);
            p.bias.zip_apply(&g.bias, |b, d| *b -= lr * d);
        }
        Ok(())
    }
}

/// Unfolds `D x B` channel-last images into a `(k*k*c) x (positions * B)` patch matrix.
fn im2col(x: &DMatrix<f64>, h: usize, w: usize, c: usize, k: usize) -> DMatrix<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let positions = oh * ow;
    let batch = x.ncols();
    let rows = k * k * c;
    let mut out = DMatrix::zeros(rows, positions * batch);
    for b in 0..batch {
        let img = x.column(b);
        for oy in 0..oh {
            for ox in 0..ow {
                let col = b * positions + oy * ow + ox;
                for dy in 0..k {
                    for dx in 0..k {
                        for ch in 0..c {
                            out[((dy * k + dx) * c + ch, col)] = img[((oy + dy) * w + ox + dx) * c + ch];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto `D x B` images.
fn col2im(cols: &DMatrix<f64>, h: usize, w: usize, c: usize, k: usize, batch: usize) -> DMatrix<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let positions = oh * ow;
    let mut out = DMatrix::zeros(h * w * c, batch);
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let col = b * positions + oy * ow + ox;
                for dy in 0..k {
                    for dx in 0..k {
                        for ch in 0..c {
                            out[(((oy + dy) * w + ox + dx) * c + ch, b)] += cols[((dy * k + dx) * c + ch, col)];
                        }
                    }
                }
            }
        }
    }
    out
}
