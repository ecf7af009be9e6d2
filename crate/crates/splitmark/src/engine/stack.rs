//! Ordered layer stacks with deterministic initialization, batched
//! forward/backward, SGD updates and splitting.
//!
//! The split contract is central: `split(k)` cuts a stack into a front and a
//! back whose composition performs exactly the same floating-point operations
//! in exactly the same order as the monolithic stack, so split execution is
//! bit-identical to monolithic execution.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::layer::{Layer, LayerSpec};
use crate::engine::tensor::Tensor;
use crate::error::{Error, Result};

/// Serializable architecture: per-sample input shape plus the layer chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    /// Per-sample input shape, e.g. `[1, 28, 28]` for one-channel images or
    /// `[1, d]` for flat feature vectors.
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl StackSpec {
    pub fn new(input: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        Self { input, layers }
    }
}

/// Parameter and input gradients produced by one backward pass.
///
/// `param_grads[i]` mirrors `layers[i].params()` exactly; parameterless
/// layers contribute an empty entry.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub param_grads: Vec<Vec<Tensor>>,
    pub input_grad: Tensor,
}

/// Activations captured by a forward pass: `acts[0]` is the input and
/// `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("trace holds at least the input")
    }

    pub fn input(&self) -> &Tensor {
        &self.acts[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl LayerStack {
    /// Builds a stack from its spec, initializing parameters deterministically
    /// from `seed`. Dense and conv parameters draw from the uniform
    /// Glorot range `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`; biases
    /// start at zero. Identical `(spec, seed)` pairs yield bit-identical
    /// parameters.
    pub fn init(spec: &StackSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut shape = spec.input.clone();
        for (idx, ls) in spec.layers.iter().enumerate() {
            if matches!(ls, LayerSpec::SoftmaxOutput) && idx + 1 != spec.layers.len() {
                return Err(Error::InvalidArgument(format!(
                    "softmax_output must be the final layer, found at index {idx}"
                )));
            }
            let layer = match ls {
                LayerSpec::Dense { inputs, outputs } => {
                    let s = (6.0 / (inputs + outputs) as f64).sqrt() as f32;
                    let dist = Uniform::new_inclusive(-s, s);
                    let weights = (0..inputs * outputs)
                        .map(|_| dist.sample(&mut rng))
                        .collect();
                    Layer::Dense {
                        weights: Tensor::new(vec![*outputs, *inputs], weights)?,
                        bias: Tensor::zeros(vec![*outputs]),
                    }
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if *stride == 0 || *kernel == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "conv2d layer {idx} has zero kernel or stride"
                        )));
                    }
                    let fan_in = in_channels * kernel * kernel;
                    let fan_out = out_channels * kernel * kernel;
                    let s = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                    let dist = Uniform::new_inclusive(-s, s);
                    let n = out_channels * in_channels * kernel * kernel;
                    let kernels = (0..n).map(|_| dist.sample(&mut rng)).collect();
                    Layer::Conv2d {
                        kernels: Tensor::new(
                            vec![*out_channels, *in_channels, *kernel, *kernel],
                            kernels,
                        )?,
                        bias: Tensor::zeros(vec![*out_channels]),
                        stride: *stride,
                    }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool2d { window, stride } => {
                    if *stride == 0 || *window == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "maxpool2d layer {idx} has zero window or stride"
                        )));
                    }
                    Layer::MaxPool2d {
                        window: *window,
                        stride: *stride,
                    }
                }
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::SoftmaxOutput => Layer::SoftmaxOutput,
            };
            shape = layer.output_shape(&shape).map_err(|e| {
                Error::ShapeMismatch(format!(
                    "layer {} ({}) does not accept the output of layer {}: {}",
                    idx,
                    ls.kind_name(),
                    if idx == 0 {
                        "input".to_string()
                    } else {
                        format!("{} ({})", idx - 1, spec.layers[idx - 1].kind_name())
                    },
                    e
                ))
            })?;
            layers.push(layer);
        }
        Ok(Self {
            input_shape: spec.input.clone(),
            layers,
        })
    }

    /// Rebuilds a stack around pre-existing layers (used by `split`/`join`
    /// and checkpoint loading). Validates the shape chain.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (idx, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|e| {
                Error::ShapeMismatch(format!("layer {idx} ({}): {e}", layer.kind_name()))
            })?;
        }
        Ok(Self {
            input_shape,
            layers,
        })
    }

    pub fn spec(&self) -> StackSpec {
        StackSpec {
            input: self.input_shape.clone(),
            layers: self.layers.iter().map(Layer::spec).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(Tensor::len)
            .sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch(format!(
                "stack expects [batch{}], got {:?}",
                self.input_shape
                    .iter()
                    .map(|d| format!(", {d}"))
                    .collect::<String>(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Batched forward pass; `x` is `[B, input...]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut act = x.clone();
        for layer in &self.layers {
            act = layer.forward(&act)?;
        }
        Ok(act)
    }

    /// Forward pass that retains every intermediate activation for backward.
    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("nonempty"))?;
            acts.push(next);
        }
        Ok(Trace { acts })
    }

    /// Backpropagates `upstream` (dLoss/d(stack output)) through every layer.
    /// The stack must not contain a `SoftmaxOutput` layer; that layer only
    /// participates in the fused path of [`LayerStack::loss_and_backward`].
    pub fn backward_from(&self, trace: &Trace, upstream: Tensor) -> Result<GradientBundle> {
        self.backward_range(trace, upstream, self.layers.len())
    }

    /// Backward over layers `[0, upto)`, seeded with the gradient at the
    /// output of layer `upto - 1`.
    fn backward_range(&self, trace: &Trace, upstream: Tensor, upto: usize) -> Result<GradientBundle> {
        if trace.acts.len() != self.layers.len() + 1 {
            return Err(Error::MisalignedGradients(
                "trace does not belong to this stack".into(),
            ));
        }
        let mut param_grads = vec![Vec::new(); self.layers.len()];
        let mut grad = upstream;
        for i in (0..upto).rev() {
            let (pg, down) = self.layers[i].backward(&trace.acts[i], &trace.acts[i + 1], &grad)?;
            param_grads[i] = pg;
            grad = down;
        }
        Ok(GradientBundle {
            param_grads,
            input_grad: grad,
        })
    }

    /// Mean softmax cross-entropy plus a full backward pass. Requires the
    /// final layer to be `SoftmaxOutput`; the loss seeds the gradient below
    /// the softmax with `(p - onehot(y)) / batch` (the fused derivation).
    /// Returns the loss together with parameter gradients and the gradient
    /// w.r.t. the stack input (the FGSM direction).
    pub fn loss_and_backward(&self, x: &Tensor, labels: &[usize]) -> Result<(f32, GradientBundle)> {
        let trace = self.forward_trace(x)?;
        self.loss_and_backward_traced(&trace, labels)
    }

    /// As [`LayerStack::loss_and_backward`] but reusing an existing trace.
    pub fn loss_and_backward_traced(
        &self,
        trace: &Trace,
        labels: &[usize],
    ) -> Result<(f32, GradientBundle)> {
        if !matches!(self.layers.last(), Some(Layer::SoftmaxOutput)) {
            return Err(Error::InvalidArgument(
                "loss requires a softmax_output final layer".into(),
            ));
        }
        let probs = trace.output();
        let (loss, seed) = softmax_cross_entropy(probs, labels)?;
        // Softmax backward is fused into the seed; continue below it. With a
        // softmax-only stack the seed already is the input gradient.
        let bundle = self.backward_range(trace, seed, self.layers.len() - 1)?;
        Ok((loss, bundle))
    }

    /// Argmax class per batch row; ties break toward the lowest class index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let scores = self.forward(x)?;
        Ok(argmax_rows(&scores))
    }

    /// In-place SGD update: every parameter `p` becomes `p - lr * g`.
    pub fn sgd_step(&mut self, grads: &GradientBundle, lr: f32) -> Result<()> {
        if grads.param_grads.len() != self.layers.len() {
            return Err(Error::MisalignedGradients(format!(
                "bundle covers {} layers, stack has {}",
                grads.param_grads.len(),
                self.layers.len()
            )));
        }
        for (idx, (layer, grads)) in self
            .layers
            .iter_mut()
            .zip(&grads.param_grads)
            .enumerate()
        {
            let params = layer.params_mut();
            if params.len() != grads.len() {
                return Err(Error::MisalignedGradients(format!(
                    "layer {idx} has {} parameter tensors, bundle has {}",
                    params.len(),
                    grads.len()
                )));
            }
            for (p, g) in params.into_iter().zip(grads) {
                if p.shape() != g.shape() {
                    return Err(Error::MisalignedGradients(format!(
                        "layer {idx}: parameter {:?} vs gradient {:?}",
                        p.shape(),
                        g.shape()
                    )));
                }
                for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *pv -= lr * gv;
                }
            }
        }
        Ok(())
    }

    /// Cuts the stack after layer `k - 1`: the front keeps layers `[0, k)`,
    /// the back layers `[k, len)`. Requires `0 < k < len`.
    pub fn split(self, k: usize) -> Result<(LayerStack, LayerStack)> {
        if k == 0 || k >= self.layers.len() {
            return Err(Error::SplitOutOfRange {
                index: k,
                layers: self.layers.len(),
            });
        }
        let mut shape = self.input_shape.clone();
        for layer in &self.layers[..k] {
            shape = layer.output_shape(&shape)?;
        }
        let mut front_layers = self.layers;
        let back_layers = front_layers.split_off(k);
        let front = LayerStack {
            input_shape: self.input_shape,
            layers: front_layers,
        };
        let back = LayerStack {
            input_shape: shape,
            layers: back_layers,
        };
        Ok((front, back))
    }

    /// Reassembles two stacks whose shapes chain; inverse of `split`.
    pub fn join(front: LayerStack, back: LayerStack) -> Result<LayerStack> {
        let front_out = front.output_shape()?;
        if front_out != back.input_shape {
            return Err(Error::ShapeMismatch(format!(
                "front produces {:?}, back expects {:?}",
                front_out, back.input_shape
            )));
        }
        let mut layers = front.layers;
        layers.extend(back.layers);
        Ok(LayerStack {
            input_shape: front.input_shape,
            layers,
        })
    }
}

/// Argmax per row of a `[B, C]` tensor, lowest index on ties.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let classes = scores.row_len();
    let mut out = Vec::with_capacity(scores.batch());
    for bi in 0..scores.batch() {
        let row = &scores.data()[bi * classes..(bi + 1) * classes];
        let mut best = f32::NEG_INFINITY;
        let mut arg = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > best {
                best = v;
                arg = c;
            }
        }
        out.push(arg);
    }
    out
}

/// Mean cross-entropy over softmax probabilities `[B, C]`, plus the fused
/// gradient w.r.t. the softmax *input*: `(p - onehot(y)) / B`.
pub fn softmax_cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let batch = probs.batch();
    let classes = probs.row_len();
    if labels.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for batch of {}",
            labels.len(),
            batch
        )));
    }
    if batch == 0 {
        return Err(Error::InvalidArgument("empty batch has no loss".into()));
    }
    let mut loss = 0.0f32;
    let mut seed = probs.data().to_vec();
    let inv_b = 1.0 / batch as f32;
    for (bi, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes,
            });
        }
        let p = probs.data()[bi * classes + y];
        loss -= p.max(1e-12).ln();
        seed[bi * classes + y] -= 1.0;
    }
    for v in seed.iter_mut() {
        *v *= inv_b;
    }
    Ok((loss * inv_b, Tensor::new(probs.shape().to_vec(), seed)?))
}
