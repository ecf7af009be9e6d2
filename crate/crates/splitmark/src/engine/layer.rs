//! Differentiable layers.
//!
//! Every layer implements a batched `forward` plus a `backward` that maps the
//! upstream gradient to parameter gradients and the gradient w.r.t. its input.
//! Backward passes re-read the activations captured during the forward pass,
//! so the caller retains them (see `LayerStack::forward_trace`).
//!
//! `SoftmaxOutput` is special: it may only terminate a stack, and its backward
//! is fused into the cross-entropy loss (the loss seeds the gradient below the
//! softmax directly). Its generic `backward` therefore returns an error.

use serde::{Deserialize, Serialize};

use crate::engine::tensor::Tensor;
use crate::error::{Error, Result};

/// Architecture description of a single layer; the serializable counterpart
/// of [`Layer`] used in configs, checkpoints and attack reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    SoftmaxOutput,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::SoftmaxOutput => "softmax_output",
        }
    }
}

/// A layer with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        /// Row-major `[outputs, inputs]`.
        weights: Tensor,
        bias: Tensor,
    },
    Conv2d {
        /// `[out_channels, in_channels, kernel, kernel]`.
        kernels: Tensor,
        bias: Tensor,
        stride: usize,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    SoftmaxOutput,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense { weights, .. } => LayerSpec::Dense {
                inputs: weights.shape()[1],
                outputs: weights.shape()[0],
            },
            Layer::Conv2d {
                kernels, stride, ..
            } => LayerSpec::Conv2d {
                in_channels: kernels.shape()[1],
                out_channels: kernels.shape()[0],
                kernel: kernels.shape()[2],
                stride: *stride,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool2d { window, stride } => LayerSpec::MaxPool2d {
                window: *window,
                stride: *stride,
            },
            Layer::Flatten => LayerSpec::Flatten,
            Layer::SoftmaxOutput => LayerSpec::SoftmaxOutput,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        self.spec().kind_name()
    }

    /// Parameters in a fixed order (weights then bias); empty for
    /// parameterless kinds.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { weights, bias } => vec![weights, bias],
            Layer::Conv2d { kernels, bias, .. } => vec![kernels, bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { weights, bias } => vec![weights, bias],
            Layer::Conv2d { kernels, bias, .. } => vec![kernels, bias],
            _ => Vec::new(),
        }
    }

    /// Per-sample output shape for a per-sample input shape (no batch dim).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { weights, .. } => {
                let (outputs, inputs) = (weights.shape()[0], weights.shape()[1]);
                if input != [inputs] {
                    return Err(Error::ShapeMismatch(format!(
                        "dense expects [{inputs}], got {input:?}"
                    )));
                }
                Ok(vec![outputs])
            }
            Layer::Conv2d {
                kernels, stride, ..
            } => {
                let (out_c, in_c, k) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
                let [c, h, w] = *conv_input_dims(input)?;
                if c != in_c {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d expects {in_c} input channels, got {c} (input {input:?})"
                    )));
                }
                if h < k || w < k {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d kernel {k} larger than input {h}x{w}"
                    )));
                }
                Ok(vec![out_c, (h - k) / stride + 1, (w - k) / stride + 1])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d { window, stride } => {
                let [c, h, w] = *conv_input_dims(input)?;
                if h < *window || w < *window {
                    return Err(Error::ShapeMismatch(format!(
                        "maxpool2d window {window} larger than input {h}x{w}"
                    )));
                }
                Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::SoftmaxOutput => {
                if input.len() != 1 {
                    return Err(Error::ShapeMismatch(format!(
                        "softmax_output expects a flat score vector, got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Batched forward: `x` is `[B, per-sample dims...]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let per_sample = &x.shape()[1..];
        let out_dims = self.output_shape(per_sample)?;
        let batch = x.batch();
        match self {
            Layer::Dense { weights, bias } => {
                let (outputs, inputs) = (weights.shape()[0], weights.shape()[1]);
                let w = weights.data();
                let b = bias.data();
                let xd = x.data();
                let mut out = vec![0.0f32; batch * outputs];
                for bi in 0..batch {
                    let row = &xd[bi * inputs..(bi + 1) * inputs];
                    let dst = &mut out[bi * outputs..(bi + 1) * outputs];
                    for (o, slot) in dst.iter_mut().enumerate() {
                        let wr = &w[o * inputs..(o + 1) * inputs];
                        let mut acc = b[o];
                        for i in 0..inputs {
                            acc += wr[i] * row[i];
                        }
                        *slot = acc;
                    }
                }
                Tensor::new(vec![batch, outputs], out)
            }
            Layer::Conv2d {
                kernels,
                bias,
                stride,
            } => {
                let [in_c, h, w] = *conv_input_dims(per_sample)?;
                let (out_c, k) = (kernels.shape()[0], kernels.shape()[2]);
                let (oh, ow) = (out_dims[1], out_dims[2]);
                let kd = kernels.data();
                let bd = bias.data();
                let xd = x.data();
                let mut out = vec![0.0f32; batch * out_c * oh * ow];
                let in_plane = h * w;
                let in_sample = in_c * in_plane;
                let out_plane = oh * ow;
                let out_sample = out_c * out_plane;
                let kern_sample = in_c * k * k;
                for bi in 0..batch {
                    let xs = &xd[bi * in_sample..(bi + 1) * in_sample];
                    let os = &mut out[bi * out_sample..(bi + 1) * out_sample];
                    for f in 0..out_c {
                        let kf = &kd[f * kern_sample..(f + 1) * kern_sample];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = bd[f];
                                for c in 0..in_c {
                                    let kc = &kf[c * k * k..(c + 1) * k * k];
                                    let xc = &xs[c * in_plane..(c + 1) * in_plane];
                                    for ky in 0..k {
                                        let iy = oy * stride + ky;
                                        let xrow = &xc[iy * w..iy * w + w];
                                        let krow = &kc[ky * k..(ky + 1) * k];
                                        let x0 = ox * stride;
                                        for kx in 0..k {
                                            acc += krow[kx] * xrow[x0 + kx];
                                        }
                                    }
                                }
                                os[f * out_plane + oy * ow + ox] = acc;
                            }
                        }
                    }
                }
                Tensor::new(vec![batch, out_c, oh, ow], out)
            }
            Layer::Relu => {
                let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                Tensor::new(x.shape().to_vec(), data)
            }
            Layer::MaxPool2d { window, stride } => {
                let [c, h, w] = *conv_input_dims(per_sample)?;
                let (oh, ow) = (out_dims[1], out_dims[2]);
                let xd = x.data();
                let mut out = vec![0.0f32; batch * c * oh * ow];
                let in_plane = h * w;
                let out_plane = oh * ow;
                for bi in 0..batch {
                    for ci in 0..c {
                        let xc = &xd[(bi * c + ci) * in_plane..(bi * c + ci + 1) * in_plane];
                        let oc = &mut out[(bi * c + ci) * out_plane..(bi * c + ci + 1) * out_plane];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f32::NEG_INFINITY;
                                for ky in 0..*window {
                                    let iy = oy * stride + ky;
                                    for kx in 0..*window {
                                        let v = xc[iy * w + ox * stride + kx];
                                        if v > best {
                                            best = v;
                                        }
                                    }
                                }
                                oc[oy * ow + ox] = best;
                            }
                        }
                    }
                }
                Tensor::new(vec![batch, c, oh, ow], out)
            }
            Layer::Flatten => {
                let flat: usize = per_sample.iter().product();
                x.clone().reshape(vec![batch, flat])
            }
            Layer::SoftmaxOutput => {
                let classes = per_sample[0];
                let xd = x.data();
                let mut out = vec![0.0f32; batch * classes];
                for bi in 0..batch {
                    let row = &xd[bi * classes..(bi + 1) * classes];
                    let dst = &mut out[bi * classes..(bi + 1) * classes];
                    let mut max = f32::NEG_INFINITY;
                    for &v in row {
                        if v > max {
                            max = v;
                        }
                    }
                    let mut sum = 0.0f32;
                    for (d, &v) in dst.iter_mut().zip(row) {
                        let e = (v - max).exp();
                        *d = e;
                        sum += e;
                    }
                    for d in dst.iter_mut() {
                        *d /= sum;
                    }
                }
                Tensor::new(vec![batch, classes], out)
            }
        }
    }

    /// Batched backward. `input`/`output` are the activations captured in the
    /// forward pass; `upstream` is dLoss/d(output). Returns parameter
    /// gradients (mirroring `params()`) and dLoss/d(input).
    pub fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        upstream: &Tensor,
    ) -> Result<(Vec<Tensor>, Tensor)> {
        if upstream.shape() != output.shape() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?} does not match output {:?} of {}",
                upstream.shape(),
                output.shape(),
                self.kind_name()
            )));
        }
        let batch = input.batch();
        match self {
            Layer::Dense { weights, .. } => {
                let (outputs, inputs) = (weights.shape()[0], weights.shape()[1]);
                let w = weights.data();
                let xd = input.data();
                let gd = upstream.data();
                let mut dw = vec![0.0f32; outputs * inputs];
                let mut db = vec![0.0f32; outputs];
                let mut dx = vec![0.0f32; batch * inputs];
                for bi in 0..batch {
                    let row = &xd[bi * inputs..(bi + 1) * inputs];
                    let g = &gd[bi * outputs..(bi + 1) * outputs];
                    let dxr = &mut dx[bi * inputs..(bi + 1) * inputs];
                    for o in 0..outputs {
                        let go = g[o];
                        db[o] += go;
                        let wr = &w[o * inputs..(o + 1) * inputs];
                        let dwr = &mut dw[o * inputs..(o + 1) * inputs];
                        for i in 0..inputs {
                            dwr[i] += go * row[i];
                            dxr[i] += go * wr[i];
                        }
                    }
                }
                Ok((
                    vec![
                        Tensor::new(vec![outputs, inputs], dw)?,
                        Tensor::new(vec![outputs], db)?,
                    ],
                    Tensor::new(input.shape().to_vec(), dx)?,
                ))
            }
            Layer::Conv2d {
                kernels, stride, ..
            } => {
                let [in_c, h, w] = *conv_input_dims(&input.shape()[1..])?;
                let (out_c, k) = (kernels.shape()[0], kernels.shape()[2]);
                let (oh, ow) = (output.shape()[2], output.shape()[3]);
                let kd = kernels.data();
                let xd = input.data();
                let gd = upstream.data();
                let mut dk = vec![0.0f32; kd.len()];
                let mut db = vec![0.0f32; out_c];
                let mut dx = vec![0.0f32; xd.len()];
                let in_plane = h * w;
                let in_sample = in_c * in_plane;
                let out_plane = oh * ow;
                let out_sample = out_c * out_plane;
                let kern_sample = in_c * k * k;
                for bi in 0..batch {
                    let xs = &xd[bi * in_sample..(bi + 1) * in_sample];
                    let gs = &gd[bi * out_sample..(bi + 1) * out_sample];
                    let dxs = &mut dx[bi * in_sample..(bi + 1) * in_sample];
                    for f in 0..out_c {
                        let kf = &kd[f * kern_sample..(f + 1) * kern_sample];
                        let dkf = f * kern_sample;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = gs[f * out_plane + oy * ow + ox];
                                if g == 0.0 {
                                    continue;
                                }
                                for c in 0..in_c {
                                    let xoff = c * in_plane;
                                    let koff = dkf + c * k * k;
                                    for ky in 0..k {
                                        let iy = oy * stride + ky;
                                        let xrow = xoff + iy * w + ox * stride;
                                        let krow = koff + ky * k;
                                        for kx in 0..k {
                                            dk[krow + kx] += g * xs[xrow + kx];
                                            dxs[xrow + kx] += g * kf[krow + kx - dkf];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                // Bias gradients accumulate every upstream term, including the
                // zeros skipped above.
                for bi in 0..batch {
                    let gs = &gd[bi * out_sample..(bi + 1) * out_sample];
                    for f in 0..out_c {
                        for v in &gs[f * out_plane..(f + 1) * out_plane] {
                            db[f] += v;
                        }
                    }
                }
                Ok((
                    vec![
                        Tensor::new(kernels.shape().to_vec(), dk)?,
                        Tensor::new(vec![out_c], db)?,
                    ],
                    Tensor::new(input.shape().to_vec(), dx)?,
                ))
            }
            Layer::Relu => {
                let data = input
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                Ok((Vec::new(), Tensor::new(input.shape().to_vec(), data)?))
            }
            Layer::MaxPool2d { window, stride } => {
                let [c, h, w] = *conv_input_dims(&input.shape()[1..])?;
                let (oh, ow) = (output.shape()[2], output.shape()[3]);
                let xd = input.data();
                let gd = upstream.data();
                let mut dx = vec![0.0f32; xd.len()];
                let in_plane = h * w;
                let out_plane = oh * ow;
                for bi in 0..batch {
                    for ci in 0..c {
                        let base = (bi * c + ci) * in_plane;
                        let xc = &xd[base..base + in_plane];
                        let gc = &gd[(bi * c + ci) * out_plane..(bi * c + ci + 1) * out_plane];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                // First maximum in scan order receives the gradient.
                                let mut best = f32::NEG_INFINITY;
                                let mut arg = 0usize;
                                for ky in 0..*window {
                                    let iy = oy * stride + ky;
                                    for kx in 0..*window {
                                        let idx = iy * w + ox * stride + kx;
                                        if xc[idx] > best {
                                            best = xc[idx];
                                            arg = idx;
                                        }
                                    }
                                }
                                dx[base + arg] += gc[oy * ow + ox];
                            }
                        }
                    }
                }
                Ok((Vec::new(), Tensor::new(input.shape().to_vec(), dx)?))
            }
            Layer::Flatten => Ok((
                Vec::new(),
                upstream.clone().reshape(input.shape().to_vec())?,
            )),
            Layer::SoftmaxOutput => Err(Error::MisalignedGradients(
                "softmax_output has no generic backward; it is fused with the cross-entropy loss"
                    .into(),
            )),
        }
    }
}

fn conv_input_dims(input: &[usize]) -> Result<Box<[usize; 3]>> {
    match input {
        [c, h, w] => Ok(Box::new([*c, *h, *w])),
        other => Err(Error::ShapeMismatch(format!(
            "expected [channels, height, width], got {other:?}"
        ))),
    }
}
