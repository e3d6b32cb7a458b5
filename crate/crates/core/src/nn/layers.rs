//! Layer descriptors and their batched forward/backward kernels.
//!
//! Kernels work on flat row-major buffers holding `batch` samples of a known
//! per-sample shape. Parameter layouts: dense weights are `[out, in]`,
//! convolution weights `[out_ch, in_ch, k, k]`, biases one per output unit.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Stride-1 square convolution with symmetric zero padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Relu,
    /// Non-overlapping average pooling with a square window.
    AvgPool2d {
        size: usize,
    },
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::AvgPool2d { .. } => "avgpool2d",
            Layer::Flatten => "flatten",
        }
    }

    /// Shapes of the `(weight, bias)` parameters, if any.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((vec![out_channels, in_channels, kernel, kernel], vec![out_channels])),
            _ => None,
        }
    }

    /// Fan-in used for initialization.
    pub fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            _ => 0,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            Layer::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(Error::Shape(format!("dense layer expects [{inputs}], got {input:?}")));
                }
                Ok(vec![outputs])
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                let [c, h, w] = chw(input)?;
                if c != in_channels {
                    return Err(Error::Shape(format!("conv2d expects {in_channels} channels, got {c}")));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(Error::Shape(format!(
                        "conv2d kernel {kernel} larger than padded input {input:?}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    h + 2 * padding + 1 - kernel,
                    w + 2 * padding + 1 - kernel,
                ])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::AvgPool2d { size } => {
                let [c, h, w] = chw(input)?;
                if size == 0 || h % size != 0 || w % size != 0 {
                    return Err(Error::Shape(format!("avgpool2d window {size} does not tile {input:?}")));
                }
                Ok(vec![c, h / size, w / size])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Computes `out` (batch of outputs) from `input` (batch of inputs).
    pub(crate) fn forward(
        &self,
        in_shape: &[usize],
        batch: usize,
        input: &[f64],
        params: Option<(&[f64], &[f64])>,
        out: &mut Vec<f64>,
    ) {
        match *self {
            Layer::Dense { inputs, outputs } => {
                let (w, b) = params.expect("dense layer without parameters");
                out.clear();
                out.reserve(batch * outputs);
                for x in input.chunks_exact(inputs) {
                    for (row, &bias) in w.chunks_exact(inputs).zip(b) {
                        out.push(bias + dot(row, x));
                    }
                }
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                let (w, b) = params.expect("conv2d layer without parameters");
                let [_, h, wd] = chw(in_shape).expect("validated shape");
                let oh = h + 2 * padding + 1 - kernel;
                let ow = wd + 2 * padding + 1 - kernel;
                out.clear();
                out.resize(batch * out_channels * oh * ow, 0.0);
                let in_len = in_channels * h * wd;
                let out_len = out_channels * oh * ow;
                for (x, y) in input.chunks_exact(in_len).zip(out.chunks_exact_mut(out_len)) {
                    for oc in 0..out_channels {
                        let y = &mut y[oc * oh * ow..(oc + 1) * oh * ow];
                        y.fill(b[oc]);
                        for ic in 0..in_channels {
                            let xc = &x[ic * h * wd..(ic + 1) * h * wd];
                            let k_base = (oc * in_channels + ic) * kernel * kernel;
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let wv = w[k_base + ky * kernel + kx];
                                    for oy in 0..oh {
                                        let iy = oy + ky;
                                        if iy < padding || iy - padding >= h {
                                            continue;
                                        }
                                        let iy = iy - padding;
                                        for ox in 0..ow {
                                            let ix = ox + kx;
                                            if ix < padding || ix - padding >= wd {
                                                continue;
                                            }
                                            y[oy * ow + ox] += wv * xc[iy * wd + ix - padding];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Layer::Relu => {
                out.clear();
                out.extend(input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }));
            }
            Layer::AvgPool2d { size } => {
                let [c, h, w] = chw(in_shape).expect("validated shape");
                let (oh, ow) = (h / size, w / size);
                let scale = 1.0 / (size * size) as f64;
                out.clear();
                out.resize(batch * c * oh * ow, 0.0);
                for (x, y) in input.chunks_exact(c * h * w).zip(out.chunks_exact_mut(c * oh * ow)) {
                    for ch in 0..c {
                        for iy in 0..h {
                            for ix in 0..w {
                                y[(ch * oh + iy / size) * ow + ix / size] += x[(ch * h + iy) * w + ix];
                            }
                        }
                    }
                    y.iter_mut().for_each(|v| *v *= scale);
                }
            }
            Layer::Flatten => {
                out.clear();
                out.extend_from_slice(input);
            }
        }
    }

    /// Given the layer input and the gradient w.r.t. its output, returns the
    /// gradient w.r.t. its input and accumulates parameter gradients.
    pub(crate) fn backward(
        &self,
        in_shape: &[usize],
        batch: usize,
        input: &[f64],
        grad_out: &[f64],
        params: Option<(&[f64], &[f64])>,
        param_grads: Option<(&mut [f64], &mut [f64])>,
    ) -> Vec<f64> {
        match *self {
            Layer::Dense { inputs, outputs } => {
                let (w, _) = params.expect("dense layer without parameters");
                let (gw, gb) = param_grads.expect("dense layer without gradients");
                let mut grad_in = vec![0.0; batch * inputs];
                for ((x, g), gx) in input
                    .chunks_exact(inputs)
                    .zip(grad_out.chunks_exact(outputs))
                    .zip(grad_in.chunks_exact_mut(inputs))
                {
                    for (o, &go) in g.iter().enumerate() {
                        gb[o] += go;
                        let gw_row = &mut gw[o * inputs..(o + 1) * inputs];
                        let w_row = &w[o * inputs..(o + 1) * inputs];
                        for i in 0..inputs {
                            gw_row[i] += go * x[i];
                            gx[i] += go * w_row[i];
                        }
                    }
                }
                grad_in
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                let (w, _) = params.expect("conv2d layer without parameters");
                let (gw, gb) = param_grads.expect("conv2d layer without gradients");
                let [_, h, wd] = chw(in_shape).expect("validated shape");
                let oh = h + 2 * padding + 1 - kernel;
                let ow = wd + 2 * padding + 1 - kernel;
                let in_len = in_channels * h * wd;
                let out_len = out_channels * oh * ow;
                let mut grad_in = vec![0.0; batch * in_len];
                for ((x, g), gx) in input
                    .chunks_exact(in_len)
                    .zip(grad_out.chunks_exact(out_len))
                    .zip(grad_in.chunks_exact_mut(in_len))
                {
                    for oc in 0..out_channels {
                        let g = &g[oc * oh * ow..(oc + 1) * oh * ow];
                        gb[oc] += g.iter().sum::<f64>();
                        for ic in 0..in_channels {
                            let xc = &x[ic * h * wd..(ic + 1) * h * wd];
                            let gxc = &mut gx[ic * h * wd..(ic + 1) * h * wd];
                            let k_base = (oc * in_channels + ic) * kernel * kernel;
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let wv = w[k_base + ky * kernel + kx];
                                    let mut acc = 0.0;
                                    for oy in 0..oh {
                                        let iy = oy + ky;
                                        if iy < padding || iy - padding >= h {
                                            continue;
                                        }
                                        let iy = iy - padding;
                                        for ox in 0..ow {
                                            let ix = ox + kx;
                                            if ix < padding || ix - padding >= wd {
                                                continue;
                                            }
                                            let idx = iy * wd + ix - padding;
                                            let go = g[oy * ow + ox];
                                            acc += go * xc[idx];
                                            gxc[idx] += go * wv;
                                        }
                                    }
                                    gw[k_base + ky * kernel + kx] += acc;
                                }
                            }
                        }
                    }
                }
                grad_in
            }
            Layer::Relu => input
                .iter()
                .zip(grad_out)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            Layer::AvgPool2d { size } => {
                let [c, h, w] = chw(in_shape).expect("validated shape");
                let (oh, ow) = (h / size, w / size);
                let scale = 1.0 / (size * size) as f64;
                let mut grad_in = vec![0.0; batch * c * h * w];
                for (g, gx) in grad_out
                    .chunks_exact(c * oh * ow)
                    .zip(grad_in.chunks_exact_mut(c * h * w))
                {
                    for ch in 0..c {
                        for iy in 0..h {
                            for ix in 0..w {
                                gx[(ch * h + iy) * w + ix] = scale * g[(ch * oh + iy / size) * ow + ix / size];
                            }
                        }
                    }
                }
                grad_in
            }
            Layer::Flatten => grad_out.to_vec(),
        }
    }
}

fn chw(shape: &[usize]) -> Result<[usize; 3]> {
    match *shape {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Shape(format!(
            "expected a [channels, height, width] input, got {shape:?}"
        ))),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators in a fixed order: vectorizes well and
    // stays deterministic.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
