//! Layer-wise forward and backward passes for the classical part of the network.
//!
//! Every layer works on a single sample. Images are `[channels, height, width]`,
//! vectors are `[n]`. Backward needs the [`ActivationCache`] filled by the
//! matching forward call; caches are plain values owned by the caller.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A classical layer together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `y = W x + b`, `W: [out, in]`, `b: [out]`.
    Dense { weight: Tensor, bias: Tensor },
    /// Cross-correlation with zero padding. `W: [out, in, k, k]`, `b: [out]`.
    Conv2d {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Relu,
    /// Non-overlapping max pooling (window == stride); trailing rows and
    /// columns that do not fill a window are dropped.
    MaxPool2d { size: usize },
    Flatten,
}

/// Values recorded by [`Layer::forward`] for use by [`Layer::backward`].
#[derive(Debug, Clone, Default)]
pub struct ActivationCache {
    input: Option<Tensor>,
    argmax: Vec<usize>,
}

impl ActivationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_none()
    }
}

fn uniform_tensor<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

impl Layer {
    /// Dense layer with uniform `±1/sqrt(fan_in)` initialisation.
    pub fn dense<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Layer::Dense {
            weight: uniform_tensor(&[outputs, inputs], bound, rng),
            bias: uniform_tensor(&[outputs], bound, rng),
        }
    }

    pub fn conv2d<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        Layer::Conv2d {
            weight: uniform_tensor(&[out_channels, in_channels, kernel, kernel], bound, rng),
            bias: uniform_tensor(&[out_channels], bound, rng),
            stride,
            padding,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Flatten => "flatten",
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                vec![weight, bias]
            }
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                vec![weight, bias]
            }
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Output shape for a given input shape, or a shape error naming the layer.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { weight, .. } => {
                let (out, inp) = (weight.shape()[0], weight.shape()[1]);
                if input != [inp] {
                    return Err(Error::shape("dense input", &[inp], input));
                }
                Ok(vec![out])
            }
            Layer::Conv2d {
                weight,
                stride,
                padding,
                ..
            } => {
                let ws = weight.shape();
                let (out_c, in_c, k) = (ws[0], ws[1], ws[2]);
                if input.len() != 3 || input[0] != in_c {
                    return Err(Error::shape(
                        format!("conv2d input (expected [{in_c}, H, W])"),
                        &[in_c, 0, 0],
                        input,
                    ));
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if h < k || w < k || *stride == 0 {
                    return Err(Error::shape("conv2d input smaller than kernel", &[in_c, k, k], input));
                }
                Ok(vec![out_c, (h - k) / stride + 1, (w - k) / stride + 1])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d { size } => {
                if input.len() != 3 || *size == 0 || input[1] < *size || input[2] < *size {
                    return Err(Error::shape(
                        format!("maxpool2d input (window {size})"),
                        &[0, *size, *size],
                        input,
                    ));
                }
                Ok(vec![input[0], input[1] / size, input[2] / size])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn forward(&self, input: &Tensor, cache: &mut ActivationCache) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let x = input.data();
        let out = match self {
            Layer::Dense { weight, bias } => {
                let n_in = input.len();
                let w = weight.data();
                let y = bias
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(o, b)| {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        b + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
                    })
                    .collect();
                Tensor::from_parts(out_shape, y)
            }
            Layer::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let y = conv_forward(input, weight, bias, *stride, *padding, &out_shape);
                Tensor::from_parts(out_shape, y)
            }
            Layer::Relu => {
                Tensor::from_parts(out_shape, x.iter().map(|v| v.max(0.0)).collect())
            }
            Layer::MaxPool2d { size } => {
                let (y, argmax) = maxpool_forward(input, *size, &out_shape);
                cache.argmax = argmax;
                Tensor::from_parts(out_shape, y)
            }
            Layer::Flatten => Tensor::from_parts(out_shape, x.to_vec()),
        };
        out.ensure_finite(self.name())?;
        cache.input = Some(input.clone());
        Ok(out)
    }

    /// Returns parameter gradients (same order as [`Layer::params`]) and the
    /// gradient with respect to the layer input.
    pub fn backward(
        &self,
        upstream: &Tensor,
        cache: &ActivationCache,
    ) -> Result<(Vec<Tensor>, Tensor)> {
        let input = cache
            .input
            .as_ref()
            .ok_or_else(|| Error::MissingCache(self.name().to_string()))?;
        let out_shape = self.output_shape(input.shape())?;
        upstream.ensure_shape(&out_shape, &format!("{} upstream gradient", self.name()))?;
        let up = upstream.data();
        let x = input.data();
        match self {
            Layer::Dense { weight, .. } => {
                let n_in = input.len();
                let w = weight.data();
                let mut dw = vec![0.0; w.len()];
                let mut dx = vec![0.0; n_in];
                for (o, &g) in up.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let drow = &mut dw[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        drow[i] = g * x[i];
                        dx[i] += g * row[i];
                    }
                }
                Ok((
                    vec![
                        Tensor::from_parts(weight.shape().to_vec(), dw),
                        Tensor::from_parts(vec![up.len()], up.to_vec()),
                    ],
                    Tensor::from_parts(input.shape().to_vec(), dx),
                ))
            }
            Layer::Conv2d {
                weight,
                stride,
                padding,
                ..
            } => {
                let (dw, db, dx) = conv_backward(input, weight, upstream, *stride, *padding);
                Ok((
                    vec![
                        Tensor::from_parts(weight.shape().to_vec(), dw),
                        Tensor::from_parts(vec![db.len()], db),
                    ],
                    Tensor::from_parts(input.shape().to_vec(), dx),
                ))
            }
            Layer::Relu => {
                let dx = x
                    .iter()
                    .zip(up)
                    .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                Ok((Vec::new(), Tensor::from_parts(input.shape().to_vec(), dx)))
            }
            Layer::MaxPool2d { .. } => {
                if cache.argmax.len() != up.len() {
                    return Err(Error::MissingCache(self.name().to_string()));
                }
                let mut dx = vec![0.0; x.len()];
                for (g, &src) in up.iter().zip(&cache.argmax) {
                    dx[src] += g;
                }
                Ok((Vec::new(), Tensor::from_parts(input.shape().to_vec(), dx)))
            }
            Layer::Flatten => Ok((
                Vec::new(),
                Tensor::from_parts(input.shape().to_vec(), up.to_vec()),
            )),
        }
    }
}

/// Output columns `ox` whose input column `ox * stride + kj - padding` lies in `0..w`.
fn valid_range(kj: usize, stride: usize, padding: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(kj).div_ceil(stride);
    let hi = if w + padding > kj { ((w + padding - kj - 1) / stride + 1).min(ow) } else { 0 };
    (lo, hi.max(lo))
}

fn conv_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    out_shape: &[usize],
) -> Vec<f64> {
    let (in_c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let k = weight.shape()[2];
    let (out_c, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let x = input.data();
    let wt = weight.data();
    let mut y = vec![0.0; out_c * oh * ow];
    for o in 0..out_c {
        let plane = &mut y[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(bias.data()[o]);
        for c in 0..in_c {
            let xc = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let wv = wt[((o * in_c + c) * k + ki) * k + kj];
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &xc[iy as usize * w..(iy as usize + 1) * w];
                        let yrow = &mut plane[oy * ow..(oy + 1) * ow];
                        let (lo, hi) = valid_range(kj, stride, padding, w, ow);
                        if stride == 1 {
                            let off = lo + kj - padding;
                            for (yv, xv) in yrow[lo..hi].iter_mut().zip(&xrow[off..off + hi - lo]) {
                                *yv += wv * xv;
                            }
                        } else {
                            for ox in lo..hi {
                                yrow[ox] += wv * xrow[ox * stride + kj - padding];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

fn conv_backward(
    input: &Tensor,
    weight: &Tensor,
    upstream: &Tensor,
    stride: usize,
    padding: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (in_c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let k = weight.shape()[2];
    let (out_c, oh, ow) = (upstream.shape()[0], upstream.shape()[1], upstream.shape()[2]);
    let x = input.data();
    let wt = weight.data();
    let up = upstream.data();
    let mut dw = vec![0.0; wt.len()];
    let mut dx = vec![0.0; x.len()];
    let db = (0..out_c)
        .map(|o| up[o * oh * ow..(o + 1) * oh * ow].iter().sum())
        .collect();
    for o in 0..out_c {
        let plane = &up[o * oh * ow..(o + 1) * oh * ow];
        for c in 0..in_c {
            let base = c * h * w;
            for ki in 0..k {
                for kj in 0..k {
                    let widx = ((o * in_c + c) * k + ki) * k + kj;
                    let wv = wt[widx];
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = base + iy as usize * w;
                        let (lo, hi) = valid_range(kj, stride, padding, w, ow);
                        let grow = &plane[oy * ow..(oy + 1) * ow];
                        for ox in lo..hi {
                            let ix = row + ox * stride + kj - padding;
                            let g = grow[ox];
                            acc += g * x[ix];
                            dx[ix] += g * wv;
                        }
                    }
                    dw[widx] = acc;
                }
            }
        }
    }
    (dw, db, dx)
}

fn maxpool_forward(input: &Tensor, size: usize, out_shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let (c_n, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let x = input.data();
    let mut y = Vec::with_capacity(c_n * oh * ow);
    let mut argmax = Vec::with_capacity(c_n * oh * ow);
    for c in 0..c_n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = c * h * w + oy * size * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = c * h * w + (oy * size + dy) * w + ox * size + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                y.push(x[best]);
                argmax.push(best);
            }
        }
    }
    (y, argmax)
}
