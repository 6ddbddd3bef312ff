//! A small Inception-style view classifier in plain f64 arithmetic.
//!
//! Layers cache what their backward pass needs, so a network is used as
//! `forward(train = true)` -> loss -> `backward` -> optimizer step.
//! Convolutions carry no bias; every convolution is followed by batch
//! normalization and ReLU. Larger spatial kernels inside inception blocks are
//! factorized into a 3x1 followed by a 1x3 convolution.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::augment::{augment_for_classification, ClassifyAugSpec};
use crate::error::{Error, Result};
use crate::image::{GrayImage, ValueDomain};
use crate::util::rng_for;

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-3;

/// Dense NCHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::Shape(format!(
                "{} values for a {n}x{c}x{h}x{w} tensor",
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    /// Stacks single-channel images of equal size into a batch.
    pub fn from_images(images: &[&GrayImage]) -> Result<Self> {
        let first = images.first().ok_or(Error::EmptyInput("image batch"))?;
        let (w, h) = first.dims();
        let mut data = Vec::with_capacity(images.len() * w * h);
        for img in images {
            if img.dims() != (w, h) {
                return Err(Error::Shape(format!(
                    "batch mixes {}x{} and {w}x{h} images",
                    img.width(),
                    img.height()
                )));
            }
            data.extend_from_slice(img.pixels());
        }
        Self::from_vec(images.len(), 1, h, w, data)
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }
}

/// Output extent of a strided, padded window sweep.
fn out_len(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::Shape(format!(
            "kernel {k} larger than padded input {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Output positions `o` for which `o * stride + k - pad` lands inside `[0, input)`.
fn valid_range(k: usize, pad: usize, stride: usize, input: usize, out: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if input + pad > k {
        ((input - 1 + pad - k) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    /// `[out_c][in_c][kh][kw]`
    pub weight: Vec<f64>,
    pub grad: Vec<f64>,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, (kh, kw): (usize, usize), stride: usize, (pad_h, pad_w): (usize, usize)) -> Self {
        let n = out_c * in_c * kh * kw;
        Self {
            in_c,
            out_c,
            kh,
            kw,
            stride,
            pad_h,
            pad_w,
            weight: vec![0.0; n],
            grad: vec![0.0; n],
            input: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len()
    }

    fn init(&mut self, rng: &mut impl Rng) {
        let fan_in = (self.in_c * self.kh * self.kw) as f64;
        let a = (6.0 / fan_in).sqrt();
        self.weight.iter_mut().for_each(|w| *w = rng.gen_range(-a..a));
    }

    fn widx(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_c + i) * self.kh + ky) * self.kw + kx
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.apply(x)?;
        self.input = train.then(|| x.clone());
        Ok(y)
    }

    /// Pure forward pass.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.c != self.in_c {
            return Err(Error::Shape(format!(
                "convolution expects {} channels, got {}",
                self.in_c, x.c
            )));
        }
        let oh = out_len(x.h, self.kh, self.stride, self.pad_h)?;
        let ow = out_len(x.w, self.kw, self.stride, self.pad_w)?;
        let mut y = Tensor::zeros(x.n, self.out_c, oh, ow);
        let s = self.stride;
        for n in 0..x.n {
            for o in 0..self.out_c {
                let ybase = y.idx(n, o, 0, 0);
                for i in 0..self.in_c {
                    let xbase = x.idx(n, i, 0, 0);
                    for ky in 0..self.kh {
                        let (oy0, oy1) = valid_range(ky, self.pad_h, s, x.h, oh);
                        for kx in 0..self.kw {
                            let wv = self.weight[self.widx(o, i, ky, kx)];
                            let (ox0, ox1) = valid_range(kx, self.pad_w, s, x.w, ow);
                            for oy in oy0..oy1 {
                                let iy = oy * s + ky - self.pad_h;
                                let yrow = ybase + oy * ow;
                                let xrow = xbase + iy * x.w;
                                for ox in ox0..ox1 {
                                    let ix = ox * s + kx - self.pad_w;
                                    y.data[yrow + ox] += wv * x.data[xrow + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::Numeric("backward without a training forward pass".into()))?;
        let (oh, ow) = (g.h, g.w);
        let s = self.stride;
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        for n in 0..x.n {
            for o in 0..self.out_c {
                let gbase = g.idx(n, o, 0, 0);
                for i in 0..self.in_c {
                    let xbase = x.idx(n, i, 0, 0);
                    for ky in 0..self.kh {
                        let (oy0, oy1) = valid_range(ky, self.pad_h, s, x.h, oh);
                        for kx in 0..self.kw {
                            let wi = self.widx(o, i, ky, kx);
                            let wv = self.weight[wi];
                            let (ox0, ox1) = valid_range(kx, self.pad_w, s, x.w, ow);
                            let mut acc = 0.0;
                            for oy in oy0..oy1 {
                                let iy = oy * s + ky - self.pad_h;
                                let grow = gbase + oy * ow;
                                let xrow = xbase + iy * x.w;
                                for ox in ox0..ox1 {
                                    let ix = ox * s + kx - self.pad_w;
                                    let gv = g.data[grow + ox];
                                    acc += gv * x.data[xrow + ix];
                                    dx.data[xrow + ix] += gv * wv;
                                }
                            }
                            self.grad[wi] += acc;
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    cache: Option<(Tensor, Vec<f64>)>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            grad_gamma: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        if x.c != self.channels {
            return Err(Error::Shape(format!(
                "batch norm expects {} channels, got {}",
                self.channels, x.c
            )));
        }
        let plane = x.h * x.w;
        let count = (x.n * plane) as f64;
        let mut y = x.clone();
        if !train {
            for n in 0..x.n {
                for c in 0..x.c {
                    let inv = 1.0 / (self.running_var[c] + BN_EPSILON).sqrt();
                    let base = x.idx(n, c, 0, 0);
                    for v in &mut y.data[base..base + plane] {
                        *v = self.gamma[c] * (*v - self.running_mean[c]) * inv + self.beta[c];
                    }
                }
            }
            self.cache = None;
            return Ok(y);
        }
        let mut xhat = x.clone();
        let mut inv_std = vec![0.0; x.c];
        for c in 0..x.c {
            let mut sum = 0.0;
            for n in 0..x.n {
                let base = x.idx(n, c, 0, 0);
                sum += x.data[base..base + plane].iter().sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0;
            for n in 0..x.n {
                let base = x.idx(n, c, 0, 0);
                sq += x.data[base..base + plane]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            let var = sq / count;
            inv_std[c] = 1.0 / (var + BN_EPSILON).sqrt();
            self.running_mean[c] = BN_MOMENTUM * self.running_mean[c] + (1.0 - BN_MOMENTUM) * mean;
            self.running_var[c] = BN_MOMENTUM * self.running_var[c] + (1.0 - BN_MOMENTUM) * var;
            for n in 0..x.n {
                let base = x.idx(n, c, 0, 0);
                for k in base..base + plane {
                    let h = (x.data[k] - mean) * inv_std[c];
                    xhat.data[k] = h;
                    y.data[k] = self.gamma[c] * h + self.beta[c];
                }
            }
        }
        self.cache = Some((xhat, inv_std));
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let (xhat, inv_std) = self
            .cache
            .take()
            .ok_or_else(|| Error::Numeric("backward without a training forward pass".into()))?;
        let plane = g.h * g.w;
        let count = (g.n * plane) as f64;
        let mut dx = Tensor::zeros(g.n, g.c, g.h, g.w);
        for c in 0..g.c {
            let (mut sg, mut sgx) = (0.0, 0.0);
            for n in 0..g.n {
                let base = g.idx(n, c, 0, 0);
                for k in base..base + plane {
                    sg += g.data[k];
                    sgx += g.data[k] * xhat.data[k];
                }
            }
            self.grad_beta[c] += sg;
            self.grad_gamma[c] += sgx;
            let scale = self.gamma[c] * inv_std[c] / count;
            for n in 0..g.n {
                let base = g.idx(n, c, 0, 0);
                for k in base..base + plane {
                    dx.data[k] = scale * (count * g.data[k] - sg - xhat.data[k] * sgx);
                }
            }
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<([usize; 4], Vec<usize>)>,
}

impl MaxPool {
    pub fn new(k: usize, stride: usize, pad: usize) -> Self {
        Self {
            k,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let oh = out_len(x.h, self.k, self.stride, self.pad)?;
        let ow = out_len(x.w, self.k, self.stride, self.pad)?;
        let mut y = Tensor::zeros(x.n, x.c, oh, ow);
        let mut arg = vec![0usize; y.data.len()];
        for n in 0..x.n {
            for c in 0..x.c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = usize::MAX;
                        for ky in 0..self.k {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            for kx in 0..self.k {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= x.w as isize {
                                    continue;
                                }
                                let i = x.idx(n, c, iy as usize, ix as usize);
                                if x.data[i] > best {
                                    best = x.data[i];
                                    best_i = i;
                                }
                            }
                        }
                        let o = y.idx(n, c, oy, ox);
                        y.data[o] = best;
                        arg[o] = best_i;
                    }
                }
            }
        }
        self.cache = train.then_some((x.shape(), arg));
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let ([n, c, h, w], arg) = self
            .cache
            .take()
            .ok_or_else(|| Error::Numeric("backward without a training forward pass".into()))?;
        let mut dx = Tensor::zeros(n, c, h, w);
        for (o, &i) in arg.iter().enumerate() {
            dx.data[i] += g.data[o];
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs][inputs]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            grad_weight: vec![0.0; inputs * outputs],
            grad_bias: vec![0.0; outputs],
            input: None,
        }
    }

    fn init(&mut self, rng: &mut impl Rng) {
        let a = (6.0 / (self.inputs + self.outputs) as f64).sqrt();
        self.weight.iter_mut().for_each(|w| *w = rng.gen_range(-a..a));
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let features = x.c * x.h * x.w;
        if features != self.inputs {
            return Err(Error::Shape(format!(
                "dense layer expects {} features, got {features}",
                self.inputs
            )));
        }
        let mut y = Tensor::zeros(x.n, self.outputs, 1, 1);
        for n in 0..x.n {
            let row = &x.data[n * features..(n + 1) * features];
            for o in 0..self.outputs {
                let wrow = &self.weight[o * features..(o + 1) * features];
                y.data[n * self.outputs + o] =
                    self.bias[o] + wrow.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        self.input = train.then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::Numeric("backward without a training forward pass".into()))?;
        let f = self.inputs;
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        for n in 0..x.n {
            for o in 0..self.outputs {
                let gv = g.data[n * self.outputs + o];
                self.grad_bias[o] += gv;
                for i in 0..f {
                    self.grad_weight[o * f + i] += gv * x.data[n * f + i];
                    dx.data[n * f + i] += gv * self.weight[o * f + i];
                }
            }
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm),
    Relu { mask: Option<Vec<bool>> },
    MaxPool(MaxPool),
    GlobalAvgPool { shape: Option<[usize; 4]> },
    Dense(Dense),
    /// Parallel branches over the same input, concatenated along channels.
    Concat(Vec<Vec<Layer>>),
}

fn missing() -> Error {
    Error::Numeric("backward without a training forward pass".into())
}

fn forward_seq(layers: &mut [Layer], x: &Tensor, train: bool) -> Result<Tensor> {
    let mut cur = x.clone();
    for l in layers.iter_mut() {
        cur = l.forward(&cur, train)?;
    }
    Ok(cur)
}

fn backward_seq(layers: &mut [Layer], g: &Tensor) -> Result<Tensor> {
    let mut cur = g.clone();
    for l in layers.iter_mut().rev() {
        cur = l.backward(&cur)?;
    }
    Ok(cur)
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        match self {
            Layer::Conv(c) => c.forward(x, train),
            Layer::BatchNorm(b) => b.forward(x, train),
            Layer::Relu { mask } => {
                let mut y = x.clone();
                y.data.iter_mut().for_each(|v| *v = v.max(0.0));
                *mask = train.then(|| x.data.iter().map(|&v| v > 0.0).collect());
                Ok(y)
            }
            Layer::MaxPool(p) => p.forward(x, train),
            Layer::GlobalAvgPool { shape } => {
                let plane = (x.h * x.w) as f64;
                let mut y = Tensor::zeros(x.n, x.c, 1, 1);
                for (k, v) in y.data.iter_mut().enumerate() {
                    let base = k * x.h * x.w;
                    *v = x.data[base..base + x.h * x.w].iter().sum::<f64>() / plane;
                }
                *shape = train.then_some(x.shape());
                Ok(y)
            }
            Layer::Dense(d) => d.forward(x, train),
            Layer::Concat(branches) => {
                let outs = branches
                    .iter_mut()
                    .map(|b| forward_seq(b, x, train))
                    .collect::<Result<Vec<_>>>()?;
                let (h, w) = (outs[0].h, outs[0].w);
                if outs.iter().any(|o| o.h != h || o.w != w) {
                    return Err(Error::Shape("inception branches disagree on spatial size".into()));
                }
                let c: usize = outs.iter().map(|o| o.c).sum();
                let mut y = Tensor::zeros(x.n, c, h, w);
                let plane = h * w;
                for n in 0..x.n {
                    let mut off = 0;
                    for o in &outs {
                        let src = &o.data[n * o.c * plane..(n + 1) * o.c * plane];
                        let dst = y.idx(n, off, 0, 0);
                        y.data[dst..dst + o.c * plane].copy_from_slice(src);
                        off += o.c;
                    }
                }
                Ok(y)
            }
        }
    }

    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(c) => c.backward(g),
            Layer::BatchNorm(b) => b.backward(g),
            Layer::Relu { mask } => {
                let m = mask.take().ok_or_else(missing)?;
                let mut dx = g.clone();
                dx.data.iter_mut().zip(m).for_each(|(v, keep)| {
                    if !keep {
                        *v = 0.0
                    }
                });
                Ok(dx)
            }
            Layer::MaxPool(p) => p.backward(g),
            Layer::GlobalAvgPool { shape } => {
                let [n, c, h, w] = shape.take().ok_or_else(missing)?;
                let plane = (h * w) as f64;
                let mut dx = Tensor::zeros(n, c, h, w);
                for k in 0..n * c {
                    let v = g.data[k] / plane;
                    dx.data[k * h * w..(k + 1) * h * w].iter_mut().for_each(|d| *d = v);
                }
                Ok(dx)
            }
            Layer::Dense(d) => d.backward(g),
            Layer::Concat(branches) => {
                let plane = g.h * g.w;
                let mut dx: Option<Tensor> = None;
                let mut off = 0;
                for b in branches.iter_mut() {
                    let bc = branch_channels(b);
                    let mut gb = Tensor::zeros(g.n, bc, g.h, g.w);
                    for n in 0..g.n {
                        let src = g.idx(n, off, 0, 0);
                        gb.data[n * bc * plane..(n + 1) * bc * plane]
                            .copy_from_slice(&g.data[src..src + bc * plane]);
                    }
                    off += bc;
                    let d = backward_seq(b, &gb)?;
                    match &mut dx {
                        None => dx = Some(d),
                        Some(acc) => acc.data.iter_mut().zip(&d.data).for_each(|(a, v)| *a += v),
                    }
                }
                dx.ok_or_else(|| Error::Shape("empty concatenation".into()))
            }
        }
    }

    /// Visits `(values, grads)` of every trainable parameter group in a fixed order.
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        match self {
            Layer::Conv(c) => f(&mut c.weight, &mut c.grad),
            Layer::BatchNorm(b) => {
                f(&mut b.gamma, &mut b.grad_gamma);
                f(&mut b.beta, &mut b.grad_beta);
            }
            Layer::Dense(d) => {
                f(&mut d.weight, &mut d.grad_weight);
                f(&mut d.bias, &mut d.grad_bias);
            }
            Layer::Concat(branches) => {
                for b in branches {
                    for l in b {
                        l.visit_params(f);
                    }
                }
            }
            _ => {}
        }
    }

    /// Appends the piecewise-linear switch state (ReLU masks, pooling argmaxes) of the last forward pass.
    fn pattern(&self, out: &mut Vec<usize>) {
        match self {
            Layer::Relu { mask: Some(m) } => out.extend(m.iter().map(|&b| b as usize)),
            Layer::MaxPool(p) => {
                if let Some((_, arg)) = &p.cache {
                    out.extend_from_slice(arg);
                }
            }
            Layer::Concat(branches) => {
                for b in branches {
                    for l in b {
                        l.pattern(out);
                    }
                }
            }
            _ => {}
        }
    }

    fn visit_stats(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        match self {
            Layer::BatchNorm(b) => {
                f(&mut b.running_mean);
                f(&mut b.running_var);
            }
            Layer::Concat(branches) => {
                for b in branches {
                    for l in b {
                        l.visit_stats(f);
                    }
                }
            }
            _ => {}
        }
    }

    fn init(&mut self, rng: &mut impl Rng) {
        match self {
            Layer::Conv(c) => c.init(rng),
            Layer::Dense(d) => d.init(rng),
            Layer::Concat(branches) => {
                for b in branches {
                    for l in b {
                        l.init(rng);
                    }
                }
            }
            _ => {}
        }
    }
}

fn branch_channels(branch: &[Layer]) -> usize {
    branch
        .iter()
        .rev()
        .find_map(|l| match l {
            Layer::Conv(c) => Some(c.out_c),
            Layer::BatchNorm(b) => Some(b.channels),
            _ => None,
        })
        .unwrap_or(0)
}

/// Convolution, batch normalization, ReLU.
fn conv_unit(in_c: usize, out_c: usize, k: (usize, usize), stride: usize, pad: (usize, usize)) -> Vec<Layer> {
    vec![
        Layer::Conv(Conv2d::new(in_c, out_c, k, stride, pad)),
        Layer::BatchNorm(BatchNorm::new(out_c)),
        Layer::Relu { mask: None },
    ]
}

/// Four-branch inception block; `out_c` must be divisible by 4.
fn inception(in_c: usize, out_c: usize) -> Layer {
    let b = out_c / 4;
    let one = (1, 1);
    let none = (0, 0);
    let mut pool = vec![Layer::MaxPool(MaxPool::new(3, 1, 1))];
    pool.extend(conv_unit(in_c, b, one, 1, none));
    let mut factorized = conv_unit(in_c, b, one, 1, none);
    factorized.extend(conv_unit(b, b, (3, 1), 1, (1, 0)));
    factorized.extend(conv_unit(b, b, (1, 3), 1, (0, 1)));
    let mut square = conv_unit(in_c, b, one, 1, none);
    square.extend(conv_unit(b, b, (3, 3), 1, (1, 1)));
    Layer::Concat(vec![conv_unit(in_c, b, one, 1, none), square, factorized, pool])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetSpec {
    pub input_size: usize,
    pub stem: [usize; 3],
    pub block_channels: usize,
    pub classes: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            input_size: 64,
            stem: [8, 8, 16],
            block_channels: 32,
            classes: crate::datasetio::ViewClass::COUNT,
        }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.block_channels == 0 || self.block_channels % 4 != 0 {
            return Err(Error::Config {
                field: "block_channels",
                reason: format!("{} is not a positive multiple of 4", self.block_channels),
            });
        }
        if self.stem.contains(&0) || self.classes < 2 {
            return Err(Error::Config {
                field: "stem",
                reason: "channel counts must be positive and classes at least 2".into(),
            });
        }
        // stem: 3x3/2 valid, 3x3 valid, 3x3 same, pool 3/2, block, pool 3/2, block
        let after_stem = (self.input_size.saturating_sub(3) / 2 + 1).saturating_sub(2);
        let pooled = after_stem.saturating_sub(3) / 2 + 1;
        if self.input_size < 23 || pooled < 3 {
            return Err(Error::Config {
                field: "input_size",
                reason: format!("{} is too small for the network", self.input_size),
            });
        }
        Ok(())
    }
}

/// Compact Inception-style classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniInceptionNet {
    pub spec: NetSpec,
    pub layers: Vec<Layer>,
}

impl MiniInceptionNet {
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let [s0, s1, s2] = spec.stem;
        let bc = spec.block_channels;
        let mut layers = Vec::new();
        layers.extend(conv_unit(1, s0, (3, 3), 2, (0, 0)));
        layers.extend(conv_unit(s0, s1, (3, 3), 1, (0, 0)));
        layers.extend(conv_unit(s1, s2, (3, 3), 1, (1, 1)));
        layers.push(Layer::MaxPool(MaxPool::new(3, 2, 0)));
        layers.push(inception(s2, bc));
        layers.push(Layer::MaxPool(MaxPool::new(3, 2, 0)));
        layers.push(inception(bc, bc));
        layers.push(Layer::GlobalAvgPool { shape: None });
        layers.push(Layer::Dense(Dense::new(bc, spec.classes)));
        let mut rng = rng_for(seed, 0x4e45);
        for l in &mut layers {
            l.init(&mut rng);
        }
        Ok(Self { spec, layers })
    }

    /// Logits as an `N x classes x 1 x 1` tensor.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        if x.c != 1 || x.h != self.spec.input_size || x.w != self.spec.input_size {
            return Err(Error::Shape(format!(
                "network expects 1x{0}x{0} inputs, got {1}x{2}x{3}",
                self.spec.input_size, x.c, x.h, x.w
            )));
        }
        forward_seq(&mut self.layers, x, train)
    }

    /// Switch state of every ReLU and max-pool from the most recent training forward pass.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.pattern(&mut out);
        }
        out
    }

    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        backward_seq(&mut self.layers, grad_logits)
    }

    fn each_param(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        for l in &mut self.layers {
            l.visit_params(f);
        }
    }

    fn each_stat(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            l.visit_stats(f);
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.each_param(&mut |p, _| n += p.len());
        n
    }

    pub fn params(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.each_param(&mut |p, _| out.extend_from_slice(p));
        out
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        let n = self.param_count();
        if values.len() != n {
            return Err(Error::Shape(format!("{} parameters for a {n}-parameter network", values.len())));
        }
        let mut off = 0;
        self.each_param(&mut |p, _| {
            p.copy_from_slice(&values[off..off + p.len()]);
            off += p.len();
        });
        Ok(())
    }

    pub fn grads(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.each_param(&mut |_, g| out.extend_from_slice(g));
        out
    }

    pub fn zero_grads(&mut self) {
        self.each_param(&mut |_, g| g.iter_mut().for_each(|v| *v = 0.0));
    }

    pub fn stats(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.each_stat(&mut |s| out.extend_from_slice(s));
        out
    }

    pub fn set_stats(&mut self, values: &[f64]) -> Result<()> {
        let n = self.stats().len();
        if values.len() != n {
            return Err(Error::Shape(format!("{} statistics, expected {n}", values.len())));
        }
        let mut off = 0;
        self.each_stat(&mut |s| {
            s.copy_from_slice(&values[off..off + s.len()]);
            off += s.len();
        });
        Ok(())
    }

    /// Mean softmax cross-entropy of a training-mode pass; leaves gradients accumulated.
    pub fn loss_and_backward(&mut self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(x, true)?;
        let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
        self.backward(&grad)?;
        Ok(loss)
    }

    /// Class probabilities in inference mode.
    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let logits = self.forward(x, false)?;
        Ok((0..logits.n)
            .map(|n| softmax(&logits.data[n * logits.c..(n + 1) * logits.c]))
            .collect())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy over the batch and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, c) = (logits.n, logits.c * logits.h * logits.w);
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    let mut grad = Tensor::zeros(logits.n, logits.c, logits.h, logits.w);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Domain(format!("label {y} outside {c} classes")));
        }
        let p = softmax(&logits.data[i * c..(i + 1) * c]);
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        for k in 0..c {
            grad.data[i * c + k] = (p[k] - if k == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdadeltaConfig {
    pub lr: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub decay: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self {
            lr: 1.0,
            rho: 0.95,
            epsilon: 1e-8,
            decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    pub acc_grad: Vec<f64>,
    pub acc_delta: Vec<f64>,
    pub iterations: u64,
}

impl AdadeltaState {
    pub fn new(n: usize) -> Self {
        Self {
            acc_grad: vec![0.0; n],
            acc_delta: vec![0.0; n],
            iterations: 0,
        }
    }
}

/// One Adadelta update in place; rejects non-finite gradients before touching anything.
pub fn adadelta_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdadeltaState,
    cfg: &AdadeltaConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.acc_grad.len() != params.len() {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at parameter {i}")));
    }
    let lr = cfg.lr / (1.0 + cfg.decay * state.iterations as f64);
    for i in 0..params.len() {
        let g = grads[i];
        let ag = cfg.rho * state.acc_grad[i] + (1.0 - cfg.rho) * g * g;
        let update = g * (state.acc_delta[i] + cfg.epsilon).sqrt() / (ag + cfg.epsilon).sqrt();
        params[i] -= lr * update;
        state.acc_grad[i] = ag;
        state.acc_delta[i] = cfg.rho * state.acc_delta[i] + (1.0 - cfg.rho) * update * update;
    }
    state.iterations += 1;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: GrayImage,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: Option<ClassifyAugSpec>,
    pub optimizer: AdadeltaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            seed: 0,
            augment: None,
            optimizer: AdadeltaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

impl EpochLog {
    pub fn to_record(&self) -> String {
        format!(
            "{}|{:.6}|{:.6}|{:.6}",
            self.epoch, self.train_loss, self.val_loss, self.val_accuracy
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    /// Epoch whose weights were kept; `None` when no epochs ran.
    pub best_epoch: Option<usize>,
    pub trained: bool,
}

/// Mean loss and accuracy in inference mode.
pub fn evaluate(net: &mut MiniInceptionNet, samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluation samples"));
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in samples.chunks(32) {
        let imgs: Vec<&GrayImage> = chunk.iter().map(|s| &s.image).collect();
        let x = Tensor::from_images(&imgs)?;
        let logits = net.forward(&x, false)?;
        let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
        let (l, _) = softmax_cross_entropy(&logits, &labels)?;
        loss += l * chunk.len() as f64;
        for (i, s) in chunk.iter().enumerate() {
            let c = logits.c;
            if argmax(&logits.data[i * c..(i + 1) * c]) == s.label {
                correct += 1;
            }
        }
    }
    Ok((loss / samples.len() as f64, correct as f64 / samples.len() as f64))
}

/// Mini-batch training with Adadelta; keeps the weights of the epoch with the lowest
/// validation loss (training loss when no validation set is given).
pub fn train(
    net: &mut MiniInceptionNet,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if cfg.batch_size == 0 {
        return Err(Error::Config {
            field: "batch_size",
            reason: "must be positive".into(),
        });
    }
    if let Some(a) = &cfg.augment {
        a.validate()?;
    }
    if cfg.epochs == 0 {
        return Ok(TrainReport {
            log: Vec::new(),
            best_epoch: None,
            trained: false,
        });
    }
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training samples"));
    }
    let mut state = AdadeltaState::new(net.param_count());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<f64>, Vec<f64>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = rng_for(cfg.seed, epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let imgs = batch
                .iter()
                .map(|&i| match &cfg.augment {
                    Some(spec) => augment_for_classification(&train_set[i].image, spec, &mut rng),
                    None => Ok(train_set[i].image.clone()),
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&GrayImage> = imgs.iter().collect();
            let x = Tensor::from_images(&refs)?;
            let labels: Vec<usize> = batch.iter().map(|&i| train_set[i].label).collect();
            net.zero_grads();
            let loss = net.loss_and_backward(&x, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss became {loss} in epoch {epoch}")));
            }
            epoch_loss += loss * batch.len() as f64;
            let grads = net.grads();
            let mut params = net.params();
            adadelta_step(&mut params, &grads, &mut state, &cfg.optimizer)?;
            net.set_params(&params)?;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            evaluate(net, val_set)?
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        let score = if val_set.is_empty() { train_loss } else { val_loss };
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, epoch, net.params(), net.stats()));
        }
    }
    let (_, best_epoch, params, stats) = best.expect("at least one epoch ran");
    net.set_params(&params)?;
    net.set_stats(&stats)?;
    Ok(TrainReport {
        log,
        best_epoch: Some(best_epoch),
        trained: true,
    })
}

/// Per-parameter comparison of the analytic gradient against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// False when a ReLU or max-pool switch flipped inside the probe interval,
    /// where the central difference does not estimate the derivative.
    pub smooth: bool,
}

impl GradCheck {
    pub fn relative_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(1e-6)
    }
}

pub fn gradient_check(
    net: &mut MiniInceptionNet,
    x: &Tensor,
    labels: &[usize],
    indices: &[usize],
    h: f64,
) -> Result<Vec<GradCheck>> {
    let stats = net.stats();
    net.zero_grads();
    net.loss_and_backward(x, labels)?;
    let analytic = net.grads();
    let base = net.params();
    // backward consumes the caches, so take the reference pattern from a fresh pass
    net.set_stats(&stats)?;
    net.forward(x, true)?;
    let base_pattern = net.activation_pattern();
    let loss_at = |net: &mut MiniInceptionNet, i: usize, v: f64| -> Result<(f64, bool)> {
        let mut p = base.clone();
        p[i] = v;
        net.set_params(&p)?;
        let logits = net.forward(x, true)?;
        Ok((softmax_cross_entropy(&logits, labels)?.0, net.activation_pattern() == base_pattern))
    };
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= base.len() {
            return Err(Error::Domain(format!("parameter index {i} out of range")));
        }
        let (plus, sp) = loss_at(net, i, base[i] + h)?;
        let (minus, sm) = loss_at(net, i, base[i] - h)?;
        out.push(GradCheck {
            index: i,
            analytic: analytic[i],
            numeric: (plus - minus) / (2.0 * h),
            smooth: sp && sm,
        });
    }
    net.set_params(&base)?;
    net.set_stats(&stats)?;
    net.zero_grads();
    Ok(out)
}

const CHECKPOINT_MAGIC: &str = "ECHONET 1";

/// Trained weights, batch-norm statistics and the mean image used for preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: MiniInceptionNet,
    pub mean: GrayImage,
}

impl Checkpoint {
    pub fn encode(&mut self) -> Vec<u8> {
        let s = self.net.spec;
        let params = self.net.params();
        let stats = self.net.stats();
        let mut out = Vec::new();
        let _ = write!(
            out,
            "{CHECKPOINT_MAGIC}\ninput {}\nstem {} {} {}\nblock {}\nclasses {}\nparams {}\nstats {}\nmean {} {}\nend\n",
            s.input_size,
            s.stem[0],
            s.stem[1],
            s.stem[2],
            s.block_channels,
            s.classes,
            params.len(),
            stats.len(),
            self.mean.width(),
            self.mean.height()
        );
        for v in params.iter().chain(&stats).chain(self.mean.pixels()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(data: &[u8]) -> std::result::Result<Self, String> {
        let end = data
            .windows(4)
            .position(|w| w == b"end\n")
            .ok_or("missing header terminator")?;
        let header = std::str::from_utf8(&data[..end]).map_err(|_| "header is not UTF-8")?;
        let mut lines = header.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err("unsupported checkpoint version".into());
        }
        let mut field = |name: &str, n: usize| -> std::result::Result<Vec<usize>, String> {
            let line = lines.next().ok_or(format!("missing `{name}`"))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(format!("expected `{name}`, found `{line}`"));
            }
            let vals = parts
                .map(|p| p.parse::<usize>().map_err(|e| format!("{name}: {e}")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if vals.len() != n {
                return Err(format!("`{name}` needs {n} values"));
            }
            Ok(vals)
        };
        let input = field("input", 1)?[0];
        let stem = field("stem", 3)?;
        let block = field("block", 1)?[0];
        let classes = field("classes", 1)?[0];
        let n_params = field("params", 1)?[0];
        let n_stats = field("stats", 1)?[0];
        let mean_dims = field("mean", 2)?;
        let spec = NetSpec {
            input_size: input,
            stem: [stem[0], stem[1], stem[2]],
            block_channels: block,
            classes,
        };
        let mut net = MiniInceptionNet::new(spec, 0).map_err(|e| e.to_string())?;
        let body = &data[end + 4..];
        let n_mean = mean_dims[0] * mean_dims[1];
        let expected = n_params + n_stats + n_mean;
        if body.len() != expected * 8 {
            return Err(format!("payload holds {} bytes, expected {}", body.len(), expected * 8));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        net.set_params(&values[..n_params]).map_err(|e| e.to_string())?;
        net.set_stats(&values[n_params..n_params + n_stats])
            .map_err(|e| e.to_string())?;
        let mean = GrayImage::from_pixels(
            mean_dims[0],
            mean_dims[1],
            values[n_params + n_stats..].to_vec(),
            ValueDomain::Raw,
        )
        .map_err(|e| e.to_string())?;
        Ok(Self { net, mean })
    }

    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&data).map_err(|r| Error::format(path, r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> NetSpec {
        NetSpec {
            input_size: 32,
            stem: [3, 4, 4],
            block_channels: 8,
            classes: 5,
        }
    }

    fn random_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = rng_for(seed, 9);
        let data = (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(n, c, h, w, data).unwrap()
    }

    /// Direct definition of a zero-padded strided cross-correlation.
    fn conv_oracle(x: &Tensor, conv: &Conv2d) -> Vec<f64> {
        let oh = (x.h + 2 * conv.pad_h - conv.kh) / conv.stride + 1;
        let ow = (x.w + 2 * conv.pad_w - conv.kw) / conv.stride + 1;
        let mut out = Vec::new();
        for n in 0..x.n {
            for o in 0..conv.out_c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for i in 0..conv.in_c {
                            for ky in 0..conv.kh {
                                for kx in 0..conv.kw {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad_h as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad_w as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    s += conv.weight[((o * conv.in_c + i) * conv.kh + ky) * conv.kw + kx]
                                        * x.at(n, i, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_definition() {
        for (k, s, p) in [((3, 3), 1, (1, 1)), ((3, 3), 2, (0, 0)), ((3, 1), 1, (1, 0)), ((1, 3), 2, (0, 1)), ((1, 1), 1, (0, 0))] {
            let mut conv = Conv2d::new(2, 3, k, s, p);
            let mut rng = rng_for(4, 4);
            conv.init(&mut rng);
            let x = random_tensor(2, 2, 7, 6, 1);
            let y = conv.apply(&x).unwrap();
            let o = conv_oracle(&x, &conv);
            assert_eq!(y.data.len(), o.len());
            for (a, b) in y.data.iter().zip(&o) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factorized_kernel_matches_rank_one_square() {
        let a = [0.3, -1.2, 0.7];
        let b = [1.1, 0.4, -0.5];
        let mut square = Conv2d::new(1, 1, (3, 3), 1, (1, 1));
        for ky in 0..3 {
            for kx in 0..3 {
                square.weight[ky * 3 + kx] = a[ky] * b[kx];
            }
        }
        let mut col = Conv2d::new(1, 1, (3, 1), 1, (1, 0));
        col.weight.copy_from_slice(&a);
        let mut row = Conv2d::new(1, 1, (1, 3), 1, (0, 1));
        row.weight.copy_from_slice(&b);
        let x = random_tensor(1, 1, 9, 11, 2);
        let y1 = square.apply(&x).unwrap();
        let y2 = row.apply(&col.apply(&x).unwrap()).unwrap();
        for (p, q) in y1.data.iter().zip(&y2.data) {
            assert!((p - q).abs() < 1e-10);
        }
        let c = 16;
        let full = Conv2d::new(c, c, (3, 3), 1, (1, 1)).param_count();
        let fact = Conv2d::new(c, c, (3, 1), 1, (1, 0)).param_count()
            + Conv2d::new(c, c, (1, 3), 1, (0, 1)).param_count();
        assert_eq!(fact * 3, full * 2);
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let logits = Tensor::zeros(3, 11, 1, 1);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 5, 10]).unwrap();
        assert!((loss - 11f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn adadelta_first_step() {
        let mut w = [1.0];
        let mut st = AdadeltaState::new(1);
        adadelta_step(&mut w, &[1.0], &mut st, &AdadeltaConfig::default()).unwrap();
        assert!((w[0] - 1.0 + 4.4721e-4).abs() < 1e-7, "{}", w[0]);
        let err = adadelta_step(&mut w, &[f64::NAN], &mut st, &AdadeltaConfig::default());
        assert!(matches!(err, Err(Error::Numeric(_))));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5, 0.1]), 1);
        assert_eq!(argmax(&[1.0; 4]), 0);
    }

    #[test]
    fn gradient_check_small_network() {
        let mut net = MiniInceptionNet::new(tiny_spec(), 3).unwrap();
        let x = random_tensor(3, 1, 32, 32, 5);
        let n = net.param_count();
        let idx: Vec<usize> = (0..n).step_by(n / 40).collect();
        let checks = gradient_check(&mut net, &x, &[0, 2, 4], &idx, 1e-5).unwrap();
        for c in checks {
            assert!(c.relative_error() < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn zero_epochs_leaves_weights() {
        let mut net = MiniInceptionNet::new(tiny_spec(), 1).unwrap();
        let before = net.params();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let report = train(&mut net, &[], &[], &cfg).unwrap();
        assert!(!report.trained);
        assert_eq!(net.params(), before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut net = MiniInceptionNet::new(tiny_spec(), 7).unwrap();
        let x = random_tensor(2, 1, 32, 32, 1);
        net.forward(&x, true).unwrap();
        let mean = GrayImage::filled(4, 3, 17.5, ValueDomain::Raw);
        let mut ck = Checkpoint { net, mean };
        let bytes = ck.encode();
        let mut back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back.net.params(), ck.net.params());
        assert_eq!(back.net.stats(), ck.net.stats());
        assert_eq!(back.mean, ck.mean);
        let p1 = ck.net.predict(&x).unwrap();
        let p2 = back.net.predict(&x).unwrap();
        assert_eq!(p1, p2);
        assert!(Checkpoint::decode(b"ECHONET 9\nend\n").is_err());
    }
}
