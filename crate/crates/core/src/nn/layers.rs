//! Network layers with analytic forward/backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`. Batch
//! samples are processed independently (and in parallel) except for batch
//! normalization, which couples them through batch statistics; gradient
//! accumulation across samples always reduces in sample order, so results are
//! independent of thread count.

use rayon::prelude::*;

use super::tensor::Tensor4;
use crate::{Error, Result};

/// Dot product with four independent accumulators (fixed reduction order,
/// vectorizes without reassociation).
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let k = i * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in chunks * 4..n {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// One learnable tensor plus its gradient accumulator.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
    pub shape: Vec<usize>,
    /// Whether L2 weight decay applies (conv/FC weights yes; biases and
    /// normalization parameters no).
    pub decay: bool,
}

impl ParamTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>, decay: bool) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(data.len(), n);
        Self {
            grad: vec![0.0; n],
            data,
            shape,
            decay,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Mutable view of one parameter tensor handed to the optimizer.
pub struct ParamRef<'a> {
    pub data: &'a mut Vec<f64>,
    pub grad: &'a Vec<f64>,
    pub decay: bool,
}

impl ParamTensor {
    pub fn as_ref_mut(&mut self) -> ParamRef<'_> {
        ParamRef {
            data: &mut self.data,
            grad: &self.grad,
            decay: self.decay,
        }
    }
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

/// 2-D convolution with stride, dilation, and symmetric zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    /// (out_ch, in_ch, kh, kw)
    pub weight: ParamTensor,
    /// (out_ch)
    pub bias: ParamTensor,
    cache_x: Option<Tensor4>,
}

impl Conv2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Self {
        assert_eq!(weight.len(), out_ch * in_ch * kh * kw);
        assert_eq!(bias.len(), out_ch);
        Self {
            in_ch,
            out_ch,
            kh,
            kw,
            stride,
            dilation,
            padding,
            weight: ParamTensor::new(vec![out_ch, in_ch, kh, kw], weight, true),
            bias: ParamTensor::new(vec![out_ch], bias, false),
            cache_x: None,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let eff_h = self.dilation * (self.kh - 1) + 1;
        let eff_w = self.dilation * (self.kw - 1) + 1;
        let h_p = h + 2 * self.padding;
        let w_p = w + 2 * self.padding;
        if h_p < eff_h || w_p < eff_w {
            return Err(Error::Contract(format!(
                "conv input {h}x{w} too small for effective kernel {eff_h}x{eff_w}"
            )));
        }
        Ok((
            (h_p - eff_h) / self.stride + 1,
            (w_p - eff_w) / self.stride + 1,
        ))
    }

    /// Receptive-field extent of a single output position, in input pixels.
    pub fn receptive_extent(&self) -> usize {
        self.dilation * (self.kh - 1) + 1
    }

    /// Lowers one sample into a (K x P) patch matrix,
    /// K = in_ch*kh*kw, P = oh*ow. Out-of-bounds reads are zero.
    fn im2col(&self, x: &Tensor4, n: usize, oh: usize, ow: usize, col: &mut [f64]) {
        let (h, w) = (x.h(), x.w());
        let p_total = oh * ow;
        let mut k = 0;
        for c in 0..self.in_ch {
            let plane = x.plane(n, c);
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = &mut col[k * p_total..(k + 1) * p_total];
                    let dy = (ky * self.dilation) as isize - self.padding as isize;
                    let dx = (kx * self.dilation) as isize - self.padding as isize;
                    let mut p = 0;
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as isize + dy;
                        if iy < 0 || iy >= h as isize {
                            row[p..p + ow].iter_mut().for_each(|v| *v = 0.0);
                            p += ow;
                            continue;
                        }
                        let base = iy as usize * w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride) as isize + dx;
                            row[p] = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                plane[base + ix as usize]
                            };
                            p += 1;
                        }
                    }
                    k += 1;
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        assert_eq!(x.c(), self.in_ch, "conv2d input channel mismatch");
        let (oh, ow) = self.out_dims(x.h(), x.w())?;
        let kdim = self.in_ch * self.kh * self.kw;
        let p_total = oh * ow;
        let mut out = Tensor4::zeros(x.n(), self.out_ch, oh, ow);

        let weight = &self.weight.data;
        let bias = &self.bias.data;
        let chw_out = self.out_ch * p_total;
        let out_slice = out.as_mut_slice();
        out_slice
            .par_chunks_mut(chw_out)
            .enumerate()
            .for_each(|(n, out_n)| {
                let mut col = vec![0.0; kdim * p_total];
                self.im2col(x, n, oh, ow, &mut col);
                for o in 0..self.out_ch {
                    let orow = &mut out_n[o * p_total..(o + 1) * p_total];
                    orow.iter_mut().for_each(|v| *v = bias[o]);
                    let wrow = &weight[o * kdim..(o + 1) * kdim];
                    for (k, &wv) in wrow.iter().enumerate() {
                        if wv == 0.0 {
                            continue;
                        }
                        let crow = &col[k * p_total..(k + 1) * p_total];
                        for (ov, &cv) in orow.iter_mut().zip(crow) {
                            *ov += wv * cv;
                        }
                    }
                }
            });

        self.cache_x = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let x = self.cache_x.take().expect("conv2d backward before forward");
        let (oh, ow) = (gy.h(), gy.w());
        let kdim = self.in_ch * self.kh * self.kw;
        let p_total = oh * ow;
        let weight = &self.weight.data;

        struct SampleGrads {
            gw: Vec<f64>,
            gb: Vec<f64>,
            gx: Vec<f64>,
        }

        let per_sample: Vec<SampleGrads> = (0..x.n())
            .into_par_iter()
            .map(|n| {
                let mut col = vec![0.0; kdim * p_total];
                self.im2col(&x, n, oh, ow, &mut col);

                let mut gw = vec![0.0; weight.len()];
                let mut gb = vec![0.0; self.out_ch];
                // grad wrt weights and bias
                for o in 0..self.out_ch {
                    let gyo = gy.plane(n, o);
                    gb[o] = gyo.iter().sum();
                    let gwrow = &mut gw[o * kdim..(o + 1) * kdim];
                    for (k, gwk) in gwrow.iter_mut().enumerate() {
                        let crow = &col[k * p_total..(k + 1) * p_total];
                        *gwk = dot4(gyo, crow);
                    }
                }
                // grad wrt col, then scatter back to input (col2im transpose)
                let mut gcol = vec![0.0; kdim * p_total];
                for o in 0..self.out_ch {
                    let gyo = gy.plane(n, o);
                    let wrow = &weight[o * kdim..(o + 1) * kdim];
                    for (k, &wv) in wrow.iter().enumerate() {
                        if wv == 0.0 {
                            continue;
                        }
                        let grow = &mut gcol[k * p_total..(k + 1) * p_total];
                        for (gv, &gyv) in grow.iter_mut().zip(gyo) {
                            *gv += wv * gyv;
                        }
                    }
                }
                let (h, w) = (x.h(), x.w());
                let mut gx = vec![0.0; self.in_ch * h * w];
                let mut k = 0;
                for c in 0..self.in_ch {
                    let gplane = &mut gx[c * h * w..(c + 1) * h * w];
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let grow = &gcol[k * p_total..(k + 1) * p_total];
                            let dy = (ky * self.dilation) as isize - self.padding as isize;
                            let dx = (kx * self.dilation) as isize - self.padding as isize;
                            let mut p = 0;
                            for oy in 0..oh {
                                let iy = (oy * self.stride) as isize + dy;
                                if iy < 0 || iy >= h as isize {
                                    p += ow;
                                    continue;
                                }
                                let base = iy as usize * w;
                                for ox in 0..ow {
                                    let ix = (ox * self.stride) as isize + dx;
                                    if ix >= 0 && ix < w as isize {
                                        gplane[base + ix as usize] += grow[p];
                                    }
                                    p += 1;
                                }
                            }
                            k += 1;
                        }
                    }
                }
                SampleGrads { gw, gb, gx }
            })
            .collect();

        // Deterministic reduction in sample order.
        let mut gx_out = Tensor4::zeros(x.n(), self.in_ch, x.h(), x.w());
        for (n, sg) in per_sample.iter().enumerate() {
            gx_out.sample_mut(n).copy_from_slice(&sg.gx);
            for (gw, &v) in self.weight.grad.iter_mut().zip(&sg.gw) {
                *gw += v;
            }
            for (gb, &v) in self.bias.grad.iter_mut().zip(&sg.gb) {
                *gb += v;
            }
        }
        gx_out
    }

    pub fn params_mut(&mut self) -> Vec<ParamRef<'_>> {
        vec![self.weight.as_ref_mut(), self.bias.as_ref_mut()]
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }
}

// ---------------------------------------------------------------------------
// MaxPool2d
// ---------------------------------------------------------------------------

/// Max pooling. Gradient routes to the first maximal element of each window
/// in row-major order.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub pool: usize,
    pub stride: usize,
    cache: Option<(usize, usize, usize, usize, Vec<usize>)>, // input shape + argmax
}

impl MaxPool2d {
    pub fn new(pool: usize, stride: usize) -> Self {
        Self {
            pool,
            stride,
            cache: None,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h < self.pool || w < self.pool {
            return Err(Error::Contract(format!(
                "maxpool input {h}x{w} smaller than pool {}",
                self.pool
            )));
        }
        Ok((
            (h - self.pool) / self.stride + 1,
            (w - self.pool) / self.stride + 1,
        ))
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let (oh, ow) = self.out_dims(x.h(), x.w())?;
        let (n, c, h, w) = x.shape();
        let mut out = Tensor4::zeros(n, c, oh, ow);
        let mut argmax = vec![0usize; n * c * oh * ow];
        let mut q = 0;
        for ni in 0..n {
            for ci in 0..c {
                let plane = x.plane(ni, ci);
                let oplane = out.plane_mut(ni, ci);
                let mut p = 0;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let y0 = oy * self.stride;
                        let x0 = ox * self.stride;
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = y0 * w + x0;
                        for dy in 0..self.pool {
                            for dx in 0..self.pool {
                                let idx = (y0 + dy) * w + (x0 + dx);
                                let v = plane[idx];
                                if v > best {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                        oplane[p] = best;
                        argmax[q] = best_idx;
                        p += 1;
                        q += 1;
                    }
                }
            }
        }
        self.cache = Some((n, c, h, w, argmax));
        Ok(out)
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let (n, c, h, w, argmax) = self.cache.take().expect("maxpool backward before forward");
        let mut gx = Tensor4::zeros(n, c, h, w);
        let mut q = 0;
        for ni in 0..n {
            for ci in 0..c {
                let gplane = gx.plane_mut(ni, ci);
                for &gv in gy.plane(ni, ci) {
                    gplane[argmax[q]] += gv;
                    q += 1;
                }
            }
        }
        gx
    }
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

/// Per-channel batch normalization with running statistics for inference.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    /// Scale γ, shape (channels).
    pub gamma: ParamTensor,
    /// Shift β, shape (channels).
    pub beta: ParamTensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Tensor4,
    inv_std: Vec<f64>,
    train: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma: ParamTensor::new(vec![channels], vec![1.0; channels], false),
            beta: ParamTensor::new(vec![channels], vec![0.0; channels], false),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4> {
        assert_eq!(x.c(), self.channels, "batchnorm channel mismatch");
        let (n, c, h, w) = x.shape();
        let m = n * h * w;
        if train && m < 2 {
            return Err(Error::Contract(
                "batchnorm training mode needs at least 2 elements per channel".into(),
            ));
        }
        let mut out = Tensor4::zeros(n, c, h, w);
        let mut x_hat = Tensor4::zeros(n, c, h, w);
        let mut inv_std = vec![0.0; c];

        for ci in 0..c {
            let (mean, var) = if train {
                let mut sum = 0.0;
                for ni in 0..n {
                    sum += x.plane(ni, ci).iter().sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut ss = 0.0;
                for ni in 0..n {
                    ss += x
                        .plane(ni, ci)
                        .iter()
                        .map(|&v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = ss / m as f64; // biased, used for normalization
                self.running_mean[ci] =
                    (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean;
                let var_unbiased = if m > 1 { ss / (m - 1) as f64 } else { var };
                self.running_var[ci] =
                    (1.0 - self.momentum) * self.running_var[ci] + self.momentum * var_unbiased;
                (mean, var)
            } else {
                (self.running_mean[ci], self.running_var[ci])
            };
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[ci] = istd;
            let g = self.gamma.data[ci];
            let b = self.beta.data[ci];
            for ni in 0..n {
                let xp = x.plane(ni, ci);
                let xh = x_hat.plane_mut(ni, ci);
                for (o, &v) in xh.iter_mut().zip(xp) {
                    *o = (v - mean) * istd;
                }
                let op = out.plane_mut(ni, ci);
                let xh = x_hat.plane(ni, ci);
                for (o, &v) in op.iter_mut().zip(xh) {
                    *o = g * v + b;
                }
            }
        }
        self.cache = Some(BnCache {
            x_hat,
            inv_std,
            train,
        });
        Ok(out)
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let cache = self
            .cache
            .take()
            .expect("batchnorm backward before forward");
        let (n, c, h, w) = gy.shape();
        let m = (n * h * w) as f64;
        let mut gx = Tensor4::zeros(n, c, h, w);
        for ci in 0..c {
            let g = self.gamma.data[ci];
            let istd = cache.inv_std[ci];
            let mut sum_gy = 0.0;
            let mut sum_gy_xhat = 0.0;
            for ni in 0..n {
                let gp = gy.plane(ni, ci);
                let xh = cache.x_hat.plane(ni, ci);
                for (&gv, &xv) in gp.iter().zip(xh) {
                    sum_gy += gv;
                    sum_gy_xhat += gv * xv;
                }
            }
            self.gamma.grad[ci] += sum_gy_xhat;
            self.beta.grad[ci] += sum_gy;

            if cache.train {
                for ni in 0..n {
                    let gp = gy.plane(ni, ci);
                    let xh = cache.x_hat.plane(ni, ci);
                    let gxp = gx.plane_mut(ni, ci);
                    for ((o, &gv), &xv) in gxp.iter_mut().zip(gp).zip(xh) {
                        *o = g * istd * (gv - sum_gy / m - xv * sum_gy_xhat / m);
                    }
                }
            } else {
                for ni in 0..n {
                    let gp = gy.plane(ni, ci);
                    let gxp = gx.plane_mut(ni, ci);
                    for (o, &gv) in gxp.iter_mut().zip(gp) {
                        *o = g * istd * gv;
                    }
                }
            }
        }
        gx
    }

    pub fn params_mut(&mut self) -> Vec<ParamRef<'_>> {
        vec![self.gamma.as_ref_mut(), self.beta.as_ref_mut()]
    }

    pub fn zero_grad(&mut self) {
        self.gamma.zero_grad();
        self.beta.zero_grad();
    }
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        let mut out = x.clone();
        let mask: Vec<bool> = x.as_slice().iter().map(|&v| v > 0.0).collect();
        for (v, &keep) in out.as_mut_slice().iter_mut().zip(&mask) {
            if !keep {
                *v = 0.0;
            }
        }
        self.mask = Some(mask);
        out
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let mask = self.mask.take().expect("relu backward before forward");
        let mut gx = gy.clone();
        for (g, keep) in gx.as_mut_slice().iter_mut().zip(mask) {
            if !keep {
                *g = 0.0;
            }
        }
        gx
    }
}

// ---------------------------------------------------------------------------
// Linear (fully connected over flattened features)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// (out, in)
    pub weight: ParamTensor,
    pub bias: ParamTensor,
    cache_x: Option<Tensor4>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        assert_eq!(weight.len(), in_features * out_features);
        assert_eq!(bias.len(), out_features);
        Self {
            in_features,
            out_features,
            weight: ParamTensor::new(vec![out_features, in_features], weight, true),
            bias: ParamTensor::new(vec![out_features], bias, false),
            cache_x: None,
        }
    }

    /// Input (n, c, h, w) with c*h*w == in_features; output (n, out, 1, 1).
    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let feat = x.c() * x.h() * x.w();
        if feat != self.in_features {
            return Err(Error::Contract(format!(
                "linear expects {} features, got {feat}",
                self.in_features
            )));
        }
        let mut out = Tensor4::zeros(x.n(), self.out_features, 1, 1);
        for n in 0..x.n() {
            let xv = x.sample(n);
            let ov = out.sample_mut(n);
            for o in 0..self.out_features {
                let wrow = &self.weight.data[o * self.in_features..(o + 1) * self.in_features];
                ov[o] = self.bias.data[o] + wrow.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        self.cache_x = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let x = self.cache_x.take().expect("linear backward before forward");
        let mut gx = Tensor4::zeros(x.n(), x.c(), x.h(), x.w());
        for n in 0..x.n() {
            let xv = x.sample(n);
            let gyv = gy.sample(n);
            let gxv = gx.sample_mut(n);
            for o in 0..self.out_features {
                let g = gyv[o];
                self.bias.grad[o] += g;
                let wrow = &self.weight.data[o * self.in_features..(o + 1) * self.in_features];
                let gwrow = &mut self.weight.grad[o * self.in_features..(o + 1) * self.in_features];
                for i in 0..self.in_features {
                    gwrow[i] += g * xv[i];
                    gxv[i] += g * wrow[i];
                }
            }
        }
        gx
    }

    pub fn params_mut(&mut self) -> Vec<ParamRef<'_>> {
        vec![self.weight.as_ref_mut(), self.bias.as_ref_mut()]
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }
}

// ---------------------------------------------------------------------------
// Bilinear resize
// ---------------------------------------------------------------------------

/// Bilinear resampling to a fixed target size (align-corners convention:
/// output corners sample input corners exactly; identity when sizes match).
#[derive(Debug, Clone)]
pub struct BilinearResize {
    pub target_h: usize,
    pub target_w: usize,
    cache_in: Option<(usize, usize, usize, usize)>,
}

#[inline]
fn lin_coords(out_len: usize, in_len: usize, i: usize) -> (usize, usize, f64) {
    if out_len == 1 || in_len == 1 {
        return (0, 0, 0.0);
    }
    let pos = i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, pos - lo as f64)
}

impl BilinearResize {
    pub fn new(target_h: usize, target_w: usize) -> Self {
        Self {
            target_h,
            target_w,
            cache_in: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        let out = resize_bilinear(x, self.target_h, self.target_w);
        self.cache_in = Some(x.shape());
        out
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = self
            .cache_in
            .take()
            .expect("resize backward before forward");
        let mut gx = Tensor4::zeros(n, c, h, w);
        for ni in 0..n {
            for ci in 0..c {
                let gyp = gy.plane(ni, ci);
                let gxp = gx.plane_mut(ni, ci);
                let mut p = 0;
                for oy in 0..self.target_h {
                    let (y0, y1, fy) = lin_coords(self.target_h, h, oy);
                    for ox in 0..self.target_w {
                        let (x0, x1, fx) = lin_coords(self.target_w, w, ox);
                        let g = gyp[p];
                        gxp[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                        gxp[y0 * w + x1] += g * (1.0 - fy) * fx;
                        gxp[y1 * w + x0] += g * fy * (1.0 - fx);
                        gxp[y1 * w + x1] += g * fy * fx;
                        p += 1;
                    }
                }
            }
        }
        gx
    }
}

/// Stateless bilinear resize of all planes to (th, tw), align-corners.
pub fn resize_bilinear(x: &Tensor4, th: usize, tw: usize) -> Tensor4 {
    let (n, c, h, w) = x.shape();
    let mut out = Tensor4::zeros(n, c, th, tw);
    for ni in 0..n {
        for ci in 0..c {
            let xp = x.plane(ni, ci);
            let op = out.plane_mut(ni, ci);
            let mut p = 0;
            for oy in 0..th {
                let (y0, y1, fy) = lin_coords(th, h, oy);
                for ox in 0..tw {
                    let (x0, x1, fx) = lin_coords(tw, w, ox);
                    op[p] = (1.0 - fy) * ((1.0 - fx) * xp[y0 * w + x0] + fx * xp[y0 * w + x1])
                        + fy * ((1.0 - fx) * xp[y1 * w + x0] + fx * xp[y1 * w + x1]);
                    p += 1;
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Global average pooling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    cache_in: Option<(usize, usize, usize, usize)>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = x.shape();
        let mut out = Tensor4::zeros(n, c, 1, 1);
        let inv = 1.0 / (h * w) as f64;
        for ni in 0..n {
            for ci in 0..c {
                let s: f64 = x.plane(ni, ci).iter().sum();
                out.set(ni, ci, 0, 0, s * inv);
            }
        }
        self.cache_in = Some(x.shape());
        out
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = self.cache_in.take().expect("gap backward before forward");
        let inv = 1.0 / (h * w) as f64;
        let mut gx = Tensor4::zeros(n, c, h, w);
        for ni in 0..n {
            for ci in 0..c {
                let g = gy.at(ni, ci, 0, 0) * inv;
                gx.plane_mut(ni, ci).iter_mut().for_each(|v| *v = g);
            }
        }
        gx
    }
}
