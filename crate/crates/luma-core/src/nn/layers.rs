//! Non-convolution layers: batch norm, dense, activations, pooling,
//! sub-pixel shuffle and fixed input normalization.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix1};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::parallel::{for_each_chunk_mut, map_indexed};

/// Per-channel batch normalization over `(N, H, W)`.
///
/// Training uses batch statistics and updates the running estimates; eval
/// uses the stored running statistics, which keeps per-image outputs
/// independent of batch composition.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: ArrayD<f64>,
    pub running_var: ArrayD<f64>,
    pub c: usize,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Array4<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm2d {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[c], 1.0),
            beta: Tensor::zeros(&[c]),
            running_mean: ArrayD::zeros(ndarray::IxDyn(&[c])),
            running_var: ArrayD::from_elem(ndarray::IxDyn(&[c]), 1.0),
            c,
            eps: 1e-5,
            momentum: 0.1,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        assert_eq!(c, self.c, "batchnorm channels");
        let count = (n * h * w) as f64;
        let (mean, var) = if train {
            // per-image partial sums folded in index order
            let partials = map_indexed(n, |i| {
                let xi = x.index_axis(Axis(0), i);
                let mut s = vec![0.0f64; c];
                let mut s2 = vec![0.0f64; c];
                for ch in 0..c {
                    let plane = xi.index_axis(Axis(0), ch);
                    for &v in plane.iter() {
                        s[ch] += v;
                        s2[ch] += v * v;
                    }
                }
                (s, s2)
            });
            let mut sum = vec![0.0f64; c];
            let mut sum2 = vec![0.0f64; c];
            for (s, s2) in partials {
                for ch in 0..c {
                    sum[ch] += s[ch];
                    sum2[ch] += s2[ch];
                }
            }
            let mean: Array1<f64> = sum.iter().map(|v| v / count).collect();
            let var: Array1<f64> = sum2
                .iter()
                .zip(mean.iter())
                .map(|(s2, m)| s2 / count - m * m)
                .collect();
            for ch in 0..c {
                let rm = &mut self.running_mean[[ch]];
                *rm = (1.0 - self.momentum) * *rm + self.momentum * mean[ch];
                let rv = &mut self.running_var[[ch]];
                *rv = (1.0 - self.momentum) * *rv + self.momentum * var[ch];
            }
            (mean, var)
        } else {
            let mean: Array1<f64> = (0..c).map(|ch| self.running_mean[[ch]]).collect();
            let var: Array1<f64> = (0..c).map(|ch| self.running_var[[ch]]).collect();
            (mean, var)
        };

        let inv_std: Array1<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let gamma = self.gamma.value.as_slice().unwrap().to_vec();
        let beta = self.beta.value.as_slice().unwrap().to_vec();

        let mut out = x.clone();
        let plane = h * w;
        let per_image = c * plane;
        let mean_v = mean.to_vec();
        let inv_v = inv_std.to_vec();
        let slice = out.as_slice_mut().expect("standard layout");
        for_each_chunk_mut(slice, per_image, |_, img| {
            for ch in 0..c {
                let m = mean_v[ch];
                let is = inv_v[ch];
                for v in img[ch * plane..(ch + 1) * plane].iter_mut() {
                    *v = (*v - m) * is;
                }
            }
        });
        if train {
            self.cache = Some(BnCache {
                x_hat: out.clone(),
                inv_std: inv_std.clone(),
            });
        }
        // y = gamma * x_hat + beta
        let slice = out.as_slice_mut().expect("standard layout");
        for_each_chunk_mut(slice, per_image, |_, img| {
            for ch in 0..c {
                let g = gamma[ch];
                let b = beta[ch];
                for v in img[ch * plane..(ch + 1) * plane].iter_mut() {
                    *v = g * *v + b;
                }
            }
        });
        out
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("forward(train) before backward");
        let (n, c, h, w) = (gy.shape()[0], gy.shape()[1], gy.shape()[2], gy.shape()[3]);
        let count = (n * h * w) as f64;
        let plane = h * w;
        let x_hat = &cache.x_hat;

        // reductions: sum(gy), sum(gy*x_hat) per channel
        let partials = map_indexed(n, |i| {
            let gi = gy.index_axis(Axis(0), i);
            let xi = x_hat.index_axis(Axis(0), i);
            let mut s = vec![0.0f64; c];
            let mut sx = vec![0.0f64; c];
            for ch in 0..c {
                let gp = gi.index_axis(Axis(0), ch);
                let xp = xi.index_axis(Axis(0), ch);
                for (&g, &xh) in gp.iter().zip(xp.iter()) {
                    s[ch] += g;
                    sx[ch] += g * xh;
                }
            }
            (s, sx)
        });
        let mut sum_gy = vec![0.0f64; c];
        let mut sum_gy_xhat = vec![0.0f64; c];
        for (s, sx) in partials {
            for ch in 0..c {
                sum_gy[ch] += s[ch];
                sum_gy_xhat[ch] += sx[ch];
            }
        }
        {
            let mut bg = self.beta.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            let mut gg = self.gamma.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            for ch in 0..c {
                bg[ch] += sum_gy[ch];
                gg[ch] += sum_gy_xhat[ch];
            }
        }

        let gamma = self.gamma.value.as_slice().unwrap().to_vec();
        let inv_std = cache.inv_std.to_vec();
        let mean_gy: Vec<f64> = sum_gy.iter().map(|v| v / count).collect();
        let mean_gy_xhat: Vec<f64> = sum_gy_xhat.iter().map(|v| v / count).collect();

        let mut gx = gy.clone();
        let xh_slice = x_hat.as_slice().expect("standard layout");
        let per_image = c * plane;
        let slice = gx.as_slice_mut().expect("standard layout");
        for_each_chunk_mut(slice, per_image, |i, img| {
            let xh_img = &xh_slice[i * per_image..(i + 1) * per_image];
            for ch in 0..c {
                let scale = gamma[ch] * inv_std[ch];
                let mg = mean_gy[ch];
                let mgx = mean_gy_xhat[ch];
                for (v, &xh) in img[ch * plane..(ch + 1) * plane]
                    .iter_mut()
                    .zip(xh_img[ch * plane..(ch + 1) * plane].iter())
                {
                    *v = scale * (*v - mg - xh * mgx);
                }
            }
        });
        gx
    }

    /// Eval-mode input gradient: a fixed per-channel scaling.
    pub fn backward_input_only(&self, gy: &Array4<f64>) -> Array4<f64> {
        let c = self.c;
        let mut scale = vec![0.0f64; c];
        for ch in 0..c {
            scale[ch] = self.gamma.value[[ch]] / (self.running_var[[ch]] + self.eps).sqrt();
        }
        let (_, _, h, w) = (
            gy.shape()[0],
            gy.shape()[1],
            gy.shape()[2],
            gy.shape()[3],
        );
        let plane = h * w;
        let per_image = c * plane;
        let mut gx = gy.clone();
        let slice = gx.as_slice_mut().expect("standard layout");
        for_each_chunk_mut(slice, per_image, |_, img| {
            for ch in 0..c {
                let s = scale[ch];
                for v in img[ch * plane..(ch + 1) * plane].iter_mut() {
                    *v *= s;
                }
            }
        });
        gx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<f64>)) {
        f(format!("{prefix}.gamma"), &mut self.gamma.value);
        f(format!("{prefix}.beta"), &mut self.beta.value);
        f(format!("{prefix}.running_mean"), &mut self.running_mean);
        f(format!("{prefix}.running_var"), &mut self.running_var);
    }
}

/// Fully connected layer, input `(N, in)`, output `(N, out)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Tensor, // (in, out)
    pub b: Tensor, // (out,)
    cache_x: Option<Array2<f64>>,
}

impl Dense {
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: Tensor::he_normal(&[d_in, d_out], d_in, rng),
            b: Tensor::zeros(&[d_out]),
            cache_x: None,
        }
    }

    fn w2(&self) -> ndarray::ArrayView2<'_, f64> {
        self.w.value.view().into_dimensionality().unwrap()
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let mut y = x.dot(&self.w2());
        let b = self.b.value.as_slice().unwrap();
        for mut row in y.axis_iter_mut(Axis(0)) {
            for (v, bias) in row.iter_mut().zip(b) {
                *v += bias;
            }
        }
        if train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        let x = self.cache_x.take().expect("forward(train) before backward");
        let dw = x.t().dot(gy);
        {
            let mut wg = self.w.grad.view_mut().into_dimensionality::<ndarray::Ix2>().unwrap();
            wg += &dw;
            let db = gy.sum_axis(Axis(0));
            let mut bg = self.b.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            bg += &db;
        }
        gy.dot(&self.w2().t())
    }

    pub fn backward_input_only(&self, gy: &Array2<f64>) -> Array2<f64> {
        gy.dot(&self.w2().t())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<f64>)) {
        f(format!("{prefix}.w"), &mut self.w.value);
        f(format!("{prefix}.b"), &mut self.b.value);
    }
}

/// ReLU on feature maps; caches the sign mask via the output.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    cache_y: Option<Array4<f64>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let y = x.mapv(|v| if v > 0.0 { v } else { 0.0 });
        if train {
            self.cache_y = Some(y.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let y = self.cache_y.take().expect("forward(train) before backward");
        let mut gx = gy.clone();
        for (g, &v) in gx.iter_mut().zip(y.iter()) {
            if v <= 0.0 {
                *g = 0.0;
            }
        }
        gx
    }

    /// Input gradient given the forward output (for eval-mode paths).
    pub fn backward_with(&self, gy: &Array4<f64>, y: &Array4<f64>) -> Array4<f64> {
        let mut gx = gy.clone();
        for (g, &v) in gx.iter_mut().zip(y.iter()) {
            if v <= 0.0 {
                *g = 0.0;
            }
        }
        gx
    }
}

/// ReLU on `(N, F)` matrices.
pub fn relu2d(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu2d_backward(gy: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let mut gx = gy.clone();
    for (g, &v) in gx.iter_mut().zip(y.iter()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}

/// 2x2 max pooling with stride 2.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    cache_argmax: Option<Vec<u32>>,
    in_shape: [usize; 4],
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool needs even H, W");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Array4::<f64>::zeros((n, c, oh, ow));
        let mut argmax = vec![0u32; n * c * oh * ow];
        let xs = x.as_slice().unwrap();
        let per_in = c * h * w;
        let per_out = c * oh * ow;
        {
            let out_slice = out.as_slice_mut().unwrap();
            // plain sequential fill of argmax alongside the parallel loop is
            // simpler done in one pass per image
            for_each_chunk_mut(out_slice, per_out, |i, chunk| {
                let xi = &xs[i * per_in..(i + 1) * per_in];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let base = ch * h * w + (oy * 2) * w + ox * 2;
                            let cands = [base, base + 1, base + w, base + w + 1];
                            let mut best = cands[0];
                            let mut best_v = xi[cands[0]];
                            for &idx in &cands[1..] {
                                if xi[idx] > best_v {
                                    best_v = xi[idx];
                                    best = idx;
                                }
                            }
                            chunk[ch * oh * ow + oy * ow + ox] = best_v;
                            // argmax filled below sequentially
                            let _ = best;
                        }
                    }
                }
            });
        }
        if train {
            // recompute argmax sequentially (cheap) to avoid sharing the
            // buffer across the parallel loop
            for i in 0..n {
                let xi = &xs[i * per_in..(i + 1) * per_in];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let base = ch * h * w + (oy * 2) * w + ox * 2;
                            let cands = [base, base + 1, base + w, base + w + 1];
                            let mut best = cands[0];
                            let mut best_v = xi[cands[0]];
                            for &idx in &cands[1..] {
                                if xi[idx] > best_v {
                                    best_v = xi[idx];
                                    best = idx;
                                }
                            }
                            argmax[i * per_out + ch * oh * ow + oy * ow + ox] = best as u32;
                        }
                    }
                }
            }
            self.cache_argmax = Some(argmax);
            self.in_shape = [n, c, h, w];
        }
        out
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let argmax = self.cache_argmax.take().expect("forward(train) before backward");
        let [n, c, h, w] = self.in_shape;
        let per_in = c * h * w;
        let per_out = c * (h / 2) * (w / 2);
        let gys = gy.as_slice().unwrap();
        let mut gx = Array4::<f64>::zeros((n, c, h, w));
        let gx_slice = gx.as_slice_mut().unwrap();
        for_each_chunk_mut(gx_slice, per_in, |i, chunk| {
            let g = &gys[i * per_out..(i + 1) * per_out];
            let am = &argmax[i * per_out..(i + 1) * per_out];
            for (j, &idx) in am.iter().enumerate() {
                chunk[idx as usize] += g[j];
            }
        });
        gx
    }
}

/// 2x2 average pooling with stride 2.
#[derive(Debug, Clone, Default)]
pub struct AvgPool2 {
    in_shape: [usize; 4],
}

impl AvgPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Array4<f64>, _train: bool) -> Array4<f64> {
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "avgpool needs even H, W");
        self.in_shape = [n, c, h, w];
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Array4::<f64>::zeros((n, c, oh, ow));
        let xs = x.as_slice().unwrap();
        let per_in = c * h * w;
        let per_out = c * oh * ow;
        let out_slice = out.as_slice_mut().unwrap();
        for_each_chunk_mut(out_slice, per_out, |i, chunk| {
            let xi = &xs[i * per_in..(i + 1) * per_in];
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let base = ch * h * w + (oy * 2) * w + ox * 2;
                        chunk[ch * oh * ow + oy * ow + ox] =
                            0.25 * (xi[base] + xi[base + 1] + xi[base + w] + xi[base + w + 1]);
                    }
                }
            }
        });
        out
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let [n, c, h, w] = self.in_shape;
        let (oh, ow) = (h / 2, w / 2);
        let per_in = c * h * w;
        let per_out = c * oh * ow;
        let gys = gy.as_slice().unwrap();
        let mut gx = Array4::<f64>::zeros((n, c, h, w));
        let gx_slice = gx.as_slice_mut().unwrap();
        for_each_chunk_mut(gx_slice, per_in, |i, chunk| {
            let g = &gys[i * per_out..(i + 1) * per_out];
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let v = 0.25 * g[ch * oh * ow + oy * ow + ox];
                        let base = ch * h * w + (oy * 2) * w + ox * 2;
                        chunk[base] += v;
                        chunk[base + 1] += v;
                        chunk[base + w] += v;
                        chunk[base + w + 1] += v;
                    }
                }
            }
        });
        gx
    }
}

/// Global average pooling `(N, C, H, W) -> (N, C)`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_shape: [usize; 4],
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Array4<f64>, _train: bool) -> Array2<f64> {
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        self.in_shape = [n, c, h, w];
        let scale = 1.0 / (h * w) as f64;
        let mut out = Array2::<f64>::zeros((n, c));
        for i in 0..n {
            for ch in 0..c {
                let plane = x.index_axis(Axis(0), i);
                let plane = plane.index_axis(Axis(0), ch);
                out[[i, ch]] = plane.sum() * scale;
            }
        }
        out
    }

    pub fn backward(&self, gy: &Array2<f64>) -> Array4<f64> {
        let [n, c, h, w] = self.in_shape;
        let scale = 1.0 / (h * w) as f64;
        let mut gx = Array4::<f64>::zeros((n, c, h, w));
        for i in 0..n {
            for ch in 0..c {
                let v = gy[[i, ch]] * scale;
                gx.index_axis_mut(Axis(0), i)
                    .index_axis_mut(Axis(0), ch)
                    .fill(v);
            }
        }
        gx
    }
}

/// Sub-pixel shuffle: `(N, C*r^2, H, W) -> (N, C, rH, rW)`.
///
/// Channel `c*r^2 + dy*r + dx` lands at spatial offset `(dy, dx)` inside each
/// upscaled 2x2 (for r = 2) cell, matching the standard ordering.
#[derive(Debug, Clone)]
pub struct PixelShuffle {
    pub r: usize,
}

impl PixelShuffle {
    pub fn new(r: usize) -> Self {
        Self { r }
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let r = self.r;
        let (n, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        assert!(c_in % (r * r) == 0, "channels divisible by r^2");
        let c_out = c_in / (r * r);
        let mut out = Array4::<f64>::zeros((n, c_out, h * r, w * r));
        let xs = x.as_slice().unwrap();
        let per_in = c_in * h * w;
        let per_out = per_in; // same element count
        let out_slice = out.as_slice_mut().unwrap();
        let (ho, wo) = (h * r, w * r);
        for_each_chunk_mut(out_slice, per_out, |i, chunk| {
            let xi = &xs[i * per_in..(i + 1) * per_in];
            for co in 0..c_out {
                for dy in 0..r {
                    for dx in 0..r {
                        let ci = co * r * r + dy * r + dx;
                        for y in 0..h {
                            let src = ci * h * w + y * w;
                            let dst = co * ho * wo + (y * r + dy) * wo + dx;
                            for xcol in 0..w {
                                chunk[dst + xcol * r] = xi[src + xcol];
                            }
                        }
                    }
                }
            }
        });
        out
    }

    pub fn backward(&self, gy: &Array4<f64>) -> Array4<f64> {
        let r = self.r;
        let (n, c_out, ho, wo) = (gy.shape()[0], gy.shape()[1], gy.shape()[2], gy.shape()[3]);
        let (h, w) = (ho / r, wo / r);
        let c_in = c_out * r * r;
        let mut gx = Array4::<f64>::zeros((n, c_in, h, w));
        let gys = gy.as_slice().unwrap();
        let per = c_in * h * w;
        let gx_slice = gx.as_slice_mut().unwrap();
        for_each_chunk_mut(gx_slice, per, |i, chunk| {
            let gi = &gys[i * per..(i + 1) * per];
            for co in 0..c_out {
                for dy in 0..r {
                    for dx in 0..r {
                        let ci = co * r * r + dy * r + dx;
                        for y in 0..h {
                            let dst = ci * h * w + y * w;
                            let src = co * ho * wo + (y * r + dy) * wo + dx;
                            for xcol in 0..w {
                                chunk[dst + xcol] = gi[src + xcol * r];
                            }
                        }
                    }
                }
            }
        });
        gx
    }
}

/// Fixed per-channel input normalization `(x - mean) / std`, kept inside the
/// model so attacks see raw [0,1] pixels.
#[derive(Debug, Clone)]
pub struct Normalize {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalize {
    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Self {
        Self { mean, std }
    }

    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let mut out = x.clone();
        let (_, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        assert_eq!(c, 3);
        let plane = h * w;
        let per_image = c * plane;
        let (mean, std) = (self.mean, self.std);
        let slice = out.as_slice_mut().unwrap();
        for_each_chunk_mut(slice, per_image, |_, img| {
            for ch in 0..3 {
                let m = mean[ch];
                let s = 1.0 / std[ch];
                for v in img[ch * plane..(ch + 1) * plane].iter_mut() {
                    *v = (*v - m) * s;
                }
            }
        });
        out
    }

    pub fn backward(&self, gy: &Array4<f64>) -> Array4<f64> {
        let mut gx = gy.clone();
        let (_, c, h, w) = (gy.shape()[0], gy.shape()[1], gy.shape()[2], gy.shape()[3]);
        let plane = h * w;
        let per_image = c * plane;
        let std = self.std;
        let slice = gx.as_slice_mut().unwrap();
        for_each_chunk_mut(slice, per_image, |_, img| {
            for ch in 0..3 {
                let s = 1.0 / std[ch];
                for v in img[ch * plane..(ch + 1) * plane].iter_mut() {
                    *v *= s;
                }
            }
        });
        gx
    }
}
