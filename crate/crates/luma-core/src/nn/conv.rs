//! 2-D convolution via im2col and a per-image GEMM.
//!
//! Data layout is NCHW. The batch loop is the parallel axis; each image's
//! GEMM runs single-threaded, and cross-image gradient sums fold in index
//! order, so gradients are bitwise deterministic.

use ndarray::{Array1, Array2, Array4, ArrayView2, Ix2};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use super::Tensor;
use crate::parallel::{for_each_chunk_mut, map_indexed};

/// Convolution layer with square kernel, zero padding and uniform stride.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// Weights, shape `(c_out, c_in, k, k)`.
    pub w: Tensor,
    /// Bias, shape `(c_out,)`.
    pub b: Tensor,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    cache_x: Option<Array4<f64>>,
    last_in_hw: (usize, usize),
}

impl Conv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * k * k;
        Self {
            w: Tensor::he_normal(&[c_out, c_in, k, k], fan_in, rng),
            b: Tensor::zeros(&[c_out]),
            c_in,
            c_out,
            k,
            stride,
            pad,
            cache_x: None,
            last_in_hw: (0, 0),
        }
    }

    /// Init with channel-coupled kernels: one He-normal spatial kernel per
    /// output channel, shared across input channels up to a relative
    /// perturbation of `gamma`. Used for the stems that read raw RGB, whose
    /// channel profiles otherwise keep their random init on desk-scale data;
    /// ImageNet-trained first layers are luma-dominant in the same way.
    pub fn new_channel_coupled(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        gamma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut conv = Self::new(c_in, c_out, k, stride, pad, rng);
        let fan_in = c_in * k * k;
        let std = (2.0 / fan_in as f64).sqrt() / (1.0 + gamma * gamma).sqrt();
        let mut w = ndarray::Array4::<f64>::zeros((c_out, c_in, k, k));
        for co in 0..c_out {
            for ky in 0..k {
                for kx in 0..k {
                    let shared: f64 = rand_distr::StandardNormal.sample(rng);
                    for ci in 0..c_in {
                        let dev: f64 = rand_distr::StandardNormal.sample(rng);
                        w[[co, ci, ky, kx]] = std * shared * (1.0 + gamma * dev);
                    }
                }
            }
        }
        conv.w = Tensor::from_value(w.into_dyn());
        conv
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn w_mat(&self) -> ArrayView2<'_, f64> {
        self.w
            .value
            .view()
            .into_shape_with_order((self.c_out, self.c_in * self.k * self.k))
            .expect("contiguous weights")
            .into_dimensionality::<Ix2>()
            .unwrap()
    }

    /// Forward pass. With `train` the input is cached for `backward`.
    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (n, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        assert_eq!(c_in, self.c_in, "conv input channels");
        self.last_in_hw = (h, w);
        let (oh, ow) = self.out_hw(h, w);
        let mut out = Array4::<f64>::zeros((n, self.c_out, oh, ow));
        let per_in = c_in * h * w;
        let per_out = self.c_out * oh * ow;
        let xs = x.as_slice().expect("standard layout");
        let w_mat = self.w_mat();
        let bias = self.b.value.as_slice().expect("contiguous bias");
        let geom = Geometry {
            c_in,
            h,
            w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            oh,
            ow,
        };
        let out_slice = out.as_slice_mut().expect("standard layout");
        for_each_chunk_mut(out_slice, per_out, |i, chunk| {
            let xi = &xs[i * per_in..(i + 1) * per_in];
            let col = im2col(xi, &geom);
            let y = w_mat.dot(&col); // (c_out, oh*ow)
            let ys = y.as_slice().expect("row-major gemm output");
            for c in 0..self.c_out {
                let bias_c = bias[c];
                let dst = &mut chunk[c * oh * ow..(c + 1) * oh * ow];
                let src = &ys[c * oh * ow..(c + 1) * oh * ow];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias_c;
                }
            }
        });
        if train {
            self.cache_x = Some(x.clone());
        }
        out
    }

    /// Backward pass: consumes the cached input, accumulates `w`/`b` grads and
    /// returns the gradient w.r.t. the input.
    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let x = self.cache_x.take().expect("forward(train) before backward");
        let (n, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = self.out_hw(h, w);
        assert_eq!(gy.shape(), &[n, self.c_out, oh, ow]);
        let per_in = c_in * h * w;
        let per_out = self.c_out * oh * ow;
        let geom = Geometry {
            c_in,
            h,
            w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            oh,
            ow,
        };
        let gys = gy.as_slice().expect("standard layout");
        let xs = x.as_slice().expect("standard layout");

        // input gradient: dcol = W^T . dy, scattered back by col2im
        let mut gx = Array4::<f64>::zeros((n, c_in, h, w));
        {
            let w_mat = self.w_mat();
            let gx_slice = gx.as_slice_mut().expect("standard layout");
            for_each_chunk_mut(gx_slice, per_in, |i, chunk| {
                let dy = ArrayView2::from_shape(
                    (self.c_out, oh * ow),
                    &gys[i * per_out..(i + 1) * per_out],
                )
                .unwrap();
                let dcol = w_mat.t().dot(&dy); // (c_in*k*k, oh*ow)
                col2im(&dcol, chunk, &geom);
            });
        }

        // parameter gradients: per-image dW = dy . col^T, folded in order
        let k_len = c_in * self.k * self.k;
        let partials = map_indexed(n, |i| {
            let dy = ArrayView2::from_shape(
                (self.c_out, oh * ow),
                &gys[i * per_out..(i + 1) * per_out],
            )
            .unwrap();
            let col = im2col(&xs[i * per_in..(i + 1) * per_in], &geom);
            let dw = dy.dot(&col.t()); // (c_out, k_len)
            let db = dy.sum_axis(ndarray::Axis(1));
            (dw, db)
        });
        let mut dw_total = Array2::<f64>::zeros((self.c_out, k_len));
        let mut db_total = Array1::<f64>::zeros(self.c_out);
        for (dw, db) in partials {
            dw_total += &dw;
            db_total += &db;
        }
        let mut wg = self
            .w
            .grad
            .view_mut()
            .into_shape_with_order((self.c_out, k_len))
            .expect("contiguous grads");
        wg += &dw_total;
        let mut bg = self.b.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
        bg += &db_total;
        gx
    }

    /// Input gradient only (frozen weights); used on eval-mode paths after a
    /// `forward` has recorded the input geometry.
    pub fn backward_input_only(&self, gy: &Array4<f64>) -> Array4<f64> {
        let (h, w) = self.last_in_hw;
        let n = gy.shape()[0];
        let (oh, ow) = self.out_hw(h, w);
        assert_eq!(gy.shape(), &[n, self.c_out, oh, ow]);
        let per_in = self.c_in * h * w;
        let per_out = self.c_out * oh * ow;
        let geom = Geometry {
            c_in: self.c_in,
            h,
            w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            oh,
            ow,
        };
        let gys = gy.as_slice().expect("standard layout");
        let mut gx = Array4::<f64>::zeros((n, self.c_in, h, w));
        let w_mat = self.w_mat();
        let gx_slice = gx.as_slice_mut().expect("standard layout");
        for_each_chunk_mut(gx_slice, per_in, |i, chunk| {
            let dy = ArrayView2::from_shape(
                (self.c_out, oh * ow),
                &gys[i * per_out..(i + 1) * per_out],
            )
            .unwrap();
            let dcol = w_mat.t().dot(&dy);
            col2im(&dcol, chunk, &geom);
        });
        gx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }

    /// Visit the persistent arrays (used for both saving and loading).
    pub fn visit_state(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut ndarray::ArrayD<f64>),
    ) {
        f(format!("{prefix}.w"), &mut self.w.value);
        f(format!("{prefix}.b"), &mut self.b.value);
    }
}

struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

/// Gather kernel patches of one image into a `(c_in*k*k, oh*ow)` matrix.
fn im2col(x: &[f64], g: &Geometry) -> Array2<f64> {
    let mut col = Array2::<f64>::zeros((g.c_in * g.k * g.k, g.oh * g.ow));
    let cs = col.as_slice_mut().unwrap();
    let mut row = 0usize;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut cs[row * g.oh * g.ow..(row + 1) * g.oh * g.ow];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue; // stays zero
                    }
                    let src_base = iy as usize * g.w;
                    let dst_base = oy * g.ow;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[dst_base + ox] = plane[src_base + ix as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    col
}

/// Scatter-add a column gradient back into one image's input gradient.
fn col2im(dcol: &Array2<f64>, gx: &mut [f64], g: &Geometry) {
    let ds = dcol.as_slice().expect("row-major");
    let mut row = 0usize;
    for c in 0..g.c_in {
        let plane = &mut gx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &ds[row * g.oh * g.ow..(row + 1) * g.oh * g.ow];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_base = iy as usize * g.w;
                    let src_base = oy * g.ow;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[dst_base + ix as usize] += src[src_base + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn finite_diff_conv(
        conv: &mut Conv2d,
        x: &Array4<f64>,
        gy: &Array4<f64>,
        coord: (usize, usize, usize, usize),
        h_step: f64,
    ) -> f64 {
        // d(sum(y * gy)) / dx[coord]
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[coord] += h_step;
        xm[coord] -= h_step;
        let yp = conv.forward(&xp, false);
        let ym = conv.forward(&xm, false);
        let sp: f64 = yp.iter().zip(gy.iter()).map(|(a, b)| a * b).sum();
        let sm: f64 = ym.iter().zip(gy.iter()).map(|(a, b)| a * b).sum();
        (sp - sm) / (2.0 * h_step)
    }

    #[test]
    fn conv_shapes() {
        let mut rng = stream(1, "conv");
        let mut c = Conv2d::new(3, 8, 3, 2, 1, &mut rng);
        let x = Array4::zeros((2, 3, 8, 8));
        let y = c.forward(&x, false);
        assert_eq!(y.shape(), &[2, 8, 4, 4]);
    }

    #[test]
    fn input_and_weight_gradients_match_finite_differences() {
        let mut rng = stream(2, "conv");
        let mut c = Conv2d::new(2, 3, 3, 2, 1, &mut rng);
        let mut x = Array4::zeros((2, 2, 6, 6));
        for v in x.iter_mut() {
            use rand::Rng;
            *v = rng.random::<f64>() - 0.5;
        }
        let y = c.forward(&x, true);
        let mut gy = Array4::zeros(y.raw_dim());
        for (i, v) in gy.iter_mut().enumerate() {
            *v = ((i % 7) as f64 - 3.0) / 3.0;
        }
        let gx = c.backward(&gy);

        for coord in [(0, 0, 0, 0), (1, 1, 3, 2), (0, 1, 5, 5), (1, 0, 2, 4)] {
            let fd = finite_diff_conv(&mut c, &x, &gy, coord, 1e-6);
            assert!(
                (gx[coord] - fd).abs() < 1e-6,
                "input grad mismatch at {coord:?}: {} vs {fd}",
                gx[coord]
            );
        }

        // weight gradient via finite differences on one coordinate
        let w_coord = [1usize, 0, 2, 1];
        let h_step = 1e-6;
        let base = c.w.grad[ndarray::IxDyn(&w_coord)];
        let orig = c.w.value[ndarray::IxDyn(&w_coord)];
        c.w.value[ndarray::IxDyn(&w_coord)] = orig + h_step;
        let yp = c.forward(&x, false);
        c.w.value[ndarray::IxDyn(&w_coord)] = orig - h_step;
        let ym = c.forward(&x, false);
        c.w.value[ndarray::IxDyn(&w_coord)] = orig;
        let sp: f64 = yp.iter().zip(gy.iter()).map(|(a, b)| a * b).sum();
        let sm: f64 = ym.iter().zip(gy.iter()).map(|(a, b)| a * b).sum();
        let fd = (sp - sm) / (2.0 * h_step);
        assert!((base - fd).abs() < 1e-5, "weight grad {base} vs {fd}");
    }

    #[test]
    fn backward_input_only_matches_backward() {
        let mut rng = stream(4, "conv");
        let mut c = Conv2d::new(3, 4, 3, 1, 1, &mut rng);
        let mut x = Array4::zeros((1, 3, 5, 5));
        for (i, v) in x.iter_mut().enumerate() {
            *v = (i as f64).sin();
        }
        let y = c.forward(&x, true);
        let gy = y.mapv(|v| v * 0.1 + 0.05);
        let gx_frozen = c.backward_input_only(&gy);
        let gx = c.backward(&gy);
        assert_eq!(gx, gx_frozen);
    }
}
