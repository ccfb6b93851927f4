//! Minimal deterministic neural-network building blocks.
//!
//! Layers are plain structs with explicit `forward`/`backward` methods; each
//! network wires them by hand, mirroring its data flow in reverse for the
//! backward pass. Everything is f64 and fully seeded. Batch loops run through
//! [`crate::parallel`], with per-image work items and fixed-order reductions,
//! so results are bitwise reproducible with and without the `parallel`
//! feature.

pub mod adam;
pub mod conv;
pub mod layers;

pub use adam::Adam;
pub use conv::Conv2d;
pub use layers::{
    AvgPool2, BatchNorm2d, Dense, GlobalAvgPool, MaxPool2, Normalize, PixelShuffle, Relu,
};

use ndarray::{Array4, ArrayD, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A trainable parameter: value plus accumulated gradient.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let value = ArrayD::zeros(ndarray::IxDyn(shape));
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn from_value(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn filled(shape: &[usize], fill: f64) -> Self {
        Self::from_value(ArrayD::from_elem(ndarray::IxDyn(shape), fill))
    }

    /// He-normal init with the given fan-in.
    pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let mut value = ArrayD::zeros(ndarray::IxDyn(shape));
        for v in value.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = z * std;
        }
        Self::from_value(value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Softmax cross-entropy over logits `(N, K)`.
///
/// Returns the summed loss and `d loss / d logits`. Summing (rather than
/// averaging) keeps each image's input gradient independent of batch size;
/// the training loop divides by N itself.
pub fn softmax_cross_entropy(
    logits: &ndarray::Array2<f64>,
    labels: &[usize],
) -> (f64, ndarray::Array2<f64>) {
    let n = logits.shape()[0];
    assert_eq!(n, labels.len());
    let mut dlogits = logits.clone();
    let mut loss = 0.0;
    for (i, mut row) in dlogits.axis_iter_mut(Axis(0)).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        loss += -(row[labels[i]] / denom).ln();
        for v in row.iter_mut() {
            *v /= denom;
        }
        row[labels[i]] -= 1.0;
    }
    (loss, dlogits)
}

/// Row-wise softmax probabilities.
pub fn softmax(logits: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    probs
}

/// Mean squared error over all elements; returns loss and gradient.
pub fn mse_loss(pred: &ArrayD<f64>, target: &ArrayD<f64>) -> (f64, ArrayD<f64>) {
    assert_eq!(pred.shape(), target.shape());
    let n = pred.len() as f64;
    let mut grad = pred.clone();
    let mut loss = 0.0;
    for (g, t) in grad.iter_mut().zip(target.iter()) {
        let d = *g - *t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    (loss / n, grad)
}

/// Concatenate feature maps along the channel axis (standard layout output).
pub fn concat_channels(parts: &[&Array4<f64>]) -> Array4<f64> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(1), &views)
        .expect("channel concat")
        .as_standard_layout()
        .to_owned()
}

/// Split a gradient along the channel axis into the given widths
/// (standard layout outputs).
pub fn split_channels(grad: &Array4<f64>, widths: &[usize]) -> Vec<Array4<f64>> {
    let mut out = Vec::with_capacity(widths.len());
    let mut start = 0;
    for &w in widths {
        out.push(
            grad.slice(ndarray::s![.., start..start + w, .., ..])
                .as_standard_layout()
                .to_owned(),
        );
        start += w;
    }
    assert_eq!(start, grad.shape()[1]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = arr2(&[[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]]);
        let p = softmax(&logits);
        for row in p.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_difference() {
        let logits = arr2(&[[0.3, -1.2, 0.7], [2.0, 0.1, -0.4]]);
        let labels = [2usize, 0usize];
        let (_, grad) = softmax_cross_entropy(&logits, &labels);
        let h = 1e-6;
        for i in 0..2 {
            for k in 0..3 {
                let mut lp = logits.clone();
                let mut lm = logits.clone();
                lp[[i, k]] += h;
                lm[[i, k]] -= h;
                let (jp, _) = softmax_cross_entropy(&lp, &labels);
                let (jm, _) = softmax_cross_entropy(&lm, &labels);
                let fd = (jp - jm) / (2.0 * h);
                assert!((fd - grad[[i, k]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mse_matches_hand_value() {
        let pred: ArrayD<f64> = arr2(&[[1.0, 2.0]]).into_dyn();
        let target: ArrayD<f64> = arr2(&[[0.0, 4.0]]).into_dyn();
        let (loss, grad) = mse_loss(&pred, &target);
        assert!((loss - (1.0 + 4.0) / 2.0).abs() < 1e-12);
        assert!((grad[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((grad[[0, 1]] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn concat_split_round_trip() {
        let a = Array4::from_elem((1, 2, 2, 2), 1.0);
        let b = Array4::from_elem((1, 3, 2, 2), 2.0);
        let cat = concat_channels(&[&a, &b]);
        assert_eq!(cat.shape(), &[1, 5, 2, 2]);
        let parts = split_channels(&cat, &[2, 3]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn he_init_is_seeded() {
        let mut r1 = crate::rng::stream(3, "he");
        let mut r2 = crate::rng::stream(3, "he");
        let a = Tensor::he_normal(&[4, 4], 16, &mut r1);
        let b = Tensor::he_normal(&[4, 4], 16, &mut r2);
        assert_eq!(a.value, b.value);
    }
}
