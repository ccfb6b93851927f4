//! Classifier zoo: small differentiable image classifiers with training,
//! prediction and input-gradient access.
//!
//! Input normalization lives inside the handle, so attacks and the defense
//! always exchange raw RGB [0,1] pixels.

pub mod blocks;
pub mod densenet;
pub mod linear;
pub mod resnet;
pub mod train;
pub mod vgg;

pub use train::{train_classifier, TrainRecipe};

use ndarray::{Array2, Array4, Axis};

use crate::error::{LumaError, Result};
use crate::image::{ColorSpace, ImageBatch, ValueScale};
use crate::nn::{softmax, softmax_cross_entropy, Normalize, Tensor};

use densenet::DenseNetMini;
use linear::LinearNet;
use resnet::ResNetMini;
use vgg::VggMini;

/// Forward/backward regime.
///
/// `Train` uses batch statistics and records everything needed for parameter
/// gradients. `Infer` is the pure prediction path. `InputGrad` runs the
/// inference statistics but keeps the activation caches needed to push a
/// gradient back to the pixels with all parameters frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
    InputGrad,
}

/// Images processed per forward chunk; bounds activation memory.
const EVAL_CHUNK: usize = 64;

/// Relative channel deviation of stem kernels at init. Desk-scale stand-ins
/// start from luma-dominant first layers the way ImageNet-trained CNNs end up.
pub const STEM_CHANNEL_COUPLING: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    VggMini,
    ResNetMini,
    DenseNetMini,
    /// Diagnostic linear model with closed-form attack oracles.
    Linear,
}

impl Arch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::VggMini => "vgg_mini",
            Arch::ResNetMini => "resnet_mini",
            Arch::DenseNetMini => "densenet_mini",
            Arch::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vgg_mini" => Ok(Arch::VggMini),
            "resnet_mini" => Ok(Arch::ResNetMini),
            "densenet_mini" => Ok(Arch::DenseNetMini),
            "linear" => Ok(Arch::Linear),
            other => Err(LumaError::InvalidConfig(format!("unknown arch '{other}'"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_str())
    }
}

#[derive(Debug, Clone)]
pub enum Net {
    Vgg(VggMini),
    Res(ResNetMini),
    DenseNet(DenseNetMini),
    Linear(LinearNet),
}

impl Net {
    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array2<f64> {
        match self {
            Net::Vgg(n) => n.forward(x, mode),
            Net::Res(n) => n.forward(x, mode),
            Net::DenseNet(n) => n.forward(x, mode),
            Net::Linear(n) => n.forward(x, mode),
        }
    }

    pub fn backward(&mut self, dlogits: &Array2<f64>, mode: Mode) -> Array4<f64> {
        match self {
            Net::Vgg(n) => n.backward(dlogits, mode),
            Net::Res(n) => n.backward(dlogits, mode),
            Net::DenseNet(n) => n.backward(dlogits, mode),
            Net::Linear(n) => n.backward(dlogits, mode),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Net::Vgg(n) => n.params_mut(),
            Net::Res(n) => n.params_mut(),
            Net::DenseNet(n) => n.params_mut(),
            Net::Linear(n) => n.params_mut(),
        }
    }

    pub fn visit_state(&mut self, f: &mut dyn FnMut(String, &mut ndarray::ArrayD<f64>)) {
        match self {
            Net::Vgg(n) => n.visit_state(f),
            Net::Res(n) => n.visit_state(f),
            Net::DenseNet(n) => n.visit_state(f),
            Net::Linear(n) => n.visit_state(f),
        }
    }

    pub fn input_hw(&self) -> (usize, usize) {
        match self {
            Net::Vgg(n) => n.input_hw,
            Net::Res(n) => n.input_hw,
            Net::DenseNet(n) => n.input_hw,
            Net::Linear(n) => n.input_hw,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Net::Vgg(n) => n.n_classes,
            Net::Res(n) => n.n_classes,
            Net::DenseNet(n) => n.n_classes,
            Net::Linear(n) => n.n_classes,
        }
    }
}

/// Training provenance carried in the checkpoint sidecar.
#[derive(Debug, Clone, Default)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// A classifier plus its input normalization and training metadata.
#[derive(Debug, Clone)]
pub struct ClassifierHandle {
    pub arch: Arch,
    pub normalize: Normalize,
    pub net: Net,
    pub meta: TrainMeta,
}

impl ClassifierHandle {
    /// Freshly initialized (untrained) model with identity normalization.
    pub fn new_untrained(
        arch: Arch,
        input_hw: (usize, usize),
        n_classes: usize,
        seed: u64,
    ) -> Self {
        let mut rng = crate::rng::stream(seed, &format!("init-{}", arch.as_str()));
        let net = match arch {
            Arch::VggMini => Net::Vgg(VggMini::new(input_hw, n_classes, &mut rng)),
            Arch::ResNetMini => Net::Res(ResNetMini::new(input_hw, n_classes, &mut rng)),
            Arch::DenseNetMini => Net::DenseNet(DenseNetMini::new(input_hw, n_classes, &mut rng)),
            Arch::Linear => Net::Linear(LinearNet::new(input_hw, n_classes, &mut rng)),
        };
        Self {
            arch,
            normalize: Normalize::identity(),
            net,
            meta: TrainMeta {
                seed,
                ..TrainMeta::default()
            },
        }
    }

    pub fn n_classes(&self) -> usize {
        self.net.n_classes()
    }

    pub fn input_hw(&self) -> (usize, usize) {
        self.net.input_hw()
    }

    /// Logits for an NCHW tensor of raw [0,1] pixels.
    pub fn logits_nchw(&mut self, x: &Array4<f64>, mode: Mode) -> Array2<f64> {
        let x = self.normalize.forward(x);
        self.net.forward(&x, mode)
    }

    /// Frozen feature taps (residual backbones only).
    pub fn features_nchw(&mut self, x: &Array4<f64>) -> Result<[Array4<f64>; 4]> {
        let x = self.normalize.forward(x);
        match &mut self.net {
            Net::Res(n) => Ok(n.features(&x)),
            _ => Err(LumaError::InvalidConfig(format!(
                "feature taps need a residual backbone, got {}",
                self.arch
            ))),
        }
    }

    fn check_batch(&self, batch: &ImageBatch) -> Result<()> {
        batch.expect_tags(ColorSpace::Rgb, ValueScale::Unit)?;
        let (h, w) = self.input_hw();
        if batch.height() != h || batch.width() != w {
            return Err(LumaError::ShapeMismatch(format!(
                "model expects {h}x{w}, batch is {}x{}",
                batch.height(),
                batch.width()
            )));
        }
        Ok(())
    }
}

/// NHWC image layout to the NCHW layout the layers use.
pub fn nhwc_to_nchw(x: &Array4<f64>) -> Array4<f64> {
    x.view()
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .to_owned()
}

/// NCHW back to image layout.
pub fn nchw_to_nhwc(x: &Array4<f64>) -> Array4<f64> {
    x.view()
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .to_owned()
}

/// Predicted labels and softmax probabilities for an RGB/unit batch.
pub fn predict_batch(
    model: &mut ClassifierHandle,
    batch: &ImageBatch,
) -> Result<(Vec<usize>, Array2<f64>)> {
    model.check_batch(batch)?;
    let n = batch.n_images();
    let k = model.n_classes();
    let mut probs = Array2::<f64>::zeros((n, k));
    let mut labels = Vec::with_capacity(n);
    let data = batch.data();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let chunk = data.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        let x = nhwc_to_nchw(&chunk);
        let logits = model.logits_nchw(&x, Mode::Infer);
        let p = softmax(&logits);
        probs.slice_mut(ndarray::s![start..end, ..]).assign(&p);
        for row in p.axis_iter(Axis(0)) {
            labels.push(argmax(row.as_slice().unwrap()));
        }
        start = end;
    }
    Ok((labels, probs))
}

/// Gradient of the cross-entropy loss with respect to the raw input pixels.
///
/// Untargeted: `labels` are the true labels and the gradient points uphill in
/// loss. Targeted: `labels` are the attack targets; callers step along the
/// negative of the returned gradient.
pub fn input_gradient(
    model: &mut ClassifierHandle,
    batch: &ImageBatch,
    labels: &[usize],
) -> Result<Array4<f64>> {
    model.check_batch(batch)?;
    let n = batch.n_images();
    if labels.len() != n {
        return Err(LumaError::ShapeMismatch(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let k = model.n_classes();
    for &l in labels {
        if l >= k {
            return Err(LumaError::LabelOutOfRange {
                label: l,
                n_classes: k,
            });
        }
    }
    let data = batch.data();
    let (h, w) = model.input_hw();
    let mut grad = Array4::<f64>::zeros((n, h, w, 3));
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let chunk = data.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        let x = nhwc_to_nchw(&chunk);
        let logits = model.logits_nchw(&x, Mode::InputGrad);
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels[start..end]);
        let gx = model.net.backward(&dlogits, Mode::InputGrad);
        let gx = model.normalize.backward(&gx);
        grad.slice_mut(ndarray::s![start..end, .., .., ..])
            .assign(&nchw_to_nhwc(&gx));
        start = end;
    }
    Ok(grad)
}

/// Top-1 and top-5 accuracy against true labels.
pub fn evaluate_topk(
    model: &mut ClassifierHandle,
    batch: &ImageBatch,
    labels: &[usize],
) -> Result<(f64, f64)> {
    let n = labels.len();
    if n == 0 {
        return Err(LumaError::EmptyInput("accuracy over zero images".into()));
    }
    let (_, probs) = predict_batch(model, batch)?;
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    for (i, row) in probs.axis_iter(Axis(0)).enumerate() {
        let truth = labels[i];
        let row = row.as_slice().unwrap();
        if argmax(row) == truth {
            top1 += 1;
        }
        let true_p = row[truth];
        let rank = row.iter().filter(|&&v| v > true_p).count();
        if rank < 5 {
            top5 += 1;
        }
    }
    Ok((top1 as f64 / n as f64, top5 as f64 / n as f64))
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    fn random_batch(n: usize, hw: usize, seed: u64) -> ImageBatch {
        let mut rng = crate::rng::stream(seed, "models-test");
        let mut data = Array4::zeros((n, hw, hw, 3));
        for v in data.iter_mut() {
            *v = rng.random::<f64>();
        }
        ImageBatch::rgb_unit(data).unwrap()
    }

    #[test]
    fn layout_round_trip() {
        let mut x = Array4::zeros((2, 3, 4, 3));
        for (i, v) in x.iter_mut().enumerate() {
            *v = i as f64;
        }
        let back = nchw_to_nhwc(&nhwc_to_nchw(&x));
        assert_eq!(x, back);
    }

    #[test]
    fn predict_shapes_and_prob_rows() {
        for arch in [Arch::VggMini, Arch::ResNetMini, Arch::DenseNetMini] {
            let mut m = ClassifierHandle::new_untrained(arch, (32, 32), 10, 7);
            let batch = random_batch(3, 32, 1);
            let (labels, probs) = predict_batch(&mut m, &batch).unwrap();
            assert_eq!(labels.len(), 3);
            assert_eq!(probs.shape(), &[3, 10]);
            for row in probs.axis_iter(Axis(0)) {
                assert!((row.sum() - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn predictions_are_bitwise_deterministic() {
        let mut m = ClassifierHandle::new_untrained(Arch::ResNetMini, (32, 32), 10, 3);
        let batch = random_batch(2, 32, 2);
        let (_, p1) = predict_batch(&mut m, &batch).unwrap();
        let (_, p2) = predict_batch(&mut m, &batch).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn wrong_scale_rejected() {
        let mut m = ClassifierHandle::new_untrained(Arch::VggMini, (32, 32), 10, 3);
        let batch = random_batch(1, 32, 2);
        let byte = ImageBatch::new(batch.data().clone(), ColorSpace::Rgb, ValueScale::Byte).unwrap();
        assert!(predict_batch(&mut m, &byte).is_err());
    }

    #[test]
    fn label_out_of_range_rejected() {
        let mut m = ClassifierHandle::new_untrained(Arch::VggMini, (32, 32), 10, 3);
        let batch = random_batch(1, 32, 2);
        assert!(input_gradient(&mut m, &batch, &[10]).is_err());
    }

    #[test]
    fn gradient_shape_matches_input() {
        let mut m = ClassifierHandle::new_untrained(Arch::ResNetMini, (32, 32), 10, 3);
        let batch = random_batch(2, 32, 2);
        let g = input_gradient(&mut m, &batch, &[1, 4]).unwrap();
        assert_eq!(g.shape(), batch.data().shape());
    }

    #[test]
    fn zero_final_layer_gives_zero_gradient() {
        let mut m = ClassifierHandle::new_untrained(Arch::VggMini, (32, 32), 10, 3);
        // zero the last dense layer => constant logits => zero loss gradient
        for t in m.net.params_mut().into_iter().rev().take(2) {
            t.value.fill(0.0);
        }
        let batch = random_batch(1, 32, 2);
        let g = input_gradient(&mut m, &batch, &[0]).unwrap();
        let max = g.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(max < 1e-12, "max |grad| = {max}");
    }
}
