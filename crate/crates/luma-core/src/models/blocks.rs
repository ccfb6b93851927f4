//! Composite blocks shared by the classifier architectures and the defense.

use ndarray::Array4;
use rand_chacha::ChaCha8Rng;

use crate::nn::{BatchNorm2d, Conv2d, Relu, Tensor};

use super::Mode;

/// conv -> relu (no batch norm), for the plain VGG-style stack.
#[derive(Debug, Clone)]
pub struct ConvRelu {
    pub conv: Conv2d,
    pub relu: Relu,
}

impl ConvRelu {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(c_in, c_out, k, stride, pad, rng),
            relu: Relu::new(),
        }
    }

    /// Stem variant with channel-coupled kernels (see `Conv2d::new_channel_coupled`).
    pub fn new_stem(c_out: usize, gamma: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new_channel_coupled(3, c_out, 3, 1, 1, gamma, rng),
            relu: Relu::new(),
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let y = self.conv.forward(x, mode == Mode::Train);
        self.relu.forward(&y, mode != Mode::Infer)
    }

    pub fn backward(&mut self, gy: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let g = self.relu.backward(gy);
        match mode {
            Mode::Train => self.conv.backward(&g),
            _ => self.conv.backward_input_only(&g),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.conv.params_mut()
    }

    pub fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ndarray::ArrayD<f64>)) {
        self.conv.visit_state(&format!("{prefix}.conv"), f);
    }
}

/// conv -> batch norm -> relu.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub relu: Relu,
}

impl ConvBnRelu {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(c_in, c_out, k, stride, pad, rng),
            bn: BatchNorm2d::new(c_out),
            relu: Relu::new(),
        }
    }

    /// Stem variant with channel-coupled kernels (see `Conv2d::new_channel_coupled`).
    pub fn new_stem(c_out: usize, gamma: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new_channel_coupled(3, c_out, 3, 1, 1, gamma, rng),
            bn: BatchNorm2d::new(c_out),
            relu: Relu::new(),
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let y = self.conv.forward(x, mode == Mode::Train);
        let y = self.bn.forward(&y, mode == Mode::Train);
        self.relu.forward(&y, mode != Mode::Infer)
    }

    pub fn backward(&mut self, gy: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let g = self.relu.backward(gy);
        match mode {
            Mode::Train => {
                let g = self.bn.backward(&g);
                self.conv.backward(&g)
            }
            _ => {
                let g = self.bn.backward_input_only(&g);
                self.conv.backward_input_only(&g)
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.conv.params_mut();
        p.extend(self.bn.params_mut());
        p
    }

    pub fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ndarray::ArrayD<f64>)) {
        self.conv.visit_state(&format!("{prefix}.conv"), f);
        self.bn.visit_state(&format!("{prefix}.bn"), f);
    }
}

/// Two 3x3 conv+bn with a ReLU between, an identity or projected shortcut,
/// and a ReLU after the residual add.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub relu1: Relu,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub shortcut: Option<(Conv2d, BatchNorm2d)>,
    pub relu_out: Relu,
}

impl ResBlock {
    pub fn new(c_in: usize, c_out: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let shortcut = if stride != 1 || c_in != c_out {
            Some((
                Conv2d::new(c_in, c_out, 1, stride, 0, rng),
                BatchNorm2d::new(c_out),
            ))
        } else {
            None
        };
        Self {
            conv1: Conv2d::new(c_in, c_out, 3, stride, 1, rng),
            bn1: BatchNorm2d::new(c_out),
            relu1: Relu::new(),
            conv2: Conv2d::new(c_out, c_out, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(c_out),
            shortcut,
            relu_out: Relu::new(),
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let train = mode == Mode::Train;
        let cache = mode != Mode::Infer;
        let mut main = self.conv1.forward(x, train);
        main = self.bn1.forward(&main, train);
        main = self.relu1.forward(&main, cache);
        main = self.conv2.forward(&main, train);
        main = self.bn2.forward(&main, train);
        let skip = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(x, train);
                bn.forward(&s, train)
            }
            None => x.clone(),
        };
        main += &skip;
        self.relu_out.forward(&main, cache)
    }

    pub fn backward(&mut self, gy: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let g = self.relu_out.backward(gy);
        let train = mode == Mode::Train;
        // main branch
        let gm = if train {
            let gm = self.bn2.backward(&g);
            let gm = self.conv2.backward(&gm);
            let gm = self.relu1.backward(&gm);
            let gm = self.bn1.backward(&gm);
            self.conv1.backward(&gm)
        } else {
            let gm = self.bn2.backward_input_only(&g);
            let gm = self.conv2.backward_input_only(&gm);
            let gm = self.relu1.backward(&gm);
            let gm = self.bn1.backward_input_only(&gm);
            self.conv1.backward_input_only(&gm)
        };
        // shortcut branch
        let gs = match &mut self.shortcut {
            Some((conv, bn)) => {
                if train {
                    let gs = bn.backward(&g);
                    conv.backward(&gs)
                } else {
                    let gs = bn.backward_input_only(&g);
                    conv.backward_input_only(&gs)
                }
            }
            None => g,
        };
        gm + &gs
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.conv1.params_mut();
        p.extend(self.bn1.params_mut());
        p.extend(self.conv2.params_mut());
        p.extend(self.bn2.params_mut());
        if let Some((conv, bn)) = &mut self.shortcut {
            p.extend(conv.params_mut());
            p.extend(bn.params_mut());
        }
        p
    }

    pub fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ndarray::ArrayD<f64>)) {
        self.conv1.visit_state(&format!("{prefix}.conv1"), f);
        self.bn1.visit_state(&format!("{prefix}.bn1"), f);
        self.conv2.visit_state(&format!("{prefix}.conv2"), f);
        self.bn2.visit_state(&format!("{prefix}.bn2"), f);
        if let Some((conv, bn)) = &mut self.shortcut {
            conv.visit_state(&format!("{prefix}.sc_conv"), f);
            bn.visit_state(&format!("{prefix}.sc_bn"), f);
        }
    }
}
