//! Plain convolutional stack: six 3x3 convs with ReLU, three max-pools, and
//! a two-layer classifier head.

use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;

use crate::nn::layers::{relu2d, relu2d_backward};
use crate::nn::{Dense, MaxPool2, Tensor};

use super::blocks::ConvRelu;
use super::Mode;

#[derive(Debug, Clone)]
pub struct VggMini {
    c1a: ConvRelu,
    c1b: ConvRelu,
    p1: MaxPool2,
    c2a: ConvRelu,
    c2b: ConvRelu,
    p2: MaxPool2,
    c3a: ConvRelu,
    c3b: ConvRelu,
    p3: MaxPool2,
    fc1: Dense,
    fc2: Dense,
    flat_dims: (usize, usize, usize, usize),
    cache_fc1_y: Option<Array2<f64>>,
    pub input_hw: (usize, usize),
    pub n_classes: usize,
}

impl VggMini {
    pub fn new(input_hw: (usize, usize), n_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let (h, w) = input_hw;
        assert!(h % 8 == 0 && w % 8 == 0, "input must be divisible by 8");
        let feat = 64 * (h / 8) * (w / 8);
        Self {
            c1a: ConvRelu::new_stem(16, super::STEM_CHANNEL_COUPLING, rng),
            c1b: ConvRelu::new(16, 16, 3, 1, 1, rng),
            p1: MaxPool2::new(),
            c2a: ConvRelu::new(16, 32, 3, 1, 1, rng),
            c2b: ConvRelu::new(32, 32, 3, 1, 1, rng),
            p2: MaxPool2::new(),
            c3a: ConvRelu::new(32, 64, 3, 1, 1, rng),
            c3b: ConvRelu::new(64, 64, 3, 1, 1, rng),
            p3: MaxPool2::new(),
            fc1: Dense::new(feat, 128, rng),
            fc2: Dense::new(128, n_classes, rng),
            flat_dims: (0, 0, 0, 0),
            cache_fc1_y: None,
            input_hw,
            n_classes,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array2<f64> {
        let cache = mode != Mode::Infer;
        let mut y = self.c1a.forward(x, mode);
        y = self.c1b.forward(&y, mode);
        y = self.p1.forward(&y, cache);
        y = self.c2a.forward(&y, mode);
        y = self.c2b.forward(&y, mode);
        y = self.p2.forward(&y, cache);
        y = self.c3a.forward(&y, mode);
        y = self.c3b.forward(&y, mode);
        y = self.p3.forward(&y, cache);
        let (n, c, h, w) = (y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]);
        self.flat_dims = (n, c, h, w);
        let flat = y
            .into_shape_with_order((n, c * h * w))
            .expect("contiguous features");
        let h1 = self.fc1.forward(&flat, mode == Mode::Train);
        let h1 = relu2d(&h1);
        if cache {
            self.cache_fc1_y = Some(h1.clone());
        }
        self.fc2.forward(&h1, mode == Mode::Train)
    }

    /// Propagate the logit gradient back to the input. `Train` also
    /// accumulates parameter gradients.
    pub fn backward(&mut self, dlogits: &Array2<f64>, mode: Mode) -> Array4<f64> {
        let train = mode == Mode::Train;
        let fc1_y = self.cache_fc1_y.take().expect("forward before backward");
        let g = if train {
            self.fc2.backward(dlogits)
        } else {
            self.fc2.backward_input_only(dlogits)
        };
        let g = relu2d_backward(&g, &fc1_y);
        let g = if train {
            self.fc1.backward(&g)
        } else {
            self.fc1.backward_input_only(&g)
        };
        let (n, c, h, w) = self.flat_dims;
        let g = g
            .into_shape_with_order((n, c, h, w))
            .expect("contiguous gradient");
        let g = self.p3.backward(&g);
        let g = self.c3b.backward(&g, mode);
        let g = self.c3a.backward(&g, mode);
        let g = self.p2.backward(&g);
        let g = self.c2b.backward(&g, mode);
        let g = self.c2a.backward(&g, mode);
        let g = self.p1.backward(&g);
        let g = self.c1b.backward(&g, mode);
        self.c1a.backward(&g, mode)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.c1a.params_mut();
        p.extend(self.c1b.params_mut());
        p.extend(self.c2a.params_mut());
        p.extend(self.c2b.params_mut());
        p.extend(self.c3a.params_mut());
        p.extend(self.c3b.params_mut());
        p.extend(self.fc1.params_mut());
        p.extend(self.fc2.params_mut());
        p
    }

    pub fn visit_state(&mut self, f: &mut dyn FnMut(String, &mut ndarray::ArrayD<f64>)) {
        self.c1a.visit_state("c1a", f);
        self.c1b.visit_state("c1b", f);
        self.c2a.visit_state("c2a", f);
        self.c2b.visit_state("c2b", f);
        self.c3a.visit_state("c3a", f);
        self.c3b.visit_state("c3b", f);
        self.fc1.visit_state("fc1", f);
        self.fc2.visit_state("fc2", f);
    }
}
