//! Flatten-plus-dense classifier. Exists for the analytic oracles: FGSM and
//! DDN have closed forms against a linear model.

use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;

use crate::nn::{Dense, Tensor};

use super::Mode;

#[derive(Debug, Clone)]
pub struct LinearNet {
    pub fc: Dense,
    flat_dims: (usize, usize, usize, usize),
    pub input_hw: (usize, usize),
    pub n_classes: usize,
}

impl LinearNet {
    pub fn new(input_hw: (usize, usize), n_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let (h, w) = input_hw;
        Self {
            fc: Dense::new(h * w * 3, n_classes, rng),
            flat_dims: (0, 0, 0, 0),
            input_hw,
            n_classes,
        }
    }

    /// Build from explicit weights `(features, classes)` and biases; feature
    /// order is NCHW-flattened.
    pub fn from_weights(
        input_hw: (usize, usize),
        w: Array2<f64>,
        b: Vec<f64>,
    ) -> Self {
        let n_classes = w.shape()[1];
        let mut rng = crate::rng::stream(0, "linear-placeholder");
        let mut net = Self::new(input_hw, n_classes, &mut rng);
        net.fc.w = Tensor::from_value(w.into_dyn());
        net.fc.b = Tensor::from_value(ndarray::Array1::from_vec(b).into_dyn());
        net
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array2<f64> {
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        self.flat_dims = (n, c, h, w);
        let flat = x
            .clone()
            .into_shape_with_order((n, c * h * w))
            .expect("contiguous input");
        self.fc.forward(&flat, mode == Mode::Train)
    }

    pub fn backward(&mut self, dlogits: &Array2<f64>, mode: Mode) -> Array4<f64> {
        let g = if mode == Mode::Train {
            self.fc.backward(dlogits)
        } else {
            self.fc.backward_input_only(dlogits)
        };
        let (n, c, h, w) = self.flat_dims;
        g.into_shape_with_order((n, c, h, w)).expect("contiguous")
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.fc.params_mut()
    }

    pub fn visit_state(&mut self, f: &mut dyn FnMut(String, &mut ndarray::ArrayD<f64>)) {
        self.fc.visit_state("fc", f);
    }
}
