//! Residual network: stride-1 stem plus four stride-2 residual stages.
//!
//! The four stage outputs (at H/2, H/4, H/8, H/16) double as the feature taps
//! the defense borrows, which is why the net downsamples four times.

use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;

use crate::nn::{Dense, GlobalAvgPool, Tensor};

use super::blocks::{ConvBnRelu, ResBlock};
use super::Mode;

/// Channel widths of the four stage outputs.
pub const STAGE_CHANNELS: [usize; 4] = [16, 32, 64, 64];

#[derive(Debug, Clone)]
pub struct ResNetMini {
    stem: ConvBnRelu,
    stages: Vec<ResBlock>,
    gap: GlobalAvgPool,
    fc: Dense,
    pub input_hw: (usize, usize),
    pub n_classes: usize,
}

impl ResNetMini {
    pub fn new(input_hw: (usize, usize), n_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let (h, w) = input_hw;
        assert!(h % 16 == 0 && w % 16 == 0, "input must be divisible by 16");
        let stages = vec![
            ResBlock::new(16, STAGE_CHANNELS[0], 2, rng),
            ResBlock::new(STAGE_CHANNELS[0], STAGE_CHANNELS[1], 2, rng),
            ResBlock::new(STAGE_CHANNELS[1], STAGE_CHANNELS[2], 2, rng),
            ResBlock::new(STAGE_CHANNELS[2], STAGE_CHANNELS[3], 2, rng),
        ];
        Self {
            stem: ConvBnRelu::new_stem(16, super::STEM_CHANNEL_COUPLING, rng),
            stages,
            gap: GlobalAvgPool::new(),
            fc: Dense::new(STAGE_CHANNELS[3], n_classes, rng),
            input_hw,
            n_classes,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array2<f64> {
        let mut y = self.stem.forward(x, mode);
        for stage in &mut self.stages {
            y = stage.forward(&y, mode);
        }
        let pooled = self.gap.forward(&y, mode == Mode::Train);
        self.fc.forward(&pooled, mode == Mode::Train)
    }

    pub fn backward(&mut self, dlogits: &Array2<f64>, mode: Mode) -> Array4<f64> {
        let train = mode == Mode::Train;
        let g = if train {
            self.fc.backward(dlogits)
        } else {
            self.fc.backward_input_only(dlogits)
        };
        let mut g = self.gap.backward(&g);
        for stage in self.stages.iter_mut().rev() {
            g = stage.backward(&g, mode);
        }
        self.stem.backward(&g, mode)
    }

    /// The four stage outputs in eval mode, shallow to deep. This is the
    /// frozen feature extractor the defense taps.
    pub fn features(&mut self, x: &Array4<f64>) -> [Array4<f64>; 4] {
        let y = self.stem.forward(x, Mode::Infer);
        let f1 = self.stages[0].forward(&y, Mode::Infer);
        let f2 = self.stages[1].forward(&f1, Mode::Infer);
        let f3 = self.stages[2].forward(&f2, Mode::Infer);
        let f4 = self.stages[3].forward(&f3, Mode::Infer);
        [f1, f2, f3, f4]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.stem.params_mut();
        for stage in &mut self.stages {
            p.extend(stage.params_mut());
        }
        p.extend(self.fc.params_mut());
        p
    }

    pub fn visit_state(&mut self, f: &mut dyn FnMut(String, &mut ndarray::ArrayD<f64>)) {
        self.stem.visit_state("stem", f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            stage.visit_state(&format!("stage{}", i + 1), f);
        }
        self.fc.visit_state("fc", f);
    }
}
