//! Densely connected network: three blocks of pre-activation layers whose
//! outputs concatenate onto the running feature stack, with 1x1 transitions.

use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;

use crate::nn::{
    concat_channels, split_channels, AvgPool2, BatchNorm2d, Conv2d, Dense, GlobalAvgPool, Relu,
    Tensor,
};

use super::Mode;

const GROWTH: usize = 8;
const LAYERS_PER_BLOCK: usize = 4;

/// bn -> relu -> 3x3 conv producing `GROWTH` new channels.
#[derive(Debug, Clone)]
struct DenseLayer {
    bn: BatchNorm2d,
    relu: Relu,
    conv: Conv2d,
}

impl DenseLayer {
    fn new(c_in: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            bn: BatchNorm2d::new(c_in),
            relu: Relu::new(),
            conv: Conv2d::new(c_in, GROWTH, 3, 1, 1, rng),
        }
    }

    fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let y = self.bn.forward(x, mode == Mode::Train);
        let y = self.relu.forward(&y, mode != Mode::Infer);
        self.conv.forward(&y, mode == Mode::Train)
    }

    fn backward(&mut self, gy: &Array4<f64>, mode: Mode) -> Array4<f64> {
        if mode == Mode::Train {
            let g = self.conv.backward(gy);
            let g = self.relu.backward(&g);
            self.bn.backward(&g)
        } else {
            let g = self.conv.backward_input_only(gy);
            let g = self.relu.backward(&g);
            self.bn.backward_input_only(&g)
        }
    }
}

#[derive(Debug, Clone)]
struct DenseBlock {
    layers: Vec<DenseLayer>,
    widths: Vec<usize>, // channel widths of the stacked features
}

impl DenseBlock {
    fn new(c_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(LAYERS_PER_BLOCK);
        let mut widths = vec![c_in];
        let mut c = c_in;
        for _ in 0..LAYERS_PER_BLOCK {
            layers.push(DenseLayer::new(c, rng));
            widths.push(GROWTH);
            c += GROWTH;
        }
        Self { layers, widths }
    }

    fn c_out(&self) -> usize {
        self.widths.iter().sum()
    }

    fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let mut feats: Vec<Array4<f64>> = vec![x.clone()];
        for layer in &mut self.layers {
            let stacked = {
                let refs: Vec<&Array4<f64>> = feats.iter().collect();
                concat_channels(&refs)
            };
            let new = layer.forward(&stacked, mode);
            feats.push(new);
        }
        let refs: Vec<&Array4<f64>> = feats.iter().collect();
        concat_channels(&refs)
    }

    fn backward(&mut self, gy: &Array4<f64>, mode: Mode) -> Array4<f64> {
        // grads aligned with the feature stack [input, out_1, .., out_L]
        let mut grads = split_channels(gy, &self.widths);
        for (l, layer) in self.layers.iter_mut().enumerate().rev() {
            let g_new = grads[l + 1].clone();
            let g_stacked = layer.backward(&g_new, mode);
            let splits = split_channels(&g_stacked, &self.widths[..=l]);
            for (gi, s) in grads.iter_mut().zip(splits.into_iter()) {
                *gi += &s;
            }
        }
        grads.swap_remove(0)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = Vec::new();
        for layer in &mut self.layers {
            p.extend(layer.bn.params_mut());
            p.extend(layer.conv.params_mut());
        }
        p
    }

    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ndarray::ArrayD<f64>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.bn.visit_state(&format!("{prefix}.l{i}.bn"), f);
            layer.conv.visit_state(&format!("{prefix}.l{i}.conv"), f);
        }
    }
}

/// bn -> relu -> 1x1 conv halving channels -> 2x2 average pool.
#[derive(Debug, Clone)]
struct Transition {
    bn: BatchNorm2d,
    relu: Relu,
    conv: Conv2d,
    pool: AvgPool2,
}

impl Transition {
    fn new(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            bn: BatchNorm2d::new(c_in),
            relu: Relu::new(),
            conv: Conv2d::new(c_in, c_out, 1, 1, 0, rng),
            pool: AvgPool2::new(),
        }
    }

    fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let y = self.bn.forward(x, mode == Mode::Train);
        let y = self.relu.forward(&y, mode != Mode::Infer);
        let y = self.conv.forward(&y, mode == Mode::Train);
        self.pool.forward(&y, true)
    }

    fn backward(&mut self, gy: &Array4<f64>, mode: Mode) -> Array4<f64> {
        let g = self.pool.backward(gy);
        if mode == Mode::Train {
            let g = self.conv.backward(&g);
            let g = self.relu.backward(&g);
            self.bn.backward(&g)
        } else {
            let g = self.conv.backward_input_only(&g);
            let g = self.relu.backward(&g);
            self.bn.backward_input_only(&g)
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseNetMini {
    stem: Conv2d,
    block1: DenseBlock,
    trans1: Transition,
    block2: DenseBlock,
    trans2: Transition,
    block3: DenseBlock,
    head_bn: BatchNorm2d,
    head_relu: Relu,
    gap: GlobalAvgPool,
    fc: Dense,
    pub input_hw: (usize, usize),
    pub n_classes: usize,
}

impl DenseNetMini {
    pub fn new(input_hw: (usize, usize), n_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let (h, w) = input_hw;
        assert!(h % 4 == 0 && w % 4 == 0, "input must be divisible by 4");
        let stem = Conv2d::new_channel_coupled(3, 16, 3, 1, 1, super::STEM_CHANNEL_COUPLING, rng);
        let block1 = DenseBlock::new(16, rng);
        let t1_out = block1.c_out() / 2;
        let trans1 = Transition::new(block1.c_out(), t1_out, rng);
        let block2 = DenseBlock::new(t1_out, rng);
        let t2_out = block2.c_out() / 2;
        let trans2 = Transition::new(block2.c_out(), t2_out, rng);
        let block3 = DenseBlock::new(t2_out, rng);
        let c_final = block3.c_out();
        Self {
            stem,
            block1,
            trans1,
            block2,
            trans2,
            head_bn: BatchNorm2d::new(c_final),
            head_relu: Relu::new(),
            gap: GlobalAvgPool::new(),
            fc: Dense::new(c_final, n_classes, rng),
            block3,
            input_hw,
            n_classes,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array2<f64> {
        let y = self.stem.forward(x, mode == Mode::Train);
        let y = self.block1.forward(&y, mode);
        let y = self.trans1.forward(&y, mode);
        let y = self.block2.forward(&y, mode);
        let y = self.trans2.forward(&y, mode);
        let y = self.block3.forward(&y, mode);
        let y = self.head_bn.forward(&y, mode == Mode::Train);
        let y = self.head_relu.forward(&y, mode != Mode::Infer);
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
        let g = self.gap.backward(&g);
        let g = self.head_relu.backward(&g);
        let g = if train {
            self.head_bn.backward(&g)
        } else {
            self.head_bn.backward_input_only(&g)
        };
        let g = self.block3.backward(&g, mode);
        let g = self.trans2.backward(&g, mode);
        let g = self.block2.backward(&g, mode);
        let g = self.trans1.backward(&g, mode);
        let g = self.block1.backward(&g, mode);
        if train {
            self.stem.backward(&g)
        } else {
            self.stem.backward_input_only(&g)
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.stem.params_mut();
        p.extend(self.block1.params_mut());
        p.extend(self.trans1.bn.params_mut());
        p.extend(self.trans1.conv.params_mut());
        p.extend(self.block2.params_mut());
        p.extend(self.trans2.bn.params_mut());
        p.extend(self.trans2.conv.params_mut());
        p.extend(self.block3.params_mut());
        p.extend(self.head_bn.params_mut());
        p.extend(self.fc.params_mut());
        p
    }

    pub fn visit_state(&mut self, f: &mut dyn FnMut(String, &mut ndarray::ArrayD<f64>)) {
        self.stem.visit_state("stem", f);
        self.block1.visit_state("block1", f);
        self.trans1.bn.visit_state("trans1.bn", f);
        self.trans1.conv.visit_state("trans1.conv", f);
        self.block2.visit_state("block2", f);
        self.trans2.bn.visit_state("trans2.bn", f);
        self.trans2.conv.visit_state("trans2.conv", f);
        self.block3.visit_state("block3", f);
        self.head_bn.visit_state("head_bn", f);
        self.fc.visit_state("fc", f);
    }
}
