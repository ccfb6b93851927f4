//! Adaptive-moment gradient descent.

use ndarray::ArrayD;

use super::Tensor;

/// Adam with the usual bias-corrected moment estimates and optional
/// decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_weight_decay(lr: f64, weight_decay: f64) -> Self {
        Self {
            weight_decay,
            ..Self::new(lr)
        }
    }

    /// Apply one update from the accumulated gradients, then clear them.
    ///
    /// The slice must contain the same parameters in the same order on every
    /// call.
    pub fn step(&mut self, params: &mut [&mut Tensor]) {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter set changed");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        let decay = self.lr * self.weight_decay;
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for ((pv, g), (mv, vv)) in p
                .value
                .iter_mut()
                .zip(p.grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * g;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g;
                let m_hat = *mv / b1t;
                let v_hat = *vv / b2t;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps) + decay * *pv;
            }
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(p) = (p - 3)^2, df/dp = 2 (p - 3)
        let mut p = Tensor::zeros(&[1]);
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let g = 2.0 * (p.value[[0]] - 3.0);
            p.grad[[0]] = g;
            opt.step(&mut [&mut p]);
        }
        assert!((p.value[[0]] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn first_step_size_is_lr() {
        // with bias correction, the very first Adam step has magnitude ~lr
        let mut p = Tensor::zeros(&[1]);
        p.grad[[0] ] = 0.7;
        let mut opt = Adam::new(0.01);
        opt.step(&mut [&mut p]);
        assert!((p.value[[0]].abs() - 0.01).abs() < 1e-6);
    }
}
