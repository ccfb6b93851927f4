//! Single-step fast gradient sign method.

use crate::error::Result;
use crate::image::ImageBatch;
use crate::models::{input_gradient, ClassifierHandle};

use super::{evaluate_success, perturbation_norms, sign, AttackConfig, AttackResult};

/// `x_adv = clip_[0,1](x + eps * sign(grad_x J(theta, x, y)))`.
pub fn fgsm(
    model: &mut ClassifierHandle,
    batch: &ImageBatch,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let grad = input_gradient(model, batch, labels)?;
    let mut adv = batch.data().clone();
    let eps = cfg.epsilon;
    for (a, g) in adv.iter_mut().zip(grad.iter()) {
        *a = (*a + eps * sign(*g)).clamp(0.0, 1.0);
    }
    let adversarial = ImageBatch::rgb_unit(adv)?;
    let success = evaluate_success(model, &adversarial, labels, false)?;
    let (linf_norm, l2_norm) = perturbation_norms(batch, &adversarial);
    let n = batch.n_images();
    Ok(AttackResult {
        adversarial,
        success,
        linf_norm,
        l2_norm,
        iterations_used: vec![1; n],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{predict_batch, Arch, ClassifierHandle};
    use ndarray::Array4;
    use rand::Rng;

    fn random_batch(n: usize, seed: u64) -> ImageBatch {
        let mut rng = crate::rng::stream(seed, "fgsm-test");
        let mut data = Array4::zeros((n, 32, 32, 3));
        for v in data.iter_mut() {
            *v = 0.2 + rng.random::<f64>() * 0.6;
        }
        ImageBatch::rgb_unit(data).unwrap()
    }

    #[test]
    fn zero_epsilon_returns_the_input() {
        let mut m = ClassifierHandle::new_untrained(Arch::ResNetMini, (32, 32), 10, 5);
        let batch = random_batch(3, 1);
        let labels = vec![0, 1, 2];
        let res = fgsm(&mut m, &batch, &labels, &AttackConfig::fgsm(0.0)).unwrap();
        assert_eq!(res.adversarial.data(), batch.data());
        // success must equal plain misclassification of x
        let (preds, _) = predict_batch(&mut m, &batch).unwrap();
        for i in 0..3 {
            assert_eq!(res.success[i], preds[i] != labels[i]);
        }
    }

    #[test]
    fn budget_respected_for_every_image() {
        let mut m = ClassifierHandle::new_untrained(Arch::VggMini, (32, 32), 10, 5);
        let batch = random_batch(4, 2);
        let labels = vec![0, 1, 2, 3];
        let eps = 0.03;
        let res = fgsm(&mut m, &batch, &labels, &AttackConfig::fgsm(eps)).unwrap();
        for &linf in &res.linf_norm {
            assert!(linf <= eps + 1e-6, "linf {linf} > eps {eps}");
        }
        for v in res.adversarial.data().iter() {
            assert!((0.0..=1.0).contains(v));
        }
    }
}
