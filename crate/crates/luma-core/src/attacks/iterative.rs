//! Iterative sign-gradient family: BIM, ILLC and PGD.
//!
//! One loop covers all three. `targeted = false, random_init = false` is
//! BIM; `targeted = true` is ILLC with the least-likely class as the fixed
//! target and minus-sign steps; `random_init = true` starts uniformly inside
//! the eps-ball, which with projection is PGD.

use ndarray::Array4;
use rand::Rng;

use crate::error::Result;
use crate::image::ImageBatch;
use crate::models::{input_gradient, predict_batch, ClassifierHandle};

use super::{evaluate_success, perturbation_norms, project_ball_and_range, sign, AttackConfig, AttackResult};

pub fn iterative_attack(
    model: &mut ClassifierHandle,
    batch: &ImageBatch,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let n = batch.n_images();

    // ILLC target: least-likely class under the clean prediction, fixed for
    // the whole run.
    let (reference, step_sign): (Vec<usize>, f64) = if cfg.targeted {
        let (_, probs) = predict_batch(model, batch)?;
        let targets = probs
            .axis_iter(ndarray::Axis(0))
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v < row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect();
        (targets, -1.0)
    } else {
        (labels.to_vec(), 1.0)
    };

    let clean = batch.data();
    let mut adv: Array4<f64> = clean.clone();
    if cfg.random_init {
        let mut rng = crate::rng::stream(cfg.seed, "pgd-init");
        for v in adv.iter_mut() {
            *v += (rng.random::<f64>() * 2.0 - 1.0) * cfg.epsilon;
        }
        project_ball_and_range(&mut adv, clean, cfg.epsilon);
    }

    for _ in 0..cfg.n_iters {
        let cur = ImageBatch::rgb_unit(adv.clone())?;
        let grad = input_gradient(model, &cur, &reference)?;
        for (a, g) in adv.iter_mut().zip(grad.iter()) {
            *a += step_sign * cfg.alpha * sign(*g);
        }
        if cfg.project_linf {
            project_ball_and_range(&mut adv, clean, cfg.epsilon);
        } else {
            for v in adv.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }

    let adversarial = ImageBatch::rgb_unit(adv)?;
    let success = evaluate_success(model, &adversarial, &reference, cfg.targeted)?;
    let (linf_norm, l2_norm) = perturbation_norms(batch, &adversarial);
    Ok(AttackResult {
        adversarial,
        success,
        linf_norm,
        l2_norm,
        iterations_used: vec![cfg.n_iters; n],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::fgsm;
    use crate::models::{Arch, ClassifierHandle, Mode, Net};
    use ndarray::Array4;
    use rand::Rng;

    fn random_batch(n: usize, seed: u64) -> ImageBatch {
        let mut rng = crate::rng::stream(seed, "iter-test");
        let mut data = Array4::zeros((n, 32, 32, 3));
        for v in data.iter_mut() {
            *v = 0.2 + rng.random::<f64>() * 0.6;
        }
        ImageBatch::rgb_unit(data).unwrap()
    }

    #[test]
    fn single_step_equals_fgsm_bitwise() {
        let mut m = ClassifierHandle::new_untrained(Arch::ResNetMini, (32, 32), 10, 9);
        let batch = random_batch(3, 4);
        let labels = vec![1, 2, 3];
        let eps = 0.02;
        let fg = fgsm(&mut m, &batch, &labels, &AttackConfig::fgsm(eps)).unwrap();
        let it = iterative_attack(&mut m, &batch, &labels, &AttackConfig::bim(eps, eps, 1)).unwrap();
        assert_eq!(fg.adversarial.data(), it.adversarial.data());
        assert_eq!(fg.success, it.success);
    }

    #[test]
    fn stays_in_ball_and_range_with_random_init() {
        let mut m = ClassifierHandle::new_untrained(Arch::VggMini, (32, 32), 10, 9);
        let batch = random_batch(2, 5);
        let labels = vec![0, 1];
        let cfg = AttackConfig::pgd(0.05).with_seed(3);
        let res = iterative_attack(&mut m, &batch, &labels, &cfg).unwrap();
        for (a, c) in res.adversarial.data().iter().zip(batch.data().iter()) {
            assert!((a - c).abs() <= 0.05 + 1e-9);
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn identical_seeds_give_identical_results() {
        let mut m = ClassifierHandle::new_untrained(Arch::ResNetMini, (32, 32), 10, 9);
        let batch = random_batch(2, 6);
        let labels = vec![4, 7];
        let cfg = AttackConfig::pgd(0.03).with_seed(11);
        let a = iterative_attack(&mut m, &batch, &labels, &cfg).unwrap();
        let b = iterative_attack(&mut m, &batch, &labels, &cfg).unwrap();
        assert_eq!(a.adversarial.data(), b.adversarial.data());
        assert_eq!(a.success, b.success);
        assert_eq!(a.l2_norm, b.l2_norm);
    }

    #[test]
    fn illc_target_logit_increases_monotonically_on_linear_model() {
        // 3-class linear model; with fixed target and minus-sign steps the
        // target logit must rise with the iteration count until clipping.
        let mut rng = crate::rng::stream(1, "illc-weights");
        let feat = 2 * 2 * 3;
        let mut w = ndarray::Array2::<f64>::zeros((feat, 3));
        for v in w.iter_mut() {
            *v = rng.random::<f64>() * 2.0 - 1.0;
        }
        let net = crate::models::linear::LinearNet::from_weights((2, 2), w.clone(), vec![0.0; 3]);
        let mut m = ClassifierHandle {
            arch: Arch::Linear,
            normalize: crate::nn::Normalize::identity(),
            net: Net::Linear(net),
            meta: Default::default(),
        };
        let mut data = Array4::zeros((1, 2, 2, 3));
        for v in data.iter_mut() {
            *v = 0.5;
        }
        let batch = ImageBatch::rgb_unit(data).unwrap();
        let labels = vec![0];

        // find the fixed least-likely target once
        let (_, probs) = predict_batch(&mut m, &batch).unwrap();
        let target = (0..3).min_by(|&a, &b| probs[[0, a]].partial_cmp(&probs[[0, b]]).unwrap()).unwrap();

        let mut last = f64::NEG_INFINITY;
        for iters in 1..=5 {
            let cfg = AttackConfig::illc(0.2, 0.02, iters);
            let res = iterative_attack(&mut m, &batch, &labels, &cfg).unwrap();
            let x = crate::models::nhwc_to_nchw(res.adversarial.data());
            let logits = m.logits_nchw(&x, Mode::Infer);
            let t = logits[[0, target]];
            assert!(t > last, "target logit did not increase: {t} <= {last}");
            last = t;
        }
    }
}
