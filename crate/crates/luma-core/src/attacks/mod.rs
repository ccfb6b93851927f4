//! Gradient-based attack suite: FGSM, the BIM/ILLC/PGD iterative family,
//! DDN, and the Y-channel constrained variants FGSM-Y / PGD-Y.
//!
//! All attacks exchange RGB [0,1] batches with the classifier and report
//! per-image success flags and perturbation norms. Results are pure
//! functions of `(model, batch, labels, config)`.

mod ddn;
mod fgsm;
mod iterative;
mod ychannel;

pub use ddn::ddn;
pub use fgsm::fgsm;
pub use iterative::iterative_attack;
pub use ychannel::y_channel_attack;

use ndarray::Array4;

use crate::error::{LumaError, Result};
use crate::image::ImageBatch;
use crate::models::ClassifierHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    /// BIM / ILLC / PGD, depending on `targeted` and `random_init`.
    Iterative,
    Ddn,
    FgsmY,
    PgdY,
}

impl AttackKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Iterative => "iterative",
            AttackKind::Ddn => "ddn",
            AttackKind::FgsmY => "fgsm_y",
            AttackKind::PgdY => "pgd_y",
        }
    }
}

/// Attack hyperparameters. Norm budgets are L-infinity on the [0,1] scale
/// except for DDN, which minimizes an L2 norm and uses `n_iters` as its
/// budget knob.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    /// Per-step size (iterative kinds).
    pub alpha: f64,
    pub n_iters: usize,
    pub targeted: bool,
    pub random_init: bool,
    pub project_linf: bool,
    /// Multiplicative norm adjustment factor for DDN.
    pub ddn_gamma: f64,
    pub seed: u64,
}

impl AttackConfig {
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            epsilon,
            alpha: epsilon,
            n_iters: 1,
            targeted: false,
            random_init: false,
            project_linf: true,
            ddn_gamma: 0.05,
            seed: 0,
        }
    }

    /// Basic iterative method: repeated sign steps, no random start.
    pub fn bim(epsilon: f64, alpha: f64, n_iters: usize) -> Self {
        Self {
            kind: AttackKind::Iterative,
            epsilon,
            alpha,
            n_iters,
            ..Self::fgsm(epsilon)
        }
    }

    /// PGD defaults: 40 iterations, step eps/10, uniform random start.
    pub fn pgd(epsilon: f64) -> Self {
        Self {
            random_init: true,
            ..Self::bim(epsilon, epsilon / 10.0, 40)
        }
    }

    /// Iterative least-likely class method (targeted, minus-sign steps).
    pub fn illc(epsilon: f64, alpha: f64, n_iters: usize) -> Self {
        Self {
            targeted: true,
            ..Self::bim(epsilon, alpha, n_iters)
        }
    }

    /// DDN with the iteration budget as its main knob.
    pub fn ddn(n_iters: usize) -> Self {
        Self {
            kind: AttackKind::Ddn,
            epsilon: 0.0,
            alpha: 1.0,
            n_iters,
            targeted: false,
            random_init: false,
            project_linf: false,
            ddn_gamma: 0.05,
            seed: 0,
        }
    }

    fn y_attack(kind: AttackKind, epsilon: f64) -> Self {
        let alpha = 1e-4;
        Self {
            kind,
            epsilon,
            alpha,
            n_iters: ((epsilon / alpha).ceil() as usize).clamp(1, 200),
            targeted: false,
            random_init: kind == AttackKind::PgdY,
            project_linf: true,
            ddn_gamma: 0.05,
            seed: 0,
        }
    }

    /// Y-constrained FGSM: small sign steps, keeping only the luma component.
    pub fn fgsm_y(epsilon: f64) -> Self {
        Self::y_attack(AttackKind::FgsmY, epsilon)
    }

    /// Y-constrained PGD: like FGSM-Y plus a random start in the eps-ball.
    pub fn pgd_y(epsilon: f64) -> Self {
        Self::y_attack(AttackKind::PgdY, epsilon)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(LumaError::InvalidConfig("epsilon must be >= 0".into()));
        }
        match self.kind {
            AttackKind::Fgsm => {}
            AttackKind::FgsmY | AttackKind::PgdY => {
                if self.epsilon <= 0.0 {
                    return Err(LumaError::InvalidConfig(
                        "y-channel attacks need epsilon > 0".into(),
                    ));
                }
                if self.alpha <= 0.0 || self.n_iters == 0 {
                    return Err(LumaError::InvalidConfig(
                        "alpha > 0 and n_iters >= 1 required".into(),
                    ));
                }
            }
            _ => {
                if self.alpha <= 0.0 || self.n_iters == 0 {
                    return Err(LumaError::InvalidConfig(
                        "alpha > 0 and n_iters >= 1 required".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Adversarial batch plus per-image bookkeeping.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: ImageBatch,
    /// Untargeted: prediction differs from the true label. Targeted:
    /// prediction equals the target.
    pub success: Vec<bool>,
    pub linf_norm: Vec<f64>,
    pub l2_norm: Vec<f64>,
    pub iterations_used: Vec<usize>,
}

impl AttackResult {
    pub fn success_rate(&self) -> f64 {
        if self.success.is_empty() {
            return 0.0;
        }
        self.success.iter().filter(|&&s| s).count() as f64 / self.success.len() as f64
    }
}

/// Run the attack described by `cfg`.
pub fn run_attack(
    model: &mut ClassifierHandle,
    batch: &ImageBatch,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    match cfg.kind {
        AttackKind::Fgsm => fgsm(model, batch, labels, cfg),
        AttackKind::Iterative => iterative_attack(model, batch, labels, cfg),
        AttackKind::Ddn => ddn(model, batch, labels, cfg),
        AttackKind::FgsmY | AttackKind::PgdY => y_channel_attack(model, batch, labels, cfg),
    }
}

/// FGSM's sign with sign(0) = 0.
#[inline]
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-image L-infinity and L2 perturbation norms on the unit scale.
pub(crate) fn perturbation_norms(clean: &ImageBatch, adv: &ImageBatch) -> (Vec<f64>, Vec<f64>) {
    let n = clean.n_images();
    let per_image = clean.n_pixels() * 3;
    let c = clean.data().as_slice().expect("standard layout");
    let a = adv.data().as_slice().expect("standard layout");
    let pairs = crate::parallel::map_indexed(n, |i| {
        let ci = &c[i * per_image..(i + 1) * per_image];
        let ai = &a[i * per_image..(i + 1) * per_image];
        let mut linf = 0.0f64;
        let mut l2 = 0.0f64;
        for (x, y) in ci.iter().zip(ai.iter()) {
            let d = (x - y).abs();
            linf = linf.max(d);
            l2 += d * d;
        }
        (linf, l2.sqrt())
    });
    pairs.into_iter().unzip()
}

/// Success flags for the finished adversarial batch.
pub(crate) fn evaluate_success(
    model: &mut ClassifierHandle,
    adv: &ImageBatch,
    reference: &[usize],
    targeted: bool,
) -> Result<Vec<bool>> {
    let (preds, _) = crate::models::predict_batch(model, adv)?;
    Ok(preds
        .iter()
        .zip(reference)
        .map(|(p, r)| if targeted { p == r } else { p != r })
        .collect())
}

/// Clamp `adv` into the L-infinity ball around `clean` and into [0,1].
pub(crate) fn project_ball_and_range(adv: &mut Array4<f64>, clean: &Array4<f64>, eps: f64) {
    for (a, &c) in adv.iter_mut().zip(clean.iter()) {
        *a = a.clamp(c - eps, c + eps).clamp(0.0, 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_follow_the_recorded_choices() {
        let pgd = AttackConfig::pgd(0.02);
        assert_eq!(pgd.n_iters, 40);
        assert!((pgd.alpha - 0.002).abs() < 1e-12);
        assert!(pgd.random_init);

        let fy = AttackConfig::fgsm_y(0.004);
        assert!((fy.alpha - 1e-4).abs() < 1e-15);
        assert_eq!(fy.n_iters, 40);
        let fy_big = AttackConfig::fgsm_y(0.5);
        assert_eq!(fy_big.n_iters, 200); // capped

        assert!(AttackConfig::fgsm(-0.1).validate().is_err());
        assert!(AttackConfig::fgsm_y(0.0).validate().is_err());
        assert!(AttackConfig::bim(0.01, 0.0, 5).validate().is_err());
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(3.5), 1.0);
        assert_eq!(sign(-0.2), -1.0);
    }
}
