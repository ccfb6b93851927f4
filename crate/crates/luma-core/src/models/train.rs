//! Seeded classifier training.

use ndarray::Axis;
use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{LumaError, Result};
use crate::nn::{softmax_cross_entropy, Adam, Normalize};

use super::{evaluate_topk, nhwc_to_nchw, Arch, ClassifierHandle, Mode, TrainMeta};

/// Hyperparameters for one training run.
#[derive(Debug, Clone)]
pub struct TrainRecipe {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub train_split: String,
    pub test_split: String,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        Self {
            epochs: 12,
            learning_rate: 1e-3,
            batch_size: 64,
            weight_decay: 5e-4,
            seed: 0,
            train_split: "train".into(),
            test_split: "test".into(),
        }
    }
}

/// Train a classifier from scratch. Fully seeded: identical recipes give
/// byte-identical parameters.
pub fn train_classifier(
    arch: Arch,
    recipe: &TrainRecipe,
    data: &Dataset,
) -> Result<ClassifierHandle> {
    if data.train.is_empty() {
        return Err(LumaError::EmptyInput("training split is empty".into()));
    }
    if recipe.batch_size == 0 {
        return Err(LumaError::InvalidConfig("batch_size must be >= 1".into()));
    }
    let hw = (data.train.images.height(), data.train.images.width());
    let mut model = ClassifierHandle::new_untrained(arch, hw, data.train.n_classes, recipe.seed);
    model.normalize = channel_stats(&data.train.images);

    let n = data.train.len();
    let train_nchw = nhwc_to_nchw(data.train.images.data());
    let mut opt = Adam::with_weight_decay(recipe.learning_rate, recipe.weight_decay);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..recipe.epochs {
        let mut rng = crate::rng::stream(recipe.seed, &format!("shuffle-epoch-{epoch}"));
        order.shuffle(&mut rng);
        for chunk in order.chunks(recipe.batch_size) {
            let x = train_nchw.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.train.labels[i]).collect();
            let logits = model.logits_nchw(&x, Mode::Train);
            let (_, mut dlogits) = softmax_cross_entropy(&logits, &labels);
            dlogits.mapv_inplace(|v| v / labels.len() as f64);
            model.net.backward(&dlogits, Mode::Train);
            let mut params = model.net.params_mut();
            opt.step(&mut params);
        }
    }

    let (train_acc, _) = evaluate_topk(&mut model, &data.train.images, &data.train.labels)?;
    let (test_acc, _) = if data.test.is_empty() {
        (0.0, 0.0)
    } else {
        evaluate_topk(&mut model, &data.test.images, &data.test.labels)?
    };
    model.meta = TrainMeta {
        seed: recipe.seed,
        epochs: recipe.epochs,
        learning_rate: recipe.learning_rate,
        batch_size: recipe.batch_size,
        train_acc,
        test_acc,
    };
    Ok(model)
}

/// Per-channel mean/std over a split, used as the model's input normalization.
fn channel_stats(images: &crate::image::ImageBatch) -> Normalize {
    let data = images.data();
    let count = (data.len() / 3) as f64;
    let mut mean = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    for px in data.as_slice().expect("standard layout").chunks_exact(3) {
        for c in 0..3 {
            mean[c] += px[c];
            sq[c] += px[c] * px[c];
        }
    }
    let mut std = [0.0f64; 3];
    for c in 0..3 {
        mean[c] /= count;
        std[c] = (sq[c] / count - mean[c] * mean[c]).max(0.0).sqrt().max(1e-3);
    }
    Normalize::new(mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_split;

    fn tiny_dataset() -> Dataset {
        Dataset {
            train: synthetic_split("train", 60, 11),
            test: synthetic_split("test", 40, 11),
        }
    }

    #[test]
    fn zero_epochs_is_chance_level_on_balanced_test() {
        let data = Dataset {
            train: synthetic_split("train", 20, 3),
            test: synthetic_split("test", 2000, 3),
        };
        let recipe = TrainRecipe {
            epochs: 0,
            ..TrainRecipe::default()
        };
        let model = train_classifier(Arch::ResNetMini, &recipe, &data).unwrap();
        assert!(
            (model.meta.test_acc - 0.10).abs() <= 0.02,
            "untrained accuracy {}",
            model.meta.test_acc
        );
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let data = Dataset {
            train: synthetic_split("train", 0, 3),
            test: synthetic_split("test", 10, 3),
        };
        assert!(train_classifier(Arch::VggMini, &TrainRecipe::default(), &data).is_err());
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let data = tiny_dataset();
        let recipe = TrainRecipe {
            epochs: 1,
            batch_size: 16,
            ..TrainRecipe::default()
        };
        let mut a = train_classifier(Arch::ResNetMini, &recipe, &data).unwrap();
        let mut b = train_classifier(Arch::ResNetMini, &recipe, &data).unwrap();
        let mut same = true;
        a.net.visit_state(&mut |name, arr| {
            b.net.visit_state(&mut |name2, arr2| {
                if name == name2 && *arr != *arr2 {
                    same = false;
                }
            });
        });
        assert!(same, "parameters differ across identical runs");
    }

    #[test]
    fn one_epoch_reduces_loss_on_train_set() {
        let data = tiny_dataset();
        let r0 = TrainRecipe {
            epochs: 0,
            ..TrainRecipe::default()
        };
        let r3 = TrainRecipe {
            epochs: 3,
            batch_size: 16,
            ..TrainRecipe::default()
        };
        let m0 = train_classifier(Arch::VggMini, &r0, &data).unwrap();
        let m3 = train_classifier(Arch::VggMini, &r3, &data).unwrap();
        assert!(m3.meta.train_acc > m0.meta.train_acc);
    }
}
