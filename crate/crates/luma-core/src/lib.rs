//! Adversarial perturbation analysis in the YCbCr color space.
//!
//! This crate studies how gradient-based adversarial attacks distribute their
//! perturbation across color channels, and provides:
//!
//! - exact JFIF RGB <-> YCbCr conversion with per-channel distance accounting,
//! - a zoo of small differentiable image classifiers with trainable parameters
//!   and input-gradient access,
//! - the attack suite (FGSM, BIM/ILLC/PGD, DDN) plus Y-channel constrained
//!   variants (FGSM-Y / PGD-Y),
//! - per-channel perturbation allocation reports and the Y-dominance statistic,
//! - the ResUpNet defense: a Y-channel restoration network that borrows
//!   multi-depth features from a frozen residual backbone.
//!
//! Everything is seeded and deterministic: identical seeds give bitwise
//! identical results, with or without the `parallel` feature.

pub mod analysis;
pub mod attacks;
pub mod checkpoint;
pub mod colorspace;
pub mod data;
pub mod defense;
pub mod error;
pub mod image;
pub mod models;
pub mod nn;
pub mod parallel;
pub mod rng;

pub use error::{LumaError, Result};
pub use image::{ColorSpace, ImageBatch, ValueScale};
