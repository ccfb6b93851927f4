//! Tagged image batches.
//!
//! A batch is a rank-4 array of `N` images, `H x W` pixels, 3 channels, with
//! explicit color-space and value-scale tags. Conversions never rescale
//! silently; the tags are the contract.

use ndarray::Array4;

use crate::error::{LumaError, Result};

/// Color space of a batch. Channel order follows the tag:
/// `Rgb` is (R, G, B), `Ycbcr` is (Y, Cb, Cr).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    Rgb,
    Ycbcr,
}

impl std::fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColorSpace::Rgb => write!(f, "RGB"),
            ColorSpace::Ycbcr => write!(f, "YCbCr"),
        }
    }
}

/// Nominal value range of a batch: `Unit` is [0,1], `Byte` is [0,255].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueScale {
    Unit,
    Byte,
}

impl std::fmt::Display for ValueScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValueScale::Unit => write!(f, "unit"),
            ValueScale::Byte => write!(f, "byte"),
        }
    }
}

/// A batch of images with provenance tags.
///
/// Layout is `(N, H, W, 3)`. RGB unit-scale batches produced by attacks or
/// the defense are clamped to [0,1]; YCbCr intermediates are deliberately not
/// clamped so the affine conversions stay exact.
#[derive(Debug, Clone)]
pub struct ImageBatch {
    data: Array4<f64>,
    space: ColorSpace,
    scale: ValueScale,
}

impl ImageBatch {
    pub fn new(data: Array4<f64>, space: ColorSpace, scale: ValueScale) -> Result<Self> {
        if data.shape()[3] != 3 {
            return Err(LumaError::ShapeMismatch(format!(
                "expected 3 channels, got {}",
                data.shape()[3]
            )));
        }
        Ok(Self { data, space, scale })
    }

    /// RGB batch on [0,1] scale, the attack/classifier interchange format.
    pub fn rgb_unit(data: Array4<f64>) -> Result<Self> {
        Self::new(data, ColorSpace::Rgb, ValueScale::Unit)
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array4<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array4<f64> {
        self.data
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn scale(&self) -> ValueScale {
        self.scale
    }

    pub fn n_images(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// Pixels per image.
    pub fn n_pixels(&self) -> usize {
        self.height() * self.width()
    }

    /// Error unless the batch carries exactly the given tags.
    pub fn expect_tags(&self, space: ColorSpace, scale: ValueScale) -> Result<()> {
        if self.space != space || self.scale != scale {
            return Err(LumaError::WrongSpace {
                expected: format!("{space}/{scale}"),
                got: format!("{}/{}", self.space, self.scale),
            });
        }
        Ok(())
    }

    /// Error unless `other` has identical shape, space and scale.
    pub fn expect_like(&self, other: &Self) -> Result<()> {
        if self.data.shape() != other.data.shape() {
            return Err(LumaError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.data.shape(),
                other.data.shape()
            )));
        }
        if self.space != other.space || self.scale != other.scale {
            return Err(LumaError::WrongSpace {
                expected: format!("{}/{}", self.space, self.scale),
                got: format!("{}/{}", other.space, other.scale),
            });
        }
        Ok(())
    }

    /// Clamp every value into the nominal range of the scale tag.
    pub fn clamp_to_range(&mut self) {
        let hi = match self.scale {
            ValueScale::Unit => 1.0,
            ValueScale::Byte => 255.0,
        };
        self.data.mapv_inplace(|v| v.clamp(0.0, hi));
    }

    /// View of one image, `(H, W, 3)`.
    pub fn image(&self, i: usize) -> ndarray::ArrayView3<'_, f64> {
        self.data.index_axis(ndarray::Axis(0), i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn rejects_wrong_channel_count() {
        let arr = Array4::<f64>::zeros((1, 4, 4, 2));
        assert!(ImageBatch::new(arr, ColorSpace::Rgb, ValueScale::Unit).is_err());
    }

    #[test]
    fn tag_checks() {
        let b = ImageBatch::rgb_unit(Array4::zeros((2, 4, 4, 3))).unwrap();
        assert!(b.expect_tags(ColorSpace::Rgb, ValueScale::Unit).is_ok());
        assert!(b.expect_tags(ColorSpace::Ycbcr, ValueScale::Byte).is_err());
    }

    #[test]
    fn clamp_respects_scale() {
        let mut b = ImageBatch::new(
            Array4::from_elem((1, 1, 1, 3), 300.0),
            ColorSpace::Rgb,
            ValueScale::Byte,
        )
        .unwrap();
        b.clamp_to_range();
        assert_eq!(b.data()[[0, 0, 0, 0]], 255.0);
    }
}
