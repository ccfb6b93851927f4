//! JFIF RGB <-> YCbCr conversion, channel surgery and per-channel distances.
//!
//! Conversions follow the full-range JFIF 1.02 matrices:
//!
//! ```text
//! Y  =       0.299 R + 0.587 G + 0.114 B
//! Cb = 128 - 0.168736 R - 0.331264 G + 0.5 B
//! Cr = 128 + 0.5 R - 0.418688 G - 0.081312 B
//!
//! R = Y + 1.402 (Cr - 128)
//! G = Y - 0.344136 (Cb - 128) - 0.714136 (Cr - 128)
//! B = Y + 1.772 (Cb - 128)
//! ```
//!
//! Both maps are applied per pixel in f64 with no clamping and no integer
//! quantization. YCbCr batches are always on BYTE scale; round-tripping an
//! RGB image through both maps reproduces it to better than 1e-3 on the
//! [0,255] scale (the printed inverse coefficients are rounded, which is the
//! only error source).

use ndarray::Array4;

use crate::error::{LumaError, Result};
use crate::image::{ColorSpace, ImageBatch, ValueScale};
use crate::parallel::for_each_chunk_mut;

/// Forward luma row; coefficients sum to exactly 1.
pub const Y_FROM_RGB: [f64; 3] = [0.299, 0.587, 0.114];
/// Forward Cb row; coefficients sum to exactly 0.
pub const CB_FROM_RGB: [f64; 3] = [-0.168736, -0.331264, 0.5];
/// Forward Cr row; coefficients sum to exactly 0.
pub const CR_FROM_RGB: [f64; 3] = [0.5, -0.418688, -0.081312];

const CHROMA_OFFSET: f64 = 128.0;

/// One RGB pixel (byte scale) to YCbCr (byte scale), unclamped.
#[inline]
pub fn pixel_rgb_to_ycbcr(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = Y_FROM_RGB[0] * r + Y_FROM_RGB[1] * g + Y_FROM_RGB[2] * b;
    let cb = CHROMA_OFFSET + CB_FROM_RGB[0] * r + CB_FROM_RGB[1] * g + CB_FROM_RGB[2] * b;
    let cr = CHROMA_OFFSET + CR_FROM_RGB[0] * r + CR_FROM_RGB[1] * g + CR_FROM_RGB[2] * b;
    (y, cb, cr)
}

/// One YCbCr pixel (byte scale) to RGB (byte scale), unclamped.
#[inline]
pub fn pixel_ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> (f64, f64, f64) {
    let cb = cb - CHROMA_OFFSET;
    let cr = cr - CHROMA_OFFSET;
    let r = y + 1.402 * cr;
    let g = y - 0.344136 * cb - 0.714136 * cr;
    let b = y + 1.772 * cb;
    (r, g, b)
}

/// Luma of one RGB pixel given on unit scale, returned on byte scale.
#[inline]
pub fn pixel_luma_byte(r: f64, g: f64, b: f64) -> f64 {
    255.0 * (Y_FROM_RGB[0] * r + Y_FROM_RGB[1] * g + Y_FROM_RGB[2] * b)
}

/// Convert an RGB batch to YCbCr (byte scale, unclamped).
///
/// Unit-scale input is mapped to byte scale internally; the affine map is
/// then exact, so out-of-range chroma like Cr = 255.5 for pure red is kept.
pub fn rgb_to_ycbcr(batch: &ImageBatch) -> Result<ImageBatch> {
    if batch.space() != ColorSpace::Rgb {
        return Err(LumaError::WrongSpace {
            expected: "RGB".into(),
            got: batch.space().to_string(),
        });
    }
    let to_byte = match batch.scale() {
        ValueScale::Unit => 255.0,
        ValueScale::Byte => 1.0,
    };
    let mut out = batch.data().clone();
    let (slice, chunk) = rows_of(&mut out);
    for_each_chunk_mut(slice, chunk, |_, row| {
        for px in row.chunks_exact_mut(3) {
            let (y, cb, cr) =
                pixel_rgb_to_ycbcr(px[0] * to_byte, px[1] * to_byte, px[2] * to_byte);
            px[0] = y;
            px[1] = cb;
            px[2] = cr;
        }
    });
    ImageBatch::new(out, ColorSpace::Ycbcr, ValueScale::Byte)
}

/// Convert a YCbCr batch (byte scale) back to RGB.
///
/// With `clamp_unit` the result is rescaled to [0,1] and clamped, ready for a
/// classifier; otherwise it stays on byte scale, unclamped.
pub fn ycbcr_to_rgb(batch: &ImageBatch, clamp_unit: bool) -> Result<ImageBatch> {
    batch.expect_tags(ColorSpace::Ycbcr, ValueScale::Byte)?;
    let mut out = batch.data().clone();
    let (slice, chunk) = rows_of(&mut out);
    for_each_chunk_mut(slice, chunk, |_, row| {
        for px in row.chunks_exact_mut(3) {
            let (r, g, b) = pixel_ycbcr_to_rgb(px[0], px[1], px[2]);
            if clamp_unit {
                px[0] = (r / 255.0).clamp(0.0, 1.0);
                px[1] = (g / 255.0).clamp(0.0, 1.0);
                px[2] = (b / 255.0).clamp(0.0, 1.0);
            } else {
                px[0] = r;
                px[1] = g;
                px[2] = b;
            }
        }
    });
    let scale = if clamp_unit {
        ValueScale::Unit
    } else {
        ValueScale::Byte
    };
    ImageBatch::new(out, ColorSpace::Rgb, scale)
}

/// Per-channel L2 distances between two batches of the same space and scale.
///
/// Values are always reported on byte scale so RGB and YCbCr numbers are
/// comparable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDelta {
    pub per_channel_l2: [f64; 3],
    pub space: ColorSpace,
    pub n_pixels: usize,
}

/// sqrt of the per-channel sum of squared differences over all pixels of all
/// images, on byte scale.
pub fn per_channel_l2(a: &ImageBatch, b: &ImageBatch) -> Result<ChannelDelta> {
    a.expect_like(b)?;
    let to_byte = match a.scale() {
        ValueScale::Unit => 255.0,
        ValueScale::Byte => 1.0,
    };
    let sums = per_image_sq_sums(a, b, to_byte)
        .into_iter()
        .fold([0.0f64; 3], |acc, s| {
            [acc[0] + s[0], acc[1] + s[1], acc[2] + s[2]]
        });
    Ok(ChannelDelta {
        per_channel_l2: [sums[0].sqrt(), sums[1].sqrt(), sums[2].sqrt()],
        space: a.space(),
        n_pixels: a.n_images() * a.n_pixels(),
    })
}

/// Per-image `ChannelDelta`s, one per batch element.
pub fn per_channel_l2_per_image(a: &ImageBatch, b: &ImageBatch) -> Result<Vec<ChannelDelta>> {
    a.expect_like(b)?;
    let to_byte = match a.scale() {
        ValueScale::Unit => 255.0,
        ValueScale::Byte => 1.0,
    };
    let n_pixels = a.n_pixels();
    let space = a.space();
    Ok(per_image_sq_sums(a, b, to_byte)
        .into_iter()
        .map(|s| ChannelDelta {
            per_channel_l2: [s[0].sqrt(), s[1].sqrt(), s[2].sqrt()],
            space,
            n_pixels,
        })
        .collect())
}

fn per_image_sq_sums(a: &ImageBatch, b: &ImageBatch, to_byte: f64) -> Vec<[f64; 3]> {
    let n = a.n_images();
    let per_image = a.n_pixels() * 3;
    let av = a.data().as_slice().expect("standard layout");
    let bv = b.data().as_slice().expect("standard layout");
    crate::parallel::map_indexed(n, |i| {
        let ai = &av[i * per_image..(i + 1) * per_image];
        let bi = &bv[i * per_image..(i + 1) * per_image];
        let mut s = [0.0f64; 3];
        for (pa, pb) in ai.chunks_exact(3).zip(bi.chunks_exact(3)) {
            for c in 0..3 {
                let d = (pa[c] - pb[c]) * to_byte;
                s[c] += d * d;
            }
        }
        s
    })
}

/// Replace the luma of `carrier` with the luma of `y_source`, keeping the
/// carrier's chroma untouched.
///
/// A pure luma change maps to equal per-pixel shifts of R, G and B (the Eq. 5
/// rows all carry Y with coefficient 1), so the output is computed as
/// `carrier + (Y(y_source) - Y(carrier)) * 1` per pixel. This is the same map
/// as recombining (Y_src, Cb_carrier, Cr_carrier) through the inverse matrix,
/// minus the inverse's coefficient rounding, and it keeps Cb/Cr of the output
/// bit-for-bit within 1e-6 byte of the carrier's. Range clamping happens on
/// the shared delta, not per channel, so the output stays inside the valid
/// range of the carrier's scale without breaking chroma pass-through or the
/// equal-delta property.
pub fn replace_y(carrier: &ImageBatch, y_source: &ImageBatch) -> Result<ImageBatch> {
    carrier.expect_like(y_source)?;
    if carrier.space() != ColorSpace::Rgb {
        return Err(LumaError::WrongSpace {
            expected: "RGB".into(),
            got: carrier.space().to_string(),
        });
    }
    let hi = match carrier.scale() {
        ValueScale::Unit => 1.0,
        ValueScale::Byte => 255.0,
    };
    let mut out = carrier.data().clone();
    let src = y_source.data();
    let src_slice = src.as_slice().expect("standard layout");
    let (slice, chunk) = rows_of(&mut out);
    for_each_chunk_mut(slice, chunk, |row_idx, row| {
        let src_row = &src_slice[row_idx * chunk..row_idx * chunk + row.len()];
        for (px, sp) in row.chunks_exact_mut(3).zip(src_row.chunks_exact(3)) {
            let y_carrier =
                Y_FROM_RGB[0] * px[0] + Y_FROM_RGB[1] * px[1] + Y_FROM_RGB[2] * px[2];
            let y_src = Y_FROM_RGB[0] * sp[0] + Y_FROM_RGB[1] * sp[1] + Y_FROM_RGB[2] * sp[2];
            // largest shared delta that keeps all three channels in range
            let d_lo = -px[0].min(px[1]).min(px[2]);
            let d_hi = hi - px[0].max(px[1]).max(px[2]);
            let d = (y_src - y_carrier).clamp(d_lo, d_hi);
            px[0] += d;
            px[1] += d;
            px[2] += d;
        }
    });
    ImageBatch::new(out, ColorSpace::Rgb, carrier.scale())
}

/// Split a batch buffer into per-image rows for the parallel helpers.
fn rows_of(arr: &mut Array4<f64>) -> (&mut [f64], usize) {
    let per_image = arr.shape()[1] * arr.shape()[2] * 3;
    let slice = arr.as_slice_mut().expect("standard layout");
    (slice, per_image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    fn batch_rgb_byte(pixels: &[[f64; 3]]) -> ImageBatch {
        let n = pixels.len();
        let mut data = Array4::zeros((1, 1, n, 3));
        for (i, px) in pixels.iter().enumerate() {
            for c in 0..3 {
                data[[0, 0, i, c]] = px[c];
            }
        }
        ImageBatch::new(data, ColorSpace::Rgb, ValueScale::Byte).unwrap()
    }

    #[test]
    fn white_black_red_hand_values() {
        let b = batch_rgb_byte(&[[255.0, 255.0, 255.0], [0.0, 0.0, 0.0], [255.0, 0.0, 0.0]]);
        let y = rgb_to_ycbcr(&b).unwrap();
        let d = y.data();
        // white: luma row sums to 1, chroma rows to 0
        assert!((d[[0, 0, 0, 0]] - 255.0).abs() < 1e-9);
        assert!((d[[0, 0, 0, 1]] - 128.0).abs() < 1e-9);
        assert!((d[[0, 0, 0, 2]] - 128.0).abs() < 1e-9);
        // black: offsets remain
        assert!((d[[0, 0, 1, 0]] - 0.0).abs() < 1e-9);
        assert!((d[[0, 0, 1, 1]] - 128.0).abs() < 1e-9);
        assert!((d[[0, 0, 1, 2]] - 128.0).abs() < 1e-9);
        // pure red: direct evaluation, note unclamped Cr = 255.5
        assert!((d[[0, 0, 2, 0]] - 0.299 * 255.0).abs() < 1e-9);
        assert!((d[[0, 0, 2, 1]] - (128.0 - 0.168736 * 255.0)).abs() < 1e-9);
        assert!((d[[0, 0, 2, 2]] - 255.5).abs() < 1e-9);
    }

    #[test]
    fn neutral_chroma_inverts_to_gray_levels() {
        let mut data = Array4::zeros((1, 1, 2, 3));
        data[[0, 0, 0, 0]] = 255.0;
        data[[0, 0, 0, 1]] = 128.0;
        data[[0, 0, 0, 2]] = 128.0;
        data[[0, 0, 1, 1]] = 128.0;
        data[[0, 0, 1, 2]] = 128.0;
        let y = ImageBatch::new(data, ColorSpace::Ycbcr, ValueScale::Byte).unwrap();
        let rgb = ycbcr_to_rgb(&y, false).unwrap();
        for c in 0..3 {
            assert!((rgb.data()[[0, 0, 0, c]] - 255.0).abs() < 1e-9);
            assert!((rgb.data()[[0, 0, 1, c]] - 0.0).abs() < 1e-9);
        }
    }

    #[test]
    fn round_trip_under_1e3_byte() {
        let mut rng = crate::rng::stream(11, "colorspace-roundtrip");
        let n = 10_000;
        let mut data = Array4::zeros((1, 1, n, 3));
        for i in 0..n {
            for c in 0..3 {
                data[[0, 0, i, c]] = rng.random::<f64>() * 255.0;
            }
        }
        let rgb = ImageBatch::new(data, ColorSpace::Rgb, ValueScale::Byte).unwrap();
        let back = ycbcr_to_rgb(&rgb_to_ycbcr(&rgb).unwrap(), false).unwrap();
        let max_err = rgb
            .data()
            .iter()
            .zip(back.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
            ;
        assert!(max_err < 1e-3, "round-trip error {max_err}");
    }

    #[test]
    fn wrong_space_is_rejected() {
        let b = batch_rgb_byte(&[[0.0, 0.0, 0.0]]);
        let y = rgb_to_ycbcr(&b).unwrap();
        assert!(rgb_to_ycbcr(&y).is_err());
        assert!(ycbcr_to_rgb(&b, false).is_err());
    }

    #[test]
    fn unit_scale_maps_through_byte() {
        let data = Array4::from_elem((1, 1, 1, 3), 1.0);
        let b = ImageBatch::rgb_unit(data).unwrap();
        let y = rgb_to_ycbcr(&b).unwrap();
        assert!((y.data()[[0, 0, 0, 0]] - 255.0).abs() < 1e-9);
        assert_eq!(y.scale(), ValueScale::Byte);
    }

    #[test]
    fn grayscale_shift_leaves_chroma_fixed() {
        let mut rng = crate::rng::stream(12, "colorspace-gray");
        let mut data = Array4::zeros((1, 4, 4, 3));
        for v in data.iter_mut() {
            *v = rng.random::<f64>() * 200.0;
        }
        let base = ImageBatch::new(data.clone(), ColorSpace::Rgb, ValueScale::Byte).unwrap();
        let shifted =
            ImageBatch::new(data.mapv(|v| v + 17.25), ColorSpace::Rgb, ValueScale::Byte).unwrap();
        let ya = rgb_to_ycbcr(&base).unwrap();
        let yb = rgb_to_ycbcr(&shifted).unwrap();
        for h in 0..4 {
            for w in 0..4 {
                assert!((ya.data()[[0, h, w, 1]] - yb.data()[[0, h, w, 1]]).abs() < 1e-9);
                assert!((ya.data()[[0, h, w, 2]] - yb.data()[[0, h, w, 2]]).abs() < 1e-9);
                assert!((yb.data()[[0, h, w, 0]] - ya.data()[[0, h, w, 0]] - 17.25).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn per_channel_l2_identity_and_single_pixel() {
        let b = batch_rgb_byte(&[[10.0, 20.0, 30.0], [1.0, 2.0, 3.0]]);
        let d = per_channel_l2(&b, &b).unwrap();
        assert_eq!(d.per_channel_l2, [0.0, 0.0, 0.0]);

        let mut other = b.clone();
        other.data_mut()[[0, 0, 0, 0]] += 3.0;
        other.data_mut()[[0, 0, 0, 1]] += 4.0;
        let d = per_channel_l2(&b, &other).unwrap();
        assert!((d.per_channel_l2[0] - 3.0).abs() < 1e-12);
        assert!((d.per_channel_l2[1] - 4.0).abs() < 1e-12);
        assert_eq!(d.per_channel_l2[2], 0.0);
    }

    #[test]
    fn per_channel_l2_reports_on_byte_scale() {
        let a = ImageBatch::rgb_unit(Array4::zeros((1, 2, 2, 3))).unwrap();
        let b = ImageBatch::rgb_unit(Array4::from_elem((1, 2, 2, 3), 0.1)).unwrap();
        let d = per_channel_l2(&a, &b).unwrap();
        // 0.1 unit = 25.5 byte per pixel, 4 pixels
        let expected = 25.5 * 2.0;
        for c in 0..3 {
            assert!((d.per_channel_l2[c] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn grayscale_shift_l2_in_ycbcr() {
        // x + delta measured in YCbCr: (delta*sqrt(HW), 0, 0)
        let mut rng = crate::rng::stream(13, "colorspace-l2");
        let mut data = Array4::zeros((1, 8, 8, 3));
        for v in data.iter_mut() {
            *v = rng.random::<f64>() * 0.5;
        }
        let delta = 0.03;
        let a = ImageBatch::rgb_unit(data.clone()).unwrap();
        let b = ImageBatch::rgb_unit(data.mapv(|v| v + delta)).unwrap();
        let (ya, yb) = (rgb_to_ycbcr(&a).unwrap(), rgb_to_ycbcr(&b).unwrap());
        let d = per_channel_l2(&ya, &yb).unwrap();
        let expected = delta * 255.0 * 8.0; // sqrt(64 pixels)
        assert!((d.per_channel_l2[0] - expected).abs() < 1e-6);
        assert!(d.per_channel_l2[1].abs() < 1e-9);
        assert!(d.per_channel_l2[2].abs() < 1e-9);
    }

    #[test]
    fn replace_y_identity_and_grayscale_shift() {
        let mut rng = crate::rng::stream(14, "colorspace-replacey");
        let mut data = Array4::zeros((2, 4, 4, 3));
        for v in data.iter_mut() {
            *v = 0.1 + rng.random::<f64>() * 0.7;
        }
        let x = ImageBatch::rgb_unit(data.clone()).unwrap();
        let same = replace_y(&x, &x).unwrap();
        let max_err = x
            .data()
            .iter()
            .zip(same.data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-3 / 255.0);

        // grayscale-shifted source only changes Y, which is then overwritten
        let shifted = ImageBatch::rgb_unit(data.mapv(|v| (v + 0.05).min(1.0))).unwrap();
        let out = replace_y(&shifted, &x).unwrap();
        // out should have the chroma of `shifted` and the luma of `x`; with a
        // pure grayscale shift, out == x + (chroma of shifted == chroma of x)
        let yx = rgb_to_ycbcr(&x).unwrap();
        let yo = rgb_to_ycbcr(&out).unwrap();
        for ((i, h, w), _) in yx.data().indexed_iter().map(|(ix, v)| ((ix.0, ix.1, ix.2), v)) {
            assert!((yx.data()[[i, h, w, 0]] - yo.data()[[i, h, w, 0]]).abs() < 1e-9);
        }
    }

    #[test]
    fn replace_y_chroma_passthrough_and_equal_deltas() {
        // Wide value ranges on purpose: even where the gamut clamp binds, the
        // equal-delta and chroma pass-through invariants must survive.
        let mut rng = crate::rng::stream(15, "colorspace-replacey2");
        let mut a = Array4::zeros((1, 6, 6, 3));
        let mut b = Array4::zeros((1, 6, 6, 3));
        for v in a.iter_mut() {
            *v = rng.random::<f64>();
        }
        for v in b.iter_mut() {
            *v = rng.random::<f64>();
        }
        let carrier = ImageBatch::rgb_unit(a).unwrap();
        let source = ImageBatch::rgb_unit(b).unwrap();
        let out = replace_y(&carrier, &source).unwrap();

        for h in 0..6 {
            for w in 0..6 {
                let dr = out.data()[[0, h, w, 0]] - carrier.data()[[0, h, w, 0]];
                let dg = out.data()[[0, h, w, 1]] - carrier.data()[[0, h, w, 1]];
                let db = out.data()[[0, h, w, 2]] - carrier.data()[[0, h, w, 2]];
                assert!((dr - dg).abs() < 1e-12 && (dg - db).abs() < 1e-12);
                for c in 0..3 {
                    let v = out.data()[[0, h, w, c]];
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        let yc = rgb_to_ycbcr(&carrier).unwrap();
        let yo = rgb_to_ycbcr(&out).unwrap();
        for h in 0..6 {
            for w in 0..6 {
                assert!((yc.data()[[0, h, w, 1]] - yo.data()[[0, h, w, 1]]).abs() < 1e-6);
                assert!((yc.data()[[0, h, w, 2]] - yo.data()[[0, h, w, 2]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn replace_y_transfers_source_luma_when_in_gamut() {
        let mut rng = crate::rng::stream(16, "colorspace-replacey3");
        let mut a = Array4::zeros((1, 6, 6, 3));
        let mut b = Array4::zeros((1, 6, 6, 3));
        // carrier channels in [0.35, 0.65] and source luma within +-0.3 of the
        // carrier's, so the shared-delta clamp never binds
        for v in a.iter_mut() {
            *v = 0.35 + rng.random::<f64>() * 0.3;
        }
        for v in b.iter_mut() {
            *v = 0.35 + rng.random::<f64>() * 0.3;
        }
        let carrier = ImageBatch::rgb_unit(a).unwrap();
        let source = ImageBatch::rgb_unit(b).unwrap();
        let out = replace_y(&carrier, &source).unwrap();
        let ys = rgb_to_ycbcr(&source).unwrap();
        let yo = rgb_to_ycbcr(&out).unwrap();
        for h in 0..6 {
            for w in 0..6 {
                assert!((ys.data()[[0, h, w, 0]] - yo.data()[[0, h, w, 0]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn y_shift_through_inverse_gives_equal_rgb_deltas() {
        // ycbcr_to_rgb(Y+dy, Cb, Cr) - ycbcr_to_rgb(Y, Cb, Cr) == (dy, dy, dy)
        let (r0, g0, b0) = pixel_ycbcr_to_rgb(100.0, 90.0, 150.0);
        let (r1, g1, b1) = pixel_ycbcr_to_rgb(100.0 + 7.5, 90.0, 150.0);
        assert!((r1 - r0 - 7.5).abs() < 1e-9);
        assert!((g1 - g0 - 7.5).abs() < 1e-9);
        assert!((b1 - b0 - 7.5).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = ImageBatch::rgb_unit(Array4::zeros((1, 2, 2, 3))).unwrap();
        let b = ImageBatch::rgb_unit(Array4::zeros((1, 3, 3, 3))).unwrap();
        assert!(per_channel_l2(&a, &b).is_err());
        assert!(replace_y(&a, &b).is_err());
    }
}
