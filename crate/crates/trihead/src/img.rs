//! In-memory image tensors and resampling.
//!
//! Images are `(channels, height, width)` arrays of `f32`. Pixel `(x, y)`
//! is treated as a point sample located at continuous coordinate
//! `(x + 0.5, y + 0.5)`; resampling follows the usual half-pixel-center
//! convention with edge clamping.

use crate::geometry::CropRecord;
use crate::{Error, Result};
use ndarray::Array3;

pub type Image = Array3<f32>;

/// Bilinear sample at continuous sample coordinates (`x`, `y` index the
/// sample lattice, so pixel `(i, j)` sits at `x = j`, `y = i`). Coordinates
/// outside the lattice clamp to the border.
#[inline]
pub fn sample_bilinear_clamp(img: &Image, c: usize, x: f64, y: f64) -> f32 {
    let (_, h, w) = img.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let v00 = img[[c, y0, x0]];
    let v01 = img[[c, y0, x1]];
    let v10 = img[[c, y1, x0]];
    let v11 = img[[c, y1, x1]];
    let top = v00 + (v01 - v00) * fx;
    let bot = v10 + (v11 - v10) * fx;
    top + (bot - top) * fy
}

/// Bilinear resize with the half-pixel-center mapping.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Image {
    let (ch, h, w) = img.dim();
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let mut out = Image::zeros((ch, out_h, out_w));
    for c in 0..ch {
        for oy in 0..out_h {
            let src_y = (oy as f64 + 0.5) * sy - 0.5;
            for ox in 0..out_w {
                let src_x = (ox as f64 + 0.5) * sx - 0.5;
                out[[c, oy, ox]] = sample_bilinear_clamp(img, c, src_x, src_y);
            }
        }
    }
    out
}

/// Extracts the view described by a [`CropRecord`] from the original image:
/// crop, resize to `out_size` x `out_size`, and horizontal flip in a single
/// resampling pass.
pub fn crop_resize(orig: &Image, crop: &CropRecord) -> Image {
    let (ch, h, w) = orig.dim();
    let s = crop.out_size;
    let mut out = Image::zeros((ch, s, s));
    for oy in 0..s {
        for ox in 0..s {
            // view-pixel center -> normalized original coordinates
            let (u, v) = crop.view_to_original(ox as f64 + 0.5, oy as f64 + 0.5);
            let src_x = u * w as f64 - 0.5;
            let src_y = v * h as f64 - 0.5;
            for c in 0..ch {
                out[[c, oy, ox]] = sample_bilinear_clamp(orig, c, src_x, src_y);
            }
        }
    }
    out
}

/// Checks that an image is square with the expected side.
pub fn expect_square(img: &Image, side: usize) -> Result<()> {
    let (_, h, w) = img.dim();
    if h != side || w != side {
        return Err(Error::Contract(format!(
            "expected a {side}x{side} image, got {h}x{w}"
        )));
    }
    Ok(())
}
