//! Region pooling by exact integration of the bilinear feature surface.
//!
//! The feature map is treated as point samples on the integer lattice:
//! sample `(i, j)` of a `C x H x W` map sits at continuous coordinate
//! `(x = j, y = i)`. Between samples the surface is the usual bilinear
//! interpolation; one virtual zero-valued sample is added beyond every
//! border, so the surface is defined (and continuous) on
//! `[-1, W] x [-1, H]` and identically zero outside.
//!
//! Each output bin is the average of the surface over its sub-rectangle,
//! computed in closed form per unit lattice cell: on a cell the surface is
//! a bilinear polynomial, and its integral over an axis-aligned
//! sub-rectangle has exact polynomial coefficients. Exactness is what
//! allows the tight tolerances in the tests (linearity, partition
//! additivity, agreement with discrete averages on aligned regions).
//!
//! Both the pooled values and their derivatives with respect to the sample
//! values and the four region coordinates are available; internal
//! arithmetic is `f64` regardless of the map's element type.

use crate::{Error, Result, Scalar};
use ndarray::Array3;

/// Continuous region in feature-lattice coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousRegion {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl ContinuousRegion {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
            return Err(Error::Contract("region coordinates must be finite".into()));
        }
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::Contract(format!(
                "region must have positive extent, got ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        Ok(ContinuousRegion { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

// Integrals of the two linear hat factors over a sub-interval of the unit
// cell: I0 weighs the left/top sample, I1 the right/bottom one.
#[inline]
fn seg_integrals(u0: f64, u1: f64) -> (f64, f64) {
    let i1 = (u1 * u1 - u0 * u0) / 2.0;
    let i0 = (u1 - u0) - i1;
    (i0, i1)
}

#[inline]
fn sample_f64<T: Scalar>(fmap: &Array3<T>, c: usize, y: i64, x: i64, h: i64, w: i64) -> f64 {
    if y < 0 || y >= h || x < 0 || x >= w {
        0.0
    } else {
        fmap[[c, y as usize, x as usize]].to_f64()
    }
}

fn check_inputs<T: Scalar>(
    fmap: &Array3<T>,
    region: &ContinuousRegion,
    out_h: usize,
    out_w: usize,
) -> Result<()> {
    let (_, h, w) = fmap.dim();
    if h == 0 || w == 0 {
        return Err(Error::Contract("feature map must be non-empty".into()));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Contract("output grid must be non-empty".into()));
    }
    if fmap.iter().any(|v| !v.to_f64().is_finite()) {
        return Err(Error::Input("feature map contains non-finite values".into()));
    }
    // The surface support extends one sample beyond the lattice.
    let support_x1 = w as f64;
    let support_y1 = h as f64;
    if region.x1 <= -1.0 || region.x0 >= support_x1 || region.y1 <= -1.0 || region.y0 >= support_y1
    {
        return Err(Error::Contract(format!(
            "region {region:?} does not intersect the feature extent [-1, {support_x1}] x [-1, {support_y1}]"
        )));
    }
    Ok(())
}

/// Integral of the surface over `[ax, bx] x [ay, by]` for one channel,
/// visiting every lattice cell the rectangle touches.
fn cell_integral<T: Scalar>(
    fmap: &Array3<T>,
    c: usize,
    ax: f64,
    bx: f64,
    ay: f64,
    by: f64,
) -> f64 {
    let (_, h, w) = fmap.dim();
    let (h, w) = (h as i64, w as i64);
    // Cells [cx, cx+1] with cx in [-1, w-1] carry the surface support.
    let cx0 = (ax.floor() as i64).max(-1);
    let cx1 = ((bx.ceil() as i64) - 1).min(w - 1);
    let cy0 = (ay.floor() as i64).max(-1);
    let cy1 = ((by.ceil() as i64) - 1).min(h - 1);
    let mut acc = 0.0;
    for cy in cy0..=cy1 {
        let ty0 = ay.max(cy as f64) - cy as f64;
        let ty1 = by.min((cy + 1) as f64) - cy as f64;
        if ty1 <= ty0 {
            continue;
        }
        let (iy0, iy1) = seg_integrals(ty0, ty1);
        for cx in cx0..=cx1 {
            let tx0 = ax.max(cx as f64) - cx as f64;
            let tx1 = bx.min((cx + 1) as f64) - cx as f64;
            if tx1 <= tx0 {
                continue;
            }
            let (ix0, ix1) = seg_integrals(tx0, tx1);
            let f00 = sample_f64(fmap, c, cy, cx, h, w);
            let f01 = sample_f64(fmap, c, cy, cx + 1, h, w);
            let f10 = sample_f64(fmap, c, cy + 1, cx, h, w);
            let f11 = sample_f64(fmap, c, cy + 1, cx + 1, h, w);
            acc += f00 * ix0 * iy0 + f01 * ix1 * iy0 + f10 * ix0 * iy1 + f11 * ix1 * iy1;
        }
    }
    acc
}

/// Scatters `go / bin_area` times the integration weights back onto the
/// lattice samples for one channel and one bin.
fn cell_integral_backward<T: Scalar>(
    grad: &mut Array3<T>,
    c: usize,
    ax: f64,
    bx: f64,
    ay: f64,
    by: f64,
    scale: f64,
) {
    let (_, h, w) = grad.dim();
    let (h, w) = (h as i64, w as i64);
    let cx0 = (ax.floor() as i64).max(-1);
    let cx1 = ((bx.ceil() as i64) - 1).min(w - 1);
    let cy0 = (ay.floor() as i64).max(-1);
    let cy1 = ((by.ceil() as i64) - 1).min(h - 1);
    let mut add = |y: i64, x: i64, v: f64| {
        if y >= 0 && y < h && x >= 0 && x < w {
            let slot = &mut grad[[c, y as usize, x as usize]];
            *slot = *slot + T::from_f64(v);
        }
    };
    for cy in cy0..=cy1 {
        let ty0 = ay.max(cy as f64) - cy as f64;
        let ty1 = by.min((cy + 1) as f64) - cy as f64;
        if ty1 <= ty0 {
            continue;
        }
        let (iy0, iy1) = seg_integrals(ty0, ty1);
        for cx in cx0..=cx1 {
            let tx0 = ax.max(cx as f64) - cx as f64;
            let tx1 = bx.min((cx + 1) as f64) - cx as f64;
            if tx1 <= tx0 {
                continue;
            }
            let (ix0, ix1) = seg_integrals(tx0, tx1);
            add(cy, cx, scale * ix0 * iy0);
            add(cy, cx + 1, scale * ix1 * iy0);
            add(cy + 1, cx, scale * ix0 * iy1);
            add(cy + 1, cx + 1, scale * ix1 * iy1);
        }
    }
}

/// Surface value at a single continuous point (used by the boundary line
/// integrals of the region gradient).
fn surface_x_interp<T: Scalar>(fmap: &Array3<T>, c: usize, x: f64, y_sample: i64) -> f64 {
    let (_, h, w) = fmap.dim();
    let (h, w) = (h as i64, w as i64);
    if x <= -1.0 || x >= w as f64 {
        return 0.0;
    }
    let cx = x.floor() as i64;
    let s = x - cx as f64;
    let left = sample_f64(fmap, c, y_sample, cx, h, w);
    let right = sample_f64(fmap, c, y_sample, cx + 1, h, w);
    left * (1.0 - s) + right * s
}

/// Line integral `\int_{ay}^{by} F(x*, t) dt` for one channel.
fn line_integral_x<T: Scalar>(fmap: &Array3<T>, c: usize, x_star: f64, ay: f64, by: f64) -> f64 {
    let (_, h, _) = fmap.dim();
    let h = h as i64;
    let cy0 = (ay.floor() as i64).max(-1);
    let cy1 = ((by.ceil() as i64) - 1).min(h - 1);
    let mut acc = 0.0;
    for cy in cy0..=cy1 {
        let t0 = ay.max(cy as f64) - cy as f64;
        let t1 = by.min((cy + 1) as f64) - cy as f64;
        if t1 <= t0 {
            continue;
        }
        let (i0, i1) = seg_integrals(t0, t1);
        let top = surface_x_interp(fmap, c, x_star, cy);
        let bot = surface_x_interp(fmap, c, x_star, cy + 1);
        acc += top * i0 + bot * i1;
    }
    acc
}

fn surface_y_interp<T: Scalar>(fmap: &Array3<T>, c: usize, x_sample: i64, y: f64) -> f64 {
    let (_, h, w) = fmap.dim();
    let (h, w) = (h as i64, w as i64);
    if y <= -1.0 || y >= h as f64 {
        return 0.0;
    }
    let cy = y.floor() as i64;
    let s = y - cy as f64;
    let top = sample_f64(fmap, c, cy, x_sample, h, w);
    let bot = sample_f64(fmap, c, cy + 1, x_sample, h, w);
    top * (1.0 - s) + bot * s
}

/// Line integral `\int_{ax}^{bx} F(x, y*) dx` for one channel.
fn line_integral_y<T: Scalar>(fmap: &Array3<T>, c: usize, y_star: f64, ax: f64, bx: f64) -> f64 {
    let (_, _, w) = fmap.dim();
    let w = w as i64;
    let cx0 = (ax.floor() as i64).max(-1);
    let cx1 = ((bx.ceil() as i64) - 1).min(w - 1);
    let mut acc = 0.0;
    for cx in cx0..=cx1 {
        let t0 = ax.max(cx as f64) - cx as f64;
        let t1 = bx.min((cx + 1) as f64) - cx as f64;
        if t1 <= t0 {
            continue;
        }
        let (i0, i1) = seg_integrals(t0, t1);
        let left = surface_y_interp(fmap, c, cx, y_star);
        let right = surface_y_interp(fmap, c, cx + 1, y_star);
        acc += left * i0 + right * i1;
    }
    acc
}

#[inline]
fn bin_bounds(region: &ContinuousRegion, out_h: usize, out_w: usize, r: usize, col: usize) -> (f64, f64, f64, f64) {
    let bw = region.width() / out_w as f64;
    let bh = region.height() / out_h as f64;
    let ax = region.x0 + col as f64 * bw;
    let bx = region.x0 + (col + 1) as f64 * bw;
    let ay = region.y0 + r as f64 * bh;
    let by = region.y0 + (r + 1) as f64 * bh;
    (ax, bx, ay, by)
}

/// Pools a continuous region into an `out_h x out_w` grid: the region is
/// split into equal bins and each bin takes the exact mean of the bilinear
/// surface over its rectangle.
pub fn prroi_pool<T: Scalar>(
    fmap: &Array3<T>,
    region: &ContinuousRegion,
    out_h: usize,
    out_w: usize,
) -> Result<Array3<T>> {
    check_inputs(fmap, region, out_h, out_w)?;
    let (ch, _, _) = fmap.dim();
    let bin_area = (region.width() / out_w as f64) * (region.height() / out_h as f64);
    let mut out = Array3::<T>::zeros((ch, out_h, out_w));
    for c in 0..ch {
        for r in 0..out_h {
            for col in 0..out_w {
                let (ax, bx, ay, by) = bin_bounds(region, out_h, out_w, r, col);
                out[[c, r, col]] = T::from_f64(cell_integral(fmap, c, ax, bx, ay, by) / bin_area);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`prroi_pool`] with respect to the feature-map samples and
/// the four region coordinates `(x0, y0, x1, y1)`.
pub fn prroi_pool_backward<T: Scalar>(
    fmap: &Array3<T>,
    region: &ContinuousRegion,
    grad_out: &Array3<T>,
) -> Result<(Array3<T>, [f64; 4])> {
    let (ch, _, _) = fmap.dim();
    let (gch, out_h, out_w) = grad_out.dim();
    if gch != ch {
        return Err(Error::Contract(format!(
            "grad_out has {gch} channels, feature map has {ch}"
        )));
    }
    check_inputs(fmap, region, out_h, out_w)?;
    let bw = region.width() / out_w as f64;
    let bh = region.height() / out_h as f64;
    let bin_area = bw * bh;
    let mut grad_fmap = Array3::<T>::zeros(fmap.raw_dim());
    let mut grad_region = [0.0f64; 4];
    for c in 0..ch {
        for r in 0..out_h {
            for col in 0..out_w {
                let go = grad_out[[c, r, col]].to_f64();
                if go == 0.0 {
                    continue;
                }
                let (ax, bx, ay, by) = bin_bounds(region, out_h, out_w, r, col);
                cell_integral_backward(&mut grad_fmap, c, ax, bx, ay, by, go / bin_area);

                let g = cell_integral(fmap, c, ax, bx, ay, by);
                let out_val = g / bin_area;
                let lx_a = line_integral_x(fmap, c, ax, ay, by);
                let lx_b = line_integral_x(fmap, c, bx, ay, by);
                let ly_a = line_integral_y(fmap, c, ay, ax, bx);
                let ly_b = line_integral_y(fmap, c, by, ax, bx);
                // d(out)/d(bin bound), from out = G(ax,bx,ay,by) / bin_area
                let d_ax = (out_val * bh - lx_a) / bin_area;
                let d_bx = (lx_b - out_val * bh) / bin_area;
                let d_ay = (out_val * bw - ly_a) / bin_area;
                let d_by = (ly_b - out_val * bw) / bin_area;
                // bin bounds are affine in the region coordinates
                let cw = col as f64 / out_w as f64;
                let cw1 = (col + 1) as f64 / out_w as f64;
                let rh = r as f64 / out_h as f64;
                let rh1 = (r + 1) as f64 / out_h as f64;
                grad_region[0] += go * (d_ax * (1.0 - cw) + d_bx * (1.0 - cw1));
                grad_region[1] += go * (d_ay * (1.0 - rh) + d_by * (1.0 - rh1));
                grad_region[2] += go * (d_ax * cw + d_bx * cw1);
                grad_region[3] += go * (d_ay * rh + d_by * rh1);
            }
        }
    }
    Ok((grad_fmap, grad_region))
}
