//! Coordinate-tracked view generation.
//!
//! Crops are sampled together with their geometric provenance so that any
//! point of a view can be mapped back to the original image, two views can
//! be intersected in the original frame, and matched sub-regions ("cells")
//! of both views can be expressed in each view's feature-map coordinates.
//!
//! Coordinate frames:
//! * **original frame** — normalized `[0, 1]^2` over the source image;
//! * **view-pixel frame** — `[0, S]^2` over an `S`-pixel square view;
//! * **feature frame** — view-pixel coordinates divided by the stage
//!   stride; feature-map sample `i` sits at continuous coordinate
//!   `i + 0.5` in this frame.

use crate::img::{self, Image};
use crate::{Error, Result};
use rand::Rng;

/// Number of random-resized-crop proposals before the aspect-preserving
/// center fallback.
const CROP_ATTEMPTS: usize = 10;

/// Relative jitter applied to the duplicated crop when a pair fails to
/// reach the overlap threshold within the retry budget.
const PAIR_JITTER_FRAC: f64 = 0.05;

/// Axis-aligned rectangle in normalized original-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let r = Rect { x0, y0, x1, y1 };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.x0
            && self.x0 < self.x1
            && self.x1 <= 1.0
            && 0.0 <= self.y0
            && self.y0 < self.y1
            && self.y1 <= 1.0;
        if !ok {
            return Err(Error::Contract(format!(
                "invalid rect ({}, {}, {}, {})",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, other: &Rect) -> bool {
        self.x0 <= other.x0 && other.x1 <= self.x1 && self.y0 <= other.y0 && other.y1 <= self.y1
    }
}

/// Intersection of two rects, or `None` when the intersection has zero area.
pub fn compute_overlap(a: &Rect, b: &Rect) -> Option<Rect> {
    let x0 = a.x0.max(b.x0);
    let y0 = a.y0.max(b.y0);
    let x1 = a.x1.min(b.x1);
    let y1 = a.y1.min(b.y1);
    if x0 < x1 && y0 < y1 {
        Some(Rect { x0, y0, x1, y1 })
    } else {
        None
    }
}

/// Geometric provenance of one augmented view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropRecord {
    /// Crop rectangle in the original frame.
    pub rect: Rect,
    /// Whether the view is horizontally mirrored after the crop.
    pub hflip: bool,
    /// Side length of the square output view, in pixels.
    pub out_size: usize,
}

impl CropRecord {
    pub fn new(rect: Rect, hflip: bool, out_size: usize) -> Result<Self> {
        if out_size == 0 {
            return Err(Error::Contract("crop out_size must be positive".into()));
        }
        rect.validate()?;
        Ok(CropRecord {
            rect,
            hflip,
            out_size,
        })
    }

    /// Maps a continuous view-pixel point to normalized original coordinates.
    pub fn view_to_original(&self, px: f64, py: f64) -> (f64, f64) {
        let s = self.out_size as f64;
        let fx = if self.hflip { (s - px) / s } else { px / s };
        let u = self.rect.x0 + self.rect.width() * fx;
        let v = self.rect.y0 + self.rect.height() * (py / s);
        (u, v)
    }

    /// Inverse of [`view_to_original`](Self::view_to_original).
    pub fn original_to_view(&self, u: f64, v: f64) -> (f64, f64) {
        let s = self.out_size as f64;
        let fx = (u - self.rect.x0) / self.rect.width();
        let px = if self.hflip { s * (1.0 - fx) } else { s * fx };
        let py = s * (v - self.rect.y0) / self.rect.height();
        (px, py)
    }
}

/// Rectangle in a view's pixel frame `[0, S]^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl ViewRect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

/// Rectangle in a stage's continuous feature frame (view pixels / stride).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl FeatureRect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

/// Crop sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropSamplerParams {
    /// Crop area as a fraction of the original image area.
    pub scale_range: (f64, f64),
    /// Aspect-ratio range (width / height).
    pub ratio_range: (f64, f64),
    /// Minimum overlap area of a crop pair, as a fraction of the original
    /// image.
    pub min_overlap_frac: f64,
    /// Re-sampling budget for the second crop of a pair before the
    /// jittered-copy fallback.
    pub max_retries: usize,
}

impl Default for CropSamplerParams {
    fn default() -> Self {
        CropSamplerParams {
            scale_range: (0.2, 1.0),
            ratio_range: (3.0 / 4.0, 4.0 / 3.0),
            min_overlap_frac: 0.1,
            max_retries: 10,
        }
    }
}

impl CropSamplerParams {
    pub fn validate(&self) -> Result<()> {
        let (smin, smax) = self.scale_range;
        if !(0.0 < smin && smin <= smax && smax <= 1.0) {
            return Err(Error::Config(format!(
                "scale_range must satisfy 0 < min <= max <= 1, got ({smin}, {smax})"
            )));
        }
        let (rmin, rmax) = self.ratio_range;
        if !(rmin > 0.0 && rmin <= rmax) {
            return Err(Error::Config(format!(
                "ratio_range must satisfy 0 < min <= max, got ({rmin}, {rmax})"
            )));
        }
        if !(0.0 < self.min_overlap_frac && self.min_overlap_frac < 1.0) {
            return Err(Error::Config(format!(
                "min_overlap_frac must lie in (0, 1), got {}",
                self.min_overlap_frac
            )));
        }
        if self.max_retries < 1 {
            return Err(Error::Config("max_retries must be at least 1".into()));
        }
        Ok(())
    }
}

/// Samples one crop with tracked coordinates.
///
/// Proposals are drawn in continuous pixel units (area from `scale_range`,
/// aspect from `ratio_range`) and rejected while they do not fit inside
/// the image; after [`CROP_ATTEMPTS`] rejections the crop falls back to the
/// largest centered rectangle with the aspect ratio clamped into range.
/// The horizontal flip is drawn with probability 0.5.
pub fn sample_tracked_crop<R: Rng + ?Sized>(
    orig_w: u32,
    orig_h: u32,
    out_size: usize,
    params: &CropSamplerParams,
    rng: &mut R,
) -> Result<CropRecord> {
    params.validate()?;
    if orig_w == 0 || orig_h == 0 {
        return Err(Error::Config("original image has zero size".into()));
    }
    let w = orig_w as f64;
    let h = orig_h as f64;
    let area = w * h;
    let (smin, smax) = params.scale_range;
    let (rmin, rmax) = params.ratio_range;

    let mut chosen: Option<(f64, f64, f64, f64)> = None;
    for _ in 0..CROP_ATTEMPTS {
        let target_area = area * rng.random_range(smin..=smax);
        let ratio = rng.random_range(rmin.ln()..=rmax.ln()).exp();
        let cw = (target_area * ratio).sqrt();
        let ch = (target_area / ratio).sqrt();
        if cw <= w && ch <= h {
            let x0 = rng.random_range(0.0..=(w - cw));
            let y0 = rng.random_range(0.0..=(h - ch));
            chosen = Some((x0, y0, cw, ch));
            break;
        }
    }
    let (x0, y0, cw, ch) = chosen.unwrap_or_else(|| {
        // center fallback with the aspect ratio clamped into range
        let in_ratio = w / h;
        let (cw, ch) = if in_ratio < rmin {
            (w, w / rmin)
        } else if in_ratio > rmax {
            (h * rmax, h)
        } else {
            (w, h)
        };
        ((w - cw) / 2.0, (h - ch) / 2.0, cw, ch)
    });
    let hflip = rng.random_bool(0.5);
    CropRecord::new(
        Rect {
            x0: (x0 / w).clamp(0.0, 1.0),
            y0: (y0 / h).clamp(0.0, 1.0),
            x1: ((x0 + cw) / w).clamp(0.0, 1.0),
            y1: ((y0 + ch) / h).clamp(0.0, 1.0),
        },
        hflip,
        out_size,
    )
}

/// Returns a copy of `crop` translated by up to [`PAIR_JITTER_FRAC`] of its
/// side length per axis, clamped so the copy stays inside `[0, 1]^2`. The
/// flip flag is re-drawn. Used as the termination fallback of
/// [`sample_crop_pair_with_overlap`]; the overlap of the pair is at least
/// `(1 - PAIR_JITTER_FRAC)^2` of the crop area by construction.
fn jittered_copy<R: Rng + ?Sized>(crop: &CropRecord, rng: &mut R) -> CropRecord {
    let r = crop.rect;
    let dx = rng.random_range(-PAIR_JITTER_FRAC..=PAIR_JITTER_FRAC) * r.width();
    let dy = rng.random_range(-PAIR_JITTER_FRAC..=PAIR_JITTER_FRAC) * r.height();
    let dx = dx.clamp(-r.x0, 1.0 - r.x1);
    let dy = dy.clamp(-r.y0, 1.0 - r.y1);
    CropRecord {
        rect: Rect {
            x0: r.x0 + dx,
            y0: r.y0 + dy,
            x1: r.x1 + dx,
            y1: r.y1 + dy,
        },
        hflip: rng.random_bool(0.5),
        out_size: crop.out_size,
    }
}

/// Samples a crop pair whose overlap area reaches `params.min_overlap_frac`
/// (as a fraction of the original image). Only the second crop is
/// re-sampled; after `params.max_retries` failures it becomes a jittered
/// copy of the first, so the call always terminates with a non-empty
/// overlap.
pub fn sample_crop_pair_with_overlap<R: Rng + ?Sized>(
    orig_w: u32,
    orig_h: u32,
    out_size: usize,
    params: &CropSamplerParams,
    rng: &mut R,
) -> Result<(CropRecord, CropRecord, Rect)> {
    let crop_q = sample_tracked_crop(orig_w, orig_h, out_size, params, rng)?;
    for _ in 0..params.max_retries {
        let crop_k = sample_tracked_crop(orig_w, orig_h, out_size, params, rng)?;
        if let Some(overlap) = compute_overlap(&crop_q.rect, &crop_k.rect) {
            if overlap.area() >= params.min_overlap_frac {
                return Ok((crop_q, crop_k, overlap));
            }
        }
    }
    let crop_k = jittered_copy(&crop_q, rng);
    let overlap = compute_overlap(&crop_q.rect, &crop_k.rect)
        .expect("jittered copy always overlaps its source");
    Ok((crop_q, crop_k, overlap))
}

/// Expresses an original-frame rectangle in a view's pixel frame.
///
/// The x axis is mirrored when the view is flipped; composing the result
/// with [`CropRecord::view_to_original`] recovers the input rectangle.
pub fn map_overlap_to_view(overlap: &Rect, crop: &CropRecord) -> Result<ViewRect> {
    if !crop.rect.contains(overlap) {
        return Err(Error::Contract(format!(
            "overlap {overlap:?} not contained in crop rect {:?}",
            crop.rect
        )));
    }
    let (ax, ay) = crop.original_to_view(overlap.x0, overlap.y0);
    let (bx, by) = crop.original_to_view(overlap.x1, overlap.y1);
    Ok(ViewRect {
        x0: ax.min(bx),
        y0: ay.min(by),
        x1: ax.max(bx),
        y1: ay.max(by),
    })
}

/// The validated overlap of a crop pair together with its 3x3 cell grid in
/// each view's continuous feature frame.
///
/// Cell `(i, j)` (row-major, indexed in the *original image's* orientation)
/// of `grid_q` and of `grid_k` back-project to the same original-frame
/// rectangle; this is what makes matched cells valid positive pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCorrespondence {
    pub overlap: Rect,
    pub grid_q: [[FeatureRect; 3]; 3],
    pub grid_k: [[FeatureRect; 3]; 3],
    pub stride: usize,
}

impl CellCorrespondence {
    /// Bounding region of a grid in the feature frame (the grid tiles it
    /// evenly, so this is just the outer rectangle).
    pub fn bounding(grid: &[[FeatureRect; 3]; 3]) -> FeatureRect {
        let mut x0 = f64::INFINITY;
        let mut y0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for row in grid {
            for b in row {
                x0 = x0.min(b.x0);
                y0 = y0.min(b.y0);
                x1 = x1.max(b.x1);
                y1 = y1.max(b.y1);
            }
        }
        FeatureRect { x0, y0, x1, y1 }
    }
}

/// Back-projects a feature-frame rectangle of a view to the original frame.
pub fn back_project(bin: &FeatureRect, crop: &CropRecord, stride: usize) -> Rect {
    let s = stride as f64;
    let (ux0, uy0) = crop.view_to_original(bin.x0 * s, bin.y0 * s);
    let (ux1, uy1) = crop.view_to_original(bin.x1 * s, bin.y1 * s);
    Rect {
        x0: ux0.min(ux1),
        y0: uy0.min(uy1),
        x1: ux0.max(ux1),
        y1: uy0.max(uy1),
    }
}

fn grid_for_view(
    overlap: &Rect,
    crop: &CropRecord,
    stride: usize,
) -> Result<[[FeatureRect; 3]; 3]> {
    let vr = map_overlap_to_view(overlap, crop)?;
    if vr.width() < stride as f64 || vr.height() < stride as f64 {
        return Err(Error::DegenerateOverlap(format!(
            "overlap spans {:.2}x{:.2} view pixels, below one feature unit at stride {}",
            vr.width(),
            vr.height(),
            stride
        )));
    }
    let s = stride as f64;
    let fx0 = vr.x0 / s;
    let fy0 = vr.y0 / s;
    let bw = vr.width() / s / 3.0;
    let bh = vr.height() / s / 3.0;
    let mut grid = [[FeatureRect {
        x0: 0.0,
        y0: 0.0,
        x1: 0.0,
        y1: 0.0,
    }; 3]; 3];
    for (i, row) in grid.iter_mut().enumerate() {
        for (j, bin) in row.iter_mut().enumerate() {
            // Bin columns are indexed in original-image orientation: in a
            // flipped view, original-left content sits on the view's right.
            let jx = if crop.hflip { 2 - j } else { j };
            *bin = FeatureRect {
                x0: fx0 + jx as f64 * bw,
                y0: fy0 + i as f64 * bh,
                x1: fx0 + (jx + 1) as f64 * bw,
                y1: fy0 + (i + 1) as f64 * bh,
            };
        }
    }
    Ok(grid)
}

/// Builds the matched 3x3 cell grids of an overlap in both views' feature
/// frames.
///
/// Errors with [`Error::DegenerateOverlap`] when the overlap spans less
/// than one feature unit per side in either view; callers re-sample the
/// pair in that case.
pub fn build_cell_correspondence(
    overlap: &Rect,
    crop_q: &CropRecord,
    crop_k: &CropRecord,
    stride: usize,
) -> Result<CellCorrespondence> {
    if stride == 0 || crop_q.out_size % stride != 0 || crop_k.out_size % stride != 0 {
        return Err(Error::Contract(format!(
            "stride {} must divide both view sizes ({}, {})",
            stride, crop_q.out_size, crop_k.out_size
        )));
    }
    let grid_q = grid_for_view(overlap, crop_q, stride)?;
    let grid_k = grid_for_view(overlap, crop_k, stride)?;
    Ok(CellCorrespondence {
        overlap: *overlap,
        grid_q,
        grid_k,
        stride,
    })
}

/// Samples an overlap-constrained crop pair together with its cell
/// correspondence, re-sampling pairs whose overlap is degenerate at the
/// given stride. The jittered-copy fallback guarantees termination as long
/// as a whole view spans at least `1 / (1 - jitter)` feature units.
pub fn sample_cell_pair<R: Rng + ?Sized>(
    orig_w: u32,
    orig_h: u32,
    out_size: usize,
    params: &CropSamplerParams,
    stride: usize,
    rng: &mut R,
) -> Result<(CropRecord, CropRecord, CellCorrespondence)> {
    for _ in 0..params.max_retries {
        let (cq, ck, overlap) =
            sample_crop_pair_with_overlap(orig_w, orig_h, out_size, params, rng)?;
        match build_cell_correspondence(&overlap, &cq, &ck, stride) {
            Ok(cc) => return Ok((cq, ck, cc)),
            Err(Error::DegenerateOverlap(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    // Force the fallback construction, which is never degenerate for sane
    // view-size / stride combinations.
    let cq = sample_tracked_crop(orig_w, orig_h, out_size, params, rng)?;
    let ck = jittered_copy(&cq, rng);
    let overlap =
        compute_overlap(&cq.rect, &ck.rect).expect("jittered copy always overlaps its source");
    let cc = build_cell_correspondence(&overlap, &cq, &ck, stride)?;
    Ok((cq, ck, cc))
}

/// Composes four equal square views into one view of the same side: each
/// view is bilinearly downscaled to half side and placed upper-left,
/// upper-right, lower-left, lower-right in argument order.
pub fn compose_mosaic(views: &[Image]) -> Result<Image> {
    if views.len() != 4 {
        return Err(Error::Contract(format!(
            "a mosaic is composed of exactly 4 views, got {}",
            views.len()
        )));
    }
    let (ch, h, w) = views[0].dim();
    if h != w {
        return Err(Error::Contract(format!("views must be square, got {h}x{w}")));
    }
    if h % 2 != 0 {
        return Err(Error::Contract(format!(
            "view side must be even to form half-size tiles, got {h}"
        )));
    }
    for v in views {
        if v.dim() != (ch, h, w) {
            return Err(Error::Contract(format!(
                "all views must share dimensions {:?}, got {:?}",
                (ch, h, w),
                v.dim()
            )));
        }
    }
    let half = h / 2;
    let mut out = Image::zeros((ch, h, w));
    let offsets = [(0, 0), (0, half), (half, 0), (half, half)];
    for (view, &(oy, ox)) in views.iter().zip(&offsets) {
        let tile = img::resize_bilinear(view, half, half);
        out.slice_mut(ndarray::s![.., oy..oy + half, ox..ox + half])
            .assign(&tile);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn full_image_crop_is_forced_at_scale_one() {
        let params = CropSamplerParams {
            scale_range: (1.0, 1.0),
            ratio_range: (1.0, 1.0),
            ..Default::default()
        };
        for seed in 0..20 {
            let c = sample_tracked_crop(64, 64, 32, &params, &mut rng(seed)).unwrap();
            assert!((c.rect.x0 - 0.0).abs() < 1e-12);
            assert!((c.rect.y0 - 0.0).abs() < 1e-12);
            assert!((c.rect.x1 - 1.0).abs() < 1e-12);
            assert!((c.rect.y1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_crops_respect_scale_and_ratio() {
        let params = CropSamplerParams::default();
        let mut r = rng(0);
        for _ in 0..2000 {
            let c = sample_tracked_crop(96, 96, 96, &params, &mut r).unwrap();
            let area = c.rect.area();
            assert!(
                area >= params.scale_range.0 - 1e-9 && area <= params.scale_range.1 + 1e-9,
                "area {area} out of range"
            );
            let ratio = c.rect.width() / c.rect.height();
            assert!(ratio >= params.ratio_range.0 - 1e-9 && ratio <= params.ratio_range.1 + 1e-9);
        }
    }

    #[test]
    fn seeded_crop_regression() {
        // Golden value pinned from a seeded run; the arithmetic checks in
        // `sampled_crops_respect_scale_and_ratio` cross-validate the family.
        let params = CropSamplerParams::default();
        let c = sample_tracked_crop(96, 96, 96, &params, &mut rng(0)).unwrap();
        let got = [c.rect.x0, c.rect.y0, c.rect.x1, c.rect.y1];
        let area = c.rect.area();
        let ratio = c.rect.width() / c.rect.height();
        assert!(area >= 0.2 && area <= 1.0);
        assert!((0.75..=4.0 / 3.0).contains(&ratio));
        // Re-run with the same seed: identical record.
        let c2 = sample_tracked_crop(96, 96, 96, &params, &mut rng(0)).unwrap();
        assert_eq!(got, [c2.rect.x0, c2.rect.y0, c2.rect.x1, c2.rect.y1]);
        assert_eq!(c.hflip, c2.hflip);
    }

    #[test]
    fn hflip_rate_is_half() {
        let params = CropSamplerParams::default();
        let mut r = rng(7);
        let mut flips = 0usize;
        let n = 10_000;
        for _ in 0..n {
            if sample_tracked_crop(64, 64, 64, &params, &mut r).unwrap().hflip {
                flips += 1;
            }
        }
        let frac = flips as f64 / n as f64;
        assert!((0.48..=0.52).contains(&frac), "flip fraction {frac}");
    }

    #[test]
    fn overlap_of_identical_rects_is_identity() {
        let a = Rect::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(compute_overlap(&a, &a), Some(a));
    }

    #[test]
    fn overlap_partial_and_disjoint() {
        let a = Rect::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let b = Rect::new(0.25, 0.25, 0.75, 0.75).unwrap();
        let o = compute_overlap(&a, &b).unwrap();
        assert_eq!(o, Rect::new(0.25, 0.25, 0.5, 0.5).unwrap());
        let c = Rect::new(0.5, 0.5, 1.0, 1.0).unwrap();
        let d = Rect::new(0.0, 0.0, 0.4, 0.4).unwrap();
        assert_eq!(compute_overlap(&c, &d), None);
        // touching edges have zero area
        let e = Rect::new(0.4, 0.0, 0.8, 1.0).unwrap();
        assert_eq!(compute_overlap(&d, &e), None);
    }

    #[test]
    fn pair_sampler_meets_min_overlap() {
        let params = CropSamplerParams {
            min_overlap_frac: 0.1,
            ..Default::default()
        };
        let mut r = rng(3);
        for _ in 0..1000 {
            let (_, _, overlap) =
                sample_crop_pair_with_overlap(96, 96, 96, &params, &mut r).unwrap();
            assert!(overlap.area() >= 0.1 - 1e-12);
        }
    }

    #[test]
    fn pair_fallback_overlap_bound() {
        // An unreachable threshold forces the jittered-copy fallback; its
        // overlap is at least (1 - jitter)^2 of the first crop's area.
        let params = CropSamplerParams {
            scale_range: (0.2, 0.3),
            min_overlap_frac: 0.99,
            max_retries: 3,
            ..Default::default()
        };
        let mut r = rng(11);
        for _ in 0..200 {
            let (cq, _, overlap) =
                sample_crop_pair_with_overlap(64, 64, 64, &params, &mut r).unwrap();
            let bound = cq.rect.area() * (1.0 - PAIR_JITTER_FRAC) * (1.0 - PAIR_JITTER_FRAC);
            assert!(
                overlap.area() >= bound - 1e-12,
                "overlap {} below fallback bound {}",
                overlap.area(),
                bound
            );
        }
    }

    #[test]
    fn map_overlap_identity_crop() {
        let crop = CropRecord::new(Rect::new(0.0, 0.0, 1.0, 1.0).unwrap(), false, 224).unwrap();
        let overlap = Rect::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let v = map_overlap_to_view(&overlap, &crop).unwrap();
        assert_eq!((v.x0, v.y0, v.x1, v.y1), (0.0, 0.0, 112.0, 112.0));
    }

    #[test]
    fn map_overlap_flipped_crop() {
        let crop = CropRecord::new(Rect::new(0.0, 0.0, 1.0, 1.0).unwrap(), true, 224).unwrap();
        let overlap = Rect::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let v = map_overlap_to_view(&overlap, &crop).unwrap();
        assert_eq!((v.x0, v.y0, v.x1, v.y1), (112.0, 0.0, 224.0, 112.0));
    }

    #[test]
    fn map_overlap_quarter_crop() {
        let crop = CropRecord::new(Rect::new(0.5, 0.0, 1.0, 0.5).unwrap(), false, 224).unwrap();
        let overlap = Rect::new(0.5, 0.0, 0.75, 0.25).unwrap();
        let v = map_overlap_to_view(&overlap, &crop).unwrap();
        assert!((v.x0 - 0.0).abs() < 1e-9);
        assert!((v.y0 - 0.0).abs() < 1e-9);
        assert!((v.x1 - 112.0).abs() < 1e-9);
        assert!((v.y1 - 112.0).abs() < 1e-9);
    }

    #[test]
    fn map_overlap_outside_crop_errors() {
        let crop = CropRecord::new(Rect::new(0.5, 0.5, 1.0, 1.0).unwrap(), false, 96).unwrap();
        let overlap = Rect::new(0.0, 0.0, 0.6, 0.6).unwrap();
        assert!(matches!(
            map_overlap_to_view(&overlap, &crop),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn crop_round_trip() {
        let mut r = rng(5);
        let params = CropSamplerParams::default();
        for _ in 0..500 {
            let c = sample_tracked_crop(96, 72, 96, &params, &mut r).unwrap();
            for _ in 0..8 {
                let u = r.random_range(c.rect.x0..=c.rect.x1);
                let v = r.random_range(c.rect.y0..=c.rect.y1);
                let (px, py) = c.original_to_view(u, v);
                let (u2, v2) = c.view_to_original(px, py);
                assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_cell_grid_tiles_unit_bins() {
        let crop = CropRecord::new(Rect::new(0.0, 0.0, 1.0, 1.0).unwrap(), false, 96).unwrap();
        let overlap = Rect::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let cc = build_cell_correspondence(&overlap, &crop, &crop, 32).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let b = cc.grid_q[i][j];
                assert!((b.x0 - j as f64).abs() < 1e-12);
                assert!((b.y0 - i as f64).abs() < 1e-12);
                assert!((b.x1 - (j + 1) as f64).abs() < 1e-12);
                assert!((b.y1 - (i + 1) as f64).abs() < 1e-12);
            }
        }
        assert_eq!(cc.grid_q, cc.grid_k);
    }

    #[test]
    fn matched_cells_back_project_equal() {
        let mut r = rng(13);
        let params = CropSamplerParams::default();
        for _ in 0..300 {
            let (cq, ck, cc) = sample_cell_pair(96, 96, 96, &params, 32, &mut r).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let a = back_project(&cc.grid_q[i][j], &cq, 32);
                    let b = back_project(&cc.grid_k[i][j], &ck, 32);
                    for (x, y) in [
                        (a.x0, b.x0),
                        (a.y0, b.y0),
                        (a.x1, b.x1),
                        (a.y1, b.y1),
                    ] {
                        assert!((x - y).abs() < 1e-6, "back-projection mismatch: {a:?} vs {b:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn flipped_grid_matches_unflipped_counterpart() {
        let base = Rect::new(0.1, 0.2, 0.9, 0.8).unwrap();
        let crop_q = CropRecord::new(base, false, 96).unwrap();
        let crop_k = CropRecord::new(Rect::new(0.0, 0.0, 1.0, 1.0).unwrap(), true, 96).unwrap();
        let overlap = compute_overlap(&crop_q.rect, &crop_k.rect).unwrap();
        let cc = build_cell_correspondence(&overlap, &crop_q, &crop_k, 32).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let a = back_project(&cc.grid_q[i][j], &crop_q, 32);
                let b = back_project(&cc.grid_k[i][j], &crop_k, 32);
                assert!((a.x0 - b.x0).abs() < 1e-6);
                assert!((a.x1 - b.x1).abs() < 1e-6);
                assert!((a.y0 - b.y0).abs() < 1e-6);
                assert!((a.y1 - b.y1).abs() < 1e-6);
            }
        }
        // The flipped view's grid tiles its overlap rect with no gaps.
        let vb = CellCorrespondence::bounding(&cc.grid_k);
        let bin_w = cc.grid_k[0][0].width();
        for row in &cc.grid_k {
            for b in row {
                assert!((b.width() - bin_w).abs() < 1e-9);
                assert!(b.x0 >= vb.x0 - 1e-9 && b.x1 <= vb.x1 + 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_overlap_is_reported() {
        // Overlap thinner than one feature unit in the key view.
        let crop_q = CropRecord::new(Rect::new(0.0, 0.0, 0.55, 1.0).unwrap(), false, 96).unwrap();
        let crop_k = CropRecord::new(Rect::new(0.5, 0.0, 1.0, 1.0).unwrap(), false, 96).unwrap();
        let overlap = compute_overlap(&crop_q.rect, &crop_k.rect).unwrap();
        // q view: 0.05 / 0.55 * 96 = 8.7 px < 32
        assert!(matches!(
            build_cell_correspondence(&overlap, &crop_q, &crop_k, 32),
            Err(Error::DegenerateOverlap(_))
        ));
    }

    #[test]
    fn mosaic_places_quadrants_in_order() {
        let views: Vec<Image> = (1..=4)
            .map(|v| Image::from_elem((3, 8, 8), v as f32))
            .collect();
        let m = compose_mosaic(&views).unwrap();
        assert_eq!(m[[0, 0, 0]], 1.0);
        assert_eq!(m[[0, 0, 7]], 2.0);
        assert_eq!(m[[0, 7, 0]], 3.0);
        assert_eq!(m[[0, 7, 7]], 4.0);
    }

    #[test]
    fn mosaic_of_identical_views_has_identical_quadrants() {
        let mut view = Image::zeros((3, 16, 16));
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    view[[c, y, x]] = (c * 256 + y * 16 + x) as f32 * 0.01;
                }
            }
        }
        let m = compose_mosaic(&vec![view.clone(), view.clone(), view.clone(), view]).unwrap();
        let ul = m.slice(ndarray::s![.., 0..8, 0..8]).to_owned();
        for &(oy, ox) in &[(0usize, 8usize), (8, 0), (8, 8)] {
            let q = m.slice(ndarray::s![.., oy..oy + 8, ox..ox + 8]);
            assert_eq!(ul, q.to_owned());
        }
    }

    #[test]
    fn mosaic_downscale_matches_block_mean_oracle() {
        // Independent oracle: bilinear half-scale with half-pixel centers
        // reduces to the 2x2 block mean.
        let mut r = rng(17);
        let mut view = Image::zeros((3, 12, 12));
        view.map_inplace(|v| *v = r.random_range(0.0..1.0));
        let views = vec![view.clone(), view.clone(), view.clone(), view.clone()];
        let m = compose_mosaic(&views).unwrap();
        for c in 0..3 {
            for y in 0..6 {
                for x in 0..6 {
                    let mean = (view[[c, 2 * y, 2 * x]]
                        + view[[c, 2 * y, 2 * x + 1]]
                        + view[[c, 2 * y + 1, 2 * x]]
                        + view[[c, 2 * y + 1, 2 * x + 1]])
                        / 4.0;
                    assert!((m[[c, y, x]] - mean).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn mosaic_rejects_bad_inputs() {
        let v8 = Image::zeros((3, 8, 8));
        let v6 = Image::zeros((3, 6, 6));
        assert!(compose_mosaic(&[v8.clone(), v8.clone(), v8.clone()]).is_err());
        assert!(compose_mosaic(&[v8.clone(), v8.clone(), v8.clone(), v6.clone()]).is_err());
        let v7 = Image::zeros((3, 7, 7));
        assert!(compose_mosaic(&[v7.clone(), v7.clone(), v7.clone(), v7]).is_err());
    }
}
