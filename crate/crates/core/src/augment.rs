// SPDX-License-Identifier: Apache-2.0

//! Copy-paste augmentation of small objects within their own image.
//!
//! For each paste the source object is cut out through its mask, scaled and
//! rotated by a random amount, dropped at a random position that keeps a
//! border margin and (by default) touches no existing object, and composited
//! back into the image. Every paste yields a new RLE annotation describing
//! exactly the pixels that were pasted.

use image::{Rgb, RgbImage};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coco::{classify_size, AnnotationRecord, BBox, ImageRecord, Segmentation, SizeBasis, SizeClass};
use crate::error::{Error, Result};
use crate::mask::{
    masks_overlap, rle_encode, rotate_mask, scale_mask, scale_source, scaled_dims, BinaryMask, PixelBox, Rotation,
};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// One random candidate, pasted `copies` times.
    SingleObject { copies: u32 },
    /// `ceil(object_fraction * candidates)` distinct candidates, each pasted
    /// `copies` times.
    MultipleObjects { object_fraction: f64, copies: u32 },
    /// Every candidate, `copies` times.
    AllObjects { copies: u32 },
}

impl Strategy {
    pub fn copies(&self) -> u32 {
        match *self {
            Strategy::SingleObject { copies }
            | Strategy::MultipleObjects { copies, .. }
            | Strategy::AllObjects { copies } => copies,
        }
    }

    /// Most pastes this strategy can attempt on an image with `n` candidates.
    pub fn max_pastes(&self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        let c = self.copies() as usize;
        match *self {
            Strategy::SingleObject { .. } => c,
            Strategy::MultipleObjects { object_fraction, .. } => fraction_count(object_fraction, n) * c,
            Strategy::AllObjects { .. } => n * c,
        }
    }
}

fn fraction_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).ceil() as usize).clamp(1, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapPolicy {
    #[default]
    Reject,
    Allow,
}

/// Resolution of the overlap test under [`OverlapPolicy::Reject`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapGranularity {
    #[default]
    Mask,
    /// Pasted bbox must not intersect any existing object's bbox.
    BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Blend {
    #[default]
    Hard,
    /// Alpha from the mask blurred by a `kernel` x `kernel` Gaussian.
    GaussianEdge { kernel: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub strategy: Strategy,
    pub scale_range: (f64, f64),
    /// Degrees.
    pub rotation_range: (f64, f64),
    pub border_margin: u32,
    pub overlap_policy: OverlapPolicy,
    pub overlap_granularity: OverlapGranularity,
    pub blend: Blend,
    pub max_placement_attempts: u32,
    pub size_basis: SizeBasis,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            strategy: Strategy::AllObjects { copies: 1 },
            scale_range: (0.8, 1.2),
            rotation_range: (-15.0, 15.0),
            border_margin: 5,
            overlap_policy: OverlapPolicy::Reject,
            overlap_granularity: OverlapGranularity::Mask,
            blend: Blend::Hard,
            max_placement_attempts: 100,
            size_basis: SizeBasis::MaskArea,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("scale range ({lo}, {hi}) must be positive and ordered"));
        }
        let (rlo, rhi) = self.rotation_range;
        if !(rlo <= rhi && rlo >= -180.0 && rhi <= 180.0) {
            return bad(format!("rotation range ({rlo}, {rhi}) must be ordered within ±180°"));
        }
        if let Blend::GaussianEdge { kernel } = self.blend {
            if kernel == 0 || kernel % 2 == 0 {
                return bad(format!("blur kernel {kernel} must be odd"));
            }
        }
        let copies = self.strategy.copies();
        let max_copies = match self.strategy {
            Strategy::AllObjects { .. } => 3,
            _ => 5,
        };
        if !(1..=max_copies).contains(&copies) {
            return bad(format!("copies {copies} outside 1..={max_copies} for this strategy"));
        }
        if let Strategy::MultipleObjects { object_fraction, .. } = self.strategy {
            if !(object_fraction > 0.0 && object_fraction <= 1.0) {
                return bad(format!("object fraction {object_fraction} outside (0, 1]"));
            }
        }
        if self.max_placement_attempts == 0 {
            return bad("max placement attempts must be at least 1".into());
        }
        Ok(())
    }
}

/// How one pasted instance was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PasteRecord {
    pub source_annotation_id: u64,
    pub scale: f64,
    pub rotation: f64,
    /// Top-left of the pasted mask's tight bbox, image coordinates.
    pub placement: (u32, u32),
    pub new_annotation_id: u64,
}

#[derive(Debug, Clone)]
pub struct AugmentedImage {
    pub pixels: RgbImage,
    pub annotations: Vec<AnnotationRecord>,
    pub provenance: Vec<PasteRecord>,
    pub attempts: u32,
    pub failures: u32,
}

/// Small, non-crowd objects outlined by exactly one polygon. Multi-part or
/// RLE masks are treated as occluded.
pub fn select_candidates<'a>(
    annotations: impl IntoIterator<Item = &'a AnnotationRecord>,
    basis: SizeBasis,
) -> Vec<&'a AnnotationRecord> {
    annotations
        .into_iter()
        .filter(|a| {
            if a.iscrowd || classify_size(a, basis) != SizeClass::Small {
                return false;
            }
            let single = a.segmentation.polygon_count() == Some(1);
            if !single {
                log::debug!("annotation {}: small but not a single polygon, skipped", a.id);
            }
            single
        })
        .collect()
}

/// `(scale, rotation in degrees)`, independent uniform draws.
pub fn sample_transform(rng: &mut ChaCha8Rng, cfg: &AugmentationConfig) -> (f64, f64) {
    let (slo, shi) = cfg.scale_range;
    let (rlo, rhi) = cfg.rotation_range;
    let scale = if slo == shi { slo } else { rng.random_range(slo..=shi) };
    let rotation = if rlo == rhi { rlo } else { rng.random_range(rlo..=rhi) };
    (scale, rotation)
}

/// Union of everything already present in an image.
#[derive(Debug, Clone)]
pub struct Occupancy {
    pub mask: BinaryMask,
    pub boxes: Vec<PixelBox>,
}

impl Occupancy {
    pub fn new(width: u32, height: u32) -> Self {
        Occupancy {
            mask: BinaryMask::new(width, height),
            boxes: Vec::new(),
        }
    }

    pub fn from_annotations<'a>(
        width: u32,
        height: u32,
        annotations: impl IntoIterator<Item = &'a AnnotationRecord>,
    ) -> Result<Self> {
        let mut occ = Occupancy::new(width, height);
        for a in annotations {
            let m = a.segmentation.to_mask(width, height)?;
            occ.mask.union_at(&m, 0, 0);
            let b = a.bbox;
            let x0 = b.x.floor().max(0.0) as u32;
            let y0 = b.y.floor().max(0.0) as u32;
            let x1 = ((b.x + b.w).ceil() as u32).min(width);
            let y1 = ((b.y + b.h).ceil() as u32).min(height);
            if x1 > x0 && y1 > y0 {
                occ.boxes.push(PixelBox {
                    x: x0,
                    y: y0,
                    w: x1 - x0,
                    h: y1 - y0,
                });
            }
        }
        Ok(occ)
    }

    fn add(&mut self, mask: &BinaryMask, x: u32, y: u32) {
        self.mask.union_at(mask, x as i64, y as i64);
        if let Some(b) = mask.bbox() {
            self.boxes.push(PixelBox {
                x: x + b.x,
                y: y + b.y,
                w: b.w,
                h: b.h,
            });
        }
    }
}

fn boxes_intersect(a: &PixelBox, b: &PixelBox) -> bool {
    a.x < b.right() && b.x < a.right() && a.y < b.bottom() && b.y < a.bottom()
}

/// Draws uniform positions for `obj_mask` until one satisfies the margin and
/// overlap rules, then records the object in `occupied`.
///
/// The returned `(x, y)` is the top-left of the mask canvas; the mask's set
/// pixels end up within `[margin, dim - margin)` on both axes.
pub fn find_placement(
    obj_mask: &BinaryMask,
    occupied: &mut Occupancy,
    image_dims: (u32, u32),
    cfg: &AugmentationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(u32, u32)> {
    let b = obj_mask.bbox().ok_or(Error::PlacementNotFound { attempts: 0 })?;
    let (w, h) = image_dims;
    let m = cfg.border_margin;
    let (Some(x_hi), Some(y_hi)) = (
        w.checked_sub(m).and_then(|v| v.checked_sub(b.w)),
        h.checked_sub(m).and_then(|v| v.checked_sub(b.h)),
    ) else {
        return Err(Error::PlacementNotFound { attempts: 0 });
    };
    if x_hi < m || y_hi < m {
        return Err(Error::PlacementNotFound { attempts: 0 });
    }
    for _ in 0..cfg.max_placement_attempts {
        let left = rng.random_range(m..=x_hi);
        let top = rng.random_range(m..=y_hi);
        let placed = PixelBox {
            x: left,
            y: top,
            w: b.w,
            h: b.h,
        };
        // canvas origin; bbox offset inside the canvas never exceeds `left`
        let (x, y) = match (left.checked_sub(b.x), top.checked_sub(b.y)) {
            (Some(x), Some(y)) => (x, y),
            _ => continue,
        };
        let clear = match (cfg.overlap_policy, cfg.overlap_granularity) {
            (OverlapPolicy::Allow, _) => true,
            (OverlapPolicy::Reject, OverlapGranularity::Mask) => {
                !masks_overlap(obj_mask, (x as i64, y as i64), &occupied.mask, (0, 0))
            }
            (OverlapPolicy::Reject, OverlapGranularity::BBox) => {
                !occupied.boxes.iter().any(|o| boxes_intersect(o, &placed))
            }
        };
        if clear {
            occupied.add(obj_mask, x, y);
            return Ok((x, y));
        }
    }
    Err(Error::PlacementNotFound {
        attempts: cfg.max_placement_attempts,
    })
}

// ---------------------------------------------------------------------------
// Pixel resampling
// ---------------------------------------------------------------------------

fn bilinear(img: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let cx = |v: i64| v.clamp(0, w - 1) as u32;
    let cy = |v: i64| v.clamp(0, h - 1) as u32;
    let (x0, y0) = (x0f as i64, y0f as i64);
    let p00 = img.get_pixel(cx(x0), cy(y0));
    let p10 = img.get_pixel(cx(x0 + 1), cy(y0));
    let p01 = img.get_pixel(cx(x0), cy(y0 + 1));
    let p11 = img.get_pixel(cx(x0 + 1), cy(y0 + 1));
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        *o = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Bilinear rescale to the same dims [`scale_mask`] produces.
pub fn scale_rgb(img: &RgbImage, factor: f64) -> Result<RgbImage> {
    let (w, h) = scaled_dims(img.width(), img.height(), factor)?;
    if (w, h) == img.dimensions() {
        return Ok(img.clone());
    }
    Ok(RgbImage::from_fn(w, h, |x, y| {
        bilinear(
            img,
            scale_source(x, img.width(), w) - 0.5,
            scale_source(y, img.height(), h) - 0.5,
        )
    }))
}

/// Bilinear rotation onto the same enlarged canvas [`rotate_mask`] uses.
pub fn rotate_rgb(img: &RgbImage, degrees: f64) -> RgbImage {
    if degrees == 0.0 {
        return img.clone();
    }
    let rot = Rotation::new(img.width(), img.height(), degrees);
    RgbImage::from_fn(rot.out_width, rot.out_height, |x, y| {
        let (sx, sy) = rot.source(x, y);
        bilinear(img, sx - 0.5, sy - 0.5)
    })
}

// ---------------------------------------------------------------------------
// Compositing
// ---------------------------------------------------------------------------

/// Normalized 1-D Gaussian; sigma follows the usual
/// `0.3 * ((k - 1) / 2 - 1) + 0.8` rule for a kernel of size `k`.
pub fn gaussian_kernel(k: u32) -> Vec<f64> {
    let sigma = 0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    let r = (k / 2) as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Alpha map for `mask` blurred by a `k` x `k` Gaussian. The map is `k / 2`
/// pixels larger than the mask on every side.
pub fn blurred_alpha(mask: &BinaryMask, k: u32) -> (Vec<f64>, u32, u32) {
    let r = k / 2;
    let (w, h) = (mask.width() + 2 * r, mask.height() + 2 * r);
    let kernel = gaussian_kernel(k);
    let src = |x: i64, y: i64| -> f64 { mask.get_signed(x - r as i64, y - r as i64) as u8 as f64 };
    let mut horiz = vec![0.0; (w * h) as usize];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                acc += kv * src(x + i as i64 - r as i64, y);
            }
            horiz[(y * w as i64 + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0; (w * h) as usize];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let yy = y + i as i64 - r as i64;
                if yy >= 0 && yy < h as i64 {
                    acc += kv * horiz[(yy * w as i64 + x) as usize];
                }
            }
            // a full kernel sums to 1 only up to rounding
            out[(y * w as i64 + x) as usize] = if acc > 1.0 - 1e-9 { 1.0 } else { acc };
        }
    }
    (out, w, h)
}

/// Pastes `patch` through `mask` with the mask's origin at `at`.
///
/// `Hard` copies patch pixels wherever the mask is set. `GaussianEdge`
/// alpha-blends using the blurred mask; pixels outside the alpha support are
/// never written.
pub fn composite_paste(
    canvas: &mut RgbImage,
    patch: &RgbImage,
    mask: &BinaryMask,
    at: (i64, i64),
    blend: Blend,
) -> Result<()> {
    if patch.dimensions() != (mask.width(), mask.height()) {
        return Err(Error::InvalidRecord {
            record: "paste patch".into(),
            reason: format!(
                "patch is {}x{} but mask is {}x{}",
                patch.width(),
                patch.height(),
                mask.width(),
                mask.height()
            ),
        });
    }
    let out_of_bounds = Error::OutOfBounds {
        x: at.0,
        y: at.1,
        width: mask.width(),
        height: mask.height(),
    };
    if let Some(b) = mask.bbox() {
        let (x0, y0) = (at.0 + b.x as i64, at.1 + b.y as i64);
        if x0 < 0 || y0 < 0 || x0 + b.w as i64 > canvas.width() as i64 || y0 + b.h as i64 > canvas.height() as i64 {
            return Err(out_of_bounds);
        }
    }
    let (cw, ch) = (canvas.width() as i64, canvas.height() as i64);
    match blend {
        Blend::Hard => {
            for (x, y) in mask.iter_set() {
                let (tx, ty) = (at.0 + x as i64, at.1 + y as i64);
                canvas.put_pixel(tx as u32, ty as u32, *patch.get_pixel(x, y));
            }
        }
        Blend::GaussianEdge { kernel } => {
            let r = (kernel / 2) as i64;
            let (alpha, aw, ah) = blurred_alpha(mask, kernel);
            let (pw, ph) = (patch.width() as i64, patch.height() as i64);
            for ay in 0..ah as i64 {
                for ax in 0..aw as i64 {
                    let a = alpha[(ay * aw as i64 + ax) as usize];
                    if a <= 0.0 {
                        continue;
                    }
                    let (tx, ty) = (at.0 + ax - r, at.1 + ay - r);
                    if tx < 0 || ty < 0 || tx >= cw || ty >= ch {
                        continue;
                    }
                    let (px, py) = ((ax - r).clamp(0, pw - 1) as u32, (ay - r).clamp(0, ph - 1) as u32);
                    let src = patch.get_pixel(px, py);
                    let dst = canvas.get_pixel_mut(tx as u32, ty as u32);
                    for c in 0..3 {
                        let v = a * src[c] as f64 + (1.0 - a) * dst[c] as f64;
                        dst[c] = v.round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Whole-image augmentation
// ---------------------------------------------------------------------------

/// Context pixels kept around a cut-out so resampling and edge blur see real
/// background instead of clamped edges.
fn patch_padding(blend: Blend) -> u32 {
    match blend {
        Blend::Hard => 1,
        Blend::GaussianEdge { kernel } => kernel / 2 + 1,
    }
}

fn crop_rgb_clamped(img: &RgbImage, x0: i64, y0: i64, w: u32, h: u32) -> RgbImage {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    RgbImage::from_fn(w, h, |x, y| {
        *img.get_pixel(
            (x0 + x as i64).clamp(0, iw - 1) as u32,
            (y0 + y as i64).clamp(0, ih - 1) as u32,
        )
    })
}

/// Pastes per `cfg.strategy` using an RNG seeded with `seed`. New
/// annotations get ids `first_new_id`, `first_new_id + 1`, ... in paste
/// order. An image without candidates comes back unchanged with empty
/// provenance.
pub fn augment_image(
    pixels: &RgbImage,
    image: &ImageRecord,
    annotations: &[AnnotationRecord],
    cfg: &AugmentationConfig,
    seed: u64,
    first_new_id: u64,
) -> Result<AugmentedImage> {
    if pixels.dimensions() != (image.width, image.height) {
        return Err(Error::InvalidRecord {
            record: format!("image {}", image.id),
            reason: format!(
                "pixels are {}x{} but the record says {}x{}",
                pixels.width(),
                pixels.height(),
                image.width,
                image.height
            ),
        });
    }
    let mut out = AugmentedImage {
        pixels: pixels.clone(),
        annotations: annotations.to_vec(),
        provenance: Vec::new(),
        attempts: 0,
        failures: 0,
    };
    let candidates = select_candidates(annotations, cfg.size_basis);
    if candidates.is_empty() {
        return Ok(out);
    }
    let mut rng = rng_from_seed(seed);
    let copies = cfg.strategy.copies() as usize;
    let order: Vec<usize> = match cfg.strategy {
        Strategy::SingleObject { .. } => {
            let pick = rng.random_range(0..candidates.len());
            vec![pick; copies]
        }
        Strategy::MultipleObjects { object_fraction, .. } => {
            let k = fraction_count(object_fraction, candidates.len());
            sample(&mut rng, candidates.len(), k)
                .into_iter()
                .flat_map(|i| std::iter::repeat_n(i, copies))
                .collect()
        }
        Strategy::AllObjects { .. } => (0..candidates.len())
            .flat_map(|i| std::iter::repeat_n(i, copies))
            .collect(),
    };

    let (w, h) = (image.width, image.height);
    let mut occupied = Occupancy::from_annotations(w, h, annotations)?;
    let pad = patch_padding(cfg.blend);
    let mut cutouts: Vec<Option<(BinaryMask, RgbImage)>> = vec![None; candidates.len()];
    let mut next_id = first_new_id;

    for ci in order {
        out.attempts += 1;
        let src = candidates[ci];
        if cutouts[ci].is_none() {
            let full = src.segmentation.to_mask(w, h)?;
            cutouts[ci] = full.bbox().map(|b| {
                let (x0, y0) = (b.x as i64 - pad as i64, b.y as i64 - pad as i64);
                let (cw, ch) = (b.w + 2 * pad, b.h + 2 * pad);
                let m = full.crop(b).padded(pad);
                (m, crop_rgb_clamped(pixels, x0, y0, cw, ch))
            });
        }
        // draw the transform before anything can fail so the stream stays
        // aligned with the paste order
        let (scale, rotation) = sample_transform(&mut rng, cfg);
        let Some((cut_mask, cut_pixels)) = &cutouts[ci] else {
            out.failures += 1;
            continue;
        };
        let transformed = scale_mask(cut_mask, scale).and_then(|m| {
            let p = scale_rgb(cut_pixels, scale)?;
            Ok((rotate_mask(&m, rotation), rotate_rgb(&p, rotation)))
        });
        let Ok((t_mask, t_pixels)) = transformed else {
            out.failures += 1;
            continue;
        };
        let Some(tb) = t_mask.bbox() else {
            out.failures += 1;
            continue;
        };
        let tight = t_mask.crop(tb);
        let (px, py) = match find_placement(&tight, &mut occupied, (w, h), cfg, &mut rng) {
            Ok(p) => p,
            Err(Error::PlacementNotFound { .. }) => {
                log::debug!("image {}: no room for a copy of annotation {}", image.id, src.id);
                out.failures += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let at = (px as i64 - tb.x as i64, py as i64 - tb.y as i64);
        composite_paste(&mut out.pixels, &t_pixels, &t_mask, at, cfg.blend)?;

        let mut placed = BinaryMask::new(w, h);
        placed.union_at(&tight, px as i64, py as i64);
        let bbox = placed.bbox().expect("placed mask is non-empty");
        let id = next_id;
        next_id += 1;
        out.annotations.push(AnnotationRecord {
            id,
            image_id: image.id,
            category_id: src.category_id,
            bbox: BBox::new(bbox.x as f64, bbox.y as f64, bbox.w as f64, bbox.h as f64),
            area: placed.area() as f64,
            segmentation: Segmentation::Rle {
                rle: rle_encode(&placed),
                compressed: true,
            },
            iscrowd: false,
        });
        out.provenance.push(PasteRecord {
            source_annotation_id: src.id,
            scale,
            rotation,
            placement: (px, py),
            new_annotation_id: id,
        });
    }
    Ok(out)
}
