// SPDX-License-Identifier: Apache-2.0

//! FPN anchor generation, RPN-style anchor matching and the per-size-class
//! matching statistics.
//!
//! An anchor is positive for a ground-truth box when their IoU exceeds
//! `positive_iou`; each such anchor is attributed to exactly one box (its
//! highest-IoU box, ties to the lower annotation id). With `force_argmax`, a
//! box that ends up with no anchor receives its single best anchor anyway.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coco::{classify_size, BBox, DatasetDescriptor, SizeBasis, SizeClass};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorLevel {
    pub stride: f64,
    pub base_size: f64,
}

/// Optional rescale applied to every image (and its boxes) before matching,
/// e.g. shorter side 800 capped at 1333 as detectors usually train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageResize {
    pub short_side: f64,
    pub max_side: f64,
}

impl ImageResize {
    pub fn factor(&self, width: u32, height: u32) -> f64 {
        let (short, long) = if width < height {
            (width as f64, height as f64)
        } else {
            (height as f64, width as f64)
        };
        let f = self.short_side / short;
        if long * f > self.max_side {
            self.max_side / long
        } else {
            f
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub levels: Vec<AnchorLevel>,
    /// Height over width.
    pub aspect_ratios: Vec<f64>,
    pub positive_iou: f64,
    pub force_argmax: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resize: Option<ImageResize>,
}

pub const DEFAULT_STRIDES: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];
pub const DEFAULT_BASE_SIZES: [f64; 5] = [32.0, 64.0, 128.0, 256.0, 512.0];
pub const DEFAULT_ASPECT_RATIOS: [f64; 3] = [1.0, 0.5, 2.0];
pub const DEFAULT_POSITIVE_IOU: f64 = 0.7;

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            levels: DEFAULT_STRIDES
                .iter()
                .zip(DEFAULT_BASE_SIZES)
                .map(|(&stride, base_size)| AnchorLevel { stride, base_size })
                .collect(),
            aspect_ratios: DEFAULT_ASPECT_RATIOS.to_vec(),
            positive_iou: DEFAULT_POSITIVE_IOU,
            force_argmax: true,
            resize: None,
        }
    }
}

impl AnchorConfig {
    pub fn from_parts(strides: &[f64], base_sizes: &[f64]) -> Result<Vec<AnchorLevel>> {
        if strides.len() != base_sizes.len() {
            return Err(Error::InvalidConfig(format!(
                "{} strides but {} base sizes",
                strides.len(),
                base_sizes.len()
            )));
        }
        Ok(strides
            .iter()
            .zip(base_sizes)
            .map(|(&stride, &base_size)| AnchorLevel { stride, base_size })
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.levels.is_empty() || self.aspect_ratios.is_empty() {
            return bad("anchor config needs at least one level and one aspect ratio".into());
        }
        if self.levels.iter().any(|l| !(l.stride > 0.0 && l.base_size > 0.0)) {
            return bad("strides and base sizes must be positive".into());
        }
        if self.levels.windows(2).any(|w| w[1].stride <= w[0].stride) {
            return bad("strides must be strictly ascending".into());
        }
        if self.levels.windows(2).any(|w| w[1].base_size <= w[0].base_size) {
            return bad("base sizes must be strictly ascending".into());
        }
        if self.aspect_ratios.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return bad("aspect ratios must be positive".into());
        }
        if !(self.positive_iou > 0.0 && self.positive_iou <= 1.0) {
            return bad(format!("positive IoU {} outside (0, 1]", self.positive_iou));
        }
        Ok(())
    }

    /// Anchor `(w, h)` for a base size and h/w ratio; area is preserved.
    pub fn anchor_dims(base_size: f64, ratio: f64) -> (f64, f64) {
        (base_size * (1.0 / ratio).sqrt(), base_size * ratio.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnchorBox {
    pub bbox: BBox,
    pub level: usize,
}

fn grid_dims(width: u32, height: u32, stride: f64) -> (usize, usize) {
    (
        (width as f64 / stride).ceil() as usize,
        (height as f64 / stride).ceil() as usize,
    )
}

#[inline]
fn anchor_at(col: usize, row: usize, stride: f64, w: f64, h: f64) -> BBox {
    let cx = col as f64 * stride + stride / 2.0;
    let cy = row as f64 * stride + stride / 2.0;
    BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
}

/// One anchor per `(level, cell, ratio)`, ordered level-major, then row, then
/// column, then ratio. Anchors are centered on cell centers and not clipped.
pub fn generate_anchors(width: u32, height: u32, cfg: &AnchorConfig) -> Vec<AnchorBox> {
    let mut out = Vec::new();
    for (level, l) in cfg.levels.iter().enumerate() {
        let (cols, rows) = grid_dims(width, height, l.stride);
        let shapes: Vec<(f64, f64)> = cfg
            .aspect_ratios
            .iter()
            .map(|&r| AnchorConfig::anchor_dims(l.base_size, r))
            .collect();
        out.reserve(cols * rows * shapes.len());
        for row in 0..rows {
            for col in 0..cols {
                for &(w, h) in &shapes {
                    out.push(AnchorBox {
                        bbox: anchor_at(col, row, l.stride, w, h),
                        level,
                    });
                }
            }
        }
    }
    out
}

pub fn anchor_count(width: u32, height: u32, cfg: &AnchorConfig) -> usize {
    cfg.levels
        .iter()
        .map(|l| {
            let (c, r) = grid_dims(width, height, l.stride);
            c * r * cfg.aspect_ratios.len()
        })
        .sum()
}

/// Continuous-coordinate intersection over union; 0 when the union is empty.
#[inline]
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// A non-crowd ground-truth box entering the matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub id: u64,
    pub bbox: BBox,
    pub size_class: SizeClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectMatchStats {
    pub annotation_id: u64,
    pub size_class: SizeClass,
    pub matched_anchor_count: u32,
    pub max_iou: f64,
}

/// Positive anchors found for one ground truth: `(anchor index, iou)`.
struct GtCandidates {
    positives: Vec<(usize, f64)>,
    best_iou: f64,
    best_anchor: usize,
}

fn attribute(gt: &[GroundTruth], cands: &[GtCandidates], force_argmax: bool) -> Vec<ObjectMatchStats> {
    // anchor -> (iou, gt id, gt index); keep the best, ties to the lower id
    let mut owner: HashMap<usize, (f64, u64, usize)> = HashMap::new();
    for (gi, c) in cands.iter().enumerate() {
        for &(ai, iou) in &c.positives {
            let claim = (iou, gt[gi].id, gi);
            owner
                .entry(ai)
                .and_modify(|cur| {
                    if iou > cur.0 || (iou == cur.0 && gt[gi].id < cur.1) {
                        *cur = claim;
                    }
                })
                .or_insert(claim);
        }
    }
    let mut counts = vec![0u32; gt.len()];
    for &(_, _, gi) in owner.values() {
        counts[gi] += 1;
    }
    gt.iter()
        .zip(cands)
        .zip(counts)
        .map(|((g, c), mut count)| {
            if force_argmax && count == 0 {
                count = 1;
            }
            ObjectMatchStats {
                annotation_id: g.id,
                size_class: g.size_class,
                matched_anchor_count: count,
                max_iou: c.best_iou,
            }
        })
        .collect()
}

/// Reference matcher over an explicit anchor list; O(|gt| · |anchors|).
pub fn match_anchors(
    gt: &[GroundTruth],
    anchors: &[AnchorBox],
    cfg: &AnchorConfig,
) -> Vec<ObjectMatchStats> {
    let cands: Vec<GtCandidates> = gt
        .iter()
        .map(|g| {
            let mut c = GtCandidates {
                positives: Vec::new(),
                best_iou: 0.0,
                best_anchor: 0,
            };
            for (ai, a) in anchors.iter().enumerate() {
                let iou = box_iou(&g.bbox, &a.bbox);
                if iou > c.best_iou {
                    c.best_iou = iou;
                    c.best_anchor = ai;
                }
                if iou > cfg.positive_iou {
                    c.positives.push((ai, iou));
                }
            }
            c
        })
        .collect();
    attribute(gt, &cands, cfg.force_argmax)
}

/// Grid-aware matcher for one `width` x `height` image. Equivalent to
/// `match_anchors(gt, &generate_anchors(width, height, cfg), cfg)` but only
/// visits anchors that can overlap each box, and skips anchor shapes whose
/// IoU upper bound cannot matter.
pub fn match_image(gt: &[GroundTruth], width: u32, height: u32, cfg: &AnchorConfig) -> Vec<ObjectMatchStats> {
    struct Shape {
        level: usize,
        ratio: usize,
        w: f64,
        h: f64,
    }
    let nr = cfg.aspect_ratios.len();
    let mut level_offset = Vec::with_capacity(cfg.levels.len());
    let mut grids = Vec::with_capacity(cfg.levels.len());
    let mut offset = 0;
    for l in &cfg.levels {
        let (cols, rows) = grid_dims(width, height, l.stride);
        level_offset.push(offset);
        grids.push((cols, rows));
        offset += cols * rows * nr;
    }
    let shapes: Vec<Shape> = cfg
        .levels
        .iter()
        .enumerate()
        .flat_map(|(level, l)| {
            cfg.aspect_ratios.iter().enumerate().map(move |(ratio, &r)| {
                let (w, h) = AnchorConfig::anchor_dims(l.base_size, r);
                Shape { level, ratio, w, h }
            })
        })
        .collect();

    let cands: Vec<GtCandidates> = gt
        .iter()
        .map(|g| {
            let b = &g.bbox;
            // IoU of two boxes with fixed sizes is at most their IoU when
            // concentric.
            let mut order: Vec<(f64, &Shape)> = shapes
                .iter()
                .map(|s| {
                    let inter = s.w.min(b.w) * s.h.min(b.h);
                    let union = s.w * s.h + b.w * b.h - inter;
                    (if union > 0.0 { inter / union } else { 0.0 }, s)
                })
                .collect();
            order.sort_by(|a, b| b.0.total_cmp(&a.0));

            let mut c = GtCandidates {
                positives: Vec::new(),
                best_iou: 0.0,
                best_anchor: usize::MAX,
            };
            for (bound, s) in order {
                if bound < c.best_iou && bound <= cfg.positive_iou {
                    continue;
                }
                let stride = cfg.levels[s.level].stride;
                let (cols, rows) = grids[s.level];
                // cells whose anchor interval can intersect the box
                let range = |lo: f64, len: f64, size: f64, n: usize| {
                    let first = ((lo - size / 2.0 - stride / 2.0) / stride).floor().max(0.0) as usize;
                    let last = (((lo + len + size / 2.0 - stride / 2.0) / stride).ceil().max(0.0) as usize)
                        .min(n.saturating_sub(1));
                    first..=last
                };
                if cols == 0 || rows == 0 {
                    continue;
                }
                for row in range(b.y, b.h, s.h, rows) {
                    for col in range(b.x, b.w, s.w, cols) {
                        let a = anchor_at(col, row, stride, s.w, s.h);
                        let iou = box_iou(b, &a);
                        if iou == 0.0 {
                            continue;
                        }
                        let ai = level_offset[s.level] + (row * cols + col) * nr + s.ratio;
                        if iou > c.best_iou || (iou == c.best_iou && ai < c.best_anchor) {
                            c.best_iou = iou;
                            c.best_anchor = ai;
                        }
                        if iou > cfg.positive_iou {
                            c.positives.push((ai, iou));
                        }
                    }
                }
            }
            c
        })
        .collect();
    attribute(gt, &cands, cfg.force_argmax)
}

// ---------------------------------------------------------------------------
// Dataset statistics
// ---------------------------------------------------------------------------

pub const STATS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
struct ClassTally {
    objects: u64,
    images: u64,
    area: f64,
    matchable: u64,
    matched_anchors: u64,
    max_iou_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: SizeClass,
    pub object_count: u64,
    pub object_count_pct: f64,
    pub images: u64,
    pub images_pct: f64,
    pub total_area: f64,
    pub total_area_pct: f64,
    /// Objects that took part in matching (non-crowd).
    pub matched_objects: u64,
    pub matched_anchors: u64,
    pub matched_anchors_pct: f64,
    pub avg_matching_anchors: f64,
    pub avg_max_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeClassStats {
    pub schema_version: u32,
    pub size_basis: SizeBasis,
    pub anchor_config: AnchorConfig,
    pub total_images: u64,
    pub total_objects: u64,
    pub crowd_objects: u64,
    pub classes: Vec<ClassStats>,
}

impl SizeClassStats {
    pub fn class(&self, c: SizeClass) -> &ClassStats {
        &self.classes[c.index()]
    }

    /// Aligned plain-text table with one row per size class.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>12} {:>10} {:>12} {:>14} {:>14} {:>12}",
            "", "Object Count", "Images", "Total Area", "Matched Anch.", "Avg Matching", "Avg Max IoU"
        );
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<8} {:>11.2}% {:>9.2}% {:>11.2}% {:>13.2}% {:>14.2} {:>12.2}",
                c.class.name(),
                c.object_count_pct,
                c.images_pct,
                c.total_area_pct,
                c.matched_anchors_pct,
                c.avg_matching_anchors,
                c.avg_max_iou
            );
        }
        let _ = writeln!(
            s,
            "images: {}  objects: {} ({} crowd)  basis: {}  positive IoU > {}{}",
            self.total_images,
            self.total_objects,
            self.crowd_objects,
            self.size_basis,
            self.anchor_config.positive_iou,
            if self.anchor_config.force_argmax { "  forced argmax" } else { "" }
        );
        s
    }
}

fn pct(part: f64, whole: f64) -> f64 {
    if whole > 0.0 {
        100.0 * part / whole
    } else {
        0.0
    }
}

/// Per-class shares of objects, images and area, plus anchor-matching
/// averages. Crowd annotations count toward the shares but do not take part
/// in matching. Per-image work runs in parallel; the reduction is done in
/// image order so the result does not depend on the thread count.
pub fn dataset_statistics(d: &DatasetDescriptor, cfg: &AnchorConfig, basis: SizeBasis) -> Result<SizeClassStats> {
    cfg.validate()?;
    if d.annotations().is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_image: Vec<([ClassTally; 3], u64)> = d
        .images()
        .par_iter()
        .map(|img| {
            let mut t: [ClassTally; 3] = Default::default();
            let mut crowd = 0;
            let scale = cfg.resize.map_or(1.0, |r| r.factor(img.width, img.height));
            let mut gts = Vec::new();
            for a in d.annotations_for(img.id) {
                let class = classify_size(a, basis);
                let ct = &mut t[class.index()];
                ct.objects += 1;
                ct.area += a.size_area(basis);
                if a.iscrowd {
                    crowd += 1;
                    continue;
                }
                let b = a.bbox;
                gts.push(GroundTruth {
                    id: a.id,
                    bbox: BBox::new(b.x * scale, b.y * scale, b.w * scale, b.h * scale),
                    size_class: class,
                });
            }
            for ct in t.iter_mut() {
                ct.images = (ct.objects > 0) as u64;
            }
            if !gts.is_empty() {
                let (w, h) = if scale == 1.0 {
                    (img.width, img.height)
                } else {
                    (
                        (img.width as f64 * scale).round() as u32,
                        (img.height as f64 * scale).round() as u32,
                    )
                };
                for m in match_image(&gts, w, h, cfg) {
                    let ct = &mut t[m.size_class.index()];
                    ct.matchable += 1;
                    ct.matched_anchors += m.matched_anchor_count as u64;
                    ct.max_iou_sum += m.max_iou;
                }
            }
            (t, crowd)
        })
        .collect();

    let mut total: [ClassTally; 3] = Default::default();
    let mut crowd_objects = 0;
    for (t, crowd) in &per_image {
        crowd_objects += crowd;
        for (acc, x) in total.iter_mut().zip(t) {
            acc.objects += x.objects;
            acc.images += x.images;
            acc.area += x.area;
            acc.matchable += x.matchable;
            acc.matched_anchors += x.matched_anchors;
            acc.max_iou_sum += x.max_iou_sum;
        }
    }
    let n_objects: u64 = total.iter().map(|t| t.objects).sum();
    let n_area: f64 = total.iter().map(|t| t.area).sum();
    let n_matched: u64 = total.iter().map(|t| t.matched_anchors).sum();
    let n_images = d.images().len() as u64;
    let classes = SizeClass::ALL
        .iter()
        .zip(&total)
        .map(|(&class, t)| ClassStats {
            class,
            object_count: t.objects,
            object_count_pct: pct(t.objects as f64, n_objects as f64),
            images: t.images,
            images_pct: pct(t.images as f64, n_images as f64),
            total_area: t.area,
            total_area_pct: pct(t.area, n_area),
            matched_objects: t.matchable,
            matched_anchors: t.matched_anchors,
            matched_anchors_pct: pct(t.matched_anchors as f64, n_matched as f64),
            avg_matching_anchors: if t.matchable > 0 {
                t.matched_anchors as f64 / t.matchable as f64
            } else {
                0.0
            },
            avg_max_iou: if t.matchable > 0 {
                t.max_iou_sum / t.matchable as f64
            } else {
                0.0
            },
        })
        .collect();
    Ok(SizeClassStats {
        schema_version: STATS_SCHEMA_VERSION,
        size_basis: basis,
        anchor_config: cfg.clone(),
        total_images: n_images,
        total_objects: n_objects,
        crowd_objects,
        classes,
    })
}
