// SPDX-License-Identifier: Apache-2.0

//! Binary mask geometry.
//!
//! Masks are dense bit grids stored row-major. COCO run-length counts are
//! column-major; conversion happens in [`rle_encode`] / [`rle_decode`], and the
//! character-compressed `counts` string used by COCO JSON is handled by
//! [`RunLengthCounts::to_compressed_string`] and
//! [`RunLengthCounts::from_compressed_string`].

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tight integer pixel box `(x, y, w, h)`, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelBox {
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: BitVec<u64, Lsb0>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: bitvec![u64, Lsb0; 0; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: bitvec![u64, Lsb0; 1; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = BinaryMask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.idx(x, y);
        self.bits.set(i, value);
    }

    /// Signed-coordinate lookup; anything outside the grid reads as unset.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as u64) < self.width as u64
            && (y as u64) < self.height as u64
            && self.get(x as u32, y as u32)
    }

    /// Sets bits `[x0, x1)` of row `y`.
    fn fill_row_span(&mut self, y: u32, x0: u32, x1: u32) {
        if x0 >= x1 {
            return;
        }
        let start = self.idx(0, y) + x0 as usize;
        let end = start + (x1 - x0) as usize;
        self.bits[start..end].fill(true);
    }

    pub fn area(&self) -> u64 {
        self.bits.count_ones() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.bits.not_any()
    }

    /// Iterates set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter_ones()
            .map(move |i| ((i % w) as u32, (i / w) as u32))
    }

    pub fn bbox(&self) -> Option<PixelBox> {
        if self.width == 0 || self.height == 0 {
            return None;
        }
        let w = self.width as usize;
        let mut min_x = u32::MAX;
        let mut max_x = 0;
        let mut min_y = u32::MAX;
        let mut max_y = 0;
        for (y, row) in self.bits.chunks(w).enumerate() {
            let (Some(first), Some(last)) = (row.first_one(), row.last_one()) else {
                continue;
            };
            min_x = min_x.min(first as u32);
            max_x = max_x.max(last as u32);
            min_y = min_y.min(y as u32);
            max_y = y as u32;
        }
        (min_x != u32::MAX).then(|| PixelBox {
            x: min_x,
            y: min_y,
            w: max_x - min_x + 1,
            h: max_y - min_y + 1,
        })
    }

    /// Copies the region `b` (clipped to the grid) into a new mask.
    pub fn crop(&self, b: PixelBox) -> BinaryMask {
        let mut out = BinaryMask::new(b.w, b.h);
        for y in 0..b.h {
            for x in 0..b.w {
                if self.get_signed(b.x as i64 + x as i64, b.y as i64 + y as i64) {
                    out.set(x, y, true);
                }
            }
        }
        out
    }

    /// Grows the canvas by `pad` unset pixels on every side.
    pub fn padded(&self, pad: u32) -> BinaryMask {
        let mut out = BinaryMask::new(self.width + 2 * pad, self.height + 2 * pad);
        for (x, y) in self.iter_set() {
            out.set(x + pad, y + pad, true);
        }
        out
    }

    /// ORs `other` into `self` with `other`'s origin at `(ox, oy)`; pixels
    /// falling outside `self` are dropped.
    pub fn union_at(&mut self, other: &BinaryMask, ox: i64, oy: i64) {
        for (x, y) in other.iter_set() {
            let tx = ox + x as i64;
            let ty = oy + y as i64;
            if tx >= 0 && ty >= 0 && tx < self.width as i64 && ty < self.height as i64 {
                self.set(tx as u32, ty as u32, true);
            }
        }
    }
}

/// COCO run-length counts, column-major, first run counts zeros.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunLengthCounts {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<u32>,
}

impl RunLengthCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn check(&self) -> Result<()> {
        let expected = self.height as u64 * self.width as u64;
        let actual = self.total();
        if actual != expected {
            return Err(Error::LengthMismatch { expected, actual });
        }
        Ok(())
    }

    /// Area without decoding: the sum of the odd (foreground) runs.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    /// COCO's compressed `counts` string: 5 data bits per char, offset 48,
    /// continuation bit 0x20, every run after the third stored as a delta
    /// against the run two positions back.
    pub fn to_compressed_string(&self) -> String {
        let mut s = String::with_capacity(self.counts.len() * 2);
        for (i, &c) in self.counts.iter().enumerate() {
            let mut x = c as i64;
            if i > 2 {
                x -= self.counts[i - 2] as i64;
            }
            loop {
                let mut ch = (x & 0x1f) as u8;
                x >>= 5;
                let more = if ch & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    ch |= 0x20;
                }
                s.push((ch + 48) as char);
                if !more {
                    break;
                }
            }
        }
        s
    }

    pub fn from_compressed_string(s: &str, height: u32, width: u32) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u32> = Vec::new();
        let mut p = 0;
        while p < bytes.len() {
            let mut x: i64 = 0;
            let mut k = 0;
            loop {
                let Some(&b) = bytes.get(p) else {
                    return Err(Error::InvalidRle("truncated run".into()));
                };
                if !(48..48 + 64).contains(&b) {
                    return Err(Error::InvalidRle(format!(
                        "byte {b:#04x} at {p} outside the 6-bit alphabet"
                    )));
                }
                if k >= 12 {
                    return Err(Error::InvalidRle(format!("run at {p} too long")));
                }
                let c = (b - 48) as i64;
                x |= (c & 0x1f) << (5 * k);
                p += 1;
                k += 1;
                if c & 0x20 == 0 {
                    if c & 0x10 != 0 {
                        x |= -1i64 << (5 * k);
                    }
                    break;
                }
            }
            if counts.len() > 2 {
                x += counts[counts.len() - 2] as i64;
            }
            let run = u32::try_from(x)
                .map_err(|_| Error::InvalidRle(format!("run {} decodes to {x}", counts.len())))?;
            counts.push(run);
        }
        let rle = RunLengthCounts {
            height,
            width,
            counts,
        };
        rle.check()?;
        Ok(rle)
    }
}

/// Rasterizes polygons given as flat `[x0, y0, x1, y1, ...]` lists.
///
/// A pixel is set iff its center `(x + 0.5, y + 0.5)` is inside at least one
/// polygon under the even-odd rule. Polygons may extend past the grid.
pub fn rasterize_polygons(polys: &[Vec<f64>], width: u32, height: u32) -> Result<BinaryMask> {
    let mut mask = BinaryMask::new(width, height);
    let mut crossings: Vec<f64> = Vec::new();
    for poly in polys {
        if poly.len() < 6 || poly.len() % 2 != 0 {
            return Err(Error::DegeneratePolygon { coords: poly.len() });
        }
        let n = poly.len() / 2;
        let vx = |i: usize| poly[2 * i];
        let vy = |i: usize| poly[2 * i + 1];
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            ymin = ymin.min(vy(i));
            ymax = ymax.max(vy(i));
        }
        let row_lo = (ymin - 0.5).floor().max(0.0) as i64;
        let row_hi = ((ymax - 0.5).ceil() as i64).min(height as i64 - 1);
        for row in row_lo..=row_hi {
            let py = row as f64 + 0.5;
            crossings.clear();
            let mut j = n - 1;
            for i in 0..n {
                let (xi, yi, xj, yj) = (vx(i), vy(i), vx(j), vy(j));
                if (yi > py) != (yj > py) {
                    crossings.push((xj - xi) * (py - yi) / (yj - yi) + xi);
                }
                j = i;
            }
            crossings.sort_by(f64::total_cmp);
            for span in crossings.chunks_exact(2) {
                let x0 = first_center_at_or_after(span[0], width);
                let x1 = first_center_at_or_after(span[1], width);
                mask.fill_row_span(row as u32, x0, x1);
            }
        }
    }
    Ok(mask)
}

/// Smallest column `x` in `[0, width]` with `x + 0.5 >= edge`.
fn first_center_at_or_after(edge: f64, width: u32) -> u32 {
    if edge.is_nan() || edge <= 0.5 {
        return 0;
    }
    if edge > width as f64 {
        return width;
    }
    let mut x = (edge - 0.5).ceil() as i64;
    while x > 0 && (x - 1) as f64 + 0.5 >= edge {
        x -= 1;
    }
    while (x as f64) + 0.5 < edge {
        x += 1;
    }
    x.clamp(0, width as i64) as u32
}

pub fn rle_decode(r: &RunLengthCounts) -> Result<BinaryMask> {
    r.check()?;
    let h = r.height as usize;
    let mut mask = BinaryMask::new(r.width, r.height);
    let mut pos = 0usize;
    for (i, &c) in r.counts.iter().enumerate() {
        let c = c as usize;
        if i % 2 == 1 {
            for p in pos..pos + c {
                mask.set((p / h) as u32, (p % h) as u32, true);
            }
        }
        pos += c;
    }
    Ok(mask)
}

pub fn rle_encode(m: &BinaryMask) -> RunLengthCounts {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..m.width() {
        for y in 0..m.height() {
            let v = m.get(x, y);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RunLengthCounts {
        height: m.height(),
        width: m.width(),
        counts,
    }
}

pub fn mask_bbox(m: &BinaryMask) -> Option<PixelBox> {
    m.bbox()
}

pub fn mask_area(m: &BinaryMask) -> u64 {
    m.area()
}

pub(crate) fn scaled_dims(width: u32, height: u32, factor: f64) -> Result<(u32, u32)> {
    if factor.is_nan() || factor <= 0.0 || !factor.is_finite() {
        return Err(Error::InvalidConfig(format!("scale factor {factor} must be positive")));
    }
    let w = (width as f64 * factor).round();
    let h = (height as f64 * factor).round();
    if w < 1.0 || h < 1.0 {
        return Err(Error::DegenerateOutput {
            width: w as u32,
            height: h as u32,
        });
    }
    Ok((w as u32, h as u32))
}

/// Continuous source coordinate of output pixel center `out` when a length
/// `src_len` axis is resampled to `dst_len`.
#[inline]
pub(crate) fn scale_source(out: u32, src_len: u32, dst_len: u32) -> f64 {
    (out as f64 + 0.5) * src_len as f64 / dst_len as f64
}

/// Nearest-neighbour rescale; output dims are `round(dim * factor)`.
pub fn scale_mask(m: &BinaryMask, factor: f64) -> Result<BinaryMask> {
    let (w, h) = scaled_dims(m.width(), m.height(), factor)?;
    if (w, h) == (m.width(), m.height()) {
        return Ok(m.clone());
    }
    let xs: Vec<u32> = (0..w)
        .map(|x| (scale_source(x, m.width(), w) as u32).min(m.width() - 1))
        .collect();
    let ys: Vec<u32> = (0..h)
        .map(|y| (scale_source(y, m.height(), h) as u32).min(m.height() - 1))
        .collect();
    Ok(BinaryMask::from_fn(w, h, |x, y| {
        m.get(xs[x as usize], ys[y as usize])
    }))
}

/// Inverse mapping for a rotation about the canvas center.
///
/// Positive angles rotate counter-clockwise as displayed (y axis down).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Rotation {
    cos: f64,
    sin: f64,
    src_cx: f64,
    src_cy: f64,
    dst_cx: f64,
    dst_cy: f64,
    pub out_width: u32,
    pub out_height: u32,
}

impl Rotation {
    pub fn new(width: u32, height: u32, degrees: f64) -> Self {
        let (sin, cos) = degrees.to_radians().sin_cos();
        let (w, h) = (width as f64, height as f64);
        let bound = |v: f64| ((v - 1e-9).ceil().max(1.0)) as u32;
        let out_width = bound(w * cos.abs() + h * sin.abs());
        let out_height = bound(w * sin.abs() + h * cos.abs());
        Rotation {
            cos,
            sin,
            src_cx: w / 2.0,
            src_cy: h / 2.0,
            dst_cx: out_width as f64 / 2.0,
            dst_cy: out_height as f64 / 2.0,
            out_width,
            out_height,
        }
    }

    /// Source-space continuous coordinate of output pixel center `(x, y)`.
    #[inline]
    pub fn source(&self, x: u32, y: u32) -> (f64, f64) {
        let dx = x as f64 + 0.5 - self.dst_cx;
        let dy = y as f64 + 0.5 - self.dst_cy;
        (
            dx * self.cos - dy * self.sin + self.src_cx,
            dx * self.sin + dy * self.cos + self.src_cy,
        )
    }
}

/// Rotates about the mask center with nearest-neighbour inverse mapping.
/// The canvas grows to the rotated bounding box so nothing is clipped.
pub fn rotate_mask(m: &BinaryMask, degrees: f64) -> BinaryMask {
    if degrees == 0.0 {
        return m.clone();
    }
    let rot = Rotation::new(m.width(), m.height(), degrees);
    BinaryMask::from_fn(rot.out_width, rot.out_height, |x, y| {
        let (sx, sy) = rot.source(x, y);
        m.get_signed(sx.floor() as i64, sy.floor() as i64)
    })
}

/// True iff some pixel is set in both masks once `a` is placed at `a_at`
/// and `b` at `b_at` in a shared frame.
pub fn masks_overlap(a: &BinaryMask, a_at: (i64, i64), b: &BinaryMask, b_at: (i64, i64)) -> bool {
    let (Some(ba), Some(bb)) = (a.bbox(), b.bbox()) else {
        return false;
    };
    let x0 = (a_at.0 + ba.x as i64).max(b_at.0 + bb.x as i64);
    let y0 = (a_at.1 + ba.y as i64).max(b_at.1 + bb.y as i64);
    let x1 = (a_at.0 + ba.right() as i64).min(b_at.0 + bb.right() as i64);
    let y1 = (a_at.1 + ba.bottom() as i64).min(b_at.1 + bb.bottom() as i64);
    for y in y0..y1 {
        for x in x0..x1 {
            if a.get_signed(x - a_at.0, y - a_at.1) && b.get_signed(x - b_at.0, y - b_at.1) {
                return true;
            }
        }
    }
    false
}
