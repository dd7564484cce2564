// SPDX-License-Identifier: Apache-2.0

//! In-memory COCO detection/segmentation datasets.
//!
//! Loading goes through permissive wire structs so that a missing key is
//! reported by name and record instead of as a generic parse failure. Boxes
//! overshooting the image are clamped; annotations that cannot be repaired
//! are dropped and listed in [`LoadDiagnostics`].

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::mask::{rasterize_polygons, rle_decode, BinaryMask, RunLengthCounts};

/// Upper bound (exclusive) of the small class: 32².
pub const SMALL_MAX_AREA: f64 = 32.0 * 32.0;
/// Upper bound (exclusive) of the medium class: 96².
pub const MEDIUM_MAX_AREA: f64 = 96.0 * 96.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    /// Intervals are `[0, 32²)`, `[32², 96²)`, `[96², ∞)`.
    pub fn from_area(area: f64) -> SizeClass {
        if area < SMALL_MAX_AREA {
            SizeClass::Small
        } else if area < MEDIUM_MAX_AREA {
            SizeClass::Medium
        } else {
            SizeClass::Large
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }
}

/// Which area decides the size class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum SizeBasis {
    /// The annotation's `area` field (segmentation area in COCO).
    #[default]
    #[serde(rename = "mask")]
    MaskArea,
    /// `w * h` of the annotation's bbox.
    #[serde(rename = "bbox")]
    BBoxArea,
}

impl FromStr for SizeBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask" | "mask-area" => Ok(SizeBasis::MaskArea),
            "bbox" | "bbox-area" => Ok(SizeBasis::BBoxArea),
            other => Err(Error::InvalidConfig(format!(
                "unknown size basis `{other}` (expected `mask` or `bbox`)"
            ))),
        }
    }
}

impl std::fmt::Display for SizeBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SizeBasis::MaskArea => "mask",
            SizeBasis::BBoxArea => "bbox",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Segmentation {
    /// Flat `[x0, y0, x1, y1, ...]` lists.
    Polygons(Vec<Vec<f64>>),
    /// `compressed` remembers whether `counts` arrived as a COCO string so it
    /// is written back the same way.
    Rle {
        rle: RunLengthCounts,
        compressed: bool,
    },
}

impl Segmentation {
    /// Rasterizes onto a `width` x `height` grid. RLE masks carry their own
    /// size and are decoded as-is.
    pub fn to_mask(&self, width: u32, height: u32) -> Result<BinaryMask> {
        match self {
            Segmentation::Polygons(polys) => rasterize_polygons(polys, width, height),
            Segmentation::Rle { rle, .. } => rle_decode(rle),
        }
    }

    pub fn polygon_count(&self) -> Option<usize> {
        match self {
            Segmentation::Polygons(p) => Some(p.len()),
            Segmentation::Rle { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub area: f64,
    pub segmentation: Segmentation,
    pub iscrowd: bool,
}

impl AnnotationRecord {
    pub fn size_area(&self, basis: SizeBasis) -> f64 {
        match basis {
            SizeBasis::MaskArea => self.area,
            SizeBasis::BBoxArea => self.bbox.area(),
        }
    }
}

pub fn classify_size(a: &AnnotationRecord, basis: SizeBasis) -> SizeClass {
    SizeClass::from_area(a.size_area(basis))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supercategory: Option<String>,
}

/// A validated, indexed COCO dataset. Immutable once built.
#[derive(Debug, Clone)]
pub struct DatasetDescriptor {
    pub info: Option<Value>,
    pub licenses: Option<Value>,
    images: Vec<ImageRecord>,
    annotations: Vec<AnnotationRecord>,
    categories: Vec<Category>,
    image_pos: HashMap<u64, usize>,
    by_image: HashMap<u64, Vec<usize>>,
}

impl PartialEq for DatasetDescriptor {
    fn eq(&self, other: &Self) -> bool {
        self.info == other.info
            && self.licenses == other.licenses
            && self.images == other.images
            && self.annotations == other.annotations
            && self.categories == other.categories
    }
}

impl DatasetDescriptor {
    /// Builds the index and checks id uniqueness and references.
    pub fn new(
        images: Vec<ImageRecord>,
        annotations: Vec<AnnotationRecord>,
        categories: Vec<Category>,
    ) -> Result<Self> {
        let mut image_pos = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if img.width == 0 || img.height == 0 {
                return Err(Error::InvalidRecord {
                    record: format!("image {}", img.id),
                    reason: format!("dimensions {}x{}", img.width, img.height),
                });
            }
            if image_pos.insert(img.id, i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "image",
                    id: img.id,
                });
            }
        }
        let mut category_ids = HashSet::with_capacity(categories.len());
        for c in &categories {
            if !category_ids.insert(c.id) {
                return Err(Error::DuplicateId {
                    kind: "category",
                    id: c.id,
                });
            }
        }
        let mut ann_ids = HashSet::with_capacity(annotations.len());
        let mut by_image: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, a) in annotations.iter().enumerate() {
            if !ann_ids.insert(a.id) {
                return Err(Error::DuplicateId {
                    kind: "annotation",
                    id: a.id,
                });
            }
            if !image_pos.contains_key(&a.image_id) {
                return Err(Error::DanglingReference {
                    annotation: a.id,
                    kind: "image",
                    target: a.image_id,
                });
            }
            if !category_ids.contains(&a.category_id) {
                return Err(Error::DanglingReference {
                    annotation: a.id,
                    kind: "category",
                    target: a.category_id,
                });
            }
            by_image.entry(a.image_id).or_default().push(i);
        }
        Ok(DatasetDescriptor {
            info: None,
            licenses: None,
            images,
            annotations,
            categories,
            image_pos,
            by_image,
        })
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[AnnotationRecord] {
        &self.annotations
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.image_pos.get(&id).map(|&i| &self.images[i])
    }

    /// Annotations of one image, in dataset order.
    pub fn annotations_for(&self, image_id: u64) -> impl Iterator<Item = &AnnotationRecord> + '_ {
        self.by_image
            .get(&image_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.annotations[i])
    }

    pub fn max_image_id(&self) -> u64 {
        self.images.iter().map(|i| i.id).max().unwrap_or(0)
    }

    pub fn max_annotation_id(&self) -> u64 {
        self.annotations.iter().map(|a| a.id).max().unwrap_or(0)
    }

    /// True if the image has at least one annotation classified `Small`.
    pub fn has_small_object(&self, image_id: u64, basis: SizeBasis) -> bool {
        self.annotations_for(image_id)
            .any(|a| classify_size(a, basis) == SizeClass::Small)
    }

    pub(crate) fn with_metadata(mut self, info: Option<Value>, licenses: Option<Value>) -> Self {
        self.info = info;
        self.licenses = licenses;
        self
    }
}

/// Repairs applied while loading.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadDiagnostics {
    /// Annotation ids whose bbox or polygon was clamped into the image.
    pub clamped: Vec<u64>,
    /// Annotations dropped because clamping could not make them valid.
    pub rejected: Vec<RejectedAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedAnnotation {
    pub id: u64,
    pub reason: String,
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct WireDatasetIn {
    info: Option<Value>,
    licenses: Option<Value>,
    images: Option<Vec<WireImageIn>>,
    #[serde(default)]
    annotations: Vec<WireAnnotationIn>,
    #[serde(default)]
    categories: Vec<WireCategoryIn>,
}

#[derive(Deserialize)]
struct WireImageIn {
    id: Option<u64>,
    width: Option<u32>,
    height: Option<u32>,
    file_name: Option<String>,
}

#[derive(Deserialize)]
struct WireCategoryIn {
    id: Option<u64>,
    name: Option<String>,
    supercategory: Option<String>,
}

#[derive(Deserialize)]
struct WireAnnotationIn {
    id: Option<u64>,
    image_id: Option<u64>,
    category_id: Option<u64>,
    bbox: Option<[f64; 4]>,
    area: Option<f64>,
    segmentation: Option<WireSegmentation>,
    iscrowd: Option<WireFlag>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireFlag {
    Int(u64),
    Bool(bool),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WireSegmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { size: [u32; 2], counts: WireCounts },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WireCounts {
    Runs(Vec<u32>),
    Compressed(String),
}

#[derive(Serialize)]
struct WireDatasetOut<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    info: Option<&'a Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    licenses: Option<&'a Value>,
    images: Vec<WireImageOut<'a>>,
    annotations: Vec<WireAnnotationOut>,
    categories: &'a [Category],
}

#[derive(Serialize)]
struct WireImageOut<'a> {
    id: u64,
    width: u32,
    height: u32,
    file_name: &'a str,
}

#[derive(Serialize)]
struct WireAnnotationOut {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    area: f64,
    segmentation: WireSegmentation,
    iscrowd: u8,
}

fn segmentation_to_wire(s: &Segmentation) -> WireSegmentation {
    match s {
        Segmentation::Polygons(p) => WireSegmentation::Polygons(p.clone()),
        Segmentation::Rle { rle, compressed } => WireSegmentation::Rle {
            size: [rle.height, rle.width],
            counts: if *compressed {
                WireCounts::Compressed(rle.to_compressed_string())
            } else {
                WireCounts::Runs(rle.counts.clone())
            },
        },
    }
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .nth(line.saturating_sub(2))
        .map(|(i, _)| i + 1);
    let start = if line == 1 { 0 } else { line_start.unwrap_or(0) };
    (start + column.saturating_sub(1)).min(bytes.len())
}

fn missing(field: &'static str, record: String) -> Error {
    Error::MissingField { field, record }
}

/// Parses COCO JSON bytes into a descriptor.
pub fn parse_dataset(bytes: &[u8]) -> Result<(DatasetDescriptor, LoadDiagnostics)> {
    let wire: WireDatasetIn = serde_json::from_slice(bytes).map_err(|e| Error::MalformedJson {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let wire_images = wire
        .images
        .ok_or_else(|| missing("images", "dataset".into()))?;

    let mut images = Vec::with_capacity(wire_images.len());
    for (i, w) in wire_images.into_iter().enumerate() {
        let id = w.id.ok_or_else(|| missing("id", format!("image #{i}")))?;
        let record = || format!("image {id}");
        images.push(ImageRecord {
            id,
            width: w.width.ok_or_else(|| missing("width", record()))?,
            height: w.height.ok_or_else(|| missing("height", record()))?,
            file_name: w.file_name.ok_or_else(|| missing("file_name", record()))?,
        });
    }

    let mut categories = Vec::with_capacity(wire.categories.len());
    for (i, c) in wire.categories.into_iter().enumerate() {
        let id = c.id.ok_or_else(|| missing("id", format!("category #{i}")))?;
        categories.push(Category {
            id,
            name: c.name.ok_or_else(|| missing("name", format!("category {id}")))?,
            supercategory: c.supercategory,
        });
    }

    let dims: HashMap<u64, (u32, u32)> = images.iter().map(|i| (i.id, (i.width, i.height))).collect();
    let mut diagnostics = LoadDiagnostics::default();
    let mut annotations = Vec::with_capacity(wire.annotations.len());
    for (i, w) in wire.annotations.into_iter().enumerate() {
        let id = w.id.ok_or_else(|| missing("id", format!("annotation #{i}")))?;
        let record = || format!("annotation {id}");
        let image_id = w.image_id.ok_or_else(|| missing("image_id", record()))?;
        let category_id = w.category_id.ok_or_else(|| missing("category_id", record()))?;
        let bbox = w.bbox.ok_or_else(|| missing("bbox", record()))?;
        let area = w.area.ok_or_else(|| missing("area", record()))?;
        let segmentation = w.segmentation.ok_or_else(|| missing("segmentation", record()))?;
        let iscrowd = match w.iscrowd {
            None | Some(WireFlag::Int(0)) | Some(WireFlag::Bool(false)) => false,
            Some(_) => true,
        };
        let Some(&(width, height)) = dims.get(&image_id) else {
            return Err(Error::DanglingReference {
                annotation: id,
                kind: "image",
                target: image_id,
            });
        };
        match repair_annotation(bbox, area, segmentation, width, height) {
            Ok((bbox, segmentation, clamped)) => {
                if clamped {
                    log::warn!("annotation {id}: clamped into {width}x{height} image");
                    diagnostics.clamped.push(id);
                }
                annotations.push(AnnotationRecord {
                    id,
                    image_id,
                    category_id,
                    bbox,
                    area,
                    segmentation,
                    iscrowd,
                });
            }
            Err(reason) => {
                log::warn!("annotation {id}: rejected, {reason}");
                diagnostics.rejected.push(RejectedAnnotation { id, reason });
            }
        }
    }

    let d = DatasetDescriptor::new(images, annotations, categories)?
        .with_metadata(wire.info, wire.licenses);
    Ok((d, diagnostics))
}

type Repaired = (BBox, Segmentation, bool);

fn repair_annotation(
    bbox: [f64; 4],
    area: f64,
    segmentation: WireSegmentation,
    width: u32,
    height: u32,
) -> std::result::Result<Repaired, String> {
    if !bbox.iter().all(|v| v.is_finite()) {
        return Err(format!("non-finite bbox {bbox:?}"));
    }
    if !(area.is_finite() && area > 0.0) {
        return Err(format!("area {area}"));
    }
    let (w_img, h_img) = (width as f64, height as f64);
    let x0 = bbox[0].clamp(0.0, w_img);
    let y0 = bbox[1].clamp(0.0, h_img);
    let x1 = (bbox[0] + bbox[2]).clamp(0.0, w_img);
    let y1 = (bbox[1] + bbox[3]).clamp(0.0, h_img);
    if x1 - x0 <= 0.0 || y1 - y0 <= 0.0 {
        return Err(format!("bbox {bbox:?} is empty inside {width}x{height}"));
    }
    let mut clamped = x0 != bbox[0] || y0 != bbox[1] || x1 - x0 != bbox[2] || y1 - y0 != bbox[3];
    let fixed = if clamped {
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    } else {
        BBox::new(bbox[0], bbox[1], bbox[2], bbox[3])
    };

    let segmentation = match segmentation {
        WireSegmentation::Polygons(mut polys) => {
            for p in &mut polys {
                if p.len() < 6 || p.len() % 2 != 0 {
                    return Err(format!("polygon with {} coordinates", p.len()));
                }
                for v in p.iter_mut() {
                    if !v.is_finite() {
                        return Err("non-finite polygon coordinate".into());
                    }
                    if *v < 0.0 {
                        *v = 0.0;
                        clamped = true;
                    }
                }
            }
            Segmentation::Polygons(polys)
        }
        WireSegmentation::Rle { size, counts } => {
            let [h, w] = size;
            let (rle, compressed) = match counts {
                WireCounts::Runs(counts) => (
                    RunLengthCounts {
                        height: h,
                        width: w,
                        counts,
                    },
                    false,
                ),
                WireCounts::Compressed(s) => (
                    RunLengthCounts::from_compressed_string(&s, h, w).map_err(|e| e.to_string())?,
                    true,
                ),
            };
            rle.check().map_err(|e| e.to_string())?;
            Segmentation::Rle { rle, compressed }
        }
    };
    Ok((fixed, segmentation, clamped))
}

pub fn load_dataset_with_diagnostics(path: &Path) -> Result<(DatasetDescriptor, LoadDiagnostics)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&bytes)
}

pub fn load_dataset(path: &Path) -> Result<DatasetDescriptor> {
    load_dataset_with_diagnostics(path).map(|(d, _)| d)
}

pub fn dataset_to_json(d: &DatasetDescriptor) -> Vec<u8> {
    let wire = WireDatasetOut {
        info: d.info.as_ref(),
        licenses: d.licenses.as_ref(),
        images: d
            .images
            .iter()
            .map(|i| WireImageOut {
                id: i.id,
                width: i.width,
                height: i.height,
                file_name: &i.file_name,
            })
            .collect(),
        annotations: d
            .annotations
            .iter()
            .map(|a| WireAnnotationOut {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h],
                area: a.area,
                segmentation: segmentation_to_wire(&a.segmentation),
                iscrowd: a.iscrowd as u8,
            })
            .collect(),
        categories: &d.categories,
    };
    serde_json::to_vec(&wire).expect("dataset serialization is infallible")
}

pub fn save_dataset(d: &DatasetDescriptor, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&dataset_to_json(d))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AreaMismatch {
    pub annotation_id: u64,
    pub stored_area: f64,
    pub mask_area: u64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub images: usize,
    pub annotations: usize,
    pub load: LoadDiagnostics,
    pub area_mismatches: Vec<AreaMismatch>,
    pub unrasterizable: Vec<RejectedAnnotation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.load.rejected.is_empty()
            && self.area_mismatches.is_empty()
            && self.unrasterizable.is_empty()
    }
}

/// Relative tolerance between the stored `area` and the recomputed mask area.
pub const AREA_MISMATCH_TOLERANCE: f64 = 0.01;

/// Cross-checks stored areas against masks when `recompute_area` is set;
/// never rewrites the dataset.
pub fn validate_dataset(
    d: &DatasetDescriptor,
    load: LoadDiagnostics,
    recompute_area: bool,
) -> ValidationReport {
    let mut report = ValidationReport {
        images: d.images().len(),
        annotations: d.annotations().len(),
        load,
        ..Default::default()
    };
    if recompute_area {
        for a in d.annotations() {
            let img = d.image(a.image_id).expect("indexed");
            match a.segmentation.to_mask(img.width, img.height) {
                Ok(m) => {
                    let mask_area = m.area();
                    let rel = (mask_area as f64 - a.area).abs() / a.area;
                    if rel > AREA_MISMATCH_TOLERANCE {
                        report.area_mismatches.push(AreaMismatch {
                            annotation_id: a.id,
                            stored_area: a.area,
                            mask_area,
                            relative_error: rel,
                        });
                    }
                }
                Err(e) => report.unrasterizable.push(RejectedAnnotation {
                    id: a.id,
                    reason: e.to_string(),
                }),
            }
        }
    }
    report
}
