// SPDX-License-Identifier: Apache-2.0

//! Dataset-level orchestration: offline oversampling, output composition,
//! and the synthetic corpus used for end-to-end checks.
//!
//! A build runs in three phases. Planning (work list, id ranges) is
//! sequential, the per-image augment/copy phase is a parallel map whose
//! results are collected in input order, and the final renumbering and JSON
//! writes are sequential again. Output never depends on the worker count.

use std::collections::HashMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, Rgb, RgbImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::{augment_image, select_candidates, AugmentationConfig, PasteRecord};
use crate::coco::{
    classify_size, save_dataset, AnnotationRecord, BBox, Category, DatasetDescriptor, ImageRecord, Segmentation,
    SizeBasis, SizeClass,
};
use crate::error::{Error, Result};
use crate::mask::{masks_overlap, rasterize_polygons, BinaryMask};
use crate::rng::{derive_seed, rng_from_seed};

pub const JPEG_QUALITY: u8 = 95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputMode {
    /// Each small-object image is replaced by its augmented version.
    Replace,
    /// The augmented version is written `ratio` times.
    AugOversample { ratio: u32 },
    /// Original and one augmented copy side by side.
    OriginalPlusAug,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub oversample_ratio: u32,
    pub mode: OutputMode,
    /// `None` means pure oversampling; `mode` is then ignored.
    pub aug: Option<AugmentationConfig>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub size_basis: SizeBasis,
    /// Worker threads; `None` uses the global rayon pool.
    pub jobs: Option<usize>,
}

impl PipelinePlan {
    pub fn oversample_only(output_dir: impl Into<PathBuf>, ratio: u32, seed: u64) -> Self {
        PipelinePlan {
            oversample_ratio: ratio,
            mode: OutputMode::Replace,
            aug: None,
            output_dir: output_dir.into(),
            seed,
            size_basis: SizeBasis::MaskArea,
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.oversample_ratio == 0 {
            return Err(Error::InvalidConfig("oversample ratio must be at least 1".into()));
        }
        if let OutputMode::AugOversample { ratio: 0 } = self.mode {
            return Err(Error::InvalidConfig("augmented duplication ratio must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidConfig("--jobs must be at least 1".into()));
        }
        if let Some(aug) = &self.aug {
            aug.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeCounts {
    pub small: u64,
    pub medium: u64,
    pub large: u64,
}

impl SizeCounts {
    pub fn of<'a>(annotations: impl IntoIterator<Item = &'a AnnotationRecord>, basis: SizeBasis) -> Self {
        let mut c = SizeCounts::default();
        for a in annotations {
            c.add(classify_size(a, basis));
        }
        c
    }

    fn add(&mut self, class: SizeClass) {
        match class {
            SizeClass::Small => self.small += 1,
            SizeClass::Medium => self.medium += 1,
            SizeClass::Large => self.large += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.small + self.medium + self.large
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub images_in: u64,
    pub images_out: u64,
    pub augmented_images_out: u64,
    pub annotations_in: SizeCounts,
    pub annotations_out: SizeCounts,
    /// Counted once per augmentation run, before any duplication.
    pub paste_attempts: u64,
    pub paste_successes: u64,
    pub paste_failures: u64,
    /// Pasted annotations in the output, duplicates included.
    pub pasted_instances_out: u64,
    pub pasted_out: SizeCounts,
    pub seed: u64,
    pub wall_time_secs: f64,
    pub effective_config: Value,
}

// ---------------------------------------------------------------------------
// Oversampling
// ---------------------------------------------------------------------------

/// `photo.jpg` -> `photo__os2.jpg`.
pub fn suffixed_file_name(name: &str, suffix: &str) -> String {
    match name.rfind('.') {
        Some(dot) if dot > name.rfind('/').map_or(0, |s| s + 1) => {
            format!("{}__{}{}", &name[..dot], suffix, &name[dot..])
        }
        _ => format!("{name}__{suffix}"),
    }
}

/// Where an image of an oversampled dataset came from.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Origin {
    image_id: u64,
    file_name: String,
    copy: u32,
}

struct Oversampled {
    dataset: DatasetDescriptor,
    origins: Vec<Origin>,
    ann_source: HashMap<u64, u64>,
}

fn oversample_inner(d: &DatasetDescriptor, ratio: u32, basis: SizeBasis) -> Result<Oversampled> {
    if ratio == 0 {
        return Err(Error::InvalidConfig("oversample ratio must be at least 1".into()));
    }
    let mut next_image = d.max_image_id() + 1;
    let mut next_ann = d.max_annotation_id() + 1;
    let mut images = Vec::new();
    let mut anns = Vec::new();
    let mut origins = Vec::new();
    let mut ann_source = HashMap::new();
    for img in d.images() {
        let copies = if d.has_small_object(img.id, basis) { ratio } else { 1 };
        for copy in 0..copies {
            let mut rec = img.clone();
            if copy > 0 {
                rec.id = next_image;
                next_image += 1;
                rec.file_name = suffixed_file_name(&img.file_name, &format!("os{copy}"));
            }
            for a in d.annotations_for(img.id) {
                let mut a = a.clone();
                let source = a.id;
                if copy > 0 {
                    a.id = next_ann;
                    next_ann += 1;
                    a.image_id = rec.id;
                }
                ann_source.insert(a.id, source);
                anns.push(a);
            }
            origins.push(Origin {
                image_id: img.id,
                file_name: img.file_name.clone(),
                copy,
            });
            images.push(rec);
        }
    }
    let dataset = DatasetDescriptor::new(images, anns, d.categories().to_vec())?
        .with_metadata(d.info.clone(), d.licenses.clone());
    Ok(Oversampled {
        dataset,
        origins,
        ann_source,
    })
}

/// Every image with a small object appears `ratio` times: the original, then
/// `ratio - 1` copies with fresh ids and `__osK` file names. Other images
/// appear once.
pub fn oversample_dataset(d: &DatasetDescriptor, ratio: u32, basis: SizeBasis) -> Result<DatasetDescriptor> {
    oversample_inner(d, ratio, basis).map(|o| o.dataset)
}

// ---------------------------------------------------------------------------
// Output building
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Original,
    Oversampled,
    Augmented,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageProvenance {
    pub image_id: u64,
    pub file_name: String,
    pub source_image_id: u64,
    pub seed: u64,
    pub pastes: Vec<PasteRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageIdEntry {
    pub id: u64,
    pub source_id: u64,
    pub kind: OutputKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnnotationIdEntry {
    pub id: u64,
    /// Input annotation this one copies, or the paste source for pastes.
    pub source_id: u64,
    pub pasted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdMap {
    pub images: Vec<ImageIdEntry>,
    pub annotations: Vec<AnnotationIdEntry>,
}

struct Unit {
    image: ImageRecord,
    origin: Origin,
    /// `(file name, augmented?)` in output order.
    outputs: Vec<(String, bool)>,
    first_new_id: u64,
}

struct UnitResult {
    images: Vec<(ImageRecord, OutputKind)>,
    annotations: Vec<Vec<AnnotationRecord>>,
    pastes: Vec<PasteRecord>,
    seed: u64,
    attempts: u64,
    failures: u64,
}

fn write_raster(img: &RgbImage, path: &Path) -> Result<()> {
    let format = ImageFormat::from_path(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let res = match format {
        ImageFormat::Jpeg => JpegEncoder::new_with_quality(&mut out, JPEG_QUALITY).encode_image(img),
        other => img.write_to(&mut out, other),
    };
    res.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn read_raster(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn run_unit(
    d: &DatasetDescriptor,
    unit: &Unit,
    aug: Option<&AugmentationConfig>,
    plan_seed: u64,
    image_root: &Path,
    images_out: &Path,
) -> Result<UnitResult> {
    let src_path = image_root.join(&unit.origin.file_name);
    let originals: Vec<AnnotationRecord> = d.annotations_for(unit.image.id).cloned().collect();
    let seed = derive_seed(plan_seed, unit.origin.image_id, unit.origin.copy as u64);
    let mut result = UnitResult {
        images: Vec::new(),
        annotations: Vec::new(),
        pastes: Vec::new(),
        seed,
        attempts: 0,
        failures: 0,
    };
    let mut augmented = None;
    if let Some(cfg) = aug.filter(|_| unit.outputs.iter().any(|o| o.1)) {
        let pixels = read_raster(&src_path)?;
        let out = augment_image(&pixels, &unit.image, &originals, cfg, seed, unit.first_new_id)?;
        result.attempts = out.attempts as u64;
        result.failures = out.failures as u64;
        result.pastes = out.provenance.clone();
        augmented = Some(out);
    }
    for (name, is_aug) in &unit.outputs {
        let dst = images_out.join(name);
        ensure_parent(&dst)?;
        let mut rec = unit.image.clone();
        rec.file_name = name.clone();
        match (&augmented, is_aug) {
            (Some(out), true) => {
                write_raster(&out.pixels, &dst)?;
                result.images.push((rec, OutputKind::Augmented));
                result.annotations.push(out.annotations.clone());
            }
            _ => {
                fs::copy(&src_path, &dst).map_err(|e| Error::io(&dst, e))?;
                let kind = if unit.origin.copy > 0 {
                    OutputKind::Oversampled
                } else {
                    OutputKind::Original
                };
                result.images.push((rec, kind));
                result.annotations.push(originals.clone());
            }
        }
    }
    Ok(result)
}

fn plan_units(
    d: &DatasetDescriptor,
    origins: &[Origin],
    plan: &PipelinePlan,
    aug: Option<&AugmentationConfig>,
) -> Vec<Unit> {
    let mut next_id = d.max_annotation_id() + 1;
    d.images()
        .iter()
        .zip(origins)
        .map(|(img, origin)| {
            let name = img.file_name.clone();
            let small = d.has_small_object(img.id, plan.size_basis);
            let outputs = match aug {
                Some(_) if small => match plan.mode {
                    OutputMode::Replace => vec![(name, true)],
                    OutputMode::OriginalPlusAug => {
                        let aug_name = suffixed_file_name(&name, "aug");
                        vec![(name, false), (aug_name, true)]
                    }
                    OutputMode::AugOversample { ratio } => (0..ratio)
                        .map(|k| {
                            let n = if k == 0 {
                                name.clone()
                            } else {
                                suffixed_file_name(&name, &format!("aug{k}"))
                            };
                            (n, true)
                        })
                        .collect(),
                },
                _ => vec![(name, false)],
            };
            let first_new_id = next_id;
            if let Some(cfg) = aug.filter(|_| small) {
                let n = select_candidates(d.annotations_for(img.id), cfg.size_basis).len();
                next_id += cfg.strategy.max_pastes(n) as u64;
            }
            Unit {
                image: img.clone(),
                origin: origin.clone(),
                outputs,
                first_new_id,
            }
        })
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).expect("report serialization is infallible");
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Output directory must be absent or empty; returns whether it was created.
fn prepare_output_dir(dir: &Path) -> Result<bool> {
    match fs::read_dir(dir) {
        Ok(mut entries) => {
            if entries.next().is_some() {
                return Err(Error::InvalidConfig(format!(
                    "output directory {} is not empty",
                    dir.display()
                )));
            }
            Ok(false)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Ok(true)
        }
        Err(e) => Err(Error::io(dir, e)),
    }
}

fn clear_dir(dir: &Path, created: bool) {
    let res = if created {
        fs::remove_dir_all(dir)
    } else {
        fs::read_dir(dir).and_then(|entries| {
            for e in entries.flatten() {
                let p = e.path();
                if p.is_dir() {
                    fs::remove_dir_all(&p)?;
                } else {
                    fs::remove_file(&p)?;
                }
            }
            Ok(())
        })
    };
    if let Err(e) = res {
        log::warn!("could not remove partial output {}: {e}", dir.display());
    }
}

/// Oversamples, augments per `plan.mode`, renumbers ids contiguously and
/// writes `annotations.json`, `images/`, `provenance.json`, `report.json`
/// and `idmap.json` under `plan.output_dir`. Source pixels are read from
/// `image_root`. On failure the partial output is removed.
pub fn build_output(
    d: &DatasetDescriptor,
    plan: &PipelinePlan,
    image_root: &Path,
    effective_config: Option<Value>,
) -> Result<(DatasetDescriptor, RunReport)> {
    plan.validate()?;
    let created = prepare_output_dir(&plan.output_dir)?;
    let res = match plan.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| build_inner(d, plan, image_root, effective_config))),
        None => build_inner(d, plan, image_root, effective_config),
    };
    if res.is_err() {
        clear_dir(&plan.output_dir, created);
    }
    res
}

fn build_inner(
    d: &DatasetDescriptor,
    plan: &PipelinePlan,
    image_root: &Path,
    effective_config: Option<Value>,
) -> Result<(DatasetDescriptor, RunReport)> {
    let start = Instant::now();
    let aug = plan.aug.clone().map(|mut a| {
        a.size_basis = plan.size_basis;
        a
    });
    let os = oversample_inner(d, plan.oversample_ratio, plan.size_basis)?;
    for img in d.images() {
        let p = image_root.join(&img.file_name);
        if !p.is_file() {
            return Err(Error::MissingImageFile(p));
        }
    }
    let units = plan_units(&os.dataset, &os.origins, plan, aug.as_ref());
    let images_out = plan.output_dir.join("images");
    fs::create_dir_all(&images_out).map_err(|e| Error::io(&images_out, e))?;

    let results: Vec<UnitResult> = units
        .par_iter()
        .map(|u| run_unit(&os.dataset, u, aug.as_ref(), plan.seed, image_root, &images_out))
        .collect::<Result<_>>()?;

    // contiguous renumbering in output order
    let mut images = Vec::new();
    let mut anns = Vec::new();
    let mut idmap = IdMap {
        images: Vec::new(),
        annotations: Vec::new(),
    };
    let mut provenance = Vec::new();
    let mut report = RunReport {
        images_in: d.images().len() as u64,
        images_out: 0,
        augmented_images_out: 0,
        annotations_in: SizeCounts::of(d.annotations(), plan.size_basis),
        annotations_out: SizeCounts::default(),
        paste_attempts: 0,
        paste_successes: 0,
        paste_failures: 0,
        pasted_instances_out: 0,
        pasted_out: SizeCounts::default(),
        seed: plan.seed,
        wall_time_secs: 0.0,
        effective_config: effective_config.unwrap_or_else(|| serde_json::to_value(plan).unwrap_or(Value::Null)),
    };
    for (unit, r) in units.iter().zip(&results) {
        report.paste_attempts += r.attempts;
        report.paste_failures += r.failures;
        report.paste_successes += r.pastes.len() as u64;
        let paste_src: HashMap<u64, u64> = r
            .pastes
            .iter()
            .map(|p| (p.new_annotation_id, p.source_annotation_id))
            .collect();
        for ((img, kind), img_anns) in r.images.iter().zip(&r.annotations) {
            let new_image_id = images.len() as u64 + 1;
            idmap.images.push(ImageIdEntry {
                id: new_image_id,
                source_id: unit.origin.image_id,
                kind: *kind,
            });
            let mut renumber = HashMap::new();
            for a in img_anns {
                let new_id = anns.len() as u64 + 1;
                renumber.insert(a.id, new_id);
                let (source_id, pasted) = match paste_src.get(&a.id) {
                    Some(&src) => (os.ann_source[&src], true),
                    None => (os.ann_source[&a.id], false),
                };
                if pasted {
                    report.pasted_instances_out += 1;
                    report.pasted_out.add(classify_size(a, plan.size_basis));
                }
                idmap.annotations.push(AnnotationIdEntry {
                    id: new_id,
                    source_id,
                    pasted,
                });
                let mut a = a.clone();
                a.id = new_id;
                a.image_id = new_image_id;
                anns.push(a);
            }
            if *kind == OutputKind::Augmented {
                report.augmented_images_out += 1;
                provenance.push(ImageProvenance {
                    image_id: new_image_id,
                    file_name: img.file_name.clone(),
                    source_image_id: unit.origin.image_id,
                    seed: r.seed,
                    pastes: r
                        .pastes
                        .iter()
                        .map(|p| PasteRecord {
                            source_annotation_id: os.ann_source[&p.source_annotation_id],
                            new_annotation_id: renumber[&p.new_annotation_id],
                            ..*p
                        })
                        .collect(),
                });
            }
            let mut rec = img.clone();
            rec.id = new_image_id;
            images.push(rec);
        }
    }
    let out = DatasetDescriptor::new(images, anns, d.categories().to_vec())?
        .with_metadata(d.info.clone(), d.licenses.clone());
    report.images_out = out.images().len() as u64;
    report.annotations_out = SizeCounts::of(out.annotations(), plan.size_basis);

    save_dataset(&out, &plan.output_dir.join("annotations.json"))?;
    write_json(&plan.output_dir.join("provenance.json"), &provenance)?;
    write_json(&plan.output_dir.join("idmap.json"), &idmap)?;
    report.wall_time_secs = start.elapsed().as_secs_f64();
    write_json(&plan.output_dir.join("report.json"), &report)?;
    log::info!(
        "{} -> {} images, {} pastes ({} failed placements)",
        report.images_in,
        report.images_out,
        report.paste_successes,
        report.paste_failures
    );
    Ok((out, report))
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Triangle];

    fn category_id(self) -> u64 {
        self as u64 + 1
    }

    fn name(self) -> &'static str {
        match self {
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Triangle => "triangle",
        }
    }

    fn polygon(self, x: f64, y: f64, w: f64, h: f64) -> Vec<f64> {
        match self {
            ShapeKind::Rectangle => vec![x, y, x + w, y, x + w, y + h, x, y + h],
            ShapeKind::Triangle => vec![x + w / 2.0, y, x + w, y + h, x, y + h],
            ShapeKind::Ellipse => {
                const VERTICES: usize = 24;
                let (cx, cy, rx, ry) = (x + w / 2.0, y + h / 2.0, w / 2.0, h / 2.0);
                (0..VERTICES)
                    .flat_map(|i| {
                        let t = i as f64 * std::f64::consts::TAU / VERTICES as f64;
                        [cx + rx * t.cos(), cy + ry * t.sin()]
                    })
                    .collect()
            }
        }
    }
}

/// Layout of a generated corpus. Side ranges are bbox side lengths per size
/// class; a drawn shape is kept only if its rasterized area falls in the
/// requested class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub images: u32,
    pub width: u32,
    pub height: u32,
    pub small: u32,
    pub medium: u32,
    pub large: u32,
    pub small_side: (u32, u32),
    pub medium_side: (u32, u32),
    pub large_side: (u32, u32),
    pub shapes: Vec<ShapeKind>,
    pub max_attempts: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            images: 20,
            width: 256,
            height: 256,
            small: 3,
            medium: 0,
            large: 1,
            small_side: (6, 28),
            medium_side: (48, 90),
            large_side: (140, 200),
            shapes: ShapeKind::ALL.to_vec(),
            max_attempts: 500,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.width < 64 || self.height < 64 {
            return Err(Error::InfeasibleSpec(format!(
                "images must be at least 64x64, got {}x{}",
                self.width, self.height
            )));
        }
        if self.shapes.is_empty() {
            return Err(Error::InfeasibleSpec("no shapes to draw".into()));
        }
        for (name, count, (lo, hi)) in [
            ("small", self.small, self.small_side),
            ("medium", self.medium, self.medium_side),
            ("large", self.large, self.large_side),
        ] {
            if count == 0 {
                continue;
            }
            if lo == 0 || lo > hi {
                return Err(Error::InfeasibleSpec(format!("{name} side range ({lo}, {hi}) is empty")));
            }
            if lo > self.width || lo > self.height {
                return Err(Error::InfeasibleSpec(format!(
                    "{name} objects of side {lo} do not fit in {}x{}",
                    self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

fn random_color(rng: &mut impl Rng) -> Rgb<u8> {
    Rgb([rng.random(), rng.random(), rng.random()])
}

fn distinct_color(rng: &mut impl Rng, from: Rgb<u8>) -> Rgb<u8> {
    loop {
        let c = random_color(rng);
        let diff: i32 = (0..3).map(|i| (c[i] as i32 - from[i] as i32).abs()).sum();
        if diff >= 120 {
            return c;
        }
    }
}

fn synth_image(spec: &SyntheticSpec, seed: u64, image_id: u64) -> Result<(RgbImage, Vec<AnnotationRecord>)> {
    let mut rng = rng_from_seed(derive_seed(seed, image_id, 0));
    let (w, h) = (spec.width, spec.height);
    let bg = random_color(&mut rng);
    let mut pixels = RgbImage::from_pixel(w, h, bg);
    let mut occupied = BinaryMask::new(w, h);
    let mut anns = Vec::new();
    // big shapes first while the canvas is still empty
    let requests = [
        (SizeClass::Large, spec.large, spec.large_side),
        (SizeClass::Medium, spec.medium, spec.medium_side),
        (SizeClass::Small, spec.small, spec.small_side),
    ];
    for (class, count, (lo, hi)) in requests {
        for _ in 0..count {
            let mut placed = false;
            for _ in 0..spec.max_attempts {
                let kind = spec.shapes[rng.random_range(0..spec.shapes.len())];
                let sw = rng.random_range(lo..=hi.min(w));
                let sh = rng.random_range(lo..=hi.min(h));
                let x = rng.random_range(0..=w - sw);
                let y = rng.random_range(0..=h - sh);
                let poly = kind.polygon(x as f64, y as f64, sw as f64, sh as f64);
                let mask = rasterize_polygons(std::slice::from_ref(&poly), w, h)?;
                let area = mask.area();
                if area == 0 || SizeClass::from_area(area as f64) != class {
                    continue;
                }
                if masks_overlap(&mask, (0, 0), &occupied, (0, 0)) {
                    continue;
                }
                let color = distinct_color(&mut rng, bg);
                for (px, py) in mask.iter_set() {
                    pixels.put_pixel(px, py, color);
                }
                occupied.union_at(&mask, 0, 0);
                let b = mask.bbox().expect("non-empty");
                anns.push(AnnotationRecord {
                    id: 0,
                    image_id,
                    category_id: kind.category_id(),
                    bbox: BBox::new(b.x as f64, b.y as f64, b.w as f64, b.h as f64),
                    area: area as f64,
                    segmentation: Segmentation::Polygons(vec![poly]),
                    iscrowd: false,
                });
                placed = true;
                break;
            }
            if !placed {
                return Err(Error::InfeasibleSpec(format!(
                    "could not place a {} object in image {image_id} after {} attempts",
                    class.name(),
                    spec.max_attempts
                )));
            }
        }
    }
    Ok((pixels, anns))
}

/// Writes `annotations.json` and `images/synth_NNNN.png` under `out_dir`
/// and returns the dataset. Each object's area and bbox are taken from its
/// rasterized polygon, so they agree exactly with the mask.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, seed: u64, out_dir: &Path) -> Result<DatasetDescriptor> {
    spec.validate()?;
    let rendered: Vec<(RgbImage, Vec<AnnotationRecord>)> = (1..=spec.images as u64)
        .into_par_iter()
        .map(|id| synth_image(spec, seed, id))
        .collect::<Result<_>>()?;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut images = Vec::new();
    let mut anns = Vec::new();
    for (i, (pixels, objs)) in rendered.iter().enumerate() {
        let id = i as u64 + 1;
        let file_name = format!("synth_{id:04}.png");
        write_raster(pixels, &images_dir.join(&file_name))?;
        images.push(ImageRecord {
            id,
            width: spec.width,
            height: spec.height,
            file_name,
        });
        for a in objs {
            let mut a = a.clone();
            a.id = anns.len() as u64 + 1;
            anns.push(a);
        }
    }
    let categories = ShapeKind::ALL
        .iter()
        .map(|k| Category {
            id: k.category_id(),
            name: k.name().to_string(),
            supercategory: Some("shape".into()),
        })
        .collect();
    let d = DatasetDescriptor::new(images, anns, categories)?;
    save_dataset(&d, &out_dir.join("annotations.json"))?;
    Ok(d)
}
