// SPDX-License-Identifier: Apache-2.0

//! Layered run configuration: a TOML file overlaid by command-line flags.
//!
//! Every field is optional in both layers; [`ConfigFile::overlay`] lets the
//! higher layer win field by field and the `*_config` resolvers fill in the
//! defaults. Unknown keys are rejected.
//!
//! ```toml
//! seed = 42
//! jobs = 8
//! size_basis = "mask"          # or "bbox"
//!
//! [anchors]
//! strides = [4, 8, 16, 32, 64]
//! base_sizes = [32, 64, 128, 256, 512]
//! ratios = [1.0, 0.5, 2.0]
//! iou_threshold = 0.7
//! force_argmax = true
//! resize = { short_side = 800, max_side = 1333 }
//!
//! [augment]
//! mode = "original+aug"        # replace | aug-oversample:N | original+aug
//! strategy = "all"             # single | multiple | all
//! copies = 1
//! object_fraction = 0.5
//! scale_range = [0.8, 1.2]
//! rotation_range = [-15.0, 15.0]
//! border_margin = 5
//! overlap = "reject"           # or "allow"
//! overlap_granularity = "mask" # or "bbox"
//! blend = "hard"               # or "gaussian:K"
//! max_placement_attempts = 100
//! oversample_ratio = 1
//!
//! [synth]
//! images = 20
//! width = 256
//! height = 256
//! small = 3
//! medium = 0
//! large = 1
//! ```

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::anchors::{AnchorConfig, ImageResize, DEFAULT_ASPECT_RATIOS, DEFAULT_BASE_SIZES, DEFAULT_STRIDES};
use crate::augment::{AugmentationConfig, Blend, OverlapGranularity, OverlapPolicy, Strategy};
use crate::coco::SizeBasis;
use crate::error::{Error, Result};
use crate::pipeline::{OutputMode, SyntheticSpec};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub size_basis: Option<SizeBasis>,
    #[serde(default)]
    pub anchors: AnchorSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSection {
    pub strides: Option<Vec<f64>>,
    pub base_sizes: Option<Vec<f64>>,
    pub ratios: Option<Vec<f64>>,
    pub iou_threshold: Option<f64>,
    pub force_argmax: Option<bool>,
    pub resize: Option<ResizeSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResizeSection {
    pub short_side: f64,
    pub max_side: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub mode: Option<String>,
    pub strategy: Option<String>,
    pub copies: Option<u32>,
    pub object_fraction: Option<f64>,
    pub scale_range: Option<[f64; 2]>,
    pub rotation_range: Option<[f64; 2]>,
    pub border_margin: Option<u32>,
    pub overlap: Option<OverlapPolicy>,
    pub overlap_granularity: Option<OverlapGranularity>,
    pub blend: Option<String>,
    pub max_placement_attempts: Option<u32>,
    pub oversample_ratio: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub images: Option<u32>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub small: Option<u32>,
    pub medium: Option<u32>,
    pub large: Option<u32>,
}

/// Fields of `hi` that are set replace those of `lo`.
trait Overlay {
    fn overlay(self, lo: Self) -> Self;
}

macro_rules! overlay_fields {
    ($ty:ty { $($f:ident),* $(,)? }) => {
        impl Overlay for $ty {
            fn overlay(self, lo: Self) -> Self {
                Self { $($f: self.$f.or(lo.$f)),* }
            }
        }
    };
}

overlay_fields!(AnchorSection { strides, base_sizes, ratios, iou_threshold, force_argmax, resize });
overlay_fields!(AugmentSection {
    mode,
    strategy,
    copies,
    object_fraction,
    scale_range,
    rotation_range,
    border_margin,
    overlap,
    overlap_granularity,
    blend,
    max_placement_attempts,
    oversample_ratio,
});
overlay_fields!(SynthSection { images, width, height, small, medium, large });

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// `self` wins wherever it sets a field.
    pub fn overlay(self, lo: ConfigFile) -> ConfigFile {
        ConfigFile {
            seed: self.seed.or(lo.seed),
            jobs: self.jobs.or(lo.jobs),
            size_basis: self.size_basis.or(lo.size_basis),
            anchors: self.anchors.overlay(lo.anchors),
            augment: self.augment.overlay(lo.augment),
            synth: self.synth.overlay(lo.synth),
        }
    }

    pub fn size_basis(&self) -> SizeBasis {
        self.size_basis.unwrap_or_default()
    }

    pub fn anchor_config(&self) -> Result<AnchorConfig> {
        let a = &self.anchors;
        let strides = a.strides.clone().unwrap_or_else(|| DEFAULT_STRIDES.to_vec());
        let bases = a.base_sizes.clone().unwrap_or_else(|| DEFAULT_BASE_SIZES.to_vec());
        let defaults = AnchorConfig::default();
        let cfg = AnchorConfig {
            levels: AnchorConfig::from_parts(&strides, &bases)?,
            aspect_ratios: a.ratios.clone().unwrap_or_else(|| DEFAULT_ASPECT_RATIOS.to_vec()),
            positive_iou: a.iou_threshold.unwrap_or(defaults.positive_iou),
            force_argmax: a.force_argmax.unwrap_or(defaults.force_argmax),
            resize: a.resize.map(|r| ImageResize {
                short_side: r.short_side,
                max_side: r.max_side,
            }),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn augmentation_config(&self) -> Result<AugmentationConfig> {
        let a = &self.augment;
        let d = AugmentationConfig::default();
        let copies = a.copies.unwrap_or(1);
        let strategy = match a.strategy.as_deref().unwrap_or("all") {
            "single" => Strategy::SingleObject { copies },
            "multiple" => Strategy::MultipleObjects {
                object_fraction: a.object_fraction.unwrap_or(0.5),
                copies,
            },
            "all" => Strategy::AllObjects { copies },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown strategy `{other}` (expected single, multiple or all)"
                )))
            }
        };
        let cfg = AugmentationConfig {
            strategy,
            scale_range: a.scale_range.map_or(d.scale_range, |[lo, hi]| (lo, hi)),
            rotation_range: a.rotation_range.map_or(d.rotation_range, |[lo, hi]| (lo, hi)),
            border_margin: a.border_margin.unwrap_or(d.border_margin),
            overlap_policy: a.overlap.unwrap_or(d.overlap_policy),
            overlap_granularity: a.overlap_granularity.unwrap_or(d.overlap_granularity),
            blend: a.blend.as_deref().map_or(Ok(d.blend), parse_blend)?,
            max_placement_attempts: a.max_placement_attempts.unwrap_or(d.max_placement_attempts),
            size_basis: self.size_basis(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn output_mode(&self) -> Result<OutputMode> {
        self.augment
            .mode
            .as_deref()
            .map_or(Ok(OutputMode::OriginalPlusAug), parse_mode)
    }

    pub fn oversample_ratio(&self) -> u32 {
        self.augment.oversample_ratio.unwrap_or(1)
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let s = &self.synth;
        let d = SyntheticSpec::default();
        SyntheticSpec {
            images: s.images.unwrap_or(d.images),
            width: s.width.unwrap_or(d.width),
            height: s.height.unwrap_or(d.height),
            small: s.small.unwrap_or(d.small),
            medium: s.medium.unwrap_or(d.medium),
            large: s.large.unwrap_or(d.large),
            ..d
        }
    }
}

/// `hard` or `gaussian:K`.
pub fn parse_blend(s: &str) -> Result<Blend> {
    match s.split_once(':') {
        None if s == "hard" => Ok(Blend::Hard),
        Some(("gaussian", k)) => k
            .parse()
            .map(|kernel| Blend::GaussianEdge { kernel })
            .map_err(|_| Error::InvalidConfig(format!("bad blur kernel `{k}`"))),
        _ => Err(Error::InvalidConfig(format!(
            "unknown blend `{s}` (expected hard or gaussian:K)"
        ))),
    }
}

/// `replace`, `aug-oversample:N` or `original+aug`.
pub fn parse_mode(s: &str) -> Result<OutputMode> {
    match s.split_once(':') {
        None if s == "replace" => Ok(OutputMode::Replace),
        None if s == "original+aug" => Ok(OutputMode::OriginalPlusAug),
        Some(("aug-oversample", r)) => r
            .parse()
            .ok()
            .filter(|&ratio: &u32| ratio >= 1)
            .map(|ratio| OutputMode::AugOversample { ratio })
            .ok_or_else(|| Error::InvalidConfig(format!("bad duplication ratio `{r}`"))),
        _ => Err(Error::InvalidConfig(format!(
            "unknown mode `{s}` (expected replace, aug-oversample:N or original+aug)"
        ))),
    }
}

/// Comma-separated list of numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            f64::from_str(t.trim()).map_err(|_| Error::InvalidConfig(format!("`{t}` is not a number")))
        })
        .collect()
}

/// Fully resolved settings, echoed into run reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveConfig {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub size_basis: SizeBasis,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchors: Option<AnchorConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentationConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<OutputMode>,
    pub oversample_ratio: u32,
}
