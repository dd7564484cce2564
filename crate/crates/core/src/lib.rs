// SPDX-License-Identifier: Apache-2.0

//! Small-object analysis and augmentation for COCO-format datasets.
//!
//! - [`coco`]: load, validate, save and size-classify datasets.
//! - [`mask`]: binary-mask geometry (rasterization, RLE, transforms, overlap).
//! - [`anchors`]: FPN anchor generation, RPN-style matching and per-size-class
//!   matching statistics.
//! - [`augment`]: copy-paste augmentation of small objects within an image.
//! - [`pipeline`]: oversampling, output composition and dataset writing.
//! - [`config`]: the merged CLI configuration file.

pub mod anchors;
pub mod augment;
pub mod coco;
pub mod config;
pub mod error;
pub mod mask;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
