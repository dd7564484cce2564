// SPDX-License-Identifier: Apache-2.0

//! C ABI over the `smallobj` toolkit.
//!
//! Datasets are opaque handles released with [`smallobj_dataset_free`].
//! Every fallible call returns a [`SmallobjStatus`]; on failure a message is
//! available from [`smallobj_last_error`] on the same thread until the next
//! failing call. Strings and arrays handed out by the library must be freed
//! with [`smallobj_string_free`] and [`smallobj_counts_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use smallobj::anchors::{box_iou, dataset_statistics, AnchorConfig};
use smallobj::coco::{load_dataset, BBox, DatasetDescriptor, SizeBasis, SizeClass};
use smallobj::mask::RunLengthCounts;
use smallobj::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmallobjStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidArgument = 5,
    InvalidData = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallobjBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Opaque dataset handle.
pub struct SmallobjDataset {
    inner: DatasetDescriptor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SmallobjStatus {
    match e {
        Error::Io { .. } => SmallobjStatus::Io,
        Error::MalformedJson { .. }
        | Error::MissingField { .. }
        | Error::DanglingReference { .. }
        | Error::DuplicateId { .. }
        | Error::InvalidRecord { .. } => SmallobjStatus::Parse,
        Error::InvalidConfig(_) => SmallobjStatus::InvalidArgument,
        _ => SmallobjStatus::InvalidData,
    }
}

fn fail(status: SmallobjStatus, msg: impl Into<Vec<u8>>) -> SmallobjStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), SmallobjStatus>) -> SmallobjStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SmallobjStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(SmallobjStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: smallobj::Result<T>) -> Result<T, SmallobjStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, SmallobjStatus> {
    if p.is_null() {
        return Err(fail(SmallobjStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SmallobjStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn null_check<T>(p: *const T, name: &str) -> Result<(), SmallobjStatus> {
    if p.is_null() {
        Err(fail(SmallobjStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).expect("library strings contain no nul").into_raw()
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn smallobj_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a COCO annotation file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smallobj_dataset_load(path: *const c_char, out: *mut *mut SmallobjDataset) -> SmallobjStatus {
    guard(|| {
        null_check(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = lift(load_dataset(Path::new(path)))?;
        *out = Box::into_raw(Box::new(SmallobjDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`smallobj_dataset_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn smallobj_dataset_free(ds: *mut SmallobjDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn smallobj_dataset_counts(
    ds: *const SmallobjDataset,
    images: *mut usize,
    annotations: *mut usize,
) -> SmallobjStatus {
    guard(|| {
        null_check(ds, "dataset")?;
        null_check(images, "images")?;
        null_check(annotations, "annotations")?;
        let d = &(*ds).inner;
        *images = d.images().len();
        *annotations = d.annotations().len();
        Ok(())
    })
}

/// Per-size-class statistics as JSON with the default anchor layout.
/// `size_basis` is 0 for mask area, 1 for bbox area. A non-positive
/// `iou_threshold` keeps the default.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable. Free the result with
/// [`smallobj_string_free`].
#[no_mangle]
pub unsafe extern "C" fn smallobj_dataset_statistics_json(
    ds: *const SmallobjDataset,
    iou_threshold: f64,
    size_basis: u32,
    out: *mut *mut c_char,
) -> SmallobjStatus {
    guard(|| {
        null_check(ds, "dataset")?;
        null_check(out, "out")?;
        let basis = match size_basis {
            0 => SizeBasis::MaskArea,
            1 => SizeBasis::BBoxArea,
            other => return Err(fail(SmallobjStatus::InvalidArgument, format!("unknown size basis {other}"))),
        };
        let mut cfg = AnchorConfig::default();
        if iou_threshold > 0.0 {
            cfg.positive_iou = iou_threshold;
        }
        lift(cfg.validate())?;
        let stats = lift(dataset_statistics(&(*ds).inner, &cfg, basis))?;
        let json = serde_json::to_string(&stats).expect("stats serialize");
        *out = into_c_string(json);
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn smallobj_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// 0 small, 1 medium, 2 large; -1 for a NaN or negative area.
#[no_mangle]
pub extern "C" fn smallobj_classify_area(area: f64) -> i32 {
    if area.is_nan() || area < 0.0 {
        return -1;
    }
    match SizeClass::from_area(area) {
        SizeClass::Small => 0,
        SizeClass::Medium => 1,
        SizeClass::Large => 2,
    }
}

/// IoU of two `(x, y, w, h)` boxes; 0 if either pointer is null.
///
/// # Safety
/// Non-null pointers must be readable.
#[no_mangle]
pub unsafe extern "C" fn smallobj_box_iou(a: *const SmallobjBox, b: *const SmallobjBox) -> f64 {
    if a.is_null() || b.is_null() {
        return 0.0;
    }
    let (a, b) = (*a, *b);
    box_iou(&BBox::new(a.x, a.y, a.w, a.h), &BBox::new(b.x, b.y, b.w, b.h))
}

/// Column-major run counts to the compact COCO string form.
///
/// # Safety
/// `counts` must point to `len` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smallobj_rle_encode_string(
    counts: *const u32,
    len: usize,
    height: u32,
    width: u32,
    out: *mut *mut c_char,
) -> SmallobjStatus {
    guard(|| {
        null_check(out, "out")?;
        if len > 0 {
            null_check(counts, "counts")?;
        }
        let counts = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(counts, len).to_vec()
        };
        let rle = RunLengthCounts { height, width, counts };
        lift(rle.check())?;
        *out = into_c_string(rle.to_compressed_string());
        Ok(())
    })
}

/// Compact COCO string back to run counts.
///
/// # Safety
/// `s` must be nul-terminated; out pointers must be writable. Free the
/// array with [`smallobj_counts_free`].
#[no_mangle]
pub unsafe extern "C" fn smallobj_rle_decode_string(
    s: *const c_char,
    height: u32,
    width: u32,
    counts: *mut *mut u32,
    len: *mut usize,
) -> SmallobjStatus {
    guard(|| {
        null_check(counts, "counts")?;
        null_check(len, "len")?;
        let s = str_arg(s, "string")?;
        let rle = lift(RunLengthCounts::from_compressed_string(s, height, width))?;
        let boxed = rle.counts.into_boxed_slice();
        *len = boxed.len();
        *counts = Box::into_raw(boxed) as *mut u32;
        Ok(())
    })
}

/// # Safety
/// `counts` and `len` must come from [`smallobj_rle_decode_string`].
#[no_mangle]
pub unsafe extern "C" fn smallobj_counts_free(counts: *mut u32, len: usize) {
    if !counts.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(counts, len)));
    }
}
