//! C interface to leafnet checkpoints: load a model, inspect it, classify
//! images, and compute ROC AUC.
//!
//! Every function returns a [`LeafnetStatus`]. On failure a description is
//! kept per thread and can be fetched with [`leafnet_last_error_message`].
//! Panics never cross the boundary; they surface as `LEAFNET_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use image::RgbImage;
use leafnet::metrics::roc_curve;
use leafnet::model::Model;
use leafnet::train::{load_checkpoint, predict, predict_image, save_checkpoint, Checkpoint, Prediction};
use leafnet::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Corrupt = 4,
    Ingestion = 5,
    Dimension = 6,
    Config = 7,
    NonFinite = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

impl From<&Error> for LeafnetStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension { .. } => LeafnetStatus::Dimension,
            Error::Parameter(_) => LeafnetStatus::InvalidArgument,
            Error::Config(_) => LeafnetStatus::Config,
            Error::NonFinite { .. } => LeafnetStatus::NonFinite,
            Error::Ingestion { .. } | Error::Image(_) => LeafnetStatus::Ingestion,
            Error::Corrupt(_) => LeafnetStatus::Corrupt,
            Error::Io(_) | Error::Csv(_) => LeafnetStatus::Io,
            Error::Json(_) => LeafnetStatus::Corrupt,
        }
    }
}

/// A loaded checkpoint ready for inference. Opaque to C callers.
pub struct LeafnetModel {
    checkpoint: Checkpoint,
    model: Model,
    /// NUL-terminated copies handed out by `leafnet_model_class_name`.
    class_names: Vec<Vec<u8>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut buf = e.borrow_mut();
        buf.clear();
        buf.extend(msg.bytes().filter(|&b| b != 0));
    });
}

struct Failure(LeafnetStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(LeafnetStatus::from(&e), e.to_string())
    }
}

fn fail<T>(status: LeafnetStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LeafnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LeafnetStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LeafnetStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(LeafnetStatus::NullPointer, format!("{what} is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(LeafnetStatus::InvalidArgument, format!("{what} is not valid UTF-8")),
    }
}

unsafe fn model_ref<'a>(m: *const LeafnetModel) -> Result<&'a LeafnetModel, Failure> {
    m.as_ref()
        .ok_or_else(|| Failure(LeafnetStatus::NullPointer, "model handle is null".into()))
}

unsafe fn write_prediction(
    p: &Prediction,
    probs: *mut f32,
    probs_len: usize,
    class_index: *mut usize,
) -> Result<(), Failure> {
    if !probs.is_null() {
        if probs_len < p.probabilities.len() {
            return fail(
                LeafnetStatus::BufferTooSmall,
                format!("probability buffer holds {probs_len}, need {}", p.probabilities.len()),
            );
        }
        ptr::copy_nonoverlapping(p.probabilities.as_ptr(), probs, p.probabilities.len());
    }
    if !class_index.is_null() {
        *class_index = p.class_index;
    }
    Ok(())
}

/// Load a checkpoint file. On success `*out` owns a handle that must be
/// released with `leafnet_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn leafnet_model_load(path: *const c_char, out: *mut *mut LeafnetModel) -> LeafnetStatus {
    guard(|| {
        if out.is_null() {
            return fail(LeafnetStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let checkpoint = load_checkpoint(&path_arg(path, "path")?)?;
        let model = checkpoint.model()?;
        let class_names = checkpoint
            .class_names
            .iter()
            .map(|n| n.bytes().filter(|&b| b != 0).chain([0]).collect())
            .collect();
        *out = Box::into_raw(Box::new(LeafnetModel {
            checkpoint,
            model,
            class_names,
        }));
        Ok(())
    })
}

/// Release a handle from `leafnet_model_load`. Null is ignored.
///
/// # Safety
/// `model` must come from `leafnet_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn leafnet_model_free(model: *mut LeafnetModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn leafnet_model_num_classes(model: *const LeafnetModel, out: *mut usize) -> LeafnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return fail(LeafnetStatus::NullPointer, "out is null");
        }
        *out = m.model.num_classes();
        Ok(())
    })
}

/// Pointer to the NUL-terminated name of class `index`, valid until the
/// handle is freed.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn leafnet_model_class_name(
    model: *const LeafnetModel,
    index: usize,
    out: *mut *const c_char,
) -> LeafnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return fail(LeafnetStatus::NullPointer, "out is null");
        }
        match m.class_names.get(index) {
            Some(name) => {
                *out = name.as_ptr().cast();
                Ok(())
            }
            None => fail(
                LeafnetStatus::InvalidArgument,
                format!("class index {index} out of range 0..{}", m.class_names.len()),
            ),
        }
    })
}

/// Channels, height and width the model expects. Any output may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn leafnet_model_input_shape(
    model: *const LeafnetModel,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> LeafnetStatus {
    guard(|| {
        let s = model_ref(model)?.model.input_shape();
        for (p, v) in [(channels, s.c), (height, s.h), (width, s.w)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Total and trainable parameter counts. Either output may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn leafnet_model_count_parameters(
    model: *const LeafnetModel,
    total: *mut usize,
    trainable: *mut usize,
) -> LeafnetStatus {
    guard(|| {
        let (t, tr) = model_ref(model)?.model.count_parameters();
        if !total.is_null() {
            *total = t;
        }
        if !trainable.is_null() {
            *trainable = tr;
        }
        Ok(())
    })
}

/// Classify a PNG or JPEG file. `probs` (may be null) receives one
/// probability per class; `class_index` (may be null) the arg-max class.
///
/// # Safety
/// `model` must be a live handle, `image_path` NUL-terminated, `probs` valid
/// for `probs_len` floats when non-null.
#[no_mangle]
pub unsafe extern "C" fn leafnet_model_predict_file(
    model: *const LeafnetModel,
    image_path: *const c_char,
    probs: *mut f32,
    probs_len: usize,
    class_index: *mut usize,
) -> LeafnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = path_arg(image_path, "image_path")?;
        let p = predict(&m.model, &m.checkpoint.params, &m.checkpoint.class_names, &path)?;
        write_prediction(&p, probs, probs_len, class_index)
    })
}

/// Classify interleaved 8-bit RGB pixels, row-major, `width * height * 3`
/// bytes. The image is resized to the model input.
///
/// # Safety
/// `pixels` must be valid for `width * height * 3` bytes; other pointers as
/// in `leafnet_model_predict_file`.
#[no_mangle]
pub unsafe extern "C" fn leafnet_model_predict_rgb(
    model: *const LeafnetModel,
    pixels: *const u8,
    width: usize,
    height: usize,
    probs: *mut f32,
    probs_len: usize,
    class_index: *mut usize,
) -> LeafnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        if pixels.is_null() {
            return fail(LeafnetStatus::NullPointer, "pixels is null");
        }
        let (Ok(w), Ok(h)) = (u32::try_from(width), u32::try_from(height)) else {
            return fail(LeafnetStatus::InvalidArgument, "image dimensions too large");
        };
        let Some(len) = width.checked_mul(height).and_then(|n| n.checked_mul(3)) else {
            return fail(LeafnetStatus::InvalidArgument, "image dimensions too large");
        };
        if len == 0 {
            return fail(LeafnetStatus::InvalidArgument, "image is empty");
        }
        let data = std::slice::from_raw_parts(pixels, len).to_vec();
        let img = RgbImage::from_raw(w, h, data).expect("buffer length matches dimensions");
        let p = predict_image(&m.model, &m.checkpoint.params, &m.checkpoint.class_names, &img)?;
        write_prediction(&p, probs, probs_len, class_index)
    })
}

/// Write the model back out as a checkpoint file.
///
/// # Safety
/// `model` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn leafnet_model_save(model: *const LeafnetModel, path: *const c_char) -> LeafnetStatus {
    guard(|| {
        let m = model_ref(model)?;
        save_checkpoint(&path_arg(path, "path")?, &m.checkpoint)?;
        Ok(())
    })
}

/// Area under the ROC curve for `n` scores; `positive[i]` is nonzero for
/// positive examples. Both classes must be present.
///
/// # Safety
/// `scores` and `positive` must be valid for `n` elements, `auc` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn leafnet_roc_auc(
    scores: *const f64,
    positive: *const u8,
    n: usize,
    auc: *mut f64,
) -> LeafnetStatus {
    guard(|| {
        if scores.is_null() || positive.is_null() || auc.is_null() {
            return fail(LeafnetStatus::NullPointer, "scores, positive and auc must be non-null");
        }
        let s = std::slice::from_raw_parts(scores, n);
        let p: Vec<bool> = std::slice::from_raw_parts(positive, n).iter().map(|&b| b != 0).collect();
        *auc = roc_curve(s, &p)?.auc;
        Ok(())
    })
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to fit). Returns the buffer size needed for the full message,
/// including the terminator. `buf` may be null to query the size.
///
/// # Safety
/// `buf` must be valid for `len` bytes when non-null.
#[no_mangle]
pub unsafe extern "C" fn leafnet_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}
