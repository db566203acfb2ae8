//! C interface to `relprop`.
//!
//! Every fallible function returns a [`RelpropStatus`]. On failure the
//! message is kept per thread and can be read with
//! [`relprop_last_error_message`]. Models and maps are opaque handles that the
//! caller releases with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use relprop::fv::{load_fv_model, FvModel};
use relprop::image::{write_ppm, GrayImage};
use relprop::{explain_fv, explain_nn, load_model, render, ColorMap, CutoffConfig, Error, Mode, Model, Rule, Tensor};

/// Cut-off value meaning "no flat layers".
pub const RELPROP_CUTOFF_NONE: i32 = -1;
/// Cut-off value meaning "flat up to the largest receptive field".
pub const RELPROP_CUTOFF_RECEPTIVE_FIELD: i32 = -2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelpropStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    Numerical = 6,
    Data = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelpropRuleKind {
    Basic = 0,
    Epsilon = 1,
    AlphaBeta = 2,
    Flat = 3,
    WSquared = 4,
}

/// Rule selection. `epsilon` is read only for the epsilon rule, `alpha` and
/// `beta` only for the alpha-beta rule.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RelpropRule {
    pub kind: RelpropRuleKind,
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelpropMode {
    Fine = 0,
    Coarse = 1,
}

/// Opaque network model.
pub struct RelpropNnModel(Model);

/// Opaque Fisher Vector model.
pub struct RelpropFvModel(FvModel);

/// Opaque pixel relevance map, `height x width`, row major.
pub struct RelpropMap(Tensor);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> RelpropStatus {
    match err {
        Error::Layer { source, .. } => status_of(source),
        Error::Io(_) => RelpropStatus::Io,
        Error::Parse { .. } | Error::Unsupported(_) => RelpropStatus::Parse,
        Error::Shape(_) => RelpropStatus::Shape,
        Error::Config(_) | Error::Validation(_) => RelpropStatus::InvalidArgument,
        Error::ZeroDenominator { .. }
        | Error::ZeroWeightColumn { .. }
        | Error::EmptyField { .. }
        | Error::NonFinite(_) => RelpropStatus::Numerical,
        Error::RankDeficient { .. } | Error::InsufficientData(_) => RelpropStatus::Data,
    }
}

struct Failure(RelpropStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(RelpropStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(RelpropStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any error and turns panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RelpropStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RelpropStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            RelpropStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if data.is_null() {
        return if len == 0 { Ok(&[]) } else { Err(null(what)) };
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn relprop_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn relprop_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn relprop_nn_model_load(path: *const c_char, out: *mut *mut RelpropNnModel) -> RelpropStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let model = load_model(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(RelpropNnModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `relprop_nn_model_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn relprop_nn_model_free(model: *mut RelpropNnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the input shape (channels, height, width) and class count.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn relprop_nn_model_shape(
    model: *const RelpropNnModel,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
    classes: *mut usize,
) -> RelpropStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let &[c, h, w] = m.input_shape() else {
            return Err(Failure(RelpropStatus::Shape, format!("model input {:?} is not CxHxW", m.input_shape())));
        };
        *out_arg(channels, "channels")? = c;
        *out_arg(height, "height")? = h;
        *out_arg(width, "width")? = w;
        *out_arg(classes, "classes")? = m.num_classes();
        Ok(())
    })
}

fn nn_input(m: &Model, input: &[f64]) -> Result<Tensor, Failure> {
    let need: usize = m.input_shape().iter().product();
    if input.len() != need {
        return Err(Failure(
            RelpropStatus::Shape,
            format!("input has {} values, the model expects {need}", input.len()),
        ));
    }
    Ok(Tensor::new(m.input_shape().to_vec(), input.to_vec())?)
}

/// Class scores for a `channels x height x width` input.
///
/// # Safety
/// `input` must hold `input_len` values and `scores` room for `scores_len`.
#[no_mangle]
pub unsafe extern "C" fn relprop_nn_forward(
    model: *const RelpropNnModel,
    input: *const f64,
    input_len: usize,
    scores: *mut f64,
    scores_len: usize,
) -> RelpropStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let x = nn_input(m, slice_arg(input, input_len, "input")?)?;
        let (out, _) = m.forward(&x)?;
        if scores_len != out.len() {
            return Err(Failure(
                RelpropStatus::Shape,
                format!("scores buffer has {scores_len} slots, the model has {} classes", out.len()),
            ));
        }
        if scores.is_null() {
            return Err(null("scores"));
        }
        std::slice::from_raw_parts_mut(scores, scores_len).copy_from_slice(out.data());
        Ok(())
    })
}

fn rule_of(r: &RelpropRule) -> Result<Rule, Failure> {
    Ok(match r.kind {
        RelpropRuleKind::Basic => Rule::Basic,
        RelpropRuleKind::Epsilon => Rule::epsilon(r.epsilon)?,
        RelpropRuleKind::AlphaBeta => Rule::alpha_beta(r.alpha, r.beta)?,
        RelpropRuleKind::Flat => Rule::Flat,
        RelpropRuleKind::WSquared => Rule::WSquared,
    })
}

fn cutoff_of(m: &Model, cutoff: i32) -> Result<CutoffConfig, Failure> {
    match cutoff {
        RELPROP_CUTOFF_NONE => Ok(CutoffConfig::none()),
        RELPROP_CUTOFF_RECEPTIVE_FIELD => Ok(CutoffConfig::receptive_field(m)),
        k if k >= 0 && (k as usize) < m.layers().len() => Ok(CutoffConfig::at(k as usize)),
        k => Err(invalid(format!("cutoff {k} is outside the {} layers", m.layers().len()))),
    }
}

/// Pixel relevance of `class` for one input.
///
/// # Safety
/// `input` must hold `input_len` values; `rule` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn relprop_nn_explain(
    model: *const RelpropNnModel,
    input: *const f64,
    input_len: usize,
    class: usize,
    rule: *const RelpropRule,
    cutoff: i32,
    out: *mut *mut RelpropMap,
) -> RelpropStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = &handle(model, "model")?.0;
        let rule = rule_of(handle(rule, "rule")?)?;
        let cutoff = cutoff_of(m, cutoff)?;
        let x = nn_input(m, slice_arg(input, input_len, "input")?)?;
        if class >= m.num_classes() {
            return Err(invalid(format!("class {class} is outside the {} classes", m.num_classes())));
        }
        let (_, trace) = m.forward(&x)?;
        let rel = explain_nn(m, &trace, class, rule, cutoff)?;
        *out = Box::into_raw(Box::new(RelpropMap(rel.pixel_map)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn relprop_fv_model_load(path: *const c_char, out: *mut *mut RelpropFvModel) -> RelpropStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let model = load_fv_model(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(RelpropFvModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `relprop_fv_model_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn relprop_fv_model_free(model: *mut RelpropFvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `classes` must be valid.
#[no_mangle]
pub unsafe extern "C" fn relprop_fv_model_classes(model: *const RelpropFvModel, classes: *mut usize) -> RelpropStatus {
    guard(|| {
        *out_arg(classes, "classes")? = handle(model, "model")?.0.class_names.len();
        Ok(())
    })
}

/// Pixel relevance of `class` for a grayscale image with values in `[0, 1]`.
///
/// # Safety
/// `pixels` must hold `width * height` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn relprop_fv_explain(
    model: *const RelpropFvModel,
    pixels: *const f64,
    width: usize,
    height: usize,
    class: usize,
    mode: RelpropMode,
    epsilon: f64,
    out: *mut *mut RelpropMap,
) -> RelpropStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = &handle(model, "model")?.0;
        let n = width.checked_mul(height).ok_or_else(|| invalid("image size overflows"))?;
        let image = GrayImage::new(width, height, slice_arg(pixels, n, "pixels")?.to_vec())?;
        if class >= m.class_names.len() {
            return Err(invalid(format!("class {class} is outside the {} classes", m.class_names.len())));
        }
        let mode = match mode {
            RelpropMode::Fine => Mode::Fine,
            RelpropMode::Coarse => Mode::Coarse,
        };
        let (rel, _) = explain_fv(&image, m, class, mode, epsilon)?;
        *out = Box::into_raw(Box::new(RelpropMap(rel.map)));
        Ok(())
    })
}

/// # Safety
/// `map` must come from an explain call or be null.
#[no_mangle]
pub unsafe extern "C" fn relprop_map_free(map: *mut RelpropMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn relprop_map_dims(map: *const RelpropMap, width: *mut usize, height: *mut usize) -> RelpropStatus {
    guard(|| {
        let shape = handle(map, "map")?.0.shape();
        *out_arg(height, "height")? = shape[0];
        *out_arg(width, "width")? = shape[1];
        Ok(())
    })
}

/// Copies the map, row major, into `buf` which must hold exactly
/// `width * height` values.
///
/// # Safety
/// `buf` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn relprop_map_data(map: *const RelpropMap, buf: *mut f64, len: usize) -> RelpropStatus {
    guard(|| {
        let data = handle(map, "map")?.0.data();
        if len != data.len() {
            return Err(Failure(RelpropStatus::Shape, format!("buffer has {len} slots, map has {}", data.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(data);
        Ok(())
    })
}

/// # Safety
/// `map` and `sum` must be valid.
#[no_mangle]
pub unsafe extern "C" fn relprop_map_sum(map: *const RelpropMap, sum: *mut f64) -> RelpropStatus {
    guard(|| {
        *out_arg(sum, "sum")? = handle(map, "map")?.0.sum();
        Ok(())
    })
}

/// Renders the map with the default colormap and writes a binary PPM.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn relprop_map_write_ppm(map: *const RelpropMap, path: *const c_char) -> RelpropStatus {
    guard(|| {
        let map = &handle(map, "map")?.0;
        let path = path_arg(path)?;
        write_ppm(&render(map, &ColorMap::default())?, path)?;
        Ok(())
    })
}
