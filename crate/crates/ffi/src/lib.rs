//! C ABI over `gait-core`.
//!
//! Every function returns a [`GaitStatus`]; results come back through out
//! pointers. On failure the message is kept per thread and can be read
//! with [`gait_last_error`]. Handles are opaque and must be released with
//! their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gait_core::data::sequence::binarize;
use gait_core::data::{load_sequence, Role, SequenceKey, SilhouetteSequence};
use gait_core::eval::{eer, rank_k, ScoreMatrix};
use gait_core::net::{compare, embed_sequence, load_checkpoint, save_checkpoint, ModelParams, NetConfig};
use gait_core::seqpool::FusedFeature;
use gait_core::{GaitError, PoolingMode, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GaitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Data = 6,
    NonFinite = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GaitPooling {
    Max = 0,
    Mean = 1,
}

impl From<GaitPooling> for PoolingMode {
    fn from(p: GaitPooling) -> Self {
        match p {
            GaitPooling::Max => PoolingMode::Max,
            GaitPooling::Mean => PoolingMode::Mean,
        }
    }
}

/// Network weights plus configuration.
pub struct GaitModel {
    params: ModelParams<f32>,
}

/// Fused feature of one sequence.
pub struct GaitFeature {
    inner: FusedFeature<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(GaitStatus, String);

impl From<GaitError> for Failure {
    fn from(e: GaitError) -> Self {
        let status = match &e {
            GaitError::Shape { .. } => GaitStatus::Shape,
            GaitError::InvalidArgument(_) => GaitStatus::InvalidArgument,
            GaitError::Io { .. } => GaitStatus::Io,
            GaitError::Image { .. } | GaitError::Format(_) => GaitStatus::Format,
            GaitError::Data(_) => GaitStatus::Data,
            GaitError::NonFinite(_) => GaitStatus::NonFinite,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GaitStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(GaitStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GaitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GaitStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            GaitStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gait_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Fresh weights for the given layer widths.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn gait_model_init(
    input_size: usize,
    conv1_channels: usize,
    conv2_channels: usize,
    mcnn_channels: usize,
    pooling: GaitPooling,
    seed: u64,
    out: *mut *mut GaitModel,
) -> GaitStatus {
    guard(|| {
        let config = NetConfig {
            input_size,
            conv1_channels,
            conv2_channels,
            mcnn_channels,
            ..NetConfig::default()
        };
        let params = ModelParams::init(config, pooling.into(), seed)?;
        put(out, Box::into_raw(Box::new(GaitModel { params })), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` as in [`gait_model_init`].
#[no_mangle]
pub unsafe extern "C" fn gait_model_load(path: *const c_char, out: *mut *mut GaitModel) -> GaitStatus {
    guard(|| {
        let params = load_checkpoint(&path_arg(path, "path")?)?;
        put(out, Box::into_raw(Box::new(GaitModel { params })), "out")
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gait_model_save(model: *const GaitModel, path: *const c_char) -> GaitStatus {
    guard(|| {
        let model = deref(model, "model")?;
        save_checkpoint(&model.params, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Side length frames are resized to before embedding.
///
/// # Safety
/// `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn gait_model_input_size(model: *const GaitModel, out: *mut usize) -> GaitStatus {
    guard(|| put(out, deref(model, "model")?.params.config.input_size, "out"))
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gait_model_free(model: *mut GaitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn embed(model: &GaitModel, seq: SilhouetteSequence) -> Result<*mut GaitFeature, Failure> {
    let p = &model.params;
    let inner = embed_sequence(&seq.resized(p.config.input_size), p, p.pooling)?;
    Ok(Box::into_raw(Box::new(GaitFeature { inner })))
}

/// Embeds the PNG frames of a directory, in file name order.
///
/// # Safety
/// `model` must come from this library, `dir` must be NUL-terminated and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gait_embed_dir(
    model: *const GaitModel,
    dir: *const c_char,
    out: *mut *mut GaitFeature,
) -> GaitStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let seq = load_sequence(&path_arg(dir, "dir")?)?;
        put(out, embed(model, seq)?, "out")
    })
}

/// Embeds `frame_count` row-major 8-bit frames of `height x width`
/// stored back to back. Pixels at or above 128 are foreground.
///
/// # Safety
/// `pixels` must point to `frame_count * height * width` bytes.
#[no_mangle]
pub unsafe extern "C" fn gait_embed_frames(
    model: *const GaitModel,
    pixels: *const u8,
    frame_count: usize,
    height: usize,
    width: usize,
    out: *mut *mut GaitFeature,
) -> GaitStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let per_frame = height
            .checked_mul(width)
            .filter(|&n| n > 0)
            .ok_or_else(|| invalid("frame size must be positive"))?;
        let total = per_frame
            .checked_mul(frame_count)
            .ok_or_else(|| invalid("frame buffer size overflows"))?;
        let data = slice(pixels, total, "pixels")?;
        let frames = data
            .chunks_exact(per_frame)
            .map(|f| {
                let t = Tensor::new(&[height, width], f.iter().map(|&v| v as f32 / 255.0).collect())?;
                Ok(binarize(&t))
            })
            .collect::<Result<Vec<_>, GaitError>>()?;
        let key = SequenceKey::new("frames", Role::Probe, 0)?;
        let seq = SilhouetteSequence::new(key, frames)?;
        put(out, embed(model, seq)?, "out")
    })
}

/// Number of values in the feature maps.
///
/// # Safety
/// `feature` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn gait_feature_len(feature: *const GaitFeature, out: *mut usize) -> GaitStatus {
    guard(|| put(out, deref(feature, "feature")?.inner.maps.len(), "out"))
}

/// Writes `[channels, height, width]` of the feature maps to `shape`.
///
/// # Safety
/// `shape` must have room for three values.
#[no_mangle]
pub unsafe extern "C" fn gait_feature_shape(feature: *const GaitFeature, shape: *mut usize) -> GaitStatus {
    guard(|| {
        let f = deref(feature, "feature")?;
        if shape.is_null() {
            return Err(null("shape"));
        }
        let s = f.inner.maps.shape();
        if s.len() != 3 {
            return Err(Failure(GaitStatus::Shape, format!("feature maps have shape {s:?}")));
        }
        ptr::copy_nonoverlapping(s.as_ptr(), shape, 3);
        Ok(())
    })
}

/// Copies the feature maps into `buf`, which must hold exactly
/// [`gait_feature_len`] values.
///
/// # Safety
/// `buf` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn gait_feature_copy(feature: *const GaitFeature, buf: *mut f32, len: usize) -> GaitStatus {
    guard(|| {
        let data = deref(feature, "feature")?.inner.maps.data();
        if len != data.len() {
            return Err(invalid(format!("buffer holds {len} values, feature has {}", data.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, len);
        Ok(())
    })
}

/// # Safety
/// `feature` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gait_feature_free(feature: *mut GaitFeature) {
    if !feature.is_null() {
        drop(Box::from_raw(feature));
    }
}

/// Probability that two features come from the same subject.
///
/// # Safety
/// All handles must come from this library.
#[no_mangle]
pub unsafe extern "C" fn gait_compare(
    model: *const GaitModel,
    a: *const GaitFeature,
    b: *const GaitFeature,
    p_same: *mut f64,
) -> GaitStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let s = compare(&deref(a, "a")?.inner, &deref(b, "b")?.inner, &model.params)?;
        put(p_same, s.p_same, "p_same")
    })
}

/// Equal error rate in percent.
///
/// # Safety
/// The score arrays must hold the given counts.
#[no_mangle]
pub unsafe extern "C" fn gait_eer(
    genuine: *const f64,
    genuine_len: usize,
    impostor: *const f64,
    impostor_len: usize,
    out: *mut f64,
) -> GaitStatus {
    guard(|| {
        let g = slice(genuine, genuine_len, "genuine")?;
        let i = slice(impostor, impostor_len, "impostor")?;
        put(out, eer(g, i)?, "out")
    })
}

/// Rank-k identification rate in percent over a row-major
/// `rows x cols` score matrix; row `r` matches column `genuine[r]`.
///
/// # Safety
/// `scores` must hold `rows * cols` values and `genuine` `rows` indices.
#[no_mangle]
pub unsafe extern "C" fn gait_rank_k(
    scores: *const f64,
    rows: usize,
    cols: usize,
    genuine: *const usize,
    k: usize,
    out: *mut f64,
) -> GaitStatus {
    guard(|| {
        let n = rows.checked_mul(cols).ok_or_else(|| invalid("matrix size overflows"))?;
        let s = slice(scores, n, "scores")?;
        let g = slice(genuine, rows, "genuine")?;
        if let Some(&bad) = g.iter().find(|&&j| j >= cols) {
            return Err(invalid(format!("genuine index {bad} out of range for {cols} columns")));
        }
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let probes = g.iter().map(|j| j.to_string()).collect();
        let galleries = (0..cols).map(|j| j.to_string()).collect();
        let m = ScoreMatrix::new(0, 0, probes, galleries, s.to_vec())?;
        put(out, rank_k(&m, k), "out")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        let f: Failure = GaitError::NonFinite("x".into()).into();
        assert_eq!(f.0, GaitStatus::NonFinite);
        let f: Failure = GaitError::Format("x".into()).into();
        assert_eq!(f.0, GaitStatus::Format);
    }

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, GaitStatus::Panic);
        let msg = unsafe { CStr::from_ptr(gait_last_error()) };
        assert!(msg.to_str().unwrap().contains("boom"));
    }
}
