//! C ABI over a loaded checkpoint: sample codes, render views and apply
//! text-driven edits.
//!
//! Every function returns a `NerfeditStatus`; on failure the message is kept
//! per thread and can be read with `nerfedit_last_error`. Codes cross the
//! boundary as two `double` arrays of length `nerfedit_model_code_dim`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nerfedit::checkpoint::Checkpoint;
use nerfedit::edit::{EditTarget, Model};
use nerfedit::embed::load_backend;
use nerfedit::mappers::Channel;
use nerfedit::nerf::{Code, Codes};
use nerfedit::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NerfeditStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Config = 4,
    Checkpoint = 5,
    NotFound = 6,
    Io = 7,
    BufferTooSmall = 8,
    NonFinite = 9,
    Unavailable = 10,
    Internal = 11,
}

/// Edited code channel.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NerfeditChannel {
    Shape = 0,
    Appearance = 1,
    Both = 2,
}

/// Opaque handle to a checkpoint and its embedder.
pub struct NerfeditModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> NerfeditStatus {
    match e {
        Error::InvalidInput(_) | Error::Image(_) | Error::Dataset(_) => NerfeditStatus::InvalidArgument,
        Error::Shape(_) => NerfeditStatus::ShapeMismatch,
        Error::Config { .. } | Error::ConfigParse(_) => NerfeditStatus::Config,
        Error::Checkpoint(_) => NerfeditStatus::Checkpoint,
        Error::NotFound(_) => NerfeditStatus::NotFound,
        Error::Io(_) | Error::Json(_) => NerfeditStatus::Io,
        Error::Diverged(_) | Error::NonFinite(_) => NerfeditStatus::NonFinite,
        Error::Unavailable(_) => NerfeditStatus::Unavailable,
    }
}

struct Failure(NerfeditStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: NerfeditStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NerfeditStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NerfeditStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            NerfeditStatus::Internal
        }
    }
}

unsafe fn model_ref<'a>(model: *const NerfeditModel) -> Result<&'a Model, Failure> {
    model.as_ref().map(|m| &m.inner).ok_or_else(|| fail(NerfeditStatus::NullPointer, "model handle is null"))
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(fail(NerfeditStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(NerfeditStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn read_codes(shape: *const f64, appearance: *const f64, len: usize, dim: usize) -> Result<Codes, Failure> {
    if shape.is_null() || appearance.is_null() {
        return Err(fail(NerfeditStatus::NullPointer, "code buffer is null"));
    }
    if len != dim {
        return Err(fail(NerfeditStatus::ShapeMismatch, format!("codes have length {len}, model expects {dim}")));
    }
    let shape = Code::new(std::slice::from_raw_parts(shape, len).to_vec())?;
    let appearance = Code::new(std::slice::from_raw_parts(appearance, len).to_vec())?;
    Ok(Codes { shape, appearance })
}

unsafe fn write_codes(codes: &Codes, shape: *mut f64, appearance: *mut f64, len: usize) -> Result<(), Failure> {
    if shape.is_null() || appearance.is_null() {
        return Err(fail(NerfeditStatus::NullPointer, "output code buffer is null"));
    }
    if len != codes.shape.dim() {
        return Err(fail(NerfeditStatus::BufferTooSmall, format!("output buffers hold {len}, codes need {}", codes.shape.dim())));
    }
    std::slice::from_raw_parts_mut(shape, len).copy_from_slice(codes.shape.values());
    std::slice::from_raw_parts_mut(appearance, len).copy_from_slice(codes.appearance.values());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nerfedit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn nerfedit_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Load a checkpoint file and the embedder it was trained against.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nerfedit_model_load(path: *const c_char, out: *mut *mut NerfeditModel) -> NerfeditStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(NerfeditStatus::NullPointer, "output handle pointer is null"));
        }
        *out = std::ptr::null_mut();
        let path = c_str(path, "path")?;
        let ck = Checkpoint::load(Path::new(path))?;
        let backend = load_backend(&ck.config.embedder)?;
        *out = Box::into_raw(Box::new(NerfeditModel { inner: Model::new(ck, backend) }));
        Ok(())
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from `nerfedit_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nerfedit_model_free(model: *mut NerfeditModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of each of the shape and appearance codes.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nerfedit_model_code_dim(model: *const NerfeditModel, out: *mut usize) -> NerfeditStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| fail(NerfeditStatus::NullPointer, "output pointer is null"))?;
        *out = m.code_dim();
        Ok(())
    })
}

/// Whether the checkpoint carries trained edit mappers.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nerfedit_model_has_mappers(model: *const NerfeditModel, out: *mut bool) -> NerfeditStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| fail(NerfeditStatus::NullPointer, "output pointer is null"))?;
        *out = m.checkpoint.mappers.is_some();
        Ok(())
    })
}

/// Draw standard normal codes deterministically from `seed`.
///
/// # Safety
/// `shape_out` and `appearance_out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nerfedit_sample_codes(
    model: *const NerfeditModel,
    seed: u64,
    shape_out: *mut f64,
    appearance_out: *mut f64,
    len: usize,
) -> NerfeditStatus {
    guard(|| {
        let m = model_ref(model)?;
        let codes = Codes::sample(&mut ChaCha8Rng::seed_from_u64(seed), m.code_dim());
        write_codes(&codes, shape_out, appearance_out, len)
    })
}

/// Render a square RGB8 view at the given camera angles (radians) into
/// `rgb_out`, which must hold `resolution * resolution * 3` bytes.
///
/// # Safety
/// Code pointers must hold `len` doubles; `rgb_out` must hold `rgb_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nerfedit_render(
    model: *const NerfeditModel,
    shape: *const f64,
    appearance: *const f64,
    len: usize,
    azimuth: f64,
    elevation: f64,
    resolution: usize,
    rgb_out: *mut u8,
    rgb_len: usize,
) -> NerfeditStatus {
    guard(|| {
        let m = model_ref(model)?;
        let codes = read_codes(shape, appearance, len, m.code_dim())?;
        if resolution == 0 {
            return Err(fail(NerfeditStatus::InvalidArgument, "resolution must be positive"));
        }
        if rgb_out.is_null() {
            return Err(fail(NerfeditStatus::NullPointer, "output image buffer is null"));
        }
        let need = resolution * resolution * 3;
        if rgb_len < need {
            return Err(fail(NerfeditStatus::BufferTooSmall, format!("image buffer holds {rgb_len} bytes, {need} needed")));
        }
        let pose = m.checkpoint.config.render.camera.pose(azimuth, elevation)?;
        let bytes = m.render(&codes, &pose, resolution)?.to_rgb8();
        std::slice::from_raw_parts_mut(rgb_out, need).copy_from_slice(&bytes);
        Ok(())
    })
}

/// Move codes toward a text prompt: `z + scale * direction` on the chosen
/// channel (a `NerfeditChannel` value). Output buffers may alias the inputs.
///
/// # Safety
/// Code pointers must hold `len` doubles; `prompt` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nerfedit_edit_text(
    model: *const NerfeditModel,
    shape: *const f64,
    appearance: *const f64,
    len: usize,
    prompt: *const c_char,
    channel: u32,
    scale: f64,
    shape_out: *mut f64,
    appearance_out: *mut f64,
) -> NerfeditStatus {
    guard(|| {
        let m = model_ref(model)?;
        let codes = read_codes(shape, appearance, len, m.code_dim())?;
        let prompt = c_str(prompt, "prompt")?;
        let channel = match channel {
            c if c == NerfeditChannel::Shape as u32 => Channel::Shape,
            c if c == NerfeditChannel::Appearance as u32 => Channel::Appearance,
            c if c == NerfeditChannel::Both as u32 => Channel::Both,
            c => return Err(fail(NerfeditStatus::InvalidArgument, format!("unknown channel {c}"))),
        };
        let (edited, _) = m.edit(&codes, &EditTarget::Text(prompt.to_string()), channel, scale)?;
        write_codes(&edited, shape_out, appearance_out, len)
    })
}
