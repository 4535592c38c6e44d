//! C ABI over the `sincfb` engine.
//!
//! Every fallible function returns a [`SincfbStatus`]; on failure a
//! description is kept per thread and can be read with [`sincfb_last_error`].
//! Handles are opaque and must be released with their `_free` function.
//! Strings returned to the caller are released with [`sincfb_string_free`].
//! Signals are `double` arrays; a length of zero allows a null pointer.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sincfb::init::{init_mel, init_uniform};
use sincfb::io::Checkpoint;
use sincfb::pipeline::{encode, frame_count};
use sincfb::trainer::{si_snr, SI_SNR_EPS};
use sincfb::{Error, Filterbank, Mode, Model};

/// Result codes shared by every function in this library.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SincfbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Unsupported = 4,
    SingularOperator = 5,
    NumericFailure = 6,
    SampleRateMismatch = 7,
    Io = 8,
    Format = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Opaque filterbank handle.
pub struct SincfbFilterbank {
    inner: Filterbank,
}

/// Opaque model handle (filterbank, mask and decoder).
pub struct SincfbModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: SincfbStatus,
    message: String,
}

impl Failure {
    fn new(status: SincfbStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidParameter(_) => SincfbStatus::InvalidArgument,
            Error::ShapeMismatch(_) => SincfbStatus::ShapeMismatch,
            Error::Unsupported(_) => SincfbStatus::Unsupported,
            Error::SingularOperator(_) => SincfbStatus::SingularOperator,
            Error::NumericFailure { .. } | Error::Diverged { .. } => SincfbStatus::NumericFailure,
            Error::SampleRateMismatch { .. } => SincfbStatus::SampleRateMismatch,
            Error::Io(_) => SincfbStatus::Io,
            Error::Wav { .. } | Error::Checkpoint(_) | Error::Csv { .. } | Error::Json(_) => SincfbStatus::Format,
        };
        Self::new(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

fn guard<F>(f: F) -> SincfbStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SincfbStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(_) => {
            set_last_error("internal panic");
            SincfbStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::new(SincfbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn input<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(ptr: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len < needed {
        return Err(Failure::new(SincfbStatus::BufferTooSmall, format!("{what} holds {len} values, {needed} needed")));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, needed))
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure::new(SincfbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn store_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output string"));
    }
    let c = CString::new(s).map_err(|_| Failure::new(SincfbStatus::Format, "string contains a nul byte"))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = value;
    Ok(())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn sincfb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sincfb_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sincfb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build `n` contiguous mel-spaced bands from `f_min` to Nyquist (unit gains, reformed mode).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn sincfb_filterbank_new_mel(
    n: usize,
    kernel_len: usize,
    sample_rate: u32,
    f_min: f64,
    out: *mut *mut SincfbFilterbank,
) -> SincfbStatus {
    guard(|| {
        let pairs = init_mel(n, sample_rate as f64, f_min)?;
        let inner = Filterbank::from_normalized(sample_rate, kernel_len, Mode::Reformed, &pairs)?;
        store(out, SincfbFilterbank { inner })
    })
}

/// Build `n` bands with cutoffs drawn uniformly from `[0, 1)` (unit gains, reformed mode).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn sincfb_filterbank_new_uniform(
    n: usize,
    kernel_len: usize,
    sample_rate: u32,
    seed: u64,
    out: *mut *mut SincfbFilterbank,
) -> SincfbStatus {
    guard(|| {
        let pairs = init_uniform(n, seed)?;
        let inner = Filterbank::from_normalized(sample_rate, kernel_len, Mode::Reformed, &pairs)?;
        store(out, SincfbFilterbank { inner })
    })
}

/// Parse a filterbank from its JSON form.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sincfb_filterbank_from_json(
    json: *const c_char,
    out: *mut *mut SincfbFilterbank,
) -> SincfbStatus {
    guard(|| {
        let inner = Filterbank::from_json(text(json, "json")?)?;
        store(out, SincfbFilterbank { inner })
    })
}

/// Serialize a filterbank to JSON; free the result with [`sincfb_string_free`].
///
/// # Safety
/// `fb` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sincfb_filterbank_to_json(fb: *const SincfbFilterbank, out: *mut *mut c_char) -> SincfbStatus {
    guard(|| {
        let fb = handle(fb, "filterbank")?;
        store_string(out, fb.inner.to_json()?)
    })
}

/// Release a filterbank handle. Null is ignored.
///
/// # Safety
/// `fb` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sincfb_filterbank_free(fb: *mut SincfbFilterbank) {
    if !fb.is_null() {
        drop(Box::from_raw(fb));
    }
}

/// Number of filters, or 0 for a null handle.
///
/// # Safety
/// `fb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sincfb_filterbank_len(fb: *const SincfbFilterbank) -> usize {
    fb.as_ref().map_or(0, |f| f.inner.len())
}

/// Kernel length L, or 0 for a null handle.
///
/// # Safety
/// `fb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sincfb_filterbank_kernel_len(fb: *const SincfbFilterbank) -> usize {
    fb.as_ref().map_or(0, |f| f.inner.kernel_len())
}

/// Sample rate in Hz, or 0 for a null handle.
///
/// # Safety
/// `fb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sincfb_filterbank_sample_rate(fb: *const SincfbFilterbank) -> u32 {
    fb.as_ref().map_or(0, |f| f.inner.sample_rate())
}

/// Normalized band edges (fractions of Nyquist) and gain of filter `index`.
///
/// # Safety
/// `fb` must be a live handle; the three outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sincfb_filterbank_band(
    fb: *const SincfbFilterbank,
    index: usize,
    a1: *mut f64,
    a2: *mut f64,
    beta: *mut f64,
) -> SincfbStatus {
    guard(|| {
        let fb = handle(fb, "filterbank")?;
        if index >= fb.inner.len() {
            return Err(Failure::new(
                SincfbStatus::InvalidArgument,
                format!("filter index {index} out of range ({} filters)", fb.inner.len()),
            ));
        }
        let band = fb.inner.band(index);
        write(a1, band.a1, "a1")?;
        write(a2, band.a2, "a2")?;
        write(beta, fb.inner.params()[index].beta, "beta")
    })
}

/// Copy the `kernel_len` assembled taps of filter `index` into `out`.
///
/// # Safety
/// `fb` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sincfb_filterbank_copy_taps(
    fb: *const SincfbFilterbank,
    index: usize,
    out: *mut f64,
    out_len: usize,
) -> SincfbStatus {
    guard(|| {
        let fb = handle(fb, "filterbank")?;
        if index >= fb.inner.len() {
            return Err(Failure::new(
                SincfbStatus::InvalidArgument,
                format!("filter index {index} out of range ({} filters)", fb.inner.len()),
            ));
        }
        let taps = fb.inner.filter(index).taps;
        output(out, out_len, taps.len(), "taps buffer")?.copy_from_slice(&taps);
        Ok(())
    })
}

/// Number of encoder frames for a signal of `signal_len` samples at `hop`.
///
/// # Safety
/// `fb` must be a live handle; `frames` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sincfb_filterbank_frame_count(
    fb: *const SincfbFilterbank,
    signal_len: usize,
    hop: usize,
    frames: *mut usize,
) -> SincfbStatus {
    guard(|| {
        let fb = handle(fb, "filterbank")?;
        let l = fb.inner.kernel_len();
        if hop == 0 || signal_len < l {
            return Err(Failure::new(SincfbStatus::InvalidArgument, format!("need hop >= 1 and at least {l} samples")));
        }
        write(frames, frame_count(signal_len, l, hop), "frames")
    })
}

/// Encode `signal` into an N x frames row-major feature matrix.
///
/// `out_len` must be at least `N * frames`; see [`sincfb_filterbank_frame_count`].
///
/// # Safety
/// `fb` must be a live handle; `signal` must hold `signal_len` doubles and
/// `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sincfb_filterbank_encode(
    fb: *const SincfbFilterbank,
    signal: *const f64,
    signal_len: usize,
    hop: usize,
    out: *mut f64,
    out_len: usize,
) -> SincfbStatus {
    guard(|| {
        let fb = handle(fb, "filterbank")?;
        let x = input(signal, signal_len, "signal")?;
        let fm = encode(x, &fb.inner, hop)?;
        output(out, out_len, fm.data().len(), "feature buffer")?.copy_from_slice(fm.data());
        Ok(())
    })
}

/// Load a model checkpoint written by the command-line tool.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sincfb_model_load(path: *const c_char, out: *mut *mut SincfbModel) -> SincfbStatus {
    guard(|| {
        let path = Path::new(text(path, "path")?);
        let json = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(SincfbStatus::Io, format!("{}: {e}", path.display())))?;
        let ck = Checkpoint::from_json(&json)?;
        store(out, SincfbModel { inner: ck.model })
    })
}

/// Parse a model checkpoint from JSON text.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sincfb_model_from_json(json: *const c_char, out: *mut *mut SincfbModel) -> SincfbStatus {
    guard(|| {
        let ck = Checkpoint::from_json(text(json, "json")?)?;
        store(out, SincfbModel { inner: ck.model })
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sincfb_model_free(model: *mut SincfbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sample rate the model was trained for, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sincfb_model_sample_rate(model: *const SincfbModel) -> u32 {
    model.as_ref().map_or(0, |m| m.inner.filterbank.sample_rate())
}

/// Copy the model's encoder filterbank into a new handle.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sincfb_model_filterbank(
    model: *const SincfbModel,
    out: *mut *mut SincfbFilterbank,
) -> SincfbStatus {
    guard(|| {
        let model = handle(model, "model")?;
        store(out, SincfbFilterbank { inner: model.inner.filterbank.clone() })
    })
}

/// Enhance `signal`; the output has the same length as the input.
///
/// # Safety
/// `model` must be a live handle; `signal` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sincfb_model_enhance(
    model: *const SincfbModel,
    signal: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> SincfbStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let x = input(signal, len, "signal")?;
        let y = model.inner.enhance(x)?;
        output(out, out_len, y.len(), "output buffer")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Scale-invariant SNR of `estimate` against `reference`, in dB.
///
/// # Safety
/// Both arrays must hold `len` doubles; `out_db` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sincfb_si_snr(
    estimate: *const f64,
    reference: *const f64,
    len: usize,
    out_db: *mut f64,
) -> SincfbStatus {
    guard(|| {
        let e = input(estimate, len, "estimate")?;
        let r = input(reference, len, "reference")?;
        write(out_db, si_snr(e, r, SI_SNR_EPS)?, "out_db")
    })
}
