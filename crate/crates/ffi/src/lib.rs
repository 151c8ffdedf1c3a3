//! C ABI for loading models and masks, running forward/backward passes,
//! head-gate gradients, mask cosine and TracIn scores.
//!
//! Every function returns an [`SiStatus`] code; on failure the message is
//! available from [`si_last_error`] on the same thread. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use subnet_tda::analysis::mask_cosine;
use subnet_tda::influence::{tracin_score, GradSketch};
use subnet_tda::model::{self, Example, LanguageId, ModelConfig, Parameters, SubnetworkMask};
use subnet_tda::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiStatus {
    SiOk = 0,
    SiErrNullPointer = 1,
    SiErrConfig = 2,
    SiErrContract = 3,
    SiErrNumerical = 4,
    SiErrFormat = 5,
    SiErrIo = 6,
    SiErrLookup = 7,
    SiErrUndefined = 8,
    SiErrBufferSize = 9,
    SiErrPanic = 10,
}

/// Opaque model parameters.
pub struct SiModel {
    params: Parameters,
}

/// Opaque head mask.
pub struct SiMask {
    mask: SubnetworkMask,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SiStatus {
    match e {
        Error::Config(_) => SiStatus::SiErrConfig,
        Error::Contract(_) | Error::Dependency { .. } | Error::StaleCache { .. } => SiStatus::SiErrContract,
        Error::Numerical { .. } | Error::Training { .. } => SiStatus::SiErrNumerical,
        Error::Format { .. } | Error::Json(_) | Error::Csv(_) => SiStatus::SiErrFormat,
        Error::Io { .. } => SiStatus::SiErrIo,
        Error::Lookup(_) => SiStatus::SiErrLookup,
        Error::UndefinedSimilarity(_) | Error::UndefinedCorrelation(_) => SiStatus::SiErrUndefined,
    }
}

enum Failure {
    Null(&'static str),
    Buffer(usize, usize),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SiStatus::SiOk,
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("{what} is null"));
            SiStatus::SiErrNullPointer
        }
        Ok(Err(Failure::Buffer(need, got))) => {
            set_error(&format!("output buffer holds {got} values but {need} are required"));
            SiStatus::SiErrBufferSize
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            SiStatus::SiErrPanic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass pointers obtained from this library or valid for reads.
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: non-null and documented as a nul-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::Core(Error::format(None, format!("{what} is not UTF-8"))))
}

fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: non-null and documented to hold `len` elements.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn write_out(out: *mut f64, len: usize, values: &[f64]) -> Result<(), Failure> {
    if values.len() > len {
        return Err(Failure::Buffer(values.len(), len));
    }
    if out.is_null() {
        return Err(Failure::Null("output buffer"));
    }
    // SAFETY: non-null and documented to hold `len >= values.len()` elements.
    unsafe { std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len()) };
    Ok(())
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("output handle"));
    }
    // SAFETY: non-null and documented as writable.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn example(tokens: *const u32, len: usize, label: usize) -> Result<Example, Failure> {
    Ok(Example { id: 0, tokens: slice(tokens, len, "tokens")?.to_vec(), label, language: LanguageId(0), latent_id: 0 })
}

/// Message of the last failed call on this thread; valid until the next failure.
#[no_mangle]
pub extern "C" fn si_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads parameters written by the training pipeline (a checkpoint `.bin`).
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn si_model_load(path: *const c_char, out: *mut *mut SiModel) -> SiStatus {
    guard(|| {
        let params = Parameters::load(Path::new(c_str(path, "path")?))?;
        put(out, SiModel { params })
    })
}

/// Builds a freshly initialised model from a JSON model configuration.
///
/// # Safety
/// `config_json` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn si_model_init(config_json: *const c_char, seed: u64, out: *mut *mut SiModel) -> SiStatus {
    guard(|| {
        let cfg: ModelConfig = serde_json::from_str(c_str(config_json, "config_json")?).map_err(Error::from)?;
        let params = model::init_model(&cfg, seed)?;
        put(out, SiModel { params })
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn si_model_free(model: *mut SiModel) {
    if !model.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Writes the flat parameter count and the head grid shape.
///
/// # Safety
/// `model` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_model_shape(
    model: *const SiModel,
    num_params: *mut usize,
    num_layers: *mut usize,
    heads_per_layer: *mut usize,
    num_classes: *mut usize,
) -> SiStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let cfg = m.params.config();
        for (p, v) in [
            (num_params, m.params.len()),
            (num_layers, cfg.num_layers),
            (heads_per_layer, cfg.heads_per_layer),
            (num_classes, cfg.num_classes),
        ] {
            if p.is_null() {
                return Err(Failure::Null("shape output"));
            }
            // SAFETY: checked non-null, documented writable.
            unsafe { *p = v };
        }
        Ok(())
    })
}

/// Parses a mask from its JSON form (as written by the prune stage).
///
/// # Safety
/// `json` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn si_mask_load_json(json: *const c_char, out: *mut *mut SiMask) -> SiStatus {
    guard(|| {
        let mask = SubnetworkMask::from_json(c_str(json, "json")?)?;
        put(out, SiMask { mask })
    })
}

/// All-ones mask shaped for `model`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn si_mask_full(model: *const SiModel, out: *mut *mut SiMask) -> SiStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        put(out, SiMask { mask: SubnetworkMask::full_for(m.params.config()) })
    })
}

/// # Safety
/// `mask` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn si_mask_free(mask: *mut SiMask) {
    if !mask.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(mask) });
    }
}

/// Class probabilities for one token sequence (which must start with CLS).
///
/// # Safety
/// Handles must be live; `tokens` holds `len` ids; `probs` holds `probs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn si_forward(
    model: *const SiModel,
    mask: *const SiMask,
    tokens: *const u32,
    len: usize,
    probs: *mut f64,
    probs_len: usize,
) -> SiStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let k = non_null(mask, "mask")?;
        let p = model::forward(&m.params, &example(tokens, len, 0)?, &k.mask)?;
        write_out(probs, probs_len, &p)
    })
}

/// Cross-entropy loss and its gradient with respect to every flat parameter.
///
/// # Safety
/// Handles must be live; `grad` holds `grad_len` doubles; `loss` is writable.
#[no_mangle]
pub unsafe extern "C" fn si_loss_and_grad(
    model: *const SiModel,
    mask: *const SiMask,
    tokens: *const u32,
    len: usize,
    label: usize,
    grad: *mut f64,
    grad_len: usize,
    loss: *mut f64,
) -> SiStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let k = non_null(mask, "mask")?;
        let g = model::loss_and_grad(&m.params, &example(tokens, len, label)?, &k.mask)?;
        write_out(grad, grad_len, &g.values)?;
        write_out(loss, 1, &[g.loss])
    })
}

/// Loss gradient with respect to each head gate, row-major layers × heads.
///
/// # Safety
/// Handles must be live; `out` holds `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn si_gate_grad(
    model: *const SiModel,
    mask: *const SiMask,
    tokens: *const u32,
    len: usize,
    label: usize,
    out: *mut f64,
    out_len: usize,
) -> SiStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let k = non_null(mask, "mask")?;
        let g = model::gate_grad(&m.params, &example(tokens, len, label)?, &k.mask)?;
        write_out(out, out_len, &g.values)
    })
}

/// Cosine of two masks; a negative `layer` compares the flattened masks.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn si_mask_cosine(a: *const SiMask, b: *const SiMask, layer: i64, out: *mut f64) -> SiStatus {
    guard(|| {
        let a = non_null(a, "a")?;
        let b = non_null(b, "b")?;
        let layer = usize::try_from(layer).ok();
        write_out(out, 1, &[mask_cosine(&a.mask, &b.mask, layer)?])
    })
}

/// TracIn score between two examples from their per-checkpoint sketches,
/// each stored row-major as `checkpoints × dim`.
///
/// # Safety
/// `train` and `test` hold `checkpoints * dim` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn si_tracin_score(
    train: *const f64,
    test: *const f64,
    checkpoints: usize,
    dim: usize,
    normalize: bool,
    out: *mut f64,
) -> SiStatus {
    guard(|| {
        let n = checkpoints.checked_mul(dim).ok_or(Failure::Core(Error::contract("size overflow")))?;
        let rows = |p, what| -> Result<Vec<GradSketch>, Failure> {
            let s = slice(p, n, what)?;
            Ok(s.chunks(dim.max(1))
                .take(checkpoints)
                .map(|c| GradSketch { values: c.to_vec(), grad_norm: f64::NAN })
                .collect())
        };
        let score = tracin_score(&rows(train, "train")?, &rows(test, "test")?, normalize)?;
        write_out(out, 1, &[score])
    })
}
