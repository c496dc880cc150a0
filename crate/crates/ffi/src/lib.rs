// SPDX-License-Identifier: MIT OR Apache-2.0

//! C ABI for lingualens.
//!
//! Every fallible function returns an `int32_t` status (`LL_OK` on success)
//! and writes results through out-pointers. On failure the message is kept
//! per thread and can be read with [`ll_last_error`]. Strings returned by
//! the library are owned by the caller and must be released with
//! [`ll_string_free`]; bundles with [`ll_bundle_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lingualens::error::Error;
use lingualens::lens::lens_grid;
use lingualens::model::{
    forward, generate, load_bundle, synthesize_bundle, toy_vocabulary, GenerationRecord, ModelBundle, ModelConfig,
    TOY_WORDS,
};
use lingualens::tracing::{trace_grid, FactProbe, TraceConfig};

pub const LL_OK: i32 = 0;
/// A required pointer argument was null.
pub const LL_ERR_NULL_POINTER: i32 = 1;
/// A string argument was not valid UTF-8.
pub const LL_ERR_INVALID_UTF8: i32 = 2;
/// Input rejected: bad config, shapes, dataset, arguments.
pub const LL_ERR_VALIDATION: i32 = 3;
/// The computation could not complete (I/O, insufficient corruption).
pub const LL_ERR_RUNTIME: i32 = 4;
/// Output buffer too small; the required length is still reported.
pub const LL_ERR_BUFFER_TOO_SMALL: i32 = 5;
/// A Rust panic was caught at the boundary.
pub const LL_ERR_PANIC: i32 = 6;

/// Opaque model handle.
pub struct LlBundle {
    inner: ModelBundle,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> i32 {
    if e.is_validation() {
        LL_ERR_VALIDATION
    } else {
        LL_ERR_RUNTIME
    }
}

struct Fail(i32);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_error(e.to_string());
        Fail(status_of(&e))
    }
}

fn fail(code: i32, msg: &str) -> Fail {
    set_error(msg);
    Fail(code)
}

/// Run `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LL_OK,
        Ok(Err(Fail(code))) => code,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            LL_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(LL_ERR_NULL_POINTER, &format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LL_ERR_INVALID_UTF8, &format!("{what} is not valid UTF-8")))
}

unsafe fn bundle_arg<'a>(b: *const LlBundle) -> Result<&'a ModelBundle, Fail> {
    b.as_ref()
        .map(|b| &b.inner)
        .ok_or_else(|| fail(LL_ERR_NULL_POINTER, "bundle is null"))
}

fn check_out<T>(out: *mut T) -> Result<(), Fail> {
    if out.is_null() {
        Err(fail(LL_ERR_NULL_POINTER, "output pointer is null"))
    } else {
        Ok(())
    }
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    let c = CString::new(s).map_err(|_| fail(LL_ERR_RUNTIME, "output contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn put_json<T: serde::Serialize>(out: *mut *mut c_char, v: &T) -> Result<(), Fail> {
    let s = serde_json::to_string(v).map_err(|e| fail(LL_ERR_RUNTIME, &e.to_string()))?;
    put_string(out, s)
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next library call on the same thread.
#[no_mangle]
pub extern "C" fn ll_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load and validate a bundle directory.
#[no_mangle]
pub unsafe extern "C" fn ll_bundle_load(dir: *const c_char, out: *mut *mut LlBundle) -> i32 {
    guard(|| {
        check_out(out)?;
        let dir = str_arg(dir, "dir")?;
        let inner = load_bundle(dir)?;
        *out = Box::into_raw(Box::new(LlBundle { inner }));
        Ok(())
    })
}

/// Synthesize a seeded toy bundle over the built-in multilingual word list.
#[no_mangle]
pub unsafe extern "C" fn ll_bundle_synthesize(
    seed: u64,
    n_layers: usize,
    d_model: usize,
    n_heads: usize,
    d_ff: usize,
    max_seq: usize,
    out: *mut *mut LlBundle,
) -> i32 {
    guard(|| {
        check_out(out)?;
        let vocab = toy_vocabulary(TOY_WORDS);
        let config = ModelConfig {
            n_layers,
            d_model,
            n_heads,
            d_ff,
            vocab_size: vocab.len(),
            max_seq,
            ..ModelConfig::default()
        };
        let inner = synthesize_bundle(seed, config, vocab)?;
        *out = Box::into_raw(Box::new(LlBundle { inner }));
        Ok(())
    })
}

/// Write the bundle directory.
#[no_mangle]
pub unsafe extern "C" fn ll_bundle_save(bundle: *const LlBundle, dir: *const c_char) -> i32 {
    guard(|| {
        let b = bundle_arg(bundle)?;
        b.save(str_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// Release a bundle. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ll_bundle_free(bundle: *mut LlBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Layer count, width and vocabulary size.
#[no_mangle]
pub unsafe extern "C" fn ll_bundle_shape(
    bundle: *const LlBundle,
    n_layers: *mut usize,
    d_model: *mut usize,
    vocab_size: *mut usize,
) -> i32 {
    guard(|| {
        let b = bundle_arg(bundle)?;
        check_out(n_layers)?;
        check_out(d_model)?;
        check_out(vocab_size)?;
        *n_layers = b.n_layers();
        *d_model = b.d_model();
        *vocab_size = b.config().vocab_size;
        Ok(())
    })
}

/// Content hash (hex SHA-256). Free with `ll_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ll_bundle_hash(bundle: *const LlBundle, out: *mut *mut c_char) -> i32 {
    guard(|| {
        let b = bundle_arg(bundle)?;
        check_out(out)?;
        put_string(out, b.hash().to_owned())
    })
}

/// Tokenize `text` into `ids[0..cap]`. `*len` receives the token count
/// even when the buffer is too small.
#[no_mangle]
pub unsafe extern "C" fn ll_tokenize(
    bundle: *const LlBundle,
    text: *const c_char,
    ids: *mut u32,
    cap: usize,
    len: *mut usize,
) -> i32 {
    guard(|| {
        let b = bundle_arg(bundle)?;
        check_out(len)?;
        let seq = b.tokenize(str_arg(text, "text")?);
        *len = seq.ids.len();
        if seq.ids.len() > cap {
            return Err(fail(LL_ERR_BUFFER_TOO_SMALL, "id buffer too small"));
        }
        if !seq.ids.is_empty() {
            check_out(ids)?;
            ptr::copy_nonoverlapping(seq.ids.as_ptr(), ids, seq.ids.len());
        }
        Ok(())
    })
}

/// Next-token logits at the final position of `ids[0..n]`, written to
/// `logits[0..cap]`; `*len` receives the vocabulary size.
#[no_mangle]
pub unsafe extern "C" fn ll_forward_logits(
    bundle: *const LlBundle,
    ids: *const u32,
    n: usize,
    logits: *mut f64,
    cap: usize,
    len: *mut usize,
) -> i32 {
    guard(|| {
        let b = bundle_arg(bundle)?;
        check_out(len)?;
        if ids.is_null() {
            return Err(fail(LL_ERR_NULL_POINTER, "ids is null"));
        }
        let ids = std::slice::from_raw_parts(ids, n);
        let trace = forward(b, ids, &[])?;
        let last = trace.last_logits();
        *len = last.len();
        if last.len() > cap {
            return Err(fail(LL_ERR_BUFFER_TOO_SMALL, "logit buffer too small"));
        }
        check_out(logits)?;
        ptr::copy_nonoverlapping(last.as_ptr(), logits, last.len());
        Ok(())
    })
}

/// Greedy generation; `*json` receives the generation record.
#[no_mangle]
pub unsafe extern "C" fn ll_generate(
    bundle: *const LlBundle,
    prompt: *const c_char,
    max_steps: usize,
    json: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let b = bundle_arg(bundle)?;
        check_out(json)?;
        let g = generate(b, str_arg(prompt, "prompt")?, max_steps, &[])?;
        put_json(json, &GenerationRecord::new(b, &g))
    })
}

/// Generate, then decode every (layer, step) state; `*json` receives the
/// lens grid.
#[no_mangle]
pub unsafe extern "C" fn ll_lens_grid(
    bundle: *const LlBundle,
    prompt: *const c_char,
    max_steps: usize,
    k: usize,
    json: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let b = bundle_arg(bundle)?;
        check_out(json)?;
        let g = generate(b, str_arg(prompt, "prompt")?, max_steps, &[])?;
        put_json(json, &lens_grid(b, &g, k)?)
    })
}

/// Causal trace with default thresholds; `*json` receives the AIE grid.
/// `subject` must occur in `prompt`; `answer` is the exact answer token
/// text (usually with a leading space).
#[no_mangle]
pub unsafe extern "C" fn ll_trace_grid(
    bundle: *const LlBundle,
    prompt: *const c_char,
    subject: *const c_char,
    answer: *const c_char,
    n_seeds: usize,
    seed: u64,
    json: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let b = bundle_arg(bundle)?;
        check_out(json)?;
        let probe = FactProbe::from_text(
            b,
            str_arg(prompt, "prompt")?,
            str_arg(subject, "subject")?,
            str_arg(answer, "answer")?,
        )?;
        let config = TraceConfig {
            n_seeds,
            seed,
            ..TraceConfig::default()
        };
        put_json(json, &trace_grid(b, &probe, &config)?)
    })
}

/// Release a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ll_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
