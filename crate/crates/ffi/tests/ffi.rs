// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use lingualens_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_owned();
    ll_string_free(s);
    out
}

unsafe fn last_error() -> String {
    let p = ll_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

unsafe fn toy() -> *mut LlBundle {
    let mut b = ptr::null_mut();
    assert_eq!(ll_bundle_synthesize(3, 2, 32, 4, 64, 32, &mut b), LL_OK);
    assert!(!b.is_null());
    b
}

#[test]
fn synthesize_generate_and_free() {
    unsafe {
        let b = toy();
        let (mut l, mut d, mut v) = (0, 0, 0);
        assert_eq!(ll_bundle_shape(b, &mut l, &mut d, &mut v), LL_OK);
        assert_eq!((l, d), (2, 32));

        let mut json = ptr::null_mut();
        assert_eq!(ll_generate(b, c("The lake").as_ptr(), 4, &mut json), LL_OK);
        let g: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(g["prompt"], "The lake");
        assert_eq!(g["generated_ids"].as_array().unwrap().len(), 4);

        assert_eq!(ll_lens_grid(b, c("The lake").as_ptr(), 3, 2, &mut json), LL_OK);
        let grid: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(grid["rows"].as_array().unwrap().len(), 3);
        assert_eq!(grid["generated_ids"].as_array().unwrap()[..], g["generated_ids"].as_array().unwrap()[..3]);
        ll_bundle_free(b);
    }
}

#[test]
fn logits_match_library() {
    unsafe {
        let b = toy();
        let mut ids = [0u32; 16];
        let mut n = 0;
        assert_eq!(ll_tokenize(b, c("The capital").as_ptr(), ids.as_mut_ptr(), ids.len(), &mut n), LL_OK);
        assert!(n > 0);

        let (mut l, mut d, mut v) = (0, 0, 0);
        ll_bundle_shape(b, &mut l, &mut d, &mut v);
        let mut small = vec![0.0; 4];
        let mut len = 0;
        let rc = ll_forward_logits(b, ids.as_ptr(), n, small.as_mut_ptr(), small.len(), &mut len);
        assert_eq!(rc, LL_ERR_BUFFER_TOO_SMALL);
        assert_eq!(len, v);

        let mut logits = vec![0.0; v];
        assert_eq!(ll_forward_logits(b, ids.as_ptr(), n, logits.as_mut_ptr(), v, &mut len), LL_OK);
        assert!(logits.iter().all(|x| x.is_finite()));

        let mut again = vec![0.0; v];
        ll_forward_logits(b, ids.as_ptr(), n, again.as_mut_ptr(), v, &mut len);
        assert_eq!(logits, again);
        ll_bundle_free(b);
    }
}

#[test]
fn save_load_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = c(tmp.path().join("b").to_str().unwrap());
    unsafe {
        let b = toy();
        assert_eq!(ll_bundle_save(b, dir.as_ptr()), LL_OK);
        let mut loaded = ptr::null_mut();
        assert_eq!(ll_bundle_load(dir.as_ptr(), &mut loaded), LL_OK);
        let (mut h1, mut h2) = (ptr::null_mut(), ptr::null_mut());
        ll_bundle_hash(b, &mut h1);
        ll_bundle_hash(loaded, &mut h2);
        let (h1, h2) = (take(h1), take(h2));
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        ll_bundle_free(b);
        ll_bundle_free(loaded);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut b = ptr::null_mut();
        assert_eq!(ll_bundle_synthesize(1, 2, 30, 4, 64, 32, &mut b), LL_ERR_VALIDATION);
        assert!(b.is_null());
        assert!(last_error().contains("config"));

        assert_eq!(ll_bundle_load(c("/nonexistent/bundle").as_ptr(), &mut b), LL_ERR_RUNTIME);
        assert!(last_error().contains("I/O"));

        assert_eq!(ll_bundle_load(ptr::null(), &mut b), LL_ERR_NULL_POINTER);
        let mut json = ptr::null_mut();
        assert_eq!(ll_generate(ptr::null(), c("x").as_ptr(), 1, &mut json), LL_ERR_NULL_POINTER);

        let bad = [0x66u8, 0xff, 0x00];
        let t = toy();
        assert_eq!(ll_generate(t, bad.as_ptr().cast(), 1, &mut json), LL_ERR_INVALID_UTF8);

        assert_eq!(
            ll_trace_grid(t, c("The lake").as_ptr(), c(" sun").as_ptr(), c(" boat").as_ptr(), 2, 0, &mut json),
            LL_ERR_VALIDATION
        );

        // Success clears the previous message.
        assert_eq!(ll_generate(t, c("The").as_ptr(), 1, &mut json), LL_OK);
        ll_string_free(json);
        assert!(ll_last_error().is_null());
        ll_bundle_free(t);
        ll_bundle_free(ptr::null_mut());
        ll_string_free(ptr::null_mut());
    }
}

#[test]
fn header_is_valid_c_and_cpp() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/lingualens.h")).unwrap();
    for sym in ["ll_bundle_load", "ll_trace_grid", "ll_forward_logits", "ll_last_error", "LL_ERR_PANIC"] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(root.join("include"))
            .arg(root.join("tests/header_smoke.c"))
            .output()
            .unwrap_or_else(|e| panic!("{compiler}: {e}"));
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
