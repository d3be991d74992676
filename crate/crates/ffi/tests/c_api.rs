use std::ffi::{CStr, CString};
use std::ptr;

use ebwave_ffi::*;

fn last_error() -> String {
    let p = ebw_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn basis() -> *mut EbwBasis {
    let name = CString::new("db8").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ebw_basis_new(name.as_ptr(), 10, &mut out) }, EbwStatus::Ok);
    out
}

fn normal_family() -> *mut EbwFamily {
    let json = CString::new(r#"{"family": "normal", "sigma": 1.0}"#).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ebw_family_from_json(json.as_ptr(), &mut out) }, EbwStatus::Ok);
    out
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(ebw_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn basis_round_trip() {
    let b = basis();
    let mut v = f64::NAN;
    assert_eq!(unsafe { ebw_basis_eval(b, 3.0, 0, &mut v) }, EbwStatus::Ok);
    assert!(v.is_finite());
    assert_eq!(unsafe { ebw_basis_eval(b, -1.0, 0, &mut v) }, EbwStatus::Ok);
    assert_eq!(v, 0.0);
    assert_eq!(unsafe { ebw_basis_eval(b, 1.0, 3, &mut v) }, EbwStatus::InvalidArgument);
    assert!(last_error().contains("order"));
    unsafe { ebw_basis_free(b) };
}

#[test]
fn unknown_wavelet_is_invalid_argument() {
    let name = CString::new("haar9").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ebw_basis_new(name.as_ptr(), 10, &mut out) }, EbwStatus::InvalidArgument);
    assert!(out.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_pointers_are_reported() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ebw_basis_new(ptr::null(), 10, &mut out) }, EbwStatus::NullPointer);
    let mut v = 0.0;
    assert_eq!(unsafe { ebw_basis_eval(ptr::null(), 0.0, 0, &mut v) }, EbwStatus::NullPointer);
    assert_eq!(unsafe { ebw_bayes_t(ptr::null(), 0.0, &mut v) }, EbwStatus::NullPointer);
    unsafe {
        ebw_basis_free(ptr::null_mut());
        ebw_family_free(ptr::null_mut());
        ebw_posterior_free(ptr::null_mut());
    }
}

#[test]
fn bad_json_is_invalid_argument() {
    let json = CString::new(r#"{"family": "normal", "sigma": -1.0}"#).unwrap();
    let mut out = ptr::null_mut();
    assert_ne!(unsafe { ebw_family_from_json(json.as_ptr(), &mut out) }, EbwStatus::Ok);
    let json = CString::new("not json").unwrap();
    assert_eq!(unsafe { ebw_family_from_json(json.as_ptr(), &mut out) }, EbwStatus::InvalidArgument);
}

#[test]
fn normal_normal_bayes_rule() {
    let fam = CString::new(r#"{"family": "normal", "sigma": 1.0}"#).unwrap();
    let prior = CString::new(r#"{"prior": "normal", "mu0": 0.0, "sigma0": 1.0}"#).unwrap();
    let mut post = ptr::null_mut();
    assert_eq!(
        unsafe { ebw_posterior_from_json(fam.as_ptr(), prior.as_ptr(), &mut post) },
        EbwStatus::Ok
    );
    for y in [-1.0, 0.0, 0.7, 2.5] {
        let mut t = f64::NAN;
        assert_eq!(unsafe { ebw_bayes_t(post, y, &mut t) }, EbwStatus::Ok);
        assert!((t - y / 2.0).abs() < 1e-8, "t({y}) = {t}");
        let mut p = f64::NAN;
        assert_eq!(unsafe { ebw_marginal(post, y, &mut p) }, EbwStatus::Ok);
        let exact = (-y * y / 4.0).exp() / (4.0 * std::f64::consts::PI).sqrt();
        assert!((p - exact).abs() < 1e-10);
    }
    unsafe { ebw_posterior_free(post) };
}

/// Deterministic N(0, 2) sample (the Normal–Normal marginal) from a
/// stratified inverse CDF, so the test needs no RNG.
fn marginal_sample(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            std::f64::consts::SQRT_2 * inv_phi(u)
        })
        .collect()
}

/// Acklam's rational approximation to the standard normal quantile.
fn inv_phi(p: f64) -> f64 {
    const A: [f64; 6] = [-3.969683028665376e1, 2.209460984245205e2, -2.759285104469687e2, 1.383577518672690e2, -3.066479806614716e1, 2.506628277459239];
    const B: [f64; 5] = [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [-7.784894002430293e-3, -3.223964580411365e-1, -2.400758277161838, -2.549732539343734, 4.374664141464968, 2.938163982698783];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < 0.02425 {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - 0.02425 {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

#[test]
fn estimate_tracks_bayes_rule() {
    let b = basis();
    let f = normal_family();
    let data = marginal_sample(20_000);
    let mut est = EbwEstimate::default();
    let status = unsafe { ebw_estimate(f, b, data.as_ptr(), data.len(), 0.5, 1, 1.0, &mut est) };
    assert_eq!(status, EbwStatus::Ok, "{}", last_error());
    assert_eq!(est.m, 1);
    assert!(est.size > 0 && est.delta > 0.0);
    assert!((est.t_hat - 0.25).abs() < 0.1, "t̂ = {}", est.t_hat);

    let mut auto = EbwEstimate::default();
    let status = unsafe { ebw_estimate_auto(f, b, data.as_ptr(), data.len(), 0.5, 1.0, &mut auto) };
    assert_eq!(status, EbwStatus::Ok, "{}", last_error());
    assert!(auto.m >= 1 && auto.t_hat.is_finite());
    unsafe {
        ebw_family_free(f);
        ebw_basis_free(b);
    }
}

#[test]
fn estimate_rejects_bad_arguments() {
    let b = basis();
    let f = normal_family();
    let mut est = EbwEstimate::default();
    let one = [0.0];
    assert_eq!(
        unsafe { ebw_estimate(f, b, ptr::null(), 0, 0.0, 1, 1.0, &mut est) },
        EbwStatus::NullPointer
    );
    assert_eq!(
        unsafe { ebw_estimate(f, b, one.as_ptr(), 1, 0.0, 1, 0.0, &mut est) },
        EbwStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { ebw_estimate(f, b, one.as_ptr(), 0, 0.0, 1, 1.0, &mut est) },
        EbwStatus::InvalidArgument
    );
    unsafe {
        ebw_family_free(f);
        ebw_basis_free(b);
    }
}

#[test]
fn header_is_generated_and_compiles() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/ebwave.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["ebw_estimate_auto", "ebw_bayes_t", "EBW_STATUS_LOW_DENSITY", "typedef struct EbwBasis EbwBasis"] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    // Syntax-check with the system C compiler when one is available.
    if let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", header])
        .output()
    {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
