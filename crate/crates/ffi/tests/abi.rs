use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use randpulse_ffi::*;

fn last_error() -> String {
    let p = rp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/randpulse.h"))
            .unwrap();
    for name in [
        "rp_last_error",
        "rp_version",
        "rp_spectrum_from_json",
        "rp_spectrum_gaussian_peaks",
        "rp_spectrum_free",
        "rp_spectrum_evaluate",
        "rp_window",
        "rp_cpmg_window",
        "rp_acquire",
        "rp_measurements_len",
        "rp_measurements_free",
        "rp_reconstruct",
        "RP_STATUS_SOLVER_FAILURE",
        "typedef struct RpSpectrum RpSpectrum",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/randpulse.h");
    for (lang, compiler) in [("c", "cc"), ("c++", "c++")] {
        let Ok(status) = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .status()
        else {
            eprintln!("{compiler} not available; skipping");
            continue;
        };
        assert!(status.success(), "{compiler} rejected the header");
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(rp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn windows_through_the_abi() {
    let signs = [1i8, -1, -1, 1];
    let mut w = f64::NAN;
    assert_eq!(
        unsafe { rp_window(signs.as_ptr(), 4, 1.0, 0.0, &mut w) },
        RpStatus::Ok
    );
    assert!(w.abs() < 1e-24);
    let constant = [1i8; 5];
    assert_eq!(
        unsafe { rp_window(constant.as_ptr(), 5, 1.0, 0.0, &mut w) },
        RpStatus::Ok
    );
    assert!((w - 25.0).abs() < 1e-12);

    let bad = [1i8, 0];
    assert_eq!(
        unsafe { rp_window(bad.as_ptr(), 2, 1.0, 0.3, &mut w) },
        RpStatus::InvalidArgument
    );
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { rp_cpmg_window(4, 1.0, 0.7, &mut w) }, RpStatus::Ok);
    // Four pulses at 0.5, 1.5, 2.5, 3.5 as half-length segments.
    let cpmg = [1i8, -1, -1, 1, 1, -1, -1, 1];
    let mut direct = 0.0;
    assert_eq!(
        unsafe { rp_window(cpmg.as_ptr(), 8, 0.5, 0.7, &mut direct) },
        RpStatus::Ok
    );
    assert!(
        (w - direct).abs() <= 1e-9 * direct.abs().max(1e-12),
        "{w} vs {direct}"
    );
    assert_eq!(
        unsafe { rp_cpmg_window(0, 1.0, 0.7, &mut w) },
        RpStatus::InvalidArgument
    );
}

#[test]
fn null_pointers_are_reported() {
    let mut w = 0.0;
    assert_eq!(
        unsafe { rp_window(ptr::null(), 3, 1.0, 0.1, &mut w) },
        RpStatus::NullPointer
    );
    assert!(last_error().contains("signs"));
    assert_eq!(
        unsafe { rp_spectrum_evaluate(ptr::null(), 1.0, &mut w) },
        RpStatus::NullPointer
    );
    unsafe {
        rp_spectrum_free(ptr::null_mut());
        rp_measurements_free(ptr::null_mut());
    }
}

#[test]
fn error_message_clears_on_success() {
    let mut w = 0.0;
    assert_eq!(
        unsafe { rp_cpmg_window(0, 1.0, 0.7, &mut w) },
        RpStatus::InvalidArgument
    );
    assert!(!rp_last_error().is_null());
    assert_eq!(unsafe { rp_cpmg_window(2, 1.0, 0.7, &mut w) }, RpStatus::Ok);
    assert!(rp_last_error().is_null());
}

#[test]
fn spectrum_from_json() {
    let json =
        CString::new(r#"{"kind":"flat","params":{"level":0.25},"omega_c":3.141592653589793}"#)
            .unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { rp_spectrum_from_json(json.as_ptr(), &mut s) },
        RpStatus::Ok
    );
    let mut v = 0.0;
    assert_eq!(
        unsafe { rp_spectrum_evaluate(s, 1.0, &mut v) },
        RpStatus::Ok
    );
    assert_eq!(v, 0.25);
    unsafe { rp_spectrum_free(s) };

    let bad = CString::new(r#"{"kind":"flat","params":{"level":-1},"omega_c":1}"#).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { rp_spectrum_from_json(bad.as_ptr(), &mut s) },
        RpStatus::InvalidArgument
    );
    assert!(s.is_null());
    assert!(last_error().contains("non-negative"), "{}", last_error());
}

#[test]
fn acquire_and_reconstruct_one_line() {
    let (c, w, a) = ([1.2f64], [0.004f64], [1.0f64]);
    let mut s = ptr::null_mut();
    let pi = std::f64::consts::PI;
    assert_eq!(
        unsafe { rp_spectrum_gaussian_peaks(c.as_ptr(), w.as_ptr(), a.as_ptr(), 1, pi, &mut s) },
        RpStatus::Ok
    );
    let lags: Vec<usize> = (0..30).map(|k| k * 37 % 99 + 1).collect();
    let mut set = ptr::null_mut();
    assert_eq!(
        unsafe { rp_acquire(s, lags.as_ptr(), lags.len(), 100, 300, 0, 9, &mut set) },
        RpStatus::Ok
    );
    let mut n = 0;
    assert_eq!(unsafe { rp_measurements_len(set, &mut n) }, RpStatus::Ok);
    assert_eq!(n, 30);
    let mut est = vec![0.0; 200];
    assert_eq!(
        unsafe { rp_reconstruct(set, 200, 5, 0.0, true, est.as_mut_ptr()) },
        RpStatus::Ok
    );
    let best = (0..200).max_by(|&i, &j| est[i].total_cmp(&est[j])).unwrap();
    let omega = (best + 1) as f64 * pi / 200.0;
    assert!((omega - 1.2).abs() < 0.05, "peak at {omega}");

    let bad_lags = [0usize];
    let mut other = ptr::null_mut();
    assert_eq!(
        unsafe { rp_acquire(s, bad_lags.as_ptr(), 1, 100, 10, 0, 1, &mut other) },
        RpStatus::InvalidArgument
    );
    unsafe {
        rp_measurements_free(set);
        rp_spectrum_free(s);
    }
}
