//! C ABI over the randpulse toolkit.
//!
//! Every fallible call returns an [`RpStatus`]; on failure the message is
//! available from [`rp_last_error`] on the same thread until the next call.
//! Objects are opaque handles released with their `_free` function.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use randpulse::csrecon::{
    acquire_measurements, reconstruct, MeasurementSet, PenaltyRule, ReconstructionOptions,
};
use randpulse::experiment::{ExperimentPlan, Shots};
use randpulse::pulse::{cpmg_window_at, PulseSequence};
use randpulse::spectra::{FrequencyGrid, NoiseSpectrum, Peak};
use randpulse::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpStatus {
    Ok = 0,
    InvalidArgument = 1,
    Infeasible = 2,
    DecoherenceFloor = 3,
    SolverFailure = 4,
    Io = 5,
    NullPointer = 6,
    Panic = 7,
}

/// Opaque spectral density.
pub struct RpSpectrum(NoiseSpectrum);

/// Opaque lag measurement set.
pub struct RpMeasurements(MeasurementSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RpStatus {
    match e {
        Error::InvalidArgument(_) => RpStatus::InvalidArgument,
        Error::InfeasibleTarget(_) | Error::DesignFailure { .. } | Error::InfeasibleLags { .. } => {
            RpStatus::Infeasible
        }
        Error::DecoherenceFloor { .. } => RpStatus::DecoherenceFloor,
        Error::SolverFailure { .. } => RpStatus::SolverFailure,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => RpStatus::Io,
    }
}

/// Runs `f`, recording errors and panics.
fn guard(f: impl FnOnce() -> Result<(), (RpStatus, String)>) -> RpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RpStatus::Panic
        }
    }
}

fn lib<T>(r: randpulse::Result<T>) -> Result<T, (RpStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), (RpStatus, String)> {
    if p.is_null() {
        Err((RpStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn rp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a spectrum from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rp_spectrum_from_json(
    json: *const c_char,
    out: *mut *mut RpSpectrum,
) -> RpStatus {
    guard(|| {
        non_null(json, "json")?;
        non_null(out, "out")?;
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (RpStatus::InvalidArgument, format!("json is not UTF-8: {e}")))?;
        let s: NoiseSpectrum = serde_json::from_str(text)
            .map_err(|e| (RpStatus::InvalidArgument, format!("bad spectrum: {e}")))?;
        *out = Box::into_raw(Box::new(RpSpectrum(s)));
        Ok(())
    })
}

/// Sum of `n` Gaussian lines below `omega_c`.
///
/// # Safety
/// The three arrays must hold `n` values each; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rp_spectrum_gaussian_peaks(
    centers: *const f64,
    widths: *const f64,
    amplitudes: *const f64,
    n: usize,
    omega_c: f64,
    out: *mut *mut RpSpectrum,
) -> RpStatus {
    guard(|| {
        non_null(out, "out")?;
        let peaks = if n == 0 {
            Vec::new()
        } else {
            non_null(centers, "centers")?;
            non_null(widths, "widths")?;
            non_null(amplitudes, "amplitudes")?;
            let (c, w, a) = (
                std::slice::from_raw_parts(centers, n),
                std::slice::from_raw_parts(widths, n),
                std::slice::from_raw_parts(amplitudes, n),
            );
            (0..n)
                .map(|i| Peak {
                    center: c[i],
                    width: w[i],
                    amplitude: a[i],
                })
                .collect()
        };
        let s = lib(NoiseSpectrum::gaussian_peaks(peaks, omega_c))?;
        *out = Box::into_raw(Box::new(RpSpectrum(s)));
        Ok(())
    })
}

/// # Safety
/// `spectrum` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rp_spectrum_free(spectrum: *mut RpSpectrum) {
    if !spectrum.is_null() {
        drop(Box::from_raw(spectrum));
    }
}

/// `S(ω)`.
///
/// # Safety
/// `spectrum` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rp_spectrum_evaluate(
    spectrum: *const RpSpectrum,
    omega: f64,
    out: *mut f64,
) -> RpStatus {
    guard(|| {
        non_null(spectrum, "spectrum")?;
        non_null(out, "out")?;
        *out = (*spectrum).0.evaluate(omega);
        Ok(())
    })
}

/// `W(ω) = |f̃(ω)|²` of a ±1 sign sequence with segment duration `tau`.
///
/// # Safety
/// `signs` must hold `m` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rp_window(
    signs: *const i8,
    m: usize,
    tau: f64,
    omega: f64,
    out: *mut f64,
) -> RpStatus {
    guard(|| {
        non_null(signs, "signs")?;
        non_null(out, "out")?;
        let seq = lib(PulseSequence::new(
            std::slice::from_raw_parts(signs, m).to_vec(),
            tau,
        ))?;
        *out = seq.window_at(omega);
        Ok(())
    })
}

/// Closed-form window of `m` CPMG pulses spaced by `tau`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rp_cpmg_window(m: usize, tau: f64, omega: f64, out: *mut f64) -> RpStatus {
    guard(|| {
        non_null(out, "out")?;
        if m == 0 || !(tau.is_finite() && tau > 0.0) {
            return Err((RpStatus::InvalidArgument, "need m ≥ 1 and τ > 0".into()));
        }
        *out = cpmg_window_at(m, tau, omega);
        Ok(())
    })
}

/// Simulates one measurement per lag plus a base run, `M` segments of
/// `τ = π/ω_c`. `shots = 0` uses exact coherences.
///
/// # Safety
/// `spectrum` and `out` must be valid and `lags` must hold `n_lags` values.
#[no_mangle]
pub unsafe extern "C" fn rp_acquire(
    spectrum: *const RpSpectrum,
    lags: *const usize,
    n_lags: usize,
    segments: usize,
    sequences: usize,
    shots: u64,
    seed: u64,
    out: *mut *mut RpMeasurements,
) -> RpStatus {
    guard(|| {
        non_null(spectrum, "spectrum")?;
        non_null(lags, "lags")?;
        non_null(out, "out")?;
        let s = &(*spectrum).0;
        let lags = std::slice::from_raw_parts(lags, n_lags);
        let shots = if shots == 0 {
            Shots::Analytic
        } else {
            Shots::Finite(shots)
        };
        let mut plan = ExperimentPlan::new(segments, PI / s.omega_c(), sequences, shots, seed);
        plan.bootstrap = 0;
        let set = lib(acquire_measurements(s, lags, &plan))?;
        *out = Box::into_raw(Box::new(RpMeasurements(set)));
        Ok(())
    })
}

/// Number of lag measurements.
///
/// # Safety
/// `set` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rp_measurements_len(
    set: *const RpMeasurements,
    out: *mut usize,
) -> RpStatus {
    guard(|| {
        non_null(set, "set")?;
        non_null(out, "out")?;
        *out = (*set).0.len();
        Ok(())
    })
}

/// # Safety
/// `set` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rp_measurements_free(set: *mut RpMeasurements) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Reconstructs `S` on `grid_points` points of `(0, ω_c]` into `estimate`.
/// `folds = 0` uses the fixed `penalty` instead of cross-validation.
///
/// # Safety
/// `set` must be valid and `estimate` must hold `grid_points` values.
#[no_mangle]
pub unsafe extern "C" fn rp_reconstruct(
    set: *const RpMeasurements,
    grid_points: usize,
    folds: usize,
    penalty: f64,
    nonnegative: bool,
    estimate: *mut f64,
) -> RpStatus {
    guard(|| {
        non_null(set, "set")?;
        non_null(estimate, "estimate")?;
        let set = &(*set).0;
        let grid = lib(FrequencyGrid::new(grid_points, set.omega_c))?;
        let options = ReconstructionOptions {
            rule: if folds == 0 {
                PenaltyRule::Fixed { penalty }
            } else {
                PenaltyRule::CrossValidation { folds }
            },
            nonnegative,
            ..ReconstructionOptions::default()
        };
        let r = lib(reconstruct(set, &grid, &options))?;
        std::slice::from_raw_parts_mut(estimate, grid_points).copy_from_slice(&r.estimate);
        Ok(())
    })
}
