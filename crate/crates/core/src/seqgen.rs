//! Random ±1 sequences with a prescribed autocovariance.
//!
//! A target weighting `T(ω)` is turned into a sign-domain autocovariance
//! `R(k)`, mapped to Gaussian-domain correlations `ρ(k) = sin(πR(k)/2)`,
//! realized by an FIR filter on i.i.d. normals, and finally signed. The sign
//! of a stationary Gaussian process has autocovariance `(2/π)·asin(ρ)`.
//!
//! Target normalization: with `τ = π/ω_c` and
//! `B(k) = (1/2ω_c)∫ T(ω)·cos(kωτ)/sinc²(ωτ/2) dω`, the profile is
//! `R(k) = c·B(k)·M/(M-k)` and `T₀ = B(0)`, so that the expected window is
//! `Mτ²·[c·T(ω) + (1 - c·T₀)·sinc²(ωτ/2)]` up to the lag cutoff.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::sinc2;
use crate::pulse::{PulseSequence, WindowFunction};
use crate::rng::rng_from_seed;
use crate::spectra::FrequencyGrid;

/// Minimum of `1 + 2Σ R(k)cos(kθ)(1-k/M)` and of the Gaussian spectral density.
pub const POSITIVITY_MARGIN: f64 = 0.05;
pub const EIGENVALUE_FLOOR: f64 = 1e-10;
pub const BISECTION_STEPS: usize = 20;
/// Residual above which an FIR design is rejected outright.
pub const DESIGN_FAILURE_RESIDUAL: f64 = 1e-2;
/// Residual downstream plans require.
pub const DESIGN_ACCEPT_RESIDUAL: f64 = 1e-3;

const POSITIVITY_SAMPLES: usize = 4096;
const TOEPLITZ_CHECK_MAX: usize = 33;
const FIR_RESTARTS: usize = 10;
const FIR_ITERATIONS: usize = 5000;

/// A target spectral weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum TargetShape {
    /// `T ≡ 0`: the base ensemble.
    Zero,
    /// `T(ω) = cos(kωτ)·sinc²(ωτ/2)`.
    CosLag { k: usize },
    /// Samples on `i·ω_c/N`, linearly interpolated with even extension.
    Sampled { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFunction {
    pub shape: TargetShape,
    /// Largest correlated lag.
    pub lambda: usize,
    pub omega_c: f64,
}

impl TargetFunction {
    pub fn zero(omega_c: f64) -> Self {
        Self {
            shape: TargetShape::Zero,
            lambda: 0,
            omega_c,
        }
    }

    pub fn cos_lag(k: usize, omega_c: f64) -> Result<Self> {
        if k == 0 {
            return Err(invalid("cos-lag target needs k ≥ 1"));
        }
        Ok(Self {
            shape: TargetShape::CosLag { k },
            lambda: k,
            omega_c,
        })
    }

    pub fn sampled(grid: &FrequencyGrid, values: Vec<f64>, lambda: usize) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!(
                "expected {} target samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("target samples must be finite"));
        }
        Ok(Self {
            shape: TargetShape::Sampled { values },
            lambda,
            omega_c: grid.omega_c(),
        })
    }

    /// `τ = π/ω_c`.
    pub fn tau(&self) -> f64 {
        PI / self.omega_c
    }

    pub fn evaluate(&self, omega: f64) -> f64 {
        let a = omega.abs();
        if a > self.omega_c {
            return 0.0;
        }
        let tau = self.tau();
        match &self.shape {
            TargetShape::Zero => 0.0,
            TargetShape::CosLag { k } => (*k as f64 * a * tau).cos() * sinc2(a * tau / 2.0),
            TargetShape::Sampled { values } => {
                let n = values.len();
                let x = a / (self.omega_c / n as f64);
                if x <= 1.0 {
                    return values[0];
                }
                let i = (x.floor() as usize).min(n);
                if i >= n {
                    return values[n - 1];
                }
                let t = x - i as f64;
                values[i - 1] * (1.0 - t) + values[i] * t
            }
        }
    }

    /// `B(k)` for `k = 0..=λ`.
    fn cosine_coefficients(&self) -> Vec<f64> {
        let lambda = self.lambda;
        if let TargetShape::Zero = self.shape {
            return vec![0.0; lambda + 1];
        }
        if let TargetShape::CosLag { k } = self.shape {
            let mut b = vec![0.0; lambda + 1];
            b[k] = 0.5;
            return b;
        }
        // θ = ωτ on [0, π]; B(k) = (1/π)∫₀^π g(θ)cos(kθ) dθ, g = T/sinc².
        let n = (16 * lambda).max(2048);
        let h = PI / n as f64;
        let tau = self.tau();
        let g: Vec<f64> = (0..=n)
            .map(|j| {
                let th = j as f64 * h;
                let wt = if j == 0 || j == n { 0.5 } else { 1.0 };
                wt * self.evaluate(th / tau) / sinc2(th / 2.0)
            })
            .collect();
        (0..=lambda)
            .map(|k| {
                let terms: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v * (k as f64 * j as f64 * h).cos())
                    .collect();
                crate::numeric::pairwise_sum(&terms) * h / PI
            })
            .collect()
    }
}

/// Sign-domain autocovariance `R(0..=λ)` and its Gaussian-domain image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub r: Vec<f64>,
    pub rho: Vec<f64>,
    pub feasible: bool,
    pub segments: usize,
    /// Positivity scale and constant term of the target this came from.
    pub c: f64,
    pub t0: f64,
}

impl CorrelationProfile {
    /// i.i.d. signs.
    pub fn base(segments: usize) -> Self {
        Self::from_r(vec![1.0], segments, 1.0, 0.0)
    }

    /// Wraps an explicit `R` (with `R(0) = 1`) and runs the feasibility checks.
    pub fn from_r(r: Vec<f64>, segments: usize, c: f64, t0: f64) -> Self {
        let rho = r.iter().map(|&x| (PI * x / 2.0).sin()).collect();
        let mut p = Self {
            r,
            rho,
            feasible: false,
            segments,
            c,
            t0,
        };
        p.feasible = p.check().is_ok();
        p
    }

    pub fn lambda(&self) -> usize {
        self.r.len() - 1
    }

    pub fn is_base(&self) -> bool {
        self.r[1..].iter().all(|&x| x == 0.0)
    }

    /// Why this profile cannot be realized, if it cannot.
    pub fn check(&self) -> std::result::Result<(), String> {
        if let Some((k, x)) = self
            .r
            .iter()
            .enumerate()
            .skip(1)
            .find(|(_, x)| x.abs() > 1.0)
        {
            return Err(format!("|R({k})| = {} exceeds 1", x.abs()));
        }
        let m = self.segments as f64;
        let window_min = trig_min(&self.r, |k, x| x * (1.0 - k as f64 / m));
        if window_min < POSITIVITY_MARGIN {
            return Err(format!("expected window factor dips to {window_min:.3}"));
        }
        let density_min = trig_min(&self.rho, |_, x| x);
        if density_min < POSITIVITY_MARGIN {
            return Err(format!(
                "Gaussian spectral density dips to {density_min:.3}"
            ));
        }
        // Toeplitz eigenvalues lie between the extremes of the spectral
        // density, so the check above already bounds them; the explicit
        // decomposition is kept for short profiles where it is cheap.
        if self.rho.len() > TOEPLITZ_CHECK_MAX {
            return Ok(());
        }
        let eig = toeplitz_min_eigenvalue(&self.rho);
        if eig < EIGENVALUE_FLOOR {
            return Err(format!("Gaussian Toeplitz matrix has eigenvalue {eig:.3e}"));
        }
        Ok(())
    }

    /// `Mτ²·sinc²(ωτ/2)·[1 + 2Σ R(k)cos(kωτ)(1-k/M)]`.
    pub fn expected_window_at(&self, tau: f64, omega: f64) -> f64 {
        let m = self.segments as f64;
        let th = omega * tau;
        let mut s = 1.0;
        for (k, &r) in self.r.iter().enumerate().skip(1) {
            s += 2.0 * r * (k as f64 * th).cos() * (1.0 - k as f64 / m);
        }
        m * tau * tau * sinc2(th / 2.0) * s
    }
}

/// `min_θ 1 + 2Σ_{k≥1} f(k, x_k)·cos(kθ)` on a fine grid over `[0, π]`.
fn trig_min(x: &[f64], f: impl Fn(usize, f64) -> f64) -> f64 {
    let terms: Vec<(f64, f64)> = x
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &v)| (k as f64, f(k, v)))
        .filter(|(_, c)| *c != 0.0)
        .collect();
    if terms.is_empty() {
        return 1.0;
    }
    let n = POSITIVITY_SAMPLES.max(32 * x.len());
    (0..=n)
        .map(|j| {
            let th = PI * j as f64 / n as f64;
            1.0 + 2.0 * terms.iter().map(|(k, c)| c * (k * th).cos()).sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn toeplitz_min_eigenvalue(rho: &[f64]) -> f64 {
    let n = rho.len();
    let t = DMatrix::from_fn(n, n, |i, j| rho[i.abs_diff(j)]);
    SymmetricEigen::new(t).eigenvalues.min()
}

/// Profile realizing `target` on `M` segments of `τ = π/ω_c`, scaled by the
/// largest feasible `c ≤ 1`.
pub fn correlation_from_target(
    target: &TargetFunction,
    segments: usize,
    tau: f64,
) -> Result<CorrelationProfile> {
    let expected_tau = target.tau();
    if (tau - expected_tau).abs() > 1e-12 * expected_tau {
        return Err(invalid(format!(
            "segment duration must equal π/ω_c = {expected_tau}, got {tau}"
        )));
    }
    if target.lambda >= segments {
        return Err(invalid(format!(
            "correlation cutoff {} must be below the segment count {segments}",
            target.lambda
        )));
    }
    let b = target.cosine_coefficients();
    let m = segments as f64;
    let build = |c: f64| {
        let mut r = vec![1.0];
        r.extend((1..b.len()).map(|k| c * b[k] * m / (m - k as f64)));
        CorrelationProfile::from_r(r, segments, c, b[0])
    };

    let full = build(1.0);
    if full.feasible {
        return Ok(full);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if build(mid).feasible {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return Err(Error::InfeasibleTarget(format!(
            "no scale c ≥ 2^-{BISECTION_STEPS} is feasible: {}",
            full.check().unwrap_err()
        )));
    }
    Ok(build(lo))
}

/// A unit-energy FIR filter and the Gaussian correlations it produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirDesign {
    pub coefficients: Vec<f64>,
    /// `ρ̂(k) = Σ_i a_i·a_{i+k}`, `k = 0..taps-1`.
    pub achieved: Vec<f64>,
    /// `Σ_{k≥1} (ρ̂(k) - ρ(k))²`, with `ρ(k) = 0` past the profile's cutoff.
    pub residual: f64,
}

impl FirDesign {
    pub fn identity() -> Self {
        Self::from_coefficients(vec![1.0], &[1.0])
    }

    pub fn from_coefficients(mut a: Vec<f64>, rho: &[f64]) -> Self {
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        a.iter_mut().for_each(|x| *x /= norm);
        let achieved = autocorrelate(&a);
        let residual = residual(&achieved, rho);
        Self {
            coefficients: a,
            achieved,
            residual,
        }
    }

    pub fn taps(&self) -> usize {
        self.coefficients.len()
    }

    /// Sign-domain autocovariance `(2/π)·asin(ρ̂(k))` the sampler produces.
    pub fn sign_autocovariance(&self) -> Vec<f64> {
        self.achieved
            .iter()
            .map(|&x| 2.0 / PI * x.clamp(-1.0, 1.0).asin())
            .collect()
    }

    /// The profile actually realized on `M` segments.
    pub fn realized_profile(&self, segments: usize) -> CorrelationProfile {
        let mut r = self.sign_autocovariance();
        let lambda = r.len().min(segments) - 1;
        r.truncate(lambda + 1);
        r[0] = 1.0;
        CorrelationProfile::from_r(r, segments, 1.0, 0.0)
    }
}

fn autocorrelate(a: &[f64]) -> Vec<f64> {
    (0..a.len())
        .map(|k| a.iter().zip(&a[k..]).map(|(x, y)| x * y).sum())
        .collect()
}

fn residual(achieved: &[f64], rho: &[f64]) -> f64 {
    let n = achieved.len().max(rho.len());
    (1..n)
        .map(|k| {
            let d = achieved.get(k).copied().unwrap_or(0.0) - rho.get(k).copied().unwrap_or(0.0);
            d * d
        })
        .sum()
}

/// FIR coefficients whose autocorrelation best matches `profile.rho`.
///
/// Exact constructions are used for i.i.d. and single-lag targets with
/// `|ρ| ≤ 1/2`; everything else goes through projected gradient descent on
/// the unit sphere with multiple restarts.
pub fn design_fir(profile: &CorrelationProfile, taps: usize) -> Result<FirDesign> {
    if taps == 0 {
        return Err(invalid("an FIR filter needs at least one tap"));
    }
    let rho = &profile.rho;
    if profile.is_base() {
        let mut a = vec![0.0; taps];
        a[0] = 1.0;
        return Ok(FirDesign::from_coefficients(a, rho));
    }
    let nonzero: Vec<usize> = (1..rho.len()).filter(|&k| rho[k] != 0.0).collect();
    if let [k] = nonzero[..] {
        let r = rho[k];
        if r.abs() <= 0.5 && taps > k {
            let alpha = ((1.0 + (1.0 - 4.0 * r * r).sqrt()) / 2.0).sqrt();
            let mut a = vec![0.0; taps];
            a[0] = alpha;
            a[k] = r / alpha;
            return Ok(FirDesign::from_coefficients(a, rho));
        }
    }

    let seed = crate::rng::splitmix64(taps as u64 ^ rho.len() as u64);
    let mut best = gradient_fit(warm_start(rho, taps), rho);
    let mut rng = rng_from_seed(seed);
    for _ in 1..FIR_RESTARTS {
        if best.residual <= 1e-14 {
            break;
        }
        let start: Vec<f64> = (0..taps)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let cand = gradient_fit(start, rho);
        if cand.residual < best.residual {
            best = cand;
        }
    }
    if best.residual > DESIGN_FAILURE_RESIDUAL {
        return Err(Error::DesignFailure {
            residual: best.residual,
            limit: DESIGN_FAILURE_RESIDUAL,
        });
    }
    Ok(best)
}

/// Zero-phase filter from the square root of the target's Gaussian spectrum.
fn warm_start(rho: &[f64], taps: usize) -> Vec<f64> {
    let n = 512.max(8 * taps);
    let sqrt_density: Vec<f64> = (0..n)
        .map(|j| {
            let th = PI * (j as f64 + 0.5) / n as f64;
            let d = 1.0
                + 2.0
                    * rho
                        .iter()
                        .enumerate()
                        .skip(1)
                        .map(|(k, r)| r * (k as f64 * th).cos())
                        .sum::<f64>();
            d.max(0.0).sqrt()
        })
        .collect();
    // Causal half of the symmetric impulse response, folded into `taps`.
    let half = taps.div_ceil(2);
    let h: Vec<f64> = (0..taps)
        .map(|i| {
            let lag = i as f64 - (half as f64 - 1.0);
            sqrt_density
                .iter()
                .enumerate()
                .map(|(j, s)| s * (lag * PI * (j as f64 + 0.5) / n as f64).cos())
                .sum::<f64>()
        })
        .collect();
    if h.iter().all(|&x| x == 0.0) {
        let mut a = vec![0.0; taps];
        a[0] = 1.0;
        return a;
    }
    h
}

fn gradient_fit(start: Vec<f64>, rho: &[f64]) -> FirDesign {
    let taps = start.len();
    let normalize = |mut a: Vec<f64>| {
        let n = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        a.iter_mut().for_each(|x| *x /= n);
        a
    };
    let objective = |a: &[f64]| residual(&autocorrelate(a), rho);
    let mut a = normalize(start);
    let mut f = objective(&a);
    let mut step = 0.1;
    for _ in 0..FIR_ITERATIONS {
        if f <= 1e-16 {
            break;
        }
        let ach = autocorrelate(&a);
        let err: Vec<f64> = (0..taps)
            .map(|k| {
                if k == 0 {
                    0.0
                } else {
                    ach[k] - rho.get(k).copied().unwrap_or(0.0)
                }
            })
            .collect();
        let mut g = vec![0.0; taps];
        for (j, gj) in g.iter_mut().enumerate() {
            for (k, e) in err.iter().enumerate().skip(1) {
                let mut v = 0.0;
                if j + k < taps {
                    v += a[j + k];
                }
                if j >= k {
                    v += a[j - k];
                }
                *gj += 2.0 * e * v;
            }
        }
        let radial: f64 = g.iter().zip(&a).map(|(x, y)| x * y).sum();
        g.iter_mut().zip(&a).for_each(|(gj, aj)| *gj -= radial * aj);

        let mut accepted = false;
        while step > 1e-12 {
            let trial = normalize(a.iter().zip(&g).map(|(x, d)| x - step * d).collect());
            let ft = objective(&trial);
            if ft < f {
                a = trial;
                f = ft;
                step *= 1.2;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    FirDesign::from_coefficients(a, rho)
}

/// `U_i = sign(Σ_j a_j·g_{i-j})` over i.i.d. standard normals, with
/// `taps - 1` warm-up samples so every output sees a full filter.
pub fn sample_sequence(
    design: &FirDesign,
    segments: usize,
    tau: f64,
    seed: u64,
) -> Result<PulseSequence> {
    if segments == 0 {
        return Err(invalid("a sequence needs at least one segment"));
    }
    let mut rng = rng_from_seed(seed);
    let taps = design.taps();
    let g: Vec<f64> = (0..segments + taps - 1)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let active: Vec<(usize, f64)> = design
        .coefficients
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, a)| *a != 0.0)
        .collect();
    let signs = (0..segments)
        .map(|i| {
            let head = i + taps - 1;
            let x: f64 = active.iter().map(|&(j, a)| a * g[head - j]).sum();
            if x >= 0.0 {
                1
            } else {
                -1
            }
        })
        .collect();
    PulseSequence::new(signs, tau)
}

/// Ensemble-mean window of sequences with autocovariance `profile.r`.
pub fn expected_window(
    profile: &CorrelationProfile,
    tau: f64,
    grid: &FrequencyGrid,
) -> Result<WindowFunction> {
    if profile.lambda() >= profile.segments {
        return Err(invalid(
            "correlation cutoff must be below the segment count",
        ));
    }
    Ok(WindowFunction::from_fn(grid, profile.segments, tau, |w| {
        profile.expected_window_at(tau, w)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cos_lag_profile_is_single_lag() {
        let wc = PI;
        let t = TargetFunction::cos_lag(3, wc).unwrap();
        let p = correlation_from_target(&t, 200, 1.0).unwrap();
        assert_eq!(p.lambda(), 3);
        assert_eq!(p.r[1], 0.0);
        assert_eq!(p.r[2], 0.0);
        assert_relative_eq!(p.r[3], p.c * 200.0 / (2.0 * 197.0), max_relative = 1e-14);
        assert!(p.c < 1.0 && p.c > 0.5);
        assert_eq!(p.t0, 0.0);
    }

    #[test]
    fn sampled_cosine_target_matches_named_form() {
        let wc = PI;
        let grid = FrequencyGrid::new(4000, wc).unwrap();
        let named = TargetFunction::cos_lag(2, wc).unwrap();
        let vals = grid.points().iter().map(|&w| named.evaluate(w)).collect();
        let sampled = TargetFunction::sampled(&grid, vals, 4).unwrap();
        let b = sampled.cosine_coefficients();
        assert!((b[2] - 0.5).abs() < 1e-5, "{b:?}");
        for k in [0, 1, 3, 4] {
            assert!(b[k].abs() < 1e-5, "{b:?}");
        }
    }

    #[test]
    fn zero_target_gives_base_profile() {
        let p = correlation_from_target(&TargetFunction::zero(PI), 50, 1.0).unwrap();
        assert!(p.is_base());
        assert_eq!(p.c * p.t0, 0.0);
    }

    #[test]
    fn tau_is_enforced() {
        let t = TargetFunction::cos_lag(1, PI).unwrap();
        assert!(correlation_from_target(&t, 10, 0.5).is_err());
        assert!(correlation_from_target(&t, 1, 1.0).is_err());
    }

    #[test]
    fn boxcar_design() {
        let lambda = 5;
        let rho: Vec<f64> = (0..lambda)
            .map(|k| 1.0 - k as f64 / lambda as f64)
            .collect();
        let d = FirDesign::from_coefficients(vec![1.0; lambda], &rho);
        for (k, &r) in rho.iter().enumerate() {
            assert_relative_eq!(d.achieved[k], r, epsilon = 1e-14);
        }
        assert!(d.residual < 1e-28);
    }

    #[test]
    fn gradient_fit_recovers_boxcar_profile() {
        let lambda = 4;
        let r: Vec<f64> = (0..lambda)
            .map(|k| 2.0 / PI * (1.0 - k as f64 / lambda as f64).asin())
            .collect();
        let p = CorrelationProfile::from_r(r, 100, 1.0, 0.0);
        let d = design_fir(&p, lambda).unwrap();
        assert!(d.residual < 1e-8, "residual {}", d.residual);
        let energy: f64 = d.coefficients.iter().map(|a| a * a).sum();
        assert!((energy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_sampler_is_unbiased() {
        let d = FirDesign::identity();
        let s = sample_sequence(&d, 100_000, 1.0, 9).unwrap();
        let mean: f64 = s.signs().iter().map(|&u| f64::from(u)).sum::<f64>() / 1e5;
        assert!(mean.abs() < 0.015);
        assert_eq!(s, sample_sequence(&d, 100_000, 1.0, 9).unwrap());
    }

    #[test]
    fn expected_window_base() {
        let grid = FrequencyGrid::new(50, PI).unwrap();
        let p = CorrelationProfile::base(40);
        let w = expected_window(&p, 1.0, &grid).unwrap();
        assert_eq!(w.at_zero, 40.0);
        for (i, v) in w.values.iter().enumerate() {
            assert_relative_eq!(*v, 40.0 * sinc2(grid.point(i) / 2.0), max_relative = 1e-14);
        }
    }
}
