//! Pulse sequences, filter functions and window functions.
//!
//! A sequence of `M` segments of length `τ` carries the filter function
//! `f(t) = U_i` on `[(i-1)τ, iτ]`. Its window is `W(ω) = |f̃(ω)|²` with
//!
//! ```text
//! f̃(ω) = τ·sinc(ωτ/2)·Σ_i U_i·exp(-iω(i-½)τ)
//! ```
//!
//! and the decay exponent is `χ = (1/2π)∫ S(ω)·W(ω) dω`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numeric::{pairwise_sum, sinc2};
use crate::spectra::{FrequencyGrid, NoiseSpectrum};

/// Phasor recurrences are re-seeded from `cis` this often.
const REANCHOR: usize = 64;

/// Below this `|cos(ωτ/2)|` the CPMG closed form switches to its limit.
const CPMG_SINGULAR: f64 = 1e-6;

/// A ±1 sign vector with a common segment duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSequence", into = "RawSequence")]
pub struct PulseSequence {
    tau: f64,
    signs: Vec<i8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawSequence {
    tau: f64,
    signs: Vec<i8>,
}

impl TryFrom<RawSequence> for PulseSequence {
    type Error = crate::Error;
    fn try_from(r: RawSequence) -> Result<Self> {
        PulseSequence::new(r.signs, r.tau)
    }
}

impl From<PulseSequence> for RawSequence {
    fn from(s: PulseSequence) -> Self {
        RawSequence {
            tau: s.tau,
            signs: s.signs,
        }
    }
}

impl PulseSequence {
    pub fn new(signs: Vec<i8>, tau: f64) -> Result<Self> {
        if signs.is_empty() {
            return Err(invalid("a pulse sequence needs at least one segment"));
        }
        if let Some(bad) = signs.iter().find(|s| s.abs() != 1) {
            return Err(invalid(format!("signs must be ±1, found {bad}")));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(invalid(format!(
                "segment duration must be positive, got {tau}"
            )));
        }
        Ok(Self { tau, signs })
    }

    /// Free evolution: all signs `+1`.
    pub fn constant(m: usize, tau: f64) -> Result<Self> {
        Self::new(vec![1; m], tau)
    }

    /// CPMG with `m` pulses over `T = mτ`, written on `2m` half-segments of
    /// `τ/2` so the `τ/2` free evolution at both ends is exact.
    pub fn cpmg(m: usize, tau: f64) -> Result<Self> {
        if m == 0 {
            return Err(invalid("CPMG needs at least one pulse"));
        }
        // Half-segment h (1-based) has sign (-1)^floor(h/2).
        let signs = (1..=2 * m)
            .map(|h| if (h / 2) % 2 == 0 { 1 } else { -1 })
            .collect();
        Self::new(signs, tau / 2.0)
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn total_time(&self) -> f64 {
        self.tau * self.signs.len() as f64
    }

    /// Times `iτ` at which a π pulse flips the sign.
    pub fn pulse_times(&self) -> Vec<f64> {
        self.signs
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0] != w[1])
            .map(|(i, _)| (i + 1) as f64 * self.tau)
            .collect()
    }

    pub fn negated(&self) -> Self {
        Self {
            tau: self.tau,
            signs: self.signs.iter().map(|s| -s).collect(),
        }
    }

    /// `Σ_i U_i·exp(-iθ(i-½))` at `θ = ωτ`.
    pub fn phase_sum(&self, theta: f64) -> Complex64 {
        let step = Complex64::cis(-theta);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut z = Complex64::cis(-0.5 * theta);
        for (i, &u) in self.signs.iter().enumerate() {
            if i % REANCHOR == 0 && i > 0 {
                z = Complex64::cis(-theta * (i as f64 + 0.5));
            }
            acc += z * f64::from(u);
            z *= step;
        }
        acc
    }

    /// `f̃(ω)`.
    pub fn filter_transform(&self, omega: f64) -> Complex64 {
        let x = omega * self.tau;
        self.phase_sum(x) * (self.tau * crate::numeric::sinc(x / 2.0))
    }

    /// `W(ω) = |f̃(ω)|²`.
    pub fn window_at(&self, omega: f64) -> f64 {
        let x = omega * self.tau;
        self.phase_sum(x).norm_sqr() * self.tau * self.tau * sinc2(x / 2.0)
    }

    /// Sign autocorrelation `r(d) = Σ_i U_i·U_{i+d}`, `d = 0..M-1`.
    pub fn autocorrelation(&self) -> Vec<i64> {
        let u = &self.signs;
        let m = u.len();
        (0..m)
            .map(|d| {
                u[..m - d]
                    .iter()
                    .zip(&u[d..])
                    .map(|(a, b)| i64::from(a * b))
                    .sum()
            })
            .collect()
    }
}

/// `W` sampled at `ω = 0` and on a frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFunction {
    pub grid: FrequencyGrid,
    pub at_zero: f64,
    pub values: Vec<f64>,
    /// Segment count and duration used for normalization (`Mτ²`).
    pub segments: usize,
    pub tau: f64,
}

impl WindowFunction {
    pub fn from_fn(
        grid: &FrequencyGrid,
        segments: usize,
        tau: f64,
        w: impl Fn(f64) -> f64,
    ) -> Self {
        Self {
            grid: *grid,
            at_zero: w(0.0),
            values: grid.points().into_iter().map(w).collect(),
            segments,
            tau,
        }
    }

    /// `Mτ²`, the scale of a base-ensemble window at `ω = 0`.
    pub fn norm(&self) -> f64 {
        self.segments as f64 * self.tau * self.tau
    }

    /// `(1/2π)∫ W dω` over the grid band.
    pub fn band_integral(&self) -> f64 {
        self.grid.integrate_even(self.at_zero, &self.values) / (2.0 * PI)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            at_zero: f(self.at_zero),
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// `W = |f̃|²` of `seq` on `grid`, from the closed Fourier sum.
pub fn window_exact(seq: &PulseSequence, grid: &FrequencyGrid) -> WindowFunction {
    WindowFunction::from_fn(grid, seq.len(), seq.tau(), |w| seq.window_at(w))
}

/// Closed-form CPMG window for `m` pulses with spacing `τ` (`T = mτ`):
///
/// ```text
/// W(ω) = 16/ω² · sin⁴(ωτ/4) · sin²(mωτ/2)/cos²(ωτ/2)   (m even)
/// W(ω) = 16/ω² · sin⁴(ωτ/4) · cos²(mωτ/2)/cos²(ωτ/2)   (m odd)
/// ```
pub fn cpmg_window_at(m: usize, tau: f64, omega: f64) -> f64 {
    if omega == 0.0 {
        // Even m: exact zero. Odd m: the net free evolution cancels too.
        return 0.0;
    }
    let x = omega * tau / 2.0;
    let s = (omega * tau / 4.0).sin();
    let envelope = 16.0 / (omega * omega) * s * s * s * s;
    let c = x.cos();
    let mf = m as f64;
    let ratio = if c.abs() < CPMG_SINGULAR {
        mf * mf
    } else {
        let num = if m % 2 == 0 {
            (mf * x).sin()
        } else {
            (mf * x).cos()
        };
        (num * num) / (c * c)
    };
    envelope * ratio
}

pub fn window_cpmg(m: usize, tau: f64, grid: &FrequencyGrid) -> Result<WindowFunction> {
    if m == 0 {
        return Err(invalid("CPMG needs at least one pulse"));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(invalid(format!(
            "pulse spacing must be positive, got {tau}"
        )));
    }
    Ok(WindowFunction::from_fn(grid, m, tau, |w| {
        cpmg_window_at(m, tau, w)
    }))
}

/// `χ = (1/2π)∫ S·W dω` by the grid's even trapezoid rule.
pub fn chi_exact(spectrum: &NoiseSpectrum, window: &WindowFunction) -> f64 {
    let grid = &window.grid;
    let prod: Vec<f64> = grid
        .points()
        .iter()
        .zip(&window.values)
        .map(|(&w, &wv)| spectrum.evaluate(w) * wv)
        .collect();
    let at_zero = spectrum.evaluate(0.0) * window.at_zero;
    (grid.integrate_even(at_zero, &prod) / (2.0 * PI)).max(0.0)
}

/// `(1/2π)∫_{-∞}^{∞} W dω` evaluated numerically.
///
/// `W(ω) = G(ω)/ω²` with `G = 4·sin²(ωτ/2)·|P(ωτ)|²` periodic in `ω` with
/// period `2π/τ`. The integral is taken by trapezoid over
/// `[-periods·2π/τ, periods·2π/τ]` (so `|P|²` is evaluated on one period only)
/// and the `1/ω²` tail beyond is added as `2·Ḡ/Ω`.
pub fn parseval_integral(seq: &PulseSequence, periods: usize) -> f64 {
    let m = seq.len();
    let tau = seq.tau();
    let per_period = (16 * m).max(1024);
    let h = 2.0 * PI / (tau * per_period as f64);
    let g: Vec<f64> = (0..per_period)
        .map(|j| {
            let theta = j as f64 * h * tau;
            let s = (theta / 2.0).sin();
            4.0 * s * s * seq.phase_sum(theta).norm_sqr()
        })
        .collect();
    let g_mean = pairwise_sum(&g) / per_period as f64;

    let total = periods.max(1) * per_period;
    let mut terms = Vec::with_capacity(total + 1);
    // ω = 0 node: W(0) = τ²·(ΣU)², half weight on the one-sided half-line.
    let sum_u: f64 = seq.signs().iter().map(|&u| f64::from(u)).sum();
    terms.push(0.5 * tau * tau * sum_u * sum_u);
    for j in 1..=total {
        let w = j as f64 * h;
        let weight = if j == total { 0.5 } else { 1.0 };
        terms.push(weight * g[j % per_period] / (w * w));
    }
    let omega_max = total as f64 * h;
    let one_sided = h * pairwise_sum(&terms) + g_mean / omega_max;
    2.0 * one_sided / (2.0 * PI)
}

/// Precomputed lag kernel for fast decay exponents of many sequences that
/// share `(M, τ)` and a spectrum.
///
/// With `r(d)` the sign autocorrelation,
/// `χ_U = M·K(0) + 2·Σ_{d≥1} r(d)·K(d)` where
/// `K(d) = (1/2π)∫ S(ω)·τ²·sinc²(ωτ/2)·cos(dωτ) dω` on the quadrature grid.
/// This equals [`chi_exact`] of [`window_exact`] on the same grid up to
/// rounding.
#[derive(Debug, Clone)]
pub struct ChiKernel {
    kernel: Vec<f64>,
    tau: f64,
}

impl ChiKernel {
    pub fn new(spectrum: &NoiseSpectrum, segments: usize, tau: f64, grid: &FrequencyGrid) -> Self {
        let (w0, weights) = grid.trapezoid_weights();
        let mut nodes: Vec<(f64, f64)> = Vec::with_capacity(grid.len() + 1);
        nodes.push((0.0, w0 * spectrum.evaluate(0.0) * tau * tau));
        for (i, &wi) in weights.iter().enumerate() {
            let w = grid.point(i);
            let s = spectrum.evaluate(w);
            if s != 0.0 {
                nodes.push((w * tau, wi * s * tau * tau * sinc2(w * tau / 2.0)));
            }
        }
        let mut kernel = vec![0.0; segments];
        let mut scratch = vec![0.0; nodes.len()];
        // Chebyshev recurrence cos((d+1)θ) = 2cosθ·cos(dθ) - cos((d-1)θ),
        // re-anchored periodically.
        let mut prev: Vec<f64> = nodes.iter().map(|&(th, _)| th.cos()).collect();
        let mut cur: Vec<f64> = vec![1.0; nodes.len()];
        let two_cos: Vec<f64> = prev.iter().map(|c| 2.0 * c).collect();
        for (d, k) in kernel.iter_mut().enumerate() {
            if d > 0 {
                for j in 0..nodes.len() {
                    let next = if d % REANCHOR == 0 {
                        (d as f64 * nodes[j].0).cos()
                    } else {
                        two_cos[j] * cur[j] - prev[j]
                    };
                    prev[j] = cur[j];
                    cur[j] = next;
                }
            }
            for (j, &(_, a)) in nodes.iter().enumerate() {
                scratch[j] = a * cur[j];
            }
            *k = pairwise_sum(&scratch) / (2.0 * PI);
        }
        Self { kernel, tau }
    }

    pub fn lags(&self) -> &[f64] {
        &self.kernel
    }

    pub fn chi(&self, seq: &PulseSequence) -> f64 {
        debug_assert_eq!(seq.len(), self.kernel.len());
        debug_assert_eq!(seq.tau(), self.tau);
        let r = seq.autocorrelation();
        let mut terms = Vec::with_capacity(r.len());
        terms.push(r[0] as f64 * self.kernel[0]);
        for (rd, kd) in r.iter().zip(&self.kernel).skip(1) {
            terms.push(2.0 * *rd as f64 * kd);
        }
        pairwise_sum(&terms).max(0.0)
    }
}

/// Quadrature grid for decay exponents of `M`-segment sequences: resolves
/// the spectrum's features and the window's `2π/(Mτ)` fine structure.
pub fn chi_grid(spectrum: &NoiseSpectrum, segments: usize, tau: f64) -> FrequencyGrid {
    if let Some(g) = spectrum.native_grid() {
        return g;
    }
    let wc = spectrum.omega_c();
    let fringe = 2.0 * PI / (segments as f64 * tau);
    let min_points = (16.0 * wc / fringe).ceil() as usize;
    spectrum.quadrature_grid(min_points.max(256))
}
