//! Band-limited noise spectral densities.
//!
//! A [`NoiseSpectrum`] is an even, non-negative density `S(ω)` that vanishes
//! beyond its cutoff `ω_c`. Spectra are stored one-sided; evenness is applied
//! on evaluation (`S(ω) = S(|ω|)`) and two-sided integrals are folded by the
//! quadrature in [`FrequencyGrid`].

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::rng_from_seed;

/// Gaussian peaks are treated as exactly zero this many widths from their
/// center. The neglected mass is below 1e-31 of the peak mass.
const PEAK_SUPPORT_WIDTHS: f64 = 12.0;

/// `N` uniformly spaced points `ω_i = i·ω_c/N`, `i = 1..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    n: usize,
    omega_c: f64,
}

impl FrequencyGrid {
    pub fn new(n: usize, omega_c: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("frequency grid needs at least one point"));
        }
        if !(omega_c.is_finite() && omega_c > 0.0) {
            return Err(invalid(format!(
                "cutoff must be positive and finite, got {omega_c}"
            )));
        }
        Ok(Self { n, omega_c })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn omega_c(&self) -> f64 {
        self.omega_c
    }

    pub fn spacing(&self) -> f64 {
        self.omega_c / self.n as f64
    }

    /// Zero-based: `point(0) = Δω`, `point(N-1) = ω_c`.
    pub fn point(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.omega_c / self.n as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Two-sided composite-trapezoid weights over `[-ω_c, ω_c]` for an even
    /// integrand sampled at `ω = 0` and at the grid points.
    ///
    /// Returns `(weight at zero, weights at grid points)`.
    pub fn trapezoid_weights(&self) -> (f64, Vec<f64>) {
        let h = self.spacing();
        let mut w = vec![2.0 * h; self.n];
        w[self.n - 1] = h;
        (h, w)
    }

    /// `∫_{-ω_c}^{ω_c} g(ω) dω` for even `g` given `g(0)` and `g(ω_i)`.
    pub fn integrate_even(&self, at_zero: f64, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.n, "sample count must match grid");
        let (w0, w) = self.trapezoid_weights();
        let terms: Vec<f64> = values.iter().zip(&w).map(|(v, wi)| v * wi).collect();
        w0 * at_zero + crate::numeric::pairwise_sum(&terms)
    }

    /// Index of the grid point nearest to `omega` (clamped to the grid).
    pub fn nearest_index(&self, omega: f64) -> usize {
        let i = (omega / self.spacing()).round() as i64 - 1;
        i.clamp(0, self.n as i64 - 1) as usize
    }
}

/// One Gaussian line `A·exp(-(|ω|-center)²/(2·width²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

impl Peak {
    fn value(&self, omega_abs: f64) -> f64 {
        let d = (omega_abs - self.center) / self.width;
        if d.abs() > PEAK_SUPPORT_WIDTHS {
            0.0
        } else {
            self.amplitude * (-0.5 * d * d).exp()
        }
    }

    /// `∫ A·exp(-(ω-c)²/2σ²) dω = A·σ·√(2π)` for one copy of the line.
    pub fn mass(&self) -> f64 {
        self.amplitude * self.width * (2.0 * std::f64::consts::PI).sqrt()
    }
}

/// Per-kind spectrum parameters; serialized as `{"kind": .., "params": ..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum SpectrumShape {
    Flat {
        level: f64,
    },
    GaussianPeaks {
        peaks: Vec<Peak>,
    },
    /// `amplitude / max(|ω|, floor)^exponent`.
    OneOverF {
        amplitude: f64,
        exponent: f64,
        floor: f64,
    },
    /// Samples on the grid `i·ω_c/N`, linearly interpolated with even
    /// extension (so `S` is constant on `[0, ω_1]`).
    Gridded {
        values: Vec<f64>,
    },
}

/// An even, non-negative spectral density truncated at `omega_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpectrum", into = "RawSpectrum")]
pub struct NoiseSpectrum {
    shape: SpectrumShape,
    omega_c: f64,
}

#[derive(Serialize, Deserialize)]
struct RawSpectrum {
    #[serde(flatten)]
    shape: SpectrumShape,
    omega_c: f64,
}

impl TryFrom<RawSpectrum> for NoiseSpectrum {
    type Error = crate::Error;
    fn try_from(raw: RawSpectrum) -> Result<Self> {
        NoiseSpectrum::new(raw.shape, raw.omega_c)
    }
}

impl From<NoiseSpectrum> for RawSpectrum {
    fn from(s: NoiseSpectrum) -> Self {
        RawSpectrum {
            shape: s.shape,
            omega_c: s.omega_c,
        }
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} must be finite and non-negative, got {v}"
        )))
    }
}

impl NoiseSpectrum {
    pub fn new(shape: SpectrumShape, omega_c: f64) -> Result<Self> {
        if !(omega_c.is_finite() && omega_c > 0.0) {
            return Err(invalid(format!(
                "cutoff must be positive and finite, got {omega_c}"
            )));
        }
        match &shape {
            SpectrumShape::Flat { level } => check_nonneg("flat level", *level)?,
            SpectrumShape::GaussianPeaks { peaks } => {
                for p in peaks {
                    check_nonneg("peak amplitude", p.amplitude)?;
                    check_nonneg("peak center", p.center)?;
                    if !(p.width.is_finite() && p.width > 0.0) {
                        return Err(invalid(format!(
                            "peak width must be positive, got {}",
                            p.width
                        )));
                    }
                }
            }
            SpectrumShape::OneOverF {
                amplitude,
                exponent,
                floor,
            } => {
                check_nonneg("1/f amplitude", *amplitude)?;
                check_nonneg("1/f exponent", *exponent)?;
                if !(floor.is_finite() && *floor > 0.0) {
                    return Err(invalid("1/f floor must be positive"));
                }
            }
            SpectrumShape::Gridded { values } => {
                if values.is_empty() {
                    return Err(invalid("gridded spectrum needs at least one value"));
                }
                for &v in values {
                    check_nonneg("gridded value", v)?;
                }
            }
        }
        Ok(Self { shape, omega_c })
    }

    pub fn flat(level: f64, omega_c: f64) -> Result<Self> {
        Self::new(SpectrumShape::Flat { level }, omega_c)
    }

    pub fn gaussian_peaks(peaks: Vec<Peak>, omega_c: f64) -> Result<Self> {
        Self::new(SpectrumShape::GaussianPeaks { peaks }, omega_c)
    }

    pub fn gridded(grid: &FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!(
                "expected {} gridded values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Self::new(SpectrumShape::Gridded { values }, grid.omega_c())
    }

    pub fn zero(omega_c: f64) -> Result<Self> {
        Self::flat(0.0, omega_c)
    }

    pub fn shape(&self) -> &SpectrumShape {
        &self.shape
    }

    pub fn omega_c(&self) -> f64 {
        self.omega_c
    }

    /// `S(ω)`. Even in `ω` by construction and zero beyond the cutoff.
    pub fn evaluate(&self, omega: f64) -> f64 {
        let a = omega.abs();
        if a > self.omega_c {
            return 0.0;
        }
        match &self.shape {
            SpectrumShape::Flat { level } => *level,
            SpectrumShape::GaussianPeaks { peaks } => peaks.iter().map(|p| p.value(a)).sum(),
            SpectrumShape::OneOverF {
                amplitude,
                exponent,
                floor,
            } => amplitude / a.max(*floor).powf(*exponent),
            SpectrumShape::Gridded { values } => {
                let n = values.len();
                let h = self.omega_c / n as f64;
                let x = a / h;
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

    /// The grid a gridded spectrum is defined on.
    pub fn native_grid(&self) -> Option<FrequencyGrid> {
        match &self.shape {
            SpectrumShape::Gridded { values } => {
                FrequencyGrid::new(values.len(), self.omega_c).ok()
            }
            _ => None,
        }
    }

    /// A quadrature grid fine enough to resolve this spectrum's narrowest
    /// feature, with at least `min_points` points.
    pub fn quadrature_grid(&self, min_points: usize) -> FrequencyGrid {
        if let Some(g) = self.native_grid() {
            if g.len() >= min_points {
                return g;
            }
        }
        let mut n = min_points.max(1);
        if let SpectrumShape::GaussianPeaks { peaks } = &self.shape {
            if let Some(w) = peaks.iter().map(|p| p.width).reduce(f64::min) {
                n = n.max((4.0 * self.omega_c / w).ceil() as usize);
            }
        }
        FrequencyGrid::new(n, self.omega_c).expect("cutoff validated at construction")
    }

    /// Peak table for sum-of-Gaussian spectra, sorted by center.
    pub fn peaks(&self) -> Option<Vec<Peak>> {
        match &self.shape {
            SpectrumShape::GaussianPeaks { peaks } => {
                let mut p = peaks.clone();
                p.sort_by(|a, b| a.center.total_cmp(&b.center));
                Some(p)
            }
            _ => None,
        }
    }
}

/// An `s`-sparse spectrum on a frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSpectrum {
    pub grid: FrequencyGrid,
    pub values: Vec<f64>,
    pub sparsity: usize,
}

impl SparseSpectrum {
    pub fn support(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_spectrum(&self) -> NoiseSpectrum {
        NoiseSpectrum::gridded(&self.grid, self.values.clone())
            .expect("values validated at construction")
    }
}

/// Draws `s` support points uniformly without replacement and gives each an
/// amplitude uniform in `[0.5, 1.0]`.
pub fn random_sparse(grid: &FrequencyGrid, s: usize, seed: u64) -> Result<SparseSpectrum> {
    if s == 0 || s > grid.len() {
        return Err(invalid(format!(
            "sparsity must lie in 1..={}, got {s}",
            grid.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut support = index::sample(&mut rng, grid.len(), s).into_vec();
    support.sort_unstable();
    let mut values = vec![0.0; grid.len()];
    for i in support {
        values[i] = rng.random_range(0.5..=1.0);
    }
    Ok(SparseSpectrum {
        grid: *grid,
        values,
        sparsity: s,
    })
}

/// Sum-of-Gaussians stand-in for a multi-line nuclear-spin spectrum.
pub fn quantum_dot_standin(peaks: &[Peak], omega_c: f64) -> Result<NoiseSpectrum> {
    if peaks.is_empty() {
        return Err(invalid("stand-in spectrum needs at least one peak"));
    }
    if let Some(p) = peaks.iter().find(|p| p.center >= omega_c) {
        return Err(invalid(format!(
            "peak center {} lies at or beyond the cutoff {omega_c}",
            p.center
        )));
    }
    NoiseSpectrum::gaussian_peaks(peaks.to_vec(), omega_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn flat_inside_and_beyond_cutoff() {
        let s = NoiseSpectrum::flat(1.0, PI).unwrap();
        assert_eq!(s.evaluate(0.5), 1.0);
        assert_eq!(s.evaluate(4.0), 0.0);
        assert_eq!(s.evaluate(-4.0), 0.0);
    }

    #[test]
    fn gaussian_peak_is_even() {
        let s = NoiseSpectrum::gaussian_peaks(
            vec![Peak {
                center: 1.0,
                width: 0.1,
                amplitude: 1.0,
            }],
            PI,
        )
        .unwrap();
        assert_eq!(s.evaluate(-1.0), s.evaluate(1.0));
        assert_eq!(s.evaluate(1.0), 1.0);
    }

    #[test]
    fn random_sparse_counts() {
        let g = FrequencyGrid::new(250, PI).unwrap();
        let sp = random_sparse(&g, 2, 7).unwrap();
        assert_eq!(sp.support().len(), 2);
        for i in sp.support() {
            assert!((0.5..=1.0).contains(&sp.values[i]));
        }

        let g10 = FrequencyGrid::new(10, PI).unwrap();
        let dense = random_sparse(&g10, 10, 1).unwrap();
        assert_eq!(dense.support().len(), 10);
        assert!(random_sparse(&g10, 11, 1).is_err());
        assert!(random_sparse(&g10, 0, 1).is_err());
    }

    #[test]
    fn random_sparse_is_reproducible() {
        let g = FrequencyGrid::new(250, PI).unwrap();
        let a = random_sparse(&g, 13, 99).unwrap();
        let b = random_sparse(&g, 13, 99).unwrap();
        assert_eq!(a.values, b.values);
        let c = random_sparse(&g, 13, 100).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn standin_local_maxima_at_centers() {
        let wc = PI;
        let centers = [0.3 * wc, 0.5 * wc, 0.8 * wc];
        let peaks: Vec<Peak> = centers
            .iter()
            .map(|&c| Peak {
                center: c,
                width: 0.01 * wc,
                amplitude: 1.0,
            })
            .collect();
        let s = quantum_dot_standin(&peaks, wc).unwrap();
        // Oracle: scan a fine grid for strict local maxima.
        let n = 20_000;
        let h = wc / n as f64;
        let v: Vec<f64> = (0..=n).map(|i| s.evaluate(i as f64 * h)).collect();
        let maxima: Vec<f64> = (1..n)
            .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1])
            .map(|i| i as f64 * h)
            .collect();
        assert_eq!(maxima.len(), 3);
        for (m, c) in maxima.iter().zip(&centers) {
            assert!((m - c).abs() <= h);
        }
    }

    #[test]
    fn standin_edge_cases() {
        let zero = quantum_dot_standin(
            &[Peak {
                center: 1.0,
                width: 0.1,
                amplitude: 0.0,
            }],
            PI,
        )
        .unwrap();
        for i in 0..100 {
            assert_eq!(zero.evaluate(i as f64 * 0.04), 0.0);
        }
        let beyond = Peak {
            center: 1.2 * PI,
            width: 0.1,
            amplitude: 1.0,
        };
        assert!(quantum_dot_standin(&[beyond], PI).is_err());
        assert!(quantum_dot_standin(&[], PI).is_err());
    }

    #[test]
    fn gridded_interpolation_is_even_and_hits_nodes() {
        let g = FrequencyGrid::new(4, 4.0).unwrap();
        let s = NoiseSpectrum::gridded(&g, vec![1.0, 3.0, 2.0, 0.0]).unwrap();
        assert_eq!(s.evaluate(0.0), 1.0);
        assert_eq!(s.evaluate(0.5), 1.0);
        assert_eq!(s.evaluate(2.0), 3.0);
        assert_eq!(s.evaluate(2.5), 2.5);
        assert_eq!(s.evaluate(-2.5), 2.5);
        assert_eq!(s.evaluate(4.0), 0.0);
        assert_eq!(s.evaluate(4.1), 0.0);
    }

    #[test]
    fn gaussian_mass_by_trapezoid() {
        // N >= 250 and width >= 5 grid steps: within 0.5 %.
        let wc = PI;
        let grid = FrequencyGrid::new(250, wc).unwrap();
        let peak = Peak {
            center: 0.5 * wc,
            width: 5.0 * grid.spacing(),
            amplitude: 0.7,
        };
        let s = NoiseSpectrum::gaussian_peaks(vec![peak], wc).unwrap();
        let vals: Vec<f64> = grid.points().iter().map(|&w| s.evaluate(w)).collect();
        let two_sided = grid.integrate_even(s.evaluate(0.0), &vals);
        // The even spectrum carries one copy of the line on each side.
        assert_relative_eq!(two_sided / 2.0, peak.mass(), max_relative = 5e-3);
    }

    #[test]
    fn json_shape() {
        let s = NoiseSpectrum::flat(2.0, 3.0).unwrap();
        let j = serde_json::to_value(&s).unwrap();
        assert_eq!(j["kind"], "flat");
        assert_eq!(j["params"]["level"], 2.0);
        assert_eq!(j["omega_c"], 3.0);
        let back: NoiseSpectrum = serde_json::from_value(j).unwrap();
        assert_eq!(back, s);
        let bad = serde_json::json!({"kind": "flat", "params": {"level": -1.0}, "omega_c": 1.0});
        assert!(serde_json::from_value::<NoiseSpectrum>(bad).is_err());
    }

    fn any_spectrum() -> impl Strategy<Value = NoiseSpectrum> {
        prop_oneof![
            (0.0..5.0f64).prop_map(|l| NoiseSpectrum::flat(l, PI).unwrap()),
            (0.1..3.0f64, 0.01..0.5f64, 0.0..2.0f64).prop_map(|(c, w, a)| {
                NoiseSpectrum::gaussian_peaks(
                    vec![Peak {
                        center: c,
                        width: w,
                        amplitude: a,
                    }],
                    PI,
                )
                .unwrap()
            }),
            (0.1..2.0f64, 0.5..2.0f64, 0.01..0.5f64).prop_map(|(a, e, f)| {
                NoiseSpectrum::new(
                    SpectrumShape::OneOverF {
                        amplitude: a,
                        exponent: e,
                        floor: f,
                    },
                    PI,
                )
                .unwrap()
            }),
            proptest::collection::vec(0.0..1.0f64, 1..40).prop_map(|v| {
                let g = FrequencyGrid::new(v.len(), PI).unwrap();
                NoiseSpectrum::gridded(&g, v).unwrap()
            }),
        ]
    }

    proptest! {
        #[test]
        fn evenness_nonnegativity_and_cutoff(s in any_spectrum(), w in -10.0..10.0f64) {
            prop_assert_eq!(s.evaluate(w), s.evaluate(-w));
            prop_assert!(s.evaluate(w) >= 0.0);
            if w.abs() > PI {
                prop_assert!(s.evaluate(w).abs() <= 1e-12);
            }
        }
    }
}
