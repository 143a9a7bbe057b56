//! CPMG sweep spectroscopy and resource accounting against compressed sensing.
//!
//! A CPMG train of `M` π pulses spaced by `τ` has its main window lobe at
//! `π/τ` with area `8T/π²` (`T = Mτ`), so `χ ≈ 8T/π² · S(π/τ)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csrecon::phase::MeasurementMode;
use crate::csrecon::{
    acquire_with, expected_measurements, extract_peaks, linf_center_error, random_lags,
    reconstruct, LagEnsembles, PeakOptions, PenaltyRule, ReconstructionOptions,
};
use crate::error::{invalid, Error, Result};
use crate::experiment::{ExperimentPlan, Shots, Simulator};
use crate::numeric::{log_log_slope, mean, LineFit};
use crate::pulse::{chi_exact, chi_grid, window_cpmg};
use crate::rng::{derive_path, rng_from_seed};
use crate::spectra::{FrequencyGrid, NoiseSpectrum, Peak};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpmgProbe {
    pub pulses: usize,
    pub tau: f64,
    /// Main-lobe frequency `π/τ`.
    pub frequency: f64,
}

/// CPMG trains sharing one total time `T`, with `M_j = 2j` pulses so that
/// the probes `2πj/T` form a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpmgSweep {
    pub total_time: f64,
    pub omega_c: f64,
    pub probes: Vec<CpmgProbe>,
    pub shots: Shots,
}

impl CpmgSweep {
    /// `n_set` probes uniformly covering `(0, ω_c]`; `T = 2π·n_set/ω_c`.
    pub fn new(n_set: usize, omega_c: f64, shots: Shots) -> Result<Self> {
        Self::with_total_time(2.0 * PI * n_set as f64 / omega_c, omega_c, shots)
    }

    /// All probes `2πj/T ≤ ω_c`, i.e. `N_set = ⌊ω_c·T/2π⌋` (up to rounding
    /// slack of `1e-9`).
    pub fn with_total_time(total_time: f64, omega_c: f64, shots: Shots) -> Result<Self> {
        if !(omega_c.is_finite() && omega_c > 0.0) {
            return Err(invalid(format!("cutoff must be positive, got {omega_c}")));
        }
        if !(total_time.is_finite() && total_time >= 0.0) {
            return Err(invalid(format!(
                "total time must be non-negative, got {total_time}"
            )));
        }
        let n_set = (omega_c * total_time / (2.0 * PI) + 1e-9).floor() as usize;
        let probes = (1..=n_set)
            .map(|j| {
                let pulses = 2 * j;
                let tau = total_time / pulses as f64;
                CpmgProbe {
                    pulses,
                    tau,
                    frequency: PI / tau,
                }
            })
            .collect();
        Ok(Self {
            total_time,
            omega_c,
            probes,
            shots,
        })
    }

    pub fn n_set(&self) -> usize {
        self.probes.len()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.probes.iter().map(|p| p.frequency).collect()
    }

    /// The probe frequencies as a grid (`None` for an empty sweep).
    pub fn probe_grid(&self) -> Option<FrequencyGrid> {
        let n = self.n_set();
        if n == 0 {
            return None;
        }
        FrequencyGrid::new(n, self.probes[n - 1].frequency).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpmgEstimate {
    pub frequencies: Vec<f64>,
    pub chi: Vec<f64>,
    /// `Ŝ(π/τ_j) = π²χ_j/(8T)`.
    pub estimate: Vec<f64>,
}

/// Runs every probe of `sweep` against `spectrum`.
///
/// With finite shots each probe's coherence is drawn as in the random-pulse
/// protocol, seeded by `derive_path(seed, [j])`.
pub fn cpmg_spectroscopy(
    spectrum: &NoiseSpectrum,
    sweep: &CpmgSweep,
    seed: u64,
) -> Result<CpmgEstimate> {
    let t = sweep.total_time;
    let mut probes = Vec::with_capacity(sweep.n_set());
    for p in &sweep.probes {
        if p.pulses < 2 || p.pulses % 2 != 0 {
            return Err(invalid(format!(
                "CPMG probes need an even pulse count ≥ 2, got {}",
                p.pulses
            )));
        }
        if p.frequency > spectrum.omega_c() * (1.0 + 1e-12) {
            log::warn!(
                "skipping probe at {} beyond the cutoff {}",
                p.frequency,
                spectrum.omega_c()
            );
            continue;
        }
        probes.push(*p);
    }
    if probes.is_empty() {
        return Ok(CpmgEstimate {
            frequencies: Vec::new(),
            chi: Vec::new(),
            estimate: Vec::new(),
        });
    }
    // Every probe shares T, so one grid resolves all their fringes.
    let widest = probes[probes.len() - 1];
    let grid = chi_grid(spectrum, widest.pulses, widest.tau);
    let chi: Vec<f64> = probes
        .par_iter()
        .enumerate()
        .map(|(j, p)| {
            let exact = chi_exact(spectrum, &window_cpmg(p.pulses, p.tau, &grid)?);
            measured_chi(exact, sweep.shots, derive_path(seed, &[j as u64]))
        })
        .collect::<Result<_>>()?;
    Ok(CpmgEstimate {
        frequencies: probes.iter().map(|p| p.frequency).collect(),
        estimate: chi.iter().map(|c| PI * PI * c / (8.0 * t)).collect(),
        chi,
    })
}

fn measured_chi(chi: f64, shots: Shots, seed: u64) -> Result<f64> {
    use rand_distr::{Binomial, Distribution};
    match shots {
        Shots::Analytic => Ok(chi),
        Shots::Finite(n) => {
            let p = (0.5 * (1.0 + (-chi).exp())).clamp(0.0, 1.0);
            let k = Binomial::new(n, p)
                .expect("probability clamped to [0, 1]")
                .sample(&mut rng_from_seed(seed));
            let c = 2.0 * k as f64 / n as f64 - 1.0;
            if c <= 0.0 {
                return Err(Error::DecoherenceFloor { mean_coherence: c });
            }
            Ok(-c.ln())
        }
    }
}

/// Compressed-sensing arm of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsArm {
    pub segments: usize,
    /// Reconstruction grids; each gives its own method label `cs-n<N>`.
    pub grid_points: Vec<usize>,
    pub sequences: usize,
    pub shots: Shots,
    pub mode: MeasurementMode,
    pub rule: PenaltyRule,
    #[serde(default)]
    pub nonnegative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub omega_c: f64,
    pub n_sets: Vec<usize>,
    pub replicas: usize,
    /// Number of dominant peaks scored.
    pub top: usize,
    pub peaks: PeakOptions,
    pub cs: CsArm,
    pub cpmg_shots: Shots,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub n_set: usize,
    pub linf_error: f64,
    pub replica: usize,
}

/// Largest-mass peak centers of a sum-of-Gaussians spectrum.
pub fn dominant_centers(spectrum: &NoiseSpectrum, top: usize) -> Result<Vec<f64>> {
    let mut peaks = spectrum
        .peaks()
        .ok_or_else(|| invalid("the comparison needs a spectrum with a peak table"))?;
    peaks.sort_by(|a, b| b.mass().total_cmp(&a.mass()));
    peaks.truncate(top);
    let mut c: Vec<f64> = peaks.iter().map(|p| p.center).collect();
    c.sort_by(f64::total_cmp);
    Ok(c)
}

/// Peak-center accuracy of CS and CPMG versus the number of distinct
/// experiment settings. CS uses `N_set = m + 1` (lags plus the base run);
/// values of `N_set` below 2 give no CS rows and `N_set = 0` no CPMG rows.
pub fn resource_comparison(
    spectrum: &NoiseSpectrum,
    config: &ComparisonConfig,
) -> Result<Vec<ComparisonRow>> {
    let truth = dominant_centers(spectrum, config.top)?;
    let omega_c = config.omega_c;
    if (spectrum.omega_c() - omega_c).abs() > 1e-12 * omega_c {
        return Err(invalid("spectrum and comparison cutoffs differ"));
    }
    let mut rows = Vec::new();

    for &n_set in &config.n_sets {
        if n_set == 0 {
            continue;
        }
        let sweep = CpmgSweep::new(n_set, omega_c, config.cpmg_shots)?;
        let grid = sweep.probe_grid().expect("n_set > 0");
        for replica in 0..config.replicas {
            let est = cpmg_spectroscopy(
                spectrum,
                &sweep,
                derive_path(config.seed, &[2, replica as u64, n_set as u64]),
            )?;
            let table = extract_peaks(&grid, &est.estimate, config.top, config.peaks);
            rows.push(ComparisonRow {
                method: "cpmg".into(),
                n_set,
                linf_error: linf_center_error(&table.centers(), &truth),
                replica,
            });
        }
    }

    let cs = &config.cs;
    let max_m = config
        .n_sets
        .iter()
        .copied()
        .max()
        .unwrap_or(0)
        .saturating_sub(1);
    if max_m == 0 {
        return Ok(rows);
    }
    let tau = PI / omega_c;
    let sim = Simulator::new(spectrum, cs.segments, tau);
    let mut ens = LagEnsembles::new(cs.segments, omega_c, None);
    let grids: Vec<FrequencyGrid> = cs
        .grid_points
        .iter()
        .map(|&n| FrequencyGrid::new(n, omega_c))
        .collect::<Result<_>>()?;
    for replica in 0..config.replicas {
        let seed = derive_path(config.seed, &[1, replica as u64]);
        let lags = random_lags(
            cs.segments,
            max_m.min(cs.segments - 1),
            derive_path(seed, &[0]),
        )?;
        let all = match cs.mode {
            MeasurementMode::Expected => expected_measurements(&sim, &mut ens, &lags, omega_c)?,
            MeasurementMode::Simulated => {
                let mut plan = ExperimentPlan::new(
                    cs.segments,
                    tau,
                    cs.sequences,
                    cs.shots,
                    derive_path(seed, &[1]),
                );
                plan.bootstrap = 0;
                acquire_with(&sim, &mut ens, &lags, &plan, omega_c)?
            }
        };
        let options = ReconstructionOptions {
            rule: cs.rule,
            nonnegative: cs.nonnegative,
            top: config.top,
            peaks: config.peaks,
            ..ReconstructionOptions::default()
        };
        for &n_set in &config.n_sets {
            if n_set < 2 || n_set - 1 > lags.len() {
                continue;
            }
            let set = all.prefix(n_set - 1);
            for grid in &grids {
                let r = reconstruct(&set, grid, &options)?;
                rows.push(ComparisonRow {
                    method: format!("cs-n{}", grid.len()),
                    n_set,
                    linf_error: linf_center_error(&r.peaks.centers(), &truth),
                    replica,
                });
            }
        }
    }
    Ok(rows)
}

/// Resolved-regime accuracy of CPMG versus `N_set`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionScaling {
    pub n_sets: Vec<usize>,
    /// Copies of the spectrum with all centers shifted by `span·j/shifts`.
    pub shifts: usize,
    pub span: f64,
    pub shots: Shots,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n_set: usize,
    pub mean_error: f64,
}

/// Mean CPMG peak-center error over evenly shifted copies of a peaked
/// spectrum, which averages out the grid-phase dependence of a single
/// spectrum; also returns the log-log slope against `N_set`.
pub fn cpmg_resolution_scaling(
    spectrum: &NoiseSpectrum,
    top: usize,
    peaks: PeakOptions,
    config: &ResolutionScaling,
) -> Result<(Vec<ScalingPoint>, Option<LineFit>)> {
    if config.shifts == 0 || config.n_sets.contains(&0) {
        return Err(invalid(
            "scaling needs at least one shift and positive N_set values",
        ));
    }
    let base = spectrum
        .peaks()
        .ok_or_else(|| invalid("the scaling study needs a spectrum with a peak table"))?;
    let omega_c = spectrum.omega_c();
    let shifted: Vec<NoiseSpectrum> = (0..config.shifts)
        .map(|j| {
            let d = config.span * j as f64 / config.shifts as f64;
            let moved: Vec<Peak> = base
                .iter()
                .map(|p| Peak {
                    center: p.center + d,
                    ..*p
                })
                .collect();
            NoiseSpectrum::gaussian_peaks(moved, omega_c)
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(config.n_sets.len());
    for &n_set in &config.n_sets {
        let sweep = CpmgSweep::new(n_set, omega_c, config.shots)?;
        let grid = sweep.probe_grid().expect("n_set > 0");
        let errs: Vec<f64> = shifted
            .par_iter()
            .enumerate()
            .map(|(j, s)| {
                let truth = dominant_centers(s, top)?;
                let est = cpmg_spectroscopy(
                    s,
                    &sweep,
                    derive_path(config.seed, &[j as u64, n_set as u64]),
                )?;
                let table = extract_peaks(&grid, &est.estimate, top, peaks);
                Ok(linf_center_error(&table.centers(), &truth))
            })
            .collect::<Result<_>>()?;
        points.push(ScalingPoint {
            n_set,
            mean_error: mean(&errs),
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.n_set as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_error).collect();
    let fit = if points.len() >= 2 && ys.iter().all(|&y| y > 0.0) {
        log_log_slope(&xs, &ys)
    } else {
        None
    };
    Ok((points, fit))
}

/// Smallest distance between adjacent sorted centers.
pub fn min_spacing(centers: &[f64]) -> Option<f64> {
    let mut c = centers.to_vec();
    c.sort_by(f64::total_cmp);
    c.windows(2).map(|w| w[1] - w[0]).min_by(f64::total_cmp)
}
