//! Run configurations for the figure reproductions, their named presets, and
//! the library-level runners behind the CLI subcommands.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cpmg::{ComparisonConfig, CsArm, ResolutionScaling};
use crate::csrecon::phase::{MeasurementMode, PhaseConfig};
use crate::csrecon::{
    acquire_with, expected_measurements, random_lags, reconstruct, LagEnsembles, MeasurementSet,
    PeakOptions, PenaltyRule, ReconstructionOptions, ReconstructionResult,
};
use crate::error::{invalid, Result};
use crate::experiment::{
    ensemble_window, extract_target_window, Ensemble, EnsembleWindow, ExperimentPlan, Shots,
    Simulator,
};
use crate::pulse::WindowFunction;
use crate::rng::derive_path;
use crate::seqgen::{expected_window, CorrelationProfile, FirDesign, TargetFunction};
use crate::spectra::{quantum_dot_standin, random_sparse, FrequencyGrid, NoiseSpectrum, Peak};

pub const PRESET_NAMES: [&str; 4] = ["fig2", "fig3a", "fig3b", "fig5"];

/// Window construction for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub omega_c: f64,
    pub segments: usize,
    pub target: TargetFunction,
    /// Sequences for the targeted ensemble window.
    pub sequences: usize,
    /// Sequences for the base ensemble window.
    pub base_sequences: usize,
    pub grid_points: usize,
    #[serde(default)]
    pub taps: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRun {
    /// `E(W)` of the realized targeted ensemble.
    pub expected: WindowFunction,
    /// `E(W_base) = W` of i.i.d. signs.
    pub expected_base: WindowFunction,
    pub ensemble: EnsembleWindow,
    pub base_ensemble: EnsembleWindow,
    /// `W*` from the two sampled ensembles, in units of `Mτ²`.
    pub extracted: WindowFunction,
    /// `T(ω)` on the grid.
    pub target: Vec<f64>,
    pub c: f64,
    pub t0: f64,
    pub design: FirDesign,
}

pub fn run_window(config: &WindowConfig) -> Result<WindowRun> {
    if (config.target.omega_c - config.omega_c).abs() > 1e-12 * config.omega_c {
        return Err(invalid("target and run cutoffs differ"));
    }
    let tau = PI / config.omega_c;
    let grid = FrequencyGrid::new(config.grid_points, config.omega_c)?;
    let ens = Ensemble::for_target(&config.target, config.segments, tau, config.taps)?;
    let realized = ens.design.realized_profile(config.segments);
    let expected = expected_window(&realized, tau, &grid)?;
    let expected_base = expected_window(&CorrelationProfile::base(config.segments), tau, &grid)?;
    let ensemble = ensemble_window(
        &ens.design,
        config.segments,
        tau,
        &grid,
        config.sequences,
        derive_path(config.seed, &[0]),
    )?;
    let base_ensemble = ensemble_window(
        &FirDesign::identity(),
        config.segments,
        tau,
        &grid,
        config.base_sequences,
        derive_path(config.seed, &[1]),
    )?;
    let extracted = extract_target_window(
        &ensemble.mean,
        &base_ensemble.mean,
        ens.profile.c,
        ens.profile.t0,
    );
    Ok(WindowRun {
        target: grid
            .points()
            .iter()
            .map(|&w| config.target.evaluate(w))
            .collect(),
        expected,
        expected_base,
        ensemble,
        base_ensemble,
        extracted,
        c: ens.profile.c,
        t0: ens.profile.t0,
        design: ens.design,
    })
}

/// What `cs` reconstructs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CsTruth {
    /// `s` grid points with amplitudes `U[0.5, 1]·spectral_unit`.
    RandomSparse {
        sparsity: usize,
        spectral_unit: f64,
    },
    Spectrum {
        spectrum: NoiseSpectrum,
    },
}

/// A single sparse reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsConfig {
    pub omega_c: f64,
    pub grid_points: usize,
    pub segments: usize,
    /// Number of lag measurements.
    pub m: usize,
    pub sequences: usize,
    pub shots: Shots,
    pub mode: MeasurementMode,
    pub truth: CsTruth,
    pub reconstruction: ReconstructionOptions,
    pub seed: u64,
}

/// The measured instance handed to the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsInstance {
    pub grid: FrequencyGrid,
    /// True spectrum on the grid.
    pub truth: Vec<f64>,
    pub measurements: MeasurementSet,
    pub options: ReconstructionOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsOutcome {
    pub result: ReconstructionResult,
    pub support_exact: bool,
    /// `max_i |S*_i - S_i|`.
    pub linf_error: f64,
    /// `linf_error / max_i S_i`.
    pub relative_error: f64,
}

impl CsOutcome {
    /// Exact support and L∞ error within `tolerance` of the peak amplitude.
    pub fn recovered(&self, tolerance: f64) -> bool {
        self.support_exact && self.relative_error <= tolerance
    }
}

/// Draws the truth and lags and measures them.
pub fn cs_instance(config: &CsConfig) -> Result<CsInstance> {
    let grid = FrequencyGrid::new(config.grid_points, config.omega_c)?;
    let (spectrum, truth) = match &config.truth {
        CsTruth::RandomSparse {
            sparsity,
            spectral_unit,
        } => {
            if !(spectral_unit.is_finite() && *spectral_unit > 0.0) {
                return Err(invalid("spectral unit must be positive"));
            }
            let sparse = random_sparse(&grid, *sparsity, derive_path(config.seed, &[0]))?;
            let values: Vec<f64> = sparse.values.iter().map(|v| v * spectral_unit).collect();
            (NoiseSpectrum::gridded(&grid, values.clone())?, values)
        }
        CsTruth::Spectrum { spectrum } => {
            if (spectrum.omega_c() - config.omega_c).abs() > 1e-12 * config.omega_c {
                return Err(invalid("spectrum and run cutoffs differ"));
            }
            let values = grid
                .points()
                .iter()
                .map(|&w| spectrum.evaluate(w))
                .collect();
            (spectrum.clone(), values)
        }
    };
    let lags = random_lags(config.segments, config.m, derive_path(config.seed, &[1]))?;
    let tau = PI / config.omega_c;
    let sim = Simulator::new(&spectrum, config.segments, tau);
    let mut ens = LagEnsembles::new(config.segments, config.omega_c, None);
    let measurements = match config.mode {
        MeasurementMode::Expected => expected_measurements(&sim, &mut ens, &lags, config.omega_c)?,
        MeasurementMode::Simulated => {
            let mut plan = ExperimentPlan::new(
                config.segments,
                tau,
                config.sequences,
                config.shots,
                derive_path(config.seed, &[2]),
            );
            plan.bootstrap = 0;
            acquire_with(&sim, &mut ens, &lags, &plan, config.omega_c)?
        }
    };
    Ok(CsInstance {
        grid,
        truth,
        measurements,
        options: config.reconstruction,
    })
}

/// Reconstructs an instance and scores it against its truth.
pub fn solve_instance(instance: &CsInstance) -> Result<CsOutcome> {
    let result = reconstruct(&instance.measurements, &instance.grid, &instance.options)?;
    let true_support: Vec<usize> = (0..instance.truth.len())
        .filter(|&i| instance.truth[i] > 0.0)
        .collect();
    let linf_error = result
        .estimate
        .iter()
        .zip(&instance.truth)
        .map(|(e, t)| (e - t).abs())
        .fold(0.0, f64::max);
    let peak = instance.truth.iter().copied().fold(0.0, f64::max);
    Ok(CsOutcome {
        support_exact: result.support == true_support,
        relative_error: if peak > 0.0 {
            linf_error / peak
        } else {
            linf_error
        },
        linf_error,
        result,
    })
}

/// The comparison study: a peaked spectrum plus both arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub spectrum: NoiseSpectrum,
    pub comparison: ComparisonConfig,
    /// CPMG resolved-regime slope study; skipped when absent.
    #[serde(default)]
    pub scaling: Option<ResolutionScaling>,
}

/// Cutoff shared by every preset; it makes `τ = 1`.
pub const PRESET_OMEGA_C: f64 = PI;

/// Target window illustration: `M = 50`, `N₁ = 200`, `cos(3ωτ)·sinc²(ωτ/2)`.
pub fn fig2() -> WindowConfig {
    WindowConfig {
        omega_c: PRESET_OMEGA_C,
        segments: 50,
        target: TargetFunction::cos_lag(3, PRESET_OMEGA_C).expect("k ≥ 1"),
        sequences: 200,
        base_sequences: 200,
        grid_points: 500,
        taps: None,
        seed: 2,
    }
}

/// Single 2-sparse reconstruction: `N = 250`, `m = 12`, `(M, N₁, N₂) = (250, 1000, 50)`.
pub fn fig3a() -> CsConfig {
    CsConfig {
        omega_c: PRESET_OMEGA_C,
        grid_points: 250,
        segments: 250,
        m: 12,
        sequences: 1000,
        shots: Shots::Finite(50),
        mode: MeasurementMode::Simulated,
        truth: CsTruth::RandomSparse {
            sparsity: 2,
            spectral_unit: 0.05,
        },
        reconstruction: ReconstructionOptions {
            rule: PenaltyRule::CrossValidation { folds: 10 },
            nonnegative: true,
            top: 2,
            ..ReconstructionOptions::default()
        },
        seed: 3,
    }
}

/// Critical measurement count versus sparsity on noise-free measurements.
pub fn fig3b() -> PhaseConfig {
    PhaseConfig {
        grid_points: 250,
        omega_c: PRESET_OMEGA_C,
        segments: 250,
        sparsities: vec![2, 5, 8, 13],
        m_values: (2..=30).map(|i| 2 * i).collect(),
        trials: 20,
        sequences: 1000,
        shots: Shots::Finite(50),
        spectral_unit: 0.05,
        mode: MeasurementMode::Expected,
        rule: PenaltyRule::CrossValidation { folds: 10 },
        nonnegative: true,
        threshold: 0.5,
        seed: 4,
    }
}

/// Three close lines plus one weak isolated line.
pub fn standin_peaks() -> Vec<Peak> {
    [(1.20, 1.0), (1.24, 0.8), (1.28, 0.9), (2.30, 0.4)]
        .into_iter()
        .map(|(center, amplitude)| Peak {
            center,
            width: 0.002,
            amplitude,
        })
        .collect()
}

/// CS versus CPMG accuracy against the number of experiment settings.
pub fn fig5() -> CompareConfig {
    let peaks = PeakOptions {
        threshold: 0.1,
        max_step: 1,
    };
    CompareConfig {
        spectrum: quantum_dot_standin(&standin_peaks(), PRESET_OMEGA_C)
            .expect("peaks below cutoff"),
        comparison: ComparisonConfig {
            omega_c: PRESET_OMEGA_C,
            n_sets: vec![
                10, 20, 30, 40, 50, 60, 80, 100, 150, 200, 283, 400, 566, 800, 1131,
            ],
            replicas: 1,
            top: 3,
            peaks,
            cs: CsArm {
                segments: 200,
                grid_points: vec![167, 667],
                sequences: 2000,
                shots: Shots::Analytic,
                mode: MeasurementMode::Simulated,
                rule: PenaltyRule::CrossValidation { folds: 10 },
                nonnegative: true,
            },
            cpmg_shots: Shots::Analytic,
            seed: 5,
        },
        scaling: Some(ResolutionScaling {
            n_sets: vec![400, 566, 800, 1131],
            shifts: 32,
            span: 0.2,
            shots: Shots::Analytic,
            seed: 6,
        }),
    }
}

/// CS setting at which CPMG's matching cost is measured.
pub const REFERENCE_N_SET: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub method: String,
    pub n_set: usize,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsTransition {
    pub method: String,
    /// Two grid steps of the method's reconstruction grid.
    pub tolerance: f64,
    /// Smallest `N_set` whose mean error is within tolerance.
    pub n_set: Option<usize>,
    /// Mean error at [`REFERENCE_N_SET`].
    pub reference_error: Option<f64>,
    /// Smallest CPMG `N_set` at least as accurate as the reference error.
    pub cpmg_matching: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub truth: Vec<f64>,
    /// Half the smallest spacing of the scored centers.
    pub resolution_threshold: f64,
    pub means: Vec<MeanRow>,
    pub cs: Vec<CsTransition>,
    /// Smallest `N_set` from which every CPMG mean error is below the
    /// resolution threshold.
    pub cpmg_resolved: Option<usize>,
    pub cpmg_slope: Option<f64>,
}

/// Replica means and the crossing points of a comparison run.
pub fn summarize_comparison(
    config: &CompareConfig,
    rows: &[crate::cpmg::ComparisonRow],
    scaling: Option<&crate::numeric::LineFit>,
) -> Result<ComparisonSummary> {
    let truth = crate::cpmg::dominant_centers(&config.spectrum, config.comparison.top)?;
    let resolution_threshold = crate::cpmg::min_spacing(&truth).map_or(f64::INFINITY, |d| d / 2.0);
    let mut means: Vec<MeanRow> = Vec::new();
    let mut groups: Vec<((String, usize), Vec<f64>)> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.n_set);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.linf_error),
            None => groups.push((key, vec![r.linf_error])),
        }
    }
    for ((method, n_set), errs) in groups {
        means.push(MeanRow {
            method,
            n_set,
            mean_error: crate::numeric::mean(&errs),
        });
    }
    let series = |method: &str| -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = means
            .iter()
            .filter(|r| r.method == method)
            .map(|r| (r.n_set, r.mean_error))
            .collect();
        v.sort_by_key(|p| p.0);
        v
    };
    let cpmg = series("cpmg");
    let cpmg_resolved = (0..cpmg.len())
        .find(|&i| cpmg[i..].iter().all(|p| p.1 <= resolution_threshold))
        .map(|i| cpmg[i].0);
    let omega_c = config.comparison.omega_c;
    let cs = config
        .comparison
        .cs
        .grid_points
        .iter()
        .map(|&n| {
            let method = format!("cs-n{n}");
            let tolerance = 2.0 * omega_c / n as f64;
            let s = series(&method);
            let reference_error = s.iter().find(|p| p.0 == REFERENCE_N_SET).map(|p| p.1);
            CsTransition {
                n_set: s.iter().find(|p| p.1 <= tolerance).map(|p| p.0),
                cpmg_matching: reference_error
                    .and_then(|e| cpmg.iter().find(|p| p.1 <= e).map(|p| p.0)),
                reference_error,
                tolerance,
                method,
            }
        })
        .collect();
    Ok(ComparisonSummary {
        truth,
        resolution_threshold,
        means,
        cs,
        cpmg_resolved,
        cpmg_slope: scaling.map(|f| f.slope),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_json() {
        let w = fig2();
        assert_eq!(
            serde_json::from_str::<WindowConfig>(&serde_json::to_string(&w).unwrap()).unwrap(),
            w
        );
        let c = fig3a();
        assert_eq!(
            serde_json::from_str::<CsConfig>(&serde_json::to_string(&c).unwrap()).unwrap(),
            c
        );
        let p = fig3b();
        assert_eq!(
            serde_json::from_str::<PhaseConfig>(&serde_json::to_string(&p).unwrap()).unwrap(),
            p
        );
        let f = fig5();
        assert_eq!(
            serde_json::from_str::<CompareConfig>(&serde_json::to_string(&f).unwrap()).unwrap(),
            f
        );
    }

    #[test]
    fn noise_free_two_sparse_is_recovered() {
        let mut c = fig3a();
        c.mode = MeasurementMode::Expected;
        let inst = cs_instance(&c).unwrap();
        assert_eq!(inst.measurements.len(), 12);
        let out = solve_instance(&inst).unwrap();
        assert!(
            out.recovered(0.1),
            "{:?} {}",
            out.result.support,
            out.relative_error
        );
    }

    #[test]
    fn zero_lambda_window_matches_base() {
        let mut w = fig2();
        w.target = TargetFunction::zero(PRESET_OMEGA_C);
        w.grid_points = 50;
        let r = run_window(&w).unwrap();
        assert_eq!(r.expected.values, r.expected_base.values);
    }
}
