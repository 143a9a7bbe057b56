//! Compressed-sensing reconstruction of sparse spectra.
//!
//! Each measurement runs the protocol with target `T_k(ω) = cos(kωτ)·sinc²(ωτ/2)`
//! and subtracts one shared base-ensemble exponent, so that
//! `E(χ_k - χ_base) = (Mτ²/2π)·c_k·∫ S(ω)·sinc²(ωτ/2)·cos(kωτ) dω`.
//! On a frequency grid this is linear in `x_i = S(ω_i)·sinc²(ω_iτ/2)`, and
//! `x` is recovered by LASSO.

pub mod cv;
pub mod lasso;
pub mod peaks;
pub mod phase;

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::experiment::{Ensemble, ExperimentPlan, Shots, Simulator};
use crate::numeric::sinc2;
use crate::rng::derive_path;
use crate::seqgen::{FirDesign, TargetFunction};
use crate::spectra::{FrequencyGrid, NoiseSpectrum};

pub use cv::{cross_validate, CvResult};
pub use lasso::{lasso_solve, refit_on_support, Lasso, LassoOptions, LassoSolution};
pub use peaks::{extract_peaks, linf_center_error, PeakOptions, PeakTable};

/// Fourier-lag measurements `y_j = χ̂_{k_j} - χ̂_base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Effective `c_j = 2·R(k_j)·(1 - k_j/M)` of each lag's realized ensemble.
    pub scales: Vec<f64>,
    pub chi_base: f64,
    pub chi_base_stderr: f64,
    pub segments: usize,
    pub tau: f64,
    pub omega_c: f64,
    pub plan: Option<ExperimentPlan>,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }

    /// The first `m` measurements.
    pub fn prefix(&self, m: usize) -> Self {
        let m = m.min(self.len());
        Self {
            lags: self.lags[..m].to_vec(),
            values: self.values[..m].to_vec(),
            stderr: self.stderr[..m].to_vec(),
            scales: self.scales[..m].to_vec(),
            ..self.clone()
        }
    }

    /// Number of distinct experiment configurations: one per lag plus the base set.
    pub fn n_set(&self) -> usize {
        self.len() + 1
    }
}

/// Ensembles for single-lag cosine targets, built once per `(M, τ)`.
#[derive(Debug, Clone)]
pub struct LagEnsembles {
    segments: usize,
    tau: f64,
    omega_c: f64,
    taps: Option<usize>,
    cache: std::collections::HashMap<usize, Ensemble>,
}

impl LagEnsembles {
    pub fn new(segments: usize, omega_c: f64, taps: Option<usize>) -> Self {
        Self {
            segments,
            tau: PI / omega_c,
            omega_c,
            taps,
            cache: Default::default(),
        }
    }

    /// Designs every lag in `lags`, failing with the full list of infeasible ones.
    pub fn prepare(&mut self, lags: &[usize]) -> Result<()> {
        let missing: Vec<usize> = lags
            .iter()
            .copied()
            .filter(|k| !self.cache.contains_key(k))
            .collect();
        let built: Vec<(usize, Result<Ensemble>)> = missing
            .par_iter()
            .map(|&k| {
                let r = TargetFunction::cos_lag(k, self.omega_c).and_then(|t| {
                    Ensemble::for_target(
                        &t,
                        self.segments,
                        self.tau,
                        self.taps.map(|n| n.max(k + 1)),
                    )
                });
                (k, r)
            })
            .collect();
        let mut bad = Vec::new();
        for (k, r) in built {
            match r {
                Ok(e) => {
                    self.cache.insert(k, e);
                }
                Err(_) => bad.push(k),
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            bad.sort_unstable();
            Err(Error::InfeasibleLags { lags: bad })
        }
    }

    pub fn get(&self, k: usize) -> Option<&Ensemble> {
        self.cache.get(&k)
    }

    /// `2·R̂(k)·(1 - k/M)` of the realized design.
    pub fn scale(&self, k: usize) -> f64 {
        let e = &self.cache[&k];
        let r = e.design.realized_profile(self.segments);
        2.0 * r.r.get(k).copied().unwrap_or(0.0) * (1.0 - k as f64 / self.segments as f64)
    }
}

fn check_lags(lags: &[usize], segments: usize) -> Result<()> {
    if lags.is_empty() {
        return Err(invalid("at least one lag is required"));
    }
    let mut seen = HashSet::new();
    for &k in lags {
        if k == 0 || k >= segments {
            return Err(invalid(format!("lag {k} outside 1..{segments}")));
        }
        if !seen.insert(k) {
            return Err(invalid(format!("lag {k} repeated")));
        }
    }
    Ok(())
}

/// Runs one experiment per lag plus a shared base experiment.
///
/// Each lag's sequences are seeded by the lag value, so a measurement set
/// for a prefix of `lags` reproduces the corresponding entries exactly.
pub fn acquire_measurements(
    spectrum: &NoiseSpectrum,
    lags: &[usize],
    plan: &ExperimentPlan,
) -> Result<MeasurementSet> {
    plan.validate()?;
    let mut ens = LagEnsembles::new(plan.segments, spectrum.omega_c(), plan.taps);
    let sim = Simulator::new(spectrum, plan.segments, plan.tau);
    acquire_with(&sim, &mut ens, lags, plan, spectrum.omega_c())
}

/// [`acquire_measurements`] with a prebuilt simulator and ensemble cache.
pub fn acquire_with(
    sim: &Simulator,
    ensembles: &mut LagEnsembles,
    lags: &[usize],
    plan: &ExperimentPlan,
    omega_c: f64,
) -> Result<MeasurementSet> {
    plan.validate()?;
    if (plan.tau - PI / omega_c).abs() > 1e-12 * plan.tau {
        return Err(invalid("segment duration must equal π/ω_c"));
    }
    check_lags(lags, plan.segments)?;
    ensembles.prepare(lags)?;
    let base = sim.run(
        &FirDesign::identity(),
        plan.base_sequences,
        plan.base_shots,
        derive_path(plan.seed, &[0]),
        plan.bootstrap,
    )?;
    let runs: Vec<_> = lags
        .iter()
        .map(|&k| {
            let e = ensembles.get(k).expect("prepared above");
            sim.run(
                &e.design,
                plan.sequences,
                plan.shots,
                derive_path(plan.seed, &[1, k as u64]),
                plan.bootstrap,
            )
        })
        .collect::<Result<_>>()?;
    Ok(MeasurementSet {
        lags: lags.to_vec(),
        values: runs.iter().map(|r| r.chi - base.chi).collect(),
        stderr: runs
            .iter()
            .map(|r| (r.stderr * r.stderr + base.stderr * base.stderr).sqrt())
            .collect(),
        scales: lags.iter().map(|&k| ensembles.scale(k)).collect(),
        chi_base: base.chi,
        chi_base_stderr: base.stderr,
        segments: plan.segments,
        tau: plan.tau,
        omega_c,
        plan: Some(plan.clone()),
    })
}

/// Noise-free measurements: `y_j = E(χ_k) - E(χ_base)` for the realized ensembles.
pub fn expected_measurements(
    sim: &Simulator,
    ensembles: &mut LagEnsembles,
    lags: &[usize],
    omega_c: f64,
) -> Result<MeasurementSet> {
    let segments = sim.segments();
    check_lags(lags, segments)?;
    ensembles.prepare(lags)?;
    let base = sim.expected_chi(&crate::seqgen::CorrelationProfile::base(segments));
    let values = lags
        .iter()
        .map(|&k| {
            let e = ensembles.get(k).expect("prepared above");
            sim.expected_chi(&e.design.realized_profile(segments)) - base
        })
        .collect();
    Ok(MeasurementSet {
        lags: lags.to_vec(),
        values,
        stderr: vec![0.0; lags.len()],
        scales: lags.iter().map(|&k| ensembles.scale(k)).collect(),
        chi_base: base,
        chi_base_stderr: 0.0,
        segments,
        tau: PI / omega_c,
        omega_c,
        plan: None,
    })
}

/// Linear map from `x_i = S(ω_i)·sinc²(ω_iτ/2)` on `grid` to expected
/// measurements, matching the even trapezoid rule used by the simulator
/// (the `ω = 0` node carries `S(ω_1)`).
pub fn design_matrix(grid: &FrequencyGrid, set: &MeasurementSet) -> DMatrix<f64> {
    let (w0, weights) = grid.trapezoid_weights();
    let tau = set.tau;
    let norm = set.segments as f64 * tau * tau / (2.0 * PI);
    let fold0 = w0 / sinc2(grid.point(0) * tau / 2.0);
    DMatrix::from_fn(set.len(), grid.len(), |j, i| {
        let k = set.lags[j] as f64;
        let mut v = weights[i] * (k * grid.point(i) * tau).cos();
        if i == 0 {
            v += fold0;
        }
        v * norm * set.scales[j]
    })
}

/// Entries below this fraction of the largest are dropped from the support.
pub const SUPPORT_FLOOR: f64 = 1e-9;

/// How the LASSO penalty is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum PenaltyRule {
    CrossValidation {
        folds: usize,
    },
    Fixed {
        penalty: f64,
    },
    /// Largest path penalty whose residual `‖Ax - y‖²` is within
    /// `Σ_j (sigmas·stderr_j)²`; the smallest path penalty if none is.
    Discrepancy {
        sigmas: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionOptions {
    pub rule: PenaltyRule,
    #[serde(default)]
    pub nonnegative: bool,
    /// Least-squares refit on the LASSO support.
    #[serde(default = "yes")]
    pub refit: bool,
    /// Number of peaks to report.
    pub top: usize,
    #[serde(default)]
    pub peaks: PeakOptions,
    /// Sigma multiple for the reported residual bound `ε = Σ (k·stderr_j)²`.
    #[serde(default = "three")]
    pub epsilon_sigmas: f64,
}

fn yes() -> bool {
    true
}

fn three() -> f64 {
    3.0
}

impl Default for ReconstructionOptions {
    fn default() -> Self {
        Self {
            rule: PenaltyRule::CrossValidation { folds: 10 },
            nonnegative: false,
            refit: true,
            top: 3,
            peaks: PeakOptions::default(),
            epsilon_sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub grid: FrequencyGrid,
    /// `S*(ω_i)`, non-negative.
    pub estimate: Vec<f64>,
    pub support: Vec<usize>,
    pub penalty: f64,
    pub cv: Option<CvResult>,
    /// `‖A·x - y‖²` of the reported estimate.
    pub residual: f64,
    pub epsilon: f64,
    pub peaks: PeakTable,
}

impl ReconstructionResult {
    pub fn within_epsilon(&self) -> bool {
        self.residual <= self.epsilon
    }
}

fn discrepancy_penalty(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    target: f64,
    options: LassoOptions,
) -> Result<f64> {
    let solver = Lasso::new(a, options);
    let top = solver.null_penalty(y);
    if top == 0.0 {
        return Ok(0.0);
    }
    let path = cv::penalty_path(top, cv::PATH_LENGTH);
    let mut warm: Option<DVector<f64>> = None;
    for &p in &path {
        let sol = solver.solve(y, p, warm.as_ref())?;
        if (y - a * &sol.x).norm_squared() <= target {
            return Ok(p);
        }
        warm = Some(sol.x);
    }
    Ok(*path.last().expect("path is non-empty"))
}

/// Solves for `S*` on `grid` from `set`.
pub fn reconstruct(
    set: &MeasurementSet,
    grid: &FrequencyGrid,
    options: &ReconstructionOptions,
) -> Result<ReconstructionResult> {
    if set.is_empty() {
        return Err(invalid("no measurements to reconstruct from"));
    }
    let a = design_matrix(grid, set);
    let y = DVector::from_column_slice(&set.values);
    let lopts = LassoOptions {
        nonnegative: options.nonnegative,
    };
    let epsilon: f64 = set
        .stderr
        .iter()
        .map(|s| (options.epsilon_sigmas * s).powi(2))
        .sum();
    let (penalty, cv) = match options.rule {
        PenaltyRule::Fixed { penalty } => (penalty, None),
        PenaltyRule::CrossValidation { folds } => {
            let r = cross_validate(&a, &y, folds, lopts)?;
            (r.penalty, Some(r))
        }
        PenaltyRule::Discrepancy { sigmas } => {
            let target: f64 = set.stderr.iter().map(|s| (sigmas * s).powi(2)).sum();
            (discrepancy_penalty(&a, &y, target, lopts)?, None)
        }
    };
    let mut x = lasso_solve(&a, &y, penalty, lopts)?.x;
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    if options.refit {
        let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 0.0).collect();
        if !support.is_empty() && support.len() <= a.nrows() {
            x = refit_on_support(&a, &y, &support);
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    // Refit leaves roundoff on columns it could not use.
    let floor = SUPPORT_FLOOR * x.max();
    x.iter_mut().filter(|v| **v <= floor).for_each(|v| *v = 0.0);
    let residual = (&y - &a * &x).norm_squared();
    let tau = set.tau;
    let estimate: Vec<f64> = (0..grid.len())
        .map(|i| x[i] / sinc2(grid.point(i) * tau / 2.0))
        .collect();
    let support = (0..grid.len()).filter(|&i| estimate[i] > 0.0).collect();
    let peaks = extract_peaks(grid, &estimate, options.top, options.peaks);
    Ok(ReconstructionResult {
        grid: *grid,
        estimate,
        support,
        penalty,
        cv,
        residual,
        epsilon,
        peaks,
    })
}

/// `m` distinct lags drawn uniformly without replacement from `1..M`, in draw
/// order (so prefixes are themselves uniform draws).
pub fn random_lags(segments: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if segments < 2 || m == 0 || m > segments - 1 {
        return Err(invalid(format!("cannot draw {m} lags from 1..{segments}")));
    }
    let mut rng = crate::rng::rng_from_seed(seed);
    Ok(rand::seq::index::sample(&mut rng, segments - 1, m)
        .into_iter()
        .map(|i| i + 1)
        .collect())
}

/// Default plan shape for sparse-spectrum experiments.
pub fn cs_plan(
    segments: usize,
    omega_c: f64,
    sequences: usize,
    shots: Shots,
    seed: u64,
) -> ExperimentPlan {
    ExperimentPlan::new(segments, PI / omega_c, sequences, shots, seed)
}
