//! End-to-end simulation of the dephasing measurement protocol.
//!
//! For each of `N₁` random sequences the qubit is prepared in `|+⟩`, evolves
//! under the sequence, and is measured `N₂` times. The survival probability
//! is `P₀ = (1 + e^{-χ_U})/2`; coherences are averaged over sequences before
//! the logarithm is taken.

use std::f64::consts::PI;

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{log_log_slope, mean, pairwise_sum, variance, LineFit};
use crate::pulse::{chi_grid, ChiKernel, PulseSequence, WindowFunction};
use crate::rng::{derive_path, rng_from_seed};
use crate::seqgen::{
    correlation_from_target, design_fir, sample_sequence, CorrelationProfile, FirDesign,
    TargetFunction, DESIGN_ACCEPT_RESIDUAL,
};
use crate::spectra::{FrequencyGrid, NoiseSpectrum};

/// Repetitions per sequence. `Analytic` replaces binomial sampling by the
/// exact coherence `e^{-χ_U}` (the `N₂ → ∞` limit); it is a test facility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ShotsRepr", into = "ShotsRepr")]
pub enum Shots {
    Finite(u64),
    Analytic,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ShotsRepr {
    Count(u64),
    Word(String),
}

impl TryFrom<ShotsRepr> for Shots {
    type Error = String;
    fn try_from(r: ShotsRepr) -> std::result::Result<Self, String> {
        match r {
            ShotsRepr::Count(n) => Ok(Shots::Finite(n)),
            ShotsRepr::Word(w) if w == "analytic" => Ok(Shots::Analytic),
            ShotsRepr::Word(w) => Err(format!("shots must be a count or \"analytic\", got {w:?}")),
        }
    }
}

impl From<Shots> for ShotsRepr {
    fn from(s: Shots) -> Self {
        match s {
            Shots::Finite(n) => ShotsRepr::Count(n),
            Shots::Analytic => ShotsRepr::Word("analytic".into()),
        }
    }
}

impl std::fmt::Display for Shots {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shots::Finite(n) => write!(f, "{n}"),
            Shots::Analytic => f.write_str("analytic"),
        }
    }
}

impl std::str::FromStr for Shots {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "analytic" {
            return Ok(Shots::Analytic);
        }
        s.parse::<u64>()
            .map(Shots::Finite)
            .map_err(|_| format!("shots must be a count or \"analytic\", got {s:?}"))
    }
}

fn default_bootstrap() -> usize {
    500
}

/// Counts and seed for one protocol run plus its base-ensemble companion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub segments: usize,
    pub tau: f64,
    pub sequences: usize,
    pub shots: Shots,
    pub base_sequences: usize,
    pub base_shots: Shots,
    pub seed: u64,
    /// Bootstrap resamples for the standard error; 0 uses the delta method.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// FIR length; defaults to the target's cutoff plus one.
    #[serde(default)]
    pub taps: Option<usize>,
}

impl ExperimentPlan {
    /// `N₁` sequences of `M` segments, `N₂` shots each, same counts for the base set.
    pub fn new(segments: usize, tau: f64, sequences: usize, shots: Shots, seed: u64) -> Self {
        Self {
            segments,
            tau,
            sequences,
            shots,
            base_sequences: sequences,
            base_shots: shots,
            seed,
            bootstrap: default_bootstrap(),
            taps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 || self.sequences == 0 || self.base_sequences == 0 {
            return Err(invalid("segment and sequence counts must be at least 1"));
        }
        for s in [self.shots, self.base_shots] {
            if s == Shots::Finite(0) {
                return Err(invalid("shot counts must be at least 1"));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(invalid(format!(
                "segment duration must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    fn check_tau(&self, spectrum: &NoiseSpectrum) -> Result<()> {
        let expected = PI / spectrum.omega_c();
        if (self.tau - expected).abs() > 1e-12 * expected {
            return Err(invalid(format!(
                "segment duration must equal π/ω_c = {expected}, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Estimated decay exponent of one ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiEstimate {
    pub chi: f64,
    pub stderr: f64,
    pub mean_coherence: f64,
    /// Per-sequence estimated coherences `Ĉ_U`.
    pub coherences: Vec<f64>,
    /// Per-sequence exact decay exponents `χ_U`.
    pub sequence_chi: Vec<f64>,
}

/// Decay exponents of `M`-segment sequences against a fixed spectrum.
#[derive(Debug, Clone)]
pub struct Simulator {
    kernel: ChiKernel,
    segments: usize,
    tau: f64,
}

impl Simulator {
    pub fn new(spectrum: &NoiseSpectrum, segments: usize, tau: f64) -> Self {
        let grid = chi_grid(spectrum, segments, tau);
        Self::on_grid(spectrum, segments, tau, &grid)
    }

    pub fn on_grid(
        spectrum: &NoiseSpectrum,
        segments: usize,
        tau: f64,
        grid: &FrequencyGrid,
    ) -> Self {
        Self {
            kernel: ChiKernel::new(spectrum, segments, tau, grid),
            segments,
            tau,
        }
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn chi(&self, seq: &PulseSequence) -> f64 {
        self.kernel.chi(seq)
    }

    /// `E(χ)` for sign processes with autocovariance `profile.r`:
    /// `M·K(0) + 2Σ_k (M-k)·R(k)·K(k)`.
    pub fn expected_chi(&self, profile: &CorrelationProfile) -> f64 {
        let k = self.kernel.lags();
        let m = self.segments;
        let mut terms = vec![m as f64 * k[0]];
        for (d, &r) in profile
            .r
            .iter()
            .enumerate()
            .skip(1)
            .take(m.saturating_sub(1))
        {
            terms.push(2.0 * (m - d) as f64 * r * k[d]);
        }
        pairwise_sum(&terms)
    }

    /// Runs `sequences × shots` measurements of sequences drawn from `design`.
    pub fn run(
        &self,
        design: &FirDesign,
        sequences: usize,
        shots: Shots,
        seed: u64,
        bootstrap: usize,
    ) -> Result<ChiEstimate> {
        if sequences == 0 {
            return Err(invalid("at least one sequence is required"));
        }
        let per_seq: Vec<(f64, f64)> = (0..sequences)
            .into_par_iter()
            .map(|i| {
                let seq = sample_sequence(
                    design,
                    self.segments,
                    self.tau,
                    derive_path(seed, &[0, i as u64]),
                )?;
                let chi = self.kernel.chi(&seq);
                let c = coherence_sample(chi, shots, derive_path(seed, &[1, i as u64]));
                Ok((chi, c))
            })
            .collect::<Result<_>>()?;
        let (sequence_chi, coherences): (Vec<f64>, Vec<f64>) = per_seq.into_iter().unzip();
        let c_bar = mean(&coherences);
        if c_bar <= 0.0 {
            return Err(Error::DecoherenceFloor {
                mean_coherence: c_bar,
            });
        }
        let stderr = if bootstrap == 0 {
            (variance(&coherences) / sequences as f64).sqrt() / c_bar
        } else {
            bootstrap_stderr(&coherences, bootstrap, derive_path(seed, &[2]))
        };
        Ok(ChiEstimate {
            chi: -c_bar.ln(),
            stderr,
            mean_coherence: c_bar,
            coherences,
            sequence_chi,
        })
    }
}

/// `Ĉ = 2k/N₂ - 1` with `k ~ Bin(N₂, (1 + e^{-χ})/2)`, or `e^{-χ}` analytically.
fn coherence_sample(chi: f64, shots: Shots, seed: u64) -> f64 {
    let c = (-chi).exp();
    match shots {
        Shots::Analytic => c,
        Shots::Finite(n) => {
            let p = (0.5 * (1.0 + c)).clamp(0.0, 1.0);
            let k = Binomial::new(n, p)
                .expect("probability clamped to [0, 1]")
                .sample(&mut rng_from_seed(seed));
            2.0 * k as f64 / n as f64 - 1.0
        }
    }
}

/// Standard deviation of `-ln(mean)` over sequence-level resamples.
/// Resamples with non-positive mean coherence are dropped.
fn bootstrap_stderr(coherences: &[f64], resamples: usize, seed: u64) -> f64 {
    use rand::Rng as _;
    let n = coherences.len();
    let mut rng = rng_from_seed(seed);
    let mut buf = vec![0.0; n];
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = coherences[rng.random_range(0..n)];
        }
        let m = mean(&buf);
        if m > 0.0 {
            stats.push(-m.ln());
        }
    }
    variance(&stats).sqrt()
}

/// Simulates the protocol for sequences drawn from `design`.
pub fn run_protocol(
    spectrum: &NoiseSpectrum,
    design: &FirDesign,
    plan: &ExperimentPlan,
) -> Result<ChiEstimate> {
    plan.validate()?;
    plan.check_tau(spectrum)?;
    Simulator::new(spectrum, plan.segments, plan.tau).run(
        design,
        plan.sequences,
        plan.shots,
        plan.seed,
        plan.bootstrap,
    )
}

/// A profile plus the FIR design realizing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub profile: CorrelationProfile,
    pub design: FirDesign,
}

impl Ensemble {
    pub fn base(segments: usize) -> Self {
        Self {
            profile: CorrelationProfile::base(segments),
            design: FirDesign::identity(),
        }
    }

    /// Designs the ensemble for `target`, rejecting fits with residual above
    /// the acceptance limit.
    pub fn for_target(
        target: &TargetFunction,
        segments: usize,
        tau: f64,
        taps: Option<usize>,
    ) -> Result<Self> {
        let profile = correlation_from_target(target, segments, tau)?;
        let taps = taps.unwrap_or(profile.lambda() + 1);
        let design = design_fir(&profile, taps)?;
        if design.residual > DESIGN_ACCEPT_RESIDUAL {
            return Err(Error::DesignFailure {
                residual: design.residual,
                limit: DESIGN_ACCEPT_RESIDUAL,
            });
        }
        Ok(Self { profile, design })
    }
}

/// Estimate of `I = ∫ S(ω)·T(ω) dω`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalEstimate {
    pub value: f64,
    pub stderr: f64,
    pub chi: f64,
    pub chi_stderr: f64,
    pub chi_base: f64,
    pub chi_base_stderr: f64,
    pub c: f64,
    pub t0: f64,
    pub segments: usize,
    pub tau: f64,
}

/// Inverts `E(χ) - (1 - cT₀)·E(χ_base) = (Mτ²/2π)·c·I`.
pub fn functional_from_chis(
    chi: (f64, f64),
    chi_base: (f64, f64),
    c: f64,
    t0: f64,
    segments: usize,
    tau: f64,
) -> FunctionalEstimate {
    let scale = 2.0 * PI / (segments as f64 * tau * tau) / c;
    let k = 1.0 - c * t0;
    FunctionalEstimate {
        value: (chi.0 - k * chi_base.0) * scale,
        stderr: (chi.1 * chi.1 + k * k * chi_base.1 * chi_base.1).sqrt() * scale,
        chi: chi.0,
        chi_stderr: chi.1,
        chi_base: chi_base.0,
        chi_base_stderr: chi_base.1,
        c,
        t0,
        segments,
        tau,
    }
}

/// Runs the targeted and base ensembles with independent seeds and inverts.
pub fn estimate_functional(
    spectrum: &NoiseSpectrum,
    target: &TargetFunction,
    plan: &ExperimentPlan,
) -> Result<FunctionalEstimate> {
    plan.validate()?;
    plan.check_tau(spectrum)?;
    let ens = Ensemble::for_target(target, plan.segments, plan.tau, plan.taps)?;
    let sim = Simulator::new(spectrum, plan.segments, plan.tau);
    let base = sim.run(
        &FirDesign::identity(),
        plan.base_sequences,
        plan.base_shots,
        derive_path(plan.seed, &[1]),
        plan.bootstrap,
    )?;
    // A zero target asks for the base ensemble itself; reuse that run so the
    // subtraction is exact.
    let est = if ens.profile.is_base() {
        base.clone()
    } else {
        sim.run(
            &ens.design,
            plan.sequences,
            plan.shots,
            derive_path(plan.seed, &[0]),
            plan.bootstrap,
        )?
    };
    Ok(functional_from_chis(
        (est.chi, est.stderr),
        (base.chi, base.stderr),
        ens.profile.c,
        ens.profile.t0,
        plan.segments,
        plan.tau,
    ))
}

/// Pointwise mean and standard error of `window_exact` over sampled sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWindow {
    pub mean: WindowFunction,
    pub stderr_at_zero: f64,
    pub stderr: Vec<f64>,
}

pub fn ensemble_window(
    design: &FirDesign,
    segments: usize,
    tau: f64,
    grid: &FrequencyGrid,
    sequences: usize,
    seed: u64,
) -> Result<EnsembleWindow> {
    if sequences < 2 {
        return Err(invalid("an ensemble window needs at least two sequences"));
    }
    let rows: Vec<Vec<f64>> = (0..sequences)
        .into_par_iter()
        .map(|i| {
            let seq = sample_sequence(design, segments, tau, derive_path(seed, &[0, i as u64]))?;
            let mut row = Vec::with_capacity(grid.len() + 1);
            row.push(seq.window_at(0.0));
            row.extend(grid.points().iter().map(|&w| seq.window_at(w)));
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let cols = grid.len() + 1;
    let mut means = Vec::with_capacity(cols);
    let mut errs = Vec::with_capacity(cols);
    let mut col = vec![0.0; sequences];
    for j in 0..cols {
        for (c, row) in col.iter_mut().zip(&rows) {
            *c = row[j];
        }
        means.push(mean(&col));
        errs.push((variance(&col) / sequences as f64).sqrt());
    }
    Ok(EnsembleWindow {
        mean: WindowFunction {
            grid: *grid,
            at_zero: means[0],
            values: means[1..].to_vec(),
            segments,
            tau,
        },
        stderr_at_zero: errs[0],
        stderr: errs[1..].to_vec(),
    })
}

/// `W* = [Ŵ - (1 - cT₀)·Ŵ_base]/c`, normalized by `Mτ²`.
pub fn extract_target_window(
    window: &WindowFunction,
    base: &WindowFunction,
    c: f64,
    t0: f64,
) -> WindowFunction {
    let k = 1.0 - c * t0;
    let norm = window.norm();
    WindowFunction {
        at_zero: (window.at_zero - k * base.at_zero) / c / norm,
        values: window
            .values
            .iter()
            .zip(&base.values)
            .map(|(w, b)| (w - k * b) / c / norm)
            .collect(),
        ..window.clone()
    }
}

/// Which count an accuracy study varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingAxis {
    Sequences,
    Shots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub sequences: usize,
    pub shots: Shots,
    pub mean_abs_error: f64,
    pub median_abs_error: f64,
    pub replicas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub axis: ScalingAxis,
    pub expected_chi: f64,
    pub rows: Vec<ScalingRow>,
    pub fit: Option<LineFit>,
}

/// `|χ̂ - E(χ)|` averaged over replicas for plans that differ in exactly one
/// of `N₁`, `N₂`; reports the log-log slope against the varied count.
pub fn accuracy_scaling_study(
    spectrum: &NoiseSpectrum,
    ensemble: &Ensemble,
    plans: &[ExperimentPlan],
    replicas: usize,
) -> Result<ScalingTable> {
    if plans.len() < 2 {
        return Err(invalid("a scaling study needs at least two plans"));
    }
    if replicas == 0 {
        return Err(invalid("a scaling study needs at least one replica"));
    }
    let first = &plans[0];
    for p in plans {
        p.validate()?;
        p.check_tau(spectrum)?;
        if p.segments != first.segments || p.tau != first.tau {
            return Err(invalid("plans must share segments and duration"));
        }
    }
    let seq_vary = plans.iter().any(|p| p.sequences != first.sequences);
    let shot_vary = plans.iter().any(|p| p.shots != first.shots);
    let axis = match (seq_vary, shot_vary) {
        (true, false) => ScalingAxis::Sequences,
        (false, true) => ScalingAxis::Shots,
        _ => {
            return Err(invalid(
                "plans must vary exactly one of the sequence and shot counts",
            ))
        }
    };

    let sim = Simulator::new(spectrum, first.segments, first.tau);
    let realized = ensemble.design.realized_profile(first.segments);
    let expected = sim.expected_chi(&realized);
    let mut rows = Vec::with_capacity(plans.len());
    for p in plans {
        let errs: Vec<f64> = (0..replicas)
            .map(|r| {
                sim.run(
                    &ensemble.design,
                    p.sequences,
                    p.shots,
                    derive_path(p.seed, &[r as u64]),
                    0,
                )
                .map(|e| (e.chi - expected).abs())
            })
            .collect::<Result<_>>()?;
        rows.push(ScalingRow {
            sequences: p.sequences,
            shots: p.shots,
            mean_abs_error: mean(&errs),
            median_abs_error: crate::numeric::median(&errs),
            replicas,
        });
    }
    let xs: Option<Vec<f64>> = rows
        .iter()
        .map(|r| match axis {
            ScalingAxis::Sequences => Some(r.sequences as f64),
            ScalingAxis::Shots => match r.shots {
                Shots::Finite(n) => Some(n as f64),
                Shots::Analytic => None,
            },
        })
        .collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_abs_error).collect();
    let fit = xs.and_then(|xs| log_log_slope(&xs, &ys));
    Ok(ScalingTable {
        axis,
        expected_chi: expected,
        rows,
        fit,
    })
}
