//! Recovery accuracy versus measurement count for random sparse spectra.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    acquire_with, expected_measurements, random_lags, reconstruct, LagEnsembles, PenaltyRule,
    ReconstructionOptions,
};
use crate::error::{invalid, Result};
use crate::experiment::{ExperimentPlan, Shots, Simulator};
use crate::numeric::{fit_line, mean, variance, LineFit};
use crate::rng::derive_path;
use crate::spectra::{random_sparse, FrequencyGrid, NoiseSpectrum};

pub const CHECKPOINT_INTERVAL: Duration = Duration::from_secs(60);

/// Where measurements come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    /// Full protocol simulation with finite sequence and shot counts.
    Simulated,
    /// Exact expected values of the realized ensembles.
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub grid_points: usize,
    pub omega_c: f64,
    pub segments: usize,
    pub sparsities: Vec<usize>,
    pub m_values: Vec<usize>,
    pub trials: usize,
    pub sequences: usize,
    pub shots: Shots,
    /// Physical scale of a unit grid amplitude; errors are reported in
    /// units of it.
    pub spectral_unit: f64,
    pub mode: MeasurementMode,
    pub rule: PenaltyRule,
    #[serde(default)]
    pub nonnegative: bool,
    /// Accuracy level that defines `m_c`.
    pub threshold: f64,
    pub seed: u64,
}

impl PhaseConfig {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.sparsities.is_empty() || self.m_values.is_empty() {
            return Err(invalid("sparsities and m values must be non-empty"));
        }
        let max_m = *self.m_values.iter().max().expect("non-empty");
        if max_m >= self.segments || self.m_values.contains(&0) {
            return Err(invalid(format!(
                "m values must lie in 1..{}",
                self.segments
            )));
        }
        if self
            .sparsities
            .iter()
            .any(|&s| s == 0 || s > self.grid_points)
        {
            return Err(invalid("sparsities must lie in 1..=N"));
        }
        if !(self.spectral_unit.is_finite() && self.spectral_unit > 0.0) {
            return Err(invalid("spectral unit must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub sparsity: usize,
    pub m: usize,
    pub mean_error: f64,
    /// Half-width of the normal 95% interval of the mean.
    pub ci95: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTable {
    pub rows: Vec<PhaseRow>,
    /// `(s, m_c)`; `None` when the threshold is never reached.
    pub critical: Vec<(usize, Option<usize>)>,
    /// Line through the defined `m_c(s)` points.
    pub fit: Option<LineFit>,
}

/// Per-trial L∞ errors for each m, keyed by `"s/trial"`.
#[derive(Debug, Default, Serialize, Deserialize)]
struct Journal {
    config: Option<PhaseConfig>,
    done: BTreeMap<String, Vec<f64>>,
}

struct Checkpoint {
    path: Option<PathBuf>,
    journal: Journal,
    last: Instant,
}

impl Checkpoint {
    fn open(path: Option<&Path>, config: &PhaseConfig) -> Result<Self> {
        let mut journal = Journal::default();
        if let Some(p) = path {
            if p.exists() {
                let j: Journal = serde_json::from_str(&std::fs::read_to_string(p)?)?;
                if j.config.as_ref() == Some(config) {
                    journal = j;
                } else {
                    log::warn!(
                        "journal {} belongs to a different configuration; starting over",
                        p.display()
                    );
                }
            }
        }
        journal.config = Some(config.clone());
        Ok(Self {
            path: path.map(Path::to_path_buf),
            journal,
            last: Instant::now(),
        })
    }

    fn save(&mut self) -> Result<()> {
        if let Some(p) = &self.path {
            let tmp = p.with_extension("tmp");
            std::fs::write(&tmp, serde_json::to_vec(&self.journal)?)?;
            std::fs::rename(&tmp, p)?;
        }
        self.last = Instant::now();
        Ok(())
    }

    fn record(&mut self, key: String, errors: Vec<f64>) -> Result<()> {
        self.journal.done.insert(key, errors);
        if self.last.elapsed() >= CHECKPOINT_INTERVAL {
            self.save()?;
        }
        Ok(())
    }
}

/// L∞ errors (in spectral units) of one random spectrum for every `m`.
fn run_trial(
    config: &PhaseConfig,
    grid: &FrequencyGrid,
    ens: &LagEnsembles,
    s: usize,
    trial: usize,
) -> Result<Vec<f64>> {
    let seed = derive_path(config.seed, &[s as u64, trial as u64]);
    let truth = random_sparse(grid, s, derive_path(seed, &[0]))?;
    let scaled: Vec<f64> = truth
        .values
        .iter()
        .map(|v| v * config.spectral_unit)
        .collect();
    let spectrum = NoiseSpectrum::gridded(grid, scaled)?;
    let max_m = *config.m_values.iter().max().expect("validated");
    let lags = random_lags(config.segments, max_m, derive_path(seed, &[1]))?;
    let sim = Simulator::new(&spectrum, config.segments, PI / config.omega_c);
    let mut ens = ens.clone();
    let all = match config.mode {
        MeasurementMode::Expected => expected_measurements(&sim, &mut ens, &lags, config.omega_c)?,
        MeasurementMode::Simulated => {
            let mut plan = ExperimentPlan::new(
                config.segments,
                PI / config.omega_c,
                config.sequences,
                config.shots,
                derive_path(seed, &[2]),
            );
            plan.bootstrap = 0;
            acquire_with(&sim, &mut ens, &lags, &plan, config.omega_c)?
        }
    };
    let options = ReconstructionOptions {
        rule: config.rule,
        nonnegative: config.nonnegative,
        top: s,
        ..ReconstructionOptions::default()
    };
    config
        .m_values
        .iter()
        .map(|&m| {
            let r = reconstruct(&all.prefix(m), grid, &options)?;
            Ok(r.estimate
                .iter()
                .zip(&truth.values)
                .map(|(e, t)| (e / config.spectral_unit - t).abs())
                .fold(0.0, f64::max))
        })
        .collect()
}

/// Mean L∞ error versus `m` for each sparsity, and the critical `m_c(s)`.
///
/// With a journal path, finished trials are checkpointed at least every
/// [`CHECKPOINT_INTERVAL`] and skipped when the study is rerun.
pub fn phase_transition_study(config: &PhaseConfig, journal: Option<&Path>) -> Result<PhaseTable> {
    config.validate()?;
    let grid = FrequencyGrid::new(config.grid_points, config.omega_c)?;
    let mut ens = LagEnsembles::new(config.segments, config.omega_c, None);
    ens.prepare(&(1..config.segments).collect::<Vec<_>>())?;
    let mut ckpt = Checkpoint::open(journal, config)?;

    let mut rows = Vec::new();
    let mut critical = Vec::new();
    for &s in &config.sparsities {
        let pending: Vec<usize> = (0..config.trials)
            .filter(|t| !ckpt.journal.done.contains_key(&format!("{s}/{t}")))
            .collect();
        // Chunks keep checkpoints frequent while trials run in parallel.
        for chunk in pending.chunks(rayon::current_num_threads().max(1)) {
            let results: Vec<(usize, Vec<f64>)> = chunk
                .par_iter()
                .map(|&t| run_trial(config, &grid, &ens, s, t).map(|e| (t, e)))
                .collect::<Result<_>>()?;
            for (t, e) in results {
                ckpt.record(format!("{s}/{t}"), e)?;
            }
        }
        let per_trial: Vec<&Vec<f64>> = (0..config.trials)
            .map(|t| &ckpt.journal.done[&format!("{s}/{t}")])
            .collect();
        let mut m_c = None;
        for (j, &m) in config.m_values.iter().enumerate() {
            let errs: Vec<f64> = per_trial.iter().map(|e| e[j]).collect();
            let mean_error = mean(&errs);
            if m_c.is_none() && mean_error <= config.threshold {
                m_c = Some(m);
            }
            rows.push(PhaseRow {
                sparsity: s,
                m,
                mean_error,
                ci95: 1.96 * (variance(&errs) / errs.len() as f64).sqrt(),
                trials: config.trials,
            });
        }
        critical.push((s, m_c));
    }
    ckpt.save()?;

    let (xs, ys): (Vec<f64>, Vec<f64>) = critical
        .iter()
        .filter_map(|&(s, m)| m.map(|m| (s as f64, m as f64)))
        .unzip();
    let fit = if xs.len() >= 2 {
        fit_line(&xs, &ys)
    } else {
        None
    };
    Ok(PhaseTable {
        rows,
        critical,
        fit,
    })
}
