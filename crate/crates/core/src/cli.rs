//! Command-line front end.
//!
//! Every command resolves its configuration as JSON first (preset or
//! `--config`, then flag overrides), deserializes it, runs, and only then
//! writes its CSVs and `manifest.json`. Exit codes: 0 on success, 2 for
//! invalid or infeasible input, 3 for solver failure (the failing instance is
//! written to `failed_instance.json`).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cpmg::{cpmg_resolution_scaling, cpmg_spectroscopy, resource_comparison, CpmgSweep};
use crate::csrecon::phase::{phase_transition_study, PhaseConfig};
use crate::csrecon::{
    acquire_measurements, random_lags, reconstruct, MeasurementSet, PenaltyRule,
    ReconstructionOptions,
};
use crate::error::{invalid, Error, Result};
use crate::experiment::{Ensemble, ExperimentPlan, Shots};
use crate::io::{read_config_value, Cell, Manifest, OutputSet, Table};
use crate::presets::{
    self, cs_instance, run_window, solve_instance, summarize_comparison, CompareConfig, CsConfig,
    WindowConfig,
};
use crate::pulse::WindowFunction;
use crate::rng::derive_path;
use crate::seqgen::TargetFunction;
use crate::spectra::{FrequencyGrid, NoiseSpectrum};

pub const EXIT_INVALID: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "randpulse",
    version,
    about = "Noise spectroscopy with random π-pulse sequences"
)]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config, or the manifest of an earlier run.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// fig2, fig3a, fig3b or fig5.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Use exact coherences instead of binomial shot sampling.
    #[arg(long)]
    pub analytic_shots: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Expected, sampled and extracted windows of a target ensemble.
    Window {
        #[command(flatten)]
        common: Common,
        /// Cos-lag target with this lag; 0 gives the base ensemble.
        #[arg(long, conflicts_with = "target")]
        lambda: Option<usize>,
        /// Target function JSON.
        #[arg(long, value_name = "FILE")]
        target: Option<PathBuf>,
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        base_sequences: Option<usize>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long)]
        taps: Option<usize>,
    },
    /// One compressed-sensing reconstruction.
    Cs {
        #[command(flatten)]
        common: Common,
        /// Spectrum JSON to reconstruct instead of a random sparse one.
        #[arg(long, value_name = "FILE")]
        spectrum: Option<PathBuf>,
        #[arg(long)]
        sparsity: Option<usize>,
        #[arg(long)]
        spectral_unit: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
        #[command(flatten)]
        plan: PlanFlags,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Critical measurement count versus sparsity.
    Phase {
        #[command(flatten)]
        common: Common,
        /// Comma list; `a:b:step` ranges allowed.
        #[arg(long)]
        sparsities: Option<Counts>,
        #[arg(long)]
        m_values: Option<Counts>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Checkpoint file; finished trials are skipped on rerun.
        #[arg(long, value_name = "FILE")]
        journal: Option<PathBuf>,
        #[command(flatten)]
        plan: PlanFlags,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// CS versus CPMG peak accuracy against the number of settings.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Peaked spectrum JSON.
        #[arg(long, value_name = "FILE")]
        spectrum: Option<PathBuf>,
        #[arg(long)]
        n_sets: Option<Counts>,
        #[arg(long)]
        replicas: Option<usize>,
        /// Skip the CPMG slope study.
        #[arg(long)]
        no_scaling: bool,
    },
    /// Stage: correlation profile and FIR design for a target.
    Design {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "target")]
        lambda: Option<usize>,
        #[arg(long, value_name = "FILE")]
        target: Option<PathBuf>,
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        taps: Option<usize>,
    },
    /// Stage: lag measurements of a spectrum.
    Acquire {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        spectrum: Option<PathBuf>,
        #[arg(long, conflicts_with = "m")]
        lags: Option<Counts>,
        /// Draw this many random lags.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        shots: Option<Shots>,
    },
    /// Stage: LASSO reconstruction of saved measurements.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// `measurements.json` from `acquire`.
        #[arg(long, value_name = "FILE")]
        measurements: Option<PathBuf>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long)]
        top: Option<usize>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Stage: CPMG sweep estimate of a spectrum.
    Cpmg {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        spectrum: Option<PathBuf>,
        #[arg(long)]
        n_set: Option<usize>,
        #[arg(long)]
        shots: Option<Shots>,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct PlanFlags {
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long)]
    pub shots: Option<Shots>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// `simulated` or `expected`.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SolverFlags {
    /// Cross-validated penalty with this many folds.
    #[arg(long, conflicts_with = "penalty")]
    pub folds: Option<usize>,
    /// Fixed LASSO penalty.
    #[arg(long)]
    pub penalty: Option<f64>,
    /// Constrain the LASSO to non-negative values.
    #[arg(long)]
    pub nonnegative: Option<bool>,
}

/// A `--flag 2,5,8` list of counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counts(pub Vec<usize>);

impl std::str::FromStr for Counts {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_counts(s).map(Counts)
    }
}

/// Comma-separated counts; `a:b:step` expands to `a, a+step, .., ≤ b`.
pub fn parse_counts(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let nums: Vec<usize> = part
            .split(':')
            .map(|x| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        match nums[..] {
            [n] => out.push(n),
            [a, b] => out.extend(a..=b),
            [a, b, step] if step > 0 => out.extend((a..=b).step_by(step)),
            _ => return Err(format!("bad range {part:?}")),
        }
    }
    if out.is_empty() {
        return Err("expected at least one count".into());
    }
    Ok(out)
}

/// A failed command plus what to dump for replay.
struct Failure {
    error: Error,
    dump: Option<Value>,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure { error, dump: None }
    }
}

type CmdResult = std::result::Result<(), Failure>;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::SolverFailure { .. } => EXIT_SOLVER,
        _ => EXIT_INVALID,
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INVALID
            } else {
                0
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        eprintln!("error: --workers must be at least 1");
        return EXIT_INVALID;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_INVALID;
        }
    };
    let out = common(&cli.command).out.clone();
    match pool.install(|| dispatch(&cli.command, workers)) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.error);
            let code = exit_code(&f.error);
            if code == EXIT_SOLVER {
                if let Some(dump) = f.dump {
                    let path = out.join("failed_instance.json");
                    let written = std::fs::create_dir_all(&out).and_then(|_| {
                        std::fs::write(&path, serde_json::to_vec_pretty(&dump).unwrap_or_default())
                    });
                    match written {
                        Ok(()) => eprintln!("failing instance written to {}", path.display()),
                        Err(e) => eprintln!("could not write {}: {e}", path.display()),
                    }
                }
            }
            code
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Window { common, .. }
        | Command::Cs { common, .. }
        | Command::Phase { common, .. }
        | Command::Compare { common, .. }
        | Command::Design { common, .. }
        | Command::Acquire { common, .. }
        | Command::Reconstruct { common, .. }
        | Command::Cpmg { common, .. } => common,
    }
}

/// Sets `path` inside `v`, creating objects along the way.
fn set(v: &mut Value, path: &[&str], x: impl Serialize) -> Result<()> {
    let mut cur = v;
    for key in &path[..path.len() - 1] {
        if !cur.get(*key).is_some_and(Value::is_object) {
            cur[*key] = json!({});
        }
        cur = &mut cur[*key];
    }
    cur[path[path.len() - 1]] = serde_json::to_value(x)?;
    Ok(())
}

fn set_opt(v: &mut Value, path: &[&str], x: Option<impl Serialize>) -> Result<()> {
    match x {
        Some(x) => set(v, path, x),
        None => Ok(()),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("bad {what} {}: {e}", path.display())))
}

/// Preset or `--config` as JSON, with `--seed` applied at `seed_path`.
fn base_config(
    common: &Common,
    default_preset: Option<&str>,
    allowed: &[&str],
    seed_path: &[&str],
) -> Result<(Value, Option<String>)> {
    let (mut value, preset) = if let Some(path) = &common.config {
        (read_config_value(path)?, None)
    } else if let Some(name) = common.preset.as_deref().or(default_preset) {
        if !allowed.contains(&name) {
            return Err(invalid(format!(
                "preset {name:?} does not apply here; expected one of {allowed:?} (known presets: {:?})",
                presets::PRESET_NAMES
            )));
        }
        let v = match name {
            "fig2" => serde_json::to_value(presets::fig2())?,
            "fig3a" => serde_json::to_value(presets::fig3a())?,
            "fig3b" => serde_json::to_value(presets::fig3b())?,
            "fig5" => serde_json::to_value(presets::fig5())?,
            _ => unreachable!("checked against the allowed list"),
        };
        (v, Some(name.to_owned()))
    } else {
        (json!({}), None)
    };
    set_opt(&mut value, seed_path, common.seed)?;
    Ok((value, preset))
}

fn finish<T: DeserializeOwned>(value: Value, what: &str) -> Result<T> {
    serde_json::from_value(value).map_err(|e| invalid(format!("{what} configuration: {e}")))
}

fn join<'a>(base: &[&'a str], key: &'a str) -> Vec<&'a str> {
    base.iter().copied().chain(std::iter::once(key)).collect()
}

fn apply_solver(v: &mut Value, base: &[&str], s: &SolverFlags) -> Result<()> {
    let rule = |k| join(base, k);
    if let Some(folds) = s.folds {
        set(v, &rule("rule"), PenaltyRule::CrossValidation { folds })?;
    }
    if let Some(penalty) = s.penalty {
        set(v, &rule("rule"), PenaltyRule::Fixed { penalty })?;
    }
    set_opt(v, &rule("nonnegative"), s.nonnegative)
}

fn target_override(
    v: &mut Value,
    lambda: Option<usize>,
    target: &Option<PathBuf>,
    omega_c: f64,
) -> Result<()> {
    if let Some(path) = target {
        let t: TargetFunction = read_json(path, "target")?;
        set(v, &["target"], t)?;
    } else if let Some(k) = lambda {
        let t = if k == 0 {
            TargetFunction::zero(omega_c)
        } else {
            TargetFunction::cos_lag(k, omega_c)?
        };
        set(v, &["target"], t)?;
    }
    Ok(())
}

struct Run<'a> {
    command: &'a str,
    common: &'a Common,
    preset: Option<String>,
    workers: usize,
    started: Instant,
}

impl Run<'_> {
    fn write(
        self,
        config: &impl Serialize,
        seed: u64,
        mut files: OutputSet,
        summary: Value,
    ) -> Result<()> {
        let mut outputs = files.names();
        outputs.push("manifest.json".into());
        let manifest = Manifest {
            command: self.command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            preset: self.preset,
            seed,
            workers: self.workers,
            config: serde_json::to_value(config)?,
            outputs,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
            summary,
        };
        files.json("manifest.json", &manifest)?;
        for p in files.write_all(&self.common.out)? {
            log::info!("wrote {}", p.display());
        }
        Ok(())
    }
}

fn dispatch(cmd: &Command, workers: usize) -> CmdResult {
    let started = Instant::now();
    match cmd {
        Command::Window {
            common,
            lambda,
            target,
            segments,
            sequences,
            base_sequences,
            grid_points,
            taps,
        } => {
            let (mut v, preset) = base_config(common, Some("fig2"), &["fig2"], &["seed"])?;
            let omega_c = v.get("omega_c").and_then(Value::as_f64).unwrap_or(PI);
            target_override(&mut v, *lambda, target, omega_c)?;
            set_opt(&mut v, &["segments"], *segments)?;
            set_opt(&mut v, &["sequences"], *sequences)?;
            set_opt(&mut v, &["base_sequences"], *base_sequences)?;
            set_opt(&mut v, &["grid_points"], *grid_points)?;
            set_opt(&mut v, &["taps"], *taps)?;
            let config: WindowConfig = finish(v, "window")?;
            let r = Run {
                command: "window",
                common,
                preset,
                workers,
                started,
            };
            cmd_window(r, &config)?;
        }
        Command::Cs {
            common,
            spectrum,
            sparsity,
            spectral_unit,
            m,
            plan,
            solver,
        } => {
            let (mut v, preset) = base_config(common, Some("fig3a"), &["fig3a"], &["seed"])?;
            if let Some(path) = spectrum {
                let s: NoiseSpectrum = read_json(path, "spectrum")?;
                set(
                    &mut v,
                    &["truth"],
                    json!({"kind": "spectrum", "spectrum": s}),
                )?;
            }
            if sparsity.is_some() || spectral_unit.is_some() {
                if v["truth"]["kind"] != "random-sparse" {
                    set(&mut v, &["truth"], json!({"kind": "random-sparse"}))?;
                }
                set_opt(&mut v, &["truth", "sparsity"], *sparsity)?;
                set_opt(&mut v, &["truth", "spectral_unit"], *spectral_unit)?;
            }
            set_opt(&mut v, &["m"], *m)?;
            apply_plan(&mut v, &[], plan, common.analytic_shots)?;
            apply_solver(&mut v, &["reconstruction"], solver)?;
            let config: CsConfig = finish(v, "cs")?;
            let r = Run {
                command: "cs",
                common,
                preset,
                workers,
                started,
            };
            cmd_cs(r, &config)?;
        }
        Command::Phase {
            common,
            sparsities,
            m_values,
            trials,
            threshold,
            journal,
            plan,
            solver,
        } => {
            let (mut v, preset) = base_config(common, Some("fig3b"), &["fig3b"], &["seed"])?;
            set_opt(&mut v, &["sparsities"], sparsities.as_ref().map(|c| &c.0))?;
            set_opt(&mut v, &["m_values"], m_values.as_ref().map(|c| &c.0))?;
            set_opt(&mut v, &["trials"], *trials)?;
            set_opt(&mut v, &["threshold"], *threshold)?;
            apply_plan(&mut v, &[], plan, common.analytic_shots)?;
            apply_solver(&mut v, &[], solver)?;
            let config: PhaseConfig = finish(v, "phase")?;
            let r = Run {
                command: "phase",
                common,
                preset,
                workers,
                started,
            };
            cmd_phase(r, &config, journal.as_deref())?;
        }
        Command::Compare {
            common,
            spectrum,
            n_sets,
            replicas,
            no_scaling,
        } => {
            let (mut v, preset) =
                base_config(common, Some("fig5"), &["fig5"], &["comparison", "seed"])?;
            if let Some(path) = spectrum {
                let s: NoiseSpectrum = read_json(path, "spectrum")?;
                set(&mut v, &["spectrum"], s)?;
            }
            set_opt(
                &mut v,
                &["comparison", "n_sets"],
                n_sets.as_ref().map(|c| &c.0),
            )?;
            set_opt(&mut v, &["comparison", "replicas"], *replicas)?;
            if *no_scaling {
                set(&mut v, &["scaling"], Value::Null)?;
            }
            if common.analytic_shots {
                set(&mut v, &["comparison", "cs", "shots"], Shots::Analytic)?;
                set(&mut v, &["comparison", "cpmg_shots"], Shots::Analytic)?;
                if v["scaling"].is_object() {
                    set(&mut v, &["scaling", "shots"], Shots::Analytic)?;
                }
            }
            let config: CompareConfig = finish(v, "compare")?;
            let r = Run {
                command: "compare",
                common,
                preset,
                workers,
                started,
            };
            cmd_compare(r, &config)?;
        }
        Command::Design {
            common,
            lambda,
            target,
            segments,
            taps,
        } => {
            let (mut v, _) = base_config(common, None, &[], &["seed"])?;
            let omega_c = v.get("omega_c").and_then(Value::as_f64).unwrap_or(PI);
            set(&mut v, &["omega_c"], omega_c)?;
            target_override(&mut v, *lambda, target, omega_c)?;
            set_opt(&mut v, &["segments"], *segments)?;
            set_opt(&mut v, &["taps"], *taps)?;
            let config: DesignConfig = finish(v, "design")?;
            let r = Run {
                command: "design",
                common,
                preset: None,
                workers,
                started,
            };
            cmd_design(r, &config)?;
        }
        Command::Acquire {
            common,
            spectrum,
            lags,
            m,
            segments,
            sequences,
            shots,
        } => {
            let (mut v, _) = base_config(common, None, &[], &["seed"])?;
            if let Some(path) = spectrum {
                let s: NoiseSpectrum = read_json(path, "spectrum")?;
                set(&mut v, &["spectrum"], s)?;
            }
            if lags.is_some() {
                set(&mut v, &["m"], Value::Null)?;
            }
            if m.is_some() {
                set(&mut v, &["lags"], Value::Null)?;
            }
            set_opt(&mut v, &["lags"], lags.as_ref().map(|c| &c.0))?;
            set_opt(&mut v, &["m"], *m)?;
            set_opt(&mut v, &["segments"], *segments)?;
            set_opt(&mut v, &["sequences"], *sequences)?;
            set_opt(&mut v, &["shots"], *shots)?;
            if common.analytic_shots {
                set(&mut v, &["shots"], Shots::Analytic)?;
            }
            let config: AcquireConfig = finish(v, "acquire")?;
            let r = Run {
                command: "acquire",
                common,
                preset: None,
                workers,
                started,
            };
            cmd_acquire(r, &config)?;
        }
        Command::Reconstruct {
            common,
            measurements,
            grid_points,
            top,
            solver,
        } => {
            let (mut v, _) = base_config(common, None, &[], &["seed"])?;
            if let Some(path) = measurements {
                let s: MeasurementSet = read_json(path, "measurements")?;
                set(&mut v, &["measurements"], s)?;
            }
            if !v["options"].is_object() {
                set(&mut v, &["options"], ReconstructionOptions::default())?;
            }
            set_opt(&mut v, &["grid_points"], *grid_points)?;
            set_opt(&mut v, &["options", "top"], *top)?;
            apply_solver(&mut v, &["options"], solver)?;
            let config: ReconstructConfig = finish(v, "reconstruct")?;
            let r = Run {
                command: "reconstruct",
                common,
                preset: None,
                workers,
                started,
            };
            cmd_reconstruct(r, &config)?;
        }
        Command::Cpmg {
            common,
            spectrum,
            n_set,
            shots,
        } => {
            let (mut v, _) = base_config(common, None, &[], &["seed"])?;
            if let Some(path) = spectrum {
                let s: NoiseSpectrum = read_json(path, "spectrum")?;
                set(&mut v, &["spectrum"], s)?;
            }
            set_opt(&mut v, &["n_set"], *n_set)?;
            set_opt(&mut v, &["shots"], *shots)?;
            if common.analytic_shots {
                set(&mut v, &["shots"], Shots::Analytic)?;
            }
            let config: CpmgConfig = finish(v, "cpmg")?;
            let r = Run {
                command: "cpmg",
                common,
                preset: None,
                workers,
                started,
            };
            cmd_cpmg(r, &config)?;
        }
    }
    Ok(())
}

fn apply_plan(v: &mut Value, base: &[&str], p: &PlanFlags, analytic: bool) -> Result<()> {
    let at = |k| join(base, k);
    set_opt(v, &at("segments"), p.segments)?;
    set_opt(v, &at("sequences"), p.sequences)?;
    set_opt(v, &at("shots"), p.shots)?;
    set_opt(v, &at("grid_points"), p.grid_points)?;
    set_opt(v, &at("mode"), p.mode.clone())?;
    if analytic {
        set(v, &at("shots"), Shots::Analytic)?;
    }
    Ok(())
}

/// Rows of `(ω, value, extra...)` starting at `ω = 0`.
fn window_table(header: &[&str], w: &WindowFunction, extra: &[(f64, &[f64])]) -> Table {
    let mut t = Table::new(header);
    let mut row0: Vec<Cell> = vec![0.0.into(), w.at_zero.into()];
    row0.extend(extra.iter().map(|(z, _)| Cell::from(*z)));
    t.push(row0);
    for (i, omega) in w.grid.points().into_iter().enumerate() {
        let mut row: Vec<Cell> = vec![omega.into(), w.values[i].into()];
        row.extend(extra.iter().map(|(_, v)| Cell::from(v[i])));
        t.push(row);
    }
    t
}

fn cmd_window(run: Run, config: &WindowConfig) -> Result<()> {
    let r = run_window(config)?;
    let mut files = OutputSet::default();
    files.csv(
        "expected_window.csv",
        &window_table(&["omega", "expected"], &r.expected, &[]),
    )?;
    files.csv(
        "expected_base_window.csv",
        &window_table(&["omega", "expected_base"], &r.expected_base, &[]),
    )?;
    files.csv(
        "ensemble_window.csv",
        &window_table(
            &["omega", "ensemble", "stderr"],
            &r.ensemble.mean,
            &[(r.ensemble.stderr_at_zero, &r.ensemble.stderr)],
        ),
    )?;
    let t0 = config.target.evaluate(0.0);
    files.csv(
        "target_window.csv",
        &window_table(
            &["omega", "extracted", "target"],
            &r.extracted,
            &[(t0, &r.target)],
        ),
    )?;
    let within = r
        .ensemble
        .mean
        .values
        .iter()
        .zip(&r.expected.values)
        .zip(&r.ensemble.stderr)
        .filter(|((m, e), s)| (*m - *e).abs() <= 3.0 * **s)
        .count();
    let summary = json!({
        "c": r.c,
        "t0": r.t0,
        "design_residual": r.design.residual,
        "fir_taps": r.design.coefficients.len(),
        "fraction_within_3se": within as f64 / r.expected.values.len() as f64,
    });
    run.write(config, config.seed, files, summary)
}

fn cmd_cs(run: Run, config: &CsConfig) -> CmdResult {
    let inst = cs_instance(config)?;
    let out = match solve_instance(&inst) {
        Ok(o) => o,
        Err(error) => {
            return Err(Failure {
                error,
                dump: Some(json!({"config": config, "instance": inst})),
            })
        }
    };
    let grid = inst.grid;
    let mut files = OutputSet::default();
    let mut rec = Table::new(&["omega", "truth", "estimate"]);
    for (i, omega) in grid.points().into_iter().enumerate() {
        rec.push(vec![
            omega.into(),
            inst.truth[i].into(),
            out.result.estimate[i].into(),
        ]);
    }
    files.csv("reconstruction.csv", &rec)?;
    files.csv("measurements.csv", &measurement_table(&inst.measurements))?;
    files.csv("peaks.csv", &peak_table(&out.result))?;
    if let Some(cv) = &out.result.cv {
        let mut t = Table::new(&["penalty", "mean_error", "stderr"]);
        for p in &cv.path {
            t.push(vec![p.penalty.into(), p.mean_error.into(), p.stderr.into()]);
        }
        files.csv("cv_path.csv", &t)?;
    }
    let true_support: Vec<usize> = (0..inst.truth.len())
        .filter(|&i| inst.truth[i] > 0.0)
        .collect();
    let summary = json!({
        "support_exact": out.support_exact,
        "recovered": out.recovered(0.1),
        "linf_error": out.linf_error,
        "relative_error": out.relative_error,
        "penalty": out.result.penalty,
        "support": out.result.support,
        "true_support": true_support,
        "lags": inst.measurements.lags,
        "residual": out.result.residual,
        "epsilon": out.result.epsilon,
    });
    run.write(config, config.seed, files, summary)?;
    Ok(())
}

fn measurement_table(set: &MeasurementSet) -> Table {
    let mut t = Table::new(&["lag", "scale", "value", "stderr"]);
    for j in 0..set.len() {
        t.push(vec![
            set.lags[j].into(),
            set.scales[j].into(),
            set.values[j].into(),
            set.stderr[j].into(),
        ]);
    }
    t
}

fn peak_table(r: &crate::csrecon::ReconstructionResult) -> Table {
    let mut t = Table::new(&["center", "mass", "height", "first", "last"]);
    for p in &r.peaks.peaks {
        t.push(vec![
            p.center.into(),
            p.mass.into(),
            p.height.into(),
            p.first.into(),
            p.last.into(),
        ]);
    }
    t
}

fn cmd_phase(run: Run, config: &PhaseConfig, journal: Option<&Path>) -> CmdResult {
    let table = phase_transition_study(config, journal).map_err(|error| Failure {
        dump: Some(json!({ "config": config })),
        error,
    })?;
    let mut files = OutputSet::default();
    let mut rows = Table::new(&["sparsity", "m", "mean_error", "ci95", "trials"]);
    for r in &table.rows {
        rows.push(vec![
            r.sparsity.into(),
            r.m.into(),
            r.mean_error.into(),
            r.ci95.into(),
            r.trials.into(),
        ]);
    }
    files.csv("phase.csv", &rows)?;
    let mut crit = Table::new(&["sparsity", "m_c"]);
    for &(s, m) in &table.critical {
        crit.push(vec![
            s.into(),
            m.map_or(Cell::Text(String::new()), Cell::from),
        ]);
    }
    files.csv("critical.csv", &crit)?;
    let defined: Vec<usize> = table.critical.iter().filter_map(|c| c.1).collect();
    let summary = json!({
        "critical": table.critical,
        "monotone": defined.len() == table.critical.len() && defined.windows(2).all(|w| w[0] < w[1]),
        "fit": table.fit,
    });
    run.write(config, config.seed, files, summary)?;
    Ok(())
}

fn cmd_compare(run: Run, config: &CompareConfig) -> CmdResult {
    let replay = || Some(json!({ "config": config }));
    let rows =
        resource_comparison(&config.spectrum, &config.comparison).map_err(|error| Failure {
            error,
            dump: replay(),
        })?;
    let scaling = match &config.scaling {
        Some(s) => Some(
            cpmg_resolution_scaling(
                &config.spectrum,
                config.comparison.top,
                config.comparison.peaks,
                s,
            )
            .map_err(|error| Failure {
                error,
                dump: replay(),
            })?,
        ),
        None => None,
    };
    let summary = summarize_comparison(config, &rows, scaling.as_ref().and_then(|s| s.1.as_ref()))?;
    let mut files = OutputSet::default();
    let mut t = Table::new(&["method", "n_set", "replica", "linf_error"]);
    for r in &rows {
        t.push(vec![
            r.method.clone().into(),
            r.n_set.into(),
            r.replica.into(),
            r.linf_error.into(),
        ]);
    }
    files.csv("comparison.csv", &t)?;
    let mut t = Table::new(&["method", "n_set", "mean_error"]);
    for r in &summary.means {
        t.push(vec![
            r.method.clone().into(),
            r.n_set.into(),
            r.mean_error.into(),
        ]);
    }
    files.csv("comparison_mean.csv", &t)?;
    if let Some((points, _)) = &scaling {
        let mut t = Table::new(&["n_set", "mean_error"]);
        for p in points {
            t.push(vec![p.n_set.into(), p.mean_error.into()]);
        }
        files.csv("cpmg_scaling.csv", &t)?;
    }
    run.write(
        config,
        config.comparison.seed,
        files,
        serde_json::to_value(&summary).map_err(Error::from)?,
    )?;
    Ok(())
}

fn pi() -> f64 {
    PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    #[serde(default = "pi")]
    pub omega_c: f64,
    pub segments: usize,
    pub target: TargetFunction,
    #[serde(default)]
    pub taps: Option<usize>,
}

fn cmd_design(run: Run, config: &DesignConfig) -> Result<()> {
    let ens = Ensemble::for_target(
        &config.target,
        config.segments,
        PI / config.omega_c,
        config.taps,
    )?;
    let realized = ens.design.realized_profile(config.segments);
    let mut files = OutputSet::default();
    let mut t = Table::new(&[
        "lag",
        "r_target",
        "rho_target",
        "rho_achieved",
        "r_realized",
    ]);
    let n = ens.profile.r.len().max(ens.design.achieved.len());
    for k in 0..n {
        let get = |v: &[f64]| v.get(k).copied().unwrap_or(0.0);
        t.push(vec![
            k.into(),
            get(&ens.profile.r).into(),
            get(&ens.profile.rho).into(),
            get(&ens.design.achieved).into(),
            get(&realized.r).into(),
        ]);
    }
    files.csv("profile.csv", &t)?;
    let mut t = Table::new(&["index", "coefficient"]);
    for (i, a) in ens.design.coefficients.iter().enumerate() {
        t.push(vec![i.into(), (*a).into()]);
    }
    files.csv("fir.csv", &t)?;
    files.json("ensemble.json", &ens)?;
    let summary =
        json!({ "c": ens.profile.c, "t0": ens.profile.t0, "residual": ens.design.residual });
    run.write(config, 0, files, summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquireConfig {
    pub spectrum: NoiseSpectrum,
    pub segments: usize,
    /// Explicit lags; otherwise `m` random ones.
    #[serde(default)]
    pub lags: Option<Vec<usize>>,
    #[serde(default)]
    pub m: Option<usize>,
    pub sequences: usize,
    pub shots: Shots,
    pub seed: u64,
}

fn cmd_acquire(run: Run, config: &AcquireConfig) -> Result<()> {
    let lags = match (&config.lags, config.m) {
        (Some(l), None) => l.clone(),
        (None, Some(m)) => random_lags(config.segments, m, derive_path(config.seed, &[1]))?,
        _ => return Err(invalid("give exactly one of lags and m")),
    };
    let omega_c = config.spectrum.omega_c();
    let mut plan = ExperimentPlan::new(
        config.segments,
        PI / omega_c,
        config.sequences,
        config.shots,
        derive_path(config.seed, &[2]),
    );
    plan.bootstrap = 0;
    let set = acquire_measurements(&config.spectrum, &lags, &plan)?;
    let mut files = OutputSet::default();
    files.csv("measurements.csv", &measurement_table(&set))?;
    files.json("measurements.json", &set)?;
    let summary = json!({ "lags": set.lags, "chi_base": set.chi_base, "n_set": set.n_set() });
    run.write(config, config.seed, files, summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructConfig {
    pub measurements: MeasurementSet,
    pub grid_points: usize,
    pub options: ReconstructionOptions,
}

fn cmd_reconstruct(run: Run, config: &ReconstructConfig) -> CmdResult {
    let grid = FrequencyGrid::new(config.grid_points, config.measurements.omega_c)?;
    let r = reconstruct(&config.measurements, &grid, &config.options).map_err(|error| Failure {
        error,
        dump: Some(json!({ "config": config })),
    })?;
    let mut files = OutputSet::default();
    let mut t = Table::new(&["omega", "estimate"]);
    for (i, omega) in grid.points().into_iter().enumerate() {
        t.push(vec![omega.into(), r.estimate[i].into()]);
    }
    files.csv("estimate.csv", &t)?;
    files.csv("peaks.csv", &peak_table(&r))?;
    let summary = json!({ "penalty": r.penalty, "support": r.support, "residual": r.residual, "epsilon": r.epsilon });
    run.write(config, 0, files, summary)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpmgConfig {
    pub spectrum: NoiseSpectrum,
    pub n_set: usize,
    pub shots: Shots,
    pub seed: u64,
}

fn cmd_cpmg(run: Run, config: &CpmgConfig) -> Result<()> {
    let sweep = CpmgSweep::new(config.n_set, config.spectrum.omega_c(), config.shots)?;
    let est = cpmg_spectroscopy(&config.spectrum, &sweep, config.seed)?;
    let mut files = OutputSet::default();
    let mut t = Table::new(&["omega", "chi", "estimate"]);
    for i in 0..est.frequencies.len() {
        t.push(vec![
            est.frequencies[i].into(),
            est.chi[i].into(),
            est.estimate[i].into(),
        ]);
    }
    files.csv("cpmg.csv", &t)?;
    let summary = json!({ "total_time": sweep.total_time, "probes": est.frequencies.len() });
    run.write(config, config.seed, files, summary)
}
