//! Experiment commands: `simulate`, `sweep`, `theory` and `compare`.
//!
//! Each command reads a JSON config and writes plain CSV/JSON data files.
//! Outputs depend only on the config and seed, never on the worker count.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    simulate_ensemble, simulate_ensemble_in_current_pool, write_snapshots_csv, EnsembleOptions, InvestorParams,
    SimulationConfig, DEFAULT_AGENTS, DEFAULT_X0,
};
use crate::error::{Error, Result};
use crate::process::ReturnProcessSpec;
use crate::rng::derive_seed;
use crate::stats::{
    average_mode, fit_scaling_prefactor, fit_tail_exponent, ks_distance, log_binned_histogram, log_lambda_moments_auto,
    LogHistogram, ModeEstimate, ScalingFit, ScalingPoint, DEFAULT_BINS_PER_DECADE, TAIL_THRESHOLD_FACTOR,
};
use crate::theory::{
    log_grid, lognormal_density, scaling_prefactor, write_density_csv, StationaryLaw, TheoryPrediction,
};

pub const DEFAULT_T_MEASURE: u64 = 10_000;
pub const DEFAULT_RUNS: usize = 10;
const OVERLAY_POINTS: usize = 200;

/// Read and parse a JSON config. A missing/unreadable file is an I/O error;
/// malformed content is a config error naming the offending field.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).expect("serializable report");
    writeln!(out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn default_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}
fn default_agents() -> usize {
    DEFAULT_AGENTS
}
fn default_t_measure() -> u64 {
    DEFAULT_T_MEASURE
}
fn default_runs() -> usize {
    DEFAULT_RUNS
}
fn default_x0() -> f64 {
    DEFAULT_X0
}
fn default_bins() -> u32 {
    DEFAULT_BINS_PER_DECADE
}

// ---------------------------------------------------------------- simulate

/// Per-time mode estimates written next to the data files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub theory: Option<TheoryPrediction>,
    pub modes: Vec<TimedMode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimedMode {
    pub time: u64,
    pub mode: ModeEstimate,
}

/// Run the ensemble and write `snapshots.csv`, one `histogram_t<time>.csv`
/// per snapshot time (all runs pooled), `theory_density.csv` and
/// `summary.json` into `out`.
pub fn cmd_simulate(config: &SimulationConfig, out: &Path, options: &EnsembleOptions) -> Result<SimulateSummary> {
    config.validate()?;
    let ensemble = simulate_ensemble(config, options)?;
    ensure_dir(out)?;

    let path = out.join("snapshots.csv");
    write_snapshots_csv(&ensemble.snapshots, create(&path)?).map_err(|e| Error::io(&path, e))?;

    let mut modes = Vec::new();
    let mut last_hist: Option<LogHistogram> = None;
    for &time in &config.snapshot_times {
        let runs = ensemble.at_time(time);
        let mut pooled: Option<LogHistogram> = None;
        for run in &runs {
            let h = log_binned_histogram(run, DEFAULT_BINS_PER_DECADE)?;
            match pooled.as_mut() {
                Some(p) => p.merge(&h)?,
                None => pooled = Some(h),
            }
        }
        let hist = pooled.expect("at least one run");
        let path = out.join(format!("histogram_t{time}.csv"));
        hist.write_csv(create(&path)?).map_err(|e| Error::io(&path, e))?;
        if let Ok(mode) = average_mode(&runs, DEFAULT_BINS_PER_DECADE) {
            modes.push(TimedMode { time, mode });
        }
        last_hist = Some(hist);
    }

    let hist = last_hist.expect("snapshot_times is non-empty");
    let xs = log_grid(hist.bin_low(0), hist.bin_high(hist.len() - 1), OVERLAY_POINTS);
    let params = config.params;
    let mut theory = None;
    let path = out.join("theory_density.csv");
    if params.q0 > 0.0 {
        if let Ok(moments) = log_lambda_moments_auto(&config.process, params.q0) {
            if params.a == 0.0 {
                let t = *config.snapshot_times.last().expect("non-empty");
                let x0 = params.x0;
                let density = |x: f64| lognormal_density(x / x0, t, moments.mean_log_lambda, moments.diffusion) / x0;
                write_density_csv(&xs, density, create(&path)?).map_err(|e| Error::io(&path, e))?;
            } else if let Ok(law) = StationaryLaw::from_moments(params.a, &moments) {
                write_density_csv(&xs, |x| law.density(x), create(&path)?).map_err(|e| Error::io(&path, e))?;
                theory = TheoryPrediction::from_moments(&moments, &config.process, params.q0, params.a).ok();
            }
        }
    }

    let summary = SimulateSummary { theory, modes };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

// ------------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub process: ReturnProcessSpec,
    #[serde(default = "default_grid")]
    pub a_values: Vec<f64>,
    #[serde(default = "default_grid")]
    pub q_values: Vec<f64>,
    #[serde(default = "default_agents")]
    pub n_agents: usize,
    #[serde(default = "default_t_measure")]
    pub t_measure: u64,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default = "default_bins")]
    pub bins_per_decade: u32,
}

impl SweepConfig {
    /// 9×9 grid a, q0 ∈ {0.1, …, 0.9}, 10⁴ agents, 10 runs, measured at t = 10⁴.
    pub fn new(process: ReturnProcessSpec) -> Self {
        Self {
            process,
            a_values: default_grid(),
            q_values: default_grid(),
            n_agents: DEFAULT_AGENTS,
            t_measure: DEFAULT_T_MEASURE,
            n_runs: DEFAULT_RUNS,
            master_seed: 0,
            x0: DEFAULT_X0,
            bins_per_decade: DEFAULT_BINS_PER_DECADE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        if self.a_values.is_empty() {
            return Err(Error::invalid("a_values", "must not be empty"));
        }
        if self.q_values.is_empty() {
            return Err(Error::invalid("q_values", "must not be empty"));
        }
        if let Some(a) = self.a_values.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::invalid("a_values", format!("all values must be > 0, got {a}")));
        }
        if let Some(q) = self
            .q_values
            .iter()
            .find(|q| !(q.is_finite() && **q > 0.0 && **q <= 1.0))
        {
            return Err(Error::invalid(
                "q_values",
                format!("all values must lie in (0, 1], got {q}"),
            ));
        }
        if self.bins_per_decade == 0 {
            return Err(Error::invalid("bins_per_decade", "must be >= 1"));
        }
        for &q0 in &self.q_values {
            self.point_config(0, self.a_values[0], q0)?.validate()?;
        }
        Ok(())
    }

    fn point_config(&self, index: usize, a: f64, q0: f64) -> Result<SimulationConfig> {
        Ok(SimulationConfig {
            params: InvestorParams { x0: self.x0, q0, a },
            process: self.process,
            n_agents: self.n_agents,
            t_max: self.t_measure,
            snapshot_times: vec![self.t_measure],
            master_seed: derive_seed(self.master_seed, index as u64),
            n_runs: self.n_runs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub a: f64,
    pub q0: f64,
    pub a_over_q0_sq: f64,
    pub x_mp: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedPoint {
    pub a: f64,
    pub q0: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub process: ReturnProcessSpec,
    pub rows: Vec<SweepRow>,
    pub excluded: Vec<ExcludedPoint>,
    pub fit: ScalingFit,
    pub theory_c: f64,
}

/// Measure the averaged mode at every grid point and fit x_mp = c·a/q0².
///
/// Grid point `(i, j)` (a index `i`, q index `j`) runs with master seed
/// `derive_seed(master_seed, i·|q_values| + j)`.
pub fn run_sweep(config: &SweepConfig, options: &EnsembleOptions) -> Result<SweepResult> {
    config.validate()?;
    let pool = options.pool()?;
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    pool.install(|| -> Result<()> {
        for (i, &a) in config.a_values.iter().enumerate() {
            for (j, &q0) in config.q_values.iter().enumerate() {
                let point = config.point_config(i * config.q_values.len() + j, a, q0)?;
                let measured = simulate_ensemble_in_current_pool(&point, options)
                    .and_then(|e| average_mode(&e.at_time(config.t_measure), config.bins_per_decade));
                match measured {
                    Ok(m) => rows.push(SweepRow {
                        a,
                        q0,
                        a_over_q0_sq: a / (q0 * q0),
                        x_mp: m.x_mp,
                        spread: m.spread,
                    }),
                    Err(e @ (Error::MemoryBudget { .. } | Error::InvalidParameter { .. })) => return Err(e),
                    Err(e) => excluded.push(ExcludedPoint {
                        a,
                        q0,
                        reason: e.to_string(),
                    }),
                }
            }
        }
        Ok(())
    })?;
    let points: Vec<ScalingPoint> = rows
        .iter()
        .map(|r| ScalingPoint {
            a: r.a,
            q0: r.q0,
            x_mp: r.x_mp,
        })
        .collect();
    let fit = fit_scaling_prefactor(&points)?;
    Ok(SweepResult {
        process: config.process,
        rows,
        excluded,
        fit,
        theory_c: scaling_prefactor(&config.process),
    })
}

/// CSV with header `a,q0,a_over_q0_sq,x_mp,spread`.
pub fn write_sweep_csv<W: Write>(result: &SweepResult, mut out: W) -> std::io::Result<()> {
    writeln!(out, "a,q0,a_over_q0_sq,x_mp,spread")?;
    for r in &result.rows {
        writeln!(out, "{},{},{},{},{}", r.a, r.q0, r.a_over_q0_sq, r.x_mp, r.spread)?;
    }
    out.flush()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitReport {
    c: f64,
    stderr: f64,
    n_points: usize,
}

/// Run the sweep; writes `sweep.json`, `sweep.csv` and `fit.json` into `out`.
pub fn cmd_sweep(config: &SweepConfig, out: &Path, options: &EnsembleOptions) -> Result<SweepResult> {
    let result = run_sweep(config, options)?;
    ensure_dir(out)?;
    write_json(&out.join("sweep.json"), &result)?;
    let path = out.join("sweep.csv");
    write_sweep_csv(&result, create(&path)?).map_err(|e| Error::io(&path, e))?;
    write_json(
        &out.join("fit.json"),
        &FitReport {
            c: result.fit.c,
            stderr: result.fit.stderr,
            n_points: result.fit.n_points,
        },
    )?;
    Ok(result)
}

// ------------------------------------------------------------------ theory

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub process: ReturnProcessSpec,
    pub q0: f64,
    pub a: f64,
}

pub fn cmd_theory(config: &TheoryConfig) -> Result<TheoryPrediction> {
    crate::theory::theory_prediction(&config.process, config.q0, config.a)
}

// ----------------------------------------------------------------- compare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Path to a `sweep.json` written by the sweep command.
    pub sweep_result: PathBuf,
    pub process: ReturnProcessSpec,
    /// Parameters of the stationary ensemble used for the shape and tail checks.
    pub q0: f64,
    pub a: f64,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default = "default_agents")]
    pub n_agents: usize,
    #[serde(default = "default_t_measure")]
    pub t_measure: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_bins")]
    pub bins_per_decade: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub fitted_c: f64,
    pub theory_c: f64,
    pub relative_deviation: f64,
    pub tail_mu_hat: f64,
    pub theory_mu: f64,
    pub ks_distance: f64,
}

/// Shape, tail and scaling checks of one stationary ensemble against theory.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryCheck {
    pub law: StationaryLaw,
    pub mode: f64,
    pub tail: crate::stats::TailFit,
    pub ks_distance: f64,
}

/// Simulate one run at `t_measure` and compare it with the stationary law:
/// KS distance against its CDF and a Hill fit above 10× the measured mode.
pub fn stationary_check(config: &CompareConfig, options: &EnsembleOptions) -> Result<StationaryCheck> {
    let sim = SimulationConfig {
        params: InvestorParams {
            x0: config.x0,
            q0: config.q0,
            a: config.a,
        },
        process: config.process,
        n_agents: config.n_agents,
        t_max: config.t_measure,
        snapshot_times: vec![config.t_measure],
        master_seed: config.master_seed,
        n_runs: 1,
    };
    let moments = log_lambda_moments_auto(&config.process, config.q0)?;
    let law = StationaryLaw::from_moments(config.a, &moments)?;
    let ensemble = simulate_ensemble(&sim, options)?;
    let budgets = &ensemble.snapshots[0].budgets;
    let mode = average_mode(&[budgets], config.bins_per_decade)?.x_mp;
    let tail = fit_tail_exponent(budgets, TAIL_THRESHOLD_FACTOR * mode)?;
    let ks = ks_distance(budgets, |x| law.cdf(x))?;
    Ok(StationaryCheck {
        law,
        mode,
        tail,
        ks_distance: ks,
    })
}

pub fn run_compare(config: &CompareConfig, sweep: &SweepResult, options: &EnsembleOptions) -> Result<CompareReport> {
    if sweep.process != config.process {
        return Err(Error::Config {
            path: config.sweep_result.clone(),
            message: format!(
                "sweep was run for the {} process, config names {}",
                sweep.process.name(),
                config.process.name()
            ),
        });
    }
    let check = stationary_check(config, options)?;
    let theory_c = scaling_prefactor(&config.process);
    Ok(CompareReport {
        fitted_c: sweep.fit.c,
        theory_c,
        relative_deviation: (sweep.fit.c - theory_c) / theory_c,
        tail_mu_hat: check.tail.mu_hat,
        theory_mu: check.law.mu(),
        ks_distance: check.ks_distance,
    })
}

/// Writes `compare.json` into `out`.
pub fn cmd_compare(config: &CompareConfig, out: &Path, options: &EnsembleOptions) -> Result<CompareReport> {
    let sweep: SweepResult = load_json(&config.sweep_result)?;
    let report = run_compare(config, &sweep, options)?;
    ensure_dir(out)?;
    write_json(&out.join("compare.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_defaults_follow_protocol() {
        let c: SweepConfig = serde_json::from_str(r#"{"process":{"kind":"binary"}}"#).unwrap();
        assert_eq!(c, SweepConfig::new(ReturnProcessSpec::Binary));
        assert_eq!(c.a_values.len() * c.q_values.len(), 81);
        assert_eq!(c.a_values[2], 0.3);
        assert_eq!((c.n_agents, c.t_measure, c.n_runs), (10_000, 10_000, 10));
    }

    #[test]
    fn sweep_config_rejects_bad_grids() {
        let mut c = SweepConfig::new(ReturnProcessSpec::Binary);
        c.q_values = vec![0.5, 1.5];
        assert!(c.validate().is_err());
        c.q_values = vec![];
        assert!(c.validate().is_err());
        c.q_values = vec![0.5];
        c.a_values = vec![0.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_config_field_is_reported() {
        let err = serde_json::from_str::<SweepConfig>(r#"{"process":{"kind":"binary"},"n_agent":5}"#).unwrap_err();
        assert!(err.to_string().contains("n_agent"));
    }
}
