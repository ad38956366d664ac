//! The budget map x(t+1) = x(t)·(1 + r(t)·q0) + a, for single agents and
//! ensembles, plus the closed-form solution for a constant multiplier.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{Arch1Kernel, BinaryKernel, NormalKernel, ReturnKernel, ReturnProcessSpec, UniformKernel};
use crate::rng::{StreamKey, StreamRng};

/// Budgets above this are treated as numerical divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e300;

pub const DEFAULT_X0: f64 = 10.0;
pub const DEFAULT_AGENTS: usize = 10_000;
pub const DEFAULT_T_MAX: u64 = 10_000;
pub const DEFAULT_SNAPSHOTS: [u64; 4] = [10, 100, 1_000, 10_000];
pub const DEFAULT_MEMORY_BUDGET: u64 = 2 << 30;
pub const MAX_TRAJECTORY_AGENTS: usize = 100;

fn default_x0() -> f64 {
    DEFAULT_X0
}

/// Investor parameters. `a == 0` selects the log-normal limit (no repulsion
/// from zero); `q0 == 0` switches the multiplicative noise off entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvestorParams {
    #[serde(default = "default_x0")]
    pub x0: f64,
    pub q0: f64,
    pub a: f64,
}

impl InvestorParams {
    pub fn new(x0: f64, q0: f64, a: f64) -> Result<Self> {
        let p = Self { x0, q0, a };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x0.is_finite() && self.x0 > 0.0) {
            return Err(Error::invalid(
                "params.x0",
                format!("must be finite and > 0, got {}", self.x0),
            ));
        }
        if !(self.q0.is_finite() && (0.0..=1.0).contains(&self.q0)) {
            return Err(Error::invalid(
                "params.q0",
                format!("must lie in [0, 1], got {}", self.q0),
            ));
        }
        if !(self.a.is_finite() && self.a >= 0.0) {
            return Err(Error::invalid(
                "params.a",
                format!("must be finite and >= 0, got {}", self.a),
            ));
        }
        Ok(())
    }

    /// Checks λ = 1 + r·q0 ≥ 0 over the whole support of `process`.
    pub fn validate_with(&self, process: &ReturnProcessSpec) -> Result<()> {
        self.validate()?;
        process.validate()?;
        let worst = self.q0 * process.support_radius();
        if worst > 1.0 {
            return Err(Error::invalid(
                "params.q0",
                format!("q0 * bound = {worst} > 1 lets the multiplier turn negative"),
            ));
        }
        Ok(())
    }
}

fn default_agents() -> usize {
    DEFAULT_AGENTS
}
fn default_t_max() -> u64 {
    DEFAULT_T_MAX
}
fn default_snapshots() -> Vec<u64> {
    DEFAULT_SNAPSHOTS.to_vec()
}
fn default_runs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub params: InvestorParams,
    pub process: ReturnProcessSpec,
    #[serde(default = "default_agents")]
    pub n_agents: usize,
    #[serde(default = "default_t_max")]
    pub t_max: u64,
    #[serde(default = "default_snapshots")]
    pub snapshot_times: Vec<u64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
}

impl SimulationConfig {
    /// Defaults: 10⁴ agents, t_max = 10⁴, snapshots at 10, 10², 10³, 10⁴, one run.
    pub fn new(params: InvestorParams, process: ReturnProcessSpec) -> Self {
        Self {
            params,
            process,
            n_agents: DEFAULT_AGENTS,
            t_max: DEFAULT_T_MAX,
            snapshot_times: default_snapshots(),
            master_seed: 0,
            n_runs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate_with(&self.process)?;
        if self.n_agents == 0 {
            return Err(Error::invalid("n_agents", "must be >= 1"));
        }
        if self.n_runs == 0 {
            return Err(Error::invalid("n_runs", "must be >= 1"));
        }
        if self.t_max == 0 {
            return Err(Error::invalid("t_max", "must be >= 1"));
        }
        if self.snapshot_times.is_empty() {
            return Err(Error::invalid("snapshot_times", "must not be empty"));
        }
        if self.snapshot_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("snapshot_times", "must be strictly increasing"));
        }
        if let Some(&last) = self.snapshot_times.last() {
            if last > self.t_max {
                return Err(Error::invalid(
                    "snapshot_times",
                    format!("time {last} exceeds t_max = {}", self.t_max),
                ));
            }
        }
        Ok(())
    }
}

/// Budgets of all agents of one run at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSnapshot {
    pub time: u64,
    pub run_index: usize,
    pub budgets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub values: Vec<f64>,
    /// Set when some budget exceeded [`DIVERGENCE_LIMIT`] or stopped being finite.
    pub diverged: bool,
}

/// One application of the map. Inputs must be finite.
pub fn step(x: f64, r: f64, q0: f64, a: f64) -> Result<f64> {
    for (field, v) in [("x", x), ("r", r), ("q0", q0), ("a", a)] {
        if !v.is_finite() {
            return Err(Error::invalid(field, format!("must be finite, got {v}")));
        }
    }
    Ok(x * (1.0 + r * q0) + a)
}

/// x(t) = λᵗ·x0 + a·(1 − λᵗ)/(1 − λ), or x0 + a·t when λ = 1.
///
/// For |λ| ≥ 1 the value grows without bound as t → ∞.
pub fn closed_form_constant_lambda(x0: f64, lambda: f64, a: f64, t: u64) -> f64 {
    if lambda == 1.0 {
        return x0 + a * t as f64;
    }
    let lt = if t <= i32::MAX as u64 {
        lambda.powi(t as i32)
    } else {
        lambda.powf(t as f64)
    };
    lt * x0 + a * (1.0 - lt) / (1.0 - lambda)
}

/// Agents advanced together in one loop. Their updates are independent, so
/// interleaving hides the latency of each agent's multiply-add chain.
const LANES: usize = 4;
/// Agents per parallel work item.
const BLOCK: usize = 64;

/// Budgets of one agent at each checkpoint; `peak` flags divergence.
struct AgentRun {
    at_checkpoints: Vec<f64>,
    peak: f64,
}

fn run_lanes<K: ReturnKernel, const L: usize>(
    kernel: K,
    params: InvestorParams,
    checkpoints: &[u64],
    mut rngs: [StreamRng; L],
) -> [AgentRun; L] {
    let (q0, a) = (params.q0, params.a);
    let mut x = [params.x0; L];
    let mut previous = [0.0; L];
    let mut peak = [params.x0; L];
    let mut at: [Vec<f64>; L] = std::array::from_fn(|_| Vec::with_capacity(checkpoints.len()));
    let mut now = 0;
    for &t in checkpoints {
        for _ in now..t {
            for l in 0..L {
                let r = kernel.draw(&mut previous[l], &mut rngs[l]);
                x[l] = x[l] * (1.0 + r * q0) + a;
                peak[l] = peak[l].max(x[l]);
            }
        }
        now = t;
        for l in 0..L {
            if !x[l].is_finite() {
                peak[l] = f64::INFINITY;
            }
            at[l].push(x[l]);
        }
    }
    let mut at = at.into_iter();
    std::array::from_fn(|l| AgentRun {
        at_checkpoints: at.next().expect("one vector per lane"),
        peak: peak[l],
    })
}

/// Runs agents `first..first + count` of one run, lane-interleaved.
fn run_block<K: ReturnKernel>(
    kernel: K,
    params: InvestorParams,
    checkpoints: &[u64],
    key: impl Fn(usize) -> StreamKey,
    first: usize,
    count: usize,
) -> Vec<AgentRun> {
    let mut out = Vec::with_capacity(count);
    let mut i = first;
    while i + LANES <= first + count {
        let rngs: [StreamRng; LANES] = std::array::from_fn(|l| key(i + l).rng());
        out.extend(run_lanes(kernel, params, checkpoints, rngs));
        i += LANES;
    }
    for j in i..first + count {
        let [single] = run_lanes(kernel, params, checkpoints, [key(j).rng()]);
        out.push(single);
    }
    out
}

fn trajectory<K: ReturnKernel>(kernel: K, params: InvestorParams, t_max: u64, mut rng: StreamRng) -> Trajectory {
    let mut values = Vec::with_capacity(t_max as usize + 1);
    let mut x = params.x0;
    let mut previous = 0.0;
    let mut diverged = false;
    values.push(x);
    for _ in 0..t_max {
        let r = kernel.draw(&mut previous, &mut rng);
        x = x * (1.0 + r * params.q0) + params.a;
        if !(x <= DIVERGENCE_LIMIT) {
            diverged = true;
        }
        values.push(x);
    }
    Trajectory { values, diverged }
}

macro_rules! with_kernel {
    ($spec:expr, |$k:ident| $body:expr) => {
        match *$spec {
            ReturnProcessSpec::Binary => {
                let $k = BinaryKernel;
                $body
            }
            ReturnProcessSpec::Uniform { bound } => {
                let $k = UniformKernel { bound };
                $body
            }
            ReturnProcessSpec::Normal { sigma, bound } => {
                let $k = NormalKernel { sigma, bound };
                $body
            }
            ReturnProcessSpec::Arch1 { alpha0, alpha1, bound } => {
                let $k = Arch1Kernel { alpha0, alpha1, bound };
                $body
            }
        }
    };
}

/// Iterate one agent for `t_max` steps; returns all t_max + 1 budgets.
pub fn simulate_agent(
    params: InvestorParams,
    process: &ReturnProcessSpec,
    t_max: u64,
    rng: StreamRng,
) -> Result<Trajectory> {
    params.validate_with(process)?;
    Ok(with_kernel!(process, |k| trajectory(k, params, t_max, rng)))
}

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    /// Worker threads; `None` uses all available cores.
    pub workers: Option<usize>,
    pub memory_budget_bytes: u64,
    /// Keep full trajectories (only for n_agents ≤ 100).
    pub record_trajectories: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            workers: None,
            memory_budget_bytes: DEFAULT_MEMORY_BUDGET,
            record_trajectories: false,
        }
    }
}

impl EnsembleOptions {
    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers: Some(workers),
            ..Self::default()
        }
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            if n == 0 {
                return Err(Error::invalid("workers", "must be >= 1"));
            }
            builder = builder.num_threads(n);
        }
        builder
            .build()
            .map_err(|e| Error::Unsupported(format!("cannot start worker pool: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    /// Ordered by run, then by snapshot time.
    pub snapshots: Vec<EnsembleSnapshot>,
    /// `trajectories[run][agent]`, present only when requested.
    pub trajectories: Option<Vec<Vec<Trajectory>>>,
}

impl EnsembleOutput {
    /// Budgets of every run at `time`, in run order.
    pub fn at_time(&self, time: u64) -> Vec<&[f64]> {
        self.snapshots
            .iter()
            .filter(|s| s.time == time)
            .map(|s| s.budgets.as_slice())
            .collect()
    }
}

fn required_bytes(config: &SimulationConfig, options: &EnsembleOptions) -> u64 {
    let per_agent = config.snapshot_times.len() as u64
        + if options.record_trajectories {
            config.t_max + 1
        } else {
            0
        };
    (config.n_runs as u64)
        .saturating_mul(config.n_agents as u64)
        .saturating_mul(per_agent)
        .saturating_mul(8)
}

/// Simulate `n_runs` independent ensembles of `n_agents` agents.
///
/// Agent `i` of run `k` draws from stream `(master_seed, i, k)`, so the result
/// is bitwise identical for any worker count.
pub fn simulate_ensemble(config: &SimulationConfig, options: &EnsembleOptions) -> Result<EnsembleOutput> {
    let pool = options.pool()?;
    pool.install(|| simulate_ensemble_in_current_pool(config, options))
}

/// Like [`simulate_ensemble`] but runs on the caller's rayon pool.
pub(crate) fn simulate_ensemble_in_current_pool(
    config: &SimulationConfig,
    options: &EnsembleOptions,
) -> Result<EnsembleOutput> {
    config.validate()?;
    if options.record_trajectories && config.n_agents > MAX_TRAJECTORY_AGENTS {
        return Err(Error::invalid(
            "n_agents",
            format!("trajectory recording is limited to {MAX_TRAJECTORY_AGENTS} agents"),
        ));
    }
    let required = required_bytes(config, options);
    if required > options.memory_budget_bytes {
        return Err(Error::MemoryBudget {
            required,
            budget: options.memory_budget_bytes,
        });
    }
    with_kernel!(&config.process, |k| run_ensemble(k, config, options))
}

fn run_ensemble<K: ReturnKernel>(
    kernel: K,
    config: &SimulationConfig,
    options: &EnsembleOptions,
) -> Result<EnsembleOutput> {
    let params = config.params;
    let times = &config.snapshot_times;
    let mut snapshots = Vec::with_capacity(config.n_runs * times.len());
    let mut trajectories = options.record_trajectories.then(Vec::new);

    for run in 0..config.n_runs {
        let key = |agent: usize| StreamKey::new(config.master_seed, agent as u64, run as u64);
        let n = config.n_agents;
        let blocks = n.div_ceil(BLOCK);
        let agents: Vec<AgentRun> = (0..blocks)
            .into_par_iter()
            .map(|b| run_block(kernel, params, times, key, b * BLOCK, BLOCK.min(n - b * BLOCK)))
            .flatten_iter()
            .collect();

        if let Some(agent) = agents.iter().position(|r| !(r.peak <= DIVERGENCE_LIMIT)) {
            return Err(Error::Diverged { run, agent });
        }
        for (j, &time) in times.iter().enumerate() {
            snapshots.push(EnsembleSnapshot {
                time,
                run_index: run,
                budgets: agents.iter().map(|r| r.at_checkpoints[j]).collect(),
            });
        }
        if let Some(all) = trajectories.as_mut() {
            let run_traj: Vec<Trajectory> = (0..config.n_agents)
                .into_par_iter()
                .map(|i| trajectory(kernel, params, config.t_max, key(i).rng()))
                .collect();
            all.push(run_traj);
        }
    }
    Ok(EnsembleOutput {
        snapshots,
        trajectories,
    })
}

/// Write snapshots as CSV with header `run,time,agent,budget`.
pub fn write_snapshots_csv<W: Write>(snapshots: &[EnsembleSnapshot], mut out: W) -> std::io::Result<()> {
    writeln!(out, "run,time,agent,budget")?;
    for s in snapshots {
        for (agent, b) in s.budgets.iter().enumerate() {
            writeln!(out, "{},{},{},{}", s.run_index, s.time, agent, b)?;
        }
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::agent_stream;

    #[test]
    fn step_examples() {
        assert!((step(10.0, 1.0, 0.1, 0.5).unwrap() - 11.5).abs() < 1e-12);
        assert_eq!(step(10.0, -1.0, 1.0, 0.5).unwrap(), 0.5);
        assert_eq!(step(0.0, 0.7, 0.1, 0.5).unwrap(), 0.5);
        assert_eq!(step(0.0, -1.0, 0.1, 0.5).unwrap(), 0.5);
        assert!(step(f64::NAN, 0.0, 0.1, 0.5).is_err());
        assert!(step(1.0, f64::INFINITY, 0.1, 0.5).is_err());
    }

    #[test]
    fn closed_form_examples() {
        assert!((closed_form_constant_lambda(10.0, 0.5, 1.0, 2) - 4.0).abs() < 1e-15);
        assert!((closed_form_constant_lambda(10.0, 0.5, 1.0, 200) - 2.0).abs() < 1e-9);
        assert_eq!(closed_form_constant_lambda(10.0, 1.0, 1.0, 7), 17.0);
        assert_eq!(closed_form_constant_lambda(3.0, 0.9, 1.0, 0), 3.0);
    }

    #[test]
    fn zero_risk_is_linear_growth() {
        let p = InvestorParams::new(10.0, 0.0, 0.5).unwrap();
        let tr = simulate_agent(p, &ReturnProcessSpec::uniform(), 1000, agent_stream(1, 0, 0)).unwrap();
        assert_eq!(tr.values.len(), 1001);
        for (t, &x) in tr.values.iter().enumerate() {
            assert_eq!(x, 10.0 + 0.5 * t as f64);
        }
    }

    #[test]
    fn binary_without_income_telescopes() {
        let q0 = 0.1;
        let p = InvestorParams::new(10.0, q0, 0.0).unwrap();
        let tr = simulate_agent(p, &ReturnProcessSpec::Binary, 500, agent_stream(3, 0, 0)).unwrap();
        let mut log_sum = 0.0;
        for w in tr.values.windows(2) {
            let ratio = w[1] / w[0];
            let up = (ratio - 1.1).abs() < 1e-12;
            let down = (ratio - 0.9).abs() < 1e-12;
            assert!(up || down);
            log_sum += if up { 1.1f64.ln() } else { 0.9f64.ln() };
        }
        let last = *tr.values.last().unwrap();
        assert!(((last.ln() - 10f64.ln()) - log_sum).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        let p = InvestorParams::new(10.0, 0.1, 0.5).unwrap();
        let mut c = SimulationConfig::new(p, ReturnProcessSpec::Binary);
        assert!(c.validate().is_ok());
        c.snapshot_times = vec![];
        assert!(c.validate().is_err());
        c.snapshot_times = vec![10, 10];
        assert!(c.validate().is_err());
        c.snapshot_times = vec![10, 20_000];
        assert!(c.validate().is_err());
        c.snapshot_times = vec![10];
        c.process = ReturnProcessSpec::uniform().with_bound(20.0).unwrap();
        assert!(matches!(
            c.validate(),
            Err(Error::InvalidParameter { field: "params.q0", .. })
        ));
        assert!(InvestorParams::new(10.0, 1.5, 0.5).is_err());
        assert!(InvestorParams::new(0.0, 0.5, 0.5).is_err());
        assert!(InvestorParams::new(1.0, 0.5, -0.5).is_err());
    }

    #[test]
    fn memory_budget_checked_up_front() {
        let p = InvestorParams::new(10.0, 0.1, 0.5).unwrap();
        let c = SimulationConfig::new(p, ReturnProcessSpec::Binary);
        let opts = EnsembleOptions {
            memory_budget_bytes: 1000,
            ..EnsembleOptions::default()
        };
        assert!(matches!(simulate_ensemble(&c, &opts), Err(Error::MemoryBudget { .. })));
    }

    #[test]
    fn trajectories_only_for_small_ensembles() {
        let p = InvestorParams::new(10.0, 0.1, 0.5).unwrap();
        let mut c = SimulationConfig::new(p, ReturnProcessSpec::Binary);
        c.n_agents = 101;
        c.t_max = 10;
        c.snapshot_times = vec![10];
        let opts = EnsembleOptions {
            record_trajectories: true,
            ..EnsembleOptions::default()
        };
        assert!(simulate_ensemble(&c, &opts).is_err());
        c.n_agents = 5;
        let out = simulate_ensemble(&c, &opts).unwrap();
        let tr = out.trajectories.unwrap();
        assert_eq!(tr[0].len(), 5);
        for (agent, t) in tr[0].iter().enumerate() {
            assert_eq!(*t.values.last().unwrap(), out.snapshots[0].budgets[agent]);
        }
    }

    #[test]
    fn divergence_is_flagged() {
        // λ=2 every step: overflows after ~1000 steps
        let p = InvestorParams::new(10.0, 1.0, 0.5).unwrap();
        #[derive(Clone, Copy)]
        struct Doubling;
        impl ReturnKernel for Doubling {
            fn draw(&self, _: &mut f64, _: &mut StreamRng) -> f64 {
                1.0
            }
        }
        let tr = trajectory(Doubling, p, 1100, agent_stream(0, 0, 0));
        assert!(tr.diverged);
        let [run] = run_lanes(Doubling, p, &[1100], [agent_stream(0, 0, 0)]);
        assert!(!(run.peak <= DIVERGENCE_LIMIT));
    }

    #[test]
    fn snapshot_csv_header() {
        let s = vec![EnsembleSnapshot {
            time: 5,
            run_index: 1,
            budgets: vec![1.5, 2.0],
        }];
        let mut buf = Vec::new();
        write_snapshots_csv(&s, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "run,time,agent,budget\n1,5,0,1.5\n1,5,1,2\n"
        );
    }
}
