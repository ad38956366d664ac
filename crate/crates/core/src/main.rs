use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kesten_budget::cli::{self, CompareConfig, SweepConfig, TheoryConfig};
use kesten_budget::dynamics::{EnsembleOptions, SimulationConfig};
use kesten_budget::error::{Error, Result};
use kesten_budget::process::ReturnProcessSpec;

#[derive(Parser)]
#[command(
    name = "kesten-budget",
    version,
    about = "Budget dynamics of investors under random returns"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores. Does not affect results.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn options(&self) -> EnsembleOptions {
        EnsembleOptions {
            workers: self.workers,
            ..EnsembleOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one ensemble and write snapshots, histograms and the theory overlay.
    Simulate(Common),
    /// Measure the most probable budget on an (a, q0) grid and fit the scaling prefactor.
    Sweep(Common),
    /// Print closed-form predictions for one process and (q0, a).
    Theory {
        /// JSON config with `process`, `q0` and `a`.
        #[arg(long, conflicts_with_all = ["process", "q0", "a"])]
        config: Option<PathBuf>,
        /// Process as inline JSON, e.g. '{"kind":"normal","sigma":0.1}'.
        #[arg(long, requires_all = ["q0", "a"])]
        process: Option<String>,
        #[arg(long)]
        q0: Option<f64>,
        #[arg(long)]
        a: Option<f64>,
        /// Also write theory.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a sweep result and a stationary ensemble with theory.
    Compare(Common),
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let mut config: SimulationConfig = cli::load_json(&c.config)?;
            if let Some(seed) = c.seed {
                config.master_seed = seed;
            }
            let summary = cli::cmd_simulate(&config, &c.out, &c.options())?;
            for m in &summary.modes {
                println!("t={} x_mp={:.6} spread={:.6}", m.time, m.mode.x_mp, m.mode.spread);
            }
        }
        Command::Sweep(c) => {
            let mut config: SweepConfig = cli::load_json(&c.config)?;
            if let Some(seed) = c.seed {
                config.master_seed = seed;
            }
            let result = cli::cmd_sweep(&config, &c.out, &c.options())?;
            println!(
                "c={:.6} stderr={:.6} points={} excluded={} theory_c={:.6}",
                result.fit.c,
                result.fit.stderr,
                result.fit.n_points,
                result.excluded.len(),
                result.theory_c
            );
        }
        Command::Theory {
            config,
            process,
            q0,
            a,
            out,
        } => {
            let config = match config {
                Some(path) => cli::load_json::<TheoryConfig>(&path)?,
                None => inline_theory(process, q0, a)?,
            };
            let prediction = cli::cmd_theory(&config)?;
            let json = serde_json::to_string_pretty(&prediction).expect("serializable");
            println!("{json}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let path = dir.join("theory.json");
                std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::Compare(c) => {
            let mut config: CompareConfig = cli::load_json(&c.config)?;
            if let Some(seed) = c.seed {
                config.master_seed = seed;
            }
            if config.sweep_result.is_relative() {
                let base = c.config.parent().unwrap_or(Path::new(""));
                config.sweep_result = base.join(&config.sweep_result);
            }
            let report = cli::cmd_compare(&config, &c.out, &c.options())?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
    }
    Ok(())
}

fn inline_theory(process: Option<String>, q0: Option<f64>, a: Option<f64>) -> Result<TheoryConfig> {
    let (Some(process), Some(q0), Some(a)) = (process, q0, a) else {
        return Err(Error::invalid("theory", "give --config or all of --process, --q0, --a"));
    };
    let process: ReturnProcessSpec = serde_json::from_str(&process).map_err(|e| Error::Config {
        path: PathBuf::from("--process"),
        message: e.to_string(),
    })?;
    Ok(TheoryConfig { process, q0, a })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
