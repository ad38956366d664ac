//! Statistics measured on simulated ensembles: log-binned densities, mode
//! estimates, Hill tail fits, log-multiplier moments, the scaling prefactor
//! fit and Kolmogorov–Smirnov distances.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{
    analytic_second_moment, sample_return, ProcessState, ReturnProcessSpec, ARCH_MOMENT_DRAWS, ARCH_MOMENT_SEED,
};
use crate::quadrature::integrate_pieces;
use crate::rng::{agent_stream, derive_seed};

pub const DEFAULT_BINS_PER_DECADE: u32 = 10;
pub const MIN_TAIL_SAMPLES: usize = 50;
/// Tail fits start at this multiple of the estimated mode.
pub const TAIL_THRESHOLD_FACTOR: f64 = 10.0;

/// Histogram on the fixed grid of edges 10^(k / bins_per_decade).
///
/// Bin `i` of `counts` is grid bin `first_bin + i`. Aligning to a global grid
/// makes histograms from different workers mergeable by adding counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHistogram {
    pub bins_per_decade: u32,
    pub first_bin: i64,
    pub counts: Vec<u64>,
    pub total: u64,
    /// Non-positive or non-finite inputs that were left out.
    pub excluded: u64,
}

fn grid_edge(k: i64, bins_per_decade: u32) -> f64 {
    10f64.powf(k as f64 / bins_per_decade as f64)
}

fn grid_bin(x: f64, bins_per_decade: u32) -> i64 {
    let mut k = (x.log10() * bins_per_decade as f64).floor() as i64;
    while x < grid_edge(k, bins_per_decade) {
        k -= 1;
    }
    while x >= grid_edge(k + 1, bins_per_decade) {
        k += 1;
    }
    k
}

/// Log-binned histogram of the positive entries of `samples`.
pub fn log_binned_histogram(samples: &[f64], bins_per_decade: u32) -> Result<LogHistogram> {
    if bins_per_decade == 0 {
        return Err(Error::invalid("bins_per_decade", "must be >= 1"));
    }
    let mut bins = Vec::with_capacity(samples.len());
    let mut excluded = 0;
    for &x in samples {
        if x > 0.0 && x.is_finite() {
            bins.push(grid_bin(x, bins_per_decade));
        } else {
            excluded += 1;
        }
    }
    let (Some(&lo), Some(&hi)) = (bins.iter().min(), bins.iter().max()) else {
        return Err(Error::EmptySample {
            excluded: excluded as usize,
        });
    };
    let mut counts = vec![0u64; (hi - lo + 1) as usize];
    for k in &bins {
        counts[(k - lo) as usize] += 1;
    }
    Ok(LogHistogram {
        bins_per_decade,
        first_bin: lo,
        counts,
        total: bins.len() as u64,
        excluded,
    })
}

impl LogHistogram {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_low(&self, i: usize) -> f64 {
        grid_edge(self.first_bin + i as i64, self.bins_per_decade)
    }

    pub fn bin_high(&self, i: usize) -> f64 {
        grid_edge(self.first_bin + i as i64 + 1, self.bins_per_decade)
    }

    /// Geometric center of bin `i`.
    pub fn center(&self, i: usize) -> f64 {
        10f64.powf((self.first_bin as f64 + i as f64 + 0.5) / self.bins_per_decade as f64)
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.counts.len()).map(|i| self.bin_low(i)).collect()
    }

    /// count / (total · width); integrates to 1 over the bins.
    pub fn density(&self) -> Vec<f64> {
        let total = self.total as f64;
        (0..self.counts.len())
            .map(|i| self.counts[i] as f64 / (total * (self.bin_high(i) - self.bin_low(i))))
            .collect()
    }

    /// Add the counts of `other` (same `bins_per_decade`) into `self`.
    pub fn merge(&mut self, other: &LogHistogram) -> Result<()> {
        if other.bins_per_decade != self.bins_per_decade {
            return Err(Error::invalid("bins_per_decade", "histograms use different grids"));
        }
        if other.counts.is_empty() {
            self.excluded += other.excluded;
            return Ok(());
        }
        let lo = self.first_bin.min(other.first_bin);
        let hi = (self.first_bin + self.counts.len() as i64).max(other.first_bin + other.counts.len() as i64);
        let mut counts = vec![0u64; (hi - lo) as usize];
        for (src, first) in [(&self.counts, self.first_bin), (&other.counts, other.first_bin)] {
            for (i, c) in src.iter().enumerate() {
                counts[(first - lo) as usize + i] += c;
            }
        }
        self.first_bin = lo;
        self.counts = counts;
        self.total += other.total;
        self.excluded += other.excluded;
        Ok(())
    }

    /// CSV with header `bin_low,bin_high,count,density`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin_low,bin_high,count,density")?;
        for (i, d) in self.density().into_iter().enumerate() {
            writeln!(out, "{},{},{},{}", self.bin_low(i), self.bin_high(i), self.counts[i], d)?;
        }
        out.flush()
    }
}

/// Abscissa of the density maximum.
///
/// The peak bin is refined by a parabola through (log x, log density) of the
/// peak and its two neighbours. Peaks on the histogram boundary, or next to an
/// empty bin, fall back to the geometric bin center.
pub fn most_probable_value(hist: &LogHistogram) -> Result<f64> {
    if hist.total == 0 || hist.counts.is_empty() {
        return Err(Error::EmptySample {
            excluded: hist.excluded as usize,
        });
    }
    if hist.counts.len() > 1 && hist.counts.iter().all(|&c| c == hist.counts[0]) {
        return Err(Error::FlatHistogram);
    }
    let density = hist.density();
    let mut peak = 0;
    for (i, &d) in density.iter().enumerate() {
        if d > density[peak] {
            peak = i;
        }
    }
    if peak == 0 || peak + 1 == density.len() || density[peak - 1] == 0.0 || density[peak + 1] == 0.0 {
        return Ok(hist.center(peak));
    }
    let (ym, y0, yp) = (density[peak - 1].ln(), density[peak].ln(), density[peak + 1].ln());
    let curvature = ym - 2.0 * y0 + yp;
    if curvature >= 0.0 {
        return Ok(hist.center(peak));
    }
    let h = std::f64::consts::LN_10 / hist.bins_per_decade as f64;
    let offset = 0.5 * h * (ym - yp) / curvature;
    Ok((hist.center(peak).ln() + offset).exp())
}

/// Mode averaged over independent runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    pub x_mp: f64,
    /// Sample standard deviation across runs; 0 for a single run.
    pub spread: f64,
    pub n_runs: usize,
    pub n_failed: usize,
}

/// Per-run mode estimate, then mean and standard deviation across runs.
/// Runs whose mode cannot be estimated are skipped and counted.
pub fn average_mode(runs: &[&[f64]], bins_per_decade: u32) -> Result<ModeEstimate> {
    if runs.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut modes = Vec::with_capacity(runs.len());
    let mut first_err = None;
    for run in runs {
        match log_binned_histogram(run, bins_per_decade).and_then(|h| most_probable_value(&h)) {
            Ok(m) => modes.push(m),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if modes.is_empty() {
        return Err(first_err.expect("every run failed"));
    }
    let n = modes.len() as f64;
    let x_mp = modes.iter().sum::<f64>() / n;
    let spread = if modes.len() > 1 {
        (modes.iter().map(|m| (m - x_mp).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(ModeEstimate {
        x_mp,
        spread,
        n_runs: modes.len(),
        n_failed: runs.len() - modes.len(),
    })
}

/// Hill fit of P(X > x) ∝ x^(−μ) above `x_min`; the density exponent is −(1+μ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub mu_hat: f64,
    pub x_min: f64,
    pub n_tail: usize,
    pub stderr: f64,
}

/// Maximum-likelihood (Hill) estimate μ̂ = n / Σ ln(xᵢ / x_min) over xᵢ > x_min.
pub fn fit_tail_exponent(samples: &[f64], x_min: f64) -> Result<TailFit> {
    if !(x_min.is_finite() && x_min > 0.0) {
        return Err(Error::invalid("x_min", format!("must be finite and > 0, got {x_min}")));
    }
    let (n, log_sum) = samples
        .iter()
        .filter(|&&x| x > x_min && x.is_finite())
        .fold((0usize, 0.0), |(n, s), &x| (n + 1, s + (x / x_min).ln()));
    if n < MIN_TAIL_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_TAIL_SAMPLES,
            got: n,
        });
    }
    let mu_hat = n as f64 / log_sum;
    Ok(TailFit {
        mu_hat,
        x_min,
        n_tail: n,
        stderr: mu_hat / (n as f64).sqrt(),
    })
}

/// How ⟨log λ⟩ and D are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMethod {
    /// Two-point enumeration (binary returns only).
    Exact,
    /// Adaptive quadrature against the return density (uniform, normal).
    Quadrature,
    MonteCarlo {
        draws: u64,
        seed: u64,
    },
}

impl MomentMethod {
    pub fn preferred(spec: &ReturnProcessSpec) -> Self {
        match spec {
            ReturnProcessSpec::Binary => MomentMethod::Exact,
            ReturnProcessSpec::Uniform { .. } | ReturnProcessSpec::Normal { .. } => MomentMethod::Quadrature,
            ReturnProcessSpec::Arch1 { .. } => MomentMethod::MonteCarlo {
                draws: ARCH_MOMENT_DRAWS,
                seed: ARCH_MOMENT_SEED,
            },
        }
    }
}

/// Moments of log λ for λ = 1 + q0·r.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLambdaMoments {
    pub mean_log_lambda: f64,
    /// D = ⟨log²λ⟩ − ⟨log λ⟩².
    pub diffusion: f64,
    /// Standard errors; zero for deterministic methods.
    pub mean_stderr: f64,
    pub diffusion_stderr: f64,
    /// ⟨r²⟩ − ⟨r⟩² under the same method (from the same draws for Monte Carlo).
    pub return_variance: f64,
    pub method: MomentMethod,
}

const QUAD_REL_TOL: f64 = 1e-12;

pub fn log_lambda_moments(process: &ReturnProcessSpec, q0: f64, method: MomentMethod) -> Result<LogLambdaMoments> {
    process.validate()?;
    if !(q0.is_finite() && q0 > 0.0 && q0 <= 1.0) {
        return Err(Error::invalid("q0", format!("must lie in (0, 1], got {q0}")));
    }
    let reach = q0 * process.support_radius();
    if matches!(process, ReturnProcessSpec::Binary) && reach >= 1.0 || reach > 1.0 {
        return Err(Error::NonPositiveMultiplier);
    }
    match (method, *process) {
        (MomentMethod::Exact, ReturnProcessSpec::Binary) => {
            let up = q0.ln_1p();
            let down = (-q0).ln_1p();
            let half_gap = 0.5 * (up - down);
            Ok(LogLambdaMoments {
                mean_log_lambda: 0.5 * (up + down),
                diffusion: half_gap * half_gap,
                mean_stderr: 0.0,
                diffusion_stderr: 0.0,
                return_variance: 1.0,
                method,
            })
        }
        (MomentMethod::Quadrature, ReturnProcessSpec::Uniform { bound }) => {
            let density = move |_r: f64| 0.5 / bound;
            quadrature_moments(
                q0,
                &[-bound, 0.0, bound],
                density,
                method,
                analytic_second_moment(process),
            )
        }
        (MomentMethod::Quadrature, ReturnProcessSpec::Normal { sigma, bound }) => {
            let mut cuts = vec![-bound, bound, 0.0];
            for k in [1.0, 3.0, 8.0] {
                if k * sigma < bound {
                    cuts.push(-k * sigma);
                    cuts.push(k * sigma);
                }
            }
            cuts.sort_by(f64::total_cmp);
            let gauss = move |r: f64| (-0.5 * (r / sigma).powi(2)).exp();
            let norm = integrate_pieces(gauss, &cuts, 0.0, QUAD_REL_TOL)?.value;
            let density = move |r: f64| gauss(r) / norm;
            quadrature_moments(q0, &cuts, density, method, analytic_second_moment(process))
        }
        (MomentMethod::MonteCarlo { draws, seed }, spec) => monte_carlo_moments(&spec, q0, draws, seed),
        (m, spec) => Err(Error::Unsupported(format!(
            "moment method {m:?} is not available for the {} process",
            spec.name()
        ))),
    }
}

fn quadrature_moments<P: Fn(f64) -> f64 + Copy>(
    q0: f64,
    cuts: &[f64],
    density: P,
    method: MomentMethod,
    return_variance: f64,
) -> Result<LogLambdaMoments> {
    let log_lambda = move |r: f64| (q0 * r).ln_1p();
    // absolute tolerances scale with the integrand: log λ ~ q0, (log λ)² ~ q0²
    let mean = integrate_pieces(|r| log_lambda(r) * density(r), cuts, 1e-14 * q0, QUAD_REL_TOL)?.value;
    let diffusion = integrate_pieces(
        |r| (log_lambda(r) - mean).powi(2) * density(r),
        cuts,
        1e-14 * q0 * q0,
        QUAD_REL_TOL,
    )?
    .value;
    Ok(LogLambdaMoments {
        mean_log_lambda: mean,
        diffusion,
        mean_stderr: 0.0,
        diffusion_stderr: 0.0,
        return_variance,
        method,
    })
}

fn monte_carlo_moments(spec: &ReturnProcessSpec, q0: f64, draws: u64, seed: u64) -> Result<LogLambdaMoments> {
    const BATCHES: u64 = 100;
    if draws < 2 * BATCHES {
        return Err(Error::TooFewSamples {
            needed: (2 * BATCHES) as usize,
            got: draws as usize,
        });
    }
    // Every supported law is symmetric, so ⟨r⟩ = 0 exactly and q0·r serves as a
    // control variate for log λ: the mean is taken over log λ − q0·r.
    let per_batch = draws / BATCHES;
    let mut state = ProcessState::new(agent_stream(derive_seed(seed, 1), 0, 0));
    let (mut s1, mut s2, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0);
    let mut batch_mean = Vec::with_capacity(BATCHES as usize);
    let mut batch_diff = Vec::with_capacity(BATCHES as usize);
    for _ in 0..BATCHES {
        let (mut b1, mut b2) = (0.0, 0.0);
        for _ in 0..per_batch {
            let r = sample_return(spec, &mut state);
            let l = (q0 * r).ln_1p();
            b1 += l - q0 * r;
            b2 += l * l;
            r1 += r;
            r2 += r * r;
        }
        let m = b1 / per_batch as f64;
        batch_mean.push(m);
        batch_diff.push(b2 / per_batch as f64);
        s1 += b1;
        s2 += b2;
    }
    let n = (per_batch * BATCHES) as f64;
    let mean = s1 / n;
    let diffusion = s2 / n - mean * mean;
    let stderr = |xs: &[f64]| {
        let mu = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        (var / xs.len() as f64).sqrt()
    };
    Ok(LogLambdaMoments {
        mean_log_lambda: mean,
        diffusion,
        mean_stderr: stderr(&batch_mean),
        diffusion_stderr: stderr(&batch_diff),
        return_variance: r2 / n - (r1 / n).powi(2),
        method: MomentMethod::MonteCarlo { draws, seed },
    })
}

/// Log-moments with the preferred method for the process.
pub fn log_lambda_moments_auto(process: &ReturnProcessSpec, q0: f64) -> Result<LogLambdaMoments> {
    log_lambda_moments(process, q0, MomentMethod::preferred(process))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub a: f64,
    pub q0: f64,
    pub x_mp: f64,
}

impl ScalingPoint {
    pub fn regressor(&self) -> f64 {
        self.a / (self.q0 * self.q0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub c: f64,
    pub stderr: f64,
    pub n_points: usize,
}

/// Least-squares slope through the origin of x_mp against a/q0².
pub fn fit_scaling_prefactor(points: &[ScalingPoint]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::TooFewSamples {
            needed: 3,
            got: points.len(),
        });
    }
    let xs: Vec<f64> = points.iter().map(ScalingPoint::regressor).collect();
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if hi - lo <= 1e-12 * hi.abs() {
        return Err(Error::DegenerateRegressor);
    }
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(points).map(|(x, p)| x * p.x_mp).sum();
    let c = sxy / sxx;
    let rss: f64 = xs.iter().zip(points).map(|(x, p)| (p.x_mp - c * x).powi(2)).sum();
    let stderr = (rss / (points.len() - 1) as f64 / sxx).sqrt();
    Ok(ScalingFit {
        c,
        stderr,
        n_points: points.len(),
    })
}

/// sup |F_n(x) − F(x)| of the sample against a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample { excluded: 0 });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted.iter().enumerate().fold(0.0, |d: f64, (i, &x)| {
        let f = cdf(x);
        d.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs())
    }))
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample { excluded: 0 });
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}
