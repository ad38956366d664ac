//! Return-on-investment generators.
//!
//! Four models for r(t): a fair binary switch on {-1, +1}, a uniform law on
//! (-C, C), a normal law truncated to (-C, C), and an ARCH(1) recursion whose
//! innovations are truncated the same way. Out-of-range draws are rejected and
//! redrawn, never clamped.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, StreamRng};

pub const DEFAULT_BOUND: f64 = 1.0;

/// Parameters of one return model.
///
/// Deserializing validates the parameters, so a spec read from JSON is
/// always valid. Literal construction of the variants skips that check;
/// [`ReturnProcessSpec::validate`] runs again wherever a sampler is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub enum ReturnProcessSpec {
    Binary,
    Uniform { bound: f64 },
    Normal { sigma: f64, bound: f64 },
    Arch1 { alpha0: f64, alpha1: f64, bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Binary,
    Uniform,
    Normal,
    Arch1,
}

/// Wire form: `{"kind": ..., "sigma"?, "alpha0"?, "alpha1"?, "bound"?}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bound: Option<f64>,
}

impl TryFrom<RawSpec> for ReturnProcessSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let bound = raw.bound.unwrap_or(DEFAULT_BOUND);
        let require = |v: Option<f64>, field: &'static str| {
            v.ok_or_else(|| Error::invalid(field, format!("required for kind {:?}", raw.kind)))
        };
        let forbid = |v: Option<f64>, field: &'static str| match v {
            Some(_) => Err(Error::invalid(field, format!("not a parameter of kind {:?}", raw.kind))),
            None => Ok(()),
        };
        let spec = match raw.kind {
            Kind::Binary => {
                forbid(raw.sigma, "sigma")?;
                forbid(raw.alpha0, "alpha0")?;
                forbid(raw.alpha1, "alpha1")?;
                ReturnProcessSpec::Binary
            }
            Kind::Uniform => {
                forbid(raw.sigma, "sigma")?;
                forbid(raw.alpha0, "alpha0")?;
                forbid(raw.alpha1, "alpha1")?;
                ReturnProcessSpec::Uniform { bound }
            }
            Kind::Normal => {
                forbid(raw.alpha0, "alpha0")?;
                forbid(raw.alpha1, "alpha1")?;
                ReturnProcessSpec::Normal {
                    sigma: require(raw.sigma, "sigma")?,
                    bound,
                }
            }
            Kind::Arch1 => {
                forbid(raw.sigma, "sigma")?;
                ReturnProcessSpec::Arch1 {
                    alpha0: require(raw.alpha0, "alpha0")?,
                    alpha1: require(raw.alpha1, "alpha1")?,
                    bound,
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ReturnProcessSpec> for RawSpec {
    fn from(spec: ReturnProcessSpec) -> Self {
        let mut raw = RawSpec {
            kind: Kind::Binary,
            sigma: None,
            alpha0: None,
            alpha1: None,
            bound: None,
        };
        match spec {
            ReturnProcessSpec::Binary => {}
            ReturnProcessSpec::Uniform { bound } => {
                raw.kind = Kind::Uniform;
                raw.bound = Some(bound);
            }
            ReturnProcessSpec::Normal { sigma, bound } => {
                raw.kind = Kind::Normal;
                raw.sigma = Some(sigma);
                raw.bound = Some(bound);
            }
            ReturnProcessSpec::Arch1 { alpha0, alpha1, bound } => {
                raw.kind = Kind::Arch1;
                raw.alpha0 = Some(alpha0);
                raw.alpha1 = Some(alpha1);
                raw.bound = Some(bound);
            }
        }
        raw
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

impl ReturnProcessSpec {
    pub fn uniform() -> Self {
        ReturnProcessSpec::Uniform { bound: DEFAULT_BOUND }
    }

    pub fn normal(sigma: f64) -> Result<Self> {
        let spec = ReturnProcessSpec::Normal {
            sigma,
            bound: DEFAULT_BOUND,
        };
        spec.validate().map(|_| spec)
    }

    pub fn arch1(alpha0: f64, alpha1: f64) -> Result<Self> {
        let spec = ReturnProcessSpec::Arch1 {
            alpha0,
            alpha1,
            bound: DEFAULT_BOUND,
        };
        spec.validate().map(|_| spec)
    }

    pub fn with_bound(self, bound: f64) -> Result<Self> {
        let spec = match self {
            ReturnProcessSpec::Binary => ReturnProcessSpec::Binary,
            ReturnProcessSpec::Uniform { .. } => ReturnProcessSpec::Uniform { bound },
            ReturnProcessSpec::Normal { sigma, .. } => ReturnProcessSpec::Normal { sigma, bound },
            ReturnProcessSpec::Arch1 { alpha0, alpha1, .. } => ReturnProcessSpec::Arch1 { alpha0, alpha1, bound },
        };
        spec.validate().map(|_| spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ReturnProcessSpec::Binary => Ok(()),
            ReturnProcessSpec::Uniform { bound } => positive("bound", bound),
            ReturnProcessSpec::Normal { sigma, bound } => {
                positive("sigma", sigma)?;
                positive("bound", bound)
            }
            ReturnProcessSpec::Arch1 { alpha0, alpha1, bound } => {
                positive("alpha0", alpha0)?;
                if !(alpha1.is_finite() && (0.0..1.0).contains(&alpha1)) {
                    return Err(Error::invalid("alpha1", format!("must lie in [0, 1), got {alpha1}")));
                }
                positive("bound", bound)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReturnProcessSpec::Binary => "binary",
            ReturnProcessSpec::Uniform { .. } => "uniform",
            ReturnProcessSpec::Normal { .. } => "normal",
            ReturnProcessSpec::Arch1 { .. } => "arch1",
        }
    }

    /// Largest |r| the process can emit (attained only by `Binary`).
    pub fn support_radius(&self) -> f64 {
        match *self {
            ReturnProcessSpec::Binary => 1.0,
            ReturnProcessSpec::Uniform { bound }
            | ReturnProcessSpec::Normal { bound, .. }
            | ReturnProcessSpec::Arch1 { bound, .. } => bound,
        }
    }
}

/// Per-stream sampling state. For every kind except `Arch1`,
/// `previous_return` stays 0.
#[derive(Debug, Clone)]
pub struct ProcessState {
    pub previous_return: f64,
    pub rng: StreamRng,
}

impl ProcessState {
    pub fn new(rng: StreamRng) -> Self {
        Self {
            previous_return: 0.0,
            rng,
        }
    }
}

/// One draw of r(t) given the previous accepted return.
///
/// Implemented once per model so the simulation loop is monomorphized and
/// carries no per-step dispatch.
pub trait ReturnKernel: Copy + Send + Sync {
    fn draw(&self, previous: &mut f64, rng: &mut StreamRng) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct BinaryKernel;

#[derive(Debug, Clone, Copy)]
pub struct UniformKernel {
    pub bound: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct NormalKernel {
    pub sigma: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Arch1Kernel {
    pub alpha0: f64,
    pub alpha1: f64,
    pub bound: f64,
}

/// Uniform on the open interval (0, 1).
#[inline(always)]
fn open01(rng: &mut StreamRng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

impl ReturnKernel for BinaryKernel {
    #[inline(always)]
    fn draw(&self, _previous: &mut f64, rng: &mut StreamRng) -> f64 {
        // top bit of the draw becomes the sign of 1.0 (branch-free)
        f64::from_bits(1f64.to_bits() | (rng.next_u64() & (1 << 63)))
    }
}

impl ReturnKernel for UniformKernel {
    #[inline(always)]
    fn draw(&self, _previous: &mut f64, rng: &mut StreamRng) -> f64 {
        loop {
            let r = self.bound * (2.0 * open01(rng) - 1.0);
            if r.abs() < self.bound {
                return r;
            }
        }
    }
}

impl ReturnKernel for NormalKernel {
    #[inline(always)]
    fn draw(&self, _previous: &mut f64, rng: &mut StreamRng) -> f64 {
        loop {
            let eps: f64 = StandardNormal.sample(rng);
            let r = self.sigma * eps;
            if r.abs() < self.bound {
                return r;
            }
        }
    }
}

impl ReturnKernel for Arch1Kernel {
    #[inline(always)]
    fn draw(&self, previous: &mut f64, rng: &mut StreamRng) -> f64 {
        // the recursion only ever sees accepted returns
        let sigma_t = (self.alpha0 + self.alpha1 * *previous * *previous).sqrt();
        loop {
            let eps: f64 = StandardNormal.sample(rng);
            let r = sigma_t * eps;
            if r.abs() < self.bound {
                *previous = r;
                return r;
            }
        }
    }
}

/// Draw one return, advancing `state`.
pub fn sample_return(spec: &ReturnProcessSpec, state: &mut ProcessState) -> f64 {
    let ProcessState { previous_return, rng } = state;
    match *spec {
        ReturnProcessSpec::Binary => BinaryKernel.draw(previous_return, rng),
        ReturnProcessSpec::Uniform { bound } => UniformKernel { bound }.draw(previous_return, rng),
        ReturnProcessSpec::Normal { sigma, bound } => NormalKernel { sigma, bound }.draw(previous_return, rng),
        ReturnProcessSpec::Arch1 { alpha0, alpha1, bound } => {
            Arch1Kernel { alpha0, alpha1, bound }.draw(previous_return, rng)
        }
    }
}

/// Fill `out` with consecutive returns from one stream.
pub fn sample_returns(spec: &ReturnProcessSpec, state: &mut ProcessState, out: &mut [f64]) {
    for slot in out {
        *slot = sample_return(spec, state);
    }
}

/// ⟨r²⟩ of a normal law with standard deviation `sigma` truncated to (-1, 1).
pub fn truncated_normal_second_moment(sigma: f64) -> f64 {
    truncated_normal_second_moment_with_bound(sigma, DEFAULT_BOUND)
}

/// ⟨r²⟩ of N(0, σ²) truncated to (-C, C):
/// σ² − σ·C·√(2/π)·exp(−C²/(2σ²)) / erf(C/(√2·σ)).
pub fn truncated_normal_second_moment_with_bound(sigma: f64, bound: f64) -> f64 {
    let z = bound / sigma;
    let tail = sigma * bound * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * z * z).exp();
    sigma * sigma - tail / erf(z / std::f64::consts::SQRT_2)
}

/// ⟨r²⟩ of the process. For `Arch1` this is the untruncated stationary
/// variance α₀/(1−α₁); see [`arch1_second_moment_mc`] for the truncated value.
pub fn analytic_second_moment(spec: &ReturnProcessSpec) -> f64 {
    match *spec {
        ReturnProcessSpec::Binary => 1.0,
        ReturnProcessSpec::Uniform { bound } => bound * bound / 3.0,
        ReturnProcessSpec::Normal { sigma, bound } => truncated_normal_second_moment_with_bound(sigma, bound),
        ReturnProcessSpec::Arch1 { alpha0, alpha1, .. } => alpha0 / (1.0 - alpha1),
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub draws: u64,
}

pub const ARCH_MOMENT_DRAWS: u64 = 10_000_000;
pub const ARCH_MOMENT_SEED: u64 = 0x5EED_A4C1;

/// Batch count for batch-means standard errors; the ARCH returns are
/// serially dependent through r², so i.i.d. formulas understate the error.
pub(crate) const BATCHES: u64 = 100;

/// Batch-means estimate of E[f(r)] from one stream of `draws` returns.
pub(crate) fn batch_means<F: FnMut(f64) -> f64>(
    spec: &ReturnProcessSpec,
    draws: u64,
    seed: u64,
    mut f: F,
) -> Result<Estimate> {
    spec.validate()?;
    if draws < BATCHES * 2 {
        return Err(Error::TooFewSamples {
            needed: (BATCHES * 2) as usize,
            got: draws as usize,
        });
    }
    let mut state = ProcessState::new(crate::rng::agent_stream(seed, 0, 0));
    let per_batch = draws / BATCHES;
    let mut batch_means = Vec::with_capacity(BATCHES as usize);
    let mut total = 0.0;
    for _ in 0..BATCHES {
        let mut acc = 0.0;
        for _ in 0..per_batch {
            acc += f(sample_return(spec, &mut state));
        }
        total += acc;
        batch_means.push(acc / per_batch as f64);
    }
    let n = (per_batch * BATCHES) as f64;
    let value = total / n;
    let var = batch_means.iter().map(|m| (m - value).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    Ok(Estimate {
        value,
        stderr: (var / BATCHES as f64).sqrt(),
        draws: per_batch * BATCHES,
    })
}

/// Monte Carlo ⟨r²⟩ of the truncated ARCH(1) process (no burn-in; the
/// stream starts from r(0) = 0).
pub fn arch1_second_moment_mc(spec: &ReturnProcessSpec, draws: u64, seed: u64) -> Result<Estimate> {
    if !matches!(spec, ReturnProcessSpec::Arch1 { .. }) {
        return Err(Error::Unsupported(format!(
            "truncated ARCH moment requested for {} process",
            spec.name()
        )));
    }
    batch_means(spec, draws, derive_seed(seed, 2), |r| r * r)
}
