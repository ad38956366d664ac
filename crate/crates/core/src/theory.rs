//! Closed-form predictions for the stationary budget distribution.
//!
//! With β = 2a/D and μ = −2⟨log λ⟩/D the stationary density is the
//! inverse-gamma law
//!
//! ```text
//! P(x) = β^μ / Γ(μ) · x^−(1+μ) · exp(−β/x)
//! ```
//!
//! whose tail decays as x^−(1+μ) and whose mode is β/(1+μ).

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::process::{analytic_second_moment, ReturnProcessSpec};
use crate::stats::{log_lambda_moments_auto, LogLambdaMoments};

/// μ = −2⟨log λ⟩/D. Requires ⟨log λ⟩ < 0.
pub fn mu_exponent(mean_log_lambda: f64, diffusion: f64) -> Result<f64> {
    if !(mean_log_lambda < 0.0) {
        return Err(Error::NotStationary { mean_log_lambda });
    }
    if !(diffusion > 0.0 && diffusion.is_finite()) {
        return Err(Error::invalid("D", format!("must be finite and > 0, got {diffusion}")));
    }
    Ok(-2.0 * mean_log_lambda / diffusion)
}

/// The stationary law for fixed (a, D, μ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryLaw {
    a: f64,
    diffusion: f64,
    mu: f64,
    beta: f64,
    log_norm: f64,
}

impl StationaryLaw {
    pub fn new(a: f64, diffusion: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::DivergentNormalization { mu });
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::invalid("a", format!("must be finite and > 0, got {a}")));
        }
        if !(diffusion > 0.0 && diffusion.is_finite()) {
            return Err(Error::invalid("D", format!("must be finite and > 0, got {diffusion}")));
        }
        let beta = 2.0 * a / diffusion;
        Ok(Self {
            a,
            diffusion,
            mu,
            beta,
            log_norm: mu * beta.ln() - ln_gamma(mu),
        })
    }

    pub fn from_moments(a: f64, moments: &LogLambdaMoments) -> Result<Self> {
        let mu = mu_exponent(moments.mean_log_lambda, moments.diffusion)?;
        Self::new(a, moments.diffusion, mu)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// β = 2a/D, the scale of the law.
    pub fn scale(&self) -> f64 {
        self.beta
    }

    pub fn density(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return 0.0;
        }
        (self.log_norm - (1.0 + self.mu) * x.ln() - self.beta / x).exp()
    }

    /// P(X ≤ x) = Q(μ, β/x), the regularized upper incomplete gamma function.
    pub fn cdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return 0.0;
        }
        if x == f64::INFINITY {
            return 1.0;
        }
        gamma_ur(self.mu, self.beta / x)
    }

    /// Argmax of the density: β/(1+μ) = 2a/(D(1+μ)).
    pub fn mode(&self) -> f64 {
        self.beta / (1.0 + self.mu)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn diffusion(&self) -> f64 {
        self.diffusion
    }
}

/// Stationary density at `x` for parameters (a, D, μ).
pub fn stationary_density(x: f64, a: f64, diffusion: f64, mu: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::invalid("x", format!("must be > 0, got {x}")));
    }
    Ok(StationaryLaw::new(a, diffusion, mu)?.density(x))
}

/// Two expressions for the most probable budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModePrediction {
    /// Argmax of the stationary density, 2a/(D(1+μ)).
    pub exact: f64,
    /// The alternative a/(D − ⟨log λ⟩) with ⟨log λ⟩ = −μD/2.
    pub printed: f64,
}

pub fn predicted_mode(a: f64, diffusion: f64, mu: f64) -> Result<ModePrediction> {
    for (field, v) in [("a", a), ("D", diffusion), ("mu", mu)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(field, format!("must be finite and > 0, got {v}")));
        }
    }
    let mean_log_lambda = -0.5 * mu * diffusion;
    Ok(ModePrediction {
        exact: 2.0 * a / (diffusion * (1.0 + mu)),
        printed: a / (diffusion - mean_log_lambda),
    })
}

/// Small-q0 approximation x_mp ≈ a / (q0² ⟨r²⟩).
pub fn approx_mode(a: f64, q0: f64, second_moment: f64) -> f64 {
    a / (q0 * q0 * second_moment)
}

/// c = 1/⟨r²⟩ in x_mp ≈ c · a/q0².
pub fn scaling_prefactor(process: &ReturnProcessSpec) -> f64 {
    1.0 / analytic_second_moment(process)
}

/// Log-normal law of x(t) without income (a = 0):
/// (1/√(πDt)) · (1/x) · exp(−(ln x − ⟨log λ⟩t)²/(Dt)).
pub fn lognormal_density(x: f64, t: u64, mean_log_lambda: f64, diffusion: f64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    let dt = diffusion * t as f64;
    let z = x.ln() - mean_log_lambda * t as f64;
    (-z * z / dt).exp() / ((std::f64::consts::PI * dt).sqrt() * x)
}

/// Every closed-form quantity for one process and parameter pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction {
    pub mean_log_lambda: f64,
    #[serde(rename = "D")]
    pub diffusion: f64,
    pub mu: f64,
    pub x_mp_exact: f64,
    pub x_mp_paper: f64,
    pub x_mp_approx: f64,
    pub c: f64,
}

impl TheoryPrediction {
    pub fn from_moments(moments: &LogLambdaMoments, process: &ReturnProcessSpec, q0: f64, a: f64) -> Result<Self> {
        let mu = mu_exponent(moments.mean_log_lambda, moments.diffusion)?;
        let mode = predicted_mode(a, moments.diffusion, mu)?;
        Ok(Self {
            mean_log_lambda: moments.mean_log_lambda,
            diffusion: moments.diffusion,
            mu,
            x_mp_exact: mode.exact,
            // use the measured ⟨log λ⟩ rather than −μD/2 (identical up to rounding)
            x_mp_paper: a / (moments.diffusion - moments.mean_log_lambda),
            x_mp_approx: approx_mode(a, q0, analytic_second_moment(process)),
            c: scaling_prefactor(process),
        })
    }
}

/// Predictions with the preferred moment method for the process.
pub fn theory_prediction(process: &ReturnProcessSpec, q0: f64, a: f64) -> Result<TheoryPrediction> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::invalid("a", format!("must be finite and > 0, got {a}")));
    }
    let moments = log_lambda_moments_auto(process, q0)?;
    TheoryPrediction::from_moments(&moments, process, q0, a)
}

/// `points` log-spaced abscissae on [lo, hi].
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (l, h) = (lo.ln(), hi.ln());
    let n = points.max(2);
    (0..n)
        .map(|i| (l + (h - l) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// CSV with header `x,density`.
pub fn write_density_csv<W: Write, F: Fn(f64) -> f64>(xs: &[f64], density: F, mut out: W) -> std::io::Result<()> {
    writeln!(out, "x,density")?;
    for &x in xs {
        writeln!(out, "{},{}", x, density(x))?;
    }
    out.flush()
}
