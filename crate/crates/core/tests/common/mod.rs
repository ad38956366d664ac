//! Independent oracles and samplers shared by the integration tests.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_distr::{Distribution, Gamma, Pareto};
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
    assert!(n.is_multiple_of(2));
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// ⟨r²⟩ of N(0, σ²) conditioned on |r| < 1, by direct Simpson quadrature.
pub fn truncated_normal_second_moment_oracle(sigma: f64) -> f64 {
    let g = |r: f64| (-0.5 * (r / sigma).powi(2)).exp();
    let n = 200_000;
    simpson(|r| r * r * g(r), -1.0, 1.0, n) / simpson(g, -1.0, 1.0, n)
}

/// Draws from the inverse-gamma law with shape μ and scale β: β / Gamma(μ, 1).
pub fn inverse_gamma_draws(mu: f64, beta: f64, n: usize, seed: u64) -> Vec<f64> {
    let g = Gamma::new(mu, 1.0).unwrap();
    let mut r = rng(seed);
    (0..n).map(|_| beta / g.sample(&mut r)).collect()
}

/// Pareto draws with P(X > x) = (x_min / x)^μ.
pub fn pareto_draws(mu: f64, x_min: f64, n: usize, seed: u64) -> Vec<f64> {
    let p = Pareto::new(x_min, mu).unwrap();
    let mut r = rng(seed);
    (0..n).map(|_| p.sample(&mut r)).collect()
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Binary ±1 returns: ⟨log λ⟩ and D by enumerating the two outcomes.
pub fn binary_log_moments(q0: f64) -> (f64, f64) {
    let (u, d) = ((1.0 + q0).ln(), (1.0 - q0).ln());
    let m = 0.5 * (u + d);
    (m, 0.25 * (u - d).powi(2))
}

/// Uniform(−1, 1) returns: ⟨log λ⟩ and D from the antiderivatives of ln u and ln² u.
pub fn uniform_log_moments(q0: f64) -> (f64, f64) {
    let f1 = |u: f64| u * u.ln() - u;
    let f2 = |u: f64| u * u.ln().powi(2) - 2.0 * u * u.ln() + 2.0 * u;
    let (hi, lo) = (1.0 + q0, 1.0 - q0);
    let m1 = (f1(hi) - f1(lo)) / (2.0 * q0);
    let m2 = (f2(hi) - f2(lo)) / (2.0 * q0);
    (m1, m2 - m1 * m1)
}

/// Iterate x ← λx + a for `t` steps.
pub fn iterate_constant(x0: f64, lambda: f64, a: f64, t: u64) -> f64 {
    (0..t).fold(x0, |x, _| lambda * x + a)
}
