//! Action distributions: categorical over logits and an isotropic Gaussian
//! around a clamped mean.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{softmax_values, Tape, Tensor, Var};
use crate::envs::Action;
use crate::error::{Error, Result};

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    softmax_values(logits)
}

pub fn sample_discrete<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let p = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

pub fn greedy_discrete(logits: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = k;
        }
    }
    best
}

/// `clamp(μ + σ·ε, -1, 1)` for given noise.
pub fn gaussian_with_noise(mu: &[f64], sigma: f64, eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(eps)
        .map(|(m, e)| (m + sigma * e).clamp(-1.0, 1.0))
        .collect()
}

pub fn sample_gaussian<R: Rng + ?Sized>(mu: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    let eps: Vec<f64> = mu.iter().map(|_| rng.sample(StandardNormal)).collect();
    gaussian_with_noise(mu, sigma, &eps)
}

/// Score prefactor `(a - μ) / σ²`.
pub fn gaussian_score(a: &[f64], mu: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if sigma <= 0.0 {
        return Err(Error::contract("gaussian score needs sigma > 0"));
    }
    Ok(a.iter().zip(mu).map(|(a, m)| (a - m) / (sigma * sigma)).collect())
}

pub fn gaussian_log_density(a: &[f64], mu: &[f64], sigma: f64) -> f64 {
    let sq: f64 = a.iter().zip(mu).map(|(a, m)| (a - m) * (a - m)).sum();
    -sq / (2.0 * sigma * sigma) - a.len() as f64 * (sigma * (2.0 * PI).sqrt()).ln()
}

/// Log-probability node of `action` under the head output `out` (logits
/// or Gaussian mean).
pub fn log_prob(tape: &mut Tape<'_, f64>, out: Var, action: &Action, sigma: f64) -> Result<Var> {
    match action {
        Action::Discrete(k) => {
            let n = tape.value(out).len();
            if *k >= n {
                return Err(Error::contract(format!("action {k} outside {n} logits")));
            }
            let lp = tape.log_softmax(out)?;
            tape.index(lp, *k)
        }
        Action::Continuous(a) => {
            if sigma <= 0.0 {
                return Err(Error::contract("gaussian log-density needs sigma > 0"));
            }
            let a = tape.constant(Tensor::vector(a.to_vec())?);
            let diff = tape.sub(a, out)?;
            let sq = tape.mul(diff, diff)?;
            let s = tape.sum(sq)?;
            let s = tape.scale(s, -1.0 / (2.0 * sigma * sigma))?;
            let d = tape.value(out).len() as f64;
            tape.add_scalar(s, -d * (sigma * (2.0 * PI).sqrt()).ln())
        }
    }
}
