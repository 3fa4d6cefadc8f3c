#![allow(dead_code)]

use prefopt_core::objectives::ParametricPolicy;
use prefopt_core::rng::rng_from_seed;
use prefopt_core::taskgen::gen_instance;
use prefopt_core::{Instance, PolicyTable, RewardTable};
use rand::Rng as _;

/// Random instance with shape drawn from `[2, max]²`.
pub fn random_instance(seed: u64, max: usize) -> Instance {
    let mut rng = rng_from_seed(seed ^ 0xA5A5);
    let p = rng.random_range(2..=max);
    let c = rng.random_range(2..=max);
    gen_instance(p, c, 1.0, 1.0, seed).unwrap()
}

/// `log π_ref` plus uniform noise in `[-spread, spread]`.
pub fn perturbed_logits(pi_ref: &PolicyTable, spread: f64, seed: u64) -> ParametricPolicy {
    let mut rng = rng_from_seed(seed);
    let (p, c) = pi_ref.shape();
    let logits = pi_ref
        .probs()
        .iter()
        .map(|q| q.ln() + spread * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    ParametricPolicy::new(p, c, logits).unwrap()
}

pub fn random_reward(p: usize, c: usize, scale: f64, seed: u64) -> RewardTable {
    let mut rng = rng_from_seed(seed);
    RewardTable::new(
        p,
        c,
        (0..p * c).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect(),
    )
    .unwrap()
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-6;
const FD_FLOOR: f64 = 1e-4;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest entrywise `|a − n| / max(|a|, |n|, 1e-4)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR))
        .fold(0.0, f64::max)
}

/// Half-width of a 3σ binomial band.
pub fn three_sigma(p: f64, n: usize) -> f64 {
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}
