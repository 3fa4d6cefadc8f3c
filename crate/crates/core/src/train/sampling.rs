//! Policy sampling, Best-of-N and ground-truth-judged win rates.

use crate::error::{arg_err, Result};
use crate::rng::Rng;
use crate::table::{ensure_shape, PolicyTable, RewardTable};
use crate::taskgen::{draw_categorical, Instance};
use rand::Rng as _;

fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return arg_err(format!("temperature must be finite and nonnegative, got {t}"));
    }
    Ok(())
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Unnormalized tempered weights `π^{1/T}`, scaled so the largest is 1.
fn tempered_weights(row: &[f64], t: f64) -> Vec<f64> {
    let top = row.iter().copied().fold(0.0, f64::max).ln();
    row.iter()
        .map(|&p| if p > 0.0 { ((p.ln() - top) / t).exp() } else { 0.0 })
        .collect()
}

/// Row-wise `softmax(log π / T)`; `T = 0` gives the lowest-id argmax as a
/// point mass.
pub fn temper_policy(pi: &PolicyTable, temperature: f64) -> Result<PolicyTable> {
    check_temperature(temperature)?;
    if temperature == 1.0 {
        return Ok(pi.clone());
    }
    let (p, c) = pi.shape();
    let mut out = Vec::with_capacity(p * c);
    for row in pi.rows() {
        if temperature == 0.0 {
            let k = argmax_lowest(row);
            out.extend((0..c).map(|i| if i == k { 1.0 } else { 0.0 }));
        } else {
            let w = tempered_weights(row, temperature);
            let total: f64 = w.iter().sum();
            out.extend(w.into_iter().map(|v| v / total));
        }
    }
    PolicyTable::new(p, c, out)
}

/// Draws one completion for prompt `x`. Temperature 0 is deterministic and
/// consumes no randomness.
pub fn sample_completion(pi: &PolicyTable, x: usize, temperature: f64, rng: &mut Rng) -> Result<usize> {
    check_temperature(temperature)?;
    if x >= pi.n_prompts() {
        return arg_err(format!("prompt {x} out of range"));
    }
    let row = pi.row(x);
    Ok(if temperature == 0.0 {
        argmax_lowest(row)
    } else if temperature == 1.0 {
        draw_categorical(row, rng)
    } else {
        draw_categorical(&tempered_weights(row, temperature), rng)
    })
}

/// Draws `n` completions from `π(·|x)` and keeps the one with the highest
/// `r_phi`; ties go to the lowest id among the draws.
pub fn best_of_n(pi: &PolicyTable, r_phi: &RewardTable, x: usize, n: usize, rng: &mut Rng) -> Result<usize> {
    ensure_shape(pi.shape(), r_phi.shape(), "best_of_n")?;
    if n < 1 {
        return arg_err("best_of_n needs n >= 1");
    }
    if x >= pi.n_prompts() {
        return arg_err(format!("prompt {x} out of range"));
    }
    let row = pi.row(x);
    let mut best = draw_categorical(row, rng);
    for _ in 1..n {
        let y = draw_categorical(row, rng);
        let (ry, rb) = (r_phi.get(x, y), r_phi.get(x, best));
        if ry > rb || (ry == rb && y < best) {
            best = y;
        }
    }
    Ok(best)
}

/// Wins credited to policy A (ties count one half) over `trials` duels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WinTally {
    pub wins: f64,
    pub trials: usize,
}

impl WinTally {
    pub fn rate(&self) -> f64 {
        self.wins / self.trials as f64
    }
}

fn check_pair(pi_a: &PolicyTable, pi_b: &PolicyTable, inst: &Instance) -> Result<()> {
    ensure_shape(inst.shape(), pi_a.shape(), "policy A")?;
    ensure_shape(inst.shape(), pi_b.shape(), "policy B")
}

fn duel_score(ra: f64, rb: f64) -> f64 {
    if ra > rb {
        1.0
    } else if ra == rb {
        0.5
    } else {
        0.0
    }
}

/// Sampled duels judged by the instance's true reward. Each trial draws a
/// prompt uniformly, then one completion from A, then one from B.
pub fn win_tally(
    pi_a: &PolicyTable,
    pi_b: &PolicyTable,
    inst: &Instance,
    temperature: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<WinTally> {
    check_pair(pi_a, pi_b, inst)?;
    check_temperature(temperature)?;
    if n < 1 {
        return arg_err("win rate needs n >= 1");
    }
    let r = inst.reward_true();
    let mut wins = 0.0;
    for _ in 0..n {
        let x = rng.random_range(0..inst.n_prompts());
        let ya = sample_completion(pi_a, x, temperature, rng)?;
        let yb = sample_completion(pi_b, x, temperature, rng)?;
        wins += duel_score(r.get(x, ya), r.get(x, yb));
    }
    Ok(WinTally { wins, trials: n })
}

pub fn win_rate(
    pi_a: &PolicyTable,
    pi_b: &PolicyTable,
    inst: &Instance,
    temperature: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    win_tally(pi_a, pi_b, inst, temperature, n, rng).map(|t| t.rate())
}

/// Expected win fraction of A over uniformly drawn prompts, by enumeration.
pub fn win_rate_exact(pi_a: &PolicyTable, pi_b: &PolicyTable, inst: &Instance, temperature: f64) -> Result<f64> {
    check_pair(pi_a, pi_b, inst)?;
    let ta = temper_policy(pi_a, temperature)?;
    let tb = temper_policy(pi_b, temperature)?;
    let r = inst.reward_true();
    let mut total = 0.0;
    for x in 0..inst.n_prompts() {
        let rx = r.row(x);
        let mut acc = 0.0;
        for (&pa, &ra) in ta.row(x).iter().zip(rx) {
            for (&pb, &rb) in tb.row(x).iter().zip(rx) {
                acc += pa * pb * duel_score(ra, rb);
            }
        }
        total += acc;
    }
    Ok(total / inst.n_prompts() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn zero_temperature_is_argmax() {
        let pi = PolicyTable::from_rows(vec![vec![0.2, 0.5, 0.3]]).unwrap();
        let mut rng = rng_from_seed(0);
        for _ in 0..100 {
            assert_eq!(sample_completion(&pi, 0, 0.0, &mut rng).unwrap(), 1);
        }
        let tied = PolicyTable::from_rows(vec![vec![0.4, 0.2, 0.4]]).unwrap();
        assert_eq!(sample_completion(&tied, 0, 0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn tempered_closed_form() {
        let pi = PolicyTable::from_rows(vec![vec![0.25, 0.75]]).unwrap();
        let t = temper_policy(&pi, 0.5).unwrap();
        assert!((t.get(0, 1) - 0.9).abs() < 1e-15);
        assert_eq!(temper_policy(&pi, 1.0).unwrap().get(0, 1), 0.75);
    }

    #[test]
    fn negative_temperature_rejected() {
        let pi = PolicyTable::uniform(1, 2);
        assert!(sample_completion(&pi, 0, -1.0, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn best_of_one_is_a_plain_draw() {
        let pi = PolicyTable::from_rows(vec![vec![0.3, 0.7]]).unwrap();
        let r = RewardTable::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        let (mut a, mut b) = (rng_from_seed(9), rng_from_seed(9));
        for _ in 0..50 {
            assert_eq!(
                best_of_n(&pi, &r, 0, 1, &mut a).unwrap(),
                sample_completion(&pi, 0, 1.0, &mut b).unwrap()
            );
        }
    }
}
