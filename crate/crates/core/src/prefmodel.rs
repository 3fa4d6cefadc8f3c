//! Bradley-Terry and Plackett-Luce preference probabilities, reward
//! equivalence-class shifts and reward normalization.
//!
//! Every probability is assembled in log-space so rewards of magnitude
//! several hundred stay finite.

use crate::error::{arg_err, Result};
use crate::numeric::{log_sum_exp, sigmoid};
use crate::table::{ensure_shape, PolicyTable, RewardShift, RewardTable};

/// Probability that `y1` is preferred to `y2` for prompt `x`:
/// `σ(r(x,y1) − r(x,y2))`.
pub fn bt_prob(r: &RewardTable, x: usize, y1: usize, y2: usize) -> Result<f64> {
    r.check_ids(x, y1)?;
    r.check_ids(x, y2)?;
    Ok(sigmoid(r.get(x, y1) - r.get(x, y2)))
}

pub(crate) fn check_order(n_completions: usize, order: &[usize]) -> Result<()> {
    if order.len() < 2 {
        return arg_err(format!("ranking needs at least 2 completions, got {}", order.len()));
    }
    let mut seen = vec![false; n_completions];
    for &y in order {
        if y >= n_completions {
            return arg_err(format!("completion id {y} out of range ({n_completions})"));
        }
        if std::mem::replace(&mut seen[y], true) {
            return arg_err(format!("duplicate completion id {y} in ranking"));
        }
    }
    Ok(())
}

/// Plackett-Luce log-likelihood of a best-first ordering of `scores`
/// (indexed by ranking position).
pub(crate) fn pl_log_prob_of_scores(scores: &[f64]) -> f64 {
    (0..scores.len()).map(|k| scores[k] - log_sum_exp(&scores[k..])).sum()
}

/// Log-probability of the best-first ranking `order` under Plackett-Luce.
pub fn pl_log_prob(r: &RewardTable, x: usize, order: &[usize]) -> Result<f64> {
    if x >= r.n_prompts() {
        return arg_err(format!("prompt id {x} out of range ({})", r.n_prompts()));
    }
    check_order(r.n_completions(), order)?;
    let scores: Vec<f64> = order.iter().map(|&y| r.get(x, y)).collect();
    Ok(pl_log_prob_of_scores(&scores))
}

/// Probability of the best-first ranking `order` under Plackett-Luce.
pub fn pl_prob(r: &RewardTable, x: usize, order: &[usize]) -> Result<f64> {
    pl_log_prob(r, x, order).map(f64::exp)
}

/// `r'(x,y) = r(x,y) + f(x)`.
pub fn shift_reward(r: &RewardTable, f: &RewardShift) -> Result<RewardTable> {
    if f.len() != r.n_prompts() {
        return arg_err(format!(
            "shift has {} prompts, reward table has {}",
            f.len(),
            r.n_prompts()
        ));
    }
    let values = r
        .rows()
        .zip(f.per_prompt())
        .flat_map(|(row, &fx)| row.iter().map(move |v| v + fx))
        .collect();
    RewardTable::new(r.n_prompts(), r.n_completions(), values)
}

/// Subtracts the per-prompt `weights`-expectation of `r`, so that
/// `Σ_y weights(y|x)·r'(x,y) = 0` for every prompt.
pub fn normalize_reward(r: &RewardTable, weights: &PolicyTable) -> Result<RewardTable> {
    ensure_shape(r.shape(), weights.shape(), "normalize_reward")?;
    let offsets: Vec<f64> = r
        .rows()
        .zip(weights.rows())
        .map(|(rr, w)| -rr.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    shift_reward(r, &RewardShift::new(offsets)?)
}
