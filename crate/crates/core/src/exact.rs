//! Closed-form solutions of the KL-constrained reward maximization problem
//! `max_π E_{x~w, y~π}[r(x,y)] − β·KL(π ‖ π_ref)` over finite completion
//! spaces.
//!
//! The optimum is the Gibbs policy `π_r ∝ π_ref·exp(r/β)`. Its log
//! normalizer gives the projection `r − β·log Z` that picks the unique member
//! of a reward's equivalence class whose Gibbs weights sum to one.

use crate::error::{arg_err, Error, Result};
use crate::numeric::row_sum;
use crate::table::{check_prompt_weights, ensure_shape, uniform_weights, PolicyTable, RewardTable};
use crate::taskgen::Instance;

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return arg_err(format!("beta must be positive and finite, got {beta}"));
    }
    Ok(())
}

/// Unnormalized Gibbs weights `π_ref·exp(r/β − m)` for one row, plus the
/// shift `m` (the largest exponent over the reference support).
fn gibbs_row(r: &[f64], pi_ref: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let m = r
        .iter()
        .zip(pi_ref)
        .filter(|(_, p)| **p > 0.0)
        .map(|(v, _)| v / beta)
        .fold(f64::NEG_INFINITY, f64::max);
    let w = r.iter().zip(pi_ref).map(|(v, p)| p * (v / beta - m).exp()).collect();
    (w, m)
}

/// `log Σ_y π_ref(y|x)·exp(r(x,y)/β)`.
pub fn log_partition(r: &RewardTable, pi_ref: &PolicyTable, beta: f64, x: usize) -> Result<f64> {
    check_beta(beta)?;
    ensure_shape(r.shape(), pi_ref.shape(), "log_partition")?;
    if x >= r.n_prompts() {
        return arg_err(format!("prompt id {x} out of range ({})", r.n_prompts()));
    }
    let (w, m) = gibbs_row(r.row(x), pi_ref.row(x), beta);
    Ok(m + row_sum(&w).ln())
}

/// `log Z(x)` for every prompt.
pub fn log_partitions(r: &RewardTable, pi_ref: &PolicyTable, beta: f64) -> Result<Vec<f64>> {
    (0..r.n_prompts()).map(|x| log_partition(r, pi_ref, beta, x)).collect()
}

/// `π*(y|x) = π_ref(y|x)·exp(r(x,y)/β) / Z(x)`.
pub fn optimal_policy(r: &RewardTable, pi_ref: &PolicyTable, beta: f64) -> Result<PolicyTable> {
    check_beta(beta)?;
    ensure_shape(r.shape(), pi_ref.shape(), "optimal_policy")?;
    let mut probs = Vec::with_capacity(r.values().len());
    for (rr, pr) in r.rows().zip(pi_ref.rows()) {
        let (w, _) = gibbs_row(rr, pr, beta);
        let total = row_sum(&w);
        probs.extend(w.iter().map(|v| v / total));
    }
    PolicyTable::new(r.n_prompts(), r.n_completions(), probs)
}

/// Inverts [`optimal_policy`]: `r(x,y) = β·log(π/π_ref) + β·log Z(x)`.
pub fn reward_from_policy(pi: &PolicyTable, pi_ref: &PolicyTable, beta: f64, log_z: &[f64]) -> Result<RewardTable> {
    check_beta(beta)?;
    ensure_shape(pi_ref.shape(), pi.shape(), "reward_from_policy")?;
    if log_z.len() != pi.n_prompts() {
        return arg_err(format!(
            "log_z has {} entries for {} prompts",
            log_z.len(),
            pi.n_prompts()
        ));
    }
    let (p, c) = pi.shape();
    let mut values = Vec::with_capacity(p * c);
    for (x, lz) in log_z.iter().enumerate() {
        for y in 0..c {
            let (a, b) = (pi.get(x, y), pi_ref.get(x, y));
            if a <= 0.0 || b <= 0.0 {
                return Err(Error::Domain(format!(
                    "log-ratio undefined at ({x}, {y}): π = {a}, π_ref = {b}"
                )));
            }
            values.push(beta * (a / b).ln() + beta * lz);
        }
    }
    RewardTable::new(p, c, values)
}

/// `r(x,y) − β·log Z(x)`: the class representative whose Gibbs weights under
/// `π_ref` already sum to one.
pub fn project_reward(r: &RewardTable, pi_ref: &PolicyTable, beta: f64) -> Result<RewardTable> {
    let log_z = log_partitions(r, pi_ref, beta)?;
    let values = r
        .rows()
        .zip(&log_z)
        .flat_map(|(row, lz)| row.iter().map(move |v| v - beta * lz))
        .collect();
    RewardTable::new(r.n_prompts(), r.n_completions(), values)
}

fn row_kl(p: &[f64], q: &[f64], x: usize) -> Result<f64> {
    let mut terms = Vec::with_capacity(p.len());
    for (y, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b <= 0.0 {
            return Err(Error::Domain(format!(
                "π({y}|{x}) = {a} but reference assigns zero mass"
            )));
        }
        terms.push(a * (a / b).ln());
    }
    Ok(row_sum(&terms))
}

/// `Σ_x w(x)·KL(π(·|x) ‖ π_ref(·|x))` in nats. Zero-probability entries of
/// `pi` contribute nothing.
pub fn kl_to_ref(pi: &PolicyTable, pi_ref: &PolicyTable, prompt_weights: &[f64]) -> Result<f64> {
    ensure_shape(pi_ref.shape(), pi.shape(), "kl_to_ref")?;
    check_prompt_weights(prompt_weights, pi.n_prompts())?;
    let mut total = 0.0;
    for (x, (p, q)) in pi.rows().zip(pi_ref.rows()).enumerate() {
        total += prompt_weights[x] * row_kl(p, q, x)?;
    }
    Ok(total)
}

/// `E_{x~w, y~π}[r(x,y)]`.
pub fn expected_reward(pi: &PolicyTable, r: &RewardTable, prompt_weights: &[f64]) -> Result<f64> {
    ensure_shape(r.shape(), pi.shape(), "expected_reward")?;
    check_prompt_weights(prompt_weights, pi.n_prompts())?;
    Ok(pi
        .rows()
        .zip(r.rows())
        .zip(prompt_weights)
        .map(|((p, rr), w)| w * p.iter().zip(rr).map(|(a, b)| a * b).sum::<f64>())
        .sum())
}

/// `E_{x~w, y~π}[r] − β·KL(π ‖ π_ref)`.
pub fn rl_objective(
    pi: &PolicyTable,
    r: &RewardTable,
    pi_ref: &PolicyTable,
    beta: f64,
    prompt_weights: &[f64],
) -> Result<f64> {
    check_beta(beta)?;
    let kl = kl_to_ref(pi, pi_ref, prompt_weights)?;
    Ok(expected_reward(pi, r, prompt_weights)? - beta * kl)
}

/// One point of the reward–KL frontier.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    /// `KL(π ‖ π_ref)` in nats, uniform over prompts.
    pub kl: f64,
    /// Expected ground-truth reward, uniform over prompts.
    pub expected_reward: f64,
    /// `None` for methods without a KL coefficient.
    pub beta: Option<f64>,
    pub method_tag: String,
}

pub fn frontier_point(pi: &PolicyTable, inst: &Instance, beta: Option<f64>, tag: &str) -> Result<FrontierPoint> {
    if let Some(b) = beta {
        check_beta(b)?;
    }
    let w = uniform_weights(inst.n_prompts());
    Ok(FrontierPoint {
        kl: kl_to_ref(pi, inst.pi_ref(), &w)?,
        expected_reward: expected_reward(pi, inst.reward_true(), &w)?,
        beta,
        method_tag: tag.to_string(),
    })
}

/// Frontier points of the exact optimum `π*(r*, β)` for each β, tagged `exact`.
pub fn exact_frontier(inst: &Instance, betas: &[f64]) -> Result<Vec<FrontierPoint>> {
    betas
        .iter()
        .map(|&b| {
            let pi = optimal_policy(inst.reward_true(), inst.pi_ref(), b)?;
            frontier_point(&pi, inst, Some(b), "exact")
        })
        .collect()
}

/// Bracket of β searched by [`exact_point_at_kl`].
pub const FRONTIER_BETA_RANGE: (f64, f64) = (1e-6, 1e6);

/// The exact-frontier point whose KL equals `target_kl`, found by bisection
/// on `log β` (KL of `π*` is nonincreasing in β). Targets beyond the bracket
/// clamp to its ends.
pub fn exact_point_at_kl(inst: &Instance, target_kl: f64) -> Result<FrontierPoint> {
    let point = |log_beta: f64| {
        let b = log_beta.exp();
        let pi = optimal_policy(inst.reward_true(), inst.pi_ref(), b)?;
        frontier_point(&pi, inst, Some(b), "exact")
    };
    let (mut lo, mut hi) = (FRONTIER_BETA_RANGE.0.ln(), FRONTIER_BETA_RANGE.1.ln());
    let at_lo = point(lo)?;
    if target_kl >= at_lo.kl {
        return Ok(at_lo);
    }
    let at_hi = point(hi)?;
    if target_kl <= at_hi.kl {
        return Ok(at_hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if point(mid)?.kl > target_kl {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    // `hi` side has KL ≤ target, so it never claims more divergence than allowed.
    point(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(r: &[&[f64]]) -> Vec<Vec<f64>> {
        r.iter().map(|v| v.to_vec()).collect()
    }

    #[test]
    fn zero_reward_has_unit_partition() {
        let pi_ref = PolicyTable::from_rows(rows(&[&[0.2, 0.3, 0.5]])).unwrap();
        let r = RewardTable::zeros(1, 3);
        assert!(log_partition(&r, &pi_ref, 0.7, 0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn constant_reward_partition_is_c_over_beta() {
        let pi_ref = PolicyTable::uniform(1, 4);
        let r = RewardTable::from_rows(rows(&[&[1.5; 4]])).unwrap();
        let lz = log_partition(&r, &pi_ref, 0.5, 0).unwrap();
        assert!((lz - 3.0).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_beta_is_rejected() {
        let pi_ref = PolicyTable::uniform(1, 2);
        let r = RewardTable::zeros(1, 2);
        for b in [0.0, -1.0, f64::NAN] {
            assert!(matches!(log_partition(&r, &pi_ref, b, 0), Err(Error::Argument(_))));
            assert!(optimal_policy(&r, &pi_ref, b).is_err());
            assert!(project_reward(&r, &pi_ref, b).is_err());
        }
    }

    #[test]
    fn zero_reward_optimum_is_reference() {
        let pi_ref = PolicyTable::from_rows(rows(&[&[0.1, 0.6, 0.3], &[0.25, 0.25, 0.5]])).unwrap();
        let pi = optimal_policy(&RewardTable::zeros(2, 3), &pi_ref, 0.1).unwrap();
        for (a, b) in pi.probs().iter().zip(pi_ref.probs()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn ln2_gap_gives_two_to_one() {
        let beta = 0.3;
        let pi_ref = PolicyTable::uniform(1, 2);
        let r = RewardTable::from_rows(rows(&[&[beta * 2.0_f64.ln(), 0.0]])).unwrap();
        let pi = optimal_policy(&r, &pi_ref, beta).unwrap();
        assert!((pi.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((pi.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn reward_from_reference_is_zero() {
        let pi_ref = PolicyTable::from_rows(rows(&[&[0.4, 0.6]])).unwrap();
        let r = reward_from_policy(&pi_ref, &pi_ref, 2.0, &[0.0]).unwrap();
        assert!(r.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reward_from_policy_rejects_zero_mass() {
        let pi_ref = PolicyTable::uniform(1, 2);
        let pi = PolicyTable::from_rows(rows(&[&[1.0, 0.0]])).unwrap();
        assert!(matches!(
            reward_from_policy(&pi, &pi_ref, 1.0, &[0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn constant_reward_projects_to_zero() {
        let pi_ref = PolicyTable::from_rows(rows(&[&[0.1, 0.2, 0.7]])).unwrap();
        let r = RewardTable::from_rows(rows(&[&[-3.0; 3]])).unwrap();
        let proj = project_reward(&r, &pi_ref, 0.25).unwrap();
        assert!(proj.values().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn kl_of_reference_is_zero_and_support_is_checked() {
        let pi_ref = PolicyTable::from_rows(rows(&[&[0.3, 0.7]])).unwrap();
        assert_eq!(kl_to_ref(&pi_ref, &pi_ref, &[1.0]).unwrap(), 0.0);
        let delta = PolicyTable::from_rows(rows(&[&[1.0, 0.0]])).unwrap();
        assert!((kl_to_ref(&delta, &pi_ref, &[1.0]).unwrap() - (1.0 / 0.3_f64).ln()).abs() < 1e-15);
        assert!(matches!(kl_to_ref(&pi_ref, &delta, &[1.0]), Err(Error::Domain(_))));
        assert!(kl_to_ref(&pi_ref, &pi_ref, &[0.5]).is_err());
    }

    #[test]
    fn objective_at_reference_is_expected_reward() {
        let pi_ref = PolicyTable::from_rows(rows(&[&[0.3, 0.7]])).unwrap();
        let r = RewardTable::from_rows(rows(&[&[1.0, -2.0]])).unwrap();
        let v = rl_objective(&pi_ref, &r, &pi_ref, 0.1, &[1.0]).unwrap();
        assert!((v - (0.3 - 1.4)).abs() < 1e-15);
    }

    #[test]
    fn frontier_point_at_reference() {
        let inst = crate::taskgen::gen_instance(3, 4, 1.0, 1.0, 1).unwrap();
        let p = frontier_point(inst.pi_ref(), &inst, Some(0.1), "ref").unwrap();
        assert_eq!(p.kl, 0.0);
        let w = uniform_weights(3);
        assert_eq!(
            p.expected_reward,
            expected_reward(inst.pi_ref(), inst.reward_true(), &w).unwrap()
        );
        assert!(frontier_point(inst.pi_ref(), &inst, Some(0.0), "bad").is_err());
    }

    #[test]
    fn kl_search_hits_target() {
        let inst = crate::taskgen::gen_instance(4, 5, 1.0, 1.0, 3).unwrap();
        let target = exact_frontier(&inst, &[0.37]).unwrap()[0].kl;
        let found = exact_point_at_kl(&inst, target).unwrap();
        assert!(found.kl <= target + 1e-12);
        assert!((found.beta.unwrap() - 0.37).abs() < 1e-6);
    }
}
