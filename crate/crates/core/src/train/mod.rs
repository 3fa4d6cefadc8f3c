//! Optimization engine.
//!
//! Every trainable method is plain (or RMSprop) descent on a
//! [`LossReport`]-producing objective over row-major parameters, with a
//! linear learning-rate warmup. Policies start at `log π_ref`, so every run
//! begins at zero KL. The RL stage of the reward-model pipeline is solved in
//! closed form; [`train_reinforce`] is the policy-gradient alternative.

mod sampling;

pub use sampling::{best_of_n, sample_completion, temper_policy, win_rate, win_rate_exact, win_tally, WinTally};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{arg_err, Error, Result};
use crate::exact::{check_beta, expected_reward, kl_to_ref, log_partitions};
use crate::objectives::{
    ac_objective, dpo_loss, pl_dpo_loss, rm_nll, smoothness_bound, unlikelihood_loss, LossKind, LossReport,
    ParametricPolicy, ParametricReward, DEFAULT_BETA,
};
use crate::prefmodel::normalize_reward;
use crate::rng::{rng_from_seed, Rng};
use crate::table::{check_prompt_weights, uniform_weights, PolicyTable, RewardTable};
use crate::taskgen::{draw_categorical, DatasetKind, Instance, PreferenceDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Dpo,
    PlDpo,
    RmThenRl,
    Reinforce,
    /// Same loss as `PreferredFt`; kept as a separate label for reports.
    Sft,
    /// Likelihood on preferred completions only.
    PreferredFt,
    Unlikelihood,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Dpo,
        Method::PlDpo,
        Method::RmThenRl,
        Method::Reinforce,
        Method::Sft,
        Method::PreferredFt,
        Method::Unlikelihood,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dpo => "dpo",
            Method::PlDpo => "pl_dpo",
            Method::RmThenRl => "rm_then_rl",
            Method::Reinforce => "reinforce",
            Method::Sft => "sft",
            Method::PreferredFt => "preferred_ft",
            Method::Unlikelihood => "unlikelihood",
        }
    }

    /// Whether the method's result depends on β.
    pub fn uses_beta(self) -> bool {
        matches!(self, Method::Dpo | Method::PlDpo | Method::RmThenRl | Method::Reinforce)
    }

    /// Dataset kind the method consumes in the given mode.
    pub fn expected_kind(self, mode: DataMode) -> &'static [DatasetKind] {
        match (self, mode) {
            (Method::PlDpo, _) => &[DatasetKind::Rankings],
            (Method::Sft | Method::PreferredFt | Method::Unlikelihood, _) => &[DatasetKind::Pairs],
            (Method::Reinforce, _) => &[DatasetKind::Pairs, DatasetKind::Soft],
            (Method::Dpo | Method::RmThenRl, DataMode::Soft) => &[DatasetKind::Soft],
            (Method::Dpo | Method::RmThenRl, DataMode::Sampled) => &[DatasetKind::Pairs],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown method {s:?}")))
    }
}

/// `Soft` trains on exact population quantities (soft pair probabilities,
/// enumerated policy-gradient expectations); `Sampled` on finite samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    Sampled,
    Soft,
}

impl fmt::Display for DataMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataMode::Sampled => "sampled",
            DataMode::Soft => "soft",
        })
    }
}

impl FromStr for DataMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(DataMode::Sampled),
            "soft" => Ok(DataMode::Soft),
            other => Err(Error::Argument(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    RmsProp,
    /// Fisher-preconditioned policy-gradient step: each logit's gradient is
    /// divided by `w_x·π_θ(y|x)`. REINFORCE only.
    Natural,
}

impl FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "rmsprop" => Ok(Optimizer::RmsProp),
            "natural" => Ok(Optimizer::Natural),
            other => Err(Error::Argument(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// How `lr` is interpreted for plain gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrScale {
    /// `lr` is the raw step size.
    Absolute,
    /// `lr` is a multiple of `1/L`, with `L` the loss's smoothness bound on
    /// the training data. Ignored by RMSprop.
    InverseSmoothness,
}

impl FromStr for LrScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(LrScale::Absolute),
            "smoothness" => Ok(LrScale::InverseSmoothness),
            other => Err(Error::Argument(format!("unknown lr scale {other:?}"))),
        }
    }
}

const RMSPROP_DECAY: f64 = 0.99;
const RMSPROP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub beta: f64,
    /// Unlikelihood coefficient.
    pub alpha: f64,
    pub lr: f64,
    pub lr_scale: LrScale,
    pub steps: usize,
    pub warmup_steps: usize,
    pub seed: u64,
    pub mode: DataMode,
    pub eval_every: usize,
    pub optimizer: Optimizer,
    /// Samples per prompt per step for sampled-mode REINFORCE.
    pub reinforce_samples: usize,
    /// Subtract the reference soft value `β·log Z_φ(x)` in REINFORCE.
    pub reinforce_baseline: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Dpo,
            beta: DEFAULT_BETA,
            alpha: 1.0,
            lr: 1.0,
            lr_scale: LrScale::InverseSmoothness,
            steps: 2000,
            warmup_steps: 150,
            seed: 0,
            mode: DataMode::Soft,
            eval_every: 100,
            optimizer: Optimizer::Sgd,
            reinforce_samples: 64,
            reinforce_baseline: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if self.steps < 1 {
            return arg_err("steps must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return arg_err(format!("lr must be positive, got {}", self.lr));
        }
        if self.warmup_steps > self.steps {
            return arg_err("warmup_steps cannot exceed steps");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return arg_err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.eval_every < 1 {
            return arg_err("eval_every must be at least 1");
        }
        if self.reinforce_samples < 1 {
            return arg_err("reinforce_samples must be at least 1");
        }
        if self.optimizer == Optimizer::Natural && self.method != Method::Reinforce {
            return arg_err("the natural optimizer applies to reinforce only");
        }
        Ok(())
    }

    fn warmup_factor(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            (step + 1) as f64 / self.warmup_steps as f64
        } else {
            1.0
        }
    }

    fn step_size(&self, smoothness: f64) -> f64 {
        match (self.optimizer, self.lr_scale) {
            (Optimizer::Sgd | Optimizer::Natural, LrScale::InverseSmoothness) => self.lr / smoothness,
            _ => self.lr,
        }
    }
}

/// Metrics at one evaluation point. `step` counts completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub loss: f64,
    pub kl: f64,
    pub expected_reward: f64,
    pub aux: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<EvalRecord>,
    pub policy: ParametricPolicy,
    /// The learned reward for pipelines that fit one.
    pub reward_model: Option<RewardTable>,
}

impl RunTrace {
    pub fn final_policy(&self) -> PolicyTable {
        self.policy.probs()
    }
}

/// Runs descent from `params`, recording every `eval_every` steps plus the
/// initial and final states.
fn descend<F, R>(params: &mut [f64], cfg: &TrainConfig, step_size: f64, mut objective: F, mut record: R) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<LossReport>,
    R: FnMut(usize, &LossReport, &[f64]) -> Result<()>,
{
    let mut second_moment = vec![0.0; params.len()];
    for step in 0..=cfg.steps {
        let report = objective(params)?;
        if !report.loss.is_finite() {
            return Err(Error::Divergence {
                step,
                what: format!("loss is {}", report.loss),
            });
        }
        if report.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step,
                what: "non-finite gradient".into(),
            });
        }
        if step % cfg.eval_every == 0 || step == cfg.steps {
            record(step, &report, params)?;
        }
        if step == cfg.steps {
            break;
        }
        let rate = step_size * cfg.warmup_factor(step);
        match cfg.optimizer {
            Optimizer::Sgd | Optimizer::Natural => {
                for (p, g) in params.iter_mut().zip(&report.grad) {
                    *p -= rate * g;
                }
            }
            Optimizer::RmsProp => {
                for ((p, g), v) in params.iter_mut().zip(&report.grad).zip(&mut second_moment) {
                    *v = RMSPROP_DECAY * *v + (1.0 - RMSPROP_DECAY) * g * g;
                    *p -= rate * g / (v.sqrt() + RMSPROP_EPS);
                }
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                step: step + 1,
                what: "non-finite parameters".into(),
            });
        }
    }
    Ok(())
}

fn policy_record(inst: &Instance, step: usize, report: &LossReport, theta: &ParametricPolicy) -> Result<EvalRecord> {
    let pi = theta.probs();
    let w = uniform_weights(inst.n_prompts());
    Ok(EvalRecord {
        step,
        loss: report.loss,
        kl: kl_to_ref(&pi, inst.pi_ref(), &w)?,
        expected_reward: expected_reward(&pi, inst.reward_true(), &w)?,
        aux: report.aux.clone(),
    })
}

fn check_data(inst: &Instance, data: &PreferenceDataset, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    let allowed = cfg.method.expected_kind(cfg.mode);
    if !allowed.contains(&data.kind()) {
        let expected = allowed.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("|");
        return Err(Error::WrongKind {
            expected,
            found: data.kind().to_string(),
        });
    }
    data.validate_against(inst)
}

/// Trains the configured method on `data` and returns its trace.
pub fn train(inst: &Instance, data: &PreferenceDataset, cfg: &TrainConfig) -> Result<RunTrace> {
    check_data(inst, data, cfg)?;
    match cfg.method {
        Method::RmThenRl => return rm_then_rl(inst, data, cfg),
        Method::Reinforce => {
            let phi = fit_reward_model(inst, data, cfg)?;
            return train_reinforce(inst, &phi.values, cfg);
        }
        _ => {}
    }
    let (p, c) = inst.shape();
    let pi_ref = inst.pi_ref();
    let beta = cfg.beta;
    let kind = match cfg.method {
        Method::Dpo => LossKind::Dpo { beta },
        Method::PlDpo => LossKind::PlDpo { beta },
        Method::Sft | Method::PreferredFt => LossKind::Sft,
        Method::Unlikelihood => LossKind::Unlikelihood { alpha: cfg.alpha },
        Method::RmThenRl | Method::Reinforce => unreachable!(),
    };
    let loss = |theta: &ParametricPolicy| match cfg.method {
        Method::Dpo => dpo_loss(theta, pi_ref, beta, data),
        Method::PlDpo => pl_dpo_loss(theta, pi_ref, beta, data),
        Method::Sft | Method::PreferredFt => unlikelihood_loss(theta, data, 0.0),
        Method::Unlikelihood => unlikelihood_loss(theta, data, cfg.alpha),
        Method::RmThenRl | Method::Reinforce => unreachable!(),
    };

    let mut theta = ParametricPolicy::from_policy(pi_ref)?;
    let step_size = cfg.step_size(smoothness_bound(kind, data, (p, c)));
    let mut records = Vec::new();
    let mut params = theta.logits().to_vec();
    descend(
        &mut params,
        cfg,
        step_size,
        |v| loss(&ParametricPolicy::new(p, c, v.to_vec())?),
        |step, rep, v| {
            let th = ParametricPolicy::new(p, c, v.to_vec())?;
            records.push(policy_record(inst, step, rep, &th)?);
            Ok(())
        },
    )?;
    theta.logits_mut().copy_from_slice(&params);
    Ok(RunTrace {
        records,
        policy: theta,
        reward_model: None,
    })
}

/// Fits `r_φ` by minimizing the reward-model NLL from a zero table, then
/// normalizes it to zero mean under `π_ref` per prompt. Records report the
/// KL and true reward of the Gibbs policy `π*(r_φ, β)`.
pub fn fit_reward_model_traced(
    inst: &Instance,
    data: &PreferenceDataset,
    cfg: &TrainConfig,
) -> Result<(ParametricReward, Vec<EvalRecord>)> {
    cfg.validate()?;
    if !matches!(data.kind(), DatasetKind::Pairs | DatasetKind::Soft) {
        return Err(Error::WrongKind {
            expected: "pairs|soft".into(),
            found: data.kind().to_string(),
        });
    }
    data.validate_against(inst)?;
    let (p, c) = inst.shape();
    let step_size = cfg.step_size(smoothness_bound(LossKind::RewardNll, data, (p, c)));
    let w = uniform_weights(p);
    let mut params = vec![0.0; p * c];
    let mut records = Vec::new();
    descend(
        &mut params,
        cfg,
        step_size,
        |v| {
            rm_nll(
                &ParametricReward {
                    values: RewardTable::new(p, c, v.to_vec())?,
                },
                data,
            )
        },
        |step, rep, v| {
            let r = RewardTable::new(p, c, v.to_vec())?;
            let pi = crate::exact::optimal_policy(&r, inst.pi_ref(), cfg.beta)?;
            records.push(EvalRecord {
                step,
                loss: rep.loss,
                kl: kl_to_ref(&pi, inst.pi_ref(), &w)?,
                expected_reward: expected_reward(&pi, inst.reward_true(), &w)?,
                aux: rep.aux.clone(),
            });
            Ok(())
        },
    )?;
    let fitted = RewardTable::new(p, c, params)?;
    let values = normalize_reward(&fitted, inst.pi_ref())?;
    Ok((ParametricReward { values }, records))
}

pub fn fit_reward_model(inst: &Instance, data: &PreferenceDataset, cfg: &TrainConfig) -> Result<ParametricReward> {
    fit_reward_model_traced(inst, data, cfg).map(|(phi, _)| phi)
}

/// Reward-model pipeline with the KL-constrained RL stage solved exactly:
/// returns `π = π*(r_φ, β)` with logits `log π_ref + r_φ/β`.
pub fn rm_then_rl(inst: &Instance, data: &PreferenceDataset, cfg: &TrainConfig) -> Result<RunTrace> {
    let (phi, records) = fit_reward_model_traced(inst, data, cfg)?;
    let (p, c) = inst.shape();
    let logits = inst
        .pi_ref()
        .probs()
        .iter()
        .zip(phi.values.values())
        .map(|(q, r)| q.ln() + r / cfg.beta)
        .collect();
    let policy = ParametricPolicy::new(p, c, logits)?;
    Ok(RunTrace {
        records,
        policy,
        reward_model: Some(phi.values),
    })
}

/// Policy-gradient estimator for [`reinforce_gradient`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientEstimator {
    /// Enumerate every completion.
    Exact,
    /// Score-function estimate from this many draws per prompt.
    Sampled { samples_per_prompt: usize },
}

/// Ascent direction `∇_θ E_{x~w, y~π_θ}[r_φ − β·log(π_θ/π_ref)]` via the
/// score-function identity, optionally centring the shaped reward with the
/// reference soft value `β·log Z_φ(x)`.
#[allow(clippy::too_many_arguments)]
pub fn reinforce_gradient(
    theta: &ParametricPolicy,
    r_phi: &RewardTable,
    pi_ref: &PolicyTable,
    beta: f64,
    prompt_weights: &[f64],
    estimator: GradientEstimator,
    use_baseline: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    check_beta(beta)?;
    crate::table::ensure_shape(r_phi.shape(), theta.shape(), "reinforce_gradient")?;
    crate::table::ensure_shape(pi_ref.shape(), theta.shape(), "reinforce_gradient")?;
    check_prompt_weights(prompt_weights, theta.shape().0)?;
    let (p, c) = theta.shape();
    let pi = theta.probs();
    let log_pi = theta.log_probs();
    let baselines = if use_baseline {
        log_partitions(r_phi, pi_ref, beta)?
    } else {
        vec![0.0; p]
    };
    let mut grad = vec![0.0; p * c];
    for x in 0..p {
        let row = pi.row(x);
        let advantage =
            |y: usize| r_phi.get(x, y) - beta * (log_pi[x * c + y] - pi_ref.get(x, y).ln()) - beta * baselines[x];
        let g = &mut grad[x * c..(x + 1) * c];
        match estimator {
            GradientEstimator::Exact => {
                for y in 0..c {
                    let a = row[y] * advantage(y);
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj += a * (f64::from(u8::from(j == y)) - row[j]);
                    }
                }
            }
            GradientEstimator::Sampled { samples_per_prompt } => {
                if samples_per_prompt == 0 {
                    return arg_err("samples_per_prompt must be at least 1");
                }
                let m = samples_per_prompt as f64;
                for _ in 0..samples_per_prompt {
                    let y = draw_categorical(row, rng);
                    let a = advantage(y) / m;
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj += a * (f64::from(u8::from(j == y)) - row[j]);
                    }
                }
            }
        }
        g.iter_mut().for_each(|v| *v *= prompt_weights[x]);
    }
    Ok(grad)
}

/// Maximizes the KL-shaped reward objective for a fixed reward `r_phi` by
/// REINFORCE. `mode = Soft` uses the exact expectation; `Sampled` draws
/// `reinforce_samples` completions per prompt per step from a stream seeded
/// by `cfg.seed`. Recorded loss is the negated actor-critic objective.
pub fn train_reinforce(inst: &Instance, r_phi: &RewardTable, cfg: &TrainConfig) -> Result<RunTrace> {
    cfg.validate()?;
    crate::table::ensure_shape(inst.shape(), r_phi.shape(), "train_reinforce")?;
    let (p, c) = inst.shape();
    let beta = cfg.beta;
    let pi_ref = inst.pi_ref();
    let w = uniform_weights(p);
    let estimator = match cfg.mode {
        DataMode::Soft => GradientEstimator::Exact,
        DataMode::Sampled => GradientEstimator::Sampled {
            samples_per_prompt: cfg.reinforce_samples,
        },
    };
    // Curvature of the shaped objective per prompt block is at most the
    // reward spread plus β (bounded advantage times softmax Jacobian). Under
    // the natural step the error in log π contracts by `1 − η·β`.
    let smoothness = if cfg.optimizer == Optimizer::Natural {
        beta
    } else {
        r_phi
            .rows()
            .zip(&w)
            .map(|(row, wx)| {
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                wx * (hi - lo + beta)
            })
            .fold(f64::MIN_POSITIVE, f64::max)
    };
    let step_size = cfg.step_size(smoothness);

    let mut rng = rng_from_seed(cfg.seed);
    let mut theta = ParametricPolicy::from_policy(pi_ref)?;
    let mut params = theta.logits().to_vec();
    let mut records = Vec::new();
    descend(
        &mut params,
        cfg,
        step_size,
        |v| {
            let th = ParametricPolicy::new(p, c, v.to_vec())?;
            let value = ac_objective(&th, r_phi, pi_ref, beta, &w)?;
            let mut g = reinforce_gradient(
                &th,
                r_phi,
                pi_ref,
                beta,
                &w,
                estimator,
                cfg.reinforce_baseline,
                &mut rng,
            )?;
            if cfg.optimizer == Optimizer::Natural {
                for ((gi, pi), i) in g.iter_mut().zip(th.probs().probs()).zip(0..) {
                    *gi /= w[i / c] * pi.max(f64::MIN_POSITIVE);
                }
            }
            Ok(LossReport {
                loss: -value,
                grad: g.into_iter().map(|v| -v).collect(),
                aux: BTreeMap::new(),
            })
        },
        |step, rep, v| {
            let th = ParametricPolicy::new(p, c, v.to_vec())?;
            records.push(policy_record(inst, step, rep, &th)?);
            Ok(())
        },
    )?;
    theta.logits_mut().copy_from_slice(&params);
    Ok(RunTrace {
        records,
        policy: theta,
        reward_model: Some(r_phi.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::optimal_policy;
    use crate::taskgen::{
        enumerate_soft_dataset, gen_instance, sample_pairs, sample_rankings, PreferencePair, Records,
    };

    fn cfg(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            steps: 50,
            warmup_steps: 0,
            eval_every: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let base = TrainConfig::default();
        assert!(base.validate().is_ok());
        assert!(TrainConfig {
            steps: 0,
            warmup_steps: 0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr: 0.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            warmup_steps: 5000,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            beta: 0.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { alpha: 2.0, ..base }.validate().is_err());
    }

    #[test]
    fn single_step_records_initial_and_final() {
        let inst = gen_instance(2, 3, 1.0, 1.0, 0).unwrap();
        let ds = enumerate_soft_dataset(&inst).unwrap();
        let trace = train(
            &inst,
            &ds,
            &TrainConfig {
                steps: 1,
                warmup_steps: 0,
                eval_every: 100,
                ..cfg(Method::Dpo)
            },
        )
        .unwrap();
        let steps: Vec<usize> = trace.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 1]);
        assert!(trace.records[0].kl.abs() < 1e-15);
    }

    #[test]
    fn records_are_strictly_increasing() {
        let inst = gen_instance(2, 3, 1.0, 1.0, 0).unwrap();
        let ds = enumerate_soft_dataset(&inst).unwrap();
        let trace = train(
            &inst,
            &ds,
            &TrainConfig {
                steps: 95,
                ..cfg(Method::Dpo)
            },
        )
        .unwrap();
        let steps: Vec<usize> = trace.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95]);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let inst = gen_instance(2, 4, 1.0, 1.0, 0).unwrap();
        let ranks = sample_rankings(&inst, inst.pi_ref(), 20, 3, 0).unwrap();
        let soft = enumerate_soft_dataset(&inst).unwrap();
        let pairs = sample_pairs(&inst, inst.pi_ref(), 20, 0).unwrap();
        assert!(matches!(
            train(&inst, &ranks, &cfg(Method::Sft)),
            Err(Error::WrongKind { .. })
        ));
        assert!(matches!(
            train(&inst, &soft, &cfg(Method::PlDpo)),
            Err(Error::WrongKind { .. })
        ));
        let sampled = TrainConfig {
            mode: DataMode::Sampled,
            ..cfg(Method::Dpo)
        };
        assert!(matches!(train(&inst, &soft, &sampled), Err(Error::WrongKind { .. })));
        assert!(train(&inst, &pairs, &sampled).is_ok());
    }

    #[test]
    fn every_method_starts_at_zero_kl() {
        let inst = gen_instance(3, 4, 1.0, 1.0, 5).unwrap();
        let soft = enumerate_soft_dataset(&inst).unwrap();
        let pairs = sample_pairs(&inst, inst.pi_ref(), 200, 1).unwrap();
        let ranks = sample_rankings(&inst, inst.pi_ref(), 200, 3, 1).unwrap();
        for m in Method::ALL {
            let (data, mode) = match m {
                Method::PlDpo => (&ranks, DataMode::Sampled),
                Method::Sft | Method::PreferredFt | Method::Unlikelihood => (&pairs, DataMode::Sampled),
                _ => (&soft, DataMode::Soft),
            };
            let trace = train(&inst, data, &TrainConfig { mode, ..cfg(m) }).unwrap();
            assert!(trace.records[0].kl.abs() < 1e-15, "{m}");
        }
    }

    #[test]
    fn zero_reward_pipeline_returns_reference() {
        let inst = gen_instance(2, 4, 0.0, 1.0, 5).unwrap();
        let soft = enumerate_soft_dataset(&inst).unwrap();
        let trace = rm_then_rl(&inst, &soft, &cfg(Method::RmThenRl)).unwrap();
        assert!(trace.final_policy().max_tv(inst.pi_ref()) < 1e-15);
        let rm = trace.reward_model.unwrap();
        assert!(rm.values().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let inst = gen_instance(1, 2, 1.0, 1.0, 5).unwrap();
        let one = PreferencePair {
            prompt: 0,
            winner: 0,
            loser: 1,
        };
        let pairs = PreferenceDataset::new(Records::Pairs(vec![one]), inst.digest()).unwrap();
        let c = TrainConfig {
            method: Method::Unlikelihood,
            alpha: 1.0,
            lr: f64::MAX / 4.0,
            lr_scale: LrScale::Absolute,
            mode: DataMode::Sampled,
            steps: 50,
            ..cfg(Method::Unlikelihood)
        };
        match train(&inst, &pairs, &c) {
            Err(Error::Divergence { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn reinforce_baseline_does_not_move_fixed_point() {
        let inst = gen_instance(2, 4, 1.0, 1.0, 2).unwrap();
        let c = TrainConfig {
            method: Method::Reinforce,
            beta: 0.5,
            steps: 3000,
            ..cfg(Method::Reinforce)
        };
        let on = train_reinforce(&inst, inst.reward_true(), &c).unwrap();
        let off = train_reinforce(
            &inst,
            inst.reward_true(),
            &TrainConfig {
                reinforce_baseline: false,
                ..c
            },
        )
        .unwrap();
        let target = optimal_policy(inst.reward_true(), inst.pi_ref(), 0.5).unwrap();
        let argmax = |p: &PolicyTable| -> Vec<usize> {
            p.rows()
                .map(|r| r.iter().enumerate().fold(0, |b, (i, v)| if *v > r[b] { i } else { b }))
                .collect()
        };
        assert_eq!(argmax(&on.final_policy()), argmax(&off.final_policy()));
        assert_eq!(argmax(&on.final_policy()), argmax(&target));
    }
}
