//! Trainable losses over tabular policies and rewards, each with an analytic
//! gradient in the row-major parameter layout.
//!
//! A [`ParametricPolicy`] holds free logits `θ[x][y]` with `π_θ = softmax(θ[x])`.
//! For every pairwise or ranking loss the gradient with respect to a
//! completion's score is pushed back through the implicit-reward map
//! `r̂ = β·(θ − log π_ref − logsumexp θ)`; the log-normalizer cancels in
//! score differences, so those gradients are sparse.

use std::collections::BTreeMap;

use crate::error::{arg_err, Error, Result};
use crate::exact::{check_beta, log_partition};
use crate::numeric::{log_sum_exp, sigmoid, softmax, softplus};
use crate::table::{check_prompt_weights, ensure_shape, PolicyTable, RewardTable, Shape};
use crate::taskgen::{DatasetKind, PreferenceDataset, Records};

/// Default KL coefficient.
pub const DEFAULT_BETA: f64 = 0.1;

/// Aux key: mean implicit-reward margin of preferred over dispreferred.
pub const AUX_MARGIN: &str = "margin";
/// Aux key: mean DPO weighting coefficient `σ(r̂_l − r̂_w)`.
pub const AUX_WEIGHT_MEAN: &str = "weight_mean";

/// Tabular softmax policy with free logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricPolicy {
    shape: Shape,
    logits: Vec<f64>,
}

impl ParametricPolicy {
    pub fn new(n_prompts: usize, n_completions: usize, logits: Vec<f64>) -> Result<Self> {
        if n_prompts == 0 || n_completions == 0 || logits.len() != n_prompts * n_completions {
            return arg_err("logit table has the wrong size");
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return arg_err("logits must be finite");
        }
        Ok(Self {
            shape: (n_prompts, n_completions),
            logits,
        })
    }

    /// Logits `log π`, so that `π_θ` reproduces `pi` (which must be strictly
    /// positive).
    pub fn from_policy(pi: &PolicyTable) -> Result<Self> {
        if !pi.is_strictly_positive() {
            return Err(Error::Domain("cannot take logits of a zero probability".into()));
        }
        let (p, c) = pi.shape();
        Self::new(p, c, pi.probs().iter().map(|v| v.ln()).collect())
    }

    pub fn uniform(n_prompts: usize, n_completions: usize) -> Self {
        Self {
            shape: (n_prompts, n_completions),
            logits: vec![0.0; n_prompts * n_completions],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }
    pub fn row(&self, x: usize) -> &[f64] {
        let c = self.shape.1;
        &self.logits[x * c..(x + 1) * c]
    }

    /// Row-major `log π_θ`.
    pub fn log_probs(&self) -> Vec<f64> {
        self.logits
            .chunks_exact(self.shape.1)
            .flat_map(|row| {
                let lse = log_sum_exp(row);
                row.iter().map(move |l| l - lse)
            })
            .collect()
    }

    pub fn probs(&self) -> PolicyTable {
        let probs = self.logits.chunks_exact(self.shape.1).flat_map(softmax).collect();
        PolicyTable::new(self.shape.0, self.shape.1, probs).expect("softmax rows are normalized")
    }

    /// Adds `offsets[x]` to every logit of prompt `x`; leaves `π_θ` unchanged.
    pub fn shifted(&self, offsets: &[f64]) -> Self {
        let c = self.shape.1;
        let logits = self
            .logits
            .iter()
            .enumerate()
            .map(|(i, l)| l + offsets[i / c])
            .collect();
        Self {
            shape: self.shape,
            logits,
        }
    }
}

/// Reward table treated as free parameters `r_φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricReward {
    pub values: RewardTable,
}

impl ParametricReward {
    pub fn zeros(n_prompts: usize, n_completions: usize) -> Self {
        Self {
            values: RewardTable::zeros(n_prompts, n_completions),
        }
    }
    pub fn shape(&self) -> Shape {
        self.values.shape()
    }
}

/// Loss value, gradient in the parameter layout, and named diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub aux: BTreeMap<String, f64>,
}

fn ln_ref(pi_ref: &PolicyTable) -> Result<Vec<f64>> {
    if !pi_ref.is_strictly_positive() {
        return Err(Error::Domain("reference policy must be strictly positive".into()));
    }
    Ok(pi_ref.probs().iter().map(|p| p.ln()).collect())
}

/// Row-major `β·(log π_θ − log π_ref)`, evaluated so that it is exactly zero
/// when `θ = log π_ref`.
fn implicit_values(theta: &ParametricPolicy, ln_ref: &[f64], beta: f64) -> Vec<f64> {
    let c = theta.shape.1;
    theta
        .logits
        .chunks_exact(c)
        .zip(ln_ref.chunks_exact(c))
        .flat_map(|(row, lr)| {
            let lse = log_sum_exp(row);
            row.iter().zip(lr).map(move |(t, l)| beta * ((t - l) - lse))
        })
        .collect()
}

/// `r̂(x,y) = β·(log π_θ(y|x) − log π_ref(y|x))`.
pub fn implicit_reward(theta: &ParametricPolicy, pi_ref: &PolicyTable, beta: f64) -> Result<RewardTable> {
    check_beta(beta)?;
    ensure_shape(pi_ref.shape(), theta.shape, "implicit_reward")?;
    let values = implicit_values(theta, &ln_ref(pi_ref)?, beta);
    RewardTable::new(theta.shape.0, theta.shape.1, values)
}

fn expect_kind(data: &PreferenceDataset, allowed: &[DatasetKind]) -> Result<()> {
    if !allowed.contains(&data.kind()) {
        let expected = allowed.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("|");
        return Err(Error::WrongKind {
            expected,
            found: data.kind().to_string(),
        });
    }
    Ok(())
}

/// Bradley-Terry NLL of `scores` (row-major, one per completion) on a pairs
/// or soft dataset, with the gradient with respect to the scores.
fn bt_nll_of_scores(scores: &[f64], c: usize, data: &PreferenceDataset) -> LossReport {
    let n = data.len() as f64;
    let mut grad = vec![0.0; scores.len()];
    let (mut loss, mut margin, mut weight) = (0.0, 0.0, 0.0);
    match data.records() {
        Records::Pairs(pairs) => {
            for r in pairs {
                let (w, l) = (r.prompt * c + r.winner, r.prompt * c + r.loser);
                let h = scores[w] - scores[l];
                let s = sigmoid(-h);
                loss += softplus(-h);
                margin += h;
                weight += s;
                grad[w] -= s;
                grad[l] += s;
            }
        }
        Records::Soft(soft) => {
            for r in soft {
                let (a, b) = (r.prompt * c + r.y1, r.prompt * c + r.y2);
                let p = r.p_y1_wins;
                let h = scores[a] - scores[b];
                loss += p * softplus(-h) + (1.0 - p) * softplus(h);
                margin += (2.0 * p - 1.0) * h;
                weight += p * sigmoid(-h) + (1.0 - p) * sigmoid(h);
                let coef = sigmoid(h) - p;
                grad[a] += coef;
                grad[b] -= coef;
            }
        }
        Records::Rankings(_) => unreachable!("kind checked by caller"),
    }
    grad.iter_mut().for_each(|g| *g /= n);
    let aux = BTreeMap::from([
        (AUX_MARGIN.to_string(), margin / n),
        (AUX_WEIGHT_MEAN.to_string(), weight / n),
    ]);
    LossReport {
        loss: loss / n,
        grad,
        aux,
    }
}

fn check_policy_inputs(
    theta: &ParametricPolicy,
    pi_ref: &PolicyTable,
    beta: f64,
    data: &PreferenceDataset,
    allowed: &[DatasetKind],
) -> Result<Vec<f64>> {
    check_beta(beta)?;
    ensure_shape(pi_ref.shape(), theta.shape, "policy loss")?;
    expect_kind(data, allowed)?;
    data.validate_ids(theta.shape)?;
    ln_ref(pi_ref)
}

/// DPO loss: mean of `−log σ(r̂(x,y_w) − r̂(x,y_l))` over pairs, or the
/// `p`-weighted cross-entropy over soft records.
pub fn dpo_loss(
    theta: &ParametricPolicy,
    pi_ref: &PolicyTable,
    beta: f64,
    data: &PreferenceDataset,
) -> Result<LossReport> {
    let lr = check_policy_inputs(theta, pi_ref, beta, data, &[DatasetKind::Pairs, DatasetKind::Soft])?;
    let scores = implicit_values(theta, &lr, beta);
    let mut report = bt_nll_of_scores(&scores, theta.shape.1, data);
    report.grad.iter_mut().for_each(|g| *g *= beta);
    Ok(report)
}

/// DPO gradient assembled from the weighted score-difference form
/// `−β·E[σ(r̂_l − r̂_w)·(∇log π(y_w|x) − ∇log π(y_l|x))]`, with the dense
/// softmax identity `∇_θ log π(y|x) = e_y − π(·|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectGradient {
    pub grad: Vec<f64>,
    /// Per-record weighting coefficient `σ(r̂_l − r̂_w)`; for soft records the
    /// label-averaged coefficient `p·σ(−h) + (1−p)·σ(h)`.
    pub weights: Vec<f64>,
}

pub fn dpo_grad_direct(
    theta: &ParametricPolicy,
    pi_ref: &PolicyTable,
    beta: f64,
    data: &PreferenceDataset,
) -> Result<DirectGradient> {
    let lr = check_policy_inputs(theta, pi_ref, beta, data, &[DatasetKind::Pairs, DatasetKind::Soft])?;
    let c = theta.shape.1;
    let rhat = implicit_values(theta, &lr, beta);
    let pi = theta.probs();
    let n = data.len() as f64;
    let mut grad = vec![0.0; rhat.len()];
    let mut weights = Vec::with_capacity(data.len());

    // accumulates coef·(∇log π(a|x) − ∇log π(b|x)) into the prompt's block
    let push = |grad: &mut [f64], x: usize, a: usize, b: usize, coef: f64| {
        let row = pi.row(x);
        for j in 0..c {
            let da = f64::from(u8::from(j == a)) - row[j];
            let db = f64::from(u8::from(j == b)) - row[j];
            grad[x * c + j] += coef * (da - db);
        }
    };
    match data.records() {
        Records::Pairs(pairs) => {
            for r in pairs {
                let w = sigmoid(rhat[r.prompt * c + r.loser] - rhat[r.prompt * c + r.winner]);
                weights.push(w);
                push(&mut grad, r.prompt, r.winner, r.loser, -beta * w / n);
            }
        }
        Records::Soft(soft) => {
            for r in soft {
                let h = rhat[r.prompt * c + r.y1] - rhat[r.prompt * c + r.y2];
                let p = r.p_y1_wins;
                let (w12, w21) = (sigmoid(-h), sigmoid(h));
                weights.push(p * w12 + (1.0 - p) * w21);
                push(&mut grad, r.prompt, r.y1, r.y2, -beta * p * w12 / n);
                push(&mut grad, r.prompt, r.y2, r.y1, -beta * (1.0 - p) * w21 / n);
            }
        }
        Records::Rankings(_) => unreachable!("kind checked above"),
    }
    Ok(DirectGradient { grad, weights })
}

/// Plackett-Luce DPO loss: mean negative log-likelihood of each ranking with
/// implicit rewards as Plackett-Luce scores.
pub fn pl_dpo_loss(
    theta: &ParametricPolicy,
    pi_ref: &PolicyTable,
    beta: f64,
    data: &PreferenceDataset,
) -> Result<LossReport> {
    let lr = check_policy_inputs(theta, pi_ref, beta, data, &[DatasetKind::Rankings])?;
    let c = theta.shape.1;
    let rhat = implicit_values(theta, &lr, beta);
    let n = data.len() as f64;
    let mut grad = vec![0.0; rhat.len()];
    let (mut loss, mut margin) = (0.0, 0.0);
    for r in data.rankings().expect("kind checked") {
        let k = r.order.len();
        let s: Vec<f64> = r.order.iter().map(|&y| rhat[r.prompt * c + y]).collect();
        // suffix log-normalizers lse(s[j..])
        let mut suffix = vec![0.0; k];
        suffix[k - 1] = s[k - 1];
        for j in (0..k - 1).rev() {
            suffix[j] = log_sum_exp(&[s[j], suffix[j + 1]]);
        }
        loss -= (0..k).map(|j| s[j] - suffix[j]).sum::<f64>();
        margin += s[0] - s[k - 1];
        for j in 0..k {
            let d: f64 = (0..=j).map(|m| (s[j] - suffix[m]).exp()).sum::<f64>() - 1.0;
            grad[r.prompt * c + r.order[j]] += beta * d / n;
        }
    }
    let aux = BTreeMap::from([(AUX_MARGIN.to_string(), margin / n)]);
    Ok(LossReport {
        loss: loss / n,
        grad,
        aux,
    })
}

/// Reward-model NLL `−E log σ(r_φ(x,y_w) − r_φ(x,y_l))`; soft records are
/// weighted as in [`dpo_loss`].
pub fn rm_nll(phi: &ParametricReward, data: &PreferenceDataset) -> Result<LossReport> {
    expect_kind(data, &[DatasetKind::Pairs, DatasetKind::Soft])?;
    data.validate_ids(phi.shape())?;
    Ok(bt_nll_of_scores(phi.values.values(), phi.values.n_completions(), data))
}

/// Per-prompt winner/loser counts of a pairs dataset.
fn pair_counts(data: &PreferenceDataset, shape: Shape) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (p, c) = shape;
    let mut wins = vec![0.0; p * c];
    let mut losses = vec![0.0; p * c];
    let mut per_prompt = vec![0.0; p];
    for r in data.pairs().expect("kind checked") {
        wins[r.prompt * c + r.winner] += 1.0;
        losses[r.prompt * c + r.loser] += 1.0;
        per_prompt[r.prompt] += 1.0;
    }
    (wins, losses, per_prompt)
}

fn check_pairs(theta: &ParametricPolicy, data: &PreferenceDataset) -> Result<()> {
    expect_kind(data, &[DatasetKind::Pairs])?;
    data.validate_ids(theta.shape)
}

/// Preferred-completion likelihood `−E log π_θ(y_w|x)`.
pub fn sft_nll(theta: &ParametricPolicy, data: &PreferenceDataset) -> Result<LossReport> {
    unlikelihood_loss(theta, data, 0.0)
}

/// `−E[log π_θ(y_w|x) − α·log π_θ(y_l|x)]`: likelihood on preferred
/// completions plus an unlikelihood push on dispreferred ones.
pub fn unlikelihood_loss(theta: &ParametricPolicy, data: &PreferenceDataset, alpha: f64) -> Result<LossReport> {
    if !(0.0..=1.0).contains(&alpha) {
        return arg_err(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    check_pairs(theta, data)?;
    let c = theta.shape.1;
    let n = data.len() as f64;
    let (wins, losses, per_prompt) = pair_counts(data, theta.shape);
    let logp = theta.log_probs();
    let pi = theta.probs();
    let mut loss = 0.0;
    let mut grad = vec![0.0; logp.len()];
    for i in 0..logp.len() {
        let nx = per_prompt[i / c];
        let p = pi.probs()[i];
        let mut term = -wins[i] * logp[i];
        let mut g = nx * p - wins[i];
        if alpha != 0.0 {
            term += alpha * losses[i] * logp[i];
            g += alpha * (losses[i] - nx * p);
        }
        loss += term;
        grad[i] = g / n;
    }
    Ok(LossReport {
        loss: loss / n,
        grad,
        aux: BTreeMap::new(),
    })
}

/// KL-shaped reward `r_φ(x,y) − β·(log π_θ(y|x) − log π_ref(y|x))`.
pub fn shaped_reward(
    r_phi: &RewardTable,
    theta: &ParametricPolicy,
    pi_ref: &PolicyTable,
    beta: f64,
    x: usize,
    y: usize,
) -> Result<f64> {
    ensure_shape(r_phi.shape(), theta.shape, "shaped_reward")?;
    ensure_shape(pi_ref.shape(), theta.shape, "shaped_reward")?;
    r_phi.check_ids(x, y)?;
    let row = theta.row(x);
    let log_pi = row[y] - log_sum_exp(row);
    Ok(r_phi.get(x, y) - beta * (log_pi - pi_ref.get(x, y).ln()))
}

/// Actor-critic objective
/// `E_{x~w, y~π_θ}[r_φ − β·log Z_φ(x) − β·log(π_θ/π_ref)]`, by enumeration.
/// The `β·log Z_φ` term is the soft value of the reference policy and does
/// not depend on θ.
pub fn ac_objective(
    theta: &ParametricPolicy,
    r_phi: &RewardTable,
    pi_ref: &PolicyTable,
    beta: f64,
    prompt_weights: &[f64],
) -> Result<f64> {
    check_beta(beta)?;
    ensure_shape(r_phi.shape(), theta.shape, "ac_objective")?;
    ensure_shape(pi_ref.shape(), theta.shape, "ac_objective")?;
    check_prompt_weights(prompt_weights, theta.shape.0)?;
    let lr = ln_ref(pi_ref)?;
    let rhat = implicit_values(theta, &lr, beta);
    let pi = theta.probs();
    let c = theta.shape.1;
    let mut total = 0.0;
    for (x, w) in prompt_weights.iter().enumerate() {
        let baseline = beta * log_partition(r_phi, pi_ref, beta, x)?;
        let row: f64 = (0..c)
            .map(|y| pi.get(x, y) * (r_phi.get(x, y) - baseline - rhat[x * c + y]))
            .sum();
        total += w * row;
    }
    Ok(total)
}

/// Loss families for which [`smoothness_bound`] is defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Dpo { beta: f64 },
    PlDpo { beta: f64 },
    RewardNll,
    Sft,
    Unlikelihood { alpha: f64 },
}

/// Upper bound on the largest Hessian eigenvalue of a loss on `data`, taken
/// block-wise per prompt (blocks do not interact).
///
/// Pairwise losses: `scale²/4 · 2·max_degree / N` from the comparison
/// multigraph Laplacian. Rankings: `β²·(K−1)/2` per record. Likelihood
/// losses: `(1+α)/2` per record.
pub fn smoothness_bound(kind: LossKind, data: &PreferenceDataset, shape: Shape) -> f64 {
    let (p, c) = shape;
    let n = data.len() as f64;
    let mut block = vec![0.0_f64; p];
    match kind {
        LossKind::Dpo { .. } | LossKind::RewardNll => {
            let mut degree = vec![0.0_f64; p * c];
            let mut bump = |x: usize, a: usize, b: usize| {
                degree[x * c + a] += 1.0;
                degree[x * c + b] += 1.0;
            };
            match data.records() {
                Records::Pairs(v) => v.iter().for_each(|r| bump(r.prompt, r.winner, r.loser)),
                Records::Soft(v) => v.iter().for_each(|r| bump(r.prompt, r.y1, r.y2)),
                Records::Rankings(_) => {}
            }
            let scale = match kind {
                LossKind::Dpo { beta } => beta * beta,
                _ => 1.0,
            };
            for x in 0..p {
                let dmax = degree[x * c..(x + 1) * c].iter().copied().fold(0.0, f64::max);
                block[x] = scale * 0.25 * 2.0 * dmax;
            }
        }
        LossKind::PlDpo { beta } => {
            if let Records::Rankings(v) = data.records() {
                for r in v {
                    block[r.prompt] += beta * beta * 0.5 * (r.order.len() as f64 - 1.0);
                }
            }
        }
        LossKind::Sft | LossKind::Unlikelihood { .. } => {
            let alpha = match kind {
                LossKind::Unlikelihood { alpha } => alpha,
                _ => 0.0,
            };
            if let Records::Pairs(v) = data.records() {
                for r in v {
                    block[r.prompt] += 0.5 * (1.0 + alpha);
                }
            }
        }
    }
    block.into_iter().fold(0.0, f64::max).max(f64::MIN_POSITIVE) / n
}
