//! Synthetic worlds and preference datasets drawn from a known ground-truth
//! reward.
//!
//! All generators are pure functions of their arguments and seed.

mod io;

pub use io::{
    dataset_from_jsonl, dataset_to_jsonl, instance_from_json, instance_to_json, load_dataset, load_dataset_for,
    load_instance, save_dataset, save_instance,
};

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use sha2::{Digest, Sha256};

use crate::error::{arg_err, Error, Result};
use crate::numeric::log_sum_exp;
use crate::prefmodel::{bt_prob, check_order};
use crate::rng::{rng_from_seed, Rng};
use crate::table::{ensure_shape, PolicyTable, RewardTable, Shape};

/// Upper bound on redraws when a distinct completion is required.
pub const MAX_DISTINCT_RETRIES: usize = 1000;

/// A finite world: reference policy and ground-truth reward over a uniform
/// `n_prompts × completions_per_prompt` completion space.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pi_ref: PolicyTable,
    reward_true: RewardTable,
    digest: String,
}

impl Instance {
    /// Requires `pi_ref` strictly positive and both tables of equal shape.
    pub fn new(pi_ref: PolicyTable, reward_true: RewardTable) -> Result<Self> {
        ensure_shape(pi_ref.shape(), reward_true.shape(), "instance")?;
        if pi_ref.n_completions() < 2 {
            return arg_err("instance needs at least 2 completions per prompt");
        }
        if !pi_ref.is_strictly_positive() {
            return arg_err("reference policy must be strictly positive");
        }
        let digest = compute_digest(&pi_ref, &reward_true);
        Ok(Self {
            pi_ref,
            reward_true,
            digest,
        })
    }

    pub fn n_prompts(&self) -> usize {
        self.pi_ref.n_prompts()
    }
    pub fn completions_per_prompt(&self) -> usize {
        self.pi_ref.n_completions()
    }
    pub fn shape(&self) -> Shape {
        self.pi_ref.shape()
    }
    pub fn pi_ref(&self) -> &PolicyTable {
        &self.pi_ref
    }
    pub fn reward_true(&self) -> &RewardTable {
        &self.reward_true
    }
    /// Hex SHA-256 over the shape and the bit patterns of both tables.
    pub fn digest(&self) -> &str {
        &self.digest
    }
}

fn compute_digest(pi_ref: &PolicyTable, reward: &RewardTable) -> String {
    let mut h = Sha256::new();
    h.update(b"prefopt-instance-v1");
    h.update((pi_ref.n_prompts() as u64).to_le_bytes());
    h.update((pi_ref.n_completions() as u64).to_le_bytes());
    for v in pi_ref.probs().iter().chain(reward.values()) {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// `(x, y_w, y_l)`: `winner` was preferred to `loser` for `prompt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreferencePair {
    pub prompt: usize,
    pub winner: usize,
    pub loser: usize,
}

/// A best-first ordering of `K` distinct completions for `prompt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    pub prompt: usize,
    pub order: Vec<usize>,
}

/// An unordered pair (`y1 < y2`) with the exact probability that `y1` wins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftPairRecord {
    pub prompt: usize,
    pub y1: usize,
    pub y2: usize,
    pub p_y1_wins: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Pairs,
    Rankings,
    Soft,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Pairs => "pairs",
            DatasetKind::Rankings => "rankings",
            DatasetKind::Soft => "soft",
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairs" => Ok(DatasetKind::Pairs),
            "rankings" => Ok(DatasetKind::Rankings),
            "soft" => Ok(DatasetKind::Soft),
            other => Err(Error::Format(format!("unknown dataset kind {other:?}"))),
        }
    }
}

/// Homogeneous record list of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Records {
    Pairs(Vec<PreferencePair>),
    Rankings(Vec<Ranking>),
    Soft(Vec<SoftPairRecord>),
}

impl Records {
    pub fn kind(&self) -> DatasetKind {
        match self {
            Records::Pairs(_) => DatasetKind::Pairs,
            Records::Rankings(_) => DatasetKind::Rankings,
            Records::Soft(_) => DatasetKind::Soft,
        }
    }
    pub fn len(&self) -> usize {
        match self {
            Records::Pairs(v) => v.len(),
            Records::Rankings(v) => v.len(),
            Records::Soft(v) => v.len(),
        }
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A preference dataset bound to the instance it was drawn from.
///
/// Duplicate records are kept (multiset semantics).
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    records: Records,
    instance_digest: String,
}

impl PreferenceDataset {
    pub fn new(records: Records, instance_digest: impl Into<String>) -> Result<Self> {
        if records.is_empty() {
            return arg_err("preference dataset must be non-empty");
        }
        Ok(Self {
            records,
            instance_digest: instance_digest.into(),
        })
    }

    pub fn kind(&self) -> DatasetKind {
        self.records.kind()
    }
    pub fn records(&self) -> &Records {
        &self.records
    }
    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
    pub fn instance_digest(&self) -> &str {
        &self.instance_digest
    }

    pub fn pairs(&self) -> Option<&[PreferencePair]> {
        match &self.records {
            Records::Pairs(v) => Some(v),
            _ => None,
        }
    }
    pub fn rankings(&self) -> Option<&[Ranking]> {
        match &self.records {
            Records::Rankings(v) => Some(v),
            _ => None,
        }
    }
    pub fn soft(&self) -> Option<&[SoftPairRecord]> {
        match &self.records {
            Records::Soft(v) => Some(v),
            _ => None,
        }
    }

    /// Checks that every record references valid ids for `shape`.
    pub fn validate_ids(&self, shape: Shape) -> Result<()> {
        let (n_prompts, n_completions) = shape;
        let bad = |i: usize, why: &str| arg_err(format!("record {i}: {why}"));
        match &self.records {
            Records::Pairs(v) => {
                for (i, r) in v.iter().enumerate() {
                    if r.prompt >= n_prompts || r.winner >= n_completions || r.loser >= n_completions {
                        return bad(i, "id out of range");
                    }
                    if r.winner == r.loser {
                        return bad(i, "winner equals loser");
                    }
                }
            }
            Records::Rankings(v) => {
                for (i, r) in v.iter().enumerate() {
                    if r.prompt >= n_prompts {
                        return bad(i, "prompt out of range");
                    }
                    check_order(n_completions, &r.order).map_err(|e| Error::Argument(format!("record {i}: {e}")))?;
                }
            }
            Records::Soft(v) => {
                for (i, r) in v.iter().enumerate() {
                    if r.prompt >= n_prompts || r.y2 >= n_completions {
                        return bad(i, "id out of range");
                    }
                    if r.y1 >= r.y2 {
                        return bad(i, "soft pair not in canonical order y1 < y2");
                    }
                    if !(0.0..=1.0).contains(&r.p_y1_wins) {
                        return bad(i, "win probability outside [0, 1]");
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks the digest binding and record ids against `inst`.
    pub fn validate_against(&self, inst: &Instance) -> Result<()> {
        if self.instance_digest != inst.digest() {
            return Err(Error::DigestMismatch {
                dataset: self.instance_digest.clone(),
                instance: inst.digest().to_string(),
            });
        }
        self.validate_ids(inst.shape())
    }
}

/// Draws an index with probability proportional to `weights` using one
/// uniform variate. Zero-weight entries are never returned.
pub(crate) fn draw_categorical(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Random instance: Dirichlet(`ref_concentration`) reference rows and
/// rewards i.i.d. uniform on `[−reward_scale, +reward_scale]`.
pub fn gen_instance(
    n_prompts: usize,
    n_completions: usize,
    reward_scale: f64,
    ref_concentration: f64,
    seed: u64,
) -> Result<Instance> {
    if n_prompts < 1 {
        return arg_err("n_prompts must be at least 1");
    }
    if n_completions < 2 {
        return arg_err("n_completions must be at least 2");
    }
    if !(reward_scale.is_finite() && reward_scale >= 0.0) {
        return arg_err("reward_scale must be finite and non-negative");
    }
    if !(ref_concentration.is_finite() && ref_concentration > 0.0) {
        return arg_err("ref_concentration must be positive");
    }
    let mut rng = rng_from_seed(seed);
    let gamma = Gamma::new(ref_concentration, 1.0).map_err(|e| Error::Argument(format!("ref_concentration: {e}")))?;

    let mut probs = Vec::with_capacity(n_prompts * n_completions);
    for _ in 0..n_prompts {
        let row: Vec<f64> = (0..n_completions)
            .map(|_| {
                let g: f64 = gamma.sample(&mut rng);
                if g.is_normal() {
                    g
                } else {
                    f64::MIN_POSITIVE
                }
            })
            .collect();
        let total: f64 = row.iter().sum();
        probs.extend(row.into_iter().map(|g| (g / total).max(f64::MIN_POSITIVE)));
    }
    let rewards = (0..n_prompts * n_completions)
        .map(|_| reward_scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    Instance::new(
        PolicyTable::new(n_prompts, n_completions, probs)?,
        RewardTable::new(n_prompts, n_completions, rewards)?,
    )
}

fn draw_distinct(row: &[f64], chosen: &mut Vec<usize>, k: usize, prompt: usize, rng: &mut Rng) -> Result<()> {
    let mut retries = 0;
    while chosen.len() < k {
        let y = draw_categorical(row, rng);
        if chosen.contains(&y) {
            retries += 1;
            if retries > MAX_DISTINCT_RETRIES {
                return Err(Error::DegenerateSampler {
                    prompt,
                    retries: MAX_DISTINCT_RETRIES,
                });
            }
        } else {
            chosen.push(y);
        }
    }
    Ok(())
}

fn check_sampler(inst: &Instance, sampler: &PolicyTable, n: usize) -> Result<()> {
    ensure_shape(inst.shape(), sampler.shape(), "sampler")?;
    if n < 1 {
        return arg_err("dataset size must be at least 1");
    }
    Ok(())
}

/// Samples `n` Bradley-Terry-labelled pairs. Prompts are uniform, the two
/// completions are distinct draws from `sampler`.
pub fn sample_pairs(inst: &Instance, sampler: &PolicyTable, n: usize, seed: u64) -> Result<PreferenceDataset> {
    check_sampler(inst, sampler, n)?;
    let mut rng = rng_from_seed(seed);
    let mut pairs = Vec::with_capacity(n);
    let mut chosen = Vec::with_capacity(2);
    for _ in 0..n {
        let x = rng.random_range(0..inst.n_prompts());
        chosen.clear();
        draw_distinct(sampler.row(x), &mut chosen, 2, x, &mut rng)?;
        let (y1, y2) = (chosen[0], chosen[1]);
        let p = bt_prob(inst.reward_true(), x, y1, y2)?;
        let (winner, loser) = if rng.random::<f64>() < p { (y1, y2) } else { (y2, y1) };
        pairs.push(PreferencePair {
            prompt: x,
            winner,
            loser,
        });
    }
    PreferenceDataset::new(Records::Pairs(pairs), inst.digest())
}

/// Samples `n` Plackett-Luce rankings of `k` distinct completions each, by
/// sequential selection without replacement.
pub fn sample_rankings(
    inst: &Instance,
    sampler: &PolicyTable,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    check_sampler(inst, sampler, n)?;
    if k < 2 || k > inst.completions_per_prompt() {
        return arg_err(format!(
            "ranking size {k} outside [2, {}]",
            inst.completions_per_prompt()
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(n);
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..n {
        let x = rng.random_range(0..inst.n_prompts());
        chosen.clear();
        draw_distinct(sampler.row(x), &mut chosen, k, x, &mut rng)?;
        let mut remaining = chosen.clone();
        let mut order = Vec::with_capacity(k);
        while remaining.len() > 1 {
            let scores: Vec<f64> = remaining.iter().map(|&y| inst.reward_true().get(x, y)).collect();
            let lse = log_sum_exp(&scores);
            let weights: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
            let pick = draw_categorical(&weights, &mut rng);
            order.push(remaining.remove(pick));
        }
        order.push(remaining[0]);
        out.push(Ranking { prompt: x, order });
    }
    PreferenceDataset::new(Records::Rankings(out), inst.digest())
}

/// Every unordered completion pair of every prompt, with its exact
/// Bradley-Terry win probability under the ground-truth reward.
pub fn enumerate_soft_dataset(inst: &Instance) -> Result<PreferenceDataset> {
    let (p, c) = inst.shape();
    let mut out = Vec::with_capacity(p * c * (c - 1) / 2);
    for x in 0..p {
        for y1 in 0..c {
            for y2 in y1 + 1..c {
                let p_y1_wins = bt_prob(inst.reward_true(), x, y1, y2)?;
                out.push(SoftPairRecord {
                    prompt: x,
                    y1,
                    y2,
                    p_y1_wins,
                });
            }
        }
    }
    PreferenceDataset::new(Records::Soft(out), inst.digest())
}
