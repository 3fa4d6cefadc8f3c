//! Seeded property suite behind `prefopt verify`.
//!
//! Each random instance is checked against every property; the report lists
//! pass counts per property and every failure with its instance seed.

use std::cell::OnceCell;
use std::collections::HashMap;

use prefopt_core::exact::{frontier_point, log_partitions, optimal_policy, project_reward, rl_objective};
use prefopt_core::objectives::{
    dpo_loss, implicit_reward, pl_dpo_loss, rm_nll, sft_nll, unlikelihood_loss, LossReport, ParametricPolicy,
    ParametricReward,
};
use prefopt_core::prefmodel::{bt_prob, normalize_reward, pl_prob, shift_reward};
use prefopt_core::rng::{derive_seed, rng_from_seed, Rng};
use prefopt_core::table::uniform_weights;
use prefopt_core::taskgen::{enumerate_soft_dataset, gen_instance, sample_pairs, sample_rankings};
use prefopt_core::train::{train, DataMode, Method, Optimizer, RunTrace, TrainConfig};
use prefopt_core::{Error, Instance, PolicyTable, PreferenceDataset, Ranking, Records, RewardShift, RewardTable};
use rand::Rng as _;

pub const DEFAULT_INSTANCES: usize = 50;
const BETAS: [f64; 4] = [0.05, 0.1, 1.0, 5.0];
const MAX_SIDE: usize = 6;
const EXACT_TOL: f64 = 1e-12;
const CONVERGE_STEPS: usize = 5000;
const SAMPLED_PAIRS: usize = 100_000;
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;

type Check = fn(&Case) -> Result<(), String>;

pub const PROPERTIES: &[(&str, Check)] = &[
    ("generator_determinism", generator_determinism),
    ("dataset_instance_binding", dataset_instance_binding),
    ("bt_sampled_frequency", bt_sampled_frequency),
    ("preference_shift_invariance", preference_shift_invariance),
    ("probability_axioms", probability_axioms),
    ("normalize_same_class", normalize_same_class),
    ("policy_shift_invariance", policy_shift_invariance),
    ("projection_reparameterization", projection_reparameterization),
    ("unique_projection", unique_projection),
    ("gibbs_optimality", gibbs_optimality),
    ("gradient_correctness", gradient_correctness),
    ("dpo_rm_equivalence", dpo_rm_equivalence),
    ("logit_shift_invariance", logit_shift_invariance),
    ("pl_k2_equivalence", pl_k2_equivalence),
    ("population_dpo_optimum", population_dpo_optimum),
    ("training_determinism", training_determinism),
    ("method_agreement", method_agreement),
    ("frontier_optimality", frontier_optimality),
    ("initialization_invariant", initialization_invariant),
];

/// One random instance plus lazily computed shared artifacts.
pub struct Case {
    pub seed: u64,
    pub inst: Instance,
    pub beta: f64,
    break_shift: bool,
    soft: PreferenceDataset,
    dpo: OnceCell<Result<RunTrace, String>>,
}

impl Case {
    pub fn new(seed: u64, index: usize, break_shift: bool) -> Result<Self, Error> {
        let mut rng = rng_from_seed(seed);
        let p = rng.random_range(1..=MAX_SIDE);
        let c = rng.random_range(2..=MAX_SIDE);
        let inst = gen_instance(p, c, 1.0, 1.0, seed)?;
        let soft = enumerate_soft_dataset(&inst)?;
        Ok(Self {
            seed,
            inst,
            beta: BETAS[index % BETAS.len()],
            break_shift,
            soft,
            dpo: OnceCell::new(),
        })
    }

    fn rng(&self, label: &str) -> Rng {
        rng_from_seed(derive_seed(self.seed, label))
    }

    fn shape(&self) -> (usize, usize) {
        self.inst.shape()
    }

    fn random_shift(&self, label: &str) -> RewardShift {
        let mut rng = self.rng(label);
        RewardShift::new((0..self.shape().0).map(|_| 10.0 * rng.random::<f64>() - 5.0).collect()).expect("finite")
    }

    /// Applies a per-prompt shift; the `shift` break hook adds noise that
    /// differs across completions, leaving the equivalence class.
    fn shifted(&self, r: &RewardTable, f: &RewardShift) -> Result<RewardTable, String> {
        let out = shift_reward(r, f).map_err(fmt)?;
        if !self.break_shift {
            return Ok(out);
        }
        let (p, c) = out.shape();
        let noisy = out
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v + 1e-3 * ((i % c) as f64 + 1.0))
            .collect();
        RewardTable::new(p, c, noisy).map_err(fmt)
    }

    fn perturbed(&self, spread: f64, label: &str) -> ParametricPolicy {
        let mut rng = self.rng(label);
        let (p, c) = self.shape();
        let logits = self
            .inst
            .pi_ref()
            .probs()
            .iter()
            .map(|q| q.ln() + spread * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        ParametricPolicy::new(p, c, logits).expect("finite logits")
    }

    fn uniform_pairs(&self, n: usize, label: &str) -> Result<PreferenceDataset, String> {
        let (p, c) = self.shape();
        sample_pairs(
            &self.inst,
            &PolicyTable::uniform(p, c),
            n,
            derive_seed(self.seed, label),
        )
        .map_err(fmt)
    }

    fn soft_cfg(&self, method: Method) -> TrainConfig {
        TrainConfig {
            method,
            beta: self.beta,
            lr: 0.5,
            steps: CONVERGE_STEPS,
            warmup_steps: 0,
            eval_every: CONVERGE_STEPS,
            mode: DataMode::Soft,
            ..TrainConfig::default()
        }
    }

    fn dpo_trace(&self) -> Result<&RunTrace, String> {
        self.dpo
            .get_or_init(|| train(&self.inst, &self.soft, &self.soft_cfg(Method::Dpo)).map_err(fmt))
            .as_ref()
            .map_err(Clone::clone)
    }

    fn target(&self) -> Result<PolicyTable, String> {
        optimal_policy(self.inst.reward_true(), self.inst.pi_ref(), self.beta).map_err(fmt)
    }
}

fn fmt(e: Error) -> String {
    e.to_string()
}

fn ensure(ok: bool, detail: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(detail())
    }
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn generator_determinism(case: &Case) -> Result<(), String> {
    let (p, c) = case.shape();
    let again = gen_instance(p, c, 1.0, 1.0, case.seed).map_err(fmt)?;
    ensure(again == case.inst, || "instance differs on regeneration".into())?;
    let a = case.uniform_pairs(200, "det")?;
    let b = case.uniform_pairs(200, "det")?;
    ensure(a == b, || "pair dataset differs on regeneration".into())
}

fn dataset_instance_binding(case: &Case) -> Result<(), String> {
    let (p, c) = case.shape();
    let other = gen_instance(p, c, 1.0, 1.0, case.seed ^ 1).map_err(fmt)?;
    case.soft.validate_against(&case.inst).map_err(fmt)?;
    match case.soft.validate_against(&other) {
        Err(Error::DigestMismatch { .. }) => Ok(()),
        other => Err(format!("mismatched instance accepted: {other:?}")),
    }
}

fn bt_sampled_frequency(case: &Case) -> Result<(), String> {
    let ds = case.uniform_pairs(SAMPLED_PAIRS, "frequency")?;
    let (mut m, mut wins) = (0usize, 0usize);
    for r in ds.pairs().expect("pairs") {
        if r.prompt == 0 && r.winner.min(r.loser) == 0 && r.winner.max(r.loser) == 1 {
            m += 1;
            wins += usize::from(r.winner == 0);
        }
    }
    let expect = bt_prob(case.inst.reward_true(), 0, 0, 1).map_err(fmt)?;
    let freq = wins as f64 / m as f64;
    let band = 3.0 * (expect * (1.0 - expect) / m as f64).sqrt();
    ensure(m > 0 && (freq - expect).abs() <= band, || {
        format!("pair (0,0,1): {freq} vs {expect} over {m}")
    })
}

fn preference_shift_invariance(case: &Case) -> Result<(), String> {
    let r = case.inst.reward_true();
    let s = case.shifted(r, &case.random_shift("preference_shift"))?;
    let (p, c) = case.shape();
    for x in 0..p {
        for a in 0..c {
            for b in 0..c {
                let (u, v) = (bt_prob(r, x, a, b).map_err(fmt)?, bt_prob(&s, x, a, b).map_err(fmt)?);
                ensure((u - v).abs() <= EXACT_TOL, || {
                    format!("bt({x},{a},{b}) moved by {:e}", (u - v).abs())
                })?;
            }
        }
        let ids: Vec<usize> = (0..c.min(4)).collect();
        for order in permutations(&ids) {
            let (u, v) = (
                pl_prob(r, x, &order).map_err(fmt)?,
                pl_prob(&s, x, &order).map_err(fmt)?,
            );
            ensure((u - v).abs() <= EXACT_TOL, || {
                format!("pl({x},{order:?}) moved by {:e}", (u - v).abs())
            })?;
        }
    }
    Ok(())
}

fn probability_axioms(case: &Case) -> Result<(), String> {
    let r = case.inst.reward_true();
    let (p, c) = case.shape();
    for x in 0..p {
        for a in 0..c {
            for b in 0..c {
                let v = bt_prob(r, x, a, b).map_err(fmt)?;
                ensure(v > 0.0 && v < 1.0, || format!("bt({x},{a},{b}) = {v}"))?;
            }
        }
        let ids: Vec<usize> = (0..c.min(5)).rev().collect();
        let total: f64 = permutations(&ids)
            .iter()
            .map(|o| pl_prob(r, x, o))
            .sum::<Result<f64, _>>()
            .map_err(fmt)?;
        ensure((total - 1.0).abs() <= EXACT_TOL, || {
            format!("pl sums to {total} on prompt {x}")
        })?;
    }
    Ok(())
}

fn normalize_same_class(case: &Case) -> Result<(), String> {
    let r = case.inst.reward_true();
    let n = normalize_reward(r, case.inst.pi_ref()).map_err(fmt)?;
    let (p, c) = case.shape();
    for x in 0..p {
        let d: Vec<f64> = (0..c).map(|y| n.get(x, y) - r.get(x, y)).collect();
        let spread =
            d.iter().copied().fold(f64::NEG_INFINITY, f64::max) - d.iter().copied().fold(f64::INFINITY, f64::min);
        ensure(spread <= EXACT_TOL, || {
            format!("prompt {x}: difference spread {spread:e}")
        })?;
    }
    Ok(())
}

fn max_entry_diff(a: &PolicyTable, b: &PolicyTable) -> f64 {
    a.probs()
        .iter()
        .zip(b.probs())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

fn policy_shift_invariance(case: &Case) -> Result<(), String> {
    let r = case.inst.reward_true();
    let s = case.shifted(r, &case.random_shift("policy_shift"))?;
    let a = optimal_policy(r, case.inst.pi_ref(), case.beta).map_err(fmt)?;
    let b = optimal_policy(&s, case.inst.pi_ref(), case.beta).map_err(fmt)?;
    let d = max_entry_diff(&a, &b);
    ensure(d <= EXACT_TOL, || format!("optimal policy moved by {d:e}"))
}

fn projection_reparameterization(case: &Case) -> Result<(), String> {
    let (r, pr, beta) = (case.inst.reward_true(), case.inst.pi_ref(), case.beta);
    let proj = project_reward(r, pr, beta).map_err(fmt)?;
    let pi = optimal_policy(r, pr, beta).map_err(fmt)?;
    let (p, c) = case.shape();
    for x in 0..p {
        for y in 0..c {
            let reparam = beta * (pi.get(x, y) / pr.get(x, y)).ln();
            let d = (proj.get(x, y) - reparam).abs();
            ensure(d <= EXACT_TOL, || format!("({x},{y}) off by {d:e}"))?;
        }
    }
    Ok(())
}

fn unique_projection(case: &Case) -> Result<(), String> {
    let (r, pr, beta) = (case.inst.reward_true(), case.inst.pi_ref(), case.beta);
    let proj = project_reward(r, pr, beta).map_err(fmt)?;
    let again = project_reward(&proj, pr, beta).map_err(fmt)?;
    ensure(again.max_abs_diff(&proj) <= EXACT_TOL, || {
        "projection is not idempotent".into()
    })?;
    for lz in log_partitions(&proj, pr, beta).map_err(fmt)? {
        let z = lz.exp();
        ensure((z - 1.0).abs() <= EXACT_TOL, || format!("partition {z}"))?;
    }
    let member = case.shifted(r, &case.random_shift("prop1"))?;
    let collapsed = project_reward(&member, pr, beta).map_err(fmt)?;
    let d = collapsed.max_abs_diff(&proj);
    ensure(d <= EXACT_TOL, || format!("class members project {d:e} apart"))
}

fn gibbs_optimality(case: &Case) -> Result<(), String> {
    let (r, pr, beta) = (case.inst.reward_true(), case.inst.pi_ref(), case.beta);
    let w = uniform_weights(case.shape().0);
    let star = case.target()?;
    let best = rl_objective(&star, r, pr, beta, &w).map_err(fmt)?;
    for i in 0..20 {
        let other = case.perturbed(2.0, &format!("gibbs/{i}")).probs();
        let v = rl_objective(&other, r, pr, beta, &w).map_err(fmt)?;
        ensure(best >= v, || format!("perturbation {i} scores {v} > {best}"))?;
    }
    Ok(())
}

fn fd_check(name: &str, x: &[f64], eval: impl Fn(&[f64]) -> Result<LossReport, Error>) -> Result<(), String> {
    let analytic = eval(x).map_err(fmt)?.grad;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = eval(&probe).map_err(fmt)?.loss;
        probe[i] = x[i] - FD_STEP;
        let down = eval(&probe).map_err(fmt)?.loss;
        probe[i] = x[i];
        let n = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
        ensure(rel <= FD_TOL, || {
            format!("{name}: coordinate {i} relative error {rel:e}")
        })?;
    }
    Ok(())
}

fn gradient_correctness(case: &Case) -> Result<(), String> {
    let (p, c) = case.shape();
    let pr = case.inst.pi_ref();
    let theta = case.perturbed(0.7, "grad");
    let pairs = case.uniform_pairs(100, "grad/pairs")?;
    let ranks = sample_rankings(
        &case.inst,
        &PolicyTable::uniform(p, c),
        100,
        c.min(4),
        derive_seed(case.seed, "grad/ranks"),
    )
    .map_err(fmt)?;
    let policy = |v: &[f64]| ParametricPolicy::new(p, c, v.to_vec());
    let x = theta.logits();
    let beta = case.beta;
    fd_check("dpo pairs", x, |v| dpo_loss(&policy(v)?, pr, beta, &pairs))?;
    fd_check("dpo soft", x, |v| dpo_loss(&policy(v)?, pr, beta, &case.soft))?;
    fd_check("pl_dpo", x, |v| pl_dpo_loss(&policy(v)?, pr, beta, &ranks))?;
    fd_check("sft", x, |v| sft_nll(&policy(v)?, &pairs))?;
    fd_check("unlikelihood", x, |v| unlikelihood_loss(&policy(v)?, &pairs, 1.0))?;
    let phi = theta.logits().to_vec();
    fd_check("reward nll", &phi, |v| {
        rm_nll(
            &ParametricReward {
                values: RewardTable::new(p, c, v.to_vec())?,
            },
            &pairs,
        )
    })
}

fn dpo_rm_equivalence(case: &Case) -> Result<(), String> {
    let theta = case.perturbed(1.0, "equiv");
    let pairs = case.uniform_pairs(100, "equiv/pairs")?;
    let rhat = ParametricReward {
        values: implicit_reward(&theta, case.inst.pi_ref(), case.beta).map_err(fmt)?,
    };
    for ds in [&pairs, &case.soft] {
        let a = dpo_loss(&theta, case.inst.pi_ref(), case.beta, ds).map_err(fmt)?.loss;
        let b = rm_nll(&rhat, ds).map_err(fmt)?.loss;
        ensure((a - b).abs() <= 1e-14, || format!("{a} vs {b}"))?;
    }
    Ok(())
}

fn logit_shift_invariance(case: &Case) -> Result<(), String> {
    let theta = case.perturbed(1.0, "logit");
    let mut rng = case.rng("logit/offsets");
    let offsets: Vec<f64> = (0..case.shape().0).map(|_| 20.0 * rng.random::<f64>() - 10.0).collect();
    let moved = theta.shifted(&offsets);
    let pairs = case.uniform_pairs(100, "logit/pairs")?;
    let pr = case.inst.pi_ref();
    let losses = |t: &ParametricPolicy| -> Result<[f64; 4], Error> {
        Ok([
            dpo_loss(t, pr, case.beta, &pairs)?.loss,
            dpo_loss(t, pr, case.beta, &case.soft)?.loss,
            sft_nll(t, &pairs)?.loss,
            unlikelihood_loss(t, &pairs, 0.5)?.loss,
        ])
    };
    let (a, b) = (losses(&theta).map_err(fmt)?, losses(&moved).map_err(fmt)?);
    for (u, v) in a.iter().zip(&b) {
        ensure((u - v).abs() <= EXACT_TOL, || format!("{u} vs {v}"))?;
    }
    Ok(())
}

fn pl_k2_equivalence(case: &Case) -> Result<(), String> {
    let theta = case.perturbed(1.0, "plk2");
    let pairs = case.uniform_pairs(100, "plk2/pairs")?;
    let ranks = PreferenceDataset::new(
        Records::Rankings(
            pairs
                .pairs()
                .expect("pairs")
                .iter()
                .map(|r| Ranking {
                    prompt: r.prompt,
                    order: vec![r.winner, r.loser],
                })
                .collect(),
        ),
        case.inst.digest(),
    )
    .map_err(fmt)?;
    let a = dpo_loss(&theta, case.inst.pi_ref(), case.beta, &pairs)
        .map_err(fmt)?
        .loss;
    let b = pl_dpo_loss(&theta, case.inst.pi_ref(), case.beta, &ranks)
        .map_err(fmt)?
        .loss;
    ensure((a - b).abs() <= EXACT_TOL, || format!("{a} vs {b}"))
}

fn population_dpo_optimum(case: &Case) -> Result<(), String> {
    let tv = case.dpo_trace()?.final_policy().max_tv(&case.target()?);
    ensure(tv <= 1e-3, || format!("TV {tv:e} at beta {}", case.beta))
}

fn training_determinism(case: &Case) -> Result<(), String> {
    let pairs = case.uniform_pairs(300, "determinism")?;
    for (method, optimizer) in [(Method::Dpo, Optimizer::Sgd), (Method::Reinforce, Optimizer::Natural)] {
        let cfg = TrainConfig {
            method,
            optimizer,
            mode: DataMode::Sampled,
            steps: 100,
            warmup_steps: 10,
            eval_every: 10,
            seed: case.seed,
            reinforce_samples: 8,
            ..case.soft_cfg(method)
        };
        let a = train(&case.inst, &pairs, &cfg).map_err(fmt)?;
        let b = train(&case.inst, &pairs, &cfg).map_err(fmt)?;
        ensure(a == b, || format!("{method} trace differs between identical runs"))?;
    }
    Ok(())
}

fn method_agreement(case: &Case) -> Result<(), String> {
    let dpo = case.dpo_trace()?.final_policy();
    let rl = train(&case.inst, &case.soft, &case.soft_cfg(Method::RmThenRl))
        .map_err(fmt)?
        .final_policy();
    let cfg = TrainConfig {
        optimizer: Optimizer::Natural,
        ..case.soft_cfg(Method::Reinforce)
    };
    let pg = train(&case.inst, &case.soft, &cfg).map_err(fmt)?.final_policy();
    for (name, a, b) in [
        ("dpo/rm_then_rl", &dpo, &rl),
        ("dpo/reinforce", &dpo, &pg),
        ("rm_then_rl/reinforce", &rl, &pg),
    ] {
        let tv = a.max_tv(b);
        ensure(tv <= 2e-3, || format!("{name}: TV {tv:e}"))?;
    }
    Ok(())
}

fn frontier_optimality(case: &Case) -> Result<(), String> {
    let got = frontier_point(&case.dpo_trace()?.final_policy(), &case.inst, Some(case.beta), "dpo").map_err(fmt)?;
    let want = frontier_point(&case.target()?, &case.inst, Some(case.beta), "exact").map_err(fmt)?;
    let (dk, dr) = (
        (got.kl - want.kl).abs(),
        (got.expected_reward - want.expected_reward).abs(),
    );
    ensure(dk <= 1e-2 && dr <= 1e-2, || format!("ΔKL {dk:e}, Δreward {dr:e}"))
}

fn initialization_invariant(case: &Case) -> Result<(), String> {
    let (p, c) = case.shape();
    let pairs = case.uniform_pairs(50, "init/pairs")?;
    let ranks = sample_rankings(
        &case.inst,
        &PolicyTable::uniform(p, c),
        50,
        2,
        derive_seed(case.seed, "init/ranks"),
    )
    .map_err(fmt)?;
    for method in Method::ALL {
        let (data, mode) = match method {
            Method::PlDpo => (&ranks, DataMode::Sampled),
            Method::Sft | Method::PreferredFt | Method::Unlikelihood => (&pairs, DataMode::Sampled),
            _ => (&case.soft, DataMode::Soft),
        };
        let cfg = TrainConfig {
            steps: 1,
            mode,
            ..case.soft_cfg(method)
        };
        let kl = train(&case.inst, data, &cfg).map_err(fmt)?.records[0].kl;
        ensure(kl.abs() <= 1e-14, || format!("{method}: initial KL {kl:e}"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub property: &'static str,
    pub seed: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub instances: usize,
    pub passes: Vec<(&'static str, usize)>,
    pub failures: Vec<Failure>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, n) in &self.passes {
            out.push_str(&format!("{name}: {n}/{} pass\n", self.instances));
        }
        for f in &self.failures {
            out.push_str(&format!("FAIL {} seed={}: {}\n", f.property, f.seed, f.detail));
        }
        out.push_str(if self.all_passed() {
            "verify: all properties pass\n"
        } else {
            "verify: FAILED\n"
        });
        out
    }
}

/// Seed of the `index`-th verification instance.
pub fn instance_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, &format!("verify/{index}"))
}

pub fn run_suite(master: u64, instances: usize, break_shift: bool) -> Result<VerifyReport, Error> {
    let mut counts: HashMap<&'static str, usize> = HashMap::new();
    let mut failures = Vec::new();
    for i in 0..instances {
        let case = Case::new(instance_seed(master, i), i, break_shift)?;
        for (name, check) in PROPERTIES {
            match check(&case) {
                Ok(()) => *counts.entry(name).or_default() += 1,
                Err(detail) => failures.push(Failure {
                    property: name,
                    seed: case.seed,
                    detail,
                }),
            }
        }
    }
    let passes = PROPERTIES
        .iter()
        .map(|(name, _)| (*name, counts.get(name).copied().unwrap_or(0)))
        .collect();
    Ok(VerifyReport {
        instances,
        passes,
        failures,
    })
}
