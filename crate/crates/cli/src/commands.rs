//! Subcommand implementations. Each returns the text to print on success.

use std::fs;
use std::path::{Path, PathBuf};

use prefopt_core::exact::{exact_frontier, optimal_policy};
use prefopt_core::rng::{derive_seed, rng_from_seed};
use prefopt_core::taskgen::{gen_instance, load_dataset_for, load_instance, save_dataset, save_instance};
use prefopt_core::train::{sample_completion, train as train_method, win_tally};
use prefopt_core::{DataMode, DatasetKind, Instance, PolicyTable, PreferenceDataset};

use crate::config::ExperimentConfig;
use crate::output::{
    load_policy, save_policy, save_reward, sha256_hex, wilson_interval, write_frontier, write_metrics, write_sweep,
    write_win_rates, SweepRow, WinRateRow,
};
use crate::runs::{frontier_row, plan_jobs, preferred_kind, run_jobs, synthesize, DataSource, Job};
use crate::verify::{run_suite, VerifyReport};
use crate::CliError;

pub const INSTANCE_FILE: &str = "instance.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const POLICY_FILE: &str = "policy.json";
pub const REWARD_MODEL_FILE: &str = "reward_model.json";
pub const FRONTIER_FILE: &str = "frontier.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const WIN_RATE_FILE: &str = "winrate.csv";

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

fn generated_instance(cfg: &ExperimentConfig) -> Result<Instance, CliError> {
    Ok(gen_instance(
        cfg.prompts,
        cfg.completions,
        cfg.reward_scale,
        cfg.ref_concentration,
        cfg.instance_seed(),
    )?)
}

fn required_instance(cfg: &ExperimentConfig) -> Result<Instance, CliError> {
    let path = cfg
        .instance
        .as_ref()
        .ok_or_else(|| CliError::Usage("instance is required".into()))?;
    Ok(load_instance(path)?)
}

/// The configured instance file, or a fresh instance from the instance seed.
fn instance_or_generated(cfg: &ExperimentConfig) -> Result<Instance, CliError> {
    match &cfg.instance {
        Some(p) => Ok(load_instance(p)?),
        None => generated_instance(cfg),
    }
}

pub fn gen(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let inst = generated_instance(cfg)?;
    let ds = synthesize(&inst, cfg.dataset_kind, cfg.pairs, cfg.rank_k, cfg.dataset_seed())?;
    let out = out_dir(cfg)?;
    let (ip, dp) = (out.join(INSTANCE_FILE), out.join(DATASET_FILE));
    save_instance(&ip, &inst)?;
    save_dataset(&dp, &ds)?;
    let data_digest = sha256_hex(&fs::read(&dp)?);
    Ok(format!(
        "instance {} {}\ndataset {} {} ({} {} records)\n",
        inst.digest(),
        ip.display(),
        data_digest,
        dp.display(),
        ds.len(),
        ds.kind()
    ))
}

fn dataset_for_training(cfg: &ExperimentConfig, inst: &Instance) -> Result<PreferenceDataset, CliError> {
    match &cfg.dataset {
        Some(p) => Ok(load_dataset_for(p, inst)?),
        None => {
            let kind = preferred_kind(cfg.train.method, cfg.train.mode);
            synthesize(inst, kind, cfg.pairs, cfg.rank_k, cfg.dataset_seed())
        }
    }
}

pub fn train(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let inst = required_instance(cfg)?;
    let ds = dataset_for_training(cfg, &inst)?;
    let accepted = cfg.train.method.expected_kind(cfg.train.mode);
    if !accepted.contains(&ds.kind()) {
        let expected: Vec<String> = accepted.iter().map(|k| k.to_string()).collect();
        let hint = if ds.kind() == DatasetKind::Pairs && cfg.train.mode == DataMode::Soft {
            " (use --mode sampled)"
        } else {
            ""
        };
        return Err(CliError::Usage(format!(
            "method {} cannot train on a {} dataset in {} mode; expected {}{hint}",
            cfg.train.method,
            ds.kind(),
            cfg.train.mode,
            expected.join(" or ")
        )));
    }
    let trace = train_method(&inst, &ds, &cfg.train)?;
    let out = out_dir(cfg)?;
    write_metrics(&out.join(METRICS_FILE), &trace.records)?;
    save_policy(&out.join(POLICY_FILE), &trace.final_policy())?;
    if let Some(r) = &trace.reward_model {
        save_reward(&out.join(REWARD_MODEL_FILE), r)?;
    }
    let last = trace.records.last().expect("at least two records");
    Ok(format!(
        "{} step {} loss {} kl {} expected_reward {}\n",
        cfg.train.method, last.step, last.loss, last.kl, last.expected_reward
    ))
}

fn planned_runs(cfg: &ExperimentConfig, inst: &Instance) -> Result<(Vec<Job>, DataSource), CliError> {
    let jobs = plan_jobs(&cfg.methods, &cfg.beta_sweep, &cfg.alpha_sweep)?;
    let data = match &cfg.dataset {
        Some(p) => DataSource::fixed(load_dataset_for(p, inst)?),
        None => DataSource::synthesized(inst, &jobs, cfg.train.mode, cfg.pairs, cfg.rank_k, cfg.dataset_seed())?,
    };
    Ok((jobs, data))
}

pub fn frontier(cfg: &ExperimentConfig) -> Result<String, CliError> {
    if cfg.beta_sweep.is_empty() {
        return Err(CliError::Usage("beta_sweep must not be empty".into()));
    }
    let inst = instance_or_generated(cfg)?;
    let (jobs, data) = planned_runs(cfg, &inst)?;
    let traces = run_jobs(&inst, &data, &cfg.train, &jobs)?;
    let mut points = exact_frontier(&inst, &cfg.beta_sweep)?;
    for (job, trace) in jobs.iter().zip(&traces) {
        points.push(frontier_row(&inst, job, trace)?);
    }
    let path = out_dir(cfg)?.join(FRONTIER_FILE);
    write_frontier(&path, &points)?;
    Ok(format!("{} frontier rows -> {}\n", points.len(), path.display()))
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let inst = instance_or_generated(cfg)?;
    let (jobs, data) = planned_runs(cfg, &inst)?;
    let traces = run_jobs(&inst, &data, &cfg.train, &jobs)?;
    let out = out_dir(cfg)?;
    let mut rows = Vec::with_capacity(jobs.len());
    for (job, trace) in jobs.iter().zip(&traces) {
        let rel: PathBuf = ["runs", &job.dir_name()].iter().collect();
        let dir = out.join(&rel);
        fs::create_dir_all(&dir)?;
        write_metrics(&dir.join(METRICS_FILE), &trace.records)?;
        save_policy(&dir.join(POLICY_FILE), &trace.final_policy())?;
        let last = trace.records.last().expect("at least two records");
        rows.push(SweepRow {
            method: job.tag(),
            beta: job.beta,
            alpha: job.alpha,
            final_loss: last.loss,
            kl: last.kl,
            expected_reward: last.expected_reward,
            run_dir: rel.to_string_lossy().replace('\\', "/"),
        });
    }
    let path = out.join(SWEEP_FILE);
    write_sweep(&path, &rows)?;
    Ok(format!("{} runs -> {}\n", rows.len(), path.display()))
}

/// `ref`, `optimal:<beta>`, or a policy JSON path.
pub fn resolve_policy(spec: &str, inst: &Instance) -> Result<PolicyTable, CliError> {
    let pi = if spec == "ref" {
        inst.pi_ref().clone()
    } else if let Some(b) = spec.strip_prefix("optimal:") {
        let beta: f64 = b
            .parse()
            .map_err(|_| CliError::Usage(format!("bad beta in {spec:?}")))?;
        optimal_policy(inst.reward_true(), inst.pi_ref(), beta)?
    } else {
        load_policy(Path::new(spec))?
    };
    if pi.shape() != inst.shape() {
        return Err(CliError::Usage(format!(
            "policy {spec:?} has shape {:?}, instance has {:?}",
            pi.shape(),
            inst.shape()
        )));
    }
    Ok(pi)
}

/// Win rate of A over B per temperature. Temperature 0 is deterministic, so
/// it is evaluated exactly over all prompts (interval of width 0).
pub fn win_rate_rows(
    pi_a: &PolicyTable,
    pi_b: &PolicyTable,
    inst: &Instance,
    temperatures: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<WinRateRow>, CliError> {
    let r = inst.reward_true();
    let mut rows = Vec::with_capacity(temperatures.len());
    for &t in temperatures {
        let mut rng = rng_from_seed(derive_seed(seed, &format!("temperature/{t}")));
        let row = if t == 0.0 {
            let mut wins = 0.0;
            for x in 0..inst.n_prompts() {
                let ya = sample_completion(pi_a, x, 0.0, &mut rng)?;
                let yb = sample_completion(pi_b, x, 0.0, &mut rng)?;
                let (ra, rb) = (r.get(x, ya), r.get(x, yb));
                wins += if ra > rb {
                    1.0
                } else if ra == rb {
                    0.5
                } else {
                    0.0
                };
            }
            let n = inst.n_prompts();
            let rate = wins / n as f64;
            WinRateRow {
                temperature: t,
                wins_a: wins,
                trials: n,
                win_rate: rate,
                ci_lo: rate,
                ci_hi: rate,
            }
        } else {
            let tally = win_tally(pi_a, pi_b, inst, t, trials, &mut rng)?;
            let (lo, hi) = wilson_interval(tally.wins, tally.trials);
            WinRateRow {
                temperature: t,
                wins_a: tally.wins,
                trials: tally.trials,
                win_rate: tally.rate(),
                ci_lo: lo,
                ci_hi: hi,
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

pub fn eval(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let inst = required_instance(cfg)?;
    let spec = |s: &Option<String>, key: &str| s.clone().ok_or_else(|| CliError::Usage(format!("{key} is required")));
    let pi_a = resolve_policy(&spec(&cfg.policy_a, "policy_a")?, &inst)?;
    let pi_b = resolve_policy(&spec(&cfg.policy_b, "policy_b")?, &inst)?;
    if cfg.temperature_sweep.is_empty() {
        return Err(CliError::Usage("temperature_sweep must not be empty".into()));
    }
    if cfg.trials < 1 {
        return Err(CliError::Usage("trials must be at least 1".into()));
    }
    let rows = win_rate_rows(&pi_a, &pi_b, &inst, &cfg.temperature_sweep, cfg.trials, cfg.eval_seed())?;
    let path = out_dir(cfg)?.join(WIN_RATE_FILE);
    write_win_rates(&path, &rows)?;
    let mut text = String::new();
    for r in &rows {
        text.push_str(&format!(
            "T={} win_rate={} [{}, {}]\n",
            r.temperature, r.win_rate, r.ci_lo, r.ci_hi
        ));
    }
    Ok(text)
}

pub fn verify(cfg: &ExperimentConfig) -> Result<VerifyReport, CliError> {
    if cfg.instances < 1 {
        return Err(CliError::Usage("instances must be at least 1".into()));
    }
    Ok(run_suite(cfg.seed, cfg.instances, cfg.break_shift)?)
}
