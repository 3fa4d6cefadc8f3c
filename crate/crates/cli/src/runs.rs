//! Planning and parallel execution of independent training runs.

use prefopt_core::exact::{frontier_point, FrontierPoint};
use prefopt_core::taskgen::{enumerate_soft_dataset, sample_pairs, sample_rankings};
use prefopt_core::train::{train, DataMode, Method, RunTrace, TrainConfig};
use prefopt_core::{DatasetKind, Instance, PreferenceDataset};
use rayon::prelude::*;

use crate::CliError;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "PREFOPT_THREADS";

/// One training run: a method with its β or α setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub method: Method,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
}

impl Job {
    /// Label used in CSV `method` columns.
    pub fn tag(&self) -> String {
        match self.alpha {
            Some(a) => format!("{}:alpha={a}", self.method),
            None => self.method.to_string(),
        }
    }

    /// Directory name for per-run artifacts.
    pub fn dir_name(&self) -> String {
        match (self.beta, self.alpha) {
            (Some(b), _) => format!("{}_beta{b}", self.method),
            (_, Some(a)) => format!("{}_alpha{a}", self.method),
            _ => self.method.to_string(),
        }
    }

    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            method: self.method,
            beta: self.beta.unwrap_or(base.beta),
            alpha: self.alpha.unwrap_or(base.alpha),
            ..base.clone()
        }
    }
}

/// β-dependent methods run once per β, unlikelihood once per α, the
/// likelihood baselines once.
pub fn plan_jobs(methods: &[Method], betas: &[f64], alphas: &[f64]) -> Result<Vec<Job>, CliError> {
    if methods.is_empty() {
        return Err(CliError::Usage("methods must not be empty".into()));
    }
    let mut jobs = Vec::new();
    for &method in methods {
        if method.uses_beta() {
            if betas.is_empty() {
                return Err(CliError::Usage("beta_sweep must not be empty".into()));
            }
            jobs.extend(betas.iter().map(|&b| Job {
                method,
                beta: Some(b),
                alpha: None,
            }));
        } else if method == Method::Unlikelihood {
            if alphas.is_empty() {
                return Err(CliError::Usage("alpha_sweep must not be empty".into()));
            }
            jobs.extend(alphas.iter().map(|&a| Job {
                method,
                beta: None,
                alpha: Some(a),
            }));
        } else {
            jobs.push(Job {
                method,
                beta: None,
                alpha: None,
            });
        }
    }
    Ok(jobs)
}

/// Dataset kind synthesized for a method when none is supplied.
pub fn preferred_kind(method: Method, mode: DataMode) -> DatasetKind {
    match (method, mode) {
        (Method::PlDpo, _) => DatasetKind::Rankings,
        (Method::Sft | Method::PreferredFt | Method::Unlikelihood, _) => DatasetKind::Pairs,
        (_, DataMode::Soft) => DatasetKind::Soft,
        (_, DataMode::Sampled) => DatasetKind::Pairs,
    }
}

/// Generates a dataset of `kind` from the reference policy.
pub fn synthesize(
    inst: &Instance,
    kind: DatasetKind,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<PreferenceDataset, CliError> {
    Ok(match kind {
        DatasetKind::Pairs => sample_pairs(inst, inst.pi_ref(), n, seed)?,
        DatasetKind::Rankings => sample_rankings(inst, inst.pi_ref(), n, k, seed)?,
        DatasetKind::Soft => enumerate_soft_dataset(inst)?,
    })
}

/// Datasets for a job list: either one supplied dataset for all runs, or one
/// synthesized dataset per required kind.
pub struct DataSource {
    fixed: Option<PreferenceDataset>,
    by_kind: Vec<(DatasetKind, PreferenceDataset)>,
}

impl DataSource {
    pub fn fixed(ds: PreferenceDataset) -> Self {
        Self {
            fixed: Some(ds),
            by_kind: Vec::new(),
        }
    }

    pub fn synthesized(
        inst: &Instance,
        jobs: &[Job],
        mode: DataMode,
        n: usize,
        k: usize,
        seed: u64,
    ) -> Result<Self, CliError> {
        let mut by_kind: Vec<(DatasetKind, PreferenceDataset)> = Vec::new();
        for job in jobs {
            let kind = preferred_kind(job.method, mode);
            if !by_kind.iter().any(|(k, _)| *k == kind) {
                by_kind.push((kind, synthesize(inst, kind, n, k, seed)?));
            }
        }
        Ok(Self { fixed: None, by_kind })
    }

    pub fn for_job(&self, job: &Job, mode: DataMode) -> &PreferenceDataset {
        if let Some(ds) = &self.fixed {
            return ds;
        }
        let kind = preferred_kind(job.method, mode);
        &self
            .by_kind
            .iter()
            .find(|(k, _)| *k == kind)
            .expect("dataset planned for every job")
            .1
    }
}

/// Worker pool sized by [`THREADS_ENV`] when set to a positive integer.
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => builder = builder.num_threads(n),
            _ => {
                return Err(CliError::Usage(format!(
                    "{THREADS_ENV} must be a positive integer, got {v:?}"
                )))
            }
        }
    }
    builder
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

/// Trains every job concurrently; results keep job order.
pub fn run_jobs(
    inst: &Instance,
    data: &DataSource,
    base: &TrainConfig,
    jobs: &[Job],
) -> Result<Vec<RunTrace>, CliError> {
    let pool = thread_pool()?;
    pool.install(|| {
        jobs.par_iter()
            .map(|job| train(inst, data.for_job(job, base.mode), &job.config(base)).map_err(CliError::from))
            .collect()
    })
}

pub fn frontier_row(inst: &Instance, job: &Job, trace: &RunTrace) -> Result<FrontierPoint, CliError> {
    Ok(frontier_point(&trace.final_policy(), inst, job.beta, &job.tag())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_expands_sweeps() {
        let jobs = plan_jobs(
            &[Method::Dpo, Method::Sft, Method::Unlikelihood],
            &[0.1, 1.0],
            &[0.5, 1.0],
        )
        .unwrap();
        let tags: Vec<String> = jobs.iter().map(Job::tag).collect();
        assert_eq!(
            tags,
            ["dpo", "dpo", "sft", "unlikelihood:alpha=0.5", "unlikelihood:alpha=1"]
        );
        assert_eq!(jobs[1].dir_name(), "dpo_beta1");
    }

    #[test]
    fn empty_sweeps_are_rejected() {
        assert!(plan_jobs(&[Method::Dpo], &[], &[1.0]).is_err());
        assert!(plan_jobs(&[Method::Unlikelihood], &[0.1], &[]).is_err());
        assert!(plan_jobs(&[], &[0.1], &[1.0]).is_err());
        assert!(plan_jobs(&[Method::Sft], &[], &[]).is_ok());
    }
}
