//! Flat `key = value` configuration with command-line overrides.
//!
//! Every setting has one snake_case key. A config file may set any key; the
//! matching `--kebab-case` flag wins over the file.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use prefopt_core::objectives::DEFAULT_BETA;
use prefopt_core::rng::derive_seed;
use prefopt_core::train::{Method, TrainConfig};
use prefopt_core::DatasetKind;

use crate::CliError;

/// Known keys and their help text.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed; sub-streams: instance, dataset, train, eval"),
    ("prompts", "number of prompts"),
    ("completions", "completions per prompt"),
    ("reward_scale", "true rewards are uniform in [-scale, scale]"),
    ("ref_concentration", "Dirichlet concentration of the reference policy"),
    ("dataset_kind", "pairs | rankings | soft"),
    ("pairs", "number of sampled records"),
    ("rank_k", "ranking length for rankings datasets"),
    ("instance", "instance JSON path"),
    ("dataset", "dataset JSONL path"),
    ("out", "output directory"),
    (
        "method",
        "dpo | pl_dpo | rm_then_rl | reinforce | sft | preferred_ft | unlikelihood",
    ),
    ("methods", "comma-separated methods for frontier and sweep"),
    ("beta", "KL coefficient"),
    ("alpha", "unlikelihood coefficient in [0, 1]"),
    ("lr", "learning rate (multiple of 1/L under lr_scale = smoothness)"),
    ("lr_scale", "smoothness | absolute"),
    ("steps", "gradient steps"),
    ("warmup_steps", "linear warmup steps"),
    ("mode", "soft | sampled"),
    ("eval_every", "metrics interval in steps"),
    ("optimizer", "sgd | rmsprop | natural"),
    ("reinforce_samples", "samples per prompt per step in sampled REINFORCE"),
    ("reinforce_baseline", "true | false"),
    ("beta_sweep", "comma-separated betas"),
    ("alpha_sweep", "comma-separated unlikelihood alphas"),
    ("temperature_sweep", "comma-separated sampling temperatures"),
    ("policy_a", "policy JSON path, `ref`, or `optimal:<beta>`"),
    ("policy_b", "policy JSON path, `ref`, or `optimal:<beta>`"),
    ("trials", "duels per temperature"),
    ("instances", "random instances checked by verify"),
    ("break", "verify self-test hook: shift"),
];

pub fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

pub fn help_for(key: &str) -> &'static str {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, h)| *h).unwrap_or("")
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
        let key = k.trim().to_string();
        if !is_known(&key) {
            return Err(CliError::Usage(format!("config line {}: unknown key {key:?}", i + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub prompts: usize,
    pub completions: usize,
    pub reward_scale: f64,
    pub ref_concentration: f64,
    pub dataset_kind: DatasetKind,
    pub pairs: usize,
    pub rank_k: usize,
    pub instance: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub beta_sweep: Vec<f64>,
    pub alpha_sweep: Vec<f64>,
    pub temperature_sweep: Vec<f64>,
    pub policy_a: Option<String>,
    pub policy_b: Option<String>,
    pub trials: usize,
    pub instances: usize,
    pub break_shift: bool,
}

fn parse<T: FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|e| CliError::Usage(format!("{key} = {v:?}: {e}"))),
    }
}

fn parse_list<T>(map: &BTreeMap<String, String>, key: &str, default: &[T]) -> Result<Vec<T>, CliError>
where
    T: FromStr + Clone,
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(default.to_vec()),
        Some(v) => v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| CliError::Usage(format!("{key}: {s:?}: {e}"))))
            .collect(),
    }
}

impl ExperimentConfig {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, CliError> {
        if let Some(k) = map.keys().find(|k| !is_known(k)) {
            return Err(CliError::Usage(format!("unknown key {k:?}")));
        }
        let d = TrainConfig::default();
        let seed = parse(map, "seed", 0u64)?;
        let method = parse(map, "method", d.method)?;
        let steps = parse(map, "steps", d.steps)?;
        let train = TrainConfig {
            method,
            beta: parse(map, "beta", DEFAULT_BETA)?,
            alpha: parse(map, "alpha", d.alpha)?,
            lr: parse(map, "lr", d.lr)?,
            lr_scale: parse(map, "lr_scale", d.lr_scale)?,
            steps,
            // an unset warmup never outlasts a short run
            warmup_steps: parse(map, "warmup_steps", d.warmup_steps.min(steps))?,
            seed: derive_seed(seed, "train"),
            mode: parse(map, "mode", d.mode)?,
            eval_every: parse(map, "eval_every", d.eval_every)?,
            optimizer: parse(map, "optimizer", d.optimizer)?,
            reinforce_samples: parse(map, "reinforce_samples", d.reinforce_samples)?,
            reinforce_baseline: parse(map, "reinforce_baseline", d.reinforce_baseline)?,
        };
        let break_shift = match map.get("break").map(String::as_str) {
            None | Some("") | Some("none") => false,
            Some("shift") => true,
            Some(other) => return Err(CliError::Usage(format!("unknown break mode {other:?}"))),
        };
        Ok(Self {
            seed,
            prompts: parse(map, "prompts", 8)?,
            completions: parse(map, "completions", 6)?,
            reward_scale: parse(map, "reward_scale", 1.0)?,
            ref_concentration: parse(map, "ref_concentration", 1.0)?,
            dataset_kind: parse(map, "dataset_kind", DatasetKind::Pairs)?,
            pairs: parse(map, "pairs", 20_000)?,
            rank_k: parse(map, "rank_k", 3)?,
            instance: map.get("instance").map(PathBuf::from),
            dataset: map.get("dataset").map(PathBuf::from),
            out: PathBuf::from(map.get("out").map(String::as_str).unwrap_or(".")),
            methods: parse_list(map, "methods", &[method])?,
            beta_sweep: parse_list(map, "beta_sweep", &[0.05, 0.1, 1.0, 5.0])?,
            alpha_sweep: parse_list(map, "alpha_sweep", &[1.0])?,
            temperature_sweep: parse_list(map, "temperature_sweep", &[0.0, 0.25, 0.5, 0.75, 1.0])?,
            policy_a: map.get("policy_a").cloned(),
            policy_b: map.get("policy_b").cloned(),
            trials: parse(map, "trials", 10_000)?,
            instances: parse(map, "instances", 50)?,
            break_shift,
            train,
        })
    }

    pub fn instance_seed(&self) -> u64 {
        derive_seed(self.seed, "instance")
    }

    pub fn dataset_seed(&self) -> u64 {
        derive_seed(self.seed, "dataset")
    }

    pub fn eval_seed(&self) -> u64 {
        derive_seed(self.seed, "eval")
    }
}
