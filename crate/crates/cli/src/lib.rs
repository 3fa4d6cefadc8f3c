//! Command-line front end: instance and dataset generation, training runs,
//! β sweeps, frontier and win-rate evaluation, and the property suite.

pub mod commands;
pub mod config;
pub mod output;
pub mod runs;
pub mod verify;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;

use clap::{Arg, ArgMatches, Command};

pub use config::ExperimentConfig;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const VERIFY_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const DIVERGENCE: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] prefopt_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(prefopt_core::Error::Divergence { .. }) => exit::DIVERGENCE,
            _ => exit::USAGE,
        }
    }
}

const SHARED: &[&str] = &["seed", "out"];
const INSTANCE_GEN: &[&str] = &["prompts", "completions", "reward_scale", "ref_concentration"];
const DATA: &[&str] = &["dataset_kind", "pairs", "rank_k"];
const TRAINING: &[&str] = &[
    "method",
    "beta",
    "alpha",
    "lr",
    "lr_scale",
    "steps",
    "warmup_steps",
    "mode",
    "eval_every",
    "optimizer",
    "reinforce_samples",
    "reinforce_baseline",
];
const SWEEPS: &[&str] = &["instance", "dataset", "methods", "beta_sweep", "alpha_sweep"];

/// (name, about, key groups)
const COMMANDS: &[(&str, &str, &[&[&str]])] = &[
    (
        "gen",
        "Generate an instance and a preference dataset",
        &[SHARED, INSTANCE_GEN, DATA],
    ),
    (
        "train",
        "Train one method and write metrics and the final policy",
        &[SHARED, &["instance", "dataset", "pairs", "rank_k"], TRAINING],
    ),
    (
        "frontier",
        "Reward-KL frontier of trained methods against the exact optimum",
        &[SHARED, INSTANCE_GEN, DATA, TRAINING, SWEEPS],
    ),
    (
        "sweep",
        "Train every method over the β and α sweeps, keeping each run",
        &[SHARED, INSTANCE_GEN, DATA, TRAINING, SWEEPS],
    ),
    (
        "eval",
        "Win rate of one policy against another, judged by the true reward",
        &[
            SHARED,
            &["instance", "policy_a", "policy_b", "temperature_sweep", "trials"],
        ],
    ),
    (
        "verify",
        "Run the property suite over seeded random instances",
        &[&["seed", "instances", "break"]],
    ),
];

pub fn cli() -> Command {
    let mut root = Command::new("prefopt")
        .about("Tabular preference-optimization lab")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about, groups) in COMMANDS {
        let mut cmd = Command::new(*name).about(*about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value settings file"),
        );
        for key in groups.iter().flat_map(|g| g.iter()) {
            cmd = cmd.arg(
                Arg::new(*key)
                    .long(key.replace('_', "-"))
                    .value_name("VALUE")
                    .help(config::help_for(key)),
            );
        }
        root = root.subcommand(cmd);
    }
    root
}

/// File settings overlaid by explicit flags.
fn merged_settings(m: &ArgMatches) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = match m.get_one::<String>("config") {
        Some(path) => config::parse_config_text(&fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    for id in m.ids() {
        let key = id.as_str();
        if key == "config" {
            continue;
        }
        if let Some(v) = m.get_one::<String>(key) {
            map.insert(key.to_string(), v.clone());
        }
    }
    Ok(map)
}

fn dispatch(name: &str, m: &ArgMatches) -> Result<(String, i32), CliError> {
    let cfg = ExperimentConfig::from_map(&merged_settings(m)?)?;
    cfg.train.validate()?;
    Ok(match name {
        "gen" => (commands::gen(&cfg)?, exit::SUCCESS),
        "train" => (commands::train(&cfg)?, exit::SUCCESS),
        "frontier" => (commands::frontier(&cfg)?, exit::SUCCESS),
        "sweep" => (commands::sweep(&cfg)?, exit::SUCCESS),
        "eval" => (commands::eval(&cfg)?, exit::SUCCESS),
        "verify" => {
            let report = commands::verify(&cfg)?;
            let code = if report.all_passed() {
                exit::SUCCESS
            } else {
                exit::VERIFY_FAILED
            };
            (report.render(), code)
        }
        other => unreachable!("unregistered subcommand {other}"),
    })
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match dispatch(name, sub) {
        Ok((text, code)) => {
            print!("{text}");
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
