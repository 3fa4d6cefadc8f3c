//! Artifact formats: metrics/frontier/win-rate CSV and policy/reward JSON.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so files
//! are locale-independent and byte-stable across runs.

use std::fs;
use std::path::Path;

use prefopt_core::exact::FrontierPoint;
use prefopt_core::objectives::{AUX_MARGIN, AUX_WEIGHT_MEAN};
use prefopt_core::train::EvalRecord;
use prefopt_core::{PolicyTable, RewardTable};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const METRICS_HEADER: [&str; 6] = ["step", "loss", "kl", "expected_reward", "aux_margin", "aux_weight_mean"];
pub const FRONTIER_HEADER: [&str; 4] = ["method", "beta", "kl", "expected_reward"];
pub const WIN_RATE_HEADER: [&str; 6] = ["temperature", "wins_a", "trials", "win_rate", "ci_lo", "ci_hi"];
pub const SWEEP_HEADER: [&str; 7] = [
    "method",
    "beta",
    "alpha",
    "final_loss",
    "kl",
    "expected_reward",
    "run_dir",
];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn write_csv<const N: usize>(path: &Path, header: [&str; N], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, records: &[EvalRecord]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                num(r.loss),
                num(r.kl),
                num(r.expected_reward),
                opt(r.aux.get(AUX_MARGIN).copied()),
                opt(r.aux.get(AUX_WEIGHT_MEAN).copied()),
            ]
        })
        .collect();
    write_csv(path, METRICS_HEADER, &rows)
}

pub fn write_frontier(path: &Path, points: &[FrontierPoint]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| vec![p.method_tag.clone(), opt(p.beta), num(p.kl), num(p.expected_reward)])
        .collect();
    write_csv(path, FRONTIER_HEADER, &rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WinRateRow {
    pub temperature: f64,
    pub wins_a: f64,
    pub trials: usize,
    pub win_rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub fn write_win_rates(path: &Path, rows: &[WinRateRow]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.temperature),
                num(r.wins_a),
                r.trials.to_string(),
                num(r.win_rate),
                num(r.ci_lo),
                num(r.ci_hi),
            ]
        })
        .collect();
    write_csv(path, WIN_RATE_HEADER, &rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub final_loss: f64,
    pub kl: f64,
    pub expected_reward: f64,
    pub run_dir: String,
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                opt(r.beta),
                opt(r.alpha),
                num(r.final_loss),
                num(r.kl),
                num(r.expected_reward),
                r.run_dir.clone(),
            ]
        })
        .collect();
    write_csv(path, SWEEP_HEADER, &rows)
}

/// 95% Wilson score interval for `wins` successes in `n` trials.
pub fn wilson_interval(wins: f64, n: usize) -> (f64, f64) {
    const Z: f64 = 1.959963984540054;
    let n = n as f64;
    let p = wins / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    n_prompts: usize,
    completions_per_prompt: usize,
    rows: Vec<Vec<f64>>,
}

fn table_json(p: usize, c: usize, rows: Vec<Vec<f64>>) -> String {
    let mut s = serde_json::to_string(&TableFile {
        n_prompts: p,
        completions_per_prompt: c,
        rows,
    })
    .expect("table serializes");
    s.push('\n');
    s
}

fn read_table(path: &Path) -> Result<TableFile, CliError> {
    let file: TableFile = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if file.rows.len() != file.n_prompts || file.rows.iter().any(|r| r.len() != file.completions_per_prompt) {
        return Err(CliError::Usage(format!(
            "{}: rows disagree with declared shape",
            path.display()
        )));
    }
    Ok(file)
}

pub fn save_policy(path: &Path, pi: &PolicyTable) -> Result<(), CliError> {
    let (p, c) = pi.shape();
    fs::write(path, table_json(p, c, pi.to_rows()))?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<PolicyTable, CliError> {
    Ok(PolicyTable::from_rows(read_table(path)?.rows)?)
}

pub fn save_reward(path: &Path, r: &RewardTable) -> Result<(), CliError> {
    let (p, c) = r.shape();
    fs::write(path, table_json(p, c, r.to_rows()))?;
    Ok(())
}

pub fn load_reward(path: &Path) -> Result<RewardTable, CliError> {
    Ok(RewardTable::from_rows(read_table(path)?.rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_interval_contains_estimate() {
        let (lo, hi) = wilson_interval(60.0, 100);
        assert!(lo < 0.6 && 0.6 < hi);
        assert!((lo - 0.502).abs() < 1e-3 && (hi - 0.691).abs() < 1e-3);
        let (lo, hi) = wilson_interval(0.0, 10);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0);
    }

    #[test]
    fn policy_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let pi = PolicyTable::from_rows(vec![vec![0.1, 0.2, 0.7], vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]).unwrap();
        let path = dir.path().join("p.json");
        save_policy(&path, &pi).unwrap();
        assert_eq!(load_policy(&path).unwrap(), pi);
    }

    #[test]
    fn numbers_use_plain_decimal_points() {
        assert_eq!(num(1234567.5), "1234567.5");
        assert_eq!(num(-0.25), "-0.25");
        assert_eq!(opt(None), "");
    }
}
