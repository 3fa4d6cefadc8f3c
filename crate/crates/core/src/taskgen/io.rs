//! Instance JSON and dataset JSON Lines formats.
//!
//! Instance file: one JSON object
//! `{"n_prompts","completions_per_prompt","pi_ref","reward_true","digest"}`
//! with row-major nested arrays. Dataset file: a header line
//! `{"kind","instance_digest"}` followed by one record per line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetKind, Instance, PreferenceDataset, PreferencePair, Ranking, Records, SoftPairRecord};
use crate::error::{Error, Result};
use crate::table::{PolicyTable, RewardTable};

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    n_prompts: usize,
    completions_per_prompt: usize,
    pi_ref: Vec<Vec<f64>>,
    reward_true: Vec<Vec<f64>>,
    digest: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    instance_digest: String,
}

#[derive(Serialize, Deserialize)]
struct PairLine {
    x: usize,
    yw: usize,
    yl: usize,
}

#[derive(Serialize, Deserialize)]
struct RankingLine {
    x: usize,
    order: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SoftLine {
    x: usize,
    y1: usize,
    y2: usize,
    p1: f64,
}

pub fn instance_to_json(inst: &Instance) -> String {
    let file = InstanceFile {
        n_prompts: inst.n_prompts(),
        completions_per_prompt: inst.completions_per_prompt(),
        pi_ref: inst.pi_ref().to_rows(),
        reward_true: inst.reward_true().to_rows(),
        digest: inst.digest().to_string(),
    };
    let mut s = serde_json::to_string(&file).expect("instance serializes");
    s.push('\n');
    s
}

/// Parses an instance and rejects it if the stored digest does not match
/// the tables.
pub fn instance_from_json(text: &str) -> Result<Instance> {
    let file: InstanceFile = serde_json::from_str(text)?;
    if file.pi_ref.len() != file.n_prompts || file.pi_ref.iter().any(|r| r.len() != file.completions_per_prompt) {
        return Err(Error::Format("pi_ref shape disagrees with header counts".into()));
    }
    let inst = Instance::new(
        PolicyTable::from_rows(file.pi_ref)?,
        RewardTable::from_rows(file.reward_true)?,
    )?;
    if inst.digest() != file.digest {
        return Err(Error::Format(format!(
            "instance digest {} does not match contents ({})",
            file.digest,
            inst.digest()
        )));
    }
    Ok(inst)
}

pub fn dataset_to_jsonl(ds: &PreferenceDataset) -> String {
    fn line<T: Serialize>(out: &mut String, v: &T) {
        out.push_str(&serde_json::to_string(v).expect("record serializes"));
        out.push('\n');
    }
    let mut out = String::new();
    line(
        &mut out,
        &Header {
            kind: ds.kind().to_string(),
            instance_digest: ds.instance_digest().to_string(),
        },
    );
    match ds.records() {
        Records::Pairs(v) => {
            for r in v {
                line(
                    &mut out,
                    &PairLine {
                        x: r.prompt,
                        yw: r.winner,
                        yl: r.loser,
                    },
                );
            }
        }
        Records::Rankings(v) => {
            for r in v {
                line(
                    &mut out,
                    &RankingLine {
                        x: r.prompt,
                        order: r.order.clone(),
                    },
                );
            }
        }
        Records::Soft(v) => {
            for r in v {
                line(
                    &mut out,
                    &SoftLine {
                        x: r.prompt,
                        y1: r.y1,
                        y2: r.y2,
                        p1: r.p_y1_wins,
                    },
                );
            }
        }
    }
    out
}

pub fn dataset_from_jsonl(text: &str) -> Result<PreferenceDataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))?;
    let header: Header = serde_json::from_str(head)?;
    let kind: DatasetKind = header.kind.parse()?;
    let at = |i: usize, e: serde_json::Error| Error::Format(format!("line {}: {e}", i + 1));
    let records = match kind {
        DatasetKind::Pairs => Records::Pairs(
            lines
                .map(|(i, l)| {
                    serde_json::from_str::<PairLine>(l)
                        .map(|p| PreferencePair {
                            prompt: p.x,
                            winner: p.yw,
                            loser: p.yl,
                        })
                        .map_err(|e| at(i, e))
                })
                .collect::<Result<_>>()?,
        ),
        DatasetKind::Rankings => Records::Rankings(
            lines
                .map(|(i, l)| {
                    serde_json::from_str::<RankingLine>(l)
                        .map(|r| Ranking {
                            prompt: r.x,
                            order: r.order,
                        })
                        .map_err(|e| at(i, e))
                })
                .collect::<Result<_>>()?,
        ),
        DatasetKind::Soft => Records::Soft(
            lines
                .map(|(i, l)| {
                    serde_json::from_str::<SoftLine>(l)
                        .map(|s| SoftPairRecord {
                            prompt: s.x,
                            y1: s.y1,
                            y2: s.y2,
                            p_y1_wins: s.p1,
                        })
                        .map_err(|e| at(i, e))
                })
                .collect::<Result<_>>()?,
        ),
    };
    PreferenceDataset::new(records, header.instance_digest)
}

pub fn save_instance(path: impl AsRef<Path>, inst: &Instance) -> Result<()> {
    fs::write(path, instance_to_json(inst))?;
    Ok(())
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance> {
    instance_from_json(&fs::read_to_string(path)?)
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &PreferenceDataset) -> Result<()> {
    fs::write(path, dataset_to_jsonl(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<PreferenceDataset> {
    dataset_from_jsonl(&fs::read_to_string(path)?)
}

/// Loads a dataset and rejects it unless it is bound to `inst`.
pub fn load_dataset_for(path: impl AsRef<Path>, inst: &Instance) -> Result<PreferenceDataset> {
    let ds = load_dataset(path)?;
    ds.validate_against(inst)?;
    Ok(ds)
}
