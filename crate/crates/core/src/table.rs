//! Dense `[prompt][completion]` tables shared by every module.

use crate::error::{arg_err, Result};
use crate::numeric::row_sum;

/// Maximum deviation of a policy row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Completion-space shape: `(n_prompts, n_completions)`.
pub type Shape = (usize, usize);

pub(crate) fn ensure_shape(expected: Shape, found: Shape, what: &str) -> Result<()> {
    if expected != found {
        return arg_err(format!(
            "{what}: shape mismatch, expected {}x{}, found {}x{}",
            expected.0, expected.1, found.0, found.1
        ));
    }
    Ok(())
}

fn flatten_rows(rows: Vec<Vec<f64>>, what: &str) -> Result<(Shape, Vec<f64>)> {
    let n_prompts = rows.len();
    let n_completions = rows.first().map_or(0, Vec::len);
    if n_prompts == 0 || n_completions == 0 {
        return arg_err(format!("{what}: table must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != n_completions) {
        return arg_err(format!("{what}: ragged rows"));
    }
    Ok(((n_prompts, n_completions), rows.into_iter().flatten().collect()))
}

/// Real-valued reward per `(prompt, completion)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    shape: Shape,
    values: Vec<f64>,
}

impl RewardTable {
    pub fn new(n_prompts: usize, n_completions: usize, values: Vec<f64>) -> Result<Self> {
        if n_prompts == 0 || n_completions == 0 {
            return arg_err("reward table must be non-empty");
        }
        if values.len() != n_prompts * n_completions {
            return arg_err(format!(
                "reward table: {} values for shape {n_prompts}x{n_completions}",
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return arg_err(format!(
                "reward table: non-finite entry at ({}, {})",
                i / n_completions,
                i % n_completions
            ));
        }
        Ok(Self {
            shape: (n_prompts, n_completions),
            values,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let ((p, c), values) = flatten_rows(rows, "reward table")?;
        Self::new(p, c, values)
    }

    pub fn zeros(n_prompts: usize, n_completions: usize) -> Self {
        Self {
            shape: (n_prompts, n_completions),
            values: vec![0.0; n_prompts * n_completions],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }
    pub fn n_prompts(&self) -> usize {
        self.shape.0
    }
    pub fn n_completions(&self) -> usize {
        self.shape.1
    }
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.shape.1 + y]
    }
    pub fn row(&self, x: usize) -> &[f64] {
        let c = self.shape.1;
        &self.values[x * c..(x + 1) * c]
    }
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.shape.1)
    }
    /// Row-major values; this is also the parameter layout of a reward model.
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Largest absolute entrywise difference between two same-shaped tables.
    pub fn max_abs_diff(&self, other: &RewardTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_ids(&self, x: usize, y: usize) -> Result<()> {
        if x >= self.shape.0 || y >= self.shape.1 {
            return arg_err(format!(
                "id ({x}, {y}) out of range for {}x{} table",
                self.shape.0, self.shape.1
            ));
        }
        Ok(())
    }
}

/// Conditional distribution `π(y|x)`, one probability row per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    shape: Shape,
    probs: Vec<f64>,
}

impl PolicyTable {
    /// Validates that entries are finite and non-negative and every row sums
    /// to one within [`ROW_SUM_TOL`].
    pub fn new(n_prompts: usize, n_completions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_prompts == 0 || n_completions == 0 {
            return arg_err("policy table must be non-empty");
        }
        if probs.len() != n_prompts * n_completions {
            return arg_err(format!(
                "policy table: {} values for shape {n_prompts}x{n_completions}",
                probs.len()
            ));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return arg_err("policy table: entries must be finite and non-negative");
        }
        for (x, row) in probs.chunks_exact(n_completions).enumerate() {
            let s = row_sum(row);
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return arg_err(format!("policy table: row {x} sums to {s}"));
            }
        }
        Ok(Self {
            shape: (n_prompts, n_completions),
            probs,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let ((p, c), probs) = flatten_rows(rows, "policy table")?;
        Self::new(p, c, probs)
    }

    pub fn uniform(n_prompts: usize, n_completions: usize) -> Self {
        let p = 1.0 / n_completions as f64;
        Self {
            shape: (n_prompts, n_completions),
            probs: vec![p; n_prompts * n_completions],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }
    pub fn n_prompts(&self) -> usize {
        self.shape.0
    }
    pub fn n_completions(&self) -> usize {
        self.shape.1
    }
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.probs[x * self.shape.1 + y]
    }
    pub fn row(&self, x: usize) -> &[f64] {
        let c = self.shape.1;
        &self.probs[x * c..(x + 1) * c]
    }
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.shape.1)
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|p| *p > 0.0)
    }

    /// Largest per-prompt total-variation distance to `other`.
    pub fn max_tv(&self, other: &PolicyTable) -> f64 {
        self.rows()
            .zip(other.rows())
            .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Per-prompt additive reward offset `f(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardShift {
    per_prompt: Vec<f64>,
}

impl RewardShift {
    pub fn new(per_prompt: Vec<f64>) -> Result<Self> {
        if per_prompt.iter().any(|v| !v.is_finite()) {
            return arg_err("reward shift must be finite");
        }
        Ok(Self { per_prompt })
    }
    pub fn zeros(n_prompts: usize) -> Self {
        Self {
            per_prompt: vec![0.0; n_prompts],
        }
    }
    pub fn per_prompt(&self) -> &[f64] {
        &self.per_prompt
    }
    pub fn len(&self) -> usize {
        self.per_prompt.len()
    }
    pub fn is_empty(&self) -> bool {
        self.per_prompt.is_empty()
    }
}

/// Uniform prompt weights, the default weighting for frontier evaluation.
pub fn uniform_weights(n_prompts: usize) -> Vec<f64> {
    vec![1.0 / n_prompts as f64; n_prompts]
}

pub(crate) fn check_prompt_weights(weights: &[f64], n_prompts: usize) -> Result<()> {
    if weights.len() != n_prompts {
        return arg_err(format!(
            "prompt weights: {} entries for {n_prompts} prompts",
            weights.len()
        ));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return arg_err("prompt weights must be finite and non-negative");
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return arg_err(format!("prompt weights sum to {s}, expected 1"));
    }
    Ok(())
}
