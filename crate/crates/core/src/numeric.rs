//! Numerically stable scalar kernels shared by every module.
//!
//! Rows longer than [`COMPENSATED_THRESHOLD`] are accumulated with Neumaier
//! summation; shorter rows use plain left-to-right addition.

/// Row length above which sums switch to compensated accumulation.
pub const COMPENSATED_THRESHOLD: usize = 1024;

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut carry = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Sums a slice, switching to compensated summation for long rows.
pub fn row_sum(values: &[f64]) -> f64 {
    if values.len() > COMPENSATED_THRESHOLD {
        compensated_sum(values.iter().copied())
    } else {
        values.iter().sum()
    }
}

/// `log(sum(exp(v)))` with max-shifting. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let shifted = values.iter().map(|v| (v - max).exp());
    let total = if values.len() > COMPENSATED_THRESHOLD {
        compensated_sum(shifted)
    } else {
        shifted.sum()
    };
    max + total.ln()
}

/// Logistic function, evaluated without overflow for either sign.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))`, so that `-log σ(z) == softplus(-z)`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `log σ(z)`.
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

/// Log-softmax of a row of logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

/// Softmax of a row of logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total = row_sum(&weights);
    weights.into_iter().map(|w| w / total).collect()
}
