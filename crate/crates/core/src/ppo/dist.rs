//! Tanh-squashed diagonal Gaussian policy distribution and advantage
//! estimation.

use std::f64::consts::{LN_2, PI};

use super::PpoError;

/// `lower + (upper − lower)·(tanh(u) + 1)/2`, coordinate by coordinate.
pub fn squash(u: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    u.iter()
        .zip(lower.iter().zip(upper))
        .map(|(&u, (&l, &h))| (l + (h - l) * (u.tanh() + 1.0) / 2.0).clamp(l, h))
        .collect()
}

/// `ln(1 − tanh²(u))` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let a = u.abs();
    2.0 * (LN_2 - a - (-2.0 * a).exp().ln_1p())
}

/// Log-density of the Gaussian at `u`, per coordinate, summed.
pub fn gaussian_log_density(u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    u.iter()
        .zip(mean.iter().zip(log_std))
        .map(|(&u, (&m, &s))| {
            let z = (u - m) * (-s).exp();
            -0.5 * z * z - s - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Log of `|d squash / du|` summed over coordinates with a nonempty range.
/// A coordinate with `lower == upper` is deterministic and contributes
/// nothing, so the density is taken over the remaining coordinates.
pub fn log_squash_jacobian(u: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    u.iter()
        .zip(lower.iter().zip(upper))
        .filter(|(_, (l, h))| h > l)
        .map(|(&u, (&l, &h))| ((h - l) / 2.0).ln() + log_one_minus_tanh_sq(u))
        .sum()
}

/// Log-density of the squashed action produced by the pre-squash sample `u`.
pub fn log_prob(u: &[f64], mean: &[f64], log_std: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    gaussian_log_density(u, mean, log_std) - log_squash_jacobian(u, lower, upper)
}

/// Entropy of the pre-squash Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 * (1.0 + (2.0 * PI).ln())).sum()
}

/// Generalized advantage estimates by the backward recursion
/// `A_t = δ_t + γλ·A_{t+1}`, `δ_t = r_t + γ·v_{t+1} − v_t`. `values` carries
/// one bootstrap entry past the last reward (zero for a terminal state).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>, PpoError> {
    if values.len() != rewards.len() + 1 {
        return Err(PpoError::Shape(format!("{} rewards need {} values, got {}", rewards.len(), rewards.len() + 1, values.len())));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut next = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        next = delta + gamma * lambda * next;
        out[t] = next;
    }
    Ok(out)
}
