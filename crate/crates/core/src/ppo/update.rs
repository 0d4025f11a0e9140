//! The clipped-surrogate loss, its exact gradient, and the optimizer step.

use rand::seq::SliceRandom;
use rand::Rng;

use super::dist::{gaussian_entropy, log_one_minus_tanh_sq, log_prob};
use super::net::{Cache, Network};
use super::PpoError;

/// Rollout samples, stored flat.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub obs: Vec<f64>,
    /// Pre-squash actions.
    pub u: Vec<f64>,
    /// Standard normal noise that produced `u`, reused by the entropy estimate.
    pub eps: Vec<f64>,
    pub old_logp: Vec<f64>,
    pub advantage: Vec<f64>,
    pub ret: Vec<f64>,
}

impl Batch {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Batch { obs_dim, action_dim, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.old_logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_logp.is_empty()
    }

    pub fn push(&mut self, obs: &[f64], u: &[f64], eps: &[f64], old_logp: f64, advantage: f64, ret: f64) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        debug_assert_eq!(u.len(), self.action_dim);
        debug_assert_eq!(eps.len(), self.action_dim);
        self.obs.extend_from_slice(obs);
        self.u.extend_from_slice(u);
        self.eps.extend_from_slice(eps);
        self.old_logp.push(old_logp);
        self.advantage.push(advantage);
        self.ret.push(ret);
    }

    pub fn obs(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn u(&self, i: usize) -> &[f64] {
        &self.u[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn eps(&self, i: usize) -> &[f64] {
        &self.eps[i * self.action_dim..(i + 1) * self.action_dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoeffs {
    pub clip_eps: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
}

/// Loss terms over one minibatch. The minimized objective is
/// `policy + value_coeff·value − entropy_coeff·entropy`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// Negated mean clipped surrogate.
    pub policy: f64,
    /// Mean squared value error.
    pub value: f64,
    /// Entropy of the squashed action distribution, estimated on the
    /// minibatch noise.
    pub entropy: f64,
    pub total: f64,
}

/// Loss over the samples `idx` of `batch`, and its gradient accumulated into
/// `grad` when given. The action box is the squash range.
pub fn loss_and_grad(
    net: &Network,
    batch: &Batch,
    idx: &[usize],
    lower: &[f64],
    upper: &[f64],
    coeffs: LossCoeffs,
    mut grad: Option<&mut [f64]>,
) -> LossParts {
    let m = idx.len() as f64;
    let na = net.action_dim();
    let ls_off = net.log_std_offset();
    let mut cache = Cache::default();
    let mut parts = LossParts::default();
    let mut d_mean = vec![0.0; na];
    let mut d_log_std = vec![0.0; na];
    let (lo, hi) = (1.0 - coeffs.clip_eps, 1.0 + coeffs.clip_eps);
    // The squashed entropy is the Gaussian entropy plus the expected log
    // Jacobian, estimated at the reparameterized samples mean + std·eps.
    let mut log_jac = 0.0;
    for &i in idx {
        let f = net.forward_cached(batch.obs(i), &mut cache);
        let u = batch.u(i);
        let eps = batch.eps(i);
        let logp = log_prob(u, &f.mean, &f.log_std, lower, upper);
        let ratio = (logp - batch.old_logp[i]).exp();
        let a = batch.advantage[i];
        let unclipped = ratio * a;
        let clipped = ratio.clamp(lo, hi) * a;
        parts.policy -= unclipped.min(clipped) / m;
        let err = f.value - batch.ret[i];
        parts.value += err * err / m;
        for j in 0..na {
            if upper[j] > lower[j] {
                let std = f.log_std[j].exp();
                log_jac += (((upper[j] - lower[j]) / 2.0).ln() + log_one_minus_tanh_sq(f.mean[j] + std * eps[j])) / m;
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            // The min takes the unclipped branch: d/dθ = A·ρ·d logp/dθ.
            let g_logp = if unclipped <= clipped { -a * ratio / m } else { 0.0 };
            for j in 0..na {
                let inv_var = (-2.0 * f.log_std[j]).exp();
                let diff = u[j] - f.mean[j];
                d_mean[j] = g_logp * diff * inv_var;
                d_log_std[j] += g_logp * (diff * diff * inv_var - 1.0);
                if upper[j] > lower[j] && coeffs.entropy_coeff != 0.0 {
                    // d/dx ln(1 − tanh²x) = −2·tanh x.
                    let std = f.log_std[j].exp();
                    let dj = -2.0 * (f.mean[j] + std * eps[j]).tanh() / m;
                    d_mean[j] -= coeffs.entropy_coeff * dj;
                    d_log_std[j] -= coeffs.entropy_coeff * dj * std * eps[j];
                }
            }
            let d_value = coeffs.value_coeff * 2.0 * err / m;
            net.backward(&mut cache, &d_mean, d_value, g);
        }
    }
    parts.entropy = gaussian_entropy(net.log_std()) + log_jac;
    if let Some(g) = grad {
        for j in 0..na {
            g[ls_off + j] += d_log_std[j] - coeffs.entropy_coeff;
        }
    }
    parts.total = parts.policy + coeffs.value_coeff * parts.value - coeffs.entropy_coeff * parts.entropy;
    parts
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], steps: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.steps = self.steps.saturating_add(1);
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Scale `grad` so its Euclidean norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Shift and scale to mean 0 and standard deviation 1 (std floored at 1e-8).
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateSettings {
    pub coeffs: LossCoeffs,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub max_grad_norm: f64,
}

/// Mean loss terms over every minibatch of an update.
pub type UpdateStats = LossParts;

/// `epochs` sweeps of shuffled minibatches over `batch`, one optimizer step
/// per minibatch. Advantages are normalized over the batch first.
pub fn ppo_update<R: Rng>(
    net: &mut Network,
    adam: &mut Adam,
    batch: &Batch,
    lower: &[f64],
    upper: &[f64],
    settings: UpdateSettings,
    rng: &mut R,
) -> Result<UpdateStats, PpoError> {
    if batch.is_empty() {
        return Err(PpoError::Shape("empty batch".into()));
    }
    if batch.obs_dim != net.obs_dim() || batch.action_dim != net.action_dim() {
        return Err(PpoError::Shape(format!(
            "batch is {}→{}, network is {}→{}",
            batch.obs_dim,
            batch.action_dim,
            net.obs_dim(),
            net.action_dim()
        )));
    }
    let mut normalized = batch.clone();
    normalize(&mut normalized.advantage);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut grad = vec![0.0; net.param_count()];
    let mut sum = LossParts::default();
    let mut count = 0usize;
    for _ in 0..settings.epochs {
        order.shuffle(rng);
        for idx in order.chunks(settings.minibatch_size.max(1)) {
            grad.fill(0.0);
            let parts = loss_and_grad(net, &normalized, idx, lower, upper, settings.coeffs, Some(&mut grad));
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(PpoError::NonFinite(format!(
                    "policy {} value {} entropy {} after {count} minibatches",
                    parts.policy, parts.value, parts.entropy
                )));
            }
            clip_grad_norm(&mut grad, settings.max_grad_norm);
            adam.step(&mut net.params, &grad);
            sum.policy += parts.policy;
            sum.value += parts.value;
            sum.entropy += parts.entropy;
            sum.total += parts.total;
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    Ok(LossParts { policy: sum.policy / n, value: sum.value / n, entropy: sum.entropy / n, total: sum.total / n })
}
