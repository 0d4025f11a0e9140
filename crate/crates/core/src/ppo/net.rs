//! Actor-critic MLP: a shared tanh trunk feeding a linear mean head and a
//! linear value head, plus a state-independent log-std vector.
//!
//! All parameters live in one flat vector. Each affine layer stores its
//! weights row-major (`out × in`) followed by its bias.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::PpoError;

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Affine {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl Affine {
    fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.outputs * self.inputs]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.outputs * self.inputs;
        &params[start..start + self.outputs]
    }

    fn apply(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        let w = self.weights(params);
        out.clear();
        out.extend_from_slice(self.bias(params));
        for (o, row) in out.iter_mut().zip(w.chunks_exact(self.inputs)) {
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulate parameter gradients for `dy` at input `x` and write the
    /// input gradient to `dx` when given.
    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut Vec<f64>>) {
        let nw = self.outputs * self.inputs;
        let (gw, gb) = grad[self.offset..self.offset + self.len()].split_at_mut(nw);
        for ((row, gbi), &d) in gw.chunks_exact_mut(self.inputs).zip(gb.iter_mut()).zip(dy) {
            *gbi += d;
            if d != 0.0 {
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(self.inputs, 0.0);
            for (row, &d) in self.weights(params).chunks_exact(self.inputs).zip(dy) {
                if d != 0.0 {
                    for (g, &w) in dx.iter_mut().zip(row) {
                        *g += d * w;
                    }
                }
            }
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    /// `acts[0]` is the input, `acts[l + 1]` the tanh output of trunk layer `l`.
    acts: Vec<Vec<f64>>,
    scratch: Vec<f64>,
    delta: Vec<f64>,
}

/// Shapes and parameters of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    obs_dim: usize,
    action_dim: usize,
    hidden: Vec<usize>,
    trunk: Vec<Affine>,
    mean_head: Affine,
    value_head: Affine,
    log_std_offset: usize,
    pub params: Vec<f64>,
}

impl Network {
    /// All-zero parameters.
    pub fn zeros(obs_dim: usize, hidden: &[usize], action_dim: usize) -> Result<Self, PpoError> {
        if obs_dim == 0 || action_dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(PpoError::Shape(format!(
                "network needs positive sizes, got obs {obs_dim}, hidden {hidden:?}, actions {action_dim}"
            )));
        }
        let mut offset = 0;
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut inputs = obs_dim;
        for &h in hidden {
            let layer = Affine { inputs, outputs: h, offset };
            offset += layer.len();
            trunk.push(layer);
            inputs = h;
        }
        let mean_head = Affine { inputs, outputs: action_dim, offset };
        offset += mean_head.len();
        let value_head = Affine { inputs, outputs: 1, offset };
        offset += value_head.len();
        let log_std_offset = offset;
        offset += action_dim;
        Ok(Network {
            obs_dim,
            action_dim,
            hidden: hidden.to_vec(),
            trunk,
            mean_head,
            value_head,
            log_std_offset,
            params: vec![0.0; offset],
        })
    }

    /// Gaussian fan-in initialization. The mean head starts near zero so the
    /// initial policy is centred on the middle of the action box, and the
    /// log-std starts at `init_log_std`.
    pub fn init<R: Rng>(
        obs_dim: usize,
        hidden: &[usize],
        action_dim: usize,
        init_log_std: f64,
        rng: &mut R,
    ) -> Result<Self, PpoError> {
        let mut net = Self::zeros(obs_dim, hidden, action_dim)?;
        let layers: Vec<(Affine, f64)> = net
            .trunk
            .iter()
            .map(|&l| (l, 1.0))
            .chain([(net.mean_head, 0.01), (net.value_head, 1.0)])
            .collect();
        for (layer, gain) in layers {
            let normal = Normal::new(0.0, gain / (layer.inputs as f64).sqrt()).expect("positive std");
            let nw = layer.outputs * layer.inputs;
            for w in &mut net.params[layer.offset..layer.offset + nw] {
                *w = normal.sample(rng);
            }
        }
        let off = net.log_std_offset;
        net.params[off..].fill(init_log_std);
        Ok(net)
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.params[self.log_std_offset..]
    }

    pub(crate) fn log_std_offset(&self) -> usize {
        self.log_std_offset
    }

    /// Named `(shape, weights, bias)` blocks in storage order, for files.
    pub fn blocks(&self) -> Vec<(String, [usize; 2], &[f64], &[f64])> {
        self.trunk
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("trunk{i}"), *l))
            .chain([("mean".to_string(), self.mean_head), ("value".to_string(), self.value_head)])
            .map(|(name, l)| (name, [l.outputs, l.inputs], l.weights(&self.params), l.bias(&self.params)))
            .collect()
    }

    /// Overwrite the parameters of block `index` (in [`Network::blocks`] order).
    pub(crate) fn set_block(&mut self, index: usize, weights: &[f64], bias: &[f64]) -> Result<(), PpoError> {
        let layer = match index {
            i if i < self.trunk.len() => self.trunk[i],
            i if i == self.trunk.len() => self.mean_head,
            i if i == self.trunk.len() + 1 => self.value_head,
            _ => return Err(PpoError::Shape(format!("no layer {index}"))),
        };
        if weights.len() != layer.outputs * layer.inputs || bias.len() != layer.outputs {
            return Err(PpoError::Shape(format!(
                "layer {index} expects {}×{} weights and {} biases, got {} and {}",
                layer.outputs,
                layer.inputs,
                layer.outputs,
                weights.len(),
                bias.len()
            )));
        }
        let nw = weights.len();
        self.params[layer.offset..layer.offset + nw].copy_from_slice(weights);
        self.params[layer.offset + nw..layer.offset + layer.len()].copy_from_slice(bias);
        Ok(())
    }

    pub fn forward(&self, obs: &[f64]) -> Result<Forward, PpoError> {
        if obs.len() != self.obs_dim {
            return Err(PpoError::Shape(format!("observation has {} entries, network expects {}", obs.len(), self.obs_dim)));
        }
        let mut cache = Cache::default();
        Ok(self.forward_cached(obs, &mut cache))
    }

    /// Forward pass keeping activations in `cache`. `obs` must have length
    /// `obs_dim`.
    pub(crate) fn forward_cached(&self, obs: &[f64], cache: &mut Cache) -> Forward {
        debug_assert_eq!(obs.len(), self.obs_dim);
        cache.acts.resize_with(self.trunk.len() + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(obs);
        for (l, layer) in self.trunk.iter().enumerate() {
            let (done, rest) = cache.acts.split_at_mut(l + 1);
            layer.apply(&self.params, &done[l], &mut rest[0]);
            for v in rest[0].iter_mut() {
                *v = v.tanh();
            }
        }
        let top = &cache.acts[self.trunk.len()];
        let mut mean = Vec::with_capacity(self.action_dim);
        self.mean_head.apply(&self.params, top, &mut mean);
        let mut value = Vec::with_capacity(1);
        self.value_head.apply(&self.params, top, &mut value);
        Forward { mean, log_std: self.log_std().to_vec(), value: value[0] }
    }

    /// Accumulate into `grad` the gradient of a loss whose derivatives with
    /// respect to the mean head and the value output are `d_mean` and
    /// `d_value`, at the activations in `cache`. The log-std gradient is the
    /// caller's, since it does not pass through the trunk.
    pub(crate) fn backward(&self, cache: &mut Cache, d_mean: &[f64], d_value: f64, grad: &mut [f64]) {
        let depth = self.trunk.len();
        let Cache { acts, scratch, delta } = cache;
        let top = &acts[depth];
        self.mean_head.backward(&self.params, top, d_mean, grad, Some(delta));
        self.value_head.backward(&self.params, top, &[d_value], grad, Some(scratch));
        for (d, s) in delta.iter_mut().zip(scratch.iter()) {
            *d += s;
        }
        for l in (0..depth).rev() {
            // Through the tanh: d/dz = d/dh · (1 − h²).
            for (d, &h) in delta.iter_mut().zip(&acts[l + 1]) {
                *d *= 1.0 - h * h;
            }
            let dx = if l > 0 { Some(&mut *scratch) } else { None };
            self.trunk[l].backward(&self.params, &acts[l], delta, grad, dx);
            if l > 0 {
                std::mem::swap(delta, scratch);
            }
        }
    }
}
