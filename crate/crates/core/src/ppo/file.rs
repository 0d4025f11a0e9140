//! A trained policy and its JSON file format.
//!
//! The file stores the network shapes, each layer row-major, the log-std
//! vector, the frozen observation scaler and the squash box. Floats are
//! written with round-trip precision, so a loaded policy reproduces the
//! forward pass bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Forward, Network};
use super::obs::{obs_dim, observe, ObsScaler};
use super::PpoError;
use crate::io::write_atomic;
use crate::model::{SystemState, ValidatedSystem};

const FORMAT: &str = "gridmkt-ppo-policy";
const VERSION: u32 = 1;

/// Network, observation scaling and squash box of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub net: Network,
    pub scaler: ObsScaler,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Divisor applied to rewards during training.
    pub reward_scale: f64,
}

impl PolicyParams {
    pub fn forward(&self, obs: &[f64]) -> Result<Forward, PpoError> {
        self.net.forward(obs)
    }

    pub fn observe(&self, system: &ValidatedSystem, state: &SystemState) -> Vec<f64> {
        observe(system, &self.scaler, state)
    }

    /// Error unless the policy's observation and action sizes fit `system`.
    pub fn check_system(&self, system: &ValidatedSystem) -> Result<(), PpoError> {
        let (od, ad) = (obs_dim(system), system.layout().dim());
        if self.net.obs_dim() != od || self.net.action_dim() != ad {
            return Err(PpoError::Shape(format!(
                "policy maps {} observations to {} actions, system needs {od} and {ad}",
                self.net.obs_dim(),
                self.net.action_dim()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = PolicyDoc {
            format: FORMAT.into(),
            version: VERSION,
            obs_dim: self.net.obs_dim(),
            action_dim: self.net.action_dim(),
            hidden: self.net.hidden().to_vec(),
            layers: self
                .net
                .blocks()
                .into_iter()
                .map(|(name, shape, w, b)| LayerDoc { name, shape, weights: w.to_vec(), bias: b.to_vec() })
                .collect(),
            log_std: self.net.log_std().to_vec(),
            scaler: self.scaler,
            action_lower: self.lower.clone(),
            action_upper: self.upper.clone(),
            reward_scale: self.reward_scale,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("policy serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PpoError> {
        let doc: PolicyDoc = serde_json::from_str(text).map_err(|e| PpoError::File(e.to_string()))?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(PpoError::File(format!("expected {FORMAT} version {VERSION}, got {} version {}", doc.format, doc.version)));
        }
        let mut net = Network::zeros(doc.obs_dim, &doc.hidden, doc.action_dim)?;
        let expected = net.blocks();
        if doc.layers.len() != expected.len() {
            return Err(PpoError::Shape(format!("{} layers stored, {} expected", doc.layers.len(), expected.len())));
        }
        let shapes: Vec<(String, [usize; 2])> = expected.into_iter().map(|(n, s, _, _)| (n, s)).collect();
        for (i, (layer, (name, shape))) in doc.layers.iter().zip(&shapes).enumerate() {
            if &layer.name != name || &layer.shape != shape {
                return Err(PpoError::Shape(format!(
                    "layer {i} is {} {:?}, expected {name} {shape:?}",
                    layer.name, layer.shape
                )));
            }
            net.set_block(i, &layer.weights, &layer.bias)?;
        }
        if doc.log_std.len() != doc.action_dim
            || doc.action_lower.len() != doc.action_dim
            || doc.action_upper.len() != doc.action_dim
        {
            return Err(PpoError::Shape(format!("log_std and action box need {} entries", doc.action_dim)));
        }
        let off = net.log_std_offset();
        net.params[off..].copy_from_slice(&doc.log_std);
        if net.params.iter().any(|p| !p.is_finite()) || !(doc.reward_scale > 0.0) {
            return Err(PpoError::File("non-finite parameter or reward scale".into()));
        }
        if doc.action_lower.iter().zip(&doc.action_upper).any(|(l, h)| !(l <= h)) {
            return Err(PpoError::File("action box has lower > upper".into()));
        }
        for s in [doc.scaler.rt_price, doc.scaler.lt_price, doc.scaler.lt_cap] {
            if !(s.mean.is_finite() && s.std > 0.0 && s.std.is_finite()) {
                return Err(PpoError::File("scaler statistics must be finite with positive std".into()));
            }
        }
        Ok(PolicyParams {
            net,
            scaler: doc.scaler,
            lower: doc.action_lower,
            upper: doc.action_upper,
            reward_scale: doc.reward_scale,
        })
    }
}

pub fn save_policy(path: &Path, policy: &PolicyParams) -> Result<(), PpoError> {
    Ok(write_atomic(path, policy.to_json().as_bytes())?)
}

pub fn load_policy(path: &Path) -> Result<PolicyParams, PpoError> {
    let text = std::fs::read_to_string(path)?;
    PolicyParams::from_json(&text)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    format: String,
    version: u32,
    obs_dim: usize,
    action_dim: usize,
    hidden: Vec<usize>,
    layers: Vec<LayerDoc>,
    log_std: Vec<f64>,
    scaler: ObsScaler,
    action_lower: Vec<f64>,
    action_upper: Vec<f64>,
    reward_scale: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    name: String,
    /// `[outputs, inputs]`.
    shape: [usize; 2],
    weights: Vec<f64>,
    bias: Vec<f64>,
}
