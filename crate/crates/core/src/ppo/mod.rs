//! Proximal policy optimization over the dispatch environment.
//!
//! The policy samples a pre-squash Gaussian action `u`, squashes it into the
//! static action box with `tanh`, and hands the result to the environment,
//! which projects it onto the state-dependent feasible set. Gradients are
//! exact backpropagation through [`net::Network`].

pub mod dist;
pub mod file;
pub mod net;
pub mod obs;
pub mod train;
pub mod update;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::exogenous::ExoError;
use crate::oracle::OracleError;

pub use dist::{gae, log_prob, squash};
pub use file::{load_policy, save_policy, PolicyParams};
pub use net::{Forward, Network};
pub use obs::{observe, ObsScaler};
pub use train::{curve_csv, train, CurveRecord, PpoPolicy, TrainOutcome, CURVE_HEADER};
pub use update::{ppo_update, Adam, Batch, LossParts};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error("invalid PPO configuration: {0}")]
    Config(String),
    #[error("invalid policy file: {0}")]
    File(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Exogenous(#[from] ExoError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub epochs_per_batch: usize,
    pub minibatch_size: usize,
    /// Environment steps collected per update, rounded up to whole episodes.
    pub rollout_steps: usize,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    pub max_grad_norm: f64,
    /// Training budget. Evaluation episodes are not counted.
    pub total_env_steps: usize,
    pub seed: u64,
    /// Trunk widths.
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Rollout threads. Results do not depend on this.
    pub workers: usize,
    /// SOC lattice size of the oracle that scores evaluation episodes;
    /// `None` picks the harness default for the system.
    pub eval_grid: Option<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 3e-4,
            epochs_per_batch: 10,
            minibatch_size: 64,
            rollout_steps: 2048,
            entropy_coeff: 0.0,
            value_coeff: 0.5,
            max_grad_norm: 0.5,
            total_env_steps: 500_000,
            seed: 0,
            hidden: vec![64, 64],
            init_log_std: 0.0,
            workers: 1,
            eval_grid: None,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let fail = |m: &str| Err(PpoError::Config(m.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return fail("clip_eps must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and nonnegative");
        }
        if self.epochs_per_batch == 0 || self.minibatch_size == 0 || self.rollout_steps == 0 {
            return fail("epochs_per_batch, minibatch_size and rollout_steps must be positive");
        }
        if !(self.value_coeff >= 0.0 && self.entropy_coeff.is_finite() && self.max_grad_norm > 0.0) {
            return fail("value_coeff must be nonnegative, entropy_coeff finite, max_grad_norm positive");
        }
        if !self.init_log_std.is_finite() {
            return fail("init_log_std must be finite");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden widths must be positive");
        }
        if self.workers == 0 {
            return fail("workers must be positive");
        }
        if self.eval_grid.is_some_and(|g| g < 2) {
            return fail("eval_grid must be at least 2");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_bad_values_do_not() {
        PpoConfig::default().validate().unwrap();
        let bad = [
            PpoConfig { clip_eps: 1.0, ..Default::default() },
            PpoConfig { gamma: 1.5, ..Default::default() },
            PpoConfig { minibatch_size: 0, ..Default::default() },
            PpoConfig { hidden: vec![], ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn config_json_fills_defaults_and_rejects_unknown_keys() {
        let cfg: PpoConfig = serde_json::from_str(r#"{"seed": 9, "hidden": [16]}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.clip_eps, 0.2);
        assert!(serde_json::from_str::<PpoConfig>(r#"{"lr": 1}"#).is_err());
    }
}
