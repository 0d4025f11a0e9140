//! Decision rules that drive an [`Environment`] through an episode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{step_violations, EnvError, Environment, EpisodeLog};
use crate::model::{ActionVector, ValidatedSystem};

/// Absolute tolerance of the safety check run on every rollout step.
pub const SAFETY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("policy failed at step {t}: {source}")]
    Policy {
        t: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub trait Policy {
    /// Raw action for the current state of `env`. The environment projects it.
    fn act(&mut self, env: &Environment) -> Result<ActionVector, Box<dyn std::error::Error + Send + Sync>>;

    /// Optional per-step column the policy adds to the episode log.
    fn extra_column(&mut self) -> Option<(String, Vec<f64>)> {
        None
    }
}

/// Uniform raw actions over the static action box.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl RandomPolicy {
    pub fn new(system: &ValidatedSystem, seed: u64) -> Self {
        let (lower, upper) = system.static_action_box();
        RandomPolicy { rng: ChaCha8Rng::seed_from_u64(seed), lower, upper }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, env: &Environment) -> Result<ActionVector, Box<dyn std::error::Error + Send + Sync>> {
        let flat: Vec<f64> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &h)| if h > l { self.rng.random_range(l..=h) } else { l })
            .collect();
        Ok(ActionVector::from_flat(env.system().layout(), &flat))
    }
}

/// Batteries idle, renewables at full availability, controllables at the
/// point of their range nearest zero, no long-term sale.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdlePolicy;

impl Policy for IdlePolicy {
    fn act(&mut self, env: &Environment) -> Result<ActionVector, Box<dyn std::error::Error + Send + Sync>> {
        let system = env.system();
        let t = env.state().t;
        let mut a = ActionVector::zeros(system.layout());
        a.renewable_setpoint.clone_from(&env.state().revealed.avail);
        for (x, c) in a.controllable_setpoint.iter_mut().zip(&system.controllables) {
            *x = 0.0f64.clamp(c.inject_min[t], c.inject_max[t]);
        }
        Ok(a)
    }
}

/// A finished episode with the safety check of every step.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub log: EpisodeLog,
    /// Bound violations beyond [`SAFETY_TOL`], as `(step, description)`.
    pub violations: Vec<(usize, String)>,
}

/// Run `policy` from the current state of `env` to the end of the horizon.
pub fn rollout(policy: &mut dyn Policy, env: &mut Environment) -> Result<Rollout, RolloutError> {
    let mut violations = Vec::new();
    while !env.is_done() {
        let before = env.state().clone();
        let raw = policy.act(env).map_err(|source| RolloutError::Policy { t: before.t, source })?;
        let out = env.step(&raw)?;
        for v in step_violations(env.system(), &before, &out, SAFETY_TOL) {
            violations.push((before.t, v));
        }
    }
    let mut log = env.log();
    log.extra_column = policy.extra_column();
    Ok(Rollout { log, violations })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::exogenous::ExogenousTrace;
    use crate::model::{load_config, validate};

    fn setup() -> Environment {
        let doc = r#"{
            "time": {"horizon_steps": 6, "step_duration": 1.0},
            "batteries": [{"name": "b", "soc_min": 0.0, "soc_max": 100.0, "charge_max": 50.0,
                "discharge_max": 50.0, "eta_charge": 0.9, "eta_discharge": 0.9, "initial_soc": 50.0}],
            "renewables": [{"name": "pv", "nameplate": 80.0}],
            "controllables": [{"name": "load", "inject_min": -30.0, "inject_max": -10.0}]
        }"#;
        let system = Arc::new(validate(&load_config(doc).unwrap()).unwrap());
        let trace = ExogenousTrace {
            renewable_names: vec!["pv".into()],
            rt_price: vec![30.0; 6],
            avail: vec![vec![40.0; 6]],
            lt_price: None,
            lt_cap: None,
        };
        Environment::new(system, Arc::new(trace)).unwrap()
    }

    #[test]
    fn idle_policy_sells_availability_and_serves_minimum_load() {
        let mut env = setup();
        let run = rollout(&mut IdlePolicy, &mut env).unwrap();
        assert!(run.violations.is_empty());
        for r in &run.log.records {
            assert_eq!(r.applied_action.battery_power[0], 0.0);
            assert_eq!(r.applied_action.renewable_setpoint[0], 40.0);
            assert_eq!(r.applied_action.controllable_setpoint[0], -10.0);
            assert_eq!(r.rt_quantity, 30.0);
        }
    }

    #[test]
    fn random_policy_is_seeded() {
        let system = setup().system().clone();
        let mut a = setup();
        let mut b = setup();
        let ra = rollout(&mut RandomPolicy::new(&system, 3), &mut a).unwrap();
        let rb = rollout(&mut RandomPolicy::new(&system, 3), &mut b).unwrap();
        assert_eq!(ra.log.to_csv_string(&system), rb.log.to_csv_string(&system));
        assert!(ra.violations.is_empty());
    }
}
