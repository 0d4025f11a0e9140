//! Rollout collection, the training loop and the deployed policy.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::dist::{log_prob, squash};
use super::file::PolicyParams;
use super::net::Network;
use super::obs::{obs_dim, ScalerBuilder};
use super::update::{ppo_update, Adam, Batch, LossCoeffs, UpdateSettings};
use super::{PpoConfig, PpoError};
use crate::env::{step_violations, Environment};
use crate::exogenous::{ExogenousSpec, ExogenousTrace};
use crate::harness::default_grid;
use crate::model::{ActionVector, ValidatedSystem};
use crate::oracle::{solve_expost, value_gap, OracleConfig, OraclePlan};
use crate::policy::{Policy, SAFETY_TOL};

pub const CURVE_HEADER: &str = "iteration,env_steps,mean_reward,oracle_ratio,policy_loss,value_loss,entropy";

/// One row of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRecord {
    pub iteration: usize,
    /// Training steps taken so far.
    pub env_steps: usize,
    /// Mean total reward of this iteration's training episodes.
    pub mean_reward: f64,
    /// Mean oracle ratio of the deterministic policy on the evaluation traces.
    pub oracle_ratio: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

impl CurveRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration,
            self.env_steps,
            self.mean_reward,
            self.oracle_ratio,
            self.policy_loss,
            self.value_loss,
            self.entropy
        )
    }
}

pub fn curve_csv(curve: &[CurveRecord]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for r in curve {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyParams,
    pub curve: Vec<CurveRecord>,
    pub env_steps: usize,
    /// Safety-check failures over every training step.
    pub violations: usize,
    /// Oracle ratio of the final policy on each evaluation trace.
    pub final_ratios: Vec<f64>,
}

struct EpisodeData {
    obs: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    eps: Vec<Vec<f64>>,
    logp: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    violations: usize,
}

fn sample_episode(
    system: &Arc<ValidatedSystem>,
    policy: &PolicyParams,
    trace: Arc<ExogenousTrace>,
    noise_seed: u64,
) -> Result<EpisodeData, PpoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut env = Environment::new(system.clone(), trace)?.without_log();
    let n = system.horizon;
    let mut ep = EpisodeData {
        obs: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        eps: Vec::with_capacity(n),
        logp: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        violations: 0,
    };
    while !env.is_done() {
        let before = env.state().clone();
        let obs = policy.observe(system, &before);
        let f = policy.forward(&obs)?;
        let eps: Vec<f64> = (0..f.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        let u: Vec<f64> = f.mean.iter().zip(&f.log_std).zip(&eps).map(|((m, s), e)| m + s.exp() * e).collect();
        let a = squash(&u, &policy.lower, &policy.upper);
        let out = env.step(&ActionVector::from_flat(system.layout(), &a))?;
        ep.violations += step_violations(system, &before, &out, SAFETY_TOL).len();
        ep.logp.push(log_prob(&u, &f.mean, &f.log_std, &policy.lower, &policy.upper));
        ep.obs.push(obs);
        ep.u.push(u);
        ep.eps.push(eps);
        ep.values.push(f.value);
        ep.rewards.push(out.reward);
    }
    Ok(ep)
}

/// A trained policy acting through the squash. By default it takes the mean
/// action; [`PpoPolicy::sampling`] draws from the full distribution.
#[derive(Debug, Clone)]
pub struct PpoPolicy {
    params: Arc<PolicyParams>,
    noise: Option<ChaCha8Rng>,
}

impl PpoPolicy {
    pub fn new(params: Arc<PolicyParams>, system: &ValidatedSystem) -> Result<Self, PpoError> {
        params.check_system(system)?;
        Ok(PpoPolicy { params, noise: None })
    }

    pub fn sampling(params: Arc<PolicyParams>, system: &ValidatedSystem, seed: u64) -> Result<Self, PpoError> {
        params.check_system(system)?;
        Ok(PpoPolicy { params, noise: Some(ChaCha8Rng::seed_from_u64(seed)) })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}

impl Policy for PpoPolicy {
    fn act(&mut self, env: &Environment) -> Result<ActionVector, Box<dyn std::error::Error + Send + Sync>> {
        let p = &self.params;
        let f = p.forward(&p.observe(env.system(), env.state()))?;
        let u: Vec<f64> = match &mut self.noise {
            None => f.mean,
            Some(rng) => f
                .mean
                .iter()
                .zip(&f.log_std)
                .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        let a = squash(&u, &p.lower, &p.upper);
        Ok(ActionVector::from_flat(env.system().layout(), &a))
    }
}

fn evaluate(
    system: &Arc<ValidatedSystem>,
    params: &Arc<PolicyParams>,
    traces: &[Arc<ExogenousTrace>],
    plans: &[OraclePlan],
) -> Result<Vec<f64>, PpoError> {
    traces
        .iter()
        .zip(plans)
        .map(|(trace, plan)| {
            let mut env = Environment::new(system.clone(), trace.clone())?;
            let mut policy = PpoPolicy::new(params.clone(), system)?;
            while !env.is_done() {
                let a = policy.act(&env).map_err(|e| PpoError::Shape(e.to_string()))?;
                env.step(&a)?;
            }
            Ok(value_gap(plan, &env.log())?.ratio().unwrap_or(f64::NAN))
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Train a policy on fresh traces drawn from `exo`, scoring each iteration
/// on the traces of `eval_seeds` against the ex-post oracle. Training trace
/// seeds never coincide with an evaluation seed.
pub fn train(
    system: &Arc<ValidatedSystem>,
    exo: &ExogenousSpec,
    eval_seeds: &[u64],
    cfg: &PpoConfig,
) -> Result<TrainOutcome, PpoError> {
    cfg.validate()?;
    let horizon = system.horizon;
    let na = system.layout().dim();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PpoError::Config(e.to_string()))?;

    let eval_traces: Vec<Arc<ExogenousTrace>> =
        eval_seeds.iter().map(|&s| exo.generate(system, s).map(Arc::new)).collect::<Result<_, _>>()?;
    let oracle_cfg = OracleConfig::uniform(cfg.eval_grid.unwrap_or_else(|| default_grid(system.batteries.len())));
    let plans: Vec<OraclePlan> = pool.install(|| {
        eval_traces.par_iter().map(|t| solve_expost(system, t, &oracle_cfg)).collect::<Result<_, _>>()
    })?;
    let held_out: HashSet<u64> = eval_seeds.iter().copied().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = Network::init(obs_dim(system), &cfg.hidden, na, cfg.init_log_std, &mut rng)?;
    let (lower, upper) = system.static_action_box();
    let mut adam = Adam::new(net.param_count(), cfg.learning_rate);
    let mut policy = PolicyParams { net, scaler: ScalerBuilder::default().freeze(), lower, upper, reward_scale: 1.0 };
    let mut reward_frozen = false;

    let settings = UpdateSettings {
        coeffs: LossCoeffs { clip_eps: cfg.clip_eps, value_coeff: cfg.value_coeff, entropy_coeff: cfg.entropy_coeff },
        epochs: cfg.epochs_per_batch,
        minibatch_size: cfg.minibatch_size,
        max_grad_norm: cfg.max_grad_norm,
    };
    let episodes_per_iter = cfg.rollout_steps.div_ceil(horizon).max(1);
    let draw_seed = |rng: &mut ChaCha8Rng| loop {
        let s = rng.random::<u64>();
        if !held_out.contains(&s) {
            break s;
        }
    };

    // Observation statistics come from one batch of warm-up traces and are
    // frozen before the first action.
    let mut sb = ScalerBuilder::default();
    for _ in 0..episodes_per_iter {
        let tr = exo.generate(system, draw_seed(&mut rng))?;
        for t in 0..horizon {
            let (lp, lc) = tr.lt_terms(system, t);
            sb.push(tr.sample(t).rt_price, lp, lc);
        }
    }
    policy.scaler = sb.freeze();
    let mut curve = Vec::new();
    let mut env_steps = 0;
    let mut violations = 0;
    let mut iteration = 0;

    loop {
        let episodes = episodes_per_iter.min((cfg.total_env_steps - env_steps) / horizon);
        if episodes == 0 {
            break;
        }
        let seeds: Vec<(u64, u64)> = (0..episodes).map(|_| (draw_seed(&mut rng), rng.random::<u64>())).collect();
        let traces: Vec<Arc<ExogenousTrace>> =
            seeds.iter().map(|&(s, _)| exo.generate(system, s).map(Arc::new)).collect::<Result<_, _>>()?;

        let frozen = Arc::new(policy.clone());
        let data: Vec<EpisodeData> = pool.install(|| {
            traces
                .par_iter()
                .zip(&seeds)
                .map(|(tr, &(_, noise))| sample_episode(system, &frozen, tr.clone(), noise))
                .collect::<Result<_, _>>()
        })?;

        if !reward_frozen {
            let all: Vec<f64> = data.iter().flat_map(|e| e.rewards.iter().copied()).collect();
            let m = mean(&all);
            let std = (all.iter().map(|r| (r - m).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
            policy.reward_scale = if std > 1e-12 { std } else { 1.0 };
            reward_frozen = true;
        }

        let mut batch = Batch::new(obs_dim(system), na);
        for ep in &data {
            let rewards: Vec<f64> = ep.rewards.iter().map(|r| r / policy.reward_scale).collect();
            let mut values = ep.values.clone();
            values.push(0.0);
            let adv = super::gae(&rewards, &values, cfg.gamma, cfg.gae_lambda)?;
            for t in 0..rewards.len() {
                batch.push(&ep.obs[t], &ep.u[t], &ep.eps[t], ep.logp[t], adv[t], adv[t] + values[t]);
            }
            violations += ep.violations;
        }
        env_steps += batch.len();
        let stats = ppo_update(&mut policy.net, &mut adam, &batch, &policy.lower, &policy.upper, settings, &mut rng)?;

        let ratios = evaluate(system, &Arc::new(policy.clone()), &eval_traces, &plans)?;
        curve.push(CurveRecord {
            iteration,
            env_steps,
            mean_reward: mean(&data.iter().map(|e| e.rewards.iter().sum::<f64>()).collect::<Vec<_>>()),
            oracle_ratio: if ratios.is_empty() { f64::NAN } else { mean(&ratios) },
            policy_loss: stats.policy,
            value_loss: stats.value,
            entropy: stats.entropy,
        });
        iteration += 1;
    }

    let final_ratios = evaluate(system, &Arc::new(policy.clone()), &eval_traces, &plans)?;
    Ok(TrainOutcome { policy, curve, env_steps, violations, final_ratios })
}
