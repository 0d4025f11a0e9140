//! Loading scenarios and running policies against the oracle.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::scenario::{PolicySpec, Scenario};
use crate::env::{EpisodeLog, Environment, RewardComponents};
use crate::exogenous::{load_trace, ExogenousTrace};
use crate::model::{load_config, validate, ConfigError, ValidatedSystem};
use crate::mpc::MpcPolicy;
use crate::oracle::{solve_expost, value_gap, OracleConfig, OraclePlan, ValueGap};
use crate::policy::{rollout, IdlePolicy, Policy, RandomPolicy};
use crate::ppo::{load_policy, PpoPolicy};

/// Failure classes of the harness, each with its exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    /// Malformed command line (exit code 1).
    #[error("{0}")]
    Usage(String),
    /// A configuration, trace or policy file that does not validate (exit code 2).
    #[error("{0}")]
    Validation(String),
    /// A failure while running (exit code 3).
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Validation(_) => 2,
            HarnessError::Runtime(_) => 3,
        }
    }
}

fn validation(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

/// A built-in scenario name, a scenario JSON file, or a bare system
/// configuration file (which gets default processes and roster).
pub fn load_scenario(arg: &str) -> Result<Scenario, HarnessError> {
    if let Some(s) = Scenario::builtin(arg) {
        return Ok(s);
    }
    let path = Path::new(arg);
    let text = std::fs::read_to_string(path).map_err(|e| {
        validation(format!("{arg:?} is neither a built-in scenario ({}) nor a readable file: {e}", Scenario::BUILTIN.join(", ")))
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| validation(ConfigError::Parse(format!("{arg}: {e}"))))?;
    if value.get("system").is_some() {
        serde_json::from_value(value).map_err(|e| validation(format!("{arg}: scenario schema error: {e}")))
    } else {
        let config = load_config(&text).map_err(|e| validation(format!("{arg}: {e}")))?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "custom".into());
        Ok(Scenario::from_system(&name, config))
    }
}

pub fn validate_scenario(scenario: &Scenario) -> Result<Arc<ValidatedSystem>, HarnessError> {
    if scenario.roster.is_empty() {
        return Err(validation("scenario roster is empty"));
    }
    validate(&scenario.system)
        .map(Arc::new)
        .map_err(|v| validation(ConfigError::Invalid(v)))
}

/// SHA-256 of the system configuration and exogenous processes.
pub fn config_hash(scenario: &Scenario) -> String {
    let doc = serde_json::to_string(&(&scenario.system, &scenario.exogenous)).expect("scenario serializes");
    hex::encode(Sha256::digest(doc.as_bytes()))
}

/// Evaluation traces: either one file, or one generated trace per seed.
pub fn traces(
    scenario: &Scenario,
    system: &ValidatedSystem,
    trace_file: Option<&Path>,
    seeds: &[u64],
) -> Result<Vec<Arc<ExogenousTrace>>, HarnessError> {
    match trace_file {
        Some(p) => Ok(vec![Arc::new(load_trace(p, system).map_err(|e| validation(format!("{}: {e}", p.display())))?)]),
        None => seeds
            .iter()
            .map(|&s| scenario.exogenous.generate(system, s).map(Arc::new).map_err(validation))
            .collect(),
    }
}

/// Instantiate a roster entry. `seed` drives the random policy.
pub fn make_policy(spec: &PolicySpec, system: &ValidatedSystem, seed: u64) -> Result<Box<dyn Policy + Send>, HarnessError> {
    Ok(match spec {
        PolicySpec::Random => Box::new(RandomPolicy::new(system, seed)),
        PolicySpec::Idle => Box::new(IdlePolicy),
        PolicySpec::Mpc(m) => Box::new(MpcPolicy::new(m.config(system))),
        PolicySpec::Ppo(path) => {
            let params = load_policy(path).map_err(|e| validation(format!("{}: {e}", path.display())))?;
            Box::new(PpoPolicy::new(Arc::new(params), system).map_err(|e| validation(format!("{}: {e}", path.display())))?)
        }
    })
}

/// One policy on one trace.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub log: EpisodeLog,
    pub total: f64,
    pub components: RewardComponents,
    pub violations: usize,
    pub gap: Option<ValueGap>,
}

/// Run `spec` on `trace`, scored against `plan` when given.
pub fn run_one(
    spec: &PolicySpec,
    system: &Arc<ValidatedSystem>,
    trace: &Arc<ExogenousTrace>,
    seed: u64,
    plan: Option<&OraclePlan>,
) -> Result<RunResult, HarnessError> {
    let mut policy = make_policy(spec, system, seed)?;
    let mut env = Environment::new(system.clone(), trace.clone()).map_err(validation)?;
    let run = rollout(policy.as_mut(), &mut env).map_err(|e| runtime(format!("{spec}: {e}")))?;
    let gap = plan.map(|p| value_gap(p, &run.log)).transpose().map_err(runtime)?;
    Ok(RunResult {
        total: run.log.total_reward(),
        components: run.log.total_components(),
        violations: run.violations.len(),
        gap,
        log: run.log,
    })
}

pub fn solve_oracles(
    system: &ValidatedSystem,
    traces: &[Arc<ExogenousTrace>],
    grid: usize,
) -> Result<Vec<OraclePlan>, HarnessError> {
    let cfg = OracleConfig::uniform(grid);
    traces.par_iter().map(|t| solve_expost(system, t, &cfg).map_err(runtime)).collect()
}

/// Every roster policy on every trace, in roster-major order. Runs are
/// spread over the rayon pool; the result order does not depend on it.
pub fn run_roster(
    roster: &[PolicySpec],
    system: &Arc<ValidatedSystem>,
    traces: &[Arc<ExogenousTrace>],
    seeds: &[u64],
    plans: &[OraclePlan],
) -> Result<Vec<Vec<RunResult>>, HarnessError> {
    // Load every policy once up front so a bad file fails before any run.
    for spec in roster {
        make_policy(spec, system, 0)?;
    }
    let jobs: Vec<(usize, usize)> = (0..roster.len()).flat_map(|p| (0..traces.len()).map(move |k| (p, k))).collect();
    let results: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(p, k)| run_one(&roster[p], system, &traces[k], seeds.get(k).copied().unwrap_or(0), plans.get(k)))
        .collect::<Result<_, _>>()?;
    let mut it = results.into_iter();
    Ok(roster.iter().map(|_| it.by_ref().take(traces.len()).collect()).collect())
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
