//! Ex-post optimal dispatch: the best achievable reward on a realized trace
//! when every future price and availability is known in advance.
//!
//! [`solve_expost`] runs backward DP over SOC lattices ([`dp`]) with the
//! non-battery decisions of each step optimized exactly ([`dispatch`]), then
//! rolls the greedy policy forward through the environment so the reported
//! value is a realized episode reward. [`enumerate_expost`] searches every
//! lattice path exhaustively and exists to cross-check the DP.

pub mod dispatch;
pub mod dp;
mod enumerate;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Environment, EpisodeLog};
use crate::exogenous::ExogenousTrace;
use crate::model::{ActionVector, ValidatedSystem};
use dp::{DpSolution, StepData};

pub use enumerate::{enumerate_expost, ENUMERATION_BUDGET};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle configuration: {0}")]
    Config(String),
    #[error("memory cap exceeded: {0}")]
    MemoryCap(String),
    #[error("no feasible plan: {0}")]
    Infeasible(String),
    #[error("enumeration budget exceeded: {0}")]
    Budget(String),
    #[error("episode ran on trace {episode}, plan on trace {plan}")]
    TraceMismatch { plan: String, episode: String },
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Nearest,
    #[default]
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Lattice points per battery; a single entry applies to every battery.
    pub soc_grid_points: Vec<usize>,
    /// Lattice points per battery for [`enumerate_expost`].
    pub action_grid_points: usize,
    /// Readout rule for [`ValueTable::value_at`] off the lattice.
    pub interpolation: Interpolation,
}

impl OracleConfig {
    pub fn uniform(points: usize) -> Self {
        OracleConfig { soc_grid_points: vec![points], action_grid_points: points, interpolation: Interpolation::Linear }
    }

    pub fn grid_for(&self, system: &ValidatedSystem) -> Result<Vec<usize>, OracleError> {
        let nb = system.batteries.len();
        let grid = match self.soc_grid_points.len() {
            1 => vec![self.soc_grid_points[0]; nb],
            n if n == nb => self.soc_grid_points.clone(),
            n => return Err(OracleError::Config(format!("{n} grid sizes for {nb} batteries"))),
        };
        if grid.iter().any(|&g| g < 2) {
            return Err(OracleError::Config("soc_grid_points must be ≥ 2".into()));
        }
        Ok(grid)
    }
}

/// Per-step data of a whole trace in canonical units.
pub fn step_data(system: &ValidatedSystem, trace: &ExogenousTrace) -> Vec<StepData> {
    (0..system.horizon)
        .map(|t| {
            let (lt_price, lt_cap) = trace.lt_terms(system, t);
            StepData { sample: trace.sample(t), lt_price, lt_cap }
        })
        .collect()
}

/// Value-to-go tables of a solved trace.
#[derive(Debug, Clone)]
pub struct ValueTable {
    solution: DpSolution,
}

impl ValueTable {
    pub fn lattice(&self) -> &dp::Lattice {
        &self.solution.lattice
    }

    /// Value-to-go at instant `t` (`0..=T`) for an arbitrary SOC vector.
    pub fn value_at(&self, t: usize, soc: &[f64], interp: Interpolation) -> f64 {
        let k = t - self.solution.lattice.start;
        let layer = &self.solution.lattice.points[k];
        let values = &self.solution.values[k];
        // Per battery: (lower index, upper index, weight on upper).
        let brackets: Vec<(usize, usize, f64)> = layer
            .iter()
            .zip(soc)
            .map(|(pts, &s)| {
                let n = pts.len();
                let hi = pts.partition_point(|&x| x < s).min(n - 1);
                let lo = hi.saturating_sub(1);
                if lo == hi || pts[hi] == pts[lo] {
                    return (hi, hi, 0.0);
                }
                let w = ((s - pts[lo]) / (pts[hi] - pts[lo])).clamp(0.0, 1.0);
                match interp {
                    Interpolation::Linear => (lo, hi, w),
                    Interpolation::Nearest if w < 0.5 => (lo, lo, 0.0),
                    Interpolation::Nearest => (hi, hi, 0.0),
                }
            })
            .collect();
        let nb = brackets.len();
        let mut total = 0.0;
        for corner in 0..(1usize << nb) {
            let mut weight = 1.0;
            let mut idx = 0;
            for (b, &(lo, hi, w)) in brackets.iter().enumerate() {
                let upper = corner >> (nb - 1 - b) & 1 == 1;
                weight *= if upper { w } else { 1.0 - w };
                idx = idx * layer[b].len() + if upper { hi } else { lo };
            }
            if weight > 0.0 {
                total += weight * values[idx];
            }
        }
        total
    }
}

#[derive(Debug, Clone)]
pub struct OraclePlan {
    pub actions: Vec<ActionVector>,
    /// Planner's value-to-go at the start of each step.
    pub value_to_go: Vec<f64>,
    /// Realized reward of replaying `actions` through the environment.
    pub total_value: f64,
    /// Episode log of the replay, with a `value_to_go` column.
    pub log: EpisodeLog,
    pub table: Option<Arc<ValueTable>>,
}

/// Solve the ex-post problem on `trace` by DP and roll the greedy policy
/// forward.
pub fn solve_expost(system: &ValidatedSystem, trace: &ExogenousTrace, cfg: &OracleConfig) -> Result<OraclePlan, OracleError> {
    let grid = cfg.grid_for(system)?;
    let trace = trace.window(0, system.horizon);
    let steps = step_data(system, &trace);
    let solution = DpSolution::solve(system, 0, &steps, &grid)?;
    let mut env = Environment::new(Arc::new(system.clone()), Arc::new(trace))?;
    let mut actions = Vec::with_capacity(system.horizon);
    let mut value_to_go = Vec::with_capacity(system.horizon);
    for k in 0..system.horizon {
        let soc = env.state().soc.clone();
        let choice = solution.best(system, k, &soc).ok_or_else(|| {
            OracleError::Infeasible(format!("no lattice path from SOC {soc:?} at step {k}; refine the SOC grid"))
        })?;
        let p_total: f64 = choice.battery_power.iter().sum();
        let (_, d) = solution.stage(k).solve(p_total).expect("choice is feasible");
        let action = ActionVector {
            battery_power: choice.battery_power,
            renewable_setpoint: d.renewable,
            controllable_setpoint: d.controllable,
            lt_quantity: d.lt,
        };
        env.step(&action)?;
        actions.push(action);
        value_to_go.push(choice.value);
    }
    let mut log = env.log();
    log.extra_column = Some(("value_to_go".into(), value_to_go.clone()));
    Ok(OraclePlan {
        actions,
        value_to_go,
        total_value: log.total_reward(),
        log,
        table: Some(Arc::new(ValueTable { solution })),
    })
}

/// Performance of an episode relative to the ex-post plan on the same trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueGap {
    /// `episode / plan`, used when the plan value is positive.
    Ratio(f64),
    /// `plan − episode`, used when the plan value is zero or negative.
    Absolute(f64),
}

impl ValueGap {
    pub fn ratio(&self) -> Option<f64> {
        match self {
            ValueGap::Ratio(r) => Some(*r),
            ValueGap::Absolute(_) => None,
        }
    }
}

pub fn value_gap(plan: &OraclePlan, episode: &EpisodeLog) -> Result<ValueGap, OracleError> {
    if plan.log.trace_fingerprint != episode.trace_fingerprint {
        return Err(OracleError::TraceMismatch {
            plan: plan.log.trace_fingerprint.clone(),
            episode: episode.trace_fingerprint.clone(),
        });
    }
    let total = episode.total_reward();
    Ok(if plan.total_value > 0.0 {
        ValueGap::Ratio(total / plan.total_value)
    } else {
        ValueGap::Absolute(plan.total_value - total)
    })
}
