//! Receding-horizon control: at every step, solve a deterministic lookahead
//! over forecasts with the DP of [`crate::oracle`] and apply its first action.
//!
//! The lookahead uses the same per-instant SOC lattices as the ex-post oracle
//! and starts from the live SOC exactly, so closed-loop trajectories are
//! lattice paths and never beat the oracle on the same grid.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Environment, EpisodeLog, StepRecord};
use crate::exogenous::ExogenousTrace;
use crate::model::{ActionVector, ExogenousSample, SystemState, ValidatedSystem, PRICE_PER_MWH_TO_PER_WH};
use crate::oracle::dp::{DpSolution, StepData};
use crate::oracle::OracleError;
use crate::policy::Policy;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("a perfect forecast needs the true trace")]
    PerfectWithoutTrace,
    #[error("lookahead horizon must be ≥ 1")]
    Horizon,
    #[error("forecast starts at step {found}, state is at step {expected}")]
    ForecastStart { expected: usize, found: usize },
    #[error("forecast covers {found} steps, expected {expected}")]
    ForecastLength { expected: usize, found: usize },
    #[error("inner SOC grid must have ≥ 2 points")]
    Grid,
    #[error("no feasible lookahead plan from SOC {0:?}; refine the SOC grid")]
    Infeasible(Vec<f64>),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastKind {
    /// The true future, read from the trace.
    Perfect,
    /// Every future step repeats the values observed now.
    Persistence,
    /// Each future step repeats the latest observation at the same time of
    /// day; persistence where no such observation exists yet.
    Diurnal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub forecaster: ForecastKind,
    /// Lattice points per battery for the lookahead DP.
    #[serde(default = "default_inner_grid")]
    pub inner_soc_grid: usize,
}

fn default_inner_grid() -> usize {
    101
}

impl MpcConfig {
    pub fn new(horizon: usize, forecaster: ForecastKind) -> Self {
        MpcConfig { horizon, forecaster, inner_soc_grid: default_inner_grid() }
    }
}

/// Point forecast over `[start, start + H)` in canonical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub start: usize,
    /// currency/Wh.
    pub rt_price: Vec<f64>,
    /// `avail[r][k]`, W.
    pub avail: Vec<Vec<f64>>,
    /// currency/Wh.
    pub lt_price: Vec<f64>,
    pub lt_cap: Vec<f64>,
}

impl Forecast {
    pub fn horizon(&self) -> usize {
        self.rt_price.len()
    }

    fn steps(&self) -> Vec<StepData> {
        (0..self.horizon())
            .map(|k| StepData {
                sample: ExogenousSample {
                    rt_price: self.rt_price[k],
                    avail: self.avail.iter().map(|a| a[k]).collect(),
                },
                lt_price: self.lt_price[k],
                lt_cap: self.lt_cap[k],
            })
            .collect()
    }
}

/// Steps per day, or `None` when the step does not divide a day sensibly.
fn steps_per_day(dt: f64) -> Option<usize> {
    let d = (24.0 / dt).round();
    (d >= 1.0 && ((d * dt) - 24.0).abs() < 1e-9).then_some(d as usize)
}

/// Forecast `h` steps from `current` (clipped at the horizon). `history`
/// holds the records of steps `0..current.t`; only the perfect kind reads
/// `trace`.
pub fn forecast(
    kind: ForecastKind,
    system: &ValidatedSystem,
    history: &[StepRecord],
    current: &SystemState,
    trace: Option<&ExogenousTrace>,
    h: usize,
) -> Result<Forecast, MpcError> {
    if h == 0 {
        return Err(MpcError::Horizon);
    }
    let t = current.t;
    let h = h.min(system.horizon.saturating_sub(t));
    let nr = system.renewables.len();
    let mut fc = Forecast {
        start: t,
        rt_price: Vec::with_capacity(h),
        avail: vec![Vec::with_capacity(h); nr],
        lt_price: Vec::with_capacity(h),
        lt_cap: Vec::with_capacity(h),
    };
    let push_current = |fc: &mut Forecast| {
        fc.rt_price.push(current.revealed.rt_price);
        for (r, a) in fc.avail.iter_mut().enumerate() {
            a.push(current.revealed.avail[r]);
        }
        fc.lt_price.push(current.lt_price);
        fc.lt_cap.push(current.lt_cap);
    };
    match kind {
        ForecastKind::Perfect => {
            let trace = trace.ok_or(MpcError::PerfectWithoutTrace)?;
            for k in 0..h {
                let w = trace.sample(t + k);
                let (p, c) = trace.lt_terms(system, t + k);
                fc.rt_price.push(w.rt_price);
                for (r, a) in fc.avail.iter_mut().enumerate() {
                    a.push(w.avail[r]);
                }
                fc.lt_price.push(p);
                fc.lt_cap.push(c);
            }
        }
        ForecastKind::Persistence => {
            for _ in 0..h {
                push_current(&mut fc);
            }
        }
        ForecastKind::Diurnal => {
            let day = steps_per_day(system.dt);
            for k in 0..h {
                let past = match day {
                    Some(d) if k > 0 => (t + k).checked_sub(d * k.div_ceil(d)),
                    _ => None,
                };
                match past {
                    Some(j) if j < t && j < history.len() => {
                        let r = &history[j];
                        fc.rt_price.push(r.rt_price * PRICE_PER_MWH_TO_PER_WH);
                        for (i, a) in fc.avail.iter_mut().enumerate() {
                            a.push(r.avail[i]);
                        }
                        fc.lt_price.push(r.lt_price * PRICE_PER_MWH_TO_PER_WH);
                        fc.lt_cap.push(r.lt_cap);
                    }
                    _ => push_current(&mut fc),
                }
            }
        }
    }
    Ok(fc)
}

#[derive(Debug, Clone)]
pub struct MpcPlan {
    pub action: ActionVector,
    /// Forecast value of the lookahead from the current state.
    pub predicted_value: f64,
}

/// Solve the lookahead on `fc` from the exact SOC of `state`.
pub fn plan(system: &ValidatedSystem, state: &SystemState, fc: &Forecast, cfg: &MpcConfig) -> Result<MpcPlan, MpcError> {
    if cfg.horizon == 0 {
        return Err(MpcError::Horizon);
    }
    if cfg.inner_soc_grid < 2 {
        return Err(MpcError::Grid);
    }
    if fc.start != state.t {
        return Err(MpcError::ForecastStart { expected: state.t, found: fc.start });
    }
    let expected = cfg.horizon.min(system.horizon.saturating_sub(state.t));
    if fc.horizon() != expected || expected == 0 {
        return Err(MpcError::ForecastLength { expected, found: fc.horizon() });
    }
    let grid = vec![cfg.inner_soc_grid; system.batteries.len()];
    let sol = DpSolution::solve_from_state(system, state.t, &fc.steps(), &grid)?;
    let choice = sol.best(system, 0, &state.soc).ok_or_else(|| MpcError::Infeasible(state.soc.clone()))?;
    let p_total: f64 = choice.battery_power.iter().sum();
    let (_, d) = sol.stage(0).solve(p_total).expect("chosen transition is feasible");
    Ok(MpcPlan {
        action: ActionVector {
            battery_power: choice.battery_power,
            renewable_setpoint: d.renewable,
            controllable_setpoint: d.controllable,
            lt_quantity: d.lt,
        },
        predicted_value: choice.value,
    })
}

/// Receding-horizon policy; perfect forecasts read the environment's trace.
#[derive(Debug, Clone)]
pub struct MpcPolicy {
    cfg: MpcConfig,
    predicted: Vec<f64>,
}

impl MpcPolicy {
    pub fn new(cfg: MpcConfig) -> Self {
        MpcPolicy { cfg, predicted: Vec::new() }
    }
}

impl Policy for MpcPolicy {
    fn act(&mut self, env: &Environment) -> Result<ActionVector, Box<dyn std::error::Error + Send + Sync>> {
        let system = env.system();
        let fc = forecast(self.cfg.forecaster, system, env.records(), env.state(), Some(env.trace()), self.cfg.horizon)?;
        let p = plan(system, env.state(), &fc, &self.cfg)?;
        self.predicted.push(p.predicted_value);
        Ok(p.action)
    }

    fn extra_column(&mut self) -> Option<(String, Vec<f64>)> {
        Some(("predicted_value".into(), std::mem::take(&mut self.predicted)))
    }
}

/// Closed-loop episode: forecast, plan and step at every instant. The log
/// carries a `predicted_value` column.
pub fn run_mpc(system: &ValidatedSystem, trace: &ExogenousTrace, cfg: &MpcConfig) -> Result<EpisodeLog, MpcError> {
    let trace = Arc::new(trace.window(0, system.horizon));
    let mut env = Environment::new(Arc::new(system.clone()), trace.clone())?;
    let mut predicted = Vec::with_capacity(system.horizon);
    while !env.is_done() {
        let fc = forecast(cfg.forecaster, system, env.records(), env.state(), Some(&trace), cfg.horizon)?;
        let p = plan(system, env.state(), &fc, cfg)?;
        env.step(&p.action)?;
        predicted.push(p.predicted_value);
    }
    let mut log = env.log();
    log.extra_column = Some(("predicted_value".into(), predicted));
    Ok(log)
}
