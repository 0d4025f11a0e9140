//! The dispatch MDP: reveal `W_t`, project the raw action onto the feasible
//! set, advance the SOCs and pay the step reward.
//!
//! `W_t` (price and availability of step `t`) is visible in the state before
//! the action at `t` is chosen. The real-time quantity is not an action: it is
//! the residual `Δt·(Σ battery + Σ renewable + Σ controllable) − lt_quantity`,
//! positive for a sale.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::exogenous::ExogenousTrace;
use crate::model::{ActionVector, ExogenousSample, ShortfallMode, SystemState, ValidatedSystem};
use crate::projection::{build_feasible_set, project, FeasibleSet, ProjectionError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step {t} is past the horizon of {horizon} steps")]
    PastHorizon { t: usize, horizon: usize },
    #[error("raw action is not finite")]
    NonFinite,
    #[error("raw action has the wrong shape")]
    Shape,
    #[error("trace has {found} steps, horizon is {expected}")]
    TraceLength { expected: usize, found: usize },
    #[error("trace has {found} renewable columns, system has {expected}")]
    TraceColumns { expected: usize, found: usize },
    #[error("long-term delivery {z} exceeds cap {cap}")]
    LtAboveCap { z: f64, cap: f64 },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

/// Subdivisions of the stepwise shortfall rule.
pub const STEPWISE_LEVELS: f64 = 4.0;

/// Slack on the stepwise level so that a delivery sitting on a breakpoint up
/// to rounding is not demoted a level.
const STEPWISE_SNAP: f64 = 1e-9;

/// Completed level `floor(k·z/cap)` of the stepwise rule, in `0..=k`.
pub fn stepwise_level(z: f64, cap: f64) -> f64 {
    (STEPWISE_LEVELS * z / cap + STEPWISE_SNAP).floor().min(STEPWISE_LEVELS)
}

/// Long-term revenue for delivering `z` Wh against a cap of `cap` Wh:
/// `price·cap` on full delivery, otherwise the configured shortfall rule.
pub fn reward_lt(z: f64, price: f64, cap: f64, mode: ShortfallMode, penalty_rate: f64) -> Result<f64, EnvError> {
    if z > cap {
        return Err(EnvError::LtAboveCap { z, cap });
    }
    if z == cap {
        return Ok(price * cap);
    }
    Ok(match mode {
        ShortfallMode::None => price * z,
        ShortfallMode::LinearPenalty => price * z - penalty_rate * (cap - z),
        ShortfallMode::Stepwise => price * z * stepwise_level(z, cap) / STEPWISE_LEVELS,
    })
}

/// Quadratic curtailment penalty `a·(setpoint − avail)²·Δt`.
pub fn curtail_penalty(setpoint: f64, avail: f64, a: f64, dt: f64) -> f64 {
    let gap = setpoint - avail;
    a * gap * gap * dt
}

/// `Δt·(Σ battery + Σ renewable + Σ controllable)`, summed in that order.
pub fn net_energy(dt: f64, action: &ActionVector) -> f64 {
    let mut s = 0.0;
    for p in action.battery_power.iter().chain(&action.renewable_setpoint).chain(&action.controllable_setpoint) {
        s += p;
    }
    dt * s
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RewardComponents {
    pub rt_revenue: f64,
    pub lt_revenue: f64,
    pub battery_cost: f64,
    pub curtail_cost: f64,
}

impl RewardComponents {
    pub fn total(&self) -> f64 {
        self.rt_revenue + self.lt_revenue - self.battery_cost - self.curtail_cost
    }
}

/// Reward of an already-feasible action at step `t`, with the real-time
/// quantity it implies.
pub fn step_reward(
    system: &ValidatedSystem,
    w: &ExogenousSample,
    lt_price: f64,
    lt_cap: f64,
    action: &ActionVector,
) -> Result<(RewardComponents, f64), EnvError> {
    let dt = system.dt;
    let rt_qty = net_energy(dt, action) - action.lt_quantity;
    let mut battery_cost = 0.0;
    for (b, &p) in system.batteries.iter().zip(&action.battery_power) {
        battery_cost += b.throughput_cost(p, dt);
    }
    let mut curtail_cost = 0.0;
    for ((r, &x), &avail) in system.renewables.iter().zip(&action.renewable_setpoint).zip(&w.avail) {
        if r.curtailable {
            curtail_cost += curtail_penalty(x, avail, r.curtail_penalty_a, dt);
        }
    }
    let m = &system.market;
    let components = RewardComponents {
        rt_revenue: w.rt_price * rt_qty,
        lt_revenue: reward_lt(action.lt_quantity, lt_price, lt_cap, m.shortfall_mode, m.penalty_rate)?,
        battery_cost,
        curtail_cost,
    };
    Ok((components, rt_qty))
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_state: SystemState,
    pub reward: f64,
    pub components: RewardComponents,
    pub applied_action: ActionVector,
    /// Euclidean distance between raw and applied action.
    pub projection_distance: f64,
    /// Wh sold (negative: bought) in the real-time market.
    pub rt_quantity: f64,
    pub done: bool,
}

/// One logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// currency/MWh.
    pub rt_price: f64,
    /// currency/MWh.
    pub lt_price: f64,
    pub lt_cap: f64,
    pub avail: Vec<f64>,
    /// SOC at the start of the step.
    pub soc: Vec<f64>,
    pub raw_action: ActionVector,
    pub applied_action: ActionVector,
    pub rt_quantity: f64,
    pub reward: f64,
    pub components: RewardComponents,
    pub projection_distance: f64,
}

/// A rollout's step records plus the fingerprint of the trace it ran on.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub records: Vec<StepRecord>,
    pub terminal: bool,
    pub trace_fingerprint: String,
    /// An optional per-step column appended to the CSV (e.g. the controller's
    /// predicted value).
    pub extra_column: Option<(String, Vec<f64>)>,
}

impl EpisodeLog {
    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    pub fn total_components(&self) -> RewardComponents {
        let mut c = RewardComponents::default();
        for r in &self.records {
            c.rt_revenue += r.components.rt_revenue;
            c.lt_revenue += r.components.lt_revenue;
            c.battery_cost += r.components.battery_cost;
            c.curtail_cost += r.components.curtail_cost;
        }
        c
    }

    pub fn header(system: &ValidatedSystem) -> Vec<String> {
        let mut h: Vec<String> = vec!["step".into(), "rt_price".into(), "lt_price".into(), "lt_cap".into()];
        h.extend(system.renewables.iter().map(|r| format!("avail_{}", r.name)));
        h.extend(system.batteries.iter().map(|b| format!("soc_{}", b.name)));
        h.extend(system.batteries.iter().map(|b| format!("act_batt_{}", b.name)));
        h.extend(system.renewables.iter().map(|r| format!("act_ren_{}", r.name)));
        h.extend(system.controllables.iter().map(|c| format!("act_ctl_{}", c.name)));
        for k in ["lt_qty", "rt_qty", "reward", "rt_rev", "lt_rev", "batt_cost", "curtail_cost"] {
            h.push(k.into());
        }
        h
    }

    pub fn write_csv<W: Write>(&self, system: &ValidatedSystem, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = Self::header(system);
        if let Some((name, _)) = &self.extra_column {
            header.push(name.clone());
        }
        w.write_record(&header)?;
        for (i, r) in self.records.iter().enumerate() {
            let a = &r.applied_action;
            let mut row: Vec<f64> = vec![r.t as f64, r.rt_price, r.lt_price, r.lt_cap];
            row.extend(&r.avail);
            row.extend(&r.soc);
            row.extend(&a.battery_power);
            row.extend(&a.renewable_setpoint);
            row.extend(&a.controllable_setpoint);
            row.extend([
                a.lt_quantity,
                r.rt_quantity,
                r.reward,
                r.components.rt_revenue,
                r.components.lt_revenue,
                r.components.battery_cost,
                r.components.curtail_cost,
            ]);
            if let Some((_, v)) = &self.extra_column {
                row.push(v[i]);
            }
            let mut cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            cells[0] = r.t.to_string();
            w.write_record(&cells)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self, system: &ValidatedSystem) -> String {
        let mut buf = Vec::new();
        self.write_csv(system, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// Bound violations of one completed step beyond `tol`, checked against the
/// validated limits directly rather than through the feasible set: SOC limits
/// at `t + 1`, power limits, availability, controllable range, long-term cap
/// and, without purchases, a nonnegative real-time quantity.
pub fn step_violations(system: &ValidatedSystem, before: &SystemState, out: &StepOutcome, tol: f64) -> Vec<String> {
    let t = before.t;
    let a = &out.applied_action;
    let mut v = Vec::new();
    for (i, b) in system.batteries.iter().enumerate() {
        let s = out.next_state.soc[i];
        if s < b.soc_min[t + 1] - tol || s > b.soc_max[t + 1] + tol {
            v.push(format!("soc[{}] = {s} outside [{}, {}]", b.name, b.soc_min[t + 1], b.soc_max[t + 1]));
        }
        let p = a.battery_power[i];
        if p < b.power_lo[t] - tol || p > b.power_hi[t] + tol {
            v.push(format!("battery_power[{}] = {p} outside [{}, {}]", b.name, b.power_lo[t], b.power_hi[t]));
        }
    }
    for (i, r) in system.renewables.iter().enumerate() {
        let (x, avail) = (a.renewable_setpoint[i], before.revealed.avail[i]);
        let lo = if r.curtailable { 0.0 } else { avail };
        if x < lo - tol || x > avail + tol {
            v.push(format!("renewable_setpoint[{}] = {x} outside [{lo}, {avail}]", r.name));
        }
    }
    for (i, c) in system.controllables.iter().enumerate() {
        let x = a.controllable_setpoint[i];
        if x < c.inject_min[t] - tol || x > c.inject_max[t] + tol {
            v.push(format!("controllable_setpoint[{}] = {x} outside range", c.name));
        }
    }
    if a.lt_quantity < -tol || a.lt_quantity > before.lt_cap + tol {
        v.push(format!("lt_quantity = {} outside [0, {}]", a.lt_quantity, before.lt_cap));
    }
    if !system.market.allow_rt_purchase && out.rt_quantity < -tol {
        v.push(format!("rt_quantity = {} is a disallowed purchase", out.rt_quantity));
    }
    v
}

/// State at `t = 0` with `W_0` revealed.
pub fn initial_state(system: &ValidatedSystem, trace: &ExogenousTrace) -> Result<SystemState, EnvError> {
    check_trace(system, trace)?;
    let (lt_price, lt_cap) = trace.lt_terms(system, 0);
    Ok(SystemState {
        t: 0,
        soc: system.initial_soc(),
        last_injections: vec![0.0; system.batteries.len() + system.renewables.len() + system.controllables.len()],
        lt_commitment: 0.0,
        rt_commitment: 0.0,
        revealed: trace.sample(0),
        lt_price,
        lt_cap,
    })
}

fn check_trace(system: &ValidatedSystem, trace: &ExogenousTrace) -> Result<(), EnvError> {
    if trace.len() < system.horizon {
        return Err(EnvError::TraceLength { expected: system.horizon, found: trace.len() });
    }
    if trace.avail.len() != system.renewables.len() {
        return Err(EnvError::TraceColumns { expected: system.renewables.len(), found: trace.avail.len() });
    }
    Ok(())
}

/// Apply `raw` at `state`. Pure: the outcome depends only on the arguments.
pub fn transition(
    system: &ValidatedSystem,
    trace: &ExogenousTrace,
    state: &SystemState,
    raw: &ActionVector,
) -> Result<StepOutcome, EnvError> {
    let t = state.t;
    if t >= system.horizon {
        return Err(EnvError::PastHorizon { t, horizon: system.horizon });
    }
    if raw.layout() != system.layout() {
        return Err(EnvError::Shape);
    }
    if !raw.is_finite() {
        return Err(EnvError::NonFinite);
    }
    let w = &state.revealed;
    let set = build_feasible_set(system, state, w)?;
    let mut applied = project(raw, &set)?;
    if set.coupling.is_some() {
        // The halfspace holds in W; in the settled Wh it can miss by one
        // rounding. Trim the long-term quantity so no purchase results.
        let gen = net_energy(system.dt, &applied);
        if gen - applied.lt_quantity < 0.0 {
            applied.lt_quantity = gen.max(0.0);
        }
    }
    let projection_distance = distance(raw, &applied);
    let (components, rt_quantity) = step_reward(system, w, state.lt_price, state.lt_cap, &applied)?;
    let reward = components.total();

    let dt = system.dt;
    let next_t = t + 1;
    let soc: Vec<f64> = system
        .batteries
        .iter()
        .zip(&state.soc)
        .zip(&applied.battery_power)
        .map(|((b, &s), &p)| (s + b.soc_delta(p, dt)).clamp(b.envelope_lo[next_t], b.envelope_hi[next_t]))
        .collect();
    let done = next_t == system.horizon;
    let (revealed, lt_price, lt_cap) = if done {
        (state.revealed.clone(), state.lt_price, state.lt_cap)
    } else {
        let (p, c) = trace.lt_terms(system, next_t);
        (trace.sample(next_t), p, c)
    };
    let mut last_injections = applied.battery_power.clone();
    last_injections.extend(&applied.renewable_setpoint);
    last_injections.extend(&applied.controllable_setpoint);
    let next_state = SystemState {
        t: next_t,
        soc,
        last_injections,
        lt_commitment: applied.lt_quantity,
        rt_commitment: rt_quantity,
        revealed,
        lt_price,
        lt_cap,
    };
    Ok(StepOutcome { next_state, reward, components, applied_action: applied, projection_distance, rt_quantity, done })
}

fn distance(a: &ActionVector, b: &ActionVector) -> f64 {
    a.to_flat().iter().zip(b.to_flat()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A stateful environment over one trace.
#[derive(Debug, Clone)]
pub struct Environment {
    system: Arc<ValidatedSystem>,
    trace: Arc<ExogenousTrace>,
    state: SystemState,
    done: bool,
    logging: bool,
    log: Vec<StepRecord>,
}

impl Environment {
    pub fn new(system: Arc<ValidatedSystem>, trace: Arc<ExogenousTrace>) -> Result<Self, EnvError> {
        let state = initial_state(&system, &trace)?;
        Ok(Environment { system, trace, state, done: false, logging: true, log: Vec::new() })
    }

    /// Disable per-step records (training rollouts do not need them).
    pub fn without_log(mut self) -> Self {
        self.logging = false;
        self
    }

    pub fn system(&self) -> &Arc<ValidatedSystem> {
        &self.system
    }

    pub fn trace(&self) -> &Arc<ExogenousTrace> {
        &self.trace
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// The feasible set of the current step.
    pub fn feasible_set(&self) -> Result<FeasibleSet, EnvError> {
        Ok(build_feasible_set(&self.system, &self.state, &self.state.revealed)?)
    }

    pub fn reset(&mut self) -> &SystemState {
        self.state = initial_state(&self.system, &self.trace).expect("trace checked at construction");
        self.done = false;
        self.log.clear();
        &self.state
    }

    /// Replace the trace and reset.
    pub fn reset_with(&mut self, trace: Arc<ExogenousTrace>) -> Result<&SystemState, EnvError> {
        check_trace(&self.system, &trace)?;
        self.trace = trace;
        Ok(self.reset())
    }

    pub fn step(&mut self, raw: &ActionVector) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::PastHorizon { t: self.state.t, horizon: self.system.horizon });
        }
        let out = transition(&self.system, &self.trace, &self.state, raw)?;
        if self.logging {
            let t = self.state.t;
            self.log.push(StepRecord {
                t,
                rt_price: self.trace.rt_price[t],
                lt_price: match &self.trace.lt_price {
                    Some(v) => v[t],
                    None => self.system.market.lt_price_mwh[t],
                },
                lt_cap: self.state.lt_cap,
                avail: self.state.revealed.avail.clone(),
                soc: self.state.soc.clone(),
                raw_action: raw.clone(),
                applied_action: out.applied_action.clone(),
                rt_quantity: out.rt_quantity,
                reward: out.reward,
                components: out.components,
                projection_distance: out.projection_distance,
            });
        }
        self.state = out.next_state.clone();
        self.done = out.done;
        Ok(out)
    }

    /// Records of the steps taken so far (empty when logging is disabled).
    pub fn records(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn log(&self) -> EpisodeLog {
        EpisodeLog {
            records: self.log.clone(),
            terminal: self.done,
            trace_fingerprint: self.trace.fingerprint(),
            extra_column: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_config, validate};

    #[test]
    fn lt_reward_examples() {
        assert_eq!(reward_lt(10.0, 3.0, 10.0, ShortfallMode::Stepwise, 0.0).unwrap(), 30.0);
        assert_eq!(reward_lt(6.0, 3.0, 10.0, ShortfallMode::LinearPenalty, 2.0).unwrap(), 10.0);
        assert_eq!(reward_lt(0.0, 3.0, 10.0, ShortfallMode::None, 0.0).unwrap(), 0.0);
        // 6/10 of the cap is two full quarters.
        assert_eq!(reward_lt(6.0, 3.0, 10.0, ShortfallMode::Stepwise, 0.0).unwrap(), 3.0 * 6.0 * 0.5);
        // Breakpoints survive rounding of the delivered quantity.
        let cap: f64 = 52.61905633014141;
        let below = f64::from_bits(cap.to_bits() - 1);
        assert_eq!(stepwise_level(below, cap), 4.0);
        for k in 0..=4 {
            let z = cap * k as f64 / 4.0;
            assert_eq!(stepwise_level(z, cap), k as f64);
            assert_eq!(stepwise_level(f64::from_bits(z.to_bits().saturating_sub(2)), cap), k as f64);
        }
        assert_eq!(stepwise_level(cap * 0.74, cap), 2.0);
        assert!(reward_lt(11.0, 3.0, 10.0, ShortfallMode::None, 0.0).is_err());
        assert_eq!(reward_lt(0.0, 3.0, 0.0, ShortfallMode::Stepwise, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn curtailment_examples() {
        assert_eq!(curtail_penalty(5.0, 5.0, 2.0, 1.0), 0.0);
        assert_eq!(curtail_penalty(3.0, 5.0, 2.0, 1.0), 8.0);
        assert_eq!(curtail_penalty(0.0, 5.0, 0.0, 1.0), 0.0);
    }

    fn system() -> Arc<ValidatedSystem> {
        let doc = r#"{
            "time": {"horizon_steps": 3, "step_duration": 1.0},
            "batteries": [{"name": "b", "soc_min": 0.0, "soc_max": 100.0, "charge_max": 10.0,
                "discharge_max": 10.0, "eta_charge": 0.9, "eta_discharge": 1.0, "initial_soc": 50.0}],
            "renewables": [{"name": "pv", "nameplate": 10.0}]
        }"#;
        Arc::new(validate(&load_config(doc).unwrap()).unwrap())
    }

    fn trace(price_mwh: f64) -> Arc<ExogenousTrace> {
        Arc::new(ExogenousTrace {
            renewable_names: vec!["pv".into()],
            rt_price: vec![price_mwh; 3],
            avail: vec![vec![0.0; 3]],
            lt_price: None,
            lt_cap: None,
        })
    }

    #[test]
    fn charging_raises_soc_by_efficiency() {
        let mut env = Environment::new(system(), trace(0.0)).unwrap();
        let mut a = ActionVector::zeros(env.system().layout());
        a.battery_power[0] = -10.0;
        let out = env.step(&a).unwrap();
        assert!((out.next_state.soc[0] - 59.0).abs() < 1e-12);
    }

    #[test]
    fn rt_revenue_is_price_times_quantity() {
        // 50 per Wh is 5e7 per MWh; selling 2 Wh from the battery.
        let mut env = Environment::new(system(), trace(50.0e6)).unwrap();
        let mut a = ActionVector::zeros(env.system().layout());
        a.battery_power[0] = 2.0;
        let out = env.step(&a).unwrap();
        assert_eq!(out.rt_quantity, 2.0);
        assert!((out.components.rt_revenue - 100.0).abs() < 1e-9);
    }

    #[test]
    fn trace_too_short_is_rejected() {
        let mut t = (*trace(1.0)).clone();
        t.rt_price.pop();
        t.avail[0].pop();
        assert!(matches!(Environment::new(system(), Arc::new(t)), Err(EnvError::TraceLength { .. })));
    }

    #[test]
    fn stepping_past_horizon_fails() {
        let mut env = Environment::new(system(), trace(1.0)).unwrap();
        let a = ActionVector::zeros(env.system().layout());
        for _ in 0..3 {
            env.step(&a).unwrap();
        }
        assert!(matches!(env.step(&a), Err(EnvError::PastHorizon { .. })));
        let mut bad = a.clone();
        bad.lt_quantity = f64::NAN;
        env.reset();
        assert!(matches!(env.step(&bad), Err(EnvError::NonFinite)));
    }
}
