#![allow(dead_code)]

use gridmkt::exogenous::ExogenousTrace;
use gridmkt::model::{
    validate, ActionVector, BatterySpec, ControllableSpec, MarketSpec, Profile, RenewableSpec, ShortfallMode, SystemConfig, TimeGrid,
    ValidatedSystem,
};
use gridmkt::projection::FeasibleSet;
use rand::Rng;

/// Projection by enumerating every clamp pattern {lower, upper, free}^d, with
/// and without the coupling row active, keeping the nearest feasible
/// candidate. Exponential in d; for d ≤ 8 only.
pub fn active_set_projection(raw: &[f64], set: &FeasibleSet) -> Vec<f64> {
    let d = raw.len();
    assert!(d <= 10);
    let scale = 1.0 + raw.iter().chain(&set.lower).chain(&set.upper).fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-11 * scale;
    let feasible = |u: &[f64]| {
        (0..d).all(|i| u[i] >= set.lower[i] - tol && u[i] <= set.upper[i] + tol)
            && set.coupling.as_ref().is_none_or(|cp| {
                cp.weights.iter().zip(u).map(|(w, x)| w * x).sum::<f64>() + cp.offset >= -tol
            })
    };
    let dist = |u: &[f64]| u.iter().zip(raw).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |u: Vec<f64>| {
        if feasible(&u) {
            let dd = dist(&u);
            if best.as_ref().is_none_or(|(b, _)| dd < *b) {
                best = Some((dd, u));
            }
        }
    };
    let patterns = 3usize.pow(d as u32);
    for code in 0..patterns {
        let mut c = code;
        let mut pattern = vec![0u8; d];
        for p in pattern.iter_mut() {
            *p = (c % 3) as u8;
            c /= 3;
        }
        let base: Vec<f64> = (0..d)
            .map(|i| match pattern[i] {
                0 => set.lower[i],
                1 => set.upper[i],
                _ => raw[i],
            })
            .collect();
        consider(base.clone());
        if let Some(cp) = &set.coupling {
            let mut fixed = cp.offset;
            let mut free_norm = 0.0;
            for i in 0..d {
                fixed += cp.weights[i] * base[i];
                if pattern[i] == 2 {
                    free_norm += cp.weights[i] * cp.weights[i];
                }
            }
            if free_norm > 0.0 {
                let lambda = -fixed / free_norm;
                let u: Vec<f64> = (0..d)
                    .map(|i| if pattern[i] == 2 { raw[i] + lambda * cp.weights[i] } else { base[i] })
                    .collect();
                consider(u);
            }
        }
    }
    best.expect("nonempty set has a feasible clamp pattern").1
}

/// Random box ∩ halfspace instance that is guaranteed nonempty, with the
/// coupling usually binding.
pub fn random_set<R: Rng>(rng: &mut R, d: usize) -> FeasibleSet {
    let mut lower = Vec::with_capacity(d);
    let mut upper = Vec::with_capacity(d);
    for _ in 0..d {
        let a: f64 = rng.random_range(-10.0..10.0);
        let width = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..8.0) };
        lower.push(a);
        upper.push(a + width);
    }
    let mut set = FeasibleSet::new(lower, upper);
    if rng.random_bool(0.85) {
        let weights: Vec<f64> =
            (0..d).map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random_range(-2.0..2.0) }).collect();
        let mut best = 0.0;
        let mut worst = 0.0;
        for i in 0..d {
            let (a, b) = (weights[i] * set.lower[i], weights[i] * set.upper[i]);
            best += a.max(b);
            worst += a.min(b);
        }
        let offset = -(worst + rng.random_range(0.0..=1.0) * (best - worst));
        set = set.with_coupling(weights, offset);
    }
    set
}

pub fn random_raw<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-15.0..15.0)).collect()
}

pub fn norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}


/// Knobs for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct InstanceShape {
    pub max_steps: usize,
    pub batteries: usize,
    pub controllable: bool,
    pub terminal: bool,
}

impl Default for InstanceShape {
    fn default() -> Self {
        InstanceShape { max_steps: 4, batteries: 1, controllable: true, terminal: true }
    }
}

fn pick<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// A random valid small system and a matching random trace.
pub fn random_instance<R: Rng>(rng: &mut R, shape: InstanceShape) -> (ValidatedSystem, ExogenousTrace) {
    loop {
        let steps = rng.random_range(1..=shape.max_steps);
        let dt = if rng.random_bool(0.5) { 1.0 } else { 0.5 };
        let batteries = (0..shape.batteries)
            .map(|i| {
                let soc_max = pick(rng, 500.0, 2000.0);
                let soc_min = pick(rng, 0.0, 0.2) * soc_max;
                let mut discharge_min = vec![0.0; steps];
                if rng.random_bool(0.1) {
                    discharge_min[rng.random_range(0..steps)] = pick(rng, 1.0, 100.0);
                }
                BatterySpec {
                    name: format!("b{i}"),
                    soc_min: Profile::Scalar(soc_min),
                    soc_max: Profile::Scalar(soc_max),
                    charge_min: Profile::Scalar(0.0),
                    charge_max: Profile::Scalar(pick(rng, 100.0, 1500.0)),
                    discharge_min: Profile::Series(discharge_min),
                    discharge_max: Profile::Scalar(pick(rng, 100.0, 1500.0)),
                    eta_charge: pick(rng, 0.7, 1.0),
                    eta_discharge: pick(rng, 0.7, 1.0),
                    initial_soc: pick(rng, soc_min, soc_max),
                    terminal_soc: (shape.terminal && rng.random_bool(0.2)).then(|| pick(rng, soc_min, soc_max)),
                    cost_per_throughput: pick(rng, 0.0, 5.0),
                }
            })
            .collect();
        let nameplate = pick(rng, 100.0, 2000.0);
        let renewables = vec![RenewableSpec {
            name: "pv".into(),
            nameplate,
            curtailable: rng.random_bool(0.7),
            curtail_penalty_a: if rng.random_bool(0.5) { 0.0 } else { pick(rng, 0.0, 1e-7) },
        }];
        let controllables = if shape.controllable && rng.random_bool(0.3) {
            vec![ControllableSpec {
                name: "load".into(),
                inject_min: Profile::Scalar(pick(rng, -500.0, 0.0)),
                inject_max: Profile::Scalar(pick(rng, 0.0, 300.0)),
            }]
        } else {
            vec![]
        };
        let mode = match rng.random_range(0..3) {
            0 => ShortfallMode::None,
            1 => ShortfallMode::LinearPenalty,
            _ => ShortfallMode::Stepwise,
        };
        let market = MarketSpec {
            lt_price: Profile::Series((0..steps).map(|_| pick(rng, 0.0, 100.0)).collect()),
            lt_cap: Profile::Series((0..steps).map(|_| pick(rng, 0.0, 1500.0)).collect()),
            lt_shortfall_mode: mode,
            lt_penalty_rate: pick(rng, 0.0, 50.0),
            allow_rt_purchase: rng.random_bool(0.5),
        };
        let config = SystemConfig {
            time: TimeGrid { horizon_steps: steps, step_duration: dt },
            batteries,
            renewables,
            controllables,
            market,
        };
        let Ok(system) = validate(&config) else {
            continue;
        };
        let trace = ExogenousTrace {
            renewable_names: vec!["pv".into()],
            rt_price: (0..steps).map(|_| pick(rng, -20.0, 150.0)).collect(),
            avail: vec![(0..steps).map(|_| if rng.random_bool(0.2) { 0.0 } else { pick(rng, 0.0, nameplate) }).collect()],
            lt_price: None,
            lt_cap: None,
        };
        // Without purchases the devices must be able to cover every step.
        if gridmkt::oracle::solve_expost(&system, &trace, &gridmkt::oracle::OracleConfig::uniform(3)).is_err() {
            continue;
        }
        return (system, trace);
    }
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

fn at(p: &Profile, t: usize) -> f64 {
    match p {
        Profile::Scalar(v) => *v,
        Profile::Series(v) => v[t.min(v.len() - 1)],
    }
}

/// Checks one applied step against the configured bounds directly, without
/// going through the validated model: SOC limits at `t + 1`, SOC dynamics,
/// charge/discharge limits, availability, controllable range, long-term cap
/// and (when purchases are disallowed) a nonnegative real-time quantity.
/// Returns a description of each violation beyond `tol`.
#[allow(clippy::too_many_arguments)]
pub fn bound_violations(
    config: &SystemConfig,
    t: usize,
    soc_before: &[f64],
    soc_after: &[f64],
    applied: &ActionVector,
    avail: &[f64],
    lt_cap: f64,
    rt_qty: f64,
    tol: f64,
) -> Vec<String> {
    let mut out = Vec::new();
    let dt = config.time.step_duration;
    let mut flag = |ok: bool, what: String| {
        if !ok {
            out.push(what);
        }
    };
    for (i, b) in config.batteries.iter().enumerate() {
        let p = applied.battery_power[i];
        let s = soc_after[i];
        flag(s >= at(&b.soc_min, t + 1) - tol, format!("{} soc {s} below min at {}", b.name, t + 1));
        flag(s <= at(&b.soc_max, t + 1) + tol, format!("{} soc {s} above max at {}", b.name, t + 1));
        if let Some(term) = b.terminal_soc {
            if t + 1 == config.time.horizon_steps {
                flag((s - term).abs() <= tol.max(1e-9 * term.abs()), format!("{} terminal soc {s} != {term}", b.name));
            }
        }
        let (charge, discharge) = if p < 0.0 { (-p, 0.0) } else { (0.0, p) };
        flag(charge <= at(&b.charge_max, t) + tol, format!("{} charge {charge} above max", b.name));
        flag(discharge <= at(&b.discharge_max, t) + tol, format!("{} discharge {discharge} above max", b.name));
        let cmin = at(&b.charge_min, t);
        let dmin = at(&b.discharge_min, t);
        if cmin > 0.0 {
            flag(charge >= cmin - tol, format!("{} charge {charge} below min {cmin}", b.name));
        }
        if dmin > 0.0 {
            flag(discharge >= dmin - tol, format!("{} discharge {discharge} below min {dmin}", b.name));
        }
        let expected = soc_before[i] + dt * (b.eta_charge * charge - discharge / b.eta_discharge);
        flag((expected - s).abs() <= tol.max(1e-12 * expected.abs()), format!("{} soc {s} != dynamics {expected}", b.name));
    }
    for (i, r) in config.renewables.iter().enumerate() {
        let x = applied.renewable_setpoint[i];
        flag(x <= avail[i] + tol, format!("{} setpoint {x} above availability {}", r.name, avail[i]));
        flag(x >= -tol, format!("{} setpoint {x} negative", r.name));
        if !r.curtailable {
            flag((x - avail[i]).abs() <= tol, format!("{} curtailed though not curtailable", r.name));
        }
    }
    for (i, c) in config.controllables.iter().enumerate() {
        let x = applied.controllable_setpoint[i];
        flag(x >= at(&c.inject_min, t) - tol && x <= at(&c.inject_max, t) + tol, format!("{} setpoint {x} out of range", c.name));
    }
    flag(applied.lt_quantity >= -tol, format!("lt {} negative", applied.lt_quantity));
    flag(applied.lt_quantity <= lt_cap + tol, format!("lt {} above cap {lt_cap}", applied.lt_quantity));
    if !config.market.allow_rt_purchase {
        flag(rt_qty >= -tol, format!("rt purchase {rt_qty} while disallowed"));
    }
    out
}
