use std::sync::Arc;

use gridmkt::env::Environment;
use gridmkt::exogenous::ExogenousTrace;
use gridmkt::harness::scenario::smoothed;
use gridmkt::model::{load_config, validate, ValidatedSystem};
use gridmkt::mpc::{forecast, plan, run_mpc, ForecastKind, MpcConfig};
use gridmkt::oracle::{solve_expost, OracleConfig};

fn one_battery(eta: f64, initial: f64, discharge_max: f64, lt_cap: f64) -> ValidatedSystem {
    let doc = format!(
        r#"{{
        "time": {{"horizon_steps": 4, "step_duration": 1.0}},
        "batteries": [{{"name": "b", "soc_min": 0.0, "soc_max": 1000.0, "charge_max": 300.0,
            "discharge_max": {discharge_max}, "eta_charge": {eta}, "eta_discharge": {eta}, "initial_soc": {initial}}}],
        "renewables": [{{"name": "pv", "nameplate": 100.0}}],
        "market": {{"lt_price": 30.0, "lt_cap": {lt_cap}}}
    }}"#
    );
    validate(&load_config(&doc).unwrap()).unwrap()
}

fn flat(price: f64) -> ExogenousTrace {
    ExogenousTrace {
        renewable_names: vec!["pv".into()],
        rt_price: vec![price; 4],
        avail: vec![vec![0.0; 4]],
        lt_price: None,
        lt_cap: None,
    }
}

fn first_action(sys: &ValidatedSystem, tr: &ExogenousTrace, cfg: &MpcConfig) -> f64 {
    let env = Environment::new(Arc::new(sys.clone()), Arc::new(tr.clone())).unwrap();
    let fc = forecast(cfg.forecaster, sys, env.records(), env.state(), Some(tr), cfg.horizon).unwrap();
    plan(sys, env.state(), &fc, cfg).unwrap().action.battery_power[0]
}

#[test]
fn one_step_lookahead_discharges_fully() {
    let cfg = MpcConfig { horizon: 1, forecaster: ForecastKind::Persistence, inner_soc_grid: 11 };
    // Limited by the stored energy.
    assert_eq!(first_action(&one_battery(1.0, 400.0, 2000.0, 0.0), &flat(50.0), &cfg), 400.0);
    // Limited by the discharge rating.
    assert_eq!(first_action(&one_battery(1.0, 500.0, 300.0, 0.0), &flat(50.0), &cfg), 300.0);
}

#[test]
fn lossy_battery_stays_idle_at_constant_price() {
    let sys = one_battery(0.9, 0.0, 300.0, 0.0);
    for kind in [ForecastKind::Perfect, ForecastKind::Persistence, ForecastKind::Diurnal] {
        let log = run_mpc(&sys, &flat(50.0), &MpcConfig { horizon: 4, forecaster: kind, inner_soc_grid: 21 }).unwrap();
        assert!(log.records.iter().all(|r| r.applied_action.battery_power[0] == 0.0));
        assert_eq!(log.total_reward(), 0.0);
    }
}

#[test]
fn zero_prices_earn_nothing() {
    let sys = one_battery(0.95, 500.0, 300.0, 0.0);
    let log = run_mpc(&sys, &flat(0.0), &MpcConfig { horizon: 2, forecaster: ForecastKind::Persistence, inner_soc_grid: 11 })
        .unwrap();
    assert_eq!(log.total_reward(), 0.0);
}

#[test]
fn full_horizon_perfect_forecast_reproduces_the_oracle() {
    let scenario = smoothed();
    let sys = validate(&scenario.system).unwrap();
    for seed in 0..3 {
        let tr = scenario.exogenous.generate(&sys, seed).unwrap();
        let oracle = solve_expost(&sys, &tr, &OracleConfig::uniform(41)).unwrap();
        let cfg = MpcConfig { horizon: sys.horizon, forecaster: ForecastKind::Perfect, inner_soc_grid: 41 };
        let log = run_mpc(&sys, &tr, &cfg).unwrap();
        let (m, o) = (log.total_reward(), oracle.total_value);
        assert!(m <= o + 1e-9 * o.abs() && m >= o - 0.02 * o.abs(), "mpc {m} oracle {o}");
        for (a, b) in log.records.iter().zip(&oracle.log.records) {
            assert!((a.soc[0] - b.soc[0]).abs() <= 1e-6, "step {}: {} vs {}", a.t, a.soc[0], b.soc[0]);
        }
        let predicted = &log.extra_column.as_ref().unwrap().1;
        assert!((predicted[0] - oracle.value_to_go[0]).abs() <= 1e-9 * o.abs());
    }
}

#[test]
fn planned_actions_need_no_projection() {
    let scenario = smoothed();
    let sys = validate(&scenario.system).unwrap();
    let tr = scenario.exogenous.generate(&sys, 9).unwrap();
    for kind in [ForecastKind::Perfect, ForecastKind::Persistence, ForecastKind::Diurnal] {
        let log = run_mpc(&sys, &tr, &MpcConfig { horizon: 12, forecaster: kind, inner_soc_grid: 41 }).unwrap();
        assert_eq!(log.records.len(), sys.horizon);
        assert!(log.records.iter().all(|r| r.projection_distance <= 1e-9), "{kind:?}");
        assert_eq!(log.extra_column.as_ref().unwrap().0, "predicted_value");
    }
}

#[test]
fn longer_persistence_horizon_usually_does_no_worse() {
    let scenario = smoothed();
    let sys = validate(&scenario.system).unwrap();
    let mut wins = 0;
    for seed in 0..20 {
        let tr = scenario.exogenous.generate(&sys, 100 + seed).unwrap();
        let short = run_mpc(&sys, &tr, &MpcConfig { horizon: 1, forecaster: ForecastKind::Persistence, inner_soc_grid: 41 })
            .unwrap()
            .total_reward();
        let long = run_mpc(&sys, &tr, &MpcConfig { horizon: 24, forecaster: ForecastKind::Persistence, inner_soc_grid: 41 })
            .unwrap()
            .total_reward();
        if long >= short {
            wins += 1;
        }
    }
    assert!(wins >= 16, "longer horizon won {wins}/20");
}
