mod common;

use std::sync::Arc;

use common::{random_instance, rel_close, InstanceShape};
use gridmkt::env::Environment;
use gridmkt::exogenous::ExogenousTrace;
use gridmkt::model::{load_config, validate, ActionVector, ValidatedSystem};
use gridmkt::oracle::{enumerate_expost, solve_expost, value_gap, OracleConfig, OracleError, ValueGap};
use gridmkt::projection::{build_feasible_set, check_feasible};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn system(doc: &str) -> ValidatedSystem {
    validate(&load_config(doc).unwrap()).unwrap()
}

fn one_battery(steps: usize, initial: f64, eta: f64, allow_purchase: bool) -> ValidatedSystem {
    system(&format!(
        r#"{{
        "time": {{"horizon_steps": {steps}, "step_duration": 1.0}},
        "batteries": [{{"name": "b", "soc_min": 0.0, "soc_max": 1000.0, "charge_max": 2000.0,
            "discharge_max": 2000.0, "eta_charge": {eta}, "eta_discharge": {eta}, "initial_soc": {initial}}}],
        "renewables": [{{"name": "pv", "nameplate": 5000.0}}],
        "market": {{"allow_rt_purchase": {allow_purchase}}}
    }}"#
    ))
}

fn trace(prices: &[f64], avail: &[f64]) -> ExogenousTrace {
    ExogenousTrace {
        renewable_names: vec!["pv".into()],
        rt_price: prices.to_vec(),
        avail: vec![avail.to_vec()],
        lt_price: None,
        lt_cap: None,
    }
}

#[test]
fn single_step_sells_everything() {
    let sys = one_battery(1, 0.0, 0.9, false);
    let plan = solve_expost(&sys, &trace(&[40.0], &[3000.0]), &OracleConfig::uniform(11)).unwrap();
    let expected = 40.0e-6 * 3000.0 * 1.0;
    assert!(rel_close(plan.total_value, expected, 1e-12), "{}", plan.total_value);
}

#[test]
fn buys_low_sells_high() {
    let sys = one_battery(2, 0.0, 1.0, true);
    let tr = trace(&[10.0, 100.0], &[0.0, 0.0]);
    let plan = solve_expost(&sys, &tr, &OracleConfig::uniform(5)).unwrap();
    let expected = (100.0 - 10.0) * 1e-6 * 1000.0;
    assert!(rel_close(plan.total_value, expected, 1e-12), "{}", plan.total_value);
    let brute = enumerate_expost(&sys, &tr, 5).unwrap();
    assert!(rel_close(brute.total_value, expected, 1e-12));
}

#[test]
fn dp_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut compared = 0;
    for i in 0..200 {
        let (sys, tr) = random_instance(&mut rng, InstanceShape::default());
        let g = [3, 4, 5][i % 3];
        let (dp, en) = match (solve_expost(&sys, &tr, &OracleConfig::uniform(g)), enumerate_expost(&sys, &tr, g)) {
            (Ok(dp), Ok(en)) => (dp, en),
            (Err(OracleError::Infeasible(_)), Err(OracleError::Infeasible(_))) => continue,
            (dp, en) => panic!("instance {i}: dp {:?} enum {:?}", dp.map(|p| p.total_value), en.map(|p| p.total_value)),
        };
        assert!(rel_close(dp.total_value, en.total_value, 1e-9), "instance {i}: dp {} enum {}", dp.total_value, en.total_value);
        compared += 1;
    }
    assert!(compared >= 180, "only {compared} feasible instances");
}

#[test]
fn nested_refinement_never_loses_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (sys, tr) = random_instance(&mut rng, InstanceShape { max_steps: 8, ..Default::default() });
        let mut g = 3;
        let mut last = f64::NEG_INFINITY;
        for _ in 0..4 {
            let v = solve_expost(&sys, &tr, &OracleConfig::uniform(g)).unwrap().total_value;
            assert!(v >= last - 1e-9 * last.abs().max(1.0), "G={g}: {v} < {last}");
            last = v;
            g = 2 * g - 1;
        }
    }
}

#[test]
fn plan_value_matches_replay_and_is_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (sys, tr) = random_instance(&mut rng, InstanceShape { max_steps: 6, ..Default::default() });
        let plan = solve_expost(&sys, &tr, &OracleConfig::uniform(9)).unwrap();
        assert!(rel_close(plan.value_to_go[0], plan.total_value, 1e-6), "{} vs {}", plan.value_to_go[0], plan.total_value);
        let mut env = Environment::new(Arc::new(sys.clone()), Arc::new(tr.clone())).unwrap();
        for a in &plan.actions {
            let set = build_feasible_set(&sys, env.state(), &env.state().revealed).unwrap();
            let report = check_feasible(a, &set, 1e-9);
            assert!(report.feasible, "{report}");
            env.step(a).unwrap();
        }
    }
}

#[test]
fn zero_prices_give_zero_value_with_idle_optimal() {
    let sys = one_battery(3, 500.0, 0.9, true);
    let tr = trace(&[0.0; 3], &[100.0, 0.0, 50.0]);
    let plan = enumerate_expost(&sys, &tr, 5).unwrap();
    assert_eq!(plan.total_value, 0.0);
    let mut env = Environment::new(Arc::new(sys.clone()), Arc::new(tr)).unwrap();
    let mut idle_total = 0.0;
    for t in 0..3 {
        let mut a = ActionVector::zeros(sys.layout());
        a.renewable_setpoint[0] = env.state().revealed.avail[0];
        let _ = t;
        idle_total += env.step(&a).unwrap().reward;
    }
    assert_eq!(idle_total, plan.total_value);
}

#[test]
fn lossy_round_trip_is_never_cycled() {
    for initial in [0.0, 400.0, 1000.0] {
        let sys = one_battery(4, initial, 0.9, true);
        let tr = trace(&[50.0; 4], &[0.0; 4]);
        let plan = enumerate_expost(&sys, &tr, 5).unwrap();
        assert!(plan.actions.iter().all(|a| a.battery_power[0] >= 0.0), "{:?}", plan.actions);
        let dp = solve_expost(&sys, &tr, &OracleConfig::uniform(5)).unwrap();
        assert!(dp.actions.iter().all(|a| a.battery_power[0] >= 0.0));
    }
}

#[test]
fn value_gap_modes() {
    let sys = one_battery(4, 500.0, 0.95, true);
    let tr = trace(&[10.0, 80.0, 20.0, 90.0], &[0.0, 300.0, 0.0, 100.0]);
    let plan = solve_expost(&sys, &tr, &OracleConfig::uniform(21)).unwrap();
    match value_gap(&plan, &plan.log).unwrap() {
        ValueGap::Ratio(r) => assert!((r - 1.0).abs() < 1e-6),
        other => panic!("{other:?}"),
    }
    let mut env = Environment::new(Arc::new(sys.clone()), Arc::new(tr.clone())).unwrap();
    for _ in 0..4 {
        let mut a = ActionVector::zeros(sys.layout());
        a.renewable_setpoint[0] = env.state().revealed.avail[0];
        env.step(&a).unwrap();
    }
    assert!(value_gap(&plan, &env.log()).unwrap().ratio().unwrap() < 1.0);

    let zero = trace(&[0.0; 4], &[0.0; 4]);
    let plan0 = solve_expost(&sys, &zero, &OracleConfig::uniform(5)).unwrap();
    assert!(matches!(value_gap(&plan0, &plan0.log).unwrap(), ValueGap::Absolute(_)));
    assert!(matches!(value_gap(&plan, &plan0.log), Err(OracleError::TraceMismatch { .. })));
}

#[test]
fn enumeration_budget_and_memory_cap() {
    let sys = one_battery(8, 500.0, 0.95, true);
    let tr = trace(&[1.0; 8], &[0.0; 8]);
    assert!(matches!(enumerate_expost(&sys, &tr, 11), Err(OracleError::Budget(_))));
    assert!(matches!(solve_expost(&sys, &tr, &OracleConfig::uniform(200_000)), Err(OracleError::MemoryCap(_))));
}
