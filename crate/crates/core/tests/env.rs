mod common;

use std::sync::Arc;

use common::{bound_violations, random_instance, InstanceShape};
use gridmkt::env::{transition, Environment};
use gridmkt::model::{ActionVector, ValidatedSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn wild_action<R: Rng>(rng: &mut R, system: &ValidatedSystem) -> ActionVector {
    let (lo, hi) = system.static_action_box();
    let flat: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &h)| {
            let span = (h - l).abs().max(1.0);
            match rng.random_range(0..6) {
                0 => l,
                1 => h,
                2 => rng.random_range(-1e12..1e12),
                3 => 0.0,
                _ => rng.random_range(l - span..h + span),
            }
        })
        .collect();
    ActionVector::from_flat(system.layout(), &flat)
}

fn own_net_energy(dt: f64, a: &ActionVector) -> f64 {
    let mut total = 0.0;
    for x in &a.battery_power {
        total += x;
    }
    for x in &a.renewable_setpoint {
        total += x;
    }
    for x in &a.controllable_setpoint {
        total += x;
    }
    dt * total
}

#[test]
fn fuzzed_actions_never_violate_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let shape = InstanceShape { max_steps: 12, batteries: rng.random_range(1..=2), ..Default::default() };
        let (system, trace) = random_instance(&mut rng, shape);
        let mut env = Environment::new(Arc::new(system.clone()), Arc::new(trace)).unwrap();
        while !env.is_done() {
            let state = env.state().clone();
            let out = env.step(&wild_action(&mut rng, &system)).unwrap();
            let v = bound_violations(
                system.config(),
                state.t,
                &state.soc,
                &out.next_state.soc,
                &out.applied_action,
                &state.revealed.avail,
                state.lt_cap,
                out.rt_quantity,
                1e-9,
            );
            assert!(v.is_empty(), "step {}: {v:?}", state.t);
            assert!(out.projection_distance >= 0.0);
        }
    }
}

#[test]
fn power_balance_and_reward_decomposition_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let (system, trace) = random_instance(&mut rng, InstanceShape { max_steps: 12, ..Default::default() });
        let mut env = Environment::new(Arc::new(system.clone()), Arc::new(trace)).unwrap();
        while !env.is_done() {
            let out = env.step(&wild_action(&mut rng, &system)).unwrap();
            let a = &out.applied_action;
            let net = own_net_energy(system.dt, a);
            assert_eq!(out.rt_quantity, net - a.lt_quantity);
            let residual = a.lt_quantity + out.rt_quantity - net;
            assert!(residual.abs() <= f64::EPSILON * net.abs().max(a.lt_quantity.abs()), "{residual}");
            let c = &out.components;
            assert_eq!(out.reward, c.rt_revenue + c.lt_revenue - c.battery_cost - c.curtail_cost);
        }
        let log = env.log();
        for r in &log.records {
            assert_eq!(r.rt_quantity, own_net_energy(system.dt, &r.applied_action) - r.applied_action.lt_quantity);
        }
    }
}

#[test]
fn outcomes_depend_only_on_state_and_action() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let (system, trace) = random_instance(&mut rng, InstanceShape { max_steps: 10, ..Default::default() });
        let (system, trace) = (Arc::new(system), Arc::new(trace));
        let mut env = Environment::new(system.clone(), trace.clone()).unwrap();
        let mut states = Vec::new();
        while !env.is_done() {
            states.push(env.state().clone());
            env.step(&wild_action(&mut rng, &system)).unwrap();
        }
        let log = env.log();

        // Replaying the raw actions from a fresh environment reproduces the log.
        let mut again = Environment::new(system.clone(), trace.clone()).unwrap();
        for r in &log.records {
            again.step(&r.raw_action).unwrap();
        }
        assert_eq!(again.log().to_csv_string(&system), log.to_csv_string(&system));

        // Each step recomputed from its recorded state alone, out of order.
        for k in (0..states.len()).rev() {
            let out = transition(&system, &trace, &states[k], &log.records[k].raw_action).unwrap();
            assert_eq!(out.reward, log.records[k].reward);
            assert_eq!(out.applied_action, log.records[k].applied_action);
            if k + 1 < states.len() {
                assert_eq!(out.next_state, states[k + 1]);
            }
        }
    }
}

#[test]
fn terminal_soc_is_reached() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut checked = 0;
    while checked < 40 {
        let (system, trace) = random_instance(&mut rng, InstanceShape { max_steps: 8, ..Default::default() });
        let Some(term) = system.batteries[0].terminal_soc else { continue };
        checked += 1;
        let mut env = Environment::new(Arc::new(system.clone()), Arc::new(trace)).unwrap();
        while !env.is_done() {
            env.step(&wild_action(&mut rng, &system)).unwrap();
        }
        let s = env.state().soc[0];
        assert!((s - term).abs() <= 1e-9 * term.abs().max(1.0), "{s} vs {term}");
    }
}

#[test]
fn log_is_ordered_and_bounded_by_horizon() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (system, trace) = random_instance(&mut rng, InstanceShape { max_steps: 9, ..Default::default() });
    let mut env = Environment::new(Arc::new(system.clone()), Arc::new(trace)).unwrap();
    while !env.is_done() {
        env.step(&wild_action(&mut rng, &system)).unwrap();
    }
    let log = env.log();
    assert!(log.terminal);
    assert_eq!(log.records.len(), system.horizon);
    assert!(log.records.iter().enumerate().all(|(i, r)| r.t == i));
    assert!(env.step(&ActionVector::zeros(system.layout())).is_err());
}
