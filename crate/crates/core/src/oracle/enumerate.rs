use std::sync::Arc;

use crate::env::Environment;
use crate::exogenous::ExogenousTrace;
use crate::model::{ActionVector, ValidatedSystem};
use crate::oracle::dispatch::StageSolver;
use crate::oracle::dp::{reachable_targets, Lattice};
use crate::oracle::{step_data, OracleError, OraclePlan};

/// Largest `points^(batteries·T)` accepted by [`enumerate_expost`].
pub const ENUMERATION_BUDGET: f64 = 1e7;

struct Search<'a> {
    system: &'a ValidatedSystem,
    lattice: Lattice,
    stages: Vec<StageSolver>,
    best: Option<(f64, Vec<ActionVector>)>,
    path: Vec<ActionVector>,
}

impl Search<'_> {
    fn visit(&mut self, env: &Environment, acc: f64) -> Result<(), OracleError> {
        let t = env.state().t;
        if t == self.system.horizon {
            if self.best.as_ref().is_none_or(|(v, _)| acc > *v) {
                self.best = Some((acc, self.path.clone()));
            }
            return Ok(());
        }
        let nb = self.system.batteries.len();
        let soc = env.state().soc.clone();
        let options: Vec<Vec<(usize, f64)>> = (0..nb)
            .map(|b| reachable_targets(&self.system.batteries[b], t, self.system.dt, soc[b], &self.lattice.points[t + 1][b]))
            .collect();
        let combos: usize = options.iter().map(|o| o.len()).product();
        for mut code in 0..combos {
            let mut powers = vec![0.0; nb];
            for b in (0..nb).rev() {
                powers[b] = options[b][code % options[b].len()].1;
                code /= options[b].len();
            }
            let p_total: f64 = powers.iter().sum();
            let Some((_, d)) = self.stages[t].solve(p_total) else {
                continue;
            };
            let action = ActionVector {
                battery_power: powers,
                renewable_setpoint: d.renewable,
                controllable_setpoint: d.controllable,
                lt_quantity: d.lt,
            };
            let mut next = env.clone();
            let out = next.step(&action)?;
            self.path.push(action);
            self.visit(&next, acc + out.reward)?;
            self.path.pop();
        }
        Ok(())
    }
}

/// Exhaustive search over every path through the SOC lattices with `points`
/// points per battery, each step's non-battery decisions optimized exactly and
/// every reward paid by the environment.
pub fn enumerate_expost(system: &ValidatedSystem, trace: &ExogenousTrace, points: usize) -> Result<OraclePlan, OracleError> {
    if points < 2 {
        return Err(OracleError::Config("action_grid_points must be ≥ 2".into()));
    }
    let exponent = (system.batteries.len() * system.horizon) as f64;
    let size = (points as f64).powf(exponent);
    if size > ENUMERATION_BUDGET {
        return Err(OracleError::Budget(format!("{points}^{exponent} paths exceeds {ENUMERATION_BUDGET:e}")));
    }
    let trace = trace.window(0, system.horizon);
    let stages = step_data(system, &trace)
        .iter()
        .enumerate()
        .map(|(t, s)| StageSolver::new(system, t, &s.sample, s.lt_price, s.lt_cap))
        .collect();
    let grid = vec![points; system.batteries.len()];
    let mut search = Search {
        system,
        lattice: Lattice::new(system, 0, system.horizon, &grid),
        stages,
        best: None,
        path: Vec::new(),
    };
    let system_arc = Arc::new(system.clone());
    let env = Environment::new(system_arc.clone(), Arc::new(trace.clone()))?.without_log();
    search.visit(&env, 0.0)?;
    let (_, actions) = search.best.ok_or_else(|| OracleError::Infeasible("no lattice path reaches the horizon".into()))?;

    let mut env = Environment::new(system_arc, Arc::new(trace))?;
    let mut rewards = Vec::with_capacity(actions.len());
    for a in &actions {
        rewards.push(env.step(a)?.reward);
    }
    let mut value_to_go = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc += rewards[t];
        value_to_go[t] = acc;
    }
    let mut log = env.log();
    log.extra_column = Some(("value_to_go".into(), value_to_go.clone()));
    Ok(OraclePlan { total_value: log.total_reward(), actions, value_to_go, log, table: None })
}
