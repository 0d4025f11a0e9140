//! Backward dynamic programming over per-step SOC lattices.
//!
//! The lattice of battery `b` at instant `t` has `G_b` uniformly spaced points
//! spanning the battery's reachable envelope at `t` (a single point when the
//! envelope is pinned). Point `k` is `lo + ((hi − lo)·k)/(G − 1)`, which makes
//! the lattice for `2G − 1` points contain the one for `G` points bit for bit.

use rayon::prelude::*;

use crate::model::{BatteryModel, ExogenousSample, ValidatedSystem};
use crate::oracle::dispatch::StageSolver;
use crate::oracle::OracleError;

/// Largest number of joint lattice nodes per instant (2 batteries × 401 points).
pub const MAX_NODES_PER_LAYER: usize = 401 * 401;
/// Largest number of stored values over the whole table.
pub const MAX_TABLE_ENTRIES: usize = 32 << 20;

/// Relative tolerance for accepting a lattice target whose required power
/// sits on a power limit up to rounding.
const REACH_TOL: f64 = 1e-9;

/// Relative margin by which a later candidate must beat the incumbent;
/// closer values are ties and keep the earlier (lower target SOC) candidate,
/// so decisions never hinge on summation-order rounding.
const TIE_TOL: f64 = 1e-12;

/// Exogenous and long-term data of one step, canonical units.
#[derive(Debug, Clone)]
pub struct StepData {
    pub sample: ExogenousSample,
    pub lt_price: f64,
    pub lt_cap: f64,
}

pub fn lattice_points(lo: f64, hi: f64, g: usize) -> Vec<f64> {
    if lo == hi || g < 2 {
        return vec![lo];
    }
    let last = (g - 1) as f64;
    (0..g).map(|k| lo + ((hi - lo) * k as f64) / last).collect()
}

/// Per-instant, per-battery lattices over `[start, start + steps]`.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub start: usize,
    /// `points[k][b]` for instant `start + k`.
    pub points: Vec<Vec<Vec<f64>>>,
}

impl Lattice {
    pub fn new(system: &ValidatedSystem, start: usize, steps: usize, grid: &[usize]) -> Self {
        let points = (0..=steps)
            .map(|k| {
                let t = start + k;
                system
                    .batteries
                    .iter()
                    .zip(grid)
                    .map(|(b, &g)| lattice_points(b.envelope_lo[t], b.envelope_hi[t], g))
                    .collect()
            })
            .collect();
        Lattice { start, points }
    }

    pub fn nodes(&self, k: usize) -> usize {
        self.points[k].iter().map(|p| p.len()).product()
    }

    /// SOC vector of joint node `idx` at layer `k` (first battery varies slowest).
    pub fn soc(&self, k: usize, mut idx: usize) -> Vec<f64> {
        let layer = &self.points[k];
        let mut out = vec![0.0; layer.len()];
        for b in (0..layer.len()).rev() {
            let n = layer[b].len();
            out[b] = layer[b][idx % n];
            idx /= n;
        }
        out
    }

    fn index(&self, k: usize, per_battery: &[usize]) -> usize {
        let mut idx = 0;
        for (b, &i) in per_battery.iter().enumerate() {
            idx = idx * self.points[k][b].len() + i;
        }
        idx
    }
}

/// Lattice targets at `t + 1` reachable from SOC `s`, with the power that
/// reaches each.
pub fn reachable_targets(b: &BatteryModel, t: usize, dt: f64, s: f64, next: &[f64]) -> Vec<(usize, f64)> {
    let (p_lo, p_hi) = (b.power_lo[t], b.power_hi[t]);
    let low = s + b.soc_delta(p_hi, dt);
    let high = s + b.soc_delta(p_lo, dt);
    let tol = REACH_TOL * s.abs().max(low.abs()).max(high.abs()).max(1.0);
    let first = next.partition_point(|&x| x < low - tol);
    let end = next.partition_point(|&x| x <= high + tol);
    (first..end).map(|k| (k, b.power_for_delta(next[k] - s, dt).clamp(p_lo, p_hi))).collect()
}

/// Value-to-go tables of a solved window.
#[derive(Debug, Clone)]
pub struct DpSolution {
    pub lattice: Lattice,
    /// `values[k][node]`, `-inf` where no feasible continuation exists.
    pub values: Vec<Vec<f64>>,
    stages: Vec<StageSolver>,
    dt: f64,
}

/// Best continuation from one SOC vector.
#[derive(Debug, Clone)]
pub struct Choice {
    pub value: f64,
    pub battery_power: Vec<f64>,
    pub target: Vec<usize>,
}

pub fn check_memory(system: &ValidatedSystem, steps: usize, grid: &[usize]) -> Result<(), OracleError> {
    if grid.len() != system.batteries.len() {
        return Err(OracleError::Config(format!(
            "{} grid sizes for {} batteries",
            grid.len(),
            system.batteries.len()
        )));
    }
    let per_layer: usize = grid.iter().map(|&g| g.max(1)).product();
    if per_layer > MAX_NODES_PER_LAYER {
        return Err(OracleError::MemoryCap(format!("{per_layer} lattice nodes per step exceeds {MAX_NODES_PER_LAYER}")));
    }
    let total = per_layer.saturating_mul(steps + 1);
    if total > MAX_TABLE_ENTRIES {
        return Err(OracleError::MemoryCap(format!("{total} table entries exceeds {MAX_TABLE_ENTRIES}")));
    }
    Ok(())
}

impl DpSolution {
    /// Solve the window `[start, start + steps.len())` backwards with zero
    /// terminal value on the last layer.
    pub fn solve(system: &ValidatedSystem, start: usize, steps: &[StepData], grid: &[usize]) -> Result<Self, OracleError> {
        Self::solve_layers(system, start, steps, grid, 0)
    }

    /// Like [`Self::solve`] but leaves the first layer's table empty; enough
    /// for [`Self::best`] at `k = 0` from an off-lattice SOC.
    pub fn solve_from_state(
        system: &ValidatedSystem,
        start: usize,
        steps: &[StepData],
        grid: &[usize],
    ) -> Result<Self, OracleError> {
        Self::solve_layers(system, start, steps, grid, 1)
    }

    fn solve_layers(
        system: &ValidatedSystem,
        start: usize,
        steps: &[StepData],
        grid: &[usize],
        first: usize,
    ) -> Result<Self, OracleError> {
        check_memory(system, steps.len(), grid)?;
        let lattice = Lattice::new(system, start, steps.len(), grid);
        let stages: Vec<StageSolver> = steps
            .iter()
            .enumerate()
            .map(|(k, s)| StageSolver::new(system, start + k, &s.sample, s.lt_price, s.lt_cap))
            .collect();
        let n = steps.len();
        let mut values = vec![Vec::new(); n + 1];
        values[n] = vec![0.0; lattice.nodes(n)];
        let mut sol = DpSolution { lattice, values, stages, dt: system.dt };
        for k in (first.min(n)..n).rev() {
            let layer: Vec<f64> = (0..sol.lattice.nodes(k))
                .into_par_iter()
                .map(|node| {
                    let soc = sol.lattice.soc(k, node);
                    sol.best(system, k, &soc).map_or(f64::NEG_INFINITY, |c| c.value)
                })
                .collect();
            sol.values[k] = layer;
        }
        Ok(sol)
    }

    pub fn stage(&self, k: usize) -> &StageSolver {
        &self.stages[k]
    }

    /// Best transition from `soc` at window step `k` onto the lattice at
    /// `k + 1`; ties (within a relative 1e-12) keep the first combination in
    /// lexicographic target order.
    pub fn best(&self, system: &ValidatedSystem, k: usize, soc: &[f64]) -> Option<Choice> {
        let t = self.lattice.start + k;
        let nb = system.batteries.len();
        let targets: Vec<Vec<(usize, f64)>> = (0..nb)
            .map(|b| reachable_targets(&system.batteries[b], t, self.dt, soc[b], &self.lattice.points[k + 1][b]))
            .collect();
        if targets.iter().any(|v| v.is_empty()) {
            return None;
        }
        let next = &self.values[k + 1];
        let stage = &self.stages[k];
        let mut best: Option<Choice> = None;
        let mut cursor = vec![0usize; nb];
        loop {
            let mut p_total = 0.0;
            let mut cost = 0.0;
            let mut idx = vec![0usize; nb];
            for b in 0..nb {
                let (i, p) = targets[b][cursor[b]];
                idx[b] = i;
                p_total += p;
                cost += system.batteries[b].throughput_cost(p, self.dt);
            }
            let cont = next[self.lattice.index(k + 1, &idx)];
            if cont > f64::NEG_INFINITY {
                if let Some(v) = stage.value(p_total) {
                    let total = v - cost + cont;
                    if best.as_ref().is_none_or(|c| total - c.value > TIE_TOL * total.abs().max(c.value.abs())) {
                        best = Some(Choice {
                            value: total,
                            battery_power: (0..nb).map(|b| targets[b][cursor[b]].1).collect(),
                            target: idx,
                        });
                    }
                }
            }
            // Advance the mixed-radix cursor, last battery fastest.
            let mut b = nb;
            loop {
                if b == 0 {
                    return best;
                }
                b -= 1;
                cursor[b] += 1;
                if cursor[b] < targets[b].len() {
                    break;
                }
                cursor[b] = 0;
            }
        }
    }
}
