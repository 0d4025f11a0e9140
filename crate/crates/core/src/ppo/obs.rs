//! Observation features and their frozen scaling statistics.

use serde::{Deserialize, Serialize};

use crate::exogenous::hour_of_day;
use crate::model::{SystemState, ValidatedSystem};

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Freeze into an affine feature map. A (numerically) constant feature
    /// maps to zero.
    pub fn freeze(&self) -> FeatureScale {
        let var = if self.count > 1 { self.m2 / self.count as f64 } else { 0.0 };
        let std = var.sqrt();
        let floor = 1e-9 * self.mean.abs();
        let std = if std > floor && std > 0.0 {
            std
        } else if self.mean != 0.0 {
            self.mean.abs()
        } else {
            1.0
        };
        FeatureScale { mean: self.mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureScale {
    pub mean: f64,
    pub std: f64,
}

impl FeatureScale {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Frozen statistics of the market features, in internal units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsScaler {
    pub rt_price: FeatureScale,
    pub lt_price: FeatureScale,
    pub lt_cap: FeatureScale,
}

/// Accumulates [`ObsScaler`] statistics from revealed states.
#[derive(Debug, Clone, Default)]
pub struct ScalerBuilder {
    rt_price: RunningStats,
    lt_price: RunningStats,
    lt_cap: RunningStats,
}

impl ScalerBuilder {
    pub fn push(&mut self, rt_price: f64, lt_price: f64, lt_cap: f64) {
        self.rt_price.push(rt_price);
        self.lt_price.push(lt_price);
        self.lt_cap.push(lt_cap);
    }

    pub fn count(&self) -> u64 {
        self.rt_price.count()
    }

    pub fn freeze(&self) -> ObsScaler {
        ObsScaler { rt_price: self.rt_price.freeze(), lt_price: self.lt_price.freeze(), lt_cap: self.lt_cap.freeze() }
    }
}

/// Length of the observation vector: normalized SOC per battery,
/// availability per renewable, three scaled market terms, time-of-day sine
/// and cosine, and the elapsed fraction of the horizon.
pub fn obs_dim(system: &ValidatedSystem) -> usize {
    system.batteries.len() + system.renewables.len() + 6
}

/// Observation of `state`.
pub fn observe(system: &ValidatedSystem, scaler: &ObsScaler, state: &SystemState) -> Vec<f64> {
    let t = state.t.min(system.horizon);
    let mut obs = Vec::with_capacity(obs_dim(system));
    for (b, &soc) in system.batteries.iter().zip(&state.soc) {
        let (lo, hi) = (b.soc_min[t], b.soc_max[t]);
        obs.push(if hi > lo { ((soc - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 });
    }
    for (r, &a) in system.renewables.iter().zip(&state.revealed.avail) {
        obs.push(if r.nameplate > 0.0 { a / r.nameplate } else { 0.0 });
    }
    obs.push(scaler.rt_price.apply(state.revealed.rt_price));
    obs.push(scaler.lt_price.apply(state.lt_price));
    obs.push(scaler.lt_cap.apply(state.lt_cap));
    let angle = 2.0 * std::f64::consts::PI * hour_of_day(t, system.dt) / 24.0;
    obs.push(angle.sin());
    obs.push(angle.cos());
    obs.push(t as f64 / system.horizon as f64);
    obs
}
