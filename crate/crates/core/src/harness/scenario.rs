//! Built-in scenarios and the policy roster grammar.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::exogenous::{ExogenousSpec, PriceKind, PriceProcessParams, RenewableProcessParams};
use crate::model::{BatterySpec, MarketSpec, Profile, RenewableSpec, ShortfallMode, SystemConfig, TimeGrid, ValidatedSystem};
use crate::mpc::{ForecastKind, MpcConfig};

/// Lattice points per battery used by the oracle and MPC when none is
/// given. The DP cost grows with the lattice size to the power of twice the
/// battery count, so the default shrinks as batteries are added.
pub fn default_grid(batteries: usize) -> usize {
    match batteries {
        0 | 1 => 101,
        2 => 21,
        _ => 11,
    }
}

/// A receding-horizon roster entry. Without a grid the MPC uses
/// [`default_grid`] for the system it runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MpcSpec {
    /// `usize::MAX` for "to the end of the episode".
    pub horizon: usize,
    pub forecaster: ForecastKind,
    pub grid: Option<usize>,
}

impl MpcSpec {
    pub fn config(&self, system: &ValidatedSystem) -> MpcConfig {
        MpcConfig {
            horizon: self.horizon,
            forecaster: self.forecaster,
            inner_soc_grid: self.grid.unwrap_or_else(|| default_grid(system.batteries.len())),
        }
    }
}

/// A policy the harness can run, written `random`, `idle`,
/// `mpc:<perfect|persistence|diurnal>:<H|T>[:<grid>]` or `ppo:<path>`.
/// `T` as the MPC horizon means "to the end of the episode".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicySpec {
    Random,
    Idle,
    Mpc(MpcSpec),
    Ppo(PathBuf),
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Random => write!(f, "random"),
            PolicySpec::Idle => write!(f, "idle"),
            PolicySpec::Mpc(c) => {
                let kind = match c.forecaster {
                    ForecastKind::Perfect => "perfect",
                    ForecastKind::Persistence => "persistence",
                    ForecastKind::Diurnal => "diurnal",
                };
                let h = if c.horizon == usize::MAX { "T".to_string() } else { c.horizon.to_string() };
                write!(f, "mpc:{kind}:{h}")?;
                if let Some(g) = c.grid {
                    write!(f, ":{g}")?;
                }
                Ok(())
            }
            PolicySpec::Ppo(p) => write!(f, "ppo:{}", p.display()),
        }
    }
}

impl FromStr for PolicySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("unknown policy {s:?}; expected random, idle, mpc:<perfect|persistence|diurnal>:<H|T>[:grid] or ppo:<path>");
        match s {
            "random" => return Ok(PolicySpec::Random),
            "idle" => return Ok(PolicySpec::Idle),
            _ => {}
        }
        if let Some(path) = s.strip_prefix("ppo:") {
            if path.is_empty() {
                return Err(bad());
            }
            return Ok(PolicySpec::Ppo(PathBuf::from(path)));
        }
        let Some(rest) = s.strip_prefix("mpc:") else {
            return Err(bad());
        };
        let parts: Vec<&str> = rest.split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(bad());
        }
        let forecaster = match parts[0] {
            "perfect" => ForecastKind::Perfect,
            "persistence" => ForecastKind::Persistence,
            "diurnal" => ForecastKind::Diurnal,
            _ => return Err(bad()),
        };
        let horizon = match parts[1] {
            "T" => usize::MAX,
            h => match h.parse::<usize>() {
                Ok(h) if h >= 1 => h,
                _ => return Err(format!("MPC horizon {h:?} must be a positive integer or T")),
            },
        };
        let grid = match parts.get(2) {
            None => None,
            Some(g) => match g.parse::<usize>() {
                Ok(g) if g >= 2 => Some(g),
                _ => return Err(format!("MPC grid {g:?} must be an integer ≥ 2")),
            },
        };
        Ok(PolicySpec::Mpc(MpcSpec { horizon, forecaster, grid }))
    }
}

impl TryFrom<String> for PolicySpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<PolicySpec> for String {
    fn from(p: PolicySpec) -> String {
        p.to_string()
    }
}

/// A system, the processes that generate its traces, and the policies to
/// compare on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub system: SystemConfig,
    pub exogenous: ExogenousSpec,
    pub roster: Vec<PolicySpec>,
}

impl Scenario {
    pub fn builtin(name: &str) -> Option<Scenario> {
        match name {
            "casestudy" => Some(casestudy()),
            "smoothed" => Some(smoothed()),
            "smoothed-sine" => Some(smoothed_sine()),
            _ => None,
        }
    }

    pub const BUILTIN: [&'static str; 3] = ["casestudy", "smoothed", "smoothed-sine"];

    /// The same scenario over a different number of steps. Only meaningful
    /// when every profile is a scalar.
    pub fn with_horizon(mut self, steps: usize) -> Scenario {
        self.system.time.horizon_steps = steps;
        self
    }

    /// A bare system configuration with default processes: an exchange
    /// price and a solar profile at each renewable's nameplate.
    pub fn from_system(name: &str, system: SystemConfig) -> Scenario {
        let renewables = system.renewables.iter().map(|r| RenewableProcessParams::solar(r.nameplate)).collect();
        Scenario {
            name: name.to_string(),
            system,
            exogenous: ExogenousSpec { price: PriceProcessParams::exchange(), renewables },
            roster: default_roster(),
        }
    }
}

fn default_roster() -> Vec<PolicySpec> {
    vec![
        PolicySpec::Random,
        PolicySpec::Idle,
        PolicySpec::Mpc(MpcSpec { horizon: 24, forecaster: ForecastKind::Persistence, grid: None }),
        PolicySpec::Mpc(MpcSpec { horizon: usize::MAX, forecaster: ForecastKind::Perfect, grid: None }),
    ]
}

#[allow(clippy::too_many_arguments)]
fn battery(name: &str, capacity: f64, power: f64, eta: f64, initial: f64, cost: f64) -> BatterySpec {
    BatterySpec {
        name: name.into(),
        soc_min: Profile::Scalar(0.0),
        soc_max: Profile::Scalar(capacity),
        charge_min: Profile::Scalar(0.0),
        charge_max: Profile::Scalar(power),
        discharge_min: Profile::Scalar(0.0),
        discharge_max: Profile::Scalar(power),
        eta_charge: eta,
        eta_discharge: eta,
        initial_soc: initial,
        terminal_soc: None,
        cost_per_throughput: cost,
    }
}

/// One week at hourly steps: a large slow battery, a small fast one and a
/// curtailable solar plant selling into an exchange market and a capped
/// long-term contract with a linear shortfall penalty. Purchases are not
/// allowed. The numbers are illustrative.
pub fn casestudy() -> Scenario {
    let system = SystemConfig {
        time: TimeGrid { horizon_steps: 168, step_duration: 1.0 },
        batteries: vec![
            battery("bulk", 4.0e6, 250.0e3, 0.92, 2.0e6, 1.0),
            battery("fast", 0.5e6, 500.0e3, 0.95, 0.25e6, 4.0),
        ],
        renewables: vec![RenewableSpec {
            name: "solar".into(),
            nameplate: 1.5e6,
            curtailable: true,
            curtail_penalty_a: 1e-10,
        }],
        controllables: vec![],
        market: MarketSpec {
            lt_price: Profile::Scalar(42.0),
            lt_cap: Profile::Scalar(150.0e3),
            lt_shortfall_mode: ShortfallMode::LinearPenalty,
            lt_penalty_rate: 15.0,
            allow_rt_purchase: false,
        },
    };
    Scenario {
        name: "casestudy".into(),
        system,
        exogenous: ExogenousSpec {
            price: PriceProcessParams::exchange(),
            renewables: vec![RenewableProcessParams::solar(1.5e6)],
        },
        roster: default_roster(),
    }
}

/// Two days at hourly steps: one battery with equal efficiencies, solar that
/// cannot be curtailed, a long-term channel without shortfall penalty, and
/// purchases allowed, so the battery's only job is price arbitrage.
pub fn smoothed() -> Scenario {
    let system = SystemConfig {
        time: TimeGrid { horizon_steps: 48, step_duration: 1.0 },
        batteries: vec![battery("battery", 1.0e6, 250.0e3, 0.95, 0.5e6, 0.0)],
        renewables: vec![RenewableSpec {
            name: "solar".into(),
            nameplate: 200.0e3,
            curtailable: false,
            curtail_penalty_a: 0.0,
        }],
        controllables: vec![],
        market: MarketSpec {
            lt_price: Profile::Scalar(35.0),
            lt_cap: Profile::Scalar(50.0e3),
            lt_shortfall_mode: ShortfallMode::None,
            lt_penalty_rate: 0.0,
            allow_rt_purchase: true,
        },
    };
    Scenario {
        name: "smoothed".into(),
        system,
        exogenous: ExogenousSpec {
            price: PriceProcessParams {
                kind: PriceKind::Exchange,
                base: 40.0,
                daily_amplitude: 15.0,
                ar_coeff: 0.8,
                noise_std: 5.0,
                spike_prob: 0.0,
                spike_cap: 0.0,
                floor: 0.0,
            },
            renewables: vec![RenewableProcessParams::solar(200.0e3)],
        },
        roster: default_roster(),
    }
}

/// [`smoothed`] with a noiseless sinusoidal price; traces differ only in
/// their cloud cover.
pub fn smoothed_sine() -> Scenario {
    let mut s = smoothed();
    s.name = "smoothed-sine".into();
    s.exogenous.price.noise_std = 0.0;
    s
}
