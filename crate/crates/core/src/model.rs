//! Domain types shared by every other module: the system configuration
//! document, its validation into an immutable [`ValidatedSystem`], and the
//! per-step state, exogenous sample and action vectors.
//!
//! Canonical internal units are W, Wh, hours and currency/Wh. The
//! configuration document carries prices in currency/MWh; they are converted
//! once, in [`validate`], with [`PRICE_PER_MWH_TO_PER_WH`].

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// currency/MWh → currency/Wh.
pub const PRICE_PER_MWH_TO_PER_WH: f64 = 1e-6;
/// currency/Wh → currency/MWh.
pub const PRICE_PER_WH_TO_PER_MWH: f64 = 1e6;

/// Hard ceiling on the horizon accepted by [`validate`].
pub const MAX_HORIZON_STEPS: usize = 1_000_000;

/// A bound that is either constant over the horizon or given per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Scalar(f64),
    Series(Vec<f64>),
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Scalar(0.0)
    }
}

impl From<f64> for Profile {
    fn from(v: f64) -> Self {
        Profile::Scalar(v)
    }
}

impl From<Vec<f64>> for Profile {
    fn from(v: Vec<f64>) -> Self {
        Profile::Series(v)
    }
}

impl Profile {
    /// Broadcast to `n` values. A series of length `n - 1` is extended with
    /// its last value (used for SOC bounds, which live on `T + 1` instants).
    fn resolve(&self, n: usize, allow_short_by_one: bool) -> Option<Vec<f64>> {
        match self {
            Profile::Scalar(v) => Some(vec![*v; n]),
            Profile::Series(v) if v.len() == n => Some(v.clone()),
            Profile::Series(v) if allow_short_by_one && n >= 2 && v.len() == n - 1 => {
                let mut out = v.clone();
                out.push(*v.last().unwrap());
                Some(out)
            }
            Profile::Series(_) => None,
        }
    }

    fn len_hint(&self) -> usize {
        match self {
            Profile::Scalar(_) => 1,
            Profile::Series(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub horizon_steps: usize,
    /// Hours per step.
    pub step_duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySpec {
    pub name: String,
    /// Wh. Scalar, or a series over the `T + 1` SOC instants (length `T` is
    /// accepted and extended with its last value).
    pub soc_min: Profile,
    pub soc_max: Profile,
    /// W, per step.
    #[serde(default)]
    pub charge_min: Profile,
    pub charge_max: Profile,
    #[serde(default)]
    pub discharge_min: Profile,
    pub discharge_max: Profile,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    /// Wh.
    pub initial_soc: f64,
    /// Wh. When set, the SOC at the end of the horizon is pinned to this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_soc: Option<f64>,
    /// currency/MWh of throughput (charge plus discharge energy).
    #[serde(default)]
    pub cost_per_throughput: f64,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewableSpec {
    pub name: String,
    /// W.
    pub nameplate: f64,
    #[serde(default = "default_true")]
    pub curtailable: bool,
    /// currency/(W²·h).
    #[serde(default)]
    pub curtail_penalty_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllableSpec {
    pub name: String,
    /// Signed W, positive is injection into the microgrid bus.
    pub inject_min: Profile,
    pub inject_max: Profile,
}

/// Shortfall rule `g(z)` applied when the long-term delivery falls below the
/// committed cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortfallMode {
    LinearPenalty,
    Stepwise,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    /// currency/MWh, per step.
    #[serde(default)]
    pub lt_price: Profile,
    /// Wh, per step.
    #[serde(default)]
    pub lt_cap: Profile,
    #[serde(default)]
    pub lt_shortfall_mode: ShortfallMode,
    /// currency/MWh of shortfall.
    #[serde(default)]
    pub lt_penalty_rate: f64,
    #[serde(default = "default_true")]
    pub allow_rt_purchase: bool,
}

impl Default for MarketSpec {
    fn default() -> Self {
        MarketSpec {
            lt_price: Profile::Scalar(0.0),
            lt_cap: Profile::Scalar(0.0),
            lt_shortfall_mode: ShortfallMode::None,
            lt_penalty_rate: 0.0,
            allow_rt_purchase: true,
        }
    }
}

/// The configuration document, field for field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub time: TimeGrid,
    #[serde(default)]
    pub batteries: Vec<BatterySpec>,
    #[serde(default)]
    pub renewables: Vec<RenewableSpec>,
    #[serde(default)]
    pub controllables: Vec<ControllableSpec>,
    #[serde(default)]
    pub market: MarketSpec,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed configuration document: {0}")]
    Parse(String),
    #[error("configuration schema error: {0}")]
    Schema(String),
    #[error("invalid configuration:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

/// A violated invariant, with a path to the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Parse a configuration document and validate it.
///
/// Syntax errors map to [`ConfigError::Parse`], missing/unknown keys and
/// wrong types to [`ConfigError::Schema`], and broken invariants to
/// [`ConfigError::Invalid`] with every violation listed.
pub fn load_config(document: &str) -> Result<SystemConfig, ConfigError> {
    let config: SystemConfig = serde_json::from_str(document).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => ConfigError::Schema(e.to_string()),
            _ => ConfigError::Parse(e.to_string()),
        }
    })?;
    validate(&config).map_err(ConfigError::Invalid)?;
    Ok(config)
}

/// Serialize to the document form accepted by [`load_config`].
pub fn serialize_config(config: &SystemConfig) -> String {
    serde_json::to_string_pretty(config).expect("SystemConfig serializes")
}

/// Returns `(charge, discharge)` for a signed battery power (positive =
/// discharge). At most one of the two is nonzero.
pub fn signed_split(p: f64) -> (f64, f64) {
    if p > 0.0 {
        (0.0, p)
    } else if p < 0.0 {
        (-p, 0.0)
    } else {
        (0.0, 0.0)
    }
}

/// Battery parameters resolved to per-step arrays in canonical units.
#[derive(Debug, Clone)]
pub struct BatteryModel {
    pub name: String,
    /// Length `T + 1`.
    pub soc_min: Vec<f64>,
    pub soc_max: Vec<f64>,
    /// Signed power bounds per step, length `T`. Positive is discharge.
    pub power_lo: Vec<f64>,
    pub power_hi: Vec<f64>,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub initial_soc: f64,
    pub terminal_soc: Option<f64>,
    /// currency/Wh of throughput.
    pub cost_per_throughput: f64,
    /// Backward-reachable SOC interval per instant, length `T + 1`: from any
    /// SOC inside `[envelope_lo[t], envelope_hi[t]]` some admissible action
    /// keeps the battery inside the envelope at `t + 1`, down to the end of
    /// the horizon (where the terminal pin, if any, applies).
    pub envelope_lo: Vec<f64>,
    pub envelope_hi: Vec<f64>,
}

impl BatteryModel {
    /// SOC change over one step for signed power `p`.
    pub fn soc_delta(&self, p: f64, dt: f64) -> f64 {
        let (c, d) = signed_split(p);
        if c > 0.0 {
            self.eta_charge * c * dt
        } else if d > 0.0 {
            -(d * dt / self.eta_discharge)
        } else {
            0.0
        }
    }

    /// Signed power producing SOC change `delta` over one step; inverse of
    /// [`Self::soc_delta`].
    pub fn power_for_delta(&self, delta: f64, dt: f64) -> f64 {
        if delta > 0.0 {
            -(delta / (self.eta_charge * dt))
        } else if delta < 0.0 {
            (-delta) * self.eta_discharge / dt
        } else {
            0.0
        }
    }

    /// Power interval at step `t` from SOC `soc` that keeps the next SOC inside
    /// the envelope. May be empty (lo > hi) by rounding when the envelope is
    /// pinned; callers resolve that.
    pub fn power_bounds(&self, t: usize, soc: f64, dt: f64) -> (f64, f64) {
        let lo_next = self.envelope_lo[t + 1];
        let hi_next = self.envelope_hi[t + 1];
        let hi = self.power_hi[t].min(self.power_for_delta(lo_next - soc, dt));
        let lo = self.power_lo[t].max(self.power_for_delta(hi_next - soc, dt));
        (lo, hi)
    }

    pub fn throughput_cost(&self, p: f64, dt: f64) -> f64 {
        let (c, d) = signed_split(p);
        self.cost_per_throughput * (c + d) * dt
    }
}

#[derive(Debug, Clone)]
pub struct RenewableModel {
    pub name: String,
    pub nameplate: f64,
    pub curtailable: bool,
    pub curtail_penalty_a: f64,
}

#[derive(Debug, Clone)]
pub struct ControllableModel {
    pub name: String,
    pub inject_min: Vec<f64>,
    pub inject_max: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MarketModel {
    /// currency/Wh, length `T`.
    pub lt_price: Vec<f64>,
    /// The same prices in currency/MWh, as configured.
    pub lt_price_mwh: Vec<f64>,
    /// Wh, length `T`.
    pub lt_cap: Vec<f64>,
    pub shortfall_mode: ShortfallMode,
    /// currency/Wh.
    pub penalty_rate: f64,
    pub allow_rt_purchase: bool,
}

/// An immutable, validated system in canonical units.
#[derive(Debug, Clone)]
pub struct ValidatedSystem {
    config: SystemConfig,
    pub horizon: usize,
    pub dt: f64,
    pub batteries: Vec<BatteryModel>,
    pub renewables: Vec<RenewableModel>,
    pub controllables: Vec<ControllableModel>,
    pub market: MarketModel,
}

impl ValidatedSystem {
    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn layout(&self) -> ActionLayout {
        ActionLayout {
            batteries: self.batteries.len(),
            renewables: self.renewables.len(),
            controllables: self.controllables.len(),
        }
    }

    pub fn initial_soc(&self) -> Vec<f64> {
        self.batteries.iter().map(|b| b.initial_soc).collect()
    }

    /// Static per-coordinate action box: the widest bounds over the horizon,
    /// ignoring state-dependent headroom and the purchase coupling.
    pub fn static_action_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.layout().dim());
        let mut hi = Vec::with_capacity(self.layout().dim());
        for b in &self.batteries {
            lo.push(b.power_lo.iter().copied().fold(f64::INFINITY, f64::min));
            hi.push(b.power_hi.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        for r in &self.renewables {
            lo.push(0.0);
            hi.push(r.nameplate);
        }
        for c in &self.controllables {
            lo.push(c.inject_min.iter().copied().fold(f64::INFINITY, f64::min));
            hi.push(c.inject_max.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        lo.push(0.0);
        hi.push(self.market.lt_cap.iter().copied().fold(0.0, f64::max));
        (lo, hi)
    }

    /// Names of the flattened action coordinates.
    pub fn action_labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.layout().dim());
        out.extend(self.batteries.iter().map(|b| format!("battery_power[{}]", b.name)));
        out.extend(self.renewables.iter().map(|r| format!("renewable_setpoint[{}]", r.name)));
        out.extend(self.controllables.iter().map(|c| format!("controllable_setpoint[{}]", c.name)));
        out.push("lt_quantity".to_string());
        out
    }
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn fail(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation { path: path.into(), message: message.into() });
    }

    fn check(&mut self, ok: bool, path: &str, message: &str) {
        if !ok {
            self.fail(path, message);
        }
    }

    fn profile(&mut self, p: &Profile, n: usize, short_ok: bool, path: &str) -> Option<Vec<f64>> {
        match p.resolve(n, short_ok) {
            Some(v) => {
                if v.iter().all(|x| x.is_finite()) {
                    Some(v)
                } else {
                    self.fail(path, "values must be finite");
                    None
                }
            }
            None => {
                let expect = if short_ok { format!("{} or {}", n - 1, n) } else { n.to_string() };
                self.fail(path, format!("series length {} does not match horizon (expected {expect})", p.len_hint()));
                None
            }
        }
    }

    /// First index where `pred(a[t], b[t])` fails.
    fn pairwise(&mut self, a: &[f64], b: &[f64], path: &str, message: &str, pred: impl Fn(f64, f64) -> bool) {
        if let Some(t) = (0..a.len()).find(|&t| !pred(a[t], b[t])) {
            self.fail(format!("{path}[{t}]"), message);
        }
    }
}

fn name_ok(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

/// Check every invariant of `config`, returning all violations at once.
pub fn validate(config: &SystemConfig) -> Result<ValidatedSystem, Vec<Violation>> {
    let mut ck = Checker { violations: Vec::new() };
    let t_len = config.time.horizon_steps;
    let dt = config.time.step_duration;
    ck.check(t_len >= 1, "time.horizon_steps", "horizon_steps ≥ 1");
    ck.check(t_len <= MAX_HORIZON_STEPS, "time.horizon_steps", "horizon_steps too large");
    ck.check(dt.is_finite() && dt > 0.0, "time.step_duration", "step_duration > 0");
    if !ck.violations.is_empty() {
        return Err(ck.violations);
    }

    ck.check(
        !(config.batteries.is_empty() && config.renewables.is_empty() && config.controllables.is_empty()),
        "",
        "at least one battery, renewable or controllable is required",
    );
    let mut seen = HashSet::new();
    let names = config
        .batteries
        .iter()
        .map(|b| ("batteries", &b.name))
        .chain(config.renewables.iter().map(|r| ("renewables", &r.name)))
        .chain(config.controllables.iter().map(|c| ("controllables", &c.name)));
    for (i, (group, name)) in names.enumerate() {
        if !name_ok(name) {
            ck.fail(format!("{group}.name"), format!("name {name:?} must be nonempty ASCII [A-Za-z0-9_.-]"));
        }
        if !seen.insert(name.clone()) {
            ck.fail(format!("{group}.name"), format!("duplicate name {name:?} (device #{i})"));
        }
    }

    let mut batteries = Vec::new();
    for (i, b) in config.batteries.iter().enumerate() {
        let p = format!("batteries[{i}]");
        if let Some(m) = validate_battery(&mut ck, b, &p, t_len, dt) {
            batteries.push(m);
        }
    }

    let mut renewables = Vec::new();
    for (i, r) in config.renewables.iter().enumerate() {
        let p = format!("renewables[{i}]");
        ck.check(r.nameplate.is_finite() && r.nameplate > 0.0, &format!("{p}.nameplate"), "nameplate > 0");
        ck.check(
            r.curtail_penalty_a.is_finite() && r.curtail_penalty_a >= 0.0,
            &format!("{p}.curtail_penalty_a"),
            "curtail_penalty_a ≥ 0",
        );
        renewables.push(RenewableModel {
            name: r.name.clone(),
            nameplate: r.nameplate,
            curtailable: r.curtailable,
            curtail_penalty_a: r.curtail_penalty_a,
        });
    }

    let mut controllables = Vec::new();
    for (i, c) in config.controllables.iter().enumerate() {
        let p = format!("controllables[{i}]");
        let lo = ck.profile(&c.inject_min, t_len, false, &format!("{p}.inject_min"));
        let hi = ck.profile(&c.inject_max, t_len, false, &format!("{p}.inject_max"));
        if let (Some(lo), Some(hi)) = (lo, hi) {
            ck.pairwise(&lo, &hi, &format!("{p}.inject_min"), "inject_min ≤ inject_max", |a, b| a <= b);
            controllables.push(ControllableModel { name: c.name.clone(), inject_min: lo, inject_max: hi });
        }
    }

    let m = &config.market;
    let lt_price = ck.profile(&m.lt_price, t_len, false, "market.lt_price");
    let lt_cap = ck.profile(&m.lt_cap, t_len, false, "market.lt_cap");
    if let Some(v) = &lt_price {
        if let Some(t) = v.iter().position(|&x| x < 0.0) {
            ck.fail(format!("market.lt_price[{t}]"), "lt_price ≥ 0 (shortfall rule must be increasing)");
        }
    }
    if let Some(v) = &lt_cap {
        if let Some(t) = v.iter().position(|&x| x < 0.0) {
            ck.fail(format!("market.lt_cap[{t}]"), "lt_cap ≥ 0");
        }
    }
    ck.check(
        m.lt_penalty_rate.is_finite() && m.lt_penalty_rate >= 0.0,
        "market.lt_penalty_rate",
        "lt_penalty_rate ≥ 0",
    );

    if !ck.violations.is_empty() {
        return Err(ck.violations);
    }
    if !m.allow_rt_purchase {
        // Without purchases every step must stay feasible even with zero
        // renewable output: the least discharge available from the lowest
        // reachable SOC plus the most the controllables can inject.
        for t in 0..t_len {
            let batt: f64 = batteries.iter().map(|b| b.power_bounds(t, b.envelope_lo[t], dt).1).sum();
            let ctl: f64 = controllables.iter().map(|c| c.inject_max[t]).sum();
            if batt + ctl < 0.0 {
                ck.fail(
                    "market.allow_rt_purchase",
                    format!(
                        "purchases are disallowed but step {t} can require {} W of net charging that no device is guaranteed to supply",
                        -(batt + ctl)
                    ),
                );
                return Err(ck.violations);
            }
        }
    }
    let lt_price_mwh = lt_price.unwrap();
    let market = MarketModel {
        lt_price: lt_price_mwh.iter().map(|x| x * PRICE_PER_MWH_TO_PER_WH).collect(),
        lt_price_mwh,
        lt_cap: lt_cap.unwrap(),
        shortfall_mode: m.lt_shortfall_mode,
        penalty_rate: m.lt_penalty_rate * PRICE_PER_MWH_TO_PER_WH,
        allow_rt_purchase: m.allow_rt_purchase,
    };
    Ok(ValidatedSystem {
        config: config.clone(),
        horizon: t_len,
        dt,
        batteries,
        renewables,
        controllables,
        market,
    })
}

fn validate_battery(ck: &mut Checker, b: &BatterySpec, p: &str, t_len: usize, dt: f64) -> Option<BatteryModel> {
    let before = ck.violations.len();
    let soc_min = ck.profile(&b.soc_min, t_len + 1, true, &format!("{p}.soc_min"));
    let soc_max = ck.profile(&b.soc_max, t_len + 1, true, &format!("{p}.soc_max"));
    let cmin = ck.profile(&b.charge_min, t_len, false, &format!("{p}.charge_min"));
    let cmax = ck.profile(&b.charge_max, t_len, false, &format!("{p}.charge_max"));
    let dmin = ck.profile(&b.discharge_min, t_len, false, &format!("{p}.discharge_min"));
    let dmax = ck.profile(&b.discharge_max, t_len, false, &format!("{p}.discharge_max"));
    for (eta, key) in [(b.eta_charge, "eta_charge"), (b.eta_discharge, "eta_discharge")] {
        ck.check(eta.is_finite() && eta > 0.0 && eta <= 1.0, &format!("{p}.{key}"), &format!("0 < {key} ≤ 1"));
    }
    ck.check(
        b.cost_per_throughput.is_finite() && b.cost_per_throughput >= 0.0,
        &format!("{p}.cost_per_throughput"),
        "cost_per_throughput ≥ 0",
    );
    ck.check(b.initial_soc.is_finite(), &format!("{p}.initial_soc"), "initial_soc must be finite");
    let (soc_min, soc_max, cmin, cmax, dmin, dmax) = (soc_min?, soc_max?, cmin?, cmax?, dmin?, dmax?);

    ck.pairwise(&soc_min, &soc_min, &format!("{p}.soc_min"), "soc_min ≥ 0", |a, _| a >= 0.0);
    ck.pairwise(&soc_min, &soc_max, &format!("{p}.soc_min"), "soc_min ≤ soc_max", |a, b| a <= b);
    ck.pairwise(&cmin, &cmin, &format!("{p}.charge_min"), "charge_min ≥ 0", |a, _| a >= 0.0);
    ck.pairwise(&cmin, &cmax, &format!("{p}.charge_min"), "charge_min ≤ charge_max", |a, b| a <= b);
    ck.pairwise(&dmin, &dmin, &format!("{p}.discharge_min"), "discharge_min ≥ 0", |a, _| a >= 0.0);
    ck.pairwise(&dmin, &dmax, &format!("{p}.discharge_min"), "discharge_min ≤ discharge_max", |a, b| a <= b);
    ck.pairwise(
        &cmin,
        &dmin,
        &format!("{p}.charge_min"),
        "charge_min and discharge_min cannot both be positive (no simultaneous charge and discharge)",
        |a, b| a == 0.0 || b == 0.0,
    );
    ck.check(
        soc_min[0] <= b.initial_soc && b.initial_soc <= soc_max[0],
        &format!("{p}.initial_soc"),
        "soc_min ≤ initial_soc ≤ soc_max",
    );
    if let Some(term) = b.terminal_soc {
        ck.check(
            term.is_finite() && soc_min[t_len] <= term && term <= soc_max[t_len],
            &format!("{p}.terminal_soc"),
            "soc_min ≤ terminal_soc ≤ soc_max at the end of the horizon",
        );
    }
    if ck.violations.len() > before {
        return None;
    }

    let mut power_lo = Vec::with_capacity(t_len);
    let mut power_hi = Vec::with_capacity(t_len);
    for t in 0..t_len {
        if cmin[t] > 0.0 {
            power_lo.push(-cmax[t]);
            power_hi.push(-cmin[t]);
        } else if dmin[t] > 0.0 {
            power_lo.push(dmin[t]);
            power_hi.push(dmax[t]);
        } else {
            power_lo.push(-cmax[t]);
            power_hi.push(dmax[t]);
        }
    }
    let mut model = BatteryModel {
        name: b.name.clone(),
        soc_min,
        soc_max,
        power_lo,
        power_hi,
        eta_charge: b.eta_charge,
        eta_discharge: b.eta_discharge,
        initial_soc: b.initial_soc,
        terminal_soc: b.terminal_soc,
        cost_per_throughput: b.cost_per_throughput * PRICE_PER_MWH_TO_PER_WH,
        envelope_lo: vec![0.0; t_len + 1],
        envelope_hi: vec![0.0; t_len + 1],
    };

    // Backward reachability.
    let (mut lo, mut hi) = (model.soc_min[t_len], model.soc_max[t_len]);
    if let Some(term) = model.terminal_soc {
        lo = term;
        hi = term;
    }
    model.envelope_lo[t_len] = lo;
    model.envelope_hi[t_len] = hi;
    for t in (0..t_len).rev() {
        let most_charge = model.soc_delta(model.power_lo[t], dt);
        let most_discharge = model.soc_delta(model.power_hi[t], dt);
        let new_lo = model.soc_min[t].max(lo - most_charge);
        let new_hi = model.soc_max[t].min(hi - most_discharge);
        if new_lo > new_hi {
            ck.fail(
                p.to_string(),
                format!("no admissible SOC at step {t}: bounds and power limits cannot reach the SOC range of step {}", t + 1),
            );
            return None;
        }
        lo = new_lo;
        hi = new_hi;
        model.envelope_lo[t] = lo;
        model.envelope_hi[t] = hi;
    }
    if !(lo <= model.initial_soc && model.initial_soc <= hi) {
        ck.fail(
            format!("{p}.initial_soc"),
            format!("initial_soc outside the reachable range [{lo}, {hi}] implied by later bounds and terminal_soc"),
        );
        return None;
    }
    Some(model)
}

/// Sizes of the action vector blocks; the flattened order is batteries,
/// renewables, controllables, then the long-term quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionLayout {
    pub batteries: usize,
    pub renewables: usize,
    pub controllables: usize,
}

impl ActionLayout {
    pub fn dim(&self) -> usize {
        self.batteries + self.renewables + self.controllables + 1
    }

    pub fn lt_index(&self) -> usize {
        self.batteries + self.renewables + self.controllables
    }
}

/// One step's decision `U_t`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionVector {
    /// Signed W, positive = discharge.
    pub battery_power: Vec<f64>,
    /// W.
    pub renewable_setpoint: Vec<f64>,
    /// Signed W.
    pub controllable_setpoint: Vec<f64>,
    /// Wh committed to the long-term market this step.
    pub lt_quantity: f64,
}

impl ActionVector {
    pub fn zeros(layout: ActionLayout) -> Self {
        ActionVector {
            battery_power: vec![0.0; layout.batteries],
            renewable_setpoint: vec![0.0; layout.renewables],
            controllable_setpoint: vec![0.0; layout.controllables],
            lt_quantity: 0.0,
        }
    }

    pub fn layout(&self) -> ActionLayout {
        ActionLayout {
            batteries: self.battery_power.len(),
            renewables: self.renewable_setpoint.len(),
            controllables: self.controllable_setpoint.len(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().dim());
        v.extend_from_slice(&self.battery_power);
        v.extend_from_slice(&self.renewable_setpoint);
        v.extend_from_slice(&self.controllable_setpoint);
        v.push(self.lt_quantity);
        v
    }

    pub fn from_flat(layout: ActionLayout, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), layout.dim(), "flat action has wrong length");
        let (b, rest) = flat.split_at(layout.batteries);
        let (r, rest) = rest.split_at(layout.renewables);
        let (c, rest) = rest.split_at(layout.controllables);
        ActionVector {
            battery_power: b.to_vec(),
            renewable_setpoint: r.to_vec(),
            controllable_setpoint: c.to_vec(),
            lt_quantity: rest[0],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }
}

/// Exogenous information `W_t` for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousSample {
    /// currency/Wh.
    pub rt_price: f64,
    /// Available power per renewable, W.
    pub avail: Vec<f64>,
}

/// Controllable state `X_t` plus the information revealed for step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub t: usize,
    /// Wh per battery.
    pub soc: Vec<f64>,
    /// Injections applied in the previous step: batteries, renewables,
    /// controllables (W).
    pub last_injections: Vec<f64>,
    /// Wh delivered to each market in the previous step.
    pub lt_commitment: f64,
    pub rt_commitment: f64,
    /// `W_t`. After the final step this repeats the last revealed sample.
    pub revealed: ExogenousSample,
    /// Long-term price (currency/Wh) and cap (Wh) for step `t`, known
    /// information rather than exogenous.
    pub lt_price: f64,
    pub lt_cap: f64,
}
