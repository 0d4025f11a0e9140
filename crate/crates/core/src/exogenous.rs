//! Synthetic price and renewable-availability processes, and the trace CSV
//! format that carries realized exogenous data between tools.
//!
//! Every generator draws from a ChaCha8 stream seeded with
//! `ChaCha8Rng::seed_from_u64(seed)`; prices use stream 0 and renewable `r`
//! of a generated trace uses stream `1 + r`. ChaCha8 output is specified
//! independently of the platform, so equal seeds give bit-identical series.
//!
//! Process parameters and trace prices are in currency/MWh (the file unit).
//! [`ExogenousTrace::sample`] converts to the canonical currency/Wh.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ExogenousSample, ValidatedSystem, PRICE_PER_MWH_TO_PER_WH};

#[derive(Debug, Error)]
pub enum ExoError {
    #[error("invalid process parameters: {0}")]
    Params(String),
    #[error("trace I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("trace is missing column {0:?}")]
    MissingColumn(String),
    #[error("trace has {found} rows but the horizon is {expected} steps")]
    Length { expected: usize, found: usize },
    #[error("trace format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceKind {
    /// Zonal exchange price: daily cycle plus mean-reverting noise.
    Exchange,
    /// Nodal price with occasional spikes up to a price cap.
    Lmp,
}

/// Parameters of the real-time price process, in currency/MWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceProcessParams {
    pub kind: PriceKind,
    pub base: f64,
    pub daily_amplitude: f64,
    /// AR(1) coefficient per step.
    pub ar_coeff: f64,
    /// Innovation standard deviation per step.
    pub noise_std: f64,
    #[serde(default)]
    pub spike_prob: f64,
    #[serde(default)]
    pub spike_cap: f64,
    pub floor: f64,
}

impl PriceProcessParams {
    /// Nordpool-like hourly exchange price around 40/MWh. The floor is
    /// negative so that negative-price hours occur.
    pub fn exchange() -> Self {
        PriceProcessParams {
            kind: PriceKind::Exchange,
            base: 40.0,
            daily_amplitude: 15.0,
            ar_coeff: 0.8,
            noise_std: 5.0,
            spike_prob: 0.0,
            spike_cap: 0.0,
            floor: -20.0,
        }
    }

    /// Spiky nodal price capped at 1000/MWh.
    pub fn lmp() -> Self {
        PriceProcessParams {
            kind: PriceKind::Lmp,
            base: 35.0,
            daily_amplitude: 10.0,
            ar_coeff: 0.7,
            noise_std: 4.0,
            spike_prob: 0.02,
            spike_cap: 1000.0,
            floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ExoError> {
        let finite = [self.base, self.daily_amplitude, self.ar_coeff, self.noise_std, self.spike_prob, self.spike_cap, self.floor]
            .iter()
            .all(|x| x.is_finite());
        let bad = |m: &str| Err(ExoError::Params(m.to_string()));
        if !finite {
            return bad("price parameters must be finite");
        }
        if !(0.0..1.0).contains(&self.ar_coeff) {
            return bad("ar_coeff must lie in [0, 1)");
        }
        if self.noise_std < 0.0 {
            return bad("noise_std must be ≥ 0");
        }
        if self.floor > self.base {
            return bad("floor must be ≤ base");
        }
        match self.kind {
            PriceKind::Lmp => {
                if !(0.0..=1.0).contains(&self.spike_prob) {
                    return bad("spike_prob must lie in [0, 1]");
                }
                if self.spike_cap < self.base {
                    return bad("spike_cap must be ≥ base");
                }
            }
            PriceKind::Exchange => {
                if self.spike_prob != 0.0 {
                    return bad("spike_prob applies to kind = lmp only");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenewableKind {
    Solar,
    Wind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewableProcessParams {
    pub kind: RenewableKind,
    /// W.
    pub capacity: f64,
    #[serde(default = "default_sunrise")]
    pub sunrise_hour: f64,
    #[serde(default = "default_sunset")]
    pub sunset_hour: f64,
    #[serde(default)]
    pub cloud_dip_prob: f64,
    #[serde(default)]
    pub cloud_dip_depth: f64,
    #[serde(default)]
    pub wind_ar_coeff: f64,
    #[serde(default)]
    pub wind_noise_std: f64,
}

fn default_sunrise() -> f64 {
    6.0
}

fn default_sunset() -> f64 {
    18.0
}

impl RenewableProcessParams {
    pub fn solar(capacity: f64) -> Self {
        RenewableProcessParams {
            kind: RenewableKind::Solar,
            capacity,
            sunrise_hour: 6.0,
            sunset_hour: 18.0,
            cloud_dip_prob: 0.1,
            cloud_dip_depth: 0.5,
            wind_ar_coeff: 0.0,
            wind_noise_std: 0.0,
        }
    }

    pub fn wind(capacity: f64) -> Self {
        RenewableProcessParams {
            kind: RenewableKind::Wind,
            capacity,
            sunrise_hour: 6.0,
            sunset_hour: 18.0,
            cloud_dip_prob: 0.0,
            cloud_dip_depth: 0.0,
            wind_ar_coeff: 0.9,
            wind_noise_std: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), ExoError> {
        let bad = |m: &str| Err(ExoError::Params(m.to_string()));
        if !(self.capacity.is_finite() && self.capacity >= 0.0) {
            return bad("capacity must be finite and ≥ 0");
        }
        if !(0.0 <= self.sunrise_hour && self.sunrise_hour < self.sunset_hour && self.sunset_hour <= 24.0) {
            return bad("need 0 ≤ sunrise_hour < sunset_hour ≤ 24");
        }
        if !(0.0..=1.0).contains(&self.cloud_dip_prob) {
            return bad("cloud_dip_prob must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.cloud_dip_depth) {
            return bad("cloud_dip_depth must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.wind_ar_coeff) {
            return bad("wind_ar_coeff must lie in [0, 1)");
        }
        if !(self.wind_noise_std.is_finite() && self.wind_noise_std >= 0.0) {
            return bad("wind_noise_std must be ≥ 0");
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Hour of day at the start of step `t`.
pub fn hour_of_day(t: usize, step_duration: f64) -> f64 {
    (t as f64 * step_duration).rem_euclid(24.0)
}

/// Real-time price series (currency/MWh), evening peak at 18:00.
pub fn gen_price(params: &PriceProcessParams, seed: u64, steps: usize, step_duration: f64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    let rho = params.ar_coeff;
    let sigma = params.noise_std;
    let z: f64 = StandardNormal.sample(&mut rng);
    let mut noise = z * sigma / (1.0 - rho * rho).sqrt();
    let spike_mean = (params.spike_cap - params.base) / 2.0;
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        if t > 0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            noise = rho * noise + sigma * z;
        }
        let h = hour_of_day(t, step_duration);
        let mut p = params.base + params.daily_amplitude * (2.0 * PI * h / 24.0 - PI).sin() + noise;
        if params.kind == PriceKind::Lmp {
            let u: f64 = rng.random();
            let e: f64 = Exp1.sample(&mut rng);
            if u < params.spike_prob {
                p += spike_mean * e;
            }
            p = p.min(params.spike_cap);
        }
        out.push(p.max(params.floor));
    }
    out
}

/// Stationary mean of [`gen_price`] ignoring the floor and spikes, averaged
/// over whole days.
pub fn price_process_mean(params: &PriceProcessParams) -> f64 {
    params.base
}

/// Available power series (W), each value in `[0, capacity]`.
pub fn gen_renewable(params: &RenewableProcessParams, seed: u64, steps: usize, step_duration: f64) -> Vec<f64> {
    gen_renewable_stream(params, seed, 1, steps, step_duration)
}

fn gen_renewable_stream(params: &RenewableProcessParams, seed: u64, stream: u64, steps: usize, dt: f64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    let cap = params.capacity;
    match params.kind {
        RenewableKind::Solar => (0..steps)
            .map(|t| {
                let cloudy = rng.random::<f64>() < params.cloud_dip_prob;
                let h = hour_of_day(t, dt);
                if h <= params.sunrise_hour || h >= params.sunset_hour {
                    return 0.0;
                }
                let x = (h - params.sunrise_hour) / (params.sunset_hour - params.sunrise_hour);
                let clear = cap * (PI * x).sin();
                let v = if cloudy { clear * (1.0 - params.cloud_dip_depth) } else { clear };
                v.clamp(0.0, cap)
            })
            .collect(),
        RenewableKind::Wind => {
            let rho = params.wind_ar_coeff;
            let sigma = params.wind_noise_std;
            let z: f64 = StandardNormal.sample(&mut rng);
            let mut y = z * sigma / (1.0 - rho * rho).sqrt();
            (0..steps)
                .map(|t| {
                    if t > 0 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        y = rho * y + sigma * z;
                    }
                    (cap / (1.0 + (-y).exp())).clamp(0.0, cap)
                })
                .collect()
        }
    }
}

/// Process parameters for a whole trace: one price process and one
/// availability process per configured renewable, in configuration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExogenousSpec {
    pub price: PriceProcessParams,
    pub renewables: Vec<RenewableProcessParams>,
}

impl ExogenousSpec {
    /// Generate a trace for `system`. Long-term columns are left absent, so
    /// the configured market values apply.
    pub fn generate(&self, system: &ValidatedSystem, seed: u64) -> Result<ExogenousTrace, ExoError> {
        if self.renewables.len() != system.renewables.len() {
            return Err(ExoError::Params(format!(
                "{} renewable processes for {} configured renewables",
                self.renewables.len(),
                system.renewables.len()
            )));
        }
        for (p, r) in self.renewables.iter().zip(&system.renewables) {
            if p.capacity > r.nameplate {
                return Err(ExoError::Params(format!("process capacity exceeds nameplate of {:?}", r.name)));
            }
        }
        let names = system.renewables.iter().map(|r| r.name.clone()).collect();
        self.generate_named(names, seed, system.horizon, system.dt)
    }

    /// Generate a trace without a system: `names` label the renewable
    /// columns, one per process. Streams are the same as in
    /// [`ExogenousSpec::generate`].
    pub fn generate_named(&self, names: Vec<String>, seed: u64, steps: usize, dt: f64) -> Result<ExogenousTrace, ExoError> {
        self.price.validate()?;
        if names.len() != self.renewables.len() {
            return Err(ExoError::Params(format!("{} names for {} renewable processes", names.len(), self.renewables.len())));
        }
        for p in &self.renewables {
            p.validate()?;
        }
        Ok(ExogenousTrace {
            renewable_names: names,
            rt_price: gen_price(&self.price, seed, steps, dt),
            avail: self
                .renewables
                .iter()
                .enumerate()
                .map(|(i, p)| gen_renewable_stream(p, seed, 1 + i as u64, steps, dt))
                .collect(),
            lt_price: None,
            lt_cap: None,
        })
    }
}

/// A realized exogenous sequence in file units.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousTrace {
    pub renewable_names: Vec<String>,
    /// currency/MWh per step.
    pub rt_price: Vec<f64>,
    /// `avail[r][t]`, W.
    pub avail: Vec<Vec<f64>>,
    /// currency/MWh per step, when the trace overrides the configured value.
    pub lt_price: Option<Vec<f64>>,
    /// Wh per step, when the trace overrides the configured value.
    pub lt_cap: Option<Vec<f64>>,
}

impl ExogenousTrace {
    pub fn len(&self) -> usize {
        self.rt_price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rt_price.is_empty()
    }

    /// `W_t` in canonical units.
    pub fn sample(&self, t: usize) -> ExogenousSample {
        ExogenousSample {
            rt_price: self.rt_price[t] * PRICE_PER_MWH_TO_PER_WH,
            avail: self.avail.iter().map(|a| a[t]).collect(),
        }
    }

    /// Long-term price (currency/Wh) and cap (Wh) at step `t`, from the trace
    /// columns when present, else from the configuration.
    pub fn lt_terms(&self, system: &ValidatedSystem, t: usize) -> (f64, f64) {
        let price = match &self.lt_price {
            Some(v) => v[t] * PRICE_PER_MWH_TO_PER_WH,
            None => system.market.lt_price[t],
        };
        let cap = match &self.lt_cap {
            Some(v) => v[t],
            None => system.market.lt_cap[t],
        };
        (price, cap)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ExoError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "rt_price".into(), "lt_price".into(), "lt_cap".into()];
        header.extend(self.renewable_names.iter().map(|n| format!("avail_{n}")));
        w.write_record(&header).map_err(csv_io)?;
        let opt = |v: &Option<Vec<f64>>, t: usize| v.as_ref().map(|v| v[t].to_string()).unwrap_or_default();
        for t in 0..self.len() {
            let mut row = vec![t.to_string(), self.rt_price[t].to_string(), opt(&self.lt_price, t), opt(&self.lt_cap, t)];
            row.extend(self.avail.iter().map(|a| a[t].to_string()));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    /// SHA-256 of the CSV serialization, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_string().as_bytes()))
    }

    /// Parse a trace without checking it against a system. Every renewable
    /// column `avail_<name>` is kept; `lt_price` and `lt_cap` are optional
    /// and may be left empty on every row.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, ExoError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = rdr.headers().map_err(csv_row)?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let step_col = col("step").ok_or_else(|| ExoError::MissingColumn("step".into()))?;
        let price_col = col("rt_price").ok_or_else(|| ExoError::MissingColumn("rt_price".into()))?;
        let lt_price_col = col("lt_price");
        let lt_cap_col = col("lt_cap");
        let avail_cols: Vec<(usize, String)> = header
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.strip_prefix("avail_").map(|n| (i, n.to_string())))
            .collect();

        let mut trace = ExogenousTrace {
            renewable_names: avail_cols.iter().map(|(_, n)| n.clone()).collect(),
            rt_price: Vec::new(),
            avail: vec![Vec::new(); avail_cols.len()],
            lt_price: None,
            lt_cap: None,
        };
        let mut lt_price: Vec<Option<f64>> = Vec::new();
        let mut lt_cap: Vec<Option<f64>> = Vec::new();
        for (row_index, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_row)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(row_index as u64 + 2);
            let cell = |i: usize, name: &str| -> Result<Option<f64>, ExoError> {
                let s = rec.get(i).unwrap_or("").trim();
                if s.is_empty() {
                    return Ok(None);
                }
                let v: f64 = s.parse().map_err(|_| ExoError::Row { line, message: format!("non-numeric {name} {s:?}") })?;
                if !v.is_finite() {
                    return Err(ExoError::Row { line, message: format!("non-finite {name}") });
                }
                Ok(Some(v))
            };
            let required = |i: usize, name: &str| -> Result<f64, ExoError> {
                cell(i, name)?.ok_or_else(|| ExoError::Row { line, message: format!("empty {name}") })
            };
            let step = required(step_col, "step")?;
            if step != row_index as f64 {
                return Err(ExoError::Row { line, message: format!("step {step} out of sequence (expected {row_index})") });
            }
            trace.rt_price.push(required(price_col, "rt_price")?);
            lt_price.push(match lt_price_col {
                Some(i) => cell(i, "lt_price")?,
                None => None,
            });
            lt_cap.push(match lt_cap_col {
                Some(i) => cell(i, "lt_cap")?,
                None => None,
            });
            for (k, (i, name)) in avail_cols.iter().enumerate() {
                let v = required(*i, &format!("avail_{name}"))?;
                if v < 0.0 {
                    return Err(ExoError::Row { line, message: format!("negative availability avail_{name} = {v}") });
                }
                trace.avail[k].push(v);
            }
        }
        trace.lt_price = all_or_none(lt_price, "lt_price")?;
        trace.lt_cap = all_or_none(lt_cap, "lt_cap")?;
        if let Some(v) = &trace.lt_cap {
            if let Some(t) = v.iter().position(|&x| x < 0.0) {
                return Err(ExoError::Row { line: t as u64 + 2, message: "negative lt_cap".into() });
            }
        }
        if let Some(v) = &trace.lt_price {
            if let Some(t) = v.iter().position(|&x| x < 0.0) {
                return Err(ExoError::Row { line: t as u64 + 2, message: "negative lt_price".into() });
            }
        }
        Ok(trace)
    }

    /// Check length, renewable columns and availability bounds against a
    /// system, reordering columns to configuration order.
    pub fn conform(mut self, system: &ValidatedSystem) -> Result<Self, ExoError> {
        if self.len() != system.horizon {
            return Err(ExoError::Length { expected: system.horizon, found: self.len() });
        }
        let mut avail = Vec::with_capacity(system.renewables.len());
        for r in &system.renewables {
            let k = self
                .renewable_names
                .iter()
                .position(|n| *n == r.name)
                .ok_or_else(|| ExoError::MissingColumn(format!("avail_{}", r.name)))?;
            let series = std::mem::take(&mut self.avail[k]);
            if let Some(t) = series.iter().position(|&v| v > r.nameplate) {
                return Err(ExoError::Row {
                    line: t as u64 + 2,
                    message: format!("avail_{} = {} exceeds nameplate {}", r.name, series[t], r.nameplate),
                });
            }
            avail.push(series);
        }
        self.renewable_names = system.renewables.iter().map(|r| r.name.clone()).collect();
        self.avail = avail;
        Ok(self)
    }

    /// Steps `[start, start + len)` clipped at the end of the trace.
    pub fn window(&self, start: usize, len: usize) -> ExogenousTrace {
        let end = (start + len).min(self.len());
        let cut = |v: &Vec<f64>| v[start..end].to_vec();
        ExogenousTrace {
            renewable_names: self.renewable_names.clone(),
            rt_price: cut(&self.rt_price),
            avail: self.avail.iter().map(cut).collect(),
            lt_price: self.lt_price.as_ref().map(cut),
            lt_cap: self.lt_cap.as_ref().map(cut),
        }
    }
}

fn all_or_none(v: Vec<Option<f64>>, name: &str) -> Result<Option<Vec<f64>>, ExoError> {
    if v.iter().all(|x| x.is_none()) {
        return Ok(None);
    }
    match v.iter().position(|x| x.is_none()) {
        Some(t) => Err(ExoError::Row { line: t as u64 + 2, message: format!("empty {name} (column must be all filled or all empty)") }),
        None => Ok(Some(v.into_iter().map(|x| x.unwrap()).collect())),
    }
}

fn csv_io(e: csv::Error) -> ExoError {
    ExoError::Format(e.to_string())
}

fn csv_row(e: csv::Error) -> ExoError {
    match e.position() {
        Some(p) => ExoError::Row { line: p.line(), message: e.to_string() },
        None => ExoError::Format(e.to_string()),
    }
}

/// Read a trace CSV and conform it to `system`.
pub fn load_trace(path: &Path, system: &ValidatedSystem) -> Result<ExogenousTrace, ExoError> {
    let file = std::fs::File::open(path)?;
    ExogenousTrace::read_csv(std::io::BufReader::new(file))?.conform(system)
}

/// Write a trace CSV atomically.
pub fn write_trace(path: &Path, trace: &ExogenousTrace) -> Result<(), ExoError> {
    crate::io::write_atomic(path, trace.to_csv_string().as_bytes())?;
    Ok(())
}
