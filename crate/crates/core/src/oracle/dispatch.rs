//! Within-step dispatch: given the total battery power of a step, choose the
//! renewable setpoints, controllable setpoints and long-term quantity that
//! maximize the step reward.
//!
//! Every term is concave and separable except the long-term revenue, which is
//! affine on each delivery piece (one piece below the cap, four for the
//! stepwise rule) plus the full-delivery point. Each piece is a separable
//! concave knapsack with one coupling row (no purchases), solved exactly by
//! walking the breakpoints of its dual multiplier.

use crate::env::reward_lt;
use crate::model::{ExogenousSample, ShortfallMode, ValidatedSystem};

/// One scalar variable of a separable problem: maximize `c·x − q·x²` over
/// `[lo, hi]`, contributing `m·x` to the coupling row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Item {
    pub c: f64,
    pub q: f64,
    pub m: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Item {
    fn argmax(&self, mu: f64, favor_row: bool) -> f64 {
        let c = self.c + mu * self.m;
        if self.q > 0.0 {
            (c / (2.0 * self.q)).clamp(self.lo, self.hi)
        } else if c > 0.0 {
            self.hi
        } else if c < 0.0 {
            self.lo
        } else if favor_row == (self.m >= 0.0) {
            self.hi
        } else {
            self.lo
        }
    }

    fn threshold(&self) -> Option<f64> {
        (self.q == 0.0 && self.m != 0.0).then(|| -self.c / self.m)
    }
}

fn row(items: &[Item], x: &[f64]) -> f64 {
    items.iter().zip(x).map(|(it, v)| it.m * v).sum()
}

/// Maximize `Σ c_i x_i − q_i x_i²` over the boxes subject to `Σ m_i x_i ≥ bound`.
/// Returns `None` when the row cannot be met.
pub fn maximize_separable(items: &[Item], bound: Option<f64>) -> Option<Vec<f64>> {
    let x0: Vec<f64> = items.iter().map(|it| it.argmax(0.0, true)).collect();
    let Some(b) = bound else {
        return Some(x0);
    };
    if row(items, &x0) >= b {
        return Some(x0);
    }
    let mut breaks: Vec<f64> = Vec::new();
    for it in items {
        if it.m == 0.0 {
            continue;
        }
        if it.q > 0.0 {
            breaks.push((2.0 * it.q * it.lo - it.c) / it.m);
            breaks.push((2.0 * it.q * it.hi - it.c) / it.m);
        } else {
            breaks.push(-it.c / it.m);
        }
    }
    breaks.retain(|&u| u > 0.0 && u.is_finite());
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks.push(f64::INFINITY);

    let mut prev = 0.0;
    for &bk in &breaks {
        let mid = if bk.is_infinite() { 2.0 * prev + 1.0 } else { 0.5 * (prev + bk) };
        // Regimes inside (prev, bk): each quadratic item is either clamped or
        // free; each linear item sits at a fixed bound.
        let mut base = 0.0;
        let mut slope = 0.0;
        let mut free = vec![false; items.len()];
        for (i, it) in items.iter().enumerate() {
            if it.q > 0.0 {
                let v = (it.c + mid * it.m) / (2.0 * it.q);
                if v > it.lo && v < it.hi {
                    free[i] = true;
                    base += it.m * it.c / (2.0 * it.q);
                    slope += it.m * it.m / (2.0 * it.q);
                    continue;
                }
            }
            base += it.m * it.argmax(mid, true);
        }
        let at = |mu: f64| -> Vec<f64> {
            items
                .iter()
                .enumerate()
                .map(|(i, it)| if free[i] { ((it.c + mu * it.m) / (2.0 * it.q)).clamp(it.lo, it.hi) } else { it.argmax(mid, true) })
                .collect()
        };
        if bk.is_infinite() {
            return if base >= b { Some(at(mid)) } else { None };
        }
        if base + slope * bk >= b {
            let mu = if slope > 0.0 { ((b - base) / slope).clamp(prev, bk) } else { mid };
            return Some(at(mu));
        }
        // Crossing bk: linear items whose threshold is bk may move to the bound
        // that favors the row.
        let mut x = at(bk);
        let s_minus = row(items, &x);
        let movers: Vec<usize> = (0..items.len()).filter(|&i| items[i].threshold() == Some(bk)).collect();
        let gain: f64 = movers
            .iter()
            .map(|&i| {
                let it = &items[i];
                it.m * (it.argmax(bk, true) - it.argmax(bk, false))
            })
            .sum();
        if s_minus + gain >= b {
            let mut need = b - s_minus;
            for &i in &movers {
                let it = &items[i];
                let (from, to) = (it.argmax(bk, false), it.argmax(bk, true));
                let cap = it.m * (to - from);
                if need <= 0.0 || cap <= 0.0 {
                    continue;
                }
                let take = need.min(cap);
                x[i] = if take == cap { to } else { (from + take / it.m).clamp(it.lo, it.hi) };
                need -= take;
            }
            return Some(x);
        }
        prev = bk;
    }
    None
}

/// Non-battery decisions of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub renewable: Vec<f64>,
    pub controllable: Vec<f64>,
    /// Wh.
    pub lt: f64,
}

#[derive(Debug, Clone)]
struct Renewable {
    lo: f64,
    avail: f64,
    a: f64,
}

/// Pre-computed within-step problem for one step of a trace.
#[derive(Debug, Clone)]
pub struct StageSolver {
    dt: f64,
    price: f64,
    lt_price: f64,
    lt_cap: f64,
    mode: ShortfallMode,
    penalty_rate: f64,
    coupled: bool,
    renewables: Vec<Renewable>,
    controllables: Vec<(f64, f64)>,
    free: Dispatch,
    free_rest: f64,
    /// `Σ renewable + Σ controllable − lt/Δt` of the free dispatch, W.
    free_net: f64,
}

impl StageSolver {
    pub fn new(system: &ValidatedSystem, t: usize, w: &ExogenousSample, lt_price: f64, lt_cap: f64) -> Self {
        let renewables = system
            .renewables
            .iter()
            .zip(&w.avail)
            .map(|(r, &avail)| Renewable {
                lo: if r.curtailable { 0.0 } else { avail },
                avail,
                a: if r.curtailable { r.curtail_penalty_a } else { 0.0 },
            })
            .collect();
        let controllables = system.controllables.iter().map(|c| (c.inject_min[t], c.inject_max[t])).collect();
        let mut s = StageSolver {
            dt: system.dt,
            price: w.rt_price,
            lt_price,
            lt_cap,
            mode: system.market.shortfall_mode,
            penalty_rate: system.market.penalty_rate,
            coupled: !system.market.allow_rt_purchase,
            renewables,
            controllables,
            free: Dispatch { renewable: Vec::new(), controllable: Vec::new(), lt: 0.0 },
            free_rest: 0.0,
            free_net: 0.0,
        };
        let items = s.device_items();
        let x = maximize_separable(&items, None).expect("unconstrained");
        let (renewable, controllable) = s.split(&x);
        let mut best: Option<(f64, f64)> = None;
        for z in s.lt_points().into_iter().rev() {
            let v = s.lt_value(z) - s.price * z;
            if best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, z));
            }
        }
        s.free = Dispatch { renewable, controllable, lt: best.unwrap().1 };
        s.free_rest = s.rest_value(&s.free);
        s.free_net = s.injection(&s.free) - s.free.lt / s.dt;
        s
    }

    fn device_items(&self) -> Vec<Item> {
        let (p, dt) = (self.price, self.dt);
        let mut items: Vec<Item> = self
            .renewables
            .iter()
            .map(|r| Item { c: p * dt + 2.0 * r.a * dt * r.avail, q: r.a * dt, m: 1.0, lo: r.lo, hi: r.avail })
            .collect();
        items.extend(self.controllables.iter().map(|&(lo, hi)| Item { c: p * dt, q: 0.0, m: 1.0, lo, hi }));
        items
    }

    fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.renewables.len();
        (x[..n].to_vec(), x[n..n + self.controllables.len()].to_vec())
    }

    /// Delivery levels at which the long-term revenue can be maximal.
    fn lt_points(&self) -> Vec<f64> {
        let y = self.lt_cap;
        match self.mode {
            ShortfallMode::Stepwise => (0..=4).map(|k| y * k as f64 / 4.0).collect(),
            _ => vec![0.0, y],
        }
    }

    /// Pieces `(lo, hi, slope)` on which the long-term revenue minus the
    /// real-time value of the same energy is affine in the delivery.
    fn lt_pieces(&self) -> Vec<(f64, f64, f64)> {
        let (y, s, p) = (self.lt_cap, self.lt_price, self.price);
        match self.mode {
            ShortfallMode::None => vec![(0.0, y, s - p)],
            ShortfallMode::LinearPenalty => vec![(0.0, y, s + self.penalty_rate - p)],
            ShortfallMode::Stepwise => {
                (0..4).map(|k| (y * k as f64 / 4.0, y * (k + 1) as f64 / 4.0, s * k as f64 / 4.0 - p)).collect()
            }
        }
    }

    fn lt_value(&self, z: f64) -> f64 {
        reward_lt(z, self.lt_price, self.lt_cap, self.mode, self.penalty_rate).expect("delivery within cap")
    }

    fn injection(&self, d: &Dispatch) -> f64 {
        d.renewable.iter().chain(&d.controllable).sum()
    }

    /// Step reward excluding the battery terms (`π·Δt·P` and throughput cost).
    pub fn rest_value(&self, d: &Dispatch) -> f64 {
        let mut curtail = 0.0;
        for (r, &x) in self.renewables.iter().zip(&d.renewable) {
            let gap = x - r.avail;
            curtail += r.a * gap * gap * self.dt;
        }
        self.price * (self.dt * self.injection(d) - d.lt) + self.lt_value(d.lt) - curtail
    }

    /// Largest total battery power shortfall the devices can cover: the
    /// dispatch is feasible iff `p_total ≥ −max_supply()` when purchases are
    /// disallowed.
    pub fn max_supply(&self) -> f64 {
        self.renewables.iter().map(|r| r.avail).sum::<f64>() + self.controllables.iter().map(|c| c.1).sum::<f64>()
    }

    /// Best dispatch and step reward (battery throughput cost excluded) for a
    /// total battery power `p_total`, or `None` when no dispatch avoids a
    /// purchase.
    pub fn solve(&self, p_total: f64) -> Option<(f64, Dispatch)> {
        let batt = self.price * self.dt * p_total;
        if !self.coupled || p_total + self.free_net >= 0.0 {
            return Some((batt + self.free_rest, self.free.clone()));
        }
        let bound = -p_total;
        let mut items = self.device_items();
        let n = items.len();
        let mut best: Option<(f64, Dispatch)> = None;
        let consider = |x: Option<Vec<f64>>, best: &mut Option<(f64, Dispatch)>| {
            if let Some(x) = x {
                let (renewable, controllable) = self.split(&x);
                let d = Dispatch { renewable, controllable, lt: x[n].clamp(0.0, self.lt_cap) };
                let v = self.rest_value(&d);
                if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                    *best = Some((v, d));
                }
            }
        };
        let row = -1.0 / self.dt;
        items.push(Item { c: 0.0, q: 0.0, m: row, lo: self.lt_cap, hi: self.lt_cap });
        consider(maximize_separable(&items, Some(bound)), &mut best);
        for (lo, hi, slope) in self.lt_pieces() {
            items[n] = Item { c: slope, q: 0.0, m: row, lo, hi };
            consider(maximize_separable(&items, Some(bound)), &mut best);
        }
        best.map(|(v, d)| (batt + v, d))
    }

    /// Value only; avoids cloning the dispatch on the common path.
    pub fn value(&self, p_total: f64) -> Option<f64> {
        if !self.coupled || p_total + self.free_net >= 0.0 {
            return Some(self.price * self.dt * p_total + self.free_rest);
        }
        self.solve(p_total).map(|(v, _)| v)
    }
}
