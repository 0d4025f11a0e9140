//! Projection of raw actions onto the per-step feasible set.
//!
//! The feasible set is a box intersected with at most one halfspace
//! `w·u + c ≥ 0`. Its Euclidean projection is a clamp when the clamp already
//! satisfies the halfspace; otherwise the KKT conditions reduce to the scalar
//! equation `φ(λ) = Σ w_i clamp(raw_i + λ w_i / m_i) + c = 0` in the dual
//! multiplier `λ ≥ 0`, which is nondecreasing and piecewise affine. It is
//! solved by bisection followed by an exact affine step.

use std::fmt;

use thiserror::Error;

use crate::model::{ActionVector, ExogenousSample, SystemState, ValidatedSystem};

#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub weights: Vec<f64>,
    pub offset: f64,
}

/// Box bounds plus an optional linear inequality over the flattened action.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub coupling: Option<Coupling>,
    /// Coordinate names used in reports; may be empty.
    pub labels: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("feasible set is empty: {0}")]
    Empty(String),
    #[error("dimension mismatch: action has {got} coordinates, set has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite raw action coordinate {0}")]
    NonFinite(usize),
}

/// Residual tolerance of the dual solve, relative to the magnitude of the
/// terms of `w·u + c`.
pub const DUAL_RESIDUAL_TOL: f64 = 1e-10;
const MAX_BISECTIONS: usize = 200;

impl FeasibleSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        FeasibleSet { lower, upper, coupling: None, labels: Vec::new() }
    }

    pub fn with_coupling(mut self, weights: Vec<f64>, offset: f64) -> Self {
        self.coupling = Some(Coupling { weights, offset });
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn label(&self, i: usize) -> String {
        self.labels.get(i).cloned().unwrap_or_else(|| format!("u[{i}]"))
    }

    /// `w·u + c` at the point where every coupled coordinate sits at the bound
    /// that favors the inequality.
    pub fn coupling_max(&self) -> Option<f64> {
        let cp = self.coupling.as_ref()?;
        let mut s = cp.offset;
        for i in 0..self.dim() {
            let w = cp.weights[i];
            s += if w > 0.0 { w * self.upper[i] } else { w * self.lower[i] };
        }
        Some(s)
    }

    /// Check the set invariants: ordered bounds and a reachable halfspace.
    pub fn check_nonempty(&self) -> Result<(), ProjectionError> {
        for i in 0..self.dim() {
            if !(self.lower[i] <= self.upper[i]) {
                return Err(ProjectionError::Empty(format!(
                    "{}: lower {} > upper {}",
                    self.label(i),
                    self.lower[i],
                    self.upper[i]
                )));
            }
        }
        if let Some(m) = self.coupling_max() {
            if m < -self.coupling_slack() {
                return Err(ProjectionError::Empty(format!("coupling unreachable inside the box (max w·u + c = {m})")));
            }
        }
        Ok(())
    }

    fn coupling_slack(&self) -> f64 {
        match &self.coupling {
            None => 0.0,
            Some(cp) => {
                let mut scale = cp.offset.abs();
                for i in 0..self.dim() {
                    scale += cp.weights[i].abs() * self.lower[i].abs().max(self.upper[i].abs());
                }
                DUAL_RESIDUAL_TOL * scale.max(1.0)
            }
        }
    }
}

/// Outcome of [`check_feasible`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Most violated constraint and its violation amount, when any is
    /// violated (even within tolerance).
    pub worst: Option<(String, f64)>,
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.worst {
            None => write!(f, "feasible"),
            Some((name, v)) => write!(f, "{} (worst: {name} violated by {v:e})", if self.feasible { "feasible" } else { "infeasible" }),
        }
    }
}

/// Whether `u` lies in `set` within `tol`, naming the worst violation.
pub fn check_feasible_flat(u: &[f64], set: &FeasibleSet, tol: f64) -> FeasibilityReport {
    let mut worst: Option<(String, f64)> = None;
    let mut note = |name: String, v: f64| {
        if v > 0.0 && worst.as_ref().is_none_or(|(_, w)| v > *w) {
            worst = Some((name, v));
        }
    };
    for i in 0..set.dim() {
        let x = u[i];
        if !x.is_finite() {
            note(format!("{} (non-finite)", set.label(i)), f64::INFINITY);
            continue;
        }
        note(format!("{} ≥ lower", set.label(i)), set.lower[i] - x);
        note(format!("{} ≤ upper", set.label(i)), x - set.upper[i]);
    }
    if let Some(cp) = &set.coupling {
        let g = dot(&cp.weights, u) + cp.offset;
        note("coupling w·u + c ≥ 0".to_string(), -g);
    }
    let feasible = worst.as_ref().is_none_or(|(_, v)| *v <= tol);
    FeasibilityReport { feasible, worst }
}

pub fn check_feasible(u: &ActionVector, set: &FeasibleSet, tol: f64) -> FeasibilityReport {
    check_feasible_flat(&u.to_flat(), set, tol)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean projection of an [`ActionVector`].
pub fn project(raw: &ActionVector, set: &FeasibleSet) -> Result<ActionVector, ProjectionError> {
    let flat = project_flat(&raw.to_flat(), set)?;
    Ok(ActionVector::from_flat(raw.layout(), &flat))
}

/// Euclidean projection of a flat action.
pub fn project_flat(raw: &[f64], set: &FeasibleSet) -> Result<Vec<f64>, ProjectionError> {
    project_weighted(raw, set, None)
}

/// Projection in the norm `Σ m_i (u_i − raw_i)²` for a positive diagonal
/// metric `m` (unweighted when `None`).
pub fn project_weighted(raw: &[f64], set: &FeasibleSet, metric: Option<&[f64]>) -> Result<Vec<f64>, ProjectionError> {
    let n = set.dim();
    if raw.len() != n {
        return Err(ProjectionError::Dimension { expected: n, got: raw.len() });
    }
    if let Some(i) = raw.iter().position(|x| !x.is_finite()) {
        return Err(ProjectionError::NonFinite(i));
    }
    set.check_nonempty()?;
    let clamped: Vec<f64> = (0..n).map(|i| raw[i].clamp(set.lower[i], set.upper[i])).collect();
    let Some(cp) = &set.coupling else {
        return Ok(clamped);
    };
    let w = &cp.weights;
    let phi_of = |u: &[f64]| dot(w, u) + cp.offset;
    if phi_of(&clamped) >= 0.0 {
        return Ok(clamped);
    }

    let step = |i: usize| match metric {
        Some(m) => w[i] / m[i],
        None => w[i],
    };
    let point = |lambda: f64| -> Vec<f64> {
        (0..n).map(|i| (raw[i] + lambda * step(i)).clamp(set.lower[i], set.upper[i])).collect()
    };

    // Largest breakpoint: beyond it every coupled coordinate is saturated.
    let mut hi = 0.0f64;
    for i in 0..n {
        let s = step(i);
        if s > 0.0 {
            hi = hi.max((set.upper[i] - raw[i]) / s);
        } else if s < 0.0 {
            hi = hi.max((set.lower[i] - raw[i]) / s);
        }
    }
    let mut u_hi = point(hi);
    let mut phi_hi = phi_of(&u_hi);
    let mut grow = 0;
    while phi_hi < 0.0 && grow < 64 {
        hi = hi * 2.0 + f64::MIN_POSITIVE;
        u_hi = point(hi);
        phi_hi = phi_of(&u_hi);
        grow += 1;
    }
    if phi_hi < 0.0 {
        // Only reachable when the halfspace touches the box within rounding.
        return Ok(u_hi);
    }

    // Bisect well below the residual tolerance so that the returned point sits
    // on the halfspace boundary to rounding precision.
    let tol = set.coupling_slack() * (4.0 * f64::EPSILON / DUAL_RESIDUAL_TOL);
    let mut lo = 0.0f64;
    let mut phi_lo = phi_of(&clamped);
    for _ in 0..MAX_BISECTIONS {
        if phi_hi <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let u = point(mid);
        let p = phi_of(&u);
        if p >= 0.0 {
            hi = mid;
            u_hi = u;
            phi_hi = p;
        } else {
            lo = mid;
            phi_lo = p;
        }
    }
    // φ is affine between breakpoints; take the secant root when it keeps the
    // constraint satisfied.
    if phi_hi > 0.0 && phi_hi > phi_lo {
        let lambda = lo + (hi - lo) * (-phi_lo / (phi_hi - phi_lo));
        if lambda > lo && lambda < hi {
            let u = point(lambda);
            if phi_of(&u) >= 0.0 {
                return Ok(u);
            }
        }
    }
    Ok(u_hi)
}

/// Tolerance within which a pinned battery interval that came out inverted by
/// rounding is collapsed to a point.
const INVERTED_BOUND_SLACK: f64 = 1e-9;

/// Feasible set for step `state.t`: static limits intersected with the SOC
/// headroom that keeps the next SOC inside each battery's reachable envelope,
/// renewable setpoints in `[0, avail]` (pinned to `avail` when not
/// curtailable), controllable limits, `lt_quantity ∈ [0, cap]`, and the
/// no-purchase row when purchases are disallowed.
pub fn build_feasible_set(
    system: &ValidatedSystem,
    state: &SystemState,
    w: &ExogenousSample,
) -> Result<FeasibleSet, ProjectionError> {
    let t = state.t;
    let dt = system.dt;
    let layout = system.layout();
    let mut lower = Vec::with_capacity(layout.dim());
    let mut upper = Vec::with_capacity(layout.dim());
    for (b, soc) in system.batteries.iter().zip(&state.soc) {
        let (mut lo, mut hi) = b.power_bounds(t, *soc, dt);
        if lo > hi {
            let scale = lo.abs().max(hi.abs()).max(1.0);
            if lo - hi > INVERTED_BOUND_SLACK * scale {
                return Err(ProjectionError::Empty(format!(
                    "battery {} has no admissible power at step {t} from SOC {soc}",
                    b.name
                )));
            }
            let mid = 0.5 * (lo + hi);
            lo = mid;
            hi = mid;
        }
        lower.push(lo);
        upper.push(hi);
    }
    for (r, &avail) in system.renewables.iter().zip(&w.avail) {
        lower.push(if r.curtailable { 0.0 } else { avail });
        upper.push(avail);
    }
    for c in &system.controllables {
        lower.push(c.inject_min[t]);
        upper.push(c.inject_max[t]);
    }
    lower.push(0.0);
    upper.push(state.lt_cap);
    let mut set = FeasibleSet { lower, upper, coupling: None, labels: system.action_labels() };
    if !system.market.allow_rt_purchase {
        let mut weights = vec![1.0; layout.dim()];
        weights[layout.lt_index()] = -1.0 / dt;
        set.coupling = Some(Coupling { weights, offset: 0.0 });
    }
    set.check_nonempty()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxed(lo: &[f64], hi: &[f64]) -> FeasibleSet {
        FeasibleSet::new(lo.to_vec(), hi.to_vec())
    }

    #[test]
    fn feasible_raw_is_unchanged() {
        let set = boxed(&[0.0, -1.0], &[2.0, 1.0]).with_coupling(vec![1.0, 1.0], 0.0);
        let raw = [1.5, -0.25];
        assert_eq!(project_flat(&raw, &set).unwrap(), raw.to_vec());
    }

    #[test]
    fn box_only_clamps() {
        let set = boxed(&[0.0, -1.0, 5.0], &[2.0, 1.0, 5.0]);
        assert_eq!(project_flat(&[3.0, -4.0, 0.0], &set).unwrap(), vec![2.0, -1.0, 5.0]);
    }

    #[test]
    fn halfspace_projection_by_hand() {
        // Project (0, 0) onto u0 + u1 ≥ 2 within [0, 5]²: (1, 1).
        let set = boxed(&[0.0, 0.0], &[5.0, 5.0]).with_coupling(vec![1.0, 1.0], -2.0);
        let u = project_flat(&[0.0, 0.0], &set).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-12 && (u[1] - 1.0).abs() < 1e-12, "{u:?}");
        // With u1 ≤ 0.5 the second coordinate saturates: (1.5, 0.5).
        let set = boxed(&[0.0, 0.0], &[5.0, 0.5]).with_coupling(vec![1.0, 1.0], -2.0);
        let u = project_flat(&[0.0, 0.0], &set).unwrap();
        assert!((u[0] - 1.5).abs() < 1e-12 && (u[1] - 0.5).abs() < 1e-12, "{u:?}");
    }

    #[test]
    fn weighted_metric_moves_cheap_coordinates() {
        let set = boxed(&[0.0, 0.0], &[5.0, 5.0]).with_coupling(vec![1.0, 1.0], -2.0);
        let u = project_weighted(&[0.0, 0.0], &set, Some(&[1.0, 3.0])).unwrap();
        // Minimize u0² + 3u1² on u0 + u1 = 2: u0 = 1.5, u1 = 0.5.
        assert!((u[0] - 1.5).abs() < 1e-12 && (u[1] - 0.5).abs() < 1e-12, "{u:?}");
    }

    #[test]
    fn empty_sets_are_reported() {
        let set = boxed(&[0.0], &[-1.0]);
        assert!(matches!(project_flat(&[0.0], &set), Err(ProjectionError::Empty(_))));
        let set = boxed(&[0.0], &[1.0]).with_coupling(vec![1.0], -2.0);
        assert!(matches!(project_flat(&[0.0], &set), Err(ProjectionError::Empty(_))));
        assert!(matches!(project_flat(&[f64::NAN], &boxed(&[0.0], &[1.0])), Err(ProjectionError::NonFinite(0))));
    }

    #[test]
    fn check_feasible_boundaries_and_violations() {
        let mut set = boxed(&[0.0, 0.0], &[1.0, 2.0]);
        set.labels = vec!["a".into(), "b".into()];
        assert!(check_feasible_flat(&[1.0, 2.0], &set, 1e-9).feasible);
        let r = check_feasible_flat(&[1.0, 2.0 + 2e-9], &set, 1e-9);
        assert!(!r.feasible);
        assert_eq!(r.worst.unwrap().0, "b ≤ upper");
    }
}
