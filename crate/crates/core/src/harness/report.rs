//! Run reports. A report holds the full scenario, the seeds and the trace
//! fingerprints, so rerunning from it reproduces every CSV it lists. It has
//! no timestamps or absolute paths, so identical runs give identical bytes.

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::run::{mean_se, RunResult};
use super::scenario::{PolicySpec, Scenario};
use crate::env::RewardComponents;
use crate::oracle::ValueGap;
use crate::ppo::PpoConfig;

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub scenario: Scenario,
    /// Trace seeds; with a trace file, the single seed given to the random
    /// policy.
    pub seeds: Vec<u64>,
    pub trace_file: Option<String>,
    pub oracle_grid: usize,
    pub traces: Vec<TraceEntry>,
    pub policies: Vec<PolicyEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub seed: Option<u64>,
    pub fingerprint: String,
    pub oracle_value: Option<f64>,
    /// File name of the oracle episode log, relative to the report.
    pub oracle_log: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyEntry {
    pub policy: String,
    pub runs: Vec<RunEntry>,
    pub mean_total: f64,
    /// Mean and standard error of the oracle ratio, over the traces where
    /// the oracle value is positive.
    pub mean_ratio: Option<f64>,
    pub ratio_se: Option<f64>,
    pub violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunEntry {
    pub trace: usize,
    pub total: f64,
    pub components: RewardComponents,
    pub gap: Option<GapEntry>,
    pub violations: usize,
    pub log: String,
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum GapEntry {
    Ratio(f64),
    Absolute(f64),
}

impl From<ValueGap> for GapEntry {
    fn from(g: ValueGap) -> Self {
        match g {
            ValueGap::Ratio(r) => GapEntry::Ratio(r),
            ValueGap::Absolute(a) => GapEntry::Absolute(a),
        }
    }
}

/// File-name-safe rendering of a roster entry, prefixed by its index so
/// names stay unique.
pub fn policy_slug(index: usize, spec: &PolicySpec) -> String {
    let text = match spec {
        PolicySpec::Ppo(p) => format!("ppo-{}", p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()),
        other => other.to_string(),
    };
    let clean: String = text.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '-' }).collect();
    format!("p{index}-{clean}")
}

pub fn run_log_name(index: usize, spec: &PolicySpec, trace: usize) -> String {
    format!("{}_trace{trace}.csv", policy_slug(index, spec))
}

pub fn oracle_log_name(trace: usize) -> String {
    format!("oracle_trace{trace}.csv")
}

pub fn policy_entry(index: usize, spec: &PolicySpec, runs: &[RunResult]) -> PolicyEntry {
    let ratios: Vec<f64> = runs.iter().filter_map(|r| r.gap.and_then(|g| g.ratio())).collect();
    let (mean_ratio, ratio_se) = if ratios.is_empty() {
        (None, None)
    } else {
        let (m, se) = mean_se(&ratios);
        (Some(m), Some(se))
    };
    PolicyEntry {
        policy: spec.to_string(),
        runs: runs
            .iter()
            .enumerate()
            .map(|(k, r)| RunEntry {
                trace: k,
                total: r.total,
                components: r.components,
                gap: r.gap.map(GapEntry::from),
                violations: r.violations,
                log: run_log_name(index, spec, k),
            })
            .collect(),
        mean_total: mean_se(&runs.iter().map(|r| r.total).collect::<Vec<_>>()).0,
        mean_ratio,
        ratio_se,
        violations: runs.iter().map(|r| r.violations).sum(),
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of [`Report::to_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut s = format!("{:<28} {:>14} {:>12} {:>10}\n", "policy", "mean_total", "ratio", "violations");
        for t in &self.traces {
            if let Some(v) = t.oracle_value {
                s.push_str(&format!("{:<28} {:>14.4} {:>12} {:>10}\n", match t.seed {
                    Some(seed) => format!("oracle (seed {seed})"),
                    None => "oracle (trace file)".into(),
                }, v, "1", "0"));
            }
        }
        for p in &self.policies {
            let ratio = match (p.mean_ratio, p.ratio_se) {
                (Some(m), Some(se)) => format!("{m:.4}±{se:.4}"),
                _ => "-".into(),
            };
            s.push_str(&format!("{:<28} {:>14.4} {:>12} {:>10}\n", p.policy, p.mean_total, ratio, p.violations));
        }
        s
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub scenario: Scenario,
    pub ppo: PpoConfig,
    pub eval_seeds: Vec<u64>,
    pub env_steps: usize,
    pub violations: usize,
    pub final_ratios: Vec<f64>,
    pub final_mean_ratio: f64,
    pub policy: String,
    pub curve: String,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
