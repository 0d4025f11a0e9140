//! One harness run from scenario to report and files, shared by the
//! `oracle`, `mpc`, `simulate` and `evaluate` commands.

use std::path::{Path, PathBuf};

use super::report::{oracle_log_name, policy_entry, Report, TraceEntry};
use super::run::{config_hash, run_roster, solve_oracles, traces, validate_scenario, HarnessError};
use super::scenario::{default_grid, PolicySpec, Scenario};
use crate::io::write_atomic;

#[derive(Debug, Clone)]
pub struct RunRequest {
    /// Command name recorded in the report.
    pub command: String,
    pub roster: Vec<PolicySpec>,
    /// One generated trace per seed, or with `trace_file` the seed of the
    /// random policy.
    pub seeds: Vec<u64>,
    pub trace_file: Option<PathBuf>,
    /// Solve the ex-post oracle on every trace and score runs against it.
    pub oracle: bool,
    pub grid: Option<usize>,
}

/// A finished run: the report and every file it lists, as `(name, bytes)`.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub report: Report,
    pub files: Vec<(String, String)>,
}

pub fn execute(scenario: &Scenario, req: &RunRequest) -> Result<Artifacts, HarnessError> {
    if req.seeds.is_empty() {
        return Err(HarnessError::Usage("at least one seed is required".into()));
    }
    if req.roster.is_empty() && !req.oracle {
        return Err(HarnessError::Usage("nothing to run".into()));
    }
    // An explicit roster replaces the scenario's, and may be empty here
    // when only the oracle runs.
    let checked = Scenario { roster: vec![PolicySpec::Idle], ..scenario.clone() };
    let system = validate_scenario(&checked)?;
    let grid = req.grid.unwrap_or_else(|| default_grid(system.batteries.len()));
    if grid < 2 {
        return Err(HarnessError::Usage("--grid must be at least 2".into()));
    }
    let traces = traces(scenario, &system, req.trace_file.as_deref(), &req.seeds)?;
    let plans = if req.oracle { solve_oracles(&system, &traces, grid)? } else { Vec::new() };
    let results = run_roster(&req.roster, &system, &traces, &req.seeds, &plans)?;

    let mut files = Vec::new();
    let mut trace_entries = Vec::new();
    for (k, t) in traces.iter().enumerate() {
        let plan = plans.get(k);
        if let Some(p) = plan {
            files.push((oracle_log_name(k), p.log.to_csv_string(&system)));
        }
        trace_entries.push(TraceEntry {
            seed: if req.trace_file.is_some() { None } else { Some(req.seeds[k]) },
            fingerprint: t.fingerprint(),
            oracle_value: plan.map(|p| p.total_value),
            oracle_log: plan.map(|_| oracle_log_name(k)),
        });
    }
    let mut policies = Vec::new();
    for (i, (spec, runs)) in req.roster.iter().zip(&results).enumerate() {
        let entry = policy_entry(i, spec, runs);
        for (run, e) in runs.iter().zip(&entry.runs) {
            files.push((e.log.clone(), run.log.to_csv_string(&system)));
        }
        policies.push(entry);
    }
    let report = Report {
        tool: "gridmkt".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: req.command.clone(),
        config_hash: config_hash(scenario),
        scenario: Scenario { roster: req.roster.clone(), ..scenario.clone() },
        seeds: req.seeds.clone(),
        trace_file: req.trace_file.as_ref().map(|p| p.display().to_string()),
        oracle_grid: grid,
        traces: trace_entries,
        policies,
    };
    Ok(Artifacts { report, files })
}

/// Write every file and then `report.json` into `dir`, each atomically.
pub fn write_artifacts(dir: &Path, artifacts: &Artifacts) -> Result<(), HarnessError> {
    let io = |e: std::io::Error, what: &Path| HarnessError::Runtime(format!("{}: {e}", what.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    for (name, body) in &artifacts.files {
        let p = dir.join(name);
        write_atomic(&p, body.as_bytes()).map_err(|e| io(e, &p))?;
    }
    let p = dir.join("report.json");
    write_atomic(&p, artifacts.report.to_json().as_bytes()).map_err(|e| io(e, &p))
}
