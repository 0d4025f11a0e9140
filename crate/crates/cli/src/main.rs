//! `gridmkt`: generate traces, run policies against the ex-post oracle,
//! train PPO agents and emit plotting tables.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input file or
//! configuration, 3 failure while running.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridmkt::exogenous::{ExogenousSpec, ExogenousTrace, PriceProcessParams, RenewableProcessParams};
use gridmkt::harness::run::{config_hash, load_scenario, validate_scenario};
use gridmkt::harness::{
    execute, plotdata, write_artifacts, HarnessError, MpcSpec, PlotError, PolicySpec, RunRequest, Scenario, TrainReport,
};
use gridmkt::io::write_atomic;
use gridmkt::mpc::ForecastKind;
use gridmkt::ppo::{curve_csv, save_policy, train, PpoConfig, PpoError};

#[derive(Parser)]
#[command(name = "gridmkt", version, about = "Multi-market storage and renewables dispatch toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an exogenous trace CSV.
    GenExo(GenExoArgs),
    /// Solve the ex-post optimum on one trace.
    Oracle(RunArgs),
    /// Run the receding-horizon controller on one trace.
    Mpc(MpcArgs),
    /// Run one policy on one trace.
    Simulate(SimulateArgs),
    /// Train a PPO agent.
    Train(TrainArgs),
    /// Run a roster of policies on shared traces and tabulate oracle ratios.
    Evaluate(EvaluateArgs),
    /// Convert an episode log into a long-format plotting table.
    Plotdata(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Exchange,
    Lmp,
}

#[derive(Args)]
struct GenExoArgs {
    /// Take the processes and horizon from a scenario or system file.
    #[arg(long, conflicts_with_all = ["kind", "solar", "wind", "step_duration"])]
    config: Option<String>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    /// Add a solar process with this capacity in W. Repeatable.
    #[arg(long, value_name = "W")]
    solar: Vec<f64>,
    /// Add a wind process with this capacity in W. Repeatable.
    #[arg(long, value_name = "W")]
    wind: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of steps [default: one day, or the scenario horizon].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: Option<u64>,
    /// Hours per step [default: 1, or 5 minutes for lmp].
    #[arg(long, value_name = "HOURS")]
    step_duration: Option<f64>,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario (casestudy, smoothed, smoothed-sine), scenario JSON
    /// or system configuration JSON.
    #[arg(long)]
    config: String,
    /// Use this trace CSV instead of generating one.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the episode length. Requires scalar profiles.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: Option<u64>,
    /// SOC lattice points per battery for the oracle and MPC.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    grid: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Forecast {
    Perfect,
    Persistence,
    Diurnal,
}

#[derive(Args)]
struct MpcArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Lookahead in steps, or T for the rest of the episode.
    #[arg(long, default_value = "24")]
    horizon: String,
    #[arg(long, value_enum, default_value = "persistence")]
    forecast: Forecast,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// random, idle, mpc:<perfect|persistence|diurnal>:<H|T>[:grid] or ppo:<path>.
    #[arg(long, default_value = "random")]
    policy: String,
    /// Also solve the oracle and report the ratio.
    #[arg(long)]
    score: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Replace the scenario roster. Repeatable.
    #[arg(long)]
    policy: Vec<String>,
    /// Number of generated traces, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    traces: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: String,
    /// PPO configuration JSON; missing keys take their defaults.
    #[arg(long)]
    ppo_config: Option<PathBuf>,
    /// Override the PPO seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: Option<u64>,
    /// Override the training budget in environment steps.
    #[arg(long)]
    env_steps: Option<usize>,
    #[arg(long, default_value_t = 10)]
    eval_traces: u64,
    /// First held-out evaluation seed.
    #[arg(long, default_value_t = 1_000_000)]
    eval_seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Episode log CSV.
    log: PathBuf,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn usage(m: impl Into<String>) -> HarnessError {
    HarnessError::Usage(m.into())
}

fn validation(m: impl std::fmt::Display) -> HarnessError {
    HarnessError::Validation(m.to_string())
}

fn runtime(m: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime(m.to_string())
}

fn write_or_print(out: Option<&Path>, body: &str) -> Result<(), HarnessError> {
    match out {
        Some(p) => write_atomic(p, body.as_bytes()).map_err(|e| runtime(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(body.as_bytes()).and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(runtime(e)),
                _ => Ok(()),
            }
        }
    }
}

fn scenario_for(config: &str, steps: Option<u64>) -> Result<Scenario, HarnessError> {
    let s = load_scenario(config)?;
    Ok(match steps {
        Some(n) => s.with_horizon(n as usize),
        None => s,
    })
}

fn trace_summary(t: &ExogenousTrace) -> String {
    let stats = |xs: &[f64]| {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        format!("mean {mean:.3} min {min:.3} max {max:.3}")
    };
    let mut s = format!("steps {}\nrt_price: {}\n", t.len(), stats(&t.rt_price));
    for (name, a) in t.renewable_names.iter().zip(&t.avail) {
        s.push_str(&format!("avail_{name}: {}\n", stats(a)));
    }
    s.push_str(&format!("fingerprint {}\n", t.fingerprint()));
    s
}

fn gen_exo(a: GenExoArgs) -> Result<(), HarnessError> {
    let trace = if let Some(config) = &a.config {
        let scenario = scenario_for(config, a.steps)?;
        let system = validate_scenario(&scenario)?;
        scenario.exogenous.generate(&system, a.seed).map_err(validation)?
    } else {
        let kind = a.kind.unwrap_or(Kind::Exchange);
        if matches!(kind, Kind::Lmp) && !(a.solar.is_empty() && a.wind.is_empty()) {
            return Err(usage("--solar and --wind cannot be combined with --kind lmp"));
        }
        let dt = a.step_duration.unwrap_or(match kind {
            Kind::Exchange => 1.0,
            Kind::Lmp => 5.0 / 60.0,
        });
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(usage("--step-duration must be positive"));
        }
        let steps = match a.steps {
            Some(n) => n as usize,
            None => (24.0 / dt).round().max(1.0) as usize,
        };
        let price = match kind {
            Kind::Exchange => PriceProcessParams::exchange(),
            Kind::Lmp => PriceProcessParams::lmp(),
        };
        let mut renewables = Vec::new();
        let mut names = Vec::new();
        for (label, caps, make) in [
            ("solar", &a.solar, RenewableProcessParams::solar as fn(f64) -> RenewableProcessParams),
            ("wind", &a.wind, RenewableProcessParams::wind),
        ] {
            for (i, &cap) in caps.iter().enumerate() {
                names.push(if i == 0 { label.to_string() } else { format!("{label}{}", i + 1) });
                renewables.push(make(cap));
            }
        }
        ExogenousSpec { price, renewables }.generate_named(names, a.seed, steps, dt).map_err(usage_from_exo)?
    };
    eprint!("{}", trace_summary(&trace));
    write_or_print(a.out.as_deref(), &trace.to_csv_string())
}

fn usage_from_exo(e: gridmkt::exogenous::ExoError) -> HarnessError {
    usage(e.to_string())
}

fn run(args: &RunArgs, command: &str, roster: Vec<PolicySpec>, seeds: Vec<u64>, oracle: bool) -> Result<(), HarnessError> {
    let scenario = scenario_for(&args.config, args.steps)?;
    let req = RunRequest {
        command: command.into(),
        roster,
        seeds,
        trace_file: args.trace.clone(),
        oracle,
        grid: args.grid.map(|g| g as usize),
    };
    let artifacts = execute(&scenario, &req)?;
    write_artifacts(&args.out, &artifacts)?;
    print!("{}", artifacts.report.summary());
    println!("report {} sha256 {}", args.out.join("report.json").display(), artifacts.report.hash());
    Ok(())
}

fn parse_policy(s: &str) -> Result<PolicySpec, HarnessError> {
    s.parse().map_err(usage)
}

fn mpc(a: MpcArgs) -> Result<(), HarnessError> {
    let horizon = match a.horizon.as_str() {
        "T" => usize::MAX,
        h => h.parse::<usize>().ok().filter(|&h| h >= 1).ok_or_else(|| usage(format!("--horizon {h:?} must be a positive integer or T")))?,
    };
    let forecaster = match a.forecast {
        Forecast::Perfect => ForecastKind::Perfect,
        Forecast::Persistence => ForecastKind::Persistence,
        Forecast::Diurnal => ForecastKind::Diurnal,
    };
    let spec = PolicySpec::Mpc(MpcSpec { horizon, forecaster, grid: a.run.grid.map(|g| g as usize) });
    run(&a.run, "mpc", vec![spec], vec![a.run.seed], true)
}

fn evaluate(a: EvaluateArgs) -> Result<(), HarnessError> {
    let roster = if a.policy.is_empty() {
        scenario_for(&a.run.config, a.run.steps)?.roster
    } else {
        a.policy.iter().map(|p| parse_policy(p)).collect::<Result<_, _>>()?
    };
    let seeds = if a.run.trace.is_some() { vec![a.run.seed] } else { (0..a.traces).map(|k| a.run.seed + k).collect() };
    run(&a.run, "evaluate", roster, seeds, true)
}

fn train_cmd(a: TrainArgs, threads: Option<usize>) -> Result<(), HarnessError> {
    let scenario = scenario_for(&a.config, a.steps)?;
    let system = validate_scenario(&scenario)?;
    let mut cfg = match &a.ppo_config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| validation(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<PpoConfig>(&text).map_err(|e| validation(format!("{}: {e}", p.display())))?
        }
        None => PpoConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.env_steps {
        cfg.total_env_steps = n;
    }
    if let Some(t) = threads {
        cfg.workers = cfg.workers.min(t).max(1);
    }
    cfg.validate().map_err(validation)?;
    let eval_seeds: Vec<u64> = (0..a.eval_traces).map(|k| a.eval_seed + k).collect();
    let outcome = train(&system, &scenario.exogenous, &eval_seeds, &cfg).map_err(|e| match e {
        PpoError::Config(_) | PpoError::File(_) => validation(e),
        e => runtime(e),
    })?;
    let report = TrainReport {
        tool: "gridmkt".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(&scenario),
        scenario,
        ppo: cfg,
        eval_seeds,
        env_steps: outcome.env_steps,
        violations: outcome.violations,
        final_mean_ratio: outcome.final_ratios.iter().sum::<f64>() / outcome.final_ratios.len() as f64,
        final_ratios: outcome.final_ratios,
        policy: "policy.json".into(),
        curve: "curve.csv".into(),
    };
    let io = |e: std::io::Error, p: &Path| runtime(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(&a.out).map_err(|e| io(e, &a.out))?;
    save_policy(&a.out.join("policy.json"), &outcome.policy).map_err(runtime)?;
    let curve = a.out.join("curve.csv");
    write_atomic(&curve, curve_csv(&outcome.curve).as_bytes()).map_err(|e| io(e, &curve))?;
    let rp = a.out.join("report.json");
    write_atomic(&rp, report.to_json().as_bytes()).map_err(|e| io(e, &rp))?;
    println!(
        "trained {} env steps, {} violations, final mean oracle ratio {:.4}",
        report.env_steps, report.violations, report.final_mean_ratio
    );
    println!("policy {}", a.out.join("policy.json").display());
    Ok(())
}

fn plot(a: PlotArgs) -> Result<(), HarnessError> {
    let text = std::fs::read_to_string(&a.log).map_err(|e| validation(format!("{}: {e}", a.log.display())))?;
    let table = plotdata(&text).map_err(|e: PlotError| validation(format!("{}: {e}", a.log.display())))?;
    write_or_print(a.out.as_deref(), &table)
}

/// Worker cap from `GRIDMKT_THREADS`, applied to the global pool.
fn configure_threads() -> Result<Option<usize>, HarnessError> {
    let Ok(v) = std::env::var("GRIDMKT_THREADS") else {
        return Ok(None);
    };
    let n = v
        .trim()
        .parse::<usize>()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| usage(format!("GRIDMKT_THREADS={v:?} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(runtime)?;
    Ok(Some(n))
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    let threads = configure_threads()?;
    match cli.command {
        Command::GenExo(a) => gen_exo(a),
        Command::Oracle(a) => run(&a, "oracle", Vec::new(), vec![a.seed], true),
        Command::Mpc(a) => mpc(a),
        Command::Simulate(a) => {
            let spec = parse_policy(&a.policy)?;
            run(&a.run, "simulate", vec![spec], vec![a.run.seed], a.score)
        }
        Command::Train(a) => train_cmd(a, threads),
        Command::Evaluate(a) => evaluate(a),
        Command::Plotdata(a) => plot(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
