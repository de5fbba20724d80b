//! `ngnsim` — command-line front end for the NGN/eNGN control-plane models.
//!
//! Five subcommands cover the model's surfaces: `trace` generates checkable
//! protocol traces, `simulate` runs the discrete-event engine on one
//! scenario, `analyze` evaluates a scenario with any registered engine
//! (exact chain solution by default), `sweep` walks a population grid and
//! reports saturation, and `compare` pits the two architectures against
//! each other at equal processor budgets.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 invariant
//! violations found in a generated trace, 3 engine failure (state space,
//! convergence, or a drained simulation), 4 I/O error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ngnsim::ctmc::build_chain;
use ngnsim::engine::{EngineError, EngineOptions, EngineRegistry};
use ngnsim::model::{
    validate_scenario, MobilityMode, ModelError, RawScenario, UserId, ValidatedScenario,
};
use ngnsim::protocol::{
    apply_faults, check_trace_invariants, FlowError, FlowKind, ScenarioRun, Trace,
};
use ngnsim::scaling::{
    compare_variants, detect_saturation, sweep_csv, sweep_population, CompareError, SaturationRules,
};

const DEFAULT_NGN: &str = include_str!("../../../fixtures/default-ngn.json");
const DEFAULT_ENGN: &str = include_str!("../../../fixtures/default-engn.json");

#[derive(Parser, Debug)]
#[command(
    name = "ngnsim",
    version,
    about = "Executable comparison of the NGN and evolved-NGN control planes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a service-flow message trace and check its invariants.
    Trace(TraceCmd),
    /// Run the discrete-event simulation on one scenario.
    Simulate(SimulateCmd),
    /// Evaluate one scenario with a registered engine (exact by default).
    Analyze(AnalyzeCmd),
    /// Sweep a population grid and detect the saturation point.
    Sweep(SweepCmd),
    /// Compare NGN and eNGN scalability at equal processor budgets.
    Compare(CompareCmd),
}

/// Scenario selection shared by the single-scenario subcommands.
#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario configuration file (JSON).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Built-in scenario used when --config is absent: `ngn` or `engn`.
    #[arg(long, default_value = "engn", value_name = "VARIANT")]
    variant: String,
    /// Override a config field before validation, e.g. `rates.think=0.05`
    /// or `population=40` (repeatable; value is parsed as JSON).
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct TraceCmd {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Flow to generate; one of: attach, mobility-register,
    /// handover-network, handover-host, location-binding, coordination,
    /// external-app.
    #[arg(long, value_name = "FLOW")]
    flow: String,
    /// Fixture user driving the flow.
    #[arg(long, default_value_t = 0)]
    user: u64,
    /// Write the trace (JSONL) here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateCmd {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Closed-population override.
    #[arg(long, value_name = "K")]
    population: Option<u64>,
    /// Root seed for all random streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Measured transaction completions to collect after warmup.
    #[arg(long, default_value_t = 20_000)]
    completions: u64,
    /// Stop at a simulated-time horizon instead of a completion count.
    #[arg(long, value_name = "T")]
    horizon: Option<f64>,
    /// Fraction of the run discarded as warmup.
    #[arg(long, default_value_t = 0.1)]
    warmup: f64,
    /// Write the per-event record stream (JSONL) here.
    #[arg(long, value_name = "FILE")]
    events_out: Option<PathBuf>,
    /// Write the metrics report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeCmd {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Closed-population override.
    #[arg(long, value_name = "K")]
    population: Option<u64>,
    /// Evaluation engine: `ctmc` (exact) or `des` (simulation).
    #[arg(long, default_value = "ctmc")]
    engine: String,
    /// Root seed (simulation engine only).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Measured completions (simulation engine only).
    #[arg(long, default_value_t = 20_000)]
    completions: u64,
    /// Warmup fraction (simulation engine only).
    #[arg(long, default_value_t = 0.1)]
    warmup: f64,
    /// Upper bound on enumerated chain states.
    #[arg(long, default_value_t = 200_000)]
    state_cap: usize,
    /// Steady-state residual tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Dump the generated chain (stations, states, transitions) here.
    #[arg(long, value_name = "FILE")]
    dump_model: Option<PathBuf>,
    /// Write the metrics report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepCmd {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Population grid `START:END[:STEP]`, inclusive.
    #[arg(long, value_name = "GRID")]
    grid: String,
    /// Evaluation engine for the sweep points.
    #[arg(long, default_value = "des")]
    engine: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Measured completions per point (simulation engine).
    #[arg(long, default_value_t = 20_000)]
    completions: u64,
    #[arg(long, default_value_t = 0.1)]
    warmup: f64,
    #[arg(long, default_value_t = 200_000)]
    state_cap: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Slope rule: throughput elasticity below this marks saturation.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Utilization rule: any pool at or above this marks saturation.
    #[arg(long, default_value_t = 0.99)]
    util_threshold: f64,
    /// Write the CSV here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareCmd {
    /// NGN scenario config; defaults to the built-in fixture.
    #[arg(long, value_name = "FILE")]
    config_ngn: Option<PathBuf>,
    /// eNGN scenario config; defaults to the built-in fixture.
    #[arg(long, value_name = "FILE")]
    config_engn: Option<PathBuf>,
    /// Override applied to both scenarios (repeatable), e.g.
    /// `rates.think=0.05`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Total processor budget to compare at (repeatable; default 8 and 16).
    #[arg(long = "budget", value_name = "N")]
    budgets: Vec<u32>,
    /// Population grid `START:END[:STEP]` swept at every budget.
    #[arg(long, default_value = "50:1500:50", value_name = "GRID")]
    grid: String,
    /// Evaluation engine for the sweep points.
    #[arg(long, default_value = "des")]
    engine: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Measured completions per point (simulation engine).
    #[arg(long, default_value_t = 20_000)]
    completions: u64,
    #[arg(long, default_value_t = 0.1)]
    warmup: f64,
    #[arg(long, default_value_t = 200_000)]
    state_cap: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.99)]
    util_threshold: f64,
    /// Write the comparison report (JSON) here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

// ---------------------------------------------------------------------
// Error-to-exit-code mapping
// ---------------------------------------------------------------------

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn io_fail(path: &Path, err: std::io::Error) -> Failure {
    Failure {
        code: 4,
        message: format!("{}: {err}", path.display()),
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Failure {
        usage(e.to_string())
    }
}

impl From<FlowError> for Failure {
    fn from(e: FlowError) -> Failure {
        usage(e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Failure {
        match e {
            EngineError::Model(m) => m.into(),
            EngineError::UnknownEngine(_) => usage(e.to_string()),
            other => Failure {
                code: 3,
                message: other.to_string(),
            },
        }
    }
}

impl From<CompareError> for Failure {
    fn from(e: CompareError) -> Failure {
        match e {
            CompareError::Engine(err) => err.into(),
            other => usage(other.to_string()),
        }
    }
}

// ---------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------

impl ScenarioArgs {
    /// Load, override, and validate the selected scenario. The second
    /// element labels the scenario in CSV output.
    fn load(&self) -> Result<(ValidatedScenario, String), Failure> {
        let (text, label) = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                (text, label)
            }
            None => match self.variant.as_str() {
                "ngn" => (DEFAULT_NGN.to_string(), "default-ngn".to_string()),
                "engn" => (DEFAULT_ENGN.to_string(), "default-engn".to_string()),
                other => {
                    return Err(usage(format!(
                        "unknown variant `{other}` (expected `ngn` or `engn`)"
                    )))
                }
            },
        };
        let scenario = load_scenario(&text, &label, &self.set)?;
        Ok((scenario, label))
    }
}

fn load_scenario(text: &str, label: &str, set: &[String]) -> Result<ValidatedScenario, Failure> {
    let mut doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| usage(format!("{label}: {e}")))?;
    for assignment in set {
        apply_set(&mut doc, assignment)?;
    }
    let raw: RawScenario =
        serde_json::from_value(doc).map_err(|e| usage(format!("{label}: {e}")))?;
    Ok(validate_scenario(&raw)?)
}

/// Apply one `PATH=VALUE` override to the raw config document. The path
/// walks object fields separated by dots; the value is parsed as JSON and
/// falls back to a plain string.
fn apply_set(doc: &mut serde_json::Value, assignment: &str) -> Result<(), Failure> {
    let (path, value_text) = assignment
        .split_once('=')
        .ok_or_else(|| usage(format!("--set expects PATH=VALUE, got `{assignment}`")))?;
    let parts: Vec<&str> = path.split('.').collect();
    if path.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(usage(format!(
            "--set has an empty path segment in `{assignment}`"
        )));
    }
    let value: serde_json::Value = serde_json::from_str(value_text)
        .unwrap_or_else(|_| serde_json::Value::String(value_text.to_string()));
    let mut cursor = doc;
    for key in &parts[..parts.len() - 1] {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| usage(format!("--set path `{path}`: `{key}` is not an object")))?;
        cursor = obj
            .entry(key.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    let last = parts[parts.len() - 1];
    cursor
        .as_object_mut()
        .ok_or_else(|| {
            usage(format!(
                "--set path `{path}`: `{last}` is not an object field"
            ))
        })?
        .insert(last.to_string(), value);
    Ok(())
}

/// Write via a temporary sibling and rename, so readers never observe a
/// partially written file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let mut tmp_name = path
        .file_name()
        .ok_or_else(|| usage(format!("`{}` is not a writable path", path.display())))?
        .to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| io_fail(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_fail(path, e))
}

fn emit(out: Option<&Path>, content: &str) -> Result<(), Failure> {
    match out {
        Some(path) => write_atomic(path, content.as_bytes()),
        None => std::io::stdout()
            .write_all(content.as_bytes())
            .map_err(|e| Failure {
                code: 4,
                message: format!("stdout: {e}"),
            }),
    }
}

fn parse_grid(spec: &str) -> Result<Vec<u64>, Failure> {
    let bad = || usage(format!("--grid expects START:END[:STEP], got `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    let (start, end, step) = match parts.as_slice() {
        [a, b] => (a, b, "1"),
        [a, b, s] => (a, b, *s),
        _ => return Err(bad()),
    };
    let start: u64 = start.parse().map_err(|_| bad())?;
    let end: u64 = end.parse().map_err(|_| bad())?;
    let step: u64 = step.parse().map_err(|_| bad())?;
    if start == 0 || step == 0 || end < start {
        return Err(usage(format!(
            "--grid `{spec}` must satisfy 1 <= START <= END and STEP >= 1"
        )));
    }
    Ok((start..=end).step_by(step as usize).collect())
}

// ---------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------

fn cmd_trace(cmd: TraceCmd) -> Result<(), Failure> {
    let (scenario, _) = cmd.scenario.load()?;
    let kind = FlowKind::parse(&cmd.flow).ok_or_else(|| {
        usage(format!(
            "unknown flow `{}` (expected one of: {})",
            cmd.flow,
            FlowKind::NAMES.join(", ")
        ))
    })?;
    let trace = generate_trace(&scenario, kind, UserId(cmd.user))?;
    let violations = check_trace_invariants(&trace);
    emit(cmd.out.as_deref(), &trace.to_jsonl())?;
    if violations.is_empty() {
        Ok(())
    } else {
        for v in &violations {
            eprintln!("violation {} at seq {}: {}", v.rule, v.seq, v.detail);
        }
        Err(Failure {
            code: 2,
            message: format!("{} invariant violation(s) in the trace", violations.len()),
        })
    }
}

/// Run the named flow on a fresh world. Flows with protocol preconditions
/// (an attached or mobility-registered user) establish them silently, so
/// the emitted trace contains exactly the requested flow; configured fault
/// injections are applied before the trace is returned.
fn generate_trace(
    scenario: &ValidatedScenario,
    kind: FlowKind,
    user: UserId,
) -> Result<Trace, Failure> {
    let mut run = ScenarioRun::new(scenario);
    match kind {
        FlowKind::Attach | FlowKind::Coordination => {}
        FlowKind::MobilityRegister | FlowKind::ExternalApp => {
            run.attach(user)?;
        }
        FlowKind::HandoverNetwork | FlowKind::LocationBinding => {
            run.attach(user)?;
            run.mobility_register(user, MobilityMode::NetworkBased)?;
        }
        FlowKind::HandoverHost => {
            run.attach(user)?;
            run.mobility_register(user, MobilityMode::HostBased)?;
        }
    }
    run.reset_trace();
    match kind {
        FlowKind::Attach => run.attach(user)?,
        FlowKind::MobilityRegister => {
            let mode = scenario
                .users
                .get(&user)
                .and_then(|u| u.mobility)
                .unwrap_or(MobilityMode::NetworkBased);
            run.mobility_register(user, mode)?
        }
        FlowKind::HandoverNetwork => run.handover_network(user, None)?,
        FlowKind::HandoverHost => run.handover_host(user)?,
        FlowKind::LocationBinding => run.location_binding_update(user, None)?,
        FlowKind::Coordination => run.coordination(user)?,
        FlowKind::ExternalApp => run.external_session(user)?,
    };
    let mut trace = run.trace();
    apply_faults(&mut trace, scenario)?;
    Ok(trace)
}

fn cmd_simulate(cmd: SimulateCmd) -> Result<(), Failure> {
    let (mut scenario, _) = cmd.scenario.load()?;
    if let Some(k) = cmd.population {
        scenario = scenario.with_population(k);
    }
    let options = EngineOptions {
        seed: cmd.seed,
        completions: cmd.completions,
        horizon: cmd.horizon,
        warmup: cmd.warmup,
        ..EngineOptions::default()
    };
    let report = match &cmd.events_out {
        Some(events_path) => {
            let mut events = Vec::new();
            let report = ngnsim::sim::simulate(&scenario, &options, Some(&mut events))?;
            let mut buf = String::new();
            for event in &events {
                buf.push_str(&serde_json::to_string(event).expect("event records serialize"));
                buf.push('\n');
            }
            write_atomic(events_path, buf.as_bytes())?;
            report
        }
        None => ngnsim::sim::simulate(&scenario, &options, None)?,
    };
    let mut json = serde_json::to_string_pretty(&report).expect("reports serialize");
    json.push('\n');
    emit(cmd.out.as_deref(), &json)
}

fn cmd_analyze(cmd: AnalyzeCmd) -> Result<(), Failure> {
    let (mut scenario, _) = cmd.scenario.load()?;
    if let Some(k) = cmd.population {
        scenario = scenario.with_population(k);
    }
    let options = EngineOptions {
        seed: cmd.seed,
        completions: cmd.completions,
        warmup: cmd.warmup,
        state_cap: cmd.state_cap,
        tol: cmd.tol,
        ..EngineOptions::default()
    };
    let registry = EngineRegistry::builtin();
    let engine = registry.get(&cmd.engine)?;
    if let Some(dump_path) = &cmd.dump_model {
        let chain = build_chain(&scenario, cmd.state_cap)?;
        let mut json = serde_json::to_string_pretty(&chain).expect("chains serialize");
        json.push('\n');
        write_atomic(dump_path, json.as_bytes())?;
    }
    let report = engine.evaluate(&scenario, &options)?;
    let mut json = serde_json::to_string_pretty(&report).expect("reports serialize");
    json.push('\n');
    emit(cmd.out.as_deref(), &json)
}

fn cmd_sweep(cmd: SweepCmd) -> Result<(), Failure> {
    let (scenario, label) = cmd.scenario.load()?;
    let grid = parse_grid(&cmd.grid)?;
    let options = EngineOptions {
        seed: cmd.seed,
        completions: cmd.completions,
        warmup: cmd.warmup,
        state_cap: cmd.state_cap,
        tol: cmd.tol,
        ..EngineOptions::default()
    };
    let registry = EngineRegistry::builtin();
    let engine = registry.get(&cmd.engine)?;
    let points = sweep_population(&scenario, engine, &options, &grid)?;
    let rules = SaturationRules {
        epsilon: cmd.epsilon,
        util_threshold: cmd.util_threshold,
    };
    emit(cmd.out.as_deref(), &sweep_csv(&label, &points))?;
    match detect_saturation(&points, &rules) {
        Some(i) => eprintln!("saturation at population {} (grid index {i})", grid[i]),
        None => eprintln!("no saturation inside the grid"),
    }
    Ok(())
}

fn cmd_compare(cmd: CompareCmd) -> Result<(), Failure> {
    let ngn_text = match &cmd.config_ngn {
        Some(path) => std::fs::read_to_string(path).map_err(|e| io_fail(path, e))?,
        None => DEFAULT_NGN.to_string(),
    };
    let engn_text = match &cmd.config_engn {
        Some(path) => std::fs::read_to_string(path).map_err(|e| io_fail(path, e))?,
        None => DEFAULT_ENGN.to_string(),
    };
    let ngn = load_scenario(&ngn_text, "ngn scenario", &cmd.set)?;
    let engn = load_scenario(&engn_text, "engn scenario", &cmd.set)?;
    let budgets = if cmd.budgets.is_empty() {
        vec![8, 16]
    } else {
        cmd.budgets.clone()
    };
    let grid = parse_grid(&cmd.grid)?;
    let options = EngineOptions {
        seed: cmd.seed,
        completions: cmd.completions,
        warmup: cmd.warmup,
        state_cap: cmd.state_cap,
        tol: cmd.tol,
        ..EngineOptions::default()
    };
    let rules = SaturationRules {
        epsilon: cmd.epsilon,
        util_threshold: cmd.util_threshold,
    };
    let registry = EngineRegistry::builtin();
    let engine = registry.get(&cmd.engine)?;
    let report = compare_variants(&ngn, &engn, &budgets, &grid, engine, &options, &rules)?;
    for side in [&report.ngn, &report.engn] {
        let psi = side
            .psi
            .map(|p| format!("{p:.4}"))
            .unwrap_or_else(|| "n/a".to_string());
        eprintln!("{}: capacity gain psi {psi}", side.variant);
        for outcome in &side.outcomes {
            let k_sat = outcome
                .k_sat
                .map(|k| k.to_string())
                .unwrap_or_else(|| "none".to_string());
            eprintln!(
                "  budget {:>3}: lambda_max {:.4} (bottleneck {}), saturation population {k_sat}",
                outcome.budget,
                outcome.lambda_max,
                outcome.bottleneck.name(),
            );
        }
    }
    let mut json = serde_json::to_string_pretty(&report).expect("reports serialize");
    json.push('\n');
    emit(cmd.out.as_deref(), &json)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Trace(cmd) => cmd_trace(cmd),
        Command::Simulate(cmd) => cmd_simulate(cmd),
        Command::Analyze(cmd) => cmd_analyze(cmd),
        Command::Sweep(cmd) => cmd_sweep(cmd),
        Command::Compare(cmd) => cmd_compare(cmd),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders help/version on stdout (success) and argument
            // errors on stderr; keep exit code 1 for the latter so code 2
            // stays reserved for invariant violations.
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
