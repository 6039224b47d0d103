use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use jackson_ldp::cramer::{psi_arrival, psi_service, Gating};
use jackson_ldp::harness::emit::{fmt_g, g10, to_json, write_output, Table};
use jackson_ldp::harness::{run_verify, VerifyConfig, VerifyError};
use jackson_ldp::local_rate::{face_of, solve_lj, GatingMode, LocalRateError, LocalRateProblem};
use jackson_ldp::model::{validate, ModelError, Network, NetworkSpec};
use jackson_ldp::path::{action, action_delayed, PathError, PiecewiseLinearPath};
use jackson_ldp::quasipotential::{solve_v, solve_v_finite_sweep, QuasipotentialError, SearchOptions};
use jackson_ldp::sim::{
    default_burn_in, default_spacing, estimate_tail, simulate, stationary_sample, SimError, SimOptions, TailOptions,
};

/// Large deviations of generalized Jackson networks.
#[derive(Parser)]
#[command(name = "jackson-ldp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Network spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output file; stdout when omitted or `-`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Process {
    Arrival,
    Service,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Literal,
    Strict,
}

impl From<Mode> for GatingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Literal => GatingMode::Literal,
            Mode::Strict => GatingMode::Strict,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a spec against the model assumptions.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Cramér transform of one station's interarrival or service law.
    Psi {
        #[command(flatten)]
        common: Common,
        /// Station, counted from 1.
        #[arg(long)]
        station: usize,
        #[arg(long, value_enum)]
        process: Process,
        /// Comma-separated rates.
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<f64>,
    },
    /// Local rate L(x, y), optionally with initial delays at time t.
    LocalRate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<f64>,
        /// Evaluate the delayed rate at this time, using the spec's delays.
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, value_enum, default_value_t = Mode::Literal)]
        mode: Mode,
    },
    /// Action of a piecewise-linear path read from CSV.
    PathCost {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        path: PathBuf,
        /// Start point; the path's own first point when omitted.
        #[arg(long, value_delimiter = ',')]
        q0: Option<Vec<f64>>,
        /// Charge the delayed action with the spec's delays.
        #[arg(long)]
        delayed: bool,
        #[arg(long, value_enum, default_value_t = Mode::Literal)]
        mode: Mode,
    },
    /// Quasipotential V(x), or its finite-horizon versions.
    Quasipotential {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<f64>,
        /// Maximum number of segments [default: 2K + 1].
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long, default_value_t = 16)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated horizons; solves the finite-horizon problem.
        #[arg(long, value_delimiter = ',')]
        horizon: Option<Vec<f64>>,
        /// Write the optimal path here as CSV.
        #[arg(long)]
        path_out: Option<PathBuf>,
    },
    /// Simulate the network from its initial state.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// State sampling interval [default: horizon / 100].
        #[arg(long)]
        sample_interval: Option<f64>,
        /// Write every event here as CSV.
        #[arg(long)]
        events_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000_000)]
        max_events: u64,
    },
    /// Spaced samples of the stationary state.
    Stationary {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// [default: 50 K / min_k (mu_k - effective rate_k)]
        #[arg(long)]
        burn_in: Option<f64>,
        /// [default: 5 / min_k (mu_k - effective rate_k)]
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tail probabilities P(Q/n >= x) and their decay rate.
    Tail {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 15, 20])]
        n_grid: Vec<u32>,
        /// Stationary samples per n.
        #[arg(long, default_value_t = 100_000)]
        reps: usize,
        #[arg(long)]
        burn_in: Option<f64>,
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare V(x) with Monte Carlo slopes for each target.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Target point, comma-separated; repeat for several targets.
        #[arg(long = "target", required = true)]
        targets: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 15, 20])]
        n_grid: Vec<u32>,
        #[arg(long, default_value_t = 100_000)]
        reps: usize,
        #[arg(long, default_value_t = 0.15)]
        tolerance: f64,
        #[arg(long)]
        burn_in: Option<f64>,
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long, default_value_t = 16)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    /// Verification ran and failed.
    Check(String),
    Invalid(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Invalid(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<LocalRateError> for Failure {
    fn from(e: LocalRateError) -> Self {
        match e {
            LocalRateError::InvalidInput(_) | LocalRateError::Unsupported(_) => Failure::Invalid(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

impl From<PathError> for Failure {
    fn from(e: PathError) -> Self {
        match e {
            PathError::LocalRate(inner) => inner.into(),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

impl From<QuasipotentialError> for Failure {
    fn from(e: QuasipotentialError) -> Self {
        match e {
            QuasipotentialError::InvalidInput(_) => Failure::Invalid(e.to_string()),
            QuasipotentialError::LocalRate(inner) => inner.into(),
            QuasipotentialError::Path(inner) => inner.into(),
            other => Failure::Internal(other.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidInput(_) => Failure::Invalid(e.to_string()),
            SimError::EventLimit(_) => Failure::Internal(e.to_string()),
        }
    }
}

/// Resolved settings, printed ahead of every result.
struct Config(Vec<(String, String)>);

impl Config {
    fn new(command: &str, common: &Common) -> Self {
        Config(vec![
            ("command".into(), command.into()),
            ("spec".into(), common.spec.display().to_string()),
        ])
    }

    fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    fn comments(&self) -> Vec<String> {
        self.0.iter().map(|(k, v)| format!("{k} = {v}")).collect()
    }

    fn to_json(&self) -> Value {
        Value::Object(self.0.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect())
    }
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| g10(*x)).collect::<Vec<_>>().join(",")
}

fn opt(x: Option<f64>) -> String {
    x.map(g10).unwrap_or_else(|| "none".into())
}

fn load(common: &Common) -> Result<Network, Failure> {
    let spec = NetworkSpec::from_path(&common.spec)?;
    Ok(Network::new(spec)?)
}

fn emit(common: &Common, config: &Config, table: Table, extra_comments: &[String], record: Value) -> Result<(), Failure> {
    let text = match common.format {
        Format::Csv => {
            let mut comments = config.comments();
            comments.extend_from_slice(extra_comments);
            table.to_csv(&comments)
        }
        Format::Json => to_json(&json!({ "config": config.to_json(), "result": record })) + "\n",
    };
    write_file(common.out.as_deref(), &text)
}

fn write_file(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    write_output(path, text).map_err(|e| Failure::Internal(format!("cannot write output: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { common } => {
            let spec = NetworkSpec::from_path(&common.spec)?;
            let report = validate(&spec);
            let config = Config::new("validate", &common);
            let mut t = Table::new(&["passed", "assumption", "detail", "spectral_radius"]);
            t.push(vec![
                report.passed().to_string(),
                report.violation.as_ref().map(|v| v.assumption.to_string()).unwrap_or_default(),
                report.violation.as_ref().map(|v| v.detail.replace(',', ";")).unwrap_or_default(),
                report.spectral_radius.map(g10).unwrap_or_default(),
            ]);
            emit(&common, &config, t, &[], json!(report))?;
            match report.violation {
                Some(v) => Err(Failure::Invalid(v.to_string())),
                None => Ok(()),
            }
        }
        Command::Psi { common, station, process, rates } => {
            let net = load(&common)?;
            if station == 0 || station > net.k() {
                return Err(Failure::Invalid(format!("station must be in 1..={}", net.k())));
            }
            if let Some(r) = rates.iter().find(|r| !(**r >= 0.0) || r.is_infinite()) {
                return Err(Failure::Invalid(format!("rates must be finite and nonnegative, got {r}")));
            }
            let mut config = Config::new("psi", &common);
            config.set("station", station).set("process", match process {
                Process::Arrival => "arrival",
                Process::Service => "service",
            });
            let mut t = Table::new(&["rate", "psi", "theta", "at_boundary"]);
            let mut rows = Vec::new();
            for &r in &rates {
                let v = match process {
                    Process::Arrival => psi_arrival(net.arrival(station - 1), r),
                    Process::Service => psi_service(net.service(station - 1), r),
                };
                t.push(vec![g10(r), v.value.to_string(), g10(v.theta), v.at_boundary.to_string()]);
                rows.push(json!({ "rate": r, "psi": v }));
            }
            emit(&common, &config, t, &[], Value::Array(rows))
        }
        Command::LocalRate { common, x, y, t, mode } => {
            let net = load(&common)?;
            if x.len() != net.k() || x.iter().any(|v| !(*v >= 0.0)) {
                return Err(Failure::Invalid(format!("x must be a nonnegative {}-vector", net.k())));
            }
            let mut config = Config::new("local-rate", &common);
            config.set("x", list(&x)).set("y", list(&y)).set("t", opt(t));
            let mut problem = LocalRateProblem::new(&net, face_of(&x), y.clone());
            if let Some(t) = t {
                let (u, v) = net.delays();
                problem = problem.delayed(Gating::new(u, v, t), mode.into());
                config.set("mode", if matches!(mode, Mode::Literal) { "literal" } else { "strict" });
            }
            let sol = match solve_lj(&problem) {
                Err(LocalRateError::Infeasible { certificate }) => {
                    let mut t = Table::new(&["quantity", "station", "value"]);
                    t.push(vec!["value".into(), String::new(), "inf".into()]);
                    let record = json!({ "value": "inf", "certificate": certificate });
                    return emit(&common, &config, t, &["velocity is not reachable at finite cost".into()], record);
                }
                other => other?,
            };
            let mut table = Table::new(&["quantity", "station", "value"]);
            table.push(vec!["value".into(), String::new(), g10(sol.value)]);
            for k in 0..net.k() {
                table.push(vec!["a".into(), (k + 1).to_string(), g10(sol.a[k])]);
                table.push(vec!["d".into(), (k + 1).to_string(), g10(sol.d[k])]);
                for l in 0..net.k() {
                    table.push(vec![format!("flow_to_{}", l + 1), (k + 1).to_string(), g10(sol.flows[k][l])]);
                }
            }
            table.push(vec!["kkt_residual".into(), String::new(), g10(sol.kkt_residual)]);
            table.push(vec!["duality_gap".into(), String::new(), g10(sol.duality_gap)]);
            emit(&common, &config, table, &[], json!(sol))
        }
        Command::PathCost { common, path, q0, delayed, mode } => {
            let net = load(&common)?;
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", path.display())))?;
            let p = PiecewiseLinearPath::from_csv(&text)?;
            let q0 = q0.unwrap_or_else(|| p.start().to_vec());
            let mut config = Config::new("path-cost", &common);
            config.set("path", path.display()).set("q0", list(&q0)).set("delayed", delayed);
            let value = if delayed {
                let (u, v) = net.delays();
                action_delayed(&net, &p, &q0, &u, &v, mode.into())?
            } else {
                action(&net, &p, &q0)?
            };
            let mut t = Table::new(&["action", "duration", "segments"]);
            t.push(vec![
                value.finite().map(|v| fmt_g(v, 17)).unwrap_or_else(|| value.to_string()),
                g10(p.duration()),
                p.num_segments().to_string(),
            ]);
            emit(&common, &config, t, &[], json!({ "action": value, "duration": p.duration() }))
        }
        Command::Quasipotential { common, x, segments, starts, seed, horizon, path_out } => {
            let net = load(&common)?;
            let opts = SearchOptions { max_segments: segments, starts, seed, ..SearchOptions::default() };
            let mut config = Config::new("quasipotential", &common);
            config
                .set("x", list(&x))
                .set("segments", opts.segments_for(net.k()))
                .set("starts", starts)
                .set("seed", seed)
                .set("step_tol", g10(opts.step_tol));
            match horizon {
                None => {
                    let r = solve_v(&net, &x, &opts)?;
                    if let Some(p) = &path_out {
                        write_file(Some(p), &r.optimal_path.to_csv())?;
                    }
                    let mut t = Table::new(&["value", "segments_used", "multistart_spread", "starts_converged"]);
                    t.push(vec![
                        g10(r.value),
                        r.segments_used.to_string(),
                        g10(r.multistart_spread),
                        r.starts_converged.to_string(),
                    ]);
                    let warnings: Vec<String> = r.warnings.iter().map(|w| format!("warning: {w}")).collect();
                    emit(&common, &config, t, &warnings, json!(r))
                }
                Some(hs) => {
                    config.set("horizon", list(&hs));
                    let sweep = solve_v_finite_sweep(&net, &x, &hs, &opts)?;
                    if let (Some(p), Some(last)) = (&path_out, sweep.last()) {
                        write_file(Some(p), &last.path.to_csv())?;
                    }
                    let mut t = Table::new(&["horizon", "value", "time_price", "duration"]);
                    for r in &sweep {
                        t.push(vec![g10(r.horizon), g10(r.value), g10(r.time_price), g10(r.path.duration())]);
                    }
                    emit(&common, &config, t, &[], json!(sweep))
                }
            }
        }
        Command::Simulate { common, horizon, seed, sample_interval, events_out, max_events } => {
            let net = load(&common)?;
            let dt = sample_interval.unwrap_or(horizon / 100.0);
            let mut config = Config::new("simulate", &common);
            config
                .set("horizon", g10(horizon))
                .set("seed", seed)
                .set("sample_interval", g10(dt))
                .set("max_events", max_events);
            let opts = SimOptions { keep_events: events_out.is_some(), sample_interval: Some(dt), max_events };
            let run = simulate(&net, horizon, seed, &opts)?;
            if let (Some(p), Some(events)) = (&events_out, &run.events) {
                let mut t = Table::new(&["time", "station", "kind", "to"]);
                for e in events {
                    let (kind, to) = match e.kind {
                        jackson_ldp::sim::EventKind::Arrival => ("arrival", String::new()),
                        jackson_ldp::sim::EventKind::Completion { to } => {
                            ("completion", to.map(|l| (l + 1).to_string()).unwrap_or_else(|| "exit".into()))
                        }
                    };
                    t.push(vec![fmt_g(e.time, 17), (e.station + 1).to_string(), kind.into(), to]);
                }
                write_file(Some(p), &t.to_csv(&[]))?;
            }
            let k = net.k();
            let mut header = vec!["t".to_string()];
            for prefix in ["q", "busy"] {
                header.extend((1..=k).map(|i| format!("{prefix}_{i}")));
            }
            let mut t = Table { header, rows: Vec::new() };
            for s in &run.samples {
                let mut row = vec![g10(s.clock)];
                row.extend(s.q.iter().map(|q| q.to_string()));
                row.extend(s.busy.iter().map(|b| g10(*b)));
                t.push(row);
            }
            let extra = vec![format!("events = {}", run.event_count), format!("event_log_sha256 = {}", run.digest)];
            let record = json!({ "events": run.event_count, "digest": run.digest, "samples": run.samples });
            emit(&common, &config, t, &extra, record)
        }
        Command::Stationary { common, samples, burn_in, spacing, seed } => {
            let net = load(&common)?;
            let b = burn_in.unwrap_or_else(|| default_burn_in(&net));
            let s = spacing.unwrap_or_else(|| default_spacing(&net));
            let mut config = Config::new("stationary", &common);
            config.set("samples", samples).set("burn_in", g10(b)).set("spacing", g10(s)).set("seed", seed);
            let states = stationary_sample(&net, Some(b), samples, Some(s), seed)?;
            let k = net.k();
            let mut header = vec!["t".to_string()];
            for prefix in ["q", "u", "w"] {
                header.extend((1..=k).map(|i| format!("{prefix}_{i}")));
            }
            let mut t = Table { header, rows: Vec::new() };
            for st in &states {
                let mut row = vec![g10(st.clock)];
                row.extend(st.q.iter().map(|q| q.to_string()));
                row.extend(st.u.iter().chain(&st.w).map(|v| g10(*v)));
                t.push(row);
            }
            emit(&common, &config, t, &[], json!(states))
        }
        Command::Tail { common, x, n_grid, reps, burn_in, spacing, seed } => {
            let net = load(&common)?;
            let opts = TailOptions { burn_in, spacing, z: None };
            let est = estimate_tail(&net, &x, &n_grid, reps, seed, &opts)?;
            let mut config = Config::new("tail", &common);
            config
                .set("x", list(&x))
                .set("n_grid", n_grid.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","))
                .set("reps", reps)
                .set("burn_in", g10(est.burn_in))
                .set("spacing", g10(est.spacing))
                .set("seed", seed);
            let mut t = Table::new(&["n", "p_hat", "ci_lo", "ci_hi", "hits", "samples", "censored"]);
            for c in &est.cells {
                t.push(vec![
                    c.n.to_string(),
                    g10(c.p_hat),
                    g10(c.ci_lo),
                    g10(c.ci_hi),
                    c.hits.to_string(),
                    c.samples.to_string(),
                    c.censored.to_string(),
                ]);
            }
            let mut extra = vec![
                format!("slope = {}", est.slope.map(g10).unwrap_or_else(|| "none".into())),
                format!("slope_se = {}", est.slope_se.map(g10).unwrap_or_else(|| "none".into())),
            ];
            extra.extend(est.warnings.iter().map(|w| format!("warning: {w}")));
            emit(&common, &config, t, &extra, json!(est))
        }
        Command::Verify { common, targets, n_grid, reps, tolerance, burn_in, spacing, starts, seed } => {
            let spec = NetworkSpec::from_path(&common.spec)?;
            let parsed = parse_targets(&targets)?;
            let report = validate(&spec);
            if let Some(v) = report.violation {
                return Err(Failure::Invalid(v.to_string()));
            }
            let net = Network::new(spec.clone())?;
            let burn_in = Some(burn_in.unwrap_or_else(|| default_burn_in(&net)));
            let spacing = Some(spacing.unwrap_or_else(|| default_spacing(&net)));
            let cfg = VerifyConfig {
                targets: parsed,
                n_grid,
                reps,
                tolerance,
                seed,
                search: SearchOptions { starts, seed, ..SearchOptions::default() },
                tail: TailOptions { burn_in, spacing, z: None },
            };
            let mut config = Config::new("verify", &common);
            config
                .set("targets", targets.join(" "))
                .set("n_grid", cfg.n_grid.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","))
                .set("reps", reps)
                .set("tolerance", g10(tolerance))
                .set("burn_in", opt(burn_in))
                .set("spacing", opt(spacing))
                .set("starts", starts)
                .set("seed", seed);
            let report = run_verify(&spec, &cfg).map_err(|e| match e {
                VerifyError::Invalid(m) => Failure::Invalid(m),
                other => Failure::Internal(other.to_string()),
            })?;
            let extra = vec![format!("spec_sha256 = {}", report.spec_digest)];
            emit(&common, &config, report.to_table(), &extra, json!(report))?;
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Check("at least one target is outside the tolerance".into()))
            }
        }
    }
}

/// Each `--target` is one comma- or semicolon-separated point.
fn parse_targets(raw: &[String]) -> Result<Vec<Vec<f64>>, Failure> {
    raw.iter()
        .map(|t| {
            t.split([',', ';'])
                .map(|v| v.trim().parse::<f64>().map_err(|_| Failure::Invalid(format!("bad target coordinate {v:?}"))))
                .collect()
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Check(m) | Failure::Invalid(m) | Failure::Internal(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
