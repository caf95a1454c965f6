//! The `interlock` command line.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use interlock_core::perception::{BenchmarkRow, BenchmarkTable};
use interlock_core::sim::{
    aggregate, report_from_log, run, run_config, verify_controller_conformance, RiskReport, Scenario, SimConfig,
};

use crate::error::{RangeError, Result};
use crate::fleet::{self, FleetConfig, LaneSpec, RangeOptions};
use crate::formats::{self, ConfigLayer, PolicyLayer, ProfileLayer, ServoLayer};

#[derive(Debug, Parser)]
#[command(name = "interlock", version, about = "Camera-driven weapon safety interlock: simulate, replay, serve, inspect")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write the event log and risk report.
    Simulate(SimulateArgs),
    /// Recompute metrics from an event log and check controller conformance.
    Replay(ReplayArgs),
    /// Run the fleet service, optionally with simulated lanes.
    Serve(ServeArgs),
    /// Print the detector benchmark registry.
    Profiles(ProfilesArgs),
    /// Summarize one or more event logs.
    Report(ReportArgs),
}

/// Config overrides shared by `simulate` and `serve`. Each one beats the
/// config file, which beats the built-in defaults.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// Config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Detector model from the benchmark registry.
    #[arg(long)]
    pub model: Option<String>,
    /// Device from the benchmark registry.
    #[arg(long)]
    pub device: Option<String>,
    /// Detector throughput override, frames per second.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Camera capture-to-frame latency, seconds.
    #[arg(long)]
    pub camera_latency: Option<f64>,
    /// Per-entity miss probability.
    #[arg(long)]
    pub miss_rate: Option<f64>,
    /// Mean spurious detections per frame.
    #[arg(long)]
    pub false_alarm_rate: Option<f64>,
    /// Detections below this confidence are ignored.
    #[arg(long)]
    pub confidence_threshold: Option<f64>,
    /// Consecutive clean target frames before arming.
    #[arg(long)]
    pub confirm_frames: Option<u32>,
    /// Seconds without a frame before the weapon is forced Safe.
    #[arg(long)]
    pub stale_timeout: Option<f64>,
    /// Servo speed, seconds per 60 degrees.
    #[arg(long)]
    pub servo_speed: Option<f64>,
    /// Servo angle of the Safe position, degrees.
    #[arg(long)]
    pub safe_angle: Option<f64>,
    /// Servo angle of the Fire position, degrees.
    #[arg(long)]
    pub fire_angle: Option<f64>,
    /// Benchmark CSV to use instead of the built-in registry.
    #[arg(long)]
    pub benchmarks: Option<PathBuf>,
}

impl ConfigArgs {
    fn flag_layer(&self) -> ConfigLayer {
        ConfigLayer {
            seed: self.seed,
            profile: ProfileLayer {
                model: self.model.clone(),
                device: self.device.clone(),
                fps: self.fps,
                camera_latency: self.camera_latency,
                miss_rate: self.miss_rate,
                false_alarm_rate: self.false_alarm_rate,
            },
            policy: PolicyLayer {
                confidence_threshold: self.confidence_threshold,
                confirm_frames: self.confirm_frames,
                stale_timeout: self.stale_timeout,
                veto_classes: None,
                arm_classes: None,
            },
            servo: ServoLayer {
                speed_s_per_60deg: self.servo_speed,
                safe_angle: self.safe_angle,
                fire_angle: self.fire_angle,
                ..ServoLayer::default()
            },
        }
    }

    pub fn resolve(&self) -> Result<SimConfig> {
        let file = match &self.config {
            Some(path) => ConfigLayer::load(path)?,
            None => ConfigLayer::default(),
        };
        let table = load_table(self.benchmarks.as_deref())?;
        self.flag_layer().over(file).resolve(&table)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file, or a built-in name: intrusion, late-intrusion, empty.
    #[arg(long)]
    pub scenario: String,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Monte Carlo runs over derived seeds; 1 writes a single log.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Worker threads for Monte Carlo runs.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Event log (JSONL) written by `simulate`.
    pub log: PathBuf,
    /// A report to compare the recomputed one against.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Weapon protocol listen address.
    #[arg(long, env = "INTERLOCK_BIND", default_value = "127.0.0.1:7070")]
    pub bind: SocketAddr,
    /// Console HTTP listen address.
    #[arg(long, env = "INTERLOCK_HTTP_BIND", default_value = "127.0.0.1:8080")]
    pub http_bind: SocketAddr,
    /// Journal file; without one the journal lives in memory.
    #[arg(long, env = "INTERLOCK_JOURNAL")]
    pub journal: Option<PathBuf>,
    /// Seconds of silence before a weapon is flagged stale.
    #[arg(long, default_value_t = fleet::DEFAULT_LIVENESS_WINDOW)]
    pub liveness: f64,
    /// Number of embedded simulated lanes.
    #[arg(long, default_value_t = 0)]
    pub lanes: usize,
    /// Scenario for embedded lanes; defaults to a long live-fire lane.
    #[arg(long)]
    pub lane_scenario: Option<String>,
    /// Simulated seconds per wall-clock second for embedded lanes.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ProfilesArgs {
    #[arg(long)]
    pub device: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Print CSV instead of the aligned listing.
    #[arg(long)]
    pub csv: bool,
    /// Write the registry to this CSV file.
    #[arg(long)]
    pub export: Option<PathBuf>,
    /// Read the registry from this CSV file instead of the built-in one.
    #[arg(long)]
    pub import: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Event logs (JSONL).
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// Emit the CSV summary instead of text.
    #[arg(long)]
    pub csv: bool,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_table(path: Option<&Path>) -> Result<BenchmarkTable> {
    match path {
        Some(path) => formats::parse_benchmarks_csv(&formats::read_text(path)?, &path.display().to_string()),
        None => Ok(BenchmarkTable::builtin()),
    }
}

fn out(stdout: &mut dyn Write, text: &str) -> Result<()> {
    stdout.write_all(text.as_bytes()).map_err(|e| RangeError::Internal(format!("stdout: {e}")))
}

fn fmt_latency(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

pub fn summarize(report: &RiskReport) -> String {
    let latencies: Vec<String> = report.reaction_latencies.iter().map(|l| fmt_latency(*l)).collect();
    format!(
        "scenario {} seed {}\n\
         detector {} on {} at {} fps, camera latency {} s\n\
         exposure {:.6} s over {} person interval(s)\n\
         reaction latencies [{}] mean {} max {}\n\
         budget {:.6} s aligned, {:.6} s worst case\n\
         shots fired {} hits {} suppressed {}\n",
        report.scenario,
        report.seed,
        report.config.profile.model_name,
        report.config.profile.device,
        report.config.profile.fps,
        report.config.profile.camera_latency,
        report.exposure_seconds,
        report.exposure_per_person.len(),
        latencies.join(", "),
        fmt_latency(report.mean_reaction),
        fmt_latency(report.max_reaction),
        report.aligned_latency_budget,
        report.worst_case_latency_bound,
        report.shots_fired,
        report.hits,
        report.suppressed_shots,
    )
}

fn simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<()> {
    let scenario = formats::resolve_scenario(&args.scenario)?;
    let config = args.config.resolve()?;
    if args.runs == 0 || args.workers == 0 {
        return Err(RangeError::Invalid("--runs and --workers must be at least 1".into()));
    }

    if args.runs == 1 {
        let (report, log) = run(&scenario, &config)?;
        formats::write_text(&args.out_dir.join("events.jsonl"), &formats::log_to_jsonl(&log))?;
        formats::write_text(&args.out_dir.join("report.json"), &formats::to_pretty_json(&report))?;
        formats::write_text(&args.out_dir.join("report.csv"), &formats::reports_to_csv(std::slice::from_ref(&report)))?;
        return out(stdout, &summarize(&report));
    }

    let reports = monte_carlo_parallel(&scenario, &config, args.runs, args.workers)?;
    let summary = aggregate(config.seed, &reports);
    formats::write_text(&args.out_dir.join("monte_carlo.json"), &formats::to_pretty_json(&summary))?;
    formats::write_text(&args.out_dir.join("runs.csv"), &formats::monte_carlo_to_csv(&summary))?;
    out(
        stdout,
        &format!(
            "{} runs, exposure mean {:.6} s (sd {:.6}, p95 {:.6}), reaction mean {:.6} s (p95 {:.6}), {} unresolved\n",
            summary.runs,
            summary.exposure.mean,
            summary.exposure.std_dev,
            summary.exposure.p95,
            summary.reaction.mean,
            summary.reaction.p95,
            summary.unresolved_reactions,
        ),
    )
}

/// Runs `n` seeds across `workers` threads. Each worker takes a strided
/// share of run indices; results are merged by index, so the outcome does
/// not depend on the worker count.
pub fn monte_carlo_parallel(
    scenario: &Scenario,
    config: &SimConfig,
    n: usize,
    workers: usize,
) -> Result<Vec<(u64, RiskReport)>> {
    let workers = workers.clamp(1, n.max(1));
    let mut results = std::thread::scope(|scope| {
        let tasks: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..n)
                        .step_by(workers)
                        .map(|i| run(scenario, &run_config(config, i as u64)).map(|(r, _)| (i as u64, r)))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        tasks
            .into_iter()
            .map(|t| t.join().map_err(|_| RangeError::Internal("worker panicked".into()))?.map_err(RangeError::from))
            .collect::<Result<Vec<_>>>()
    })?
    .concat();
    results.sort_by_key(|(i, _)| *i);
    Ok(results)
}

fn replay(args: &ReplayArgs, stdout: &mut dyn Write) -> Result<()> {
    let log = formats::load_log(&args.log)?;
    verify_controller_conformance(&log).map_err(|e| RangeError::Conformance(e.to_string()))?;
    let report = report_from_log(&log)?;
    if let Some(path) = &args.report {
        let stored = formats::parse_report_json(&formats::read_text(path)?, &path.display().to_string())?;
        if stored != report {
            return Err(RangeError::Invalid(format!("{} does not match the metrics recomputed from the log", path.display())));
        }
    }
    out(stdout, &format!("conformance ok, {} records\n{}", log.len(), summarize(&report)))
}

fn report(args: &ReportArgs, stdout: &mut dyn Write) -> Result<()> {
    let reports = args
        .logs
        .iter()
        .map(|path| Ok(report_from_log(&formats::load_log(path)?)?))
        .collect::<Result<Vec<_>>>()?;
    let text = if args.csv {
        formats::reports_to_csv(&reports)
    } else {
        reports.iter().map(summarize).collect::<Vec<_>>().join("\n")
    };
    match &args.out {
        Some(path) => formats::write_text(path, &text),
        None => out(stdout, &text),
    }
}

fn profiles(args: &ProfilesArgs, stdout: &mut dyn Write) -> Result<()> {
    let table = load_table(args.import.as_deref())?;
    if let Some(path) = &args.export {
        formats::write_text(path, &formats::benchmarks_to_csv(&table))?;
    }
    let rows: Vec<&BenchmarkRow> = table
        .rows()
        .iter()
        .filter(|r| args.device.as_ref().is_none_or(|d| &r.device == d))
        .filter(|r| args.model.as_ref().is_none_or(|m| &r.model == m))
        .collect();
    if rows.is_empty() && (args.device.is_some() || args.model.is_some()) {
        return Err(RangeError::Invalid("no benchmark rows match the given --device/--model".into()));
    }
    // Group by device in order of first appearance, keeping table order
    // within each device.
    let mut devices: Vec<&str> = Vec::new();
    for row in &rows {
        if !devices.contains(&row.device.as_str()) {
            devices.push(&row.device);
        }
    }
    let mut rows = rows;
    rows.sort_by_key(|r| devices.iter().position(|d| *d == r.device));
    let text = if args.csv {
        let filtered = BenchmarkTable::from_rows(rows.into_iter().cloned().collect())?;
        formats::benchmarks_to_csv(&filtered)
    } else {
        formats::render_profiles(&rows)
    };
    out(stdout, &text)
}

fn serve(args: &ServeArgs, stdout: &mut dyn Write) -> Result<()> {
    if !(args.liveness.is_finite() && args.liveness > 0.0) {
        return Err(RangeError::Invalid("--liveness must be positive".into()));
    }
    let lane_scenario = match &args.lane_scenario {
        Some(arg) => formats::resolve_scenario(arg)?,
        None => fleet::demo_lane_scenario(600.0),
    };
    let config = args.config.resolve()?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| RangeError::Internal(e.to_string()))?;
    runtime.block_on(async {
        let handle = fleet::start(FleetConfig { liveness_window: args.liveness, journal: args.journal.clone() })?;
        let weapons = tokio::net::TcpListener::bind(args.bind)
            .await
            .map_err(|e| RangeError::Invalid(format!("bind {}: {e}", args.bind)))?;
        let http = tokio::net::TcpListener::bind(args.http_bind)
            .await
            .map_err(|e| RangeError::Invalid(format!("bind {}: {e}", args.http_bind)))?;

        let range = if args.lanes > 0 {
            let specs = (1..=args.lanes)
                .map(|k| LaneSpec {
                    weapon_id: format!("lane-{k}"),
                    shooter: format!("shooter-{k}"),
                    scenario: lane_scenario.clone(),
                    config: config.clone().with_seed(config.seed.wrapping_add(k as u64)),
                })
                .collect();
            let options = RangeOptions { speed: args.speed, ..RangeOptions::default() };
            Some(Arc::new(fleet::run_embedded_range(&handle, specs, options).await?))
        } else {
            None
        };

        out(
            stdout,
            &format!(
                "weapons on {}, console API on http://{}, {} embedded lane(s)\n",
                args.bind, args.http_bind, args.lanes
            ),
        )?;
        let _ = stdout.flush();

        tokio::spawn(fleet::serve_weapons(weapons, handle.clone()));
        let api = fleet::http::ApiState { fleet: handle, range, snapshot_interval: Duration::from_secs(1) };
        axum::serve(http, fleet::http::router(api))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| RangeError::Internal(e.to_string()))
    })
}

/// Parses `argv` and runs the command. Returns the process exit code:
/// 0 on success, 1 for invalid input, 2 for internal failures.
pub fn dispatch<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let target: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args, stdout),
        Command::Replay(args) => replay(args, stdout),
        Command::Serve(args) => serve(args, stdout),
        Command::Profiles(args) => profiles(args, stdout),
        Command::Report(args) => report(args, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
