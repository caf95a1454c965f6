//! On-disk formats: scenario and config TOML, event-log JSONL, report JSON
//! and CSV, and the benchmark CSV. FORMATS.md at the repository root
//! describes each one field by field.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use interlock_core::actuator::ServoSpec;
use interlock_core::interlock::{DecisionPolicy, DetectionClass};
use interlock_core::perception::{lookup_profile, BenchmarkRow, BenchmarkTable, DetectorProfile};
use interlock_core::sim::{EventLog, LogRecord, MonteCarloReport, RiskReport, Scenario, SimConfig};
use serde::{Deserialize, Serialize};

use crate::error::{RangeError, Result};

/// The benchmark table as shipped in `data/benchmarks.csv`.
pub const SHIPPED_BENCHMARKS_CSV: &str = include_str!("../data/benchmarks.csv");

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| RangeError::Read { path: path.into(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| RangeError::Write { path: dir.into(), source })?;
    }
    fs::write(path, text).map_err(|source| RangeError::Write { path: path.into(), source })
}

// ---------------------------------------------------------------- scenarios

pub fn parse_scenario(text: &str, context: &str) -> Result<Scenario> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| RangeError::parse(context, e))?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn scenario_to_toml(scenario: &Scenario) -> Result<String> {
    toml::to_string(scenario).map_err(|e| RangeError::Internal(e.to_string()))
}

/// Resolves a `--scenario` argument: an existing file wins, otherwise a
/// built-in scenario name.
pub fn resolve_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.is_file() {
        return parse_scenario(&read_text(path)?, arg);
    }
    Scenario::builtin(arg).ok_or_else(|| {
        RangeError::Invalid(format!(
            "{arg} is neither a scenario file nor a built-in scenario ({})",
            Scenario::builtin_names().join(", ")
        ))
    })
}

// ------------------------------------------------------------------- config

/// A partial configuration. Files and command-line flags each produce one of
/// these; [`ConfigLayer::over`] stacks them and [`ConfigLayer::resolve`]
/// fills whatever is left from the built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub profile: ProfileLayer,
    #[serde(default)]
    pub policy: PolicyLayer,
    #[serde(default)]
    pub servo: ServoLayer,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileLayer {
    pub model: Option<String>,
    pub device: Option<String>,
    pub fps: Option<f64>,
    pub camera_latency: Option<f64>,
    pub miss_rate: Option<f64>,
    pub false_alarm_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyLayer {
    pub confidence_threshold: Option<f64>,
    pub confirm_frames: Option<u32>,
    pub stale_timeout: Option<f64>,
    pub veto_classes: Option<Vec<String>>,
    pub arm_classes: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServoLayer {
    pub period_ms: Option<f64>,
    pub speed_s_per_60deg: Option<f64>,
    pub voltage: Option<f64>,
    pub torque_kg_cm: Option<f64>,
    pub safe_angle: Option<f64>,
    pub fire_angle: Option<f64>,
}

fn pick<T>(high: Option<T>, low: Option<T>) -> Option<T> {
    high.or(low)
}

fn classes(labels: Vec<String>) -> Result<BTreeSet<DetectionClass>> {
    labels
        .into_iter()
        .map(|l| DetectionClass::new(&l).map_err(|e| RangeError::Invalid(e.to_string())))
        .collect()
}

impl ConfigLayer {
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| RangeError::parse(context, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }

    /// `self` stacked on top of `lower`; set fields in `self` win.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        let (p, lp) = (self.profile, lower.profile);
        let (q, lq) = (self.policy, lower.policy);
        let (s, ls) = (self.servo, lower.servo);
        ConfigLayer {
            seed: pick(self.seed, lower.seed),
            profile: ProfileLayer {
                model: pick(p.model, lp.model),
                device: pick(p.device, lp.device),
                fps: pick(p.fps, lp.fps),
                camera_latency: pick(p.camera_latency, lp.camera_latency),
                miss_rate: pick(p.miss_rate, lp.miss_rate),
                false_alarm_rate: pick(p.false_alarm_rate, lp.false_alarm_rate),
            },
            policy: PolicyLayer {
                confidence_threshold: pick(q.confidence_threshold, lq.confidence_threshold),
                confirm_frames: pick(q.confirm_frames, lq.confirm_frames),
                stale_timeout: pick(q.stale_timeout, lq.stale_timeout),
                veto_classes: pick(q.veto_classes, lq.veto_classes),
                arm_classes: pick(q.arm_classes, lq.arm_classes),
            },
            servo: ServoLayer {
                period_ms: pick(s.period_ms, ls.period_ms),
                speed_s_per_60deg: pick(s.speed_s_per_60deg, ls.speed_s_per_60deg),
                voltage: pick(s.voltage, ls.voltage),
                torque_kg_cm: pick(s.torque_kg_cm, ls.torque_kg_cm),
                safe_angle: pick(s.safe_angle, ls.safe_angle),
                fire_angle: pick(s.fire_angle, ls.fire_angle),
            },
        }
    }

    /// Fills unset fields from the defaults and validates the result. The
    /// stale timeout defaults to three frame periods of the chosen profile.
    pub fn resolve(self, table: &BenchmarkTable) -> Result<SimConfig> {
        let p = self.profile;
        let model = p.model.unwrap_or_else(|| DetectorProfile::REFERENCE_MODEL.into());
        let device = p.device.unwrap_or_else(|| DetectorProfile::REFERENCE_DEVICE.into());
        let base = lookup_profile(&model, &device, table)?;
        let profile = DetectorProfile {
            fps: p.fps.unwrap_or(base.fps),
            camera_latency: p.camera_latency.unwrap_or(base.camera_latency),
            miss_rate: p.miss_rate.unwrap_or(base.miss_rate),
            false_alarm_rate: p.false_alarm_rate.unwrap_or(base.false_alarm_rate),
            ..base
        };
        profile.validate()?;

        let mut config = SimConfig::for_profile(profile);
        config.seed = self.seed.unwrap_or(0);

        let q = self.policy;
        let defaults = config.policy.clone();
        config.policy = DecisionPolicy {
            confidence_threshold: q.confidence_threshold.unwrap_or(defaults.confidence_threshold),
            confirm_frames: q.confirm_frames.unwrap_or(defaults.confirm_frames),
            stale_timeout: q.stale_timeout.unwrap_or(defaults.stale_timeout),
            veto_classes: match q.veto_classes {
                Some(labels) => classes(labels)?,
                None => defaults.veto_classes,
            },
            arm_classes: match q.arm_classes {
                Some(labels) => classes(labels)?,
                None => defaults.arm_classes,
            },
        };

        let s = self.servo;
        let d = ServoSpec::default();
        config.servo = ServoSpec {
            period_ms: s.period_ms.unwrap_or(d.period_ms),
            speed_s_per_60deg: s.speed_s_per_60deg.unwrap_or(d.speed_s_per_60deg),
            voltage: s.voltage.unwrap_or(d.voltage),
            torque_kg_cm: s.torque_kg_cm.unwrap_or(d.torque_kg_cm),
            safe_angle: s.safe_angle.unwrap_or(d.safe_angle),
            fire_angle: s.fire_angle.unwrap_or(d.fire_angle),
        };
        config.validate()?;
        Ok(config)
    }
}

// -------------------------------------------------------------- event logs

/// One JSON object per line, in sequence order, newline terminated.
pub fn log_to_jsonl(log: &EventLog) -> String {
    let mut out = String::new();
    for record in log.records() {
        out.push_str(&serde_json::to_string(record).expect("log records serialize"));
        out.push('\n');
    }
    out
}

/// Parses a JSONL log. Structural checks run here; completeness and
/// conformance are left to the caller.
pub fn parse_log_jsonl(text: &str, context: &str) -> Result<EventLog> {
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<LogRecord>(line).map_err(|e| RangeError::parse(format!("{context}:{}", i + 1), e))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EventLog::from_records(records)?)
}

pub fn load_log(path: &Path) -> Result<EventLog> {
    parse_log_jsonl(&read_text(path)?, &path.display().to_string())
}

// ------------------------------------------------------------------ reports

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    text
}

pub fn parse_report_json(text: &str, context: &str) -> Result<RiskReport> {
    serde_json::from_str(text).map_err(|e| RangeError::parse(context, e))
}

pub const REPORT_CSV_HEADER: [&str; 17] = [
    "scenario",
    "seed",
    "model",
    "device",
    "fps",
    "camera_latency",
    "persons",
    "exposure_seconds",
    "mean_reaction",
    "max_reaction",
    "unresolved_reactions",
    "aligned_latency_budget",
    "worst_case_latency_bound",
    "shots_fired",
    "hits",
    "suppressed_shots",
    "mode_transitions",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One summary row per report.
pub fn reports_to_csv(reports: &[RiskReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_CSV_HEADER).expect("in-memory write");
    for r in reports {
        w.write_record([
            r.scenario.clone(),
            r.seed.to_string(),
            r.config.profile.model_name.clone(),
            r.config.profile.device.clone(),
            r.config.profile.fps.to_string(),
            r.config.profile.camera_latency.to_string(),
            r.exposure_per_person.len().to_string(),
            r.exposure_seconds.to_string(),
            opt(r.mean_reaction),
            opt(r.max_reaction),
            r.reaction_latencies.iter().filter(|l| l.is_none()).count().to_string(),
            r.aligned_latency_budget.to_string(),
            r.worst_case_latency_bound.to_string(),
            r.shots_fired.to_string(),
            r.hits.to_string(),
            r.suppressed_shots.to_string(),
            r.mode_transitions.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// One row per Monte Carlo run.
pub fn monte_carlo_to_csv(report: &MonteCarloReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "seed", "exposure_seconds", "mean_reaction", "max_reaction", "suppressed_shots"])
        .expect("in-memory write");
    for run in &report.per_run {
        w.write_record([
            run.index.to_string(),
            run.seed.to_string(),
            run.exposure_seconds.to_string(),
            opt(run.mean_reaction),
            opt(run.max_reaction),
            run.suppressed_shots.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

// --------------------------------------------------------------- benchmarks

#[derive(Debug, Serialize, Deserialize)]
struct BenchmarkCsvRow {
    model: String,
    device: String,
    fps: Option<f64>,
}

/// Columns `model,device,fps`; a model that did not run has an empty fps.
pub fn benchmarks_to_csv(table: &BenchmarkTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in table.rows() {
        w.serialize(BenchmarkCsvRow { model: row.model.clone(), device: row.device.clone(), fps: row.fps })
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn parse_benchmarks_csv(text: &str, context: &str) -> Result<BenchmarkTable> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| RangeError::parse(context, e))?;
    if headers != vec!["model", "device", "fps"] {
        return Err(RangeError::parse(context, "expected header model,device,fps"));
    }
    let rows = reader
        .deserialize::<BenchmarkCsvRow>()
        .map(|r| {
            r.map(|r| BenchmarkRow { model: r.model, device: r.device, fps: r.fps })
                .map_err(|e| RangeError::parse(context, e))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkTable::from_rows(rows)?)
}

/// Human-readable listing under a `[device]` heading, one `model fps` line
/// per row; DNR for models that did not run.
pub fn render_profiles(rows: &[&BenchmarkRow]) -> String {
    let mut out = String::new();
    let mut device = None;
    for row in rows {
        if device != Some(&row.device) {
            let _ = writeln!(out, "[{}]", row.device);
            device = Some(&row.device);
        }
        let fps = row.fps.map(|f| f.to_string()).unwrap_or_else(|| "DNR".into());
        let _ = writeln!(out, "{} {fps}", row.model);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_toml_roundtrip() {
        for name in Scenario::builtin_names() {
            let scenario = Scenario::builtin(name).unwrap();
            let text = scenario_to_toml(&scenario).unwrap();
            assert_eq!(parse_scenario(&text, "test").unwrap(), scenario);
        }
    }

    #[test]
    fn scenario_schema_version_is_checked() {
        let text = "schema_version = 99\nname = \"x\"\nduration = 1.0\n";
        assert!(parse_scenario(text, "test").is_err());
    }

    #[test]
    fn scenario_misspelled_key_is_rejected() {
        let text = "schema_version = 1\nduration = 3.0\n[[person_interval]]\nstart = 1.0\nend = 2.0\n";
        assert!(parse_scenario(text, "test").is_err());
        let text = "schema_version = 1\nduration = 3.0\n[[person_intervals]]\nstart = 1.0\nstop = 2.0\n";
        assert!(parse_scenario(text, "test").is_err());
    }

    #[test]
    fn layers_stack_with_flags_on_top() {
        let file = ConfigLayer::parse(
            "seed = 5\n[profile]\nfps = 10.0\ncamera_latency = 0.2\n[servo]\nfire_angle = 60.0\n",
            "file",
        )
        .unwrap();
        let flags = ConfigLayer {
            seed: Some(9),
            profile: ProfileLayer { fps: Some(25.0), ..Default::default() },
            ..Default::default()
        };
        let config = flags.over(file).resolve(&BenchmarkTable::builtin()).unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.profile.fps, 25.0);
        assert_eq!(config.profile.camera_latency, 0.2);
        assert_eq!(config.servo.fire_angle, 60.0);
        assert!((config.policy.stale_timeout - 3.0 / 25.0).abs() < 1e-12);
    }

    #[test]
    fn defaults_match_reference_config() {
        let config = ConfigLayer::default().resolve(&BenchmarkTable::builtin()).unwrap();
        assert_eq!(config, SimConfig::for_profile(DetectorProfile::reference()));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(ConfigLayer::parse("[profile]\nfsp = 3.0\n", "file").is_err());
    }

    #[test]
    fn dnr_profile_is_rejected() {
        let layer = ConfigLayer {
            profile: ProfileLayer {
                model: Some("resnet-50".into()),
                device: Some("intel-ncs2".into()),
                ..Default::default()
            },
            ..Default::default()
        };
        let table = BenchmarkTable::builtin();
        let row = table.get("openpose", "raspberry-pi-3").unwrap();
        assert!(row.fps.is_none());
        assert!(layer.resolve(&table).is_ok());
        let dnr = ConfigLayer {
            profile: ProfileLayer {
                model: Some("openpose".into()),
                device: Some("raspberry-pi-3".into()),
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(dnr.resolve(&table).is_err());
    }

    #[test]
    fn benchmark_csv_roundtrip() {
        let table = BenchmarkTable::builtin();
        let text = benchmarks_to_csv(&table);
        assert_eq!(parse_benchmarks_csv(&text, "test").unwrap().rows(), table.rows());
    }

    #[test]
    fn shipped_csv_matches_builtin_table() {
        assert_eq!(SHIPPED_BENCHMARKS_CSV, benchmarks_to_csv(&BenchmarkTable::builtin()));
    }

    #[test]
    fn log_jsonl_roundtrip() {
        let (_, log) = interlock_core::sim::run(&Scenario::canonical_intrusion(), &SimConfig::default()).unwrap();
        let text = log_to_jsonl(&log);
        assert_eq!(text.lines().count(), log.len());
        assert_eq!(parse_log_jsonl(&text, "test").unwrap().records(), log.records());
    }
}
