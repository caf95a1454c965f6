//! Camera and detector model.
//!
//! Frame cadence and delay come from published inference throughput; per-frame
//! delay is taken as `1 / fps`. Detection errors are i.i.d. per frame.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::PerceptionError;
use crate::interlock::{BBox, DecisionPolicy, Detection, DetectionClass, DetectionFrame};

/// Latency of the camera pipeline before inference starts, in seconds.
pub const DEFAULT_CAMERA_LATENCY: f64 = 0.12;

/// Schedules tolerate this much floating error at the end of the window.
const SCHEDULE_EPS: f64 = 1e-9;

/// Upper bound on the mean spurious-detection count the sampler accepts.
pub const MAX_FALSE_ALARM_RATE: f64 = 32.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfile {
    pub model_name: String,
    pub device: String,
    pub fps: f64,
    pub camera_latency: f64,
    /// Probability that a present entity goes undetected in a frame.
    pub miss_rate: f64,
    /// Mean number of spurious detections per frame.
    pub false_alarm_rate: f64,
    /// False when the model did not run on the device.
    pub available: bool,
}

impl DetectorProfile {
    pub const REFERENCE_MODEL: &'static str = "ssd-inception-v2";
    pub const REFERENCE_DEVICE: &'static str = "jetson-nano";

    pub fn new(model_name: &str, device: &str, fps: Option<f64>) -> Self {
        Self {
            model_name: model_name.into(),
            device: device.into(),
            fps: fps.unwrap_or(0.0),
            camera_latency: DEFAULT_CAMERA_LATENCY,
            miss_rate: 0.0,
            false_alarm_rate: 0.0,
            available: fps.is_some(),
        }
    }

    /// SSD Inception-V2 on a Jetson Nano: 20 FPS behind a 0.12 s camera.
    pub fn reference() -> Self {
        Self::new(Self::REFERENCE_MODEL, Self::REFERENCE_DEVICE, Some(20.0))
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        if self.available && !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(PerceptionError::InvalidProfile("fps must be positive"));
        }
        if !(self.camera_latency.is_finite() && self.camera_latency >= 0.0) {
            return Err(PerceptionError::InvalidProfile("camera_latency must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(PerceptionError::InvalidProfile("miss_rate must lie in [0, 1]"));
        }
        if !(0.0..=MAX_FALSE_ALARM_RATE).contains(&self.false_alarm_rate) {
            return Err(PerceptionError::InvalidProfile("false_alarm_rate out of range"));
        }
        Ok(())
    }

    fn require_available(&self) -> Result<(), PerceptionError> {
        if self.available {
            Ok(())
        } else {
            Err(PerceptionError::Unavailable {
                model: self.model_name.clone(),
                device: self.device.clone(),
            })
        }
    }

    pub fn frame_period(&self) -> Result<f64, PerceptionError> {
        inference_delay(self)
    }

    /// Camera latency plus inference delay.
    pub fn pipeline_delay(&self) -> Result<f64, PerceptionError> {
        Ok(self.camera_latency + inference_delay(self)?)
    }
}

impl Default for DetectorProfile {
    fn default() -> Self {
        Self::reference()
    }
}

/// One cell of the benchmark table. `fps == None` means the model did not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model: String,
    pub device: String,
    pub fps: Option<f64>,
}

pub const DEVICES: [&str; 3] = ["jetson-nano", "raspberry-pi-3", "intel-ncs2"];

/// Published inference throughput, columns in [`DEVICES`] order.
const PUBLISHED: [(&str, [Option<f64>; 3]); 14] = [
    ("resnet-50", [Some(36.0), Some(1.4), Some(16.0)]),
    ("mobilenet-v2", [Some(64.0), Some(2.5), Some(30.0)]),
    ("ssd-resnet-18-960x544", [Some(5.0), None, None]),
    ("ssd-resnet-18-480x272", [Some(16.0), None, None]),
    ("ssd-resnet-18-300x300", [Some(18.0), None, None]),
    ("ssd-mobilenet-v2-960x544", [Some(8.0), None, Some(1.8)]),
    ("ssd-mobilenet-v2-480x272", [Some(27.0), None, Some(7.0)]),
    ("ssd-mobilenet-v2-300x300", [Some(39.0), Some(1.0), Some(11.0)]),
    ("inception-v4", [Some(11.0), None, None]),
    ("tiny-yolo-v3", [Some(25.0), Some(0.5), None]),
    ("openpose", [Some(14.0), None, Some(5.0)]),
    ("vgg-19", [Some(10.0), Some(0.5), Some(5.0)]),
    ("super-resolution", [Some(15.0), None, Some(0.6)]),
    ("unet", [Some(18.0), None, Some(5.0)]),
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchmarkTable {
    rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    /// The shipped table: 14 published models on three devices, plus the
    /// 20 FPS SSD Inception-V2 measurement on the Jetson Nano.
    pub fn builtin() -> Self {
        let mut rows = Vec::with_capacity(PUBLISHED.len() * DEVICES.len() + 1);
        for (model, cells) in PUBLISHED {
            for (device, fps) in DEVICES.iter().zip(cells) {
                rows.push(BenchmarkRow { model: model.into(), device: (*device).into(), fps });
            }
        }
        rows.push(BenchmarkRow {
            model: DetectorProfile::REFERENCE_MODEL.into(),
            device: DetectorProfile::REFERENCE_DEVICE.into(),
            fps: Some(20.0),
        });
        Self { rows }
    }

    /// Builds a table from rows, rejecting duplicate keys and bad FPS values.
    pub fn from_rows(rows: Vec<BenchmarkRow>) -> Result<Self, PerceptionError> {
        for (i, row) in rows.iter().enumerate() {
            if let Some(fps) = row.fps {
                if !(fps.is_finite() && fps > 0.0) {
                    return Err(PerceptionError::InvalidProfile("benchmark fps must be positive"));
                }
            }
            if rows[..i].iter().any(|r| r.model == row.model && r.device == row.device) {
                return Err(PerceptionError::InvalidProfile("duplicate benchmark row"));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[BenchmarkRow] {
        &self.rows
    }

    pub fn get(&self, model: &str, device: &str) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.model == model && r.device == device)
    }

    pub fn for_device<'a>(&'a self, device: &'a str) -> impl Iterator<Item = &'a BenchmarkRow> + 'a {
        self.rows.iter().filter(move |r| r.device == device)
    }
}

pub fn lookup_profile(
    model: &str,
    device: &str,
    table: &BenchmarkTable,
) -> Result<DetectorProfile, PerceptionError> {
    table
        .get(model, device)
        .map(|row| DetectorProfile::new(&row.model, &row.device, row.fps))
        .ok_or_else(|| PerceptionError::UnknownProfile { model: model.into(), device: device.into() })
}

pub fn inference_delay(profile: &DetectorProfile) -> Result<f64, PerceptionError> {
    profile.require_available()?;
    if !(profile.fps.is_finite() && profile.fps > 0.0) {
        return Err(PerceptionError::InvalidProfile("fps must be positive"));
    }
    Ok(1.0 / profile.fps)
}

/// The `k`-th capture instant after `t0`.
pub fn capture_time(profile: &DetectorProfile, t0: f64, k: u64) -> f64 {
    t0 + k as f64 / profile.fps
}

pub fn frame_schedule(
    profile: &DetectorProfile,
    t0: f64,
    duration: f64,
) -> Result<Vec<f64>, PerceptionError> {
    profile.require_available()?;
    if duration.is_nan() || duration < 0.0 {
        return Err(PerceptionError::NegativeDuration(duration));
    }
    let end = t0 + duration + SCHEDULE_EPS;
    Ok((0u64..)
        .map(|k| capture_time(profile, t0, k))
        .take_while(|&t| t <= end)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntity {
    pub class: DetectionClass,
    pub bbox: BBox,
}

/// Ground truth in front of the camera at one instant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneSnapshot {
    pub time: f64,
    pub entities: Vec<SceneEntity>,
}

/// Draws one frame of detections for `truth`.
///
/// Every entity consumes exactly two uniforms (miss, confidence) whether or
/// not it is detected, so the random stream stays aligned across profiles.
pub fn sample_frame<R: Rng + ?Sized>(
    truth: &SceneSnapshot,
    profile: &DetectorProfile,
    policy: &DecisionPolicy,
    rng: &mut R,
) -> Result<DetectionFrame, PerceptionError> {
    let delay = profile.pipeline_delay()?;
    let threshold = policy.confidence_threshold;
    let mut detections = Vec::with_capacity(truth.entities.len());

    for entity in &truth.entities {
        let hit = rng.gen::<f64>() >= profile.miss_rate;
        let confidence = threshold + (1.0 - threshold) * rng.gen::<f64>();
        if hit {
            detections.push(Detection::new(entity.class.clone(), confidence, entity.bbox));
        }
    }

    if profile.false_alarm_rate > 0.0 {
        let classes = policy.known_classes();
        for _ in 0..poisson(profile.false_alarm_rate, rng) {
            let class = classes[rng.gen_range(0..classes.len())].clone();
            let confidence = threshold + (1.0 - threshold) * rng.gen::<f64>();
            detections.push(Detection::new(class, confidence, random_bbox(rng)));
        }
    }

    Ok(DetectionFrame::new(truth.time, truth.time + delay, detections))
}

fn random_bbox<R: Rng + ?Sized>(rng: &mut R) -> BBox {
    let w = rng.gen_range(0.05..0.25);
    let h = rng.gen_range(0.05..0.25);
    BBox::new(rng.gen_range(0.0..1.0 - w), rng.gen_range(0.0..1.0 - h), w, h)
}

/// Knuth's multiplication method; adequate for the small means used here.
fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    let limit = libm::exp(-mean);
    let mut product = rng.gen::<f64>();
    let mut count = 0;
    while product > limit {
        count += 1;
        product *= rng.gen::<f64>();
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(classes: &[&str]) -> SceneSnapshot {
        SceneSnapshot {
            time: 1.0,
            entities: classes
                .iter()
                .map(|c| SceneEntity {
                    class: DetectionClass::new(c).unwrap(),
                    bbox: BBox::new(0.4, 0.3, 0.2, 0.4),
                })
                .collect(),
        }
    }

    #[test]
    fn lookup_examples() {
        let table = BenchmarkTable::builtin();
        assert_eq!(lookup_profile("resnet-50", "jetson-nano", &table).unwrap().fps, 36.0);
        assert!(!lookup_profile("inception-v4", "raspberry-pi-3", &table).unwrap().available);
        assert_eq!(lookup_profile("tiny-yolo-v3", "jetson-nano", &table).unwrap().fps, 25.0);
        assert_eq!(lookup_profile("ssd-inception-v2", "jetson-nano", &table).unwrap().fps, 20.0);
        assert!(matches!(
            lookup_profile("resnet-50", "toaster", &table),
            Err(PerceptionError::UnknownProfile { .. })
        ));
    }

    #[test]
    fn builtin_table_shape() {
        let table = BenchmarkTable::builtin();
        assert_eq!(table.rows().len(), 43);
        assert_eq!(table.for_device("jetson-nano").count(), 15);
        assert_eq!(table.rows().iter().filter(|r| r.fps.is_none()).count(), 14);
        assert!(BenchmarkTable::from_rows(table.rows().to_vec()).is_ok());
    }

    #[test]
    fn duplicate_rows_rejected() {
        let row = BenchmarkRow { model: "m".into(), device: "d".into(), fps: Some(1.0) };
        assert!(BenchmarkTable::from_rows(vec![row.clone(), row]).is_err());
    }

    #[test]
    fn delays() {
        let mut p = DetectorProfile::reference();
        assert!((inference_delay(&p).unwrap() - 0.05).abs() < 1e-15);
        p.fps = 1.0;
        assert_eq!(inference_delay(&p).unwrap(), 1.0);
        p.fps = 39.0;
        assert!((inference_delay(&p).unwrap() - 0.025_641_025_641_025_64).abs() < 1e-15);
        let dnr = DetectorProfile::new("inception-v4", "raspberry-pi-3", None);
        assert!(matches!(inference_delay(&dnr), Err(PerceptionError::Unavailable { .. })));
    }

    #[test]
    fn schedules() {
        let p = DetectorProfile::reference();
        let s = frame_schedule(&p, 0.0, 0.2).unwrap();
        assert_eq!(s.len(), 5);
        for (t, want) in s.iter().zip([0.0, 0.05, 0.10, 0.15, 0.20]) {
            assert!((t - want).abs() < 1e-12);
        }
        assert_eq!(frame_schedule(&p, 3.0, 0.0).unwrap(), vec![3.0]);
        let slow = DetectorProfile { fps: 1.0, ..p.clone() };
        assert_eq!(frame_schedule(&slow, 0.5, 2.5).unwrap(), vec![0.5, 1.5, 2.5]);
        assert!(frame_schedule(&p, 0.0, -1.0).is_err());
    }

    #[test]
    fn perfect_detector_is_faithful() {
        let policy = DecisionPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frame = sample_frame(&scene(&["person", "target"]), &DetectorProfile::reference(), &policy, &mut rng)
            .unwrap();
        let labels: Vec<_> = frame.detections.iter().map(|d| d.class.as_str()).collect();
        assert_eq!(labels, ["person", "target"]);
        assert!(frame.detections.iter().all(|d| d.confidence >= 0.5 && d.confidence <= 1.0));
        assert!((frame.available_time - frame.capture_time - 0.17).abs() < 1e-12);
    }

    #[test]
    fn blind_detector_sees_nothing() {
        let policy = DecisionPolicy::default();
        let profile = DetectorProfile { miss_rate: 1.0, ..DetectorProfile::reference() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let frame = sample_frame(&scene(&["person", "target"]), &profile, &policy, &mut rng).unwrap();
            assert!(frame.detections.is_empty());
        }
    }

    #[test]
    fn false_alarms_have_known_classes_and_valid_boxes() {
        let policy = DecisionPolicy::default();
        let profile = DetectorProfile { false_alarm_rate: 2.0, ..DetectorProfile::reference() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut total = 0usize;
        for _ in 0..2000 {
            let frame = sample_frame(&scene(&[]), &profile, &policy, &mut rng).unwrap();
            frame.validate().unwrap();
            assert!(frame.detections.iter().all(|d| policy.knows(&d.class)));
            total += frame.detections.len();
        }
        let mean = total as f64 / 2000.0;
        // Poisson(2) over 2000 frames: sd of the mean is about 0.032.
        assert!((mean - 2.0).abs() < 0.15, "mean spurious count {mean}");
    }

    #[test]
    fn profile_validation() {
        assert!(DetectorProfile::reference().validate().is_ok());
        let bad = DetectorProfile { miss_rate: 1.2, ..DetectorProfile::reference() };
        assert!(bad.validate().is_err());
        let zero = DetectorProfile { fps: 0.0, ..DetectorProfile::reference() };
        assert!(zero.validate().is_err());
    }
}
