//! Detection logs, scenario files, ego trajectories and camera-stream
//! scheduling.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::association::Detection;
use crate::error::{Error, Result};
use crate::geometry::{CameraId, CameraModel, Point3, RigidTransform};
use crate::hdmap::{self, HdMap, MapDocument, SignalState};
use crate::simulator::NoiseModel;

/// Integer nanoseconds since epoch.
pub type Nanos = i64;

pub const NANOS_PER_SEC: i64 = 1_000_000_000;

pub fn nanos_to_secs(ns: Nanos) -> f64 {
    ns as f64 / NANOS_PER_SEC as f64
}

/// Distance to the stop line under which the second stream uses the wide camera.
pub const DEFAULT_SWITCH_DISTANCE_M: f64 = 10.0;

/// Ego pose. Heading is the horizontal direction given by `yaw` (radians,
/// counter-clockwise from world +x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose", into = "RawPose")]
pub struct EgoPose {
    pub timestamp: Nanos,
    pub position: Point3,
    pub yaw: f64,
    pub speed: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPose {
    t: Nanos,
    position: [f64; 3],
    yaw: f64,
    #[serde(default)]
    speed: f64,
}

impl TryFrom<RawPose> for EgoPose {
    type Error = Error;

    fn try_from(r: RawPose) -> Result<Self> {
        EgoPose::new(r.t, r.position.into(), r.yaw, r.speed)
    }
}

impl From<EgoPose> for RawPose {
    fn from(p: EgoPose) -> Self {
        RawPose {
            t: p.timestamp,
            position: p.position.into(),
            yaw: p.yaw,
            speed: p.speed,
        }
    }
}

impl EgoPose {
    pub fn new(timestamp: Nanos, position: Point3, yaw: f64, speed: f64) -> Result<Self> {
        if !(speed >= 0.0 && speed.is_finite()) {
            return Err(Error::invalid("pose speed", format!("{speed} must be finite and >= 0")));
        }
        if !yaw.is_finite() || !position.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pose", "non-finite position or yaw"));
        }
        Ok(Self {
            timestamp,
            position,
            yaw,
            speed,
        })
    }

    pub fn heading(&self) -> Vector3<f64> {
        Vector3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    /// Body frame (x forward, y left, z up) to world.
    pub fn body_to_world(&self) -> RigidTransform {
        RigidTransform::from_yaw(self.yaw, self.position)
    }

    /// The pose shifted by `offset` expressed in the body frame.
    pub fn offset_in_body(&self, offset: &Vector3<f64>) -> EgoPose {
        EgoPose {
            position: self.position + self.body_to_world().apply_vector(offset),
            ..*self
        }
    }
}

/// Which camera feeds each of the two detector instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSchedule {
    pub primary: CameraId,
    pub secondary: CameraId,
}

impl StreamSchedule {
    pub fn for_distance(distance_to_stop_line: f64, switch_distance: f64) -> Self {
        Self {
            primary: CameraId::FrontMedium,
            secondary: select_second_stream(distance_to_stop_line, switch_distance),
        }
    }

    pub fn cameras(&self) -> [CameraId; 2] {
        [self.primary, self.secondary]
    }
}

/// Tele by default, wide once strictly closer than `switch_distance`.
/// Pass `f64::INFINITY` when no intersection is ahead.
pub fn select_second_stream(distance_to_stop_line: f64, switch_distance: f64) -> CameraId {
    if distance_to_stop_line < switch_distance {
        CameraId::FrontWide
    } else {
        CameraId::FrontTele
    }
}

pub fn parse_detection_log(text: &str, context: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    let mut last_per_camera: Vec<(CameraId, Nanos)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let det: Detection = serde_json::from_str(line).map_err(|e| Error::Parse {
            context: context.to_string(),
            line: Some(line_no),
            message: e.to_string(),
        })?;
        match last_per_camera.iter_mut().find(|(c, _)| *c == det.camera_id) {
            Some((_, last)) if det.timestamp < *last => {
                return Err(Error::NonMonotone {
                    what: format!("{context}: camera {}", det.camera_id),
                    at: format!("line {line_no} (t={} < {})", det.timestamp, last),
                });
            }
            Some((_, last)) => *last = det.timestamp,
            None => last_per_camera.push((det.camera_id, det.timestamp)),
        }
        out.push(det);
    }
    // stable: per-camera order is kept for equal timestamps
    out.sort_by_key(|d| d.timestamp);
    Ok(out)
}

pub fn load_detection_log(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detection_log(&text, &path.display().to_string())
}

pub fn write_detection_log(detections: &[Detection]) -> String {
    detections
        .iter()
        .map(|d| serde_json::to_string(d).expect("detection serializes") + "\n")
        .collect()
}

/// Merges per-camera logs by timestamp; ties keep the input order.
pub fn merge_streams(streams: &[Vec<Detection>]) -> Vec<Detection> {
    let mut all: Vec<Detection> = streams.iter().flatten().cloned().collect();
    all.sort_by_key(|d| d.timestamp);
    all
}

/// Time-ordered poses, linearly interpolated between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<EgoPose>,
}

impl Trajectory {
    pub fn new(poses: Vec<EgoPose>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("trajectory", "no poses"));
        }
        if let Some(w) = poses.windows(2).find(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(Error::NonMonotone {
                what: "trajectory".into(),
                at: format!("t={}", w[1].timestamp),
            });
        }
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[EgoPose] {
        &self.poses
    }

    pub fn start(&self) -> Nanos {
        self.poses[0].timestamp
    }

    pub fn end(&self) -> Nanos {
        self.poses[self.poses.len() - 1].timestamp
    }

    /// Pose at `t`, clamped to the trajectory span.
    pub fn pose_at(&self, t: Nanos) -> EgoPose {
        let idx = self.poses.partition_point(|p| p.timestamp <= t);
        if idx == 0 {
            return EgoPose { timestamp: t, ..self.poses[0] };
        }
        if idx == self.poses.len() {
            return EgoPose {
                timestamp: t,
                ..self.poses[idx - 1]
            };
        }
        let (a, b) = (&self.poses[idx - 1], &self.poses[idx]);
        let s = (t - a.timestamp) as f64 / (b.timestamp - a.timestamp) as f64;
        let dyaw = (b.yaw - a.yaw + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        EgoPose {
            timestamp: t,
            position: a.position + (b.position - a.position) * s,
            yaw: a.yaw + dyaw * s,
            speed: a.speed + (b.speed - a.speed) * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseInterval {
    pub from: Nanos,
    pub to: Nanos,
    pub state: SignalState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupPhases {
    pub group: String,
    pub intervals: Vec<PhaseInterval>,
}

impl GroupPhases {
    /// Ground-truth state at `t`; intervals are half-open `[from, to)`.
    pub fn state_at(&self, t: Nanos) -> Option<SignalState> {
        let idx = self.intervals.partition_point(|iv| iv.from <= t);
        let iv = self.intervals.get(idx.checked_sub(1)?)?;
        (t < iv.to).then_some(iv.state)
    }

    /// Times at which the state changes, with the new state.
    pub fn changes(&self) -> impl Iterator<Item = (Nanos, SignalState, SignalState)> + '_ {
        self.intervals
            .windows(2)
            .filter(|w| w[0].state != w[1].state)
            .map(|w| (w[1].from, w[0].state, w[1].state))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevantSpan {
    pub from: Nanos,
    pub to: Nanos,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSource {
    Path(PathBuf),
    Inline(MapDocument),
}

/// On-disk scenario layout. Camera extrinsics are relative to the ego body
/// frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub map: MapSource,
    pub cameras: Vec<CameraModel>,
    pub trajectory: Vec<EgoPose>,
    pub phases: Vec<GroupPhases>,
    #[serde(default)]
    pub relevant: Vec<RelevantSpan>,
    #[serde(default)]
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub map: HdMap,
    pub cameras: Vec<CameraModel>,
    pub trajectory: Trajectory,
    pub phases: Vec<GroupPhases>,
    pub relevant: Vec<RelevantSpan>,
    pub noise: NoiseModel,
}

impl Scenario {
    pub fn new(
        map: HdMap,
        cameras: Vec<CameraModel>,
        trajectory: Trajectory,
        mut phases: Vec<GroupPhases>,
        mut relevant: Vec<RelevantSpan>,
        noise: NoiseModel,
    ) -> Result<Self> {
        noise.validate()?;
        let mut seen = HashSet::new();
        for cam in &cameras {
            if !seen.insert(cam.id) {
                return Err(Error::DuplicateId {
                    kind: "camera",
                    id: cam.id.to_string(),
                });
            }
        }
        let (start, end) = (trajectory.start(), trajectory.end());

        let mut scheduled = HashSet::new();
        for gp in &mut phases {
            if map.group(&gp.group).is_none() {
                return Err(Error::DanglingReference {
                    owner: "phase schedule".into(),
                    kind: "group",
                    id: gp.group.clone(),
                });
            }
            if !scheduled.insert(gp.group.clone()) {
                return Err(Error::DuplicateId {
                    kind: "phase schedule",
                    id: gp.group.clone(),
                });
            }
            gp.intervals.sort_by_key(|iv| iv.from);
            check_schedule(gp, start, end)?;
        }
        if let Some(g) = map.groups().iter().find(|g| !scheduled.contains(&g.id)) {
            return Err(Error::ScheduleGap { group: g.id.clone(), at: start });
        }

        relevant.sort_by_key(|r| r.from);
        for r in &relevant {
            if map.group(&r.group).is_none() {
                return Err(Error::DanglingReference {
                    owner: "relevant timeline".into(),
                    kind: "group",
                    id: r.group.clone(),
                });
            }
            if r.to <= r.from {
                return Err(Error::invalid("relevant span", format!("[{}, {}) is empty", r.from, r.to)));
            }
        }
        if let Some(w) = relevant.windows(2).find(|w| w[1].from < w[0].to) {
            return Err(Error::invalid("relevant timeline", format!("spans overlap at t={}", w[1].from)));
        }

        Ok(Self {
            map,
            cameras,
            trajectory,
            phases,
            relevant,
            noise,
        })
    }

    pub fn camera(&self, id: CameraId) -> Option<&CameraModel> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn phases_for(&self, group: &str) -> Option<&GroupPhases> {
        self.phases.iter().find(|p| p.group == group)
    }

    pub fn ground_truth(&self, group: &str, t: Nanos) -> Option<SignalState> {
        self.phases_for(group)?.state_at(t)
    }

    pub fn relevant_group(&self, t: Nanos) -> Option<&str> {
        let idx = self.relevant.partition_point(|r| r.from <= t);
        let span = self.relevant.get(idx.checked_sub(1)?)?;
        (t < span.to).then_some(span.group.as_str())
    }

    /// Euclidean distance from `position` to the group's stop line.
    pub fn stop_line_distance(&self, group: &str, position: &Point3) -> Option<f64> {
        self.map.group(group).map(|g| (g.stop_line - position).norm())
    }

    pub fn to_document(&self) -> ScenarioDocument {
        ScenarioDocument {
            map: MapSource::Inline(self.map.to_document()),
            cameras: self.cameras.clone(),
            trajectory: self.trajectory.poses().to_vec(),
            phases: self.phases.clone(),
            relevant: self.relevant.clone(),
            noise: self.noise.clone(),
        }
    }
}

fn check_schedule(gp: &GroupPhases, start: Nanos, end: Nanos) -> Result<()> {
    let gap = |at| Error::ScheduleGap { group: gp.group.clone(), at };
    let first = gp.intervals.first().ok_or_else(|| gap(start))?;
    if first.from > start {
        return Err(gap(start));
    }
    for iv in &gp.intervals {
        if iv.to <= iv.from {
            return Err(Error::invalid(
                format!("phase interval of group '{}'", gp.group),
                format!("[{}, {}) is empty", iv.from, iv.to),
            ));
        }
        if iv.state == SignalState::Unknown {
            return Err(Error::invalid(format!("phase of group '{}'", gp.group), "ground truth cannot be unknown"));
        }
    }
    for w in gp.intervals.windows(2) {
        if w[1].from > w[0].to {
            return Err(gap(w[0].to));
        }
        if w[1].from < w[0].to {
            return Err(Error::invalid(
                format!("phase schedule of group '{}'", gp.group),
                format!("intervals overlap at t={}", w[1].from),
            ));
        }
    }
    let last = gp.intervals.last().expect("non-empty");
    if last.to <= end {
        return Err(gap(last.to));
    }
    Ok(())
}

pub fn parse_scenario(text: &str, context: &str, base_dir: &Path) -> Result<Scenario> {
    let doc: ScenarioDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: context.to_string(),
        line: Some(e.line()),
        message: e.to_string(),
    })?;
    let map_doc = match doc.map {
        MapSource::Inline(m) => m,
        MapSource::Path(p) => hdmap::read_map_document(&base_dir.join(p))?,
    };
    Scenario::new(
        HdMap::try_from(map_doc)?,
        doc.cameras,
        Trajectory::new(doc.trajectory)?,
        doc.phases,
        doc.relevant,
        doc.noise,
    )
}

/// Loads a scenario; a relative map path resolves against the scenario's directory.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scenario(&text, &path.display().to_string(), base)
}
