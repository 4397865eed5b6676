//! Ready-made scenarios used by tests, the CLI and the bundled fixtures.

use nalgebra::Vector3;

use crate::decision::{stop_feasible, DEFAULT_REACTION_LATENCY_S};
use crate::error::Result;
use crate::geometry::{forward_facing_rotation, CameraId, CameraModel};
use crate::hdmap::{GroupRecord, HdMap, LightRecord, MapDocument, Pictogram, SignalState};
use crate::ingest::{EgoPose, GroupPhases, Nanos, PhaseInterval, RelevantSpan, Scenario, Trajectory, NANOS_PER_SEC};
use crate::simulator::NoiseModel;

/// Camera height above the ego reference point, meters.
pub const CAMERA_HEIGHT_M: f64 = 1.5;

fn secs(s: f64) -> Nanos {
    (s * NANOS_PER_SEC as f64).round() as Nanos
}

/// Three front cameras with the usual 61/31/106 degree horizontal FOVs, all
/// at the same mount point. Extrinsics are relative to the ego body frame.
pub fn standard_rig() -> Vec<CameraModel> {
    let mount = Vector3::new(0.0, 0.0, CAMERA_HEIGHT_M);
    let rot = forward_facing_rotation();
    vec![
        CameraModel::from_fov(CameraId::FrontMedium, 61.0, 39.0, 1920, 1200, rot, mount).expect("valid rig"),
        CameraModel::from_fov(CameraId::FrontTele, 31.0, 20.0, 1920, 1200, rot, mount).expect("valid rig"),
        CameraModel::from_fov(CameraId::FrontWide, 106.0, 92.0, 2592, 2048, rot, mount).expect("valid rig"),
    ]
}

fn light(id: &str, position: [f64; 3], pictogram: Pictogram, group: &str) -> LightRecord {
    LightRecord {
        id: id.into(),
        position,
        pictogram,
        group: group.into(),
    }
}

fn group(id: &str, members: &[&str], stop_line: [f64; 3]) -> GroupRecord {
    GroupRecord {
        id: id.into(),
        members: members.iter().map(|m| m.to_string()).collect(),
        stop_line,
        v2x: None,
    }
}

fn constant(group: &str, state: SignalState, from: Nanos, to: Nanos) -> GroupPhases {
    GroupPhases {
        group: group.into(),
        intervals: vec![PhaseInterval { from, to, state }],
    }
}

fn static_trajectory(position: Vector3<f64>, duration: Nanos) -> Trajectory {
    Trajectory::new(vec![
        EgoPose::new(0, position, 0.0, 0.0).expect("valid pose"),
        EgoPose::new(duration, position, 0.0, 0.0).expect("valid pose"),
    ])
    .expect("monotone")
}

/// One circle light 50 m ahead of a parked ego, red for ten seconds.
pub fn minimal() -> Scenario {
    let end = secs(10.0);
    let map = HdMap::try_from(MapDocument {
        lights: vec![light("L1", [50.0, 0.0, 5.0], Pictogram::Circle, "G1")],
        groups: vec![group("G1", &["L1"], [32.0, 0.0, 0.0])],
    })
    .expect("valid map");
    Scenario::new(
        map,
        standard_rig(),
        static_trajectory(Vector3::zeros(), end),
        vec![constant("G1", SignalState::Red, 0, end + 1)],
        vec![RelevantSpan { from: 0, to: end + 1, group: "G1".into() }],
        NoiseModel::default(),
    )
    .expect("valid scenario")
}

/// Parked ego 50 m before a light that turns from red to green at `change`.
///
/// With `single_stream` only the front-medium camera is fitted, so the light
/// collects one detection per tick.
pub fn step_change(change: Nanos, single_stream: bool) -> Scenario {
    let end = secs(10.0);
    let map = HdMap::try_from(MapDocument {
        lights: vec![light("L1", [50.0, 0.0, 5.0], Pictogram::Circle, "G1")],
        groups: vec![group("G1", &["L1"], [32.0, 0.0, 0.0])],
    })
    .expect("valid map");
    let cameras = if single_stream {
        standard_rig().into_iter().filter(|c| c.id == CameraId::FrontMedium).collect()
    } else {
        standard_rig()
    };
    let phases = vec![GroupPhases {
        group: "G1".into(),
        intervals: vec![
            PhaseInterval { from: 0, to: change, state: SignalState::Red },
            PhaseInterval { from: change, to: end + 1, state: SignalState::Green },
        ],
    }];
    Scenario::new(
        map,
        cameras,
        static_trajectory(Vector3::zeros(), end),
        phases,
        vec![RelevantSpan { from: 0, to: end + 1, group: "G1".into() }],
        NoiseModel::default(),
    )
    .expect("valid scenario")
}

/// Two lights 3 m apart: a straight light and a right-turn light in separate
/// groups, showing different states. The believed ego pose is shifted
/// `lateral_offset` meters to the right, towards the right-turn light, which
/// places the straight light's ray halfway between both lights.
pub fn two_light_offset(lateral_offset: f64, pixel_sigma: f64, seed: u64) -> Scenario {
    let end = secs(5.0);
    let map = HdMap::try_from(MapDocument {
        lights: vec![
            light("straight", [60.0, 0.0, 5.0], Pictogram::Straight, "G_straight"),
            light("right", [60.0, -3.0, 5.0], Pictogram::Right, "G_right"),
        ],
        groups: vec![
            group("G_straight", &["straight"], [42.0, 0.0, 0.0]),
            group("G_right", &["right"], [42.0, -3.0, 0.0]),
        ],
    })
    .expect("valid map");
    let trajectory = Trajectory::new(vec![
        EgoPose::new(0, Vector3::new(0.0, 0.0, 0.0), 0.0, 4.0).expect("valid pose"),
        EgoPose::new(end, Vector3::new(20.0, 0.0, 0.0), 0.0, 4.0).expect("valid pose"),
    ])
    .expect("monotone");
    Scenario::new(
        map,
        standard_rig(),
        trajectory,
        vec![
            constant("G_straight", SignalState::Green, 0, end + 1),
            constant("G_right", SignalState::Red, 0, end + 1),
        ],
        vec![RelevantSpan { from: 0, to: end + 1, group: "G_right".into() }],
        NoiseModel {
            pixel_sigma,
            localization_offset: [0.0, -lateral_offset, 0.0],
            seed,
            ..Default::default()
        },
    )
    .expect("valid scenario")
}

/// Knobs for [`route`].
#[derive(Debug, Clone, PartialEq)]
pub struct RouteConfig {
    pub intersections: usize,
    pub duration_s: f64,
    pub cruise_speed: f64,
    pub first_stop_line_x: f64,
    pub spacing: f64,
    /// Index of the intersection whose straight group is an on-demand light.
    pub on_demand: Option<usize>,
    /// Phase offset between consecutive intersections, seconds.
    pub phase_step: f64,
}

impl Default for RouteConfig {
    fn default() -> Self {
        Self {
            intersections: 6,
            duration_s: 600.0,
            cruise_speed: 12.0,
            first_stop_line_x: 350.0,
            spacing: 900.0,
            on_demand: Some(3),
            phase_step: 60.0,
        }
    }
}

/// Lights sit this far past the stop line.
const LIGHT_SETBACK_M: f64 = 18.0;
const POSE_STEP_S: f64 = 0.1;
const COMFORT_DECEL: f64 = 1.0;
const MAX_DECEL: f64 = 3.0;
const ACCEL: f64 = 1.0;

// (state, seconds) cycles
const STRAIGHT_CYCLE: [(SignalState, f64); 4] = [
    (SignalState::Red, 40.0),
    (SignalState::RedYellow, 1.0),
    (SignalState::Green, 46.0),
    (SignalState::Yellow, 3.0),
];
const LEFT_CYCLE: [(SignalState, f64); 4] = [
    (SignalState::Red, 70.0),
    (SignalState::RedYellow, 1.0),
    (SignalState::Green, 16.0),
    (SignalState::Yellow, 3.0),
];
const ON_DEMAND_CYCLE: [(SignalState, f64); 3] = [
    (SignalState::Off, 60.0),
    (SignalState::Yellow, 3.0),
    (SignalState::Red, 27.0),
];

fn cyclic_phases(group: String, cycle: &[(SignalState, f64)], offset_s: f64, end: Nanos) -> GroupPhases {
    let period: f64 = cycle.iter().map(|c| c.1).sum();
    let mut t = -offset_s.rem_euclid(period) - period;
    let mut intervals = Vec::new();
    'outer: loop {
        for &(state, dur) in cycle {
            let (from, to) = (secs(t), secs(t + dur));
            intervals.push(PhaseInterval { from, to, state });
            t += dur;
            if to > end {
                break 'outer;
            }
        }
    }
    GroupPhases { group, intervals }
}

/// Straight road along world +x with signalized intersections. The ego
/// cruises, brakes for anything but green or dark at the next stop line,
/// waits, and drives on. Each intersection has a two-light straight group
/// (overhead plus pole) and a left-turn light 3 m beside the overhead one.
/// The straight group of the approaching intersection is the relevant one.
pub fn route(config: &RouteConfig, noise: NoiseModel) -> Result<Scenario> {
    let end = secs(config.duration_s);
    let mut lights = Vec::new();
    let mut groups = Vec::new();
    let mut phases = Vec::new();
    let mut stop_lines = Vec::new();
    for k in 0..config.intersections {
        let x = config.first_stop_line_x + k as f64 * config.spacing;
        let lx = x + LIGHT_SETBACK_M;
        stop_lines.push(x);
        let (s_id, l_id) = (format!("I{k}-straight"), format!("I{k}-left"));
        let offset = k as f64 * config.phase_step;
        if config.on_demand == Some(k) {
            lights.push(light(&format!("I{k}-pole"), [lx, -4.5, 3.5], Pictogram::Circle, &s_id));
            groups.push(group(&s_id, &[&format!("I{k}-pole")], [x, 0.0, 0.0]));
            phases.push(cyclic_phases(s_id, &ON_DEMAND_CYCLE, offset, end));
        } else {
            lights.push(light(&format!("I{k}-overhead"), [lx, 0.0, 5.5], Pictogram::Straight, &s_id));
            lights.push(light(&format!("I{k}-pole"), [lx, -4.5, 3.5], Pictogram::Straight, &s_id));
            groups.push(group(&s_id, &[&format!("I{k}-overhead"), &format!("I{k}-pole")], [x, 0.0, 0.0]));
            phases.push(cyclic_phases(s_id, &STRAIGHT_CYCLE, offset, end));
        }
        lights.push(light(&format!("I{k}-left"), [lx, 3.0, 5.5], Pictogram::Left, &l_id));
        groups.push(group(&l_id, &[&format!("I{k}-left")], [x, 3.0, 0.0]));
        phases.push(cyclic_phases(l_id, &LEFT_CYCLE, offset + 50.0, end));
    }
    let map = HdMap::try_from(MapDocument { lights, groups })?;

    // kinematic drive
    let step = secs(POSE_STEP_S);
    let (mut x, mut v) = (0.0f64, config.cruise_speed);
    let mut next = 0usize;
    let mut committed = false;
    let mut span_start = 0;
    let mut relevant = Vec::new();
    let mut poses = Vec::new();
    let mut t: Nanos = 0;
    while t <= end + step {
        poses.push(EgoPose::new(t, Vector3::new(x, 0.0, 0.0), 0.0, v)?);
        let mut accel = if v < config.cruise_speed { ACCEL } else { 0.0 };
        if let Some(&stop_x) = stop_lines.get(next) {
            let d = stop_x - x;
            let state = phases[2 * next].state_at(t).unwrap_or(SignalState::Off);
            let go = matches!(state, SignalState::Green | SignalState::Off);
            if !go && !committed && d <= v * v / (2.0 * COMFORT_DECEL) + 1.0 {
                if state == SignalState::Yellow && !stop_feasible(v, d.max(0.0), MAX_DECEL, DEFAULT_REACTION_LATENCY_S) {
                    committed = true;
                } else if d <= 0.5 || v < 0.05 && d < 2.0 {
                    v = 0.0;
                    accel = 0.0;
                } else {
                    accel = -(v * v) / (2.0 * (d - 0.3).max(0.1));
                }
            }
        }
        v = (v + accel * POSE_STEP_S).clamp(0.0, config.cruise_speed);
        x += v * POSE_STEP_S;
        t += step;
        if let Some(&stop_x) = stop_lines.get(next) {
            if x > stop_x {
                relevant.push(RelevantSpan {
                    from: span_start,
                    to: t,
                    group: format!("I{next}-straight"),
                });
                span_start = t;
                next += 1;
                committed = false;
            }
        }
    }
    if next < stop_lines.len() {
        relevant.push(RelevantSpan {
            from: span_start,
            to: t,
            group: format!("I{next}-straight"),
        });
    }
    // the last pose sits one step past `end`, trim to the requested length
    poses.retain(|p| p.timestamp <= end);

    Scenario::new(map, standard_rig(), Trajectory::new(poses)?, phases, relevant, noise)
}
