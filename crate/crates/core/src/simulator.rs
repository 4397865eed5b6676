//! Deterministic scenario playback and evaluation metrics.
//!
//! Randomness comes from a single ChaCha8 stream seeded with
//! `NoiseModel::seed` via `SeedableRng::seed_from_u64`. Uniforms are the
//! `f64` values produced by `rand`'s `StandardUniform`, Gaussians use the
//! Box-Muller transform, Poisson counts use CDF inversion of one uniform.
//! Per camera and tick the draws happen in this order: for every visible
//! light in map order `miss, jitter(2), state, state_pick, pictogram,
//! pictogram_pick, confidence`; then one draw for the false-positive count
//! and `x, y, size, class, confidence` per false positive.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::association::{associate_with, AssociationMode, AssociationParams, Detection};
use crate::decision::{DecisionEngine, DecisionParams, TraceRecord};
use crate::error::{Error, Result};
use crate::geometry::{CameraId, CameraModel};
use crate::hdmap::{HdMap, LightClass, MappedTrafficLight, Pictogram, SignalState};
use crate::ingest::{EgoPose, Nanos, Scenario, StreamSchedule, DEFAULT_SWITCH_DISTANCE_M, NANOS_PER_SEC};

/// Physical housing size used for projected boxes, meters.
pub const LIGHT_WIDTH_M: f64 = 0.3;
pub const LIGHT_HEIGHT_M: f64 = 0.9;
/// Projected lights narrower than this are not detectable, pixels.
pub const MIN_PIXEL_WIDTH: f64 = 2.0;
/// Ticks closer than this to the stop line are scored, meters.
pub const ACCURACY_RANGE_M: f64 = 120.0;
/// A predicted change this close to a ground-truth change is not a flicker.
pub const FLICKER_WINDOW_NS: Nanos = 500_000_000;
pub const DEFAULT_TICK_RATE_HZ: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub miss_rate: f64,
    pub false_positive_rate: f64,
    pub state_confusion: f64,
    pub pictogram_confusion: f64,
    pub pixel_sigma: f64,
    /// Applied to the believed ego pose, body frame (x forward, y left).
    pub localization_offset: [f64; 3],
    pub confidence_range: [f64; 2],
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            state_confusion: 0.0,
            pictogram_confusion: 0.0,
            pixel_sigma: 0.0,
            localization_offset: [0.0; 3],
            confidence_range: [0.9, 0.9],
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("miss_rate", self.miss_rate),
            ("state_confusion", self.state_confusion),
            ("pictogram_confusion", self.pictogram_confusion),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("noise.{name}"), format!("{p} not in [0, 1]")));
            }
        }
        if !(self.false_positive_rate >= 0.0 && self.false_positive_rate.is_finite()) {
            return Err(Error::invalid("noise.false_positive_rate", "must be finite and >= 0"));
        }
        if !(self.pixel_sigma >= 0.0 && self.pixel_sigma.is_finite()) {
            return Err(Error::invalid("noise.pixel_sigma", "must be finite and >= 0"));
        }
        let [lo, hi] = self.confidence_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid("noise.confidence_range", format!("[{lo}, {hi}] not ordered within [0, 1]")));
        }
        Ok(())
    }
}

/// Seeded draw source for detection synthesis.
pub struct NoiseRng(ChaCha8Rng);

impl NoiseRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    /// Two independent standard normals.
    pub fn gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    pub fn poisson(&mut self, mean: f64) -> usize {
        let u = self.uniform();
        if mean <= 0.0 {
            return 0;
        }
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut k = 0;
        while u > cdf && k < 1000 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
        }
        k
    }

    fn pick(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

/// A synthesized detection with the light that produced it, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDetection {
    pub detection: Detection,
    pub source: Option<String>,
}

/// Projected box of a light, `None` when it is not fully in frame or too small.
fn projected_box(camera: &CameraModel, light: &MappedTrafficLight) -> Option<(Vector2<f64>, f64, f64)> {
    let (pixel, depth) = camera.project(&light.position)?;
    let w = camera.fx * LIGHT_WIDTH_M / depth;
    let h = camera.fy * LIGHT_HEIGHT_M / depth;
    if w < MIN_PIXEL_WIDTH {
        return None;
    }
    let inside = pixel.x - w / 2.0 >= 0.0
        && pixel.y - h / 2.0 >= 0.0
        && pixel.x + w / 2.0 <= camera.width as f64
        && pixel.y + h / 2.0 <= camera.height as f64;
    inside.then_some((pixel, w, h))
}

/// In-region lights that project fully inside the frame of a world-placed
/// camera, with their projected centers.
pub fn visible_lights<'m>(map: &'m HdMap, camera: &CameraModel, ego_pose: &EgoPose, region: f64) -> Vec<(&'m MappedTrafficLight, Vector2<f64>)> {
    map.lights_in_region(ego_pose, region)
        .into_iter()
        .filter_map(|l| projected_box(camera, l).map(|(px, _, _)| (l, px)))
        .collect()
}

/// Places a `w`x`h` box centered near `center`, shifted to fit the frame.
fn fit_box(center: Vector2<f64>, w: f64, h: f64, camera: &CameraModel) -> Option<[f64; 4]> {
    let (fw, fh) = (camera.width as f64, camera.height as f64);
    if w >= fw || h >= fh {
        return None;
    }
    let x = center.x.clamp(w / 2.0, fw - w / 2.0);
    let y = center.y.clamp(h / 2.0, fh - h / 2.0);
    Some([x - w / 2.0, y - h / 2.0, x + w / 2.0, y + h / 2.0])
}

/// Noisy detections for one camera frame. `states` gives the displayed state
/// of every light; lights absent from it are treated as dark.
#[allow(clippy::too_many_arguments)]
pub fn synth_detections(
    t: Nanos,
    states: &BTreeMap<String, SignalState>,
    map: &HdMap,
    camera: &CameraModel,
    ego_pose: &EgoPose,
    region: f64,
    noise: &NoiseModel,
    rng: &mut NoiseRng,
) -> Vec<SynthDetection> {
    let [lo, hi] = noise.confidence_range;
    let mut out = Vec::new();
    for light in map.lights_in_region(ego_pose, region) {
        let Some((center, w, h)) = projected_box(camera, light) else {
            continue;
        };
        let miss = rng.uniform();
        let (jx, jy) = rng.gaussian_pair();
        let (u_state, pick_state) = (rng.uniform(), rng.pick(4));
        let (u_pict, pick_pict) = (rng.uniform(), rng.pick(5));
        let confidence = lo + rng.uniform() * (hi - lo);
        if miss < noise.miss_rate {
            continue;
        }
        let truth = states.get(&light.id).copied().unwrap_or(SignalState::Off);
        let mut state = truth;
        if u_state < noise.state_confusion {
            let others: Vec<_> = SignalState::DISPLAYABLE.into_iter().filter(|s| *s != truth).collect();
            state = others[pick_state];
        }
        let mut pictogram = light.pictogram;
        if u_pict < noise.pictogram_confusion {
            let others: Vec<_> = Pictogram::ALL.into_iter().filter(|p| *p != light.pictogram).collect();
            pictogram = others[pick_pict];
        }
        let Some(cls) = LightClass::from_state(state, pictogram) else {
            continue;
        };
        let jittered = center + Vector2::new(jx, jy) * noise.pixel_sigma;
        let Some(bbox) = fit_box(jittered, w, h, camera) else {
            continue;
        };
        let detection = Detection::new(t, camera.id, bbox, cls, confidence).expect("synthesized detection is valid");
        out.push(SynthDetection {
            detection,
            source: Some(light.id.clone()),
        });
    }

    let classes = LightClass::all();
    let spurious = rng.poisson(noise.false_positive_rate);
    for _ in 0..spurious {
        let (ux, uy) = (rng.uniform(), rng.uniform());
        let size = 4.0 + rng.uniform() * 36.0;
        let cls = classes[rng.pick(classes.len())];
        let confidence = lo + rng.uniform() * (hi - lo);
        let center = Vector2::new(ux * camera.width as f64, uy * camera.height as f64);
        if let Some(bbox) = fit_box(center, size, size * 2.5, camera) {
            let detection = Detection::new(t, camera.id, bbox, cls, confidence).expect("synthesized detection is valid");
            out.push(SynthDetection { detection, source: None });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub decision: DecisionParams,
    pub association: AssociationParams,
    pub mode: AssociationMode,
    pub switch_distance: f64,
    pub tick_rate: f64,
    /// Constant capture/processing delay added to every reported latency, ms.
    pub latency_offset_ms: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            decision: DecisionParams::default(),
            association: AssociationParams::default(),
            mode: AssociationMode::Global,
            switch_distance: DEFAULT_SWITCH_DISTANCE_M,
            tick_rate: DEFAULT_TICK_RATE_HZ,
            latency_offset_ms: 0.0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        self.decision.validate()?;
        self.association.validate()?;
        if !(self.switch_distance >= 0.0 && self.switch_distance.is_finite()) {
            return Err(Error::invalid("switch-distance", format!("{} must be >= 0", self.switch_distance)));
        }
        if !(self.tick_rate > 0.0 && self.tick_rate.is_finite()) {
            return Err(Error::invalid("tick-rate", format!("{} must be positive", self.tick_rate)));
        }
        if !(self.latency_offset_ms >= 0.0 && self.latency_offset_ms.is_finite()) {
            return Err(Error::invalid("latency-offset", "must be >= 0"));
        }
        Ok(())
    }

    pub fn tick_period(&self) -> Nanos {
        (NANOS_PER_SEC as f64 / self.tick_rate).round() as Nanos
    }
}

/// One detection of the per-tick debug dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationRecord {
    pub t: Nanos,
    pub camera: CameraId,
    pub class: LightClass,
    /// `None` when the detection stayed unassociated.
    pub light: Option<String>,
    pub cost: Option<f64>,
    /// Light that produced the detection; `None` for false positives.
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub trace: Vec<TraceRecord>,
    pub associations: Vec<AssociationRecord>,
    pub metrics: RunMetrics,
}

/// Steps the scenario at `params.tick_rate` from the first to the last
/// trajectory sample and evaluates the resulting trace.
pub fn run_scenario(scenario: &Scenario, params: &SimParams) -> Result<SimOutput> {
    params.validate()?;
    let map = &scenario.map;
    let noise = &scenario.noise;
    let offset = Vector3::from(noise.localization_offset);
    let mut rng = NoiseRng::new(noise.seed);
    let mut engine = DecisionEngine::new(params.decision)?;
    let mut trace = Vec::new();
    let mut records = Vec::new();
    let period = params.tick_period();

    let mut t = scenario.trajectory.start();
    while t <= scenario.trajectory.end() {
        let true_pose = scenario.trajectory.pose_at(t);
        let believed = true_pose.offset_in_body(&offset);

        let states: BTreeMap<String, SignalState> = map
            .lights()
            .iter()
            .map(|l| (l.id.clone(), scenario.ground_truth(&l.group_id, t).unwrap_or(SignalState::Off)))
            .collect();
        let distance = scenario
            .relevant_group(t)
            .and_then(|g| scenario.stop_line_distance(g, &believed.position))
            .unwrap_or(f64::INFINITY);
        let schedule = StreamSchedule::for_distance(distance, params.switch_distance);

        for cam_id in schedule.cameras() {
            let Some(mount) = scenario.camera(cam_id) else {
                continue;
            };
            let true_cam = mount.placed(&true_pose.body_to_world());
            let believed_cam = mount.placed(&believed.body_to_world());
            let synth = synth_detections(t, &states, map, &true_cam, &true_pose, params.association.region, noise, &mut rng);
            let detections: Vec<Detection> = synth.iter().map(|s| s.detection.clone()).collect();
            let outcome = associate_with(params.mode, &detections, &believed_cam, map, &believed, &params.association)?;

            let mut matched: Vec<Option<(String, f64)>> = vec![None; detections.len()];
            for a in &outcome.associations {
                engine.push_association(a, &detections[a.detection], map)?;
                matched[a.detection] = Some((a.light_id.clone(), a.cost));
            }
            for (s, m) in synth.into_iter().zip(matched) {
                records.push(AssociationRecord {
                    t,
                    camera: cam_id,
                    class: s.detection.cls,
                    light: m.as_ref().map(|(l, _)| l.clone()),
                    cost: m.map(|(_, c)| c),
                    source: s.source,
                });
            }
        }

        for group in map.groups() {
            trace.push(TraceRecord::new(t, engine.group_state(group, t, map)));
        }
        t += period;
    }

    let metrics = compute_metrics(&trace, scenario, &records, params.latency_offset_ms);
    Ok(SimOutput {
        trace,
        associations: records,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub ticks: usize,
    /// Ground-truth changes of the relevant group inside the scored range.
    pub state_changes: usize,
    /// Changes superseded by the next change before being recognized.
    pub unconfirmed_changes: usize,
    pub mean_state_change_latency_ms: Option<f64>,
    pub max_state_change_latency_ms: Option<f64>,
    pub state_change_latencies_ms: Vec<f64>,
    pub flicker_count: usize,
    pub accuracy_within_range: Option<f64>,
    /// Same as `accuracy_within_range` without the ticks between each change
    /// and its recognition.
    pub accuracy_outside_transitions: Option<f64>,
    pub scored_ticks: usize,
    pub first_association_distance: BTreeMap<String, f64>,
    /// Detections-to-confirm -> number of state changes.
    pub confirmation_detections: BTreeMap<usize, usize>,
    /// Associations to a light other than the one that produced the detection.
    pub misassociations: usize,
    /// False positives that were associated to some light.
    pub spurious_associations: usize,
    pub unassociated_detections: usize,
}

/// Evaluates a decision trace against the scenario's ground truth.
///
/// Only ticks where a relevant group is declared and the ego is within
/// [`ACCURACY_RANGE_M`] of its stop line are scored for accuracy, latency
/// and flicker. A flicker is a predicted change into a state that disagrees
/// with ground truth while no ground-truth change happens within
/// [`FLICKER_WINDOW_NS`].
pub fn compute_metrics(trace: &[TraceRecord], scenario: &Scenario, associations: &[AssociationRecord], latency_offset_ms: f64) -> RunMetrics {
    let mut by_group: BTreeMap<&str, Vec<&TraceRecord>> = BTreeMap::new();
    for r in trace {
        by_group.entry(r.group.as_str()).or_default().push(r);
    }
    for recs in by_group.values_mut() {
        recs.sort_by_key(|r| r.t);
    }
    let mut ticks: Vec<Nanos> = trace.iter().map(|r| r.t).collect();
    ticks.sort_unstable();
    ticks.dedup();

    let scored = |group: &str, t: Nanos| -> bool {
        scenario.relevant_group(t) == Some(group)
            && scenario
                .stop_line_distance(group, &scenario.trajectory.pose_at(t).position)
                .is_some_and(|d| d <= ACCURACY_RANGE_M)
    };
    let state_of = |group: &str, t: Nanos| -> Option<SignalState> {
        let recs = by_group.get(group)?;
        let idx = recs.partition_point(|r| r.t <= t);
        Some(recs.get(idx.checked_sub(1)?)?.state)
    };

    // latency per ground-truth change of the relevant group
    let mut latencies = Vec::new();
    let mut unconfirmed = 0;
    let mut transition_windows: Vec<(&str, Nanos, Nanos)> = Vec::new();
    let mut confirmation = BTreeMap::new();
    for phases in &scenario.phases {
        let group = phases.group.as_str();
        let Some(recs) = by_group.get(group) else { continue };
        let changes: Vec<_> = phases.changes().collect();
        for (k, &(tc, _, new_state)) in changes.iter().enumerate() {
            if !scored(group, tc) {
                continue;
            }
            let next_change = changes.get(k + 1).map_or(Nanos::MAX, |c| c.0);
            let start = recs.partition_point(|r| r.t < tc);
            let hit = recs[start..].iter().take_while(|r| r.t < next_change).find(|r| r.state == new_state);
            match hit {
                Some(r) => {
                    latencies.push((r.t - tc) as f64 / 1e6 + latency_offset_ms);
                    transition_windows.push((group, tc, r.t));
                    let members = &scenario.map.group(group).expect("validated").members;
                    let count = associations
                        .iter()
                        .filter(|a| a.t >= tc && a.t <= r.t && a.class.state() == new_state)
                        .filter(|a| a.light.as_ref().is_some_and(|l| members.contains(l)))
                        .count();
                    *confirmation.entry(count).or_insert(0) += 1;
                }
                None => {
                    unconfirmed += 1;
                    transition_windows.push((group, tc, next_change.min(Nanos::MAX - 1)));
                }
            }
        }
    }

    let mut total = 0usize;
    let mut correct = 0usize;
    let mut total_steady = 0usize;
    let mut correct_steady = 0usize;
    let mut flicker = 0;
    for &t in &ticks {
        let Some(group) = scenario.relevant_group(t) else { continue };
        if !scored(group, t) {
            continue;
        }
        let Some(predicted) = state_of(group, t) else { continue };
        let truth = scenario.ground_truth(group, t);
        total += 1;
        let ok = truth == Some(predicted);
        correct += ok as usize;
        let in_transition = transition_windows.iter().any(|&(g, from, to)| g == group && t >= from && t < to);
        if !in_transition {
            total_steady += 1;
            correct_steady += ok as usize;
        }

        let recs = &by_group[group];
        let idx = recs.partition_point(|r| r.t < t);
        if idx > 0 && recs[idx - 1].state != predicted && !ok {
            let near_change = scenario
                .phases_for(group)
                .is_some_and(|p| p.changes().any(|(tc, _, _)| (tc - t).abs() <= FLICKER_WINDOW_NS));
            if !near_change {
                flicker += 1;
            }
        }
    }

    let mut first_association_distance = BTreeMap::new();
    for (group, recs) in &by_group {
        if let Some(r) = recs.iter().find(|r| r.state != SignalState::Unknown) {
            if let Some(d) = scenario.stop_line_distance(group, &scenario.trajectory.pose_at(r.t).position) {
                first_association_distance.insert(group.to_string(), d);
            }
        }
    }

    let misassociations = associations
        .iter()
        .filter(|a| matches!((&a.light, &a.source), (Some(l), Some(s)) if l != s))
        .count();
    let spurious_associations = associations.iter().filter(|a| a.light.is_some() && a.source.is_none()).count();
    let unassociated_detections = associations.iter().filter(|a| a.light.is_none()).count();

    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    RunMetrics {
        ticks: ticks.len(),
        state_changes: latencies.len() + unconfirmed,
        unconfirmed_changes: unconfirmed,
        mean_state_change_latency_ms: (!latencies.is_empty()).then(|| latencies.iter().sum::<f64>() / latencies.len() as f64),
        max_state_change_latency_ms: latencies.iter().copied().reduce(f64::max),
        state_change_latencies_ms: latencies,
        flicker_count: flicker,
        accuracy_within_range: ratio(correct, total),
        accuracy_outside_transitions: ratio(correct_steady, total_steady),
        scored_ticks: total,
        first_association_distance,
        confirmation_detections: confirmation,
        misassociations,
        spurious_associations,
        unassociated_detections,
    }
}

pub fn write_metrics(metrics: &RunMetrics) -> String {
    serde_json::to_string_pretty(metrics).expect("metrics serialize") + "\n"
}

pub fn write_associations(records: &[AssociationRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}
