//! Temporal smoothing of associated detections and signal-group decisions.
//!
//! Every mapped light keeps a fixed-size circular buffer of its associated
//! detections from all camera streams. A detection votes for its detected
//! state with weight
//!
//! ```text
//! confidence * max(0, 1 - age / decay_horizon) * (1 or mismatch_factor)
//! ```
//!
//! where the last factor applies when the detected pictogram differs from
//! the mapped one. The state with the largest summed weight wins, and within
//! a signal group the member whose winning weight is largest decides.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::association::{Association, Detection};
use crate::error::{Error, Result};
use crate::geometry::CameraId;
use crate::hdmap::{HdMap, LightClass, Pictogram, SignalGroup, SignalState};
use crate::ingest::{nanos_to_secs, Nanos};

/// Planner reaction latency used when none is given, seconds.
pub const DEFAULT_REACTION_LATENCY_S: f64 = 0.184;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionParams {
    pub buffer_capacity: usize,
    /// Seconds until a detection's weight reaches zero.
    pub decay_horizon: f64,
    pub mismatch_factor: f64,
}

impl Default for DecisionParams {
    fn default() -> Self {
        Self {
            buffer_capacity: 9,
            decay_horizon: 3.0,
            mismatch_factor: 0.5,
        }
    }
}

impl DecisionParams {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_capacity < 1 {
            return Err(Error::invalid("buffer-capacity", "must be at least 1"));
        }
        if !(self.decay_horizon > 0.0 && self.decay_horizon.is_finite()) {
            return Err(Error::invalid("decay-horizon", format!("{} must be positive", self.decay_horizon)));
        }
        if !(self.mismatch_factor > 0.0 && self.mismatch_factor <= 1.0) {
            return Err(Error::invalid(
                "mismatch-factor",
                format!("{} not in (0, 1]", self.mismatch_factor),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferEntry {
    pub timestamp: Nanos,
    pub cls: LightClass,
    pub confidence: f64,
    pub camera_id: CameraId,
}

impl From<&Detection> for BufferEntry {
    fn from(d: &Detection) -> Self {
        Self {
            timestamp: d.timestamp,
            cls: d.cls,
            confidence: d.confidence,
            camera_id: d.camera_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightBuffer {
    pub light_id: String,
    capacity: usize,
    entries: VecDeque<BufferEntry>,
}

impl LightBuffer {
    pub fn new(light_id: impl Into<String>, capacity: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be at least 1");
        Self {
            light_id: light_id.into(),
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, entry: BufferEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

pub fn detection_weight(confidence: f64, age_secs: f64, pictogram_matches: bool, params: &DecisionParams) -> Result<f64> {
    if age_secs < 0.0 || age_secs.is_nan() {
        return Err(Error::Contract(format!("detection age {age_secs} s is negative")));
    }
    let decay = (1.0 - age_secs / params.decay_horizon).max(0.0);
    let penalty = if pictogram_matches { 1.0 } else { params.mismatch_factor };
    Ok(confidence * decay * penalty)
}

// `off` carries no pictogram and never counts as a mismatch.
fn pictogram_matches(cls: LightClass, mapped: Pictogram) -> bool {
    cls.pictogram().is_none_or(|p| p == mapped)
}

/// Winning state of one buffer and its summed weight; `(Unknown, 0)` when no
/// entry carries positive weight.
///
/// Equal sums go to the state with the most recent contributing entry, then
/// to the more restrictive state.
pub fn light_state(buffer: &LightBuffer, now: Nanos, map_pictogram: Pictogram, params: &DecisionParams) -> (SignalState, f64) {
    // state -> (sum, latest contributing (timestamp, insertion index))
    let mut tally: BTreeMap<SignalState, (f64, (Nanos, usize))> = BTreeMap::new();
    for (idx, e) in buffer.entries.iter().enumerate() {
        let age = nanos_to_secs(now - e.timestamp).max(0.0);
        let w = detection_weight(e.confidence, age, pictogram_matches(e.cls, map_pictogram), params)
            .expect("age clamped to non-negative");
        if w > 0.0 {
            let slot = tally.entry(e.cls.state()).or_insert((0.0, (Nanos::MIN, 0)));
            slot.0 += w;
            slot.1 = slot.1.max((e.timestamp, idx));
        }
    }
    tally
        .into_iter()
        .max_by(|(sa, (wa, ra)), (sb, (wb, rb))| {
            wa.total_cmp(wb)
                .then(ra.cmp(rb))
                .then(sa.restrictiveness().cmp(&sb.restrictiveness()))
        })
        .map_or((SignalState::Unknown, 0.0), |(s, (w, _))| (s, w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDecision {
    pub group_id: String,
    pub state: SignalState,
    pub confidence: f64,
    pub determining_light: Option<String>,
}

/// Per-light buffers for a whole map.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionEngine {
    params: DecisionParams,
    buffers: BTreeMap<String, LightBuffer>,
}

impl DecisionEngine {
    pub fn new(params: DecisionParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            buffers: BTreeMap::new(),
        })
    }

    pub fn params(&self) -> &DecisionParams {
        &self.params
    }

    pub fn buffer(&self, light_id: &str) -> Option<&LightBuffer> {
        self.buffers.get(light_id)
    }

    pub fn push_association(&mut self, association: &Association, detection: &Detection, map: &HdMap) -> Result<()> {
        self.push_entry(&association.light_id, BufferEntry::from(detection), map)
    }

    pub fn push_entry(&mut self, light_id: &str, entry: BufferEntry, map: &HdMap) -> Result<()> {
        if map.light(light_id).is_none() {
            return Err(Error::UnknownLight(light_id.to_string()));
        }
        let capacity = self.params.buffer_capacity;
        self.buffers
            .entry(light_id.to_string())
            .or_insert_with(|| LightBuffer::new(light_id, capacity))
            .push(entry);
        Ok(())
    }

    pub fn light_state(&self, light_id: &str, now: Nanos, map: &HdMap) -> (SignalState, f64) {
        match (self.buffers.get(light_id), map.light(light_id)) {
            (Some(buf), Some(light)) => light_state(buf, now, light.pictogram, &self.params),
            _ => (SignalState::Unknown, 0.0),
        }
    }

    pub fn group_state(&self, group: &SignalGroup, now: Nanos, map: &HdMap) -> GroupDecision {
        group_state(group, self, now, map)
    }
}

/// The member with the highest winning weight decides. Equal weights go to
/// the more restrictive state, then to the earlier member.
pub fn group_state(group: &SignalGroup, engine: &DecisionEngine, now: Nanos, map: &HdMap) -> GroupDecision {
    let mut best: Option<(&str, SignalState, f64)> = None;
    for member in &group.members {
        let (state, weight) = engine.light_state(member, now, map);
        if state == SignalState::Unknown {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, bs, bw)) => weight > bw || (weight == bw && state.restrictiveness() > bs.restrictiveness()),
        };
        if better {
            best = Some((member, state, weight));
        }
    }
    match best {
        Some((light, state, confidence)) => GroupDecision {
            group_id: group.id.clone(),
            state,
            confidence,
            determining_light: Some(light.to_string()),
        },
        None => GroupDecision {
            group_id: group.id.clone(),
            state: SignalState::Unknown,
            confidence: 0.0,
            determining_light: None,
        },
    }
}

/// State handed to the planner: unknown is treated as red.
pub fn planner_state(decision: &GroupDecision) -> SignalState {
    match decision.state {
        SignalState::Unknown => SignalState::Red,
        s => s,
    }
}

/// Reaction distance plus braking distance at constant deceleration.
pub fn stopping_distance(speed: f64, max_decel: f64, reaction_latency: f64) -> f64 {
    speed * reaction_latency + speed * speed / (2.0 * max_decel)
}

/// Whether the vehicle can halt before the stop line.
pub fn stop_feasible(speed: f64, distance_to_stop_line: f64, max_decel: f64, reaction_latency: f64) -> bool {
    debug_assert!(speed >= 0.0 && max_decel > 0.0 && distance_to_stop_line >= 0.0 && reaction_latency >= 0.0);
    stopping_distance(speed, max_decel, reaction_latency) <= distance_to_stop_line
}

/// One line of the decision trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: Nanos,
    pub group: String,
    pub state: SignalState,
    pub confidence: f64,
    pub determining_light: Option<String>,
}

impl TraceRecord {
    pub fn new(t: Nanos, decision: GroupDecision) -> Self {
        Self {
            t,
            group: decision.group_id,
            state: decision.state,
            confidence: decision.confidence,
            determining_light: decision.determining_light,
        }
    }
}

pub fn write_trace(records: &[TraceRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("trace record serializes") + "\n")
        .collect()
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                context: "decision trace".into(),
                line: Some(i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}
