//! HD-map traffic lights, signal groups and the state/pictogram taxonomy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::ingest::EgoPose;

/// Default look-ahead for the region query, meters.
pub const DEFAULT_REGION_M: f64 = 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pictogram {
    Circle,
    Straight,
    Left,
    Right,
    StraightLeft,
    StraightRight,
}

impl Pictogram {
    pub const ALL: [Pictogram; 6] = [
        Pictogram::Circle,
        Pictogram::Straight,
        Pictogram::Left,
        Pictogram::Right,
        Pictogram::StraightLeft,
        Pictogram::StraightRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pictogram::Circle => "circle",
            Pictogram::Straight => "straight",
            Pictogram::Left => "left",
            Pictogram::Right => "right",
            Pictogram::StraightLeft => "straight_left",
            Pictogram::StraightRight => "straight_right",
        }
    }
}

impl FromStr for Pictogram {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Pictogram::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown pictogram '{s}'"))
    }
}

/// Colour aspect of a lit light.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalColor {
    Green,
    Red,
    Yellow,
    RedYellow,
}

impl SignalColor {
    pub const ALL: [SignalColor; 4] = [SignalColor::Green, SignalColor::Red, SignalColor::Yellow, SignalColor::RedYellow];

    pub fn as_str(self) -> &'static str {
        match self {
            SignalColor::Green => "green",
            SignalColor::Red => "red",
            SignalColor::Yellow => "yellow",
            SignalColor::RedYellow => "red_yellow",
        }
    }
}

/// Observable state of a light or signal group. `Unknown` is never a ground
/// truth value, only a decision outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalState {
    Green,
    Red,
    Yellow,
    RedYellow,
    Off,
    Unknown,
}

impl SignalState {
    /// States a light can physically display.
    pub const DISPLAYABLE: [SignalState; 5] = [
        SignalState::Green,
        SignalState::Red,
        SignalState::Yellow,
        SignalState::RedYellow,
        SignalState::Off,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SignalState::Green => "green",
            SignalState::Red => "red",
            SignalState::Yellow => "yellow",
            SignalState::RedYellow => "red_yellow",
            SignalState::Off => "off",
            SignalState::Unknown => "unknown",
        }
    }

    /// Higher is more restrictive: red > red-yellow > yellow > green > off.
    pub fn restrictiveness(self) -> u8 {
        match self {
            SignalState::Red => 5,
            SignalState::RedYellow => 4,
            SignalState::Yellow => 3,
            SignalState::Green => 2,
            SignalState::Off => 1,
            SignalState::Unknown => 0,
        }
    }
}

impl From<SignalColor> for SignalState {
    fn from(c: SignalColor) -> Self {
        match c {
            SignalColor::Green => SignalState::Green,
            SignalColor::Red => SignalState::Red,
            SignalColor::Yellow => SignalState::Yellow,
            SignalColor::RedYellow => SignalState::RedYellow,
        }
    }
}

impl fmt::Display for SignalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalState {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [
            SignalState::Green,
            SignalState::Red,
            SignalState::Yellow,
            SignalState::RedYellow,
            SignalState::Off,
            SignalState::Unknown,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
        .ok_or_else(|| format!("unknown state '{s}'"))
    }
}

/// Detector output class: one of 24 colour/pictogram combinations or `off`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LightClass {
    Lit(SignalColor, Pictogram),
    Off,
}

impl LightClass {
    /// All 25 classes, lit classes ordered by colour then pictogram.
    pub fn all() -> Vec<LightClass> {
        let mut out: Vec<LightClass> = SignalColor::ALL
            .iter()
            .flat_map(|&c| Pictogram::ALL.iter().map(move |&p| LightClass::Lit(c, p)))
            .collect();
        out.push(LightClass::Off);
        out
    }

    pub fn state(self) -> SignalState {
        match self {
            LightClass::Lit(c, _) => c.into(),
            LightClass::Off => SignalState::Off,
        }
    }

    pub fn pictogram(self) -> Option<Pictogram> {
        match self {
            LightClass::Lit(_, p) => Some(p),
            LightClass::Off => None,
        }
    }

    /// Class a light with pictogram `pictogram` shows in `state`. `Unknown`
    /// has no class.
    pub fn from_state(state: SignalState, pictogram: Pictogram) -> Option<LightClass> {
        let color = match state {
            SignalState::Green => SignalColor::Green,
            SignalState::Red => SignalColor::Red,
            SignalState::Yellow => SignalColor::Yellow,
            SignalState::RedYellow => SignalColor::RedYellow,
            SignalState::Off => return Some(LightClass::Off),
            SignalState::Unknown => return None,
        };
        Some(LightClass::Lit(color, pictogram))
    }
}

impl fmt::Display for LightClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LightClass::Lit(c, p) => write!(f, "{}_{}", c.as_str(), p.as_str()),
            LightClass::Off => f.write_str("off"),
        }
    }
}

impl FromStr for LightClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "off" {
            return Ok(LightClass::Off);
        }
        // red_yellow shares a prefix with red, try the longer colour first
        let mut colors = SignalColor::ALL;
        colors.sort_by_key(|c| std::cmp::Reverse(c.as_str().len()));
        for color in colors {
            if let Some(rest) = s.strip_prefix(color.as_str()).and_then(|r| r.strip_prefix('_')) {
                if let Ok(p) = rest.parse() {
                    return Ok(LightClass::Lit(color, p));
                }
            }
        }
        Err(format!("unknown light class '{s}'"))
    }
}

impl Serialize for LightClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LightClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappedTrafficLight {
    pub id: String,
    pub position: Point3,
    pub pictogram: Pictogram,
    pub group_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct V2xIds {
    pub intersection: String,
    pub signal_phase: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalGroup {
    pub id: String,
    pub members: Vec<String>,
    pub stop_line: Point3,
    pub v2x: Option<V2xIds>,
}

/// On-disk layout of the map file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDocument {
    pub lights: Vec<LightRecord>,
    pub groups: Vec<GroupRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightRecord {
    pub id: String,
    pub position: [f64; 3],
    pub pictogram: Pictogram,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupRecord {
    pub id: String,
    pub members: Vec<String>,
    pub stop_line: [f64; 3],
    #[serde(default)]
    pub v2x: Option<V2xIds>,
}

impl MapDocument {
    /// Every invariant violation, in a stable order. Empty when the document
    /// describes a valid map.
    pub fn violations(&self) -> Vec<Error> {
        let mut out = Vec::new();

        let mut light_ids = HashSet::new();
        for l in &self.lights {
            if !light_ids.insert(l.id.as_str()) {
                out.push(Error::DuplicateId { kind: "light", id: l.id.clone() });
            }
            if !l.position.iter().all(|v| v.is_finite()) {
                out.push(Error::invalid(format!("light '{}' position", l.id), "non-finite coordinate"));
            }
        }
        let mut groups: HashMap<&str, &GroupRecord> = HashMap::new();
        for g in &self.groups {
            if groups.insert(g.id.as_str(), g).is_some() {
                out.push(Error::DuplicateId { kind: "group", id: g.id.clone() });
            }
            if g.members.is_empty() {
                out.push(Error::EmptyGroup(g.id.clone()));
            }
            if !g.stop_line.iter().all(|v| v.is_finite()) {
                out.push(Error::invalid(format!("group '{}' stop_line", g.id), "non-finite coordinate"));
            }
            for m in &g.members {
                if !light_ids.contains(m.as_str()) {
                    out.push(Error::DanglingReference {
                        owner: format!("group '{}'", g.id),
                        kind: "light",
                        id: m.clone(),
                    });
                }
            }
        }
        let light_group: HashMap<&str, &str> = self.lights.iter().map(|l| (l.id.as_str(), l.group.as_str())).collect();
        for l in &self.lights {
            match groups.get(l.group.as_str()) {
                None => out.push(Error::DanglingReference {
                    owner: format!("light '{}'", l.id),
                    kind: "group",
                    id: l.group.clone(),
                }),
                Some(g) if !g.members.contains(&l.id) => out.push(Error::MembershipMismatch {
                    light: l.id.clone(),
                    group: l.group.clone(),
                }),
                Some(_) => {}
            }
        }
        for g in &self.groups {
            for m in &g.members {
                if let Some(&owner) = light_group.get(m.as_str()) {
                    if owner != g.id {
                        out.push(Error::MembershipMismatch { light: m.clone(), group: g.id.clone() });
                    }
                }
            }
        }
        out
    }
}

/// Validated, immutable HD map.
#[derive(Debug, Clone, PartialEq)]
pub struct HdMap {
    lights: Vec<MappedTrafficLight>,
    groups: Vec<SignalGroup>,
    light_index: BTreeMap<String, usize>,
    group_index: BTreeMap<String, usize>,
}

impl TryFrom<MapDocument> for HdMap {
    type Error = Error;

    fn try_from(doc: MapDocument) -> Result<Self> {
        if let Some(first) = doc.violations().into_iter().next() {
            return Err(first);
        }
        let lights: Vec<_> = doc
            .lights
            .into_iter()
            .map(|l| MappedTrafficLight {
                id: l.id,
                position: l.position.into(),
                pictogram: l.pictogram,
                group_id: l.group,
            })
            .collect();
        let groups: Vec<_> = doc
            .groups
            .into_iter()
            .map(|g| SignalGroup {
                id: g.id,
                members: g.members,
                stop_line: g.stop_line.into(),
                v2x: g.v2x,
            })
            .collect();
        let light_index = lights.iter().enumerate().map(|(i, l)| (l.id.clone(), i)).collect();
        let group_index = groups.iter().enumerate().map(|(i, g)| (g.id.clone(), i)).collect();
        Ok(Self {
            lights,
            groups,
            light_index,
            group_index,
        })
    }
}

impl HdMap {
    pub fn lights(&self) -> &[MappedTrafficLight] {
        &self.lights
    }

    pub fn groups(&self) -> &[SignalGroup] {
        &self.groups
    }

    pub fn light(&self, id: &str) -> Option<&MappedTrafficLight> {
        self.light_index.get(id).map(|&i| &self.lights[i])
    }

    pub fn group(&self, id: &str) -> Option<&SignalGroup> {
        self.group_index.get(id).map(|&i| &self.groups[i])
    }

    pub fn to_document(&self) -> MapDocument {
        MapDocument {
            lights: self
                .lights
                .iter()
                .map(|l| LightRecord {
                    id: l.id.clone(),
                    position: l.position.into(),
                    pictogram: l.pictogram,
                    group: l.group_id.clone(),
                })
                .collect(),
            groups: self
                .groups
                .iter()
                .map(|g| GroupRecord {
                    id: g.id.clone(),
                    members: g.members.clone(),
                    stop_line: g.stop_line.into(),
                    v2x: g.v2x.clone(),
                })
                .collect(),
        }
    }

    /// Lights ahead of the pose: positive forward distance along the heading
    /// and Euclidean distance at most `range`. Map order is preserved.
    pub fn lights_in_region(&self, pose: &EgoPose, range: f64) -> Vec<&MappedTrafficLight> {
        debug_assert!(range > 0.0);
        let heading = pose.heading();
        self.lights
            .iter()
            .filter(|l| in_region(&l.position, &pose.position, &heading, range))
            .collect()
    }
}

pub(crate) fn in_region(point: &Point3, ego: &Point3, heading: &Point3, range: f64) -> bool {
    let offset = point - ego;
    let forward = offset.dot(heading);
    forward > 0.0 && forward <= range && offset.norm() <= range
}

pub fn parse_map(text: &str, context: &str) -> Result<MapDocument> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        context: context.to_string(),
        line: Some(e.line()),
        message: e.to_string(),
    })
}

pub fn read_map_document(path: &Path) -> Result<MapDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_map(&text, &path.display().to_string())
}

pub fn load_map(path: &Path) -> Result<HdMap> {
    HdMap::try_from(read_map_document(path)?)
}

pub fn save_map(map: &HdMap, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&map.to_document()).expect("map document serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
