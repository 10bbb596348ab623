//! Canonical scenario and road-map data model shared by every stage.
//!
//! A scenario is a fixed 91-frame window at 10 Hz: frames 0..=10 are one
//! second of history (frame 10 is "now"), frames 11..=90 are the 80-step
//! future horizon. All lengths are meters, all angles radians in [-pi, pi).

use std::f64::consts::PI;
use std::fmt;

use serde::de::Deserializer;
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

pub const FRAME_COUNT: usize = 91;
pub const HISTORY_END: usize = 10; // inclusive index of the current frame
pub const FUTURE_FRAMES: usize = 80;
pub const FRAME_DT: f64 = 0.1;
pub const MAX_TRACKS: usize = 32;
/// 70 m/s speed bound at 10 Hz.
pub const MAX_FRAME_DISPLACEMENT: f64 = 7.0;

/// Wrap an angle to [-pi, pi).
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can land exactly on 2*pi for inputs just below -pi.
    if r >= PI {
        r -= 2.0 * PI;
    }
    r
}

/// One observed agent pose. When `valid` is false the numeric fields are
/// meaningless and must be ignored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
    pub valid: bool,
}

impl AgentState {
    pub fn invalid() -> Self {
        AgentState {
            x: 0.0,
            y: 0.0,
            z: 0.0,
            heading: 0.0,
            valid: false,
        }
    }

    pub fn pos(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

// On the wire a state is the compact array [x, y, z, heading, valid].
impl Serialize for AgentState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(5))?;
        seq.serialize_element(&self.x)?;
        seq.serialize_element(&self.y)?;
        seq.serialize_element(&self.z)?;
        seq.serialize_element(&self.heading)?;
        seq.serialize_element(&self.valid)?;
        seq.end()
    }
}

impl<'de> Deserialize<'de> for AgentState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (x, y, z, heading, valid) = <(f64, f64, f64, f64, bool)>::deserialize(d)?;
        Ok(AgentState {
            x,
            y,
            z,
            heading,
            valid,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: u32,
    pub length: f64,
    pub width: f64,
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    pub fn valid_frames(&self) -> usize {
        self.states.iter().filter(|s| s.valid).count()
    }

    pub fn has_valid_history(&self) -> bool {
        self.states
            .iter()
            .take(HISTORY_END + 1)
            .any(|s| s.valid)
    }

    /// Index of the latest valid history frame, if any.
    pub fn last_valid_history(&self) -> Option<usize> {
        (0..=HISTORY_END.min(self.states.len().saturating_sub(1)))
            .rev()
            .find(|&i| self.states[i].valid)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<SplitTag> {
        match s {
            "train" => Some(SplitTag::Train),
            "val" => Some(SplitTag::Val),
            "test" => Some(SplitTag::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Clean,
    Corrupted,
    Cleaned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    pub map_id: String,
    pub split: SplitTag,
    pub provenance: Provenance,
    pub tracks: Vec<AgentTrack>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolylineKind {
    Centerline,
    BoundarySolid,
    BoundaryDashed,
    RoadEdge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub kind: PolylineKind,
    pub points: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadMap {
    pub map_id: String,
    pub nominal_lane_width: f64,
    pub polylines: Vec<Polyline>,
}

impl RoadMap {
    pub fn centerlines(&self) -> impl Iterator<Item = &Polyline> {
        self.polylines
            .iter()
            .filter(|p| p.kind == PolylineKind::Centerline)
    }

    pub fn road_edges(&self) -> impl Iterator<Item = &Polyline> {
        self.polylines
            .iter()
            .filter(|p| p.kind == PolylineKind::RoadEdge)
    }
}

/// One validation finding. `track_id`/`frame` are filled when the violation
/// is localized to a track or a frame of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub track_id: Option<u32>,
    pub frame: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code)?;
        if let Some(t) = self.track_id {
            write!(f, " track={}", t)?;
        }
        if let Some(fr) = self.frame {
            write!(f, " frame={}", fr)?;
        }
        write!(f, " ({})", self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(
        &mut self,
        code: &str,
        track_id: Option<u32>,
        frame: Option<usize>,
        detail: String,
    ) {
        self.violations.push(Violation {
            code: code.to_string(),
            track_id,
            frame,
            detail,
        });
    }
}

/// Check every structural invariant of a scenario against its map. Violations
/// are data, not errors: the report lists all of them and the inputs are
/// untouched.
///
/// The "at least one valid history frame" rule only applies to clean
/// scenarios; corruption is allowed to hollow tracks out (cleaning removes
/// them later).
pub fn validate_scenario(scenario: &Scenario, map: &RoadMap) -> ValidationReport {
    let mut report = ValidationReport::default();

    if scenario.map_id != map.map_id {
        report.push(
            "map-id-mismatch",
            None,
            None,
            format!("scenario references '{}', map is '{}'", scenario.map_id, map.map_id),
        );
    }

    if scenario.tracks.len() > MAX_TRACKS {
        report.push(
            "track-count",
            None,
            None,
            format!("{} tracks exceeds {}", scenario.tracks.len(), MAX_TRACKS),
        );
    }

    let mut seen_ids = std::collections::BTreeSet::new();
    for track in &scenario.tracks {
        if !seen_ids.insert(track.agent_id) {
            report.push(
                "duplicate-agent-id",
                Some(track.agent_id),
                None,
                "agent_id used by more than one track".to_string(),
            );
        }
    }

    for track in &scenario.tracks {
        let id = Some(track.agent_id);
        if track.states.len() != FRAME_COUNT {
            report.push(
                "frame-count",
                id,
                None,
                format!("{} frames, expected {}", track.states.len(), FRAME_COUNT),
            );
        }
        if !(track.length > 0.0) || !(track.width > 0.0) {
            report.push(
                "bad-dimensions",
                id,
                None,
                format!("length={} width={}", track.length, track.width),
            );
        }
        for (i, s) in track.states.iter().enumerate() {
            if !s.valid {
                continue;
            }
            if !(s.x.is_finite() && s.y.is_finite() && s.z.is_finite() && s.heading.is_finite()) {
                report.push("nonfinite-state", id, Some(i), "non-finite field".to_string());
            } else if !(-PI..PI).contains(&s.heading) {
                report.push(
                    "heading-range",
                    id,
                    Some(i),
                    format!("heading {} outside [-pi, pi)", s.heading),
                );
            }
        }
        for i in 1..track.states.len() {
            let (a, b) = (&track.states[i - 1], &track.states[i]);
            if a.valid && b.valid {
                let d = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
                if d > MAX_FRAME_DISPLACEMENT {
                    report.push(
                        "displacement-bound",
                        id,
                        Some(i),
                        format!("{:.3} m between consecutive valid frames", d),
                    );
                }
            }
        }
        if scenario.provenance == Provenance::Clean && !track.has_valid_history() {
            report.push(
                "no-valid-history",
                id,
                None,
                "no valid frame in 0..=10".to_string(),
            );
        }
    }

    if scenario.split == SplitTag::Test && scenario.provenance != Provenance::Clean {
        report.push(
            "test-split-provenance",
            None,
            None,
            "test scenarios must be clean".to_string(),
        );
    }

    // Map-side invariants.
    if map.centerlines().count() == 0 {
        report.push("no-centerlines", None, None, "map has no centerlines".to_string());
    }
    let edge_count = map.road_edges().count();
    if edge_count != 2 {
        report.push(
            "road-edge-count",
            None,
            None,
            format!("{} road_edge polylines, expected 2", edge_count),
        );
    }
    for (pi, poly) in map.polylines.iter().enumerate() {
        for w in poly.points.windows(2) {
            if w[0] == w[1] {
                report.push(
                    "repeated-polyline-point",
                    None,
                    None,
                    format!("polyline {} has consecutive identical points", pi),
                );
                break;
            }
        }
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn two_track_scenario() -> (Scenario, RoadMap) {
        let map = synth::build_freeway_map(2, 200.0, 3.6, "m0");
        let mk_track = |id: u32, y: f64| AgentTrack {
            agent_id: id,
            length: 4.5,
            width: 1.8,
            states: (0..FRAME_COUNT)
                .map(|i| AgentState {
                    x: 5.0 + i as f64 * 2.0,
                    y,
                    z: 0.0,
                    heading: 0.0,
                    valid: true,
                })
                .collect(),
        };
        let scenario = Scenario {
            scenario_id: "s0".to_string(),
            map_id: "m0".to_string(),
            split: SplitTag::Train,
            provenance: Provenance::Clean,
            tracks: vec![mk_track(0, 0.0), mk_track(1, 3.6)],
        };
        (scenario, map)
    }

    #[test]
    fn well_formed_scenario_is_valid() {
        let (s, m) = two_track_scenario();
        assert!(validate_scenario(&s, &m).is_valid());
    }

    #[test]
    fn wrong_frame_count_is_reported() {
        let (mut s, m) = two_track_scenario();
        s.tracks[0].states.push(AgentState::invalid());
        let report = validate_scenario(&s, &m);
        assert!(report.violations.iter().any(|v| v.code == "frame-count"));
    }

    #[test]
    fn out_of_range_heading_is_reported() {
        let (mut s, m) = two_track_scenario();
        s.tracks[1].states[4].heading = 3.0 * PI / 2.0;
        let report = validate_scenario(&s, &m);
        let hit = report
            .violations
            .iter()
            .find(|v| v.code == "heading-range")
            .expect("heading violation");
        assert_eq!(hit.track_id, Some(1));
        assert_eq!(hit.frame, Some(4));
    }

    #[test]
    fn validation_is_idempotent_and_pure() {
        let (mut s, m) = two_track_scenario();
        s.tracks[0].states[20].heading = 9.0;
        let before = s.clone();
        let r1 = validate_scenario(&s, &m);
        let r2 = validate_scenario(&s, &m);
        assert_eq!(r1, r2);
        assert!(!r1.is_valid());
        assert_eq!(s, before);
    }

    #[test]
    fn nonfinite_state_reported() {
        let (mut s, m) = two_track_scenario();
        s.tracks[0].states[20].x = f64::NAN;
        let report = validate_scenario(&s, &m);
        assert!(report.violations.iter().any(|v| v.code == "nonfinite-state"));
    }

    #[test]
    fn displacement_bound_enforced() {
        let (mut s, m) = two_track_scenario();
        s.tracks[0].states[50].x += 100.0;
        let report = validate_scenario(&s, &m);
        assert!(report.violations.iter().any(|v| v.code == "displacement-bound"));
    }

    #[test]
    fn corrupted_scenarios_may_have_hollow_tracks() {
        let (mut s, m) = two_track_scenario();
        s.provenance = Provenance::Corrupted;
        for st in s.tracks[0].states.iter_mut() {
            st.valid = false;
        }
        assert!(validate_scenario(&s, &m).is_valid());
        s.provenance = Provenance::Clean;
        assert!(!validate_scenario(&s, &m).is_valid());
    }

    #[test]
    fn wrap_angle_range() {
        for &a in &[0.0, 3.0, -3.0, PI, -PI, 10.0, -10.0, 100.0, 3.0 * PI / 2.0] {
            let w = wrap_angle(a);
            assert!((-PI..PI).contains(&w), "wrap({}) = {}", a, w);
        }
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(0.5), 0.5);
        assert!((wrap_angle(3.0 * PI / 2.0) - (-PI / 2.0)).abs() < 1e-12);
    }
}
