//! Second-stage postprocessing: deterministic filters that drop whole tracks
//! and never edit coordinates. Order is fixed: off-road, steep lateral,
//! short, overlaps. The composite is idempotent.

use serde::{Deserialize, Serialize};

use crate::model::{Provenance, RoadMap, Scenario};
use crate::road;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleaningConfig {
    /// A track is dropped when more than `max_lateral` meters of lateral
    /// displacement happen within `window_longitudinal` meters of travel.
    #[serde(default = "default_max_lateral")]
    pub max_lateral: f64,
    #[serde(default = "default_window")]
    pub window_longitudinal: f64,
    /// Minimum number of valid frames a track must keep.
    #[serde(default = "default_min_frames")]
    pub min_track_frames: usize,
}

fn default_max_lateral() -> f64 {
    7.2
}
fn default_window() -> f64 {
    15.0
}
fn default_min_frames() -> usize {
    10
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            max_lateral: default_max_lateral(),
            window_longitudinal: default_window(),
            min_track_frames: default_min_frames(),
        }
    }
}

fn retain_tracks(scenario: &Scenario, keep: impl Fn(usize) -> bool) -> Scenario {
    let mut out = scenario.clone();
    let mut idx = 0;
    out.tracks.retain(|_| {
        let k = keep(idx);
        idx += 1;
        k
    });
    out
}

/// Remove tracks whose every valid state lies off-road. Tracks that graze
/// the road edge keep at least one on-road state and survive. Tracks with no
/// valid states at all are left for the short filter.
pub fn filter_offroad(scenario: &Scenario, map: &RoadMap) -> Scenario {
    let fully_offroad: Vec<bool> = scenario
        .tracks
        .iter()
        .map(|t| {
            let mut any_valid = false;
            for s in t.states.iter().filter(|s| s.valid) {
                any_valid = true;
                match road::is_offroad(map, s.x, s.y) {
                    Ok(true) => {}
                    _ => return false,
                }
            }
            any_valid
        })
        .collect();
    retain_tracks(scenario, |i| !fully_offroad[i])
}

/// Remove tracks with more than `max_lateral` m of lateral displacement
/// inside any window of at most `window_longitudinal` m of longitudinal
/// travel. Lateral and station are measured against the first road edge so
/// the reference line does not jump between lanes.
pub fn filter_steep_lateral(
    scenario: &Scenario,
    map: &RoadMap,
    config: &CleaningConfig,
) -> Scenario {
    let Some(reference) = map.road_edges().next() else {
        return scenario.clone();
    };
    let steep: Vec<bool> = scenario
        .tracks
        .iter()
        .map(|t| {
            let frames: Vec<(f64, f64)> = t
                .states
                .iter()
                .filter(|s| s.valid)
                .filter_map(|s| {
                    road::project_point(reference, s.x, s.y)
                        .ok()
                        .map(|p| (p.station, p.lateral))
                })
                .collect();
            for i in 0..frames.len() {
                for j in i + 1..frames.len() {
                    let d_station = (frames[j].0 - frames[i].0).abs();
                    if d_station > config.window_longitudinal {
                        continue;
                    }
                    if (frames[j].1 - frames[i].1).abs() > config.max_lateral {
                        return true;
                    }
                }
            }
            false
        })
        .collect();
    retain_tracks(scenario, |i| !steep[i])
}

/// Remove tracks with fewer than `min_track_frames` valid frames.
pub fn filter_short(scenario: &Scenario, config: &CleaningConfig) -> Scenario {
    let short: Vec<bool> = scenario
        .tracks
        .iter()
        .map(|t| t.valid_frames() < config.min_track_frames)
        .collect();
    retain_tracks(scenario, |i| !short[i])
}

/// Resolve physically impossible overlaps. Scanning pairs in listing order,
/// when two surviving tracks come within max(length_i, length_j) of each
/// other at any shared valid frame the later-listed one is removed.
pub fn resolve_overlaps(scenario: &Scenario) -> Scenario {
    let n = scenario.tracks.len();
    let mut removed = vec![false; n];
    for i in 0..n {
        if removed[i] {
            continue;
        }
        for j in i + 1..n {
            if removed[j] {
                continue;
            }
            let (a, b) = (&scenario.tracks[i], &scenario.tracks[j]);
            let threshold = a.length.max(b.length);
            let overlapping = a.states.iter().zip(&b.states).any(|(sa, sb)| {
                sa.valid
                    && sb.valid
                    && ((sa.x - sb.x).powi(2) + (sa.y - sb.y).powi(2)).sqrt() < threshold
            });
            if overlapping {
                removed[j] = true;
            }
        }
    }
    retain_tracks(scenario, |i| !removed[i])
}

/// The full pipeline: off-road, steep lateral, short, overlaps.
pub fn clean(scenario: &Scenario, map: &RoadMap, config: &CleaningConfig) -> Scenario {
    let s = filter_offroad(scenario, map);
    let s = filter_steep_lateral(&s, map, config);
    let s = filter_short(&s, config);
    let mut s = resolve_overlaps(&s);
    s.provenance = Provenance::Cleaned;
    s
}
