//! Deterministic generator of clean ground-truth freeway scenarios.
//!
//! Longitudinal motion is IDM car-following integrated at 100 Hz and sampled
//! to the 10 Hz frame grid. Each vehicle also carries a cruise cap toward its
//! own sampled desired speed, so platoons settle at the IDM equilibrium gap
//! behind a pace car instead of accelerating to the model's v0. Lane changes
//! are stochastic, gap-gated, and executed as a fixed 3-second sinusoidal
//! lateral blend. Wave mode oscillates each lane leader's desired speed to
//! trigger stop-and-go.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    wrap_angle, AgentState, AgentTrack, Polyline, PolylineKind, Provenance, RoadMap, Scenario,
    SplitTag, FRAME_COUNT,
};
use crate::policy::{idm_accel, IdmParams, Lead};
use crate::rng::StreamKey;

pub const VEHICLE_LENGTH: f64 = 4.5;
pub const VEHICLE_WIDTH: f64 = 1.8;

const SUBSTEP_DT: f64 = 0.01;
const SUBSTEPS_PER_FRAME: usize = 10;
const LANE_CHANGE_DURATION: f64 = 3.0;
const WAVE_PERIOD: f64 = 20.0;
const WAVE_AMPLITUDE: f64 = 0.4;
const PLACEMENT_MARGIN: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub lanes: usize,
    pub length: f64,
    #[serde(default = "default_lane_width")]
    pub lane_width: f64,
    pub vehicle_target: usize,
    pub desired_speed_range: (f64, f64),
    pub initial_gap_range: (f64, f64),
    pub lane_change_rate: f64,
    pub wave_mode: bool,
    pub idm: IdmParams,
    pub seed: u64,
}

fn default_lane_width() -> f64 {
    3.6
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            lanes: 2,
            length: 700.0,
            lane_width: 3.6,
            vehicle_target: 8,
            desired_speed_range: (16.0, 24.0),
            initial_gap_range: (18.0, 45.0),
            lane_change_rate: 0.02,
            wave_mode: false,
            idm: IdmParams::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<()> {
        let ok = self.lanes >= 1
            && self.length > 0.0
            && self.lane_width > 0.0
            && self.vehicle_target <= 32
            && self.desired_speed_range.0 <= self.desired_speed_range.1
            && self.desired_speed_range.0 > 0.0
            && self.initial_gap_range.0 <= self.initial_gap_range.1
            && self.initial_gap_range.0 >= 0.0
            && (0.0..=1.0).contains(&self.lane_change_rate);
        if ok {
            Ok(())
        } else {
            Err(Error::BadConfig {
                detail: "invalid synth config ranges".to_string(),
            })
        }
    }
}

/// Build a straight carriageway: `lanes` centerlines at y = i * lane_width,
/// dashed boundaries between lanes, solid boundaries and road edges at
/// y = -w/2 and y = (lanes - 1/2) * w. Points are spaced 10 m apart.
pub fn build_freeway_map(lanes: usize, length: f64, lane_width: f64, map_id: &str) -> RoadMap {
    let spacing = 10.0;
    let n_points = (length / spacing).ceil() as usize + 1;
    let line_at = |y: f64, kind: PolylineKind| Polyline {
        kind,
        points: (0..n_points)
            .map(|i| [(i as f64 * spacing).min(length), y, 0.0])
            .collect(),
    };

    let mut polylines = Vec::new();
    for i in 0..lanes {
        polylines.push(line_at(i as f64 * lane_width, PolylineKind::Centerline));
    }
    for i in 0..lanes.saturating_sub(1) {
        polylines.push(line_at(
            (i as f64 + 0.5) * lane_width,
            PolylineKind::BoundaryDashed,
        ));
    }
    let low = -lane_width / 2.0;
    let high = (lanes as f64 - 0.5) * lane_width;
    polylines.push(line_at(low, PolylineKind::BoundarySolid));
    polylines.push(line_at(high, PolylineKind::BoundarySolid));
    polylines.push(line_at(low, PolylineKind::RoadEdge));
    polylines.push(line_at(high, PolylineKind::RoadEdge));

    RoadMap {
        map_id: map_id.to_string(),
        nominal_lane_width: lane_width,
        polylines,
    }
}

struct Vehicle {
    id: u32,
    x: f64,
    v: f64,
    desired: f64,
    lane: usize,
    /// Set while a lateral blend is in progress.
    change: Option<LaneChange>,
    y: f64,
    heading: f64,
    /// True for the front-most vehicle of its initial lane.
    pace_car: bool,
    rng: rand_chacha::ChaCha8Rng,
}

struct LaneChange {
    y_from: f64,
    y_to: f64,
    started_at: f64,
}

fn lane_y(lane: usize, lane_width: f64) -> f64 {
    lane as f64 * lane_width
}

/// Generate one clean scenario. Deterministic in (config, map, scenario_id).
pub fn generate_scenario(
    config: &SynthConfig,
    map: &RoadMap,
    scenario_id: &str,
) -> Result<Scenario> {
    config.check()?;

    // Round-robin distribution of vehicles over lanes, then feasibility:
    // even the tightest packing must fit in the usable span.
    let mut per_lane = vec![0usize; config.lanes];
    for i in 0..config.vehicle_target {
        per_lane[i % config.lanes] += 1;
    }
    let usable = config.length - 2.0 * PLACEMENT_MARGIN;
    for (lane, &n) in per_lane.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let min_span =
            n as f64 * VEHICLE_LENGTH + (n as f64 - 1.0) * config.initial_gap_range.0;
        if min_span > usable {
            return Err(Error::Overcrowded {
                detail: format!(
                    "lane {} needs {:.1} m at minimum gaps, only {:.1} m usable",
                    lane, min_span, usable
                ),
            });
        }
    }

    let mut placement_rng = StreamKey::new(config.seed)
        .with_str("synth-placement")
        .with_str(scenario_id)
        .rng();

    // Wave scenarios start at a random point of the oscillation so the
    // recorded history can catch any phase of the slowdown.
    let wave_phase = if config.wave_mode {
        sample_range(&mut placement_rng, (0.0, std::f64::consts::TAU))
    } else {
        0.0
    };

    let mut vehicles: Vec<Vehicle> = Vec::with_capacity(config.vehicle_target);
    let mut next_id = 0u32;
    for (lane, &n) in per_lane.iter().enumerate() {
        if n == 0 {
            continue;
        }
        
        let speeds: Vec<f64> = (0..n)
            .map(|_| sample_range(&mut placement_rng, config.desired_speed_range))
            .collect();
        let mut gaps: Vec<f64> = (0..n.saturating_sub(1))
            .map(|_| sample_range(&mut placement_rng, config.initial_gap_range))
            .collect();
        // Rescale sampled gaps toward the minimum if the platoon would not fit.
        let span = |gaps: &[f64]| {
            n as f64 * VEHICLE_LENGTH + gaps.iter().sum::<f64>()
        };
        if span(&gaps) > usable {
            let min_gap = config.initial_gap_range.0;
            let excess: f64 = gaps.iter().map(|g| g - min_gap).sum();
            let budget = usable - n as f64 * VEHICLE_LENGTH - (n as f64 - 1.0) * min_gap;
            let alpha = if excess > 0.0 { (budget / excess).clamp(0.0, 1.0) } else { 0.0 };
            for g in gaps.iter_mut() {
                *g = min_gap + (*g - min_gap) * alpha;
            }
        }
        // Leader front, followers behind.
        let platoon = span(&gaps);
        let mut x = PLACEMENT_MARGIN + platoon - VEHICLE_LENGTH / 2.0;
        for k in 0..n {
            let veh_rng = StreamKey::new(config.seed)
                .with_str("synth-veh")
                .with_str(scenario_id)
                .with_u64(next_id as u64)
                .rng();
            vehicles.push(Vehicle {
                id: next_id,
                x,
                v: speeds[k],
                desired: speeds[k],
                lane,
                change: None,
                y: lane_y(lane, config.lane_width),
                heading: 0.0,
                pace_car: k == 0,
                rng: veh_rng,
            });
            next_id += 1;
            if k < n - 1 {
                x -= VEHICLE_LENGTH + gaps[k];
            }
            let _ = &mut placement_rng; // placement stream stays vehicle-count aligned
        }
    }

    let mut tracks: Vec<AgentTrack> = vehicles
        .iter()
        .map(|v| AgentTrack {
            agent_id: v.id,
            length: VEHICLE_LENGTH,
            width: VEHICLE_WIDTH,
            states: Vec::with_capacity(FRAME_COUNT),
        })
        .collect();

    let total_substeps = (FRAME_COUNT - 1) * SUBSTEPS_PER_FRAME;
    for step in 0..=total_substeps {
        let t = step as f64 * SUBSTEP_DT;

        if step % SUBSTEPS_PER_FRAME == 0 {
            record_frame(&mut tracks, &vehicles);
            if step == total_substeps {
                break;
            }
            decide_lane_changes(&mut vehicles, config, t);
        }

        step_dynamics(&mut vehicles, config, wave_phase, t);
        apply_lateral(&mut vehicles, config, t + SUBSTEP_DT);
    }

    Ok(Scenario {
        scenario_id: scenario_id.to_string(),
        map_id: map.map_id.clone(),
        split: SplitTag::Train,
        provenance: Provenance::Clean,
        tracks,
    })
}

fn sample_range(rng: &mut rand_chacha::ChaCha8Rng, range: (f64, f64)) -> f64 {
    use rand::Rng;
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

fn record_frame(tracks: &mut [AgentTrack], vehicles: &[Vehicle]) {
    for (track, v) in tracks.iter_mut().zip(vehicles) {
        track.states.push(AgentState {
            x: v.x,
            y: v.y,
            z: 0.0,
            heading: wrap_angle(v.heading),
            valid: true,
        });
    }
}

/// One 100 Hz explicit-Euler step of the longitudinal dynamics.
fn step_dynamics(vehicles: &mut [Vehicle], config: &SynthConfig, wave_phase: f64, t: f64) {
    let n = vehicles.len();
    let mut accels = vec![0.0; n];
    for i in 0..n {
        let me = &vehicles[i];
        // Nearest same-lane vehicle ahead.
        let mut lead: Option<Lead> = None;
        for j in 0..n {
            if j == i || vehicles[j].lane != me.lane || vehicles[j].x <= me.x {
                continue;
            }
            let gap = vehicles[j].x - me.x - VEHICLE_LENGTH;
            if lead.as_ref().is_none_or(|l| gap < l.gap) {
                lead = Some(Lead {
                    v_lead: vehicles[j].v,
                    gap,
                });
            }
        }
        let lead = lead.map(|l| Lead {
            v_lead: l.v_lead,
            gap: l.gap.max(0.05),
        });
        let car_following = idm_accel(me.v, lead, &config.idm).expect("positive gap");

        let desired = effective_desired_speed(me, config, wave_phase, t).max(0.1);
        let cruise = config.idm.a * (1.0 - (me.v / desired).powf(config.idm.delta));

        accels[i] = car_following.min(cruise);
    }
    for (veh, acc) in vehicles.iter_mut().zip(accels) {
        veh.v = (veh.v + acc * SUBSTEP_DT).max(0.0);
        veh.x += veh.v * SUBSTEP_DT;
    }
}

fn effective_desired_speed(v: &Vehicle, config: &SynthConfig, wave_phase: f64, t: f64) -> f64 {
    if config.wave_mode && v.pace_car {
        // Dip from the desired speed down to (1 - amplitude) of it and back.
        let half = WAVE_AMPLITUDE / 2.0;
        let cycle = (std::f64::consts::TAU * t / WAVE_PERIOD + wave_phase).cos();
        v.desired * (1.0 - half + half * cycle)
    } else {
        v.desired
    }
}

/// Lane-change decisions run on the 10 Hz grid so each vehicle consumes one
/// trigger draw per frame regardless of outcome.
fn decide_lane_changes(vehicles: &mut [Vehicle], config: &SynthConfig, t: f64) {
    use rand::Rng;
    let n = vehicles.len();
    let snapshot: Vec<(f64, f64, usize)> = vehicles.iter().map(|v| (v.x, v.v, v.lane)).collect();
    for i in 0..n {
        let trigger: f64 = vehicles[i].rng.random();
        if vehicles[i].change.is_some() || config.lanes < 2 {
            continue;
        }
        if trigger >= config.lane_change_rate * 0.1 {
            continue;
        }
        let lane = vehicles[i].lane;
        let mut options: Vec<usize> = Vec::new();
        if lane > 0 {
            options.push(lane - 1);
        }
        if lane + 1 < config.lanes {
            options.push(lane + 1);
        }
        let target = if options.len() == 1 {
            options[0]
        } else {
            options[vehicles[i].rng.random_range(0..options.len())]
        };

        // Gap acceptance in the target lane.
        let me_x = vehicles[i].x;
        let me_v = vehicles[i].v;
        let mut ok = true;
        for (j, &(x, v, l)) in snapshot.iter().enumerate() {
            if j == i || l != target {
                continue;
            }
            if x >= me_x {
                let lead_gap = x - me_x - VEHICLE_LENGTH;
                if lead_gap < config.idm.s0 + me_v * config.idm.t_headway {
                    ok = false;
                    break;
                }
            } else {
                let lag_gap = me_x - x - VEHICLE_LENGTH;
                if lag_gap < config.idm.s0 + v * config.idm.t_headway {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }

        let y_from = vehicles[i].y;
        vehicles[i].change = Some(LaneChange {
            y_from,
            y_to: lane_y(target, config.lane_width),
            started_at: t,
        });
        vehicles[i].lane = target;
        vehicles[i].pace_car = false;
    }
}

/// Update lateral position and heading from the active blend, if any.
fn apply_lateral(vehicles: &mut [Vehicle], _config: &SynthConfig, t: f64) {
    for v in vehicles.iter_mut() {
        let mut done = false;
        if let Some(ch) = &v.change {
            let tau = ((t - ch.started_at) / LANE_CHANGE_DURATION).clamp(0.0, 1.0);
            let blend = 0.5 * (1.0 - (std::f64::consts::PI * tau).cos());
            v.y = ch.y_from + (ch.y_to - ch.y_from) * blend;
            let dy_dt = (ch.y_to - ch.y_from) * 0.5 * std::f64::consts::PI
                / LANE_CHANGE_DURATION
                * (std::f64::consts::PI * tau).sin();
            v.heading = dy_dt.atan2(v.v.max(0.5));
            if tau >= 1.0 {
                v.y = ch.y_to;
                v.heading = 0.0;
                done = true;
            }
        } else {
            v.heading = 0.0;
        }
        if done {
            v.change = None;
        }
    }
}
