//! Sim agents and the closed-loop rollout engine.
//!
//! Three agent families drive the 80-step future horizon: lane-keeping IDM
//! car-following, constant-speed extrapolation, and the learned next-token
//! policy. A replay "agent" that echoes the recorded future is included as
//! the metrics oracle. Rollouts preserve the input history frames verbatim.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    wrap_angle, AgentState, RoadMap, Scenario, FRAME_COUNT, FRAME_DT, HISTORY_END,
};
use crate::net::{self, PolicyParameters};
use crate::rng::StreamKey;
use crate::road;
use crate::tokenizer::{self, TokenVocab};

/// Intelligent Driver Model parameters. Serialized keys follow the customary
/// short names.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    #[serde(rename = "v0")]
    pub v0: f64,
    #[serde(rename = "T")]
    pub t_headway: f64,
    #[serde(rename = "a")]
    pub a: f64,
    #[serde(rename = "b")]
    pub b: f64,
    #[serde(rename = "s0")]
    pub s0: f64,
    #[serde(rename = "delta", default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    4.0
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            v0: 30.0,
            t_headway: 1.5,
            a: 1.0,
            b: 1.5,
            s0: 2.0,
            delta: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Lead {
    pub v_lead: f64,
    pub gap: f64,
}

/// IDM acceleration: a * (1 - (v/v0)^delta - (s*/s)^2) with
/// s* = s0 + v*T + v*dv / (2*sqrt(a*b)). No leader drops the interaction term.
pub fn idm_accel(v: f64, lead: Option<Lead>, p: &IdmParams) -> Result<f64> {
    let free = 1.0 - (v / p.v0).powf(p.delta);
    let interaction = match lead {
        None => 0.0,
        Some(l) => {
            if l.gap <= 0.0 {
                return Err(Error::NonpositiveGap { gap: l.gap });
            }
            let dv = v - l.v_lead;
            let s_star = p.s0 + v * p.t_headway + v * dv / (2.0 * (p.a * p.b).sqrt());
            (s_star / l.gap).powi(2)
        }
    };
    Ok(p.a * (free - interaction))
}

/// Net gap at which IDM holds speed v exactly (closed form, dv = 0).
pub fn idm_equilibrium_gap(v: f64, p: &IdmParams) -> f64 {
    (p.s0 + v * p.t_headway) / (1.0 - (v / p.v0).powf(p.delta)).sqrt()
}

/// Straight-line extrapolation at a fixed velocity; heading is preserved.
pub fn constant_speed_step(state: &AgentState, velocity: (f64, f64), dt: f64) -> AgentState {
    AgentState {
        x: state.x + velocity.0 * dt,
        y: state.y + velocity.1 * dt,
        z: state.z,
        heading: state.heading,
        valid: true,
    }
}

pub const MAX_NEIGHBORS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborFeature {
    pub rel_x: f64,
    pub rel_y: f64,
    pub rel_speed: f64,
    pub present: bool,
}

impl NeighborFeature {
    pub fn absent() -> Self {
        NeighborFeature {
            rel_x: 0.0,
            rel_y: 0.0,
            rel_speed: 0.0,
            present: false,
        }
    }
}

/// Fixed-size context fed to the learned policy: two history tokens, ego
/// kinematics, the eight nearest neighbors (ego-frame relative position and
/// speed, zero-padded with a presence flag), and two map features.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyContext {
    pub token_history: [usize; 2],
    pub speed: f64,
    pub heading_to_lane: f64,
    pub neighbors: [NeighborFeature; MAX_NEIGHBORS],
    pub lateral_offset: f64,
    pub edge_distance: f64,
}

/// Minimal per-agent state the context builder needs; works for both
/// recorded anchor frames (teacher forcing) and live simulation state.
#[derive(Clone, Copy, Debug)]
pub struct AgentSnapshot {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub present: bool,
}

pub fn build_context(
    snapshots: &[AgentSnapshot],
    ego: usize,
    token_history: [usize; 2],
    map: &RoadMap,
) -> Result<PolicyContext> {
    let me = &snapshots[ego];
    let (sin_h, cos_h) = me.heading.sin_cos();

    let mut others: Vec<(f64, usize)> = snapshots
        .iter()
        .enumerate()
        .filter(|(i, s)| *i != ego && s.present)
        .map(|(i, s)| {
            let d2 = (s.x - me.x).powi(2) + (s.y - me.y).powi(2);
            (d2, i)
        })
        .collect();
    others.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut neighbors = [NeighborFeature::absent(); MAX_NEIGHBORS];
    for (slot, &(_, i)) in others.iter().take(MAX_NEIGHBORS).enumerate() {
        let s = &snapshots[i];
        let (dx, dy) = (s.x - me.x, s.y - me.y);
        neighbors[slot] = NeighborFeature {
            rel_x: cos_h * dx + sin_h * dy,
            rel_y: -sin_h * dx + cos_h * dy,
            rel_speed: s.speed - me.speed,
            present: true,
        };
    }

    let frame = road::road_frame(map, me.x, me.y)?;
    let lane_dir = road::lane_direction(map, me.x, me.y)?;
    Ok(PolicyContext {
        token_history,
        speed: me.speed,
        heading_to_lane: wrap_angle(me.heading - lane_dir),
        neighbors,
        lateral_offset: frame.lateral_offset,
        edge_distance: road::edge_signed_distance(map, me.x, me.y)?,
    })
}

/// Logits of the learned policy for one context. Shape errors are reported
/// rather than panicking so callers can surface config mistakes.
pub fn policy_logits(params: &PolicyParameters, ctx: &PolicyContext) -> Result<Vec<f64>> {
    net::forward(params, ctx)
}

/// Draw a token. Temperature 0 is argmax with lowest-index tie-break.
pub fn sample_token(
    logits: &[f64],
    temperature: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> usize {
    use rand::Rng;
    if temperature <= 0.0 {
        let mut best = 0;
        for (i, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = i;
            }
        }
        return best;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u: f64 = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    logits.len() - 1
}

/// Which generative agent drives the rollout.
#[derive(Clone, Copy)]
pub enum RolloutPolicy<'a> {
    /// Echo the recorded future; metrics oracle.
    Replay,
    ConstantSpeed,
    Idm(&'a IdmParams),
    Learned {
        params: &'a PolicyParameters,
        vocab: &'a TokenVocab,
    },
}

impl RolloutPolicy<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            RolloutPolicy::Replay => "replay",
            RolloutPolicy::ConstantSpeed => "constant_speed",
            RolloutPolicy::Idm(_) => "idm",
            RolloutPolicy::Learned { .. } => "learned",
        }
    }
}

/// Last valid history frame and the velocity observed there.
fn history_anchor(track: &crate::model::AgentTrack) -> Result<(usize, AgentState, (f64, f64))> {
    let anchor = track
        .last_valid_history()
        .ok_or(Error::MissingHistory {
            agent_id: track.agent_id,
        })?;
    let state = track.states[anchor];
    let prev = (0..anchor).rev().find(|&i| track.states[i].valid);
    let vel = match prev {
        Some(p) => {
            let dt = (anchor - p) as f64 * FRAME_DT;
            (
                (state.x - track.states[p].x) / dt,
                (state.y - track.states[p].y) / dt,
            )
        }
        None => (0.0, 0.0),
    };
    Ok((anchor, state, vel))
}

/// Run K closed-loop rollouts of `policy` over the scenario's 80-step future.
/// Frames 0..=10 of each output equal the input exactly. Per-agent randomness
/// is keyed on (master_seed, rollout index, agent_id).
pub fn rollout(
    scenario: &Scenario,
    map: &RoadMap,
    policy: RolloutPolicy<'_>,
    k: usize,
    temperature: f64,
    master_seed: u64,
) -> Result<Vec<Scenario>> {
    let mut outputs = Vec::with_capacity(k);
    for r in 0..k {
        let sim = match policy {
            RolloutPolicy::Replay => scenario.clone(),
            RolloutPolicy::ConstantSpeed => rollout_constant(scenario)?,
            RolloutPolicy::Idm(p) => rollout_idm(scenario, map, p)?,
            RolloutPolicy::Learned { params, vocab } => {
                rollout_learned(scenario, map, params, vocab, temperature, master_seed, r)?
            }
        };
        outputs.push(sim);
    }
    Ok(outputs)
}

fn blank_future(scenario: &Scenario) -> Scenario {
    let mut out = scenario.clone();
    for track in out.tracks.iter_mut() {
        for f in HISTORY_END + 1..track.states.len() {
            track.states[f] = AgentState::invalid();
        }
    }
    out
}

fn rollout_constant(scenario: &Scenario) -> Result<Scenario> {
    let mut out = blank_future(scenario);
    for track in out.tracks.iter_mut() {
        let (anchor_idx, anchor, vel) = history_anchor(track)?;
        for f in HISTORY_END + 1..FRAME_COUNT.min(track.states.len()) {
            let dt = (f - anchor_idx) as f64 * FRAME_DT;
            track.states[f] = constant_speed_step(&anchor, vel, dt);
        }
    }
    Ok(out)
}

fn rollout_idm(scenario: &Scenario, map: &RoadMap, params: &IdmParams) -> Result<Scenario> {
    struct Sim {
        station: f64,
        speed: f64,
        lane: usize,
        origin: (f64, f64),
        origin_station: f64,
        dir: (f64, f64),
        heading: f64,
        z: f64,
        length: f64,
    }

    let mut out = blank_future(scenario);
    let mut sims = Vec::with_capacity(out.tracks.len());
    for track in &out.tracks {
        let (_, anchor, vel) = history_anchor(track)?;
        let frame = road::road_frame(map, anchor.x, anchor.y)?;
        let dir_angle = road::lane_direction(map, anchor.x, anchor.y)?;
        sims.push(Sim {
            station: frame.station,
            speed: (vel.0 * vel.0 + vel.1 * vel.1).sqrt(),
            lane: frame.lane_index,
            origin: (anchor.x, anchor.y),
            origin_station: frame.station,
            dir: (dir_angle.cos(), dir_angle.sin()),
            heading: wrap_angle(dir_angle),
            z: anchor.z,
            length: track.length,
        });
    }

    let substeps_per_frame = 10;
    let dt = FRAME_DT / substeps_per_frame as f64;
    for f in HISTORY_END + 1..FRAME_COUNT {
        for _ in 0..substeps_per_frame {
            let mut accels = vec![0.0; sims.len()];
            for (i, me) in sims.iter().enumerate() {
                let mut lead: Option<Lead> = None;
                for (j, other) in sims.iter().enumerate() {
                    if i == j || other.lane != me.lane || other.station <= me.station {
                        continue;
                    }
                    let gap = other.station - me.station - (me.length + other.length) / 2.0;
                    if lead.as_ref().is_none_or(|l| gap < l.gap) {
                        lead = Some(Lead {
                            v_lead: other.speed,
                            gap,
                        });
                    }
                }
                let lead = lead.map(|l| Lead {
                    v_lead: l.v_lead,
                    gap: l.gap.max(0.05),
                });
                accels[i] = idm_accel(me.speed, lead, params).expect("positive gap");
            }
            for (me, acc) in sims.iter_mut().zip(accels) {
                me.speed = (me.speed + acc * dt).max(0.0);
                me.station += me.speed * dt;
            }
        }
        for (track, me) in out.tracks.iter_mut().zip(&sims) {
            let advance = me.station - me.origin_station;
            track.states[f] = AgentState {
                x: me.origin.0 + me.dir.0 * advance,
                y: me.origin.1 + me.dir.1 * advance,
                z: me.z,
                heading: me.heading,
                valid: true,
            };
        }
    }
    Ok(out)
}

fn rollout_learned(
    scenario: &Scenario,
    map: &RoadMap,
    params: &PolicyParameters,
    vocab: &TokenVocab,
    temperature: f64,
    master_seed: u64,
    rollout_index: usize,
) -> Result<Scenario> {
    struct Sim {
        x: f64,
        y: f64,
        z: f64,
        heading: f64,
        speed: f64,
        tokens: [usize; 2],
        rng: rand_chacha::ChaCha8Rng,
    }

    let stride = vocab.frame_stride();
    let mut out = blank_future(scenario);
    let mut sims = Vec::with_capacity(out.tracks.len());
    for track in &out.tracks {
        // The learned agent conditions on tokenized history, so the history
        // anchor frames must all be valid.
        let anchors: Vec<usize> = (0..=HISTORY_END).step_by(stride).collect();
        if anchors.iter().any(|&a| !track.states[a].valid) {
            return Err(Error::MissingHistory {
                agent_id: track.agent_id,
            });
        }
        let deltas = tokenizer::anchor_deltas(&track.states, stride);
        let t0 = deltas[0].ok_or(Error::MissingHistory {
            agent_id: track.agent_id,
        })?;
        let t1 = deltas[1].ok_or(Error::MissingHistory {
            agent_id: track.agent_id,
        })?;
        let now = track.states[HISTORY_END];
        sims.push(Sim {
            x: now.x,
            y: now.y,
            z: now.z,
            heading: now.heading,
            speed: (t1.dx * t1.dx + t1.dy * t1.dy).sqrt() / vocab.token_period,
            tokens: [vocab.encode_delta(&t0), vocab.encode_delta(&t1)],
            rng: StreamKey::new(master_seed)
                .with_u64(rollout_index as u64)
                .with_u64(track.agent_id as u64)
                .rng(),
        });
    }

    let future_steps = (FRAME_COUNT - 1 - HISTORY_END) / stride;
    for step in 0..future_steps {
        // Contexts are built from every agent's state at the step start.
        let snapshots: Vec<AgentSnapshot> = sims
            .iter()
            .map(|s| AgentSnapshot {
                x: s.x,
                y: s.y,
                heading: s.heading,
                speed: s.speed,
                present: true,
            })
            .collect();
        for (i, track) in out.tracks.iter_mut().enumerate() {
            let ctx = build_context(&snapshots, i, sims[i].tokens, map)?;
            let logits = net::forward(params, &ctx)?;
            let token = sample_token(&logits, temperature, &mut sims[i].rng);
            let template = &vocab.templates[token];

            let start = AgentState {
                x: sims[i].x,
                y: sims[i].y,
                z: sims[i].z,
                heading: sims[i].heading,
                valid: true,
            };
            let frames = tokenizer::apply_template(&start, template, stride);
            let base = HISTORY_END + 1 + step * stride;
            for (off, st) in frames.iter().enumerate() {
                track.states[base + off] = *st;
            }
            let end = frames[stride - 1];
            let sim = &mut sims[i];
            sim.x = end.x;
            sim.y = end.y;
            sim.heading = end.heading;
            sim.speed = (template.dx * template.dx + template.dy * template.dy).sqrt()
                / vocab.token_period;
            sim.tokens = [sim.tokens[1], token];
        }
    }
    Ok(out)
}

/// Calibrate IDM by grid search: replay every observed leader-follower pair
/// with each candidate parameter set and keep the grid point with the lowest
/// mean squared speed-profile error. Ties go to the lowest grid index.
pub fn calibrate_idm(
    scenarios: &[(Scenario, std::sync::Arc<RoadMap>)],
    grid: &[IdmParams],
) -> Result<(usize, IdmParams, f64)> {
    struct PairSample {
        follower_station: f64,
        follower_speed: f64,
        leader_station: Vec<f64>,
        leader_speed: Vec<f64>,
        observed_speed: Vec<f64>,
        gap_offset: f64,
    }

    let mut pairs: Vec<PairSample> = Vec::new();
    for (scenario, map) in scenarios {
        // Per-frame (lane, station) for every valid state.
        let frames: Vec<Vec<Option<(usize, f64)>>> = scenario
            .tracks
            .iter()
            .map(|t| {
                t.states
                    .iter()
                    .map(|s| {
                        if s.valid {
                            road::road_frame(map, s.x, s.y)
                                .ok()
                                .map(|f| (f.lane_index, f.station))
                        } else {
                            None
                        }
                    })
                    .collect()
            })
            .collect();

        for i in 0..scenario.tracks.len() {
            // Find the single leader that stays directly ahead the longest.
            let mut counts = vec![0usize; scenario.tracks.len()];
            for f in 0..FRAME_COUNT {
                if let Some(leader) = direct_leader(&frames, i, f) {
                    counts[leader] += 1;
                }
            }
            let Some((j, &n)) = counts.iter().enumerate().max_by_key(|(_, &c)| c) else {
                continue;
            };
            if n < 60 {
                continue;
            }
            // Contiguous span where j is i's leader and speeds are observable.
            let usable: Vec<usize> = (1..FRAME_COUNT - 1)
                .filter(|&f| {
                    direct_leader(&frames, i, f) == Some(j)
                        && frames[i][f - 1].is_some()
                        && frames[i][f + 1].is_some()
                        && frames[j][f - 1].is_some()
                        && frames[j][f + 1].is_some()
                })
                .collect();
            if usable.len() < 40 {
                continue;
            }
            let speed_of = |t: usize, f: usize| {
                let s_prev = frames[t][f - 1].unwrap().1;
                let s_next = frames[t][f + 1].unwrap().1;
                (s_next - s_prev) / (2.0 * FRAME_DT)
            };
            let f0 = usable[0];
            pairs.push(PairSample {
                follower_station: frames[i][f0].unwrap().1,
                follower_speed: speed_of(i, f0),
                leader_station: usable.iter().map(|&f| frames[j][f].unwrap().1).collect(),
                leader_speed: usable.iter().map(|&f| speed_of(j, f)).collect(),
                observed_speed: usable.iter().map(|&f| speed_of(i, f)).collect(),
                gap_offset: (scenario.tracks[i].length + scenario.tracks[j].length) / 2.0,
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    if grid.is_empty() {
        return Err(Error::BadConfig {
            detail: "empty parameter grid".to_string(),
        });
    }

    let mut best: Option<(usize, f64)> = None;
    for (gi, params) in grid.iter().enumerate() {
        let mut sse = 0.0;
        let mut count = 0usize;
        for pair in &pairs {
            let mut station = pair.follower_station;
            let mut speed = pair.follower_speed.max(0.0);
            let substeps = 10;
            let dt = FRAME_DT / substeps as f64;
            for k in 0..pair.observed_speed.len() {
                sse += (speed - pair.observed_speed[k]).powi(2);
                count += 1;
                if k + 1 == pair.observed_speed.len() {
                    break;
                }
                for sub in 0..substeps {
                    let alpha = sub as f64 / substeps as f64;
                    let leader_station = pair.leader_station[k]
                        + alpha * (pair.leader_station[k + 1] - pair.leader_station[k]);
                    let leader_speed = pair.leader_speed[k]
                        + alpha * (pair.leader_speed[k + 1] - pair.leader_speed[k]);
                    let gap = (leader_station - station - pair.gap_offset).max(0.05);
                    let acc = idm_accel(
                        speed,
                        Some(Lead {
                            v_lead: leader_speed,
                            gap,
                        }),
                        params,
                    )
                    .expect("positive gap");
                    speed = (speed + acc * dt).max(0.0);
                    station += speed * dt;
                }
            }
        }
        let mse = sse / count.max(1) as f64;
        if best.is_none_or(|(_, b)| mse < b) {
            best = Some((gi, mse));
        }
    }
    let (gi, mse) = best.unwrap();
    Ok((gi, grid[gi], mse))
}

fn direct_leader(
    frames: &[Vec<Option<(usize, f64)>>],
    me: usize,
    f: usize,
) -> Option<usize> {
    let (lane, station) = frames[me][f]?;
    let mut best: Option<(usize, f64)> = None;
    for (j, track_frames) in frames.iter().enumerate() {
        if j == me {
            continue;
        }
        if let Some((l, s)) = track_frames[f] {
            if l == lane && s > station && best.is_none_or(|(_, bs)| s < bs) {
                best = Some((j, s));
            }
        }
    }
    best.map(|(j, _)| j)
}
