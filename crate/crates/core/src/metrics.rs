//! Sim-Agents-style scoring. Each component feature is pooled over rollouts
//! into a Laplace-smoothed histogram; the score of a component is the
//! exponentiated mean log-likelihood of the ground-truth values under that
//! histogram, so every score lands in (0, 1]. Composites average their
//! components, realism averages the three composites, and minADE is the
//! usual best-of-K displacement error.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_angle, RoadMap, Scenario, FRAME_COUNT, FRAME_DT, HISTORY_END};
use crate::policy::{rollout, RolloutPolicy};
use crate::road;
use crate::rng::StreamKey;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl BinSpec {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        BinSpec { lo, hi, bins }
    }

    /// Bin index with out-of-range values clamped to the edge bins.
    pub fn bin(&self, x: f64) -> usize {
        if x <= self.lo {
            return 0;
        }
        if x >= self.hi {
            return self.bins - 1;
        }
        let w = (self.hi - self.lo) / self.bins as f64;
        (((x - self.lo) / w) as usize).min(self.bins - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    #[serde(default = "default_k")]
    pub k_rollouts: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_laplace")]
    pub laplace: f64,
    #[serde(default = "default_speed_bins")]
    pub speed: BinSpec,
    #[serde(default = "default_accel_bins")]
    pub accel: BinSpec,
    #[serde(default = "default_angular_bins")]
    pub angular_speed: BinSpec,
    #[serde(default = "default_distance_bins")]
    pub nearest_distance: BinSpec,
    #[serde(default = "default_edge_bins")]
    pub edge_distance: BinSpec,
    #[serde(default = "default_indicator_bins")]
    pub collision: BinSpec,
    #[serde(default = "default_indicator_bins")]
    pub offroad: BinSpec,
}

fn default_k() -> usize {
    32
}
fn default_temperature() -> f64 {
    1.0
}
fn default_laplace() -> f64 {
    0.1
}
fn default_speed_bins() -> BinSpec {
    BinSpec::new(0.0, 50.0, 50)
}
fn default_accel_bins() -> BinSpec {
    BinSpec::new(0.0, 10.0, 40)
}
fn default_angular_bins() -> BinSpec {
    BinSpec::new(-1.0, 1.0, 40)
}
fn default_distance_bins() -> BinSpec {
    BinSpec::new(0.0, 100.0, 50)
}
fn default_edge_bins() -> BinSpec {
    BinSpec::new(-10.0, 10.0, 40)
}
fn default_indicator_bins() -> BinSpec {
    BinSpec::new(0.0, 1.0, 2)
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            k_rollouts: default_k(),
            temperature: default_temperature(),
            laplace: default_laplace(),
            speed: default_speed_bins(),
            accel: default_accel_bins(),
            angular_speed: default_angular_bins(),
            nearest_distance: default_distance_bins(),
            edge_distance: default_edge_bins(),
            collision: default_indicator_bins(),
            offroad: default_indicator_bins(),
        }
    }
}

/// Per-agent-per-frame feature pools over the future horizon.
#[derive(Clone, Debug, Default)]
pub struct FeatureTable {
    pub speed: Vec<f64>,
    pub accel: Vec<f64>,
    pub angular_speed: Vec<f64>,
    pub nearest_distance: Vec<f64>,
    pub collision: Vec<f64>,
    pub edge_distance: Vec<f64>,
    pub offroad: Vec<f64>,
}

impl FeatureTable {
    pub fn extend(&mut self, other: &FeatureTable) {
        self.speed.extend_from_slice(&other.speed);
        self.accel.extend_from_slice(&other.accel);
        self.angular_speed.extend_from_slice(&other.angular_speed);
        self.nearest_distance
            .extend_from_slice(&other.nearest_distance);
        self.collision.extend_from_slice(&other.collision);
        self.edge_distance.extend_from_slice(&other.edge_distance);
        self.offroad.extend_from_slice(&other.offroad);
    }
}

/// Extract behavior features from the future frames of a scenario. Speed is
/// a central difference, acceleration magnitude a central second difference,
/// angular speed the wrapped one-frame heading difference. Invalid frames
/// drop out of every pool they touch.
pub fn component_features(scenario: &Scenario, map: &RoadMap) -> Result<FeatureTable> {
    let mut table = FeatureTable::default();
    let n_tracks = scenario.tracks.len();
    for (ti, track) in scenario.tracks.iter().enumerate() {
        for f in HISTORY_END + 1..FRAME_COUNT.min(track.states.len()) {
            let cur = &track.states[f];
            let prev = (f >= 1).then(|| &track.states[f - 1]).filter(|s| s.valid);
            let next = track.states.get(f + 1).filter(|s| s.valid);

            if let (Some(p), Some(n)) = (prev, next) {
                let v = ((n.x - p.x).powi(2) + (n.y - p.y).powi(2)).sqrt() / (2.0 * FRAME_DT);
                table.speed.push(v);
                if cur.valid {
                    let ax = (n.x - 2.0 * cur.x + p.x) / (FRAME_DT * FRAME_DT);
                    let ay = (n.y - 2.0 * cur.y + p.y) / (FRAME_DT * FRAME_DT);
                    table.accel.push((ax * ax + ay * ay).sqrt());
                }
            }
            if cur.valid {
                if let Some(n) = next {
                    table
                        .angular_speed
                        .push(wrap_angle(n.heading - cur.heading) / FRAME_DT);
                }

                let mut nearest: Option<f64> = None;
                let mut collided = false;
                for (tj, other) in scenario.tracks.iter().enumerate() {
                    if ti == tj {
                        continue;
                    }
                    let Some(os) = other.states.get(f).filter(|s| s.valid) else {
                        continue;
                    };
                    let d = ((cur.x - os.x).powi(2) + (cur.y - os.y).powi(2)).sqrt();
                    if nearest.is_none_or(|b| d < b) {
                        nearest = Some(d);
                    }
                    if d < track.length.max(other.length) {
                        collided = true;
                    }
                }
                if n_tracks > 1 {
                    if let Some(d) = nearest {
                        table.nearest_distance.push(d);
                        table.collision.push(if collided { 1.0 } else { 0.0 });
                    }
                }

                table
                    .edge_distance
                    .push(road::edge_signed_distance(map, cur.x, cur.y)?);
                table
                    .offroad
                    .push(if road::is_offroad(map, cur.x, cur.y)? { 1.0 } else { 0.0 });
            }
        }
    }
    Ok(table)
}

/// Likelihood of ground-truth values under the Laplace-smoothed histogram
/// induced by simulated values: exp(mean over gt of ln p(bin)).
pub fn histogram_likelihood(
    sim_values: &[f64],
    gt_values: &[f64],
    spec: &BinSpec,
    laplace: f64,
) -> Result<f64> {
    if sim_values.is_empty() {
        return Err(Error::NoSimValues);
    }
    if gt_values.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let mut counts = vec![0usize; spec.bins];
    for &x in sim_values {
        counts[spec.bin(x)] += 1;
    }
    let n = sim_values.len() as f64;
    let denom = n + laplace * spec.bins as f64;
    // Bin the ground truth too, then accumulate per bin: the sum order is
    // fixed, which makes the score exactly permutation-invariant.
    let mut gt_counts = vec![0usize; spec.bins];
    for &x in gt_values {
        gt_counts[spec.bin(x)] += 1;
    }
    let mut log_sum = 0.0;
    for (b, &gc) in gt_counts.iter().enumerate() {
        if gc > 0 {
            let p = (counts[b] as f64 + laplace) / denom;
            log_sum += gc as f64 * p.ln();
        }
    }
    Ok((log_sum / gt_values.len() as f64).exp())
}

/// Minimum over rollouts of the mean displacement against ground truth over
/// shared agents and shared valid future frames. Ids present on only one
/// side (fragmentation orphans) are excluded from the pairing.
pub fn min_ade(rollouts: &[Scenario], gt: &Scenario) -> Result<f64> {
    let mut best: Option<f64> = None;
    for sim in rollouts {
        let mut total = 0.0;
        let mut count = 0usize;
        for gt_track in &gt.tracks {
            let Some(sim_track) = sim.tracks.iter().find(|t| t.agent_id == gt_track.agent_id)
            else {
                continue;
            };
            for f in HISTORY_END + 1..FRAME_COUNT.min(gt_track.states.len()) {
                let (g, s) = (&gt_track.states[f], &sim_track.states[f]);
                if g.valid && s.valid {
                    total += ((g.x - s.x).powi(2) + (g.y - s.y).powi(2)).sqrt();
                    count += 1;
                }
            }
        }
        if count == 0 {
            continue;
        }
        let ade = total / count as f64;
        if best.is_none_or(|b| ade < b) {
            best = Some(ade);
        }
    }
    best.ok_or(Error::NoOverlap)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub speed: Option<f64>,
    pub accel: Option<f64>,
    pub angular_speed: Option<f64>,
    pub nearest_distance: Option<f64>,
    pub collision: Option<f64>,
    pub edge_distance: Option<f64>,
    pub offroad: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub scenario_id: String,
    pub realism: f64,
    pub kinematic: f64,
    pub interactive: f64,
    pub map_based: f64,
    pub min_ade: f64,
    pub components: ComponentScores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub k_rollouts: usize,
    pub temperature: f64,
    pub seed: u64,
    pub scenario_count: usize,
    pub realism: f64,
    pub kinematic: f64,
    pub interactive: f64,
    pub map_based: f64,
    pub min_ade: f64,
    pub per_scenario: Vec<ScenarioScore>,
}

impl MetricsReport {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<MetricsReport> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::CorruptCorpus {
            detail: format!("metrics report {}: {}", path.display(), e),
        })
    }
}

fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Score one policy over a set of scenarios. Per scenario: K rollouts, the
/// pooled simulated features induce every component likelihood against the
/// ground-truth features, composites average components, and realism
/// averages the three composites.
pub fn evaluate(
    scenarios: &[(Scenario, Arc<RoadMap>)],
    policy: RolloutPolicy<'_>,
    config: &MetricsConfig,
    seed: u64,
) -> Result<MetricsReport> {
    if scenarios.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut per_scenario = Vec::with_capacity(scenarios.len());
    for (scenario, map) in scenarios {
        let score = evaluate_scenario(scenario, map, policy, config, seed)
            .map_err(|e| Error::CorruptCorpus {
                detail: format!("scenario '{}': {}", scenario.scenario_id, e),
            })?;
        per_scenario.push(score);
    }

    Ok(aggregate_report(policy.name(), config, seed, per_scenario))
}

/// Mean per-scenario scores into a corpus-level report.
pub fn aggregate_report(
    policy_name: &str,
    config: &MetricsConfig,
    seed: u64,
    per_scenario: Vec<ScenarioScore>,
) -> MetricsReport {
    let n = per_scenario.len() as f64;
    let mean = |f: fn(&ScenarioScore) -> f64| per_scenario.iter().map(f).sum::<f64>() / n;
    MetricsReport {
        policy: policy_name.to_string(),
        k_rollouts: config.k_rollouts,
        temperature: config.temperature,
        seed,
        scenario_count: per_scenario.len(),
        realism: mean(|s| s.realism),
        kinematic: mean(|s| s.kinematic),
        interactive: mean(|s| s.interactive),
        map_based: mean(|s| s.map_based),
        min_ade: mean(|s| s.min_ade),
        per_scenario,
    }
}

pub fn evaluate_scenario(
    scenario: &Scenario,
    map: &RoadMap,
    policy: RolloutPolicy<'_>,
    config: &MetricsConfig,
    seed: u64,
) -> Result<ScenarioScore> {
    let rollout_seed = StreamKey::new(seed)
        .with_str("eval")
        .with_str(&scenario.scenario_id)
        .value();
    let rollouts = rollout(
        scenario,
        map,
        policy,
        config.k_rollouts,
        config.temperature,
        rollout_seed,
    )?;

    let gt = component_features(scenario, map)?;
    let mut sim = FeatureTable::default();
    for r in &rollouts {
        sim.extend(&component_features(r, map)?);
    }

    let score_of = |sim_vals: &[f64], gt_vals: &[f64], spec: &BinSpec| -> Result<Option<f64>> {
        if gt_vals.is_empty() || sim_vals.is_empty() {
            return Ok(None);
        }
        histogram_likelihood(sim_vals, gt_vals, spec, config.laplace).map(Some)
    };

    let components = ComponentScores {
        speed: score_of(&sim.speed, &gt.speed, &config.speed)?,
        accel: score_of(&sim.accel, &gt.accel, &config.accel)?,
        angular_speed: score_of(&sim.angular_speed, &gt.angular_speed, &config.angular_speed)?,
        nearest_distance: score_of(
            &sim.nearest_distance,
            &gt.nearest_distance,
            &config.nearest_distance,
        )?,
        collision: score_of(&sim.collision, &gt.collision, &config.collision)?,
        edge_distance: score_of(&sim.edge_distance, &gt.edge_distance, &config.edge_distance)?,
        offroad: score_of(&sim.offroad, &gt.offroad, &config.offroad)?,
    };

    let kinematic = mean_of(&[components.speed, components.accel, components.angular_speed])
        .unwrap_or(0.0);
    let interactive =
        mean_of(&[components.nearest_distance, components.collision]).unwrap_or(0.0);
    let map_based = mean_of(&[components.edge_distance, components.offroad]).unwrap_or(0.0);
    let realism = (kinematic + interactive + map_based) / 3.0;

    Ok(ScenarioScore {
        scenario_id: scenario.scenario_id.clone(),
        realism,
        kinematic,
        interactive,
        map_based,
        min_ade: min_ade(&rollouts, scenario)?,
        components,
    })
}
