//! Browser demo: three interactive views over the core pipeline, each
//! returning an SVG string for the page to inject. All heavy lifting stays
//! in the core crate; this is a thin JSON-in / SVG-out shim.

use serde::Deserialize;
use wasm_bindgen::prelude::*;

use noisesim::cleaning::{clean, CleaningConfig};
use noisesim::model::Scenario;
use noisesim::noise::{corrupt, NoiseConfig};
use noisesim::policy::{rollout, IdmParams, RolloutPolicy};
use noisesim::report::scenario_svg;
use noisesim::synth::{build_freeway_map, generate_scenario, SynthConfig};

#[derive(Deserialize)]
struct DemoConfig {
    #[serde(default = "default_lanes")]
    lanes: usize,
    #[serde(default = "default_vehicles")]
    vehicles: usize,
    #[serde(default)]
    wave_mode: bool,
    #[serde(default = "default_lane_change")]
    lane_change_rate: f64,
    #[serde(default)]
    seed: u64,
}

fn default_lanes() -> usize {
    2
}
fn default_vehicles() -> usize {
    8
}
fn default_lane_change() -> f64 {
    0.05
}

fn build_world(cfg: &DemoConfig) -> noisesim::Result<(Scenario, noisesim::RoadMap)> {
    let synth = SynthConfig {
        lanes: cfg.lanes.clamp(1, 5),
        vehicle_target: cfg.vehicles.min(32),
        lane_change_rate: cfg.lane_change_rate.clamp(0.0, 1.0),
        wave_mode: cfg.wave_mode,
        seed: cfg.seed,
        ..SynthConfig::default()
    };
    let map = build_freeway_map(synth.lanes, synth.length, synth.lane_width, "demo");
    let scenario = generate_scenario(&synth, &map, "demo")?;
    Ok((scenario, map))
}

fn parse_config(json: &str) -> Result<DemoConfig, String> {
    serde_json::from_str(json).map_err(|e| format!("config: {}", e))
}

/// Clean ground-truth scenario for the given generator settings.
pub fn render_scenario(config_json: &str) -> Result<String, String> {
    let cfg = parse_config(config_json)?;
    let (scenario, map) = build_world(&cfg).map_err(|e| e.to_string())?;
    let title = format!(
        "clean ground truth | {} vehicles, {} lanes{}",
        scenario.tracks.len(),
        cfg.lanes,
        if cfg.wave_mode { ", wave mode" } else { "" }
    );
    Ok(scenario_svg(&scenario, &map, &title))
}

/// The same scenario after the observation-noise process, or after noise and
/// the cleaning filters, depending on `stage` ("corrupted" | "cleaned").
pub fn render_corruption(
    config_json: &str,
    noise_json: &str,
    stage: &str,
) -> Result<String, String> {
    let cfg = parse_config(config_json)?;
    let noise: NoiseConfig =
        serde_json::from_str(noise_json).map_err(|e| format!("noise config: {}", e))?;
    let (scenario, map) = build_world(&cfg).map_err(|e| e.to_string())?;
    let corrupted = corrupt(&scenario, &noise).map_err(|e| e.to_string())?;
    match stage {
        "corrupted" => {
            let valid: usize = corrupted.tracks.iter().map(|t| t.valid_frames()).sum();
            let total: usize = corrupted.tracks.iter().map(|t| t.states.len()).sum();
            let title = format!(
                "corrupted | {} tracks, {}/{} frames valid",
                corrupted.tracks.len(),
                valid,
                total
            );
            Ok(scenario_svg(&corrupted, &map, &title))
        }
        "cleaned" => {
            let cleaned = clean(&corrupted, &map, &CleaningConfig::default());
            let title = format!(
                "cleaned | {} of {} tracks retained",
                cleaned.tracks.len(),
                corrupted.tracks.len()
            );
            Ok(scenario_svg(&cleaned, &map, &title))
        }
        other => Err(format!("unknown stage '{}', expected corrupted|cleaned", other)),
    }
}

/// Closed-loop rollout of a baseline sim agent against the recorded future.
pub fn render_rollout(config_json: &str, policy: &str) -> Result<String, String> {
    let cfg = parse_config(config_json)?;
    let (scenario, map) = build_world(&cfg).map_err(|e| e.to_string())?;
    let pol = match policy {
        "idm" => RolloutPolicy::Idm(&IDM_DEFAULT),
        "const" => RolloutPolicy::ConstantSpeed,
        other => return Err(format!("unknown policy '{}', expected idm|const", other)),
    };
    let sims = rollout(&scenario, &map, pol, 1, 1.0, cfg.seed).map_err(|e| e.to_string())?;
    let ade = noisesim::metrics::min_ade(&sims, &scenario).map_err(|e| e.to_string())?;
    let title = format!("{} rollout | ADE {:.2} m against ground truth", policy, ade);
    Ok(scenario_svg(&sims[0], &map, &title))
}

static IDM_DEFAULT: IdmParams = IdmParams {
    v0: 30.0,
    t_headway: 1.5,
    a: 1.0,
    b: 1.5,
    s0: 2.0,
    delta: 4.0,
};

// --- wasm exports ------------------------------------------------------------

#[wasm_bindgen]
pub fn scenario_view(config_json: &str) -> Result<String, JsValue> {
    render_scenario(config_json).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn corruption_view(
    config_json: &str,
    noise_json: &str,
    stage: &str,
) -> Result<String, JsValue> {
    render_corruption(config_json, noise_json, stage).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn rollout_view(config_json: &str, policy: &str) -> Result<String, JsValue> {
    render_rollout(config_json, policy).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: &str = r#"{"lanes": 2, "vehicles": 6, "wave_mode": true, "seed": 3}"#;
    const NOISE: &str = r#"{"jitter_sigma_xy": 0.2, "jitter_sigma_heading": 0.02,
        "dropout_rate": 0.05, "occlusion_rate": 0.5, "occlusion_mean_len": 8.0,
        "fragmentation_rate": 0.3, "seed": 5}"#;

    #[test]
    fn scenario_view_renders() {
        let svg = render_scenario(CFG).unwrap();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>"));
        assert!(svg.contains("clean ground truth"));
    }

    #[test]
    fn corruption_view_renders_both_stages() {
        let corrupted = render_corruption(CFG, NOISE, "corrupted").unwrap();
        assert!(corrupted.contains("corrupted"));
        let cleaned = render_corruption(CFG, NOISE, "cleaned").unwrap();
        assert!(cleaned.contains("cleaned"));
        assert!(render_corruption(CFG, NOISE, "nope").is_err());
    }

    #[test]
    fn rollout_view_renders_baselines() {
        for policy in ["idm", "const"] {
            let svg = render_rollout(CFG, policy).unwrap();
            assert!(svg.contains("rollout"));
        }
        assert!(render_rollout(CFG, "learned").is_err());
    }

    #[test]
    fn bad_config_is_reported() {
        assert!(render_scenario("not json").is_err());
    }

    #[test]
    fn identical_seeds_render_identically() {
        assert_eq!(render_scenario(CFG).unwrap(), render_scenario(CFG).unwrap());
    }
}
