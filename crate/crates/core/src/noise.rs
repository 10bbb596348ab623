//! The observation corruption process: fragmentation, occlusion, dropout,
//! and jitter, applied in that fixed order to a clean scenario.
//!
//! Randomness is keyed per (seed, scenario_id, agent_id, stage) so a track's
//! corruption does not depend on which other tracks exist, and repeated runs
//! are byte-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_angle, AgentTrack, Provenance, Scenario, FRAME_COUNT, MAX_TRACKS};
use crate::rng::{sample_geometric, sample_normal, sample_poisson, StreamKey};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Gaussian position jitter, i.i.d. per frame per axis (meters).
    pub jitter_sigma_xy: f64,
    /// Gaussian heading jitter (radians).
    pub jitter_sigma_heading: f64,
    /// Probability per frame of an isolated missing frame.
    pub dropout_rate: f64,
    /// Expected contiguous occlusion events per track.
    pub occlusion_rate: f64,
    /// Mean occlusion length in frames (geometric).
    pub occlusion_mean_len: f64,
    /// Probability per track of splitting into two tracks with a fresh id.
    pub fragmentation_rate: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn zero(seed: u64) -> Self {
        NoiseConfig {
            jitter_sigma_xy: 0.0,
            jitter_sigma_heading: 0.0,
            dropout_rate: 0.0,
            occlusion_rate: 0.0,
            occlusion_mean_len: 1.0,
            fragmentation_rate: 0.0,
            seed,
        }
    }

    pub fn check(&self) -> Result<()> {
        let rates_ok = [self.dropout_rate, self.fragmentation_rate]
            .iter()
            .all(|r| (0.0..=1.0).contains(r));
        let sigmas_ok = self.jitter_sigma_xy >= 0.0
            && self.jitter_sigma_heading >= 0.0
            && self.occlusion_rate >= 0.0
            && self.occlusion_mean_len >= 1.0;
        if rates_ok && sigmas_ok {
            Ok(())
        } else {
            Err(Error::BadConfig {
                detail: "noise rates must be in [0,1] and sigmas >= 0".to_string(),
            })
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            jitter_sigma_xy: 0.15,
            jitter_sigma_heading: 0.02,
            dropout_rate: 0.03,
            occlusion_rate: 0.4,
            occlusion_mean_len: 8.0,
            fragmentation_rate: 0.15,
            seed: 0,
        }
    }
}

fn track_rng(
    config: &NoiseConfig,
    scenario_id: &str,
    agent_id: u32,
    stage: &str,
) -> rand_chacha::ChaCha8Rng {
    StreamKey::new(config.seed)
        .with_str(scenario_id)
        .with_u64(agent_id as u64)
        .with_str(stage)
        .rng()
}

/// Corrupt a clean scenario. Stages run fragmentation -> occlusion ->
/// dropout -> jitter; dropped frames become invalid, jitter only perturbs
/// coordinates of frames that survive.
pub fn corrupt(scenario: &Scenario, config: &NoiseConfig) -> Result<Scenario> {
    config.check()?;
    if scenario.provenance != Provenance::Clean {
        return Err(Error::DoubleCorruption {
            scenario_id: scenario.scenario_id.clone(),
        });
    }

    let mut out = scenario.clone();
    out.provenance = Provenance::Corrupted;

    // Fragmentation: split at a uniform frame, second half gets a fresh id
    // and is appended (so it comes later in listing order). Skipped when the
    // scenario is already at the track cap.
    let mut next_id = out.tracks.iter().map(|t| t.agent_id).max().map_or(0, |m| m + 1);
    let existing = out.tracks.len();
    let mut fragments: Vec<AgentTrack> = Vec::new();
    for track in out.tracks.iter_mut() {
        use rand::Rng;
        let mut rng = track_rng(config, &scenario.scenario_id, track.agent_id, "fragment");
        let roll: f64 = rng.random();
        if roll >= config.fragmentation_rate {
            continue;
        }
        if existing + fragments.len() >= MAX_TRACKS {
            continue;
        }
        let split = rng.random_range(1..FRAME_COUNT.min(track.states.len()));
        let mut second = track.clone();
        second.agent_id = next_id;
        next_id += 1;
        for f in split..track.states.len() {
            track.states[f].valid = false;
        }
        for f in 0..split {
            second.states[f].valid = false;
        }
        fragments.push(second);
    }
    out.tracks.extend(fragments);

    // Occlusion: Poisson event count, geometric lengths.
    for track in out.tracks.iter_mut() {
        let mut rng = track_rng(config, &scenario.scenario_id, track.agent_id, "occlusion");
        use rand::Rng;
        let events = sample_poisson(&mut rng, config.occlusion_rate);
        for _ in 0..events {
            let start = rng.random_range(0..track.states.len());
            let len = sample_geometric(&mut rng, config.occlusion_mean_len) as usize;
            for f in start..(start + len).min(track.states.len()) {
                track.states[f].valid = false;
            }
        }
    }

    // Dropout: isolated missing frames.
    if config.dropout_rate > 0.0 {
        for track in out.tracks.iter_mut() {
            let mut rng = track_rng(config, &scenario.scenario_id, track.agent_id, "dropout");
            use rand::Rng;
            for state in track.states.iter_mut() {
                if rng.random::<f64>() < config.dropout_rate {
                    state.valid = false;
                }
            }
        }
    }

    // Jitter: perturbs surviving coordinates, never touches the mask. Draws
    // are made for every frame so the stream does not depend on the mask.
    if config.jitter_sigma_xy > 0.0 || config.jitter_sigma_heading > 0.0 {
        for track in out.tracks.iter_mut() {
            let mut rng = track_rng(config, &scenario.scenario_id, track.agent_id, "jitter");
            for state in track.states.iter_mut() {
                let nx = sample_normal(&mut rng);
                let ny = sample_normal(&mut rng);
                let nh = sample_normal(&mut rng);
                if state.valid {
                    state.x += config.jitter_sigma_xy * nx;
                    state.y += config.jitter_sigma_xy * ny;
                    state.heading = wrap_angle(state.heading + config.jitter_sigma_heading * nh);
                }
            }
        }
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SplitTag;
    use crate::synth::{build_freeway_map, generate_scenario, SynthConfig};

    fn clean_scenario(seed: u64) -> Scenario {
        let cfg = SynthConfig {
            vehicle_target: 6,
            seed,
            ..SynthConfig::default()
        };
        let map = build_freeway_map(cfg.lanes, cfg.length, cfg.lane_width, "m");
        generate_scenario(&cfg, &map, &format!("n{}", seed)).unwrap()
    }

    #[test]
    fn zero_config_is_identity_up_to_provenance() {
        let s = clean_scenario(1);
        let out = corrupt(&s, &NoiseConfig::zero(9)).unwrap();
        assert_eq!(out.provenance, Provenance::Corrupted);
        assert_eq!(out.tracks, s.tracks);
        assert_eq!(out.scenario_id, s.scenario_id);
    }

    #[test]
    fn full_dropout_invalidates_everything() {
        let s = clean_scenario(2);
        let cfg = NoiseConfig {
            dropout_rate: 1.0,
            ..NoiseConfig::zero(3)
        };
        let out = corrupt(&s, &cfg).unwrap();
        for track in &out.tracks {
            assert!(track.states.iter().all(|st| !st.valid));
        }
    }

    #[test]
    fn double_corruption_rejected() {
        let s = clean_scenario(3);
        let once = corrupt(&s, &NoiseConfig::zero(0)).unwrap();
        let err = corrupt(&once, &NoiseConfig::zero(0)).unwrap_err();
        assert_eq!(err.code(), "double-corruption");
    }

    #[test]
    fn corruption_is_deterministic() {
        let s = clean_scenario(4);
        let cfg = NoiseConfig {
            seed: 17,
            ..NoiseConfig::default()
        };
        let a = corrupt(&s, &cfg).unwrap();
        let b = corrupt(&s, &cfg).unwrap();
        assert_eq!(a, b);
        let c = corrupt(&s, &NoiseConfig { seed: 18, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn monotone_degradation() {
        let s = clean_scenario(5);
        let clean_valid: usize = s.tracks.iter().map(|t| t.valid_frames()).sum();
        for seed in 0..5 {
            let cfg = NoiseConfig {
                seed,
                ..NoiseConfig::default()
            };
            let out = corrupt(&s, &cfg).unwrap();
            let noisy_valid: usize = out.tracks.iter().map(|t| t.valid_frames()).sum();
            assert!(noisy_valid <= clean_valid);
        }
    }

    #[test]
    fn jitter_preserves_mask_and_gaps_preserve_coords() {
        let s = clean_scenario(6);
        let jitter_only = NoiseConfig {
            jitter_sigma_xy: 0.2,
            jitter_sigma_heading: 0.05,
            ..NoiseConfig::zero(8)
        };
        let out = corrupt(&s, &jitter_only).unwrap();
        for (a, b) in out.tracks.iter().zip(&s.tracks) {
            for (sa, sb) in a.states.iter().zip(&b.states) {
                assert_eq!(sa.valid, sb.valid);
            }
        }

        let gaps_only = NoiseConfig {
            dropout_rate: 0.3,
            occlusion_rate: 0.5,
            occlusion_mean_len: 5.0,
            ..NoiseConfig::zero(8)
        };
        let out = corrupt(&s, &gaps_only).unwrap();
        for (a, b) in out.tracks.iter().zip(&s.tracks) {
            for (sa, sb) in a.states.iter().zip(&b.states) {
                if sa.valid {
                    assert_eq!((sa.x, sa.y, sa.heading), (sb.x, sb.y, sb.heading));
                }
            }
        }
    }

    #[test]
    fn dropout_fraction_tracks_rate() {
        let rate = 0.1;
        let cfg = NoiseConfig {
            dropout_rate: rate,
            ..NoiseConfig::zero(21)
        };
        let mut dropped = 0usize;
        let mut total = 0usize;
        for seed in 0..20 {
            let s = clean_scenario(100 + seed);
            let out = corrupt(&s, &cfg).unwrap();
            for (a, b) in out.tracks.iter().zip(&s.tracks) {
                for (sa, sb) in a.states.iter().zip(&b.states) {
                    if sb.valid {
                        total += 1;
                        if !sa.valid {
                            dropped += 1;
                        }
                    }
                }
            }
        }
        assert!(total >= 10_000, "need enough frames, got {}", total);
        let frac = dropped as f64 / total as f64;
        assert!((frac - rate).abs() < 0.02, "fraction {} vs rate {}", frac, rate);
    }

    #[test]
    fn jitter_std_matches_sigma() {
        let sigma = 0.1;
        let cfg = NoiseConfig {
            jitter_sigma_xy: sigma,
            ..NoiseConfig::zero(33)
        };
        let mut diffs: Vec<f64> = Vec::new();
        let mut seed = 0;
        while diffs.len() < 100_000 {
            let s = clean_scenario(200 + seed);
            seed += 1;
            let out = corrupt(&s, &cfg).unwrap();
            for (a, b) in out.tracks.iter().zip(&s.tracks) {
                for (sa, sb) in a.states.iter().zip(&b.states) {
                    if sa.valid {
                        diffs.push(sa.x - sb.x);
                        diffs.push(sa.y - sb.y);
                    }
                }
            }
        }
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
        assert!(
            (0.097..=0.103).contains(&std),
            "sample std {} for sigma {}",
            std,
            sigma
        );
    }

    #[test]
    fn fragmentation_splits_and_caps() {
        let s = clean_scenario(7);
        let n_before = s.tracks.len();
        let cfg = NoiseConfig {
            fragmentation_rate: 1.0,
            ..NoiseConfig::zero(2)
        };
        let out = corrupt(&s, &cfg).unwrap();
        assert_eq!(out.tracks.len(), (n_before * 2).min(MAX_TRACKS));
        // Ids stay unique and each split half hides the other's frames.
        let mut ids: Vec<u32> = out.tracks.iter().map(|t| t.agent_id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), out.tracks.len());
        for orig in &s.tracks {
            let halves: Vec<&AgentTrack> = out
                .tracks
                .iter()
                .filter(|t| {
                    t.states
                        .iter()
                        .zip(&orig.states)
                        .all(|(a, b)| !a.valid || (a.x, a.y) == (b.x, b.y))
                })
                .collect();
            let total_valid: usize = halves.iter().map(|t| t.valid_frames()).sum();
            assert_eq!(total_valid, orig.valid_frames(), "partition of frames");
        }
        // Test split must keep provenance clean; corruption flags it.
        let mut test_s = clean_scenario(8);
        test_s.split = SplitTag::Test;
        let corrupted = corrupt(&test_s, &cfg).unwrap();
        assert_eq!(corrupted.provenance, Provenance::Corrupted);
    }
}
