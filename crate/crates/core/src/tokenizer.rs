//! Motion tokenization: agent-frame displacement extraction over one token
//! period and the greedy disk-cover vocabulary that discretizes it.
//!
//! The delta metric is euclidean position distance plus a weighted absolute
//! heading difference. A template set built here covers every input delta
//! within `coverage_radius`, which is what bounds per-step reconstruction
//! error after encode/decode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_angle, AgentState, AgentTrack, FRAME_DT};
use crate::rng::StreamKey;

/// Displacement over one token period, expressed in the agent frame at the
/// period start: dx forward, dy left, dheading wrapped to [-pi, pi).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionDelta {
    pub dx: f64,
    pub dy: f64,
    pub dheading: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenVocab {
    pub templates: Vec<MotionDelta>,
    /// Every delta seen at build time lies within this metric radius of a
    /// template.
    pub coverage_radius: f64,
    /// Heading weight of the delta metric, meters per radian.
    pub w_h: f64,
    /// Token period in seconds; must be a multiple of the 0.1 s frame step.
    pub token_period: f64,
    pub seed: u64,
    /// How many times epsilon was doubled before the cover fit in the budget.
    pub epsilon_doublings: u32,
}

pub const DEFAULT_VOCAB_SIZE: usize = 512;
pub const DEFAULT_EPSILON: f64 = 0.25;
pub const DEFAULT_HEADING_WEIGHT: f64 = 1.0;
pub const DEFAULT_TOKEN_PERIOD: f64 = 0.5;

pub fn delta_distance(a: &MotionDelta, b: &MotionDelta, w_h: f64) -> f64 {
    let dx = a.dx - b.dx;
    let dy = a.dy - b.dy;
    (dx * dx + dy * dy).sqrt() + w_h * wrap_angle(a.dheading - b.dheading).abs()
}

impl TokenVocab {
    /// Frames per token period.
    pub fn frame_stride(&self) -> usize {
        (self.token_period / FRAME_DT).round() as usize
    }

    /// Nearest template index under the delta metric; ties break low.
    pub fn encode_delta(&self, delta: &MotionDelta) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, t) in self.templates.iter().enumerate() {
            let d = delta_distance(delta, t, self.w_h);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Stable content hash used to tie checkpoints to the vocab they were
    /// trained with.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("vocab serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{:016x}", h)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("vocab serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<TokenVocab> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::CorruptCorpus {
            detail: format!("vocab {}: {}", path.display(), e),
        })
    }
}

/// Agent-frame delta between two states.
pub fn state_delta(from: &AgentState, to: &AgentState) -> MotionDelta {
    let (sin_h, cos_h) = from.heading.sin_cos();
    let wx = to.x - from.x;
    let wy = to.y - from.y;
    MotionDelta {
        dx: cos_h * wx + sin_h * wy,
        dy: -sin_h * wx + cos_h * wy,
        dheading: wrap_angle(to.heading - from.heading),
    }
}

/// Per-token-step deltas of a state sequence. Entry `k` spans anchor frames
/// k*stride .. (k+1)*stride and is None when either anchor is invalid.
pub fn anchor_deltas(states: &[AgentState], stride: usize) -> Vec<Option<MotionDelta>> {
    let n_anchors = (states.len() - 1) / stride + 1;
    (0..n_anchors.saturating_sub(1))
        .map(|k| {
            let a = &states[k * stride];
            let b = &states[(k + 1) * stride];
            if a.valid && b.valid {
                Some(state_delta(a, b))
            } else {
                None
            }
        })
        .collect()
}

/// Collect every delta with valid anchor pairs from a set of tracks.
pub fn extract_deltas(tracks: &[&AgentTrack], token_period: f64) -> Result<Vec<MotionDelta>> {
    let stride = (token_period / FRAME_DT).round() as usize;
    if stride == 0 || (stride as f64 * FRAME_DT - token_period).abs() > 1e-9 {
        return Err(Error::BadConfig {
            detail: format!("token_period {} is not a multiple of 0.1 s", token_period),
        });
    }
    let mut out = Vec::new();
    for track in tracks {
        for delta in anchor_deltas(&track.states, stride).into_iter().flatten() {
            out.push(delta);
        }
    }
    Ok(out)
}

/// Greedy disk cover with farthest-point fill.
///
/// Deltas are visited in a seeded shuffle order; a delta becomes a template
/// when it is farther than epsilon from all accepted templates. If the cover
/// would need more than `vocab_size` templates, epsilon doubles and the pass
/// restarts. Leftover slots are filled with the deltas farthest from the
/// current template set (skipping exact duplicates), which never hurts
/// coverage.
pub fn build_vocab(
    deltas: &[MotionDelta],
    vocab_size: usize,
    epsilon: f64,
    w_h: f64,
    token_period: f64,
    seed: u64,
) -> Result<TokenVocab> {
    if deltas.is_empty() {
        return Err(Error::NoDeltas);
    }
    if vocab_size == 0 || epsilon <= 0.0 {
        return Err(Error::BadConfig {
            detail: "vocab_size must be >= 1 and epsilon > 0".to_string(),
        });
    }

    let mut order: Vec<usize> = (0..deltas.len()).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = StreamKey::new(seed).with_str("kdisks").rng();
        order.shuffle(&mut rng);
    }

    let mut eps = epsilon;
    let mut doublings = 0u32;
    let templates: Vec<MotionDelta> = loop {
        let mut accepted: Vec<MotionDelta> = Vec::new();
        let mut overflow = false;
        for &i in &order {
            let d = &deltas[i];
            let covered = accepted
                .iter()
                .any(|t| delta_distance(d, t, w_h) <= eps);
            if !covered {
                if accepted.len() == vocab_size {
                    overflow = true;
                    break;
                }
                accepted.push(*d);
            }
        }
        if overflow {
            eps *= 2.0;
            doublings += 1;
            continue;
        }
        break accepted;
    };

    // Farthest-point fill of the remaining slots.
    let mut templates = templates;
    if templates.len() < vocab_size {
        let mut nearest: Vec<f64> = deltas
            .iter()
            .map(|d| {
                templates
                    .iter()
                    .map(|t| delta_distance(d, t, w_h))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        while templates.len() < vocab_size {
            let mut best: Option<(usize, f64)> = None;
            for (i, &nd) in nearest.iter().enumerate() {
                if nd > 0.0 && best.is_none_or(|(_, bd)| nd > bd) {
                    best = Some((i, nd));
                }
            }
            let Some((pick, _)) = best else {
                break; // only exact duplicates remain
            };
            let t = deltas[pick];
            templates.push(t);
            for (nd, d) in nearest.iter_mut().zip(deltas) {
                let dist = delta_distance(d, &t, w_h);
                if dist < *nd {
                    *nd = dist;
                }
            }
        }
    }

    let vocab = TokenVocab {
        templates,
        coverage_radius: eps,
        w_h,
        token_period,
        seed,
        epsilon_doublings: doublings,
    };
    debug_assert!(max_coverage_distance(deltas, &vocab) <= vocab.coverage_radius + 1e-12);
    Ok(vocab)
}

/// Largest nearest-template distance over a delta set.
pub fn max_coverage_distance(deltas: &[MotionDelta], vocab: &TokenVocab) -> f64 {
    deltas
        .iter()
        .map(|d| delta_distance(d, &vocab.templates[vocab.encode_delta(d)], vocab.w_h))
        .fold(0.0, f64::max)
}

/// Token sequence for a track: nearest template per valid anchor pair.
pub fn encode(track: &AgentTrack, vocab: &TokenVocab) -> Vec<usize> {
    anchor_deltas(&track.states, vocab.frame_stride())
        .into_iter()
        .flatten()
        .map(|d| vocab.encode_delta(&d))
        .collect()
}

/// Apply one template from `start`, producing `stride` frames at 10 Hz:
/// linear position interpolation and shortest-arc heading interpolation up
/// to the composed end state.
pub fn apply_template(start: &AgentState, template: &MotionDelta, stride: usize) -> Vec<AgentState> {
    let (sin_h, cos_h) = start.heading.sin_cos();
    let wx = cos_h * template.dx - sin_h * template.dy;
    let wy = sin_h * template.dx + cos_h * template.dy;
    (1..=stride)
        .map(|i| {
            let t = i as f64 / stride as f64;
            AgentState {
                x: start.x + wx * t,
                y: start.y + wy * t,
                z: start.z,
                heading: wrap_angle(start.heading + template.dheading * t),
                valid: true,
            }
        })
        .collect()
}

/// Decode a token sequence from a start state. Output begins with the start
/// state and adds `stride` interpolated frames per token.
pub fn decode(start: &AgentState, tokens: &[usize], vocab: &TokenVocab) -> Vec<AgentState> {
    let stride = vocab.frame_stride();
    let mut out = Vec::with_capacity(1 + tokens.len() * stride);
    out.push(*start);
    let mut cur = *start;
    for &tok in tokens {
        let frames = apply_template(&cur, &vocab.templates[tok], stride);
        cur = frames[stride - 1];
        out.extend(frames);
    }
    out
}

/// Tiny fixed vocab for unit tests: straight templates at a few speeds plus
/// small turns.
#[cfg(test)]
pub fn test_vocab() -> TokenVocab {
    let mut templates = Vec::new();
    for i in 0..=20 {
        templates.push(MotionDelta {
            dx: i as f64 * 0.75,
            dy: 0.0,
            dheading: 0.0,
        });
    }
    for &dh in &[-0.1, 0.1] {
        for i in 0..=10 {
            templates.push(MotionDelta {
                dx: i as f64 * 1.5,
                dy: dh * i as f64 * 0.3,
                dheading: dh,
            });
        }
    }
    TokenVocab {
        templates,
        coverage_radius: 0.5,
        w_h: DEFAULT_HEADING_WEIGHT,
        token_period: DEFAULT_TOKEN_PERIOD,
        seed: 0,
        epsilon_doublings: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn state(x: f64, y: f64, heading: f64) -> AgentState {
        AgentState {
            x,
            y,
            z: 0.0,
            heading,
            valid: true,
        }
    }

    #[test]
    fn delta_extraction_examples() {
        let d = state_delta(&state(0.0, 0.0, 0.0), &state(10.0, 0.0, 0.0));
        assert!((d.dx - 10.0).abs() < 1e-12 && d.dy.abs() < 1e-12 && d.dheading == 0.0);

        let d = state_delta(&state(0.0, 0.0, PI / 2.0), &state(0.0, 10.0, PI / 2.0));
        assert!((d.dx - 10.0).abs() < 1e-9, "forward in agent frame, got {:?}", d);
        assert!(d.dy.abs() < 1e-9);

        let d = state_delta(&state(3.0, 4.0, 1.0), &state(3.0, 4.0, 1.0));
        assert_eq!((d.dx, d.dy, d.dheading), (0.0, 0.0, 0.0));
    }

    #[test]
    fn extraction_skips_invalid_anchor_pairs() {
        let mut states: Vec<AgentState> = (0..21)
            .map(|i| state(i as f64, 0.0, 0.0))
            .collect();
        states[5].valid = false;
        let deltas = anchor_deltas(&states, 5);
        assert_eq!(deltas.len(), 4);
        assert!(deltas[0].is_none() && deltas[1].is_none());
        assert!(deltas[2].is_some() && deltas[3].is_some());
    }

    #[test]
    fn rotation_equivariance() {
        let base: Vec<AgentState> = (0..91)
            .map(|i| {
                let t = i as f64 * 0.1;
                state(20.0 * t, 0.5 * (0.3 * t).sin(), 0.02 * (0.5 * t).cos())
            })
            .collect();
        let phi: f64 = 1.1;
        let rotated: Vec<AgentState> = base
            .iter()
            .map(|s| {
                state(
                    phi.cos() * s.x - phi.sin() * s.y,
                    phi.sin() * s.x + phi.cos() * s.y,
                    wrap_angle(s.heading + phi),
                )
            })
            .collect();
        let da = anchor_deltas(&base, 5);
        let db = anchor_deltas(&rotated, 5);
        for (a, b) in da.iter().zip(&db) {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert!((a.dx - b.dx).abs() < 1e-9);
            assert!((a.dy - b.dy).abs() < 1e-9);
            assert!(wrap_angle(a.dheading - b.dheading).abs() < 1e-9);
        }
    }

    #[test]
    fn vocab_from_identical_deltas_collapses() {
        let deltas = vec![
            MotionDelta {
                dx: 5.0,
                dy: 0.0,
                dheading: 0.0,
            };
            100
        ];
        let vocab = build_vocab(&deltas, 512, 0.25, 1.0, 0.5, 3).unwrap();
        assert_eq!(vocab.templates.len(), 1);
        assert_eq!(vocab.encode_delta(&deltas[0]), 0);
    }

    #[test]
    fn two_clusters_both_covered() {
        let mut deltas = Vec::new();
        for i in 0..50 {
            let jig = (i % 5) as f64 * 0.01;
            deltas.push(MotionDelta {
                dx: 1.0 + jig,
                dy: 0.0,
                dheading: 0.0,
            });
            deltas.push(MotionDelta {
                dx: 6.0 + jig, // 5 m apart = 20 * epsilon
                dy: 0.0,
                dheading: 0.0,
            });
        }
        let vocab = build_vocab(&deltas, 512, 0.25, 1.0, 0.5, 9).unwrap();
        let max_d = max_coverage_distance(&deltas, &vocab);
        assert!(max_d <= vocab.coverage_radius);
        let has_low = vocab.templates.iter().any(|t| t.dx < 2.0);
        let has_high = vocab.templates.iter().any(|t| t.dx > 5.0);
        assert!(has_low && has_high);
    }

    #[test]
    fn vocab_deterministic_and_doubling_reported() {
        let deltas: Vec<MotionDelta> = (0..500)
            .map(|i| MotionDelta {
                dx: (i % 100) as f64 * 0.1,
                dy: ((i / 100) as f64) * 0.05,
                dheading: 0.0,
            })
            .collect();
        let a = build_vocab(&deltas, 16, 0.05, 1.0, 0.5, 4).unwrap();
        let b = build_vocab(&deltas, 16, 0.05, 1.0, 0.5, 4).unwrap();
        assert_eq!(a, b);
        // 100 distinct dx values 0.1 apart cannot be covered by 16 disks of
        // radius 0.05, so epsilon must have doubled at least once.
        assert!(a.epsilon_doublings >= 1);
        assert!(max_coverage_distance(&deltas, &a) <= a.coverage_radius);
    }

    #[test]
    fn empty_deltas_error() {
        assert_eq!(
            build_vocab(&[], 512, 0.25, 1.0, 0.5, 0).unwrap_err().code(),
            "no-deltas"
        );
    }

    #[test]
    fn encode_exact_and_tie_rules() {
        let vocab = TokenVocab {
            templates: vec![
                MotionDelta {
                    dx: 0.0,
                    dy: 0.0,
                    dheading: 0.0,
                },
                MotionDelta {
                    dx: 2.0,
                    dy: 0.0,
                    dheading: 0.0,
                },
                MotionDelta {
                    dx: 4.0,
                    dy: 0.0,
                    dheading: 0.0,
                },
            ],
            coverage_radius: 2.0,
            w_h: 1.0,
            token_period: 0.5,
            seed: 0,
            epsilon_doublings: 0,
        };
        assert_eq!(
            vocab.encode_delta(&MotionDelta {
                dx: 2.0,
                dy: 0.0,
                dheading: 0.0
            }),
            1,
            "exact match"
        );
        assert_eq!(
            vocab.encode_delta(&MotionDelta {
                dx: 1.0,
                dy: 0.0,
                dheading: 0.0
            }),
            0,
            "equidistant tie goes low"
        );
        assert_eq!(
            vocab.encode_delta(&MotionDelta {
                dx: 3.0,
                dy: 0.0,
                dheading: 0.0
            }),
            1,
            "equidistant tie goes low"
        );
    }

    #[test]
    fn decode_straight_composition() {
        let vocab = test_vocab();
        // Template "10 m straight" is index i where dx = 7.5? use exact entry.
        let tok = vocab
            .templates
            .iter()
            .position(|t| (t.dx - 7.5).abs() < 1e-12 && t.dy == 0.0 && t.dheading == 0.0)
            .unwrap();
        let start = state(0.0, 0.0, 0.0);
        let out = decode(&start, &[tok; 4], &vocab);
        assert_eq!(out.len(), 1 + 4 * 5);
        for (i, st) in out.iter().enumerate() {
            assert!((st.x - 1.5 * i as f64).abs() < 1e-9);
            assert_eq!(st.y, 0.0);
        }
        assert_eq!(decode(&start, &[], &vocab).len(), 1);
    }

    #[test]
    fn encode_decode_roundtrip_on_token_sequences() {
        let vocab = test_vocab();
        let mut rng = StreamKey::new(12).with_str("roundtrip").rng();
        use rand::Rng;
        for _ in 0..50 {
            let tokens: Vec<usize> = (0..18)
                .map(|_| rng.random_range(0..vocab.templates.len()))
                .collect();
            let start = state(0.0, 0.0, 0.0);
            let states = decode(&start, &tokens, &vocab);
            let track = AgentTrack {
                agent_id: 0,
                length: 4.5,
                width: 1.8,
                states,
            };
            let again = encode(&track, &vocab);
            assert_eq!(again, tokens);
        }
    }
}
