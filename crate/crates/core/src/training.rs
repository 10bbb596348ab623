//! Teacher-forced training of the next-token policy.
//!
//! Samples are (context, next-token) pairs built from tokenized tracks;
//! anchor gaps caused by invalid frames drop the sample rather than imputing
//! it. The optimizer is plain Adam with global-norm gradient clipping,
//! early-stopped on validation loss. Everything is deterministic in the
//! config seed, including per-epoch data order.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{loss_into, LossSpec};
use crate::model::{RoadMap, Scenario};
use crate::net::{self, Architecture, ForwardCache, PolicyParameters};
use crate::policy::{build_context, AgentSnapshot};
use crate::rng::StreamKey;
use crate::tokenizer::{anchor_deltas, TokenVocab};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    256
}
fn default_epochs() -> usize {
    5
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_clip() -> f64 {
    1.0
}
fn default_patience() -> usize {
    3
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            grad_clip: default_clip(),
            patience: default_patience(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.learning_rate > 0.0 && self.batch_size > 0 {
            Ok(())
        } else {
            Err(Error::BadConfig {
                detail: "learning_rate and batch_size must be positive".to_string(),
            })
        }
    }
}

/// One teacher-forcing sample, with numeric features pre-flattened since
/// they do not depend on the parameters.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub tokens: [usize; 2],
    pub numeric: Vec<f64>,
    pub target: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_time_s: f64,
}

/// Build (context, next-token) pairs from a tokenized corpus slice. A sample
/// at token step k needs the ego anchors of steps k-2, k-1, k and the target
/// delta all valid; anything else is skipped.
pub fn build_samples(
    scenarios: &[(Scenario, Arc<RoadMap>)],
    vocab: &TokenVocab,
) -> Vec<TrainSample> {
    let stride = vocab.frame_stride();
    let mut samples = Vec::new();
    for (scenario, map) in scenarios {
        let tokenized: Vec<Vec<Option<usize>>> = scenario
            .tracks
            .iter()
            .map(|t| {
                anchor_deltas(&t.states, stride)
                    .into_iter()
                    .map(|d| d.map(|d| vocab.encode_delta(&d)))
                    .collect()
            })
            .collect();
        let n_steps = tokenized.first().map_or(0, |t| t.len());
        for k in 2..n_steps {
            let anchor = k * stride;
            // Snapshot of every agent at the anchor frame.
            let snapshots: Vec<AgentSnapshot> = scenario
                .tracks
                .iter()
                .map(|t| {
                    let s = &t.states[anchor];
                    let speed = if s.valid && t.states[anchor - stride].valid {
                        let p = &t.states[anchor - stride];
                        ((s.x - p.x).powi(2) + (s.y - p.y).powi(2)).sqrt() / vocab.token_period
                    } else {
                        0.0
                    };
                    AgentSnapshot {
                        x: s.x,
                        y: s.y,
                        heading: s.heading,
                        speed,
                        present: s.valid,
                    }
                })
                .collect();
            for (ti, tokens) in tokenized.iter().enumerate() {
                let (Some(t0), Some(t1), Some(target)) =
                    (tokens[k - 2], tokens[k - 1], tokens[k])
                else {
                    continue;
                };
                let Ok(ctx) = build_context(&snapshots, ti, [t0, t1], map) else {
                    continue;
                };
                samples.push(TrainSample {
                    tokens: [t0, t1],
                    numeric: net::numeric_features(&ctx),
                    target,
                });
            }
        }
    }
    samples
}

/// Number of fixed accumulation chunks: gradient and loss sums reduce in
/// chunk order, so results are byte-identical no matter how many worker
/// threads actually run.
const ACCUM_CHUNKS: usize = 4;

fn chunk_bounds(len: usize) -> Vec<(usize, usize)> {
    let per = len.div_ceil(ACCUM_CHUNKS);
    (0..ACCUM_CHUNKS)
        .map(|c| ((c * per).min(len), ((c + 1) * per).min(len)))
        .collect()
}

fn mean_loss(
    params: &PolicyParameters,
    samples: &[TrainSample],
    spec: &LossSpec,
) -> Result<f64> {
    let bounds = chunk_bounds(samples.len());
    let partials: Vec<Result<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = bounds
            .iter()
            .map(|&(lo, hi)| {
                scope.spawn(move || {
                    let mut cache = ForwardCache::default();
                    let mut logits = Vec::new();
                    let mut grad = Vec::new();
                    let mut logp = Vec::new();
                    let mut total = 0.0;
                    for s in &samples[lo..hi] {
                        net::forward_into(params, s.tokens, &s.numeric, &mut cache, &mut logits)?;
                        total += loss_into(spec, &logits, s.target, &mut grad, &mut logp)?;
                    }
                    Ok(total)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut total = 0.0;
    for p in partials {
        total += p?;
    }
    Ok(total / samples.len() as f64)
}

/// Train the policy by minibatch Adam with teacher forcing. Returns the
/// parameters with the best validation loss and the per-epoch log.
pub fn train(
    train_samples: &[TrainSample],
    val_samples: &[TrainSample],
    vocab: &TokenVocab,
    loss_spec: &LossSpec,
    cfg: &TrainConfig,
) -> Result<(PolicyParameters, Vec<EpochLog>)> {
    cfg.check()?;
    loss_spec.check()?;
    if train_samples.is_empty() {
        return Err(Error::NoSamples {
            split: "train".to_string(),
        });
    }
    if val_samples.is_empty() {
        return Err(Error::NoSamples {
            split: "val".to_string(),
        });
    }

    let arch = Architecture::new(vocab.templates.len());
    let mut params = PolicyParameters::init(arch, cfg.seed);
    let n_params = params.theta.len();

    let mut adam_m = vec![0.0; n_params];
    let mut adam_v = vec![0.0; n_params];
    let mut adam_t = 0u32;

    let mut logs = Vec::new();
    let mut best: Option<(f64, PolicyParameters)> = None;
    let mut epochs_since_best = 0usize;
    let started = std::time::Instant::now();

    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut grad = vec![0.0; n_params];
    let mut chunk_grads: Vec<Vec<f64>> = (0..ACCUM_CHUNKS).map(|_| vec![0.0; n_params]).collect();

    for epoch in 1..=cfg.epochs {
        {
            use rand::seq::SliceRandom;
            let mut rng = StreamKey::new(cfg.seed)
                .with_str("epoch-order")
                .with_u64(epoch as u64)
                .rng();
            order.shuffle(&mut rng);
        }

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            // Accumulate per fixed chunk in parallel, then reduce in chunk
            // order; byte-identical for any thread count.
            let bounds = chunk_bounds(batch.len());
            let params_ref = &params;
            let losses: Vec<Result<f64>> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk_grads
                    .iter_mut()
                    .zip(&bounds)
                    .map(|(cgrad, &(lo, hi))| {
                        scope.spawn(move || {
                            for g in cgrad.iter_mut() {
                                *g = 0.0;
                            }
                            let mut cache = ForwardCache::default();
                            let mut logits = Vec::new();
                            let mut dlogits = Vec::new();
                            let mut logp = Vec::new();
                            let mut chunk_loss = 0.0;
                            for &si in &batch[lo..hi] {
                                let s = &train_samples[si];
                                net::forward_into(
                                    params_ref,
                                    s.tokens,
                                    &s.numeric,
                                    &mut cache,
                                    &mut logits,
                                )?;
                                chunk_loss +=
                                    loss_into(loss_spec, &logits, s.target, &mut dlogits, &mut logp)?;
                                net::backward_into(params_ref, s.tokens, &cache, &dlogits, cgrad);
                            }
                            Ok(chunk_loss)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            let mut batch_loss = 0.0;
            for l in losses {
                batch_loss += l?;
            }
            for g in grad.iter_mut() {
                *g = 0.0;
            }
            for cgrad in &chunk_grads {
                for (g, c) in grad.iter_mut().zip(cgrad) {
                    *g += c;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grad.iter_mut() {
                *g *= scale;
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let shrink = cfg.grad_clip / norm;
                for g in grad.iter_mut() {
                    *g *= shrink;
                }
            }
            adam_t += 1;
            let bc1 = 1.0 - cfg.beta1.powi(adam_t as i32);
            let bc2 = 1.0 - cfg.beta2.powi(adam_t as i32);
            for i in 0..n_params {
                adam_m[i] = cfg.beta1 * adam_m[i] + (1.0 - cfg.beta1) * grad[i];
                adam_v[i] = cfg.beta2 * adam_v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                let m_hat = adam_m[i] / bc1;
                let v_hat = adam_v[i] / bc2;
                params.theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            }
            epoch_loss += batch_loss;
            seen += batch.len();
        }
        let train_loss = epoch_loss / seen as f64;
        let val_loss = mean_loss(&params, val_samples, loss_spec)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        logs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            wall_time_s: started.elapsed().as_secs_f64(),
        });

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, params.clone()));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                break;
            }
        }
    }

    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{LossKind, LossSpec};
    use crate::synth::{build_freeway_map, generate_scenario, SynthConfig};
    use crate::tokenizer::{build_vocab, extract_deltas};

    fn tiny_corpus() -> (Vec<(Scenario, Arc<RoadMap>)>, Vec<(Scenario, Arc<RoadMap>)>, TokenVocab) {
        let cfg = SynthConfig {
            vehicle_target: 4,
            lane_change_rate: 0.05,
            ..SynthConfig::default()
        };
        let map = build_freeway_map(cfg.lanes, cfg.length, cfg.lane_width, "m");
        let arc = Arc::new(map.clone());
        let scenarios: Vec<(Scenario, Arc<RoadMap>)> = (0..12)
            .map(|i| {
                let c = SynthConfig {
                    wave_mode: i % 2 == 0,
                    seed: i as u64,
                    ..cfg.clone()
                };
                (
                    generate_scenario(&c, &map, &format!("t{}", i)).unwrap(),
                    arc.clone(),
                )
            })
            .collect();
        let tracks: Vec<&crate::model::AgentTrack> = scenarios
            .iter()
            .flat_map(|(s, _)| s.tracks.iter())
            .collect();
        let deltas = extract_deltas(&tracks, 0.5).unwrap();
        let vocab = build_vocab(&deltas, 64, 0.25, 1.0, 0.5, 1).unwrap();
        let (train, val) = scenarios.split_at(9);
        (train.to_vec(), val.to_vec(), vocab)
    }

    #[test]
    fn first_batch_loss_is_ln_c_and_training_improves() {
        let (train_scen, val_scen, vocab) = tiny_corpus();
        let train_set = build_samples(&train_scen, &vocab);
        let val_set = build_samples(&val_scen, &vocab);
        assert!(!train_set.is_empty() && !val_set.is_empty());

        // Uniform initialization scores exactly ln C before any update.
        let params = PolicyParameters::init(Architecture::new(vocab.templates.len()), 7);
        let initial = mean_loss(&params, &train_set, &LossSpec::new(LossKind::Ce)).unwrap();
        let ln_c = (vocab.templates.len() as f64).ln();
        assert!((initial - ln_c).abs() < 1e-9, "initial {} vs ln C {}", initial, ln_c);

        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 64,
            seed: 7,
            ..TrainConfig::default()
        };
        let (_, logs) = train(&train_set, &val_set, &vocab, &LossSpec::new(LossKind::Ce), &cfg)
            .unwrap();
        assert!(logs[0].train_loss < ln_c, "epoch-1 loss {} vs ln C {}", logs[0].train_loss, ln_c);
        // Early stopping returns the best-validation parameters.
        let best_val = logs.iter().map(|l| l.val_loss).fold(f64::INFINITY, f64::min);
        assert!(best_val < ln_c, "best val loss {} vs ln C {}", best_val, ln_c);
    }

    #[test]
    fn training_is_deterministic() {
        let (train_scen, val_scen, vocab) = tiny_corpus();
        let train_set = build_samples(&train_scen, &vocab);
        let val_set = build_samples(&val_scen, &vocab);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 64,
            seed: 11,
            ..TrainConfig::default()
        };
        let spec = LossSpec::new(LossKind::Ce);
        let (pa, la) = train(&train_set, &val_set, &vocab, &spec, &cfg).unwrap();
        let (pb, lb) = train(&train_set, &val_set, &vocab, &spec, &cfg).unwrap();
        assert_eq!(pa.theta, pb.theta);
        for (a, b) in la.iter().zip(&lb) {
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.val_loss, b.val_loss);
        }
    }

    #[test]
    fn focal_gamma_zero_matches_ce_training() {
        let (train_scen, val_scen, vocab) = tiny_corpus();
        let train_set = build_samples(&train_scen, &vocab);
        let val_set = build_samples(&val_scen, &vocab);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 64,
            seed: 5,
            ..TrainConfig::default()
        };
        let focal0 = LossSpec {
            gamma: 0.0,
            ..LossSpec::new(LossKind::Focal)
        };
        let (pa, la) = train(&train_set, &val_set, &vocab, &focal0, &cfg).unwrap();
        let (pb, lb) = train(&train_set, &val_set, &vocab, &LossSpec::new(LossKind::Ce), &cfg)
            .unwrap();
        assert_eq!(pa.theta, pb.theta, "identical checkpoints");
        assert_eq!(la, lb_strip_time(&lb, &la));

        fn lb_strip_time(lb: &[EpochLog], la: &[EpochLog]) -> Vec<EpochLog> {
            // Wall time is the only field allowed to differ.
            lb.iter()
                .zip(la)
                .map(|(b, a)| EpochLog {
                    wall_time_s: a.wall_time_s,
                    ..*b
                })
                .collect()
        }
    }

    #[test]
    fn empty_split_rejected() {
        let (_, val_scen, vocab) = tiny_corpus();
        let val_set = build_samples(&val_scen, &vocab);
        let err = train(
            &[],
            &val_set,
            &vocab,
            &LossSpec::new(LossKind::Ce),
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err.code(), "no-samples");
    }
}
