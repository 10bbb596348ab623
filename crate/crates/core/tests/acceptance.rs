//! Acceptance suite. Each test prints one pass line; a failure names its
//! criterion. Criterion 9 is the end-to-end run and dominates the wall time.

use std::sync::Arc;
use std::time::Instant;

use noisesim::cleaning::{clean, CleaningConfig};
use noisesim::io::assign_splits;
use noisesim::losses::{
    grad_check, loss_ce, loss_focal, loss_label_smoothing, loss_symmetric_ce, LossKind, LossSpec,
};
use noisesim::metrics::{evaluate, histogram_likelihood, min_ade, BinSpec, MetricsConfig};
use noisesim::model::{
    AgentState, AgentTrack, Provenance, RoadMap, Scenario, SplitTag, FRAME_COUNT,
};
use noisesim::net::{policy_grad_check, Architecture};
use noisesim::noise::{corrupt, NoiseConfig};
use noisesim::policy::{idm_accel, rollout, IdmParams, Lead, RolloutPolicy};
use noisesim::rng::StreamKey;
use noisesim::synth::{build_freeway_map, generate_scenario, SynthConfig, VEHICLE_LENGTH};
use noisesim::tokenizer::{anchor_deltas, build_vocab, delta_distance, extract_deltas};
use noisesim::training::{build_samples, train, TrainConfig};

fn random_logits(rng: &mut rand_chacha::ChaCha8Rng, c: usize) -> Vec<f64> {
    use rand::Rng;
    (0..c).map(|_| rng.random_range(-4.0..4.0)).collect()
}

#[test]
fn criterion_1_loss_reductions_exact() {
    let started = Instant::now();
    let mut rng = StreamKey::new(101).with_str("c1").rng();
    use rand::Rng;
    for _ in 0..1000 {
        let logits = random_logits(&mut rng, 512);
        let target = rng.random_range(0..512);
        let (ce, ce_grad) = loss_ce(&logits, target).unwrap();

        let (focal, focal_grad) = loss_focal(&logits, target, 0.0).unwrap();
        assert!((focal - ce).abs() <= 1e-12, "criterion 1: focal(0) vs ce");
        let (ls, ls_grad) = loss_label_smoothing(&logits, target, 0.0).unwrap();
        assert!((ls - ce).abs() <= 1e-12, "criterion 1: ls(0) vs ce");
        let (sce, sce_grad) = loss_symmetric_ce(&logits, target, 1.0, 0.0, 4e-4).unwrap();
        assert!((sce - ce).abs() <= 1e-12, "criterion 1: sce(1,0) vs ce");

        for i in 0..512 {
            assert!((focal_grad[i] - ce_grad[i]).abs() <= 1e-12, "criterion 1: focal grad");
            assert!((ls_grad[i] - ce_grad[i]).abs() <= 1e-12, "criterion 1: ls grad");
            assert!((sce_grad[i] - ce_grad[i]).abs() <= 1e-12, "criterion 1: sce grad");
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "criterion 1: took {:.3} s, budget 1 s", elapsed);
    println!("criterion 1: PASS (loss reductions exact, {:.0} ms)", elapsed * 1e3);
}

#[test]
fn criterion_2_analytic_loss_values() {
    let onehot = vec![1000.0, 0.0, 0.0, 0.0];
    let uniform4 = vec![0.0; 4];
    let p9 = vec![0.9f64.ln(), 0.1f64.ln()];

    let close = |value: f64, expected: f64, what: &str| {
        assert!(
            (value - expected).abs() < 1e-5,
            "criterion 2: {} = {}, expected {}",
            what,
            value,
            expected
        );
    };

    close(loss_ce(&onehot, 0).unwrap().0, 0.0, "ce one-hot");
    close(loss_ce(&uniform4, 0).unwrap().0, 1.38629, "ce uniform C=4");
    close(loss_ce(&p9, 0).unwrap().0, 0.10536, "ce p=0.9");

    close(
        loss_label_smoothing(&[0.0, 0.0], 0, 0.3).unwrap().0,
        2.0f64.ln(),
        "ls uniform C=2",
    );
    close(
        loss_label_smoothing(&p9, 0, 0.1).unwrap().0,
        0.21522,
        "ls (0.9,0.1) eps=0.1",
    );

    close(loss_focal(&onehot, 0, 2.0).unwrap().0, 0.0, "focal p=1");
    close(loss_focal(&[0.0, 0.0], 0, 2.0).unwrap().0, 0.17329, "focal p=0.5 gamma=2");

    close(
        loss_symmetric_ce(&onehot, 0, 1.0, 0.13, 4e-4).unwrap().0,
        -5.1994e-5,
        "sce one-hot",
    );
    close(
        loss_symmetric_ce(&uniform4, 0, 1.0, 0.13, 4e-4).unwrap().0,
        2.14912,
        "sce uniform C=4",
    );
    println!("criterion 2: PASS (nine analytic loss values to 1e-5)");
}

#[test]
fn criterion_3_gradient_checks() {
    let started = Instant::now();
    for kind in [
        LossKind::Ce,
        LossKind::CeLabelSmoothing,
        LossKind::Focal,
        LossKind::SymmetricCe,
    ] {
        let worst = grad_check(&LossSpec::new(kind), 100, 303);
        assert!(
            worst < 1e-4,
            "criterion 3: {:?} max relative error {}",
            kind,
            worst
        );
    }
    let worst = policy_grad_check(512, 100, 304);
    assert!(worst < 1e-4, "criterion 3: policy max relative error {}", worst);
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 3: took {:.1} s, budget 30 s", elapsed);
    println!("criterion 3: PASS (gradients < 1e-4, {:.1} s)", elapsed);
}

#[test]
fn criterion_4_idm_physics() {
    let p = IdmParams::default();
    // Free-road acceleration from rest is exactly a.
    assert_eq!(idm_accel(0.0, None, &p).unwrap(), p.a, "criterion 4: accel at rest");

    // Independent root-solve of the equilibrium condition by bisection.
    let accel_at = |gap: f64| {
        idm_accel(
            20.0,
            Some(Lead {
                v_lead: 20.0,
                gap,
            }),
            &p,
        )
        .unwrap()
    };
    let (mut lo, mut hi) = (2.0, 400.0);
    assert!(accel_at(lo) < 0.0 && accel_at(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if accel_at(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let equilibrium = 0.5 * (lo + hi);
    assert!(
        (equilibrium - 35.722).abs() <= 1e-3,
        "criterion 4: equilibrium gap {} vs 35.722",
        equilibrium
    );

    // 60 s platoon behind an oscillating pace car: no negative gaps.
    let n = 10;
    let dt = 0.01;
    let mut pos: Vec<f64> = (0..n).map(|i| 1000.0 - 20.0 * i as f64).collect();
    let mut vel = vec![20.0f64; n];
    for step in 0..6000 {
        let t = step as f64 * dt;
        let lead_speed = 20.0 * (0.7 + 0.3 * (std::f64::consts::TAU * t / 20.0).cos());
        vel[0] = lead_speed;
        pos[0] += vel[0] * dt;
        for i in 1..n {
            let gap = pos[i - 1] - pos[i] - VEHICLE_LENGTH;
            assert!(gap > 0.0, "criterion 4: negative gap at t={:.2}, car {}", t, i);
            let acc = idm_accel(
                vel[i],
                Some(Lead {
                    v_lead: vel[i - 1],
                    gap,
                }),
                &p,
            )
            .unwrap();
            vel[i] = (vel[i] + acc * dt).max(0.0);
            pos[i] += vel[i] * dt;
        }
    }
    println!("criterion 4: PASS (IDM physics, equilibrium {:.4} m)", equilibrium);
}

fn synth_corpus(
    count: usize,
    vehicle_target: usize,
    seed: u64,
) -> (Vec<Scenario>, Arc<RoadMap>) {
    let base = SynthConfig {
        vehicle_target,
        lane_change_rate: 0.03,
        seed,
        ..SynthConfig::default()
    };
    let map = Arc::new(build_freeway_map(base.lanes, base.length, base.lane_width, "m"));
    let scenarios = (0..count)
        .map(|i| {
            let cfg = SynthConfig {
                wave_mode: i % 2 == 0,
                ..base.clone()
            };
            generate_scenario(&cfg, &map, &format!("s{:05}", i)).unwrap()
        })
        .collect();
    (scenarios, map)
}

#[test]
fn criterion_5_tokenizer_coverage_and_reconstruction() {
    let (scenarios, _) = synth_corpus(170, 6, 55);
    let tracks: Vec<&AgentTrack> = scenarios.iter().flat_map(|s| s.tracks.iter()).collect();
    assert!(tracks.len() >= 1000, "need at least 1000 tracks, got {}", tracks.len());
    let deltas = extract_deltas(&tracks, 0.5).unwrap();
    let vocab = build_vocab(&deltas, 512, 0.25, 1.0, 0.5, 5).unwrap();

    // Exact coverage assertion over every training delta.
    let max_d = noisesim::tokenizer::max_coverage_distance(&deltas, &vocab);
    assert!(
        max_d <= vocab.coverage_radius,
        "criterion 5: max nearest-template distance {} > radius {}",
        max_d,
        vocab.coverage_radius
    );

    // Per-token-step reconstruction error of decode(encode(track)).
    let stride = vocab.frame_stride();
    for track in tracks.iter().take(1000) {
        let track_deltas = anchor_deltas(&track.states, stride);
        let tokens = noisesim::tokenizer::encode(track, &vocab);
        let decoded = noisesim::tokenizer::decode(&track.states[0], &tokens, &vocab);
        assert_eq!(decoded.len(), 1 + tokens.len() * stride);
        for (delta, &tok) in track_deltas.iter().flatten().zip(&tokens) {
            let err = delta_distance(delta, &vocab.templates[tok], vocab.w_h);
            assert!(
                err <= vocab.coverage_radius,
                "criterion 5: per-step error {} > radius {}",
                err,
                vocab.coverage_radius
            );
        }
    }
    println!(
        "criterion 5: PASS (coverage {:.4} <= {:.4} over {} deltas, 1000 tracks reconstructed)",
        max_d,
        vocab.coverage_radius,
        deltas.len()
    );
}

#[test]
fn criterion_6_cleaning_planted_violations() {
    let map = build_freeway_map(2, 400.0, 3.6, "m");
    let track_with = |id: u32, f: &dyn Fn(usize) -> AgentState| AgentTrack {
        agent_id: id,
        length: 4.5,
        width: 1.8,
        states: (0..FRAME_COUNT).map(f).collect(),
    };
    let straight = |id: u32, x0: f64, y: f64| {
        track_with(id, &move |i| AgentState {
            x: x0 + 2.0 * i as f64,
            y,
            z: 0.0,
            heading: 0.0,
            valid: true,
        })
    };

    let normal_a = straight(0, 5.0, 0.0);
    let offroad = straight(1, 5.0, 9.0); // fully outside the y=5.4 edge
    let sweep = track_with(2, &|i| {
        let t = (i as f64 / 90.0).min(1.0);
        AgentState {
            x: 120.0 + 10.0 * t, // 10.8 m lateral per 10 m longitudinal
            y: -1.0 + 10.8 * t,
            z: 0.0,
            heading: 0.0,
            valid: true,
        }
    });
    let mut short = straight(3, 240.0, 3.6);
    for (i, s) in short.states.iter_mut().enumerate() {
        s.valid = i < 5;
    }
    let keeper = straight(4, 60.0, 3.6);
    let mut overlapper = straight(5, 60.0, 3.6);
    for (so, sk) in overlapper.states.iter_mut().zip(&keeper.states) {
        so.x = sk.x + 1.2;
    }
    let grazing = track_with(6, &|i| AgentState {
        x: 200.0 + 2.0 * i as f64,
        y: 5.4 + 0.4 * (i as f64 * 0.7).sin(), // oscillates across the edge
        z: 0.0,
        heading: 0.0,
        valid: true,
    });
    let normal_b = straight(7, 320.0, 0.0);

    let scenario = Scenario {
        scenario_id: "planted".to_string(),
        map_id: "m".to_string(),
        split: SplitTag::Train,
        provenance: Provenance::Corrupted,
        tracks: vec![
            normal_a, offroad, sweep, short, keeper, overlapper, grazing, normal_b,
        ],
    };
    assert_eq!(scenario.tracks.len(), 8);

    let cleaned = clean(&scenario, &map, &CleaningConfig::default());
    let ids: Vec<u32> = cleaned.tracks.iter().map(|t| t.agent_id).collect();
    assert_eq!(
        ids,
        vec![0, 4, 6, 7],
        "criterion 6: expected exactly the 4 planted tracks removed"
    );
    let twice = clean(&cleaned, &map, &CleaningConfig::default());
    assert_eq!(twice, cleaned, "criterion 6: clean must be idempotent");
    println!("criterion 6: PASS (4 planted tracks removed, grazing retained, idempotent)");
}

#[test]
fn criterion_7_noise_statistics() {
    let (scenarios, _) = synth_corpus(24, 6, 77);

    // Zero config: identity on coordinates and masks.
    let zero = NoiseConfig::zero(3);
    for s in scenarios.iter().take(4) {
        let out = corrupt(s, &zero).unwrap();
        assert_eq!(out.tracks, s.tracks, "criterion 7: zero config identity");
    }

    // Dropout fraction over >= 1e4 frames within +-2% absolute.
    let drop = NoiseConfig {
        dropout_rate: 0.1,
        ..NoiseConfig::zero(5)
    };
    let mut total = 0usize;
    let mut dropped = 0usize;
    for s in &scenarios {
        let out = corrupt(s, &drop).unwrap();
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
    assert!(total >= 10_000, "criterion 7: {} frames", total);
    let frac = dropped as f64 / total as f64;
    assert!(
        (frac - 0.1).abs() <= 0.02,
        "criterion 7: dropout fraction {} vs 0.1",
        frac
    );

    // Jitter sample std within [0.097, 0.103] over >= 1e5 coordinates.
    let jitter = NoiseConfig {
        jitter_sigma_xy: 0.1,
        ..NoiseConfig::zero(6)
    };
    let mut diffs: Vec<f64> = Vec::new();
    let mut extra_seed = 0u64;
    while diffs.len() < 100_000 {
        let (more, _) = synth_corpus(12, 6, 900 + extra_seed);
        extra_seed += 1;
        for s in &more {
            let out = corrupt(s, &jitter).unwrap();
            for (a, b) in out.tracks.iter().zip(&s.tracks) {
                for (sa, sb) in a.states.iter().zip(&b.states) {
                    if sa.valid {
                        diffs.push(sa.x - sb.x);
                        diffs.push(sa.y - sb.y);
                    }
                }
            }
        }
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let std = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
    assert!(
        (0.097..=0.103).contains(&std),
        "criterion 7: jitter std {} outside [0.097, 0.103]",
        std
    );

    // Byte determinism per seed.
    let cfg = NoiseConfig::default();
    let a = corrupt(&scenarios[0], &cfg).unwrap();
    let b = corrupt(&scenarios[0], &cfg).unwrap();
    let bytes_a = serde_json::to_vec(&a).unwrap();
    let bytes_b = serde_json::to_vec(&b).unwrap();
    assert_eq!(bytes_a, bytes_b, "criterion 7: corruption not byte-deterministic");

    println!(
        "criterion 7: PASS (dropout {:.3}, jitter std {:.4}, deterministic)",
        frac, std
    );
}

#[test]
fn criterion_8_metrics_oracles() {
    // Hand-computed histogram likelihood values.
    let spec = BinSpec::new(0.0, 1.0, 2);
    let sim = vec![0.25; 10];
    let s0 = histogram_likelihood(&sim, &[0.2; 5], &spec, 0.1).unwrap();
    assert!(
        (s0 - 0.990196).abs() < 1e-6,
        "criterion 8: same-bin likelihood {} vs 0.990196",
        s0
    );
    let s1 = histogram_likelihood(&sim, &[0.8; 5], &spec, 0.1).unwrap();
    assert!(
        (s1 - 0.009804).abs() < 1e-6,
        "criterion 8: other-bin likelihood {} vs 0.009804",
        s1
    );
    let mut rng = StreamKey::new(88).with_str("c8").rng();
    use rand::Rng;
    let sim_u: Vec<f64> = (0..30_000).map(|_| rng.random::<f64>()).collect();
    let gt_u: Vec<f64> = (0..30_000).map(|_| rng.random::<f64>()).collect();
    let su = histogram_likelihood(&sim_u, &gt_u, &spec, 0.1).unwrap();
    assert!(
        (su - 0.5).abs() <= 0.02,
        "criterion 8: uniform likelihood {} vs 0.5 +- 0.02",
        su
    );

    // Replay dominates constant speed over a 100-scenario test split.
    let (mut scenarios, map) = synth_corpus(100, 5, 800);
    for s in scenarios.iter_mut() {
        s.split = SplitTag::Test;
    }
    let paired: Vec<(Scenario, Arc<RoadMap>)> =
        scenarios.into_iter().map(|s| (s, map.clone())).collect();
    let cfg = MetricsConfig {
        k_rollouts: 2,
        ..MetricsConfig::default()
    };
    let replay = evaluate(&paired, RolloutPolicy::Replay, &cfg, 4).unwrap();
    let constant = evaluate(&paired, RolloutPolicy::ConstantSpeed, &cfg, 4).unwrap();
    assert_eq!(replay.min_ade, 0.0, "criterion 8: replay minADE must be 0");
    for (name, a, b) in [
        ("realism", replay.realism, constant.realism),
        ("kinematic", replay.kinematic, constant.kinematic),
        ("interactive", replay.interactive, constant.interactive),
        ("map_based", replay.map_based, constant.map_based),
    ] {
        assert!(
            a >= b,
            "criterion 8: replay {} {:.4} below constant-speed {:.4}",
            name,
            a,
            b
        );
    }
    println!(
        "criterion 8: PASS (histogram oracles, replay realism {:.4} >= const {:.4}, minADE 0)",
        replay.realism, constant.realism
    );
}

/// Mean minADE of a policy over the test split.
fn mean_min_ade(
    test: &[(Scenario, Arc<RoadMap>)],
    policy: RolloutPolicy<'_>,
    k: usize,
    temperature: f64,
    seed: u64,
) -> f64 {
    let scores = noisesim::parallel::par_map(2, test.len(), |i| {
        let (scenario, map) = &test[i];
        let rollout_seed = StreamKey::new(seed)
            .with_str("ade")
            .with_str(&scenario.scenario_id)
            .value();
        let sims = rollout(scenario, map, policy, k, temperature, rollout_seed).unwrap();
        min_ade(&sims, scenario).unwrap()
    });
    scores.iter().sum::<f64>() / scores.len() as f64
}

#[test]
fn criterion_9_end_to_end_ordering() {
    let started = Instant::now();

    // Synthesize 2000 scenarios, half free-flow and half wave mode.
    let base = SynthConfig {
        vehicle_target: 6,
        lane_change_rate: 0.03,
        seed: 4242,
        ..SynthConfig::default()
    };
    let map = Arc::new(build_freeway_map(base.lanes, base.length, base.lane_width, "m"));
    let n = 2000;
    let ids: Vec<String> = (0..n).map(|i| format!("s{:05}", i)).collect();
    let splits = assign_splits(&ids, (0.8, 0.1, 0.1), base.seed).unwrap();
    let scenarios: Vec<Scenario> = noisesim::parallel::par_map(2, n, |i| {
        let cfg = SynthConfig {
            wave_mode: i % 2 == 0,
            ..base.clone()
        };
        let mut s = generate_scenario(&cfg, &map, &ids[i]).unwrap();
        s.split = splits[&ids[i]];
        s
    });

    // Corrupt train/val, keep test clean.
    let noise = NoiseConfig {
        seed: 31,
        ..NoiseConfig::default()
    };
    let mut train_scen: Vec<(Scenario, Arc<RoadMap>)> = Vec::new();
    let mut val_scen: Vec<(Scenario, Arc<RoadMap>)> = Vec::new();
    let mut test_scen: Vec<(Scenario, Arc<RoadMap>)> = Vec::new();
    for s in scenarios {
        match s.split {
            SplitTag::Train => train_scen.push((corrupt(&s, &noise).unwrap(), map.clone())),
            SplitTag::Val => val_scen.push((corrupt(&s, &noise).unwrap(), map.clone())),
            SplitTag::Test => test_scen.push((s, map.clone())),
        }
    }
    println!(
        "criterion 9: corpus ready ({} train, {} val, {} test) at {:.0} s",
        train_scen.len(),
        val_scen.len(),
        test_scen.len(),
        started.elapsed().as_secs_f64()
    );

    // Vocabulary from the noisy train split.
    let tracks: Vec<&AgentTrack> = train_scen.iter().flat_map(|(s, _)| s.tracks.iter()).collect();
    let mut deltas = extract_deltas(&tracks, 0.5).unwrap();
    {
        use rand::seq::SliceRandom;
        let mut rng = StreamKey::new(7).with_str("c9-deltas").rng();
        deltas.shuffle(&mut rng);
        deltas.truncate(120_000);
    }
    let vocab = build_vocab(&deltas, 512, 0.25, 1.0, 0.5, 7).unwrap();

    let train_set = build_samples(&train_scen, &vocab);
    let val_set = build_samples(&val_scen, &vocab);
    println!(
        "criterion 9: vocab {} templates, {} train / {} val samples at {:.0} s",
        vocab.templates.len(),
        train_set.len(),
        val_set.len(),
        started.elapsed().as_secs_f64()
    );
    let arch = Architecture::new(vocab.templates.len());
    assert!(
        arch.param_count() <= 200_000,
        "criterion 9: policy has {} parameters, budget 200k",
        arch.param_count()
    );

    let k = 4;
    let temperature = 1.0;
    let eval_seed = 99;

    let idm = IdmParams::default();
    let idm_ade = mean_min_ade(&test_scen, RolloutPolicy::Idm(&idm), k, temperature, eval_seed);
    let const_ade = mean_min_ade(
        &test_scen,
        RolloutPolicy::ConstantSpeed,
        k,
        temperature,
        eval_seed,
    );
    println!(
        "criterion 9: baselines minADE idm {:.4}, constant {:.4} at {:.0} s",
        idm_ade,
        const_ade,
        started.elapsed().as_secs_f64()
    );

    let kinds = [
        LossKind::Ce,
        LossKind::CeLabelSmoothing,
        LossKind::Focal,
        LossKind::SymmetricCe,
    ];
    let mut mean_ade = std::collections::BTreeMap::new();
    for kind in kinds {
        let spec = LossSpec::new(kind);
        let mut total = 0.0;
        for seed in [1u64, 2, 3] {
            let cfg = TrainConfig {
                epochs: 3,
                patience: 3,
                seed,
                ..TrainConfig::default()
            };
            let (params, logs) = train(&train_set, &val_set, &vocab, &spec, &cfg).unwrap();
            let policy = RolloutPolicy::Learned {
                params: &params,
                vocab: &vocab,
            };
            let ade = mean_min_ade(&test_scen, policy, k, temperature, eval_seed);
            total += ade;
            println!(
                "criterion 9: {} seed {} minADE {:.4} (val loss {:.4}) at {:.0} s",
                spec.kind.as_str(),
                seed,
                ade,
                logs.last().unwrap().val_loss,
                started.elapsed().as_secs_f64()
            );
            assert!(
                ade < idm_ade && ade < const_ade,
                "criterion 9a: learned {} seed {} minADE {:.4} does not beat idm {:.4} / const {:.4}",
                spec.kind.as_str(),
                seed,
                ade,
                idm_ade,
                const_ade
            );
        }
        mean_ade.insert(kind.as_str(), total / 3.0);
    }

    let ce = mean_ade["ce"];
    for noise_aware in ["ls", "focal", "sce"] {
        assert!(
            mean_ade[noise_aware] <= ce,
            "criterion 9b: {} mean minADE {:.4} above ce {:.4}",
            noise_aware,
            mean_ade[noise_aware],
            ce
        );
    }
    println!(
        "criterion 9: PASS in {:.0} s (minADE idm {:.3} const {:.3} ce {:.3} ls {:.3} focal {:.3} sce {:.3})",
        started.elapsed().as_secs_f64(),
        idm_ade,
        const_ade,
        mean_ade["ce"],
        mean_ade["ls"],
        mean_ade["focal"],
        mean_ade["sce"]
    );
    assert!(
        started.elapsed().as_secs_f64() < 3600.0,
        "criterion 9: exceeded the 60 min budget"
    );
}

#[test]
fn criterion_10_stage_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config_path = root.join("config.json");
    std::fs::write(
        &config_path,
        r#"{
            "seed": 11,
            "synth": {"scenario_count": 30, "lanes": 2, "length": 700.0,
                      "vehicle_target": 5, "desired_speed_range": [16.0, 24.0],
                      "initial_gap_range": [18.0, 45.0], "lane_change_rate": 0.03,
                      "wave_mode": false, "wave_fraction": 0.5, "densify_points": 2,
                      "idm": {"v0": 30.0, "T": 1.5, "a": 1.0, "b": 1.5, "s0": 2.0},
                      "seed": 0},
            "train": {"epochs": 2, "batch_size": 128},
            "metrics": {"k_rollouts": 2},
            "tokenizer": {"vocab_size": 64}
        }"#,
    )
    .unwrap();
    let cfg_arg = config_path.to_str().unwrap().to_string();

    let run_stage = |args: &[&str]| {
        let code = noisesim::cli::run(args);
        assert_eq!(code, 0, "criterion 10: stage {:?} failed", args);
    };

    let hash_tree = |dir: &std::path::Path| -> Vec<(String, u64)> {
        let mut files: Vec<std::path::PathBuf> = walk(dir);
        files.sort();
        files
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).unwrap();
                let mut h: u64 = 0xcbf29ce484222325;
                for b in bytes {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
                (
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    h,
                )
            })
            .collect()
    };

    fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        if let Ok(entries) = std::fs::read_dir(dir) {
            for e in entries.flatten() {
                let p = e.path();
                if p.is_dir() {
                    out.extend(walk(&p));
                } else {
                    out.push(p);
                }
            }
        }
        out
    }

    // Two synth runs with different job counts must agree byte-for-byte.
    let (s1, s2) = (root.join("c1"), root.join("c2"));
    run_stage(&["synth", "--config", &cfg_arg, "--out", s1.to_str().unwrap(), "--jobs", "1"]);
    run_stage(&["synth", "--config", &cfg_arg, "--out", s2.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(hash_tree(&s1), hash_tree(&s2), "criterion 10: synth not deterministic");

    let (n1, n2) = (root.join("n1"), root.join("n2"));
    run_stage(&[
        "corrupt", s1.to_str().unwrap(), "--config", &cfg_arg, "--out", n1.to_str().unwrap(),
        "--jobs", "2",
    ]);
    run_stage(&[
        "corrupt", s2.to_str().unwrap(), "--config", &cfg_arg, "--out", n2.to_str().unwrap(),
        "--jobs", "1",
    ]);
    assert_eq!(hash_tree(&n1), hash_tree(&n2), "criterion 10: corrupt not deterministic");

    let (cl1, cl2) = (root.join("cl1"), root.join("cl2"));
    run_stage(&[
        "clean", n1.to_str().unwrap(), "--config", &cfg_arg, "--out", cl1.to_str().unwrap(),
        "--jobs", "1",
    ]);
    run_stage(&[
        "clean", n2.to_str().unwrap(), "--config", &cfg_arg, "--out", cl2.to_str().unwrap(),
        "--jobs", "2",
    ]);
    assert_eq!(hash_tree(&cl1), hash_tree(&cl2), "criterion 10: clean not deterministic");

    let (v1, v2) = (root.join("v1.json"), root.join("v2.json"));
    run_stage(&["vocab", n1.to_str().unwrap(), "--config", &cfg_arg, "--out", v1.to_str().unwrap()]);
    run_stage(&["vocab", n2.to_str().unwrap(), "--config", &cfg_arg, "--out", v2.to_str().unwrap()]);
    assert_eq!(
        std::fs::read(&v1).unwrap(),
        std::fs::read(&v2).unwrap(),
        "criterion 10: vocab not deterministic"
    );

    let (t1, t2) = (root.join("p1.ckpt"), root.join("p2.ckpt"));
    run_stage(&[
        "train", n1.to_str().unwrap(), "--config", &cfg_arg, "--vocab", v1.to_str().unwrap(),
        "--out", t1.to_str().unwrap(), "--loss", "ce",
    ]);
    run_stage(&[
        "train", n2.to_str().unwrap(), "--config", &cfg_arg, "--vocab", v2.to_str().unwrap(),
        "--out", t2.to_str().unwrap(), "--loss", "ce",
    ]);
    assert_eq!(
        std::fs::read(&t1).unwrap(),
        std::fs::read(&t2).unwrap(),
        "criterion 10: checkpoints not deterministic"
    );

    let (e1, e2) = (root.join("e1.json"), root.join("e2.json"));
    run_stage(&[
        "eval", s1.to_str().unwrap(), "--config", &cfg_arg, "--out", e1.to_str().unwrap(),
        "--policy", "learned", "--ckpt", t1.to_str().unwrap(), "--vocab", v1.to_str().unwrap(),
        "--jobs", "2",
    ]);
    run_stage(&[
        "eval", s2.to_str().unwrap(), "--config", &cfg_arg, "--out", e2.to_str().unwrap(),
        "--policy", "learned", "--ckpt", t2.to_str().unwrap(), "--vocab", v2.to_str().unwrap(),
        "--jobs", "1",
    ]);
    assert_eq!(
        std::fs::read(&e1).unwrap(),
        std::fs::read(&e2).unwrap(),
        "criterion 10: metrics reports not deterministic"
    );

    println!("criterion 10: PASS (byte-identical stages, independent of --jobs)");
}
