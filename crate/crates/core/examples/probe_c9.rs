use noisesim::io::assign_splits;
use noisesim::losses::{LossKind, LossSpec};
use noisesim::metrics::min_ade;
use noisesim::model::{AgentTrack, RoadMap, Scenario, SplitTag};
use noisesim::noise::{corrupt, NoiseConfig};
use noisesim::policy::{rollout, RolloutPolicy};
use noisesim::rng::StreamKey;
use noisesim::synth::{build_freeway_map, generate_scenario, SynthConfig};
use noisesim::tokenizer::{build_vocab, extract_deltas};
use noisesim::training::{build_samples, train, TrainConfig};
use std::sync::Arc;

fn mean_ade(test: &[(Scenario, Arc<RoadMap>)], pol: RolloutPolicy<'_>, k: usize, temp: f64) -> f64 {
    let scores = noisesim::parallel::par_map(2, test.len(), |i| {
        let (s, m) = &test[i];
        let seed = StreamKey::new(99).with_str("ade").with_str(&s.scenario_id).value();
        let sims = rollout(s, m, pol, k, temp, seed).unwrap();
        min_ade(&sims, s).unwrap()
    });
    scores.iter().sum::<f64>() / scores.len() as f64
}

fn main() {
    let t0 = std::time::Instant::now();
    let base = SynthConfig { vehicle_target: 6, lane_change_rate: 0.03, seed: 4242, ..SynthConfig::default() };
    let map = Arc::new(build_freeway_map(base.lanes, base.length, base.lane_width, "m"));
    let n = 2000;
    let ids: Vec<String> = (0..n).map(|i| format!("s{:05}", i)).collect();
    let splits = assign_splits(&ids, (0.8, 0.1, 0.1), base.seed).unwrap();
    let scenarios: Vec<Scenario> = noisesim::parallel::par_map(2, n, |i| {
        let cfg = SynthConfig { wave_mode: i % 2 == 0, ..base.clone() };
        let mut s = generate_scenario(&cfg, &map, &ids[i]).unwrap();
        s.split = splits[&ids[i]];
        s
    });
    let noise = NoiseConfig {
        jitter_sigma_xy: 0.07,
        jitter_sigma_heading: 0.015,
        dropout_rate: 0.03,
        occlusion_rate: 0.4,
        occlusion_mean_len: 8.0,
        fragmentation_rate: 0.15,
        seed: 31,
    };
    let mut train_scen = Vec::new(); let mut val_scen = Vec::new(); let mut test_scen = Vec::new();
    for s in scenarios {
        match s.split {
            SplitTag::Train => train_scen.push((corrupt(&s, &noise).unwrap(), map.clone())),
            SplitTag::Val => val_scen.push((corrupt(&s, &noise).unwrap(), map.clone())),
            SplitTag::Test => test_scen.push((s, map.clone())),
        }
    }
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

    let idm = noisesim::policy::IdmParams::default();
    println!("idm {:.3} const {:.3} ({} samples, {:.0}s)",
        mean_ade(&test_scen, RolloutPolicy::Idm(&idm), 1, 0.0),
        mean_ade(&test_scen, RolloutPolicy::ConstantSpeed, 1, 0.0),
        train_set.len(), t0.elapsed().as_secs_f64());

    for kind in [LossKind::Ce, LossKind::CeLabelSmoothing, LossKind::Focal, LossKind::SymmetricCe] {
        let spec = LossSpec::new(kind);
        let cfg = TrainConfig { epochs: 8, patience: 8, seed: 1, ..TrainConfig::default() };
        let (params, logs) = train(&train_set, &val_set, &vocab, &spec, &cfg).unwrap();
        let l = logs.last().unwrap();
        let pol = RolloutPolicy::Learned { params: &params, vocab: &vocab };
        println!("{}: val {:.3} | T.7 {:.3} T.5 {:.3} T.35 {:.3} ({:.0}s)",
            spec.kind.as_str(), l.val_loss,
            mean_ade(&test_scen, pol, 32, 0.7),
            mean_ade(&test_scen, pol, 32, 0.5),
            mean_ade(&test_scen, pol, 32, 0.35),
            t0.elapsed().as_secs_f64());
    }
}
