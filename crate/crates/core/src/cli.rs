//! Command-line pipeline: synth -> corrupt -> clean -> vocab -> train ->
//! rollout -> eval -> report. Every subcommand is deterministic given its
//! config and seed; `--jobs` only changes wall time, never output bytes.

use std::path::PathBuf;

use crate::cleaning;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io::{self, CorpusReader};
use crate::logging;
use crate::losses::{LossKind, LossSpec};
use crate::metrics::{self, MetricsReport};
use crate::model::{RoadMap, Scenario, SplitTag};
use crate::net::{self, PolicyParameters};
use crate::noise;
use crate::parallel::par_map;
use crate::policy::RolloutPolicy;
use crate::report;
use crate::rng::StreamKey;
use crate::road::densify_polyline;
use crate::synth::{self, SynthConfig};
use crate::tokenizer::{self, TokenVocab};
use crate::training;

const USAGE: &str = "\
noisesim - noise-aware generative freeway traffic simulation pipeline

USAGE:
  noisesim <SUBCOMMAND> [OPTIONS]

SUBCOMMANDS:
  synth    --out DIR                 Generate a clean synthetic corpus
  corrupt  IN --out DIR              Corrupt train/val splits, copy test clean
  clean    IN --out DIR              Apply the postprocessing filters
  vocab    IN --out FILE             Build the motion-token vocabulary
  train    IN --vocab FILE --out FILE   Train the next-token policy
  rollout  IN --out DIR              Write K closed-loop rollouts per scenario
  eval     IN --out FILE             Score a policy with the metrics suite
  report   IN [--out DIR]            Corpus summary stats (JSON + SVG) and
                                     optional results table from metric files

COMMON OPTIONS:
  --config FILE          Pipeline config JSON (defaults are built in)
  --seed N               Master seed override (re-derives stage seeds)
  --jobs N               Scenario-level parallelism (default 1)
  --split S              Split filter: train | val | test
  --out PATH             Output directory or file
  --gzip                 Write scenario files gzip-compressed

TRAIN OPTIONS:
  --loss {ce|ls|focal|sce}   Loss function (default ce)
  --epsilon-smooth X  --gamma X  --alpha X  --beta X  --eta X
  --epochs N             Override epoch budget
  --log FILE             Training log path (JSON lines)

ROLLOUT / EVAL OPTIONS:
  --policy {idm|const|learned|replay}
  --ckpt FILE            Checkpoint for the learned policy
  --vocab FILE           Vocabulary for the learned policy
  --k-rollouts N         Rollouts per scenario
  --temperature X        Sampling temperature

REPORT OPTIONS:
  --metrics NAME=FILE    Add a metrics report row (repeatable)

ENVIRONMENT:
  NOISESIM_LOG           off | error | warn | info | debug

EXIT CODES:
  0 success, 1 runtime/validation failure, 2 usage error
";

#[derive(Default)]
struct Options {
    input: Option<PathBuf>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    jobs: usize,
    split: Option<SplitTag>,
    gzip: bool,
    loss: Option<LossKind>,
    epsilon_smooth: Option<f64>,
    gamma: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    eta: Option<f64>,
    epochs: Option<usize>,
    log_path: Option<PathBuf>,
    policy: Option<String>,
    ckpt: Option<PathBuf>,
    vocab: Option<PathBuf>,
    k_rollouts: Option<usize>,
    temperature: Option<f64>,
    metrics_rows: Vec<(String, PathBuf)>,
}

fn parse_options(args: &[String]) -> std::result::Result<Options, String> {
    let mut opts = Options {
        jobs: 1,
        ..Options::default()
    };
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let mut take = |name: &str| -> std::result::Result<String, String> {
            it.next()
                .cloned()
                .ok_or_else(|| format!("missing value for {}", name))
        };
        match arg.as_str() {
            "--config" => opts.config = Some(PathBuf::from(take("--config")?)),
            "--out" => opts.out = Some(PathBuf::from(take("--out")?)),
            "--seed" => {
                opts.seed = Some(
                    take("--seed")?
                        .parse()
                        .map_err(|_| "invalid --seed".to_string())?,
                )
            }
            "--jobs" => {
                opts.jobs = take("--jobs")?
                    .parse()
                    .map_err(|_| "invalid --jobs".to_string())?
            }
            "--split" => {
                let v = take("--split")?;
                opts.split =
                    Some(SplitTag::parse(&v).ok_or_else(|| format!("invalid --split '{}'", v))?)
            }
            "--gzip" => opts.gzip = true,
            "--loss" => {
                let v = take("--loss")?;
                opts.loss =
                    Some(LossKind::parse(&v).ok_or_else(|| format!("invalid --loss '{}'", v))?)
            }
            "--epsilon-smooth" => opts.epsilon_smooth = Some(parse_f64(&take("--epsilon-smooth")?)?),
            "--gamma" => opts.gamma = Some(parse_f64(&take("--gamma")?)?),
            "--alpha" => opts.alpha = Some(parse_f64(&take("--alpha")?)?),
            "--beta" => opts.beta = Some(parse_f64(&take("--beta")?)?),
            "--eta" => opts.eta = Some(parse_f64(&take("--eta")?)?),
            "--epochs" => {
                opts.epochs = Some(
                    take("--epochs")?
                        .parse()
                        .map_err(|_| "invalid --epochs".to_string())?,
                )
            }
            "--log" => opts.log_path = Some(PathBuf::from(take("--log")?)),
            "--policy" => opts.policy = Some(take("--policy")?),
            "--ckpt" => opts.ckpt = Some(PathBuf::from(take("--ckpt")?)),
            "--vocab" => opts.vocab = Some(PathBuf::from(take("--vocab")?)),
            "--k-rollouts" => {
                opts.k_rollouts = Some(
                    take("--k-rollouts")?
                        .parse()
                        .map_err(|_| "invalid --k-rollouts".to_string())?,
                )
            }
            "--temperature" => opts.temperature = Some(parse_f64(&take("--temperature")?)?),
            "--metrics" => {
                let v = take("--metrics")?;
                let (name, path) = v
                    .split_once('=')
                    .ok_or_else(|| format!("--metrics expects NAME=FILE, got '{}'", v))?;
                opts.metrics_rows
                    .push((name.to_string(), PathBuf::from(path)));
            }
            other if other.starts_with('-') => {
                return Err(format!("unknown option: {}", other));
            }
            other => {
                if opts.input.is_some() {
                    return Err(format!("unexpected argument: {}", other));
                }
                opts.input = Some(PathBuf::from(other));
            }
        }
    }
    Ok(opts)
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse().map_err(|_| format!("invalid number '{}'", s))
}

fn load_config(opts: &Options) -> Result<PipelineConfig> {
    let mut cfg = match &opts.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let mut c = PipelineConfig::default();
            c.derive_section_seeds();
            c
        }
    };
    if let Some(seed) = opts.seed {
        cfg = cfg.with_master_seed(seed);
    }
    if let Some(k) = opts.k_rollouts {
        cfg.metrics.k_rollouts = k;
    }
    if let Some(t) = opts.temperature {
        cfg.metrics.temperature = t;
    }
    if let Some(e) = opts.epochs {
        cfg.train.epochs = e;
    }
    Ok(cfg)
}

fn loss_spec_from(opts: &Options) -> LossSpec {
    let mut spec = LossSpec::new(opts.loss.unwrap_or(LossKind::Ce));
    if let Some(v) = opts.epsilon_smooth {
        spec.epsilon_smooth = v;
    }
    if let Some(v) = opts.gamma {
        spec.gamma = v;
    }
    if let Some(v) = opts.alpha {
        spec.alpha = v;
    }
    if let Some(v) = opts.beta {
        spec.beta = v;
    }
    if let Some(v) = opts.eta {
        spec.eta = v;
    }
    spec
}

fn require_input(opts: &Options) -> std::result::Result<&PathBuf, String> {
    opts.input
        .as_ref()
        .ok_or_else(|| "missing input corpus directory".to_string())
}

fn require_out(opts: &Options) -> std::result::Result<&PathBuf, String> {
    opts.out.as_ref().ok_or_else(|| "missing --out".to_string())
}

/// Entry point used by main() and tests. Returns the process exit code.
pub fn run_command(args: &[String]) -> i32 {
    let Some(subcommand) = args.first() else {
        eprintln!("{}", USAGE);
        return 2;
    };
    if subcommand == "--help" || subcommand == "-h" || subcommand == "help" {
        println!("{}", USAGE);
        return 0;
    }
    let opts = match parse_options(&args[1..]) {
        Ok(o) => o,
        Err(msg) => {
            eprintln!("error: {}\n\n{}", msg, USAGE);
            return 2;
        }
    };

    let result = match subcommand.as_str() {
        "synth" => cmd_synth(&opts),
        "corrupt" => cmd_corrupt(&opts),
        "clean" => cmd_clean(&opts),
        "vocab" => cmd_vocab(&opts),
        "train" => cmd_train(&opts),
        "rollout" => cmd_rollout(&opts),
        "eval" => cmd_eval(&opts),
        "report" => cmd_report(&opts),
        other => {
            eprintln!("unknown subcommand: {}\n\n{}", other, USAGE);
            return 2;
        }
    };
    match result {
        Ok(UsageOr::Ok) => 0,
        Ok(UsageOr::Usage(msg)) => {
            eprintln!("error: {}\n\n{}", msg, USAGE);
            2
        }
        Err(err) => {
            eprintln!("error [{}]: {}", err.code(), err);
            1
        }
    }
}

enum UsageOr {
    Ok,
    Usage(String),
}

type CmdResult = Result<UsageOr>;

macro_rules! usage_try {
    ($expr:expr) => {
        match $expr {
            Ok(v) => v,
            Err(msg) => return Ok(UsageOr::Usage(msg)),
        }
    };
}

fn cmd_synth(opts: &Options) -> CmdResult {
    let out = usage_try!(require_out(opts));
    let cfg = load_config(opts)?;
    let section = &cfg.synth;
    section.base.check()?;

    let base_map = synth::build_freeway_map(
        section.base.lanes,
        section.base.length,
        section.base.lane_width,
        "freeway",
    );
    let mut written_map = base_map.clone();
    if section.densify_points > 0 {
        written_map.polylines = base_map
            .polylines
            .iter()
            .map(|p| densify_polyline(p, section.densify_points))
            .collect::<Result<Vec<_>>>()?;
    }

    let n = section.scenario_count;
    let ids: Vec<String> = (0..n).map(|i| format!("s{:06}", i)).collect();
    let splits = io::assign_splits(&ids, section.split_ratios, section.base.seed)?;

    // Bresenham-style interleaving gives an exact wave fraction.
    let wave_at = |i: usize| {
        let f = section.wave_fraction;
        ((i + 1) as f64 * f).floor() > (i as f64 * f).floor()
    };

    let scenarios: Vec<Result<Scenario>> = par_map(opts.jobs, n, |i| {
        let scenario_cfg = SynthConfig {
            wave_mode: wave_at(i),
            ..section.base.clone()
        };
        let mut s = synth::generate_scenario(&scenario_cfg, &base_map, &ids[i])?;
        s.split = splits[&ids[i]];
        s.map_id = written_map.map_id.clone();
        Ok(s)
    });
    let scenarios: Vec<Scenario> = scenarios.into_iter().collect::<Result<Vec<_>>>()?;

    let manifest = io::write_corpus(&scenarios, &[written_map], out, opts.gzip)?;
    logging::info(&format!(
        "synth: wrote {} scenarios (train {}, val {}, test {}) to {}",
        n,
        manifest.counts.train,
        manifest.counts.val,
        manifest.counts.test,
        out.display()
    ));
    println!(
        "synth: {} scenarios -> {} (train {}, val {}, test {})",
        n,
        out.display(),
        manifest.counts.train,
        manifest.counts.val,
        manifest.counts.test
    );
    Ok(UsageOr::Ok)
}

fn cmd_corrupt(opts: &Options) -> CmdResult {
    let input = usage_try!(require_input(opts));
    let out = usage_try!(require_out(opts));
    let cfg = load_config(opts)?;
    cfg.noise.check()?;

    let reader = CorpusReader::open(input, None)?;
    let loaded = reader.load_all()?;
    let maps: Vec<RoadMap> = reader.maps().values().map(|m| (**m).clone()).collect();

    let outputs: Vec<Result<Scenario>> = par_map(opts.jobs, loaded.len(), |i| {
        let (scenario, _) = &loaded[i];
        match scenario.split {
            // Test stays the curated clean reference.
            SplitTag::Test => Ok(scenario.clone()),
            _ => noise::corrupt(scenario, &cfg.noise),
        }
    });
    let scenarios = outputs.into_iter().collect::<Result<Vec<_>>>()?;
    io::write_corpus(&scenarios, &maps, out, opts.gzip)?;
    println!("corrupt: {} scenarios -> {}", scenarios.len(), out.display());
    Ok(UsageOr::Ok)
}

fn cmd_clean(opts: &Options) -> CmdResult {
    let input = usage_try!(require_input(opts));
    let out = usage_try!(require_out(opts));
    let cfg = load_config(opts)?;

    let reader = CorpusReader::open(input, None)?;
    let loaded = reader.load_all()?;
    let maps: Vec<RoadMap> = reader.maps().values().map(|m| (**m).clone()).collect();

    let outputs: Vec<Scenario> = par_map(opts.jobs, loaded.len(), |i| {
        let (scenario, map) = &loaded[i];
        let selected = opts.split.is_none_or(|s| scenario.split == s);
        // The test split is clean by construction and must stay that way.
        if !selected || scenario.split == SplitTag::Test {
            scenario.clone()
        } else {
            cleaning::clean(scenario, map, &cfg.cleaning)
        }
    });
    let kept: usize = outputs.iter().map(|s| s.tracks.len()).sum();
    let before: usize = loaded.iter().map(|(s, _)| s.tracks.len()).sum();
    io::write_corpus(&outputs, &maps, out, opts.gzip)?;
    println!(
        "clean: {} scenarios, tracks {} -> {} ({})",
        outputs.len(),
        before,
        kept,
        out.display()
    );
    Ok(UsageOr::Ok)
}

fn cmd_vocab(opts: &Options) -> CmdResult {
    let input = usage_try!(require_input(opts));
    let out = usage_try!(require_out(opts));
    let cfg = load_config(opts)?;
    let split = opts.split.unwrap_or(SplitTag::Train);

    let reader = CorpusReader::open(input, Some(split))?;
    let loaded = reader.load_all()?;
    let tracks: Vec<&crate::model::AgentTrack> =
        loaded.iter().flat_map(|(s, _)| s.tracks.iter()).collect();
    let mut deltas = tokenizer::extract_deltas(&tracks, cfg.tokenizer.token_period)?;

    if deltas.len() > cfg.tokenizer.max_build_deltas {
        use rand::seq::SliceRandom;
        let mut rng = StreamKey::new(cfg.tokenizer.seed).with_str("delta-subsample").rng();
        deltas.shuffle(&mut rng);
        deltas.truncate(cfg.tokenizer.max_build_deltas);
    }

    let vocab = tokenizer::build_vocab(
        &deltas,
        cfg.tokenizer.vocab_size,
        cfg.tokenizer.epsilon,
        cfg.tokenizer.w_h,
        cfg.tokenizer.token_period,
        cfg.tokenizer.seed,
    )?;
    vocab.save(out)?;
    println!(
        "vocab: {} templates, radius {:.3}, {} doublings -> {}",
        vocab.templates.len(),
        vocab.coverage_radius,
        vocab.epsilon_doublings,
        out.display()
    );
    Ok(UsageOr::Ok)
}

fn cmd_train(opts: &Options) -> CmdResult {
    let input = usage_try!(require_input(opts));
    let out = usage_try!(require_out(opts));
    let vocab_path = usage_try!(opts
        .vocab
        .as_ref()
        .ok_or_else(|| "train requires --vocab".to_string()));
    let cfg = load_config(opts)?;
    let vocab = TokenVocab::load(vocab_path)?;
    let loss_spec = loss_spec_from(opts);

    let train_reader = CorpusReader::open(input, Some(SplitTag::Train))?;
    let train_scenarios = train_reader.load_all()?;
    let val_reader = CorpusReader::open(input, Some(SplitTag::Val))?;
    let val_scenarios = val_reader.load_all()?;

    let train_set = training::build_samples(&train_scenarios, &vocab);
    let val_set = training::build_samples(&val_scenarios, &vocab);
    logging::info(&format!(
        "train: {} train samples, {} val samples, loss {}",
        train_set.len(),
        val_set.len(),
        loss_spec.kind.as_str()
    ));

    let (params, logs) = training::train(&train_set, &val_set, &vocab, &loss_spec, &cfg.train)?;
    net::save_checkpoint(&params, &vocab.digest(), out)?;

    let log_path = opts
        .log_path
        .clone()
        .unwrap_or_else(|| out.with_extension("log.jsonl"));
    let mut log_text = String::new();
    for entry in &logs {
        log_text.push_str(&serde_json::to_string(entry).expect("log serializes"));
        log_text.push('\n');
    }
    std::fs::write(&log_path, log_text)
        .map_err(|e| Error::io(log_path.display().to_string(), e))?;

    let last = logs.last().expect("at least one epoch");
    println!(
        "train: loss {} epochs {} train_loss {:.4} val_loss {:.4} -> {}",
        loss_spec.kind.as_str(),
        logs.len(),
        last.train_loss,
        last.val_loss,
        out.display()
    );
    Ok(UsageOr::Ok)
}

struct LoadedPolicy {
    params: Option<PolicyParameters>,
    vocab: Option<TokenVocab>,
    idm: crate::policy::IdmParams,
    name: String,
}

fn load_policy(opts: &Options, cfg: &PipelineConfig) -> Result<LoadedPolicy> {
    let name = opts.policy.clone().unwrap_or_else(|| "const".to_string());
    match name.as_str() {
        "idm" | "const" | "replay" => Ok(LoadedPolicy {
            params: None,
            vocab: None,
            idm: cfg.synth.base.idm,
            name,
        }),
        "learned" => {
            let ckpt = opts.ckpt.as_ref().ok_or_else(|| Error::BadConfig {
                detail: "learned policy requires --ckpt".to_string(),
            })?;
            let vocab_path = opts.vocab.as_ref().ok_or_else(|| Error::BadConfig {
                detail: "learned policy requires --vocab".to_string(),
            })?;
            let (params, vocab_hash) = net::load_checkpoint(ckpt)?;
            let vocab = TokenVocab::load(vocab_path)?;
            if vocab.digest() != vocab_hash {
                return Err(Error::ShapeMismatch {
                    detail: "checkpoint was trained with a different vocabulary".to_string(),
                });
            }
            Ok(LoadedPolicy {
                params: Some(params),
                vocab: Some(vocab),
                idm: cfg.synth.base.idm,
                name,
            })
        }
        other => Err(Error::BadConfig {
            detail: format!("unknown policy '{}'", other),
        }),
    }
}

impl LoadedPolicy {
    fn as_rollout(&self) -> RolloutPolicy<'_> {
        match self.name.as_str() {
            "idm" => RolloutPolicy::Idm(&self.idm),
            "replay" => RolloutPolicy::Replay,
            "learned" => RolloutPolicy::Learned {
                params: self.params.as_ref().expect("loaded"),
                vocab: self.vocab.as_ref().expect("loaded"),
            },
            _ => RolloutPolicy::ConstantSpeed,
        }
    }
}

fn cmd_rollout(opts: &Options) -> CmdResult {
    let input = usage_try!(require_input(opts));
    let out = usage_try!(require_out(opts));
    let cfg = load_config(opts)?;
    let policy = load_policy(opts, &cfg)?;
    let split = opts.split.unwrap_or(SplitTag::Test);

    let reader = CorpusReader::open(input, Some(split))?;
    let loaded = reader.load_all()?;
    if loaded.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let maps: Vec<RoadMap> = reader.maps().values().map(|m| (**m).clone()).collect();

    let per_scenario: Vec<Result<Vec<Scenario>>> = par_map(opts.jobs, loaded.len(), |i| {
        let (scenario, map) = &loaded[i];
        let seed = StreamKey::new(cfg.seed)
            .with_str("rollout")
            .with_str(&scenario.scenario_id)
            .value();
        let sims = crate::policy::rollout(
            scenario,
            map,
            policy.as_rollout(),
            cfg.metrics.k_rollouts,
            cfg.metrics.temperature,
            seed,
        )?;
        Ok(sims
            .into_iter()
            .enumerate()
            .map(|(k, mut s)| {
                s.scenario_id = format!("{}_r{}", scenario.scenario_id, k);
                s
            })
            .collect())
    });
    let mut all = Vec::new();
    for group in per_scenario {
        all.extend(group?);
    }
    io::write_corpus(&all, &maps, out, opts.gzip)?;
    println!(
        "rollout: {} x {} rollouts ({}) -> {}",
        loaded.len(),
        cfg.metrics.k_rollouts,
        policy.name,
        out.display()
    );
    Ok(UsageOr::Ok)
}

fn cmd_eval(opts: &Options) -> CmdResult {
    let input = usage_try!(require_input(opts));
    let out = usage_try!(require_out(opts));
    let cfg = load_config(opts)?;
    let policy = load_policy(opts, &cfg)?;
    let split = opts.split.unwrap_or(SplitTag::Test);

    let reader = CorpusReader::open(input, Some(split))?;
    let loaded = reader.load_all()?;
    if loaded.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let scores: Vec<Result<metrics::ScenarioScore>> = par_map(opts.jobs, loaded.len(), |i| {
        let (scenario, map) = &loaded[i];
        metrics::evaluate_scenario(scenario, map, policy.as_rollout(), &cfg.metrics, cfg.seed)
    });
    let per_scenario = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let report = metrics::aggregate_report(
        policy.as_rollout().name(),
        &cfg.metrics,
        cfg.seed,
        per_scenario,
    );
    report.save(out)?;
    println!(
        "eval: {} on {} scenarios: realism {:.4} kinematic {:.4} interactive {:.4} map {:.4} minADE {:.4}",
        report.policy,
        report.scenario_count,
        report.realism,
        report.kinematic,
        report.interactive,
        report.map_based,
        report.min_ade
    );
    Ok(UsageOr::Ok)
}

fn cmd_report(opts: &Options) -> CmdResult {
    let input = usage_try!(require_input(opts));
    let out_dir = opts
        .out
        .clone()
        .unwrap_or_else(|| input.join("report"));

    let reader = CorpusReader::open(input, opts.split)?;
    let loaded = reader.load_all()?;
    let scenarios: Vec<Scenario> = loaded.into_iter().map(|(s, _)| s).collect();
    let summary = report::corpus_summary(&scenarios);
    report::write_summary(&summary, &out_dir)?;
    println!(
        "report: {} scenarios summarized -> {}",
        summary.scenario_count,
        out_dir.display()
    );

    if !opts.metrics_rows.is_empty() {
        let mut rows = Vec::new();
        for (name, path) in &opts.metrics_rows {
            rows.push((name.clone(), MetricsReport::load(path)?));
        }
        let table = report::render_results_table(&rows);
        let table_path = out_dir.join("results_table.txt");
        std::fs::write(&table_path, &table)
            .map_err(|e| Error::io(table_path.display().to_string(), e))?;
        print!("{}", table);
    }
    Ok(UsageOr::Ok)
}

/// Convenience wrapper for string-literal argument lists in tests.
pub fn run(args: &[&str]) -> i32 {
    let owned: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    run_command(&owned)
}
