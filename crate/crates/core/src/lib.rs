//! Noise-aware generative freeway traffic simulation toolkit.
//!
//! The pipeline runs end to end on synthetic data: generate clean ground
//! truth, corrupt it with an observation-noise process, clean it with
//! deterministic postprocessing filters, tokenize motion, train
//! autoregressive sim-agent policies under noise-aware losses, roll out
//! closed-loop simulations, and score them with likelihood-based metrics.

pub mod cleaning;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod logging;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod net;
pub mod noise;
pub mod parallel;
pub mod policy;
pub mod report;
pub mod rng;
pub mod road;
pub mod synth;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
pub use model::{
    validate_scenario, AgentState, AgentTrack, Provenance, RoadMap, Scenario, SplitTag,
};
