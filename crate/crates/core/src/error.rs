//! Crate-wide error type. Every failure mode carries a stable string code
//! that the CLI and tests match on.

use std::fmt;

use crate::model::Violation;

#[derive(Debug)]
pub enum Error {
    /// A scenario failed validation against its map; nothing was written.
    ValidationFailed {
        scenario_id: String,
        violations: Vec<Violation>,
    },
    Io {
        path: String,
        source: std::io::Error,
    },
    UnsupportedSchema {
        found: u32,
    },
    CorruptCorpus {
        detail: String,
    },
    EmptyCorpus,
    BadSplitRatios {
        sum: f64,
    },
    Overcrowded {
        detail: String,
    },
    DoubleCorruption {
        scenario_id: String,
    },
    NoCenterlines,
    RoadEdgeCount {
        found: usize,
    },
    DegeneratePolyline,
    NoDeltas,
    NonpositiveGap {
        gap: f64,
    },
    NoPairs,
    ShapeMismatch {
        detail: String,
    },
    NoSamples {
        split: String,
    },
    Diverged {
        epoch: usize,
    },
    NoGroundTruth,
    NoSimValues,
    NoOverlap,
    MissingHistory {
        agent_id: u32,
    },
    BadConfig {
        detail: String,
    },
}

impl Error {
    /// Stable machine-readable code for this error.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ValidationFailed { .. } => "validation-failed",
            Error::Io { .. } => "io",
            Error::UnsupportedSchema { .. } => "unsupported-schema",
            Error::CorruptCorpus { .. } => "corrupt-corpus",
            Error::EmptyCorpus => "empty-corpus",
            Error::BadSplitRatios { .. } => "bad-split-ratios",
            Error::Overcrowded { .. } => "overcrowded",
            Error::DoubleCorruption { .. } => "double-corruption",
            Error::NoCenterlines => "no-centerlines",
            Error::RoadEdgeCount { .. } => "road-edge-count",
            Error::DegeneratePolyline => "degenerate-polyline",
            Error::NoDeltas => "no-deltas",
            Error::NonpositiveGap { .. } => "nonpositive-gap",
            Error::NoPairs => "no-pairs",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::NoSamples { .. } => "no-samples",
            Error::Diverged { .. } => "diverged",
            Error::NoGroundTruth => "no-ground-truth",
            Error::NoSimValues => "no-simulation",
            Error::NoOverlap => "no-overlap",
            Error::MissingHistory { .. } => "missing-history",
            Error::BadConfig { .. } => "bad-config",
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ValidationFailed {
                scenario_id,
                violations,
            } => {
                write!(
                    f,
                    "validation-failed: scenario '{}' has {} violation(s)",
                    scenario_id,
                    violations.len()
                )?;
                for v in violations.iter().take(5) {
                    write!(f, "; {}", v)?;
                }
                Ok(())
            }
            Error::Io { path, source } => write!(f, "io: {}: {}", path, source),
            Error::UnsupportedSchema { found } => {
                write!(f, "unsupported-schema: schema_version {}", found)
            }
            Error::CorruptCorpus { detail } => write!(f, "corrupt-corpus: {}", detail),
            Error::EmptyCorpus => write!(f, "empty-corpus: no scenario ids"),
            Error::BadSplitRatios { sum } => {
                write!(f, "bad-split-ratios: ratios sum to {}", sum)
            }
            Error::Overcrowded { detail } => write!(f, "overcrowded: {}", detail),
            Error::DoubleCorruption { scenario_id } => {
                write!(f, "double-corruption: scenario '{}' is not clean", scenario_id)
            }
            Error::NoCenterlines => write!(f, "no-centerlines: map has no centerline polylines"),
            Error::RoadEdgeCount { found } => {
                write!(f, "road-edge-count: expected 2 road edges, found {}", found)
            }
            Error::DegeneratePolyline => {
                write!(f, "degenerate-polyline: fewer than 2 points")
            }
            Error::NoDeltas => write!(f, "no-deltas: empty motion delta set"),
            Error::NonpositiveGap { gap } => write!(f, "nonpositive-gap: gap = {}", gap),
            Error::NoPairs => write!(f, "no-pairs: no car-following pairs found"),
            Error::ShapeMismatch { detail } => write!(f, "shape-mismatch: {}", detail),
            Error::NoSamples { split } => {
                write!(f, "no-samples: tokenized '{}' split is empty", split)
            }
            Error::Diverged { epoch } => {
                write!(f, "diverged: non-finite loss at epoch {}", epoch)
            }
            Error::NoGroundTruth => write!(f, "no-ground-truth: empty ground-truth values"),
            Error::NoSimValues => write!(f, "no-simulation: empty simulated values"),
            Error::NoOverlap => write!(f, "no-overlap: no common valid future frames"),
            Error::MissingHistory { agent_id } => {
                write!(f, "missing-history: agent {} has no valid history", agent_id)
            }
            Error::BadConfig { detail } => write!(f, "bad-config: {}", detail),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
