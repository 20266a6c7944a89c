use serde::{Deserialize, Serialize};

use super::Forest;
use crate::cbr::{classify, ClassRegistry, Thresholds, Verdict, VerdictKind};
use crate::error::Result;
use crate::index::Index;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleSource {
    Cbr,
    Forest,
}

/// Retrieval decides whether a sample is known at all; the forest labels
/// the known ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum EnsembleVerdict {
    /// The retrieval stage returned OOD or a new-class verdict.
    Cbr {
        verdict: Verdict,
    },
    Forest {
        label: String,
        vote_fraction: f64,
        cbr: Verdict,
    },
}

impl EnsembleVerdict {
    pub fn source(&self) -> EnsembleSource {
        match self {
            EnsembleVerdict::Cbr { .. } => EnsembleSource::Cbr,
            EnsembleVerdict::Forest { .. } => EnsembleSource::Forest,
        }
    }

    pub fn cbr_verdict(&self) -> &Verdict {
        match self {
            EnsembleVerdict::Cbr { verdict } => verdict,
            EnsembleVerdict::Forest { cbr, .. } => cbr,
        }
    }

    /// The label the pipeline reports, if any.
    pub fn label(&self) -> Option<&str> {
        match self {
            EnsembleVerdict::Cbr { verdict } => verdict.label.as_deref(),
            EnsembleVerdict::Forest { label, .. } => Some(label),
        }
    }
}

/// Classifies `query` with the retrieval stage and defers to the forest
/// only when the verdict is `Known`. Both stages see the same vector.
pub fn ensemble_classify(
    index: &mut Index,
    registry: &mut ClassRegistry,
    forest: &Forest,
    query: &[f64],
    th: &Thresholds,
) -> Result<EnsembleVerdict> {
    let verdict = classify(index, registry, query, th)?;
    if verdict.kind != VerdictKind::Known {
        return Ok(EnsembleVerdict::Cbr { verdict });
    }
    let (label, vote_fraction) = forest.predict(query)?;
    Ok(EnsembleVerdict::Forest { label, vote_fraction, cbr: verdict })
}
