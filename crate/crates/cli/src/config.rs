//! Run configuration: TOML file merged under command-line flags.

use std::path::{Path, PathBuf};

use flowcbr_core::eval::PipelineConfig;
use flowcbr_core::Thresholds;
use serde::Deserialize;

use crate::Invalid;

pub const DEFAULT_SWEEP_COUNTS: [usize; 8] = [2, 4, 6, 8, 10, 15, 20, 30];

/// Everything a run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the split and forest seeds of `pipeline`.
    pub seed: u64,
    pub out: PathBuf,
    pub pipeline: PipelineConfig,
    pub thresholds: ThresholdOverrides,
    pub sweep: SweepConfig,
    pub bench: BenchConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("."),
            pipeline: PipelineConfig::default(),
            thresholds: ThresholdOverrides::default(),
            sweep: SweepConfig::default(),
            bench: BenchConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Partial thresholds; unset fields fall through to the calibrated values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdOverrides {
    pub k: Option<usize>,
    pub theta_new: Option<f64>,
    pub theta_ood: Option<f64>,
    pub c_min: Option<usize>,
    pub r_cohesion: Option<f64>,
}

impl ThresholdOverrides {
    /// Fields set in `self` win over those in `lower`.
    pub fn over(self, lower: ThresholdOverrides) -> ThresholdOverrides {
        ThresholdOverrides {
            k: self.k.or(lower.k),
            theta_new: self.theta_new.or(lower.theta_new),
            theta_ood: self.theta_ood.or(lower.theta_ood),
            c_min: self.c_min.or(lower.c_min),
            r_cohesion: self.r_cohesion.or(lower.r_cohesion),
        }
    }

    pub fn apply(self, base: Thresholds) -> Thresholds {
        Thresholds {
            k: self.k.unwrap_or(base.k),
            theta_new: self.theta_new.unwrap_or(base.theta_new),
            theta_ood: self.theta_ood.unwrap_or(base.theta_ood),
            c_min: self.c_min.unwrap_or(base.c_min),
            r_cohesion: self.r_cohesion.unwrap_or(base.r_cohesion),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub counts: Vec<usize>,
    pub epsilon: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { counts: DEFAULT_SWEEP_COUNTS.to_vec(), epsilon: flowcbr_core::eval::PLATEAU_EPSILON }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n: usize,
    pub dimension: usize,
    pub queries: usize,
    pub k: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { n: 5000, dimension: 183, queries: 200, k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub preset: String,
    pub per_class: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { preset: "standard".into(), per_class: 200 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text =
            std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Invalid(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Seeds every stochastic stage from the single run seed.
    pub fn seeded_pipeline(&self) -> PipelineConfig {
        let mut p = self.pipeline.clone();
        p.split.seed = self.seed;
        p.forest.seed = self.seed;
        p
    }
}
