use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.70, seed: 0, stratified: true }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(format!("train_fraction {} outside (0, 1)", self.train_fraction)));
        }
        Ok(())
    }
}

/// Training share of a group of `n`: rounded half up, at least one.
pub fn train_count(n: usize, fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((n as f64 * fraction + 0.5).floor() as usize).clamp(1, n)
}

/// Splits sample positions into ascending (train, test) lists. With
/// stratification each class is shuffled and cut separately, classes
/// taken in label order from a single seeded stream.
pub fn stratified_split(labels: &[String], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            by_class.entry(l.as_str()).or_default().push(i);
        }
        by_class.into_values().collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut g in groups {
        g.shuffle(&mut rng);
        let cut = train_count(g.len(), spec.train_fraction);
        train.extend_from_slice(&g[..cut]);
        test.extend_from_slice(&g[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
