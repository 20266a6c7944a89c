use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Index, IndexConfig, IndexEntry};
use crate::error::{Error, Result};

pub const SNAPSHOT_VERSION: u32 = 1;

/// On-disk form of an index. Entries are the source of truth; trees are
/// rebuilt on load, so a snapshot can be opened with any backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSnapshot {
    pub format_version: u32,
    pub config: IndexConfig,
    pub entries: Vec<IndexEntry>,
}

impl IndexSnapshot {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let snap: IndexSnapshot = serde_json::from_reader(r).map_err(|e| Error::CorruptSnapshot(e.to_string()))?;
        if snap.format_version != SNAPSHOT_VERSION {
            return Err(Error::SnapshotVersion { expected: SNAPSHOT_VERSION, found: snap.format_version });
        }
        Ok(snap)
    }

    pub fn into_index(self) -> Result<Index> {
        if self.entries.is_empty() {
            Index::new(self.config)
        } else {
            Index::build(self.entries, self.config)
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::index::Backend;

    fn sample_index(backend: Backend) -> Index {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let entries = (0..300)
            .map(|i| IndexEntry::new(i, format!("l{}", i % 4), (0..12).map(|_| rng.random::<f64>()).collect()))
            .collect();
        Index::build(entries, IndexConfig { backend, leaf_size: 16, dimension: 12 }).unwrap()
    }

    #[test]
    fn round_trip_preserves_queries() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for backend in Backend::ALL {
            let idx = sample_index(backend);
            let path = dir.path().join(format!("{backend}.json"));
            idx.save(&path).unwrap();
            let back = Index::load(&path).unwrap();
            assert_eq!(back.config(), idx.config());
            for _ in 0..100 {
                let q: Vec<f64> = (0..12).map(|_| rng.random()).collect();
                assert_eq!(idx.query_knn(&q, 5).unwrap(), back.query_knn(&q, 5).unwrap());
            }
        }
    }

    #[test]
    fn load_as_other_backend() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.json");
        let idx = sample_index(Backend::Brute);
        idx.save(&path).unwrap();
        let tree = Index::load_as(&path, IndexConfig::new(Backend::BallTree, 12)).unwrap();
        let q = vec![0.5; 12];
        assert_eq!(tree.query_knn(&q, 9).unwrap(), idx.query_knn(&q, 9).unwrap());
        assert!(matches!(
            Index::load_as(&path, IndexConfig::new(Backend::KdTree, 11)),
            Err(Error::DimensionMismatch { expected: 11, actual: 12 })
        ));
    }

    #[test]
    fn errors() {
        let idx = sample_index(Backend::Brute);
        assert!(matches!(idx.save(""), Err(Error::Io(_))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, b"{not json").unwrap();
        assert!(matches!(Index::load(&path), Err(Error::CorruptSnapshot(_))));

        let mut snap = idx.snapshot();
        snap.format_version = 99;
        snap.save(&path).unwrap();
        assert!(matches!(Index::load(&path), Err(Error::SnapshotVersion { found: 99, .. })));

        let mut snap = idx.snapshot();
        snap.config.dimension = 3;
        snap.save(&path).unwrap();
        assert!(matches!(Index::load(&path), Err(Error::DimensionMismatch { .. })));
    }
}
