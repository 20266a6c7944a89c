//! Classification by retrieval for encrypted network traffic.
//!
//! The pipeline turns packet captures (or per-packet CSV exports) into
//! bidirectional flows, extracts a fixed 183-slot statistical feature
//! vector per flow, and classifies flows by majority vote over their
//! nearest labeled neighbors. Flows that sit too far from every known
//! class are either buffered as candidates for a new class or rejected as
//! out-of-distribution. A random-forest baseline and an ensemble that
//! combines both models are provided for comparison.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cbr;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod forest;
pub mod index;
pub mod select;

pub use cbr::{ClassOrigin, ClassRegistry, Thresholds, Verdict, VerdictKind};
pub use error::{Error, Result};
pub use features::{FeatureSchema, FeatureVector, NormalizationParams};
pub use flow::{Direction, Flow, FlowKey, FlowPacket, PacketRecord, Protocol, TcpFlags};
pub use forest::{EnsembleVerdict, Forest, ForestConfig};
pub use index::{Backend, Index, IndexConfig, IndexEntry, Neighbor};
pub use select::{FeatureScore, SelectionMask};
