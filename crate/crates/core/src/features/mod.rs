//! The fixed-width statistical flow descriptor and its normalization.
//!
//! Twelve feature groups are laid out back to back in a 183-slot vector:
//!
//! | group               | slots |
//! |---------------------|-------|
//! | bits per peak       | 3     |
//! | first packet sizes  | 30    |
//! | beaconing           | 20    |
//! | bandwidth           | 20    |
//! | packet size stats   | 4     |
//! | size delta stats    | 2     |
//! | packets per second  | 2     |
//! | inter-arrival       | 9     |
//! | silence windows     | 1     |
//! | ACK count           | 1     |
//! | big requests        | 1     |
//! | wavelet (DFT)       | 90    |

pub mod groups;
mod io;
mod normalize;

use serde::{Deserialize, Serialize};

use crate::flow::Flow;

pub use self::io::{feature_csv_header, read_feature_csv, write_feature_csv};
pub use self::normalize::{fit_normalizer, normalize, NormalizationParams};

pub const SCHEMA_VERSION: &str = "flowcbr-v1";
pub const TOTAL_SLOTS: usize = 183;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    BitsPerPeak,
    FirstPacketSizes,
    Beaconing,
    Bandwidth,
    PacketSizeStats,
    SizeDeltaStats,
    PacketsPerSecond,
    InterArrival,
    SilenceWindows,
    AckCount,
    BigRequests,
    Wavelet,
}

impl Group {
    pub const ALL: [Group; 12] = [
        Group::BitsPerPeak,
        Group::FirstPacketSizes,
        Group::Beaconing,
        Group::Bandwidth,
        Group::PacketSizeStats,
        Group::SizeDeltaStats,
        Group::PacketsPerSecond,
        Group::InterArrival,
        Group::SilenceWindows,
        Group::AckCount,
        Group::BigRequests,
        Group::Wavelet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::BitsPerPeak => "bits_per_peak",
            Group::FirstPacketSizes => "first_packet_sizes",
            Group::Beaconing => "beaconing",
            Group::Bandwidth => "bandwidth",
            Group::PacketSizeStats => "packet_size_stats",
            Group::SizeDeltaStats => "size_delta_stats",
            Group::PacketsPerSecond => "packets_per_second",
            Group::InterArrival => "inter_arrival",
            Group::SilenceWindows => "silence_windows",
            Group::AckCount => "ack_count",
            Group::BigRequests => "big_requests",
            Group::Wavelet => "wavelet",
        }
    }

    pub fn slots(self) -> usize {
        match self {
            Group::BitsPerPeak => 3,
            Group::FirstPacketSizes => 30,
            Group::Beaconing => 20,
            Group::Bandwidth => 20,
            Group::PacketSizeStats => 4,
            Group::SizeDeltaStats => 2,
            Group::PacketsPerSecond => 2,
            Group::InterArrival => 9,
            Group::SilenceWindows => 1,
            Group::AckCount => 1,
            Group::BigRequests => 1,
            Group::Wavelet => 90,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSpan {
    pub group: Group,
    pub offset: usize,
    pub slots: usize,
}

impl GroupSpan {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.slots
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub version: String,
    pub groups: Vec<GroupSpan>,
}

impl FeatureSchema {
    /// All twelve groups, in table order.
    pub fn full() -> Self {
        let mut offset = 0;
        let groups = Group::ALL
            .iter()
            .map(|&group| {
                let span = GroupSpan { group, offset, slots: group.slots() };
                offset += group.slots();
                span
            })
            .collect();
        FeatureSchema { version: SCHEMA_VERSION.to_string(), groups }
    }

    pub fn total_slots(&self) -> usize {
        self.groups.iter().map(|g| g.slots).sum()
    }

    pub fn span(&self, group: Group) -> Option<GroupSpan> {
        self.groups.iter().copied().find(|g| g.group == group)
    }

    /// Human-readable name of a slot, e.g. `wavelet[7]`.
    pub fn slot_name(&self, slot: usize) -> Option<String> {
        self.groups
            .iter()
            .find(|g| g.range().contains(&slot))
            .map(|g| format!("{}[{}]", g.group.name(), slot - g.offset))
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::full()
    }
}

/// Tunable constants of the extraction rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractOptions {
    /// Width of the beaconing and bandwidth windows, seconds.
    pub window_secs: f64,
    /// A bidirectional gap at least this long counts as a silence window.
    pub silence_gap_secs: f64,
    /// Client payloads above this many bytes count as big requests.
    pub big_request_bytes: u32,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions { window_secs: 5.0, silence_gap_secs: 1.0, big_request_bytes: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_version: String,
    pub flow_ref: Option<String>,
    pub label: Option<String>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, schema_version: impl Into<String>) -> Self {
        FeatureVector { values, schema_version: schema_version.into(), flow_ref: None, label: None }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn extract_features(flow: &Flow, schema: &FeatureSchema) -> FeatureVector {
    extract_with(flow, schema, &ExtractOptions::default())
}

/// Computes every group of `schema` for `flow`. Groups absent from the
/// schema are skipped; empty flows yield an all-zero vector.
pub fn extract_with(flow: &Flow, schema: &FeatureSchema, opts: &ExtractOptions) -> FeatureVector {
    let mut values = vec![0.0; schema.total_slots()];
    for span in &schema.groups {
        let out = &mut values[span.range()];
        match span.group {
            Group::BitsPerPeak => out.copy_from_slice(&groups::bits_per_peak(flow)),
            Group::FirstPacketSizes => out.copy_from_slice(&groups::first_packet_sizes(flow, span.slots)),
            Group::Beaconing => out.copy_from_slice(&groups::beaconing_windows(flow, opts.window_secs, span.slots)),
            Group::Bandwidth => out.copy_from_slice(&groups::bandwidth_windows(flow, opts.window_secs, span.slots / 2)),
            Group::PacketSizeStats => out.copy_from_slice(&groups::packet_size_stats(flow)),
            Group::SizeDeltaStats => out.copy_from_slice(&groups::size_delta_stats(flow)),
            Group::PacketsPerSecond => out.copy_from_slice(&groups::packets_per_second(flow)),
            Group::InterArrival => out.copy_from_slice(&groups::inter_arrival_stats(flow)),
            Group::SilenceWindows => out[0] = groups::silence_windows(flow, opts.silence_gap_secs),
            Group::AckCount => out[0] = groups::ack_count(flow),
            Group::BigRequests => out[0] = groups::big_requests(flow, opts.big_request_bytes),
            Group::Wavelet => out.copy_from_slice(&groups::wavelet_coeffs(flow, span.slots)),
        }
    }
    for v in &mut values {
        if !v.is_finite() {
            *v = 0.0;
        }
    }
    FeatureVector {
        values,
        schema_version: schema.version.clone(),
        flow_ref: Some(flow.id.clone()),
        label: flow.label.clone(),
    }
}

/// Extracts all flows in parallel, keeping input order.
pub fn extract_all(flows: &[Flow], schema: &FeatureSchema, opts: &ExtractOptions) -> Vec<FeatureVector> {
    use rayon::prelude::*;
    flows.par_iter().map(|f| extract_with(f, schema, opts)).collect()
}
