//! Input sniffing: pcap captures, per-packet flow CSVs and feature matrices.

use std::path::Path;

use anyhow::Context;
use flowcbr_core::eval::synth::preset;
use flowcbr_core::eval::synth_generate;
use flowcbr_core::features::{extract_all, read_feature_csv, ExtractOptions, FeatureSchema, FeatureVector};
use flowcbr_core::flow::{
    assemble_flows, parse_pcap, read_flows_csv, DEFAULT_IDLE_TIMEOUT, PCAP_MAGIC, PCAP_MAGIC_NANOS,
};
use flowcbr_core::Flow;

use crate::Invalid;

pub enum Loaded {
    Flows(Vec<Flow>),
    Features(Vec<FeatureVector>),
}

fn is_pcap(raw: &[u8]) -> bool {
    let Some(head) = raw.get(..4) else { return false };
    let head = [head[0], head[1], head[2], head[3]];
    [PCAP_MAGIC, PCAP_MAGIC_NANOS].iter().any(|&m| u32::from_le_bytes(head) == m || u32::from_be_bytes(head) == m)
}

/// `label` tags every flow of a capture; CSV inputs carry their own.
pub fn load(path: &Path, label: Option<&str>) -> anyhow::Result<Loaded> {
    let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if is_pcap(&raw) {
        let capture = parse_pcap(&raw).with_context(|| format!("parsing {}", path.display()))?;
        if capture.skipped > 0 || capture.truncated > 0 {
            log::warn!(
                "{}: skipped {} undecodable frames, {} truncated record(s)",
                path.display(),
                capture.skipped,
                capture.truncated
            );
        }
        let mut flows = assemble_flows(&capture.packets, DEFAULT_IDLE_TIMEOUT)?;
        if let Some(l) = label {
            flows = flows.into_iter().map(|f| f.with_label(l)).collect();
        }
        log::info!("{}: {} packets in {} flows", path.display(), capture.packets.len(), flows.len());
        return Ok(Loaded::Flows(flows));
    }
    if raw.starts_with(b"flow_id,label,f000") {
        let vectors = read_feature_csv(raw.as_slice()).with_context(|| format!("reading {}", path.display()))?;
        return Ok(Loaded::Features(vectors));
    }
    let mut flows = read_flows_csv(raw.as_slice()).with_context(|| format!("reading {}", path.display()))?;
    if let Some(l) = label {
        for f in flows.iter_mut().filter(|f| f.label.is_none()) {
            f.label = Some(l.to_string());
        }
    }
    Ok(Loaded::Flows(flows))
}

pub fn into_features(loaded: Loaded, opts: &ExtractOptions) -> Vec<FeatureVector> {
    match loaded {
        Loaded::Flows(flows) => extract_all(&flows, &FeatureSchema::full(), opts),
        Loaded::Features(v) => v,
    }
}

pub fn into_flows(loaded: Loaded, path: &Path) -> anyhow::Result<Vec<Flow>> {
    match loaded {
        Loaded::Flows(f) => Ok(f),
        Loaded::Features(_) => {
            Err(Invalid(format!("{} is a feature matrix; packets are needed here", path.display())).into())
        }
    }
}

pub fn synthesize(preset_name: &str, per_class: usize, seed: u64) -> anyhow::Result<Vec<Flow>> {
    if per_class == 0 {
        return Err(Invalid("per-class count must be at least 1".into()).into());
    }
    let templates = preset(preset_name)?;
    Ok(synth_generate(&templates, per_class, seed)?)
}
