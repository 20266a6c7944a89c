//! Per-packet flow CSV: one row per packet, rows grouped by `flow_id`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Direction, Flow, FlowPacket, TcpFlags};
use crate::error::{Error, Result};

pub const FLOW_CSV_HEADER: [&str; 9] = [
    "flow_id",
    "label",
    "packet_index",
    "direction",
    "timestamp",
    "total_length",
    "payload_length",
    "tcp_flags",
    "tcp_window",
];

#[derive(Debug, Serialize, Deserialize)]
struct FlowRow {
    flow_id: String,
    label: String,
    packet_index: usize,
    direction: String,
    timestamp: f64,
    total_length: u32,
    payload_length: u32,
    tcp_flags: String,
    tcp_window: Option<u16>,
}

pub fn load_flows_csv(path: impl AsRef<Path>) -> Result<Vec<Flow>> {
    read_flows_csv(File::open(path)?)
}

pub fn read_flows_csv<R: Read>(reader: R) -> Result<Vec<Flow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(FLOW_CSV_HEADER.iter().copied()) {
        return Err(Error::FlowCsv { row: 1, message: format!("expected header {}", FLOW_CSV_HEADER.join(",")) });
    }

    let mut flows: Vec<Flow> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut last_index = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let bad = |message: String| Error::FlowCsv { row, message };
        let record = record.map_err(|e| bad(e.to_string()))?;
        let r: FlowRow = record.deserialize(Some(&headers)).map_err(|e| bad(e.to_string()))?;

        let direction = match r.direction.as_str() {
            "out" => Direction::Fwd,
            "in" => Direction::Bwd,
            other => return Err(bad(format!("unknown direction {other:?}"))),
        };
        let tcp_flags =
            TcpFlags::from_letters(&r.tcp_flags).ok_or_else(|| bad(format!("bad tcp_flags {:?}", r.tcp_flags)))?;
        if !r.timestamp.is_finite() {
            return Err(bad("timestamp is not finite".into()));
        }
        if r.payload_length > r.total_length {
            return Err(bad("payload_length exceeds total_length".into()));
        }
        let label = (!r.label.is_empty()).then_some(r.label);

        let continues = flows.last().is_some_and(|f| f.id == r.flow_id);
        if continues {
            let flow = flows.last_mut().expect("checked above");
            if r.packet_index <= last_index {
                return Err(bad(format!("packet_index {} is not increasing", r.packet_index)));
            }
            if flow.label != label {
                return Err(bad("label changes within a flow".into()));
            }
        } else {
            if !seen.insert(r.flow_id.clone()) {
                return Err(bad(format!("rows of flow {:?} are not contiguous", r.flow_id)));
            }
            flows.push(Flow { id: r.flow_id, key: None, packets: Vec::new(), label });
        }
        last_index = r.packet_index;
        flows.last_mut().expect("pushed above").packets.push(FlowPacket {
            timestamp: r.timestamp,
            direction,
            total_length: r.total_length,
            payload_length: r.payload_length,
            tcp_flags,
            tcp_window: r.tcp_window,
        });
    }
    for f in &mut flows {
        f.packets.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    }
    Ok(flows)
}

pub fn write_flows_csv<W: Write>(flows: &[Flow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(FLOW_CSV_HEADER)?;
    for f in flows {
        for (i, p) in f.packets.iter().enumerate() {
            w.serialize(FlowRow {
                flow_id: f.id.clone(),
                label: f.label.clone().unwrap_or_default(),
                packet_index: i,
                direction: match p.direction {
                    Direction::Fwd => "out".into(),
                    Direction::Bwd => "in".into(),
                },
                timestamp: p.timestamp,
                total_length: p.total_length,
                payload_length: p.payload_length,
                tcp_flags: p.tcp_flags.to_letters(),
                tcp_window: p.tcp_window,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
