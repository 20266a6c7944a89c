//! Packet records, connection keys and bidirectional flows.

mod assemble;
mod csv;
mod pcap;

use std::fmt;
use std::hash::{Hash, Hasher};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

pub use self::assemble::{assemble_flows, truncate_flow, DEFAULT_IDLE_TIMEOUT};
pub use self::csv::{load_flows_csv, read_flows_csv, write_flows_csv, FLOW_CSV_HEADER};
pub use self::pcap::{parse_pcap, write_pcap, CaptureSummary, LINKTYPE_ETHERNET, PCAP_MAGIC, PCAP_MAGIC_NANOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    Tcp,
    Udp,
}

impl Protocol {
    pub fn number(self) -> u8 {
        match self {
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
        })
    }
}

/// TCP control bits, using the on-the-wire bit positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TcpFlags(u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);

    const LETTERS: [(TcpFlags, char); 5] =
        [(TcpFlags::FIN, 'F'), (TcpFlags::SYN, 'S'), (TcpFlags::RST, 'R'), (TcpFlags::PSH, 'P'), (TcpFlags::ACK, 'A')];

    pub const fn empty() -> Self {
        TcpFlags(0)
    }

    /// Keeps only the five bits this crate tracks.
    pub const fn from_bits_truncate(bits: u8) -> Self {
        TcpFlags(bits & 0x1f)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Compact letter form used by the flow CSV, e.g. `"SA"` for SYN+ACK.
    pub fn to_letters(self) -> String {
        Self::LETTERS.iter().filter(|(flag, _)| self.contains(*flag)).map(|(_, c)| *c).collect()
    }

    pub fn from_letters(s: &str) -> Option<Self> {
        let mut bits = 0u8;
        for c in s.chars() {
            let (flag, _) = Self::LETTERS.iter().find(|(_, l)| *l == c.to_ascii_uppercase())?;
            bits |= flag.0;
        }
        Some(TcpFlags(bits))
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;

    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | rhs.0)
    }
}

/// One IPv4 TCP/UDP packet as read from a capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    /// Seconds since the epoch, microsecond resolution.
    pub timestamp: f64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    /// IP total length in bytes.
    pub total_length: u32,
    pub payload_length: u32,
    pub tcp_flags: TcpFlags,
    /// Absent for UDP.
    pub tcp_window: Option<u16>,
}

impl PacketRecord {
    /// The same packet seen from the other side of the connection.
    pub fn reversed(&self) -> Self {
        PacketRecord {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            ..self.clone()
        }
    }
}

/// Connection 5-tuple, stored initiator side first.
///
/// Equality and hashing ignore orientation: a key and its reverse compare
/// equal, so packets of both directions land on the same key.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub protocol: Protocol,
    pub src_port: u16,
    pub dst_port: u16,
}

impl FlowKey {
    pub fn of_packet(p: &PacketRecord) -> Self {
        FlowKey { src_ip: p.src_ip, dst_ip: p.dst_ip, protocol: p.protocol, src_port: p.src_port, dst_port: p.dst_port }
    }

    pub fn reversed(self) -> Self {
        FlowKey {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            protocol: self.protocol,
            src_port: self.dst_port,
            dst_port: self.src_port,
        }
    }

    /// Orientation-free form: the two endpoints in ascending order.
    pub fn endpoints(&self) -> (Protocol, (Ipv4Addr, u16), (Ipv4Addr, u16)) {
        let a = (self.src_ip, self.src_port);
        let b = (self.dst_ip, self.dst_port);
        if a <= b {
            (self.protocol, a, b)
        } else {
            (self.protocol, b, a)
        }
    }

    /// True when `p` travels from the initiator to the responder.
    pub fn is_forward(&self, p: &PacketRecord) -> bool {
        p.src_ip == self.src_ip && p.src_port == self.src_port
    }
}

impl PartialEq for FlowKey {
    fn eq(&self, other: &Self) -> bool {
        self.endpoints() == other.endpoints()
    }
}

impl Eq for FlowKey {}

impl Hash for FlowKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.endpoints().hash(state);
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}-{}:{}/{}", self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.protocol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Initiator to responder.
    Fwd,
    Bwd,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Fwd => Direction::Bwd,
            Direction::Bwd => Direction::Fwd,
        }
    }
}

/// A packet inside a flow, with its direction resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPacket {
    pub timestamp: f64,
    pub direction: Direction,
    pub total_length: u32,
    pub payload_length: u32,
    pub tcp_flags: TcpFlags,
    pub tcp_window: Option<u16>,
}

impl FlowPacket {
    pub fn is_fwd(&self) -> bool {
        self.direction == Direction::Fwd
    }
}

/// Time-ordered bidirectional packet sequence of one connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub id: String,
    /// `None` for flows loaded from CSV, which carries no addresses.
    pub key: Option<FlowKey>,
    pub packets: Vec<FlowPacket>,
    pub label: Option<String>,
}

impl Flow {
    /// Builds a flow, stable-sorting `packets` by timestamp.
    pub fn new(id: impl Into<String>, key: Option<FlowKey>, mut packets: Vec<FlowPacket>) -> Self {
        packets.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        Flow { id: id.into(), key, packets, label: None }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.packets.first().map_or(0.0, |p| p.timestamp)
    }

    /// Last minus first timestamp; zero for an empty or single-packet flow.
    pub fn duration(&self) -> f64 {
        match (self.packets.first(), self.packets.last()) {
            (Some(a), Some(b)) => (b.timestamp - a.timestamp).max(0.0),
            _ => 0.0,
        }
    }

    pub fn fwd_count(&self) -> usize {
        self.packets.iter().filter(|p| p.is_fwd()).count()
    }

    pub fn bwd_count(&self) -> usize {
        self.len() - self.fwd_count()
    }
}
