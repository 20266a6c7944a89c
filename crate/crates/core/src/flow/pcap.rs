//! Reader (and a small writer) for the classic libpcap capture format.

use std::net::Ipv4Addr;

use log::warn;

use super::{PacketRecord, Protocol, TcpFlags};
use crate::error::{Error, Result};

pub const PCAP_MAGIC: u32 = 0xa1b2_c3d4;
pub const PCAP_MAGIC_NANOS: u32 = 0xa1b2_3c4d;
pub const LINKTYPE_ETHERNET: u32 = 1;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const ETHERTYPE_IPV4: u16 = 0x0800;
const VLAN_TAGS: [u16; 3] = [0x8100, 0x88a8, 0x9100];

/// Packets decoded from a capture plus the counts of what was dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaptureSummary {
    pub packets: Vec<PacketRecord>,
    /// Frames that were not Ethernet/IPv4/{TCP,UDP} or too short to decode.
    pub skipped: usize,
    /// Set when the file ended inside a record; parsing stopped there.
    pub truncated: usize,
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => u32::from_le_bytes(a),
            Endian::Big => u32::from_be_bytes(a),
        }
    }

    fn u16(self, b: &[u8]) -> u16 {
        let a = [b[0], b[1]];
        match self {
            Endian::Little => u16::from_le_bytes(a),
            Endian::Big => u16::from_be_bytes(a),
        }
    }
}

pub fn parse_pcap(raw: &[u8]) -> Result<CaptureSummary> {
    if raw.len() < GLOBAL_HEADER_LEN {
        return Err(Error::MalformedCapture(format!(
            "global header needs {GLOBAL_HEADER_LEN} bytes, got {}",
            raw.len()
        )));
    }
    let endian = match u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) {
        PCAP_MAGIC => Endian::Little,
        m if m == PCAP_MAGIC.swap_bytes() => Endian::Big,
        m if m == PCAP_MAGIC_NANOS || m == PCAP_MAGIC_NANOS.swap_bytes() => return Err(Error::NanosecondCapture),
        m => return Err(Error::MalformedCapture(format!("bad magic number {m:#010x}"))),
    };
    let major = endian.u16(&raw[4..6]);
    if major != 2 {
        return Err(Error::MalformedCapture(format!("unsupported version {major}")));
    }
    let link_type = endian.u32(&raw[20..24]);
    if link_type != LINKTYPE_ETHERNET {
        return Err(Error::UnsupportedLinkType(link_type));
    }

    let mut out = CaptureSummary::default();
    let mut rest = &raw[GLOBAL_HEADER_LEN..];
    while !rest.is_empty() {
        if rest.len() < RECORD_HEADER_LEN {
            out.truncated += 1;
            break;
        }
        let ts_sec = endian.u32(&rest[0..4]);
        let ts_usec = endian.u32(&rest[4..8]);
        let incl_len = endian.u32(&rest[8..12]) as usize;
        let body = &rest[RECORD_HEADER_LEN..];
        if incl_len > body.len() {
            out.truncated += 1;
            break;
        }
        let timestamp = f64::from(ts_sec) + f64::from(ts_usec) / 1e6;
        match decode_frame(timestamp, &body[..incl_len]) {
            Some(p) => out.packets.push(p),
            None => out.skipped += 1,
        }
        rest = &body[incl_len..];
    }
    if out.truncated > 0 {
        warn!("capture truncated after {} packets; stopped parsing", out.packets.len() + out.skipped);
    }
    Ok(out)
}

fn be16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn decode_frame(timestamp: f64, frame: &[u8]) -> Option<PacketRecord> {
    if frame.len() < 14 {
        return None;
    }
    let mut ethertype = be16(&frame[12..14]);
    let mut offset = 14;
    while VLAN_TAGS.contains(&ethertype) {
        if frame.len() < offset + 4 {
            return None;
        }
        ethertype = be16(&frame[offset + 2..offset + 4]);
        offset += 4;
    }
    if ethertype != ETHERTYPE_IPV4 {
        return None;
    }
    let ip = &frame[offset..];
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return None;
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    if ihl < 20 || ip.len() < ihl {
        return None;
    }
    // Non-initial fragments carry no transport header.
    if be16(&ip[6..8]) & 0x1fff != 0 {
        return None;
    }
    let total_length = u32::from(be16(&ip[2..4]));
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    let l4 = &ip[ihl..];
    let ihl = ihl as u32;
    match ip[9] {
        6 => {
            if l4.len() < 20 {
                return None;
            }
            let data_offset = u32::from(l4[12] >> 4) * 4;
            Some(PacketRecord {
                timestamp,
                src_ip,
                dst_ip,
                src_port: be16(&l4[0..2]),
                dst_port: be16(&l4[2..4]),
                protocol: Protocol::Tcp,
                total_length,
                payload_length: total_length.saturating_sub(ihl + data_offset),
                tcp_flags: TcpFlags::from_bits_truncate(l4[13]),
                tcp_window: Some(be16(&l4[14..16])),
            })
        }
        17 => {
            if l4.len() < 8 {
                return None;
            }
            Some(PacketRecord {
                timestamp,
                src_ip,
                dst_ip,
                src_port: be16(&l4[0..2]),
                dst_port: be16(&l4[2..4]),
                protocol: Protocol::Udp,
                total_length,
                payload_length: total_length.saturating_sub(ihl + 8),
                tcp_flags: TcpFlags::empty(),
                tcp_window: None,
            })
        }
        _ => None,
    }
}

/// Serializes records as a little-endian microsecond capture with
/// header-only frames (snap length cuts the payload off).
pub fn write_pcap(packets: &[PacketRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(GLOBAL_HEADER_LEN + packets.len() * 70);
    out.extend_from_slice(&PCAP_MAGIC.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&0i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&65535u32.to_le_bytes());
    out.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());

    for p in packets {
        let mut frame = Vec::with_capacity(54);
        frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]);
        frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
        frame.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

        let l4_len: u32 = match p.protocol {
            Protocol::Tcp => 20,
            Protocol::Udp => 8,
        };
        let total = p.total_length.max(20 + l4_len).min(u32::from(u16::MAX)) as u16;
        let mut ip = [0u8; 20];
        ip[0] = 0x45;
        ip[2..4].copy_from_slice(&total.to_be_bytes());
        ip[8] = 64;
        ip[9] = p.protocol.number();
        ip[12..16].copy_from_slice(&p.src_ip.octets());
        ip[16..20].copy_from_slice(&p.dst_ip.octets());
        let checksum = ipv4_checksum(&ip);
        ip[10..12].copy_from_slice(&checksum.to_be_bytes());
        frame.extend_from_slice(&ip);

        frame.extend_from_slice(&p.src_port.to_be_bytes());
        frame.extend_from_slice(&p.dst_port.to_be_bytes());
        match p.protocol {
            Protocol::Tcp => {
                frame.extend_from_slice(&[0; 8]);
                frame.push(5 << 4);
                frame.push(p.tcp_flags.bits());
                frame.extend_from_slice(&p.tcp_window.unwrap_or(0).to_be_bytes());
                frame.extend_from_slice(&[0; 4]);
            }
            Protocol::Udp => {
                let udp_len = (total as u32 - 20) as u16;
                frame.extend_from_slice(&udp_len.to_be_bytes());
                frame.extend_from_slice(&[0; 2]);
            }
        }

        let secs = p.timestamp.floor();
        let usec = ((p.timestamp - secs) * 1e6).round().min(999_999.0);
        out.extend_from_slice(&(secs as u32).to_le_bytes());
        out.extend_from_slice(&(usec as u32).to_le_bytes());
        out.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        out.extend_from_slice(&(14 + u32::from(total)).to_le_bytes());
        out.extend_from_slice(&frame);
    }
    out
}

fn ipv4_checksum(header: &[u8; 20]) -> u16 {
    let mut sum: u32 = header.chunks_exact(2).map(|c| u32::from(u16::from_be_bytes([c[0], c[1]]))).sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn global_header_le(link: u32) -> Vec<u8> {
        let mut h = vec![0xd4, 0xc3, 0xb2, 0xa1, 2, 0, 4, 0];
        h.extend_from_slice(&[0; 8]); // thiszone, sigfigs
        h.extend_from_slice(&[0xff, 0xff, 0, 0]); // snaplen
        h.extend_from_slice(&link.to_le_bytes());
        h
    }

    fn record_le(ts: u32, usec: u32, frame: &[u8]) -> Vec<u8> {
        let mut r = Vec::new();
        r.extend_from_slice(&ts.to_le_bytes());
        r.extend_from_slice(&usec.to_le_bytes());
        r.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        r.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        r.extend_from_slice(frame);
        r
    }

    /// Ethernet + 20-byte IPv4 + 20-byte TCP with only SYN set, IP total length 40.
    fn tcp_syn_frame() -> Vec<u8> {
        #[rustfmt::skip]
        let frame: Vec<u8> = vec![
            // ethernet: dst, src, type
            0x00, 0x11, 0x22, 0x33, 0x44, 0x55,
            0x66, 0x77, 0x88, 0x99, 0xaa, 0xbb,
            0x08, 0x00,
            // ipv4
            0x45, 0x00, 0x00, 0x28, // ver/ihl, tos, total length 40
            0x00, 0x01, 0x40, 0x00, // id, DF, offset 0
            0x40, 0x06, 0x00, 0x00, // ttl, proto TCP, checksum
            192, 168, 1, 10,
            93, 184, 216, 34,
            // tcp
            0xc3, 0x50, 0x01, 0xbb, // 50000 -> 443
            0x00, 0x00, 0x00, 0x01, // seq
            0x00, 0x00, 0x00, 0x00, // ack
            0x50, 0x02, 0x72, 0x10, // offset 5, SYN, window 29200
            0x00, 0x00, 0x00, 0x00,
        ];
        frame
    }

    #[test]
    fn empty_capture() {
        let out = parse_pcap(&global_header_le(1)).unwrap();
        assert!(out.packets.is_empty());
        assert_eq!(out.skipped, 0);
        assert_eq!(out.truncated, 0);
    }

    #[test]
    fn hand_built_syn() {
        let mut raw = global_header_le(1);
        raw.extend(record_le(1_600_000_000, 250_000, &tcp_syn_frame()));
        let out = parse_pcap(&raw).unwrap();
        assert_eq!(out.packets.len(), 1);
        let p = &out.packets[0];
        assert_eq!(p.total_length, 40);
        assert_eq!(p.payload_length, 0);
        assert_eq!(p.tcp_flags, TcpFlags::SYN);
        assert_eq!(p.tcp_window, Some(29200));
        assert_eq!(p.src_port, 50000);
        assert_eq!(p.dst_port, 443);
        assert_eq!(p.src_ip, Ipv4Addr::new(192, 168, 1, 10));
        assert_eq!(p.protocol, Protocol::Tcp);
        assert!((p.timestamp - 1_600_000_000.25).abs() < 1e-9);
    }

    #[test]
    fn big_endian_capture() {
        let mut raw = vec![0xa1, 0xb2, 0xc3, 0xd4, 0, 2, 0, 4];
        raw.extend_from_slice(&[0; 8]);
        raw.extend_from_slice(&[0, 0, 0xff, 0xff]);
        raw.extend_from_slice(&1u32.to_be_bytes());
        let frame = tcp_syn_frame();
        raw.extend_from_slice(&7u32.to_be_bytes());
        raw.extend_from_slice(&0u32.to_be_bytes());
        raw.extend_from_slice(&(frame.len() as u32).to_be_bytes());
        raw.extend_from_slice(&(frame.len() as u32).to_be_bytes());
        raw.extend_from_slice(&frame);
        let out = parse_pcap(&raw).unwrap();
        assert_eq!(out.packets.len(), 1);
        assert_eq!(out.packets[0].timestamp, 7.0);
    }

    #[test]
    fn ipv6_frame_is_skipped() {
        let mut frame = vec![0u8; 12];
        frame.extend_from_slice(&[0x86, 0xdd]);
        frame.extend_from_slice(&[0x60; 40]);
        let mut raw = global_header_le(1);
        raw.extend(record_le(0, 0, &frame));
        let out = parse_pcap(&raw).unwrap();
        assert!(out.packets.is_empty());
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn vlan_tag_is_transparent() {
        let syn = tcp_syn_frame();
        let mut frame = syn[..12].to_vec();
        frame.extend_from_slice(&[0x81, 0x00, 0x00, 0x0a]);
        frame.extend_from_slice(&syn[12..]);
        let mut raw = global_header_le(1);
        raw.extend(record_le(0, 0, &frame));
        let out = parse_pcap(&raw).unwrap();
        assert_eq!(out.packets.len(), 1);
        assert_eq!(out.packets[0].tcp_flags, TcpFlags::SYN);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_pcap(&[0xd4, 0xc3]), Err(Error::MalformedCapture(_))));
        let mut bad = global_header_le(1);
        bad[0] = 0;
        assert!(matches!(parse_pcap(&bad), Err(Error::MalformedCapture(_))));
        assert!(matches!(parse_pcap(&global_header_le(101)), Err(Error::UnsupportedLinkType(101))));
        let mut nanos = global_header_le(1);
        nanos[..4].copy_from_slice(&PCAP_MAGIC_NANOS.to_le_bytes());
        assert!(matches!(parse_pcap(&nanos), Err(Error::NanosecondCapture)));
    }

    #[test]
    fn truncated_record_stops_with_warning() {
        let mut raw = global_header_le(1);
        raw.extend(record_le(0, 0, &tcp_syn_frame()));
        let second = record_le(1, 0, &tcp_syn_frame());
        raw.extend_from_slice(&second[..30]);
        let out = parse_pcap(&raw).unwrap();
        assert_eq!(out.packets.len(), 1);
        assert_eq!(out.truncated, 1);
    }

    #[test]
    fn writer_output_parses_back() {
        let p = PacketRecord {
            timestamp: 12.5,
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            dst_ip: Ipv4Addr::new(10, 0, 0, 2),
            src_port: 1234,
            dst_port: 53,
            protocol: Protocol::Udp,
            total_length: 120,
            payload_length: 92,
            tcp_flags: TcpFlags::empty(),
            tcp_window: None,
        };
        let q = PacketRecord {
            protocol: Protocol::Tcp,
            total_length: 1500,
            payload_length: 1460,
            tcp_flags: TcpFlags::ACK | TcpFlags::PSH,
            tcp_window: Some(512),
            timestamp: 13.000001,
            ..p.clone()
        };
        let out = parse_pcap(&write_pcap(&[p.clone(), q.clone()])).unwrap();
        assert_eq!(out.packets.len(), 2);
        assert_eq!(out.packets[0], p);
        assert_eq!(out.packets[1].total_length, 1500);
        assert_eq!(out.packets[1].payload_length, 1460);
        assert_eq!(out.packets[1].tcp_flags, q.tcp_flags);
        assert!((out.packets[1].timestamp - q.timestamp).abs() < 1e-6);
    }
}
