use std::collections::HashMap;

use super::{Direction, Flow, FlowKey, FlowPacket, PacketRecord, TcpFlags};
use crate::error::{Error, Result};

/// Seconds of silence after which the same 5-tuple starts a new flow.
pub const DEFAULT_IDLE_TIMEOUT: f64 = 60.0;

/// Groups packets into bidirectional flows by 5-tuple.
///
/// Packets are stable-sorted by timestamp first, so reordered captures are
/// tolerated and ties keep capture order. Within one 5-tuple a gap of at
/// least `idle_timeout` seconds closes the flow. The initiator is the
/// sender of the earliest SYN-flagged packet when that packet is a bare
/// SYN, otherwise the sender of the first packet.
pub fn assemble_flows(packets: &[PacketRecord], idle_timeout: f64) -> Result<Vec<Flow>> {
    if !(idle_timeout > 0.0) {
        return Err(Error::invalid(format!("idle timeout must be > 0, got {idle_timeout}")));
    }
    let mut order: Vec<usize> = (0..packets.len()).collect();
    order.sort_by(|&a, &b| packets[a].timestamp.total_cmp(&packets[b].timestamp));

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut by_key: HashMap<FlowKey, usize> = HashMap::new();
    for &i in &order {
        let key = FlowKey::of_packet(&packets[i]);
        let g = *by_key.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }

    let mut flows = Vec::new();
    for group in groups {
        let mut seq = 0usize;
        let mut start = 0usize;
        for j in 1..=group.len() {
            let split =
                j == group.len() || packets[group[j]].timestamp - packets[group[j - 1]].timestamp >= idle_timeout;
            if split {
                flows.push(build_flow(packets, &group[start..j], seq));
                seq += 1;
                start = j;
            }
        }
    }
    flows.sort_by(|a, b| a.start().total_cmp(&b.start()));
    Ok(flows)
}

fn initiator_key(packets: &[PacketRecord], members: &[usize]) -> FlowKey {
    let first_syn = members.iter().map(|&i| &packets[i]).find(|p| p.tcp_flags.contains(TcpFlags::SYN));
    match first_syn {
        Some(p) if !p.tcp_flags.contains(TcpFlags::ACK) => FlowKey::of_packet(p),
        _ => FlowKey::of_packet(&packets[members[0]]),
    }
}

fn build_flow(packets: &[PacketRecord], members: &[usize], seq: usize) -> Flow {
    let key = initiator_key(packets, members);
    let flow_packets = members
        .iter()
        .map(|&i| {
            let p = &packets[i];
            FlowPacket {
                timestamp: p.timestamp,
                direction: if key.is_forward(p) { Direction::Fwd } else { Direction::Bwd },
                total_length: p.total_length,
                payload_length: p.payload_length.min(p.total_length),
                tcp_flags: p.tcp_flags,
                tcp_window: p.tcp_window,
            }
        })
        .collect();
    Flow::new(format!("{key}#{seq}"), Some(key), flow_packets)
}

/// Keeps the first `n_packets` packets (at least one).
pub fn truncate_flow(flow: &Flow, n_packets: usize) -> Flow {
    let n = n_packets.max(1).min(flow.packets.len());
    Flow { id: flow.id.clone(), key: flow.key, packets: flow.packets[..n].to_vec(), label: flow.label.clone() }
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;

    use proptest::prelude::*;

    use super::*;
    use crate::flow::Protocol;

    fn pkt(t: f64, from_a: bool, port: u16, size: u32) -> PacketRecord {
        let a = (Ipv4Addr::new(10, 0, 0, 1), port);
        let b = (Ipv4Addr::new(10, 0, 0, 2), 443);
        let (s, d) = if from_a { (a, b) } else { (b, a) };
        PacketRecord {
            timestamp: t,
            src_ip: s.0,
            dst_ip: d.0,
            src_port: s.1,
            dst_port: d.1,
            protocol: Protocol::Tcp,
            total_length: size,
            payload_length: size.saturating_sub(40),
            tcp_flags: TcpFlags::ACK,
            tcp_window: Some(1000),
        }
    }

    fn dirs(f: &Flow) -> Vec<Direction> {
        f.packets.iter().map(|p| p.direction).collect()
    }

    #[test]
    fn single_connection() {
        let ps = [pkt(0.0, true, 5000, 100), pkt(0.4, false, 5000, 200), pkt(0.9, true, 5000, 60)];
        let flows = assemble_flows(&ps, 60.0).unwrap();
        assert_eq!(flows.len(), 1);
        assert_eq!(dirs(&flows[0]), [Direction::Fwd, Direction::Bwd, Direction::Fwd]);
        assert!((flows[0].duration() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn split_at_timeout() {
        let ps = [pkt(0.0, true, 5000, 100), pkt(120.0, true, 5000, 100)];
        let flows = assemble_flows(&ps, 60.0).unwrap();
        assert_eq!(flows.len(), 2);
        assert!(flows.iter().all(|f| f.len() == 1));
        assert_eq!(flows[0].key, flows[1].key);
        assert_ne!(flows[0].id, flows[1].id);
    }

    #[test]
    fn gap_equal_to_timeout_splits() {
        let ps = [pkt(0.0, true, 5000, 100), pkt(60.0, true, 5000, 100)];
        assert_eq!(assemble_flows(&ps, 60.0).unwrap().len(), 2);
    }

    #[test]
    fn syn_sender_is_initiator_even_if_not_first() {
        let mut synack = pkt(0.0, false, 5000, 40);
        synack.tcp_flags = TcpFlags::SYN | TcpFlags::ACK;
        let mut stray = pkt(0.0, false, 5000, 40);
        stray.tcp_flags = TcpFlags::ACK;
        let mut syn = pkt(0.1, true, 5000, 40);
        syn.tcp_flags = TcpFlags::SYN;

        // bare SYN seen first among SYN-bearing packets
        let flows = assemble_flows(&[stray.clone(), syn.clone()], 60.0).unwrap();
        assert_eq!(flows[0].key.unwrap().src_port, 5000);
        assert_eq!(dirs(&flows[0]), [Direction::Bwd, Direction::Fwd]);

        // SYN+ACK first: falls back to first-packet sender
        let flows = assemble_flows(&[synack, syn], 60.0).unwrap();
        assert_eq!(flows[0].key.unwrap().src_port, 443);
    }

    #[test]
    fn reordered_capture_is_sorted_stably() {
        let ps = [pkt(2.0, true, 5000, 1), pkt(1.0, false, 5000, 2), pkt(1.0, true, 5000, 3)];
        let f = &assemble_flows(&ps, 60.0).unwrap()[0];
        let sizes: Vec<u32> = f.packets.iter().map(|p| p.total_length).collect();
        assert_eq!(sizes, [2, 3, 1]);
    }

    #[test]
    fn empty_and_bad_timeout() {
        assert!(assemble_flows(&[], 60.0).unwrap().is_empty());
        assert!(assemble_flows(&[], 0.0).is_err());
        assert!(assemble_flows(&[], f64::NAN).is_err());
    }

    #[test]
    fn truncate_examples() {
        let ps: Vec<_> = (0..30).map(|i| pkt(f64::from(i), i % 2 == 0, 5000, 100)).collect();
        let f = &assemble_flows(&ps, 60.0).unwrap()[0];
        let t = truncate_flow(f, 10);
        assert_eq!(t.len(), 10);
        assert_eq!(t.packets[..], f.packets[..10]);
        assert!((t.duration() - 9.0).abs() < 1e-12);

        let short = truncate_flow(&t, 98);
        assert_eq!(short, t);

        let one = truncate_flow(f, 1);
        assert_eq!(one.len(), 1);
        assert_eq!(one.duration(), 0.0);
    }

    /// Independent grouping: bucket by unordered endpoint pair, no timeout splitting.
    fn brute_groups(ps: &[PacketRecord]) -> Vec<Vec<u32>> {
        let mut keys: Vec<(u16, u16)> = Vec::new();
        let mut out: Vec<Vec<(f64, usize, u32)>> = Vec::new();
        for (i, p) in ps.iter().enumerate() {
            let k = (p.src_port.min(p.dst_port), p.src_port.max(p.dst_port));
            let g = match keys.iter().position(|x| *x == k) {
                Some(g) => g,
                None => {
                    keys.push(k);
                    out.push(Vec::new());
                    out.len() - 1
                }
            };
            out[g].push((p.timestamp, i, p.total_length));
        }
        let mut res: Vec<Vec<u32>> = out
            .into_iter()
            .map(|mut v| {
                v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                v.into_iter().map(|x| x.2).collect()
            })
            .collect();
        res.sort();
        res
    }

    #[test]
    fn interleaved_connections() {
        let ps: Vec<_> = (0..20)
            .map(|i| pkt(f64::from(i) * 0.1, i % 3 != 0, if i % 2 == 0 { 5000 } else { 6000 }, 100 + i as u32))
            .collect();
        let flows = assemble_flows(&ps, 60.0).unwrap();
        assert_eq!(flows.len(), 2);
        let mut got: Vec<Vec<u32>> = flows.iter().map(|f| f.packets.iter().map(|p| p.total_length).collect()).collect();
        got.sort();
        assert_eq!(got, brute_groups(&ps));
    }

    fn arb_packets() -> impl Strategy<Value = Vec<PacketRecord>> {
        prop::collection::vec((0.0f64..500.0, any::<bool>(), 0u16..4, 40u32..1500, any::<bool>()), 0..60).prop_map(
            |v| {
                v.into_iter()
                    .map(|(t, a, port, size, syn)| {
                        let mut p = pkt(t, a, 5000 + port, size);
                        if syn {
                            p.tcp_flags = TcpFlags::SYN;
                        }
                        p
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn canonical_keys_survive_reversal(ps in arb_packets(), timeout in 1.0f64..200.0) {
            let flows = assemble_flows(&ps, timeout).unwrap();
            let swapped: Vec<_> = ps.iter().map(PacketRecord::reversed).collect();
            let flows_swapped = assemble_flows(&swapped, timeout).unwrap();
            prop_assert_eq!(flows.len(), flows_swapped.len());
            for (a, b) in flows.iter().zip(&flows_swapped) {
                prop_assert_eq!(a.key, b.key);
                prop_assert_eq!(a.key.unwrap().endpoints(), b.key.unwrap().endpoints());
                prop_assert_eq!(a.len(), b.len());
            }
        }

        #[test]
        fn flows_partition_packets(ps in arb_packets(), timeout in 1.0f64..200.0) {
            let flows = assemble_flows(&ps, timeout).unwrap();
            let total: usize = flows.iter().map(Flow::len).sum();
            prop_assert_eq!(total, ps.len());
            for f in &flows {
                prop_assert!(!f.is_empty());
                prop_assert!(f.duration() >= 0.0);
                prop_assert!(f.packets.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
                prop_assert!(f.packets.windows(2).all(|w| w[1].timestamp - w[0].timestamp < timeout));
            }
            prop_assert!(flows.windows(2).all(|w| w[0].start() <= w[1].start()));
        }

        #[test]
        fn truncation_is_prefix(ps in arb_packets(), n in 1usize..40) {
            for f in assemble_flows(&ps, 60.0).unwrap() {
                let t = truncate_flow(&f, n);
                prop_assert_eq!(t.len(), n.min(f.len()));
                prop_assert_eq!(&f.packets[..t.len()], &t.packets[..]);
            }
        }
    }
}
