//! Bidirectional 5-tuple flow assembly, fixed-length windowing and the
//! handshake / encryption discard filters.

use std::collections::HashMap;
use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::capture::{PacketRecord, TcpFlags, IPPROTO_TCP};
use crate::tls;
use crate::Timestamp;

/// Default window length: 30 minutes.
pub const DEFAULT_WINDOW_SECONDS: u32 = 1800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: IpAddr,
    pub port: u16,
}

impl Endpoint {
    pub fn new(ip: IpAddr, port: u16) -> Self {
        Endpoint { ip, port }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ip {
            IpAddr::V4(ip) => write!(f, "{ip}:{}", self.port),
            IpAddr::V6(ip) => write!(f, "[{ip}]:{}", self.port),
        }
    }
}

/// Canonical bidirectional key: `a <= b`, so both directions map to one key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub a: Endpoint,
    pub b: Endpoint,
    pub protocol: u8,
}

impl FlowKey {
    pub fn new(x: Endpoint, y: Endpoint, protocol: u8) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        FlowKey { a, b, protocol }
    }

    pub fn of(p: &PacketRecord) -> Self {
        FlowKey::new(
            Endpoint::new(p.src_ip, p.src_port),
            Endpoint::new(p.dst_ip, p.dst_port),
            p.protocol,
        )
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let proto = if self.protocol == IPPROTO_TCP {
            "tcp".to_string()
        } else {
            self.protocol.to_string()
        };
        write!(f, "{}-{}/{proto}", self.a, self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Initiator to responder.
    Fwd,
    /// Responder to initiator.
    Bwd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowPacket {
    pub dir: Direction,
    pub pkt: PacketRecord,
}

/// One window of one bidirectional connection.
#[derive(Debug, Clone, PartialEq)]
pub struct BiFlow {
    pub key: FlowKey,
    pub initiator: Endpoint,
    pub responder: Endpoint,
    /// Merged packets in time order, ties in capture order.
    pub packets: Vec<FlowPacket>,
    pub window_index: u32,
    pub window_start: Timestamp,
    /// Exclusive upper bound, `window_start + W`.
    pub window_end: Timestamp,
    pub handshake_complete: bool,
    pub encrypted: bool,
}

impl BiFlow {
    pub fn fwd(&self) -> impl Iterator<Item = &PacketRecord> + '_ {
        self.dir_packets(Direction::Fwd)
    }

    pub fn bwd(&self) -> impl Iterator<Item = &PacketRecord> + '_ {
        self.dir_packets(Direction::Bwd)
    }

    pub fn dir_packets(&self, dir: Direction) -> impl Iterator<Item = &PacketRecord> + '_ {
        self.packets
            .iter()
            .filter(move |p| p.dir == dir)
            .map(|p| &p.pkt)
    }

    pub fn n_fwd(&self) -> usize {
        self.fwd().count()
    }

    pub fn n_bwd(&self) -> usize {
        self.bwd().count()
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Stable identifier: `initiator-responder/tcp@window`.
    pub fn id(&self) -> String {
        format!("{}-{}/tcp@{}", self.initiator, self.responder, self.window_index)
    }

    pub fn debug_record(&self) -> FlowDebugRecord {
        FlowDebugRecord {
            key: self.key.to_string(),
            initiator: self.initiator.to_string(),
            n_fwd: self.n_fwd(),
            n_bwd: self.n_bwd(),
            window_start: self.window_start.to_string(),
            flags: FlowFlags {
                handshake_complete: self.handshake_complete,
                encrypted: self.encrypted,
            },
        }
    }
}

/// Line-delimited JSON flow dump entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowDebugRecord {
    pub key: String,
    pub initiator: String,
    pub n_fwd: usize,
    pub n_bwd: usize,
    pub window_start: String,
    pub flags: FlowFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowFlags {
    pub handshake_complete: bool,
    pub encrypted: bool,
}

/// Splits time-sorted items into half-open windows `[t0 + gW, t0 + (g+1)W)`
/// anchored at the first item; returns `(g, items)` with no empty groups.
pub fn window_split<T>(
    items: Vec<T>,
    ts: impl Fn(&T) -> Timestamp,
    window_nanos: i64,
) -> Vec<(u32, Vec<T>)> {
    assert!(window_nanos > 0, "window length must be positive");
    let Some(t0) = items.first().map(&ts) else {
        return Vec::new();
    };
    let mut groups: Vec<(u32, Vec<T>)> = Vec::new();
    for item in items {
        let g = ((ts(&item).as_nanos() - t0.as_nanos()).div_euclid(window_nanos)) as u32;
        match groups.last_mut() {
            Some((last, bucket)) if *last == g => bucket.push(item),
            _ => groups.push((g, vec![item])),
        }
    }
    groups
}

/// SYN (fwd), SYN+ACK (bwd), ACK (fwd), as a time-ordered subsequence.
pub fn filter_handshake(flow: &BiFlow) -> bool {
    let mut stage = 0;
    for fp in &flow.packets {
        let f = fp.pkt.flags;
        stage = match (stage, fp.dir) {
            (0, Direction::Fwd) if f.is_syn_only() => 1,
            (1, Direction::Bwd) if f.is_syn_ack() => 2,
            (2, Direction::Fwd) if f.contains(TcpFlags::ACK) && !f.contains(TcpFlags::SYN) => {
                return true
            }
            (s, _) => s,
        };
    }
    false
}

/// True iff some payload in either direction starts with a TLS record header.
/// Ports play no part.
pub fn filter_encrypted(flow: &BiFlow) -> bool {
    flow.packets
        .iter()
        .any(|fp| tls::is_record_header(&fp.pkt.payload))
}

/// Groups packets into per-window bidirectional flows. Flags are computed but
/// nothing is discarded.
pub fn assemble_flows(packets: Vec<PacketRecord>, window_seconds: u32) -> Vec<BiFlow> {
    let window_nanos = i64::from(window_seconds) * Timestamp::NANOS_PER_SEC;
    let mut order: Vec<FlowKey> = Vec::new();
    let mut groups: HashMap<FlowKey, Vec<PacketRecord>> = HashMap::new();
    for p in packets {
        let key = FlowKey::of(&p);
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(p);
    }

    let mut flows = Vec::new();
    for key in order {
        let mut pkts = groups.remove(&key).expect("key recorded on insert");
        // stable: ties keep capture order
        pkts.sort_by_key(|p| p.ts);
        let initiator = pkts
            .iter()
            .find(|p| p.flags.is_syn_only())
            .unwrap_or(&pkts[0]);
        let initiator = Endpoint::new(initiator.src_ip, initiator.src_port);
        let responder = if initiator == key.a { key.b } else { key.a };
        let t0 = pkts[0].ts;

        let mut handshake = false;
        for (g, window) in window_split(pkts, |p| p.ts, window_nanos) {
            let window_start = t0.add_nanos(i64::from(g) * window_nanos);
            let packets = window
                .into_iter()
                .map(|pkt| {
                    let dir = if Endpoint::new(pkt.src_ip, pkt.src_port) == initiator {
                        Direction::Fwd
                    } else {
                        Direction::Bwd
                    };
                    FlowPacket { dir, pkt }
                })
                .collect();
            let mut flow = BiFlow {
                key,
                initiator,
                responder,
                packets,
                window_index: g,
                window_start,
                window_end: window_start.add_nanos(window_nanos),
                handshake_complete: false,
                encrypted: false,
            };
            if g == 0 {
                handshake = filter_handshake(&flow);
            }
            flow.handshake_complete = handshake;
            flow.encrypted = filter_encrypted(&flow);
            flows.push(flow);
        }
    }
    flows
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowStats {
    pub input_packets: u64,
    pub windows: u64,
    pub kept: u64,
    pub discarded_no_handshake: u64,
    pub discarded_plaintext: u64,
    pub discarded_packets: u64,
}

#[derive(Debug, Clone)]
pub struct FlowReport {
    pub flows: Vec<BiFlow>,
    /// Every assembled window, kept or not, for debug dumps.
    pub all: Vec<FlowDebugRecord>,
    pub stats: FlowStats,
}

/// Assembles flows then applies the handshake filter followed by the
/// encryption filter.
pub fn build_flows(packets: Vec<PacketRecord>, window_seconds: u32) -> FlowReport {
    let mut stats = FlowStats {
        input_packets: packets.len() as u64,
        ..Default::default()
    };
    let mut kept = Vec::new();
    let mut all = Vec::new();
    for flow in assemble_flows(packets, window_seconds) {
        stats.windows += 1;
        all.push(flow.debug_record());
        if !flow.handshake_complete {
            stats.discarded_no_handshake += 1;
            stats.discarded_packets += flow.len() as u64;
            log::debug!("discard {}: no three-way handshake", flow.id());
        } else if !flow.encrypted {
            stats.discarded_plaintext += 1;
            stats.discarded_packets += flow.len() as u64;
            log::debug!("discard {}: no TLS records", flow.id());
        } else {
            stats.kept += 1;
            kept.push(flow);
        }
    }
    FlowReport {
        flows: kept,
        all,
        stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::craft::{tls_record, ClientHelloSpec, TcpSession};
    use std::net::Ipv4Addr;

    fn ip(last: u8) -> IpAddr {
        Ipv4Addr::new(10, 0, 0, last).into()
    }

    fn hello() -> Vec<u8> {
        tls_record(22, 0x0301, &ClientHelloSpec::new(0x0303, vec![0x002f]).encode())
    }

    fn secs(s: f64) -> Timestamp {
        Timestamp((s * 1e9).round() as i64)
    }

    #[test]
    fn key_is_canonical() {
        let x = Endpoint::new(ip(9), 443);
        let y = Endpoint::new(ip(1), 50000);
        assert_eq!(FlowKey::new(x, y, 6), FlowKey::new(y, x, 6));
        assert_eq!(FlowKey::new(x, y, 6).a, y);
    }

    #[test]
    fn interleaved_directions_form_one_flow() {
        let mut s = TcpSession::new((ip(1), 1234), (ip(2), 443), 1, 1);
        s.handshake(secs(0.0), 1_000_000)
            .client_data(secs(0.01), hello())
            .server_data(secs(0.02), vec![0x17, 3, 3, 0, 1, 0]);
        let flows = assemble_flows(s.into_packets(), 1800);
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].n_fwd(), 3);
        assert_eq!(flows[0].n_bwd(), 2);
        assert_eq!(flows[0].initiator, Endpoint::new(ip(1), 1234));
        assert!(flows[0].handshake_complete && flows[0].encrypted);
    }

    #[test]
    fn disjoint_tuples_form_two_flows() {
        let mut a = TcpSession::new((ip(1), 1234), (ip(2), 443), 1, 1);
        a.handshake(secs(0.0), 1_000);
        let mut b = TcpSession::new((ip(1), 1235), (ip(2), 443), 1, 1);
        b.handshake(secs(0.5), 1_000);
        let mut pkts = a.into_packets();
        pkts.extend(b.into_packets());
        assert_eq!(assemble_flows(pkts, 1800).len(), 2);
    }

    #[test]
    fn long_connection_is_windowed() {
        let mut s = TcpSession::new((ip(1), 1234), (ip(2), 443), 1, 1);
        s.client_data(secs(0.0), vec![1]).server_data(secs(2000.0), vec![2]);
        let flows = assemble_flows(s.into_packets(), 1800);
        assert_eq!(flows.len(), 2);
        assert_eq!(flows[0].key, flows[1].key);
        assert_eq!(flows[0].window_start, secs(0.0));
        assert_eq!(flows[1].window_start, secs(1800.0));
        assert_eq!(flows[1].window_index, 1);
        // direction labels stable across windows
        assert_eq!(flows[0].initiator, flows[1].initiator);
        assert_eq!(flows[1].n_bwd(), 1);
    }

    #[test]
    fn window_boundaries_are_half_open() {
        let w = 1800 * Timestamp::NANOS_PER_SEC;
        let g = window_split(vec![secs(0.0), secs(1799.0)], |t| *t, w);
        assert_eq!(g.len(), 1);
        let g = window_split(vec![secs(0.0), secs(1800.0), secs(3600.0)], |t| *t, w);
        assert_eq!(g.iter().map(|(_, v)| v.len()).collect::<Vec<_>>(), [1, 1, 1]);
        let g = window_split(vec![secs(0.0), secs(1799.999), secs(1800.0)], |t| *t, w);
        assert_eq!(g[0].1, vec![secs(0.0), secs(1799.999)]);
        assert_eq!(g[1].1, vec![secs(1800.0)]);
        // no empty groups between sparse packets
        let g = window_split(vec![secs(0.0), secs(9000.0)], |t| *t, w);
        assert_eq!(g.iter().map(|(i, _)| *i).collect::<Vec<_>>(), [0, 5]);
        assert!(window_split(Vec::<Timestamp>::new(), |t| *t, w).is_empty());
    }

    #[test]
    fn handshake_predicate() {
        let mut ok = TcpSession::new((ip(1), 1), (ip(2), 443), 1, 1);
        ok.handshake(secs(0.0), 1000).client_data(secs(1.0), vec![1]);
        assert!(assemble_flows(ok.into_packets(), 1800)[0].handshake_complete);

        let mut rst = TcpSession::new((ip(1), 1), (ip(2), 443), 1, 1);
        rst.syn(secs(0.0)).rst_from_server(secs(0.1));
        assert!(!assemble_flows(rst.into_packets(), 1800)[0].handshake_complete);
    }

    #[test]
    fn headless_capture_is_discarded_and_counted() {
        let mut s = TcpSession::new((ip(1), 1), (ip(2), 443), 1, 1);
        s.client_data(secs(0.0), hello()).server_data(secs(0.1), vec![0x16, 3, 3, 0, 0]);
        let report = build_flows(s.into_packets(), 1800);
        assert!(report.flows.is_empty());
        assert_eq!(report.stats.discarded_no_handshake, 1);
        assert_eq!(report.stats.discarded_packets, 2);
    }

    #[test]
    fn encryption_is_content_based() {
        let mut tls8443 = TcpSession::new((ip(1), 5000), (ip(2), 8443), 1, 1);
        tls8443.handshake(secs(0.0), 1000).client_data(secs(0.1), hello());
        let mut http = TcpSession::new((ip(1), 5001), (ip(2), 443), 1, 1);
        http.handshake(secs(0.0), 1000)
            .client_data(secs(0.1), b"GET / HTTP/1.1\r\nHost: x\r\n\r\n".to_vec());
        let mut pkts = tls8443.into_packets();
        pkts.extend(http.into_packets());
        let report = build_flows(pkts, 1800);
        assert_eq!(report.flows.len(), 1);
        assert_eq!(report.flows[0].responder.port, 8443);
        assert_eq!(report.stats.discarded_plaintext, 1);
        assert_eq!(report.all.len(), 2);
    }

    #[test]
    fn later_windows_inherit_handshake() {
        let mut s = TcpSession::new((ip(1), 1), (ip(2), 443), 1, 1);
        s.handshake(secs(0.0), 1000)
            .client_data(secs(0.1), hello())
            .server_data(secs(1900.0), vec![0x17, 3, 3, 0, 2, 0, 0]);
        let report = build_flows(s.into_packets(), 1800);
        assert_eq!(report.flows.len(), 2);
        assert!(report.flows[1].handshake_complete);
    }
}
