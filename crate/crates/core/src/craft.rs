//! Builders for wire-format bytes: Ethernet/IP/TCP frames, TCP sessions, TLS
//! handshake messages and minimal X.509 certificates.
//!
//! Used by the synthetic corpus generator and by tests that need captures with
//! known contents.

use std::net::{IpAddr, Ipv4Addr};

use crate::capture::{PacketRecord, TcpFlags, IPPROTO_TCP};
use crate::tls::{civil_from_days, days_from_civil};
use crate::Timestamp;

#[derive(Debug, Clone)]
pub struct FrameSpec {
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub flags: TcpFlags,
    pub seq: u32,
    pub ack: u32,
    pub window: u16,
    pub payload: Vec<u8>,
    pub ip_options: Vec<u8>,
}

impl FrameSpec {
    pub fn v4(src: [u8; 4], src_port: u16, dst: [u8; 4], dst_port: u16) -> Self {
        FrameSpec {
            src_ip: Ipv4Addr::from(src).into(),
            dst_ip: Ipv4Addr::from(dst).into(),
            src_port,
            dst_port,
            flags: TcpFlags::ACK,
            seq: 0,
            ack: 0,
            window: 64240,
            payload: Vec::new(),
            ip_options: Vec::new(),
        }
    }

    pub fn flags(mut self, flags: TcpFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn payload(mut self, payload: Vec<u8>) -> Self {
        self.payload = payload;
        self
    }

    pub fn seq(mut self, seq: u32, ack: u32) -> Self {
        self.seq = seq;
        self.ack = ack;
        self
    }

    pub fn window(mut self, window: u16) -> Self {
        self.window = window;
        self
    }

    /// IPv4 options; padded to a multiple of 4 bytes.
    pub fn ip_options(mut self, options: Vec<u8>) -> Self {
        self.ip_options = options;
        self
    }

    pub fn from_packet(p: &PacketRecord) -> Self {
        FrameSpec {
            src_ip: p.src_ip,
            dst_ip: p.dst_ip,
            src_port: p.src_port,
            dst_port: p.dst_port,
            flags: p.flags,
            seq: p.seq,
            ack: p.ack,
            window: p.window,
            payload: p.payload.clone(),
            ip_options: Vec::new(),
        }
    }
}

fn checksum(chunks: &[&[u8]]) -> u16 {
    let mut sum: u32 = 0;
    let mut carry: Option<u8> = None;
    for chunk in chunks {
        for &b in *chunk {
            match carry.take() {
                Some(hi) => sum += u32::from(u16::from_be_bytes([hi, b])),
                None => carry = Some(b),
            }
        }
    }
    if let Some(hi) = carry {
        sum += u32::from(hi) << 8;
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// TCP header (no options) plus payload; checksum left zero.
pub fn tcp_segment(spec: &FrameSpec) -> Vec<u8> {
    let mut tcp = Vec::with_capacity(20 + spec.payload.len());
    tcp.extend_from_slice(&spec.src_port.to_be_bytes());
    tcp.extend_from_slice(&spec.dst_port.to_be_bytes());
    tcp.extend_from_slice(&spec.seq.to_be_bytes());
    tcp.extend_from_slice(&spec.ack.to_be_bytes());
    tcp.push(5 << 4);
    tcp.push(spec.flags.0);
    tcp.extend_from_slice(&spec.window.to_be_bytes());
    tcp.extend_from_slice(&[0, 0, 0, 0]);
    tcp.extend_from_slice(&spec.payload);
    tcp
}

fn ip_packet(spec: &FrameSpec) -> (u16, Vec<u8>) {
    let mut tcp = tcp_segment(spec);
    match (spec.src_ip, spec.dst_ip) {
        (IpAddr::V4(src), IpAddr::V4(dst)) => {
            let pseudo_len = (tcp.len() as u16).to_be_bytes();
            let pseudo = [&src.octets()[..], &dst.octets()[..], &[0, IPPROTO_TCP], &pseudo_len];
            let mut parts: Vec<&[u8]> = pseudo.to_vec();
            parts.push(&tcp);
            let sum = checksum(&parts);
            tcp[16..18].copy_from_slice(&sum.to_be_bytes());

            let mut options = spec.ip_options.clone();
            while options.len() % 4 != 0 {
                options.push(0);
            }
            let ihl = 20 + options.len();
            let total = (ihl + tcp.len()) as u16;
            let mut ip = Vec::with_capacity(total as usize);
            ip.push(0x40 | (ihl / 4) as u8);
            ip.push(0);
            ip.extend_from_slice(&total.to_be_bytes());
            ip.extend_from_slice(&[0, 0, 0x40, 0]);
            ip.push(64);
            ip.push(IPPROTO_TCP);
            ip.extend_from_slice(&[0, 0]);
            ip.extend_from_slice(&src.octets());
            ip.extend_from_slice(&dst.octets());
            ip.extend_from_slice(&options);
            let sum = checksum(&[&ip]);
            ip[10..12].copy_from_slice(&sum.to_be_bytes());
            ip.extend_from_slice(&tcp);
            (0x0800, ip)
        }
        (src, dst) => {
            let to16 = |a: IpAddr| match a {
                IpAddr::V4(v) => v.to_ipv6_mapped().octets(),
                IpAddr::V6(v) => v.octets(),
            };
            let mut ip = vec![0x60, 0, 0, 0];
            ip.extend_from_slice(&(tcp.len() as u16).to_be_bytes());
            ip.push(IPPROTO_TCP);
            ip.push(64);
            ip.extend_from_slice(&to16(src));
            ip.extend_from_slice(&to16(dst));
            ip.extend_from_slice(&tcp);
            (0x86dd, ip)
        }
    }
}

const CLIENT_MAC: [u8; 6] = [0x02, 0x00, 0x00, 0x00, 0x00, 0x01];
const SERVER_MAC: [u8; 6] = [0x02, 0x00, 0x00, 0x00, 0x00, 0x02];

/// Ethernet II frame around an IPv4 (or IPv6) TCP segment.
pub fn ethernet_ipv4_tcp(spec: &FrameSpec) -> Vec<u8> {
    let (ethertype, ip) = ip_packet(spec);
    let mut frame = Vec::with_capacity(14 + ip.len());
    frame.extend_from_slice(&SERVER_MAC);
    frame.extend_from_slice(&CLIENT_MAC);
    frame.extend_from_slice(&ethertype.to_be_bytes());
    frame.extend_from_slice(&ip);
    frame
}

/// Raw IP packet (linktype 101).
pub fn raw_ip_tcp(spec: &FrameSpec) -> Vec<u8> {
    ip_packet(spec).1
}

pub fn packet_to_ethernet(p: &PacketRecord) -> Vec<u8> {
    ethernet_ipv4_tcp(&FrameSpec::from_packet(p))
}

/// Scripted TCP connection producing decoded packet records with consistent
/// sequence numbers.
#[derive(Debug, Clone)]
pub struct TcpSession {
    client: (IpAddr, u16),
    server: (IpAddr, u16),
    client_seq: u32,
    server_seq: u32,
    pub client_window: u16,
    pub server_window: u16,
    packets: Vec<PacketRecord>,
}

impl TcpSession {
    pub fn new(client: (IpAddr, u16), server: (IpAddr, u16), client_isn: u32, server_isn: u32) -> Self {
        TcpSession {
            client,
            server,
            client_seq: client_isn,
            server_seq: server_isn,
            client_window: 64240,
            server_window: 65160,
            packets: Vec::new(),
        }
    }

    fn push(&mut self, from_client: bool, ts: Timestamp, flags: TcpFlags, payload: Vec<u8>) {
        let (src, dst) = if from_client {
            (self.client, self.server)
        } else {
            (self.server, self.client)
        };
        let (seq, ack, window) = if from_client {
            (self.client_seq, self.server_seq, self.client_window)
        } else {
            (self.server_seq, self.client_seq, self.server_window)
        };
        let advance = payload.len() as u32
            + u32::from(flags.contains(TcpFlags::SYN))
            + u32::from(flags.contains(TcpFlags::FIN));
        if from_client {
            self.client_seq = self.client_seq.wrapping_add(advance);
        } else {
            self.server_seq = self.server_seq.wrapping_add(advance);
        }
        let header_len = match src.0 {
            IpAddr::V4(_) => 14 + 20 + 20,
            IpAddr::V6(_) => 14 + 40 + 20,
        };
        self.packets.push(PacketRecord {
            ts,
            src_ip: src.0,
            dst_ip: dst.0,
            src_port: src.1,
            dst_port: dst.1,
            protocol: IPPROTO_TCP,
            flags,
            seq,
            ack: if flags.contains(TcpFlags::ACK) { ack } else { 0 },
            window,
            wire_len: (header_len + payload.len()) as u32,
            payload,
        });
    }

    pub fn syn(&mut self, ts: Timestamp) -> &mut Self {
        self.push(true, ts, TcpFlags::SYN, Vec::new());
        self
    }

    pub fn syn_ack(&mut self, ts: Timestamp) -> &mut Self {
        self.push(false, ts, TcpFlags::SYN | TcpFlags::ACK, Vec::new());
        self
    }

    pub fn client_ack(&mut self, ts: Timestamp) -> &mut Self {
        self.push(true, ts, TcpFlags::ACK, Vec::new());
        self
    }

    pub fn server_ack(&mut self, ts: Timestamp) -> &mut Self {
        self.push(false, ts, TcpFlags::ACK, Vec::new());
        self
    }

    /// SYN, SYN-ACK, ACK at `ts`, `ts + rtt`, `ts + 2 rtt`.
    pub fn handshake(&mut self, ts: Timestamp, rtt_nanos: i64) -> &mut Self {
        self.syn(ts);
        self.syn_ack(ts.add_nanos(rtt_nanos));
        self.client_ack(ts.add_nanos(2 * rtt_nanos));
        self
    }

    pub fn client_data(&mut self, ts: Timestamp, payload: Vec<u8>) -> &mut Self {
        self.push(true, ts, TcpFlags::ACK | TcpFlags::PSH, payload);
        self
    }

    pub fn server_data(&mut self, ts: Timestamp, payload: Vec<u8>) -> &mut Self {
        self.push(false, ts, TcpFlags::ACK | TcpFlags::PSH, payload);
        self
    }

    pub fn client_fin(&mut self, ts: Timestamp) -> &mut Self {
        self.push(true, ts, TcpFlags::FIN | TcpFlags::ACK, Vec::new());
        self
    }

    pub fn server_fin(&mut self, ts: Timestamp) -> &mut Self {
        self.push(false, ts, TcpFlags::FIN | TcpFlags::ACK, Vec::new());
        self
    }

    pub fn rst_from_server(&mut self, ts: Timestamp) -> &mut Self {
        self.push(false, ts, TcpFlags::RST | TcpFlags::ACK, Vec::new());
        self
    }

    pub fn packets(&self) -> &[PacketRecord] {
        &self.packets
    }

    pub fn into_packets(self) -> Vec<PacketRecord> {
        self.packets
    }
}

// --- TLS ---------------------------------------------------------------------

pub const CT_CHANGE_CIPHER_SPEC: u8 = 20;
pub const CT_ALERT: u8 = 21;
pub const CT_HANDSHAKE: u8 = 22;
pub const CT_APPLICATION_DATA: u8 = 23;

pub fn tls_record(content_type: u8, version: u16, fragment: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + fragment.len());
    out.push(content_type);
    out.extend_from_slice(&version.to_be_bytes());
    out.extend_from_slice(&(fragment.len() as u16).to_be_bytes());
    out.extend_from_slice(fragment);
    out
}

fn push_u24(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_be_bytes()[1..]);
}

pub fn handshake_message(msg_type: u8, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + body.len());
    out.push(msg_type);
    push_u24(&mut out, body.len());
    out.extend_from_slice(body);
    out
}

#[derive(Debug, Clone, Default)]
pub struct ClientHelloSpec {
    pub legacy_version: u16,
    pub ciphers: Vec<u16>,
    /// `None` produces an old-style hello with no extensions block at all.
    pub extensions: Option<Vec<(u16, Vec<u8>)>>,
}

impl ClientHelloSpec {
    pub fn new(legacy_version: u16, ciphers: Vec<u16>) -> Self {
        ClientHelloSpec {
            legacy_version,
            ciphers,
            extensions: None,
        }
    }

    pub fn extension(mut self, code: u16, data: Vec<u8>) -> Self {
        self.extensions.get_or_insert_with(Vec::new).push((code, data));
        self
    }

    pub fn sni(self, host: &str) -> Self {
        let name = host.as_bytes();
        let mut data = Vec::new();
        data.extend_from_slice(&((name.len() + 3) as u16).to_be_bytes());
        data.push(0);
        data.extend_from_slice(&(name.len() as u16).to_be_bytes());
        data.extend_from_slice(name);
        self.extension(0, data)
    }

    pub fn supported_versions(self, versions: &[u16]) -> Self {
        let mut data = vec![(versions.len() * 2) as u8];
        for v in versions {
            data.extend_from_slice(&v.to_be_bytes());
        }
        self.extension(43, data)
    }

    /// Handshake message bytes (type 1, 24-bit length, body).
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        body.extend_from_slice(&self.legacy_version.to_be_bytes());
        body.extend_from_slice(&[0x5a; 32]);
        body.push(0);
        body.extend_from_slice(&((self.ciphers.len() * 2) as u16).to_be_bytes());
        for c in &self.ciphers {
            body.extend_from_slice(&c.to_be_bytes());
        }
        body.extend_from_slice(&[1, 0]);
        if let Some(exts) = &self.extensions {
            encode_extensions(&mut body, exts);
        }
        handshake_message(1, &body)
    }
}

fn encode_extensions(body: &mut Vec<u8>, exts: &[(u16, Vec<u8>)]) {
    let total: usize = exts.iter().map(|(_, d)| 4 + d.len()).sum();
    body.extend_from_slice(&(total as u16).to_be_bytes());
    for (code, data) in exts {
        body.extend_from_slice(&code.to_be_bytes());
        body.extend_from_slice(&(data.len() as u16).to_be_bytes());
        body.extend_from_slice(data);
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServerHelloSpec {
    pub legacy_version: u16,
    pub cipher: u16,
    pub extensions: Vec<(u16, Vec<u8>)>,
}

impl ServerHelloSpec {
    pub fn new(legacy_version: u16, cipher: u16) -> Self {
        ServerHelloSpec {
            legacy_version,
            cipher,
            extensions: Vec::new(),
        }
    }

    pub fn extension(mut self, code: u16, data: Vec<u8>) -> Self {
        self.extensions.push((code, data));
        self
    }

    pub fn selected_version(self, version: u16) -> Self {
        self.extension(43, version.to_be_bytes().to_vec())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        body.extend_from_slice(&self.legacy_version.to_be_bytes());
        body.extend_from_slice(&[0xa5; 32]);
        body.push(0);
        body.extend_from_slice(&self.cipher.to_be_bytes());
        body.push(0);
        if !self.extensions.is_empty() {
            encode_extensions(&mut body, &self.extensions);
        }
        handshake_message(2, &body)
    }
}

/// Certificate handshake message (TLS 1.2 layout) carrying a chain.
pub fn certificate_message(chain: &[Vec<u8>]) -> Vec<u8> {
    let mut list = Vec::new();
    for cert in chain {
        push_u24(&mut list, cert.len());
        list.extend_from_slice(cert);
    }
    let mut body = Vec::new();
    push_u24(&mut body, list.len());
    body.extend_from_slice(&list);
    handshake_message(11, &body)
}

pub fn server_hello_done() -> Vec<u8> {
    handshake_message(14, &[])
}

// --- DER ---------------------------------------------------------------------

pub fn der_tlv(tag: u8, content: &[u8]) -> Vec<u8> {
    let mut out = vec![tag];
    let len = content.len();
    if len < 0x80 {
        out.push(len as u8);
    } else {
        let bytes = (len as u32).to_be_bytes();
        let skip = bytes.iter().take_while(|b| **b == 0).count();
        out.push(0x80 | (4 - skip) as u8);
        out.extend_from_slice(&bytes[skip..]);
    }
    out.extend_from_slice(content);
    out
}

/// Certificate time encoding choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerTime {
    Utc(i64),
    Generalized(i64),
}

impl DerTime {
    /// UTCTime for 1950..2049, GeneralizedTime otherwise (the RFC 5280 rule).
    pub fn auto(unix_secs: i64) -> Self {
        let (y, _, _) = civil_from_days(unix_secs.div_euclid(86_400));
        if (1950..2050).contains(&y) {
            DerTime::Utc(unix_secs)
        } else {
            DerTime::Generalized(unix_secs)
        }
    }

    pub fn encode(self) -> Vec<u8> {
        let (tag, secs, four_digit) = match self {
            DerTime::Utc(s) => (0x17, s, false),
            DerTime::Generalized(s) => (0x18, s, true),
        };
        let days = secs.div_euclid(86_400);
        let rem = secs.rem_euclid(86_400);
        let (y, m, d) = civil_from_days(days);
        let (hh, mm, ss) = (rem / 3600, rem % 3600 / 60, rem % 60);
        let text = if four_digit {
            format!("{y:04}{m:02}{d:02}{hh:02}{mm:02}{ss:02}Z")
        } else {
            format!("{:02}{m:02}{d:02}{hh:02}{mm:02}{ss:02}Z", y % 100)
        };
        der_tlv(tag, text.as_bytes())
    }
}

fn der_name(common_name: &str) -> Vec<u8> {
    // Name ::= SEQUENCE OF SET OF AttributeTypeAndValue (CN = 2.5.4.3)
    let oid = der_tlv(0x06, &[0x55, 0x04, 0x03]);
    let value = der_tlv(0x0c, common_name.as_bytes());
    let atv = der_tlv(0x30, &[oid, value].concat());
    der_tlv(0x30, &der_tlv(0x31, &atv))
}

#[derive(Debug, Clone)]
pub struct CertSpec {
    pub issuer_cn: String,
    pub subject_cn: String,
    pub not_before: DerTime,
    pub not_after: DerTime,
    pub serial: u32,
}

impl CertSpec {
    pub fn new(issuer: &str, subject: &str, not_before: i64, not_after: i64) -> Self {
        CertSpec {
            issuer_cn: issuer.into(),
            subject_cn: subject.into(),
            not_before: DerTime::auto(not_before),
            not_after: DerTime::auto(not_after),
            serial: 0x1234,
        }
    }

    /// Minimal, structurally valid X.509 v3 certificate (signature bytes are
    /// filler; nothing verifies them).
    pub fn encode(&self) -> Vec<u8> {
        // sha256WithRSAEncryption 1.2.840.113549.1.1.11
        let alg = der_tlv(
            0x30,
            &[
                der_tlv(0x06, &[0x2a, 0x86, 0x48, 0x86, 0xf7, 0x0d, 0x01, 0x01, 0x0b]),
                vec![0x05, 0x00],
            ]
            .concat(),
        );
        let version = der_tlv(0xa0, &der_tlv(0x02, &[2]));
        let serial = der_tlv(0x02, &self.serial.to_be_bytes());
        let validity = der_tlv(0x30, &[self.not_before.encode(), self.not_after.encode()].concat());
        // rsaEncryption key with a toy modulus
        let spki = der_tlv(
            0x30,
            &[
                der_tlv(
                    0x30,
                    &[
                        der_tlv(0x06, &[0x2a, 0x86, 0x48, 0x86, 0xf7, 0x0d, 0x01, 0x01, 0x01]),
                        vec![0x05, 0x00],
                    ]
                    .concat(),
                ),
                der_tlv(0x03, &[0x00, 0x30, 0x06, 0x02, 0x01, 0x0b, 0x02, 0x01, 0x03]),
            ]
            .concat(),
        );
        let tbs = der_tlv(
            0x30,
            &[
                version,
                serial,
                alg.clone(),
                der_name(&self.issuer_cn),
                validity,
                der_name(&self.subject_cn),
                spki,
            ]
            .concat(),
        );
        let signature = der_tlv(0x03, &[0x00, 0xde, 0xad, 0xbe, 0xef]);
        der_tlv(0x30, &[tbs, alg, signature].concat())
    }
}

/// Unix seconds at midnight UTC of a calendar date.
pub fn unix_date(year: i64, month: u32, day: u32) -> i64 {
    days_from_civil(year, month, day) * 86_400
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ipv4_header_checksum_verifies() {
        let frame = ethernet_ipv4_tcp(&FrameSpec::v4([192, 168, 0, 1], 1, [8, 8, 8, 8], 2));
        assert_eq!(checksum(&[&frame[14..34]]), 0);
    }

    #[test]
    fn der_length_forms() {
        assert_eq!(der_tlv(0x04, &[0; 3])[..2], [0x04, 3]);
        let long = der_tlv(0x04, &[0; 200]);
        assert_eq!(long[..3], [0x04, 0x81, 200]);
        let longer = der_tlv(0x04, &[0; 300]);
        assert_eq!(longer[..4], [0x04, 0x82, 0x01, 0x2c]);
    }

    #[test]
    fn session_sequence_numbers_advance() {
        let c: IpAddr = Ipv4Addr::new(10, 0, 0, 1).into();
        let s: IpAddr = Ipv4Addr::new(10, 0, 0, 2).into();
        let mut sess = TcpSession::new((c, 40000), (s, 443), 1000, 5000);
        sess.handshake(Timestamp(0), 1_000_000)
            .client_data(Timestamp(3_000_000), vec![0; 10])
            .client_data(Timestamp(4_000_000), vec![0; 5]);
        let p = sess.packets();
        assert_eq!(p[0].seq, 1000);
        assert_eq!(p[1].ack, 1001);
        assert_eq!(p[3].seq, 1001);
        assert_eq!(p[4].seq, 1011);
    }
}
