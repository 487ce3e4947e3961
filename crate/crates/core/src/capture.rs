//! Classic pcap reader/writer and Ethernet / IPv4 / IPv6 / TCP decoding.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Timestamp;

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW: u32 = 101;

pub const IPPROTO_TCP: u8 = 6;

const MAGIC_MICRO: u32 = 0xa1b2c3d4;
const MAGIC_MICRO_SWAPPED: u32 = 0xd4c3b2a1;
const MAGIC_NANO: u32 = 0xa1b23c4d;
const MAGIC_NANO_SWAPPED: u32 = 0x4d3cb2a1;
const MAGIC_PCAPNG: u32 = 0x0a0d0d0a;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
// Anything above this is a corrupt length field, not a real frame.
const MAX_RECORD_LEN: u32 = 256 * 1024 * 1024;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;
const MAX_VLAN_DEPTH: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CaptureError {
    #[error("bad pcap magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("pcapng captures are not supported; convert to classic pcap (e.g. `editcap -F pcap`)")]
    Pcapng,
    #[error("truncated pcap global header: {0} bytes, need 24")]
    TruncatedHeader(usize),
    #[error("unsupported link type {0} (supported: 1 Ethernet, 101 raw IP)")]
    UnsupportedLinkType(u32),
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TsResolution {
    Micro,
    Nano,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcapHeader {
    pub magic: u32,
    pub version: (u16, u16),
    pub snaplen: u32,
    pub linktype: u32,
    pub resolution: TsResolution,
    pub big_endian: bool,
}

#[derive(Clone, Copy)]
struct Endian(bool);

impl Endian {
    fn u16(self, b: &[u8]) -> u16 {
        let a = [b[0], b[1]];
        if self.0 {
            u16::from_be_bytes(a)
        } else {
            u16::from_le_bytes(a)
        }
    }

    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        if self.0 {
            u32::from_be_bytes(a)
        } else {
            u32::from_le_bytes(a)
        }
    }
}

impl PcapHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self, CaptureError> {
        if bytes.len() >= 4 {
            let magic = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
            if magic == MAGIC_PCAPNG {
                return Err(CaptureError::Pcapng);
            }
        }
        if bytes.len() < GLOBAL_HEADER_LEN {
            return Err(CaptureError::TruncatedHeader(bytes.len()));
        }
        let magic = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        let (big_endian, resolution) = match magic {
            MAGIC_MICRO => (false, TsResolution::Micro),
            MAGIC_NANO => (false, TsResolution::Nano),
            MAGIC_MICRO_SWAPPED => (true, TsResolution::Micro),
            MAGIC_NANO_SWAPPED => (true, TsResolution::Nano),
            other => return Err(CaptureError::BadMagic(other)),
        };
        let e = Endian(big_endian);
        Ok(PcapHeader {
            magic,
            version: (e.u16(&bytes[4..]), e.u16(&bytes[6..])),
            snaplen: e.u32(&bytes[16..]),
            linktype: e.u32(&bytes[20..]),
            resolution,
            big_endian,
        })
    }
}

/// One captured frame, borrowed from the file bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame<'a> {
    pub data: &'a [u8],
    pub ts: Timestamp,
    pub orig_len: u32,
}

#[derive(Debug, Clone)]
pub struct Capture<'a> {
    pub header: PcapHeader,
    pub frames: Vec<RawFrame<'a>>,
    /// The last record was cut short; frames before it are intact.
    pub truncated: bool,
}

impl Capture<'_> {
    pub fn linktype(&self) -> u32 {
        self.header.linktype
    }
}

/// Splits a classic pcap file into frames, in file order.
pub fn read_pcap(bytes: &[u8]) -> Result<Capture<'_>, CaptureError> {
    let header = PcapHeader::parse(bytes)?;
    let e = Endian(header.big_endian);
    let mut frames = Vec::new();
    let mut truncated = false;
    let mut pos = GLOBAL_HEADER_LEN;
    while pos < bytes.len() {
        if bytes.len() - pos < RECORD_HEADER_LEN {
            truncated = true;
            break;
        }
        let rec = &bytes[pos..pos + RECORD_HEADER_LEN];
        let ts_sec = e.u32(&rec[0..]) as i64;
        let ts_frac = e.u32(&rec[4..]) as i64;
        let incl_len = e.u32(&rec[8..]);
        let orig_len = e.u32(&rec[12..]);
        if incl_len > MAX_RECORD_LEN {
            truncated = true;
            break;
        }
        let start = pos + RECORD_HEADER_LEN;
        let end = start + incl_len as usize;
        if end > bytes.len() {
            truncated = true;
            break;
        }
        let nanos = match header.resolution {
            TsResolution::Micro => ts_frac * 1_000,
            TsResolution::Nano => ts_frac,
        };
        frames.push(RawFrame {
            data: &bytes[start..end],
            ts: Timestamp::from_parts(ts_sec, nanos),
            orig_len,
        });
        pos = end;
    }
    if truncated {
        log::warn!(
            "pcap truncated after {} complete records at offset {pos}",
            frames.len()
        );
    }
    Ok(Capture {
        header,
        frames,
        truncated,
    })
}

/// TCP flag bitset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);
    pub const URG: TcpFlags = TcpFlags(0x20);

    pub fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_syn_only(self) -> bool {
        self.contains(Self::SYN) && !self.contains(Self::ACK)
    }

    pub fn is_syn_ack(self) -> bool {
        self.contains(Self::SYN) && self.contains(Self::ACK)
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | rhs.0)
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [(TcpFlags, &str); 6] = [
            (TcpFlags::SYN, "S"),
            (TcpFlags::ACK, "A"),
            (TcpFlags::FIN, "F"),
            (TcpFlags::RST, "R"),
            (TcpFlags::PSH, "P"),
            (TcpFlags::URG, "U"),
        ];
        for (flag, name) in NAMES {
            if self.contains(flag) {
                f.write_str(name)?;
            }
        }
        Ok(())
    }
}

/// One decoded TCP segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub ts: Timestamp,
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub flags: TcpFlags,
    pub seq: u32,
    pub ack: u32,
    pub window: u16,
    pub payload: Vec<u8>,
    pub wire_len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NonIp,
    NonTcp,
    /// Non-first IP fragment.
    Fragment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Packet(PacketRecord),
    Skip(SkipReason),
}

fn be16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

/// Decodes one link-layer frame down to TCP.
pub fn decode_frame(
    data: &[u8],
    linktype: u32,
    ts: Timestamp,
    orig_len: u32,
) -> Result<Decoded, CaptureError> {
    let ip = match linktype {
        LINKTYPE_ETHERNET => {
            if data.len() < 14 {
                return Err(CaptureError::MalformedFrame("ethernet header"));
            }
            let mut ethertype = be16(&data[12..]);
            let mut off = 14;
            let mut tags = 0;
            while ethertype == ETHERTYPE_VLAN || ethertype == ETHERTYPE_QINQ {
                tags += 1;
                if tags > MAX_VLAN_DEPTH {
                    return Err(CaptureError::MalformedFrame("vlan tags nested too deep"));
                }
                if data.len() < off + 4 {
                    return Err(CaptureError::MalformedFrame("vlan tag"));
                }
                ethertype = be16(&data[off + 2..]);
                off += 4;
            }
            match ethertype {
                ETHERTYPE_IPV4 | ETHERTYPE_IPV6 => &data[off..],
                _ => return Ok(Decoded::Skip(SkipReason::NonIp)),
            }
        }
        LINKTYPE_RAW => data,
        other => return Err(CaptureError::UnsupportedLinkType(other)),
    };
    if ip.is_empty() {
        return Err(CaptureError::MalformedFrame("empty ip packet"));
    }
    let (src_ip, dst_ip, segment) = match ip[0] >> 4 {
        4 => match ipv4_segment(ip)? {
            Ok(v) => v,
            Err(skip) => return Ok(Decoded::Skip(skip)),
        },
        6 => match ipv6_segment(ip)? {
            Ok(v) => v,
            Err(skip) => return Ok(Decoded::Skip(skip)),
        },
        _ if linktype == LINKTYPE_RAW => return Ok(Decoded::Skip(SkipReason::NonIp)),
        _ => return Err(CaptureError::MalformedFrame("ip version")),
    };
    if segment.len() < 20 {
        return Err(CaptureError::MalformedFrame("tcp header"));
    }
    let data_off = ((segment[12] >> 4) as usize) * 4;
    if data_off < 20 || data_off > segment.len() {
        return Err(CaptureError::MalformedFrame("tcp data offset"));
    }
    let payload = segment[data_off..].to_vec();
    Ok(Decoded::Packet(PacketRecord {
        ts,
        src_ip,
        dst_ip,
        src_port: be16(&segment[0..]),
        dst_port: be16(&segment[2..]),
        protocol: IPPROTO_TCP,
        flags: TcpFlags(segment[13] & 0x3f),
        seq: be32(&segment[4..]),
        ack: be32(&segment[8..]),
        window: be16(&segment[14..]),
        payload,
        wire_len: orig_len.max(data.len() as u32),
    }))
}

type Segment<'a> = (IpAddr, IpAddr, &'a [u8]);

fn ipv4_segment(ip: &[u8]) -> Result<Result<Segment<'_>, SkipReason>, CaptureError> {
    if ip.len() < 20 {
        return Err(CaptureError::MalformedFrame("ipv4 header"));
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    if ihl < 20 || ihl > ip.len() {
        return Err(CaptureError::MalformedFrame("ipv4 header length"));
    }
    let total = be16(&ip[2..]) as usize;
    if total < ihl {
        return Err(CaptureError::MalformedFrame("ipv4 total length"));
    }
    let frag_offset = be16(&ip[6..]) & 0x1fff;
    if frag_offset != 0 {
        return Ok(Err(SkipReason::Fragment));
    }
    if ip[9] != IPPROTO_TCP {
        return Ok(Err(SkipReason::NonTcp));
    }
    // Ethernet padding past total length is not payload; snaplen cuts may
    // leave fewer bytes than declared.
    let end = total.min(ip.len());
    let src = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    Ok(Ok((src.into(), dst.into(), &ip[ihl..end])))
}

fn ipv6_segment(ip: &[u8]) -> Result<Result<Segment<'_>, SkipReason>, CaptureError> {
    if ip.len() < 40 {
        return Err(CaptureError::MalformedFrame("ipv6 header"));
    }
    let payload_len = be16(&ip[4..]) as usize;
    let end = (40 + payload_len).min(ip.len());
    let mut next = ip[6];
    let mut off = 40;
    let src = Ipv6Addr::from(<[u8; 16]>::try_from(&ip[8..24]).expect("16 bytes"));
    let dst = Ipv6Addr::from(<[u8; 16]>::try_from(&ip[24..40]).expect("16 bytes"));
    loop {
        match next {
            IPPROTO_TCP => return Ok(Ok((src.into(), dst.into(), &ip[off..end.max(off)]))),
            // hop-by-hop, routing, destination options
            0 | 43 | 60 => {
                if end < off + 8 {
                    return Err(CaptureError::MalformedFrame("ipv6 extension header"));
                }
                let len = (ip[off + 1] as usize + 1) * 8;
                if end < off + len {
                    return Err(CaptureError::MalformedFrame("ipv6 extension header"));
                }
                next = ip[off];
                off += len;
            }
            44 => {
                if end < off + 8 {
                    return Err(CaptureError::MalformedFrame("ipv6 fragment header"));
                }
                if be16(&ip[off + 2..]) >> 3 != 0 {
                    return Ok(Err(SkipReason::Fragment));
                }
                next = ip[off];
                off += 8;
            }
            _ => return Ok(Err(SkipReason::NonTcp)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeStats {
    pub frames: u64,
    pub tcp: u64,
    pub non_ip: u64,
    pub non_tcp: u64,
    pub fragments: u64,
    pub malformed: u64,
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct DecodedCapture {
    pub header: PcapHeader,
    pub packets: Vec<PacketRecord>,
    pub stats: DecodeStats,
}

/// Reads and decodes a whole capture; malformed frames are counted, not fatal.
pub fn decode_capture(bytes: &[u8]) -> Result<DecodedCapture, CaptureError> {
    let capture = read_pcap(bytes)?;
    let linktype = capture.linktype();
    if linktype != LINKTYPE_ETHERNET && linktype != LINKTYPE_RAW {
        return Err(CaptureError::UnsupportedLinkType(linktype));
    }
    let mut stats = DecodeStats {
        truncated: capture.truncated,
        ..Default::default()
    };
    let mut packets = Vec::new();
    for frame in &capture.frames {
        stats.frames += 1;
        match decode_frame(frame.data, linktype, frame.ts, frame.orig_len) {
            Ok(Decoded::Packet(p)) => {
                stats.tcp += 1;
                packets.push(p);
            }
            Ok(Decoded::Skip(SkipReason::NonIp)) => stats.non_ip += 1,
            Ok(Decoded::Skip(SkipReason::NonTcp)) => stats.non_tcp += 1,
            Ok(Decoded::Skip(SkipReason::Fragment)) => stats.fragments += 1,
            Err(_) => stats.malformed += 1,
        }
    }
    Ok(DecodedCapture {
        header: capture.header,
        packets,
        stats,
    })
}

/// Serializes frames as a classic pcap file.
#[derive(Debug, Clone)]
pub struct PcapWriter {
    big_endian: bool,
    resolution: TsResolution,
    linktype: u32,
    snaplen: u32,
    buf: Vec<u8>,
}

impl PcapWriter {
    pub fn new(linktype: u32) -> Self {
        Self::with_format(linktype, false, TsResolution::Micro)
    }

    pub fn with_format(linktype: u32, big_endian: bool, resolution: TsResolution) -> Self {
        let mut w = PcapWriter {
            big_endian,
            resolution,
            linktype,
            snaplen: 65535,
            buf: Vec::new(),
        };
        let magic = match resolution {
            TsResolution::Micro => MAGIC_MICRO,
            TsResolution::Nano => MAGIC_NANO,
        };
        w.put_u32(magic);
        w.put_u16(2);
        w.put_u16(4);
        w.put_u32(0);
        w.put_u32(0);
        w.put_u32(w.snaplen);
        w.put_u32(linktype);
        w
    }

    fn put_u16(&mut self, v: u16) {
        let b = if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        self.buf.extend_from_slice(&b);
    }

    fn put_u32(&mut self, v: u32) {
        let b = if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        self.buf.extend_from_slice(&b);
    }

    pub fn linktype(&self) -> u32 {
        self.linktype
    }

    pub fn push(&mut self, ts: Timestamp, frame: &[u8]) {
        let secs = ts.as_nanos().div_euclid(Timestamp::NANOS_PER_SEC);
        let nanos = ts.as_nanos().rem_euclid(Timestamp::NANOS_PER_SEC);
        let frac = match self.resolution {
            TsResolution::Micro => nanos / 1_000,
            TsResolution::Nano => nanos,
        };
        self.put_u32(secs as u32);
        self.put_u32(frac as u32);
        self.put_u32(frame.len() as u32);
        self.put_u32(frame.len() as u32);
        self.buf.extend_from_slice(frame);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::craft::{ethernet_ipv4_tcp, FrameSpec};

    fn le_header(magic: u32, linktype: u32) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&magic.to_le_bytes());
        v.extend_from_slice(&2u16.to_le_bytes());
        v.extend_from_slice(&4u16.to_le_bytes());
        v.extend_from_slice(&[0; 8]);
        v.extend_from_slice(&65535u32.to_le_bytes());
        v.extend_from_slice(&linktype.to_le_bytes());
        v
    }

    #[test]
    fn empty_capture_has_no_frames() {
        let bytes = le_header(0xa1b2c3d4, 1);
        let cap = read_pcap(&bytes).unwrap();
        assert!(cap.frames.is_empty());
        assert!(!cap.truncated);
        assert_eq!(cap.header.version, (2, 4));
    }

    #[test]
    fn hand_assembled_record() {
        // record header: ts_sec=100, ts_usec=5, incl_len=orig_len=60
        let mut bytes = le_header(0xa1b2c3d4, 1);
        for v in [100u32, 5, 60, 60] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend((0..60u8).collect::<Vec<_>>());
        let cap = read_pcap(&bytes).unwrap();
        assert_eq!(cap.frames.len(), 1);
        assert_eq!(cap.frames[0].ts, Timestamp(100_000_005_000));
        assert_eq!(cap.frames[0].ts.as_secs_f64(), 100.000005);
        assert_eq!(cap.frames[0].data.len(), 60);
        assert_eq!(cap.frames[0].data[59], 59);
    }

    #[test]
    fn nanosecond_magic() {
        let mut bytes = le_header(0xa1b23c4d, 101);
        for v in [7u32, 123_456_789, 0, 0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cap = read_pcap(&bytes).unwrap();
        assert_eq!(cap.header.resolution, TsResolution::Nano);
        assert_eq!(cap.frames[0].ts, Timestamp::from_parts(7, 123_456_789));
    }

    #[test]
    fn header_errors() {
        assert_eq!(
            read_pcap(&[0xd4, 0xc3]).unwrap_err(),
            CaptureError::TruncatedHeader(2)
        );
        assert_eq!(
            read_pcap(&le_header(0xdeadbeef, 1)).unwrap_err(),
            CaptureError::BadMagic(0xdeadbeef)
        );
        let ng = [0x0a, 0x0d, 0x0d, 0x0a, 0, 0, 0, 0];
        let err = read_pcap(&ng).unwrap_err();
        assert_eq!(err, CaptureError::Pcapng);
        assert!(err.to_string().contains("pcapng"));
    }

    #[test]
    fn truncated_trailing_record_is_a_warning() {
        let mut bytes = le_header(0xa1b2c3d4, 1);
        for v in [1u32, 0, 10, 10] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[0u8; 10]);
        for v in [2u32, 0, 100, 100] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[0u8; 40]);
        let cap = read_pcap(&bytes).unwrap();
        assert_eq!(cap.frames.len(), 1);
        assert!(cap.truncated);
    }

    #[test]
    fn arp_is_skipped() {
        let mut frame = vec![0u8; 42];
        frame[12] = 0x08;
        frame[13] = 0x06;
        let d = decode_frame(&frame, LINKTYPE_ETHERNET, Timestamp(0), 42).unwrap();
        assert_eq!(d, Decoded::Skip(SkipReason::NonIp));
    }

    #[test]
    fn ipv4_tcp_ports_are_big_endian() {
        let spec = FrameSpec::v4([10, 0, 0, 1], 443, [10, 0, 0, 2], 51000)
            .flags(TcpFlags::ACK | TcpFlags::PSH)
            .payload(b"hello".to_vec());
        let frame = ethernet_ipv4_tcp(&spec);
        match decode_frame(&frame, LINKTYPE_ETHERNET, Timestamp(0), frame.len() as u32).unwrap() {
            Decoded::Packet(p) => {
                assert_eq!(p.protocol, IPPROTO_TCP);
                assert_eq!(p.src_port, 443);
                assert_eq!(p.dst_port, 51000);
                assert_eq!(p.payload, b"hello");
                assert!(p.flags.contains(TcpFlags::PSH));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ipv4_options_shift_payload() {
        // IHL=6 (one 4-byte option), TCP data offset 5, 10 payload bytes:
        // payload begins at 14 + 24 + 20 = 58.
        let payload: Vec<u8> = (1..=10).collect();
        let spec = FrameSpec::v4([1, 1, 1, 1], 1000, [2, 2, 2, 2], 443)
            .ip_options(vec![1, 1, 1, 0])
            .payload(payload.clone());
        let frame = ethernet_ipv4_tcp(&spec);
        assert_eq!(frame[14] & 0x0f, 6);
        assert_eq!(&frame[58..68], payload.as_slice());
        match decode_frame(&frame, LINKTYPE_ETHERNET, Timestamp(0), frame.len() as u32).unwrap() {
            Decoded::Packet(p) => assert_eq!(p.payload, payload),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ethernet_padding_is_not_payload() {
        let spec = FrameSpec::v4([1, 1, 1, 1], 1000, [2, 2, 2, 2], 443).flags(TcpFlags::SYN);
        let mut frame = ethernet_ipv4_tcp(&spec);
        frame.resize(60, 0);
        match decode_frame(&frame, LINKTYPE_ETHERNET, Timestamp(0), 60).unwrap() {
            Decoded::Packet(p) => {
                assert!(p.payload.is_empty());
                assert_eq!(p.wire_len, 60);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vlan_tags() {
        let spec = FrameSpec::v4([1, 1, 1, 1], 1000, [2, 2, 2, 2], 443).payload(vec![9; 3]);
        let plain = ethernet_ipv4_tcp(&spec);
        let tag = |frame: &[u8]| {
            let mut v = frame[..12].to_vec();
            v.extend_from_slice(&[0x81, 0x00, 0x00, 0x07]);
            v.extend_from_slice(&frame[12..]);
            v
        };
        let one = tag(&plain);
        let two = tag(&one);
        let three = tag(&two);
        for f in [&one, &two] {
            assert!(matches!(
                decode_frame(f, LINKTYPE_ETHERNET, Timestamp(0), f.len() as u32),
                Ok(Decoded::Packet(_))
            ));
        }
        assert!(matches!(
            decode_frame(&three, LINKTYPE_ETHERNET, Timestamp(0), 0),
            Err(CaptureError::MalformedFrame(_))
        ));
    }

    #[test]
    fn fragments_and_non_tcp() {
        let spec = FrameSpec::v4([1, 1, 1, 1], 1000, [2, 2, 2, 2], 443).payload(vec![1; 8]);
        let mut frame = ethernet_ipv4_tcp(&spec);
        // non-first fragment: offset 1 (8 bytes)
        frame[14 + 7] = 1;
        assert_eq!(
            decode_frame(&frame, LINKTYPE_ETHERNET, Timestamp(0), 0).unwrap(),
            Decoded::Skip(SkipReason::Fragment)
        );
        frame[14 + 7] = 0;
        frame[14 + 9] = 17;
        assert_eq!(
            decode_frame(&frame, LINKTYPE_ETHERNET, Timestamp(0), 0).unwrap(),
            Decoded::Skip(SkipReason::NonTcp)
        );
    }

    #[test]
    fn short_frames_are_malformed() {
        let spec = FrameSpec::v4([1, 1, 1, 1], 1000, [2, 2, 2, 2], 443);
        let frame = ethernet_ipv4_tcp(&spec);
        for cut in [10, 20, 40] {
            assert!(matches!(
                decode_frame(&frame[..cut], LINKTYPE_ETHERNET, Timestamp(0), 0),
                Err(CaptureError::MalformedFrame(_))
            ));
        }
    }

    #[test]
    fn ipv6_with_extension_headers() {
        let tcp = crate::craft::tcp_segment(&FrameSpec::v4([0; 4], 5555, [0; 4], 443).payload(vec![7; 4]));
        let mut ip = vec![0x60, 0, 0, 0];
        let ext_len = 8 + 8;
        ip.extend_from_slice(&((tcp.len() + ext_len) as u16).to_be_bytes());
        ip.push(0); // hop-by-hop
        ip.push(64);
        ip.extend_from_slice(&[0x20, 0x01, 0x0d, 0xb8]);
        ip.extend_from_slice(&[0; 12]);
        ip.extend_from_slice(&[0x20, 0x01, 0x0d, 0xb8]);
        ip.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1]);
        // hop-by-hop: next=44 (fragment), len 0 => 8 bytes
        ip.extend_from_slice(&[44, 0, 0, 0, 0, 0, 0, 0]);
        // fragment header: next=6, offset 0
        ip.extend_from_slice(&[6, 0, 0, 0, 0, 0, 0, 1]);
        ip.extend_from_slice(&tcp);
        match decode_frame(&ip, LINKTYPE_RAW, Timestamp(0), ip.len() as u32).unwrap() {
            Decoded::Packet(p) => {
                assert!(p.src_ip.is_ipv6());
                assert_eq!(p.src_port, 5555);
                assert_eq!(p.payload, vec![7; 4]);
            }
            other => panic!("unexpected {other:?}"),
        }
        // Non-zero fragment offset is dropped.
        let frag_at = 40 + 8 + 2;
        ip[frag_at + 1] = 0x08;
        assert_eq!(
            decode_frame(&ip, LINKTYPE_RAW, Timestamp(0), 0).unwrap(),
            Decoded::Skip(SkipReason::Fragment)
        );
    }

    #[test]
    fn writer_round_trips_both_endiannesses() {
        let spec = FrameSpec::v4([1, 1, 1, 1], 1000, [2, 2, 2, 2], 443).payload(vec![1, 2, 3]);
        let frame = ethernet_ipv4_tcp(&spec);
        let ts = Timestamp::from_parts(1_600_000_000, 123_456_000);
        let mut outputs = Vec::new();
        for be in [false, true] {
            let mut w = PcapWriter::with_format(LINKTYPE_ETHERNET, be, TsResolution::Micro);
            w.push(ts, &frame);
            w.push(ts.add_nanos(1_000), &frame);
            let bytes = w.finish();
            outputs.push(decode_capture(&bytes).unwrap().packets);
        }
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[0].len(), 2);
        assert_eq!(outputs[0][0].ts, ts);
    }
}
