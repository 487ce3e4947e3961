//! Passive TLS handshake metadata extraction.
//!
//! Only cleartext handshake framing is read: the record layer, ClientHello,
//! ServerHello and the leaf certificate's validity period. Nothing is
//! decrypted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::PacketRecord;
use crate::flow::{BiFlow, Direction};

pub const CONTENT_CHANGE_CIPHER_SPEC: u8 = 20;
pub const CONTENT_ALERT: u8 = 21;
pub const CONTENT_HANDSHAKE: u8 = 22;
pub const CONTENT_APPLICATION_DATA: u8 = 23;

pub const HS_CLIENT_HELLO: u8 = 1;
pub const HS_SERVER_HELLO: u8 = 2;
pub const HS_CERTIFICATE: u8 = 11;

pub const EXT_SERVER_NAME: u16 = 0;
pub const EXT_SUPPORTED_VERSIONS: u16 = 43;

pub const SSL_3_0: u16 = 0x0300;
pub const TLS_1_0: u16 = 0x0301;
pub const TLS_1_1: u16 = 0x0302;
pub const TLS_1_2: u16 = 0x0303;
pub const TLS_1_3: u16 = 0x0304;

// 2^14 plaintext plus the largest allowed expansion.
const MAX_RECORD_LEN: usize = (1 << 14) + 2048;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TlsError {
    #[error("malformed hello: {0}")]
    MalformedHello(&'static str),
    #[error("malformed DER: {0}")]
    MalformedDer(&'static str),
}

/// RFC 8701 GREASE values: 0x0a0a, 0x1a1a, ... 0xfafa.
pub fn is_grease(code: u16) -> bool {
    code & 0x0f0f == 0x0a0a && code >> 8 == code & 0xff
}

pub fn is_known_version(v: u16) -> bool {
    (SSL_3_0..=TLS_1_3).contains(&v)
}

fn is_content_type(ct: u8) -> bool {
    (CONTENT_CHANGE_CIPHER_SPEC..=CONTENT_APPLICATION_DATA).contains(&ct)
}

/// Whether `bytes` begins with a plausible TLS record header.
pub fn is_record_header(bytes: &[u8]) -> bool {
    bytes.len() >= 5
        && is_content_type(bytes[0])
        && bytes[1] == 3
        && usize::from(u16::from_be_bytes([bytes[3], bytes[4]])) <= MAX_RECORD_LEN
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlsRecord {
    pub content_type: u8,
    pub version: u16,
    pub fragment: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordParse {
    pub records: Vec<TlsRecord>,
    /// Parsing stopped before the end of the input.
    pub truncated: bool,
}

/// Splits a directional byte stream into TLS records, stopping at the first
/// position that is not a complete record.
pub fn parse_records(stream: &[u8]) -> RecordParse {
    let mut out = RecordParse::default();
    let mut pos = 0;
    while pos < stream.len() {
        let rest = &stream[pos..];
        if !is_record_header(rest) {
            out.truncated = true;
            break;
        }
        let len = usize::from(u16::from_be_bytes([rest[3], rest[4]]));
        if rest.len() < 5 + len {
            out.truncated = true;
            break;
        }
        out.records.push(TlsRecord {
            content_type: rest[0],
            version: u16::from_be_bytes([rest[1], rest[2]]),
            fragment: rest[5..5 + len].to_vec(),
        });
        pos += 5 + len;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeMessage {
    pub msg_type: u8,
    /// Complete message including the 4-byte header.
    pub bytes: Vec<u8>,
}

impl HandshakeMessage {
    pub fn body(&self) -> &[u8] {
        &self.bytes[4..]
    }
}

/// Reassembles cleartext handshake messages. Fragments spanning records are
/// joined; everything after a ChangeCipherSpec is encrypted and ignored.
pub fn handshake_messages(records: &[TlsRecord]) -> Vec<HandshakeMessage> {
    let mut stream = Vec::new();
    for r in records {
        match r.content_type {
            CONTENT_HANDSHAKE => stream.extend_from_slice(&r.fragment),
            CONTENT_CHANGE_CIPHER_SPEC => break,
            _ => {}
        }
    }
    let mut out = Vec::new();
    let mut pos = 0;
    while stream.len() - pos >= 4 {
        let len = u32::from_be_bytes([0, stream[pos + 1], stream[pos + 2], stream[pos + 3]]) as usize;
        if stream.len() - pos < 4 + len {
            break;
        }
        out.push(HandshakeMessage {
            msg_type: stream[pos],
            bytes: stream[pos..pos + 4 + len].to_vec(),
        });
        pos += 4 + len;
    }
    out
}

/// Orders one direction's payloads by TCP sequence number. Duplicate bytes
/// keep the first copy seen; a gap ends the stream.
pub fn reassemble<'a>(packets: impl IntoIterator<Item = &'a PacketRecord>) -> Vec<u8> {
    let segs: Vec<&PacketRecord> = packets.into_iter().filter(|p| !p.payload.is_empty()).collect();
    let Some(first) = segs.first() else {
        return Vec::new();
    };
    let base = first.seq;
    let mut ordered: Vec<(i64, &PacketRecord)> = segs
        .iter()
        .map(|p| (i64::from(p.seq.wrapping_sub(base) as i32), *p))
        .collect();
    // stable, so equal offsets keep capture order and the first copy wins
    ordered.sort_by_key(|(off, _)| *off);
    let start = ordered[0].0;
    let mut out = Vec::new();
    for (off, p) in ordered {
        let end = start + out.len() as i64;
        if off > end {
            break;
        }
        let skip = (end - off) as usize;
        if skip < p.payload.len() {
            out.extend_from_slice(&p.payload[skip..]);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], TlsError> {
        if self.remaining() < n {
            return Err(TlsError::MalformedHello(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, TlsError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, TlsError> {
        let b = self.take(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }
}

fn u16_list(bytes: &[u8], what: &'static str) -> Result<Vec<u16>, TlsError> {
    if bytes.len() % 2 != 0 {
        return Err(TlsError::MalformedHello(what));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect())
}

fn parse_extensions(r: &mut Reader<'_>) -> Result<Vec<(u16, Vec<u8>)>, TlsError> {
    if r.remaining() == 0 {
        return Ok(Vec::new());
    }
    let total = usize::from(r.u16("extensions length")?);
    let block = r.take(total, "extensions block")?;
    let mut er = Reader::new(block);
    let mut out = Vec::new();
    while er.remaining() > 0 {
        let code = er.u16("extension type")?;
        let len = usize::from(er.u16("extension length")?);
        out.push((code, er.take(len, "extension data")?.to_vec()));
    }
    Ok(out)
}

fn message_body(msg: &[u8], expected: u8) -> Result<&[u8], TlsError> {
    if msg.len() < 4 || msg[0] != expected {
        return Err(TlsError::MalformedHello("handshake type"));
    }
    let len = u32::from_be_bytes([0, msg[1], msg[2], msg[3]]) as usize;
    if msg.len() - 4 != len {
        return Err(TlsError::MalformedHello("handshake length"));
    }
    Ok(&msg[4..])
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientHelloInfo {
    pub legacy_version: u16,
    /// Highest non-GREASE entry of supported_versions, else the legacy field.
    pub effective_version: u16,
    pub ciphers: Vec<u16>,
    pub extensions: Vec<u16>,
    pub sni: Option<String>,
}

/// Parses a complete ClientHello handshake message (type byte included).
pub fn parse_client_hello(msg: &[u8]) -> Result<ClientHelloInfo, TlsError> {
    let body = message_body(msg, HS_CLIENT_HELLO)?;
    let mut r = Reader::new(body);
    let legacy_version = r.u16("version")?;
    r.take(32, "random")?;
    let sid = usize::from(r.u8("session id length")?);
    r.take(sid, "session id")?;
    let cs_len = usize::from(r.u16("cipher suites length")?);
    let ciphers = u16_list(r.take(cs_len, "cipher suites")?, "cipher suites length")?;
    let comp = usize::from(r.u8("compression length")?);
    r.take(comp, "compression methods")?;
    let exts = parse_extensions(&mut r)?;
    if r.remaining() != 0 {
        return Err(TlsError::MalformedHello("trailing bytes"));
    }

    let mut sni = None;
    let mut effective_version = legacy_version;
    for (code, data) in &exts {
        match *code {
            EXT_SERVER_NAME => sni = parse_sni(data),
            EXT_SUPPORTED_VERSIONS => {
                let mut er = Reader::new(data);
                let n = usize::from(er.u8("supported_versions length")?);
                let list = u16_list(er.take(n, "supported_versions")?, "supported_versions")?;
                if let Some(max) = list.into_iter().filter(|v| !is_grease(*v)).max() {
                    effective_version = max;
                }
            }
            _ => {}
        }
    }
    Ok(ClientHelloInfo {
        legacy_version,
        effective_version,
        ciphers,
        extensions: exts.iter().map(|(c, _)| *c).collect(),
        sni,
    })
}

fn parse_sni(data: &[u8]) -> Option<String> {
    let mut r = Reader::new(data);
    let list_len = usize::from(r.u16("sni list").ok()?);
    let list = r.take(list_len, "sni list").ok()?;
    let mut lr = Reader::new(list);
    while lr.remaining() > 0 {
        let kind = lr.u8("sni type").ok()?;
        let len = usize::from(lr.u16("sni length").ok()?);
        let name = lr.take(len, "sni name").ok()?;
        if kind == 0 {
            return String::from_utf8(name.to_vec()).ok();
        }
    }
    None
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerHelloInfo {
    pub legacy_version: u16,
    /// supported_versions selection when present, else the legacy field.
    pub version: u16,
    pub cipher: u16,
    pub extensions: Vec<u16>,
}

pub fn parse_server_hello(msg: &[u8]) -> Result<ServerHelloInfo, TlsError> {
    let body = message_body(msg, HS_SERVER_HELLO)?;
    let mut r = Reader::new(body);
    let legacy_version = r.u16("version")?;
    r.take(32, "random")?;
    let sid = usize::from(r.u8("session id length")?);
    r.take(sid, "session id")?;
    let cipher = r.u16("cipher suite")?;
    r.u8("compression")?;
    let exts = parse_extensions(&mut r)?;
    if r.remaining() != 0 {
        return Err(TlsError::MalformedHello("trailing bytes"));
    }
    let mut version = legacy_version;
    for (code, data) in &exts {
        if *code == EXT_SUPPORTED_VERSIONS && data.len() == 2 {
            version = u16::from_be_bytes([data[0], data[1]]);
        }
    }
    Ok(ServerHelloInfo {
        legacy_version,
        version,
        cipher,
        extensions: exts.iter().map(|(c, _)| *c).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertValidity {
    pub days: i64,
    pub self_signed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerSideInfo {
    pub hello: Option<ServerHelloInfo>,
    pub cert: Option<CertValidity>,
}

/// Reads ServerHello and the leaf of the first Certificate message.
/// Certificates hidden by TLS 1.3 encryption simply leave `cert` empty.
pub fn parse_server_side(messages: &[HandshakeMessage]) -> Result<ServerSideInfo, TlsError> {
    let mut info = ServerSideInfo::default();
    if let Some(m) = messages.iter().find(|m| m.msg_type == HS_SERVER_HELLO) {
        info.hello = Some(parse_server_hello(&m.bytes)?);
    }
    if let Some(m) = messages.iter().find(|m| m.msg_type == HS_CERTIFICATE) {
        info.cert = leaf_certificate(m.body()).and_then(|der| match cert_validity_days(der) {
            Ok(v) => Some(v),
            Err(e) => {
                log::debug!("leaf certificate ignored: {e}");
                None
            }
        });
    }
    Ok(info)
}

fn leaf_certificate(body: &[u8]) -> Option<&[u8]> {
    if body.len() < 6 {
        return None;
    }
    let list_len = u32::from_be_bytes([0, body[0], body[1], body[2]]) as usize;
    let list = body.get(3..3 + list_len)?;
    let len = u32::from_be_bytes([0, list[0], list[1], list[2]]) as usize;
    list.get(3..3 + len)
}

// --- DER ---------------------------------------------------------------------

struct Tlv<'a> {
    tag: u8,
    content: &'a [u8],
    /// Tag, length and content bytes.
    raw: &'a [u8],
}

fn read_tlv<'a>(buf: &'a [u8], pos: &mut usize) -> Result<Tlv<'a>, TlsError> {
    let start = *pos;
    let bad = |m| TlsError::MalformedDer(m);
    let tag = *buf.get(start).ok_or(bad("missing tag"))?;
    let first = *buf.get(start + 1).ok_or(bad("missing length"))?;
    let (len, hdr) = if first < 0x80 {
        (first as usize, 2)
    } else {
        let n = (first & 0x7f) as usize;
        if n == 0 || n > 4 {
            return Err(bad("unsupported length form"));
        }
        let bytes = buf.get(start + 2..start + 2 + n).ok_or(bad("short length"))?;
        let len = bytes.iter().fold(0usize, |acc, b| (acc << 8) | *b as usize);
        (len, 2 + n)
    };
    let end = start
        .checked_add(hdr + len)
        .filter(|e| *e <= buf.len())
        .ok_or(bad("length exceeds input"))?;
    *pos = end;
    Ok(Tlv {
        tag,
        content: &buf[start + hdr..end],
        raw: &buf[start..end],
    })
}

fn expect_tlv<'a>(buf: &'a [u8], pos: &mut usize, tag: u8, what: &'static str) -> Result<Tlv<'a>, TlsError> {
    let t = read_tlv(buf, pos)?;
    if t.tag != tag {
        return Err(TlsError::MalformedDer(what));
    }
    Ok(t)
}

/// Days since 1970-01-01 of a proleptic Gregorian date.
pub fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let m = i64::from(m);
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) + 2) / 5 + i64::from(d) - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

/// Inverse of [`days_from_civil`].
pub fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let y = yoe + era * 400 + i64::from(m <= 2);
    (y, m, d)
}

fn digits(s: &[u8]) -> Result<i64, TlsError> {
    s.iter().try_fold(0i64, |acc, b| {
        if b.is_ascii_digit() {
            Ok(acc * 10 + i64::from(b - b'0'))
        } else {
            Err(TlsError::MalformedDer("non-digit in time"))
        }
    })
}

/// Decodes UTCTime (`YYMMDDHHMMSSZ`, years 50..99 map to 19xx) or
/// GeneralizedTime (`YYYYMMDDHHMMSS[.f]Z`) to Unix seconds.
pub fn parse_der_time(tag: u8, text: &[u8]) -> Result<i64, TlsError> {
    let bad = TlsError::MalformedDer;
    let (year, rest) = match tag {
        0x17 => {
            if text.len() != 13 || text[12] != b'Z' {
                return Err(bad("UTCTime format"));
            }
            let yy = digits(&text[..2])?;
            (if yy >= 50 { 1900 + yy } else { 2000 + yy }, &text[2..12])
        }
        0x18 => {
            if text.len() < 15 || text.last() != Some(&b'Z') {
                return Err(bad("GeneralizedTime format"));
            }
            let frac = &text[14..text.len() - 1];
            if !frac.is_empty() && (frac[0] != b'.' || digits(&frac[1..]).is_err()) {
                return Err(bad("GeneralizedTime fraction"));
            }
            (digits(&text[..4])?, &text[4..14])
        }
        _ => return Err(bad("time tag")),
    };
    let month = digits(&rest[0..2])?;
    let day = digits(&rest[2..4])?;
    let hour = digits(&rest[4..6])?;
    let minute = digits(&rest[6..8])?;
    let second = digits(&rest[8..10])?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) || hour > 23 || minute > 59 || second > 59 {
        return Err(bad("time field out of range"));
    }
    let days = days_from_civil(year, month as u32, day as u32);
    Ok(days * 86_400 + hour * 3600 + minute * 60 + second)
}

/// Validity span of one DER certificate in whole days, and whether issuer
/// and subject names are byte-identical.
pub fn cert_validity_days(der: &[u8]) -> Result<CertValidity, TlsError> {
    let mut pos = 0;
    let cert = expect_tlv(der, &mut pos, 0x30, "certificate sequence")?;
    let mut pos = 0;
    let tbs = expect_tlv(cert.content, &mut pos, 0x30, "tbsCertificate sequence")?;
    let body = tbs.content;
    let mut pos = 0;
    let mut field = read_tlv(body, &mut pos)?;
    if field.tag == 0xa0 {
        field = read_tlv(body, &mut pos)?;
    }
    if field.tag != 0x02 {
        return Err(TlsError::MalformedDer("serial number"));
    }
    expect_tlv(body, &mut pos, 0x30, "signature algorithm")?;
    let issuer = expect_tlv(body, &mut pos, 0x30, "issuer name")?;
    let validity = expect_tlv(body, &mut pos, 0x30, "validity")?;
    let subject = expect_tlv(body, &mut pos, 0x30, "subject name")?;

    let mut vpos = 0;
    let nb = read_tlv(validity.content, &mut vpos)?;
    let na = read_tlv(validity.content, &mut vpos)?;
    let not_before = parse_der_time(nb.tag, nb.content)?;
    let not_after = parse_der_time(na.tag, na.content)?;
    if not_after < not_before {
        return Err(TlsError::MalformedDer("notAfter precedes notBefore"));
    }
    Ok(CertValidity {
        days: (not_after - not_before).div_euclid(86_400),
        self_signed: issuer.raw == subject.raw,
    })
}

// --- Flow-level extraction -----------------------------------------------------

/// Handshake observables for one flow.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsMetadata {
    pub client_version: Option<u16>,
    pub server_version: Option<u16>,
    pub offered_ciphers: Vec<u16>,
    pub selected_cipher: Option<u16>,
    pub client_extensions: Vec<u16>,
    pub server_extensions: Vec<u16>,
    pub sni: Option<String>,
    pub cert_valid_days: Option<i64>,
    pub cert_self_signed: Option<bool>,
    /// A ClientHello was found and parsed.
    pub client_parsed: bool,
    pub server_parsed: bool,
    /// A version outside SSL 3.0..TLS 1.3 was seen.
    pub unknown_version: bool,
}

impl TlsMetadata {
    /// Negotiated version: the server's choice, else the client's best offer.
    pub fn version_used(&self) -> Option<u16> {
        self.server_version.or(self.client_version)
    }

    pub fn selected_not_offered(&self) -> bool {
        matches!(self.selected_cipher, Some(c) if self.client_parsed && !self.offered_ciphers.contains(&c))
    }

    pub fn apply_client(&mut self, ch: ClientHelloInfo) {
        self.client_version = Some(ch.effective_version);
        self.offered_ciphers = ch.ciphers;
        self.client_extensions = ch.extensions;
        self.sni = ch.sni;
        self.client_parsed = true;
        self.unknown_version |= !is_known_version(ch.effective_version);
    }

    pub fn apply_server(&mut self, side: ServerSideInfo) {
        if let Some(sh) = side.hello {
            self.server_version = Some(sh.version);
            self.selected_cipher = Some(sh.cipher);
            self.server_extensions = sh.extensions;
            self.server_parsed = true;
            self.unknown_version |= !is_known_version(sh.version);
        }
        if let Some(c) = side.cert {
            self.cert_valid_days = Some(c.days);
            self.cert_self_signed = Some(c.self_signed);
        }
    }
}

/// Directional record parse of a flow.
pub fn direction_records(flow: &BiFlow, dir: Direction) -> RecordParse {
    parse_records(&reassemble(flow.dir_packets(dir)))
}

/// Extracts handshake metadata from a flow's payloads. Malformed hellos leave
/// the corresponding side unparsed.
pub fn extract_metadata(flow: &BiFlow) -> TlsMetadata {
    let mut meta = TlsMetadata::default();
    let fwd = handshake_messages(&direction_records(flow, Direction::Fwd).records);
    if let Some(m) = fwd.iter().find(|m| m.msg_type == HS_CLIENT_HELLO) {
        match parse_client_hello(&m.bytes) {
            Ok(ch) => meta.apply_client(ch),
            Err(e) => log::debug!("{}: {e}", flow.id()),
        }
    }
    let bwd = handshake_messages(&direction_records(flow, Direction::Bwd).records);
    match parse_server_side(&bwd) {
        Ok(side) => meta.apply_server(side),
        Err(e) => log::debug!("{}: {e}", flow.id()),
    }
    meta
}

pub fn version_name(v: u16) -> &'static str {
    match v {
        SSL_3_0 => "SSL 3.0",
        TLS_1_0 => "TLS 1.0",
        TLS_1_1 => "TLS 1.1",
        TLS_1_2 => "TLS 1.2",
        TLS_1_3 => "TLS 1.3",
        _ => "unknown",
    }
}
