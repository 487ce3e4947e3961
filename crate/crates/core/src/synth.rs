//! Packet-level synthetic traffic for desk-scale experiments.
//!
//! Each synthetic connection is built as real TCP segments carrying real TLS
//! records, then pushed through the same flow/TLS/feature pipeline as a
//! capture. Profiles:
//!
//! | | normal | malware |
//! |---|---|---|
//! | TLS | 1.2 (`0x0303`) or 1.3 via supported_versions, 3% legacy 1.0 | 1.0/1.1/1.2 legacy hello, no supported_versions |
//! | ciphers | AEAD/ECDHE suites, GREASE in half the hellos | RSA/CBC/RC4/3DES suites; 4% mimic a modern offer |
//! | extensions | 9-14 common extensions, SNI always | 0-4 extensions, SNI half the time |
//! | certificate | CA-issued, 90/365/398 days | 1825-3650 days, 60% self-signed |
//! | payload | requests 150-700 B, responses 2-20 KB in 1448 B segments | 40-200 B beacons, 30-250 B replies |
//! | timing | request gaps ~ Exp(80 ms), RTT 5-60 ms | bursts ~ Exp(10 ms) between 2-60 s sleeps, RTT 20-200 ms |

use std::fmt;
use std::net::{IpAddr, Ipv4Addr};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capture::{PacketRecord, PcapWriter, LINKTYPE_ETHERNET};
use crate::craft::{
    certificate_message, packet_to_ethernet, server_hello_done, tls_record, CertSpec, ClientHelloSpec,
    ServerHelloSpec, TcpSession, CT_APPLICATION_DATA, CT_CHANGE_CIPHER_SPEC, CT_HANDSHAKE,
};
use crate::dataset::LabeledDataset;
use crate::features::{FeatureSchema, FeatureVector, Label};
use crate::par::map_indexed;
use crate::pipeline::featurize_packets;
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Normal,
    Malware,
}

impl Profile {
    pub fn label(self) -> Label {
        match self {
            Profile::Normal => Label::Normal,
            Profile::Malware => Label::Malware,
        }
    }

    fn salt(self) -> u64 {
        match self {
            Profile::Normal => 0x6e6f_726d_616c_0001,
            Profile::Malware => 0x6d61_6c77_6172_0002,
        }
    }
}

impl FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "benign" => Ok(Profile::Normal),
            "malware" => Ok(Profile::Malware),
            other => Err(format!("unknown profile {other:?} (expected normal or malware)")),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.label(), f)
    }
}

const MSS: usize = 1448;
const EPOCH: i64 = 1_600_000_000;
const DAY: i64 = 86_400;

const MODERN_CIPHERS: [u16; 15] = [
    0x1301, 0x1302, 0x1303, 0xc02b, 0xc02f, 0xc02c, 0xc030, 0xcca9, 0xcca8, 0xc013, 0xc014, 0x009c, 0x009d,
    0x002f, 0x0035,
];
const LEGACY_CIPHERS: [u16; 12] = [
    0x002f, 0x0035, 0x000a, 0x0005, 0x0004, 0xc013, 0xc014, 0x0039, 0x0033, 0x0016, 0x0013, 0x0064,
];
const MODERN_EXTENSIONS: [u16; 12] = [5, 10, 11, 13, 16, 18, 21, 23, 27, 35, 45, 65281];
const LEGACY_EXTENSIONS: [u16; 5] = [10, 11, 13, 35, 65281];
const HOSTS: [&str; 6] = [
    "www.example.com",
    "cdn.example.net",
    "api.example.org",
    "mail.example.com",
    "static.example.net",
    "login.example.org",
];
const CA_ISSUERS: [&str; 3] = ["R3", "GTS CA 1C3", "DigiCert TLS RSA SHA256 2020 CA1"];
const TLDS: [&str; 4] = ["top", "xyz", "info", "biz"];

fn exp_ms(rng: &mut ChaCha8Rng, mean_ms: f64) -> f64 {
    let u: f64 = rng.random();
    -mean_ms * (1.0 - u).ln()
}

/// Milliseconds to nanoseconds, quantized to whole microseconds so pcap
/// output reproduces the same timestamps.
fn ms(x: f64) -> i64 {
    (x * 1e3).round() as i64 * 1_000
}

fn bytes(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let mut v = vec![0; n];
    rng.fill_bytes(&mut v);
    v
}

/// Application-data record of `total` bytes including its header.
fn app_record(rng: &mut ChaCha8Rng, total: usize) -> Vec<u8> {
    tls_record(CT_APPLICATION_DATA, 0x0303, &bytes(rng, total.max(6) - 5))
}

fn random_app_record(rng: &mut ChaCha8Rng, size: std::ops::Range<usize>) -> Vec<u8> {
    let total = rng.random_range(size);
    app_record(rng, total)
}

fn dga_name(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(8..=16);
    let mut s: String = (0..len).map(|_| char::from(b'a' + rng.random_range(0..26u8))).collect();
    s.push('.');
    s.push_str(TLDS[rng.random_range(0..TLDS.len())]);
    s
}

/// Time cursor plus the session being built.
struct Builder {
    s: TcpSession,
    t: i64,
}

impl Builder {
    fn advance(&mut self, nanos: i64) {
        self.t += nanos.max(1_000) / 1_000 * 1_000;
    }

    fn send(&mut self, from_client: bool, stream: &[u8], seg_gap: i64) {
        for (i, chunk) in stream.chunks(MSS).enumerate() {
            if i > 0 {
                self.advance(seg_gap);
            }
            let ts = Timestamp(self.t);
            if from_client {
                self.s.client_data(ts, chunk.to_vec());
            } else {
                self.s.server_data(ts, chunk.to_vec());
            }
        }
    }
}

struct TlsChoice {
    hello: ClientHelloSpec,
    tls13: bool,
    selected: u16,
    cert: Option<CertSpec>,
}

fn normal_tls(rng: &mut ChaCha8Rng, start_secs: i64) -> TlsChoice {
    if rng.random_bool(0.03) {
        // older embedded client: still a normal host with normal traffic
        let mut ciphers = LEGACY_CIPHERS[..6].to_vec();
        ciphers.push(0xc02f);
        let host = HOSTS[rng.random_range(0..HOSTS.len())];
        let hello = ClientHelloSpec::new(0x0301, ciphers)
            .sni(host)
            .extension(10, vec![0, 2, 0, 23])
            .extension(11, vec![1, 0])
            .extension(65281, vec![0]);
        let nb = start_secs - rng.random_range(1..60) * DAY;
        return TlsChoice {
            hello,
            tls13: false,
            selected: 0x002f,
            cert: Some(CertSpec::new(CA_ISSUERS[2], host, nb, nb + 365 * DAY)),
        };
    }
    let tls13 = rng.random_bool(0.6);
    let grease = rng.random_bool(0.5);
    let mut ciphers = Vec::new();
    if grease {
        ciphers.push(0x0a0a);
    }
    let from = if tls13 { 0 } else { 3 };
    let take = rng.random_range(8..=MODERN_CIPHERS.len() - from);
    ciphers.extend_from_slice(&MODERN_CIPHERS[from..from + take]);
    let host = HOSTS[rng.random_range(0..HOSTS.len())];
    let mut hello = ClientHelloSpec::new(0x0303, ciphers).sni(host);
    if grease {
        hello = hello.extension(0x1a1a, Vec::new());
    }
    let n_ext = rng.random_range(8..=MODERN_EXTENSIONS.len());
    for code in &MODERN_EXTENSIONS[..n_ext] {
        hello = hello.extension(*code, Vec::new());
    }
    if tls13 {
        hello = hello.supported_versions(&[0x0304, 0x0303]).extension(51, bytes(rng, 38));
    }
    let selected = if tls13 {
        [0x1301, 0x1302, 0x1303][rng.random_range(0..3)]
    } else {
        [0xc02b, 0xc02f, 0xc030][rng.random_range(0..3)]
    };
    let cert = (!tls13).then(|| {
        let days = [90, 365, 398][rng.random_range(0..3)];
        let nb = start_secs - rng.random_range(1..60) * DAY;
        CertSpec::new(CA_ISSUERS[rng.random_range(0..CA_ISSUERS.len())], host, nb, nb + days * DAY)
    });
    TlsChoice {
        hello,
        tls13,
        selected,
        cert,
    }
}

fn malware_tls(rng: &mut ChaCha8Rng, start_secs: i64) -> TlsChoice {
    let host = dga_name(rng);
    let nb = start_secs - rng.random_range(0..400) * DAY;
    if rng.random_bool(0.04) {
        // mimics a browser offer but keeps a long-lived certificate
        let hello = ClientHelloSpec::new(0x0303, MODERN_CIPHERS[3..13].to_vec())
            .sni(&host)
            .extension(10, Vec::new())
            .extension(11, Vec::new())
            .extension(13, Vec::new())
            .extension(23, Vec::new())
            .extension(65281, vec![0]);
        return TlsChoice {
            hello,
            tls13: false,
            selected: 0xc02f,
            cert: Some(CertSpec::new(CA_ISSUERS[0], &host, nb, nb + 1825 * DAY)),
        };
    }
    let version = [0x0301, 0x0302, 0x0303][rng.random_range(0..3)];
    let n = rng.random_range(3..=LEGACY_CIPHERS.len());
    let mut ciphers = LEGACY_CIPHERS.to_vec();
    ciphers.rotate_left(rng.random_range(0..LEGACY_CIPHERS.len()));
    ciphers.truncate(n);
    let selected = ciphers[rng.random_range(0..ciphers.len())];
    let mut hello = ClientHelloSpec::new(version, ciphers);
    if rng.random_bool(0.5) {
        hello = hello.sni(&host);
    }
    let n_ext = rng.random_range(0..=4);
    for code in &LEGACY_EXTENSIONS[..n_ext] {
        hello = hello.extension(*code, Vec::new());
    }
    let days = rng.random_range(1825..=3650);
    let issuer = if rng.random_bool(0.6) { host.clone() } else { format!("{} CA", dga_name(rng)) };
    TlsChoice {
        hello,
        tls13: false,
        selected,
        cert: Some(CertSpec::new(&issuer, &host, nb, nb + days * DAY)),
    }
}

/// One synthetic TLS connection as time-ordered packets.
pub fn synthesize_session(profile: Profile, index: usize, rng: &mut ChaCha8Rng) -> Vec<PacketRecord> {
    let start = EPOCH * 1_000_000_000 + (index as i64) * 7_000_000_000 + rng.random_range(0..1_000_000) * 1_000;
    let start_secs = start / 1_000_000_000;
    let subnet = match profile {
        Profile::Normal => 1,
        Profile::Malware => 2,
    };
    let client = IpAddr::V4(Ipv4Addr::new(10, subnet, (index >> 8) as u8, index as u8));
    let server = IpAddr::V4(Ipv4Addr::new(203, 0, 113, rng.random_range(1..=254)));
    let client_port = 49152 + (index % 16000) as u16;
    let server_port = match profile {
        Profile::Malware if rng.random_bool(0.3) => [8443, 4443, 9443][rng.random_range(0..3)],
        _ => 443,
    };
    let mut s = TcpSession::new((client, client_port), (server, server_port), rng.random(), rng.random());
    let (rtt, tls) = match profile {
        Profile::Normal => {
            s.client_window = [64240, 65535][rng.random_range(0..2)];
            s.server_window = [65160, 28960, 65535][rng.random_range(0..3)];
            (ms(rng.random_range(5.0..60.0)), normal_tls(rng, start_secs))
        }
        Profile::Malware => {
            s.client_window = [8192, 16384, 65535][rng.random_range(0..3)];
            s.server_window = [5840, 14600, 29200][rng.random_range(0..3)];
            (ms(rng.random_range(20.0..200.0)), malware_tls(rng, start_secs))
        }
    };
    let mut b = Builder { s, t: start };
    b.s.handshake(Timestamp(b.t), rtt);
    b.advance(2 * rtt + ms(rng.random_range(0.1..2.0)));

    let record_version = if tls.hello.legacy_version == 0x0303 { 0x0301 } else { tls.hello.legacy_version };
    b.send(true, &tls_record(CT_HANDSHAKE, record_version, &tls.hello.encode()), ms(0.1));
    b.advance(rtt);
    let legacy = tls.hello.legacy_version;
    let ccs = tls_record(CT_CHANGE_CIPHER_SPEC, 0x0303, &[1]);
    if tls.tls13 {
        let sh = ServerHelloSpec::new(0x0303, tls.selected)
            .selected_version(0x0304)
            .extension(51, bytes(rng, 36));
        let mut flight = tls_record(CT_HANDSHAKE, 0x0303, &sh.encode());
        flight.extend_from_slice(&ccs);
        flight.extend(random_app_record(rng, 1000..3000));
        b.send(false, &flight, ms(0.3));
        b.advance(rtt / 2);
        let mut fin = ccs.clone();
        fin.extend(app_record(rng, 58));
        b.send(true, &fin, ms(0.1));
    } else {
        let sh = ServerHelloSpec::new(legacy, tls.selected).extension(65281, vec![0]);
        let mut hs = sh.encode();
        if let Some(cert) = &tls.cert {
            hs.extend(certificate_message(&[cert.encode()]));
        }
        hs.extend(server_hello_done());
        b.send(false, &tls_record(CT_HANDSHAKE, legacy, &hs), ms(0.3));
        b.advance(rtt / 2);
        let mut ckx = tls_record(CT_HANDSHAKE, legacy, &bytes(rng, 70));
        ckx.extend_from_slice(&ccs);
        ckx.extend(app_record(rng, 45));
        b.send(true, &ckx, ms(0.1));
        b.advance(rtt);
        let mut fin = ccs.clone();
        fin.extend(app_record(rng, 45));
        b.send(false, &fin, ms(0.1));
    }

    match profile {
        Profile::Normal => {
            for _ in 0..rng.random_range(3..12) {
                b.advance(ms(exp_ms(rng, 80.0)));
                let req = random_app_record(rng, 150..700);
                b.send(true, &req, ms(0.1));
                b.advance(rtt / 2 + ms(rng.random_range(1.0..20.0)));
                let mut resp = Vec::new();
                let total = rng.random_range(2000..20000);
                while resp.len() < total {
                    resp.extend(app_record(rng, 16384.min(total - resp.len()).max(6)));
                }
                b.send(false, &resp, ms(rng.random_range(0.2..2.0)));
                b.advance(ms(0.5));
                b.s.client_ack(Timestamp(b.t));
            }
        }
        Profile::Malware => {
            for _ in 0..rng.random_range(4..15) {
                let gap = if rng.random_bool(0.6) {
                    exp_ms(rng, 10.0)
                } else {
                    rng.random_range(2_000.0..60_000.0)
                };
                b.advance(ms(gap));
                let beacon = random_app_record(rng, 40..200);
                b.send(true, &beacon, ms(0.1));
                b.advance(rtt / 2 + ms(rng.random_range(0.5..5.0)));
                let reply = random_app_record(rng, 30..250);
                b.send(false, &reply, ms(0.1));
            }
        }
    }
    b.advance(ms(rng.random_range(1.0..50.0)));
    b.s.client_fin(Timestamp(b.t));
    b.advance(rtt / 2);
    b.s.server_fin(Timestamp(b.t));
    b.advance(rtt / 2);
    b.s.client_ack(Timestamp(b.t));
    b.s.into_packets()
}

pub fn synthesize_sessions(profile: Profile, n_flows: usize, seed: u64) -> Vec<Vec<PacketRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ profile.salt());
    (0..n_flows).map(|i| synthesize_session(profile, i, &mut rng)).collect()
}

/// Labeled feature vectors for `n_flows` synthetic connections.
pub fn generate_synthetic_corpus_with(
    profile: Profile,
    n_flows: usize,
    seed: u64,
    schema: &FeatureSchema,
) -> crate::Result<Vec<FeatureVector>> {
    let sessions = synthesize_sessions(profile, n_flows, seed);
    let per: Vec<crate::Result<Vec<FeatureVector>>> = map_indexed(sessions.len(), |i| {
        let mut ex = featurize_packets(sessions[i].clone(), schema, Some(profile.label()))?;
        for v in &mut ex.vectors {
            v.flow_id = format!("synth-{profile}-{i}:{}", v.flow_id);
        }
        Ok(ex.vectors)
    });
    let mut out = Vec::with_capacity(n_flows);
    for v in per {
        out.extend(v?);
    }
    Ok(out)
}

/// Same as [`generate_synthetic_corpus_with`] under the default schema.
pub fn generate_synthetic_corpus(profile: Profile, n_flows: usize, seed: u64) -> Vec<FeatureVector> {
    generate_synthetic_corpus_with(profile, n_flows, seed, &FeatureSchema::default())
        .expect("default schema matches the feature producers")
}

/// Both profiles, normals first. Malware uses `seed + 1` so the two streams
/// never coincide.
pub fn synthetic_dataset(
    n_normal: usize,
    n_malware: usize,
    seed: u64,
    schema: &FeatureSchema,
) -> crate::Result<LabeledDataset> {
    let mut v = generate_synthetic_corpus_with(Profile::Normal, n_normal, seed, schema)?;
    v.extend(generate_synthetic_corpus_with(Profile::Malware, n_malware, seed.wrapping_add(1), schema)?);
    Ok(LabeledDataset::new(schema.names(), schema.schema_version.clone(), v)?)
}

/// Ethernet pcap of the given sessions, packets merged in time order.
pub fn sessions_to_pcap(sessions: &[Vec<PacketRecord>]) -> Vec<u8> {
    let mut all: Vec<&PacketRecord> = sessions.iter().flatten().collect();
    all.sort_by_key(|p| p.ts);
    let mut w = PcapWriter::new(LINKTYPE_ETHERNET);
    for p in all {
        w.push(p.ts, &packet_to_ethernet(p));
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_session_survives_the_filters() {
        let schema = FeatureSchema::default();
        for profile in [Profile::Normal, Profile::Malware] {
            let v = generate_synthetic_corpus_with(profile, 40, 11, &schema).unwrap();
            assert_eq!(v.len(), 40);
            let parsed = schema.index_of("tls_parsed").unwrap();
            let server = schema.index_of("server_hello_parsed").unwrap();
            assert!(v.iter().all(|x| x.values[parsed] == 1.0 && x.values[server] == 1.0));
        }
    }

    #[test]
    fn empty_and_deterministic() {
        assert!(generate_synthetic_corpus(Profile::Malware, 0, 1).is_empty());
        assert_eq!(
            generate_synthetic_corpus(Profile::Normal, 10, 5),
            generate_synthetic_corpus(Profile::Normal, 10, 5)
        );
    }

    #[test]
    fn pcap_round_trip_matches_direct_features() {
        let schema = FeatureSchema::default();
        let sessions = synthesize_sessions(Profile::Malware, 5, 3);
        let pcap = sessions_to_pcap(&sessions);
        let ex = crate::pipeline::extract_pcap_bytes(&pcap, &schema, None).unwrap();
        assert_eq!(ex.vectors.len(), 5);
        let direct = generate_synthetic_corpus_with(Profile::Malware, 5, 3, &schema).unwrap();
        let mut a: Vec<_> = ex.vectors.iter().map(|v| v.values.clone()).collect();
        let mut b: Vec<_> = direct.iter().map(|v| v.values.clone()).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }
}
