//! Fixed-schema feature vectors for filtered flows.
//!
//! Groups, in vector order: connection metadata, payload lengths, inter-arrival
//! times, Markov transition matrices over discretized sizes and IATs, one-hot
//! TLS handshake encodings, and certificate validity.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{BiFlow, Direction, DEFAULT_WINDOW_SECONDS};
use crate::tls::{is_grease, TlsMetadata};

pub const DEFAULT_BIN_WIDTH: f64 = 150.0;
pub const DEFAULT_N_STATES: usize = 3;
pub const DEFAULT_SCHEMA_VERSION: &str = "tlsxai-v1";

/// 30 widely deployed suites across TLS 1.0-1.3 (plus the renegotiation SCSV).
pub const DEFAULT_CIPHER_VOCAB: [u16; 30] = [
    0x1301, 0x1302, 0x1303, // TLS 1.3 AEAD
    0xc02b, 0xc02f, 0xc02c, 0xc030, 0xcca9, 0xcca8, // ECDHE AEAD
    0xc009, 0xc00a, 0xc013, 0xc014, 0xc023, 0xc024, 0xc027, 0xc028, // ECDHE CBC
    0x009c, 0x009d, 0x002f, 0x0035, 0x003c, 0x003d, 0x000a, // RSA key exchange
    0x009e, 0x009f, 0x0033, 0x0039, // DHE
    0x0005, // RC4-SHA
    0x00ff, // renegotiation SCSV
];

pub const DEFAULT_EXTENSION_VOCAB: [u16; 16] = [
    0,     // server_name
    5,     // status_request
    10,    // supported_groups
    11,    // ec_point_formats
    13,    // signature_algorithms
    16,    // ALPN
    18,    // signed_certificate_timestamp
    21,    // padding
    22,    // encrypt_then_mac
    23,    // extended_master_secret
    27,    // compress_certificate
    35,    // session_ticket
    43,    // supported_versions
    45,    // psk_key_exchange_modes
    51,    // key_share
    65281, // renegotiation_info
];

pub const DEFAULT_VERSION_VOCAB: [u16; 4] = [0x0301, 0x0302, 0x0303, 0x0304];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Meta,
    Length,
    Time,
    Markov,
    Tls,
    Cert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub group: FeatureGroup,
    pub unit: String,
    /// Indicator or presence flag restricted to {0, 1}.
    #[serde(default)]
    pub binary: bool,
}

impl FeatureDef {
    fn new(name: impl Into<String>, group: FeatureGroup, unit: &str, binary: bool) -> Self {
        FeatureDef {
            name: name.into(),
            group,
            unit: unit.into(),
            binary,
        }
    }
}

/// Named, ordered feature layout plus the extraction parameters it assumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub schema_version: String,
    pub window_seconds: u32,
    pub bin_width: f64,
    pub n_states: usize,
    #[serde(default)]
    pub per_direction_markov: bool,
    pub cipher_vocab: Vec<u16>,
    pub extension_vocab: Vec<u16>,
    pub version_vocab: Vec<u16>,
    /// Empty in a schema file means "derive from the parameters above".
    #[serde(default)]
    pub features: Vec<FeatureDef>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        let mut s = FeatureSchema {
            schema_version: DEFAULT_SCHEMA_VERSION.into(),
            window_seconds: DEFAULT_WINDOW_SECONDS,
            bin_width: DEFAULT_BIN_WIDTH,
            n_states: DEFAULT_N_STATES,
            per_direction_markov: false,
            cipher_vocab: DEFAULT_CIPHER_VOCAB.to_vec(),
            extension_vocab: DEFAULT_EXTENSION_VOCAB.to_vec(),
            version_vocab: DEFAULT_VERSION_VOCAB.to_vec(),
            features: Vec::new(),
        };
        s.features = s.derive_features();
        s
    }
}

fn code_name(prefix: &str, code: u16) -> String {
    format!("{prefix}_0x{code:04x}")
}

const META: [(&str, &str, bool); 8] = [
    ("duration_ms", "ms", false),
    ("bytes_in", "bytes", false),
    ("bytes_out", "bytes", false),
    ("num_pkts_in", "packets", false),
    ("num_pkts_out", "packets", false),
    ("Init_Fwd_Win_Bytes", "bytes", false),
    ("Init_Bwd_Win_Bytes", "bytes", false),
    ("bwd_present", "flag", true),
];

const LENGTH: [&str; 12] = [
    "Fwd_Pkt_Len_Min",
    "Fwd_Pkt_Len_Max",
    "Fwd_Pkt_Len_Mean",
    "Fwd_Pkt_Len_Std",
    "Bwd_Pkt_Len_Min",
    "Max_Bpckt",
    "Bwd_Pkt_Len_Mean",
    "Bwd_Pkt_Len_Std",
    "Pkt_Len_Min",
    "Pkt_Len_Max",
    "Pkt_Len_Mean",
    "Pkt_Len_Std",
];

const TIME: [(&str, bool); 15] = [
    ("Fwd_IAT_Min", false),
    ("Fwd_IAT_Max", false),
    ("Mean_f_inter", false),
    ("Fwd_IAT_Std", false),
    ("Bwd_IAT_Min", false),
    ("Bwd_IAT_Max", false),
    ("Bwd_IAT_Mean", false),
    ("Bwd_IAT_Std", false),
    ("Flow_IAT_Min", false),
    ("Flow_IAT_Max", false),
    ("Flow_IAT_Mean", false),
    ("Flow_IAT_Std", false),
    ("fwd_iat_present", true),
    ("bwd_iat_present", true),
    ("flow_iat_present", true),
];

const TLS_SCALARS: [(&str, &str, bool); 7] = [
    ("tls_parsed", "flag", true),
    ("server_hello_parsed", "flag", true),
    ("sni_present", "flag", true),
    ("selected_not_offered", "flag", true),
    ("unknown_version", "flag", true),
    ("n_offered_ciphers", "count", false),
    ("n_client_extensions", "count", false),
];

impl FeatureSchema {
    /// Markov matrix name prefixes in vector order.
    fn markov_prefixes(&self) -> Vec<&'static str> {
        let mut p = vec!["size_trans", "iat_trans"];
        if self.per_direction_markov {
            p.extend(["fwd_size_trans", "fwd_iat_trans", "bwd_size_trans", "bwd_iat_trans"]);
        }
        p
    }

    /// Feature list implied by the vocabularies and Markov settings.
    pub fn derive_features(&self) -> Vec<FeatureDef> {
        use FeatureGroup::*;
        let mut f = Vec::new();
        for (name, unit, binary) in META {
            f.push(FeatureDef::new(name, Meta, unit, binary));
        }
        for name in LENGTH {
            f.push(FeatureDef::new(name, Length, "bytes", false));
        }
        for (name, binary) in TIME {
            f.push(FeatureDef::new(name, Time, if binary { "flag" } else { "ms" }, binary));
        }
        for prefix in self.markov_prefixes() {
            for i in 0..self.n_states {
                for j in 0..self.n_states {
                    f.push(FeatureDef::new(format!("{prefix}_{i}_{j}"), Markov, "probability", false));
                }
            }
        }
        for (name, unit, binary) in TLS_SCALARS {
            f.push(FeatureDef::new(name, Tls, unit, binary));
        }
        for (prefix, vocab) in [
            ("offered", &self.cipher_vocab),
            ("selected", &self.cipher_vocab),
            ("ext", &self.extension_vocab),
            ("version", &self.version_vocab),
        ] {
            for code in vocab {
                f.push(FeatureDef::new(code_name(prefix, *code), Tls, "indicator", true));
            }
            f.push(FeatureDef::new(format!("{prefix}_other"), Tls, "indicator", true));
        }
        f.push(FeatureDef::new("certValidDays", Cert, "days", false));
        f.push(FeatureDef::new("cert_present", Cert, "flag", true));
        f.push(FeatureDef::new("cert_self_signed", Cert, "flag", true));
        f
    }

    pub fn dimension(&self) -> usize {
        self.features.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|d| d.name.clone()).collect()
    }

    pub fn binary_mask(&self) -> Vec<bool> {
        self.features.iter().map(|d| d.binary).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|d| d.name == name)
    }

    /// Fills an empty feature list and checks invariants.
    pub fn validate(mut self) -> Result<Self, FeatureError> {
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(FeatureError::InvalidSchema("bin_width must be positive".into()));
        }
        if self.n_states == 0 {
            return Err(FeatureError::InvalidSchema("n_states must be at least 1".into()));
        }
        if self.window_seconds == 0 {
            return Err(FeatureError::InvalidSchema("window_seconds must be positive".into()));
        }
        if self.features.is_empty() {
            self.features = self.derive_features();
        }
        let mut seen = HashMap::new();
        for d in &self.features {
            if seen.insert(d.name.as_str(), ()).is_some() {
                return Err(FeatureError::InvalidSchema(format!("duplicate feature name {}", d.name)));
            }
        }
        Ok(self)
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        let schema: FeatureSchema = serde_json::from_str(text)?;
        Ok(schema.validate()?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }
}

// --- Markov chains -------------------------------------------------------------

/// State index `min(floor(v / bin_width), n_states - 1)` for each value.
pub fn discretize(values: &[f64], bin_width: f64, n_states: usize) -> Vec<usize> {
    assert!(bin_width > 0.0, "bin_width must be positive");
    assert!(n_states > 0, "need at least one state");
    values
        .iter()
        .map(|&v| {
            let bin = (v.max(0.0) / bin_width).floor();
            if bin >= (n_states - 1) as f64 {
                n_states - 1
            } else {
                bin as usize
            }
        })
        .collect()
}

/// Row-stochastic matrix of empirical state transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub n_states: usize,
    /// Row-major probabilities.
    pub p: Vec<f64>,
}

impl TransitionMatrix {
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.p[from * self.n_states + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.p[from * self.n_states..(from + 1) * self.n_states]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.p.chunks(self.n_states)
    }
}

/// Counts consecutive state pairs and normalizes each row; rows with no
/// outgoing transition stay all-zero.
pub fn transition_matrix(states: &[usize], n_states: usize) -> TransitionMatrix {
    let mut counts = vec![0u64; n_states * n_states];
    for w in states.windows(2) {
        counts[w[0] * n_states + w[1]] += 1;
    }
    let mut p = vec![0.0; n_states * n_states];
    for i in 0..n_states {
        let row = &counts[i * n_states..(i + 1) * n_states];
        let total: u64 = row.iter().sum();
        if total > 0 {
            for j in 0..n_states {
                p[i * n_states + j] = row[j] as f64 / total as f64;
            }
        }
    }
    TransitionMatrix { n_states, p }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovFeatures {
    pub size_matrix: TransitionMatrix,
    pub iat_matrix: TransitionMatrix,
}

/// Size chain over payload bytes; IAT chain over consecutive gaps in ms.
pub fn markov_features(sizes: &[f64], iats_ms: &[f64], bin_width: f64, n_states: usize) -> MarkovFeatures {
    MarkovFeatures {
        size_matrix: transition_matrix(&discretize(sizes, bin_width, n_states), n_states),
        iat_matrix: transition_matrix(&discretize(iats_ms, bin_width, n_states), n_states),
    }
}

// --- Statistics ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation, 0 for n < 2.
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary::default();
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n < 2 {
        0.0
    } else {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
    };
    Summary {
        n,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        std: var.sqrt(),
    }
}

fn gaps_ms<'a>(packets: impl Iterator<Item = &'a crate::capture::PacketRecord>) -> Vec<f64> {
    let ts: Vec<_> = packets.map(|p| p.ts).collect();
    ts.windows(2).map(|w| w[1].millis_since(w[0])).collect()
}

fn payload_lens<'a>(packets: impl Iterator<Item = &'a crate::capture::PacketRecord>) -> Vec<f64> {
    packets.map(|p| p.payload.len() as f64).collect()
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Ordered `(name, value)` pairs produced for one flow.
pub type NamedValues = Vec<(String, f64)>;

/// Metadata, length and timing statistics of one flow window.
pub fn stat_features(flow: &BiFlow) -> NamedValues {
    let fwd_len = payload_lens(flow.fwd());
    let bwd_len = payload_lens(flow.bwd());
    let all_len = payload_lens(flow.packets.iter().map(|p| &p.pkt));
    let (fl, bl, al) = (summarize(&fwd_len), summarize(&bwd_len), summarize(&all_len));

    let fwd_iat = gaps_ms(flow.fwd());
    let bwd_iat = gaps_ms(flow.bwd());
    let all_iat = gaps_ms(flow.packets.iter().map(|p| &p.pkt));
    let (fi, bi, ai) = (summarize(&fwd_iat), summarize(&bwd_iat), summarize(&all_iat));

    let duration = match (flow.packets.first(), flow.packets.last()) {
        (Some(a), Some(b)) => b.pkt.ts.millis_since(a.pkt.ts),
        _ => 0.0,
    };
    let init_win = |dir: Direction| {
        flow.dir_packets(dir)
            .next()
            .map_or(0.0, |p| f64::from(p.window))
    };

    let mut out: NamedValues = Vec::with_capacity(35);
    let mut put = |name: &str, v: f64| out.push((name.to_string(), v));
    put("duration_ms", duration);
    put("bytes_in", fwd_len.iter().sum());
    put("bytes_out", bwd_len.iter().sum());
    put("num_pkts_in", fwd_len.len() as f64);
    put("num_pkts_out", bwd_len.len() as f64);
    put("Init_Fwd_Win_Bytes", init_win(Direction::Fwd));
    put("Init_Bwd_Win_Bytes", init_win(Direction::Bwd));
    put("bwd_present", flag(!bwd_len.is_empty()));

    put("Fwd_Pkt_Len_Min", fl.min);
    put("Fwd_Pkt_Len_Max", fl.max);
    put("Fwd_Pkt_Len_Mean", fl.mean);
    put("Fwd_Pkt_Len_Std", fl.std);
    put("Bwd_Pkt_Len_Min", bl.min);
    put("Max_Bpckt", bl.max);
    put("Bwd_Pkt_Len_Mean", bl.mean);
    put("Bwd_Pkt_Len_Std", bl.std);
    put("Pkt_Len_Min", al.min);
    put("Pkt_Len_Max", al.max);
    put("Pkt_Len_Mean", al.mean);
    put("Pkt_Len_Std", al.std);

    put("Fwd_IAT_Min", fi.min);
    put("Fwd_IAT_Max", fi.max);
    put("Mean_f_inter", fi.mean);
    put("Fwd_IAT_Std", fi.std);
    put("Bwd_IAT_Min", bi.min);
    put("Bwd_IAT_Max", bi.max);
    put("Bwd_IAT_Mean", bi.mean);
    put("Bwd_IAT_Std", bi.std);
    put("Flow_IAT_Min", ai.min);
    put("Flow_IAT_Max", ai.max);
    put("Flow_IAT_Mean", ai.mean);
    put("Flow_IAT_Std", ai.std);
    put("fwd_iat_present", flag(fi.n > 0));
    put("bwd_iat_present", flag(bi.n > 0));
    put("flow_iat_present", flag(ai.n > 0));
    out
}

fn push_matrix(out: &mut NamedValues, prefix: &str, m: &TransitionMatrix) {
    for i in 0..m.n_states {
        for j in 0..m.n_states {
            out.push((format!("{prefix}_{i}_{j}"), m.get(i, j)));
        }
    }
}

/// Markov features over the merged packet sequence (and per direction when
/// the schema asks for it).
pub fn markov_named(flow: &BiFlow, schema: &FeatureSchema) -> NamedValues {
    let mut out = Vec::new();
    let merged = flow.packets.iter().map(|p| &p.pkt);
    let m = markov_features(
        &payload_lens(merged.clone()),
        &gaps_ms(merged),
        schema.bin_width,
        schema.n_states,
    );
    push_matrix(&mut out, "size_trans", &m.size_matrix);
    push_matrix(&mut out, "iat_trans", &m.iat_matrix);
    if schema.per_direction_markov {
        for (dir, name) in [(Direction::Fwd, "fwd"), (Direction::Bwd, "bwd")] {
            let m = markov_features(
                &payload_lens(flow.dir_packets(dir)),
                &gaps_ms(flow.dir_packets(dir)),
                schema.bin_width,
                schema.n_states,
            );
            push_matrix(&mut out, &format!("{name}_size_trans"), &m.size_matrix);
            push_matrix(&mut out, &format!("{name}_iat_trans"), &m.iat_matrix);
        }
    }
    out
}

fn one_hot_group(out: &mut NamedValues, prefix: &str, vocab: &[u16], present: &[u16]) {
    for code in vocab {
        out.push((code_name(prefix, *code), flag(present.contains(code))));
    }
    let other = present.iter().any(|c| !is_grease(*c) && !vocab.contains(c));
    out.push((format!("{prefix}_other"), flag(other)));
}

/// One indicator per vocabulary code for offered ciphers, the selected
/// cipher, client extensions and the negotiated version, each group followed
/// by an out-of-vocabulary indicator. GREASE codes are ignored.
pub fn one_hot_tls(meta: Option<&TlsMetadata>, schema: &FeatureSchema) -> NamedValues {
    let empty = TlsMetadata::default();
    let m = meta.unwrap_or(&empty);
    let offered: Vec<u16> = if m.client_parsed { m.offered_ciphers.clone() } else { Vec::new() };
    let exts: Vec<u16> = if m.client_parsed { m.client_extensions.clone() } else { Vec::new() };
    let selected: Vec<u16> = m.selected_cipher.into_iter().collect();
    let version: Vec<u16> = m.version_used().into_iter().collect();

    let mut out = Vec::new();
    out.push(("tls_parsed".to_string(), flag(m.client_parsed)));
    out.push(("server_hello_parsed".to_string(), flag(m.server_parsed)));
    out.push(("sni_present".to_string(), flag(m.sni.is_some())));
    out.push(("selected_not_offered".to_string(), flag(m.selected_not_offered())));
    out.push(("unknown_version".to_string(), flag(m.unknown_version)));
    out.push((
        "n_offered_ciphers".to_string(),
        offered.iter().filter(|c| !is_grease(**c)).count() as f64,
    ));
    out.push((
        "n_client_extensions".to_string(),
        exts.iter().filter(|c| !is_grease(**c)).count() as f64,
    ));
    one_hot_group(&mut out, "offered", &schema.cipher_vocab, &offered);
    one_hot_group(&mut out, "selected", &schema.cipher_vocab, &selected);
    one_hot_group(&mut out, "ext", &schema.extension_vocab, &exts);
    one_hot_group(&mut out, "version", &schema.version_vocab, &version);
    out
}

pub fn cert_features(meta: Option<&TlsMetadata>) -> NamedValues {
    let days = meta.and_then(|m| m.cert_valid_days);
    let self_signed = meta.and_then(|m| m.cert_self_signed).unwrap_or(false);
    vec![
        ("certValidDays".to_string(), days.map_or(0.0, |d| d as f64)),
        ("cert_present".to_string(), flag(days.is_some())),
        ("cert_self_signed".to_string(), flag(self_signed)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal = 0,
    Malware = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Normal),
            1 => Some(Label::Malware),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "normal" | "benign" => Some(Label::Normal),
            "1" | "malware" | "malicious" => Some(Label::Malware),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Malware => "malware",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_version: String,
    pub label: Option<Label>,
    pub flow_id: String,
}

/// Every feature the extractor produces for a flow, in production order.
pub fn produce(flow: &BiFlow, meta: Option<&TlsMetadata>, schema: &FeatureSchema) -> NamedValues {
    let mut named = stat_features(flow);
    named.extend(markov_named(flow, schema));
    named.extend(one_hot_tls(meta, schema));
    named.extend(cert_features(meta));
    named
}

/// Lays produced values out in schema order.
pub fn assemble(named: NamedValues, schema: &FeatureSchema) -> Result<Vec<f64>, FeatureError> {
    let index: HashMap<&str, usize> = schema
        .features
        .iter()
        .enumerate()
        .map(|(i, d)| (d.name.as_str(), i))
        .collect();
    let mut values = vec![f64::NAN; schema.dimension()];
    for (name, v) in named {
        let i = *index
            .get(name.as_str())
            .ok_or_else(|| FeatureError::SchemaMismatch(format!("feature {name} not in schema")))?;
        values[i] = v;
    }
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(FeatureError::SchemaMismatch(format!(
            "schema feature {} has no producer",
            schema.features[i].name
        )));
    }
    Ok(values)
}

pub fn build_vector(
    flow: &BiFlow,
    meta: Option<&TlsMetadata>,
    schema: &FeatureSchema,
) -> Result<FeatureVector, FeatureError> {
    Ok(FeatureVector {
        values: assemble(produce(flow, meta, schema), schema)?,
        schema_version: schema.schema_version.clone(),
        label: None,
        flow_id: flow.id(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::craft::TcpSession;
    use crate::flow::assemble_flows;
    use crate::Timestamp;
    use std::net::{IpAddr, Ipv4Addr};

    fn ip(last: u8) -> IpAddr {
        Ipv4Addr::new(10, 0, 0, last).into()
    }

    #[test]
    fn discretize_boundaries() {
        assert_eq!(discretize(&[0.0, 149.999], 150.0, 3), [0, 0]);
        assert_eq!(discretize(&[150.0, 299.0, 300.0, 10_000.0], 150.0, 3), [1, 1, 2, 2]);
        assert_eq!(discretize(&[100.0, 200.0, 400.0, 100.0], 150.0, 3), [0, 1, 2, 0]);
    }

    #[test]
    fn transition_counts() {
        let m = transition_matrix(&[0, 1, 2, 0], 3);
        assert_eq!(m.row(0), [0.0, 1.0, 0.0]);
        assert_eq!(m.row(1), [0.0, 0.0, 1.0]);
        assert_eq!(m.row(2), [1.0, 0.0, 0.0]);
        assert!(transition_matrix(&[1], 3).p.iter().all(|v| *v == 0.0));
        let m = transition_matrix(&[0, 0, 0], 3);
        assert_eq!(m.row(0), [1.0, 0.0, 0.0]);
        assert_eq!(m.row(1), [0.0; 3]);
        assert_eq!(m.row(2), [0.0; 3]);
    }

    #[test]
    fn population_std() {
        let s = summarize(&[100.0, 300.0]);
        assert_eq!((s.mean, s.max, s.min, s.std), (200.0, 300.0, 100.0, 100.0));
        assert_eq!(summarize(&[5.0]).std, 0.0);
        assert_eq!(summarize(&[]), Summary::default());
    }

    fn named(v: &NamedValues, name: &str) -> f64 {
        v.iter().find(|(n, _)| n == name).unwrap_or_else(|| panic!("{name}")).1
    }

    #[test]
    fn forward_length_and_timing() {
        let mut s = TcpSession::new((ip(1), 1000), (ip(2), 443), 1, 1);
        s.client_data(Timestamp::from_millis(0), vec![0; 100])
            .client_data(Timestamp::from_millis(10), vec![0; 300])
            .client_data(Timestamp::from_millis(30), vec![0; 200]);
        let flow = &assemble_flows(s.into_packets(), 1800)[0];
        let v = stat_features(flow);
        assert_eq!(named(&v, "bytes_in"), 600.0);
        assert_eq!(named(&v, "Fwd_Pkt_Len_Max"), 300.0);
        assert_eq!(named(&v, "Fwd_Pkt_Len_Mean"), 200.0);
        assert_eq!(named(&v, "Mean_f_inter"), 15.0);
        assert_eq!(named(&v, "Flow_IAT_Min"), 10.0);
        assert_eq!(named(&v, "Fwd_IAT_Max"), 20.0);
        // empty backward direction
        assert_eq!(named(&v, "Max_Bpckt"), 0.0);
        assert_eq!(named(&v, "bwd_present"), 0.0);
        assert_eq!(named(&v, "bwd_iat_present"), 0.0);
        assert_eq!(named(&v, "fwd_iat_present"), 1.0);
    }

    #[test]
    fn one_hot_offered_indicators() {
        let schema = FeatureSchema {
            cipher_vocab: vec![0x002f, 0xc02b],
            ..FeatureSchema::default()
        };
        let meta = TlsMetadata {
            offered_ciphers: vec![0x002f, 0x0a0a],
            client_parsed: true,
            ..Default::default()
        };
        let v = one_hot_tls(Some(&meta), &schema);
        assert_eq!(named(&v, "offered_0x002f"), 1.0);
        assert_eq!(named(&v, "offered_0xc02b"), 0.0);
        // GREASE is neither in-vocab nor "other"
        assert_eq!(named(&v, "offered_other"), 0.0);
        assert_eq!(named(&v, "n_offered_ciphers"), 1.0);
    }

    #[test]
    fn one_hot_version_and_absent_meta() {
        let schema = FeatureSchema::default();
        let meta = TlsMetadata {
            client_version: Some(0x0303),
            client_parsed: true,
            ..Default::default()
        };
        let v = one_hot_tls(Some(&meta), &schema);
        let versions: Vec<f64> = DEFAULT_VERSION_VOCAB
            .iter()
            .map(|c| named(&v, &code_name("version", *c)))
            .collect();
        assert_eq!(versions, [0.0, 0.0, 1.0, 0.0]);

        let absent = one_hot_tls(None, &schema);
        assert!(absent.iter().all(|(_, x)| *x == 0.0));
        let cert = cert_features(None);
        assert!(cert.iter().all(|(_, x)| *x == 0.0));
    }

    #[test]
    fn out_of_vocab_sets_other() {
        let schema = FeatureSchema::default();
        let meta = TlsMetadata {
            offered_ciphers: vec![0x0004, 0x0001],
            client_extensions: vec![0x3374],
            client_parsed: true,
            ..Default::default()
        };
        let v = one_hot_tls(Some(&meta), &schema);
        assert_eq!(named(&v, "offered_other"), 1.0);
        assert_eq!(named(&v, "ext_other"), 1.0);
    }

    #[test]
    fn default_schema_shape() {
        let s = FeatureSchema::default();
        assert_eq!(s.dimension(), 147);
        for name in [
            "Max_Bpckt",
            "Mean_f_inter",
            "bytes_in",
            "bytes_out",
            "num_pkts_in",
            "num_pkts_out",
            "certValidDays",
            "Flow_IAT_Min",
            "Fwd_Pkt_Len_Min",
            "Pkt_Len_Std",
            "Init_Bwd_Win_Bytes",
        ] {
            assert!(s.index_of(name).is_some(), "{name}");
        }
        let markov = s.features.iter().filter(|d| d.group == FeatureGroup::Markov).count();
        assert_eq!(markov, 18);
        let round = FeatureSchema::from_json(&s.to_json()).unwrap();
        assert_eq!(round, s);
    }

    #[test]
    fn schema_file_without_feature_list_is_derived() {
        let mut s = FeatureSchema::default();
        s.features.clear();
        s.per_direction_markov = true;
        let loaded = FeatureSchema::from_json(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(loaded.dimension(), 147 + 36);
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let mut s = FeatureSchema::default();
        s.features.retain(|d| d.name != "bytes_in");
        let mut sess = TcpSession::new((ip(1), 1000), (ip(2), 443), 1, 1);
        sess.client_data(Timestamp(0), vec![1]);
        let flow = &assemble_flows(sess.into_packets(), 1800)[0];
        let err = build_vector(flow, None, &s).unwrap_err();
        assert!(matches!(err, FeatureError::SchemaMismatch(m) if m.contains("bytes_in")));

        let mut extra = FeatureSchema::default();
        extra.features.push(FeatureDef::new("mystery", FeatureGroup::Meta, "", false));
        assert!(build_vector(flow, None, &extra).is_err());

        assert!(FeatureSchema { bin_width: 0.0, ..FeatureSchema::default() }.validate().is_err());
    }
}
