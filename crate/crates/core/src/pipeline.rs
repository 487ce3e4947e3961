//! capture -> flow -> tls -> features, for in-memory packets or pcap bytes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::capture::{decode_capture, DecodeStats, PacketRecord};
use crate::features::{build_vector, FeatureSchema, FeatureVector, Label};
use crate::flow::{build_flows, FlowDebugRecord, FlowKey, FlowStats};
use crate::par::map_indexed;
use crate::tls::{extract_metadata, TlsMetadata};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsStats {
    pub client_hello_parsed: u64,
    pub server_hello_parsed: u64,
    pub certificates: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Extraction {
    pub vectors: Vec<FeatureVector>,
    pub decode: DecodeStats,
    pub flows: FlowStats,
    pub tls: TlsStats,
    /// Every assembled flow window with its filter outcome.
    #[serde(skip)]
    pub flow_records: Vec<FlowDebugRecord>,
}

impl Extraction {
    pub fn absorb(&mut self, other: Extraction) {
        self.vectors.extend(other.vectors);
        let (a, b) = (&mut self.decode, other.decode);
        a.frames += b.frames;
        a.tcp += b.tcp;
        a.non_ip += b.non_ip;
        a.non_tcp += b.non_tcp;
        a.fragments += b.fragments;
        a.malformed += b.malformed;
        a.truncated |= b.truncated;
        let (a, b) = (&mut self.flows, other.flows);
        a.input_packets += b.input_packets;
        a.windows += b.windows;
        a.kept += b.kept;
        a.discarded_no_handshake += b.discarded_no_handshake;
        a.discarded_plaintext += b.discarded_plaintext;
        a.discarded_packets += b.discarded_packets;
        self.tls.client_hello_parsed += other.tls.client_hello_parsed;
        self.tls.server_hello_parsed += other.tls.server_hello_parsed;
        self.tls.certificates += other.tls.certificates;
        self.flow_records.extend(other.flow_records);
    }
}

/// Builds, filters and featurizes flows from decoded packets. Handshake
/// metadata comes from the earliest kept window of each connection and is
/// shared by its later windows.
pub fn featurize_packets(
    packets: Vec<PacketRecord>,
    schema: &FeatureSchema,
    label: Option<Label>,
) -> crate::Result<Extraction> {
    let report = build_flows(packets, schema.window_seconds);
    let flows = report.flows;

    let mut first_window: HashMap<FlowKey, usize> = HashMap::new();
    for (i, f) in flows.iter().enumerate() {
        first_window.entry(f.key).or_insert(i);
    }
    let firsts: Vec<usize> = {
        let mut v: Vec<usize> = first_window.values().copied().collect();
        v.sort_unstable();
        v
    };
    let metas: Vec<TlsMetadata> = map_indexed(firsts.len(), |i| extract_metadata(&flows[firsts[i]]));
    let meta_of: HashMap<FlowKey, &TlsMetadata> = firsts.iter().map(|&i| flows[i].key).zip(metas.iter()).collect();

    let mut tls = TlsStats::default();
    for m in &metas {
        tls.client_hello_parsed += u64::from(m.client_parsed);
        tls.server_hello_parsed += u64::from(m.server_parsed);
        tls.certificates += u64::from(m.cert_valid_days.is_some());
    }

    let vectors: Vec<Result<FeatureVector, _>> =
        map_indexed(flows.len(), |i| build_vector(&flows[i], meta_of.get(&flows[i].key).copied(), schema));
    let mut out = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut v = v?;
        v.label = label;
        out.push(v);
    }
    Ok(Extraction {
        vectors: out,
        decode: DecodeStats::default(),
        flows: report.stats,
        tls,
        flow_records: report.all,
    })
}

/// Decodes a classic pcap and featurizes its flows.
pub fn extract_pcap_bytes(bytes: &[u8], schema: &FeatureSchema, label: Option<Label>) -> crate::Result<Extraction> {
    let decoded = decode_capture(bytes)?;
    let mut ex = featurize_packets(decoded.packets, schema, label)?;
    ex.decode = decoded.stats;
    Ok(ex)
}
