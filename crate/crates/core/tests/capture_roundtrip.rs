use proptest::prelude::*;
use tlsxai::capture::{decode_capture, PcapWriter, TcpFlags, TsResolution, LINKTYPE_ETHERNET, LINKTYPE_RAW};
use tlsxai::craft::{ethernet_ipv4_tcp, raw_ip_tcp, FrameSpec};
use tlsxai::Timestamp;

proptest! {
    #[test]
    fn written_frames_decode_back(
        frames in prop::collection::vec((0u32..1_000_000, any::<[u8; 4]>(), 1u16.., prop::collection::vec(any::<u8>(), 0..300), 0u8..0x40), 1..20),
        big_endian in any::<bool>(),
        nanos in any::<bool>(),
        raw in any::<bool>(),
    ) {
        let res = if nanos { TsResolution::Nano } else { TsResolution::Micro };
        let link = if raw { LINKTYPE_RAW } else { LINKTYPE_ETHERNET };
        let mut w = PcapWriter::with_format(link, big_endian, res);
        let mut t = 1_600_000_000_000_000_000i64;
        let mut specs = Vec::new();
        for (gap_us, src, port, payload, flags) in &frames {
            t += i64::from(*gap_us) * 1000;
            let spec = FrameSpec::v4(*src, *port, [192, 0, 2, 1], 443)
                .flags(TcpFlags(*flags))
                .payload(payload.clone());
            let frame = if raw { raw_ip_tcp(&spec) } else { ethernet_ipv4_tcp(&spec) };
            w.push(Timestamp(t), &frame);
            specs.push((Timestamp(t), spec));
        }
        let decoded = decode_capture(&w.finish()).unwrap();
        prop_assert_eq!(decoded.packets.len(), specs.len());
        prop_assert!(!decoded.stats.truncated);
        for (p, (ts, spec)) in decoded.packets.iter().zip(&specs) {
            prop_assert_eq!(p.ts, *ts);
            prop_assert_eq!(p.src_ip, spec.src_ip);
            prop_assert_eq!(p.src_port, spec.src_port);
            prop_assert_eq!(&p.payload, &spec.payload);
            prop_assert_eq!(p.flags, spec.flags);
        }
    }
}
