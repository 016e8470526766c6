//! Property tests for the serialization, mutation and matching invariants.

use proptest::prelude::*;

use fuzzprint::corpus::CorpusKind;
use fuzzprint::fuzz_ftp::mutate;
use fuzzprint::matcher::{match_file, match_response};
use fuzzprint::packet::{
    decode_apd, encode_apd, FieldValue, Layer, OptionKind, PacketDescription, TcpOption,
    IP_FIELDS, TCP_FIELDS,
};
use fuzzprint::rng::DeterministicRng;
use fuzzprint::store::{Fingerprint, Record};

fn field_value(width_bits: u32) -> impl Strategy<Value = u64> {
    let max = if width_bits >= 64 { u64::MAX } else { (1u64 << width_bits) - 1 };
    0..=max
}

fn tcp_option() -> impl Strategy<Value = TcpOption> {
    prop_oneof![
        Just(TcpOption::nop()),
        (0u64..=255).prop_map(|v| TcpOption::with_value(OptionKind::W, v)),
        (0u64..=65535).prop_map(|v| TcpOption::with_value(OptionKind::M, v)),
        (0u64..=u32::MAX as u64).prop_map(|v| TcpOption::with_value(OptionKind::T, v)),
        (0u64..=65535).prop_map(|v| TcpOption::with_value(OptionKind::E, v)),
    ]
}

prop_compose! {
    fn packet()(
        ip_mask in 0usize..(1 << IP_FIELDS.len()),
        tcp_mask in 1usize..(1 << TCP_FIELDS.len()),
        ip_values in proptest::collection::vec(field_value(32), IP_FIELDS.len()),
        tcp_values in proptest::collection::vec(field_value(32), TCP_FIELDS.len()),
        options in proptest::collection::vec(tcp_option(), 0..6),
    ) -> PacketDescription {
        let mut pkt = PacketDescription::default();
        for (i, desc) in IP_FIELDS.iter().enumerate() {
            if ip_mask & (1 << i) != 0 {
                let value = ip_values[i] & desc.max_value();
                pkt.set(Layer::Ip, desc.name, FieldValue::Value(value)).unwrap();
            }
        }
        for (i, desc) in TCP_FIELDS.iter().enumerate() {
            if tcp_mask & (1 << i) != 0 {
                let value = tcp_values[i] & desc.max_value();
                pkt.set(Layer::Tcp, desc.name, FieldValue::Value(value)).unwrap();
            }
        }
        pkt.tcp_options = options;
        pkt
    }
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<u8> = a.bytes().collect();
    let b: Vec<u8> = b.bytes().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut prev = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let cost = if ca == cb { prev } else { prev + 1 };
            prev = row[j + 1];
            row[j + 1] = cost.min(row[j] + 1).min(prev + 1);
        }
    }
    row[b.len()]
}

proptest! {
    /// Fuzzing the decoder with arbitrary byte soup must yield a value or
    /// a parse error, never a crash.
    #[test]
    fn decode_never_panics(line in "\\PC{0,60}") {
        let _ = decode_apd(&line);
    }

    #[test]
    fn decode_never_panics_on_structured_noise(
        line in "(ip|tcp|udp)\\{[a-z0-9=.,;:+DUMY{}]{0,40}\\}?"
    ) {
        let _ = decode_apd(&line);
    }

    /// Field-for-field, option-order-preserving round trip.
    #[test]
    fn encode_decode_round_trip(pkt in packet()) {
        let line = encode_apd(&pkt).unwrap();
        let decoded = decode_apd(&line).unwrap();
        prop_assert_eq!(&decoded, &pkt);
        // Canonical form: re-encoding is byte-identical.
        prop_assert_eq!(encode_apd(&decoded).unwrap(), line);
    }

    /// Every mutation is one edit, stays printable and replays.
    #[test]
    fn mutate_is_a_replayable_single_edit(
        input in "[ -~]{0,40}",
        seed in any::<u64>(),
    ) {
        let mut rng = DeterministicRng::new(seed);
        let out = mutate(&input, &mut rng);
        prop_assert_eq!(levenshtein(&input, &out), 1);
        prop_assert!(out.bytes().all(|b| (0x20..=0x7e).contains(&b)));

        let mut replay = DeterministicRng::new(seed);
        prop_assert_eq!(mutate(&input, &mut replay), out);
    }

    /// match_file is symmetric and self-matching is exactly 100.
    #[test]
    fn match_file_symmetry_and_identity(
        a in proptest::collection::vec(proptest::option::of(100u16..=599), 1..40),
        b in proptest::collection::vec(proptest::option::of(100u16..=599), 1..40),
    ) {
        let records = |codes: &[Option<u16>]| -> Vec<Record> {
            codes.iter().map(|c| c.map(Record::Ftp).unwrap_or(Record::Blank)).collect()
        };
        let n = a.len().min(b.len());
        let fp = |label: &str, codes: &[Option<u16>]| Fingerprint {
            label: label.to_string(),
            kind: CorpusKind::Ftp,
            corpus_checksum: "feedfeedfeedfeed".to_string(),
            lines: records(&codes[..n]),
        };
        let fa = fp("a", &a);
        let fb = fp("b", &b);
        prop_assert_eq!(
            match_file(&fa, &fb).unwrap().as_ratio(),
            match_file(&fb, &fa).unwrap().as_ratio()
        );
        prop_assert!(match_file(&fa, &fa).unwrap().is_exactly_100());
    }

    /// Record agreement is reflexive and symmetric.
    #[test]
    fn match_response_is_reflexive_and_symmetric(a in packet(), b in packet()) {
        let ra = Record::Os(a);
        let rb = Record::Os(b);
        let one = match_response(&ra, &ra, CorpusKind::Os);
        prop_assert_eq!(one, fuzzprint::matcher::Fraction::from_integer(1));
        prop_assert_eq!(
            match_response(&ra, &rb, CorpusKind::Os),
            match_response(&rb, &ra, CorpusKind::Os)
        );
    }
}
