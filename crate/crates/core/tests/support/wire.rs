//! Golden packets and a generator of arbitrary valid packets.

use std::path::PathBuf;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use vhtmon::aggregation::MonitorFunction;
use vhtmon::wire::{
    decode_packet, encode_packet, Address, AggregateBody, Header, MonitoringPacket, PacketType,
    QueryBody,
};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/packets")
}

/// `(file name, canonical text)` for every golden packet, sorted by name.
pub fn golden_fixtures() -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = std::fs::read_dir(fixture_dir())
        .expect("fixture directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let text = std::fs::read_to_string(&p).unwrap().trim_end().to_string();
            (name, text)
        })
        .collect();
    v.sort();
    v
}

/// Fixtures whose decode/encode cycle does not reproduce the file bytes.
pub fn golden_failures() -> Vec<String> {
    golden_fixtures()
        .into_iter()
        .filter_map(|(name, text)| match decode_packet(text.as_bytes()) {
            Ok(p) => {
                let again = encode_packet(&p);
                (again != text.as_bytes() || decode_packet(&again).as_ref() != Ok(&p))
                    .then(|| format!("{name}: re-encoded as {}", String::from_utf8_lossy(&again)))
            }
            Err(e) => Some(format!("{name}: {e}")),
        })
        .collect()
}

pub fn golden_types() -> Vec<PacketType> {
    let mut v: Vec<PacketType> = golden_fixtures()
        .iter()
        .map(|(_, t)| decode_packet(t.as_bytes()).unwrap().kind)
        .collect();
    v.sort();
    v.dedup();
    v
}

fn address() -> impl Strategy<Value = Address> {
    any::<[u8; 4]>().prop_map(|[a, b, c, d]| Address::new(a, b, c, d))
}

fn function() -> impl Strategy<Value = MonitorFunction> {
    prop::sample::select(MonitorFunction::ALL.to_vec())
}

fn outcome() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
        -1e6f64..1e6,
        Just(0.0),
        Just(-0.0),
    ]
}

fn header() -> impl Strategy<Value = Header> {
    (address(), address(), address(), address(), 1u64..=u32::MAX as u64, address(), any::<u64>())
        .prop_map(|(parent, source, destination, gateway, timeout_ms, origin, t)| Header {
            parent,
            source,
            destination,
            gateway,
            timeout_ms,
            timestamp: vhtmon::wire::make_session_id(origin, t),
        })
}

pub fn packet() -> impl Strategy<Value = MonitoringPacket> {
    let query = (function(), prop::collection::vec(address(), 0..=3))
        .prop_map(|(function, relay_set)| QueryBody { function, relay_set });
    let aggregate = (outcome(), 1u64..=u32::MAX as u64)
        .prop_map(|(outcome, observations)| AggregateBody { outcome, observations });
    let kind = prop::sample::select(vec![
        PacketType::Aggregate,
        PacketType::AggregateRoute,
        PacketType::AggregateForward,
    ]);
    prop_oneof![
        (header(), query).prop_map(|(h, q)| MonitoringPacket::new_query(h, q).unwrap()),
        (header(), kind, aggregate)
            .prop_map(|(h, k, a)| MonitoringPacket::new_aggregate(k, h, a).unwrap()),
    ]
}

/// Runs the decode(encode(p)) = p property, plus encoding stability, over
/// `cases` generated packets.
pub fn round_trip_property(cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner
        .run(&packet(), |p| {
            let bytes = encode_packet(&p);
            let back = decode_packet(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(encode_packet(&back), bytes);
            Ok(())
        })
        .map_err(|e| e.to_string())
}
