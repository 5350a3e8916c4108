use std::io::Cursor;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsvp::datadesc::{decode_payload, Region};
use dsvp::svp::{FailureKind, FamilyId, RangeSpec, SyncResult, SyncStatus};
use dsvp::value::{TypeCode, Value};
use dsvp::wire::{
    decode_message, encode_message, encode_message_with, read_frame, ChannelRecord, CreateBody, HostOrder,
    KillBody, PlaceSpec, SyncBody, TypeRegistry, WireMessage,
};

fn fixture(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/fixtures/{name}.hex", env!("CARGO_MANIFEST_DIR"));
    let text: String = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{path}: {e}"))
        .split_whitespace()
        .collect();
    hex::decode(text).unwrap()
}

fn fid(serial: u64) -> FamilyId {
    FamilyId {
        origin: "n0".into(),
        serial,
    }
}

fn payload(slot: u32, offset: u32, values: &[i64]) -> Vec<u8> {
    let mut out = Vec::new();
    for word in [1, slot, offset, values.len() as u32, TypeCode::I64.0] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

fn create() -> WireMessage {
    WireMessage::Create(CreateBody {
        fid: fid(1),
        function: "fib".into(),
        place: PlaceSpec {
            resource: "default".into(),
            exclusive: false,
        },
        range: RangeSpec::new(2, 8),
        shareds: vec![ChannelRecord::Scalar(Value::I64(1)), ChannelRecord::Scalar(Value::I64(0))],
        globals: vec![
            ChannelRecord::BufferRef {
                element_type: TypeCode::I64,
                len: 8,
            },
            ChannelRecord::Scalar(Value::I64(8)),
        ],
        input: payload(2, 0, &[0, 1]),
    })
}

fn sync() -> WireMessage {
    WireMessage::Sync(SyncBody {
        fid: fid(1),
        status: SyncStatus::Completed,
        shareds: vec![ChannelRecord::Scalar(Value::I64(21)), ChannelRecord::Scalar(Value::I64(13))],
        output: payload(2, 2, &[1, 2]),
    })
}

fn sync_failed() -> WireMessage {
    WireMessage::Sync(SyncBody {
        fid: fid(2),
        status: SyncResult::failed(FailureKind::RemoteError, "boom").status,
        shareds: Vec::new(),
        output: Vec::new(),
    })
}

fn kill() -> WireMessage {
    WireMessage::Kill(KillBody {
        fid: FamilyId {
            origin: "a".into(),
            serial: 7,
        },
    })
}

fn golden() -> Vec<(&'static str, WireMessage)> {
    vec![
        ("create", create()),
        ("sync", sync()),
        ("sync_failed", sync_failed()),
        ("kill", kill()),
    ]
}

#[test]
fn golden_frames_round_trip_byte_exactly() {
    let types = TypeRegistry::standard();
    for (name, msg) in golden() {
        let bytes = fixture(name);
        assert_eq!(encode_message(&types, &msg).unwrap(), bytes, "{name} encode");
        let decoded = decode_message(&types, &bytes).unwrap();
        assert_eq!(decoded, msg, "{name} decode");
        assert_eq!(encode_message(&types, &decoded).unwrap(), bytes, "{name} re-encode");
    }
}

#[test]
fn both_host_orders_produce_identical_frames() {
    let types = TypeRegistry::standard();
    for (name, msg) in golden() {
        let little = encode_message_with(&types, &msg, HostOrder::Little).unwrap();
        let big = encode_message_with(&types, &msg, HostOrder::Big).unwrap();
        assert_eq!(little, big, "{name}");
        assert_eq!(little, fixture(name), "{name}");
    }
}

#[test]
fn golden_payloads_decode_into_their_regions() {
    let types = TypeRegistry::standard();
    let WireMessage::Create(body) = decode_message(&types, &fixture("create")).unwrap() else {
        panic!("not a create");
    };
    let regions = decode_payload(&body.input, &types).unwrap();
    assert_eq!(
        regions,
        vec![(
            Region {
                slot: 2,
                offset: 0,
                count: 2,
                element_type: TypeCode::I64
            },
            vec![Value::I64(0), Value::I64(1)]
        )]
    );
}

#[test]
fn frames_read_back_from_a_stream() {
    let mut stream = Vec::new();
    for (name, _) in golden() {
        stream.extend(fixture(name));
    }
    let mut cursor = Cursor::new(stream);
    for (name, _) in golden() {
        assert_eq!(read_frame(&mut cursor).unwrap().unwrap(), fixture(name));
    }
    assert!(read_frame(&mut cursor).unwrap().is_none());
}

fn mutate(rng: &mut ChaCha8Rng, seeds: &[Vec<u8>]) -> Vec<u8> {
    let mut f = seeds[rng.random_range(0..seeds.len())].clone();
    match rng.random_range(0..5) {
        0 => {
            for _ in 0..rng.random_range(1..4) {
                let i = rng.random_range(0..f.len());
                f[i] ^= 1 << rng.random_range(0..8);
            }
        }
        1 => f.truncate(rng.random_range(0..f.len())),
        2 => {
            let i = rng.random_range(12..f.len());
            f[i] = rng.random();
        }
        3 => {
            let extra = rng.random_range(1..16);
            f.extend((0..extra).map(|_| rng.random::<u8>()));
        }
        _ => {
            let len = rng.random_range(0..256);
            f = (0..len).map(|_| rng.random()).collect();
        }
    }
    // Keep the declared length honest half the time so the body parser runs.
    if f.len() >= 12 && rng.random_bool(0.5) {
        let body = (f.len() - 12) as u32;
        f[8..12].copy_from_slice(&body.to_be_bytes());
    }
    f
}

#[test]
fn fuzzed_frames_never_panic() {
    let types = TypeRegistry::standard();
    let seeds: Vec<_> = golden().iter().map(|(n, _)| fixture(n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut rejected = 0;
    for _ in 0..100_000 {
        let frame = mutate(&mut rng, &seeds);
        match decode_message(&types, &frame) {
            // Whatever is accepted must be canonical.
            Ok(msg) => assert_eq!(encode_message(&types, &msg).unwrap(), frame),
            Err(_) => rejected += 1,
        }
        let _ = read_frame(&mut Cursor::new(&frame));
    }
    assert!(rejected > 50_000, "only {rejected} rejected");
}

fn arb_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i32>().prop_map(Value::I32),
        any::<u32>().prop_map(Value::U32),
        any::<i64>().prop_map(Value::I64),
        any::<u64>().prop_map(Value::U64),
        any::<u32>().prop_map(|b| Value::F32(f32::from_bits(b))),
        any::<u64>().prop_map(|b| Value::F64(f64::from_bits(b))),
        any::<bool>().prop_map(Value::Bool),
        proptest::collection::vec(any::<u8>(), 0..9).prop_map(Value::Bytes),
        "[a-z]{0,7}".prop_map(Value::Str),
    ]
}

fn arb_record() -> impl Strategy<Value = ChannelRecord> {
    prop_oneof![
        arb_value().prop_map(ChannelRecord::Scalar),
        (1u32..10, any::<u32>()).prop_map(|(t, len)| ChannelRecord::BufferRef {
            element_type: TypeCode(t),
            len
        }),
    ]
}

proptest! {
    #[test]
    fn create_round_trips_in_both_orders(
        origin in "[a-z0-9]{0,6}",
        serial in any::<u64>(),
        function in "[a-z_]{1,12}",
        exclusive in any::<bool>(),
        start in any::<i64>(),
        limit in any::<i64>(),
        step in any::<i64>(),
        block in 0u64..=i64::MAX as u64,
        shareds in proptest::collection::vec(arb_record(), 0..5),
        globals in proptest::collection::vec(arb_record(), 0..5),
        input in proptest::collection::vec(any::<u8>(), 0..40),
    ) {
        let types = TypeRegistry::standard();
        let msg = WireMessage::Create(CreateBody {
            fid: FamilyId { origin, serial },
            function,
            place: PlaceSpec { resource: "r".into(), exclusive },
            range: RangeSpec { start, limit, step, block },
            shareds,
            globals,
            input,
        });
        let little = encode_message_with(&types, &msg, HostOrder::Little).unwrap();
        let big = encode_message_with(&types, &msg, HostOrder::Big).unwrap();
        prop_assert_eq!(&little, &big);
        prop_assert_eq!(decode_message(&types, &little).unwrap(), msg);
    }
}
