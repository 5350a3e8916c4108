use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use dsvp::datadesc::DescribeError;
use dsvp::node::{Daemon, Node, NodeConfig};
use dsvp::programs::{self, fibonacci_buffer, fibonacci_family, fibonacci_reference};
use dsvp::svp::{
    CreateError, FailureKind, FamilyDescriptor, KillCause, Place, RangeSpec, SyncStatus, ThreadFunction,
};
use dsvp::value::{Buffer, TypeCode};
use dsvp::wire::MessageKind;

fn server(id: &str) -> (Node, Daemon) {
    let node = Node::new(&NodeConfig::new(id));
    programs::register_standard(node.runtime()).unwrap();
    let daemon = node.serve("127.0.0.1:0").unwrap();
    (node, daemon)
}

fn client(id: &str, remote: &Daemon) -> (Node, Place) {
    let place = Place::remote(&remote.endpoint(), "default", false);
    let cfg = NodeConfig::new(id).with_place("remote", place.clone()).unwrap();
    let node = Node::new(&cfg);
    programs::register_standard(node.runtime()).unwrap();
    (node, place)
}

#[test]
fn remote_fibonacci_matches_local() {
    let (server, daemon) = server("s");
    let (client, place) = client("c", &daemon);
    for n in [2usize, 8, 30] {
        let result = fibonacci_buffer(n);
        let r = client.create(fibonacci_family(place.clone(), &result)).unwrap().sync().unwrap();
        assert!(r.status.is_completed(), "{}", r.status);
        assert_eq!(result.to_i64s(), fibonacci_reference(n));
    }
    assert_eq!(client.stats().sent(MessageKind::Create), 3);
    assert_eq!(client.stats().received(MessageKind::Sync), 3);
    assert_eq!(server.stats().received(MessageKind::Create), 3);
    assert_eq!(server.stats().sent(MessageKind::Sync), 3);
}

#[test]
fn local_place_sends_nothing() {
    let (_server, daemon) = server("s");
    let (client, _) = client("c", &daemon);
    let result = fibonacci_buffer(8);
    client.create(fibonacci_family(Place::local(), &result)).unwrap().sync().unwrap();
    assert_eq!(client.stats().sent(MessageKind::Create), 0);
    assert_eq!(result.to_i64s(), fibonacci_reference(8));
}

#[test]
fn only_output_regions_are_written_back() {
    let (_server, daemon) = server("s");
    let (client, place) = client("c", &daemon);
    // Caller-side garbage in result[0..2] must survive: it is not an output.
    let result = Buffer::from_i64s(&[77, 88, -1, -1, -1]);
    let desc = FamilyDescriptor::new(programs::FIBONACCI, RangeSpec::new(2, 5))
        .on(place)
        .shared(1i64)
        .shared(0i64)
        .global(result.clone())
        .global(5i64);
    let r = client.create(desc).unwrap().sync().unwrap();
    assert!(r.status.is_completed());
    assert_eq!(result.to_i64s(), vec![77, 88, 1, 2, 3]);
}

#[test]
fn concurrent_remote_families_do_not_interleave() {
    let (_server, daemon) = server("s");
    let (client, place) = client("c", &daemon);
    let buffers: Vec<_> = (0..16).map(|i| fibonacci_buffer(10 + i)).collect();
    let mut handles: Vec<_> = buffers
        .iter()
        .map(|b| client.create(fibonacci_family(place.clone(), b)).unwrap())
        .collect();
    for (h, b) in handles.iter_mut().zip(&buffers) {
        assert!(h.sync().unwrap().status.is_completed());
        assert_eq!(b.to_i64s(), fibonacci_reference(b.len()));
    }
}

#[test]
fn functions_without_descriptions_stay_local() {
    let (_server, daemon) = server("s");
    let (client, place) = client("c", &daemon);
    client
        .register(ThreadFunction::new("plain", |_| Ok(())))
        .unwrap();
    let err = client
        .create(FamilyDescriptor::new("plain", RangeSpec::new(0, 1)).on(place))
        .unwrap_err();
    assert_eq!(err, CreateError::NotDistributable("plain".into()));
    assert!(client
        .create(FamilyDescriptor::new("plain", RangeSpec::new(0, 1)))
        .unwrap()
        .sync()
        .unwrap()
        .status
        .is_completed());
    assert!(client.register(ThreadFunction::new("plain", |_| Ok(()))).is_err());
}

#[test]
fn description_errors_surface_at_create() {
    let (_server, daemon) = server("s");
    let (client, place) = client("c", &daemon);
    client
        .register(
            ThreadFunction::new("overreach", |_| Ok(()))
                .global_buffer(TypeCode::I64)
                .describe(|_, d| {
                    d.output_range(0, 2, 5)?;
                    Ok(())
                }),
        )
        .unwrap();
    let err = client
        .create(
            FamilyDescriptor::new("overreach", RangeSpec::new(0, 1))
                .on(place)
                .global(Buffer::from_i64s(&[0; 4])),
        )
        .unwrap_err();
    assert!(matches!(err, CreateError::Describe(DescribeError::OutOfBounds { len: 4, .. })));
}

#[test]
fn unknown_remote_function_fails_at_sync() {
    let (_server, daemon) = server("s");
    let (client, place) = client("c", &daemon);
    client
        .register(ThreadFunction::new("client_only", |_| Ok(())).describe(|_, _| Ok(())))
        .unwrap();
    let r = client
        .create(FamilyDescriptor::new("client_only", RangeSpec::new(0, 1)).on(place))
        .unwrap()
        .sync()
        .unwrap();
    assert_eq!(r.status.failure_kind(), Some(FailureKind::RemoteError));
}

#[test]
fn remote_kill_unwinds_the_family() {
    let (server, daemon) = server("s");
    let (client, place) = client("c", &daemon);
    let mut h = client
        .create(FamilyDescriptor::new(programs::SPIN, RangeSpec::new(0, 3)).on(place))
        .unwrap();
    std::thread::sleep(Duration::from_millis(50));
    h.kill();
    h.kill();
    let r = h.sync().unwrap();
    assert_eq!(r.status, SyncStatus::Killed(KillCause::Requested));
    assert_eq!(client.stats().sent(MessageKind::Kill), 1);
    // The remote family winds down and reports back; that late Sync is dropped.
    let until = Instant::now() + Duration::from_secs(2);
    while server.stats().sent(MessageKind::Sync) == 0 && Instant::now() < until {
        std::thread::sleep(Duration::from_millis(5));
    }
    assert_eq!(server.stats().received(MessageKind::Kill), 1);
    assert_eq!(server.stats().sent(MessageKind::Sync), 1);
}

#[test]
fn kill_for_an_unknown_family_is_ignored() {
    let (_server, daemon) = server("s");
    let (client, place) = client("c", &daemon);
    let mut h = client.create(programs::empty_family(place.clone())).unwrap();
    h.sync().unwrap();
    h.kill();
    let result = fibonacci_buffer(8);
    assert!(client
        .create(fibonacci_family(place, &result))
        .unwrap()
        .sync()
        .unwrap()
        .status
        .is_completed());
}

#[test]
fn malformed_frames_only_close_their_connection() {
    let (_server, daemon) = server("s");
    let (client, place) = client("c", &daemon);
    let mut h = client
        .create(FamilyDescriptor::new(programs::SPIN, RangeSpec::new(0, 1)).on(place.clone()))
        .unwrap();

    let mut bad = TcpStream::connect(daemon.local_addr()).unwrap();
    bad.write_all(b"GARBAGE GARBAGE GARBAGE").unwrap();
    let mut buf = [0u8; 16];
    bad.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    assert_eq!(bad.read(&mut buf).unwrap_or(0), 0);

    let result = fibonacci_buffer(8);
    assert!(client
        .create(fibonacci_family(place, &result))
        .unwrap()
        .sync()
        .unwrap()
        .status
        .is_completed());
    assert!(!h.is_finished());
    h.kill();
    h.sync().unwrap();
}

#[test]
fn connection_loss_fails_in_flight_families() {
    let (_server, daemon) = server("s");
    let (client, place) = client("c", &daemon);
    let mut h = client
        .create(FamilyDescriptor::new(programs::SPIN, RangeSpec::new(0, 1)).on(place))
        .unwrap();
    std::thread::sleep(Duration::from_millis(20));
    drop(daemon);
    let r = h.sync().unwrap();
    assert_eq!(r.status.failure_kind(), Some(FailureKind::ConnectionLost), "{}", r.status);
}

#[test]
fn unreachable_node_fails_at_sync() {
    let cfg = NodeConfig::new("c");
    let node = Node::new(&cfg);
    programs::register_standard(node.runtime()).unwrap();
    // Port 9 on loopback: nothing listens there.
    let place = Place::remote("127.0.0.1:9", "default", false);
    let r = node.create(programs::empty_family(place)).unwrap().sync().unwrap();
    assert_eq!(r.status.failure_kind(), Some(FailureKind::ConnectRefused));
}

#[test]
fn inbound_limit_rejects_excess_families() {
    let mut cfg = NodeConfig::new("s");
    cfg.max_inbound = Some(1);
    let server = Node::new(&cfg);
    programs::register_standard(server.runtime()).unwrap();
    let daemon = server.serve("127.0.0.1:0").unwrap();
    let (client, place) = client("c", &daemon);
    let mut first = client
        .create(FamilyDescriptor::new(programs::SPIN, RangeSpec::new(0, 1)).on(place.clone()))
        .unwrap();
    let second = client.create(programs::empty_family(place)).unwrap().killer();
    let r = second.wait_finished();
    assert_eq!(r.status.failure_kind(), Some(FailureKind::RemoteError));
    first.kill();
    first.sync().unwrap();
}
