use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread;

use monocnn_core::codec::encode;
use monocnn_core::model::arch::{mono_tiny, FgfTemplate};
use monocnn_core::transport::*;
use monocnn_core::*;

fn packet(seed: u64) -> Vec<u8> {
    let mut s = build(&mono_tiny([1, 28, 28], 10, &FgfTemplate::default(), seed), seed).unwrap();
    s.init_head(seed);
    encode(&s).unwrap()
}

fn server_with(models: &[(&str, u32, Vec<u8>)]) -> Server {
    let mut store = ModelStore::default();
    for (name, version, bytes) in models {
        store.insert(StoredModel::new(*name, *version, bytes.clone())).unwrap();
    }
    serve("127.0.0.1:0", store).unwrap()
}

#[test]
fn fetch_returns_the_stored_model() {
    let bytes = packet(1);
    let server = server_with(&[("digits", 1, packet(9)), ("digits", 2, bytes.clone())]);
    let got = fetch(server.local_addr(), "digits", None).unwrap();
    assert_eq!(got.manifest.version, 2);
    assert_eq!(got.packet, bytes);
    assert_eq!(encode(&got.state).unwrap(), bytes);
    assert_eq!(got.manifest.sha256, sha256(&bytes));

    let old = fetch(server.local_addr(), "digits", Some(1)).unwrap();
    assert_eq!(old.packet, packet(9));
    server.shutdown();
}

#[test]
fn errors_keep_the_connection_usable() {
    let server = server_with(&[("digits", 1, packet(1))]);
    let mut client = Client::connect(server.local_addr()).unwrap();
    match client.manifest("nope", 0) {
        Err(Error::Remote { code, .. }) => assert_eq!(code, ERR_UNKNOWN_MODEL),
        other => panic!("expected unknown model, got {other:?}"),
    }
    match client.packet("digits", 7) {
        Err(Error::Remote { code, .. }) => assert_eq!(code, ERR_UNKNOWN_VERSION),
        other => panic!("expected unknown version, got {other:?}"),
    }
    match client.request(&Frame::new(Opcode::Manifest, vec![])) {
        Err(Error::Remote { code, .. }) => assert_eq!(code, ERR_UNEXPECTED_OPCODE),
        other => panic!("expected unexpected opcode, got {other:?}"),
    }
    let m = client.manifest("digits", 0).unwrap();
    assert_eq!(m.version, 1);
    assert_eq!(client.packet("digits", 1).unwrap().len() as u64, m.packet_bytes);
    server.shutdown();
}

#[test]
fn other_protocol_versions_are_refused() {
    let server = server_with(&[]);
    let mut stream = TcpStream::connect(server.local_addr()).unwrap();
    write_frame(&mut stream, &Frame::new(Opcode::Hello, vec![PROTOCOL_VERSION + 1])).unwrap();
    let reply = read_frame(&mut stream).unwrap().unwrap();
    assert_eq!(reply.opcode, Opcode::Err);
    assert!(matches!(parse_error(&reply.payload), Error::Remote { code, .. } if code == ERR_UNSUPPORTED_PROTOCOL));
    server.shutdown();
}

#[test]
fn concurrent_clients_are_metered_exactly() {
    let bytes = packet(3);
    let server = server_with(&[("digits", 1, bytes.clone())]);
    let addr = server.local_addr();
    let handles: Vec<_> = (0..2).map(|_| thread::spawn(move || fetch(addr, "digits", Some(1)).unwrap())).collect();
    for h in handles {
        let got = h.join().unwrap();
        assert_eq!(got.wire.model_frame_bytes, (5 + bytes.len()) as u64);
    }
    let stats = server.stats();
    use std::sync::atomic::Ordering::SeqCst;
    assert_eq!(stats.model_bytes_sent.load(SeqCst), 2 * (5 + bytes.len()) as u64);
    assert_eq!(stats.models_sent.load(SeqCst), 2);
    server.shutdown();
}

/// Relay one connection, flipping the byte at `offset` of the server's
/// reply stream.
fn tampering_proxy(upstream: SocketAddr, offset: usize) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let (client, _) = listener.accept().unwrap();
        let server = TcpStream::connect(upstream).unwrap();
        let (mut c_in, mut s_out) = (client.try_clone().unwrap(), server.try_clone().unwrap());
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n @ 1..) = c_in.read(&mut buf) {
                if s_out.write_all(&buf[..n]).is_err() {
                    break;
                }
            }
        });
        let (mut s_in, mut c_out) = (server, client);
        let mut seen = 0;
        let mut buf = [0u8; 4096];
        while let Ok(n @ 1..) = s_in.read(&mut buf) {
            if (seen..seen + n).contains(&offset) {
                buf[offset - seen] ^= 0x40;
            }
            seen += n;
            if c_out.write_all(&buf[..n]).is_err() {
                break;
            }
        }
    });
    addr
}

#[test]
fn tampered_payload_is_detected() {
    let bytes = packet(4);
    let server = server_with(&[("digits", 1, bytes.clone())]);
    let manifest = Manifest {
        name: "digits".into(),
        version: 1,
        packet_bytes: bytes.len() as u64,
        sha256: sha256(&bytes),
    };
    // HELLO reply, MANIFEST reply, then 100 bytes into the MODEL payload.
    let offset = 6 + 5 + manifest.encode().unwrap().len() + 5 + 100;
    let proxy = tampering_proxy(server.local_addr(), offset);
    match fetch(proxy, "digits", None) {
        Err(Error::HashMismatch { model }) => assert_eq!(model, "digits"),
        other => panic!("expected hash mismatch, got {:?}", other.map(|f| f.manifest)),
    }
    server.shutdown();
}

#[test]
fn mono_packet_is_an_order_of_magnitude_smaller_on_the_wire() {
    let mut s = build(&mono_tiny([1, 28, 28], 10, &FgfTemplate::default(), 5), 5).unwrap();
    s.init_head(5);
    let mono = encode(&s).unwrap();
    let full = encode(&s.materialize()).unwrap();
    let server = server_with(&[("mono", 1, mono), ("full", 1, full)]);
    let a = fetch(server.local_addr(), "mono", None).unwrap().wire;
    let b = fetch(server.local_addr(), "full", None).unwrap().wire;
    assert!(b.bytes_received as f64 / a.bytes_received as f64 >= 10.0, "{a:?} vs {b:?}");
    server.shutdown();
}

#[test]
fn garbage_gets_an_error_then_a_close() {
    let server = server_with(&[]);
    let mut stream = TcpStream::connect(server.local_addr()).unwrap();
    stream.write_all(&[2, 0, 0, 0, 0xEE, 0]).unwrap();
    let reply = read_frame(&mut stream).unwrap().unwrap();
    assert_eq!(reply.opcode, Opcode::Err);
    assert!(read_frame(&mut stream).unwrap().is_none());
    server.shutdown();
}

#[test]
fn lossy_channel_extremes() {
    for seed in 0..50 {
        assert_eq!(simulate_channel(b"abc", 0.0, seed).unwrap(), Delivery::Delivered(b"abc".to_vec()));
        assert_eq!(simulate_channel(b"abc", 1.0, seed).unwrap(), Delivery::Dropped);
    }
    assert!(SimulatedChannel::new(1.5, 0).is_err());
}
