use std::thread;
use std::time::{Duration, Instant};

use demosync::calibration::EncoderReading;
use demosync::geometry::{Pose6D, UnitQuaternion, Vec3};
use demosync::protocol::{replay_session, spawn_hub, HubClient, Payload, RawSession, StreamKind, WireRecord};

fn pose_record(t: f64) -> WireRecord {
    let p = Pose6D::new(Vec3::new(t, -t, 2.0 * t), UnitQuaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), t));
    WireRecord::new(StreamKind::Pose, t, &Payload::Pose(p))
}

fn encoder_record(k: u32) -> WireRecord {
    WireRecord::new(StreamKind::Encoder, k as f64 * 0.01, &Payload::Encoder(EncoderReading::wrapping(k as i64 * 37)))
}

#[test]
fn one_client_hundred_poses() {
    let dir = tempfile::tempdir().unwrap();
    let hub = spawn_hub("127.0.0.1:0", &dir.path().join("s")).unwrap();
    let sent: Vec<WireRecord> = (0..100).map(|k| pose_record(k as f64 / 60.0)).collect();
    let mut c = HubClient::connect(hub.local_addr()).unwrap();
    for r in &sent {
        c.send(r).unwrap();
    }
    c.finish().unwrap();
    let session = hub.shutdown().unwrap();
    assert_eq!(session.records(StreamKind::Pose), &sent[..]);
    let reloaded = RawSession::load(&dir.path().join("s")).unwrap();
    assert_eq!(reloaded.records(StreamKind::Pose), &sent[..]);
    assert!(reloaded.warnings.is_empty(), "{:?}", reloaded.warnings);
    assert_eq!(reloaded.header.streams.get(&StreamKind::Pose), Some(&100));
}

#[test]
fn concurrent_clients_keep_per_stream_order() {
    let dir = tempfile::tempdir().unwrap();
    let hub = spawn_hub("127.0.0.1:0", &dir.path().join("s")).unwrap();
    let addr = hub.local_addr();
    let poses: Vec<WireRecord> = (0..2000).map(|k| pose_record(k as f64 / 60.0)).collect();
    let enc: Vec<WireRecord> = (0..3000).map(encoder_record).collect();
    let (p2, e2) = (poses.clone(), enc.clone());
    let a = thread::spawn(move || {
        let mut c = HubClient::connect(addr).unwrap();
        for (i, r) in p2.iter().enumerate() {
            c.send(r).unwrap();
            if i % 100 == 0 {
                c.flush().unwrap();
                thread::yield_now();
            }
        }
        c.finish().unwrap();
    });
    let b = thread::spawn(move || {
        let mut c = HubClient::connect(addr).unwrap();
        for (i, r) in e2.iter().enumerate() {
            c.send(r).unwrap();
            if i % 150 == 0 {
                c.flush().unwrap();
                thread::yield_now();
            }
        }
        c.finish().unwrap();
    });
    a.join().unwrap();
    b.join().unwrap();
    let session = hub.shutdown().unwrap();
    assert_eq!(session.records(StreamKind::Pose), &poses[..]);
    assert_eq!(session.records(StreamKind::Encoder), &enc[..]);
    assert_eq!(session.header.out_of_order_drops, 0);
}

#[test]
fn decreasing_timestamp_is_dropped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let hub = spawn_hub("127.0.0.1:0", &dir.path().join("s")).unwrap();
    let mut c = HubClient::connect(hub.local_addr()).unwrap();
    for t in [0.0, 0.1, 0.05, 0.2] {
        c.send(&pose_record(t)).unwrap();
    }
    c.finish().unwrap();
    let session = hub.shutdown().unwrap();
    let times: Vec<f64> = session.records(StreamKind::Pose).iter().map(|r| r.timestamp).collect();
    assert_eq!(times, vec![0.0, 0.1, 0.2]);
    assert_eq!(session.header.out_of_order_drops, 1);
}

#[test]
fn protocol_error_closes_only_that_connection() {
    let dir = tempfile::tempdir().unwrap();
    let hub = spawn_hub("127.0.0.1:0", &dir.path().join("s")).unwrap();
    let mut bad = HubClient::connect(hub.local_addr()).unwrap();
    bad.send(&pose_record(0.0)).unwrap();
    bad.send_raw(b"JUNKJUNKJUNKJUNKJUNKJUNK").unwrap();
    bad.flush().unwrap();
    // The hub keeps serving other clients.
    let mut good = HubClient::connect(hub.local_addr()).unwrap();
    for k in 0..10 {
        good.send(&encoder_record(k)).unwrap();
    }
    good.finish().unwrap();
    drop(bad);
    let session = hub.shutdown().unwrap();
    assert_eq!(session.records(StreamKind::Encoder).len(), 10);
    assert_eq!(session.records(StreamKind::Pose).len(), 1);
    assert_eq!(session.header.protocol_errors, 1);
}

#[test]
fn client_crash_mid_record_loses_only_the_partial_record() {
    let dir = tempfile::tempdir().unwrap();
    let hub = spawn_hub("127.0.0.1:0", &dir.path().join("s")).unwrap();
    let mut c = HubClient::connect(hub.local_addr()).unwrap();
    for k in 0..5 {
        c.send(&pose_record(k as f64)).unwrap();
    }
    let partial = pose_record(9.0).encode();
    c.send_raw(&partial[..30]).unwrap();
    c.flush().unwrap();
    drop(c);
    let session = hub.shutdown().unwrap();
    assert_eq!(session.records(StreamKind::Pose).len(), 5);
}

#[test]
fn sustains_five_thousand_records_per_second() {
    let dir = tempfile::tempdir().unwrap();
    let hub = spawn_hub("127.0.0.1:0", &dir.path().join("s")).unwrap();
    let addr = hub.local_addr();
    let n = 20_000u32;
    let start = Instant::now();
    let senders: Vec<_> = (0..2)
        .map(|c| {
            thread::spawn(move || {
                let mut cl = HubClient::connect(addr).unwrap();
                for k in 0..n / 2 {
                    let r = if c == 0 { pose_record(k as f64 * 1e-3) } else { encoder_record(k) };
                    cl.send(&r).unwrap();
                }
                cl.finish().unwrap();
            })
        })
        .collect();
    for s in senders {
        s.join().unwrap();
    }
    let session = hub.shutdown().unwrap();
    let elapsed = start.elapsed();
    assert_eq!(session.total_records(), n as usize);
    assert!(n as f64 / elapsed.as_secs_f64() >= 5000.0, "{elapsed:?}");
}

#[test]
fn shutdown_cuts_off_a_client_that_never_pauses() {
    let dir = tempfile::tempdir().unwrap();
    let hub = spawn_hub("127.0.0.1:0", &dir.path().join("s")).unwrap();
    let addr = hub.local_addr();
    let sender = thread::spawn(move || {
        let mut c = HubClient::connect(addr).unwrap();
        let mut k = 0u64;
        while c.send(&pose_record(k as f64 * 1e-4)).is_ok() && k < 50_000_000 {
            k += 1;
        }
    });
    thread::sleep(Duration::from_millis(100));
    let start = Instant::now();
    let session = hub.shutdown().unwrap();
    assert!(start.elapsed() < Duration::from_secs(5));
    assert!(!session.records(StreamKind::Pose).is_empty());
    sender.join().unwrap();
    // The replay of what was written is clean.
    let n = replay_session(&dir.path().join("s")).unwrap().filter(|r| r.is_err()).count();
    assert_eq!(n, 0);
}
