mod common;

use std::fs;

use common::random_payload;
use demosync::protocol::{
    decode_stream, replay_session, ProtocolError, RawSession, RecordDecoder, StreamKind, WireRecord,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A session whose streams share some timestamps, so ties are exercised.
fn interleaved_session(seed: u64) -> RawSession {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = RawSession::new("replay", 0.0);
    for kind in StreamKind::ALL {
        let mut t = 0.0;
        for _ in 0..rng.random_range(20..60) {
            t += [0.01, 0.02, 0.05][rng.random_range(0..3)];
            t = (t * 100.0f64).round() / 100.0;
            let p = random_payload(&mut rng, kind);
            s.push(WireRecord::new(kind, t, &p)).unwrap();
        }
    }
    s
}

#[test]
fn empty_session_replays_nothing() {
    let dir = tempfile::tempdir().unwrap();
    RawSession::new("empty", 0.0).save(dir.path()).unwrap();
    assert_eq!(replay_session(dir.path()).unwrap().count(), 0);
}

#[test]
fn merge_equals_full_sort() {
    for seed in 0..5 {
        let dir = tempfile::tempdir().unwrap();
        let s = interleaved_session(seed);
        s.save(dir.path()).unwrap();
        let mut oracle: Vec<(f64, u8, usize, WireRecord)> = Vec::new();
        for kind in StreamKind::ALL {
            for (i, r) in s.records(kind).iter().enumerate() {
                oracle.push((r.timestamp, kind.code(), i, r.clone()));
            }
        }
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let got: Vec<WireRecord> = replay_session(dir.path()).unwrap().map(|r| r.unwrap().1).collect();
        let want: Vec<WireRecord> = oracle.into_iter().map(|x| x.3).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn truncated_final_record_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let s = interleaved_session(9);
    s.save(dir.path()).unwrap();
    let path = dir.path().join(StreamKind::Pose.log_file());
    let bytes = fs::read(&path).unwrap();
    let n = s.records(StreamKind::Pose).len();
    fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();

    let items: Vec<_> = replay_session(dir.path()).unwrap().collect();
    let poses = items.iter().filter(|r| matches!(r, Ok((StreamKind::Pose, _)))).count();
    assert_eq!(poses, n - 1);
    let errs: Vec<&ProtocolError> = items.iter().filter_map(|r| r.as_ref().err()).collect();
    assert_eq!(errs.len(), 1);
    match errs[0] {
        ProtocolError::CorruptLog { stream, offset, .. } => {
            assert_eq!(stream, "pose");
            assert_eq!(*offset, (73 * (n - 1)) as u64);
        }
        e => panic!("unexpected {e:?}"),
    }
    assert!(items.last().unwrap().is_err());

    // Loading recovers everything but the partial record and says so.
    let loaded = RawSession::load(dir.path()).unwrap();
    assert_eq!(loaded.records(StreamKind::Pose), &s.records(StreamKind::Pose)[..n - 1]);
    assert!(loaded.warnings.iter().any(|w| w.starts_with("CorruptLog pose.log")));
    assert!(loaded.warnings.iter().any(|w| w.starts_with("CountMismatch pose.log")));
}

#[test]
fn missing_log_is_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    interleaved_session(2).save(dir.path()).unwrap();
    fs::remove_file(dir.path().join(StreamKind::Encoder.log_file())).unwrap();
    let loaded = RawSession::load(dir.path()).unwrap();
    assert!(!loaded.has_stream(StreamKind::Encoder));
    assert!(loaded.warnings.iter().any(|w| w.starts_with("MissingLog encoder.log")));
}

#[test]
fn session_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = interleaved_session(4);
    s.save(dir.path()).unwrap();
    let loaded = RawSession::load(dir.path()).unwrap();
    assert_eq!(loaded, s);
}

#[test]
fn thousand_records_through_a_byte_pipe() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut clock = [0.0f64; 5];
    let sent: Vec<WireRecord> = (0..1000)
        .map(|_| {
            let kind = StreamKind::ALL[rng.random_range(0..5)];
            clock[kind.code() as usize - 1] += rng.random_range(1e-4..0.1);
            let p = random_payload(&mut rng, kind);
            WireRecord::new(kind, clock[kind.code() as usize - 1], &p)
        })
        .collect();
    let bytes: Vec<u8> = sent.iter().flat_map(WireRecord::encode).collect();
    // Feed in random-sized chunks, as a socket would.
    let mut dec = RecordDecoder::new();
    let mut got = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let n = rng.random_range(1..200).min(bytes.len() - pos);
        dec.push(&bytes[pos..pos + n]);
        pos += n;
        while let Some(r) = dec.next_record().unwrap() {
            got.push(r);
        }
    }
    assert_eq!(dec.pending(), 0);
    assert_eq!(got, sent);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Any prefix of a valid stream decodes to whole records plus at most one partial tail.
    #[test]
    fn prefixes_are_self_delimiting(seed in any::<u64>(), cut in 0.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs: Vec<WireRecord> = (0..20)
            .map(|i| {
                let kind = StreamKind::ALL[rng.random_range(0..5)];
                let p = random_payload(&mut rng, kind);
                WireRecord::new(kind, i as f64, &p)
            })
            .collect();
        let bytes: Vec<u8> = recs.iter().flat_map(WireRecord::encode).collect();
        let cut = (cut * bytes.len() as f64) as usize;
        let (got, err) = decode_stream(&bytes[..cut]);
        let mut ends = recs.iter().scan(0usize, |acc, r| { *acc += r.encoded_len(); Some(*acc) });
        let whole = ends.by_ref().take_while(|&e| e <= cut).count();
        prop_assert_eq!(&got[..], &recs[..whole]);
        let boundary = recs[..whole].iter().map(WireRecord::encoded_len).sum::<usize>();
        if boundary == cut {
            prop_assert!(err.is_none());
        } else {
            let (offset, e) = err.unwrap();
            prop_assert_eq!(offset, boundary as u64);
            let truncated = matches!(e, ProtocolError::TruncatedRecord { .. });
            prop_assert!(truncated);
        }
    }
}
