use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use demosync::geometry::{Pose6D, UnitQuaternion, Vec3};
use demosync::latency::LatencyEstimate;
use demosync::protocol::{HubClient, Payload, RawSession, StreamKind, WireRecord};
use demosync::report::svg_path_points;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_demosync"));
    c.env_remove("DEMOSYNC_SESSION_DIR").env_remove("RUST_LOG").env_remove("SOURCE_DATE_EPOCH");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    stdout(&o)
}

/// Every failure line we emit is `ERROR <code> <context>`; nothing panics.
fn assert_diagnostic(o: &Output, code: &str) {
    let err = stderr(o);
    let line = err.lines().find(|l| l.starts_with("ERROR ")).unwrap_or_else(|| panic!("no ERROR line in {err:?}"));
    let mut parts = line.splitn(3, ' ');
    parts.next();
    assert_eq!(parts.next(), Some(code), "{line}");
    assert!(parts.next().is_some_and(|c| !c.is_empty()), "{line}");
    assert!(!err.contains("panicked"), "{err}");
}

/// A small-tactile default scenario plus its calibrations.
fn simulated(dir: &Path, name: &str, seed: u64) {
    fs::write(dir.join("small.scn"), "tactile_height = 24\ntactile_width = 32\n").unwrap();
    let truth = format!("{name}.truth");
    ok(dir, &["simulate", "--scenario", "small.scn", "--seed", &seed.to_string(), "--out", name, "--truth", &truth]);
    ok(dir, &["calibrate-gripper", "--samples", &format!("{name}/gripper_samples.txt"), "-o", "gripper.cal"]);
    ok(
        dir,
        &["calibrate-controller", "--recorded", &format!("{name}/controller_recorded.txt"), "-o", "controller.cal"],
    );
}

#[test]
fn no_arguments_is_a_usage_error() {
    let o = bin().output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_and_bad_flag_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(tmp.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(tmp.path(), &["calibrate-latency", "--session", "x", "--axis", "w"]).status.code(), Some(2));
    assert_eq!(
        run(tmp.path(), &["process", "--session", "s", "--gripper-cal", "g", "--controller-cal", "c", "-o", "e"])
            .status
            .code(),
        Some(2)
    );
    let o = run(tmp.path(), &["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_diagnostic(&o, "MissingArgument");
}

#[test]
fn inspect_missing_path_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no-such-episode");
    let o = run(tmp.path(), &["inspect", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_diagnostic(&o, "IoError");
    assert!(stderr(&o).contains(missing.to_str().unwrap()));
}

#[test]
fn simulate_process_eval_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulated(d, "s", 21);
    ok(
        d,
        &[
            "process",
            "--session",
            "s",
            "--gripper-cal",
            "gripper.cal",
            "--controller-cal",
            "controller.cal",
            "--auto-latency",
            "-o",
            "ep",
        ],
    );
    let csv = ok(d, &["eval", "--episode", "ep", "--truth", "s.truth", "--plot", "err.svg"]);
    let rows: Vec<(&str, &str)> = csv.lines().map(|l| l.split_once(',').unwrap()).collect();
    assert_eq!(rows[0], ("metric", "value"));
    let get = |k: &str| rows.iter().find(|r| r.0 == k).unwrap().1.parse::<f64>().unwrap();
    assert_eq!(get("frames"), 300.0);
    for axis in ["x", "y", "z"] {
        let m = get(&format!("position_mean_{axis}_mm"));
        assert!((1.0..=4.0).contains(&m), "{axis}: {m}");
    }
    assert!(get("latency_residual_ms") < 5.0);
    let svg = fs::read_to_string(d.join("err.svg")).unwrap();
    assert_eq!(svg_path_points(&svg, "err-x").unwrap().len(), 300);

    let summary = ok(d, &["inspect", "ep"]);
    assert!(summary.contains("schema_version = 1"));
    assert!(summary.contains("frames = 300"));
}

#[test]
fn latency_record_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulated(d, "s", 22);
    let out = ok(
        d,
        &[
            "calibrate-latency",
            "--session",
            "s",
            "--controller-cal",
            "controller.cal",
            "--plot",
            "a.svg",
            "-o",
            "lat.txt",
        ],
    );
    assert_eq!(out.lines().count(), 1);
    let est = LatencyEstimate::from_record(&out).unwrap();
    assert!((est.delta_star - 0.137).abs() < 5e-3, "{out}");
    assert_eq!(LatencyEstimate::from_record(&fs::read_to_string(d.join("lat.txt")).unwrap()), Some(est));
    let svg = fs::read_to_string(d.join("a.svg")).unwrap();
    for id in ["f-raw", "g-raw", "f-aligned", "g-aligned"] {
        assert!(svg_path_points(&svg, id).is_some(), "{id}");
    }

    // The standalone-file form reads the same logs and agrees exactly.
    let logs = ok(
        d,
        &[
            "calibrate-latency",
            "--mocap",
            "s/pose.log",
            "--marker",
            "s/marker.log",
            "--controller-cal",
            "controller.cal",
        ],
    );
    assert_eq!(logs, out);

    // A fixed latency file drives `process` without re-estimation.
    ok(
        d,
        &[
            "process",
            "--session",
            "s",
            "--gripper-cal",
            "gripper.cal",
            "--controller-cal",
            "controller.cal",
            "--latency",
            "lat.txt",
            "-o",
            "ep",
        ],
    );
    assert!(ok(d, &["inspect", "ep"]).contains(&format!("latency_s = {:.6}", est.delta_star)));
}

#[test]
fn text_tracks_with_a_flipped_axis() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let signal = |t: f64| (2.0 * std::f64::consts::PI * t).sin() + 0.4 * (4.0 * std::f64::consts::PI * t).sin();
    let mocap: String = (0..600).map(|k| k as f64 / 60.0).map(|t| format!("{t} {} 0 0\n", signal(t - 0.1))).collect();
    let marker: String = (0..300).map(|k| k as f64 / 30.0).map(|t| format!("{t} {} 5\n", -300.0 * signal(t))).collect();
    fs::write(d.join("m.txt"), mocap).unwrap();
    fs::write(d.join("k.txt"), marker).unwrap();
    let out = ok(
        d,
        &[
            "calibrate-latency",
            "--mocap",
            "m.txt",
            "--marker",
            "k.txt",
            "--allow-flip",
            "--min",
            "-0.3",
            "--max",
            "0.3",
        ],
    );
    let est = LatencyEstimate::from_record(&out).unwrap();
    assert!(est.flipped, "{out}");
    assert!((est.delta_star - 0.1).abs() < 1e-3, "{out}");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulated(d, "a", 5);
    ok(d, &["simulate", "--scenario", "small.scn", "--seed", "5", "--out", "b", "--truth", "b.truth"]);
    let cal = fs::read(d.join("gripper.cal")).unwrap();
    ok(d, &["calibrate-gripper", "--samples", "b/gripper_samples.txt", "-o", "gripper.cal"]);
    assert_eq!(fs::read(d.join("gripper.cal")).unwrap(), cal);
    for s in ["a", "b"] {
        ok(
            d,
            &[
                "process",
                "--session",
                s,
                "--gripper-cal",
                "gripper.cal",
                "--controller-cal",
                "controller.cal",
                "--auto-latency",
                "-o",
                &format!("ep-{s}"),
            ],
        );
    }
    for (x, y) in [("a", "b"), ("ep-a", "ep-b")] {
        let mut names: Vec<_> = fs::read_dir(d.join(x)).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for n in names {
            assert_eq!(fs::read(d.join(x).join(&n)).unwrap(), fs::read(d.join(y).join(&n)).unwrap(), "{n:?}");
        }
    }
    assert_eq!(fs::read(d.join("a.truth")).unwrap(), fs::read(d.join("b.truth")).unwrap());
}

#[test]
fn report_over_a_glob() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulated(d, "sess-1", 1);
    ok(d, &["simulate", "--scenario", "small.scn", "--seed", "2", "--out", "sess-2"]);
    ok(d, &["simulate", "--scenario", "small.scn", "--seed", "3", "--out", "sess-3"]);
    fs::remove_file(d.join("sess-3").join(StreamKind::VideoMeta.log_file())).unwrap();
    ok(
        d,
        &[
            "report",
            "--sessions",
            "sess-*",
            "--gripper-cal",
            "gripper.cal",
            "--controller-cal",
            "controller.cal",
            "-o",
            "r.csv",
        ],
    );
    let csv = fs::read_to_string(d.join("r.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("session,usable,reason"));
    assert_eq!(lines.len(), 5);
    assert!(lines[1].contains(",true,OK,"));
    assert!(lines[3].contains(",false,MissingStream,"), "{}", lines[3]);
    assert!(lines[4].starts_with("TOTAL,2/3,"));
}

#[test]
fn config_file_supplies_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("small.scn"), "tactile_height = 24\ntactile_width = 32\n").unwrap();
    fs::write(d.join("cfg.txt"), "seed = 77\nsimulate.scenario = small.scn\nsimulate.out = from-config\n").unwrap();
    let o = run(d, &["--config", "cfg.txt", "--quiet", "simulate", "--truth", "t.txt"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).is_empty(), "{}", stderr(&o));
    let s = RawSession::load(&d.join("from-config")).unwrap();
    assert_eq!(s.header.session_id, "sim-77");
    // An explicit flag beats the config file.
    ok(d, &["--config", "cfg.txt", "simulate", "--out", "explicit"]);
    assert!(d.join("explicit").join("header.txt").exists());

    let o = run(d, &["--config", "missing.txt", "simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert_diagnostic(&o, "IoError");
}

#[test]
fn session_dir_env_is_the_default_root() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("small.scn"), "tactile_height = 8\ntactile_width = 8\n").unwrap();
    let o = bin()
        .current_dir(d)
        .env("DEMOSYNC_SESSION_DIR", d.join("root"))
        .args(["simulate", "--scenario", "small.scn", "--seed", "4"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(d.join("root/sim-4/header.txt").exists());
}

#[test]
fn malformed_inputs_give_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulated(d, "s", 8);
    fs::write(d.join("junk.bin"), [0xffu8, 0, 1, 2, 3, 0x45, 0x58]).unwrap();
    fs::write(d.join("junk.txt"), "not = a [valid\n").unwrap();
    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["calibrate-gripper", "--samples", "junk.bin", "-o", "x.cal"], "ParseError"),
        (vec!["calibrate-controller", "--recorded", "junk.txt", "-o", "x.cal"], "ParseError"),
        (vec!["simulate", "--scenario", "junk.txt", "--out", "x"], "InvalidScenario"),
        (
            vec![
                "process",
                "--session",
                "s",
                "--gripper-cal",
                "junk.txt",
                "--controller-cal",
                "controller.cal",
                "--auto-latency",
                "-o",
                "e",
            ],
            "ParseError",
        ),
        (
            vec![
                "process",
                "--session",
                "s",
                "--gripper-cal",
                "gripper.cal",
                "--controller-cal",
                "controller.cal",
                "--latency",
                "junk.txt",
                "-o",
                "e",
            ],
            "ParseError",
        ),
        (vec!["calibrate-latency", "--mocap", "junk.bin", "--marker", "junk.bin"], "ParseError"),
        (vec!["eval", "--episode", "s", "--truth", "s.truth"], "IoError"),
        (vec!["inspect", "s"], "IoError"),
        (
            vec![
                "process",
                "--session",
                "nowhere",
                "--gripper-cal",
                "gripper.cal",
                "--controller-cal",
                "controller.cal",
                "--auto-latency",
                "-o",
                "e",
            ],
            "IoError",
        ),
    ];
    for (args, code) in cases {
        let o = run(d, &args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert_diagnostic(&o, code);
    }

    // A pose log overwritten with noise is reported, not fatal to loading.
    fs::write(d.join("s").join("pose.log"), b"EXU1\x01garbage").unwrap();
    let o = run(
        d,
        &[
            "process",
            "--session",
            "s",
            "--gripper-cal",
            "gripper.cal",
            "--controller-cal",
            "controller.cal",
            "--auto-latency",
            "-o",
            "e",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert_diagnostic(&o, "MissingStream");
    assert!(stderr(&o).contains("CorruptLog pose.log"));
}

#[test]
fn hub_records_a_client_until_the_duration_ends() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("live");
    let mut child = bin()
        .args(["hub", "--listen", "127.0.0.1:0", "--out", out.to_str().unwrap(), "--duration", "1.5"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let addr = line.split_whitespace().nth(3).unwrap_or_else(|| panic!("{line}")).to_string();
    let mut c = HubClient::connect(addr.as_str()).unwrap();
    let q = UnitQuaternion::IDENTITY;
    for k in 0..100 {
        let t = k as f64 / 60.0;
        c.send(&WireRecord::new(StreamKind::Pose, t, &Payload::Pose(Pose6D::new(Vec3::new(t, 0.0, 0.0), q)))).unwrap();
    }
    c.finish().unwrap();
    assert!(child.wait().unwrap().success());
    assert_eq!(RawSession::load(&out).unwrap().records(StreamKind::Pose).len(), 100);
}
