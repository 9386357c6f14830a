use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use demosync::calibration::{
    apply_correction, build_gripper_map, digest, format_gripper_samples, format_transform, make_controller_calibration,
    parse_gripper_samples, parse_recorded_transform, ControllerCalibration, GripperCalibration,
};
use demosync::episode::{
    build_episode, estimate_session_latency, marker_track, read_episode, usability_report, write_episode, Episode,
    LatencyChoice, PipelineConfig, SessionJob, SessionLatencyOptions, MANIFEST_FILE,
};
use demosync::geometry::{Axis, PoseSample};
use demosync::latency::{estimate_latency, estimate_latency_allow_flip, extract_axis, LatencyConfig, LatencyEstimate};
use demosync::protocol::{spawn_hub, RawSession, SESSION_DIR_ENV};
use demosync::report::{emit_alignment_plot, emit_error_plot};
use demosync::sim::{frame_errors, generate_session, score_against_truth, GroundTruth, SimScenario};
use demosync::tactile::{SensorId, DEFAULT_CURATION_THRESHOLD};
use log::{info, warn};

use crate::error::{CliError, CliResult};
use crate::tracks::{read_marker_track, read_pose_track};

/// Sweep samples and recorded mount pose written next to a simulated session.
pub const GRIPPER_SAMPLES_FILE: &str = "gripper_samples.txt";
pub const CONTROLLER_RECORDED_FILE: &str = "controller_recorded.txt";

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => CliError::new("ParseError", format!("{}: not UTF-8 text", path.display())),
        _ => CliError::io(path, e),
    })
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Writes to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::new("IoError", format!("stdout: {e}")))
        }
    }
}

/// Explicit path, else `$DEMOSYNC_SESSION_DIR/<name>`.
fn session_dir_or_default(explicit: Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p);
    }
    match std::env::var_os(SESSION_DIR_ENV) {
        Some(root) if !root.is_empty() => Ok(PathBuf::from(root).join(name)),
        _ => {
            Err(CliError::new("MissingArgument", format!("no output directory given and {SESSION_DIR_ENV} is not set")))
        }
    }
}

/// Calibration timestamp. Taken from `SOURCE_DATE_EPOCH` so reruns are byte-identical.
fn created_at() -> String {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .filter(|v| v.trim().parse::<u64>().is_ok())
        .map(|v| format!("unix:{}", v.trim()))
        .unwrap_or_else(|| "unspecified".into())
}

fn load_gripper_cal(path: &Path) -> CliResult<(GripperCalibration, String)> {
    let text = read_text(path)?;
    let cal = GripperCalibration::from_text(&text).map_err(|e| CliError::from(e).at(path))?;
    Ok((cal, digest(&text)))
}

fn load_controller_cal(path: &Path) -> CliResult<(ControllerCalibration, String)> {
    let text = read_text(path)?;
    let cal = ControllerCalibration::from_text(&text).map_err(|e| CliError::from(e).at(path))?;
    Ok((cal, digest(&text)))
}

fn load_latency(path: &Path) -> CliResult<LatencyEstimate> {
    LatencyEstimate::from_record(&read_text(path)?).ok_or_else(|| {
        CliError::new("ParseError", format!("{}: expected a latency record or a number of seconds", path.display()))
    })
}

fn load_session(dir: &Path) -> CliResult<RawSession> {
    if !dir.is_dir() {
        return Err(CliError::new("IoError", format!("{}: session directory not found", dir.display())));
    }
    let s = RawSession::load(dir).map_err(|e| CliError::from(e).at(dir))?;
    for w in &s.warnings {
        warn!("{}: {w}", dir.display());
    }
    Ok(s)
}

pub struct SimulateArgs {
    pub scenario: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn simulate(a: SimulateArgs) -> CliResult {
    let mut sc = match &a.scenario {
        Some(p) => SimScenario::from_text(&read_text(p)?).map_err(|e| CliError::from(e).at(p))?,
        None => SimScenario::default(),
    };
    if let Some(seed) = a.seed {
        // A derived session id follows the new seed; an explicit one is kept.
        if sc.session_id == "sim" || sc.session_id == format!("sim-{}", sc.seed) {
            sc.session_id = format!("sim-{seed}");
        }
        sc.seed = seed;
    }
    let out = session_dir_or_default(a.out, &sc.session_id)?;
    let (session, truth) = generate_session(&sc)?;
    session.save(&out).map_err(|e| CliError::from(e).at(&out))?;
    write_file(&out.join(GRIPPER_SAMPLES_FILE), format_gripper_samples(&sc.gripper_sweep()).as_bytes())?;
    let recorded = format!("# qw qx qy qz tx ty tz\n{}\n", format_transform(&sc.controller_recorded()));
    write_file(&out.join(CONTROLLER_RECORDED_FILE), recorded.as_bytes())?;
    if let Some(t) = &a.truth {
        write_file(t, truth.to_text().as_bytes())?;
    }
    info!("simulated {} ({} records) into {}", sc.session_id, session.total_records(), out.display());
    Ok(())
}

pub struct HubArgs {
    pub listen: String,
    pub out: Option<PathBuf>,
    pub duration: Option<f64>,
}

pub fn hub(a: HubArgs) -> CliResult {
    let name = format!(
        "hub-{}",
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    );
    let out = session_dir_or_default(a.out, &name)?;
    let handle =
        spawn_hub(a.listen.as_str(), &out).map_err(|e| CliError::new(e.code(), format!("{}: {e}", a.listen)))?;
    info!("listening on {} writing {}", handle.local_addr(), out.display());
    let stop = handle.signal();
    let on_signal = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || on_signal.trigger()) {
        warn!("interrupt handler unavailable: {e}");
    }
    if let Some(secs) = a.duration {
        thread::spawn(move || {
            thread::sleep(Duration::from_secs_f64(secs));
            stop.trigger();
        });
    }
    let session = handle.wait().map_err(|e| CliError::from(e).at(&out))?;
    let h = &session.header;
    let streams: Vec<String> = h.streams.iter().map(|(k, n)| format!("{}={n}", k.name())).collect();
    info!(
        "stopped: {} records [{}], {} out-of-order drops, {} protocol errors",
        session.total_records(),
        streams.join(" "),
        h.out_of_order_drops,
        h.protocol_errors
    );
    Ok(())
}

pub struct LatencyArgs {
    pub mocap: Option<PathBuf>,
    pub marker: Option<PathBuf>,
    pub session: Option<PathBuf>,
    pub controller_cal: Option<PathBuf>,
    pub axis: Axis,
    pub vertical: bool,
    pub min: f64,
    pub max: f64,
    pub epsilon: f64,
    pub allow_flip: bool,
    pub plot: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn calibrate_latency(a: LatencyArgs) -> CliResult {
    let correction = match &a.controller_cal {
        Some(p) => Some(load_controller_cal(p)?.0),
        None => None,
    };
    let (f, poses) = match (&a.session, &a.mocap, &a.marker) {
        (Some(dir), _, _) => {
            let s = load_session(dir)?;
            let f = marker_track(&s, a.vertical).map_err(|e| CliError::from(e).at(dir))?;
            (f, s.poses().map_err(|e| CliError::from(e).at(dir))?)
        }
        (None, Some(m), Some(k)) => (read_marker_track(k, a.vertical)?, read_pose_track(m)?),
        _ => return Err(CliError::new("MissingArgument", "give --session, or both --mocap and --marker")),
    };
    let poses: Vec<PoseSample> = match &correction {
        Some(c) => poses.iter().map(|s| PoseSample { t: s.t, pose: apply_correction(c, &s.pose) }).collect(),
        None => poses,
    };
    let g = extract_axis(&poses, a.axis)?;
    let cfg = LatencyConfig { epsilon: a.epsilon, ..LatencyConfig::with_bounds(a.min, a.max) };
    let est = if a.allow_flip { estimate_latency_allow_flip(&f, &g, &cfg)? } else { estimate_latency(&f, &g, &cfg)? };
    let record = est.to_record();
    if let Some(out) = &a.out {
        write_file(out, format!("{record}\n").as_bytes())?;
    }
    if let Some(plot) = &a.plot {
        let g = if est.flipped { g.map_values(|v| -v) } else { g };
        emit_alignment_plot(&f, &g, est.delta_star, plot).map_err(|e| CliError::io(plot, e))?;
    }
    emit(None, &format!("{record}\n"))
}

pub fn calibrate_gripper(samples: &Path, out: &Path) -> CliResult {
    let parsed = parse_gripper_samples(&read_text(samples)?).map_err(|e| CliError::from(e).at(samples))?;
    let cal = build_gripper_map(&parsed).map_err(|e| CliError::from(e).at(samples))?;
    write_file(out, cal.to_text(&created_at()).as_bytes())?;
    let (lo, hi) = cal.width_range();
    info!("gripper calibration: {} knots, {:.4}..{:.4} m -> {}", cal.knots().len(), lo, hi, out.display());
    Ok(())
}

pub fn calibrate_controller(recorded: &Path, out: &Path) -> CliResult {
    let t = parse_recorded_transform(&read_text(recorded)?).map_err(|e| CliError::from(e).at(recorded))?;
    write_file(out, make_controller_calibration(&t).to_text(&created_at()).as_bytes())?;
    info!("controller calibration -> {}", out.display());
    Ok(())
}

/// How `process` and `report` pick the pose latency.
pub enum LatencySource {
    File(PathBuf),
    Auto(SessionLatencyOptions),
}

fn pipeline_config(gripper: &Path, controller: &Path) -> CliResult<PipelineConfig> {
    let (g, gd) = load_gripper_cal(gripper)?;
    let (c, cd) = load_controller_cal(controller)?;
    let mut cfg = PipelineConfig::new(LatencyEstimate::fixed(0.0), g, c);
    cfg.gripper_cal_digest = gd;
    cfg.controller_cal_digest = cd;
    Ok(cfg)
}

pub struct ProcessArgs {
    pub session: Option<PathBuf>,
    pub gripper_cal: PathBuf,
    pub controller_cal: PathBuf,
    pub latency: LatencySource,
    pub out: PathBuf,
}

pub fn process(a: ProcessArgs) -> CliResult {
    let dir = match a.session {
        Some(d) => d,
        None => std::env::var_os(SESSION_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from).ok_or_else(|| {
            CliError::new("MissingArgument", format!("no --session given and {SESSION_DIR_ENV} is not set"))
        })?,
    };
    let session = load_session(&dir)?;
    let mut cfg = pipeline_config(&a.gripper_cal, &a.controller_cal)?;
    cfg.latency = match &a.latency {
        LatencySource::File(p) => load_latency(p)?,
        LatencySource::Auto(opts) => {
            estimate_session_latency(&session, &cfg.controller_cal, opts).map_err(|e| CliError::from(e).at(&dir))?
        }
    };
    let ep = build_episode(&session, &cfg).map_err(|e| CliError::from(e).at(&dir))?;
    for w in &ep.provenance.warnings {
        warn!("{w}");
    }
    write_episode(&ep, &a.out).map_err(|e| CliError::from(e).at(&a.out))?;
    info!(
        "{} frames ({} dropped), latency {:.6} s, active tactile fraction {:.3} -> {}",
        ep.len(),
        ep.provenance.dropped_head + ep.provenance.dropped_tail,
        ep.provenance.latency.delta_star,
        ep.active_tactile_fraction(DEFAULT_CURATION_THRESHOLD),
        a.out.display()
    );
    Ok(())
}

fn open_episode(dir: &Path) -> CliResult<Episode> {
    if !dir.is_dir() {
        return Err(CliError::new("IoError", format!("{}: episode directory not found", dir.display())));
    }
    read_episode(dir).map_err(|e| CliError::from(e).at(dir))
}

fn summary(ep: &Episode) -> String {
    let mut s = String::from("[summary]\n");
    let span = match (ep.frame_times.first(), ep.frame_times.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    s += &format!("frames = {}\nduration_s = {span:.6}\n", ep.len());
    if ep.len() > 1 && span > 0.0 {
        s += &format!("frame_rate_hz = {:.3}\n", (ep.len() - 1) as f64 / span);
    }
    match &ep.widths {
        Some(w) => {
            let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            s += &format!("width_range_m = {lo:.5} {hi:.5}\n");
        }
        None => s += "width_range_m = absent\n",
    }
    let flagged = ep.frame_flags.iter().filter(|&&f| f != 0).count();
    s += &format!("flagged_frames = {flagged}\n");
    for sensor in [SensorId::Left, SensorId::Right] {
        let tr = ep.tactile(sensor);
        let covered = tr.frame_sample.iter().filter(|x| x.is_some()).count();
        s += &format!("tactile_{}_samples = {} (covering {covered} frames)\n", sensor.name(), tr.samples.len());
    }
    s += &format!("active_tactile_fraction = {:.4}\n", ep.active_tactile_fraction(DEFAULT_CURATION_THRESHOLD));
    s += &format!("latency_s = {:.6}\nwarnings = {}\n", ep.provenance.latency.delta_star, ep.provenance.warnings.len());
    s
}

pub fn inspect(dir: &Path) -> CliResult {
    let ep = open_episode(dir)?;
    let manifest = read_text(&dir.join(MANIFEST_FILE))?;
    emit(None, &format!("{manifest}\n{}", summary(&ep)))
}

pub struct ReportArgs {
    pub sessions: String,
    pub gripper_cal: PathBuf,
    pub controller_cal: PathBuf,
    pub latency: LatencySource,
    pub out: Option<PathBuf>,
}

pub fn report(a: ReportArgs) -> CliResult {
    let paths = glob::glob(&a.sessions).map_err(|e| CliError::new("InvalidPattern", format!("{}: {e}", a.sessions)))?;
    let mut dirs: Vec<PathBuf> = paths.filter_map(Result::ok).filter(|p| p.is_dir()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::new("NoSessions", format!("{}: no session directories match", a.sessions)));
    }
    let config = pipeline_config(&a.gripper_cal, &a.controller_cal)?;
    let latency = match &a.latency {
        LatencySource::File(p) => LatencyChoice::Fixed(load_latency(p)?),
        LatencySource::Auto(opts) => LatencyChoice::Auto(*opts),
    };
    let jobs: Vec<SessionJob> = dirs
        .iter()
        .map(|d| SessionJob {
            id: d.display().to_string(),
            session: RawSession::load(d).map_err(|e| (e.code().to_string(), e.to_string())),
            config: config.clone(),
            latency,
        })
        .collect();
    let stats = usability_report(&jobs);
    info!("{}/{} sessions usable", stats.sessions_usable, stats.sessions_total);
    emit(a.out.as_deref(), &stats.to_csv())
}

pub struct EvalArgs {
    pub episode: PathBuf,
    pub truth: PathBuf,
    pub out: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> CliResult {
    let ep = open_episode(&a.episode)?;
    let truth = GroundTruth::from_text(&read_text(&a.truth)?).map_err(|e| CliError::from(e).at(&a.truth))?;
    let stats = score_against_truth(&ep, &truth);
    if let Some(plot) = &a.plot {
        emit_error_plot(&ep.frame_times, &frame_errors(&ep, &truth), plot).map_err(|e| CliError::io(plot, e))?;
    }
    emit(a.out.as_deref(), &stats.to_csv())
}
