//! `demosync` command-line entry point.
//!
//! Exit status: 0 on success, 1 on a domain error, 2 on a usage error. Our own
//! failures print one `ERROR <code> <context>` line on stderr.

mod commands;
mod error;
mod tracks;

use std::ffi::OsString;
use std::io::Write;
use std::panic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use demosync::episode::SessionLatencyOptions;
use demosync::geometry::Axis;
use demosync::latency::LatencyConfig;
use demosync::text::KeyValues;

use commands::LatencySource;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "demosync", version, about = "Capture, calibrate and pack multi-sensor demonstration sessions")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// RNG seed for simulation (overrides the scenario file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` defaults: `seed`, `quiet`, or `<subcommand>.<flag>`
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Only print errors
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct LatencyFlags {
    /// Pose axis compared against the marker track
    #[arg(long, default_value = "x", value_parser = parse_axis)]
    axis: Axis,
    /// Use the marker's vertical pixel coordinate
    #[arg(long)]
    vertical: bool,
    /// Also try the sign-flipped pose axis and keep the better fit
    #[arg(long)]
    allow_flip: bool,
}

impl LatencyFlags {
    fn options(&self) -> SessionLatencyOptions {
        SessionLatencyOptions {
            config: LatencyConfig::default(),
            axis: self.axis,
            marker_vertical: self.vertical,
            allow_flip: self.allow_flip,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic session with known ground truth
    Simulate {
        /// Scenario file; every key is optional
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Session directory (default: $DEMOSYNC_SESSION_DIR/<session id>)
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Where to write the resolved scenario used as ground truth
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Record sensor clients into a session directory
    Hub {
        /// Address to accept sensor clients on
        #[arg(long, value_name = "ADDR:PORT")]
        listen: String,
        /// Session directory (default: $DEMOSYNC_SESSION_DIR/hub-<unix time>)
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Stop after this many seconds instead of waiting for Ctrl-C
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Estimate the MoCap-to-camera latency from a marker sweep
    CalibrateLatency {
        /// Pose track: a pose log or `t x y z [qw qx qy qz]` text
        #[arg(long, requires = "marker", conflicts_with = "session")]
        mocap: Option<PathBuf>,
        /// Marker track: a marker log or `t u v` text
        #[arg(long, requires = "mocap", conflicts_with = "session")]
        marker: Option<PathBuf>,
        /// Read both tracks from a session directory instead
        #[arg(long, required_unless_present = "mocap")]
        session: Option<PathBuf>,
        /// Mount correction applied to poses before comparison
        #[arg(long)]
        controller_cal: Option<PathBuf>,
        #[command(flatten)]
        flags: LatencyFlags,
        /// Lower bound of the latency search, seconds
        #[arg(long, default_value_t = -0.5, allow_negative_numbers = true)]
        min: f64,
        /// Upper bound of the latency search, seconds
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        max: f64,
        /// Stop refining below this interval width, seconds
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        /// Before/after alignment plot (SVG)
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Also write the record to this file
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Build an encoder-to-width map from a calibration sweep
    CalibrateGripper {
        /// `raw_count width_m` per line, in sweep order
        #[arg(long)]
        samples: PathBuf,
        /// Calibration file to write
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Build the controller mount correction from a recorded pose
    CalibrateController {
        /// One `qw qx qy qz tx ty tz` line
        #[arg(long)]
        recorded: PathBuf,
        /// Calibration file to write
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Align a session onto the video clock and write an episode
    Process {
        /// Session directory (default: $DEMOSYNC_SESSION_DIR)
        #[arg(long)]
        session: Option<PathBuf>,
        /// Gripper calibration from calibrate-gripper
        #[arg(long)]
        gripper_cal: PathBuf,
        /// Mount correction from calibrate-controller
        #[arg(long)]
        controller_cal: PathBuf,
        /// Latency record from calibrate-latency, or a bare number of seconds
        #[arg(long, required_unless_present = "auto_latency", conflicts_with = "auto_latency")]
        latency: Option<PathBuf>,
        /// Estimate latency from the session's own marker sweep
        #[arg(long)]
        auto_latency: bool,
        #[command(flatten)]
        flags: LatencyFlags,
        /// Episode directory
        /// Calibration file to write
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Verify an episode and print its manifest and summary
    Inspect {
        /// Episode directory
        episode: PathBuf,
    },
    /// Usability report over many sessions, as CSV
    Report {
        /// Glob matching session directories
        #[arg(long)]
        sessions: String,
        /// Gripper calibration from calibrate-gripper
        #[arg(long)]
        gripper_cal: PathBuf,
        /// Mount correction from calibrate-controller
        #[arg(long)]
        controller_cal: PathBuf,
        /// Fixed latency for every session (default: estimate per session)
        #[arg(long)]
        latency: Option<PathBuf>,
        #[command(flatten)]
        flags: LatencyFlags,
        /// CSV path (default: stdout)
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Score an episode against simulator ground truth, as CSV
    Eval {
        /// Episode directory written by process
        #[arg(long)]
        episode: PathBuf,
        /// Truth file written by `simulate --truth`
        #[arg(long)]
        truth: PathBuf,
        /// CSV path (default: stdout)
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Per-axis error plot (SVG)
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    s.parse::<Axis>().map_err(|_| format!("'{s}' is not one of x, y, z"))
}

const SUBCOMMANDS: [&str; 9] = [
    "simulate",
    "hub",
    "calibrate-latency",
    "calibrate-gripper",
    "calibrate-controller",
    "process",
    "inspect",
    "report",
    "eval",
];

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let a = a.to_string_lossy();
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn has_flag(args: &[OsString], flag: &str) -> bool {
    let long = format!("--{flag}");
    let short = (flag == "out").then_some("-o");
    args.iter().any(|a| {
        let a = a.to_string_lossy();
        a == long || a.starts_with(&format!("{long}=")) || Some(a.as_ref()) == short
    })
}

/// Turns config entries into flags the command line did not already set, so
/// explicit flags always win and clap validates everything in one place.
fn apply_config(mut args: Vec<OsString>, path: &Path) -> CliResult<Vec<OsString>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let kv = KeyValues::parse(&text)
        .map_err(|(line, msg)| CliError::new("ParseError", format!("{}:{line}: {msg}", path.display())))?;
    let Some(sub) = args.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(args);
    };
    let command = args[sub].to_string_lossy().into_owned();
    let mut extra = Vec::new();
    for (key, value) in kv.iter() {
        let flag = match key.split_once('.') {
            Some((cmd, flag)) if cmd == command => flag,
            Some(_) => continue,
            None => key,
        };
        if has_flag(&args, flag) {
            continue;
        }
        match value {
            "true" => extra.push(OsString::from(format!("--{flag}"))),
            "false" => {}
            v => extra.push(OsString::from(format!("--{flag}={v}"))),
        }
    }
    args.splice(sub + 1..sub + 1, extra);
    Ok(args)
}

fn latency_source(file: Option<PathBuf>, flags: &LatencyFlags) -> LatencySource {
    match file {
        Some(p) => LatencySource::File(p),
        None => LatencySource::Auto(flags.options()),
    }
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Simulate { scenario, out, truth } => {
            commands::simulate(commands::SimulateArgs { scenario, out, truth, seed: cli.seed })
        }
        Command::Hub { listen, out, duration } => {
            if duration.is_some_and(|d| !(d.is_finite() && d >= 0.0)) {
                return Err(CliError::new("InvalidArgument", "--duration must be a non-negative number of seconds"));
            }
            commands::hub(commands::HubArgs { listen, out, duration })
        }
        Command::CalibrateLatency { mocap, marker, session, controller_cal, flags, min, max, epsilon, plot, out } => {
            commands::calibrate_latency(commands::LatencyArgs {
                mocap,
                marker,
                session,
                controller_cal,
                axis: flags.axis,
                vertical: flags.vertical,
                min,
                max,
                epsilon,
                allow_flip: flags.allow_flip,
                plot,
                out,
            })
        }
        Command::CalibrateGripper { samples, out } => commands::calibrate_gripper(&samples, &out),
        Command::CalibrateController { recorded, out } => commands::calibrate_controller(&recorded, &out),
        Command::Process { session, gripper_cal, controller_cal, latency, auto_latency: _, flags, out } => {
            commands::process(commands::ProcessArgs {
                session,
                gripper_cal,
                controller_cal,
                latency: latency_source(latency, &flags),
                out,
            })
        }
        Command::Inspect { episode } => commands::inspect(&episode),
        Command::Report { sessions, gripper_cal, controller_cal, latency, flags, out } => {
            commands::report(commands::ReportArgs {
                sessions,
                gripper_cal,
                controller_cal,
                latency: latency_source(latency, &flags),
                out,
            })
        }
        Command::Eval { episode, truth, out, plot } => commands::eval(commands::EvalArgs { episode, truth, out, plot }),
    }
}

fn init_logging(quiet: bool) {
    let level = if quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format(|buf, rec| writeln!(buf, "{} {}", rec.level(), rec.args()))
        .init();
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(if e.is_usage() { 2 } else { 1 })
}

fn main() -> ExitCode {
    let mut args: Vec<OsString> = std::env::args_os().collect();
    if let Some(path) = config_path(&args) {
        match apply_config(args, &path) {
            Ok(a) => args = a,
            Err(e) => return fail(&e),
        }
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    init_logging(cli.quiet);

    // Malformed input must never surface as a panic trace.
    panic::set_hook(Box::new(|info| {
        let msg = info
            .payload()
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| info.payload().downcast_ref::<String>().cloned())
            .unwrap_or_default();
        eprintln!("{}", CliError::new("Internal", msg));
    }));
    match panic::catch_unwind(|| dispatch(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => fail(&e),
        Err(_) => ExitCode::from(1),
    }
}
