//! Summary statistics and their CSV and SVG renderings.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::episode::SessionOutcome;
use crate::geometry::Trajectory1D;
use crate::latency::zscore_normalize;

/// Outcome of processing a batch of sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct UsabilityStats {
    pub sessions_total: usize,
    pub sessions_usable: usize,
    pub outcomes: Vec<SessionOutcome>,
    /// Output frames over usable sessions.
    pub frames_total: usize,
    /// Video frames dropped at episode heads and tails over usable sessions.
    pub frames_dropped: usize,
    /// Frame-weighted active tactile fraction over usable sessions.
    pub active_tactile_fraction: f64,
}

impl UsabilityStats {
    pub fn from_outcomes(outcomes: Vec<SessionOutcome>) -> Self {
        let usable: Vec<&SessionOutcome> = outcomes.iter().filter(|o| o.usable).collect();
        let frames_total: usize = usable.iter().map(|o| o.frames).sum();
        let frames_dropped = usable.iter().map(|o| o.dropped_frames).sum();
        let active: f64 = usable.iter().map(|o| o.active_tactile_fraction * o.frames as f64).sum();
        Self {
            sessions_total: outcomes.len(),
            sessions_usable: usable.len(),
            frames_total,
            frames_dropped,
            active_tactile_fraction: if frames_total == 0 { 0.0 } else { active / frames_total as f64 },
            outcomes,
        }
    }

    pub fn usable_fraction(&self) -> f64 {
        if self.sessions_total == 0 {
            0.0
        } else {
            self.sessions_usable as f64 / self.sessions_total as f64
        }
    }

    /// One row per session, then a `TOTAL` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "session,usable,reason,frames,dropped_frames,warnings,active_tactile_fraction,latency_s,detail\n",
        );
        for o in &self.outcomes {
            let latency = o.latency_s.map(|l| format!("{l:.6}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.6},{},{}",
                csv_field(&o.id),
                o.usable,
                csv_field(&o.reason),
                o.frames,
                o.dropped_frames,
                o.warnings,
                o.active_tactile_fraction,
                latency,
                csv_field(&o.detail)
            );
        }
        let _ = writeln!(
            s,
            "TOTAL,{}/{},usable_fraction={:.6},{},{},,{:.6},,",
            self.sessions_usable,
            self.sessions_total,
            self.usable_fraction(),
            self.frames_total,
            self.frames_dropped,
            self.active_tactile_fraction
        );
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Trajectory error of an episode against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub frames: usize,
    /// Mean absolute position error per axis, mm.
    pub position_mean_mm: [f64; 3],
    pub position_max_mm: [f64; 3],
    pub rotation_mean_deg: f64,
    pub rotation_max_deg: f64,
    /// `None` when the episode has no widths.
    pub width_rms_mm: Option<f64>,
    /// |estimated - true| pose latency, ms.
    pub latency_residual_ms: f64,
}

impl ErrorStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "frames,{}", self.frames);
        for (i, axis) in ["x", "y", "z"].iter().enumerate() {
            let _ = writeln!(s, "position_mean_{axis}_mm,{:.9}", self.position_mean_mm[i]);
            let _ = writeln!(s, "position_max_{axis}_mm,{:.9}", self.position_max_mm[i]);
        }
        let _ = writeln!(s, "rotation_mean_deg,{:.9e}", self.rotation_mean_deg);
        let _ = writeln!(s, "rotation_max_deg,{:.9e}", self.rotation_max_deg);
        match self.width_rms_mm {
            Some(w) => {
                let _ = writeln!(s, "width_rms_mm,{w:.9}");
            }
            None => s.push_str("width_rms_mm,\n"),
        }
        let _ = writeln!(s, "latency_residual_ms,{:.9}", self.latency_residual_ms);
        s
    }
}

const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 50.0;

/// Maps data coordinates into a panel's plotting area.
struct Frame {
    t0: f64,
    t1: f64,
    v0: f64,
    v1: f64,
}

impl Frame {
    fn x(&self, t: f64) -> f64 {
        MARGIN + (t - self.t0) / (self.t1 - self.t0) * (PANEL_W - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        PANEL_H - MARGIN - (v - self.v0) / (self.v1 - self.v0) * (PANEL_H - 2.0 * MARGIN)
    }

    fn path(&self, times: &[f64], values: &[f64]) -> String {
        let mut d = String::new();
        for (i, (t, v)) in times.iter().zip(values).enumerate() {
            let _ = write!(d, "{}{:.3} {:.3}", if i == 0 { "M" } else { " L" }, self.x(*t), self.y(*v));
        }
        d
    }
}

fn widen(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn normalized(traj: &Trajectory1D) -> Vec<f64> {
    match zscore_normalize(traj) {
        Ok(z) => z.values().to_vec(),
        Err(_) => {
            let mean = traj.values().iter().sum::<f64>() / traj.len() as f64;
            traj.values().iter().map(|v| v - mean).collect()
        }
    }
}

fn axes(s: &mut String, fr: &Frame, title: &str, ylabel: &str) {
    let (l, r) = (MARGIN, PANEL_W - MARGIN);
    let (top, bot) = (MARGIN, PANEL_H - MARGIN);
    let _ = writeln!(
        s,
        r##"<rect x="{l}" y="{top}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        r - l,
        bot - top
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{title}</text>"#,
        PANEL_W / 2.0,
        top - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">time (s)</text>"#,
        PANEL_W / 2.0,
        bot + 35.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{ylabel}</text>"#,
        PANEL_H / 2.0,
        PANEL_H / 2.0
    );
    let _ = writeln!(s, r#"<text x="{l}" y="{}" text-anchor="middle" font-size="10">{:.2}</text>"#, bot + 15.0, fr.t0);
    let _ = writeln!(s, r#"<text x="{r}" y="{}" text-anchor="middle" font-size="10">{:.2}</text>"#, bot + 15.0, fr.t1);
    let _ = writeln!(s, r#"<text x="{}" y="{bot}" text-anchor="end" font-size="10">{:.2}</text>"#, l - 4.0, fr.v0);
    let _ =
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{:.2}</text>"#, l - 4.0, top + 8.0, fr.v1);
}

fn empty_input(what: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidInput, format!("{what} is empty"))
}

/// Writes a two-panel SVG: `f` and `g` as recorded, and with `g` moved
/// earlier by `delta` (so `g(t + delta)` lines up with `f(t)`). Both
/// tracks are z-scored. Curves are `<path>` elements with ids `f-raw`,
/// `g-raw`, `f-aligned` and `g-aligned`, in panel-local coordinates.
pub fn emit_alignment_plot(f: &Trajectory1D, g: &Trajectory1D, delta: f64, path: &Path) -> io::Result<()> {
    if f.is_empty() {
        return Err(empty_input("reference trajectory"));
    }
    if g.is_empty() {
        return Err(empty_input("delayed trajectory"));
    }
    if !delta.is_finite() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "latency is not finite"));
    }
    let (fv, gv) = (normalized(f), normalized(g));
    let g_shift: Vec<f64> = g.times().iter().map(|t| t - delta).collect();
    let all_t = f.times().iter().chain(g.times()).chain(&g_shift);
    let (t0, t1) = all_t.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    let (v0, v1) = fv.iter().chain(&gv).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (t0, t1) = widen(t0, t1);
    let (v0, v1) = widen(v0, v1);
    let fr = Frame { t0, t1, v0, v1 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{PANEL_H}" viewBox="0 0 {} {PANEL_H}">"#,
        2.0 * PANEL_W,
        2.0 * PANEL_W
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, (name, title, times)) in [
        ("raw", "before alignment", g.times()),
        ("aligned", format!("after alignment (shift {delta:.4} s)").as_str(), &g_shift[..]),
    ]
    .into_iter()
    .enumerate()
    {
        let _ = writeln!(s, r#"<g id="panel-{name}" transform="translate({},0)">"#, i as f64 * PANEL_W);
        axes(&mut s, &fr, title, "normalized value");
        let _ = writeln!(
            s,
            r##"<path id="f-{name}" d="{}" fill="none" stroke="#1f77b4" stroke-width="1.2"/>"##,
            fr.path(f.times(), &fv)
        );
        let _ = writeln!(
            s,
            r##"<path id="g-{name}" d="{}" fill="none" stroke="#d62728" stroke-width="1.2"/>"##,
            fr.path(times, &gv)
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    fs::write(path, s)
}

/// Writes per-axis position error over time as three stacked panels.
/// `errors_mm[i]` is the signed (x, y, z) error at `times[i]`.
pub fn emit_error_plot(times: &[f64], errors_mm: &[[f64; 3]], path: &Path) -> io::Result<()> {
    if times.is_empty() || times.len() != errors_mm.len() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "error series is empty or mismatched"));
    }
    let (t0, t1) = widen(times[0], times[times.len() - 1]);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{}" viewBox="0 0 {PANEL_W} {}">"#,
        3.0 * PANEL_H,
        3.0 * PANEL_H
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (a, axis) in ["x", "y", "z"].iter().enumerate() {
        let vals: Vec<f64> = errors_mm.iter().map(|e| e[a]).collect();
        let m = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (v0, v1) = widen(-m, m);
        let fr = Frame { t0, t1, v0, v1 };
        let _ = writeln!(s, r#"<g id="panel-{axis}" transform="translate(0,{})">"#, a as f64 * PANEL_H);
        axes(&mut s, &fr, &format!("{axis} error"), "error (mm)");
        let _ = writeln!(
            s,
            r##"<path id="err-{axis}" d="{}" fill="none" stroke="#2ca02c" stroke-width="1"/>"##,
            fr.path(times, &vals)
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    fs::write(path, s)
}

/// Extracts the `d` attribute of the path with the given id as points.
/// Used to compare plotted curves without rendering.
pub fn svg_path_points(svg: &str, id: &str) -> Option<Vec<(f64, f64)>> {
    let start = svg.find(&format!(r#"id="{id}" d=""#))? + id.len() + 9;
    let end = start + svg[start..].find('"')?;
    svg[start..end]
        .split(['M', 'L'])
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (x, y) = p.split_once(' ')?;
            Some((x.parse().ok()?, y.parse().ok()?))
        })
        .collect()
}
