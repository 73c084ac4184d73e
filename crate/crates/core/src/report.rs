//! Result tables and SVG plots.
//!
//! Every file is rendered in memory first; nothing is written unless the
//! whole report could be built. Numbers in tables use shortest round-trip
//! formatting and plots use fixed precision, so identical inputs give
//! identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{format_value, MetricName, MetricsReport, UNDEFINED};
use crate::session::format_occlusions;
use crate::tracker::TrackRecord;

pub enum ReportInput<'a> {
    Track(&'a TrackRecord),
    /// Named trials in output order.
    Trials(&'a [(String, MetricsReport)]),
}

/// Writes the report files into `out_dir` (created if needed) and returns
/// their paths.
pub fn emit_report(input: ReportInput<'_>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let files = match input {
        ReportInput::Track(r) => track_files(r)?,
        ReportInput::Trials(t) => trial_files(t)?,
    };
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = out_dir.join(name);
        if let Err(e) = fs::write(&path, body) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(Error::Io(format!("{}: {e}", path.display())));
        }
        written.push(path);
    }
    Ok(written)
}

pub fn metrics_csv(trials: &[(String, MetricsReport)]) -> String {
    let mut s = MetricName::ALL.map(|m| m.label()).join(",");
    s.push('\n');
    for (_, r) in trials {
        let row: Vec<String> = MetricName::ALL.iter().map(|&m| format_value(r.get(m))).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn metrics_table(trials: &[(String, MetricsReport)]) -> String {
    let mut s = format!("{:<16}", "trial");
    for m in MetricName::ALL {
        let _ = write!(s, " {:>12}", format!("{} ({})", m.label(), m.unit()));
    }
    s.push('\n');
    for (name, r) in trials {
        let _ = write!(s, "{name:<16}");
        for m in MetricName::ALL {
            let v = r.get(m).map_or(UNDEFINED.to_string(), |v| format!("{v:.4}"));
            let _ = write!(s, " {v:>12}");
        }
        s.push('\n');
    }
    s
}

fn trial_files(trials: &[(String, MetricsReport)]) -> Result<Vec<(&'static str, String)>> {
    if trials.is_empty() {
        return Err(Error::Empty("trial list"));
    }
    Ok(vec![("metrics.csv", metrics_csv(trials)), ("metrics.txt", metrics_table(trials))])
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub fn track_csv(r: &TrackRecord) -> String {
    let mut s = String::from("frame,t_s");
    for cam in ["cam1", "cam2"] {
        for col in ["cx", "cy", "w", "h", "score", "low_confidence"] {
            let _ = write!(s, ",{cam}_{col}");
        }
    }
    s.push_str(",est_x_mm,est_y_mm,est_z_mm,gt_x_mm,gt_y_mm,gt_z_mm,error_mm\n");
    for f in &r.frames {
        let _ = write!(s, "{},{}", f.frame, f.t);
        for c in &f.cameras {
            let b = c.bbox;
            let _ = write!(s, ",{},{},{},{},{},{}", b.cx, b.cy, b.w, b.h, c.score, u8::from(c.low_confidence));
        }
        let _ = writeln!(
            s,
            ",{},{},{},{},{},{},{}",
            opt(f.estimate.map(|p| p.x)),
            opt(f.estimate.map(|p| p.y)),
            opt(f.estimate.map(|p| p.z)),
            f.truth.x,
            f.truth.y,
            f.truth.z,
            opt(f.error_mm)
        );
    }
    s
}

/// Compresses sorted frame numbers into `a-b` runs.
fn frame_runs(frames: &[u64]) -> String {
    let mut runs = Vec::new();
    let mut it = frames.iter().copied().peekable();
    while let Some(start) = it.next() {
        let mut end = start;
        while it.peek() == Some(&(end + 1)) {
            end += 1;
            it.next();
        }
        runs.push(start..=end);
    }
    format_occlusions(&runs)
}

pub fn track_summary(r: &TrackRecord) -> String {
    let mut s = String::new();
    let low = r.low_confidence_frames();
    let estimated = r.frames.iter().filter(|f| f.estimate.is_some()).count();
    let _ = writeln!(s, "frames = {}", r.frames.len());
    let _ = writeln!(s, "estimated_frames = {estimated}");
    let _ = writeln!(s, "low_confidence_count = {}", low.len());
    let _ = writeln!(s, "low_confidence_frames = {}", frame_runs(&low));
    match r.error_summary() {
        Some(e) => {
            let _ = writeln!(s, "avg_err_mm = {}", e.avg);
            let _ = writeln!(s, "max_err_mm = {}", e.max);
            let _ = writeln!(s, "sd_err_mm = {}", e.sd);
        }
        None => {
            for k in ["avg_err_mm", "max_err_mm", "sd_err_mm"] {
                let _ = writeln!(s, "{k} = {UNDEFINED}");
            }
        }
    }
    let _ = writeln!(s, "precision_2d = {}", r.precision_2d());
    let _ = writeln!(s, "success_2d = {}", r.success_2d());
    let _ = writeln!(s, "decode_cell_mm = {}", r.decode_cell_mm());
    s
}

fn track_files(r: &TrackRecord) -> Result<Vec<(&'static str, String)>> {
    if r.frames.is_empty() {
        return Err(Error::Empty("track record"));
    }
    let estimated = r.estimated_trajectory()?;
    Ok(vec![
        ("track.csv", track_csv(r)),
        ("summary.txt", track_summary(r)),
        ("estimated_trajectory.csv", estimated.to_csv()),
        ("trajectory.svg", trajectory_svg(r)),
        ("error.svg", error_svg(r)),
    ])
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 40.0;

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Axis {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !lo.is_finite() {
            return Axis { lo: 0.0, hi: 1.0 };
        }
        let pad = ((hi - lo) * 0.05).max(1e-6);
        Axis {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn map(&self, v: f64, from: f64, to: f64) -> f64 {
        from + (v - self.lo) / (self.hi - self.lo) * (to - from)
    }
}

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    )
}

fn polyline(points: &[(f64, f64)], colour: &str, dash: bool) -> String {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let dash = if dash { " stroke-dasharray=\"4 3\"" } else { "" };
    format!(
        "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>\n",
        pts.join(" ")
    )
}

fn frame_box(s: &mut String, x0: f64, y0: f64, w: f64, h: f64, title: &str, xl: &str, yl: &str) {
    let _ = writeln!(
        s,
        "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{title}</text>",
        x0 + w / 2.0,
        y0 - 8.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{xl}</text>",
        x0 + w / 2.0,
        y0 + h + 16.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\" transform=\"rotate(-90 {:.2} {:.2})\">{yl}</text>",
        x0 - 12.0,
        y0 + h / 2.0,
        x0 - 12.0,
        y0 + h / 2.0
    );
}

/// Ground truth (solid) and estimate (dashed, broken at gaps) in a top and
/// a front view.
pub fn trajectory_svg(r: &TrackRecord) -> String {
    let views: [(&str, &str, &str, fn(&crate::stereo::Point3D) -> (f64, f64)); 2] = [
        ("top view", "x (mm)", "z (mm)", |p| (p.x, p.z)),
        ("front view", "x (mm)", "y (mm)", |p| (p.x, p.y)),
    ];
    let mut s = svg_open(2.0 * W, H);
    for (k, (title, xl, yl, proj)) in views.iter().enumerate() {
        let all: Vec<(f64, f64)> = r
            .frames
            .iter()
            .flat_map(|f| std::iter::once(f.truth).chain(f.estimate))
            .map(|p| proj(&p))
            .collect();
        let ax = Axis::fit(all.iter().map(|p| p.0));
        let ay = Axis::fit(all.iter().map(|p| p.1));
        let (x0, y0) = (k as f64 * W + PAD, PAD);
        let (w, h) = (W - 2.0 * PAD, H - 2.0 * PAD);
        frame_box(&mut s, x0, y0, w, h, title, xl, yl);
        let to_px = |(a, b): (f64, f64)| (ax.map(a, x0, x0 + w), ay.map(b, y0 + h, y0));
        let truth: Vec<(f64, f64)> = r.frames.iter().map(|f| to_px(proj(&f.truth))).collect();
        s.push_str(&polyline(&truth, "#1f77b4", false));
        let mut run: Vec<(f64, f64)> = Vec::new();
        for f in &r.frames {
            match f.estimate {
                Some(p) => run.push(to_px(proj(&p))),
                None if !run.is_empty() => {
                    s.push_str(&polyline(&run, "#d62728", true));
                    run.clear();
                }
                None => {}
            }
        }
        if !run.is_empty() {
            s.push_str(&polyline(&run, "#d62728", true));
        }
    }
    s.push_str("<text x=\"50\" y=\"352\" font-size=\"10\" fill=\"#1f77b4\">ground truth</text>\n");
    s.push_str("<text x=\"140\" y=\"352\" font-size=\"10\" fill=\"#d62728\">estimate</text>\n");
    s.push_str("</svg>\n");
    s
}

/// Per-frame 3D error with low-confidence frames shaded.
pub fn error_svg(r: &TrackRecord) -> String {
    let mut s = svg_open(W, H);
    let n = r.frames.len();
    let ax = Axis {
        lo: 0.0,
        hi: (n.max(2) - 1) as f64,
    };
    let top = r.frames.iter().filter_map(|f| f.error_mm).fold(0.0, f64::max).max(1e-3) * 1.05;
    let ay = Axis { lo: 0.0, hi: top };
    let (x0, y0, w, h) = (PAD, PAD, W - 2.0 * PAD, H - 2.0 * PAD);
    let cell = w / n.max(1) as f64;
    for f in r.frames.iter().filter(|f| f.low_confidence()) {
        let x = ax.map(f.frame as f64, x0, x0 + w) - cell / 2.0;
        let _ = writeln!(
            s,
            "<rect x=\"{x:.2}\" y=\"{y0:.2}\" width=\"{cell:.2}\" height=\"{h:.2}\" fill=\"#dddddd\"/>"
        );
    }
    frame_box(&mut s, x0, y0, w, h, "3D error", "frame", "error (mm)");
    let mut run = Vec::new();
    for f in &r.frames {
        match f.error_mm {
            Some(e) => run.push((ax.map(f.frame as f64, x0, x0 + w), ay.map(e, y0 + h, y0))),
            None if !run.is_empty() => {
                s.push_str(&polyline(&run, "#d62728", false));
                run.clear();
            }
            None => {}
        }
    }
    if !run.is_empty() {
        s.push_str(&polyline(&run, "#d62728", false));
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\">max {top:.2} mm</text>",
        x0 + 4.0,
        y0 + 12.0
    );
    s.push_str("</svg>\n");
    s
}
