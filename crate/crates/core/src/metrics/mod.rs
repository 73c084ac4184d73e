//! Instrument-motion metrics from a 3D tip trajectory.
//!
//! | metric | unit | discrete form |
//! |---|---|---|
//! | T   | s      | `t_end − t_start` |
//! | IT  | %      | share of time with speed ≤ threshold |
//! | PL  | m      | `∫ ‖ṙ‖ dt` |
//! | S   | mm/s   | `PL / T` |
//! | A   | mm/s²  | `(1/T) ∫ |d‖ṙ‖/dt| dt` |
//! | MS  | mm/s³  | `sqrt(T⁵ / (2·PL²) · ∫ jerk² dt)` |
//! | EOV | –      | `cbrt(Δx·Δy·Δz) / PL` |
//!
//! Derivatives use second-order three-point divided differences (central
//! on the interior, one-sided at the ends), so non-uniform timestamps are
//! fine. Integrals use the trapezoidal rule. Positions are in mm; PL is
//! reported in metres but MS and EOV use it in mm so both stay
//! dimensionally consistent with the positions.

mod cohort;

pub use cohort::{
    compare_cohorts, exact_u_distribution, mann_whitney_u, mann_whitney_u_with, CohortComparison, MannWhitney,
    PValueMethod, SIGNIFICANCE_LEVEL,
};

use std::fmt;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::stereo::Point3D;

/// Default idle threshold, mm/s.
pub const IDLE_THRESHOLD_MM_S: f64 = 5.0;

pub const TRAJECTORY_HEADER: &str = "t_s,x_mm,y_mm,z_mm";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub p: Point3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory3D {
    samples: Vec<Sample>,
}

impl Trajectory3D {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(Error::NonMonotonicTime { index: i + 1 });
            }
        }
        Ok(Self { samples })
    }

    /// Samples `f(t)` at `t0 + k/rate` for `k = 0..=n`.
    pub fn sampled(rate_hz: f64, n: usize, f: impl Fn(f64) -> Point3D) -> Self {
        let samples = (0..=n)
            .map(|k| {
                let t = k as f64 / rate_hz;
                Sample { t, p: f(t) }
            })
            .collect();
        Self { samples }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Parses the `t_s,x_mm,y_mm,z_mm` table (header required).
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
            Some((_, h)) => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{TRAJECTORY_HEADER}`, found `{}`", h.trim()),
                })
            }
            None => return Err(Error::Empty("trajectory file")),
        }
        let mut samples = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            let body = raw.trim();
            if body.is_empty() {
                continue;
            }
            let cols: Vec<&str> = body.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 4 columns, found {}", cols.len()),
                });
            }
            let v: Vec<f64> = cols
                .iter()
                .map(|c| crate::kv::parse_f64(c, line))
                .collect::<Result<_>>()?;
            samples.push(Sample {
                t: v[0],
                p: Point3D::new(v[1], v[2], v[3]),
            });
        }
        Trajectory3D::new(samples).map_err(|e| match e {
            Error::NonMonotonicTime { index } => Error::Parse {
                line: index + 2,
                message: "timestamps must be strictly increasing".into(),
            },
            other => other,
        })
    }

    /// Writes the table with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(32 * (self.len() + 1));
        s.push_str(TRAJECTORY_HEADER);
        s.push('\n');
        for smp in &self.samples {
            let _ = writeln!(s, "{},{},{},{}", smp.t, smp.p.x, smp.p.y, smp.p.z);
        }
        s
    }
}

/// Derivative of `f(t)` at every sample: three-point second-order
/// divided differences (two-point when only two samples exist).
pub fn derivative(t: &[f64], f: &[f64]) -> Vec<f64> {
    let n = t.len();
    assert_eq!(n, f.len());
    match n {
        0 | 1 => vec![0.0; n],
        2 => {
            let d = (f[1] - f[0]) / (t[1] - t[0]);
            vec![d, d]
        }
        _ => {
            // written in slopes so a constant series gives exactly zero
            let slope = |i: usize| (f[i + 1] - f[i]) / (t[i + 1] - t[i]);
            let mut out = vec![0.0; n];
            for i in 1..n - 1 {
                let (h1, h2) = (t[i] - t[i - 1], t[i + 1] - t[i]);
                out[i] = (h2 * slope(i - 1) + h1 * slope(i)) / (h1 + h2);
            }
            let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
            out[0] = slope(0) - h1 * (slope(1) - slope(0)) / (h1 + h2);
            let (h1, h2) = (t[n - 2] - t[n - 3], t[n - 1] - t[n - 2]);
            out[n - 1] = slope(n - 2) + h2 * (slope(n - 2) - slope(n - 3)) / (h1 + h2);
            out
        }
    }
}

pub fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2)
        .zip(f.windows(2))
        .map(|(tw, fw)| 0.5 * (fw[0] + fw[1]) * (tw[1] - tw[0]))
        .sum()
}

/// Per-sample speed (mm/s), rate of change of speed (mm/s²) and its
/// derivative (mm/s³).
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub speed: Vec<f64>,
    pub acceleration: Vec<f64>,
    pub jerk: Vec<f64>,
}

pub fn compute_kinematics(traj: &Trajectory3D) -> Result<Kinematics> {
    if traj.len() < 2 {
        return Err(Error::TooFewSamples {
            metric: "speed",
            required: 2,
            got: traj.len(),
        });
    }
    let t = traj.times();
    let axis = |f: fn(&Point3D) -> f64| -> Vec<f64> {
        let v: Vec<f64> = traj.samples.iter().map(|s| f(&s.p)).collect();
        derivative(&t, &v)
    };
    let (vx, vy, vz) = (axis(|p| p.x), axis(|p| p.y), axis(|p| p.z));
    let speed: Vec<f64> = (0..t.len())
        .map(|i| (vx[i] * vx[i] + vy[i] * vy[i] + vz[i] * vz[i]).sqrt())
        .collect();
    let acceleration = derivative(&t, &speed);
    let jerk = derivative(&t, &acceleration);
    Ok(Kinematics {
        speed,
        acceleration,
        jerk,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricName {
    T,
    IT,
    PL,
    S,
    A,
    MS,
    EOV,
}

impl MetricName {
    /// Report column order.
    pub const ALL: [MetricName; 7] = [
        MetricName::T,
        MetricName::IT,
        MetricName::PL,
        MetricName::S,
        MetricName::A,
        MetricName::MS,
        MetricName::EOV,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MetricName::T => "T",
            MetricName::IT => "IT",
            MetricName::PL => "PL",
            MetricName::S => "S",
            MetricName::A => "A",
            MetricName::MS => "MS",
            MetricName::EOV => "EOV",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            MetricName::T => "s",
            MetricName::IT => "%",
            MetricName::PL => "m",
            MetricName::S => "mm/s",
            MetricName::A => "mm/s2",
            MetricName::MS => "mm/s3",
            MetricName::EOV => "-",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The seven metrics for one trial. `None` marks an undefined metric
/// (MS and EOV when the path length is zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub time_s: f64,
    pub idle_pct: f64,
    pub path_length_m: f64,
    pub speed_mm_s: f64,
    pub accel_mm_s2: f64,
    pub smoothness: Option<f64>,
    pub economy_of_volume: Option<f64>,
}

pub const UNDEFINED: &str = "undefined";

impl MetricsReport {
    pub fn get(&self, m: MetricName) -> Option<f64> {
        match m {
            MetricName::T => Some(self.time_s),
            MetricName::IT => Some(self.idle_pct),
            MetricName::PL => Some(self.path_length_m),
            MetricName::S => Some(self.speed_mm_s),
            MetricName::A => Some(self.accel_mm_s2),
            MetricName::MS => self.smoothness,
            MetricName::EOV => self.economy_of_volume,
        }
    }

    /// `KEY = value` lines in column order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for m in MetricName::ALL {
            let _ = writeln!(s, "{} = {}", m.label(), format_value(self.get(m)));
        }
        s
    }

    /// Fixed-width table with units.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<6} {:>16} {:<6}", "metric", "value", "unit");
        for m in MetricName::ALL {
            let v = match self.get(m) {
                Some(v) => format!("{v:.6}"),
                None => UNDEFINED.to_string(),
            };
            let _ = writeln!(s, "{:<6} {:>16} {:<6}", m.label(), v, m.unit());
        }
        s
    }
}

pub fn format_value(v: Option<f64>) -> String {
    match v {
        Some(v) => v.to_string(),
        None => UNDEFINED.to_string(),
    }
}

pub fn compute_metrics(traj: &Trajectory3D, idle_threshold: f64) -> Result<MetricsReport> {
    if traj.len() < 4 {
        return Err(Error::TooFewSamples {
            metric: if traj.len() < 2 { "speed" } else { "MS" },
            required: if traj.len() < 2 { 2 } else { 4 },
            got: traj.len(),
        });
    }
    let k = compute_kinematics(traj)?;
    let t = traj.times();
    let time_s = traj.duration();

    let idle: f64 = t
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let still = |s: f64| if s <= idle_threshold { 0.5 } else { 0.0 };
            (still(k.speed[i]) + still(k.speed[i + 1])) * (w[1] - w[0])
        })
        .sum();
    let pl_mm = trapezoid(&t, &k.speed);
    let abs_acc: Vec<f64> = k.acceleration.iter().map(|a| a.abs()).collect();
    let jerk_sq: Vec<f64> = k.jerk.iter().map(|j| j * j).collect();

    let (smoothness, economy_of_volume) = if pl_mm > 0.0 {
        let ms = (time_s.powi(5) / (2.0 * pl_mm * pl_mm) * trapezoid(&t, &jerk_sq)).sqrt();
        let extent = |f: fn(&Point3D) -> f64| {
            let (lo, hi) = traj
                .samples
                .iter()
                .map(|s| f(&s.p))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        };
        let volume = extent(|p| p.x) * extent(|p| p.y) * extent(|p| p.z);
        (Some(ms), Some(volume.cbrt() / pl_mm))
    } else {
        (None, None)
    };

    Ok(MetricsReport {
        time_s,
        idle_pct: 100.0 * idle / time_s,
        path_length_m: pl_mm / 1000.0,
        speed_mm_s: pl_mm / time_s,
        accel_mm_s2: trapezoid(&t, &abs_acc) / time_s,
        smoothness,
        economy_of_volume,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(v: f64, rate: f64, secs: f64) -> Trajectory3D {
        Trajectory3D::sampled(rate, (secs * rate) as usize, |t| Point3D::new(v * t, 0.0, 0.0))
    }

    #[test]
    fn static_trajectory() {
        let traj = Trajectory3D::sampled(100.0, 1000, |_| Point3D::new(1.0, 2.0, 3.0));
        let k = compute_kinematics(&traj).unwrap();
        assert!(k.speed.iter().all(|&s| s == 0.0));
        let r = compute_metrics(&traj, IDLE_THRESHOLD_MM_S).unwrap();
        assert!((r.time_s - 10.0).abs() < 1e-12);
        assert!((r.idle_pct - 100.0).abs() < 1e-9);
        assert_eq!((r.path_length_m, r.speed_mm_s, r.accel_mm_s2), (0.0, 0.0, 0.0));
        assert_eq!((r.smoothness, r.economy_of_volume), (None, None));
        assert!(r.to_kv().contains("MS = undefined"));
    }

    #[test]
    fn constant_velocity_line() {
        let traj = line(20.0, 100.0, 10.0);
        let k = compute_kinematics(&traj).unwrap();
        assert!(k.speed.iter().all(|s| (s - 20.0).abs() < 1e-9));
        assert!(k.acceleration.iter().all(|a| a.abs() < 1e-6));
        let r = compute_metrics(&traj, IDLE_THRESHOLD_MM_S).unwrap();
        assert!((r.path_length_m - 0.2).abs() < 1e-9);
        assert!((r.speed_mm_s - 20.0).abs() < 1e-9);
        assert_eq!(r.idle_pct, 0.0);
        assert!(r.accel_mm_s2 < 1e-6 * 20.0);
        assert!(r.smoothness.unwrap() < 1e-6 * 20.0);
    }

    #[test]
    fn uniform_acceleration_oracle() {
        let a = 30.0;
        let traj = Trajectory3D::sampled(100.0, 300, |t| Point3D::new(0.5 * a * t * t, 0.0, 0.0));
        let k = compute_kinematics(&traj).unwrap();
        for (i, acc) in k.acceleration.iter().enumerate().skip(1).take(299) {
            assert!((acc - a).abs() <= 0.01 * a, "sample {i}: {acc}");
        }
    }

    #[test]
    fn derivative_exact_on_quadratics_nonuniform() {
        let t = vec![0.0, 0.1, 0.25, 0.3, 0.7, 0.71, 1.4];
        let f: Vec<f64> = t.iter().map(|x| 3.0 * x * x - 2.0 * x + 1.0).collect();
        for (x, d) in t.iter().zip(derivative(&t, &f)) {
            assert!((d - (6.0 * x - 2.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_samples() {
        let one = Trajectory3D::sampled(10.0, 0, |_| Point3D::new(0.0, 0.0, 0.0));
        assert!(matches!(
            compute_kinematics(&one),
            Err(Error::TooFewSamples { metric: "speed", required: 2, got: 1 })
        ));
        let three = Trajectory3D::sampled(10.0, 2, |t| Point3D::new(t, 0.0, 0.0));
        assert!(compute_kinematics(&three).is_ok());
        assert!(matches!(
            compute_metrics(&three, 5.0),
            Err(Error::TooFewSamples { metric: "MS", required: 4, got: 3 })
        ));
    }

    #[test]
    fn eov_of_a_box_diagonal() {
        // straight diagonal across a 10×20×40 box: PL = |d|, extents known
        let d = Point3D::new(10.0, 20.0, 40.0);
        let len = (10.0f64 * 10.0 + 400.0 + 1600.0).sqrt();
        let traj = Trajectory3D::sampled(50.0, 100, |t| Point3D::new(d.x * t / 2.0, d.y * t / 2.0, d.z * t / 2.0));
        let r = compute_metrics(&traj, 5.0).unwrap();
        assert!((r.path_length_m * 1000.0 - len).abs() < 1e-9);
        assert!((r.economy_of_volume.unwrap() - 8000.0f64.cbrt() / len).abs() < 1e-12);
    }

    #[test]
    fn time_rescaling() {
        let path = |t: f64| Point3D::new(20.0 * (0.8 * t).sin(), 10.0 * (0.5 * t).cos(), 5.0 * t);
        let slow = Trajectory3D::sampled(100.0, 2000, path);
        let fast = Trajectory3D::new(
            slow.samples()
                .iter()
                .map(|s| Sample { t: s.t / 2.0, p: s.p })
                .collect(),
        )
        .unwrap();
        let a = compute_metrics(&slow, 5.0).unwrap();
        let b = compute_metrics(&fast, 5.0).unwrap();
        assert!((b.time_s - a.time_s / 2.0).abs() < 1e-12);
        assert!((b.speed_mm_s / a.speed_mm_s - 2.0).abs() < 0.01 * 2.0);
        assert!((b.accel_mm_s2 / a.accel_mm_s2 - 4.0).abs() < 0.01 * 4.0);
        assert!((b.path_length_m / a.path_length_m - 1.0).abs() < 0.01);
    }

    #[test]
    fn path_length_additive() {
        let path = |t: f64| Point3D::new(30.0 * (0.4 * t).cos(), 30.0 * (0.4 * t).sin(), 2.0 * t);
        let whole = Trajectory3D::sampled(100.0, 2000, path);
        let first = Trajectory3D::new(whole.samples()[..=1000].to_vec()).unwrap();
        let second = Trajectory3D::new(whole.samples()[1000..].to_vec()).unwrap();
        let pl = |t: &Trajectory3D| compute_metrics(t, 5.0).unwrap().path_length_m;
        assert!((pl(&first) + pl(&second) - pl(&whole)).abs() <= 1e-6 * pl(&whole));
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let traj = Trajectory3D::sampled(30.0, 20, |t| Point3D::new(t.sin(), 1.0 / 3.0, t * 1e-7));
        assert_eq!(Trajectory3D::parse_csv(&traj.to_csv()).unwrap(), traj);
        assert!(matches!(
            Trajectory3D::parse_csv("t,x,y,z\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        let err = Trajectory3D::parse_csv("t_s,x_mm,y_mm,z_mm\n0,1,2,3\n1,1,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = Trajectory3D::parse_csv("t_s,x_mm,y_mm,z_mm\n0,1,2,3\n0,1,2,3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    proptest! {
        #[test]
        fn idle_time_monotone_in_threshold(seed in 0u64..500, lo in 0.0f64..30.0, extra in 0.0f64..30.0) {
            let w = 0.3 + (seed % 7) as f64 * 0.2;
            let traj = Trajectory3D::sampled(50.0, 400, |t| Point3D::new(15.0 * (w * t).sin(), 4.0 * (2.0 * w * t).cos(), 0.0));
            let a = compute_metrics(&traj, lo).unwrap().idle_pct;
            let b = compute_metrics(&traj, lo + extra).unwrap().idle_pct;
            prop_assert!(b >= a);
            prop_assert!((0.0..=100.0).contains(&b));
        }
    }
}
