//! Synthetic dual-camera sessions and synthetic skill-cohort trials.
//!
//! A session is a smooth random 3D tip path in front of the stereo rig.
//! Each camera sees a white Gaussian blob on a salmon background, centred
//! exactly on the projected tip; occluded frames show background only.
//! Crops are rendered on demand so only the path has to be stored.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kv;
use crate::metrics::{Sample, Trajectory3D};
use crate::motion::BoundingBox;
use crate::pyramid::{CameraId, ImagePatch};
use crate::stereo::{Pixel, Point3D, StereoRig};

pub const BACKGROUND_RGB: [f64; 3] = [0.98, 0.5, 0.45];
pub const TARGET_RGB: [f64; 3] = [1.0, 1.0, 1.0];
/// Path regeneration attempts before giving up.
pub const FRUSTUM_RETRIES: usize = 20;
/// Box half-side in units of the blob's σ.
pub const BOX_SIGMAS: f64 = 2.0;

const TRAJECTORY_SECTION: &str = "[trajectory]";

#[derive(Debug, Clone, PartialEq)]
pub struct SessionParams {
    pub seed: u64,
    pub duration_s: f64,
    pub frame_rate_hz: f64,
    /// Inclusive frame ranges with the target hidden in both cameras.
    pub occlusions: Vec<RangeInclusive<u64>>,
    /// Amplitude of uniform per-pixel noise.
    pub noise: f64,
    pub rig: StereoRig,
    pub blob_radius_mm: f64,
    /// Home position of the random walk.
    pub home_mm: Point3D,
    /// Minimum distance from the projected tip to any image border.
    pub margin_px: f64,
}

impl Default for SessionParams {
    fn default() -> Self {
        let rig = StereoRig::default();
        Self {
            seed: 0,
            duration_s: 10.0,
            frame_rate_hz: 30.0,
            occlusions: Vec::new(),
            noise: 0.0,
            home_mm: Point3D::new(rig.baseline_mm / 2.0, 0.0, 110.0),
            rig,
            blob_radius_mm: 1.5,
            margin_px: 96.0,
        }
    }
}

/// Parses `none`, `10-20` or `10-20,40-49,75` into inclusive ranges.
pub fn parse_occlusions(text: &str) -> Result<Vec<RangeInclusive<u64>>> {
    let text = text.trim();
    if text.is_empty() || text == "none" {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|part| {
            let part = part.trim();
            let bad = || Error::Config(format!("bad occlusion range `{part}`, expected `start-end`"));
            let (a, b) = part.split_once('-').unwrap_or((part, part));
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            Ok(a..=b)
        })
        .collect()
}

pub fn format_occlusions(ranges: &[RangeInclusive<u64>]) -> String {
    if ranges.is_empty() {
        return "none".into();
    }
    ranges
        .iter()
        .map(|r| format!("{}-{}", r.start(), r.end()))
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSession {
    pub seed: u64,
    pub frame_rate_hz: f64,
    pub occlusions: Vec<RangeInclusive<u64>>,
    pub noise: f64,
    pub rig: StereoRig,
    pub blob_radius_mm: f64,
    /// One sample per frame.
    pub truth: Trajectory3D,
}

pub fn generate_synthetic_session(seed: u64, duration_s: f64, occlusions: Vec<RangeInclusive<u64>>, noise: f64) -> Result<SyntheticSession> {
    SyntheticSession::generate(&SessionParams {
        seed,
        duration_s,
        occlusions,
        noise,
        ..SessionParams::default()
    })
}

impl SyntheticSession {
    pub fn generate(p: &SessionParams) -> Result<Self> {
        if !(p.duration_s > 0.0 && p.duration_s.is_finite()) {
            return Err(Error::InvalidInput(format!("duration must be positive, got {}", p.duration_s)));
        }
        if !(p.frame_rate_hz > 0.0 && p.frame_rate_hz.is_finite()) {
            return Err(Error::InvalidInput("frame rate must be positive".into()));
        }
        if !(p.noise >= 0.0 && p.noise.is_finite()) {
            return Err(Error::InvalidInput("noise must be non-negative".into()));
        }
        p.rig.validate()?;
        let frames = ((p.duration_s * p.frame_rate_hz).round() as usize).max(1);
        for attempt in 0..FRUSTUM_RETRIES {
            let truth = walk(p, frames, attempt as u64);
            if truth.samples().iter().all(|s| p.rig.sees(s.p, p.margin_px)) {
                return Ok(Self {
                    seed: p.seed,
                    frame_rate_hz: p.frame_rate_hz,
                    occlusions: p.occlusions.clone(),
                    noise: p.noise,
                    rig: p.rig,
                    blob_radius_mm: p.blob_radius_mm,
                    truth,
                });
            }
        }
        Err(Error::FrustumExit {
            attempts: FRUSTUM_RETRIES,
        })
    }

    pub fn frames(&self) -> usize {
        self.truth.len()
    }

    pub fn is_occluded(&self, frame: u64) -> bool {
        self.occlusions.iter().any(|r| r.contains(&frame))
    }

    pub fn truth_point(&self, frame: u64) -> Point3D {
        self.truth.samples()[frame as usize].p
    }

    /// Projected tip in `camera`, regardless of occlusion.
    pub fn target_pixel(&self, frame: u64, camera: CameraId) -> Pixel {
        let (l, r) = self
            .rig
            .project_point(self.truth_point(frame))
            .expect("session points lie in front of the rig");
        match camera {
            CameraId::One => l,
            CameraId::Two => r,
        }
    }

    pub fn blob_sigma_px(&self, frame: u64) -> f64 {
        self.blob_radius_mm * self.rig.focal_px() / self.truth_point(frame).z
    }

    /// Ground-truth box; `missing` during occlusion.
    pub fn truth_box(&self, frame: u64, camera: CameraId) -> BoundingBox {
        if self.is_occluded(frame) {
            return BoundingBox::missing(frame, camera);
        }
        let px = self.target_pixel(frame, camera);
        let side = 2.0 * BOX_SIGMAS * self.blob_sigma_px(frame);
        BoundingBox::new(px.u, px.v, side, side, frame, camera)
    }

    /// Renders a `size × size` crop whose pixel `(c, r)` samples image
    /// point `(x0 + c, y0 + r)`. Points outside the image are zero.
    pub fn render(&self, frame: u64, camera: CameraId, x0: f64, y0: f64, size: usize) -> ImagePatch {
        let blob = (!self.is_occluded(frame)).then(|| (self.target_pixel(frame, camera), self.blob_sigma_px(frame)));
        let (iw, ih) = (self.rig.image.width as f64, self.rig.image.height as f64);
        let mut planes = [vec![0.0; size * size], vec![0.0; size * size], vec![0.0; size * size]];
        for r in 0..size {
            let y = y0 + r as f64;
            for c in 0..size {
                let x = x0 + c as f64;
                if !(x >= 0.0 && x < iw && y >= 0.0 && y < ih) {
                    continue;
                }
                let g = blob.map_or(0.0, |(px, s)| {
                    let d2 = (x - px.u).powi(2) + (y - px.v).powi(2);
                    (-d2 / (2.0 * s * s)).exp()
                });
                for (k, plane) in planes.iter_mut().enumerate() {
                    let mut v = BACKGROUND_RGB[k] + (TARGET_RGB[k] - BACKGROUND_RGB[k]) * g;
                    if self.noise > 0.0 {
                        let h = pixel_hash(&[self.seed, frame, camera.index() as u64, k as u64, x as u64, y as u64]);
                        v += self.noise * (2.0 * h - 1.0);
                    }
                    plane[r * size + c] = v;
                }
            }
        }
        ImagePatch {
            height: size,
            width: size,
            planes,
            camera,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# synthetic dual-camera session\n");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "frame_rate_hz = {}", self.frame_rate_hz);
        let _ = writeln!(s, "noise = {}", self.noise);
        let _ = writeln!(s, "blob_radius_mm = {}", self.blob_radius_mm);
        let _ = writeln!(s, "occlusion = {}", format_occlusions(&self.occlusions));
        s.push_str(&self.rig.to_text());
        s.push_str(TRAJECTORY_SECTION);
        s.push('\n');
        s.push_str(&self.truth.to_csv());
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = String::new();
        let mut header_lines = 0;
        let mut body = None;
        let mut consumed = 0;
        for line in text.split_inclusive('\n') {
            consumed += line.len();
            if line.trim() == TRAJECTORY_SECTION {
                body = Some((header_lines + 1, &text[consumed..]));
                break;
            }
            header.push_str(line);
            header_lines += 1;
        }
        let Some((offset, body)) = body else {
            return Err(Error::Parse {
                line: header_lines,
                message: format!("missing `{TRAJECTORY_SECTION}` section"),
            });
        };

        // Rig keys go to the calibration parser with line numbers intact.
        const RIG_KEYS: [&str; 9] = [
            "baseline_mm",
            "focal_mm",
            "pixel_pitch_mm",
            "cx_px",
            "cy_px",
            "width_px",
            "height_px",
            "min_disparity_px",
            "vertical_tolerance_px",
        ];
        let mut rig_text = String::new();
        let (mut seed, mut rate, mut noise, mut radius, mut occ) = (None, None, None, None, None);
        let entries = kv::entries(&header)?;
        let mut next_line = 1;
        for (key, value, line) in entries {
            while next_line < line {
                rig_text.push('\n');
                next_line += 1;
            }
            next_line += 1;
            if RIG_KEYS.contains(&key) {
                let _ = writeln!(rig_text, "{key} = {value}");
                continue;
            }
            rig_text.push('\n');
            match key {
                "seed" => seed = Some(kv::parse_u64(value, line)?),
                "frame_rate_hz" => rate = Some(kv::parse_f64(value, line)?),
                "noise" => noise = Some(kv::parse_f64(value, line)?),
                "blob_radius_mm" => radius = Some(kv::parse_f64(value, line)?),
                "occlusion" => {
                    occ = Some(parse_occlusions(value).map_err(|e| Error::Parse {
                        line,
                        message: e.to_string(),
                    })?)
                }
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown session key `{other}`"),
                    })
                }
            }
        }
        let missing = |k: &str| Error::Parse {
            line: 0,
            message: format!("missing session key `{k}`"),
        };
        let rig = StereoRig::parse(&rig_text)?;
        let truth = Trajectory3D::parse_csv(body).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line: line + offset,
                message,
            },
            other => other,
        })?;
        if truth.is_empty() {
            return Err(Error::Empty("session trajectory"));
        }
        Ok(Self {
            seed: seed.ok_or_else(|| missing("seed"))?,
            frame_rate_hz: rate.ok_or_else(|| missing("frame_rate_hz"))?,
            noise: noise.ok_or_else(|| missing("noise"))?,
            blob_radius_mm: radius.ok_or_else(|| missing("blob_radius_mm"))?,
            occlusions: occ.ok_or_else(|| missing("occlusion"))?,
            rig,
            truth,
        })
    }
}

/// Damped random walk pulled back towards `home_mm`.
fn walk(p: &SessionParams, frames: usize, attempt: u64) -> Trajectory3D {
    const STIFFNESS: f64 = 0.2; // 1/s²
    const DAMPING: f64 = 1.0; // 1/s
    const DRIVE: f64 = 2.5; // mm/s^1.5
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(attempt);
    let dt = 1.0 / p.frame_rate_hz;
    let home = [p.home_mm.x, p.home_mm.y, p.home_mm.z];
    let (mut pos, mut vel) = (home, [0.0; 3]);
    let samples = (0..frames)
        .map(|k| {
            let s = Sample {
                t: k as f64 * dt,
                p: Point3D::new(pos[0], pos[1], pos[2]),
            };
            for a in 0..3 {
                let n: f64 = rng.sample(StandardNormal);
                vel[a] += (-STIFFNESS * (pos[a] - home[a]) - DAMPING * vel[a]) * dt + DRIVE * dt.sqrt() * n;
                pos[a] += vel[a] * dt;
            }
            s
        })
        .collect();
    Trajectory3D::new(samples).expect("uniform timestamps")
}

/// splitmix64 over the words, mapped to `[0, 1)`.
fn pixel_hash(words: &[u64]) -> f64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &w in words {
        h ^= w;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkillProfile {
    pub duration_mean_s: f64,
    pub duration_sd_s: f64,
    pub mean_speed_mm_s: f64,
    /// Typical side of the working volume.
    pub spread_mm: f64,
}

impl SkillProfile {
    /// Short, compact, economical trials.
    pub const EXPERT: SkillProfile = SkillProfile {
        duration_mean_s: 125.0,
        duration_sd_s: 20.0,
        mean_speed_mm_s: 65.0,
        spread_mm: 45.0,
    };

    /// Longer trials over a wider volume.
    pub const NOVICE: SkillProfile = SkillProfile {
        duration_mean_s: 217.0,
        duration_sd_s: 35.0,
        mean_speed_mm_s: 128.0,
        spread_mm: 100.0,
    };
}

pub const TRIAL_RATE_HZ: f64 = 20.0;
pub const EXPERT_TRIALS: usize = 15;
pub const NOVICE_TRIALS: usize = 36;

/// A synthetic instrument path with roughly the profile's duration,
/// speed and working volume.
pub fn synthetic_trial(profile: &SkillProfile, seed: u64) -> Trajectory3D {
    const DAMPING: f64 = 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: f64 = rng.sample(StandardNormal);
    let duration = (profile.duration_mean_s + profile.duration_sd_s * z).max(0.25 * profile.duration_mean_s);
    // Maxwell mean speed is 1.6 σ_v; the visited extent is about 4.5 σ_p.
    let sigma_v = profile.mean_speed_mm_s / 1.6;
    let sigma_p = profile.spread_mm / 4.5;
    let stiffness = (sigma_v / sigma_p).powi(2);
    let drive = sigma_v * (2.0 * DAMPING).sqrt();
    let dt = 1.0 / TRIAL_RATE_HZ;
    let n = (duration * TRIAL_RATE_HZ).round() as usize;
    let (mut pos, mut vel) = ([0.0f64; 3], [0.0f64; 3]);
    for v in &mut vel {
        *v = sigma_v * rng.sample::<f64, _>(StandardNormal);
    }
    let mut samples = Vec::with_capacity(n + 1);
    for k in 0..=n {
        samples.push(Sample {
            t: k as f64 * dt,
            p: Point3D::new(pos[0], pos[1], pos[2]),
        });
        for a in 0..3 {
            let e: f64 = rng.sample(StandardNormal);
            vel[a] += (-stiffness * pos[a] - DAMPING * vel[a]) * dt + drive * dt.sqrt() * e;
            pos[a] += vel[a] * dt;
        }
    }
    Trajectory3D::new(samples).expect("uniform timestamps")
}
