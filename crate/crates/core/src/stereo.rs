//! Rectified stereo pair: depth from disparity, triangulation and the
//! forward projection used to synthesize and check data.
//!
//! Depth follows `d = B·f / (D·d_x)` with baseline `B` and focal length
//! `f` in mm, pixel pitch `d_x` in mm/px and disparity `D` in px. The
//! right camera sits at `+B` along x from the left camera.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::pyramid::ImageSize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub baseline_mm: f64,
    pub focal_mm: f64,
    pub pixel_pitch_mm: f64,
    pub cx_px: f64,
    pub cy_px: f64,
    pub image: ImageSize,
    /// Disparities below this are flagged as out of range.
    pub min_disparity_px: f64,
    /// Row disagreement above this is flagged.
    pub vertical_tolerance_px: f64,
}

impl Default for StereoRig {
    /// A synthetic 640×480 pair: 20 mm baseline, 4 mm lens, 5 µm pixels.
    fn default() -> Self {
        Self {
            baseline_mm: 20.0,
            focal_mm: 4.0,
            pixel_pitch_mm: 0.005,
            cx_px: 320.0,
            cy_px: 240.0,
            image: ImageSize {
                width: 640,
                height: 480,
            },
            min_disparity_px: 1.0,
            vertical_tolerance_px: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Point3D) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StereoWarning {
    /// Disparity positive but below the rig's minimum.
    OutOfRange { disparity_px: f64 },
    /// Left/right rows disagree by more than the tolerance.
    VerticalMismatch { delta_px: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Depth {
    pub mm: f64,
    pub warning: Option<StereoWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    pub point: Point3D,
    pub disparity_px: f64,
    pub warnings: Vec<StereoWarning>,
}

impl StereoRig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("baseline_mm", self.baseline_mm),
            ("focal_mm", self.focal_mm),
            ("pixel_pitch_mm", self.pixel_pitch_mm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.image.width == 0 || self.image.height == 0 {
            return Err(Error::Config("image size must be nonzero".into()));
        }
        Ok(())
    }

    /// Focal length in pixels, `f / d_x`.
    pub fn focal_px(&self) -> f64 {
        self.focal_mm / self.pixel_pitch_mm
    }

    pub fn depth_from_disparity(&self, disparity_px: f64) -> Result<Depth> {
        if !(disparity_px > 0.0) {
            return Err(Error::NonPositiveDisparity(disparity_px));
        }
        let mm = self.baseline_mm * self.focal_mm / (disparity_px * self.pixel_pitch_mm);
        let warning = (disparity_px < self.min_disparity_px).then_some(StereoWarning::OutOfRange { disparity_px });
        Ok(Depth { mm, warning })
    }

    pub fn triangulate_point(&self, left: Pixel, right: Pixel) -> Result<Triangulation> {
        let disparity_px = left.u - right.u;
        let depth = self.depth_from_disparity(disparity_px)?;
        let z = depth.mm;
        let k = z * self.pixel_pitch_mm / self.focal_mm;
        let mut warnings: Vec<StereoWarning> = depth.warning.into_iter().collect();
        let dv = (left.v - right.v).abs();
        if dv > self.vertical_tolerance_px {
            warnings.push(StereoWarning::VerticalMismatch { delta_px: dv });
        }
        Ok(Triangulation {
            point: Point3D::new((left.u - self.cx_px) * k, (left.v - self.cy_px) * k, z),
            disparity_px,
            warnings,
        })
    }

    /// Pinhole projection into `(left, right)`.
    pub fn project_point(&self, p: Point3D) -> Result<(Pixel, Pixel)> {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera(p.z));
        }
        let s = self.focal_mm / (p.z * self.pixel_pitch_mm);
        let v = self.cy_px + p.y * s;
        Ok((
            Pixel {
                u: self.cx_px + p.x * s,
                v,
            },
            Pixel {
                u: self.cx_px + (p.x - self.baseline_mm) * s,
                v,
            },
        ))
    }

    /// Whether both projections land at least `margin_px` inside the image.
    pub fn sees(&self, p: Point3D, margin_px: f64) -> bool {
        let Ok((l, r)) = self.project_point(p) else {
            return false;
        };
        let (w, h) = (self.image.width as f64, self.image.height as f64);
        [l, r]
            .iter()
            .all(|px| px.u >= margin_px && px.u <= w - margin_px && px.v >= margin_px && px.v <= h - margin_px)
    }

    /// Parses `key = value` calibration text.
    ///
    /// Required keys: `baseline_mm`, `focal_mm`, `pixel_pitch_mm`, `cx_px`,
    /// `cy_px`, `width_px`, `height_px`. Optional: `min_disparity_px`,
    /// `vertical_tolerance_px`. `#` starts a comment.
    pub fn parse(text: &str) -> Result<StereoRig> {
        let mut rig = StereoRig::default();
        let mut seen = [false; 7];
        const REQUIRED: [&str; 7] = [
            "baseline_mm",
            "focal_mm",
            "pixel_pitch_mm",
            "cx_px",
            "cy_px",
            "width_px",
            "height_px",
        ];
        for (key, value, line) in crate::kv::entries(text)? {
            let num = || crate::kv::parse_f64(value, line);
            match key {
                "baseline_mm" => rig.baseline_mm = num()?,
                "focal_mm" => rig.focal_mm = num()?,
                "pixel_pitch_mm" => rig.pixel_pitch_mm = num()?,
                "cx_px" => rig.cx_px = num()?,
                "cy_px" => rig.cy_px = num()?,
                "width_px" => rig.image.width = crate::kv::parse_usize(value, line)?,
                "height_px" => rig.image.height = crate::kv::parse_usize(value, line)?,
                "min_disparity_px" => rig.min_disparity_px = num()?,
                "vertical_tolerance_px" => rig.vertical_tolerance_px = num()?,
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown calibration key `{other}`"),
                    })
                }
            }
            if let Some(i) = REQUIRED.iter().position(|k| *k == key) {
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Parse {
                line: 0,
                message: format!("missing calibration key `{}`", REQUIRED[i]),
            });
        }
        rig.validate()?;
        Ok(rig)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub(crate) fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("baseline_mm", self.baseline_mm.to_string()),
            ("focal_mm", self.focal_mm.to_string()),
            ("pixel_pitch_mm", self.pixel_pitch_mm.to_string()),
            ("cx_px", self.cx_px.to_string()),
            ("cy_px", self.cy_px.to_string()),
            ("width_px", self.image.width.to_string()),
            ("height_px", self.image.height.to_string()),
            ("min_disparity_px", self.min_disparity_px.to_string()),
            ("vertical_tolerance_px", self.vertical_tolerance_px.to_string()),
        ]
    }
}
