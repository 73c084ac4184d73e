//! Stand-in backbone: strided average pooling plus a fixed channel lift.
//!
//! Produces stage-3/4/5 feature grids with the same shapes a ResNet
//! backbone would emit, so every downstream layer can run untrained.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::{linear_project, AffineWeights, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CameraId {
    One,
    Two,
}

impl CameraId {
    pub const BOTH: [CameraId; 2] = [CameraId::One, CameraId::Two];

    /// The coupled camera of the stereo pair.
    pub fn other(self) -> CameraId {
        match self {
            CameraId::One => CameraId::Two,
            CameraId::Two => CameraId::One,
        }
    }

    pub fn index(self) -> usize {
        match self {
            CameraId::One => 0,
            CameraId::Two => 1,
        }
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cam{}", self.index() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionKind {
    Template,
    Search,
}

/// Backbone stage tapped by a CMT/MMH pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    S3,
    S4,
    S5,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::S3, Stage::S4, Stage::S5];

    pub fn number(self) -> u8 {
        match self {
            Stage::S3 => 3,
            Stage::S4 => 4,
            Stage::S5 => 5,
        }
    }

    pub fn index(self) -> usize {
        self.number() as usize - 3
    }

    pub fn from_number(n: u8) -> Result<Stage> {
        match n {
            3 => Ok(Stage::S3),
            4 => Ok(Stage::S4),
            5 => Ok(Stage::S5),
            other => Err(Error::UnknownStage(other)),
        }
    }
}

/// Output strides for stages 3, 4, 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Strides(pub [usize; 3]);

impl Default for Strides {
    fn default() -> Self {
        Strides([8, 16, 32])
    }
}

impl Strides {
    pub fn of(&self, stage: Stage) -> usize {
        self.0[stage.index()]
    }

    pub fn max(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(1)
    }
}

/// Image extent in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageSize {
    pub width: usize,
    pub height: usize,
}

/// RGB crop from one camera, planes in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    pub height: usize,
    pub width: usize,
    pub planes: [Vec<f64>; 3],
    pub camera: CameraId,
}

impl ImagePatch {
    pub fn filled(height: usize, width: usize, rgb: [f64; 3], camera: CameraId) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            planes: [vec![rgb[0]; n], vec![rgb[1]; n], vec![rgb[2]; n]],
            camera,
        }
    }

    #[inline]
    pub fn pixel(&self, plane: usize, y: usize, x: usize) -> f64 {
        self.planes[plane][y * self.width + x]
    }
}

/// A stage-n feature grid flattened to tokens (row-major: y outer, x inner).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub stage: Stage,
    pub height: usize,
    pub width: usize,
    pub tokens: Matrix,
    pub camera: CameraId,
    pub kind: RegionKind,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.tokens.cols()
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> &[f64] {
        self.tokens.row(y * self.width + x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneMode {
    /// Fixed seeded affine lift of pooled RGB to `C` channels.
    Seeded,
    /// Channel `k` carries pooled plane `k mod 3` unchanged.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    channels: usize,
    strides: Strides,
    mode: BackboneMode,
    lifts: Vec<AffineWeights>,
}

impl FeaturePyramid {
    pub fn new(channels: usize, strides: Strides, mode: BackboneMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lifts = Stage::ALL
            .iter()
            .map(|_| AffineWeights::seeded(3, channels, &mut rng))
            .collect();
        Self {
            channels,
            strides,
            mode,
            lifts,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn strides(&self) -> Strides {
        self.strides
    }

    pub fn mode(&self) -> BackboneMode {
        self.mode
    }

    pub fn extract_stage_features(
        &self,
        patch: &ImagePatch,
        stage: Stage,
        kind: RegionKind,
    ) -> Result<FeatureMap> {
        let stride = self.strides.of(stage);
        if patch.height == 0
            || patch.width == 0
            || patch.height % stride != 0
            || patch.width % stride != 0
        {
            return Err(Error::StrideMismatch {
                stage: stage.number(),
                stride,
                height: patch.height,
                width: patch.width,
            });
        }
        let (gh, gw) = (patch.height / stride, patch.width / stride);
        let pooled = average_pool(patch, stride);
        let tokens = match self.mode {
            BackboneMode::Seeded => linear_project(&pooled, &self.lifts[stage.index()])?,
            BackboneMode::Oracle => {
                Matrix::from_fn(gh * gw, self.channels, |i, c| pooled.get(i, c % 3))
            }
        };
        Ok(FeatureMap {
            stage,
            height: gh,
            width: gw,
            tokens,
            camera: patch.camera,
            kind,
        })
    }
}

/// Mean of each `stride × stride` cell, one column per color plane.
fn average_pool(patch: &ImagePatch, stride: usize) -> Matrix {
    let (gh, gw) = (patch.height / stride, patch.width / stride);
    let norm = 1.0 / (stride * stride) as f64;
    let mut out = Matrix::zeros(gh * gw, 3);
    for gy in 0..gh {
        for gx in 0..gw {
            for p in 0..3 {
                let mut s = 0.0;
                for y in gy * stride..(gy + 1) * stride {
                    let row = &patch.planes[p][y * patch.width..(y + 1) * patch.width];
                    s += row[gx * stride..(gx + 1) * stride].iter().sum::<f64>();
                }
                out.set(gy * gw + gx, p, s * norm);
            }
        }
    }
    out
}
