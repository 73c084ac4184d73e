//! Frame-by-frame dual-camera tracking.
//!
//! Per frame and stage: pyramid features for both search crops, mutual
//! templates in both directions, then for each camera the self-attention
//! stack, motion token, integrator and score head. The three stage maps
//! are fused, decoded into a box per camera, and the two box centres are
//! triangulated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cmt::{anchored_expansion_squeeze, CmtWeights};
use crate::config::{TrackerConfig, TrackerMode};
use crate::error::{Error, Result};
use crate::metrics::{Sample, Trajectory3D};
use crate::mmh::{
    affine_head, fuse_stage_predictions_on, ncc_head, prediction_to_box, self_attention_stack,
    vision_motion_integrate, MmhWeights, PredictionMap, SearchWindow,
};
use crate::motion::{BoundingBox, MotionTokenizer};
use crate::numeric::Matrix;
use crate::pyramid::{CameraId, FeatureMap, FeaturePyramid, ImagePatch, RegionKind, Stage};
use crate::session::SyntheticSession;
use crate::stereo::{Pixel, Point3D, StereoRig, StereoWarning};

/// Centre-distance threshold for 2D precision, px.
pub const PRECISION_THRESHOLD_PX: f64 = 20.0;
/// IoU thresholds `0, 0.05, …, 1` for the success curve.
pub const SUCCESS_THRESHOLDS: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights {
    pub cmt: CmtWeights,
    pub mmh: MmhWeights,
    pub tokenizer: MotionTokenizer,
}

/// Everything the frame loop needs, derived from the config alone.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerWeights {
    pub pyramid: FeaturePyramid,
    /// Indexed by `Stage::index`; shared by both cameras.
    pub stages: Vec<StageWeights>,
}

impl TrackerWeights {
    pub fn new(cfg: &TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.weight_seed);
        let stages = Stage::ALL
            .iter()
            .map(|_| {
                let mut cmt = CmtWeights::seeded(cfg.channels, &mut rng);
                let mut mmh = MmhWeights::seeded(cfg.channels, cfg.blocks, cfg.heads, &mut rng);
                let tokenizer =
                    MotionTokenizer::seeded(cfg.seq_len, cfg.embed_dim, cfg.state_size, cfg.channels, &mut rng);
                if cfg.mode == TrackerMode::Oracle {
                    cmt.output.zero();
                    mmh.zero_output_projections();
                }
                StageWeights { cmt, mmh, tokenizer }
            })
            .collect();
        Ok(Self {
            pyramid: FeaturePyramid::new(cfg.channels, cfg.strides, cfg.mode.backbone(), cfg.weight_seed),
            stages,
        })
    }
}

/// Shapes seen by one stage of one forward pass (camera 1 head).
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub stage: Stage,
    pub template_grid: (usize, usize),
    pub search_grid: (usize, usize),
    pub expansion: (usize, usize),
    pub squeeze: (usize, usize),
    pub mutual_template: (usize, usize),
    pub attended: (usize, usize),
    pub motion_token: (usize, usize),
    pub visual_attention: (usize, usize),
    pub motion_attention: (usize, usize),
    pub refined: (usize, usize),
    pub prediction: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub stages: Vec<StageTrace>,
    pub fused: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFrame {
    pub bbox: BoundingBox,
    pub truth: BoundingBox,
    pub score: f64,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame: u64,
    pub t: f64,
    pub cameras: [CameraFrame; 2],
    /// Present iff both cameras are confident and the disparity is positive.
    pub estimate: Option<Point3D>,
    pub truth: Point3D,
    pub error_mm: Option<f64>,
    pub warnings: Vec<StereoWarning>,
}

impl FrameRecord {
    pub fn low_confidence(&self) -> bool {
        self.cameras.iter().any(|c| c.low_confidence)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub count: usize,
    pub avg: f64,
    pub max: f64,
    /// Population standard deviation.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub frames: Vec<FrameRecord>,
    pub rig: StereoRig,
    pub fused_stride: usize,
}

impl TrackRecord {
    pub fn low_confidence_frames(&self) -> Vec<u64> {
        self.frames.iter().filter(|f| f.low_confidence()).map(|f| f.frame).collect()
    }

    pub fn error_summary(&self) -> Option<ErrorSummary> {
        let e: Vec<f64> = self.frames.iter().filter_map(|f| f.error_mm).collect();
        if e.is_empty() {
            return None;
        }
        let n = e.len() as f64;
        let avg = e.iter().sum::<f64>() / n;
        let var = e.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / n;
        Some(ErrorSummary {
            count: e.len(),
            avg,
            max: e.iter().cloned().fold(0.0, f64::max),
            sd: var.sqrt(),
        })
    }

    fn visible_pairs(&self) -> impl Iterator<Item = &CameraFrame> {
        self.frames.iter().flat_map(|f| f.cameras.iter()).filter(|c| !c.truth.missing)
    }

    /// Share of visible camera frames with centre error ≤ 20 px.
    pub fn precision_2d(&self) -> f64 {
        let (mut hit, mut n) = (0usize, 0usize);
        for c in self.visible_pairs() {
            n += 1;
            let d = ((c.bbox.cx - c.truth.cx).powi(2) + (c.bbox.cy - c.truth.cy).powi(2)).sqrt();
            hit += usize::from(d <= PRECISION_THRESHOLD_PX);
        }
        if n == 0 {
            0.0
        } else {
            hit as f64 / n as f64
        }
    }

    /// Area under the IoU success curve over 21 thresholds.
    pub fn success_2d(&self) -> f64 {
        let ious: Vec<f64> = self.visible_pairs().map(|c| c.bbox.iou(&c.truth)).collect();
        if ious.is_empty() {
            return 0.0;
        }
        let total: f64 = (0..SUCCESS_THRESHOLDS)
            .map(|k| {
                let th = k as f64 / (SUCCESS_THRESHOLDS - 1) as f64;
                ious.iter().filter(|&&v| v > th).count() as f64 / ious.len() as f64
            })
            .sum();
        total / SUCCESS_THRESHOLDS as f64
    }

    pub fn estimated_trajectory(&self) -> Result<Trajectory3D> {
        Trajectory3D::new(
            self.frames
                .iter()
                .filter_map(|f| f.estimate.map(|p| Sample { t: f.t, p }))
                .collect(),
        )
    }

    pub fn truth_trajectory(&self) -> Result<Trajectory3D> {
        Trajectory3D::new(self.frames.iter().map(|f| Sample { t: f.t, p: f.truth }).collect())
    }

    /// Mean 3D size of one fused-grid cell at the mean true depth.
    pub fn decode_cell_mm(&self) -> f64 {
        let z = self.frames.iter().map(|f| f.truth.z).sum::<f64>() / self.frames.len().max(1) as f64;
        decode_cell_mm(&self.rig, self.fused_stride as f64, z)
    }
}

/// 3D extent of a `cell_px` localization step at depth `z_mm`: two lateral
/// axes plus the depth change of a one-cell disparity step.
pub fn decode_cell_mm(rig: &StereoRig, cell_px: f64, z_mm: f64) -> f64 {
    let lateral = cell_px * rig.pixel_pitch_mm * z_mm / rig.focal_mm;
    let depth = z_mm * z_mm * rig.pixel_pitch_mm * cell_px / (rig.baseline_mm * rig.focal_mm);
    (2.0 * lateral * lateral + depth * depth).sqrt()
}

/// Whether the low-confidence frames are exactly the occluded frames,
/// allowing `slack` extra flagged frames on either side of each interval.
pub fn occlusion_flags_match(record: &TrackRecord, session: &SyntheticSession, slack: u64) -> bool {
    record.frames.iter().all(|f| {
        let occluded = session.is_occluded(f.frame);
        let near = session
            .occlusions
            .iter()
            .any(|r| f.frame + slack >= *r.start() && f.frame <= r.end() + slack);
        if occluded {
            f.low_confidence()
        } else {
            !f.low_confidence() || near && slack > 0
        }
    })
}

struct CameraState {
    window: SearchWindow,
    history: Vec<BoundingBox>,
}

pub struct Tracker<'a> {
    cfg: TrackerConfig,
    weights: TrackerWeights,
    session: &'a SyntheticSession,
    template: Vec<FeatureMap>,
    box_size: [f64; 2],
    cameras: [CameraState; 2],
}

struct StageResult {
    maps: [PredictionMap; 2],
    trace: StageTrace,
}

impl<'a> Tracker<'a> {
    /// Initializes from the ground-truth box of frame 0; the template is
    /// cut from camera 1.
    pub fn new(cfg: &TrackerConfig, session: &'a SyntheticSession) -> Result<Self> {
        let weights = TrackerWeights::new(cfg)?;
        if session.frames() == 0 {
            return Err(Error::Empty("session"));
        }
        let init = [session.truth_box(0, CameraId::One), session.truth_box(0, CameraId::Two)];
        if init.iter().any(|b| b.missing) {
            return Err(Error::InvalidInput("target must be visible in frame 0".into()));
        }
        let t = cfg.template_size as f64 / 2.0;
        let patch = session.render(0, CameraId::One, init[0].cx - t, init[0].cy - t, cfg.template_size);
        let template = Stage::ALL
            .iter()
            .map(|&s| weights.pyramid.extract_stage_features(&patch, s, RegionKind::Template))
            .collect::<Result<_>>()?;
        let half = cfg.search_size as f64 / 2.0;
        let cameras = init.map(|b| CameraState {
            window: SearchWindow {
                x0: b.cx - half,
                y0: b.cy - half,
                size: cfg.search_size,
            },
            history: vec![b],
        });
        Ok(Self {
            cfg: cfg.clone(),
            weights,
            session,
            template,
            box_size: [init[0].w, init[0].h],
            cameras,
        })
    }

    fn crop(&self, frame: u64, cam: CameraId) -> ImagePatch {
        let w = self.cameras[cam.index()].window;
        self.session.render(frame, cam, w.x0, w.y0, w.size)
    }

    fn run_stage(&self, stage: Stage, crops: &[ImagePatch; 2]) -> Result<StageResult> {
        let sw = &self.weights.stages[stage.index()];
        let stride = self.cfg.strides.of(stage);
        let z = &self.template[stage.index()];
        let x = [
            self.weights.pyramid.extract_stage_features(&crops[0], stage, RegionKind::Search)?,
            self.weights.pyramid.extract_stage_features(&crops[1], stage, RegionKind::Search)?,
        ];
        // camera i's template attends over the other camera's search map
        let cmt = [
            anchored_expansion_squeeze(z, &x[1], &sw.cmt)?,
            anchored_expansion_squeeze(z, &x[0], &sw.cmt)?,
        ];
        let head = |i: usize| -> Result<(PredictionMap, [(usize, usize); 5])> {
            let omega = &cmt[i].template.map;
            let concat = Matrix::vstack(&omega.tokens, &x[i].tokens)?;
            let attended = self_attention_stack(&concat, &sw.mmh)?;
            let token = sw.tokenizer.tokenize_motion(&self.cameras[i].history, self.session.rig.image)?;
            let out = vision_motion_integrate(&attended, &x[i], &token, &sw.mmh, self.cfg.seq_len)?;
            let map = match self.cfg.mode {
                TrackerMode::Oracle => ncc_head(omega, &out.features, stride, self.box_size)?,
                TrackerMode::Seeded => affine_head(&out.features, &sw.mmh, stride)?,
            };
            let shapes = [
                attended.shape(),
                token.0.shape(),
                out.visual_attention.shape(),
                out.motion_attention.shape(),
                out.features.tokens.shape(),
            ];
            Ok((map, shapes))
        };
        let (one, two) = rayon::join(|| head(0), || head(1));
        let ((m1, s), (m2, _)) = (one?, two?);
        let trace = StageTrace {
            stage,
            template_grid: (z.height, z.width),
            search_grid: (x[0].height, x[0].width),
            expansion: cmt[0].expansion.shape(),
            squeeze: cmt[0].squeeze.shape(),
            mutual_template: cmt[0].template.map.tokens.shape(),
            attended: s[0],
            motion_token: s[1],
            visual_attention: s[2],
            motion_attention: s[3],
            refined: s[4],
            prediction: (m1.height, m1.width),
        };
        Ok(StageResult { maps: [m1, m2], trace })
    }

    fn forward(&self, frame: u64) -> Result<([PredictionMap; 2], ForwardTrace)> {
        let crops = [self.crop(frame, CameraId::One), self.crop(frame, CameraId::Two)];
        let mut per_cam: [Vec<PredictionMap>; 2] = [Vec::new(), Vec::new()];
        let mut traces = Vec::with_capacity(3);
        for stage in Stage::ALL {
            let r = self.run_stage(stage, &crops)?;
            let [a, b] = r.maps;
            per_cam[0].push(a);
            per_cam[1].push(b);
            traces.push(r.trace);
        }
        let fused = [
            fuse_stage_predictions_on(&per_cam[0], self.cfg.fusion_grid)?,
            fuse_stage_predictions_on(&per_cam[1], self.cfg.fusion_grid)?,
        ];
        let trace = ForwardTrace {
            stages: traces,
            fused: (fused[0].height, fused[0].width),
        };
        Ok((fused, trace))
    }

    /// One forward pass on `frame` without updating the tracker state.
    pub fn trace(&self, frame: u64) -> Result<ForwardTrace> {
        Ok(self.forward(frame)?.1)
    }

    pub fn step(&mut self, frame: u64) -> Result<FrameRecord> {
        let (fused, _) = self.forward(frame)?;
        let mut cams = Vec::with_capacity(2);
        for cam in CameraId::BOTH {
            let state = &self.cameras[cam.index()];
            let d = prediction_to_box(&fused[cam.index()], state.window, frame, cam)?;
            cams.push(CameraFrame {
                bbox: d.bbox,
                truth: self.session.truth_box(frame, cam),
                score: d.score,
                low_confidence: !(d.score >= self.cfg.confidence_threshold),
            });
        }
        let cameras = [cams[0], cams[1]];

        let mut estimate = None;
        let mut warnings = Vec::new();
        if cameras.iter().all(|c| !c.low_confidence) {
            let px = |c: &CameraFrame| Pixel {
                u: c.bbox.cx,
                v: c.bbox.cy,
            };
            if let Ok(tri) = self.session.rig.triangulate_point(px(&cameras[0]), px(&cameras[1])) {
                estimate = Some(tri.point);
                warnings = tri.warnings;
            }
        }

        // Frame 0's history entry is the initialization box.
        for cam in CameraId::BOTH {
            let c = &cameras[cam.index()];
            let state = &mut self.cameras[cam.index()];
            if c.low_confidence {
                if frame > 0 {
                    state.history.push(BoundingBox::missing(frame, cam));
                }
                continue;
            }
            if frame > 0 {
                state.history.push(c.bbox);
            }
            let half = state.window.size as f64 / 2.0;
            state.window.x0 = c.bbox.cx - half;
            state.window.y0 = c.bbox.cy - half;
        }

        let truth = self.session.truth_point(frame);
        Ok(FrameRecord {
            frame,
            t: self.session.truth.samples()[frame as usize].t,
            cameras,
            error_mm: estimate.map(|e| e.distance(&truth)),
            estimate,
            truth,
            warnings,
        })
    }
}

pub fn run_tracking_session(session: &SyntheticSession, cfg: &TrackerConfig) -> Result<TrackRecord> {
    let mut tracker = Tracker::new(cfg, session)?;
    let frames = (0..session.frames() as u64)
        .map(|f| tracker.step(f))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrackRecord {
        frames,
        rig: session.rig,
        fused_stride: cfg.strides.of(cfg.fusion_grid),
    })
}
