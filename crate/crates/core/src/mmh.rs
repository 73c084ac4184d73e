//! Motion-guided prediction head.
//!
//! Per stage: `[ω ‖ φ(x)]` runs through `K` pre-norm multi-head
//! self-attention blocks, then a multi-KV cross-attention mixes the search
//! tokens with both the attended visual tokens and the motion token:
//!
//! ```text
//! M_v = softmax(Q_v·K_vᵀ/√C)     M_m = softmax(Q_v·K_mᵀ/√C)
//! x̂  = Linear(M_v·V_v + M_m·V_m) + φ(x)
//! ```
//!
//! A score/size head turns `x̂` into a prediction map; the three stage maps
//! are averaged on the finest grid and decoded into a box.

use rand::Rng;

use crate::error::{Error, Result};
use crate::motion::{BoundingBox, MotionToken};
use crate::numeric::{
    layer_norm, linear_project, matmul, matmul_transb, softmax_rows, softplus, AffineWeights, LayerNorm, Matrix,
};
use crate::pyramid::{CameraId, FeatureMap, RegionKind, Stage};

#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionBlock {
    pub norm: LayerNorm,
    pub query: AffineWeights,
    pub key: AffineWeights,
    pub value: AffineWeights,
    pub output: AffineWeights,
    pub heads: usize,
}

impl SelfAttentionBlock {
    pub fn seeded<R: Rng + ?Sized>(channels: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            norm: LayerNorm::new(channels),
            query: AffineWeights::seeded(channels, channels, rng),
            key: AffineWeights::seeded(channels, channels, rng),
            value: AffineWeights::seeded(channels, channels, rng),
            output: AffineWeights::seeded(channels, channels, rng),
            heads,
        }
    }

    pub fn channels(&self) -> usize {
        self.output.out_dim()
    }

    /// `x + Linear(MHA(LN(x)))`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let c = self.channels();
        if x.cols() != c {
            return Err(Error::ChannelMismatch {
                expected: c,
                got: x.cols(),
            });
        }
        let xn = layer_norm(x, &self.norm)?;
        let q = linear_project(&xn, &self.query)?;
        let k = linear_project(&xn, &self.key)?;
        let v = linear_project(&xn, &self.value)?;
        let dh = c / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut mixed = Matrix::zeros(x.rows(), c);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let attn = softmax_rows(&matmul_transb(&q.slice_cols(lo, hi), &k.slice_cols(lo, hi))?, scale);
            mixed.set_cols(lo, &matmul(&attn, &v.slice_cols(lo, hi))?);
        }
        linear_project(&mixed, &self.output)?.add(x)
    }
}

/// Vision-motion integrator projections.
#[derive(Debug, Clone, PartialEq)]
pub struct Integrator {
    pub norm_search: LayerNorm,
    pub norm_concat: LayerNorm,
    pub norm_motion: LayerNorm,
    pub query: AffineWeights,
    pub key_visual: AffineWeights,
    pub value_visual: AffineWeights,
    pub key_motion: AffineWeights,
    pub value_motion: AffineWeights,
    pub output: AffineWeights,
}

impl Integrator {
    pub fn seeded<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let mut proj = || AffineWeights::seeded(channels, channels, rng);
        Self {
            norm_search: LayerNorm::new(channels),
            norm_concat: LayerNorm::new(channels),
            norm_motion: LayerNorm::new(channels),
            query: proj(),
            key_visual: proj(),
            value_visual: proj(),
            key_motion: proj(),
            value_motion: proj(),
            output: proj(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmhWeights {
    pub blocks: Vec<SelfAttentionBlock>,
    pub integrator: Integrator,
    pub score: AffineWeights,
    pub size: AffineWeights,
}

impl MmhWeights {
    pub fn seeded<R: Rng + ?Sized>(channels: usize, blocks: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            blocks: (0..blocks)
                .map(|_| SelfAttentionBlock::seeded(channels, heads, rng))
                .collect(),
            integrator: Integrator::seeded(channels, rng),
            score: AffineWeights::seeded(channels, 1, rng),
            size: AffineWeights::seeded(channels, 2, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.integrator.output.out_dim()
    }

    /// Zeroes every residual-branch output projection (blocks and
    /// integrator), turning the head into the identity on `φ(x)`.
    pub fn zero_output_projections(&mut self) {
        for b in &mut self.blocks {
            b.output.zero();
        }
        self.integrator.output.zero();
    }
}

pub fn self_attention_stack(concat_map: &Matrix, w: &MmhWeights) -> Result<Matrix> {
    if concat_map.cols() != w.channels() {
        return Err(Error::ChannelMismatch {
            expected: w.channels(),
            got: concat_map.cols(),
        });
    }
    let mut x = concat_map.clone();
    for block in &w.blocks {
        x = block.forward(&x)?;
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorOutput {
    pub features: FeatureMap,
    pub visual_attention: Matrix,
    pub motion_attention: Matrix,
}

/// Multi-KV cross-attention. `Q_v` comes from the search slice (the last
/// `H_x W_x` rows) of the attended map.
pub fn vision_motion_integrate(
    attended: &Matrix,
    search_feat: &FeatureMap,
    token: &MotionToken,
    w: &MmhWeights,
    seq_len: usize,
) -> Result<IntegratorOutput> {
    let c = w.channels();
    if token.rows() != 2 * seq_len {
        return Err(Error::TokenLength {
            expected: 2 * seq_len,
            got: token.rows(),
        });
    }
    for cols in [attended.cols(), search_feat.channels(), token.0.cols()] {
        if cols != c {
            return Err(Error::ChannelMismatch { expected: c, got: cols });
        }
    }
    let nx = search_feat.len();
    if attended.rows() < nx {
        return Err(Error::ShapeMismatch {
            op: "vision_motion_integrate",
            left: attended.shape(),
            right: search_feat.tokens.shape(),
        });
    }
    let g = &w.integrator;
    let scale = 1.0 / (c as f64).sqrt();
    let search_slice = attended.slice_rows(attended.rows() - nx, attended.rows());
    let q = linear_project(&layer_norm(&search_slice, &g.norm_search)?, &g.query)?;
    let concat_n = layer_norm(attended, &g.norm_concat)?;
    let kv = linear_project(&concat_n, &g.key_visual)?;
    let vv = linear_project(&concat_n, &g.value_visual)?;
    let motion_n = layer_norm(&token.0, &g.norm_motion)?;
    let km = linear_project(&motion_n, &g.key_motion)?;
    let vm = linear_project(&motion_n, &g.value_motion)?;

    let visual_attention = softmax_rows(&matmul_transb(&q, &kv)?, scale);
    let motion_attention = softmax_rows(&matmul_transb(&q, &km)?, scale);
    let mixed = matmul(&visual_attention, &vv)?.add(&matmul(&motion_attention, &vm)?)?;
    let tokens = linear_project(&mixed, &g.output)?.add(&search_feat.tokens)?;
    Ok(IntegratorOutput {
        features: FeatureMap {
            tokens,
            kind: RegionKind::Search,
            ..search_feat.clone()
        },
        visual_attention,
        motion_attention,
    })
}

/// Score grid plus `(w, h)` size grid on one stage's search lattice.
///
/// Cell `(i, j)` is anchored at window pixel `(j·stride, i·stride)`, so
/// the middle cell of an even grid sits at the window center.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub stage: Stage,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub score: Vec<f64>,
    pub size: Vec<[f64; 2]>,
}

impl PredictionMap {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Learned-style 1×1 heads: score `x̂·w_s + b_s`, size `softplus(x̂·W + b)·stride`.
pub fn affine_head(x_hat: &FeatureMap, w: &MmhWeights, stride: usize) -> Result<PredictionMap> {
    let score = linear_project(&x_hat.tokens, &w.score)?.into_data();
    let raw = linear_project(&x_hat.tokens, &w.size)?;
    let size = (0..raw.rows())
        .map(|i| {
            [
                softplus(raw.get(i, 0)) * stride as f64,
                softplus(raw.get(i, 1)) * stride as f64,
            ]
        })
        .collect();
    Ok(PredictionMap {
        stage: x_hat.stage,
        height: x_hat.height,
        width: x_hat.width,
        stride,
        score,
        size,
    })
}

/// Score for anchors whose template footprint leaves the search grid.
pub const OFF_GRID_SCORE: f64 = -1.0;

/// Normalized cross-correlation of `template` against every anchor of
/// `search`. Both are centred on the search map's per-channel mean (its
/// background level) before taking the cosine, so a footprint with no
/// contrast scores 0 and a centred template keeps its structure even on
/// a 2×2 grid. The size grid is filled with `box_size`.
pub fn ncc_head(
    template: &FeatureMap,
    search: &FeatureMap,
    stride: usize,
    box_size: [f64; 2],
) -> Result<PredictionMap> {
    if template.channels() != search.channels() {
        return Err(Error::ChannelMismatch {
            expected: template.channels(),
            got: search.channels(),
        });
    }
    let (th, tw) = (template.height, template.width);
    if th % 2 != 0 || tw % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "correlation template grid must be even-sized, got {th}x{tw}"
        )));
    }
    let c = template.channels();
    let (sh, sw) = (search.height, search.width);
    let mut mean = vec![0.0; c];
    for row in search.tokens.data().chunks(c.max(1)) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= (sh * sw).max(1) as f64);
    let t_centered: Vec<f64> = template
        .tokens
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| v - mean[k % c])
        .collect();
    let t_norm = t_centered.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut score = vec![OFF_GRID_SCORE; sh * sw];
    for i in th / 2..=sh.saturating_sub(th / 2) {
        for j in tw / 2..=sw.saturating_sub(tw / 2) {
            let (p, q) = (i - th / 2, j - tw / 2);
            if p + th > sh || q + tw > sw || i >= sh || j >= sw {
                continue;
            }
            let (mut cross, mut s_sq) = (0.0, 0.0);
            for y in 0..th {
                for x in 0..tw {
                    let srow = search.at(p + y, q + x);
                    let trow = &t_centered[(y * tw + x) * c..(y * tw + x + 1) * c];
                    for ((sv, tv), m) in srow.iter().zip(trow).zip(&mean) {
                        let sc = sv - m;
                        cross += sc * tv;
                        s_sq += sc * sc;
                    }
                }
            }
            let denom = t_norm * s_sq.sqrt();
            score[i * sw + j] = if denom > 1e-12 { cross / denom } else { 0.0 };
        }
    }
    Ok(PredictionMap {
        stage: search.stage,
        height: sh,
        width: sw,
        stride,
        score,
        size: vec![box_size; sh * sw],
    })
}

/// Averages the three stage maps on the finest grid; coarser maps are
/// sampled at the nearest anchor.
/// Averages the three stage maps on the finest grid.
pub fn fuse_stage_predictions(maps: &[PredictionMap]) -> Result<PredictionMap> {
    let finest = maps.iter().min_by_key(|m| (m.stride, m.stage)).map_or(Stage::S3, |m| m.stage);
    fuse_stage_predictions_on(maps, finest)
}

/// Averages the three stage maps on the lattice of `grid`, sampling each
/// map at its nearest anchor.
pub fn fuse_stage_predictions_on(maps: &[PredictionMap], grid: Stage) -> Result<PredictionMap> {
    let mut sorted: Vec<&PredictionMap> = maps.iter().collect();
    sorted.sort_by_key(|m| m.stage);
    let stages: Vec<Stage> = sorted.iter().map(|m| m.stage).collect();
    if stages != Stage::ALL {
        return Err(Error::InvalidInput(format!(
            "fusion needs one map per stage 3, 4, 5; got stages {:?}",
            stages.iter().map(|s| s.number()).collect::<Vec<_>>()
        )));
    }
    let fine = sorted[grid.index()];
    let (h, w) = (fine.height, fine.width);
    let mut score = vec![0.0; h * w];
    let mut size = vec![[0.0; 2]; h * w];
    let n = sorted.len() as f64;
    for i in 0..h {
        for j in 0..w {
            let (mut s, mut sz) = (0.0, [0.0, 0.0]);
            for m in &sorted {
                let ci = nearest_anchor(i, fine.stride, m.stride, m.height);
                let cj = nearest_anchor(j, fine.stride, m.stride, m.width);
                let k = ci * m.width + cj;
                s += m.score[k];
                sz[0] += m.size[k][0];
                sz[1] += m.size[k][1];
            }
            score[i * w + j] = s / n;
            size[i * w + j] = [sz[0] / n, sz[1] / n];
        }
    }
    Ok(PredictionMap {
        stage: fine.stage,
        height: h,
        width: w,
        stride: fine.stride,
        score,
        size,
    })
}

fn nearest_anchor(i: usize, fine_stride: usize, coarse_stride: usize, extent: usize) -> usize {
    let k = (2 * i * fine_stride + coarse_stride) / (2 * coarse_stride);
    k.min(extent.saturating_sub(1))
}

/// Top-left corner of a search crop in image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchWindow {
    pub x0: f64,
    pub y0: f64,
    pub size: usize,
}

impl SearchWindow {
    pub fn center(&self) -> (f64, f64) {
        let half = self.size as f64 / 2.0;
        (self.x0 + half, self.y0 + half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded {
    pub bbox: BoundingBox,
    pub score: f64,
    pub cell: usize,
}

/// Argmax cell (ties → smallest flattened index) mapped back to image pixels.
pub fn prediction_to_box(
    fused: &PredictionMap,
    window: SearchWindow,
    frame: u64,
    camera: CameraId,
) -> Result<Decoded> {
    if fused.is_empty() {
        return Err(Error::Empty("prediction map"));
    }
    let mut best: Option<(usize, f64)> = None;
    for (k, &s) in fused.score.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    let (cell, score) = best.ok_or(Error::NoFiniteScore)?;
    let (i, j) = (cell / fused.width, cell % fused.width);
    let [w, h] = fused.size[cell];
    Ok(Decoded {
        bbox: BoundingBox::new(
            window.x0 + (j * fused.stride) as f64,
            window.y0 + (i * fused.stride) as f64,
            w,
            h,
            frame,
            camera,
        ),
        score,
        cell,
    })
}
