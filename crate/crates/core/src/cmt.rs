//! Cross-camera mutual templates.
//!
//! The template of camera `j` is rebuilt every frame from the synchronized
//! search features of its coupled camera `i` through an anchored
//! expansion-squeeze cross-attention:
//!
//! ```text
//! A = Proj(LN(z))   V = Proj(LN(z))   Q = Proj(LN(x_i))   K = Proj(LN(x_i))
//! M_E = softmax(K·Aᵀ/√C)            (H_x W_x) × (H_z W_z)
//! M_S = softmax(A·Qᵀ/√C)            (H_z W_z) × (H_x W_x)
//! ω_j = Linear(M_S·(M_E·V)) + z
//! ```
//!
//! `V` is expanded onto the search grid by `M_E` and squeezed back onto the
//! template grid by `M_S`, so `ω_j` always has the template's spatial size.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{layer_norm, linear_project, matmul, matmul_transb, softmax_rows, AffineWeights, LayerNorm, Matrix};
use crate::pyramid::{CameraId, FeatureMap, RegionKind};

#[derive(Debug, Clone, PartialEq)]
pub struct CmtWeights {
    pub ln_template: LayerNorm,
    pub ln_search: LayerNorm,
    pub query: AffineWeights,
    pub key: AffineWeights,
    pub value: AffineWeights,
    pub anchor: AffineWeights,
    pub output: AffineWeights,
}

impl CmtWeights {
    pub fn seeded<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self {
            ln_template: LayerNorm::new(channels),
            ln_search: LayerNorm::new(channels),
            query: AffineWeights::seeded(channels, channels, rng),
            key: AffineWeights::seeded(channels, channels, rng),
            value: AffineWeights::seeded(channels, channels, rng),
            anchor: AffineWeights::seeded(channels, channels, rng),
            output: AffineWeights::seeded(channels, channels, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.output.out_dim()
    }
}

/// Template for `target` camera, built from the coupled camera's search map.
#[derive(Debug, Clone, PartialEq)]
pub struct MutualTemplate {
    pub map: FeatureMap,
    pub target: CameraId,
}

/// Mutual template plus the two attention maps that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CmtOutput {
    pub template: MutualTemplate,
    pub expansion: Matrix,
    pub squeeze: Matrix,
}

pub fn anchored_expansion_squeeze(
    z_feat: &FeatureMap,
    x_feat: &FeatureMap,
    w: &CmtWeights,
) -> Result<CmtOutput> {
    if z_feat.stage != x_feat.stage {
        return Err(Error::StageMismatch {
            template: z_feat.stage.number(),
            search: x_feat.stage.number(),
        });
    }
    let c = w.channels();
    for f in [z_feat, x_feat] {
        if f.channels() != c {
            return Err(Error::ChannelMismatch {
                expected: c,
                got: f.channels(),
            });
        }
    }
    let scale = 1.0 / (c as f64).sqrt();

    let zn = layer_norm(&z_feat.tokens, &w.ln_template)?;
    let xn = layer_norm(&x_feat.tokens, &w.ln_search)?;
    let q = linear_project(&xn, &w.query)?;
    let k = linear_project(&xn, &w.key)?;
    let v = linear_project(&zn, &w.value)?;
    let a = linear_project(&zn, &w.anchor)?;

    let expansion = softmax_rows(&matmul_transb(&k, &a)?, scale);
    let squeeze = softmax_rows(&matmul_transb(&a, &q)?, scale);
    let expanded = matmul(&expansion, &v)?;
    let squeezed = matmul(&squeeze, &expanded)?;
    let tokens = linear_project(&squeezed, &w.output)?.add(&z_feat.tokens)?;

    let target = x_feat.camera.other();
    Ok(CmtOutput {
        template: MutualTemplate {
            map: FeatureMap {
                stage: z_feat.stage,
                height: z_feat.height,
                width: z_feat.width,
                tokens,
                camera: target,
                kind: RegionKind::Template,
            },
            target,
        },
        expansion,
        squeeze,
    })
}

/// `(ω_1, ω_2)`: camera 1's template aggregates camera 2's search map and
/// vice versa. Both directions share `w`.
pub fn generate_mutual_templates(
    z_feat: &FeatureMap,
    x1_feat: &FeatureMap,
    x2_feat: &FeatureMap,
    w: &CmtWeights,
) -> Result<(MutualTemplate, MutualTemplate)> {
    let (for_one, for_two) = rayon::join(
        || anchored_expansion_squeeze(z_feat, x2_feat, w),
        || anchored_expansion_squeeze(z_feat, x1_feat, w),
    );
    let mut one = for_one?.template;
    let mut two = for_two?.template;
    one.target = CameraId::One;
    one.map.camera = CameraId::One;
    two.target = CameraId::Two;
    two.map.camera = CameraId::Two;
    Ok((one, two))
}
