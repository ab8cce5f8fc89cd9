//! Sequential overlapping patch embedding.
//!
//! A per-channel affine wraps a stack of stride-2 3x3 conv + norm stages
//! (GELU between stages); the final map is flattened row-major into patch
//! tokens. Overlap between the 3x3 windows means neighboring patches share
//! pixels, unlike a non-overlapping linear patch projection.

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::nn::{
    affine, conv2d, init_affine, init_conv, init_norm, norm2d, AffineNames, ConvNames, Forward,
    NormKind, NormNames,
};
use crate::params::ParamStore;
use crate::tape::VarId;
use crate::tensor::Element;

pub const IMAGE_CHANNELS: usize = 3;
pub const SUPPORTED_PATCH_SIZES: [usize; 3] = [2, 4, 16];

#[derive(Debug, Clone)]
pub struct SopeNames {
    pub pre_affine: AffineNames,
    pub stages: Vec<(ConvNames, NormNames)>,
    pub post_affine: AffineNames,
}

/// Channel widths per stage for a supported patch size:
/// 16 -> [3, D/8, D/4, D/2, D], 4 -> [3, D/2, D], 2 -> [3, D].
pub fn stage_channels(patch_size: usize, embed_dim: usize) -> Result<Vec<usize>> {
    let divisors: &[usize] = match patch_size {
        16 => &[8, 4, 2, 1],
        4 => &[2, 1],
        2 => &[1],
        other => {
            return Err(Error::Config(format!(
                "patch size {other} unsupported; expected one of {SUPPORTED_PATCH_SIZES:?}"
            )))
        }
    };
    for &d in divisors {
        if !embed_dim.is_multiple_of(d) {
            return Err(Error::Config(format!(
                "embed_dim {embed_dim} must be divisible by {d} for patch size {patch_size}"
            )));
        }
    }
    let mut widths = vec![IMAGE_CHANNELS];
    widths.extend(divisors.iter().map(|&d| embed_dim / d));
    Ok(widths)
}

/// True when a trailing GELU follows the stage (between stages always; after
/// the last stage only in the single-stage patch-2 pipeline).
fn gelu_after(stage: usize, num_stages: usize, patch_size: usize) -> bool {
    stage + 1 < num_stages || patch_size == 2
}

/// Canonical parameter names of one SOPE module.
pub fn names(prefix: &str, patch_size: usize) -> Result<SopeNames> {
    let num_stages = match patch_size {
        16 => 4,
        4 => 2,
        2 => 1,
        other => {
            return Err(Error::Config(format!(
                "patch size {other} unsupported; expected one of {SUPPORTED_PATCH_SIZES:?}"
            )))
        }
    };
    Ok(SopeNames {
        pre_affine: AffineNames::new(&format!("{prefix}.pre_affine")),
        stages: (0..num_stages)
            .map(|i| {
                (
                    ConvNames::new(&format!("{prefix}.stages.{i}.conv")),
                    NormNames::new(&format!("{prefix}.stages.{i}.norm")),
                )
            })
            .collect(),
        post_affine: AffineNames::new(&format!("{prefix}.post_affine")),
    })
}

pub fn init<E: Element>(
    store: &mut ParamStore<E>,
    rng: &mut ChaCha12Rng,
    names: &SopeNames,
    patch_size: usize,
    embed_dim: usize,
    norm_kind: NormKind,
) -> Result<()> {
    let widths = stage_channels(patch_size, embed_dim)?;
    debug_assert_eq!(widths.len() - 1, names.stages.len());
    init_affine(store, &names.pre_affine, IMAGE_CHANNELS)?;
    for (pair, (conv, norm)) in widths.windows(2).zip(&names.stages) {
        init_conv(store, rng, conv, pair[1], pair[0], 3)?;
        init_norm(store, norm, pair[1], norm_kind)?;
    }
    init_affine(store, &names.post_affine, embed_dim)
}

/// images [B,3,H,W] -> patch tokens [B, N, D] with N = (H/P)(W/P), token
/// order row-major over the feature map.
pub fn forward<E: Element>(
    fw: &mut Forward<'_, E>,
    names: &SopeNames,
    images: VarId,
    patch_size: usize,
    norm_kind: NormKind,
) -> Result<VarId> {
    let shape = fw.tape.shape(images).to_vec();
    if shape.len() != 4 || shape[1] != IMAGE_CHANNELS {
        return Err(Error::Shape(format!(
            "expected images [B,3,H,W], got {shape:?}"
        )));
    }
    let (b, h, w) = (shape[0], shape[2], shape[3]);
    if !h.is_multiple_of(patch_size) || !w.is_multiple_of(patch_size) {
        return Err(Error::Shape(format!(
            "image {h}x{w} not divisible by patch size {patch_size}"
        )));
    }
    let mut x = affine(fw, &names.pre_affine, images)?;
    let k = names.stages.len();
    for (i, (conv, norm)) in names.stages.iter().enumerate() {
        x = conv2d(fw, conv, x, 2, 1, 1)?;
        x = norm2d(fw, norm, x, norm_kind)?;
        if gelu_after(i, k, patch_size) {
            x = fw.tape.gelu(x)?;
        }
    }
    x = affine(fw, &names.post_affine, x)?;
    let out = fw.tape.shape(x).to_vec();
    let (d, hp, wp) = (out[1], out[2], out[3]);
    debug_assert_eq!(hp, h / patch_size);
    debug_assert_eq!(wp, w / patch_size);
    let flat = fw.tape.reshape(x, &[b, d, hp * wp])?;
    fw.tape.permute(flat, &[0, 2, 1])
}

/// Parameter count of one SOPE module; used by the analytic cost model.
pub fn param_count(patch_size: usize, embed_dim: usize) -> Result<u64> {
    let widths = stage_channels(patch_size, embed_dim)?;
    let mut total = 2 * IMAGE_CHANNELS as u64; // pre-affine
    for pair in widths.windows(2) {
        let (cin, cout) = (pair[0] as u64, pair[1] as u64);
        total += cout * cin * 9 + cout; // conv weight + bias
        total += 2 * cout; // norm gamma + beta
    }
    total += 2 * embed_dim as u64; // post-affine
    Ok(total)
}
