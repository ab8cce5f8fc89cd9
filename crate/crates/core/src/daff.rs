//! Dynamic aggregation feed forward.
//!
//! Patch tokens are folded back onto their grid and pass a 1x1 conv ->
//! depth-wise 3x3 (with an inner shortcut) -> 1x1 conv pipeline, each conv
//! followed by a norm. The class token skips the pipeline entirely: a
//! squeeze-excitation weight computed from the conv output re-calibrates it
//! channel-wise. No sigmoid closes the excitation.

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::nn::{
    conv2d, init_conv, init_linear, init_norm, linear, norm2d, ConvNames, Forward, LinearNames,
    NormKind, NormNames,
};
use crate::params::ParamStore;
use crate::tape::VarId;
use crate::tensor::Element;

#[derive(Debug, Clone)]
pub struct DaffNames {
    pub conv1: ConvNames,
    pub norm1: NormNames,
    pub dwconv: ConvNames,
    pub norm2: NormNames,
    pub conv3: ConvNames,
    pub norm3: NormNames,
    pub compress: LinearNames,
    pub excitation: LinearNames,
}

#[derive(Debug, Clone, Copy)]
pub struct DaffOpts {
    pub norm_kind: NormKind,
    /// Apply the excitation weight to every token, not just the class token.
    pub agg_on_all_tokens: bool,
    /// Drop the shortcut around the depth-wise conv.
    pub disable_dw_shortcut: bool,
}

/// Canonical parameter names of one DAFF block.
pub fn names(prefix: &str) -> DaffNames {
    DaffNames {
        conv1: ConvNames::new(&format!("{prefix}.conv1")),
        norm1: NormNames::new(&format!("{prefix}.norm1")),
        dwconv: ConvNames::new(&format!("{prefix}.dwconv")),
        norm2: NormNames::new(&format!("{prefix}.norm2")),
        conv3: ConvNames::new(&format!("{prefix}.conv3")),
        norm3: NormNames::new(&format!("{prefix}.norm3")),
        compress: LinearNames::new(&format!("{prefix}.compress")),
        excitation: LinearNames::new(&format!("{prefix}.excitation")),
    }
}

pub fn init<E: Element>(
    store: &mut ParamStore<E>,
    rng: &mut ChaCha12Rng,
    names: &DaffNames,
    dim: usize,
    hidden: usize,
    se_ratio: usize,
    norm_kind: NormKind,
) -> Result<()> {
    if se_ratio == 0 || !dim.is_multiple_of(se_ratio) {
        return Err(Error::Config(format!(
            "se_ratio {se_ratio} must divide embed_dim {dim}"
        )));
    }
    init_conv(store, rng, &names.conv1, hidden, dim, 1)?;
    init_norm(store, &names.norm1, hidden, norm_kind)?;
    init_conv(store, rng, &names.dwconv, hidden, 1, 3)?;
    init_norm(store, &names.norm2, hidden, norm_kind)?;
    init_conv(store, rng, &names.conv3, dim, hidden, 1)?;
    init_norm(store, &names.norm3, dim, norm_kind)?;
    init_linear(store, rng, &names.compress, dim, dim / se_ratio)?;
    init_linear(store, rng, &names.excitation, dim / se_ratio, dim)
}

/// Split x [B,N+1,D] into (class [B,1,D], grid [B,D,side,side]); the token
/// layout is class-token-first with patch tokens row-major on the grid.
fn split_tokens<E: Element>(
    fw: &mut Forward<'_, E>,
    x: VarId,
) -> Result<(VarId, VarId, usize, usize)> {
    let shape = fw.tape.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "expected tokens [B,T,D], got {shape:?}"
        )));
    }
    let (b, t, d) = (shape[0], shape[1], shape[2]);
    if t < 2 {
        return Err(Error::Contract(format!(
            "token sequence of length {t} is missing patch tokens or the class token"
        )));
    }
    let n = t - 1;
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::Shape(format!(
            "{n} patch tokens do not form a square grid"
        )));
    }
    let cls = fw.tape.slice(x, 1, 0, 1)?;
    let patches = fw.tape.slice(x, 1, 1, n)?;
    let grid = fw.tape.reshape(patches, &[b, side, side, d])?;
    let grid = fw.tape.permute(grid, &[0, 3, 1, 2])?;
    Ok((cls, grid, side, d))
}

fn grid_to_tokens<E: Element>(fw: &mut Forward<'_, E>, grid: VarId) -> Result<VarId> {
    let s = fw.tape.shape(grid).to_vec();
    let (b, d, n) = (s[0], s[1], s[2] * s[3]);
    let seq = fw.tape.permute(grid, &[0, 2, 3, 1])?;
    fw.tape.reshape(seq, &[b, n, d])
}

/// x [B,N+1,D] -> [B,N+1,D], class token first.
pub fn forward<E: Element>(
    fw: &mut Forward<'_, E>,
    names: &DaffNames,
    x: VarId,
    opts: DaffOpts,
) -> Result<VarId> {
    let (cls, grid, _side, d) = split_tokens(fw, x)?;
    let b = fw.tape.shape(grid)[0];

    let mut t = conv2d(fw, &names.conv1, grid, 1, 0, 1)?;
    t = norm2d(fw, &names.norm1, t, opts.norm_kind)?;
    t = fw.tape.gelu(t)?;

    let hidden = fw.tape.shape(t)[1];
    let mut dw = conv2d(fw, &names.dwconv, t, 1, 1, hidden)?;
    dw = norm2d(fw, &names.norm2, dw, opts.norm_kind)?;
    dw = fw.tape.gelu(dw)?;
    t = if opts.disable_dw_shortcut {
        dw
    } else {
        fw.tape.add(t, dw)?
    };

    let mut y = conv2d(fw, &names.conv3, t, 1, 0, 1)?;
    y = norm2d(fw, &names.norm3, y, opts.norm_kind)?;

    // Squeeze over the grid, excite, gate the class token.
    let pooled = fw.tape.mean_axis(y, 3)?;
    let pooled = fw.tape.mean_axis(pooled, 2)?;
    let squeezed = linear(fw, &names.compress, pooled)?;
    let squeezed = fw.tape.gelu(squeezed)?;
    let weight = linear(fw, &names.excitation, squeezed)?;
    let weight = fw.tape.reshape(weight, &[b, 1, d])?;
    let cls_out = fw.tape.mul(cls, weight)?;

    let mut patch_out = grid_to_tokens(fw, y)?;
    if opts.agg_on_all_tokens {
        let n = fw.tape.shape(patch_out)[1];
        let w_rep = fw.tape.repeat(weight, 1, n)?;
        patch_out = fw.tape.mul(patch_out, w_rep)?;
    }
    fw.tape.concat(&[cls_out, patch_out], 1)
}

/// Trainable parameter count of one DAFF block.
pub fn param_count(dim: usize, hidden: usize, se_ratio: usize) -> u64 {
    let (d, h, r) = (dim as u64, hidden as u64, (dim / se_ratio) as u64);
    let conv1 = h * d + h;
    let dw = h * 9 + h;
    let conv3 = d * h + d;
    let norms = 2 * h + 2 * h + 2 * d;
    let se = (r * d + r) + (d * r + d);
    conv1 + dw + conv3 + norms + se
}
