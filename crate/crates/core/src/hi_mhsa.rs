//! Head-interacted multi-head self-attention.
//!
//! One head token per attention head is synthesized by averaging each
//! channel group over every input token, projecting it back to full width,
//! and adding a learnable head embedding. Head tokens join the sequence for
//! standard scaled-dot-product attention and are folded back into the class
//! token afterwards, so the output length always equals the input length.

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::nn::{
    init_linear, init_norm, linear, AttnCapture, Forward, LinearNames, NormKind, NormNames, LN_EPS,
};
use crate::params::ParamStore;
use crate::tape::{Mode, Tape, VarId};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone)]
pub struct HiMhsaNames {
    pub qkv: LinearNames,
    pub proj: LinearNames,
    pub ht_proj: LinearNames,
    pub ht_norm: NormNames,
    pub head_embed: String,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnOpts {
    pub num_heads: usize,
    pub use_head_token: bool,
    pub dropout: f64,
}

/// Canonical parameter names of one attention block.
pub fn names(prefix: &str) -> HiMhsaNames {
    HiMhsaNames {
        qkv: LinearNames::new(&format!("{prefix}.qkv")),
        proj: LinearNames::new(&format!("{prefix}.proj")),
        ht_proj: LinearNames::new(&format!("{prefix}.ht_proj")),
        ht_norm: NormNames::new(&format!("{prefix}.ht_norm")),
        head_embed: format!("{prefix}.head_embed"),
    }
}

pub fn init<E: Element>(
    store: &mut ParamStore<E>,
    rng: &mut ChaCha12Rng,
    names: &HiMhsaNames,
    dim: usize,
    num_heads: usize,
    use_head_token: bool,
) -> Result<()> {
    if num_heads == 0 || !dim.is_multiple_of(num_heads) {
        return Err(Error::Config(format!(
            "embed_dim {dim} must be divisible by num_heads {num_heads}"
        )));
    }
    let head_dim = dim / num_heads;
    init_linear(store, rng, &names.qkv, dim, 3 * dim)?;
    init_linear(store, rng, &names.proj, dim, dim)?;
    if use_head_token {
        init_linear(store, rng, &names.ht_proj, head_dim, dim)?;
        init_norm(store, &names.ht_norm, head_dim, NormKind::Layer)?;
        // Zero-initialized, like a positional embedding for head tokens.
        store.insert(
            names.head_embed.clone(),
            Tensor::zeros(vec![num_heads, dim]),
            true,
        )?;
    }
    Ok(())
}

/// x [B,T,D] -> head tokens [B,h,D]: group-average every token's h channel
/// slices, project d -> D, layer-norm over d, GELU, add the head embedding.
pub fn make_head_tokens<E: Element>(
    fw: &mut Forward<'_, E>,
    names: &HiMhsaNames,
    x: VarId,
    num_heads: usize,
) -> Result<VarId> {
    let shape = fw.tape.shape(x).to_vec();
    let (b, t, d) = (shape[0], shape[1], shape[2]);
    if num_heads == 0 || !d.is_multiple_of(num_heads) {
        return Err(Error::Config(format!(
            "token width {d} must be divisible by num_heads {num_heads}"
        )));
    }
    let head_dim = d / num_heads;
    let grouped = fw.tape.reshape(x, &[b, t, num_heads, head_dim])?;
    let grouped = fw.tape.permute(grouped, &[0, 2, 1, 3])?;
    let means = fw.tape.mean_axis(grouped, 2)?; // [B,h,d]
    let flat = fw.tape.reshape(means, &[b * num_heads, head_dim])?;
    let projected = linear(fw, &names.ht_proj, flat)?; // [B*h, D]
    let regrouped = fw
        .tape
        .reshape(projected, &[b, num_heads, num_heads, head_dim])?;
    let gamma = fw.bound.var(&names.ht_norm.gamma);
    let beta = fw.bound.var(&names.ht_norm.beta);
    let normed = fw.tape.layernorm(regrouped, gamma, beta, LN_EPS)?;
    let activated = fw.tape.gelu(normed)?;
    let ht = fw.tape.reshape(activated, &[b, num_heads, d])?;
    let embed = fw.bound.var(&names.head_embed);
    let embed = fw.tape.reshape(embed, &[1, num_heads, d])?;
    let embed = fw.tape.repeat(embed, 0, b)?;
    fw.tape.add(ht, embed)
}

/// Reshape [B,T,D] into per-head rows [B*h, T, d].
fn to_heads<E: Element>(
    tape: &mut Tape<E>,
    x: VarId,
    b: usize,
    t: usize,
    h: usize,
    d: usize,
) -> Result<VarId> {
    let r = tape.reshape(x, &[b, t, h, d])?;
    let p = tape.permute(r, &[0, 2, 1, 3])?;
    tape.reshape(p, &[b * h, t, d])
}

/// x [B,N+1,D] -> [B,N+1,D], class token first. With head tokens enabled the
/// internal sequence is [class; patches; heads] of length N+1+h and the head
/// outputs are averaged into the class token.
pub fn forward<E: Element>(
    fw: &mut Forward<'_, E>,
    names: &HiMhsaNames,
    x: VarId,
    opts: AttnOpts,
) -> Result<VarId> {
    let shape = fw.tape.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "expected tokens [B,T,D], got {shape:?}"
        )));
    }
    let (b, t_in, d) = (shape[0], shape[1], shape[2]);
    if t_in < 1 {
        return Err(Error::Contract("empty token sequence".into()));
    }
    let h = opts.num_heads;
    if h == 0 || !d.is_multiple_of(h) {
        return Err(Error::Config(format!(
            "embed_dim {d} must be divisible by num_heads {h}"
        )));
    }
    let head_dim = d / h;

    let seq = if opts.use_head_token {
        let ht = make_head_tokens(fw, names, x, h)?;
        fw.tape.concat(&[x, ht], 1)?
    } else {
        x
    };
    let t = fw.tape.shape(seq)[1];

    let qkv = linear(fw, &names.qkv, seq)?; // [B,T,3D]
    let q = fw.tape.slice(qkv, 2, 0, d)?;
    let k = fw.tape.slice(qkv, 2, d, d)?;
    let v = fw.tape.slice(qkv, 2, 2 * d, d)?;
    let q = to_heads(fw.tape, q, b, t, h, head_dim)?;
    let k = to_heads(fw.tape, k, b, t, h, head_dim)?;
    let v = to_heads(fw.tape, v, b, t, h, head_dim)?;

    let scores = fw.tape.matmul_nt(q, k)?; // [B*h, T, T]
    let scale = E::from_f64(1.0 / (head_dim as f64).sqrt());
    let scores = fw.tape.scale(scores, scale)?;
    let mut attn = fw.tape.softmax(scores)?;

    if let Some(captures) = fw.captures.as_deref_mut() {
        captures.push(AttnCapture {
            shape: vec![b, h, t, t],
            data: fw.tape.data(attn).to_vec(),
        });
    }

    if opts.dropout > 0.0 && fw.mode == Mode::Train {
        let rng = fw
            .dropout_rng
            .as_deref_mut()
            .ok_or_else(|| Error::Contract("attention dropout needs an RNG".into()))?;
        let keep = 1.0 - opts.dropout;
        let len = fw.tape.data(attn).len();
        let mask: Vec<E> = (0..len)
            .map(|_| {
                if rand::Rng::random_range(rng, 0.0..1.0) < keep {
                    E::from_f64(1.0 / keep)
                } else {
                    E::zero()
                }
            })
            .collect();
        attn = fw.tape.dropout(attn, mask)?;
    }

    let ctx = fw.tape.matmul(attn, v)?; // [B*h, T, d]
    let ctx = fw.tape.reshape(ctx, &[b, h, t, head_dim])?;
    let ctx = fw.tape.permute(ctx, &[0, 2, 1, 3])?;
    let merged = fw.tape.reshape(ctx, &[b, t, d])?;
    let out = linear(fw, &names.proj, merged)?;

    if !opts.use_head_token {
        return Ok(out);
    }
    let n = t_in - 1;
    let cls = fw.tape.slice(out, 1, 0, 1)?;
    let patches = fw.tape.slice(out, 1, 1, n)?;
    let heads = fw.tape.slice(out, 1, t_in, h)?;
    let head_mean = fw.tape.mean_axis(heads, 1)?; // [B,D]
    let head_mean = fw.tape.reshape(head_mean, &[b, 1, d])?;
    let cls = fw.tape.add(cls, head_mean)?;
    fw.tape.concat(&[cls, patches], 1)
}

/// Trainable parameter count of one attention block.
pub fn param_count(dim: usize, num_heads: usize, use_head_token: bool) -> u64 {
    let d = dim as u64;
    let head_dim = d / num_heads as u64;
    let qkv = d * 3 * d + 3 * d;
    let proj = d * d + d;
    let mut total = qkv + proj;
    if use_head_token {
        total += head_dim * d + d; // ht_proj
        total += 2 * head_dim; // ht_norm
        total += num_heads as u64 * d; // head_embed
    }
    total
}
