//! Layer-level helpers: named parameter groups and their forward functions.
//!
//! Modules address their parameters by hierarchical name (for example
//! `blocks.3.attn.qkv.weight`). The `*Names` structs pre-build those names
//! once; `init_*` functions insert freshly initialized tensors into a
//! [`ParamStore`] and the forward helpers replay them on a [`Tape`].

use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::init::trunc_normal;
use crate::params::{BoundParams, ParamStore};
use crate::tape::{Mode, Tape, VarId};
use crate::tensor::{Element, Tensor};

/// Batch-norm epsilon (conventional default).
pub const BN_EPS: f64 = 1e-5;
/// Batch-norm running-stat momentum (conventional default).
pub const BN_MOMENTUM: f64 = 0.1;
/// Layer-norm epsilon (conventional default).
pub const LN_EPS: f64 = 1e-6;
/// Init std for linear/conv weights, class token and positional embedding.
pub const INIT_STD: f64 = 0.02;

/// Which normalizer a conv stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Layer,
}

/// Everything a module forward needs: the tape being recorded, the bound
/// parameter leaves, the store (for batch-norm running stats), and the mode.
pub struct Forward<'a, E: Element> {
    pub tape: &'a mut Tape<E>,
    pub bound: &'a BoundParams,
    pub store: &'a mut ParamStore<E>,
    pub mode: Mode,
    /// Softmax attention matrices collected per block when requested.
    pub captures: Option<&'a mut Vec<AttnCapture<E>>>,
    /// RNG for attention dropout; only consulted when the rate is > 0.
    pub dropout_rng: Option<&'a mut ChaCha12Rng>,
}

/// One block's post-softmax attention, shape [B, heads, T, T].
#[derive(Debug, Clone)]
pub struct AttnCapture<E> {
    pub shape: Vec<usize>,
    pub data: Vec<E>,
}

// ── Linear ───────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LinearNames {
    pub weight: String,
    pub bias: String,
}

impl LinearNames {
    pub fn new(prefix: &str) -> Self {
        LinearNames {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
        }
    }
}

pub fn init_linear<E: Element>(
    store: &mut ParamStore<E>,
    rng: &mut ChaCha12Rng,
    names: &LinearNames,
    in_dim: usize,
    out_dim: usize,
) -> Result<()> {
    store.insert(
        names.weight.clone(),
        trunc_normal(vec![out_dim, in_dim], INIT_STD, rng),
        true,
    )?;
    store.insert(names.bias.clone(), Tensor::zeros(vec![out_dim]), true)
}

/// y = x @ W^T + b on the trailing axis; leading axes are untouched.
pub fn linear<E: Element>(fw: &mut Forward<'_, E>, names: &LinearNames, x: VarId) -> Result<VarId> {
    let w = fw.bound.var(&names.weight);
    let b = fw.bound.var(&names.bias);
    let in_shape = fw.tape.shape(x).to_vec();
    let in_dim = *in_shape.last().expect("linear input needs rank >= 1");
    let rows: usize = in_shape[..in_shape.len() - 1].iter().product();
    let flat = fw.tape.reshape(x, &[rows, in_dim])?;
    let y = fw.tape.matmul_nt(flat, w)?;
    let y = fw.tape.add_rows(y, b)?;
    let out_dim = fw.tape.shape(y)[1];
    let mut out_shape = in_shape;
    *out_shape.last_mut().unwrap() = out_dim;
    fw.tape.reshape(y, &out_shape)
}

// ── Conv2d ───────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ConvNames {
    pub weight: String,
    pub bias: String,
}

impl ConvNames {
    pub fn new(prefix: &str) -> Self {
        ConvNames {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
        }
    }
}

pub fn init_conv<E: Element>(
    store: &mut ParamStore<E>,
    rng: &mut ChaCha12Rng,
    names: &ConvNames,
    c_out: usize,
    c_in_per_group: usize,
    kernel: usize,
) -> Result<()> {
    store.insert(
        names.weight.clone(),
        trunc_normal(vec![c_out, c_in_per_group, kernel, kernel], INIT_STD, rng),
        true,
    )?;
    store.insert(names.bias.clone(), Tensor::zeros(vec![c_out]), true)
}

pub fn conv2d<E: Element>(
    fw: &mut Forward<'_, E>,
    names: &ConvNames,
    x: VarId,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<VarId> {
    let w = fw.bound.var(&names.weight);
    let b = fw.bound.var(&names.bias);
    fw.tape.conv2d(x, w, Some(b), stride, pad, groups)
}

// ── Normalizers ──────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct NormNames {
    pub gamma: String,
    pub beta: String,
    pub running_mean: String,
    pub running_var: String,
}

impl NormNames {
    pub fn new(prefix: &str) -> Self {
        NormNames {
            gamma: format!("{prefix}.gamma"),
            beta: format!("{prefix}.beta"),
            running_mean: format!("{prefix}.running_mean"),
            running_var: format!("{prefix}.running_var"),
        }
    }
}

/// gamma = 1, beta = 0; batch norm additionally gets running-stat buffers.
pub fn init_norm<E: Element>(
    store: &mut ParamStore<E>,
    names: &NormNames,
    channels: usize,
    kind: NormKind,
) -> Result<()> {
    store.insert(names.gamma.clone(), Tensor::ones(vec![channels]), true)?;
    store.insert(names.beta.clone(), Tensor::zeros(vec![channels]), true)?;
    if kind == NormKind::Batch {
        store.insert(
            names.running_mean.clone(),
            Tensor::zeros(vec![channels]),
            false,
        )?;
        store.insert(
            names.running_var.clone(),
            Tensor::ones(vec![channels]),
            false,
        )?;
    }
    Ok(())
}

/// Normalize a [B,C,H,W] map per channel (batch norm) or per position over
/// channels (layer norm, the sequence-style alternative).
pub fn norm2d<E: Element>(
    fw: &mut Forward<'_, E>,
    names: &NormNames,
    x: VarId,
    kind: NormKind,
) -> Result<VarId> {
    let gamma = fw.bound.var(&names.gamma);
    let beta = fw.bound.var(&names.beta);
    match kind {
        NormKind::Batch => match fw.mode {
            Mode::Train => {
                let (y, stats) = fw.tape.batchnorm2d_train(x, gamma, beta, BN_EPS)?;
                let mom = E::from_f64(BN_MOMENTUM);
                let keep = E::from_f64(1.0 - BN_MOMENTUM);
                let rm = fw.store.get_mut(&names.running_mean)?;
                for (r, &m) in rm.data_mut().iter_mut().zip(&stats.mean) {
                    *r = keep * *r + mom * m;
                }
                let rv = fw.store.get_mut(&names.running_var)?;
                for (r, &v) in rv.data_mut().iter_mut().zip(&stats.var_unbiased) {
                    *r = keep * *r + mom * v;
                }
                Ok(y)
            }
            Mode::Eval => {
                let rm = fw.store.get(&names.running_mean)?.data().to_vec();
                let rv = fw.store.get(&names.running_var)?.data().to_vec();
                fw.tape.batchnorm2d_eval(x, gamma, beta, &rm, &rv, BN_EPS)
            }
        },
        NormKind::Layer => {
            let p = fw.tape.permute(x, &[0, 2, 3, 1])?;
            let y = fw.tape.layernorm(p, gamma, beta, LN_EPS)?;
            fw.tape.permute(y, &[0, 3, 1, 2])
        }
    }
}

/// Plain layer norm over the channel axis of a token sequence [B,T,D].
pub fn layernorm_tokens<E: Element>(
    fw: &mut Forward<'_, E>,
    names: &NormNames,
    x: VarId,
) -> Result<VarId> {
    let gamma = fw.bound.var(&names.gamma);
    let beta = fw.bound.var(&names.beta);
    fw.tape.layernorm(x, gamma, beta, LN_EPS)
}

// ── Channel affine ───────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct AffineNames {
    pub alpha: String,
    pub beta: String,
}

impl AffineNames {
    pub fn new(prefix: &str) -> Self {
        AffineNames {
            alpha: format!("{prefix}.alpha"),
            beta: format!("{prefix}.beta"),
        }
    }
}

/// alpha = 1, beta = 0 at init, so a fresh affine is an identity.
pub fn init_affine<E: Element>(
    store: &mut ParamStore<E>,
    names: &AffineNames,
    channels: usize,
) -> Result<()> {
    store.insert(names.alpha.clone(), Tensor::ones(vec![channels]), true)?;
    store.insert(names.beta.clone(), Tensor::zeros(vec![channels]), true)
}

/// Diag(alpha) x + beta per channel of a [B,C,H,W] map.
pub fn affine<E: Element>(fw: &mut Forward<'_, E>, names: &AffineNames, x: VarId) -> Result<VarId> {
    let alpha = fw.bound.var(&names.alpha);
    let beta = fw.bound.var(&names.beta);
    let y = fw.tape.mul_channel(x, alpha)?;
    fw.tape.add_channel(y, beta)
}
