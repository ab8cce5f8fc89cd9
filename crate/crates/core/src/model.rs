//! Full model assembly: patch embedding, class token, optional positional
//! embedding, pre-norm encoder blocks (attention + feed-forward, both with
//! residual shortcuts), final layer norm and the linear head.
//!
//! Every ablation from the experiments is a config toggle here, so the same
//! forward path serves the full model, the vanilla-ViT baseline, and
//! everything in between.

use serde::{Deserialize, Serialize};

use crate::daff::{self, DaffNames, DaffOpts};
use crate::error::{Error, Result};
use crate::hi_mhsa::{self, AttnOpts, HiMhsaNames};
use crate::init::{seeded_rng, trunc_normal};
use crate::nn::{
    conv2d, init_conv, init_linear, init_norm, layernorm_tokens, linear, AttnCapture, ConvNames,
    Forward, LinearNames, NormKind, NormNames, INIT_STD,
};
use crate::params::{BoundParams, ParamStore};
use crate::sope::{self, SopeNames};
use crate::tape::{Mode, Tape, VarId};
use crate::tensor::{Element, Tensor};

// ── Configuration ────────────────────────────────────────────────────

/// Normalization choice for (patch embedding stages, feed-forward convs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormPolicy {
    #[serde(rename = "bn-bn")]
    BnBn,
    #[serde(rename = "bn-ln")]
    BnLn,
    #[serde(rename = "ln-bn")]
    LnBn,
    #[serde(rename = "ln-ln")]
    LnLn,
}

impl NormPolicy {
    pub fn sope_kind(self) -> NormKind {
        match self {
            NormPolicy::BnBn | NormPolicy::BnLn => NormKind::Batch,
            NormPolicy::LnBn | NormPolicy::LnLn => NormKind::Layer,
        }
    }
    pub fn ffn_kind(self) -> NormKind {
        match self {
            NormPolicy::BnBn | NormPolicy::LnBn => NormKind::Batch,
            NormPolicy::BnLn | NormPolicy::LnLn => NormKind::Layer,
        }
    }
}

/// Feed-forward variants of the plain (non-DAFF) path. `SplitCls` passes the
/// class token through unchanged; `SplitClsAgg` additionally gates it with a
/// squeeze-excitation weight; `SplitClsAvgPool` aggregates neighbors with a
/// parameter-free 3x3 average pool in the slot the depth-wise conv occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FfnAblation {
    #[default]
    None,
    SplitCls,
    SplitClsAgg,
    SplitClsAvgPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// (height, width) in pixels.
    pub image_size: (usize, usize),
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: f64,
    #[serde(default = "default_se_ratio")]
    pub se_ratio: usize,
    pub num_classes: usize,
    #[serde(default = "default_true")]
    pub use_sope: bool,
    #[serde(default)]
    pub use_abs_pos_embed: bool,
    #[serde(default = "default_true")]
    pub use_daff: bool,
    #[serde(default = "default_true")]
    pub use_head_token: bool,
    #[serde(default)]
    pub agg_on_all_tokens: bool,
    #[serde(default)]
    pub disable_dw_shortcut: bool,
    #[serde(default)]
    pub attn_dropout: f64,
    #[serde(default = "default_norm_policy")]
    pub norm_policy: NormPolicy,
    #[serde(default)]
    pub ffn_ablation: FfnAblation,
}

fn default_mlp_ratio() -> f64 {
    4.0
}
fn default_se_ratio() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_norm_policy() -> NormPolicy {
    NormPolicy::BnBn
}

impl ModelConfig {
    /// Full model with the published defaults for everything optional.
    pub fn new(
        image_size: (usize, usize),
        patch_size: usize,
        embed_dim: usize,
        depth: usize,
        num_heads: usize,
        num_classes: usize,
    ) -> Self {
        ModelConfig {
            image_size,
            patch_size,
            embed_dim,
            depth,
            num_heads,
            mlp_ratio: default_mlp_ratio(),
            se_ratio: default_se_ratio(),
            num_classes,
            use_sope: true,
            use_abs_pos_embed: false,
            use_daff: true,
            use_head_token: true,
            agg_on_all_tokens: false,
            disable_dw_shortcut: false,
            attn_dropout: 0.0,
            norm_policy: default_norm_policy(),
            ffn_ablation: FfnAblation::None,
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (
            self.image_size.0 / self.patch_size,
            self.image_size.1 / self.patch_size,
        )
    }

    /// Patch token count N = HW / P^2.
    pub fn num_patches(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn ffn_hidden(&self) -> usize {
        (self.mlp_ratio * self.embed_dim as f64).round() as usize
    }

    /// Sequence length inside attention: N+1, plus h with head tokens on.
    pub fn attn_seq_len(&self) -> usize {
        let t = self.num_patches() + 1;
        if self.use_head_token {
            t + self.num_heads
        } else {
            t
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let (h, w) = self.image_size;
        if self.patch_size == 0 || h == 0 || w == 0 {
            return fail("image_size and patch_size must be positive".into());
        }
        if !h.is_multiple_of(self.patch_size) || !w.is_multiple_of(self.patch_size) {
            return fail(format!(
                "image_size {h}x{w} must be divisible by patch_size {}",
                self.patch_size
            ));
        }
        if self.depth == 0 {
            return fail("depth must be >= 1".into());
        }
        if self.num_classes == 0 {
            return fail("num_classes must be >= 1".into());
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return fail(format!(
                "embed_dim {} must be divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        let hidden = self.mlp_ratio * self.embed_dim as f64;
        if hidden <= 0.0 || hidden.fract() != 0.0 {
            return fail(format!(
                "mlp_ratio {} * embed_dim {} must be a positive integer",
                self.mlp_ratio, self.embed_dim
            ));
        }
        if self.se_ratio == 0 || !self.embed_dim.is_multiple_of(self.se_ratio) {
            return fail(format!(
                "embed_dim {} must be divisible by se_ratio {}",
                self.embed_dim, self.se_ratio
            ));
        }
        if self.use_sope {
            sope::stage_channels(self.patch_size, self.embed_dim)?;
        }
        let needs_grid = self.use_daff || self.ffn_ablation == FfnAblation::SplitClsAvgPool;
        if needs_grid && h / self.patch_size != w / self.patch_size {
            return fail(format!(
                "feed-forward grid needs a square token layout; image {h}x{w} with patch {} gives {}x{}",
                self.patch_size,
                h / self.patch_size,
                w / self.patch_size
            ));
        }
        if self.use_daff && self.ffn_ablation != FfnAblation::None {
            return fail("ffn_ablation applies only when use_daff is false".into());
        }
        if !self.use_daff && (self.agg_on_all_tokens || self.disable_dw_shortcut) {
            return fail(
                "agg_on_all_tokens/disable_dw_shortcut apply only when use_daff is true".into(),
            );
        }
        if !(0.0..1.0).contains(&self.attn_dropout) {
            return fail(format!(
                "attn_dropout {} must be in [0,1)",
                self.attn_dropout
            ));
        }
        Ok(())
    }
}

// ── Table of variants ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantTier {
    Tiny,
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantDataset {
    Cifar,
    Domain,
    ImageNet,
}

/// The eight published variants: (tier, dataset, patch) -> config.
pub const VARIANT_TABLE: [(VariantTier, VariantDataset, usize); 8] = [
    (VariantTier::Tiny, VariantDataset::Cifar, 4),
    (VariantTier::Tiny, VariantDataset::Cifar, 2),
    (VariantTier::Small, VariantDataset::Cifar, 4),
    (VariantTier::Small, VariantDataset::Cifar, 2),
    (VariantTier::Tiny, VariantDataset::Domain, 16),
    (VariantTier::Small, VariantDataset::Domain, 16),
    (VariantTier::Tiny, VariantDataset::ImageNet, 16),
    (VariantTier::Small, VariantDataset::ImageNet, 16),
];

/// Exact configuration of one published variant row.
pub fn variant_config(
    tier: VariantTier,
    dataset: VariantDataset,
    patch: usize,
) -> Result<ModelConfig> {
    if !VARIANT_TABLE.contains(&(tier, dataset, patch)) {
        let options: Vec<String> = VARIANT_TABLE
            .iter()
            .map(|(t, d, p)| format!("({t:?}, {d:?}, patch {p})"))
            .collect();
        return Err(Error::Config(format!(
            "unknown variant ({tier:?}, {dataset:?}, patch {patch}); known variants: {}",
            options.join(", ")
        )));
    }
    let embed_dim = match tier {
        VariantTier::Tiny => 192,
        VariantTier::Small => 384,
    };
    let num_heads = match (tier, dataset) {
        (VariantTier::Tiny, VariantDataset::Cifar) => 4,
        (VariantTier::Small, VariantDataset::Cifar) => 8,
        (VariantTier::Tiny, VariantDataset::Domain) => 4,
        (VariantTier::Small, VariantDataset::Domain) => 6,
        (VariantTier::Tiny, VariantDataset::ImageNet) => 3,
        (VariantTier::Small, VariantDataset::ImageNet) => 6,
    };
    let (image, classes) = match dataset {
        VariantDataset::Cifar => ((32, 32), 100),
        VariantDataset::Domain => ((224, 224), 345),
        VariantDataset::ImageNet => ((224, 224), 1000),
    };
    Ok(ModelConfig::new(
        image, patch, embed_dim, 12, num_heads, classes,
    ))
}

// ── Layout: the canonical parameter naming ───────────────────────────

#[derive(Debug, Clone)]
pub enum EmbedNames {
    Sope(SopeNames),
    Patch(ConvNames),
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum FfnNames {
    Daff(DaffNames),
    Plain {
        fc1: LinearNames,
        fc2: LinearNames,
    },
    SplitCls {
        fc1: LinearNames,
        fc2: LinearNames,
    },
    SplitClsAgg {
        fc1: LinearNames,
        fc2: LinearNames,
        compress: LinearNames,
        excitation: LinearNames,
    },
    SplitClsAvgPool {
        fc1: LinearNames,
        fc2: LinearNames,
    },
}

#[derive(Debug, Clone)]
pub struct BlockNames {
    pub norm1: NormNames,
    pub attn: HiMhsaNames,
    pub norm2: NormNames,
    pub ffn: FfnNames,
}

#[derive(Debug, Clone)]
pub struct ModelLayout {
    pub embed: EmbedNames,
    pub cls_token: String,
    pub pos_embed: Option<String>,
    pub blocks: Vec<BlockNames>,
    pub final_norm: NormNames,
    pub head: LinearNames,
}

/// Canonical names for every tensor a config implies. Shared by build and
/// forward so the two can never disagree.
pub fn layout(cfg: &ModelConfig) -> Result<ModelLayout> {
    let embed = if cfg.use_sope {
        EmbedNames::Sope(sope::names("sope", cfg.patch_size)?)
    } else {
        EmbedNames::Patch(ConvNames::new("patch_embed"))
    };
    let blocks = (0..cfg.depth)
        .map(|i| {
            let prefix = format!("blocks.{i}");
            let ffn = if cfg.use_daff {
                FfnNames::Daff(daff::names(&format!("{prefix}.daff")))
            } else {
                let fc1 = LinearNames::new(&format!("{prefix}.ffn.fc1"));
                let fc2 = LinearNames::new(&format!("{prefix}.ffn.fc2"));
                match cfg.ffn_ablation {
                    FfnAblation::None => FfnNames::Plain { fc1, fc2 },
                    FfnAblation::SplitCls => FfnNames::SplitCls { fc1, fc2 },
                    FfnAblation::SplitClsAgg => FfnNames::SplitClsAgg {
                        fc1,
                        fc2,
                        compress: LinearNames::new(&format!("{prefix}.ffn.compress")),
                        excitation: LinearNames::new(&format!("{prefix}.ffn.excitation")),
                    },
                    FfnAblation::SplitClsAvgPool => FfnNames::SplitClsAvgPool { fc1, fc2 },
                }
            };
            BlockNames {
                norm1: NormNames::new(&format!("{prefix}.norm1")),
                attn: hi_mhsa::names(&format!("{prefix}.attn")),
                norm2: NormNames::new(&format!("{prefix}.norm2")),
                ffn,
            }
        })
        .collect();
    Ok(ModelLayout {
        embed,
        cls_token: "cls_token".to_string(),
        pos_embed: cfg.use_abs_pos_embed.then(|| "pos_embed".to_string()),
        blocks,
        final_norm: NormNames::new("norm"),
        head: LinearNames::new("head"),
    })
}

// ── Build ────────────────────────────────────────────────────────────

/// Construct a freshly initialized parameter store for `cfg`.
///
/// Truncated-normal (std 0.02) for linear/conv weights, class token and
/// positional embedding; zeros for biases and the head embedding; ones/zeros
/// for norm scales/shifts.
pub fn build_model<E: Element>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<E>> {
    cfg.validate()?;
    let lay = layout(cfg)?;
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(seed);
    let d = cfg.embed_dim;

    match &lay.embed {
        EmbedNames::Sope(names) => {
            sope::init(
                &mut store,
                &mut rng,
                names,
                cfg.patch_size,
                d,
                cfg.norm_policy.sope_kind(),
            )?;
        }
        EmbedNames::Patch(names) => {
            init_conv(&mut store, &mut rng, names, d, 3, cfg.patch_size)?;
        }
    }

    store.insert(
        lay.cls_token.clone(),
        trunc_normal(vec![1, 1, d], INIT_STD, &mut rng),
        true,
    )?;
    if let Some(pe) = &lay.pos_embed {
        store.insert(
            pe.clone(),
            trunc_normal(vec![1, cfg.num_patches() + 1, d], INIT_STD, &mut rng),
            true,
        )?;
    }

    let hidden = cfg.ffn_hidden();
    for block in &lay.blocks {
        init_norm(&mut store, &block.norm1, d, NormKind::Layer)?;
        hi_mhsa::init(
            &mut store,
            &mut rng,
            &block.attn,
            d,
            cfg.num_heads,
            cfg.use_head_token,
        )?;
        init_norm(&mut store, &block.norm2, d, NormKind::Layer)?;
        match &block.ffn {
            FfnNames::Daff(names) => {
                daff::init(
                    &mut store,
                    &mut rng,
                    names,
                    d,
                    hidden,
                    cfg.se_ratio,
                    cfg.norm_policy.ffn_kind(),
                )?;
            }
            FfnNames::Plain { fc1, fc2 }
            | FfnNames::SplitCls { fc1, fc2 }
            | FfnNames::SplitClsAvgPool { fc1, fc2 } => {
                init_linear(&mut store, &mut rng, fc1, d, hidden)?;
                init_linear(&mut store, &mut rng, fc2, hidden, d)?;
            }
            FfnNames::SplitClsAgg {
                fc1,
                fc2,
                compress,
                excitation,
            } => {
                init_linear(&mut store, &mut rng, fc1, d, hidden)?;
                init_linear(&mut store, &mut rng, fc2, hidden, d)?;
                init_linear(&mut store, &mut rng, compress, d, d / cfg.se_ratio)?;
                init_linear(&mut store, &mut rng, excitation, d / cfg.se_ratio, d)?;
            }
        }
    }

    init_norm(&mut store, &lay.final_norm, d, NormKind::Layer)?;
    init_linear(&mut store, &mut rng, &lay.head, d, cfg.num_classes)?;
    Ok(store)
}

// ── Forward ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOpts {
    pub capture_attention: bool,
    /// Seed for attention dropout masks (only used when the rate is > 0).
    pub dropout_seed: u64,
}

#[derive(Debug)]
pub struct ForwardOutput<E: Element> {
    pub logits: VarId,
    pub bound: BoundParams,
    /// Per-block attention maps, in block order, when capture was requested.
    pub attention: Vec<AttnCapture<E>>,
}

fn ffn_forward<E: Element>(
    fw: &mut Forward<'_, E>,
    cfg: &ModelConfig,
    names: &FfnNames,
    x: VarId,
) -> Result<VarId> {
    match names {
        FfnNames::Daff(daff_names) => daff::forward(
            fw,
            daff_names,
            x,
            DaffOpts {
                norm_kind: cfg.norm_policy.ffn_kind(),
                agg_on_all_tokens: cfg.agg_on_all_tokens,
                disable_dw_shortcut: cfg.disable_dw_shortcut,
            },
        ),
        FfnNames::Plain { fc1, fc2 } => {
            let t = linear(fw, fc1, x)?;
            let t = fw.tape.gelu(t)?;
            linear(fw, fc2, t)
        }
        FfnNames::SplitCls { fc1, fc2 } => {
            let (cls, patches) = split_cls(fw, x)?;
            let t = linear(fw, fc1, patches)?;
            let t = fw.tape.gelu(t)?;
            let t = linear(fw, fc2, t)?;
            fw.tape.concat(&[cls, t], 1)
        }
        FfnNames::SplitClsAgg {
            fc1,
            fc2,
            compress,
            excitation,
        } => {
            let (cls, patches) = split_cls(fw, x)?;
            let t = linear(fw, fc1, patches)?;
            let t = fw.tape.gelu(t)?;
            let t = linear(fw, fc2, t)?;
            let pooled = fw.tape.mean_axis(t, 1)?; // [B,D]
            let s = linear(fw, compress, pooled)?;
            let s = fw.tape.gelu(s)?;
            let weight = linear(fw, excitation, s)?;
            let b = fw.tape.shape(weight)[0];
            let d = fw.tape.shape(weight)[1];
            let weight = fw.tape.reshape(weight, &[b, 1, d])?;
            let cls = fw.tape.mul(cls, weight)?;
            fw.tape.concat(&[cls, t], 1)
        }
        FfnNames::SplitClsAvgPool { fc1, fc2 } => {
            let (cls, patches) = split_cls(fw, x)?;
            let shape = fw.tape.shape(patches).to_vec();
            let (b, n) = (shape[0], shape[1]);
            let side = (n as f64).sqrt().round() as usize;
            if side * side != n {
                return Err(Error::Shape(format!(
                    "{n} patch tokens do not form a square grid"
                )));
            }
            let t = linear(fw, fc1, patches)?;
            let t = fw.tape.gelu(t)?;
            let hidden = fw.tape.shape(t)[2];
            let grid = fw.tape.reshape(t, &[b, side, side, hidden])?;
            let grid = fw.tape.permute(grid, &[0, 3, 1, 2])?;
            // Parameter-free depth-wise 3x3 average pool via a constant kernel.
            let kernel = vec![E::from_f64(1.0 / 9.0); hidden * 9];
            let kid = fw.tape.constant(&[hidden, 1, 3, 3], &kernel);
            let pooled = fw.tape.conv2d(grid, kid, None, 1, 1, hidden)?;
            let grid = fw.tape.add(grid, pooled)?;
            let seq = fw.tape.permute(grid, &[0, 2, 3, 1])?;
            let t = fw.tape.reshape(seq, &[b, n, hidden])?;
            let t = linear(fw, fc2, t)?;
            fw.tape.concat(&[cls, t], 1)
        }
    }
}

fn split_cls<E: Element>(fw: &mut Forward<'_, E>, x: VarId) -> Result<(VarId, VarId)> {
    let t = fw.tape.shape(x)[1];
    if t < 2 {
        return Err(Error::Contract(format!(
            "token sequence of length {t} is missing patch tokens or the class token"
        )));
    }
    let cls = fw.tape.slice(x, 1, 0, 1)?;
    let patches = fw.tape.slice(x, 1, 1, t - 1)?;
    Ok((cls, patches))
}

/// Pre-norm encoder block: x + Attn(LN(x)), then x + Ffn(LN(x)).
pub fn encoder_block_forward<E: Element>(
    fw: &mut Forward<'_, E>,
    cfg: &ModelConfig,
    names: &BlockNames,
    x: VarId,
) -> Result<VarId> {
    let normed = layernorm_tokens(fw, &names.norm1, x)?;
    let attended = hi_mhsa::forward(
        fw,
        &names.attn,
        normed,
        AttnOpts {
            num_heads: cfg.num_heads,
            use_head_token: cfg.use_head_token,
            dropout: cfg.attn_dropout,
        },
    )?;
    let x = fw.tape.add(x, attended)?;
    let normed = layernorm_tokens(fw, &names.norm2, x)?;
    let ffned = ffn_forward(fw, cfg, &names.ffn, normed)?;
    fw.tape.add(x, ffned)
}

/// Run the model on an image batch and return the class-token logits on the
/// tape. `store` is mutated only by train-mode batch-norm running-stat
/// updates; eval mode leaves it untouched. The `&mut` receiver serializes
/// forward/backward passes on one model instance, which is the required
/// synchronization discipline either way.
pub fn model_forward<E: Element>(
    store: &mut ParamStore<E>,
    cfg: &ModelConfig,
    images: &Tensor<E>,
    mode: Mode,
    tape: &mut Tape<E>,
    opts: &ForwardOpts,
) -> Result<ForwardOutput<E>> {
    cfg.validate()?;
    let shape = images.shape();
    let expected = [usize::MAX, 3, cfg.image_size.0, cfg.image_size.1];
    if shape.len() != 4 || shape[1..] != expected[1..] {
        return Err(Error::Shape(format!(
            "images {shape:?} do not match configured resolution [B,3,{},{}]",
            cfg.image_size.0, cfg.image_size.1
        )));
    }
    let b = shape[0];
    let lay = layout(cfg)?;
    let bound = store.bind(tape);
    let images_id = tape.constant(shape, images.data());
    tape.set_label(images_id, "images");

    let mut captures: Vec<AttnCapture<E>> = Vec::new();
    let mut dropout_rng = seeded_rng(opts.dropout_seed);
    let needs_rng = cfg.attn_dropout > 0.0 && mode == Mode::Train;
    let logits = {
        let mut fw = Forward {
            tape,
            bound: &bound,
            store,
            mode,
            captures: opts.capture_attention.then_some(&mut captures),
            dropout_rng: needs_rng.then_some(&mut dropout_rng),
        };

        let patches = match &lay.embed {
            EmbedNames::Sope(names) => sope::forward(
                &mut fw,
                names,
                images_id,
                cfg.patch_size,
                cfg.norm_policy.sope_kind(),
            )?,
            EmbedNames::Patch(names) => {
                let grid = conv2d(&mut fw, names, images_id, cfg.patch_size, 0, 1)?;
                let gshape = fw.tape.shape(grid).to_vec();
                let (d, hp, wp) = (gshape[1], gshape[2], gshape[3]);
                let flat = fw.tape.reshape(grid, &[b, d, hp * wp])?;
                fw.tape.permute(flat, &[0, 2, 1])?
            }
        };

        let cls = fw.bound.var(&lay.cls_token);
        let cls = fw.tape.repeat(cls, 0, b)?;
        let mut tokens = fw.tape.concat(&[cls, patches], 1)?;

        if let Some(pe) = &lay.pos_embed {
            let pev = fw.bound.var(pe);
            let pev = fw.tape.repeat(pev, 0, b)?;
            tokens = fw.tape.add(tokens, pev)?;
        }

        for block in &lay.blocks {
            tokens = encoder_block_forward(&mut fw, cfg, block, tokens)?;
        }

        let normed = layernorm_tokens(&mut fw, &lay.final_norm, tokens)?;
        let cls_out = fw.tape.slice(normed, 1, 0, 1)?;
        let cls_out = fw.tape.reshape(cls_out, &[b, cfg.embed_dim])?;
        linear(&mut fw, &lay.head, cls_out)?
    };
    Ok(ForwardOutput {
        logits,
        bound,
        attention: captures,
    })
}
