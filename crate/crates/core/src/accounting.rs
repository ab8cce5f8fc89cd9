//! Exact parameter and MAC accounting.
//!
//! Parameter counts walk a built store; MAC counts are analytic functions of
//! the configuration (batch 1, 1 MAC = 1 FLOP). The MAC model covers
//! convolutions as Cout*Cin/groups*kh*kw*H'*W', linears as in*out per token,
//! and the two quadratic attention products per block; normalizations,
//! activations, softmax and pooling are excluded.
//!
//! `reported_macs` leaves out the attention score/context products. That is
//! the convention of the per-module FLOP counters used across the ViT
//! literature (hooks on conv/linear layers miss raw matmuls), and it is the
//! convention this crate's variant table is reconciled against. The full
//! figure including those products is `total_macs`.

use indexmap::IndexMap;
use serde::Serialize;

use crate::error::Result;
use crate::model::{EmbedNames, FfnNames, ModelConfig};
use crate::params::ParamStore;
use crate::sope;
use crate::tensor::Element;

#[derive(Debug, Clone, Serialize, Default)]
pub struct CostReport {
    /// Exact trainable-scalar count per tensor name.
    pub params: IndexMap<String, u64>,
    /// Exact MAC count per submodule name (batch 1).
    pub macs: IndexMap<String, u64>,
    pub total_params: u64,
    pub total_macs: u64,
    /// `total_macs` minus the attention score/context products.
    pub reported_macs: u64,
    pub config: Option<ModelConfig>,
}

impl CostReport {
    pub fn merge(mut self, other: CostReport) -> CostReport {
        for (k, v) in other.params {
            *self.params.entry(k).or_insert(0) += v;
        }
        for (k, v) in other.macs {
            *self.macs.entry(k).or_insert(0) += v;
        }
        self.total_params += other.total_params;
        self.total_macs += other.total_macs;
        self.reported_macs += other.reported_macs;
        if self.config.is_none() {
            self.config = other.config;
        }
        self
    }

    pub fn gflops(&self) -> f64 {
        self.reported_macs as f64 / 1e9
    }

    /// Aggregate leaf names to `depth` dot-separated segments.
    pub fn rollup(map: &IndexMap<String, u64>, depth: usize) -> IndexMap<String, u64> {
        let mut out: IndexMap<String, u64> = IndexMap::new();
        for (name, v) in map {
            let key: String = name.split('.').take(depth).collect::<Vec<_>>().join(".");
            *out.entry(key).or_insert(0) += v;
        }
        out
    }
}

/// Exact trainable parameter count per tensor, in store order.
pub fn count_params<E: Element>(store: &ParamStore<E>) -> CostReport {
    let mut params = IndexMap::new();
    let mut total = 0u64;
    for (name, entry) in store.iter() {
        if entry.trainable {
            let n = entry.tensor.numel() as u64;
            params.insert(name.to_string(), n);
            total += n;
        }
    }
    CostReport {
        params,
        total_params: total,
        ..Default::default()
    }
}

/// Analytic MAC count per submodule for batch size 1.
pub fn count_macs(cfg: &ModelConfig) -> Result<CostReport> {
    cfg.validate()?;
    let lay = crate::model::layout(cfg)?;
    let mut macs: IndexMap<String, u64> = IndexMap::new();
    let d = cfg.embed_dim as u64;
    let n = cfg.num_patches() as u64;
    let t_ext = cfg.attn_seq_len() as u64;
    let t_all = n + 1;
    let heads = cfg.num_heads as u64;
    let head_dim = cfg.head_dim() as u64;
    let hidden = cfg.ffn_hidden() as u64;
    let se = (cfg.embed_dim / cfg.se_ratio) as u64;
    let (ih, iw) = (cfg.image_size.0 as u64, cfg.image_size.1 as u64);

    match &lay.embed {
        EmbedNames::Sope(_) => {
            let widths = sope::stage_channels(cfg.patch_size, cfg.embed_dim)?;
            let (mut h, mut w) = (ih, iw);
            for (i, pair) in widths.windows(2).enumerate() {
                h /= 2;
                w /= 2;
                let (cin, cout) = (pair[0] as u64, pair[1] as u64);
                macs.insert(format!("sope.stages.{i}.conv"), cout * cin * 9 * h * w);
            }
        }
        EmbedNames::Patch(_) => {
            let p = cfg.patch_size as u64;
            macs.insert("patch_embed".to_string(), d * 3 * p * p * n);
        }
    }

    let mut attn_products = 0u64;
    for i in 0..cfg.depth {
        let prefix = format!("blocks.{i}");
        macs.insert(format!("{prefix}.attn.qkv"), t_ext * d * 3 * d);
        if cfg.use_head_token {
            macs.insert(format!("{prefix}.attn.ht_proj"), heads * head_dim * d);
        }
        let scores = t_ext * t_ext * d;
        macs.insert(format!("{prefix}.attn.scores"), scores);
        macs.insert(format!("{prefix}.attn.context"), scores);
        attn_products += 2 * scores;
        macs.insert(format!("{prefix}.attn.proj"), t_ext * d * d);

        match lay.blocks[i].ffn {
            FfnNames::Daff(_) => {
                macs.insert(format!("{prefix}.daff.conv1"), n * d * hidden);
                macs.insert(format!("{prefix}.daff.dwconv"), n * hidden * 9);
                macs.insert(format!("{prefix}.daff.conv3"), n * hidden * d);
                macs.insert(format!("{prefix}.daff.se"), 2 * d * se);
            }
            FfnNames::Plain { .. } => {
                macs.insert(format!("{prefix}.ffn.fc1"), t_all * d * hidden);
                macs.insert(format!("{prefix}.ffn.fc2"), t_all * hidden * d);
            }
            FfnNames::SplitCls { .. } | FfnNames::SplitClsAvgPool { .. } => {
                macs.insert(format!("{prefix}.ffn.fc1"), n * d * hidden);
                macs.insert(format!("{prefix}.ffn.fc2"), n * hidden * d);
            }
            FfnNames::SplitClsAgg { .. } => {
                macs.insert(format!("{prefix}.ffn.fc1"), n * d * hidden);
                macs.insert(format!("{prefix}.ffn.fc2"), n * hidden * d);
                macs.insert(format!("{prefix}.ffn.se"), 2 * d * se);
            }
        }
    }

    macs.insert("head".to_string(), d * cfg.num_classes as u64);

    let total: u64 = macs.values().sum();
    Ok(CostReport {
        macs,
        total_macs: total,
        reported_macs: total - attn_products,
        config: Some(cfg.clone()),
        ..Default::default()
    })
}
