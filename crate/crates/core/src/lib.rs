//! Hybrid vision transformer with a self-contained numeric engine.
//!
//! The stack, bottom up:
//!
//! - [`tensor`] / [`tape`]: dense tensors and a define-by-run reverse-mode
//!   autodiff tape with the layer primitives (matmul, conv2d, batch/layer
//!   norm, exact GELU, softmax, cross-entropy).
//! - [`nn`]: named parameter groups and their forward helpers.
//! - [`sope`]: sequential overlapping patch embedding (affine-wrapped
//!   stride-2 conv stages).
//! - [`daff`]: dynamic aggregation feed forward (depth-wise conv MLP over
//!   patch tokens, squeeze-excitation re-calibration of the class token).
//! - [`hi_mhsa`]: head-interacted multi-head self-attention (head tokens
//!   joining the sequence and folding back into the class token).
//! - [`model`]: encoder assembly, the published variant table, and every
//!   ablation toggle.
//! - [`accounting`]: exact parameter/MAC accounting.
//! - [`adamw`]: decoupled-weight-decay optimizer.

pub mod accounting;
pub mod adamw;
pub mod daff;
pub mod error;
pub mod hi_mhsa;
pub mod init;
pub mod kernels;
pub mod model;
pub mod nn;
pub mod params;
pub mod sope;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{
    build_model, model_forward, variant_config, FfnAblation, ForwardOpts, ForwardOutput,
    ModelConfig, NormPolicy, VariantDataset, VariantTier,
};
pub use params::{BoundParams, ParamStore};
pub use tape::{Mode, Tape, VarId};
pub use tensor::{Dtype, Element, Tensor};
