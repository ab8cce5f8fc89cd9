//! Define-by-run autograd tape.
//!
//! Every forward pass builds a fresh `Tape`. Values are stored in an arena
//! and addressed by [`VarId`] in recording order, so a node's inputs always
//! precede it and [`Tape::backward`] can walk the arena once in reverse.
//! A tape is single-use: `backward` consumes it.

#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims};
use crate::tensor::{numel_of, strides_of, Element};

/// Handle to a value recorded on the tape.
pub type VarId = usize;

/// Forward mode flag. Train mode uses batch statistics in batch norm and
/// updates running statistics; eval mode is a pure function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics produced by a train-mode batch norm, for the caller to
/// fold into its running statistics.
#[derive(Debug, Clone)]
pub struct BatchStats<E> {
    pub mean: Vec<E>,
    /// Unbiased variance (divides by m - 1), the running-update convention.
    pub var_unbiased: Vec<E>,
}

enum Op<E> {
    Leaf,
    Add(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, E),
    /// x[r,c] + bias[c], broadcast over rows.
    AddRows {
        x: VarId,
        bias: VarId,
    },
    /// x[b,c,h,w] * s[c] (per-channel scale).
    MulChannel {
        x: VarId,
        scale: VarId,
    },
    /// x[b,c,h,w] + t[c] (per-channel shift).
    AddChannel {
        x: VarId,
        shift: VarId,
    },
    /// 2-D or batched 3-D contraction; `trans_b` contracts against b^T.
    Matmul {
        a: VarId,
        b: VarId,
        trans_b: bool,
    },
    Reshape(VarId),
    Permute {
        a: VarId,
        perm: Vec<usize>,
    },
    Slice {
        a: VarId,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<VarId>,
        axis: usize,
    },
    /// Broadcast a length-1 axis to n copies.
    Repeat {
        a: VarId,
        axis: usize,
    },
    MeanAxis {
        a: VarId,
        axis: usize,
    },
    SumAll(VarId),
    Gelu(VarId),
    /// Softmax over the last axis; backward reads the node's own output.
    Softmax(VarId),
    LayerNorm {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        mean: Vec<E>,
        invstd: Vec<E>,
    },
    BatchNorm {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        mean: Vec<E>,
        invstd: Vec<E>,
        train: bool,
    },
    Conv2d {
        x: VarId,
        w: VarId,
        bias: Option<VarId>,
        dims: ConvDims,
    },
    /// Mean cross-entropy over the batch, fused with log-softmax.
    CrossEntropy {
        logits: VarId,
        targets: Vec<usize>,
        probs: Vec<E>,
    },
    /// Elementwise multiply by a fixed 0-or-1/keep mask.
    Dropout {
        a: VarId,
        mask: Vec<E>,
    },
}

impl<E> Op<E> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRows { .. } => "add_rows",
            Op::MulChannel { .. } => "mul_channel",
            Op::AddChannel { .. } => "add_channel",
            Op::Matmul { .. } => "matmul",
            Op::Reshape(..) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Repeat { .. } => "repeat",
            Op::MeanAxis { .. } => "mean_axis",
            Op::SumAll(..) => "sum_all",
            Op::Gelu(..) => "gelu",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layernorm",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::Conv2d { .. } => "conv2d",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Dropout { .. } => "dropout",
        }
    }
}

struct Node<E> {
    shape: Vec<usize>,
    data: Vec<E>,
    op: Op<E>,
    /// True when some ancestor leaf requires grad.
    track: bool,
    /// True for leaves that requested a gradient.
    is_param: bool,
    grad: Option<Vec<E>>,
    label: Option<String>,
}

pub struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
    consumed: bool,
    finite_checks: bool,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    /// Fresh tape. Finite-value checks after every op follow
    /// `debug_assertions`; see [`Tape::set_finite_checks`].
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
            finite_checks: cfg!(debug_assertions),
        }
    }

    /// Enable or disable the per-op NaN/Inf scan. Training loops disable it
    /// and watch the loss instead.
    pub fn set_finite_checks(&mut self, on: bool) {
        self.finite_checks = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn data(&self, id: VarId) -> &[E] {
        &self.nodes[id].data
    }

    /// Gradient of a requires-grad leaf, populated by [`Tape::backward`].
    pub fn grad(&self, id: VarId) -> Option<&[E]> {
        self.nodes[id].grad.as_deref()
    }

    /// First non-finite value on the tape, as (label-or-op, flat index).
    /// Used by training loops to turn a NaN loss into a diagnostic.
    pub fn first_non_finite(&self) -> Option<(String, usize)> {
        for node in &self.nodes {
            if let Some(i) = node.data.iter().position(|v| !v.is_finite()) {
                let name = node
                    .label
                    .clone()
                    .unwrap_or_else(|| node.op.name().to_string());
                return Some((name, i));
            }
        }
        None
    }

    // ── Node construction ────────────────────────────────────────────

    fn push(&mut self, shape: Vec<usize>, data: Vec<E>, op: Op<E>, track: bool) -> Result<VarId> {
        debug_assert_eq!(numel_of(&shape), data.len());
        if self.finite_checks {
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "{} output at flat index {i}",
                    op.name()
                )));
            }
        }
        self.nodes.push(Node {
            shape,
            data,
            op,
            track,
            is_param: false,
            grad: None,
            label: None,
        });
        Ok(self.nodes.len() - 1)
    }

    fn tracked(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].track)
    }

    /// Record an input value. `requires_grad` marks it as a parameter whose
    /// gradient should be materialized by `backward`.
    pub fn leaf(&mut self, shape: &[usize], data: &[E], requires_grad: bool) -> VarId {
        debug_assert_eq!(numel_of(shape), data.len());
        self.nodes.push(Node {
            shape: shape.to_vec(),
            data: data.to_vec(),
            op: Op::Leaf,
            track: requires_grad,
            is_param: requires_grad,
            grad: None,
            label: None,
        });
        self.nodes.len() - 1
    }

    /// Leaf that never receives a gradient (inputs, constants).
    pub fn constant(&mut self, shape: &[usize], data: &[E]) -> VarId {
        self.leaf(shape, data, false)
    }

    pub fn set_label(&mut self, id: VarId, label: impl Into<String>) {
        self.nodes[id].label = Some(label.into());
    }

    // ── Elementwise and broadcast ops ────────────────────────────────

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape("add", a, b)?;
        let data = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a].shape.clone();
        let track = self.tracked(&[a, b]);
        self.push(shape, data, Op::Add(a, b), track)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape("mul", a, b)?;
        let data = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.nodes[a].shape.clone();
        let track = self.tracked(&[a, b]);
        self.push(shape, data, Op::Mul(a, b), track)
    }

    pub fn scale(&mut self, a: VarId, c: E) -> Result<VarId> {
        let data = self.nodes[a].data.iter().map(|&x| x * c).collect();
        let shape = self.nodes[a].shape.clone();
        let track = self.tracked(&[a]);
        self.push(shape, data, Op::Scale(a, c), track)
    }

    pub fn add_rows(&mut self, x: VarId, bias: VarId) -> Result<VarId> {
        let (xs, bs) = (&self.nodes[x].shape, &self.nodes[bias].shape);
        if xs.len() != 2 || bs.len() != 1 || xs[1] != bs[0] {
            return Err(Error::ShapeMismatch {
                context: "add_rows",
                lhs: xs.clone(),
                rhs: bs.clone(),
            });
        }
        let (rows, cols) = (xs[0], xs[1]);
        let mut data = self.nodes[x].data.clone();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += self.nodes[bias].data[c];
            }
        }
        let shape = xs.clone();
        let track = self.tracked(&[x, bias]);
        self.push(shape, data, Op::AddRows { x, bias }, track)
    }

    pub fn mul_channel(&mut self, x: VarId, scale: VarId) -> Result<VarId> {
        self.channel_compat("mul_channel", x, scale)?;
        let data = self.apply_per_channel(x, scale, |v, s| v * s);
        let shape = self.nodes[x].shape.clone();
        let track = self.tracked(&[x, scale]);
        self.push(shape, data, Op::MulChannel { x, scale }, track)
    }

    pub fn add_channel(&mut self, x: VarId, shift: VarId) -> Result<VarId> {
        self.channel_compat("add_channel", x, shift)?;
        let data = self.apply_per_channel(x, shift, |v, s| v + s);
        let shape = self.nodes[x].shape.clone();
        let track = self.tracked(&[x, shift]);
        self.push(shape, data, Op::AddChannel { x, shift }, track)
    }

    fn channel_compat(&self, context: &'static str, x: VarId, per_c: VarId) -> Result<()> {
        let (xs, cs) = (&self.nodes[x].shape, &self.nodes[per_c].shape);
        if xs.len() != 4 || cs.len() != 1 || xs[1] != cs[0] {
            return Err(Error::ShapeMismatch {
                context,
                lhs: xs.clone(),
                rhs: cs.clone(),
            });
        }
        Ok(())
    }

    fn apply_per_channel(&self, x: VarId, per_c: VarId, f: impl Fn(E, E) -> E) -> Vec<E> {
        let xs = &self.nodes[x].shape;
        let (b, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let xd = &self.nodes[x].data;
        let cd = &self.nodes[per_c].data;
        let mut out = Vec::with_capacity(xd.len());
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                let s = cd[ci];
                out.extend(xd[base..base + hw].iter().map(|&v| f(v, s)));
            }
        }
        out
    }

    // ── Contractions ─────────────────────────────────────────────────

    fn matmul_impl(&mut self, a: VarId, b: VarId, trans_b: bool) -> Result<VarId> {
        let (asp, bsp) = (self.nodes[a].shape.clone(), self.nodes[b].shape.clone());
        let rank = asp.len();
        let batched = rank == 3;
        let err = || Error::ShapeMismatch {
            context: "matmul",
            lhs: asp.clone(),
            rhs: bsp.clone(),
        };
        if !(rank == 2 || rank == 3) || bsp.len() != rank {
            return Err(err());
        }
        let g = if batched {
            if asp[0] != bsp[0] {
                return Err(err());
            }
            asp[0]
        } else {
            1
        };
        let off = if batched { 1 } else { 0 };
        let (m, k) = (asp[off], asp[off + 1]);
        let (n, bk) = if trans_b {
            (bsp[off], bsp[off + 1])
        } else {
            (bsp[off + 1], bsp[off])
        };
        if bk != k {
            return Err(err());
        }
        let mut data = vec![E::zero(); g * m * n];
        for gi in 0..g {
            let av = &self.nodes[a].data[gi * m * k..(gi + 1) * m * k];
            let bv = &self.nodes[b].data[gi * k * n..(gi + 1) * k * n];
            let cv = &mut data[gi * m * n..(gi + 1) * m * n];
            if trans_b {
                kernels::mm_nt(av, bv, cv, m, k, n);
            } else {
                kernels::mm_nn(av, bv, cv, m, k, n);
            }
        }
        let shape = if batched { vec![g, m, n] } else { vec![m, n] };
        let track = self.tracked(&[a, b]);
        self.push(shape, data, Op::Matmul { a, b, trans_b }, track)
    }

    /// a[m,k] @ b[k,n], or batched with equal leading extents.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.matmul_impl(a, b, false)
    }

    /// a[m,k] @ b[n,k]^T; the natural layout for `[out,in]` weights.
    pub fn matmul_nt(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.matmul_impl(a, b, true)
    }

    // ── Shape ops ────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> Result<VarId> {
        if numel_of(shape) != self.nodes[a].data.len() {
            return Err(Error::ShapeMismatch {
                context: "reshape",
                lhs: self.nodes[a].shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.nodes[a].data.clone();
        let track = self.tracked(&[a]);
        self.push(shape.to_vec(), data, Op::Reshape(a), track)
    }

    pub fn permute(&mut self, a: VarId, perm: &[usize]) -> Result<VarId> {
        let in_shape = self.nodes[a].shape.clone();
        if !is_permutation(perm, in_shape.len()) {
            return Err(Error::Shape(format!(
                "permute {:?} is not a permutation of rank {}",
                perm,
                in_shape.len()
            )));
        }
        let (data, out_shape) = permute_data(&self.nodes[a].data, &in_shape, perm);
        let track = self.tracked(&[a]);
        self.push(
            out_shape,
            data,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            track,
        )
    }

    pub fn slice(&mut self, a: VarId, axis: usize, start: usize, len: usize) -> Result<VarId> {
        let shape = self.nodes[a].shape.clone();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape(format!(
                "slice [{start}, {start}+{len}) on axis {axis} of {shape:?}"
            )));
        }
        let (outer, inner) = split_at_axis(&shape, axis);
        let ax = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        let src = &self.nodes[a].data;
        for o in 0..outer {
            let base = (o * ax + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let track = self.tracked(&[a]);
        self.push(out_shape, data, Op::Slice { a, axis, start }, track)
    }

    pub fn concat(&mut self, parts: &[VarId], axis: usize) -> Result<VarId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat needs at least one part".into()));
        }
        let first = self.nodes[parts[0]].shape.clone();
        if axis >= first.len() {
            return Err(Error::Shape(format!(
                "concat axis {axis} out of range for {first:?}"
            )));
        }
        let mut total_ax = 0;
        for &p in parts {
            let s = &self.nodes[p].shape;
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    context: "concat",
                    lhs: first.clone(),
                    rhs: s.clone(),
                });
            }
            total_ax += s[axis];
        }
        let (outer, inner) = split_at_axis(&first, axis);
        let mut out_shape = first;
        out_shape[axis] = total_ax;
        let mut data = vec![E::zero(); outer * total_ax * inner];
        let mut offset = 0;
        for &p in parts {
            let ax = self.nodes[p].shape[axis];
            let src = &self.nodes[p].data;
            for o in 0..outer {
                let dst = (o * total_ax + offset) * inner;
                let s = o * ax * inner;
                data[dst..dst + ax * inner].copy_from_slice(&src[s..s + ax * inner]);
            }
            offset += ax;
        }
        let track = self.tracked(parts);
        self.push(
            out_shape,
            data,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            track,
        )
    }

    /// Broadcast a length-1 axis to `n` copies.
    pub fn repeat(&mut self, a: VarId, axis: usize, n: usize) -> Result<VarId> {
        let shape = self.nodes[a].shape.clone();
        if axis >= shape.len() || shape[axis] != 1 {
            return Err(Error::Shape(format!(
                "repeat needs extent 1 on axis {axis}, got {shape:?}"
            )));
        }
        let (outer, inner) = split_at_axis(&shape, axis);
        let src = &self.nodes[a].data;
        let mut data = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let block = &src[o * inner..(o + 1) * inner];
            for _ in 0..n {
                data.extend_from_slice(block);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = n;
        let track = self.tracked(&[a]);
        self.push(out_shape, data, Op::Repeat { a, axis }, track)
    }

    // ── Reductions ───────────────────────────────────────────────────

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, a: VarId, axis: usize) -> Result<VarId> {
        let shape = self.nodes[a].shape.clone();
        if axis >= shape.len() {
            return Err(Error::Shape(format!(
                "mean axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, inner) = split_at_axis(&shape, axis);
        let ax = shape[axis];
        let inv = E::from_f64(1.0 / ax as f64);
        let src = &self.nodes[a].data;
        let mut data = vec![E::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..ax {
                let base = (o * ax + j) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        for v in &mut data {
            *v *= inv;
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let track = self.tracked(&[a]);
        self.push(out_shape, data, Op::MeanAxis { a, axis }, track)
    }

    /// Sum of all elements, as a scalar (shape []).
    pub fn sum_all(&mut self, a: VarId) -> Result<VarId> {
        let mut s = E::zero();
        for &v in &self.nodes[a].data {
            s += v;
        }
        let track = self.tracked(&[a]);
        self.push(vec![], vec![s], Op::SumAll(a), track)
    }

    // ── Nonlinearities and normalizers ───────────────────────────────

    /// Exact GELU: 0.5 * x * (1 + erf(x / sqrt(2))).
    pub fn gelu(&mut self, a: VarId) -> Result<VarId> {
        let inv_sqrt2 = E::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let half = E::from_f64(0.5);
        let data = self.nodes[a]
            .data
            .iter()
            .map(|&x| half * x * (E::one() + (x * inv_sqrt2).erf()))
            .collect();
        let shape = self.nodes[a].shape.clone();
        let track = self.tracked(&[a]);
        self.push(shape, data, Op::Gelu(a), track)
    }

    /// Max-subtracted softmax over the last axis.
    pub fn softmax(&mut self, a: VarId) -> Result<VarId> {
        let shape = self.nodes[a].shape.clone();
        if shape.is_empty() {
            return Err(Error::Shape("softmax needs rank >= 1".into()));
        }
        let d = *shape.last().unwrap();
        let src = &self.nodes[a].data;
        let mut data = Vec::with_capacity(src.len());
        for row in src.chunks(d) {
            let mut mx = row[0];
            for &v in row {
                mx = mx.max(v);
            }
            let mut denom = E::zero();
            let exps: Vec<E> = row
                .iter()
                .map(|&v| {
                    let e = (v - mx).exp();
                    denom += e;
                    e
                })
                .collect();
            data.extend(exps.into_iter().map(|e| e / denom));
        }
        let track = self.tracked(&[a]);
        self.push(shape, data, Op::Softmax(a), track)
    }

    /// Layer norm over the last axis.
    pub fn layernorm(&mut self, x: VarId, gamma: VarId, beta: VarId, eps: f64) -> Result<VarId> {
        let shape = self.nodes[x].shape.clone();
        let d = *shape
            .last()
            .ok_or_else(|| Error::Shape("layernorm needs rank >= 1".into()))?;
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            let s = &self.nodes[id].shape;
            if s != &[d] {
                return Err(Error::ShapeMismatch {
                    context: if name == "gamma" {
                        "layernorm gamma"
                    } else {
                        "layernorm beta"
                    },
                    lhs: shape.clone(),
                    rhs: s.clone(),
                });
            }
        }
        let rows = self.nodes[x].data.len() / d;
        let inv_d = E::from_f64(1.0 / d as f64);
        let eps_e = E::from_f64(eps);
        let mut mean = Vec::with_capacity(rows);
        let mut invstd = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * d);
        let gd = &self.nodes[gamma].data;
        let bd = &self.nodes[beta].data;
        for r in 0..rows {
            let row = &self.nodes[x].data[r * d..(r + 1) * d];
            let mut mu = E::zero();
            for &v in row {
                mu += v;
            }
            mu *= inv_d;
            let mut var = E::zero();
            for &v in row {
                let c = v - mu;
                var += c * c;
            }
            var *= inv_d;
            let istd = E::one() / (var + eps_e).sqrt();
            mean.push(mu);
            invstd.push(istd);
            for (j, &v) in row.iter().enumerate() {
                data.push((v - mu) * istd * gd[j] + bd[j]);
            }
        }
        let track = self.tracked(&[x, gamma, beta]);
        self.push(
            shape,
            data,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                invstd,
            },
            track,
        )
    }

    /// Train-mode batch norm over (B,H,W) per channel. Returns the output
    /// together with the batch statistics for the running-stat update.
    pub fn batchnorm2d_train(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: f64,
    ) -> Result<(VarId, BatchStats<E>)> {
        let shape = self.bn_check(x, gamma, beta)?;
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let m = b * h * w;
        if m < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batchnorm2d train mode needs B*H*W >= 2 per channel, got {m} (shape {shape:?})"
            )));
        }
        let inv_m = E::from_f64(1.0 / m as f64);
        let bessel = E::from_f64(m as f64 / (m as f64 - 1.0));
        let eps_e = E::from_f64(eps);
        let hw = h * w;
        let src = &self.nodes[x].data;
        let mut mean = vec![E::zero(); c];
        let mut var = vec![E::zero(); c];
        for ci in 0..c {
            let mut s = E::zero();
            for bi in 0..b {
                let base = (bi * c + ci) * hw;
                for i in 0..hw {
                    s += src[base + i];
                }
            }
            let mu = s * inv_m;
            let mut v = E::zero();
            for bi in 0..b {
                let base = (bi * c + ci) * hw;
                for i in 0..hw {
                    let d = src[base + i] - mu;
                    v += d * d;
                }
            }
            mean[ci] = mu;
            var[ci] = v * inv_m;
        }
        let invstd: Vec<E> = var.iter().map(|&v| E::one() / (v + eps_e).sqrt()).collect();
        let data = self.bn_apply(x, &mean, &invstd, gamma, beta);
        let stats = BatchStats {
            mean: mean.clone(),
            var_unbiased: var.iter().map(|&v| v * bessel).collect(),
        };
        let track = self.tracked(&[x, gamma, beta]);
        let out = self.push(
            shape,
            data,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                invstd,
                train: true,
            },
            track,
        )?;
        Ok((out, stats))
    }

    /// Eval-mode batch norm: a fixed affine map built from running stats.
    pub fn batchnorm2d_eval(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        running_mean: &[E],
        running_var: &[E],
        eps: f64,
    ) -> Result<VarId> {
        let shape = self.bn_check(x, gamma, beta)?;
        let c = shape[1];
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::Shape(format!(
                "running stats length {} vs {} channels",
                running_mean.len(),
                c
            )));
        }
        let eps_e = E::from_f64(eps);
        let invstd: Vec<E> = running_var
            .iter()
            .map(|&v| E::one() / (v + eps_e).sqrt())
            .collect();
        let data = self.bn_apply(x, running_mean, &invstd, gamma, beta);
        let track = self.tracked(&[x, gamma, beta]);
        self.push(
            shape,
            data,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: running_mean.to_vec(),
                invstd,
                train: false,
            },
            track,
        )
    }

    fn bn_check(&self, x: VarId, gamma: VarId, beta: VarId) -> Result<Vec<usize>> {
        let shape = self.nodes[x].shape.clone();
        if shape.len() != 4 {
            return Err(Error::Shape(format!(
                "batchnorm2d needs [B,C,H,W], got {shape:?}"
            )));
        }
        let c = shape[1];
        for id in [gamma, beta] {
            if self.nodes[id].shape != [c] {
                return Err(Error::ShapeMismatch {
                    context: "batchnorm2d affine",
                    lhs: shape.clone(),
                    rhs: self.nodes[id].shape.clone(),
                });
            }
        }
        Ok(shape)
    }

    fn bn_apply(&self, x: VarId, mean: &[E], invstd: &[E], gamma: VarId, beta: VarId) -> Vec<E> {
        let shape = &self.nodes[x].shape;
        let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let src = &self.nodes[x].data;
        let gd = &self.nodes[gamma].data;
        let bd = &self.nodes[beta].data;
        let mut out = Vec::with_capacity(src.len());
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                let (mu, istd, g, be) = (mean[ci], invstd[ci], gd[ci], bd[ci]);
                out.extend(
                    src[base..base + hw]
                        .iter()
                        .map(|&v| (v - mu) * istd * g + be),
                );
            }
        }
        out
    }

    /// Direct 2-D cross-correlation with zero padding.
    pub fn conv2d(
        &mut self,
        x: VarId,
        w: VarId,
        bias: Option<VarId>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<VarId> {
        let xs = self.nodes[x].shape.clone();
        let ws = self.nodes[w].shape.clone();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::ShapeMismatch {
                context: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (b, c_in, h_in, w_in) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::Config(format!(
                "conv2d groups={groups} must divide c_in={c_in} and c_out={c_out}"
            )));
        }
        if wc != c_in / groups {
            return Err(Error::ShapeMismatch {
                context: "conv2d weight channels",
                lhs: xs,
                rhs: ws,
            });
        }
        if let Some(bid) = bias {
            if self.nodes[bid].shape != [c_out] {
                return Err(Error::ShapeMismatch {
                    context: "conv2d bias",
                    lhs: ws,
                    rhs: self.nodes[bid].shape.clone(),
                });
            }
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        if h_in + 2 * pad < kh || w_in + 2 * pad < kw {
            return Err(Error::Shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {h_in}x{w_in} (pad {pad})"
            )));
        }
        let dims = ConvDims {
            batch: b,
            c_in,
            c_out,
            h_in,
            w_in,
            kh,
            kw,
            stride,
            pad,
            groups,
        };
        let (ho, wo) = (dims.h_out(), dims.w_out());
        let mut data = vec![E::zero(); b * c_out * ho * wo];
        kernels::conv2d_forward(
            &self.nodes[x].data,
            &self.nodes[w].data,
            bias.map(|bid| self.nodes[bid].data.as_slice()),
            &mut data,
            &dims,
        );
        let mut ids = vec![x, w];
        if let Some(bid) = bias {
            ids.push(bid);
        }
        let track = self.tracked(&ids);
        self.push(
            vec![b, c_out, ho, wo],
            data,
            Op::Conv2d { x, w, bias, dims },
            track,
        )
    }

    /// Mean cross-entropy of logits [B,K] against integer targets.
    pub fn cross_entropy(&mut self, logits: VarId, targets: &[usize]) -> Result<VarId> {
        let shape = self.nodes[logits].shape.clone();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::Contract(format!(
                "cross_entropy needs logits [B,K] with B == targets.len(); got {shape:?} and {}",
                targets.len()
            )));
        }
        let (b, k) = (shape[0], shape[1]);
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Contract(format!(
                "target class {t} out of range for {k} classes"
            )));
        }
        let src = &self.nodes[logits].data;
        let mut probs = Vec::with_capacity(b * k);
        let mut loss = E::zero();
        for (bi, row) in src.chunks(k).enumerate() {
            let mut mx = row[0];
            for &v in row {
                mx = mx.max(v);
            }
            let mut denom = E::zero();
            for &v in row {
                denom += (v - mx).exp();
            }
            let lse = mx + denom.ln();
            for &v in row {
                probs.push((v - lse).exp());
            }
            loss += lse - row[targets[bi]];
        }
        loss *= E::from_f64(1.0 / b as f64);
        let track = self.tracked(&[logits]);
        self.push(
            vec![],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            track,
        )
    }

    /// Multiply by a caller-built mask whose entries are 0 or 1/keep_prob.
    pub fn dropout(&mut self, a: VarId, mask: Vec<E>) -> Result<VarId> {
        if mask.len() != self.nodes[a].data.len() {
            return Err(Error::Contract(format!(
                "dropout mask length {} vs input {}",
                mask.len(),
                self.nodes[a].data.len()
            )));
        }
        let data = self.nodes[a]
            .data
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let shape = self.nodes[a].shape.clone();
        let track = self.tracked(&[a]);
        self.push(shape, data, Op::Dropout { a, mask }, track)
    }

    fn same_shape(&self, context: &'static str, a: VarId, b: VarId) -> Result<()> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::ShapeMismatch {
                context,
                lhs: self.nodes[a].shape.clone(),
                rhs: self.nodes[b].shape.clone(),
            });
        }
        Ok(())
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients accumulate into every
    /// requires-grad leaf; the tape is consumed (a second call errors).
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract(
                "tape already consumed by a previous backward".into(),
            ));
        }
        if self.nodes[loss].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss].shape
            )));
        }
        self.consumed = true;
        if !self.nodes[loss].track {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(vec![E::one()]);
        let mut param_grads: Vec<(VarId, Vec<E>)> = Vec::new();

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.track {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    if node.is_param {
                        param_grads.push((id, g));
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, &g);
                    self.acc(&mut grads, *b, &g);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga: Vec<E> = g
                        .iter()
                        .zip(&self.nodes[b].data)
                        .map(|(&gi, &bi)| gi * bi)
                        .collect();
                    let gb: Vec<E> = g
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(&gi, &ai)| gi * ai)
                        .collect();
                    self.acc_owned(&mut grads, a, ga);
                    self.acc_owned(&mut grads, b, gb);
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    let ga: Vec<E> = g.iter().map(|&gi| gi * c).collect();
                    self.acc_owned(&mut grads, a, ga);
                }
                Op::AddRows { x, bias } => {
                    let (x, bias) = (*x, *bias);
                    let cols = self.nodes[bias].data.len();
                    let mut gb = vec![E::zero(); cols];
                    for row in g.chunks(cols) {
                        for (j, &v) in row.iter().enumerate() {
                            gb[j] += v;
                        }
                    }
                    self.acc(&mut grads, x, &g);
                    self.acc_owned(&mut grads, bias, gb);
                }
                Op::MulChannel { x, scale } => {
                    let (x, scale) = (*x, *scale);
                    let shape = &self.nodes[x].shape;
                    let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                    let sd = &self.nodes[scale].data;
                    let xd = &self.nodes[x].data;
                    let mut gx = vec![E::zero(); xd.len()];
                    let mut gs = vec![E::zero(); c];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * hw;
                            for i in 0..hw {
                                gx[base + i] = g[base + i] * sd[ci];
                                gs[ci] += g[base + i] * xd[base + i];
                            }
                        }
                    }
                    self.acc_owned(&mut grads, x, gx);
                    self.acc_owned(&mut grads, scale, gs);
                }
                Op::AddChannel { x, shift } => {
                    let (x, shift) = (*x, *shift);
                    let shape = &self.nodes[x].shape;
                    let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                    let mut gt = vec![E::zero(); c];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * hw;
                            for i in 0..hw {
                                gt[ci] += g[base + i];
                            }
                        }
                    }
                    self.acc(&mut grads, x, &g);
                    self.acc_owned(&mut grads, shift, gt);
                }
                Op::Matmul { a, b, trans_b } => {
                    let (a, b, trans_b) = (*a, *b, *trans_b);
                    let asp = &self.nodes[a].shape;
                    let batched = asp.len() == 3;
                    let (gc, off) = if batched { (asp[0], 1) } else { (1, 0) };
                    let (m, k) = (asp[off], asp[off + 1]);
                    let n = if trans_b {
                        self.nodes[b].shape[off]
                    } else {
                        self.nodes[b].shape[off + 1]
                    };
                    let ad = &self.nodes[a].data;
                    let bd = &self.nodes[b].data;
                    let mut ga = vec![E::zero(); ad.len()];
                    let mut gb = vec![E::zero(); bd.len()];
                    for gi in 0..gc {
                        let gs = &g[gi * m * n..(gi + 1) * m * n];
                        let av = &ad[gi * m * k..(gi + 1) * m * k];
                        let bv = &bd[gi * k * n..(gi + 1) * k * n];
                        let gav = &mut ga[gi * m * k..(gi + 1) * m * k];
                        let gbv = &mut gb[gi * k * n..(gi + 1) * k * n];
                        if trans_b {
                            // c = a @ b^T: da = g @ b; db = g^T @ a
                            kernels::mm_nn(gs, bv, gav, m, n, k);
                            kernels::mm_tn(gs, av, gbv, n, m, k);
                        } else {
                            // c = a @ b: da = g @ b^T; db = a^T @ g
                            kernels::mm_nt(gs, bv, gav, m, n, k);
                            kernels::mm_tn(av, gs, gbv, k, m, n);
                        }
                    }
                    self.acc_owned(&mut grads, a, ga);
                    self.acc_owned(&mut grads, b, gb);
                }
                Op::Reshape(a) => {
                    self.acc(&mut grads, *a, &g);
                }
                Op::Permute { a, perm } => {
                    let a = *a;
                    let inv = invert_permutation(perm);
                    let (ga, _) = permute_data(&g, &self.nodes[id].shape, &inv);
                    self.acc_owned(&mut grads, a, ga);
                }
                Op::Slice { a, axis, start } => {
                    let (a, axis, start) = (*a, *axis, *start);
                    let in_shape = &self.nodes[a].shape;
                    let out_shape = &self.nodes[id].shape;
                    let (outer, inner) = split_at_axis(in_shape, axis);
                    let (ax_in, ax_out) = (in_shape[axis], out_shape[axis]);
                    let mut ga = vec![E::zero(); self.nodes[a].data.len()];
                    for o in 0..outer {
                        let dst = (o * ax_in + start) * inner;
                        let src = o * ax_out * inner;
                        for i in 0..ax_out * inner {
                            ga[dst + i] += g[src + i];
                        }
                    }
                    self.acc_owned(&mut grads, a, ga);
                }
                Op::Concat { parts, axis } => {
                    let (parts, axis) = (parts.clone(), *axis);
                    let out_shape = self.nodes[id].shape.clone();
                    let (outer, inner) = split_at_axis(&out_shape, axis);
                    let total_ax = out_shape[axis];
                    let mut offset = 0;
                    for p in parts {
                        let ax = self.nodes[p].shape[axis];
                        let mut gp = vec![E::zero(); self.nodes[p].data.len()];
                        for o in 0..outer {
                            let src = (o * total_ax + offset) * inner;
                            let dst = o * ax * inner;
                            gp[dst..dst + ax * inner].copy_from_slice(&g[src..src + ax * inner]);
                        }
                        offset += ax;
                        self.acc_owned(&mut grads, p, gp);
                    }
                }
                Op::Repeat { a, axis } => {
                    let (a, axis) = (*a, *axis);
                    let out_shape = &self.nodes[id].shape;
                    let (outer, inner) = split_at_axis(out_shape, axis);
                    let n = out_shape[axis];
                    let mut ga = vec![E::zero(); outer * inner];
                    for o in 0..outer {
                        for j in 0..n {
                            let base = (o * n + j) * inner;
                            for i in 0..inner {
                                ga[o * inner + i] += g[base + i];
                            }
                        }
                    }
                    self.acc_owned(&mut grads, a, ga);
                }
                Op::MeanAxis { a, axis } => {
                    let (a, axis) = (*a, *axis);
                    let in_shape = &self.nodes[a].shape;
                    let (outer, inner) = split_at_axis(in_shape, axis);
                    let ax = in_shape[axis];
                    let inv = E::from_f64(1.0 / ax as f64);
                    let mut ga = vec![E::zero(); self.nodes[a].data.len()];
                    for o in 0..outer {
                        for j in 0..ax {
                            let base = (o * ax + j) * inner;
                            for i in 0..inner {
                                ga[base + i] = g[o * inner + i] * inv;
                            }
                        }
                    }
                    self.acc_owned(&mut grads, a, ga);
                }
                Op::SumAll(a) => {
                    let a = *a;
                    let ga = vec![g[0]; self.nodes[a].data.len()];
                    self.acc_owned(&mut grads, a, ga);
                }
                Op::Gelu(a) => {
                    let a = *a;
                    let inv_sqrt2 = E::from_f64(std::f64::consts::FRAC_1_SQRT_2);
                    let inv_sqrt_2pi = E::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
                    let half = E::from_f64(0.5);
                    let ga: Vec<E> = self.nodes[a]
                        .data
                        .iter()
                        .zip(&g)
                        .map(|(&x, &gi)| {
                            let cdf = half * (E::one() + (x * inv_sqrt2).erf());
                            let pdf = (-(half * x * x)).exp() * inv_sqrt_2pi;
                            gi * (cdf + x * pdf)
                        })
                        .collect();
                    self.acc_owned(&mut grads, a, ga);
                }
                Op::Softmax(a) => {
                    let a = *a;
                    let d = *self.nodes[id].shape.last().unwrap();
                    let s = &self.nodes[id].data;
                    let mut ga = vec![E::zero(); s.len()];
                    for r in 0..s.len() / d {
                        let srow = &s[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        let mut dot = E::zero();
                        for j in 0..d {
                            dot += srow[j] * grow[j];
                        }
                        for j in 0..d {
                            ga[r * d + j] = srow[j] * (grow[j] - dot);
                        }
                    }
                    self.acc_owned(&mut grads, a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    invstd,
                } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let d = *self.nodes[id].shape.last().unwrap();
                    let inv_d = E::from_f64(1.0 / d as f64);
                    let xd = &self.nodes[x].data;
                    let gd = &self.nodes[gamma].data;
                    let rows = xd.len() / d;
                    let mut gx = vec![E::zero(); xd.len()];
                    let mut ggamma = vec![E::zero(); d];
                    let mut gbeta = vec![E::zero(); d];
                    for r in 0..rows {
                        let (mu, istd) = (mean[r], invstd[r]);
                        let xrow = &xd[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        let mut m1 = E::zero();
                        let mut m2 = E::zero();
                        for j in 0..d {
                            let xhat = (xrow[j] - mu) * istd;
                            let dyg = grow[j] * gd[j];
                            m1 += dyg;
                            m2 += dyg * xhat;
                            ggamma[j] += grow[j] * xhat;
                            gbeta[j] += grow[j];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        for j in 0..d {
                            let xhat = (xrow[j] - mu) * istd;
                            let dyg = grow[j] * gd[j];
                            gx[r * d + j] = istd * (dyg - m1 - xhat * m2);
                        }
                    }
                    self.acc_owned(&mut grads, x, gx);
                    self.acc_owned(&mut grads, gamma, ggamma);
                    self.acc_owned(&mut grads, beta, gbeta);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    invstd,
                    train,
                } => {
                    let (x, gamma, beta, train) = (*x, *gamma, *beta, *train);
                    let shape = &self.nodes[x].shape;
                    let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                    let m = b * hw;
                    let inv_m = E::from_f64(1.0 / m as f64);
                    let xd = &self.nodes[x].data;
                    let gd = &self.nodes[gamma].data;
                    let mut gx = vec![E::zero(); xd.len()];
                    let mut ggamma = vec![E::zero(); c];
                    let mut gbeta = vec![E::zero(); c];
                    for ci in 0..c {
                        let (mu, istd, gam) = (mean[ci], invstd[ci], gd[ci]);
                        let mut m1 = E::zero();
                        let mut m2 = E::zero();
                        for bi in 0..b {
                            let base = (bi * c + ci) * hw;
                            for i in 0..hw {
                                let xhat = (xd[base + i] - mu) * istd;
                                let gi = g[base + i];
                                m1 += gi;
                                m2 += gi * xhat;
                                ggamma[ci] += gi * xhat;
                                gbeta[ci] += gi;
                            }
                        }
                        if train {
                            m1 *= inv_m;
                            m2 *= inv_m;
                            for bi in 0..b {
                                let base = (bi * c + ci) * hw;
                                for i in 0..hw {
                                    let xhat = (xd[base + i] - mu) * istd;
                                    gx[base + i] = gam * istd * (g[base + i] - m1 - xhat * m2);
                                }
                            }
                        } else {
                            for bi in 0..b {
                                let base = (bi * c + ci) * hw;
                                for i in 0..hw {
                                    gx[base + i] = g[base + i] * gam * istd;
                                }
                            }
                        }
                    }
                    self.acc_owned(&mut grads, x, gx);
                    self.acc_owned(&mut grads, gamma, ggamma);
                    self.acc_owned(&mut grads, beta, gbeta);
                }
                Op::Conv2d { x, w, bias, dims } => {
                    let (x, w, bias, dims) = (*x, *w, *bias, *dims);
                    let mut gx = vec![E::zero(); self.nodes[x].data.len()];
                    let mut gw = vec![E::zero(); self.nodes[w].data.len()];
                    kernels::conv2d_backward_input(&g, &self.nodes[w].data, &mut gx, &dims);
                    kernels::conv2d_backward_weight(&g, &self.nodes[x].data, &mut gw, &dims);
                    if let Some(bid) = bias {
                        let mut gb = vec![E::zero(); self.nodes[bid].data.len()];
                        kernels::conv2d_backward_bias(&g, &mut gb, &dims);
                        self.acc_owned(&mut grads, bid, gb);
                    }
                    self.acc_owned(&mut grads, x, gx);
                    self.acc_owned(&mut grads, w, gw);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let logits = *logits;
                    let bsz = targets.len();
                    let k = probs.len() / bsz;
                    let inv_b = E::from_f64(1.0 / bsz as f64);
                    let g0 = g[0];
                    let mut gl = vec![E::zero(); probs.len()];
                    for bi in 0..bsz {
                        for j in 0..k {
                            let indicator = if j == targets[bi] {
                                E::one()
                            } else {
                                E::zero()
                            };
                            gl[bi * k + j] = g0 * (probs[bi * k + j] - indicator) * inv_b;
                        }
                    }
                    self.acc_owned(&mut grads, logits, gl);
                }
                Op::Dropout { a, mask } => {
                    let a = *a;
                    let ga: Vec<E> = g.iter().zip(mask).map(|(&gi, &m)| gi * m).collect();
                    self.acc_owned(&mut grads, a, ga);
                }
            }
        }

        for (id, g) in param_grads {
            self.nodes[id].grad = Some(g);
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Vec<E>>], id: VarId, contribution: &[E]) {
        if !self.nodes[id].track {
            return;
        }
        match &mut grads[id] {
            Some(buf) => {
                for (dst, &src) in buf.iter_mut().zip(contribution) {
                    *dst += src;
                }
            }
            slot @ None => *slot = Some(contribution.to_vec()),
        }
    }

    fn acc_owned(&self, grads: &mut [Option<Vec<E>>], id: VarId, contribution: Vec<E>) {
        if !self.nodes[id].track {
            return;
        }
        match &mut grads[id] {
            Some(buf) => {
                for (dst, src) in buf.iter_mut().zip(contribution) {
                    *dst += src;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }
}

fn is_permutation(perm: &[usize], rank: usize) -> bool {
    if perm.len() != rank {
        return false;
    }
    let mut seen = vec![false; rank];
    for &p in perm {
        if p >= rank || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Rearrange data so that output axis i is input axis perm[i].
fn permute_data<E: Element>(
    data: &[E],
    in_shape: &[usize],
    perm: &[usize],
) -> (Vec<E>, Vec<usize>) {
    let rank = in_shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = strides_of(in_shape);
    let out_numel = numel_of(&out_shape);
    let mut out = Vec::with_capacity(out_numel);
    let mut idx = vec![0usize; rank];
    for _ in 0..out_numel {
        let mut src = 0;
        for (d, &i) in idx.iter().enumerate() {
            src += i * in_strides[perm[d]];
        }
        out.push(data[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

/// Split a shape at `axis` into (product of axes before, product of axes after).
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}
