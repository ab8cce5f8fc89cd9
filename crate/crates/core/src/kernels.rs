//! Raw numeric loops behind the tape ops.
//!
//! All kernels accumulate into caller-provided buffers so forward and
//! backward passes share the same code paths. Accumulation over the
//! contraction index is always in ascending order, which keeps results
//! reproducible run to run.

#![allow(clippy::needless_range_loop)]

use crate::tensor::Element;

/// c[m,n] += a[m,k] @ b[k,n]
pub fn mm_nn<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += aip * b_row[j];
            }
        }
    }
}

/// c[m,n] += a[m,k] @ b[n,k]^T
pub fn mm_nt<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = E::zero();
            for p in 0..k {
                s += a_row[p] * b_row[p];
            }
            c[i * n + j] += s;
        }
    }
}

/// c[m,n] += a[k,m]^T @ b[k,n]
pub fn mm_tn<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a_row[i];
            let c_row = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] += api * b_row[j];
            }
        }
    }
}

/// Geometry of one conv2d call, shared by forward and the three backward
/// kernels. Cross-correlation semantics, zero padding.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvDims {
    pub fn h_out(&self) -> usize {
        (self.h_in + 2 * self.pad - self.kh) / self.stride + 1
    }
    pub fn w_out(&self) -> usize {
        (self.w_in + 2 * self.pad - self.kw) / self.stride + 1
    }
    fn cg_in(&self) -> usize {
        self.c_in / self.groups
    }
    fn cg_out(&self) -> usize {
        self.c_out / self.groups
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Valid kernel-row/col index range for one output position: indices r with
/// 0 <= o*stride + r - pad < extent.
#[inline]
fn valid_range(o: usize, stride: usize, pad: usize, k: usize, extent: usize) -> (usize, usize) {
    let base = o * stride;
    let lo = pad.saturating_sub(base);
    let hi = k.min((extent + pad).saturating_sub(base));
    (lo, hi.max(lo))
}

/// y[b,co,oh,ow] = bias[co] + sum_{cg,r,s} x[b,ci,ih,iw] * w[co,cg,r,s]
pub fn conv2d_forward<E: Element>(x: &[E], w: &[E], bias: Option<&[E]>, y: &mut [E], d: &ConvDims) {
    if d.is_pointwise() {
        // 1x1 conv: per (batch, group) a plain channel-mixing matmul over
        // the spatial plane. y[co, p] += w[co, cg] * x[ci, p].
        let hw = d.h_in * d.w_in;
        let (cg_in, cg_out) = (d.cg_in(), d.cg_out());
        for b in 0..d.batch {
            for g in 0..d.groups {
                for co_local in 0..cg_out {
                    let co = g * cg_out + co_local;
                    let y_row = &mut y[(b * d.c_out + co) * hw..(b * d.c_out + co + 1) * hw];
                    match bias {
                        Some(bv) => y_row.fill(bv[co]),
                        None => y_row.fill(E::zero()),
                    }
                    for cg in 0..cg_in {
                        let ci = g * cg_in + cg;
                        let wv = w[co * cg_in + cg];
                        let x_row = &x[(b * d.c_in + ci) * hw..(b * d.c_in + ci + 1) * hw];
                        for p in 0..hw {
                            y_row[p] += wv * x_row[p];
                        }
                    }
                }
            }
        }
        return;
    }
    let (ho, wo) = (d.h_out(), d.w_out());
    let (cg_in, cg_out) = (d.cg_in(), d.cg_out());
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let g = co / cg_out;
            let y_base = (b * d.c_out + co) * ho * wo;
            for oh in 0..ho {
                let (r_lo, r_hi) = valid_range(oh, d.stride, d.pad, d.kh, d.h_in);
                for ow in 0..wo {
                    let (c_lo, c_hi) = valid_range(ow, d.stride, d.pad, d.kw, d.w_in);
                    let mut s = bias.map_or(E::zero(), |bv| bv[co]);
                    for cg in 0..cg_in {
                        let ci = g * cg_in + cg;
                        let x_base = (b * d.c_in + ci) * d.h_in * d.w_in;
                        let w_base = (co * cg_in + cg) * d.kh * d.kw;
                        for r in r_lo..r_hi {
                            let ih = oh * d.stride + r - d.pad;
                            let x_row = x_base + ih * d.w_in + ow * d.stride;
                            let w_row = w_base + r * d.kw;
                            for c in c_lo..c_hi {
                                s += x[x_row + c - d.pad] * w[w_row + c];
                            }
                        }
                    }
                    y[y_base + oh * wo + ow] = s;
                }
            }
        }
    }
}

/// dx[b,ci,ih,iw] += sum w[co,cg,r,s] * dy[b,co,oh,ow]
pub fn conv2d_backward_input<E: Element>(dy: &[E], w: &[E], dx: &mut [E], d: &ConvDims) {
    if d.is_pointwise() {
        let hw = d.h_in * d.w_in;
        let (cg_in, cg_out) = (d.cg_in(), d.cg_out());
        for b in 0..d.batch {
            for g in 0..d.groups {
                for cg in 0..cg_in {
                    let ci = g * cg_in + cg;
                    let dx_row = &mut dx[(b * d.c_in + ci) * hw..(b * d.c_in + ci + 1) * hw];
                    for co_local in 0..cg_out {
                        let co = g * cg_out + co_local;
                        let wv = w[co * cg_in + cg];
                        let dy_row = &dy[(b * d.c_out + co) * hw..(b * d.c_out + co + 1) * hw];
                        for p in 0..hw {
                            dx_row[p] += wv * dy_row[p];
                        }
                    }
                }
            }
        }
        return;
    }
    let (ho, wo) = (d.h_out(), d.w_out());
    let (cg_in, cg_out) = (d.cg_in(), d.cg_out());
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let g = co / cg_out;
            let dy_base = (b * d.c_out + co) * ho * wo;
            for oh in 0..ho {
                let (r_lo, r_hi) = valid_range(oh, d.stride, d.pad, d.kh, d.h_in);
                for ow in 0..wo {
                    let (c_lo, c_hi) = valid_range(ow, d.stride, d.pad, d.kw, d.w_in);
                    let gout = dy[dy_base + oh * wo + ow];
                    for cg in 0..cg_in {
                        let ci = g * cg_in + cg;
                        let x_base = (b * d.c_in + ci) * d.h_in * d.w_in;
                        let w_base = (co * cg_in + cg) * d.kh * d.kw;
                        for r in r_lo..r_hi {
                            let ih = oh * d.stride + r - d.pad;
                            let x_row = x_base + ih * d.w_in + ow * d.stride;
                            let w_row = w_base + r * d.kw;
                            for c in c_lo..c_hi {
                                dx[x_row + c - d.pad] += w[w_row + c] * gout;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// dw[co,cg,r,s] += sum x[b,ci,ih,iw] * dy[b,co,oh,ow]
pub fn conv2d_backward_weight<E: Element>(dy: &[E], x: &[E], dw: &mut [E], d: &ConvDims) {
    if d.is_pointwise() {
        let hw = d.h_in * d.w_in;
        let (cg_in, cg_out) = (d.cg_in(), d.cg_out());
        for b in 0..d.batch {
            for g in 0..d.groups {
                for co_local in 0..cg_out {
                    let co = g * cg_out + co_local;
                    let dy_row = &dy[(b * d.c_out + co) * hw..(b * d.c_out + co + 1) * hw];
                    for cg in 0..cg_in {
                        let ci = g * cg_in + cg;
                        let x_row = &x[(b * d.c_in + ci) * hw..(b * d.c_in + ci + 1) * hw];
                        let mut s = E::zero();
                        for p in 0..hw {
                            s += x_row[p] * dy_row[p];
                        }
                        dw[co * cg_in + cg] += s;
                    }
                }
            }
        }
        return;
    }
    let (ho, wo) = (d.h_out(), d.w_out());
    let (cg_in, cg_out) = (d.cg_in(), d.cg_out());
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let g = co / cg_out;
            let dy_base = (b * d.c_out + co) * ho * wo;
            for oh in 0..ho {
                let (r_lo, r_hi) = valid_range(oh, d.stride, d.pad, d.kh, d.h_in);
                for ow in 0..wo {
                    let (c_lo, c_hi) = valid_range(ow, d.stride, d.pad, d.kw, d.w_in);
                    let gout = dy[dy_base + oh * wo + ow];
                    for cg in 0..cg_in {
                        let ci = g * cg_in + cg;
                        let x_base = (b * d.c_in + ci) * d.h_in * d.w_in;
                        let w_base = (co * cg_in + cg) * d.kh * d.kw;
                        for r in r_lo..r_hi {
                            let ih = oh * d.stride + r - d.pad;
                            let x_row = x_base + ih * d.w_in + ow * d.stride;
                            let w_row = w_base + r * d.kw;
                            for c in c_lo..c_hi {
                                dw[w_row + c] += x[x_row + c - d.pad] * gout;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// db[co] += sum_{b,oh,ow} dy[b,co,oh,ow]
pub fn conv2d_backward_bias<E: Element>(dy: &[E], db: &mut [E], d: &ConvDims) {
    let (ho, wo) = (d.h_out(), d.w_out());
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let base = (b * d.c_out + co) * ho * wo;
            let mut s = E::zero();
            for i in 0..ho * wo {
                s += dy[base + i];
            }
            db[co] += s;
        }
    }
}
