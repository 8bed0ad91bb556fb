//! Forward implementations of the op set.
//!
//! Shape violations are programming errors and panic with both shapes in the
//! message. All kernels write disjoint output regions when parallelized, so
//! results are bitwise deterministic regardless of thread count.

use std::sync::Arc;

use rayon::prelude::*;

use super::{product, strides_of, BinaryKind, CustomVjp, Elem, Op, ReduceKind, Tensor, UnaryKind};

pub(crate) fn unary_eval<E: Elem>(v: E, kind: UnaryKind) -> E {
    match kind {
        UnaryKind::Sigmoid => sigmoid_scalar(v),
        UnaryKind::Silu => v * sigmoid_scalar(v),
        UnaryKind::Softplus => softplus_scalar(v),
        UnaryKind::Relu => {
            if v > E::zero() {
                v
            } else {
                E::zero()
            }
        }
        UnaryKind::Abs => v.abs(),
        UnaryKind::Neg => -v,
        UnaryKind::Exp => v.exp(),
    }
}

pub(crate) fn sigmoid_scalar<E: Elem>(v: E) -> E {
    if v >= E::zero() {
        E::one() / (E::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (E::one() + e)
    }
}

pub(crate) fn softplus_scalar<E: Elem>(v: E) -> E {
    // max(v, 0) + ln(1 + exp(-|v|)) avoids overflow on both tails.
    let m = if v > E::zero() { v } else { E::zero() };
    m + (-v.abs()).exp().ln_1p()
}

/// Broadcast-compatible output shape: per axis the extents must match or one
/// side must be 1. Ranks must be equal (reshape first if not).
fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(
        a.len(),
        b.len(),
        "binary op rank mismatch: {:?} vs {:?}",
        a,
        b
    );
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            assert!(
                x == y || x == 1 || y == 1,
                "binary op shape mismatch: {:?} vs {:?}",
                a,
                b
            );
            x.max(y)
        })
        .collect()
}

/// Strides for reading `shape` as if broadcast to `out_shape` (stride 0 on
/// broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let native = strides_of(shape);
    shape
        .iter()
        .zip(native.iter())
        .zip(out_shape)
        .map(|((&dim, &st), &out)| if dim == out { st } else { 0 })
        .collect()
}

/// Odometer walk over `out_shape`, calling `f(out_idx, a_off, b_off)` for
/// every output element in row-major order.
pub(crate) fn zip_broadcast<F: FnMut(usize, usize, usize)>(
    out_shape: &[usize],
    a_strides: &[usize],
    b_strides: &[usize],
    mut f: F,
) {
    let n = product(out_shape);
    if n == 0 {
        return;
    }
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut a_off = 0usize;
    let mut b_off = 0usize;
    for out in 0..n {
        f(out, a_off, b_off);
        // Increment the odometer, updating offsets incrementally.
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            a_off += a_strides[ax];
            b_off += b_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            a_off -= a_strides[ax] * out_shape[ax];
            b_off -= b_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

impl<E: Elem> Tensor<E> {
    // -- shape ops ----------------------------------------------------------

    /// Same data viewed under a new shape with equal element count.
    pub fn reshape(&self, new_shape: &[usize]) -> Tensor<E> {
        assert_eq!(
            self.elem_count(),
            product(new_shape),
            "reshape element count mismatch: {:?} -> {:?}",
            self.shape(),
            new_shape
        );
        // Data is always contiguous row-major, so a reshape shares storage.
        Tensor::from_shared(
            self.storage(),
            new_shape.to_vec(),
            Some(Op::Reshape { x: self.clone() }),
            self.requires_grad(),
        )
    }

    /// Axis permutation (copies into row-major order of the new axes).
    pub fn permute(&self, order: &[usize]) -> Tensor<E> {
        let shape = self.shape();
        assert_eq!(
            order.len(),
            shape.len(),
            "permute order {:?} does not match rank of shape {:?}",
            order,
            shape
        );
        let mut seen = vec![false; order.len()];
        for &o in order {
            assert!(
                o < order.len() && !seen[o],
                "permute order {:?} is not a permutation",
                order
            );
            seen[o] = true;
        }
        let out_shape: Vec<usize> = order.iter().map(|&o| shape[o]).collect();
        let data = permute_copy(self.data(), shape, order);
        Tensor::from_op(
            data,
            out_shape,
            Op::Permute {
                x: self.clone(),
                order: order.to_vec(),
            },
        )
    }

    /// Reverses one axis.
    pub fn reverse(&self, axis: usize) -> Tensor<E> {
        let shape = self.shape();
        assert!(
            axis < shape.len(),
            "reverse axis {} out of range for shape {:?}",
            axis,
            shape
        );
        let data = reverse_copy(self.data(), shape, axis);
        Tensor::from_op(
            data,
            shape.to_vec(),
            Op::Reverse {
                x: self.clone(),
                axis,
            },
        )
    }

    // -- elementwise --------------------------------------------------------

    fn binary(&self, other: &Tensor<E>, kind: BinaryKind) -> Tensor<E> {
        let out_shape = broadcast_shape(self.shape(), other.shape());
        let a_str = broadcast_strides(self.shape(), &out_shape);
        let b_str = broadcast_strides(other.shape(), &out_shape);
        let a = self.data();
        let b = other.data();
        let mut data = vec![E::zero(); product(&out_shape)];
        if self.shape() == other.shape() {
            // Fast path: identical shapes.
            match kind {
                BinaryKind::Add => {
                    for ((o, &x), &y) in data.iter_mut().zip(a).zip(b) {
                        *o = x + y;
                    }
                }
                BinaryKind::Sub => {
                    for ((o, &x), &y) in data.iter_mut().zip(a).zip(b) {
                        *o = x - y;
                    }
                }
                BinaryKind::Mul => {
                    for ((o, &x), &y) in data.iter_mut().zip(a).zip(b) {
                        *o = x * y;
                    }
                }
            }
        } else {
            zip_broadcast(&out_shape, &a_str, &b_str, |o, ai, bi| {
                data[o] = match kind {
                    BinaryKind::Add => a[ai] + b[bi],
                    BinaryKind::Sub => a[ai] - b[bi],
                    BinaryKind::Mul => a[ai] * b[bi],
                };
            });
        }
        Tensor::from_op(
            data,
            out_shape,
            Op::Binary {
                a: self.clone(),
                b: other.clone(),
                kind,
            },
        )
    }

    pub fn add(&self, other: &Tensor<E>) -> Tensor<E> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor<E>) -> Tensor<E> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor<E>) -> Tensor<E> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn scale(&self, c: E) -> Tensor<E> {
        let data = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            Op::Scale { x: self.clone(), c },
        )
    }

    fn unary(&self, kind: UnaryKind) -> Tensor<E> {
        let data = self.data().iter().map(|&v| unary_eval(v, kind)).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            Op::Unary {
                x: self.clone(),
                kind,
            },
        )
    }

    pub fn sigmoid(&self) -> Tensor<E> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn silu(&self) -> Tensor<E> {
        self.unary(UnaryKind::Silu)
    }

    pub fn softplus(&self) -> Tensor<E> {
        self.unary(UnaryKind::Softplus)
    }

    pub fn relu(&self) -> Tensor<E> {
        self.unary(UnaryKind::Relu)
    }

    pub fn abs(&self) -> Tensor<E> {
        self.unary(UnaryKind::Abs)
    }

    pub fn neg(&self) -> Tensor<E> {
        self.unary(UnaryKind::Neg)
    }

    pub fn exp(&self) -> Tensor<E> {
        self.unary(UnaryKind::Exp)
    }

    // -- reductions ---------------------------------------------------------

    fn reduce(&self, axes: &[usize], keepdim: bool, kind: ReduceKind) -> Tensor<E> {
        let shape = self.shape();
        for &ax in axes {
            assert!(
                ax < shape.len(),
                "reduce axis {} out of range for shape {:?}",
                ax,
                shape
            );
        }
        let reduced: Vec<bool> = (0..shape.len()).map(|i| axes.contains(&i)).collect();
        let kept_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if reduced[i] { 1 } else { d })
            .collect();
        let out_shape: Vec<usize> = if keepdim {
            kept_shape.clone()
        } else {
            shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !reduced[*i])
                .map(|(_, &d)| d)
                .collect()
        };
        let count: usize = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| reduced[*i])
            .map(|(_, &d)| d)
            .product();
        let mut data = vec![E::zero(); product(&kept_shape)];
        let out_strides = broadcast_strides(&kept_shape, shape);
        let in_strides = strides_of(shape);
        zip_broadcast(shape, &in_strides, &out_strides, |_, ii, oi| {
            data[oi] += self.data()[ii];
        });
        if kind == ReduceKind::Mean {
            let inv = E::one() / E::from_usize(count.max(1)).unwrap();
            for v in &mut data {
                *v *= inv;
            }
        }
        Tensor::from_op(
            data,
            out_shape,
            Op::Reduce {
                x: self.clone(),
                axes: axes.to_vec(),
                kind,
            },
        )
    }

    pub fn reduce_sum(&self, axes: &[usize], keepdim: bool) -> Tensor<E> {
        self.reduce(axes, keepdim, ReduceKind::Sum)
    }

    pub fn reduce_mean(&self, axes: &[usize], keepdim: bool) -> Tensor<E> {
        self.reduce(axes, keepdim, ReduceKind::Mean)
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum_all(&self) -> Tensor<E> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.reduce_sum(&axes, false)
    }

    /// Mean of all elements as a scalar tensor.
    pub fn mean_all(&self) -> Tensor<E> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.reduce_mean(&axes, false)
    }

    // -- linear algebra ------------------------------------------------------

    /// Batched matrix product `a [..., M, K] x b [K, N] -> [..., M, N]`.
    pub fn matmul(&self, b: &Tensor<E>) -> Tensor<E> {
        let ash = self.shape();
        let bsh = b.shape();
        assert!(
            ash.len() >= 2 && bsh.len() == 2,
            "matmul expects a [...,M,K] and b [K,N], got {:?} x {:?}",
            ash,
            bsh
        );
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (k2, n) = (bsh[0], bsh[1]);
        assert_eq!(
            k, k2,
            "matmul inner extent mismatch: {:?} x {:?}",
            ash, bsh
        );
        let batch = product(&ash[..ash.len() - 2]);
        let mut out_shape = ash[..ash.len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let mut data = vec![E::zero(); batch * m * n];
        let a = self.data();
        let bv = b.data();
        data.par_chunks_mut(n).enumerate().for_each(|(row, out)| {
            let a_row = &a[row * k..(row + 1) * k];
            for (kk, &av) in a_row.iter().enumerate() {
                if av != E::zero() {
                    let b_row = &bv[kk * n..(kk + 1) * n];
                    for (o, &bvv) in out.iter_mut().zip(b_row) {
                        *o += av * bvv;
                    }
                }
            }
        });
        Tensor::from_op(
            data,
            out_shape,
            Op::Matmul {
                a: self.clone(),
                b: b.clone(),
            },
        )
    }

    /// Per-group matrix product `a [G, M, K] x b [G, K, N] -> [G, M, N]`.
    pub fn batch_matmul(&self, b: &Tensor<E>) -> Tensor<E> {
        let ash = self.shape();
        let bsh = b.shape();
        assert!(
            ash.len() == 3 && bsh.len() == 3 && ash[0] == bsh[0] && ash[2] == bsh[1],
            "batch_matmul expects [G,M,K] x [G,K,N], got {:?} x {:?}",
            ash,
            bsh
        );
        let (g, m, k, n) = (ash[0], ash[1], ash[2], bsh[2]);
        let mut data = vec![E::zero(); g * m * n];
        let a = self.data();
        let bv = b.data();
        data.par_chunks_mut(m * n).enumerate().for_each(|(gi, out)| {
            let a_g = &a[gi * m * k..(gi + 1) * m * k];
            let b_g = &bv[gi * k * n..(gi + 1) * k * n];
            for mi in 0..m {
                let out_row = &mut out[mi * n..(mi + 1) * n];
                let a_row = &a_g[mi * k..(mi + 1) * k];
                for (kk, &av) in a_row.iter().enumerate() {
                    let b_row = &b_g[kk * n..(kk + 1) * n];
                    for (o, &bvv) in out_row.iter_mut().zip(b_row) {
                        *o += av * bvv;
                    }
                }
            }
        });
        Tensor::from_op(
            data,
            vec![g, m, n],
            Op::BatchMatmul {
                a: self.clone(),
                b: b.clone(),
            },
        )
    }

    // -- convolutions --------------------------------------------------------

    /// 2D cross-correlation. `x [N,Cin,H,W]`, `w [Cout,Cin,k,k]`,
    /// `bias [Cout]`, zero padding `pad`.
    pub fn conv2d(&self, w: &Tensor<E>, bias: &Tensor<E>, pad: usize) -> Tensor<E> {
        let xs = self.shape();
        let ws = w.shape();
        assert!(
            xs.len() == 4 && ws.len() == 4,
            "conv2d expects x [N,Cin,H,W] and w [Cout,Cin,k,k], got {:?} and {:?}",
            xs,
            ws
        );
        let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cin2, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(
            cin, cin2,
            "conv2d channel mismatch: x {:?} vs w {:?}",
            xs, ws
        );
        assert_eq!(kh, kw, "conv2d expects a square kernel, got {:?}", ws);
        assert!(kh % 2 == 1, "conv2d kernel size must be odd, got {}", kh);
        assert_eq!(bias.shape(), &[cout], "conv2d bias shape {:?}", bias.shape());
        let ho = h + 2 * pad - kh + 1;
        let wo = wd + 2 * pad - kw + 1;
        let x = self.data();
        let wv = w.data();
        let bv = bias.data();
        let mut data = vec![E::zero(); n * cout * ho * wo];
        data.par_chunks_mut(ho * wo).enumerate().for_each(|(plane, out)| {
            let ni = plane / cout;
            let co = plane % cout;
            for v in out.iter_mut() {
                *v = bv[co];
            }
            for ci in 0..cin {
                let x_plane = &x[(ni * cin + ci) * h * wd..(ni * cin + ci + 1) * h * wd];
                for dy in 0..kh {
                    for dx in 0..kw {
                        let wt = wv[((co * cin + ci) * kh + dy) * kw + dx];
                        if wt == E::zero() {
                            continue;
                        }
                        // out[ho_i, wo_j] += wt * x[ho_i + dy - pad, wo_j + dx - pad]
                        for oy in 0..ho {
                            let iy = oy + dy;
                            if iy < pad || iy >= h + pad {
                                continue;
                            }
                            let iy = iy - pad;
                            let (ox_lo, ox_hi) = clip_range(wo, wd, dx, pad);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            let x_row = &x_plane[iy * wd..(iy + 1) * wd];
                            let out_row = &mut out[oy * wo + ox_lo..oy * wo + ox_hi];
                            let x_off = ox_lo + dx - pad;
                            for (o, &xv) in out_row.iter_mut().zip(&x_row[x_off..x_off + (ox_hi - ox_lo)]) {
                                *o += wt * xv;
                            }
                        }
                    }
                }
            }
        });
        Tensor::from_op(
            data,
            vec![n, cout, ho, wo],
            Op::Conv2d {
                x: self.clone(),
                w: w.clone(),
                bias: bias.clone(),
                pad,
            },
        )
    }

    /// Per-channel causal 1D convolution along `L`. `x [G,L,C]`, `w [C,k]`,
    /// `bias [C]`. Tap `k-1` multiplies the current position.
    pub fn conv1d_depthwise(&self, w: &Tensor<E>, bias: &Tensor<E>) -> Tensor<E> {
        let xs = self.shape();
        let ws = w.shape();
        assert!(
            xs.len() == 3 && ws.len() == 2 && xs[2] == ws[0],
            "conv1d_depthwise expects x [G,L,C] and w [C,k], got {:?} and {:?}",
            xs,
            ws
        );
        let (g, l, c) = (xs[0], xs[1], xs[2]);
        let k = ws[1];
        assert!(k >= 1, "conv1d_depthwise kernel must be >= 1");
        assert_eq!(bias.shape(), &[c], "conv1d bias shape {:?}", bias.shape());
        let x = self.data();
        let wv = w.data();
        let bv = bias.data();
        let mut data = vec![E::zero(); g * l * c];
        data.par_chunks_mut(l * c).enumerate().for_each(|(gi, out)| {
            let x_g = &x[gi * l * c..(gi + 1) * l * c];
            for li in 0..l {
                let out_row = &mut out[li * c..(li + 1) * c];
                out_row.copy_from_slice(bv);
                for j in 0..k {
                    // Input position for tap j; j = k-1 is the current token.
                    let offset = (k - 1) - j;
                    if li < offset {
                        continue;
                    }
                    let src = &x_g[(li - offset) * c..(li - offset + 1) * c];
                    for ci in 0..c {
                        out_row[ci] += wv[ci * k + j] * src[ci];
                    }
                }
            }
        });
        Tensor::from_op(
            data,
            vec![g, l, c],
            Op::Conv1dDepthwise {
                x: self.clone(),
                w: w.clone(),
                bias: bias.clone(),
            },
        )
    }

    // -- normalization -------------------------------------------------------

    /// Per-token normalization over the last axis, then affine with `gamma`
    /// and `beta`. `eps` sits inside the square root.
    pub fn layer_norm(&self, gamma: &Tensor<E>, beta: &Tensor<E>, eps: E) -> Tensor<E> {
        let shape = self.shape();
        let c = *shape.last().expect("layer_norm needs rank >= 1");
        assert_eq!(
            gamma.shape(),
            &[c],
            "layer_norm gamma shape {:?} vs channels {}",
            gamma.shape(),
            c
        );
        assert_eq!(beta.shape(), &[c], "layer_norm beta shape {:?}", beta.shape());
        let x = self.data();
        let gv = gamma.data();
        let bv = beta.data();
        let mut data = vec![E::zero(); x.len()];
        let inv_c = E::one() / E::from_usize(c).unwrap();
        data.par_chunks_mut(c).zip(x.par_chunks(c)).for_each(|(out, tok)| {
            let mean = tok.iter().copied().sum::<E>() * inv_c;
            let var = tok.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() * inv_c;
            let rstd = E::one() / (var + eps).sqrt();
            for ((o, &v), (&g, &b)) in out.iter_mut().zip(tok).zip(gv.iter().zip(bv)) {
                *o = (v - mean) * rstd * g + b;
            }
        });
        Tensor::from_op(
            data,
            shape.to_vec(),
            Op::LayerNorm {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                eps,
            },
        )
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax_last(&self) -> Tensor<E> {
        let shape = self.shape();
        let c = *shape.last().expect("softmax needs rank >= 1");
        let x = self.data();
        let mut data = vec![E::zero(); x.len()];
        data.par_chunks_mut(c).zip(x.par_chunks(c)).for_each(|(out, row)| {
            let max = row.iter().copied().fold(E::neg_infinity(), E::max);
            let mut denom = E::zero();
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                denom += *o;
            }
            let inv = E::one() / denom;
            for o in out.iter_mut() {
                *o *= inv;
            }
        });
        Tensor::from_op(data, shape.to_vec(), Op::Softmax { x: self.clone() })
    }

    // -- pixel shuffle --------------------------------------------------------

    /// Depth-to-space: `x [N, C*s^2, H, W] -> [N, C, sH, sW]`, row-major
    /// sub-pixel order.
    pub fn pixel_shuffle(&self, s: usize) -> Tensor<E> {
        let xs = self.shape();
        assert!(xs.len() == 4, "pixel_shuffle expects [N,C,H,W], got {:?}", xs);
        let (n, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        assert!(
            c_in % (s * s) == 0,
            "pixel_shuffle channels {} not divisible by s^2 = {}",
            c_in,
            s * s
        );
        let c = c_in / (s * s);
        let data = pixel_shuffle_copy(self.data(), n, c, s, h, w, false);
        Tensor::from_op(
            data,
            vec![n, c, h * s, w * s],
            Op::PixelShuffle { x: self.clone(), s },
        )
    }

    /// Space-to-depth inverse of [`Tensor::pixel_shuffle`].
    pub fn pixel_unshuffle(&self, s: usize) -> Tensor<E> {
        let xs = self.shape();
        assert!(xs.len() == 4, "pixel_unshuffle expects [N,C,H,W], got {:?}", xs);
        let (n, c, hs, ws) = (xs[0], xs[1], xs[2], xs[3]);
        assert!(
            hs % s == 0 && ws % s == 0,
            "pixel_unshuffle spatial extents {:?} not divisible by s = {}",
            xs,
            s
        );
        let (h, w) = (hs / s, ws / s);
        let data = pixel_shuffle_copy(self.data(), n, c, s, h, w, true);
        Tensor::from_op(
            data,
            vec![n, c * s * s, h, w],
            Op::PixelUnshuffle { x: self.clone(), s },
        )
    }

    /// Output with a custom backward rule. `parents` must list every input a
    /// gradient should flow back to.
    pub fn from_custom_op(
        data: Vec<E>,
        shape: &[usize],
        parents: Vec<Tensor<E>>,
        vjp: Arc<dyn CustomVjp<E>>,
    ) -> Tensor<E> {
        Tensor::from_op(data, shape.to_vec(), Op::Custom { parents, vjp })
    }
}

fn clip_range(wo: usize, wd: usize, dx: usize, pad: usize) -> (usize, usize) {
    // Valid output columns ox where 0 <= ox + dx - pad < wd.
    let lo = pad.saturating_sub(dx);
    let hi = (wd + pad - dx).min(wo);
    (lo.min(wo), hi)
}

pub(crate) fn permute_copy<E: Elem>(data: &[E], shape: &[usize], order: &[usize]) -> Vec<E> {
    let out_shape: Vec<usize> = order.iter().map(|&o| shape[o]).collect();
    let in_strides = strides_of(shape);
    // Stride in the input for each output axis.
    let gather: Vec<usize> = order.iter().map(|&o| in_strides[o]).collect();
    let mut out = vec![E::zero(); data.len()];
    let zeros = vec![0usize; out_shape.len()];
    zip_broadcast(&out_shape, &gather, &zeros, |oi, ii, _| {
        out[oi] = data[ii];
    });
    out
}

pub(crate) fn inverse_order(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    inv
}

pub(crate) fn reverse_copy<E: Elem>(data: &[E], shape: &[usize], axis: usize) -> Vec<E> {
    let outer: usize = shape[..axis].iter().product();
    let l = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![E::zero(); data.len()];
    for o in 0..outer {
        for i in 0..l {
            let src = (o * l + i) * inner;
            let dst = (o * l + (l - 1 - i)) * inner;
            out[dst..dst + inner].copy_from_slice(&data[src..src + inner]);
        }
    }
    out
}

pub(crate) fn pixel_shuffle_copy<E: Elem>(
    data: &[E],
    n: usize,
    c: usize,
    s: usize,
    h: usize,
    w: usize,
    inverse: bool,
) -> Vec<E> {
    // Forward: in [N, c*s*s, h, w] -> out [N, c, h*s, w*s].
    let mut out = vec![E::zero(); data.len()];
    for ni in 0..n {
        for ci in 0..c {
            for dy in 0..s {
                for dx in 0..s {
                    let ch = ci * s * s + dy * s + dx;
                    for y in 0..h {
                        for x in 0..w {
                            let small = ((ni * c * s * s + ch) * h + y) * w + x;
                            let big = ((ni * c + ci) * (h * s) + (y * s + dy)) * (w * s)
                                + (x * s + dx);
                            if inverse {
                                out[small] = data[big];
                            } else {
                                out[big] = data[small];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
