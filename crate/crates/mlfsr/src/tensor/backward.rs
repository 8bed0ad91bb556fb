//! Reverse-mode pass: walks the provenance DAG once in reverse topological
//! order and accumulates gradients into leaf variables.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use super::ops::{
    broadcast_strides, inverse_order, permute_copy, pixel_shuffle_copy, reverse_copy,
    sigmoid_scalar, zip_broadcast,
};
use super::{strides_of, BinaryKind, Elem, Op, ReduceKind, Tensor, TensorId, UnaryKind};
use crate::{Error, Result};

/// Propagates `d(loss)/d(param)` into the grad slot of every reachable leaf
/// variable. The loss must hold a single element. Gradients accumulate; call
/// [`Tensor::zero_grad`] (or `ParamStore::zero_grads`) between steps.
pub fn backward<E: Elem>(loss: &Tensor<E>) -> Result<()> {
    if loss.elem_count() != 1 {
        return Err(Error::NonScalarLoss(format!("{:?}", loss.shape())));
    }
    let order = topo_order(loss);
    let mut grads: HashMap<TensorId, Vec<E>> = HashMap::new();
    grads.insert(loss.id(), vec![E::one()]);
    for node in order.iter().rev() {
        let Some(g) = grads.remove(&node.id()) else {
            continue;
        };
        if node.is_variable() {
            node.accumulate_grad(&g);
        }
        let Some(op) = node.op() else { continue };
        step(op, node, &g, &mut grads);
    }
    Ok(())
}

fn topo_order<E: Elem>(root: &Tensor<E>) -> Vec<Tensor<E>> {
    let mut visited: HashSet<TensorId> = HashSet::new();
    let mut order = Vec::new();
    let mut stack: Vec<(Tensor<E>, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(op) = t.op() {
            for p in op.parents() {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p, false));
                }
            }
        }
    }
    order
}

fn acc<E: Elem>(grads: &mut HashMap<TensorId, Vec<E>>, t: &Tensor<E>, contribution: Vec<E>) {
    if !t.requires_grad() {
        return;
    }
    match grads.get_mut(&t.id()) {
        Some(buf) => {
            for (g, c) in buf.iter_mut().zip(&contribution) {
                *g += *c;
            }
        }
        None => {
            grads.insert(t.id(), contribution);
        }
    }
}

fn step<E: Elem>(op: &Op<E>, node: &Tensor<E>, g: &[E], grads: &mut HashMap<TensorId, Vec<E>>) {
    match op {
        Op::Reshape { x } => acc(grads, x, g.to_vec()),
        Op::Permute { x, order } => {
            let inv = inverse_order(order);
            acc(grads, x, permute_copy(g, node.shape(), &inv));
        }
        Op::Reverse { x, axis } => acc(grads, x, reverse_copy(g, node.shape(), *axis)),
        Op::Scale { x, c } => acc(grads, x, g.iter().map(|&v| v * *c).collect()),
        Op::Unary { x, kind } => {
            let xv = x.data();
            let yv = node.data();
            let dx: Vec<E> = match kind {
                UnaryKind::Sigmoid => g
                    .iter()
                    .zip(yv)
                    .map(|(&gv, &s)| gv * s * (E::one() - s))
                    .collect(),
                UnaryKind::Silu => g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| {
                        let s = sigmoid_scalar(v);
                        gv * s * (E::one() + v * (E::one() - s))
                    })
                    .collect(),
                UnaryKind::Softplus => g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| gv * sigmoid_scalar(v))
                    .collect(),
                UnaryKind::Relu => g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v > E::zero() { gv } else { E::zero() })
                    .collect(),
                // Subgradient at exactly 0 is 0.
                UnaryKind::Abs => g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| {
                        if v > E::zero() {
                            gv
                        } else if v < E::zero() {
                            -gv
                        } else {
                            E::zero()
                        }
                    })
                    .collect(),
                UnaryKind::Neg => g.iter().map(|&gv| -gv).collect(),
                UnaryKind::Exp => g.iter().zip(yv).map(|(&gv, &e)| gv * e).collect(),
            };
            acc(grads, x, dx);
        }
        Op::Binary { a, b, kind } => {
            let out_shape = node.shape();
            let a_str = broadcast_strides(a.shape(), out_shape);
            let b_str = broadcast_strides(b.shape(), out_shape);
            let mut da = vec![E::zero(); a.elem_count()];
            let mut db = vec![E::zero(); b.elem_count()];
            let av = a.data();
            let bv = b.data();
            match kind {
                BinaryKind::Add => zip_broadcast(out_shape, &a_str, &b_str, |o, ai, bi| {
                    da[ai] += g[o];
                    db[bi] += g[o];
                }),
                BinaryKind::Sub => zip_broadcast(out_shape, &a_str, &b_str, |o, ai, bi| {
                    da[ai] += g[o];
                    db[bi] -= g[o];
                }),
                BinaryKind::Mul => zip_broadcast(out_shape, &a_str, &b_str, |o, ai, bi| {
                    da[ai] += g[o] * bv[bi];
                    db[bi] += g[o] * av[ai];
                }),
            }
            acc(grads, a, da);
            acc(grads, b, db);
        }
        Op::Reduce { x, axes, kind } => {
            let shape = x.shape();
            let kept_shape: Vec<usize> = shape
                .iter()
                .enumerate()
                .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
                .collect();
            let count: usize = shape
                .iter()
                .enumerate()
                .filter(|(i, _)| axes.contains(i))
                .map(|(_, &d)| d)
                .product();
            let scale = match kind {
                ReduceKind::Sum => E::one(),
                ReduceKind::Mean => E::one() / E::from_usize(count.max(1)).unwrap(),
            };
            let out_str = broadcast_strides(&kept_shape, shape);
            let in_str = strides_of(shape);
            let mut dx = vec![E::zero(); x.elem_count()];
            zip_broadcast(shape, &in_str, &out_str, |_, ii, oi| {
                dx[ii] = g[oi] * scale;
            });
            acc(grads, x, dx);
        }
        Op::Matmul { a, b } => {
            let ash = a.shape();
            let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
            let n = b.shape()[1];
            let rows = a.elem_count() / k;
            let _ = m;
            let av = a.data();
            let bv = b.data();
            if a.requires_grad() {
                // da[row, :] = sum_n g[row, n] * b[:, n] -> use b transposed.
                let mut bt = vec![E::zero(); k * n];
                for kk in 0..k {
                    for nn in 0..n {
                        bt[nn * k + kk] = bv[kk * n + nn];
                    }
                }
                let mut da = vec![E::zero(); a.elem_count()];
                da.par_chunks_mut(k).enumerate().for_each(|(row, out)| {
                    let g_row = &g[row * n..(row + 1) * n];
                    for (nn, &gv) in g_row.iter().enumerate() {
                        if gv != E::zero() {
                            for (o, &btv) in out.iter_mut().zip(&bt[nn * k..(nn + 1) * k]) {
                                *o += gv * btv;
                            }
                        }
                    }
                });
                acc(grads, a, da);
            }
            if b.requires_grad() {
                let mut db = vec![E::zero(); k * n];
                db.par_chunks_mut(n).enumerate().for_each(|(kk, out)| {
                    for row in 0..rows {
                        let avv = av[row * k + kk];
                        if avv != E::zero() {
                            for (o, &gv) in out.iter_mut().zip(&g[row * n..(row + 1) * n]) {
                                *o += avv * gv;
                            }
                        }
                    }
                });
                acc(grads, b, db);
            }
        }
        Op::BatchMatmul { a, b } => {
            let (m, k) = (a.shape()[1], a.shape()[2]);
            let n = b.shape()[2];
            let av = a.data();
            let bv = b.data();
            if a.requires_grad() {
                let mut da = vec![E::zero(); a.elem_count()];
                da.par_chunks_mut(m * k).enumerate().for_each(|(gi, out)| {
                    let g_g = &g[gi * m * n..(gi + 1) * m * n];
                    let b_g = &bv[gi * k * n..(gi + 1) * k * n];
                    for mi in 0..m {
                        for nn in 0..n {
                            let gv = g_g[mi * n + nn];
                            if gv == E::zero() {
                                continue;
                            }
                            for kk in 0..k {
                                out[mi * k + kk] += gv * b_g[kk * n + nn];
                            }
                        }
                    }
                });
                acc(grads, a, da);
            }
            if b.requires_grad() {
                let mut db = vec![E::zero(); b.elem_count()];
                db.par_chunks_mut(k * n).enumerate().for_each(|(gi, out)| {
                    let g_g = &g[gi * m * n..(gi + 1) * m * n];
                    let a_g = &av[gi * m * k..(gi + 1) * m * k];
                    for mi in 0..m {
                        for kk in 0..k {
                            let avv = a_g[mi * k + kk];
                            if avv == E::zero() {
                                continue;
                            }
                            for (o, &gv) in out[kk * n..(kk + 1) * n]
                                .iter_mut()
                                .zip(&g_g[mi * n..(mi + 1) * n])
                            {
                                *o += avv * gv;
                            }
                        }
                    }
                });
                acc(grads, b, db);
            }
        }
        Op::Conv2d { x, w, bias, pad } => {
            conv2d_backward(x, w, bias, *pad, node, g, grads);
        }
        Op::Conv1dDepthwise { x, w, bias } => {
            conv1d_backward(x, w, bias, g, grads);
        }
        Op::LayerNorm { x, gamma, beta, eps } => {
            layer_norm_backward(x, gamma, beta, *eps, g, grads);
        }
        Op::Softmax { x } => {
            let c = *node.shape().last().unwrap();
            let y = node.data();
            let mut dx = vec![E::zero(); x.elem_count()];
            dx.par_chunks_mut(c).enumerate().for_each(|(row, out)| {
                let y_row = &y[row * c..(row + 1) * c];
                let g_row = &g[row * c..(row + 1) * c];
                let dot: E = y_row.iter().zip(g_row).map(|(&yv, &gv)| yv * gv).sum();
                for ((o, &yv), &gv) in out.iter_mut().zip(y_row).zip(g_row) {
                    *o = yv * (gv - dot);
                }
            });
            acc(grads, x, dx);
        }
        Op::PixelShuffle { x, s } => {
            let xs = x.shape();
            let c = xs[1] / (s * s);
            let (n, h, w) = (xs[0], xs[2], xs[3]);
            acc(grads, x, pixel_shuffle_copy(g, n, c, *s, h, w, true));
        }
        Op::PixelUnshuffle { x, s } => {
            let xs = x.shape();
            let (n, c, hs, ws) = (xs[0], xs[1], xs[2], xs[3]);
            acc(
                grads,
                x,
                pixel_shuffle_copy(g, n, c, *s, hs / s, ws / s, false),
            );
        }
        Op::Custom { parents, vjp } => {
            let contributions = vjp.backward(parents, node, g);
            assert_eq!(
                contributions.len(),
                parents.len(),
                "custom op {} returned {} gradients for {} parents",
                vjp.name(),
                contributions.len(),
                parents.len()
            );
            for (p, c) in parents.iter().zip(contributions) {
                if let Some(c) = c {
                    acc(grads, p, c);
                }
            }
        }
    }
}

fn conv2d_backward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: &Tensor<E>,
    pad: usize,
    node: &Tensor<E>,
    g: &[E],
    grads: &mut HashMap<TensorId, Vec<E>>,
) {
    let xs = x.shape();
    let ws = w.shape();
    let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let os = node.shape();
    let (ho, wo) = (os[2], os[3]);
    let xv = x.data();
    let wv = w.data();

    if bias.requires_grad() {
        let mut db = vec![E::zero(); cout];
        for ni in 0..n {
            for co in 0..cout {
                let plane = &g[(ni * cout + co) * ho * wo..(ni * cout + co + 1) * ho * wo];
                db[co] += plane.iter().copied().sum::<E>();
            }
        }
        acc(grads, bias, db);
    }
    if x.requires_grad() {
        let mut dx = vec![E::zero(); x.elem_count()];
        dx.par_chunks_mut(h * wd).enumerate().for_each(|(plane, out)| {
            let ni = plane / cin;
            let ci = plane % cin;
            for co in 0..cout {
                let g_plane = &g[(ni * cout + co) * ho * wo..(ni * cout + co + 1) * ho * wo];
                for dy in 0..kh {
                    for dx_k in 0..kw {
                        let wt = wv[((co * cin + ci) * kh + dy) * kw + dx_k];
                        if wt == E::zero() {
                            continue;
                        }
                        // out pixel (oy, ox) reads input (oy+dy-pad, ox+dx_k-pad)
                        for oy in 0..ho {
                            let iy = oy + dy;
                            if iy < pad || iy >= h + pad {
                                continue;
                            }
                            let iy = iy - pad;
                            for ox in 0..wo {
                                let ix = ox + dx_k;
                                if ix < pad || ix >= wd + pad {
                                    continue;
                                }
                                out[iy * wd + (ix - pad)] += wt * g_plane[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        });
        acc(grads, x, dx);
    }
    if w.requires_grad() {
        let mut dw = vec![E::zero(); w.elem_count()];
        dw.par_chunks_mut(cin * kh * kw)
            .enumerate()
            .for_each(|(co, out)| {
                for ni in 0..n {
                    let g_plane =
                        &g[(ni * cout + co) * ho * wo..(ni * cout + co + 1) * ho * wo];
                    for ci in 0..cin {
                        let x_plane =
                            &xv[(ni * cin + ci) * h * wd..(ni * cin + ci + 1) * h * wd];
                        for dy in 0..kh {
                            for dx_k in 0..kw {
                                let mut sum = E::zero();
                                for oy in 0..ho {
                                    let iy = oy + dy;
                                    if iy < pad || iy >= h + pad {
                                        continue;
                                    }
                                    let iy = iy - pad;
                                    for ox in 0..wo {
                                        let ix = ox + dx_k;
                                        if ix < pad || ix >= wd + pad {
                                            continue;
                                        }
                                        sum += g_plane[oy * wo + ox] * x_plane[iy * wd + (ix - pad)];
                                    }
                                }
                                out[(ci * kh + dy) * kw + dx_k] += sum;
                            }
                        }
                    }
                }
            });
        acc(grads, w, dw);
    }
}

fn conv1d_backward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: &Tensor<E>,
    g: &[E],
    grads: &mut HashMap<TensorId, Vec<E>>,
) {
    let xs = x.shape();
    let (gn, l, c) = (xs[0], xs[1], xs[2]);
    let k = w.shape()[1];
    let xv = x.data();
    let wv = w.data();

    if bias.requires_grad() {
        let mut db = vec![E::zero(); c];
        for row in g.chunks(c) {
            for (d, &gv) in db.iter_mut().zip(row) {
                *d += gv;
            }
        }
        acc(grads, bias, db);
    }
    if x.requires_grad() {
        let mut dx = vec![E::zero(); x.elem_count()];
        dx.par_chunks_mut(l * c).enumerate().for_each(|(gi, out)| {
            let g_g = &g[gi * l * c..(gi + 1) * l * c];
            for li in 0..l {
                for j in 0..k {
                    let offset = (k - 1) - j;
                    // x[li] feeds out[li + offset].
                    if li + offset >= l {
                        continue;
                    }
                    let g_row = &g_g[(li + offset) * c..(li + offset + 1) * c];
                    let out_row = &mut out[li * c..(li + 1) * c];
                    for ci in 0..c {
                        out_row[ci] += wv[ci * k + j] * g_row[ci];
                    }
                }
            }
        });
        acc(grads, x, dx);
    }
    if w.requires_grad() {
        let mut dw = vec![E::zero(); c * k];
        for gi in 0..gn {
            let g_g = &g[gi * l * c..(gi + 1) * l * c];
            let x_g = &xv[gi * l * c..(gi + 1) * l * c];
            for li in 0..l {
                let g_row = &g_g[li * c..(li + 1) * c];
                for j in 0..k {
                    let offset = (k - 1) - j;
                    if li < offset {
                        continue;
                    }
                    let x_row = &x_g[(li - offset) * c..(li - offset + 1) * c];
                    for ci in 0..c {
                        dw[ci * k + j] += g_row[ci] * x_row[ci];
                    }
                }
            }
        }
        acc(grads, w, dw);
    }
}

fn layer_norm_backward<E: Elem>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: E,
    g: &[E],
    grads: &mut HashMap<TensorId, Vec<E>>,
) {
    let c = *x.shape().last().unwrap();
    let tokens = x.elem_count() / c;
    let xv = x.data();
    let gv = gamma.data();
    let inv_c = E::one() / E::from_usize(c).unwrap();

    if x.requires_grad() {
        let mut dx = vec![E::zero(); x.elem_count()];
        dx.par_chunks_mut(c).enumerate().for_each(|(t, out)| {
            let tok = &xv[t * c..(t + 1) * c];
            let g_row = &g[t * c..(t + 1) * c];
            let mean = tok.iter().copied().sum::<E>() * inv_c;
            let var = tok.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() * inv_c;
            let rstd = E::one() / (var + eps).sqrt();
            let mut sum_dyg = E::zero();
            let mut sum_dyg_xhat = E::zero();
            for i in 0..c {
                let xhat = (tok[i] - mean) * rstd;
                let dyg = g_row[i] * gv[i];
                sum_dyg += dyg;
                sum_dyg_xhat += dyg * xhat;
            }
            let m1 = sum_dyg * inv_c;
            let m2 = sum_dyg_xhat * inv_c;
            for i in 0..c {
                let xhat = (tok[i] - mean) * rstd;
                out[i] = rstd * (g_row[i] * gv[i] - m1 - xhat * m2);
            }
        });
        acc(grads, x, dx);
    }
    if gamma.requires_grad() || beta.requires_grad() {
        let mut dgamma = vec![E::zero(); c];
        let mut dbeta = vec![E::zero(); c];
        for t in 0..tokens {
            let tok = &xv[t * c..(t + 1) * c];
            let g_row = &g[t * c..(t + 1) * c];
            let mean = tok.iter().copied().sum::<E>() * inv_c;
            let var = tok.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() * inv_c;
            let rstd = E::one() / (var + eps).sqrt();
            for i in 0..c {
                let xhat = (tok[i] - mean) * rstd;
                dgamma[i] += g_row[i] * xhat;
                dbeta[i] += g_row[i];
            }
        }
        if gamma.requires_grad() {
            acc(grads, gamma, dgamma);
        }
        if beta.requires_grad() {
            acc(grads, beta, dbeta);
        }
    }
}
