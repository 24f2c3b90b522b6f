//! Reverse-mode sweep over the recorded graph.
//!
//! The graph is a DAG of [`Tensor`] nodes linked through their [`Op`] parents.
//! A backward pass seeds the scalar loss with gradient one, walks a post-order
//! topological ordering in reverse (so every consumer is processed before its
//! producer), and accumulates gradients for leaf tensors into a [`GradStore`].
//! Intermediate gradients are dropped as soon as they are consumed.

use std::collections::{HashMap, HashSet};

use super::ops;
use super::{Op, Tensor};
use crate::scalar::Scalar;

/// Gradients keyed by leaf tensor id. Repeated backward passes accumulate.
pub struct GradStore<T: Scalar> {
    grads: HashMap<u64, Vec<T>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn new() -> Self {
        GradStore { grads: HashMap::new() }
    }

    /// Gradient of `t`, if any backward pass has produced one.
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.grads.get(&t.id()).map(|v| v.as_slice())
    }

    pub fn contains(&self, t: &Tensor<T>) -> bool {
        self.grads.contains_key(&t.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn clear(&mut self) {
        self.grads.clear();
    }

    pub(crate) fn accumulate(&mut self, id: u64, v: Vec<T>) {
        acc_into(&mut self.grads, id, v);
    }
}

impl<T: Scalar> Default for GradStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn acc_into<T: Scalar>(map: &mut HashMap<u64, Vec<T>>, id: u64, v: Vec<T>) {
    match map.entry(id) {
        std::collections::hash_map::Entry::Occupied(mut e) => {
            let dst = e.get_mut();
            debug_assert_eq!(dst.len(), v.len());
            for (d, s) in dst.iter_mut().zip(v) {
                *d = *d + s;
            }
        }
        std::collections::hash_map::Entry::Vacant(e) => {
            e.insert(v);
        }
    }
}

fn parents<T: Scalar>(op: &Op<T>) -> Vec<Tensor<T>> {
    match op {
        Op::Leaf => Vec::new(),
        Op::Conv2d { x, w, b, .. } | Op::DwConv2d { x, w, b } | Op::Conv1x1 { x, w, b } => {
            let mut ps = vec![x.clone(), w.clone()];
            if let Some(b) = b {
                ps.push(b.clone());
            }
            ps
        }
        Op::LayerNorm { x, gamma, beta, .. } => vec![x.clone(), gamma.clone(), beta.clone()],
        Op::InstanceNorm { x, .. }
        | Op::Gelu { x }
        | Op::Relu { x }
        | Op::SoftmaxLast { x }
        | Op::TransposeLast2 { x }
        | Op::Reshape { x }
        | Op::PixelShuffle { x, .. }
        | Op::PixelUnshuffle { x, .. }
        | Op::Scale { x, .. }
        | Op::Abs { x }
        | Op::SliceChannels { x, .. }
        | Op::MeanAll { x } => vec![x.clone()],
        Op::Matmul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
            vec![a.clone(), b.clone()]
        }
        Op::DivChannels { x, s } => vec![x.clone(), s.clone()],
        Op::ConcatChannels { xs } => xs.clone(),
    }
}

/// Post-order over the subgraph of nodes that require gradients. Reversing the
/// result yields an order in which each node precedes all of its parents.
fn topo_order<T: Scalar>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    enum Frame<T: Scalar> {
        Enter(Tensor<T>),
        Exit(Tensor<T>),
    }
    let mut topo = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack = vec![Frame::Enter(root.clone())];
    while let Some(frame) = stack.pop() {
        match frame {
            Frame::Enter(t) => {
                if !t.requires_grad() || !visited.insert(t.id()) {
                    continue;
                }
                // Exit goes under the parent Enters so it pops only after the
                // whole parent subgraph has been emitted.
                let exit = Frame::Exit(t.clone());
                let ps = parents(t.op());
                stack.push(exit);
                for p in ps {
                    stack.push(Frame::Enter(p));
                }
            }
            Frame::Exit(t) => topo.push(t),
        }
    }
    topo
}

pub(crate) fn backward<T: Scalar>(loss: &Tensor<T>, store: &mut GradStore<T>) {
    if !loss.requires_grad() {
        return;
    }
    let mut topo = topo_order(loss);
    // Exit frames are pushed after parent Enter frames, so parents pop first and
    // the list is parent-before-consumer; reverse it for the backward sweep.
    topo.reverse();

    let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
    grads.insert(loss.id(), vec![T::one(); loss.numel()]);

    for node in &topo {
        let g = match grads.remove(&node.id()) {
            Some(g) => g,
            None => continue,
        };
        match node.op() {
            Op::Leaf => {
                store.accumulate(node.id(), g);
                continue;
            }
            Op::Conv2d { x, w, b, stride, padding } => {
                let need_db = b.as_ref().map(|b| b.requires_grad()).unwrap_or(false);
                let out = ops::conv2d_backward(&g, x, w, need_db, *stride, *padding);
                if let Some(dx) = out.dx {
                    acc_into(&mut grads, x.id(), dx);
                }
                if let Some(dw) = out.dw {
                    acc_into(&mut grads, w.id(), dw);
                }
                if let (Some(db), Some(b)) = (out.db, b.as_ref()) {
                    acc_into(&mut grads, b.id(), db);
                }
            }
            Op::DwConv2d { x, w, b } => {
                let need_db = b.as_ref().map(|b| b.requires_grad()).unwrap_or(false);
                let out = ops::dwconv2d_backward(&g, x, w, need_db);
                if let Some(dx) = out.dx {
                    acc_into(&mut grads, x.id(), dx);
                }
                if let Some(dw) = out.dw {
                    acc_into(&mut grads, w.id(), dw);
                }
                if let (Some(db), Some(b)) = (out.db, b.as_ref()) {
                    acc_into(&mut grads, b.id(), db);
                }
            }
            Op::Conv1x1 { x, w, b } => {
                let need_db = b.as_ref().map(|b| b.requires_grad()).unwrap_or(false);
                let out = ops::conv1x1_backward(&g, x, w, need_db);
                if let Some(dx) = out.dx {
                    acc_into(&mut grads, x.id(), dx);
                }
                if let Some(dw) = out.dw {
                    acc_into(&mut grads, w.id(), dw);
                }
                if let (Some(db), Some(b)) = (out.db, b.as_ref()) {
                    acc_into(&mut grads, b.id(), db);
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let need_affine = gamma.requires_grad() || beta.requires_grad();
                let out = ops::layer_norm_backward(&g, x, gamma, need_affine, *eps);
                if let Some(dx) = out.dx {
                    acc_into(&mut grads, x.id(), dx);
                }
                if let Some(dgamma) = out.dgamma {
                    if gamma.requires_grad() {
                        acc_into(&mut grads, gamma.id(), dgamma);
                    }
                }
                if let Some(dbeta) = out.dbeta {
                    if beta.requires_grad() {
                        acc_into(&mut grads, beta.id(), dbeta);
                    }
                }
            }
            Op::InstanceNorm { x, eps } => {
                acc_into(&mut grads, x.id(), ops::instance_norm_backward(&g, x, *eps));
            }
            Op::Gelu { x } => {
                let xd = x.data();
                let dx = g
                    .iter()
                    .zip(xd.iter())
                    .map(|(&gv, &xv)| {
                        gv * (ops::gelu_cdf(xv) + xv * ops::gaussian_pdf(xv))
                    })
                    .collect();
                drop(xd);
                acc_into(&mut grads, x.id(), dx);
            }
            Op::Relu { x } => {
                let xd = x.data();
                let zero = T::zero();
                let dx = g
                    .iter()
                    .zip(xd.iter())
                    .map(|(&gv, &xv)| if xv > zero { gv } else { zero })
                    .collect();
                drop(xd);
                acc_into(&mut grads, x.id(), dx);
            }
            Op::SoftmaxLast { x } => {
                let y = node.data();
                let row = node.shape()[3];
                let dx = ops::softmax_last_backward(&g, &y, row);
                drop(y);
                acc_into(&mut grads, x.id(), dx);
            }
            Op::Matmul { a, b } => {
                let [b0, b1, m, k] = a.shape();
                let n = b.shape()[3];
                if a.requires_grad() {
                    let bd = b.data();
                    let mut da = vec![T::zero(); b0 * b1 * m * k];
                    for batch in 0..b0 * b1 {
                        ops::mm_nt(
                            &g[batch * m * n..(batch + 1) * m * n],
                            &bd[batch * k * n..(batch + 1) * k * n],
                            &mut da[batch * m * k..(batch + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    drop(bd);
                    acc_into(&mut grads, a.id(), da);
                }
                if b.requires_grad() {
                    let ad = a.data();
                    let mut db = vec![T::zero(); b0 * b1 * k * n];
                    for batch in 0..b0 * b1 {
                        ops::mm_tn(
                            &ad[batch * m * k..(batch + 1) * m * k],
                            &g[batch * m * n..(batch + 1) * m * n],
                            &mut db[batch * k * n..(batch + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                    drop(ad);
                    acc_into(&mut grads, b.id(), db);
                }
            }
            Op::TransposeLast2 { x } => {
                // Node shape is (b0, b1, c, r) for x of shape (.., r, c); the
                // adjoint is the same swap applied to the gradient.
                let [b0, b1, c, r] = node.shape();
                let mut dx = vec![T::zero(); g.len()];
                for batch in 0..b0 * b1 {
                    let src = &g[batch * r * c..(batch + 1) * r * c];
                    let dst = &mut dx[batch * r * c..(batch + 1) * r * c];
                    for i in 0..c {
                        for j in 0..r {
                            dst[j * c + i] = src[i * r + j];
                        }
                    }
                }
                acc_into(&mut grads, x.id(), dx);
            }
            Op::Reshape { x } => {
                acc_into(&mut grads, x.id(), g);
            }
            Op::PixelShuffle { x, r } => {
                let [n, c, oh, ow] = node.shape();
                let dx = ops::pixel_unshuffle_raw(&g, n, c, oh, ow, *r);
                acc_into(&mut grads, x.id(), dx);
            }
            Op::PixelUnshuffle { x, r } => {
                let [n, cout, h, w] = node.shape();
                let dx = ops::pixel_shuffle_raw(&g, n, cout, h, w, *r);
                acc_into(&mut grads, x.id(), dx);
            }
            Op::Add { a, b } => {
                if a.requires_grad() {
                    acc_into(&mut grads, a.id(), g.clone());
                }
                if b.requires_grad() {
                    acc_into(&mut grads, b.id(), g);
                }
            }
            Op::Sub { a, b } => {
                if b.requires_grad() {
                    acc_into(&mut grads, b.id(), g.iter().map(|&v| T::zero() - v).collect());
                }
                if a.requires_grad() {
                    acc_into(&mut grads, a.id(), g);
                }
            }
            Op::Mul { a, b } => {
                if a.requires_grad() {
                    let bd = b.data();
                    let da = g.iter().zip(bd.iter()).map(|(&gv, &bv)| gv * bv).collect();
                    drop(bd);
                    acc_into(&mut grads, a.id(), da);
                }
                if b.requires_grad() {
                    let ad = a.data();
                    let db = g.iter().zip(ad.iter()).map(|(&gv, &av)| gv * av).collect();
                    drop(ad);
                    acc_into(&mut grads, b.id(), db);
                }
            }
            Op::Scale { x, c } => {
                let cv = T::from_f64(*c);
                acc_into(&mut grads, x.id(), g.iter().map(|&v| v * cv).collect());
            }
            Op::Abs { x } => {
                let xd = x.data();
                let zero = T::zero();
                let dx = g
                    .iter()
                    .zip(xd.iter())
                    .map(|(&gv, &xv)| {
                        if xv > zero {
                            gv
                        } else if xv < zero {
                            zero - gv
                        } else {
                            zero
                        }
                    })
                    .collect();
                drop(xd);
                acc_into(&mut grads, x.id(), dx);
            }
            Op::DivChannels { x, s } => {
                let [n, c, h, w] = x.shape();
                let hw = h * w;
                let sd = s.data();
                if x.requires_grad() {
                    let mut dx = vec![T::zero(); g.len()];
                    for bi in 0..n {
                        for ch in 0..c {
                            let base = (bi * c + ch) * hw;
                            let inv = T::one() / sd[ch];
                            for i in 0..hw {
                                dx[base + i] = g[base + i] * inv;
                            }
                        }
                    }
                    acc_into(&mut grads, x.id(), dx);
                }
                if s.requires_grad() {
                    let xd = x.data();
                    let mut ds = vec![T::zero(); c];
                    for bi in 0..n {
                        for ch in 0..c {
                            let base = (bi * c + ch) * hw;
                            let inv_sq = T::one() / (sd[ch] * sd[ch]);
                            let mut acc = T::zero();
                            for i in 0..hw {
                                acc = acc + g[base + i] * xd[base + i];
                            }
                            ds[ch] = ds[ch] - acc * inv_sq;
                        }
                    }
                    drop(xd);
                    acc_into(&mut grads, s.id(), ds);
                }
                drop(sd);
            }
            Op::ConcatChannels { xs } => {
                let [n, _, h, w] = node.shape();
                let hw = h * w;
                let c_total: usize = xs.iter().map(|x| x.shape()[1]).sum();
                let mut c_off = 0;
                for x in xs {
                    let xc = x.shape()[1];
                    if x.requires_grad() {
                        let mut dx = Vec::with_capacity(n * xc * hw);
                        for bi in 0..n {
                            let start = (bi * c_total + c_off) * hw;
                            dx.extend_from_slice(&g[start..start + xc * hw]);
                        }
                        acc_into(&mut grads, x.id(), dx);
                    }
                    c_off += xc;
                }
            }
            Op::SliceChannels { x, from, to } => {
                let [n, c, h, w] = x.shape();
                let hw = h * w;
                let cs = to - from;
                let mut dx = vec![T::zero(); n * c * hw];
                for bi in 0..n {
                    let dst = (bi * c + from) * hw;
                    let src = bi * cs * hw;
                    dx[dst..dst + cs * hw].copy_from_slice(&g[src..src + cs * hw]);
                }
                acc_into(&mut grads, x.id(), dx);
            }
            Op::MeanAll { x } => {
                let share = g[0] / T::from_f64(x.numel() as f64);
                acc_into(&mut grads, x.id(), vec![share; x.numel()]);
            }
        }
    }
}
