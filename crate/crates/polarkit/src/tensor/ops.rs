//! Forward operators and their adjoint math.
//!
//! Each public method computes eagerly and records an [`Op`] node; the paired
//! `*_backward` functions are invoked by the reverse sweep in `autograd`. Shape
//! violations panic: operator wiring is a programming contract, validated at the
//! configuration layer before any graph is built.

use super::{numel, Op, Shape, Tensor};
use crate::scalar::Scalar;

/// out += a * b for row-major a (m x k) and b (k x n).
///
/// Four b-rows are folded per pass over the output row: a quarter of the
/// write traffic of the rank-1 form, and the folded sum vectorizes cleanly.
pub(crate) fn mm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        let mut p = 0;
        while p + 4 <= k {
            let (a0, a1, a2, a3) = (arow[p], arow[p + 1], arow[p + 2], arow[p + 3]);
            let b0 = &b[p * n..(p + 1) * n];
            let b1 = &b[(p + 1) * n..(p + 2) * n];
            let b2 = &b[(p + 2) * n..(p + 3) * n];
            let b3 = &b[(p + 3) * n..(p + 4) * n];
            for ((((o, &v0), &v1), &v2), &v3) in
                orow.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3)
            {
                *o = *o + (a0 * v0 + a1 * v1 + a2 * v2 + a3 * v3);
            }
            p += 4;
        }
        while p < k {
            let av = arow[p];
            if av != T::zero() {
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
            p += 1;
        }
    }
}

/// out += a * b^T for row-major a (m x k) and b (n x k).
pub(crate) fn mm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            // Four independent partial sums break the serial add chain.
            let mut acc = [T::zero(); 4];
            for (ca, cb) in arow.chunks_exact(4).zip(brow.chunks_exact(4)) {
                acc[0] = acc[0] + ca[0] * cb[0];
                acc[1] = acc[1] + ca[1] * cb[1];
                acc[2] = acc[2] + ca[2] * cb[2];
                acc[3] = acc[3] + ca[3] * cb[3];
            }
            let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
            let ra = arow.chunks_exact(4).remainder();
            let rb = brow.chunks_exact(4).remainder();
            for (&av, &bv) in ra.iter().zip(rb) {
                s = s + av * bv;
            }
            out[i * n + j] = out[i * n + j] + s;
        }
    }
}

/// out += a^T * b for row-major a (k x m) and b (k x n).
pub(crate) fn mm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let mut p = 0;
        while p + 4 <= k {
            let (a0, a1, a2, a3) =
                (a[p * m + i], a[(p + 1) * m + i], a[(p + 2) * m + i], a[(p + 3) * m + i]);
            let b0 = &b[p * n..(p + 1) * n];
            let b1 = &b[(p + 1) * n..(p + 2) * n];
            let b2 = &b[(p + 2) * n..(p + 3) * n];
            let b3 = &b[(p + 3) * n..(p + 4) * n];
            for ((((o, &v0), &v1), &v2), &v3) in
                orow.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3)
            {
                *o = *o + (a0 * v0 + a1 * v1 + a2 * v2 + a3 * v3);
            }
            p += 4;
        }
        while p < k {
            let av = a[p * m + i];
            if av != T::zero() {
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
            p += 1;
        }
    }
}

fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unrolls one batch image (ci x h x w) into a (ci*k*k) x (ho*wo) patch matrix,
/// zero-filling positions that fall outside the padded frame.
fn im2col<T: Scalar>(
    x: &[T],
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [T],
) {
    let zero = T::zero();
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        for v in &mut dst[oy * wo..(oy + 1) * wo] {
                            *v = zero;
                        }
                        continue;
                    }
                    let src = &x[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        dst[oy * wo + ox] = if ix < 0 || ix >= w as isize {
                            zero
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a patch matrix back onto the image grid.
fn col2im_add<T: Scalar>(
    col: &[T],
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut x[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn require_grad2<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> bool {
    a.requires_grad() || b.requires_grad()
}

impl<T: Scalar> Tensor<T> {
    /// 2-D cross-correlation with square kernel, zero padding, optional bias.
    ///
    /// `w` is (out_c, in_c, k, k); `b`, when given, is (1, out_c, 1, 1).
    pub fn conv2d(
        &self,
        w: &Tensor<T>,
        b: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> Tensor<T> {
        let [n, ci, h, wid] = self.shape();
        let [co, wci, k, k2] = w.shape();
        assert_eq!(k, k2, "conv2d kernel must be square");
        assert_eq!(ci, wci, "conv2d input channels mismatch");
        assert!(stride >= 1 && h + 2 * padding >= k && wid + 2 * padding >= k);
        if let Some(b) = b {
            assert_eq!(b.shape(), [1, co, 1, 1], "conv2d bias shape");
        }
        let ho = conv_out_len(h, k, stride, padding);
        let wo = conv_out_len(wid, k, stride, padding);

        let x = self.data();
        let wd = w.data();
        let mut out = vec![T::zero(); n * co * ho * wo];
        let mut col = vec![T::zero(); ci * k * k * ho * wo];
        for bi in 0..n {
            im2col(
                &x[bi * ci * h * wid..(bi + 1) * ci * h * wid],
                ci,
                h,
                wid,
                k,
                stride,
                padding,
                ho,
                wo,
                &mut col,
            );
            mm_nn(
                &wd,
                &col,
                &mut out[bi * co * ho * wo..(bi + 1) * co * ho * wo],
                co,
                ci * k * k,
                ho * wo,
            );
        }
        if let Some(bt) = b {
            let bd = bt.data();
            for bi in 0..n {
                for c in 0..co {
                    let base = (bi * co + c) * ho * wo;
                    for s in 0..ho * wo {
                        out[base + s] = out[base + s] + bd[c];
                    }
                }
            }
        }
        drop(x);
        drop(wd);
        let rg = self.requires_grad()
            || w.requires_grad()
            || b.map(|b| b.requires_grad()).unwrap_or(false);
        Tensor::from_op(
            [n, co, ho, wo],
            out,
            Op::Conv2d {
                x: self.clone(),
                w: w.clone(),
                b: b.cloned(),
                stride,
                padding,
            },
            rg,
        )
    }

    /// Per-channel 3x3-style convolution (no cross-channel mixing), stride 1,
    /// padding k/2 so spatial size is preserved. `w` is (c, 1, k, k).
    pub fn dwconv2d(&self, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Tensor<T> {
        let [n, c, h, wid] = self.shape();
        let [wc, one, k, k2] = w.shape();
        assert_eq!((wc, one, k == k2, k % 2), (c, 1, true, 1), "dwconv2d weight shape");
        if let Some(b) = b {
            assert_eq!(b.shape(), [1, c, 1, 1], "dwconv2d bias shape");
        }
        let pad = k / 2;
        let x = self.data();
        let wd = w.data();
        let mut out = vec![T::zero(); n * c * h * wid];
        for bi in 0..n {
            for ch in 0..c {
                let xoff = (bi * c + ch) * h * wid;
                let woff = ch * k * k;
                for oy in 0..h {
                    for ox in 0..wid {
                        let mut acc = T::zero();
                        for ky in 0..k {
                            let iy = (oy + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wid as isize {
                                    continue;
                                }
                                acc = acc
                                    + wd[woff + ky * k + kx]
                                        * x[xoff + iy as usize * wid + ix as usize];
                            }
                        }
                        out[xoff + oy * wid + ox] = acc;
                    }
                }
            }
        }
        if let Some(bt) = b {
            let bd = bt.data();
            for bi in 0..n {
                for ch in 0..c {
                    let base = (bi * c + ch) * h * wid;
                    for s in 0..h * wid {
                        out[base + s] = out[base + s] + bd[ch];
                    }
                }
            }
        }
        drop(x);
        drop(wd);
        let rg = self.requires_grad()
            || w.requires_grad()
            || b.map(|b| b.requires_grad()).unwrap_or(false);
        Tensor::from_op(
            [n, c, h, wid],
            out,
            Op::DwConv2d { x: self.clone(), w: w.clone(), b: b.cloned() },
            rg,
        )
    }

    /// Point-wise channel mixing: matmul over the channel dimension at each pixel.
    /// `w` is (out_c, in_c, 1, 1).
    pub fn conv1x1(&self, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Tensor<T> {
        let [n, ci, h, wid] = self.shape();
        let [co, wci, one_a, one_b] = w.shape();
        assert_eq!((wci, one_a, one_b), (ci, 1, 1), "conv1x1 weight shape");
        if let Some(b) = b {
            assert_eq!(b.shape(), [1, co, 1, 1], "conv1x1 bias shape");
        }
        let hw = h * wid;
        let x = self.data();
        let wd = w.data();
        let mut out = vec![T::zero(); n * co * hw];
        for bi in 0..n {
            mm_nn(
                &wd,
                &x[bi * ci * hw..(bi + 1) * ci * hw],
                &mut out[bi * co * hw..(bi + 1) * co * hw],
                co,
                ci,
                hw,
            );
        }
        if let Some(bt) = b {
            let bd = bt.data();
            for bi in 0..n {
                for c in 0..co {
                    let base = (bi * co + c) * hw;
                    for s in 0..hw {
                        out[base + s] = out[base + s] + bd[c];
                    }
                }
            }
        }
        drop(x);
        drop(wd);
        let rg = self.requires_grad()
            || w.requires_grad()
            || b.map(|b| b.requires_grad()).unwrap_or(false);
        Tensor::from_op(
            [n, co, h, wid],
            out,
            Op::Conv1x1 { x: self.clone(), w: w.clone(), b: b.cloned() },
            rg,
        )
    }

    /// Normalizes over the channel dimension at each spatial position, then applies
    /// the per-channel affine `gamma * xhat + beta`. Statistics use the biased
    /// variance and are computed in f64.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Tensor<T> {
        let [n, c, h, wid] = self.shape();
        assert_eq!(gamma.shape(), [1, c, 1, 1], "layer_norm gamma shape");
        assert_eq!(beta.shape(), [1, c, 1, 1], "layer_norm beta shape");
        let hw = h * wid;
        let x = self.data();
        let g = gamma.data();
        let bt = beta.data();
        let mut out = vec![T::zero(); n * c * hw];
        for bi in 0..n {
            for s in 0..hw {
                let base = bi * c * hw + s;
                let mut mean = 0.0f64;
                for ch in 0..c {
                    mean += x[base + ch * hw].to_f64();
                }
                mean /= c as f64;
                let mut var = 0.0f64;
                for ch in 0..c {
                    let d = x[base + ch * hw].to_f64() - mean;
                    var += d * d;
                }
                var /= c as f64;
                let inv = 1.0 / (var + eps).sqrt();
                for ch in 0..c {
                    let xhat = (x[base + ch * hw].to_f64() - mean) * inv;
                    out[base + ch * hw] =
                        T::from_f64(xhat * g[ch].to_f64() + bt[ch].to_f64());
                }
            }
        }
        drop(x);
        drop(g);
        drop(bt);
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Tensor::from_op(
            [n, c, h, wid],
            out,
            Op::LayerNorm { x: self.clone(), gamma: gamma.clone(), beta: beta.clone(), eps },
            rg,
        )
    }

    /// Normalizes each (batch, channel) plane over its spatial extent; no affine.
    pub fn instance_norm(&self, eps: f64) -> Tensor<T> {
        let [n, c, h, wid] = self.shape();
        let hw = h * wid;
        assert!(hw > 0);
        let x = self.data();
        let mut out = vec![T::zero(); n * c * hw];
        for pc in 0..n * c {
            let plane = &x[pc * hw..(pc + 1) * hw];
            let mut mean = 0.0f64;
            for &v in plane {
                mean += v.to_f64();
            }
            mean /= hw as f64;
            let mut var = 0.0f64;
            for &v in plane {
                let d = v.to_f64() - mean;
                var += d * d;
            }
            var /= hw as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (i, &v) in plane.iter().enumerate() {
                out[pc * hw + i] = T::from_f64((v.to_f64() - mean) * inv);
            }
        }
        drop(x);
        let rg = self.requires_grad();
        Tensor::from_op([n, c, h, wid], out, Op::InstanceNorm { x: self.clone(), eps }, rg)
    }

    /// Exact Gaussian-CDF GELU: `x * Phi(x)` with `Phi(x) = (1 + erf(x / sqrt 2)) / 2`.
    pub fn gelu(&self) -> Tensor<T> {
        let out = self.data().iter().map(|&v| v * gelu_cdf(v)).collect();
        let rg = self.requires_grad();
        Tensor::from_op(self.shape(), out, Op::Gelu { x: self.clone() }, rg)
    }

    pub fn relu(&self) -> Tensor<T> {
        let zero = T::zero();
        let out = self.data().iter().map(|&v| if v > zero { v } else { zero }).collect();
        let rg = self.requires_grad();
        Tensor::from_op(self.shape(), out, Op::Relu { x: self.clone() }, rg)
    }

    /// Softmax along the last dimension with max subtraction for stability.
    pub fn softmax_last(&self) -> Tensor<T> {
        let shape = self.shape();
        let row = shape[3];
        assert!(row > 0);
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for r in 0..x.len() / row {
            let xs = &x[r * row..(r + 1) * row];
            let mut m = xs[0];
            for &v in xs {
                if v > m {
                    m = v;
                }
            }
            let mut sum = T::zero();
            for (i, &v) in xs.iter().enumerate() {
                let e = (v - m).exp();
                out[r * row + i] = e;
                sum = sum + e;
            }
            for v in &mut out[r * row..(r + 1) * row] {
                *v = *v / sum;
            }
        }
        drop(x);
        let rg = self.requires_grad();
        Tensor::from_op(shape, out, Op::SoftmaxLast { x: self.clone() }, rg)
    }

    /// Batched matrix product over the trailing two dimensions; the two leading
    /// dimensions must match exactly.
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        let [b0, b1, m, k] = self.shape();
        let [c0, c1, k2, n] = other.shape();
        assert_eq!((b0, b1, k), (c0, c1, k2), "matmul shape mismatch");
        let a = self.data();
        let b = other.data();
        let mut out = vec![T::zero(); b0 * b1 * m * n];
        for batch in 0..b0 * b1 {
            mm_nn(
                &a[batch * m * k..(batch + 1) * m * k],
                &b[batch * k * n..(batch + 1) * k * n],
                &mut out[batch * m * n..(batch + 1) * m * n],
                m,
                k,
                n,
            );
        }
        drop(a);
        drop(b);
        let rg = require_grad2(self, other);
        Tensor::from_op(
            [b0, b1, m, n],
            out,
            Op::Matmul { a: self.clone(), b: other.clone() },
            rg,
        )
    }

    /// Swaps the trailing two dimensions.
    pub fn transpose_last2(&self) -> Tensor<T> {
        let [b0, b1, r, c] = self.shape();
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for batch in 0..b0 * b1 {
            let src = &x[batch * r * c..(batch + 1) * r * c];
            let dst = &mut out[batch * r * c..(batch + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        drop(x);
        let rg = self.requires_grad();
        Tensor::from_op([b0, b1, c, r], out, Op::TransposeLast2 { x: self.clone() }, rg)
    }

    /// Reinterprets the value order under a new shape of equal element count.
    pub fn reshape(&self, shape: Shape) -> Tensor<T> {
        assert_eq!(numel(shape), self.numel(), "reshape element count mismatch");
        let out = self.to_vec();
        let rg = self.requires_grad();
        Tensor::from_op(shape, out, Op::Reshape { x: self.clone() }, rg)
    }

    /// Sub-pixel rearrangement (N, C*r^2, H, W) -> (N, C, rH, rW).
    pub fn pixel_shuffle(&self, r: usize) -> Tensor<T> {
        let [n, cin, h, w] = self.shape();
        assert!(r >= 1 && cin % (r * r) == 0, "pixel_shuffle channel count");
        let c = cin / (r * r);
        let out = pixel_shuffle_raw(&self.data(), n, cin, h, w, r);
        let rg = self.requires_grad();
        Tensor::from_op(
            [n, c, h * r, w * r],
            out,
            Op::PixelShuffle { x: self.clone(), r },
            rg,
        )
    }

    /// Exact inverse of [`Tensor::pixel_shuffle`]: (N, C, rH, rW) -> (N, C*r^2, H, W).
    pub fn pixel_unshuffle(&self, r: usize) -> Tensor<T> {
        let [n, c, ih, iw] = self.shape();
        assert!(r >= 1 && ih % r == 0 && iw % r == 0, "pixel_unshuffle spatial size");
        let out = pixel_unshuffle_raw(&self.data(), n, c, ih, iw, r);
        let rg = self.requires_grad();
        Tensor::from_op(
            [n, c * r * r, ih / r, iw / r],
            out,
            Op::PixelUnshuffle { x: self.clone(), r },
            rg,
        )
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        let a = self.data();
        let b = other.data();
        let out = a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect();
        drop(a);
        drop(b);
        let rg = require_grad2(self, other);
        Tensor::from_op(self.shape(), out, Op::Add { a: self.clone(), b: other.clone() }, rg)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        let a = self.data();
        let b = other.data();
        let out = a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect();
        drop(a);
        drop(b);
        let rg = require_grad2(self, other);
        Tensor::from_op(self.shape(), out, Op::Sub { a: self.clone(), b: other.clone() }, rg)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape(), other.shape(), "mul shape mismatch");
        let a = self.data();
        let b = other.data();
        let out = a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect();
        drop(a);
        drop(b);
        let rg = require_grad2(self, other);
        Tensor::from_op(self.shape(), out, Op::Mul { a: self.clone(), b: other.clone() }, rg)
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let cv = T::from_f64(c);
        let out = self.data().iter().map(|&v| v * cv).collect();
        let rg = self.requires_grad();
        Tensor::from_op(self.shape(), out, Op::Scale { x: self.clone(), c }, rg)
    }

    pub fn abs(&self) -> Tensor<T> {
        let out = self.data().iter().map(|&v| v.abs()).collect();
        let rg = self.requires_grad();
        Tensor::from_op(self.shape(), out, Op::Abs { x: self.clone() }, rg)
    }

    /// Divides each channel slice by the matching scalar of `s`, shape (1, C, 1, 1).
    /// Broadcasts over batch and spatial dimensions.
    pub fn div_channels(&self, s: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = self.shape();
        assert_eq!(s.shape(), [1, c, 1, 1], "div_channels divisor shape");
        let x = self.data();
        let sd = s.data();
        let hw = h * w;
        let mut out = vec![T::zero(); x.len()];
        for bi in 0..n {
            for ch in 0..c {
                let base = (bi * c + ch) * hw;
                let inv = T::one() / sd[ch];
                for i in 0..hw {
                    out[base + i] = x[base + i] * inv;
                }
            }
        }
        drop(x);
        drop(sd);
        let rg = require_grad2(self, s);
        Tensor::from_op(
            [n, c, h, w],
            out,
            Op::DivChannels { x: self.clone(), s: s.clone() },
            rg,
        )
    }

    /// Slice of channels `[from, to)`.
    pub fn slice_channels(&self, from: usize, to: usize) -> Tensor<T> {
        let [n, c, h, w] = self.shape();
        assert!(from < to && to <= c, "slice_channels range");
        let hw = h * w;
        let x = self.data();
        let cs = to - from;
        let mut out = Vec::with_capacity(n * cs * hw);
        for bi in 0..n {
            let start = (bi * c + from) * hw;
            out.extend_from_slice(&x[start..start + cs * hw]);
        }
        drop(x);
        let rg = self.requires_grad();
        Tensor::from_op(
            [n, cs, h, w],
            out,
            Op::SliceChannels { x: self.clone(), from, to },
            rg,
        )
    }

    /// Mean over every element, producing a (1, 1, 1, 1) scalar.
    pub fn mean_all(&self) -> Tensor<T> {
        let x = self.data();
        let mut acc = T::zero();
        for &v in x.iter() {
            acc = acc + v;
        }
        let mean = acc / T::from_f64(x.len() as f64);
        drop(x);
        let rg = self.requires_grad();
        Tensor::from_op([1, 1, 1, 1], vec![mean], Op::MeanAll { x: self.clone() }, rg)
    }
}

/// Concatenates along the channel dimension; all inputs share batch and spatial dims.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Tensor<T> {
    assert!(!xs.is_empty(), "concat_channels needs at least one input");
    let [n, _, h, w] = xs[0].shape();
    let mut c_total = 0;
    for x in xs {
        let [xn, xc, xh, xw] = x.shape();
        assert_eq!((xn, xh, xw), (n, h, w), "concat_channels non-channel dims mismatch");
        c_total += xc;
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * c_total * hw);
    for bi in 0..n {
        for x in xs {
            let xc = x.shape()[1];
            let d = x.data();
            out.extend_from_slice(&d[bi * xc * hw..(bi + 1) * xc * hw]);
        }
    }
    let rg = xs.iter().any(|x| x.requires_grad());
    Tensor::from_op(
        [n, c_total, h, w],
        out,
        Op::ConcatChannels { xs: xs.iter().map(|&x| x.clone()).collect() },
        rg,
    )
}

/// (n, cin, h, w) -> (n, cin/r^2, h*r, w*r); source channel c*r*r + dy*r + dx
/// lands at output offset (dy, dx) within each r x r cell.
pub(crate) fn pixel_shuffle_raw<T: Scalar>(
    x: &[T],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    r: usize,
) -> Vec<T> {
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..n {
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let src_c = ch * r * r + dy * r + dx;
                    for y in 0..h {
                        for xx in 0..w {
                            out[((bi * c + ch) * oh + y * r + dy) * ow + xx * r + dx] =
                                x[((bi * cin + src_c) * h + y) * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// (n, c, ih, iw) -> (n, c*r^2, ih/r, iw/r); inverse index map of
/// [`pixel_shuffle_raw`], so composing the two is the identity.
pub(crate) fn pixel_unshuffle_raw<T: Scalar>(
    x: &[T],
    n: usize,
    c: usize,
    ih: usize,
    iw: usize,
    r: usize,
) -> Vec<T> {
    let (h, w) = (ih / r, iw / r);
    let cout = c * r * r;
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..n {
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let dst_c = ch * r * r + dy * r + dx;
                    for y in 0..h {
                        for xx in 0..w {
                            out[((bi * cout + dst_c) * h + y) * w + xx] =
                                x[((bi * c + ch) * ih + y * r + dy) * iw + xx * r + dx];
                        }
                    }
                }
            }
        }
    }
    out
}

#[inline]
pub(crate) fn gelu_cdf<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub(crate) fn gaussian_pdf<T: Scalar>(x: T) -> T {
    let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    (-(x * x) * T::from_f64(0.5)).exp() * inv_sqrt_2pi
}

// ---------------------------------------------------------------------------
// Adjoints. Each function receives the upstream gradient `g` plus the forward
// inputs and returns gradients for the inputs that require them (None elsewhere).
// ---------------------------------------------------------------------------

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &[T],
    x: &Tensor<T>,
    w: &Tensor<T>,
    need_db: bool,
    stride: usize,
    padding: usize,
) -> ConvGrads<T> {
    let [n, ci, h, wid] = x.shape();
    let [co, _, k, _] = w.shape();
    let ho = conv_out_len(h, k, stride, padding);
    let wo = conv_out_len(wid, k, stride, padding);
    let xd = x.data();
    let wd = w.data();
    let ckk = ci * k * k;

    let mut dx = x.requires_grad().then(|| vec![T::zero(); n * ci * h * wid]);
    let mut dw = w.requires_grad().then(|| vec![T::zero(); co * ckk]);
    let mut db = need_db.then(|| vec![T::zero(); co]);

    let mut col = vec![T::zero(); ckk * ho * wo];
    let mut dcol = vec![T::zero(); ckk * ho * wo];
    for bi in 0..n {
        let gslice = &g[bi * co * ho * wo..(bi + 1) * co * ho * wo];
        if dw.is_some() || dx.is_some() {
            im2col(
                &xd[bi * ci * h * wid..(bi + 1) * ci * h * wid],
                ci,
                h,
                wid,
                k,
                stride,
                padding,
                ho,
                wo,
                &mut col,
            );
        }
        if let Some(dw) = dw.as_mut() {
            mm_nt(gslice, &col, dw, co, ho * wo, ckk);
        }
        if let Some(dx) = dx.as_mut() {
            for v in &mut dcol {
                *v = T::zero();
            }
            mm_tn(&wd, gslice, &mut dcol, ckk, co, ho * wo);
            col2im_add(
                &dcol,
                ci,
                h,
                wid,
                k,
                stride,
                padding,
                ho,
                wo,
                &mut dx[bi * ci * h * wid..(bi + 1) * ci * h * wid],
            );
        }
        if let Some(db) = db.as_mut() {
            for c in 0..co {
                let mut acc = T::zero();
                for s in 0..ho * wo {
                    acc = acc + gslice[c * ho * wo + s];
                }
                db[c] = db[c] + acc;
            }
        }
    }
    ConvGrads { dx, dw, db }
}

pub(crate) fn dwconv2d_backward<T: Scalar>(
    g: &[T],
    x: &Tensor<T>,
    w: &Tensor<T>,
    need_db: bool,
) -> ConvGrads<T> {
    let [n, c, h, wid] = x.shape();
    let k = w.shape()[2];
    let pad = k / 2;
    let xd = x.data();
    let wd = w.data();

    let mut dx = x.requires_grad().then(|| vec![T::zero(); n * c * h * wid]);
    let mut dw = w.requires_grad().then(|| vec![T::zero(); c * k * k]);
    let mut db = need_db.then(|| vec![T::zero(); c]);

    for bi in 0..n {
        for ch in 0..c {
            let off = (bi * c + ch) * h * wid;
            for oy in 0..h {
                for ox in 0..wid {
                    let gv = g[off + oy * wid + ox];
                    if let Some(db) = db.as_mut() {
                        db[ch] = db[ch] + gv;
                    }
                    for ky in 0..k {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wid as isize {
                                continue;
                            }
                            let xi = off + iy as usize * wid + ix as usize;
                            if let Some(dw) = dw.as_mut() {
                                dw[ch * k * k + ky * k + kx] =
                                    dw[ch * k * k + ky * k + kx] + gv * xd[xi];
                            }
                            if let Some(dx) = dx.as_mut() {
                                dx[xi] = dx[xi] + gv * wd[ch * k * k + ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

pub(crate) fn conv1x1_backward<T: Scalar>(
    g: &[T],
    x: &Tensor<T>,
    w: &Tensor<T>,
    need_db: bool,
) -> ConvGrads<T> {
    let [n, ci, h, wid] = x.shape();
    let co = w.shape()[0];
    let hw = h * wid;
    let xd = x.data();
    let wd = w.data();

    let mut dx = x.requires_grad().then(|| vec![T::zero(); n * ci * hw]);
    let mut dw = w.requires_grad().then(|| vec![T::zero(); co * ci]);
    let mut db = need_db.then(|| vec![T::zero(); co]);

    for bi in 0..n {
        let gs = &g[bi * co * hw..(bi + 1) * co * hw];
        let xs = &xd[bi * ci * hw..(bi + 1) * ci * hw];
        if let Some(dw) = dw.as_mut() {
            mm_nt(gs, xs, dw, co, hw, ci);
        }
        if let Some(dx) = dx.as_mut() {
            mm_tn(&wd, gs, &mut dx[bi * ci * hw..(bi + 1) * ci * hw], ci, co, hw);
        }
        if let Some(db) = db.as_mut() {
            for c in 0..co {
                let mut acc = T::zero();
                for s in 0..hw {
                    acc = acc + gs[c * hw + s];
                }
                db[c] = db[c] + acc;
            }
        }
    }
    ConvGrads { dx, dw, db }
}

pub(crate) struct NormGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dgamma: Option<Vec<T>>,
    pub dbeta: Option<Vec<T>>,
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    g: &[T],
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    need_affine: bool,
    eps: f64,
) -> NormGrads<T> {
    let [n, c, h, wid] = x.shape();
    let hw = h * wid;
    let xd = x.data();
    let gm = gamma.data();

    let mut dx = x.requires_grad().then(|| vec![T::zero(); n * c * hw]);
    let mut dgamma = need_affine.then(|| vec![0.0f64; c]);
    let mut dbeta = need_affine.then(|| vec![0.0f64; c]);

    let mut xhat = vec![0.0f64; c];
    let mut gg = vec![0.0f64; c];
    for bi in 0..n {
        for s in 0..hw {
            let base = bi * c * hw + s;
            let mut mean = 0.0f64;
            for ch in 0..c {
                mean += xd[base + ch * hw].to_f64();
            }
            mean /= c as f64;
            let mut var = 0.0f64;
            for ch in 0..c {
                let d = xd[base + ch * hw].to_f64() - mean;
                var += d * d;
            }
            var /= c as f64;
            let inv = 1.0 / (var + eps).sqrt();

            let mut m1 = 0.0f64;
            let mut m2 = 0.0f64;
            for ch in 0..c {
                xhat[ch] = (xd[base + ch * hw].to_f64() - mean) * inv;
                gg[ch] = g[base + ch * hw].to_f64() * gm[ch].to_f64();
                m1 += gg[ch];
                m2 += gg[ch] * xhat[ch];
            }
            m1 /= c as f64;
            m2 /= c as f64;
            if let Some(dx) = dx.as_mut() {
                for ch in 0..c {
                    dx[base + ch * hw] = dx[base + ch * hw]
                        + T::from_f64((gg[ch] - m1 - xhat[ch] * m2) * inv);
                }
            }
            if let (Some(dgamma), Some(dbeta)) = (dgamma.as_mut(), dbeta.as_mut()) {
                for ch in 0..c {
                    let gv = g[base + ch * hw].to_f64();
                    dgamma[ch] += gv * xhat[ch];
                    dbeta[ch] += gv;
                }
            }
        }
    }
    NormGrads {
        dx,
        dgamma: dgamma.map(|v| v.into_iter().map(T::from_f64).collect()),
        dbeta: dbeta.map(|v| v.into_iter().map(T::from_f64).collect()),
    }
}

pub(crate) fn instance_norm_backward<T: Scalar>(g: &[T], x: &Tensor<T>, eps: f64) -> Vec<T> {
    let [n, c, h, wid] = x.shape();
    let hw = h * wid;
    let xd = x.data();
    let mut dx = vec![T::zero(); n * c * hw];
    for pc in 0..n * c {
        let plane = &xd[pc * hw..(pc + 1) * hw];
        let gs = &g[pc * hw..(pc + 1) * hw];
        let mut mean = 0.0f64;
        for &v in plane {
            mean += v.to_f64();
        }
        mean /= hw as f64;
        let mut var = 0.0f64;
        for &v in plane {
            let d = v.to_f64() - mean;
            var += d * d;
        }
        var /= hw as f64;
        let inv = 1.0 / (var + eps).sqrt();
        let mut m1 = 0.0f64;
        let mut m2 = 0.0f64;
        for i in 0..hw {
            let xh = (plane[i].to_f64() - mean) * inv;
            m1 += gs[i].to_f64();
            m2 += gs[i].to_f64() * xh;
        }
        m1 /= hw as f64;
        m2 /= hw as f64;
        for i in 0..hw {
            let xh = (plane[i].to_f64() - mean) * inv;
            dx[pc * hw + i] = T::from_f64((gs[i].to_f64() - m1 - xh * m2) * inv);
        }
    }
    dx
}

pub(crate) fn softmax_last_backward<T: Scalar>(g: &[T], y: &[T], row: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); g.len()];
    for r in 0..g.len() / row {
        let ys = &y[r * row..(r + 1) * row];
        let gs = &g[r * row..(r + 1) * row];
        let mut dot = T::zero();
        for i in 0..row {
            dot = dot + gs[i] * ys[i];
        }
        for i in 0..row {
            dx[r * row + i] = ys[i] * (gs[i] - dot);
        }
    }
    dx
}
