//! Dual-domain training objective.
//!
//! The total loss supervises the four restored angle planes directly (l1 plus
//! an optional perceptual term, plus the plane-pair consistency residual) and
//! the Stokes parameters derived from them (l1 plus a scale-indifferent
//! cross-product direction residual). The quad -> Stokes map is linear and
//! lives inside the autodiff graph, so every term is differentiable back to
//! the network parameters.
//!
//! This module also owns the tensor-domain view of a quad: planes stack
//! channel-major into `[1, 4c, h, w]`, all I0 channels first, then I45, I90,
//! I135.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polar::{Field, PolarQuad};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Extractor identity used by [`image_loss`]. One fixed pyramid for the whole
/// project keeps golden values and checkpoints comparable across runs.
pub const PERCEPTUAL_EXTRACTOR_SEED: u64 = 0x504f_4c41;

/// Channel widths of the three perceptual pyramid levels.
const PERCEPTUAL_WIDTHS: [usize; 3] = [8, 16, 32];

/// Loss weights. `lambda_s` scales the Stokes-domain term, `lambda_p` the
/// perceptual term inside the image loss, `lambda_ri` the plane-pair
/// consistency residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_s: f64,
    pub lambda_p: f64,
    pub lambda_ri: f64,
    pub perceptual_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_s: 10.0, lambda_p: 0.01, lambda_ri: 1.0, perceptual_enabled: true }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights =
            [("lambda_s", self.lambda_s), ("lambda_p", self.lambda_p), ("lambda_ri", self.lambda_ri)];
        for (name, v) in weights {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Loads a quad into the graph as a `[1, 4c, h, w]` leaf.
pub fn quad_tensor<T: Scalar>(quad: &PolarQuad<T>, requires_grad: bool) -> Tensor<T> {
    let (h, w, c) = (quad.height(), quad.width(), quad.channels());
    let mut data = Vec::with_capacity(4 * c * h * w);
    for p in quad.planes() {
        data.extend_from_slice(p.values());
    }
    Tensor::leaf([1, 4 * c, h, w], data, requires_grad)
}

/// Reads a `[1, 4c, h, w]` tensor back into the four angle planes.
pub fn quad_from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<PolarQuad<T>> {
    let [n, c4, h, w] = t.shape();
    if n != 1 || c4 % 4 != 0 {
        return Err(Error::Data(format!(
            "quad tensor must be [1, 4c, h, w], got {:?}",
            t.shape()
        )));
    }
    let c = c4 / 4;
    let data = t.to_vec();
    let plane_len = c * h * w;
    let planes = std::array::from_fn(|k| {
        Field::new(h, w, c, data[k * plane_len..(k + 1) * plane_len].to_vec())
            .expect("slice has exact plane length")
    });
    PolarQuad::new(planes)
}

/// Splits a quad tensor into its four angle planes, each `[n, c, h, w]`.
pub fn quad_planes<T: Scalar>(quad: &Tensor<T>) -> [Tensor<T>; 4] {
    let c = quad.shape()[1];
    assert_eq!(c % 4, 0, "quad tensor channels must be a multiple of 4, got {c}");
    let pc = c / 4;
    std::array::from_fn(|k| quad.slice_channels(k * pc, (k + 1) * pc))
}

/// Stokes components of a quad tensor, still attached to the graph.
pub struct StokesTensors<T: Scalar> {
    pub s0: Tensor<T>,
    pub s1: Tensor<T>,
    pub s2: Tensor<T>,
}

/// The linear quad -> Stokes map on graph tensors.
pub fn stokes_from_quad_tensor<T: Scalar>(quad: &Tensor<T>) -> StokesTensors<T> {
    let [i0, i45, i90, i135] = quad_planes(quad);
    StokesTensors {
        s0: i0.add(&i45).add(&i90).add(&i135).scale(0.5),
        s1: i90.sub(&i0),
        s2: i135.sub(&i45),
    }
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    a.sub(b).abs().mean_all()
}

fn perceptual_weights<T: Scalar>(cin: usize, seed: u64) -> Vec<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = Vec::with_capacity(PERCEPTUAL_WIDTHS.len());
    let mut c = cin;
    for &co in &PERCEPTUAL_WIDTHS {
        let std = (2.0 / (c * 9) as f64).sqrt();
        let data: Vec<T> = (0..co * c * 9)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::from_f64(z * std)
            })
            .collect();
        ws.push(Tensor::leaf([co, c, 3, 3], data, false));
        c = co;
    }
    ws
}

/// Sum of mean-absolute feature distances across a three-level stride-2 conv
/// pyramid with GELU activations. The extractor is drawn once from
/// `extractor_seed` and frozen: gradients flow through the features into the
/// two inputs, never into the extractor.
pub fn perceptual_loss<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    extractor_seed: u64,
) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape(), "perceptual_loss shape mismatch");
    let ws = perceptual_weights::<T>(a.shape()[1], extractor_seed);
    let mut fa = a.clone();
    let mut fb = b.clone();
    let mut total: Option<Tensor<T>> = None;
    for w in &ws {
        fa = fa.conv2d(w, None, 2, 1).gelu();
        fb = fb.conv2d(w, None, 2, 1).gelu();
        let level = l1_loss(&fa, &fb);
        total = Some(match total {
            Some(t) => t.add(&level),
            None => level,
        });
    }
    total.expect("pyramid has at least one level")
}

/// Mean absolute violation of the plane-pair identity: I0 + I90 vs I45 + I135.
pub fn r_i<T: Scalar>(quad: &Tensor<T>) -> Tensor<T> {
    let [i0, i45, i90, i135] = quad_planes(quad);
    l1_loss(&i0.add(&i90), &i45.add(&i135))
}

/// Image-domain loss: per-plane l1 (plus weighted perceptual distance when
/// enabled) summed over the four planes, plus the weighted consistency
/// residual of the prediction.
pub fn image_loss<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, cfg: &LossConfig) -> Tensor<T> {
    assert_eq!(pred.shape(), gt.shape(), "image_loss shape mismatch");
    let pp = quad_planes(pred);
    let gp = quad_planes(gt);
    let mut total: Option<Tensor<T>> = None;
    for (p, g) in pp.iter().zip(&gp) {
        let mut term = l1_loss(p, g);
        if cfg.perceptual_enabled && cfg.lambda_p > 0.0 {
            let perc = perceptual_loss(p, g, PERCEPTUAL_EXTRACTOR_SEED);
            term = term.add(&perc.scale(cfg.lambda_p));
        }
        total = Some(match total {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    let planes_term = total.expect("quad has four planes");
    planes_term.add(&r_i(pred).scale(cfg.lambda_ri))
}

/// Cross-product direction residual: mean |S1 * S2_gt - S2 * S1_gt|. Zero iff
/// the predicted and target (S1, S2) vectors are pixel-wise parallel, so it
/// penalizes polarization direction while staying indifferent to scale.
pub fn r_s<T: Scalar>(pred: &StokesTensors<T>, gt: &StokesTensors<T>) -> Tensor<T> {
    l1_loss(&pred.s1.mul(&gt.s2), &pred.s2.mul(&gt.s1))
}

/// Stokes-domain loss: l1 on S1 and S2 plus the direction residual.
pub fn stokes_loss<T: Scalar>(pred: &StokesTensors<T>, gt: &StokesTensors<T>) -> Tensor<T> {
    l1_loss(&pred.s1, &gt.s1).add(&l1_loss(&pred.s2, &gt.s2)).add(&r_s(pred, gt))
}

/// The objective's value with its addends kept separate for logging.
pub struct LossTerms<T: Scalar> {
    /// image + lambda_s * stokes; the tensor to backpropagate.
    pub total: Tensor<T>,
    pub image: Tensor<T>,
    /// Absent when lambda_s is zero and the Stokes term is skipped.
    pub stokes: Option<Tensor<T>>,
}

/// Full objective: image loss plus `lambda_s` times the Stokes loss, with
/// predicted Stokes recomputed from the predicted quad inside the graph.
pub fn loss_terms<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, cfg: &LossConfig) -> LossTerms<T> {
    let image = image_loss(pred, gt, cfg);
    if cfg.lambda_s == 0.0 {
        return LossTerms { total: image.clone(), image, stokes: None };
    }
    let stokes = stokes_loss(&stokes_from_quad_tensor(pred), &stokes_from_quad_tensor(gt));
    let total = image.add(&stokes.scale(cfg.lambda_s));
    LossTerms { total, image, stokes: Some(stokes) }
}

/// The objective as a single tensor; see [`loss_terms`].
pub fn total_loss<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, cfg: &LossConfig) -> Tensor<T> {
    loss_terms(pred, gt, cfg).total
}
