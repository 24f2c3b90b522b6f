//! PSNR and SSIM over the derived polarimetric quantities.
//!
//! Evaluation derives (TI, DoP, AoP) from both quads, normalizes each to a
//! nominal [0, 1] range — TI by the ground-truth maximum, DoP as-is, AoP as
//! theta over pi (not circular: the wraparound at pi counts as error) — and
//! scores PSNR and SSIM per quantity. Identical inputs have infinite PSNR,
//! carried as `None` and serialized as JSON null.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polar::{average_polarized, params_from_quad, Field, PolarQuad};
use crate::scalar::Scalar;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// 10 * log10(peak^2 / MSE); `f64::INFINITY` when the inputs are identical.
pub fn psnr<T: Scalar>(a: &Field<T>, b: &Field<T>, peak: f64) -> f64 {
    assert!(a.same_shape(b), "psnr inputs must share a shape");
    assert!(peak > 0.0);
    let mut se = 0.0f64;
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let d = x.to_f64() - y.to_f64();
        se += d * d;
    }
    let mse = se / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut g {
        *v /= sum;
    }
    g
}

/// Gaussian-weighted window sums at every fully interior window position,
/// computed separably: one horizontal pass, one vertical pass.
fn window_sums(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let wo = w - SSIM_WINDOW + 1;
    let ho = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0f64; h * wo];
    for y in 0..h {
        for x0 in 0..wo {
            let mut acc = 0.0;
            for (i, &gi) in g.iter().enumerate() {
                acc += gi * src[y * w + x0 + i];
            }
            horiz[y * wo + x0] = acc;
        }
    }
    let mut out = vec![0.0f64; ho * wo];
    for y0 in 0..ho {
        for x0 in 0..wo {
            let mut acc = 0.0;
            for (j, &gj) in g.iter().enumerate() {
                acc += gj * horiz[(y0 + j) * wo + x0];
            }
            out[y0 * wo + x0] = acc;
        }
    }
    out
}

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5, K1 = 0.01,
/// K2 = 0.03, dynamic range 1). Multi-channel fields average over the windows
/// of every channel. Requires both dimensions >= 11.
pub fn ssim<T: Scalar>(a: &Field<T>, b: &Field<T>) -> f64 {
    assert!(a.same_shape(b), "ssim inputs must share a shape");
    let (h, w, ch) = (a.height(), a.width(), a.channels());
    assert!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
    );
    let g = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;

    let mut total = 0.0f64;
    let mut count = 0usize;
    for c in 0..ch {
        let av: Vec<f64> = a.values()[c * h * w..(c + 1) * h * w]
            .iter()
            .map(|&v| v.to_f64())
            .collect();
        let bv: Vec<f64> = b.values()[c * h * w..(c + 1) * h * w]
            .iter()
            .map(|&v| v.to_f64())
            .collect();
        let aa: Vec<f64> = av.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = bv.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x * y).collect();

        let mu_a = window_sums(&av, h, w, &g);
        let mu_b = window_sums(&bv, h, w, &g);
        let m_aa = window_sums(&aa, h, w, &g);
        let m_bb = window_sums(&bb, h, w, &g);
        let m_ab = window_sums(&ab, h, w, &g);

        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = m_aa[i] - ma * ma;
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// The six scores for one image (or the mean over a set). A missing PSNR is
/// the identical-images sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub psnr_ti: Option<f64>,
    pub ssim_ti: f64,
    pub psnr_dop: Option<f64>,
    pub ssim_dop: f64,
    pub psnr_aop: Option<f64>,
    pub ssim_aop: f64,
}

/// Mean scores plus the per-image breakdown. The mean PSNR is the sentinel
/// whenever any contributing image hit it (the true mean is infinite).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub mean: MetricSet,
    pub per_image: Vec<MetricSet>,
}

fn finite(v: f64) -> Option<f64> {
    if v.is_finite() {
        Some(v)
    } else {
        None
    }
}

/// Normalized comparison planes for one quad: (ti / ti_norm, dop, aop / pi).
fn comparison_planes<T: Scalar>(quad: &PolarQuad<T>, ti_norm: f64) -> [Field<f64>; 3] {
    let params = params_from_quad(&quad.cast::<f64>());
    let ti = params.ti.map(|v| v / ti_norm);
    let aop = params.aop.map(|v| v / std::f64::consts::PI);
    [ti, params.dop, aop]
}

fn score_pair<T: Scalar>(pred: &PolarQuad<T>, gt: &PolarQuad<T>) -> Result<MetricSet> {
    if pred.height() != gt.height()
        || pred.width() != gt.width()
        || pred.channels() != gt.channels()
    {
        return Err(Error::Data(format!(
            "evaluate shape mismatch: pred {}x{}x{} vs gt {}x{}x{}",
            pred.height(),
            pred.width(),
            pred.channels(),
            gt.height(),
            gt.width(),
            gt.channels()
        )));
    }
    let gt_ti = average_polarized(&gt.cast::<f64>());
    let ti_norm = gt_ti.values().iter().fold(0.0f64, |m, &v| m.max(v));
    let ti_norm = if ti_norm > crate::polar::DARK_S0_EPSILON { ti_norm } else { 1.0 };

    let p = comparison_planes(pred, ti_norm);
    let g = comparison_planes(gt, ti_norm);
    Ok(MetricSet {
        psnr_ti: finite(psnr(&p[0], &g[0], 1.0)),
        ssim_ti: ssim(&p[0], &g[0]),
        psnr_dop: finite(psnr(&p[1], &g[1], 1.0)),
        ssim_dop: ssim(&p[1], &g[1]),
        psnr_aop: finite(psnr(&p[2], &g[2], 1.0)),
        ssim_aop: ssim(&p[2], &g[2]),
    })
}

/// Scores one restored quad against its ground truth.
pub fn evaluate<T: Scalar>(pred: &PolarQuad<T>, gt: &PolarQuad<T>) -> Result<MetricReport> {
    let set = score_pair(pred, gt)?;
    Ok(MetricReport { mean: set.clone(), per_image: vec![set] })
}

/// Scores a set of (pred, gt) pairs and averages.
pub fn evaluate_many<T: Scalar>(
    pairs: &[(&PolarQuad<T>, &PolarQuad<T>)],
) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Data("evaluate_many needs at least one pair".into()));
    }
    let per_image: Vec<MetricSet> =
        pairs.iter().map(|(p, g)| score_pair(p, g)).collect::<Result<_>>()?;

    let n = per_image.len() as f64;
    let mean_opt = |f: fn(&MetricSet) -> Option<f64>| -> Option<f64> {
        let mut acc = 0.0;
        for s in &per_image {
            acc += f(s)?;
        }
        Some(acc / n)
    };
    let mean_f = |f: fn(&MetricSet) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    let mean = MetricSet {
        psnr_ti: mean_opt(|s| s.psnr_ti),
        ssim_ti: mean_f(|s| s.ssim_ti),
        psnr_dop: mean_opt(|s| s.psnr_dop),
        ssim_dop: mean_f(|s| s.ssim_dop),
        psnr_aop: mean_opt(|s| s.psnr_aop),
        ssim_aop: mean_f(|s| s.ssim_aop),
    };
    Ok(MetricReport { mean, per_image })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::degrade::{
        apply_low_light, demosaic_bilinear, mosaic, synth_scene, DegradationSpec, SceneSpec,
    };
    use crate::polar::{quad_from_params, PolarimetricParams};

    fn rand_field(h: usize, w: usize, seed: u64) -> Field<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(h, w, 1, |_, _, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn psnr_closed_form_twenty_db() {
        let a = Field::constant(4, 4, 1, 0.0);
        let b = Field::constant(4, 4, 1, 0.1);
        assert!((psnr(&a, &b, 1.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_identical_inputs_hit_sentinel() {
        let a = rand_field(8, 8, 1);
        assert_eq!(psnr(&a, &a, 1.0), f64::INFINITY);
    }

    #[test]
    fn psnr_is_scale_homogeneous() {
        let a = rand_field(8, 8, 2);
        let b = rand_field(8, 8, 3);
        let a5 = a.map(|v| 5.0 * v);
        let b5 = b.map(|v| 5.0 * v);
        assert!((psnr(&a, &b, 1.0) - psnr(&a5, &b5, 5.0)).abs() < 1e-10);
    }

    #[test]
    fn ssim_self_is_exactly_one() {
        let a = rand_field(16, 16, 4);
        assert_eq!(ssim(&a, &a), 1.0);
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = rand_field(16, 16, 5);
        let b = rand_field(16, 16, 6);
        assert_eq!(ssim(&a, &b), ssim(&b, &a));
    }

    #[test]
    fn ssim_of_inverted_binary_tile_is_negative() {
        let a = Field::from_fn(11, 11, 1, |_, y, x| ((y + x) % 2) as f64);
        let b = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &b) < 0.0, "got {}", ssim(&a, &b));
    }

    #[test]
    fn psnr_and_ssim_match_brute_force() {
        // Independent oracle: direct per-window double loops with explicit
        // mean subtraction, against the separable-filter implementation.
        let a = rand_field(16, 16, 7);
        let b = {
            let noise = rand_field(16, 16, 8);
            Field::from_fn(16, 16, 1, |c, y, x| {
                (a.get(c, y, x) + 0.1 * noise.get(c, y, x)).clamp(0.0, 1.0)
            })
        };

        let mut se = 0.0;
        for (av, bv) in a.values().iter().zip(b.values()) {
            se += (av - bv) * (av - bv);
        }
        let psnr_oracle = 10.0 * (1.0 / (se / 256.0)).log10();
        assert!((psnr(&a, &b, 1.0) - psnr_oracle).abs() < 1e-9);

        let g = gaussian_window();
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..6 {
            for x0 in 0..6 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let wgt = g[j] * g[i];
                        ma += wgt * a.get(0, y0 + j, x0 + i);
                        mb += wgt * b.get(0, y0 + j, x0 + i);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let wgt = g[j] * g[i];
                        let da = a.get(0, y0 + j, x0 + i) - ma;
                        let db = b.get(0, y0 + j, x0 + i) - mb;
                        va += wgt * da * da;
                        vb += wgt * db * db;
                        cov += wgt * da * db;
                    }
                }
                let c1 = 0.01f64 * 0.01;
                let c2 = 0.03f64 * 0.03;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        let ssim_oracle = total / count as f64;
        assert!(
            (ssim(&a, &b) - ssim_oracle).abs() < 1e-9,
            "{} vs oracle {}",
            ssim(&a, &b),
            ssim_oracle
        );
    }

    #[test]
    fn evaluate_identity_saturates_every_metric() {
        let quad = synth_scene(&SceneSpec {
            height: 16,
            width: 16,
            channels: 1,
            regions: 3,
            dop_gradient_scale: 0.5,
            aop_gradient_scale: 0.5,
            seed: 1,
        })
        .unwrap();
        let report = evaluate(&quad, &quad).unwrap();
        assert_eq!(report.mean.psnr_ti, None);
        assert_eq!(report.mean.psnr_dop, None);
        assert_eq!(report.mean.psnr_aop, None);
        assert_eq!(report.mean.ssim_ti, 1.0);
        assert_eq!(report.mean.ssim_dop, 1.0);
        assert_eq!(report.mean.ssim_aop, 1.0);
        assert_eq!(report.per_image.len(), 1);
    }

    #[test]
    fn evaluate_shows_dop_is_the_fragile_quantity_under_demosaicing() {
        // DoP alternates at the sampling frequency while TI is affine, so the
        // mosaic round trip must hurt DoP far more than TI.
        let ti = Field::from_fn(32, 32, 1, |_, _, x| 0.5 + 0.3 * x as f64 / 32.0);
        let dop =
            Field::from_fn(32, 32, 1, |_, y, x| if (y + x) % 2 == 0 { 0.8 } else { 0.1 });
        let aop = Field::constant(32, 32, 1, std::f64::consts::FRAC_PI_4);
        let gt = quad_from_params(&PolarimetricParams::new(ti, dop, aop).unwrap()).unwrap();
        let pred = demosaic_bilinear(&mosaic(&gt).unwrap());
        let report = evaluate(&pred, &gt).unwrap();
        let (dop_db, ti_db) =
            (report.mean.psnr_dop.unwrap(), report.mean.psnr_ti.unwrap());
        assert!(dop_db < ti_db, "dop {dop_db} dB should trail ti {ti_db} dB");
    }

    #[test]
    fn evaluate_noise_drops_constant_dop_ssim_below_one() {
        let ti = Field::constant(32, 32, 1, 0.8);
        let dop = Field::constant(32, 32, 1, 0.5);
        let aop = Field::constant(32, 32, 1, 1.0);
        let gt = quad_from_params(&PolarimetricParams::new(ti, dop, aop).unwrap()).unwrap();
        let spec = DegradationSpec::LowLight {
            photon_level: 1e9,
            read_sigma: 0.01,
            gain: 1.0,
            seed: 3,
        };
        let pred = apply_low_light(&gt, &spec).unwrap();
        let report = evaluate(&pred, &gt).unwrap();
        assert!(report.mean.ssim_dop < 1.0);
    }

    #[test]
    fn evaluate_rejects_shape_mismatch() {
        let a = synth_scene(&SceneSpec {
            height: 16,
            width: 16,
            channels: 1,
            regions: 0,
            dop_gradient_scale: 0.0,
            aop_gradient_scale: 0.0,
            seed: 0,
        })
        .unwrap();
        let b = synth_scene(&SceneSpec {
            height: 18,
            width: 16,
            channels: 1,
            regions: 0,
            dop_gradient_scale: 0.0,
            aop_gradient_scale: 0.0,
            seed: 0,
        })
        .unwrap();
        assert!(evaluate(&a, &b).is_err());
    }

    #[test]
    fn evaluate_many_averages_and_propagates_sentinel() {
        let mk = |seed| {
            synth_scene(&SceneSpec {
                height: 16,
                width: 16,
                channels: 1,
                regions: 3,
                dop_gradient_scale: 0.4,
                aop_gradient_scale: 0.4,
                seed,
            })
            .unwrap()
        };
        let (a, b) = (mk(1), mk(2));
        let report = evaluate_many(&[(&a, &b), (&b, &a)]).unwrap();
        assert_eq!(report.per_image.len(), 2);
        let expect = (report.per_image[0].ssim_dop + report.per_image[1].ssim_dop) / 2.0;
        assert!((report.mean.ssim_dop - expect).abs() < 1e-15);

        let with_identity = evaluate_many(&[(&a, &b), (&a, &a)]).unwrap();
        assert_eq!(with_identity.mean.psnr_dop, None);

        assert!(evaluate_many::<f64>(&[]).is_err());
    }

    #[test]
    fn report_serializes_with_fixed_keys_and_null_sentinel() {
        let a = rand_field(16, 16, 9);
        let quad = crate::polar::PolarQuad::new([
            a.clone(),
            a.clone(),
            a.clone(),
            a.clone(),
        ])
        .unwrap();
        let report = evaluate(&quad, &quad).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in ["psnr_dop", "ssim_dop", "psnr_aop", "ssim_aop", "psnr_ti", "ssim_ti"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert!(json["psnr_dop"].is_null());
        assert!(json["per_image"].is_array());
    }
}
