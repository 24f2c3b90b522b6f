//! Forward degradation models and the synthetic scene generator.
//!
//! Three degradations are modeled:
//! - mosaic: division-of-focal-plane sampling into a single raw plane followed
//!   by bilinear demosaicing, which is the artifact-bearing network input;
//! - low light: Poisson shot noise plus Gaussian read noise,
//!   `gain * (Poisson(photon_level * x) / photon_level + N(0, read_sigma))`;
//! - motion blur: one trajectory kernel convolving all four planes, so the
//!   plane-sum consistency identity survives blurring (convolution is linear).
//!
//! Every operation that draws randomness is a pure function of its inputs and
//! the spec seed. Arithmetic runs in f64 regardless of the storage type.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polar::{quad_from_params, Field, PolarQuad, PolarimetricParams};
use crate::scalar::Scalar;

/// One degradation with its parameters and RNG seed. The serialized form tags
/// the variant under a `kind` key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DegradationSpec {
    LowLight {
        photon_level: f64,
        read_sigma: f64,
        gain: f64,
        #[serde(default)]
        seed: u64,
    },
    MotionBlur {
        kernel_size: usize,
        trajectory_points: usize,
        intensity: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Sampling layout is fixed; the seed is carried for interface uniformity
    /// even though mosaicing draws no randomness.
    Mosaic {
        #[serde(default)]
        seed: u64,
    },
}

impl DegradationSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            DegradationSpec::LowLight { .. } => "low_light",
            DegradationSpec::MotionBlur { .. } => "motion_blur",
            DegradationSpec::Mosaic { .. } => "mosaic",
        }
    }

    pub fn seed(&self) -> u64 {
        match *self {
            DegradationSpec::LowLight { seed, .. }
            | DegradationSpec::MotionBlur { seed, .. }
            | DegradationSpec::Mosaic { seed } => seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            DegradationSpec::LowLight { seed: s, .. }
            | DegradationSpec::MotionBlur { seed: s, .. }
            | DegradationSpec::Mosaic { seed: s } => *s = seed,
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DegradationSpec::LowLight { photon_level, read_sigma, gain, .. } => {
                if !(photon_level > 0.0 && photon_level.is_finite()) {
                    return Err(Error::Config(format!(
                        "low_light photon_level must be > 0, got {photon_level}"
                    )));
                }
                if !(read_sigma >= 0.0 && read_sigma.is_finite()) {
                    return Err(Error::Config(format!(
                        "low_light read_sigma must be >= 0, got {read_sigma}"
                    )));
                }
                if !(gain > 0.0 && gain.is_finite()) {
                    return Err(Error::Config(format!(
                        "low_light gain must be > 0, got {gain}"
                    )));
                }
            }
            DegradationSpec::MotionBlur { kernel_size, trajectory_points, intensity, .. } => {
                if kernel_size % 2 == 0 || !(3..=31).contains(&kernel_size) {
                    return Err(Error::Config(format!(
                        "motion_blur kernel_size must be odd in [3, 31], got {kernel_size}"
                    )));
                }
                if trajectory_points < 2 {
                    return Err(Error::Config(format!(
                        "motion_blur trajectory_points must be >= 2, got {trajectory_points}"
                    )));
                }
                if !(0.0..=1.0).contains(&intensity) {
                    return Err(Error::Config(format!(
                        "motion_blur intensity must be in [0, 1], got {intensity}"
                    )));
                }
            }
            DegradationSpec::Mosaic { .. } => {}
        }
        Ok(())
    }
}

/// Record kept alongside a degraded image so the degradation is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationMeta {
    pub spec: DegradationSpec,
}

/// Angle index (into [`PolarQuad`] plane order 0/45/90/135) sampled at mosaic
/// cell position (y % 2, x % 2): layout [[90, 45], [135, 0]] in degrees.
const MOSAIC_ANGLE_AT: [[usize; 2]; 2] = [[2, 1], [3, 0]];

/// Per-angle lattice offset (oy, ox) of the sampled sites, indexed by plane.
const MOSAIC_OFFSET: [(usize, usize); 4] = [(1, 1), (0, 1), (0, 0), (1, 0)];

/// Single-plane DoFP mosaic; each 2x2 cell holds one sample of each angle.
#[derive(Debug, Clone)]
pub struct DofpRaw<T: Scalar> {
    plane: Field<T>,
}

impl<T: Scalar> DofpRaw<T> {
    pub fn new(plane: Field<T>) -> Result<Self> {
        if plane.height() % 2 != 0 || plane.width() % 2 != 0 {
            return Err(Error::Data(format!(
                "DoFP raw dimensions must be even, got {}x{}",
                plane.height(),
                plane.width()
            )));
        }
        if !plane.is_finite() || plane.values().iter().any(|&v| v < T::zero()) {
            return Err(Error::Data("DoFP raw values must be finite and >= 0".into()));
        }
        Ok(DofpRaw { plane })
    }

    pub fn plane(&self) -> &Field<T> {
        &self.plane
    }

    pub fn height(&self) -> usize {
        self.plane.height()
    }

    pub fn width(&self) -> usize {
        self.plane.width()
    }

    pub fn channels(&self) -> usize {
        self.plane.channels()
    }
}

/// Normalized convolution kernel; taps are nonnegative and sum to one.
#[derive(Debug, Clone)]
pub struct BlurKernel {
    size: usize,
    taps: Vec<f64>,
}

impl BlurKernel {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || taps.len() != size * size {
            return Err(Error::Data(format!(
                "blur kernel must be odd square, got size {} with {} taps",
                size,
                taps.len()
            )));
        }
        if taps.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Error::Data("blur kernel taps must be finite and >= 0".into()));
        }
        let sum: f64 = taps.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("blur kernel taps must sum to 1, got {sum}")));
        }
        Ok(BlurKernel { size, taps })
    }

    /// Identity kernel: all mass on the center tap.
    pub fn delta(size: usize) -> Self {
        let mut taps = vec![0.0; size * size];
        taps[(size / 2) * size + size / 2] = 1.0;
        BlurKernel { size, taps }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

/// Parameters of one synthetic scene: piecewise regions give intensity edges,
/// the gradient scales modulate smooth DoP/AoP variation. Zero regions and zero
/// scales produce a spatially constant scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub regions: usize,
    pub dop_gradient_scale: f64,
    pub aop_gradient_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_channels() -> usize {
    1
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 || self.height % 2 != 0 || self.width % 2 != 0 {
            return Err(Error::Config(format!(
                "scene dimensions must be even and >= 16, got {}x{}",
                self.height, self.width
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!(
                "scene channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if !self.dop_gradient_scale.is_finite()
            || !self.aop_gradient_scale.is_finite()
            || self.dop_gradient_scale < 0.0
            || self.aop_gradient_scale < 0.0
        {
            return Err(Error::Config("scene gradient scales must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn wrap_pi(a: f64) -> f64 {
    let r = a.rem_euclid(std::f64::consts::PI);
    // rem_euclid can return exactly pi after rounding; fold it back to 0.
    if r >= std::f64::consts::PI {
        0.0
    } else {
        r
    }
}

/// Generates ground-truth scenes: nearest-site regions set per-region base
/// intensity/DoP/AoP, sinusoidal overlays add smooth polarization gradients.
/// Output satisfies ti in [0.05, 1], dop in [0, 0.9], aop in [0, pi).
pub fn synth_scene(spec: &SceneSpec) -> Result<PolarQuad<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w, ch) = (spec.height, spec.width, spec.channels);

    struct Site {
        y: f64,
        x: f64,
        ti: f64,
        dop: f64,
        aop: f64,
    }

    let mut ti = Field::constant(h, w, ch, 0.0);
    let mut dop = Field::constant(h, w, ch, 0.0);
    let mut aop = Field::constant(h, w, ch, 0.0);

    for c in 0..ch {
        let sites: Vec<Site> = (0..spec.regions)
            .map(|_| Site {
                y: rng.gen_range(0.0..h as f64),
                x: rng.gen_range(0.0..w as f64),
                ti: rng.gen_range(0.1..1.0),
                dop: rng.gen_range(0.05..0.85),
                aop: rng.gen_range(0.0..std::f64::consts::PI),
            })
            .collect();
        let base_ti = rng.gen_range(0.3..0.9);
        let base_dop = rng.gen_range(0.1..0.8);
        let base_aop = rng.gen_range(0.0..std::f64::consts::PI);
        let (fy_d, fx_d) = (rng.gen_range(1..4) as f64, rng.gen_range(1..4) as f64);
        let phase_d = rng.gen_range(0.0..std::f64::consts::TAU);
        let (fy_a, fx_a) = (rng.gen_range(1..4) as f64, rng.gen_range(1..4) as f64);
        let phase_a = rng.gen_range(0.0..std::f64::consts::TAU);

        for y in 0..h {
            for x in 0..w {
                let (mut t, mut d, mut a) = (base_ti, base_dop, base_aop);
                if !sites.is_empty() {
                    let mut best = 0;
                    let mut best_d2 = f64::INFINITY;
                    for (i, s) in sites.iter().enumerate() {
                        let dy = s.y - y as f64;
                        let dx = s.x - x as f64;
                        let d2 = dy * dy + dx * dx;
                        if d2 < best_d2 {
                            best_d2 = d2;
                            best = i;
                        }
                    }
                    t = sites[best].ti;
                    d = sites[best].dop;
                    a = sites[best].aop;
                }
                let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                d += spec.dop_gradient_scale
                    * 0.45
                    * (std::f64::consts::TAU * (fx_d * u + fy_d * v) + phase_d).sin();
                a += spec.aop_gradient_scale
                    * 0.5
                    * std::f64::consts::PI
                    * (std::f64::consts::TAU * (fx_a * u + fy_a * v) + phase_a).sin();
                ti.set(c, y, x, t.clamp(0.05, 1.0));
                dop.set(c, y, x, d.clamp(0.0, 0.9));
                aop.set(c, y, x, wrap_pi(a));
            }
        }
    }
    quad_from_params(&PolarimetricParams::new(ti, dop, aop)?)
}

/// Samples a quad into the fixed DoFP layout [[90, 45], [135, 0]] degrees.
pub fn mosaic<T: Scalar>(quad: &PolarQuad<T>) -> Result<DofpRaw<T>> {
    let (h, w, ch) = (quad.height(), quad.width(), quad.channels());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Data(format!(
            "mosaic requires even dimensions, got {h}x{w}"
        )));
    }
    let plane = Field::from_fn(h, w, ch, |c, y, x| {
        quad.plane(MOSAIC_ANGLE_AT[y % 2][x % 2]).get(c, y, x)
    });
    DofpRaw::new(plane)
}

/// Rebuilds all four planes from a mosaic by separable bilinear interpolation
/// on each angle's 2x2-strided sample lattice, replicating edges: the
/// continuous lattice coordinate is clamped before being split into a cell
/// index and fraction, so constants are exact everywhere and per-angle affine
/// images are exact away from the border.
pub fn demosaic_bilinear<T: Scalar>(raw: &DofpRaw<T>) -> PolarQuad<T> {
    let (h, w, ch) = (raw.height(), raw.width(), raw.channels());
    let (jn, in_) = (h / 2, w / 2);
    let plane = raw.plane();

    let planes = MOSAIC_OFFSET.map(|(oy, ox)| {
        Field::from_fn(h, w, ch, |c, y, x| {
            let ty = ((y as f64 - oy as f64) / 2.0).clamp(0.0, (jn - 1) as f64);
            let tx = ((x as f64 - ox as f64) / 2.0).clamp(0.0, (in_ - 1) as f64);
            let j0 = ty.floor() as usize;
            let i0 = tx.floor() as usize;
            let j1 = (j0 + 1).min(jn - 1);
            let i1 = (i0 + 1).min(in_ - 1);
            let fy = ty - j0 as f64;
            let fx = tx - i0 as f64;
            let at = |j: usize, i: usize| plane.get(c, oy + 2 * j, ox + 2 * i).to_f64();
            let v = (1.0 - fy) * ((1.0 - fx) * at(j0, i0) + fx * at(j0, i1))
                + fy * ((1.0 - fx) * at(j1, i0) + fx * at(j1, i1));
            T::from_f64(v)
        })
    });
    PolarQuad::new(planes).expect("planes share the raw dimensions")
}

/// Shot plus read noise, independent across planes and pixels:
/// `gain * (Poisson(photon_level * x) / photon_level + N(0, read_sigma))`,
/// clamped at zero below.
pub fn apply_low_light<T: Scalar>(
    quad: &PolarQuad<T>,
    spec: &DegradationSpec,
) -> Result<PolarQuad<T>> {
    spec.validate()?;
    let (photon_level, read_sigma, gain, seed) = match *spec {
        DegradationSpec::LowLight { photon_level, read_sigma, gain, seed } => {
            (photon_level, read_sigma, gain, seed)
        }
        _ => {
            return Err(Error::Config(format!(
                "apply_low_light requires a low_light spec, got {}",
                spec.kind()
            )))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let read = Normal::new(0.0, read_sigma)
        .map_err(|e| Error::Config(format!("invalid read noise sigma: {e}")))?;

    let mut planes = Vec::with_capacity(4);
    for k in 0..4 {
        let src = quad.plane(k);
        let mut out = Vec::with_capacity(src.len());
        for &v in src.values() {
            let lam = photon_level * v.to_f64().max(0.0);
            let shot = if lam > 0.0 {
                let pois = Poisson::new(lam)
                    .map_err(|e| Error::Numeric(format!("invalid Poisson rate {lam}: {e}")))?;
                pois.sample(&mut rng) / photon_level
            } else {
                0.0
            };
            let noisy = gain * (shot + read.sample(&mut rng));
            out.push(T::from_f64(noisy.max(0.0)));
        }
        planes.push(Field::new(src.height(), src.width(), src.channels(), out)?);
    }
    let planes: [Field<T>; 4] = planes.try_into().expect("four planes");
    PolarQuad::new(planes)
}

/// Rasterizes a random polyline into a normalized kernel. Control points are
/// drawn in the unit square, centered, and scaled by `intensity`; the path is
/// sampled densely and splatted with bilinear sub-pixel weights. Intensity 0
/// collapses every point to the center, which yields the delta kernel.
pub fn generate_blur_kernel(spec: &DegradationSpec) -> Result<BlurKernel> {
    spec.validate()?;
    let (size, points, intensity, seed) = match *spec {
        DegradationSpec::MotionBlur { kernel_size, trajectory_points, intensity, seed } => {
            (kernel_size, trajectory_points, intensity, seed)
        }
        _ => {
            return Err(Error::Config(format!(
                "generate_blur_kernel requires a motion_blur spec, got {}",
                spec.kind()
            )))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ys: Vec<f64> = (0..points).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut xs: Vec<f64> = (0..points).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let my = ys.iter().sum::<f64>() / points as f64;
    let mx = xs.iter().sum::<f64>() / points as f64;
    let half = (size - 1) as f64 / 2.0;
    let center = size as f64 / 2.0 - 0.5;
    for v in &mut ys {
        *v = center + (*v - my) * intensity * half;
    }
    for v in &mut xs {
        *v = center + (*v - mx) * intensity * half;
    }

    let mut taps = vec![0.0f64; size * size];
    let samples_per_segment = 64;
    for s in 0..points - 1 {
        for t in 0..samples_per_segment {
            let f = t as f64 / samples_per_segment as f64;
            let py = ys[s] + (ys[s + 1] - ys[s]) * f;
            let px = xs[s] + (xs[s + 1] - xs[s]) * f;
            splat(&mut taps, size, py, px);
        }
    }
    splat(&mut taps, size, ys[points - 1], xs[points - 1]);

    let sum: f64 = taps.iter().sum();
    debug_assert!(sum > 0.0, "centered points always splat inside the grid");
    for t in &mut taps {
        *t /= sum;
    }
    BlurKernel::new(size, taps)
}

fn splat(taps: &mut [f64], size: usize, py: f64, px: f64) {
    let y0 = py.floor();
    let x0 = px.floor();
    let fy = py - y0;
    let fx = px - x0;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let (iy, ix) = (y0 as i64 + dy, x0 as i64 + dx);
            if wy * wx > 0.0 && (0..size as i64).contains(&iy) && (0..size as i64).contains(&ix)
            {
                taps[iy as usize * size + ix as usize] += wy * wx;
            }
        }
    }
}

/// Convolves all four planes with one shared kernel, replicating edges.
/// Accumulation is in f64 so the plane-sum consistency identity survives to
/// tight tolerance.
pub fn apply_motion_blur<T: Scalar>(
    quad: &PolarQuad<T>,
    kernel: &BlurKernel,
) -> Result<PolarQuad<T>> {
    let (h, w) = (quad.height(), quad.width());
    let size = kernel.size();
    if size > h || size > w {
        return Err(Error::Data(format!(
            "blur kernel {size}x{size} exceeds image {h}x{w}"
        )));
    }
    let r = size as i64 / 2;
    let planes = [0, 1, 2, 3].map(|k| {
        let src = quad.plane(k);
        Field::from_fn(h, w, src.channels(), |c, y, x| {
            let mut acc = 0.0f64;
            for ky in 0..size {
                let iy = (y as i64 + ky as i64 - r).clamp(0, h as i64 - 1) as usize;
                for kx in 0..size {
                    let ix = (x as i64 + kx as i64 - r).clamp(0, w as i64 - 1) as usize;
                    acc += kernel.taps()[ky * size + kx] * src.get(c, iy, ix).to_f64();
                }
            }
            T::from_f64(acc)
        })
    });
    PolarQuad::new(planes)
}

/// Applies the degradation a spec describes; the mosaic kind composes sampling
/// with bilinear demosaicing so the result is the artifact-bearing input.
pub fn degrade<T: Scalar>(
    quad: &PolarQuad<T>,
    spec: &DegradationSpec,
) -> Result<(PolarQuad<T>, DegradationMeta)> {
    spec.validate()?;
    let out = match spec {
        DegradationSpec::LowLight { .. } => apply_low_light(quad, spec)?,
        DegradationSpec::MotionBlur { .. } => {
            let kernel = generate_blur_kernel(spec)?;
            apply_motion_blur(quad, &kernel)?
        }
        DegradationSpec::Mosaic { .. } => demosaic_bilinear(&mosaic(quad)?),
    };
    Ok((out, DegradationMeta { spec: spec.clone() }))
}

/// Per-image seed for `lane` (0 = scene, 1 = degradation) of image `index`,
/// derived so serial and parallel generation agree.
pub fn derive_seed(base: u64, index: u64, lane: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(2 * index + lane);
    rng.gen()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::polar::{consistency_residual, params_from_quad, stokes_from_quad};

    fn scene_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            height: 16,
            width: 16,
            channels: 1,
            regions: 4,
            dop_gradient_scale: 0.5,
            aop_gradient_scale: 0.5,
            seed,
        }
    }

    fn constant_quad(h: usize, w: usize, vals: [f64; 4]) -> PolarQuad<f64> {
        PolarQuad::new(vals.map(|v| Field::constant(h, w, 1, v))).unwrap()
    }

    #[test]
    fn spec_validation_rejects_out_of_range_parameters() {
        let bad = [
            DegradationSpec::LowLight { photon_level: 0.0, read_sigma: 0.0, gain: 1.0, seed: 0 },
            DegradationSpec::LowLight { photon_level: 1.0, read_sigma: -0.1, gain: 1.0, seed: 0 },
            DegradationSpec::LowLight { photon_level: 1.0, read_sigma: 0.0, gain: 0.0, seed: 0 },
            DegradationSpec::MotionBlur {
                kernel_size: 4,
                trajectory_points: 3,
                intensity: 0.5,
                seed: 0,
            },
            DegradationSpec::MotionBlur {
                kernel_size: 33,
                trajectory_points: 3,
                intensity: 0.5,
                seed: 0,
            },
            DegradationSpec::MotionBlur {
                kernel_size: 5,
                trajectory_points: 1,
                intensity: 0.5,
                seed: 0,
            },
            DegradationSpec::MotionBlur {
                kernel_size: 5,
                trajectory_points: 3,
                intensity: 1.5,
                seed: 0,
            },
        ];
        for spec in bad {
            assert!(spec.validate().is_err(), "{spec:?} should be rejected");
        }
    }

    #[test]
    fn degradation_spec_serializes_with_kind_tag() {
        let spec = DegradationSpec::LowLight {
            photon_level: 100.0,
            read_sigma: 0.01,
            gain: 2.0,
            seed: 7,
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"low_light\""), "{json}");
        let back: DegradationSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn synth_scene_zero_complexity_is_constant() {
        let spec = SceneSpec {
            regions: 0,
            dop_gradient_scale: 0.0,
            aop_gradient_scale: 0.0,
            ..scene_spec(3)
        };
        let quad = synth_scene(&spec).unwrap();
        for k in 0..4 {
            let vals = quad.plane(k).values();
            assert!(vals.iter().all(|&v| v == vals[0]), "plane {k} not constant");
        }
        assert_eq!(consistency_residual(&quad), 0.0);
    }

    #[test]
    fn synth_scene_is_deterministic() {
        let a = synth_scene(&scene_spec(42)).unwrap();
        let b = synth_scene(&scene_spec(42)).unwrap();
        for k in 0..4 {
            assert_eq!(a.plane(k).values(), b.plane(k).values());
        }
        let c = synth_scene(&scene_spec(43)).unwrap();
        assert_ne!(a.plane(0).values(), c.plane(0).values());
    }

    #[test]
    fn synth_scene_rejects_bad_dimensions() {
        assert!(synth_scene(&SceneSpec { height: 8, ..scene_spec(0) }).is_err());
        assert!(synth_scene(&SceneSpec { width: 17, ..scene_spec(0) }).is_err());
    }

    #[test]
    fn mosaic_layout_matches_fixture() {
        // Constant planes (I0, I45, I90, I135) = (4, 2, 1, 3): every 2x2 raw
        // cell must read [[1, 2], [3, 4]].
        let quad = constant_quad(2, 2, [4.0, 2.0, 1.0, 3.0]);
        let raw = mosaic(&quad).unwrap();
        assert_eq!(raw.plane().values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn mosaic_rejects_odd_dimensions() {
        let quad = PolarQuad::new([0, 1, 2, 3].map(|_| Field::constant(3, 4, 1, 0.5))).unwrap();
        assert!(mosaic(&quad).is_err());
    }

    #[test]
    fn mosaic_readback_matches_sampled_plane() {
        let quad = synth_scene(&scene_spec(9)).unwrap();
        let raw = mosaic(&quad).unwrap();
        for y in 0..quad.height() {
            for x in 0..quad.width() {
                let k = MOSAIC_ANGLE_AT[y % 2][x % 2];
                assert_eq!(raw.plane().get(0, y, x), quad.plane(k).get(0, y, x));
            }
        }
    }

    #[test]
    fn demosaic_reproduces_constants_exactly() {
        let quad = constant_quad(16, 16, [0.4, 0.3, 0.2, 0.5]);
        let rebuilt = demosaic_bilinear(&mosaic(&quad).unwrap());
        for k in 0..4 {
            assert_eq!(rebuilt.plane(k).values(), quad.plane(k).values());
        }
    }

    #[test]
    fn demosaic_reproduces_affine_interiors_on_ramp() {
        // Distinct affine plane per angle; bilinear interpolation of a strided
        // lattice reproduces affine signals wherever edge clamping is inactive.
        let coef = [(0.1, 0.02, 0.03), (0.2, 0.01, 0.04), (0.3, 0.03, 0.01), (0.15, 0.02, 0.02)];
        let planes = coef.map(|(a, bx, by)| {
            Field::from_fn(8, 8, 1, |_, y, x| a + bx * x as f64 + by * y as f64)
        });
        let quad = PolarQuad::new(planes).unwrap();
        let rebuilt = demosaic_bilinear(&mosaic(&quad).unwrap());
        for k in 0..4 {
            for y in 1..7 {
                for x in 1..7 {
                    let err = (rebuilt.plane(k).get(0, y, x) - quad.plane(k).get(0, y, x)).abs();
                    assert!(err < 1e-12, "plane {k} at ({y},{x}): err {err}");
                }
            }
        }
    }

    #[test]
    fn demosaic_cannot_recover_checkerboard() {
        // Alternating columns in I0 aliase under 2x2 sampling.
        let planes: [Field<f64>; 4] = [
            Field::from_fn(16, 16, 1, |_, _, x| if x % 2 == 0 { 0.9 } else { 0.1 }),
            Field::constant(16, 16, 1, 0.5),
            Field::constant(16, 16, 1, 0.5),
            Field::constant(16, 16, 1, 0.5),
        ];
        let quad = PolarQuad::new(planes).unwrap();
        let rebuilt = demosaic_bilinear(&mosaic(&quad).unwrap());
        let max_err = rebuilt
            .plane(0)
            .values()
            .iter()
            .zip(quad.plane(0).values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err > 0.1, "checkerboard should not survive demosaicing: {max_err}");
    }

    #[test]
    fn low_light_noiseless_limit_is_identity() {
        let quad = synth_scene(&scene_spec(5)).unwrap();
        let spec =
            DegradationSpec::LowLight { photon_level: 1e9, read_sigma: 0.0, gain: 1.0, seed: 1 };
        let noisy = apply_low_light(&quad, &spec).unwrap();
        for k in 0..4 {
            for (a, b) in noisy.plane(k).values().iter().zip(quad.plane(k).values()) {
                assert!((a - b).abs() < 1e-3, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn low_light_matches_poisson_moments() {
        // Constant 0.5 at photon level 100: the sample mean over a 64x64 plane
        // must land within 3 sigma, sigma = sqrt(0.5 / 100) / 64.
        let quad = constant_quad(64, 64, [0.5; 4]);
        let spec =
            DegradationSpec::LowLight { photon_level: 100.0, read_sigma: 0.0, gain: 1.0, seed: 2 };
        let noisy = apply_low_light(&quad, &spec).unwrap();
        let sigma = (0.5f64 / 100.0).sqrt() / 64.0;
        for k in 0..4 {
            let vals = noisy.plane(k).values();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!(
                (mean - 0.5).abs() < 3.0 * sigma,
                "plane {k} mean {mean} outside 3 sigma {}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn low_light_is_deterministic_and_kind_checked() {
        let quad = synth_scene(&scene_spec(6)).unwrap();
        let spec =
            DegradationSpec::LowLight { photon_level: 50.0, read_sigma: 0.02, gain: 1.5, seed: 3 };
        let a = apply_low_light(&quad, &spec).unwrap();
        let b = apply_low_light(&quad, &spec).unwrap();
        for k in 0..4 {
            assert_eq!(a.plane(k).values(), b.plane(k).values());
        }
        assert!(apply_low_light(&quad, &DegradationSpec::Mosaic { seed: 0 }).is_err());
    }

    #[test]
    fn low_light_breaks_plane_consistency() {
        let quad = synth_scene(&scene_spec(7)).unwrap();
        assert!(consistency_residual(&quad) < 1e-7);
        let spec = DegradationSpec::LowLight {
            photon_level: 1e4,
            read_sigma: 0.01,
            gain: 1.0,
            seed: 4,
        };
        let noisy = apply_low_light(&quad, &spec).unwrap();
        assert!(consistency_residual(&noisy) > 1e-3);
    }

    #[test]
    fn blur_kernel_zero_intensity_is_delta() {
        let spec = DegradationSpec::MotionBlur {
            kernel_size: 7,
            trajectory_points: 4,
            intensity: 0.0,
            seed: 5,
        };
        let kernel = generate_blur_kernel(&spec).unwrap();
        assert_eq!(kernel.taps()[3 * 7 + 3], 1.0);
        assert_eq!(kernel.taps().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn blur_kernel_is_normalized_and_deterministic() {
        let spec = DegradationSpec::MotionBlur {
            kernel_size: 9,
            trajectory_points: 5,
            intensity: 0.8,
            seed: 6,
        };
        let a = generate_blur_kernel(&spec).unwrap();
        let b = generate_blur_kernel(&spec).unwrap();
        assert_eq!(a.taps(), b.taps());
        assert!((a.taps().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(a.taps().iter().all(|&t| t >= 0.0));
        assert!(generate_blur_kernel(&DegradationSpec::Mosaic { seed: 0 }).is_err());
    }

    #[test]
    fn motion_blur_delta_kernel_is_identity() {
        let quad = synth_scene(&scene_spec(8)).unwrap();
        let blurred = apply_motion_blur(&quad, &BlurKernel::delta(5)).unwrap();
        for k in 0..4 {
            assert_eq!(blurred.plane(k).values(), quad.plane(k).values());
        }
    }

    #[test]
    fn motion_blur_keeps_constants_and_consistency() {
        let spec = DegradationSpec::MotionBlur {
            kernel_size: 7,
            trajectory_points: 4,
            intensity: 0.9,
            seed: 9,
        };
        let kernel = generate_blur_kernel(&spec).unwrap();

        let quad = constant_quad(16, 16, [0.4, 0.3, 0.2, 0.5]);
        let blurred = apply_motion_blur(&quad, &kernel).unwrap();
        for k in 0..4 {
            for (&a, &b) in blurred.plane(k).values().iter().zip(quad.plane(k).values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }

        let scene = synth_scene(&scene_spec(10)).unwrap();
        let blurred = apply_motion_blur(&scene, &kernel).unwrap();
        assert!(consistency_residual(&blurred) < 1e-6);
    }

    #[test]
    fn motion_blur_matches_direct_convolution_on_valid_region() {
        // Dual route: away from borders the replicate padding never binds, so
        // the output must equal a padding-free convolution computed here.
        let spec = DegradationSpec::MotionBlur {
            kernel_size: 5,
            trajectory_points: 3,
            intensity: 0.7,
            seed: 11,
        };
        let kernel = generate_blur_kernel(&spec).unwrap();
        let scene = synth_scene(&scene_spec(12)).unwrap();
        let blurred = apply_motion_blur(&scene, &kernel).unwrap();
        let r = kernel.size() / 2;
        for k in 0..4 {
            for y in r..16 - r {
                for x in r..16 - r {
                    let mut acc = 0.0;
                    for ky in 0..kernel.size() {
                        for kx in 0..kernel.size() {
                            acc += kernel.taps()[ky * kernel.size() + kx]
                                * scene.plane(k).get(0, y + ky - r, x + kx - r);
                        }
                    }
                    let got = blurred.plane(k).get(0, y, x);
                    assert!((got - acc).abs() < 1e-12, "plane {k} ({y},{x})");
                }
            }
        }
    }

    #[test]
    fn motion_blur_rejects_oversized_kernel() {
        let quad = constant_quad(4, 4, [0.5; 4]);
        assert!(apply_motion_blur(&quad, &BlurKernel::delta(5)).is_err());
    }

    #[test]
    fn degrade_dispatches_per_kind() {
        let quad = constant_quad(16, 16, [0.4, 0.3, 0.2, 0.5]);

        let (out, meta) = degrade(&quad, &DegradationSpec::Mosaic { seed: 0 }).unwrap();
        assert_eq!(meta.spec.kind(), "mosaic");
        for k in 0..4 {
            assert_eq!(out.plane(k).values(), quad.plane(k).values());
        }

        let noiseless =
            DegradationSpec::LowLight { photon_level: 1e9, read_sigma: 0.0, gain: 1.0, seed: 1 };
        let (out, meta) = degrade(&quad, &noiseless).unwrap();
        assert_eq!(meta.spec.seed(), 1);
        for k in 0..4 {
            for (&a, &b) in out.plane(k).values().iter().zip(quad.plane(k).values()) {
                assert!((a - b).abs() < 1e-3);
            }
        }

        let blur = DegradationSpec::MotionBlur {
            kernel_size: 5,
            trajectory_points: 3,
            intensity: 0.0,
            seed: 2,
        };
        let (out, _) = degrade(&quad, &blur).unwrap();
        for k in 0..4 {
            assert_eq!(out.plane(k).values(), quad.plane(k).values());
        }
    }

    #[test]
    fn derive_seed_separates_lanes_and_indices() {
        let a = derive_seed(1, 0, 0);
        assert_eq!(a, derive_seed(1, 0, 0));
        assert_ne!(a, derive_seed(1, 0, 1));
        assert_ne!(a, derive_seed(1, 1, 0));
        assert_ne!(a, derive_seed(2, 0, 0));
    }

    proptest! {
        #[test]
        fn synthetic_scenes_stay_in_physical_range(seed in 0u64..300) {
            let quad = synth_scene(&scene_spec(seed)).unwrap();
            prop_assert!(consistency_residual(&quad) < 1e-7);
            let params = params_from_quad(&quad);
            for &d in params.dop.values() {
                prop_assert!((0.0..=0.9 + 1e-6).contains(&d));
            }
            for &t in params.ti.values() {
                prop_assert!((0.05 - 1e-9..=1.0 + 1e-9).contains(&t));
            }
            let stokes = stokes_from_quad(&quad);
            for &s0 in stokes.s0.values() {
                prop_assert!(s0 >= 0.0);
            }
        }

        #[test]
        fn degrade_is_deterministic(seed in 0u64..100) {
            let scene = synth_scene(&scene_spec(seed)).unwrap();
            let spec = DegradationSpec::LowLight {
                photon_level: 200.0,
                read_sigma: 0.01,
                gain: 1.0,
                seed,
            };
            let (a, _) = degrade(&scene, &spec).unwrap();
            let (b, _) = degrade(&scene, &spec).unwrap();
            for k in 0..4 {
                prop_assert_eq!(a.plane(k).values(), b.plane(k).values());
            }
        }
    }
}
