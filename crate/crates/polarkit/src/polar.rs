//! Linear-polarization physics.
//!
//! A division-of-focal-plane camera measures intensity behind linear polarizers at
//! 0°, 45°, 90°, and 135°. Malus' law gives the forward model
//!
//! ```text
//! I_alpha = (I / 2) * (1 - p * cos(2 * (alpha - theta)))
//! ```
//!
//! where `I` is total intensity, `p` the degree of linear polarization and `theta`
//! the angle of polarization. The four measurements determine the linear Stokes
//! parameters in closed form:
//!
//! ```text
//! s0 = (I_0 + I_45 + I_90 + I_135) / 2     (= 2 * mean of the four planes)
//! s1 = I_90 - I_0
//! s2 = I_135 - I_45
//! ```
//!
//! and `(I, p, theta)` are recovered as `I = s0`, `p = sqrt(s1^2 + s2^2) / s0`,
//! `theta = atan2(s2, s1) / 2` mapped into `[0, pi)`.
//!
//! Consistent quads satisfy `I_0 + I_90 = I_45 + I_135` per pixel (both sums equal
//! `s0`); degradations with independent per-plane noise break the identity, which is
//! what the image-consistency regularizer in [`crate::objective`] measures.
//!
//! All per-pixel arithmetic promotes to f64 and rounds back to the storage type once,
//! so f32-stored fields never pay f32 accumulation error.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Polarizer orientations of the four quad planes, in radians, in storage order.
pub const PLANE_ANGLES: [f64; 4] = [
    0.0,
    std::f64::consts::FRAC_PI_4,
    std::f64::consts::FRAC_PI_2,
    3.0 * std::f64::consts::FRAC_PI_4,
];

/// `s0` values at or below this threshold are treated as unpolarized darkness:
/// DoP and AoP are defined as 0 there instead of dividing by ~0.
pub const DARK_S0_EPSILON: f64 = 1e-8;

/// A 2-D scalar field with one or more color channels.
///
/// Storage is channel-major, row-major: index `(c * height + y) * width + x`,
/// matching the plane layout of the PQUAD file format.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Field<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Data(format!(
                "field data length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    /// Builds a field by evaluating `f(channel, y, x)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { height, width, channels, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<T> {
        self.data
    }

    pub fn same_shape<U: Scalar>(&self, other: &Field<U>) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }

    /// Elementwise map into a new field of the same shape.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts the storage type, rounding each element once.
    pub fn cast<U: Scalar>(&self) -> Field<U> {
        Field {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Four co-registered polarized intensity planes at 0°/45°/90°/135°.
///
/// Physically captured quads are nonnegative and, absent noise, satisfy the
/// consistency identity `I_0 + I_90 = I_45 + I_135`. Restored estimates produced by
/// a network may transiently violate both; [`consistency_residual`] quantifies the
/// second violation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarQuad<T> {
    planes: [Field<T>; 4],
}

impl<T: Scalar> PolarQuad<T> {
    /// Planes in angle order 0°, 45°, 90°, 135°; all four must share one shape.
    pub fn new(planes: [Field<T>; 4]) -> Result<Self> {
        for p in &planes[1..] {
            if !planes[0].same_shape(p) {
                return Err(Error::Data("quad planes have mismatched shapes".into()));
            }
        }
        Ok(Self { planes })
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn channels(&self) -> usize {
        self.planes[0].channels()
    }

    /// Plane for the k-th angle in [`PLANE_ANGLES`] order.
    pub fn plane(&self, k: usize) -> &Field<T> {
        &self.planes[k]
    }

    pub fn planes(&self) -> &[Field<T>; 4] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [Field<T>; 4] {
        &mut self.planes
    }

    pub fn into_planes(self) -> [Field<T>; 4] {
        self.planes
    }

    pub fn is_finite(&self) -> bool {
        self.planes.iter().all(|p| p.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> PolarQuad<U> {
        PolarQuad { planes: [
            self.planes[0].cast(),
            self.planes[1].cast(),
            self.planes[2].cast(),
            self.planes[3].cast(),
        ] }
    }
}

/// Per-pixel linear Stokes parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StokesMap<T> {
    pub s0: Field<T>,
    pub s1: Field<T>,
    pub s2: Field<T>,
}

impl<T: Scalar> StokesMap<T> {
    pub fn new(s0: Field<T>, s1: Field<T>, s2: Field<T>) -> Result<Self> {
        if !s0.same_shape(&s1) || !s0.same_shape(&s2) {
            return Err(Error::Data("stokes components have mismatched shapes".into()));
        }
        Ok(Self { s0, s1, s2 })
    }
}

/// Total intensity, degree of polarization in `[0, 1]`, and angle of polarization
/// in `[0, pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarimetricParams<T> {
    pub ti: Field<T>,
    pub dop: Field<T>,
    pub aop: Field<T>,
}

impl<T: Scalar> PolarimetricParams<T> {
    pub fn new(ti: Field<T>, dop: Field<T>, aop: Field<T>) -> Result<Self> {
        if !ti.same_shape(&dop) || !ti.same_shape(&aop) {
            return Err(Error::Data("parameter fields have mismatched shapes".into()));
        }
        Ok(Self { ti, dop, aop })
    }
}

/// Malus' law: intensity behind a linear polarizer at `angle`.
///
/// Returns `(ti / 2) * (1 - dop * cos(2 * (angle - aop)))`, which lies in `[0, ti]`.
pub fn malus_intensity(ti: f64, dop: f64, aop: f64, angle: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&dop) || !dop.is_finite() {
        return Err(Error::Numeric(format!("degree of polarization {dop} outside [0, 1]")));
    }
    if ti < 0.0 || !ti.is_finite() {
        return Err(Error::Numeric(format!("total intensity {ti} is negative or non-finite")));
    }
    Ok(malus_raw(ti, dop, aop, angle))
}

#[inline]
fn malus_raw(ti: f64, dop: f64, aop: f64, angle: f64) -> f64 {
    0.5 * ti * (1.0 - dop * (2.0 * (angle - aop)).cos())
}

/// Renders the four polarizer views of a parameter map via Malus' law.
///
/// The output satisfies the consistency identity exactly up to rounding. `aop` may
/// hold any finite angle (the law is pi-periodic); `ti` must be nonnegative and
/// `dop` within `[0, 1]` everywhere.
pub fn quad_from_params<T: Scalar>(params: &PolarimetricParams<T>) -> Result<PolarQuad<T>> {
    let (ti, dop, aop) = (&params.ti, &params.dop, &params.aop);
    for i in 0..ti.len() {
        let t = ti.values()[i].to_f64();
        let p = dop.values()[i].to_f64();
        let a = aop.values()[i].to_f64();
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(Error::Numeric(format!("degree of polarization {p} outside [0, 1]")));
        }
        if t < 0.0 || !t.is_finite() {
            return Err(Error::Numeric(format!("total intensity {t} is negative or non-finite")));
        }
        if !a.is_finite() {
            return Err(Error::Numeric("non-finite angle of polarization".into()));
        }
    }
    let mut planes = Vec::with_capacity(4);
    for &angle in &PLANE_ANGLES {
        let mut data = Vec::with_capacity(ti.len());
        for i in 0..ti.len() {
            let v = malus_raw(
                ti.values()[i].to_f64(),
                dop.values()[i].to_f64(),
                aop.values()[i].to_f64(),
                angle,
            );
            data.push(T::from_f64(v));
        }
        planes.push(Field::new(ti.height(), ti.width(), ti.channels(), data)?);
    }
    let planes: [Field<T>; 4] = match planes.try_into() {
        Ok(p) => p,
        Err(_) => unreachable!("four angles yield four planes"),
    };
    PolarQuad::new(planes)
}

/// Closed-form Stokes recovery from the four polarizer views.
pub fn stokes_from_quad<T: Scalar>(quad: &PolarQuad<T>) -> StokesMap<T> {
    let [i0, i45, i90, i135] = quad.planes();
    let n = i0.len();
    let mut s0 = Vec::with_capacity(n);
    let mut s1 = Vec::with_capacity(n);
    let mut s2 = Vec::with_capacity(n);
    for i in 0..n {
        let (a0, a45, a90, a135) = (
            i0.values()[i].to_f64(),
            i45.values()[i].to_f64(),
            i90.values()[i].to_f64(),
            i135.values()[i].to_f64(),
        );
        s0.push(T::from_f64(0.5 * (a0 + a45 + a90 + a135)));
        s1.push(T::from_f64(a90 - a0));
        s2.push(T::from_f64(a135 - a45));
    }
    let shape = |d| Field::new(i0.height(), i0.width(), i0.channels(), d);
    StokesMap {
        s0: shape(s0).expect("shape preserved"),
        s1: shape(s1).expect("shape preserved"),
        s2: shape(s2).expect("shape preserved"),
    }
}

/// Inverse of [`stokes_from_quad`]: renders the four views from Stokes parameters,
/// `I_alpha = (s0 - s1 * cos(2 alpha) - s2 * sin(2 alpha)) / 2`.
pub fn quad_from_stokes<T: Scalar>(stokes: &StokesMap<T>) -> PolarQuad<T> {
    let n = stokes.s0.len();
    let mut planes = Vec::with_capacity(4);
    for &angle in &PLANE_ANGLES {
        let (c2, s2a) = ((2.0 * angle).cos(), (2.0 * angle).sin());
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let v = 0.5
                * (stokes.s0.values()[i].to_f64()
                    - stokes.s1.values()[i].to_f64() * c2
                    - stokes.s2.values()[i].to_f64() * s2a);
            data.push(T::from_f64(v));
        }
        planes.push(
            Field::new(stokes.s0.height(), stokes.s0.width(), stokes.s0.channels(), data)
                .expect("shape preserved"),
        );
    }
    let planes: [Field<T>; 4] = match planes.try_into() {
        Ok(p) => p,
        Err(_) => unreachable!("four angles yield four planes"),
    };
    PolarQuad { planes }
}

/// Recovers total intensity, DoP, and AoP from Stokes parameters.
///
/// Where `s0 <= DARK_S0_EPSILON` the pixel is treated as dark: `dop = 0`, `aop = 0`.
/// Elsewhere `aop = atan2(s2, s1) / 2`, shifted by pi when negative so the canonical
/// branch is `[0, pi)` (the angle is pi-periodic, so the shift is physically neutral).
pub fn params_from_stokes<T: Scalar>(stokes: &StokesMap<T>) -> PolarimetricParams<T> {
    let n = stokes.s0.len();
    let mut dop = Vec::with_capacity(n);
    let mut aop = Vec::with_capacity(n);
    for i in 0..n {
        let s0 = stokes.s0.values()[i].to_f64();
        let s1 = stokes.s1.values()[i].to_f64();
        let s2 = stokes.s2.values()[i].to_f64();
        if s0 <= DARK_S0_EPSILON {
            dop.push(T::from_f64(0.0));
            aop.push(T::from_f64(0.0));
        } else {
            dop.push(T::from_f64((s1 * s1 + s2 * s2).sqrt() / s0));
            let mut theta = 0.5 * s2.atan2(s1);
            if theta < 0.0 {
                theta += std::f64::consts::PI;
            }
            aop.push(T::from_f64(theta));
        }
    }
    let shape = |d| {
        Field::new(stokes.s0.height(), stokes.s0.width(), stokes.s0.channels(), d)
            .expect("shape preserved")
    };
    PolarimetricParams { ti: stokes.s0.clone(), dop: shape(dop), aop: shape(aop) }
}

/// Convenience composition: Stokes recovery then parameter extraction.
pub fn params_from_quad<T: Scalar>(quad: &PolarQuad<T>) -> PolarimetricParams<T> {
    params_from_stokes(&stokes_from_quad(quad))
}

/// Per-pixel mean of the four planes; equals `s0 / 2` on consistent quads.
pub fn average_polarized<T: Scalar>(quad: &PolarQuad<T>) -> Field<T> {
    let [i0, i45, i90, i135] = quad.planes();
    let mut data = Vec::with_capacity(i0.len());
    for i in 0..i0.len() {
        let v = 0.25
            * (i0.values()[i].to_f64()
                + i45.values()[i].to_f64()
                + i90.values()[i].to_f64()
                + i135.values()[i].to_f64());
        data.push(T::from_f64(v));
    }
    Field::new(i0.height(), i0.width(), i0.channels(), data).expect("shape preserved")
}

/// Mean absolute value of `(I_0 + I_90) - (I_45 + I_135)` over all pixels.
///
/// Zero (up to rounding) for physically consistent quads; grows with any
/// degradation that treats the four planes independently.
pub fn consistency_residual<T: Scalar>(quad: &PolarQuad<T>) -> f64 {
    let [i0, i45, i90, i135] = quad.planes();
    if i0.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..i0.len() {
        let r = (i0.values()[i].to_f64() + i90.values()[i].to_f64())
            - (i45.values()[i].to_f64() + i135.values()[i].to_f64());
        acc += r.abs();
    }
    acc / i0.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const TOL: f64 = 1e-12;

    fn scalar_field(v: f64) -> Field<f64> {
        Field::constant(1, 1, 1, v)
    }

    fn quad_of(vals: [f64; 4]) -> PolarQuad<f64> {
        PolarQuad::new([
            scalar_field(vals[0]),
            scalar_field(vals[1]),
            scalar_field(vals[2]),
            scalar_field(vals[3]),
        ])
        .unwrap()
    }

    #[test]
    fn malus_unpolarized_is_angle_independent() {
        let v = malus_intensity(1.0, 0.0, 1.2, 0.7).unwrap();
        assert!((v - 0.5).abs() < TOL);
    }

    #[test]
    fn malus_fully_polarized_crossed_extinguishes() {
        let v = malus_intensity(1.0, 1.0, 0.0, 0.0).unwrap();
        assert!(v.abs() < TOL);
    }

    #[test]
    fn malus_handbook_value() {
        // (ti=2, p=0.5, theta=pi/4, alpha=3pi/4): cos(pi) = -1, so 1 * (1 + 0.5) = 1.5.
        let v = malus_intensity(2.0, 0.5, std::f64::consts::FRAC_PI_4, 3.0 * std::f64::consts::FRAC_PI_4)
            .unwrap();
        assert!((v - 1.5).abs() < TOL);
    }

    #[test]
    fn malus_rejects_bad_domain() {
        assert!(malus_intensity(1.0, 1.5, 0.0, 0.0).is_err());
        assert!(malus_intensity(-1.0, 0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn quad_from_params_known_values() {
        // Unpolarized: every view sees ti / 2.
        let p = PolarimetricParams::new(scalar_field(1.0), scalar_field(0.0), scalar_field(0.0))
            .unwrap();
        let q = quad_from_params(&p).unwrap();
        for k in 0..4 {
            assert!((q.plane(k).values()[0] - 0.5).abs() < TOL);
        }

        // Fully polarized along 0°: extinction at 0°, full transmission at 90°.
        let p = PolarimetricParams::new(scalar_field(1.0), scalar_field(1.0), scalar_field(0.0))
            .unwrap();
        let q = quad_from_params(&p).unwrap();
        let expect = [0.0, 0.5, 1.0, 0.5];
        for k in 0..4 {
            assert!((q.plane(k).values()[0] - expect[k]).abs() < TOL);
        }

        let p = PolarimetricParams::new(
            scalar_field(2.0),
            scalar_field(0.5),
            scalar_field(std::f64::consts::FRAC_PI_4),
        )
        .unwrap();
        let q = quad_from_params(&p).unwrap();
        let expect = [1.0, 0.5, 1.0, 1.5];
        for k in 0..4 {
            assert!((q.plane(k).values()[0] - expect[k]).abs() < TOL);
        }
    }

    #[test]
    fn stokes_from_quad_known_values() {
        let s = stokes_from_quad(&quad_of([0.5, 0.5, 0.5, 0.5]));
        assert!((s.s0.values()[0] - 1.0).abs() < TOL);
        assert!(s.s1.values()[0].abs() < TOL);
        assert!(s.s2.values()[0].abs() < TOL);

        let s = stokes_from_quad(&quad_of([0.0, 0.5, 1.0, 0.5]));
        assert!((s.s0.values()[0] - 1.0).abs() < TOL);
        assert!((s.s1.values()[0] - 1.0).abs() < TOL);
        assert!(s.s2.values()[0].abs() < TOL);

        let s = stokes_from_quad(&quad_of([1.0, 0.5, 1.0, 1.5]));
        assert!((s.s0.values()[0] - 2.0).abs() < TOL);
        assert!(s.s1.values()[0].abs() < TOL);
        assert!((s.s2.values()[0] - 1.0).abs() < TOL);
    }

    #[test]
    fn quad_from_stokes_known_values() {
        let cases: [([f64; 3], [f64; 4]); 3] = [
            ([1.0, 0.0, 0.0], [0.5, 0.5, 0.5, 0.5]),
            ([1.0, 1.0, 0.0], [0.0, 0.5, 1.0, 0.5]),
            ([2.0, 0.0, 1.0], [1.0, 0.5, 1.0, 1.5]),
        ];
        for (s, expect) in cases {
            let stokes = StokesMap::new(scalar_field(s[0]), scalar_field(s[1]), scalar_field(s[2]))
                .unwrap();
            let q = quad_from_stokes(&stokes);
            for k in 0..4 {
                assert!((q.plane(k).values()[0] - expect[k]).abs() < TOL);
            }
        }
    }

    #[test]
    fn params_from_stokes_known_values() {
        let stokes =
            StokesMap::new(scalar_field(1.0), scalar_field(0.0), scalar_field(0.0)).unwrap();
        let p = params_from_stokes(&stokes);
        assert!((p.ti.values()[0] - 1.0).abs() < TOL);
        assert!(p.dop.values()[0].abs() < TOL);
        assert!(p.aop.values()[0].abs() < TOL);

        let stokes =
            StokesMap::new(scalar_field(1.0), scalar_field(1.0), scalar_field(0.0)).unwrap();
        let p = params_from_stokes(&stokes);
        assert!((p.dop.values()[0] - 1.0).abs() < TOL);
        assert!(p.aop.values()[0].abs() < TOL);

        let stokes =
            StokesMap::new(scalar_field(2.0), scalar_field(0.0), scalar_field(1.0)).unwrap();
        let p = params_from_stokes(&stokes);
        assert!((p.ti.values()[0] - 2.0).abs() < TOL);
        assert!((p.dop.values()[0] - 0.5).abs() < TOL);
        assert!((p.aop.values()[0] - std::f64::consts::FRAC_PI_4).abs() < TOL);
    }

    #[test]
    fn average_polarized_known_values() {
        let a = average_polarized(&quad_of([0.5, 0.5, 0.5, 0.5]));
        assert!((a.values()[0] - 0.5).abs() < TOL);
        let q = quad_of([0.0, 0.5, 1.0, 0.5]);
        let a = average_polarized(&q);
        assert!((a.values()[0] - 0.5).abs() < TOL);
        assert!((2.0 * a.values()[0] - stokes_from_quad(&q).s0.values()[0]).abs() < TOL);
        let a = average_polarized(&quad_of([1.0, 0.5, 1.0, 1.5]));
        assert!((a.values()[0] - 1.0).abs() < TOL);
    }

    #[test]
    fn consistency_residual_known_values() {
        assert!(consistency_residual(&quad_of([0.0, 0.0, 1.0, 0.0])) - 1.0 < TOL);
        assert!(consistency_residual(&quad_of([0.2, 0.3, 0.4, 0.3])).abs() < TOL);
    }

    /// Full round trip at f64: params -> quad -> stokes -> params.
    #[test]
    fn round_trip_f64() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut max_err = 0.0f64;
        for _ in 0..10_000 {
            let ti: f64 = rng.gen_range(0.0..2.0);
            let p: f64 = rng.gen_range(0.0..1.0);
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let params = PolarimetricParams::new(
                scalar_field(ti),
                scalar_field(p),
                scalar_field(theta),
            )
            .unwrap();
            let rec = params_from_quad(&quad_from_params(&params).unwrap());
            max_err = max_err.max((rec.ti.values()[0] - ti).abs());
            if p >= 1e-6 && ti > DARK_S0_EPSILON {
                max_err = max_err.max((rec.dop.values()[0] - p).abs());
                let mut dtheta = (rec.aop.values()[0] - theta).abs();
                dtheta = dtheta.min(std::f64::consts::PI - dtheta);
                max_err = max_err.max(dtheta);
            }
        }
        assert!(max_err < 1e-6, "round trip max err {max_err}");
    }

    /// The f32 storage path: one f32 rounding of the planes costs ~eps_f32 / p radians
    /// of AoP conditioning, so the bound scales with 1 / (ti * p) instead of being flat.
    #[test]
    fn round_trip_f32_conditioning() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..2_000 {
            let ti: f64 = rng.gen_range(0.05..2.0);
            let p: f64 = rng.gen_range(1e-3..1.0);
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let params = PolarimetricParams::new(
                Field::<f32>::constant(1, 1, 1, ti as f32),
                Field::<f32>::constant(1, 1, 1, p as f32),
                Field::<f32>::constant(1, 1, 1, theta as f32),
            )
            .unwrap();
            let ti = params.ti.values()[0] as f64;
            let p = params.dop.values()[0] as f64;
            let theta = params.aop.values()[0] as f64;
            let rec = params_from_quad(&quad_from_params(&params).unwrap());
            // Absolute plane error is at most ~eps_f32 * ti; s1/s2 combine four planes.
            let plane_err = 4.0 * f32::EPSILON as f64 * ti.max(1.0);
            assert!((rec.ti.values()[0] as f64 - ti).abs() < 2.0 * plane_err + 1e-9);
            assert!((rec.dop.values()[0] as f64 - p).abs() < 2.0 * plane_err / ti + 1e-9);
            let mut dtheta = (rec.aop.values()[0] as f64 - theta).abs();
            dtheta = dtheta.min(std::f64::consts::PI - dtheta);
            assert!(
                dtheta < plane_err / (ti * p) + 1e-9,
                "aop err {dtheta} at ti {ti} p {p}"
            );
        }
    }

    proptest! {
        /// Generated quads are consistent, have bounded DoP, and agree with both
        /// closed-form s0 expressions.
        #[test]
        fn generated_quads_are_consistent(
            ti in 0.0f64..2.0,
            p in 0.0f64..1.0,
            theta in 0.0f64..std::f64::consts::PI,
        ) {
            let params = PolarimetricParams::new(
                scalar_field(ti), scalar_field(p), scalar_field(theta),
            ).unwrap();
            let q = quad_from_params(&params).unwrap();
            prop_assert!(consistency_residual(&q) < 1e-7);

            let s = stokes_from_quad(&q);
            let s0_a = q.plane(0).values()[0] + q.plane(2).values()[0];
            let s0_b = q.plane(1).values()[0] + q.plane(3).values()[0];
            prop_assert!((s.s0.values()[0] - s0_a).abs() < 1e-6);
            prop_assert!((s.s0.values()[0] - s0_b).abs() < 1e-6);

            let rec = params_from_stokes(&s);
            prop_assert!(rec.dop.values()[0] <= 1.0 + 1e-6);
            prop_assert!(rec.aop.values()[0] >= 0.0);
            prop_assert!(rec.aop.values()[0] < std::f64::consts::PI);
        }

        /// stokes_from_quad inverts quad_from_stokes for any physical Stokes triple.
        #[test]
        fn stokes_round_trip(
            s0 in 0.0f64..2.0,
            frac in 0.0f64..1.0,
            ang in 0.0f64..(2.0 * std::f64::consts::PI),
        ) {
            let r = s0 * frac;
            let stokes = StokesMap::new(
                scalar_field(s0),
                scalar_field(r * ang.cos()),
                scalar_field(r * ang.sin()),
            ).unwrap();
            let rec = stokes_from_quad(&quad_from_stokes(&stokes));
            prop_assert!((rec.s0.values()[0] - stokes.s0.values()[0]).abs() < 1e-6);
            prop_assert!((rec.s1.values()[0] - stokes.s1.values()[0]).abs() < 1e-6);
            prop_assert!((rec.s2.values()[0] - stokes.s2.values()[0]).abs() < 1e-6);
        }
    }
}
