//! Sampling grids, the unitary transform between position and momentum
//! space, and midpoint quadrature.
//!
//! Every grid is origin-centered: sample `i` of an axis with `n` points and
//! pitch `dx` sits at `(i - n/2) * dx`. The dual momentum axis has pitch
//! `2π / (n dx)`. The transform is
//!
//! ```text
//! f̃(q) = (2π)^(-1/2) Σ_x f(x) e^(-i q x) dx       (per dimension)
//! ```
//!
//! which is unitary on the grid: `Σ|f|² dx = Σ|f̃|² dq`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayBase, Axis as NdAxis, DataMut, Dimension, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};

/// A uniform, origin-centered sampling axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    n: usize,
    dx: f64,
}

impl Axis {
    pub fn new(n: usize, dx: f64) -> Result<Self> {
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::BadAxisLength(n));
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::InvalidParameter(format!("axis pitch {dx}")));
        }
        Ok(Self { n, dx })
    }

    /// Axis with `n` samples spanning `[-half_extent, half_extent)`.
    pub fn with_half_extent(n: usize, half_extent: f64) -> Result<Self> {
        Self::new(n, 2.0 * half_extent / n as f64)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn pitch(&self) -> f64 {
        self.dx
    }

    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.n / 2) as f64) * self.dx
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }

    pub fn half_extent(&self) -> f64 {
        (self.n / 2) as f64 * self.dx
    }

    /// Index of the origin sample.
    pub fn center(&self) -> usize {
        self.n / 2
    }

    /// Fourier-dual axis (same length, pitch 2π/(n dx)).
    pub fn dual(&self) -> Axis {
        Axis {
            n: self.n,
            dx: 2.0 * PI / (self.n as f64 * self.dx),
        }
    }

    /// Twice the samples at half the pitch, same extent.
    pub fn refined(&self) -> Axis {
        Axis {
            n: 2 * self.n,
            dx: self.dx / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Plane {
    NearField,
    FarField,
}

impl Plane {
    pub fn name(self) -> &'static str {
        match self {
            Plane::NearField => "near-field",
            Plane::FarField => "far-field",
        }
    }

    pub fn conjugate(self) -> Plane {
        match self {
            Plane::NearField => Plane::FarField,
            Plane::FarField => Plane::NearField,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToMomentum,
    ToPosition,
}

#[derive(Debug, Clone)]
pub struct Field1D<T> {
    pub values: Array1<T>,
    pub axis: Axis,
    pub plane: Plane,
}

#[derive(Debug, Clone)]
pub struct Field2D<T> {
    pub values: Array2<T>,
    pub x: Axis,
    pub y: Axis,
    pub plane: Plane,
}

impl<T> Field1D<T> {
    pub fn cell(&self) -> f64 {
        self.axis.pitch()
    }
}

impl<T> Field2D<T> {
    pub fn cell(&self) -> f64 {
        self.x.pitch() * self.y.pitch()
    }
}

impl Field1D<f64> {
    pub fn from_fn(axis: Axis, plane: Plane, f: impl Fn(f64) -> f64) -> Self {
        let values = Array1::from_iter(axis.coords().into_iter().map(f));
        Self { values, axis, plane }
    }

    /// Rescaled so that `Σ values · dx = 1`.
    pub fn normalized(&self) -> Result<Self> {
        let total = integrate(self)?;
        if total <= 0.0 {
            return Err(Error::NonPositiveIntegral);
        }
        Ok(Self {
            values: &self.values / total,
            axis: self.axis,
            plane: self.plane,
        })
    }
}

impl Field2D<f64> {
    pub fn from_fn(x: Axis, y: Axis, plane: Plane, f: impl Fn(f64, f64) -> f64) -> Self {
        let xs = x.coords();
        let ys = y.coords();
        let values = Array2::from_shape_fn((x.len(), y.len()), |(i, j)| f(xs[i], ys[j]));
        Self { values, x, y, plane }
    }

    /// Separable image `fx(x) · fy(y)`; the first array index runs along x.
    pub fn outer(fx: &Field1D<f64>, fy: &Field1D<f64>) -> Result<Self> {
        if fx.plane != fy.plane {
            return Err(Error::PlaneMismatch {
                expected: fx.plane.name(),
                found: fy.plane.name(),
            });
        }
        let values = Array2::from_shape_fn((fx.axis.len(), fy.axis.len()), |(i, j)| {
            fx.values[i] * fy.values[j]
        });
        Ok(Self {
            values,
            x: fx.axis,
            y: fy.axis,
            plane: fx.plane,
        })
    }

    pub fn normalized(&self) -> Result<Self> {
        let total = integrate(self)?;
        if total <= 0.0 {
            return Err(Error::NonPositiveIntegral);
        }
        Ok(Self {
            values: &self.values / total,
            x: self.x,
            y: self.y,
            plane: self.plane,
        })
    }

    pub fn is_normalized(&self) -> bool {
        integrate(self).map(|t| (t - 1.0).abs() < 1e-9).unwrap_or(false)
    }
}

/// Nonnegative samples with a uniform cell measure.
pub trait Intensity {
    fn samples(&self) -> Box<dyn Iterator<Item = f64> + '_>;
    fn cell_measure(&self) -> f64;
}

impl Intensity for Field1D<f64> {
    fn samples(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        Box::new(self.values.iter().copied())
    }
    fn cell_measure(&self) -> f64 {
        self.cell()
    }
}

impl Intensity for Field2D<f64> {
    fn samples(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        Box::new(self.values.iter().copied())
    }
    fn cell_measure(&self) -> f64 {
        self.cell()
    }
}

fn checked_sums(field: &impl Intensity) -> Result<(f64, f64)> {
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for v in field.samples() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidSamples);
        }
        s1 += v;
        s2 += v * v;
    }
    Ok((s1, s2))
}

/// Midpoint-rule integral `∫ I`.
pub fn integrate(field: &impl Intensity) -> Result<f64> {
    Ok(checked_sums(field)?.0 * field.cell_measure())
}

/// Midpoint-rule integral `∫ I²`.
pub fn integrate_sq(field: &impl Intensity) -> Result<f64> {
    Ok(checked_sums(field)?.1 * field.cell_measure())
}

/// `[∫I]² / ∫I²`, the effective area (or length) covered by `I`.
pub fn participation(field: &impl Intensity) -> Result<f64> {
    let (s1, s2) = checked_sums(field)?;
    if s1 <= 0.0 || s2 <= 0.0 {
        return Err(Error::NonPositiveIntegral);
    }
    Ok(s1 * s1 / s2 * field.cell_measure())
}

fn fft_for(planner: &mut FftPlanner<f64>, n: usize, dir: Direction) -> std::sync::Arc<dyn Fft<f64>> {
    let fft_dir = match dir {
        Direction::ToMomentum => FftDirection::Forward,
        Direction::ToPosition => FftDirection::Inverse,
    };
    planner.plan_fft(n, fft_dir)
}

/// Apply the centered unitary transform along one array axis in place.
///
/// `pitch` is the sample pitch of the axis being transformed (dx when going
/// to momentum, dq when going back). The axis length must be a multiple of 4
/// for the centering phases to reduce to `(-1)^(j+k)`.
pub fn transform_along<S, D>(
    array: &mut ArrayBase<S, D>,
    axis: usize,
    pitch: f64,
    dir: Direction,
    planner: &mut FftPlanner<f64>,
) -> Result<()>
where
    S: DataMut<Elem = Complex64>,
    D: Dimension,
{
    let n = array.len_of(NdAxis(axis));
    if n < 16 || !n.is_power_of_two() {
        return Err(Error::BadAxisLength(n));
    }
    let fft = fft_for(planner, n, dir);
    let scale = pitch / (2.0 * PI).sqrt();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for mut lane in array.lanes_mut(NdAxis(axis)) {
        for (j, (b, v)) in buf.iter_mut().zip(lane.iter()).enumerate() {
            *b = if j % 2 == 0 { *v } else { -*v };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, (v, b)) in lane.iter_mut().zip(buf.iter()).enumerate() {
            let s = if k % 2 == 0 { scale } else { -scale };
            *v = *b * s;
        }
    }
    Ok(())
}

pub fn transform_1d(field: &Field1D<Complex64>, dir: Direction) -> Result<Field1D<Complex64>> {
    let mut values = field.values.clone();
    let mut planner = FftPlanner::new();
    transform_along(&mut values, 0, field.axis.pitch(), dir, &mut planner)?;
    Ok(Field1D {
        values,
        axis: field.axis.dual(),
        plane: field.plane.conjugate(),
    })
}

pub fn transform_2d(field: &Field2D<Complex64>, dir: Direction) -> Result<Field2D<Complex64>> {
    let mut values = field.values.clone();
    let mut planner = FftPlanner::new();
    transform_along(&mut values, 0, field.x.pitch(), dir, &mut planner)?;
    transform_along(&mut values, 1, field.y.pitch(), dir, &mut planner)?;
    Ok(Field2D {
        values,
        x: field.x.dual(),
        y: field.y.dual(),
        plane: field.plane.conjugate(),
    })
}

/// `Σ |f|²` times the cell measure.
pub fn norm_sq<S, D>(values: &ArrayBase<S, D>, cell: f64) -> f64
where
    S: ndarray::Data<Elem = Complex64>,
    D: Dimension,
{
    values.iter().map(|v| v.norm_sqr()).sum::<f64>() * cell
}

/// Azimuthally averaged profile of a 2D field.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub bin_width: f64,
    /// Bin centers.
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// Relative L2 deviation between the field and its radially symmetric
    /// reconstruction.
    pub asymmetry: f64,
}

impl RadialProfile {
    /// Linear interpolation between bin centers; flat beyond the ends.
    pub fn at(&self, r: f64) -> f64 {
        let t = r / self.bin_width - 0.5;
        if t <= 0.0 {
            return self.values[0];
        }
        let k = t.floor() as usize;
        if k + 1 >= self.values.len() {
            return *self.values.last().unwrap();
        }
        let f = t - k as f64;
        self.values[k] * (1.0 - f) + self.values[k + 1] * f
    }

    /// Radius of the first local minimum after the central maximum.
    pub fn first_minimum(&self) -> Option<f64> {
        (1..self.values.len().saturating_sub(1))
            .find(|&k| self.values[k] < self.values[k - 1] && self.values[k] <= self.values[k + 1])
            .map(|k| self.radii[k])
    }
}

pub const RADIAL_ASYMMETRY_LIMIT: f64 = 0.05;

/// Azimuthal average binned by radius with bin width equal to the grid pitch.
pub fn radial_profile(field: &Field2D<f64>) -> Result<RadialProfile> {
    if (field.x.pitch() - field.y.pitch()).abs() > 1e-12 * field.x.pitch() {
        return Err(Error::ShapeMismatch("radial profile needs square cells".into()));
    }
    let width = field.x.pitch();
    let xs = field.x.coords();
    let ys = field.y.coords();
    let r_max = field.x.half_extent().min(field.y.half_extent());
    let nbins = (r_max / width).floor() as usize;
    let mut sums = vec![0.0; nbins];
    let mut counts = vec![0usize; nbins];
    for ((i, j), &v) in field.values.indexed_iter() {
        let r = xs[i].hypot(ys[j]);
        let k = (r / width) as usize;
        if k < nbins {
            sums[k] += v;
            counts[k] += 1;
        }
    }
    let values: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let radii = (0..nbins).map(|k| (k as f64 + 0.5) * width).collect();
    let mut profile = RadialProfile {
        bin_width: width,
        radii,
        values,
        asymmetry: 0.0,
    };

    let mut num = 0.0;
    let mut den = 0.0;
    Zip::indexed(&field.values).for_each(|(i, j), &v| {
        let r = xs[i].hypot(ys[j]);
        if r < r_max {
            let d = v - profile.at(r);
            num += d * d;
            den += v * v;
        }
    });
    profile.asymmetry = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    if profile.asymmetry > RADIAL_ASYMMETRY_LIMIT {
        return Err(Error::Asymmetric {
            measured: profile.asymmetry,
            limit: RADIAL_ASYMMETRY_LIMIT,
        });
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }

    #[test]
    fn axis_rejects_bad_lengths() {
        assert!(Axis::new(12, 1.0).is_err());
        assert!(Axis::new(8, 1.0).is_err());
        assert!(Axis::new(48, 1.0).is_err());
        assert!(Axis::new(16, 0.0).is_err());
        let a = Axis::new(64, 0.5).unwrap();
        assert_eq!(a.coord(32), 0.0);
        assert_relative_eq!(a.dual().pitch(), 2.0 * PI / 32.0);
    }

    #[test]
    fn gaussian_transforms_to_gaussian() {
        // exp(-x²/σ²) -> (σ/√2) exp(-σ²q²/4) under the unitary convention
        let sigma = 3.0;
        let axis = Axis::with_half_extent(256, 8.0 * sigma).unwrap();
        let f = Field1D {
            values: Array1::from_iter(axis.coords().iter().map(|&x| c((-x * x / (sigma * sigma)).exp()))),
            axis,
            plane: Plane::NearField,
        };
        let ft = transform_1d(&f, Direction::ToMomentum).unwrap();
        for (k, q) in ft.axis.coords().into_iter().enumerate() {
            let expected = sigma / 2f64.sqrt() * (-sigma * sigma * q * q / 4.0).exp();
            assert!((ft.values[k].re - expected).abs() < 1e-12);
            assert!(ft.values[k].im.abs() < 1e-12);
        }
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let axis = Axis::new(64, 0.25).unwrap();
        let mut values = Array1::from_elem(64, c(0.0));
        values[axis.center()] = c(1.0);
        let f = Field1D { values, axis, plane: Plane::NearField };
        let ft = transform_1d(&f, Direction::ToMomentum).unwrap();
        let m0 = ft.values[0].norm();
        for v in ft.values.iter() {
            assert_relative_eq!(v.norm(), m0, epsilon = 1e-14);
        }
    }

    #[test]
    fn round_trip_and_parseval_2d() {
        let x = Axis::new(32, 0.7).unwrap();
        let y = Axis::new(64, 0.3).unwrap();
        let values = Array2::from_shape_fn((32, 64), |(i, j)| {
            Complex64::new(((i * 7 + j * 3) % 11) as f64 - 5.0, ((i * j) % 5) as f64)
        });
        let f = Field2D { values, x, y, plane: Plane::NearField };
        let ft = transform_2d(&f, Direction::ToMomentum).unwrap();
        assert_eq!(ft.plane, Plane::FarField);
        let n0 = norm_sq(&f.values, f.cell());
        let n1 = norm_sq(&ft.values, ft.cell());
        assert_relative_eq!(n0, n1, max_relative = 1e-12);
        let back = transform_2d(&ft, Direction::ToPosition).unwrap();
        let err = (&back.values - &f.values).iter().map(|v| v.norm()).fold(0.0, f64::max);
        let scale = f.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err / scale < 1e-12);
    }

    #[test]
    fn integrate_rejects_negative_and_nan() {
        let axis = Axis::new(16, 1.0).unwrap();
        let mut f = Field1D::from_fn(axis, Plane::NearField, |_| 1.0);
        assert_relative_eq!(integrate(&f).unwrap(), 16.0);
        f.values[3] = -1e-3;
        assert!(matches!(integrate(&f), Err(Error::InvalidSamples)));
        f.values[3] = f64::NAN;
        assert!(integrate_sq(&f).is_err());
    }

    #[test]
    fn gaussian_participation_area() {
        // exp(-2r²/σ²): [∫I]²/∫I² = πσ²
        let sigma = 600.0;
        let axis = Axis::with_half_extent(512, 4.0 * sigma).unwrap();
        let f = Field2D::from_fn(axis, axis, Plane::NearField, |x, y| {
            (-2.0 * (x * x + y * y) / (sigma * sigma)).exp()
        });
        let pr = participation(&f).unwrap();
        assert_relative_eq!(pr, PI * sigma * sigma, max_relative = 1e-3);
        let scaled = Field2D { values: &f.values * 7.5, ..f.clone() };
        assert_relative_eq!(participation(&scaled).unwrap(), pr, max_relative = 1e-12);
    }

    #[test]
    fn radial_sinc_squared_participation() {
        // sinc²(c r²): [∫I]²/∫I² = 3π²/(4c)
        let cc = 254.2;
        let near = Axis::with_half_extent(1024, 2400.0).unwrap();
        let q = near.dual();
        let f = Field2D::from_fn(q, q, Plane::FarField, |a, b| {
            let u = cc * (a * a + b * b);
            if u == 0.0 { 1.0 } else { (u.sin() / u).powi(2) }
        });
        let pr = participation(&f).unwrap();
        assert_relative_eq!(pr, 3.0 * PI * PI / (4.0 * cc), max_relative = 0.01);
    }

    #[test]
    fn radial_profile_constant_and_gaussian() {
        let axis = Axis::new(128, 1.0).unwrap();
        let flat = Field2D::from_fn(axis, axis, Plane::NearField, |_, _| 2.5);
        let p = radial_profile(&flat).unwrap();
        assert!(p.values.iter().all(|&v| (v - 2.5).abs() < 1e-12));

        let s = 12.0;
        let g = Field2D::from_fn(axis, axis, Plane::NearField, |x, y| (-(x * x + y * y) / (s * s)).exp());
        let p = radial_profile(&g).unwrap();
        for (r, v) in p.radii.iter().zip(&p.values).take(30) {
            let expected = (-r * r / (s * s)).exp();
            assert!((v - expected).abs() < 0.02, "r={r}: {v} vs {expected}");
        }
    }

    #[test]
    fn radial_profile_finds_first_sinc_zero() {
        let cc = 254.2;
        let near = Axis::with_half_extent(1024, 2400.0).unwrap();
        let q = near.dual();
        let f = Field2D::from_fn(q, q, Plane::FarField, |a, b| {
            let u = cc * (a * a + b * b);
            if u == 0.0 { 1.0 } else { (u.sin() / u).powi(2) }
        });
        let p = radial_profile(&f).unwrap();
        let r0 = p.first_minimum().unwrap();
        assert!((r0 - (PI / cc).sqrt()).abs() <= p.bin_width, "{r0}");
    }

    #[test]
    fn radial_profile_rejects_four_lobes() {
        let axis = Axis::new(128, 1.0).unwrap();
        let f = Field2D::from_fn(axis, axis, Plane::NearField, |x, y| {
            let g = |u: f64| (-(u - 20.0).powi(2) / 25.0).exp() + (-(u + 20.0).powi(2) / 25.0).exp();
            g(x) * g(y)
        });
        assert!(matches!(radial_profile(&f), Err(Error::Asymmetric { .. })));
    }
}
