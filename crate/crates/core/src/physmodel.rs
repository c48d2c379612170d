//! Physical constants, pump and phase-matching functions, the tunable
//! double-Gaussian filter family and the closed-form Schmidt number.
//!
//! Units: lengths in µm, transverse momenta in rad/µm.

use std::f64::consts::PI;
use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fieldgrid::{transform_along, Axis, Direction, Field1D, Field2D, Plane};

/// SLM pixel pitch.
pub const SLM_PIXEL_UM: f64 = 32.0;
/// SLM array size (columns, rows).
pub const SLM_SHAPE: (usize, usize) = (800, 600);

/// Unnormalized sinc, `sin(u)/u` with `sinc(0) = 1`.
pub fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        1.0 - u * u / 6.0
    } else {
        u.sin() / u
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    sigma: f64,
    length: f64,
    lambda3: f64,
    dsigma: f64,
    dlength: f64,
}

impl PhysicalParams {
    pub fn new(sigma: f64, length: f64, lambda3: f64) -> Result<Self> {
        Self::with_uncertainty(sigma, length, lambda3, 0.0, 0.0)
    }

    pub fn with_uncertainty(sigma: f64, length: f64, lambda3: f64, dsigma: f64, dlength: f64) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("sigma", sigma)?;
        positive("crystal length", length)?;
        positive("pump wavelength", lambda3)?;
        for (name, v) in [("dsigma", dsigma), ("dL", dlength)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(Self { sigma, length, lambda3, dsigma, dlength })
    }

    /// 355 nm pump, 600 µm waist, 4.5 mm BBO crystal; Δσ = 13 µm, ΔL = 0.3 mm.
    pub fn nominal() -> Self {
        Self {
            sigma: 600.0,
            length: 4500.0,
            lambda3: 0.355,
            dsigma: 13.0,
            dlength: 300.0,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn lambda3(&self) -> f64 {
        self.lambda3
    }
    pub fn dsigma(&self) -> f64 {
        self.dsigma
    }
    pub fn dlength(&self) -> f64 {
        self.dlength
    }

    /// Pump wavenumber, rad/µm.
    pub fn k3(&self) -> f64 {
        2.0 * PI / self.lambda3
    }

    /// Wavelength of the degenerate down-converted photons.
    pub fn signal_wavelength(&self) -> f64 {
        2.0 * self.lambda3
    }

    /// Phase-matching scale `b = L / (4 k₃)`, µm².
    pub fn phase_matching_scale(&self) -> f64 {
        self.length / (4.0 * self.k3())
    }

    /// Copy with a different waist and crystal length (uncertainties kept).
    pub fn perturbed(&self, sigma: f64, length: f64) -> Result<Self> {
        Self::with_uncertainty(sigma, length, self.lambda3, self.dsigma, self.dlength)
    }
}

/// `K = 3π²σ² / (8 λ₃ L)`, valid for a thin crystal and a wide pump.
pub fn closed_form_schmidt(params: &PhysicalParams) -> f64 {
    3.0 * PI * PI * params.sigma * params.sigma / (8.0 * params.lambda3 * params.length)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpModel {
    pub sigma: f64,
}

impl PumpModel {
    pub fn new(params: &PhysicalParams) -> Self {
        Self { sigma: params.sigma }
    }

    /// Angular spectrum `v(q) = exp(-σ²q²/4)`; `q_sq` is `|q|²`.
    pub fn angular_spectrum(&self, q_sq: f64) -> f64 {
        (-self.sigma * self.sigma * q_sq / 4.0).exp()
    }

    /// Near-field amplitude `W(x) = exp(-x²/σ²)`; `x_sq` is `|x|²`.
    pub fn near_field(&self, x_sq: f64) -> f64 {
        (-x_sq / (self.sigma * self.sigma)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhaseMatchingKind {
    ExactSinc,
    GaussianApprox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMatchingModel {
    pub kind: PhaseMatchingKind,
    /// `L / (4 k₃)`, µm².
    pub b: f64,
    /// Width factor of the Gaussian approximation `exp(-α b q²)`.
    pub alpha: f64,
}

impl PhaseMatchingModel {
    pub fn new(kind: PhaseMatchingKind, params: &PhysicalParams) -> Self {
        Self {
            kind,
            b: params.phase_matching_scale(),
            alpha: gaussian_width_factor(),
        }
    }

    /// `g(q)` as a function of `|q|²`.
    pub fn amplitude(&self, q_sq: f64) -> f64 {
        match self.kind {
            PhaseMatchingKind::ExactSinc => sinc(self.b * q_sq),
            PhaseMatchingKind::GaussianApprox => (-self.alpha * self.b * q_sq).exp(),
        }
    }
}

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let panels = panels + panels % 2;
    let h = (hi - lo) / panels as f64;
    let mut s = f(lo) + f(hi);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + k as f64 * h);
    }
    s * h / 3.0
}

/// `∫_T^∞ sin²(t) t^(-p) dt` for `T` a multiple of π, asymptotic expansion.
fn sin_sq_power_tail(t: f64, p: f64) -> f64 {
    t.powf(1.0 - p) / (2.0 * (p - 1.0)) - p / (8.0 * t.powf(p + 1.0))
}

/// Ratio of radial second moments `∫r² sinc²(r²)dr / ∫sinc²(r²)dr` over
/// `r ≥ 0`, by quadrature.
pub fn sinc_sq_radial_moment() -> f64 {
    let periods = 400.0;
    let t_end = periods * PI;
    let u_end = t_end.sqrt();
    let panels = 400_000;
    let num = simpson(|u| if u == 0.0 { 0.0 } else { (u * u).sin().powi(2) / (u * u) }, 0.0, u_end, panels)
        + 0.5 * sin_sq_power_tail(t_end, 1.5);
    let den = simpson(|u| sinc(u * u).powi(2), 0.0, u_end, panels) + 0.5 * sin_sq_power_tail(t_end, 2.5);
    num / den
}

/// α such that `exp(-2αb r²)` and `sinc²(b r²)` share the same radial second
/// moment. Computed once by quadrature.
pub fn gaussian_width_factor() -> f64 {
    static ALPHA: OnceLock<f64> = OnceLock::new();
    *ALPHA.get_or_init(|| 1.0 / (4.0 * sinc_sq_radial_moment()))
}

/// How the addressed pattern maps to the field transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlmResponse {
    /// The pattern is the intensity transmittance; the field sees `√F`.
    Intensity,
    /// The pattern is the field transmission itself.
    Amplitude,
}

impl SlmResponse {
    pub fn amplitude(self, transmission: f64) -> f64 {
        match self {
            SlmResponse::Intensity => transmission.max(0.0).sqrt(),
            SlmResponse::Amplitude => transmission,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Normalization {
    /// Scaled so the supremum over the plane is 1.
    PeakOne,
    /// The double-Gaussian expression as written; peaks at up to 4.
    Raw,
    /// Each one-axis bracket divided by 2, its largest possible value, so the
    /// scale does not depend on (a, d).
    Fixed,
}

/// Transmission mask sampled on SLM pixels, centered on the optical axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledMask {
    pub pitch: f64,
    /// Indexed `[ix, iy]`.
    pub values: Array2<f64>,
}

impl SampledMask {
    pub fn new(pitch: f64, values: Array2<f64>) -> Result<Self> {
        if !(pitch > 0.0) {
            return Err(Error::InvalidParameter(format!("mask pitch {pitch}")));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidSamples);
        }
        Ok(Self { pitch, values })
    }

    fn index(&self, u: f64, n: usize) -> Option<usize> {
        let k = (u / self.pitch + n as f64 / 2.0).floor();
        (k >= 0.0 && (k as usize) < n).then_some(k as usize)
    }

    /// Nearest-pixel lookup; zero outside the aperture.
    pub fn at(&self, x: f64, y: f64) -> f64 {
        let (nx, ny) = self.values.dim();
        match (self.index(x, nx), self.index(y, ny)) {
            (Some(i), Some(j)) => self.values[[i, j]],
            _ => 0.0,
        }
    }

    /// Rank-one factorization `m[i,j] = fx[i] fy[j]`, if one exists.
    fn factors(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let ((i0, j0), &peak) = self
            .values
            .indexed_iter()
            .max_by(|a, b| a.1.total_cmp(b.1))?;
        if peak <= 0.0 {
            let (nx, ny) = self.values.dim();
            return Some((vec![0.0; nx], vec![0.0; ny]));
        }
        let fx: Vec<f64> = self.values.column(j0).to_vec();
        let fy: Vec<f64> = self.values.row(i0).iter().map(|v| v / peak).collect();
        let ok = self
            .values
            .indexed_iter()
            .all(|((i, j), &v)| (v - fx[i] * fy[j]).abs() <= 1e-9 * peak);
        ok.then_some((fx, fy))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterKind {
    Blank,
    /// Offsets `±d` and width parameter `a`, both in µm.
    DoubleGaussian { a: f64, d: f64 },
    CustomSampled(SampledMask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub normalization: Normalization,
    pub response: SlmResponse,
    pub slm_pixel: f64,
    axis_scale: f64,
    custom_factors: Option<(Vec<f64>, Vec<f64>)>,
}

impl FilterSpec {
    pub fn blank() -> Self {
        Self {
            kind: FilterKind::Blank,
            normalization: Normalization::PeakOne,
            response: SlmResponse::Intensity,
            slm_pixel: SLM_PIXEL_UM,
            axis_scale: 1.0,
            custom_factors: None,
        }
    }

    pub fn double_gaussian(a: f64, d: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) || !(d.is_finite() && d >= 0.0) {
            return Err(Error::InvalidParameter(format!("filter a={a} d={d}")));
        }
        let mut spec = Self {
            kind: FilterKind::DoubleGaussian { a, d },
            ..Self::blank()
        };
        spec.axis_scale = spec.compute_axis_scale();
        Ok(spec)
    }

    /// Same as [`FilterSpec::double_gaussian`] with `a` and `d` in SLM pixels.
    pub fn double_gaussian_px(a_px: f64, d_px: f64) -> Result<Self> {
        Self::double_gaussian(a_px * SLM_PIXEL_UM, d_px * SLM_PIXEL_UM)
    }

    pub fn custom(mask: SampledMask) -> Self {
        let custom_factors = mask.factors();
        let mut spec = Self {
            slm_pixel: mask.pitch,
            kind: FilterKind::CustomSampled(mask),
            custom_factors,
            ..Self::blank()
        };
        spec.axis_scale = spec.compute_axis_scale();
        spec
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self.axis_scale = self.compute_axis_scale();
        self
    }

    pub fn with_response(mut self, response: SlmResponse) -> Self {
        self.response = response;
        self
    }

    pub fn is_blank(&self) -> bool {
        matches!(self.kind, FilterKind::Blank)
    }

    /// True when the x and y factors are the same function.
    pub fn is_axis_symmetric(&self) -> bool {
        matches!(self.kind, FilterKind::Blank | FilterKind::DoubleGaussian { .. })
    }

    /// One-axis bracket `exp(-(u-d)²/4a²) + exp(-(u+d)²/4a²)`.
    fn bracket(a: f64, d: f64, u: f64) -> f64 {
        let s = 4.0 * a * a;
        (-(u - d).powi(2) / s).exp() + (-(u + d).powi(2) / s).exp()
    }

    /// Location `u* ≥ 0` of the bracket maximum: 0 when `d ≤ √2 a`, else the
    /// root of `u = d tanh(u d / 2a²)`.
    pub fn bracket_peak(a: f64, d: f64) -> f64 {
        if d * d <= 2.0 * a * a {
            return 0.0;
        }
        let mut u = d;
        for _ in 0..10_000 {
            let next = d * (u * d / (2.0 * a * a)).tanh();
            if (next - u).abs() <= 1e-14 * d {
                return next;
            }
            u = next;
        }
        u
    }

    fn compute_axis_scale(&self) -> f64 {
        match (&self.kind, self.normalization) {
            (FilterKind::Blank, _) | (_, Normalization::Raw) => 1.0,
            (FilterKind::DoubleGaussian { .. }, Normalization::Fixed) => 2.0,
            (FilterKind::DoubleGaussian { a, d }, Normalization::PeakOne) => {
                Self::bracket(*a, *d, Self::bracket_peak(*a, *d))
            }
            (FilterKind::CustomSampled(_), Normalization::Fixed) => 1.0,
            (FilterKind::CustomSampled(mask), Normalization::PeakOne) => {
                mask.values.iter().copied().fold(0.0, f64::max).sqrt().max(f64::MIN_POSITIVE)
            }
        }
    }

    /// Addressed transmission `F(x, y)` after normalization.
    pub fn transmission(&self, x: f64, y: f64) -> f64 {
        match &self.kind {
            FilterKind::Blank => 1.0,
            FilterKind::DoubleGaussian { a, d } => {
                Self::bracket(*a, *d, x) * Self::bracket(*a, *d, y) / (self.axis_scale * self.axis_scale)
            }
            FilterKind::CustomSampled(mask) => mask.at(x, y) / (self.axis_scale * self.axis_scale),
        }
    }

    /// Field transmission at `(x, y)`.
    pub fn amplitude(&self, x: f64, y: f64) -> f64 {
        self.response.amplitude(self.transmission(x, y))
    }

    /// Per-axis transmission factors `(Fx(u), Fy(u))` with `F = Fx·Fy`.
    pub fn axis_transmission(&self, u: f64) -> Result<(f64, f64)> {
        match &self.kind {
            FilterKind::Blank => Ok((1.0, 1.0)),
            FilterKind::DoubleGaussian { a, d } => {
                let v = Self::bracket(*a, *d, u) / self.axis_scale;
                Ok((v, v))
            }
            FilterKind::CustomSampled(mask) => {
                let (fx, fy) = self.custom_factors.as_ref().ok_or(Error::NonSeparableFilter)?;
                let (nx, ny) = mask.values.dim();
                let pick = |f: &[f64], n: usize| mask.index(u, n).map_or(0.0, |k| f[k]);
                let s = self.axis_scale * self.axis_scale;
                Ok((pick(fx, nx) / s.sqrt(), pick(fy, ny) / s.sqrt()))
            }
        }
    }

    /// Per-axis field transmission factors.
    pub fn axis_amplitude(&self, u: f64) -> Result<(f64, f64)> {
        let (fx, fy) = self.axis_transmission(u)?;
        Ok((self.response.amplitude(fx), self.response.amplitude(fy)))
    }
}

/// Evaluate the addressed filter transmission at `(x, y)`.
pub fn filter_eval(spec: &FilterSpec, x: f64, y: f64) -> f64 {
    spec.transmission(x, y)
}

/// Samples across the 1/e² intensity diameter of the pump below which the
/// grid counts as unresolved.
pub const MIN_SAMPLES_ACROSS_WAIST: f64 = 8.0;

/// Sampled `v(q)` on the dual axis and `W(x)` on `axis`, both peak one.
pub fn pump_profiles(params: &PhysicalParams, axis: Axis) -> Result<(Field1D<f64>, Field1D<f64>)> {
    let pump = PumpModel::new(params);
    let across = 2.0 * params.sigma / axis.pitch();
    if across < MIN_SAMPLES_ACROSS_WAIST {
        return Err(Error::GridTooCoarse(format!(
            "{across:.1} samples across the pump waist diameter"
        )));
    }
    let v = Field1D::from_fn(axis.dual(), Plane::FarField, |q| pump.angular_spectrum(q * q));
    let w = Field1D::from_fn(axis, Plane::NearField, |x| pump.near_field(x * x));
    Ok((v, w))
}

/// Default limit on the fraction of `|g|²` in the outer 10% of the grid.
pub const DEFAULT_ALIAS_TOLERANCE: f64 = 1e-3;

/// Phase-matching profiles sampled for an engine axis.
///
/// `G` is needed at `(x₁ - x₂)/2`, i.e. at half the pitch of the engine axis,
/// so both profiles live on the refined grid: `g` on `2n` momentum samples of
/// pitch `2π/(n dx)` and `G` on `2n` position samples of pitch `dx/2`.
#[derive(Debug, Clone)]
pub struct PhaseMatchingProfiles {
    pub g: Field1D<f64>,
    pub big_g: Field1D<f64>,
}

fn outer_energy_fraction(values: &[f64], coords: &[f64], limit: f64) -> f64 {
    let mut outer = 0.0;
    let mut total = 0.0;
    for (v, q) in values.iter().zip(coords) {
        let e = v * v;
        total += e;
        if q.abs() > limit {
            outer += e;
        }
    }
    if total > 0.0 { outer / total } else { 0.0 }
}

pub fn phase_matching_profiles(
    model: &PhaseMatchingModel,
    axis: Axis,
    alias_tolerance: f64,
) -> Result<PhaseMatchingProfiles> {
    let g_axis = axis.refined();
    let q_axis = g_axis.dual();
    let g = Field1D::from_fn(q_axis, Plane::FarField, |q| model.amplitude(q * q));
    let qs = q_axis.coords();
    let fraction = outer_energy_fraction(g.values.as_slice().unwrap(), &qs, 0.9 * q_axis.half_extent());
    if fraction > alias_tolerance {
        return Err(Error::Aliasing { fraction, limit: alias_tolerance });
    }
    let mut values: Array1<Complex64> = g.values.mapv(|v| Complex64::new(v, 0.0));
    let mut planner = rustfft::FftPlanner::new();
    transform_along(&mut values, 0, q_axis.pitch(), Direction::ToPosition, &mut planner)?;
    let peak = values[g_axis.center()].re;
    let big_g = Field1D {
        values: values.mapv(|v| v.re / peak),
        axis: g_axis,
        plane: Plane::NearField,
    };
    let g_peak = g.values[q_axis.center()];
    let g = Field1D { values: g.values / g_peak, ..g };
    Ok(PhaseMatchingProfiles { g, big_g })
}

/// Two-dimensional version of [`phase_matching_profiles`] for the exact,
/// non-separable phase matching.
pub fn phase_matching_profiles_2d(
    model: &PhaseMatchingModel,
    axis: Axis,
    alias_tolerance: f64,
) -> Result<(Field2D<f64>, Field2D<f64>)> {
    let g_axis = axis.refined();
    let q_axis = g_axis.dual();
    let g = Field2D::from_fn(q_axis, q_axis, Plane::FarField, |qx, qy| model.amplitude(qx * qx + qy * qy));
    let limit = 0.9 * q_axis.half_extent();
    let qs = q_axis.coords();
    let mut outer = 0.0;
    let mut total = 0.0;
    for ((i, j), v) in g.values.indexed_iter() {
        let e = v * v;
        total += e;
        if qs[i].abs() > limit || qs[j].abs() > limit {
            outer += e;
        }
    }
    let fraction = outer / total;
    if fraction > alias_tolerance {
        return Err(Error::Aliasing { fraction, limit: alias_tolerance });
    }
    let mut values = g.values.mapv(|v| Complex64::new(v, 0.0));
    let mut planner = rustfft::FftPlanner::new();
    transform_along(&mut values, 0, q_axis.pitch(), Direction::ToPosition, &mut planner)?;
    transform_along(&mut values, 1, q_axis.pitch(), Direction::ToPosition, &mut planner)?;
    let c = g_axis.center();
    let peak = values[[c, c]].re;
    let big_g = Field2D {
        values: values.mapv(|v| v.re / peak),
        x: g_axis,
        y: g_axis,
        plane: Plane::NearField,
    };
    Ok((g, big_g))
}
