//! Two-photon amplitudes, their single-photon marginals, success probability
//! and the singular-value Schmidt number.
//!
//! The fast path works one transverse axis at a time:
//! `psi(x1, x2) = W((x1+x2)/2) t(x1) t(x2) G((x1-x2)/2)` where `t` is the
//! field transmission of the filter. In momentum space this is
//! `v(q1+q2) g(q1-q2)` before filtering. The 4D path keeps both axes and is
//! only feasible on small grids.

use std::sync::{Mutex, MutexGuard, OnceLock};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Array4, Axis as NdAxis};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::fieldgrid::{transform_along, Axis, Direction, Field1D, Field2D, Plane};
use crate::physmodel::{
    phase_matching_profiles, phase_matching_profiles_2d, pump_profiles, FilterSpec, PhaseMatchingKind,
    PhaseMatchingModel, PhysicalParams, PumpModel, DEFAULT_ALIAS_TOLERANCE,
};

/// Two-dimensional single-photon intensity on a plane.
pub type MarginalImage = Field2D<f64>;

/// Relative tolerance on the photon-1 vs photon-2 marginal comparison.
pub const MARGINAL_SYMMETRY_TOL: f64 = 1e-9;

const OPAQUE_NORM: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceModel {
    pub params: PhysicalParams,
    pub pump: PumpModel,
    pub pm: PhaseMatchingModel,
    pub alias_tolerance: f64,
}

impl SourceModel {
    pub fn new(params: PhysicalParams, kind: PhaseMatchingKind) -> Self {
        Self {
            params,
            pump: PumpModel::new(&params),
            pm: PhaseMatchingModel::new(kind, &params),
            alias_tolerance: DEFAULT_ALIAS_TOLERANCE,
        }
    }

    /// Samples `W` and `G` for joint amplitudes on `axis`.
    pub fn grid(&self, axis: Axis) -> Result<SourceGrid> {
        pump_profiles(&self.params, axis)?;
        let profiles = phase_matching_profiles(&self.pm, axis, self.alias_tolerance)?;
        Ok(SourceGrid {
            axis,
            w_sum: self.pump_on_sum_lattice(axis),
            big_g: profiles.big_g.values.to_vec(),
            blank_norm: OnceLock::new(),
        })
    }
}

/// `W` on the `i + j` lattice and `G` on the `i - j + n` lattice of an axis.
#[derive(Debug, Clone)]
pub struct SourceGrid {
    pub axis: Axis,
    w_sum: Vec<f64>,
    big_g: Vec<f64>,
    blank_norm: OnceLock<f64>,
}

impl SourceGrid {
    /// Squared norm of the unfiltered one-axis amplitude.
    pub fn blank_norm_sq(&self) -> Result<f64> {
        if let Some(v) = self.blank_norm.get() {
            return Ok(*v);
        }
        let v = build_joint_1d(self, &FilterSpec::blank(), Transverse::X)?.raw_norm_sq;
        Ok(*self.blank_norm.get_or_init(|| v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transverse {
    X,
    Y,
}

#[derive(Debug, Clone)]
pub struct JointAmplitude1D {
    /// Normalized so that `sum |psi|^2 dx^2 = 1`.
    pub psi: Array2<Complex64>,
    pub axis: Axis,
    /// Squared norm before normalization.
    pub raw_norm_sq: f64,
}

impl JointAmplitude1D {
    fn from_raw(psi: Array2<f64>, axis: Axis) -> Result<Self> {
        let cell = axis.pitch() * axis.pitch();
        let raw_norm_sq = psi.iter().map(|v| v * v).sum::<f64>() * cell;
        if !(raw_norm_sq > OPAQUE_NORM) {
            return Err(Error::FilterOpaque(raw_norm_sq));
        }
        let scale = raw_norm_sq.sqrt();
        Ok(Self {
            psi: psi.mapv(|v| Complex64::new(v / scale, 0.0)),
            axis,
            raw_norm_sq,
        })
    }

    /// `exp(-(x1+x2)^2 / (2 s_plus^2) - (x1-x2)^2 / (2 s_minus^2))`.
    pub fn double_gaussian(axis: Axis, s_plus: f64, s_minus: f64) -> Result<Self> {
        let xs = axis.coords();
        let psi = Array2::from_shape_fn((axis.len(), axis.len()), |(i, j)| {
            let (p, m) = (xs[i] + xs[j], xs[i] - xs[j]);
            (-p * p / (2.0 * s_plus * s_plus) - m * m / (2.0 * s_minus * s_minus)).exp()
        });
        Self::from_raw(psi, axis)
    }

    /// `f(x1) f(x2)`.
    pub fn product(axis: Axis, f: impl Fn(f64) -> f64) -> Result<Self> {
        let v: Vec<f64> = axis.coords().into_iter().map(f).collect();
        let psi = Array2::from_shape_fn((axis.len(), axis.len()), |(i, j)| v[i] * v[j]);
        Self::from_raw(psi, axis)
    }

    pub fn norm_sq(&self) -> f64 {
        self.psi.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.axis.pitch() * self.axis.pitch()
    }
}

/// Field transmission of `filter` along one axis.
fn axis_mask(filter: &FilterSpec, axis: Axis, which: Transverse) -> Result<Vec<f64>> {
    axis.coords()
        .into_iter()
        .map(|u| {
            filter.axis_amplitude(u).map(|(tx, ty)| match which {
                Transverse::X => tx,
                Transverse::Y => ty,
            })
        })
        .collect()
}

pub fn build_joint_1d(grid: &SourceGrid, filter: &FilterSpec, which: Transverse) -> Result<JointAmplitude1D> {
    let n = grid.axis.len();
    let t = axis_mask(filter, grid.axis, which)?;
    let psi = Array2::from_shape_fn((n, n), |(i, j)| grid.w_sum[i + j] * t[i] * t[j] * grid.big_g[i + n - j]);
    JointAmplitude1D::from_raw(psi, grid.axis)
}

fn check_photon_symmetry(a: &Array1<f64>, b: &Array1<f64>) -> Result<()> {
    let peak = a.iter().copied().fold(0.0, f64::max);
    let dev = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if dev > MARGINAL_SYMMETRY_TOL * peak {
        return Err(Error::MarginalMismatch(dev / peak));
    }
    Ok(())
}

fn marginals_of(intensity: &Array2<f64>, cell: f64) -> Result<Array1<f64>> {
    let m1 = intensity.sum_axis(NdAxis(1)) * cell;
    let m2 = intensity.sum_axis(NdAxis(0)) * cell;
    check_photon_symmetry(&m1, &m2)?;
    Ok(m1)
}

/// `I(x1) = sum_x2 |psi|^2 dx`.
pub fn nearfield_marginal_1d(joint: &JointAmplitude1D) -> Result<Field1D<f64>> {
    let intensity = joint.psi.mapv(|v| v.norm_sqr());
    let values = marginals_of(&intensity, joint.axis.pitch())?;
    Field1D { values, axis: joint.axis, plane: Plane::NearField }.normalized()
}

/// Transform over both photon coordinates, then marginalize.
pub fn farfield_marginal_1d(joint: &JointAmplitude1D) -> Result<Field1D<f64>> {
    let mut psi = joint.psi.clone();
    let mut planner = FftPlanner::new();
    let dx = joint.axis.pitch();
    transform_along(&mut psi, 0, dx, Direction::ToMomentum, &mut planner)?;
    transform_along(&mut psi, 1, dx, Direction::ToMomentum, &mut planner)?;
    let q_axis = joint.axis.dual();
    let values = marginals_of(&psi.mapv(|v| v.norm_sqr()), q_axis.pitch())?;
    Field1D { values, axis: q_axis, plane: Plane::FarField }.normalized()
}

/// Probability that a pair passes the filter: filtered over unfiltered
/// squared norm, multiplied over both transverse axes.
pub fn success_probability(grid: &SourceGrid, filter: &FilterSpec) -> Result<f64> {
    let blank = grid.blank_norm_sq()?;
    let mut p = 1.0;
    for which in [Transverse::X, Transverse::Y] {
        p *= build_joint_1d(grid, filter, which)?.raw_norm_sq / blank;
    }
    Ok(p)
}

fn purity_to_schmidt(singular: impl Iterator<Item = f64>) -> f64 {
    let lambdas: Vec<f64> = singular.map(|s| s * s).collect();
    let total: f64 = lambdas.iter().sum();
    let purity: f64 = lambdas.iter().map(|l| (l / total).powi(2)).sum();
    1.0 / purity
}

/// `K = 1 / sum(lambda_i^2)` over the normalized squared singular values of
/// the amplitude matrix.
pub fn svd_schmidt_matrix(psi: &Array2<Complex64>) -> Result<f64> {
    let (r, c) = psi.dim();
    if r == 0 || c == 0 {
        return Err(Error::Empty("amplitude matrix"));
    }
    let peak = psi.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let real = psi.iter().all(|v| v.im.abs() <= 1e-14 * peak);
    let max_iter = 100 * r.max(c);
    let singular: Vec<f64> = if real {
        let m = DMatrix::from_fn(r, c, |i, j| psi[[i, j]].re);
        m.try_svd(false, false, f64::EPSILON, max_iter)
            .ok_or(Error::SvdNoConvergence)?
            .singular_values
            .iter()
            .copied()
            .collect()
    } else {
        let m = DMatrix::from_fn(r, c, |i, j| psi[[i, j]]);
        m.try_svd(false, false, f64::EPSILON, max_iter)
            .ok_or(Error::SvdNoConvergence)?
            .singular_values
            .iter()
            .copied()
            .collect()
    };
    Ok(purity_to_schmidt(singular.into_iter()))
}

pub fn svd_schmidt(joint: &JointAmplitude1D) -> Result<f64> {
    svd_schmidt_matrix(&joint.psi)
}

/// Schmidt number of the 4D amplitude across the photon bipartition,
/// `(x1, y1) | (x2, y2)`.
pub fn svd_schmidt_4d(joint: &JointAmplitude4D) -> Result<f64> {
    let n = joint.axis.len();
    let m = joint
        .psi
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n * n, n * n))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    svd_schmidt_matrix(&m)
}

/// Upper bound on the 4D oracle amplitude.
pub const ORACLE_MEMORY_LIMIT: usize = 64 << 20;

static ORACLE_GATE: Mutex<()> = Mutex::new(());

/// Exact amplitude over `(x1, y1, x2, y2)`. Holds the oracle gate while alive,
/// so at most one exists at a time.
pub struct JointAmplitude4D {
    pub psi: Array4<Complex64>,
    pub axis: Axis,
    pub raw_norm_sq: f64,
    _gate: MutexGuard<'static, ()>,
}

impl std::fmt::Debug for JointAmplitude4D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JointAmplitude4D")
            .field("axis", &self.axis)
            .field("raw_norm_sq", &self.raw_norm_sq)
            .finish_non_exhaustive()
    }
}

pub fn oracle_bytes(n: usize) -> usize {
    n.saturating_pow(4).saturating_mul(std::mem::size_of::<Complex64>())
}

pub fn build_joint_4d(source: &SourceModel, filter: &FilterSpec, axis: Axis) -> Result<JointAmplitude4D> {
    let n = axis.len();
    let needed = oracle_bytes(n);
    if needed > ORACLE_MEMORY_LIMIT {
        return Err(Error::MemoryBound { needed, limit: ORACLE_MEMORY_LIMIT });
    }
    let gate = ORACLE_GATE.lock().unwrap_or_else(|e| e.into_inner());
    pump_profiles(&source.params, axis)?;
    let (_, big_g) = phase_matching_profiles_2d(&source.pm, axis, source.alias_tolerance)?;
    let grid = source.pump_on_sum_lattice(axis);
    let tx = axis_mask(filter, axis, Transverse::X)?;
    let ty = axis_mask(filter, axis, Transverse::Y)?;
    let g = &big_g.values;
    let psi = Array4::from_shape_fn((n, n, n, n), |(a, b, c, d)| {
        let v = grid[a + c] * grid[b + d] * tx[a] * ty[b] * tx[c] * ty[d] * g[[a + n - c, b + n - d]];
        Complex64::new(v, 0.0)
    });
    let cell = axis.pitch().powi(4);
    let raw_norm_sq = psi.iter().map(|v| v.norm_sqr()).sum::<f64>() * cell;
    if !(raw_norm_sq > OPAQUE_NORM) {
        return Err(Error::FilterOpaque(raw_norm_sq));
    }
    let scale = raw_norm_sq.sqrt();
    Ok(JointAmplitude4D {
        psi: psi.mapv(|v| v / scale),
        axis,
        raw_norm_sq,
        _gate: gate,
    })
}

impl SourceModel {
    /// `W` at `(x_i + x_j)/2 = ((i + j)/2 - n/2) dx`, indexed by `i + j`.
    fn pump_on_sum_lattice(&self, axis: Axis) -> Vec<f64> {
        let n = axis.len();
        (0..2 * n - 1)
            .map(|s| {
                let x = (s as f64 / 2.0 - (n / 2) as f64) * axis.pitch();
                self.pump.near_field(x * x)
            })
            .collect()
    }
}

fn marginal_4d(intensity: Array4<f64>, axis: Axis, plane: Plane) -> Result<MarginalImage> {
    let cell = axis.pitch() * axis.pitch();
    let m1 = intensity.sum_axis(NdAxis(3)).sum_axis(NdAxis(2)) * cell;
    let m2 = intensity.sum_axis(NdAxis(1)).sum_axis(NdAxis(0)) * cell;
    let peak = m1.iter().copied().fold(0.0, f64::max);
    let dev = m1.iter().zip(m2.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if dev > MARGINAL_SYMMETRY_TOL * peak {
        return Err(Error::MarginalMismatch(dev / peak));
    }
    Field2D { values: m1, x: axis, y: axis, plane }.normalized()
}

pub fn nearfield_marginal_4d(joint: &JointAmplitude4D) -> Result<MarginalImage> {
    marginal_4d(joint.psi.mapv(|v| v.norm_sqr()), joint.axis, Plane::NearField)
}

pub fn farfield_marginal_4d(joint: &JointAmplitude4D) -> Result<MarginalImage> {
    let mut psi = joint.psi.clone();
    let mut planner = FftPlanner::new();
    for k in 0..4 {
        transform_along(&mut psi, k, joint.axis.pitch(), Direction::ToMomentum, &mut planner)?;
    }
    marginal_4d(psi.mapv(|v| v.norm_sqr()), joint.axis.dual(), Plane::FarField)
}

/// Linear interpolation of a sampled profile, zero outside its support.
fn interpolate(field: &Field1D<f64>, u: f64) -> f64 {
    let pos = u / field.axis.pitch() + field.axis.center() as f64;
    if pos < 0.0 || pos > (field.axis.len() - 1) as f64 {
        return 0.0;
    }
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    let a = field.values[i];
    let b = if i + 1 < field.axis.len() { field.values[i + 1] } else { 0.0 };
    a * (1.0 - f) + b * f
}

/// Camera-plane marginals. Both are densities normalized over the whole
/// plane; the far field extends beyond its grid, so its samples sum to less
/// than one.
#[derive(Debug, Clone)]
pub struct CameraMarginals {
    pub near: MarginalImage,
    pub far: MarginalImage,
}

impl CameraMarginals {
    /// Marginal estimator with the exact far-field normalization, so the
    /// truncated tail does not bias `(∫I)²`.
    pub fn direct_k(&self) -> Result<f64> {
        let pr_x = crate::fieldgrid::participation(&self.near)?;
        let sq: f64 = self.far.values.iter().map(|v| v * v).sum::<f64>() * self.far.cell();
        if !(sq > 0.0) {
            return Err(Error::NonPositiveIntegral);
        }
        Ok(pr_x / sq / (4.0 * std::f64::consts::PI.powi(2)))
    }
}

/// Largest pump envelope at the source-grid edge accepted by
/// [`camera_marginals`]. A truncated pump has a slowly decaying spectrum.
pub const PUMP_EDGE_LIMIT: f64 = 1e-6;

/// Image-plane marginals for camera synthesis.
///
/// The near field is the outer product of the exact one-axis marginals,
/// resampled onto `near_axis`. The far field uses the two-dimensional
/// phase matching with the wide-pump form
/// `I(q) = sum_p P(p) g^2(2q - p)`, where `P = |FT[W t^2]|^2` is the spectrum
/// of the filtered pump envelope, sampled on `far_axis`.
pub fn camera_marginals(
    source: &SourceModel,
    grid: &SourceGrid,
    filter: &FilterSpec,
    near_axis: Axis,
    far_axis: Axis,
) -> Result<CameraMarginals> {
    let h = grid.axis.half_extent();
    let edge = source.pump.near_field(h * h);
    if edge > PUMP_EDGE_LIMIT {
        return Err(Error::GridTooNarrow { edge, limit: PUMP_EDGE_LIMIT });
    }
    let mx = nearfield_marginal_1d(&build_joint_1d(grid, filter, Transverse::X)?)?;
    let my = if filter.is_axis_symmetric() {
        mx.clone()
    } else {
        nearfield_marginal_1d(&build_joint_1d(grid, filter, Transverse::Y)?)?
    };
    let rx = Field1D::from_fn(near_axis, Plane::NearField, |u| interpolate(&mx, u));
    let ry = Field1D::from_fn(near_axis, Plane::NearField, |u| interpolate(&my, u));
    let near = Field2D::outer(&rx, &ry)?.normalized()?;

    let dq = far_axis.pitch();
    let n = far_axis.len();
    let xs = grid.axis.coords();
    // P(m dq) on its support, peak one
    let spectrum = |which: Transverse| -> Result<Vec<(isize, f64)>> {
        let t = axis_mask(filter, grid.axis, which)?;
        let a: Vec<f64> = xs.iter().zip(&t).map(|(x, t)| source.pump.near_field(x * x) * t * t).collect();
        let p: Vec<f64> = (0..=2 * n)
            .map(|k| {
                let q = (k as f64 - n as f64) * dq;
                let (mut re, mut im) = (0.0, 0.0);
                for (x, v) in xs.iter().zip(&a) {
                    let (s, c) = (q * x).sin_cos();
                    re += v * c;
                    im -= v * s;
                }
                re * re + im * im
            })
            .collect();
        let peak = p.iter().copied().fold(0.0, f64::max);
        if !(peak > 0.0) {
            return Err(Error::FilterOpaque(peak));
        }
        Ok(p.iter()
            .enumerate()
            .filter(|(_, v)| **v > 1e-12 * peak)
            .map(|(k, v)| (k as isize - n as isize, v / peak))
            .collect())
    };
    let sx = spectrum(Transverse::X)?;
    let sy = if filter.is_axis_symmetric() { sx.clone() } else { spectrum(Transverse::Y)? };
    let reach = |s: &[(isize, f64)]| s.iter().map(|(m, _)| m.abs()).max().unwrap_or(0);
    let half = (n / 2) as isize;
    // table of g^2 at lattice offsets |u| <= span
    let span = n as isize + reach(&sx).max(reach(&sy));
    let width = (2 * span + 1) as usize;
    let table = Array2::from_shape_fn((width, width), |(i, j)| {
        let (ux, uy) = (i as isize - span, j as isize - span);
        source.pm.amplitude(((ux * ux + uy * uy) as f64) * dq * dq).powi(2)
    });
    // rows: C[ux, iy] = sum_my Py[my] g^2(ux, 2 iy - my)
    let mut rows = Array2::<f64>::zeros((width, n));
    for ux in 0..width {
        for iy in 0..n {
            let qy = 2 * (iy as isize - half) + span;
            rows[[ux, iy]] = sy.iter().map(|&(m, w)| w * table[[ux, (qy - m) as usize]]).sum();
        }
    }
    let mut img = Array2::<f64>::zeros((n, n));
    for ix in 0..n {
        let qx = 2 * (ix as isize - half) + span;
        for iy in 0..n {
            img[[ix, iy]] = sx.iter().map(|&(m, w)| w * rows[[(qx - m) as usize, iy]]).sum();
        }
    }
    // ∫ g^2(2q) d²q in closed form
    let g_sq_mass = match source.pm.kind {
        PhaseMatchingKind::ExactSinc => std::f64::consts::PI.powi(2) / (2.0 * source.pm.b) / 4.0,
        PhaseMatchingKind::GaussianApprox => std::f64::consts::PI / (2.0 * source.pm.alpha * source.pm.b) / 4.0,
    };
    let weight: f64 = sx.iter().map(|(_, w)| w).sum::<f64>() * sy.iter().map(|(_, w)| w).sum::<f64>();
    let total = weight * g_sq_mass;
    let far = Field2D {
        values: img / total,
        x: far_axis,
        y: far_axis,
        plane: Plane::FarField,
    };
    Ok(CameraMarginals { near, far })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldgrid::participation;
    use crate::physmodel::{closed_form_schmidt, Normalization, SampledMask, SlmResponse};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn k_1d(joint: &JointAmplitude1D) -> f64 {
        let nf = nearfield_marginal_1d(joint).unwrap();
        let ff = farfield_marginal_1d(joint).unwrap();
        participation(&nf).unwrap() * participation(&ff).unwrap() / (2.0 * PI)
    }

    fn nominal_grid(kind: PhaseMatchingKind, n: usize) -> (SourceModel, SourceGrid) {
        let source = SourceModel::new(PhysicalParams::nominal(), kind);
        let axis = Axis::with_half_extent(n, 4.0 * 600.0).unwrap();
        let grid = source.grid(axis).unwrap();
        (source, grid)
    }

    #[test]
    fn blank_joint_matches_direct_evaluation() {
        let (source, grid) = nominal_grid(PhaseMatchingKind::GaussianApprox, 1024);
        let joint = build_joint_1d(&grid, &FilterSpec::blank(), Transverse::X).unwrap();
        let ab = source.pm.alpha * source.pm.b;
        let xs = grid.axis.coords();
        let direct = Array2::from_shape_fn((1024, 1024), |(i, j)| {
            let (s, d) = ((xs[i] + xs[j]) / 2.0, (xs[i] - xs[j]) / 2.0);
            source.pump.near_field(s * s) * (-d * d / (4.0 * ab)).exp()
        });
        let norm = (direct.iter().map(|v| v * v).sum::<f64>() * grid.axis.pitch().powi(2)).sqrt();
        let dev = joint
            .psi
            .iter()
            .zip(direct.iter())
            .map(|(a, b)| (a.re - b / norm).abs())
            .fold(0.0, f64::max);
        let peak = joint.psi.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(dev < 1e-9 * peak, "{dev}");
        assert_relative_eq!(joint.norm_sq(), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn exchange_symmetry_with_filter() {
        let (_, grid) = nominal_grid(PhaseMatchingKind::ExactSinc, 512);
        let f = FilterSpec::double_gaussian_px(7.0, 12.0).unwrap();
        let joint = build_joint_1d(&grid, &f, Transverse::X).unwrap();
        let n = grid.axis.len();
        for i in (0..n).step_by(7) {
            for j in (0..n).step_by(5) {
                assert!((joint.psi[[i, j]] - joint.psi[[j, i]]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn correlation_length_is_small_compared_to_marginal() {
        let (_, grid) = nominal_grid(PhaseMatchingKind::ExactSinc, 1024);
        let joint = build_joint_1d(&grid, &FilterSpec::blank(), Transverse::X).unwrap();
        // full width at half maximum; the sinc kernel has heavy tails that
        // make second moments a poor width measure
        let dx = grid.axis.pitch();
        let fwhm = |w: &dyn Fn(usize) -> f64| {
            let peak = (0..grid.axis.len()).map(w).fold(0.0, f64::max);
            (0..grid.axis.len()).filter(|&k| w(k) >= 0.5 * peak).count() as f64 * dx
        };
        let c = grid.axis.center();
        let conditional = fwhm(&|k| joint.psi[[c, k]].norm_sqr());
        let nf = nearfield_marginal_1d(&joint).unwrap();
        let marginal = fwhm(&|k| nf.values[k]);
        assert!(conditional / marginal < 0.05, "{conditional} / {marginal}");
    }

    #[test]
    fn blank_nearfield_is_pump_squared() {
        let (_, grid) = nominal_grid(PhaseMatchingKind::ExactSinc, 1024);
        let joint = build_joint_1d(&grid, &FilterSpec::blank(), Transverse::X).unwrap();
        let nf = nearfield_marginal_1d(&joint).unwrap();
        let xs = grid.axis.coords();
        let s = 600.0;
        let norm = (PI / 2.0).sqrt() * s;
        let peak = 1.0 / norm;
        for (x, v) in xs.iter().zip(nf.values.iter()) {
            let e = (-2.0 * x * x / (s * s)).exp() / norm;
            assert!((v - e).abs() < 0.01 * peak, "x={x}: {v} vs {e}");
        }
        let ff = farfield_marginal_1d(&joint).unwrap();
        let total_q: f64 = ff.values.sum() * ff.cell();
        assert_relative_eq!(total_q, 1.0, max_relative = 1e-9);
        assert_relative_eq!(nf.values.sum() * nf.cell(), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn success_probability_contracts() {
        let (_, grid) = nominal_grid(PhaseMatchingKind::GaussianApprox, 512);
        assert_relative_eq!(success_probability(&grid, &FilterSpec::blank()).unwrap(), 1.0, max_relative = 1e-12);

        let base = Array2::from_shape_fn((200, 200), |(i, j)| {
            let (x, y) = (i as f64 - 100.0, j as f64 - 100.0);
            (-(x * x + y * y) / 400.0).exp()
        });
        let c: f64 = 0.6;
        let mask = |scale: f64, resp| {
            FilterSpec::custom(SampledMask::new(32.0, base.mapv(|v| v * scale)).unwrap())
                .with_normalization(Normalization::Raw)
                .with_response(resp)
        };
        let p1 = success_probability(&grid, &mask(1.0, SlmResponse::Amplitude)).unwrap();
        let pc = success_probability(&grid, &mask(c, SlmResponse::Amplitude)).unwrap();
        assert_relative_eq!(pc / p1, c.powi(4), max_relative = 1e-12);
        // addressed intensity c^2 F is field transmission c sqrt(F)
        let q1 = success_probability(&grid, &mask(1.0, SlmResponse::Intensity)).unwrap();
        let qc = success_probability(&grid, &mask(c * c, SlmResponse::Intensity)).unwrap();
        assert_relative_eq!(qc / q1, c.powi(4), max_relative = 1e-12);

        let j1 = build_joint_1d(&grid, &mask(1.0, SlmResponse::Amplitude), Transverse::X).unwrap();
        let jc = build_joint_1d(&grid, &mask(c, SlmResponse::Amplitude), Transverse::X).unwrap();
        let a = nearfield_marginal_1d(&j1).unwrap();
        let b = nearfield_marginal_1d(&jc).unwrap();
        for (u, v) in a.values.iter().zip(b.values.iter()) {
            assert_relative_eq!(u, v, max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn opaque_filter_is_an_error() {
        let (_, grid) = nominal_grid(PhaseMatchingKind::GaussianApprox, 512);
        let f = FilterSpec::custom(SampledMask::new(32.0, Array2::zeros((4, 4))).unwrap());
        assert!(matches!(build_joint_1d(&grid, &f, Transverse::X), Err(Error::FilterOpaque(_))));
    }

    #[test]
    fn svd_of_product_state_is_one() {
        let axis = Axis::with_half_extent(128, 10.0).unwrap();
        let joint = JointAmplitude1D::product(axis, |x| (-x * x / 4.0).exp() * (1.0 + 0.3 * x)).unwrap();
        assert!((svd_schmidt(&joint).unwrap() - 1.0).abs() < 1e-9);
        let eq = JointAmplitude1D::double_gaussian(axis, 1.5, 1.5).unwrap();
        assert!((svd_schmidt(&eq).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn svd_matches_analytic_double_gaussian() {
        // K = (r + 1/r) / 2 for width ratio r
        let axis = Axis::with_half_extent(256, 40.0).unwrap();
        for r in [2.0, 5.0, 10.0] {
            let joint = JointAmplitude1D::double_gaussian(axis, 6.0, 6.0 / r).unwrap();
            let k = svd_schmidt(&joint).unwrap();
            let analytic = (r + 1.0 / r) / 2.0;
            assert_relative_eq!(k, analytic, max_relative = 1e-3);
            assert_relative_eq!(k_1d(&joint), analytic, max_relative = 1e-3);
        }
    }

    #[test]
    fn svd_ignores_phase_and_scale() {
        let axis = Axis::with_half_extent(64, 20.0).unwrap();
        let joint = JointAmplitude1D::double_gaussian(axis, 5.0, 1.0).unwrap();
        let k = svd_schmidt(&joint).unwrap();
        let rotated = joint.psi.mapv(|v| v * Complex64::from_polar(3.7, 0.9));
        assert_relative_eq!(svd_schmidt_matrix(&rotated).unwrap(), k, max_relative = 1e-9);
    }

    #[test]
    fn gaussian_oracle_factorizes() {
        let params = PhysicalParams::new(16.0, 4500.0, 0.355).unwrap();
        let source = SourceModel::new(params, PhaseMatchingKind::GaussianApprox);
        let axis = Axis::with_half_extent(32, 2.5 * 16.0).unwrap();
        let grid = source.grid(axis).unwrap();
        let j1 = build_joint_1d(&grid, &FilterSpec::blank(), Transverse::X).unwrap();
        let j4 = build_joint_4d(&source, &FilterSpec::blank(), axis).unwrap();
        let n = 32;
        let mut dev: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let e = j1.psi[[a, c]] * j1.psi[[b, d]];
                        dev = dev.max((j4.psi[[a, b, c, d]] - e).norm());
                    }
                }
            }
        }
        assert!(dev < 1e-9, "{dev}");
        let k1 = svd_schmidt(&j1).unwrap();
        assert_relative_eq!(svd_schmidt_4d(&j4).unwrap(), k1 * k1, max_relative = 1e-9);
        // exchange (x1,y1) <-> (x2,y2)
        for a in (0..n).step_by(3) {
            for b in (0..n).step_by(5) {
                for c in (0..n).step_by(7) {
                    for d in 0..n {
                        assert!((j4.psi[[a, b, c, d]] - j4.psi[[c, d, a, b]]).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn oracle_rejects_large_grids_before_allocating() {
        let source = SourceModel::new(PhysicalParams::nominal(), PhaseMatchingKind::ExactSinc);
        let axis = Axis::with_half_extent(64, 2400.0).unwrap();
        assert!(matches!(
            build_joint_4d(&source, &FilterSpec::blank(), axis),
            Err(Error::MemoryBound { .. })
        ));
    }

    #[test]
    fn oracle_far_field_widths_agree_between_models() {
        let params = PhysicalParams::new(20.0, 4500.0, 0.355).unwrap();
        let axis = Axis::with_half_extent(32, 2.5 * 20.0).unwrap();
        let width = |kind| {
            let source = SourceModel::new(params, kind);
            let j = build_joint_4d(&source, &FilterSpec::blank(), axis).unwrap();
            let ff = farfield_marginal_4d(&j).unwrap();
            let qs = ff.x.coords();
            let (mut m0, mut m2) = (0.0, 0.0);
            for ((i, j), v) in ff.values.indexed_iter() {
                m0 += v;
                m2 += v * (qs[i] * qs[i] + qs[j] * qs[j]);
            }
            (m2 / m0).sqrt()
        };
        let ws = width(PhaseMatchingKind::ExactSinc);
        let wg = width(PhaseMatchingKind::GaussianApprox);
        assert!((ws / wg - 1.0).abs() < 0.2, "{ws} vs {wg}");
    }

    #[test]
    fn camera_far_field_has_sinc_rings() {
        let (source, grid) = nominal_grid(PhaseMatchingKind::ExactSinc, 1024);
        let near_axis = Axis::new(512, 16.0).unwrap();
        let dq = 2.0 * PI * 16.0 / (150_000.0 * 0.71);
        let far_axis = Axis::new(1024, dq).unwrap();
        let cm = camera_marginals(&source, &grid, &FilterSpec::blank(), near_axis, far_axis).unwrap();
        let mass: f64 = cm.far.values.sum() * cm.far.cell();
        // sinc^2 tail beyond the square: about 1/(4π b R²) of the mass
        assert!(mass < 1.0 && mass > 0.99, "{mass}");
        let profile = crate::fieldgrid::radial_profile(&cm.far).unwrap();
        let zero = profile.first_minimum().unwrap();
        let expected = (PI / (4.0 * source.pm.b)).sqrt();
        assert!((zero - expected).abs() <= 1.5 * dq, "{zero} vs {expected}");
        let k = cm.direct_k().unwrap();
        let closed = closed_form_schmidt(&source.params);
        assert!((k / closed - 1.0).abs() < 0.01, "{k}");
    }

    #[test]
    fn camera_synthesis_rejects_truncated_pump() {
        let source = SourceModel::new(PhysicalParams::nominal(), PhaseMatchingKind::ExactSinc);
        let grid = source.grid(Axis::with_half_extent(512, 2.0 * 600.0).unwrap()).unwrap();
        let axis = Axis::new(64, 16.0).unwrap();
        let err = camera_marginals(&source, &grid, &FilterSpec::blank(), axis, axis).unwrap_err();
        assert!(matches!(err, Error::GridTooNarrow { .. }), "{err}");
    }
}
