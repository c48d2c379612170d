//! Schmidt number from single-photon marginals and distillation metrics.

use std::f64::consts::PI;

use crate::biphoton::{
    build_joint_1d, farfield_marginal_1d, nearfield_marginal_1d, svd_schmidt, MarginalImage, SourceGrid, Transverse,
};
use crate::error::{Error, Result};
use crate::fieldgrid::{participation, Field1D, Plane};
use crate::fieldgrid::{Axis, Field2D};
use crate::physmodel::{sinc, FilterSpec, PhysicalParams};

/// Allowed undershoot below 1 from quadrature.
pub const K_FLOOR_TOL: f64 = 1e-6;

fn check_plane(expected: Plane, found: Plane) -> Result<()> {
    if expected != found {
        return Err(Error::PlaneMismatch { expected: expected.name(), found: found.name() });
    }
    Ok(())
}

/// `K = (1/4π²) · PR(I(x)) · PR(I(q))` with `PR = (∫I)² / ∫I²`.
pub fn k_from_marginals(nf: &MarginalImage, ff: &MarginalImage) -> Result<f64> {
    check_plane(Plane::NearField, nf.plane)?;
    check_plane(Plane::FarField, ff.plane)?;
    Ok(participation(nf)? * participation(ff)? / (4.0 * PI * PI))
}

/// One-axis form of [`k_from_marginals`], with `1/2π`.
pub fn k_from_marginals_1d(nf: &Field1D<f64>, ff: &Field1D<f64>) -> Result<f64> {
    check_plane(Plane::NearField, nf.plane)?;
    check_plane(Plane::FarField, ff.plane)?;
    Ok(participation(nf)? * participation(ff)? / (2.0 * PI))
}

/// `Kx · Ky` for independent transverse axes.
pub fn k_compose_axes(kx: f64, ky: f64) -> Result<f64> {
    for k in [kx, ky] {
        if !(k >= 1.0 - K_FLOOR_TOL) {
            return Err(Error::SchmidtBelowOne(k));
        }
    }
    Ok(kx * ky)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchmidtReport {
    pub k_estimate: f64,
    pub k_svd: Option<f64>,
    pub k0: f64,
    pub ratio: f64,
    pub p_succ: f64,
    pub dk: Option<f64>,
}

impl SchmidtReport {
    pub fn new(k_estimate: f64, k_svd: Option<f64>, k0: f64, p_succ: f64) -> Result<Self> {
        if !(k0 > 0.0) {
            return Err(Error::InvalidParameter(format!("reference Schmidt number {k0}")));
        }
        if !(k_estimate >= 1.0 - K_FLOOR_TOL) {
            return Err(Error::SchmidtBelowOne(k_estimate));
        }
        Ok(Self {
            k_estimate,
            k_svd,
            k0,
            ratio: k_estimate / k0,
            p_succ,
            dk: None,
        })
    }
}

pub fn distillation_report(
    filtered: (&MarginalImage, &MarginalImage),
    blank: (&MarginalImage, &MarginalImage),
    p_succ: f64,
) -> Result<SchmidtReport> {
    let k0 = k_from_marginals(blank.0, blank.1)?;
    let k = k_from_marginals(filtered.0, filtered.1)?;
    SchmidtReport::new(k, None, k0, p_succ)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisEstimate {
    pub k: f64,
    pub k_svd: Option<f64>,
    pub raw_norm_sq: f64,
}

pub fn axis_estimate(grid: &SourceGrid, filter: &FilterSpec, which: Transverse, svd: bool) -> Result<AxisEstimate> {
    let joint = build_joint_1d(grid, filter, which)?;
    let nf = nearfield_marginal_1d(&joint)?;
    let ff = farfield_marginal_1d(&joint)?;
    Ok(AxisEstimate {
        k: k_from_marginals_1d(&nf, &ff)?,
        k_svd: if svd { Some(svd_schmidt(&joint)?) } else { None },
        raw_norm_sq: joint.raw_norm_sq,
    })
}

/// Separable estimate: both axes evaluated independently and composed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastPathEstimate {
    pub x: AxisEstimate,
    pub y: AxisEstimate,
    pub k: f64,
    pub k_svd: Option<f64>,
    pub p_succ: f64,
}

pub fn fast_path(grid: &SourceGrid, filter: &FilterSpec, svd: bool) -> Result<FastPathEstimate> {
    let x = axis_estimate(grid, filter, Transverse::X, svd)?;
    let y = if filter.is_axis_symmetric() {
        x
    } else {
        axis_estimate(grid, filter, Transverse::Y, svd)?
    };
    let blank = grid.blank_norm_sq()?;
    let k_svd = match (x.k_svd, y.k_svd) {
        (Some(a), Some(b)) => Some(k_compose_axes(a, b)?),
        _ => None,
    };
    Ok(FastPathEstimate {
        x,
        y,
        k: k_compose_axes(x.k, y.k)?,
        k_svd,
        p_succ: x.raw_norm_sq * y.raw_norm_sq / (blank * blank),
    })
}

/// Fast-path report against the blank filter on the same grid.
pub fn fast_path_report(grid: &SourceGrid, filter: &FilterSpec, k0: f64, svd: bool) -> Result<SchmidtReport> {
    let est = fast_path(grid, filter, svd)?;
    SchmidtReport::new(est.k, est.k_svd, k0, est.p_succ)
}

/// Near-field half-extent of [`reference_k`] grids, in pump waists.
pub const REFERENCE_EXTENT_WAISTS: f64 = 3.8;

/// Blank-filter Schmidt number from the radial marginals
/// `I(x) ∝ exp(-2r²/σ²)` and `I(q) ∝ sinc²(L r²/k3)` on an `n × n` grid
/// and its dual.
pub fn reference_k(params: &PhysicalParams, n: usize) -> Result<f64> {
    let s = params.sigma();
    let c = params.length() / params.k3();
    let x = Axis::with_half_extent(n, REFERENCE_EXTENT_WAISTS * s)?;
    let q = x.dual();
    let nf = Field2D::from_fn(x, x, Plane::NearField, |a, b| (-2.0 * (a * a + b * b) / (s * s)).exp());
    let ff = Field2D::from_fn(q, q, Plane::FarField, |a, b| sinc(c * (a * a + b * b)).powi(2));
    k_from_marginals(&nf, &ff)
}
