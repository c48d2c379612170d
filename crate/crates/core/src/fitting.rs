//! Damped least-squares surface fits of camera images and the Schmidt
//! number of the fitted surfaces.
//!
//! Near field: `sum_i α_i exp(-(x-β_i)²/δ_i² - (y-γ_i)²/ε_i²)`, four terms.
//! Far field: `a + b sinc²(c ((x-x0)² + (y-y0)²))`.
//! Both are fitted in pixel coordinates.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::physmodel::sinc;

pub const NEAR_COMPONENTS: usize = 4;
pub const NEAR_PARAMS: usize = 5 * NEAR_COMPONENTS;
pub const FAR_PARAMS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative cost change that counts as converged.
    pub tolerance: f64,
    pub initial_damping: f64,
    /// Central differences instead of the analytic Jacobian.
    pub numeric_jacobian: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-8,
            initial_damping: 1e-3,
            numeric_jacobian: false,
        }
    }
}

/// Image samples with weights. Pixel `[i, j]` sits at
/// `(i - origin.0, j - origin.1)`.
#[derive(Debug, Clone)]
pub struct FitData {
    pub values: Array2<f64>,
    pub weights: Array2<f64>,
    pub origin: (f64, f64),
}

impl FitData {
    /// Whole image, coordinates relative to pixel `(n/2, n/2)`.
    pub fn full(values: Array2<f64>, weights: Option<Array2<f64>>) -> Result<Self> {
        let (nx, ny) = values.dim();
        let weights = weights.unwrap_or_else(|| Array2::ones((nx, ny)));
        if weights.dim() != values.dim() {
            return Err(Error::ShapeMismatch(format!("weights {:?} vs image {:?}", weights.dim(), values.dim())));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::Empty("image"));
        }
        if values.iter().chain(weights.iter()).any(|v| !v.is_finite()) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidSamples);
        }
        Ok(Self { values, weights, origin: ((nx / 2) as f64, (ny / 2) as f64) })
    }

    /// Square window of half-size `half` around pixel `center`, in the
    /// coordinates of the full image.
    pub fn crop(&self, center: (usize, usize), half: usize) -> Self {
        let (nx, ny) = self.values.dim();
        let lo = |c: usize| c.saturating_sub(half);
        let (x0, x1) = (lo(center.0), (center.0 + half + 1).min(nx));
        let (y0, y1) = (lo(center.1), (center.1 + half + 1).min(ny));
        let s = ndarray::s![x0..x1, y0..y1];
        Self {
            values: self.values.slice(s).to_owned(),
            weights: self.weights.slice(s).to_owned(),
            origin: (self.origin.0 - x0 as f64, self.origin.1 - y0 as f64),
        }
    }

    fn points(&self) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        self.values.indexed_iter().filter_map(move |((i, j), &v)| {
            let w = self.weights[[i, j]];
            (w > 0.0).then(|| (i as f64 - self.origin.0, j as f64 - self.origin.1, v, w))
        })
    }
}

/// Value of a model at `(x, y)`; fills `grad` when given.
pub trait SurfaceModel {
    const N: usize;
    fn eval(p: &[f64], x: f64, y: f64, grad: Option<&mut [f64]>) -> f64;
}

pub struct NearFieldModel;
pub struct FarFieldModel;

impl SurfaceModel for NearFieldModel {
    const N: usize = NEAR_PARAMS;
    fn eval(p: &[f64], x: f64, y: f64, mut grad: Option<&mut [f64]>) -> f64 {
        let mut sum = 0.0;
        for (k, c) in p.chunks_exact(5).enumerate() {
            let (alpha, beta, gamma, delta, eps) = (c[0], c[1], c[2], c[3], c[4]);
            let (dx, dy) = (x - beta, y - gamma);
            let (d2, e2) = (delta * delta, eps * eps);
            let e = (-dx * dx / d2 - dy * dy / e2).exp();
            let v = alpha * e;
            sum += v;
            if let Some(g) = grad.as_deref_mut() {
                let g = &mut g[5 * k..5 * k + 5];
                g[0] = e;
                g[1] = v * 2.0 * dx / d2;
                g[2] = v * 2.0 * dy / e2;
                g[3] = v * 2.0 * dx * dx / (d2 * delta);
                g[4] = v * 2.0 * dy * dy / (e2 * eps);
            }
        }
        sum
    }
}

/// `(sinc(u), d sinc/du)`.
fn sinc_and_slope(u: f64) -> (f64, f64) {
    if u.abs() < 1e-4 {
        (1.0 - u * u / 6.0, -u / 3.0)
    } else {
        let s = u.sin() / u;
        (s, (u.cos() - s) / u)
    }
}

impl SurfaceModel for FarFieldModel {
    const N: usize = FAR_PARAMS;
    fn eval(p: &[f64], x: f64, y: f64, grad: Option<&mut [f64]>) -> f64 {
        let (a, b, c, x0, y0) = (p[0], p[1], p[2], p[3], p[4]);
        let (dx, dy) = (x - x0, y - y0);
        let rho = dx * dx + dy * dy;
        let (s, ds) = sinc_and_slope(c * rho);
        if let Some(g) = grad {
            let common = b * 2.0 * s * ds;
            g[0] = 1.0;
            g[1] = s * s;
            g[2] = common * rho;
            g[3] = -common * c * 2.0 * dx;
            g[4] = -common * c * 2.0 * dy;
        }
        a + b * s * s
    }
}

/// Five-point central differences.
pub fn numeric_gradient<M: SurfaceModel>(p: &[f64], x: f64, y: f64, g: &mut [f64]) {
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = 1e-3 * p[k].abs().max(1e-2);
        let mut at = |t: f64| {
            q[k] = p[k] + t;
            M::eval(&q, x, y, None)
        };
        g[k] = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
        q[k] = p[k];
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub cost: f64,
    pub residual_rms: f64,
    pub iterations: usize,
    /// Cost after each accepted step.
    pub cost_history: Vec<f64>,
}

fn cost_of<M: SurfaceModel>(data: &FitData, p: &[f64]) -> f64 {
    data.points()
        .map(|(x, y, v, w)| {
            let r = v - M::eval(p, x, y, None);
            w * r * r
        })
        .sum()
}

/// Gauss-Newton matrix `JᵀWJ` and gradient `JᵀWr`.
fn normal_equations<M: SurfaceModel>(data: &FitData, p: &[f64], numeric: bool) -> (DMatrix<f64>, DVector<f64>) {
    let n = M::N;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    let mut g = vec![0.0; n];
    for (x, y, v, w) in data.points() {
        let f = if numeric {
            numeric_gradient::<M>(p, x, y, &mut g);
            M::eval(p, x, y, None)
        } else {
            M::eval(p, x, y, Some(&mut g))
        };
        let r = v - f;
        for i in 0..n {
            let wgi = w * g[i];
            b[i] += wgi * r;
            for j in 0..=i {
                a[(i, j)] += wgi * g[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            a[(j, i)] = a[(i, j)];
        }
    }
    (a, b)
}

fn solve_damped(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = a.nrows();
    let floor = 1e-12 * (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] += lambda * a[(i, i)].max(floor);
    }
    match m.clone().cholesky() {
        Some(ch) => Some(ch.solve(b)),
        None => m.svd(true, true).solve(b, 1e-14).ok(),
    }
}

fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    a.clone()
        .svd(true, true)
        .pseudo_inverse(1e-12 * a.norm())
        .unwrap_or_else(|_| DMatrix::zeros(n, n))
}

/// Levenberg-Marquardt: damping ×10 after a rejected step, ÷10 after an
/// accepted one.
pub fn levenberg_marquardt<M: SurfaceModel>(data: &FitData, p0: &[f64], opts: &FitOptions) -> Result<FitOutcome> {
    if p0.len() != M::N {
        return Err(Error::ShapeMismatch(format!("{} parameters, model takes {}", p0.len(), M::N)));
    }
    let n_points = data.points().count();
    if n_points <= M::N {
        return Err(Error::FitFailed(format!("{n_points} weighted samples for {} parameters", M::N)));
    }
    let mut p = p0.to_vec();
    let mut cost = cost_of::<M>(data, &p);
    if !cost.is_finite() {
        return Err(Error::FitFailed("non-finite cost at the initial point".into()));
    }
    let mut lambda = opts.initial_damping;
    let mut history = vec![cost];
    let (mut a, mut b) = normal_equations::<M>(data, &p, opts.numeric_jacobian);
    let mut converged = cost == 0.0;
    // one iteration per accepted step, i.e. per Jacobian evaluation
    let mut iterations = 0;
    while !converged && iterations < opts.max_iterations {
        let Some(step) = solve_damped(&a, &b, lambda) else {
            lambda *= 10.0;
            converged = lambda > 1e15;
            continue;
        };
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
        let trial_cost = cost_of::<M>(data, &trial);
        if trial_cost.is_finite() && trial_cost < cost {
            let relative = (cost - trial_cost) / cost;
            iterations += 1;
            p = trial;
            cost = trial_cost;
            history.push(cost);
            lambda = (lambda / 10.0).max(1e-15);
            (a, b) = normal_equations::<M>(data, &p, opts.numeric_jacobian);
            converged = relative < opts.tolerance || cost == 0.0;
        } else {
            lambda *= 10.0;
            // no descent direction left at machine precision
            converged = lambda > 1e15;
        }
    }
    if !converged {
        return Err(Error::FitNoConvergence {
            iterations,
            gradient_norm: b.norm(),
            best: p,
        });
    }
    let dof = (n_points - M::N) as f64;
    let s2 = cost / dof;
    let weight_sum: f64 = data.points().map(|(_, _, _, w)| w).sum();
    Ok(FitOutcome {
        covariance: pseudo_inverse(&a) * s2,
        residual_rms: (cost / weight_sum).sqrt(),
        params: p,
        cost,
        iterations,
        cost_history: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NearFieldFit {
    pub components: [GaussianComponent; NEAR_COMPONENTS],
    pub residual_rms: f64,
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
}

impl NearFieldFit {
    pub fn params(&self) -> Vec<f64> {
        self.components
            .iter()
            .flat_map(|c| [c.alpha, c.beta, c.gamma, c.delta, c.epsilon])
            .collect()
    }

    pub fn from_params(p: &[f64], covariance: DMatrix<f64>, residual_rms: f64, iterations: usize) -> Self {
        let mut components = [GaussianComponent { alpha: 0.0, beta: 0.0, gamma: 0.0, delta: 1.0, epsilon: 1.0 }; 4];
        for (c, v) in components.iter_mut().zip(p.chunks_exact(5)) {
            *c = GaussianComponent { alpha: v[0], beta: v[1], gamma: v[2], delta: v[3].abs(), epsilon: v[4].abs() };
        }
        Self { components, residual_rms, covariance, iterations }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        NearFieldModel::eval(&self.params(), x, y, None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub x0: f64,
    pub y0: f64,
    pub residual_rms: f64,
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
}

impl FarFieldFit {
    pub fn params(&self) -> Vec<f64> {
        vec![self.a, self.b, self.c, self.x0, self.y0]
    }

    pub fn from_params(p: &[f64], covariance: DMatrix<f64>, residual_rms: f64, iterations: usize) -> Self {
        Self { a: p[0], b: p[1], c: p[2], x0: p[3], y0: p[4], residual_rms, covariance, iterations }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        FarFieldModel::eval(&self.params(), x, y, None)
    }

    /// Radius of the first dark ring, `√(π/c)`, px.
    pub fn first_zero(&self) -> f64 {
        (PI / self.c).sqrt()
    }
}

/// Median of the outermost ring of pixels.
pub fn border_median(image: &Array2<f64>) -> f64 {
    let (nx, ny) = image.dim();
    let mut border: Vec<f64> = image
        .indexed_iter()
        .filter(|((i, j), _)| *i == 0 || *j == 0 || *i + 1 == nx || *j + 1 == ny)
        .map(|(_, v)| *v)
        .collect();
    if border.is_empty() {
        return 0.0;
    }
    border.sort_by(f64::total_cmp);
    let m = border.len() / 2;
    if border.len() % 2 == 0 { 0.5 * (border[m - 1] + border[m]) } else { border[m] }
}

/// Intensity-weighted centroid in data coordinates.
fn centroid(data: &FitData, floor: f64) -> (f64, f64, f64) {
    let (mut m0, mut mx, mut my) = (0.0, 0.0, 0.0);
    for (x, y, v, _) in data.points() {
        let v = (v - floor).max(0.0);
        m0 += v;
        mx += v * x;
        my += v * y;
    }
    if m0 > 0.0 { (mx / m0, my / m0, m0) } else { (0.0, 0.0, 0.0) }
}

pub const MIN_ROI_HALF: usize = 24;

/// Square window around the intensity centroid with half-size
/// `max(4 r_rms, min_half)` px.
pub fn centroid_roi(data: &FitData, min_half: usize) -> FitData {
    let (cx, cy, m0) = centroid(data, 0.0);
    if !(m0 > 0.0) {
        return data.clone();
    }
    let r2: f64 = data
        .points()
        .map(|(x, y, v, _)| v.max(0.0) * ((x - cx).powi(2) + (y - cy).powi(2)))
        .sum::<f64>()
        / m0;
    let half = ((4.0 * r2.sqrt()).ceil() as usize).max(min_half);
    let (nx, ny) = data.values.dim();
    let ix = (data.origin.0 + cx).round().clamp(0.0, (nx - 1) as f64) as usize;
    let iy = (data.origin.1 + cy).round().clamp(0.0, (ny - 1) as f64) as usize;
    data.crop((ix, iy), half)
}

/// Inverse-variance weights from a fitted surface, `variance` mapping a
/// predicted value to its variance.
pub fn model_weights<M: SurfaceModel>(data: &FitData, p: &[f64], variance: impl Fn(f64) -> f64) -> Array2<f64> {
    Array2::from_shape_fn(data.values.dim(), |(i, j)| {
        let v = M::eval(p, i as f64 - data.origin.0, j as f64 - data.origin.1, None);
        let var = variance(v);
        if var > 0.0 { 1.0 / var } else { 0.0 }
    })
}

/// Mean of the 3 × 3 pixels around data coordinates `(x, y)`.
fn local_mean(data: &FitData, x: f64, y: f64) -> f64 {
    let (nx, ny) = data.values.dim();
    let (i0, j0) = ((data.origin.0 + x).round() as isize, (data.origin.1 + y).round() as isize);
    let (mut sum, mut count) = (0.0, 0.0);
    for i in i0 - 1..=i0 + 1 {
        for j in j0 - 1..=j0 + 1 {
            if i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny {
                sum += data.values[[i as usize, j as usize]];
                count += 1.0;
            }
        }
    }
    if count > 0.0 { sum / count } else { 0.0 }
}

/// Four equal components at the centroid when the lobes are not resolved,
/// i.e. the centroid itself is above half the maximum. Widths come from the
/// area above half the central level, `π δ ε ln 2`, split by the ratio of
/// its second moments.
fn merged_start(data: &FitData, cx: f64, cy: f64, peak: f64) -> Option<Vec<f64>> {
    let center = local_mean(data, cx, cy);
    if center < 0.5 * peak {
        return None;
    }
    let (mut count, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y, v, _) in data.points() {
        if v >= 0.5 * center {
            count += 1.0;
            sxx += (x - cx).powi(2);
            syy += (y - cy).powi(2);
        }
    }
    if count < 4.0 {
        return None;
    }
    let area = count / (PI * std::f64::consts::LN_2);
    let aspect = (sxx.max(0.25) / syy.max(0.25)).sqrt();
    let (dx, dy) = ((area * aspect).sqrt(), (area / aspect).sqrt());
    Some([center / 4.0, cx, cy, dx, dy].repeat(NEAR_COMPONENTS))
}

/// Four starting components from quadrant moments about the centroid,
/// using pixels above half the maximum. Unresolved lobes start as four
/// equal components at the centroid.
pub fn init_nearfield(data: &FitData, symmetric: bool) -> Result<Vec<f64>> {
    let peak = data.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::FitFailed("near-field image has no signal".into()));
    }
    let (cx, cy, _) = centroid(data, 0.0);
    if let Some(p) = merged_start(data, cx, cy, peak) {
        return Ok(p);
    }
    let threshold = 0.5 * peak;
    let mut p = Vec::with_capacity(NEAR_PARAMS);
    for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
        let (mut m0, mut mx, mut my, mut mxx, mut myy, mut top) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0f64);
        for (x, y, v, _) in data.points() {
            let (u, w) = (x - cx, y - cy);
            if v < threshold || u * sx < 0.0 || w * sy < 0.0 {
                continue;
            }
            m0 += v;
            mx += v * x;
            my += v * y;
            mxx += v * x * x;
            myy += v * y * y;
            top = top.max(v);
        }
        if m0 > 0.0 {
            let (bx, by) = (mx / m0, my / m0);
            // a half-max cut of exp(-u²/δ²) has rms δ·0.48; doubled for
            // quadrants holding half a blob
            let dx = ((mxx / m0 - bx * bx).max(0.25)).sqrt() * 2.0;
            let dy = ((myy / m0 - by * by).max(0.25)).sqrt() * 2.0;
            p.extend([top, bx, by, dx, dy]);
        } else {
            p.extend([0.25 * peak, cx + sx, cy + sy, 2.0, 2.0]);
        }
    }
    if symmetric {
        let dx = p.chunks(5).map(|c| (c[1] - cx).abs()).sum::<f64>() / 4.0;
        let dy = p.chunks(5).map(|c| (c[2] - cy).abs()).sum::<f64>() / 4.0;
        for (k, (sx, sy)) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)].into_iter().enumerate() {
            p[5 * k + 1] = cx + sx * dx;
            p[5 * k + 2] = cy + sy * dy;
        }
    }
    Ok(p)
}

/// Centroid for the center, first radial minimum for `c`, border median for
/// `a`, peak minus `a` for `b`. The peak and the minimum are read from the
/// ring-averaged profile; the minimum is searched beyond the half-maximum
/// radius.
pub fn init_farfield(data: &FitData) -> Result<Vec<f64>> {
    let a = border_median(&data.values);
    let top = data.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(top > a) {
        return Err(Error::FitFailed("far-field image has no signal above background".into()));
    }
    let (x0, y0, _) = centroid(data, a + 0.1 * (top - a));
    let max_r = data.values.dim().0.max(data.values.dim().1);
    let mut sums = vec![0.0; max_r];
    let mut counts = vec![0.0; max_r];
    for (x, y, v, _) in data.points() {
        let r = ((x - x0).powi(2) + (y - y0).powi(2)).sqrt().round() as usize;
        if r < max_r {
            sums[r] += v;
            counts[r] += 1.0;
        }
    }
    let ring: Vec<f64> = sums.iter().zip(&counts).map(|(s, c)| if *c > 0.0 { s / c } else { f64::NAN }).collect();
    // three-ring running mean
    let profile: Vec<f64> = (0..max_r)
        .map(|r| {
            let w = &ring[r.saturating_sub(1)..(r + 2).min(max_r)];
            let ok: Vec<f64> = w.iter().copied().filter(|v| v.is_finite()).collect();
            if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 }
        })
        .collect();
    let peak = profile[0];
    if !(peak > a) {
        return Err(Error::FitFailed("far-field image has no signal above background".into()));
    }
    let half = (1..max_r)
        .find(|&r| profile[r] < a + 0.5 * (peak - a))
        .ok_or_else(|| Error::FitFailed("far-field profile never falls to half maximum".into()))?;
    let first_min = (half.max(2)..max_r - 1)
        .find(|&r| profile[r] < profile[r - 1] && profile[r] <= profile[r + 1])
        .ok_or_else(|| Error::FitFailed("no dark ring in the far-field image".into()))?;
    Ok(vec![a, peak - a, PI / (first_min as f64).powi(2), x0, y0])
}

pub fn fit_nearfield(data: &FitData, init: Option<&[f64]>, opts: &FitOptions) -> Result<NearFieldFit> {
    let p0 = match init {
        Some(p) => p.to_vec(),
        None => init_nearfield(data, false)?,
    };
    let out = levenberg_marquardt::<NearFieldModel>(data, &p0, opts)?;
    Ok(NearFieldFit::from_params(&out.params, out.covariance, out.residual_rms, out.iterations))
}

pub fn fit_farfield(data: &FitData, init: Option<&[f64]>, opts: &FitOptions) -> Result<FarFieldFit> {
    let p0 = match init {
        Some(p) => p.to_vec(),
        None => init_farfield(data)?,
    };
    let out = levenberg_marquardt::<FarFieldModel>(data, &p0, opts)?;
    let fit = FarFieldFit::from_params(&out.params, out.covariance, out.residual_rms, out.iterations);
    if !(fit.b > 0.0 && fit.c > 0.0) {
        return Err(Error::FitFailed(format!("far-field fit left the physical region: b={} c={}", fit.b, fit.c)));
    }
    Ok(fit)
}

/// `∫₀^∞ sinc^p(t) dt` for `p ∈ {2, 4}`, Simpson over whole periods plus the
/// asymptotic tail.
pub fn sinc_power_integral(power: i32) -> f64 {
    let periods = 2000.0;
    let t_end = periods * PI;
    let panels = 2_000_000;
    let h = t_end / panels as f64;
    let f = |t: f64| sinc(t).powi(power);
    let mut s = f(0.0) + f(t_end);
    for k in 1..panels {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
    }
    let body = s * h / 3.0;
    // mean of sin^p over a period times ∫ t^-p
    let tail = match power {
        2 => 0.5 / t_end,
        4 => 0.375 / (3.0 * t_end.powi(3)),
        _ => 0.0,
    };
    body + tail
}

fn sinc_integrals() -> (f64, f64) {
    use std::sync::OnceLock;
    static CACHE: OnceLock<(f64, f64)> = OnceLock::new();
    *CACHE.get_or_init(|| (sinc_power_integral(2), sinc_power_integral(4)))
}

/// Participation area `(∫I)²/∫I²` of the fitted near-field surface, px².
pub fn nearfield_participation(p: &[f64]) -> Result<f64> {
    let comps: Vec<&[f64]> = p.chunks_exact(5).collect();
    let total: f64 = comps.iter().map(|c| c[0] * PI * c[3].abs() * c[4].abs()).sum();
    let mut sq = 0.0;
    for ci in &comps {
        for cj in &comps {
            let cross = |bi: f64, bj: f64, di: f64, dj: f64| {
                let (a, b) = (di * di, dj * dj);
                (PI * a * b / (a + b)).sqrt() * (-(bi - bj).powi(2) / (a + b)).exp()
            };
            sq += ci[0] * cj[0] * cross(ci[1], cj[1], ci[3], cj[3]) * cross(ci[2], cj[2], ci[4], cj[4]);
        }
    }
    if !(total > 0.0 && sq > 0.0) {
        return Err(Error::NonPositiveIntegral);
    }
    Ok(total * total / sq)
}

/// Participation area of `b sinc²(c r²)` by radial quadrature, px⁻² units
/// of `c` give px².
pub fn farfield_participation(p: &[f64]) -> Result<f64> {
    let (b, c) = (p[1], p[2]);
    if !(b > 0.0 && c > 0.0) {
        return Err(Error::NonPositiveIntegral);
    }
    let (i2, i4) = sinc_integrals();
    // ∫ f(c r²) 2πr dr = (π/c) ∫ f(t) dt
    let total = b * PI / c * i2;
    let sq = b * b * PI / c * i4;
    Ok(total * total / sq)
}

/// Pixel-to-physical scales of the two camera planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneMaps {
    /// µm per px.
    pub near: f64,
    /// rad/µm per px.
    pub far: f64,
}

fn k_of(near: &[f64], far: &[f64], maps: PlaneMaps) -> Result<f64> {
    let pr_x = nearfield_participation(near)? * maps.near * maps.near;
    let pr_q = farfield_participation(far)? * maps.far * maps.far;
    Ok(pr_x * pr_q / (4.0 * PI * PI))
}

/// Schmidt number of the fitted surfaces and its delta-method uncertainty.
pub fn k_from_fits(nf: &NearFieldFit, ff: &FarFieldFit, maps: PlaneMaps) -> Result<(f64, f64)> {
    let pn = nf.params();
    let pf = ff.params();
    let k = k_of(&pn, &pf, maps)?;
    let grad = |p: &[f64], f: &dyn Fn(&[f64]) -> Result<f64>| -> Result<DVector<f64>> {
        let mut g = DVector::zeros(p.len());
        let mut q = p.to_vec();
        for i in 0..p.len() {
            let h = 1e-6 * p[i].abs().max(1e-6);
            q[i] = p[i] + h;
            let up = f(&q)?;
            q[i] = p[i] - h;
            let down = f(&q)?;
            q[i] = p[i];
            g[i] = (up - down) / (2.0 * h);
        }
        Ok(g)
    };
    let gn = grad(&pn, &|q| k_of(q, &pf, maps))?;
    let gf = grad(&pf, &|q| k_of(&pn, q, maps))?;
    let var = (gn.transpose() * &nf.covariance * &gn)[(0, 0)] + (gf.transpose() * &ff.covariance * &gf)[(0, 0)];
    Ok((k, var.max(0.0).sqrt()))
}

fn stderr(cov: &DMatrix<f64>, i: usize) -> f64 {
    cov[(i, i)].max(0.0).sqrt()
}

const NEAR_NAMES: [&str; 5] = ["alpha", "beta", "gamma", "delta", "epsilon"];
const FAR_NAMES: [&str; 5] = ["a", "b", "c", "x0", "y0"];

fn near_name(k: usize) -> String {
    format!("{}{}", NEAR_NAMES[k % 5], k / 5 + 1)
}

/// `name value stderr`, one parameter per line.
pub fn nearfield_records(fit: &NearFieldFit) -> String {
    let mut s = String::new();
    for (k, v) in fit.params().iter().enumerate() {
        let _ = writeln!(s, "{} {:.12e} {:.6e}", near_name(k), v, stderr(&fit.covariance, k));
    }
    let _ = writeln!(s, "residual_rms {:.12e} 0", fit.residual_rms);
    s
}

pub fn farfield_records(fit: &FarFieldFit) -> String {
    let mut s = String::new();
    for (k, v) in fit.params().iter().enumerate() {
        let _ = writeln!(s, "{} {:.12e} {:.6e}", FAR_NAMES[k], v, stderr(&fit.covariance, k));
    }
    let _ = writeln!(s, "residual_rms {:.12e} 0", fit.residual_rms);
    s
}

fn parse_records(text: &str, names: &[String]) -> Result<(Vec<f64>, DMatrix<f64>, f64)> {
    let mut values = vec![f64::NAN; names.len()];
    let mut cov = DMatrix::zeros(names.len(), names.len());
    let mut rms = 0.0;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, value, err] = fields[..] else {
            return Err(Error::Parse(format!("expected `name value stderr`: {line}")));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number in: {line}")));
        if name == "residual_rms" {
            rms = num(value)?;
            continue;
        }
        let k = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Parse(format!("unknown parameter {name}")))?;
        values[k] = num(value)?;
        cov[(k, k)] = num(err)?.powi(2);
    }
    if let Some(k) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::Parse(format!("missing parameter {}", names[k])));
    }
    Ok((values, cov, rms))
}

/// Reads [`nearfield_records`]; only the diagonal of the covariance survives.
pub fn parse_nearfield_records(text: &str) -> Result<NearFieldFit> {
    let names: Vec<String> = (0..NEAR_PARAMS).map(near_name).collect();
    let (p, cov, rms) = parse_records(text, &names)?;
    Ok(NearFieldFit::from_params(&p, cov, rms, 0))
}

pub fn parse_farfield_records(text: &str) -> Result<FarFieldFit> {
    let names: Vec<String> = FAR_NAMES.iter().map(|s| s.to_string()).collect();
    let (p, cov, rms) = parse_records(text, &names)?;
    Ok(FarFieldFit::from_params(&p, cov, rms, 0))
}
