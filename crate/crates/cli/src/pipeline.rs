//! Camera frames, surface fits and the end-to-end Schmidt estimate.

use distill_core::biphoton::{camera_marginals, CameraMarginals};
use distill_core::emccd::{
    accumulate, add_diffraction_artifact, frame_seed, synth_frame, CameraSpec, EmccdFrame, StripeOrientation,
    SATURATION,
};
use distill_core::fieldgrid::{Axis, Plane};
use distill_core::fitting::{
    centroid_roi, fit_farfield, fit_nearfield, k_from_fits, model_weights, FarFieldFit, FarFieldModel,
    FitData, FitOptions, NearFieldFit, NearFieldModel, PlaneMaps, MIN_ROI_HALF,
};
use distill_core::physmodel::FilterSpec;
use distill_core::{Error, Result};
use ndarray::Array2;
use rayon::prelude::*;

use crate::config::Config;
use crate::error::CliResult;
use crate::sweep::{Engine, SweepRow};

/// Background-subtracted signal must exceed this many noise standard
/// deviations.
pub const MIN_SIGNAL_SNR: f64 = 5.0;

/// Marginals sampled for the camera: near field at half the pixel pitch
/// over the sensor, far field at the pixel pitch over twice the sensor.
pub fn marginals_for_camera(engine: &Engine, filter: &FilterSpec, cam: &CameraSpec) -> Result<CameraMarginals> {
    let n = (2 * cam.n_px).next_power_of_two();
    let near = Axis::new(n, 0.5 * cam.near_scale)?;
    let far = Axis::new(n, cam.far_scale)?;
    camera_marginals(&engine.source, &engine.grid, filter, near, far)
}

/// Frames of one plane. Frame `i` of stream `stream` is seeded with
/// `frame_seed(seed, stream · 2^20 + i)`.
pub fn plane_frames(
    marginals: &CameraMarginals,
    plane: Plane,
    config: &Config,
    stream: u64,
) -> Result<Vec<EmccdFrame>> {
    let cam = config.camera.spec();
    let marginal = match plane {
        Plane::NearField => &marginals.near,
        Plane::FarField => &marginals.far,
    };
    (0..config.camera.frames as u64)
        .into_par_iter()
        .map(|i| {
            let frame = synth_frame(marginal, &cam, config.camera.budget, frame_seed(config.seed, (stream << 20) + i))?;
            add_diffraction_artifact(
                &frame,
                config.camera.artifact_amplitude,
                config.camera.artifact_period_px,
                StripeOrientation::Vertical,
            )
        })
        .collect()
}

/// Mean of the outermost ring of pixels. EMCCD counts of photon-starved
/// pixels are strongly skewed, so their median sits below the mean level.
pub fn border_mean(image: &Array2<f64>) -> f64 {
    let (nx, ny) = image.dim();
    let (sum, count) = image
        .indexed_iter()
        .filter(|((i, j), _)| *i == 0 || *j == 0 || *i + 1 == nx || *j + 1 == ny)
        .fold((0.0, 0.0), |(s, c), (_, v)| (s + v, c + 1.0));
    if count > 0.0 { sum / count } else { 0.0 }
}

/// Total counts above the border mean must exceed `MIN_SIGNAL_SNR` times
/// their predicted noise.
fn check_signal(mean: &Array2<f64>, mask: &Array2<f64>, cam: &CameraSpec, frames: usize) -> Result<()> {
    let bg = border_mean(mean);
    let signal: f64 = mean.iter().zip(mask).map(|(v, m)| m * (v - bg)).sum();
    let noise = (mean.iter().zip(mask).map(|(v, m)| m * cam.predicted_variance(*v)).sum::<f64>() / frames as f64).sqrt();
    if !(signal > MIN_SIGNAL_SNR * noise) {
        return Err(Error::FitFailed(format!("no signal above noise: {signal:.3e} counts vs σ = {noise:.3e}")));
    }
    Ok(())
}

/// Variance of a mean over `frames` frames, floored at one photoelectron.
fn variance_model(cam: &CameraSpec, frames: usize) -> impl Fn(f64) -> f64 + '_ {
    let floor = cam.predicted_variance(cam.em_gain.max(1.0));
    move |v| cam.predicted_variance(v).max(floor) / frames as f64
}

/// Pixels saturated in any frame; they get zero weight.
pub fn saturation_mask(frames: &[EmccdFrame]) -> Result<Array2<f64>> {
    let first = frames.first().ok_or(Error::Empty("frame list"))?;
    let mut mask = Array2::ones(first.counts.dim());
    for f in frames {
        mask.zip_mut_with(&f.counts, |m, &c| {
            if c == SATURATION {
                *m = 0.0;
            }
        });
    }
    Ok(mask)
}

/// Fit with the saturation mask as weights, then a refit with
/// inverse-variance weights from the first surface.
pub fn fit_near_image(
    mean: &Array2<f64>,
    mask: &Array2<f64>,
    cam: &CameraSpec,
    frames: usize,
    opts: &FitOptions,
) -> Result<NearFieldFit> {
    check_signal(mean, mask, cam, frames)?;
    let bg = border_mean(mean);
    let data = centroid_roi(&FitData::full(mean.mapv(|v| v - bg), Some(mask.clone()))?, MIN_ROI_HALF);
    let first = fit_nearfield(&data, None, opts)?;
    let var = variance_model(cam, frames);
    let weights = model_weights::<NearFieldModel>(&data, &first.params(), |v| var(v + bg)) * &data.weights;
    fit_nearfield(&FitData { weights, ..data }, Some(&first.params()), opts)
}

pub fn fit_far_image(
    mean: &Array2<f64>,
    mask: &Array2<f64>,
    cam: &CameraSpec,
    frames: usize,
    opts: &FitOptions,
) -> Result<FarFieldFit> {
    check_signal(mean, mask, cam, frames)?;
    let data = FitData::full(mean.clone(), Some(mask.clone()))?;
    let first = fit_farfield(&data, None, opts)?;
    let weights = model_weights::<FarFieldModel>(&data, &first.params(), variance_model(cam, frames)) * &data.weights;
    fit_farfield(&FitData { weights, ..data }, Some(&first.params()), opts)
}

#[derive(Debug, Clone)]
pub struct FrameFit {
    pub near: NearFieldFit,
    pub far: FarFieldFit,
    pub k: f64,
    pub dk: f64,
}

pub fn fit_frames(near: &[EmccdFrame], far: &[EmccdFrame], cam: &CameraSpec, opts: &FitOptions) -> Result<FrameFit> {
    let (near_mean, _) = accumulate(near)?;
    let (far_mean, _) = accumulate(far)?;
    let nf = fit_near_image(&near_mean, &saturation_mask(near)?, cam, near.len(), opts)?;
    let ff = fit_far_image(&far_mean, &saturation_mask(far)?, cam, far.len(), opts)?;
    let (k, dk) = k_from_fits(&nf, &ff, PlaneMaps { near: cam.near_scale, far: cam.far_scale })?;
    Ok(FrameFit { near: nf, far: ff, k, dk })
}

/// Direct and fit-based Schmidt numbers for one filter. Frames of setting
/// `index` use streams `2 index` and `2 index + 1`.
pub fn frame_estimate(engine: &Engine, filter: &FilterSpec, index: u64) -> Result<(f64, FrameFit)> {
    let cfg = &engine.config;
    let cam = cfg.camera.spec();
    let m = marginals_for_camera(engine, filter, &cam)?;
    let direct = m.direct_k()?;
    let near = plane_frames(&m, Plane::NearField, cfg, 2 * index)?;
    let far = plane_frames(&m, Plane::FarField, cfg, 2 * index + 1)?;
    Ok((direct, fit_frames(&near, &far, &cam, &cfg.fit.options())?))
}

/// Sweep rows whose `K` comes from synthetic frames and fits; `K_direct`
/// is the estimator on the generating marginals. The blank filter is
/// setting 0.
pub fn end_to_end(config: &Config) -> CliResult<Vec<SweepRow>> {
    let engine = Engine::new(config)?;
    let blank = frame_estimate(&engine, &FilterSpec::blank(), 0);
    let settings = config.settings();
    let rows = settings
        .par_iter()
        .enumerate()
        .map(|(i, &(a, d))| {
            let eval = || -> CliResult<SweepRow> {
                let (_, k0) = blank.as_ref().map_err(|e| Error::FitFailed(format!("blank reference: {e}")))?;
                let filter = config.filter(a, d)?;
                let p_succ = distill_core::schmidt::fast_path(&engine.grid, &filter, false)?.p_succ;
                let (direct, fit) = frame_estimate(&engine, &filter, i as u64 + 1)?;
                Ok(SweepRow {
                    k: Some(fit.k),
                    k0: Some(k0.k),
                    ratio: Some(fit.k / k0.k),
                    p_succ: Some(p_succ),
                    dk: Some(fit.dk),
                    k_direct: Some(direct),
                    ..SweepRow::empty(a, d)
                })
            };
            eval().unwrap_or_else(|e| SweepRow::failed(a, d, e))
        })
        .collect();
    Ok(rows)
}
