//! Electron-multiplying CCD frame synthesis.
//!
//! Frames are indexed `[ix, iy]` like the fields; PGM rows run over `iy`.

use std::f64::consts::PI;
use std::io::{Read, Write};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};

use crate::biphoton::MarginalImage;
use crate::error::{Error, Result};
use crate::fieldgrid::{Axis, Plane};

pub const SATURATION: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSpec {
    pub n_px: usize,
    /// Pixel pitch on the sensor, µm.
    pub px: f64,
    pub em_gain: f64,
    /// Counts rms.
    pub read_noise: f64,
    /// Mean photoelectrons per pixel per frame.
    pub dark_background: f64,
    /// Near-field scale, µm of source plane per pixel.
    pub near_scale: f64,
    /// Far-field scale, rad/µm per pixel.
    pub far_scale: f64,
    /// Largest probability allowed to fall off the sensor.
    pub max_leak: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self::new(150_000.0, 0.71)
    }
}

impl CameraSpec {
    /// 512 × 512 sensor with 16 µm pixels, unit near-field magnification and
    /// a far-field lens of focal length `focal` (µm) at wavelength `lambda`.
    pub fn new(focal: f64, lambda: f64) -> Self {
        let px = 16.0;
        Self {
            n_px: 512,
            px,
            em_gain: 100.0,
            read_noise: 2.0,
            dark_background: 0.05,
            near_scale: px,
            far_scale: 2.0 * PI * px / (focal * lambda),
            max_leak: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_px == 0 {
            return Err(Error::InvalidParameter("camera has no pixels".into()));
        }
        let checks = [
            ("pixel pitch", self.px, false),
            ("near-field scale", self.near_scale, false),
            ("far-field scale", self.far_scale, false),
            ("EM gain", self.em_gain, true),
            ("read noise", self.read_noise, true),
            ("dark background", self.dark_background, true),
            ("leak limit", self.max_leak, true),
        ];
        for (name, v, zero_ok) in checks {
            let ok = v.is_finite() && if zero_ok { v >= 0.0 } else { v > 0.0 };
            if !ok {
                return Err(Error::InvalidParameter(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    pub fn scale(&self, plane: Plane) -> f64 {
        match plane {
            Plane::NearField => self.near_scale,
            Plane::FarField => self.far_scale,
        }
    }

    /// Pixel centers in source-plane units, pixel `n_px/2` on the axis.
    pub fn pixel_axis(&self, plane: Plane) -> Result<Axis> {
        Axis::new(self.n_px, self.scale(plane))
    }

    /// Counts variance predicted for a pixel with mean `counts`.
    pub fn predicted_variance(&self, counts: f64) -> f64 {
        2.0 * self.em_gain * counts.max(0.0) + self.read_noise * self.read_noise
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmccdFrame {
    pub counts: Array2<u16>,
    pub exposure_photons: f64,
    pub seed: u64,
    pub plane: Plane,
}

/// Fraction of each sample cell `[c - h/2, c + h/2]` inside each pixel.
fn overlap_matrix(pixels: Axis, samples: Axis) -> Array2<f64> {
    let (s, h) = (pixels.pitch(), samples.pitch());
    let mut m = Array2::zeros((pixels.len(), samples.len()));
    for k in 0..samples.len() {
        let c = samples.coord(k);
        let (lo, hi) = (c - h / 2.0, c + h / 2.0);
        let first = ((lo / s + pixels.center() as f64 + 0.5).floor().max(0.0)) as usize;
        let last = (hi / s + pixels.center() as f64 + 0.5).floor();
        if last < 0.0 {
            continue;
        }
        let last = (last as usize).min(pixels.len() - 1);
        for p in first..=last {
            let pc = pixels.coord(p);
            let overlap = (hi.min(pc + s / 2.0) - lo.max(pc - s / 2.0)).max(0.0);
            m[[p, k]] = overlap / h;
        }
    }
    m
}

/// Probability collected by each pixel, and the fraction lost off the sensor.
///
/// The marginal must be a density normalized over its whole plane; mass
/// outside the sample grid counts as leaked.
pub fn pixel_probabilities(marginal: &MarginalImage, cam: &CameraSpec) -> Result<(Array2<f64>, f64)> {
    cam.validate()?;
    let axis = cam.pixel_axis(marginal.plane)?;
    let ox = overlap_matrix(axis, marginal.x);
    let oy = overlap_matrix(axis, marginal.y);
    let mass = &marginal.values * marginal.cell();
    let total: f64 = mass.sum();
    if !(total > 0.0 && total <= 1.0 + 1e-6) || marginal.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidSamples);
    }
    let probs = ox.dot(&mass).dot(&oy.t());
    let leak = (1.0 - probs.sum()).max(0.0);
    Ok((probs, leak))
}

/// Smallest `2·rms` width of the pixel probabilities along either axis, px.
pub fn width_in_pixels(probs: &Array2<f64>) -> f64 {
    let total: f64 = probs.sum();
    let width = |axis: usize| {
        let lane = probs.sum_axis(ndarray::Axis(1 - axis));
        let mean: f64 = lane.iter().enumerate().map(|(i, v)| i as f64 * v).sum::<f64>() / total;
        let var: f64 = lane.iter().enumerate().map(|(i, v)| (i as f64 - mean).powi(2) * v).sum::<f64>() / total;
        2.0 * var.sqrt()
    };
    width(0).min(width(1))
}

pub const MIN_PIXELS_ACROSS: f64 = 8.0;

fn check_marginal(marginal: &MarginalImage, cam: &CameraSpec) -> Result<Array2<f64>> {
    let (probs, leak) = pixel_probabilities(marginal, cam)?;
    if leak > cam.max_leak {
        return Err(Error::SensorLeak { fraction: leak, limit: cam.max_leak });
    }
    let w = width_in_pixels(&probs);
    if w < MIN_PIXELS_ACROSS {
        return Err(Error::CameraUnderResolved(w));
    }
    Ok(probs)
}

/// Noisy frame for a photon budget: Poisson arrivals, gamma-distributed EM
/// gain, Gaussian read noise, rounded and clamped to 16 bits.
pub fn synth_frame(marginal: &MarginalImage, cam: &CameraSpec, budget: f64, seed: u64) -> Result<EmccdFrame> {
    if !(budget.is_finite() && budget >= 0.0) {
        return Err(Error::InvalidParameter(format!("photon budget {budget}")));
    }
    let probs = check_marginal(marginal, cam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let read = Normal::new(0.0, cam.read_noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let counts = probs.mapv(|p| {
        let mean = budget * p + cam.dark_background;
        let electrons = if mean > 0.0 {
            Poisson::new(mean).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
        } else {
            0.0
        };
        let amplified = if electrons > 0.0 && cam.em_gain > 0.0 {
            Gamma::new(electrons, cam.em_gain).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
        } else {
            0.0
        };
        let noise = if cam.read_noise > 0.0 { read.sample(&mut rng) } else { 0.0 };
        (amplified + noise).round().clamp(0.0, SATURATION as f64) as u16
    });
    Ok(EmccdFrame { counts, exposure_photons: budget, seed, plane: marginal.plane })
}

/// Seed for frame `index` of a run seeded with `base`.
pub fn frame_seed(base: u64, index: u64) -> u64 {
    // splitmix64 step
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StripeOrientation {
    #[default]
    Vertical,
    Horizontal,
}

/// Adds `amplitude · (1 + cos(2π i / period)) / 2` counts, with `i` the
/// column index for vertical stripes.
pub fn add_diffraction_artifact(
    frame: &EmccdFrame,
    amplitude: f64,
    period_px: f64,
    orientation: StripeOrientation,
) -> Result<EmccdFrame> {
    if !(amplitude.is_finite() && amplitude >= 0.0) || !(period_px > 0.0) {
        return Err(Error::InvalidParameter(format!("artifact amplitude {amplitude}, period {period_px}")));
    }
    let mut out = frame.clone();
    if amplitude == 0.0 {
        return Ok(out);
    }
    for ((ix, iy), c) in out.counts.indexed_iter_mut() {
        let i = match orientation {
            StripeOrientation::Vertical => ix,
            StripeOrientation::Horizontal => iy,
        };
        let add = amplitude * 0.5 * (1.0 + (2.0 * PI * i as f64 / period_px).cos());
        *c = (*c as f64 + add).round().clamp(0.0, SATURATION as f64) as u16;
    }
    Ok(out)
}

/// Per-pixel sample mean and unbiased variance.
pub fn accumulate(frames: &[EmccdFrame]) -> Result<(Array2<f64>, Array2<f64>)> {
    let first = frames.first().ok_or(Error::Empty("frame list"))?;
    let shape = first.counts.dim();
    let mut sum = Array2::<f64>::zeros(shape);
    let mut sum_sq = Array2::<f64>::zeros(shape);
    for f in frames {
        if f.counts.dim() != shape || f.plane != first.plane {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", f.counts.dim(), shape)));
        }
        sum.zip_mut_with(&f.counts, |s, &c| *s += c as f64);
        sum_sq.zip_mut_with(&f.counts, |s, &c| *s += (c as f64).powi(2));
    }
    let n = frames.len() as f64;
    let mean = &sum / n;
    let var = if frames.len() > 1 {
        let mut v = (&sum_sq - &(&mean * &sum)) / (n - 1.0);
        v.mapv_inplace(|x| x.max(0.0));
        v
    } else {
        Array2::zeros(shape)
    };
    Ok((mean, var))
}

/// Binary 16-bit PGM, big-endian, rows over `iy`.
pub fn write_pgm<W: Write>(mut w: W, counts: &Array2<u16>) -> Result<()> {
    let (nx, ny) = counts.dim();
    write!(w, "P5\n{nx} {ny}\n65535\n")?;
    let mut buf = Vec::with_capacity(nx * ny * 2);
    for iy in 0..ny {
        for ix in 0..nx {
            buf.extend_from_slice(&counts[[ix, iy]].to_be_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_pgm<R: Read>(mut r: R) -> Result<Array2<u16>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Parse("not a binary PGM".into()));
    }
    let mut num = || -> Result<usize> {
        token()?.parse().map_err(|_| Error::Parse("bad PGM header field".into()))
    };
    let (nx, ny, maxval) = (num()?, num()?, num()?);
    if maxval != 65535 {
        return Err(Error::Parse(format!("expected 16-bit PGM, maxval {maxval}")));
    }
    let data = &bytes[pos + 1..];
    if data.len() != nx * ny * 2 {
        return Err(Error::Parse(format!("PGM payload {} bytes, expected {}", data.len(), nx * ny * 2)));
    }
    let mut counts = Array2::zeros((nx, ny));
    for iy in 0..ny {
        for ix in 0..nx {
            let k = 2 * (iy * nx + ix);
            counts[[ix, iy]] = u16::from_be_bytes([data[k], data[k + 1]]);
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldgrid::Field2D;
    use approx::assert_relative_eq;

    fn gaussian_spot(cam: &CameraSpec, width: f64) -> MarginalImage {
        let axis = Axis::with_half_extent(1024, 0.6 * cam.n_px as f64 * cam.near_scale).unwrap();
        Field2D::from_fn(axis, axis, Plane::NearField, |x, y| (-(x * x + y * y) / (2.0 * width * width)).exp())
            .normalized()
            .unwrap()
    }

    #[test]
    fn quiet_camera_without_light_reads_zero() {
        let cam = CameraSpec { read_noise: 0.0, dark_background: 0.0, ..CameraSpec::default() };
        let m = gaussian_spot(&cam, 300.0);
        let f = synth_frame(&m, &cam, 0.0, 1).unwrap();
        assert_eq!(f.counts.dim(), (512, 512));
        assert!(f.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn pixel_probabilities_conserve_mass() {
        let cam = CameraSpec::default();
        let (p, leak) = pixel_probabilities(&gaussian_spot(&cam, 300.0), &cam).unwrap();
        assert!(leak < 1e-9);
        assert_relative_eq!(p.sum(), 1.0, max_relative = 1e-9);
        assert!(width_in_pixels(&p) > 30.0);
    }

    #[test]
    fn unnormalized_marginal_is_rejected() {
        let cam = CameraSpec::default();
        let m = gaussian_spot(&cam, 300.0);
        let m = Field2D { values: &m.values * 2.0, ..m };
        assert!(matches!(pixel_probabilities(&m, &cam), Err(Error::InvalidSamples)));
    }

    #[test]
    fn leaking_marginal_is_rejected() {
        let cam = CameraSpec::default();
        let m = gaussian_spot(&cam, 3000.0);
        assert!(matches!(synth_frame(&m, &cam, 1e5, 0), Err(Error::SensorLeak { .. })));
    }

    #[test]
    fn unresolved_marginal_is_rejected() {
        let cam = CameraSpec::default();
        let axis = Axis::with_half_extent(1024, 200.0).unwrap();
        let m = Field2D::from_fn(axis, axis, Plane::NearField, |x, y| (-(x * x + y * y) / 200.0).exp())
            .normalized()
            .unwrap();
        assert!(matches!(synth_frame(&m, &cam, 1e5, 0), Err(Error::CameraUnderResolved(_))));
    }

    #[test]
    fn frames_are_deterministic() {
        let cam = CameraSpec::default();
        let m = gaussian_spot(&cam, 300.0);
        let a = synth_frame(&m, &cam, 1e5, 42).unwrap();
        let b = synth_frame(&m, &cam, 1e5, 42).unwrap();
        let c = synth_frame(&m, &cam, 1e5, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.counts, c.counts);
        assert_ne!(frame_seed(7, 0), frame_seed(7, 1));
    }

    #[test]
    fn mean_counts_follow_budget_and_gain() {
        // read noise off: clamping at zero would bias the mean upward
        let cam = CameraSpec { read_noise: 0.0, ..CameraSpec::default() };
        let m = gaussian_spot(&cam, 300.0);
        let budget = 2e4;
        let totals: Vec<f64> = (0..100)
            .map(|k| synth_frame(&m, &cam, budget, frame_seed(5, k)).unwrap().counts.iter().map(|&c| c as f64).sum())
            .collect();
        let n = totals.len() as f64;
        let mean = totals.iter().sum::<f64>() / n;
        let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = (budget + cam.dark_background * 512.0 * 512.0) * cam.em_gain;
        assert!((mean - expected).abs() < 3.0 * (var / n).sqrt(), "{mean} vs {expected}");

        // doubling the budget doubles the dark-subtracted signal
        let dark = cam.dark_background * 512.0 * 512.0 * cam.em_gain;
        let doubled: f64 = (0..20)
            .map(|k| synth_frame(&m, &cam, 2.0 * budget, frame_seed(9, k)).unwrap().counts.iter().map(|&c| c as f64).sum::<f64>())
            .sum::<f64>()
            / 20.0;
        assert_relative_eq!((doubled - dark) / (mean - dark), 2.0, max_relative = 0.01);
    }

    #[test]
    fn excess_noise_factor_two() {
        let cam = CameraSpec { read_noise: 0.0, dark_background: 0.0, ..CameraSpec::default() };
        let m = gaussian_spot(&cam, 300.0);
        let frames: Vec<_> = (0..60).map(|k| synth_frame(&m, &cam, 2e5, frame_seed(3, k)).unwrap()).collect();
        let (mean, var) = accumulate(&frames).unwrap();
        let peak = mean.iter().copied().fold(0.0, f64::max);
        let (mut ratio_sum, mut count) = (0.0, 0.0);
        for (m, v) in mean.iter().zip(var.iter()) {
            if *m > 0.5 * peak {
                ratio_sum += v / (2.0 * cam.em_gain * m);
                count += 1.0;
            }
        }
        let ratio = ratio_sum / count;
        assert!((ratio - 1.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn accumulate_basics() {
        let mk = |v: u16| EmccdFrame {
            counts: Array2::from_elem((4, 3), v),
            exposure_photons: 0.0,
            seed: 0,
            plane: Plane::NearField,
        };
        let (mean, var) = accumulate(&[mk(5), mk(5), mk(5)]).unwrap();
        assert!(mean.iter().all(|&m| m == 5.0));
        assert!(var.iter().all(|&v| v == 0.0));
        let (mean, _) = accumulate(&[mk(2), mk(7)]).unwrap();
        assert!(mean.iter().all(|&m| m == 4.5));
        assert!(matches!(accumulate(&[]), Err(Error::Empty(_))));
        let mut odd = mk(1);
        odd.counts = Array2::zeros((3, 3));
        assert!(matches!(accumulate(&[mk(1), odd]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn artifact_is_periodic_in_columns() {
        let blank = EmccdFrame {
            counts: Array2::zeros((512, 512)),
            exposure_photons: 0.0,
            seed: 0,
            plane: Plane::FarField,
        };
        let same = add_diffraction_artifact(&blank, 0.0, 10.0, StripeOrientation::Vertical).unwrap();
        assert_eq!(same, blank);

        let period = 23.0;
        let f = add_diffraction_artifact(&blank, 40.0, period, StripeOrientation::Vertical).unwrap();
        let profile: Vec<f64> = (0..512).map(|ix| f.counts.row(ix).iter().map(|&c| c as f64).sum()).collect();
        let mean = profile.iter().sum::<f64>() / 512.0;
        let centered: Vec<f64> = profile.iter().map(|v| v - mean).collect();
        let r: Vec<f64> = (0..100)
            .map(|lag| (0..512 - lag).map(|i| centered[i] * centered[i + lag]).sum::<f64>() / (512 - lag) as f64)
            .collect();
        // first local maximum after the zero-lag peak
        let best = (2..99).find(|&k| r[k] > r[k - 1] && r[k] >= r[k + 1] && r[k] > 0.5 * r[0]).unwrap();
        assert!((best as f64 - period).abs() <= 1.0, "{best}");
        // stripes are constant along a column
        assert!(f.counts.row(7).iter().all(|&c| c == f.counts[[7, 0]]));
    }

    #[test]
    fn pgm_round_trip() {
        let counts = Array2::from_shape_fn((5, 3), |(i, j)| (i * 1000 + j * 17 + 65000 * (i == 4) as usize) as u16);
        let mut buf = Vec::new();
        write_pgm(&mut buf, &counts).unwrap();
        assert!(buf.starts_with(b"P5\n5 3\n65535\n"));
        assert_eq!(buf.len(), 13 + 5 * 3 * 2);
        // first sample, big-endian
        assert_eq!(&buf[13..15], &counts[[0, 0]].to_be_bytes());
        assert_eq!(&buf[15..17], &counts[[1, 0]].to_be_bytes());
        assert_eq!(read_pgm(&buf[..]).unwrap(), counts);
        assert!(read_pgm(&b"P2\n1 1\n255\n0"[..]).is_err());
    }
}
