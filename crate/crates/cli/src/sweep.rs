//! Filter sweeps, heatmaps and Monte Carlo bands.

use distill_core::biphoton::{SourceGrid, SourceModel};
use distill_core::physmodel::{FilterSpec, PhysicalParams, SLM_PIXEL_UM};
use distill_core::schmidt::{fast_path, fast_path_report, reference_k};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::CliResult;

/// One filter setting. Lengths in SLM px and µm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub a_px: f64,
    pub a_um: f64,
    pub d_px: f64,
    pub d_um: f64,
    #[serde(rename = "K")]
    pub k: Option<f64>,
    #[serde(rename = "K0")]
    pub k0: Option<f64>,
    pub ratio: Option<f64>,
    pub p_succ: Option<f64>,
    #[serde(rename = "K_svd")]
    pub k_svd: Option<f64>,
    pub band_lo: Option<f64>,
    pub band_hi: Option<f64>,
    #[serde(rename = "dK")]
    pub dk: Option<f64>,
    #[serde(rename = "K_direct")]
    pub k_direct: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn empty(a_px: f64, d_px: f64) -> Self {
        Self {
            a_px,
            a_um: a_px * SLM_PIXEL_UM,
            d_px,
            d_um: d_px * SLM_PIXEL_UM,
            k: None,
            k0: None,
            ratio: None,
            p_succ: None,
            k_svd: None,
            band_lo: None,
            band_hi: None,
            dk: None,
            k_direct: None,
            error: None,
        }
    }

    pub fn failed(a_px: f64, d_px: f64, err: impl std::fmt::Display) -> Self {
        Self { error: Some(err.to_string()), ..Self::empty(a_px, d_px) }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

/// Source model and sampled grid shared by all filter settings of a run.
pub struct Engine {
    pub config: Config,
    pub source: SourceModel,
    pub grid: SourceGrid,
    pub k0: f64,
}

impl Engine {
    pub fn new(config: &Config) -> CliResult<Self> {
        let params = config.physical()?;
        Self::with_params(config, params)
    }

    /// Engine at perturbed parameters on the nominal grid.
    fn with_params(config: &Config, params: PhysicalParams) -> CliResult<Self> {
        let nominal = config.physical()?;
        let source = SourceModel::new(params, config.model.phase_matching.into());
        let grid = source.grid(config.model.grid.axis(nominal.sigma())?)?;
        let k0 = fast_path(&grid, &FilterSpec::blank(), false)?.k;
        Ok(Self { config: config.clone(), source, grid, k0 })
    }

    pub fn k(&self, filter: &FilterSpec) -> distill_core::Result<f64> {
        Ok(fast_path(&self.grid, filter, false)?.k)
    }

    pub fn row(&self, a_px: f64, d_px: f64) -> SweepRow {
        let eval = || -> CliResult<SweepRow> {
            let filter = self.config.filter(a_px, d_px)?;
            let r = fast_path_report(&self.grid, &filter, self.k0, self.config.model.svd)?;
            let mut row = SweepRow {
                k: Some(r.k_estimate),
                k0: Some(r.k0),
                ratio: Some(r.ratio),
                p_succ: Some(r.p_succ),
                k_svd: r.k_svd,
                ..SweepRow::empty(a_px, d_px)
            };
            if self.config.mc.per_row {
                let band = mc_band(&self.source.params, self.config.mc.samples, self.config.seed, |p| {
                    Engine::with_params(&self.config, *p)?.k(&filter).map_err(Into::into)
                })?;
                row.band_lo = Some(band.lo);
                row.band_hi = Some(band.hi);
            }
            Ok(row)
        };
        eval().unwrap_or_else(|e| SweepRow::failed(a_px, d_px, e))
    }
}

/// One row per filter setting, ordered by the swept value.
pub fn run_sweep(config: &Config) -> CliResult<Vec<SweepRow>> {
    let engine = Engine::new(config)?;
    Ok(config.settings().par_iter().map(|&(a, d)| engine.row(a, d)).collect())
}

/// Ratio and success-probability grids over `a_values × d_values`, NaN
/// where a point failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub a_values: Vec<f64>,
    pub d_values: Vec<f64>,
    pub ratio: Array2<f64>,
    pub p_succ: Array2<f64>,
    pub rows: Vec<SweepRow>,
}

pub fn heatmap(config: &Config) -> CliResult<Heatmap> {
    let mut cfg = config.clone();
    cfg.sweep.scenario = crate::config::Scenario::Grid2d;
    let rows = run_sweep(&cfg)?;
    let mut a_values = cfg.sweep.a_values.clone();
    let mut d_values = cfg.sweep.d_values.clone();
    a_values.sort_by(f64::total_cmp);
    d_values.sort_by(f64::total_cmp);
    let shape = (a_values.len(), d_values.len());
    let mut ratio = Array2::from_elem(shape, f64::NAN);
    let mut p_succ = Array2::from_elem(shape, f64::NAN);
    for (k, row) in rows.iter().enumerate() {
        let idx = (k / shape.1, k % shape.1);
        ratio[idx] = row.ratio.unwrap_or(f64::NAN);
        p_succ[idx] = row.p_succ.unwrap_or(f64::NAN);
    }
    Ok(Heatmap { a_values, d_values, ratio, p_succ, rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub nominal: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl Band {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

/// Min/max of `eval` over `n` uniform draws of (σ, L) within their
/// uncertainties, and the nominal point. Failed draws are redrawn, up to
/// `10 n` attempts in total.
pub fn mc_band<F>(params: &PhysicalParams, n: usize, seed: u64, eval: F) -> CliResult<Band>
where
    F: Fn(&PhysicalParams) -> CliResult<f64> + Sync,
{
    let nominal = eval(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, c: f64, w: f64| if w > 0.0 { rng.random_range(c - w..=c + w) } else { c };
    let (mut lo, mut hi) = (nominal, nominal);
    let (mut accepted, mut attempts) = (0, 0);
    while accepted < n {
        let batch = (n - accepted).min(10 * n - attempts);
        if batch == 0 {
            return Err(distill_core::Error::InvalidParameter(format!(
                "Monte Carlo band: only {accepted} of {n} draws succeeded in {attempts} attempts"
            ))
            .into());
        }
        let draws: Vec<(f64, f64)> = (0..batch)
            .map(|_| {
                let s = draw(&mut rng, params.sigma(), params.dsigma());
                let l = draw(&mut rng, params.length(), params.dlength());
                (s, l)
            })
            .collect();
        attempts += batch;
        let ks: Vec<Option<f64>> = draws
            .par_iter()
            .map(|&(s, l)| params.perturbed(s, l).ok().and_then(|p| eval(&p).ok()))
            .collect();
        for k in ks.into_iter().flatten() {
            lo = lo.min(k);
            hi = hi.max(k);
            accepted += 1;
        }
    }
    Ok(Band { lo, hi, nominal, accepted, rejected: attempts - accepted })
}

/// Band of the blank-filter Schmidt number from the radial reference grids.
pub fn blank_band(config: &Config) -> CliResult<Band> {
    let n = config.mc.reference_n;
    mc_band(&config.physical()?, config.mc.samples, config.seed, |p| Ok(reference_k(p, n)?))
}

/// First-order band half-width `(2Δσ/σ + ΔL/L) K` for `K ∝ σ²/L`.
pub fn linearized_half_width(params: &PhysicalParams, k: f64) -> f64 {
    (2.0 * params.dsigma() / params.sigma() + params.dlength() / params.length()) * k
}
