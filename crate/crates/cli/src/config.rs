//! Run configuration, parsed strictly from TOML.

use std::path::Path;

use distill_core::emccd::CameraSpec;
use distill_core::fieldgrid::Axis;
use distill_core::fitting::FitOptions;
use distill_core::physmodel::{FilterSpec, Normalization, PhaseMatchingKind, PhysicalParams, SlmResponse};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: ParamsSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub camera: CameraSection,
    #[serde(default)]
    pub fit: FitSection,
}

/// Lengths in µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub sigma_um: f64,
    pub length_um: f64,
    pub lambda3_um: f64,
    pub dsigma_um: f64,
    pub dlength_um: f64,
}

impl Default for ParamsSection {
    fn default() -> Self {
        let p = PhysicalParams::nominal();
        Self {
            sigma_um: p.sigma(),
            length_um: p.length(),
            lambda3_um: p.lambda3(),
            dsigma_um: p.dsigma(),
            dlength_um: p.dlength(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMatchingChoice {
    #[default]
    Sinc,
    Gauss,
}

impl From<PhaseMatchingChoice> for PhaseMatchingKind {
    fn from(c: PhaseMatchingChoice) -> Self {
        match c {
            PhaseMatchingChoice::Sinc => PhaseMatchingKind::ExactSinc,
            PhaseMatchingChoice::Gauss => PhaseMatchingKind::GaussianApprox,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GridPreset {
    Coarse,
    #[default]
    Standard,
    Fine,
    /// Small grid for the 4D path.
    Oracle,
}

impl GridPreset {
    /// Points per axis and near-field half-extent in pump waists.
    pub fn shape(self) -> (usize, f64) {
        match self {
            GridPreset::Coarse => (512, 2.0),
            GridPreset::Standard => (1024, 4.0),
            GridPreset::Fine => (2048, 4.0),
            GridPreset::Oracle => (32, 2.5),
        }
    }

    pub fn axis(self, sigma: f64) -> CliResult<Axis> {
        let (n, waists) = self.shape();
        Ok(Axis::with_half_extent(n, waists * sigma)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseChoice {
    #[default]
    Intensity,
    Amplitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationChoice {
    #[default]
    Fixed,
    PeakOne,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub phase_matching: PhaseMatchingChoice,
    #[serde(default)]
    pub grid: GridPreset,
    #[serde(default)]
    pub slm_response: ResponseChoice,
    #[serde(default)]
    pub normalization: NormalizationChoice,
    /// Also run the SVD on each one-axis amplitude.
    #[serde(default)]
    pub svd: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[default]
    VaryA,
    VaryD,
    Grid2d,
}

/// Filter settings in SLM pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub scenario: Scenario,
    pub a_values: Vec<f64>,
    pub d_values: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            scenario: Scenario::VaryA,
            a_values: (4..=22).map(f64::from).collect(),
            d_values: vec![20.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub samples: usize,
    /// Attach a band to every sweep row.
    #[serde(default)]
    pub per_row: bool,
    /// Points per axis of the blank-filter reference grids.
    pub reference_n: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self { samples: 500, per_row: false, reference_n: 1024 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub focal_um: f64,
    pub lambda_um: f64,
    pub em_gain: f64,
    pub read_noise: f64,
    pub dark_background: f64,
    pub max_leak: f64,
    /// Mean photons per frame.
    pub budget: f64,
    pub frames: usize,
    #[serde(default)]
    pub artifact_amplitude: f64,
    pub artifact_period_px: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        let c = CameraSpec::default();
        Self {
            focal_um: 150_000.0,
            lambda_um: 0.71,
            em_gain: c.em_gain,
            read_noise: c.read_noise,
            dark_background: c.dark_background,
            max_leak: 0.03,
            budget: 1e6,
            frames: 1,
            artifact_amplitude: 0.0,
            artifact_period_px: 12.0,
        }
    }
}

impl CameraSection {
    pub fn spec(&self) -> CameraSpec {
        CameraSpec {
            em_gain: self.em_gain,
            read_noise: self.read_noise,
            dark_background: self.dark_background,
            max_leak: self.max_leak,
            ..CameraSpec::new(self.focal_um, self.lambda_um)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub max_iterations: usize,
    pub tolerance: f64,
    #[serde(default)]
    pub numeric_jacobian: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        let o = FitOptions::default();
        Self { max_iterations: o.max_iterations, tolerance: o.tolerance, numeric_jacobian: o.numeric_jacobian }
    }
}

impl FitSection {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            numeric_jacobian: self.numeric_jacobian,
            ..FitOptions::default()
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.physical()?;
        let s = &self.sweep;
        if s.a_values.is_empty() || s.d_values.is_empty() {
            return bad("sweep value lists must be nonempty".into());
        }
        if s.a_values.iter().chain(&s.d_values).any(|v| !v.is_finite()) || s.a_values.iter().any(|a| *a <= 0.0) {
            return bad("sweep values must be finite, with a > 0".into());
        }
        match s.scenario {
            Scenario::VaryA if s.d_values.len() != 1 => return bad("vary-a takes exactly one d value".into()),
            Scenario::VaryD if s.a_values.len() != 1 => return bad("vary-d takes exactly one a value".into()),
            _ => {}
        }
        if self.mc.samples < 100 {
            return bad(format!("mc.samples = {} (at least 100)", self.mc.samples));
        }
        if self.camera.frames == 0 {
            return bad("camera.frames must be at least 1".into());
        }
        if !(self.camera.budget.is_finite() && self.camera.budget >= 0.0) {
            return bad(format!("camera.budget = {}", self.camera.budget));
        }
        self.camera.spec().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn physical(&self) -> CliResult<PhysicalParams> {
        let p = &self.params;
        PhysicalParams::with_uncertainty(p.sigma_um, p.length_um, p.lambda3_um, p.dsigma_um, p.dlength_um)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn filter(&self, a_px: f64, d_px: f64) -> distill_core::Result<FilterSpec> {
        let norm = match self.model.normalization {
            NormalizationChoice::Fixed => Normalization::Fixed,
            NormalizationChoice::PeakOne => Normalization::PeakOne,
            NormalizationChoice::Raw => Normalization::Raw,
        };
        let response = match self.model.slm_response {
            ResponseChoice::Intensity => SlmResponse::Intensity,
            ResponseChoice::Amplitude => SlmResponse::Amplitude,
        };
        Ok(FilterSpec::double_gaussian_px(a_px, d_px)?.with_normalization(norm).with_response(response))
    }

    /// Filter settings in sweep order.
    pub fn settings(&self) -> Vec<(f64, f64)> {
        let s = &self.sweep;
        let mut out: Vec<(f64, f64)> = match s.scenario {
            Scenario::VaryA => s.a_values.iter().map(|&a| (a, s.d_values[0])).collect(),
            Scenario::VaryD => s.d_values.iter().map(|&d| (s.a_values[0], d)).collect(),
            Scenario::Grid2d => s.a_values.iter().flat_map(|&a| s.d_values.iter().map(move |&d| (a, d))).collect(),
        };
        let key = |v: &(f64, f64)| match s.scenario {
            Scenario::VaryD => (v.1, v.0),
            _ => *v,
        };
        out.sort_by(|x, y| key(x).partial_cmp(&key(y)).expect("finite sweep values"));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.settings().len(), 19);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(Config::parse("sead = 3"), Err(CliError::Config(_))));
        assert!(matches!(Config::parse("[model]\ngrid = \"huge\""), Err(CliError::Config(_))));
        assert!(matches!(Config::parse("[params]\nsigma = 600.0"), Err(CliError::Config(_))));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = Config::default();
        cfg.seed = 99;
        cfg.sweep.scenario = Scenario::Grid2d;
        cfg.sweep.d_values = vec![3.0, 0.0];
        let back = Config::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.settings()[..2], [(4.0, 0.0), (4.0, 3.0)]);
    }

    #[test]
    fn scenario_shapes_are_checked() {
        let text = "[sweep]\nscenario = \"vary-d\"\na_values = [7, 8]\nd_values = [0, 1]";
        assert!(Config::parse(text).is_err());
        let text = "[sweep]\nscenario = \"vary-d\"\na_values = [7]\nd_values = [3, 0, 1]";
        let cfg = Config::parse(text).unwrap();
        assert_eq!(cfg.settings(), vec![(7.0, 0.0), (7.0, 1.0), (7.0, 3.0)]);
        assert!(Config::parse("[mc]\nsamples = 10\nreference_n = 256").is_err());
        assert!(Config::parse("[params]\nsigma_um = -1\nlength_um = 1\nlambda3_um = 1\ndsigma_um = 0\ndlength_um = 0").is_err());
    }
}
