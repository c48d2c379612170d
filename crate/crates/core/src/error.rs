use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("axis length {0} is not a power of two >= 16")]
    BadAxisLength(usize),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("grid too narrow: pump envelope at the edge is {edge:.1e} of its peak (limit {limit:.0e})")]
    GridTooNarrow { edge: f64, limit: f64 },

    #[error("aliasing check failed: {fraction:.3e} of the energy lies in the outer 10% of the momentum grid (limit {limit:.1e})")]
    Aliasing { fraction: f64, limit: f64 },

    #[error("field contains negative or non-finite samples")]
    InvalidSamples,

    #[error("field is not radially symmetric: asymmetry {measured:.3} exceeds {limit:.3}")]
    Asymmetric { measured: f64, limit: f64 },

    #[error("filter opaque: squared norm {0:e} after filtering")]
    FilterOpaque(f64),

    #[error("filter is not separable across the transverse axes")]
    NonSeparableFilter,

    #[error("photon marginals differ by {0:.3e} (relative)")]
    MarginalMismatch(f64),

    #[error("oracle grid needs {needed} bytes, limit is {limit}")]
    MemoryBound { needed: usize, limit: usize },

    #[error("singular value decomposition did not converge")]
    SvdNoConvergence,

    #[error("plane mismatch: expected {expected}, got {found}")]
    PlaneMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("Schmidt number {0} below 1")]
    SchmidtBelowOne(f64),

    #[error("non-positive integral in Schmidt estimate")]
    NonPositiveIntegral,

    #[error("marginal leaks off the sensor: {fraction:.3} of the probability falls outside (limit {limit:.3})")]
    SensorLeak { fraction: f64, limit: f64 },

    #[error("marginal under-resolved by the camera: {0:.1} px across its width")]
    CameraUnderResolved(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("fit did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    FitNoConvergence {
        iterations: usize,
        gradient_norm: f64,
        best: Vec<f64>,
    },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("malformed record: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
