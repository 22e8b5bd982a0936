//! Kernel density and entropy estimation for directional marks.

mod clt;
mod config;
mod density;
mod entropy;
mod fast;
mod kernel;

pub use clt::{
    clt_normalize, standardized_statistic, CltNormalization, CLT_SPHERE_NODES, DEFAULT_COV_LATTICE,
    DEFAULT_REPLICATIONS,
};
pub use config::EstimatorConfig;
pub use density::{density_estimate, density_sup_error, DensityField};
pub use entropy::{
    entropy_modified, entropy_plain, EntropyDiagnostics, EntropyEstimate, LOG_FLOOR, UNRELIABLE_FRACTION,
};
pub(crate) use entropy::entropy_from_densities;
pub use fast::{chord2, summand_exact, KernelEvaluator, MarkColumns, MarkIndex};
pub use kernel::{default_bandwidth, kernel_eval, Kernel, KernelKind};
