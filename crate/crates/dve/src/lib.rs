//! Distinct-value estimation from samples: Zipfian population synthesis,
//! exact without-replacement sampling, eleven sampling-based estimators,
//! error metrics, a deterministic benchmark harness, and report emission.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod metrics;
pub mod population;
pub mod profile;
pub mod report;
pub mod sampler;

pub use error::{DveError, Result};
pub use estimators::{estimate, estimate_all, EstimateResult, EstimatorId};
pub use harness::{GridConfig, Manifest};
pub use population::build_population;
pub use profile::{FrequencyProfile, Population, ZipfSpec};
pub use sampler::{draw_sample, SampleSpec};
