//! Order selection for univariate Gaussian mixtures with model selection
//! confidence sets.
//!
//! The pipeline fits mixtures of every order up to `k_max` by EM, picks a
//! reference order with an information criterion, and screens every other
//! order with a penalised likelihood ratio statistic whose null law is a
//! weighted sum of χ²₁ variables. Orders that survive the screen form the
//! confidence set.

pub mod data;
pub mod em;
pub mod engine;
pub mod error;
pub mod info;
pub mod linalg;
pub mod mixture;
pub mod null_dist;
pub mod quad;
pub mod seed;
pub mod sim;

pub use em::{fit, fit_path, EmConfig, FitResult};
pub use engine::{build_mscs, MscsOptions, MscsResult, PenaltyKind, TestRecord};
pub use error::{MscsError, Result};
pub use mixture::{FreeParamVector, MixtureParams, Sample};
pub use null_dist::{LambdaWeights, WeightedChiSq};
pub use sim::{run_simulation, ScenarioSpec, SimConfig, SimResult};
