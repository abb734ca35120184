//! Neighborhood-level outcome rates from point, polygon and visit data,
//! spatial and multicollinearity diagnostics, and a seeded comparison of OLS,
//! GWR, random forest and MLP regressors.
//!
//! Numeric routines are generic over [`Scalar`] (`f32` or `f64`); the data
//! pipeline itself works in `f64`. The `*64` / `*32` aliases below name the
//! common concrete instantiations.

pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod geo;
pub mod ingest;
pub mod linalg;
pub mod linmod;
pub mod mlmod;
pub mod pipeline;
pub mod rates;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type OlsFit64 = linmod::OlsFit<f64>;
pub type OlsFit32 = linmod::OlsFit<f32>;
pub type GwrFit64 = linmod::GwrFit<f64>;
pub type GwrFit32 = linmod::GwrFit<f32>;
pub type GwrProblem64 = linmod::GwrProblem<f64>;
pub type RfModel64 = mlmod::RfModel<f64>;
pub type RfModel32 = mlmod::RfModel<f32>;
pub type MlpModel64 = mlmod::MlpModel<f64>;
pub type MlpModel32 = mlmod::MlpModel<f32>;
pub type MoranResult64 = diagnostics::MoranResult<f64>;
pub type CorrelationResult64 = diagnostics::CorrelationResult<f64>;

/// Version of the on-disk output formats.
pub const FORMAT_VERSION: &str = "1";

/// Toolkit version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
