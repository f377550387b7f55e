//! Local two-sample testing on graphs with random-walk scan statistics.
//!
//! The pipeline is: similarity matrix -> doubly stochastic PSD diffusion
//! operator ([`graph`]) -> per-component eigendecomposition ([`spectral`])
//! -> a finite net of walk lengths per node ([`epsnet`]) -> scan test with
//! a union-bound threshold ([`scan`]). [`simlab`] holds synthetic
//! experiments on the circle.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod epsnet;
pub mod error;
pub mod graph;
pub mod json;
mod linalg;
pub mod scan;
pub mod simlab;
pub mod spectral;

pub use epsnet::{table_epsilon, tune_epsilon, EpsGrid, EpsNet, EpsTuning};
pub use error::{Error, Result};
pub use graph::{build_operator, AffinityMatrix, DiffusionOperator, SinkhornOptions};
pub use scan::{run_test, run_test_with, Direction, LabelSet, Prior, TestOptions, TestReport};
pub use spectral::{decompose, ComponentSpectrum};
