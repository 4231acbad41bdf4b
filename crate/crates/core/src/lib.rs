//! Dimension-reduction model-adaptive (DRMA) lack-of-fit tests for
//! parametric single-index regression models.
//!
//! The residuals of a least-squares fit of `y = g(βᵀx, θ) + ε` are smoothed
//! in the coordinates `B̂ᵀx` of an estimated central mean subspace
//! (DEE or MAVE) instead of the full predictor space. Under the null the
//! estimated dimension tends to one, so the statistic behaves as if the
//! predictor were univariate; under alternatives it adapts to the larger
//! subspace.
//!
//! ```no_run
//! use drma_core::{drma_test, DrmaConfig, LinearLink, TestMethod, data::load_csv};
//!
//! let loaded = load_csv("cars.csv", "mpg").unwrap();
//! let result = drma_test(
//!     &loaded.data,
//!     &LinearLink { intercept: true },
//!     &DrmaConfig::with_method(TestMethod::DeeSir),
//! )
//! .unwrap();
//! println!("T_n = {:.3}, p = {:.3e}", result.t_n, result.p_value);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod data;
pub mod error;
pub mod exec;
pub mod kernel;
pub mod linalg;
pub mod pipeline;
pub mod regression;
pub mod rng;
pub mod sdr;
pub mod sim;
pub mod statistic;

pub use bootstrap::{wild_bootstrap, BootstrapConfig, BootstrapResult};
pub use data::{Dataset, SampleMoments, StandardizationRecord};
pub use error::{DrmaError, Result, Stage};
pub use exec::Execution;
pub use kernel::{bandwidth_rule, KernelSpec};
pub use pipeline::{drma_analyze, drma_test, DrmaConfig, DrmaOutcome, TestMethod};
pub use regression::{FittedNullModel, LinearLink, Link, LinkSpec, QuadraticLink};
pub use sdr::{SdrEstimate, SdrMethod};
pub use statistic::TestResult;
