//! Lagged-effect estimation and inference for switchback experiments.
//!
//! A single unit is randomized repeatedly over `T` periods. Regressing the
//! outcome on normalized current and past treatments and rescaling the
//! coefficients recovers the average lag-`k` effects; a Bartlett HAC sandwich
//! gives conservative standard errors.
//!
//! ```
//! use switchback::{design::{AssignmentDesign, draw_assignment}, dgp, hac::HacConfig, regression};
//!
//! let design = AssignmentDesign::binary_constant(0.5, 400).unwrap();
//! let model = dgp::PotentialOutcomeModel::Ar(
//!     dgp::ArModel::constant(vec![0.5], 0.5, 0.0, dgp::normal_errors(400, 1.0, 7)).unwrap(),
//! );
//! let z = draw_assignment(&design, 1).unwrap();
//! let y = model.simulate(&z).unwrap();
//! let fit = regression::estimate(&y, &z, &design, &regression::RegressionSpec::full(2))
//!     .unwrap()
//!     .with_hac(&HacConfig::default())
//!     .unwrap();
//! assert_eq!(fit.tau_hat.len(), 3);
//! ```

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dataset;
pub mod design;
pub mod dgp;
pub mod error;
pub mod hac;
pub mod harness;
pub mod inference;
pub mod regression;
pub mod rng;

pub use error::{Error, ErrorKind, Result};
