//! Non-parametric two-sample testing under adversarial attack.
//!
//! The crate implements six two-sample tests (MMD with gaussian and deep
//! kernels, sign- and logit-based classifier tests, and the ME/SCF location
//! tests), an ensemble PGD attack that jointly minimizes their test criteria
//! within an l-infinity budget, adversarial deep-kernel training as a
//! defense, and a wild-bootstrap permutation harness for measuring test power
//! and Type-I error.
//!
//! Module map:
//! - [`ndmath`]: matrices, a small MLP with input/parameter gradients, Adam
//! - [`kernels`]: the four MMD-family kernels and their H-matrix pullbacks
//! - [`mmd`]: U-statistic, variance estimator, test criterion
//! - [`location`]: ME/SCF statistics over learned locations
//! - [`attack`]: ensemble PGD with step-size halving
//! - [`trainers`]: fitting for all tests plus robust (adversarial) training
//! - [`inference`]: wild bootstrap, permutation tests, power evaluation
//! - [`data`]: Blob/HDGM samplers and a delimited-text loader
//! - [`model_io`]: versioned JSON model files

pub mod attack;
pub mod data;
pub mod error;
pub mod inference;
pub mod kernels;
pub mod location;
pub mod mmd;
pub mod model_io;
pub mod ndmath;
pub mod trainers;

pub use error::{Error, Result};
