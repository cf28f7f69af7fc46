//! Bias–variance model of cross-lingual response gaps.
//!
//! A question answered in its *source* language draws logits
//! `z ~ N(mu_s, sigma_s^2 I)` and samples a response from `softmax(z)`. In a
//! *target* language the logits come from a two-component mixture: with
//! probability `pi` the source mean flattened by `tau` with variance inflated by
//! `eta` (the variance component), otherwise an unrelated mean `mu_b` whose mode
//! differs from the source (the bias component).
//!
//! The crate is `no_std` (it needs `alloc`) and is organised as:
//!
//! - [`model`]: the response model and its samplers.
//! - [`math`]: softmax, the normal CDF and small numeric helpers.
//! - [`bounds`]: closed-form agreement and mode-probability bounds.
//! - [`metrics`]: estimators applied to response collections.
//! - [`simulate`]: Monte Carlo experiments built from the samplers.
//!
//! IO, log parsing and the command-line driver live in the `xgap` crate.
#![no_std]
#![warn(missing_debug_implementations)]
// `!(x >= 0.0)` is how NaN gets rejected alongside negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bounds;
mod error;
pub mod math;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{LogitProfile, ResponseDraw, SamplingPath, TargetMixture};
